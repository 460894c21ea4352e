//! Maximum-entropy inference: find multipliers `α` such that the ensemble
//! `exp(−Σ α_j F_j)/Z` reproduces prescribed expectation values.
//!
//! The forward map `α ↦ ⟨F⟩` is `−∇ ln Z` and its Jacobian is `−Cov(F_j, F_l)`,
//! so Newton's method needs only moments of the current ensemble.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ensemble::{build_ensemble, check_pairwise_compatible, DensityMatrix, Ensemble, EnsembleSpec, COMPAT_TOL};
use crate::error::{Error, Result};
use crate::fd::richardson;
use crate::identity::{covariance, expectation};
use crate::operator::{check_same_dim, HermitianOperator, OperatorFamily};

/// Relative step for the backtracking sufficient-decrease test.
const ARMIJO: f64 = 1e-4;
/// Smallest line-search fraction before the iteration gives up.
const MIN_STEP_FRACTION: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct MaxEntProblem {
    pub families: Vec<HermitianOperator>,
    pub targets: Vec<f64>,
    pub alpha0: Vec<f64>,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Backtracking factor applied to the step fraction on rejection.
    pub damping: f64,
    pub cond_max: f64,
    pub names: Vec<String>,
}

impl MaxEntProblem {
    pub fn new(families: Vec<HermitianOperator>, targets: Vec<f64>) -> Result<Self> {
        if families.is_empty() {
            return Err(Error::InvalidParameter("at least one observable is required".into()));
        }
        check_same_dim("target count", families.len(), targets.len())?;
        let dim = families[0].dim();
        for f in &families {
            check_same_dim("observable dimension", dim, f.dim())?;
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter("targets must be finite".into()));
        }
        let names: Vec<String> = (0..families.len()).map(|j| format!("F{j}")).collect();
        check_pairwise_compatible(&families, &names_ref(&names), COMPAT_TOL)?;
        let n = families.len();
        Ok(Self {
            families,
            targets,
            alpha0: vec![0.0; n],
            max_iter: 100,
            grad_tol: 1e-10,
            damping: 0.5,
            cond_max: 1e12,
            names,
        })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        check_same_dim("name count", self.families.len(), names.len())?;
        self.names = names;
        Ok(self)
    }

    pub fn with_alpha0(mut self, alpha0: Vec<f64>) -> Result<Self> {
        check_same_dim("initial multipliers", self.families.len(), alpha0.len())?;
        self.alpha0 = alpha0;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.families.len()
    }

    pub fn dim(&self) -> usize {
        self.families[0].dim()
    }

    pub fn spec(&self, alpha: &[f64]) -> Result<EnsembleSpec> {
        check_same_dim("multipliers", self.n(), alpha.len())?;
        let families = self
            .families
            .iter()
            .zip(&self.names)
            .map(|(f, name)| OperatorFamily::constant(name.clone(), f.clone(), 0))
            .collect();
        EnsembleSpec::new(alpha.to_vec(), families, Vec::new())
    }

    fn ensemble(&self, alpha: &[f64]) -> Result<Ensemble> {
        build_ensemble(&self.spec(alpha)?)
    }

    /// Joint eigenvalues of the family: row `n` holds `(F_1, …, F_n)` on the
    /// `n`-th common eigenvector.
    pub fn joint_spectrum(&self) -> Result<Vec<Vec<f64>>> {
        // A generic combination separates every joint eigenspace.
        let mut generic = HermitianOperator::zeros(self.dim());
        for (j, f) in self.families.iter().enumerate() {
            let c = 1.0 / (j as f64 + std::f64::consts::SQRT_2);
            generic = generic.add_scaled(c, f)?;
        }
        let decomp = generic.eigh()?;
        let mut rows = vec![vec![0.0; self.n()]; self.dim()];
        for (j, f) in self.families.iter().enumerate() {
            let diag = decomp.to_eigenbasis(f.matrix());
            for (n, row) in rows.iter_mut().enumerate() {
                row[j] = diag[(n, n)].re;
            }
        }
        Ok(rows)
    }

    /// Each target must lie strictly between the extreme joint eigenvalues of
    /// its observable.
    pub fn check_feasible(&self) -> Result<()> {
        let rows = self.joint_spectrum()?;
        for (j, &value) in self.targets.iter().enumerate() {
            let min = rows.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
            let max = rows.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
            let slack = 1e-12 * max.abs().max(min.abs()).max(1.0);
            if !(value > min + slack && value < max - slack) {
                return Err(Error::Infeasible { index: j, value, min, max });
            }
        }
        Ok(())
    }
}

fn names_ref(names: &[String]) -> Vec<&str> {
    names.iter().map(String::as_str).collect()
}

/// `r_k = ⟨F_k⟩ − f_k` at `α`.
pub fn residual(alpha: &[f64], problem: &MaxEntProblem) -> Result<Vec<f64>> {
    let ens = problem.ensemble(alpha)?;
    residual_at(&ens, problem)
}

fn residual_at(ens: &Ensemble, problem: &MaxEntProblem) -> Result<Vec<f64>> {
    ens.observables
        .iter()
        .zip(&problem.targets)
        .map(|(f, t)| Ok(expectation(f, &ens.rho)? - t))
        .collect()
}

/// Residual through `−∂ln Z/∂α_k` by finite differences, for spot checks of
/// the trace route.
pub fn residual_from_log_partition(alpha: &[f64], problem: &MaxEntProblem, step: f64) -> Result<Vec<f64>> {
    let spec = problem.spec(alpha)?;
    (0..problem.n())
        .map(|k| {
            let mut dalpha = vec![0.0; problem.n()];
            dalpha[k] = 1.0;
            let d = richardson(
                |t| Ok(build_ensemble(&spec.displaced(&dalpha, &[], t)?)?.thermo.log_partition),
                step,
            )?;
            Ok(-d.value - problem.targets[k])
        })
        .collect()
}

fn covariance_matrix(ens: &Ensemble) -> Result<DMatrix<f64>> {
    let n = ens.observables.len();
    let mut c = DMatrix::zeros(n, n);
    for j in 0..n {
        for l in j..n {
            let v = covariance(&ens.observables[j], &ens.observables[l], &ens.rho)?;
            c[(j, l)] = v;
            c[(l, j)] = v;
        }
    }
    Ok(c)
}

/// Condition number of a symmetric positive semidefinite matrix.
fn condition(c: &DMatrix<f64>) -> f64 {
    let ev = c.clone().symmetric_eigen().eigenvalues;
    let max = ev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = ev.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if max == 0.0 || min <= f64::EPSILON * max * 1e-3 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn jacobian_at(ens: &Ensemble, problem: &MaxEntProblem) -> Result<(DMatrix<f64>, f64)> {
    let c = covariance_matrix(ens)?;
    let cond = condition(&c);
    if !(cond <= problem.cond_max) {
        return Err(Error::IllPosed {
            condition: cond,
            limit: problem.cond_max,
        });
    }
    Ok((-c, cond))
}

/// `J_{jl} = ∂⟨F_j⟩/∂α_l = −Cov(F_j, F_l)`.
pub fn jacobian(alpha: &[f64], problem: &MaxEntProblem) -> Result<DMatrix<f64>> {
    let ens = problem.ensemble(alpha)?;
    Ok(jacobian_at(&ens, problem)?.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    pub alpha: Vec<f64>,
    pub residual_norm: f64,
    pub entropy: f64,
    /// Dual objective `ln Z(α) + α·f`, minimized at the solution.
    pub dual: f64,
    /// Line-search fraction of the Newton step that produced this iterate.
    pub step_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub iterates: Vec<Iterate>,
    pub converged: bool,
    pub jacobian_condition: f64,
}

#[derive(Clone, Debug)]
pub struct MaxEntSolution {
    pub alpha: Vec<f64>,
    pub rho: DensityMatrix,
    pub log_partition: f64,
    pub entropy: f64,
    pub trace: SolveTrace,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn two_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct State {
    alpha: Vec<f64>,
    ens: Ensemble,
    r: Vec<f64>,
    norm: f64,
}

impl State {
    fn at(alpha: Vec<f64>, problem: &MaxEntProblem) -> Result<Self> {
        let ens = problem.ensemble(&alpha)?;
        let r = residual_at(&ens, problem)?;
        let norm = two_norm(&r);
        Ok(Self { alpha, ens, r, norm })
    }

    fn record(&self, problem: &MaxEntProblem, step_fraction: f64) -> Iterate {
        let dot: f64 = self.alpha.iter().zip(&problem.targets).map(|(a, f)| a * f).sum();
        Iterate {
            alpha: self.alpha.clone(),
            residual_norm: self.norm,
            entropy: self.ens.thermo.entropy,
            dual: self.ens.thermo.log_partition + dot,
            step_fraction,
        }
    }
}

/// Newton iteration with backtracking on `‖r‖₂`.
///
/// Once `‖r‖_∞ ≤ grad_tol`, further full steps are taken while they keep
/// reducing the residual, so that `α` itself settles to near machine
/// precision rather than stopping at the first iterate under tolerance.
pub fn solve(problem: &MaxEntProblem) -> Result<MaxEntSolution> {
    problem.check_feasible()?;
    let mut state = State::at(problem.alpha0.clone(), problem)?;
    let mut iterates = vec![state.record(problem, 0.0)];
    let mut cond = jacobian_at(&state.ens, problem)?.1;
    let mut converged = false;

    for _ in 0..problem.max_iter {
        let (jac, c) = jacobian_at(&state.ens, problem)?;
        cond = c;
        let within_tol = inf_norm(&state.r) <= problem.grad_tol;
        let rhs = DVector::from_iterator(state.r.len(), state.r.iter().map(|x| -x));
        let delta = jac
            .lu()
            .solve(&rhs)
            .ok_or(Error::IllPosed {
                condition: f64::INFINITY,
                limit: problem.cond_max,
            })?;
        let scale = inf_norm(&state.alpha).max(1.0);
        if within_tol && delta.amax() <= 1e-14 * scale {
            converged = true;
            break;
        }

        let mut t = 1.0;
        let mut accepted = None;
        while t >= MIN_STEP_FRACTION {
            let trial: Vec<f64> = state.alpha.iter().zip(delta.iter()).map(|(a, d)| a + t * d).collect();
            let next = State::at(trial, problem)?;
            let bound = if within_tol {
                state.norm
            } else {
                (1.0 - ARMIJO * t) * state.norm
            };
            if next.norm <= bound {
                accepted = Some(next);
                break;
            }
            if within_tol {
                break;
            }
            t *= problem.damping;
        }
        match accepted {
            Some(next) => {
                state = next;
                iterates.push(state.record(problem, t));
            }
            None if within_tol => {
                converged = true;
                break;
            }
            None => {
                return Err(Error::NotConverged {
                    iterations: iterates.len() - 1,
                    residual: inf_norm(&state.r),
                })
            }
        }
    }
    if !converged && inf_norm(&state.r) <= problem.grad_tol {
        converged = true;
    }
    if !converged {
        return Err(Error::NotConverged {
            iterations: iterates.len() - 1,
            residual: inf_norm(&state.r),
        });
    }
    let State { alpha, ens, .. } = state;
    Ok(MaxEntSolution {
        alpha,
        log_partition: ens.thermo.log_partition,
        entropy: ens.thermo.entropy,
        rho: ens.rho,
        trace: SolveTrace {
            iterates,
            converged,
            jacobian_condition: cond,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p_excited() -> f64 {
        let em1 = (-1.0f64).exp();
        em1 / (1.0 + em1)
    }

    fn two_level(target: f64) -> MaxEntProblem {
        MaxEntProblem::new(vec![HermitianOperator::from_diagonal(&[0.0, 1.0])], vec![target]).unwrap()
    }

    #[test]
    fn residual_examples() {
        assert!(residual(&[0.0], &two_level(0.5)).unwrap()[0].abs() < 1e-15);
        assert!(residual(&[1.0], &two_level(0.268941)).unwrap()[0].abs() < 1e-6);
        assert!(residual(&[1.0], &two_level(p_excited())).unwrap()[0].abs() < 1e-9);
        let fd = residual_from_log_partition(&[1.0], &two_level(p_excited()), 1e-5).unwrap();
        assert!(fd[0].abs() < 1e-7);
    }

    #[test]
    fn jacobian_two_level() {
        let p = p_excited();
        let j = jacobian(&[1.0], &two_level(p)).unwrap();
        assert!((j[(0, 0)] + p * (1.0 - p)).abs() < 1e-14);
    }

    #[test]
    fn dependent_observables_are_ill_posed() {
        let f = HermitianOperator::from_diagonal(&[0.0, 1.0, 2.0]);
        let problem = MaxEntProblem::new(vec![f.clone(), f.scale(3.0)], vec![1.0, 3.0]).unwrap();
        assert!(matches!(jacobian(&[0.1, 0.2], &problem), Err(Error::IllPosed { .. })));
    }

    #[test]
    fn infeasible_targets_rejected() {
        for t in [0.0, 1.0, 1.5, -0.1] {
            assert!(matches!(solve(&two_level(t)), Err(Error::Infeasible { .. })));
        }
    }

    #[test]
    fn symmetric_midpoint_gives_zero() {
        let problem =
            MaxEntProblem::new(vec![HermitianOperator::from_diagonal(&[-1.0, 0.0, 1.0])], vec![0.0]).unwrap();
        let sol = solve(&problem).unwrap();
        assert!(sol.alpha[0].abs() < 1e-12);
    }

    #[test]
    fn recovers_unit_beta() {
        let sol = solve(&two_level(p_excited())).unwrap();
        assert!((sol.alpha[0] - 1.0).abs() < 1e-10, "{:?}", sol.alpha);
        assert!(sol.trace.converged);
        let norms: Vec<f64> = sol.trace.iterates.iter().map(|i| i.residual_norm).collect();
        assert!(norms.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn non_convergence_is_reported() {
        let mut problem = two_level(0.01);
        problem.max_iter = 1;
        assert!(matches!(solve(&problem), Err(Error::NotConverged { .. })));
    }
}
