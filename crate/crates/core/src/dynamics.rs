//! Unitary evolution `dρ/dt = −(i/ħ)[H(t), ρ]` and Ehrenfest checks along
//! the resulting trajectory.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::ensemble::DensityMatrix;
use crate::error::{Error, Result};
use crate::operator::{check_same_dim, commutator, trace_product, CMatrix, HermitianOperator, C64};
use crate::Constants;

/// Trace tolerance for propagated states.
pub const PROPAGATION_TRACE_TOL: f64 = 1e-10;

/// Default bound on the estimated Ehrenfest truncation error.
pub const DEFAULT_EHRENFEST_TOL: f64 = 1e-6;

type TimeFn = Arc<dyn Fn(f64) -> HermitianOperator + Send + Sync>;

#[derive(Clone)]
pub enum Hamiltonian {
    Static(HermitianOperator),
    Driven { dim: usize, at: TimeFn },
}

impl fmt::Debug for Hamiltonian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Static(h) => f.debug_tuple("Static").field(h).finish(),
            Self::Driven { dim, .. } => f.debug_struct("Driven").field("dim", dim).finish_non_exhaustive(),
        }
    }
}

impl Hamiltonian {
    pub fn driven<F>(dim: usize, at: F) -> Self
    where
        F: Fn(f64) -> HermitianOperator + Send + Sync + 'static,
    {
        Self::Driven { dim, at: Arc::new(at) }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Static(h) => h.dim(),
            Self::Driven { dim, .. } => *dim,
        }
    }

    pub fn at(&self, t: f64) -> Result<HermitianOperator> {
        match self {
            Self::Static(h) => Ok(h.clone()),
            Self::Driven { dim, at } => {
                let h = at(t);
                check_same_dim("driven Hamiltonian", *dim, h.dim())?;
                Ok(h)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stepper {
    /// `U = exp(−iHt/ħ)` from one spectral decomposition; static `H` only.
    #[default]
    Exact,
    /// Product of `exp(−iH(t + Δt/2)Δt/ħ)` over the grid intervals.
    Midpoint,
}

#[derive(Clone, Debug)]
pub struct EvolutionSetup {
    pub hamiltonian: Hamiltonian,
    pub rho0: DensityMatrix,
    pub t_grid: Vec<f64>,
    pub stepper: Stepper,
    pub constants: Constants,
}

impl EvolutionSetup {
    pub fn new(hamiltonian: Hamiltonian, rho0: DensityMatrix, t_grid: Vec<f64>, stepper: Stepper) -> Result<Self> {
        check_same_dim("initial state", hamiltonian.dim(), rho0.dim())?;
        if t_grid.is_empty() {
            return Err(Error::InvalidParameter("time grid is empty".into()));
        }
        if t_grid.iter().any(|t| !t.is_finite()) || t_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("time grid must be finite and strictly increasing".into()));
        }
        if stepper == Stepper::Exact && matches!(hamiltonian, Hamiltonian::Driven { .. }) {
            return Err(Error::Configuration(
                "exact propagator requires a time-independent Hamiltonian".into(),
            ));
        }
        Ok(Self {
            hamiltonian,
            rho0,
            t_grid,
            stepper,
            constants: Constants::default(),
        })
    }

    pub fn with_constants(mut self, constants: Constants) -> Self {
        self.constants = constants;
        self
    }
}

/// `n` evenly spaced points on `[t0, t1]` inclusive.
pub fn uniform_grid(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![t0];
    }
    let dt = (t1 - t0) / (n - 1) as f64;
    (0..n).map(|i| if i + 1 == n { t1 } else { t0 + dt * i as f64 }).collect()
}

/// `exp(−i H τ/ħ)`.
fn propagator(h: &HermitianOperator, tau: f64, hbar: f64) -> Result<CMatrix> {
    let decomp = h.eigh()?;
    let v = decomp.eigenvectors();
    let phases = DVector::from_iterator(
        decomp.dim(),
        decomp.eigenvalues().iter().map(|&e| C64::from_polar(1.0, -e * tau / hbar)),
    );
    Ok(v * CMatrix::from_diagonal(&phases) * v.adjoint())
}

fn conjugate(u: &CMatrix, rho: &CMatrix) -> CMatrix {
    let out = u * rho * u.adjoint();
    (&out + out.adjoint()).unscale(2.0)
}

fn to_density(m: CMatrix) -> Result<DensityMatrix> {
    let op = HermitianOperator::with_tolerance(m, 1e-10)?;
    DensityMatrix::with_trace_tolerance(op, PROPAGATION_TRACE_TOL)
}

/// States on `t_grid`; the first entry is `ρ0` itself.
pub fn evolve(setup: &EvolutionSetup) -> Result<Vec<DensityMatrix>> {
    let hbar = setup.constants.hbar;
    let t0 = setup.t_grid[0];
    let rho0 = setup.rho0.matrix().clone();
    let mut out = Vec::with_capacity(setup.t_grid.len());
    out.push(setup.rho0.clone());
    match (setup.stepper, &setup.hamiltonian) {
        (Stepper::Exact, Hamiltonian::Static(h)) => {
            let decomp = h.eigh()?;
            let v = decomp.eigenvectors();
            let rho_eig = v.adjoint() * &rho0 * v;
            for &t in &setup.t_grid[1..] {
                let phases: Vec<C64> = decomp
                    .eigenvalues()
                    .iter()
                    .map(|&e| C64::from_polar(1.0, -e * (t - t0) / hbar))
                    .collect();
                // (U ρ U†)_{mn} in the eigenbasis picks up e^{−i(E_m − E_n)t}.
                let evolved = CMatrix::from_fn(rho_eig.nrows(), rho_eig.ncols(), |m, n| {
                    rho_eig[(m, n)] * phases[m] * phases[n].conj()
                });
                out.push(to_density(conjugate(v, &evolved))?);
            }
        }
        (Stepper::Exact, Hamiltonian::Driven { .. }) => {
            return Err(Error::Configuration(
                "exact propagator requires a time-independent Hamiltonian".into(),
            ))
        }
        (Stepper::Midpoint, ham) => {
            let mut rho = rho0;
            for w in setup.t_grid.windows(2) {
                let dt = w[1] - w[0];
                let h = ham.at(w[0] + 0.5 * dt)?;
                let u = propagator(&h, dt, hbar)?;
                rho = conjugate(&u, &rho);
                out.push(to_density(rho.clone())?);
            }
        }
    }
    Ok(out)
}

/// An observable `A(t)` with optional analytic `∂A/∂t`.
#[derive(Clone)]
pub struct TimeObservable {
    pub name: String,
    dim: usize,
    at: TimeFn,
    derivative: Option<TimeFn>,
    constant: bool,
}

impl fmt::Debug for TimeObservable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TimeObservable")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("constant", &self.constant)
            .finish_non_exhaustive()
    }
}

impl TimeObservable {
    pub fn constant(name: impl Into<String>, op: HermitianOperator) -> Self {
        let dim = op.dim();
        Self {
            name: name.into(),
            dim,
            at: Arc::new(move |_| op.clone()),
            derivative: Some(Arc::new(move |_| HermitianOperator::zeros(dim))),
            constant: true,
        }
    }

    pub fn new<F>(name: impl Into<String>, dim: usize, at: F) -> Self
    where
        F: Fn(f64) -> HermitianOperator + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            dim,
            at: Arc::new(at),
            derivative: None,
            constant: false,
        }
    }

    pub fn with_derivative<F>(mut self, derivative: F) -> Self
    where
        F: Fn(f64) -> HermitianOperator + Send + Sync + 'static,
    {
        self.derivative = Some(Arc::new(derivative));
        self
    }

    pub fn at(&self, t: f64) -> Result<HermitianOperator> {
        let a = (self.at)(t);
        check_same_dim("time-dependent observable", self.dim, a.dim())?;
        Ok(a)
    }

    /// `∂A/∂t`, by a fourth-order central stencil when no analytic form is given.
    pub fn time_derivative(&self, t: f64) -> Result<HermitianOperator> {
        if let Some(d) = &self.derivative {
            return Ok(d(t));
        }
        let h = 1e-3 * t.abs().max(1.0);
        let f1 = self.at(t + h)?.add_scaled(-1.0, &self.at(t - h)?)?;
        let f2 = self.at(t + 2.0 * h)?.add_scaled(-1.0, &self.at(t - 2.0 * h)?)?;
        f1.scale(8.0 / (12.0 * h)).add_scaled(-1.0 / (12.0 * h), &f2)
    }
}

/// Ehrenfest comparison on one grid interval `[t_i, t_{i+1}]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EhrenfestPoint {
    /// Interval midpoint.
    pub t: f64,
    /// `⟨A⟩` at the midpoint, averaged from the two ends.
    pub expectation: f64,
    /// `(⟨A⟩_{i+1} − ⟨A⟩_i)/Δt`.
    pub lhs: f64,
    /// `⟨∂A/∂t⟩ + (1/iħ)⟨[A, H]⟩`, averaged over the two ends.
    pub rhs: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EhrenfestReport {
    pub observable: String,
    pub points: Vec<EhrenfestPoint>,
    pub max_residual: f64,
    /// `max Δt²/12·|d³⟨A⟩/dt³|` from third differences of the trajectory.
    pub estimated_truncation: f64,
    pub trace_drift: f64,
    pub purity_drift: f64,
}

/// `⟨∂A/∂t⟩ + (1/iħ)⟨[A, H]⟩` at one time.
pub fn ehrenfest_rhs(
    rho: &DensityMatrix,
    a: &HermitianOperator,
    da_dt: &HermitianOperator,
    h: &HermitianOperator,
    hbar: f64,
) -> Result<f64> {
    let comm = commutator(a.matrix(), h.matrix())?;
    let z = trace_product(rho.matrix(), &comm)?;
    let scale = a.max_norm() * h.max_norm();
    // ⟨[A,H]⟩ is purely imaginary for Hermitian A and H.
    if z.re.abs() > 1e-10 * scale.max(1.0) {
        return Err(Error::Numerical(format!(
            "commutator expectation has real part {:e}",
            z.re
        )));
    }
    let drift = trace_product(rho.matrix(), da_dt.matrix())?.re;
    Ok(drift + z.im / hbar)
}

fn third_difference_bound(times: &[f64], values: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..values.len().saturating_sub(3) {
        let h = (times[i + 3] - times[i]) / 3.0;
        let d3 = (values[i + 3] - 3.0 * values[i + 2] + 3.0 * values[i + 1] - values[i]) / (h * h * h);
        worst = worst.max(h * h / 12.0 * d3.abs());
    }
    worst
}

/// Compares the discrete time derivative of `⟨A⟩` along a stored trajectory
/// against the Ehrenfest right-hand side.
///
/// The derivative is the central difference over each grid interval and the
/// right-hand side is the trapezoid average of its two endpoint values, so
/// both are centred on the interval midpoint and the residual is `O(Δt²)`.
/// When the estimated truncation error exceeds `tol`, a step-size error with
/// a suggested `Δt` is returned instead.
pub fn ehrenfest_check(
    setup: &EvolutionSetup,
    states: &[DensityMatrix],
    observable: &TimeObservable,
    tol: f64,
) -> Result<EhrenfestReport> {
    check_same_dim("trajectory length", setup.t_grid.len(), states.len())?;
    check_same_dim("observable dimension", setup.hamiltonian.dim(), observable.dim)?;
    if states.len() < 2 {
        return Err(Error::InvalidParameter("Ehrenfest check needs at least two time points".into()));
    }
    let hbar = setup.constants.hbar;
    let times = &setup.t_grid;
    let mut means = Vec::with_capacity(states.len());
    let mut rhs = Vec::with_capacity(states.len());
    for (rho, &t) in states.iter().zip(times) {
        let a = observable.at(t)?;
        let da = observable.time_derivative(t)?;
        let h = setup.hamiltonian.at(t)?;
        means.push(trace_product(a.matrix(), rho.matrix())?.re);
        rhs.push(ehrenfest_rhs(rho, &a, &da, &h, hbar)?);
    }

    let estimated_truncation = third_difference_bound(times, &means);
    if estimated_truncation > tol {
        let dt = times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0f64, f64::max);
        return Err(Error::StepSize {
            estimated: estimated_truncation,
            tol,
            suggested_dt: 0.9 * dt * (tol / estimated_truncation).sqrt(),
        });
    }

    let points: Vec<EhrenfestPoint> = (0..states.len() - 1)
        .map(|i| {
            let dt = times[i + 1] - times[i];
            let lhs = (means[i + 1] - means[i]) / dt;
            let r = 0.5 * (rhs[i] + rhs[i + 1]);
            EhrenfestPoint {
                t: 0.5 * (times[i] + times[i + 1]),
                expectation: 0.5 * (means[i] + means[i + 1]),
                lhs,
                rhs: r,
                residual: (lhs - r).abs(),
            }
        })
        .collect();
    let max_residual = points.iter().map(|p| p.residual).fold(0.0, f64::max);

    let purity0 = trace_product(states[0].matrix(), states[0].matrix())?.re;
    let mut trace_drift: f64 = 0.0;
    let mut purity_drift: f64 = 0.0;
    for rho in states {
        trace_drift = trace_drift.max((rho.trace() - 1.0).abs());
        purity_drift = purity_drift.max((trace_product(rho.matrix(), rho.matrix())?.re - purity0).abs());
    }
    Ok(EhrenfestReport {
        observable: observable.name.clone(),
        points,
        max_residual,
        estimated_truncation,
        trace_drift,
        purity_drift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plus_state() -> DensityMatrix {
        let s = 1.0 / 2f64.sqrt();
        DensityMatrix::pure(&[C64::new(s, 0.0), C64::new(s, 0.0)]).unwrap()
    }

    fn precession(stepper: Stepper, n: usize) -> EvolutionSetup {
        EvolutionSetup::new(
            Hamiltonian::Static(HermitianOperator::pauli_z()),
            plus_state(),
            uniform_grid(0.0, 2.0, n),
            stepper,
        )
        .unwrap()
    }

    #[test]
    fn stationary_state_does_not_move() {
        let h = HermitianOperator::from_diagonal(&[0.0, 1.0, 3.0]);
        let rho0 = DensityMatrix::new(HermitianOperator::from_diagonal(&[0.5, 0.3, 0.2])).unwrap();
        let setup = EvolutionSetup::new(Hamiltonian::Static(h), rho0.clone(), uniform_grid(0.0, 5.0, 11), Stepper::Exact)
            .unwrap();
        for rho in evolve(&setup).unwrap() {
            assert!(crate::operator::max_abs(&(rho.matrix() - rho0.matrix())) < 1e-14);
        }
    }

    #[test]
    fn rabi_precession_closed_form() {
        for stepper in [Stepper::Exact, Stepper::Midpoint] {
            let setup = precession(stepper, 41);
            let states = evolve(&setup).unwrap();
            let x = HermitianOperator::pauli_x();
            for (rho, t) in states.iter().zip(&setup.t_grid) {
                let got = trace_product(x.matrix(), rho.matrix()).unwrap().re;
                assert!((got - (2.0 * t).cos()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grid_must_increase() {
        let err = EvolutionSetup::new(
            Hamiltonian::Static(HermitianOperator::pauli_z()),
            plus_state(),
            vec![0.0, 1.0, 1.0],
            Stepper::Exact,
        );
        assert!(err.is_err());
    }

    #[test]
    fn exact_stepper_rejects_driven() {
        let ham = Hamiltonian::driven(2, |t| HermitianOperator::pauli_z().scale(t));
        assert!(matches!(
            EvolutionSetup::new(ham, plus_state(), vec![0.0, 1.0], Stepper::Exact),
            Err(Error::Configuration(_))
        ));
    }

    #[test]
    fn ehrenfest_trivial_observables() {
        let setup = precession(Stepper::Exact, 201);
        let states = evolve(&setup).unwrap();
        for obs in [
            TimeObservable::constant("H", HermitianOperator::pauli_z()),
            TimeObservable::constant("I", HermitianOperator::identity(2)),
        ] {
            let r = ehrenfest_check(&setup, &states, &obs, 1e-6).unwrap();
            assert!(r.max_residual < 1e-13, "{}", r.max_residual);
        }
    }

    #[test]
    fn ehrenfest_precession_second_order() {
        let setup = precession(Stepper::Exact, 2001);
        let states = evolve(&setup).unwrap();
        let obs = TimeObservable::constant("X", HermitianOperator::pauli_x());
        let r = ehrenfest_check(&setup, &states, &obs, 1e-6).unwrap();
        assert!(r.max_residual < 1e-6);
        assert!(r.purity_drift < 1e-12);
    }

    #[test]
    fn coarse_grid_reports_step_size() {
        let setup = precession(Stepper::Exact, 21);
        let states = evolve(&setup).unwrap();
        let obs = TimeObservable::constant("X", HermitianOperator::pauli_x());
        match ehrenfest_check(&setup, &states, &obs, 1e-6) {
            Err(Error::StepSize { suggested_dt, .. }) => assert!(suggested_dt < 0.1),
            other => panic!("expected step-size error, got {other:?}"),
        }
    }

    #[test]
    fn time_dependent_observable_uses_drift_term() {
        // A(t) = t·I: d⟨A⟩/dt = 1 from ⟨∂A/∂t⟩ alone.
        let setup = precession(Stepper::Exact, 101);
        let states = evolve(&setup).unwrap();
        let obs = TimeObservable::new("tI", 2, |t| HermitianOperator::identity(2).scale(t));
        let r = ehrenfest_check(&setup, &states, &obs, 1e-6).unwrap();
        assert!(r.max_residual < 1e-9, "{}", r.max_residual);
    }
}
