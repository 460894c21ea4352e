//! Canonical, grand-canonical and generalized MaxEnt density matrices.
//!
//! All three ensembles are instances of the exponential family
//! `ρ = exp(−Σ_j α_j F_j(λ)) / Z`. The canonical and grand-canonical
//! builders only choose multipliers and observables and then route through
//! [`build_generalized`], so either path yields bit-identical matrices.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{
    check_same_dim, commutator_norm_scaled, max_abs, CMatrix, HermitianOperator, OperatorFamily,
    SpectralDecomposition, EIGEN_FLOOR_REL,
};

/// Commutator bound for compatibility, relative to `max(1, |A|·|B|)`.
pub const COMPAT_TOL: f64 = 1e-10;

/// Bound on `|Tr ρ − 1|` for directly supplied density matrices.
pub const TRACE_TOL: f64 = 1e-12;

/// A unit-trace positive semidefinite operator with its eigen-decomposition.
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    operator: HermitianOperator,
    decomposition: SpectralDecomposition,
    floor: f64,
    log_form: Option<HermitianOperator>,
}

impl AsRef<CMatrix> for DensityMatrix {
    fn as_ref(&self) -> &CMatrix {
        self.operator.matrix()
    }
}

impl DensityMatrix {
    pub fn new(operator: HermitianOperator) -> Result<Self> {
        Self::with_trace_tolerance(operator, TRACE_TOL)
    }

    pub fn with_trace_tolerance(operator: HermitianOperator, trace_tol: f64) -> Result<Self> {
        let trace = operator.trace();
        if !((trace - 1.0).abs() <= trace_tol) {
            return Err(Error::InvalidDensity(format!(
                "trace {trace} differs from 1 by more than {trace_tol:e}"
            )));
        }
        let decomposition = operator.eigh()?;
        let lowest = decomposition.eigenvalues().min();
        if lowest < -trace_tol.max(1e-12) {
            return Err(Error::InvalidDensity(format!(
                "negative eigenvalue {lowest:e}"
            )));
        }
        let floor = EIGEN_FLOOR_REL * decomposition.eigenvalues().max();
        Ok(Self {
            operator,
            decomposition,
            floor,
            log_form: None,
        })
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        let p = 1.0 / dim as f64;
        Self::new(HermitianOperator::identity(dim).scale(p)).expect("I/d is a density matrix")
    }

    pub fn pure(state: &[crate::operator::C64]) -> Result<Self> {
        Self::new(HermitianOperator::projector(state)?)
    }

    pub fn dim(&self) -> usize {
        self.operator.dim()
    }

    pub fn operator(&self) -> &HermitianOperator {
        &self.operator
    }

    pub fn matrix(&self) -> &CMatrix {
        self.operator.matrix()
    }

    pub fn decomposition(&self) -> &SpectralDecomposition {
        &self.decomposition
    }

    /// Eigenvalues in the order of the stored eigenbasis.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        self.decomposition.eigenvalues()
    }

    /// Eigenvalues above the floor `1e-14·max p`, ascending.
    pub fn retained_spectrum(&self) -> Vec<f64> {
        let mut kept: Vec<f64> = self
            .eigenvalues()
            .iter()
            .copied()
            .filter(|&p| p > self.floor)
            .collect();
        kept.sort_by(f64::total_cmp);
        kept
    }

    /// Cached `−Σ α_j F_j − ln Z·I` for exponential-family states.
    pub fn log_form(&self) -> Option<&HermitianOperator> {
        self.log_form.as_ref()
    }

    pub fn trace(&self) -> f64 {
        self.operator.trace()
    }

    pub fn purity(&self) -> f64 {
        self.eigenvalues().iter().map(|p| p * p).sum()
    }

    /// Von Neumann entropy `−Σ p ln p` (k = 1).
    pub fn entropy(&self) -> f64 {
        self.eigenvalues()
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum::<f64>()
            .max(0.0)
    }
}

pub fn entropy(rho: &DensityMatrix) -> f64 {
    rho.entropy()
}

/// Multipliers `α_j` paired with parametric observables `F_j(λ)`.
#[derive(Clone, Debug)]
pub struct EnsembleSpec {
    alphas: Vec<f64>,
    families: Vec<OperatorFamily>,
    lambda: Vec<f64>,
}

impl EnsembleSpec {
    pub fn new(alphas: Vec<f64>, families: Vec<OperatorFamily>, lambda: Vec<f64>) -> Result<Self> {
        if families.is_empty() {
            return Err(Error::Configuration(
                "ensemble needs at least one observable".into(),
            ));
        }
        check_same_dim("multiplier count", families.len(), alphas.len())?;
        let dim = families[0].dim();
        for f in &families {
            check_same_dim("observable dimension", dim, f.dim())?;
            check_same_dim("observable parameter count", lambda.len(), f.n_params())?;
        }
        if let Some(bad) = alphas.iter().chain(&lambda).find(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite parameter {bad}")));
        }
        Ok(Self {
            alphas,
            families,
            lambda,
        })
    }

    /// `α = (β)`, `F = (H)`.
    pub fn canonical(hamiltonian: OperatorFamily, beta: f64, lambda: Vec<f64>) -> Result<Self> {
        Self::new(vec![beta], vec![hamiltonian], lambda)
    }

    /// `α = (β, −βμ)`, `F = (H, N)`.
    pub fn grand_canonical(
        hamiltonian: OperatorFamily,
        number: HermitianOperator,
        beta: f64,
        mu: f64,
        lambda: Vec<f64>,
    ) -> Result<Self> {
        let n_params = lambda.len();
        let number = OperatorFamily::constant("N", number, n_params);
        Self::new(vec![beta, -beta * mu], vec![hamiltonian, number], lambda)
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn families(&self) -> &[OperatorFamily] {
        &self.families
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn n_observables(&self) -> usize {
        self.families.len()
    }

    pub fn n_lambda(&self) -> usize {
        self.lambda.len()
    }

    pub fn dim(&self) -> usize {
        self.families[0].dim()
    }

    pub fn with_alphas(&self, alphas: Vec<f64>) -> Result<Self> {
        Self::new(alphas, self.families.clone(), self.lambda.clone())
    }

    pub fn with_lambda(&self, lambda: Vec<f64>) -> Result<Self> {
        Self::new(self.alphas.clone(), self.families.clone(), lambda)
    }

    /// Parameters moved to `(α + t·dα, λ + t·dλ)`.
    pub fn displaced(&self, dalpha: &[f64], dlambda: &[f64], t: f64) -> Result<Self> {
        check_same_dim("alpha direction", self.alphas.len(), dalpha.len())?;
        check_same_dim("lambda direction", self.lambda.len(), dlambda.len())?;
        let alphas = self.alphas.iter().zip(dalpha).map(|(a, d)| a + t * d).collect();
        let lambda = self.lambda.iter().zip(dlambda).map(|(l, d)| l + t * d).collect();
        Self::new(alphas, self.families.clone(), lambda)
    }

    /// The observables `F_j(λ)` at the current `λ`.
    pub fn observables(&self) -> Result<Vec<HermitianOperator>> {
        self.families.iter().map(|f| f.at(&self.lambda)).collect()
    }

    /// `∂F_j/∂λ_i` at the current `λ`.
    pub fn observable_derivative(&self, j: usize, i: usize) -> Result<HermitianOperator> {
        self.families
            .get(j)
            .ok_or_else(|| Error::UnknownParameter(format!("observable index {j}")))?
            .derivative(&self.lambda, i)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermoSummary {
    /// `ln Z`.
    pub log_partition: f64,
    /// Von Neumann entropy in units of k.
    pub entropy: f64,
    /// `−(1/β) ln Z` when a β-like multiplier is designated.
    pub potential: Option<f64>,
    /// `z = e^{βμ}` for grand-canonical ensembles.
    pub fugacity: Option<f64>,
}

/// A built exponential-family ensemble, keeping the evaluated observables so
/// that downstream moment computations do not re-run the generators.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub rho: DensityMatrix,
    pub thermo: ThermoSummary,
    pub observables: Vec<HermitianOperator>,
}

pub(crate) fn check_pairwise_compatible(
    ops: &[HermitianOperator],
    names: &[&str],
    tol: f64,
) -> Result<()> {
    for i in 0..ops.len() {
        for j in (i + 1)..ops.len() {
            let (norm, scale) = commutator_norm_scaled(ops[i].matrix(), ops[j].matrix())?;
            if norm > tol * scale {
                return Err(Error::Incompatible {
                    first: format!("F[{i}] ({})", names[i]),
                    second: format!("F[{j}] ({})", names[j]),
                    norm,
                });
            }
        }
    }
    Ok(())
}

/// Builds `exp(−X)/Tr exp(−X)` from the decomposition of the exponent `X`.
///
/// The exponent is shifted by its smallest eigenvalue before exponentiation;
/// `ρ` is unchanged and `ln Z` picks the shift back up exactly.
pub(crate) fn gibbs_from_exponent(
    exponent: &HermitianOperator,
) -> Result<(DensityMatrix, f64, f64)> {
    let decomp = exponent.eigh()?;
    let e = decomp.eigenvalues();
    let e_min = e.min();
    let weights: Vec<f64> = e.iter().map(|&x| (-(x - e_min)).exp()).collect();
    let sum: f64 = weights.iter().sum();
    let ln_sum = sum.ln();
    let log_partition = -e_min + ln_sum;
    let probs: Vec<f64> = weights.iter().map(|w| w / sum).collect();
    // −ln p_n = (e_n − e_min) + ln Σ
    let entropy = probs
        .iter()
        .zip(e.iter())
        .map(|(&p, &x)| p * ((x - e_min) + ln_sum))
        .sum::<f64>()
        .max(0.0);

    let operator = decomp.reconstruct_with(&probs);
    let log_form = exponent.scale(-1.0).shift(-log_partition);
    let floor = EIGEN_FLOOR_REL * probs.iter().copied().fold(0.0, f64::max);
    let decomposition = SpectralDecomposition::from_parts(DVector::from_vec(probs), decomp.eigenvectors().clone())?;
    let rho = DensityMatrix {
        operator,
        decomposition,
        floor,
        log_form: Some(log_form),
    };
    Ok((rho, log_partition, entropy))
}

/// Evaluates `spec` and returns the density matrix together with the
/// observables `F_j(λ)` it was built from.
pub fn build_ensemble(spec: &EnsembleSpec) -> Result<Ensemble> {
    let observables = spec.observables()?;
    let names: Vec<&str> = spec.families.iter().map(|f| f.name()).collect();
    check_pairwise_compatible(&observables, &names, COMPAT_TOL)?;

    let mut exponent = CMatrix::zeros(spec.dim(), spec.dim());
    for (alpha, op) in spec.alphas.iter().zip(&observables) {
        exponent += op.matrix().scale(*alpha);
    }
    let exponent = HermitianOperator::from_hermitian_unchecked(exponent);
    let (rho, log_partition, entropy) = gibbs_from_exponent(&exponent)?;
    Ok(Ensemble {
        rho,
        thermo: ThermoSummary {
            log_partition,
            entropy,
            potential: None,
            fugacity: None,
        },
        observables,
    })
}

pub fn build_generalized(spec: &EnsembleSpec) -> Result<(DensityMatrix, ThermoSummary)> {
    let ens = build_ensemble(spec)?;
    Ok((ens.rho, ens.thermo))
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "inverse temperature must be positive and finite, got {beta}"
        )));
    }
    Ok(())
}

pub fn build_canonical(
    hamiltonian: &OperatorFamily,
    beta: f64,
    lambda: &[f64],
) -> Result<(DensityMatrix, ThermoSummary)> {
    check_beta(beta)?;
    let spec = EnsembleSpec::canonical(hamiltonian.clone(), beta, lambda.to_vec())?;
    let (rho, mut thermo) = build_generalized(&spec)?;
    thermo.potential = Some(-thermo.log_partition / beta);
    Ok((rho, thermo))
}

pub fn build_grand_canonical(
    hamiltonian: &OperatorFamily,
    number: &HermitianOperator,
    beta: f64,
    mu: f64,
    lambda: &[f64],
) -> Result<(DensityMatrix, ThermoSummary)> {
    check_beta(beta)?;
    let h = hamiltonian.at(lambda)?;
    check_same_dim("number operator dimension", h.dim(), number.dim())?;
    let (norm, scale) = commutator_norm_scaled(h.matrix(), number.matrix())?;
    if norm > COMPAT_TOL * scale {
        return Err(Error::Incompatible {
            first: format!("H ({})", hamiltonian.name()),
            second: "N".into(),
            norm,
        });
    }
    let spec = EnsembleSpec::grand_canonical(
        hamiltonian.clone(),
        number.clone(),
        beta,
        mu,
        lambda.to_vec(),
    )?;
    let (rho, mut thermo) = build_generalized(&spec)?;
    thermo.potential = Some(-thermo.log_partition / beta);
    thermo.fugacity = Some((beta * mu).exp());
    Ok((rho, thermo))
}

/// `max |ρ − exp(log_form)|`, or `None` when no log form is cached.
pub fn log_form_residual(rho: &DensityMatrix) -> Result<Option<f64>> {
    match rho.log_form() {
        None => Ok(None),
        Some(l) => {
            let e = crate::operator::matrix_exp(l)?;
            Ok(Some(max_abs(&(e.matrix() - rho.matrix()))))
        }
    }
}
