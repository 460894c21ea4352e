//! Fluctuation-dissipation identity engine.
//!
//! For an exponential-family state `ρ = exp(−Σ_j α_j F_j(λ))/Z` and an
//! observable `A(λ)` commuting with `ρ`, the derivative of `⟨A⟩` along any
//! parameter `γ` splits as
//!
//! ```text
//! ∂⟨A⟩/∂γ = ⟨∂A/∂γ⟩ + ⟨A · ∂ln ρ/∂γ⟩,
//! ∂ln ρ/∂γ = −Σ_j ∂(α_j F_j)/∂γ − (∂ln Z/∂γ)·I.
//! ```
//!
//! The left side is always measured by finite differences on rebuilt
//! ensembles; the right side is evaluated in closed form from the log form.
//! Each tabulated identity (canonical, grand-canonical, generalized) is a
//! specialization, and all of them route through the same generalized
//! machinery so that specializations agree to the last bit where the
//! arithmetic coincides.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ensemble::{build_ensemble, DensityMatrix, Ensemble, EnsembleSpec, COMPAT_TOL};
use crate::error::{Error, Result};
use crate::fd::{default_step, richardson, FdEstimate};
use crate::operator::{
    anticommutator, check_same_dim, commutator, commutator_norm_scaled, trace_product, CMatrix,
    HermitianOperator, OperatorFamily, C64,
};
use crate::Constants;

/// Minimum gap to neighbouring levels for pure-state Hellmann-Feynman checks.
pub const DEGENERACY_GAP_TOL: f64 = 1e-8;

/// Largest imaginary part tolerated in an expectation of Hermitian operators,
/// relative to `max(1, |A|)`.
const IMAG_TOL: f64 = 1e-10;

/// Cross-check tolerance between the two heat-capacity routes.
pub const HEAT_CAPACITY_RTOL: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub atol: f64,
    pub rtol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            atol: 1e-8,
            rtol: 1e-6,
        }
    }
}

impl Tolerances {
    pub fn accepts(&self, lhs: f64, rhs: f64) -> bool {
        let abs = (lhs - rhs).abs();
        abs <= self.atol.max(self.rtol * lhs.abs().max(rhs.abs()))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckOptions {
    pub tolerances: Tolerances,
    /// Absolute finite-difference step; `1e-5·max(1, |γ|)` when unset.
    pub fd_step: Option<f64>,
    /// Negative-control fixture: flips the sign of the fluctuation (or
    /// partition-function) term on the right-hand side.
    pub flip_rhs_sign: bool,
}

impl CheckOptions {
    fn step_for(&self, gamma: f64) -> f64 {
        self.fd_step.unwrap_or_else(|| default_step(gamma))
    }

    fn sign(&self) -> f64 {
        if self.flip_rhs_sign {
            -1.0
        } else {
            1.0
        }
    }
}

/// One evaluated identity: both sides, residuals and the verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub identity_id: IdentityId,
    /// Which observable/parameter instance was checked, e.g. `A=F[0],gamma=alpha[1]`.
    pub instance: String,
    pub lhs: f64,
    pub rhs: f64,
    pub abs_residual: f64,
    pub rel_residual: f64,
    pub fd_step: Option<f64>,
    pub pass: bool,
    /// Secondary quantities logged alongside the verdict.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
}

impl IdentityReport {
    pub fn new(
        identity_id: IdentityId,
        instance: impl Into<String>,
        lhs: f64,
        rhs: f64,
        fd_step: Option<f64>,
        tolerances: &Tolerances,
    ) -> Self {
        let abs_residual = (lhs - rhs).abs();
        let scale = lhs.abs().max(rhs.abs());
        let rel_residual = if scale > 0.0 {
            abs_residual / scale
        } else {
            0.0
        };
        let pass = abs_residual.is_finite() && tolerances.accepts(lhs, rhs);
        Self {
            identity_id,
            instance: instance.into(),
            lhs,
            rhs,
            abs_residual,
            rel_residual,
            fd_step,
            pass,
            details: BTreeMap::new(),
        }
    }

    pub fn with_detail(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.to_string(), value);
        self
    }
}

macro_rules! identity_ids {
    ($( $variant:ident => $tag:literal, $relation:literal; )*) => {
        /// Catalog of checkable identities.
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum IdentityId {
            $( #[serde(rename = $tag)] $variant, )*
        }

        impl IdentityId {
            pub const ALL: &'static [IdentityId] = &[$( IdentityId::$variant, )*];

            pub fn tag(self) -> &'static str {
                match self { $( IdentityId::$variant => $tag, )* }
            }

            /// The relation being checked, in plain notation.
            pub fn relation(self) -> &'static str {
                match self { $( IdentityId::$variant => $relation, )* }
            }
        }

        impl FromStr for IdentityId {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $( $tag => Ok(IdentityId::$variant), )*
                    other => Err(Error::UnknownParameter(format!("identity id {other}"))),
                }
            }
        }
    };
}

identity_ids! {
    T1OneLambda => "T1-ONE-LAMBDA", "<dH/dlambda> = -(1/beta) d ln Z/dlambda |beta";
    T1OneBeta => "T1-ONE-BETA", "<H> = -d ln Z/dbeta |lambda";
    T1HLambda => "T1-H-LAMBDA", "d<H>/dlambda = <dH/dlambda> - beta Cov(H, dH/dlambda)";
    T1HBeta => "T1-H-BETA", "d<H>/dbeta = -Var(H)";
    T2OneLambda => "T2-ONE-LAMBDA", "<dH/dlambda> = -(1/beta) d ln Xi/dlambda |beta,z";
    T2OneBeta => "T2-ONE-BETA", "<H> = -d ln Xi/dbeta |lambda,z";
    T2OneMu => "T2-ONE-MU", "<N> = (1/beta) d ln Xi/dmu |lambda,beta";
    T2HLambda => "T2-H-LAMBDA", "d<H>/dlambda = <dH/dlambda> - beta Cov(H, dH/dlambda)";
    T2HBeta => "T2-H-BETA", "d<H>/dbeta |z = -Var(H)";
    T2HMu => "T2-H-MU", "d<H>/dmu = beta Cov(H, N)";
    T2NLambda => "T2-N-LAMBDA", "d<N>/dlambda = -beta Cov(N, dH/dlambda)";
    T2NBeta => "T2-N-BETA", "d<N>/dbeta |z = -Cov(N, H)";
    T2NMu => "T2-N-MU", "d<N>/dmu = beta Var(N)";
    T3OneLambda => "T3-ONE-LAMBDA", "sum_j alpha_j <dF_j/dlambda_k> = -d ln Z/dlambda_k";
    T3OneAlpha => "T3-ONE-ALPHA", "<F_k> = -d ln Z/dalpha_k";
    T3FkLambda => "T3-FK-LAMBDA", "d<F_k>/dlambda_l = <dF_k/dlambda_l> - sum_j alpha_j Cov(F_k, dF_j/dlambda_l)";
    T3FkAlpha => "T3-FK-ALPHA", "d<F_j>/dalpha_l = -Cov(F_j, F_l)";
    QfdtGeneric => "QFDT-GENERIC", "d<A>/dgamma = <dA/dgamma> + <A d ln rho/dgamma>";
    HfMixed => "HF-MIXED", "d<H>/dgamma = <dH/dgamma> for gamma-independent rho";
    HfPure => "HF-PURE", "dE_n/dgamma = <n| dH/dgamma |n>";
    HeatCapacity => "HEAT-CAPACITY", "C = -k beta^2 d<H>/dbeta = k beta^2 Var(H)";
    Ehrenfest => "EHRENFEST", "d<A>/dt = <dA/dt> + (1/i hbar) <[A, H]>";
}

impl fmt::Display for IdentityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl IdentityId {
    /// Table number (1 canonical, 2 grand-canonical, 3 generalized).
    pub fn table(self) -> Option<u8> {
        let tag = self.tag();
        match &tag[..2] {
            "T1" => Some(1),
            "T2" => Some(2),
            "T3" => Some(3),
            _ => None,
        }
    }

    fn takes_lambda(self) -> bool {
        use IdentityId::*;
        matches!(
            self,
            T1OneLambda | T1HLambda | T2OneLambda | T2HLambda | T2NLambda | T3OneLambda | T3FkLambda
        )
    }
}

/// An identity together with the observable/parameter indices it applies to.
///
/// `first` is the λ index for T1/T2 λ-identities and for
/// `T3-ONE-LAMBDA`, the observable index `k` for `T3-ONE-ALPHA`, and the
/// observable index for the `T3-FK-*` pair whose `second` is the parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Identity {
    pub id: IdentityId,
    pub first: usize,
    pub second: usize,
}

impl Identity {
    pub fn new(id: IdentityId) -> Self {
        Self {
            id,
            first: 0,
            second: 0,
        }
    }

    pub fn indexed(id: IdentityId, first: usize, second: usize) -> Self {
        Self { id, first, second }
    }

    pub fn label(&self) -> String {
        use IdentityId::*;
        let (a, b) = (self.first, self.second);
        match self.id {
            T1OneLambda | T2OneLambda => format!("A=I,gamma=lambda[{a}]"),
            T1OneBeta | T2OneBeta => "A=I,gamma=beta".into(),
            T2OneMu => "A=I,gamma=mu".into(),
            T1HLambda | T2HLambda => format!("A=H,gamma=lambda[{a}]"),
            T1HBeta | T2HBeta => "A=H,gamma=beta".into(),
            T2HMu => "A=H,gamma=mu".into(),
            T2NLambda => format!("A=N,gamma=lambda[{a}]"),
            T2NBeta => "A=N,gamma=beta".into(),
            T2NMu => "A=N,gamma=mu".into(),
            T3OneLambda => format!("A=I,gamma=lambda[{a}]"),
            T3OneAlpha => format!("A=I,gamma=alpha[{a}]"),
            T3FkLambda => format!("A=F[{a}],gamma=lambda[{b}]"),
            T3FkAlpha => format!("A=F[{a}],gamma=alpha[{b}]"),
            other => other.tag().to_string(),
        }
    }
}

/// A parameter of the generalized model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Param {
    Alpha(usize),
    Lambda(usize),
}

/// A tangent direction in `(α, λ)` space. Held-fixed conventions such as
/// "β at fixed fugacity" are expressed as directions.
#[derive(Clone, Debug, PartialEq)]
pub struct Direction {
    pub dalpha: Vec<f64>,
    pub dlambda: Vec<f64>,
}

impl Direction {
    pub fn from_param(spec: &EnsembleSpec, param: Param) -> Result<Self> {
        let (n, m) = (spec.n_observables(), spec.n_lambda());
        let mut dir = Self {
            dalpha: vec![0.0; n],
            dlambda: vec![0.0; m],
        };
        match param {
            Param::Alpha(k) if k < n => dir.dalpha[k] = 1.0,
            Param::Lambda(i) if i < m => dir.dlambda[i] = 1.0,
            Param::Alpha(k) => return Err(Error::UnknownParameter(format!("alpha[{k}]"))),
            Param::Lambda(i) => return Err(Error::UnknownParameter(format!("lambda[{i}]"))),
        }
        Ok(dir)
    }

    fn check(&self, spec: &EnsembleSpec) -> Result<()> {
        check_same_dim("alpha direction", spec.n_observables(), self.dalpha.len())?;
        check_same_dim("lambda direction", spec.n_lambda(), self.dlambda.len())
    }
}

/// A direction with a display name and the current value of its parameter
/// (used to size finite-difference steps).
#[derive(Clone, Debug, PartialEq)]
pub struct NamedDirection {
    pub name: String,
    pub direction: Direction,
    pub value: f64,
}

fn expectation_raw(a: &CMatrix, rho: &DensityMatrix) -> Result<C64> {
    check_same_dim("expectation", rho.dim(), a.nrows())?;
    trace_product(a, rho.matrix())
}

fn real_part_checked(z: C64, scale: f64, what: &str) -> Result<f64> {
    if z.im.abs() > IMAG_TOL * scale.max(1.0) {
        return Err(Error::Numerical(format!(
            "{what} has imaginary part {:e}",
            z.im
        )));
    }
    Ok(z.re)
}

/// `⟨A⟩ = Re Tr(A ρ)`.
pub fn expectation(a: &HermitianOperator, rho: &DensityMatrix) -> Result<f64> {
    let z = expectation_raw(a.matrix(), rho)?;
    real_part_checked(z, a.max_norm(), "expectation")
}

fn compatible_with_rho(a: &HermitianOperator, rho: &DensityMatrix) -> Result<bool> {
    let (norm, scale) = commutator_norm_scaled(a.matrix(), rho.matrix())?;
    Ok(norm <= COMPAT_TOL * scale)
}

/// `Tr(ρ ΔA ΔB)` with `ΔX = X − ⟨X⟩`.
fn centered_second_moment(
    a: &HermitianOperator,
    b: &HermitianOperator,
    rho: &DensityMatrix,
) -> Result<(f64, f64, C64)> {
    let mean_a = expectation(a, rho)?;
    let mean_b = expectation(b, rho)?;
    let da = a.shift(-mean_a);
    let db = b.shift(-mean_b);
    let rho_da = rho.matrix() * da.matrix();
    let z = trace_product(&rho_da, db.matrix())?;
    Ok((mean_a, mean_b, z))
}

/// `Cov(A, B) = ⟨AB⟩ − ⟨A⟩⟨B⟩`.
///
/// At least one of the two observables must commute with `ρ`; then the
/// commutator part of the covariance vanishes and the value is real.
pub fn covariance(a: &HermitianOperator, b: &HermitianOperator, rho: &DensityMatrix) -> Result<f64> {
    check_same_dim("covariance", a.dim(), b.dim())?;
    if !compatible_with_rho(a, rho)? && !compatible_with_rho(b, rho)? {
        return Err(Error::Incompatible {
            first: "covariance argument A".into(),
            second: "rho (and B)".into(),
            norm: crate::operator::max_abs(&commutator(a.matrix(), rho.matrix())?),
        });
    }
    let (_, _, z) = centered_second_moment(a, b, rho)?;
    real_part_checked(z, a.max_norm() * b.max_norm(), "covariance")
}

/// First and second moments of a pair of observables.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean_a: f64,
    pub mean_b: f64,
    pub cov_ab: f64,
    /// `Var(A)` clamped at zero.
    pub var_a: f64,
    /// Unclamped `Var(A)` as computed.
    pub var_a_raw: f64,
}

pub fn moments(a: &HermitianOperator, b: &HermitianOperator, rho: &DensityMatrix) -> Result<Moments> {
    let cov_ab = covariance(a, b, rho)?;
    let (mean_a, mean_b, _) = centered_second_moment(a, b, rho)?;
    let var_a_raw = covariance(a, a, rho)?;
    if var_a_raw < -1e-12 {
        return Err(Error::Numerical(format!("negative variance {var_a_raw:e}")));
    }
    Ok(Moments {
        mean_a,
        mean_b,
        cov_ab,
        var_a: var_a_raw.max(0.0),
        var_a_raw,
    })
}

/// The two halves of `Cov(A, B) = ½⟨[A,B]⟩ + ½⟨{ΔA, ΔB}⟩`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CovarianceSplit {
    pub anticommutator_half: f64,
    pub commutator_half: C64,
}

pub fn covariance_split(
    a: &HermitianOperator,
    b: &HermitianOperator,
    rho: &DensityMatrix,
) -> Result<CovarianceSplit> {
    check_same_dim("covariance", a.dim(), b.dim())?;
    let mean_a = expectation(a, rho)?;
    let mean_b = expectation(b, rho)?;
    let anti = anticommutator(&a.shift(-mean_a), &b.shift(-mean_b))?;
    let comm = commutator(a.matrix(), b.matrix())?;
    Ok(CovarianceSplit {
        anticommutator_half: 0.5 * expectation(&anti, rho)?,
        commutator_half: expectation_raw(&comm, rho)? * 0.5,
    })
}

/// An ensemble built at one parameter point, with the moment helpers the
/// identities need.
struct Point {
    spec: EnsembleSpec,
    ens: Ensemble,
}

impl Point {
    fn new(spec: EnsembleSpec) -> Result<Self> {
        let ens = build_ensemble(&spec)?;
        Ok(Self { spec, ens })
    }

    fn rho(&self) -> &DensityMatrix {
        &self.ens.rho
    }

    fn mean(&self, op: &HermitianOperator) -> Result<f64> {
        expectation(op, self.rho())
    }

    fn cov(&self, a: &HermitianOperator, b: &HermitianOperator) -> Result<f64> {
        covariance(a, b, self.rho())
    }

    fn observable(&self, j: usize) -> Result<&HermitianOperator> {
        self.ens
            .observables
            .get(j)
            .ok_or_else(|| Error::UnknownParameter(format!("observable F[{j}]")))
    }

    /// `G = Σ_j ∂(α_j F_j)/∂γ` along the direction.
    fn log_generator(&self, dir: &Direction) -> Result<HermitianOperator> {
        dir.check(&self.spec)?;
        let mut g = HermitianOperator::zeros(self.spec.dim());
        for (j, (alpha, da)) in self.spec.alphas().iter().zip(&dir.dalpha).enumerate() {
            if *da != 0.0 {
                g = g.add_scaled(*da, self.observable(j)?)?;
            }
            for (i, dl) in dir.dlambda.iter().enumerate() {
                if *dl != 0.0 && *alpha != 0.0 {
                    g = g.add_scaled(alpha * dl, &self.spec.observable_derivative(j, i)?)?;
                }
            }
        }
        Ok(g)
    }

    /// `∂ln Z/∂γ = −⟨G⟩`.
    fn dlnz_analytic(&self, dir: &Direction) -> Result<f64> {
        Ok(-self.mean(&self.log_generator(dir)?)?)
    }

    fn dlnz_fd(&self, dir: &Direction, h: f64) -> Result<FdEstimate> {
        richardson(
            |t| {
                let spec = self.spec.displaced(&dir.dalpha, &dir.dlambda, t)?;
                Ok(build_ensemble(&spec)?.thermo.log_partition)
            },
            h,
        )
    }

    /// Finite-difference derivative of `⟨F_j⟩` along the direction.
    fn dmean_observable_fd(&self, j: usize, dir: &Direction, h: f64) -> Result<FdEstimate> {
        self.observable(j)?;
        richardson(
            |t| {
                let spec = self.spec.displaced(&dir.dalpha, &dir.dlambda, t)?;
                let ens = build_ensemble(&spec)?;
                expectation(&ens.observables[j], &ens.rho)
            },
            h,
        )
    }

    /// Finite-difference derivative of `⟨A(λ)⟩` along the direction.
    fn dmean_family_fd(&self, a: &OperatorFamily, dir: &Direction, h: f64) -> Result<FdEstimate> {
        richardson(
            |t| {
                let spec = self.spec.displaced(&dir.dalpha, &dir.dlambda, t)?;
                let ens = build_ensemble(&spec)?;
                expectation(&a.at(spec.lambda())?, &ens.rho)
            },
            h,
        )
    }

    /// `Σ_i dλ_i ∂A/∂λ_i`.
    fn family_derivative(&self, a: &OperatorFamily, dir: &Direction) -> Result<HermitianOperator> {
        let mut out = HermitianOperator::zeros(a.dim());
        for (i, dl) in dir.dlambda.iter().enumerate() {
            if *dl != 0.0 {
                out = out.add_scaled(*dl, &a.derivative(self.spec.lambda(), i)?)?;
            }
        }
        Ok(out)
    }
}

/// Closed-form right-hand side of the generalized identity, with its parts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QfdtRhs {
    pub value: f64,
    /// `⟨∂A/∂γ⟩`.
    pub operator_term: f64,
    /// `⟨A · ∂ln ρ/∂γ⟩`.
    pub log_density_term: f64,
    /// `∂ln Z/∂γ` from the trace formula.
    pub dlnz: f64,
}

fn check_family_params(a: &OperatorFamily, spec: &EnsembleSpec) -> Result<()> {
    check_same_dim("observable dimension", spec.dim(), a.dim())?;
    check_same_dim("observable parameter count", spec.n_lambda(), a.n_params())
}

pub fn qfdt_rhs_along(a: &OperatorFamily, spec: &EnsembleSpec, dir: &Direction) -> Result<QfdtRhs> {
    check_family_params(a, spec)?;
    dir.check(spec)?;
    let point = Point::new(spec.clone())?;
    qfdt_rhs_at(&point, a, dir, 1.0)
}

fn qfdt_rhs_at(point: &Point, a: &OperatorFamily, dir: &Direction, sign: f64) -> Result<QfdtRhs> {
    let a_op = a.at(point.spec.lambda())?;
    if !compatible_with_rho(&a_op, point.rho())? {
        return Err(Error::Incompatible {
            first: format!("A ({})", a.name()),
            second: "rho".into(),
            norm: crate::operator::max_abs(&commutator(a_op.matrix(), point.rho().matrix())?),
        });
    }
    let operator_term = point.mean(&point.family_derivative(a, dir)?)?;
    let g = point.log_generator(dir)?;
    let dlnz = -point.mean(&g)?;
    // ∂ln ρ/∂γ = −G − (∂ln Z/∂γ)·I
    let dlog_rho = g.scale(-1.0).shift(-dlnz);
    let a_dlog = a_op.matrix() * dlog_rho.matrix();
    let z = trace_product(&(point.rho().matrix() * a_dlog), &CMatrix::identity(a.dim(), a.dim()))?;
    let log_density_term = real_part_checked(z, a_op.max_norm() * dlog_rho.max_norm(), "<A dlog rho>")?;
    Ok(QfdtRhs {
        value: operator_term + sign * log_density_term,
        operator_term,
        log_density_term,
        dlnz,
    })
}

pub fn qfdt_rhs(a: &OperatorFamily, spec: &EnsembleSpec, gamma: Param) -> Result<f64> {
    let dir = Direction::from_param(spec, gamma)?;
    Ok(qfdt_rhs_along(a, spec, &dir)?.value)
}

pub fn qfdt_lhs_fd_along(
    a: &OperatorFamily,
    spec: &EnsembleSpec,
    dir: &Direction,
    step: f64,
) -> Result<FdEstimate> {
    check_family_params(a, spec)?;
    dir.check(spec)?;
    if !(step > 0.0) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {step}")));
    }
    let point = Point::new(spec.clone())?;
    point.dmean_family_fd(a, dir, step)
}

pub fn qfdt_lhs_fd(a: &OperatorFamily, spec: &EnsembleSpec, gamma: Param, step: f64) -> Result<FdEstimate> {
    let dir = Direction::from_param(spec, gamma)?;
    qfdt_lhs_fd_along(a, spec, &dir, step)
}

/// Both sides of the generic identity for one observable and direction.
pub fn check_qfdt(
    a: &OperatorFamily,
    spec: &EnsembleSpec,
    direction: &NamedDirection,
    opts: &CheckOptions,
) -> Result<IdentityReport> {
    check_family_params(a, spec)?;
    direction.direction.check(spec)?;
    let point = Point::new(spec.clone())?;
    let h = opts.step_for(direction.value);
    let rhs = qfdt_rhs_at(&point, a, &direction.direction, opts.sign())?;
    let lhs = point.dmean_family_fd(a, &direction.direction, h)?;
    Ok(IdentityReport::new(
        IdentityId::QfdtGeneric,
        format!("A={},gamma={}", a.name(), direction.name),
        lhs.value,
        rhs.value,
        Some(h),
        &opts.tolerances,
    )
    .with_detail("lhs_fd_error", lhs.error)
    .with_detail("operator_term", rhs.operator_term)
    .with_detail("log_density_term", rhs.log_density_term)
    .with_detail("dlnz", rhs.dlnz))
}

/// The parameter point an identity is evaluated at.
#[derive(Clone, Debug)]
pub enum ModelContext {
    Canonical {
        hamiltonian: OperatorFamily,
        beta: f64,
        lambda: Vec<f64>,
    },
    GrandCanonical {
        hamiltonian: OperatorFamily,
        number: HermitianOperator,
        beta: f64,
        mu: f64,
        lambda: Vec<f64>,
    },
    Generalized(EnsembleSpec),
}

impl ModelContext {
    pub fn spec(&self) -> Result<EnsembleSpec> {
        match self {
            Self::Canonical {
                hamiltonian,
                beta,
                lambda,
            } => EnsembleSpec::canonical(hamiltonian.clone(), *beta, lambda.clone()),
            Self::GrandCanonical {
                hamiltonian,
                number,
                beta,
                mu,
                lambda,
            } => EnsembleSpec::grand_canonical(
                hamiltonian.clone(),
                number.clone(),
                *beta,
                *mu,
                lambda.clone(),
            ),
            Self::Generalized(spec) => Ok(spec.clone()),
        }
    }

    pub fn n_lambda(&self) -> usize {
        match self {
            Self::Canonical { lambda, .. } | Self::GrandCanonical { lambda, .. } => lambda.len(),
            Self::Generalized(spec) => spec.n_lambda(),
        }
    }

    fn lambda_directions(&self, n_alpha: usize, lambda: &[f64]) -> Vec<NamedDirection> {
        (0..lambda.len())
            .map(|i| {
                let mut dlambda = vec![0.0; lambda.len()];
                dlambda[i] = 1.0;
                NamedDirection {
                    name: format!("lambda[{i}]"),
                    direction: Direction {
                        dalpha: vec![0.0; n_alpha],
                        dlambda,
                    },
                    value: lambda[i],
                }
            })
            .collect()
    }

    /// `β` direction; for the grand-canonical ensemble the fugacity is held
    /// fixed, so `α₂ = −βμ = −ln z` does not move.
    pub fn beta_direction(&self) -> Option<NamedDirection> {
        let (dalpha, beta, n_lambda) = match self {
            Self::Canonical { beta, lambda, .. } => (vec![1.0], *beta, lambda.len()),
            Self::GrandCanonical { beta, lambda, .. } => (vec![1.0, 0.0], *beta, lambda.len()),
            Self::Generalized(_) => return None,
        };
        Some(NamedDirection {
            name: "beta".into(),
            direction: Direction {
                dalpha,
                dlambda: vec![0.0; n_lambda],
            },
            value: beta,
        })
    }

    /// `μ` direction at fixed `(λ, β)`: `∂/∂μ = −β ∂/∂α₂`.
    pub fn mu_direction(&self) -> Option<NamedDirection> {
        match self {
            Self::GrandCanonical {
                beta, mu, lambda, ..
            } => Some(NamedDirection {
                name: "mu".into(),
                direction: Direction {
                    dalpha: vec![0.0, -*beta],
                    dlambda: vec![0.0; lambda.len()],
                },
                value: *mu,
            }),
            _ => None,
        }
    }

    /// Every continuous parameter of the context as a named direction.
    pub fn directions(&self) -> Vec<NamedDirection> {
        match self {
            Self::Canonical { lambda, .. } => {
                let mut out = self.lambda_directions(1, lambda);
                out.extend(self.beta_direction());
                out
            }
            Self::GrandCanonical { lambda, .. } => {
                let mut out = self.lambda_directions(2, lambda);
                out.extend(self.beta_direction());
                out.extend(self.mu_direction());
                out
            }
            Self::Generalized(spec) => {
                let n = spec.n_observables();
                let mut out: Vec<NamedDirection> = (0..n)
                    .map(|k| {
                        let mut dalpha = vec![0.0; n];
                        dalpha[k] = 1.0;
                        NamedDirection {
                            name: format!("alpha[{k}]"),
                            direction: Direction {
                                dalpha,
                                dlambda: vec![0.0; spec.n_lambda()],
                            },
                            value: spec.alphas()[k],
                        }
                    })
                    .collect();
                out.extend(self.lambda_directions(n, spec.lambda()));
                out
            }
        }
    }

    /// All tabulated identity instances native to this context.
    pub fn native_identities(&self) -> Vec<Identity> {
        use IdentityId::*;
        let m = self.n_lambda();
        let mut out = Vec::new();
        match self {
            Self::Canonical { .. } => {
                for i in 0..m {
                    out.push(Identity::indexed(T1OneLambda, i, 0));
                    out.push(Identity::indexed(T1HLambda, i, 0));
                }
                out.push(Identity::new(T1OneBeta));
                out.push(Identity::new(T1HBeta));
            }
            Self::GrandCanonical { .. } => {
                for i in 0..m {
                    out.push(Identity::indexed(T2OneLambda, i, 0));
                    out.push(Identity::indexed(T2HLambda, i, 0));
                    out.push(Identity::indexed(T2NLambda, i, 0));
                }
                for id in [T2OneBeta, T2OneMu, T2HBeta, T2HMu, T2NBeta, T2NMu] {
                    out.push(Identity::new(id));
                }
            }
            Self::Generalized(spec) => out = generalized_identities(spec.n_observables(), m),
        }
        out.sort();
        out
    }
}

/// All T3 instances for `n` observables and `m` λ-parameters.
pub fn generalized_identities(n: usize, m: usize) -> Vec<Identity> {
    use IdentityId::*;
    let mut out = Vec::new();
    for i in 0..m {
        out.push(Identity::indexed(T3OneLambda, i, 0));
    }
    for k in 0..n {
        out.push(Identity::indexed(T3OneAlpha, k, 0));
        for i in 0..m {
            out.push(Identity::indexed(T3FkLambda, k, i));
        }
        for l in 0..n {
            out.push(Identity::indexed(T3FkAlpha, k, l));
        }
    }
    out.sort();
    out
}

fn lambda_dir(n_alpha: usize, n_lambda: usize, i: usize) -> Result<Direction> {
    if i >= n_lambda {
        return Err(Error::UnknownParameter(format!("lambda[{i}]")));
    }
    let mut dlambda = vec![0.0; n_lambda];
    dlambda[i] = 1.0;
    Ok(Direction {
        dalpha: vec![0.0; n_alpha],
        dlambda,
    })
}

fn alpha_dir(n_alpha: usize, n_lambda: usize, k: usize) -> Result<Direction> {
    if k >= n_alpha {
        return Err(Error::UnknownParameter(format!("alpha[{k}]")));
    }
    let mut dalpha = vec![0.0; n_alpha];
    dalpha[k] = 1.0;
    Ok(Direction {
        dalpha,
        dlambda: vec![0.0; n_lambda],
    })
}

/// `lhs` (a mean) against `factor · ∂ln Z/∂γ` by finite differences.
fn mean_vs_dlnz(
    identity: Identity,
    point: &Point,
    lhs: f64,
    dir: &Direction,
    gamma: f64,
    factor: f64,
    opts: &CheckOptions,
) -> Result<IdentityReport> {
    let h = opts.step_for(gamma);
    let fd = point.dlnz_fd(dir, h)?;
    let analytic = point.dlnz_analytic(dir)?;
    let rhs = opts.sign() * factor * fd.value;
    Ok(
        IdentityReport::new(identity.id, identity.label(), lhs, rhs, Some(h), &opts.tolerances)
            .with_detail("rhs_analytic", factor * analytic)
            .with_detail("dlnz_fd", fd.value)
            .with_detail("dlnz_fd_error", fd.error)
            .with_detail("dlnz_analytic", analytic),
    )
}

/// Finite-difference derivative of `⟨F_j⟩` against `operator_term + fluctuation_term`.
#[allow(clippy::too_many_arguments)]
fn derivative_vs_closed_form(
    identity: Identity,
    point: &Point,
    j: usize,
    dir: &Direction,
    gamma: f64,
    operator_term: f64,
    fluctuation_term: f64,
    opts: &CheckOptions,
) -> Result<IdentityReport> {
    let h = opts.step_for(gamma);
    let fd = point.dmean_observable_fd(j, dir, h)?;
    let rhs = operator_term + opts.sign() * fluctuation_term;
    Ok(
        IdentityReport::new(identity.id, identity.label(), fd.value, rhs, Some(h), &opts.tolerances)
            .with_detail("lhs_fd_error", fd.error)
            .with_detail("operator_term", operator_term)
            .with_detail("fluctuation_term", fluctuation_term),
    )
}

fn variance_checked(point: &Point, op: &HermitianOperator) -> Result<(f64, f64)> {
    let raw = point.cov(op, op)?;
    if raw < -1e-12 {
        return Err(Error::Numerical(format!("negative variance {raw:e}")));
    }
    Ok((raw.max(0.0), raw))
}

/// Evaluates a T3 instance on a generalized point. T1 and
/// T2 instances reduce to these with relabelled ids.
fn check_generalized(identity: Identity, point: &Point, opts: &CheckOptions) -> Result<IdentityReport> {
    use IdentityId::*;
    let spec = &point.spec;
    let (n, m) = (spec.n_observables(), spec.n_lambda());
    match identity.id {
        T3OneLambda => {
            let i = identity.first;
            let dir = lambda_dir(n, m, i)?;
            let mut lhs = 0.0;
            for (j, alpha) in spec.alphas().iter().enumerate() {
                lhs += alpha * point.mean(&spec.observable_derivative(j, i)?)?;
            }
            mean_vs_dlnz(identity, point, lhs, &dir, spec.lambda()[i], -1.0, opts)
        }
        T3OneAlpha => {
            let k = identity.first;
            let dir = alpha_dir(n, m, k)?;
            let lhs = point.mean(point.observable(k)?)?;
            mean_vs_dlnz(identity, point, lhs, &dir, spec.alphas()[k], -1.0, opts)
        }
        T3FkLambda => {
            let (k, i) = (identity.first, identity.second);
            let dir = lambda_dir(n, m, i)?;
            let fk = point.observable(k)?;
            let operator_term = point.mean(&spec.observable_derivative(k, i)?)?;
            let mut fluct = 0.0;
            for (j, alpha) in spec.alphas().iter().enumerate() {
                fluct -= alpha * point.cov(fk, &spec.observable_derivative(j, i)?)?;
            }
            derivative_vs_closed_form(identity, point, k, &dir, spec.lambda()[i], operator_term, fluct, opts)
        }
        T3FkAlpha => {
            let (j, l) = (identity.first, identity.second);
            let dir = alpha_dir(n, m, l)?;
            let fj = point.observable(j)?;
            let fl = point.observable(l)?;
            let (fluct, raw) = if j == l {
                let (v, raw) = variance_checked(point, fj)?;
                (-v, Some(raw))
            } else {
                (-point.cov(fj, fl)?, None)
            };
            let report = derivative_vs_closed_form(identity, point, j, &dir, spec.alphas()[l], 0.0, fluct, opts)?;
            Ok(match raw {
                Some(r) => report.with_detail("var_raw", r),
                None => report,
            })
        }
        other => Err(Error::Configuration(format!(
            "{other} is not a generalized identity"
        ))),
    }
}

fn relabel(mut report: IdentityReport, identity: Identity) -> IdentityReport {
    report.identity_id = identity.id;
    report.instance = identity.label();
    report
}

fn check_canonical(
    identity: Identity,
    point: &Point,
    beta: f64,
    opts: &CheckOptions,
) -> Result<IdentityReport> {
    use IdentityId::*;
    let m = point.spec.n_lambda();
    let report = match identity.id {
        T1OneLambda => {
            let i = identity.first;
            let dir = lambda_dir(1, m, i)?;
            let lhs = point.mean(&point.spec.observable_derivative(0, i)?)?;
            mean_vs_dlnz(identity, point, lhs, &dir, point.spec.lambda()[i], -1.0 / beta, opts)?
        }
        T1OneBeta => check_generalized(Identity::indexed(T3OneAlpha, 0, 0), point, opts)?,
        T1HLambda => check_generalized(Identity::indexed(T3FkLambda, 0, identity.first), point, opts)?,
        T1HBeta => check_generalized(Identity::indexed(T3FkAlpha, 0, 0), point, opts)?,
        other => {
            return Err(Error::Configuration(format!(
                "{other} is not a canonical identity"
            )))
        }
    };
    Ok(relabel(report, identity))
}

fn check_grand(
    identity: Identity,
    point: &Point,
    beta: f64,
    mu: f64,
    opts: &CheckOptions,
) -> Result<IdentityReport> {
    use IdentityId::*;
    let m = point.spec.n_lambda();
    let h_op = point.observable(0)?;
    let n_op = point.observable(1)?;
    let beta_z = Direction {
        dalpha: vec![1.0, 0.0],
        dlambda: vec![0.0; m],
    };
    let mu_dir = Direction {
        dalpha: vec![0.0, -beta],
        dlambda: vec![0.0; m],
    };
    let report = match identity.id {
        T2OneLambda => {
            let i = identity.first;
            let dir = lambda_dir(2, m, i)?;
            let lhs = point.mean(&point.spec.observable_derivative(0, i)?)?;
            mean_vs_dlnz(identity, point, lhs, &dir, point.spec.lambda()[i], -1.0 / beta, opts)?
        }
        T2OneBeta => {
            let lhs = point.mean(h_op)?;
            mean_vs_dlnz(identity, point, lhs, &beta_z, beta, -1.0, opts)?
        }
        T2OneMu => {
            let lhs = point.mean(n_op)?;
            mean_vs_dlnz(identity, point, lhs, &mu_dir, mu, 1.0 / beta, opts)?
        }
        T2HLambda => {
            let i = identity.first;
            let dir = lambda_dir(2, m, i)?;
            let dh = point.spec.observable_derivative(0, i)?;
            let operator_term = point.mean(&dh)?;
            let fluct = -beta * point.cov(h_op, &dh)?;
            derivative_vs_closed_form(identity, point, 0, &dir, point.spec.lambda()[i], operator_term, fluct, opts)?
        }
        T2HBeta => {
            let (var, raw) = variance_checked(point, h_op)?;
            derivative_vs_closed_form(identity, point, 0, &beta_z, beta, 0.0, -var, opts)?
                .with_detail("var_raw", raw)
        }
        T2HMu => {
            let fluct = beta * point.cov(h_op, n_op)?;
            derivative_vs_closed_form(identity, point, 0, &mu_dir, mu, 0.0, fluct, opts)?
        }
        T2NLambda => {
            let i = identity.first;
            let dir = lambda_dir(2, m, i)?;
            let dh = point.spec.observable_derivative(0, i)?;
            let fluct = -beta * point.cov(n_op, &dh)?;
            derivative_vs_closed_form(identity, point, 1, &dir, point.spec.lambda()[i], 0.0, fluct, opts)?
        }
        T2NBeta => {
            let fluct = -point.cov(n_op, h_op)?;
            derivative_vs_closed_form(identity, point, 1, &beta_z, beta, 0.0, fluct, opts)?
        }
        T2NMu => {
            let (var, raw) = variance_checked(point, n_op)?;
            derivative_vs_closed_form(identity, point, 1, &mu_dir, mu, 0.0, beta * var, opts)?
                .with_detail("var_raw", raw)
        }
        other => {
            return Err(Error::Configuration(format!(
                "{other} is not a grand-canonical identity"
            )))
        }
    };
    Ok(report)
}

/// Evaluates one tabulated identity in the given context.
///
/// T1 needs a canonical context and T2 a grand-canonical one
/// (which carries the number operator); T3 runs in any context through
/// its generalized form.
pub fn check_identity(
    identity: Identity,
    ctx: &ModelContext,
    opts: &CheckOptions,
) -> Result<IdentityReport> {
    if identity.id.takes_lambda() && identity.id.table() != Some(3) && identity.first >= ctx.n_lambda() {
        return Err(Error::UnknownParameter(format!("lambda[{}]", identity.first)));
    }
    let point = Point::new(ctx.spec()?)?;
    match (identity.id.table(), ctx) {
        (Some(3), _) => check_generalized(identity, &point, opts),
        (Some(1), ModelContext::Canonical { beta, .. }) => check_canonical(identity, &point, *beta, opts),
        (Some(1), _) => Err(Error::Configuration(format!(
            "{} requires a canonical ensemble",
            identity.id
        ))),
        (Some(2), ModelContext::GrandCanonical { beta, mu, .. }) => {
            check_grand(identity, &point, *beta, *mu, opts)
        }
        (Some(2), _) => Err(Error::Configuration(format!(
            "{}: grand-canonical requires number operator",
            identity.id
        ))),
        _ => Err(Error::Configuration(format!(
            "{} is not a tabulated identity",
            identity.id
        ))),
    }
}

/// Heat capacity by both routes: `k β² Var(H)` and `−k β² ∂⟨H⟩/∂β`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatCapacity {
    pub value: f64,
    pub variance_route: f64,
    pub derivative_route: f64,
    pub fd_step: f64,
}

pub fn heat_capacity(
    hamiltonian: &OperatorFamily,
    beta: f64,
    lambda: &[f64],
    constants: &Constants,
) -> Result<HeatCapacity> {
    let report = heat_capacity_report(hamiltonian, beta, lambda, constants, &CheckOptions::default())?;
    let variance_route = report.rhs;
    let derivative_route = report.lhs;
    let diff = (variance_route - derivative_route).abs();
    let scale = variance_route.abs().max(derivative_route.abs());
    if diff > (HEAT_CAPACITY_RTOL * scale).max(1e-12) {
        return Err(Error::Numerical(format!(
            "heat capacity routes disagree: variance {variance_route:e} vs derivative {derivative_route:e}"
        )));
    }
    Ok(HeatCapacity {
        value: variance_route,
        variance_route,
        derivative_route,
        fd_step: report.fd_step.unwrap_or_default(),
    })
}

/// Heat capacity as an identity report: derivative route on the left,
/// fluctuation route on the right.
pub fn heat_capacity_report(
    hamiltonian: &OperatorFamily,
    beta: f64,
    lambda: &[f64],
    constants: &Constants,
    opts: &CheckOptions,
) -> Result<IdentityReport> {
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "inverse temperature must be positive, got {beta}"
        )));
    }
    let spec = EnsembleSpec::canonical(hamiltonian.clone(), beta, lambda.to_vec())?;
    let point = Point::new(spec)?;
    let dir = Direction {
        dalpha: vec![1.0],
        dlambda: vec![0.0; lambda.len()],
    };
    let h = opts.step_for(beta);
    let fd = point.dmean_observable_fd(0, &dir, h)?;
    let (var, raw) = variance_checked(&point, point.observable(0)?)?;
    let k = constants.k_boltzmann;
    let factor = k * beta * beta;
    Ok(IdentityReport::new(
        IdentityId::HeatCapacity,
        "A=H,gamma=T",
        -factor * fd.value,
        opts.sign() * factor * var,
        Some(h),
        &opts.tolerances,
    )
    .with_detail("var_raw", raw)
    .with_detail("lhs_fd_error", factor * fd.error))
}

/// Hellmann-Feynman for a parameter-independent state: `d/dλ Tr(ρ H(λ))`
/// against `Tr(ρ ∂H/∂λ)`.
pub fn hellmann_feynman_mixed(
    hamiltonian: &OperatorFamily,
    rho: &DensityMatrix,
    lambda: &[f64],
    index: usize,
    opts: &CheckOptions,
) -> Result<IdentityReport> {
    check_same_dim("state dimension", hamiltonian.dim(), rho.dim())?;
    let dir = lambda_dir(0, hamiltonian.n_params(), index)?;
    let h = opts.step_for(lambda[index]);
    let fd = richardson(
        |t| {
            let mut shifted = lambda.to_vec();
            shifted[index] += t * dir.dlambda[index];
            expectation(&hamiltonian.at(&shifted)?, rho)
        },
        h,
    )?;
    let rhs = expectation(&hamiltonian.derivative(lambda, index)?, rho)?;
    Ok(IdentityReport::new(
        IdentityId::HfMixed,
        format!("A={},gamma=lambda[{index}]", hamiltonian.name()),
        fd.value,
        opts.sign() * rhs,
        Some(h),
        &opts.tolerances,
    )
    .with_detail("lhs_fd_error", fd.error))
}

fn level_gap(values: &nalgebra::DVector<f64>, level: usize) -> f64 {
    let mut gap = f64::INFINITY;
    if level > 0 {
        gap = gap.min(values[level] - values[level - 1]);
    }
    if level + 1 < values.len() {
        gap = gap.min(values[level + 1] - values[level]);
    }
    gap
}

/// Hellmann-Feynman for an eigenstate: `dE_n/dλ` against `⟨n|∂H/∂λ|n⟩`.
///
/// The level must stay non-degenerate at every stencil point, otherwise the
/// sorted index would not track a single eigenvalue branch.
pub fn hellmann_feynman_pure(
    hamiltonian: &OperatorFamily,
    level: usize,
    lambda: &[f64],
    index: usize,
    opts: &CheckOptions,
) -> Result<IdentityReport> {
    if level >= hamiltonian.dim() {
        return Err(Error::InvalidParameter(format!(
            "level {level} out of range for dimension {}",
            hamiltonian.dim()
        )));
    }
    lambda_dir(0, hamiltonian.n_params(), index)?;
    let h = opts.step_for(lambda[index]);
    let energy_at = |t: f64| -> Result<f64> {
        let mut shifted = lambda.to_vec();
        shifted[index] += t;
        let decomp = hamiltonian.at(&shifted)?.eigh()?;
        let gap = level_gap(decomp.eigenvalues(), level);
        if gap <= DEGENERACY_GAP_TOL {
            return Err(Error::LevelCrossing {
                gap,
                at: shifted[index],
            });
        }
        Ok(decomp.eigenvalues()[level])
    };
    energy_at(0.0)?;
    let fd = richardson(energy_at, h)?;

    let decomp = hamiltonian.at(lambda)?.eigh()?;
    let v = decomp.eigenvector(level);
    let dh = hamiltonian.derivative(lambda, index)?;
    let z = (v.adjoint() * dh.matrix() * &v)[(0, 0)];
    let rhs = real_part_checked(z, dh.max_norm(), "eigenstate expectation")?;
    Ok(IdentityReport::new(
        IdentityId::HfPure,
        format!("level={level},gamma=lambda[{index}]"),
        fd.value,
        opts.sign() * rhs,
        Some(h),
        &opts.tolerances,
    )
    .with_detail("lhs_fd_error", fd.error)
    .with_detail("gap", level_gap(decomp.eigenvalues(), level)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::build_canonical;

    fn two_level() -> OperatorFamily {
        OperatorFamily::constant("H", HermitianOperator::from_diagonal(&[0.0, 1.0]), 1)
    }

    /// p = e⁻¹/(1+e⁻¹): the excited-state population at β = ε = 1.
    fn p_excited() -> f64 {
        let em1 = (-1.0f64).exp();
        em1 / (1.0 + em1)
    }

    #[test]
    fn expectation_examples() {
        let rho = DensityMatrix::maximally_mixed(2);
        let h = HermitianOperator::from_diagonal(&[0.0, 1.0]);
        assert!((expectation(&h, &rho).unwrap() - 0.5).abs() < 1e-15);
        assert!((expectation(&HermitianOperator::identity(2), &rho).unwrap() - 1.0).abs() < 1e-15);
        let (rho, _) = build_canonical(&two_level(), 1.0, &[0.0]).unwrap();
        assert!((expectation(&h, &rho).unwrap() - p_excited()).abs() < 1e-15);
        assert!(expectation(&HermitianOperator::identity(3), &rho).is_err());
    }

    #[test]
    fn covariance_examples() {
        let (rho, _) = build_canonical(&two_level(), 1.0, &[0.0]).unwrap();
        let h = HermitianOperator::from_diagonal(&[0.0, 1.0]);
        let p = p_excited();
        assert!((covariance(&h, &h, &rho).unwrap() - p * (1.0 - p)).abs() < 1e-15);
        assert!(covariance(&h, &HermitianOperator::identity(2), &rho).unwrap().abs() < 1e-15);
        let m = moments(&h, &h, &rho).unwrap();
        assert!(m.var_a >= 0.0 && (m.cov_ab - m.var_a).abs() < 1e-15);
    }

    #[test]
    fn covariance_needs_one_compatible_argument() {
        let (rho, _) = build_canonical(&two_level(), 1.0, &[0.0]).unwrap();
        let x = HermitianOperator::pauli_x();
        let y = HermitianOperator::pauli_y();
        assert!(matches!(covariance(&x, &y, &rho), Err(Error::Incompatible { .. })));
        let h = HermitianOperator::from_diagonal(&[0.0, 1.0]);
        assert!(covariance(&h, &x, &rho).unwrap().abs() < 1e-15);
    }

    #[test]
    fn qfdt_rhs_examples() {
        let spec = EnsembleSpec::canonical(two_level(), 1.0, vec![0.0]).unwrap();
        let ident = OperatorFamily::constant("I", HermitianOperator::identity(2), 1);
        for param in [Param::Alpha(0), Param::Lambda(0)] {
            assert!(qfdt_rhs(&ident, &spec, param).unwrap().abs() < 1e-15);
        }
        let p = p_excited();
        let rhs = qfdt_rhs(&two_level(), &spec, Param::Alpha(0)).unwrap();
        assert!((rhs + p * (1.0 - p)).abs() < 1e-14);
        assert!(matches!(
            qfdt_rhs(&two_level(), &spec, Param::Alpha(3)),
            Err(Error::UnknownParameter(_))
        ));
    }

    #[test]
    fn qfdt_reduces_to_operator_term_when_state_is_parameter_free() {
        // F does not depend on λ; A = λ·σz so only ⟨∂A/∂λ⟩ survives.
        let a = OperatorFamily::linear("A", HermitianOperator::zeros(2), vec![HermitianOperator::pauli_z()])
            .unwrap();
        let spec = EnsembleSpec::canonical(two_level(), 1.0, vec![0.3]).unwrap();
        let rhs = qfdt_rhs_along(&a, &spec, &Direction::from_param(&spec, Param::Lambda(0)).unwrap()).unwrap();
        let p = p_excited();
        assert!((rhs.value - (1.0 - 2.0 * p)).abs() < 1e-14);
        assert!(rhs.log_density_term.abs() < 1e-15);
    }

    #[test]
    fn lhs_fd_of_constant_family_is_zero() {
        let spec = EnsembleSpec::canonical(two_level(), 1.0, vec![0.0]).unwrap();
        let ident = OperatorFamily::constant("I", HermitianOperator::identity(2), 1);
        let est = qfdt_lhs_fd(&ident, &spec, Param::Alpha(0), 1e-5).unwrap();
        assert!(est.value.abs() < 1e-10);
    }

    #[test]
    fn lhs_fd_matches_rhs_two_level() {
        let spec = EnsembleSpec::canonical(two_level(), 1.0, vec![0.0]).unwrap();
        let lhs = qfdt_lhs_fd(&two_level(), &spec, Param::Alpha(0), 1e-5).unwrap();
        let rhs = qfdt_rhs(&two_level(), &spec, Param::Alpha(0)).unwrap();
        assert!((lhs.value - rhs).abs() < 1e-8);
    }

    #[test]
    fn table_one_beta_identity_two_level() {
        let ctx = ModelContext::Canonical {
            hamiltonian: two_level(),
            beta: 1.0,
            lambda: vec![0.0],
        };
        let r = check_identity(Identity::new(IdentityId::T1HBeta), &ctx, &CheckOptions::default()).unwrap();
        let p = p_excited();
        assert!(r.pass, "{r:?}");
        assert!((r.rhs + p * (1.0 - p)).abs() < 1e-14);
        assert!((r.lhs + 0.196612).abs() < 1e-6);
    }

    #[test]
    fn table_two_requires_grand_context() {
        let ctx = ModelContext::Canonical {
            hamiltonian: two_level(),
            beta: 1.0,
            lambda: vec![0.0],
        };
        let err = check_identity(Identity::new(IdentityId::T2NMu), &ctx, &CheckOptions::default()).unwrap_err();
        assert!(err.to_string().contains("grand-canonical requires number operator"));
    }

    #[test]
    fn flipped_sign_fixture_fails() {
        let ctx = ModelContext::Canonical {
            hamiltonian: two_level(),
            beta: 1.0,
            lambda: vec![0.0],
        };
        let opts = CheckOptions {
            flip_rhs_sign: true,
            ..Default::default()
        };
        let r = check_identity(Identity::new(IdentityId::T1HBeta), &ctx, &opts).unwrap();
        assert!(!r.pass);
    }

    #[test]
    fn identity_tags_round_trip() {
        for id in IdentityId::ALL {
            assert_eq!(id.tag().parse::<IdentityId>().unwrap(), *id);
        }
        assert!("T9-NOPE".parse::<IdentityId>().is_err());
        assert_eq!(IdentityId::T2NMu.to_string(), "T2-N-MU");
        assert_eq!(IdentityId::T3FkAlpha.table(), Some(3));
        assert_eq!(IdentityId::HfPure.table(), None);
    }

    #[test]
    fn heat_capacity_two_level() {
        let c = heat_capacity(&two_level(), 1.0, &[0.0], &Constants::default()).unwrap();
        let p = p_excited();
        assert!((c.variance_route - p * (1.0 - p)).abs() < 1e-14);
        assert!((c.value - 0.196612).abs() < 1e-6);
        let hot = heat_capacity(&two_level(), 1e-6, &[0.0], &Constants::default()).unwrap();
        assert!(hot.value < 1e-12 && hot.value >= 0.0);
    }

    #[test]
    fn hellmann_feynman_pure_detects_crossing() {
        let fam = OperatorFamily::linear("H", HermitianOperator::zeros(2), vec![HermitianOperator::pauli_x()])
            .unwrap();
        let opts = CheckOptions::default();
        assert!(matches!(
            hellmann_feynman_pure(&fam, 1, &[0.0], 0, &opts),
            Err(Error::LevelCrossing { .. })
        ));
        let r = hellmann_feynman_pure(&fam, 1, &[0.5], 0, &opts).unwrap();
        assert!(r.pass && (r.rhs - 1.0).abs() < 1e-12, "{r:?}");
    }
}
