//! Finite-dimensional quantum statistical mechanics: Hermitian operators,
//! exponential-family ensembles, fluctuation-dissipation identities,
//! maximum-entropy inference and unitary dynamics.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod fd;
pub mod identity;
pub mod integration;
pub mod maxent;
pub mod models;
pub mod operator;

use serde::{Deserialize, Serialize};

pub use ensemble::{
    build_canonical, build_ensemble, build_generalized, build_grand_canonical, entropy, DensityMatrix,
    Ensemble, EnsembleSpec, ThermoSummary,
};
pub use dynamics::{ehrenfest_check, evolve, EhrenfestReport, EvolutionSetup, Hamiltonian, Stepper, TimeObservable};
pub use error::{Error, Result};
pub use fd::{richardson, FdEstimate};
pub use identity::{
    check_identity, check_qfdt, covariance, expectation, CheckOptions, Direction, Identity, IdentityId,
    IdentityReport, ModelContext, Param, Tolerances,
};
pub use integration::{
    grand_thermodynamic_integration, integrate, thermodynamic_integration, FreeEnergyDifference,
    QuadratureOptions,
};
pub use maxent::{solve, MaxEntProblem, MaxEntSolution, SolveTrace};
pub use models::{Model, ModelSpec};
pub use operator::{
    commutator, is_compatible, matrix_exp, matrix_function, matrix_log, spectral_decompose, trace_product,
    CMatrix, HermitianOperator, OperatorFamily, SpectralDecomposition, C64,
};

/// Physical constants; the library works in units where both are one unless
/// configured otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Constants {
    pub k_boltzmann: f64,
    pub hbar: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Self {
            k_boltzmann: 1.0,
            hbar: 1.0,
        }
    }
}
