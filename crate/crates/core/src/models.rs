//! Parametric model systems.
//!
//! Every model carries a single perturbation parameter `λ` entering its
//! Hamiltonian linearly, so `∂H/∂λ` is available exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{HermitianOperator, OperatorFamily, C64};
use nalgebra::DMatrix;

pub const MAX_DIM: usize = 4096;

fn one() -> f64 {
    1.0
}

fn twenty() -> usize {
    20
}

fn default_energies() -> Vec<f64> {
    vec![1.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `H = diag(0, ε) + λ σx`.
    TwoLevel {
        #[serde(default = "one")]
        epsilon: f64,
    },
    /// `H = (ω + λ)(n̂ [+ ½])` on the lowest `dim` levels.
    TruncatedOscillator {
        #[serde(default = "twenty")]
        dim: usize,
        #[serde(default = "one")]
        omega: f64,
        #[serde(default)]
        zero_point: bool,
    },
    /// `H = ω n̂ + λ g x̂` with `x̂ = (a + a†)/√2`, truncated.
    PerturbedOscillator {
        #[serde(default = "twenty")]
        dim: usize,
        #[serde(default = "one")]
        omega: f64,
        #[serde(default = "one")]
        coupling: f64,
    },
    /// `H = −J Σ Z_i Z_{i+1} − Σ (h_i + λ) X_i`, open boundary unless
    /// `periodic`; `h_i = h + disorder·u_i` with `u_i` uniform in `[−1, 1]`.
    TransverseSpinChain {
        sites: usize,
        #[serde(default = "one")]
        coupling: f64,
        #[serde(default = "one")]
        field: f64,
        #[serde(default)]
        disorder: f64,
        #[serde(default)]
        periodic: bool,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// `H = Σ ε_i n_i + λ U Σ n_i n_{i+1}` on the occupation basis.
    FermionicModes {
        #[serde(default = "default_energies")]
        energies: Vec<f64>,
        #[serde(default = "one")]
        interaction: f64,
    },
}

impl ModelSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::TwoLevel { .. } => "two-level",
            Self::TruncatedOscillator { .. } => "truncated-oscillator",
            Self::PerturbedOscillator { .. } => "perturbed-oscillator",
            Self::TransverseSpinChain { .. } => "transverse-spin-chain",
            Self::FermionicModes { .. } => "fermionic-modes",
        }
    }

    pub fn dim(&self) -> Result<usize> {
        let d = match self {
            Self::TwoLevel { .. } => 2,
            Self::TruncatedOscillator { dim, .. } | Self::PerturbedOscillator { dim, .. } => *dim,
            Self::TransverseSpinChain { sites, .. } => pow2(*sites)?,
            Self::FermionicModes { energies, .. } => pow2(energies.len())?,
        };
        if d == 0 || d > MAX_DIM {
            return Err(Error::Model(format!(
                "{}: dimension {d} outside 1..={MAX_DIM}",
                self.kind()
            )));
        }
        Ok(d)
    }

    pub fn has_number_operator(&self) -> bool {
        matches!(self, Self::FermionicModes { .. })
    }

    /// Builds the model; `seed` is used for randomized variants that do not
    /// carry their own.
    pub fn instantiate(&self, seed: u64) -> Result<Model> {
        let dim = self.dim()?;
        let finite = |name: &str, x: f64| {
            if x.is_finite() {
                Ok(())
            } else {
                Err(Error::Model(format!("{}: {name} must be finite", self.kind())))
            }
        };
        let model = match self {
            Self::TwoLevel { epsilon } => {
                finite("epsilon", *epsilon)?;
                let h = OperatorFamily::linear(
                    "H",
                    HermitianOperator::from_diagonal(&[0.0, *epsilon]),
                    vec![HermitianOperator::pauli_x()],
                )?;
                Model::new(self.kind(), h, None).with_dynamics(vec![
                    ("X".into(), HermitianOperator::pauli_x()),
                    ("Y".into(), HermitianOperator::pauli_y()),
                    ("Z".into(), HermitianOperator::pauli_z()),
                ])
            }
            Self::TruncatedOscillator { omega, zero_point, .. } => {
                finite("omega", *omega)?;
                let shift = if *zero_point { 0.5 } else { 0.0 };
                let levels: Vec<f64> = (0..dim).map(|n| n as f64 + shift).collect();
                let n_op = HermitianOperator::from_diagonal(&levels);
                let h = OperatorFamily::linear("H", n_op.scale(*omega), vec![n_op.clone()])?;
                Model::new(self.kind(), h, None).with_dynamics(vec![
                    ("n".into(), number_operator(dim)),
                    ("x".into(), position(dim)),
                ])
            }
            Self::PerturbedOscillator { omega, coupling, .. } => {
                finite("omega", *omega)?;
                finite("coupling", *coupling)?;
                let h = OperatorFamily::linear(
                    "H",
                    number_operator(dim).scale(*omega),
                    vec![position(dim).scale(*coupling)],
                )?;
                Model::new(self.kind(), h, None).with_dynamics(vec![
                    ("n".into(), number_operator(dim)),
                    ("x".into(), position(dim)),
                ])
            }
            Self::TransverseSpinChain {
                sites,
                coupling,
                field,
                disorder,
                periodic,
                seed: own_seed,
            } => {
                finite("coupling", *coupling)?;
                finite("field", *field)?;
                finite("disorder", *disorder)?;
                let mut rng = ChaCha8Rng::seed_from_u64(own_seed.unwrap_or(seed));
                let fields: Vec<f64> = (0..*sites)
                    .map(|_| field + disorder * rng.random_range(-1.0..=1.0))
                    .collect();
                spin_chain(self.kind(), *sites, *coupling, &fields, *periodic)?
            }
            Self::FermionicModes {
                energies,
                interaction,
            } => {
                if energies.is_empty() {
                    return Err(Error::Model("fermionic-modes: at least one mode is required".into()));
                }
                for e in energies {
                    finite("energies", *e)?;
                }
                finite("interaction", *interaction)?;
                fermionic(self.kind(), energies, *interaction)
            }
        };
        Ok(model)
    }
}

fn pow2(n: usize) -> Result<usize> {
    if n == 0 || n > 12 {
        return Err(Error::Model(format!("{n} sites/modes gives a dimension outside 2..={MAX_DIM}")));
    }
    Ok(1 << n)
}

/// `diag(0, 1, …, dim−1)`.
pub fn number_operator(dim: usize) -> HermitianOperator {
    let levels: Vec<f64> = (0..dim).map(|n| n as f64).collect();
    HermitianOperator::from_diagonal(&levels)
}

/// Truncated `(a + a†)/√2`.
pub fn position(dim: usize) -> HermitianOperator {
    let m = DMatrix::from_fn(dim, dim, |i, j| {
        if j == i + 1 || i == j + 1 {
            ((i.max(j)) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    HermitianOperator::from_real(m).expect("tridiagonal symmetric matrix")
}

/// `σ` acting on site `site` of an `n`-site chain (site 0 is the most
/// significant tensor factor).
fn site_operator(op: &HermitianOperator, site: usize, n: usize) -> HermitianOperator {
    let mut m = nalgebra::DMatrix::<C64>::identity(1, 1);
    for k in 0..n {
        let factor = if k == site {
            op.matrix().clone()
        } else {
            nalgebra::DMatrix::<C64>::identity(2, 2)
        };
        m = m.kronecker(&factor);
    }
    HermitianOperator::new(m).expect("tensor product of Hermitian factors")
}

fn spin_chain(kind: &'static str, n: usize, coupling: f64, fields: &[f64], periodic: bool) -> Result<Model> {
    let dim = 1usize << n;
    let xs: Vec<HermitianOperator> = (0..n).map(|i| site_operator(&HermitianOperator::pauli_x(), i, n)).collect();
    let zs: Vec<HermitianOperator> = (0..n).map(|i| site_operator(&HermitianOperator::pauli_z(), i, n)).collect();
    let mut base = HermitianOperator::zeros(dim);
    let bonds = if periodic && n > 2 { n } else { n.saturating_sub(1) };
    for i in 0..bonds {
        let j = (i + 1) % n;
        let zz = HermitianOperator::new(zs[i].matrix() * zs[j].matrix())?;
        base = base.add_scaled(-coupling, &zz)?;
    }
    let mut mx = HermitianOperator::zeros(dim);
    let mut mz = HermitianOperator::zeros(dim);
    for i in 0..n {
        base = base.add_scaled(-fields[i], &xs[i])?;
        mx = mx.add(&xs[i])?;
        mz = mz.add(&zs[i])?;
    }
    let h = OperatorFamily::linear("H", base, vec![mx.scale(-1.0)])?;
    let mut dynamics = vec![("Mx".to_string(), mx), ("Mz".to_string(), mz)];
    for (i, (x, z)) in xs.into_iter().zip(zs).enumerate() {
        dynamics.push((format!("X{i}"), x));
        dynamics.push((format!("Z{i}"), z));
    }
    Ok(Model::new(kind, h, None).with_dynamics(dynamics))
}

fn fermionic(kind: &'static str, energies: &[f64], interaction: f64) -> Model {
    let modes = energies.len();
    let dim = 1usize << modes;
    let occ = |b: usize, i: usize| ((b >> i) & 1) as f64;
    let onsite: Vec<f64> = (0..dim)
        .map(|b| (0..modes).map(|i| energies[i] * occ(b, i)).sum())
        .collect();
    let pairs: Vec<f64> = (0..dim)
        .map(|b| interaction * (0..modes.saturating_sub(1)).map(|i| occ(b, i) * occ(b, i + 1)).sum::<f64>())
        .collect();
    let total: Vec<f64> = (0..dim).map(|b| (0..modes).map(|i| occ(b, i)).sum()).collect();
    let number = HermitianOperator::from_diagonal(&total);
    let h = OperatorFamily::linear(
        "H",
        HermitianOperator::from_diagonal(&onsite),
        vec![HermitianOperator::from_diagonal(&pairs)],
    )
    .expect("diagonal operators share a dimension");
    let mut dynamics = vec![("N".to_string(), number.clone())];
    for i in 0..modes {
        let n_i: Vec<f64> = (0..dim).map(|b| occ(b, i)).collect();
        dynamics.push((format!("n{i}"), HermitianOperator::from_diagonal(&n_i)));
    }
    Model::new(kind, h, Some(number)).with_dynamics(dynamics)
}

/// An instantiated model.
#[derive(Clone, Debug)]
pub struct Model {
    pub kind: &'static str,
    pub hamiltonian: OperatorFamily,
    pub number: Option<HermitianOperator>,
    /// Observables commuting with every ensemble of the model, for
    /// fluctuation-dissipation checks: `I`, `H`, `H2` and `N` when defined.
    pub observables: Vec<OperatorFamily>,
    /// Operators for time evolution; these need not commute with `H`.
    pub dynamics_observables: Vec<(String, HermitianOperator)>,
}

impl Model {
    fn new(kind: &'static str, hamiltonian: OperatorFamily, number: Option<HermitianOperator>) -> Self {
        let dim = hamiltonian.dim();
        let n_params = hamiltonian.n_params();
        let mut observables = vec![
            OperatorFamily::constant("I", HermitianOperator::identity(dim), n_params),
            hamiltonian.clone(),
            hamiltonian.squared().named("H2"),
        ];
        if let Some(n) = &number {
            observables.push(OperatorFamily::constant("N", n.clone(), n_params));
        }
        Self {
            kind,
            hamiltonian,
            number,
            observables,
            dynamics_observables: Vec::new(),
        }
    }

    fn with_dynamics(mut self, ops: Vec<(String, HermitianOperator)>) -> Self {
        self.dynamics_observables = ops;
        self
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub fn n_lambda(&self) -> usize {
        self.hamiltonian.n_params()
    }

    pub fn observable(&self, name: &str) -> Option<&OperatorFamily> {
        self.observables.iter().find(|o| o.name() == name)
    }

    pub fn dynamics_observable(&self, name: &str) -> Option<&HermitianOperator> {
        self.dynamics_observables
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, op)| op)
    }
}
