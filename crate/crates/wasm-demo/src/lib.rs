//! Browser bindings: thermal curves with a finite-difference heat-capacity
//! check, spin precession with its Ehrenfest residual, and a two-constraint
//! MaxEnt solve for free fermions.
//!
//! Each operation is a plain function returning a serializable struct; the
//! `*_json` wrappers are what the page calls.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use serde::Serialize;
use wasm_bindgen::prelude::*;

use qstat_core::dynamics::uniform_grid;
use qstat_core::identity::heat_capacity;
use qstat_core::{
    build_canonical, ehrenfest_check, evolve, expectation, solve, Constants, DensityMatrix, Error,
    EvolutionSetup, Hamiltonian, HermitianOperator, MaxEntProblem, ModelSpec, Stepper, TimeObservable, C64,
};

#[derive(Debug, Serialize)]
pub struct ThermalCurves {
    pub beta: Vec<f64>,
    pub energy: Vec<f64>,
    pub entropy: Vec<f64>,
    pub free_energy: Vec<f64>,
    /// `β² Var(H)`.
    pub heat_capacity: Vec<f64>,
    /// `−β² d⟨H⟩/dβ` by finite differences.
    pub heat_capacity_fd: Vec<f64>,
    pub max_abs_gap: f64,
}

/// Canonical thermodynamics of `model` at `n` log-spaced β in `[beta_min, beta_max]`.
pub fn thermal_curves(model: &ModelSpec, lambda: f64, beta_min: f64, beta_max: f64, n: usize) -> Result<ThermalCurves, Error> {
    if !(beta_min > 0.0 && beta_max > beta_min) || !(2..=2000).contains(&n) {
        return Err(Error::InvalidParameter("need 0 < beta_min < beta_max and 2 <= n <= 2000".into()));
    }
    let family = model.instantiate(0)?.hamiltonian;
    let h = family.at(&[lambda])?;
    let ratio = (beta_max / beta_min).ln() / (n - 1) as f64;
    let mut out = ThermalCurves {
        beta: Vec::with_capacity(n),
        energy: Vec::with_capacity(n),
        entropy: Vec::with_capacity(n),
        free_energy: Vec::with_capacity(n),
        heat_capacity: Vec::with_capacity(n),
        heat_capacity_fd: Vec::with_capacity(n),
        max_abs_gap: 0.0,
    };
    for i in 0..n {
        let beta = beta_min * (ratio * i as f64).exp();
        let (rho, thermo) = build_canonical(&family, beta, &[lambda])?;
        let c = heat_capacity(&family, beta, &[lambda], &Constants::default())?;
        out.beta.push(beta);
        out.energy.push(expectation(&h, &rho)?);
        out.entropy.push(thermo.entropy);
        out.free_energy.push(-thermo.log_partition / beta);
        out.heat_capacity.push(c.variance_route);
        out.heat_capacity_fd.push(c.derivative_route);
        out.max_abs_gap = out.max_abs_gap.max((c.variance_route - c.derivative_route).abs());
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct Precession {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    /// Largest Ehrenfest residual over X, Y and Z.
    pub ehrenfest_max: f64,
    pub purity_drift: f64,
}

/// Spin-½ in the field `H = ½(b_z σ_z + b_x σ_x)`, starting from `|↑⟩`.
pub fn precession(bz: f64, bx: f64, t_end: f64, steps: usize) -> Result<Precession, Error> {
    if !(t_end > 0.0) || !(2..=200_000).contains(&steps) {
        return Err(Error::InvalidParameter("need t_end > 0 and 2 <= steps <= 200000".into()));
    }
    let h = HermitianOperator::pauli_z()
        .scale(0.5 * bz)
        .add_scaled(0.5 * bx, &HermitianOperator::pauli_x())?;
    let up = DensityMatrix::pure(&[C64::new(1.0, 0.0), C64::new(0.0, 0.0)])?;
    let setup = EvolutionSetup::new(Hamiltonian::Static(h), up, uniform_grid(0.0, t_end, steps + 1), Stepper::Exact)?;
    let states = evolve(&setup)?;
    let paulis = [
        ("X", HermitianOperator::pauli_x()),
        ("Y", HermitianOperator::pauli_y()),
        ("Z", HermitianOperator::pauli_z()),
    ];
    let mut series: [Vec<f64>; 3] = Default::default();
    let (mut worst, mut drift) = (0.0f64, 0.0f64);
    for (k, (name, op)) in paulis.iter().enumerate() {
        series[k] = states.iter().map(|s| expectation(op, s)).collect::<Result<_, _>>()?;
        // Tolerance is infinite here: the page plots the residual instead of rejecting coarse grids.
        let r = ehrenfest_check(&setup, &states, &TimeObservable::constant(*name, op.clone()), f64::INFINITY)?;
        worst = worst.max(r.max_residual);
        drift = drift.max(r.purity_drift);
    }
    let [x, y, z] = series;
    Ok(Precession {
        t: setup.t_grid.clone(),
        x,
        y,
        z,
        ehrenfest_max: worst,
        purity_drift: drift,
    })
}

#[derive(Debug, Serialize)]
pub struct FermionFit {
    pub beta: f64,
    pub mu: f64,
    pub occupations: Vec<f64>,
    pub residual_norms: Vec<f64>,
    pub entropy: f64,
}

/// Infers `(β, μ)` for non-interacting modes from `⟨H⟩` and `⟨N⟩`.
pub fn fermion_maxent(energies: &[f64], mean_energy: f64, mean_number: f64) -> Result<FermionFit, Error> {
    let model = ModelSpec::FermionicModes {
        energies: energies.to_vec(),
        interaction: 0.0,
    }
    .instantiate(0)?;
    let h = model.hamiltonian.at(&[0.0])?;
    let n = model.number.clone().expect("fermionic modes define N");
    let problem = MaxEntProblem::new(vec![h, n], vec![mean_energy, mean_number])?;
    let sol = solve(&problem)?;
    let beta = sol.alpha[0];
    let mu = if beta != 0.0 { -sol.alpha[1] / beta } else { f64::NAN };
    let occupations = energies
        .iter()
        .map(|e| 1.0 / ((sol.alpha[0] * e + sol.alpha[1]).exp() + 1.0))
        .collect();
    Ok(FermionFit {
        beta,
        mu,
        occupations,
        residual_norms: sol.trace.iterates.iter().map(|i| i.residual_norm).collect(),
        entropy: sol.entropy,
    })
}

fn to_js<T: Serialize>(r: Result<T, Error>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn thermal_curves_json(model_json: &str, lambda: f64, beta_min: f64, beta_max: f64, n: usize) -> Result<String, JsError> {
    let model: ModelSpec = serde_json::from_str(model_json).map_err(|e| JsError::new(&e.to_string()))?;
    to_js(thermal_curves(&model, lambda, beta_min, beta_max, n))
}

#[wasm_bindgen]
pub fn precession_json(bz: f64, bx: f64, t_end: f64, steps: usize) -> Result<String, JsError> {
    to_js(precession(bz, bx, t_end, steps))
}

#[wasm_bindgen]
pub fn fermion_maxent_json(energies: &[f64], mean_energy: f64, mean_number: f64) -> Result<String, JsError> {
    to_js(fermion_maxent(energies, mean_energy, mean_number))
}
