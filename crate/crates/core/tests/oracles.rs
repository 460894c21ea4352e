//! Closed-form values evaluated independently at 30 significant digits and
//! frozen here.

#![allow(clippy::excessive_precision)]

mod common;

use qstat_core::identity::{hellmann_feynman_mixed, hellmann_feynman_pure, heat_capacity};
use qstat_core::{
    build_canonical, build_grand_canonical, check_identity, expectation, solve, thermodynamic_integration,
    CheckOptions, Constants, DensityMatrix, Error, HermitianOperator, Identity, IdentityId, MaxEntProblem,
    ModelContext, ModelSpec, OperatorFamily, QuadratureOptions,
};

const P_EXCITED: f64 = 0.268941421369995120748840758178;
const BERNOULLI_VAR: f64 = 0.196611933241481852537424733586;
const TWO_LEVEL_ENTROPY: f64 = 0.582203108888217954797836253146;
const TWO_LEVEL_LNZ: f64 = 0.313261687518222834048995494968;

/// (β, ln Z, ⟨H⟩, Var H) for `H = diag(0, 1, …, 19)`.
const OSCILLATOR_20: [(f64, f64, f64, f64); 3] = [
    (0.1, 2.20675500317523175194684903696, 6.37797908978173658768446484094, 27.5105422201736803168529151508),
    (1.0, 0.458675143325928266458908686537, 0.581976665646253890646760164828, 0.920672769746339944838867595256),
    (
        10.0,
        0.0000454009603704892095044463600268,
        0.0000454019910096877683289602608438,
        0.0000454040523504754120979013177743,
    ),
];

fn two_level() -> OperatorFamily {
    ModelSpec::TwoLevel { epsilon: 1.0 }.instantiate(0).unwrap().hamiltonian
}

#[test]
fn two_level_thermodynamics() {
    let (rho, thermo) = build_canonical(&two_level(), 1.0, &[0.0]).unwrap();
    let h = HermitianOperator::from_diagonal(&[0.0, 1.0]);
    assert!((expectation(&h, &rho).unwrap() - P_EXCITED).abs() < 1e-14);
    assert!((thermo.log_partition - TWO_LEVEL_LNZ).abs() < 1e-14);
    assert!((thermo.entropy - TWO_LEVEL_ENTROPY).abs() < 1e-14);
    assert!((rho.entropy() - TWO_LEVEL_ENTROPY).abs() < 1e-14);
    let c = heat_capacity(&two_level(), 1.0, &[0.0], &Constants::default()).unwrap();
    assert!((c.value - BERNOULLI_VAR).abs() < 1e-14);
    assert!((c.derivative_route - BERNOULLI_VAR).abs() < 1e-9);
}

#[test]
fn truncated_oscillator_sums() {
    let model = ModelSpec::TruncatedOscillator {
        dim: 20,
        omega: 1.0,
        zero_point: false,
    }
    .instantiate(0)
    .unwrap();
    let h = model.hamiltonian.at(&[0.0]).unwrap();
    for (beta, ln_z, mean, var) in OSCILLATOR_20 {
        let (rho, thermo) = build_canonical(&model.hamiltonian, beta, &[0.0]).unwrap();
        assert!((thermo.log_partition - ln_z).abs() <= 1e-13 * ln_z.abs().max(1e-3), "beta {beta}");
        let m = expectation(&h, &rho).unwrap();
        assert!((m - mean).abs() <= 1e-12 * mean.max(1e-3), "beta {beta}");
        let v = qstat_core::covariance(&h, &h, &rho).unwrap();
        assert!((v - var).abs() <= 1e-11 * var.max(1e-3), "beta {beta}");
    }
}

#[test]
fn zero_point_shift_leaves_state_unchanged() {
    let plain = ModelSpec::TruncatedOscillator {
        dim: 20,
        omega: 1.0,
        zero_point: false,
    }
    .instantiate(0)
    .unwrap();
    let shifted = ModelSpec::TruncatedOscillator {
        dim: 20,
        omega: 1.0,
        zero_point: true,
    }
    .instantiate(0)
    .unwrap();
    let (a, ta) = build_canonical(&plain.hamiltonian, 1.0, &[0.0]).unwrap();
    let (b, tb) = build_canonical(&shifted.hamiltonian, 1.0, &[0.0]).unwrap();
    assert!(common::max_abs(&(a.matrix() - b.matrix())) < 1e-15);
    assert!((ta.log_partition - 0.5 - tb.log_partition).abs() < 1e-14);
}

#[test]
fn fermi_dirac_single_mode() {
    let model = ModelSpec::FermionicModes {
        energies: vec![1.0],
        interaction: 1.0,
    }
    .instantiate(0)
    .unwrap();
    let n = model.number.clone().unwrap();
    let (rho, thermo) = build_grand_canonical(&model.hamiltonian, &n, 1.0, 0.0, &[0.0]).unwrap();
    assert!((expectation(&n, &rho).unwrap() - P_EXCITED).abs() < 1e-14);
    assert_eq!(thermo.fugacity, Some(1.0));

    let ctx = ModelContext::GrandCanonical {
        hamiltonian: model.hamiltonian.clone(),
        number: n,
        beta: 1.0,
        mu: 0.0,
        lambda: vec![0.0],
    };
    let r = check_identity(Identity::new(IdentityId::T2NMu), &ctx, &CheckOptions::default()).unwrap();
    assert!(r.pass, "{r:?}");
    assert!((r.rhs - BERNOULLI_VAR).abs() < 1e-14);
    let r = check_identity(Identity::new(IdentityId::T2OneMu), &ctx, &CheckOptions::default()).unwrap();
    assert!(r.pass && (r.lhs - P_EXCITED).abs() < 1e-14, "{r:?}");
}

#[test]
fn hellmann_feynman_examples() {
    let opts = CheckOptions::default();
    // diag(0,1) + γ·diag(1,0): ground-state slope 1 at γ = 0.
    let fam = OperatorFamily::linear(
        "H",
        HermitianOperator::from_diagonal(&[0.0, 1.0]),
        vec![HermitianOperator::from_diagonal(&[1.0, 0.0])],
    )
    .unwrap();
    let r = hellmann_feynman_pure(&fam, 0, &[0.0], 0, &opts).unwrap();
    assert!(r.pass && (r.rhs - 1.0).abs() < 1e-15 && (r.lhs - 1.0).abs() < 1e-9, "{r:?}");

    let constant = OperatorFamily::constant("H", HermitianOperator::from_diagonal(&[0.0, 2.0]), 1);
    let r = hellmann_feynman_pure(&constant, 1, &[0.4], 0, &opts).unwrap();
    assert_eq!((r.lhs, r.rhs), (0.0, 0.0));

    // H₀ + γV under I/d: both sides Tr V / d.
    let v = HermitianOperator::from_real(nalgebra::DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.0, 0.5, -2.0, 0.3, 0.0, 0.3, 4.0]))
        .unwrap();
    let fam = OperatorFamily::linear("H", HermitianOperator::from_diagonal(&[0.0, 1.0, 5.0]), vec![v.clone()]).unwrap();
    let r = hellmann_feynman_mixed(&fam, &DensityMatrix::maximally_mixed(3), &[0.7], 0, &opts).unwrap();
    assert!(r.pass && (r.rhs - 1.0).abs() < 1e-14, "{r:?}");
}

#[test]
fn perturbed_oscillator_free_energy() {
    let model = ModelSpec::PerturbedOscillator {
        dim: 20,
        omega: 1.0,
        coupling: 1.0,
    }
    .instantiate(0)
    .unwrap();
    for beta in [0.1, 1.0, 10.0] {
        let d = thermodynamic_integration(&model.hamiltonian, beta, &[0.0], 0, (0.0, 1.0), &QuadratureOptions::default())
            .unwrap();
        assert!(d.discrepancy() < 1e-8, "beta {beta}: {d:?}");
    }
}

#[test]
fn fermi_dirac_maxent() {
    // One mode: H = εN, so (H, N) are linearly dependent and only the
    // combination α₁ε + α₂ is identifiable.
    let single = ModelSpec::FermionicModes {
        energies: vec![1.0],
        interaction: 0.0,
    }
    .instantiate(0)
    .unwrap();
    let h = single.hamiltonian.at(&[0.0]).unwrap();
    let n = single.number.clone().unwrap();
    let problem = MaxEntProblem::new(vec![h, n], vec![P_EXCITED, P_EXCITED]).unwrap();
    assert!(matches!(solve(&problem), Err(Error::IllPosed { .. })));

    // Two modes with distinct energies separate β from βμ.
    let pair = ModelSpec::FermionicModes {
        energies: vec![1.0, 2.0],
        interaction: 0.0,
    }
    .instantiate(0)
    .unwrap();
    let h = pair.hamiltonian.at(&[0.0]).unwrap();
    let n = pair.number.clone().unwrap();
    let (rho, _) = build_grand_canonical(&pair.hamiltonian, &n, 1.0, 0.0, &[0.0]).unwrap();
    let targets = vec![expectation(&h, &rho).unwrap(), expectation(&n, &rho).unwrap()];
    let f2 = 1.0 / (2f64.exp() + 1.0);
    assert!((targets[1] - (P_EXCITED + f2)).abs() < 1e-14);
    let sol = solve(&MaxEntProblem::new(vec![h, n], targets).unwrap()).unwrap();
    assert!((sol.alpha[0] - 1.0).abs() < 1e-10 && sol.alpha[1].abs() < 1e-10, "{:?}", sol.alpha);
}
