use qstat_core::dynamics::uniform_grid;
use qstat_core::{
    ehrenfest_check, evolve, CMatrix, DensityMatrix, EvolutionSetup, Hamiltonian, HermitianOperator, Stepper,
    TimeObservable, C64,
};

fn plus_state() -> DensityMatrix {
    let s = 1.0 / 2f64.sqrt();
    DensityMatrix::pure(&[C64::new(s, 0.0), C64::new(s, 0.0)]).unwrap()
}

fn driven() -> Hamiltonian {
    Hamiltonian::driven(2, |t| {
        HermitianOperator::pauli_z()
            .add_scaled(t.cos(), &HermitianOperator::pauli_x())
            .unwrap()
    })
}

fn final_state(ham: Hamiltonian, steps: usize) -> CMatrix {
    let setup = EvolutionSetup::new(ham, plus_state(), uniform_grid(0.0, 2.0, steps + 1), Stepper::Midpoint).unwrap();
    evolve(&setup).unwrap().pop().unwrap().matrix().clone()
}

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

#[test]
fn midpoint_propagator_is_second_order() {
    let reference = final_state(driven(), 1 << 14);
    let coarse = max_abs(&(final_state(driven(), 200) - &reference));
    let fine = max_abs(&(final_state(driven(), 400) - &reference));
    let order = (coarse / fine).log2();
    assert!((1.8..=2.2).contains(&order), "order {order}");
}

#[test]
fn midpoint_matches_exact_for_static_hamiltonian() {
    let h = HermitianOperator::from_real(nalgebra::DMatrix::from_row_slice(2, 2, &[0.3, 0.8, 0.8, -1.1])).unwrap();
    let grid = uniform_grid(0.0, 3.0, 301);
    let exact = EvolutionSetup::new(Hamiltonian::Static(h.clone()), plus_state(), grid.clone(), Stepper::Exact).unwrap();
    let mid = EvolutionSetup::new(Hamiltonian::Static(h), plus_state(), grid, Stepper::Midpoint).unwrap();
    for (a, b) in evolve(&exact).unwrap().iter().zip(evolve(&mid).unwrap().iter()) {
        assert!(max_abs(&(a.matrix() - b.matrix())) < 1e-12);
    }
}

fn precession_residual(dt: f64) -> (f64, f64) {
    let n = (std::f64::consts::TAU / dt).round() as usize + 1;
    let setup = EvolutionSetup::new(
        Hamiltonian::Static(HermitianOperator::pauli_z()),
        plus_state(),
        uniform_grid(0.0, std::f64::consts::TAU, n),
        Stepper::Exact,
    )
    .unwrap();
    let states = evolve(&setup).unwrap();
    let x = TimeObservable::constant("X", HermitianOperator::pauli_x());
    let r = ehrenfest_check(&setup, &states, &x, 1e-6).unwrap();
    (r.max_residual, r.purity_drift)
}

#[test]
fn ehrenfest_residual_halves_quadratically() {
    let (coarse, drift) = precession_residual(1e-3);
    let (fine, _) = precession_residual(5e-4);
    assert!(coarse <= 1e-6, "{coarse}");
    assert!(drift <= 1e-9);
    let ratio = coarse / fine;
    assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn driven_ehrenfest_with_midpoint_trajectory() {
    let setup = EvolutionSetup::new(driven(), plus_state(), uniform_grid(0.0, 2.0, 4001), Stepper::Midpoint).unwrap();
    let states = evolve(&setup).unwrap();
    for name in ["X", "Y", "Z"] {
        let op = match name {
            "X" => HermitianOperator::pauli_x(),
            "Y" => HermitianOperator::pauli_y(),
            _ => HermitianOperator::pauli_z(),
        };
        let r = ehrenfest_check(&setup, &states, &TimeObservable::constant(name, op), 1e-5).unwrap();
        assert!(r.max_residual < 1e-5, "{name}: {}", r.max_residual);
    }
}
