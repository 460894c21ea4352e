#![allow(dead_code)]

use nalgebra::DMatrix;
use qstat_core::{matrix_function, CMatrix, HermitianOperator, C64};

/// `(M + M†)/2` for `M` filled row-major from `values` (real, imaginary pairs).
pub fn hermitian(dim: usize, values: &[f64]) -> HermitianOperator {
    let m = DMatrix::from_fn(dim, dim, |i, j| {
        let k = 2 * (i * dim + j);
        C64::new(values[k], values[k + 1])
    });
    let adjoint = m.adjoint();
    HermitianOperator::new((m + adjoint).unscale(2.0)).unwrap()
}

/// `exp(iH)` built from the eigenbasis of `H`.
pub fn unitary(h: &HermitianOperator) -> CMatrix {
    let d = h.eigh().unwrap();
    let v = d.eigenvectors();
    let phases = nalgebra::DVector::from_iterator(
        d.dim(),
        d.eigenvalues().iter().map(|&e| C64::from_polar(1.0, e)),
    );
    v * CMatrix::from_diagonal(&phases) * v.adjoint()
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn exp_op(h: &HermitianOperator) -> HermitianOperator {
    matrix_function(h, f64::exp).unwrap()
}
