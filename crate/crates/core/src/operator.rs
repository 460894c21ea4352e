//! Dense Hermitian operator algebra.
//!
//! Every observable is a dense complex matrix checked for Hermiticity at
//! construction. Matrix functions (exponential, logarithm, powers) all go
//! through a single spectral route `V f(Λ) V†`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;

/// Default bound on `max |A - A†|` accepted at construction.
pub const HERMITICITY_TOL: f64 = 1e-12;

/// Relative scale of the eigenvalue floor used by logarithm-type functions.
pub const EIGEN_FLOOR_REL: f64 = 1e-14;

const EIGEN_MAX_ITER: usize = 10_000;

pub(crate) fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

fn check_square(m: &CMatrix) -> Result<usize> {
    let (r, c) = m.shape();
    if r != c {
        return Err(Error::Shape {
            context: "operator must be square",
            expected: r,
            actual: c,
        });
    }
    if r == 0 {
        return Err(Error::Shape {
            context: "operator dimension must be positive",
            expected: 1,
            actual: 0,
        });
    }
    Ok(r)
}

pub(crate) fn check_same_dim(context: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape {
            context,
            expected: a,
            actual: b,
        });
    }
    Ok(())
}

/// A dense Hermitian matrix.
///
/// The stored matrix is the Hermitian part `(A + A†)/2` of the input, so
/// downstream spectral routines see an exactly Hermitian array.
#[derive(Clone, PartialEq)]
pub struct HermitianOperator {
    matrix: CMatrix,
}

impl fmt::Debug for HermitianOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HermitianOperator")
            .field("dim", &self.dim())
            .field("matrix", &self.matrix)
            .finish()
    }
}

impl AsRef<CMatrix> for HermitianOperator {
    fn as_ref(&self) -> &CMatrix {
        &self.matrix
    }
}

impl HermitianOperator {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        Self::with_tolerance(matrix, HERMITICITY_TOL)
    }

    pub fn with_tolerance(matrix: CMatrix, tol: f64) -> Result<Self> {
        check_square(&matrix)?;
        let adjoint = matrix.adjoint();
        let deviation = max_abs(&(&matrix - &adjoint));
        if !(deviation <= tol) {
            return Err(Error::NotHermitian { deviation, tol });
        }
        let matrix = (matrix + adjoint).unscale(2.0);
        Ok(Self { matrix })
    }

    /// Wraps a matrix known to be Hermitian by construction (sums, real
    /// scalings and spectral reconstructions of Hermitian operators).
    pub(crate) fn from_hermitian_unchecked(matrix: CMatrix) -> Self {
        let adjoint = matrix.adjoint();
        Self {
            matrix: (matrix + adjoint).unscale(2.0),
        }
    }

    pub fn from_real(matrix: DMatrix<f64>) -> Result<Self> {
        Self::new(matrix.map(|x| C64::new(x, 0.0)))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        assert!(!diag.is_empty(), "operator dimension must be positive");
        let d = DVector::from_iterator(diag.len(), diag.iter().map(|&x| C64::new(x, 0.0)));
        Self {
            matrix: CMatrix::from_diagonal(&d),
        }
    }

    pub fn identity(dim: usize) -> Self {
        assert!(dim > 0, "operator dimension must be positive");
        Self {
            matrix: CMatrix::identity(dim, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "operator dimension must be positive");
        Self {
            matrix: CMatrix::zeros(dim, dim),
        }
    }

    /// Projector `|ψ⟩⟨ψ|` onto the normalized state vector.
    pub fn projector(state: &[C64]) -> Result<Self> {
        let v = DVector::from_column_slice(state);
        let norm = v.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidParameter("state vector must be nonzero".into()));
        }
        let v = v.unscale(norm);
        Ok(Self::from_hermitian_unchecked(&v * v.adjoint()))
    }

    pub fn pauli_x() -> Self {
        let z = C64::new(0.0, 0.0);
        let o = C64::new(1.0, 0.0);
        Self {
            matrix: CMatrix::from_row_slice(2, 2, &[z, o, o, z]),
        }
    }

    pub fn pauli_y() -> Self {
        let z = C64::new(0.0, 0.0);
        let i = C64::new(0.0, 1.0);
        Self {
            matrix: CMatrix::from_row_slice(2, 2, &[z, -i, i, z]),
        }
    }

    pub fn pauli_z() -> Self {
        Self::from_diagonal(&[1.0, -1.0])
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn max_norm(&self) -> f64 {
        max_abs(&self.matrix)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            matrix: self.matrix.scale(c),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_same_dim("operator sum", self.dim(), other.dim())?;
        Ok(Self {
            matrix: &self.matrix + &other.matrix,
        })
    }

    /// `self + c·other`.
    pub fn add_scaled(&self, c: f64, other: &Self) -> Result<Self> {
        check_same_dim("operator sum", self.dim(), other.dim())?;
        Ok(Self {
            matrix: &self.matrix + other.matrix.scale(c),
        })
    }

    /// `self + c·I`.
    pub fn shift(&self, c: f64) -> Self {
        let mut matrix = self.matrix.clone();
        for i in 0..self.dim() {
            matrix[(i, i)] += C64::new(c, 0.0);
        }
        Self { matrix }
    }

    pub fn square(&self) -> Self {
        Self::from_hermitian_unchecked(&self.matrix * &self.matrix)
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    /// Unitary conjugation `U A U†`.
    pub fn conjugate_by(&self, unitary: &CMatrix) -> Result<Self> {
        check_same_dim("unitary conjugation", self.dim(), unitary.nrows())?;
        Ok(Self::from_hermitian_unchecked(
            unitary * &self.matrix * unitary.adjoint(),
        ))
    }

    /// Spectral decomposition with ascending eigenvalues.
    pub fn eigh(&self) -> Result<SpectralDecomposition> {
        spectral_decompose(self)
    }
}

/// Eigenvalues (ascending) and an orthonormal eigenbasis stored as columns.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralDecomposition {
    eigenvalues: DVector<f64>,
    eigenvectors: CMatrix,
}

impl SpectralDecomposition {
    /// Assembles a decomposition from parts; the caller guarantees that
    /// `eigenvectors` is unitary.
    pub fn from_parts(eigenvalues: DVector<f64>, eigenvectors: CMatrix) -> Result<Self> {
        check_same_dim("eigenvector count", eigenvalues.len(), eigenvectors.ncols())?;
        check_same_dim("eigenvector length", eigenvalues.len(), eigenvectors.nrows())?;
        Ok(Self {
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &CMatrix {
        &self.eigenvectors
    }

    pub fn eigenvector(&self, n: usize) -> DVector<C64> {
        self.eigenvectors.column(n).into_owned()
    }

    /// `V f(Λ) V†` for a real function of the spectrum.
    pub fn apply<F: Fn(f64) -> f64>(&self, f: F) -> Result<HermitianOperator> {
        let values: Vec<f64> = self.eigenvalues.iter().map(|&x| f(x)).collect();
        let bad: Vec<f64> = self
            .eigenvalues
            .iter()
            .zip(&values)
            .filter(|(_, fx)| !fx.is_finite())
            .map(|(&x, _)| x)
            .collect();
        if !bad.is_empty() {
            return Err(Error::Domain { eigenvalues: bad });
        }
        Ok(self.reconstruct_with(&values))
    }

    pub(crate) fn reconstruct_with(&self, values: &[f64]) -> HermitianOperator {
        let mut scaled = self.eigenvectors.clone();
        for (j, &fx) in values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(fx);
        }
        HermitianOperator::from_hermitian_unchecked(&scaled * self.eigenvectors.adjoint())
    }

    /// `max |A - V Λ V†|`.
    pub fn reconstruction_residual(&self, a: &HermitianOperator) -> f64 {
        let rebuilt = self.reconstruct_with(self.eigenvalues.as_slice());
        max_abs(&(a.matrix() - rebuilt.matrix()))
    }

    /// `max |V† V - I|`.
    pub fn unitarity_residual(&self) -> f64 {
        let n = self.dim();
        let gram = self.eigenvectors.adjoint() * &self.eigenvectors;
        max_abs(&(gram - CMatrix::identity(n, n)))
    }

    /// `V† A V`, the operator expressed in this eigenbasis.
    pub fn to_eigenbasis(&self, a: &CMatrix) -> CMatrix {
        self.eigenvectors.adjoint() * a * &self.eigenvectors
    }
}

/// Fixes the phase of each column so its first non-negligible component is
/// real and positive.
fn normalize_phases(vectors: &mut CMatrix) {
    for mut col in vectors.column_iter_mut() {
        let scale = col.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
        let pivot = col.iter().copied().find(|z| z.norm() > 1e-8 * scale);
        if let Some(p) = pivot {
            let phase = p.conj() / p.norm();
            for z in col.iter_mut() {
                *z *= phase;
            }
        }
    }
}

fn first_pivot_index(col: &[C64]) -> usize {
    let scale = col.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
    col.iter()
        .position(|z| z.norm() > 1e-8 * scale)
        .unwrap_or(col.len())
}

pub fn spectral_decompose(a: &HermitianOperator) -> Result<SpectralDecomposition> {
    let n = a.dim();
    let eig = SymmetricEigen::try_new(a.matrix().clone(), f64::EPSILON, EIGEN_MAX_ITER)
        .ok_or_else(|| Error::Eigensolver {
            what: format!("{n}x{n} operator with max-norm {:e}", a.max_norm()),
        })?;

    let mut order: Vec<usize> = (0..n).collect();
    let pivots: Vec<usize> = (0..n)
        .map(|j| first_pivot_index(eig.eigenvectors.column(j).as_slice()))
        .collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[i]
            .total_cmp(&eig.eigenvalues[j])
            .then(pivots[i].cmp(&pivots[j]))
    });

    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    normalize_phases(&mut eigenvectors);

    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// `f(A)` through the spectral decomposition.
pub fn matrix_function<F: Fn(f64) -> f64>(a: &HermitianOperator, f: F) -> Result<HermitianOperator> {
    spectral_decompose(a)?.apply(f)
}

pub fn matrix_exp(a: &HermitianOperator) -> Result<HermitianOperator> {
    matrix_function(a, f64::exp)
}

/// Matrix logarithm; eigenvalues at or below `1e-14·max eigenvalue` are
/// rejected.
pub fn matrix_log(a: &HermitianOperator) -> Result<HermitianOperator> {
    let decomp = spectral_decompose(a)?;
    let top = decomp.eigenvalues().max();
    let floor = EIGEN_FLOOR_REL * top.max(0.0);
    let bad: Vec<f64> = decomp
        .eigenvalues()
        .iter()
        .copied()
        .filter(|&x| x <= floor)
        .collect();
    if !bad.is_empty() {
        return Err(Error::Domain { eigenvalues: bad });
    }
    decomp.apply(f64::ln)
}

/// `Tr(AB) = Σ_ij A_ij B_ji`.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> Result<C64> {
    check_same_dim("trace product", a.nrows(), b.nrows())?;
    check_same_dim("trace product", a.ncols(), b.ncols())?;
    let n = a.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    Ok(acc)
}

/// `AB - BA` (anti-Hermitian when both arguments are Hermitian).
pub fn commutator(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    check_same_dim("commutator", a.nrows(), b.nrows())?;
    Ok(a * b - b * a)
}

pub fn anticommutator(a: &HermitianOperator, b: &HermitianOperator) -> Result<HermitianOperator> {
    check_same_dim("anticommutator", a.dim(), b.dim())?;
    let (a, b) = (a.matrix(), b.matrix());
    Ok(HermitianOperator::from_hermitian_unchecked(a * b + b * a))
}

/// Whether `max |[A, B]| <= tol`.
pub fn is_compatible(a: &CMatrix, b: &CMatrix, tol: f64) -> Result<bool> {
    Ok(max_abs(&commutator(a, b)?) <= tol)
}

/// Compatibility test with the tolerance scaled by the operator magnitudes,
/// since commutator roundoff grows with `|A|·|B|`.
pub(crate) fn commutator_norm_scaled(a: &CMatrix, b: &CMatrix) -> Result<(f64, f64)> {
    let norm = max_abs(&commutator(a, b)?);
    let scale = (max_abs(a) * max_abs(b)).max(1.0);
    Ok((norm, scale))
}

type Generator = dyn Fn(&[f64]) -> HermitianOperator + Send + Sync;
type Derivative = dyn Fn(&[f64], usize) -> HermitianOperator + Send + Sync;

/// A Hermitian operator depending smoothly on a vector of parameters `λ`.
#[derive(Clone)]
pub struct OperatorFamily {
    name: String,
    dim: usize,
    n_params: usize,
    generator: Arc<Generator>,
    derivative: Option<Arc<Derivative>>,
}

impl fmt::Debug for OperatorFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorFamily")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("n_params", &self.n_params)
            .field("analytic_derivative", &self.derivative.is_some())
            .finish()
    }
}

impl OperatorFamily {
    pub fn new<G>(name: impl Into<String>, dim: usize, n_params: usize, generator: G) -> Self
    where
        G: Fn(&[f64]) -> HermitianOperator + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            dim,
            n_params,
            generator: Arc::new(generator),
            derivative: None,
        }
    }

    pub fn with_derivative<D>(mut self, derivative: D) -> Self
    where
        D: Fn(&[f64], usize) -> HermitianOperator + Send + Sync + 'static,
    {
        self.derivative = Some(Arc::new(derivative));
        self
    }

    /// A parameter-independent family.
    pub fn constant(name: impl Into<String>, op: HermitianOperator, n_params: usize) -> Self {
        let dim = op.dim();
        let zero = HermitianOperator::zeros(dim);
        let op = Arc::new(op);
        Self::new(name, dim, n_params, move |_| (*op).clone())
            .with_derivative(move |_, _| zero.clone())
    }

    /// `H(λ) = H₀ + Σ_i λ_i V_i`, with exact derivatives `V_i`.
    pub fn linear(
        name: impl Into<String>,
        base: HermitianOperator,
        perturbations: Vec<HermitianOperator>,
    ) -> Result<Self> {
        for v in &perturbations {
            check_same_dim("linear family perturbation", base.dim(), v.dim())?;
        }
        let dim = base.dim();
        let n_params = perturbations.len();
        let perturbations = Arc::new(perturbations);
        let gen_perts = Arc::clone(&perturbations);
        Ok(Self::new(name, dim, n_params, move |lambda| {
            let mut m = base.matrix().clone();
            for (l, v) in lambda.iter().zip(gen_perts.iter()) {
                m += v.matrix().scale(*l);
            }
            HermitianOperator::from_hermitian_unchecked(m)
        })
        .with_derivative(move |_, i| perturbations[i].clone()))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn has_analytic_derivative(&self) -> bool {
        self.derivative.is_some()
    }

    fn check_params(&self, lambda: &[f64]) -> Result<()> {
        check_same_dim("parameter vector length", self.n_params, lambda.len())
    }

    pub fn at(&self, lambda: &[f64]) -> Result<HermitianOperator> {
        self.check_params(lambda)?;
        let op = (self.generator)(lambda);
        check_same_dim("family dimension", self.dim, op.dim())?;
        Ok(op)
    }

    /// `∂F/∂λ_index`, analytic when declared, else a Richardson-extrapolated
    /// central difference.
    pub fn derivative(&self, lambda: &[f64], index: usize) -> Result<HermitianOperator> {
        self.check_params(lambda)?;
        if index >= self.n_params {
            return Err(Error::UnknownParameter(format!(
                "lambda[{index}] of family {}",
                self.name
            )));
        }
        match &self.derivative {
            Some(d) => Ok(d(lambda, index)),
            None => self.finite_difference_derivative(lambda, index),
        }
    }

    pub fn finite_difference_derivative(
        &self,
        lambda: &[f64],
        index: usize,
    ) -> Result<HermitianOperator> {
        self.check_params(lambda)?;
        let h = 1e-3 * lambda[index].abs().max(1.0);
        let eval = |t: f64| {
            let mut shifted = lambda.to_vec();
            shifted[index] += t;
            (self.generator)(&shifted).into_matrix()
        };
        let d1 = (eval(h) - eval(-h)).unscale(2.0 * h);
        let d2 = (eval(h / 2.0) - eval(-h / 2.0)).unscale(h);
        Ok(HermitianOperator::from_hermitian_unchecked(
            (d2.scale(4.0) - d1).unscale(3.0),
        ))
    }

    /// Maximum relative mismatch between the analytic derivative and central
    /// differences at `lambda`, over all parameter indices.
    pub fn derivative_mismatch(&self, lambda: &[f64]) -> Result<f64> {
        let mut worst = 0.0_f64;
        for i in 0..self.n_params {
            let analytic = self.derivative(lambda, i)?;
            let numeric = self.finite_difference_derivative(lambda, i)?;
            let diff = max_abs(&(analytic.matrix() - numeric.matrix()));
            worst = worst.max(diff / analytic.max_norm().max(1.0));
        }
        Ok(worst)
    }

    /// `F(λ)²` with the product-rule derivative `F F' + F' F`.
    pub fn squared(&self) -> Self {
        let base = self.clone();
        let deriv = self.clone();
        Self::new(format!("{}^2", self.name), self.dim, self.n_params, move |l| {
            (base.generator)(l).square()
        })
        .with_derivative(move |l, i| {
            let f = (deriv.generator)(l);
            let df = deriv
                .derivative(l, i)
                .expect("parameter index validated by caller");
            anticommutator(&f, &df).expect("family dimensions agree")
        })
    }

    /// `c·F(λ)`.
    pub fn scaled(&self, c: f64) -> Self {
        let base = self.clone();
        let deriv = self.clone();
        Self::new(format!("{c}*{}", self.name), self.dim, self.n_params, move |l| {
            (base.generator)(l).scale(c)
        })
        .with_derivative(move |l, i| {
            deriv
                .derivative(l, i)
                .expect("parameter index validated by caller")
                .scale(c)
        })
    }

    /// `F(λ) + c·I`.
    pub fn shifted(&self, c: f64) -> Self {
        let base = self.clone();
        let deriv = self.clone();
        Self::new(format!("{}+{c}", self.name), self.dim, self.n_params, move |l| {
            (base.generator)(l).shift(c)
        })
        .with_derivative(move |l, i| {
            deriv
                .derivative(l, i)
                .expect("parameter index validated by caller")
        })
    }

    /// Renames the family, keeping generator and derivative.
    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn rejects_non_hermitian() {
        let m = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        assert!(matches!(
            HermitianOperator::new(m),
            Err(Error::NotHermitian { .. })
        ));
    }

    #[test]
    fn rejects_non_square() {
        let m = CMatrix::zeros(2, 3);
        assert!(matches!(HermitianOperator::new(m), Err(Error::Shape { .. })));
    }

    #[test]
    fn diagonal_spectrum_sorted_with_permutation_vectors() {
        let a = HermitianOperator::from_diagonal(&[3.0, 1.0, 2.0]);
        let d = a.eigh().unwrap();
        assert_eq!(d.eigenvalues().as_slice(), &[1.0, 2.0, 3.0]);
        let v = d.eigenvectors();
        assert!((v[(1, 0)] - c(1.0, 0.0)).norm() < 1e-14);
        assert!((v[(2, 1)] - c(1.0, 0.0)).norm() < 1e-14);
        assert!((v[(0, 2)] - c(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn identity_spectrum() {
        let a = HermitianOperator::identity(4);
        let d = a.eigh().unwrap();
        assert!(d.eigenvalues().iter().all(|&x| (x - 1.0).abs() < 1e-15));
        assert!(d.reconstruction_residual(&a) < 1e-15);
    }

    #[test]
    fn pauli_x_spectrum() {
        let d = HermitianOperator::pauli_x().eigh().unwrap();
        assert!((d.eigenvalues()[0] + 1.0).abs() < 1e-14);
        assert!((d.eigenvalues()[1] - 1.0).abs() < 1e-14);
        // phase convention: first component real positive
        for j in 0..2 {
            let v0 = d.eigenvectors()[(0, j)];
            assert!(v0.re > 0.0 && v0.im.abs() < 1e-15);
        }
    }

    #[test]
    fn exp_of_zero_and_diagonal() {
        let e = matrix_exp(&HermitianOperator::zeros(3)).unwrap();
        assert!(max_abs(&(e.matrix() - CMatrix::identity(3, 3))) < 1e-15);

        let e = matrix_exp(&HermitianOperator::from_diagonal(&[2f64.ln(), 3f64.ln()])).unwrap();
        assert!((e.matrix()[(0, 0)].re - 2.0).abs() < 1e-14);
        assert!((e.matrix()[(1, 1)].re - 3.0).abs() < 1e-14);
    }

    #[test]
    fn log_rejects_singular() {
        let a = HermitianOperator::from_diagonal(&[1.0, 0.0]);
        match matrix_log(&a) {
            Err(Error::Domain { eigenvalues }) => assert_eq!(eigenvalues, vec![0.0]),
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn trace_products() {
        let i2 = HermitianOperator::identity(2);
        let b = HermitianOperator::pauli_z().shift(3.0);
        assert_eq!(trace_product(i2.matrix(), b.matrix()).unwrap(), c(6.0, 0.0));
        let a = HermitianOperator::from_diagonal(&[1.0, 2.0]);
        let b = HermitianOperator::from_diagonal(&[3.0, 4.0]);
        assert_eq!(trace_product(a.matrix(), b.matrix()).unwrap(), c(11.0, 0.0));
        assert!(trace_product(a.matrix(), &CMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn pauli_commutator() {
        let x = HermitianOperator::pauli_x();
        let z = HermitianOperator::pauli_z();
        let y = HermitianOperator::pauli_y();
        let comm = commutator(x.matrix(), z.matrix()).unwrap();
        let expected = y.matrix().map(|v| v * c(0.0, -2.0));
        assert!(max_abs(&(comm - expected)) < 1e-15);
        assert!(!is_compatible(x.matrix(), z.matrix(), 1e-10).unwrap());
        assert!(is_compatible(x.matrix(), &CMatrix::identity(2, 2), 1e-14).unwrap());
    }

    #[test]
    fn diagonal_operators_commute() {
        let a = HermitianOperator::from_diagonal(&[1.0, 2.0]);
        let b = HermitianOperator::from_diagonal(&[-5.0, 0.25]);
        let comm = commutator(a.matrix(), b.matrix()).unwrap();
        assert_eq!(max_abs(&comm), 0.0);
        assert_eq!(max_abs(&commutator(a.matrix(), a.matrix()).unwrap()), 0.0);
    }

    #[test]
    fn anticommutator_of_paulis_vanishes() {
        let ac = anticommutator(&HermitianOperator::pauli_x(), &HermitianOperator::pauli_z()).unwrap();
        assert!(ac.max_norm() < 1e-15);
    }

    #[test]
    fn linear_family_derivative_matches_fd() {
        let h0 = HermitianOperator::from_diagonal(&[0.0, 1.0, 2.0]);
        let v = HermitianOperator::from_real(DMatrix::from_row_slice(
            3,
            3,
            &[0.0, 1.0, 0.0, 1.0, 0.0, 2.0, 0.0, 2.0, 0.0],
        ))
        .unwrap();
        let fam = OperatorFamily::linear("H", h0, vec![v]).unwrap();
        assert!(fam.derivative_mismatch(&[0.7]).unwrap() < 1e-6);
        let sq = fam.squared();
        assert!(sq.derivative_mismatch(&[0.7]).unwrap() < 1e-6);
        assert!(fam.at(&[0.0, 1.0]).is_err());
        assert!(matches!(
            fam.derivative(&[0.0], 3),
            Err(Error::UnknownParameter(_))
        ));
    }
}
