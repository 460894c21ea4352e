//! Adaptive Gauss-Kronrod quadrature and free-energy differences by
//! thermodynamic integration.

// Rule constants are kept at their published precision.
#![allow(clippy::excessive_precision)]

use serde::{Deserialize, Serialize};

use crate::ensemble::{build_canonical, build_ensemble, build_grand_canonical, EnsembleSpec};
use crate::error::{Error, Result};
use crate::identity::expectation;
use crate::operator::{HermitianOperator, OperatorFamily};

// 15-point Kronrod abscissae (non-negative half) and weights; the 7-point
// Gauss rule uses the odd-indexed abscissae.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureOptions {
    /// Absolute tolerance on the summed error estimate.
    pub tol: f64,
    pub max_subintervals: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_subintervals: 200,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
    pub subintervals: usize,
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn gk15<F>(f: &F, a: f64, b: f64) -> Result<Segment>
where
    F: Fn(f64) -> Result<f64>,
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center)?;
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for (j, (&x, &w)) in XGK[..7].iter().zip(&WGK[..7]).enumerate() {
        let dx = half * x;
        let pair = f(center - dx)? + f(center + dx)?;
        kronrod += w * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    Ok(Segment {
        a,
        b,
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
    })
}

/// Globally adaptive 15-point Gauss-Kronrod integration of `f` on `[a, b]`.
///
/// The interval with the largest error estimate is bisected until the summed
/// estimate falls below `tol`.
pub fn integrate<F>(f: F, a: f64, b: f64, opts: &QuadratureOptions) -> Result<QuadratureResult>
where
    F: Fn(f64) -> Result<f64>,
{
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidParameter("integration limits must be finite".into()));
    }
    if a == b {
        return Ok(QuadratureResult {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
            subintervals: 0,
        });
    }
    let mut segments = vec![gk15(&f, a, b)?];
    let mut evaluations = 15;
    loop {
        let error: f64 = segments.iter().map(|s| s.error).sum();
        if error <= opts.tol {
            let value = segments.iter().map(|s| s.value).sum();
            return Ok(QuadratureResult {
                value,
                error,
                evaluations,
                subintervals: segments.len(),
            });
        }
        if segments.len() >= opts.max_subintervals {
            return Err(Error::Quadrature {
                tol: opts.tol,
                limit: opts.max_subintervals,
                estimate: error,
            });
        }
        let worst = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let seg = segments.swap_remove(worst);
        let mid = 0.5 * (seg.a + seg.b);
        segments.push(gk15(&f, seg.a, mid)?);
        segments.push(gk15(&f, mid, seg.b)?);
        evaluations += 30;
    }
}

/// A free-energy difference by quadrature, with the endpoint value for
/// comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyDifference {
    /// `∫ ⟨∂H/∂λ⟩ dλ`.
    pub integrated: f64,
    /// `−(1/β)[ln Z(λ_max) − ln Z(λ_min)]`.
    pub endpoint: f64,
    pub quadrature_error: f64,
    pub evaluations: usize,
}

impl FreeEnergyDifference {
    pub fn discrepancy(&self) -> f64 {
        (self.integrated - self.endpoint).abs()
    }
}

fn path_point(base: &[f64], index: usize, value: f64) -> Result<Vec<f64>> {
    if index >= base.len() {
        return Err(Error::UnknownParameter(format!("lambda[{index}]")));
    }
    let mut lambda = base.to_vec();
    lambda[index] = value;
    Ok(lambda)
}

fn integrate_path(
    spec_at: impl Fn(&[f64]) -> Result<EnsembleSpec>,
    hamiltonian: &OperatorFamily,
    base: &[f64],
    index: usize,
    range: (f64, f64),
    opts: &QuadratureOptions,
) -> Result<QuadratureResult> {
    integrate(
        |x| {
            let lambda = path_point(base, index, x)?;
            let ens = build_ensemble(&spec_at(&lambda)?)?;
            expectation(&hamiltonian.derivative(&lambda, index)?, &ens.rho)
        },
        range.0,
        range.1,
        opts,
    )
}

/// Canonical `ΔF` along `λ_index ∈ [λ_min, λ_max]`, other components held at
/// `base`.
pub fn thermodynamic_integration(
    hamiltonian: &OperatorFamily,
    beta: f64,
    base: &[f64],
    index: usize,
    range: (f64, f64),
    opts: &QuadratureOptions,
) -> Result<FreeEnergyDifference> {
    let (_, lo) = build_canonical(hamiltonian, beta, &path_point(base, index, range.0)?)?;
    let (_, hi) = build_canonical(hamiltonian, beta, &path_point(base, index, range.1)?)?;
    let q = integrate_path(
        |l| EnsembleSpec::canonical(hamiltonian.clone(), beta, l.to_vec()),
        hamiltonian,
        base,
        index,
        range,
        opts,
    )?;
    Ok(FreeEnergyDifference {
        integrated: q.value,
        endpoint: -(hi.log_partition - lo.log_partition) / beta,
        quadrature_error: q.error,
        evaluations: q.evaluations,
    })
}

/// Grand-canonical `ΔΦ` at fixed `(β, μ)`.
#[allow(clippy::too_many_arguments)]
pub fn grand_thermodynamic_integration(
    hamiltonian: &OperatorFamily,
    number: &HermitianOperator,
    beta: f64,
    mu: f64,
    base: &[f64],
    index: usize,
    range: (f64, f64),
    opts: &QuadratureOptions,
) -> Result<FreeEnergyDifference> {
    let (_, lo) = build_grand_canonical(hamiltonian, number, beta, mu, &path_point(base, index, range.0)?)?;
    let (_, hi) = build_grand_canonical(hamiltonian, number, beta, mu, &path_point(base, index, range.1)?)?;
    let q = integrate_path(
        |l| EnsembleSpec::grand_canonical(hamiltonian.clone(), number.clone(), beta, mu, l.to_vec()),
        hamiltonian,
        base,
        index,
        range,
        opts,
    )?;
    Ok(FreeEnergyDifference {
        integrated: q.value,
        endpoint: -(hi.log_partition - lo.log_partition) / beta,
        quadrature_error: q.error,
        evaluations: q.evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_and_transcendentals() {
        let opts = QuadratureOptions::default();
        let r = integrate(|x| Ok(x.powi(5) - 2.0 * x), -1.0, 2.0, &opts).unwrap();
        assert!((r.value - (64.0 - 1.0) / 6.0 + 3.0).abs() < 1e-12);
        let r = integrate(|x| Ok(x.exp()), 0.0, 1.0, &opts).unwrap();
        assert!((r.value - (1f64.exp() - 1.0)).abs() < 1e-13);
        let r = integrate(|x| Ok(x.sqrt()), 0.0, 1.0, &opts).unwrap();
        assert!((r.value - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn reversed_and_empty_intervals() {
        let opts = QuadratureOptions::default();
        assert_eq!(integrate(Ok, 1.0, 1.0, &opts).unwrap().value, 0.0);
        let r = integrate(Ok, 1.0, 0.0, &opts).unwrap();
        assert!((r.value + 0.5).abs() < 1e-15);
    }

    #[test]
    fn refinement_limit() {
        let opts = QuadratureOptions {
            tol: 1e-14,
            max_subintervals: 3,
        };
        assert!(matches!(
            integrate(|x: f64| Ok(x.abs().sqrt()), -1.0, 1.0, &opts),
            Err(Error::Quadrature { .. })
        ));
    }

    #[test]
    fn constant_family_has_no_free_energy_change() {
        let h = OperatorFamily::constant("H", HermitianOperator::from_diagonal(&[0.0, 1.0]), 1);
        let d = thermodynamic_integration(&h, 1.0, &[0.0], 0, (0.0, 1.0), &QuadratureOptions::default()).unwrap();
        assert_eq!(d.integrated, 0.0);
        assert!(d.endpoint.abs() < 1e-15);
    }

    #[test]
    fn identity_shift_is_exact() {
        let c = 0.7;
        let h = OperatorFamily::linear(
            "H",
            HermitianOperator::from_diagonal(&[0.0, 1.0, 2.5]),
            vec![HermitianOperator::identity(3).scale(c)],
        )
        .unwrap();
        let d = thermodynamic_integration(&h, 2.0, &[0.0], 0, (-0.5, 1.5), &QuadratureOptions::default()).unwrap();
        assert!((d.integrated - 2.0 * c).abs() < 1e-13);
        assert!((d.endpoint - 2.0 * c).abs() < 1e-13);
    }
}
