//! Central differences with one level of Richardson extrapolation.

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Default relative step: `h = 1e-5·max(1, |γ|)`.
pub const DEFAULT_REL_STEP: f64 = 1e-5;

pub fn default_step(gamma: f64) -> f64 {
    DEFAULT_REL_STEP * gamma.abs().max(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdEstimate {
    /// Extrapolated derivative `(4·D(h/2) − D(h))/3`.
    pub value: f64,
    /// `|value − D(h/2)|`, an estimate of the truncation error left in the
    /// un-extrapolated difference.
    pub error: f64,
    pub step: f64,
}

/// Derivative at `t = 0` of `f(t)` by central differences at `h` and `h/2`.
pub fn richardson<F>(f: F, h: f64) -> Result<FdEstimate>
where
    F: Fn(f64) -> Result<f64>,
{
    let d_full = (f(h)? - f(-h)?) / (2.0 * h);
    let d_half = (f(h / 2.0)? - f(-h / 2.0)?) / h;
    let value = (4.0 * d_half - d_full) / 3.0;
    Ok(FdEstimate {
        value,
        error: (value - d_half).abs(),
        step: h,
    })
}
