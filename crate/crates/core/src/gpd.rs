//! Generalised Pareto mathematics in the `(ξ, ν)` parameterisation, where
//! `ν = σ(1 + ξ)` makes the two parameters orthogonal in expected information.
//!
//! Per observation, with threshold 0 and `G = 1 + (ξ/ν)(1+ξ)y`:
//!
//! ```text
//! ℓ = −log(ν/(1+ξ)) − (1/ξ + 1)·log G
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this `|ξ|` the log density and shape score switch to series forms.
pub const XI_TOL: f64 = 1e-6;

/// Lower bound applied to `1 + 2ξ` when the expected information is used as
/// an optimisation or proposal metric (it is undefined for `ξ ≤ −1/2`).
pub const FISHER_FLOOR: f64 = 0.1;

/// Peaks over a zero threshold, each paired with its covariate direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeaksSample {
    pub sizes: Vec<f64>,
    pub angles: Vec<f64>,
    /// Nominal observation span the sample represents.
    pub period: f64,
}

impl PeaksSample {
    pub fn new(sizes: Vec<f64>, angles: Vec<f64>, period: f64) -> Result<Self> {
        if sizes.len() != angles.len() {
            return Err(Error::Contract(format!(
                "{} sizes but {} angles",
                sizes.len(),
                angles.len()
            )));
        }
        if let Some(i) = sizes.iter().position(|&y| !(y >= 0.0 && y.is_finite())) {
            return Err(Error::Domain(format!(
                "observation {i} has size {} (must be finite and >= 0)",
                sizes[i]
            )));
        }
        for &a in &angles {
            crate::basis::check_angle(a)?;
        }
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::Domain(format!("period {period} must be positive")));
        }
        Ok(PeaksSample {
            sizes,
            angles,
            period,
        })
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    /// Observations at `index`, in that order (repeats allowed).
    pub fn select(&self, index: &[usize]) -> PeaksSample {
        PeaksSample {
            sizes: index.iter().map(|&i| self.sizes[i]).collect(),
            angles: index.iter().map(|&i| self.angles[i]).collect(),
            period: self.period,
        }
    }
}

/// Shape and adjusted scale evaluated at each observation.
#[derive(Clone, Debug, PartialEq)]
pub struct PointwiseParams {
    pub xi: Vec<f64>,
    pub nu: Vec<f64>,
}

impl PointwiseParams {
    pub fn new(xi: Vec<f64>, nu: Vec<f64>) -> Result<Self> {
        if xi.len() != nu.len() {
            return Err(Error::Contract(format!("{} xi values but {} nu values", xi.len(), nu.len())));
        }
        Ok(PointwiseParams { xi, nu })
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    /// `ν > 0` and `1 + ξ > 0` everywhere.
    pub fn is_valid(&self) -> bool {
        self.xi
            .iter()
            .zip(&self.nu)
            .all(|(&x, &n)| params_valid(x, n))
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.xi
            .iter()
            .zip(&self.nu)
            .map(|(&x, &n)| n / (1.0 + x))
            .collect()
    }
}

#[inline]
pub fn params_valid(xi: f64, nu: f64) -> bool {
    nu > 0.0 && 1.0 + xi > 0.0 && xi.is_finite() && nu.is_finite()
}

pub fn sigma_from_nu(xi: f64, nu: f64) -> Result<f64> {
    if !(1.0 + xi > 0.0) {
        return Err(Error::Domain(format!("1 + xi = {} must be positive", 1.0 + xi)));
    }
    if !(nu > 0.0) {
        return Err(Error::Domain(format!("nu = {nu} must be positive")));
    }
    Ok(nu / (1.0 + xi))
}

/// Log density of one exceedance; `−∞` outside the support or for invalid
/// parameters.
#[inline]
pub fn log_density(y: f64, xi: f64, nu: f64) -> f64 {
    if !params_valid(xi, nu) {
        return f64::NEG_INFINITY;
    }
    let a = (1.0 + xi) * y / nu;
    let z = xi * a; // G − 1
    if z <= -1.0 {
        return f64::NEG_INFINITY;
    }
    let tail = if xi.abs() < XI_TOL {
        // (1/ξ + 1)·log1p(z) = (1+ξ)·a·(1 − z/2 + z²/3 − …)
        (1.0 + xi) * a * (1.0 - z / 2.0 + z * z / 3.0)
    } else {
        (1.0 / xi + 1.0) * z.ln_1p()
    };
    xi.ln_1p() - nu.ln() - tail
}

/// Per-observation score `(∂ℓ/∂ξ, ∂ℓ/∂ν)`, or `None` where `G ≤ 0` or the
/// parameters are invalid.
///
/// The shape derivative is `−(1+2ξ)(G−1)/(ξ²G) + 1/(1+ξ) + log(G)/ξ²`. The
/// printed appendix form carries `(1−2ξ)` in the first term and `log(G)/ξ` in
/// the last, and its `ν` derivative has the sign of the negative
/// log-likelihood; the forms here are the ones that agree with finite
/// differences of `ℓ`. For `|ξ| < XI_TOL` the shape score uses the series
/// `1/(1+ξ) − 2(1+ξ)u + ½u²(1+ξ)²(1+4ξ) − ⅔u³ξ` with `u = y/ν`, which is
/// `1 − 2u + u²/2` at `ξ = 0`.
#[inline]
pub fn score(y: f64, xi: f64, nu: f64) -> Option<(f64, f64)> {
    if !params_valid(xi, nu) {
        return None;
    }
    let u = y / nu;
    let a = (1.0 + xi) * u;
    let z = xi * a;
    if z <= -1.0 {
        return None;
    }
    let g = 1.0 + z;
    let d_xi = if xi.abs() < XI_TOL {
        let q = 1.0 + xi;
        1.0 / q - 2.0 * q * u + 0.5 * u * u * q * q * (1.0 + 4.0 * xi) - (2.0 / 3.0) * u * u * u * xi
    } else {
        let x2 = xi * xi;
        -(1.0 + 2.0 * xi) * z / (x2 * g) + 1.0 / (1.0 + xi) + z.ln_1p() / x2
    };
    // (1/ξ + 1)(G−1)/G = (1+ξ)²u/G holds for every ξ, including 0.
    let d_nu = (-1.0 + (1.0 + xi) * a / g) / nu;
    Some((d_xi, d_nu))
}

/// `−Σ ℓ_i`; `+∞` when any observation lies outside its support or any
/// parameter pair is invalid.
pub fn neg_log_likelihood(sample: &PeaksSample, params: &PointwiseParams) -> Result<f64> {
    if sample.len() != params.len() {
        return Err(Error::Contract(format!(
            "sample has {} observations but params have {}",
            sample.len(),
            params.len()
        )));
    }
    Ok(nll_slices(&sample.sizes, &params.xi, &params.nu))
}

pub(crate) fn nll_slices(y: &[f64], xi: &[f64], nu: &[f64]) -> f64 {
    let mut total = 0.0;
    for ((&y, &x), &n) in y.iter().zip(xi).zip(nu) {
        let l = log_density(y, x, n);
        if l == f64::NEG_INFINITY {
            return f64::INFINITY;
        }
        total -= l;
    }
    total
}

/// Per-observation gradients of the log-likelihood (not negated).
pub fn gradient(sample: &PeaksSample, params: &PointwiseParams) -> Result<(Vec<f64>, Vec<f64>)> {
    if sample.len() != params.len() {
        return Err(Error::Contract(format!(
            "sample has {} observations but params have {}",
            sample.len(),
            params.len()
        )));
    }
    let mut dxi = Vec::with_capacity(sample.len());
    let mut dnu = Vec::with_capacity(sample.len());
    for (i, &y) in sample.sizes.iter().enumerate() {
        let (gx, gn) = score(y, params.xi[i], params.nu[i]).ok_or_else(|| {
            Error::Domain(format!(
                "observation {i} (y = {y}) outside support at xi = {}, nu = {}",
                params.xi[i], params.nu[i]
            ))
        })?;
        dxi.push(gx);
        dnu.push(gn);
    }
    Ok((dxi, dnu))
}

/// Diagonal expected information per observation:
/// `1/(1+ξ)²` for `ξ` and `1/(ν²(1+2ξ))` for `ν`; cross terms vanish.
pub fn expected_fisher(params: &PointwiseParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut fxi = Vec::with_capacity(params.len());
    let mut fnu = Vec::with_capacity(params.len());
    for (&x, &n) in params.xi.iter().zip(&params.nu) {
        if !(1.0 + 2.0 * x > 0.0) || !(n > 0.0) {
            return Err(Error::Domain(format!(
                "expected information undefined at xi = {x}, nu = {n} (needs xi > -1/2, nu > 0)"
            )));
        }
        fxi.push(1.0 / ((1.0 + x) * (1.0 + x)));
        fnu.push(1.0 / (n * n * (1.0 + 2.0 * x)));
    }
    Ok((fxi, fnu))
}

/// Expected information with `1 + 2ξ` floored at [`FISHER_FLOOR`], for use as
/// a positive weight where `ξ` may stray below −1/2.
#[inline]
pub fn fisher_weights(xi: f64, nu: f64) -> (f64, f64) {
    let q = 1.0 + xi;
    (1.0 / (q * q), 1.0 / (nu * nu * (1.0 + 2.0 * xi).max(FISHER_FLOOR)))
}

/// Upper support endpoint `−σ/ξ` for `ξ < 0`, else `+∞`.
pub fn upper_endpoint(xi: f64, sigma: f64) -> f64 {
    if xi < 0.0 {
        -sigma / xi
    } else {
        f64::INFINITY
    }
}

/// `F(y) = 1 − (1 + ξy/σ)^(−1/ξ)`.
pub fn cdf(y: f64, xi: f64, sigma: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    let z = xi * y / sigma;
    if z <= -1.0 {
        return 1.0;
    }
    if xi.abs() < XI_TOL {
        -(-y / sigma).exp_m1()
    } else {
        -(-(z.ln_1p()) / xi).exp_m1()
    }
}

/// Inverse CDF: `(σ/ξ)((1−u)^(−ξ) − 1)`, or `−σ·log(1−u)` at `ξ = 0`.
pub fn quantile(xi: f64, sigma: f64, u: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma = {sigma} must be positive")));
    }
    if !(0.0..1.0).contains(&u) {
        return Err(Error::Domain(format!("probability {u} outside [0, 1)")));
    }
    Ok(quantile_unchecked(xi, sigma, u))
}

#[inline]
pub(crate) fn quantile_unchecked(xi: f64, sigma: f64, u: f64) -> f64 {
    let l = (-u).ln_1p(); // log(1 − u) ≤ 0
    if xi.abs() < XI_TOL {
        -sigma * l
    } else {
        sigma * (-xi * l).exp_m1() / xi
    }
}

pub fn sample_gpd<R: Rng + ?Sized>(xi: f64, sigma: f64, rng: &mut R) -> Result<f64> {
    let u: f64 = rng.random();
    quantile(xi, sigma, u)
}
