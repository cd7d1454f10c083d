//! Distances between empirical distributions and MCMC efficiency measures.

use crate::error::{Error, Result};
use crate::mcmc::{DrawSource, PosteriorDraws};
use crate::retval::EmpiricalDistribution;

pub const KL_GRID_SIZE: usize = 1000;
pub const KL_DENSITY_FLOOR: f64 = 1e-12;
/// Returned in place of an infinite divergence.
pub const KL_CAP: f64 = 1e6;
/// Shortest chain accepted by [`effective_sample_size`].
pub const MIN_CHAIN: usize = 10;

fn nonempty(f0: &EmpiricalDistribution, f1: &EmpiricalDistribution) -> Result<()> {
    if f0.is_empty() || f1.is_empty() {
        return Err(Error::Contract("distance between empty distributions".into()));
    }
    Ok(())
}

/// `sup_x |F̂₁(x) − F̂₀(x)|` over right-continuous step ECDFs.
pub fn ks_distance(f0: &EmpiricalDistribution, f1: &EmpiricalDistribution) -> Result<f64> {
    nonempty(f0, f1)?;
    let (a, b) = (f0.values(), f1.values());
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut best = 0.0f64;
    // The supremum is attained just after a jump; advance both samples past
    // each pooled value before comparing.
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(best)
}

/// `∫(F̂₁ − F̂₀)² dF̂₀`: the mean over the points of `f0` of the squared ECDF
/// difference. Not symmetric.
pub fn cvm_distance(f0: &EmpiricalDistribution, f1: &EmpiricalDistribution) -> Result<f64> {
    nonempty(f0, f1)?;
    let v = f0.values();
    Ok(v.iter()
        .map(|&x| {
            let d = f1.ecdf(x) - f0.ecdf(x);
            d * d
        })
        .sum::<f64>()
        / v.len() as f64)
}

/// Piecewise-linear CDF through `(v₍ᵢ₎, i/(n−1))` over sorted `v` with at least
/// two distinct values: 0 below the minimum, 1 from the maximum on. Ties take
/// the top of their block, so the curve stays continuous.
fn interpolated_cdf(v: &[f64], x: f64) -> f64 {
    let n = v.len();
    let j = v.partition_point(|&u| u <= x);
    if j == 0 {
        return 0.0;
    }
    if j == n {
        return 1.0;
    }
    let (x0, x1) = (v[j - 1], v[j]);
    let (p0, p1) = ((j - 1) as f64 / (n - 1) as f64, j as f64 / (n - 1) as f64);
    p0 + (p1 - p0) * (x - x0) / (x1 - x0)
}

fn single_atom(f: &EmpiricalDistribution) -> Option<f64> {
    let v = f.values();
    (v[0] == v[v.len() - 1]).then_some(v[0])
}

/// `Σ f₀ log(f₀/f₁) Δx` with both densities projected onto `grid_size` equally
/// spaced nodes spanning the range of `f₀`: each ECDF is linearly interpolated
/// between its order statistics, evaluated at the nodes and differenced, and
/// the cell densities are floored at [`KL_DENSITY_FLOOR`]. The integrand
/// vanishes where `f₀` does, so the grid needs only `f₀`'s support; `f₁`'s
/// mass outside it still counts through its unnormalised cell densities.
/// A pooled grid would let one far outlier in `f₁` collapse both densities
/// into a single cell. Capped at
/// [`KL_CAP`]; a single-atom input gives 0 against the same atom and the cap
/// otherwise.
pub fn kl_divergence(f0: &EmpiricalDistribution, f1: &EmpiricalDistribution, grid_size: usize) -> Result<f64> {
    nonempty(f0, f1)?;
    if grid_size < 16 {
        return Err(Error::Contract(format!("KL grid needs at least 16 nodes, got {grid_size}")));
    }
    match (single_atom(f0), single_atom(f1)) {
        (Some(a), Some(b)) => return Ok(if a == b { 0.0 } else { KL_CAP }),
        (Some(_), None) | (None, Some(_)) => return Ok(KL_CAP),
        (None, None) => {}
    }
    let lo = f0.values()[0];
    let hi = f0.values()[f0.replicates() - 1];
    let cells = grid_size - 1;
    let dx = (hi - lo) / cells as f64;
    let density = |f: &EmpiricalDistribution| {
        let cdf: Vec<f64> = (0..grid_size)
            .map(|k| interpolated_cdf(f.values(), if k == cells { hi } else { lo + k as f64 * dx }))
            .collect();
        cdf.windows(2)
            .map(|w| ((w[1] - w[0]) / dx).max(KL_DENSITY_FLOOR))
            .collect::<Vec<_>>()
    };
    let (d0, d1) = (density(f0), density(f1));
    let kl: f64 = d0.iter().zip(&d1).map(|(&p, &q)| p * (p / q).ln() * dx).sum();
    Ok(if kl.is_nan() { KL_CAP } else { kl.min(KL_CAP) })
}

/// `m / (1 + 2Σc_k)` with autocorrelations truncated by Geyer's initial
/// positive sequence: pairs `c_{2j} + c_{2j+1}` are summed while positive.
/// Lags are computed on demand up to `m/2`. A constant chain returns `m`.
pub fn effective_sample_size(chain: &[f64]) -> Result<f64> {
    let m = chain.len();
    if m < MIN_CHAIN {
        return Err(Error::Contract(format!("ESS needs at least {MIN_CHAIN} values, got {m}")));
    }
    let mean = chain.iter().sum::<f64>() / m as f64;
    let centred: Vec<f64> = chain.iter().map(|x| x - mean).collect();
    let autocov = |k: usize| centred[..m - k].iter().zip(&centred[k..]).map(|(a, b)| a * b).sum::<f64>() / m as f64;
    let c0 = autocov(0);
    let magnitude = chain.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    // Variance at rounding level of the values: treat as constant.
    if c0 <= (16.0 * f64::EPSILON * magnitude).powi(2) {
        return Ok(m as f64);
    }
    let max_lag = m / 2;
    // τ = −1 + 2 Σ_j Γ_j with Γ_j = ρ_{2j} + ρ_{2j+1}, ρ_0 = 1.
    let mut tau = -1.0;
    let mut j = 0;
    while 2 * j < max_lag {
        let gamma = (autocov(2 * j) + autocov(2 * j + 1)) / c0;
        if gamma <= 0.0 {
            break;
        }
        tau += 2.0 * gamma;
        j += 1;
    }
    let ess = m as f64 / tau;
    Ok(if ess.is_finite() && ess > 0.0 { ess.min(m as f64) } else { f64::MIN_POSITIVE })
}

/// Scalar summaries monitored for ESS: every coefficient of both blocks and
/// both roughness coefficients, one chain per summary.
pub fn monitored_chains(draws: &PosteriorDraws) -> Vec<Vec<f64>> {
    let Some(first) = draws.states.first() else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for k in 0..first.beta_xi.len() {
        out.push(draws.states.iter().map(|s| s.beta_xi[k]).collect());
    }
    for k in 0..first.beta_nu.len() {
        out.push(draws.states.iter().map(|s| s.beta_nu[k]).collect());
    }
    out.push(draws.states.iter().map(|s| s.lambda_xi).collect());
    out.push(draws.states.iter().map(|s| s.lambda_nu).collect());
    out
}

/// ESS of a draw set: the minimum over monitored summaries for MCMC, the
/// number of resamples for the bootstrap.
pub fn draws_ess(draws: &PosteriorDraws) -> Result<f64> {
    match draws.source {
        DrawSource::Bootstrap => Ok(draws.len() as f64),
        DrawSource::Mcmc => monitored_chains(draws)
            .iter()
            .map(|c| effective_sample_size(c))
            .try_fold(f64::INFINITY, |acc, e| e.map(|e| acc.min(e))),
    }
}

/// [`draws_ess`] divided by elapsed hours.
pub fn ess_per_hour(draws: &PosteriorDraws) -> Result<f64> {
    if !(draws.elapsed_hours > 0.0) {
        return Err(Error::Contract(format!("elapsed hours {} must be positive", draws.elapsed_hours)));
    }
    Ok(draws_ess(draws)? / draws.elapsed_hours)
}
