//! Return-value distributions: the maximum event size over a return period of
//! `factor` sample periods, omnidirectionally and per 45° octant.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::cases::{CaseSpec, DirectionSampler};
use crate::error::{Error, Result};
use crate::gpd;
use crate::mcmc::PosteriorDraws;
use crate::mle::CoefficientState;
use crate::{par, rng};

pub const DEFAULT_FACTOR: f64 = 10.0;
pub const DEFAULT_REPLICATES: usize = 1000;
/// Central percentile reported for return values.
pub const CENTRAL_PERCENTILE: f64 = 0.375;
/// State resamples allowed per replicate before giving up.
const MAX_STATE_RETRIES: usize = 1000;

/// The omnidirectional sector or one of eight octants `[c − 22.5°, c + 22.5°)`
/// centred on `c = 0°, 45°, …, 315°`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sector {
    Omni,
    N,
    NE,
    E,
    SE,
    S,
    SW,
    W,
    NW,
}

impl Sector {
    /// Omni first, then octants clockwise from north.
    pub const ALL: [Sector; 9] = [
        Sector::Omni,
        Sector::N,
        Sector::NE,
        Sector::E,
        Sector::SE,
        Sector::S,
        Sector::SW,
        Sector::W,
        Sector::NW,
    ];

    pub const OCTANTS: [Sector; 8] = [
        Sector::N,
        Sector::NE,
        Sector::E,
        Sector::SE,
        Sector::S,
        Sector::SW,
        Sector::W,
        Sector::NW,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Sector::Omni => "omni",
            Sector::N => "N",
            Sector::NE => "NE",
            Sector::E => "E",
            Sector::SE => "SE",
            Sector::S => "S",
            Sector::SW => "SW",
            Sector::W => "W",
            Sector::NW => "NW",
        }
    }

    /// Position in [`Sector::ALL`].
    pub fn index(self) -> usize {
        Sector::ALL.iter().position(|&s| s == self).unwrap()
    }

    /// Octant centre in degrees; `None` for omni.
    pub fn centre(self) -> Option<f64> {
        match self {
            Sector::Omni => None,
            s => Some(45.0 * (s.index() - 1) as f64),
        }
    }

    /// The octant containing `angle` (degrees, any real).
    pub fn octant_of(angle: f64) -> Sector {
        let shifted = (angle + 22.5).rem_euclid(360.0);
        let k = ((shifted / 45.0).floor() as usize).min(7);
        Sector::OCTANTS[k]
    }

    pub fn contains(self, angle: f64) -> bool {
        self == Sector::Omni || Sector::octant_of(angle) == self
    }
}

impl fmt::Display for Sector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Sector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Sector::ALL
            .iter()
            .copied()
            .find(|x| x.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown sector '{s}'")))
    }
}

/// Sorted replicate values for one sector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    pub sector: Sector,
    values: Vec<f64>,
}

impl EmpiricalDistribution {
    /// Sorts `values`; rejects NaN.
    pub fn new(sector: Sector, mut values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Contract("NaN in empirical distribution".into()));
        }
        values.sort_by(f64::total_cmp);
        Ok(EmpiricalDistribution { sector, values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn replicates(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Right-continuous ECDF `#{v ≤ x}/n`.
    pub fn ecdf(&self, x: f64) -> f64 {
        self.values.partition_point(|&v| v <= x) as f64 / self.values.len() as f64
    }
}

/// Order-statistic quantile with linear interpolation between ranks:
/// position `(n − 1)q` in the sorted values.
pub fn percentile(dist: &EmpiricalDistribution, q: f64) -> Result<f64> {
    if dist.is_empty() {
        return Err(Error::Contract(format!("percentile of empty {} distribution", dist.sector)));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("percentile level {q} outside [0, 1]")));
    }
    let v = dist.values();
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    Ok(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

/// Where each replicate's GP parameters come from.
#[derive(Clone, Copy, Debug)]
pub enum ParamSource<'a> {
    Truth(&'a CaseSpec),
    Draws {
        draws: &'a PosteriorDraws,
        xi_spec: &'a BasisSpec,
        nu_spec: &'a BasisSpec,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReturnControls {
    /// Return period in sample periods.
    pub factor: f64,
    pub replicates: usize,
}

impl Default for ReturnControls {
    fn default() -> Self {
        ReturnControls {
            factor: DEFAULT_FACTOR,
            replicates: DEFAULT_REPLICATES,
        }
    }
}

/// Per-replicate sector maxima, in replicate order, indexed by
/// [`Sector::index`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReturnValues {
    pub maxima: Vec<[f64; 9]>,
    /// Parameter states redrawn because an event fell where the drawn state
    /// was infeasible.
    pub state_resamples: usize,
}

impl ReturnValues {
    pub fn sector_values(&self, sector: Sector) -> Vec<f64> {
        let k = sector.index();
        self.maxima.iter().map(|m| m[k]).collect()
    }

    pub fn distribution(&self, sector: Sector) -> EmpiricalDistribution {
        EmpiricalDistribution::new(sector, self.sector_values(sector)).expect("maxima are never NaN")
    }

    /// All nine sector distributions in [`Sector::ALL`] order.
    pub fn distributions(&self) -> Vec<EmpiricalDistribution> {
        Sector::ALL.iter().map(|&s| self.distribution(s)).collect()
    }
}

struct Replicate {
    maxima: [f64; 9],
    resamples: usize,
}

fn simulate_replicate<R: Rng>(
    source: &ParamSource<'_>,
    dirs: &DirectionSampler,
    poisson: Option<&Poisson<f64>>,
    rng: &mut R,
) -> Result<Replicate> {
    let count = poisson.map_or(0, |p| p.sample(rng) as usize);
    let mut scratch = Vec::new();
    let mut resamples = 0;
    'state: loop {
        let state: Option<&CoefficientState> = match source {
            ParamSource::Truth(_) => None,
            ParamSource::Draws { draws, .. } => Some(&draws.states[rng.random_range(0..draws.states.len())]),
        };
        let mut maxima = [0.0f64; 9];
        for _ in 0..count {
            let theta = dirs.sample(rng);
            let (xi, sigma) = match (source, state) {
                (ParamSource::Truth(spec), _) => (spec.shape_at(theta), spec.scale_at(theta)),
                (ParamSource::Draws { xi_spec, nu_spec, .. }, Some(st)) => {
                    let xi = xi_spec.curve_at(theta, &st.beta_xi, &mut scratch);
                    let nu = nu_spec.curve_at(theta, &st.beta_nu, &mut scratch);
                    if !gpd::params_valid(xi, nu) {
                        resamples += 1;
                        if resamples > MAX_STATE_RETRIES {
                            return Err(Error::Numeric(format!(
                                "no feasible parameter state after {MAX_STATE_RETRIES} redraws"
                            )));
                        }
                        continue 'state;
                    }
                    (xi, nu / (1.0 + xi))
                }
                (ParamSource::Draws { .. }, None) => unreachable!(),
            };
            let y = gpd::quantile_unchecked(xi, sigma, rng.random::<f64>());
            let k = Sector::octant_of(theta).index();
            if y > maxima[k] {
                maxima[k] = y;
            }
        }
        maxima[0] = maxima[1..].iter().copied().fold(0.0, f64::max);
        return Ok(Replicate { maxima, resamples });
    }
}

/// Simulate `replicates` return periods. Each replicate draws one parameter
/// state (uniformly from the draws, or the truth), `K ~ Poisson(factor·∫ρ)`
/// events with directions from `ρ`, and records the maximum size per sector
/// (0 for a sector with no events). Replicate `r` uses its own stream of
/// `seed`.
pub fn simulate_return_distribution(
    source: ParamSource<'_>,
    rate: &CaseSpec,
    controls: &ReturnControls,
    seed: u64,
) -> Result<ReturnValues> {
    if controls.replicates == 0 {
        return Err(Error::Config("replicates must be at least 1".into()));
    }
    if !(controls.factor >= 0.0 && controls.factor.is_finite()) {
        return Err(Error::Config(format!("return period factor {} must be non-negative", controls.factor)));
    }
    if let ParamSource::Draws { draws, xi_spec, nu_spec } = &source {
        if draws.is_empty() {
            return Err(Error::Contract("no parameter draws to simulate from".into()));
        }
        for st in &draws.states {
            if st.beta_xi.len() != xi_spec.p || st.beta_nu.len() != nu_spec.p {
                return Err(Error::Contract("draw dimensions do not match the basis specs".into()));
            }
        }
    }
    let dirs = DirectionSampler::new(rate)?;
    let mean = controls.factor * dirs.total();
    let poisson = if mean > 0.0 {
        Some(Poisson::new(mean).map_err(|e| Error::Numeric(format!("Poisson({mean}): {e}")))?)
    } else {
        None
    };
    let reps = par::map_indexed(controls.replicates, |r| {
        let mut rng = rng::stream(seed, &[0xE7, r as u64]);
        simulate_replicate(&source, &dirs, poisson.as_ref(), &mut rng)
    });
    let mut maxima = Vec::with_capacity(reps.len());
    let mut state_resamples = 0;
    for rep in reps {
        let rep = rep?;
        state_resamples += rep.resamples;
        maxima.push(rep.maxima);
    }
    Ok(ReturnValues { maxima, state_resamples })
}
