//! Synthetic truths: directional Poisson rate, GP shape and GP scale as
//! functions of direction, and simulation of peaks-over-threshold samples.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpd::{self, PeaksSample};

/// Width in degrees of the cells of the direction inverse-CDF.
pub const DIRECTION_CELL: f64 = 0.05;
/// Floor applied to the trigonometric scale curve, which touches 0 at 270°.
pub const SCALE_FLOOR: f64 = 0.01;
/// `∫₀³⁶⁰ max(sin θ + 1.1, 0) dθ`; the integrand never reaches 0, so this is
/// `1.1 × 360`.
pub const SINE_RATE_NORMALISER: f64 = 396.0;

const VALIDATION_STEP: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaseLabel {
    #[serde(rename = "case1")]
    Case1,
    #[serde(rename = "case2")]
    Case2,
    #[serde(rename = "case3")]
    Case3,
    #[serde(rename = "case4")]
    Case4,
    #[serde(rename = "case5")]
    Case5,
    #[serde(rename = "case6")]
    Case6,
    #[serde(rename = "custom")]
    Custom,
}

impl CaseLabel {
    pub const BUILTIN: [CaseLabel; 6] = [
        CaseLabel::Case1,
        CaseLabel::Case2,
        CaseLabel::Case3,
        CaseLabel::Case4,
        CaseLabel::Case5,
        CaseLabel::Case6,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CaseLabel::Case1 => "case1",
            CaseLabel::Case2 => "case2",
            CaseLabel::Case3 => "case3",
            CaseLabel::Case4 => "case4",
            CaseLabel::Case5 => "case5",
            CaseLabel::Case6 => "case6",
            CaseLabel::Custom => "custom",
        }
    }
}

impl FromStr for CaseLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let key = lower.strip_prefix("case").unwrap_or(&lower).trim_start_matches(['_', '-', ' ']);
        match key {
            "1" => Ok(CaseLabel::Case1),
            "2" => Ok(CaseLabel::Case2),
            "3" => Ok(CaseLabel::Case3),
            "4" => Ok(CaseLabel::Case4),
            "5" => Ok(CaseLabel::Case5),
            "6" => Ok(CaseLabel::Case6),
            "custom" => Ok(CaseLabel::Custom),
            _ => Err(Error::Config(format!("unknown case '{s}' (expected case1..case6 or custom)"))),
        }
    }
}

impl fmt::Display for CaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One wrapped Gaussian density term `weight · φ(θ; centre, width)`, degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub centre: f64,
    pub width: f64,
    pub weight: f64,
}

/// A directional curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum Curve {
    Constant { value: f64 },
    /// `−0.2 + sin(θ − 30°)/10`.
    SineShape,
    /// `max(sin θ + cos 2θ + 2, floor)`.
    TrigScale { floor: f64 },
    /// `max(sin θ + 1.1, 0) · total / 396`.
    SineRate { total: f64 },
    /// `offset + Σ weight·φ(θ; centre, width)` with φ a Gaussian density
    /// wrapped onto the circle, so each term integrates to its weight.
    Mixture { offset: f64, bumps: Vec<Bump> },
}

fn wrapped_gaussian(theta: f64, centre: f64, width: f64) -> f64 {
    let norm = 1.0 / (width * (2.0 * PI).sqrt());
    (-1..=1)
        .map(|k| {
            let d = (theta - centre + 360.0 * k as f64) / width;
            (-0.5 * d * d).exp()
        })
        .sum::<f64>()
        * norm
}

impl Curve {
    pub fn eval(&self, theta: f64) -> f64 {
        let rad = theta.to_radians();
        match self {
            Curve::Constant { value } => *value,
            Curve::SineShape => -0.2 + (rad - 30f64.to_radians()).sin() / 10.0,
            Curve::TrigScale { floor } => (rad.sin() + (2.0 * rad).cos() + 2.0).max(*floor),
            Curve::SineRate { total } => (rad.sin() + 1.1).max(0.0) * total / SINE_RATE_NORMALISER,
            Curve::Mixture { offset, bumps } => {
                offset
                    + bumps
                        .iter()
                        .map(|b| b.weight * wrapped_gaussian(theta, b.centre, b.width))
                        .sum::<f64>()
            }
        }
    }

    /// The curve multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Curve {
        match self {
            Curve::Constant { value } => Curve::Constant { value: value * factor },
            Curve::SineRate { total } => Curve::SineRate { total: total * factor },
            Curve::Mixture { offset, bumps } => Curve::Mixture {
                offset: offset * factor,
                bumps: bumps
                    .iter()
                    .map(|b| Bump {
                        weight: b.weight * factor,
                        ..b.clone()
                    })
                    .collect(),
            },
            other => {
                // Shape and scale forms are never rescaled; keep them exact.
                debug_assert!(factor == 1.0, "rescaling a fixed-form curve");
                other.clone()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let Curve::Mixture { bumps, .. } = self {
            for b in bumps {
                if !(b.width > 0.0 && b.width.is_finite() && b.centre.is_finite() && b.weight.is_finite()) {
                    return Err(Error::Config(format!("invalid mixture term {b:?}")));
                }
            }
        }
        Ok(())
    }
}

/// A synthetic truth. Rates are events per degree per sample period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSpec {
    pub label: CaseLabel,
    pub rate: Curve,
    pub shape: Curve,
    pub scale: Curve,
}

impl CaseSpec {
    pub fn rate_at(&self, theta: f64) -> f64 {
        self.rate.eval(theta)
    }

    pub fn shape_at(&self, theta: f64) -> f64 {
        self.shape.eval(theta)
    }

    pub fn scale_at(&self, theta: f64) -> f64 {
        self.scale.eval(theta)
    }

    /// `∫ρ dθ` by the midpoint rule on the direction grid; exact for the
    /// piecewise-constant density the direction sampler uses.
    pub fn expected_total(&self) -> f64 {
        direction_cell_masses(self).iter().sum()
    }

    /// Sample size used by default for this case.
    pub fn default_n(&self) -> usize {
        self.expected_total().round() as usize
    }

    /// Check `ρ ≥ 0`, `σ > 0` and `1 + ξ > 0` on a 0.1° grid.
    pub fn validate(&self) -> Result<()> {
        for c in [&self.rate, &self.shape, &self.scale] {
            c.validate()?;
        }
        let steps = (360.0 / VALIDATION_STEP).round() as usize;
        for i in 0..steps {
            let t = i as f64 * VALIDATION_STEP;
            let (r, x, s) = (self.rate_at(t), self.shape_at(t), self.scale_at(t));
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::Config(format!("rate {r} at {t}° is not a non-negative number")));
            }
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("scale {s} at {t}° is not positive")));
            }
            if !(1.0 + x > 0.0 && x.is_finite()) {
                return Err(Error::Config(format!("shape {x} at {t}° violates 1 + xi > 0")));
            }
        }
        if self.expected_total() <= 0.0 {
            return Err(Error::Config("rate integrates to zero".into()));
        }
        Ok(())
    }
}

/// Case 3 defaults: rate mass concentrated away from the west, shape peaking
/// positive near 30°, scale with two lobes. Approximations to an illustrated
/// truth, not published values.
fn case3() -> CaseSpec {
    let bump = |centre, width, weight| Bump { centre, width, weight };
    CaseSpec {
        label: CaseLabel::Case3,
        rate: Curve::Mixture {
            offset: 0.0,
            bumps: vec![bump(60.0, 45.0, 450.0), bump(150.0, 35.0, 350.0), bump(0.0, 30.0, 200.0)],
        },
        shape: Curve::Mixture {
            offset: -0.15,
            bumps: vec![bump(30.0, 30.0, 22.5), bump(200.0, 50.0, 5.0)],
        },
        scale: Curve::Mixture {
            offset: 0.5,
            bumps: vec![bump(100.0, 40.0, 150.0), bump(240.0, 50.0, 100.0)],
        },
    }
}

/// The six built-in truths. Cases 4–6 are Cases 1–3 with five times the rate.
pub fn builtin_case(label: CaseLabel) -> Result<CaseSpec> {
    let trig = |label, rate| CaseSpec {
        label,
        rate,
        shape: Curve::SineShape,
        scale: Curve::TrigScale { floor: SCALE_FLOOR },
    };
    let uniform = Curve::Constant { value: 1000.0 / 360.0 };
    let sine = Curve::SineRate { total: 1000.0 };
    let boosted = |mut spec: CaseSpec, label| {
        spec.rate = spec.rate.scaled(5.0);
        spec.label = label;
        spec
    };
    Ok(match label {
        CaseLabel::Case1 => trig(CaseLabel::Case1, uniform),
        CaseLabel::Case2 => trig(CaseLabel::Case2, sine),
        CaseLabel::Case3 => case3(),
        CaseLabel::Case4 => boosted(trig(CaseLabel::Case1, uniform), CaseLabel::Case4),
        CaseLabel::Case5 => boosted(trig(CaseLabel::Case2, sine), CaseLabel::Case5),
        CaseLabel::Case6 => boosted(case3(), CaseLabel::Case6),
        CaseLabel::Custom => {
            return Err(Error::Config("custom cases are defined in configuration, not built in".into()))
        }
    })
}

/// Pointwise `(ρ, ξ, σ)`.
pub fn truth_curves(spec: &CaseSpec, angles: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    (
        angles.iter().map(|&t| spec.rate_at(t)).collect(),
        angles.iter().map(|&t| spec.shape_at(t)).collect(),
        angles.iter().map(|&t| spec.scale_at(t)).collect(),
    )
}

fn direction_cell_masses(spec: &CaseSpec) -> Vec<f64> {
    let cells = (360.0 / DIRECTION_CELL).round() as usize;
    (0..cells)
        .map(|i| spec.rate_at((i as f64 + 0.5) * DIRECTION_CELL).max(0.0) * DIRECTION_CELL)
        .collect()
}

/// Inverse-CDF sampler for directions with density `ρ(θ)/∫ρ`, with `ρ` held
/// constant on each 0.05° cell.
#[derive(Clone, Debug)]
pub struct DirectionSampler {
    cumulative: Vec<f64>,
}

impl DirectionSampler {
    pub fn new(spec: &CaseSpec) -> Result<Self> {
        let mut cumulative = direction_cell_masses(spec);
        let mut acc = 0.0;
        for c in cumulative.iter_mut() {
            acc += *c;
            *c = acc;
        }
        if !(acc > 0.0) {
            return Err(Error::Config(format!("case {} has no rate mass", spec.label)));
        }
        Ok(DirectionSampler { cumulative })
    }

    /// `∫ρ dθ` over the grid.
    pub fn total(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let target = rng.random::<f64>() * self.total();
        let cell = self.cumulative.partition_point(|&c| c <= target).min(self.cumulative.len() - 1);
        let lo = if cell == 0 { 0.0 } else { self.cumulative[cell - 1] };
        let mass = self.cumulative[cell] - lo;
        let frac = if mass > 0.0 { ((target - lo) / mass).clamp(0.0, 1.0) } else { 0.5 };
        let theta = (cell as f64 + frac) * DIRECTION_CELL;
        if theta >= 360.0 {
            0.0
        } else {
            theta
        }
    }
}

/// Simulate one sample: exactly `fixed_n` events, or `N ~ Poisson(∫ρ)` when
/// `fixed_n` is `None`.
pub fn simulate_sample<R: Rng + ?Sized>(
    spec: &CaseSpec,
    rng: &mut R,
    fixed_n: Option<usize>,
    period: f64,
) -> Result<PeaksSample> {
    let dirs = DirectionSampler::new(spec)?;
    let n = match fixed_n {
        Some(n) => n,
        None => Poisson::new(dirs.total())
            .map_err(|e| Error::Numeric(format!("Poisson({}): {e}", dirs.total())))?
            .sample(rng) as usize,
    };
    let mut angles = Vec::with_capacity(n);
    let mut sizes = Vec::with_capacity(n);
    for _ in 0..n {
        let t = dirs.sample(rng);
        sizes.push(gpd::sample_gpd(spec.shape_at(t), spec.scale_at(t), rng)?);
        angles.push(t);
    }
    PeaksSample::new(sizes, angles, period)
}
