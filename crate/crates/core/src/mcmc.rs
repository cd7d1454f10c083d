//! Metropolis-within-Gibbs over `(β_ξ, β_ν, λ_ξ, λ_ν)`.
//!
//! Each iteration updates `β_ν` then `β_ξ` by a Metropolis-Hastings step (a
//! correlated random walk or simplified mMALA), then draws `λ_ν` and `λ_ξ`
//! from their Gamma full conditionals. Step sizes adapt toward the target
//! acceptance rate during burn-in only.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::RoughnessMatrix;
use crate::error::{Error, Result};
use crate::mle::{self, CoefficientState, IrlsControls};
use crate::model::{Model, Param};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sampler {
    #[serde(rename = "mh")]
    MH,
    #[serde(rename = "mmala")]
    MMala,
}

impl Sampler {
    pub fn name(self) -> &'static str {
        match self {
            Sampler::MH => "mh",
            Sampler::MMala => "mmala",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub sampler: Sampler,
    /// Stored states are iterations `burn_in..n_iterations`; iteration 0 is
    /// the initial state.
    pub n_iterations: usize,
    pub burn_in: usize,
    /// Initial step sizes `ε`.
    pub step_xi: f64,
    pub step_nu: f64,
    /// `κ` in the random-walk preconditioner `(BᵀB + κR)⁻¹`.
    pub scale_kappa_xi: f64,
    pub scale_kappa_nu: f64,
    pub prior_a: f64,
    pub prior_b: f64,
    pub adapt_target: f64,
    pub seed: u64,
    /// Roughness coefficients at initialisation.
    pub initial_lambda: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            sampler: Sampler::MMala,
            n_iterations: 2500,
            burn_in: 500,
            step_xi: 1.0,
            step_nu: 1.0,
            scale_kappa_xi: 1.0,
            scale_kappa_nu: 1.0,
            prior_a: 1e-3,
            prior_b: 1e-3,
            adapt_target: 0.25,
            seed: 0,
            initial_lambda: 1.0,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_iterations == 0 {
            return bad("n_iterations must be positive".into());
        }
        if self.burn_in >= self.n_iterations {
            return bad(format!(
                "burn_in ({}) must be below n_iterations ({})",
                self.burn_in, self.n_iterations
            ));
        }
        for (name, v) in [
            ("step_xi", self.step_xi),
            ("step_nu", self.step_nu),
            ("scale_kappa_xi", self.scale_kappa_xi),
            ("scale_kappa_nu", self.scale_kappa_nu),
            ("prior_a", self.prior_a),
            ("prior_b", self.prior_b),
            ("initial_lambda", self.initial_lambda),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.adapt_target > 0.0 && self.adapt_target < 1.0) {
            return bad(format!("adapt_target must lie in (0, 1), got {}", self.adapt_target));
        }
        Ok(())
    }

    fn step(&self, which: Param) -> f64 {
        match which {
            Param::Xi => self.step_xi,
            Param::Nu => self.step_nu,
        }
    }

    fn kappa(&self, which: Param) -> f64 {
        match which {
            Param::Xi => self.scale_kappa_xi,
            Param::Nu => self.scale_kappa_nu,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptCounts {
    pub xi_accepted: usize,
    pub xi_proposed: usize,
    pub nu_accepted: usize,
    pub nu_proposed: usize,
}

impl AcceptCounts {
    pub fn rate(&self, which: Param) -> f64 {
        let (a, p) = match which {
            Param::Xi => (self.xi_accepted, self.xi_proposed),
            Param::Nu => (self.nu_accepted, self.nu_proposed),
        };
        if p == 0 {
            0.0
        } else {
            a as f64 / p as f64
        }
    }

    fn record(&mut self, which: Param, accepted: bool) {
        let (a, p) = match which {
            Param::Xi => (&mut self.xi_accepted, &mut self.xi_proposed),
            Param::Nu => (&mut self.nu_accepted, &mut self.nu_proposed),
        };
        *p += 1;
        *a += accepted as usize;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DrawSource {
    #[serde(rename = "mcmc")]
    Mcmc,
    #[serde(rename = "bootstrap")]
    Bootstrap,
}

/// Parameter draws from either inference engine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub states: Vec<CoefficientState>,
    /// Post-burn-in tallies (MCMC only).
    pub accept_counts: AcceptCounts,
    pub elapsed_hours: f64,
    pub source: DrawSource,
    /// Per-resample convergence of the refit (bootstrap only).
    pub converged: Vec<bool>,
    /// Step sizes `(ε_ξ, ε_ν)` in force at each stored iteration (MCMC only).
    pub trace: Vec<[f64; 2]>,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// `λ ~ Gamma(shape a + p/2, rate b + ½βᵀRβ)`.
pub fn gibbs_update_precision<R: Rng + ?Sized>(
    beta: &[f64],
    roughness: &RoughnessMatrix,
    a: f64,
    b: f64,
    rng: &mut R,
) -> Result<f64> {
    let (shape, rate) = precision_conditional(beta, roughness, a, b)?;
    let gamma = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::Numeric(format!("Gamma({shape}, {rate}): {e}")))?;
    // A draw can underflow to 0 for tiny shapes; λ must stay positive.
    Ok(gamma.sample(rng).max(f64::MIN_POSITIVE))
}

/// Shape and rate of the Gamma full conditional of a roughness coefficient.
pub fn precision_conditional(beta: &[f64], roughness: &RoughnessMatrix, a: f64, b: f64) -> Result<(f64, f64)> {
    if beta.len() != roughness.dim() {
        return Err(Error::Contract(format!(
            "{} coefficients against a {}-dimensional penalty",
            beta.len(),
            roughness.dim()
        )));
    }
    let mut q = roughness.quadratic_form(beta);
    if q < 0.0 {
        if q < -1e-10 {
            return Err(Error::Numeric(format!("negative roughness quadratic form {q:e}")));
        }
        q = 0.0;
    }
    Ok((a + beta.len() as f64 / 2.0, b + 0.5 * q))
}

fn with_beta(state: &CoefficientState, which: Param, beta: &[f64]) -> CoefficientState {
    let mut s = state.clone();
    s.beta_mut(which).copy_from_slice(beta);
    s
}

/// `ℓ(β) − ½λβᵀRβ` for block `which` at `state`, `−∞` when infeasible.
pub fn log_conditional(model: &Model, which: Param, state: &CoefficientState) -> f64 {
    let other = model.other_pointwise(which, state);
    let beta = state.beta(which);
    let ll = model.block_loglik(which, beta, &other);
    if ll == f64::NEG_INFINITY {
        return ll;
    }
    ll - 0.5 * state.lambda(which) * model.block(which).roughness.quadratic_form(beta)
}

/// `Bᵀ∇_η ℓ − λRβ`; `None` at an infeasible state.
pub fn grad_log_conditional(model: &Model, which: Param, state: &CoefficientState) -> Option<DVector<f64>> {
    let other = model.other_pointwise(which, state);
    let beta = DVector::from_column_slice(state.beta(which));
    let eval = model.block_eval(which, beta.as_slice(), &other)?;
    Some(eval.grad - &model.block(which).roughness.values * beta * state.lambda(which))
}

/// Random-walk preconditioner `(BᵀB + κR)⁻¹`. State independent, so it is
/// computed once per chain.
pub fn mh_matrix(model: &Model, which: Param, kappa: f64) -> Result<DMatrix<f64>> {
    let block = model.block(which);
    let ones = vec![1.0; model.n()];
    let a = block.basis.weighted_gram(&ones) + &block.roughness.values * kappa;
    a.clone().cholesky().map(|c| c.inverse()).ok_or_else(|| {
        Error::Numeric(format!(
            "BᵀB + κR not invertible for {} (κ = {kappa}){}",
            which.name(),
            eigen_summary(&a)
        ))
    })
}

fn eigen_summary(m: &DMatrix<f64>) -> String {
    let eig = m.clone().symmetric_eigen().eigenvalues;
    format!(": eigenvalues in [{:e}, {:e}]", eig.min(), eig.max())
}

/// `β* = β + ε·M·z`, `z` standard normal. Symmetric in `(β, β*)`.
pub fn mh_propose<R: Rng + ?Sized>(beta: &[f64], m: &DMatrix<f64>, eps: f64, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_fn(beta.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    DVector::from_column_slice(beta) + m * z * eps
}

/// Langevin drift and metric of one block at one state.
pub struct MalaGeometry {
    /// `β + (ε²/2)H⁻¹g`.
    pub mean: DVector<f64>,
    /// Lower Cholesky factor of `H = BᵀWB + λR`.
    pub chol_l: DMatrix<f64>,
    pub log_det_h: f64,
}

/// mMALA geometry at `state`, `Ok(None)` when the state is infeasible.
pub fn mala_geometry(model: &Model, which: Param, state: &CoefficientState, eps: f64) -> Result<Option<MalaGeometry>> {
    let other = model.other_pointwise(which, state);
    let beta = DVector::from_column_slice(state.beta(which));
    let Some(eval) = model.block_eval(which, beta.as_slice(), &other) else {
        return Ok(None);
    };
    let r = &model.block(which).roughness.values;
    let lam = state.lambda(which);
    let g = eval.grad - r * &beta * lam;
    let h = eval.gram + r * lam;
    let chol = h.clone().cholesky().ok_or_else(|| {
        Error::Numeric(format!(
            "mMALA metric for {} is not positive definite{}",
            which.name(),
            eigen_summary(&h)
        ))
    })?;
    let step = chol.solve(&g);
    let l = chol.unpack();
    let log_det_h = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(Some(MalaGeometry {
        mean: beta + step * (0.5 * eps * eps),
        chol_l: l,
        log_det_h,
    }))
}

/// `log N(x; mean, ε²H⁻¹)`.
pub fn mala_log_density(x: &DVector<f64>, geom: &MalaGeometry, eps: f64) -> f64 {
    let p = x.len() as f64;
    let d = x - &geom.mean;
    // (x−m)ᵀH(x−m) = ‖Lᵀ(x−m)‖².
    let q = (geom.chol_l.transpose() * d).norm_squared();
    -0.5 * q / (eps * eps) + 0.5 * geom.log_det_h - p * eps.ln() - 0.5 * p * (2.0 * std::f64::consts::PI).ln()
}

/// Draw `β* ~ N(m(β), ε²H⁻¹(β))` and return it with the forward and reverse
/// log proposal densities. The reverse density is `−∞` when `β*` is
/// infeasible.
pub fn mmala_propose<R: Rng + ?Sized>(
    model: &Model,
    which: Param,
    state: &CoefficientState,
    eps: f64,
    rng: &mut R,
) -> Result<(DVector<f64>, f64, f64)> {
    let geom = mala_geometry(model, which, state, eps)?
        .ok_or_else(|| Error::Contract(format!("mMALA proposal from an infeasible {} state", which.name())))?;
    let p = state.beta(which).len();
    let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let lt = geom.chol_l.transpose();
    let offset = lt
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::Numeric("singular mMALA Cholesky factor".into()))?;
    let proposal = &geom.mean + offset * eps;
    let fwd = mala_log_density(&proposal, &geom, eps);
    let reverse_state = with_beta(state, which, proposal.as_slice());
    let bwd = match mala_geometry(model, which, &reverse_state, eps) {
        Ok(Some(g)) => mala_log_density(&DVector::from_column_slice(state.beta(which)), &g, eps),
        Ok(None) | Err(Error::Numeric(_)) => f64::NEG_INFINITY,
        Err(e) => return Err(e),
    };
    Ok((proposal, fwd, bwd))
}

/// `min(1, exp(Δ))` with `Δ = proposal − current + log q_bwd − log q_fwd`.
pub fn acceptance_probability(current: f64, proposal: f64, log_q_fwd: f64, log_q_bwd: f64) -> f64 {
    if proposal == f64::NEG_INFINITY || log_q_bwd == f64::NEG_INFINITY {
        return 0.0;
    }
    let delta = proposal - current + log_q_bwd - log_q_fwd;
    if delta.is_nan() {
        0.0
    } else {
        delta.min(0.0).exp()
    }
}

pub fn accept<R: Rng + ?Sized>(current: f64, proposal: f64, log_q_fwd: f64, log_q_bwd: f64, rng: &mut R) -> bool {
    let a = acceptance_probability(current, proposal, log_q_fwd, log_q_bwd);
    a >= 1.0 || rng.random::<f64>() < a
}

/// One Metropolis-Hastings update of a single coefficient block.
pub struct BlockKernel {
    pub which: Param,
    pub sampler: Sampler,
    mh: Option<DMatrix<f64>>,
}

/// Outcome of one block update.
#[derive(Clone, Copy, Debug)]
pub struct StepOutcome {
    pub accepted: bool,
    /// Acceptance probability of the proposal; drives adaptation.
    pub prob: f64,
}

impl BlockKernel {
    pub fn new(model: &Model, which: Param, sampler: Sampler, kappa: f64) -> Result<Self> {
        let mh = match sampler {
            Sampler::MH => Some(mh_matrix(model, which, kappa)?),
            Sampler::MMala => None,
        };
        Ok(BlockKernel { which, sampler, mh })
    }

    /// Update `state` in place; `current` is the block log conditional at
    /// `state` on entry and at the returned state on exit.
    pub fn step<R: Rng + ?Sized>(
        &self,
        model: &Model,
        state: &mut CoefficientState,
        current: &mut f64,
        eps: f64,
        rng: &mut R,
    ) -> Result<StepOutcome> {
        let (proposal, fwd, bwd) = match &self.mh {
            Some(m) => (mh_propose(state.beta(self.which), m, eps, rng), 0.0, 0.0),
            None => mmala_propose(model, self.which, state, eps, rng)?,
        };
        let cand = with_beta(state, self.which, proposal.as_slice());
        let target = log_conditional(model, self.which, &cand);
        let prob = acceptance_probability(*current, target, fwd, bwd);
        let accepted = prob >= 1.0 || rng.random::<f64>() < prob;
        if accepted {
            *state = cand;
            *current = target;
        }
        Ok(StepOutcome { accepted, prob })
    }
}

/// Robbins-Monro gain for burn-in iteration `t ≥ 1`.
fn adapt_gain(t: usize) -> f64 {
    (t as f64).powf(-0.6)
}

/// Run one chain. The default initial state is the stationary fit broadcast
/// into each basis with `λ = initial_lambda`.
pub fn run_chain(model: &Model, config: &ChainConfig, init: Option<CoefficientState>) -> Result<PosteriorDraws> {
    config.validate()?;
    let start = Instant::now();
    let mut state = match init {
        Some(s) => s,
        None => mle::initial_state(
            model,
            config.initial_lambda,
            config.initial_lambda,
            &IrlsControls::default(),
        )?,
    };
    model.check_dims(&state)?;
    if model.log_likelihood(&state) == f64::NEG_INFINITY {
        return Err(Error::Contract(mle::first_infeasible(model, &state)));
    }
    let blocks = [Param::Nu, Param::Xi];
    let kernels = blocks
        .iter()
        .map(|&w| BlockKernel::new(model, w, config.sampler, config.kappa(w)))
        .collect::<Result<Vec<_>>>()?;
    let mut log_eps = [config.step(Param::Nu).ln(), config.step(Param::Xi).ln()];
    let mut rng = rng::stream(config.seed, &[0x3C]);

    let kept = config.n_iterations - config.burn_in;
    let mut states = Vec::with_capacity(kept);
    let mut trace = Vec::with_capacity(kept);
    let mut counts = AcceptCounts::default();
    for t in 0..config.n_iterations {
        if t > 0 {
            let adapting = t <= config.burn_in;
            for (k, kernel) in kernels.iter().enumerate() {
                let mut current = log_conditional(model, kernel.which, &state);
                let out = kernel.step(model, &mut state, &mut current, log_eps[k].exp(), &mut rng)?;
                if adapting {
                    log_eps[k] += adapt_gain(t) * (out.prob - config.adapt_target);
                } else {
                    counts.record(kernel.which, out.accepted);
                }
            }
            for which in blocks {
                let lam = gibbs_update_precision(
                    state.beta(which),
                    &model.block(which).roughness,
                    config.prior_a,
                    config.prior_b,
                    &mut rng,
                )?;
                state.set_lambda(which, lam);
            }
        }
        if t >= config.burn_in {
            states.push(state.clone());
            trace.push([log_eps[1].exp(), log_eps[0].exp()]);
        }
    }
    Ok(PosteriorDraws {
        states,
        accept_counts: counts,
        elapsed_hours: mle::elapsed_hours(start),
        source: DrawSource::Mcmc,
        converged: Vec::new(),
        trace,
    })
}

/// Independent chains, one per config, run across the worker pool.
pub fn run_chains(model: &Model, configs: &[ChainConfig]) -> Vec<Result<PosteriorDraws>> {
    crate::par::map_indexed(configs.len(), |i| run_chain(model, &configs[i], None))
}
