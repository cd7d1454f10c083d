//! Penalised maximum likelihood: safeguarded back-fitting (IRLS) with
//! expected-information weights, k-fold cross-validation over roughness
//! grids, and bootstrap refits for uncertainty.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisKind, BasisSpec};
use crate::error::{Error, Result};
use crate::gpd::{self, PeaksSample};
use crate::mcmc::{AcceptCounts, DrawSource, PosteriorDraws};
use crate::model::{Model, Param};
use crate::{par, rng};

/// Basis coefficients for both parameters plus their roughness (precision)
/// coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientState {
    pub beta_xi: Vec<f64>,
    pub beta_nu: Vec<f64>,
    pub lambda_xi: f64,
    pub lambda_nu: f64,
}

impl CoefficientState {
    pub fn beta(&self, which: Param) -> &[f64] {
        match which {
            Param::Xi => &self.beta_xi,
            Param::Nu => &self.beta_nu,
        }
    }

    pub fn beta_mut(&mut self, which: Param) -> &mut Vec<f64> {
        match which {
            Param::Xi => &mut self.beta_xi,
            Param::Nu => &mut self.beta_nu,
        }
    }

    pub fn lambda(&self, which: Param) -> f64 {
        match which {
            Param::Xi => self.lambda_xi,
            Param::Nu => self.lambda_nu,
        }
    }

    pub fn set_lambda(&mut self, which: Param, value: f64) {
        match which {
            Param::Xi => self.lambda_xi = value,
            Param::Nu => self.lambda_nu = value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub state: CoefficientState,
    pub penalised_nll: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IrlsControls {
    /// Relative change in penalised NLL between outer iterations.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for IrlsControls {
    fn default() -> Self {
        IrlsControls {
            tol: 1e-8,
            max_iter: 200,
            max_halvings: 30,
        }
    }
}

fn penalty(model: &Model, state: &CoefficientState) -> f64 {
    0.5 * state.lambda_xi * model.xi.roughness.quadratic_form(&state.beta_xi)
        + 0.5 * state.lambda_nu * model.nu.roughness.quadratic_form(&state.beta_nu)
}

/// `NLL + ½λ_ξ β_ξᵀR_ξβ_ξ + ½λ_ν β_νᵀR_νβ_ν`, `+∞` when infeasible.
pub fn penalised_nll(model: &Model, state: &CoefficientState) -> Result<f64> {
    model.check_dims(state)?;
    let nll = -model.log_likelihood(state);
    if !nll.is_finite() {
        return Ok(f64::INFINITY);
    }
    Ok(nll + penalty(model, state))
}

/// Solve `H x = b` for symmetric positive (semi-)definite `H`, falling back to
/// LU when Cholesky fails.
pub(crate) fn solve_spd(h: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = h.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    h.clone()
        .lu()
        .solve(b)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Numeric("singular system in back-fitting step".into()))
}

/// Outcome of a safeguarded update of one block.
enum StepOutcome {
    Moved,
    /// No decrease found; the Newton decrement at the current point.
    Stalled(f64),
}

/// Doublings tried after an accepted full step.
const MAX_EXPANSIONS: u32 = 10;

fn update_block(
    model: &Model,
    state: &mut CoefficientState,
    which: Param,
    current: &mut f64,
    controls: &IrlsControls,
) -> Result<StepOutcome> {
    let other = model.other_pointwise(which, state);
    let beta = DVector::from_column_slice(state.beta(which));
    let block = model.block(which);
    let eval = model
        .block_eval(which, beta.as_slice(), &other)
        .ok_or_else(|| Error::Numeric(format!("infeasible state while updating {}", which.name())))?;
    let h = &eval.gram + &block.roughness.values * state.lambda(which);
    let rhs = &eval.grad + &eval.gram * &beta;
    let target = solve_spd(&h, &rhs)?;
    let direction = target - &beta;
    let lam = state.lambda(which);
    let pen_other = match which {
        Param::Xi => 0.5 * state.lambda_nu * model.nu.roughness.quadratic_form(&state.beta_nu),
        Param::Nu => 0.5 * state.lambda_xi * model.xi.roughness.quadratic_form(&state.beta_xi),
    };
    let objective = |t: f64| {
        let cand = &beta + &direction * t;
        let ll = model.block_loglik(which, cand.as_slice(), &other);
        let f = if ll.is_finite() {
            -ll + 0.5 * lam * block.roughness.quadratic_form(cand.as_slice()) + pen_other
        } else {
            f64::INFINITY
        };
        (cand, f)
    };
    let mut t = 1.0;
    for _ in 0..=controls.max_halvings {
        let (cand, f) = objective(t);
        if f <= *current {
            let mut best = (cand, f);
            // A full step that helps may be too short where the expected
            // information overstates the curvature (shape below −1/2).
            if t == 1.0 {
                for k in 1..=MAX_EXPANSIONS {
                    let (c, fc) = objective((1u64 << k) as f64);
                    if !(fc < best.1) {
                        break;
                    }
                    best = (c, fc);
                }
            }
            *current = best.1;
            state.beta_mut(which).copy_from_slice(best.0.as_slice());
            return Ok(StepOutcome::Moved);
        }
        t *= 0.5;
    }
    let decrement = direction.dot(&(&h * &direction));
    Ok(StepOutcome::Stalled(decrement))
}

/// Pattern move after a sweep: try `s₁ + ω(s₁ − s₀)` for `ω = 1, 2, 4, …`
/// while the penalised NLL keeps falling, and keep the best. Block-wise
/// updates zig-zag slowly along ridges that couple `ξ` and `ν` (near the
/// support boundary for negative shape); the move follows the ridge and
/// never increases the objective.
fn extrapolate(model: &Model, before: &CoefficientState, state: &mut CoefficientState, current: &mut f64) -> Result<()> {
    let step = |omega: f64| {
        let mut cand = state.clone();
        for (c, (a, b)) in cand.beta_xi.iter_mut().zip(before.beta_xi.iter().zip(&state.beta_xi)) {
            *c = b + omega * (b - a);
        }
        for (c, (a, b)) in cand.beta_nu.iter_mut().zip(before.beta_nu.iter().zip(&state.beta_nu)) {
            *c = b + omega * (b - a);
        }
        cand
    };
    let mut best: Option<(CoefficientState, f64)> = None;
    let mut omega = 1.0;
    for _ in 0..20 {
        let cand = step(omega);
        let f = penalised_nll(model, &cand)?;
        if !(f < best.as_ref().map_or(*current, |b| b.1)) {
            break;
        }
        best = Some((cand, f));
        omega *= 2.0;
    }
    if let Some((cand, f)) = best {
        *state = cand;
        *current = f;
    }
    Ok(())
}

/// Back-fitting: per outer iteration, a safeguarded Newton-type step for
/// `β_ν` then `β_ξ`,
/// `β ← (BᵀWB + λR)⁻¹(Bᵀg + BᵀWBβ)` with `W` the expected information,
/// halving the step until the penalised NLL does not increase.
pub fn irls_fit(
    model: &Model,
    lambda_xi: f64,
    lambda_nu: f64,
    init: &CoefficientState,
    controls: &IrlsControls,
) -> Result<FitResult> {
    let mut state = init.clone();
    state.lambda_xi = lambda_xi;
    state.lambda_nu = lambda_nu;
    let mut current = penalised_nll(model, &state)?;
    if !current.is_finite() {
        return Err(Error::Contract(first_infeasible(model, &state)));
    }
    for iter in 1..=controls.max_iter {
        let before = current;
        let mut stalled = false;
        let start = state.clone();
        for which in [Param::Nu, Param::Xi] {
            if let StepOutcome::Stalled(dec) = update_block(model, &mut state, which, &mut current, controls)? {
                if 0.5 * dec > controls.tol * current.abs().max(1.0) {
                    stalled = true;
                }
            }
        }
        extrapolate(model, &start, &mut state, &mut current)?;
        debug_assert!(current <= before);
        let change = (before - current).abs() / current.abs().max(1.0);
        if change < controls.tol {
            return Ok(FitResult {
                state,
                penalised_nll: current,
                iterations: iter,
                converged: !stalled,
            });
        }
        if stalled {
            return Ok(FitResult {
                state,
                penalised_nll: current,
                iterations: iter,
                converged: false,
            });
        }
    }
    Ok(FitResult {
        state,
        penalised_nll: current,
        iterations: controls.max_iter,
        converged: false,
    })
}

/// Describe the first observation that makes `state` infeasible.
pub fn first_infeasible(model: &Model, state: &CoefficientState) -> String {
    let pw = model.pointwise(state);
    for (i, &y) in model.sample.sizes.iter().enumerate() {
        if gpd::log_density(y, pw.xi[i], pw.nu[i]) == f64::NEG_INFINITY {
            return format!(
                "observation {i} (angle {}, size {y}) infeasible at xi = {:.6}, nu = {:.6}",
                model.sample.angles[i], pw.xi[i], pw.nu[i]
            );
        }
    }
    "state infeasible".into()
}

/// Stationary `(ξ, ν)`: exponential moment start `(0, mean y)` refined by
/// Constant-basis back-fitting.
pub fn stationary_fit(sample: &PeaksSample, controls: &IrlsControls) -> Result<(f64, f64)> {
    if sample.is_empty() {
        return Err(Error::Contract("cannot fit an empty sample".into()));
    }
    let mean = sample.sizes.iter().sum::<f64>() / sample.len() as f64;
    let nu0 = if mean > 0.0 { mean } else { 1.0 };
    let constant = BasisSpec::constant();
    let model = Model::new(sample.clone(), &constant, &constant)?;
    let init = CoefficientState {
        beta_xi: vec![0.0],
        beta_nu: vec![nu0],
        lambda_xi: 0.0,
        lambda_nu: 0.0,
    };
    let fit = irls_fit(&model, 0.0, 0.0, &init, controls)?;
    Ok((fit.state.beta_xi[0], fit.state.beta_nu[0]))
}

/// Broadcast the stationary fit into the coefficient spaces of `model`.
pub fn initial_state(model: &Model, lambda_xi: f64, lambda_nu: f64, controls: &IrlsControls) -> Result<CoefficientState> {
    let (xi, nu) = stationary_fit(&model.sample, controls)?;
    Ok(CoefficientState {
        beta_xi: model.xi.spec.constant_coeffs(xi),
        beta_nu: model.nu.spec.constant_coeffs(nu),
        lambda_xi,
        lambda_nu,
    })
}

/// `n` values log-spaced on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut g: Vec<f64> = (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect();
    g[0] = lo;
    g[n - 1] = hi;
    g
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvControls {
    pub folds: usize,
    pub grid_xi: Vec<f64>,
    pub grid_nu: Vec<f64>,
    pub irls: IrlsControls,
}

impl Default for CvControls {
    fn default() -> Self {
        CvControls {
            folds: 5,
            grid_xi: log_grid(1e-3, 1e6, 10),
            grid_nu: log_grid(1e-3, 1e6, 10),
            irls: IrlsControls::default(),
        }
    }
}

/// Held-out score of one roughness pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    pub lambda_xi: f64,
    pub lambda_nu: f64,
    /// Held-out observations falling outside the fitted support.
    pub violations: usize,
    /// Held-out unpenalised NLL over in-support observations.
    pub heldout_nll: f64,
    pub failed_folds: usize,
}

impl CvCell {
    /// Total held-out NLL, `+∞` if any held-out point is out of support or any
    /// fold failed.
    pub fn score(&self) -> f64 {
        if self.failed_folds > 0 || self.violations > 0 {
            f64::INFINITY
        } else {
            self.heldout_nll
        }
    }

    fn key(&self) -> (usize, usize, f64) {
        (self.failed_folds, self.violations, self.heldout_nll)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub lambda_xi: f64,
    pub lambda_nu: f64,
    pub surface: Vec<CvCell>,
}

/// A Constant block has a one-dimensional coefficient space and no roughness
/// to tune; its grid collapses to the smallest value.
fn effective_grid(spec: &BasisSpec, grid: &[f64]) -> Vec<f64> {
    if spec.kind == BasisKind::Constant {
        vec![grid.iter().copied().fold(f64::INFINITY, f64::min)]
    } else {
        grid.to_vec()
    }
}

/// Random fold labels, `0..k`, balanced to within one.
pub fn fold_labels<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut labels = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        labels[i] = pos % k;
    }
    labels
}

/// k-fold cross-validation over the product grid of roughness coefficients.
///
/// Each pair is scored by the held-out unpenalised NLL summed over folds.
/// Pairs are ranked by (failed folds, held-out points outside the fitted
/// support, held-out NLL); exact ties go to the smoother pair.
pub fn cross_validate(
    sample: &PeaksSample,
    xi_spec: &BasisSpec,
    nu_spec: &BasisSpec,
    controls: &CvControls,
    seed: u64,
) -> Result<CvResult> {
    if controls.folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {}", controls.folds)));
    }
    if controls.grid_xi.is_empty() || controls.grid_nu.is_empty() {
        return Err(Error::Config("roughness grids must be non-empty".into()));
    }
    if sample.len() < controls.folds {
        return Err(Error::Contract(format!(
            "{} observations cannot fill {} folds",
            sample.len(),
            controls.folds
        )));
    }
    let full = Model::new(sample.clone(), xi_spec, nu_spec)?;
    let labels = fold_labels(sample.len(), controls.folds, &mut rng::stream(seed, &[0xC5]));
    struct Fold {
        train: Model,
        test: Model,
        init: Option<CoefficientState>,
    }
    let folds: Vec<Fold> = (0..controls.folds)
        .map(|f| {
            let train_idx: Vec<usize> = (0..sample.len()).filter(|&i| labels[i] != f).collect();
            let test_idx: Vec<usize> = (0..sample.len()).filter(|&i| labels[i] == f).collect();
            let train = full.select(&train_idx);
            let init = initial_state(&train, 1.0, 1.0, &controls.irls).ok();
            Fold {
                train,
                test: full.select(&test_idx),
                init,
            }
        })
        .collect();

    let grid_xi = effective_grid(xi_spec, &controls.grid_xi);
    let grid_nu = effective_grid(nu_spec, &controls.grid_nu);
    let pairs: Vec<(f64, f64)> = grid_xi
        .iter()
        .flat_map(|&a| grid_nu.iter().map(move |&b| (a, b)))
        .collect();

    let surface = par::map_indexed(pairs.len(), |idx| {
        let (lx, ln) = pairs[idx];
        let mut cell = CvCell {
            lambda_xi: lx,
            lambda_nu: ln,
            violations: 0,
            heldout_nll: 0.0,
            failed_folds: 0,
        };
        for fold in &folds {
            let fit = fold
                .init
                .as_ref()
                .ok_or(())
                .and_then(|init| irls_fit(&fold.train, lx, ln, init, &controls.irls).map_err(|_| ()));
            match fit {
                Ok(fit) if fit.converged => {
                    let pw = fold.test.pointwise(&fit.state);
                    for (i, &y) in fold.test.sample.sizes.iter().enumerate() {
                        let l = gpd::log_density(y, pw.xi[i], pw.nu[i]);
                        if l.is_finite() {
                            cell.heldout_nll -= l;
                        } else {
                            cell.violations += 1;
                        }
                    }
                }
                _ => cell.failed_folds += 1,
            }
        }
        cell
    });

    let mut best = 0;
    for (i, cell) in surface.iter().enumerate().skip(1) {
        let (a, b) = (cell.key(), surface[best].key());
        let better = (a.0, a.1) < (b.0, b.1)
            || ((a.0, a.1) == (b.0, b.1)
                && (a.2 < b.2
                    || (a.2 == b.2
                        && (cell.lambda_xi.ln() + cell.lambda_nu.ln()
                            > surface[best].lambda_xi.ln() + surface[best].lambda_nu.ln()))));
        if better {
            best = i;
        }
    }
    Ok(CvResult {
        lambda_xi: surface[best].lambda_xi,
        lambda_nu: surface[best].lambda_nu,
        surface,
    })
}

/// Bootstrap with a caller-supplied resampling rule: replicate `r` refits the
/// observations `resample(r)` starting from `full_fit`, with roughness held
/// at the full-sample values.
pub fn bootstrap_with<F>(
    model: &Model,
    full_fit: &CoefficientState,
    m_bs: usize,
    controls: &IrlsControls,
    resample: F,
) -> Result<PosteriorDraws>
where
    F: Fn(usize) -> Vec<usize> + Sync + Send,
{
    if m_bs == 0 {
        return Err(Error::Config("bootstrap needs at least one resample".into()));
    }
    model.check_dims(full_fit)?;
    let start = Instant::now();
    let fits = par::map_indexed(m_bs, |r| {
        let idx = resample(r);
        let sub = model.select(&idx);
        irls_fit(&sub, full_fit.lambda_xi, full_fit.lambda_nu, full_fit, controls)
    });
    let mut states = Vec::with_capacity(m_bs);
    let mut converged = Vec::with_capacity(m_bs);
    for fit in fits {
        match fit {
            Ok(f) => {
                converged.push(f.converged);
                states.push(f.state);
            }
            Err(_) => {
                converged.push(false);
                states.push(full_fit.clone());
            }
        }
    }
    Ok(PosteriorDraws {
        states,
        accept_counts: AcceptCounts::default(),
        elapsed_hours: elapsed_hours(start),
        source: DrawSource::Bootstrap,
        converged,
        trace: Vec::new(),
    })
}

/// `m_bs` resamples of the observation pairs with replacement, each refitted
/// from `full_fit`. Resample `r` draws from its own stream of `seed`.
pub fn bootstrap(
    model: &Model,
    full_fit: &CoefficientState,
    m_bs: usize,
    controls: &IrlsControls,
    seed: u64,
) -> Result<PosteriorDraws> {
    let n = model.n();
    bootstrap_with(model, full_fit, m_bs, controls, |r| {
        let mut rng = rng::stream(seed, &[0xB5, r as u64]);
        (0..n).map(|_| rng.random_range(0..n)).collect()
    })
}

pub(crate) fn elapsed_hours(start: Instant) -> f64 {
    (start.elapsed().as_secs_f64() / 3600.0).max(1e-12)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MleControls {
    pub cv: CvControls,
    /// Number of bootstrap resamples.
    pub m_bs: usize,
}

impl Default for MleControls {
    fn default() -> Self {
        MleControls {
            cv: CvControls::default(),
            m_bs: 100,
        }
    }
}

/// Cross-validated fit plus bootstrap set.
#[derive(Clone, Debug)]
pub struct MleRun {
    pub cv: CvResult,
    pub fit: FitResult,
    pub draws: PosteriorDraws,
}

/// Select roughness by cross-validation, fit the full sample, then bootstrap.
/// Elapsed time on the draws covers the whole analysis.
pub fn run_mle(model: &Model, controls: &MleControls, seed: u64) -> Result<MleRun> {
    let start = Instant::now();
    let cv = cross_validate(&model.sample, &model.xi.spec, &model.nu.spec, &controls.cv, seed)?;
    let init = initial_state(model, cv.lambda_xi, cv.lambda_nu, &controls.cv.irls)?;
    let fit = irls_fit(model, cv.lambda_xi, cv.lambda_nu, &init, &controls.cv.irls)?;
    let mut draws = bootstrap(model, &fit.state, controls.m_bs, &controls.cv.irls, seed)?;
    draws.elapsed_hours = elapsed_hours(start);
    Ok(MleRun { cv, fit, draws })
}
