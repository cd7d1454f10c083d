//! Acceptance criteria, one line each. Runs without the libtest harness so
//! every criterion reports even when an earlier one fails; the process exits
//! non-zero if any fails.
//!
//! `NSX_ACCEPTANCE=1,4,10` restricts the run to the listed criteria.

use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use nsextremes::cases::{simulate_sample, CaseSpec, Curve};
use nsextremes::mcmc::{self, BlockKernel};
use nsextremes::mle::{self, IrlsControls};
use nsextremes::model::Param;
use nsextremes::retval::{self, ParamSource, ReturnControls};
use nsextremes::study::{self, Method, StudyConfig};
use nsextremes::{
    gpd, metrics, rng, BasisKind, BasisSpec, CaseLabel, ChainConfig, CoefficientState, EmpiricalDistribution, Model,
    PeaksSample, Sampler, Sector,
};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

mod common;

use common::nelder_mead;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- helpers

/// Five-point central difference of `f` at `x` with step `h`.
fn derivative(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(analytic).max(1e-8)
}

fn stationary_sample<R: Rng>(n: usize, xi: f64, sigma: f64, rng: &mut R) -> PeaksSample {
    let angles: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 360.0).collect();
    let sizes = (0..n).map(|_| gpd::sample_gpd(xi, sigma, rng).unwrap()).collect();
    PeaksSample::new(sizes, angles, 1.0).unwrap()
}

/// Smallest `1 + ξ(1+ξ)y/ν` over the sample: distance from the support edge.
fn support_margin(model: &Model, state: &CoefficientState) -> f64 {
    let pw = model.pointwise(state);
    model
        .sample
        .sizes
        .iter()
        .zip(pw.xi.iter().zip(&pw.nu))
        .map(|(&y, (&x, &n))| if n > 0.0 && x > -1.0 { 1.0 + x * (1.0 + x) * y / n } else { -1.0 })
        .fold(f64::INFINITY, f64::min)
}

fn quantile(values: &[f64], q: f64) -> f64 {
    retval::percentile(&EmpiricalDistribution::new(Sector::Omni, values.to_vec()).unwrap(), q).unwrap()
}

// ------------------------------------------------------------- criteria

/// Gradients of the log-likelihood and block log conditionals against
/// finite differences at random feasible points, for every basis kind.
fn derivative_correctness() -> Outcome {
    let mut rng = rng::stream(1, &[1]);
    let mut worst = 0.0f64;
    let mut points = 0;

    // Pointwise scores.
    for _ in 0..200 {
        let xi = rng.random_range(-0.45..0.6);
        let nu = rng.random_range(0.3..3.0);
        let y = gpd::sample_gpd(xi, nu / (1.0 + xi), &mut rng).unwrap();
        if 1.0 + xi * (1.0 + xi) * y / nu < 0.05 || xi.abs() < 1e-2 {
            continue;
        }
        let (gx, gn) = gpd::score(y, xi, nu).unwrap();
        let fx = derivative(|x| gpd::log_density(y, x, nu), xi, 1e-4);
        let fn_ = derivative(|v| gpd::log_density(y, xi, v), nu, 1e-4 * nu);
        worst = worst.max(rel_err(&[gx, gn], &[fx, fn_]));
    }

    for kind in [BasisKind::Constant, BasisKind::Spline, BasisKind::Fourier, BasisKind::GaussianProcess] {
        let spec = BasisSpec::default_for(kind);
        let mut accepted = 0;
        while accepted < 100 {
            let xi0: f64 = rng.random_range(-0.3..0.4);
            let nu0: f64 = rng.random_range(0.5..3.0);
            let sample = stationary_sample(60, xi0, nu0 / (1.0 + xi0), &mut rng);
            let model = Model::new(sample, &spec, &spec).unwrap();
            let jitter = 0.05 / (spec.p as f64).sqrt();
            let mut state = CoefficientState {
                beta_xi: spec.constant_coeffs(xi0),
                beta_nu: spec.constant_coeffs(nu0),
                lambda_xi: rng.random_range(0.01..10.0),
                lambda_nu: rng.random_range(0.01..10.0),
            };
            for b in state.beta_xi.iter_mut() {
                *b += jitter * rng.sample::<f64, _>(StandardNormal);
            }
            for b in state.beta_nu.iter_mut() {
                *b *= 1.0 + jitter * rng.sample::<f64, _>(StandardNormal);
            }
            if support_margin(&model, &state) < 0.05 {
                continue;
            }
            accepted += 1;
            for which in [Param::Xi, Param::Nu] {
                let other = model.other_pointwise(which, &state);
                let beta = state.beta(which).to_vec();
                let eval = model.block_eval(which, &beta, &other).ok_or("block_eval infeasible")?;
                let grad_lc = mcmc::grad_log_conditional(&model, which, &state).ok_or("gradient infeasible")?;
                let mut fd_ll = Vec::with_capacity(beta.len());
                let mut fd_lc = Vec::with_capacity(beta.len());
                for k in 0..beta.len() {
                    let h = 1e-4 * beta[k].abs().max(0.1);
                    let perturbed = |t: f64| {
                        let mut b = beta.clone();
                        b[k] = t;
                        b
                    };
                    fd_ll.push(derivative(|t| model.block_loglik(which, &perturbed(t), &other), beta[k], h));
                    fd_lc.push(derivative(
                        |t| {
                            let mut s = state.clone();
                            s.beta_mut(which).copy_from_slice(&perturbed(t));
                            mcmc::log_conditional(&model, which, &s)
                        },
                        beta[k],
                        h,
                    ));
                }
                worst = worst.max(rel_err(eval.grad.as_slice(), &fd_ll));
                worst = worst.max(rel_err(grad_lc.as_slice(), &fd_lc));
            }
        }
        points += accepted;
    }
    check(
        worst < 1e-6,
        format!("{points} coefficient points over 4 basis kinds; worst relative error {worst:.2e}"),
    )
}

/// Monte-Carlo mean of the observed information against the expected
/// information.
fn expected_information() -> Outcome {
    let mut rng = rng::stream(2, &[2]);
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for (xi, nu) in [(-0.2, 1.0), (0.0, 1.0), (0.3, 2.0)] {
        let sigma = nu / (1.0 + xi);
        let m = 100_000;
        let (mut ixx, mut inn) = (0.0, 0.0);
        for _ in 0..m {
            let y = gpd::sample_gpd(xi, sigma, &mut rng).unwrap();
            ixx -= derivative(|x| gpd::score(y, x, nu).map_or(f64::NAN, |s| s.0), xi, 1e-3);
            inn -= derivative(|v| gpd::score(y, xi, v).map_or(f64::NAN, |s| s.1), nu, 1e-4 * nu);
        }
        let (ixx, inn) = (ixx / m as f64, inn / m as f64);
        let (exx, enn) = (1.0 / ((1.0 + xi) * (1.0 + xi)), 1.0 / (nu * nu * (1.0 + 2.0 * xi)));
        let (rx, rn) = ((ixx / exx - 1.0).abs(), (inn / enn - 1.0).abs());
        if !(rx.is_finite() && rn.is_finite()) {
            return Err(format!("non-finite observed information at ({xi}, {nu})"));
        }
        worst = worst.max(rx).max(rn);
        detail.push(format!("({xi},{nu}): {:.2}%/{:.2}%", 100.0 * rx, 100.0 * rn));
    }
    check(worst < 0.02, format!("relative deviation xi/nu {}", detail.join(", ")))
}

/// Gibbs draws of a roughness coefficient against the Gamma conditional.
fn conjugacy() -> Outcome {
    let mut rng = rng::stream(3, &[3]);
    let spec = BasisSpec::default_for(BasisKind::Spline);
    let r = spec.roughness().unwrap();
    let beta: Vec<f64> = (0..spec.p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let (a, b) = (1e-3, 1e-3);
    let m = 100_000;
    let draws: Vec<f64> = (0..m)
        .map(|_| mcmc::gibbs_update_precision(&beta, &r, a, b, &mut rng).unwrap())
        .collect();
    let shape = a + spec.p as f64 / 2.0;
    let rate = b + 0.5 * r.quadratic_form(&beta);
    let mean = draws.iter().sum::<f64>() / m as f64;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    let (em, ev) = (shape / rate, shape / (rate * rate));
    let (dm, dv) = ((mean / em - 1.0).abs(), (var / ev - 1.0).abs());
    check(
        dm < 0.01 && dv < 0.03,
        format!("mean off by {:.3}%, variance off by {:.3}%", 100.0 * dm, 100.0 * dv),
    )
}

/// KS and CvM against brute-force enumeration over every pair of 5-point
/// subsets of a 20-point pool (ties included), plus the Gaussian KL value.
fn metric_oracles() -> Outcome {
    let pool: [f64; 20] = [
        0.31, 1.7, -0.4, 2.2, 0.9, 1.7, 3.3, -1.2, 0.05, 2.9, 0.9, 4.1, -0.75, 1.1, 2.5, 0.6, 3.8, -2.0, 1.45, 0.31,
    ];
    let mut subsets = Vec::new();
    let mut idx = [0usize, 1, 2, 3, 4];
    loop {
        subsets.push(idx);
        // Next combination in lexicographic order.
        let mut i = 4;
        while idx[i] == 15 + i {
            if i == 0 {
                break;
            }
            i -= 1;
        }
        if idx[i] == 15 + i {
            break;
        }
        idx[i] += 1;
        for j in i + 1..5 {
            idx[j] = idx[j - 1] + 1;
        }
    }
    if subsets.len() != 15_504 {
        return Err(format!("enumerated {} subsets", subsets.len()));
    }
    // counts[s][k] = #{v in subset s : v <= pool[k]}
    let counts: Vec<[u8; 20]> = subsets
        .iter()
        .map(|s| {
            let mut c = [0u8; 20];
            for (k, ck) in c.iter_mut().enumerate() {
                *ck = s.iter().filter(|&&i| pool[i] <= pool[k]).count() as u8;
            }
            c
        })
        .collect();
    let dists: Vec<EmpiricalDistribution> = subsets
        .iter()
        .map(|s| EmpiricalDistribution::new(Sector::Omni, s.iter().map(|&i| pool[i]).collect()).unwrap())
        .collect();

    let mut pairs = 0u64;
    for i in 0..subsets.len() {
        for j in i..subsets.len() {
            let (ci, cj) = (&counts[i], &counts[j]);
            // Both ECDFs are constant between pool values, so the supremum is
            // attained at one of them.
            let ks5 = (0..20).map(|k| (ci[k] as i32 - cj[k] as i32).abs()).max().unwrap();
            let cvm_ij: i32 = subsets[i].iter().map(|&k| (cj[k] as i32 - ci[k] as i32).pow(2)).sum();
            let cvm_ji: i32 = subsets[j].iter().map(|&k| (ci[k] as i32 - cj[k] as i32).pow(2)).sum();
            let ks = metrics::ks_distance(&dists[i], &dists[j]).unwrap();
            let ks_rev = metrics::ks_distance(&dists[j], &dists[i]).unwrap();
            let c_ij = metrics::cvm_distance(&dists[i], &dists[j]).unwrap();
            let c_ji = metrics::cvm_distance(&dists[j], &dists[i]).unwrap();
            let exact = |x: f64, scale: f64, want: i32| {
                let s = x * scale;
                (s - s.round()).abs() < 1e-9 && s.round() as i32 == want
            };
            if !(exact(ks, 5.0, ks5) && ks == ks_rev && exact(c_ij, 125.0, cvm_ij) && exact(c_ji, 125.0, cvm_ji)) {
                return Err(format!(
                    "mismatch for subsets {:?} / {:?}: ks {ks} vs {ks5}/5, cvm {c_ij} vs {cvm_ij}/125",
                    subsets[i], subsets[j]
                ));
            }
            pairs += 1;
        }
    }

    let mut rng = rng::stream(4, &[4]);
    let n = 100_000;
    let f0: Vec<f64> = Normal::new(0.0, 1.0).unwrap().sample_iter(&mut rng).take(n).collect();
    let f1: Vec<f64> = Normal::new(0.5, 1.0).unwrap().sample_iter(&mut rng).take(n).collect();
    let kl = metrics::kl_divergence(
        &EmpiricalDistribution::new(Sector::Omni, f0).unwrap(),
        &EmpiricalDistribution::new(Sector::Omni, f1).unwrap(),
        metrics::KL_GRID_SIZE,
    )
    .unwrap();
    check(
        (kl - 0.125).abs() <= 0.02,
        format!("{pairs} subset pairs match enumeration exactly; KL(N(0,1)||N(0.5,1)) = {kl:.4}"),
    )
}

/// Omnidirectional return values of a stationary exponential truth against
/// the closed-form maximum distribution `exp(−10Λe^{−y})`.
fn return_value_oracle() -> Outcome {
    let total = 1000.0;
    let case = CaseSpec {
        label: CaseLabel::Custom,
        rate: Curve::Constant { value: total / 360.0 },
        shape: Curve::Constant { value: 0.0 },
        scale: Curve::Constant { value: 1.0 },
    };
    let controls = ReturnControls {
        factor: 10.0,
        replicates: 1000,
    };
    let rv = retval::simulate_return_distribution(ParamSource::Truth(&case), &case, &controls, 5).unwrap();
    let omni = rv.distribution(Sector::Omni);
    let v = omni.values();
    let n = v.len() as f64;
    let cdf = |y: f64| (-controls.factor * total * (-y).exp()).exp();
    let ks = v
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let f = cdf(y);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    check(ks < 0.05, format!("KS distance to the analytic maximum distribution {ks:.4}"))
}

/// Posterior calibration of the Constant model on stationary data, and
/// detailed balance of the block kernels.
fn sampler_validity() -> Outcome {
    let (xi0, sigma0) = (0.2, 1.5);
    let runs = 20;
    let constant = BasisSpec::constant();
    let results = nsextremes::par::map_indexed(runs, |r| {
        let mut g = rng::stream(6, &[r as u64]);
        let sample = stationary_sample(10_000, xi0, sigma0, &mut g);
        let model = Model::new(sample, &constant, &constant).unwrap();
        let cfg = ChainConfig {
            sampler: Sampler::MMala,
            seed: 600 + r as u64,
            ..ChainConfig::default()
        };
        let draws = mcmc::run_chain(&model, &cfg, None).unwrap();
        let xs: Vec<f64> = draws.states.iter().map(|s| s.beta_xi[0]).collect();
        let ss: Vec<f64> = draws.states.iter().map(|s| s.beta_nu[0] / (1.0 + s.beta_xi[0])).collect();
        (
            [quantile(&xs, 0.025), quantile(&xs, 0.5), quantile(&xs, 0.975)],
            [quantile(&ss, 0.025), quantile(&ss, 0.5), quantile(&ss, 0.975)],
        )
    });
    let mut medians_ok = true;
    let (mut cover_xi, mut cover_sigma) = (0, 0);
    for (qx, qs) in &results {
        medians_ok &= (qx[1] - xi0).abs() <= 0.1 && (qs[1] - sigma0).abs() <= 0.1;
        cover_xi += (qx[0] <= xi0 && xi0 <= qx[2]) as usize;
        cover_sigma += (qs[0] <= sigma0 && sigma0 <= qs[2]) as usize;
    }

    // Detailed balance: the pair distribution of consecutive states of a
    // single block kernel, binned at its deciles, must be symmetric.
    let mut g = rng::stream(6, &[99]);
    let sample = stationary_sample(300, xi0, sigma0, &mut g);
    let model = Model::new(sample, &constant, &constant).unwrap();
    let start = mle::initial_state(&model, 1.0, 1.0, &IrlsControls::default()).unwrap();
    let mut tvs = Vec::new();
    for sampler in [Sampler::MMala, Sampler::MH] {
        let kernel = BlockKernel::new(&model, Param::Xi, sampler, 1.0).unwrap();
        let run = |eps: f64, steps: usize, g: &mut rng::Rng| {
            let mut state = start.clone();
            let mut current = mcmc::log_conditional(&model, Param::Xi, &state);
            let mut path = Vec::with_capacity(steps + 1);
            let mut accepted = 0;
            path.push(state.beta_xi[0]);
            for _ in 0..steps {
                accepted += kernel.step(&model, &mut state, &mut current, eps, g).unwrap().accepted as usize;
                path.push(state.beta_xi[0]);
            }
            (path, accepted as f64 / steps as f64)
        };
        // Pilot runs pick a step that moves the chain between bins.
        let eps = (-4..14)
            .map(|k| 2f64.powi(k))
            .min_by(|a, b| {
                let da = (run(*a, 2000, &mut g).1 - 0.4).abs();
                let db = (run(*b, 2000, &mut g).1 - 0.4).abs();
                da.total_cmp(&db)
            })
            .unwrap();
        let steps = 200_000;
        let (path, rate) = run(eps, steps, &mut g);
        let edges: Vec<f64> = (1..10).map(|k| quantile(&path, k as f64 / 10.0)).collect();
        let bin = |x: f64| edges.partition_point(|&e| e < x);
        let mut joint = [[0.0f64; 10]; 10];
        for w in path.windows(2) {
            joint[bin(w[0])][bin(w[1])] += 1.0 / steps as f64;
        }
        let tv: f64 = (0..10)
            .flat_map(|i| (0..10).map(move |j| (i, j)))
            .map(|(i, j)| 0.5 * (joint[i][j] - joint[j][i]).abs())
            .sum();
        tvs.push((sampler.name(), tv, rate));
    }
    let tv_ok = tvs.iter().all(|(_, tv, _)| *tv < 0.05);
    check(
        medians_ok && cover_xi >= 17 && cover_sigma >= 17 && tv_ok,
        format!(
            "medians within 0.1: {medians_ok}; 95% coverage xi {cover_xi}/20, sigma {cover_sigma}/20; detailed-balance TV {}",
            tvs.iter()
                .map(|(s, tv, rate)| format!("{s} {tv:.4} at acceptance {rate:.2}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

/// mMALA against random-walk MH at equal budgets on one Case 1 realisation.
fn efficiency_ordering() -> Outcome {
    let case = nsextremes::cases::builtin_case(CaseLabel::Case1).unwrap();
    let config = StudyConfig {
        seed: 7,
        ..StudyConfig::default()
    };
    let sample = study::simulate_realisation(&case, &config, 0).unwrap();
    let spline = BasisSpec::default_for(BasisKind::Spline);
    let model = Model::new(sample, &spline, &spline).unwrap();
    let mut ess = Vec::new();
    for sampler in [Sampler::MMala, Sampler::MH] {
        let cfg = ChainConfig {
            sampler,
            seed: 70,
            ..ChainConfig::default()
        };
        let draws = mcmc::run_chain(&model, &cfg, None).map_err(|e| e.to_string())?;
        ess.push((
            metrics::draws_ess(&draws).unwrap(),
            metrics::ess_per_hour(&draws).unwrap(),
        ));
    }
    check(
        ess[0].0 > ess[1].0,
        format!(
            "minimum ESS over monitored summaries: mMALA {:.1} ({:.0}/h), MH {:.1} ({:.0}/h)",
            ess[0].0, ess[0].1, ess[1].0, ess[1].1
        ),
    )
}

/// Scaled-down comparison study on Case 2.
fn study_reproduction() -> Outcome {
    let bases: Vec<BasisSpec> = [BasisKind::Spline, BasisKind::Constant, BasisKind::Fourier, BasisKind::GaussianProcess]
        .into_iter()
        .map(BasisSpec::default_for)
        .collect();
    let config = StudyConfig {
        cases: vec![CaseLabel::Case2],
        bases,
        methods: vec![Method::MMala],
        realisations: 5,
        seed: 8,
        sample_size: Some(1000),
        truth_replicates: 10_000,
        ..StudyConfig::default()
    };
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-study");
    // Start from scratch: the study resumes from checkpoints it finds.
    let _ = std::fs::remove_dir_all(&out);
    let result = study::run_study(&config, &out, "acceptance").map_err(|e| e.to_string())?;
    if !result.failures.is_empty() {
        return Err(format!("failed jobs: {:?}", result.failures));
    }
    let median = |basis: &str, sector: Sector| {
        result
            .summary_for(CaseLabel::Case2, basis, Method::MMala, sector, "kl")
            .map(|b| b.median)
            .ok_or_else(|| format!("no KL summary for {basis}/{sector}"))
    };
    let west_constant = median("constant", Sector::W)?;
    let west_spline = median("spline", Sector::W)?;
    let omni: Vec<(&str, f64)> = ["spline", "fourier", "gp"]
        .into_iter()
        .map(|b| median(b, Sector::Omni).map(|m| (b, m)))
        .collect::<Result<_, _>>()?;
    let lo = omni.iter().map(|o| o.1).fold(f64::INFINITY, f64::min);
    let hi = omni.iter().map(|o| o.1).fold(0.0, f64::max);
    check(
        west_constant > west_spline && hi <= 2.0 * lo,
        format!(
            "median W-octant KL constant {west_constant:.4} vs spline {west_spline:.4}; omni KL medians {}",
            omni.iter().map(|(b, m)| format!("{b} {m:.4}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

/// Small penalised problems in the regular regime: shape above −1/2 at every
/// observation at the optimum, where the expected-information weights are
/// defined. Non-regular optima can be multimodal; see `irls_nonregular.rs`.
fn irls_instances() -> Vec<(CaseLabel, BasisSpec, BasisSpec, f64, f64)> {
    vec![
        (CaseLabel::Case1, BasisSpec::fourier(1), BasisSpec::spline(5), 10.0, 1.0),
        (CaseLabel::Case2, BasisSpec::constant(), BasisSpec::gaussian_process(4, 0.6), 1e-2, 10.0),
        (CaseLabel::Case3, BasisSpec::spline(4), BasisSpec::fourier(2), 100.0, 1e-3),
        (CaseLabel::Case1, BasisSpec::fourier(2), BasisSpec::fourier(2), 100.0, 1e-2),
        (CaseLabel::Case2, BasisSpec::spline(5), BasisSpec::spline(5), 10.0, 10.0),
        (CaseLabel::Case2, BasisSpec::gaussian_process(5, 0.6), BasisSpec::constant(), 1e3, 0.1),
    ]
}

/// IRLS against the best of 20 randomly restarted Nelder-Mead runs.
fn irls_equivalence() -> Outcome {
    let mut excess = Vec::new();
    for (t, (label, xs, ns, lx, ln)) in irls_instances().iter().enumerate() {
        let case = nsextremes::cases::builtin_case(*label).unwrap();
        let mut g = rng::stream(9, &[t as u64]);
        let sample = simulate_sample(&case, &mut g, Some(100), 1.0).unwrap();
        let model = Model::new(sample, xs, ns).unwrap();
        let controls = IrlsControls::default();
        let init = mle::initial_state(&model, *lx, *ln, &controls).unwrap();
        let fit = mle::irls_fit(&model, *lx, *ln, &init, &controls).map_err(|e| e.to_string())?;
        let px = xs.p;
        let unflatten = |x: &[f64]| CoefficientState {
            beta_xi: x[..px].to_vec(),
            beta_nu: x[px..].to_vec(),
            lambda_xi: *lx,
            lambda_nu: *ln,
        };
        let objective = |x: &[f64]| mle::penalised_nll(&model, &unflatten(x)).unwrap();
        let flat: Vec<f64> = init.beta_xi.iter().chain(&init.beta_nu).copied().collect();
        let mut best = (Vec::new(), f64::INFINITY);
        for _ in 0..20 {
            let x0: Vec<f64> = loop {
                let cand: Vec<f64> = flat
                    .iter()
                    .enumerate()
                    .map(|(k, v)| {
                        let z: f64 = g.sample(StandardNormal);
                        if k < px {
                            v + 0.1 * z
                        } else {
                            v * (1.0 + 0.2 * z).max(0.2)
                        }
                    })
                    .collect();
                if objective(&cand).is_finite() {
                    break cand;
                }
            };
            let run = nelder_mead(&objective, &x0, 0.1, 200_000);
            if run.1 < best.1 {
                best = run;
            }
        }
        let min_xi = model.pointwise(&unflatten(&best.0)).xi.iter().copied().fold(f64::INFINITY, f64::min);
        if min_xi <= -0.5 {
            return Err(format!("instance {t} is not regular: optimum has shape {min_xi:.3}"));
        }
        excess.push((fit.penalised_nll - best.1, fit.iterations));
    }
    let worst = excess.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max);
    check(
        worst <= 1e-4,
        format!(
            "IRLS minus best restart per instance: {}",
            excess.iter().map(|(e, it)| format!("{e:.1e} ({it} it)")).collect::<Vec<_>>().join(", ")
        ),
    )
}

/// ESS of iid and AR(1) chains.
fn ess_formula() -> Outcome {
    let mut g = rng::stream(10, &[10]);
    let m = 100_000;
    let iid: Vec<f64> = (0..m).map(|_| g.sample(StandardNormal)).collect();
    let phi = 0.9;
    let mut ar = Vec::with_capacity(m);
    let mut x = 0.0;
    for _ in 0..m {
        x = phi * x + g.sample::<f64, _>(StandardNormal);
        ar.push(x);
    }
    let e_iid = metrics::effective_sample_size(&iid).unwrap() / m as f64;
    let e_ar = metrics::effective_sample_size(&ar).unwrap() / m as f64;
    let want = (1.0 - phi) / (1.0 + phi);
    check(
        (e_iid - 1.0).abs() <= 0.1 && (e_ar / want - 1.0).abs() <= 0.2,
        format!("iid ESS/m {e_iid:.3}; AR(1) ESS/m {e_ar:.4} vs {want:.4}"),
    )
}

type Criterion = (usize, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "derivative correctness", derivative_correctness),
        (2, "expected-information correctness", expected_information),
        (3, "conjugacy", conjugacy),
        (4, "oracle equivalence of distances", metric_oracles),
        (5, "return-value oracle", return_value_oracle),
        (6, "sampler validity", sampler_validity),
        (7, "efficiency ordering", efficiency_ordering),
        (8, "study-level qualitative reproduction", study_reproduction),
        (9, "IRLS optimiser equivalence", irls_equivalence),
        (10, "ESS formula", ess_formula),
    ];
    let selected: Option<Vec<usize>> = std::env::var("NSX_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    // `cargo test` forwards libtest flags; listing mode must not run anything.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut failed = 0;
    for (id, name, run) in criteria {
        if selected.as_ref().is_some_and(|s| !s.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {id:>2} [PRIMARY] {name}: PASS ({d}) [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("criterion {id:>2} [PRIMARY] {name}: FAIL ({d}) [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
