use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use nsextremes::cases::{simulate_sample, truth_curves, CaseSpec};
use nsextremes::io::{self, fmt_f64, SampleHeader, Table};
use nsextremes::mcmc::{DrawSource, PosteriorDraws};
use nsextremes::retval::{self, ParamSource, Sector};
use nsextremes::study::{self, Method, StudyConfig};
use nsextremes::{metrics, par, rng, BasisSpec, Error, Model, PeaksSample, Result};
use serde::Serialize;

use crate::config::{hash_text, read_toml, to_toml, RunConfig};
use crate::Common;

const SAMPLE_TAG: u64 = 0x51;
const FIT_TAG: u64 = 0xF1;
const RETURN_TAG: u64 = 0x7E;

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Case name (case1 .. case6).
    #[arg(long)]
    case: Option<String>,
    /// Number of events (default: the case's expected total).
    #[arg(long)]
    n: Option<usize>,
    /// Draw a Poisson number of events.
    #[arg(long)]
    poisson: bool,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Sample file to fit; otherwise a sample is simulated from the case.
    #[arg(long)]
    sample: Option<PathBuf>,
    #[arg(long)]
    case: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    /// mle, mh or mmala.
    #[arg(long)]
    method: Option<String>,
    /// Basis kind for both parameters (constant, spline, fourier, gp).
    #[arg(long)]
    basis: Option<String>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    /// Bootstrap resamples (mle).
    #[arg(long)]
    m_bs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ReturnArgs {
    /// Fitted run directory.
    #[arg(long, conflicts_with = "truth")]
    run: Option<PathBuf>,
    /// Simulate under the truth of the configured case instead.
    #[arg(long)]
    truth: bool,
    #[arg(long)]
    case: Option<String>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    factor: Option<f64>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Directory of truth ECDF files.
    #[arg(long)]
    truth: PathBuf,
    /// Directories of model ECDF files, one per realisation.
    #[arg(long, required = true, num_args = 1..)]
    model: Vec<PathBuf>,
    #[arg(long)]
    kl_grid: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EssArgs {
    /// Fitted run directory.
    #[arg(long)]
    run: PathBuf,
}

fn base_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    if common.out.is_some() {
        cfg.out = common.out.clone();
    }
    if common.workers.is_some() {
        cfg.workers = common.workers;
    }
    if let Some(w) = cfg.workers {
        if w == 0 {
            return Err(Error::Config("--workers must be positive".into()));
        }
    }
    par::configure_workers(cfg.workers);
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    io::write_atomic(path, text.as_bytes())
}

fn write_config(dir: &Path, cfg: &RunConfig) -> Result<String> {
    let echo = cfg.echo()?;
    write_text(&dir.join("config.toml"), &echo)?;
    Ok(hash_text(&echo))
}

fn sample_for(cfg: &RunConfig, case: &CaseSpec, seed: u64) -> Result<PeaksSample> {
    let fixed = if cfg.poisson {
        None
    } else {
        Some(cfg.n.unwrap_or_else(|| case.default_n()))
    };
    simulate_sample(case, &mut rng::stream(seed, &[SAMPLE_TAG]), fixed, 1.0)
}

fn truth_curve_table(case: &CaseSpec, hash: &str) -> Table {
    let grid = study::degree_grid();
    let (rho, xi, sigma) = truth_curves(case, &grid);
    let mut t = Table::new(hash, &["theta", "rho", "xi", "sigma"]);
    for i in 0..grid.len() {
        t.push(vec![fmt_f64(grid[i]), fmt_f64(rho[i]), fmt_f64(xi[i]), fmt_f64(sigma[i])]);
    }
    t
}

pub fn simulate(common: &Common, args: &SimulateArgs) -> Result<()> {
    let mut cfg = base_config(common)?;
    if args.case.is_some() {
        cfg.case = args.case.clone();
        cfg.custom_case = None;
    }
    if args.n.is_some() {
        cfg.n = args.n;
    }
    cfg.poisson |= args.poisson;
    cfg.validate()?;
    let case = cfg.require_case()?;
    let seed = cfg.seed()?;
    let out = cfg.out_dir();
    let hash = write_config(&out, &cfg)?;
    let sample = sample_for(&cfg, &case, seed)?;
    let header = SampleHeader {
        case: case.label.name().to_string(),
        seed,
        period: sample.period,
    };
    io::write_sample(&out.join("sample.csv"), &sample, &header, &hash)?;
    truth_curve_table(&case, &hash).write(&out.join("truth_curves.csv"))?;
    println!("wrote {} events to {}", sample.len(), out.join("sample.csv").display());
    Ok(())
}

#[derive(Serialize)]
struct FitSummary {
    method: String,
    observations: usize,
    draws: usize,
    source: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    acceptance_xi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    acceptance_nu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_xi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_nu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    penalised_nll: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bootstrap_nonconverged: Option<usize>,
}

#[derive(Serialize, serde::Deserialize)]
struct Timing {
    elapsed_hours: f64,
}

fn parse_basis(name: &str) -> Result<BasisSpec> {
    Ok(BasisSpec::default_for(name.parse()?))
}

pub fn fit(common: &Common, args: &FitArgs) -> Result<()> {
    let mut cfg = base_config(common)?;
    if args.sample.is_some() {
        cfg.sample = args.sample.clone();
    }
    if args.case.is_some() {
        cfg.case = args.case.clone();
        cfg.custom_case = None;
    }
    if args.n.is_some() {
        cfg.n = args.n;
    }
    if let Some(m) = &args.method {
        cfg.method = m.parse()?;
    }
    if let Some(b) = &args.basis {
        cfg.basis_xi = parse_basis(b)?;
        cfg.basis_nu = cfg.basis_xi.clone();
    }
    if let Some(it) = args.iterations {
        cfg.chain.n_iterations = it;
    }
    if let Some(b) = args.burn_in {
        cfg.chain.burn_in = b;
    }
    if let Some(m) = args.m_bs {
        cfg.mle.m_bs = m;
    }
    cfg.validate()?;
    let seed = cfg.seed()?;
    let out = cfg.out_dir();

    let (sample, header) = match &cfg.sample {
        Some(path) => {
            let (s, h) = io::read_sample(path)?;
            if cfg.case.is_none() && cfg.custom_case.is_none() && h.case.parse::<nsextremes::CaseLabel>().is_ok() {
                cfg.case = Some(h.case.clone());
            }
            (s, h)
        }
        None => {
            let case = cfg.require_case()?;
            let s = sample_for(&cfg, &case, seed)?;
            let h = SampleHeader {
                case: case.label.name().into(),
                seed,
                period: 1.0,
            };
            (s, h)
        }
    };
    let hash = write_config(&out, &cfg)?;
    io::write_sample(&out.join("sample.csv"), &sample, &header, &hash)?;

    let model = Model::new(sample, &cfg.basis_xi, &cfg.basis_nu)?;
    let fitted = study::fit_model(
        &model,
        cfg.method,
        &cfg.chain,
        &cfg.mle,
        rng::derive_seed(seed, &[FIT_TAG]),
    )?;
    let draws = &fitted.draws;
    io::draws_table(&draws.states, &hash).write(&out.join("draws.csv"))?;

    let rows = study::curve_quantiles(draws, &cfg.basis_xi, &cfg.basis_nu, &study::degree_grid())?;
    let mut curves = Table::new(&hash, &study::CURVE_COLUMNS);
    for r in rows {
        curves.push(r.iter().map(|&v| fmt_f64(v)).collect());
    }
    curves.write(&out.join("curves.csv"))?;

    let mut summary = FitSummary {
        method: cfg.method.name().into(),
        observations: model.n(),
        draws: draws.len(),
        source: match draws.source {
            DrawSource::Mcmc => "mcmc".into(),
            DrawSource::Bootstrap => "bootstrap".into(),
        },
        acceptance_xi: None,
        acceptance_nu: None,
        lambda_xi: None,
        lambda_nu: None,
        penalised_nll: None,
        converged: None,
        bootstrap_nonconverged: None,
    };
    match (&fitted.cv, &fitted.fit) {
        (Some(cv), Some(fit)) => {
            io::cv_table(cv, &hash).write(&out.join("cv_surface.csv"))?;
            summary.lambda_xi = Some(cv.lambda_xi);
            summary.lambda_nu = Some(cv.lambda_nu);
            summary.penalised_nll = Some(fit.penalised_nll);
            summary.converged = Some(fit.converged);
            summary.bootstrap_nonconverged = Some(draws.converged.iter().filter(|c| !**c).count());
        }
        _ => {
            let mut trace = Table::new(&hash, &["iteration", "step_xi", "step_nu", "lambda_xi", "lambda_nu"]);
            for (i, (st, eps)) in draws.states.iter().zip(&draws.trace).enumerate() {
                trace.push(vec![
                    (cfg.chain.burn_in + i).to_string(),
                    fmt_f64(eps[0]),
                    fmt_f64(eps[1]),
                    fmt_f64(st.lambda_xi),
                    fmt_f64(st.lambda_nu),
                ]);
            }
            trace.write(&out.join("trace.csv"))?;
            summary.acceptance_xi = Some(draws.accept_counts.rate(nsextremes::model::Param::Xi));
            summary.acceptance_nu = Some(draws.accept_counts.rate(nsextremes::model::Param::Nu));
        }
    }
    write_text(&out.join("summary.toml"), &format!("# config={hash}\n{}", to_toml(&summary)?))?;
    write_text(
        &out.join("timing.toml"),
        &to_toml(&Timing {
            elapsed_hours: draws.elapsed_hours,
        })?,
    )?;
    println!("fitted {} draws by {} into {}", draws.len(), cfg.method, out.display());
    Ok(())
}

fn load_run(dir: &Path) -> Result<(RunConfig, PosteriorDraws)> {
    let cfg: RunConfig = read_toml(&dir.join("config.toml"))?;
    let states = io::read_draws(&dir.join("draws.csv"))?;
    let timing: Timing = read_toml(&dir.join("timing.toml"))?;
    let source = if cfg.method == Method::Mle {
        DrawSource::Bootstrap
    } else {
        DrawSource::Mcmc
    };
    let draws = PosteriorDraws {
        states,
        accept_counts: Default::default(),
        elapsed_hours: timing.elapsed_hours,
        source,
        converged: Vec::new(),
        trace: Vec::new(),
    };
    Ok((cfg, draws))
}

fn write_return_values(out: &Path, rv: &retval::ReturnValues, hash: &str) -> Result<()> {
    for (s, t) in study::ecdf_tables(rv, hash) {
        t.write(&out.join(study::ecdf_file_name(s)))?;
    }
    study::percentile_table(&rv.distributions(), hash)?.write(&out.join("percentiles.csv"))
}

pub fn return_values(common: &Common, args: &ReturnArgs) -> Result<()> {
    let apply = |cfg: &mut RunConfig| {
        if let Some(r) = args.replicates {
            cfg.returns.replicates = r;
        }
        if let Some(f) = args.factor {
            cfg.returns.factor = f;
        }
    };
    if args.truth {
        let mut cfg = base_config(common)?;
        if args.case.is_some() {
            cfg.case = args.case.clone();
            cfg.custom_case = None;
        }
        apply(&mut cfg);
        cfg.validate()?;
        let case = cfg.require_case()?;
        let out = cfg.out_dir();
        let hash = write_config(&out, &cfg)?;
        let rv = study::truth_return_values(&case, &cfg.returns, rng::derive_seed(cfg.seed()?, &[RETURN_TAG]))?;
        write_return_values(&out, &rv, &hash)?;
        println!("wrote truth return values to {}", out.display());
        return Ok(());
    }
    let run = args
        .run
        .as_ref()
        .ok_or_else(|| Error::Config("return-values needs --run DIR or --truth".into()))?;
    if !run.join("draws.csv").exists() {
        return Err(Error::Io {
            path: run.join("draws.csv"),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "missing run artifact"),
        });
    }
    let (mut cfg, draws) = load_run(run)?;
    let overrides = base_config(common)?;
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    if args.case.is_some() {
        cfg.case = args.case.clone();
        cfg.custom_case = None;
    }
    apply(&mut cfg);
    cfg.validate()?;
    let case = cfg.require_case()?;
    let out = overrides.out.clone().unwrap_or_else(|| run.join("returns"));
    let hash = write_config(&out, &cfg)?;
    let src = ParamSource::Draws {
        draws: &draws,
        xi_spec: &cfg.basis_xi,
        nu_spec: &cfg.basis_nu,
    };
    let rv = retval::simulate_return_distribution(src, &case, &cfg.returns, rng::derive_seed(cfg.seed()?, &[RETURN_TAG]))?;
    write_return_values(&out, &rv, &hash)?;
    println!(
        "wrote {} replicates per sector to {} ({} state redraws)",
        cfg.returns.replicates,
        out.display(),
        rv.state_resamples
    );
    Ok(())
}

#[derive(Serialize)]
struct CompareConfig<'a> {
    truth: &'a Path,
    models: &'a [PathBuf],
    kl_grid: usize,
}

/// Shared evaluation points for plotting ECDFs: the pooled range split into
/// 200 steps.
fn plot_grid(dists: &[&nsextremes::EmpiricalDistribution]) -> Vec<f64> {
    let lo = dists.iter().map(|d| d.values()[0]).fold(f64::INFINITY, f64::min);
    let hi = dists
        .iter()
        .map(|d| d.values()[d.replicates() - 1])
        .fold(f64::NEG_INFINITY, f64::max);
    (0..=200).map(|i| lo + (hi - lo) * i as f64 / 200.0).collect()
}

pub fn compare(common: &Common, args: &CompareArgs) -> Result<()> {
    let cfg = base_config(common)?;
    let kl_grid = args.kl_grid.unwrap_or(cfg.kl_grid);
    if kl_grid < 16 {
        return Err(Error::Config("kl_grid must be at least 16".into()));
    }
    let out = cfg.out_dir();
    let echo = to_toml(&CompareConfig {
        truth: &args.truth,
        models: &args.model,
        kl_grid,
    })?;
    write_text(&out.join("config.toml"), &echo)?;
    let hash = hash_text(&echo);

    let truth = study::read_ecdfs(&args.truth)?;
    let models = args
        .model
        .iter()
        .map(|d| study::read_ecdfs(d))
        .collect::<Result<Vec<_>>>()?;

    let mut table = Table::new(&hash, &["realisation", "sector", "statistic", "value"]);
    let mut by_key: Vec<((Sector, &'static str), Vec<f64>)> = Vec::new();
    for (r, model) in models.iter().enumerate() {
        for (t, m) in truth.iter().zip(model) {
            for (name, v) in study::compare_sector(t, m, kl_grid)? {
                table.push(vec![r.to_string(), t.sector.name().into(), name.into(), fmt_f64(v)]);
                match by_key.iter_mut().find(|(k, _)| *k == (t.sector, name)) {
                    Some((_, vs)) => vs.push(v),
                    None => by_key.push(((t.sector, name), vec![v])),
                }
            }
        }
    }
    table.write(&out.join("comparison.csv"))?;

    let mut summary = Table::new(
        &hash,
        &["sector", "statistic", "n", "median", "q25", "q75", "q025", "q975"],
    );
    for ((sector, name), vs) in &by_key {
        let b = study::box_whisker(vs)?;
        summary.push(vec![
            sector.name().into(),
            (*name).into(),
            b.n.to_string(),
            fmt_f64(b.median),
            fmt_f64(b.q25),
            fmt_f64(b.q75),
            fmt_f64(b.q025),
            fmt_f64(b.q975),
        ]);
    }
    summary.write(&out.join("summary.csv"))?;

    let mut plot = Table::new(&hash, &["sector", "source", "x", "ecdf"]);
    for (k, t) in truth.iter().enumerate() {
        let mut all = vec![t];
        all.extend(models.iter().map(|m| &m[k]));
        let grid = plot_grid(&all);
        for (idx, d) in all.iter().enumerate() {
            let source = if idx == 0 { "truth".to_string() } else { format!("model{}", idx - 1) };
            for &x in &grid {
                plot.push(vec![t.sector.name().into(), source.clone(), fmt_f64(x), fmt_f64(d.ecdf(x))]);
            }
        }
    }
    plot.write(&out.join("ecdf_plot.csv"))?;
    println!("compared {} model set(s) against the truth into {}", models.len(), out.display());
    Ok(())
}

pub fn ess(common: &Common, args: &EssArgs) -> Result<()> {
    let overrides = base_config(common)?;
    let (cfg, draws) = load_run(&args.run)?;
    let hash = cfg.hash()?;
    let out = overrides.out.clone().unwrap_or_else(|| args.run.clone());
    let mut t = Table::new(&hash, &["summary", "ess"]);
    if draws.source == DrawSource::Mcmc {
        let chains = metrics::monitored_chains(&draws);
        let px = cfg.basis_xi.p;
        let pn = cfg.basis_nu.p;
        for (i, c) in chains.iter().enumerate() {
            let name = if i < px {
                format!("beta_xi_{i}")
            } else if i < px + pn {
                format!("beta_nu_{}", i - px)
            } else if i == px + pn {
                "lambda_xi".into()
            } else {
                "lambda_nu".into()
            };
            t.push(vec![name, fmt_f64(metrics::effective_sample_size(c)?)]);
        }
    }
    let ess = metrics::draws_ess(&draws)?;
    t.push(vec!["min".into(), fmt_f64(ess)]);
    t.write(&out.join("ess.csv"))?;
    // Timing-dependent, so kept out of the hashed artifacts.
    write_text(
        &out.join("ess_rate.toml"),
        &format!(
            "ess = {}\nelapsed_hours = {}\ness_per_hour = {}\n",
            ess,
            draws.elapsed_hours,
            metrics::ess_per_hour(&draws)?
        ),
    )?;
    println!("ESS {ess:.1}, {:.1} per hour", metrics::ess_per_hour(&draws)?);
    Ok(())
}

pub fn study(common: &Common) -> Result<()> {
    let mut cfg: StudyConfig = match &common.config {
        Some(p) => read_toml(p)?,
        None => StudyConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(w) = common.workers {
        if w == 0 {
            return Err(Error::Config("--workers must be positive".into()));
        }
    }
    par::configure_workers(common.workers);
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let echo = to_toml(&cfg)?;
    fs::create_dir_all(&out).map_err(|e| Error::Io {
        path: out.clone(),
        source: e,
    })?;
    write_text(&out.join("study.toml"), &echo)?;
    let result = study::run_study(&cfg, &out, &hash_text(&echo))?;
    println!(
        "study finished: {} statistic rows, {} failures; tables in {}",
        result.stats.len(),
        result.failures.len(),
        out.display()
    );
    for (job, msg) in &result.failures {
        eprintln!("failed {job}: {msg}");
    }
    Ok(())
}
