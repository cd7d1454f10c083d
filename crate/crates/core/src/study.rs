//! Fit pipeline shared by the command line and the comparison study, and the
//! study harness: a (case × basis × method) grid over sample realisations,
//! compared with truth return-value distributions and aggregated into
//! box-whisker and efficiency tables.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::basis::{BasisKind, BasisSpec};
use crate::cases::{builtin_case, simulate_sample, CaseLabel, CaseSpec};
use crate::error::{Error, Result};
use crate::gpd::PeaksSample;
use crate::io::{self, fmt_f64, Table};
use crate::mcmc::{self, ChainConfig, PosteriorDraws, Sampler};
use crate::metrics;
use crate::mle::{self, CvResult, FitResult, MleControls};
use crate::model::Model;
use crate::retval::{self, EmpiricalDistribution, ParamSource, ReturnControls, ReturnValues, Sector};
use crate::{par, rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "mle")]
    Mle,
    #[serde(rename = "mh")]
    Mh,
    #[serde(rename = "mmala")]
    MMala,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mle => "mle",
            Method::Mh => "mh",
            Method::MMala => "mmala",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mle" => Ok(Method::Mle),
            "mh" => Ok(Method::Mh),
            "mmala" => Ok(Method::MMala),
            _ => Err(Error::Config(format!("unknown method '{s}' (expected mle, mh or mmala)"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything one fit produces.
#[derive(Clone, Debug)]
pub struct FitOutput {
    pub draws: PosteriorDraws,
    /// Cross-validation surface and full-sample fit (MLE only).
    pub cv: Option<CvResult>,
    pub fit: Option<FitResult>,
}

/// Fit `model` by `method`. `seed` overrides the chain seed.
pub fn fit_model(model: &Model, method: Method, chain: &ChainConfig, mle: &MleControls, seed: u64) -> Result<FitOutput> {
    match method {
        Method::Mle => {
            let run = mle::run_mle(model, mle, seed)?;
            Ok(FitOutput {
                draws: run.draws,
                cv: Some(run.cv),
                fit: Some(run.fit),
            })
        }
        Method::Mh | Method::MMala => {
            let cfg = ChainConfig {
                sampler: if method == Method::Mh { Sampler::MH } else { Sampler::MMala },
                seed,
                ..chain.clone()
            };
            Ok(FitOutput {
                draws: mcmc::run_chain(model, &cfg, None)?,
                cv: None,
                fit: None,
            })
        }
    }
}

/// Pointwise 2.5/50/97.5% of `ξ(θ)` and `σ(θ)` over the draws at each angle:
/// rows `[θ, ξ₀.₀₂₅, ξ₀.₅, ξ₀.₉₇₅, σ₀.₀₂₅, σ₀.₅, σ₀.₉₇₅]`.
pub fn curve_quantiles(
    draws: &PosteriorDraws,
    xi_spec: &BasisSpec,
    nu_spec: &BasisSpec,
    angles: &[f64],
) -> Result<Vec<[f64; 7]>> {
    if draws.is_empty() {
        return Err(Error::Contract("no draws to summarise".into()));
    }
    let mut scratch = Vec::new();
    angles
        .iter()
        .map(|&t| {
            let mut xs = Vec::with_capacity(draws.len());
            let mut ss = Vec::with_capacity(draws.len());
            for st in &draws.states {
                let x = xi_spec.curve_at(t, &st.beta_xi, &mut scratch);
                let n = nu_spec.curve_at(t, &st.beta_nu, &mut scratch);
                xs.push(x);
                ss.push(n / (1.0 + x));
            }
            let dx = EmpiricalDistribution::new(Sector::Omni, xs)?;
            let ds = EmpiricalDistribution::new(Sector::Omni, ss)?;
            let q = |d: &EmpiricalDistribution, p| retval::percentile(d, p);
            Ok([
                t,
                q(&dx, 0.025)?,
                q(&dx, 0.5)?,
                q(&dx, 0.975)?,
                q(&ds, 0.025)?,
                q(&ds, 0.5)?,
                q(&ds, 0.975)?,
            ])
        })
        .collect()
}

pub const CURVE_COLUMNS: [&str; 7] = ["theta", "xi_q025", "xi_q50", "xi_q975", "sigma_q025", "sigma_q50", "sigma_q975"];

/// Integer-degree grid `0, 1, …, 359`.
pub fn degree_grid() -> Vec<f64> {
    (0..360).map(f64::from).collect()
}

/// Statistics comparing a model return-value distribution with the truth.
pub const STATISTICS: [&str; 6] = ["ks", "cvm", "kl", "q375_model", "q375_truth", "q375_diff"];

/// `(statistic, value)` for one sector, truth as the reference distribution.
pub fn compare_sector(truth: &EmpiricalDistribution, model: &EmpiricalDistribution, kl_grid: usize) -> Result<Vec<(&'static str, f64)>> {
    if truth.sector != model.sector {
        return Err(Error::Contract(format!(
            "comparing sector {} with sector {}",
            truth.sector, model.sector
        )));
    }
    let qt = retval::percentile(truth, retval::CENTRAL_PERCENTILE)?;
    let qm = retval::percentile(model, retval::CENTRAL_PERCENTILE)?;
    Ok(vec![
        ("ks", metrics::ks_distance(truth, model)?),
        ("cvm", metrics::cvm_distance(truth, model)?),
        ("kl", metrics::kl_divergence(truth, model, kl_grid)?),
        ("q375_model", qm),
        ("q375_truth", qt),
        ("q375_diff", qm - qt),
    ])
}

/// Median, quartiles and 2.5/97.5% of a set of values (order irrelevant).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxWhisker {
    pub n: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub q025: f64,
    pub q975: f64,
}

pub fn box_whisker(values: &[f64]) -> Result<BoxWhisker> {
    let d = EmpiricalDistribution::new(Sector::Omni, values.to_vec())?;
    let q = |p| retval::percentile(&d, p);
    Ok(BoxWhisker {
        n: values.len(),
        median: q(0.5)?,
        q25: q(0.25)?,
        q75: q(0.75)?,
        q025: q(0.025)?,
        q975: q(0.975)?,
    })
}

/// Study grid. Seeds of sample realisations depend only on `(seed, case,
/// realisation)`, so every basis and method sees the same samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub cases: Vec<CaseLabel>,
    pub bases: Vec<BasisSpec>,
    pub methods: Vec<Method>,
    pub realisations: usize,
    pub seed: u64,
    /// Sample size; the case's expected total when absent.
    pub sample_size: Option<usize>,
    pub chain: ChainConfig,
    pub mle: MleControls,
    pub returns: ReturnControls,
    /// Replicates for the truth reference distributions.
    pub truth_replicates: usize,
    pub kl_grid: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            cases: vec![CaseLabel::Case1, CaseLabel::Case2, CaseLabel::Case3],
            bases: vec![BasisSpec::spline(crate::basis::DEFAULT_SPLINE_P), BasisSpec::constant()],
            methods: vec![Method::MMala, Method::Mle],
            realisations: 5,
            seed: 0,
            sample_size: None,
            chain: ChainConfig::default(),
            mle: MleControls::default(),
            returns: ReturnControls::default(),
            truth_replicates: 10_000,
            kl_grid: metrics::KL_GRID_SIZE,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.realisations == 0 {
            return Err(Error::Config("realisations must be at least 1".into()));
        }
        if self.cases.is_empty() || self.bases.is_empty() || self.methods.is_empty() {
            return Err(Error::Config("cases, bases and methods must be non-empty".into()));
        }
        if self.cases.contains(&CaseLabel::Custom) {
            return Err(Error::Config("studies run built-in cases only".into()));
        }
        for b in &self.bases {
            b.validate()?;
        }
        self.chain.validate()?;
        Ok(())
    }
}

/// One comparison statistic of one realisation.
#[derive(Clone, Debug, PartialEq)]
pub struct StatRow {
    pub case: CaseLabel,
    pub basis: String,
    pub method: Method,
    pub realisation: usize,
    pub sector: Sector,
    pub statistic: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EssRow {
    pub case: CaseLabel,
    pub basis: String,
    pub method: Method,
    pub realisation: usize,
    pub ess: f64,
    pub elapsed_hours: f64,
    pub ess_per_hour: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub case: CaseLabel,
    pub basis: String,
    pub method: Method,
    pub sector: Sector,
    pub statistic: String,
    pub summary: BoxWhisker,
}

#[derive(Clone, Debug, Default)]
pub struct StudyResult {
    pub stats: Vec<StatRow>,
    pub ess: Vec<EssRow>,
    pub summary: Vec<SummaryRow>,
    /// `(job, message)` for isolated failures.
    pub failures: Vec<(String, String)>,
}

impl StudyResult {
    pub fn summary_for(&self, case: CaseLabel, basis: &str, method: Method, sector: Sector, statistic: &str) -> Option<&BoxWhisker> {
        self.summary
            .iter()
            .find(|r| r.case == case && r.basis == basis && r.method == method && r.sector == sector && r.statistic == statistic)
            .map(|r| &r.summary)
    }
}

/// Directory label of a basis spec: the kind name, suffixed with `p` when it
/// differs from the default.
pub fn basis_label(spec: &BasisSpec) -> String {
    let kind = match spec.kind {
        BasisKind::Constant => "constant",
        BasisKind::Spline => "spline",
        BasisKind::Fourier => "fourier",
        BasisKind::GaussianProcess => "gp",
    };
    if spec.p == BasisSpec::default_for(spec.kind).p {
        kind.to_string()
    } else {
        format!("{kind}{}", spec.p)
    }
}

pub fn truth_return_values(case: &CaseSpec, controls: &ReturnControls, seed: u64) -> Result<ReturnValues> {
    retval::simulate_return_distribution(ParamSource::Truth(case), case, controls, seed)
}

/// Per-sector ECDF tables (`sector,replicate,value`), replicate order.
pub fn ecdf_tables(rv: &ReturnValues, config_hash: &str) -> Vec<(Sector, Table)> {
    Sector::ALL
        .iter()
        .map(|&s| {
            let mut t = Table::new(config_hash, &["sector", "replicate", "value"]);
            for (r, v) in rv.sector_values(s).into_iter().enumerate() {
                t.push(vec![s.name().to_string(), r.to_string(), fmt_f64(v)]);
            }
            (s, t)
        })
        .collect()
}

pub fn ecdf_file_name(sector: Sector) -> String {
    format!("ecdf_{}.csv", sector.name())
}

/// Read the nine ECDF files written by [`ecdf_tables`] from `dir`.
pub fn read_ecdfs(dir: &Path) -> Result<Vec<EmpiricalDistribution>> {
    Sector::ALL
        .iter()
        .map(|&s| {
            let path = dir.join(ecdf_file_name(s));
            let t = Table::read(&path)?;
            let (cs, cv) = match (t.column("sector"), t.column("value")) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(Error::Parse {
                        path: path.clone(),
                        line: 1,
                        msg: "expected sector and value columns".into(),
                    })
                }
            };
            let mut values = Vec::with_capacity(t.rows.len());
            for (i, r) in t.rows.iter().enumerate() {
                if r[cs] != s.name() {
                    return Err(Error::Contract(format!("{} lists sector {} in row {i}", path.display(), r[cs])));
                }
                values.push(io::parse_f64(&path, i, &r[cv])?);
            }
            EmpiricalDistribution::new(s, values)
        })
        .collect()
}

pub const PERCENTILE_LEVELS: [f64; 6] = [0.025, 0.25, 0.375, 0.5, 0.75, 0.975];

pub fn percentile_table(dists: &[EmpiricalDistribution], config_hash: &str) -> Result<Table> {
    let mut t = Table::new(config_hash, &["sector", "q", "value"]);
    for d in dists {
        for q in PERCENTILE_LEVELS {
            t.push(vec![d.sector.name().into(), fmt_f64(q), fmt_f64(retval::percentile(d, q)?)]);
        }
    }
    Ok(t)
}

struct Job {
    case_idx: usize,
    basis_idx: usize,
    method_idx: usize,
    realisation: usize,
}

struct JobOutput {
    stats: Vec<(Sector, String, f64)>,
    ess: f64,
    elapsed_hours: f64,
}

const STATS_FILE: &str = "stats.csv";
const TIMING_FILE: &str = "timing.csv";

fn job_dir(out: &Path, case: CaseLabel, basis: &str, method: Method, r: usize) -> PathBuf {
    out.join(case.name()).join(basis).join(method.name()).join(r.to_string())
}

fn load_checkpoint(dir: &Path) -> Option<JobOutput> {
    let stats = Table::read(&dir.join(STATS_FILE)).ok()?;
    let timing = Table::read(&dir.join(TIMING_FILE)).ok()?;
    let rows = stats
        .rows
        .iter()
        .map(|r| Some((r[0].parse::<Sector>().ok()?, r[1].clone(), r[2].parse::<f64>().ok()?)))
        .collect::<Option<Vec<_>>>()?;
    let t = timing.rows.first()?;
    Some(JobOutput {
        stats: rows,
        ess: t[0].parse().ok()?,
        elapsed_hours: t[1].parse().ok()?,
    })
}

/// Seed of realisation `r` of case `case`.
pub fn sample_seed(seed: u64, case: CaseLabel, r: usize) -> u64 {
    rng::derive_seed(seed, &[0x5A, case as u64, r as u64])
}

pub fn simulate_realisation(case: &CaseSpec, config: &StudyConfig, r: usize) -> Result<PeaksSample> {
    let n = config.sample_size.unwrap_or_else(|| case.default_n());
    let mut g = rng::seeded(sample_seed(config.seed, case.label, r));
    simulate_sample(case, &mut g, Some(n), 1.0)
}

fn run_job(
    job: &Job,
    config: &StudyConfig,
    case: &CaseSpec,
    truth: &[EmpiricalDistribution],
    out: &Path,
    hash: &str,
) -> Result<JobOutput> {
    let basis = &config.bases[job.basis_idx];
    let method = config.methods[job.method_idx];
    let dir = job_dir(out, case.label, &basis_label(basis), method, job.realisation);
    if let Some(done) = load_checkpoint(&dir) {
        return Ok(done);
    }
    let sample = simulate_realisation(case, config, job.realisation)?;
    let model = Model::new(sample, basis, basis)?;
    let fit_seed = rng::derive_seed(
        config.seed,
        &[0xF1, case.label as u64, job.basis_idx as u64, method as u64, job.realisation as u64],
    );
    let fitted = fit_model(&model, method, &config.chain, &config.mle, fit_seed)?;
    let rv = retval::simulate_return_distribution(
        ParamSource::Draws {
            draws: &fitted.draws,
            xi_spec: basis,
            nu_spec: basis,
        },
        case,
        &config.returns,
        rng::derive_seed(fit_seed, &[0x7E]),
    )?;
    let mut stats = Vec::new();
    for (t, m) in truth.iter().zip(rv.distributions()) {
        for (name, v) in compare_sector(t, &m, config.kl_grid)? {
            stats.push((t.sector, name.to_string(), v));
        }
    }
    let ess = metrics::draws_ess(&fitted.draws)?;
    let output = JobOutput {
        stats,
        ess,
        elapsed_hours: fitted.draws.elapsed_hours,
    };

    io::draws_table(&fitted.draws.states, hash).write(&dir.join("draws.csv"))?;
    let mut timing = Table::new(hash, &["ess", "elapsed_hours"]);
    timing.push(vec![fmt_f64(output.ess), fmt_f64(output.elapsed_hours)]);
    timing.write(&dir.join(TIMING_FILE))?;
    let mut st = Table::new(hash, &["sector", "statistic", "value"]);
    for (s, name, v) in &output.stats {
        st.push(vec![s.name().into(), name.clone(), fmt_f64(*v)]);
    }
    // Written last: its presence marks the job complete.
    st.write(&dir.join(STATS_FILE))?;
    Ok(output)
}

/// Run the grid, writing per-realisation artifacts under
/// `out/<case>/<basis>/<method>/<realisation>/` and aggregate tables under
/// `out/`. Completed realisations are reloaded rather than rerun; failing
/// jobs are reported and skipped.
pub fn run_study(config: &StudyConfig, out: &Path, config_hash: &str) -> Result<StudyResult> {
    config.validate()?;
    let cases = config.cases.iter().map(|&c| builtin_case(c)).collect::<Result<Vec<_>>>()?;
    let truth_controls = ReturnControls {
        replicates: config.truth_replicates,
        ..config.returns.clone()
    };
    let truths = cases
        .iter()
        .map(|c| {
            let dir = out.join(c.label.name()).join("truth");
            if let Ok(d) = read_ecdfs(&dir) {
                if d.iter().all(|e| e.replicates() == config.truth_replicates) {
                    return Ok(d);
                }
            }
            let rv = truth_return_values(c, &truth_controls, rng::derive_seed(config.seed, &[0x77, c.label as u64]))?;
            for (s, t) in ecdf_tables(&rv, config_hash) {
                t.write(&dir.join(ecdf_file_name(s)))?;
            }
            Ok(rv.distributions())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut jobs = Vec::new();
    for case_idx in 0..cases.len() {
        for basis_idx in 0..config.bases.len() {
            for method_idx in 0..config.methods.len() {
                for realisation in 0..config.realisations {
                    jobs.push(Job {
                        case_idx,
                        basis_idx,
                        method_idx,
                        realisation,
                    });
                }
            }
        }
    }
    let outputs = par::map_indexed(jobs.len(), |i| {
        let j = &jobs[i];
        run_job(j, config, &cases[j.case_idx], &truths[j.case_idx], out, config_hash)
    });

    let mut result = StudyResult::default();
    for (job, output) in jobs.iter().zip(outputs) {
        let case = cases[job.case_idx].label;
        let basis = basis_label(&config.bases[job.basis_idx]);
        let method = config.methods[job.method_idx];
        match output {
            Ok(o) => {
                for (sector, statistic, value) in o.stats {
                    result.stats.push(StatRow {
                        case,
                        basis: basis.clone(),
                        method,
                        realisation: job.realisation,
                        sector,
                        statistic,
                        value,
                    });
                }
                result.ess.push(EssRow {
                    case,
                    basis,
                    method,
                    realisation: job.realisation,
                    ess: o.ess,
                    elapsed_hours: o.elapsed_hours,
                    ess_per_hour: o.ess / o.elapsed_hours,
                });
            }
            Err(e) => result.failures.push((
                format!("{case}/{basis}/{method}/{}", job.realisation),
                e.to_string(),
            )),
        }
    }
    result.summary = aggregate(&result.stats)?;
    write_study_tables(&result, out, config_hash)?;
    Ok(result)
}

/// Box-whisker summary per (case, basis, method, sector, statistic), in first
/// appearance order.
pub fn aggregate(stats: &[StatRow]) -> Result<Vec<SummaryRow>> {
    let mut keys: Vec<(CaseLabel, String, Method, Sector, String)> = Vec::new();
    for r in stats {
        let k = (r.case, r.basis.clone(), r.method, r.sector, r.statistic.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(case, basis, method, sector, statistic)| {
            let values: Vec<f64> = stats
                .iter()
                .filter(|r| r.case == case && r.basis == basis && r.method == method && r.sector == sector && r.statistic == statistic)
                .map(|r| r.value)
                .collect();
            Ok(SummaryRow {
                summary: box_whisker(&values)?,
                case,
                basis,
                method,
                sector,
                statistic,
            })
        })
        .collect()
}

fn write_study_tables(result: &StudyResult, out: &Path, hash: &str) -> Result<()> {
    let mut s = Table::new(
        hash,
        &["case", "basis", "method", "sector", "statistic", "n", "median", "q25", "q75", "q025", "q975"],
    );
    for r in &result.summary {
        let b = &r.summary;
        s.push(vec![
            r.case.name().into(),
            r.basis.clone(),
            r.method.name().into(),
            r.sector.name().into(),
            r.statistic.clone(),
            b.n.to_string(),
            fmt_f64(b.median),
            fmt_f64(b.q25),
            fmt_f64(b.q75),
            fmt_f64(b.q025),
            fmt_f64(b.q975),
        ]);
    }
    s.write(&out.join("summary.csv"))?;

    let mut e = Table::new(
        hash,
        &["case", "basis", "method", "realisation", "ess", "elapsed_hours", "ess_per_hour"],
    );
    for r in &result.ess {
        e.push(vec![
            r.case.name().into(),
            r.basis.clone(),
            r.method.name().into(),
            r.realisation.to_string(),
            fmt_f64(r.ess),
            fmt_f64(r.elapsed_hours),
            fmt_f64(r.ess_per_hour),
        ]);
    }
    e.write(&out.join("ess.csv"))?;

    let mut f = Table::new(hash, &["job", "error"]);
    for (job, msg) in &result.failures {
        f.push(vec![job.clone(), msg.replace([',', '\n'], ";")]);
    }
    f.write(&out.join("failures.csv"))
}
