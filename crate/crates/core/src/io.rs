//! Delimited-text persistence. Every file starts with `#` comment lines (at
//! least `# config=<hash>`), then one header row naming the columns, then
//! comma-separated rows. Reals are written in shortest round-trip form so
//! files are byte-stable.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gpd::PeaksSample;
use crate::mle::{CoefficientState, CvResult};

/// A parsed or to-be-written table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub comments: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(config_hash: &str, columns: &[&str]) -> Self {
        Table {
            comments: vec![format!("config={config_hash}")],
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.comments {
            out.push_str("# ");
            out.push_str(c);
            out.push('\n');
        }
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut t = Table::default();
        let mut header = false;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            if let Some(c) = line.strip_prefix('#') {
                if header {
                    return Err(parse_err(path, i, "comment after the header row"));
                }
                t.comments.push(c.trim().to_string());
                continue;
            }
            let cells: Vec<String> = line.split(',').map(|c| c.trim().to_string()).collect();
            if !header {
                t.columns = cells;
                header = true;
            } else {
                if cells.len() != t.columns.len() {
                    return Err(parse_err(
                        path,
                        i,
                        &format!("{} fields, header has {}", cells.len(), t.columns.len()),
                    ));
                }
                t.rows.push(cells);
            }
        }
        if !header {
            return Err(parse_err(path, 0, "missing header row"));
        }
        Ok(t)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Table::parse(path, &text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.render().as_bytes())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// `key=value` pairs from the comment lines.
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.comments
            .iter()
            .flat_map(|c| c.split_whitespace())
            .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
    }
}

fn parse_err(path: &Path, line: usize, msg: &str) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: line + 1,
        msg: msg.to_string(),
    }
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

pub fn parse_f64(path: &Path, row: usize, s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| parse_err(path, row, &format!("'{s}' is not a number")))
}

/// Write via a temporary sibling and rename, creating parent directories.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp: PathBuf = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Header of a sample file.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleHeader {
    pub case: String,
    pub seed: u64,
    pub period: f64,
}

pub fn sample_table(sample: &PeaksSample, header: &SampleHeader, config_hash: &str) -> Table {
    let mut t = Table {
        comments: vec![
            format!("case={} seed={} period={}", header.case, header.seed, header.period),
            format!("config={config_hash}"),
        ],
        columns: vec!["angle_deg".into(), "size".into()],
        rows: Vec::with_capacity(sample.len()),
    };
    for (a, y) in sample.angles.iter().zip(&sample.sizes) {
        t.push(vec![fmt_f64(*a), fmt_f64(*y)]);
    }
    t
}

pub fn write_sample(path: &Path, sample: &PeaksSample, header: &SampleHeader, config_hash: &str) -> Result<()> {
    sample_table(sample, header, config_hash).write(path)
}

pub fn read_sample(path: &Path) -> Result<(PeaksSample, SampleHeader)> {
    let t = Table::read(path)?;
    if t.columns != ["angle_deg", "size"] {
        return Err(parse_err(path, 0, "expected columns angle_deg,size"));
    }
    let header = SampleHeader {
        case: t.meta("case").unwrap_or("unknown").to_string(),
        seed: t.meta("seed").and_then(|s| s.parse().ok()).unwrap_or(0),
        period: t.meta("period").and_then(|s| s.parse().ok()).unwrap_or(1.0),
    };
    let mut angles = Vec::with_capacity(t.rows.len());
    let mut sizes = Vec::with_capacity(t.rows.len());
    for (i, r) in t.rows.iter().enumerate() {
        angles.push(parse_f64(path, i, &r[0])?);
        sizes.push(parse_f64(path, i, &r[1])?);
    }
    Ok((PeaksSample::new(sizes, angles, header.period)?, header))
}

/// One row per state: `beta_xi_0.., beta_nu_0.., lambda_xi, lambda_nu`.
pub fn draws_table(states: &[CoefficientState], config_hash: &str) -> Table {
    let (px, pn) = states.first().map_or((0, 0), |s| (s.beta_xi.len(), s.beta_nu.len()));
    let mut cols: Vec<String> = (0..px).map(|k| format!("beta_xi_{k}")).collect();
    cols.extend((0..pn).map(|k| format!("beta_nu_{k}")));
    cols.push("lambda_xi".into());
    cols.push("lambda_nu".into());
    let mut t = Table {
        comments: vec![format!("config={config_hash}")],
        columns: cols,
        rows: Vec::with_capacity(states.len()),
    };
    for s in states {
        let mut r: Vec<String> = s.beta_xi.iter().chain(&s.beta_nu).map(|&v| fmt_f64(v)).collect();
        r.push(fmt_f64(s.lambda_xi));
        r.push(fmt_f64(s.lambda_nu));
        t.push(r);
    }
    t
}

pub fn read_draws(path: &Path) -> Result<Vec<CoefficientState>> {
    let t = Table::read(path)?;
    let px = t.columns.iter().filter(|c| c.starts_with("beta_xi_")).count();
    let pn = t.columns.iter().filter(|c| c.starts_with("beta_nu_")).count();
    if px + pn + 2 != t.columns.len() || px == 0 || pn == 0 {
        return Err(parse_err(path, 0, "unrecognised draws header"));
    }
    t.rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let v = r.iter().map(|s| parse_f64(path, i, s)).collect::<Result<Vec<_>>>()?;
            Ok(CoefficientState {
                beta_xi: v[..px].to_vec(),
                beta_nu: v[px..px + pn].to_vec(),
                lambda_xi: v[px + pn],
                lambda_nu: v[px + pn + 1],
            })
        })
        .collect()
}

pub fn cv_table(cv: &CvResult, config_hash: &str) -> Table {
    let mut t = Table::new(
        config_hash,
        &["lambda_xi", "lambda_nu", "violations", "heldout_nll", "failed_folds", "score", "selected"],
    );
    for c in &cv.surface {
        let selected = c.lambda_xi == cv.lambda_xi && c.lambda_nu == cv.lambda_nu;
        t.push(vec![
            fmt_f64(c.lambda_xi),
            fmt_f64(c.lambda_nu),
            c.violations.to_string(),
            fmt_f64(c.heldout_nll),
            c.failed_folds.to_string(),
            fmt_f64(c.score()),
            (selected as u8).to_string(),
        ]);
    }
    t
}
