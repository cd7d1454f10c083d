//! Run configuration: a TOML file, overridden by command-line flags, echoed
//! into every output directory. The echo (which omits the output directory
//! and worker count) is hashed to label every file a run produces.

use std::fs;
use std::path::{Path, PathBuf};

use nsextremes::cases::{builtin_case, CaseLabel, CaseSpec};
use nsextremes::mle::MleControls;
use nsextremes::retval::ReturnControls;
use nsextremes::study::Method;
use nsextremes::{BasisSpec, ChainConfig, Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Built-in case name, `case1` to `case6`.
    pub case: Option<String>,
    /// Fully specified truth; takes precedence over `case`.
    pub custom_case: Option<CaseSpec>,
    /// Existing sample file to fit instead of simulating one.
    pub sample: Option<PathBuf>,
    /// Sample size; the case's expected total when absent.
    pub n: Option<usize>,
    /// Draw a Poisson number of events instead of exactly `n`.
    pub poisson: bool,
    pub method: Method,
    pub basis_xi: BasisSpec,
    pub basis_nu: BasisSpec,
    pub chain: ChainConfig,
    pub mle: MleControls,
    pub returns: ReturnControls,
    pub kl_grid: usize,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            case: None,
            custom_case: None,
            sample: None,
            n: None,
            poisson: false,
            method: Method::MMala,
            basis_xi: BasisSpec::default_for(nsextremes::BasisKind::Spline),
            basis_nu: BasisSpec::default_for(nsextremes::BasisKind::Spline),
            chain: ChainConfig::default(),
            mle: MleControls::default(),
            returns: ReturnControls::default(),
            kl_grid: nsextremes::metrics::KL_GRID_SIZE,
            out: None,
            workers: None,
        }
    }
}

pub fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Config(format!("cannot serialise configuration: {e}")))
}

/// First 16 hex digits of the SHA-256 of `text`.
pub fn hash_text(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => read_toml(p),
            None => Ok(RunConfig::default()),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("a seed is required (--seed or `seed` in the config file)".into()))
    }

    /// The truth named by the configuration, if any.
    pub fn case_spec(&self) -> Result<Option<CaseSpec>> {
        if let Some(c) = &self.custom_case {
            if c.label != CaseLabel::Custom {
                return Err(Error::Config("custom_case must have label = \"custom\"".into()));
            }
            c.validate()?;
            return Ok(Some(c.clone()));
        }
        match &self.case {
            Some(name) => Ok(Some(builtin_case(name.parse()?)?)),
            None => Ok(None),
        }
    }

    pub fn require_case(&self) -> Result<CaseSpec> {
        self.case_spec()?
            .ok_or_else(|| Error::Config("no case given (--case, `case` or `custom_case`)".into()))
    }

    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        self.case_spec()?;
        if let Some(p) = &self.sample {
            if !p.exists() {
                return Err(Error::Config(format!("sample file {} does not exist", p.display())));
            }
        }
        self.basis_xi.validate()?;
        self.basis_nu.validate()?;
        self.chain.validate()?;
        if self.kl_grid < 16 {
            return Err(Error::Config("kl_grid must be at least 16".into()));
        }
        Ok(())
    }

    pub fn echo(&self) -> Result<String> {
        to_toml(self)
    }

    pub fn hash(&self) -> Result<String> {
        Ok(hash_text(&self.echo()?))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}
