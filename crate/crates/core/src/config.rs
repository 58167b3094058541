//! Experiment configuration and the flat `key = value` config format.
//!
//! ```text
//! # lines starting with '#' are comments
//! n = 64
//! T = 1.0
//! dt = 0.001
//! epsilon = 1
//! beta = 2
//! replicas = 1000
//! seed = 7
//! convention = paper
//! output = out/
//! ```
//!
//! Keys are case-sensitive except that `T` may also be written `t_max`.
//! Unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// Placement of the `n` particles at time zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialConvention {
    /// Particle `k` starts at `k/n`.
    #[default]
    Paper,
    /// Particle `k` starts at `(2k-1)/(2n)`.
    Midpoint,
}

impl InitialConvention {
    /// Starting position of the 1-based particle `k` out of `n`.
    pub fn position(self, k: usize, n: usize) -> f64 {
        match self {
            InitialConvention::Paper => k as f64 / n as f64,
            InitialConvention::Midpoint => (2 * k - 1) as f64 / (2 * n) as f64,
        }
    }

    /// Starting positions of all particles; doubles as the label grid on
    /// which drift paths are sampled.
    pub fn labels(self, n: usize) -> Vec<f64> {
        (1..=n).map(|k| self.position(k, n)).collect()
    }
}

impl FromStr for InitialConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(InitialConvention::Paper),
            "midpoint" => Ok(InitialConvention::Midpoint),
            other => Err(Error::InvalidConfig(format!(
                "unknown initial convention {other:?} (expected paper or midpoint)"
            ))),
        }
    }
}

impl fmt::Display for InitialConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitialConvention::Paper => "paper",
            InitialConvention::Midpoint => "midpoint",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub t_max: f64,
    pub dt: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub replicas: usize,
    pub master_seed: u64,
    pub initial_convention: InitialConvention,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n: 64,
            t_max: 1.0,
            dt: 1e-3,
            epsilon: 1.0,
            beta: 2.0,
            replicas: 1000,
            master_seed: 0,
            initial_convention: InitialConvention::Paper,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn new(n: usize, t_max: f64, dt: f64) -> Self {
        ExperimentConfig {
            n,
            t_max,
            dt,
            ..Default::default()
        }
    }

    pub fn with_replicas(mut self, replicas: usize) -> Self {
        self.replicas = replicas;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_convention(mut self, convention: InitialConvention) -> Self {
        self.initial_convention = convention;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if !(self.t_max.is_finite() && self.t_max > 0.0) {
            return bad(format!("T must be positive and finite, got {}", self.t_max));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be positive and finite, got {}", self.dt));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return bad(format!(
                "epsilon must be non-negative, got {}",
                self.epsilon
            ));
        }
        if !(self.beta.is_finite() && self.beta > 1.0) {
            return bad(format!("beta must exceed 1, got {}", self.beta));
        }
        if self.replicas == 0 {
            return bad("replicas must be at least 1".into());
        }
        Ok(())
    }

    /// Uniform simulation grid `0, dt, 2dt, ..., T` (last step truncated).
    pub fn grid(&self) -> Result<TimeGrid> {
        self.validate()?;
        TimeGrid::uniform(self.t_max, self.dt)
    }

    pub fn labels(&self) -> Vec<f64> {
        self.initial_convention.labels(self.n)
    }

    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {value:?}")))
        }
        match key {
            "n" => self.n = num(key, value)?,
            "T" | "t_max" => self.t_max = num(key, value)?,
            "dt" => self.dt = num(key, value)?,
            "epsilon" | "eps" => self.epsilon = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "replicas" => self.replicas = num(key, value)?,
            "seed" | "master_seed" => self.master_seed = num(key, value)?,
            "convention" | "initial_convention" => self.initial_convention = value.parse()?,
            "output" => self.output = Some(PathBuf::from(value)),
            other => return Err(Error::InvalidConfig(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parse config text on top of the defaults. Returns which keys were set
    /// so callers can tell an explicit seed from the default one.
    pub fn parse_str(text: &str, origin: &Path) -> Result<(Self, Vec<String>)> {
        let mut config = ExperimentConfig::default();
        let mut seen = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: origin.to_path_buf(),
                line: idx + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected key = value, got {line:?}")))?;
            let key = key.trim();
            config
                .set(key, value.trim())
                .map_err(|e| parse_err(e.to_string()))?;
            seen.push(key.to_string());
        }
        Ok((config, seen))
    }

    pub fn from_file(path: &Path) -> Result<(Self, Vec<String>)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text, path)
    }

    /// Render in the same `key = value` format [`ExperimentConfig::parse_str`] reads.
    pub fn to_config_string(&self) -> String {
        let mut out = format!(
            "n = {}\nT = {}\ndt = {}\nepsilon = {}\nbeta = {}\nreplicas = {}\nseed = {}\nconvention = {}\n",
            self.n,
            self.t_max,
            self.dt,
            self.epsilon,
            self.beta,
            self.replicas,
            self.master_seed,
            self.initial_convention
        );
        if let Some(output) = &self.output {
            out.push_str(&format!("output = {}\n", output.display()));
        }
        out
    }
}
