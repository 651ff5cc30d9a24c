//! Coreset selection over gradient feature rows.

mod craig;
mod nnls;
mod omp;
mod oracle;
mod random;

use std::fmt;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::GradientFeatures;

pub use craig::{craig_select, craig_select_traced, CraigTrace, DistanceMatrix};
pub use nnls::{nonneg_ridge_fit, ridge_objective};
pub use omp::{omp_select, omp_select_traced, residual_objective, OmpTrace};
pub use oracle::{brute_force_subset_oracle, OracleResult};
pub use random::random_select;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Craig,
    GradMatchOmp,
    Random,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Craig => "craig",
            Method::GradMatchOmp => "gradmatch-omp",
            Method::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "craig" => Some(Method::Craig),
            "gradmatch-omp" | "omp" => Some(Method::GradMatchOmp),
            "random" => Some(Method::Random),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    Fraction(f64),
    Count(usize),
}

impl Budget {
    /// Number of units to select out of `m`, clamped to `[1, m]`.
    pub fn resolve(self, m: usize) -> Result<usize> {
        if m == 0 {
            return Err(Error::EmptyInput("no units to select from".into()));
        }
        match self {
            Budget::Fraction(f) => {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::InvalidArgument(format!("budget fraction {f} outside (0, 1]")));
                }
                Ok(((f * m as f64).round() as usize).clamp(1, m))
            }
            Budget::Count(k) => {
                if k == 0 || k > m {
                    return Err(Error::InvalidArgument(format!("budget {k} outside [1, {m}]")));
                }
                Ok(k)
            }
        }
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Fraction(x) => write!(f, "{x}"),
            Budget::Count(k) => write!(f, "{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub method: Method,
    pub budget: Budget,
    pub omp_lambda: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { method: Method::Craig, budget: Budget::Fraction(0.5), omp_lambda: 0.0, tolerance: 0.0, seed: 0 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omp_lambda >= 0.0 && self.omp_lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("omp_lambda must be finite and >= 0, got {}", self.omp_lambda)));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance must be >= 0, got {}", self.tolerance)));
        }
        if let Budget::Fraction(f) = self.budget {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidArgument(format!("budget fraction {f} outside (0, 1]")));
            }
        }
        Ok(())
    }

    /// Short stable digest of the configuration, used in provenance lines.
    pub fn hash(&self) -> u64 {
        let text = format!(
            "method={};budget={:?};lambda={:e};tol={:e};seed={}",
            self.method.name(),
            self.budget,
            self.omp_lambda,
            self.tolerance,
            self.seed
        );
        hash64(text.as_bytes())
    }
}

pub(crate) fn hash64(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(head)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub solver: String,
    pub config_hash: u64,
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coreset {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub provenance: Provenance,
}

impl Coreset {
    pub fn new(indices: Vec<usize>, weights: Vec<f64>, provenance: Provenance) -> Result<Self> {
        let c = Coreset { indices, weights, provenance };
        c.check()?;
        Ok(c)
    }

    /// Every unit of an `m`-unit problem with weight one.
    pub fn full(m: usize, provenance: Provenance) -> Self {
        Coreset { indices: (0..m).collect(), weights: vec![1.0; m], provenance }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn check(&self) -> Result<()> {
        if self.indices.len() != self.weights.len() {
            return Err(Error::Dimension(format!("{} indices but {} weights", self.indices.len(), self.weights.len())));
        }
        let mut seen = self.indices.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("coreset indices repeat".into()));
        }
        if let Some(w) = self.weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidArgument(format!("coreset weight {w} is not a finite nonnegative number")));
        }
        Ok(())
    }

    /// Maps unit indices to sample indices; each sample takes its unit's
    /// weight. The result is sorted by sample index.
    pub fn expand(&self, index_map: &[Vec<usize>]) -> Result<Coreset> {
        let mut pairs = Vec::new();
        for (&u, &w) in self.indices.iter().zip(&self.weights) {
            let members = index_map
                .get(u)
                .ok_or_else(|| Error::Dimension(format!("unit {u} outside index map of {} units", index_map.len())))?;
            pairs.extend(members.iter().map(|&s| (s, w)));
        }
        pairs.sort_by_key(|p| p.0);
        let (indices, weights) = pairs.into_iter().unzip();
        Coreset::new(indices, weights, self.provenance.clone())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# provenance: solver={} config_hash={:016x} epoch={}\n",
            self.provenance.solver, self.provenance.config_hash, self.provenance.epoch
        );
        for (i, w) in self.indices.iter().zip(&self.weights) {
            out.push_str(&format!("{i} {w}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut provenance = None;
        let mut indices = Vec::new();
        let mut weights = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line_no = no + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("# provenance:") {
                provenance = Some(parse_provenance(rest, line_no)?);
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(i), Some(w), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Parse { line: line_no, msg: "expected `index weight`".into() });
            };
            let i = i.parse::<usize>().map_err(|e| Error::Parse { line: line_no, msg: format!("index: {e}") })?;
            let w = w.parse::<f64>().map_err(|e| Error::Parse { line: line_no, msg: format!("weight: {e}") })?;
            indices.push(i);
            weights.push(w);
        }
        let provenance = provenance.ok_or(Error::Parse { line: 1, msg: "missing provenance line".into() })?;
        Coreset::new(indices, weights, provenance)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Coreset::from_text(&text).map_err(|e| match e {
            Error::Parse { line, msg } => Error::Format { path: path.into(), msg: format!("line {line}: {msg}") },
            other => other,
        })
    }
}

fn parse_provenance(rest: &str, line: usize) -> Result<Provenance> {
    let mut solver = None;
    let mut hash = None;
    let mut epoch = None;
    for field in rest.split_whitespace() {
        let (k, v) = field.split_once('=').ok_or(Error::Parse { line, msg: format!("bad provenance field `{field}`") })?;
        match k {
            "solver" => solver = Some(v.to_string()),
            "config_hash" => {
                hash = Some(u64::from_str_radix(v, 16).map_err(|e| Error::Parse { line, msg: format!("config_hash: {e}") })?)
            }
            "epoch" => epoch = Some(v.parse().map_err(|e| Error::Parse { line, msg: format!("epoch: {e}") })?),
            _ => return Err(Error::Parse { line, msg: format!("unknown provenance field `{k}`") }),
        }
    }
    match (solver, hash, epoch) {
        (Some(solver), Some(config_hash), Some(epoch)) => Ok(Provenance { solver, config_hash, epoch }),
        _ => Err(Error::Parse { line, msg: "provenance needs solver, config_hash and epoch".into() }),
    }
}

/// Runs the configured solver. `epoch` is recorded in the provenance.
pub fn select(features: &GradientFeatures, cfg: &SolverConfig, epoch: usize) -> Result<Coreset> {
    cfg.validate()?;
    let mut c = match cfg.method {
        Method::Craig => craig_select(features, cfg)?,
        Method::GradMatchOmp => omp_select(features, cfg)?,
        Method::Random => random_select(features.units(), cfg)?,
    };
    c.provenance.epoch = epoch;
    Ok(c)
}

pub(crate) fn provenance_for(cfg: &SolverConfig) -> Provenance {
    Provenance { solver: cfg.method.name().to_string(), config_hash: cfg.hash(), epoch: 0 }
}
