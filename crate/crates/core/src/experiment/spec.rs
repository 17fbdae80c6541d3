//! Experiment specs: JSON files with dot-path overrides.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Train,
    R1pcaVerify,
    JsdDemo,
    W1Oracle,
    Sweep,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Train => "train",
            Mode::R1pcaVerify => "r1pca-verify",
            Mode::JsdDemo => "jsd-demo",
            Mode::W1Oracle => "w1-oracle",
            Mode::Sweep => "sweep",
        }
    }
}

/// Fixed-point solver runs on random covariances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    pub d: usize,
    pub r: usize,
    pub n_mc: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub trials: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self { d: 8, r: 3, n_mc: 1_000_000, max_iter: 100, tol: 1e-3, trials: 1 }
    }
}

/// JSD between a full-rank data distribution and random rank-deficient
/// generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JsdParams {
    pub dims: Vec<usize>,
    pub generators: usize,
    pub n_mc: usize,
}

impl Default for JsdParams {
    fn default() -> Self {
        Self { dims: vec![2, 32], generators: 50, n_mc: 10_000 }
    }
}

/// Projection coupling cost against exact empirical `W1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct W1Params {
    /// Diagonal of the data covariance.
    pub variances: Vec<f64>,
    pub r: usize,
    pub n_points: usize,
    pub seeds: usize,
    pub n_mc: usize,
}

impl Default for W1Params {
    fn default() -> Self {
        Self { variances: vec![0.8, 0.6], r: 1, n_points: 512, seeds: 10, n_mc: 1_000_000 }
    }
}

/// Grid for sweep mode. `n_h` replaces every hidden width of the critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub n: Vec<usize>,
    pub n_h: Vec<usize>,
    pub r: Vec<usize>,
    pub seeds: usize,
}

impl Default for SweepAxes {
    fn default() -> Self {
        Self { n: Vec::new(), n_h: Vec::new(), r: Vec::new(), seeds: 5 }
    }
}

/// One experiment. `seed` fixes the ground-truth covariance; training run
/// `k` of a sweep uses seed `seed + k` for data and network streams, and
/// overwrites `train.seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub mode: Mode,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub train: TrainConfig,
    pub solver: SolverParams,
    pub jsd: JsdParams,
    pub w1: W1Params,
    pub sweep: SweepAxes,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            mode: Mode::Train,
            seed: 0,
            out: None,
            train: TrainConfig::default(),
            solver: SolverParams::default(),
            jsd: JsdParams::default(),
            w1: W1Params::default(),
            sweep: SweepAxes::default(),
        }
    }
}

/// Letters, digits, `-`, `_` and `.`, not starting with `.`.
pub fn is_filesystem_safe(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 128
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

impl ExperimentSpec {
    /// Parses a spec and applies `key=value` overrides before validation.
    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("spec: {e}")))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let spec: Self = serde_json::from_value(value).map_err(|e| Error::Config(format!("spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !is_filesystem_safe(&self.name) {
            return fail(format!("name {:?} is not filesystem-safe", self.name));
        }
        match self.mode {
            Mode::Train => self.train.validate()?,
            Mode::Sweep => {
                let s = &self.sweep;
                if s.n.is_empty() || s.n_h.is_empty() || s.r.is_empty() || s.seeds == 0 {
                    return fail("sweep needs non-empty n, n_h and r lists and seeds >= 1".into());
                }
                for job in self.sweep_jobs() {
                    job.config.validate()?;
                }
            }
            Mode::R1pcaVerify => {
                let s = &self.solver;
                if s.r == 0 || s.r + 2 > s.d || s.trials == 0 || s.max_iter == 0 || !(s.tol > 0.0) || s.n_mc < 1000 {
                    return fail("solver needs 1 <= r <= d-2, trials >= 1, max_iter >= 1, tol > 0, n_mc >= 1000".into());
                }
            }
            Mode::JsdDemo => {
                let j = &self.jsd;
                if j.dims.is_empty() || j.dims.iter().any(|&d| d < 2) || j.generators == 0 || j.n_mc < 2 {
                    return fail("jsd needs dims >= 2, generators >= 1, n_mc >= 2".into());
                }
            }
            Mode::W1Oracle => {
                let w = &self.w1;
                let d = w.variances.len();
                if d < 2 || w.variances.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return fail("w1 variances need >= 2 finite nonnegative entries".into());
                }
                if w.r == 0 || w.r >= d || w.seeds < 2 || w.n_points == 0 || w.n_points > crate::divergence::MAX_EXACT_N || w.n_mc < 100 {
                    return fail(format!(
                        "w1 needs 1 <= r < d, seeds >= 2, 1 <= n_points <= {}, n_mc >= 100",
                        crate::divergence::MAX_EXACT_N
                    ));
                }
            }
        }
        Ok(())
    }

    /// Sweep grid in (n, n_h, r, seed) order.
    pub fn sweep_jobs(&self) -> Vec<SweepJob> {
        let mut jobs = Vec::new();
        for &n in &self.sweep.n {
            for &n_h in &self.sweep.n_h {
                for &r in &self.sweep.r {
                    for k in 0..self.sweep.seeds as u64 {
                        let mut config = self.train.clone();
                        config.n = n;
                        config.r = r;
                        config.critic_hidden = vec![n_h; config.critic_hidden.len().max(1)];
                        config.seed = self.seed.wrapping_add(k);
                        jobs.push(SweepJob { n_h, config });
                    }
                }
            }
        }
        jobs
    }

    pub fn hash(&self) -> String {
        sha256_json(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepJob {
    pub n_h: usize,
    pub config: TrainConfig,
}

/// Hex SHA-256 of the compact JSON serialization.
pub fn sha256_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Sets `a.b.c` in a JSON object. The value is parsed as JSON when
/// possible and taken as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    if path.is_empty() || path.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("bad override key {path:?}")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let mut keys = path.split('.').peekable();
    while let Some(key) = keys.next() {
        let obj = match node {
            Value::Object(m) => m,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().expect("just set")
            }
            _ => return Err(Error::Config(format!("override {path:?}: {key:?} is inside a non-object"))),
        };
        if keys.peek().is_none() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj.entry(key).or_insert(Value::Null);
    }
    unreachable!("path has at least one key")
}
