//! Run summaries and cross-run comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// JSON has no NaN or infinity; non-finite values are written as `null`
/// and read back as NaN.
mod nullable {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// Summary of one training run. Every number is read from the stored run
/// log or computed from the stored covariance and data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub config_hash: String,
    pub seed: u64,
    pub d: usize,
    pub r: usize,
    pub n: usize,
    pub n_h: usize,
    pub final_gen_iter: u64,
    /// `‖K − GGᵀ‖_F` at the last logged iteration.
    #[serde(with = "nullable")]
    pub final_frob_to_truth: f64,
    /// `‖Ĝ* Ĝ*ᵀ − GGᵀ‖_F` against the empirical r-PCA gram.
    #[serde(with = "nullable")]
    pub final_frob_to_empirical_pca: f64,
    /// `‖K − G*G*ᵀ‖_F` of the population r-PCA solution.
    pub population_pca_residual: f64,
    /// `‖K − Ĝ*Ĝ*ᵀ‖_F` of the empirical r-PCA solution.
    pub empirical_pca_residual: f64,
    /// `final_frob_to_truth − population_pca_residual`.
    #[serde(with = "nullable")]
    pub gap: f64,
    /// `final_frob_to_truth − empirical_pca_residual`.
    #[serde(with = "nullable")]
    pub empirical_gap: f64,
    /// First logged iteration whose `frob_to_truth` is within twice its
    /// final value.
    pub iters_to_2x_final: Option<u64>,
    pub aborted: bool,
    pub runlog: Option<String>,
}

impl ReportRow {
    /// Fills `gap` and `empirical_gap` from the stored values.
    pub fn with_gaps(mut self) -> Self {
        self.gap = self.final_frob_to_truth - self.population_pca_residual;
        self.empirical_gap = self.final_frob_to_truth - self.empirical_pca_residual;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub spec_hash: String,
    pub version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub mode: String,
    pub rows: Vec<ReportRow>,
    pub checks: Vec<Check>,
    /// Scalar results of the oracle modes.
    pub metrics: BTreeMap<String, f64>,
    pub aborted: bool,
    pub provenance: Vec<Provenance>,
}

impl Report {
    pub fn all_checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Fixed-width table of the rows.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<34} {:>8} {:>5} {:>4} {:>3} {:>12} {:>12} {:>12} {:>12} {:>10}",
            "label", "n", "n_h", "d", "r", "final", "pca_resid", "emp_gram", "emp_resid", "gap"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<34} {:>8} {:>5} {:>4} {:>3} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>10.6}{}",
                r.label,
                r.n,
                r.n_h,
                r.d,
                r.r,
                r.final_frob_to_truth,
                r.population_pca_residual,
                r.final_frob_to_empirical_pca,
                r.empirical_pca_residual,
                r.gap,
                if r.aborted { "  ABORTED" } else { "" }
            );
        }
        for c in &self.checks {
            let _ = writeln!(s, "{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
        }
        for (k, v) in &self.metrics {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

/// Median of the finite values; NaN when there are none.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Merges the rows of several reports into one table sorted by `(n, n_h)`.
/// All rows must share `d` and `r`.
pub fn compare_report(runs: &[Report]) -> Result<Report> {
    let mut rows: Vec<ReportRow> = runs.iter().flat_map(|r| r.rows.iter().cloned()).collect();
    let Some(first) = rows.first() else {
        return Err(Error::Unsupported("no training rows to compare".into()));
    };
    let (d, r) = (first.d, first.r);
    if let Some(bad) = rows.iter().find(|x| x.d != d || x.r != r) {
        return Err(Error::Unsupported(format!(
            "runs disagree on shape: d={d} r={r} vs {:?} with d={} r={}",
            bad.label, bad.d, bad.r
        )));
    }
    rows.sort_by(|a, b| (a.n, a.n_h, a.seed).cmp(&(b.n, b.n_h, b.seed)));
    let name = runs.iter().map(|r| r.name.as_str()).collect::<Vec<_>>().join("+");
    Ok(Report {
        name,
        mode: "compare".into(),
        rows,
        checks: Vec::new(),
        metrics: BTreeMap::new(),
        aborted: runs.iter().any(|r| r.aborted),
        provenance: runs.iter().flat_map(|r| r.provenance.iter().cloned()).collect(),
    })
}
