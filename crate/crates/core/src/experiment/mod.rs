//! Experiment orchestration: specs, run modes, reports and plots.
//!
//! Output files in the run directory:
//! - `runlog_<name>.csv` per training run (sweeps append the grid point),
//! - `report.json`,
//! - `plot_<name>.svg`.

mod plot;
mod report;
mod spec;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;

pub use plot::{emit_svg_plot, render_svg, AxesSpec, Series};
pub use report::{compare_report, median, Check, Provenance, Report, ReportRow};
pub use spec::{
    apply_override, is_filesystem_safe, sha256_json, ExperimentSpec, JsdParams, Mode, SolverParams, SweepAxes,
    SweepJob, W1Params,
};

use crate::divergence::{empirical_w1_exact, jsd_gaussian, paired_cost, projection_coupling_cost, GaussianDist};
use crate::error::{Error, Result};
use crate::gaussian::{generate_covariance, sample_gaussian, CovarianceModel, SampleSet};
use crate::linalg::{frobenius_distance, Matrix};
use crate::pca::{empirical_pca, population_pca};
use crate::r1pca::{generator_from_subspace, solve_key_condition, SubspaceBasis};
use crate::rng::RngStream;
use crate::train::{train, RunLog, TrainConfig, TrainOutcome};

const COV_STREAM: u64 = 0x434f_56;
const DATA_STREAM: u64 = 0x4441_5441;
const SOLVER_STREAM: u64 = 0x534f_4c56;
const JSD_STREAM: u64 = 0x4a53_44;
const W1_STREAM: u64 = 0x5731;

/// Ground-truth covariance number `index` of experiment seed `seed`.
pub fn experiment_covariance(seed: u64, d: usize, index: u64) -> Result<CovarianceModel> {
    generate_covariance(d, &RngStream::new(seed, COV_STREAM).derive(index))
}

/// Training data of run seed `seed`. Larger `n` extends smaller `n`.
pub fn experiment_data(cov: &CovarianceModel, n: usize, seed: u64) -> Result<SampleSet> {
    sample_gaussian(cov, n, &RngStream::new(seed, DATA_STREAM))
}

/// Writes a run log in the schema of [`RunLog::to_csv`].
pub fn emit_csv(log: &RunLog, path: &Path) -> Result<()> {
    log.write_csv(path)
}

/// Output directory: `--out` beats the spec's `out`, which beats
/// `runs/<name>`.
pub fn resolve_out_dir(spec: &ExperimentSpec, cli_out: Option<&Path>) -> PathBuf {
    cli_out
        .map(Path::to_path_buf)
        .or_else(|| spec.out.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&spec.name))
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Trains one configuration against covariance `cov`, with data from the
/// config's seed, and summarizes it.
pub fn run_training(config: &TrainConfig, cov: &CovarianceModel, label: &str) -> Result<(ReportRow, TrainOutcome)> {
    config.validate()?;
    let data = experiment_data(cov, config.n, config.seed)?;
    let outcome = train(config, cov, &data)?;
    let pop = population_pca(cov, config.r)?;
    let emp = empirical_pca(&data, config.r)?;
    let last = outcome.log.last().copied();
    let final_truth = last.map_or(f64::NAN, |l| l.frob_to_truth);
    let iters_to_2x_final = outcome
        .log
        .records
        .iter()
        .find(|rec| rec.frob_to_truth <= 2.0 * final_truth)
        .map(|rec| rec.gen_iter);
    let row = ReportRow {
        label: label.to_string(),
        config_hash: sha256_json(&(config, cov.k_y.as_slice())),
        seed: config.seed,
        d: config.d,
        r: config.r,
        n: config.n,
        n_h: config.critic_hidden.first().copied().unwrap_or(0),
        final_gen_iter: last.map_or(0, |l| l.gen_iter),
        final_frob_to_truth: final_truth,
        final_frob_to_empirical_pca: last.map_or(f64::NAN, |l| l.frob_to_empirical_pca),
        population_pca_residual: pop.residual,
        empirical_pca_residual: frobenius_distance(&cov.k_y, &emp.generator_gram)?,
        gap: f64::NAN,
        empirical_gap: f64::NAN,
        iters_to_2x_final,
        aborted: outcome.aborted(),
        runlog: None,
    }
    .with_gaps();
    Ok((row, outcome))
}

/// Executes `spec` and writes its outputs into `out`.
pub fn run(spec: &ExperimentSpec, out: &Path) -> Result<Report> {
    spec.validate()?;
    std::fs::create_dir_all(out)?;
    let started = unix_now();
    let mut report = Report {
        name: spec.name.clone(),
        mode: spec.mode.as_str().to_string(),
        rows: Vec::new(),
        checks: Vec::new(),
        metrics: BTreeMap::new(),
        aborted: false,
        provenance: Vec::new(),
    };
    match spec.mode {
        Mode::Train => run_train(spec, out, &mut report)?,
        Mode::Sweep => run_sweep(spec, out, &mut report)?,
        Mode::R1pcaVerify => run_r1pca_verify(spec, out, &mut report)?,
        Mode::JsdDemo => run_jsd_demo(spec, out, &mut report)?,
        Mode::W1Oracle => run_w1_oracle(spec, out, &mut report)?,
    }
    report.aborted = report.rows.iter().any(|r| r.aborted);
    report.provenance.push(Provenance {
        seed: spec.seed,
        spec_hash: spec.hash(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix: started,
        finished_unix: unix_now(),
    });
    report.write(&out.join("report.json"))?;
    Ok(report)
}

fn plot_path(out: &Path, name: &str) -> PathBuf {
    out.join(format!("plot_{name}.svg"))
}

fn run_train(spec: &ExperimentSpec, out: &Path, report: &mut Report) -> Result<()> {
    let mut config = spec.train.clone();
    config.seed = spec.seed;
    let cov = experiment_covariance(spec.seed, config.d, 0)?;
    let (mut row, outcome) = run_training(&config, &cov, &spec.name)?;
    let file = format!("runlog_{}.csv", spec.name);
    emit_csv(&outcome.log, &out.join(&file))?;
    row.runlog = Some(file);
    if let Some(a) = &outcome.abort {
        report.checks.push(Check::new("finite", false, format!("aborted at gen_iter {}: {}", a.gen_iter, a.reason)));
    }
    let x: Vec<f64> = outcome.log.records.iter().map(|r| r.gen_iter as f64).collect();
    let finite = |v: Vec<f64>| v.iter().all(|y| y.is_finite()).then_some(v);
    if let (Some(truth), Some(emp)) = (
        finite(outcome.log.records.iter().map(|r| r.frob_to_truth).collect()),
        finite(outcome.log.records.iter().map(|r| r.frob_to_empirical_pca).collect()),
    ) {
        let series = [
            Series::new("frob_to_truth", x.clone(), truth),
            Series::new("frob_to_empirical_pca", x.clone(), emp),
            Series::new("population r-PCA residual", x.clone(), vec![row.population_pca_residual; x.len()]),
        ];
        let axes = AxesSpec {
            title: format!("{} ({:?}, d={}, r={}, n={})", spec.name, config.algorithm, config.d, config.r, config.n),
            x_label: "generator iteration".into(),
            y_label: "Frobenius distance".into(),
            ..AxesSpec::default()
        };
        emit_svg_plot(&series, &plot_path(out, &spec.name), &axes)?;
    }
    report.rows.push(row);
    Ok(())
}

fn run_sweep(spec: &ExperimentSpec, out: &Path, report: &mut Report) -> Result<()> {
    let cov = experiment_covariance(spec.seed, spec.train.d, 0)?;
    let jobs = spec.sweep_jobs();
    let results: Vec<Result<ReportRow>> = jobs
        .par_iter()
        .map(|job| {
            let c = &job.config;
            let label = format!("{}_n{}_h{}_r{}_s{}", spec.name, c.n, job.n_h, c.r, c.seed);
            let (mut row, outcome) = run_training(c, &cov, &label)?;
            let file = format!("runlog_{label}.csv");
            emit_csv(&outcome.log, &out.join(&file))?;
            row.runlog = Some(file);
            Ok(row)
        })
        .collect();
    for r in results {
        report.rows.push(r?);
    }

    // Medians over seeds per grid point, then trends in n.
    let mut groups: BTreeMap<(usize, usize), BTreeMap<usize, Vec<&ReportRow>>> = BTreeMap::new();
    for row in &report.rows {
        groups.entry((row.n_h, row.r)).or_default().entry(row.n).or_default().push(row);
    }
    let mut series = Vec::new();
    let mut checks = Vec::new();
    let mut metrics = BTreeMap::new();
    for ((n_h, r), by_n) in &groups {
        let ns: Vec<f64> = by_n.keys().map(|&n| n as f64).collect();
        let pick = |f: fn(&ReportRow) -> f64| -> Vec<f64> {
            by_n.values().map(|rows| median(&rows.iter().map(|x| f(x)).collect::<Vec<_>>())).collect()
        };
        let emp_dist = pick(|x| x.final_frob_to_empirical_pca);
        let gap = pick(|x| x.gap);
        for (i, n) in by_n.keys().enumerate() {
            metrics.insert(format!("median_frob_to_empirical_pca/n={n}/n_h={n_h}/r={r}"), emp_dist[i]);
            metrics.insert(format!("median_gap/n={n}/n_h={n_h}/r={r}"), gap[i]);
        }
        if ns.len() > 1 {
            let ok = emp_dist.windows(2).all(|w| w[1] <= w[0]);
            checks.push(Check::new(
                format!("median distance to empirical r-PCA non-increasing in n (n_h={n_h}, r={r})"),
                ok,
                format!("{emp_dist:?} at n={ns:?}"),
            ));
        }
        if emp_dist.iter().all(|v| v.is_finite() && *v > 0.0) {
            series.push(Series::new(format!("median dist to empirical r-PCA, n_h={n_h}, r={r}"), ns.clone(), emp_dist));
        }
        if gap.iter().all(|v| v.is_finite() && *v > 0.0) {
            series.push(Series::new(format!("median gap to population r-PCA, n_h={n_h}, r={r}"), ns, gap));
        }
    }
    report.checks.extend(checks);
    report.metrics.extend(metrics);
    if !series.is_empty() {
        let axes = AxesSpec {
            title: format!("{}: final gaps vs sample size", spec.name),
            x_label: "n".into(),
            y_label: "Frobenius distance".into(),
            log_x: true,
            log_y: true,
        };
        emit_svg_plot(&series, &plot_path(out, &spec.name), &axes)?;
    }
    Ok(())
}

fn run_r1pca_verify(spec: &ExperimentSpec, out: &Path, report: &mut Report) -> Result<()> {
    let s = &spec.solver;
    let mut series = Vec::new();
    for t in 0..s.trials as u64 {
        let cov = experiment_covariance(spec.seed, s.d, t)?;
        let rng = RngStream::new(spec.seed, SOLVER_STREAM).derive(t);
        let truth = SubspaceBasis::orthonormalized(&cov.principal_basis(s.r))?;
        let pop = population_pca(&cov, s.r)?;
        match solve_key_condition(&cov, s.r, s.n_mc, s.max_iter, s.tol, &rng) {
            Ok(sol) => {
                let dist = sol.basis.projector_distance(&truth)?;
                let gram = frobenius_distance(&generator_from_subspace(&cov, &sol.basis)?, &pop.generator_gram)?;
                let m = &mut report.metrics;
                m.insert(format!("trial{t}/projector_distance"), dist);
                m.insert(format!("trial{t}/gram_distance"), gram);
                m.insert(format!("trial{t}/iterations"), sol.iterations as f64);
                m.insert(format!("trial{t}/cross_term_max"), sol.report.cross_term_max);
                m.insert(format!("trial{t}/m_std_err"), sol.report.std_err);
                let tie = if sol.spectral_tie { " (spectral tie)" } else { "" };
                report.checks.push(Check::new(
                    format!("trial {t}: projector distance <= 1e-2"),
                    dist <= 1e-2,
                    format!("{dist:.3e}{tie}"),
                ));
                report.checks.push(Check::new(
                    format!("trial {t}: gram distance to population r-PCA <= 2e-2"),
                    gram <= 2e-2,
                    format!("{gram:.3e}"),
                ));
                report.checks.push(Check::new(
                    format!("trial {t}: ordering_ok"),
                    sol.report.ordering_ok,
                    format!("{}", sol.report.ordering_ok),
                ));
                let eig = sol.report.m_eigs.eigenvalues.clone();
                let x = (1..=eig.len()).map(|i| i as f64).collect();
                series.push(Series::new(format!("trial {t}"), x, eig));
            }
            Err(e @ Error::Convergence { .. }) => {
                report.checks.push(Check::new(format!("trial {t}: converged"), false, e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    if !series.is_empty() {
        let axes = AxesSpec {
            title: format!("{}: eigenvalues of the key-condition matrix", spec.name),
            x_label: "index".into(),
            y_label: "eigenvalue".into(),
            ..AxesSpec::default()
        };
        emit_svg_plot(&series, &plot_path(out, &spec.name), &axes)?;
    }
    Ok(())
}

/// Random `d x r` generator with `r` uniform in `1..d`.
fn random_deficient_generator(d: usize, rng: &RngStream) -> Matrix {
    let mut g = rng.open();
    let r = 1 + g.index(d - 1);
    let mut m = Matrix::zeros(d, r);
    g.fill_normal(m.as_mut_slice());
    m
}

fn run_jsd_demo(spec: &ExperimentSpec, out: &Path, report: &mut Report) -> Result<()> {
    let j = &spec.jsd;
    let mut series = Vec::new();
    for &d in &j.dims {
        let cov = experiment_covariance(spec.seed, d, 0)?;
        let p = GaussianDist::from_model(&cov)?;
        let base = RngStream::new(spec.seed, JSD_STREAM).derive(d as u64);
        let mut values = Vec::with_capacity(j.generators);
        for k in 0..j.generators as u64 {
            let g = random_deficient_generator(d, &base.derive(2 * k));
            let q = GaussianDist::from_generator(&g)?;
            values.push(jsd_gaussian(&p, &q, j.n_mc, &base.derive(2 * k + 1))?);
        }
        let exact = values.iter().filter(|v| v.analytic && v.value == std::f64::consts::LN_2).count();
        report.metrics.insert(format!("d={d}/exact_ln2_count"), exact as f64);
        report.checks.push(Check::new(
            format!("d={d}: JSD is exactly ln 2 for every rank-deficient generator"),
            exact == values.len(),
            format!("{exact}/{}", values.len()),
        ));
        // Same support: Monte-Carlo estimate strictly below ln 2.
        let control = jsd_gaussian(&p, &GaussianDist::new(cov.k_y.scale(2.0))?, j.n_mc, &base.derive(u64::MAX))?;
        report.metrics.insert(format!("d={d}/full_rank_control_jsd"), control.value);
        report.metrics.insert(format!("d={d}/full_rank_control_std_err"), control.std_err);
        let x = (0..values.len()).map(|i| i as f64).collect();
        series.push(Series::new(format!("d={d}"), x, values.iter().map(|v| v.value).collect()));
    }
    let axes = AxesSpec {
        title: format!("{}: JSD to rank-deficient generators", spec.name),
        x_label: "generator".into(),
        y_label: "JSD (nats)".into(),
        ..AxesSpec::default()
    };
    emit_svg_plot(&series, &plot_path(out, &spec.name), &axes)
}

/// Exact empirical `W1` between independent samples of the data and of the
/// projected generator, for each seed.
#[derive(Debug, Clone, PartialEq)]
pub struct W1OracleResult {
    pub projection_cost: f64,
    pub projection_std_err: f64,
    pub exact_independent: Vec<f64>,
    /// Exact `W1` between a sample and its own projection.
    pub exact_projected: Vec<f64>,
    /// Index-paired cost of a sample and its own projection.
    pub paired_projected: Vec<f64>,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

impl W1OracleResult {
    /// Mean and sample standard deviation of the independent-sample costs.
    pub fn ensemble(&self) -> (f64, f64) {
        mean_sd(&self.exact_independent)
    }

    /// `[mean ± 3 sd]` of the ensemble meets `[cost ± 3 se]`.
    pub fn intervals_overlap(&self) -> bool {
        let (m, sd) = self.ensemble();
        let (c, se) = (self.projection_cost, self.projection_std_err);
        m - 3.0 * sd <= c + 3.0 * se && c - 3.0 * se <= m + 3.0 * sd
    }
}

pub fn w1_oracle(params: &W1Params, seed: u64) -> Result<W1OracleResult> {
    let cov = CovarianceModel::from_matrix(Matrix::from_diag(&params.variances))?;
    let basis = SubspaceBasis::orthonormalized(&cov.principal_basis(params.r))?;
    let base = RngStream::new(seed, W1_STREAM);
    let proj = projection_coupling_cost(&cov, &basis, params.n_mc, &base.derive(0))?;
    let gen_cov = CovarianceModel::from_matrix(generator_from_subspace(&cov, &basis)?)?;
    let p = basis.projector();
    let per_seed: Vec<Result<(f64, f64, f64)>> = (0..params.seeds as u64)
        .into_par_iter()
        .map(|s| {
            let a = sample_gaussian(&cov, params.n_points, &base.derive(1).derive(s))?;
            let b = sample_gaussian(&gen_cov, params.n_points, &base.derive(2).derive(s))?;
            let pa = SampleSet::new(a.samples.matmul_t(&p)?, a.seed)?;
            Ok((empirical_w1_exact(&a, &b)?.cost, empirical_w1_exact(&a, &pa)?.cost, paired_cost(&a, &pa)?))
        })
        .collect();
    let mut out = W1OracleResult {
        projection_cost: proj.cost,
        projection_std_err: proj.std_err,
        exact_independent: Vec::new(),
        exact_projected: Vec::new(),
        paired_projected: Vec::new(),
    };
    for r in per_seed {
        let (i, e, pc) = r?;
        out.exact_independent.push(i);
        out.exact_projected.push(e);
        out.paired_projected.push(pc);
    }
    Ok(out)
}

fn run_w1_oracle(spec: &ExperimentSpec, out: &Path, report: &mut Report) -> Result<()> {
    let w = &spec.w1;
    let res = w1_oracle(w, spec.seed)?;
    let (m, sd) = res.ensemble();
    let metrics = &mut report.metrics;
    metrics.insert("projection_cost".into(), res.projection_cost);
    metrics.insert("projection_std_err".into(), res.projection_std_err);
    metrics.insert("exact_w1_mean".into(), m);
    metrics.insert("exact_w1_sd".into(), sd);
    metrics.insert("exact_w1_bias".into(), m - res.projection_cost);
    let (pm, _) = mean_sd(&res.paired_projected);
    metrics.insert("paired_projected_mean".into(), pm);
    if w.variances.len() - w.r == 1 {
        // One residual direction: E|N(0, σ²)| = σ √(2/π).
        let mut v = w.variances.clone();
        v.sort_by(|a, b| b.total_cmp(a));
        let reference = (v[w.r] * 2.0 / std::f64::consts::PI).sqrt();
        metrics.insert("half_normal_reference".into(), reference);
        report.checks.push(Check::new(
            "projection cost matches the half-normal mean within 3 se",
            (res.projection_cost - reference).abs() <= 3.0 * res.projection_std_err,
            format!("{:.6} vs {reference:.6} (se {:.2e})", res.projection_cost, res.projection_std_err),
        ));
    }
    report.checks.push(Check::new(
        "exact empirical W1 interval overlaps the projection-cost interval",
        res.intervals_overlap(),
        format!("{m:.4} ± {:.4} vs {:.4} ± {:.4}", 3.0 * sd, res.projection_cost, 3.0 * res.projection_std_err),
    ));
    let worst = res
        .exact_projected
        .iter()
        .zip(&res.paired_projected)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    report.checks.push(Check::new(
        "pairing each sample with its projection is an optimal assignment",
        worst <= 1e-9,
        format!("max |exact − paired| = {worst:.2e}"),
    ));
    let x: Vec<f64> = (0..res.exact_independent.len()).map(|i| i as f64).collect();
    let series = [
        Series::new("exact empirical W1 (independent samples)", x.clone(), res.exact_independent.clone()),
        Series::new("projection coupling cost", x.clone(), vec![res.projection_cost; x.len()]),
    ];
    let axes = AxesSpec {
        title: format!("{}: W1 oracle", spec.name),
        x_label: "seed".into(),
        y_label: "transport cost".into(),
        ..AxesSpec::default()
    };
    emit_svg_plot(&series, &plot_path(out, &spec.name), &axes)
}
