//! Monte Carlo replications over simulated scenarios, projection
//! reconstruction, baselines, and rolling-origin validation.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::{info, warn};
use ndarray::{Array2, Array3, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bicluster::{bicluster_pipeline, misclustering_rate, BiclusterConfig};
use crate::error::{Error, Result};
use crate::estimate::{estimate_factor_numbers, initial_global_loadings, leading_loadings};
use crate::linalg::{orthonormal_basis, space_distance, symmetrize};
use crate::simulate::{generate, replication_seed, GroundTruth, ScenarioSpec};
use crate::types::{FactorNumbers, LoadingKind, LoadingMatrix, LoadingSet, MatrixSeries};

/// Smallest allowed first validation time point (1-based).
pub const MIN_ROLLING_START: usize = 40;

/// Loading estimator used for reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Global plus cluster-specific loadings.
    Ours,
    /// Unprojected global loadings only.
    AcceBaseline,
    /// Global loadings from lag-0 second moments only.
    PcaBaseline,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Ours => "ours",
            Method::AcceBaseline => "acce_baseline",
            Method::PcaBaseline => "pca_baseline",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ours" => Ok(Method::Ours),
            "acce" | "acce_baseline" => Ok(Method::AcceBaseline),
            "pca" | "pca_baseline" => Ok(Method::PcaBaseline),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// `R Rᵀ X C Cᵀ + Γ Γᵀ Y Λ Λᵀ` for one matrix, with `Y = (I − RRᵀ) X (I − CCᵀ)`.
pub fn reconstruct_matrix(x: ArrayView2<'_, f64>, loadings: &LoadingSet) -> Array2<f64> {
    let r = loadings.row_global.values();
    let c = loadings.col_global.values();
    let common = r.dot(&r.t().dot(&x).dot(c)).dot(&c.t());
    if loadings.row_local.is_empty() || loadings.col_local.is_empty() {
        return common;
    }
    let g = loadings.row_local.values();
    let l = loadings.col_local.values();
    // Y = X − RRᵀX − XCCᵀ + RRᵀXCCᵀ
    let rx = r.dot(&r.t().dot(&x));
    let xc = x.dot(c).dot(&c.t());
    let y = &x - &rx - &xc + &common;
    let weak = g.dot(&g.t().dot(&y).dot(l)).dot(&l.t());
    common + weak
}

/// Projection reconstruction of every matrix of the series.
pub fn reconstruct(series: &MatrixSeries, loadings: &LoadingSet) -> Result<MatrixSeries> {
    loadings.check_series(series)?;
    let fitted: Vec<Array2<f64>> = (0..series.len())
        .into_par_iter()
        .map(|t| reconstruct_matrix(series.at(t), loadings))
        .collect();
    let mut out = Array3::zeros(series.data().dim());
    for (mut slot, x) in out.axis_iter_mut(Axis(0)).zip(&fitted) {
        slot.assign(x);
    }
    MatrixSeries::with_labels(
        out,
        series.row_labels().map(<[String]>::to_vec),
        series.col_labels().map(<[String]>::to_vec),
    )
}

/// Global loadings from a baseline method; the cluster-specific part is empty.
pub fn baseline_loadings(
    series: &MatrixSeries,
    method: Method,
    k0: usize,
    r0: usize,
    l0: usize,
) -> Result<LoadingSet> {
    let (row, col) = match method {
        Method::Ours => {
            return Err(Error::Config("`ours` is not a baseline method".into()));
        }
        Method::AcceBaseline => initial_global_loadings(series, k0, r0, l0)?,
        Method::PcaBaseline => {
            let (p, q) = (series.rows(), series.cols());
            let mut m_row = Array2::<f64>::zeros((p, p));
            let mut m_col = Array2::<f64>::zeros((q, q));
            for x in series.data().axis_iter(Axis(0)) {
                m_row += &x.dot(&x.t());
                m_col += &x.t().dot(&x);
            }
            let n = series.len() as f64;
            (
                leading_loadings(&symmetrize((m_row / n).view()), k0, LoadingKind::GlobalRow)?,
                leading_loadings(&symmetrize((m_col / n).view()), r0, LoadingKind::GlobalCol)?,
            )
        }
    };
    let (p, q) = (row.dim(), col.dim());
    LoadingSet::new(
        row,
        col,
        LoadingMatrix::empty(p, LoadingKind::LocalRow),
        LoadingMatrix::empty(q, LoadingKind::LocalCol),
    )
}

/// Loadings for `method` with the given counts (`k`, `r` ignored by baselines).
pub fn fit_method(series: &MatrixSeries, method: Method, counts: &FactorNumbers, l0: usize) -> Result<LoadingSet> {
    match method {
        Method::Ours => crate::estimate::fit_loadings(series, counts, l0),
        _ => baseline_loadings(series, method, counts.k0, counts.r0, l0),
    }
}

/// Averaged squared reconstruction error over a rolling origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingReport {
    pub method: Method,
    pub k0: usize,
    pub k: usize,
    pub r0: usize,
    pub r: usize,
    pub l0: usize,
    /// First validated time point, 1-based.
    pub start_index: usize,
    pub n_evaluated: usize,
    /// `Σ ‖X̂ₜ − Xₜ‖²_F / (n_evaluated · p · q)`.
    pub mse: f64,
    /// The same sum divided by `T · p · q`.
    pub mse_full_length: f64,
    /// `‖X̂ₜ − Xₜ‖²_F / (p · q)` for each validated `t`.
    pub per_point: Vec<f64>,
}

/// For each `t` from `start_index` to `T`: fit on `X₁..Xₜ₋₁`, reconstruct
/// `Xₜ` by projection onto the fitted spaces, and average the squared error.
pub fn rolling_validation(
    series: &MatrixSeries,
    method: Method,
    counts: &FactorNumbers,
    start_index: usize,
    l0: usize,
) -> Result<RollingReport> {
    let t_len = series.len();
    if start_index < MIN_ROLLING_START || start_index > t_len {
        return Err(Error::Config(format!(
            "start index {start_index} must lie in {MIN_ROLLING_START}..={t_len}"
        )));
    }
    let (p, q) = (series.rows(), series.cols());
    counts.validate(p, q)?;
    let per_point = (start_index..=t_len)
        .into_par_iter()
        .map(|t| -> Result<f64> {
            let train = series.head(t - 1)?;
            let loadings = fit_method(&train, method, counts, l0)?;
            let x = series.at(t - 1);
            let err = reconstruct_matrix(x, &loadings) - x;
            Ok(err.iter().map(|v| v * v).sum::<f64>() / (p * q) as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let total: f64 = per_point.iter().sum();
    Ok(RollingReport {
        method,
        k0: counts.k0,
        k: counts.k,
        r0: counts.r0,
        r: counts.r,
        l0,
        start_index,
        n_evaluated: per_point.len(),
        mse: total / per_point.len() as f64,
        mse_full_length: total / t_len as f64,
        per_point,
    })
}

/// Sample mean and standard deviation (divisor `n − 1`, 0 when `n < 2`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return MeanSd { mean: f64::NAN, sd: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        MeanSd { mean, sd, n }
    }
}

/// One replication at one `l₀`. Metrics are `None` when the step that
/// produces them failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub seed: u64,
    pub l0: usize,
    pub k0_hat: Option<usize>,
    pub k_hat: Option<usize>,
    pub r0_hat: Option<usize>,
    pub r_hat: Option<usize>,
    pub dist_r: Option<f64>,
    pub dist_c: Option<f64>,
    pub dist_gamma: Option<f64>,
    pub dist_lambda: Option<f64>,
    pub m_hat: Option<usize>,
    pub n_hat: Option<usize>,
    pub row_accuracy: Option<f64>,
    pub col_accuracy: Option<f64>,
    pub error: Option<String>,
}

/// Aggregates for one `l₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub l0: usize,
    /// Replications whose estimation chain failed; excluded from the means.
    pub failures: usize,
    pub freq_k0: f64,
    pub freq_k: f64,
    pub freq_r0: f64,
    pub freq_r: f64,
    /// Both row counts right.
    pub freq_row_pair: f64,
    /// Both column counts right.
    pub freq_col_pair: f64,
    pub freq_all: f64,
    /// `k̂₀ + k̂ = k₀ + k` and `r̂₀ + r̂ = r₀ + r`.
    pub freq_row_total: f64,
    pub freq_col_total: f64,
    /// `k̂₀ + r̂₀ = k₀ + r₀` and `k̂ + r̂ = k + r`.
    pub freq_strong_sum: f64,
    pub freq_weak_sum: f64,
    pub dist_r: MeanSd,
    pub dist_c: MeanSd,
    pub dist_gamma: MeanSd,
    pub dist_lambda: MeanSd,
    pub m_hat: MeanSd,
    pub n_hat: MeanSd,
    pub row_accuracy: MeanSd,
    pub col_accuracy: MeanSd,
    /// Accuracy over the replications with `m̂ = m` (resp. `n̂ = n`).
    pub row_accuracy_given_m: MeanSd,
    pub col_accuracy_given_n: MeanSd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub scenario: ScenarioSpec,
    pub n_reps: usize,
    pub known_factor_numbers: bool,
    pub rows: Vec<ReplicationRow>,
    pub records: Vec<ReplicationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOptions {
    pub n_reps: usize,
    pub l0_set: Vec<usize>,
    /// Feed the true counts to the estimation chain instead of the estimates.
    pub known_factor_numbers: bool,
    pub bicluster: BiclusterConfig,
}

impl ReplicationOptions {
    pub fn new(n_reps: usize, l0_set: Vec<usize>, known_factor_numbers: bool) -> Self {
        ReplicationOptions {
            n_reps,
            l0_set,
            known_factor_numbers,
            bicluster: BiclusterConfig::default(),
        }
    }
}

/// Orthonormal bases of the true loading spaces, with the cluster-specific
/// spaces taken off the global ones: `(I − P_R)Γ` and `(I − P_C)Λ`.
pub fn truth_loadings(truth: &GroundTruth) -> Result<LoadingSet> {
    let r = orthonormal_basis(truth.r.view())?;
    let c = orthonormal_basis(truth.c.view())?;
    let gamma_off = &truth.gamma - &r.dot(&r.t().dot(&truth.gamma));
    let lambda_off = &truth.lambda - &c.dot(&c.t().dot(&truth.lambda));
    let g = orthonormal_basis(gamma_off.view())?;
    let l = orthonormal_basis(lambda_off.view())?;
    LoadingSet::new(
        LoadingMatrix::new(r, LoadingKind::GlobalRow)?,
        LoadingMatrix::new(c, LoadingKind::GlobalCol)?,
        LoadingMatrix::new(g, LoadingKind::LocalRow)?,
        LoadingMatrix::new(l, LoadingKind::LocalCol)?,
    )
}

fn true_counts(spec: &ScenarioSpec) -> FactorNumbers {
    FactorNumbers::known(spec.k0, spec.k(), spec.r0, spec.r())
}

fn one_replication(
    spec: &ScenarioSpec,
    opts: &ReplicationOptions,
    rep: usize,
) -> Vec<ReplicationRecord> {
    let seed = replication_seed(spec.seed, rep as u64);
    let blank = |l0: usize| ReplicationRecord {
        rep,
        seed,
        l0,
        k0_hat: None,
        k_hat: None,
        r0_hat: None,
        r_hat: None,
        dist_r: None,
        dist_c: None,
        dist_gamma: None,
        dist_lambda: None,
        m_hat: None,
        n_hat: None,
        row_accuracy: None,
        col_accuracy: None,
        error: None,
    };
    let generated = spec.clone().with_seed(seed);
    let (series, truth) = match generate(&generated) {
        Ok(v) => v,
        Err(e) => {
            return opts
                .l0_set
                .iter()
                .map(|&l0| ReplicationRecord {
                    error: Some(e.to_string()),
                    ..blank(l0)
                })
                .collect()
        }
    };
    let target = truth_loadings(&truth);
    opts.l0_set
        .iter()
        .map(|&l0| {
            let mut rec = blank(l0);
            let estimated = estimate_factor_numbers(&series, l0, opts.bicluster.j0_row, opts.bicluster.j0_col);
            if let Ok(f) = &estimated {
                rec.k0_hat = Some(f.k0);
                rec.k_hat = Some(f.k);
                rec.r0_hat = Some(f.r0);
                rec.r_hat = Some(f.r);
            }
            let mut run = || -> Result<()> {
                let target = target.as_ref().map_err(|e| Error::InvalidSeries(e.to_string()))?;
                let counts = match (&estimated, opts.known_factor_numbers) {
                    (_, true) => true_counts(spec),
                    (Ok(f), false) => f.clone(),
                    (Err(e), false) => {
                        return Err(Error::InsufficientData(format!("factor numbers: {e}")))
                    }
                };
                let out = bicluster_pipeline(&series, l0, Some(counts), &opts.bicluster)?;
                let est = &out.loadings;
                rec.dist_r = Some(space_distance(est.row_global.values().view(), target.row_global.values().view())?);
                rec.dist_c = Some(space_distance(est.col_global.values().view(), target.col_global.values().view())?);
                rec.dist_gamma = Some(space_distance(est.row_local.values().view(), target.row_local.values().view())?);
                rec.dist_lambda = Some(space_distance(est.col_local.values().view(), target.col_local.values().view())?);
                rec.m_hat = Some(out.result.m_hat);
                rec.n_hat = Some(out.result.n_hat);
                rec.row_accuracy = Some(1.0 - misclustering_rate(&out.result.row_membership, &truth.row_truth)?);
                rec.col_accuracy = Some(1.0 - misclustering_rate(&out.result.col_membership, &truth.col_truth)?);
                Ok(())
            };
            if let Err(e) = run() {
                warn!("replication {rep} (l0 = {l0}) failed: {e}");
                rec.error = Some(e.to_string());
            }
            rec
        })
        .collect()
}

fn summarize(spec: &ScenarioSpec, l0: usize, n_reps: usize, records: &[&ReplicationRecord]) -> ReplicationRow {
    let freq = |hit: &dyn Fn(&ReplicationRecord) -> bool| {
        records.iter().filter(|r| hit(r)).count() as f64 / n_reps as f64
    };
    let k0 = |r: &ReplicationRecord| r.k0_hat == Some(spec.k0);
    let k = |r: &ReplicationRecord| r.k_hat == Some(spec.k());
    let r0 = |r: &ReplicationRecord| r.r0_hat == Some(spec.r0);
    let rr = |r: &ReplicationRecord| r.r_hat == Some(spec.r());
    let sum = |a: Option<usize>, b: Option<usize>| a.zip(b).map(|(a, b)| a + b);
    let ok: Vec<&&ReplicationRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let stat = |get: &dyn Fn(&ReplicationRecord) -> Option<f64>| {
        MeanSd::of(&ok.iter().filter_map(|r| get(r)).collect::<Vec<_>>())
    };
    let m = spec.m();
    let n = spec.n();
    ReplicationRow {
        l0,
        failures: records.len() - ok.len(),
        freq_k0: freq(&k0),
        freq_k: freq(&k),
        freq_r0: freq(&r0),
        freq_r: freq(&rr),
        freq_row_pair: freq(&|r| k0(r) && k(r)),
        freq_col_pair: freq(&|r| r0(r) && rr(r)),
        freq_all: freq(&|r| k0(r) && k(r) && r0(r) && rr(r)),
        freq_row_total: freq(&|r| sum(r.k0_hat, r.k_hat) == Some(spec.k0 + spec.k())),
        freq_col_total: freq(&|r| sum(r.r0_hat, r.r_hat) == Some(spec.r0 + spec.r())),
        freq_strong_sum: freq(&|r| sum(r.k0_hat, r.r0_hat) == Some(spec.k0 + spec.r0)),
        freq_weak_sum: freq(&|r| sum(r.k_hat, r.r_hat) == Some(spec.k() + spec.r())),
        dist_r: stat(&|r| r.dist_r),
        dist_c: stat(&|r| r.dist_c),
        dist_gamma: stat(&|r| r.dist_gamma),
        dist_lambda: stat(&|r| r.dist_lambda),
        m_hat: stat(&|r| r.m_hat.map(|v| v as f64)),
        n_hat: stat(&|r| r.n_hat.map(|v| v as f64)),
        row_accuracy: stat(&|r| r.row_accuracy),
        col_accuracy: stat(&|r| r.col_accuracy),
        row_accuracy_given_m: stat(&|r| r.row_accuracy.filter(|_| r.m_hat == Some(m))),
        col_accuracy_given_n: stat(&|r| r.col_accuracy.filter(|_| r.n_hat == Some(n))),
    }
}

/// Runs `n_reps` independent replications, each on fresh data seeded from
/// `spec.seed` and the replication index, evaluated at every `l₀` in the set.
pub fn run_replications_with(spec: &ScenarioSpec, opts: &ReplicationOptions) -> Result<ReplicationReport> {
    spec.validate()?;
    if opts.n_reps == 0 {
        return Err(Error::Config("n_reps must be at least 1".into()));
    }
    if opts.l0_set.is_empty() || opts.l0_set.contains(&0) {
        return Err(Error::Config("l0 set must be nonempty with every l0 >= 1".into()));
    }
    let records: Vec<ReplicationRecord> = (0..opts.n_reps)
        .into_par_iter()
        .flat_map_iter(|rep| one_replication(spec, opts, rep))
        .collect();
    let rows = opts
        .l0_set
        .iter()
        .map(|&l0| {
            let at: Vec<&ReplicationRecord> = records.iter().filter(|r| r.l0 == l0).collect();
            summarize(spec, l0, opts.n_reps, &at)
        })
        .collect::<Vec<_>>();
    for row in &rows {
        if row.failures > 0 {
            info!("l0 = {}: {} of {} replications failed", row.l0, row.failures, opts.n_reps);
        }
    }
    Ok(ReplicationReport {
        scenario: spec.clone(),
        n_reps: opts.n_reps,
        known_factor_numbers: opts.known_factor_numbers,
        rows,
        records,
    })
}

pub fn run_replications(
    spec: &ScenarioSpec,
    n_reps: usize,
    l0_set: &[usize],
    known_factor_numbers: bool,
) -> Result<ReplicationReport> {
    run_replications_with(spec, &ReplicationOptions::new(n_reps, l0_set.to_vec(), known_factor_numbers))
}

impl ReplicationRow {
    /// `(metric, mean, sd, n)`; frequencies have no sd.
    pub fn metrics(&self) -> Vec<(&'static str, f64, Option<f64>, usize)> {
        let mut out = vec![
            ("failures", self.failures as f64, None, 0),
            ("freq_k0", self.freq_k0, None, 0),
            ("freq_k", self.freq_k, None, 0),
            ("freq_r0", self.freq_r0, None, 0),
            ("freq_r", self.freq_r, None, 0),
            ("freq_row_pair", self.freq_row_pair, None, 0),
            ("freq_col_pair", self.freq_col_pair, None, 0),
            ("freq_all", self.freq_all, None, 0),
            ("freq_row_total", self.freq_row_total, None, 0),
            ("freq_col_total", self.freq_col_total, None, 0),
            ("freq_strong_sum", self.freq_strong_sum, None, 0),
            ("freq_weak_sum", self.freq_weak_sum, None, 0),
        ];
        for (name, s) in [
            ("dist_r", self.dist_r),
            ("dist_c", self.dist_c),
            ("dist_gamma", self.dist_gamma),
            ("dist_lambda", self.dist_lambda),
            ("m_hat", self.m_hat),
            ("n_hat", self.n_hat),
            ("row_accuracy", self.row_accuracy),
            ("col_accuracy", self.col_accuracy),
            ("row_accuracy_given_m", self.row_accuracy_given_m),
            ("col_accuracy_given_n", self.col_accuracy_given_n),
        ] {
            out.push((name, s.mean, Some(s.sd), s.n));
        }
        out
    }
}

/// Writes `report.json`, `report.csv` (one row per `(l₀, metric)`) and
/// `replications.csv` (one row per replication and `l₀`) into `dir`.
pub fn write_replication_report(report: &ReplicationReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    serde_json::to_writer_pretty(std::fs::File::create(dir.join("report.json"))?, report)?;
    let mut w = csv::Writer::from_path(dir.join("report.csv"))?;
    w.write_record(["l0", "metric", "mean", "sd", "n"])?;
    for row in &report.rows {
        for (name, mean, sd, n) in row.metrics() {
            w.write_record([
                row.l0.to_string(),
                name.to_string(),
                mean.to_string(),
                sd.map(|v| v.to_string()).unwrap_or_default(),
                n.to_string(),
            ])?;
        }
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("replications.csv"))?;
    for rec in &report.records {
        w.serialize(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `rolling.json` and `rolling.csv` (one row per validated `t`).
pub fn write_rolling_report(report: &RollingReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    serde_json::to_writer_pretty(std::fs::File::create(dir.join("rolling.json"))?, report)?;
    let mut w = csv::Writer::from_path(dir.join("rolling.csv"))?;
    w.write_record(["t", "squared_error"])?;
    for (i, v) in report.per_point.iter().enumerate() {
        w.write_record([(report.start_index + i).to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
