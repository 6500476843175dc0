//! Cluster counts, similarity matrices, K-means, and the end-to-end
//! biclustering pipeline.

use log::warn;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage, StageExt};
use crate::estimate::{estimate_cluster_loadings, estimate_factor_numbers, estimate_global_loadings};
use crate::linalg::sym_eigenvalues;
use crate::types::{BiclusterResult, FactorNumbers, LoadingMatrix, LoadingSet, MatrixSeries};

/// Rows with Euclidean norm below this are treated as carrying no loading.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub n_clusters: usize,
    pub restarts: usize,
    pub max_iter: usize,
    /// Lloyd iterations stop once the objective improves by at most
    /// `tol` times its previous value.
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            n_clusters: 1,
            restarts: 20,
            max_iter: 100,
            tol: 1e-8,
            seed: 0,
        }
    }
}

impl KMeansConfig {
    pub fn new(n_clusters: usize, seed: u64) -> Self {
        KMeansConfig {
            n_clusters,
            seed,
            ..Default::default()
        }
    }

    pub fn with_clusters(&self, n_clusters: usize) -> Self {
        KMeansConfig {
            n_clusters,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_clusters == 0 {
            return Err(Error::Config("n_clusters must be at least 1".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Config(format!("tol = {} must be nonnegative", self.tol)));
        }
        Ok(())
    }
}

/// Eigenvalues (descending) of the entrywise absolute Gram matrix `|LLᵀ|`.
pub fn abs_gram_eigenvalues(l: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    let gram = l.dot(&l.t()).mapv(f64::abs);
    Ok(sym_eigenvalues(gram.view())?.to_vec())
}

/// Threshold `1 − 1/ln T` on the eigenvalues of `|LLᵀ|`.
pub fn cluster_count_threshold(t_len: usize) -> Result<f64> {
    if t_len <= 2 {
        return Err(Error::Config(format!(
            "cluster count bound needs T >= 3 (got {t_len})"
        )));
    }
    Ok(1.0 - 1.0 / (t_len as f64).ln())
}

/// Number of eigenvalues of `|LLᵀ|` above `1 − 1/ln T`.
pub fn cluster_count_upper_bound(l: &LoadingMatrix, t_len: usize) -> Result<usize> {
    let threshold = cluster_count_threshold(t_len)?;
    Ok(abs_gram_eigenvalues(l.values().view())?
        .iter()
        .filter(|&&v| v > threshold)
        .count())
}

/// Absolute cosine similarity between the rows of `a`, plus the indices of
/// rows too small to have a direction (their off-diagonal entries are 0).
pub fn similarity_from_rows(a: ArrayView2<'_, f64>) -> (Array2<f64>, Vec<usize>) {
    let d = a.nrows();
    let norms: Vec<f64> = a
        .axis_iter(Axis(0))
        .map(|row| row.dot(&row).sqrt())
        .collect();
    let degenerate: Vec<usize> = (0..d).filter(|&i| !(norms[i] >= DEGENERATE_NORM)).collect();
    let gram = a.dot(&a.t());
    let mut out = Array2::zeros((d, d));
    for i in 0..d {
        out[[i, i]] = 1.0;
        if norms[i] < DEGENERATE_NORM {
            continue;
        }
        for j in (i + 1)..d {
            if norms[j] < DEGENERATE_NORM {
                continue;
            }
            let v = (gram[[i, j]].abs() / (norms[i] * norms[j])).min(1.0);
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    (out, degenerate)
}

/// `d̂ᵢⱼ = |γᵢᵀγⱼ| / (‖γᵢ‖‖γⱼ‖)` over the rows of a loading matrix.
pub fn similarity_matrix(l: &LoadingMatrix) -> Array2<f64> {
    let (sim, degenerate) = similarity_from_rows(l.values().view());
    if !degenerate.is_empty() {
        warn!(
            "{} loading rows are numerically zero (1-based: {:?}); their similarities are set to 0",
            degenerate.len(),
            degenerate.iter().map(|i| i + 1).collect::<Vec<_>>()
        );
    }
    sim
}

/// Full output of one K-means run.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    /// 1-based labels, numbered by order of first appearance.
    pub labels: Vec<usize>,
    pub objective: f64,
    pub centers: Array2<f64>,
    /// Index of the winning restart.
    pub best_restart: usize,
    /// Final objective of every restart.
    pub restart_objectives: Vec<f64>,
    /// Objective after each assignment step of every restart.
    pub histories: Vec<Vec<f64>>,
}

fn sq_dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp_init<R: Rng>(points: ArrayView2<'_, f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = points.nrows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut best: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = best.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in best.iter().enumerate() {
                if w > 0.0 {
                    if u < w {
                        pick = Some(i);
                        break;
                    }
                    u -= w;
                }
            }
            // rounding can leave u just past the last positive weight
            pick.unwrap_or_else(|| best.iter().rposition(|&w| w > 0.0).unwrap_or(0))
        } else {
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, b) in best.iter_mut().enumerate() {
            *b = b.min(sq_dist(points.row(i), points.row(next)));
        }
    }
    let mut centers = Array2::zeros((k, points.ncols()));
    for (c, &i) in chosen.iter().enumerate() {
        centers.row_mut(c).assign(&points.row(i));
    }
    centers
}

/// Nearest center per point (ties to the lower center index) and the
/// resulting within-cluster sum of squares.
fn assign(points: ArrayView2<'_, f64>, centers: &Array2<f64>, labels: &mut [usize], dists: &mut [f64]) -> f64 {
    let mut total = 0.0;
    for (i, p) in points.axis_iter(Axis(0)).enumerate() {
        let mut best = (0, f64::INFINITY);
        for (c, center) in centers.axis_iter(Axis(0)).enumerate() {
            let d = sq_dist(p, center);
            if d < best.1 {
                best = (c, d);
            }
        }
        labels[i] = best.0;
        dists[i] = best.1;
        total += best.1;
    }
    total
}

fn lloyd<R: Rng>(
    points: ArrayView2<'_, f64>,
    cfg: &KMeansConfig,
    rng: &mut R,
) -> (Vec<usize>, f64, Array2<f64>, Vec<f64>) {
    let (n, dim) = points.dim();
    let k = cfg.n_clusters;
    let mut centers = kmeans_pp_init(points, k, rng);
    let mut labels = vec![0; n];
    let mut dists = vec![0.0; n];
    let mut objective = assign(points, &centers, &mut labels, &mut dists);
    let mut history = vec![objective];
    for _ in 0..cfg.max_iter {
        let mut sums = Array2::<f64>::zeros((k, dim));
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            sums.row_mut(c).scaled_add(1.0, &points.row(i));
            counts[c] += 1;
        }
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                let mean = &sums.row(c) / counts[c] as f64;
                centers.row_mut(c).assign(&mean);
            } else {
                // an empty cluster restarts at the worst-served point
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
                if let Some(i) = far {
                    taken[i] = true;
                    centers.row_mut(c).assign(&points.row(i));
                }
            }
        }
        let prev_labels = labels.clone();
        let next = assign(points, &centers, &mut labels, &mut dists);
        history.push(next);
        let improvement = objective - next;
        objective = next;
        if labels == prev_labels || objective == 0.0 || improvement <= cfg.tol * (objective + improvement) {
            break;
        }
    }
    (labels, objective, centers, history)
}

/// Relabels to `1, 2, …` in order of first appearance.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map: Vec<(usize, usize)> = Vec::new();
    labels
        .iter()
        .map(|&l| match map.iter().find(|(from, _)| *from == l) {
            Some(&(_, to)) => to,
            None => {
                let to = map.len() + 1;
                map.push((l, to));
                to
            }
        })
        .collect()
}

/// K-means on the rows of `points` with k-means++ seeding and restarts.
///
/// Restart `i` draws from ChaCha stream `i` of `cfg.seed`; the winner is the
/// lowest final objective, ties to the lower restart index.
pub fn kmeans(points: ArrayView2<'_, f64>, cfg: &KMeansConfig) -> Result<KMeansFit> {
    cfg.validate()?;
    if cfg.n_clusters > points.nrows() {
        return Err(Error::Dimension(format!(
            "{} clusters requested for {} points",
            cfg.n_clusters,
            points.nrows()
        )));
    }
    let runs: Vec<_> = (0..cfg.restarts)
        .into_par_iter()
        .map(|restart| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(restart as u64);
            lloyd(points, cfg, &mut rng)
        })
        .collect();
    let best_restart = (0..runs.len())
        .min_by(|&a, &b| runs[a].1.total_cmp(&runs[b].1).then(a.cmp(&b)))
        .expect("at least one restart");
    let restart_objectives = runs.iter().map(|r| r.1).collect();
    let histories = runs.iter().map(|r| r.3.clone()).collect();
    let (labels, objective, centers, _) = runs.into_iter().nth(best_restart).expect("index in range");
    Ok(KMeansFit {
        labels: canonical_labels(&labels),
        objective,
        centers,
        best_restart,
        restart_objectives,
        histories,
    })
}

/// K-means on the rows of a similarity matrix; 1-based canonical labels.
pub fn kmeans_rows(m: ArrayView2<'_, f64>, cfg: &KMeansConfig) -> Result<Vec<usize>> {
    Ok(kmeans(m, cfg)?.labels)
}

/// `1 −` the best fraction of agreeing positions over one-to-one matchings
/// of found labels to true labels.
pub fn misclustering_rate(found: &[usize], truth: &[usize]) -> Result<f64> {
    if found.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "membership lengths differ: {} vs {}",
            found.len(),
            truth.len()
        )));
    }
    if found.is_empty() {
        return Err(Error::InsufficientData("empty membership vectors".into()));
    }
    let index = |labels: &[usize]| {
        let mut distinct: Vec<usize> = labels.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let ids: Vec<usize> = labels
            .iter()
            .map(|l| distinct.binary_search(l).expect("label present"))
            .collect();
        (distinct.len(), ids)
    };
    let (nf, fid) = index(found);
    let (nt, tid) = index(truth);
    let mut confusion = vec![vec![0i64; nt]; nf];
    for (&a, &b) in fid.iter().zip(&tid) {
        confusion[a][b] += 1;
    }
    // kuhn_munkres wants no more rows than columns
    let weights = if nf <= nt {
        Matrix::from_rows(confusion).expect("rectangular")
    } else {
        let transposed: Vec<Vec<i64>> = (0..nt).map(|j| (0..nf).map(|i| confusion[i][j]).collect()).collect();
        Matrix::from_rows(transposed).expect("rectangular")
    };
    let (matched, _) = kuhn_munkres(&weights);
    Ok(1.0 - matched as f64 / found.len() as f64)
}

/// Options for [`bicluster_pipeline`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiclusterConfig {
    /// K-means settings; `n_clusters` is replaced by `m̂` and `n̂`.
    pub kmeans: KMeansConfig,
    pub j0_row: Option<usize>,
    pub j0_col: Option<usize>,
    /// Fixed `(m, n)` instead of the eigenvalue-threshold counts.
    pub clusters: Option<(usize, usize)>,
}

impl Default for BiclusterConfig {
    fn default() -> Self {
        BiclusterConfig {
            kmeans: KMeansConfig::default(),
            j0_row: None,
            j0_col: None,
            clusters: None,
        }
    }
}

/// Everything [`bicluster_pipeline`] computed.
#[derive(Debug, Clone, PartialEq)]
pub struct BiclusterOutput {
    pub result: BiclusterResult,
    pub loadings: LoadingSet,
    pub factor_numbers: FactorNumbers,
    /// Eigenvalues of `|Γ̂Γ̂ᵀ|` and `|Λ̂Λ̂ᵀ|`, descending.
    pub row_gram_eigenvalues: Vec<f64>,
    pub col_gram_eigenvalues: Vec<f64>,
    /// Threshold-rule counts before clamping to `1..=d`.
    pub m_raw: usize,
    pub n_raw: usize,
}

fn cluster_one_side(
    l: &LoadingMatrix,
    n_clusters: usize,
    kmeans_cfg: &KMeansConfig,
    side: &str,
) -> Result<(Vec<usize>, Array2<f64>)> {
    let (sim, degenerate) = similarity_from_rows(l.values().view());
    let d = sim.nrows();
    if degenerate.is_empty() {
        let labels = kmeans_rows(sim.view(), &kmeans_cfg.with_clusters(n_clusters))?;
        return Ok((labels, sim));
    }
    warn!(
        "{side}: {} of {d} loading rows are numerically zero; assigning them to the largest cluster",
        degenerate.len()
    );
    let keep: Vec<usize> = (0..d).filter(|i| degenerate.binary_search(i).is_err()).collect();
    let mut labels = vec![0usize; d];
    if keep.is_empty() {
        labels.iter_mut().for_each(|l| *l = 1);
        return Ok((labels, sim));
    }
    let sub = sim.select(Axis(0), &keep).select(Axis(1), &keep);
    let k = n_clusters.min(keep.len());
    let sub_labels = kmeans_rows(sub.view(), &kmeans_cfg.with_clusters(k))?;
    let mut sizes = vec![0usize; k + 1];
    for &l in &sub_labels {
        sizes[l] += 1;
    }
    // ties to the smaller label
    let largest = (1..=k).max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a))).unwrap_or(1);
    for (&i, &l) in keep.iter().zip(&sub_labels) {
        labels[i] = l;
    }
    for &i in &degenerate {
        labels[i] = largest;
    }
    Ok((canonical_labels(&labels), sim))
}

fn clamp_count(raw: usize, d: usize, side: &str) -> usize {
    let clamped = raw.clamp(1, d.max(1));
    if clamped != raw {
        warn!("{side}: cluster count {raw} clamped to {clamped}");
    }
    clamped
}

/// Factor counts (estimated unless given), global loadings, cluster-specific
/// loadings, then K-means on the rows of `D̂` and `K̂` with `m̂`, `n̂` clusters.
///
/// Errors carry the stage that raised them.
pub fn bicluster_pipeline(
    series: &MatrixSeries,
    l0: usize,
    factor_numbers: Option<FactorNumbers>,
    cfg: &BiclusterConfig,
) -> Result<BiclusterOutput> {
    let (p, q) = (series.rows(), series.cols());
    let factor_numbers = match factor_numbers {
        Some(f) => f,
        None => estimate_factor_numbers(series, l0, cfg.j0_row, cfg.j0_col).stage(Stage::FactorNumbers)?,
    };
    factor_numbers.validate(p, q).stage(Stage::FactorNumbers)?;
    let (k0, k, r0, r) = factor_numbers.counts();

    let global = estimate_global_loadings(series, k0, r0, l0).stage(Stage::GlobalLoadings)?;
    let local = estimate_cluster_loadings(series, &global.row, &global.col, k, r, l0)
        .stage(Stage::ClusterLoadings)?;
    let loadings = LoadingSet::new(global.row, global.col, local.row, local.col)
        .stage(Stage::ClusterLoadings)?;

    let clustering = || -> Result<_> {
        let row_eig = abs_gram_eigenvalues(loadings.row_local.values().view())?;
        let col_eig = abs_gram_eigenvalues(loadings.col_local.values().view())?;
        let threshold = cluster_count_threshold(series.len())?;
        let count = |eig: &[f64]| eig.iter().filter(|&&v| v > threshold).count();
        let (m_raw, n_raw) = cfg.clusters.unwrap_or((count(&row_eig), count(&col_eig)));
        let m_hat = clamp_count(m_raw, p, "row clusters");
        let n_hat = clamp_count(n_raw, q, "column clusters");
        let (rows, cols) = rayon::join(
            || cluster_one_side(&loadings.row_local, m_hat, &cfg.kmeans, "rows"),
            || cluster_one_side(&loadings.col_local, n_hat, &cfg.kmeans, "columns"),
        );
        let (row_membership, row_similarity) = rows?;
        let (col_membership, col_similarity) = cols?;
        Ok((
            BiclusterResult {
                m_hat,
                n_hat,
                row_membership,
                col_membership,
                row_similarity,
                col_similarity,
            },
            row_eig,
            col_eig,
            m_raw,
            n_raw,
        ))
    };
    let (result, row_gram_eigenvalues, col_gram_eigenvalues, m_raw, n_raw) =
        clustering().stage(Stage::Clustering)?;
    Ok(BiclusterOutput {
        result,
        loadings,
        factor_numbers,
        row_gram_eigenvalues,
        col_gram_eigenvalues,
        m_raw,
        n_raw,
    })
}

/// Cluster sizes indexed by 1-based label (entry 0 unused).
pub fn cluster_sizes(labels: &[usize]) -> Array1<usize> {
    let k = labels.iter().copied().max().unwrap_or(0);
    let mut out = Array1::zeros(k + 1);
    for &l in labels {
        out[l] += 1;
    }
    out
}
