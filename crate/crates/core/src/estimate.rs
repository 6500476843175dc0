//! Factor-number estimation by eigenvalue ratios, and projected estimation of
//! the global and cluster-specific loading spaces.

use log::warn;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_eig_top, sym_eigenvalues};
use crate::spectral::{
    aggregate_m0_pair, aggregate_m_projected, aggregate_mstar_projected, residual_series,
};
use crate::types::{FactorNumbers, LoadingKind, LoadingMatrix, LoadingSet, MatrixSeries, Orientation};

/// Ratios are cut off at the first `j` with `λ_{j+1} < RATIO_FLOOR · λ₁`.
pub const RATIO_FLOOR: f64 = 1e-12;

/// Eigenvalues of an aggregate and the consecutive ratios used to count
/// factors. Indices are 1-based, matching the factor counts they encode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioDiagnostics {
    pub eigenvalues: Vec<f64>,
    pub j0: usize,
    /// `ratios[j - 1] = λⱼ / λⱼ₊₁`.
    pub ratios: Vec<f64>,
    /// Index `j` at which the zero-eigenvalue guard stopped the sequence.
    pub truncated_at: Option<usize>,
    pub local_max_indices: Vec<usize>,
    /// `(μ̂₁, μ̂₂)`, ordered by ratio value.
    pub chosen: Option<(usize, usize)>,
    /// Whether `chosen` came from the fallback (fewer than two local maxima).
    pub fallback: bool,
}

/// Consecutive eigenvalue ratios `λⱼ/λⱼ₊₁` for `j = 1..J₀−1`.
///
/// The sequence stops early at the first `j` where `λⱼ₊₁ < 1e−12·λ₁`, which
/// keeps numerically zero tails out of the ratios.
pub fn eigen_ratios(eigenvalues: &[f64], j0: usize) -> Result<RatioDiagnostics> {
    if let Some(i) = eigenvalues.windows(2).position(|w| w[1] > w[0]) {
        return Err(Error::Order(i + 1));
    }
    if j0 < 2 || j0 > eigenvalues.len() {
        return Err(Error::Config(format!(
            "J0 = {j0} must lie in 2..={}",
            eigenvalues.len()
        )));
    }
    let top = eigenvalues[0];
    let mut ratios = Vec::with_capacity(j0 - 1);
    let mut truncated_at = None;
    for j in 1..j0 {
        let next = eigenvalues[j];
        if !(next >= RATIO_FLOOR * top) || next <= 0.0 {
            truncated_at = Some(j);
            break;
        }
        ratios.push(eigenvalues[j - 1] / next);
    }
    let local_max_indices = local_maxima(&ratios);
    Ok(RatioDiagnostics {
        eigenvalues: eigenvalues.to_vec(),
        j0,
        ratios,
        truncated_at,
        local_max_indices,
        chosen: None,
        fallback: false,
    })
}

/// 1-based indices `j` with `ratios[j]` at least as large as each existing
/// neighbour.
fn local_maxima(ratios: &[f64]) -> Vec<usize> {
    let n = ratios.len();
    (0..n)
        .filter(|&j| {
            let left = j == 0 || ratios[j] >= ratios[j - 1];
            let right = j + 1 == n || ratios[j] >= ratios[j + 1];
            left && right
        })
        .map(|j| j + 1)
        .collect()
}

/// Two largest of `candidates` by ratio value, ties to the smaller index.
fn top_two(ratios: &[f64], candidates: &[usize]) -> (usize, usize) {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|&a, &b| ratios[b - 1].total_cmp(&ratios[a - 1]).then(a.cmp(&b)));
    (sorted[0], sorted[1])
}

/// Indices of the two largest local maxima of the ratio sequence.
///
/// A local maximum is an entry at least as large as each neighbour (ends are
/// compared one-sided). With fewer than two local maxima, the indices of the
/// two largest ratios overall are returned instead.
pub fn two_largest_local_maxima(diag: &RatioDiagnostics) -> Result<(usize, usize)> {
    Ok(select_pair(diag)?.0)
}

fn select_pair(diag: &RatioDiagnostics) -> Result<((usize, usize), bool)> {
    if diag.ratios.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least two eigenvalue ratios, have {}",
            diag.ratios.len()
        )));
    }
    if diag.local_max_indices.len() >= 2 {
        Ok((top_two(&diag.ratios, &diag.local_max_indices), false))
    } else {
        let all: Vec<usize> = (1..=diag.ratios.len()).collect();
        Ok((top_two(&diag.ratios, &all), true))
    }
}

/// `⌈d/2⌉`, kept within `2..=d`.
pub fn default_j0(d: usize) -> usize {
    d.div_ceil(2).max(2).min(d)
}

fn count_from_aggregate(m: &Array2<f64>, j0: usize, label: &str) -> Result<(usize, usize, RatioDiagnostics)> {
    // tiny negative eigenvalues are rounding noise on a PSD aggregate
    let eig: Vec<f64> = sym_eigenvalues(m.view())?
        .iter()
        .map(|v| v.max(0.0))
        .collect();
    let mut diag = eigen_ratios(&eig, j0)?;
    let ((mu1, mu2), fallback) = select_pair(&diag)?;
    diag.chosen = Some((mu1, mu2));
    diag.fallback = fallback;
    let strong = mu1.min(mu2);
    let mut weak = mu1.max(mu2) - strong;
    if weak == 0 {
        warn!("{label}: both ratio peaks coincide at {strong}; setting weak count to 1");
        weak = 1;
    }
    Ok((strong, weak, diag))
}

/// One-pass estimates of `(k₀, k, r₀, r)`.
///
/// Row counts come from the eigenvalue ratios of `M̂₀,₁` (`k̂₀ = min(μ̂₁, μ̂₂)`,
/// `k̂₀ + k̂ = max(μ̂₁, μ̂₂)`), column counts from `M̂₀,₂`. `J₀` defaults to
/// half the dimension when not given.
pub fn estimate_factor_numbers(
    series: &MatrixSeries,
    l0: usize,
    j0_row: Option<usize>,
    j0_col: Option<usize>,
) -> Result<FactorNumbers> {
    let (p, q) = (series.rows(), series.cols());
    if p < 2 || q < 2 {
        return Err(Error::InsufficientData(format!(
            "factor counting needs p, q >= 2 (got {p}x{q})"
        )));
    }
    let j0_row = j0_row.unwrap_or_else(|| default_j0(p)).min(p);
    let j0_col = j0_col.unwrap_or_else(|| default_j0(q)).min(q);
    let (m01, m02) = aggregate_m0_pair(series, l0)?;
    let (row, col) = rayon::join(
        || count_from_aggregate(&m01, j0_row, "row factors"),
        || count_from_aggregate(&m02, j0_col, "column factors"),
    );
    let (k0, k, row_diag) = row?;
    let (r0, r, col_diag) = col?;
    Ok(FactorNumbers {
        k0,
        k,
        r0,
        r,
        row_diagnostics: Some(row_diag),
        col_diagnostics: Some(col_diag),
    })
}

/// Column-orthonormal basis of the `k` leading eigenvectors of `m`
/// (empty when `k = 0`).
pub fn leading_loadings(m: &Array2<f64>, k: usize, kind: LoadingKind) -> Result<LoadingMatrix> {
    if k == 0 {
        return Ok(LoadingMatrix::empty(m.nrows(), kind));
    }
    let (_, vecs) = sym_eig_top(m.view(), k)?;
    LoadingMatrix::new(vecs, kind)
}

/// Global loadings `R̂`, `Ĉ` with the initial estimates they were refined from.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalEstimate {
    pub row: LoadingMatrix,
    pub col: LoadingMatrix,
    pub row_initial: LoadingMatrix,
    pub col_initial: LoadingMatrix,
}

/// Cluster-specific loadings `Γ̂`, `Λ̂` with their initial estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterEstimate {
    pub row: LoadingMatrix,
    pub col: LoadingMatrix,
    pub row_initial: LoadingMatrix,
    pub col_initial: LoadingMatrix,
}

fn check_l0(l0: usize, len: usize) -> Result<()> {
    if l0 == 0 || l0 >= len {
        return Err(Error::Lag { lag: l0, len });
    }
    Ok(())
}

/// Initial global loadings `R̂⁰`, `Ĉ⁰`: leading eigenvectors of `M̂₀,₁`, `M̂₀,₂`.
pub fn initial_global_loadings(
    series: &MatrixSeries,
    k0: usize,
    r0: usize,
    l0: usize,
) -> Result<(LoadingMatrix, LoadingMatrix)> {
    check_l0(l0, series.len())?;
    if k0 > series.rows() || r0 > series.cols() {
        return Err(Error::Dimension(format!(
            "k0 = {k0}, r0 = {r0} exceed a {}x{} series",
            series.rows(),
            series.cols()
        )));
    }
    let (m01, m02) = aggregate_m0_pair(series, l0)?;
    Ok((
        leading_loadings(&m01, k0, LoadingKind::GlobalRow)?,
        leading_loadings(&m02, r0, LoadingKind::GlobalCol)?,
    ))
}

/// Projected estimation of the global loading spaces.
///
/// Starts from [`initial_global_loadings`], projects `Ẑₜ = XₜĈ⁰` and
/// `Ŵₜ = XₜᵀR̂⁰`, and takes `R̂`, `Ĉ` as the leading eigenvectors of `M̂₁`, `M̂₂`.
/// Exactly one refinement pass.
pub fn estimate_global_loadings(
    series: &MatrixSeries,
    k0: usize,
    r0: usize,
    l0: usize,
) -> Result<GlobalEstimate> {
    estimate_global_loadings_iter(series, k0, r0, l0, 1)
}

/// [`estimate_global_loadings`] with `passes` refinement passes, each
/// projecting on the previous pass's estimates.
pub fn estimate_global_loadings_iter(
    series: &MatrixSeries,
    k0: usize,
    r0: usize,
    l0: usize,
    passes: usize,
) -> Result<GlobalEstimate> {
    let (row_initial, col_initial) = initial_global_loadings(series, k0, r0, l0)?;
    let mut row = row_initial.clone();
    let mut col = col_initial.clone();
    for _ in 0..passes {
        let (m1, m2) = rayon::join(
            || aggregate_m_projected(series, &col, l0, Orientation::Column),
            || aggregate_m_projected(series, &row, l0, Orientation::Row),
        );
        let next_row = leading_loadings(&m1?, k0, LoadingKind::GlobalRow)?;
        let next_col = leading_loadings(&m2?, r0, LoadingKind::GlobalCol)?;
        row = next_row;
        col = next_col;
    }
    Ok(GlobalEstimate {
        row,
        col,
        row_initial,
        col_initial,
    })
}

/// Projected estimation of the cluster-specific loading spaces.
///
/// Removes the global part, `Ŷₜ = (I − R̂R̂ᵀ)Xₜ(I − ĈĈᵀ)`, takes `Γ̂⁰`, `Λ̂⁰` from
/// `M̂*₀,₁`, `M̂*₀,₂`, then `Γ̂`, `Λ̂` from `M̂*₁`, `M̂*₂` built on `Ûₜ = ŶₜΛ̂⁰` and
/// `Ĥₜ = ŶₜᵀΓ̂⁰`. The estimates target `(I − RRᵀ)Γ` and `(I − CCᵀ)Λ`.
pub fn estimate_cluster_loadings(
    series: &MatrixSeries,
    row_global: &LoadingMatrix,
    col_global: &LoadingMatrix,
    k: usize,
    r: usize,
    l0: usize,
) -> Result<ClusterEstimate> {
    check_l0(l0, series.len())?;
    let (p, q) = (series.rows(), series.cols());
    if k + row_global.n_factors() > p || r + col_global.n_factors() > q {
        return Err(Error::Dimension(format!(
            "k = {k}, r = {r} do not fit beside k0 = {}, r0 = {} in a {p}x{q} series",
            row_global.n_factors(),
            col_global.n_factors()
        )));
    }
    let residuals = residual_series(series, row_global, col_global)?;
    let (ms01, ms02) = aggregate_m0_pair(&residuals, l0)?;
    let row_initial = leading_loadings(&ms01, k, LoadingKind::LocalRow)?;
    let col_initial = leading_loadings(&ms02, r, LoadingKind::LocalCol)?;
    let (m1, m2) = rayon::join(
        || aggregate_mstar_projected(&residuals, &col_initial, l0, Orientation::Column),
        || aggregate_mstar_projected(&residuals, &row_initial, l0, Orientation::Row),
    );
    Ok(ClusterEstimate {
        row: leading_loadings(&m1?, k, LoadingKind::LocalRow)?,
        col: leading_loadings(&m2?, r, LoadingKind::LocalCol)?,
        row_initial,
        col_initial,
    })
}

/// Global then cluster-specific loadings for given factor counts.
pub fn fit_loadings(series: &MatrixSeries, counts: &FactorNumbers, l0: usize) -> Result<LoadingSet> {
    counts.validate(series.rows(), series.cols())?;
    let global = estimate_global_loadings(series, counts.k0, counts.r0, l0)?;
    let local = estimate_cluster_loadings(series, &global.row, &global.col, counts.k, counts.r, l0)?;
    LoadingSet::new(global.row, global.col, local.row, local.col)
}
