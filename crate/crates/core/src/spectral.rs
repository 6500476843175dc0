//! Sample lag cross-covariances and the autocovariance aggregation matrices.
//!
//! Every aggregate in the pipeline has the same form. For a series of `a × b`
//! matrices `Xₜ` with columns `x_{t,·i}`,
//!
//! ```text
//! Σ̂ᵢⱼ(l) = (T − l)⁻¹ Σ_{t=1}^{T−l} x_{t,·i} x_{t+l,·j}ᵀ
//! M̂      = Σ_{l ∈ lags} Σ_{i,j=1}^{b} Σ̂ᵢⱼ(l) Σ̂ᵢⱼ(l)ᵀ          (a × a)
//! ```
//!
//! The named aggregates differ only in which series is fed in: the raw data
//! (`M̂₀,₁`, `M̂₀,₂` for the transposed data), the data projected on an initial
//! opposite-side loading estimate (`M̂₁`, `M̂₂`), the residual series after
//! removing the global part (`M̂*₀,₁`, `M̂*₀,₂`) and its projections (`M̂*₁`,
//! `M̂*₂`). No means are subtracted.
//!
//! Two evaluation routes give the same matrix:
//!
//! - [`Route::BlockMoment`] forms the `ab × ab` lag cross-moment of the
//!   vectorized series with one product over time and then sums `BᵢⱼBᵢⱼᵀ`
//!   over the blocks, itself a single product after a reshape;
//! - [`Route::Gram`] uses `Σᵢⱼ Σ̂ᵢⱼΣ̂ᵢⱼᵀ = n⁻² Σ_{t,s} ⟨X_{t+l}, X_{s+l}⟩_F XₜXₛᵀ`
//!   and only needs the `T × T` Gram matrix of the observations, shared by
//!   every lag and by both orientations.
//!
//! [`Route::Auto`] picks whichever needs fewer flops, subject to a memory cap
//! on the block route.

use std::ops::RangeInclusive;

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3};

use crate::error::{Error, Result};
use crate::linalg::symmetrize;
use crate::types::{LoadingMatrix, MatrixSeries, Orientation};

/// Largest `ab × ab` cross-moment the block route will materialize.
const BLOCK_ROUTE_MAX_ENTRIES: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Route {
    #[default]
    Auto,
    BlockMoment,
    Gram,
}

/// All lag-`l` cross-covariance blocks `Σ̂ᵢⱼ(l)` for one orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct LagCovBlocks {
    pub lag: usize,
    pub orientation: Orientation,
    /// Side length of each block (`p` for columns, `q` for rows).
    pub dim: usize,
    /// Number of column (or row) vectors; `blocks` has `count²` entries.
    pub count: usize,
    blocks: Vec<Array2<f64>>,
}

impl LagCovBlocks {
    pub fn block(&self, i: usize, j: usize) -> &Array2<f64> {
        &self.blocks[i * self.count + j]
    }
}

/// `T × a × b` view whose columns are the vectors of the given orientation.
fn oriented(series: &MatrixSeries, orientation: Orientation) -> ArrayView3<'_, f64> {
    match orientation {
        Orientation::Column => series.data().view(),
        Orientation::Row => series.data().view().permuted_axes([0, 2, 1]),
    }
}

fn check_lag(lag: usize, len: usize) -> Result<()> {
    if lag == 0 || lag >= len {
        return Err(Error::Lag { lag, len });
    }
    Ok(())
}

fn check_lags(lags: &RangeInclusive<usize>, len: usize) -> Result<()> {
    if lags.is_empty() {
        return Err(Error::Lag {
            lag: *lags.start(),
            len,
        });
    }
    check_lag(*lags.start(), len)?;
    check_lag(*lags.end(), len)
}

/// Single block `Σ̂ᵢⱼ(l) = (T − l)⁻¹ Σₜ x_{t,·i} x_{t+l,·j}ᵀ` (0-based `i`, `j`).
/// With `Orientation::Row` the vectors are the rows of `Xₜ`.
pub fn lag_cross_cov(
    series: &MatrixSeries,
    i: usize,
    j: usize,
    lag: usize,
    orientation: Orientation,
) -> Result<Array2<f64>> {
    let data = oriented(series, orientation);
    let (t_len, a, b) = data.dim();
    check_lag(lag, t_len)?;
    if i >= b || j >= b {
        return Err(Error::Dimension(format!(
            "vector indices ({i}, {j}) out of range 0..{b}"
        )));
    }
    let n = t_len - lag;
    let lead = data.slice(s![..n, .., i]);
    let lagged = data.slice(s![lag.., .., j]);
    let mut out = lead.t().dot(&lagged);
    out /= n as f64;
    debug_assert_eq!(out.dim(), (a, a));
    Ok(out)
}

/// Every block `Σ̂ᵢⱼ(l)` at one lag.
pub fn lag_cov_blocks(
    series: &MatrixSeries,
    lag: usize,
    orientation: Orientation,
) -> Result<LagCovBlocks> {
    let data = oriented(series, orientation);
    let (t_len, a, b) = data.dim();
    check_lag(lag, t_len)?;
    let moment = cross_moment(&flatten(data), lag);
    let mut blocks = Vec::with_capacity(b * b);
    for i in 0..b {
        for j in 0..b {
            blocks.push(moment.slice(s![i..;b, j..;b]).to_owned());
        }
    }
    Ok(LagCovBlocks {
        lag,
        orientation,
        dim: a,
        count: b,
        blocks,
    })
}

/// `M̂₀,₁` (column orientation, `p × p`) or `M̂₀,₂` (row orientation, `q × q`)
/// summed over lags `1..=l0`.
pub fn aggregate_m0(series: &MatrixSeries, l0: usize, orientation: Orientation) -> Result<Array2<f64>> {
    aggregate_lags(series, 1..=l0, orientation, Route::Auto)
}

/// The aggregate restricted to an arbitrary lag range, evaluated by `route`.
pub fn aggregate_lags(
    series: &MatrixSeries,
    lags: RangeInclusive<usize>,
    orientation: Orientation,
    route: Route,
) -> Result<Array2<f64>> {
    check_lags(&lags, series.len())?;
    Ok(aggregate_view(oriented(series, orientation), lags, route))
}

/// The aggregate of a raw `T × a × b` tensor over the columns of each
/// `a × b` slice, evaluated by `route`.
pub fn aggregate_tensor(
    data: ArrayView3<'_, f64>,
    lags: RangeInclusive<usize>,
    route: Route,
) -> Result<Array2<f64>> {
    check_lags(&lags, data.dim().0)?;
    Ok(aggregate_view(data, lags, route))
}

/// `(M̂₀,₁, M̂₀,₂)` from one shared Gram matrix.
pub fn aggregate_m0_pair(series: &MatrixSeries, l0: usize) -> Result<(Array2<f64>, Array2<f64>)> {
    let lags = 1..=l0;
    check_lags(&lags, series.len())?;
    let col = oriented(series, Orientation::Column);
    let row = oriented(series, Orientation::Row);
    let (_, p, q) = col.dim();
    let col_route = choose_route(series.len(), p, q, l0);
    let row_route = choose_route(series.len(), q, p, l0);
    if col_route == Route::Gram && row_route == Route::Gram {
        let v = flatten(col);
        let gram = v.dot(&v.t());
        let m_col = gram_aggregate(col, &gram, lags.clone());
        let m_row = gram_aggregate(row, &gram, lags);
        Ok((m_col, m_row))
    } else {
        Ok((
            aggregate_view(col, lags.clone(), col_route),
            aggregate_view(row, lags, row_route),
        ))
    }
}

/// `M̂₁` / `M̂₂`: the aggregate of the series projected on an opposite-side
/// loading estimate.
///
/// Column orientation uses `Ẑₜ = XₜĈ⁰` (`proj` is `q × r₀`, result `p × p`);
/// row orientation uses `Ŵₜ = XₜᵀR̂⁰` (`proj` is `p × k₀`, result `q × q`).
pub fn aggregate_m_projected(
    series: &MatrixSeries,
    proj: &LoadingMatrix,
    l0: usize,
    orientation: Orientation,
) -> Result<Array2<f64>> {
    let lags = 1..=l0;
    check_lags(&lags, series.len())?;
    let projected = project(series, proj, orientation)?;
    Ok(aggregate_view(projected.view(), lags, Route::Auto))
}

/// `M̂*₀,₁` / `M̂*₀,₂`: [`aggregate_m0`] applied to the residual series.
pub fn aggregate_mstar0(
    residuals: &MatrixSeries,
    l0: usize,
    orientation: Orientation,
) -> Result<Array2<f64>> {
    aggregate_m0(residuals, l0, orientation)
}

/// `M̂*₁` / `M̂*₂`: the aggregate of the residual series projected on an
/// initial cluster-specific loading estimate.
///
/// Column orientation uses `Ûₜ = ŶₜΛ̂⁰` (`proj` is `q × r`, result `p × p`);
/// row orientation uses `Ĥₜ = ŶₜᵀΓ̂⁰` (`proj` is `p × k`, result `q × q`). The
/// inner double sum runs over the columns of the projection.
pub fn aggregate_mstar_projected(
    residuals: &MatrixSeries,
    proj: &LoadingMatrix,
    l0: usize,
    orientation: Orientation,
) -> Result<Array2<f64>> {
    aggregate_m_projected(residuals, proj, l0, orientation)
}

/// `Ŷₜ = (I − R̂R̂ᵀ) Xₜ (I − ĈĈᵀ)`.
pub fn residual_series(
    series: &MatrixSeries,
    row_global: &LoadingMatrix,
    col_global: &LoadingMatrix,
) -> Result<MatrixSeries> {
    if row_global.dim() != series.rows() || col_global.dim() != series.cols() {
        return Err(Error::Dimension(format!(
            "global loadings ({}, {}) do not match a {}x{} series",
            row_global.dim(),
            col_global.dim(),
            series.rows(),
            series.cols()
        )));
    }
    let r = row_global.values();
    let c = col_global.values();
    let mut out = series.data().clone();
    for mut x in out.outer_iter_mut() {
        if !r.is_empty() {
            let coef = r.t().dot(&x);
            x -= &r.dot(&coef);
        }
        if !c.is_empty() {
            let coef = x.dot(c);
            x -= &coef.dot(&c.t());
        }
    }
    Ok(MatrixSeries::from_parts_unchecked(
        out,
        series.row_labels().map(<[String]>::to_vec),
        series.col_labels().map(<[String]>::to_vec),
    ))
}

/// `T × a × k` series `XₜV` (column orientation) or `XₜᵀV` (row orientation).
pub fn project(
    series: &MatrixSeries,
    proj: &LoadingMatrix,
    orientation: Orientation,
) -> Result<Array3<f64>> {
    let data = oriented(series, orientation);
    let (t_len, a, b) = data.dim();
    if proj.dim() != b {
        return Err(Error::Dimension(format!(
            "projection has {} rows, expected {b} for {orientation:?} orientation",
            proj.dim()
        )));
    }
    let k = proj.n_factors();
    let flat = data
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((t_len * a, b))
        .expect("contiguous");
    let out = flat.dot(proj.values());
    Ok(out.into_shape_with_order((t_len, a, k)).expect("contiguous"))
}

fn flatten(data: ArrayView3<'_, f64>) -> Array2<f64> {
    let (t_len, a, b) = data.dim();
    data.as_standard_layout()
        .into_owned()
        .into_shape_with_order((t_len, a * b))
        .expect("contiguous")
}

/// `(T − l)⁻¹ Σₜ vec(Xₜ) vec(X_{t+l})ᵀ` with row-major vectorization, so the
/// entry for `((u, i), (v, j))` sits at `(u·b + i, v·b + j)`.
fn cross_moment(v: &Array2<f64>, lag: usize) -> Array2<f64> {
    let t_len = v.nrows();
    let n = t_len - lag;
    let mut m = v.slice(s![..n, ..]).t().dot(&v.slice(s![lag.., ..]));
    m /= n as f64;
    m
}

fn choose_route(t_len: usize, a: usize, b: usize, l0: usize) -> Route {
    let ab = (a * b) as f64;
    let t = t_len as f64;
    let l = l0 as f64;
    let block = l * (t * ab * ab + (a * a) as f64 * b as f64 * ab);
    let gram = t * t * ab + l * (t * t * ab + t * (a * a) as f64 * b as f64);
    if block <= gram && a * b * a * b <= BLOCK_ROUTE_MAX_ENTRIES {
        Route::BlockMoment
    } else {
        Route::Gram
    }
}

fn aggregate_view(data: ArrayView3<'_, f64>, lags: RangeInclusive<usize>, route: Route) -> Array2<f64> {
    let (t_len, a, b) = data.dim();
    if b == 0 {
        return Array2::zeros((a, a));
    }
    let route = match route {
        Route::Auto => choose_route(t_len, a, b, *lags.end()),
        r => r,
    };
    match route {
        Route::BlockMoment => block_aggregate(data, lags),
        _ => {
            let v = flatten(data);
            let gram = v.dot(&v.t());
            gram_aggregate(data, &gram, lags)
        }
    }
}

fn block_aggregate(data: ArrayView3<'_, f64>, lags: RangeInclusive<usize>) -> Array2<f64> {
    let (_, a, b) = data.dim();
    let v = flatten(data);
    let mut acc = Array2::<f64>::zeros((a, a));
    for lag in lags {
        // Row u of the reshaped moment concatenates the rows (u, i), i = 0..b,
        // so one product gives Σᵢⱼ BᵢⱼBᵢⱼᵀ.
        let moment = cross_moment(&v, lag)
            .into_shape_with_order((a, b * a * b))
            .expect("contiguous");
        acc += &moment.dot(&moment.t());
    }
    symmetrize(acc.view())
}

/// `a × (n·b)` matrix whose block `t` is `Xₜ`, for `t < n`.
fn side_by_side(data: ArrayView3<'_, f64>, n: usize) -> Array2<f64> {
    let (_, a, b) = data.dim();
    data.slice(s![..n, .., ..])
        .permuted_axes([1, 0, 2])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((a, n * b))
        .expect("contiguous")
}

fn gram_aggregate(
    data: ArrayView3<'_, f64>,
    gram: &Array2<f64>,
    lags: RangeInclusive<usize>,
) -> Array2<f64> {
    let (t_len, a, b) = data.dim();
    let mut acc = Array2::<f64>::zeros((a, a));
    for lag in lags {
        let n = t_len - lag;
        let kernel: ArrayView2<'_, f64> = gram.slice(s![lag.., lag..]);
        let lead = data.slice(s![..n, .., ..]);
        let lead_flat = flatten(lead);
        // Yₜ = Σₛ K_{ts} Xₛ
        let mixed = kernel
            .dot(&lead_flat)
            .into_shape_with_order((n, a, b))
            .expect("contiguous");
        let left = side_by_side(lead, n);
        let right = side_by_side(mixed.view(), n);
        let mut term = left.dot(&right.t());
        term /= (n * n) as f64;
        acc += &term;
    }
    symmetrize(acc.view())
}
