//! Symmetric eigendecomposition, projectors and the loading-space distance.
//!
//! Dense decompositions are delegated to `nalgebra`; everything else in the
//! crate works on `ndarray` arrays.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::types::{orthonormality_defect, LoadingMatrix, ORTHONORMAL_TOL};

/// Relative symmetry tolerance for eigen inputs.
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Singular-value ratio below which a matrix counts as rank deficient.
pub const RANK_TOL: f64 = 1e-10;

pub(crate) fn to_nalgebra(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[[i, j]])
}

pub(crate) fn from_nalgebra(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

pub fn max_abs(a: ArrayView2<'_, f64>) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = m.to_owned();
    out += &m.t();
    out *= 0.5;
    out
}

fn check_symmetric(m: ArrayView2<'_, f64>) -> Result<()> {
    let (r, c) = m.dim();
    if r != c {
        return Err(Error::Dimension(format!("expected a square matrix, got {r}x{c}")));
    }
    let tolerance = SYMMETRY_TOL * max_abs(m);
    let mut asymmetry = 0.0f64;
    for i in 0..r {
        for j in (i + 1)..r {
            asymmetry = asymmetry.max((m[[i, j]] - m[[j, i]]).abs());
        }
    }
    if asymmetry > tolerance || asymmetry.is_nan() {
        return Err(Error::Symmetry {
            asymmetry,
            tolerance,
        });
    }
    Ok(())
}

/// Flips `v` so that its entry of largest magnitude is positive. Near-ties
/// resolve to the first such index.
pub(crate) fn fix_sign(v: &mut [f64]) {
    let top = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if top == 0.0 {
        return;
    }
    let lead = v
        .iter()
        .position(|x| x.abs() >= top * (1.0 - 1e-10))
        .unwrap_or(0);
    if v[lead] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Full eigendecomposition of a symmetric matrix, eigenvalues descending.
pub fn sym_eig(m: ArrayView2<'_, f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let d = m.nrows();
    sym_eig_top(m, d)
}

/// Eigenvalues of a symmetric matrix in descending order.
pub fn sym_eigenvalues(m: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    check_symmetric(m)?;
    let sym = symmetrize(m);
    let mut vals: Vec<f64> = to_nalgebra(sym.view())
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    Ok(Array1::from(vals))
}

/// The `k` largest eigenpairs of a symmetric matrix.
///
/// Eigenvalues come back in descending order and eigenvectors as the columns
/// of a `d × k` matrix, each sign-fixed so its largest-magnitude entry is
/// positive. The input is symmetrized before decomposition.
pub fn sym_eig_top(m: ArrayView2<'_, f64>, k: usize) -> Result<(Array1<f64>, Array2<f64>)> {
    check_symmetric(m)?;
    let d = m.nrows();
    if k == 0 || k > d {
        return Err(Error::Dimension(format!(
            "requested {k} eigenpairs of a {d}x{d} matrix"
        )));
    }
    let sym = symmetrize(m);
    let eig = to_nalgebra(sym.view()).symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut values = Array1::zeros(k);
    let mut vectors = Array2::zeros((d, k));
    for (out, &idx) in order.iter().take(k).enumerate() {
        values[out] = eig.eigenvalues[idx];
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        fix_sign(&mut v);
        for (i, x) in v.into_iter().enumerate() {
            vectors[[i, out]] = x;
        }
    }
    Ok((values, vectors))
}

/// `I_d − VVᵀ`, the projector onto the orthogonal complement of the column
/// space of `V`.
pub fn residual_projector(v: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let dev = orthonormality_defect(&v.to_owned());
    if !(dev < ORTHONORMAL_TOL) {
        return Err(Error::Orthonormality(dev));
    }
    let d = v.nrows();
    let mut p = Array2::eye(d);
    p -= &v.dot(&v.t());
    Ok(p)
}

/// Same as [`residual_projector`] on a validated loading matrix.
pub fn loading_residual_projector(v: &LoadingMatrix) -> Array2<f64> {
    let mut p = Array2::eye(v.dim());
    p -= &v.projector();
    p
}

/// Orthonormal basis of the column space of a full-column-rank matrix, from
/// its thin SVD. Fails when the smallest singular value is below
/// [`RANK_TOL`] times the largest.
pub fn orthonormal_basis(s: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let (d, k) = s.dim();
    if k == 0 {
        return Err(Error::Dimension("matrix has no columns".into()));
    }
    if k > d {
        return Err(Error::Rank(0.0));
    }
    let svd = to_nalgebra(s).svd(true, false);
    let sv = &svd.singular_values;
    let largest = sv.iter().fold(0.0f64, |m, x| m.max(*x));
    let smallest = sv.iter().fold(f64::INFINITY, |m, x| m.min(*x));
    if !(largest > 0.0) || !(smallest > RANK_TOL * largest) {
        let ratio = if largest > 0.0 { smallest / largest } else { 0.0 };
        return Err(Error::Rank(ratio));
    }
    let u = svd.u.expect("left singular vectors requested");
    Ok(from_nalgebra(&u))
}

/// Distance between the column spaces of `s1` (`d × k₁`) and `s2` (`d × k₂`):
///
/// ```text
/// D(S₁, S₂) = sqrt(1 − tr(O₁O₁ᵀO₂O₂ᵀ) / min(k₁, k₂))
/// ```
///
/// where `Oᵢ` is an orthonormal basis of the column space of `Sᵢ`. The result
/// lies in `[0, 1]`; it is 0 when one space contains the other and 1 when the
/// spaces are orthogonal.
pub fn space_distance(s1: ArrayView2<'_, f64>, s2: ArrayView2<'_, f64>) -> Result<f64> {
    if s1.nrows() != s2.nrows() {
        return Err(Error::Dimension(format!(
            "space_distance: ambient dimensions differ ({} vs {})",
            s1.nrows(),
            s2.nrows()
        )));
    }
    let o1 = orthonormal_basis(s1)?;
    let o2 = orthonormal_basis(s2)?;
    // with k₁ ≤ k₂, 1 − ‖O₁ᵀO₂‖²_F / k₁ = ‖(I − O₂O₂ᵀ)O₁‖²_F / k₁, which
    // avoids cancellation near 0
    let (small, large) = if o1.ncols() <= o2.ncols() { (o1, o2) } else { (o2, o1) };
    let k = small.ncols() as f64;
    let resid = &small - &large.dot(&large.t().dot(&small));
    let ss: f64 = resid.iter().map(|x| x * x).sum();
    Ok((ss / k).clamp(0.0, 1.0).sqrt())
}
