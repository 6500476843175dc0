//! Domain types shared by every stage of the pipeline.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::RatioDiagnostics;

/// Orthonormality tolerance on `max |VᵀV − I|` for loading matrices.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

/// Which side of `Xₜ` an operation works on.
///
/// `Column` treats the columns `x_{t,·i}` (length `p`) as the observed vectors and
/// produces `p × p` aggregates; `Row` does the same on the rows of `Xₜ` (the
/// columns of `Xₜᵀ`) and produces `q × q` aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Column,
    Row,
}

/// A length-`T` sequence of `p × q` observation matrices, stored as a
/// `T × p × q` array.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSeries {
    data: Array3<f64>,
    row_labels: Option<Vec<String>>,
    col_labels: Option<Vec<String>>,
}

impl MatrixSeries {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        Self::with_labels(data, None, None)
    }

    pub fn with_labels(
        data: Array3<f64>,
        row_labels: Option<Vec<String>>,
        col_labels: Option<Vec<String>>,
    ) -> Result<Self> {
        let (t, p, q) = data.dim();
        if t < 2 {
            return Err(Error::InvalidSeries(format!("need T >= 2, got {t}")));
        }
        if p == 0 || q == 0 {
            return Err(Error::InvalidSeries(format!("empty matrices ({p} x {q})")));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let (tt, rem) = (pos / (p * q), pos % (p * q));
            return Err(Error::InvalidSeries(format!(
                "non-finite value at t={}, row={}, col={}",
                tt + 1,
                rem / q + 1,
                rem % q + 1
            )));
        }
        if let Some(l) = &row_labels {
            if l.len() != p {
                return Err(Error::Dimension(format!("{} row labels for p={p}", l.len())));
            }
        }
        if let Some(l) = &col_labels {
            if l.len() != q {
                return Err(Error::Dimension(format!("{} column labels for q={q}", l.len())));
            }
        }
        Ok(MatrixSeries {
            data: data.as_standard_layout().into_owned(),
            row_labels,
            col_labels,
        })
    }

    /// Builds a series from per-time matrices that all share one shape.
    pub fn from_matrices(mats: &[Array2<f64>]) -> Result<Self> {
        let first = mats
            .first()
            .ok_or_else(|| Error::InvalidSeries("no observations".into()))?;
        let (p, q) = first.dim();
        let mut data = Array3::zeros((mats.len(), p, q));
        for (t, m) in mats.iter().enumerate() {
            if m.dim() != (p, q) {
                return Err(Error::Dimension(format!(
                    "observation {} has shape {:?}, expected ({p}, {q})",
                    t + 1,
                    m.dim()
                )));
            }
            data.index_axis_mut(Axis(0), t).assign(m);
        }
        Self::new(data)
    }

    pub fn len(&self) -> usize {
        self.data.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rows(&self) -> usize {
        self.data.dim().1
    }

    pub fn cols(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn at(&self, t: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(0), t)
    }

    pub fn row_labels(&self) -> Option<&[String]> {
        self.row_labels.as_deref()
    }

    pub fn col_labels(&self) -> Option<&[String]> {
        self.col_labels.as_deref()
    }

    /// Row labels, falling back to `r1..rp`.
    pub fn row_names(&self) -> Vec<String> {
        self.row_labels
            .clone()
            .unwrap_or_else(|| (1..=self.rows()).map(|i| format!("r{i}")).collect())
    }

    /// Column labels, falling back to `c1..cq`.
    pub fn col_names(&self) -> Vec<String> {
        self.col_labels
            .clone()
            .unwrap_or_else(|| (1..=self.cols()).map(|j| format!("c{j}")).collect())
    }

    /// The first `len` observations, labels kept.
    pub fn head(&self, len: usize) -> Result<Self> {
        let len = len.min(self.len());
        Self::with_labels(
            self.data.slice(ndarray::s![..len, .., ..]).to_owned(),
            self.row_labels.clone(),
            self.col_labels.clone(),
        )
    }

    /// Series of `Xₜᵀ`.
    pub fn transposed(&self) -> Self {
        MatrixSeries {
            data: self
                .data
                .view()
                .permuted_axes([0, 2, 1])
                .as_standard_layout()
                .into_owned(),
            row_labels: self.col_labels.clone(),
            col_labels: self.row_labels.clone(),
        }
    }

    /// Applies `f` to each `Xₜ`, keeping labels when the shape is unchanged.
    pub fn map_matrices<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(ArrayView2<'_, f64>) -> Array2<f64>,
    {
        let mats: Vec<Array2<f64>> = self.data.outer_iter().map(&mut f).collect();
        let mut out = Self::from_matrices(&mats)?;
        if out.rows() == self.rows() && out.cols() == self.cols() {
            out.row_labels = self.row_labels.clone();
            out.col_labels = self.col_labels.clone();
        }
        Ok(out)
    }

    pub(crate) fn from_parts_unchecked(
        data: Array3<f64>,
        row_labels: Option<Vec<String>>,
        col_labels: Option<Vec<String>>,
    ) -> Self {
        MatrixSeries {
            data,
            row_labels,
            col_labels,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadingKind {
    GlobalRow,
    GlobalCol,
    LocalRow,
    LocalCol,
}

impl LoadingKind {
    pub fn file_stem(self) -> &'static str {
        match self {
            LoadingKind::GlobalRow => "R",
            LoadingKind::GlobalCol => "C",
            LoadingKind::LocalRow => "Gamma",
            LoadingKind::LocalCol => "Lambda",
        }
    }
}

/// A `d × k` loading matrix with orthonormal columns.
///
/// `k = 0` is allowed and stands for an absent part (for example the weak
/// loadings of a strong-only baseline).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadingMatrix {
    values: Array2<f64>,
    kind: LoadingKind,
}

impl LoadingMatrix {
    pub fn new(values: Array2<f64>, kind: LoadingKind) -> Result<Self> {
        let (d, k) = values.dim();
        if k > d {
            return Err(Error::Dimension(format!(
                "loading matrix has {k} columns but only {d} rows"
            )));
        }
        let dev = orthonormality_defect(&values);
        if !(dev < ORTHONORMAL_TOL) {
            return Err(Error::Orthonormality(dev));
        }
        Ok(LoadingMatrix { values, kind })
    }

    pub fn empty(d: usize, kind: LoadingKind) -> Self {
        LoadingMatrix {
            values: Array2::zeros((d, 0)),
            kind,
        }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn kind(&self) -> LoadingKind {
        self.kind
    }

    /// Ambient dimension `d`.
    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_factors(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.n_factors() == 0
    }

    /// `VVᵀ`.
    pub fn projector(&self) -> Array2<f64> {
        self.values.dot(&self.values.t())
    }
}

/// `max |VᵀV − I|`.
pub fn orthonormality_defect(v: &Array2<f64>) -> f64 {
    let g = v.t().dot(v);
    let mut dev = 0.0f64;
    for ((i, j), x) in g.indexed_iter() {
        let target = if i == j { 1.0 } else { 0.0 };
        dev = dev.max((x - target).abs());
    }
    if g.iter().any(|x| x.is_nan()) {
        return f64::NAN;
    }
    dev
}

/// Estimated global (`R̂`, `Ĉ`) and cluster-specific (`Γ̂`, `Λ̂`) loadings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadingSet {
    pub row_global: LoadingMatrix,
    pub col_global: LoadingMatrix,
    pub row_local: LoadingMatrix,
    pub col_local: LoadingMatrix,
}

impl LoadingSet {
    pub fn new(
        row_global: LoadingMatrix,
        col_global: LoadingMatrix,
        row_local: LoadingMatrix,
        col_local: LoadingMatrix,
    ) -> Result<Self> {
        if row_global.dim() != row_local.dim() {
            return Err(Error::Dimension(format!(
                "row loadings disagree on p: {} vs {}",
                row_global.dim(),
                row_local.dim()
            )));
        }
        if col_global.dim() != col_local.dim() {
            return Err(Error::Dimension(format!(
                "column loadings disagree on q: {} vs {}",
                col_global.dim(),
                col_local.dim()
            )));
        }
        Ok(LoadingSet {
            row_global,
            col_global,
            row_local,
            col_local,
        })
    }

    pub fn rows(&self) -> usize {
        self.row_global.dim()
    }

    pub fn cols(&self) -> usize {
        self.col_global.dim()
    }

    pub fn check_series(&self, series: &MatrixSeries) -> Result<()> {
        if self.rows() != series.rows() || self.cols() != series.cols() {
            return Err(Error::Dimension(format!(
                "loadings are for {}x{} matrices, series has {}x{}",
                self.rows(),
                self.cols(),
                series.rows(),
                series.cols()
            )));
        }
        Ok(())
    }
}

/// Strong/weak factor counts per direction.
///
/// `k0`, `k` count row factors (global and cluster-specific), `r0`, `r` count
/// column factors. Diagnostics are present when the counts were estimated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorNumbers {
    pub k0: usize,
    pub k: usize,
    pub r0: usize,
    pub r: usize,
    pub row_diagnostics: Option<RatioDiagnostics>,
    pub col_diagnostics: Option<RatioDiagnostics>,
}

impl FactorNumbers {
    pub fn known(k0: usize, k: usize, r0: usize, r: usize) -> Self {
        FactorNumbers {
            k0,
            k,
            r0,
            r,
            row_diagnostics: None,
            col_diagnostics: None,
        }
    }

    pub fn counts(&self) -> (usize, usize, usize, usize) {
        (self.k0, self.k, self.r0, self.r)
    }

    /// Checks the counts fit a `p × q` series.
    pub fn validate(&self, p: usize, q: usize) -> Result<()> {
        if self.k0 + self.k > p {
            return Err(Error::Config(format!(
                "k0 + k = {} exceeds p = {p}",
                self.k0 + self.k
            )));
        }
        if self.r0 + self.r > q {
            return Err(Error::Config(format!(
                "r0 + r = {} exceeds q = {q}",
                self.r0 + self.r
            )));
        }
        Ok(())
    }
}

/// Output of the biclustering step. Memberships are 1-based cluster labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiclusterResult {
    pub m_hat: usize,
    pub n_hat: usize,
    pub row_membership: Vec<usize>,
    pub col_membership: Vec<usize>,
    pub row_similarity: Array2<f64>,
    pub col_similarity: Array2<f64>,
}
