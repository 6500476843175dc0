//! File formats: long-format tensor CSV (optionally gzipped), labelled matrix
//! CSV, membership CSV, and the flat `key = value` run configuration.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use log::warn;
use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::bicluster::KMeansConfig;
use crate::error::{Error, Result};
use crate::estimate::RatioDiagnostics;
use crate::simulate::parse_key_values;
use crate::types::MatrixSeries;

/// At most this many missing keys are listed in an ingest error.
pub const MAX_REPORTED_KEYS: usize = 20;

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?
        .read_to_end(&mut raw)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Ingest(format!("{}: bad gzip stream: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn writer_for(path: &Path) -> Result<Box<dyn Write>> {
    let file = BufWriter::new(File::create(path)?);
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(GzEncoder::new(file, Compression::default())))
    } else {
        Ok(Box::new(file))
    }
}

#[derive(Debug, Deserialize)]
struct TensorRow {
    t: usize,
    row: String,
    col: String,
    value: f64,
}

fn first_appearance(index: &mut HashMap<String, usize>, order: &mut Vec<String>, label: &str) -> usize {
    if let Some(&i) = index.get(label) {
        return i;
    }
    let i = order.len();
    index.insert(label.to_string(), i);
    order.push(label.to_string());
    i
}

/// Parses long-format `t,row,col,value` text into a series.
///
/// Time runs over `1..=max t`; rows and columns are ordered by first
/// appearance. Every `(t, row, col)` key must occur exactly once.
pub fn parse_tensor_csv(bytes: &[u8]) -> Result<MatrixSeries> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let mut row_index = HashMap::new();
    let mut col_index = HashMap::new();
    let mut rows = Vec::new();
    let mut cols = Vec::new();
    let mut cells: Vec<(usize, usize, usize, f64)> = Vec::new();
    for (line, rec) in reader.deserialize::<TensorRow>().enumerate() {
        let rec = rec.map_err(|e| Error::Ingest(format!("record {}: {e}", line + 1)))?;
        if rec.t == 0 {
            return Err(Error::Ingest(format!("record {}: t is 1-based, got 0", line + 1)));
        }
        if !rec.value.is_finite() {
            return Err(Error::Ingest(format!(
                "non-finite value at (t={}, row={}, col={})",
                rec.t, rec.row, rec.col
            )));
        }
        let i = first_appearance(&mut row_index, &mut rows, &rec.row);
        let j = first_appearance(&mut col_index, &mut cols, &rec.col);
        cells.push((rec.t, i, j, rec.value));
    }
    if cells.is_empty() {
        return Err(Error::Ingest("no data records".into()));
    }
    let t_len = cells.iter().map(|c| c.0).max().unwrap_or(0);
    let (p, q) = (rows.len(), cols.len());
    let mut data = Array3::zeros((t_len, p, q));
    let mut seen = Array3::from_elem((t_len, p, q), false);
    for &(t, i, j, v) in &cells {
        if seen[[t - 1, i, j]] {
            return Err(Error::Ingest(format!(
                "duplicate cell (t={t}, row={}, col={})",
                rows[i], cols[j]
            )));
        }
        seen[[t - 1, i, j]] = true;
        data[[t - 1, i, j]] = v;
    }
    let missing: Vec<String> = seen
        .indexed_iter()
        .filter(|(_, &s)| !s)
        .map(|((t, i, j), _)| format!("(t={}, row={}, col={})", t + 1, rows[i], cols[j]))
        .collect();
    if !missing.is_empty() {
        let shown = missing.iter().take(MAX_REPORTED_KEYS).cloned().collect::<Vec<_>>().join(", ");
        let more = missing.len().saturating_sub(MAX_REPORTED_KEYS);
        let tail = if more > 0 { format!(" and {more} more") } else { String::new() };
        return Err(Error::Ingest(format!(
            "incomplete {t_len}x{p}x{q} grid, {} missing cells: {shown}{tail}",
            missing.len()
        )));
    }
    MatrixSeries::with_labels(data, Some(rows), Some(cols)).map_err(|e| Error::Ingest(e.to_string()))
}

/// Reads a tensor CSV; gzip input is detected from its magic bytes.
pub fn load_tensor_csv(path: &Path) -> Result<MatrixSeries> {
    parse_tensor_csv(&read_maybe_gz(path)?)
}

/// Writes `t,row,col,value` rows with shortest round-trip float formatting.
/// A `.gz` extension produces gzip output.
pub fn save_tensor_csv(series: &MatrixSeries, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer_for(path)?);
    w.write_record(["t", "row", "col", "value"])?;
    let rows = series.row_names();
    let cols = series.col_names();
    for ((t, i, j), v) in series.data().indexed_iter() {
        w.write_record([(t + 1).to_string(), rows[i].clone(), cols[j].clone(), v.to_string()])?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(e.into_error()))?
        .flush()?;
    Ok(())
}

/// Writes a matrix with a header of column names and a leading name column.
pub fn write_matrix_csv(
    path: &Path,
    m: &Array2<f64>,
    row_names: Option<&[String]>,
    col_names: Option<&[String]>,
) -> Result<()> {
    let default = |prefix: &str, n: usize| (1..=n).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>();
    let rn = row_names.map(<[String]>::to_vec).unwrap_or_else(|| default("r", m.nrows()));
    let cn = col_names.map(<[String]>::to_vec).unwrap_or_else(|| default("c", m.ncols()));
    if rn.len() != m.nrows() || cn.len() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{} row and {} column names for a {}x{} matrix",
            rn.len(),
            cn.len(),
            m.nrows(),
            m.ncols()
        )));
    }
    let mut w = csv::Writer::from_writer(writer_for(path)?);
    let mut header = vec![String::new()];
    header.extend(cn);
    w.write_record(&header)?;
    for (name, row) in rn.iter().zip(m.axis_iter(Axis(0))) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(e.into_error()))?
        .flush()?;
    Ok(())
}

/// A matrix read back from [`write_matrix_csv`] output.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedMatrix {
    pub values: Array2<f64>,
    pub row_names: Vec<String>,
    pub col_names: Vec<String>,
}

pub fn read_matrix_csv(path: &Path) -> Result<NamedMatrix> {
    let bytes = read_maybe_gz(path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes.as_slice());
    let col_names: Vec<String> = reader.headers()?.iter().skip(1).map(str::to_string).collect();
    let mut row_names = Vec::new();
    let mut flat = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != col_names.len() + 1 {
            return Err(Error::Ingest(format!(
                "matrix row {} has {} fields, expected {}",
                line + 1,
                rec.len(),
                col_names.len() + 1
            )));
        }
        row_names.push(rec[0].to_string());
        for field in rec.iter().skip(1) {
            flat.push(field.trim().parse::<f64>().map_err(|_| {
                Error::Ingest(format!("matrix row {}: bad number `{field}`", line + 1))
            })?);
        }
    }
    let values = Array2::from_shape_vec((row_names.len(), col_names.len()), flat)
        .map_err(|e| Error::Ingest(e.to_string()))?;
    Ok(NamedMatrix {
        values,
        row_names,
        col_names,
    })
}

/// `name,cluster` rows.
pub fn write_membership_csv(path: &Path, names: &[String], labels: &[usize]) -> Result<()> {
    if names.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} names for {} labels",
            names.len(),
            labels.len()
        )));
    }
    let mut w = csv::Writer::from_writer(writer_for(path)?);
    w.write_record(["name", "cluster"])?;
    for (n, l) in names.iter().zip(labels) {
        w.write_record([n.as_str(), &l.to_string()])?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(e.into_error()))?
        .flush()?;
    Ok(())
}

pub fn read_membership_csv(path: &Path) -> Result<(Vec<String>, Vec<usize>)> {
    let bytes = read_maybe_gz(path)?;
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let mut names = Vec::new();
    let mut labels = Vec::new();
    for rec in reader.deserialize::<(String, usize)>() {
        let (n, l) = rec?;
        names.push(n);
        labels.push(l);
    }
    Ok((names, labels))
}

/// Single-column `name,value` CSV (eigenvalues, ratios).
pub fn write_vector_csv(path: &Path, header: [&str; 2], names: &[String], values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer_for(path)?);
    w.write_record(header)?;
    for (n, v) in names.iter().zip(values) {
        w.write_record([n.as_str(), &v.to_string()])?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(e.into_error()))?
        .flush()?;
    Ok(())
}

/// `j,eigenvalue,ratio,local_max,chosen` rows, one per eigenvalue. `ratio`
/// is `λⱼ/λⱼ₊₁` and is empty past the end of the ratio sequence.
pub fn write_ratio_diagnostics_csv(path: &Path, diag: &RatioDiagnostics) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer_for(path)?);
    w.write_record(["j", "eigenvalue", "ratio", "local_max", "chosen"])?;
    let chosen = diag.chosen.map(|(a, b)| [a, b]).unwrap_or_default();
    for (i, ev) in diag.eigenvalues.iter().enumerate() {
        let j = i + 1;
        let flag = |b: bool| if b { "1" } else { "0" };
        w.write_record([
            j.to_string(),
            ev.to_string(),
            diag.ratios.get(i).map(f64::to_string).unwrap_or_default(),
            flag(diag.local_max_indices.contains(&j)).to_string(),
            flag(chosen.contains(&j)).to_string(),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(e.into_error()))?
        .flush()?;
    Ok(())
}

/// Per-cell temporal centering and/or scaling.
///
/// Scaling divides by the sample standard deviation (divisor `T − 1`); cells
/// whose deviation is below `1e−12` are left unscaled.
pub fn preprocess(series: &MatrixSeries, demean: bool, standardize: bool) -> Result<MatrixSeries> {
    if !demean && !standardize {
        return Ok(series.clone());
    }
    let t_len = series.len();
    if standardize && t_len < 3 {
        return Err(Error::InsufficientData(format!(
            "standardizing needs T >= 3 (got {t_len})"
        )));
    }
    let mut data = series.data().clone();
    let mean = data.mean_axis(Axis(0)).expect("T >= 2");
    let mut flat_cells = 0usize;
    if standardize {
        let sd = data.std_axis(Axis(0), 1.0);
        let sd = sd.mapv(|s| {
            if s < 1e-12 {
                flat_cells += 1;
                1.0
            } else {
                s
            }
        });
        for mut x in data.axis_iter_mut(Axis(0)) {
            if demean {
                x -= &mean;
            }
            x /= &sd;
        }
    } else {
        for mut x in data.axis_iter_mut(Axis(0)) {
            x -= &mean;
        }
    }
    if flat_cells > 0 {
        warn!("{flat_cells} cells have (near) zero variance and were not scaled");
    }
    MatrixSeries::with_labels(
        data,
        series.row_labels().map(<[String]>::to_vec),
        series.col_labels().map(<[String]>::to_vec),
    )
}

/// Settings shared by the analysis commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub l0: usize,
    pub j0_row: Option<usize>,
    pub j0_col: Option<usize>,
    pub demean: bool,
    pub standardize: bool,
    pub kmeans: KMeansConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            l0: 5,
            j0_row: None,
            j0_col: None,
            demean: false,
            standardize: false,
            kmeans: KMeansConfig::default(),
            seed: 0,
            out_dir: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn val<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
        }
        match key {
            "l0" => self.l0 = val(key, value)?,
            "J0_row" | "j0_row" => self.j0_row = Some(val(key, value)?),
            "J0_col" | "j0_col" => self.j0_col = Some(val(key, value)?),
            "demean" => self.demean = val(key, value)?,
            "standardize" => self.standardize = val(key, value)?,
            "kmeans_restarts" => self.kmeans.restarts = val(key, value)?,
            "kmeans_max_iter" => self.kmeans.max_iter = val(key, value)?,
            "kmeans_tol" => self.kmeans.tol = val(key, value)?,
            "seed" => {
                self.seed = val(key, value)?;
                self.kmeans.seed = self.seed;
            }
            "out_dir" | "out" => self.out_dir = PathBuf::from(value.trim()),
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.l0 == 0 {
            return Err(Error::Config("l0 must be at least 1".into()));
        }
        if self.kmeans.restarts == 0 {
            return Err(Error::Config("kmeans_restarts must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (k, v) in parse_key_values(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_config_file(path: &Path) -> Result<Self> {
        Self::from_config_str(&std::fs::read_to_string(path)?)
    }
}
