//! Synthetic matrix series with known global and cluster-specific structure.
//!
//! `Xₜ = R Gₜ Cᵀ + Γ Fₜ Λᵀ + E⁰ₜ` where
//!
//! - `R`, `C` and the diagonal blocks `Γᵢ`, `Λⱼ` have i.i.d. `U(−1, 1)` entries;
//! - each component of `vec(Gₜ)` is a stationary AR(1), each component of
//!   `vec(Fₜ)` an MA(1), both Gaussian and rescaled to a standard deviation
//!   drawn from `factor_sd_range`;
//! - each noise cell is an independent MA(1) with `N(0, σ²)` innovations;
//! - AR/MA coefficients are drawn uniformly from the union of
//!   `coeff_intervals`.
//!
//! All draws come from one ChaCha stream seeded by `ScenarioSpec::seed`, so
//! [`generate`] is a pure function of its spec.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array2, Array3, Axis};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::MatrixSeries;

/// Full description of one synthetic data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    /// Series length `T`.
    pub t_len: usize,
    /// Global row factor count `k₀`.
    pub k0: usize,
    /// Global column factor count `r₀`.
    pub r0: usize,
    /// Cluster-specific row factor counts `k₁..k_m`.
    pub row_factors: Vec<usize>,
    /// Cluster-specific column factor counts `r₁..r_n`.
    pub col_factors: Vec<usize>,
    /// Row block sizes `p₁..p_m`.
    pub row_blocks: Vec<usize>,
    /// Column block sizes `q₁..q_n`.
    pub col_blocks: Vec<usize>,
    /// Disjoint intervals whose union supplies the AR/MA coefficients.
    pub coeff_intervals: Vec<(f64, f64)>,
    pub factor_sd_range: (f64, f64),
    pub noise_innovation_variance: f64,
    pub seed: u64,
    /// Multiplier on the cluster-specific factors; 0 removes the weak part.
    #[serde(default = "one")]
    pub weak_scale: f64,
    /// Replace `R`, `C` by their projections off the column spaces of `Γ`, `Λ`.
    #[serde(default)]
    pub orthogonal_strong: bool,
}

fn one() -> f64 {
    1.0
}

pub const DEFAULT_COEFF_INTERVALS: [(f64, f64); 2] = [(-0.95, -0.4), (0.4, 0.95)];

impl ScenarioSpec {
    /// Equal-size blocks with `k₀ = kᵢ` and `r₀ = rⱼ`, default draws.
    #[allow(clippy::too_many_arguments)]
    pub fn equal_blocks(
        t_len: usize,
        m: usize,
        n: usize,
        k0: usize,
        r0: usize,
        p1: usize,
        q1: usize,
    ) -> Self {
        ScenarioSpec {
            t_len,
            k0,
            r0,
            row_factors: vec![k0; m],
            col_factors: vec![r0; n],
            row_blocks: vec![p1; m],
            col_blocks: vec![q1; n],
            coeff_intervals: DEFAULT_COEFF_INTERVALS.to_vec(),
            factor_sd_range: (1.0, 2.0),
            noise_innovation_variance: 0.25,
            seed: 0,
            weak_scale: 1.0,
            orthogonal_strong: false,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn p(&self) -> usize {
        self.row_blocks.iter().sum()
    }

    pub fn q(&self) -> usize {
        self.col_blocks.iter().sum()
    }

    pub fn m(&self) -> usize {
        self.row_blocks.len()
    }

    pub fn n(&self) -> usize {
        self.col_blocks.len()
    }

    /// Total cluster-specific row factors `k`.
    pub fn k(&self) -> usize {
        self.row_factors.iter().sum()
    }

    /// Total cluster-specific column factors `r`.
    pub fn r(&self) -> usize {
        self.col_factors.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.t_len < 2 {
            return bad(format!("T = {} must be at least 2", self.t_len));
        }
        if self.row_blocks.is_empty() || self.col_blocks.is_empty() {
            return bad("need at least one row and one column cluster".into());
        }
        if self.row_factors.len() != self.row_blocks.len() {
            return bad(format!(
                "{} row factor counts for {} row blocks",
                self.row_factors.len(),
                self.row_blocks.len()
            ));
        }
        if self.col_factors.len() != self.col_blocks.len() {
            return bad(format!(
                "{} column factor counts for {} column blocks",
                self.col_factors.len(),
                self.col_blocks.len()
            ));
        }
        if self.k0 == 0 || self.r0 == 0 {
            return bad("k0 and r0 must be at least 1".into());
        }
        for (i, (&ki, &pi)) in self.row_factors.iter().zip(&self.row_blocks).enumerate() {
            if ki == 0 || pi < ki {
                return bad(format!("row block {}: size {pi} with {ki} factors", i + 1));
            }
        }
        for (j, (&rj, &qj)) in self.col_factors.iter().zip(&self.col_blocks).enumerate() {
            if rj == 0 || qj < rj {
                return bad(format!("column block {}: size {qj} with {rj} factors", j + 1));
            }
        }
        if self.k0 + self.k() > self.p() || self.r0 + self.r() > self.q() {
            return bad(format!(
                "k0 + k = {} and r0 + r = {} must not exceed p = {}, q = {}",
                self.k0 + self.k(),
                self.r0 + self.r(),
                self.p(),
                self.q()
            ));
        }
        if self.coeff_intervals.is_empty() {
            return bad("no coefficient intervals".into());
        }
        let mut sorted = self.coeff_intervals.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        for &(lo, hi) in &sorted {
            if !(lo < hi) || lo <= -1.0 || hi >= 1.0 {
                return bad(format!(
                    "coefficient interval ({lo}, {hi}) must be nonempty and inside (-1, 1)"
                ));
            }
        }
        if sorted.windows(2).any(|w| w[1].0 < w[0].1) {
            return bad("coefficient intervals overlap".into());
        }
        let (lo, hi) = self.factor_sd_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("factor sd range ({lo}, {hi}) must be positive"));
        }
        if !(self.noise_innovation_variance >= 0.0) || !self.noise_innovation_variance.is_finite() {
            return bad("noise innovation variance must be finite and nonnegative".into());
        }
        if !self.weak_scale.is_finite() {
            return bad("weak_scale must be finite".into());
        }
        Ok(())
    }

    /// Flat `key = value` text accepted by [`ScenarioSpec::from_config_str`].
    pub fn to_config_string(&self) -> String {
        let list = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut out = String::new();
        let _ = writeln!(out, "T = {}", self.t_len);
        let _ = writeln!(out, "k0 = {}", self.k0);
        let _ = writeln!(out, "r0 = {}", self.r0);
        let _ = writeln!(out, "row_factors = {}", list(&self.row_factors));
        let _ = writeln!(out, "col_factors = {}", list(&self.col_factors));
        let _ = writeln!(out, "row_blocks = {}", list(&self.row_blocks));
        let _ = writeln!(out, "col_blocks = {}", list(&self.col_blocks));
        let intervals = self
            .coeff_intervals
            .iter()
            .map(|(a, b)| format!("{a}:{b}"))
            .collect::<Vec<_>>()
            .join(",");
        let _ = writeln!(out, "coeff_intervals = {intervals}");
        let _ = writeln!(
            out,
            "factor_sd_range = {}:{}",
            self.factor_sd_range.0, self.factor_sd_range.1
        );
        let _ = writeln!(out, "noise_innovation_variance = {}", self.noise_innovation_variance);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "weak_scale = {}", self.weak_scale);
        let _ = writeln!(out, "orthogonal_strong = {}", self.orthogonal_strong);
        out
    }

    /// Parses flat `key = value` text.
    ///
    /// A `preset = I|II` line (with `p1`, `q1`) seeds the spec from a preset;
    /// any other key then overrides that field. Without a preset every
    /// structural key must be present.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let kv = parse_key_values(text)?;
        let mut spec = match kv.get("preset") {
            Some(name) => {
                let p1 = parse_num::<usize>(&kv, "p1")?.ok_or_else(|| {
                    Error::Config("preset needs p1".into())
                })?;
                let q1 = parse_num::<usize>(&kv, "q1")?.ok_or_else(|| {
                    Error::Config("preset needs q1".into())
                })?;
                make_scenario_preset(name, p1, q1)?
            }
            None => {
                let need = |k: &str| {
                    if kv.contains_key(k) {
                        Ok(())
                    } else {
                        Err(Error::Config(format!("missing key `{k}`")))
                    }
                };
                for k in ["T", "k0", "r0", "row_factors", "col_factors", "row_blocks", "col_blocks"] {
                    need(k)?;
                }
                ScenarioSpec::equal_blocks(2, 1, 1, 1, 1, 1, 1)
            }
        };
        for (key, value) in &kv {
            match key.as_str() {
                "preset" | "p1" | "q1" => {}
                "T" => spec.t_len = parse_value(key, value)?,
                "k0" => spec.k0 = parse_value(key, value)?,
                "r0" => spec.r0 = parse_value(key, value)?,
                "row_factors" => spec.row_factors = parse_list(key, value)?,
                "col_factors" => spec.col_factors = parse_list(key, value)?,
                "row_blocks" => spec.row_blocks = parse_list(key, value)?,
                "col_blocks" => spec.col_blocks = parse_list(key, value)?,
                "coeff_intervals" => {
                    spec.coeff_intervals = value
                        .split(',')
                        .map(|iv| parse_interval(key, iv))
                        .collect::<Result<_>>()?
                }
                "factor_sd_range" => spec.factor_sd_range = parse_interval(key, value)?,
                "noise_innovation_variance" => {
                    spec.noise_innovation_variance = parse_value(key, value)?
                }
                "seed" => spec.seed = parse_value(key, value)?,
                "weak_scale" => spec.weak_scale = parse_value(key, value)?,
                "orthogonal_strong" => spec.orthogonal_strong = parse_value(key, value)?,
                other => return Err(Error::Config(format!("unknown scenario key `{other}`"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_config_file(path: &Path) -> Result<Self> {
        Self::from_config_str(&std::fs::read_to_string(path)?)
    }
}

/// `key = value` lines; `#` starts a comment. Later keys win.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_num<T: std::str::FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    kv.get(key).map(|v| parse_value(key, v)).transpose()
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|x| parse_value(key, x)).collect()
}

fn parse_interval(key: &str, value: &str) -> Result<(f64, f64)> {
    let (a, b) = value
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("`{key}` expects lo:hi, got `{value}`")))?;
    Ok((parse_value(key, a)?, parse_value(key, b)?))
}

/// Scenario I (`T = 400`, `m = n = 3`) or II (`T = 500`, `m = 5`, `n = 4`)
/// with `k₀ = kᵢ = 3`, `r₀ = rⱼ = 2` and equal block sizes `p₁`, `q₁`.
pub fn make_scenario_preset(name: &str, p1: usize, q1: usize) -> Result<ScenarioSpec> {
    let (t_len, m, n) = match name.trim().to_ascii_uppercase().as_str() {
        "I" | "1" => (400, 3, 3),
        "II" | "2" => (500, 5, 4),
        other => return Err(Error::Config(format!("unknown scenario preset `{other}`"))),
    };
    let (k0, r0) = (3, 2);
    if p1 < k0 + 1 || q1 < r0 + 1 {
        return Err(Error::Config(format!(
            "block sizes p1 = {p1}, q1 = {q1} must be at least {} and {}",
            k0 + 1,
            r0 + 1
        )));
    }
    let spec = ScenarioSpec::equal_blocks(t_len, m, n, k0, r0, p1, q1);
    spec.validate()?;
    Ok(spec)
}

/// Coefficients and standard deviations drawn for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawnParameters {
    /// AR(1) coefficient and target sd for each component of `vec(Gₜ)`.
    pub global_coeffs: Vec<f64>,
    pub global_sds: Vec<f64>,
    /// MA(1) coefficient and target sd for each component of `vec(Fₜ)`.
    pub local_coeffs: Vec<f64>,
    pub local_sds: Vec<f64>,
    /// MA(1) coefficient of each noise cell, row-major over `(i, j)`.
    pub noise_coeffs: Vec<f64>,
}

/// Everything that went into a generated series.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub r: Array2<f64>,
    pub c: Array2<f64>,
    pub gamma: Array2<f64>,
    pub lambda: Array2<f64>,
    /// `T × k₀ × r₀`.
    pub g: Array3<f64>,
    /// `T × k × r`.
    pub f: Array3<f64>,
    /// `T × p × q`.
    pub noise: Array3<f64>,
    /// 1-based row cluster of each row.
    pub row_truth: Vec<usize>,
    /// 1-based column cluster of each column.
    pub col_truth: Vec<usize>,
    pub params: DrawnParameters,
}

impl GroundTruth {
    /// `R Gₜ Cᵀ + Γ Fₜ Λᵀ + E⁰ₜ` rebuilt from the stored components.
    pub fn reconstruct(&self) -> Array3<f64> {
        let t_len = self.g.dim().0;
        let (p, q) = (self.r.nrows(), self.c.nrows());
        let mut out = Array3::zeros((t_len, p, q));
        for t in 0..t_len {
            let strong = self.r.dot(&self.g.index_axis(Axis(0), t)).dot(&self.c.t());
            let weak = self
                .gamma
                .dot(&self.f.index_axis(Axis(0), t))
                .dot(&self.lambda.t());
            let mut x = out.index_axis_mut(Axis(0), t);
            x.assign(&strong);
            x += &weak;
            x += &self.noise.index_axis(Axis(0), t);
        }
        out
    }
}

/// Stationary Gaussian AR(1) path with marginal standard deviation `sd`.
///
/// The first value is drawn from the stationary law and innovations have
/// variance `sd²(1 − coeff²)`.
pub fn ar1_path<R: Rng + ?Sized>(coeff: f64, sd: f64, len: usize, rng: &mut R) -> Result<Vec<f64>> {
    if !(coeff.abs() < 1.0) {
        return Err(Error::Stability(coeff));
    }
    if !(sd > 0.0) {
        return Err(Error::Config(format!("standard deviation {sd} must be positive")));
    }
    let innov_sd = sd * (1.0 - coeff * coeff).sqrt();
    let mut out = Vec::with_capacity(len);
    let mut x = sd * rng.sample::<f64, _>(StandardNormal);
    for t in 0..len {
        if t > 0 {
            x = coeff * x + innov_sd * rng.sample::<f64, _>(StandardNormal);
        }
        out.push(x);
    }
    Ok(out)
}

/// Gaussian MA(1) path `sd · (εₜ + θεₜ₋₁) / sqrt(1 + θ²)`, so the marginal
/// standard deviation is `sd`.
pub fn ma1_path<R: Rng + ?Sized>(coeff: f64, sd: f64, len: usize, rng: &mut R) -> Result<Vec<f64>> {
    if !(sd > 0.0) {
        return Err(Error::Config(format!("standard deviation {sd} must be positive")));
    }
    let scale = sd / (1.0 + coeff * coeff).sqrt();
    Ok(raw_ma1(coeff, scale, len, rng))
}

/// `scale · (εₜ + θεₜ₋₁)` with standard normal `ε`.
fn raw_ma1<R: Rng + ?Sized>(coeff: f64, scale: f64, len: usize, rng: &mut R) -> Vec<f64> {
    let mut prev: f64 = rng.sample(StandardNormal);
    (0..len)
        .map(|_| {
            let cur: f64 = rng.sample(StandardNormal);
            let x = scale * (cur + coeff * prev);
            prev = cur;
            x
        })
        .collect()
}

/// Uniform draw from a union of disjoint intervals.
fn draw_coeff<R: Rng + ?Sized>(intervals: &[(f64, f64)], rng: &mut R) -> f64 {
    let total: f64 = intervals.iter().map(|(a, b)| b - a).sum();
    let mut u = rng.random::<f64>() * total;
    for &(a, b) in intervals {
        if u < b - a {
            return a + u;
        }
        u -= b - a;
    }
    let (a, b) = intervals[intervals.len() - 1];
    a + (b - a) * 0.5
}

fn uniform_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let dist = Uniform::new(-1.0, 1.0).expect("valid range");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

fn block_diagonal<R: Rng + ?Sized>(blocks: &[usize], factors: &[usize], rng: &mut R) -> Array2<f64> {
    let d: usize = blocks.iter().sum();
    let k: usize = factors.iter().sum();
    let mut out = Array2::zeros((d, k));
    let (mut row, mut col) = (0, 0);
    for (&size, &nf) in blocks.iter().zip(factors) {
        out.slice_mut(s![row..row + size, col..col + nf])
            .assign(&uniform_matrix(size, nf, rng));
        row += size;
        col += nf;
    }
    out
}

fn membership(blocks: &[usize]) -> Vec<usize> {
    blocks
        .iter()
        .enumerate()
        .flat_map(|(i, &size)| std::iter::repeat_n(i + 1, size))
        .collect()
}

/// `A − P_B A`, with `P_B` the projector on the column space of `B`.
fn project_off(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    let basis = crate::linalg::orthonormal_basis(b.view())?;
    Ok(a - &basis.dot(&basis.t().dot(a)))
}

/// Draws one instance of the scenario.
pub fn generate(spec: &ScenarioSpec) -> Result<(MatrixSeries, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (t_len, p, q) = (spec.t_len, spec.p(), spec.q());
    let (k0, r0, k, r) = (spec.k0, spec.r0, spec.k(), spec.r());

    let mut r_mat = uniform_matrix(p, k0, &mut rng);
    let mut c_mat = uniform_matrix(q, r0, &mut rng);
    let gamma = block_diagonal(&spec.row_blocks, &spec.row_factors, &mut rng);
    let lambda = block_diagonal(&spec.col_blocks, &spec.col_factors, &mut rng);
    if spec.orthogonal_strong {
        r_mat = project_off(&r_mat, &gamma)?;
        c_mat = project_off(&c_mat, &lambda)?;
    }

    let sd_dist = Uniform::new_inclusive(spec.factor_sd_range.0, spec.factor_sd_range.1)
        .map_err(|e| Error::Config(e.to_string()))?;

    // vec() stacks columns: component i + j·rows is entry (i, j)
    let mut g = Array3::zeros((t_len, k0, r0));
    let mut global_coeffs = Vec::with_capacity(k0 * r0);
    let mut global_sds = Vec::with_capacity(k0 * r0);
    for j in 0..r0 {
        for i in 0..k0 {
            let coeff = draw_coeff(&spec.coeff_intervals, &mut rng);
            let sd = sd_dist.sample(&mut rng);
            let path = ar1_path(coeff, sd, t_len, &mut rng)?;
            g.slice_mut(s![.., i, j]).assign(&ndarray::Array1::from(path));
            global_coeffs.push(coeff);
            global_sds.push(sd);
        }
    }

    let mut f = Array3::zeros((t_len, k, r));
    let mut local_coeffs = Vec::with_capacity(k * r);
    let mut local_sds = Vec::with_capacity(k * r);
    for j in 0..r {
        for i in 0..k {
            let coeff = draw_coeff(&spec.coeff_intervals, &mut rng);
            let sd = sd_dist.sample(&mut rng);
            let path = ma1_path(coeff, sd, t_len, &mut rng)?;
            f.slice_mut(s![.., i, j]).assign(&ndarray::Array1::from(path));
            local_coeffs.push(coeff);
            local_sds.push(sd);
        }
    }
    if spec.weak_scale != 1.0 {
        f *= spec.weak_scale;
    }

    let mut noise = Array3::zeros((t_len, p, q));
    let mut noise_coeffs = Vec::with_capacity(p * q);
    let innov_sd = spec.noise_innovation_variance.sqrt();
    for i in 0..p {
        for j in 0..q {
            let coeff = draw_coeff(&spec.coeff_intervals, &mut rng);
            noise_coeffs.push(coeff);
            if innov_sd > 0.0 {
                let path = raw_ma1(coeff, innov_sd, t_len, &mut rng);
                noise
                    .slice_mut(s![.., i, j])
                    .assign(&ndarray::Array1::from(path));
            }
        }
    }

    let truth = GroundTruth {
        r: r_mat,
        c: c_mat,
        gamma,
        lambda,
        g,
        f,
        noise,
        row_truth: membership(&spec.row_blocks),
        col_truth: membership(&spec.col_blocks),
        params: DrawnParameters {
            global_coeffs,
            global_sds,
            local_coeffs,
            local_sds,
            noise_coeffs,
        },
    };
    let series = MatrixSeries::new(truth.reconstruct())?;
    Ok((series, truth))
}

/// Independent seed for replication `rep` of a run seeded with `base`, taken
/// from ChaCha stream `rep + 1` so replications never share draws.
pub fn replication_seed(base: u64, rep: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(rep.wrapping_add(1));
    rng.next_u64()
}
