//! Loop-level reference implementations. Nothing here calls into the library's
//! linear algebra.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use mtsb_core::spectral::{
    aggregate_lags, aggregate_m0, aggregate_m0_pair, aggregate_m_projected, aggregate_mstar0,
    aggregate_mstar_projected, aggregate_tensor, lag_cov_blocks, lag_cross_cov, project,
    residual_series, Route,
};
use mtsb_core::{LoadingKind, LoadingMatrix, MatrixSeries, Orientation};

pub const AGGREGATE_NAMES: [&str; 8] = [
    "M0_1", "M0_2", "M1", "M2", "Mstar0_1", "Mstar0_2", "Mstar1", "Mstar2",
];

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, a: usize, b: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((a, b), || rng.sample(StandardNormal))
}

pub fn gaussian_tensor(rng: &mut ChaCha8Rng, t: usize, a: usize, b: usize) -> Array3<f64> {
    Array3::from_shape_simple_fn((t, a, b), || rng.sample(StandardNormal))
}

/// Modified Gram-Schmidt on the columns of `a`; panics on rank deficiency.
pub fn gram_schmidt(a: &Array2<f64>) -> Array2<f64> {
    let (d, k) = a.dim();
    let mut q = a.clone();
    for j in 0..k {
        for i in 0..j {
            let mut dot = 0.0;
            for r in 0..d {
                dot += q[[r, i]] * q[[r, j]];
            }
            for r in 0..d {
                q[[r, j]] -= dot * q[[r, i]];
            }
        }
        let mut norm = 0.0;
        for r in 0..d {
            norm += q[[r, j]] * q[[r, j]];
        }
        let norm = norm.sqrt();
        assert!(norm > 1e-8, "rank-deficient input to gram_schmidt");
        for r in 0..d {
            q[[r, j]] /= norm;
        }
    }
    q
}

pub fn random_orthonormal(rng: &mut ChaCha8Rng, d: usize, k: usize) -> Array2<f64> {
    gram_schmidt(&gaussian_matrix(rng, d, k))
}

pub fn matmul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (n, m) = a.dim();
    assert_eq!(m, b.nrows());
    let mut out = Array2::zeros((n, b.ncols()));
    for i in 0..n {
        for j in 0..b.ncols() {
            let mut acc = 0.0;
            for l in 0..m {
                acc += a[[i, l]] * b[[l, j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

pub fn transpose(a: &Array2<f64>) -> Array2<f64> {
    let (n, m) = a.dim();
    Array2::from_shape_fn((m, n), |(i, j)| a[[j, i]])
}

/// `Σ̂ᵢⱼ(l) = (T − l)⁻¹ Σₜ x_{t,·i} x_{t+l,·j}ᵀ` over the columns of each slice.
pub fn naive_lag_cov(x: &Array3<f64>, i: usize, j: usize, lag: usize) -> Array2<f64> {
    let (t, a, _) = x.dim();
    let n = t - lag;
    let mut s = Array2::zeros((a, a));
    for u in 0..a {
        for v in 0..a {
            let mut acc = 0.0;
            for tt in 0..n {
                acc += x[[tt, u, i]] * x[[tt + lag, v, j]];
            }
            s[[u, v]] = acc / n as f64;
        }
    }
    s
}

/// `Σ_{l=lo}^{hi} Σᵢⱼ Σ̂ᵢⱼ(l) Σ̂ᵢⱼ(l)ᵀ`.
pub fn naive_aggregate_range(x: &Array3<f64>, lo: usize, hi: usize) -> Array2<f64> {
    let (_, a, b) = x.dim();
    let mut m = Array2::zeros((a, a));
    for l in lo..=hi {
        for i in 0..b {
            for j in 0..b {
                let s = naive_lag_cov(x, i, j, l);
                for u in 0..a {
                    for v in 0..a {
                        let mut acc = 0.0;
                        for w in 0..a {
                            acc += s[[u, w]] * s[[v, w]];
                        }
                        m[[u, v]] += acc;
                    }
                }
            }
        }
    }
    m
}

pub fn naive_aggregate(x: &Array3<f64>, l0: usize) -> Array2<f64> {
    naive_aggregate_range(x, 1, l0)
}

/// `Xₜᵀ` for every `t`.
pub fn naive_transpose(x: &Array3<f64>) -> Array3<f64> {
    let (t, a, b) = x.dim();
    Array3::from_shape_fn((t, b, a), |(tt, i, j)| x[[tt, j, i]])
}

/// `Xₜ V` for every `t`.
pub fn naive_right_multiply(x: &Array3<f64>, v: &Array2<f64>) -> Array3<f64> {
    let (t, a, b) = x.dim();
    assert_eq!(b, v.nrows());
    let k = v.ncols();
    let mut out = Array3::zeros((t, a, k));
    for tt in 0..t {
        for i in 0..a {
            for c in 0..k {
                let mut acc = 0.0;
                for j in 0..b {
                    acc += x[[tt, i, j]] * v[[j, c]];
                }
                out[[tt, i, c]] = acc;
            }
        }
    }
    out
}

/// `I − VVᵀ`.
pub fn naive_complement(v: &Array2<f64>) -> Array2<f64> {
    let d = v.nrows();
    let mut p = Array2::eye(d);
    for i in 0..d {
        for j in 0..d {
            for c in 0..v.ncols() {
                p[[i, j]] -= v[[i, c]] * v[[j, c]];
            }
        }
    }
    p
}

/// `(I − RRᵀ) Xₜ (I − CCᵀ)` for every `t`.
pub fn naive_residual(x: &Array3<f64>, r: &Array2<f64>, c: &Array2<f64>) -> Array3<f64> {
    let pr = naive_complement(r);
    let pc = naive_complement(c);
    let (t, p, q) = x.dim();
    let mut out = Array3::zeros((t, p, q));
    for tt in 0..t {
        let xt = Array2::from_shape_fn((p, q), |(i, j)| x[[tt, i, j]]);
        let y = matmul(&matmul(&pr, &xt), &pc);
        for i in 0..p {
            for j in 0..q {
                out[[tt, i, j]] = y[[i, j]];
            }
        }
    }
    out
}

pub fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `‖a − b‖_F / ‖b‖_F`, or `‖a‖_F` when `b` is zero.
pub fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim(), "shape mismatch");
    let diff = frobenius(&(a - b));
    let nb = frobenius(b);
    if nb > 0.0 {
        diff / nb
    } else {
        frobenius(a)
    }
}

/// A random series with every projection the aggregates need.
#[derive(Debug, Clone)]
pub struct AggregateInstance {
    pub x: Array3<f64>,
    pub l0: usize,
    /// `Ĉ⁰` (`q × r₀`) for `M̂₁`.
    pub c_init: Array2<f64>,
    /// `R̂⁰` (`p × k₀`) for `M̂₂`.
    pub r_init: Array2<f64>,
    /// Global loadings removed to form the residual series.
    pub r_hat: Array2<f64>,
    pub c_hat: Array2<f64>,
    /// `Λ̂⁰` (`q × r`) for `M̂*₁`.
    pub lambda_init: Array2<f64>,
    /// `Γ̂⁰` (`p × k`) for `M̂*₂`.
    pub gamma_init: Array2<f64>,
}

impl AggregateInstance {
    /// `p, q ≤ 8`, `T ≤ 30`, `l₀ ≤ 3`.
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let p = rng.random_range(1..=8);
        let q = rng.random_range(1..=8);
        let l0 = rng.random_range(1..=3);
        let t = rng.random_range(l0 + 2..=30);
        let scale = 10f64.powf(rng.random_range(-1.0..1.0));
        let x = gaussian_tensor(rng, t, p, q) * scale;
        let dims = [
            rng.random_range(1..=q),
            rng.random_range(1..=p),
            rng.random_range(0..p),
            rng.random_range(0..q),
            rng.random_range(1..=q),
            rng.random_range(1..=p),
        ];
        let c_init = random_orthonormal(rng, q, dims[0]);
        let r_init = random_orthonormal(rng, p, dims[1]);
        let r_hat = random_orthonormal(rng, p, dims[2]);
        let c_hat = random_orthonormal(rng, q, dims[3]);
        let lambda_init = random_orthonormal(rng, q, dims[4]);
        let gamma_init = random_orthonormal(rng, p, dims[5]);
        AggregateInstance {
            x,
            l0,
            c_init,
            r_init,
            r_hat,
            c_hat,
            lambda_init,
            gamma_init,
        }
    }

    pub fn series(&self) -> MatrixSeries {
        MatrixSeries::new(self.x.clone()).expect("valid series")
    }

    pub fn naive(&self) -> [Array2<f64>; 8] {
        let l0 = self.l0;
        let xt = naive_transpose(&self.x);
        let y = naive_residual(&self.x, &self.r_hat, &self.c_hat);
        let yt = naive_transpose(&y);
        [
            naive_aggregate(&self.x, l0),
            naive_aggregate(&xt, l0),
            naive_aggregate(&naive_right_multiply(&self.x, &self.c_init), l0),
            naive_aggregate(&naive_right_multiply(&xt, &self.r_init), l0),
            naive_aggregate(&y, l0),
            naive_aggregate(&yt, l0),
            naive_aggregate(&naive_right_multiply(&y, &self.lambda_init), l0),
            naive_aggregate(&naive_right_multiply(&yt, &self.gamma_init), l0),
        ]
    }

    fn loading(v: &Array2<f64>, kind: LoadingKind) -> LoadingMatrix {
        if v.ncols() == 0 {
            LoadingMatrix::empty(v.nrows(), kind)
        } else {
            LoadingMatrix::new(v.clone(), kind).expect("orthonormal")
        }
    }

    fn loadings(&self) -> [LoadingMatrix; 6] {
        [
            Self::loading(&self.c_init, LoadingKind::GlobalCol),
            Self::loading(&self.r_init, LoadingKind::GlobalRow),
            Self::loading(&self.r_hat, LoadingKind::GlobalRow),
            Self::loading(&self.c_hat, LoadingKind::GlobalCol),
            Self::loading(&self.lambda_init, LoadingKind::LocalCol),
            Self::loading(&self.gamma_init, LoadingKind::LocalRow),
        ]
    }

    /// All eight aggregates along one evaluation route.
    pub fn by_route(&self, route: Route) -> [Array2<f64>; 8] {
        let series = self.series();
        let lags = 1..=self.l0;
        let [c0, r0, rh, ch, lam0, gam0] = self.loadings();
        let resid = residual_series(&series, &rh, &ch).unwrap();
        let tensor = |s: &MatrixSeries, v: &LoadingMatrix, o: Orientation| {
            let z = project(s, v, o).unwrap();
            aggregate_tensor(z.view(), lags.clone(), route).unwrap()
        };
        [
            aggregate_lags(&series, lags.clone(), Orientation::Column, route).unwrap(),
            aggregate_lags(&series, lags.clone(), Orientation::Row, route).unwrap(),
            tensor(&series, &c0, Orientation::Column),
            tensor(&series, &r0, Orientation::Row),
            aggregate_lags(&resid, lags.clone(), Orientation::Column, route).unwrap(),
            aggregate_lags(&resid, lags.clone(), Orientation::Row, route).unwrap(),
            tensor(&resid, &lam0, Orientation::Column),
            tensor(&resid, &gam0, Orientation::Row),
        ]
    }

    /// All eight aggregates through the named public entry points.
    pub fn by_name(&self) -> [Array2<f64>; 8] {
        let series = self.series();
        let l0 = self.l0;
        let [c0, r0, rh, ch, lam0, gam0] = self.loadings();
        let resid = residual_series(&series, &rh, &ch).unwrap();
        [
            aggregate_m0(&series, l0, Orientation::Column).unwrap(),
            aggregate_m0(&series, l0, Orientation::Row).unwrap(),
            aggregate_m_projected(&series, &c0, l0, Orientation::Column).unwrap(),
            aggregate_m_projected(&series, &r0, l0, Orientation::Row).unwrap(),
            aggregate_mstar0(&resid, l0, Orientation::Column).unwrap(),
            aggregate_mstar0(&resid, l0, Orientation::Row).unwrap(),
            aggregate_mstar_projected(&resid, &lam0, l0, Orientation::Column).unwrap(),
            aggregate_mstar_projected(&resid, &gam0, l0, Orientation::Row).unwrap(),
        ]
    }

    /// Largest relative error of any library evaluation against the oracle,
    /// with the offending aggregate and route.
    pub fn worst_error(&self) -> (f64, String) {
        let naive = self.naive();
        let mut worst = (0.0, String::new());
        let mut note = |err: f64, what: String| {
            if err > worst.0 || worst.1.is_empty() {
                worst = (err, what);
            }
        };
        for (label, got) in [
            ("block", self.by_route(Route::BlockMoment)),
            ("gram", self.by_route(Route::Gram)),
            ("auto", self.by_route(Route::Auto)),
            ("named", self.by_name()),
        ] {
            for (i, m) in got.iter().enumerate() {
                note(rel_err(m, &naive[i]), format!("{} via {label}", AGGREGATE_NAMES[i]));
            }
        }
        let series = self.series();
        let (pair_col, pair_row) = aggregate_m0_pair(&series, self.l0).unwrap();
        note(rel_err(&pair_col, &naive[0]), "M0_1 via pair".into());
        note(rel_err(&pair_row, &naive[1]), "M0_2 via pair".into());

        let xt = naive_transpose(&self.x);
        for (orientation, data) in [(Orientation::Column, &self.x), (Orientation::Row, &xt)] {
            let b = data.dim().2;
            for lag in 1..=self.l0 {
                let blocks = lag_cov_blocks(&series, lag, orientation).unwrap();
                for i in 0..b {
                    for j in 0..b {
                        let want = naive_lag_cov(data, i, j, lag);
                        let single = lag_cross_cov(&series, i, j, lag, orientation).unwrap();
                        note(rel_err(&single, &want), format!("Sigma({i},{j};{lag}) {orientation:?}"));
                        note(rel_err(blocks.block(i, j), &want), format!("block ({i},{j};{lag}) {orientation:?}"));
                    }
                }
            }
        }
        worst
    }
}
