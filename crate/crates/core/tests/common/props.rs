//! Randomized invariant checks. Each takes a trial count and reports the first
//! counterexample as an error string.

use ndarray::{Array1, Array2, Array3, Axis};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mtsb_core::bicluster::{
    bicluster_pipeline, kmeans, misclustering_rate, similarity_from_rows, BiclusterConfig, KMeansConfig,
};
use mtsb_core::estimate::{estimate_factor_numbers, estimate_global_loadings, fit_loadings};
use mtsb_core::evaluate::{rolling_validation, run_replications_with, Method, ReplicationOptions};
use mtsb_core::io::{
    load_tensor_csv, read_matrix_csv, read_membership_csv, save_tensor_csv, write_matrix_csv,
    write_membership_csv,
};
use mtsb_core::linalg::{residual_projector, space_distance, sym_eig, sym_eig_top, sym_eigenvalues};
use mtsb_core::simulate::{generate, ScenarioSpec, DEFAULT_COEFF_INTERVALS};
use mtsb_core::spectral::{aggregate_lags, aggregate_m0, residual_series, Route};
use mtsb_core::types::orthonormality_defect;
use mtsb_core::{FactorNumbers, MatrixSeries, Orientation};

use super::oracle::{
    frobenius, gaussian_matrix, gaussian_tensor, matmul, random_orthonormal, rel_err, transpose,
    AggregateInstance, AGGREGATE_NAMES,
};

pub type Property = fn(u32) -> Result<(), String>;

/// Every property with its name.
pub const ALL: &[(&str, Property)] = &[
    ("aggregate_oracle_equivalence", aggregate_oracle_equivalence),
    ("aggregate_symmetric_psd", aggregate_symmetric_psd),
    ("aggregate_lag_additivity", aggregate_lag_additivity),
    ("aggregate_quartic_scaling", aggregate_quartic_scaling),
    ("eig_top_reconstruction", eig_top_reconstruction),
    ("eig_charpoly_oracle", eig_charpoly_oracle),
    ("residual_projector_trace", residual_projector_trace),
    ("space_distance_axioms", space_distance_axioms),
    ("simulate_identity_blocks_determinism", simulate_identity_blocks_determinism),
    ("simulate_column_norms", simulate_column_norms),
    ("loadings_orthonormal", loadings_orthonormal),
    ("weak_space_annihilation", weak_space_annihilation),
    ("factor_numbers_scale_invariant", factor_numbers_scale_invariant),
    ("similarity_axioms", similarity_axioms),
    ("similarity_rotation_invariant", similarity_rotation_invariant),
    ("kmeans_monotone", kmeans_monotone),
    ("misclustering_symmetry", misclustering_symmetry),
    ("pipeline_row_permutation", pipeline_row_permutation),
    ("pipeline_determinism", pipeline_determinism),
    ("replications_reproducible", replications_reproducible),
    ("rolling_rotation_invariant", rolling_rotation_invariant),
    ("csv_round_trip", csv_round_trip),
];

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let config = Config {
        cases,
        failure_persistence: None,
        max_shrink_iters: 64,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn seeds() -> impl Strategy<Value = u64> {
    any::<u64>()
}

fn err<E: std::fmt::Display>(e: E) -> TestCaseError {
    TestCaseError::fail(e.to_string())
}

/// Small scenario with `p, q ≥ 5`.
fn small_spec(rng: &mut ChaCha8Rng, t_len: usize) -> ScenarioSpec {
    let m = rng.random_range(1..=3);
    let n = rng.random_range(1..=3);
    let k0 = rng.random_range(1..=2);
    let r0 = rng.random_range(1..=2);
    let row_factors: Vec<usize> = (0..m).map(|_| rng.random_range(1..=2)).collect();
    let col_factors: Vec<usize> = (0..n).map(|_| rng.random_range(1..=2)).collect();
    let mut row_blocks: Vec<usize> = row_factors.iter().map(|&k| k + k0 + rng.random_range(0..=2)).collect();
    let mut col_blocks: Vec<usize> = col_factors.iter().map(|&r| r + r0 + rng.random_range(0..=2)).collect();
    while row_blocks.iter().sum::<usize>() < 5 {
        row_blocks[0] += 1;
    }
    while col_blocks.iter().sum::<usize>() < 5 {
        col_blocks[0] += 1;
    }
    ScenarioSpec {
        t_len,
        k0,
        r0,
        row_factors,
        col_factors,
        row_blocks,
        col_blocks,
        coeff_intervals: DEFAULT_COEFF_INTERVALS.to_vec(),
        factor_sd_range: (1.0, 2.0),
        noise_innovation_variance: 0.25,
        seed: rng.random(),
        weak_scale: 1.0,
        orthogonal_strong: false,
    }
}

fn true_counts(spec: &ScenarioSpec) -> FactorNumbers {
    FactorNumbers::known(spec.k0, spec.k(), spec.r0, spec.r())
}

fn random_symmetric(rng: &mut ChaCha8Rng, d: usize) -> Array2<f64> {
    let a = gaussian_matrix(rng, d, d);
    (&a + &a.t()) * 0.5
}

fn is_symmetric(m: &Array2<f64>, rel: f64) -> bool {
    let scale = frobenius(m).max(f64::MIN_POSITIVE);
    frobenius(&(m - &m.t())) <= rel * scale
}

pub fn aggregate_oracle_equivalence(cases: u32) -> Result<(), String> {
    run(cases, seeds(), |seed| {
        let inst = AggregateInstance::random(&mut ChaCha8Rng::seed_from_u64(seed));
        let (worst, what) = inst.worst_error();
        prop_assert!(worst <= 1e-8, "{what}: relative error {worst:e}");
        Ok(())
    })
}

pub fn aggregate_symmetric_psd(cases: u32) -> Result<(), String> {
    run(cases, seeds(), |seed| {
        let inst = AggregateInstance::random(&mut ChaCha8Rng::seed_from_u64(seed));
        for (m, name) in inst.by_route(Route::Auto).iter().zip(AGGREGATE_NAMES) {
            prop_assert!(is_symmetric(m, 1e-8), "{name} not symmetric");
            let eig = sym_eigenvalues(m.view()).map_err(err)?;
            let top = eig[0].abs().max(f64::MIN_POSITIVE);
            let low = eig[eig.len() - 1];
            prop_assert!(low >= -1e-8 * top, "{name} has eigenvalue {low:e} (top {top:e})");
        }
        Ok(())
    })
}

pub fn aggregate_lag_additivity(cases: u32) -> Result<(), String> {
    run(cases, seeds(), |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = AggregateInstance::random(&mut rng);
        let series = inst.series();
        let t = series.len();
        let b = rng.random_range(2..t);
        let a = rng.random_range(1..b);
        for o in [Orientation::Column, Orientation::Row] {
            let whole = aggregate_m0(&series, b, o).map_err(err)?;
            let head = aggregate_m0(&series, a, o).map_err(err)?;
            let tail = aggregate_lags(&series, a + 1..=b, o, Route::Auto).map_err(err)?;
            let e = rel_err(&(head + tail), &whole);
            prop_assert!(e <= 1e-10, "{o:?}: a={a}, b={b}, error {e:e}");
        }
        Ok(())
    })
}

pub fn aggregate_quartic_scaling(cases: u32) -> Result<(), String> {
    run(cases, (seeds(), 0.05f64..20.0), |(seed, c)| {
        let inst = AggregateInstance::random(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut scaled = inst.clone();
        scaled.x *= c;
        let base = inst.by_route(Route::Auto);
        let got = scaled.by_route(Route::Auto);
        for i in 0..8 {
            let e = rel_err(&got[i], &(&base[i] * c.powi(4)));
            prop_assert!(e <= 1e-10, "{}: c={c}, error {e:e}", AGGREGATE_NAMES[i]);
        }
        Ok(())
    })
}

pub fn eig_top_reconstruction(cases: u32) -> Result<(), String> {
    run(cases, (seeds(), 2usize..=10), |(seed, d)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(1..d);
        let v = random_orthonormal(&mut rng, d, d);
        let mut lambda: Vec<f64> = (0..k).map(|_| rng.random_range(1.0..10.0)).collect();
        // a small tail keeps the input near rank k
        let tail = if rng.random_bool(0.5) { 0.0 } else { 1e-3 };
        lambda.extend((k..d).map(|_| tail * rng.random_range(0.0..1.0)));
        let m = matmul(&matmul(&v, &Array2::from_diag(&Array1::from(lambda.clone()))), &transpose(&v));
        let (vals, vecs) = sym_eig_top(m.view(), k).map_err(err)?;
        prop_assert!(orthonormality_defect(&vecs) < 1e-10);
        prop_assert!(vals.windows(2).into_iter().all(|w| w[0] >= w[1]));
        let approx = matmul(&matmul(&vecs, &Array2::from_diag(&vals)), &transpose(&vecs));
        let mut sorted = lambda.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let bound = sorted[k].abs() * ((d - k) as f64).sqrt() + 1e-9 * sorted[0];
        let resid = frobenius(&(&m - &approx));
        prop_assert!(resid <= bound, "residual {resid:e} above bound {bound:e}");
        Ok(())
    })
}

/// Characteristic polynomial coefficients `c₁..c_d` of
/// `λ^d + c₁λ^{d−1} + … + c_d` by the Faddeev-LeVerrier recursion.
fn charpoly(m: &Array2<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut coeffs = Vec::with_capacity(d);
    let mut mk = Array2::<f64>::zeros((d, d));
    let mut prev = 1.0;
    for k in 1..=d {
        mk = matmul(m, &mk) + Array2::<f64>::eye(d) * prev;
        let am = matmul(m, &mk);
        let c = -am.diag().sum() / k as f64;
        coeffs.push(c);
        prev = c;
    }
    coeffs
}

/// Elementary symmetric polynomials `e₁..e_d` of `values`.
fn elementary_symmetric(values: &[f64]) -> Vec<f64> {
    let mut e = vec![1.0];
    for &v in values {
        let mut next = e.clone();
        next.push(0.0);
        for j in 1..next.len() {
            next[j] += v * e[j - 1];
        }
        e = next;
    }
    e[1..].to_vec()
}

pub fn eig_charpoly_oracle(cases: u32) -> Result<(), String> {
    run(cases, (seeds(), 1usize..=4), |(seed, d)| {
        let m = random_symmetric(&mut ChaCha8Rng::seed_from_u64(seed), d);
        let (vals, _) = sym_eig(m.view()).map_err(err)?;
        let e = elementary_symmetric(vals.as_slice().unwrap());
        let c = charpoly(&m);
        let scale = frobenius(&m).max(1.0);
        for k in 0..d {
            let want = if k % 2 == 0 { -c[k] } else { c[k] };
            let diff = (e[k] - want).abs();
            prop_assert!(
                diff <= 1e-8 * scale.powi(k as i32 + 1),
                "coefficient {}: eigenvalues give {}, polynomial gives {}",
                k + 1,
                e[k],
                want
            );
        }
        Ok(())
    })
}

pub fn residual_projector_trace(cases: u32) -> Result<(), String> {
    run(cases, (seeds(), 1usize..=12), |(seed, d)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(0..=d);
        let v = random_orthonormal(&mut rng, d, k);
        let p = residual_projector(v.view()).map_err(err)?;
        let tr = p.diag().sum();
        prop_assert!((tr - (d - k) as f64).abs() <= 1e-8, "trace {tr} for d={d}, k={k}");
        prop_assert!(is_symmetric(&p, 1e-12) || frobenius(&p) < 1e-12);
        prop_assert!(frobenius(&(matmul(&p, &p) - &p)) <= 1e-10);
        prop_assert!(frobenius(&matmul(&p, &v)) <= 1e-10);
        Ok(())
    })
}

/// `d × k` matrix with singular values in `[0.5, 2]`.
fn well_conditioned(rng: &mut ChaCha8Rng, d: usize, k: usize) -> Array2<f64> {
    let u = random_orthonormal(rng, d, k);
    let w = random_orthonormal(rng, k, k);
    let s = Array1::from_shape_simple_fn(k, || rng.random_range(0.5..2.0));
    matmul(&matmul(&u, &Array2::from_diag(&s)), &w)
}

pub fn space_distance_axioms(cases: u32) -> Result<(), String> {
    run(cases, (seeds(), 2usize..=10), |(seed, d)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k1 = rng.random_range(1..=d);
        let k2 = rng.random_range(1..=d);
        let s1 = gaussian_matrix(&mut rng, d, k1);
        let s2 = gaussian_matrix(&mut rng, d, k2);
        let d12 = space_distance(s1.view(), s2.view()).map_err(err)?;
        let d21 = space_distance(s2.view(), s1.view()).map_err(err)?;
        prop_assert!((0.0..=1.0).contains(&d12));
        prop_assert!((d12 - d21).abs() <= 1e-12, "asymmetric: {d12} vs {d21}");

        // invariance to invertible right factors, compared on squares
        let a = well_conditioned(&mut rng, k1, k1);
        let b = well_conditioned(&mut rng, k2, k2);
        let moved = space_distance(matmul(&s1, &a).view(), matmul(&s2, &b).view()).map_err(err)?;
        prop_assert!((moved * moved - d12 * d12).abs() <= 1e-8, "{moved} vs {d12}");

        // containment gives 0
        let sub = rng.random_range(1..=k1);
        let inner = matmul(&s1, &gaussian_matrix(&mut rng, k1, sub));
        let zero = space_distance(inner.view(), s1.view()).map_err(err)?;
        prop_assert!(zero <= 1e-6, "contained space at distance {zero}");

        // orthogonal spaces give 1
        if k1 < d {
            let basis = random_orthonormal(&mut rng, d, d);
            let j = rng.random_range(1..=d - k1);
            let left = basis.slice(ndarray::s![.., ..k1]).to_owned();
            let right = basis.slice(ndarray::s![.., k1..k1 + j]).to_owned();
            let a = well_conditioned(&mut rng, k1, k1);
            let one = space_distance(matmul(&left, &a).view(), right.view()).map_err(err)?;
            prop_assert!((one - 1.0).abs() <= 1e-8, "orthogonal spaces at distance {one}");
        }
        Ok(())
    })
}

pub fn simulate_identity_blocks_determinism(cases: u32) -> Result<(), String> {
    run(cases, (seeds(), 2usize..=12), |(seed, t)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = small_spec(&mut rng, t);
        spec.orthogonal_strong = rng.random_bool(0.3);
        let (series, truth) = generate(&spec).map_err(err)?;
        let rebuilt = truth.reconstruct();
        let diff = (&rebuilt - series.data()).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        prop_assert!(diff <= 1e-10, "reconstruction off by {diff:e}");

        for (loading, blocks, factors) in [
            (&truth.gamma, &spec.row_blocks, &spec.row_factors),
            (&truth.lambda, &spec.col_blocks, &spec.col_factors),
        ] {
            let (mut r0, mut c0) = (0, 0);
            let mut inside = Array2::from_elem(loading.dim(), false);
            for (&pi, &ki) in blocks.iter().zip(factors) {
                inside.slice_mut(ndarray::s![r0..r0 + pi, c0..c0 + ki]).fill(true);
                r0 += pi;
                c0 += ki;
            }
            for ((i, j), &v) in loading.indexed_iter() {
                prop_assert!(inside[[i, j]] || v == 0.0, "off-block entry ({i},{j}) = {v}");
            }
        }

        let (again, truth_again) = generate(&spec).map_err(err)?;
        prop_assert!(again == series && truth_again == truth, "generate is not deterministic");
        Ok(())
    })
}

pub fn simulate_column_norms(cases: u32) -> Result<(), String> {
    run(cases, (seeds(), 20usize..=40), |(seed, p1)| {
        let spec = ScenarioSpec::equal_blocks(2, 3, 3, 3, 2, p1, p1).with_seed(seed);
        let (_, truth) = generate(&spec).map_err(err)?;
        for (mat, d) in [(&truth.r, spec.p()), (&truth.c, spec.q())] {
            for col in mat.axis_iter(Axis(1)) {
                let v = col.iter().map(|x| x * x).sum::<f64>() / d as f64;
                prop_assert!((0.15..=0.55).contains(&v), "column norm ratio {v} at d={d}");
            }
        }
        Ok(())
    })
}

pub fn loadings_orthonormal(cases: u32) -> Result<(), String> {
    run(cases, seeds(), |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t_len = rng.random_range(12..=40);
        let spec = small_spec(&mut rng, t_len);
        let (series, _) = generate(&spec).map_err(err)?;
        let l0 = rng.random_range(1..=2);
        let set = fit_loadings(&series, &true_counts(&spec), l0).map_err(err)?;
        let global = estimate_global_loadings(&series, spec.k0, spec.r0, l0).map_err(err)?;
        for l in [
            &set.row_global,
            &set.col_global,
            &set.row_local,
            &set.col_local,
            &global.row_initial,
            &global.col_initial,
        ] {
            let dev = orthonormality_defect(l.values());
            prop_assert!(dev < 1e-8, "{:?} defect {dev:e}", l.kind());
        }
        prop_assert_eq!(set.row_global.n_factors(), spec.k0);
        prop_assert_eq!(set.col_local.n_factors(), spec.r());
        Ok(())
    })
}

pub fn weak_space_annihilation(cases: u32) -> Result<(), String> {
    run(cases, seeds(), |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t_len = rng.random_range(12..=40);
        let spec = small_spec(&mut rng, t_len);
        let (series, _) = generate(&spec).map_err(err)?;
        let set = fit_loadings(&series, &true_counts(&spec), 1).map_err(err)?;
        let resid = residual_series(&series, &set.row_global, &set.col_global).map_err(err)?;
        let r = set.row_global.values();
        let c = set.col_global.values();
        for t in 0..series.len() {
            let scale = frobenius(&series.at(t).to_owned()).max(1.0);
            let y = resid.at(t);
            let left = frobenius(&r.t().dot(&y));
            let right = frobenius(&y.dot(c));
            prop_assert!(left <= 1e-8 * scale && right <= 1e-8 * scale, "t={t}: {left:e}, {right:e}");
        }
        let cross = set.row_local.values().t().dot(r);
        let worst = cross.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        prop_assert!(worst <= 0.1, "Gamma-hat vs R-hat inner product {worst}");
        let cross = set.col_local.values().t().dot(c);
        let worst = cross.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        prop_assert!(worst <= 0.1, "Lambda-hat vs C-hat inner product {worst}");
        Ok(())
    })
}

pub fn factor_numbers_scale_invariant(cases: u32) -> Result<(), String> {
    run(cases, (seeds(), -2.0f64..2.0), |(seed, log_c)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t_len = rng.random_range(12..=40);
        let spec = small_spec(&mut rng, t_len);
        let (series, _) = generate(&spec).map_err(err)?;
        let c = 10f64.powf(log_c);
        let scaled = MatrixSeries::new(series.data() * c).map_err(err)?;
        let l0 = rng.random_range(1..=2);
        let a = estimate_factor_numbers(&series, l0, None, None);
        let b = estimate_factor_numbers(&scaled, l0, None, None);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a.counts(), b.counts(), "c = {}", c),
            (Err(a), Err(b)) => prop_assert_eq!(a.to_string(), b.to_string()),
            (a, b) => return Err(TestCaseError::fail(format!("{a:?} vs {b:?} at c = {c}"))),
        }
        Ok(())
    })
}

pub fn similarity_axioms(cases: u32) -> Result<(), String> {
    run(cases, (seeds(), 1usize..=15, 1usize..=5), |(seed, d, k)| {
        let l = gaussian_matrix(&mut ChaCha8Rng::seed_from_u64(seed), d, k);
        let (sim, degenerate) = similarity_from_rows(l.view());
        prop_assert!(degenerate.is_empty());
        prop_assert_eq!(sim.dim(), (d, d));
        for i in 0..d {
            prop_assert!((sim[[i, i]] - 1.0).abs() <= 1e-12);
            for j in 0..d {
                let v = sim[[i, j]];
                prop_assert!((0.0..=1.0).contains(&v), "entry ({i},{j}) = {v}");
                prop_assert!(v == sim[[j, i]], "asymmetric at ({i},{j})");
            }
        }
        Ok(())
    })
}

pub fn similarity_rotation_invariant(cases: u32) -> Result<(), String> {
    run(cases, (seeds(), 1usize..=15, 1usize..=5), |(seed, d, k)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = gaussian_matrix(&mut rng, d, k);
        let q = random_orthonormal(&mut rng, k, k);
        let (a, _) = similarity_from_rows(l.view());
        let (b, _) = similarity_from_rows(matmul(&l, &q).view());
        let worst = (&a - &b).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(worst <= 1e-10, "rotation moved an entry by {worst:e}");
        Ok(())
    })
}

fn within_cluster_sse(points: &Array2<f64>, labels: &[usize]) -> f64 {
    let k = labels.iter().copied().max().unwrap_or(0);
    let mut total = 0.0;
    for c in 1..=k {
        let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if rows.is_empty() {
            continue;
        }
        let sel = points.select(Axis(0), &rows);
        let mean = sel.mean_axis(Axis(0)).unwrap();
        total += sel.rows().into_iter().map(|r| (&r - &mean).mapv(|v| v * v).sum()).sum::<f64>();
    }
    total
}

pub fn kmeans_monotone(cases: u32) -> Result<(), String> {
    run(cases, (seeds(), 2usize..=30, 1usize..=4), |(seed, n, dim)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(1..=n.min(5));
        let mut points = gaussian_matrix(&mut rng, n, dim);
        // a few coincident points exercise empty-cluster handling
        if n > 3 && rng.random_bool(0.3) {
            let first = points.row(0).to_owned();
            points.row_mut(1).assign(&first);
        }
        let cfg = KMeansConfig {
            restarts: rng.random_range(1..=8),
            ..KMeansConfig::new(k, rng.random())
        };
        let fit = kmeans(points.view(), &cfg).map_err(err)?;
        for (i, h) in fit.histories.iter().enumerate() {
            for w in h.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "restart {i} rose: {:?}", h);
            }
        }
        for &o in &fit.restart_objectives {
            prop_assert!(fit.objective <= o, "final {} above restart {}", fit.objective, o);
        }
        prop_assert_eq!(fit.objective, fit.restart_objectives[fit.best_restart]);
        prop_assert_eq!(fit.labels[0], 1);
        let sse = within_cluster_sse(&points, &fit.labels);
        prop_assert!(sse <= fit.objective * (1.0 + 1e-9) + 1e-12, "sse {sse} above objective {}", fit.objective);
        let again = kmeans(points.view(), &cfg).map_err(err)?;
        prop_assert!(again == fit, "kmeans is not deterministic");
        Ok(())
    })
}

/// Best agreement over one-to-one label matchings, by enumeration.
pub fn brute_force_rate(a: &[usize], b: &[usize]) -> f64 {
    fn distinct(v: &[usize]) -> Vec<usize> {
        let mut d = v.to_vec();
        d.sort_unstable();
        d.dedup();
        d
    }
    let (la, lb) = (distinct(a), distinct(b));
    let (small, large, swap) = if la.len() <= lb.len() { (la, lb, false) } else { (lb, la, true) };
    let mut best = 0usize;
    let mut perm: Vec<usize> = (0..large.len()).collect();
    permute(&mut perm, 0, &mut |p| {
        let agree = a
            .iter()
            .zip(b)
            .filter(|(&x, &y)| {
                let (s, l) = if swap { (y, x) } else { (x, y) };
                let i = small.iter().position(|&v| v == s).unwrap();
                large[p[i]] == l
            })
            .count();
        best = best.max(agree);
    });
    1.0 - best as f64 / a.len() as f64
}

fn permute(v: &mut Vec<usize>, i: usize, f: &mut dyn FnMut(&[usize])) {
    if i == v.len() {
        f(v);
        return;
    }
    for j in i..v.len() {
        v.swap(i, j);
        permute(v, i + 1, f);
        v.swap(i, j);
    }
}

pub fn misclustering_symmetry(cases: u32) -> Result<(), String> {
    run(cases, (seeds(), 1usize..=15), |(seed, n)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ka = rng.random_range(1..=4);
        let kb = rng.random_range(1..=4);
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(1..=ka)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.random_range(1..=kb)).collect();
        let mut rename: Vec<usize> = (10..20).collect();
        rename.shuffle(&mut rng);
        let a2: Vec<usize> = a.iter().map(|&l| rename[l]).collect();
        rename.shuffle(&mut rng);
        let b2: Vec<usize> = b.iter().map(|&l| rename[l]).collect();
        let base = misclustering_rate(&a, &b).map_err(err)?;
        prop_assert_eq!(misclustering_rate(&a2, &b).map_err(err)?, base);
        prop_assert_eq!(misclustering_rate(&a, &b2).map_err(err)?, base);
        prop_assert_eq!(misclustering_rate(&b, &a).map_err(err)?, base);
        prop_assert_eq!(misclustering_rate(&a, &a2).map_err(err)?, 0.0);
        let oracle = brute_force_rate(&a, &b);
        prop_assert!((oracle - base).abs() <= 1e-12, "matching gave {base}, enumeration {oracle}");
        Ok(())
    })
}

fn permute_rows(series: &MatrixSeries, pi: &[usize]) -> MatrixSeries {
    let data = series.data();
    let (t, p, q) = data.dim();
    let out = Array3::from_shape_fn((t, p, q), |(tt, i, j)| data[[tt, pi[i], j]]);
    MatrixSeries::new(out).unwrap()
}

fn pipeline_case(seed: u64) -> (ScenarioSpec, MatrixSeries) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(2..=3);
    let mut spec = ScenarioSpec::equal_blocks(80, m, 2, 1, 1, rng.random_range(8..=10), 6).with_seed(rng.random());
    // a dominant strong part and a clean block structure keep the K-means
    // optimum unique; seeded restarts are order-dependent otherwise
    spec.noise_innovation_variance = 0.01;
    spec.orthogonal_strong = true;
    spec.weak_scale = 0.5;
    let (series, _) = generate(&spec).unwrap();
    (spec, series)
}

pub fn pipeline_row_permutation(cases: u32) -> Result<(), String> {
    run(cases, seeds(), |seed| {
        let (spec, series) = pipeline_case(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut pi: Vec<usize> = (0..spec.p()).collect();
        pi.shuffle(&mut rng);
        let cfg = BiclusterConfig {
            kmeans: KMeansConfig::new(1, rng.random()),
            ..BiclusterConfig::default()
        };
        let counts = Some(true_counts(&spec));
        let base = bicluster_pipeline(&series, 1, counts.clone(), &cfg).map_err(err)?;
        let moved = bicluster_pipeline(&permute_rows(&series, &pi), 1, counts, &cfg).map_err(err)?;
        prop_assert_eq!(base.result.m_hat, moved.result.m_hat);
        prop_assert_eq!(base.result.n_hat, moved.result.n_hat);
        let expected: Vec<usize> = pi.iter().map(|&i| base.result.row_membership[i]).collect();
        let rate = misclustering_rate(&moved.result.row_membership, &expected).map_err(err)?;
        prop_assert_eq!(rate, 0.0, "row memberships disagree after permutation");
        let rate = misclustering_rate(&moved.result.col_membership, &base.result.col_membership).map_err(err)?;
        prop_assert_eq!(rate, 0.0, "column memberships changed under a row permutation");
        Ok(())
    })
}

pub fn pipeline_determinism(cases: u32) -> Result<(), String> {
    run(cases, seeds(), |seed| {
        let (_, series) = pipeline_case(seed);
        let cfg = BiclusterConfig {
            kmeans: KMeansConfig::new(1, seed),
            ..BiclusterConfig::default()
        };
        let a = bicluster_pipeline(&series, 1, None, &cfg);
        let b = bicluster_pipeline(&series, 1, None, &cfg);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert!(a == b, "pipeline output differs between runs"),
            (Err(a), Err(b)) => prop_assert_eq!(a.to_string(), b.to_string()),
            _ => return Err(TestCaseError::fail("one run failed and the other did not")),
        }
        Ok(())
    })
}

pub fn replications_reproducible(cases: u32) -> Result<(), String> {
    run(cases, (seeds(), any::<bool>()), |(seed, known)| {
        let spec = ScenarioSpec::equal_blocks(24, 2, 2, 1, 1, 4, 4).with_seed(seed);
        let opts = ReplicationOptions::new(3, vec![1, 2], known);
        let a = run_replications_with(&spec, &opts).map_err(err)?;
        let b = run_replications_with(&spec, &opts).map_err(err)?;
        let ja = serde_json::to_string(&a).map_err(err)?;
        let jb = serde_json::to_string(&b).map_err(err)?;
        prop_assert!(ja == jb, "replication reports differ");
        for row in &a.rows {
            let recs: Vec<_> = a.records.iter().filter(|r| r.l0 == row.l0).collect();
            let count = |f: &dyn Fn(&&mtsb_core::evaluate::ReplicationRecord) -> bool| {
                recs.iter().filter(|r| f(r)).count() as f64 / a.n_reps as f64
            };
            prop_assert_eq!(row.freq_k0, count(&|r| r.k0_hat == Some(spec.k0)));
            prop_assert_eq!(row.freq_k, count(&|r| r.k_hat == Some(spec.k())));
            prop_assert_eq!(row.freq_r0, count(&|r| r.r0_hat == Some(spec.r0)));
            prop_assert_eq!(row.freq_r, count(&|r| r.r_hat == Some(spec.r())));
        }
        Ok(())
    })
}

pub fn rolling_rotation_invariant(cases: u32) -> Result<(), String> {
    run(cases, (seeds(), 0usize..3), |(seed, which)| {
        let method = [Method::Ours, Method::AcceBaseline, Method::PcaBaseline][which];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = ScenarioSpec::equal_blocks(42, 2, 2, 1, 1, 3, 3).with_seed(rng.random());
        let (series, _) = generate(&spec).map_err(err)?;
        let q = random_orthonormal(&mut rng, spec.p(), spec.p());
        let rotated = series.map_matrices(|x| q.dot(&x)).map_err(err)?;
        let counts = true_counts(&spec);
        let a = rolling_validation(&series, method, &counts, 40, 1).map_err(err)?;
        let b = rolling_validation(&rotated, method, &counts, 40, 1).map_err(err)?;
        let e = (a.mse - b.mse).abs() / a.mse;
        prop_assert!(e <= 1e-6, "{method}: mse {} vs {} after rotation", a.mse, b.mse);
        Ok(())
    })
}

pub fn csv_round_trip(cases: u32) -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    run(cases, (seeds(), 2usize..=6, 1usize..=5, 1usize..=5), |(seed, t, p, q)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 10f64.powi(rng.random_range(-300..300));
        let data = gaussian_tensor(&mut rng, t, p, q) * scale;
        let name = |prefix: &str, i: usize, rng: &mut ChaCha8Rng| {
            if rng.random_bool(0.3) {
                format!("{prefix}, \"{i}\"")
            } else {
                format!("{prefix}{i}")
            }
        };
        let rows: Vec<String> = (0..p).map(|i| name("row", i, &mut rng)).collect();
        let cols: Vec<String> = (0..q).map(|j| name("col", j, &mut rng)).collect();
        let series = MatrixSeries::with_labels(data, Some(rows.clone()), Some(cols.clone())).map_err(err)?;
        let ext = if rng.random_bool(0.5) { "csv.gz" } else { "csv" };
        let path = dir.path().join(format!("series.{ext}"));
        save_tensor_csv(&series, &path).map_err(err)?;
        let back = load_tensor_csv(&path).map_err(err)?;
        prop_assert!(back == series, "tensor round trip changed the series");

        let m = gaussian_matrix(&mut rng, p, q) * scale;
        let path = dir.path().join("matrix.csv");
        write_matrix_csv(&path, &m, Some(&rows), Some(&cols)).map_err(err)?;
        let read = read_matrix_csv(&path).map_err(err)?;
        prop_assert!(read.values == m && read.row_names == rows && read.col_names == cols);

        let labels: Vec<usize> = (0..p).map(|_| rng.random_range(1..=3)).collect();
        let path = dir.path().join("membership.csv");
        write_membership_csv(&path, &rows, &labels).map_err(err)?;
        let (names, back) = read_membership_csv(&path).map_err(err)?;
        prop_assert!(names == rows && back == labels);
        Ok(())
    })
}
