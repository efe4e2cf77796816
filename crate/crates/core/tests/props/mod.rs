//! Property checks shared by the `properties` target and the acceptance
//! suite. Each check takes the number of generated cases to run.

#![allow(dead_code)]

use std::fmt::{Debug, Display};
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::Array2;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rayon::prelude::*;

use repsim::calibration::{
    calibrated_score, layer_nulls, multiplicity_adjust, null_scores, AdjustMethod, CalibrationResult,
};
use repsim::io::{
    encode_csv, encode_npy, encode_rawbin, parse_csv, parse_npy, parse_rawbin, InputInfo, ReportResult, RunReport,
};
use repsim::metrics::{gram, knn_sets, Bandwidth, Distance, Kernel, Transformed};
use repsim::oracles::{
    expected_cross_cov_energy, expected_mknn_null, hypergeom_intersection_stats, max_inflation_bound, NullBaseline,
};
use repsim::permutation::{rng_from_seed, split_seed};
use repsim::synthlab::{generate_dataset, ColumnValues, DatasetSpec, Experiment, NoiseFamily};
use repsim::{
    apply_permutation, calibrate_aggregate, calibrate_scalar, center, Aggregator, CalibrationConfig, EmbeddingMatrix,
    LayerStack, MetricSpec, Permutation, PermutationPlan, Similarity,
};

use crate::common::{brute_knn, gaussian, rows};

pub type Check = fn(u32) -> Result<(), String>;

/// Every property, by name.
pub const CHECKS: &[(&str, Check)] = &[
    ("centering is idempotent", centering_idempotent),
    ("null permutations ignore thread count and order", permutation_determinism),
    ("row permutation preserves the row multiset", permutation_multiset),
    ("metrics are symmetric", metric_symmetry),
    ("metrics are permutation equivariant", permutation_equivariance),
    ("bounded metrics stay in range", metric_bounds),
    ("scale invariance", scale_invariance),
    ("orthogonal invariance", orthogonal_invariance),
    ("kNN sets match brute force", knn_brute_force),
    ("Gram matrices are symmetric and PSD", gram_properties),
    ("calibration result invariants", calibration_result_invariants),
    ("gating consistency", gating_consistency),
    ("monotone invariance", monotone_invariance),
    ("replicate-order independence", replicate_order_independence),
    ("aggregate invariants", aggregate_invariants),
    ("multiplicity adjustment invariants", adjustment_invariants),
    ("null baseline invariants", baseline_invariants),
    ("experiment tables are reproducible with valid cells", table_invariants),
    ("generated data is reproducible and preserves planted signal", dataset_invariants),
    ("matrix encodings round-trip bit-exactly", encoding_round_trip),
    ("run reports round-trip", report_round_trip),
];

fn run<S>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S: Strategy,
    S::Value: Debug,
{
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn ok<T, E: Display>(r: Result<T, E>) -> Result<T, TestCaseError> {
    r.map_err(|e| TestCaseError::fail(e.to_string()))
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// `(n, d_x, d_y, seed)` for a small independent pair.
///
/// Widths start at 2: correlation distance is undefined on single-column rows.
fn sizes() -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (8usize..32, 2usize..7, 2usize..7, any::<u64>())
}

fn pair(n: usize, dx: usize, dy: usize, seed: u64) -> (EmbeddingMatrix, EmbeddingMatrix) {
    (gaussian(n, dx, split_seed(seed, 0)), gaussian(n, dy, split_seed(seed, 1)))
}

/// `y` mixed with a copy of `x` so that some cases carry real signal.
fn mixed(x: &EmbeddingMatrix, y: &EmbeddingMatrix, w: f64) -> EmbeddingMatrix {
    EmbeddingMatrix::new(x.values() * w + y.values() * (1.0 - w)).unwrap()
}

fn k_for(n: usize) -> usize {
    (n / 4).clamp(1, 6)
}

fn all_metrics(n: usize) -> Vec<MetricSpec> {
    let k = k_for(n);
    vec![
        MetricSpec::cka_linear(),
        MetricSpec::cka_rbf(),
        MetricSpec::cka_rbf_with(Bandwidth::Fixed { sigma: 1.5 }),
        MetricSpec::cka_unbiased(Kernel::Linear),
        MetricSpec::mean_cca(),
        MetricSpec::svcca(0.9),
        MetricSpec::pwcca(),
        MetricSpec::Rv,
        MetricSpec::rsa(),
        MetricSpec::Rsa {
            distance: Distance::Euclidean,
        },
        MetricSpec::mknn(k),
        MetricSpec::Mknn {
            k,
            distance: Distance::Cosine,
        },
        MetricSpec::cycle_knn(k),
        MetricSpec::cknna(k),
    ]
}

fn random_orthogonal(d: usize, seed: u64) -> Array2<f64> {
    let g = gaussian(d + 1, d, seed);
    let q = DMatrix::from_row_slice(d, d, &g.as_slice()[..d * d]).qr().q();
    Array2::from_shape_fn((d, d), |(i, j)| q[(i, j)])
}

fn permuted_rows(m: &EmbeddingMatrix, p: &Permutation) -> EmbeddingMatrix {
    apply_permutation(m, p).unwrap()
}

pub fn centering_idempotent(cases: u32) -> Result<(), String> {
    run(cases, (2usize..40, 1usize..10, any::<u64>(), -50.0f64..50.0), |(n, d, seed, shift)| {
        let x = EmbeddingMatrix::new(gaussian(n, d, seed).values() + shift).unwrap();
        let once = center(&x);
        let twice = center(&once);
        for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
        for j in 0..d {
            let mean = once.values().column(j).sum() / n as f64;
            prop_assert!(mean.abs() <= 1e-10);
        }
        Ok(())
    })
}

pub fn permutation_determinism(cases: u32) -> Result<(), String> {
    run(cases, (1usize..60, 1usize..40, any::<u64>(), 2usize..5), |(n, k, seed, threads)| {
        let plan = PermutationPlan::new(seed, k, n);
        let forward: Vec<Permutation> = (0..k).map(|i| plan.permutation(i).unwrap()).collect();
        let mut backward: Vec<Permutation> = (0..k).rev().map(|i| plan.permutation(i).unwrap()).collect();
        backward.reverse();
        prop_assert_eq!(&forward, &backward);
        let pool = ok(rayon::ThreadPoolBuilder::new().num_threads(threads).build())?;
        let parallel: Vec<Permutation> =
            pool.install(|| (0..k).into_par_iter().map(|i| plan.permutation(i).unwrap()).collect());
        prop_assert_eq!(&forward, &parallel);
        prop_assert_eq!(plan.replicate_seeds(), (0..k).map(|i| split_seed(seed, i as u64)).collect::<Vec<_>>());
        Ok(())
    })
}

pub fn permutation_multiset(cases: u32) -> Result<(), String> {
    run(cases, (2usize..40, 1usize..6, any::<u64>()), |(n, d, seed)| {
        let y = gaussian(n, d, seed);
        let p = Permutation::random(n, &mut rng_from_seed(split_seed(seed, 9)));
        let py = permuted_rows(&y, &p);
        for i in 0..n {
            prop_assert_eq!(py.row(i), y.row(p.as_slice()[i]));
        }
        let key = |m: &EmbeddingMatrix| {
            let mut r: Vec<Vec<u64>> = rows(m).iter().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
            r.sort();
            r
        };
        prop_assert_eq!(key(&py), key(&y));
        Ok(())
    })
}

pub fn metric_symmetry(cases: u32) -> Result<(), String> {
    run(cases, (8usize..32, 2usize..7, any::<u64>()), |(n, d, seed)| {
        // Equal widths so that Procrustes joins in.
        let (x, y) = pair(n, d, d, seed);
        let mut metrics = all_metrics(n);
        metrics.push(MetricSpec::Procrustes);
        for spec in metrics.iter().filter(|s| s.is_symmetric()) {
            let xy = ok(spec.score(&x, &y))?;
            let yx = ok(spec.score(&y, &x))?;
            prop_assert!((xy - yx).abs() <= 1e-10, "{}: {} vs {}", spec, xy, yx);
        }
        Ok(())
    })
}

pub fn permutation_equivariance(cases: u32) -> Result<(), String> {
    run(cases, sizes(), |(n, dx, dy, seed)| {
        let (x, y) = pair(n, dx, dy, seed);
        let p = Permutation::random(n, &mut rng_from_seed(split_seed(seed, 2)));
        let (px, py) = (permuted_rows(&x, &p), permuted_rows(&y, &p));
        for spec in all_metrics(n) {
            let a = ok(spec.score(&x, &y))?;
            let b = ok(spec.score(&px, &py))?;
            prop_assert!(close(a, b, 1e-9), "{}: {} vs {}", spec, a, b);
        }
        Ok(())
    })
}

pub fn metric_bounds(cases: u32) -> Result<(), String> {
    run(cases, (sizes(), 0.0f64..1.0), |((n, dx, dy, seed), w)| {
        let (x, y0) = pair(n, dx, dx.max(dy), seed);
        let y = if dx == y0.d() { mixed(&x, &y0, w) } else { y0 };
        let k = k_for(n);
        for spec in [
            MetricSpec::cka_linear(),
            MetricSpec::cka_rbf(),
            MetricSpec::Rv,
            MetricSpec::mknn(k),
            MetricSpec::cycle_knn(k),
        ] {
            let s = ok(spec.score(&x, &y))?;
            prop_assert!((0.0..=1.0).contains(&s), "{}: {}", spec, s);
        }
        for spec in [MetricSpec::rsa(), MetricSpec::Rsa { distance: Distance::Euclidean }] {
            let s = ok(spec.score(&x, &y))?;
            prop_assert!((-1.0..=1.0).contains(&s), "{}: {}", spec, s);
        }
        Ok(())
    })
}

pub fn scale_invariance(cases: u32) -> Result<(), String> {
    run(cases, (sizes(), 0.01f64..100.0, 0.01f64..100.0), |((n, dx, dy, seed), cx, cy)| {
        // Two-column rows have correlation ±1 and rank ties that rounding breaks.
        let (x, y) = pair(n, dx.max(3), dy.max(3), seed);
        let (sx, sy) = (ok(x.scaled(cx))?, ok(y.scaled(cy))?);
        let k = k_for(n);
        for spec in [
            MetricSpec::cka_linear(),
            MetricSpec::Rv,
            MetricSpec::rsa(),
            MetricSpec::Mknn {
                k,
                distance: Distance::Cosine,
            },
        ] {
            let a = ok(spec.score(&x, &y))?;
            let b = ok(spec.score(&sx, &sy))?;
            prop_assert!(close(a, b, 1e-10), "{}: {} vs {}", spec, a, b);
        }
        Ok(())
    })
}

pub fn orthogonal_invariance(cases: u32) -> Result<(), String> {
    run(cases, (8usize..32, 1usize..7, 2usize..7, any::<u64>()), |(n, d, dy, seed)| {
        let (x, y) = pair(n, d, dy, seed);
        let q = random_orthogonal(d, split_seed(seed, 3));
        let xq = ok(EmbeddingMatrix::new(x.values().dot(&q)))?;
        let k = k_for(n);
        let mut metrics = vec![
            MetricSpec::cka_linear(),
            MetricSpec::cka_rbf(),
            MetricSpec::Rv,
            MetricSpec::Rsa {
                distance: Distance::Euclidean,
            },
            MetricSpec::mknn(k),
            MetricSpec::cycle_knn(k),
            MetricSpec::cknna(k),
        ];
        if dy == d {
            metrics.push(MetricSpec::Procrustes);
        }
        for spec in metrics {
            let a = ok(spec.score(&x, &y))?;
            let b = ok(spec.score(&xq, &y))?;
            prop_assert!((a - b).abs() <= 1e-8, "{}: {} vs {}", spec, a, b);
        }
        Ok(())
    })
}

pub fn knn_brute_force(cases: u32) -> Result<(), String> {
    run(cases, (2usize..=50, 1usize..6, any::<u64>(), any::<usize>()), |(n, d, seed, kr)| {
        let k = 1 + kr % (n - 1);
        let x = gaussian(n, d, seed);
        let sets = ok(knn_sets(&x, k, Distance::Euclidean))?;
        let oracle = brute_knn(&x, k);
        for (i, expected) in oracle.iter().enumerate() {
            let got = sets.neighbors(i);
            prop_assert_eq!(got.len(), k);
            prop_assert!(!got.contains(&i));
            let mut a = got.to_vec();
            let mut b = expected.clone();
            a.sort_unstable();
            b.sort_unstable();
            prop_assert_eq!(a, b, "anchor {}", i);
        }
        Ok(())
    })
}

pub fn gram_properties(cases: u32) -> Result<(), String> {
    run(cases, (2usize..24, 1usize..6, any::<u64>()), |(n, d, seed)| {
        let x = gaussian(n, d, seed);
        for kernel in [Kernel::Linear, Kernel::Rbf { bandwidth: Bandwidth::Median { multiplier: 1.0 } }] {
            let k = ok(gram(&x, &kernel))?;
            let m = k.values();
            let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
            for i in 0..n {
                for j in 0..n {
                    prop_assert!((m[[i, j]] - m[[j, i]]).abs() <= 1e-10 * scale);
                }
            }
            let eig = DMatrix::from_fn(n, n, |i, j| 0.5 * (m[[i, j]] + m[[j, i]])).symmetric_eigenvalues();
            let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert!(min >= -1e-9 * scale * n as f64, "min eigenvalue {}", min);
        }
        Ok(())
    })
}

fn alphas() -> impl Strategy<Value = f64> {
    prop::sample::select(vec![0.01, 0.05, 0.1, 0.2])
}

pub fn calibration_result_invariants(cases: u32) -> Result<(), String> {
    run(
        cases,
        (sizes(), 0.0f64..1.0, 1usize..80, alphas(), any::<bool>()),
        |((n, dx, _, seed), w, k_perm, alpha, identical)| {
            let (x, y0) = pair(n, dx, dx, seed);
            let y = if identical { x.clone() } else { mixed(&x, &y0, w) };
            let config = CalibrationConfig::new(k_perm, alpha, split_seed(seed, 4));
            let spec = MetricSpec::mknn(k_for(n));
            let r = match calibrate_scalar(&spec, &x, &y, &config) {
                Ok(r) => r,
                // The critical value may reach the maximum on tiny budgets.
                Err(repsim::Error::Degenerate(_)) => return Ok(()),
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            };
            let scaled = r.p_value * (k_perm + 1) as f64;
            prop_assert!((scaled - scaled.round()).abs() < 1e-9);
            prop_assert!((1.0..=(k_perm + 1) as f64).contains(&scaled.round()));
            prop_assert_eq!(r.null_scores.len(), k_perm);
            prop_assert!((0.0..=1.0).contains(&r.s_cal));
            prop_assert_eq!(r.s_cal == 1.0, r.s_obs == 1.0);
            Ok(())
        },
    )?;
    run(cases, (-1.0f64..1.0, -1.0f64..0.999), |(s, tau)| {
        let c = ok(calibrated_score(s, tau, Some(1.0)))?;
        prop_assert!((0.0..=1.0).contains(&c));
        prop_assert_eq!(ok(calibrated_score(1.0, tau, Some(1.0)))?, 1.0);
        prop_assert_eq!(c > 0.0, s > tau);
        prop_assert!(calibrated_score(s, 1.0, Some(1.0)).is_err());
        Ok(())
    })
}

pub fn gating_consistency(cases: u32) -> Result<(), String> {
    run(
        cases,
        (sizes(), 0.0f64..1.0, 1usize..100, alphas(), 0usize..3),
        |((n, dx, dy, seed), w, k_perm, alpha, which)| {
            let (x, y0) = pair(n, dx, dx.max(dy), seed);
            let y = if dx == y0.d() { mixed(&x, &y0, w * w) } else { y0 };
            let spec = [MetricSpec::cka_linear(), MetricSpec::mknn(k_for(n)), MetricSpec::rsa()][which].clone();
            let config = CalibrationConfig::new(k_perm, alpha, split_seed(seed, 5));
            let r = match calibrate_scalar(&spec, &x, &y, &config) {
                Ok(r) => r,
                Err(repsim::Error::Degenerate(_)) => return Ok(()),
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            };
            prop_assert_eq!(r.s_cal > 0.0, r.s_obs > r.tau_alpha);
            if r.s_cal > 0.0 {
                prop_assert!(r.p_value <= alpha, "s_cal {} but p {}", r.s_cal, r.p_value);
            }
            Ok(())
        },
    )
}

const MAPS: [fn(f64) -> f64; 4] = [f64::exp, |x| 3.0 * x + 1.0, |x| x + x * x * x, |x| (2.0 * x).atan()];

pub fn monotone_invariance(cases: u32) -> Result<(), String> {
    run(
        cases,
        (sizes(), 0.0f64..1.0, 1usize..100, 0usize..4, any::<bool>()),
        |((n, dx, _, seed), w, k_perm, which, knn)| {
            let (x, y0) = pair(n, dx, dx, seed);
            let y = mixed(&x, &y0, w);
            let inner = if knn { MetricSpec::mknn(k_for(n)) } else { MetricSpec::cka_linear() };
            let g = MAPS[which];
            let outer = Transformed {
                inner: inner.clone(),
                map: g,
                s_max: Some(g(1.0)),
            };
            let config = CalibrationConfig::new(k_perm, 0.05, split_seed(seed, 6));
            let base = match calibrate_scalar(&inner, &x, &y, &config) {
                Ok(r) => r,
                Err(repsim::Error::Degenerate(_)) => return Ok(()),
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            };
            let mapped = ok(calibrate_scalar(&outer, &x, &y, &config))?;
            prop_assert_eq!(base.p_value, mapped.p_value);
            let rank = |r: &CalibrationResult| {
                (
                    r.null_scores.iter().filter(|&&v| v < r.s_obs).count(),
                    r.null_scores.iter().filter(|&&v| v == r.s_obs).count(),
                )
            };
            prop_assert_eq!(rank(&base), rank(&mapped));
            Ok(())
        },
    )
}

pub fn replicate_order_independence(cases: u32) -> Result<(), String> {
    run(cases, (sizes(), 1usize..60, any::<u64>(), 1usize..4), |((n, dx, dy, seed), k_perm, order_seed, threads)| {
        let (x, y) = pair(n, dx, dy, seed);
        let spec = MetricSpec::cka_linear();
        let config = CalibrationConfig::new(k_perm, 0.1, split_seed(seed, 7));
        let reference = ok(calibrate_scalar(&spec, &x, &y, &config))?;

        let (a, b) = (ok(spec.prepare(&x))?, ok(spec.prepare(&y))?);
        let plan = config.plan(n);
        let order = Permutation::random(k_perm, &mut rng_from_seed(order_seed));
        let mut shuffled_eval = vec![f64::NAN; k_perm];
        for &k in order.as_slice() {
            let p = ok(plan.permutation(k))?;
            shuffled_eval[k] = ok(spec.score_prepared(&a, &b, Some(&p)))?;
        }
        prop_assert_eq!(&shuffled_eval, &reference.null_scores);
        prop_assert_eq!(&ok(null_scores(&spec, &a, &b, &plan))?, &reference.null_scores);

        let reordered: Vec<f64> = order.as_slice().iter().map(|&k| reference.null_scores[k]).collect();
        let r = ok(CalibrationResult::from_nulls(spec.name(), reference.s_obs, reordered, &config, spec.s_max()))?;
        prop_assert_eq!(r.tau_alpha, reference.tau_alpha);
        prop_assert_eq!(r.p_value, reference.p_value);
        prop_assert_eq!(r.s_cal, reference.s_cal);

        let pool = ok(rayon::ThreadPoolBuilder::new().num_threads(threads).build())?;
        let again = ok(pool.install(|| calibrate_scalar(&spec, &x, &y, &config)))?;
        prop_assert_eq!(again, reference);
        Ok(())
    })
}

fn stack(layers: usize, n: usize, d: usize, seed: u64) -> LayerStack {
    LayerStack::new((0..layers).map(|l| gaussian(n, d + l % 2, split_seed(seed, l as u64))).collect()).unwrap()
}

pub fn aggregate_invariants(cases: u32) -> Result<(), String> {
    let strategy = (1usize..4, 1usize..4, 8usize..20, 2usize..5, any::<u64>(), 0usize..3, any::<usize>(), 1usize..40);
    run(cases, strategy, |(la, lb, n, d, seed, which, kr, k_perm)| {
        let a = stack(la, n, d, split_seed(seed, 0));
        let b = stack(lb, n, d, split_seed(seed, 1));
        let cells = la * lb;
        let aggregator = [Aggregator::Max, Aggregator::Mean, Aggregator::TopKMean { k: 1 + kr % cells }][which];
        let spec = MetricSpec::cka_linear();
        let config = CalibrationConfig::new(k_perm, 0.1, split_seed(seed, 2));
        let r = ok(calibrate_aggregate(&spec, &a, &b, aggregator, &config))?;

        prop_assert_eq!(r.t_obs, ok(aggregator.apply(&r.score_matrix()))?);
        prop_assert_eq!(r.t_cal > 0.0, r.t_obs > r.tau_agg);
        if r.t_cal > 0.0 {
            prop_assert!(r.p_agg <= r.alpha);
        }
        if aggregator == Aggregator::Max {
            prop_assert!(r.scores.iter().flatten().all(|&s| r.t_obs >= s));
        }

        // Replicate k permutes every layer of b by the same permutation.
        let plan = config.plan(n);
        for k in [0, k_perm / 2, k_perm - 1] {
            let p = ok(plan.permutation(k))?;
            let pb = ok(LayerStack::new(b.iter().map(|l| permuted_rows(l, &p)).collect()))?;
            let s = ok(repsim::calibration::layer_similarity_matrix(&spec, &a, &pb))?;
            let t = ok(aggregator.apply(&s))?;
            prop_assert!(close(t, r.null_aggregates[k], 1e-10), "replicate {}: {} vs {}", k, t, r.null_aggregates[k]);
        }
        let layers = ok(layer_nulls(&spec, &a, &b, &config))?;
        prop_assert_eq!(layers.nulls.len(), k_perm);
        Ok(())
    })
}

pub fn adjustment_invariants(cases: u32) -> Result<(), String> {
    let strategy = prop::collection::vec(1u32..=1000, 1..40);
    run(cases, strategy, |raw| {
        let p: Vec<f64> = raw.iter().map(|&v| v as f64 / 1000.0).collect();
        let bh = ok(multiplicity_adjust(&p, AdjustMethod::Bh))?;
        let holm = ok(multiplicity_adjust(&p, AdjustMethod::Holm))?;
        for (i, &pi) in p.iter().enumerate() {
            prop_assert!(bh[i] >= pi - 1e-15 && bh[i] <= 1.0);
            prop_assert!(holm[i] >= bh[i] - 1e-15 && holm[i] <= 1.0);
            for (j, &pj) in p.iter().enumerate() {
                if pi <= pj {
                    prop_assert!(bh[i] <= bh[j] && holm[i] <= holm[j]);
                }
            }
        }
        if p.len() == 1 {
            prop_assert_eq!(&bh, &p);
            prop_assert_eq!(&holm, &p);
        }
        Ok(())
    })
}

pub fn baseline_invariants(cases: u32) -> Result<(), String> {
    let strategy = (3usize..5000, any::<usize>(), 0usize..2000, 0usize..2000, -1.0f64..1.0, 0.0f64..1.0, 2usize..500);
    run(cases, strategy, |(n, kr, dx, dy, mu, sigma, m)| {
        let k = 1 + kr % (n - 1);
        for b in [
            ok(NullBaseline::cross_cov_energy(n, dx, dy))?,
            ok(NullBaseline::mknn(n, k))?,
            ok(NullBaseline::anchor_intersection(n, k))?,
        ] {
            prop_assert!(b.expectation.is_finite() && b.expectation >= 0.0);
            if let Some(v) = b.variance {
                prop_assert!(v.is_finite() && v >= 0.0);
            }
        }
        prop_assert_eq!(ok(expected_cross_cov_energy(n, dx, dy))?, (dx * dy) as f64 / (n - 1) as f64);
        prop_assert!(ok(expected_mknn_null(n, k))? <= 1.0);
        let (mean, _) = ok(hypergeom_intersection_stats(n, k))?;
        prop_assert!(mean <= k as f64);
        let lo = ok(max_inflation_bound(mu, sigma, m))?;
        let hi = ok(max_inflation_bound(mu, sigma, m + 1))?;
        prop_assert!(lo >= mu && hi >= lo);
        prop_assert_eq!(ok(max_inflation_bound(mu, 0.0, m))?, mu);
        Ok(())
    })
}

const TINY_CONFIGS: [(&str, &str); 5] = [
    (
        "nulldrift",
        r#"{"n_list":[12],"d_list":[4,24],"metrics":["cka-linear","cka-rbf","rsa","mknn"],"k":3,"permutations":9,"trials":2}"#,
    ),
    (
        "guarantees",
        r#"{"sizes":[[12,6]],"metrics":["cka-linear","mknn"],"k":3,"alphas":[0.1,0.2],
            "signal":{"n":12,"d":6,"alpha":0.1,"strengths":[0.5,2.0],"noise_levels":[1.0],"ranks":[2]},
            "permutations":9,"trials":3}"#,
    ),
    ("depth", r#"{"l_list":[1,2],"n":12,"d_over_n":1,"permutations":9,"trials":2}"#),
    ("budget", r#"{"k_list":[5,10],"n":12,"d":8,"seeds":3}"#),
    (
        "variants",
        r#"{"n":12,"d_over_n":[0.5,2.0],"metrics":["cka-linear","mknn"],"k":3,"permutations":9,"trials":2}"#,
    ),
];

pub fn table_invariants(cases: u32) -> Result<(), String> {
    run(cases, (0usize..TINY_CONFIGS.len(), any::<u64>()), |(which, seed)| {
        let (name, json) = TINY_CONFIGS[which];
        let mut experiment = ok(Experiment::from_json(name, json))?;
        experiment.set_seed(seed);
        let first = ok(experiment.run())?;
        let second = ok(experiment.run())?;
        prop_assert_eq!(&first, &second);
        prop_assert_eq!(ok(first.to_csv_string())?, ok(second.to_csv_string())?);
        prop_assert!(first.n_rows() > 0);
        for column in &first.columns {
            let ColumnValues::Number(values) = &column.values else { continue };
            prop_assert_eq!(values.len(), first.n_rows());
            for &v in values {
                prop_assert!(v.is_finite(), "{} has {}", column.name, v);
                if column.name.ends_with("rate") {
                    prop_assert!((0.0..=1.0).contains(&v), "{} = {}", column.name, v);
                }
                if column.name == "std" || column.name.ends_with("_std") {
                    prop_assert!(v >= 0.0, "{} = {}", column.name, v);
                }
            }
        }
        Ok(())
    })
}

fn noise_family() -> impl Strategy<Value = NoiseFamily> {
    prop_oneof![
        Just(NoiseFamily::Gaussian),
        (2.5f64..10.0).prop_map(|nu| NoiseFamily::StudentT { nu }),
        Just(NoiseFamily::Laplace),
        (1usize..4, 0.0f64..6.0).prop_map(|(components, separation)| NoiseFamily::GaussianMixture {
            components,
            separation
        }),
    ]
}

pub fn dataset_invariants(cases: u32) -> Result<(), String> {
    run(cases, (16usize..40, 1usize..6, noise_family(), any::<u64>()), |(n, d, noise, seed)| {
        let spec = DatasetSpec::null(n, d, d + 1, seed).with_noise(noise);
        let (x, y) = ok(generate_dataset(&spec))?;
        prop_assert_eq!((x.n(), x.d(), y.n(), y.d()), (n, d, n, d + 1));
        prop_assert_eq!(ok(generate_dataset(&spec))?, (x, y));

        let h1 = DatasetSpec::signal(n, d, d, d, 1.0, 0.0, seed).with_noise(noise);
        let (x, y) = ok(generate_dataset(&h1))?;
        let r = ok(calibrate_scalar(&MetricSpec::cka_linear(), &x, &y, &CalibrationConfig::new(19, 0.05, seed)))?;
        prop_assert!(r.s_cal >= 0.99, "s_cal {}", r.s_cal);
        Ok(())
    })
}

fn finite_matrix() -> impl Strategy<Value = EmbeddingMatrix> {
    (2usize..8, 1usize..6).prop_flat_map(|(n, d)| {
        let value = prop_oneof![
            any::<f64>().prop_filter("finite", |v| v.is_finite()),
            Just(0.0),
            Just(-0.0),
            Just(f64::MIN_POSITIVE / 4.0),
            -1e6f64..1e6,
        ];
        prop::collection::vec(value, n * d).prop_map(move |v| EmbeddingMatrix::from_rows(n, d, v).unwrap())
    })
}

fn same_bits(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> bool {
    a.n() == b.n() && a.d() == b.d() && a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits())
}

pub fn encoding_round_trip(cases: u32) -> Result<(), String> {
    run(cases, finite_matrix(), |m| {
        let path = Path::new("generated");
        let raw = encode_rawbin(&m);
        prop_assert_eq!(raw.len(), 24 + 8 * m.n() * m.d());
        let back = ok(parse_rawbin(path, &raw))?;
        prop_assert!(same_bits(&back, &m));
        prop_assert_eq!(encode_rawbin(&back), raw);

        let npy = encode_npy(&m);
        let back = ok(parse_npy(path, &npy))?;
        prop_assert!(same_bits(&back, &m));
        prop_assert_eq!(encode_npy(&back), npy);

        let back = ok(parse_csv(path, &encode_csv(&m)))?;
        prop_assert!(same_bits(&back, &m));
        Ok(())
    })
}

pub fn report_round_trip(cases: u32) -> Result<(), String> {
    run(cases, (sizes(), 1usize..30, alphas(), any::<bool>()), |((n, dx, dy, seed), k_perm, alpha, aggregate)| {
        let config = CalibrationConfig::new(k_perm, alpha, seed);
        let spec = MetricSpec::cka_linear();
        let (inputs, result) = if aggregate {
            let (a, b) = (stack(2, n, dx, seed), stack(3, n, dy, !seed));
            let r = ok(calibrate_aggregate(&spec, &a, &b, Aggregator::Max, &config))?;
            (
                vec![InputInfo::stack("a", "a", &a), InputInfo::stack("b", "b", &b)],
                ReportResult::Aggregate(r),
            )
        } else {
            let (x, y) = pair(n, dx, dy, seed);
            let r = ok(calibrate_scalar(&spec, &x, &y, &config))?;
            (
                vec![InputInfo::matrix("x", "x.rscm", &x), InputInfo::matrix("y", "y.csv", &y)],
                ReportResult::Scalar(r),
            )
        };
        let report = RunReport::new(inputs, spec, result, 0.25);
        let json = ok(report.to_json_string())?;
        prop_assert_eq!(&ok(RunReport::from_json_str(&json))?, &report);
        let slim = report.without_nulls();
        prop_assert_eq!(&ok(RunReport::from_json_str(&ok(slim.to_json_string())?))?, &slim);
        Ok(())
    })
}
