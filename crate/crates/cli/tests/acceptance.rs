//! Acceptance suite. Runs every criterion at its stated tolerance, prints one
//! PASS/FAIL line per criterion and exits non-zero if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;
#[path = "../../core/tests/props/mod.rs"]
mod props;

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rayon::prelude::*;
use serde_json::Value;
use tempfile::TempDir;

use common::{gaussian, mean, std_dev};
use repsim::calibration::null_scores;
use repsim::io::{save_stack, MatrixFormat};
use repsim::metrics::{knn_sets, Distance};
use repsim::oracles::{
    exact_p_value, exact_permutation_null, expected_cross_cov_energy, expected_mknn_null,
    hypergeom_intersection_stats,
};
use repsim::permutation::{rng_from_seed, split_seed};
use repsim::synthlab::{
    generate_dataset, null_stack, type_one_limit, DatasetSpec, DepthConfig, Experiment, ExperimentTable,
    GuaranteesConfig, NoiseFamily, NullDriftConfig,
};
use repsim::{
    calibrate_aggregate, calibrate_scalar, center, Aggregator, CalibrationConfig, EmbeddingMatrix, LayerStack,
    MetricSpec, PermutationPlan, Similarity,
};

struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }

    fn all(parts: Vec<Verdict>) -> Self {
        Self {
            passed: parts.iter().all(|p| p.passed),
            detail: parts.into_iter().map(|p| p.detail).collect::<Vec<_>>().join("; "),
        }
    }
}

fn pass_fail(passed: bool) -> &'static str {
    if passed {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Prints sub-check lines of an experiment and folds them into one verdict.
fn experiment_verdict(experiment: &Experiment, table: &ExperimentTable) -> Verdict {
    let checks = experiment.checks(table);
    for c in &checks {
        println!("    {}: {} {}", c.name, pass_fail(c.passed), c.detail);
    }
    Verdict::new(checks.iter().all(|c| c.passed), format!("{} checks", checks.len()))
}

fn relative_error(observed: f64, expected: f64) -> f64 {
    (observed - expected).abs() / expected
}

fn cross_cov_energy(x: &EmbeddingMatrix, y: &EmbeddingMatrix) -> f64 {
    let c = center(x).values().t().dot(center(y).values()) / (x.n() - 1) as f64;
    c.iter().map(|v| v * v).sum()
}

fn width_law() -> Verdict {
    let parts = [(256, 128, 128), (512, 512, 512), (256, 1024, 256)]
        .into_iter()
        .enumerate()
        .map(|(cell, (n, dx, dy))| {
            let energies: Vec<f64> = (0..200u64)
                .into_par_iter()
                .map(|t| {
                    let spec = DatasetSpec::null(n, dx, dy, split_seed(split_seed(101, cell as u64), t));
                    let (x, y) = generate_dataset(&spec).unwrap();
                    cross_cov_energy(&x, &y)
                })
                .collect();
            let expected = expected_cross_cov_energy(n, dx, dy).unwrap();
            let err = relative_error(mean(&energies), expected);
            Verdict::new(err <= 0.02, format!("({n},{dx},{dy}) rel err {err:.4}"))
        })
        .collect();
    Verdict::all(parts)
}

fn mknn_law() -> Verdict {
    let parts = [(128, 5), (1024, 10), (1024, 50)]
        .into_iter()
        .enumerate()
        .map(|(cell, (n, k))| {
            let metric = MetricSpec::mknn(k);
            let scores: Vec<f64> = (0..200u64)
                .into_par_iter()
                .map(|t| {
                    let spec = DatasetSpec::null(n, 64, 64, split_seed(split_seed(202, cell as u64), t));
                    let (x, y) = generate_dataset(&spec).unwrap();
                    metric.score(&x, &y).unwrap()
                })
                .collect();
            let err = relative_error(mean(&scores), expected_mknn_null(n, k).unwrap());
            Verdict::new(err <= 0.05, format!("(n={n},k={k}) rel err {err:.4}"))
        })
        .collect();
    Verdict::all(parts)
}

fn null_drift() -> Verdict {
    let config = NullDriftConfig {
        permutations: 99,
        trials: 100,
        seed: 303,
        ..NullDriftConfig::default()
    };
    let experiment = Experiment::Nulldrift(config);
    let table = experiment.run().unwrap();
    experiment_verdict(&experiment, &table)
}

fn type_one() -> Verdict {
    let config = GuaranteesConfig {
        sizes: vec![(256, 512)],
        metrics: vec!["cka-linear".into(), "mknn".into()],
        alphas: vec![0.01, 0.05, 0.1],
        signal: None,
        permutations: 199,
        trials: 500,
        seed: 404,
        ..GuaranteesConfig::default()
    };
    let table = Experiment::Guarantees(config).run().unwrap();
    let (metric, alpha, rate) = (
        table.texts("metric").unwrap(),
        table.numbers("alpha").unwrap(),
        table.numbers("rejection_rate").unwrap(),
    );
    let parts = (0..table.n_rows())
        .map(|i| {
            let limit = type_one_limit(alpha[i], 500);
            Verdict::new(
                rate[i] <= limit,
                format!("{} α={}: {:.3} ≤ {:.3}", metric[i], alpha[i], rate[i], limit),
            )
        })
        .collect();
    Verdict::all(parts)
}

fn power() -> Verdict {
    let (n, d, trials) = (256, 512, 100u64);
    let metric = MetricSpec::cka_linear();
    let mut parts: Vec<Verdict> = [2.0, 3.0]
        .into_iter()
        .map(|strength| {
            let detected = (0..trials)
                .into_par_iter()
                .filter(|&t| {
                    let seed = split_seed(505, t);
                    let spec = DatasetSpec::signal(n, d, d, 5, strength, 1.0, split_seed(seed, 0));
                    let (x, y) = generate_dataset(&spec).unwrap();
                    let config = CalibrationConfig::new(199, 0.05, split_seed(seed, 1));
                    calibrate_scalar(&metric, &x, &y, &config).unwrap().is_significant()
                })
                .count();
            let rate = detected as f64 / trials as f64;
            Verdict::new(rate >= 0.95, format!("detection at s={strength}: {rate:.2}"))
        })
        .collect();
    let preserved: Vec<f64> = (0..20u64)
        .map(|t| {
            let spec = DatasetSpec::signal(n, 32, 32, 32, 1.0, 0.0, split_seed(506, t));
            let (x, y) = generate_dataset(&spec).unwrap();
            let config = CalibrationConfig::new(199, 0.05, split_seed(507, t));
            calibrate_scalar(&metric, &x, &y, &config).unwrap().s_cal
        })
        .collect();
    let worst = preserved.iter().copied().fold(f64::INFINITY, f64::min);
    parts.push(Verdict::new(worst >= 0.99, format!("min s_cal at zero noise, full rank: {worst:.6}")));
    Verdict::all(parts)
}

fn depth() -> (Verdict, ExperimentTable) {
    let config = DepthConfig {
        permutations: 99,
        trials: 100,
        seed: 606,
        ..DepthConfig::default()
    };
    let experiment = Experiment::Depth(config);
    let table = experiment.run().unwrap();
    (experiment_verdict(&experiment, &table), table)
}

fn exactness() -> Verdict {
    let mut parts = Vec::new();
    for (mi, metric) in [MetricSpec::cka_linear(), MetricSpec::mknn(2)].into_iter().enumerate() {
        let mut worst = 0.0f64;
        for inst in 0..5u64 {
            let seed = split_seed(split_seed(707, mi as u64), inst);
            let (x, y) = (gaussian(6, 3, split_seed(seed, 0)), gaussian(6, 3, split_seed(seed, 1)));
            let exact = exact_permutation_null(&metric, &x, &y).unwrap();
            let (a, b) = (metric.prepare(&x).unwrap(), metric.prepare(&y).unwrap());
            let sampled = null_scores(&metric, &a, &b, &PermutationPlan::new(split_seed(seed, 2), 500, 6)).unwrap();
            let mu = mean(&exact);
            let sd = (exact.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / exact.len() as f64).sqrt();
            let z = (mean(&sampled) - mu).abs() / (sd / 500f64.sqrt());
            worst = worst.max(z);
        }
        parts.push(Verdict::new(worst <= 3.0, format!("{metric}: max |z| {worst:.2}")));
    }

    let alpha = 0.05;
    let mut disagreements = 0;
    for inst in 0..50u64 {
        let seed = split_seed(708, inst);
        let x = gaussian(6, 3, split_seed(seed, 0));
        // Half the instances carry signal so both gating outcomes occur.
        let noise = gaussian(6, 3, split_seed(seed, 1));
        let y = if inst % 2 == 0 {
            noise
        } else {
            EmbeddingMatrix::new(x.values() + &(noise.values() * 0.2)).unwrap()
        };
        let metric = MetricSpec::cka_linear();
        let exact = exact_p_value(&exact_permutation_null(&metric, &x, &y).unwrap()).unwrap();
        let config = CalibrationConfig::new(5000, alpha, split_seed(seed, 2));
        let sampled = calibrate_scalar(&metric, &x, &y, &config).unwrap().p_value;
        disagreements += usize::from((exact <= alpha) != (sampled <= alpha));
    }
    parts.push(Verdict::new(disagreements == 0, format!("gating disagreements {disagreements}/50")));
    Verdict::all(parts)
}

/// Rejection rate of the aggregate p-value under independent stacks.
fn aggregate_validity() -> Verdict {
    let trials = 500u64;
    let p: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let seed = split_seed(808, t);
            let a = null_stack(2, 32, 32, split_seed(seed, 0)).unwrap();
            let b = null_stack(3, 32, 32, split_seed(seed, 1)).unwrap();
            let config = CalibrationConfig::new(99, 0.05, split_seed(seed, 2));
            calibrate_aggregate(&MetricSpec::cka_linear(), &a, &b, Aggregator::Max, &config).unwrap().p_agg
        })
        .collect();
    let parts = [0.01, 0.05, 0.1]
        .into_iter()
        .map(|alpha| {
            let rate = p.iter().filter(|&&v| v <= alpha).count() as f64 / trials as f64;
            let limit = type_one_limit(alpha, trials as usize);
            Verdict::new(rate <= limit, format!("aggregate α={alpha}: {rate:.3} ≤ {limit:.3}"))
        })
        .collect();
    Verdict::all(parts)
}

/// Per-anchor neighbor-set intersections against the hypergeometric moments.
fn anchor_intersections() -> Verdict {
    let (n, k, trials) = (128, 10, 200u64);
    let (mu, var) = hypergeom_intersection_stats(n, k).unwrap();
    let per_trial: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let (x, y) = generate_dataset(&DatasetSpec::null(n, 16, 16, split_seed(809, t))).unwrap();
            let (nx, ny) = (knn_sets(&x, k, Distance::Euclidean).unwrap(), knn_sets(&y, k, Distance::Euclidean).unwrap());
            let sizes: Vec<f64> = (0..n)
                .map(|i| nx.neighbors(i).iter().filter(|j| ny.neighbors(i).contains(j)).count() as f64)
                .collect();
            // Both moments are taken about the known mean, so each trial is
            // unbiased regardless of dependence between anchors.
            (mean(&sizes), sizes.iter().map(|s| (s - mu).powi(2)).sum::<f64>() / n as f64)
        })
        .collect();
    let first: Vec<f64> = per_trial.iter().map(|p| p.0).collect();
    let second: Vec<f64> = per_trial.iter().map(|p| p.1).collect();
    let se = |v: &[f64]| std_dev(v) / (v.len() as f64).sqrt();
    let zm = (mean(&first) - mu).abs() / se(&first);
    let zv = (mean(&second) - var).abs() / se(&second);
    Verdict::new(zm <= 3.0 && zv <= 3.0, format!("anchor intersection |z| mean {zm:.2}, variance {zv:.2}"))
}

/// Raw max growth over M and the maximal-inequality bound, from the depth table.
fn raw_max_growth(table: &ExperimentTable) -> Verdict {
    let (m, raw, bound) = (
        table.numbers("comparisons").unwrap(),
        table.numbers("raw_mean").unwrap(),
        table.numbers("inflation_bound").unwrap(),
    );
    let mut order: Vec<usize> = (0..m.len()).collect();
    order.sort_by(|&a, &b| m[a].total_cmp(&m[b]));
    let nondecreasing = order.windows(2).all(|w| raw[w[1]] >= raw[w[0]]);
    let bounded = (0..m.len()).filter(|&i| m[i] >= 2.0).all(|i| raw[i] <= bound[i]);
    Verdict::new(nondecreasing && bounded, format!("raw max nondecreasing {nondecreasing}, within bound {bounded}"))
}

fn property_suite(depth_table: &ExperimentTable) -> Verdict {
    let mut parts = Vec::new();
    for (name, check) in props::CHECKS {
        let result = check(100);
        println!("    {name}: {}", pass_fail(result.is_ok()));
        if let Err(e) = &result {
            println!("      {e}");
        }
        parts.push(Verdict::new(result.is_ok(), ""));
    }
    let failed = parts.iter().filter(|p| !p.passed).count();
    let mut summary = vec![Verdict::new(failed == 0, format!("{} properties × 100 cases, {failed} failed", parts.len()))];
    for v in [aggregate_validity(), anchor_intersections(), raw_max_growth(depth_table)] {
        println!("    {}: {}", v.detail, pass_fail(v.passed));
        summary.push(v);
    }
    Verdict::all(summary)
}

fn repsim(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_repsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

/// Layers `Z W_ℓ + σ_ℓ E_ℓ` over a shared latent `Z`, widening with depth.
fn pseudo_model(z: &EmbeddingMatrix, layers: usize, seed: u64) -> LayerStack {
    let stack = (0..layers)
        .map(|l| {
            let s = split_seed(seed, l as u64);
            let d = 16 + 8 * l;
            let w = gaussian(z.d() + 1, d, split_seed(s, 0));
            let w = w.values().slice(ndarray::s![..z.d(), ..]).to_owned();
            let noise = NoiseFamily::student_t().sample(z.n(), d, &mut rng_from_seed(split_seed(s, 1)));
            EmbeddingMatrix::new(z.values().dot(&w) + noise * (0.5 + l as f64)).unwrap()
        })
        .collect();
    LayerStack::new(stack).unwrap()
}

fn schema() -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schema/run_report.schema.json");
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

fn finite(v: &Value) -> bool {
    match v {
        Value::Number(n) => n.as_f64().is_some_and(f64::is_finite),
        Value::Array(a) => a.iter().all(finite),
        Value::Object(o) => o.values().all(finite),
        _ => true,
    }
}

fn pseudo_models() -> Verdict {
    let dir = TempDir::new().unwrap();
    let n = 96;
    let z = gaussian(n, 8, 909);
    let stacks = [
        ("a", pseudo_model(&z, 4, 910), MatrixFormat::Rawbin),
        ("b", pseudo_model(&z, 3, 911), MatrixFormat::Npy),
        ("c", pseudo_model(&gaussian(n, 8, 912), 3, 913), MatrixFormat::Csv),
    ];
    for (name, stack, format) in &stacks {
        save_stack(dir.path().join(name), stack, *format).unwrap();
    }
    let validator = schema();
    let mut parts = Vec::new();
    for (pair, metric, aggregator) in [
        (("a", "b"), "cka-linear", "max"),
        (("a", "c"), "cka-linear", "max"),
        (("a", "b"), "mknn", "mean"),
        (("a", "c"), "rsa", "topk"),
    ] {
        let (pa, pb) = (dir.path().join(pair.0), dir.path().join(pair.1));
        let args = [
            "calibrate-agg",
            "--stack-a",
            pa.to_str().unwrap(),
            "--stack-b",
            pb.to_str().unwrap(),
            "--metric",
            metric,
            "--aggregator",
            aggregator,
            "--topk",
            "3",
            "--permutations",
            "199",
            "--seed",
            "914",
        ];
        let label = format!("{}~{} {metric}/{aggregator}", pair.0, pair.1);
        let first = repsim(&args);
        let second = repsim(&args);
        if !first.status.success() {
            parts.push(Verdict::new(false, format!("{label}: {}", String::from_utf8_lossy(&first.stderr))));
            continue;
        }
        let parse = |o: &std::process::Output| {
            let mut v: Value = serde_json::from_slice(&o.stdout).unwrap();
            v.as_object_mut().unwrap().remove("wall_clock_seconds");
            v
        };
        let raw: Value = serde_json::from_slice(&first.stdout).unwrap();
        let (v, again) = (parse(&first), parse(&second));
        let r = &v["result"];
        let scores: Vec<Vec<f64>> = serde_json::from_value(r["scores"].clone()).unwrap();
        let nulls = r["null_aggregates"].as_array().unwrap().len();
        let (t_obs, tau, p, t_cal) = (
            r["t_obs"].as_f64().unwrap(),
            r["tau_agg"].as_f64().unwrap(),
            r["p_agg"].as_f64().unwrap(),
            r["t_cal"].as_f64().unwrap(),
        );
        let format_ok = validator.is_valid(&raw)
            && finite(&raw)
            && scores.len() == stacks.iter().find(|s| s.0 == pair.0).unwrap().1.len()
            && nulls == 199
            && ((p * 200.0).round() - p * 200.0).abs() < 1e-9;
        let deterministic = v == again;
        let gating = ((t_cal > 0.0) == (t_obs > tau)) && (t_cal == 0.0 || p <= 0.05);
        parts.push(Verdict::new(
            format_ok && deterministic && gating,
            format!("{label}: p={p:.3} T_cal={t_cal:.3} format {format_ok} deterministic {deterministic} gating {gating}"),
        ));
    }
    Verdict::all(parts)
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut all = true;
    let mut run = |id: usize, title: &str, f: &mut dyn FnMut() -> Verdict| {
        let t = Instant::now();
        let v = f();
        println!(
            "criterion {id} ({title}): {} [{}] {:.1}s",
            pass_fail(v.passed),
            v.detail,
            t.elapsed().as_secs_f64()
        );
        all &= v.passed;
    };
    run(1, "width-law oracle", &mut width_law);
    run(2, "mKNN null law", &mut mknn_law);
    run(3, "null-drift collapse", &mut null_drift);
    run(4, "type-I control", &mut type_one);
    run(5, "power and signal preservation", &mut power);
    let mut depth_table = None;
    run(6, "depth confounder", &mut || {
        let (v, table) = depth();
        depth_table = Some(table);
        v
    });
    run(7, "exactness on tiny instances", &mut exactness);
    let table = depth_table.expect("criterion 6 ran");
    run(8, "property suite", &mut || property_suite(&table));
    run(9, "pseudo-model stacks through calibrate-agg", &mut pseudo_models);
    println!("acceptance: {} in {:.1}s", pass_fail(all), started.elapsed().as_secs_f64());
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
