//! Experiment runners: null drift, Type-I/power, depth, permutation budget and
//! calibration variants.
//!
//! Every runner derives one seed per (cell, trial) from its master seed, so a
//! table depends only on its configuration.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::table::{Cell, CheckOutcome, ExperimentTable, TableMetadata};
use super::{generate_dataset, null_stack, DatasetSpec, NoiseFamily};
use crate::calibration::{
    aggregate_from_nulls, critical_value, layer_nulls, null_scores, Aggregator, CalibrationConfig,
    CalibrationResult,
};
use crate::error::{Error, Result};
use crate::matrix::EmbeddingMatrix;
use crate::metrics::{MetricParams, MetricSpec, Similarity};
use crate::oracles::{expected_mknn_null, max_inflation_bound};
use crate::permutation::split_seed;

/// Sample mean and standard deviation (`n − 1` denominator; zero for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let m = values.len();
    if m == 0 {
        return (0.0, 0.0);
    }
    // Shifting by the first value keeps the mean of a constant series exact.
    let shift = values[0];
    let offset = values.iter().map(|v| v - shift).sum::<f64>() / m as f64;
    let mean = shift + offset;
    if m < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - shift - offset).powi(2)).sum::<f64>() / (m - 1) as f64;
    (mean, var.sqrt())
}

fn cell_seed(seed: u64, cell: usize, trial: usize) -> u64 {
    split_seed(split_seed(seed, cell as u64), trial as u64)
}

fn parse_metrics(names: &[String], k: usize) -> Result<Vec<MetricSpec>> {
    if names.is_empty() {
        return Err(Error::param("at least one metric is required"));
    }
    let params = MetricParams {
        k: Some(k),
        ..Default::default()
    };
    names.iter().map(|n| MetricSpec::from_name(n, &params)).collect()
}

fn non_empty<T>(v: &[T], what: &str) -> Result<()> {
    if v.is_empty() {
        Err(Error::param(format!("{what} must not be empty")))
    } else {
        Ok(())
    }
}

fn check_counts(permutations: usize, alpha: f64, trials: usize) -> Result<()> {
    CalibrationConfig::new(permutations, alpha, 0).validate()?;
    if trials == 0 {
        return Err(Error::param("at least one trial is required"));
    }
    Ok(())
}

fn to_json<T: Serialize>(config: &T) -> serde_json::Value {
    serde_json::to_value(config).expect("configs serialize")
}

/// Observed score and its nulls for one pair.
fn observe(metric: &MetricSpec, x: &EmbeddingMatrix, y: &EmbeddingMatrix, permutations: usize, seed: u64) -> Result<(f64, Vec<f64>)> {
    let a = metric.prepare(x)?;
    let b = metric.prepare(y)?;
    let s_obs = metric.score_prepared(&a, &b, None)?;
    let plan = CalibrationConfig::new(permutations, 0.05, seed).plan(x.n());
    Ok((s_obs, null_scores(metric, &a, &b, &plan)?))
}

/// Aggregates of one cell of repeated calibrations.
struct CellStats {
    raw: (f64, f64),
    cal: (f64, f64),
    rejection_rate: f64,
}

fn cell_stats(results: &[CalibrationResult]) -> CellStats {
    let raw: Vec<f64> = results.iter().map(|r| r.s_obs).collect();
    let cal: Vec<f64> = results.iter().map(|r| r.s_cal).collect();
    let rejected = results.iter().filter(|r| r.is_significant()).count();
    CellStats {
        raw: mean_std(&raw),
        cal: mean_std(&cal),
        rejection_rate: rejected as f64 / results.len().max(1) as f64,
    }
}

/// Width sweep under the null: raw vs calibrated scores over an `n × d` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NullDriftConfig {
    pub n_list: Vec<usize>,
    pub d_list: Vec<usize>,
    pub noise: NoiseFamily,
    pub metrics: Vec<String>,
    /// Neighborhood size for neighborhood metrics.
    pub k: usize,
    pub permutations: usize,
    pub alpha: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for NullDriftConfig {
    fn default() -> Self {
        Self {
            n_list: vec![128, 256, 512],
            d_list: vec![128, 512, 1024],
            noise: NoiseFamily::Gaussian,
            metrics: vec!["cka-linear".into(), "cka-rbf".into(), "rsa".into(), "mknn".into()],
            k: MetricSpec::DEFAULT_K,
            permutations: 99,
            alpha: 0.05,
            trials: 200,
            seed: 0,
        }
    }
}

pub const NULL_DRIFT_COLUMNS: &[&str] = &[
    "metric",
    "n",
    "d",
    "d_over_n",
    "trials",
    "raw_mean",
    "raw_std",
    "cal_mean",
    "cal_std",
    "rejection_rate",
];

pub fn run_null_drift(config: &NullDriftConfig) -> Result<ExperimentTable> {
    non_empty(&config.n_list, "n_list")?;
    non_empty(&config.d_list, "d_list")?;
    check_counts(config.permutations, config.alpha, config.trials)?;
    config.noise.validate()?;
    let metrics = parse_metrics(&config.metrics, config.k)?;
    let cal = CalibrationConfig::new(config.permutations, config.alpha, 0);

    let mut rows = Vec::new();
    let cells = config.n_list.iter().flat_map(|&n| config.d_list.iter().map(move |&d| (n, d)));
    for (cell, (n, d)) in cells.enumerate() {
        let per_trial = (0..config.trials)
            .into_par_iter()
            .map(|t| {
                let seed = cell_seed(config.seed, cell, t);
                let spec = DatasetSpec::null(n, d, d, split_seed(seed, 0)).with_noise(config.noise);
                let (x, y) = generate_dataset(&spec)?;
                metrics
                    .iter()
                    .map(|m| {
                        let (s, nulls) = observe(m, &x, &y, config.permutations, split_seed(seed, 1))?;
                        CalibrationResult::from_nulls(m.name(), s, nulls, &cal, m.s_max())
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        for (mi, metric) in metrics.iter().enumerate() {
            let results: Vec<CalibrationResult> = per_trial.iter().map(|r| r[mi].clone()).collect();
            let s = cell_stats(&results);
            rows.push(vec![
                Cell::from(metric.family_name()),
                n.into(),
                d.into(),
                (d as f64 / n as f64).into(),
                config.trials.into(),
                s.raw.0.into(),
                s.raw.1.into(),
                s.cal.0.into(),
                s.cal.1.into(),
                s.rejection_rate.into(),
            ]);
        }
    }
    let meta = TableMetadata::new(
        "nulldrift",
        config.seed,
        vec![config.permutations],
        config.alpha,
        config.trials,
        to_json(config),
    );
    ExperimentTable::from_rows(meta, NULL_DRIFT_COLUMNS, rows)
}

fn col<'a>(table: &'a ExperimentTable, name: &str) -> &'a [f64] {
    table.numbers(name).unwrap_or(&[])
}

pub fn check_null_drift(config: &NullDriftConfig, table: &ExperimentTable) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let cal = col(table, "cal_mean");
    let worst = cal.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.push(CheckOutcome::new(
        "calibrated H0 mean ≤ 0.01",
        cal.iter().all(|&c| c <= 0.01),
        format!("max {worst:.4}"),
    ));

    let (ns, ds, raw) = (col(table, "n"), col(table, "d"), col(table, "raw_mean"));
    let cka = table.rows_where("metric", "cka-linear");
    if !cka.is_empty() {
        let mut increasing = true;
        for &n in &config.n_list {
            let mut cells: Vec<(f64, f64)> = cka
                .iter()
                .filter(|&&i| ns[i] == n as f64)
                .map(|&i| (ds[i], raw[i]))
                .collect();
            cells.sort_by(|a, b| a.0.total_cmp(&b.0));
            increasing &= cells.windows(2).all(|w| w[1].1 > w[0].1);
        }
        out.push(CheckOutcome::new(
            "raw cka-linear mean increases with d/n",
            increasing,
            "",
        ));
        let high: Vec<usize> = cka.iter().copied().filter(|&i| ds[i] >= 8.0 * ns[i]).collect();
        if !high.is_empty() {
            let low = high.iter().map(|&i| raw[i]).fold(f64::INFINITY, f64::min);
            out.push(CheckOutcome::new(
                "raw cka-linear mean at d/n ≥ 8 exceeds 0.3",
                low > 0.3,
                format!("min {low:.4}"),
            ));
        }
    }

    let mknn = table.rows_where("metric", "mknn");
    if !mknn.is_empty() {
        let mut worst = 0.0f64;
        for &i in &mknn {
            let expected = expected_mknn_null(ns[i] as usize, config.k).unwrap_or(f64::NAN);
            worst = worst.max((raw[i] - expected).abs() / expected);
        }
        out.push(CheckOutcome::new(
            "mknn raw mean within 10% of k/(n−1)",
            worst <= 0.10,
            format!("max relative error {worst:.4}"),
        ));
    }
    out
}

/// Signal grid of the power study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalGrid {
    pub n: usize,
    pub d: usize,
    pub alpha: f64,
    pub strengths: Vec<f64>,
    pub noise_levels: Vec<f64>,
    pub ranks: Vec<usize>,
}

impl Default for SignalGrid {
    fn default() -> Self {
        Self {
            n: 256,
            d: 64,
            alpha: 0.05,
            strengths: vec![0.0, 0.25, 0.5, 1.0, 2.0, 3.0],
            noise_levels: vec![1.0, 100.0],
            ranks: vec![5],
        }
    }
}

/// Type-I error under the null and detection rates under planted signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuaranteesConfig {
    /// `(n, d)` pairs for the null runs.
    pub sizes: Vec<(usize, usize)>,
    pub metrics: Vec<String>,
    pub k: usize,
    pub alphas: Vec<f64>,
    pub noise: NoiseFamily,
    pub signal: Option<SignalGrid>,
    pub permutations: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for GuaranteesConfig {
    fn default() -> Self {
        Self {
            sizes: vec![(256, 512)],
            metrics: vec!["cka-linear".into(), "mknn".into()],
            k: MetricSpec::DEFAULT_K,
            alphas: vec![0.01, 0.05, 0.1],
            noise: NoiseFamily::Gaussian,
            signal: Some(SignalGrid::default()),
            permutations: 199,
            trials: 200,
            seed: 0,
        }
    }
}

pub const GUARANTEES_COLUMNS: &[&str] = &[
    "hypothesis",
    "metric",
    "n",
    "d",
    "alpha",
    "signal_strength",
    "noise_level",
    "rank",
    "trials",
    "rejection_rate",
    "raw_mean",
    "cal_mean",
    "cal_std",
];

pub fn run_guarantees(config: &GuaranteesConfig) -> Result<ExperimentTable> {
    non_empty(&config.sizes, "sizes")?;
    non_empty(&config.alphas, "alphas")?;
    for &a in &config.alphas {
        check_counts(config.permutations, a, config.trials)?;
    }
    config.noise.validate()?;
    let metrics = parse_metrics(&config.metrics, config.k)?;
    let mut rows = Vec::new();
    let mut cell = 0;

    for &(n, d) in &config.sizes {
        let per_trial = (0..config.trials)
            .into_par_iter()
            .map(|t| {
                let seed = cell_seed(config.seed, cell, t);
                let spec = DatasetSpec::null(n, d, d, split_seed(seed, 0)).with_noise(config.noise);
                let (x, y) = generate_dataset(&spec)?;
                metrics
                    .iter()
                    .map(|m| observe(m, &x, &y, config.permutations, split_seed(seed, 1)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        cell += 1;
        for (mi, metric) in metrics.iter().enumerate() {
            for &alpha in &config.alphas {
                let cal = CalibrationConfig::new(config.permutations, alpha, 0);
                let results = per_trial
                    .iter()
                    .map(|r| CalibrationResult::from_nulls(metric.name(), r[mi].0, r[mi].1.clone(), &cal, metric.s_max()))
                    .collect::<Result<Vec<_>>>()?;
                let s = cell_stats(&results);
                rows.push(vec![
                    Cell::from("H0"),
                    metric.family_name().into(),
                    n.into(),
                    d.into(),
                    alpha.into(),
                    0.0.into(),
                    1.0.into(),
                    0usize.into(),
                    config.trials.into(),
                    s.rejection_rate.into(),
                    s.raw.0.into(),
                    s.cal.0.into(),
                    s.cal.1.into(),
                ]);
            }
        }
    }

    if let Some(grid) = &config.signal {
        CalibrationConfig::new(config.permutations, grid.alpha, 0).validate()?;
        let cal = CalibrationConfig::new(config.permutations, grid.alpha, 0);
        for &rank in &grid.ranks {
            for &noise_level in &grid.noise_levels {
                for &strength in &grid.strengths {
                    if strength == 0.0 && noise_level == 0.0 {
                        return Err(Error::param(
                            "signal grid cell with zero strength and zero noise has no data",
                        ));
                    }
                    let per_trial = (0..config.trials)
                        .into_par_iter()
                        .map(|t| {
                            let seed = cell_seed(config.seed, cell, t);
                            let spec = DatasetSpec::signal(grid.n, grid.d, grid.d, rank, strength, noise_level, split_seed(seed, 0))
                                .with_noise(config.noise);
                            let (x, y) = generate_dataset(&spec)?;
                            metrics
                                .iter()
                                .map(|m| {
                                    let (s, nulls) = observe(m, &x, &y, config.permutations, split_seed(seed, 1))?;
                                    CalibrationResult::from_nulls(m.name(), s, nulls, &cal, m.s_max())
                                })
                                .collect::<Result<Vec<_>>>()
                        })
                        .collect::<Result<Vec<_>>>()?;
                    cell += 1;
                    for (mi, metric) in metrics.iter().enumerate() {
                        let results: Vec<CalibrationResult> = per_trial.iter().map(|r| r[mi].clone()).collect();
                        let s = cell_stats(&results);
                        rows.push(vec![
                            Cell::from("H1"),
                            metric.family_name().into(),
                            grid.n.into(),
                            grid.d.into(),
                            grid.alpha.into(),
                            strength.into(),
                            noise_level.into(),
                            rank.into(),
                            config.trials.into(),
                            s.rejection_rate.into(),
                            s.raw.0.into(),
                            s.cal.0.into(),
                            s.cal.1.into(),
                        ]);
                    }
                }
            }
        }
    }
    let permutations = vec![config.permutations];
    let meta = TableMetadata::new("guarantees", config.seed, permutations, config.alphas[0], config.trials, to_json(config));
    ExperimentTable::from_rows(meta, GUARANTEES_COLUMNS, rows)
}

/// `α + 3·√(α(1−α)/trials)`.
pub fn type_one_limit(alpha: f64, trials: usize) -> f64 {
    alpha + 3.0 * (alpha * (1.0 - alpha) / trials as f64).sqrt()
}

pub fn check_guarantees(config: &GuaranteesConfig, table: &ExperimentTable) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let (alpha, rate, cal) = (col(table, "alpha"), col(table, "rejection_rate"), col(table, "cal_mean"));
    let h0 = table.rows_where("hypothesis", "H0");
    let mut worst = f64::NEG_INFINITY;
    let ok = h0.iter().all(|&i| {
        let slack = rate[i] - type_one_limit(alpha[i], config.trials);
        worst = worst.max(slack);
        slack <= 0.0
    });
    out.push(CheckOutcome::new(
        "H0 rejection rate ≤ α + 3σ",
        ok,
        format!("worst margin {worst:+.4}"),
    ));

    let h1 = table.rows_where("hypothesis", "H1");
    if !h1.is_empty() {
        let metrics = table.texts("metric").unwrap_or(&[]);
        let (strength, noise, rank) = (col(table, "signal_strength"), col(table, "noise_level"), col(table, "rank"));
        let mut monotone = true;
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for &i in &h1 {
            match groups.iter_mut().find(|g| {
                let j = g[0];
                metrics[j] == metrics[i] && noise[j] == noise[i] && rank[j] == rank[i]
            }) {
                Some(g) => g.push(i),
                None => groups.push(vec![i]),
            }
        }
        let t = config.trials as f64;
        for g in &mut groups {
            g.sort_by(|&a, &b| strength[a].total_cmp(&strength[b]));
            for w in g.windows(2) {
                let (p, q) = (rate[w[0]], rate[w[1]]);
                let se = ((p * (1.0 - p) + q * (1.0 - q)) / t).sqrt().max(1.0 / t);
                monotone &= q >= p - 3.0 * se;
            }
        }
        out.push(CheckOutcome::new(
            "detection rate nondecreasing in signal strength",
            monotone,
            "",
        ));
        let max_noise = h1.iter().map(|&i| noise[i]).fold(0.0, f64::max);
        if max_noise >= 10.0 {
            let worst = h1
                .iter()
                .filter(|&&i| noise[i] == max_noise)
                .map(|&i| cal[i])
                .fold(0.0, f64::max);
            out.push(CheckOutcome::new(
                format!("calibrated mean ≤ 0.02 at noise level {max_noise}"),
                worst <= 0.02,
                format!("max {worst:.4}"),
            ));
        }
    }
    out
}

/// Layer-count sweep under the null: raw max, aggregation-aware and naive
/// entrywise calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthConfig {
    pub l_list: Vec<usize>,
    pub n: usize,
    pub d_over_n: usize,
    pub metric: String,
    pub k: usize,
    pub aggregator: Aggregator,
    pub permutations: usize,
    pub alpha: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for DepthConfig {
    fn default() -> Self {
        Self {
            l_list: vec![1, 4, 16, 64],
            n: 64,
            d_over_n: 8,
            metric: "cka-linear".into(),
            k: MetricSpec::DEFAULT_K,
            aggregator: Aggregator::Max,
            permutations: 99,
            alpha: 0.05,
            trials: 100,
            seed: 0,
        }
    }
}

pub const DEPTH_COLUMNS: &[&str] = &[
    "layers",
    "comparisons",
    "trials",
    "raw_mean",
    "raw_std",
    "cal_mean",
    "cal_std",
    "rejection_rate",
    "naive_mean",
    "naive_std",
    "pair_mean",
    "pair_std",
    "inflation_bound",
];

pub fn run_depth_confounder(config: &DepthConfig) -> Result<ExperimentTable> {
    non_empty(&config.l_list, "l_list")?;
    if config.l_list.iter().any(|&l| l == 0) {
        return Err(Error::param("layer counts must be positive"));
    }
    if config.d_over_n == 0 {
        return Err(Error::param("d_over_n must be positive"));
    }
    check_counts(config.permutations, config.alpha, config.trials)?;
    let metric = MetricSpec::from_name(
        &config.metric,
        &MetricParams {
            k: Some(config.k),
            ..Default::default()
        },
    )?;
    let cal = CalibrationConfig::new(config.permutations, config.alpha, 0);
    let (n, d) = (config.n, config.n * config.d_over_n);

    let mut rows = Vec::new();
    for (cell, &l) in config.l_list.iter().enumerate() {
        config.aggregator.validate(l * l)?;
        let per_trial = (0..config.trials)
            .into_par_iter()
            .map(|t| {
                let seed = cell_seed(config.seed, cell, t);
                let a = null_stack(l, n, d, split_seed(seed, 0))?;
                let b = null_stack(l, n, d, split_seed(seed, 1))?;
                let trial_cal = CalibrationConfig {
                    seed: split_seed(seed, 2),
                    ..cal
                };
                let layers = layer_nulls(&metric, &a, &b, &trial_cal)?;
                let agg = aggregate_from_nulls(metric.name(), &layers, config.aggregator, &trial_cal, metric.s_max())?;
                let naive = config
                    .aggregator
                    .apply(&layers.entrywise_calibrated(config.alpha, metric.s_max())?)?;
                Ok((agg, naive, layers.observed.iter().copied().collect::<Vec<f64>>()))
            })
            .collect::<Result<Vec<_>>>()?;
        let raw: Vec<f64> = per_trial.iter().map(|r| r.0.t_obs).collect();
        let calibrated: Vec<f64> = per_trial.iter().map(|r| r.0.t_cal).collect();
        let naive: Vec<f64> = per_trial.iter().map(|r| r.1).collect();
        let pairs: Vec<f64> = per_trial.iter().flat_map(|r| r.2.iter().copied()).collect();
        let rejected = per_trial.iter().filter(|r| r.0.is_significant()).count();
        let (pair_mean, pair_std) = mean_std(&pairs);
        let m = l * l;
        let bound = if m >= 2 {
            max_inflation_bound(pair_mean, pair_std, m)?
        } else {
            pair_mean
        };
        let (raw_mean, raw_std) = mean_std(&raw);
        let (cal_mean, cal_std) = mean_std(&calibrated);
        let (naive_mean, naive_std) = mean_std(&naive);
        rows.push(vec![
            Cell::from(l),
            m.into(),
            config.trials.into(),
            raw_mean.into(),
            raw_std.into(),
            cal_mean.into(),
            cal_std.into(),
            (rejected as f64 / config.trials as f64).into(),
            naive_mean.into(),
            naive_std.into(),
            pair_mean.into(),
            pair_std.into(),
            bound.into(),
        ]);
    }
    let meta = TableMetadata::new(
        "depth",
        config.seed,
        vec![config.permutations],
        config.alpha,
        config.trials,
        to_json(config),
    );
    ExperimentTable::from_rows(meta, DEPTH_COLUMNS, rows)
}

pub fn check_depth(config: &DepthConfig, table: &ExperimentTable) -> Vec<CheckOutcome> {
    let t = (config.trials as f64).sqrt();
    let layers = col(table, "layers");
    let (raw, raw_sd) = (col(table, "raw_mean"), col(table, "raw_std"));
    let (naive, naive_sd) = (col(table, "naive_mean"), col(table, "naive_std"));
    let cal = col(table, "cal_mean");
    let bound = col(table, "inflation_bound");
    let mut order: Vec<usize> = (0..layers.len()).collect();
    order.sort_by(|&a, &b| layers[a].total_cmp(&layers[b]));
    let beyond = |m: &[f64], s: &[f64], i: usize, j: usize| {
        m[j] - m[i] > 2.0 * ((s[i] / t).powi(2) + (s[j] / t).powi(2)).sqrt()
    };

    let mut out = Vec::new();
    out.push(CheckOutcome::new(
        "raw max mean strictly increasing in L beyond 2× MC std",
        order.windows(2).all(|w| beyond(raw, raw_sd, w[0], w[1])),
        "",
    ));
    let worst = cal.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.push(CheckOutcome::new(
        "aggregation-aware calibrated mean ≤ 0.01 at every L",
        cal.iter().all(|&c| c <= 0.01),
        format!("max {worst:.4}"),
    ));
    if let (Some(&lo), Some(&hi)) = (order.first(), order.last()) {
        if hi != lo {
            out.push(CheckOutcome::new(
                format!("naive entrywise max at L={} > 5× its L={} value", layers[hi], layers[lo]),
                naive[hi] > 5.0 * naive[lo],
                format!("{:.4} vs {:.4}", naive[hi], naive[lo]),
            ));
        }
    }
    let grows = order
        .windows(2)
        .filter(|w| layers[w[1]] >= 16.0)
        .all(|w| beyond(naive, naive_sd, w[0], w[1]));
    out.push(CheckOutcome::new(
        "naive entrywise max grows with L for L ≥ 16",
        grows,
        "",
    ));
    out.push(CheckOutcome::new(
        "raw max mean within μ + 3σ√(log M)",
        (0..raw.len()).all(|i| raw[i] <= bound[i] + 1e-12),
        "",
    ));
    out
}

/// Stability of `τ_α` and calibrated scores as the permutation budget grows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    /// Ascending permutation budgets.
    pub k_list: Vec<usize>,
    pub n: usize,
    pub d: usize,
    pub metric: String,
    pub k: usize,
    pub noise: NoiseFamily,
    pub alpha: f64,
    /// Number of independent datasets (and permutation seeds).
    pub seeds: usize,
    pub seed: u64,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self {
            k_list: vec![25, 50, 100, 200],
            n: 128,
            d: 512,
            metric: "cka-linear".into(),
            k: MetricSpec::DEFAULT_K,
            noise: NoiseFamily::Gaussian,
            alpha: 0.05,
            seeds: 50,
            seed: 0,
        }
    }
}

pub const BUDGET_COLUMNS: &[&str] = &[
    "permutations",
    "seeds",
    "tau_mean",
    "tau_std",
    "cal_mean",
    "cal_std",
    "rejection_rate",
];

pub fn run_permutation_budget(config: &BudgetConfig) -> Result<ExperimentTable> {
    non_empty(&config.k_list, "k_list")?;
    if config.k_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("k_list must be strictly ascending"));
    }
    check_counts(config.k_list[0], config.alpha, config.seeds)?;
    config.noise.validate()?;
    let metric = MetricSpec::from_name(
        &config.metric,
        &MetricParams {
            k: Some(config.k),
            ..Default::default()
        },
    )?;
    let k_max = *config.k_list.last().expect("non-empty");
    // Replicate seeds do not depend on K, so smaller budgets are prefixes of
    // the largest one.
    let per_seed = (0..config.seeds)
        .into_par_iter()
        .map(|s| {
            let seed = cell_seed(config.seed, 0, s);
            let spec = DatasetSpec::null(config.n, config.d, config.d, split_seed(seed, 0)).with_noise(config.noise);
            let (x, y) = generate_dataset(&spec)?;
            let (s_obs, nulls) = observe(&metric, &x, &y, k_max, split_seed(seed, 1))?;
            config
                .k_list
                .iter()
                .map(|&k| {
                    let cal = CalibrationConfig::new(k, config.alpha, seed);
                    CalibrationResult::from_nulls(metric.name(), s_obs, nulls[..k].to_vec(), &cal, metric.s_max())
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = config
        .k_list
        .iter()
        .enumerate()
        .map(|(ki, &k)| {
            let results: Vec<CalibrationResult> = per_seed.iter().map(|r| r[ki].clone()).collect();
            let taus: Vec<f64> = results.iter().map(|r| r.tau_alpha).collect();
            let (tau_mean, tau_std) = mean_std(&taus);
            let s = cell_stats(&results);
            vec![
                Cell::from(k),
                config.seeds.into(),
                tau_mean.into(),
                tau_std.into(),
                s.cal.0.into(),
                s.cal.1.into(),
                s.rejection_rate.into(),
            ]
        })
        .collect();
    let meta = TableMetadata::new(
        "budget",
        config.seed,
        config.k_list.clone(),
        config.alpha,
        config.seeds,
        to_json(config),
    );
    ExperimentTable::from_rows(meta, BUDGET_COLUMNS, rows)
}

pub fn check_budget(_config: &BudgetConfig, table: &ExperimentTable) -> Vec<CheckOutcome> {
    let (ks, tau_sd, cal) = (col(table, "permutations"), col(table, "tau_std"), col(table, "cal_mean"));
    let mut out = Vec::new();
    if ks.len() >= 2 {
        let (lo, hi) = (0, ks.len() - 1);
        out.push(CheckOutcome::new(
            format!("τ std at K={} < τ std at K={}", ks[hi], ks[lo]),
            tau_sd[hi] < tau_sd[lo],
            format!("{:.5} vs {:.5}", tau_sd[hi], tau_sd[lo]),
        ));
    }
    let large: Vec<usize> = (0..ks.len()).filter(|&i| ks[i] >= 100.0).collect();
    if !large.is_empty() {
        let worst = large.iter().map(|&i| cal[i]).fold(f64::NEG_INFINITY, f64::max);
        out.push(CheckOutcome::new(
            "calibrated H0 mean ≤ 0.02 for K ≥ 100",
            worst <= 0.02,
            format!("max {worst:.4}"),
        ));
    }
    out
}

/// Corrected scores of one observation under the four calibration variants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariantScores {
    pub gated: f64,
    pub null_centered: f64,
    /// `None` when the null has zero spread.
    pub z_score: Option<f64>,
    /// `None` when the metric is unbounded or the null mean reaches its maximum.
    pub ari: Option<f64>,
}

pub fn variant_scores(s_obs: f64, nulls: &[f64], alpha: f64, s_max: Option<f64>) -> Result<VariantScores> {
    let tau = critical_value(s_obs, nulls, alpha)?;
    let gated = crate::calibration::calibrated_score(s_obs, tau, s_max)?;
    let (mean, std) = mean_std(nulls);
    let z_score = (std > 0.0).then(|| (s_obs - mean) / std);
    let ari = s_max.filter(|&m| m > mean).map(|m| (s_obs - mean) / (m - mean));
    Ok(VariantScores {
        gated,
        null_centered: s_obs - mean,
        z_score,
        ari,
    })
}

/// The four calibration variants across a `d/n` sweep under the null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariantsConfig {
    pub n: usize,
    pub d_over_n: Vec<f64>,
    pub metrics: Vec<String>,
    pub k: usize,
    pub noise: NoiseFamily,
    pub permutations: usize,
    pub alpha: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for VariantsConfig {
    fn default() -> Self {
        Self {
            n: 128,
            d_over_n: vec![0.5, 1.0, 2.0, 4.0, 8.0],
            metrics: vec!["cka-linear".into(), "cka-rbf".into(), "rsa".into(), "mknn".into()],
            k: MetricSpec::DEFAULT_K,
            noise: NoiseFamily::Gaussian,
            permutations: 99,
            alpha: 0.05,
            trials: 50,
            seed: 0,
        }
    }
}

pub const VARIANT_NAMES: &[&str] = &["raw", "gated", "null-centered", "z-score", "ari"];

pub const VARIANTS_COLUMNS: &[&str] = &["metric", "n", "d", "d_over_n", "variant", "trials", "mean", "std", "flagged"];

pub fn run_calibration_variants(config: &VariantsConfig) -> Result<ExperimentTable> {
    non_empty(&config.d_over_n, "d_over_n")?;
    if config.d_over_n.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::param("d/n ratios must be positive"));
    }
    check_counts(config.permutations, config.alpha, config.trials)?;
    config.noise.validate()?;
    let metrics = parse_metrics(&config.metrics, config.k)?;
    let mut rows = Vec::new();
    for (cell, &ratio) in config.d_over_n.iter().enumerate() {
        let d = ((config.n as f64 * ratio).round() as usize).max(1);
        let per_trial = (0..config.trials)
            .into_par_iter()
            .map(|t| {
                let seed = cell_seed(config.seed, cell, t);
                let spec = DatasetSpec::null(config.n, d, d, split_seed(seed, 0)).with_noise(config.noise);
                let (x, y) = generate_dataset(&spec)?;
                metrics
                    .iter()
                    .map(|m| {
                        let (s, nulls) = observe(m, &x, &y, config.permutations, split_seed(seed, 1))?;
                        Ok((s, variant_scores(s, &nulls, config.alpha, m.s_max())?))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        for (mi, metric) in metrics.iter().enumerate() {
            let column = |f: &dyn Fn(&(f64, VariantScores)) -> Option<f64>| -> (Vec<f64>, usize) {
                let all: Vec<Option<f64>> = per_trial.iter().map(|r| f(&r[mi])).collect();
                let flagged = all.iter().filter(|v| v.is_none()).count();
                (all.into_iter().flatten().collect(), flagged)
            };
            let series = [
                column(&|r| Some(r.0)),
                column(&|r| Some(r.1.gated)),
                column(&|r| Some(r.1.null_centered)),
                column(&|r| r.1.z_score),
                column(&|r| r.1.ari),
            ];
            for (name, (values, flagged)) in VARIANT_NAMES.iter().zip(series) {
                let (mean, std) = mean_std(&values);
                rows.push(vec![
                    Cell::from(metric.family_name()),
                    config.n.into(),
                    d.into(),
                    ratio.into(),
                    Cell::from(*name),
                    config.trials.into(),
                    mean.into(),
                    std.into(),
                    flagged.into(),
                ]);
            }
        }
    }
    let meta = TableMetadata::new(
        "variants",
        config.seed,
        vec![config.permutations],
        config.alpha,
        config.trials,
        to_json(config),
    );
    ExperimentTable::from_rows(meta, VARIANTS_COLUMNS, rows)
}

pub fn check_variants(_config: &VariantsConfig, table: &ExperimentTable) -> Vec<CheckOutcome> {
    let variants = table.texts("variant").unwrap_or(&[]);
    let mean = col(table, "mean");
    let mut worst = f64::NEG_INFINITY;
    let ok = (0..variants.len())
        .filter(|&i| matches!(variants[i].as_str(), "gated" | "null-centered" | "ari"))
        .all(|i| {
            worst = worst.max(mean[i]);
            mean[i] <= 0.02
        });
    vec![CheckOutcome::new(
        "gated, null-centered and ARI-style H0 means ≤ 0.02",
        ok,
        format!("max {worst:.4}"),
    )]
}

/// A named experiment with its configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum Experiment {
    Nulldrift(NullDriftConfig),
    Guarantees(GuaranteesConfig),
    Depth(DepthConfig),
    Budget(BudgetConfig),
    Variants(VariantsConfig),
}

impl Experiment {
    pub const NAMES: &'static [&'static str] = &["nulldrift", "guarantees", "depth", "budget", "variants"];

    /// Default configuration for a named experiment.
    pub fn default_for(name: &str) -> Result<Self> {
        Ok(match name {
            "nulldrift" => Experiment::Nulldrift(Default::default()),
            "guarantees" => Experiment::Guarantees(Default::default()),
            "depth" => Experiment::Depth(Default::default()),
            "budget" => Experiment::Budget(Default::default()),
            "variants" => Experiment::Variants(Default::default()),
            other => {
                return Err(Error::param(format!(
                    "unknown experiment {other:?}; valid names: {}",
                    Self::NAMES.join(", ")
                )))
            }
        })
    }

    /// Parses a JSON configuration for a named experiment. Missing fields
    /// take their defaults.
    pub fn from_json(name: &str, json: &str) -> std::result::Result<Self, serde_json::Error> {
        Ok(match name {
            "nulldrift" => Experiment::Nulldrift(serde_json::from_str(json)?),
            "guarantees" => Experiment::Guarantees(serde_json::from_str(json)?),
            "depth" => Experiment::Depth(serde_json::from_str(json)?),
            "budget" => Experiment::Budget(serde_json::from_str(json)?),
            _ => Experiment::Variants(serde_json::from_str(json)?),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Nulldrift(_) => "nulldrift",
            Experiment::Guarantees(_) => "guarantees",
            Experiment::Depth(_) => "depth",
            Experiment::Budget(_) => "budget",
            Experiment::Variants(_) => "variants",
        }
    }

    /// Overrides the trial count (datasets per cell; seeds for the budget study).
    pub fn set_trials(&mut self, trials: usize) {
        match self {
            Experiment::Nulldrift(c) => c.trials = trials,
            Experiment::Guarantees(c) => c.trials = trials,
            Experiment::Depth(c) => c.trials = trials,
            Experiment::Budget(c) => c.seeds = trials,
            Experiment::Variants(c) => c.trials = trials,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            Experiment::Nulldrift(c) => c.seed = seed,
            Experiment::Guarantees(c) => c.seed = seed,
            Experiment::Depth(c) => c.seed = seed,
            Experiment::Budget(c) => c.seed = seed,
            Experiment::Variants(c) => c.seed = seed,
        }
    }

    pub fn run(&self) -> Result<ExperimentTable> {
        match self {
            Experiment::Nulldrift(c) => run_null_drift(c),
            Experiment::Guarantees(c) => run_guarantees(c),
            Experiment::Depth(c) => run_depth_confounder(c),
            Experiment::Budget(c) => run_permutation_budget(c),
            Experiment::Variants(c) => run_calibration_variants(c),
        }
    }

    pub fn checks(&self, table: &ExperimentTable) -> Vec<CheckOutcome> {
        match self {
            Experiment::Nulldrift(c) => check_null_drift(c, table),
            Experiment::Guarantees(c) => check_guarantees(c, table),
            Experiment::Depth(c) => check_depth(c, table),
            Experiment::Budget(c) => check_budget(c, table),
            Experiment::Variants(c) => check_variants(c, table),
        }
    }
}
