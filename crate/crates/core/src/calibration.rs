//! Permutation-null calibration of similarity scores.
//!
//! The observed score is compared with the scores obtained after permuting
//! the rows of `Y`. From the `K` null scores we derive an add-one p-value,
//! a rank-based critical value `τ_α`, and the calibrated score
//! `max((s − τ_α) / (s_max − τ_α), 0)`.
//!
//! [`calibrate_aggregate`] does the same for a summary of a whole layer-by-layer
//! score matrix. Every replicate applies one permutation to all layers of the
//! second stack, so the null reflects the selection effect of the aggregate.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{EmbeddingMatrix, LayerStack};
use crate::metrics::{check_aligned, Similarity};
use crate::permutation::PermutationPlan;

/// Replicate count, significance level and master seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub permutations: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            permutations: 200,
            alpha: 0.05,
            seed: 0,
        }
    }
}

impl CalibrationConfig {
    pub fn new(permutations: usize, alpha: f64, seed: u64) -> Self {
        Self {
            permutations,
            alpha,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.permutations == 0 {
            return Err(Error::param("at least one permutation is required"));
        }
        check_alpha(self.alpha)
    }

    pub fn plan(&self, n: usize) -> PermutationPlan {
        PermutationPlan::new(self.seed, self.permutations, n)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::param(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// How the calibrated score was normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    /// `(s − τ) / (s_max − τ)`, clipped at zero.
    Bounded,
    /// `s − τ`, clipped at zero.
    Unbounded,
}

/// Add-one right-tail permutation p-value. Ties count against the observation.
pub fn p_value(s_obs: f64, null_scores: &[f64]) -> Result<f64> {
    if null_scores.is_empty() {
        return Err(Error::param("p-value needs at least one null score"));
    }
    let exceed = null_scores.iter().filter(|&&s| s >= s_obs).count();
    Ok((1 + exceed) as f64 / (null_scores.len() + 1) as f64)
}

/// 1-based rank of the critical value among the `K + 1` combined scores.
pub fn critical_index(permutations: usize, alpha: f64) -> Result<usize> {
    check_alpha(alpha)?;
    let m = (permutations + 1) as f64;
    // Products like 0.95 · 200 land a few ulps off the integer; do not let
    // that push the ceiling up by one.
    let idx = ((1.0 - alpha) * m - 1e-9).ceil() as usize;
    Ok(idx.clamp(1, permutations + 1))
}

/// The `⌈(1 − α)(K + 1)⌉`-th smallest value of `{s_obs} ∪ null_scores`.
pub fn critical_value(s_obs: f64, null_scores: &[f64], alpha: f64) -> Result<f64> {
    if null_scores.is_empty() {
        return Err(Error::param("critical value needs at least one null score"));
    }
    let idx = critical_index(null_scores.len(), alpha)?;
    let mut all = Vec::with_capacity(null_scores.len() + 1);
    all.push(s_obs);
    all.extend_from_slice(null_scores);
    let (_, tau, _) = all.select_nth_unstable_by(idx - 1, f64::total_cmp);
    Ok(*tau)
}

/// Calibrated score against critical value `tau`.
///
/// With `s_max = Some(m)` this is `max((s − τ)/(m − τ), 0)` and requires
/// `m > τ`; with `None` it is the unnormalized excess `max(s − τ, 0)`.
pub fn calibrated_score(s_obs: f64, tau: f64, s_max: Option<f64>) -> Result<f64> {
    match s_max {
        Some(m) => {
            if !(m > tau) {
                return Err(Error::degenerate(format!(
                    "critical value {tau} reaches the metric maximum {m}; calibrated score undefined"
                )));
            }
            Ok(((s_obs - tau) / (m - tau)).clamp(0.0, 1.0))
        }
        None => Ok((s_obs - tau).max(0.0)),
    }
}

/// Outcome of scalar calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub metric: String,
    pub s_obs: f64,
    pub null_scores: Vec<f64>,
    pub tau_alpha: f64,
    pub p_value: f64,
    pub s_cal: f64,
    pub alpha: f64,
    pub permutations: usize,
    pub seed: u64,
    pub mode: ScoreMode,
    pub s_max: Option<f64>,
}

impl CalibrationResult {
    /// Assembles a result from an observed score and its nulls.
    pub fn from_nulls(
        metric: impl Into<String>,
        s_obs: f64,
        null_scores: Vec<f64>,
        config: &CalibrationConfig,
        s_max: Option<f64>,
    ) -> Result<Self> {
        check_alpha(config.alpha)?;
        let tau_alpha = critical_value(s_obs, &null_scores, config.alpha)?;
        let p_value = p_value(s_obs, &null_scores)?;
        let s_cal = calibrated_score(s_obs, tau_alpha, s_max)?;
        Ok(Self {
            metric: metric.into(),
            s_obs,
            permutations: null_scores.len(),
            null_scores,
            tau_alpha,
            p_value,
            s_cal,
            alpha: config.alpha,
            seed: config.seed,
            mode: if s_max.is_some() {
                ScoreMode::Bounded
            } else {
                ScoreMode::Unbounded
            },
            s_max,
        })
    }

    pub fn is_significant(&self) -> bool {
        self.p_value <= self.alpha
    }
}

/// Null scores of one prepared pair, in replicate order.
pub fn null_scores<S: Similarity>(
    metric: &S,
    a: &S::Prepared,
    b: &S::Prepared,
    plan: &PermutationPlan,
) -> Result<Vec<f64>> {
    (0..plan.replicates())
        .into_par_iter()
        .map(|k| {
            let perm = plan.permutation(k)?;
            metric
                .score_prepared(a, b, Some(&perm))
                .map_err(|e| Error::Replicate {
                    replicate: k,
                    source: Box::new(e),
                })
        })
        .collect()
}

/// Scalar null calibration of `metric(x, y)`.
pub fn calibrate_scalar<S: Similarity>(
    metric: &S,
    x: &EmbeddingMatrix,
    y: &EmbeddingMatrix,
    config: &CalibrationConfig,
) -> Result<CalibrationResult> {
    config.validate()?;
    check_aligned(x, y)?;
    let a = metric.prepare(x)?;
    let b = metric.prepare(y)?;
    let s_obs = metric.score_prepared(&a, &b, None)?;
    let nulls = null_scores(metric, &a, &b, &config.plan(x.n()))?;
    CalibrationResult::from_nulls(metric.name(), s_obs, nulls, config, metric.s_max())
}

/// Summary statistic of a layer-by-layer score matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Aggregator {
    Max,
    Mean,
    /// Mean of the `k` largest entries.
    TopKMean { k: usize },
}

impl Aggregator {
    /// Checks the aggregator against a matrix with `cells` entries.
    pub fn validate(&self, cells: usize) -> Result<()> {
        match *self {
            Aggregator::TopKMean { k } if k == 0 || k > cells => Err(Error::param(format!(
                "top-k aggregator needs 1 ≤ k ≤ {cells}, got k = {k}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn apply(&self, s: &Array2<f64>) -> Result<f64> {
        let cells = s.len();
        if cells == 0 {
            return Err(Error::param("cannot aggregate an empty score matrix"));
        }
        self.validate(cells)?;
        Ok(match *self {
            Aggregator::Max => s.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Aggregator::Mean => s.iter().sum::<f64>() / cells as f64,
            Aggregator::TopKMean { k } => {
                let mut v: Vec<f64> = s.iter().copied().collect();
                v.sort_unstable_by(|a, b| b.total_cmp(a));
                v[..k].iter().sum::<f64>() / k as f64
            }
        })
    }
}

impl std::fmt::Display for Aggregator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Aggregator::Max => f.write_str("max"),
            Aggregator::Mean => f.write_str("mean"),
            Aggregator::TopKMean { k } => write!(f, "topk({k})"),
        }
    }
}

fn check_stacks(a: &LayerStack, b: &LayerStack) -> Result<()> {
    if a.n() != b.n() {
        return Err(Error::ShapeMismatch(format!(
            "layer stacks are not row-aligned: {} vs {} samples",
            a.n(),
            b.n()
        )));
    }
    Ok(())
}

fn prepare_stack<S: Similarity>(metric: &S, stack: &LayerStack) -> Result<Vec<S::Prepared>> {
    stack.iter().map(|layer| metric.prepare(layer)).collect()
}

/// `S[ℓ, ℓ'] = metric(A[ℓ], B[ℓ'])`.
pub fn layer_similarity_matrix<S: Similarity>(metric: &S, a: &LayerStack, b: &LayerStack) -> Result<Array2<f64>> {
    check_stacks(a, b)?;
    let pa = prepare_stack(metric, a)?;
    let pb = prepare_stack(metric, b)?;
    metric.score_matrix(&pa, &pb, None)
}

/// Observed layer score matrix and one null matrix per replicate.
#[derive(Debug, Clone)]
pub struct LayerNulls {
    pub observed: Array2<f64>,
    pub nulls: Vec<Array2<f64>>,
}

impl LayerNulls {
    /// Calibrates every cell against its own null distribution, ignoring the
    /// selection across cells.
    pub fn entrywise_calibrated(&self, alpha: f64, s_max: Option<f64>) -> Result<Array2<f64>> {
        let (ra, rb) = self.observed.dim();
        let mut out = Array2::zeros((ra, rb));
        let mut cell = vec![0.0; self.nulls.len()];
        for i in 0..ra {
            for j in 0..rb {
                for (c, null) in cell.iter_mut().zip(&self.nulls) {
                    *c = null[[i, j]];
                }
                let s = self.observed[[i, j]];
                let tau = critical_value(s, &cell, alpha)?;
                out[[i, j]] = calibrated_score(s, tau, s_max)?;
            }
        }
        Ok(out)
    }
}

/// Computes the observed layer score matrix and its permutation nulls. Each
/// replicate applies one permutation to every layer of `b`.
pub fn layer_nulls<S: Similarity>(
    metric: &S,
    a: &LayerStack,
    b: &LayerStack,
    config: &CalibrationConfig,
) -> Result<LayerNulls> {
    config.validate()?;
    check_stacks(a, b)?;
    let pa = prepare_stack(metric, a)?;
    let pb = prepare_stack(metric, b)?;
    let observed = metric.score_matrix(&pa, &pb, None)?;
    let plan = config.plan(a.n());
    let nulls = (0..plan.replicates())
        .into_par_iter()
        .map(|k| {
            let perm = plan.permutation(k)?;
            metric
                .score_matrix(&pa, &pb, Some(&perm))
                .map_err(|e| Error::Replicate {
                    replicate: k,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LayerNulls { observed, nulls })
}

/// Outcome of aggregation-aware calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCalibrationResult {
    pub metric: String,
    pub aggregator: Aggregator,
    /// Layer score matrix, one inner vector per layer of the first stack.
    pub scores: Vec<Vec<f64>>,
    pub t_obs: f64,
    pub null_aggregates: Vec<f64>,
    pub tau_agg: f64,
    pub p_agg: f64,
    pub t_cal: f64,
    pub alpha: f64,
    pub permutations: usize,
    pub seed: u64,
    pub mode: ScoreMode,
    pub s_max: Option<f64>,
}

impl AggregateCalibrationResult {
    pub fn score_matrix(&self) -> Array2<f64> {
        let rows = self.scores.len();
        let cols = self.scores.first().map_or(0, Vec::len);
        Array2::from_shape_vec((rows, cols), self.scores.concat()).expect("rectangular score matrix")
    }

    /// Number of compared layer pairs.
    pub fn comparisons(&self) -> usize {
        self.scores.iter().map(Vec::len).sum()
    }

    pub fn is_significant(&self) -> bool {
        self.p_agg <= self.alpha
    }
}

/// Aggregation-aware calibration of `aggregator(S)` for two layer stacks.
pub fn calibrate_aggregate<S: Similarity>(
    metric: &S,
    a: &LayerStack,
    b: &LayerStack,
    aggregator: Aggregator,
    config: &CalibrationConfig,
) -> Result<AggregateCalibrationResult> {
    aggregator.validate(a.len() * b.len())?;
    let layers = layer_nulls(metric, a, b, config)?;
    aggregate_from_nulls(metric.name(), &layers, aggregator, config, metric.s_max())
}

/// Aggregation-aware calibration from precomputed layer nulls.
pub fn aggregate_from_nulls(
    metric: impl Into<String>,
    layers: &LayerNulls,
    aggregator: Aggregator,
    config: &CalibrationConfig,
    s_max: Option<f64>,
) -> Result<AggregateCalibrationResult> {
    let t_obs = aggregator.apply(&layers.observed)?;
    let null_aggregates = layers
        .nulls
        .iter()
        .map(|s| aggregator.apply(s))
        .collect::<Result<Vec<_>>>()?;
    let scalar = CalibrationResult::from_nulls(metric, t_obs, null_aggregates, config, s_max)?;
    Ok(AggregateCalibrationResult {
        metric: scalar.metric,
        aggregator,
        scores: layers.observed.rows().into_iter().map(|r| r.to_vec()).collect(),
        t_obs,
        null_aggregates: scalar.null_scores,
        tau_agg: scalar.tau_alpha,
        p_agg: scalar.p_value,
        t_cal: scalar.s_cal,
        alpha: scalar.alpha,
        permutations: scalar.permutations,
        seed: scalar.seed,
        mode: scalar.mode,
        s_max,
    })
}

/// Multiple-testing adjustment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjustMethod {
    /// Benjamini–Hochberg step-up (false discovery rate).
    Bh,
    /// Holm step-down (family-wise error rate).
    Holm,
}

impl std::str::FromStr for AdjustMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bh" => Ok(AdjustMethod::Bh),
            "holm" => Ok(AdjustMethod::Holm),
            other => Err(Error::param(format!(
                "unknown adjustment method {other:?}; expected bh or holm"
            ))),
        }
    }
}

/// Adjusted p-values in the input order, clipped to 1.
pub fn multiplicity_adjust(p_values: &[f64], method: AdjustMethod) -> Result<Vec<f64>> {
    let m = p_values.len();
    if m == 0 {
        return Err(Error::param("no p-values to adjust"));
    }
    if let Some((i, p)) = p_values.iter().enumerate().find(|(_, p)| !(**p > 0.0 && **p <= 1.0)) {
        return Err(Error::param(format!("p-value {p} at position {i} is outside (0, 1]")));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut adjusted = vec![0.0; m];
    match method {
        AdjustMethod::Bh => {
            let mut running = 1.0f64;
            for (rank, &idx) in order.iter().enumerate().rev() {
                running = running.min(p_values[idx] * m as f64 / (rank + 1) as f64);
                adjusted[idx] = running;
            }
        }
        AdjustMethod::Holm => {
            let mut running = 0.0f64;
            for (rank, &idx) in order.iter().enumerate() {
                running = running.max(p_values[idx] * (m - rank) as f64).min(1.0);
                adjusted[idx] = running;
            }
        }
    }
    Ok(adjusted)
}
