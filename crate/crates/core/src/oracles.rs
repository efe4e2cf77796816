//! Closed-form null baselines and exhaustive small-sample nulls.
//!
//! Nothing in the calibration path depends on this module. It exists to check
//! the permutation machinery against known theory.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::EmbeddingMatrix;
use crate::metrics::{check_aligned, Similarity};
use crate::permutation::Permutation;

/// Expected value (and variance when known) of a statistic under the null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullBaseline {
    pub expectation: f64,
    pub variance: Option<f64>,
    pub regime: String,
}

impl NullBaseline {
    /// Null mean of `‖X_cᵀ Y_c / (n − 1)‖²_F` for independent isotropic inputs.
    pub fn cross_cov_energy(n: usize, d_x: usize, d_y: usize) -> Result<Self> {
        Ok(Self {
            expectation: expected_cross_cov_energy(n, d_x, d_y)?,
            variance: None,
            regime: "cross-covariance energy".into(),
        })
    }

    /// Null mean of the mutual k-NN score.
    pub fn mknn(n: usize, k: usize) -> Result<Self> {
        Ok(Self {
            expectation: expected_mknn_null(n, k)?,
            variance: None,
            regime: "mknn overlap".into(),
        })
    }

    /// Null mean and variance of one anchor's neighbor-set intersection size.
    pub fn anchor_intersection(n: usize, k: usize) -> Result<Self> {
        let (mean, var) = hypergeom_intersection_stats(n, k)?;
        Ok(Self {
            expectation: mean,
            variance: Some(var),
            regime: "per-anchor neighbor intersection".into(),
        })
    }
}

/// `d_x · d_y / (n − 1)`.
pub fn expected_cross_cov_energy(n: usize, d_x: usize, d_y: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::param(format!("need n ≥ 2, got {n}")));
    }
    Ok(d_x as f64 * d_y as f64 / (n - 1) as f64)
}

/// `k / (n − 1)`.
pub fn expected_mknn_null(n: usize, k: usize) -> Result<f64> {
    if k == 0 || k >= n {
        return Err(Error::param(format!("need 1 ≤ k < n, got k = {k}, n = {n}")));
    }
    Ok(k as f64 / (n - 1) as f64)
}

/// Mean `k²/(n−1)` and variance `k²(n−1−k)²/((n−1)²(n−2))` of the overlap of
/// two independent uniform `k`-subsets of `n − 1` candidates.
pub fn hypergeom_intersection_stats(n: usize, k: usize) -> Result<(f64, f64)> {
    if n < 3 {
        return Err(Error::param(format!("need n ≥ 3, got {n}")));
    }
    if k == 0 || k >= n {
        return Err(Error::param(format!("need 1 ≤ k < n, got k = {k}, n = {n}")));
    }
    let (n1, k) = ((n - 1) as f64, k as f64);
    let mean = k * k / n1;
    let var = k * k * (n1 - k).powi(2) / (n1 * n1 * (n1 - 1.0));
    Ok((mean, var))
}

/// Upper bound `μ + 3σ√(log M)` on the expected maximum of `M` sub-Gaussian
/// scores, valid without independence.
pub fn max_inflation_bound(mu: f64, sigma: f64, m: usize) -> Result<f64> {
    if m < 2 {
        return Err(Error::param(format!("need M ≥ 2 comparisons, got {m}")));
    }
    if !(sigma >= 0.0) {
        return Err(Error::param(format!("sigma must be non-negative, got {sigma}")));
    }
    Ok(mu + 3.0 * sigma * (m as f64).ln().sqrt())
}

/// Extreme-value approximation of the expected maximum of `M` i.i.d. normal
/// scores. Layer scores are dependent, so treat this as a diagnostic only.
pub fn gumbel_max_approximation(mu: f64, sigma: f64, m: usize) -> Result<f64> {
    if m < 2 {
        return Err(Error::param(format!("need M ≥ 2 comparisons, got {m}")));
    }
    let l = (m as f64).ln();
    let r = (2.0 * l).sqrt();
    Ok(mu + sigma * (r - (l.ln() + (4.0 * std::f64::consts::PI).ln()) / (2.0 * r)))
}

/// Largest `n` accepted by [`exact_permutation_null`].
pub const EXACT_MAX_N: usize = 7;

/// Every permutation of `0..n` in lexicographic order, starting at the identity.
pub fn all_permutations(n: usize) -> Vec<Permutation> {
    let mut cur: Vec<usize> = (0..n).collect();
    let mut out = vec![Permutation::from_vec(cur.clone()).expect("identity")];
    loop {
        let Some(i) = (1..n).rev().find(|&i| cur[i - 1] < cur[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| cur[j] > cur[i - 1]).expect("successor exists");
        cur.swap(i - 1, j);
        cur[i..].reverse();
        out.push(Permutation::from_vec(cur.clone()).expect("valid permutation"));
    }
}

/// The metric evaluated at every row permutation of `y`, in the order of
/// [`all_permutations`]; index 0 is the observed pairing.
pub fn exact_permutation_null<S: Similarity>(metric: &S, x: &EmbeddingMatrix, y: &EmbeddingMatrix) -> Result<Vec<f64>> {
    check_aligned(x, y)?;
    let n = x.n();
    if n > EXACT_MAX_N {
        return Err(Error::param(format!(
            "exact enumeration supports n ≤ {EXACT_MAX_N}, got {n}"
        )));
    }
    let a = metric.prepare(x)?;
    let b = metric.prepare(y)?;
    all_permutations(n)
        .iter()
        .map(|p| metric.score_prepared(&a, &b, Some(p)))
        .collect()
}

/// Exact permutation p-value: the fraction of all `n!` pairings scoring at
/// least as high as the observed one.
pub fn exact_p_value(null: &[f64]) -> Result<f64> {
    let s_obs = *null
        .first()
        .ok_or_else(|| Error::param("empty exact null distribution"))?;
    Ok(null.iter().filter(|&&s| s >= s_obs).count() as f64 / null.len() as f64)
}
