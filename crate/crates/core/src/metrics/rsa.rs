//! Representational similarity analysis: Spearman correlation of RDMs.

use ndarray::Array2;

use super::dissimilarity::{dissimilarity_matrix, Distance};
use super::linalg::permuted_inner;
use crate::error::{Error, Result};
use crate::matrix::EmbeddingMatrix;
use crate::permutation::Permutation;

/// Ranks (1-based) with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation; `None` if either input has constant ranks.
pub fn spearman(u: &[f64], v: &[f64]) -> Option<f64> {
    assert_eq!(u.len(), v.len(), "spearman inputs must have equal length");
    let (ru, rv) = (average_ranks(u), average_ranks(v));
    let m = u.len() as f64;
    let mean = (m + 1.0) / 2.0;
    let (mut num, mut su, mut sv) = (0.0, 0.0, 0.0);
    for (a, b) in ru.iter().zip(&rv) {
        num += (a - mean) * (b - mean);
        su += (a - mean) * (a - mean);
        sv += (b - mean) * (b - mean);
    }
    (su > 0.0 && sv > 0.0).then(|| num / (su * sv).sqrt())
}

/// Mean-centered ranks of an RDM's strict upper triangle, stored as a
/// symmetric matrix with zero diagonal.
#[derive(Debug, Clone)]
pub struct RankedRdm {
    ranks: Array2<f64>,
    norm: f64,
}

impl RankedRdm {
    pub(crate) fn new(x: &EmbeddingMatrix, distance: Distance) -> Result<Self> {
        let n = x.n();
        if n < 3 {
            return Err(Error::param(format!("RSA needs at least 3 samples, got {n}")));
        }
        let rdm = dissimilarity_matrix(x, distance)?;
        let mut upper = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                upper.push(rdm[[i, j]]);
            }
        }
        let ranks = average_ranks(&upper);
        let mean = (upper.len() as f64 + 1.0) / 2.0;
        let mut out = Array2::zeros((n, n));
        let mut norm_sq = 0.0;
        let mut idx = 0;
        for i in 0..n {
            for j in i + 1..n {
                let r = ranks[idx] - mean;
                out[[i, j]] = r;
                out[[j, i]] = r;
                norm_sq += r * r;
                idx += 1;
            }
        }
        if !(norm_sq > 0.0) {
            return Err(Error::degenerate("RDM is constant; rank correlation undefined"));
        }
        Ok(Self {
            ranks: out,
            norm: norm_sq.sqrt(),
        })
    }
}

pub(crate) fn score(a: &RankedRdm, b: &RankedRdm, perm: Option<&Permutation>) -> f64 {
    // Both triangles are stored, so the full inner product counts each pair twice.
    let inner = 0.5 * permuted_inner(&a.ranks, &b.ranks, perm);
    (inner / (a.norm * b.norm)).clamp(-1.0, 1.0)
}

/// Spearman correlation between the vectorized upper triangles of the RDMs of
/// `x` and `y`.
pub fn rsa(x: &EmbeddingMatrix, y: &EmbeddingMatrix, distance: Distance) -> Result<f64> {
    use super::Similarity;
    super::MetricSpec::Rsa { distance }.score(x, y)
}
