//! Kernel alignment: linear, RBF and unbiased CKA, and the RV coefficient.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::linalg::{double_center, frobenius_sq, gram_linear, permute_symmetric, permuted_inner, sq_dists_from_gram};
use crate::error::{Error, Result};
use crate::matrix::{center_array, EmbeddingMatrix};
use crate::permutation::Permutation;

/// RBF bandwidth selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Bandwidth {
    Fixed { sigma: f64 },
    /// `σ = multiplier × median pairwise Euclidean distance`.
    Median { multiplier: f64 },
}

impl Default for Bandwidth {
    fn default() -> Self {
        Bandwidth::Median { multiplier: 1.0 }
    }
}

/// Parses `median`, `median:<multiplier>` or a fixed positive `σ`.
impl std::str::FromStr for Bandwidth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::param(format!("bad bandwidth {s:?}; expected a positive number, median or median:<multiplier>"));
        let b = match s.strip_prefix("median") {
            Some("") => Bandwidth::default(),
            Some(rest) => Bandwidth::Median {
                multiplier: rest.strip_prefix(':').ok_or_else(bad)?.parse().map_err(|_| bad())?,
            },
            None => Bandwidth::Fixed {
                sigma: s.parse().map_err(|_| bad())?,
            },
        };
        Kernel::Rbf { bandwidth: b }.validate()?;
        Ok(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Kernel {
    #[default]
    Linear,
    Rbf {
        bandwidth: Bandwidth,
    },
}

impl Kernel {
    pub(crate) fn validate(&self) -> Result<()> {
        match self {
            Kernel::Rbf {
                bandwidth: Bandwidth::Fixed { sigma },
            } if !(*sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::param(format!("RBF bandwidth must be positive, got {sigma}")))
            }
            Kernel::Rbf {
                bandwidth: Bandwidth::Median { multiplier },
            } if !(*multiplier > 0.0 && multiplier.is_finite()) => Err(Error::param(format!(
                "median-heuristic multiplier must be positive, got {multiplier}"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CkaEstimator {
    #[default]
    Biased,
    Unbiased,
}

/// A symmetric `n × n` kernel matrix `K_ij = k(x_i, x_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix(pub Array2<f64>);

impl GramMatrix {
    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }
}

/// Uncentered Gram matrix of the rows of `x`.
pub fn gram(x: &EmbeddingMatrix, kernel: &Kernel) -> Result<GramMatrix> {
    kernel.validate()?;
    Ok(GramMatrix(kernel_matrix(x.values(), kernel)?))
}

fn kernel_matrix(x: &Array2<f64>, kernel: &Kernel) -> Result<Array2<f64>> {
    let g = gram_linear(x.view());
    match kernel {
        Kernel::Linear => Ok(g),
        Kernel::Rbf { bandwidth } => {
            let sq = sq_dists_from_gram(&g);
            let sigma = match *bandwidth {
                Bandwidth::Fixed { sigma } => sigma,
                Bandwidth::Median { multiplier } => multiplier * median_distance(&sq),
            };
            if !(sigma > 0.0) {
                return Err(Error::degenerate(
                    "median pairwise distance is zero; RBF bandwidth would be 0",
                ));
            }
            let scale = -1.0 / (2.0 * sigma * sigma);
            Ok(sq.mapv(|d2| (d2 * scale).exp()))
        }
    }
}

/// Median of the strict-upper-triangle Euclidean distances.
fn median_distance(sq: &Array2<f64>) -> f64 {
    let n = sq.nrows();
    let mut v: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            v.push(sq[[i, j]]);
        }
    }
    let m = v.len();
    let mid = m / 2;
    // Order statistics of squared distances are squares of those of distances.
    let (_, hi, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let hi = hi.sqrt();
    if m % 2 == 1 {
        hi
    } else {
        let lo = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo.sqrt() + hi)
    }
}

/// Centered kernel matrix `H K H` and its Frobenius norm.
#[derive(Debug, Clone)]
pub struct CenteredGram {
    k: Array2<f64>,
    norm: f64,
}

impl CenteredGram {
    pub(crate) fn new(x: &EmbeddingMatrix, kernel: &Kernel) -> Result<Self> {
        let k = match kernel {
            Kernel::Linear => gram_linear(center_array(x.view()).view()),
            Kernel::Rbf { .. } => double_center(&kernel_matrix(x.values(), kernel)?),
        };
        let norm = frobenius_sq(&k).sqrt();
        if !(norm > 0.0) {
            return Err(Error::degenerate(
                "centered Gram matrix is zero (constant representation)",
            ));
        }
        Ok(Self { k, norm })
    }
}

pub(crate) fn cka_biased(a: &CenteredGram, b: &CenteredGram, perm: Option<&Permutation>) -> f64 {
    (permuted_inner(&a.k, &b.k, perm) / (a.norm * b.norm)).clamp(0.0, 1.0)
}

/// All pairwise biased CKA values with one permutation shared by every `b`.
pub(crate) fn cka_biased_matrix(a: &[&CenteredGram], b: &[&CenteredGram], perm: Option<&Permutation>) -> Array2<f64> {
    let n = a[0].k.nrows();
    let flat = |m: &Array2<f64>| m.as_slice().expect("standard layout").to_vec();
    let rows_a: Vec<f64> = a.iter().flat_map(|g| flat(&g.k)).collect();
    let rows_b: Vec<f64> = b
        .iter()
        .flat_map(|g| match perm {
            Some(p) => flat(&permute_symmetric(&g.k, p)),
            None => flat(&g.k),
        })
        .collect();
    let ma = Array2::from_shape_vec((a.len(), n * n), rows_a).expect("shape");
    let mb = Array2::from_shape_vec((b.len(), n * n), rows_b).expect("shape");
    let mut out = ma.dot(&mb.t());
    for (i, ga) in a.iter().enumerate() {
        for (j, gb) in b.iter().enumerate() {
            out[[i, j]] = (out[[i, j]] / (ga.norm * gb.norm)).clamp(0.0, 1.0);
        }
    }
    out
}

/// Pieces of the unbiased HSIC estimator for one side.
#[derive(Debug, Clone)]
pub struct UnbiasedGram {
    /// `H K H` with its diagonal set to zero.
    k: Array2<f64>,
    row_sums: Vec<f64>,
    total: f64,
    self_hsic: f64,
}

impl UnbiasedGram {
    pub(crate) fn new(x: &EmbeddingMatrix, kernel: &Kernel) -> Result<Self> {
        let n = x.n();
        if n < 4 {
            return Err(Error::param(format!(
                "unbiased CKA needs at least 4 samples, got {n}"
            )));
        }
        let mut k = double_center(&kernel_matrix(x.values(), kernel)?);
        for i in 0..n {
            k[[i, i]] = 0.0;
        }
        let row_sums: Vec<f64> = k.sum_axis(Axis(1)).to_vec();
        let total = row_sums.iter().sum();
        let mut g = Self {
            k,
            row_sums,
            total,
            self_hsic: 0.0,
        };
        g.self_hsic = hsic_unbiased(&g, &g, None);
        if !(g.self_hsic > 0.0) {
            return Err(Error::degenerate(format!(
                "unbiased HSIC of a representation with itself is {} (constant representation)",
                g.self_hsic
            )));
        }
        Ok(g)
    }
}

fn hsic_unbiased(a: &UnbiasedGram, b: &UnbiasedGram, perm: Option<&Permutation>) -> f64 {
    let n = a.k.nrows() as f64;
    let trace = permuted_inner(&a.k, &b.k, perm);
    let cross: f64 = match perm {
        None => a.row_sums.iter().zip(&b.row_sums).map(|(x, y)| x * y).sum(),
        Some(p) => a
            .row_sums
            .iter()
            .zip(p.as_slice())
            .map(|(x, &j)| x * b.row_sums[j])
            .sum(),
    };
    (trace + a.total * b.total / ((n - 1.0) * (n - 2.0)) - 2.0 / (n - 2.0) * cross) / (n * (n - 3.0))
}

pub(crate) fn cka_unbiased(a: &UnbiasedGram, b: &UnbiasedGram, perm: Option<&Permutation>) -> Result<f64> {
    Ok((hsic_unbiased(a, b, perm) / (a.self_hsic * b.self_hsic).sqrt()).min(1.0))
}

/// Centered kernel alignment between `x` and `y`.
pub fn cka(
    x: &EmbeddingMatrix,
    y: &EmbeddingMatrix,
    kernel: &Kernel,
    estimator: CkaEstimator,
) -> Result<f64> {
    use super::Similarity;
    super::MetricSpec::Cka {
        kernel: *kernel,
        estimator,
    }
    .score(x, y)
}

/// RV coefficient of the column-centered inputs.
pub fn rv_coefficient(x: &EmbeddingMatrix, y: &EmbeddingMatrix) -> Result<f64> {
    use super::Similarity;
    super::MetricSpec::Rv.score(x, y)
}
