use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::linalg::{dot, sq_dist, symmetric_from_pairs};
use crate::error::{Error, Result};
use crate::matrix::EmbeddingMatrix;

/// Pairwise dissimilarity between representation vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distance {
    #[default]
    Euclidean,
    /// `1 − cos(u, v)`; rows must have nonzero norm.
    Cosine,
    /// `1 − corr(u, v)`; rows must have nonzero variance.
    Correlation,
}

impl Distance {
    pub fn name(&self) -> &'static str {
        match self {
            Distance::Euclidean => "euclidean",
            Distance::Cosine => "cosine",
            Distance::Correlation => "correlation",
        }
    }
}

impl std::str::FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Distance::Euclidean),
            "cosine" => Ok(Distance::Cosine),
            "correlation" | "correlation-distance" => Ok(Distance::Correlation),
            other => Err(Error::param(format!(
                "unknown distance {other:?}; valid: euclidean, cosine, correlation"
            ))),
        }
    }
}

/// The `n × n` dissimilarity matrix (RDM) of the rows of `x`.
///
/// Entries are computed once per unordered pair and mirrored, so the matrix
/// is exactly symmetric with a zero diagonal.
pub fn dissimilarity_matrix(x: &EmbeddingMatrix, distance: Distance) -> Result<Array2<f64>> {
    let n = x.n();
    match distance {
        Distance::Euclidean => Ok(symmetric_from_pairs(n, 0.0, |i, j| {
            sq_dist(x.row(i), x.row(j)).sqrt()
        })),
        Distance::Cosine | Distance::Correlation => {
            let rows = unit_rows(x, distance == Distance::Correlation)?;
            let d = x.d();
            Ok(symmetric_from_pairs(n, 0.0, |i, j| {
                1.0 - dot(&rows[i * d..(i + 1) * d], &rows[j * d..(j + 1) * d])
            }))
        }
    }
}

/// Row-normalized (optionally row-centered) copy of `x`, row-major.
fn unit_rows(x: &EmbeddingMatrix, center: bool) -> Result<Vec<f64>> {
    let d = x.d();
    let mut out = Vec::with_capacity(x.n() * d);
    for i in 0..x.n() {
        let row = x.row(i);
        let mean = if center {
            row.iter().sum::<f64>() / d as f64
        } else {
            0.0
        };
        let start = out.len();
        out.extend(row.iter().map(|v| v - mean));
        let norm = dot(&out[start..], &out[start..]).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            let what = if center { "zero variance" } else { "zero norm" };
            return Err(Error::degenerate(format!(
                "row {i} has {what}; {} distance is undefined",
                if center { "correlation" } else { "cosine" }
            )));
        }
        out[start..].iter_mut().for_each(|v| *v /= norm);
    }
    Ok(out)
}
