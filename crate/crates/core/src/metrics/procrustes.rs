//! Orthogonal Procrustes similarity.
//!
//! Both sides are centered and scaled to unit Frobenius norm. For such `X`,
//! `Y` the optimal rotation `Q* = V Uᵀ` (from `XᵀY = U Σ Vᵀ`) leaves
//! `‖X − Y Q*‖² = 2 − 2‖XᵀY‖_*`, so the similarity
//! `1 − ‖X − Y Q*‖² / (‖X‖² + ‖Y‖²)` reduces to the nuclear norm `‖XᵀY‖_*`.

use ndarray::Array2;

use super::linalg::{frobenius_sq, permute_rows, singular_values};
use crate::error::{Error, Result};
use crate::matrix::{center_array, EmbeddingMatrix};
use crate::permutation::Permutation;

#[derive(Debug, Clone)]
pub struct UnitFrame {
    x: Array2<f64>,
}

impl UnitFrame {
    pub(crate) fn new(x: &EmbeddingMatrix) -> Result<Self> {
        let mut xc = center_array(x.view());
        let norm = frobenius_sq(&xc).sqrt();
        if !(norm > 0.0) {
            return Err(Error::degenerate("centered representation has zero norm"));
        }
        xc /= norm;
        Ok(Self { x: xc })
    }
}

pub(crate) fn score(a: &UnitFrame, b: &UnitFrame, perm: Option<&Permutation>) -> Result<f64> {
    if a.x.ncols() != b.x.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "Procrustes needs equal widths, got {} and {}",
            a.x.ncols(),
            b.x.ncols()
        )));
    }
    let cross = a.x.t().dot(&permute_rows(&b.x, perm));
    let nuclear: f64 = singular_values(cross.view())?.iter().sum();
    Ok(nuclear.clamp(0.0, 1.0))
}

/// Procrustes similarity in `[0, 1]`; requires equal widths.
pub fn procrustes_similarity(x: &EmbeddingMatrix, y: &EmbeddingMatrix) -> Result<f64> {
    use super::Similarity;
    super::MetricSpec::Procrustes.score(x, y)
}
