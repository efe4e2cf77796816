//! Canonical correlation summaries: mean CCA, SVCCA and PWCCA.
//!
//! Each side is reduced to a whitened basis `W` (n × r, approximately
//! orthonormal columns spanning the centered column space). Canonical
//! correlations are then the singular values of `W_xᵀ W_y`. Whitening adds
//! `λ I` with `λ = 1e-8 · tr(Σ) / d` to the covariance before the inverse
//! square root, which keeps `d ≈ n` inputs well defined.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::linalg::{from_nalgebra, permute_rows, singular_values, svd_sorted, symmetric_eigen_sorted};
use crate::error::{Error, Result};
use crate::matrix::{center_array, EmbeddingMatrix};
use crate::permutation::Permutation;

const RIDGE: f64 = 1e-8;
/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CcaVariant {
    /// Mean of all canonical correlations.
    Mean,
    /// Mean CCA after keeping the leading principal components that reach
    /// `variance_keep` of each side's spectral energy.
    Svcca { variance_keep: f64 },
    /// Canonical correlations weighted by how much of `X` each canonical
    /// variate accounts for. Directional: only `X` supplies the weights.
    Pwcca,
}

#[derive(Debug, Clone)]
pub struct Whitened {
    w: Array2<f64>,
    /// `X_cᵀ W`, used for PWCCA weights.
    loadings: Option<Array2<f64>>,
}

impl Whitened {
    pub(crate) fn new(x: &EmbeddingMatrix, variant: &CcaVariant) -> Result<Self> {
        let (n, d) = (x.n(), x.d());
        let xc = center_array(x.view());
        let scale = (n - 1) as f64;

        // Covariance spectrum from whichever of XᵀX / XXᵀ is smaller.
        let use_cov = d <= n;
        let (eig, vecs) = if use_cov {
            let cov = xc.t().dot(&xc) / scale;
            symmetric_eigen_sorted(cov.view())
        } else {
            let g = xc.dot(&xc.t());
            let (e, u) = symmetric_eigen_sorted(g.view());
            (e.into_iter().map(|v| v / scale).collect(), u)
        };
        let e_max = eig.first().copied().unwrap_or(0.0);
        if !(e_max > 0.0) {
            return Err(Error::degenerate(
                "covariance has no positive eigenvalue (constant representation)",
            ));
        }
        let rank = eig.iter().take_while(|&&e| e > RANK_TOL * e_max).count();
        let trace: f64 = eig.iter().filter(|e| **e > 0.0).sum();

        let (keep, ridge) = match variant {
            CcaVariant::Svcca { variance_keep } => {
                let target = variance_keep * trace * (1.0 - 1e-12);
                let mut acc = 0.0;
                let mut p = 0;
                while p < rank {
                    acc += eig[p];
                    p += 1;
                    if acc >= target {
                        break;
                    }
                }
                (p, RIDGE * acc / p as f64)
            }
            _ => (rank, RIDGE * trace / d as f64),
        };

        let vecs = from_nalgebra(&vecs);
        let w = if use_cov {
            let mut w = xc.dot(&vecs.slice(s![.., ..keep]));
            for (i, mut col) in w.columns_mut().into_iter().enumerate() {
                col /= (eig[i] + ridge).sqrt() * scale.sqrt();
            }
            w
        } else {
            let mut w = vecs.slice(s![.., ..keep]).to_owned();
            for (i, mut col) in w.columns_mut().into_iter().enumerate() {
                col *= (eig[i] / (eig[i] + ridge)).sqrt();
            }
            w
        };
        let loadings = matches!(variant, CcaVariant::Pwcca).then(|| xc.t().dot(&w));
        Ok(Self { w, loadings })
    }

    pub(crate) fn rank(&self) -> usize {
        self.w.ncols()
    }
}

pub(crate) fn score(variant: &CcaVariant, a: &Whitened, b: &Whitened, perm: Option<&Permutation>) -> Result<f64> {
    let bw = permute_rows(&b.w, perm);
    let t = a.w.t().dot(&bw);
    match variant {
        CcaVariant::Mean | CcaVariant::Svcca { .. } => {
            let rho = singular_values(t.view())?;
            let r = a.rank().min(b.rank());
            Ok((rho[..r].iter().sum::<f64>() / r as f64).clamp(0.0, 1.0))
        }
        CcaVariant::Pwcca => {
            let loadings = a
                .loadings
                .as_ref()
                .ok_or_else(|| Error::param("PWCCA representation prepared without loadings"))?;
            let svd = svd_sorted(t.view())?;
            let u = from_nalgebra(&svd.u);
            let r = a.rank().min(b.rank());
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..r {
                let h = loadings.dot(&u.column(i));
                let alpha: f64 = h.iter().map(|v| v.abs()).sum();
                num += alpha * svd.s[i];
                den += alpha;
            }
            if !(den > 0.0) {
                return Err(Error::degenerate("PWCCA weights sum to zero"));
            }
            Ok((num / den).clamp(0.0, 1.0))
        }
    }
}

/// CCA-family similarity of `x` and `y`.
pub fn cca_similarity(x: &EmbeddingMatrix, y: &EmbeddingMatrix, variant: CcaVariant) -> Result<f64> {
    use super::Similarity;
    super::MetricSpec::Cca { variant }.score(x, y)
}
