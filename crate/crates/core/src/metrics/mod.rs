//! Raw representational-similarity metrics.
//!
//! Every metric is a pure function of two row-aligned [`EmbeddingMatrix`]
//! values. Internally each one splits into a per-side preparation (a centered
//! Gram matrix, a whitened basis, ranked dissimilarities, a neighbor graph)
//! and a cheap pairing step. Permuting the rows of `Y` only reindexes its
//! prepared form, so a null replicate never repeats the `O(n²d)` work:
//! [`Similarity::score_prepared`] takes the replicate permutation directly.

mod cca;
mod dissimilarity;
mod kernel;
pub(crate) mod linalg;
mod neighbors;
mod procrustes;
mod rsa;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::EmbeddingMatrix;
use crate::permutation::Permutation;

pub use cca::{cca_similarity, CcaVariant};
pub use dissimilarity::{dissimilarity_matrix, Distance};
pub use kernel::{cka, gram, rv_coefficient, Bandwidth, CkaEstimator, GramMatrix, Kernel};
pub use neighbors::{cknna, cycle_knn, knn_sets, mutual_knn, NeighborSets};
pub use procrustes::procrustes_similarity;
pub use rsa::{average_ranks, rsa, spearman};

/// A similarity statistic that can be evaluated under row permutations of its
/// second argument.
pub trait Similarity: Sync {
    type Prepared: Send + Sync;

    fn prepare(&self, x: &EmbeddingMatrix) -> Result<Self::Prepared>;

    /// Scores `a` against `b` with `b`'s rows reordered so that row `i` is
    /// original row `perm[i]`. `None` means the identity.
    fn score_prepared(
        &self,
        a: &Self::Prepared,
        b: &Self::Prepared,
        perm: Option<&Permutation>,
    ) -> Result<f64>;

    /// Known maximum of the statistic, or `None` when unbounded.
    fn s_max(&self) -> Option<f64>;

    fn name(&self) -> String;

    fn score(&self, x: &EmbeddingMatrix, y: &EmbeddingMatrix) -> Result<f64> {
        check_aligned(x, y)?;
        let a = self.prepare(x)?;
        let b = self.prepare(y)?;
        self.score_prepared(&a, &b, None)
    }

    /// All pairwise scores between two lists of prepared representations,
    /// with one permutation shared by every entry of `b`.
    fn score_matrix(
        &self,
        a: &[Self::Prepared],
        b: &[Self::Prepared],
        perm: Option<&Permutation>,
    ) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((a.len(), b.len()));
        for (i, pa) in a.iter().enumerate() {
            for (j, pb) in b.iter().enumerate() {
                out[[i, j]] = self.score_prepared(pa, pb, perm)?;
            }
        }
        Ok(out)
    }
}

pub(crate) fn check_aligned(x: &EmbeddingMatrix, y: &EmbeddingMatrix) -> Result<()> {
    if x.n() != y.n() {
        return Err(Error::ShapeMismatch(format!(
            "representations are not row-aligned: {} vs {} samples",
            x.n(),
            y.n()
        )));
    }
    Ok(())
}

/// Descriptor of a similarity metric and its parameters.
///
/// Every built-in metric is bounded above by 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum MetricSpec {
    Cka {
        kernel: Kernel,
        estimator: CkaEstimator,
    },
    Cca {
        variant: CcaVariant,
    },
    Rv,
    Rsa {
        distance: Distance,
    },
    Procrustes,
    Mknn {
        k: usize,
        distance: Distance,
    },
    CycleKnn {
        k: usize,
        distance: Distance,
    },
    Cknna {
        k: usize,
        distance: Distance,
    },
}

/// Optional parameters used when building a [`MetricSpec`] from its name.
#[derive(Debug, Clone, Default)]
pub struct MetricParams {
    pub k: Option<usize>,
    pub bandwidth: Option<Bandwidth>,
    pub distance: Option<Distance>,
    pub variance_keep: Option<f64>,
}

impl MetricSpec {
    /// Names accepted by [`MetricSpec::from_name`].
    pub const NAMES: &'static [&'static str] = &[
        "cka-linear",
        "cka-rbf",
        "cka-linear-unbiased",
        "cka-rbf-unbiased",
        "mean-cca",
        "svcca",
        "pwcca",
        "rv",
        "rsa",
        "procrustes",
        "mknn",
        "cycle-knn",
        "cknna",
    ];

    pub const DEFAULT_K: usize = 10;
    pub const DEFAULT_VARIANCE_KEEP: f64 = 0.99;

    pub fn cka_linear() -> Self {
        MetricSpec::Cka {
            kernel: Kernel::Linear,
            estimator: CkaEstimator::Biased,
        }
    }

    /// RBF kernel CKA with the median-heuristic bandwidth.
    pub fn cka_rbf() -> Self {
        Self::cka_rbf_with(Bandwidth::default())
    }

    pub fn cka_rbf_with(bandwidth: Bandwidth) -> Self {
        MetricSpec::Cka {
            kernel: Kernel::Rbf { bandwidth },
            estimator: CkaEstimator::Biased,
        }
    }

    pub fn cka_unbiased(kernel: Kernel) -> Self {
        MetricSpec::Cka {
            kernel,
            estimator: CkaEstimator::Unbiased,
        }
    }

    pub fn mean_cca() -> Self {
        MetricSpec::Cca {
            variant: CcaVariant::Mean,
        }
    }

    pub fn svcca(variance_keep: f64) -> Self {
        MetricSpec::Cca {
            variant: CcaVariant::Svcca { variance_keep },
        }
    }

    pub fn pwcca() -> Self {
        MetricSpec::Cca {
            variant: CcaVariant::Pwcca,
        }
    }

    /// RSA on correlation-distance RDMs.
    pub fn rsa() -> Self {
        MetricSpec::Rsa {
            distance: Distance::Correlation,
        }
    }

    /// Mutual k-NN with Euclidean neighborhoods.
    pub fn mknn(k: usize) -> Self {
        MetricSpec::Mknn {
            k,
            distance: Distance::Euclidean,
        }
    }

    pub fn cycle_knn(k: usize) -> Self {
        MetricSpec::CycleKnn {
            k,
            distance: Distance::Euclidean,
        }
    }

    pub fn cknna(k: usize) -> Self {
        MetricSpec::Cknna {
            k,
            distance: Distance::Euclidean,
        }
    }

    /// Builds a spec from a name in [`MetricSpec::NAMES`].
    pub fn from_name(name: &str, params: &MetricParams) -> Result<Self> {
        let k = params.k.unwrap_or(Self::DEFAULT_K);
        let bandwidth = params.bandwidth.unwrap_or_default();
        let spec = match name {
            "cka-linear" => Self::cka_linear(),
            "cka-rbf" => Self::cka_rbf_with(bandwidth),
            "cka-linear-unbiased" => Self::cka_unbiased(Kernel::Linear),
            "cka-rbf-unbiased" => Self::cka_unbiased(Kernel::Rbf { bandwidth }),
            "mean-cca" => Self::mean_cca(),
            "svcca" => Self::svcca(params.variance_keep.unwrap_or(Self::DEFAULT_VARIANCE_KEEP)),
            "pwcca" => Self::pwcca(),
            "rv" => MetricSpec::Rv,
            "rsa" => MetricSpec::Rsa {
                distance: params.distance.unwrap_or(Distance::Correlation),
            },
            "procrustes" => MetricSpec::Procrustes,
            "mknn" => MetricSpec::Mknn {
                k,
                distance: params.distance.unwrap_or(Distance::Euclidean),
            },
            "cycle-knn" => MetricSpec::CycleKnn {
                k,
                distance: params.distance.unwrap_or(Distance::Euclidean),
            },
            "cknna" => MetricSpec::Cknna {
                k,
                distance: params.distance.unwrap_or(Distance::Euclidean),
            },
            other => {
                return Err(Error::param(format!(
                    "unknown metric {other:?}; valid names: {}",
                    Self::NAMES.join(", ")
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks parameter domains that do not depend on the data.
    pub fn validate(&self) -> Result<()> {
        match self {
            MetricSpec::Cka { kernel, .. } => kernel.validate(),
            MetricSpec::Cca {
                variant: CcaVariant::Svcca { variance_keep },
            } if !(*variance_keep > 0.0 && *variance_keep <= 1.0) => Err(Error::param(format!(
                "variance_keep must lie in (0, 1], got {variance_keep}"
            ))),
            MetricSpec::Mknn { k, .. } | MetricSpec::CycleKnn { k, .. } | MetricSpec::Cknna { k, .. }
                if *k == 0 =>
            {
                Err(Error::param("neighborhood size k must be at least 1"))
            }
            _ => Ok(()),
        }
    }

    /// Short name, e.g. `cka-linear` or `mknn`.
    pub fn family_name(&self) -> &'static str {
        match self {
            MetricSpec::Cka {
                kernel: Kernel::Linear,
                estimator: CkaEstimator::Biased,
            } => "cka-linear",
            MetricSpec::Cka {
                kernel: Kernel::Rbf { .. },
                estimator: CkaEstimator::Biased,
            } => "cka-rbf",
            MetricSpec::Cka {
                kernel: Kernel::Linear,
                estimator: CkaEstimator::Unbiased,
            } => "cka-linear-unbiased",
            MetricSpec::Cka {
                kernel: Kernel::Rbf { .. },
                estimator: CkaEstimator::Unbiased,
            } => "cka-rbf-unbiased",
            MetricSpec::Cca { variant } => match variant {
                CcaVariant::Mean => "mean-cca",
                CcaVariant::Svcca { .. } => "svcca",
                CcaVariant::Pwcca => "pwcca",
            },
            MetricSpec::Rv => "rv",
            MetricSpec::Rsa { .. } => "rsa",
            MetricSpec::Procrustes => "procrustes",
            MetricSpec::Mknn { .. } => "mknn",
            MetricSpec::CycleKnn { .. } => "cycle-knn",
            MetricSpec::Cknna { .. } => "cknna",
        }
    }

    /// Whether `m(X, Y) = m(Y, X)` holds by construction.
    pub fn is_symmetric(&self) -> bool {
        !matches!(
            self,
            MetricSpec::Cca {
                variant: CcaVariant::Pwcca
            } | MetricSpec::CycleKnn { .. }
        )
    }
}

impl std::fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MetricSpec::Mknn { k, .. } | MetricSpec::CycleKnn { k, .. } | MetricSpec::Cknna { k, .. } => {
                write!(f, "{}(k={k})", self.family_name())
            }
            _ => f.write_str(self.family_name()),
        }
    }
}

/// Per-side preparation of any [`MetricSpec`].
#[derive(Debug, Clone)]
pub enum Prepared {
    Gram(kernel::CenteredGram),
    UnbiasedGram(kernel::UnbiasedGram),
    Whitened(cca::Whitened),
    Ranks(rsa::RankedRdm),
    Frame(procrustes::UnitFrame),
    Graph(neighbors::NeighborGraph),
}

fn mismatch() -> Error {
    Error::param("prepared representations come from different metric families")
}

impl Similarity for MetricSpec {
    type Prepared = Prepared;

    fn prepare(&self, x: &EmbeddingMatrix) -> Result<Prepared> {
        self.validate()?;
        Ok(match self {
            MetricSpec::Cka {
                kernel,
                estimator: CkaEstimator::Biased,
            } => Prepared::Gram(kernel::CenteredGram::new(x, kernel)?),
            MetricSpec::Cka {
                kernel,
                estimator: CkaEstimator::Unbiased,
            } => Prepared::UnbiasedGram(kernel::UnbiasedGram::new(x, kernel)?),
            MetricSpec::Rv => Prepared::Gram(kernel::CenteredGram::new(x, &Kernel::Linear)?),
            MetricSpec::Cca { variant } => Prepared::Whitened(cca::Whitened::new(x, variant)?),
            MetricSpec::Rsa { distance } => Prepared::Ranks(rsa::RankedRdm::new(x, *distance)?),
            MetricSpec::Procrustes => Prepared::Frame(procrustes::UnitFrame::new(x)?),
            MetricSpec::Mknn { k, distance } => {
                Prepared::Graph(neighbors::NeighborGraph::new(x, *k, *distance, neighbors::Extras::None)?)
            }
            MetricSpec::CycleKnn { k, distance } => {
                Prepared::Graph(neighbors::NeighborGraph::new(x, *k, *distance, neighbors::Extras::Cycles)?)
            }
            MetricSpec::Cknna { k, distance } => Prepared::Graph(neighbors::NeighborGraph::new(
                x,
                *k,
                *distance,
                neighbors::Extras::CenteredAdjacency,
            )?),
        })
    }

    fn score_prepared(&self, a: &Prepared, b: &Prepared, perm: Option<&Permutation>) -> Result<f64> {
        match (self, a, b) {
            (MetricSpec::Cka { .. } | MetricSpec::Rv, Prepared::Gram(a), Prepared::Gram(b)) => {
                Ok(kernel::cka_biased(a, b, perm))
            }
            (MetricSpec::Cka { .. }, Prepared::UnbiasedGram(a), Prepared::UnbiasedGram(b)) => {
                kernel::cka_unbiased(a, b, perm)
            }
            (MetricSpec::Cca { variant }, Prepared::Whitened(a), Prepared::Whitened(b)) => {
                cca::score(variant, a, b, perm)
            }
            (MetricSpec::Rsa { .. }, Prepared::Ranks(a), Prepared::Ranks(b)) => Ok(rsa::score(a, b, perm)),
            (MetricSpec::Procrustes, Prepared::Frame(a), Prepared::Frame(b)) => procrustes::score(a, b, perm),
            (MetricSpec::Mknn { .. }, Prepared::Graph(a), Prepared::Graph(b)) => neighbors::mknn_score(a, b, perm),
            (MetricSpec::CycleKnn { .. }, Prepared::Graph(a), Prepared::Graph(b)) => {
                neighbors::cycle_score(a, b, perm)
            }
            (MetricSpec::Cknna { .. }, Prepared::Graph(a), Prepared::Graph(b)) => neighbors::cknna_score(a, b, perm),
            _ => Err(mismatch()),
        }
    }

    fn s_max(&self) -> Option<f64> {
        Some(1.0)
    }

    fn name(&self) -> String {
        self.to_string()
    }

    fn score_matrix(&self, a: &[Prepared], b: &[Prepared], perm: Option<&Permutation>) -> Result<Array2<f64>> {
        fn grams(list: &[Prepared]) -> Option<Vec<&kernel::CenteredGram>> {
            list.iter()
                .map(|p| match p {
                    Prepared::Gram(g) => Some(g),
                    _ => None,
                })
                .collect()
        }
        // A single cell goes through the scalar path so that one-layer stacks
        // reproduce scalar results bit for bit.
        if a.len() * b.len() > 1 {
            if let (Some(ga), Some(gb)) = (grams(a), grams(b)) {
                return Ok(kernel::cka_biased_matrix(&ga, &gb, perm));
            }
        }
        let mut out = Array2::zeros((a.len(), b.len()));
        for (i, pa) in a.iter().enumerate() {
            for (j, pb) in b.iter().enumerate() {
                out[[i, j]] = self.score_prepared(pa, pb, perm)?;
            }
        }
        Ok(out)
    }
}

/// Evaluates `spec` on a pair of row-aligned matrices.
pub fn similarity(x: &EmbeddingMatrix, y: &EmbeddingMatrix, spec: &MetricSpec) -> Result<f64> {
    spec.score(x, y)
}

/// Wraps a similarity and applies a strictly increasing map to its output.
///
/// Rank-based quantities (p-values, the position of the observed score among
/// its nulls) are unchanged by such a map.
pub struct Transformed<S, G> {
    pub inner: S,
    pub map: G,
    pub s_max: Option<f64>,
}

impl<S, G> Similarity for Transformed<S, G>
where
    S: Similarity,
    G: Fn(f64) -> f64 + Sync,
{
    type Prepared = S::Prepared;

    fn prepare(&self, x: &EmbeddingMatrix) -> Result<Self::Prepared> {
        self.inner.prepare(x)
    }

    fn score_prepared(&self, a: &Self::Prepared, b: &Self::Prepared, perm: Option<&Permutation>) -> Result<f64> {
        Ok((self.map)(self.inner.score_prepared(a, b, perm)?))
    }

    fn s_max(&self) -> Option<f64> {
        self.s_max
    }

    fn name(&self) -> String {
        format!("g({})", self.inner.name())
    }
}
