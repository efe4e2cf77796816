//! Exact k-nearest-neighbor sets and the neighborhood metrics built on them:
//! mutual k-NN overlap, cycle-kNN and CKNNA.
//!
//! Neighbors are ranked by `(distance, index)`, so ties go to the lower
//! sample index. When `Y`'s rows are permuted, each anchor's neighbor set is
//! the image of the unpermuted set under the inverse permutation, unless the
//! anchor has a distance tie straddling the k-th position. Those anchors are
//! re-selected in the permuted index order, which keeps the permuted result
//! identical to recomputing from scratch on the permuted matrix.

use std::borrow::Cow;

use ndarray::Array2;

use super::dissimilarity::{dissimilarity_matrix, Distance};
use super::linalg::{double_center, frobenius_sq};
use crate::error::{Error, Result};
use crate::matrix::EmbeddingMatrix;
use crate::permutation::Permutation;

/// The `k` nearest neighbors of every anchor, excluding the anchor itself.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSets {
    k: usize,
    sets: Vec<Vec<usize>>,
    boundary_tie: Vec<bool>,
}

impl NeighborSets {
    /// Selects neighbors from a full dissimilarity matrix.
    pub fn from_distances(dist: &Array2<f64>, k: usize) -> Result<Self> {
        let n = dist.nrows();
        check_k(k, n)?;
        let mut buf = Vec::with_capacity(n);
        let mut sets = Vec::with_capacity(n);
        let mut boundary_tie = Vec::with_capacity(n);
        for i in 0..n {
            let (set, tie) = select(n, i, k, |j| dist[[i, j]], &mut buf);
            sets.push(set);
            boundary_tie.push(tie);
        }
        Ok(Self { k, sets, boundary_tie })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.sets.len()
    }

    /// Neighbors of `i`, nearest first.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.sets[i]
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.sets[i].contains(&j)
    }

    /// Whether anchor `i` has a distance tie between its k-th and (k+1)-th
    /// neighbor, so that the tie rule decided membership.
    pub fn has_boundary_tie(&self, i: usize) -> bool {
        self.boundary_tie[i]
    }

    pub fn as_slices(&self) -> &[Vec<usize>] {
        &self.sets
    }
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k >= n {
        return Err(Error::param(format!(
            "neighborhood size k = {k} must satisfy 1 <= k < n = {n}"
        )));
    }
    Ok(())
}

/// The `k` smallest `(key(j), j)` over `j ≠ i`, plus whether the k-th and
/// (k+1)-th keys tie.
fn select(
    n: usize,
    i: usize,
    k: usize,
    key: impl Fn(usize) -> f64,
    buf: &mut Vec<(f64, usize)>,
) -> (Vec<usize>, bool) {
    buf.clear();
    buf.extend((0..n).filter(|&j| j != i).map(|j| (key(j), j)));
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let mut tie = false;
    if k < buf.len() {
        let (head, next, _) = buf.select_nth_unstable_by(k, cmp);
        let kth = head.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max);
        tie = kth == next.0;
    }
    let head = &mut buf[..k];
    head.sort_unstable_by(cmp);
    (head.iter().map(|e| e.1).collect(), tie)
}

/// Exact k-NN sets of the rows of `x` under `distance`.
pub fn knn_sets(x: &EmbeddingMatrix, k: usize, distance: Distance) -> Result<NeighborSets> {
    check_k(k, x.n())?;
    NeighborSets::from_distances(&dissimilarity_matrix(x, distance)?, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Extras {
    None,
    Cycles,
    CenteredAdjacency,
}

#[derive(Debug, Clone)]
pub struct NeighborGraph {
    sets: NeighborSets,
    dist: Array2<f64>,
    cycles: Option<Vec<Vec<usize>>>,
    centered_adjacency: Option<(Array2<f64>, f64)>,
}

impl NeighborGraph {
    pub(crate) fn new(x: &EmbeddingMatrix, k: usize, distance: Distance, extras: Extras) -> Result<Self> {
        check_k(k, x.n())?;
        let dist = dissimilarity_matrix(x, distance)?;
        let sets = NeighborSets::from_distances(&dist, k)?;
        let cycles = (extras == Extras::Cycles).then(|| cycle_sets(&sets.sets));
        let centered_adjacency = if extras == Extras::CenteredAdjacency {
            let adj = undirected(&sets.sets);
            let n = x.n();
            let mut dense = Array2::zeros((n, n));
            for (i, row) in adj.iter().enumerate() {
                for &j in row {
                    dense[[i, j]] = 1.0;
                }
            }
            let centered = double_center(&dense);
            let norm = frobenius_sq(&centered).sqrt();
            if !(norm > 0.0) {
                return Err(Error::degenerate("centered k-NN adjacency is zero"));
            }
            Some((centered, norm))
        } else {
            None
        };
        Ok(Self {
            sets,
            dist,
            cycles,
            centered_adjacency,
        })
    }

    fn n(&self) -> usize {
        self.sets.n()
    }

    /// Neighbor sets of the row-permuted representation.
    fn sets_under(&self, perm: Option<&Permutation>) -> Cow<'_, [Vec<usize>]> {
        let Some(perm) = perm else {
            return Cow::Borrowed(&self.sets.sets);
        };
        let n = self.n();
        let k = self.sets.k;
        let p = perm.as_slice();
        let inv = perm.inverse();
        let inv = inv.as_slice();
        let mut buf = Vec::new();
        let sets = (0..n)
            .map(|i| {
                let a = p[i];
                if self.sets.boundary_tie[a] {
                    select(n, i, k, |j| self.dist[[a, p[j]]], &mut buf).0
                } else {
                    self.sets.sets[a].iter().map(|&m| inv[m]).collect()
                }
            })
            .collect();
        Cow::Owned(sets)
    }
}

fn check_pair(a: &NeighborGraph, b: &NeighborGraph) -> Result<()> {
    if a.n() != b.n() || a.sets.k != b.sets.k {
        return Err(Error::ShapeMismatch(format!(
            "neighbor graphs differ: n = {} vs {}, k = {} vs {}",
            a.n(),
            b.n(),
            a.sets.k,
            b.sets.k
        )));
    }
    Ok(())
}

/// `C(i) = { j ∈ N(i) : i ∈ N(j) }`.
fn cycle_sets(sets: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let sorted: Vec<Vec<usize>> = sets
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.sort_unstable();
            s
        })
        .collect();
    sets.iter()
        .enumerate()
        .map(|(i, s)| {
            s.iter()
                .copied()
                .filter(|&j| sorted[j].binary_search(&i).is_ok())
                .collect()
        })
        .collect()
}

/// Adjacency lists of the symmetrized k-NN graph, sorted and deduplicated.
fn undirected(sets: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut adj: Vec<Vec<usize>> = sets.to_vec();
    for (i, s) in sets.iter().enumerate() {
        for &j in s {
            adj[j].push(i);
        }
    }
    for row in &mut adj {
        row.sort_unstable();
        row.dedup();
    }
    adj
}

/// Counts `|A(i) ∩ B(i)|` per anchor using a stamp array.
fn overlaps<'a>(
    a: &'a [Vec<usize>],
    b: &'a [Vec<usize>],
) -> impl Iterator<Item = (usize, usize)> + 'a {
    let mut stamp = vec![usize::MAX; a.len()];
    a.iter().zip(b).enumerate().map(move |(i, (sa, sb))| {
        for &j in sa {
            stamp[j] = i;
        }
        let shared = sb.iter().filter(|&&j| stamp[j] == i).count();
        (sa.len(), shared)
    })
}

pub(crate) fn mknn_score(a: &NeighborGraph, b: &NeighborGraph, perm: Option<&Permutation>) -> Result<f64> {
    check_pair(a, b)?;
    let sb = b.sets_under(perm);
    let shared: usize = overlaps(&a.sets.sets, &sb).map(|(_, s)| s).sum();
    Ok(shared as f64 / (a.n() * a.sets.k) as f64)
}

pub(crate) fn cycle_score(a: &NeighborGraph, b: &NeighborGraph, perm: Option<&Permutation>) -> Result<f64> {
    check_pair(a, b)?;
    let ca = a
        .cycles
        .as_ref()
        .ok_or_else(|| Error::param("cycle-kNN representation prepared without cycle sets"))?;
    let cb = cycle_sets(&b.sets_under(perm));
    let total: f64 = overlaps(ca, &cb)
        .map(|(size, shared)| shared as f64 / size.max(1) as f64)
        .sum();
    Ok(total / a.n() as f64)
}

pub(crate) fn cknna_score(a: &NeighborGraph, b: &NeighborGraph, perm: Option<&Permutation>) -> Result<f64> {
    check_pair(a, b)?;
    let (ca, norm_a) = a
        .centered_adjacency
        .as_ref()
        .ok_or_else(|| Error::param("CKNNA representation prepared without adjacency"))?;
    let adj = undirected(&b.sets_under(perm));
    let n = a.n() as f64;
    // ⟨H A_x H, H A_y H⟩ = ⟨H A_x H, A_y⟩ because H is idempotent.
    let mut inner = 0.0;
    let mut entries = 0.0;
    let mut deg_sq = 0.0;
    for (i, row) in adj.iter().enumerate() {
        for &j in row {
            inner += ca[[i, j]];
        }
        let deg = row.len() as f64;
        entries += deg;
        deg_sq += deg * deg;
    }
    // ‖H A H‖² = ‖A‖² − (2/n)‖A1‖² + (1ᵀA1)²/n² for a symmetric 0/1 matrix A.
    let norm_b_sq = entries - 2.0 / n * deg_sq + entries * entries / (n * n);
    if !(norm_b_sq > 0.0) {
        return Err(Error::degenerate("centered k-NN adjacency is zero"));
    }
    Ok((inner / (norm_a * norm_b_sq.sqrt())).clamp(-1.0, 1.0))
}

/// Mean fraction of shared k-nearest neighbors.
pub fn mutual_knn(x: &EmbeddingMatrix, y: &EmbeddingMatrix, k: usize, distance: Distance) -> Result<f64> {
    use super::Similarity;
    super::MetricSpec::Mknn { k, distance }.score(x, y)
}

/// Overlap of mutual-neighbor (cycle) sets, normalized by `X`'s cycle sizes.
pub fn cycle_knn(x: &EmbeddingMatrix, y: &EmbeddingMatrix, k: usize, distance: Distance) -> Result<f64> {
    use super::Similarity;
    super::MetricSpec::CycleKnn { k, distance }.score(x, y)
}

/// CKA between the centered symmetrized k-NN adjacency matrices.
pub fn cknna(x: &EmbeddingMatrix, y: &EmbeddingMatrix, k: usize, distance: Distance) -> Result<f64> {
    use super::Similarity;
    super::MetricSpec::Cknna { k, distance }.score(x, y)
}
