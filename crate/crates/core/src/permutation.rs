//! Deterministic permutation source for null replicates.
//!
//! Replicate `k` of a plan draws its permutation from a ChaCha8 stream seeded
//! with `split_seed(seed, k)`. The permutation therefore depends only on
//! `(seed, k, n)`, never on which thread evaluates it or in what order.
//!
//! `split_seed` is the SplitMix64 finalizer applied to
//! `seed + (k + 1) · 0x9E3779B97F4A7C15` (wrapping), which gives well-spread,
//! distinct 64-bit seeds for consecutive replicate indices.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::EmbeddingMatrix;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Derives the seed of stream `index` from a master seed.
pub fn split_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The random generator used everywhere a derived seed is consumed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A bijection on `0..n`, stored as the image of each index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    /// Validates that `map` is a bijection on `0..map.len()`.
    pub fn from_vec(map: Vec<usize>) -> Result<Self> {
        let n = map.len();
        let mut seen = vec![false; n];
        for &m in &map {
            if m >= n || std::mem::replace(&mut seen[m], true) {
                return Err(Error::param(format!(
                    "not a permutation of 0..{n}: {map:?}"
                )));
            }
        }
        Ok(Self(map))
    }

    /// A uniform draw from the symmetric group via Fisher–Yates.
    pub fn random(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut map: Vec<usize> = (0..n).collect();
        map.shuffle(rng);
        Self(map)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (i, &p) in self.0.iter().enumerate() {
            inv[p] = i;
        }
        Self(inv)
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &p)| i == p)
    }
}

impl std::ops::Index<usize> for Permutation {
    type Output = usize;

    fn index(&self, i: usize) -> &usize {
        &self.0[i]
    }
}

/// Seed, replicate count and length of a family of null permutations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PermutationPlan {
    seed: u64,
    replicates: usize,
    n: usize,
}

impl PermutationPlan {
    pub fn new(seed: u64, replicates: usize, n: usize) -> Self {
        Self {
            seed,
            replicates,
            n,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn replicates(&self) -> usize {
        self.replicates
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Seed of replicate `index` (zero-based).
    pub fn replicate_seed(&self, index: usize) -> u64 {
        split_seed(self.seed, index as u64)
    }

    pub fn replicate_seeds(&self) -> Vec<u64> {
        (0..self.replicates).map(|k| self.replicate_seed(k)).collect()
    }

    /// The permutation of replicate `index`, with `index < replicates`.
    pub fn permutation(&self, index: usize) -> Result<Permutation> {
        if index >= self.replicates {
            return Err(Error::ReplicateOutOfRange {
                index,
                replicates: self.replicates,
            });
        }
        let mut rng = rng_from_seed(self.replicate_seed(index));
        Ok(Permutation::random(self.n, &mut rng))
    }
}

/// Row `i` of the result is row `perm[i]` of `y`.
pub fn apply_permutation(y: &EmbeddingMatrix, perm: &Permutation) -> Result<EmbeddingMatrix> {
    if perm.len() != y.n() {
        return Err(Error::ShapeMismatch(format!(
            "permutation of length {} applied to {} rows",
            perm.len(),
            y.n()
        )));
    }
    let d = y.d();
    let mut data = Vec::with_capacity(y.n() * d);
    for &src in perm.as_slice() {
        data.extend_from_slice(y.row(src));
    }
    EmbeddingMatrix::from_rows(y.n(), d, data)
}
