//! Dense helpers shared by the metric implementations.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::permutation::Permutation;

const LANES: usize = 8;

/// Dot product with a fixed eight-lane accumulation order.
///
/// The result is bitwise symmetric in its arguments.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    reduce(acc) + tail
}

/// Squared Euclidean distance, bitwise symmetric in its arguments.
#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            let t = x[l] - y[l];
            acc[l] += t * t;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        let t = x - y;
        tail += t * t;
    }
    reduce(acc) + tail
}

#[inline]
fn reduce(acc: [f64; LANES]) -> f64 {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

/// Fills a symmetric `n × n` matrix from `f(i, j)` evaluated for `i < j`.
pub(crate) fn symmetric_from_pairs(
    n: usize,
    diagonal: f64,
    mut f: impl FnMut(usize, usize) -> f64,
) -> Array2<f64> {
    let mut out = Array2::from_elem((n, n), diagonal);
    for i in 0..n {
        for j in i + 1..n {
            let v = f(i, j);
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    out
}

/// `X Xᵀ` via gemm, with the lower triangle mirrored from the upper one.
pub(crate) fn gram_linear(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut g = standard_layout(x.dot(&x.t()));
    mirror_upper(&mut g);
    g
}

/// gemm may return a column-major product (e.g. for single-column inputs);
/// code that flattens matrices relies on row-major storage.
pub(crate) fn standard_layout(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

pub(crate) fn mirror_upper(m: &mut Array2<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            m[[j, i]] = m[[i, j]];
        }
    }
}

/// Squared Euclidean distances derived from the Gram matrix, clamped at zero.
pub(crate) fn sq_dists_from_gram(g: &Array2<f64>) -> Array2<f64> {
    let n = g.nrows();
    let diag: Vec<f64> = (0..n).map(|i| g[[i, i]]).collect();
    symmetric_from_pairs(n, 0.0, |i, j| (diag[i] + diag[j] - 2.0 * g[[i, j]]).max(0.0))
}

/// Double-centers a symmetric matrix: `H K H`.
pub(crate) fn double_center(k: &Array2<f64>) -> Array2<f64> {
    let n = k.nrows();
    let row_means: Vec<f64> = k.rows().into_iter().map(|r| r.sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let mut out = k.clone();
    for i in 0..n {
        for j in 0..n {
            out[[i, j]] += grand - row_means[i] - row_means[j];
        }
    }
    mirror_upper(&mut out);
    out
}

pub(crate) fn frobenius_sq(a: &Array2<f64>) -> f64 {
    match a.as_slice_memory_order() {
        Some(s) => dot(s, s),
        None => a.iter().map(|v| v * v).sum(),
    }
}

/// `Σ_ij A[i,j] · B[π(i), π(j)]`, i.e. `⟨A, P B Pᵀ⟩` for the row permutation `π`.
pub(crate) fn permuted_inner(a: &Array2<f64>, b: &Array2<f64>, perm: Option<&Permutation>) -> f64 {
    let n = a.nrows();
    let a_s = a.as_slice().expect("standard layout");
    let b_s = b.as_slice().expect("standard layout");
    match perm {
        None => dot(a_s, b_s),
        Some(p) => {
            let p = p.as_slice();
            let mut total = 0.0;
            for i in 0..n {
                let arow = &a_s[i * n..(i + 1) * n];
                let brow = &b_s[p[i] * n..(p[i] + 1) * n];
                let mut acc = [0.0; 4];
                let chunks = arow.chunks_exact(4);
                let rem = chunks.remainder().len();
                for (c, av) in chunks.enumerate() {
                    let base = c * 4;
                    for l in 0..4 {
                        acc[l] += av[l] * brow[p[base + l]];
                    }
                }
                let mut tail = 0.0;
                for j in n - rem..n {
                    tail += arow[j] * brow[p[j]];
                }
                total += (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail;
            }
            total
        }
    }
}

/// Copy of `m` with rows and columns permuted: `out[i, j] = m[π(i), π(j)]`.
pub(crate) fn permute_symmetric(m: &Array2<f64>, perm: &Permutation) -> Array2<f64> {
    let n = m.nrows();
    let p = perm.as_slice();
    Array2::from_shape_fn((n, n), |(i, j)| m[[p[i], p[j]]])
}

/// Copy of `m` with rows permuted: `out[i, ..] = m[π(i), ..]`.
pub(crate) fn permute_rows(m: &Array2<f64>, perm: Option<&Permutation>) -> Array2<f64> {
    match perm {
        None => m.clone(),
        Some(p) => {
            let (n, d) = m.dim();
            Array2::from_shape_fn((n, d), |(i, j)| m[[p[i], j]])
        }
    }
}

pub(crate) fn to_nalgebra(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[[i, j]])
}

pub(crate) fn from_nalgebra(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Singular values in descending order.
pub(crate) fn singular_values(a: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    let m = to_nalgebra(a);
    let svd = m
        .try_svd(false, false, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::degenerate("singular value decomposition did not converge"))?;
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Left singular vectors and singular values, sorted by descending singular value.
pub(crate) struct SortedSvd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
}

pub(crate) fn svd_sorted(a: ArrayView2<'_, f64>) -> Result<SortedSvd> {
    let m = to_nalgebra(a);
    let svd = m
        .try_svd(true, false, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::degenerate("singular value decomposition did not converge"))?;
    let u = svd.u.expect("requested U");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    Ok(SortedSvd { u, s })
}

/// Eigen-decomposition of a symmetric matrix, eigenpairs sorted descending.
pub(crate) fn symmetric_eigen_sorted(a: ArrayView2<'_, f64>) -> (Vec<f64>, DMatrix<f64>) {
    let m = to_nalgebra(a);
    let eig = nalgebra::SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}
