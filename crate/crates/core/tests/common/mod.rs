#![allow(dead_code)]

use repsim::permutation::rng_from_seed;
use repsim::synthlab::NoiseFamily;
use repsim::EmbeddingMatrix;

/// An `n × d` matrix of i.i.d. standard normals.
pub fn gaussian(n: usize, d: usize, seed: u64) -> EmbeddingMatrix {
    EmbeddingMatrix::new(NoiseFamily::Gaussian.sample(n, d, &mut rng_from_seed(seed))).unwrap()
}

pub fn column(values: &[f64]) -> EmbeddingMatrix {
    EmbeddingMatrix::from_rows(values.len(), 1, values.to_vec()).unwrap()
}

pub fn pearson(u: &[f64], v: &[f64]) -> f64 {
    let n = u.len() as f64;
    let (mu, mv) = (u.iter().sum::<f64>() / n, v.iter().sum::<f64>() / n);
    let cov: f64 = u.iter().zip(v).map(|(a, b)| (a - mu) * (b - mv)).sum();
    let su: f64 = u.iter().map(|a| (a - mu).powi(2)).sum();
    let sv: f64 = v.iter().map(|b| (b - mv).powi(2)).sum();
    cov / (su * sv).sqrt()
}

/// Row-major nested copy of a matrix.
pub fn rows(m: &EmbeddingMatrix) -> Vec<Vec<f64>> {
    (0..m.n()).map(|i| m.row(i).to_vec()).collect()
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// k nearest neighbors of every row by a full sort of `(distance, index)`.
pub fn brute_knn(m: &EmbeddingMatrix, k: usize) -> Vec<Vec<usize>> {
    let r = rows(m);
    (0..r.len())
        .map(|i| {
            let mut cand: Vec<(f64, usize)> =
                (0..r.len()).filter(|&j| j != i).map(|j| (euclid(&r[i], &r[j]), j)).collect();
            cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            cand[..k].iter().map(|c| c.1).collect()
        })
        .collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n − 1 denominator).
pub fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}
