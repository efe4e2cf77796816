//! Synthetic datasets and the experiment runners built on them.

mod experiments;
mod table;

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{EmbeddingMatrix, LayerStack};
use crate::permutation::{rng_from_seed, split_seed};

pub use experiments::*;
pub use table::{Cell, CheckOutcome, Column, ColumnValues, ExperimentTable, TableMetadata};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hypothesis {
    H0,
    H1,
}

/// Entry distribution, always standardized to zero mean and unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum NoiseFamily {
    Gaussian,
    StudentT {
        nu: f64,
    },
    Laplace,
    /// Equal-weight mixture of unit normals with centers evenly spaced on
    /// `[−separation/2, separation/2]`, drawn independently per entry.
    GaussianMixture {
        components: usize,
        separation: f64,
    },
}

impl Default for NoiseFamily {
    fn default() -> Self {
        NoiseFamily::Gaussian
    }
}

impl NoiseFamily {
    pub const DEFAULT_NU: f64 = 3.0;
    pub const DEFAULT_SEPARATION: f64 = 4.0;

    pub fn student_t() -> Self {
        NoiseFamily::StudentT { nu: Self::DEFAULT_NU }
    }

    pub fn gaussian_mixture() -> Self {
        NoiseFamily::GaussianMixture {
            components: 2,
            separation: Self::DEFAULT_SEPARATION,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseFamily::StudentT { nu } if !(nu > 2.0) => Err(Error::param(format!(
                "Student-t needs nu > 2 for finite variance, got {nu}"
            ))),
            NoiseFamily::GaussianMixture { components, .. } if components == 0 => {
                Err(Error::param("mixture needs at least one component"))
            }
            NoiseFamily::GaussianMixture { separation, .. } if !(separation >= 0.0) => Err(Error::param(
                format!("mixture separation must be non-negative, got {separation}"),
            )),
            _ => Ok(()),
        }
    }

    /// Fills an `n × d` matrix with standardized draws.
    pub fn sample(&self, n: usize, d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let mut values = Vec::with_capacity(n * d);
        match *self {
            NoiseFamily::Gaussian => {
                values.extend((0..n * d).map(|_| Distribution::<f64>::sample(&StandardNormal, rng)));
            }
            NoiseFamily::StudentT { nu } => {
                let t = StudentT::new(nu).expect("validated nu");
                let scale = (nu / (nu - 2.0)).sqrt();
                values.extend((0..n * d).map(|_| t.sample(rng) / scale));
            }
            NoiseFamily::Laplace => {
                // Scale 1/√2 gives unit variance; inverse-CDF sampling.
                let b = std::f64::consts::FRAC_1_SQRT_2;
                values.extend((0..n * d).map(|_| {
                    let u: f64 = rng.random::<f64>() - 0.5;
                    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
                }));
            }
            NoiseFamily::GaussianMixture {
                components,
                separation,
            } => {
                let centers: Vec<f64> = if components == 1 {
                    vec![0.0]
                } else {
                    (0..components)
                        .map(|c| separation * (c as f64 / (components - 1) as f64 - 0.5))
                        .collect()
                };
                let center_var = centers.iter().map(|c| c * c).sum::<f64>() / components as f64;
                let scale = (1.0 + center_var).sqrt();
                values.extend((0..n * d).map(|_| {
                    let c = centers[rng.random_range(0..components)];
                    let z: f64 = StandardNormal.sample(rng);
                    (c + z) / scale
                }));
            }
        }
        Array2::from_shape_vec((n, d), values).expect("n·d values")
    }
}

/// Parameters of one synthetic pair `(X, Y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub hypothesis: Hypothesis,
    pub n: usize,
    pub d_x: usize,
    pub d_y: usize,
    #[serde(default)]
    pub noise: NoiseFamily,
    #[serde(default)]
    pub signal_rank: usize,
    #[serde(default)]
    pub signal_strength: f64,
    #[serde(default)]
    pub noise_level: f64,
    pub seed: u64,
}

impl DatasetSpec {
    /// Independent Gaussian `X` and `Y`.
    pub fn null(n: usize, d_x: usize, d_y: usize, seed: u64) -> Self {
        Self {
            hypothesis: Hypothesis::H0,
            n,
            d_x,
            d_y,
            noise: NoiseFamily::Gaussian,
            signal_rank: 0,
            signal_strength: 0.0,
            noise_level: 0.0,
            seed,
        }
    }

    /// Shared rank-`rank` factor with strength `strength` plus noise scaled by `noise_level`.
    pub fn signal(n: usize, d_x: usize, d_y: usize, rank: usize, strength: f64, noise_level: f64, seed: u64) -> Self {
        Self {
            hypothesis: Hypothesis::H1,
            signal_rank: rank,
            signal_strength: strength,
            noise_level,
            ..Self::null(n, d_x, d_y, seed)
        }
    }

    pub fn with_noise(mut self, noise: NoiseFamily) -> Self {
        self.noise = noise;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.d_x == 0 || self.d_y == 0 {
            return Err(Error::param(format!(
                "dataset needs n ≥ 2 and positive widths, got n = {}, d_x = {}, d_y = {}",
                self.n, self.d_x, self.d_y
            )));
        }
        self.noise.validate()?;
        if self.hypothesis == Hypothesis::H1 {
            let max_rank = self.d_x.min(self.d_y);
            if self.signal_rank == 0 || self.signal_rank > max_rank {
                return Err(Error::param(format!(
                    "signal rank must lie in 1..={max_rank}, got {}",
                    self.signal_rank
                )));
            }
            if !(self.signal_strength >= 0.0) || !self.signal_strength.is_finite() {
                return Err(Error::param(format!(
                    "signal strength must be finite and non-negative, got {}",
                    self.signal_strength
                )));
            }
            if !(self.noise_level >= 0.0) || !self.noise_level.is_finite() {
                return Err(Error::param(format!(
                    "noise level must be finite and non-negative, got {}",
                    self.noise_level
                )));
            }
        }
        Ok(())
    }
}

fn gaussian(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    NoiseFamily::Gaussian.sample(n, d, rng)
}

/// A `d × r` matrix with orthonormal columns.
fn orthonormal_loadings(d: usize, r: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let g = gaussian(d, r, rng);
    let q = DMatrix::from_row_slice(d, r, g.as_slice().expect("standard layout"))
        .qr()
        .q();
    Array2::from_shape_fn((d, r), |(i, j)| q[(i, j)])
}

/// Draws `(X, Y)` for `spec`. Deterministic in `spec.seed`.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    spec.validate()?;
    let mut rng_x = rng_from_seed(split_seed(spec.seed, 0));
    let mut rng_y = rng_from_seed(split_seed(spec.seed, 1));
    let ex = spec.noise.sample(spec.n, spec.d_x, &mut rng_x);
    let ey = spec.noise.sample(spec.n, spec.d_y, &mut rng_y);
    let (x, y) = match spec.hypothesis {
        Hypothesis::H0 => (ex, ey),
        Hypothesis::H1 => {
            let mut rng_s = rng_from_seed(split_seed(spec.seed, 2));
            let r = spec.signal_rank;
            let z = gaussian(spec.n, r, &mut rng_s);
            let px = orthonormal_loadings(spec.d_x, r, &mut rng_s);
            let py = orthonormal_loadings(spec.d_y, r, &mut rng_s);
            let s = spec.signal_strength;
            let x = z.dot(&px.t()) * s + ex * spec.noise_level;
            let y = z.dot(&py.t()) * s + ey * spec.noise_level;
            (x, y)
        }
    };
    Ok((
        EmbeddingMatrix::new(x.as_standard_layout().into_owned())?,
        EmbeddingMatrix::new(y.as_standard_layout().into_owned())?,
    ))
}

/// `layers` independent Gaussian `n × d` layers.
pub fn null_stack(layers: usize, n: usize, d: usize, seed: u64) -> Result<LayerStack> {
    let stack = (0..layers)
        .map(|l| {
            let mut rng = rng_from_seed(split_seed(seed, l as u64));
            EmbeddingMatrix::new(gaussian(n, d, &mut rng))
        })
        .collect::<Result<Vec<_>>>()?;
    LayerStack::new(stack)
}
