//! Row-aligned embedding matrices and layer stacks.
//!
//! Every similarity in this crate compares two matrices whose rows describe the
//! same `n` inputs in the same order. Columns are feature dimensions and may
//! differ between the two sides.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// An `n × d` matrix of finite reals with `n ≥ 2` and `d ≥ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    values: Array2<f64>,
}

impl EmbeddingMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (n, d) = values.dim();
        if n < 2 {
            return Err(Error::InvalidMatrix(format!(
                "need at least 2 samples (rows), got {n}"
            )));
        }
        if d < 1 {
            return Err(Error::InvalidMatrix("need at least 1 column".into()));
        }
        if let Some(((row, col), &value)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { row, col, value });
        }
        Ok(Self {
            values: values.as_standard_layout().into_owned(),
        })
    }

    /// Builds a matrix from row-major data.
    pub fn from_rows(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        let values = Array2::from_shape_vec((n, d), data)
            .map_err(|e| Error::InvalidMatrix(format!("{n}x{d}: {e}")))?;
        Self::new(values)
    }

    /// Builds a matrix from nested rows; every row must have the same length.
    pub fn from_nested<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::InvalidMatrix(format!(
                    "row {i} has {} columns, expected {d}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::from_rows(rows.len(), d, data)
    }

    /// Wraps values already known to be valid.
    pub(crate) fn from_trusted(values: Array2<f64>) -> Self {
        debug_assert!(values.nrows() >= 2 && values.ncols() >= 1);
        Self { values }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn d(&self) -> usize {
        self.values.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.d();
        &self.as_slice()[i * d..(i + 1) * d]
    }

    /// Row-major contents.
    pub fn as_slice(&self) -> &[f64] {
        self.values
            .as_slice()
            .expect("embedding matrices are stored in standard layout")
    }

    /// Multiplies every entry by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(&self.values * c)
    }
}

/// Subtracts each column's mean, i.e. computes `H·X` without forming `H`.
pub fn center(x: &EmbeddingMatrix) -> EmbeddingMatrix {
    EmbeddingMatrix::from_trusted(center_array(x.view()))
}

pub(crate) fn center_array(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mean = x
        .mean_axis(Axis(0))
        .expect("matrix has at least one row");
    let mut out = x.to_owned();
    out -= &mean;
    out
}

/// The per-layer representations of one model on a shared set of inputs.
#[derive(Debug, Clone)]
pub struct LayerStack {
    layers: Vec<EmbeddingMatrix>,
}

impl LayerStack {
    /// Fails on an empty list or on layers with different sample counts.
    pub fn new(layers: Vec<EmbeddingMatrix>) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(Error::InvalidMatrix("layer stack is empty".into()));
        };
        let n = first.n();
        if let Some((i, l)) = layers.iter().enumerate().find(|(_, l)| l.n() != n) {
            return Err(Error::ShapeMismatch(format!(
                "layer {i} has {} samples, layer 0 has {n}",
                l.n()
            )));
        }
        Ok(Self { layers })
    }

    pub fn n(&self) -> usize {
        self.layers[0].n()
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layers(&self) -> &[EmbeddingMatrix] {
        &self.layers
    }

    pub fn iter(&self) -> std::slice::Iter<'_, EmbeddingMatrix> {
        self.layers.iter()
    }
}

impl std::ops::Index<usize> for LayerStack {
    type Output = EmbeddingMatrix;

    fn index(&self, index: usize) -> &EmbeddingMatrix {
        &self.layers[index]
    }
}
