//! Dense feature correlation and foreground-mask estimation.

use crate::error::{Error, Result};
use crate::geometry::GridShape;
use crate::tensor::{Real, Tape, Tensor, TensorError, Var};

/// Dense grid of `d`-dimensional descriptors, row-major with the channel
/// index fastest. Cells are unit length or exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    h: usize,
    w: usize,
    d: usize,
    values: Vec<f32>,
}

fn normalize_cells(values: &mut [f32], d: usize) {
    for cell in values.chunks_mut(d) {
        let n = cell.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
        if n > 0.0 {
            for v in cell.iter_mut() {
                *v = (f64::from(*v) / n) as f32;
            }
        }
    }
}

impl FeatureMap {
    /// Ingests raw descriptors, L2-normalizing every cell.
    pub fn new(h: usize, w: usize, d: usize, mut values: Vec<f32>) -> Result<Self> {
        Self::check(h, w, d, &values)?;
        normalize_cells(&mut values, d);
        Ok(Self { h, w, d, values })
    }

    /// Takes values that are already unit-normalized per cell, bit for bit.
    pub fn from_normalized(h: usize, w: usize, d: usize, values: Vec<f32>) -> Result<Self> {
        Self::check(h, w, d, &values)?;
        Ok(Self { h, w, d, values })
    }

    fn check(h: usize, w: usize, d: usize, values: &[f32]) -> Result<()> {
        if h == 0 || w == 0 || d == 0 {
            return Err(Error::Shape(format!("empty feature map {h}x{w}x{d}")));
        }
        if h * w * d != values.len() {
            return Err(Error::Shape(format!(
                "feature map {h}x{w}x{d} needs {} values, got {}",
                h * w * d,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Tensor(TensorError::NonFinite { op: "feature_map" }));
        }
        Ok(())
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn grid(&self) -> GridShape {
        GridShape::new(self.h, self.w)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f32] {
        let at = (row * self.w + col) * self.d;
        &self.values[at..at + self.d]
    }

    /// `(h*w, d)` tensor of cell vectors.
    pub fn to_rows<T: Real>(&self) -> Tensor<T> {
        Tensor::<f32>::new([self.h * self.w, self.d], self.values.clone())
            .expect("consistent extents")
            .cast()
    }

    /// `(h, w, d)` tensor, the layout `bilinear_sample` expects.
    pub fn to_grid<T: Real>(&self) -> Tensor<T> {
        Tensor::<f32>::new([self.h, self.w, self.d], self.values.clone())
            .expect("consistent extents")
            .cast()
    }
}

/// How raw inner products are normalized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CorrelationNorm {
    /// Cosine similarity of unit cells, clamped at zero. Values lie in `[0, 1]`.
    #[default]
    Cosine,
    /// Cosine + ReLU, then every target column is L2-normalized over the
    /// source cells.
    Volume,
}

/// Similarities between every source cell `p` and target cell `q`, stored
/// as a `(h_A*w_A, h_B*w_B)` matrix; entry `(i, j, s, t)` is at row
/// `i*w_A + j`, column `s*w_B + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMap {
    source: GridShape,
    target: GridShape,
    values: Vec<f32>,
}

impl CorrelationMap {
    pub fn new(source: GridShape, target: GridShape, values: Vec<f32>) -> Result<Self> {
        if values.len() != source.cells() * target.cells() {
            return Err(Error::Shape(format!(
                "correlation {}x{}x{}x{} needs {} values, got {}",
                source.h,
                source.w,
                target.h,
                target.w,
                source.cells() * target.cells(),
                values.len()
            )));
        }
        Ok(Self { source, target, values })
    }

    pub fn source(&self) -> GridShape {
        self.source
    }

    pub fn target(&self) -> GridShape {
        self.target
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize, s: usize, t: usize) -> f32 {
        let p = i * self.source.w + j;
        let q = s * self.target.w + t;
        self.values[p * self.target.cells() + q]
    }

    /// Similarities of source cell `p` (flat index) to every target cell.
    pub fn row(&self, p: usize) -> &[f32] {
        let n = self.target.cells();
        &self.values[p * n..(p + 1) * n]
    }

    /// The map with source and target roles swapped.
    pub fn transpose(&self) -> Self {
        let (np, nq) = (self.source.cells(), self.target.cells());
        let mut values = vec![0.0; np * nq];
        for p in 0..np {
            for q in 0..nq {
                values[q * np + p] = self.values[p * nq + q];
            }
        }
        Self {
            source: self.target,
            target: self.source,
            values,
        }
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::<f32>::new([self.source.cells(), self.target.cells()], self.values.clone())
            .expect("consistent extents")
            .cast()
    }
}

/// Cosine correlation of two feature maps (ReLU-clamped).
pub fn correlate(fa: &FeatureMap, fb: &FeatureMap) -> Result<CorrelationMap> {
    correlate_with(fa, fb, CorrelationNorm::Cosine)
}

pub fn correlate_with(fa: &FeatureMap, fb: &FeatureMap, norm: CorrelationNorm) -> Result<CorrelationMap> {
    if fa.d != fb.d {
        return Err(Error::Tensor(TensorError::ShapeMismatch {
            op: "correlate",
            lhs: vec![fa.h, fa.w, fa.d],
            rhs: vec![fb.h, fb.w, fb.d],
        }));
    }
    let (np, nq, d) = (fa.h * fa.w, fb.h * fb.w, fa.d);
    let mut values = vec![0.0f32; np * nq];
    // Rows are written disjointly, so the result is schedule-independent.
    crate::par::fill_chunks(&mut values, nq, |p, row| {
        let a = &fa.values[p * d..(p + 1) * d];
        for (q, out) in row.iter_mut().enumerate() {
            let b = &fb.values[q * d..(q + 1) * d];
            let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            *out = dot.max(0.0);
        }
    });
    if norm == CorrelationNorm::Volume {
        for q in 0..nq {
            let n = (0..np)
                .map(|p| f64::from(values[p * nq + q]).powi(2))
                .sum::<f64>()
                .sqrt();
            if n > 0.0 {
                for p in 0..np {
                    values[p * nq + q] = (f64::from(values[p * nq + q]) / n) as f32;
                }
            }
        }
    }
    CorrelationMap::new(fa.grid(), fb.grid(), values)
}

/// Relabels the map as `h_A x w_A x (h_B*w_B)`; values are untouched.
pub fn reshape_for_regressor(s: &CorrelationMap) -> Tensor<f32> {
    Tensor::new([s.source.h, s.source.w, s.target.cells()], s.values.clone()).expect("consistent extents")
}

/// Per-cell foreground confidence in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForegroundMask {
    pub shape: GridShape,
    pub values: Vec<f32>,
}

impl ForegroundMask {
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.shape.w + col]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v)).sum::<f64>() / self.values.len() as f64
    }

    pub fn ones(shape: GridShape) -> Self {
        Self {
            shape,
            values: vec![1.0; shape.cells()],
        }
    }
}

/// `M(p) = max_q S(p, q)`.
pub fn foreground_mask(s: &CorrelationMap) -> ForegroundMask {
    let nq = s.target.cells();
    let values = s
        .values
        .chunks(nq)
        .map(|row| row.iter().copied().fold(f32::NEG_INFINITY, f32::max))
        .collect();
    ForegroundMask {
        shape: s.source,
        values,
    }
}

/// Differentiable correlation of `(P, d)` and `(Q, d)` cell rows into `(P, Q)`.
pub fn correlate_var<'t, T: Real>(
    fa: &Var<'t, T>,
    fb: &Var<'t, T>,
    norm: CorrelationNorm,
) -> Result<Var<'t, T>, TensorError> {
    let a = fa.l2_normalize_last()?;
    let b = fb.l2_normalize_last()?;
    let s = a.matmul(&b.transpose()?)?.relu()?;
    match norm {
        CorrelationNorm::Cosine => Ok(s),
        CorrelationNorm::Volume => s.transpose()?.l2_normalize_last()?.transpose(),
    }
}

/// Differentiable foreground mask over a `(P, Q)` correlation; the gradient
/// reaches the first maximal entry of each row.
pub fn foreground_mask_var<'t, T: Real>(s: &Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
    s.max_last()
}

/// Places a fixed correlation map on `tape`.
pub fn correlation_const<'t, T: Real>(tape: &'t Tape<T>, s: &CorrelationMap) -> Var<'t, T> {
    tape.constant(s.to_tensor())
}
