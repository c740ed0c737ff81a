//! Two-stage transformation predictor.
//!
//! Each head mean-pools a correlation matrix over its source grid into
//! `pool x pool` regions, flattens the `(pool^2, Q)` result, and applies
//! `fc2(tanh(fc1(.)))`. With `Q = h*w` target cells and hidden width `H`,
//! the parameter count is
//!
//! ```text
//! affine head: pool^2*Q*H + H + 6H + 6
//! tps head:    pool^2*Q*H + H + 18H + 18
//! total:       2*H*pool^2*Q + 26H + 24
//! ```
//!
//! The affine head predicts a residual added to the identity; the TPS head
//! predicts control-point displacements. Both final layers start at zero,
//! so a fresh model predicts the identity transform exactly.
//!
//! Stage two resamples the source features at `Aff^-1` of the target grid,
//! re-correlates them against the target features and feeds the TPS head.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::correlation::{correlate_var, CorrelationMap, CorrelationNorm, FeatureMap};
use crate::error::{Error, FormatError, Result};
use crate::geometry::diff::{apply_affine, invert_affine, points_var};
use crate::geometry::{DiffTransform, GeometricTransform, GridShape, CONTROL_POINTS};
use crate::tensor::{Real, Tape, Tensor, TensorError, Var};

pub const AFFINE_OUT: usize = 6;
pub const TPS_OUT: usize = 2 * CONTROL_POINTS;
const IDENTITY: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
/// Pooled regions per axis when the grid allows it. A single global mean
/// discards where in the source a match came from, which leaves the heads
/// unable to tell translation from rotation.
pub const DEFAULT_POOL: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RegressorConfig {
    /// Feature grid every image must have.
    pub grid: GridShape,
    pub hidden: usize,
    /// Pooled regions per source axis.
    pub pool: usize,
}

impl RegressorConfig {
    pub fn new(grid: GridShape) -> Self {
        Self {
            grid,
            hidden: 64,
            pool: DEFAULT_POOL.min(grid.h).min(grid.w).max(1),
        }
    }

    pub fn input_width(&self) -> usize {
        self.pool * self.pool * self.grid.cells()
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.h < 2 || self.grid.w < 2 {
            return Err(Error::Config(format!(
                "feature grid must be at least 2x2, got {}x{}",
                self.grid.h, self.grid.w
            )));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        if self.pool == 0 || self.pool > self.grid.h || self.pool > self.grid.w {
            return Err(Error::Config(format!(
                "pool {} must lie in 1..={}",
                self.pool,
                self.grid.h.min(self.grid.w)
            )));
        }
        Ok(())
    }
}

/// `2 H in + 26 H + 24` with `in = pool^2 * h * w`.
pub fn parameter_count(cfg: &RegressorConfig) -> usize {
    let (h, i) = (cfg.hidden, cfg.input_width());
    2 * h * i + 26 * h + 24
}

/// One pooled fully-connected head.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    /// `(in, H)`.
    pub fc1_weight: Tensor<f32>,
    /// `(H,)`.
    pub fc1_bias: Tensor<f32>,
    /// `(H, out)`.
    pub fc2_weight: Tensor<f32>,
    /// `(out,)`.
    pub fc2_bias: Tensor<f32>,
}

impl Head {
    fn zeros(input: usize, hidden: usize, out: usize) -> Self {
        Self {
            fc1_weight: Tensor::zeros([input, hidden]),
            fc1_bias: Tensor::zeros([hidden]),
            fc2_weight: Tensor::zeros([hidden, out]),
            fc2_bias: Tensor::zeros([out]),
        }
    }

    fn tensors(&self) -> [&Tensor<f32>; 4] {
        [&self.fc1_weight, &self.fc1_bias, &self.fc2_weight, &self.fc2_bias]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor<f32>; 4] {
        [
            &mut self.fc1_weight,
            &mut self.fc1_bias,
            &mut self.fc2_weight,
            &mut self.fc2_bias,
        ]
    }
}

const LAYER_NAMES: [&str; 4] = ["fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"];

#[derive(Clone, Debug, PartialEq)]
pub struct RegressorWeights {
    pub config: RegressorConfig,
    pub affine: Head,
    pub tps: Head,
}

/// Deterministic weights: Glorot-uniform first layers, zero biases and zero
/// final layers.
pub fn init_weights(seed: u64, config: RegressorConfig) -> Result<RegressorWeights> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (input, hidden) = (config.input_width(), config.hidden);
    let bound = (6.0 / (input + hidden) as f64).sqrt();
    let mut head = |out| {
        let mut h = Head::zeros(input, hidden, out);
        let data = (0..input * hidden)
            .map(|_| rng.gen_range(-bound..bound) as f32)
            .collect();
        h.fc1_weight = Tensor::new([input, hidden], data).expect("in x H");
        h
    };
    let affine = head(AFFINE_OUT);
    let tps = head(TPS_OUT);
    Ok(RegressorWeights { config, affine, tps })
}

impl RegressorWeights {
    /// Parameter tensors with their checkpoint names, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor<f32>)> {
        let mut out = Vec::with_capacity(8);
        for (prefix, head) in [("affine", &self.affine), ("tps", &self.tps)] {
            for (name, t) in LAYER_NAMES.iter().zip(head.tensors()) {
                out.push((format!("{prefix}.{name}"), t));
            }
        }
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor<f32>> {
        self.affine.tensors().into_iter().chain(self.tps.tensors()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<f32>> {
        let (a, t) = (&mut self.affine, &mut self.tps);
        a.tensors_mut().into_iter().chain(t.tensors_mut()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, checkpoint::encode(self)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        checkpoint::decode(&bytes).map_err(|e| Error::format(path, e))
    }
}

/// Weights placed on a tape, in [`RegressorWeights::tensors`] order.
#[derive(Clone, Debug)]
pub struct WeightVars<'t, T: Real> {
    pub config: RegressorConfig,
    pub params: Vec<Var<'t, T>>,
}

impl<'t, T: Real> WeightVars<'t, T> {
    /// Differentiable copies of `w`.
    pub fn leaves(tape: &'t Tape<T>, w: &RegressorWeights) -> Self {
        Self {
            config: w.config,
            params: w.tensors().into_iter().map(|t| tape.leaf(t.cast())).collect(),
        }
    }

    pub fn constants(tape: &'t Tape<T>, w: &RegressorWeights) -> Self {
        Self {
            config: w.config,
            params: w.tensors().into_iter().map(|t| tape.constant(t.cast())).collect(),
        }
    }

    fn head(&self, k: usize) -> &[Var<'t, T>] {
        &self.params[4 * k..4 * k + 4]
    }
}

/// `(pool^2, h*w)` averaging matrix over the cells of `grid`.
fn pooling_matrix<T: Real>(grid: GridShape, pool: usize) -> Tensor<T> {
    let span = |r: usize, n: usize| (r * n / pool, ((r + 1) * n).div_ceil(pool));
    let mut data = vec![T::zero(); pool * pool * grid.cells()];
    for ri in 0..pool {
        for rj in 0..pool {
            let (i0, i1) = span(ri, grid.h);
            let (j0, j1) = span(rj, grid.w);
            let inv = T::lit(1.0 / ((i1 - i0) * (j1 - j0)) as f64);
            let region = ri * pool + rj;
            for i in i0..i1 {
                for j in j0..j1 {
                    data[region * grid.cells() + i * grid.w + j] = inv;
                }
            }
        }
    }
    Tensor::new([pool * pool, grid.cells()], data).expect("pool^2 x cells")
}

fn run_head<'t, T: Real>(
    params: &[Var<'t, T>],
    corr: &Var<'t, T>,
    source: GridShape,
    pool: usize,
) -> std::result::Result<Var<'t, T>, TensorError> {
    let tape = corr.tape();
    let pooled = tape.constant(pooling_matrix(source, pool)).matmul(corr)?;
    let n = pooled.shape().iter().product::<usize>();
    let x = pooled.reshape([1, n])?;
    let hidden = params[1].shape()[0];
    let out = params[3].shape()[0];
    let h = x.matmul(&params[0])?.add(&params[1].reshape([1, hidden])?)?.tanh()?;
    h.matmul(&params[2])?.add(&params[3].reshape([1, out])?)?.reshape([out])
}

fn check_grid(cfg: &RegressorConfig, which: &str, g: GridShape) -> Result<()> {
    if g != cfg.grid {
        return Err(Error::Shape(format!(
            "{which} grid {}x{} does not match the weights' {}x{}",
            g.h, g.w, cfg.grid.h, cfg.grid.w
        )));
    }
    Ok(())
}

/// Predicts the cascade `T_AB` on a tape.
///
/// `s_ab` is the `(P_A, Q_B)` correlation; `fa` is the `(h_A, w_A, d)`
/// source feature grid and `fb` the `(Q_B, d)` target cell rows.
pub fn predict_var<'t, T: Real>(
    w: &WeightVars<'t, T>,
    s_ab: &Var<'t, T>,
    fa: &Var<'t, T>,
    fb: &Var<'t, T>,
    grid_a: GridShape,
    grid_b: GridShape,
) -> Result<DiffTransform<'t, T>> {
    let cfg = w.config;
    check_grid(&cfg, "source", grid_a)?;
    check_grid(&cfg, "target", grid_b)?;
    if s_ab.shape() != [grid_a.cells(), grid_b.cells()] {
        return Err(Error::Shape(format!(
            "correlation shape {:?} does not match grids {}x{} -> {}x{}",
            s_ab.shape(),
            grid_a.h,
            grid_a.w,
            grid_b.h,
            grid_b.w
        )));
    }
    let tape = s_ab.tape();
    let identity = tape.constant(Tensor::from_vec(IDENTITY.map(T::lit).to_vec()));
    let affine = run_head(w.head(0), s_ab, grid_a, cfg.pool)?.add(&identity)?;
    let back = apply_affine(&invert_affine(&affine)?, &points_var(tape, &grid_b.points()))?;
    let aligned = fa.bilinear_sample(&back)?;
    let s_aligned = correlate_var(&aligned, fb, CorrelationNorm::Cosine)?;
    let displacements = run_head(w.head(1), &s_aligned, grid_b, cfg.pool)?;
    Ok(DiffTransform::cascade(affine, displacements)?)
}

/// Predicts `T_AB` for fixed inputs.
pub fn predict(
    s_ab: &CorrelationMap,
    fa: &FeatureMap,
    fb: &FeatureMap,
    w: &RegressorWeights,
) -> Result<GeometricTransform> {
    if s_ab.source() != fa.grid() || s_ab.target() != fb.grid() {
        return Err(Error::Shape("correlation does not belong to these feature maps".into()));
    }
    let tape = Tape::<f32>::new();
    let vars = WeightVars::constants(&tape, w);
    let s = tape.constant(s_ab.to_tensor());
    let ga = tape.constant(fa.to_grid());
    let rb = tape.constant(fb.to_rows());
    Ok(predict_var(&vars, &s, &ga, &rb, fa.grid(), fb.grid())?.to_value())
}

/// `DSMW` weight checkpoints.
///
/// Layout (little-endian): magic `DSMW`, version byte, then named blocks of
/// `u32` name length, UTF-8 name, `u32` rank, `rank` `u32` extents and the
/// `f32` values. A `meta.config` block holds `[grid_h, grid_w, pool]`.
pub mod checkpoint {
    use super::*;

    pub const MAGIC: &[u8; 4] = b"DSMW";
    pub const VERSION: u8 = 1;
    const META: &str = "meta.config";
    const MAX_VALUES: u64 = 1 << 28;

    fn block(out: &mut Vec<u8>, name: &str, shape: &[usize], values: &[f32]) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &e in shape {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn encode(w: &RegressorWeights) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.push(VERSION);
        let c = w.config;
        block(&mut out, META, &[3], &[c.grid.h as f32, c.grid.w as f32, c.pool as f32]);
        for (name, t) in w.named() {
            block(&mut out, &name, t.shape(), t.data());
        }
        out
    }

    struct Reader<'a> {
        bytes: &'a [u8],
        pos: usize,
    }

    impl Reader<'_> {
        fn take(&mut self, n: u64) -> std::result::Result<&[u8], FormatError> {
            let available = (self.bytes.len() - self.pos) as u64;
            if n > available {
                return Err(FormatError::Truncated {
                    offset: self.bytes.len() as u64,
                    needed: self.pos as u64 + n,
                    available: self.bytes.len() as u64,
                });
            }
            let s = &self.bytes[self.pos..self.pos + n as usize];
            self.pos += n as usize;
            Ok(s)
        }

        fn u32(&mut self) -> std::result::Result<u32, FormatError> {
            Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
        }
    }

    fn invalid(offset: usize, detail: impl Into<String>) -> FormatError {
        FormatError::Invalid {
            offset: offset as u64,
            detail: detail.into(),
        }
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<RegressorWeights, FormatError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(FormatError::BadMagic {
                expected: "DSMW".into(),
                found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
            });
        }
        let mut r = Reader { bytes, pos: 4 };
        let version = r.take(1)?[0];
        if version != VERSION {
            return Err(FormatError::Version { version, offset: 4 });
        }
        let mut blocks: Vec<(String, usize, Tensor<f32>)> = Vec::new();
        while r.pos < bytes.len() {
            let start = r.pos;
            let len = r.u32()?;
            let name = std::str::from_utf8(r.take(u64::from(len))?)
                .map_err(|_| invalid(start + 4, "block name is not UTF-8"))?
                .to_owned();
            let rank_at = r.pos;
            let rank = r.u32()?;
            if rank == 0 || rank > 4 {
                return Err(invalid(rank_at, format!("rank {rank} for {name}")));
            }
            let mut shape = Vec::with_capacity(rank as usize);
            let mut count: u64 = 1;
            for _ in 0..rank {
                let e = r.u32()?;
                count = count.saturating_mul(u64::from(e));
                shape.push(e as usize);
            }
            if count > MAX_VALUES {
                return Err(FormatError::ExtentOverflow {
                    offset: (rank_at + 4) as u64,
                    detail: format!("{shape:?} for {name}"),
                });
            }
            let data_at = r.pos;
            let values: Vec<f32> = r
                .take(4 * count)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::new(shape, values).map_err(|e| invalid(rank_at, e.to_string()))?;
            blocks.push((name, data_at, t));
        }
        let mut find = |name: &str| -> std::result::Result<(usize, Tensor<f32>), FormatError> {
            let k = blocks
                .iter()
                .position(|(n, _, _)| n == name)
                .ok_or_else(|| invalid(bytes.len(), format!("missing block {name}")))?;
            let (_, at, t) = blocks.remove(k);
            Ok((at, t))
        };
        let (meta_at, meta) = find(META)?;
        let m = meta.data();
        if m.len() != 3 || m.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
            return Err(invalid(meta_at, "meta.config must hold three positive integers"));
        }
        let grid = GridShape::new(m[0] as usize, m[1] as usize);
        let pool = m[2] as usize;
        let mut heads = Vec::with_capacity(2);
        for prefix in ["affine", "tps"] {
            let mut parts = Vec::with_capacity(4);
            for layer in LAYER_NAMES {
                parts.push(find(&format!("{prefix}.{layer}"))?);
            }
            let mut it = parts.into_iter().map(|(_, t)| t);
            heads.push(Head {
                fc1_weight: it.next().expect("4 layers"),
                fc1_bias: it.next().expect("4 layers"),
                fc2_weight: it.next().expect("4 layers"),
                fc2_bias: it.next().expect("4 layers"),
            });
        }
        if let Some((name, at, _)) = blocks.first() {
            return Err(invalid(*at, format!("unexpected block {name}")));
        }
        let tps = heads.pop().expect("two heads");
        let affine = heads.pop().expect("two heads");
        let hidden = affine.fc1_bias.len();
        let config = RegressorConfig { grid, hidden, pool };
        config.validate().map_err(|e| invalid(meta_at, e.to_string()))?;
        let expected = Head::zeros(config.input_width(), hidden, AFFINE_OUT);
        let expected_tps = Head::zeros(config.input_width(), hidden, TPS_OUT);
        for (got, want) in [(&affine, &expected), (&tps, &expected_tps)] {
            for (g, w) in got.tensors().iter().zip(want.tensors()) {
                if g.shape() != w.shape() {
                    return Err(invalid(
                        5,
                        format!("layer shape {:?}, expected {:?}", g.shape(), w.shape()),
                    ));
                }
            }
        }
        Ok(RegressorWeights { config, affine, tps })
    }
}
