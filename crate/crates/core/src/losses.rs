//! Training objective: correspondence masks, matching scores, the
//! foreground-guided matching loss, forward-backward and transitivity
//! consistency, and their weighted sum.
//!
//! Every loss is built on a gradient tape so the same code serves training
//! and evaluation; the plain-value entry points run it on a 64-bit tape.

use rand::Rng;

use crate::correlation::{foreground_mask_var, CorrelationMap, ForegroundMask};
use crate::error::{Error, Result};
use crate::geometry::diff::points_var;
use crate::geometry::{DiffTransform, GeometricTransform, GridShape, Point};
use crate::tensor::{Real, Tape, Tensor, TensorError, Var};

type R<'t, T> = std::result::Result<Var<'t, T>, TensorError>;

/// Relative weights of the consistency terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_c: f64,
    pub lambda_t: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_c: 1.0,
            lambda_t: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_c: f64, lambda_t: f64) -> Result<Self> {
        for (name, v) in [("lambda_c", lambda_c), ("lambda_t", lambda_t)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(Self { lambda_c, lambda_t })
    }
}

/// Normalized coordinates at which the consistency losses are evaluated:
/// `a` in the first image of each term, `b` in the second.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateSample {
    pub a: Vec<Point>,
    pub b: Vec<Point>,
}

impl CoordinateSample {
    /// `side x side` uniform lattice over `[-1, 1]^2`, shared by both images.
    pub fn lattice(side: usize) -> Self {
        let pts = GridShape::new(side, side).points();
        Self { a: pts.clone(), b: pts }
    }

    /// `count` grid cells drawn uniformly (with replacement) from each grid.
    pub fn random(rng: &mut impl Rng, grid_a: GridShape, grid_b: GridShape, count: usize) -> Self {
        let mut draw = |g: GridShape| -> Vec<Point> {
            (0..count)
                .map(|_| g.cell_to_norm(rng.gen_range(0..g.h), rng.gen_range(0..g.w)))
                .collect()
        };
        let a = draw(grid_a);
        let b = draw(grid_b);
        Self { a, b }
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty() || self.b.is_empty()
    }
}

impl Default for CoordinateSample {
    fn default() -> Self {
        Self::lattice(10)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SampleMode {
    #[default]
    Lattice,
    Random,
}

/// Which part of a cascade the consistency losses constrain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CycleStage {
    #[default]
    Full,
    AffineOnly,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Correspondence threshold in target-grid cells.
    pub phi: f64,
    /// Treat the foreground masks as constants.
    pub detach_masks: bool,
    /// When false every mask value is forced to 1.
    pub foreground_guided: bool,
    pub cycle_stage: CycleStage,
    pub sample: SampleMode,
    /// Points per image in random mode; the lattice is always 10 x 10.
    pub sample_count: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            phi: 1.0,
            detach_masks: false,
            foreground_guided: true,
            cycle_stage: CycleStage::Full,
            sample: SampleMode::Lattice,
            sample_count: 100,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.phi.is_finite() && self.phi > 0.0) {
            return Err(Error::Config(format!("phi must be positive, got {}", self.phi)));
        }
        if self.sample == SampleMode::Random && self.sample_count == 0 {
            return Err(Error::Config("sample_count must be positive".into()));
        }
        Ok(())
    }

    pub fn coordinate_sample(&self, rng: &mut impl Rng, grid_a: GridShape, grid_b: GridShape) -> CoordinateSample {
        match self.sample {
            SampleMode::Lattice => CoordinateSample::lattice(10),
            SampleMode::Random => CoordinateSample::random(rng, grid_a, grid_b, self.sample_count),
        }
    }
}

/// Binary `m(p, q)` over source cells `p` and target cells `q`, stored as a
/// `(P, Q)` row-major matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorrespondenceMask {
    pub source: GridShape,
    pub target: GridShape,
    pub values: Vec<bool>,
}

impl CorrespondenceMask {
    pub fn get(&self, i: usize, j: usize, s: usize, t: usize) -> bool {
        let p = i * self.source.w + j;
        let q = s * self.target.w + t;
        self.values[p * self.target.cells() + q]
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let data = self
            .values
            .iter()
            .map(|&v| if v { T::one() } else { T::zero() })
            .collect();
        Tensor::new([self.source.cells(), self.target.cells()], data).expect("consistent extents")
    }
}

/// Thresholds already-mapped source cells (normalized, in source row-major
/// order) against every target cell.
fn mask_from_mapped(mapped: &[Point], source: GridShape, target: GridShape, phi: f64) -> CorrespondenceMask {
    let nq = target.cells();
    let mut values = vec![false; source.cells() * nq];
    crate::par::fill_chunks(&mut values, nq, |p, row| {
        let [gx, gy] = target.norm_to_grid(mapped[p]);
        for (q, out) in row.iter_mut().enumerate() {
            let (s, t) = (q / target.w, q % target.w);
            let (dx, dy) = (gx - t as f64, gy - s as f64);
            *out = (dx * dx + dy * dy).sqrt() <= phi;
        }
    });
    CorrespondenceMask { source, target, values }
}

/// `m(p, q) = 1` iff `T` maps source cell `p` within `phi` target cells of `q`.
pub fn correspondence_mask(
    t: &GeometricTransform,
    source: GridShape,
    target: GridShape,
    phi: f64,
) -> CorrespondenceMask {
    let mapped: Vec<Point> = source.points().into_iter().map(|p| t.apply(p)).collect();
    mask_from_mapped(&mapped, source, target, phi)
}

/// Mask for a transform on the tape, evaluated at its current value.
pub fn correspondence_mask_var<T: Real>(
    t: &DiffTransform<'_, T>,
    source: GridShape,
    target: GridShape,
    phi: f64,
) -> std::result::Result<CorrespondenceMask, TensorError> {
    let tape = match t {
        DiffTransform::Affine(a) => a.tape(),
        DiffTransform::Tps { displacements, .. } => displacements.tape(),
        DiffTransform::Cascade { affine, .. } => affine.tape(),
    };
    let out = t.apply(&points_var(tape, &source.points()))?.to_vec();
    let mapped: Vec<Point> = out
        .chunks(2)
        .map(|c| [c[0].to_f64_lossy(), c[1].to_f64_lossy()])
        .collect();
    Ok(mask_from_mapped(&mapped, source, target, phi))
}

/// `s(p) = sum_q m(p, q) S(p, q)`.
pub fn matching_score(s: &CorrelationMap, m: &CorrespondenceMask) -> Result<Vec<f64>> {
    if s.source() != m.source || s.target() != m.target {
        return Err(Error::Shape(format!(
            "correlation {:?}->{:?} against mask {:?}->{:?}",
            s.source(),
            s.target(),
            m.source,
            m.target
        )));
    }
    let nq = s.target().cells();
    Ok((0..s.source().cells())
        .map(|p| {
            s.row(p)
                .iter()
                .zip(&m.values[p * nq..(p + 1) * nq])
                .filter(|(_, &keep)| keep)
                .map(|(&v, _)| f64::from(v))
                .sum()
        })
        .collect())
}

/// `(P,)` scores from a `(P, Q)` correlation on the tape.
pub fn matching_score_var<'t, T: Real>(s: &Var<'t, T>, m: &CorrespondenceMask) -> R<'t, T> {
    let mask = s.tape().constant(m.to_tensor());
    s.mul(&mask)?.sum_last()
}

/// One ordered image pair on a tape: both correlations and both predicted
/// transforms.
#[derive(Clone, Copy, Debug)]
pub struct PairTerms<'t, T: Real> {
    /// `(P_A, P_B)`.
    pub s_ab: Var<'t, T>,
    /// `(P_B, P_A)`.
    pub s_ba: Var<'t, T>,
    pub t_ab: DiffTransform<'t, T>,
    pub t_ba: DiffTransform<'t, T>,
    pub grid_a: GridShape,
    pub grid_b: GridShape,
}

fn mask_weights<'t, T: Real>(s: &Var<'t, T>, cfg: &LossConfig) -> R<'t, T> {
    if !cfg.foreground_guided {
        let n = s.shape()[0];
        return Ok(s.tape().constant(Tensor::full([n], T::one())));
    }
    let m = foreground_mask_var(s)?;
    Ok(if cfg.detach_masks { m.detach() } else { m })
}

/// `-(sum_p s_A(p) M_A(p) + sum_q s_B(q) M_B(q))`.
pub fn matching_loss_var<'t, T: Real>(pair: &PairTerms<'t, T>, cfg: &LossConfig) -> R<'t, T> {
    let m_ab = correspondence_mask_var(&pair.t_ab, pair.grid_a, pair.grid_b, cfg.phi)?;
    let m_ba = correspondence_mask_var(&pair.t_ba, pair.grid_b, pair.grid_a, cfg.phi)?;
    let score_a = matching_score_var(&pair.s_ab, &m_ab)?;
    let score_b = matching_score_var(&pair.s_ba, &m_ba)?;
    let fg_a = mask_weights(&pair.s_ab, cfg)?;
    let fg_b = mask_weights(&pair.s_ba, cfg)?;
    score_a.mul(&fg_a)?.sum()?.add(&score_b.mul(&fg_b)?.sum()?)?.neg()
}

fn stage<'t, T: Real>(t: &DiffTransform<'t, T>, which: CycleStage) -> DiffTransform<'t, T> {
    match which {
        CycleStage::Full => *t,
        CycleStage::AffineOnly => t.affine_stage().unwrap_or(*t),
    }
}

/// `sum_i || outer(inner(p_i)) - other(p_i) ||`, with `other = None` meaning identity.
fn path_gap<'t, T: Real>(
    outer: &DiffTransform<'t, T>,
    inner: &DiffTransform<'t, T>,
    other: Option<&DiffTransform<'t, T>>,
    pts: &Var<'t, T>,
) -> R<'t, T> {
    let there = outer.apply(&inner.apply(pts)?)?;
    let reference = match other {
        Some(t) => t.apply(pts)?,
        None => *pts,
    };
    there.sub(&reference)?.norm_last()?.sum()
}

fn nonempty(sample: &CoordinateSample) -> std::result::Result<(), TensorError> {
    if sample.is_empty() {
        return Err(TensorError::InvalidShape {
            op: "consistency loss",
            shape: vec![sample.a.len(), sample.b.len()],
            reason: "coordinate sample is empty".into(),
        });
    }
    Ok(())
}

/// `sum_p ||T_BA(T_AB(p)) - p|| + sum_q ||T_AB(T_BA(q)) - q||`.
pub fn cycle_loss_var<'t, T: Real>(
    t_ab: &DiffTransform<'t, T>,
    t_ba: &DiffTransform<'t, T>,
    sample: &CoordinateSample,
    tape: &'t Tape<T>,
) -> R<'t, T> {
    nonempty(sample)?;
    let pa = points_var(tape, &sample.a);
    let pb = points_var(tape, &sample.b);
    path_gap(t_ba, t_ab, None, &pa)?.add(&path_gap(t_ab, t_ba, None, &pb)?)
}

/// `sum_p ||T_BC(T_AB(p)) - T_AC(p)|| + sum_q ||T_AC(T_BA(q)) - T_BC(q)||`.
pub fn transitivity_loss_var<'t, T: Real>(
    t_ab: &DiffTransform<'t, T>,
    t_bc: &DiffTransform<'t, T>,
    t_ac: &DiffTransform<'t, T>,
    t_ba: &DiffTransform<'t, T>,
    sample: &CoordinateSample,
    tape: &'t Tape<T>,
) -> R<'t, T> {
    nonempty(sample)?;
    let pa = points_var(tape, &sample.a);
    let pb = points_var(tape, &sample.b);
    path_gap(t_bc, t_ab, Some(t_ac), &pa)?.add(&path_gap(t_ac, t_ba, Some(t_bc), &pb)?)
}

/// The three transforms of a triplet needed beyond its pairs.
#[derive(Clone, Copy, Debug)]
pub struct TripletTerms<'t, T: Real> {
    pub t_ab: DiffTransform<'t, T>,
    pub t_bc: DiffTransform<'t, T>,
    pub t_ac: DiffTransform<'t, T>,
    pub t_ba: DiffTransform<'t, T>,
}

/// Loss terms on the tape; `total` is the differentiable root.
#[derive(Clone, Copy, Debug)]
pub struct LossVars<'t, T: Real> {
    pub total: Var<'t, T>,
    pub matching: Var<'t, T>,
    pub cycle: Var<'t, T>,
    pub transitivity: Option<Var<'t, T>>,
}

/// Scalar values of the loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub matching: f64,
    pub cycle: f64,
    pub transitivity: f64,
}

impl<T: Real> LossVars<'_, T> {
    pub fn breakdown(&self) -> LossBreakdown {
        let v = |x: &Var<'_, T>| x.item().map(Real::to_f64_lossy).unwrap_or(f64::NAN);
        LossBreakdown {
            total: v(&self.total),
            matching: v(&self.matching),
            cycle: v(&self.cycle),
            transitivity: self.transitivity.as_ref().map(v).unwrap_or(0.0),
        }
    }
}

/// `L_match + lambda_c L_cycle (+ lambda_t L_trans)` summed over `pairs`.
///
/// The transitivity term is added only when a triplet is given.
pub fn total_loss_var<'t, T: Real>(
    tape: &'t Tape<T>,
    pairs: &[PairTerms<'t, T>],
    triplet: Option<&TripletTerms<'t, T>>,
    sample: &CoordinateSample,
    weights: LossWeights,
    cfg: &LossConfig,
) -> std::result::Result<LossVars<'t, T>, TensorError> {
    let mut matching = tape.scalar(T::zero());
    let mut cycle = tape.scalar(T::zero());
    for pair in pairs {
        matching = matching.add(&matching_loss_var(pair, cfg)?)?;
        let (ab, ba) = (stage(&pair.t_ab, cfg.cycle_stage), stage(&pair.t_ba, cfg.cycle_stage));
        cycle = cycle.add(&cycle_loss_var(&ab, &ba, sample, tape)?)?;
    }
    let mut total = matching.add(&cycle.scale(T::lit(weights.lambda_c))?)?;
    let transitivity = match triplet {
        Some(tr) => {
            let s = |t: &DiffTransform<'t, T>| stage(t, cfg.cycle_stage);
            let l = transitivity_loss_var(&s(&tr.t_ab), &s(&tr.t_bc), &s(&tr.t_ac), &s(&tr.t_ba), sample, tape)?;
            total = total.add(&l.scale(T::lit(weights.lambda_t))?)?;
            Some(l)
        }
        None => None,
    };
    Ok(LossVars {
        total,
        matching,
        cycle,
        transitivity,
    })
}

fn scalar_of(v: R<'_, f64>) -> Result<f64> {
    Ok(v?.item().expect("scalar loss"))
}

/// Matching loss for fixed correlations, transforms and masks.
pub fn matching_loss(
    s_ab: &CorrelationMap,
    s_ba: &CorrelationMap,
    t_ab: &GeometricTransform,
    t_ba: &GeometricTransform,
    m_a: &ForegroundMask,
    m_b: &ForegroundMask,
    phi: f64,
) -> Result<f64> {
    if s_ba.source() != s_ab.target() || s_ba.target() != s_ab.source() {
        return Err(Error::Shape("s_ba must be the reverse-direction correlation".into()));
    }
    if m_a.shape != s_ab.source() || m_b.shape != s_ba.source() {
        return Err(Error::Shape("foreground masks must cover the source grids".into()));
    }
    let side = |s: &CorrelationMap, t: &GeometricTransform, m: &ForegroundMask| -> Result<f64> {
        let mask = correspondence_mask(t, s.source(), s.target(), phi);
        let scores = matching_score(s, &mask)?;
        Ok(scores.iter().zip(&m.values).map(|(a, &b)| a * f64::from(b)).sum())
    };
    Ok(-(side(s_ab, t_ab, m_a)? + side(s_ba, t_ba, m_b)?))
}

pub fn cycle_loss(t_ab: &GeometricTransform, t_ba: &GeometricTransform, sample: &CoordinateSample) -> Result<f64> {
    let tape = Tape::<f64>::new();
    let ab = DiffTransform::constant(&tape, t_ab)?;
    let ba = DiffTransform::constant(&tape, t_ba)?;
    scalar_of(cycle_loss_var(&ab, &ba, sample, &tape))
}

pub fn transitivity_loss(
    t_ab: &GeometricTransform,
    t_bc: &GeometricTransform,
    t_ac: &GeometricTransform,
    t_ba: &GeometricTransform,
    sample: &CoordinateSample,
) -> Result<f64> {
    let tape = Tape::<f64>::new();
    let c = |t| DiffTransform::constant(&tape, t);
    let (ab, bc, ac, ba) = (c(t_ab)?, c(t_bc)?, c(t_ac)?, c(t_ba)?);
    scalar_of(transitivity_loss_var(&ab, &bc, &ac, &ba, sample, &tape))
}

/// One pair with fixed correlations and predicted transforms.
#[derive(Clone, Debug)]
pub struct PairValues<'a> {
    pub s_ab: &'a CorrelationMap,
    pub s_ba: &'a CorrelationMap,
    pub t_ab: &'a GeometricTransform,
    pub t_ba: &'a GeometricTransform,
}

/// Loss value for fixed inputs (no gradients).
pub fn total_loss(
    pairs: &[PairValues<'_>],
    triplet: Option<[&GeometricTransform; 4]>,
    sample: &CoordinateSample,
    weights: LossWeights,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let tape = Tape::<f64>::new();
    let terms = pairs
        .iter()
        .map(|p| {
            Ok(PairTerms {
                s_ab: tape.constant(p.s_ab.to_tensor()),
                s_ba: tape.constant(p.s_ba.to_tensor()),
                t_ab: DiffTransform::constant(&tape, p.t_ab)?,
                t_ba: DiffTransform::constant(&tape, p.t_ba)?,
                grid_a: p.s_ab.source(),
                grid_b: p.s_ab.target(),
            })
        })
        .collect::<std::result::Result<Vec<_>, TensorError>>()?;
    let triplet = triplet
        .map(|[ab, bc, ac, ba]| -> std::result::Result<_, TensorError> {
            Ok(TripletTerms {
                t_ab: DiffTransform::constant(&tape, ab)?,
                t_bc: DiffTransform::constant(&tape, bc)?,
                t_ac: DiffTransform::constant(&tape, ac)?,
                t_ba: DiffTransform::constant(&tape, ba)?,
            })
        })
        .transpose()?;
    Ok(total_loss_var(&tape, &terms, triplet.as_ref(), sample, weights, cfg)?.breakdown())
}
