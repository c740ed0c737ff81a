//! Training: synthetic data, a supervised warm-up on known warps, then the
//! weak objective optimized with Adam.
//!
//! Each pair in a batch is differentiated on its own tape (in parallel when
//! enabled); gradients are summed in batch order, so runs are bit-identical
//! for a given seed regardless of thread count.

pub mod adam;
pub mod synth;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use adam::{adam_step, AdamState, DEFAULT_LR, PUBLISHED_LR};
pub use synth::{generate_category, generate_pair, generate_pair_with, SynthConfig, SyntheticPair, WarpFamily};

use crate::correlation::{correlate, CorrelationMap, FeatureMap};
use crate::error::{Error, Result};
use crate::features::{extract, DescriptorConfig};
use crate::geometry::{AffineParams, DiffTransform, GeometricTransform, TpsParams};
use crate::losses::{total_loss_var, CoordinateSample, LossConfig, LossWeights, PairTerms, TripletTerms};
use crate::regressor::{predict_var, RegressorWeights, WeightVars};
use crate::tensor::{Tape, Tensor, TensorError, Var};

/// A training pair of image indices, with the ground truth when known.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainPair {
    pub a: usize,
    pub b: usize,
    pub gt: Option<GeometricTransform>,
    /// Category the two images belong to, for triplet sampling.
    pub group: Option<usize>,
}

/// Feature maps plus the pairs and categories drawn over them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainSet {
    pub features: Vec<FeatureMap>,
    pub pairs: Vec<TrainPair>,
    /// Image indices of each category.
    pub groups: Vec<Vec<usize>>,
}

impl TrainSet {
    /// `categories` synthetic scenes with `members` warps each; every
    /// `(base, warp)` is a pair with exact ground truth.
    pub fn synthetic(
        seed: u64,
        categories: usize,
        members: usize,
        family: WarpFamily,
        magnitude: f64,
        synth: &SynthConfig,
        descriptor: &DescriptorConfig,
    ) -> Result<Self> {
        let cats = crate::par::map_range(categories, |c| -> Result<_> {
            let cat = generate_category(seed.wrapping_add(c as u64), family, magnitude, members, synth)?;
            let mut feats = vec![extract(&cat.base, descriptor)?];
            for (img, _) in &cat.members {
                feats.push(extract(img, descriptor)?);
            }
            Ok((feats, cat.members.into_iter().map(|(_, t)| t).collect::<Vec<_>>()))
        });
        let mut set = Self::default();
        for (g, cat) in cats.into_iter().enumerate() {
            let (feats, gts) = cat?;
            let base = set.features.len();
            set.groups.push((base..base + feats.len()).collect());
            set.features.extend(feats);
            for (k, gt) in gts.into_iter().enumerate() {
                set.pairs.push(TrainPair {
                    a: base,
                    b: base + 1 + k,
                    gt: Some(gt),
                    group: Some(g),
                });
            }
        }
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::Contract("training needs at least one pair".into()));
        }
        let n = self.features.len();
        for (k, p) in self.pairs.iter().enumerate() {
            if p.a >= n || p.b >= n {
                return Err(Error::Contract(format!("pair {k} references a missing image")));
            }
        }
        if self.groups.iter().flatten().any(|&i| i >= n) {
            return Err(Error::Contract("category references a missing image".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub loss: LossConfig,
    /// Supervised steps on known ground truth before the weak objective.
    pub warmup_steps: usize,
    pub lr: f64,
    pub warmup_lr: f64,
    /// Mirror synthetic bases before warping (generation time).
    pub flip: bool,
    /// Crop synthetic bases before warping (generation time).
    pub crop: bool,
    /// Randomly present pairs as `(B, A)`.
    pub swap: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            epochs: 1,
            seed: 0,
            weights: LossWeights::default(),
            loss: LossConfig::default(),
            warmup_steps: 0,
            lr: DEFAULT_LR,
            warmup_lr: DEFAULT_LR,
            flip: false,
            crop: false,
            swap: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        for (name, lr) in [("lr", self.lr), ("warmup_lr", self.warmup_lr)] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        LossWeights::new(self.weights.lambda_c, self.weights.lambda_t)?;
        self.loss.validate()
    }

    /// Synthetic generation options implied by the augmentation toggles.
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            flip: if self.flip { 0.5 } else { 0.0 },
            crop: if self.crop { 0.5 } else { 0.0 },
            ..SynthConfig::default()
        }
    }
}

/// Loss components of one weak-objective step, summed over the batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub total: f64,
    pub matching: f64,
    pub cycle: f64,
    pub transitivity: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Batch-mean supervised loss per warm-up step.
    pub warmup: Vec<f64>,
    pub steps: Vec<StepRecord>,
}

impl TrainLog {
    /// `step<TAB>L_total<TAB>L_match<TAB>L_cycle<TAB>L_trans` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for r in &self.steps {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                r.step, r.total, r.matching, r.cycle, r.transitivity
            )
            .expect("string write");
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub weights: RegressorWeights,
    pub log: TrainLog,
}

/// Per-image data reused across steps.
struct Prepared {
    grid: Tensor<f32>,
    rows: Tensor<f32>,
}

fn prepare(fm: &FeatureMap) -> Prepared {
    Prepared {
        grid: fm.to_grid(),
        rows: fm.to_rows(),
    }
}

/// `T_AB` and `T_BA` predicted for images `a`, `b` on `tape`.
fn predict_both<'t>(
    tape: &'t Tape<f32>,
    w: &WeightVars<'t, f32>,
    set: &TrainSet,
    prep: &[Prepared],
    s_ab: &CorrelationMap,
    s_ba: &CorrelationMap,
    (a, b): (usize, usize),
) -> Result<(PairTerms<'t, f32>, bool)> {
    let (fa, fb) = (&set.features[a], &set.features[b]);
    let sab = tape.constant(s_ab.to_tensor());
    let sba = tape.constant(s_ba.to_tensor());
    let c = |t: &Tensor<f32>| tape.constant(t.clone());
    let t_ab = predict_var(w, &sab, &c(&prep[a].grid), &c(&prep[b].rows), fa.grid(), fb.grid())?;
    let t_ba = predict_var(w, &sba, &c(&prep[b].grid), &c(&prep[a].rows), fb.grid(), fa.grid())?;
    Ok((
        PairTerms {
            s_ab: sab,
            s_ba: sba,
            t_ab,
            t_ba,
            grid_a: fa.grid(),
            grid_b: fb.grid(),
        },
        true,
    ))
}

fn gradients(tape: &Tape<f32>, root: Var<'_, f32>, w: &WeightVars<'_, f32>) -> Result<Vec<Tensor<f32>>> {
    let g = tape.backward(root)?;
    Ok(w.params.iter().map(|p| g.wrt(*p)).collect())
}

fn accumulate(acc: &mut Option<Vec<Vec<f64>>>, grads: &[Tensor<f32>]) {
    let acc = acc.get_or_insert_with(|| grads.iter().map(|g| vec![0.0; g.len()]).collect());
    for (a, g) in acc.iter_mut().zip(grads) {
        for (x, &v) in a.iter_mut().zip(g.data()) {
            *x += f64::from(v);
        }
    }
}

fn to_tensors(acc: Vec<Vec<f64>>, like: &RegressorWeights) -> Vec<Tensor<f32>> {
    acc.into_iter()
        .zip(like.tensors())
        .map(|(a, t)| Tensor::new(t.shape().to_vec(), a.into_iter().map(|v| v as f32).collect()).expect("same shape"))
        .collect()
}

fn forward_error(e: Error, step: usize) -> Error {
    match e {
        Error::Tensor(TensorError::NonFinite { .. }) => Error::NonFiniteLoss { term: "forward", step },
        other => other,
    }
}

/// Splits a ground-truth transform into cascade targets `(affine, displacements)`.
pub fn cascade_targets(gt: &GeometricTransform) -> ([f64; 6], [f64; 18]) {
    match gt {
        GeometricTransform::Affine(a) => (a.to_array(), [0.0; 18]),
        GeometricTransform::Tps(t) => (AffineParams::IDENTITY.to_array(), t.flat()),
        GeometricTransform::Cascade(a, t) => (a.to_array(), t.flat()),
    }
}

/// Squared parameter-space distance between a predicted cascade and `gt`.
pub fn parameter_error(pred: &GeometricTransform, gt: &GeometricTransform) -> f64 {
    let (pa, pd) = cascade_targets(pred);
    let (ga, gd) = cascade_targets(gt);
    pa.iter()
        .zip(&ga)
        .chain(pd.iter().zip(&gd))
        .map(|(x, y)| (x - y).powi(2))
        .sum()
}

fn supervised_loss<'t>(t: &DiffTransform<'t, f32>, gt: &GeometricTransform) -> Result<Var<'t, f32>> {
    let DiffTransform::Cascade {
        affine, displacements, ..
    } = t
    else {
        return Err(Error::Contract("regressor must predict a cascade".into()));
    };
    let tape = affine.tape();
    let (ga, gd) = cascade_targets(gt);
    let ga = tape.constant(Tensor::from_vec(ga.map(|v| v as f32).to_vec()));
    let gd = tape.constant(Tensor::from_vec(gd.map(|v| v as f32).to_vec()));
    let da = affine.sub(&ga)?.square()?.sum()?;
    let dd = displacements.reshape([18])?.sub(&gd)?.square()?.sum()?;
    Ok(da.add(&dd)?)
}

/// Batches of pair indices for one pass, in a seeded order.
fn epoch_batches(rng: &mut ChaCha8Rng, candidates: &[usize], batch: usize) -> Vec<Vec<usize>> {
    let mut order = candidates.to_vec();
    order.shuffle(rng);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

/// Supervised warm-up followed by `epochs` passes of the weak objective.
pub fn train(set: &TrainSet, init: &RegressorWeights, cfg: &TrainConfig) -> Result<TrainOutcome> {
    set.validate()?;
    cfg.validate()?;
    let mut weights = init.clone();
    let mut log = TrainLog::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let prep: Vec<Prepared> = crate::par::map(&set.features, prepare);

    let supervised: Vec<usize> = (0..set.pairs.len()).filter(|&k| set.pairs[k].gt.is_some()).collect();
    if cfg.warmup_steps > 0 && !supervised.is_empty() {
        let mut state = AdamState::for_params(cfg.warmup_lr, &weights.tensors());
        let mut queue: Vec<Vec<usize>> = Vec::new();
        for step in 0..cfg.warmup_steps {
            if queue.is_empty() {
                queue = epoch_batches(&mut rng, &supervised, cfg.batch_size);
                queue.reverse();
            }
            let batch = queue.pop().expect("refilled");
            let results = crate::par::map(&batch, |&k| -> Result<(f64, Vec<Tensor<f32>>)> {
                let pair = &set.pairs[k];
                let s = correlate(&set.features[pair.a], &set.features[pair.b])?;
                let tape = Tape::<f32>::new();
                let w = WeightVars::leaves(&tape, &weights);
                let (fa, fb) = (&set.features[pair.a], &set.features[pair.b]);
                let t = predict_var(
                    &w,
                    &tape.constant(s.to_tensor()),
                    &tape.constant(prep[pair.a].grid.clone()),
                    &tape.constant(prep[pair.b].rows.clone()),
                    fa.grid(),
                    fb.grid(),
                )?;
                let loss = supervised_loss(&t, pair.gt.as_ref().expect("supervised pair"))?;
                let value = f64::from(loss.item().expect("scalar"));
                Ok((value, gradients(&tape, loss, &w)?))
            });
            let mut acc = None;
            let mut total = 0.0;
            for r in results {
                let (v, g) = r.map_err(|e| forward_error(e, step))?;
                if !v.is_finite() {
                    return Err(Error::NonFiniteLoss { term: "warmup", step });
                }
                total += v;
                accumulate(&mut acc, &g);
            }
            log.warmup.push(total / batch.len() as f64);
            let grads = to_tensors(acc.expect("nonempty batch"), &weights);
            adam_step(&mut weights.tensors_mut(), &grads, &mut state)?;
        }
    }

    if cfg.epochs == 0 {
        return Ok(TrainOutcome { weights, log });
    }
    let corr: Vec<(CorrelationMap, CorrelationMap)> = crate::par::map(&set.pairs, |p| -> Result<_> {
        let (fa, fb) = (&set.features[p.a], &set.features[p.b]);
        Ok((correlate(fa, fb)?, correlate(fb, fa)?))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let all: Vec<usize> = (0..set.pairs.len()).collect();
    let mut state = AdamState::for_params(cfg.lr, &weights.tensors());
    let mut step = 0;
    for _ in 0..cfg.epochs {
        for batch in epoch_batches(&mut rng, &all, cfg.batch_size) {
            // Per-pair randomness is drawn up front so parallel order cannot matter.
            let jobs: Vec<(usize, bool, u64)> = batch
                .iter()
                .map(|&k| (k, cfg.swap && rng.gen_bool(0.5), rng.gen()))
                .collect();
            let results = crate::par::map(
                &jobs,
                |&(k, swap, pair_seed)| -> Result<(crate::losses::LossBreakdown, Vec<Tensor<f32>>)> {
                    let pair = &set.pairs[k];
                    let (s_ab, s_ba) = &corr[k];
                    let (ids, s_ab, s_ba) = if swap {
                        ((pair.b, pair.a), s_ba, s_ab)
                    } else {
                        ((pair.a, pair.b), s_ab, s_ba)
                    };
                    let tape = Tape::<f32>::new();
                    let w = WeightVars::leaves(&tape, &weights);
                    let (terms, _) = predict_both(&tape, &w, set, &prep, s_ab, s_ba, ids)?;
                    let mut prng = ChaCha8Rng::seed_from_u64(pair_seed);
                    let sample = cfg.loss.coordinate_sample(&mut prng, terms.grid_a, terms.grid_b);
                    let weights_no_t = LossWeights {
                        lambda_t: 0.0,
                        ..cfg.weights
                    };
                    let vars = total_loss_var(&tape, &[terms], None, &sample, weights_no_t, &cfg.loss)?;
                    Ok((vars.breakdown(), gradients(&tape, vars.total, &w)?))
                },
            );
            let triplet = if cfg.weights.lambda_t > 0.0 {
                draw_triplet(&mut rng, set, &batch)
            } else {
                None
            };
            let mut acc = None;
            let mut rec = StepRecord {
                step,
                total: 0.0,
                matching: 0.0,
                cycle: 0.0,
                transitivity: 0.0,
            };
            for r in results {
                let (b, g) = r.map_err(|e| forward_error(e, step))?;
                rec.matching += b.matching;
                rec.cycle += b.cycle;
                accumulate(&mut acc, &g);
            }
            if let Some((abc, sample_seed)) = triplet {
                let (value, g) =
                    triplet_step(set, &prep, &weights, abc, sample_seed, cfg).map_err(|e| forward_error(e, step))?;
                rec.transitivity = value;
                accumulate(&mut acc, &g);
            }
            rec.total = rec.matching + cfg.weights.lambda_c * rec.cycle + cfg.weights.lambda_t * rec.transitivity;
            for (term, v) in [
                ("matching", rec.matching),
                ("cycle", rec.cycle),
                ("transitivity", rec.transitivity),
                ("total", rec.total),
            ] {
                if !v.is_finite() {
                    return Err(Error::NonFiniteLoss { term, step });
                }
            }
            log.steps.push(rec);
            let grads = to_tensors(acc.expect("nonempty batch"), &weights);
            adam_step(&mut weights.tensors_mut(), &grads, &mut state)?;
            step += 1;
        }
    }
    Ok(TrainOutcome { weights, log })
}

/// Three distinct images of one category touched by `batch`, plus a seed
/// for the coordinate sample.
fn draw_triplet(rng: &mut ChaCha8Rng, set: &TrainSet, batch: &[usize]) -> Option<([usize; 3], u64)> {
    let mut groups: Vec<usize> = batch
        .iter()
        .filter_map(|&k| set.pairs[k].group)
        .filter(|&g| set.groups[g].len() >= 3)
        .collect();
    groups.dedup();
    let g = *groups.choose(rng)?;
    let picks: Vec<usize> = set.groups[g].choose_multiple(rng, 3).copied().collect();
    Some(([picks[0], picks[1], picks[2]], rng.gen()))
}

/// `lambda_t * L_trans` for one triplet; returns the unweighted loss and
/// the weighted gradients.
fn triplet_step(
    set: &TrainSet,
    prep: &[Prepared],
    weights: &RegressorWeights,
    [a, b, c]: [usize; 3],
    sample_seed: u64,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<Tensor<f32>>)> {
    let tape = Tape::<f32>::new();
    let w = WeightVars::leaves(&tape, weights);
    let predict = |x: usize, y: usize| -> Result<DiffTransform<'_, f32>> {
        let (fx, fy) = (&set.features[x], &set.features[y]);
        let s = correlate(fx, fy)?;
        predict_var(
            &w,
            &tape.constant(s.to_tensor()),
            &tape.constant(prep[x].grid.clone()),
            &tape.constant(prep[y].rows.clone()),
            fx.grid(),
            fy.grid(),
        )
    };
    let terms = TripletTerms {
        t_ab: predict(a, b)?,
        t_bc: predict(b, c)?,
        t_ac: predict(a, c)?,
        t_ba: predict(b, a)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let sample = cfg
        .loss
        .coordinate_sample(&mut rng, set.features[a].grid(), set.features[b].grid());
    let vars = total_loss_var(&tape, &[], Some(&terms), &sample, cfg.weights, &cfg.loss)?;
    let value = vars.transitivity.and_then(|v| v.item()).map(f64::from).unwrap_or(0.0);
    Ok((value, gradients(&tape, vars.total, &w)?))
}

/// Identity-displacement cascade used when comparing against affine ground truth.
pub fn as_cascade(t: &GeometricTransform) -> GeometricTransform {
    match *t {
        GeometricTransform::Affine(a) => GeometricTransform::Cascade(a, TpsParams::zero()),
        GeometricTransform::Tps(p) => GeometricTransform::Cascade(AffineParams::IDENTITY, p),
        c @ GeometricTransform::Cascade(..) => c,
    }
}

/// Coordinates sampled for one pair; exposed for tests that replay a step.
pub fn lattice() -> CoordinateSample {
    CoordinateSample::default()
}
