//! Desk-scale instances for checking tape gradients against 64-bit central
//! differences: three feature maps on one grid, a small regressor whose
//! final layers are perturbed away from the identity, and every loss term.

use rand::Rng;
use semmatch::correlation::{correlate_var, CorrelationNorm};
use semmatch::geometry::{DiffTransform, GeometricTransform, GridShape};
use semmatch::losses::{
    cycle_loss_var, matching_loss_var, total_loss_var, transitivity_loss_var, CoordinateSample, LossConfig,
    LossWeights, PairTerms, TripletTerms,
};
use semmatch::regressor::{init_weights, predict_var, RegressorConfig, WeightVars};
use semmatch::tensor::{Tape, Tensor, Var};

use super::{phi_margin, random_cascade, rel_error, rng};

pub const TERMS: [&str; 4] = ["matching", "cycle", "transitivity", "total"];
/// Required distance of every `|t(p) - q|` from `phi`, in cells. Differences
/// move transforms by far less, so the hard masks stay fixed.
const MIN_MARGIN: f64 = 1e-3;
const STEP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Wrt {
    Weights,
    Features,
    Transforms,
}

impl Wrt {
    pub const ALL: [Wrt; 3] = [Wrt::Weights, Wrt::Features, Wrt::Transforms];
}

pub struct Instance {
    pub grid: GridShape,
    pub d: usize,
    /// `(P, d)` raw rows of images A, B, C.
    pub features: [Vec<f64>; 3],
    pub config: RegressorConfig,
    pub weights: Vec<Tensor<f64>>,
    /// Fixed `T_AB, T_BA, T_BC, T_AC` for the transform-parameter check.
    pub transforms: [GeometricTransform; 4],
    pub sample: CoordinateSample,
    pub loss: LossConfig,
    pub lambdas: LossWeights,
}

/// A random instance, or `None` when some cell pair sits too close to the
/// correspondence threshold for differences to be meaningful.
pub fn instance(seed: u64) -> Option<Instance> {
    let mut r = rng(seed);
    let grid = GridShape::new(r.gen_range(3..=5), r.gen_range(3..=5));
    let d = r.gen_range(3..=6);
    let features = std::array::from_fn(|_| (0..grid.cells() * d).map(|_| r.gen_range(-1.0..1.0)).collect());
    let mut config = RegressorConfig::new(grid);
    config.hidden = 3;
    config.pool = 2;
    let w = init_weights(seed, config).ok()?;
    let mut weights: Vec<Tensor<f64>> = w.tensors().into_iter().map(|t| t.cast()).collect();
    // Layers 2, 3, 6, 7 are the zero-initialized final layers.
    for k in [2, 3, 6, 7] {
        let data = (0..weights[k].len()).map(|_| r.gen_range(-0.05..0.05)).collect();
        weights[k] = Tensor::new(weights[k].shape().to_vec(), data).unwrap();
    }
    let transforms = std::array::from_fn(|_| random_cascade(&mut r, 0.15));
    let inst = Instance {
        grid,
        d,
        features,
        config,
        weights,
        transforms,
        sample: CoordinateSample::lattice(4),
        loss: LossConfig::default(),
        lambdas: LossWeights::new(0.7, 1.3).unwrap(),
    };
    let [ab, ba] = inst.predicted();
    let phi = inst.loss.phi;
    let margins = [
        phi_margin(&ab, grid, grid, phi),
        phi_margin(&ba, grid, grid, phi),
        phi_margin(&inst.transforms[0], grid, grid, phi),
        phi_margin(&inst.transforms[1], grid, grid, phi),
    ];
    margins.iter().all(|&m| m > MIN_MARGIN).then_some(inst)
}

impl Instance {
    /// Current values of the parameters selected by `wrt`, flattened.
    pub fn point(&self, wrt: Wrt) -> Vec<f64> {
        match wrt {
            Wrt::Weights => self.weights.iter().flat_map(|t| t.data().to_vec()).collect(),
            Wrt::Features => self.features.concat(),
            Wrt::Transforms => self.transforms.iter().flat_map(transform_flat).collect(),
        }
    }

    /// Predicted `T_AB` and `T_BA`.
    pub fn predicted(&self) -> [GeometricTransform; 2] {
        let tape = Tape::<f64>::new();
        let built = self.build(&tape, Wrt::Weights, &self.point(Wrt::Weights));
        [built.transforms[0].to_value(), built.transforms[1].to_value()]
    }

    /// The four loss values at `x`.
    pub fn values(&self, wrt: Wrt, x: &[f64]) -> Vec<f64> {
        let tape = Tape::<f64>::new();
        let built = self.build(&tape, wrt, x);
        built.losses.iter().map(|l| l.item().unwrap()).collect()
    }

    /// Tape gradients of each loss with respect to `x`.
    pub fn gradients(&self, wrt: Wrt, x: &[f64]) -> Vec<Vec<f64>> {
        let tape = Tape::<f64>::new();
        let built = self.build(&tape, wrt, x);
        built
            .losses
            .iter()
            .map(|&l| {
                let g = tape.backward(l).unwrap();
                built.params.iter().flat_map(|&v| g.wrt(v).data().to_vec()).collect()
            })
            .collect()
    }

    fn build<'t>(&self, tape: &'t Tape<f64>, wrt: Wrt, x: &[f64]) -> Built<'t> {
        let (g, d) = (self.grid, self.d);
        let mut params = Vec::new();
        let mut take = |v: Var<'t, f64>, own: bool| {
            if own {
                params.push(v);
            }
            v
        };

        let mut offset = 0;
        let mut slice = |n: usize| {
            let s = &x[offset..offset + n];
            offset += n;
            s.to_vec()
        };
        let weights: Vec<Var<'t, f64>> = self
            .weights
            .iter()
            .map(|t| {
                let data = if wrt == Wrt::Weights {
                    slice(t.len())
                } else {
                    t.data().to_vec()
                };
                take(
                    tape.leaf(Tensor::new(t.shape().to_vec(), data).unwrap()),
                    wrt == Wrt::Weights,
                )
            })
            .collect();
        let rows: Vec<Var<'t, f64>> = self
            .features
            .iter()
            .map(|f| {
                let data = if wrt == Wrt::Features {
                    slice(f.len())
                } else {
                    f.clone()
                };
                take(
                    tape.leaf(Tensor::new([g.cells(), d], data).unwrap()),
                    wrt == Wrt::Features,
                )
            })
            .collect();
        let wv = WeightVars {
            config: self.config,
            params: weights,
        };
        let corr = |a: usize, b: usize| correlate_var(&rows[a], &rows[b], CorrelationNorm::Cosine).unwrap();
        let (s_ab, s_ba) = (corr(0, 1), corr(1, 0));
        let transforms: [DiffTransform<'t, f64>; 4] = if wrt == Wrt::Transforms {
            std::array::from_fn(|_| {
                let a = take(tape.leaf(Tensor::from_vec(slice(6))), true);
                let t = take(tape.leaf(Tensor::from_vec(slice(18))), true);
                DiffTransform::cascade(a, t).unwrap()
            })
        } else {
            [(0, 1), (1, 0), (1, 2), (0, 2)].map(|(a, b)| {
                let s = corr(a, b);
                let fa = rows[a].reshape([g.h, g.w, d]).unwrap();
                predict_var(&wv, &s, &fa, &rows[b], g, g).unwrap()
            })
        };
        let [t_ab, t_ba, t_bc, t_ac] = transforms;
        let pair = PairTerms {
            s_ab,
            s_ba,
            t_ab,
            t_ba,
            grid_a: g,
            grid_b: g,
        };
        let triplet = TripletTerms { t_ab, t_bc, t_ac, t_ba };
        let losses = vec![
            matching_loss_var(&pair, &self.loss).unwrap(),
            cycle_loss_var(&t_ab, &t_ba, &self.sample, tape).unwrap(),
            transitivity_loss_var(&t_ab, &t_bc, &t_ac, &t_ba, &self.sample, tape).unwrap(),
            total_loss_var(tape, &[pair], Some(&triplet), &self.sample, self.lambdas, &self.loss)
                .unwrap()
                .total,
        ];
        Built {
            params,
            transforms,
            losses,
        }
    }
}

struct Built<'t> {
    params: Vec<Var<'t, f64>>,
    transforms: [DiffTransform<'t, f64>; 4],
    losses: Vec<Var<'t, f64>>,
}

fn transform_flat(t: &GeometricTransform) -> Vec<f64> {
    match t {
        GeometricTransform::Cascade(a, s) => a.to_array().into_iter().chain(s.flat()).collect(),
        _ => unreachable!("gradient instances use cascades"),
    }
}

/// One compared gradient.
#[derive(Clone, Debug)]
pub struct Check {
    pub seed: u64,
    pub wrt: Wrt,
    pub term: &'static str,
    pub params: usize,
    pub rel: f64,
    /// Norm of the difference-quotient gradient, to show the check is not vacuous.
    pub norm: f64,
}

/// Compares every term against central differences on the first
/// `instances` accepted seeds.
pub fn run_suite(instances: usize) -> Vec<Check> {
    let mut out = Vec::new();
    let mut accepted = 0;
    for seed in 0..200u64 {
        if accepted == instances {
            break;
        }
        let Some(inst) = instance(seed) else { continue };
        accepted += 1;
        for wrt in Wrt::ALL {
            let x = inst.point(wrt);
            let analytic = inst.gradients(wrt, &x);
            let numeric = super::central_diff(|p| inst.values(wrt, p), &x, STEP);
            for (k, term) in TERMS.iter().enumerate() {
                out.push(Check {
                    seed,
                    wrt,
                    term,
                    params: x.len(),
                    rel: rel_error(&analytic[k], &numeric[k]),
                    norm: numeric[k].iter().map(|v| v * v).sum::<f64>().sqrt(),
                });
            }
        }
    }
    assert_eq!(accepted, instances, "too few instances clear the threshold margin");
    out
}
