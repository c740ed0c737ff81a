use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Desk-scale default learning rate.
pub const DEFAULT_LR: f64 = 1e-3;
/// Learning rate used for fine-tuning a pretrained network at full scale.
pub const PUBLISHED_LR: f64 = 5e-8;

/// Bias-corrected Adam moments for a fixed list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64, shapes: &[&[usize]]) -> Self {
        let zeros = || shapes.iter().map(|s| vec![0.0; s.iter().product()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn for_params(lr: f64, params: &[&Tensor<f32>]) -> Self {
        let shapes: Vec<&[usize]> = params.iter().map(|t| t.shape()).collect();
        Self::new(lr, &shapes)
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam update of `params` in place.
pub fn adam_step(params: &mut [&mut Tensor<f32>], grads: &[Tensor<f32>], state: &mut AdamState) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != params.len() {
        return Err(Error::Shape(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.len() != state.m[k].len() {
            return Err(Error::Shape(format!(
                "parameter {k} has shape {:?}, gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let mut data = p.data().to_vec();
        for (i, (x, &gi)) in data.iter_mut().zip(g.data()).enumerate() {
            let gi = f64::from(gi);
            let m = state.beta1 * state.m[k][i] + (1.0 - state.beta1) * gi;
            let v = state.beta2 * state.v[k][i] + (1.0 - state.beta2) * gi * gi;
            state.m[k][i] = m;
            state.v[k][i] = v;
            let update = state.lr * (m / c1) / ((v / c2).sqrt() + state.eps);
            *x = (f64::from(*x) - update) as f32;
        }
        **p = Tensor::new(p.shape().to_vec(), data).expect("same shape");
    }
    Ok(())
}
