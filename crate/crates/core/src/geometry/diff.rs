//! Transforms whose parameters live on a gradient tape.

use super::tps::{self, control_point, CONTROL_POINTS, SYSTEM};
use super::{AffineParams, GeometricTransform, TpsParams};
use crate::tensor::{Real, Tape, Tensor, TensorError, Var};

type R<'t, T> = Result<Var<'t, T>, TensorError>;

/// A transform driven by tape variables.
///
/// Affine parameters are a `(6,)` vector ordered `a11 a12 tx a21 a22 ty`.
/// TPS stages carry their `(9, 2)` displacements and the `(12, 2)`
/// coefficient matrix derived from them (kernel weights in rows 0..9, then
/// the constant, `x` and `y` terms).
#[derive(Clone, Copy, Debug)]
pub enum DiffTransform<'t, T: Real> {
    Affine(Var<'t, T>),
    Tps {
        displacements: Var<'t, T>,
        coefficients: Var<'t, T>,
    },
    Cascade {
        affine: Var<'t, T>,
        displacements: Var<'t, T>,
        coefficients: Var<'t, T>,
    },
}

fn expect_len<T: Real>(v: &Var<'_, T>, n: usize, op: &'static str) -> Result<(), TensorError> {
    let shape = v.shape();
    if shape.iter().product::<usize>() != n {
        return Err(TensorError::InvalidShape {
            op,
            shape,
            reason: format!("expects {n} elements"),
        });
    }
    Ok(())
}

/// `(12, 2)` spline coefficients from `(9, 2)` (or `(18,)`) displacements.
pub fn tps_coefficients<'t, T: Real>(displacements: &Var<'t, T>) -> R<'t, T> {
    expect_len(displacements, 2 * CONTROL_POINTS, "tps_coefficients")?;
    let tape = displacements.tape();
    let sys = tps::system();
    let solve: Vec<T> = (0..SYSTEM)
        .flat_map(|r| (0..CONTROL_POINTS).map(move |k| T::lit(sys.inverse[r][k])))
        .collect();
    let solve = tape.constant(Tensor::new([SYSTEM, CONTROL_POINTS], solve)?);
    let ctrl: Vec<T> = (0..CONTROL_POINTS).flat_map(|k| control_point(k).map(T::lit)).collect();
    let ctrl = tape.constant(Tensor::new([CONTROL_POINTS, 2], ctrl)?);
    let targets = displacements.reshape([CONTROL_POINTS, 2])?.add(&ctrl)?;
    solve.matmul(&targets)
}

fn homogeneous<'t, T: Real>(pts: &Var<'t, T>) -> R<'t, T> {
    let n = pts.shape()[0];
    let ones = pts.tape().constant(Tensor::full([n, 1], T::one()));
    pts.concat_cols(&ones)
}

/// Applies affine params `(6,)` to `(n, 2)` points.
pub fn apply_affine<'t, T: Real>(params: &Var<'t, T>, pts: &Var<'t, T>) -> R<'t, T> {
    expect_len(params, 6, "apply_affine")?;
    // rows: x, y, 1; columns: output x, output y
    let m = params.gather(&[0, 3, 1, 4, 2, 5], [3, 2])?;
    homogeneous(pts)?.matmul(&m)
}

/// Applies TPS coefficients `(12, 2)` to `(n, 2)` points.
pub fn apply_tps<'t, T: Real>(coefficients: &Var<'t, T>, pts: &Var<'t, T>) -> R<'t, T> {
    let shape = pts.shape();
    if shape.len() != 2 || shape[1] != 2 {
        return Err(TensorError::InvalidShape {
            op: "apply_tps",
            shape,
            reason: "points must be (n, 2)".into(),
        });
    }
    let n = shape[0];
    let tape = pts.tape();
    let idx: Vec<usize> = (0..n)
        .flat_map(|i| (0..CONTROL_POINTS).flat_map(move |_| [2 * i, 2 * i + 1]))
        .collect();
    let repeated = pts.gather(&idx, [n * CONTROL_POINTS, 2])?;
    let ctrl: Vec<T> = (0..n)
        .flat_map(|_| (0..CONTROL_POINTS).flat_map(|k| control_point(k).map(T::lit)))
        .collect();
    let ctrl = tape.constant(Tensor::new([n * CONTROL_POINTS, 2], ctrl)?);
    let radial = repeated.sub(&ctrl)?.tps_radial()?.reshape([n, CONTROL_POINTS])?;
    let design = radial.concat_cols(&tape.constant(Tensor::full([n, 1], T::one())))?;
    let design = design.concat_cols(pts)?;
    design.matmul(coefficients)
}

/// Affine inverse expressed in tape ops, so gradients reach the forward params.
pub fn invert_affine<'t, T: Real>(params: &Var<'t, T>) -> R<'t, T> {
    expect_len(params, 6, "invert_affine")?;
    let tape = params.tape();
    let s = |i: usize| params.gather(&[i], [1]);
    let (a11, a12, tx, a21, a22, ty) = (s(0)?, s(1)?, s(2)?, s(3)?, s(4)?, s(5)?);
    let det = a11.mul(&a22)?.sub(&a12.mul(&a21)?)?;
    let i11 = a22.div(&det)?;
    let i12 = a12.neg()?.div(&det)?;
    let i21 = a21.neg()?.div(&det)?;
    let i22 = a11.div(&det)?;
    let itx = i11.mul(&tx)?.add(&i12.mul(&ty)?)?.neg()?;
    let ity = i21.mul(&tx)?.add(&i22.mul(&ty)?)?.neg()?;
    tape.concat(&[i11, i12, itx, i21, i22, ity])
}

impl<'t, T: Real> DiffTransform<'t, T> {
    pub fn affine(params: Var<'t, T>) -> Result<Self, TensorError> {
        expect_len(&params, 6, "affine")?;
        Ok(Self::Affine(params.reshape([6])?))
    }

    pub fn tps(displacements: Var<'t, T>) -> Result<Self, TensorError> {
        let coefficients = tps_coefficients(&displacements)?;
        Ok(Self::Tps {
            displacements,
            coefficients,
        })
    }

    pub fn cascade(affine: Var<'t, T>, displacements: Var<'t, T>) -> Result<Self, TensorError> {
        expect_len(&affine, 6, "cascade")?;
        let coefficients = tps_coefficients(&displacements)?;
        Ok(Self::Cascade {
            affine: affine.reshape([6])?,
            displacements,
            coefficients,
        })
    }

    /// Places a fixed transform on the tape as constants.
    pub fn constant(tape: &'t Tape<T>, t: &GeometricTransform) -> Result<Self, TensorError> {
        let affine = |a: &AffineParams| tape.constant(Tensor::from_vec(a.to_array().map(T::lit).to_vec()));
        let disp = |p: &TpsParams| tape.constant(Tensor::from_vec(p.flat().map(T::lit).to_vec()));
        match t {
            GeometricTransform::Affine(a) => Self::affine(affine(a)),
            GeometricTransform::Tps(p) => Self::tps(disp(p)),
            GeometricTransform::Cascade(a, p) => Self::cascade(affine(a), disp(p)),
        }
    }

    /// Only the affine stage (cascades drop their TPS refinement).
    pub fn affine_stage(&self) -> Option<Self> {
        match *self {
            Self::Affine(a) | Self::Cascade { affine: a, .. } => Some(Self::Affine(a)),
            Self::Tps { .. } => None,
        }
    }

    /// Maps `(n, 2)` normalized points.
    pub fn apply(&self, pts: &Var<'t, T>) -> R<'t, T> {
        match self {
            Self::Affine(a) => apply_affine(a, pts),
            Self::Tps { coefficients, .. } => apply_tps(coefficients, pts),
            Self::Cascade {
                affine, coefficients, ..
            } => apply_tps(coefficients, &apply_affine(affine, pts)?),
        }
    }

    /// Current parameter values as a plain transform.
    pub fn to_value(&self) -> GeometricTransform {
        let f64s = |v: &Var<'t, T>| -> Vec<f64> { v.to_vec().into_iter().map(Real::to_f64_lossy).collect() };
        let affine = |v: &Var<'t, T>| {
            let a = f64s(v);
            AffineParams::from_array([a[0], a[1], a[2], a[3], a[4], a[5]])
        };
        let tps = |v: &Var<'t, T>| TpsParams::from_flat(&f64s(v)).expect("18 displacements");
        match self {
            Self::Affine(a) => GeometricTransform::Affine(affine(a)),
            Self::Tps { displacements, .. } => GeometricTransform::Tps(tps(displacements)),
            Self::Cascade {
                affine: a,
                displacements,
                ..
            } => GeometricTransform::Cascade(affine(a), tps(displacements)),
        }
    }
}

/// `(n, 2)` constant holding `points`.
pub fn points_var<'t, T: Real>(tape: &'t Tape<T>, points: &[[f64; 2]]) -> Var<'t, T> {
    let data = points.iter().flat_map(|p| p.map(T::lit)).collect();
    tape.constant(Tensor::new([points.len(), 2], data).expect("n x 2"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_tps() -> TpsParams {
        TpsParams::new(std::array::from_fn(|k| {
            [0.05 * (k as f64 - 4.0), 0.02 * (k % 3) as f64 - 0.03]
        }))
    }

    #[test]
    fn tape_apply_matches_value_apply() {
        let pts = [[0.1, 0.2], [-1.0, -1.0], [0.73, -0.31], [0.0, 0.0]];
        let transforms = [
            GeometricTransform::Affine(AffineParams::new(1.1, 0.2, -0.1, -0.05, 0.9, 0.3)),
            GeometricTransform::Tps(sample_tps()),
            GeometricTransform::Cascade(AffineParams::new(0.95, -0.1, 0.05, 0.1, 1.02, -0.02), sample_tps()),
        ];
        for t in &transforms {
            let tape = Tape::<f64>::new();
            let d = DiffTransform::constant(&tape, t).unwrap();
            let out = d.apply(&points_var(&tape, &pts)).unwrap().to_vec();
            for (i, p) in pts.iter().enumerate() {
                let e = t.apply(*p);
                assert!((out[2 * i] - e[0]).abs() < 1e-12);
                assert!((out[2 * i + 1] - e[1]).abs() < 1e-12);
            }
            assert_eq!(d.to_value(), *t);
        }
    }

    #[test]
    fn tape_inverse_matches_value_inverse() {
        let a = AffineParams::new(1.1, 0.2, -0.1, -0.05, 0.9, 0.3);
        let tape = Tape::<f64>::new();
        let v = tape.constant(Tensor::from_vec(a.to_array().to_vec()));
        let inv = invert_affine(&v).unwrap().to_vec();
        let e = a.invert().unwrap().to_array();
        for (x, y) in inv.iter().zip(e) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
