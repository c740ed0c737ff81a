//! Thin-plate spline over the fixed uniform 3x3 control grid.
//!
//! The 12x12 system `[K P; P^T 0] [w; a] = [v; 0]` depends only on the
//! control points, so its inverse is computed once and coefficients are a
//! fixed linear function of the displacements.

use std::sync::OnceLock;

use super::Point;

pub const CONTROL_POINTS: usize = 9;
pub(crate) const SYSTEM: usize = CONTROL_POINTS + 3;

/// Radial basis `U(r) = r^2 ln(r^2)` evaluated from the squared radius.
#[inline]
pub fn radial(r2: f64) -> f64 {
    if r2 > 0.0 {
        r2 * r2.ln()
    } else {
        0.0
    }
}

/// Control point `k` in row-major order, top-left `(-1,-1)` to bottom-right `(1,1)`.
pub fn control_point(k: usize) -> Point {
    let (row, col) = (k / 3, k % 3);
    [col as f64 - 1.0, row as f64 - 1.0]
}

pub fn control_points() -> [Point; CONTROL_POINTS] {
    std::array::from_fn(control_point)
}

pub(crate) struct TpsSystem {
    /// Inverse of the augmented system matrix.
    pub inverse: [[f64; SYSTEM]; SYSTEM],
}

pub(crate) fn system() -> &'static TpsSystem {
    static SYS: OnceLock<TpsSystem> = OnceLock::new();
    SYS.get_or_init(|| {
        let c = control_points();
        let mut m = [[0.0; SYSTEM]; SYSTEM];
        for i in 0..CONTROL_POINTS {
            for j in 0..CONTROL_POINTS {
                let dx = c[i][0] - c[j][0];
                let dy = c[i][1] - c[j][1];
                m[i][j] = radial(dx * dx + dy * dy);
            }
            let p = [1.0, c[i][0], c[i][1]];
            for k in 0..3 {
                m[i][CONTROL_POINTS + k] = p[k];
                m[CONTROL_POINTS + k][i] = p[k];
            }
        }
        let inverse = invert(m).expect("3x3 TPS control grid is non-degenerate");
        TpsSystem { inverse }
    })
}

/// Gauss-Jordan inversion with partial pivoting.
fn invert<const N: usize>(mut m: [[f64; N]; N]) -> Option<[[f64; N]; N]> {
    let mut inv = [[0.0; N]; N];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..N {
        let pivot = (col..N).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[pivot][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, pivot);
        inv.swap(col, pivot);
        let d = m[col][col];
        for k in 0..N {
            m[col][k] /= d;
            inv[col][k] /= d;
        }
        for r in 0..N {
            if r == col {
                continue;
            }
            let f = m[r][col];
            if f == 0.0 {
                continue;
            }
            for k in 0..N {
                m[r][k] -= f * m[col][k];
                inv[r][k] -= f * inv[col][k];
            }
        }
    }
    Some(inv)
}

/// Solved spline coefficients, one column per output axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TpsCoefficients {
    /// Kernel weights `w_k` for control point `k`, as `[x-axis, y-axis]`.
    pub weights: [[f64; 2]; CONTROL_POINTS],
    /// Affine part: rows are the constant, `x` and `y` terms.
    pub affine: [[f64; 2]; 3],
}

/// TPS warp: control point `k` moves to `control_point(k) + displacements[k]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TpsParams {
    displacements: [[f64; 2]; CONTROL_POINTS],
    coefficients: TpsCoefficients,
}

/// Solves the spline system for the given control-point displacements.
pub fn solve_tps_coefficients(displacements: [[f64; 2]; CONTROL_POINTS]) -> TpsParams {
    let sys = system();
    let c = control_points();
    let mut weights = [[0.0; 2]; CONTROL_POINTS];
    let mut affine = [[0.0; 2]; 3];
    for axis in 0..2 {
        for r in 0..SYSTEM {
            let v: f64 = (0..CONTROL_POINTS)
                .map(|k| sys.inverse[r][k] * (c[k][axis] + displacements[k][axis]))
                .sum();
            if r < CONTROL_POINTS {
                weights[r][axis] = v;
            } else {
                affine[r - CONTROL_POINTS][axis] = v;
            }
        }
    }
    TpsParams {
        displacements,
        coefficients: TpsCoefficients { weights, affine },
    }
}

impl TpsParams {
    pub fn new(displacements: [[f64; 2]; CONTROL_POINTS]) -> Self {
        solve_tps_coefficients(displacements)
    }

    pub fn zero() -> Self {
        Self::new([[0.0; 2]; CONTROL_POINTS])
    }

    /// From 18 values ordered `d1x d1y ... d9x d9y`.
    pub fn from_flat(flat: &[f64]) -> Option<Self> {
        (flat.len() == 2 * CONTROL_POINTS).then(|| Self::new(std::array::from_fn(|k| [flat[2 * k], flat[2 * k + 1]])))
    }

    pub fn displacements(&self) -> &[[f64; 2]; CONTROL_POINTS] {
        &self.displacements
    }

    pub fn flat(&self) -> [f64; 2 * CONTROL_POINTS] {
        std::array::from_fn(|i| self.displacements[i / 2][i % 2])
    }

    pub fn coefficients(&self) -> &TpsCoefficients {
        &self.coefficients
    }

    pub fn apply(&self, p: Point) -> Point {
        let TpsCoefficients { weights, affine } = &self.coefficients;
        let mut out = [0.0; 2];
        for axis in 0..2 {
            out[axis] = affine[0][axis] + affine[1][axis] * p[0] + affine[2][axis] * p[1];
        }
        for (k, w) in weights.iter().enumerate() {
            let c = control_point(k);
            let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
            let u = radial(dx * dx + dy * dy);
            out[0] += w[0] * u;
            out[1] += w[1] * u;
        }
        out
    }

    /// `d out / d p` as rows per output axis.
    pub fn jacobian(&self, p: Point) -> [[f64; 2]; 2] {
        let TpsCoefficients { weights, affine } = &self.coefficients;
        let mut j = [[affine[1][0], affine[2][0]], [affine[1][1], affine[2][1]]];
        for (k, w) in weights.iter().enumerate() {
            let c = control_point(k);
            let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
            let r2 = dx * dx + dy * dy;
            if r2 > 0.0 {
                let s = 2.0 * (r2.ln() + 1.0);
                for axis in 0..2 {
                    j[axis][0] += w[axis] * s * dx;
                    j[axis][1] += w[axis] * s * dy;
                }
            }
        }
        j
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_displacement_is_identity() {
        let t = TpsParams::zero();
        let c = t.coefficients();
        for w in c.weights {
            assert!(w[0].abs() < 1e-12 && w[1].abs() < 1e-12);
        }
        let expect = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        for (a, e) in c.affine.iter().zip(expect) {
            assert!((a[0] - e[0]).abs() < 1e-12 && (a[1] - e[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn global_translation_has_no_kernel_part() {
        let t = TpsParams::new([[0.2, 0.2]; 9]);
        for w in t.coefficients().weights {
            assert!(w[0].abs() < 1e-6 && w[1].abs() < 1e-6);
        }
        let a = t.coefficients().affine;
        assert!((a[0][0] - 0.2).abs() < 1e-9 && (a[0][1] - 0.2).abs() < 1e-9);
    }

    #[test]
    fn center_displacement_interpolates() {
        let mut d = [[0.0; 2]; 9];
        d[4] = [0.1, 0.0];
        let p = TpsParams::new(d).apply([0.0, 0.0]);
        assert!((p[0] - 0.1).abs() < 1e-12 && p[1].abs() < 1e-12);
    }

    #[test]
    fn jacobian_matches_differences() {
        let d: [[f64; 2]; 9] = std::array::from_fn(|k| [0.03 * k as f64 - 0.1, 0.05 - 0.01 * k as f64]);
        let t = TpsParams::new(d);
        let p = [0.31, -0.42];
        let j = t.jacobian(p);
        let h = 1e-6;
        for c in 0..2 {
            let mut a = p;
            let mut b = p;
            a[c] += h;
            b[c] -= h;
            let (fa, fb) = (t.apply(a), t.apply(b));
            for axis in 0..2 {
                let fd = (fa[axis] - fb[axis]) / (2.0 * h);
                assert!((fd - j[axis][c]).abs() < 1e-6);
            }
        }
    }
}
