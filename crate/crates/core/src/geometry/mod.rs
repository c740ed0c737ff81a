//! Affine and thin-plate-spline transforms in the normalized `[-1, 1]^2` frame.
//!
//! Cell `(i, j)` of an `h x w` grid sits at `x = 2j/(w-1) - 1`,
//! `y = 2i/(h-1) - 1`, so the same transform applies to feature grids and
//! image pixels alike. Transforms map coordinates of the source image into
//! the target image.

pub mod diff;
mod text;
pub mod tps;

use std::fmt;

use crate::error::{Error, Result};

pub use diff::DiffTransform;
pub use tps::{solve_tps_coefficients, TpsCoefficients, TpsParams, CONTROL_POINTS};

/// `(x, y)` in the normalized frame.
pub type Point = [f64; 2];

/// Extents of a regular grid (feature cells or image pixels).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridShape {
    pub h: usize,
    pub w: usize,
}

impl GridShape {
    pub fn new(h: usize, w: usize) -> Self {
        Self { h, w }
    }

    pub fn cells(&self) -> usize {
        self.h * self.w
    }

    fn axis_to_norm(v: f64, n: usize) -> f64 {
        if n > 1 {
            2.0 * v / (n - 1) as f64 - 1.0
        } else {
            0.0
        }
    }

    fn axis_to_grid(v: f64, n: usize) -> f64 {
        if n > 1 {
            (v + 1.0) * (n - 1) as f64 / 2.0
        } else {
            0.0
        }
    }

    /// Normalized coordinates of cell `(row, col)`.
    pub fn cell_to_norm(&self, row: usize, col: usize) -> Point {
        [
            Self::axis_to_norm(col as f64, self.w),
            Self::axis_to_norm(row as f64, self.h),
        ]
    }

    /// Grid units `(col, row)` as reals, to normalized.
    pub fn grid_to_norm(&self, g: Point) -> Point {
        [Self::axis_to_norm(g[0], self.w), Self::axis_to_norm(g[1], self.h)]
    }

    /// Normalized to grid units `(col, row)`.
    pub fn norm_to_grid(&self, p: Point) -> Point {
        [Self::axis_to_grid(p[0], self.w), Self::axis_to_grid(p[1], self.h)]
    }

    /// Every cell in row-major order, normalized.
    pub fn points(&self) -> Vec<Point> {
        (0..self.h)
            .flat_map(|i| (0..self.w).map(move |j| (i, j)))
            .map(|(i, j)| self.cell_to_norm(i, j))
            .collect()
    }
}

/// Six-parameter affine map `x' = a11 x + a12 y + tx`, `y' = a21 x + a22 y + ty`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams {
    pub a11: f64,
    pub a12: f64,
    pub tx: f64,
    pub a21: f64,
    pub a22: f64,
    pub ty: f64,
}

impl Default for AffineParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl AffineParams {
    pub const IDENTITY: Self = Self::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0);

    pub const fn new(a11: f64, a12: f64, tx: f64, a21: f64, a22: f64, ty: f64) -> Self {
        Self {
            a11,
            a12,
            tx,
            a21,
            a22,
            ty,
        }
    }

    pub const fn translation(tx: f64, ty: f64) -> Self {
        Self::new(1.0, 0.0, tx, 0.0, 1.0, ty)
    }

    /// Order `a11 a12 tx a21 a22 ty`.
    pub fn from_array(a: [f64; 6]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.a11, self.a12, self.tx, self.a21, self.a22, self.ty]
    }

    pub fn determinant(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a21
    }

    pub fn apply(&self, p: Point) -> Point {
        [
            self.a11 * p[0] + self.a12 * p[1] + self.tx,
            self.a21 * p[0] + self.a22 * p[1] + self.ty,
        ]
    }

    pub fn invert(&self) -> Result<Self> {
        let det = self.determinant();
        if !det.is_finite() || det.abs() <= 1e-8 {
            return Err(Error::Singular { det });
        }
        let (i11, i12) = (self.a22 / det, -self.a12 / det);
        let (i21, i22) = (-self.a21 / det, self.a11 / det);
        Ok(Self::new(
            i11,
            i12,
            -(i11 * self.tx + i12 * self.ty),
            i21,
            i22,
            -(i21 * self.tx + i22 * self.ty),
        ))
    }

    /// The map `p -> next(self(p))` as a single affine.
    pub fn then(&self, next: &AffineParams) -> AffineParams {
        let n = next;
        Self::new(
            n.a11 * self.a11 + n.a12 * self.a21,
            n.a11 * self.a12 + n.a12 * self.a22,
            n.a11 * self.tx + n.a12 * self.ty + n.tx,
            n.a21 * self.a11 + n.a22 * self.a21,
            n.a21 * self.a12 + n.a22 * self.a22,
            n.a21 * self.tx + n.a22 * self.ty + n.ty,
        )
    }

    fn jacobian(&self) -> [[f64; 2]; 2] {
        [[self.a11, self.a12], [self.a21, self.a22]]
    }
}

/// An affine map, a TPS warp, or the two-stage cascade (affine first, then
/// TPS in the affinely-warped frame).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GeometricTransform {
    Affine(AffineParams),
    Tps(TpsParams),
    Cascade(AffineParams, TpsParams),
}

impl Default for GeometricTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl From<AffineParams> for GeometricTransform {
    fn from(a: AffineParams) -> Self {
        Self::Affine(a)
    }
}

impl From<TpsParams> for GeometricTransform {
    fn from(t: TpsParams) -> Self {
        Self::Tps(t)
    }
}

impl GeometricTransform {
    pub fn identity() -> Self {
        Self::Affine(AffineParams::IDENTITY)
    }

    pub fn apply(&self, p: Point) -> Point {
        match self {
            Self::Affine(a) => a.apply(p),
            Self::Tps(t) => t.apply(p),
            Self::Cascade(a, t) => t.apply(a.apply(p)),
        }
    }

    pub fn jacobian(&self, p: Point) -> [[f64; 2]; 2] {
        match self {
            Self::Affine(a) => a.jacobian(),
            Self::Tps(t) => t.jacobian(p),
            Self::Cascade(a, t) => mat_mul(t.jacobian(a.apply(p)), a.jacobian()),
        }
    }

    /// The affine stage, if any.
    pub fn affine_part(&self) -> Option<&AffineParams> {
        match self {
            Self::Affine(a) | Self::Cascade(a, _) => Some(a),
            Self::Tps(_) => None,
        }
    }

    /// Solves `self(p) = q` by Newton iteration. Affine maps use the exact
    /// inverse. Returns `None` if the iteration does not converge.
    pub fn invert_point(&self, q: Point) -> Option<Point> {
        if let Self::Affine(a) = self {
            return a.invert().ok().map(|inv| inv.apply(q));
        }
        let mut p = match self.affine_part().map(AffineParams::invert) {
            Some(Ok(inv)) => inv.apply(q),
            _ => q,
        };
        for _ in 0..50 {
            let f = self.apply(p);
            let r = [f[0] - q[0], f[1] - q[1]];
            if r[0].hypot(r[1]) < 1e-12 {
                return Some(p);
            }
            let j = self.jacobian(p);
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if det.abs() < 1e-12 || !det.is_finite() {
                return None;
            }
            let step = [
                (j[1][1] * r[0] - j[0][1] * r[1]) / det,
                (-j[1][0] * r[0] + j[0][0] * r[1]) / det,
            ];
            p = [p[0] - step[0], p[1] - step[1]];
        }
        let f = self.apply(p);
        ((f[0] - q[0]).hypot(f[1] - q[1]) < 1e-9).then_some(p)
    }
}

fn mat_mul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

/// `outer(inner(p))`. TPS is not closed under composition, so composition
/// is only ever by chaining.
pub fn compose_apply(outer: &GeometricTransform, inner: &GeometricTransform, p: Point) -> Point {
    outer.apply(inner.apply(p))
}

/// Transformed cell positions of a grid, in that grid's units.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordField {
    pub shape: GridShape,
    /// Row-major `(col, row)` pairs.
    pub coords: Vec<Point>,
}

impl CoordField {
    pub fn at(&self, row: usize, col: usize) -> Point {
        self.coords[row * self.shape.w + col]
    }
}

/// Maps every cell of `grid` through `t` and back into grid units.
pub fn grid_apply(t: &GeometricTransform, grid: GridShape) -> Result<CoordField> {
    if grid.h < 2 || grid.w < 2 {
        return Err(Error::Contract(format!(
            "grid_apply needs at least 2x2 cells, got {}x{}",
            grid.h, grid.w
        )));
    }
    let rows = crate::par::map_range(grid.h, |i| {
        (0..grid.w)
            .map(|j| grid.norm_to_grid(t.apply(grid.cell_to_norm(i, j))))
            .collect::<Vec<_>>()
    });
    Ok(CoordField {
        shape: grid,
        coords: rows.into_iter().flatten().collect(),
    })
}

impl fmt::Display for GeometricTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&text::format_transform(self))
    }
}

impl std::str::FromStr for GeometricTransform {
    type Err = crate::error::FormatError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        text::parse_transform(s)
    }
}

impl GeometricTransform {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        s.parse().map_err(|e| Error::format(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_translation() {
        let id = AffineParams::IDENTITY;
        assert_eq!(id.apply([0.3, -0.7]), [0.3, -0.7]);
        let t = AffineParams::translation(0.5, 0.0);
        assert_eq!(t.apply([0.0, 0.0]), [0.5, 0.0]);
    }

    #[test]
    fn inverse_translation() {
        let t = AffineParams::translation(0.3, -0.2).invert().unwrap();
        assert_eq!(t, AffineParams::translation(-0.3, 0.2));
        assert_eq!(AffineParams::IDENTITY.invert().unwrap(), AffineParams::IDENTITY);
    }

    #[test]
    fn singular_rejected() {
        let a = AffineParams::new(1.0, 2.0, 0.0, 0.5, 1.0, 0.0);
        assert!(matches!(a.invert(), Err(Error::Singular { .. })));
    }

    #[test]
    fn opposite_translations_cancel() {
        let t1 = GeometricTransform::Affine(AffineParams::translation(0.3, 0.0));
        let t2 = GeometricTransform::Affine(AffineParams::translation(-0.3, 0.0));
        let p = compose_apply(&t2, &t1, [0.1, 0.2]);
        assert!((p[0] - 0.1).abs() < 1e-15 && (p[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn grid_apply_identity_and_shift() {
        let g = GridShape::new(4, 4);
        let f = grid_apply(&GeometricTransform::identity(), g).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let c = f.at(i, j);
                assert!((c[0] - j as f64).abs() < 1e-12 && (c[1] - i as f64).abs() < 1e-12);
            }
        }
        let img = GridShape::new(240, 240);
        let shift = GeometricTransform::Affine(AffineParams::translation(2.0 / 239.0, 0.0));
        let f = grid_apply(&shift, img).unwrap();
        for (k, c) in f.coords.iter().enumerate() {
            let (i, j) = (k / 240, k % 240);
            assert!((c[0] - (j as f64 + 1.0)).abs() < 1e-9);
            assert!((c[1] - i as f64).abs() < 1e-9);
        }
        assert!(grid_apply(&shift, GridShape::new(1, 5)).is_err());
    }

    #[test]
    fn newton_inverse_of_cascade() {
        let d: [[f64; 2]; 9] = std::array::from_fn(|k| [0.02 * (k as f64 - 4.0), -0.015 * k as f64 + 0.05]);
        let t = GeometricTransform::Cascade(AffineParams::new(1.05, 0.1, 0.05, -0.08, 0.95, -0.1), TpsParams::new(d));
        for q in [[0.0, 0.0], [0.7, -0.4], [-0.9, 0.9]] {
            let p = t.invert_point(q).unwrap();
            let back = t.apply(p);
            assert!((back[0] - q[0]).abs() < 1e-9 && (back[1] - q[1]).abs() < 1e-9);
        }
    }
}
