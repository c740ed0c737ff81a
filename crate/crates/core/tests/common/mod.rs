//! Scalar reimplementations used as independent oracles, plus the
//! finite-difference harness. Nothing here calls the library's own
//! arithmetic for the quantity under test.
#![allow(dead_code)]

pub mod gradient;

use nalgebra::{SMatrix, SVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semmatch::correlation::FeatureMap;
use semmatch::geometry::{AffineParams, GeometricTransform, GridShape, Point, TpsParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|a - b| <= tol * max(1, |b|)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

/// Raw descriptors in `[-1, 1]` and the feature map built from them.
pub fn random_features(rng: &mut impl Rng, h: usize, w: usize, d: usize) -> (Vec<f64>, FeatureMap) {
    let raw: Vec<f32> = (0..h * w * d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let fm = FeatureMap::new(h, w, d, raw.clone()).unwrap();
    (raw.into_iter().map(f64::from).collect(), fm)
}

/// Cell `(row, col)` in `[-1, 1]^2` as `(x, y)`.
pub fn cell_norm(grid: GridShape, row: usize, col: usize) -> Point {
    let axis = |v: usize, n: usize| {
        if n > 1 {
            2.0 * v as f64 / (n - 1) as f64 - 1.0
        } else {
            0.0
        }
    };
    [axis(col, grid.w), axis(row, grid.h)]
}

pub fn grid_cells(grid: GridShape) -> Vec<Point> {
    let mut out = Vec::new();
    for i in 0..grid.h {
        for j in 0..grid.w {
            out.push(cell_norm(grid, i, j));
        }
    }
    out
}

// ---- geometry ----

pub fn affine_apply(a: [f64; 6], p: Point) -> Point {
    [a[0] * p[0] + a[1] * p[1] + a[2], a[3] * p[0] + a[4] * p[1] + a[5]]
}

pub fn oracle_control_points() -> [Point; 9] {
    let mut c = [[0.0; 2]; 9];
    for r in 0..3 {
        for k in 0..3 {
            c[3 * r + k] = [k as f64 - 1.0, r as f64 - 1.0];
        }
    }
    c
}

fn kernel(a: Point, b: Point) -> f64 {
    let r2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    if r2 == 0.0 {
        0.0
    } else {
        r2 * r2.ln()
    }
}

/// Kernel weights `(9, 2)` and affine rows `[const, x, y]` from a dense
/// LU solve of the bordered spline system.
pub fn tps_solve(disp: &[[f64; 2]; 9]) -> ([[f64; 2]; 9], [[f64; 2]; 3]) {
    let c = oracle_control_points();
    let mut l = SMatrix::<f64, 12, 12>::zeros();
    for i in 0..9 {
        for j in 0..9 {
            l[(i, j)] = kernel(c[i], c[j]);
        }
        let p = [1.0, c[i][0], c[i][1]];
        for k in 0..3 {
            l[(i, 9 + k)] = p[k];
            l[(9 + k, i)] = p[k];
        }
    }
    let lu = l.lu();
    let mut w = [[0.0; 2]; 9];
    let mut a = [[0.0; 2]; 3];
    for axis in 0..2 {
        let mut rhs = SVector::<f64, 12>::zeros();
        for k in 0..9 {
            rhs[k] = c[k][axis] + disp[k][axis];
        }
        let sol = lu.solve(&rhs).expect("spline system is invertible");
        for k in 0..9 {
            w[k][axis] = sol[k];
        }
        for k in 0..3 {
            a[k][axis] = sol[9 + k];
        }
    }
    (w, a)
}

pub fn tps_apply(disp: &[[f64; 2]; 9], p: Point) -> Point {
    let (w, a) = tps_solve(disp);
    let c = oracle_control_points();
    let mut out = [0.0; 2];
    for axis in 0..2 {
        out[axis] = a[0][axis] + a[1][axis] * p[0] + a[2][axis] * p[1];
        for k in 0..9 {
            out[axis] += w[k][axis] * kernel(p, c[k]);
        }
    }
    out
}

pub fn transform_apply(t: &GeometricTransform, p: Point) -> Point {
    match t {
        GeometricTransform::Affine(a) => affine_apply(a.to_array(), p),
        GeometricTransform::Tps(s) => tps_apply(s.displacements(), p),
        GeometricTransform::Cascade(a, s) => tps_apply(s.displacements(), affine_apply(a.to_array(), p)),
    }
}

/// Nonsingular affine within `scale` of the identity.
pub fn random_affine(rng: &mut impl Rng, scale: f64) -> AffineParams {
    loop {
        let mut a = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        for v in a.iter_mut() {
            *v += rng.gen_range(-scale..scale);
        }
        let aff = AffineParams::from_array(a);
        if aff.determinant().abs() > 0.1 {
            return aff;
        }
    }
}

pub fn random_displacements(rng: &mut impl Rng, scale: f64) -> [[f64; 2]; 9] {
    std::array::from_fn(|_| [rng.gen_range(-scale..scale), rng.gen_range(-scale..scale)])
}

pub fn random_cascade(rng: &mut impl Rng, scale: f64) -> GeometricTransform {
    let a = random_affine(rng, scale);
    GeometricTransform::Cascade(a, TpsParams::new(random_displacements(rng, scale / 2.0)))
}

// ---- correlation, masks, losses ----

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        v.to_vec()
    }
}

/// `max(0, <a_p / |a_p|, b_q / |b_q|>)`, `(P, Q)` row-major.
pub fn correlate(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for pa in a.chunks(d) {
        let ua = unit(pa);
        for pb in b.chunks(d) {
            let ub = unit(pb);
            let dot: f64 = ua.iter().zip(&ub).map(|(x, y)| x * y).sum();
            out.push(dot.max(0.0));
        }
    }
    out
}

pub fn foreground(s: &[f64], q: usize) -> Vec<f64> {
    s.chunks(q)
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Distance in target cells from `t(p)` to `q`, for every `(p, q)`.
pub fn cell_distances(t: &GeometricTransform, source: GridShape, target: GridShape) -> Vec<f64> {
    let mut out = Vec::new();
    for p in grid_cells(source) {
        let m = transform_apply(t, p);
        let gx = (m[0] + 1.0) * (target.w - 1) as f64 / 2.0;
        let gy = (m[1] + 1.0) * (target.h - 1) as f64 / 2.0;
        for s in 0..target.h {
            for u in 0..target.w {
                out.push(((gx - u as f64).powi(2) + (gy - s as f64).powi(2)).sqrt());
            }
        }
    }
    out
}

pub fn correspondence(t: &GeometricTransform, source: GridShape, target: GridShape, phi: f64) -> Vec<bool> {
    cell_distances(t, source, target)
        .into_iter()
        .map(|d| d <= phi)
        .collect()
}

/// Smallest `|dist - phi|` over every cell pair, for rejecting ambiguous draws.
pub fn phi_margin(t: &GeometricTransform, source: GridShape, target: GridShape, phi: f64) -> f64 {
    cell_distances(t, source, target)
        .into_iter()
        .map(|d| (d - phi).abs())
        .fold(f64::INFINITY, f64::min)
}

pub fn matching_score(s: &[f64], m: &[bool], q: usize) -> Vec<f64> {
    s.chunks(q)
        .zip(m.chunks(q))
        .map(|(sr, mr)| sr.iter().zip(mr).filter(|(_, &k)| k).map(|(v, _)| v).sum())
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn matching_loss(
    s_ab: &[f64],
    s_ba: &[f64],
    t_ab: &GeometricTransform,
    t_ba: &GeometricTransform,
    ga: GridShape,
    gb: GridShape,
    m_a: &[f64],
    m_b: &[f64],
    phi: f64,
) -> f64 {
    let side = |s: &[f64], t, src: GridShape, dst: GridShape, m: &[f64]| -> f64 {
        let mask = correspondence(t, src, dst, phi);
        let score = matching_score(s, &mask, dst.cells());
        score.iter().zip(m).map(|(a, b)| a * b).sum()
    };
    -(side(s_ab, t_ab, ga, gb, m_a) + side(s_ba, t_ba, gb, ga, m_b))
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn cycle_loss(t_ab: &GeometricTransform, t_ba: &GeometricTransform, pa: &[Point], pb: &[Point]) -> f64 {
    let fwd: f64 = pa
        .iter()
        .map(|&p| dist(transform_apply(t_ba, transform_apply(t_ab, p)), p))
        .sum();
    let bwd: f64 = pb
        .iter()
        .map(|&q| dist(transform_apply(t_ab, transform_apply(t_ba, q)), q))
        .sum();
    fwd + bwd
}

pub fn transitivity_loss(
    t_ab: &GeometricTransform,
    t_bc: &GeometricTransform,
    t_ac: &GeometricTransform,
    t_ba: &GeometricTransform,
    pa: &[Point],
    pb: &[Point],
) -> f64 {
    let fwd: f64 = pa
        .iter()
        .map(|&p| {
            dist(
                transform_apply(t_bc, transform_apply(t_ab, p)),
                transform_apply(t_ac, p),
            )
        })
        .sum();
    let bwd: f64 = pb
        .iter()
        .map(|&q| {
            dist(
                transform_apply(t_ac, transform_apply(t_ba, q)),
                transform_apply(t_bc, q),
            )
        })
        .sum();
    fwd + bwd
}

/// Fraction of keypoints within `tau * max(w, h)` of their target, inclusive.
pub fn pck(warped: &[Point], gt: &[Point], box_wh: [f64; 2], tau: f64) -> f64 {
    let limit = tau * box_wh[0].max(box_wh[1]);
    let mut hits = 0usize;
    for k in 0..warped.len() {
        let dx = warped[k][0] - gt[k][0];
        let dy = warped[k][1] - gt[k][1];
        if (dx * dx + dy * dy).sqrt() <= limit {
            hits += 1;
        }
    }
    hits as f64 / warped.len() as f64
}

// ---- finite differences ----

/// Central differences of a vector-valued `f` at `x`; entry `[k][i]` is
/// `d f_k / d x_i`.
pub fn central_diff(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let up = f(&xp);
        xp[i] = x[i] - h;
        let down = f(&xp);
        xp[i] = x[i];
        if cols.is_empty() {
            cols = vec![Vec::with_capacity(x.len()); up.len()];
        }
        for (k, (u, d)) in up.iter().zip(&down).enumerate() {
            cols[k].push((u - d) / (2.0 * h));
        }
    }
    cols
}

/// `|a - b| / max(|a|, |b|)` in the 2-norm. The floor keeps two vanishing
/// gradients from reading as a large relative gap.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-8)
}
