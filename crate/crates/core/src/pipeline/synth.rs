//! Synthetic pairs with exact ground-truth warps.
//!
//! A base image is a procedural scene: a textured background whose colour
//! and stripe orientation drift across the frame, plus one elliptical
//! foreground object with its own texture. The warped image samples the base
//! at `T^-1(q)`, so `T` maps base coordinates to warped coordinates.
//!
//! Parameter boxes for magnitude `m` (at most [`MAX_MAGNITUDE`]):
//!
//! | family      | translation | linear part `A - I` | TPS displacements |
//! |-------------|-------------|---------------------|-------------------|
//! | translation | `[-m, m]`   | 0                   | -                 |
//! | affine      | `[-m, m]`   | `[-m/2, m/2]`       | -                 |
//! | tps         | -           | -                   | `[-m/2, m/2]`     |
//! | cascade     | `[-m, m]`   | `[-m/2, m/2]`       | `[-m/4, m/4]`     |
//!
//! Draws are rejected (and redrawn from the same stream) until at least 70%
//! of the warped frame samples the base.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::evaluation::BinaryMask;
use crate::features::image::quantize;
use crate::features::Image;
use crate::geometry::{AffineParams, GeometricTransform, GridShape, Point, TpsParams};

pub const MAX_MAGNITUDE: f64 = 0.3;
pub const MIN_COVERAGE: f64 = 0.7;
const MAX_DRAWS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WarpFamily {
    Translation,
    Affine,
    Tps,
    Cascade,
}

impl fmt::Display for WarpFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Translation => "translation",
            Self::Affine => "affine",
            Self::Tps => "tps",
            Self::Cascade => "cascade",
        })
    }
}

impl FromStr for WarpFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "translation" => Ok(Self::Translation),
            "affine" => Ok(Self::Affine),
            "tps" => Ok(Self::Tps),
            "cascade" => Ok(Self::Cascade),
            _ => Err(Error::Config(format!(
                "unknown warp family {s:?} (translation, affine, tps, cascade)"
            ))),
        }
    }
}

/// Options for synthetic scenes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    /// Square image side in pixels.
    pub size: usize,
    pub keypoints: usize,
    /// Probability of mirroring the base before warping.
    pub flip: f64,
    /// Probability of cropping the base (then resizing back) before warping.
    pub crop: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            size: 128,
            keypoints: 10,
            flip: 0.0,
            crop: 0.0,
        }
    }
}

/// Procedural scene parameters; the base image is rendered from these.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scene {
    background: [[f64; 4]; 3],
    stripe: [f64; 4],
    center: Point,
    radii: [f64; 2],
    angle: f64,
    object_color: [f64; 3],
    object_freq: f64,
    /// Augmentation view: `x` is mirrored first, then scaled and offset.
    mirror: bool,
    zoom: f64,
    offset: Point,
}

impl Scene {
    pub fn random(rng: &mut impl Rng) -> Self {
        let mut u = |lo: f64, hi: f64| rng.gen_range(lo..hi);
        let background = std::array::from_fn(|_| [u(40.0, 110.0), u(-50.0, 50.0), u(-50.0, 50.0), u(0.0, 2.0 * PI)]);
        let stripe = [u(0.0, PI), u(-1.2, 1.2), u(-1.2, 1.2), u(5.0, 9.0)];
        Self {
            background,
            stripe,
            center: [u(-0.15, 0.15), u(-0.15, 0.15)],
            radii: [u(0.3, 0.5), u(0.3, 0.5)],
            angle: u(0.0, PI),
            object_color: [u(150.0, 240.0), u(150.0, 240.0), u(150.0, 240.0)],
            object_freq: u(10.0, 16.0),
            mirror: false,
            zoom: 1.0,
            offset: [0.0, 0.0],
        }
    }

    fn view(&self, p: Point) -> Point {
        let x = if self.mirror { -p[0] } else { p[0] };
        [x * self.zoom + self.offset[0], p[1] * self.zoom + self.offset[1]]
    }

    fn object_coords(&self, p: Point) -> (f64, f64) {
        let p = self.view(p);
        let (dx, dy) = (p[0] - self.center[0], p[1] - self.center[1]);
        let (c, s) = (self.angle.cos(), self.angle.sin());
        ((c * dx + s * dy) / self.radii[0], (-s * dx + c * dy) / self.radii[1])
    }

    /// Whether normalized point `p` lies on the object.
    pub fn foreground(&self, p: Point) -> bool {
        let (u, v) = self.object_coords(p);
        u * u + v * v <= 1.0
    }

    /// Colour at normalized point `p`.
    pub fn color(&self, p: Point) -> [f64; 3] {
        if self.foreground(p) {
            let (u, v) = self.object_coords(p);
            let t = ((self.object_freq * u).sin() * (self.object_freq * v).sin()).signum();
            return self.object_color.map(|c| c - 40.0 + 40.0 * t);
        }
        let [x, y] = self.view(p);
        let [theta0, kx, ky, freq] = self.stripe;
        let theta = theta0 + kx * x + ky * y;
        let phase = freq * PI * (x * theta.cos() + y * theta.sin());
        let stripe = 25.0 * phase.sin();
        std::array::from_fn(|c| {
            let [base, gx, gy, ph] = self.background[c];
            base + gx * x + gy * y + 10.0 * (2.0 * x + ph).sin() + stripe
        })
    }

    pub fn render(&self, size: usize) -> Image {
        let frame = GridShape::new(size, size);
        Image::from_fn(size, size, |x, y| self.color(frame.cell_to_norm(y, x)).map(quantize)).expect("size >= 16")
    }
}

/// Object keypoint in the base image and its exact warped position, both in
/// pixel units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    pub source: Point,
    pub target: Point,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPair {
    pub scene: Scene,
    pub base: Image,
    pub warped: Image,
    pub gt_transform: GeometricTransform,
    pub keypoints: Vec<Keypoint>,
    pub family: WarpFamily,
    pub magnitude: f64,
}

impl SyntheticPair {
    /// Object masks of base and warped image sampled at the cells of `grid`.
    pub fn masks(&self, grid: GridShape) -> (BinaryMask, BinaryMask) {
        let scene = self.scene;
        let t = self.gt_transform;
        let base = BinaryMask::from_fn(grid, |p| scene.foreground(p));
        let warped = BinaryMask::from_fn(grid, |q| {
            t.invert_point(q).is_some_and(|p| in_frame(p) && scene.foreground(p))
        });
        (base, warped)
    }

    /// Bounding box `(x, y, w, h)` of the object in pixels of `image`
    /// (`warped` selects the warped image).
    pub fn object_box(&self, warped: bool) -> [f64; 4] {
        let (base, moved) = self.masks(GridShape::new(self.base.height(), self.base.width()));
        bounding_box(if warped { &moved } else { &base })
    }
}

/// `(x, y, w, h)` of the set cells; the whole frame when none are set.
pub fn bounding_box(mask: &BinaryMask) -> [f64; 4] {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for i in 0..mask.shape.h {
        for j in 0..mask.shape.w {
            if mask.get(i, j) {
                (x0, y0, x1, y1) = (x0.min(j), y0.min(i), x1.max(j), y1.max(i));
            }
        }
    }
    if x0 == usize::MAX {
        return [0.0, 0.0, mask.shape.w as f64, mask.shape.h as f64];
    }
    [x0 as f64, y0 as f64, (x1 - x0 + 1) as f64, (y1 - y0 + 1) as f64]
}

fn in_frame(p: Point) -> bool {
    p[0].abs() <= 1.0 && p[1].abs() <= 1.0
}

/// Fraction of a 16 x 16 lattice over the warped frame whose preimage is in view.
pub fn coverage(t: &GeometricTransform) -> f64 {
    let pts = GridShape::new(16, 16).points();
    let hits = pts.iter().filter(|&&q| t.invert_point(q).is_some_and(in_frame)).count();
    hits as f64 / pts.len() as f64
}

fn check_magnitude(magnitude: f64) -> Result<()> {
    if !(0.0..=MAX_MAGNITUDE).contains(&magnitude) {
        return Err(Error::Config(format!(
            "magnitude {magnitude} outside [0, {MAX_MAGNITUDE}]"
        )));
    }
    Ok(())
}

fn draw_once(rng: &mut impl Rng, family: WarpFamily, m: f64) -> GeometricTransform {
    let mut u = |r: f64| if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
    let mut affine = |linear: f64| {
        let (a11, a12, a21, a22) = (1.0 + u(linear), u(linear), u(linear), 1.0 + u(linear));
        AffineParams::new(a11, a12, u(m), a21, a22, u(m))
    };
    match family {
        WarpFamily::Translation => GeometricTransform::Affine(affine(0.0)),
        WarpFamily::Affine => GeometricTransform::Affine(affine(m / 2.0)),
        WarpFamily::Tps => {
            let d = std::array::from_fn(|_| [u(m / 2.0), u(m / 2.0)]);
            GeometricTransform::Tps(TpsParams::new(d))
        }
        WarpFamily::Cascade => {
            let a = affine(m / 2.0);
            let d = std::array::from_fn(|_| [u(m / 4.0), u(m / 4.0)]);
            GeometricTransform::Cascade(a, TpsParams::new(d))
        }
    }
}

/// Draws a ground-truth transform from the family's box.
pub fn draw_transform(rng: &mut impl Rng, family: WarpFamily, magnitude: f64) -> Result<GeometricTransform> {
    check_magnitude(magnitude)?;
    for _ in 0..MAX_DRAWS {
        let t = draw_once(rng, family, magnitude);
        if coverage(&t) >= MIN_COVERAGE {
            return Ok(t);
        }
    }
    Err(Error::Contract(format!(
        "no {family} warp of magnitude {magnitude} keeps {MIN_COVERAGE} of the frame in view"
    )))
}

/// Resamples `base` so that output pixel `q` shows `base(t^-1(q))`; pixels
/// without a preimage in view are black.
pub fn warp_image(base: &Image, t: &GeometricTransform) -> Image {
    if *t == GeometricTransform::identity() {
        return base.clone();
    }
    let frame = GridShape::new(base.height(), base.width());
    let rows = crate::par::map_range(base.height(), |y| {
        let mut row = Vec::with_capacity(base.width() * 3);
        for x in 0..base.width() {
            let px = t
                .invert_point(frame.cell_to_norm(y, x))
                .map(|p| frame.norm_to_grid(p))
                .and_then(|g| base.sample(g[0], g[1]))
                .map_or([0; 3], |v| v.map(quantize));
            row.extend_from_slice(&px);
        }
        row
    });
    Image::new(base.width(), base.height(), rows.concat()).expect("same extents")
}

/// Mirrors and/or crops the scene; a crop keeps 7/8 of each side and is
/// rendered back at full size.
fn augment(scene: &mut Scene, cfg: &SynthConfig, rng: &mut impl Rng) {
    if rng.gen_bool(cfg.flip.clamp(0.0, 1.0)) {
        scene.mirror = true;
    }
    if rng.gen_bool(cfg.crop.clamp(0.0, 1.0)) {
        scene.zoom = 0.875;
        let slack = 1.0 - scene.zoom;
        scene.offset = [rng.gen_range(-slack..=slack), rng.gen_range(-slack..=slack)];
    }
}

fn sample_keypoints(scene: &Scene, t: &GeometricTransform, size: usize, n: usize, rng: &mut impl Rng) -> Vec<Keypoint> {
    let frame = GridShape::new(size, size);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n * 200 {
        if out.len() == n {
            break;
        }
        let p = [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)];
        let q = t.apply(p);
        if scene.foreground(p) && in_frame(q) {
            out.push(Keypoint {
                source: frame.norm_to_grid(p),
                target: frame.norm_to_grid(q),
            });
        }
    }
    out
}

/// Deterministic synthetic pair for `seed`.
pub fn generate_pair(seed: u64, family: WarpFamily, magnitude: f64) -> Result<SyntheticPair> {
    generate_pair_with(seed, family, magnitude, &SynthConfig::default())
}

pub fn generate_pair_with(seed: u64, family: WarpFamily, magnitude: f64, cfg: &SynthConfig) -> Result<SyntheticPair> {
    check_magnitude(magnitude)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = Scene::random(&mut rng);
    let gt = draw_transform(&mut rng, family, magnitude)?;
    augment(&mut scene, cfg, &mut rng);
    let base = scene.render(cfg.size);
    let keypoints = sample_keypoints(&scene, &gt, cfg.size, cfg.keypoints, &mut rng);
    Ok(SyntheticPair {
        scene,
        warped: warp_image(&base, &gt),
        base,
        gt_transform: gt,
        keypoints,
        family,
        magnitude,
    })
}

/// Several warps of one base scene; pairs `(base, member)` carry exact
/// ground truth and any three images form a triplet.
#[derive(Clone, Debug, PartialEq)]
pub struct Category {
    pub scene: Scene,
    pub base: Image,
    pub members: Vec<(Image, GeometricTransform)>,
}

pub fn generate_category(
    seed: u64,
    family: WarpFamily,
    magnitude: f64,
    members: usize,
    cfg: &SynthConfig,
) -> Result<Category> {
    check_magnitude(magnitude)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = Scene::random(&mut rng);
    augment(&mut scene, cfg, &mut rng);
    let base = scene.render(cfg.size);
    let members = (0..members)
        .map(|_| {
            let t = draw_transform(&mut rng, family, magnitude)?;
            Ok((warp_image(&base, &t), t))
        })
        .collect::<Result<_>>()?;
    Ok(Category { scene, base, members })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_magnitude_is_identity() {
        let p = generate_pair(5, WarpFamily::Affine, 0.0).unwrap();
        assert_eq!(p.gt_transform, GeometricTransform::identity());
        assert_eq!(p.warped, p.base);
    }

    #[test]
    fn translation_box() {
        for seed in 0..20 {
            let p = generate_pair(seed, WarpFamily::Translation, 0.25).unwrap();
            let GeometricTransform::Affine(a) = p.gt_transform else {
                panic!("translation family yields affine");
            };
            assert!(a.tx.abs() <= 0.25 && a.ty.abs() <= 0.25);
            assert_eq!((a.a11, a.a12, a.a21, a.a22), (1.0, 0.0, 0.0, 1.0));
        }
    }

    #[test]
    fn keypoints_follow_gt() {
        let p = generate_pair(9, WarpFamily::Cascade, 0.2).unwrap();
        let frame = GridShape::new(128, 128);
        assert_eq!(p.keypoints.len(), 10);
        for k in &p.keypoints {
            let q = p.gt_transform.apply(frame.grid_to_norm(k.source));
            let e = frame.norm_to_grid(q);
            assert!((e[0] - k.target[0]).abs() < 1e-5 && (e[1] - k.target[1]).abs() < 1e-5);
        }
    }

    #[test]
    fn coverage_holds_at_max_magnitude() {
        for family in [
            WarpFamily::Translation,
            WarpFamily::Affine,
            WarpFamily::Tps,
            WarpFamily::Cascade,
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            for _ in 0..10 {
                let t = draw_transform(&mut rng, family, MAX_MAGNITUDE).unwrap();
                assert!(coverage(&t) >= MIN_COVERAGE);
            }
        }
        assert!(generate_pair(1, WarpFamily::Affine, 0.31).is_err());
    }

    #[test]
    fn augmented_masks_stay_exact() {
        let cfg = SynthConfig {
            flip: 1.0,
            crop: 1.0,
            ..SynthConfig::default()
        };
        let p = generate_pair_with(3, WarpFamily::Affine, 0.2, &cfg).unwrap();
        let plain = generate_pair(3, WarpFamily::Affine, 0.2).unwrap();
        assert_ne!(p.base, plain.base);
        let frame = GridShape::new(128, 128);
        for k in &p.keypoints {
            assert!(p.scene.foreground(frame.grid_to_norm(k.source)));
        }
    }

    #[test]
    fn family_names_roundtrip() {
        for f in [
            WarpFamily::Translation,
            WarpFamily::Affine,
            WarpFamily::Tps,
            WarpFamily::Cascade,
        ] {
            assert_eq!(f.to_string().parse::<WarpFamily>().unwrap(), f);
        }
    }
}
