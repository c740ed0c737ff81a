//! Feature ingestion: a hand-crafted dense descriptor for synthetic
//! experiments, and the `DSMF` file format for externally computed features.

pub mod dsmf;
pub mod image;

use std::f64::consts::PI;

pub use self::image::Image;
pub use crate::correlation::FeatureMap;
pub use dsmf::{load_features, save_features};

use crate::error::{Error, Result};

/// Descriptor layout: `orientation_bins` unsigned-gradient histogram bins
/// followed by the three mean-colour channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DescriptorConfig {
    /// Pixels per grid cell along each axis; trailing partial cells are dropped.
    pub cell_size: usize,
    pub orientation_bins: usize,
    /// Resize (width, height) applied before extraction.
    pub resize: Option<(usize, usize)>,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            cell_size: 16,
            orientation_bins: 8,
            resize: Some((240, 240)),
        }
    }
}

impl DescriptorConfig {
    pub fn channels(&self) -> usize {
        self.orientation_bins + 3
    }

    pub fn without_resize(self) -> Self {
        Self { resize: None, ..self }
    }
}

fn luminance(p: [u8; 3]) -> f64 {
    (0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2])) / 255.0
}

/// Central-difference gradient with replicated borders.
pub fn gradient(lum: &[f64], width: usize, height: usize, x: usize, y: usize) -> (f64, f64) {
    let at = |xx: usize, yy: usize| lum[yy * width + xx];
    let (xl, xr) = (x.saturating_sub(1), (x + 1).min(width - 1));
    let (yu, yd) = (y.saturating_sub(1), (y + 1).min(height - 1));
    ((at(xr, y) - at(xl, y)) / 2.0, (at(x, yd) - at(x, yu)) / 2.0)
}

/// Dense descriptor grid of `image`.
pub fn extract(image: &Image, cfg: &DescriptorConfig) -> Result<FeatureMap> {
    if cfg.cell_size == 0 || cfg.orientation_bins == 0 {
        return Err(Error::Config("cell_size and orientation_bins must be positive".into()));
    }
    let resized;
    let image = match cfg.resize {
        Some((w, h)) if (w, h) != (image.width(), image.height()) => {
            resized = image.resize(w, h)?;
            &resized
        }
        _ => image,
    };
    let (width, height) = (image.width(), image.height());
    let (gh, gw) = (height / cfg.cell_size, width / cfg.cell_size);
    if gh < 2 || gw < 2 {
        return Err(Error::Contract(format!(
            "{width}x{height} image yields {gw}x{gh} cells of {} px; need at least 2x2",
            cfg.cell_size
        )));
    }
    let lum: Vec<f64> = (0..width * height)
        .map(|k| image.pixel(k % width, k / width))
        .map(luminance)
        .collect();
    let bins = cfg.orientation_bins;
    let d = cfg.channels();
    let bin_width = PI / bins as f64;
    let rows = crate::par::map_range(gh, |ci| {
        let mut row = vec![0.0f32; gw * d];
        for cj in 0..gw {
            let mut hist = vec![0.0f64; bins];
            let mut color = [0.0f64; 3];
            for y in ci * cfg.cell_size..(ci + 1) * cfg.cell_size {
                for x in cj * cfg.cell_size..(cj + 1) * cfg.cell_size {
                    let (gx, gy) = gradient(&lum, width, height, x, y);
                    let mag = gx.hypot(gy);
                    if mag > 0.0 {
                        let theta = gy.atan2(gx).rem_euclid(PI);
                        let pos = theta / bin_width;
                        let lo = pos.floor();
                        let frac = pos - lo;
                        let b0 = (lo as usize) % bins;
                        hist[b0] += mag * (1.0 - frac);
                        hist[(b0 + 1) % bins] += mag * frac;
                    }
                    let p = image.pixel(x, y);
                    for c in 0..3 {
                        color[c] += f64::from(p[c]) / 255.0;
                    }
                }
            }
            let n = (cfg.cell_size * cfg.cell_size) as f64;
            let cell = &mut row[cj * d..(cj + 1) * d];
            for (o, h) in cell.iter_mut().zip(&hist) {
                *o = (h / n) as f32;
            }
            for c in 0..3 {
                cell[bins + c] = (color[c] / n) as f32;
            }
        }
        row
    });
    FeatureMap::new(gh, gw, d, rows.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> DescriptorConfig {
        DescriptorConfig::default().without_resize()
    }

    #[test]
    fn uniform_gray_has_no_gradient() {
        let img = Image::from_fn(64, 48, |_, _| [128, 128, 128]).unwrap();
        let fm = extract(&img, &cfg()).unwrap();
        assert_eq!((fm.h(), fm.w(), fm.d()), (3, 4, 11));
        let first = fm.cell(0, 0).to_vec();
        for i in 0..fm.h() {
            for j in 0..fm.w() {
                let c = fm.cell(i, j);
                assert_eq!(c, &first[..]);
                assert!(c[..8].iter().all(|&v| v == 0.0));
                let n: f32 = c.iter().map(|v| v * v).sum();
                assert!((n - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn too_small_for_two_cells() {
        let img = Image::from_fn(31, 64, |_, _| [1, 2, 3]).unwrap();
        assert!(matches!(extract(&img, &cfg()), Err(Error::Contract(_))));
    }

    #[test]
    fn trailing_partial_cells_dropped() {
        let img = Image::from_fn(50, 40, |x, _| [x as u8, 0, 0]).unwrap();
        let fm = extract(&img, &cfg()).unwrap();
        assert_eq!((fm.h(), fm.w()), (2, 3));
    }

    #[test]
    fn default_resizes_to_240() {
        let img = Image::from_fn(64, 64, |x, y| [(x * 4) as u8, (y * 4) as u8, 0]).unwrap();
        let fm = extract(&img, &DescriptorConfig::default()).unwrap();
        assert_eq!((fm.h(), fm.w()), (15, 15));
    }
}
