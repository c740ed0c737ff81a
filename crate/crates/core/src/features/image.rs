use std::path::Path;

use crate::error::{Error, FormatError, Result};

pub const MIN_SIDE: usize = 16;

/// 8-bit RGB image, row-major, interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width < MIN_SIDE || height < MIN_SIDE {
            return Err(Error::Contract(format!(
                "image must be at least {MIN_SIDE}x{MIN_SIDE}, got {width}x{height}"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [u8; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let at = (y * self.width + x) * 3;
        [self.data[at], self.data[at + 1], self.data[at + 2]]
    }

    /// Bilinear sample at pixel coordinates; `None` outside `[0, w-1] x [0, h-1]`.
    pub fn sample(&self, x: f64, y: f64) -> Option<[f64; 3]> {
        let (w, h) = (self.width as f64, self.height as f64);
        if !(x >= 0.0 && y >= 0.0 && x <= w - 1.0 && y <= h - 1.0) {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.width - 1);
        let y0 = (y.floor() as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let mut out = [0.0; 3];
        let taps = [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x1, y0, fx * (1.0 - fy)),
            (x0, y1, (1.0 - fx) * fy),
            (x1, y1, fx * fy),
        ];
        for (px, py, wgt) in taps {
            let p = self.pixel(px, py);
            for c in 0..3 {
                out[c] += wgt * f64::from(p[c]);
            }
        }
        Some(out)
    }

    /// Bilinear resize with corner-aligned sampling.
    pub fn resize(&self, width: usize, height: usize) -> Result<Self> {
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let sx = (self.width - 1) as f64 / (width.max(2) - 1) as f64;
        let sy = (self.height - 1) as f64 / (height.max(2) - 1) as f64;
        Self::from_fn(width, height, |x, y| {
            let v = self
                .sample(
                    (x as f64 * sx).min((self.width - 1) as f64),
                    (y as f64 * sy).min((self.height - 1) as f64),
                )
                .expect("inside source");
            v.map(quantize)
        })
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                data.extend_from_slice(&self.pixel(x, y));
            }
        }
        Self {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Result<Self> {
        if x + width > self.width || y + height > self.height {
            return Err(Error::Contract(format!(
                "crop {width}x{height}+{x}+{y} exceeds {}x{}",
                self.width, self.height
            )));
        }
        Self::from_fn(width, height, |cx, cy| self.pixel(x + cx, y + cy))
    }

    /// Binary P6 encoding.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_ppm()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        match decode_pnm(&bytes) {
            Ok((w, h, data)) => Self::new(w, h, data),
            Err(e) => Err(Error::format(path, e)),
        }
    }

    /// Width and height from a PPM/PGM header without decoding pixels.
    pub fn probe_size(path: &Path) -> Result<(usize, usize)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let header = parse_header(&bytes).map_err(|e| Error::format(path, e))?;
        Ok((header.width, header.height))
    }
}

pub(crate) fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, FormatError> {
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => {
            return Err(FormatError::BadMagic {
                expected: "P6 or P5".into(),
                found: String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned(),
            })
        }
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(FormatError::Invalid {
                offset: start as u64,
                detail: "expected a header integer".into(),
            })?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(FormatError::Invalid {
            offset: pos as u64,
            detail: "missing whitespace after header".into(),
        });
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(FormatError::Invalid {
            offset: pos as u64,
            detail: format!("unsupported maxval {maxval}"),
        });
    }
    Ok(Header {
        channels,
        width,
        height,
        maxval,
        data_start: pos + 1,
    })
}

/// Decodes binary PPM (P6) or PGM (P5, expanded to RGB).
pub fn decode_pnm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), FormatError> {
    let h = parse_header(bytes)?;
    let n = h
        .width
        .checked_mul(h.height)
        .and_then(|v| v.checked_mul(h.channels))
        .ok_or(FormatError::ExtentOverflow {
            offset: 3,
            detail: format!("{}x{}", h.width, h.height),
        })?;
    let end = h.data_start + n;
    if bytes.len() < end {
        return Err(FormatError::Truncated {
            offset: bytes.len() as u64,
            needed: end as u64,
            available: bytes.len() as u64,
        });
    }
    let raw = &bytes[h.data_start..end];
    let scale = |v: u8| -> u8 {
        if h.maxval == 255 {
            v
        } else {
            quantize(f64::from(v) * 255.0 / h.maxval as f64)
        }
    };
    let data = if h.channels == 3 {
        raw.iter().map(|&v| scale(v)).collect()
    } else {
        raw.iter().flat_map(|&v| [scale(v); 3]).collect()
    };
    Ok((h.width, h.height, data))
}
