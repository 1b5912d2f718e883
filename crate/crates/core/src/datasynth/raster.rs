//! Dot rasterization over a symmetric data extent and binary PGM files.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::RngStream;

pub const LIT: u8 = 255;

/// Single-channel dot image; data coordinates `[-extent, extent]` map
/// linearly onto pixel indices `0..=width-1` (and likewise for y/rows).
#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub extent: f64,
    pub dot_radius: usize,
    pub pixels: Vec<u8>,
}

/// Points that landed outside the drawable extent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RasterMeta {
    pub drawn: usize,
    pub out_of_range: usize,
}

/// Round-half-up pixel index of a data coordinate.
pub fn to_pixel(v: f64, extent: f64, size: usize) -> usize {
    ((v + extent) / (2.0 * extent) * (size - 1) as f64 + 0.5).floor() as usize
}

pub fn from_pixel(p: f64, extent: f64, size: usize) -> f64 {
    p / (size - 1) as f64 * 2.0 * extent - extent
}

/// Half the data-space width of one pixel step.
pub fn half_pixel(extent: f64, size: usize) -> f64 {
    extent / (size - 1) as f64
}

impl RasterImage {
    pub fn blank(width: usize, height: usize, extent: f64, dot_radius: usize) -> Self {
        RasterImage {
            width,
            height,
            extent,
            dot_radius,
            pixels: vec![0; width * height],
        }
    }

    pub fn is_lit(&self, x: usize, y: usize) -> bool {
        self.pixels[y * self.width + x] != 0
    }

    pub fn lit_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p != 0).count()
    }

    fn stamp(&mut self, px: usize, py: usize) {
        let r = self.dot_radius as isize;
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (px as isize + dx, py as isize + dy);
                if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
                    self.pixels[y as usize * self.width + x as usize] = LIT;
                }
            }
        }
    }

    /// Pixels as `[0, 1]` intensities.
    pub fn to_unit(&self) -> Vec<f32> {
        self.pixels.iter().map(|&p| p as f32 / 255.0).collect()
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pgm_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut out = format!(
            "P5\n# extent {} dot_radius {}\n{} {}\n255\n",
            self.extent, self.dot_radius, self.width, self.height
        )
        .into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Reads a binary PGM. Extent and dot radius come from the header
    /// comment when present, otherwise from the supplied defaults.
    pub fn read_pgm(path: &Path, default_extent: f64, default_radius: usize) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_pgm_bytes(&bytes, default_extent, default_radius)
            .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))
    }

    pub fn from_pgm_bytes(bytes: &[u8], default_extent: f64, default_radius: usize) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::new();
        let (mut extent, mut radius) = (default_extent, default_radius);
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos >= bytes.len() {
                return Err(Error::Dataset("truncated PGM header".into()));
            }
            if bytes[pos] == b'#' {
                let end = bytes[pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |e| pos + e);
                let comment = String::from_utf8_lossy(&bytes[pos + 1..end]).to_string();
                let words: Vec<&str> = comment.split_whitespace().collect();
                for pair in words.windows(2) {
                    match pair[0] {
                        "extent" => extent = pair[1].parse().unwrap_or(extent),
                        "dot_radius" => radius = pair[1].parse().unwrap_or(radius),
                        _ => {}
                    }
                }
                pos = end;
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
        }
        if fields[0] != "P5" {
            return Err(Error::Dataset(format!("not a binary PGM (magic {})", fields[0])));
        }
        let parse = |s: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::Dataset(format!("bad PGM header field {s}")))
        };
        let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if maxval == 0 || maxval > 255 || width < 2 || height < 2 {
            return Err(Error::Dataset("unsupported PGM geometry".into()));
        }
        pos += 1;
        let body = bytes
            .get(pos..pos + width * height)
            .ok_or_else(|| Error::Dataset("truncated PGM body".into()))?;
        Ok(RasterImage {
            width,
            height,
            extent,
            dot_radius: radius,
            pixels: body.to_vec(),
        })
    }
}

/// Draws each in-range point; points outside `±extent` on either axis are
/// counted but not drawn.
pub fn rasterize(points: &[[f64; 2]], extent: f64, width: usize, height: usize, dot_radius: usize) -> Result<(RasterImage, RasterMeta)> {
    if width < 16 || height < 16 {
        return Err(Error::Config(format!("canvas {width}x{height} is below 16x16")));
    }
    if !(extent > 0.0) {
        return Err(Error::Config(format!("extent must be positive, got {extent}")));
    }
    let mut img = RasterImage::blank(width, height, extent, dot_radius);
    let mut meta = RasterMeta::default();
    for &[x, y] in points {
        if x.abs() > extent || y.abs() > extent || !x.is_finite() || !y.is_finite() {
            meta.out_of_range += 1;
            continue;
        }
        img.stamp(to_pixel(x, extent, width), to_pixel(y, extent, height));
        meta.drawn += 1;
    }
    Ok((img, meta))
}

/// Per-point erase decisions: point `i` is erased when its uniform draw is
/// below `rate`, so a higher rate on the same stream erases a superset.
pub fn dropout_mask(rng: &mut RngStream, n: usize, rate: f64) -> Vec<bool> {
    (0..n).map(|_| rng.uniform() < rate).collect()
}

pub fn apply_dropout(points: &[[f64; 2]], erased: &[bool]) -> Vec<[f64; 2]> {
    points
        .iter()
        .zip(erased)
        .filter(|(_, &e)| !e)
        .map(|(p, _)| *p)
        .collect()
}
