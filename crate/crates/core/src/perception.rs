//! Statistic recovery from dot images and record/image consistency checks.

use serde::{Deserialize, Serialize};

use crate::datasynth::raster::{from_pixel, half_pixel, RasterImage};
use crate::datasynth::record::{mean_std, NumericRecord, RingEdges};
use crate::datasynth::Sample;
use crate::error::{Error, Result};

/// Statistics perceived from an image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractedStats {
    pub mean: [f64; 2],
    /// Zero when only one dot is detected.
    pub std: [f64; 2],
    pub ring_counts: Vec<u32>,
    pub out_of_range: u32,
    pub lit_pixels: usize,
    pub detected: usize,
}

/// Dot centers in pixel coordinates. Radius-0 images yield every lit pixel,
/// otherwise the centroid of each 8-connected component.
pub fn detect_dots(image: &RasterImage) -> Vec<[f64; 2]> {
    let (w, h) = (image.width, image.height);
    if image.dot_radius == 0 {
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if image.is_lit(x, y) {
                    out.push([x as f64, y as f64]);
                }
            }
        }
        return out;
    }
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if seen[start] || image.pixels[start] == 0 {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut sx, mut sy, mut n) = (0usize, 0usize, 0usize);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            sx += x;
            sy += y;
            n += 1;
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if !seen[j] && image.pixels[j] != 0 {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        out.push([sx as f64 / n as f64, sy as f64 / n as f64]);
    }
    out
}

/// Detected dot centres in data units.
pub fn detected_points(image: &RasterImage) -> Vec<[f64; 2]> {
    detect_dots(image)
        .iter()
        .map(|p| {
            [
                from_pixel(p[0], image.extent, image.width),
                from_pixel(p[1], image.extent, image.height),
            ]
        })
        .collect()
}

pub fn extract_stats(image: &RasterImage, rings: &RingEdges) -> Result<ExtractedStats> {
    let points = detected_points(image);
    if points.is_empty() {
        return Err(Error::Degenerate("image has no lit pixels".into()));
    }
    let (mean, std) = mean_std(&points).unwrap_or((points[0], [0.0, 0.0]));
    let (ring_counts, out_of_range) = rings.count(&points);
    Ok(ExtractedStats {
        mean,
        std,
        ring_counts,
        out_of_range,
        lit_pixels: image.lit_count(),
        detected: points.len(),
    })
}

/// Allowances used by [`verify_consistency`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    pub dropout_rate: f64,
    /// Std of the noise added to the recorded mean and std.
    pub record_noise: f64,
    /// Band width in standard deviations.
    pub z: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            dropout_rate: 0.15,
            record_noise: 0.1,
            z: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FieldCheck {
    pub field: String,
    pub expected: f64,
    pub observed: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub sample_id: u32,
    pub fields: Vec<FieldCheck>,
    /// Points lost to dropout, collisions or the raster border.
    pub lost_points: usize,
}

impl ConsistencyReport {
    pub fn pass(&self) -> bool {
        self.fields.iter().all(|f| f.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &FieldCheck> {
        self.fields.iter().filter(|f| !f.pass)
    }
}

fn gaussian_cell_mass(lo: f64, hi: f64, mu: f64, sd: f64) -> f64 {
    if sd <= 0.0 {
        return if mu >= lo && mu < hi { 1.0 } else { 0.0 };
    }
    let s = sd * std::f64::consts::SQRT_2;
    0.5 * (libm::erf((hi - mu) / s) - libm::erf((lo - mu) / s))
}

/// Expected number of lit pixels and its variance bound when `m` points from
/// an axis-aligned Gaussian land on a radius-0 raster. Pixel occupancies are
/// treated as independent, which overstates the variance.
pub fn expected_occupancy(m: f64, mean: [f64; 2], std: [f64; 2], extent: f64, width: usize, height: usize) -> (f64, f64) {
    let edges = |size: usize| -> Vec<f64> {
        (0..=size)
            .map(|i| from_pixel(i as f64 - 0.5, extent, size).clamp(-extent, extent))
            .collect()
    };
    let px: Vec<f64> = edges(width)
        .windows(2)
        .map(|e| gaussian_cell_mass(e[0], e[1], mean[0], std[0]))
        .collect();
    let py: Vec<f64> = edges(height)
        .windows(2)
        .map(|e| gaussian_cell_mass(e[0], e[1], mean[1], std[1]))
        .collect();
    let (mut e, mut v) = (0.0, 0.0);
    for &a in &py {
        for &b in &px {
            let p = a * b;
            if p > 0.0 {
                let q = 1.0 - (1.0 - p).powf(m);
                e += q;
                v += q * (1.0 - q);
            }
        }
    }
    (e, v)
}

/// Compares perceived statistics against the sample's record.
pub fn verify_consistency(sample: &Sample, rings: &RingEdges, tol: &Tolerances) -> Result<ConsistencyReport> {
    let image = &sample.image;
    let record: &NumericRecord = &sample.record;
    let stats = extract_stats(image, rings)?;
    let n = record.total_points as f64;
    let detected = stats.detected as f64;
    let lost = (n - detected).max(0.0);
    let mut fields = Vec::new();
    let mut push = |field: &str, expected: f64, observed: f64, tolerance: f64| {
        fields.push(FieldCheck {
            field: field.to_string(),
            expected,
            observed,
            tolerance,
            pass: (expected - observed).abs() <= tolerance,
        });
    };
    let border = record.out_of_range as f64 * 2.0 * image.extent / n;
    for axis in 0..2 {
        let size = if axis == 0 { image.width } else { image.height };
        let sd = record.std[axis];
        let subset = tol.z * sd * (lost / (detected * n)).sqrt();
        let mean_tol = half_pixel(image.extent, size) + subset + tol.z * tol.record_noise + border;
        let name = ["x", "y"][axis];
        push(&format!("mean_{name}"), record.mean[axis], stats.mean[axis], mean_tol);
        let std_tol = half_pixel(image.extent, size)
            + tol.z * tol.record_noise
            + sd * (subset / sd.max(f64::MIN_POSITIVE) + tol.z / (2.0 * detected).sqrt() + lost / detected)
            + border;
        push(&format!("std_{name}"), sd, stats.std[axis], std_tol);
    }
    if image.dot_radius == 0 {
        let kept = n * (1.0 - tol.dropout_rate);
        let (expected, occupancy_var) =
            expected_occupancy(kept, record.mean, record.std, image.extent, image.width, image.height);
        let binomial_var = n * tol.dropout_rate * (1.0 - tol.dropout_rate);
        // The recorded std carries noise; propagate its band through the occupancy.
        let shift = tol.z * tol.record_noise;
        let at = |d: f64| {
            let sd = [(record.std[0] + d).max(0.0), (record.std[1] + d).max(0.0)];
            expected_occupancy(kept, record.mean, sd, image.extent, image.width, image.height).0
        };
        let noise_band = 0.5 * (at(shift) - at(-shift)).abs();
        let tolerance = tol.z * (binomial_var + occupancy_var).sqrt() + noise_band + 1.0;
        push("lit_pixels", expected, stats.lit_pixels as f64, tolerance);
    }
    Ok(ConsistencyReport {
        sample_id: sample.id,
        fields,
        lost_points: lost as usize,
    })
}
