use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ring-band edges in data units: strictly increasing, starting at 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RingEdges(Vec<f64>);

impl RingEdges {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || edges[0] != 0.0 || edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config(format!("ring edges must start at 0 and increase strictly: {edges:?}")));
        }
        Ok(RingEdges(edges))
    }

    /// `bands` equal-width bands over `[0, outer]`.
    pub fn uniform(bands: usize, outer: f64) -> Result<Self> {
        Self::new((0..=bands).map(|k| outer * k as f64 / bands as f64).collect())
    }

    pub fn bands(&self) -> usize {
        self.0.len() - 1
    }

    pub fn outer(&self) -> f64 {
        *self.0.last().expect("at least two edges")
    }

    pub fn edges(&self) -> &[f64] {
        &self.0
    }

    /// Band index of radius `r`, `None` past the last edge.
    pub fn band(&self, r: f64) -> Option<usize> {
        if r >= self.outer() || r < 0.0 {
            return None;
        }
        Some(self.0.partition_point(|&e| e <= r) - 1)
    }

    /// Counts per band plus the number of points beyond the last edge.
    pub fn count(&self, points: &[[f64; 2]]) -> (Vec<u32>, u32) {
        let mut counts = vec![0u32; self.bands()];
        let mut outside = 0;
        for p in points {
            match self.band(p[0].hypot(p[1])) {
                Some(b) => counts[b] += 1,
                None => outside += 1,
            }
        }
        (counts, outside)
    }
}

/// Recorded statistics of one drilling pattern.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NumericRecord {
    pub ring_counts: Vec<u32>,
    pub out_of_range: u32,
    pub mean: [f64; 2],
    pub std: [f64; 2],
    pub total_points: u32,
}

/// Per-axis sample mean and (N−1)-divisor standard deviation.
pub fn mean_std(points: &[[f64; 2]]) -> Option<([f64; 2], [f64; 2])> {
    let n = points.len();
    if n < 2 {
        return None;
    }
    let mut mean = [0.0; 2];
    for p in points {
        mean[0] += p[0];
        mean[1] += p[1];
    }
    mean = [mean[0] / n as f64, mean[1] / n as f64];
    let mut ss = [0.0; 2];
    for p in points {
        ss[0] += (p[0] - mean[0]).powi(2);
        ss[1] += (p[1] - mean[1]).powi(2);
    }
    let d = (n - 1) as f64;
    Some((mean, [(ss[0] / d).sqrt(), (ss[1] / d).sqrt()]))
}

pub fn summarize(points: &[[f64; 2]], rings: &RingEdges) -> Result<NumericRecord> {
    let (mean, std) = mean_std(points)
        .ok_or_else(|| Error::Degenerate(format!("{} points cannot define a standard deviation", points.len())))?;
    let (ring_counts, out_of_range) = rings.count(points);
    Ok(NumericRecord {
        ring_counts,
        out_of_range,
        mean,
        std,
        total_points: points.len() as u32,
    })
}
