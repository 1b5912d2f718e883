//! Likelihood classifier that knows the generating class Gaussians. It sees
//! only what perception recovers from the raster, so it bounds what any
//! image-based model can reach.

use crate::datasynth::{ClassSpec, Sample};
use crate::error::{Error, Result};
use crate::perception::detected_points;

/// Summed Gaussian log-density of `points` under `spec`, without the
/// constant `−n·ln 2π`.
pub fn log_likelihood(spec: &ClassSpec, points: &[[f64; 2]]) -> Result<f64> {
    let [[a, b], [_, d]] = spec.sigma;
    let det = a * d - b * b;
    if !(det > 0.0) {
        return Err(Error::Decomposition(format!("covariance of class {} is singular", spec.class_id)));
    }
    let (ia, ib, id) = (d / det, -b / det, a / det);
    let quad: f64 = points
        .iter()
        .map(|p| {
            let (x, y) = (p[0] - spec.mu[0], p[1] - spec.mu[1]);
            ia * x * x + 2.0 * ib * x * y + id * y * y
        })
        .sum();
    Ok(-0.5 * (points.len() as f64 * det.ln() + quad))
}

/// Class of highest likelihood for the dots detected in `sample`'s image;
/// ties go to the lower class id.
pub fn oracle_predict(catalog: &[ClassSpec], sample: &Sample) -> Result<usize> {
    let points = detected_points(&sample.image);
    if points.is_empty() {
        return Err(Error::Degenerate(format!("sample {} has no detectable dots", sample.id)));
    }
    let mut best = (f64::NEG_INFINITY, 0);
    for spec in catalog {
        let ll = log_likelihood(spec, &points)?;
        if ll > best.0 {
            best = (ll, spec.class_id);
        }
    }
    Ok(best.1)
}
