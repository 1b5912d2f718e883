//! Central finite-difference validation of analytic gradients (f64 only).

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, RngStream, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;

/// Denominator floor so that near-zero gradients are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(tensor name, flat index)` of the worst coordinate.
    pub worst: (String, usize),
    pub coordinates: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn scalar_of(g: &Graph<f64>, v: Var, what: &str, index: usize) -> Result<f64> {
    let t = g.value(v);
    if t.len() != 1 {
        return Err(Error::Contract(format!("gradient check needs a scalar output, got {:?}", t.shape())));
    }
    let value = t.data()[0];
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("{what} coordinate {index} evaluates to {value}")));
    }
    Ok(value)
}

struct Tracker {
    report: GradCheckReport,
}

impl Tracker {
    fn new() -> Self {
        Tracker {
            report: GradCheckReport {
                max_rel_error: 0.0,
                worst: (String::new(), 0),
                coordinates: 0,
            },
        }
    }

    fn record(&mut self, name: &str, index: usize, analytic: f64, numeric: f64) -> Result<()> {
        if !analytic.is_finite() {
            return Err(Error::NonFinite(format!("analytic gradient of {name} coordinate {index}")));
        }
        let err = relative_error(analytic, numeric);
        if self.report.coordinates == 0 || err > self.report.max_rel_error {
            self.report.max_rel_error = err;
            self.report.worst = (name.to_string(), index);
        }
        self.report.coordinates += 1;
        Ok(())
    }
}

/// Compares the analytic gradient of `f` at `point` against central
/// differences in every coordinate.
pub fn grad_check<F>(f: F, point: &Tensor<f64>) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.input(point.clone());
    let out = f(&mut g, x)?;
    scalar_of(&g, out, "base point", 0)?;
    let grads = g.backward(out)?;
    let analytic = grads
        .get(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(point.shape()));

    let eval = |p: Tensor<f64>, i: usize| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.constant(p);
        let out = f(&mut g, x)?;
        scalar_of(&g, out, "input", i)
    };
    let mut tracker = Tracker::new();
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += FD_STEP;
        let mut minus = point.clone();
        minus.data_mut()[i] -= FD_STEP;
        let numeric = (eval(plus, i)? - eval(minus, i)?) / (2.0 * FD_STEP);
        tracker.record("input", i, analytic.data()[i], numeric)?;
    }
    Ok(tracker.report)
}

/// Gradient check over named parameters of a store. When `per_tensor` is
/// set, only that many seeded coordinates of each tensor are probed.
pub fn grad_check_params<F>(
    store: &ParamStore<f64>,
    f: F,
    per_tensor: Option<usize>,
    rng: &mut RngStream,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    scalar_of(&g, out, "base point", 0)?;
    let grads = g.backward(out)?.into_params();

    let mut tracker = Tracker::new();
    let mut probe = store.clone();
    let names: Vec<String> = store
        .names()
        .filter(|n| store.is_trainable(n))
        .map(str::to_string)
        .collect();
    for name in names {
        let len = store.get(&name)?.len();
        let coords: Vec<usize> = match per_tensor {
            Some(k) if k < len => (0..k).map(|_| (rng.uniform() * len as f64) as usize % len).collect(),
            _ => (0..len).collect(),
        };
        let analytic = grads.get(&name).cloned().unwrap_or_else(|| Tensor::zeros(&[len]));
        for i in coords {
            let base = store.get(&name)?.data()[i];
            probe.get_mut(&name)?.data_mut()[i] = base + FD_STEP;
            let mut gp = Graph::new();
            let op = f(&mut gp, &probe)?;
            let fp = scalar_of(&gp, op, &name, i)?;
            probe.get_mut(&name)?.data_mut()[i] = base - FD_STEP;
            let mut gm = Graph::new();
            let om = f(&mut gm, &probe)?;
            let fm = scalar_of(&gm, om, &name, i)?;
            probe.get_mut(&name)?.data_mut()[i] = base;
            tracker.record(&name, i, analytic.data()[i], (fp - fm) / (2.0 * FD_STEP))?;
        }
    }
    Ok(tracker.report)
}
