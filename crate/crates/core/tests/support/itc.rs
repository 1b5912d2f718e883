//! Independent enumeration of the contrastive loss.

use asemm::alignment::{itc_loss, ItcDirection};
use asemm::numerics::{Graph, RngStream, Tensor};

pub fn unit_rows(rng: &mut RngStream, b: usize, d: usize) -> Vec<Vec<f64>> {
    (0..b)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect()
}

/// Direct enumeration of the two softmax-normalized similarity tables and
/// the cross-entropy against the diagonal.
pub fn enumerate_itc(img: &[Vec<f64>], text: &[Vec<f64>], tau: f64) -> f64 {
    let b = img.len();
    let s = |i: usize, j: usize| img[i].iter().zip(&text[j]).map(|(x, y)| x * y).sum::<f64>() / tau;
    let mut i2t = 0.0;
    let mut t2i = 0.0;
    for k in 0..b {
        let row: f64 = (0..b).map(|j| s(k, j).exp()).sum();
        let col: f64 = (0..b).map(|j| s(j, k).exp()).sum();
        let p_row: Vec<f64> = (0..b).map(|j| s(k, j).exp() / row).collect();
        let p_col: Vec<f64> = (0..b).map(|j| s(j, k).exp() / col).collect();
        assert!((p_row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!((p_col.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        i2t -= p_row[k].ln();
        t2i -= p_col[k].ln();
    }
    0.5 * (i2t + t2i) / b as f64
}

pub fn graph_itc(img: &[Vec<f64>], text: &[Vec<f64>], tau: f64, dir: ItcDirection) -> f64 {
    let mut g = Graph::<f64>::new();
    let flat = |m: &[Vec<f64>]| Tensor::from_f64(&[m.len(), m[0].len()], &m.concat()).unwrap();
    let i = g.input(flat(img));
    let t = g.input(flat(text));
    let lt = g.input(Tensor::from_f64(&[1], &[tau.ln()]).unwrap());
    let l = itc_loss(&mut g, i, t, lt, dir).unwrap();
    g.value(l).data()[0]
}
