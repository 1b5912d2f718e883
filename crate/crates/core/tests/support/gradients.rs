//! Finite-difference checks for every differentiable kernel of the graph.
//! Each family returns its worst relative error over its instances.

use asemm::numerics::{grad_check, Conv2dSpec, Graph, RngStream, Tensor, Var};
use asemm::Result;

pub const TOL: f64 = 1e-4;
pub const INSTANCES: u64 = 20;

pub fn random(rng: &mut RngStream, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap()
}

pub fn dim(rng: &mut RngStream, lo: usize, hi: usize) -> usize {
    lo + (rng.uniform() * (hi - lo + 1) as f64) as usize
}

/// Reduces any node to a scalar through a fixed random weighting so that
/// every output coordinate influences the checked gradient.
pub fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = g.value(y).shape().to_vec();
    let n: usize = shape.iter().product();
    let mut rng = RngStream::labeled(seed, "weights", n as u64);
    let w = random(&mut rng, &[n, 1]);
    let flat = g.reshape(y, &[1, n])?;
    let wv = g.constant(w);
    let s = g.matmul(flat, wv)?;
    g.reshape(s, &[1])
}

fn worst_of(label: &str, mut make: impl FnMut(&mut RngStream, u64) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..INSTANCES {
        let mut rng = RngStream::labeled(77, label, i);
        worst = worst.max(make(&mut rng, i));
    }
    worst
}

pub fn linear_map() -> f64 {
    let mut rng = RngStream::labeled(1, "linear", 0);
    let w = random(&mut rng, &[4, 3]);
    let x = random(&mut rng, &[2, 4]);
    let report = grad_check(
        |g, x| {
            let wv = g.constant(w.clone());
            let y = g.matmul(x, wv)?;
            weighted_sum(g, y, 3)
        },
        &x,
    )
    .unwrap();
    report.max_rel_error
}

pub fn matmul_both_sides() -> f64 {
    worst_of("matmul", |rng, i| {
        let (m, k, n) = (dim(rng, 1, 4), dim(rng, 1, 4), dim(rng, 1, 4));
        let a = random(rng, &[m, k]);
        let b = random(rng, &[k, n]);
        let ra = grad_check(
            |g, x| {
                let bv = g.constant(b.clone());
                let y = g.matmul(x, bv)?;
                weighted_sum(g, y, i)
            },
            &a,
        )
        .unwrap();
        let rb = grad_check(
            |g, x| {
                let av = g.constant(a.clone());
                let y = g.matmul(av, x)?;
                weighted_sum(g, y, i)
            },
            &b,
        )
        .unwrap();
        ra.max_rel_error.max(rb.max_rel_error)
    })
}

pub fn softmax_rows_3x4() -> f64 {
    let mut rng = RngStream::labeled(5, "softmax34", 0);
    let x = random(&mut rng, &[3, 4]);
    let r = grad_check(
        |g, x| {
            let y = g.softmax_rows(x)?;
            weighted_sum(g, y, 1)
        },
        &x,
    )
    .unwrap();
    r.max_rel_error
}

pub fn elementwise_kernels() -> f64 {
    worst_of("elementwise", |rng, i| {
        let shape = [dim(rng, 1, 4), dim(rng, 1, 5)];
        let x = random(rng, &shape);
        let mut worst: f64 = 0.0;
        type Build = fn(&mut Graph<f64>, Var) -> Result<Var>;
        let ops: [Build; 5] = [
            |g, x| Ok(g.sigmoid(x)),
            |g, x| Ok(g.exp(x)),
            |g, x| Ok(g.scale(x, -2.5)),
            |g, x| g.softmax_rows(x),
            |g, x| g.l2_normalize_rows(x),
        ];
        for op in ops {
            let r = grad_check(
                |g, x| {
                    let y = op(g, x)?;
                    weighted_sum(g, y, i)
                },
                &x,
            )
            .unwrap();
            worst = worst.max(r.max_rel_error);
        }
        worst
    })
}

pub fn relu_away_from_kink() -> f64 {
    worst_of("relu", |rng, i| {
        let cols = dim(rng, 1, 5);
        let mut x = random(rng, &[3, cols]);
        for v in x.data_mut() {
            if v.abs() < 1e-2 {
                *v = 0.5;
            }
        }
        grad_check(
            |g, x| {
                let y = g.relu(x);
                weighted_sum(g, y, i)
            },
            &x,
        )
        .unwrap()
        .max_rel_error
    })
}

pub fn broadcasting_and_reshaping_ops() -> f64 {
    worst_of("structural", |rng, i| {
        let (groups, m, d) = (dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 2, 5));
        let x = random(rng, &[groups * m, d]);
        let bias = random(rng, &[d]);
        let tile = random(rng, &[m, d]);
        let rows = random(rng, &[groups * m, 1]);
        let other = random(rng, &[groups * m, 2]);
        let s = random(rng, &[1]);
        let start = dim(rng, 0, d - 1);
        let len = dim(rng, 1, d - start);
        let mut worst: f64 = 0.0;
        let mut check = |f: &dyn Fn(&mut Graph<f64>, Var) -> Result<Var>, at: &Tensor<f64>| {
            let r = grad_check(
                |g, x| {
                    let y = f(g, x)?;
                    weighted_sum(g, y, i)
                },
                at,
            )
            .unwrap();
            worst = worst.max(r.max_rel_error);
        };
        check(&|g, x| { let b = g.constant(bias.clone()); g.add_bias(x, b) }, &x);
        check(&|g, b| { let xv = g.constant(x.clone()); g.add_bias(xv, b) }, &bias);
        check(&|g, t| { let xv = g.constant(x.clone()); g.add_tiled(xv, t) }, &tile);
        check(&|g, x| { let y = g.constant(x_like(&x_shape(g, x))); g.add(x, y) }, &x);
        check(&|g, x| { let r = g.constant(rows.clone()); g.scale_rows(x, r) }, &x);
        check(&|g, r| { let xv = g.constant(x.clone()); g.scale_rows(xv, r) }, &rows);
        check(&|g, x| { let sv = g.constant(s.clone()); g.mul_scalar(x, sv) }, &x);
        check(&|g, s| { let xv = g.constant(x.clone()); g.mul_scalar(xv, s) }, &s);
        check(&|g, x| g.transpose(x), &x);
        check(&|g, x| g.slice_cols(x, start, len), &x);
        check(&|g, x| { let o = g.constant(other.clone()); g.concat_cols(&[o, x, o]) }, &x);
        check(&|g, x| g.mean_groups(x, m), &x);
        check(&|g, x| g.reshape(x, &[d, groups * m]), &x);
        worst
    })
}

fn x_shape(g: &Graph<f64>, x: Var) -> Vec<usize> {
    g.value(x).shape().to_vec()
}

fn x_like(shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|i| i as f64 * 0.1).collect()).unwrap()
}

pub fn batched_products() -> f64 {
    worst_of("bmm", |rng, i| {
        let (batch, m, k, n) = (dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 3));
        let a = random(rng, &[batch * m, k]);
        let b = random(rng, &[batch * k, n]);
        let bt = random(rng, &[batch * n, k]);
        let p = random(rng, &[m, k]);
        let h = random(rng, &[batch * k, n]);
        let mut worst: f64 = 0.0;
        let mut check = |f: &dyn Fn(&mut Graph<f64>, Var) -> Result<Var>, at: &Tensor<f64>| {
            let r = grad_check(|g, x| { let y = f(g, x)?; weighted_sum(g, y, i) }, at).unwrap();
            worst = worst.max(r.max_rel_error);
        };
        check(&|g, x| { let bv = g.constant(b.clone()); g.batch_matmul(x, bv, batch, false) }, &a);
        check(&|g, x| { let av = g.constant(a.clone()); g.batch_matmul(av, x, batch, false) }, &b);
        check(&|g, x| { let bv = g.constant(bt.clone()); g.batch_matmul(x, bv, batch, true) }, &a);
        check(&|g, x| { let av = g.constant(a.clone()); g.batch_matmul(av, x, batch, true) }, &bt);
        check(&|g, x| { let hv = g.constant(h.clone()); g.shared_left_matmul(x, hv, batch) }, &p);
        check(&|g, x| { let pv = g.constant(p.clone()); g.shared_left_matmul(pv, x, batch) }, &h);
        worst
    })
}

pub fn convolution_embedding_patchify() -> f64 {
    worst_of("conv", |rng, i| {
        let (b, c, o) = (dim(rng, 1, 2), dim(rng, 1, 2), dim(rng, 1, 3));
        let size = 2 * dim(rng, 2, 4);
        let x = random(rng, &[b, c, size, size]);
        let w = random(rng, &[o, c, 3, 3]);
        let bias = random(rng, &[o]);
        let spec = Conv2dSpec { stride: 2, pad: 1 };
        let mut worst: f64 = 0.0;
        let mut check = |f: &dyn Fn(&mut Graph<f64>, Var) -> Result<Var>, at: &Tensor<f64>| {
            let r = grad_check(|g, x| { let y = f(g, x)?; weighted_sum(g, y, i) }, at).unwrap();
            worst = worst.max(r.max_rel_error);
        };
        check(&|g, x| { let wv = g.constant(w.clone()); let bv = g.constant(bias.clone()); g.conv2d(x, wv, bv, spec) }, &x);
        check(&|g, wv| { let xv = g.constant(x.clone()); let bv = g.constant(bias.clone()); g.conv2d(xv, wv, bv, spec) }, &w);
        check(&|g, bv| { let xv = g.constant(x.clone()); let wv = g.constant(w.clone()); g.conv2d(xv, wv, bv, spec) }, &bias);
        let tokens = [1, 2, 4][dim(rng, 0, 2)];
        check(&|g, x| g.patchify(x, tokens), &x);
        let table = random(rng, &[5, 3]);
        let ids: Vec<usize> = (0..7).map(|_| dim(rng, 0, 4)).collect();
        check(&|g, t| g.embedding(t, &ids), &table);
        worst
    })
}

pub fn cross_entropy_against_soft_targets() -> f64 {
    worst_of("ce", |rng, _| {
        let (m, c) = (dim(rng, 1, 4), dim(rng, 2, 5));
        let x = random(rng, &[m, c]);
        let mut t = random(rng, &[m, c]).map(f64::abs);
        for row in t.data_mut().chunks_mut(c) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        grad_check(|g, x| g.cross_entropy(x, t.clone()), &x).unwrap().max_rel_error
    })
}

