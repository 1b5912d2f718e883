//! Forward kernels shared by the graph and by non-differentiable callers.

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

pub(crate) fn gemm_into<T: Scalar>(
    a: &[T],
    b: &[T],
    out: &mut [T],
    (m, k, n): (usize, usize, usize),
    trans_a: bool,
    trans_b: bool,
    accumulate: bool,
) {
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, T::one(), a, rsa, csa, b, rsb, csb, beta, out, n as isize, 1);
}

/// Matrix product of `[m, k]` and `[k, n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = Tensor::zeros(&[m, n]);
    gemm_into(a.data(), b.data(), out.data_mut(), (m, k, n), false, false, false);
    Ok(out)
}

/// Numerically stable softmax over the trailing axis.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let n = x.cols();
    if n == 0 || x.rank() == 0 {
        return Err(Error::shape("softmax_rows", x.shape(), &[1]));
    }
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(n) {
        softmax_in_place(row);
    }
    Ok(out)
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

pub(crate) fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln()
}

/// Logistic function, clamped into the open unit interval so that saturated
/// inputs still yield a value strictly between 0 and 1.
#[inline]
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    let one = T::one();
    let s = if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    };
    s.max(T::min_positive_value()).min(one - T::epsilon() / T::c(2.0))
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

pub(crate) fn check_distribution_rows<T: Scalar>(targets: &Tensor<T>) -> Result<()> {
    for (i, row) in targets.data().chunks(targets.cols().max(1)).enumerate() {
        let total: f64 = row.iter().map(|v| v.f64()).sum();
        if row.iter().any(|v| v.f64() < 0.0 || !v.is_finite()) || (total - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!(
                "target row {i} is not a probability vector (sum {total})"
            )));
        }
    }
    Ok(())
}

/// Mean over rows of `-Σ target · log softmax(logits)`.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &Tensor<T>) -> Result<T> {
    if logits.shape() != targets.shape() || logits.rank() != 2 || logits.cols() == 0 {
        return Err(Error::shape("cross_entropy", logits.shape(), targets.shape()));
    }
    check_distribution_rows(targets)?;
    let c = logits.cols();
    let m = logits.rows();
    let mut total = T::zero();
    for (row, t) in logits.data().chunks(c).zip(targets.data().chunks(c)) {
        let lse = log_sum_exp(row);
        for (&x, &p) in row.iter().zip(t) {
            if p != T::zero() {
                total = total - p * (x - lse);
            }
        }
    }
    Ok(total / T::c(m as f64))
}

pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let mut out = Tensor::zeros(&[labels.len(), classes]);
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Contract(format!("label {l} outside {classes} classes")));
        }
        out.data_mut()[i * classes + l] = T::one();
    }
    Ok(out)
}

pub(crate) fn dot<T: Scalar>(u: &[T], v: &[T]) -> T {
    u.iter().zip(v).map(|(&a, &b)| a * b).sum()
}

/// `u·v / (‖u‖‖v‖)`; a zero-norm argument is an error rather than 0.
pub fn cosine_similarity<T: Scalar>(u: &[T], v: &[T]) -> Result<T> {
    if u.len() != v.len() {
        return Err(Error::shape("cosine_similarity", &[u.len()], &[v.len()]));
    }
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu == T::zero() || nv == T::zero() || !nu.is_finite() || !nv.is_finite() {
        return Err(Error::Degenerate("cosine similarity of a zero-norm vector".into()));
    }
    let s = dot(u, v) / (nu * nv);
    Ok(s.max(-T::one()).min(T::one()))
}

pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[19.0, 22.0, 43.0, 50.0]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(matmul(&eye, &b).unwrap(), b);
        let zero = Tensor::zeros(&[2, 3]);
        assert!(matmul(&a, &zero).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_error_names_both() {
        let err = matmul(&Tensor::<f32>::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&t(&[1, 4], &[2.0; 4])).unwrap();
        assert!(s.data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
        assert_eq!(softmax_rows(&t(&[1, 1], &[-7.0])).unwrap().data(), &[1.0]);
        let s = softmax_rows(&t(&[1, 2], &[0.0, 3f64.ln()])).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-12 && (s.data()[1] - 0.75).abs() < 1e-12);
        assert!(softmax_rows(&Tensor::<f64>::zeros(&[3, 0])).is_err());
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid_scalar(0.0f64), 0.5);
        let (a, b) = (sigmoid_scalar(1.7f64), sigmoid_scalar(-1.7f64));
        assert!((a + b - 1.0).abs() < 1e-15);
        for x in [40.0f32, 1e4, f32::MAX] {
            let s = sigmoid_scalar(x);
            assert!(s.is_finite() && s < 1.0 && s > 0.99);
        }
        assert!(sigmoid_scalar(-1e4f32) > 0.0);
    }

    #[test]
    fn cross_entropy_examples() {
        let ce = cross_entropy(&t(&[1, 2], &[0.0, 0.0]), &t(&[1, 2], &[1.0, 0.0])).unwrap();
        assert!((ce - 2f64.ln()).abs() < 1e-12);
        let ce = cross_entropy(&t(&[1, 5], &[0.3; 5]), &one_hot(&[3], 5).unwrap()).unwrap();
        assert!((ce - 5f64.ln()).abs() < 1e-12);
        let ce = cross_entropy(&t(&[1, 3], &[80.0, 0.0, 0.0]), &one_hot(&[0], 3).unwrap()).unwrap();
        assert!(ce < 1e-30);
        let bad = cross_entropy(&t(&[1, 2], &[0.0, 0.0]), &t(&[1, 2], &[0.7, 0.7]));
        assert!(matches!(bad, Err(Error::Contract(_))));
    }

    #[test]
    fn cosine_examples() {
        let u = [0.3f64, -1.2, 2.0];
        assert!((cosine_similarity(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let v: Vec<f64> = u.iter().map(|x| 3.0 * x).collect();
        assert!((cosine_similarity(&u, &v).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            cosine_similarity(&[0.0f64, 0.0], &[1.0, 0.0]),
            Err(Error::Degenerate(_))
        ));
    }
}
