use crate::error::Result;
use crate::numerics::{Graph, Tensor, Var};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ItcDirection {
    ImageToText,
    TextToImage,
    Both,
}

/// In-batch image-text contrastive loss over unit-norm rows `img` and
/// `text` (`[B, d]`), with temperature `exp(log_tau)`. Targets are the
/// diagonal matches; `Both` averages the two directions.
pub fn itc_loss<T: Scalar>(g: &mut Graph<T>, img: Var, text: Var, log_tau: Var, direction: ItcDirection) -> Result<Var> {
    let b = g.value(img).rows();
    let mut eye = Tensor::zeros(&[b, b]);
    for i in 0..b {
        eye.data_mut()[i * b + i] = T::one();
    }
    let text_t = g.transpose(text)?;
    let sim = g.matmul(img, text_t)?;
    let neg = g.scale(log_tau, -T::one());
    let inv_tau = g.exp(neg);
    let logits = g.mul_scalar(sim, inv_tau)?;
    match direction {
        ItcDirection::ImageToText => g.cross_entropy(logits, eye),
        ItcDirection::TextToImage => {
            let t = g.transpose(logits)?;
            g.cross_entropy(t, eye)
        }
        ItcDirection::Both => {
            let a = g.cross_entropy(logits, eye.clone())?;
            let t = g.transpose(logits)?;
            let c = g.cross_entropy(t, eye)?;
            let s = g.add(a, c)?;
            Ok(g.scale(s, T::c(0.5)))
        }
    }
}
