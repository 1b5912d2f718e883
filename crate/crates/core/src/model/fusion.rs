use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Tensor, Var};
use crate::scalar::Scalar;

use super::{Encoded, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AttentionMode {
    Softmax,
    /// Every token attends only to itself.
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GateMode {
    Sigmoid,
    Constant([f64; 3]),
}

pub struct CmafOutput {
    /// `[B*m, d]`
    pub fused: Var,
    /// Concatenated head outputs, `[B*m, d]`.
    pub context: Var,
    /// `[B*m, 3]`
    pub gates: Var,
    /// Per head, `[B*m, m]`.
    pub attention: Vec<Var>,
    /// `[B, classes]`
    pub logits: Var,
}

fn linear<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, x: Var, name: &str) -> Result<Var> {
    let w = g.param(store, &format!("{name}.w"))?;
    let b = g.param(store, &format!("{name}.b"))?;
    let y = g.matmul(x, w)?;
    g.add_bias(y, b)
}

fn classifier<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
    let h = linear(g, store, x, "head.fc1")?;
    let h = g.relu(h);
    linear(g, store, h, "head.fc2")
}

fn check_streams<T: Scalar>(g: &Graph<T>, z: &Encoded, cfg: &ModelConfig, batch: usize) -> Result<()> {
    let want = [batch * cfg.tokens, cfg.d];
    for (name, v) in [("vlm", z.vlm), ("llm", z.llm), ("img", z.img)] {
        if g.value(v).shape() != want {
            return Err(Error::Fusion(format!(
                "{name} stream has shape {:?}, expected {want:?}",
                g.value(v).shape()
            )));
        }
    }
    Ok(())
}

/// Gated cross-attention: queries from the describer stream, keys from the
/// reasoner stream, values from the image stream. The gates weight the
/// unprojected streams.
pub fn cmaf_forward<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    cfg: &ModelConfig,
    z: &Encoded,
    batch: usize,
    attention: AttentionMode,
    gates: GateMode,
) -> Result<CmafOutput> {
    check_streams(g, z, cfg, batch)?;
    let (m, r) = (cfg.tokens, cfg.head_dim());
    let q = linear(g, store, z.vlm, "cmaf.q")?;
    let k = linear(g, store, z.llm, "cmaf.k")?;
    let v = linear(g, store, z.img, "cmaf.v")?;
    let inv_sqrt_r = T::c(1.0 / (r as f64).sqrt());
    let mut heads = Vec::with_capacity(cfg.heads);
    let mut maps = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let vh = g.slice_cols(v, h * r, r)?;
        let a = match attention {
            AttentionMode::Softmax => {
                let qh = g.slice_cols(q, h * r, r)?;
                let kh = g.slice_cols(k, h * r, r)?;
                let s = g.batch_matmul(qh, kh, batch, true)?;
                let s = g.scale(s, inv_sqrt_r);
                g.softmax_rows(s)?
            }
            AttentionMode::Identity => {
                let mut eye = Tensor::zeros(&[batch * m, m]);
                for i in 0..batch * m {
                    eye.data_mut()[i * m + i % m] = T::one();
                }
                g.constant(eye)
            }
        };
        heads.push(g.batch_matmul(a, vh, batch, false)?);
        maps.push(a);
    }
    let c = g.concat_cols(&heads)?;
    let w = match gates {
        GateMode::Sigmoid => {
            let pre = linear(g, store, c, "cmaf.gate")?;
            g.sigmoid(pre)
        }
        GateMode::Constant(k) => {
            let row = [T::c(k[0]), T::c(k[1]), T::c(k[2])];
            let data: Vec<T> = (0..batch * m).flat_map(|_| row).collect();
            g.constant(Tensor::new(vec![batch * m, 3], data)?)
        }
    };
    let mut fused = None;
    for (i, stream) in [z.vlm, z.llm, z.img].into_iter().enumerate() {
        let wi = g.slice_cols(w, i, 1)?;
        let term = g.scale_rows(stream, wi)?;
        fused = Some(match fused {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
    }
    let fused = fused.expect("three streams");
    let pooled = g.mean_groups(fused, m)?;
    let logits = classifier(g, store, pooled)?;
    Ok(CmafOutput {
        fused,
        context: c,
        gates: w,
        attention: maps,
        logits,
    })
}

/// Baseline head: token means of the three streams joined side by side.
pub fn concat_forward<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, cfg: &ModelConfig, z: &Encoded, batch: usize) -> Result<Var> {
    check_streams(g, z, cfg, batch)?;
    let parts = [z.vlm, z.llm, z.img]
        .into_iter()
        .map(|s| g.mean_groups(s, cfg.tokens))
        .collect::<Result<Vec<_>>>()?;
    let x = g.concat_cols(&parts)?;
    classifier(g, store, x)
}
