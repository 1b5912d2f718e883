use crate::error::{Error, Result};
use crate::numerics::{Conv2dSpec, Graph, ParamStore, Tensor, Var};
use crate::scalar::Scalar;

use super::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branch {
    Vlm,
    Llm,
}

impl Branch {
    pub fn prefix(self) -> &'static str {
        match self {
            Branch::Vlm => "vlm",
            Branch::Llm => "llm",
        }
    }
}

/// Token ids for a batch, `B*L` each, row-major by sample.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TextBatch {
    pub vlm: Vec<usize>,
    pub llm: Vec<usize>,
}

const DOWN: Conv2dSpec = Conv2dSpec { stride: 2, pad: 1 };

/// `[B, 1, H, W]` pixels in `[0, 1]` to `[B*m, d]` tokens.
pub fn encode_image<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, cfg: &ModelConfig, images: &Tensor<T>) -> Result<Var> {
    let s = images.shape();
    if s.len() != 4 || s[1] != 1 || s[2] != cfg.canvas || s[3] != cfg.canvas {
        return Err(Error::shape("encode_image", s, &[0, 1, cfg.canvas, cfg.canvas]));
    }
    let mut x = g.input(images.clone());
    for i in 1..=3 {
        let w = g.param(store, &format!("img.conv{i}.w"))?;
        let b = g.param(store, &format!("img.conv{i}.b"))?;
        x = g.conv2d(x, w, b, DOWN)?;
        x = g.relu(x);
    }
    let patches = g.patchify(x, cfg.tokens)?;
    let w = g.param(store, "img.patch.w")?;
    let b = g.param(store, "img.patch.b")?;
    let t = g.param(store, "img.token")?;
    let z = g.matmul(patches, w)?;
    let z = g.add_bias(z, b)?;
    g.add_tiled(z, t)
}

/// `B*L` token ids to `[B*m, d]` tokens through the branch's own weights.
pub fn encode_text<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, cfg: &ModelConfig, branch: Branch, ids: &[usize]) -> Result<Var> {
    let l = cfg.seq_len;
    if ids.is_empty() || ids.len() % l != 0 {
        return Err(Error::shape("encode_text", &[ids.len()], &[l]));
    }
    let batch = ids.len() / l;
    let p = branch.prefix();
    let table = g.param(store, &format!("{p}.embed"))?;
    let pos = g.param(store, &format!("{p}.pos"))?;
    let mut h = g.embedding(table, ids)?;
    h = g.add_tiled(h, pos)?;
    let w1 = g.param(store, &format!("{p}.fc1.w"))?;
    let b1 = g.param(store, &format!("{p}.fc1.b"))?;
    let w2 = g.param(store, &format!("{p}.fc2.w"))?;
    let b2 = g.param(store, &format!("{p}.fc2.b"))?;
    h = g.matmul(h, w1)?;
    h = g.add_bias(h, b1)?;
    h = g.relu(h);
    h = g.matmul(h, w2)?;
    h = g.add_bias(h, b2)?;
    let pool = g.param(store, &format!("{p}.pool"))?;
    g.shared_left_matmul(pool, h, batch)
}
