//! Image and text encoders, the gated cross-attention fusion head, the
//! concatenation baseline and checkpoint files.

pub mod checkpoint;
pub mod fusion;
pub mod encoders;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, RngStream, Tensor, Var};
use crate::scalar::Scalar;

pub use checkpoint::{load_params, load_params_into, save_params};
pub use encoders::{Branch, TextBatch};
pub use fusion::{cmaf_forward, concat_forward, AttentionMode, CmafOutput, GateMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionKind {
    /// Cross-attention with sigmoid gates.
    Cmaf,
    /// Cross-attention with the gates fixed at 1/3.
    CmafConstant,
    /// Pooled modality vectors concatenated into the classifier.
    Concat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub canvas: usize,
    pub d: usize,
    pub tokens: usize,
    pub heads: usize,
    pub hidden: usize,
    pub classes: usize,
    pub vocab: usize,
    pub seq_len: usize,
    pub channels: [usize; 3],
    pub fusion: FusionKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            canvas: 128,
            d: 64,
            tokens: 8,
            heads: 4,
            hidden: 64,
            classes: 5,
            vocab: crate::textbridge::Vocabulary::standard().len(),
            seq_len: crate::textbridge::MAX_LEN,
            channels: [8, 16, 32],
            fusion: FusionKind::Cmaf,
        }
    }
}

/// Output side length of a 3×3, stride 2, pad 1 convolution.
fn halve(n: usize) -> usize {
    (n - 1) / 2 + 1
}

impl ModelConfig {
    pub fn feature_side(&self) -> usize {
        halve(halve(halve(self.canvas)))
    }

    /// Width of one image token before the patch projection.
    pub fn patch_width(&self) -> usize {
        let s = self.feature_side();
        self.channels[2] * s * s / self.tokens
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.canvas < 16 {
            return bad(format!("canvas {} below 16", self.canvas));
        }
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return bad(format!("d = {} is not divisible into {} heads", self.d, self.heads));
        }
        let s = self.feature_side();
        if self.tokens == 0 || (s * s) % self.tokens != 0 {
            return bad(format!("{s}x{s} feature map cannot be split into {} tokens", self.tokens));
        }
        if self.classes < 2 || self.hidden == 0 || self.vocab < 2 || self.seq_len == 0 {
            return bad("classes, hidden, vocab and seq_len must be positive".into());
        }
        if self.channels.contains(&0) {
            return bad("zero conv channels".into());
        }
        Ok(())
    }

    /// Every parameter with its shape and initialization fan-in.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>, usize)> {
        let (d, m, c, h) = (self.d, self.tokens, self.classes, self.hidden);
        let [c1, c2, c3] = self.channels;
        let mut out: Vec<(String, Vec<usize>, usize)> = Vec::new();
        let mut add = |name: &str, shape: &[usize], fan: usize| out.push((name.to_string(), shape.to_vec(), fan));
        for (i, (cin, cout)) in [(1, c1), (c1, c2), (c2, c3)].into_iter().enumerate() {
            add(&format!("img.conv{}.w", i + 1), &[cout, cin, 3, 3], cin * 9);
            add(&format!("img.conv{}.b", i + 1), &[cout], cin * 9);
        }
        let pw = self.patch_width();
        add("img.patch.w", &[pw, d], pw);
        add("img.patch.b", &[d], pw);
        add("img.token", &[m, d], 1);
        for b in ["vlm", "llm"] {
            add(&format!("{b}.embed"), &[self.vocab, d], 1);
            add(&format!("{b}.pos"), &[self.seq_len, d], 1);
            add(&format!("{b}.fc1.w"), &[d, d], d);
            add(&format!("{b}.fc1.b"), &[d], d);
            add(&format!("{b}.fc2.w"), &[d, d], d);
            add(&format!("{b}.fc2.b"), &[d], d);
            add(&format!("{b}.pool"), &[m, self.seq_len], self.seq_len);
        }
        add("align.log_tau", &[1], 0);
        match self.fusion {
            FusionKind::Cmaf | FusionKind::CmafConstant => {
                for p in ["q", "k", "v"] {
                    add(&format!("cmaf.{p}.w"), &[d, d], d);
                    add(&format!("cmaf.{p}.b"), &[d], d);
                }
                if self.fusion == FusionKind::Cmaf {
                    add("cmaf.gate.w", &[d, 3], d);
                    add("cmaf.gate.b", &[3], d);
                }
                add("head.fc1.w", &[d, h], d);
                add("head.fc1.b", &[h], d);
            }
            FusionKind::Concat => {
                add("head.fc1.w", &[3 * d, h], 3 * d);
                add("head.fc1.b", &[h], 3 * d);
            }
        }
        add("head.fc2.w", &[h, c], h);
        add("head.fc2.b", &[c], h);
        out
    }
}

pub const ENCODER_PREFIXES: [&str; 3] = ["img.", "vlm.", "llm."];
pub const HEAD_PREFIXES: [&str; 2] = ["cmaf.", "head."];
pub const INITIAL_TAU: f64 = 0.07;

fn uniform_tensor<T: Scalar>(seed: u64, name: &str, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let mut rng = RngStream::labeled(seed, &format!("init/{name}"), 0);
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let vals: Vec<f64> = (0..n).map(|_| rng.uniform_range(-bound, bound)).collect();
    Tensor::from_f64(shape, &vals).expect("shape matches count")
}

/// Model parameters plus the architecture they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
}

/// The three encoded token streams for one batch, `[B*m, d]` each.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub img: Var,
    pub vlm: Var,
    pub llm: Var,
}

impl<T: Scalar> Model<T> {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        for (name, shape, fan) in config.parameter_shapes() {
            let value = if name == "align.log_tau" {
                Tensor::from_f64(&[1], &[INITIAL_TAU.ln()])?
            } else {
                uniform_tensor(seed, &name, &shape, fan)
            };
            store.insert(name, value);
        }
        Ok(Model { config, store })
    }

    pub fn encode(&self, g: &mut Graph<T>, images: &Tensor<T>, text: &TextBatch) -> Result<Encoded> {
        Ok(Encoded {
            img: encoders::encode_image(g, &self.store, &self.config, images)?,
            vlm: encoders::encode_text(g, &self.store, &self.config, Branch::Vlm, &text.vlm)?,
            llm: encoders::encode_text(g, &self.store, &self.config, Branch::Llm, &text.llm)?,
        })
    }

    /// Classifier logits `[B, classes]` from encoded streams.
    pub fn logits(&self, g: &mut Graph<T>, z: &Encoded, batch: usize) -> Result<Var> {
        match self.config.fusion {
            FusionKind::Cmaf => Ok(cmaf_forward(g, &self.store, &self.config, z, batch, AttentionMode::Softmax, GateMode::Sigmoid)?.logits),
            FusionKind::CmafConstant => {
                let third = 1.0 / 3.0;
                Ok(cmaf_forward(g, &self.store, &self.config, z, batch, AttentionMode::Softmax, GateMode::Constant([third; 3]))?.logits)
            }
            FusionKind::Concat => concat_forward(g, &self.store, &self.config, z, batch),
        }
    }

    /// Unit-norm mean over tokens, `[B*m, d] -> [B, d]`.
    pub fn pooled(&self, g: &mut Graph<T>, z: Var) -> Result<Var> {
        let mean = g.mean_groups(z, self.config.tokens)?;
        g.l2_normalize_rows(mean)
    }

    pub fn tau(&self) -> Result<f64> {
        Ok(self.store.get("align.log_tau")?.data()[0].f64().exp())
    }

    pub fn head_parameters(&self) -> Vec<String> {
        self.store
            .names()
            .filter(|n| HEAD_PREFIXES.iter().any(|p| n.starts_with(p)))
            .map(String::from)
            .collect()
    }

    /// Replaces the fusion head with a freshly initialized one of `kind`,
    /// keeping the encoders.
    pub fn set_fusion(&mut self, kind: FusionKind, seed: u64) {
        for name in self.head_parameters() {
            self.store.remove(&name);
        }
        self.config.fusion = kind;
        for (name, shape, fan) in self.config.parameter_shapes() {
            if HEAD_PREFIXES.iter().any(|p| name.starts_with(p)) {
                self.store.insert(name.clone(), uniform_tensor(seed, &name, &shape, fan));
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            store: self.store.cast(),
        }
    }
}
