//! Gradient check through the whole model: encoders, fusion head, the
//! classification loss and both contrastive terms.

use asemm::alignment::{itc_loss, ItcDirection};
use asemm::model::{FusionKind, Model, ModelConfig, TextBatch};
use asemm::numerics::{grad_check_params, Tensor};
use asemm::RngStream;

pub fn tiny(fusion: FusionKind) -> ModelConfig {
    ModelConfig {
        canvas: 16,
        d: 8,
        tokens: 2,
        heads: 2,
        hidden: 6,
        classes: 5,
        vocab: 20,
        seq_len: 4,
        channels: [2, 3, 4],
        fusion,
    }
}

/// Worst relative error over `instances` random models and batches.
pub fn composed_model(instances: u64) -> f64 {
    let kinds = [FusionKind::Cmaf, FusionKind::CmafConstant, FusionKind::Concat];
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let cfg = tiny(kinds[i as usize % 3]);
        let mut rng = RngStream::labeled(29, "composed", i);
        let model = Model::<f64>::init(cfg.clone(), 100 + i).unwrap();
        let b = 2 + (i as usize % 2);
        let pixels: Vec<f64> = (0..b * 16 * 16).map(|_| if rng.uniform() < 0.2 { 1.0 } else { 0.0 }).collect();
        let images = Tensor::from_f64(&[b, 1, 16, 16], &pixels).unwrap();
        let mut ids = |n: usize| (0..n).map(|_| (rng.uniform() * 20.0) as usize).collect::<Vec<_>>();
        let text = TextBatch { vlm: ids(b * 4), llm: ids(b * 4) };
        let mut targets = Tensor::zeros(&[b, 5]);
        for r in 0..b {
            targets.data_mut()[r * 5 + (r * 2 + i as usize) % 5] = 1.0;
        }
        let loss = |g: &mut asemm::Graph<f64>, store: &asemm::ParamStore<f64>| {
            let m = Model { config: cfg.clone(), store: store.clone() };
            let z = m.encode(g, &images, &text)?;
            let logits = m.logits(g, &z, b)?;
            let ce = g.cross_entropy(logits, targets.clone())?;
            let img = m.pooled(g, z.img)?;
            let vlm = m.pooled(g, z.vlm)?;
            let llm = m.pooled(g, z.llm)?;
            let tau = g.param(store, "align.log_tau")?;
            let a = itc_loss(g, img, llm, tau, ItcDirection::Both)?;
            let v = itc_loss(g, img, vlm, tau, ItcDirection::ImageToText)?;
            let s = g.add(ce, a)?;
            g.add(s, v)
        };
        let report = grad_check_params(&model.store, loss, Some(3), &mut rng).unwrap();
        worst = worst.max(report.max_rel_error);
    }
    worst
}
