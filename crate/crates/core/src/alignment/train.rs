use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::{Encoded, Model, ENCODER_PREFIXES, HEAD_PREFIXES};
use crate::numerics::{adamw_step, AdamWConfig, Graph, RngStream, StepLr, Tensor, Var};
use crate::scalar::Scalar;

use super::data::TrainSet;
use super::itc::{itc_loss, ItcDirection};
use super::log::{StageLog, StageRow};
use super::ranking::{rank_self_similarity, RankedOrder};
use super::schedule::PfaSchedule;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub optim: AdamWConfig,
    pub batch_size: usize,
    pub seed: u64,
    pub fusion_epochs: usize,
    pub decay_factor: f64,
    pub decay_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optim: AdamWConfig::default(),
            batch_size: 10,
            seed: 0,
            fusion_epochs: 60,
            decay_factor: 0.75,
            decay_interval: 15,
        }
    }
}

impl TrainConfig {
    pub fn fusion_lr(&self) -> StepLr {
        StepLr {
            base: self.optim.lr,
            factor: self.decay_factor,
            interval: self.decay_interval,
        }
    }
}

fn batches(n: usize, size: usize, rng: &mut RngStream) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(size.max(1)).map(<[usize]>::to_vec).collect()
}

fn loss_value<T: Scalar>(g: &Graph<T>, v: Var, ctx: &str) -> Result<f64> {
    let x = g.value(v).data()[0].f64();
    if !x.is_finite() {
        return Err(Error::Divergence(format!("{ctx}: loss is {x}")));
    }
    Ok(x)
}

/// Non-finite values anywhere in a step abort training with its location.
fn step<T: Scalar>(model: &mut Model<T>, g: &Graph<T>, loss: Var, optim: &AdamWConfig, ctx: &str) -> Result<()> {
    let with_ctx = |e: Error| match e {
        Error::NonFinite(m) => Error::Divergence(format!("{ctx}: {m}")),
        other => other,
    };
    let grads = g.backward(loss).map_err(with_ctx)?;
    adamw_step(&mut model.store, grads.params(), optim).map_err(with_ctx)
}

const PROBES: [&str; 3] = ["probe.img", "probe.vlm", "probe.llm"];

#[derive(Clone, Debug, PartialEq)]
pub struct WarmupReport {
    pub epoch_losses: Vec<f64>,
    /// Train accuracy of the image, describer and reasoner probes during the
    /// last epoch.
    pub probe_accuracy: [f64; 3],
}

/// Trains each encoder through its own temporary linear probe; the probes
/// are removed afterwards.
pub fn warmup<T: Scalar>(model: &mut Model<T>, data: &TrainSet<T>, epochs: usize, cfg: &TrainConfig, log: &mut StageLog) -> Result<WarmupReport> {
    let mut report = WarmupReport {
        epoch_losses: Vec::new(),
        probe_accuracy: [0.0; 3],
    };
    if epochs == 0 || data.is_empty() {
        return Ok(report);
    }
    let (d, c) = (model.config.d, model.config.classes);
    let bound = 1.0 / (d as f64).sqrt();
    for p in PROBES {
        let mut rng = RngStream::labeled(cfg.seed, &format!("init/{p}"), 0);
        let w: Vec<f64> = (0..d * c).map(|_| rng.uniform_range(-bound, bound)).collect();
        let b: Vec<f64> = (0..c).map(|_| rng.uniform_range(-bound, bound)).collect();
        model.store.insert(format!("{p}.w"), Tensor::from_f64(&[d, c], &w)?);
        model.store.insert(format!("{p}.b"), Tensor::from_f64(&[c], &b)?);
    }
    model.store.reset_optimizer();
    model.store.train_only(&["img.", "vlm.", "llm.", "probe."]);
    let tokens = model.config.tokens;
    for epoch in 0..epochs {
        let mut rng = RngStream::labeled(cfg.seed, "shuffle/warmup", epoch as u64);
        let (mut total, mut count) = (0.0, 0usize);
        let mut correct = [0usize; 3];
        for idx in batches(data.len(), cfg.batch_size, &mut rng) {
            let mut g = Graph::new();
            let z = model.encode(&mut g, &data.images(&idx), &data.text(&idx))?;
            let targets = data.targets(&idx);
            let mut loss: Option<Var> = None;
            for (k, (stream, p)) in [z.img, z.vlm, z.llm].into_iter().zip(PROBES).enumerate() {
                let pooled = g.mean_groups(stream, tokens)?;
                let w = g.param(&model.store, &format!("{p}.w"))?;
                let b = g.param(&model.store, &format!("{p}.b"))?;
                let logits = g.matmul(pooled, w)?;
                let logits = g.add_bias(logits, b)?;
                for (r, &i) in idx.iter().enumerate() {
                    let row = g.value(logits).row(r);
                    if crate::numerics::kernels::argmax(row) == data.items[i].label {
                        correct[k] += 1;
                    }
                }
                let ce = g.cross_entropy(logits, targets.clone())?;
                loss = Some(match loss {
                    None => ce,
                    Some(l) => g.add(l, ce)?,
                });
            }
            let loss = loss.expect("three probes");
            let ctx = format!("warmup epoch {epoch}");
            total += loss_value(&g, loss, &ctx)? * idx.len() as f64;
            count += idx.len();
            step(model, &g, loss, &cfg.optim, &ctx)?;
        }
        let mean = total / count as f64;
        report.epoch_losses.push(mean);
        report.probe_accuracy = correct.map(|c| c as f64 / count as f64);
        log.push(StageRow {
            stage: "warmup".into(),
            epoch,
            phase: "probe".into(),
            active_size: data.len(),
            train_loss: mean,
            pend_loss: None,
            tau: model.tau()?,
            lr: cfg.optim.lr,
        });
    }
    for p in PROBES {
        model.store.remove(&format!("{p}.w"));
        model.store.remove(&format!("{p}.b"));
    }
    Ok(report)
}

/// Unit-norm pooled image, describer and reasoner vectors for the given items.
pub fn pooled_embeddings<T: Scalar>(model: &Model<T>, data: &TrainSet<T>, idx: &[usize], batch: usize) -> Result<[Vec<Vec<T>>; 3]> {
    let mut out: [Vec<Vec<T>>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for chunk in idx.chunks(batch.max(1)) {
        let mut g = Graph::new();
        let z = model.encode(&mut g, &data.images(chunk), &data.text(chunk))?;
        for (k, stream) in [z.img, z.vlm, z.llm].into_iter().enumerate() {
            let p = model.pooled(&mut g, stream)?;
            let v = g.value(p);
            out[k].extend((0..chunk.len()).map(|r| v.row(r).to_vec()));
        }
    }
    Ok(out)
}

/// Mean over items of the image-to-text cosine similarity, averaged over the
/// two text branches.
pub fn mean_diagonal_similarity<T: Scalar>(model: &Model<T>, data: &TrainSet<T>) -> Result<f64> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let [img, vlm, llm] = pooled_embeddings(model, data, &idx, 32)?;
    let dot = |a: &[T], b: &[T]| a.iter().zip(b).map(|(x, y)| x.f64() * y.f64()).sum::<f64>();
    let total: f64 = (0..idx.len()).map(|i| 0.5 * (dot(&img[i], &vlm[i]) + dot(&img[i], &llm[i]))).sum();
    Ok(total / idx.len() as f64)
}

fn alignment_loss<T: Scalar>(model: &Model<T>, g: &mut Graph<T>, z: &Encoded, both: bool) -> Result<Var> {
    let img = model.pooled(g, z.img)?;
    let llm = model.pooled(g, z.llm)?;
    let tau = g.param(&model.store, "align.log_tau")?;
    let l = itc_loss(g, img, llm, tau, ItcDirection::Both)?;
    if !both {
        return Ok(l);
    }
    let vlm = model.pooled(g, z.vlm)?;
    let v = itc_loss(g, img, vlm, tau, ItcDirection::Both)?;
    g.add(l, v)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PfaReport {
    pub order: RankedOrder,
    pub active_sizes: Vec<usize>,
    pub similarity_before: f64,
    pub similarity_after: f64,
}

/// Progressive alignment over a similarity-ranked, growing subset of the
/// training set. The ranking is computed once, before the first stage.
pub fn run_pfa<T: Scalar>(model: &mut Model<T>, data: &TrainSet<T>, schedule: &PfaSchedule, cfg: &TrainConfig, log: &mut StageLog) -> Result<PfaReport> {
    schedule.validate()?;
    let all: Vec<usize> = (0..data.len()).collect();
    let [img, vlm, llm] = pooled_embeddings(model, data, &all, 32)?;
    let ids: Vec<u32> = data.items.iter().map(|it| it.id).collect();
    let order = rank_self_similarity(&ids, &img, &vlm, &llm)?;
    let ranked: Vec<usize> = order
        .ids
        .iter()
        .map(|&id| data.position(id).expect("id from this set"))
        .collect();
    let similarity_before = mean_diagonal_similarity(model, data)?;
    let sizes = schedule.active_sizes(data.len());
    model.store.reset_optimizer();
    for (stage, &n_active) in sizes.iter().enumerate() {
        let (active, pend) = ranked.split_at(n_active);
        for epoch in 0..schedule.epochs_per_stage {
            let both = epoch >= schedule.llm_epochs();
            if both {
                model.store.train_only(&["img.", "vlm.", "llm.", "align."]);
            } else {
                model.store.train_only(&["img.", "llm.", "align."]);
            }
            let label = format!("stage {} epoch {epoch}", stage + 1);
            let mut rng = RngStream::labeled(cfg.seed, &format!("shuffle/pfa{stage}"), epoch as u64);
            let (mut total, mut count) = (0.0, 0usize);
            for b in batches(active.len(), cfg.batch_size, &mut rng) {
                let idx: Vec<usize> = b.iter().map(|&k| active[k]).collect();
                let mut g = Graph::new();
                let z = model.encode(&mut g, &data.images(&idx), &data.text(&idx))?;
                let loss = alignment_loss(model, &mut g, &z, both)?;
                total += loss_value(&g, loss, &label)? * idx.len() as f64;
                count += idx.len();
                step(model, &g, loss, &cfg.optim, &label)?;
            }
            let pend_loss = if pend.is_empty() {
                None
            } else {
                let (mut t, mut c) = (0.0, 0usize);
                for chunk in pend.chunks(cfg.batch_size.max(1)) {
                    let mut g = Graph::new();
                    let z = model.encode(&mut g, &data.images(chunk), &data.text(chunk))?;
                    let loss = alignment_loss(model, &mut g, &z, both)?;
                    t += loss_value(&g, loss, &format!("{label} pending set"))? * chunk.len() as f64;
                    c += chunk.len();
                }
                Some(t / c as f64)
            };
            log.push(StageRow {
                stage: (stage + 1).to_string(),
                epoch,
                phase: if both { "total" } else { "llm" }.into(),
                active_size: n_active,
                train_loss: total / count.max(1) as f64,
                pend_loss,
                tau: model.tau()?,
                lr: cfg.optim.lr,
            });
        }
    }
    let similarity_after = mean_diagonal_similarity(model, data)?;
    Ok(PfaReport {
        order,
        active_sizes: sizes,
        similarity_before,
        similarity_after,
    })
}

/// Encoder outputs of one item, each `m × d` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedItem<T> {
    pub img: Vec<T>,
    pub vlm: Vec<T>,
    pub llm: Vec<T>,
}

pub fn encode_all<T: Scalar>(model: &Model<T>, data: &TrainSet<T>, batch: usize) -> Result<Vec<EncodedItem<T>>> {
    let per = model.config.tokens * model.config.d;
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let mut g = Graph::new();
        let z = model.encode(&mut g, &data.images(chunk), &data.text(chunk))?;
        let (a, b, c) = (g.value(z.img).data(), g.value(z.vlm).data(), g.value(z.llm).data());
        for r in 0..chunk.len() {
            out.push(EncodedItem {
                img: a[r * per..(r + 1) * per].to_vec(),
                vlm: b[r * per..(r + 1) * per].to_vec(),
                llm: c[r * per..(r + 1) * per].to_vec(),
            });
        }
    }
    Ok(out)
}

fn cached_streams<T: Scalar>(g: &mut Graph<T>, cache: &[EncodedItem<T>], idx: &[usize], d: usize) -> Result<Encoded> {
    let gather = |f: &dyn Fn(&EncodedItem<T>) -> &Vec<T>| {
        let mut data = Vec::new();
        for &i in idx {
            data.extend_from_slice(f(&cache[i]));
        }
        let rows = data.len() / d;
        Tensor::new(vec![rows, d], data)
    };
    Ok(Encoded {
        img: g.input(gather(&|e| &e.img)?),
        vlm: g.input(gather(&|e| &e.vlm)?),
        llm: g.input(gather(&|e| &e.llm)?),
    })
}

/// Trains the fusion head and classifier on frozen encoder outputs.
/// Returns the mean training loss of each epoch.
pub fn run_fusion<T: Scalar>(model: &mut Model<T>, data: &TrainSet<T>, cfg: &TrainConfig, log: &mut StageLog) -> Result<Vec<f64>> {
    let mut losses = Vec::new();
    if cfg.fusion_epochs == 0 || data.is_empty() {
        return Ok(losses);
    }
    let cache = encode_all(model, data, 32)?;
    model.store.reset_optimizer();
    model.store.train_only(&HEAD_PREFIXES);
    debug_assert!(ENCODER_PREFIXES.iter().all(|p| !model.store.names().any(|n| n.starts_with(p) && model.store.is_trainable(n))));
    let schedule = cfg.fusion_lr();
    for epoch in 0..cfg.fusion_epochs {
        let optim = AdamWConfig {
            lr: schedule.at(epoch),
            ..cfg.optim
        };
        let mut rng = RngStream::labeled(cfg.seed, "shuffle/fusion", epoch as u64);
        let (mut total, mut count) = (0.0, 0usize);
        for idx in batches(data.len(), cfg.batch_size, &mut rng) {
            let mut g = Graph::new();
            let z = cached_streams(&mut g, &cache, &idx, model.config.d)?;
            let logits = model.logits(&mut g, &z, idx.len())?;
            let loss = g.cross_entropy(logits, data.targets(&idx))?;
            let ctx = format!("fusion epoch {epoch}");
            total += loss_value(&g, loss, &ctx)? * idx.len() as f64;
            count += idx.len();
            step(model, &g, loss, &optim, &ctx)?;
        }
        let mean = total / count as f64;
        losses.push(mean);
        log.push(StageRow {
            stage: "fusion".into(),
            epoch,
            phase: "ce".into(),
            active_size: data.len(),
            train_loss: mean,
            pend_loss: None,
            tau: model.tau()?,
            lr: optim.lr,
        });
    }
    Ok(losses)
}

/// Argmax class per item.
pub fn predict<T: Scalar>(model: &Model<T>, data: &TrainSet<T>) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in idx.chunks(32) {
        let mut g = Graph::new();
        let z = model.encode(&mut g, &data.images(chunk), &data.text(chunk))?;
        let logits = model.logits(&mut g, &z, chunk.len())?;
        let v = g.value(logits);
        out.extend((0..chunk.len()).map(|r| crate::numerics::kernels::argmax(v.row(r))));
    }
    Ok(out)
}
