use std::path::{Path, PathBuf};

use crate::alignment::{
    pooled_embeddings, predict, run_fusion, run_pfa, warmup, PfaReport, StageLog, TrainSet, WarmupReport,
};
use crate::datasynth::{ase_catalog, build_dataset, Dataset, Provenance, Split, TextPlan};
use crate::error::{Error, Result};
use crate::model::{checkpoint, Model};
use crate::textbridge::{FallbackSource, RemoteSource, SurrogateSource, TextSource, Vocabulary};

use super::config::{RunConfig, Task, TextSourceKind};
use super::metrics::MetricsReport;

pub fn text_source(cfg: &RunConfig) -> Result<Box<dyn TextSource>> {
    let surrogate = Box::new(SurrogateSource { seed: cfg.seed });
    Ok(match cfg.text.source {
        TextSourceKind::Surrogate => surrogate,
        TextSourceKind::Remote => {
            let remote = match &cfg.text.endpoint {
                Some(url) => RemoteSource::new(url),
                None => RemoteSource::from_env()?,
            };
            Box::new(FallbackSource {
                primary: Box::new(remote),
                fallback: if cfg.text.strict { None } else { Some(surrogate) },
            })
        }
    })
}

pub fn synthesize(cfg: &RunConfig) -> Result<Dataset> {
    let source = text_source(cfg)?;
    let mut plan = TextPlan::new(source.as_ref());
    plan.max_in_flight = cfg.text.max_in_flight;
    build_dataset(&ase_catalog(), cfg.seed, &cfg.synth, &plan)
}

/// The configured dataset directory, or a fresh synthesis.
pub fn obtain_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.dataset {
        Some(dir) => Dataset::load(dir),
        None => synthesize(cfg),
    }
}

pub fn train_set(data: &Dataset, include_augmented: bool) -> Result<TrainSet<f32>> {
    TrainSet::from_samples(
        data.split(Split::Train)
            .filter(|s| include_augmented || s.provenance == Provenance::Original),
        &Vocabulary::standard(),
        data.class_count(),
    )
}

/// Test items; refuses a dataset whose test split holds augmented samples.
pub fn test_set(data: &Dataset) -> Result<TrainSet<f32>> {
    if let Some(s) = data
        .split(Split::Test)
        .find(|s| s.provenance == Provenance::Augmented)
    {
        return Err(Error::Dataset(format!(
            "augmented sample {} is in the test split; refusing to evaluate",
            s.id
        )));
    }
    TrainSet::from_samples(data.split(Split::Test), &Vocabulary::standard(), data.class_count())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    Warmup,
    Pfa,
    Fusion,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Warmup, Phase::Pfa, Phase::Fusion];

    pub fn checkpoint_name(self) -> &'static str {
        match self {
            Phase::Warmup => "warmup.ckpt",
            Phase::Pfa => "pfa.ckpt",
            Phase::Fusion => "model.ckpt",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "warmup" => Ok(Phase::Warmup),
            "pfa" => Ok(Phase::Pfa),
            "fusion" | "final" => Ok(Phase::Fusion),
            other => Err(Error::Config(format!("unknown stage {other:?}, expected warmup, pfa or final"))),
        }
    }
}

pub const STAGE_LOG: &str = "stage_log.csv";
pub const RUN_CONFIG: &str = "config.toml";

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model<f32>,
    pub log: StageLog,
    /// Phases skipped because their checkpoint was already present.
    pub resumed: Vec<Phase>,
    pub warmup: Option<WarmupReport>,
    pub pfa: Option<PfaReport>,
    pub fusion_losses: Vec<f64>,
}

fn stage_header(cfg: &RunConfig) -> String {
    let o = &cfg.optim;
    format!(
        "{} batch_size={} adamw=({}, {}, {:e}) weight_decay={}",
        cfg.header(),
        o.batch_size,
        o.beta1,
        o.beta2,
        o.eps,
        o.weight_decay
    )
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Checks that `dir` either is new or was produced by exactly `cfg`.
fn claim_run_dir(dir: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(RUN_CONFIG);
    if path.exists() {
        let previous = RunConfig::load(&path)?;
        if previous.hash() != cfg.hash() {
            return Err(Error::Config(format!(
                "{} holds a run with config hash {}, not {}; use a fresh directory",
                dir.display(),
                previous.hash(),
                cfg.hash()
            )));
        }
    } else {
        write_text(&path, &cfg.to_toml())?;
    }
    Ok(())
}

/// Warm-up, alignment and fusion on the train split. With `out`, each phase
/// leaves a checkpoint there and a later call resumes after the last one.
pub fn train(cfg: &RunConfig, data: &Dataset, out: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train = train_set(data, true)?;
    let tc = cfg.train_config();
    let mut model = Model::<f32>::init(cfg.model.clone(), cfg.seed)?;
    let mut outcome = TrainOutcome {
        model: model.clone(),
        log: StageLog::default(),
        resumed: Vec::new(),
        warmup: None,
        pfa: None,
        fusion_losses: Vec::new(),
    };
    let ckpt = |p: Phase| out.map(|d| d.join(p.checkpoint_name()));
    if let Some(dir) = out {
        claim_run_dir(dir, cfg)?;
        // Resume after the latest finished phase.
        if let Some(done) = Phase::ALL.iter().rev().find(|p| dir.join(p.checkpoint_name()).exists()) {
            checkpoint::load_params_into(&mut model.store, &dir.join(done.checkpoint_name()))?;
            outcome.resumed = Phase::ALL.iter().copied().filter(|p| p <= done).collect();
            log::info!("resuming after {done:?}");
        } else {
            let log_path = dir.join(STAGE_LOG);
            if log_path.exists() {
                std::fs::remove_file(&log_path).map_err(|e| Error::io(&log_path, e))?;
            }
        }
    }
    for phase in Phase::ALL {
        if outcome.resumed.contains(&phase) {
            continue;
        }
        let mut log = StageLog::default();
        match phase {
            Phase::Warmup => outcome.warmup = Some(warmup(&mut model, &train, cfg.schedule.warmup_epochs, &tc, &mut log)?),
            Phase::Pfa => outcome.pfa = Some(run_pfa(&mut model, &train, &cfg.schedule, &tc, &mut log)?),
            Phase::Fusion => outcome.fusion_losses = run_fusion(&mut model, &train, &tc, &mut log)?,
        }
        if let (Some(dir), Some(path)) = (out, ckpt(phase)) {
            log.append_csv(&dir.join(STAGE_LOG), &stage_header(cfg))?;
            checkpoint::save_params(&model.store, &path)?;
        }
        outcome.log.extend(log);
    }
    outcome.model = model;
    Ok(outcome)
}

/// Loads the model saved by [`train`] after `phase`.
pub fn load_model(run_dir: &Path, phase: Phase) -> Result<(RunConfig, Model<f32>)> {
    let cfg = RunConfig::load(&run_dir.join(RUN_CONFIG))?;
    let mut model = Model::<f32>::init(cfg.model.clone(), cfg.seed)?;
    let path = run_dir.join(phase.checkpoint_name());
    if !path.exists() {
        return Err(Error::Checkpoint(format!(
            "{} not found; run `train` into {} first",
            path.display(),
            run_dir.display()
        )));
    }
    checkpoint::load_params_into(&mut model.store, &path)?;
    Ok((cfg, model))
}

/// Predicts the test split and scores it for `task`.
pub fn evaluate(model: &Model<f32>, data: &Dataset, task: Task) -> Result<MetricsReport> {
    let test = test_set(data)?;
    let predicted = predict(model, &test)?;
    let truth: Vec<usize> = test.items.iter().map(|i| i.label).collect();
    MetricsReport::from_labels(task, &truth, &predicted, data.class_count())
}

/// CSV of pooled image embeddings, one row per sample in id order.
pub fn export_embeddings(model: &Model<f32>, data: &Dataset, header: &str) -> Result<String> {
    use std::fmt::Write as _;
    let mut samples: Vec<_> = data.samples.iter().collect();
    samples.sort_by_key(|s| s.id);
    let set = TrainSet::<f32>::from_samples(samples.iter().copied(), &Vocabulary::standard(), data.class_count())?;
    let idx: Vec<usize> = (0..set.len()).collect();
    let [img, _, _] = pooled_embeddings(model, &set, &idx, 32)?;
    let mut out = format!("# {header}\nid,label");
    for k in 0..model.config.d {
        let _ = write!(out, ",z{k}");
    }
    out.push('\n');
    for (item, z) in set.items.iter().zip(&img) {
        let _ = write!(out, "{},{}", item.id, item.label);
        for v in z {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Where [`run_all`] puts its outputs.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub data: PathBuf,
    pub run: PathBuf,
    pub metrics: PathBuf,
}

impl RunPaths {
    pub fn under(root: &Path) -> Self {
        RunPaths {
            data: root.join("data"),
            run: root.join("run"),
            metrics: root.join("metrics"),
        }
    }
}

/// Synthesis, training and evaluation into `paths`.
pub fn run_all(cfg: &RunConfig, paths: &RunPaths) -> Result<MetricsReport> {
    let data = obtain_dataset(cfg)?;
    data.write(&paths.data)?;
    let outcome = train(cfg, &data, Some(&paths.run))?;
    let report = evaluate(&outcome.model, &data, cfg.task)?;
    report.write(&paths.metrics, &cfg.header())?;
    Ok(report)
}
