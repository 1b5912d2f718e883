use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::alignment::{run_fusion, run_pfa, warmup, PfaSchedule, StageLog};
use crate::datasynth::Dataset;
use crate::error::{Error, Result};
use crate::model::{FusionKind, Model};

use super::config::{RunConfig, Task};
use super::pipeline::{evaluate, obtain_dataset, train_set};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// The configured run: five-stage alignment, gated fusion, augmentation.
    Pfa5,
    Pfa3,
    Direct,
    NoAlign,
    Concat,
    NoSigmoid,
    TdaOff,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Pfa5,
        Variant::Pfa3,
        Variant::Direct,
        Variant::NoAlign,
        Variant::Concat,
        Variant::NoSigmoid,
        Variant::TdaOff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Pfa5 => "pfa5",
            Variant::Pfa3 => "pfa3",
            Variant::Direct => "direct",
            Variant::NoAlign => "none",
            Variant::Concat => "concat",
            Variant::NoSigmoid => "nosigmoid",
            Variant::TdaOff => "tda-off",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!("unknown variant {s:?}; known: {}", names.join(", ")))
            })
    }

    fn augment(self) -> bool {
        self != Variant::TdaOff
    }

    pub fn schedule(self, base: &PfaSchedule) -> Option<PfaSchedule> {
        let with = |f: PfaSchedule| PfaSchedule {
            stage_fractions: f.stage_fractions,
            ..base.clone()
        };
        match self {
            Variant::NoAlign => None,
            Variant::Pfa3 => Some(with(PfaSchedule::three_stage())),
            Variant::Direct => Some(with(PfaSchedule::direct())),
            _ => Some(base.clone()),
        }
    }

    fn fusion(self, base: FusionKind) -> FusionKind {
        match self {
            Variant::Concat => FusionKind::Concat,
            Variant::NoSigmoid => FusionKind::CmafConstant,
            _ => base,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariantRun {
    pub seed: u64,
    pub multi: f64,
    pub binary: f64,
    /// Wall time of this variant, including any warm-up or alignment it
    /// was first to need.
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub runs: Vec<VariantRun>,
    pub failures: Vec<String>,
    pub median_multi: Option<f64>,
    pub median_binary: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DirectionCheck {
    pub name: String,
    pub holds: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
    pub directions: Vec<DirectionCheck>,
}

/// Gap a difference must clear to count as strictly ordered, and the slack
/// within which an inner pair counts as tied.
pub const MARGIN: f64 = 0.01;

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Shared intermediate models of one seed: warm-up per augmentation
/// setting, alignment per (augmentation, schedule).
struct SeedCache<'a> {
    cfg: RunConfig,
    data: &'a Dataset,
    warmed: BTreeMap<bool, Model<f32>>,
    aligned: BTreeMap<(bool, String), Model<f32>>,
}

impl SeedCache<'_> {
    fn warmed(&mut self, augment: bool) -> Result<Model<f32>> {
        if let Some(m) = self.warmed.get(&augment) {
            return Ok(m.clone());
        }
        let train = train_set(self.data, augment)?;
        let mut model = Model::<f32>::init(self.cfg.model.clone(), self.cfg.seed)?;
        let epochs = self.cfg.schedule.warmup_epochs;
        warmup(&mut model, &train, epochs, &self.cfg.train_config(), &mut StageLog::default())?;
        self.warmed.insert(augment, model.clone());
        Ok(model)
    }

    fn aligned(&mut self, augment: bool, schedule: Option<&PfaSchedule>) -> Result<Model<f32>> {
        let key = (augment, format!("{:?}", schedule.map(|s| &s.stage_fractions)));
        if let Some(m) = self.aligned.get(&key) {
            return Ok(m.clone());
        }
        let mut model = self.warmed(augment)?;
        if let Some(s) = schedule {
            let train = train_set(self.data, augment)?;
            run_pfa(&mut model, &train, s, &self.cfg.train_config(), &mut StageLog::default())?;
        }
        self.aligned.insert(key, model.clone());
        Ok(model)
    }

    fn run(&mut self, v: Variant) -> Result<VariantRun> {
        let start = std::time::Instant::now();
        let schedule = v.schedule(&self.cfg.schedule);
        let mut model = self.aligned(v.augment(), schedule.as_ref())?;
        model.set_fusion(v.fusion(self.cfg.model.fusion), self.cfg.seed);
        let train = train_set(self.data, v.augment())?;
        run_fusion(&mut model, &train, &self.cfg.train_config(), &mut StageLog::default())?;
        Ok(VariantRun {
            seed: self.cfg.seed,
            multi: evaluate(&model, self.data, Task::Multi)?.macro_f1,
            binary: evaluate(&model, self.data, Task::Binary)?.macro_f1,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// Runs every variant under each seed. A failing variant is recorded in
/// its row and does not stop the sweep.
pub fn ablate(base: &RunConfig, variants: &[Variant], seeds: &[u64]) -> Result<AblationTable> {
    base.validate()?;
    let mut rows: Vec<AblationRow> = variants
        .iter()
        .map(|&variant| AblationRow {
            variant,
            runs: Vec::new(),
            failures: Vec::new(),
            median_multi: None,
            median_binary: None,
        })
        .collect();
    for &seed in seeds {
        let cfg = base.with_seed(seed);
        let data = match obtain_dataset(&cfg) {
            Ok(d) => d,
            Err(e) => {
                for row in &mut rows {
                    row.failures.push(format!("seed {seed}: {e}"));
                }
                continue;
            }
        };
        let mut cache = SeedCache {
            cfg,
            data: &data,
            warmed: BTreeMap::new(),
            aligned: BTreeMap::new(),
        };
        for row in &mut rows {
            match cache.run(row.variant) {
                Ok(run) => {
                    log::info!("seed {seed} {}: multi {:.4} binary {:.4}", row.variant.name(), run.multi, run.binary);
                    row.runs.push(run);
                }
                Err(e) => {
                    log::warn!("seed {seed} {} failed: {e}", row.variant.name());
                    row.failures.push(format!("seed {seed}: {e}"));
                }
            }
        }
    }
    for row in &mut rows {
        row.median_multi = median(&row.runs.iter().map(|r| r.multi).collect::<Vec<_>>());
        row.median_binary = median(&row.runs.iter().map(|r| r.binary).collect::<Vec<_>>());
    }
    let directions = direction_checks(&rows);
    Ok(AblationTable {
        seeds: seeds.to_vec(),
        rows,
        directions,
    })
}

fn lookup(rows: &[AblationRow], v: Variant) -> Option<f64> {
    rows.iter().find(|r| r.variant == v).and_then(|r| r.median_multi)
}

/// Expected orderings of median multi-class macro f1. Checks whose variants
/// are missing are omitted.
pub fn direction_checks(rows: &[AblationRow]) -> Vec<DirectionCheck> {
    let mut out = Vec::new();
    let chain = [Variant::Pfa5, Variant::Pfa3, Variant::Direct, Variant::NoAlign];
    let scores: Option<Vec<f64>> = chain.iter().map(|&v| lookup(rows, v)).collect();
    if let Some(s) = scores {
        let outer = s[0] - s[3] >= MARGIN;
        let inner = s.windows(2).all(|w| w[0] > w[1] - MARGIN);
        out.push(DirectionCheck {
            name: "alignment".into(),
            holds: outer && inner,
            detail: format!(
                "pfa5 {:.4} >= pfa3 {:.4} >= direct {:.4} >= none {:.4}; outer gap {:+.4}",
                s[0],
                s[1],
                s[2],
                s[3],
                s[0] - s[3]
            ),
        });
    }
    for (name, hi, lo) in [("fusion", Variant::Pfa5, Variant::Concat), ("augmentation", Variant::Pfa5, Variant::TdaOff)] {
        if let (Some(a), Some(b)) = (lookup(rows, hi), lookup(rows, lo)) {
            out.push(DirectionCheck {
                name: name.into(),
                holds: a - b >= MARGIN,
                detail: format!("{} {a:.4} vs {} {b:.4}; gap {:+.4}", hi.name(), lo.name(), a - b),
            });
        }
    }
    out
}

impl AblationTable {
    pub fn to_csv(&self, header: &str) -> String {
        let mut out = format!("# {header}\nvariant,task,median");
        for s in &self.seeds {
            let _ = write!(out, ",seed_{s}");
        }
        out.push_str(",failures\n");
        for row in &self.rows {
            for (task, median, pick) in [
                ("multi", row.median_multi, (|r: &VariantRun| r.multi) as fn(&VariantRun) -> f64),
                ("binary", row.median_binary, |r: &VariantRun| r.binary),
            ] {
                let _ = write!(out, "{},{task},{}", row.variant.name(), median.map(|m| format!("{m:.6}")).unwrap_or_default());
                for s in &self.seeds {
                    let v = row.runs.iter().find(|r| r.seed == *s).map(|r| format!("{:.6}", pick(r)));
                    let _ = write!(out, ",{}", v.unwrap_or_default());
                }
                let _ = writeln!(out, ",{}", row.failures.len());
            }
        }
        out
    }

    pub fn to_json(&self, header: &str) -> String {
        serde_json::to_string_pretty(&serde_json::json!({ "header": header, "table": self })).expect("table serializes") + "\n"
    }
}
