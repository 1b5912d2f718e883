use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PfaSchedule {
    pub stage_fractions: Vec<f64>,
    pub epochs_per_stage: usize,
    pub warmup_epochs: usize,
}

impl Default for PfaSchedule {
    fn default() -> Self {
        PfaSchedule {
            stage_fractions: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            epochs_per_stage: 15,
            warmup_epochs: 30,
        }
    }
}

impl PfaSchedule {
    pub fn three_stage() -> Self {
        PfaSchedule {
            stage_fractions: vec![1.0 / 3.0, 2.0 / 3.0, 1.0],
            ..Default::default()
        }
    }

    pub fn direct() -> Self {
        PfaSchedule {
            stage_fractions: vec![1.0],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = &self.stage_fractions;
        let ok = !f.is_empty()
            && f.iter().all(|&x| x > 0.0 && x <= 1.0)
            && f.windows(2).all(|w| w[1] > w[0])
            && *f.last().expect("nonempty") == 1.0;
        if !ok {
            return Err(Error::Config(format!(
                "stage fractions must increase strictly within (0, 1] and end at 1: {f:?}"
            )));
        }
        Ok(())
    }

    /// Epochs of each stage spent on the reasoner pair alone; the rest use
    /// both pairs.
    pub fn llm_epochs(&self) -> usize {
        self.epochs_per_stage.div_ceil(2)
    }

    /// Active-set size per stage for `n` training samples: `round(f·n)`,
    /// at least 1 and never shrinking; the last stage is always `n`.
    pub fn active_sizes(&self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.stage_fractions.len());
        let mut prev = 0;
        for (i, f) in self.stage_fractions.iter().enumerate() {
            let k = if i + 1 == self.stage_fractions.len() {
                n
            } else {
                ((f * n as f64).round() as usize).clamp(1.min(n), n).max(prev)
            };
            out.push(k);
            prev = k;
        }
        out
    }
}
