use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::Task;

/// `counts[truth][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_labels(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Contract(format!(
                "{} labels against {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut cm = Self::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                return Err(Error::Contract(format!("label pair ({t}, {p}) outside {classes} classes")));
            }
            cm.counts[t][p] += 1;
        }
        Ok(cm)
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn predicted(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }

    /// Zero when the class is never predicted.
    pub fn precision(&self, class: usize) -> f64 {
        ratio(self.counts[class][class], self.predicted(class))
    }

    /// Zero when the class never occurs.
    pub fn recall(&self, class: usize) -> f64 {
        ratio(self.counts[class][class], self.support(class))
    }

    /// Merges classes through `map`, which sends each old class to one of
    /// `classes` new ones.
    pub fn merge(&self, map: impl Fn(usize) -> usize, classes: usize) -> Self {
        let mut out = Self::new(classes);
        for (t, row) in self.counts.iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                out.counts[map(t)][map(p)] += n;
            }
        }
        out
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One-vs-rest f1; zero when precision and recall are both zero.
pub fn f1_per_class(cm: &ConfusionMatrix, class: usize) -> f64 {
    let (p, r) = (cm.precision(class), cm.recall(class));
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn macro_f1(f1: &[f64]) -> Result<f64> {
    if f1.is_empty() {
        return Err(Error::Contract("macro f1 of zero classes".into()));
    }
    Ok(f1.iter().sum::<f64>() / f1.len() as f64)
}

/// Normal stays 0, every defect type becomes 1.
pub fn binary_label(class: usize) -> usize {
    usize::from(class != 0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    /// Builds the report for `task` from multi-class labels.
    pub fn from_labels(task: Task, truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        let cm = ConfusionMatrix::from_labels(truth, predicted, classes)?;
        Self::from_confusion(
            task,
            match task {
                Task::Multi => cm,
                Task::Binary => cm.merge(binary_label, 2),
            },
        )
    }

    pub fn from_confusion(task: Task, cm: ConfusionMatrix) -> Result<Self> {
        let per_class: Vec<ClassMetrics> = (0..cm.classes())
            .map(|c| ClassMetrics {
                class: c,
                precision: cm.precision(c),
                recall: cm.recall(c),
                f1: f1_per_class(&cm, c),
                support: cm.support(c),
            })
            .collect();
        let f1: Vec<f64> = per_class.iter().map(|m| m.f1).collect();
        Ok(MetricsReport {
            task,
            macro_f1: macro_f1(&f1)?,
            per_class,
            confusion: cm,
        })
    }

    pub fn to_csv(&self, header: &str) -> String {
        let mut out = format!("# {header}\ntask,class,precision,recall,f1\n");
        for m in &self.per_class {
            let _ = writeln!(out, "{},{},{:.6},{:.6},{:.6}", self.task.as_str(), m.class, m.precision, m.recall, m.f1);
        }
        let _ = writeln!(out, "{},macro,,,{:.6}", self.task.as_str(), self.macro_f1);
        out
    }

    pub fn to_json(&self, header: &str) -> String {
        let value = serde_json::json!({ "header": header, "report": self });
        serde_json::to_string_pretty(&value).expect("report serializes") + "\n"
    }

    /// Writes `metrics.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path, header: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [("metrics.csv", self.to_csv(header)), ("summary.json", self.to_json(header))] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
