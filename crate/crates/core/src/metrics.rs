//! Binary classification metrics with +1 as the positive class.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::svm::Label;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(y_true: &[Label], y_pred: &[Label]) -> Result<Confusion> {
    check_dim(y_true.len(), y_pred.len())?;
    let mut c = Confusion::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t, p) {
            (Label::Positive, Label::Positive) => c.tp += 1,
            (Label::Negative, Label::Positive) => c.fp += 1,
            (Label::Negative, Label::Negative) => c.tn += 1,
            (Label::Positive, Label::Negative) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1 are 0 when their denominators vanish.
pub fn metrics(c: &Confusion) -> Result<Metrics> {
    if c.total() == 0 {
        return Err(Error::invalid("metrics need at least one sample"));
    }
    Ok(Metrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
        f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
    })
}

pub fn evaluate(y_true: &[Label], y_pred: &[Label]) -> Result<(Confusion, Metrics)> {
    let c = confusion(y_true, y_pred)?;
    Ok((c, metrics(&c)?))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricId {
    Accuracy,
    Precision,
    Recall,
    #[default]
    F1,
}

impl MetricId {
    pub const ALL: [MetricId; 4] = [MetricId::Accuracy, MetricId::Precision, MetricId::Recall, MetricId::F1];

    pub fn of(self, m: &Metrics) -> f64 {
        match self {
            MetricId::Accuracy => m.accuracy,
            MetricId::Precision => m.precision,
            MetricId::Recall => m.recall,
            MetricId::F1 => m.f1,
        }
    }

    fn slot(self, m: &mut Metrics) -> &mut f64 {
        match self {
            MetricId::Accuracy => &mut m.accuracy,
            MetricId::Precision => &mut m.precision,
            MetricId::Recall => &mut m.recall,
            MetricId::F1 => &mut m.f1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricId::Accuracy => "accuracy",
            MetricId::Precision => "precision",
            MetricId::Recall => "recall",
            MetricId::F1 => "f1",
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        MetricId::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Unknown {
                what: "metric",
                name: s.to_string(),
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub confusion: Confusion,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_split: Vec<SplitMetrics>,
    pub mean: Metrics,
    /// Population standard deviation (divisor n).
    pub std: Metrics,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn aggregate(per_split: Vec<SplitMetrics>) -> Result<MetricsReport> {
    if per_split.is_empty() {
        return Err(Error::invalid("nothing to aggregate"));
    }
    let mut mean = Metrics::default();
    let mut std = Metrics::default();
    for id in MetricId::ALL {
        let xs: Vec<f64> = per_split.iter().map(|s| id.of(&s.metrics)).collect();
        let (m, s) = mean_std(&xs);
        *id.slot(&mut mean) = m;
        *id.slot(&mut std) = s;
    }
    Ok(MetricsReport { per_split, mean, std })
}
