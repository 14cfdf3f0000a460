//! Dataset ingestion, pool-only standardization and the repeated
//! pool/test split protocol.

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::svm::{Label, TrainingSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(samples: Vec<Vec<f64>>, labels: Vec<Label>, feature_names: Vec<String>) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: samples.len(),
                actual: labels.len(),
            });
        }
        let d = samples.first().map_or(feature_names.len(), Vec::len);
        if samples.iter().any(|x| x.len() != d) {
            return Err(Error::Data("rows have differing feature counts".into()));
        }
        if samples.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite feature value".into()));
        }
        Ok(Dataset {
            samples,
            labels,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(self.feature_names.len(), Vec::len)
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Requires both classes and at least two samples.
    pub fn to_training_set(&self) -> Result<TrainingSet> {
        TrainingSet::new(self.samples.clone(), self.labels.clone())
    }
}

pub fn load_csv(path: impl AsRef<Path>, label_column: &str, positive_label: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    read_csv(file, label_column, positive_label)
}

/// Every column other than `label_column` must be numeric. Rows are
/// numbered from 1, header excluded, in error messages.
pub fn read_csv(reader: impl Read, label_column: &str, positive_label: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::Data("empty file".into()));
    }
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Data(format!("missing label column `{label_column}`")))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();

    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec?;
        let mut x = Vec::with_capacity(feature_names.len());
        for (i, field) in rec.iter().enumerate() {
            if i == label_idx {
                continue;
            }
            if field.is_empty() {
                return Err(Error::Data(format!("row {row}: missing value in `{}`", &headers[i])));
            }
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Data(format!("row {row}: non-numeric value `{field}` in `{}`", &headers[i])))?;
            if !v.is_finite() {
                return Err(Error::Data(format!("row {row}: non-finite value in `{}`", &headers[i])));
            }
            x.push(v);
        }
        let label = rec.get(label_idx).unwrap_or("");
        if label.is_empty() {
            return Err(Error::Data(format!("row {row}: missing label")));
        }
        samples.push(x);
        labels.push(if label == positive_label { Label::Positive } else { Label::Negative });
    }
    if samples.is_empty() {
        return Err(Error::Data("no data rows".into()));
    }
    Dataset::new(samples, labels, feature_names)
}

/// Per-feature z-score transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; zero marks a constant feature.
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Data("cannot standardize an empty dataset".into()));
        }
        let n = data.len() as f64;
        let d = data.dim();
        let mut mean = vec![0.0; d];
        for x in &data.samples {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; d];
        for x in &data.samples {
            for ((s, v), m) in std.iter_mut().zip(x).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        for (j, s) in std.iter_mut().enumerate() {
            *s = s.sqrt();
            if *s == 0.0 {
                let name = data.feature_names.get(j).map_or("?", String::as_str);
                log::warn!("feature {j} ({name}) is constant on the pool; mapping it to 0");
            }
        }
        Ok(Standardizer { mean, std })
    }

    pub fn transform_point(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| if *s == 0.0 { 0.0 } else { (v - m) / s })
            .collect()
    }

    pub fn transform(&self, data: &Dataset) -> Result<Dataset> {
        if data.dim() != self.mean.len() && !data.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                actual: data.dim(),
            });
        }
        Ok(Dataset {
            samples: data.samples.iter().map(|x| self.transform_point(x)).collect(),
            labels: data.labels.clone(),
            feature_names: data.feature_names.clone(),
        })
    }
}

/// Fits on `pool` only and applies the same transform to `others`.
pub fn standardize(pool: &Dataset, others: &[Dataset]) -> Result<(Dataset, Vec<Dataset>, Standardizer)> {
    let s = Standardizer::fit(pool)?;
    let others = others.iter().map(|d| s.transform(d)).collect::<Result<_>>()?;
    Ok((s.transform(pool)?, others, s))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub pool_fraction: f64,
    pub train_size: usize,
    pub repeats: usize,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            pool_fraction: 0.6,
            train_size: 6,
            repeats: 10,
            seed: 0,
            stratified: true,
        }
    }
}

impl SplitSpec {
    pub fn pool_size(&self, m: usize) -> usize {
        (self.pool_fraction * m as f64).round() as usize
    }
}

/// One repeat: indices into the source dataset plus standardized parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub repeat: usize,
    pub train_idx: Vec<usize>,
    pub validation_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub standardizer: Standardizer,
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

/// Per repeat `r`: shuffle with a seed derived from `(spec.seed, r)`, take
/// the first `round(pool_fraction·M)` as the pool and the rest as test, draw
/// the training set from the pool (stratified: `⌈n/2⌉` positives first in
/// shuffled order) and keep the pool remainder for validation.
pub fn make_splits(data: &Dataset, spec: &SplitSpec) -> Result<Vec<Split>> {
    if !(spec.pool_fraction > 0.0 && spec.pool_fraction < 1.0) {
        return Err(Error::invalid("pool_fraction must lie in (0, 1)"));
    }
    let m = data.len();
    let pool_size = spec.pool_size(m);
    if spec.train_size == 0 || spec.train_size > pool_size {
        return Err(Error::invalid(format!(
            "train_size {} must be between 1 and the pool size {pool_size}",
            spec.train_size
        )));
    }
    (0..spec.repeats).map(|r| split_once(data, spec, pool_size, r)).collect()
}

fn split_once(data: &Dataset, spec: &SplitSpec, pool_size: usize, r: usize) -> Result<Split> {
    let mut rng = seed::rng(seed::derive_seed(spec.seed, &[seed::tag("split"), r as u64]));
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let (pool, test_idx) = order.split_at(pool_size);

    let n = spec.train_size;
    let mut take = vec![false; pool.len()];
    if spec.stratified {
        let want_pos = n.div_ceil(2);
        let want_neg = n - want_pos;
        let (mut pos, mut neg) = (0, 0);
        for (k, &i) in pool.iter().enumerate() {
            let slot = match data.labels[i] {
                Label::Positive => &mut pos,
                Label::Negative => &mut neg,
            };
            let want = if data.labels[i] == Label::Positive { want_pos } else { want_neg };
            if *slot < want {
                *slot += 1;
                take[k] = true;
            }
        }
        if pos < want_pos || neg < want_neg {
            return Err(Error::invalid(format!(
                "repeat {r}: pool has too few samples of one class for a stratified draw of {n}"
            )));
        }
    } else {
        take[..n].iter_mut().for_each(|t| *t = true);
    }
    let train_idx: Vec<usize> = pool.iter().zip(&take).filter(|(_, &t)| t).map(|(&i, _)| i).collect();
    let validation_idx: Vec<usize> = pool.iter().zip(&take).filter(|(_, &t)| !t).map(|(&i, _)| i).collect();

    let standardizer = Standardizer::fit(&data.subset(pool))?;
    Ok(Split {
        repeat: r,
        train: standardizer.transform(&data.subset(&train_idx))?,
        validation: standardizer.transform(&data.subset(&validation_idx))?,
        test: standardizer.transform(&data.subset(test_idx))?,
        train_idx,
        validation_idx,
        test_idx: test_idx.to_vec(),
        standardizer,
    })
}
