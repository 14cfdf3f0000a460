//! Ensembles built from the sampled candidate models: average voting over
//! the most frequent states, and stacking with a QUBO-trained SVM on top of
//! classical base models.

use serde::{Deserialize, Serialize};

use crate::analog::ShotHistogram;
use crate::backend::QuboBackend;
use crate::baselines::{BaselineRegistry, Classifier};
use crate::error::{check_dim, Error, Result};
use crate::metrics::{evaluate, MetricId};
use crate::qubo::Bitstring;
use crate::svm::{build_qubo, model_from_state, EncodingConfig, Kernel, Label, SvmModel, TrainingSet};

pub const DEFAULT_MAX_MODELS: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedModel {
    pub state: Bitstring,
    pub frequency: u64,
    pub model: SvmModel,
}

/// Decoded models by frequency descending, ties in lexicographic order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedModels {
    pub entries: Vec<RankedModel>,
}

impl RankedModels {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn top(&self) -> Result<&SvmModel> {
        self.entries
            .first()
            .map(|e| &e.model)
            .ok_or_else(|| Error::invalid("no ranked models"))
    }
}

pub fn rank_models(
    hist: &ShotHistogram,
    train: &TrainingSet,
    cfg: &EncodingConfig,
    max_models: usize,
) -> Result<RankedModels> {
    let want = cfg.qubo_dim(train.len());
    let entries = hist
        .ranked()
        .into_iter()
        .take(max_models)
        .map(|(state, frequency)| {
            check_dim(want, state.len())?;
            let model = model_from_state(&state, train, cfg)?;
            Ok(RankedModel {
                state,
                frequency,
                model,
            })
        })
        .collect::<Result<_>>()?;
    Ok(RankedModels { entries })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteMode {
    /// Mean of the members' decision values.
    #[default]
    DecisionValue,
    /// Mean of the members' ±1 labels.
    HardLabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VotingEnsemble {
    pub models: Vec<SvmModel>,
    pub mode: VoteMode,
}

impl VotingEnsemble {
    pub fn new(models: Vec<SvmModel>, mode: VoteMode) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::invalid("empty ensemble"));
        }
        Ok(VotingEnsemble { models, mode })
    }

    pub fn size(&self) -> usize {
        self.models.len()
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        member_mean(&self.models, x, self.mode)
    }
}

fn member_value(m: &SvmModel, x: &[f64], mode: VoteMode) -> Result<f64> {
    let f = m.decision_value(x)?;
    Ok(match mode {
        VoteMode::DecisionValue => f,
        VoteMode::HardLabel => Label::from_score(f).value(),
    })
}

fn member_mean(models: &[SvmModel], x: &[f64], mode: VoteMode) -> Result<f64> {
    if models.is_empty() {
        return Err(Error::invalid("empty ensemble"));
    }
    let mut s = 0.0;
    for m in models {
        s += member_value(m, x, mode)?;
    }
    Ok(s / models.len() as f64)
}

/// Sign of the members' mean output; 0 maps to +1.
pub fn vote_predict(ens: &VotingEnsemble, x: &[f64]) -> Result<Label> {
    Ok(Label::from_score(ens.score(x)?))
}

/// Validation scores of every prefix size `k = 1..=len`.
pub fn prefix_scores(ranked: &RankedModels, validation: &TrainingSet, metric: MetricId, mode: VoteMode) -> Result<Vec<f64>> {
    if ranked.is_empty() || validation.is_empty() {
        return Err(Error::invalid("need ranked models and a validation set"));
    }
    let mut sums = vec![0.0; validation.len()];
    let mut scores = Vec::with_capacity(ranked.len());
    for (k, e) in ranked.entries.iter().enumerate() {
        let mut preds = Vec::with_capacity(validation.len());
        for (i, s) in sums.iter_mut().enumerate() {
            *s += member_value(&e.model, validation.sample(i), mode)?;
            preds.push(Label::from_score(*s / (k + 1) as f64));
        }
        let (_, m) = evaluate(validation.labels(), &preds)?;
        scores.push(metric.of(&m));
    }
    Ok(scores)
}

/// Picks the smallest prefix size with the best validation metric.
pub fn optimize_ensemble_size(
    ranked: &RankedModels,
    validation: &TrainingSet,
    metric: MetricId,
    mode: VoteMode,
) -> Result<(VotingEnsemble, Vec<f64>)> {
    let scores = prefix_scores(ranked, validation, metric, mode)?;
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = k;
        }
    }
    let models = ranked.entries[..=best].iter().map(|e| e.model.clone()).collect();
    Ok((VotingEnsemble::new(models, mode)?, scores))
}

/// Meta-model settings. The features are ±1 base predictions, so the kernel
/// is the dot product scaled by `1/m` (m base models).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StackConfig {
    pub base: f64,
    pub bits_per_alpha: usize,
    pub xi: f64,
    pub shots: u64,
    /// Use base decision values instead of labels as meta-features.
    pub decision_features: bool,
}

impl Default for StackConfig {
    fn default() -> Self {
        StackConfig {
            base: 2.0,
            bits_per_alpha: 2,
            xi: 0.0,
            shots: 500,
            decision_features: false,
        }
    }
}

impl StackConfig {
    pub fn encoding(&self, n_base: usize) -> EncodingConfig {
        EncodingConfig {
            base: self.base,
            bits_per_alpha: self.bits_per_alpha,
            xi: self.xi,
            kernel: Kernel::Linear {
                scale: 1.0 / n_base.max(1) as f64,
            },
        }
    }
}

pub struct StackedModel {
    pub base_models: Vec<Box<dyn Classifier>>,
    pub meta: SvmModel,
    pub decision_features: bool,
}

fn meta_features(base: &[Box<dyn Classifier>], x: &[f64], decision: bool) -> Result<Vec<f64>> {
    base.iter()
        .map(|m| {
            if decision {
                m.decision_value(x)
            } else {
                Ok(m.predict(x)?.value())
            }
        })
        .collect()
}

/// Trains the meta SVM on base-model outputs over `train`, solving its QUBO
/// with `backend` and keeping the most frequent state.
pub fn stack_train(
    base_models: Vec<Box<dyn Classifier>>,
    train: &TrainingSet,
    backend: &dyn QuboBackend,
    cfg: &StackConfig,
    seed: u64,
) -> Result<StackedModel> {
    if base_models.len() < 2 {
        return Err(Error::invalid("stacking needs at least two base models"));
    }
    let feats = train
        .samples()
        .iter()
        .map(|x| meta_features(&base_models, x, cfg.decision_features))
        .collect::<Result<Vec<_>>>()?;
    let meta_train = TrainingSet::new(feats, train.labels().to_vec())?;
    let enc = cfg.encoding(base_models.len());
    let q = build_qubo(&meta_train, &enc)?;
    let run = backend.solve(&q, cfg.shots, seed)?;
    let ranked = rank_models(&run.histogram, &meta_train, &enc, 1)?;
    let meta = ranked.top()?.clone();
    Ok(StackedModel {
        base_models,
        meta,
        decision_features: cfg.decision_features,
    })
}

pub fn stack_predict(model: &StackedModel, x: &[f64]) -> Result<Label> {
    model.meta.predict(&meta_features(&model.base_models, x, model.decision_features)?)
}

impl StackedModel {
    pub fn to_json(&self, registry: &BaselineRegistry) -> Result<serde_json::Value> {
        let base = self
            .base_models
            .iter()
            .map(|m| registry.save(m.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Ok(serde_json::json!({
            "base_models": base,
            "meta": serde_json::to_value(&self.meta)?,
            "decision_features": self.decision_features,
        }))
    }

    pub fn from_json(v: serde_json::Value, registry: &BaselineRegistry) -> Result<Self> {
        let base = v
            .get("base_models")
            .and_then(|b| b.as_array())
            .ok_or_else(|| Error::invalid("stacked model JSON lacks `base_models`"))?
            .iter()
            .map(|m| registry.load(m.clone()))
            .collect::<Result<Vec<_>>>()?;
        let meta = serde_json::from_value(v.get("meta").cloned().unwrap_or_default())?;
        Ok(StackedModel {
            base_models: base,
            meta,
            decision_features: v.get("decision_features").and_then(|d| d.as_bool()).unwrap_or(false),
        })
    }
}
