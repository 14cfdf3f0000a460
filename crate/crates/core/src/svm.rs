//! QUBO formulation of SVM dual training and decoding of sampled bitstrings
//! into classifiers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::qubo::{Bitstring, QuboMatrix};

/// Binary class label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    /// Sign rule shared by every classifier: zero maps to `Positive`.
    pub fn from_score(score: f64) -> Label {
        if score >= 0.0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Positive => Label::Negative,
            Label::Negative => Label::Positive,
        }
    }
}

impl TryFrom<i8> for Label {
    type Error = Error;

    fn try_from(v: i8) -> Result<Self> {
        match v {
            1 => Ok(Label::Positive),
            -1 => Ok(Label::Negative),
            other => Err(Error::invalid(format!("label must be +1 or -1, got {other}"))),
        }
    }
}

impl From<Label> for i8 {
    fn from(l: Label) -> i8 {
        match l {
            Label::Positive => 1,
            Label::Negative => -1,
        }
    }
}

/// Kernel function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    /// `scale · ⟨x1, x2⟩`. `scale = 1` is the plain dot product.
    Linear {
        #[serde(default = "one")]
        scale: f64,
    },
    /// `exp(−γ‖x1 − x2‖²)`.
    Rbf { gamma: f64 },
}

fn one() -> f64 {
    1.0
}

impl Default for Kernel {
    fn default() -> Self {
        Kernel::Linear { scale: 1.0 }
    }
}

impl Kernel {
    pub fn linear() -> Self {
        Kernel::Linear { scale: 1.0 }
    }

    pub fn eval(&self, x1: &[f64], x2: &[f64]) -> Result<f64> {
        check_dim(x1.len(), x2.len())?;
        Ok(self.eval_unchecked(x1, x2))
    }

    pub(crate) fn eval_unchecked(&self, x1: &[f64], x2: &[f64]) -> f64 {
        match *self {
            Kernel::Linear { scale } => scale * x1.iter().zip(x2).map(|(a, b)| a * b).sum::<f64>(),
            Kernel::Rbf { gamma } => {
                let d2: f64 = x1.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Linear { scale } if *scale == 1.0 => write!(f, "linear"),
            Kernel::Linear { scale } => write!(f, "linear:{scale}"),
            Kernel::Rbf { gamma } => write!(f, "rbf:{gamma}"),
        }
    }
}

impl FromStr for Kernel {
    type Err = Error;

    /// Accepts `linear`, `linear:<scale>` and `rbf:<gamma>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, param) = match s.split_once(':') {
            Some((k, p)) => (k, Some(p)),
            None => (s, None),
        };
        let num = |p: Option<&str>, default: Option<f64>| -> Result<f64> {
            match (p, default) {
                (Some(p), _) => p
                    .trim()
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad kernel parameter `{p}`"))),
                (None, Some(d)) => Ok(d),
                (None, None) => Err(Error::invalid(format!("kernel `{kind}` needs a parameter"))),
            }
        };
        match kind.trim() {
            "linear" => Ok(Kernel::Linear {
                scale: num(param, Some(1.0))?,
            }),
            "rbf" => Ok(Kernel::Rbf {
                gamma: num(param, None)?,
            }),
            other => Err(Error::Unknown {
                what: "kernel",
                name: other.to_string(),
            }),
        }
    }
}

/// Labeled feature vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrainingSetJson")]
pub struct TrainingSet {
    samples: Vec<Vec<f64>>,
    labels: Vec<Label>,
}

#[derive(Deserialize)]
struct TrainingSetJson {
    samples: Vec<Vec<f64>>,
    labels: Vec<Label>,
}

impl TryFrom<TrainingSetJson> for TrainingSet {
    type Error = Error;
    fn try_from(j: TrainingSetJson) -> Result<Self> {
        TrainingSet::unchecked(j.samples, j.labels)
    }
}

impl TrainingSet {
    /// Requires at least two samples of consistent dimension and both classes.
    pub fn new(samples: Vec<Vec<f64>>, labels: Vec<Label>) -> Result<Self> {
        let set = TrainingSet::unchecked(samples, labels)?;
        if set.len() < 2 {
            return Err(Error::invalid("a training set needs at least 2 samples"));
        }
        if !set.has_both_classes() {
            return Err(Error::invalid("a training set needs samples of both classes"));
        }
        Ok(set)
    }

    /// Only checks shape; used for validation and test sets, which may hold a
    /// single class.
    pub fn unchecked(samples: Vec<Vec<f64>>, labels: Vec<Label>) -> Result<Self> {
        check_dim(samples.len(), labels.len())?;
        if let Some(first) = samples.first() {
            for s in &samples {
                check_dim(first.len(), s.len())?;
            }
        }
        if samples.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature values must be finite"));
        }
        Ok(TrainingSet { samples, labels })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i]
    }

    pub fn label(&self, i: usize) -> Label {
        self.labels[i]
    }

    pub fn has_both_classes(&self) -> bool {
        self.labels.contains(&Label::Positive) && self.labels.contains(&Label::Negative)
    }

    pub fn with_flipped_labels(&self) -> TrainingSet {
        TrainingSet {
            samples: self.samples.clone(),
            labels: self.labels.iter().map(|l| l.flipped()).collect(),
        }
    }

    /// Returns a copy with rows reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> TrainingSet {
        TrainingSet {
            samples: order.iter().map(|&i| self.samples[i].clone()).collect(),
            labels: order.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn gram(&self, kernel: &Kernel) -> Vec<Vec<f64>> {
        self.samples
            .iter()
            .map(|a| self.samples.iter().map(|b| kernel.eval_unchecked(a, b)).collect())
            .collect()
    }
}

/// Binary encoding of the dual variables plus the penalty multiplier and kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodingConfig {
    /// Base `B` of the place values `B^k`.
    pub base: f64,
    /// Bits per coefficient `K`.
    pub bits_per_alpha: usize,
    /// Multiplier `ξ` of the equality-constraint penalty.
    pub xi: f64,
    pub kernel: Kernel,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig {
            base: 2.0,
            bits_per_alpha: 2,
            xi: 1.0,
            kernel: Kernel::linear(),
        }
    }
}

impl EncodingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base > 0.0 && self.base.is_finite()) {
            return Err(Error::invalid("encoding base must be positive and finite"));
        }
        if self.bits_per_alpha == 0 {
            return Err(Error::invalid("bits_per_alpha must be at least 1"));
        }
        if !(self.xi >= 0.0 && self.xi.is_finite()) {
            return Err(Error::invalid("xi must be non-negative"));
        }
        if !self.c_enc().is_finite() {
            return Err(Error::invalid("encoding cap overflows"));
        }
        Ok(())
    }

    /// Largest representable coefficient, `Σ_{k<K} B^k`.
    pub fn c_enc(&self) -> f64 {
        (0..self.bits_per_alpha).map(|k| self.place(k)).sum()
    }

    fn place(&self, k: usize) -> f64 {
        self.base.powi(k as i32)
    }

    pub fn qubo_dim(&self, n: usize) -> usize {
        self.bits_per_alpha * n
    }
}

/// Builds the `KN × KN` QUBO of the SVM dual:
/// `Q̃[Kn+k, Km+j] = ½ B^{k+j} yₙ yₘ (k(xₙ,xₘ) + ξ) − δₙₘ δₖⱼ B^k`,
/// returned symmetrized.
pub fn build_qubo(train: &TrainingSet, cfg: &EncodingConfig) -> Result<QuboMatrix> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let n = train.len();
    let k = cfg.bits_per_alpha;
    let gram = train.gram(&cfg.kernel);
    let dim = k * n;
    let mut q = QuboMatrix::zeros(dim);
    for a in 0..n {
        let ya = train.label(a).value();
        for b in 0..n {
            let yb = train.label(b).value();
            let coupling = 0.5 * ya * yb * (gram[a][b] + cfg.xi);
            for ka in 0..k {
                for kb in 0..k {
                    let mut v = cfg.place(ka + kb) * coupling;
                    if a == b && ka == kb {
                        v -= cfg.place(ka);
                    }
                    q.set(k * a + ka, k * b + kb, v);
                }
            }
        }
    }
    Ok(q.symmetrize())
}

/// `αₙ = Σₖ B^k a[Kn+k]`.
pub fn decode_alphas(a: &Bitstring, cfg: &EncodingConfig, n: usize) -> Result<Vec<f64>> {
    let k = cfg.bits_per_alpha;
    check_dim(k * n, a.len())?;
    Ok(a.bits()
        .chunks(k)
        .map(|block| {
            block
                .iter()
                .enumerate()
                .map(|(j, &bit)| bit as f64 * cfg.place(j))
                .sum()
        })
        .collect())
}

fn residuals(alphas: &[f64], train: &TrainingSet, kernel: &Kernel) -> Vec<f64> {
    let gram = train.gram(kernel);
    (0..train.len())
        .map(|n| {
            let s: f64 = (0..train.len())
                .map(|m| alphas[m] * train.label(m).value() * gram[n][m])
                .sum();
            train.label(n).value() - s
        })
        .collect()
}

/// Bias from the box-weighted average of residuals
/// `b = Σ αₙ(C−αₙ)[yₙ − Σₘ αₘyₘk(xₙ,xₘ)] / Σ αₙ(C−αₙ)`.
///
/// When no coefficient lies strictly inside `(0, C)` the denominator vanishes;
/// the bias is then the mean residual over samples with `αₙ > 0`, or zero
/// when every coefficient is zero.
pub fn compute_bias(alphas: &[f64], train: &TrainingSet, kernel: &Kernel, c: f64) -> Result<f64> {
    check_dim(train.len(), alphas.len())?;
    let res = residuals(alphas, train, kernel);
    let weights: Vec<f64> = alphas.iter().map(|&a| a * (c - a)).collect();
    let denom: f64 = weights.iter().sum();
    if denom.abs() > 1e-12 {
        let num: f64 = weights.iter().zip(&res).map(|(w, r)| w * r).sum();
        return Ok(num / denom);
    }
    let support: Vec<f64> = alphas
        .iter()
        .zip(&res)
        .filter(|(&a, _)| a > 0.0)
        .map(|(_, &r)| r)
        .collect();
    if support.is_empty() {
        Ok(0.0)
    } else {
        Ok(support.iter().sum::<f64>() / support.len() as f64)
    }
}

/// Kernel classifier `f(x) = Σₙ αₙ yₙ k(xₙ, x) + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub alphas: Vec<f64>,
    pub bias: f64,
    pub kernel: Kernel,
    pub support_samples: TrainingSet,
}

impl SvmModel {
    pub fn new(alphas: Vec<f64>, bias: f64, kernel: Kernel, support_samples: TrainingSet) -> Result<Self> {
        check_dim(support_samples.len(), alphas.len())?;
        Ok(SvmModel {
            alphas,
            bias,
            kernel,
            support_samples,
        })
    }

    pub fn dim(&self) -> usize {
        self.support_samples.dim()
    }

    pub fn is_zero(&self) -> bool {
        self.alphas.iter().all(|&a| a == 0.0) && self.bias == 0.0
    }

    pub fn decision_value(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let s: f64 = self
            .alphas
            .iter()
            .enumerate()
            .filter(|(_, &a)| a != 0.0)
            .map(|(n, &a)| {
                a * self.support_samples.label(n).value()
                    * self.kernel.eval_unchecked(self.support_samples.sample(n), x)
            })
            .sum();
        Ok(s + self.bias)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Label> {
        Ok(Label::from_score(self.decision_value(x)?))
    }
}

/// Decodes a sampled bitstring into a ready classifier, using `C = C_enc`
/// for the bias.
pub fn model_from_state(a: &Bitstring, train: &TrainingSet, cfg: &EncodingConfig) -> Result<SvmModel> {
    let alphas = decode_alphas(a, cfg, train.len())?;
    let bias = compute_bias(&alphas, train, &cfg.kernel, cfg.c_enc())?;
    SvmModel::new(alphas, bias, cfg.kernel, train.clone())
}
