//! Classical baseline classifiers behind a shared [`Classifier`] trait and
//! a name-keyed registry.

use rand::RngExt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::seed;
use crate::svm::{Kernel, Label, TrainingSet};

pub trait Classifier: Send + Sync {
    fn kind(&self) -> &'static str;
    fn dim(&self) -> usize;
    /// Real-valued score; its sign is the label, with 0 mapping to +1.
    fn decision_value(&self, x: &[f64]) -> Result<f64>;
    fn predict(&self, x: &[f64]) -> Result<Label> {
        Ok(Label::from_score(self.decision_value(x)?))
    }
    fn to_json(&self) -> Result<serde_json::Value>;
}

/// Hyperparameters for every kind; each fit reads only its own fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineParams {
    pub knn_k: usize,
    pub nb_var_floor: f64,
    /// Inverse L2 strength.
    pub logistic_c: f64,
    pub logistic_tol: f64,
    pub logistic_max_iter: usize,
    pub tree_max_depth: usize,
    pub forest_trees: usize,
    pub forest_max_depth: usize,
    pub svm_c: f64,
    pub svm_tol: f64,
    pub svm_max_sweeps: usize,
    /// `None` uses `1/d`.
    pub rbf_gamma: Option<f64>,
}

impl Default for BaselineParams {
    fn default() -> Self {
        BaselineParams {
            knn_k: 3,
            nb_var_floor: 1e-9,
            logistic_c: 1.0,
            logistic_tol: 1e-6,
            logistic_max_iter: 10_000,
            tree_max_depth: 8,
            forest_trees: 50,
            forest_max_depth: 4,
            svm_c: 1.0,
            svm_tol: 1e-4,
            svm_max_sweeps: 100_000,
            rbf_gamma: None,
        }
    }
}

fn require_both(train: &TrainingSet, kind: &str) -> Result<()> {
    if !train.has_both_classes() {
        return Err(Error::invalid(format!("{kind} needs both classes in the training set")));
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    pub k: usize,
    pub samples: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
}

impl Knn {
    pub fn fit(k: usize, train: &TrainingSet) -> Result<Self> {
        require_both(train, "knn")?;
        if k == 0 {
            return Err(Error::invalid("knn needs k ≥ 1"));
        }
        Ok(Knn {
            k,
            samples: train.samples().to_vec(),
            labels: train.labels().to_vec(),
        })
    }
}

impl Classifier for Knn {
    fn kind(&self) -> &'static str {
        "knn"
    }

    fn dim(&self) -> usize {
        self.samples[0].len()
    }

    /// Sum of the neighbours' labels; distance ties go to the earlier sample.
    fn decision_value(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let mut d: Vec<(f64, usize)> = self.samples.iter().enumerate().map(|(i, s)| (sq_dist(s, x), i)).collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(d.iter().take(self.k).map(|&(_, i)| self.labels[i].value()).sum())
    }

    fn to_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub log_prior: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    pub dim: usize,
    pub positive: Option<ClassStats>,
    pub negative: Option<ClassStats>,
}

impl GaussianNb {
    /// A class absent from `train` gets no statistics and is never predicted.
    pub fn fit(var_floor: f64, train: &TrainingSet) -> Result<Self> {
        let n = train.len() as f64;
        let d = train.dim();
        let stats = |label: Label| -> Option<ClassStats> {
            let xs: Vec<&Vec<f64>> = train
                .samples()
                .iter()
                .zip(train.labels())
                .filter(|(_, &l)| l == label)
                .map(|(x, _)| x)
                .collect();
            if xs.is_empty() {
                return None;
            }
            let m = xs.len() as f64;
            let mean: Vec<f64> = (0..d).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / m).collect();
            let var = (0..d)
                .map(|j| (xs.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / m).max(var_floor))
                .collect();
            Some(ClassStats {
                log_prior: (m / n).ln(),
                mean,
                var,
            })
        };
        if train.is_empty() {
            return Err(Error::invalid("naive Bayes needs at least one sample"));
        }
        Ok(GaussianNb {
            dim: d,
            positive: stats(Label::Positive),
            negative: stats(Label::Negative),
        })
    }

    fn log_joint(c: &ClassStats, x: &[f64]) -> f64 {
        c.log_prior
            + x.iter()
                .zip(c.mean.iter().zip(&c.var))
                .map(|(v, (m, s2))| -0.5 * ((2.0 * std::f64::consts::PI * s2).ln() + (v - m).powi(2) / s2))
                .sum::<f64>()
    }
}

impl Classifier for GaussianNb {
    fn kind(&self) -> &'static str {
        "gaussian_nb"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    /// Log posterior odds of the positive class.
    fn decision_value(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(match (&self.positive, &self.negative) {
            (Some(p), Some(n)) => Self::log_joint(p, x) - Self::log_joint(n, x),
            (Some(_), None) => 1.0,
            (None, Some(_)) => -1.0,
            (None, None) => 0.0,
        })
    }

    fn to_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}

/// L2-regularized logistic regression fitted by gradient descent on
/// `½‖w‖² + C·Σ log(1 + exp(−yᵢ(w·xᵢ + b)))`; the bias is unpenalized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
}

impl LogisticRegression {
    pub fn fit(c: f64, tol: f64, max_iter: usize, train: &TrainingSet) -> Result<Self> {
        require_both(train, "logistic regression")?;
        if !(c > 0.0) {
            return Err(Error::invalid("logistic C must be positive"));
        }
        let d = train.dim();
        let max_sq = train.samples().iter().map(|x| dot(x, x) + 1.0).sum::<f64>();
        // Lipschitz bound of the gradient.
        let step = 1.0 / (1.0 + 0.25 * c * max_sq);
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        let mut iterations = 0;
        for it in 0..max_iter {
            let mut gw = w.clone();
            let mut gb = 0.0;
            for (x, &l) in train.samples().iter().zip(train.labels()) {
                let y = l.value();
                let margin = y * (dot(&w, x) + b);
                // −y·σ(−margin)
                let coef = -y * c / (1.0 + margin.exp());
                for (g, v) in gw.iter_mut().zip(x) {
                    *g += coef * v;
                }
                gb += coef;
            }
            let norm = (dot(&gw, &gw) + gb * gb).sqrt();
            iterations = it + 1;
            if norm < tol {
                break;
            }
            for (wi, g) in w.iter_mut().zip(&gw) {
                *wi -= step * g;
            }
            b -= step * gb;
        }
        Ok(LogisticRegression {
            weights: w,
            bias: b,
            iterations,
        })
    }
}

impl Classifier for LogisticRegression {
    fn kind(&self) -> &'static str {
        "logistic_regression"
    }

    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn decision_value(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(dot(&self.weights, x) + self.bias)
    }

    fn to_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    /// `score` is the positive-minus-negative fraction of the leaf.
    Leaf { score: f64 },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

/// CART with Gini impurity. Ties between candidate splits go to the lower
/// feature index, then the lower threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub dim: usize,
    pub root: TreeNode,
}

fn gini(pos: f64, total: f64) -> f64 {
    if total == 0.0 {
        return 0.0;
    }
    let p = pos / total;
    2.0 * p * (1.0 - p)
}

impl DecisionTree {
    pub fn fit(max_depth: usize, train: &TrainingSet) -> Result<Self> {
        require_both(train, "decision tree")?;
        let idx: Vec<usize> = (0..train.len()).collect();
        let features: Vec<usize> = (0..train.dim()).collect();
        Ok(DecisionTree {
            dim: train.dim(),
            root: grow(train, &idx, max_depth, &mut |_| features.clone()),
        })
    }

    fn leaf_score(&self, x: &[f64]) -> f64 {
        let mut node = &self.root;
        loop {
            match node {
                TreeNode::Leaf { score } => return *score,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }
}

/// `features(depth)` returns the candidate features for one node.
fn grow(
    train: &TrainingSet,
    idx: &[usize],
    depth_left: usize,
    features: &mut dyn FnMut(usize) -> Vec<usize>,
) -> TreeNode {
    let n = idx.len() as f64;
    let pos = idx.iter().filter(|&&i| train.label(i) == Label::Positive).count() as f64;
    let leaf = TreeNode::Leaf {
        score: (2.0 * pos - n) / n.max(1.0),
    };
    if depth_left == 0 || pos == 0.0 || pos == n || idx.len() < 2 {
        return leaf;
    }
    let parent = gini(pos, n);
    let mut best: Option<(f64, usize, f64)> = None;
    for f in features(depth_left) {
        let mut vals: Vec<(f64, bool)> = idx
            .iter()
            .map(|&i| (train.sample(i)[f], train.label(i) == Label::Positive))
            .collect();
        vals.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left_pos = 0.0;
        for k in 0..vals.len() - 1 {
            if vals[k].1 {
                left_pos += 1.0;
            }
            if vals[k].0 == vals[k + 1].0 {
                continue;
            }
            let nl = (k + 1) as f64;
            let nr = n - nl;
            let impurity = (nl * gini(left_pos, nl) + nr * gini(pos - left_pos, nr)) / n;
            let gain = parent - impurity;
            if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g + 1e-12) {
                best = Some((gain, f, 0.5 * (vals[k].0 + vals[k + 1].0)));
            }
        }
    }
    let Some((_, feature, threshold)) = best else {
        return leaf;
    };
    let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| train.sample(i)[feature] <= threshold);
    TreeNode::Split {
        feature,
        threshold,
        left: Box::new(grow(train, &l, depth_left - 1, features)),
        right: Box::new(grow(train, &r, depth_left - 1, features)),
    }
}

impl Classifier for DecisionTree {
    fn kind(&self) -> &'static str {
        "decision_tree"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn decision_value(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(self.leaf_score(x))
    }

    fn to_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}

/// Bagged CART trees with `⌊√d⌋` candidate features per node. The score is
/// the mean of the trees' ±1 votes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
}

impl RandomForest {
    pub fn fit(n_trees: usize, max_depth: usize, train: &TrainingSet, seed: u64) -> Result<Self> {
        require_both(train, "random forest")?;
        if n_trees == 0 {
            return Err(Error::invalid("random forest needs at least one tree"));
        }
        let d = train.dim();
        let m = ((d as f64).sqrt().floor() as usize).clamp(1, d);
        let trees = (0..n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = seed::rng(seed::derive_seed(seed, &[t as u64]));
                let idx: Vec<usize> = (0..train.len()).map(|_| rng.random_range(0..train.len())).collect();
                let mut pick = |_: usize| -> Vec<usize> {
                    let mut all: Vec<usize> = (0..d).collect();
                    for i in 0..m {
                        let j = rng.random_range(i..d);
                        all.swap(i, j);
                    }
                    let mut chosen = all[..m].to_vec();
                    chosen.sort_unstable();
                    chosen
                };
                DecisionTree {
                    dim: d,
                    root: grow(train, &idx, max_depth, &mut pick),
                }
            })
            .collect();
        Ok(RandomForest { trees })
    }
}

impl Classifier for RandomForest {
    fn kind(&self) -> &'static str {
        "random_forest"
    }

    fn dim(&self) -> usize {
        self.trees[0].dim
    }

    fn decision_value(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let votes: f64 = self
            .trees
            .iter()
            .map(|t| Label::from_score(t.leaf_score(x)).value())
            .sum();
        Ok(votes / self.trees.len() as f64)
    }

    fn to_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}

/// Soft-margin SVM solved in the dual by coordinate ascent, with the bias
/// absorbed into the kernel as `k(x, x′) + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSvm {
    pub kernel: Kernel,
    pub alphas: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
    pub bias: f64,
    pub sweeps: usize,
}

impl KernelSvm {
    pub fn fit(kernel: Kernel, c: f64, tol: f64, max_sweeps: usize, train: &TrainingSet) -> Result<Self> {
        require_both(train, "svm")?;
        if !(c > 0.0) {
            return Err(Error::invalid("svm C must be positive"));
        }
        let n = train.len();
        let g = train.gram(&kernel);
        let y: Vec<f64> = train.labels().iter().map(|l| l.value()).collect();
        let q = |i: usize, j: usize| y[i] * y[j] * (g[i][j] + 1.0);
        let mut alpha = vec![0.0f64; n];
        // grad[i] = (Qα)ᵢ − 1
        let mut grad = vec![-1.0f64; n];
        let mut sweeps = 0;
        while sweeps < max_sweeps {
            sweeps += 1;
            let mut worst = 0.0f64;
            for i in 0..n {
                let pg = if alpha[i] <= 0.0 {
                    grad[i].min(0.0)
                } else if alpha[i] >= c {
                    grad[i].max(0.0)
                } else {
                    grad[i]
                };
                worst = worst.max(pg.abs());
                if pg.abs() < 1e-15 {
                    continue;
                }
                let qii = q(i, i);
                if qii <= 0.0 {
                    continue;
                }
                let old = alpha[i];
                alpha[i] = (old - grad[i] / qii).clamp(0.0, c);
                let diff = alpha[i] - old;
                if diff != 0.0 {
                    for (j, gj) in grad.iter_mut().enumerate() {
                        *gj += diff * q(i, j);
                    }
                }
            }
            if worst < tol {
                break;
            }
        }
        let bias = alpha.iter().zip(&y).map(|(a, y)| a * y).sum();
        Ok(KernelSvm {
            kernel,
            alphas: alpha,
            samples: train.samples().to_vec(),
            labels: train.labels().to_vec(),
            bias,
            sweeps,
        })
    }

    /// Largest projected-gradient magnitude on the training set.
    pub fn kkt_residual(&self, c: f64) -> f64 {
        (0..self.alphas.len())
            .map(|i| {
                let f = self.decision_value(&self.samples[i]).expect("own sample");
                let g = self.labels[i].value() * f - 1.0;
                if self.alphas[i] <= 0.0 {
                    g.min(0.0).abs()
                } else if self.alphas[i] >= c {
                    g.max(0.0)
                } else {
                    g.abs()
                }
            })
            .fold(0.0, f64::max)
    }
}

impl Classifier for KernelSvm {
    fn kind(&self) -> &'static str {
        match self.kernel {
            Kernel::Linear { .. } => "svm_linear",
            Kernel::Rbf { .. } => "svm_rbf",
        }
    }

    fn dim(&self) -> usize {
        self.samples[0].len()
    }

    fn decision_value(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let mut f = self.bias;
        for ((a, s), l) in self.alphas.iter().zip(&self.samples).zip(&self.labels) {
            if *a != 0.0 {
                f += a * l.value() * self.kernel.eval(s, x)?;
            }
        }
        Ok(f)
    }

    fn to_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}

type FitFn = fn(&BaselineParams, &TrainingSet, u64) -> Result<Box<dyn Classifier>>;
type LoadFn = fn(serde_json::Value) -> Result<Box<dyn Classifier>>;

pub struct BaselineEntry {
    pub name: &'static str,
    pub aliases: &'static [&'static str],
    pub fit: FitFn,
    pub load: LoadFn,
}

fn load<T: Classifier + serde::de::DeserializeOwned + 'static>(v: serde_json::Value) -> Result<Box<dyn Classifier>> {
    Ok(Box::new(serde_json::from_value::<T>(v)?))
}

/// Name → fit/load functions for every baseline kind.
pub struct BaselineRegistry {
    entries: Vec<BaselineEntry>,
}

impl Default for BaselineRegistry {
    fn default() -> Self {
        let entries = vec![
            BaselineEntry {
                name: "knn",
                aliases: &["k_nearest_neighbors"],
                fit: |p, t, _| Ok(Box::new(Knn::fit(p.knn_k, t)?)),
                load: load::<Knn>,
            },
            BaselineEntry {
                name: "gaussian_nb",
                aliases: &["naive_bayes", "nb"],
                fit: |p, t, _| Ok(Box::new(GaussianNb::fit(p.nb_var_floor, t)?)),
                load: load::<GaussianNb>,
            },
            BaselineEntry {
                name: "logistic_regression",
                aliases: &["logreg", "lr"],
                fit: |p, t, _| {
                    Ok(Box::new(LogisticRegression::fit(
                        p.logistic_c,
                        p.logistic_tol,
                        p.logistic_max_iter,
                        t,
                    )?))
                },
                load: load::<LogisticRegression>,
            },
            BaselineEntry {
                name: "decision_tree",
                aliases: &["tree", "cart"],
                fit: |p, t, _| Ok(Box::new(DecisionTree::fit(p.tree_max_depth, t)?)),
                load: load::<DecisionTree>,
            },
            BaselineEntry {
                name: "random_forest",
                aliases: &["forest", "rf"],
                fit: |p, t, s| Ok(Box::new(RandomForest::fit(p.forest_trees, p.forest_max_depth, t, s)?)),
                load: load::<RandomForest>,
            },
            BaselineEntry {
                name: "svm_linear",
                aliases: &["linear_svm"],
                fit: |p, t, _| Ok(Box::new(KernelSvm::fit(Kernel::linear(), p.svm_c, p.svm_tol, p.svm_max_sweeps, t)?)),
                load: load::<KernelSvm>,
            },
            BaselineEntry {
                name: "svm_rbf",
                aliases: &["rbf_svm"],
                fit: |p, t, _| {
                    let gamma = p.rbf_gamma.unwrap_or(1.0 / t.dim().max(1) as f64);
                    Ok(Box::new(KernelSvm::fit(Kernel::Rbf { gamma }, p.svm_c, p.svm_tol, p.svm_max_sweeps, t)?))
                },
                load: load::<KernelSvm>,
            },
        ];
        BaselineRegistry { entries }
    }
}

impl BaselineRegistry {
    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name).collect()
    }

    pub fn get(&self, name: &str) -> Result<&BaselineEntry> {
        let key = name.to_ascii_lowercase();
        self.entries
            .iter()
            .find(|e| e.name == key || e.aliases.contains(&key.as_str()))
            .ok_or_else(|| Error::Unknown {
                what: "baseline",
                name: name.to_string(),
            })
    }

    pub fn fit(&self, name: &str, params: &BaselineParams, train: &TrainingSet, seed: u64) -> Result<Box<dyn Classifier>> {
        (self.get(name)?.fit)(params, train, seed)
    }

    /// Serializes as `{"kind": ..., "model": ...}`.
    pub fn save(&self, model: &dyn Classifier) -> Result<serde_json::Value> {
        Ok(serde_json::json!({ "kind": model.kind(), "model": model.to_json()? }))
    }

    pub fn load(&self, v: serde_json::Value) -> Result<Box<dyn Classifier>> {
        let kind = v
            .get("kind")
            .and_then(|k| k.as_str())
            .ok_or_else(|| Error::invalid("model JSON lacks `kind`"))?
            .to_string();
        let model = v.get("model").cloned().ok_or_else(|| Error::invalid("model JSON lacks `model`"))?;
        (self.get(&kind)?.load)(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};
    use Label::{Negative as N, Positive as P};

    fn blobs(n_per: usize, sep: f64, seed: u64) -> TrainingSet {
        let mut rng = seed::rng(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..2 * n_per {
            let (c, l) = if i % 2 == 0 { (sep / 2.0, P) } else { (-sep / 2.0, N) };
            xs.push(vec![c + noise.sample(&mut rng), noise.sample(&mut rng)]);
            ys.push(l);
        }
        TrainingSet::new(xs, ys).unwrap()
    }

    fn square() -> TrainingSet {
        TrainingSet::new(
            vec![vec![1.0, 1.0], vec![2.0, 0.5], vec![-1.0, -1.0], vec![-0.5, -2.0]],
            vec![P, P, N, N],
        )
        .unwrap()
    }

    #[test]
    fn knn_examples() {
        let t = blobs(10, 1.0, 3);
        let m = Knn::fit(1, &t).unwrap();
        for i in 0..t.len() {
            assert_eq!(m.predict(t.sample(i)).unwrap(), t.label(i));
        }
    }

    #[test]
    fn naive_bayes_separates_far_blobs() {
        let train = blobs(10, 10.0, 1);
        let test = blobs(50, 10.0, 2);
        let m = GaussianNb::fit(1e-9, &train).unwrap();
        for i in 0..test.len() {
            assert_eq!(m.predict(test.sample(i)).unwrap(), test.label(i));
        }
        let one = TrainingSet::unchecked(vec![vec![1.0], vec![2.0]], vec![N, N]).unwrap();
        let m = GaussianNb::fit(1e-9, &one).unwrap();
        assert_eq!(m.predict(&[100.0]).unwrap(), N);
    }

    #[test]
    fn single_class_is_rejected_by_discriminative_kinds() {
        let one = TrainingSet::unchecked(vec![vec![1.0], vec![2.0]], vec![P, P]).unwrap();
        let reg = BaselineRegistry::default();
        for name in reg.names() {
            let r = reg.fit(name, &BaselineParams::default(), &one, 0);
            assert_eq!(r.is_ok(), name == "gaussian_nb", "{name}");
        }
    }

    #[test]
    fn linear_svm_satisfies_kkt() {
        let t = square();
        let m = KernelSvm::fit(Kernel::linear(), 1.0, 1e-4, 100_000, &t).unwrap();
        for i in 0..t.len() {
            assert_eq!(m.predict(t.sample(i)).unwrap(), t.label(i));
        }
        assert!(m.kkt_residual(1.0) < 1e-4);
        for (i, a) in m.alphas.iter().enumerate() {
            let margin = t.label(i).value() * m.decision_value(t.sample(i)).unwrap();
            assert!(margin >= 1.0 - 1e-4 || *a >= 1.0 - 1e-12);
        }
    }

    #[test]
    fn zero_logistic_model_predicts_positive() {
        let m = LogisticRegression {
            weights: vec![0.0; 3],
            bias: 0.0,
            iterations: 0,
        };
        assert_eq!(m.predict(&[1.0, -4.0, 2.0]).unwrap(), P);
        let fitted = LogisticRegression::fit(1.0, 1e-6, 10_000, &blobs(10, 6.0, 4)).unwrap();
        assert!(fitted.weights[0] > 0.0);
    }

    #[test]
    fn identical_trees_vote_like_one() {
        let t = blobs(8, 2.0, 6);
        let tree = DecisionTree::fit(3, &t).unwrap();
        let forest = RandomForest {
            trees: vec![tree.clone(); 5],
        };
        for x in blobs(20, 2.0, 7).samples() {
            assert_eq!(forest.predict(x).unwrap(), tree.predict(x).unwrap());
        }
    }

    #[test]
    fn tree_fits_training_data() {
        let t = blobs(10, 1.0, 8);
        let tree = DecisionTree::fit(20, &t).unwrap();
        for i in 0..t.len() {
            assert_eq!(tree.predict(t.sample(i)).unwrap(), t.label(i));
        }
    }

    #[test]
    fn deterministic_and_serializable() {
        let reg = BaselineRegistry::default();
        let t = blobs(6, 2.0, 9);
        let params = BaselineParams::default();
        let probe = blobs(10, 2.0, 10);
        for name in reg.names() {
            let a = reg.fit(name, &params, &t, 5).unwrap();
            let b = reg.fit(name, &params, &t, 5).unwrap();
            let back = reg.load(reg.save(a.as_ref()).unwrap()).unwrap();
            assert_eq!(back.kind(), name);
            for x in probe.samples() {
                let v = a.decision_value(x).unwrap();
                assert_eq!(v, b.decision_value(x).unwrap());
                assert_eq!(v, back.decision_value(x).unwrap());
            }
        }
        assert_eq!(reg.get("NB").unwrap().name, "gaussian_nb");
        assert!(reg.get("xgboost").is_err());
    }

    #[test]
    fn feature_permutation_consistency() {
        let t = TrainingSet::new(
            blobs(6, 2.0, 11).samples().iter().map(|x| vec![x[0], x[1], x[0] - x[1]]).collect(),
            blobs(6, 2.0, 11).labels().to_vec(),
        )
        .unwrap();
        let perm = [2, 0, 1];
        let permute = |x: &[f64]| perm.iter().map(|&j| x[j]).collect::<Vec<_>>();
        let tp = TrainingSet::new(t.samples().iter().map(|x| permute(x)).collect(), t.labels().to_vec()).unwrap();
        let reg = BaselineRegistry::default();
        let probe = blobs(15, 2.0, 12);
        for name in ["knn", "gaussian_nb", "svm_linear"] {
            let a = reg.fit(name, &BaselineParams::default(), &t, 0).unwrap();
            let b = reg.fit(name, &BaselineParams::default(), &tp, 0).unwrap();
            for x in probe.samples() {
                let x3 = vec![x[0], x[1], x[0] - x[1]];
                assert_eq!(a.predict(&x3).unwrap(), b.predict(&permute(&x3)).unwrap(), "{name}");
            }
        }
    }
}
