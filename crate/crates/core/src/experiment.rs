//! Experiment configuration, model roster and the repeated-split grid
//! runner.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendConfig, BackendRegistry, BackendRun};
use crate::baselines::{BaselineParams, BaselineRegistry};
use crate::data::{load_csv, make_splits, Dataset, Split, SplitSpec};
use crate::ensemble::{optimize_ensemble_size, rank_models, stack_predict, stack_train, RankedModels, StackConfig, VoteMode};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, evaluate, Metrics, MetricId, MetricsReport, SplitMetrics};
use crate::qubo::QuboMatrix;
use crate::seed;
use crate::svm::{build_qubo, EncodingConfig, Kernel, Label, TrainingSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub label_column: String,
    pub positive_label: String,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            path: PathBuf::from("data/breast_cancer.csv"),
            label_column: "diagnosis".into(),
            positive_label: "benign".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub pool_fraction: f64,
    pub train_sizes: Vec<usize>,
    pub repeats: usize,
    pub stratified: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            pool_fraction: 0.6,
            train_sizes: vec![6, 7, 8],
            repeats: 10,
            stratified: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub metric: MetricId,
    pub max_models: usize,
    pub vote_mode: VoteMode,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            metric: MetricId::F1,
            max_models: crate::ensemble::DEFAULT_MAX_MODELS,
            vote_mode: VoteMode::DecisionValue,
        }
    }
}

/// Complete, serializable description of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output: PathBuf,
    pub dataset: DatasetConfig,
    pub protocol: ProtocolConfig,
    pub encoding: EncodingConfig,
    /// Scale the linear kernel by `1/d` so Gram entries stay O(1) whatever
    /// the feature count.
    pub normalize_kernel: bool,
    /// Backend for roster entries that do not name one.
    pub backend: String,
    pub shots: u64,
    pub backends: BackendConfig,
    pub baselines: BaselineParams,
    pub ensemble: EnsembleConfig,
    pub stack: StackConfig,
    pub stack_bases: Vec<String>,
    pub roster: Vec<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            output: PathBuf::from("runs/latest"),
            dataset: DatasetConfig::default(),
            protocol: ProtocolConfig::default(),
            encoding: EncodingConfig::default(),
            normalize_kernel: true,
            backend: "brute_force".into(),
            shots: 1000,
            backends: BackendConfig::default(),
            baselines: BaselineParams::default(),
            ensemble: EnsembleConfig::default(),
            stack: StackConfig::default(),
            stack_bases: ["gaussian_nb", "random_forest", "logistic_regression", "knn"]
                .map(String::from)
                .to_vec(),
            roster: ["knn", "svm_linear", "qubo_svm", "qubo_svm opt"].map(String::from).to_vec(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoding.validate()?;
        if self.protocol.train_sizes.is_empty() || self.protocol.repeats == 0 {
            return Err(Error::invalid("need at least one train size and one repeat"));
        }
        if self.shots == 0 {
            return Err(Error::invalid("shots must be positive"));
        }
        if self.stack_bases.len() < 2 {
            return Err(Error::invalid("stacking needs at least two base models"));
        }
        let baselines = BaselineRegistry::default();
        for b in &self.stack_bases {
            baselines.get(b)?;
        }
        BackendRegistry::default().canonical(&self.backend)?;
        for id in &self.roster {
            self.parse_model(id)?;
        }
        self.backends.noise.check()?;
        self.backends.constraints.check()?;
        Ok(())
    }

    pub fn parse_model(&self, id: &str) -> Result<ModelSpec> {
        ModelSpec::parse(id, &self.backend, self.shots)
    }

    pub fn roster_specs(&self) -> Result<Vec<ModelSpec>> {
        self.roster.iter().map(|id| self.parse_model(id)).collect()
    }

    pub fn split_spec(&self, train_size: usize) -> SplitSpec {
        SplitSpec {
            pool_fraction: self.protocol.pool_fraction,
            train_size,
            repeats: self.protocol.repeats,
            seed: self.seed,
            stratified: self.protocol.stratified,
        }
    }

    /// Encoding with the kernel scale resolved for `d` features.
    pub fn encoding_for(&self, d: usize) -> EncodingConfig {
        let mut enc = self.encoding.clone();
        if self.normalize_kernel {
            if let Kernel::Linear { .. } = enc.kernel {
                enc.kernel = Kernel::Linear {
                    scale: 1.0 / d.max(1) as f64,
                };
            }
        }
        enc
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        load_csv(&self.dataset.path, &self.dataset.label_column, &self.dataset.positive_label)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuboVariant {
    /// Most frequent state.
    Top,
    /// Average voting over a validation-optimized prefix of ranked states.
    Opt,
    /// Meta-model over classical base predictions.
    Stack,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelSpec {
    Baseline { name: String },
    Qubo { backend: String, shots: u64, variant: QuboVariant },
}

/// Default shot counts for the noisy roster entries without a number.
const NOISY_SHOTS: u64 = 1000;
const NOISY_STACK_SHOTS: u64 = 500;

impl ModelSpec {
    /// Accepts baseline names, roster ids such as `"i"`, `"N opt 500"`,
    /// `"N stack"`, and `qubo_svm[_<backend>]` followed by optional `opt`,
    /// `stack` or shot-count tokens.
    pub fn parse(id: &str, default_backend: &str, default_shots: u64) -> Result<ModelSpec> {
        let unknown = || Error::Unknown {
            what: "model",
            name: id.to_string(),
        };
        let tokens: Vec<&str> = id.split_whitespace().collect();
        let Some(&head) = tokens.first() else {
            return Err(unknown());
        };
        if tokens.len() == 1 {
            if let Ok(e) = BaselineRegistry::default().get(head) {
                return Ok(ModelSpec::Baseline { name: e.name.to_string() });
            }
        }
        let backends = BackendRegistry::default();
        let (backend, noisy) = match head {
            "i" | "I" => ("analog_ideal".to_string(), false),
            "N" | "n" => ("analog_noisy".to_string(), true),
            "qubo_svm" => (backends.canonical(default_backend)?.to_string(), false),
            h => {
                let b = h.strip_prefix("qubo_svm_").ok_or_else(unknown)?;
                (backends.canonical(b).map_err(|_| unknown())?.to_string(), false)
            }
        };
        let mut variant = QuboVariant::Top;
        let mut shots = None;
        for &t in &tokens[1..] {
            match t {
                "opt" if variant == QuboVariant::Top => variant = QuboVariant::Opt,
                "stack" if variant == QuboVariant::Top => variant = QuboVariant::Stack,
                _ => match t.parse::<u64>() {
                    Ok(s) if s > 0 && shots.is_none() => shots = Some(s),
                    _ => return Err(unknown()),
                },
            }
        }
        let shots = shots.unwrap_or(match (noisy, variant) {
            (true, QuboVariant::Stack) => NOISY_STACK_SHOTS,
            (true, _) => NOISY_SHOTS,
            _ => default_shots,
        });
        Ok(ModelSpec::Qubo { backend, shots, variant })
    }

    pub fn is_qubo(&self) -> bool {
        matches!(self, ModelSpec::Qubo { .. })
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSpec::Baseline { name } => f.write_str(name),
            ModelSpec::Qubo { backend, shots, variant } => {
                write!(f, "qubo_svm_{backend}")?;
                match variant {
                    QuboVariant::Top => {}
                    QuboVariant::Opt => f.write_str(" opt")?,
                    QuboVariant::Stack => f.write_str(" stack")?,
                }
                write!(f, " {shots}")
            }
        }
    }
}

impl FromStr for ModelSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelSpec::parse(s, "brute_force", 1000)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    /// Roster id as written in the config.
    pub model: String,
    pub train_size: usize,
    pub repeat: usize,
    pub result: std::result::Result<CellOutcome, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub test: SplitMetrics,
    /// Test-set predictions in test-index order.
    pub predictions: Vec<Label>,
    /// Voting-prefix validation scores (`opt` variants only).
    pub validation_scores: Option<Vec<f64>>,
    pub ensemble_size: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub train_size: usize,
    pub ok: usize,
    pub failed: usize,
    pub report: Option<MetricsReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub cells: Vec<CellResult>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentResult {
    pub fn row(&self, model: &str, train_size: usize) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.model == model && r.train_size == train_size)
    }

    pub fn mean(&self, model: &str, train_size: usize) -> Option<Metrics> {
        self.row(model, train_size).and_then(|r| r.report.as_ref()).map(|r| r.mean)
    }
}

/// Trains the QUBO SVM for one split and backend, shared by the `top` and
/// `opt` variants.
pub struct QuboRun {
    pub qubo: QuboMatrix,
    pub run: BackendRun,
    pub ranked: RankedModels,
    pub train: TrainingSet,
    pub encoding: EncodingConfig,
}

pub fn train_qubo(cfg: &ExperimentConfig, split: &Split, backend: &str, shots: u64, seed: u64) -> Result<QuboRun> {
    let train = split.train.to_training_set()?;
    let encoding = cfg.encoding_for(train.dim());
    let qubo = build_qubo(&train, &encoding)?;
    let solver = BackendRegistry::default().create(backend, &cfg.backends)?;
    let run = solver.solve(&qubo, shots, seed)?;
    let ranked = rank_models(&run.histogram, &train, &encoding, cfg.ensemble.max_models)?;
    Ok(QuboRun {
        qubo,
        run,
        ranked,
        train,
        encoding,
    })
}

fn outcome(test: &Dataset, predictions: Vec<Label>) -> Result<CellOutcome> {
    let (confusion, metrics) = evaluate(&test.labels, &predictions)?;
    Ok(CellOutcome {
        test: SplitMetrics { confusion, metrics },
        predictions,
        validation_scores: None,
        ensemble_size: None,
    })
}

fn predict_all(test: &Dataset, f: impl Fn(&[f64]) -> Result<Label>) -> Result<Vec<Label>> {
    test.samples.iter().map(|x| f(x)).collect()
}

fn run_baseline(cfg: &ExperimentConfig, name: &str, split: &Split, seed: u64) -> Result<CellOutcome> {
    let train = split.train.to_training_set()?;
    let model = BaselineRegistry::default().fit(name, &cfg.baselines, &train, seed)?;
    outcome(&split.test, predict_all(&split.test, |x| model.predict(x))?)
}

fn qubo_outcome(cfg: &ExperimentConfig, variant: QuboVariant, run: &QuboRun, split: &Split) -> Result<CellOutcome> {
    match variant {
        QuboVariant::Top => {
            let top = run.ranked.top()?;
            outcome(&split.test, predict_all(&split.test, |x| top.predict(x))?)
        }
        QuboVariant::Opt => {
            let validation = TrainingSet::unchecked(split.validation.samples.clone(), split.validation.labels.clone())?;
            let (ens, scores) = optimize_ensemble_size(&run.ranked, &validation, cfg.ensemble.metric, cfg.ensemble.vote_mode)?;
            let mut out = outcome(&split.test, predict_all(&split.test, |x| crate::ensemble::vote_predict(&ens, x))?)?;
            out.ensemble_size = Some(ens.size());
            out.validation_scores = Some(scores);
            Ok(out)
        }
        QuboVariant::Stack => unreachable!("stacking is trained separately"),
    }
}

fn run_stack(cfg: &ExperimentConfig, backend: &str, shots: u64, split: &Split, seed: u64) -> Result<CellOutcome> {
    let train = split.train.to_training_set()?;
    let reg = BaselineRegistry::default();
    let bases = cfg
        .stack_bases
        .iter()
        .enumerate()
        .map(|(i, b)| reg.fit(b, &cfg.baselines, &train, seed::derive_seed(seed, &[i as u64])))
        .collect::<Result<Vec<_>>>()?;
    let solver = BackendRegistry::default().create(backend, &cfg.backends)?;
    let stack_cfg = StackConfig {
        shots,
        ..cfg.stack.clone()
    };
    let model = stack_train(bases, &train, solver.as_ref(), &stack_cfg, seed::derive_seed(seed, &[seed::tag("meta")]))?;
    outcome(&split.test, predict_all(&split.test, |x| stack_predict(&model, x))?)
}

/// Unit of work: one backend solve (serving every variant that shares it)
/// or one baseline/stack fit, for one split.
enum Job<'a> {
    Baseline { id: &'a str, name: &'a str },
    Shared { backend: &'a str, shots: u64, members: Vec<(&'a str, QuboVariant)> },
    Stack { id: &'a str, backend: &'a str, shots: u64 },
}

/// Runs every roster model on every `(train size, repeat)` split. All models
/// see identical splits. A failing cell is recorded and the run continues.
pub fn run_experiment(cfg: &ExperimentConfig, data: &Dataset) -> Result<ExperimentResult> {
    cfg.validate()?;
    let specs = cfg.roster_specs()?;

    let mut jobs: Vec<Job> = Vec::new();
    let mut shared: BTreeMap<(String, u64), usize> = BTreeMap::new();
    for (id, spec) in cfg.roster.iter().zip(&specs) {
        match spec {
            ModelSpec::Baseline { name } => jobs.push(Job::Baseline { id, name }),
            ModelSpec::Qubo {
                backend,
                shots,
                variant: QuboVariant::Stack,
            } => jobs.push(Job::Stack {
                id,
                backend,
                shots: *shots,
            }),
            ModelSpec::Qubo { backend, shots, variant } => {
                let slot = *shared.entry((backend.clone(), *shots)).or_insert_with(|| {
                    jobs.push(Job::Shared {
                        backend,
                        shots: *shots,
                        members: Vec::new(),
                    });
                    jobs.len() - 1
                });
                if let Job::Shared { members, .. } = &mut jobs[slot] {
                    members.push((id, *variant));
                }
            }
        }
    }

    let mut splits: Vec<(usize, Split)> = Vec::new();
    for &n in &cfg.protocol.train_sizes {
        for s in make_splits(data, &cfg.split_spec(n))? {
            splits.push((n, s));
        }
    }

    let work: Vec<(&Job, &(usize, Split))> = jobs.iter().flat_map(|j| splits.iter().map(move |s| (j, s))).collect();
    let cells: Vec<CellResult> = work
        .par_iter()
        .flat_map_iter(|&(job, (n, split))| {
            let cell_seed = |key: &str| seed::derive_seed(cfg.seed, &[seed::tag(key), *n as u64, split.repeat as u64]);
            let cell = |id: &str, r: Result<CellOutcome>| CellResult {
                model: id.to_string(),
                train_size: *n,
                repeat: split.repeat,
                result: r.map_err(|e| e.to_string()),
            };
            match job {
                Job::Baseline { id, name } => vec![cell(id, run_baseline(cfg, name, split, cell_seed(name)))],
                Job::Stack { id, backend, shots } => {
                    vec![cell(id, run_stack(cfg, backend, *shots, split, cell_seed(id)))]
                }
                Job::Shared { backend, shots, members } => {
                    let key = format!("{backend}/{shots}");
                    match train_qubo(cfg, split, backend, *shots, cell_seed(&key)) {
                        Ok(run) => members
                            .iter()
                            .map(|(id, v)| cell(id, qubo_outcome(cfg, *v, &run, split)))
                            .collect(),
                        Err(e) => members.iter().map(|(id, _)| cell(id, Err(Error::invalid(e.to_string())))).collect(),
                    }
                }
            }
        })
        .collect();

    let mut cells = cells;
    let order: BTreeMap<&str, usize> = cfg.roster.iter().enumerate().map(|(i, m)| (m.as_str(), i)).collect();
    cells.sort_by_key(|c| (order[c.model.as_str()], c.train_size, c.repeat));

    let mut summary = Vec::new();
    for id in &cfg.roster {
        for &n in &cfg.protocol.train_sizes {
            let mine: Vec<&CellResult> = cells.iter().filter(|c| &c.model == id && c.train_size == n).collect();
            let ok: Vec<SplitMetrics> = mine.iter().filter_map(|c| c.result.as_ref().ok()).map(|o| o.test.clone()).collect();
            let failed = mine.len() - ok.len();
            summary.push(SummaryRow {
                model: id.clone(),
                train_size: n,
                ok: ok.len(),
                failed,
                report: if ok.is_empty() { None } else { Some(aggregate(ok)?) },
            });
        }
    }
    for c in &cells {
        if let Err(e) = &c.result {
            log::warn!("{} n={} repeat={}: {e}", c.model, c.train_size, c.repeat);
        }
    }
    Ok(ExperimentResult { cells, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(id: &str) -> ModelSpec {
        ExperimentConfig::default().parse_model(id).unwrap()
    }

    fn qubo(backend: &str, shots: u64, variant: QuboVariant) -> ModelSpec {
        ModelSpec::Qubo {
            backend: backend.into(),
            shots,
            variant,
        }
    }

    #[test]
    fn roster_ids() {
        assert_eq!(spec("knn"), ModelSpec::Baseline { name: "knn".into() });
        assert_eq!(spec("naive_bayes"), ModelSpec::Baseline { name: "gaussian_nb".into() });
        assert_eq!(spec("i"), qubo("analog_ideal", 1000, QuboVariant::Top));
        assert_eq!(spec("i opt"), qubo("analog_ideal", 1000, QuboVariant::Opt));
        assert_eq!(spec("N 1000"), qubo("analog_noisy", 1000, QuboVariant::Top));
        assert_eq!(spec("N opt 500"), qubo("analog_noisy", 500, QuboVariant::Opt));
        assert_eq!(spec("N 100"), qubo("analog_noisy", 100, QuboVariant::Top));
        assert_eq!(spec("N opt"), qubo("analog_noisy", 1000, QuboVariant::Opt));
        assert_eq!(spec("i stack"), qubo("analog_ideal", 1000, QuboVariant::Stack));
        assert_eq!(spec("N stack"), qubo("analog_noisy", 500, QuboVariant::Stack));
        assert_eq!(spec("qubo_svm_bruteforce"), qubo("brute_force", 1000, QuboVariant::Top));
        assert_eq!(spec("qubo_svm opt"), qubo("brute_force", 1000, QuboVariant::Opt));
        assert_eq!(spec("qubo_svm_sa stack 200"), qubo("simulated_anneal", 200, QuboVariant::Stack));
        for bad in ["", "svm_quantum", "N opt opt", "i 0", "qubo_svm_qpu", "N 5 6"] {
            assert!(ExperimentConfig::default().parse_model(bad).is_err(), "{bad:?}");
        }
    }

    fn toy_data() -> Dataset {
        let mut rng = seed::rng(1);
        use rand::RngExt;
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        for i in 0..80 {
            let pos = i % 2 == 0;
            let c = if pos { 1.0 } else { -1.0 };
            samples.push(vec![c + rng.random_range(-0.8..0.8), rng.random_range(-1.0..1.0), c * 0.5 + rng.random_range(-1.0..1.0)]);
            labels.push(if pos { Label::Positive } else { Label::Negative });
        }
        Dataset::new(samples, labels, vec!["a".into(), "b".into(), "c".into()]).unwrap()
    }

    #[test]
    fn small_grid_is_complete_and_deterministic() {
        let cfg = ExperimentConfig {
            protocol: ProtocolConfig {
                train_sizes: vec![4, 5],
                repeats: 2,
                ..ProtocolConfig::default()
            },
            roster: ["knn", "qubo_svm_bruteforce", "qubo_svm opt", "qubo_svm stack"].map(String::from).to_vec(),
            ..ExperimentConfig::default()
        };
        let data = toy_data();
        let a = run_experiment(&cfg, &data).unwrap();
        assert_eq!(a.cells.len(), 4 * 2 * 2);
        assert_eq!(a.summary.len(), 4 * 2);
        for row in &a.summary {
            assert_eq!(row.ok, 2, "{row:?}");
        }
        for c in &a.cells {
            if let Ok(o) = &c.result {
                if let (Some(scores), Some(k)) = (&o.validation_scores, o.ensemble_size) {
                    assert!(scores[k - 1] >= scores[0]);
                }
            }
        }
        let b = run_experiment(&cfg, &data).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn failures_are_recorded_per_cell() {
        let cfg = ExperimentConfig {
            protocol: ProtocolConfig {
                train_sizes: vec![4],
                repeats: 1,
                ..ProtocolConfig::default()
            },
            backends: BackendConfig {
                enumeration_bound: 4,
                ..BackendConfig::default()
            },
            roster: ["knn", "qubo_svm"].map(String::from).to_vec(),
            ..ExperimentConfig::default()
        };
        let r = run_experiment(&cfg, &toy_data()).unwrap();
        assert!(r.cells[0].result.is_ok());
        assert!(r.cells[1].result.as_ref().unwrap_err().contains("enumeration bound"));
        assert_eq!(r.row("qubo_svm", 4).unwrap().failed, 1);
    }
}
