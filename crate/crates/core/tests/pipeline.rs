use std::path::PathBuf;

use qubo_svm::analog::*;
use qubo_svm::backend::{BackendConfig, BackendRegistry, BackendRun, BruteForce, QuboBackend};
use qubo_svm::baselines::{BaselineParams, BaselineRegistry};
use qubo_svm::data::{load_csv, make_splits, Dataset, Split};
use qubo_svm::embedding::{embed, validate, EmbedConfig, HardwareConstraints, Register};
use qubo_svm::ensemble::{stack_predict, stack_train, StackConfig, StackedModel};
use qubo_svm::experiment::{train_qubo, DatasetConfig, ExperimentConfig};
use qubo_svm::qubo::{brute_force_solve, QuboMatrix};
use qubo_svm::svm::{build_qubo, model_from_state, TrainingSet};

fn config() -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetConfig {
            path: PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/breast_cancer.csv"),
            ..DatasetConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

fn data() -> Dataset {
    config().load_dataset().unwrap()
}

fn splits(n: usize, repeats: usize) -> Vec<Split> {
    let mut spec = config().split_spec(n);
    spec.repeats = repeats;
    make_splits(&data(), &spec).unwrap()
}

#[test]
fn brute_force_top_model_is_the_minimizer() {
    let cfg = config();
    for split in splits(6, 3) {
        let run = train_qubo(&cfg, &split, "brute_force", 1000, 5).unwrap();
        assert_eq!(run.qubo.dim(), 12);
        let oracle = brute_force_solve(&run.qubo, 1).unwrap().best;
        assert_eq!(run.ranked.entries[0].state, oracle);
        let expected = model_from_state(&oracle, &run.train, &run.encoding).unwrap();
        assert_eq!(run.ranked.top().unwrap(), &expected);
    }
}

#[test]
fn qubo_size_follows_training_size() {
    for (n, dim) in [(6, 12), (8, 16)] {
        let split = splits(n, 1).remove(0);
        let train = split.train.to_training_set().unwrap();
        let cfg = config();
        assert_eq!(build_qubo(&train, &cfg.encoding_for(train.dim())).unwrap().dim(), dim);
    }
}

#[test]
fn twelve_atom_embedding_is_compliant() {
    let cfg = config();
    let split = splits(6, 1).remove(0);
    let train = split.train.to_training_set().unwrap();
    let q = build_qubo(&train, &cfg.encoding_for(train.dim())).unwrap();
    let constraints = HardwareConstraints::default();
    let report = embed(&q, &constraints, &EmbedConfig::default(), 3).unwrap();
    assert_eq!(report.register.len(), 12);
    assert!(validate(&report.register, &constraints).is_empty());
    assert!(report.loss <= report.initial_loss);
}

#[test]
fn overlap_grows_with_duration() {
    let sim = SimConfig::default();
    let reg = Register::new(vec![[0.0, 0.0], [6.0, 0.0], [12.0, 0.0]]);
    let q = register_qubo(&reg, sim.c6, 10.0).unwrap();
    let target = brute_force_solve(&q, 1).unwrap().best;
    let overlaps: Vec<f64> = [1.0, 4.0, 10.0]
        .into_iter()
        .map(|tau| {
            let params = ScheduleParams {
                tau,
                ..ScheduleParams::default()
            };
            let state = evolve(&reg, &build_schedule(&q, &params).unwrap(), &sim, None, 0).unwrap();
            ground_state_overlap(&state, &target).unwrap()
        })
        .collect();
    assert!(overlaps[0] < overlaps[1] && overlaps[1] < overlaps[2], "{overlaps:?}");
}

#[test]
fn shot_count_changes_histogram_not_state() {
    let cfg = config();
    let split = splits(6, 1).remove(0);
    let a = train_qubo(&cfg, &split, "analog_ideal", 100, 8).unwrap();
    let b = train_qubo(&cfg, &split, "analog_ideal", 1000, 8).unwrap();
    assert_eq!(a.run.state, b.run.state);
    assert_eq!(a.run.payload, b.run.payload);
    assert_eq!(a.run.histogram.total_shots(), 100);
    assert_eq!(b.run.histogram.total_shots(), 1000);
}

#[test]
fn analog_toy_training_matches_oracle() {
    // Two samples with two bits each: a 4-atom problem.
    let cfg = config();
    let mut hits = 0;
    for split in splits(2, 10) {
        let exact = train_qubo(&cfg, &split, "brute_force", 1000, 0).unwrap();
        let analog = train_qubo(&cfg, &split, "analog_ideal", 1000, 0).unwrap();
        if analog.ranked.top().unwrap() == exact.ranked.top().unwrap() {
            hits += 1;
        }
    }
    assert!(hits >= 8, "{hits}/10");
}

/// A custom strategy registered next to the built-ins.
struct Reversed;

impl QuboBackend for Reversed {
    fn name(&self) -> &str {
        "reversed"
    }

    fn solve(&self, q: &QuboMatrix, shots: u64, seed: u64) -> qubo_svm::Result<BackendRun> {
        let neg = QuboMatrix::new(q.dim(), q.entries().iter().map(|v| -v).collect())?;
        BruteForce { top_k: 4, bound: 20 }.solve(&neg, shots, seed)
    }
}

#[test]
fn registries_accept_new_strategies() {
    let mut backends = BackendRegistry::default();
    backends.register("reversed", &["rev"], |_| Ok(Box::new(Reversed)));
    assert!(backends.names().contains(&"reversed"));
    let q = QuboMatrix::from_rows(vec![vec![-1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let run = backends.create("rev", &BackendConfig::default()).unwrap().solve(&q, 1, 0).unwrap();
    assert_eq!(most_probable_state(&run.histogram).unwrap().to_string(), "01");

    let baselines = BaselineRegistry::default();
    for name in ["knn", "gaussian_nb", "logistic_regression", "decision_tree", "random_forest", "svm_linear", "svm_rbf"] {
        assert!(baselines.names().contains(&name), "{name}");
    }
}

fn accuracy(predict: impl Fn(&[f64]) -> qubo_svm::svm::Label, test: &Dataset) -> f64 {
    let hits = test.samples.iter().zip(&test.labels).filter(|(x, y)| predict(x) == **y).count();
    hits as f64 / test.len() as f64
}

#[test]
fn baselines_learn_the_dataset_and_round_trip() {
    let split = splits(60, 1).remove(0);
    let train = split.train.to_training_set().unwrap();
    let reg = BaselineRegistry::default();
    for name in reg.names() {
        let model = reg.fit(name, &BaselineParams::default(), &train, 11).unwrap();
        let acc = accuracy(|x| model.predict(x).unwrap(), &split.test);
        assert!(acc > 0.85, "{name}: {acc}");
        let loaded = reg.load(reg.save(model.as_ref()).unwrap()).unwrap();
        for x in &split.test.samples {
            assert_eq!(loaded.decision_value(x).unwrap(), model.decision_value(x).unwrap(), "{name}");
        }
    }
}

#[test]
fn stacked_model_round_trips() {
    let split = splits(8, 1).remove(0);
    let train: TrainingSet = split.train.to_training_set().unwrap();
    let reg = BaselineRegistry::default();
    let bases = ["gaussian_nb", "knn", "logistic_regression"]
        .iter()
        .map(|b| reg.fit(b, &BaselineParams::default(), &train, 1).unwrap())
        .collect();
    let backend = BruteForce { top_k: 8, bound: 24 };
    let model = stack_train(bases, &train, &backend, &StackConfig::default(), 2).unwrap();
    let json = model.to_json(&reg).unwrap();
    let back = StackedModel::from_json(json, &reg).unwrap();
    for x in &split.test.samples {
        assert_eq!(stack_predict(&model, x).unwrap(), stack_predict(&back, x).unwrap());
    }
    assert!(accuracy(|x| stack_predict(&model, x).unwrap(), &split.test) > 0.8);
}

#[test]
fn csv_errors_name_the_row() {
    let text = "a,b,diagnosis\n1,2,benign\n3,x,malignant\n";
    let err = qubo_svm::data::read_csv(text.as_bytes(), "diagnosis", "benign").unwrap_err();
    assert!(err.to_string().contains("row 2"), "{err}");
    assert!(load_csv("/nonexistent.csv", "diagnosis", "benign").is_err());
}
