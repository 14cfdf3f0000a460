use std::collections::BTreeSet;

use anyhow::{bail, Context, Result};
use serde_json::json;

use qubo_svm::backend::BackendRegistry;
use qubo_svm::baselines::{BaselineRegistry, Classifier};
use qubo_svm::data::{make_splits, Dataset, Split};
use qubo_svm::embedding::embed;
use qubo_svm::experiment::{run_experiment, train_qubo, ExperimentConfig};
use qubo_svm::metrics::{evaluate, SplitMetrics};
use qubo_svm::qubo::{brute_force_solve_bounded, QuboMatrix};
use qubo_svm::seed;
use qubo_svm::svm::{build_qubo, Label, SvmModel};

use crate::output::{self, RunDir};
use crate::{invalid, resolve_config, Cli, Command};

/// Parses a TOML config, rejecting keys the schema does not know.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let user: toml::Table = text.parse()?;
    let known = toml::Table::try_from(ExperimentConfig::default())?;
    for (k, v) in &user {
        let Some(default) = known.get(k) else {
            bail!("unknown key `{k}`");
        };
        if let (toml::Value::Table(u), toml::Value::Table(d)) = (v, default) {
            if let Some(bad) = u.keys().find(|kk| !d.contains_key(*kk)) {
                bail!("unknown key `{k}.{bad}`");
            }
        }
    }
    Ok(toml::from_str(text)?)
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Config => {
            print!("{}", toml::to_string_pretty(&cfg)?);
            Ok(())
        }
        Command::Formulate { repeat } => formulate(&cfg, *repeat),
        Command::Embed { qubo } => embed_cmd(&cfg, qubo),
        Command::Train { repeat } => train(&cfg, *repeat),
        Command::Evaluate { model, baseline, repeat } => evaluate_cmd(&cfg, model.as_deref(), baseline.as_deref(), *repeat),
        Command::Experiment => experiment(&cfg),
        Command::Oracle { qubo, top_k, full } => oracle(&cfg, qubo, *top_k, *full),
    }
}

fn run_dir(cfg: &ExperimentConfig) -> Result<RunDir> {
    let dir = RunDir::create(&cfg.output)?;
    dir.write("config.toml", toml::to_string_pretty(cfg)?.as_bytes())?;
    Ok(dir)
}

fn load_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    if !cfg.dataset.path.is_file() {
        return Err(invalid(format!(
            "dataset `{}` not found; set dataset.path in the config",
            cfg.dataset.path.display()
        )));
    }
    cfg.load_dataset().with_context(|| format!("loading {}", cfg.dataset.path.display()))
}

fn one_split(cfg: &ExperimentConfig, data: &Dataset, repeat: usize) -> Result<(usize, Split)> {
    let n = cfg.protocol.train_sizes[0];
    if cfg.protocol.train_sizes.len() > 1 {
        log::info!("using the first training size ({n}); pass --train-size to choose");
    }
    let mut spec = cfg.split_spec(n);
    if repeat >= spec.repeats {
        return Err(invalid(format!("repeat {repeat} is out of range (repeats = {})", spec.repeats)));
    }
    spec.repeats = repeat + 1;
    let split = make_splits(data, &spec)?.pop().expect("at least one split");
    Ok((n, split))
}

fn provenance(cfg: &ExperimentConfig, n: usize, split: &Split) -> serde_json::Value {
    json!({
        "seed": cfg.seed,
        "train_size": n,
        "repeat": split.repeat,
        "encoding": cfg.encoding_for(split.train.dim()),
        "train_idx": split.train_idx,
        "validation_idx": split.validation_idx,
        "test_idx": split.test_idx,
        "standardizer": split.standardizer,
    })
}

fn read_qubo(path: &std::path::Path) -> Result<QuboMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("reading {}: {e}", path.display())))?;
    QuboMatrix::from_text(&text).with_context(|| format!("parsing {}", path.display()))
}

fn formulate(cfg: &ExperimentConfig, repeat: usize) -> Result<()> {
    let data = load_data(cfg)?;
    let (n, split) = one_split(cfg, &data, repeat)?;
    let train = split.train.to_training_set()?;
    let q = build_qubo(&train, &cfg.encoding_for(train.dim()))?;
    let dir = run_dir(cfg)?;
    dir.write("qubo.txt", q.to_text().as_bytes())?;
    dir.json("formulate.json", &provenance(cfg, n, &split))?;
    println!("{}x{} QUBO written to {}", q.dim(), q.dim(), dir.path("qubo.txt").display());
    Ok(())
}

fn embed_cmd(cfg: &ExperimentConfig, qubo: &std::path::Path) -> Result<()> {
    let q = read_qubo(qubo)?;
    let c = &cfg.backends.constraints;
    let report = embed(&q, c, &cfg.backends.embed, seed::derive_seed(cfg.seed, &[seed::tag("embed")]))?;
    let dir = run_dir(cfg)?;
    dir.json("register.json", &report.register)?;
    dir.json("embedding_report.json", &report)?;
    dir.write("register.svg", output::register_svg(&report.register, c).as_bytes())?;
    println!("{} atoms placed, loss {:.6e}", report.register.len(), report.loss);
    Ok(())
}

fn train(cfg: &ExperimentConfig, repeat: usize) -> Result<()> {
    let data = load_data(cfg)?;
    let (n, split) = one_split(cfg, &data, repeat)?;
    let backend = BackendRegistry::default().canonical(&cfg.backend)?.to_string();
    let run_seed = seed::derive_seed(cfg.seed, &[seed::tag("train"), n as u64, repeat as u64]);
    let trained = train_qubo(cfg, &split, &backend, cfg.shots, run_seed).with_context(|| format!("backend {backend}"))?;

    let dir = run_dir(cfg)?;
    dir.write("qubo.txt", trained.qubo.to_text().as_bytes())?;
    dir.json("formulate.json", &provenance(cfg, n, &split))?;
    dir.json("histogram.json", &trained.run.histogram)?;
    dir.json("ranked_models.json", &trained.ranked)?;
    dir.json("top_model.json", trained.ranked.top()?)?;
    if let Some(p) = &trained.run.payload {
        dir.json("payload.json", p)?;
        dir.json("register.json", &p.register)?;
        dir.write("register.svg", output::register_svg(&p.register, &cfg.backends.constraints).as_bytes())?;
    }
    if let Some(r) = &trained.run.embedding {
        dir.json("embedding_report.json", r)?;
    }
    if let Some(s) = &trained.run.state {
        let amps: Vec<[f64; 2]> = s.amplitudes().iter().map(|a| [a.re, a.im]).collect();
        dir.json("state.json", &json!({ "n_atoms": s.n_atoms(), "amplitudes": amps }))?;
    }
    let top = &trained.ranked.entries[0];
    println!(
        "backend {backend}: top state {} ({} of {} shots), {} distinct models",
        top.state,
        top.frequency,
        trained.run.histogram.total_shots(),
        trained.ranked.len()
    );
    Ok(())
}

enum Loaded {
    Svm(SvmModel),
    Baseline(Box<dyn Classifier>),
}

impl Loaded {
    fn dim(&self) -> usize {
        match self {
            Loaded::Svm(m) => m.dim(),
            Loaded::Baseline(m) => m.dim(),
        }
    }

    fn score(&self, x: &[f64]) -> qubo_svm::Result<(f64, Label)> {
        match self {
            Loaded::Svm(m) => Ok((m.decision_value(x)?, m.predict(x)?)),
            Loaded::Baseline(m) => Ok((m.decision_value(x)?, m.predict(x)?)),
        }
    }
}

fn load_model(path: &std::path::Path) -> Result<Loaded> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("reading {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    if value.get("kind").is_some() {
        return Ok(Loaded::Baseline(BaselineRegistry::default().load(value)?));
    }
    serde_json::from_value(value)
        .map(Loaded::Svm)
        .map_err(|e| invalid(format!("{} is neither an SVM model nor a saved baseline: {e}", path.display())))
}

fn score_split(model: &Loaded, part: &Dataset) -> Result<(SplitMetrics, Vec<(f64, Label)>)> {
    let scored = part.samples.iter().map(|x| model.score(x)).collect::<qubo_svm::Result<Vec<_>>>()?;
    let preds: Vec<Label> = scored.iter().map(|s| s.1).collect();
    let (confusion, metrics) = evaluate(&part.labels, &preds)?;
    Ok((SplitMetrics { confusion, metrics }, scored))
}

fn evaluate_cmd(cfg: &ExperimentConfig, model: Option<&std::path::Path>, baseline: Option<&str>, repeat: usize) -> Result<()> {
    let data = load_data(cfg)?;
    let (n, split) = one_split(cfg, &data, repeat)?;
    let (name, loaded) = match (model, baseline) {
        (_, Some(b)) => {
            let train = split.train.to_training_set()?;
            let seed = seed::derive_seed(cfg.seed, &[seed::tag(b), n as u64, repeat as u64]);
            let fitted = BaselineRegistry::default().fit(b, &cfg.baselines, &train, seed)?;
            (b.to_string(), Loaded::Baseline(fitted))
        }
        (Some(p), None) => (p.display().to_string(), load_model(p)?),
        (None, None) => {
            let p = cfg.output.join("top_model.json");
            (p.display().to_string(), load_model(&p)?)
        }
    };
    if loaded.dim() != data.dim() {
        return Err(invalid(format!("model expects {} features, dataset has {}", loaded.dim(), data.dim())));
    }
    let (validation, _) = score_split(&loaded, &split.validation)?;
    let (test, scored) = score_split(&loaded, &split.test)?;

    let dir = run_dir(cfg)?;
    dir.json(
        "evaluation.json",
        &json!({ "model": name, "train_size": n, "repeat": repeat, "validation": validation, "test": test }),
    )?;
    let rows: Vec<Vec<String>> = split
        .test_idx
        .iter()
        .zip(&split.test.labels)
        .zip(&scored)
        .map(|((i, y), (v, p))| vec![i.to_string(), y.value().to_string(), p.value().to_string(), format!("{v:.9}")])
        .collect();
    dir.csv("predictions.csv", &["row", "label", "prediction", "decision_value"], &rows)?;
    println!(
        "test accuracy {:.4}, f1 {:.4} ({} samples)",
        test.metrics.accuracy,
        test.metrics.f1,
        split.test.len()
    );
    Ok(())
}

fn experiment(cfg: &ExperimentConfig) -> Result<()> {
    let data = load_data(cfg)?;
    let dir = run_dir(cfg)?;
    let result = run_experiment(cfg, &data)?;
    dir.csv("cells.csv", &output::CELL_HEADER, &output::cell_rows(&result))?;
    dir.csv("summary.csv", &output::SUMMARY_HEADER, &output::summary_rows(&result))?;
    dir.json("summary.json", &result.summary)?;
    dir.json("results.json", &result)?;
    let sizes = &cfg.protocol.train_sizes;
    for metric in ["accuracy", "f1"] {
        let svg = output::bar_chart_svg(&result, &cfg.roster, sizes, metric);
        dir.write(&format!("{metric}.svg"), svg.as_bytes())?;
    }
    for row in &result.summary {
        match &row.report {
            Some(r) => println!(
                "{:<28} n={:<3} accuracy {:.4} ± {:.4}  f1 {:.4} ± {:.4}{}",
                row.model,
                row.train_size,
                r.mean.accuracy,
                r.std.accuracy,
                r.mean.f1,
                r.std.f1,
                if row.failed > 0 { format!("  ({} failed)", row.failed) } else { String::new() }
            ),
            None => println!("{:<28} n={:<3} all {} cells failed", row.model, row.train_size, row.failed),
        }
    }
    let failed: BTreeSet<&str> = result.cells.iter().filter(|c| c.result.is_err()).map(|c| c.model.as_str()).collect();
    if result.cells.iter().all(|c| c.result.is_err()) {
        bail!("every cell failed; see cells.csv");
    }
    if !failed.is_empty() {
        log::warn!("cells failed for: {}", failed.into_iter().collect::<Vec<_>>().join(", "));
    }
    Ok(())
}

fn oracle(cfg: &ExperimentConfig, qubo: &std::path::Path, top_k: usize, full: bool) -> Result<()> {
    let q = read_qubo(qubo)?;
    let bound = cfg.backends.enumeration_bound;
    let k = if full && q.dim() <= bound { 1usize << q.dim() } else { top_k.max(1) };
    let result = brute_force_solve_bounded(&q, k, bound)?;
    let dir = run_dir(cfg)?;
    let rows: Vec<Vec<String>> = result
        .ranked
        .iter()
        .flatten()
        .enumerate()
        .map(|(r, (b, e))| vec![r.to_string(), b.to_string(), format!("{e:?}")])
        .collect();
    dir.csv("spectrum.csv", &["rank", "state", "energy"], &rows)?;
    dir.json("spectrum.json", &result)?;
    println!("minimizer {} with energy {:?}", result.best, result.energy);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = toml::to_string_pretty(&cfg).unwrap();
        assert_eq!(parse_config(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_config_keeps_defaults() {
        let cfg = parse_config("seed = 9\nroster = [\"knn\", \"N opt 500\"]\n[protocol]\nrepeats = 2\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.protocol.repeats, 2);
        assert_eq!(cfg.protocol.train_sizes, vec![6, 7, 8]);
        assert_eq!(cfg.roster[1], "N opt 500");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse_config("sede = 1").unwrap_err().to_string().contains("sede"));
        assert!(parse_config("[protocol]\nrepeat = 1").unwrap_err().to_string().contains("protocol.repeat"));
    }
}
