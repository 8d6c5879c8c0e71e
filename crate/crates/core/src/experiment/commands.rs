//! Command flows that read a config and write one experiment directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::output::{create_dir, reports_csv, write_file, write_json};
use super::{
    compare, run_ensembles, thread_pool, train_one, write_compare_outputs, Comparison, DataSource,
    EnsembleResult, ExperimentConfig, Manifest, Prepared, SynthConfig,
};
use crate::data::{estimate_distribution, tsv, Conversation};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::model::Model;
use crate::shift::{CorrectionSpec, Method};

pub const MODEL_FILE: &str = "model.json";
pub const CORRECTION_FILE: &str = "correction.json";
pub const HISTORY_FILE: &str = "history.csv";

/// Writes `train.tsv`, `dev.tsv` and `test.tsv` (all labelled) plus a
/// manifest with the split seeds and realized class counts.
pub fn cmd_synth(config: &SynthConfig, out: &Path) -> Result<Manifest> {
    config.generator.validate()?;
    let splits = config.generate()?;
    create_dir(out)?;
    let mut counts = serde_json::Map::new();
    for (name, split) in [
        ("train", &splits.train),
        ("dev", &splits.dev),
        ("test", &splits.test),
    ] {
        tsv::write_tsv(&out.join(format!("{name}.tsv")), split, true)?;
        counts.insert(name.into(), json!(estimate_distribution(split)?.counts()));
    }
    write_json(&out.join("config.json"), config)?;
    let manifest = Manifest::new(
        "synth",
        vec![
            "train.tsv".into(),
            "dev.tsv".into(),
            "test.tsv".into(),
            "config.json".into(),
        ],
        json!({
            "generator_seed": config.seed,
            "split_seeds": { "train": splits.seeds[0], "dev": splits.seeds[1], "test": splits.seeds[2] },
            "counts": counts,
        }),
    );
    manifest.write(out)?;
    Ok(manifest)
}

/// What `cmd_train` reports back.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub method: Method,
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub epochs_run: usize,
}

/// Trains one model for `method` at `config.train.seed` and saves the
/// checkpoint, its correction and the training history to `out`.
pub fn cmd_train(config: &ExperimentConfig, method: Method, out: &Path) -> Result<TrainOutcome> {
    config.validate()?;
    let data = Prepared::load(&config.data)?;
    let seed = config.run_seed(0);
    let run = train_one(&data, config, method, seed)?;
    create_dir(out)?;
    run.trained.model.save(&data.vocab, &out.join(MODEL_FILE))?;
    write_json(&out.join(CORRECTION_FILE), &run.spec)?;
    run.trained.history.write_csv(&out.join(HISTORY_FILE))?;
    write_json(&out.join("config.json"), config)?;
    let outcome = TrainOutcome {
        method,
        seed,
        best_epoch: run.trained.history.best_epoch,
        best_val_f1: run.trained.best_val_f1,
        epochs_run: run.trained.history.epochs.len(),
    };
    Manifest::new(
        "train",
        vec![
            MODEL_FILE.into(),
            CORRECTION_FILE.into(),
            HISTORY_FILE.into(),
            "config.json".into(),
        ],
        serde_json::to_value(&outcome)?,
    )
    .write(out)?;
    Ok(outcome)
}

/// Where `cmd_eval` reads its examples from.
#[derive(Debug, Clone)]
pub enum EvalData {
    /// A TSV file; it must carry a label column.
    File(PathBuf),
    /// The test split of the experiment's data source.
    Config(DataSource),
}

fn load_eval_data(source: &EvalData) -> Result<Vec<Conversation>> {
    match source {
        EvalData::File(path) => tsv::read_tsv(path),
        EvalData::Config(DataSource::Files { test, .. }) => tsv::read_tsv(test),
        EvalData::Config(DataSource::Synthetic(s)) => Ok(s.generate()?.test),
    }
}

/// Loads the checkpoint in `checkpoint` and evaluates it. `method`
/// overrides the saved correction's method; only thresholding acts at
/// inference, so the override changes nothing else.
pub fn cmd_eval(
    checkpoint: &Path,
    data: &EvalData,
    method: Option<Method>,
    out: &Path,
) -> Result<EvalReport> {
    let (model, vocab) = Model::load(&checkpoint.join(MODEL_FILE))?;
    let spec_path = checkpoint.join(CORRECTION_FILE);
    let text = std::fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
    let mut spec: CorrectionSpec = serde_json::from_str(&text)?;
    if let Some(m) = method {
        spec = spec.with_method(m)?;
    }
    let conversations = load_eval_data(data)?;
    if let Some(c) = conversations.iter().find(|c| c.label.is_none()) {
        return Err(Error::contract(format!(
            "evaluation needs labelled examples; {} has no label",
            c.id
        )));
    }
    let report = evaluate(&model, &vocab.encode_all(&conversations), &spec)?;
    create_dir(out)?;
    write_json(&out.join("report.json"), &report)?;
    write_file(&out.join("report.csv"), &reports_csv([&report]))?;
    Ok(report)
}

/// Full comparison of single models and ensembles, written to `out`.
pub fn cmd_compare(config: &ExperimentConfig, out: &Path) -> Result<Comparison> {
    config.validate()?;
    let data = Prepared::load(&config.data)?;
    let threads = thread_pool()?;
    let cmp = compare(config, &data, &threads)?;
    let files = write_compare_outputs(out, config, &cmp)?;
    Manifest::new(
        "compare",
        files,
        json!({
            "seeds": (0..config.n_seeds).map(|s| config.run_seed(s)).collect::<Vec<_>>(),
            "ensemble_size": config.ensemble_size,
            "train_size": data.train.len(),
            "dev_size": data.dev.len(),
            "test_size": data.test.len(),
        }),
    )
    .write(out)?;
    Ok(cmp)
}

/// Bagged ensembles only (plus the mixed one when every method is listed).
pub fn cmd_ensemble(config: &ExperimentConfig, out: &Path) -> Result<Vec<EnsembleResult>> {
    config.validate()?;
    let data = Prepared::load(&config.data)?;
    let threads = thread_pool()?;
    let (mut ensembles, mixed) = run_ensembles(config, &data, &threads)?;
    ensembles.extend(mixed);
    create_dir(out)?;
    let mut csv = String::from("ensemble,members,accuracy,f1,tv\n");
    for e in &ensembles {
        csv.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6}\n",
            e.label,
            e.members,
            e.report.accuracy,
            e.report.micro_f1_emotional,
            e.report.tv_distance
        ));
    }
    write_file(&out.join("ensembles.csv"), &csv)?;
    write_file(
        &out.join("ensemble_runs.csv"),
        &reports_csv(ensembles.iter().map(|e| &e.report)),
    )?;
    write_json(&out.join("ensembles.json"), &ensembles)?;
    write_json(&out.join("config.json"), config)?;
    Manifest::new(
        "ensemble",
        vec![
            "ensembles.csv".into(),
            "ensemble_runs.csv".into(),
            "ensembles.json".into(),
            "config.json".into(),
        ],
        json!({ "ensemble_size": config.ensemble_size, "combine": config.combine }),
    )
    .write(out)?;
    Ok(ensembles)
}
