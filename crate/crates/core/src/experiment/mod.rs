//! Reproducible experiment runs: data preparation, single models and
//! bagged ensembles per correction method, and the comparison tables.

mod commands;
mod output;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use commands::{
    cmd_compare, cmd_ensemble, cmd_eval, cmd_synth, cmd_train, EvalData, TrainOutcome,
    CORRECTION_FILE, HISTORY_FILE, MODEL_FILE,
};
pub use output::{
    distributions_csv, ensemble_summary_csv, reports_csv, single_summary_csv,
    write_compare_outputs, Manifest,
};

use crate::data::synth::{Generator, GeneratorConfig};
use crate::data::{
    estimate_distribution, tsv, ClassDistribution, Conversation, EncodedConversation, Vocabulary,
};
use crate::error::{Error, Result};
use crate::eval::{aggregate, evaluate_predictions, EvalReport, Summary, EVAL_BATCH};
use crate::model::{Model, ModelConfig};
use crate::seeds;
use crate::shift::{
    bag_ensemble, class_weights, make_bags, threshold_adjust, Combine, CorrectionSpec, Method,
    PredictionVector,
};
use crate::train::{fit_selecting, prepare, TrainConfig, Trained};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub generator: GeneratorConfig,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub train_prior: ClassDistribution,
    pub test_prior: ClassDistribution,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            generator: GeneratorConfig::default(),
            n_train: 1200,
            n_dev: 600,
            n_test: 2000,
            train_prior: ClassDistribution::from_probs([1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 0.5])
                .expect("valid prior"),
            test_prior: ClassDistribution::from_probs([0.05, 0.05, 0.05, 0.85])
                .expect("valid prior"),
            seed: 7,
        }
    }
}

/// The three splits drawn by one generator, with the seeds used.
#[derive(Debug, Clone)]
pub struct SynthSplits {
    pub train: Vec<Conversation>,
    pub dev: Vec<Conversation>,
    pub test: Vec<Conversation>,
    pub seeds: [u64; 3],
}

impl SynthConfig {
    pub fn generate(&self) -> Result<SynthSplits> {
        let generator = Generator::new(self.generator.clone(), self.seed)?;
        let seeds = ["train", "dev", "test"].map(|s| seeds::derive_named(self.seed, s));
        Ok(SynthSplits {
            train: generator.sample(self.n_train, &self.train_prior, "train", seeds[0])?,
            dev: generator.sample(self.n_dev, &self.test_prior, "dev", seeds[1])?,
            test: generator.sample(self.n_test, &self.test_prior, "test", seeds[2])?,
            seeds,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SynthConfig),
    Files {
        train: PathBuf,
        dev: PathBuf,
        test: PathBuf,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SynthConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Vocabulary sizes are filled in from the training data.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub methods: Vec<Method>,
    pub n_seeds: usize,
    pub ensemble_size: usize,
    pub combine: Combine,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            methods: Method::ALL.to_vec(),
            n_seeds: 10,
            ensemble_size: 10,
            combine: Combine::ProbMean,
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    /// The desk-scale benchmark: default synthetic data (1000/500/2000
    /// conversations) and toy model dimensions, sized so ten seeds of every
    /// method plus the ensembles run in minutes on one core.
    pub fn benchmark() -> Self {
        ExperimentConfig {
            data: DataSource::Synthetic(SynthConfig {
                n_train: 1000,
                n_dev: 500,
                n_test: 2000,
                ..SynthConfig::default()
            }),
            model: ModelConfig {
                lstm_layers: 1,
                lstm_hidden_per_direction: 6,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                learning_rate: 0.003,
                max_epochs: 25,
                patience: 5,
                ..TrainConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: ExperimentConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_seeds == 0 {
            return Err(Error::config("n_seeds must be at least 1"));
        }
        if self.ensemble_size == 0 {
            return Err(Error::config("ensemble_size must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("no methods selected"));
        }
        self.train.validate()?;
        match &self.data {
            DataSource::Synthetic(s) => s.generator.validate(),
            DataSource::Files { train, dev, test } => {
                for p in [train, dev, test] {
                    if !p.exists() {
                        return Err(Error::config(format!(
                            "data file {} does not exist",
                            p.display()
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// Seed of run `index`; run 0 uses the configured training seed.
    pub fn run_seed(&self, index: usize) -> u64 {
        self.train.seed.wrapping_add(index as u64)
    }
}

/// Encoded splits with the priors the corrections use: `p_r` from the
/// training split and `p_s` estimated on the validation split.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub vocab: Vocabulary,
    pub train: Vec<EncodedConversation>,
    pub dev: Vec<EncodedConversation>,
    pub test: Vec<EncodedConversation>,
    pub p_r: ClassDistribution,
    pub p_s: ClassDistribution,
    pub test_gold: ClassDistribution,
}

impl Prepared {
    pub fn from_splits(
        train: &[Conversation],
        dev: &[Conversation],
        test: &[Conversation],
    ) -> Result<Self> {
        let vocab = Vocabulary::build(train);
        Ok(Prepared {
            p_r: estimate_distribution(train)?,
            p_s: estimate_distribution(dev)?,
            test_gold: estimate_distribution(test)?,
            train: vocab.encode_all(train),
            dev: vocab.encode_all(dev),
            test: vocab.encode_all(test),
            vocab,
        })
    }

    pub fn load(source: &DataSource) -> Result<Self> {
        match source {
            DataSource::Synthetic(s) => {
                let splits = s.generate()?;
                Self::from_splits(&splits.train, &splits.dev, &splits.test)
            }
            DataSource::Files { train, dev, test } => Self::from_splits(
                &tsv::parse_tsv(train, true)?,
                &tsv::parse_tsv(dev, true)?,
                &tsv::parse_tsv(test, true)?,
            ),
        }
    }

    pub fn correction(&self, method: Method, seed: u64) -> Result<CorrectionSpec> {
        CorrectionSpec::new(method, self.p_r, self.p_s, seed)
    }
}

/// A trained model with the correction it was selected under.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub method: Method,
    pub seed: u64,
    pub trained: Trained,
    pub spec: CorrectionSpec,
}

impl RunResult {
    /// Test-set posteriors after the method's inference-side adjustment,
    /// renormalised so members of different methods can be pooled.
    fn corrected_predictions(&self, raw: &[PredictionVector]) -> Result<Vec<PredictionVector>> {
        if self.method != Method::Threshold {
            return Ok(raw.to_vec());
        }
        raw.iter()
            .map(|p| threshold_adjust(p, &self.spec.p_r, &self.spec.p_s, true))
            .collect()
    }
}

/// Methods that share one training trajectory: thresholding only changes
/// inference, so it rides along with the baseline run.
fn training_groups(methods: &[Method]) -> Vec<Vec<Method>> {
    let mut groups: Vec<Vec<Method>> = Vec::new();
    for &m in methods {
        let shares = |g: &Vec<Method>| {
            g.iter().all(|&o| {
                matches!(
                    (o, m),
                    (Method::None, Method::Threshold) | (Method::Threshold, Method::None)
                )
            })
        };
        match groups.iter_mut().find(|g| shares(g)) {
            Some(g) => g.push(m),
            None => groups.push(vec![m]),
        }
    }
    groups
}

fn init_seed(seed: u64) -> u64 {
    seeds::derive_named(seed, "init")
}

/// Trains one model per method in `group` on `train_set` (already
/// corrected for resampling), sharing a trajectory.
fn train_group(
    data: &Prepared,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    group: &[Method],
    train_set: &[EncodedConversation],
    weights: [f64; 4],
    seed: u64,
) -> Result<Vec<RunResult>> {
    let specs = group
        .iter()
        .map(|&m| data.correction(m, seed))
        .collect::<Result<Vec<_>>>()?;
    let model = Model::new(
        model_config.clone().with_vocab(&data.vocab),
        init_seed(seed),
    )?;
    let config = TrainConfig {
        seed,
        ..train_config.clone()
    };
    let trained = fit_selecting(model, train_set, &data.dev, &config, &weights, &specs)?;
    Ok(group
        .iter()
        .zip(specs)
        .zip(trained)
        .map(|((&method, spec), trained)| RunResult {
            method,
            seed,
            trained,
            spec,
        })
        .collect())
}

/// Single-model runs for every method in `group` at one seed.
pub fn run_single(
    data: &Prepared,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    group: &[Method],
    seed: u64,
) -> Result<Vec<RunResult>> {
    let lead = data.correction(group[0], seed)?;
    let (set, weights) = prepare(&data.train, &lead, train_config.class_weights)?;
    train_group(data, model_config, train_config, group, &set, weights, seed)
}

/// Trains and reports one method at one seed (the `train` + `eval` flow).
pub fn train_one(
    data: &Prepared,
    config: &ExperimentConfig,
    method: Method,
    seed: u64,
) -> Result<RunResult> {
    let mut runs = run_single(data, &config.model, &config.train, &[method], seed)?;
    Ok(runs.remove(0))
}

pub fn evaluate_run(run: &RunResult, data: &Prepared) -> Result<EvalReport> {
    let raw = run.trained.model.predict(&data.test, EVAL_BATCH)?;
    evaluate_predictions(&raw, &data.test, &run.spec, run.method.label())
}

/// Training sets of the ensemble members for `group`: bag `k` is drawn
/// from `seed` and corrected by the group's resampling method, so all
/// methods see the same bootstrap draws.
fn ensemble_bags(
    data: &Prepared,
    config: &ExperimentConfig,
    group: &[Method],
    seed: u64,
) -> Result<(Vec<Vec<EncodedConversation>>, [f64; 4])> {
    let lead = data.correction(group[0], seed)?;
    let bags = make_bags(&data.train, config.ensemble_size, &lead, seed)?;
    let weights = if lead.method == Method::CostSensitive {
        class_weights(&lead.p_r, &lead.p_s)?
    } else {
        config.train.class_weights
    };
    Ok((bags, weights))
}

fn member_seed(seed: u64, k: usize) -> u64 {
    seeds::derive_named(seeds::derive(seed, k as u64), "member")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub label: String,
    pub members: usize,
    pub report: EvalReport,
    /// Validation F1 of each member, in member order.
    pub member_val_f1: Vec<f64>,
}

/// Combines members of one method into an ensemble report.
pub fn ensemble_report(
    members: &[RunResult],
    member_preds: &[Vec<PredictionVector>],
    data: &Prepared,
    combine: Combine,
    label: &str,
) -> Result<EnsembleResult> {
    let first = members
        .first()
        .ok_or_else(|| Error::contract("ensemble without members"))?;
    let combined = bag_ensemble(member_preds, combine)?;
    let report = evaluate_predictions(&combined, &data.test, &first.spec, label)?;
    Ok(EnsembleResult {
        label: label.to_string(),
        members: members.len(),
        report,
        member_val_f1: members.iter().map(|m| m.trained.best_val_f1).collect(),
    })
}

/// Pools the best members (by validation F1) of every method round-robin
/// until `size` members are chosen. Returns `(method index, member index)`.
pub fn mixed_selection(per_method: &[Vec<f64>], size: usize) -> Vec<(usize, usize)> {
    let ranked: Vec<Vec<usize>> = per_method
        .iter()
        .map(|f1s| {
            let mut idx: Vec<usize> = (0..f1s.len()).collect();
            idx.sort_by(|&a, &b| f1s[b].total_cmp(&f1s[a]).then(a.cmp(&b)));
            idx
        })
        .collect();
    let mut chosen = Vec::with_capacity(size);
    let depth = ranked.iter().map(Vec::len).max().unwrap_or(0);
    'outer: for rank in 0..depth {
        for (m, order) in ranked.iter().enumerate() {
            if chosen.len() == size {
                break 'outer;
            }
            if let Some(&k) = order.get(rank) {
                chosen.push((m, k));
            }
        }
    }
    chosen
}

pub const MIXED_LABEL: &str = "mixed";

/// Everything `compare` produces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Comparison {
    pub methods: Vec<Method>,
    pub singles: Vec<Vec<EvalReport>>,
    pub single_summaries: Vec<Summary>,
    pub ensembles: Vec<EnsembleResult>,
    pub mixed: Option<EnsembleResult>,
    pub test_gold: ClassDistribution,
}

impl Comparison {
    pub fn summary(&self, method: Method) -> Option<&Summary> {
        self.methods
            .iter()
            .position(|&m| m == method)
            .map(|i| &self.single_summaries[i])
    }

    pub fn ensemble(&self, method: Method) -> Option<&EnsembleResult> {
        self.ensembles.iter().find(|e| e.label == method.label())
    }
}

/// Thread pool honouring `PRIORSHIFT_THREADS` (unset or 0: rayon default).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var("PRIORSHIFT_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::config(format!("PRIORSHIFT_THREADS={v:?} is not a number")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))
}

/// Single models over `n_seeds` seeds: one report list and summary per
/// method, in `config.methods` order.
pub fn run_singles(
    config: &ExperimentConfig,
    data: &Prepared,
    threads: &rayon::ThreadPool,
) -> Result<(Vec<Vec<EvalReport>>, Vec<Summary>)> {
    config.validate()?;
    let groups = training_groups(&config.methods);
    let jobs: Vec<(usize, usize)> = (0..groups.len())
        .flat_map(|g| (0..config.n_seeds).map(move |s| (g, s)))
        .collect();
    let reports: Vec<Vec<(Method, EvalReport)>> = threads.install(|| {
        jobs.par_iter()
            .map(|&(g, s)| {
                run_single(
                    data,
                    &config.model,
                    &config.train,
                    &groups[g],
                    config.run_seed(s),
                )?
                .iter()
                .map(|run| Ok((run.method, evaluate_run(run, data)?)))
                .collect()
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let singles: Vec<Vec<EvalReport>> = config
        .methods
        .iter()
        .map(|&m| {
            reports
                .iter()
                .flatten()
                .filter(|(r, _)| *r == m)
                .map(|(_, rep)| rep.clone())
                .collect()
        })
        .collect();
    let summaries = singles
        .iter()
        .map(|r| aggregate(r))
        .collect::<Result<Vec<_>>>()?;
    Ok((singles, summaries))
}

/// One bagged ensemble per method, plus the mixed ensemble when every
/// method is present.
pub fn run_ensembles(
    config: &ExperimentConfig,
    data: &Prepared,
    threads: &rayon::ThreadPool,
) -> Result<(Vec<EnsembleResult>, Option<EnsembleResult>)> {
    config.validate()?;
    let methods = &config.methods;
    let groups = training_groups(methods);
    let seed = seeds::derive_named(config.train.seed, "ensemble");
    let bags = groups
        .iter()
        .map(|g| ensemble_bags(data, config, g, seed))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..groups.len())
        .flat_map(|g| (0..config.ensemble_size).map(move |k| (g, k)))
        .collect();
    let trained: Vec<Vec<(RunResult, Vec<PredictionVector>)>> = threads.install(|| {
        jobs.par_iter()
            .map(|&(g, k)| {
                let (sets, weights) = &bags[g];
                let runs = train_group(
                    data,
                    &config.model,
                    &config.train,
                    &groups[g],
                    &sets[k],
                    *weights,
                    member_seed(seed, k),
                )?;
                runs.into_iter()
                    .map(|run| {
                        let preds = run.trained.model.predict(&data.test, EVAL_BATCH)?;
                        Ok((run, preds))
                    })
                    .collect()
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut members: Vec<Vec<(RunResult, Vec<PredictionVector>)>> = vec![Vec::new(); methods.len()];
    for (run, preds) in trained.into_iter().flatten() {
        let i = methods
            .iter()
            .position(|&m| m == run.method)
            .expect("method in list");
        members[i].push((run, preds));
    }

    let mut ensembles = Vec::with_capacity(methods.len());
    for (method, ms) in methods.iter().zip(&members) {
        let runs: Vec<RunResult> = ms.iter().map(|(r, _)| r.clone()).collect();
        let preds: Vec<Vec<PredictionVector>> = ms.iter().map(|(_, p)| p.clone()).collect();
        ensembles.push(ensemble_report(
            &runs,
            &preds,
            data,
            config.combine,
            method.label(),
        )?);
    }

    let all_present = Method::ALL.iter().all(|m| methods.contains(m));
    let mixed = if all_present {
        let val_f1: Vec<Vec<f64>> = members
            .iter()
            .map(|ms| ms.iter().map(|(r, _)| r.trained.best_val_f1).collect())
            .collect();
        let chosen = mixed_selection(&val_f1, config.ensemble_size);
        let mut member_preds = Vec::with_capacity(chosen.len());
        let mut member_f1 = Vec::with_capacity(chosen.len());
        for &(m, k) in &chosen {
            let (run, preds) = &members[m][k];
            member_preds.push(run.corrected_predictions(preds)?);
            member_f1.push(run.trained.best_val_f1);
        }
        let combined = bag_ensemble(&member_preds, config.combine)?;
        let spec = data.correction(Method::None, seed)?;
        Some(EnsembleResult {
            label: MIXED_LABEL.to_string(),
            members: chosen.len(),
            report: evaluate_predictions(&combined, &data.test, &spec, MIXED_LABEL)?,
            member_val_f1: member_f1,
        })
    } else {
        None
    };
    Ok((ensembles, mixed))
}

/// Single models and bagged ensembles for every configured method.
pub fn compare(
    config: &ExperimentConfig,
    data: &Prepared,
    threads: &rayon::ThreadPool,
) -> Result<Comparison> {
    let (singles, single_summaries) = run_singles(config, data, threads)?;
    let (ensembles, mixed) = run_ensembles(config, data, threads)?;
    Ok(Comparison {
        methods: config.methods.clone(),
        singles,
        single_summaries,
        ensembles,
        mixed,
        test_gold: data.test_gold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_rides_with_baseline() {
        let groups = training_groups(&Method::ALL);
        assert_eq!(groups.len(), 4);
        assert_eq!(groups[0], vec![Method::None, Method::Threshold]);
        assert_eq!(
            training_groups(&[Method::Threshold]),
            vec![vec![Method::Threshold]]
        );
        assert_eq!(
            training_groups(&[Method::Oversample, Method::Threshold, Method::None]),
            vec![
                vec![Method::Oversample],
                vec![Method::Threshold, Method::None]
            ]
        );
    }

    #[test]
    fn mixed_takes_best_of_each_method() {
        let f1 = vec![vec![0.1, 0.5, 0.3], vec![0.9, 0.2, 0.9], vec![0.4]];
        assert_eq!(
            mixed_selection(&f1, 4),
            vec![(0, 1), (1, 0), (2, 0), (0, 2)]
        );
        assert_eq!(mixed_selection(&f1, 10).len(), 7);
    }

    #[test]
    fn run_seeds_start_at_training_seed() {
        let config = ExperimentConfig {
            train: TrainConfig {
                seed: 40,
                ..TrainConfig::default()
            },
            ..ExperimentConfig::default()
        };
        assert_eq!(config.run_seed(0), 40);
        assert_eq!(config.run_seed(3), 43);
    }

    #[test]
    fn config_round_trips_and_validates() {
        let config = ExperimentConfig::default();
        let json = serde_json::to_string_pretty(&config).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, config);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"n_seeds": 2}"#).unwrap();
        assert_eq!(partial.n_seeds, 2);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"n_sedes": 2}"#).is_err());
        let bad = ExperimentConfig {
            n_seeds: 0,
            ..ExperimentConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let missing = ExperimentConfig {
            data: DataSource::Files {
                train: "/nonexistent/train.tsv".into(),
                dev: "/nonexistent/dev.tsv".into(),
                test: "/nonexistent/test.tsv".into(),
            },
            ..ExperimentConfig::default()
        };
        assert!(matches!(missing.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn default_synthetic_priors() {
        let s = SynthConfig {
            n_train: 60,
            n_dev: 20,
            n_test: 40,
            ..SynthConfig::default()
        };
        let splits = s.generate().unwrap();
        let counts = |c: &[Conversation]| estimate_distribution(c).unwrap().counts().unwrap();
        assert_eq!(counts(&splits.train), [10, 10, 10, 30]);
        assert_eq!(counts(&splits.dev), [1, 1, 1, 17]);
        assert_eq!(counts(&splits.test), [2, 2, 2, 34]);
    }
}
