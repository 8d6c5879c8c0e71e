//! Task metrics, the predicted-vs-actual distribution gap, and aggregation
//! over seeds.

use serde::{Deserialize, Serialize};

use crate::data::{ClassDistribution, Emotion, EncodedConversation, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::shift::{threshold_adjust, CorrectionSpec, Method, PredictionVector};

/// Which classes are pooled into the micro-averaged F1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Variant {
    /// happy, sad and angry; `others` is excluded from pooling.
    #[default]
    Emotional,
    /// All four classes (equals accuracy for single-label data).
    AllClasses,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicroF1 {
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// Nothing to pool: no pooled class was predicted or present.
    pub degenerate: bool,
}

fn check_lengths(preds: &[usize], golds: &[usize]) -> Result<()> {
    if preds.len() != golds.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::contract("no examples to score"));
    }
    if let Some(&bad) = preds.iter().chain(golds).find(|&&c| c >= NUM_CLASSES) {
        return Err(Error::Index {
            what: "class",
            index: bad,
            size: NUM_CLASSES,
        });
    }
    Ok(())
}

pub fn micro_f1(preds: &[usize], golds: &[usize], variant: F1Variant) -> Result<MicroF1> {
    check_lengths(preds, golds)?;
    let pooled = |c: usize| variant == F1Variant::AllClasses || c != Emotion::Others.index();
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &g) in preds.iter().zip(golds) {
        if p == g {
            if pooled(p) {
                tp += 1;
            }
        } else {
            if pooled(p) {
                fp += 1;
            }
            if pooled(g) {
                fn_ += 1;
            }
        }
    }
    let denom = 2 * tp + fp + fn_;
    Ok(MicroF1 {
        f1: if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        },
        tp,
        fp,
        fn_,
        degenerate: denom == 0,
    })
}

pub fn micro_f1_emotional(preds: &[usize], golds: &[usize]) -> Result<MicroF1> {
    micro_f1(preds, golds, F1Variant::Emotional)
}

pub fn accuracy(preds: &[usize], golds: &[usize]) -> Result<f64> {
    check_lengths(preds, golds)?;
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// `0.5 * sum_c |a[c] - b[c]|`.
pub fn tv_distance(a: &ClassDistribution, b: &ClassDistribution) -> f64 {
    0.5 * (0..NUM_CLASSES)
        .map(|c| (a.prob(c) - b.prob(c)).abs())
        .sum::<f64>()
}

fn distribution_of(labels: &[usize]) -> Result<ClassDistribution> {
    let mut counts = [0u64; NUM_CLASSES];
    for &c in labels {
        counts[c] += 1;
    }
    ClassDistribution::from_counts(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub seed: u64,
    pub n_examples: usize,
    pub accuracy: f64,
    pub micro_f1_emotional: f64,
    pub f1_degenerate: bool,
    pub micro_f1_all: f64,
    /// Indexed by class (happy, sad, angry, others).
    pub per_class: [ClassMetrics; NUM_CLASSES],
    pub predicted: ClassDistribution,
    pub gold: ClassDistribution,
    pub tv_distance: f64,
}

const CSV_HEADER: &str =
    "method,seed,n_examples,accuracy,micro_f1_emotional,micro_f1_all,tv_distance,\
pred_happy,pred_sad,pred_angry,pred_others,gold_happy,gold_sad,gold_angry,gold_others";

impl EvalReport {
    pub fn from_labels(preds: &[usize], golds: &[usize], method: &str, seed: u64) -> Result<Self> {
        let f1 = micro_f1_emotional(preds, golds)?;
        let per_class = std::array::from_fn(|c| {
            let tp = preds
                .iter()
                .zip(golds)
                .filter(|(p, g)| **p == c && **g == c)
                .count() as f64;
            let predicted = preds.iter().filter(|p| **p == c).count() as f64;
            let actual = golds.iter().filter(|g| **g == c).count() as f64;
            let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let recall = if actual > 0.0 { tp / actual } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
            }
        });
        let predicted = distribution_of(preds)?;
        let gold = distribution_of(golds)?;
        Ok(EvalReport {
            method: method.to_string(),
            seed,
            n_examples: preds.len(),
            accuracy: accuracy(preds, golds)?,
            micro_f1_emotional: f1.f1,
            f1_degenerate: f1.degenerate,
            micro_f1_all: micro_f1(preds, golds, F1Variant::AllClasses)?.f1,
            per_class,
            tv_distance: tv_distance(&predicted, &gold),
            predicted,
            gold,
        })
    }

    pub fn csv_header() -> &'static str {
        CSV_HEADER
    }

    pub fn csv_row(&self) -> String {
        let mut fields = vec![
            self.method.clone(),
            self.seed.to_string(),
            self.n_examples.to_string(),
            self.accuracy.to_string(),
            self.micro_f1_emotional.to_string(),
            self.micro_f1_all.to_string(),
            self.tv_distance.to_string(),
        ];
        fields.extend(self.predicted.probs().iter().map(f64::to_string));
        fields.extend(self.gold.probs().iter().map(f64::to_string));
        fields.join(",")
    }
}

/// Applies the inference-side part of `spec` (thresholding) to raw model
/// posteriors.
pub fn adjust_predictions(
    preds: &[PredictionVector],
    spec: &CorrectionSpec,
) -> Result<Vec<PredictionVector>> {
    if spec.method != Method::Threshold {
        return Ok(preds.to_vec());
    }
    preds
        .iter()
        .map(|p| threshold_adjust(p, &spec.p_r, &spec.p_s, false))
        .collect()
}

fn gold_labels(data: &[EncodedConversation]) -> Result<Vec<usize>> {
    data.iter()
        .map(|e| e.label)
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::contract("evaluation data has unlabelled examples"))
}

/// Scores raw posteriors (single model or ensemble) against labelled data.
pub fn evaluate_predictions(
    raw: &[PredictionVector],
    data: &[EncodedConversation],
    spec: &CorrectionSpec,
    label: &str,
) -> Result<EvalReport> {
    let golds = gold_labels(data)?;
    let preds: Vec<usize> = adjust_predictions(raw, spec)?
        .iter()
        .map(|p| p.predicted_class)
        .collect();
    EvalReport::from_labels(&preds, &golds, label, spec.seed)
}

pub fn evaluate(
    model: &Model,
    data: &[EncodedConversation],
    spec: &CorrectionSpec,
) -> Result<EvalReport> {
    gold_labels(data)?;
    let raw = model.predict(data, EVAL_BATCH)?;
    evaluate_predictions(&raw, data, spec, spec.method.label())
}

/// Batch size used for inference.
pub const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::contract("no values to aggregate"));
        }
        let n = values.len() as f64;
        let mean = if values.iter().all(|v| *v == values[0]) {
            values[0]
        } else {
            values.iter().sum::<f64>() / n
        };
        let std = if values.iter().all(|v| *v == values[0]) {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Ok(MeanStd { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub runs: usize,
    pub accuracy: MeanStd,
    pub micro_f1_emotional: MeanStd,
    pub tv_distance: MeanStd,
    /// Mean predicted distribution across runs.
    pub predicted: [f64; NUM_CLASSES],
}

pub fn aggregate(reports: &[EvalReport]) -> Result<Summary> {
    let first = reports
        .first()
        .ok_or_else(|| Error::contract("no reports to aggregate"))?;
    let pick = |f: fn(&EvalReport) -> f64| -> Result<MeanStd> {
        MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>())
    };
    let n = reports.len() as f64;
    let predicted =
        std::array::from_fn(|c| reports.iter().map(|r| r.predicted.prob(c)).sum::<f64>() / n);
    Ok(Summary {
        method: first.method.clone(),
        runs: reports.len(),
        accuracy: pick(|r| r.accuracy)?,
        micro_f1_emotional: pick(|r| r.micro_f1_emotional)?,
        tv_distance: pick(|r| r.tv_distance)?,
        predicted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{estimate_distribution, Conversation};
    use proptest::prelude::*;

    const H: usize = 0;
    const S: usize = 1;
    const O: usize = 3;

    #[test]
    fn pooled_counts() {
        let f = micro_f1_emotional(&[H, O, S, O], &[H, S, O, O]).unwrap();
        assert_eq!((f.tp, f.fp, f.fn_), (1, 1, 1));
        assert_eq!(f.f1, 0.5);
        assert!(!f.degenerate);
    }

    #[test]
    fn perfect_and_degenerate() {
        assert_eq!(
            micro_f1_emotional(&[H, S, 2, O], &[H, S, 2, O]).unwrap().f1,
            1.0
        );
        let f = micro_f1_emotional(&[O, O], &[O, O]).unwrap();
        assert_eq!(f.f1, 0.0);
        assert!(f.degenerate);
        assert_eq!(
            micro_f1(&[O, O], &[O, O], F1Variant::AllClasses)
                .unwrap()
                .f1,
            1.0
        );
    }

    #[test]
    fn length_mismatch_is_contract_error() {
        assert!(matches!(
            micro_f1_emotional(&[H], &[H, S]),
            Err(Error::Contract(_))
        ));
        assert!(matches!(accuracy(&[], &[]), Err(Error::Contract(_))));
    }

    #[test]
    fn tv_examples() {
        let a = ClassDistribution::from_probs([1.0, 0.0, 0.0, 0.0]).unwrap();
        let b = ClassDistribution::from_probs([0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(tv_distance(&a, &a), 0.0);
        assert_eq!(tv_distance(&a, &b), 1.0);
        let c = ClassDistribution::from_probs([0.85, 0.05, 0.05, 0.05]).unwrap();
        let d = ClassDistribution::from_probs([0.5, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0]).unwrap();
        let direct = 0.5 * (0.35 + 3.0 * (1.0 / 6.0 - 0.05));
        assert!((tv_distance(&c, &d) - direct).abs() < 1e-12);
        assert!((tv_distance(&c, &d) - 0.35).abs() < 1e-12);
    }

    #[test]
    fn report_fields() {
        let preds = [H, O, S, O, O];
        let golds = [H, S, O, O, O];
        let spec = CorrectionSpec::none();
        let data: Vec<EncodedConversation> = golds
            .iter()
            .map(|&g| EncodedConversation {
                words: Default::default(),
                chars: Default::default(),
                label: Some(g),
            })
            .collect();
        let raw: Vec<PredictionVector> = preds
            .iter()
            .map(|&p| {
                let mut probs = [0.1; 4];
                probs[p] = 0.7;
                PredictionVector::from_probs(probs)
            })
            .collect();
        let report = evaluate_predictions(&raw, &data, &spec, spec.method.label()).unwrap();
        assert_eq!(report.method, "baseline");
        assert_eq!(report.n_examples, 5);
        assert_eq!(report.accuracy, 0.6);
        assert_eq!(report.micro_f1_emotional, 0.5);
        assert_eq!(report.per_class[O].precision, 2.0 / 3.0);

        // the predicted distribution matches the data-side estimator run on
        // conversations relabelled with the predictions
        let relabelled: Vec<Conversation> = preds
            .iter()
            .enumerate()
            .map(|(i, &p)| Conversation {
                id: i.to_string(),
                turns: Default::default(),
                label: Emotion::from_index(p),
            })
            .collect();
        let estimated = estimate_distribution(&relabelled).unwrap();
        assert_eq!(report.predicted.probs(), estimated.probs());

        let json = serde_json::to_string(&report).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
        assert_eq!(
            report.csv_row().split(',').count(),
            EvalReport::csv_header().split(',').count()
        );
    }

    #[test]
    fn unlabelled_data_rejected() {
        let data = vec![EncodedConversation {
            words: Default::default(),
            chars: Default::default(),
            label: None,
        }];
        let raw = vec![PredictionVector::from_probs([0.25; 4])];
        let err = evaluate_predictions(&raw, &data, &CorrectionSpec::none(), "baseline");
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn identical_reports_have_zero_spread() {
        let r = EvalReport::from_labels(&[H, O], &[H, S], "cost", 1).unwrap();
        let s = aggregate(&vec![r.clone(); 10]).unwrap();
        assert_eq!(s.runs, 10);
        assert_eq!(s.micro_f1_emotional.std, 0.0);
        assert_eq!(s.accuracy.mean, r.accuracy);
        assert_eq!(aggregate(&[r]).unwrap().tv_distance.std, 0.0);
    }

    fn labels(n: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        (
            proptest::collection::vec(0usize..4, n),
            proptest::collection::vec(0usize..4, n),
        )
    }

    fn dist() -> impl Strategy<Value = ClassDistribution> {
        proptest::collection::vec(0.0f64..1.0, 4).prop_map(|raw| {
            let s: f64 = raw.iter().sum::<f64>() + 1e-9;
            let p = [
                raw[0] / s,
                raw[1] / s,
                raw[2] / s,
                1.0 - (raw[0] + raw[1] + raw[2]) / s,
            ];
            ClassDistribution::from_probs(p).unwrap()
        })
    }

    proptest! {
        #[test]
        fn f1_is_order_invariant((p, g) in labels(20), seed in any::<u64>()) {
            let mut idx: Vec<usize> = (0..p.len()).collect();
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let (ps, gs): (Vec<usize>, Vec<usize>) = idx.iter().map(|&i| (p[i], g[i])).unzip();
            prop_assert_eq!(micro_f1_emotional(&p, &g).unwrap(), micro_f1_emotional(&ps, &gs).unwrap());
        }

        #[test]
        fn metrics_in_unit_interval((p, g) in labels(15)) {
            let f = micro_f1_emotional(&p, &g).unwrap();
            let a = accuracy(&p, &g).unwrap();
            prop_assert!((0.0..=1.0).contains(&f.f1) && (0.0..=1.0).contains(&a));
            prop_assert_eq!(f.f1 == 1.0, f.fp == 0 && f.fn_ == 0 && f.tp > 0);
        }

        #[test]
        fn tv_is_a_metric(a in dist(), b in dist(), c in dist()) {
            let (ab, ba) = (tv_distance(&a, &b), tv_distance(&b, &a));
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
            prop_assert_eq!(tv_distance(&a, &a), 0.0);
            prop_assert_eq!(ab == 0.0, a.probs() == b.probs());
            prop_assert!(ab <= tv_distance(&a, &c) + tv_distance(&c, &b) + 1e-12);
        }
    }
}
