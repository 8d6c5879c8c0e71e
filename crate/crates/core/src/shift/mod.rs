//! Classifier-agnostic corrections for a gap between training-time class
//! priors `p_r` and the target priors `p_s` estimated on validation data.
//!
//! * [`resample`]: random over- or undersampling of the training set until
//!   its class ratios match `p_s`.
//! * [`threshold_adjust`]: rescale posteriors by `p_s(c) / p_r(c)` at
//!   inference time.
//! * [`class_weights`]: the same ratio used as per-class weights for the
//!   cross-entropy loss during training.
//! * [`make_bags`] / [`bag_ensemble`]: bootstrap bags (optionally resampled)
//!   and the rules that combine member predictions.

mod ensemble;
mod resample;
mod threshold;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use ensemble::{bag_ensemble, bootstrap, make_bags, Combine};
pub use resample::{resample, ResampleMode};
pub use threshold::{class_weights, prior_ratio, threshold_adjust};

use crate::data::{ClassDistribution, Conversation, EncodedConversation, NUM_CLASSES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    None,
    Oversample,
    Undersample,
    Threshold,
    CostSensitive,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::None,
        Method::Oversample,
        Method::Undersample,
        Method::Threshold,
        Method::CostSensitive,
    ];

    /// Name used in reports and tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::None => "baseline",
            Method::Oversample => "oversample",
            Method::Undersample => "undersample",
            Method::Threshold => "threshold",
            Method::CostSensitive => "cost",
        }
    }

    pub fn resample_mode(self) -> Option<ResampleMode> {
        match self {
            Method::Oversample => Some(ResampleMode::Over),
            Method::Undersample => Some(ResampleMode::Under),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "baseline" => Ok(Method::None),
            "oversample" | "over" => Ok(Method::Oversample),
            "undersample" | "under" => Ok(Method::Undersample),
            "threshold" => Ok(Method::Threshold),
            "cost_sensitive" | "cost-sensitive" | "cost" => Ok(Method::CostSensitive),
            other => Err(Error::config(format!("unknown method {other:?}"))),
        }
    }
}

/// Which correction to apply, with the source and target priors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionSpec {
    pub method: Method,
    pub p_r: ClassDistribution,
    pub p_s: ClassDistribution,
    pub seed: u64,
}

impl CorrectionSpec {
    pub fn new(
        method: Method,
        p_r: ClassDistribution,
        p_s: ClassDistribution,
        seed: u64,
    ) -> Result<Self> {
        let spec = CorrectionSpec {
            method,
            p_r,
            p_s,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn none() -> Self {
        CorrectionSpec {
            method: Method::None,
            p_r: ClassDistribution::uniform(),
            p_s: ClassDistribution::uniform(),
            seed: 0,
        }
    }

    pub fn with_method(self, method: Method) -> Result<Self> {
        Self::new(method, self.p_r, self.p_s, self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        if matches!(self.method, Method::Threshold | Method::CostSensitive) {
            for c in 0..NUM_CLASSES {
                if self.p_s.prob(c) > 0.0 && self.p_r.prob(c) == 0.0 {
                    return Err(Error::config(format!(
                        "class {c} has target prior {} but zero training prior",
                        self.p_s.prob(c)
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-example class scores. `normalized` is false for raw rescaled scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionVector {
    pub probs: [f64; NUM_CLASSES],
    pub predicted_class: usize,
    pub normalized: bool,
}

impl PredictionVector {
    pub fn from_probs(probs: [f64; NUM_CLASSES]) -> Self {
        PredictionVector {
            probs,
            predicted_class: argmax(&probs),
            normalized: true,
        }
    }

    pub fn from_scores(scores: [f64; NUM_CLASSES]) -> Self {
        PredictionVector {
            normalized: false,
            ..Self::from_probs(scores)
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Anything carrying an optional class index.
pub trait Labeled {
    fn class(&self) -> Option<usize>;
}

impl Labeled for Conversation {
    fn class(&self) -> Option<usize> {
        self.label_index()
    }
}

impl Labeled for EncodedConversation {
    fn class(&self) -> Option<usize> {
        self.label
    }
}

impl Labeled for usize {
    fn class(&self) -> Option<usize> {
        Some(*self)
    }
}

/// Class counts of a labelled collection.
pub fn class_counts<T: Labeled>(items: &[T]) -> Result<[usize; NUM_CLASSES]> {
    let mut counts = [0; NUM_CLASSES];
    for item in items {
        let c = item
            .class()
            .ok_or_else(|| Error::contract("unlabelled example in a labelled set"))?;
        if c >= NUM_CLASSES {
            return Err(Error::Index {
                what: "class",
                index: c,
                size: NUM_CLASSES,
            });
        }
        counts[c] += 1;
    }
    Ok(counts)
}
