use serde::{Deserialize, Serialize};

use super::NUM_CLASSES;
use crate::error::{Error, Result};

/// Slack for float products that should land on an integer.
const ROUNDING_SLACK: f64 = 1e-9;

/// Probability vector over the four classes, with raw counts when it was
/// estimated from data. Serializes as the bare probability array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; NUM_CLASSES]", into = "[f64; NUM_CLASSES]")]
pub struct ClassDistribution {
    counts: Option<[u64; NUM_CLASSES]>,
    probs: [f64; NUM_CLASSES],
}

impl ClassDistribution {
    pub fn from_counts(counts: [u64; NUM_CLASSES]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::contract("class counts sum to zero"));
        }
        let probs = counts.map(|c| c as f64 / total as f64);
        Ok(ClassDistribution {
            counts: Some(counts),
            probs,
        })
    }

    /// Probabilities must be non-negative and sum to one within 1e-9.
    pub fn from_probs(probs: [f64; NUM_CLASSES]) -> Result<Self> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::config(format!(
                "invalid class probabilities {probs:?}"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "class probabilities {probs:?} sum to {total}"
            )));
        }
        Ok(ClassDistribution {
            counts: None,
            probs,
        })
    }

    pub fn uniform() -> Self {
        ClassDistribution {
            counts: None,
            probs: [1.0 / NUM_CLASSES as f64; NUM_CLASSES],
        }
    }

    pub fn probs(&self) -> &[f64; NUM_CLASSES] {
        &self.probs
    }

    pub fn prob(&self, class: usize) -> f64 {
        self.probs[class]
    }

    pub fn counts(&self) -> Option<[u64; NUM_CLASSES]> {
        self.counts
    }

    pub fn total(&self) -> Option<u64> {
        self.counts.map(|c| c.iter().sum())
    }
}

impl TryFrom<[f64; NUM_CLASSES]> for ClassDistribution {
    type Error = Error;

    fn try_from(probs: [f64; NUM_CLASSES]) -> Result<Self> {
        Self::from_probs(probs)
    }
}

impl From<ClassDistribution> for [f64; NUM_CLASSES] {
    fn from(d: ClassDistribution) -> Self {
        d.probs
    }
}

/// Integer counts summing to exactly `total`: floors of `probs * total`, with
/// the leftover handed out by largest fractional part (ties to lower index).
pub fn largest_remainder(probs: &[f64; NUM_CLASSES], total: usize) -> [usize; NUM_CLASSES] {
    let exact = probs.map(|p| p * total as f64);
    let mut counts = exact.map(|x| (x + ROUNDING_SLACK).floor().max(0.0) as usize);
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..NUM_CLASSES).collect();
    let frac = |c: usize| exact[c] - counts[c] as f64;
    order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
    for &c in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[c] += 1;
    }
    counts
}
