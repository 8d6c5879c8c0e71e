use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{class_counts, Labeled};
use crate::data::{largest_remainder, ClassDistribution, NUM_CLASSES};
use crate::error::{Error, Result};

const SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleMode {
    Over,
    Under,
}

/// Target class counts for resampling `counts` toward `target`.
///
/// The scale is anchored on the class whose count must not move: the one
/// with the largest `count / target` ratio when oversampling and the
/// smallest when undersampling. The output size is that anchor-implied
/// total rounded toward feasibility (up for over, down for under) and the
/// per-class counts are its largest-remainder split, so oversampling never
/// drops below an original count and undersampling never exceeds one.
pub(crate) fn target_counts(
    counts: &[usize; NUM_CLASSES],
    target: &ClassDistribution,
    mode: ResampleMode,
) -> Result<[usize; NUM_CLASSES]> {
    for c in 0..NUM_CLASSES {
        if target.prob(c) > 0.0 && counts[c] == 0 {
            return Err(Error::config(format!(
                "class {c} has target prior {} but no training examples",
                target.prob(c)
            )));
        }
        if mode == ResampleMode::Over && target.prob(c) == 0.0 && counts[c] > 0 {
            return Err(Error::config(format!(
                "oversampling cannot reach zero prior for class {c} without discarding examples"
            )));
        }
    }
    let ratios = (0..NUM_CLASSES)
        .filter(|&c| target.prob(c) > 0.0)
        .map(|c| counts[c] as f64 / target.prob(c));
    let total = match mode {
        ResampleMode::Over => {
            let scale = ratios.fold(0.0, f64::max);
            (scale - SLACK).ceil()
        }
        ResampleMode::Under => {
            let scale = ratios.fold(f64::INFINITY, f64::min);
            (scale + SLACK).floor()
        }
    };
    Ok(largest_remainder(target.probs(), total as usize))
}

/// Random over- or undersampling so the class ratios of `train` match
/// `target`. Oversampling keeps every original (in order) and appends
/// duplicates drawn with replacement; undersampling keeps a uniformly random
/// subset of each class, in original order.
pub fn resample<T: Labeled + Clone>(
    train: &[T],
    target: &ClassDistribution,
    mode: ResampleMode,
    seed: u64,
) -> Result<Vec<T>> {
    let counts = class_counts(train)?;
    let wanted = target_counts(&counts, target, mode)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: [Vec<usize>; NUM_CLASSES] = Default::default();
    for (i, item) in train.iter().enumerate() {
        by_class[item.class().expect("checked by class_counts")].push(i);
    }

    match mode {
        ResampleMode::Over => {
            let mut out = train.to_vec();
            for (members, (have, want)) in by_class.iter().zip(counts.iter().zip(wanted)) {
                for _ in 0..want.saturating_sub(*have) {
                    out.push(train[members[rng.gen_range(0..members.len())]].clone());
                }
            }
            Ok(out)
        }
        ResampleMode::Under => {
            let mut keep = Vec::with_capacity(wanted.iter().sum());
            for (members, want) in by_class.iter().zip(wanted) {
                let picked = index::sample(&mut rng, members.len(), want.min(members.len()));
                keep.extend(picked.into_iter().map(|j| members[j]));
            }
            keep.sort_unstable();
            Ok(keep.into_iter().map(|i| train[i].clone()).collect())
        }
    }
}

/// Sampling `n` indices with replacement.
pub(crate) fn bootstrap_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}
