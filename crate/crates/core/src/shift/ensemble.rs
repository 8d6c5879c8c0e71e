use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::resample::bootstrap_indices;
use super::{argmax, resample, CorrectionSpec, Labeled, PredictionVector};
use crate::data::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::seeds;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    #[default]
    ProbMean,
    MajorityVote,
}

/// Combines per-member predictions for the same examples. `ProbMean`
/// averages the score vectors; `MajorityVote` takes the modal predicted
/// class, breaking ties by the averaged scores.
pub fn bag_ensemble(
    members: &[Vec<PredictionVector>],
    combine: Combine,
) -> Result<Vec<PredictionVector>> {
    let first = members
        .first()
        .ok_or_else(|| Error::contract("ensemble needs at least one member"))?;
    if members.iter().any(|m| m.len() != first.len()) {
        return Err(Error::contract(
            "ensemble members predicted different numbers of examples",
        ));
    }
    let k = members.len() as f64;
    let combined = (0..first.len())
        .map(|i| {
            let mut mean = [0.0; NUM_CLASSES];
            for m in members {
                for (acc, p) in mean.iter_mut().zip(&m[i].probs) {
                    *acc += p;
                }
            }
            for v in &mut mean {
                *v /= k;
            }
            let normalized = members.iter().all(|m| m[i].normalized);
            let predicted_class = match combine {
                Combine::ProbMean => argmax(&mean),
                Combine::MajorityVote => {
                    let mut votes = [0usize; NUM_CLASSES];
                    for m in members {
                        votes[m[i].predicted_class] += 1;
                    }
                    let top = *votes.iter().max().expect("non-empty");
                    // argmax of the mean restricted to the modal classes
                    let masked = std::array::from_fn::<f64, NUM_CLASSES, _>(|c| {
                        if votes[c] == top {
                            mean[c]
                        } else {
                            f64::NEG_INFINITY
                        }
                    });
                    argmax(&masked)
                }
            };
            PredictionVector {
                probs: mean,
                predicted_class,
                normalized,
            }
        })
        .collect();
    Ok(combined)
}

/// `train` resampled with replacement to its own size.
pub fn bootstrap<T: Clone>(train: &[T], seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    bootstrap_indices(train.len(), &mut rng)
        .into_iter()
        .map(|i| train[i].clone())
        .collect()
}

/// One training set per ensemble member: a bootstrap bag followed by the
/// member's resampling correction (if its method resamples). Member `m`
/// draws from seeds derived from `(seed, m)`.
pub fn make_bags<T: Labeled + Clone>(
    train: &[T],
    n_members: usize,
    correction: &CorrectionSpec,
    seed: u64,
) -> Result<Vec<Vec<T>>> {
    if n_members == 0 {
        return Err(Error::contract("ensemble needs at least one member"));
    }
    (0..n_members as u64)
        .map(|m| {
            let member_seed = seeds::derive(seed, m);
            let bag = bootstrap(train, seeds::derive_named(member_seed, "bootstrap"));
            match correction.method.resample_mode() {
                Some(mode) => resample(
                    &bag,
                    &correction.p_s,
                    mode,
                    seeds::derive_named(member_seed, "resample"),
                ),
                None => Ok(bag),
            }
        })
        .collect()
}
