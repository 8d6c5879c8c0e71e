use super::PredictionVector;
use crate::data::{ClassDistribution, NUM_CLASSES};
use crate::error::{Error, Result};

/// `p_s(c) / p_r(c)` per class. Classes with zero training prior get a
/// ratio of zero when their target prior is also zero and are rejected
/// otherwise.
pub fn prior_ratio(p_r: &ClassDistribution, p_s: &ClassDistribution) -> Result<[f64; NUM_CLASSES]> {
    let mut ratio = [0.0; NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        let (r, s) = (p_r.prob(c), p_s.prob(c));
        ratio[c] = if r > 0.0 {
            s / r
        } else if s == 0.0 {
            0.0
        } else {
            return Err(Error::contract(format!(
                "class {c}: target prior {s} with zero training prior"
            )));
        };
    }
    Ok(ratio)
}

/// Posterior rescaling `score[c] = p_s(c) / p_r(c) * p(c|x)`. Scores are
/// returned raw (`normalized == false`) unless `renormalize` is set; the
/// decision is the same either way.
pub fn threshold_adjust(
    p: &PredictionVector,
    p_r: &ClassDistribution,
    p_s: &ClassDistribution,
    renormalize: bool,
) -> Result<PredictionVector> {
    for c in 0..NUM_CLASSES {
        if p.probs[c] > 0.0 && p_r.prob(c) == 0.0 {
            return Err(Error::contract(format!(
                "class {c} has probability {} but zero training prior",
                p.probs[c]
            )));
        }
    }
    let ratio = prior_ratio(p_r, p_s)?;
    let mut scores = [0.0; NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        scores[c] = ratio[c] * p.probs[c];
    }
    if !renormalize {
        return Ok(PredictionVector::from_scores(scores));
    }
    let total: f64 = scores.iter().sum();
    if total <= 0.0 {
        return Err(Error::contract("all rescaled scores are zero"));
    }
    Ok(PredictionVector::from_probs(scores.map(|s| s / total)))
}

/// Per-class cross-entropy weights `(N^r / N_c^r) * (N_c^s / N^s)`, which
/// equals the thresholding ratio `p_s(c) / p_r(c)`. Every class needs
/// training support.
pub fn class_weights(
    p_r: &ClassDistribution,
    p_s: &ClassDistribution,
) -> Result<[f64; NUM_CLASSES]> {
    if let Some(c) = (0..NUM_CLASSES).find(|&c| p_r.prob(c) == 0.0) {
        return Err(Error::contract(format!(
            "class {c} has no training examples"
        )));
    }
    prior_ratio(p_r, p_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shift::argmax;
    use proptest::prelude::*;

    fn dist(p: [f64; 4]) -> ClassDistribution {
        ClassDistribution::from_probs(p).unwrap()
    }

    fn train_prior() -> ClassDistribution {
        dist([1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 0.5])
    }

    fn test_prior() -> ClassDistribution {
        dist([0.05, 0.05, 0.05, 0.85])
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn rescaling_flips_happy_to_others() {
        let p = PredictionVector::from_probs([0.40, 0.30, 0.20, 0.10]);
        assert_eq!(p.predicted_class, 0);
        let adj = threshold_adjust(&p, &train_prior(), &test_prior(), false).unwrap();
        assert!(close(&adj.probs, &[0.12, 0.09, 0.06, 0.17]));
        assert!(!adj.normalized);
        assert_eq!(adj.predicted_class, 3);
    }

    #[test]
    fn confident_happy_survives() {
        let p = PredictionVector::from_probs([0.60, 0.20, 0.10, 0.10]);
        let adj = threshold_adjust(&p, &train_prior(), &test_prior(), false).unwrap();
        assert!(close(&adj.probs, &[0.18, 0.06, 0.03, 0.17]));
        assert_eq!(adj.predicted_class, 0);
    }

    #[test]
    fn identity_priors() {
        let p = PredictionVector::from_probs([0.1, 0.2, 0.3, 0.4]);
        let adj = threshold_adjust(&p, &train_prior(), &train_prior(), false).unwrap();
        assert_eq!(adj.probs, p.probs);
        assert_eq!(adj.predicted_class, p.predicted_class);
    }

    #[test]
    fn zero_prior_with_mass_is_contract_error() {
        let p_r = dist([0.0, 0.5, 0.0, 0.5]);
        let p = PredictionVector::from_probs([0.25; 4]);
        assert!(matches!(
            threshold_adjust(&p, &p_r, &test_prior(), false),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            class_weights(&p_r, &test_prior()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn weight_examples() {
        let w = class_weights(&train_prior(), &test_prior()).unwrap();
        assert!(close(&w, &[0.3, 0.3, 0.3, 1.7]));
        assert_eq!(
            class_weights(&train_prior(), &train_prior()).unwrap(),
            [1.0; 4]
        );

        let counts_r = ClassDistribution::from_counts([1000, 1000, 1000, 3000]).unwrap();
        let counts_s = ClassDistribution::from_counts([10, 10, 10, 170]).unwrap();
        let w = class_weights(&counts_r, &counts_s).unwrap();
        let by_counts: Vec<f64> = (0..4)
            .map(|c| {
                let (nr, ns) = (6000.0, 200.0);
                let ncr = [1000.0, 1000.0, 1000.0, 3000.0][c];
                let ncs = [10.0, 10.0, 10.0, 170.0][c];
                nr / ncr * (ncs / ns)
            })
            .collect();
        assert!(close(&w, &by_counts));
    }

    fn distribution() -> impl Strategy<Value = ClassDistribution> {
        proptest::collection::vec(0.001f64..1.0, NUM_CLASSES).prop_map(|raw| {
            let s: f64 = raw.iter().sum();
            dist([raw[0] / s, raw[1] / s, raw[2] / s, raw[3] / s])
        })
    }

    fn prediction() -> impl Strategy<Value = PredictionVector> {
        proptest::collection::vec(0.0f64..1.0, NUM_CLASSES).prop_map(|raw| {
            let s: f64 = raw.iter().sum::<f64>().max(1e-12);
            PredictionVector::from_probs([raw[0] / s, raw[1] / s, raw[2] / s, raw[3] / s])
        })
    }

    proptest! {
        #[test]
        fn equal_priors_keep_argmax(p in prediction(), d in distribution()) {
            let adj = threshold_adjust(&p, &d, &d, false).unwrap();
            prop_assert_eq!(adj.predicted_class, argmax(&p.probs));
        }

        #[test]
        fn weights_equal_threshold_factor(p_r in distribution(), p_s in distribution()) {
            let w = class_weights(&p_r, &p_s).unwrap();
            let unit = PredictionVector::from_probs([1.0; 4]);
            let factor = threshold_adjust(&unit, &p_r, &p_s, false).unwrap().probs;
            for c in 0..NUM_CLASSES {
                prop_assert_eq!(w[c], p_s.prob(c) / p_r.prob(c));
                prop_assert_eq!(w[c], factor[c]);
            }
        }

        #[test]
        fn renormalized_is_distribution(p in prediction(), p_r in distribution(), p_s in distribution()) {
            let adj = threshold_adjust(&p, &p_r, &p_s, true).unwrap();
            prop_assert!(adj.normalized);
            prop_assert!((adj.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(adj.probs.iter().all(|v| *v >= 0.0));
            let raw = threshold_adjust(&p, &p_r, &p_s, false).unwrap();
            prop_assert_eq!(raw.predicted_class, adj.predicted_class);
        }
    }
}
