//! Synthetic three-turn conversations with controllable class priors.
//!
//! Every class owns a pool of marker tokens and a set of templates; a
//! template's first slot is always a marker, the rest mix markers with a
//! shared pool according to `template_overlap`. The last turn is cut from a
//! template of the gold class, the first turn from one of the gold class with
//! probability `context_signal` (else a random class), and the second turn
//! is neutral filler. Token noise swaps tokens for ones taken from another
//! class's templates, which is what makes the classes overlap. A share
//! `borderline_rate` of the last turns instead comes from borderline
//! templates that mix an emotional class's markers with those of `others`;
//! both that emotional class and `others` emit them, so their posterior is
//! decided by the class priors. Class
//! conditionals are fixed by the generator seed, so splits drawn from one
//! generator differ only in their priors.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{largest_remainder, ClassDistribution, Conversation, Emotion, NUM_CLASSES};
use crate::error::{Error, Result};

const CLASS_EMOJI: [[&str; 2]; NUM_CLASSES] =
    [["😀", "😂"], ["😢", "😭"], ["😠", "😡"], ["🤔", "👀"]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub vocab_size: usize,
    pub templates_per_class: usize,
    pub template_overlap: f64,
    pub noise_rate: f64,
    pub utterance_length_range: [usize; 2],
    #[serde(default = "default_context_signal")]
    pub context_signal: f64,
    #[serde(default)]
    pub borderline_rate: f64,
}

fn default_context_signal() -> f64 {
    0.5
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            vocab_size: 240,
            templates_per_class: 8,
            template_overlap: 0.3,
            noise_rate: 0.2,
            utterance_length_range: [2, 6],
            context_signal: 0.5,
            borderline_rate: 0.3,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.utterance_length_range;
        if self.vocab_size < 2 * (NUM_CLASSES + 1) {
            return Err(Error::config(format!(
                "vocab_size {} too small",
                self.vocab_size
            )));
        }
        if self.templates_per_class == 0 {
            return Err(Error::config("templates_per_class must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.template_overlap) {
            return Err(Error::config("template_overlap must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(Error::config("noise_rate must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.context_signal) {
            return Err(Error::config("context_signal must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.borderline_rate) {
            return Err(Error::config("borderline_rate must lie in [0, 1]"));
        }
        if lo == 0 || lo > hi {
            return Err(Error::config(format!(
                "invalid utterance_length_range [{lo}, {hi}]"
            )));
        }
        Ok(())
    }
}

/// Fixed class-conditional structure; sample any number of splits from it.
#[derive(Debug, Clone)]
pub struct Generator {
    config: GeneratorConfig,
    shared: Vec<String>,
    templates: [Vec<Vec<String>>; NUM_CLASSES],
    /// Borderline templates per emotional class.
    borderline: [Vec<Vec<String>>; NUM_CLASSES - 1],
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words: Vec<String> = (0..config.vocab_size).map(|i| format!("w{i}")).collect();
        let n_shared = config.vocab_size / 2;
        let per_class = (config.vocab_size - n_shared) / NUM_CLASSES;
        let shared = words[..n_shared].to_vec();
        let hi = config.utterance_length_range[1];

        let templates: [Vec<Vec<String>>; NUM_CLASSES] = std::array::from_fn(|c| {
            let start = n_shared + c * per_class;
            let mut markers = words[start..start + per_class].to_vec();
            markers.extend(CLASS_EMOJI[c].iter().map(|e| e.to_string()));
            (0..config.templates_per_class)
                .map(|_| {
                    (0..hi)
                        .map(|slot| {
                            let pool = if slot > 0 && rng.gen::<f64>() < config.template_overlap {
                                &shared
                            } else {
                                &markers
                            };
                            pool.choose(&mut rng).expect("pools are non-empty").clone()
                        })
                        .collect()
                })
                .collect()
        });
        let others = Emotion::Others.index();
        let borderline = std::array::from_fn(|c| {
            (0..config.templates_per_class)
                .map(|_| {
                    (0..hi)
                        .map(|_| {
                            let source = if rng.gen::<bool>() { c } else { others };
                            let template = templates[source]
                                .choose(&mut rng)
                                .expect("templates are non-empty");
                            template
                                .choose(&mut rng)
                                .expect("templates are non-empty")
                                .clone()
                        })
                        .collect()
                })
                .collect()
        });
        Ok(Generator {
            config,
            shared,
            templates,
            borderline,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    fn length(&self, rng: &mut impl Rng) -> usize {
        let [lo, hi] = self.config.utterance_length_range;
        rng.gen_range(lo..=hi)
    }

    fn noisy_turn(&self, class: usize, rng: &mut impl Rng) -> Vec<String> {
        let template = self.templates[class]
            .choose(rng)
            .expect("templates are non-empty");
        self.noisy(template, class, rng)
    }

    fn noisy(&self, template: &[String], class: usize, rng: &mut impl Rng) -> Vec<String> {
        let len = self.length(rng);
        template[..len]
            .iter()
            .map(|tok| {
                if rng.gen::<f64>() < self.config.noise_rate {
                    let other = (class + rng.gen_range(1..NUM_CLASSES)) % NUM_CLASSES;
                    let t = self.templates[other]
                        .choose(rng)
                        .expect("templates are non-empty");
                    t.choose(rng).expect("templates are non-empty").clone()
                } else {
                    tok.clone()
                }
            })
            .collect()
    }

    fn conversation(&self, id: String, label: Emotion, rng: &mut impl Rng) -> Conversation {
        let class = label.index();
        let context_class = if rng.gen::<f64>() < self.config.context_signal {
            class
        } else {
            rng.gen_range(0..NUM_CLASSES)
        };
        let turn1 = self.noisy_turn(context_class, rng);
        let len = self.length(rng);
        let turn2 = (0..len)
            .map(|_| {
                self.shared
                    .choose(rng)
                    .expect("shared pool is non-empty")
                    .clone()
            })
            .collect();
        let turn3 = if rng.gen::<f64>() < self.config.borderline_rate {
            let pair = if class == Emotion::Others.index() {
                rng.gen_range(0..NUM_CLASSES - 1)
            } else {
                class
            };
            let template = self.borderline[pair]
                .choose(rng)
                .expect("templates are non-empty");
            self.noisy(template, class, rng)
        } else {
            self.noisy_turn(class, rng)
        };
        Conversation {
            id,
            turns: [turn1, turn2, turn3],
            label: Some(label),
        }
    }

    /// Draws `n` conversations whose class counts are the largest-remainder
    /// rounding of `dist * n`, in shuffled order.
    pub fn sample(
        &self,
        n: usize,
        dist: &ClassDistribution,
        prefix: &str,
        seed: u64,
    ) -> Result<Vec<Conversation>> {
        if n == 0 {
            return Err(Error::config("requested split size is zero"));
        }
        let counts = largest_remainder(dist.probs(), n);
        let mut labels: Vec<Emotion> = Emotion::ALL
            .iter()
            .zip(counts)
            .flat_map(|(e, k)| std::iter::repeat(*e).take(k))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        labels.shuffle(&mut rng);
        Ok(labels
            .into_iter()
            .enumerate()
            .map(|(i, label)| self.conversation(format!("{prefix}-{i:06}"), label, &mut rng))
            .collect())
    }
}

/// Train and test splits from one generator.
pub fn synthesize(
    config: &GeneratorConfig,
    n_train: usize,
    n_test: usize,
    train_dist: &ClassDistribution,
    test_dist: &ClassDistribution,
    seed: u64,
) -> Result<(Vec<Conversation>, Vec<Conversation>)> {
    let generator = Generator::new(config.clone(), seed)?;
    let train = generator.sample(n_train, train_dist, "train", seed.wrapping_add(1))?;
    let test = generator.sample(n_test, test_dist, "test", seed.wrapping_add(2))?;
    Ok((train, test))
}
