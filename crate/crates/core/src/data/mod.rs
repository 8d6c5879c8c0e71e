//! Conversations, labels, class distributions and dataset I/O.

mod distribution;
pub mod synth;
mod tokenize;
pub mod tsv;
mod vocab;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use distribution::{largest_remainder, ClassDistribution};
pub use tokenize::tokenize;
pub use vocab::{EncodedConversation, Vocabulary, PAD_ID, UNK_ID};

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 4;

/// Class labels in their fixed order. `Others` is always index 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Happy,
    Sad,
    Angry,
    Others,
}

impl Emotion {
    pub const ALL: [Emotion; NUM_CLASSES] = [
        Emotion::Happy,
        Emotion::Sad,
        Emotion::Angry,
        Emotion::Others,
    ];

    /// The classes pooled by the emotional micro-F1.
    pub const EMOTIONAL: [Emotion; 3] = [Emotion::Happy, Emotion::Sad, Emotion::Angry];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Emotion> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Emotion::Happy => "happy",
            Emotion::Sad => "sad",
            Emotion::Angry => "angry",
            Emotion::Others => "others",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Emotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown label {s:?}")))
    }
}

/// A three-turn conversation; the label (when present) refers to the last turn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conversation {
    pub id: String,
    pub turns: [Vec<String>; 3],
    pub label: Option<Emotion>,
}

impl Conversation {
    pub fn label_index(&self) -> Option<usize> {
        self.label.map(Emotion::index)
    }
}

/// Labels of a fully labelled dataset, or a contract error naming the first
/// unlabelled conversation.
pub fn labels_of(conversations: &[Conversation]) -> Result<Vec<Emotion>> {
    conversations
        .iter()
        .map(|c| {
            c.label
                .ok_or_else(|| Error::contract(format!("conversation {} has no label", c.id)))
        })
        .collect()
}

/// Class distribution of a labelled dataset.
pub fn estimate_distribution(labeled: &[Conversation]) -> Result<ClassDistribution> {
    if labeled.is_empty() {
        return Err(Error::contract(
            "cannot estimate a distribution from no examples",
        ));
    }
    let mut counts = [0u64; NUM_CLASSES];
    for label in labels_of(labeled)? {
        counts[label.index()] += 1;
    }
    ClassDistribution::from_counts(counts)
}
