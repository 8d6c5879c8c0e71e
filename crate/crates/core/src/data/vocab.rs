use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Conversation;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

const PAD: &str = "<pad>";
const UNK: &str = "<unk>";

/// Token and character vocabularies. Ids 0 and 1 are padding and unknown in
/// both; everything else is ordered by descending frequency, then
/// lexicographically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    chars: Vec<char>,
    #[serde(skip)]
    token_ids: HashMap<String, usize>,
    #[serde(skip)]
    char_ids: HashMap<char, usize>,
}

/// Word ids and per-word character ids for each of the three turns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedConversation {
    pub words: [Vec<usize>; 3],
    pub chars: [Vec<Vec<usize>>; 3],
    pub label: Option<usize>,
}

fn ranked<K: Ord + Clone + std::hash::Hash>(counts: HashMap<K, usize>) -> Vec<K> {
    let mut items: Vec<(K, usize)> = counts.into_iter().collect();
    items.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    items.into_iter().map(|(k, _)| k).collect()
}

impl Vocabulary {
    pub fn build(corpus: &[Conversation]) -> Self {
        let mut token_counts: HashMap<String, usize> = HashMap::new();
        let mut char_counts: HashMap<char, usize> = HashMap::new();
        for token in corpus.iter().flat_map(|c| c.turns.iter().flatten()) {
            *token_counts.entry(token.clone()).or_default() += 1;
            for ch in token.chars() {
                *char_counts.entry(ch).or_default() += 1;
            }
        }
        let mut tokens = vec![PAD.to_string(), UNK.to_string()];
        tokens.extend(ranked(token_counts));
        let mut chars = vec!['\0', '\u{FFFD}'];
        chars.extend(ranked(char_counts));
        Self::from_parts(tokens, chars)
    }

    fn from_parts(tokens: Vec<String>, chars: Vec<char>) -> Self {
        let token_ids = tokens
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, t)| (t.clone(), i))
            .collect();
        let char_ids = chars
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, c)| (*c, i))
            .collect();
        Vocabulary {
            tokens,
            chars,
            token_ids,
            char_ids,
        }
    }

    /// Rebuilds the lookup tables after deserialization.
    pub fn reindexed(self) -> Self {
        Self::from_parts(self.tokens, self.chars)
    }

    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    pub fn char_count(&self) -> usize {
        self.chars.len()
    }

    pub fn token_id(&self, token: &str) -> usize {
        self.token_ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn char_id(&self, ch: char) -> usize {
        self.char_ids.get(&ch).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// An empty turn is encoded as a single padding token.
    pub fn encode(&self, conversation: &Conversation) -> EncodedConversation {
        let encode_turn = |turn: &Vec<String>| -> (Vec<usize>, Vec<Vec<usize>>) {
            if turn.is_empty() {
                return (vec![PAD_ID], vec![vec![PAD_ID]]);
            }
            let words = turn.iter().map(|t| self.token_id(t)).collect();
            let chars = turn
                .iter()
                .map(|t| t.chars().map(|c| self.char_id(c)).collect())
                .collect();
            (words, chars)
        };
        let [a, b, c] = &conversation.turns;
        let (w0, c0) = encode_turn(a);
        let (w1, c1) = encode_turn(b);
        let (w2, c2) = encode_turn(c);
        EncodedConversation {
            words: [w0, w1, w2],
            chars: [c0, c1, c2],
            label: conversation.label_index(),
        }
    }

    pub fn encode_all(&self, conversations: &[Conversation]) -> Vec<EncodedConversation> {
        conversations.iter().map(|c| self.encode(c)).collect()
    }
}
