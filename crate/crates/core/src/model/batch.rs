use std::collections::HashMap;

use crate::data::{EncodedConversation, PAD_ID};
use crate::error::{Error, Result};

/// Narrowest padded character width, so every conv filter fits.
pub const MIN_CHAR_WIDTH: usize = 5;

/// A mini-batch laid out for the encoder: the three turns of every
/// conversation form one utterance batch of `3 * B` rows (turn-major, so
/// utterance `m * B + b` is turn `m` of conversation `b`), and every
/// per-token array is time-major (`t * U + u`).
#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    pub utterances: usize,
    pub steps: usize,
    pub words: Vec<usize>,
    /// 1.0 for real tokens, 0.0 for padding, per `t * U + u`.
    pub mask: Vec<f64>,
    pub char_width: usize,
    /// Distinct character spellings in the batch, `char_width` ids each.
    pub chars: Vec<usize>,
    /// Row of `chars` for every slot `t * U + u`.
    pub spelling: Vec<usize>,
    pub labels: Option<Vec<usize>>,
}

impl Batch {
    pub fn new<'a>(examples: &[&'a EncodedConversation]) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let size = examples.len();
        let utterances = 3 * size;
        let turn = |u: usize| {
            (
                &examples[u % size].words[u / size],
                &examples[u % size].chars[u / size],
            )
        };
        let steps = (0..utterances)
            .map(|u| turn(u).0.len())
            .max()
            .unwrap_or(1)
            .max(1);
        let char_width = examples
            .iter()
            .flat_map(|e| e.chars.iter().flatten())
            .map(Vec::len)
            .max()
            .unwrap_or(0)
            .max(MIN_CHAR_WIDTH);

        let slots = steps * utterances;
        let mut words = vec![PAD_ID; slots];
        let mut mask = vec![0.0; slots];
        let mut chars = Vec::new();
        let mut spelling = vec![0; slots];
        let mut seen: HashMap<&[usize], usize> = HashMap::new();
        let mut intern = |c: &'a [usize], chars: &mut Vec<usize>| -> usize {
            let next = seen.len();
            *seen.entry(c).or_insert_with(|| {
                chars.extend_from_slice(c);
                chars.resize(chars.len() + char_width - c.len(), PAD_ID);
                next
            })
        };
        let pad_row = intern(&[], &mut chars);
        for u in 0..utterances {
            let (w, c) = turn(u);
            if w.len() != c.len() {
                return Err(Error::contract(
                    "word and character sequences differ in length",
                ));
            }
            for t in 0..w.len() {
                let slot = t * utterances + u;
                words[slot] = w[t];
                mask[slot] = 1.0;
                spelling[slot] = intern(&c[t], &mut chars);
            }
            for t in w.len()..steps {
                spelling[t * utterances + u] = pad_row;
            }
            if w.is_empty() {
                // an empty turn still contributes one (padding) position
                mask[u] = 1.0;
            }
        }
        let labels = examples.iter().map(|e| e.label).collect::<Option<Vec<_>>>();
        Ok(Batch {
            size,
            utterances,
            steps,
            words,
            mask,
            char_width,
            chars,
            spelling,
            labels,
        })
    }

    /// Mask for step `t` expanded to `[U, width]`.
    pub(crate) fn step_mask(&self, t: usize, width: usize) -> Vec<f64> {
        let row = &self.mask[t * self.utterances..(t + 1) * self.utterances];
        row.iter()
            .flat_map(|&m| std::iter::repeat(m).take(width))
            .collect()
    }

    /// Additive bias for every slot: 0 for real tokens, `-1e9` for padding,
    /// expanded to `[T * U, width]`.
    pub(crate) fn pad_bias(&self, width: usize) -> Vec<f64> {
        self.mask
            .iter()
            .flat_map(|&m| std::iter::repeat(if m > 0.0 { 0.0 } else { -1e9 }).take(width))
            .collect()
    }
}
