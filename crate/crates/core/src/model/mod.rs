//! Semi-hierarchical conversation classifier.
//!
//! Each turn is encoded by two parallel shortcut-stacked BiLSTM channels
//! (channel A reads word embeddings plus char-CNN features, channel B an
//! independent word embedding). Their per-step outputs are concatenated and
//! reduced by source2token attention and max pooling into `u_m`. A context
//! BiLSTM runs over `[u1, u2, u3]`, and the MLP head reads
//! `[u1, u2, u3, u1 - u2 + u3, summary]`.

mod batch;
mod layers;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use batch::{Batch, MIN_CHAR_WIDTH};
use layers::{Attention, Bound, CharCnn, Init, Mlp, StackedBiLstm};

use crate::data::{EncodedConversation, Vocabulary, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::shift::PredictionVector;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// How the context BiLSTM is summarised.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextSummary {
    /// Forward state after turn 3 with backward state after turn 1.
    LastState,
    /// Max over the three bidirectional states.
    #[default]
    MaxPool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub word_vocab: usize,
    pub char_vocab: usize,
    pub word_emb_dim: usize,
    /// Embedding width of the second channel.
    pub second_emb_dim: usize,
    pub char_emb_dim: usize,
    pub char_cnn_filter_widths: Vec<usize>,
    pub char_cnn_maps_per_width: usize,
    pub lstm_hidden_per_direction: usize,
    pub lstm_layers: usize,
    pub context_hidden: usize,
    pub context_summary: ContextSummary,
    pub mlp_hidden: usize,
    pub dropout_p: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_vocab: 2,
            char_vocab: 2,
            word_emb_dim: 16,
            second_emb_dim: 16,
            char_emb_dim: 15,
            char_cnn_filter_widths: vec![1, 3, 5],
            char_cnn_maps_per_width: 4,
            lstm_hidden_per_direction: 8,
            lstm_layers: 2,
            context_hidden: 8,
            context_summary: ContextSummary::MaxPool,
            mlp_hidden: 32,
            dropout_p: 0.1,
        }
    }
}

impl ModelConfig {
    /// Default dimensions sized for `vocab`.
    pub fn for_vocab(vocab: &Vocabulary) -> Self {
        ModelConfig::default().with_vocab(vocab)
    }

    pub fn with_vocab(mut self, vocab: &Vocabulary) -> Self {
        self.word_vocab = vocab.token_count();
        self.char_vocab = vocab.char_count();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("word_vocab", self.word_vocab),
            ("char_vocab", self.char_vocab),
            ("word_emb_dim", self.word_emb_dim),
            ("second_emb_dim", self.second_emb_dim),
            ("char_emb_dim", self.char_emb_dim),
            ("char_cnn_maps_per_width", self.char_cnn_maps_per_width),
            ("lstm_hidden_per_direction", self.lstm_hidden_per_direction),
            ("lstm_layers", self.lstm_layers),
            ("context_hidden", self.context_hidden),
            ("mlp_hidden", self.mlp_hidden),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be at least 1")));
        }
        if self.char_cnn_filter_widths.is_empty() {
            return Err(Error::config("char_cnn_filter_widths is empty"));
        }
        if let Some(w) = self
            .char_cnn_filter_widths
            .iter()
            .find(|&&w| w == 0 || w > MIN_CHAR_WIDTH)
        {
            return Err(Error::config(format!(
                "filter width {w} outside 1..={MIN_CHAR_WIDTH}"
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::config(format!(
                "dropout_p {} outside [0, 1)",
                self.dropout_p
            )));
        }
        Ok(())
    }

    pub fn char_features(&self) -> usize {
        self.char_cnn_filter_widths.len() * self.char_cnn_maps_per_width
    }

    /// Width of the concatenated per-step encoder states.
    pub fn state_dim(&self) -> usize {
        4 * self.lstm_hidden_per_direction
    }

    pub fn utterance_dim(&self) -> usize {
        2 * self.state_dim()
    }

    pub fn context_dim(&self) -> usize {
        4 * self.utterance_dim() + 2 * self.context_hidden
    }
}

#[derive(Debug, Clone)]
struct Parts {
    word_a: ParamId,
    word_b: ParamId,
    chars: CharCnn,
    enc_a: StackedBiLstm,
    enc_b: StackedBiLstm,
    attention: Attention,
    context: StackedBiLstm,
    mlp: Mlp,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    parts: Parts,
}

#[derive(Serialize, Deserialize)]
struct SavedModel {
    format: String,
    version: u32,
    config: ModelConfig,
    vocab: Vocabulary,
    params: serde_json::Value,
}

const MODEL_FORMAT: &str = "priorshift-model";
const MODEL_VERSION: u32 = 1;

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let c = &config;
        let h = c.lstm_hidden_per_direction;
        let word_a = init.embedding("word_a.embedding".into(), c.word_vocab, c.word_emb_dim)?;
        let chars = CharCnn::new(
            &mut init,
            c.char_vocab,
            c.char_emb_dim,
            &c.char_cnn_filter_widths,
            c.char_cnn_maps_per_width,
        )?;
        let enc_a = StackedBiLstm::new(
            &mut init,
            "enc_a",
            c.word_emb_dim + chars.output_dim(),
            h,
            c.lstm_layers,
        )?;
        let word_b = init.embedding("word_b.embedding".into(), c.word_vocab, c.second_emb_dim)?;
        let enc_b = StackedBiLstm::new(&mut init, "enc_b", c.second_emb_dim, h, c.lstm_layers)?;
        let attention = Attention::new(&mut init, "attention", c.state_dim())?;
        let context =
            StackedBiLstm::new(&mut init, "context", c.utterance_dim(), c.context_hidden, 1)?;
        let mlp = Mlp::new(&mut init, c.context_dim(), c.mlp_hidden, NUM_CLASSES)?;
        let parts = Parts {
            word_a,
            word_b,
            chars,
            enc_a,
            enc_b,
            attention,
            context,
            mlp,
        };
        Ok(Model {
            config,
            store,
            parts,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Utterance vectors `[3 * B, d_u]` for a batch, turn-major.
    pub fn encode_utterances(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &Batch,
        trainable: bool,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let p = Bound { store, trainable };
        let parts = &self.parts;
        let steps = batch.steps;
        let (train, p_drop) = (dropout.is_some(), self.config.dropout_p);
        let mut scratch = ChaCha8Rng::seed_from_u64(0);
        let rng = dropout.unwrap_or(&mut scratch);

        let table = p.get(g, parts.word_a);
        let ea = g.embedding_lookup(table, &batch.words)?;
        let ea = g.dropout(ea, p_drop, train, rng)?;
        let spellings = parts.chars.forward(g, &p, &batch.chars, batch.char_width)?;
        let ca = g.embedding_lookup(spellings, &batch.spelling)?;
        let xa = g.concat(&[ea, ca], 1)?;
        let table = p.get(g, parts.word_b);
        let eb = g.embedding_lookup(table, &batch.words)?;
        let xb = g.dropout(eb, p_drop, train, rng)?;

        let h = self.config.lstm_hidden_per_direction;
        let masks: Vec<Vec<f64>> = (0..steps).map(|t| batch.step_mask(t, h)).collect();
        let oa = parts.enc_a.forward(g, &p, xa, steps, &masks)?;
        let ob = parts.enc_b.forward(g, &p, xb, steps, &masks)?;
        let states = g.concat(&[oa, ob], 1)?;

        let d = self.config.state_dim();
        let bias = g.constant(Tensor::new(
            vec![steps * batch.utterances, d],
            batch.pad_bias(d),
        )?);
        let attended = parts.attention.forward(g, &p, states, steps, bias)?;
        let masked = g.add(states, bias)?;
        let masked = g.reshape(masked, &[steps, batch.utterances, d])?;
        let pooled = g.max_axis(masked, 0)?;
        g.concat(&[attended, pooled], 1)
    }

    /// Context representation `[B, d_ctx]` from three `[B, d_u]` turns.
    pub fn encode_context(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        turns: [Var; 3],
        trainable: bool,
    ) -> Result<Var> {
        let shape = g.shape(turns[0]).to_vec();
        if turns.iter().any(|&t| g.shape(t) != shape.as_slice()) || shape.len() != 2 {
            return Err(Error::contract("utterance vectors differ in shape"));
        }
        if shape[1] != self.config.utterance_dim() {
            return Err(Error::contract(format!(
                "utterance dim {} but the model expects {}",
                shape[1],
                self.config.utterance_dim()
            )));
        }
        let p = Bound { store, trainable };
        let [u1, u2, u3] = turns;
        let b = shape[0];
        let seq = g.concat(&[u1, u2, u3], 0)?;
        let (fwd, bwd) = self.parts.context.steps(g, &p, seq, 3)?;
        let summary = match self.config.context_summary {
            ContextSummary::LastState => g.concat(&[fwd[2], bwd[0]], 1)?,
            ContextSummary::MaxPool => {
                let per_step = (0..3)
                    .map(|t| g.concat(&[fwd[t], bwd[t]], 1))
                    .collect::<Result<Vec<_>>>()?;
                let stacked = g.concat(&per_step, 0)?;
                let stacked = g.reshape(stacked, &[3, b, 2 * self.config.context_hidden])?;
                g.max_axis(stacked, 0)?
            }
        };
        let diff = g.sub(u1, u2)?;
        let combined = g.add(diff, u3)?;
        g.concat(&[u1, u2, u3, combined, summary], 1)
    }

    /// Class logits `[B, 4]`. Passing a dropout RNG switches to training
    /// behaviour.
    pub fn logits(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &Batch,
        trainable: bool,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let u = self.encode_utterances(g, store, batch, trainable, dropout)?;
        let b = batch.size;
        let turns = [
            g.slice(u, 0, 0, b)?,
            g.slice(u, 0, b, b)?,
            g.slice(u, 0, 2 * b, b)?,
        ];
        let ctx = self.encode_context(g, store, turns, trainable)?;
        let p = Bound { store, trainable };
        self.parts.mlp.forward(g, &p, ctx)
    }

    /// Softmax predictions with dropout off, in input order.
    pub fn predict(
        &self,
        examples: &[EncodedConversation],
        batch_size: usize,
    ) -> Result<Vec<PredictionVector>> {
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(batch_size.max(1)) {
            let refs: Vec<&EncodedConversation> = chunk.iter().collect();
            let batch = Batch::new(&refs)?;
            let mut g = Graph::new();
            let logits = self.logits(&mut g, &self.store, &batch, false, None)?;
            let probs = g.softmax(logits)?;
            for row in g.value(probs).data().chunks(NUM_CLASSES) {
                out.push(PredictionVector::from_probs([
                    row[0], row[1], row[2], row[3],
                ]));
            }
        }
        Ok(out)
    }

    /// Writes the configuration, vocabulary and parameters as one JSON file.
    pub fn save(&self, vocab: &Vocabulary, path: &Path) -> Result<()> {
        let saved = SavedModel {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            config: self.config.clone(),
            vocab: vocab.clone(),
            params: serde_json::from_str(&self.store.to_json()?)?,
        };
        std::fs::write(path, serde_json::to_string(&saved)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Model, Vocabulary)> {
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let saved: SavedModel = serde_json::from_str(&json)?;
        if saved.format != MODEL_FORMAT || saved.version != MODEL_VERSION {
            return Err(Error::config(format!(
                "{}: unsupported model file {} v{}",
                path.display(),
                saved.format,
                saved.version
            )));
        }
        let mut model = Model::new(saved.config, 0)?;
        model.store.load_json(&saved.params.to_string())?;
        Ok((model, saved.vocab.reindexed()))
    }
}
