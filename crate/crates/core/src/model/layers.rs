use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Parameter factory used while building a model.
pub(crate) struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: ChaCha8Rng,
}

impl Init<'_> {
    fn uniform(&mut self, name: String, shape: &[usize], bound: f64) -> Result<ParamId> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect();
        self.store.add(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn xavier(&mut self, name: String, fan_in: usize, fan_out: usize) -> Result<ParamId> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.uniform(name, &[fan_in, fan_out], bound)
    }

    pub fn embedding(&mut self, name: String, rows: usize, dim: usize) -> Result<ParamId> {
        self.uniform(name, &[rows, dim], 0.1)
    }

    pub fn zeros(&mut self, name: String, n: usize) -> Result<ParamId> {
        self.store.add(name, Tensor::zeros(&[n]))
    }
}

/// Parameters copied into a graph for one forward pass.
pub(crate) struct Bound<'a> {
    pub store: &'a ParamStore,
    pub trainable: bool,
}

impl Bound<'_> {
    pub fn get(&self, g: &mut Graph, id: ParamId) -> Var {
        g.param(self.store, id, self.trainable)
    }
}

/// One LSTM direction; gate order is input, forget, cell, output.
#[derive(Debug, Clone)]
pub(crate) struct Lstm {
    hidden: usize,
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
}

impl Lstm {
    pub fn new(init: &mut Init, name: &str, input: usize, hidden: usize) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_ih = init.uniform(format!("{name}.w_ih"), &[input, 4 * hidden], bound)?;
        let w_hh = init.uniform(format!("{name}.w_hh"), &[hidden, 4 * hidden], bound)?;
        let mut b: Vec<f64> = (0..4 * hidden)
            .map(|_| init.rng.gen_range(-bound..=bound))
            .collect();
        for v in &mut b[hidden..2 * hidden] {
            *v += 1.0;
        }
        let bias = init.store.add(format!("{name}.bias"), Tensor::vector(b)?)?;
        Ok(Lstm {
            hidden,
            w_ih,
            w_hh,
            bias,
        })
    }

    /// Runs over time-major `x` of shape `[T * U, d]`. `masks[t]` (each
    /// `[U, hidden]`) freezes the state at padded steps. Returns the hidden
    /// state per step, indexed by time.
    pub fn run(
        &self,
        g: &mut Graph,
        p: &Bound,
        x: Var,
        steps: usize,
        masks: &[Vec<f64>],
        reverse: bool,
    ) -> Result<Vec<Var>> {
        let rows = g.shape(x)[0];
        if rows % steps != 0 {
            return Err(Error::dim(
                "lstm",
                format!("{rows} rows over {steps} steps"),
            ));
        }
        let u = rows / steps;
        let h = self.hidden;
        let (w_ih, w_hh, bias) = (
            p.get(g, self.w_ih),
            p.get(g, self.w_hh),
            p.get(g, self.bias),
        );
        let proj = g.matmul(x, w_ih)?;
        let proj = g.add_bias(proj, bias)?;

        let mut state = g.constant(Tensor::zeros(&[u, h]));
        let mut cell = state;
        let mut out = vec![state; steps];
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        for t in order {
            let xt = g.slice(proj, 0, t * u, u)?;
            let rec = g.matmul(state, w_hh)?;
            let gates = g.add(xt, rec)?;
            let i = g.slice(gates, 1, 0, h)?;
            let f = g.slice(gates, 1, h, h)?;
            let c_in = g.slice(gates, 1, 2 * h, h)?;
            let o = g.slice(gates, 1, 3 * h, h)?;
            let (i, f, o) = (g.sigmoid(i)?, g.sigmoid(f)?, g.sigmoid(o)?);
            let c_in = g.tanh(c_in)?;
            let keep = g.mul(f, cell)?;
            let write = g.mul(i, c_in)?;
            let c_new = g.add(keep, write)?;
            let c_act = g.tanh(c_new)?;
            let h_new = g.mul(o, c_act)?;

            let m = &masks[t];
            if m.iter().all(|&v| v == 1.0) {
                cell = c_new;
                state = h_new;
            } else {
                let inv: Vec<f64> = m.iter().map(|v| 1.0 - v).collect();
                let (a, b) = (
                    g.mul_mask(c_new, m.clone())?,
                    g.mul_mask(cell, inv.clone())?,
                );
                cell = g.add(a, b)?;
                let (a, b) = (g.mul_mask(h_new, m.clone())?, g.mul_mask(state, inv)?);
                state = g.add(a, b)?;
            }
            out[t] = state;
        }
        Ok(out)
    }
}

/// Shortcut-stacked bidirectional LSTM: layer `k` reads the original input
/// concatenated with the outputs of every lower layer.
#[derive(Debug, Clone)]
pub(crate) struct StackedBiLstm {
    layers: Vec<(Lstm, Lstm)>,
    hidden: usize,
}

impl StackedBiLstm {
    pub fn new(
        init: &mut Init,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
    ) -> Result<Self> {
        let layers = (0..layers)
            .map(|k| {
                let d = input + 2 * hidden * k;
                Ok((
                    Lstm::new(init, &format!("{name}.l{k}.fwd"), d, hidden)?,
                    Lstm::new(init, &format!("{name}.l{k}.bwd"), d, hidden)?,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(StackedBiLstm { layers, hidden })
    }

    /// `[T * U, d_in] -> [T * U, 2h]`, time-major.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        x: Var,
        steps: usize,
        masks: &[Vec<f64>],
    ) -> Result<Var> {
        let mut inputs = vec![x];
        let mut last = x;
        for (fwd, bwd) in &self.layers {
            let layer_in = if inputs.len() == 1 {
                x
            } else {
                g.concat(&inputs, 1)?
            };
            let f = fwd.run(g, p, layer_in, steps, masks, false)?;
            let b = bwd.run(g, p, layer_in, steps, masks, true)?;
            let per_step = f
                .iter()
                .zip(&b)
                .map(|(&a, &b)| g.concat(&[a, b], 1))
                .collect::<Result<Vec<_>>>()?;
            last = g.concat(&per_step, 0)?;
            inputs.push(last);
        }
        Ok(last)
    }

    /// Bidirectional states per step (`[U, 2h]` each) of a single layer,
    /// used by the context encoder where no padding occurs.
    pub fn steps(
        &self,
        g: &mut Graph,
        p: &Bound,
        x: Var,
        steps: usize,
    ) -> Result<(Vec<Var>, Vec<Var>)> {
        let (fwd, bwd) = self
            .layers
            .first()
            .ok_or_else(|| Error::contract("context encoder needs a layer"))?;
        let u = g.shape(x)[0] / steps;
        let ones = vec![vec![1.0; u * self.hidden]; steps];
        Ok((
            fwd.run(g, p, x, steps, &ones, false)?,
            bwd.run(g, p, x, steps, &ones, true)?,
        ))
    }
}

/// Character CNN: per filter width, a 1-D convolution over character
/// embeddings followed by max-over-time pooling.
#[derive(Debug, Clone)]
pub(crate) struct CharCnn {
    table: ParamId,
    emb_dim: usize,
    filters: Vec<(usize, ParamId, ParamId)>,
    maps: usize,
}

impl CharCnn {
    pub fn new(
        init: &mut Init,
        chars: usize,
        emb_dim: usize,
        widths: &[usize],
        maps: usize,
    ) -> Result<Self> {
        let table = init.embedding("char.embedding".into(), chars, emb_dim)?;
        let filters = widths
            .iter()
            .map(|&w| {
                Ok((
                    w,
                    init.xavier(format!("char.conv{w}.weight"), w * emb_dim, maps)?,
                    init.zeros(format!("char.conv{w}.bias"), maps)?,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(CharCnn {
            table,
            emb_dim,
            filters,
            maps,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.filters.len() * self.maps
    }

    /// `ids` holds `words * width` character ids; returns `[words, out]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, ids: &[usize], width: usize) -> Result<Var> {
        let words = ids.len() / width;
        let table = p.get(g, self.table);
        let emb = g.embedding_lookup(table, ids)?;
        let emb = g.reshape(emb, &[words, width * self.emb_dim])?;
        let mut pooled = Vec::with_capacity(self.filters.len());
        for &(w, kernel, bias) in &self.filters {
            if w > width {
                return Err(Error::dim(
                    "char_cnn",
                    format!("filter {w} wider than {width}"),
                ));
            }
            let (kernel, bias) = (p.get(g, kernel), p.get(g, bias));
            let positions = width - w + 1;
            let mut maps = Vec::with_capacity(positions);
            for pos in 0..positions {
                let window = g.slice(emb, 1, pos * self.emb_dim, w * self.emb_dim)?;
                maps.push(g.matmul(window, kernel)?);
            }
            let stacked = g.concat(&maps, 0)?;
            let stacked = g.reshape(stacked, &[positions, words, self.maps])?;
            let best = g.max_axis(stacked, 0)?;
            let best = g.add_bias(best, bias)?;
            pooled.push(g.tanh(best)?);
        }
        g.concat(&pooled, 1)
    }
}

/// Multi-dimensional source2token self-attention: a position-wise scoring
/// network gives one logit per (step, feature); softmax runs over time
/// separately for every feature.
#[derive(Debug, Clone)]
pub(crate) struct Attention {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl Attention {
    pub fn new(init: &mut Init, name: &str, dim: usize) -> Result<Self> {
        Ok(Attention {
            w1: init.xavier(format!("{name}.w1"), dim, dim)?,
            b1: init.zeros(format!("{name}.b1"), dim)?,
            w2: init.xavier(format!("{name}.w2"), dim, dim)?,
            b2: init.zeros(format!("{name}.b2"), dim)?,
        })
    }

    pub fn logits(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let (w1, b1, w2, b2) = (
            p.get(g, self.w1),
            p.get(g, self.b1),
            p.get(g, self.w2),
            p.get(g, self.b2),
        );
        let hid = g.matmul(x, w1)?;
        let hid = g.add_bias(hid, b1)?;
        let hid = g.tanh(hid)?;
        let out = g.matmul(hid, w2)?;
        g.add_bias(out, b2)
    }

    /// `x` is `[T * U, d]` time-major and `pad_bias` pushes padded logits
    /// to `-1e9`. Returns `[U, d]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        x: Var,
        steps: usize,
        pad_bias: Var,
    ) -> Result<Var> {
        let logits = self.logits(g, p, x)?;
        let logits = g.add(logits, pad_bias)?;
        weighted_sum(g, x, logits, steps)
    }
}

/// `sum_t softmax_t(logits)[t, u, j] * x[t, u, j]` for time-major inputs.
pub(crate) fn weighted_sum(g: &mut Graph, x: Var, logits: Var, steps: usize) -> Result<Var> {
    let (rows, d) = (g.shape(x)[0], g.shape(x)[1]);
    let u = rows / steps;
    let logits = g.reshape(logits, &[steps, u, d])?;
    let weights = g.softmax_axis(logits, 0)?;
    let x3 = g.reshape(x, &[steps, u, d])?;
    let weighted = g.mul(weights, x3)?;
    g.sum_axis(weighted, 0)
}

/// Dense layer `x W + b`.
#[derive(Debug, Clone)]
pub(crate) struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn new(init: &mut Init, name: &str, input: usize, output: usize) -> Result<Self> {
        Ok(Linear {
            w: init.xavier(format!("{name}.weight"), input, output)?,
            b: init.zeros(format!("{name}.bias"), output)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let (w, b) = (p.get(g, self.w), p.get(g, self.b));
        let y = g.matmul(x, w)?;
        g.add_bias(y, b)
    }
}

/// Two ReLU layers with shortcut connections (every layer reads the input
/// and all earlier hidden layers) and a linear output.
#[derive(Debug, Clone)]
pub(crate) struct Mlp {
    l1: Linear,
    l2: Linear,
    out: Linear,
}

impl Mlp {
    pub fn new(init: &mut Init, input: usize, hidden: usize, classes: usize) -> Result<Self> {
        Ok(Mlp {
            l1: Linear::new(init, "mlp.l1", input, hidden)?,
            l2: Linear::new(init, "mlp.l2", input + hidden, hidden)?,
            out: Linear::new(init, "mlp.out", input + 2 * hidden, classes)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let h1 = self.l1.forward(g, p, x)?;
        let h1 = g.relu(h1)?;
        let x1 = g.concat(&[x, h1], 1)?;
        let h2 = self.l2.forward(g, p, x1)?;
        let h2 = g.relu(h2)?;
        let x2 = g.concat(&[x, h1, h2], 1)?;
        self.out.forward(g, p, x2)
    }
}
