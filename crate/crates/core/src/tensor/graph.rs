use rand::Rng;

use super::{axis_split, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddBias(usize, usize),
    Scale(usize, f64),
    MulMask(usize, Vec<f64>),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Softmax { x: usize, axis: usize },
    LogSoftmax { x: usize, axis: usize },
    Concat { inputs: Vec<usize>, axis: usize },
    Slice { x: usize, axis: usize, start: usize },
    Reshape(usize),
    Gather { table: usize, ids: Vec<usize> },
    MaxAxis { x: usize, argmax: Vec<usize> },
    SumAxis { x: usize, axis: usize },
    Sum(usize),
    Pick { x: usize, cols: Vec<usize> },
    ClampMin { x: usize, min: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Record of a single forward pass, in topological order by construction.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(usize, ParamId)>,
    consumed: bool,
}

/// Gradients of a scalar loss with respect to every leaf that requires them.
#[derive(Debug)]
pub struct Gradients {
    leaves: Vec<(usize, Tensor)>,
    params: Vec<(usize, ParamId)>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.leaves
            .iter()
            .find(|(id, _)| *id == var.0)
            .map(|(_, t)| t)
    }

    /// Adds every parameter gradient into the store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(node, pid) in &self.params {
            if let Some((_, g)) = self.leaves.iter().find(|(id, _)| *id == node) {
                store.accumulate_grad(pid, g.data());
            }
        }
    }
}

fn broadcast_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    if a.shape() == b.shape() {
        Ok(a.shape().to_vec())
    } else if a.numel() == 1 {
        Ok(b.shape().to_vec())
    } else if b.numel() == 1 {
        Ok(a.shape().to_vec())
    } else {
        Err(Error::dim(
            op,
            format!("cannot broadcast {:?} with {:?}", a.shape(), b.shape()),
        ))
    }
}

fn binary_map(a: &Tensor, b: &Tensor, shape: Vec<usize>, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let n: usize = shape.iter().product();
    let (ad, bd) = (a.data(), b.data());
    let data = (0..n)
        .map(|i| {
            let x = if ad.len() == 1 { ad[0] } else { ad[i] };
            let y = if bd.len() == 1 { bd[0] } else { bd[i] };
            f(x, y)
        })
        .collect();
    Tensor { shape, data }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

/// Adds `g` into a gradient buffer, summing when the target was broadcast.
fn add_broadcast(target: &mut [f64], g: &[f64], scale: impl Fn(usize) -> f64) {
    if target.len() == g.len() {
        for (i, (t, gi)) in target.iter_mut().zip(g).enumerate() {
            *t += gi * scale(i);
        }
    } else {
        target[0] += g
            .iter()
            .enumerate()
            .map(|(i, gi)| gi * scale(i))
            .sum::<f64>();
    }
}

fn softmax_slices(x: &Tensor, axis: usize, log: bool) -> Tensor {
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for o in 0..outer {
        for j in 0..inner {
            let idx = |i: usize| (o * len + i) * inner + j;
            let max = (0..len)
                .map(|i| xd[idx(i)])
                .fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = (0..len).map(|i| (xd[idx(i)] - max).exp()).sum();
            for i in 0..len {
                let shifted = xd[idx(i)] - max;
                out[idx(i)] = if log {
                    shifted - total.ln()
                } else {
                    shifted.exp() / total
                };
            }
        }
    }
    Tensor {
        shape: x.shape().to_vec(),
        data: out,
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(
        &mut self,
        op_name: &'static str,
        value: Tensor,
        op: Op,
        inputs: &[usize],
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Copies a stored parameter into the graph. With `trainable == false`
    /// the parameter is treated as a constant (inference).
    pub fn param(&mut self, store: &ParamStore, id: ParamId, trainable: bool) -> Var {
        let var = self.leaf(store.value(id).clone(), trainable);
        if trainable {
            self.params.push((var.0, id));
        }
        var
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (ad, bd) = (av.data(), bv.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = ad[i * k + p];
                if x == 0.0 {
                    continue;
                }
                for (o, y) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                    *o += x * y;
                }
            }
        }
        let value = Tensor {
            shape: vec![m, n],
            data: out,
        };
        self.push("matmul", value, Op::MatMul(a.0, b.0), &[a.0, b.0])
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let shape = broadcast_shape(name, av, bv)?;
        let value = binary_map(av, bv, shape, f);
        self.push(name, value, op, &[a.0, b.0])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    /// Adds a bias vector of extent `n` to every row of a `[.., n]` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (&self.nodes[x.0].value, &self.nodes[bias.0].value);
        let n = *xv.shape().last().unwrap_or(&1);
        if bv.numel() != n || bv.shape().len() > 1 {
            return Err(Error::dim(
                "add_bias",
                format!("{:?} + bias {:?}", xv.shape(), bv.shape()),
            ));
        }
        let bd = bv.data();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bd[i % n])
            .collect();
        let value = Tensor {
            shape: xv.shape().to_vec(),
            data,
        };
        self.push("add_bias", value, Op::AddBias(x.0, bias.0), &[x.0, bias.0])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let value = Tensor {
            shape: xv.shape().to_vec(),
            data: xv.data().iter().map(|v| v * factor).collect(),
        };
        self.push("scale", value, Op::Scale(x.0, factor), &[x.0])
    }

    /// Elementwise product with a fixed (non-differentiable) mask.
    pub fn mul_mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if mask.len() != xv.numel() {
            return Err(Error::dim(
                "mul_mask",
                format!("mask of {} for {:?}", mask.len(), xv.shape()),
            ));
        }
        let value = Tensor {
            shape: xv.shape().to_vec(),
            data: xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect(),
        };
        self.push("mul_mask", value, Op::MulMask(x.0, mask), &[x.0])
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let value = Tensor {
            shape: xv.shape().to_vec(),
            data: xv.data().iter().map(|&v| f(v)).collect(),
        };
        self.push(name, value, op, &[x.0])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, f64::tanh, Op::Tanh(x.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(x.0))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| v.max(0.0), Op::Relu(x.0))
    }

    /// Lower-bounds every entry; entries at the bound pass no gradient.
    pub fn clamp_min(&mut self, x: Var, min: f64) -> Result<Var> {
        self.unary("clamp_min", x, |v| v.max(min), Op::ClampMin { x: x.0, min })
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<()> {
        let rank = self.shape(x).len();
        if axis >= rank {
            return Err(Error::dim(op, format!("axis {axis} for rank {rank}")));
        }
        Ok(())
    }

    /// Softmax along `axis`, with max-subtraction.
    pub fn softmax_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", x, axis)?;
        let value = softmax_slices(&self.nodes[x.0].value, axis, false);
        self.push("softmax", value, Op::Softmax { x: x.0, axis }, &[x.0])
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let rank = self.shape(x).len();
        if rank == 0 {
            return Err(Error::dim("softmax", "scalar input"));
        }
        self.softmax_axis(x, rank - 1)
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let rank = self.shape(x).len();
        if rank == 0 {
            return Err(Error::dim("log_softmax", "scalar input"));
        }
        let axis = rank - 1;
        let value = softmax_slices(&self.nodes[x.0].value, axis, true);
        self.push(
            "log_softmax",
            value,
            Op::LogSoftmax { x: x.0, axis },
            &[x.0],
        )
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::dim("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim(
                "concat",
                format!("axis {axis} for rank {}", base.len()),
            ));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim(
                    "concat",
                    format!("{base:?} with {s:?} on axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let t = &self.nodes[v.0].value;
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let ids: Vec<usize> = inputs.iter().map(|v| v.0).collect();
        let value = Tensor { shape, data };
        self.push(
            "concat",
            value,
            Op::Concat {
                inputs: ids.clone(),
                axis,
            },
            &ids,
        )
    }

    /// Contiguous range `[start, start + len)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_axis("slice", x, axis)?;
        let xv = &self.nodes[x.0].value;
        let (outer, extent, inner) = axis_split(xv.shape(), axis);
        if len == 0 || start + len > extent {
            return Err(Error::dim(
                "slice",
                format!("[{start}, {}) of extent {extent}", start + len),
            ));
        }
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * extent + start) * inner;
            data.extend_from_slice(&xv.data()[from..from + len * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        let value = Tensor { shape, data };
        self.push(
            "slice",
            value,
            Op::Slice {
                x: x.0,
                axis,
                start,
            },
            &[x.0],
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.nodes[x.0].value.clone().reshape(shape.to_vec())?;
        self.push("reshape", value, Op::Reshape(x.0), &[x.0])
    }

    /// Rows of a `[V, d]` table selected by `ids`, giving `[ids.len(), d]`.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = &self.nodes[table.0].value;
        if tv.shape().len() != 2 {
            return Err(Error::dim(
                "embedding_lookup",
                format!("table {:?}", tv.shape()),
            ));
        }
        if ids.is_empty() {
            return Err(Error::dim("embedding_lookup", "no ids"));
        }
        let (vocab, d) = (tv.shape()[0], tv.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(Error::Index {
                    what: "embedding table",
                    index: id,
                    size: vocab,
                });
            }
            data.extend_from_slice(&tv.data()[id * d..(id + 1) * d]);
        }
        let value = Tensor {
            shape: vec![ids.len(), d],
            data,
        };
        self.push(
            "embedding_lookup",
            value,
            Op::Gather {
                table: table.0,
                ids: ids.to_vec(),
            },
            &[table.0],
        )
    }

    /// Maximum along `axis`; the axis is removed from the shape.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("max_axis", x, axis)?;
        let xv = &self.nodes[x.0].value;
        let (outer, len, inner) = axis_split(xv.shape(), axis);
        let xd = xv.data();
        let mut data = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for j in 0..inner {
                let mut best = (o * len) * inner + j;
                for i in 1..len {
                    let idx = (o * len + i) * inner + j;
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                data.push(xd[best]);
                argmax.push(best);
            }
        }
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        let value = Tensor { shape, data };
        self.push("max_axis", value, Op::MaxAxis { x: x.0, argmax }, &[x.0])
    }

    /// Max over the time axis: `[T, d] -> [d]` or `[B, T, d] -> [B, d]`.
    pub fn max_pool_time(&mut self, x: Var) -> Result<Var> {
        let rank = self.shape(x).len();
        if rank < 2 {
            return Err(Error::dim("max_pool_time", format!("rank {rank}")));
        }
        self.max_axis(x, rank - 2)
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("sum_axis", x, axis)?;
        let xv = &self.nodes[x.0].value;
        let (outer, len, inner) = axis_split(xv.shape(), axis);
        let xd = xv.data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..len {
                for j in 0..inner {
                    data[o * inner + j] += xd[(o * len + i) * inner + j];
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        let value = Tensor { shape, data };
        self.push("sum_axis", value, Op::SumAxis { x: x.0, axis }, &[x.0])
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.nodes[x.0].value.data().iter().sum();
        self.push("sum", Tensor::scalar(total), Op::Sum(x.0), &[x.0])
    }

    /// `out[r] = x[r, cols[r]]` for a `[B, K]` tensor.
    pub fn pick(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let s = xv.shape();
        if s.len() != 2 || s[0] != cols.len() {
            return Err(Error::dim(
                "pick",
                format!("{s:?} with {} columns", cols.len()),
            ));
        }
        let k = s[1];
        let mut data = Vec::with_capacity(cols.len());
        for (r, &c) in cols.iter().enumerate() {
            if c >= k {
                return Err(Error::Index {
                    what: "pick column",
                    index: c,
                    size: k,
                });
            }
            data.push(xv.data()[r * k + c]);
        }
        let value = Tensor {
            shape: vec![cols.len()],
            data,
        };
        self.push(
            "pick",
            value,
            Op::Pick {
                x: x.0,
                cols: cols.to_vec(),
            },
            &[x.0],
        )
    }

    /// Inverted dropout: kept units are scaled by `1 / (1 - p)`. Returns `x`
    /// itself when not training or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, training: bool, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::contract(format!("dropout p={p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - p;
        let mask = (0..self.nodes[x.0].value.numel())
            .map(|_| {
                if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        self.mul_mask(x, mask)
    }

    /// Reverse-mode pass from a scalar `loss`. A graph can be differentiated
    /// once; a second call is rejected.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::contract("backward already run on this graph"));
        }
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut leaves = Vec::new();

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaves.push((
                    id,
                    Tensor {
                        shape: node.value.shape().to_vec(),
                        data: g,
                    },
                ));
                continue;
            }
            self.propagate(id, &g, &mut grads);
        }
        leaves.sort_by_key(|(id, _)| *id);
        Ok(Gradients {
            leaves,
            params: self.params.clone(),
        })
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let out = &nodes[id].value;
        let wants = |i: usize| nodes[i].requires_grad;
        let len_of = |i: usize| nodes[i].value.numel();

        match &nodes[id].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if wants(*a) {
                    let da = accumulate(&mut grads[*a], m * k);
                    for i in 0..m {
                        for p in 0..k {
                            let brow = &bv.data()[p * n..(p + 1) * n];
                            let grow = &g[i * n..(i + 1) * n];
                            da[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if wants(*b) {
                    let db = accumulate(&mut grads[*b], k * n);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = av.data()[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (d, gi) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *d += x * gi;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(nodes[id].op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                if wants(*a) {
                    add_broadcast(accumulate(&mut grads[*a], len_of(*a)), g, |_| 1.0);
                }
                if wants(*b) {
                    add_broadcast(accumulate(&mut grads[*b], len_of(*b)), g, |_| sign);
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (nodes[*a].value.data(), nodes[*b].value.data());
                let at = |d: &[f64], i: usize| if d.len() == 1 { d[0] } else { d[i] };
                if wants(*a) {
                    add_broadcast(accumulate(&mut grads[*a], ad.len()), g, |i| at(bd, i));
                }
                if wants(*b) {
                    add_broadcast(accumulate(&mut grads[*b], bd.len()), g, |i| at(ad, i));
                }
            }
            Op::AddBias(x, b) => {
                if wants(*x) {
                    add_broadcast(accumulate(&mut grads[*x], g.len()), g, |_| 1.0);
                }
                if wants(*b) {
                    let n = len_of(*b);
                    let db = accumulate(&mut grads[*b], n);
                    for (i, gi) in g.iter().enumerate() {
                        db[i % n] += gi;
                    }
                }
            }
            Op::Scale(x, factor) => {
                let dx = accumulate(&mut grads[*x], g.len());
                for (d, gi) in dx.iter_mut().zip(g) {
                    *d += gi * factor;
                }
            }
            Op::MulMask(x, mask) => {
                let dx = accumulate(&mut grads[*x], g.len());
                for ((d, gi), m) in dx.iter_mut().zip(g).zip(mask) {
                    *d += gi * m;
                }
            }
            Op::Tanh(x) => {
                let dx = accumulate(&mut grads[*x], g.len());
                for ((d, gi), y) in dx.iter_mut().zip(g).zip(out.data()) {
                    *d += gi * (1.0 - y * y);
                }
            }
            Op::Sigmoid(x) => {
                let dx = accumulate(&mut grads[*x], g.len());
                for ((d, gi), y) in dx.iter_mut().zip(g).zip(out.data()) {
                    *d += gi * y * (1.0 - y);
                }
            }
            Op::Relu(x) => {
                let xd = nodes[*x].value.data();
                let dx = accumulate(&mut grads[*x], g.len());
                for ((d, gi), v) in dx.iter_mut().zip(g).zip(xd) {
                    if *v > 0.0 {
                        *d += gi;
                    }
                }
            }
            Op::ClampMin { x, min } => {
                let xd = nodes[*x].value.data();
                let dx = accumulate(&mut grads[*x], g.len());
                for ((d, gi), v) in dx.iter_mut().zip(g).zip(xd) {
                    if v > min {
                        *d += gi;
                    }
                }
            }
            Op::Softmax { x, axis } | Op::LogSoftmax { x, axis } => {
                let log = matches!(nodes[id].op, Op::LogSoftmax { .. });
                let (outer, len, inner) = axis_split(out.shape(), *axis);
                let y = out.data();
                let dx = accumulate(&mut grads[*x], g.len());
                for o in 0..outer {
                    for j in 0..inner {
                        let idx = |i: usize| (o * len + i) * inner + j;
                        if log {
                            let gsum: f64 = (0..len).map(|i| g[idx(i)]).sum();
                            for i in 0..len {
                                dx[idx(i)] += g[idx(i)] - y[idx(i)].exp() * gsum;
                            }
                        } else {
                            let dot: f64 = (0..len).map(|i| g[idx(i)] * y[idx(i)]).sum();
                            for i in 0..len {
                                dx[idx(i)] += y[idx(i)] * (g[idx(i)] - dot);
                            }
                        }
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = axis_split(out.shape(), *axis);
                let mut offset = 0;
                for &input in inputs {
                    let extent = nodes[input].value.shape()[*axis];
                    if wants(input) {
                        let chunk = extent * inner;
                        let dx = accumulate(&mut grads[input], outer * chunk);
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            for (d, gi) in dx[o * chunk..(o + 1) * chunk]
                                .iter_mut()
                                .zip(&g[src..src + chunk])
                            {
                                *d += gi;
                            }
                        }
                    }
                    offset += extent;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, extent, inner) = axis_split(nodes[*x].value.shape(), *axis);
                let len = out.shape()[*axis];
                let dx = accumulate(&mut grads[*x], outer * extent * inner);
                for o in 0..outer {
                    let dst = (o * extent + start) * inner;
                    let src = o * len * inner;
                    for (d, gi) in dx[dst..dst + len * inner]
                        .iter_mut()
                        .zip(&g[src..src + len * inner])
                    {
                        *d += gi;
                    }
                }
            }
            Op::Reshape(x) => {
                add_broadcast(accumulate(&mut grads[*x], g.len()), g, |_| 1.0);
            }
            Op::Gather { table, ids } => {
                let d = nodes[*table].value.shape()[1];
                let dt = accumulate(&mut grads[*table], len_of(*table));
                for (r, &id) in ids.iter().enumerate() {
                    for (t, gi) in dt[id * d..(id + 1) * d]
                        .iter_mut()
                        .zip(&g[r * d..(r + 1) * d])
                    {
                        *t += gi;
                    }
                }
            }
            Op::MaxAxis { x, argmax, .. } => {
                let dx = accumulate(&mut grads[*x], len_of(*x));
                for (gi, &src) in g.iter().zip(argmax) {
                    dx[src] += gi;
                }
            }
            Op::SumAxis { x, axis } => {
                let (outer, len, inner) = axis_split(nodes[*x].value.shape(), *axis);
                let dx = accumulate(&mut grads[*x], outer * len * inner);
                for o in 0..outer {
                    for i in 0..len {
                        for j in 0..inner {
                            dx[(o * len + i) * inner + j] += g[o * inner + j];
                        }
                    }
                }
            }
            Op::Sum(x) => {
                let n = len_of(*x);
                let dx = accumulate(&mut grads[*x], n);
                for d in dx.iter_mut() {
                    *d += g[0];
                }
            }
            Op::Pick { x, cols } => {
                let k = nodes[*x].value.shape()[1];
                let dx = accumulate(&mut grads[*x], len_of(*x));
                for (r, &c) in cols.iter().enumerate() {
                    dx[r * k + c] += g[r];
                }
            }
        }
    }
}
