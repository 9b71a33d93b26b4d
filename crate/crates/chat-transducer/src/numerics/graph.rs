use super::{logaddexp, Mask, Tensor};
use crate::{Error, Result};

/// Handle to a node in one [`Graph`]. Only meaningful for the graph that
/// created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// One recorded operation. Inputs always have smaller node ids than the
/// output, so replaying the record in reverse is a valid backward order.
#[derive(Clone, Debug)]
enum Op {
    Matmul { a: Var, b: Var, out: Var },
    Transpose { a: Var, out: Var },
    Add { a: Var, b: Var, out: Var },
    Scale { a: Var, factor: f64, out: Var },
    Relu { a: Var, out: Var },
    Softmax { a: Var, axis: usize, mask: Option<Mask>, out: Var },
    LogSoftmax { a: Var, axis: usize, out: Var },
    LogSumExp { a: Var, out: Var },
    LogAddExp { a: Var, b: Var, out: Var },
    Embedding { table: Var, ids: Vec<usize>, out: Var },
    Concat { axis: usize, parts: Vec<Var>, out: Var },
    Narrow { a: Var, axis: usize, start: usize, out: Var },
    Reshape { a: Var, out: Var },
    MeanRows { a: Var, out: Var },
    Sum { a: Var, out: Var },
}

impl Op {
    fn out(&self) -> Var {
        match *self {
            Op::Matmul { out, .. }
            | Op::Transpose { out, .. }
            | Op::Add { out, .. }
            | Op::Scale { out, .. }
            | Op::Relu { out, .. }
            | Op::Softmax { out, .. }
            | Op::LogSoftmax { out, .. }
            | Op::LogSumExp { out, .. }
            | Op::LogAddExp { out, .. }
            | Op::Embedding { out, .. }
            | Op::Concat { out, .. }
            | Op::Narrow { out, .. }
            | Op::Reshape { out, .. }
            | Op::MeanRows { out, .. }
            | Op::Sum { out, .. } => out,
        }
    }
}

/// Wengert tape: an ordered record of the operations of one forward pass.
///
/// `backward` replays the record in exact reverse order, once; calling it a
/// second time (or recording after it) is an error — start a new graph for a
/// new pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Tensor>,
    ops: Vec<Op>,
    backward_done: bool,
    allocated: usize,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// Insert a tensor as a leaf node (input, parameter, or constant).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t)
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> Var {
        self.push(Tensor::zeros(shape))
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.push(Tensor::scalar(value))
    }

    pub fn tensor(&self, v: Var) -> &Tensor {
        &self.nodes[v.0]
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].data()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].shape()
    }

    /// Value of a single-element node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].numel(), 1);
        self.nodes[v.0].data()[0]
    }

    /// Gradient accumulated on a node by the backward sweep, if it was
    /// reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Total f64 elements allocated by this graph (values plus gradient
    /// accumulators). A monotonic counter; the memory proxy for bench runs.
    pub fn allocated_elements(&self) -> usize {
        self.allocated
    }

    fn push(&mut self, t: Tensor) -> Var {
        self.allocated += t.numel();
        self.nodes.push(t);
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, out: Tensor, op: impl FnOnce(Var) -> Op) -> Result<Var> {
        if self.backward_done {
            return Err(Error::BackwardConsumed);
        }
        let v = self.push(out);
        self.ops.push(op(v));
        Ok(v)
    }

    // ── Forward operations ───────────────────────────────────────────

    /// Standard matrix product of 2-D tensors [m x k] · [k x n].
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0], &self.nodes[b.0]);
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        matmul_raw(ta.data(), tb.data(), m, k, n, &mut out);
        self.record(Tensor::new(vec![m, n], out)?, |v| Op::Matmul { a, b, out: v })
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = &self.nodes[a.0];
        if ta.rank() != 2 {
            return Err(Error::ShapeMismatch {
                op: "transpose",
                lhs: ta.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (m, n) = (ta.shape()[0], ta.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = ta.data()[i * n + j];
            }
        }
        self.record(Tensor::new(vec![n, m], out)?, |v| Op::Transpose { a, out: v })
    }

    /// Elementwise sum of same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0], &self.nodes[b.0]);
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        self.record(Tensor::new(ta.shape().to_vec(), out)?, |v| Op::Add { a, b, out: v })
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let ta = &self.nodes[a.0];
        let out: Vec<f64> = ta.data().iter().map(|x| factor * x).collect();
        self.record(Tensor::new(ta.shape().to_vec(), out)?, |v| Op::Scale {
            a,
            factor,
            out: v,
        })
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ta = &self.nodes[a.0];
        // f64::max would turn NaN into 0 and silently mask divergence.
        let out: Vec<f64> = ta
            .data()
            .iter()
            .map(|&x| if x.is_nan() { x } else { x.max(0.0) })
            .collect();
        self.record(Tensor::new(ta.shape().to_vec(), out)?, |v| Op::Relu { a, out: v })
    }

    /// Softmax along `axis`, max-shifted for stability.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.softmax_impl(a, axis, None)
    }

    /// Softmax along `axis` where only mask-allowed positions participate;
    /// disallowed positions come out exactly zero. The mask must have the
    /// tensor's shape, and masking is only supported along rows (axis 1).
    pub fn masked_softmax(&mut self, a: Var, axis: usize, mask: &Mask) -> Result<Var> {
        let ta = &self.nodes[a.0];
        if axis != 1 || ta.rank() != 2 || mask.rows() != ta.shape()[0] || mask.cols() != ta.shape()[1]
        {
            return Err(Error::ShapeMismatch {
                op: "masked_softmax",
                lhs: ta.shape().to_vec(),
                rhs: vec![mask.rows(), mask.cols()],
            });
        }
        self.softmax_impl(a, axis, Some(mask.clone()))
    }

    fn softmax_impl(&mut self, a: Var, axis: usize, mask: Option<Mask>) -> Result<Var> {
        let ta = &self.nodes[a.0];
        let lanes = lanes(ta.shape(), axis, "softmax")?;
        let mut out = vec![0.0; ta.numel()];
        for (lane_idx, &(start, len, stride)) in lanes.iter().enumerate() {
            let allowed =
                |pos: usize| mask.as_ref().map_or(true, |m| m.allowed(lane_idx, pos));
            let mut max = f64::NEG_INFINITY;
            let mut any_allowed = false;
            let mut saw_nan = false;
            for p in 0..len {
                if allowed(p) {
                    any_allowed = true;
                    let x = ta.data()[start + p * stride];
                    if x.is_nan() {
                        saw_nan = true;
                    } else {
                        max = max.max(x);
                    }
                }
            }
            if !any_allowed {
                return Err(Error::EmptyInput("softmax lane has no allowed positions"));
            }
            if saw_nan {
                // Divergence must surface at the loss, not vanish here.
                for p in 0..len {
                    if allowed(p) {
                        out[start + p * stride] = f64::NAN;
                    }
                }
                continue;
            }
            if max == f64::NEG_INFINITY {
                return Err(Error::EmptyInput(
                    "softmax lane has no finite allowed positions",
                ));
            }
            let mut denom = 0.0;
            for p in 0..len {
                if allowed(p) {
                    let e = (ta.data()[start + p * stride] - max).exp();
                    out[start + p * stride] = e;
                    denom += e;
                }
            }
            for p in 0..len {
                out[start + p * stride] /= denom;
            }
        }
        self.record(Tensor::new(ta.shape().to_vec(), out)?, |v| Op::Softmax {
            a,
            axis,
            mask,
            out: v,
        })
    }

    /// Log of softmax along `axis`, computed directly in log space.
    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = &self.nodes[a.0];
        let lanes = lanes(ta.shape(), axis, "log_softmax")?;
        let mut out = vec![0.0; ta.numel()];
        for &(start, len, stride) in &lanes {
            let mut max = f64::NEG_INFINITY;
            for p in 0..len {
                max = max.max(ta.data()[start + p * stride]);
            }
            let mut denom = 0.0;
            for p in 0..len {
                denom += (ta.data()[start + p * stride] - max).exp();
            }
            let lse = max + denom.ln();
            for p in 0..len {
                out[start + p * stride] = ta.data()[start + p * stride] - lse;
            }
        }
        self.record(Tensor::new(ta.shape().to_vec(), out)?, |v| Op::LogSoftmax {
            a,
            axis,
            out: v,
        })
    }

    /// log(sum(exp(x))) over all elements, max-shifted; -inf entries are
    /// probability-zero contributions and are handled exactly.
    pub fn log_sum_exp(&mut self, a: Var) -> Result<Var> {
        let ta = &self.nodes[a.0];
        if ta.numel() == 0 {
            return Err(Error::EmptyInput("log_sum_exp of an empty tensor"));
        }
        let value = log_sum_exp_raw(ta.data());
        self.record(Tensor::scalar(value), |v| Op::LogSumExp { a, out: v })
    }

    /// Elementwise log(exp(a) + exp(b)) for same-shape tensors.
    pub fn logaddexp(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0], &self.nodes[b.0]);
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                op: "logaddexp",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let out: Vec<f64> = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| logaddexp(x, y))
            .collect();
        self.record(Tensor::new(ta.shape().to_vec(), out)?, |v| Op::LogAddExp {
            a,
            b,
            out: v,
        })
    }

    /// Gather rows of an embedding table: out[r] = table[ids[r]].
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = &self.nodes[table.0];
        if tt.rank() != 2 {
            return Err(Error::ShapeMismatch {
                op: "embedding",
                lhs: tt.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (vocab, dim) = (tt.shape()[0], tt.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(Error::VocabOutOfRange { id, vocab });
            }
            out.extend_from_slice(&tt.data()[id * dim..(id + 1) * dim]);
        }
        let ids = ids.to_vec();
        self.record(Tensor::new(vec![ids.len(), dim], out)?, |v| Op::Embedding {
            table,
            ids,
            out: v,
        })
    }

    /// Concatenate tensors along `axis` (rows or columns of 2-D tensors, or
    /// 1-D end-to-end).
    pub fn concat(&mut self, axis: usize, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("concat of zero tensors"));
        }
        let rank = self.nodes[parts[0].0].rank();
        if axis >= rank {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: self.nodes[parts[0].0].shape().to_vec(),
                rhs: vec![axis],
            });
        }
        let mut out_shape = self.nodes[parts[0].0].shape().to_vec();
        out_shape[axis] = 0;
        for &p in parts {
            let sp = self.nodes[p.0].shape();
            if sp.len() != rank
                || (0..rank).any(|d| d != axis && sp[d] != out_shape[d])
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: out_shape,
                    rhs: sp.to_vec(),
                });
            }
            out_shape[axis] += sp[axis];
        }
        let numel = out_shape.iter().product();
        let mut out = vec![0.0; numel];
        match (rank, axis) {
            (1, 0) | (2, 0) => {
                // Contiguous blocks in row-major order.
                let mut offset = 0;
                for &p in parts {
                    let d = self.nodes[p.0].data();
                    out[offset..offset + d.len()].copy_from_slice(d);
                    offset += d.len();
                }
            }
            (2, 1) => {
                let rows = out_shape[0];
                let out_cols = out_shape[1];
                let mut col_offset = 0;
                for &p in parts {
                    let t = &self.nodes[p.0];
                    let c = t.shape()[1];
                    for i in 0..rows {
                        out[i * out_cols + col_offset..i * out_cols + col_offset + c]
                            .copy_from_slice(&t.data()[i * c..(i + 1) * c]);
                    }
                    col_offset += c;
                }
            }
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: out_shape,
                    rhs: vec![axis],
                })
            }
        }
        let parts = parts.to_vec();
        self.record(Tensor::new(out_shape, out)?, |v| Op::Concat {
            axis,
            parts,
            out: v,
        })
    }

    /// Contiguous slice of length `len` starting at `start` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let ta = &self.nodes[a.0];
        let rank = ta.rank();
        if axis >= rank || len == 0 || start + len > ta.shape()[axis] {
            return Err(Error::ShapeMismatch {
                op: "narrow",
                lhs: ta.shape().to_vec(),
                rhs: vec![axis, start, len],
            });
        }
        let mut out_shape = ta.shape().to_vec();
        out_shape[axis] = len;
        let out = match (rank, axis) {
            (1, 0) => ta.data()[start..start + len].to_vec(),
            (2, 0) => {
                let cols = ta.shape()[1];
                ta.data()[start * cols..(start + len) * cols].to_vec()
            }
            (2, 1) => {
                let (rows, cols) = (ta.shape()[0], ta.shape()[1]);
                let mut out = Vec::with_capacity(rows * len);
                for i in 0..rows {
                    out.extend_from_slice(&ta.data()[i * cols + start..i * cols + start + len]);
                }
                out
            }
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "narrow",
                    lhs: ta.shape().to_vec(),
                    rhs: vec![axis],
                })
            }
        };
        self.record(Tensor::new(out_shape, out)?, |v| Op::Narrow {
            a,
            axis,
            start,
            out: v,
        })
    }

    /// Reinterpret the row-major data under a new shape of equal element
    /// count.
    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let ta = &self.nodes[a.0];
        if shape.iter().product::<usize>() != ta.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: ta.shape().to_vec(),
                rhs: shape,
            });
        }
        let data = ta.data().to_vec();
        self.record(Tensor::new(shape, data)?, |v| Op::Reshape { a, out: v })
    }

    /// Mean over the rows of a 2-D tensor: [m x d] -> [1 x d].
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let ta = &self.nodes[a.0];
        if ta.rank() != 2 || ta.shape()[0] == 0 {
            return Err(Error::ShapeMismatch {
                op: "mean_rows",
                lhs: ta.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (m, d) = (ta.shape()[0], ta.shape()[1]);
        let mut out = vec![0.0; d];
        for i in 0..m {
            for j in 0..d {
                out[j] += ta.data()[i * d + j];
            }
        }
        for v in &mut out {
            *v /= m as f64;
        }
        self.record(Tensor::new(vec![1, d], out)?, |v| Op::MeanRows { a, out: v })
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = self.nodes[a.0].data().iter().sum();
        self.record(Tensor::scalar(value), |v| Op::Sum { a, out: v })
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// One reverse sweep from a single-element loss node. Gradients
    /// accumulate on every node that influences the loss, leaves included.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardConsumed);
        }
        if self.nodes[loss.0].numel() != 1 {
            return Err(Error::NonScalarLoss(self.nodes[loss.0].shape().to_vec()));
        }
        self.backward_done = true;
        self.acc(loss, &[1.0]);

        let ops = std::mem::take(&mut self.ops);
        for op in ops.iter().rev() {
            let out = op.out();
            let gout = match self.nodes[out.0].grad() {
                Some(g) => g.to_vec(),
                None => continue,
            };
            self.backward_op(op, &gout);
        }
        self.ops = ops;
        Ok(())
    }

    fn backward_op(&mut self, op: &Op, gout: &[f64]) {
        match op {
            Op::Matmul { a, b, out: _ } => {
                let (ta, tb) = (&self.nodes[a.0], &self.nodes[b.0]);
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += gout[i * n + j] * tb.data()[p * n + j];
                        }
                        ga[i * k + p] = acc;
                    }
                }
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let av = ta.data()[i * k + p];
                        for j in 0..n {
                            gb[p * n + j] += av * gout[i * n + j];
                        }
                    }
                }
                self.acc(*a, &ga);
                self.acc(*b, &gb);
            }
            Op::Transpose { a, out } => {
                let (n, m) = {
                    let s = self.nodes[out.0].shape();
                    (s[0], s[1])
                };
                let mut ga = vec![0.0; m * n];
                for i in 0..n {
                    for j in 0..m {
                        ga[j * n + i] = gout[i * m + j];
                    }
                }
                self.acc(*a, &ga);
            }
            Op::Add { a, b, out: _ } => {
                self.acc(*a, gout);
                self.acc(*b, gout);
            }
            Op::Scale { a, factor, out: _ } => {
                let ga: Vec<f64> = gout.iter().map(|g| factor * g).collect();
                self.acc(*a, &ga);
            }
            Op::Relu { a, out: _ } => {
                let ga: Vec<f64> = self.nodes[a.0]
                    .data()
                    .iter()
                    .zip(gout)
                    .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                self.acc(*a, &ga);
            }
            Op::Softmax { a, axis, mask, out } => {
                let y = self.nodes[out.0].data();
                let lanes = lanes(self.nodes[a.0].shape(), *axis, "softmax").unwrap();
                let mut ga = vec![0.0; y.len()];
                for (lane_idx, &(start, len, stride)) in lanes.iter().enumerate() {
                    let mut dot = 0.0;
                    for p in 0..len {
                        let idx = start + p * stride;
                        dot += gout[idx] * y[idx];
                    }
                    for p in 0..len {
                        let idx = start + p * stride;
                        let masked = mask
                            .as_ref()
                            .is_some_and(|m| !m.allowed(lane_idx, p));
                        // Masked positions have y exactly 0 and no gradient.
                        ga[idx] = if masked { 0.0 } else { y[idx] * (gout[idx] - dot) };
                    }
                }
                self.acc(*a, &ga);
            }
            Op::LogSoftmax { a, axis, out } => {
                let y = self.nodes[out.0].data();
                let lanes = lanes(self.nodes[a.0].shape(), *axis, "log_softmax").unwrap();
                let mut ga = vec![0.0; y.len()];
                for &(start, len, stride) in &lanes {
                    let mut gsum = 0.0;
                    for p in 0..len {
                        gsum += gout[start + p * stride];
                    }
                    for p in 0..len {
                        let idx = start + p * stride;
                        ga[idx] = gout[idx] - y[idx].exp() * gsum;
                    }
                }
                self.acc(*a, &ga);
            }
            Op::LogSumExp { a, out } => {
                let lse = self.nodes[out.0].data()[0];
                let g = gout[0];
                let ga: Vec<f64> = self.nodes[a.0]
                    .data()
                    .iter()
                    .map(|&x| {
                        if x == f64::NEG_INFINITY {
                            0.0
                        } else {
                            g * (x - lse).exp()
                        }
                    })
                    .collect();
                self.acc(*a, &ga);
            }
            Op::LogAddExp { a, b, out } => {
                let y = self.nodes[out.0].data();
                let branch = |x: f64, o: f64, g: f64| {
                    if x == f64::NEG_INFINITY {
                        0.0
                    } else {
                        g * (x - o).exp()
                    }
                };
                let ga: Vec<f64> = self.nodes[a.0]
                    .data()
                    .iter()
                    .zip(y.iter().zip(gout))
                    .map(|(&x, (&o, &g))| branch(x, o, g))
                    .collect();
                let gb: Vec<f64> = self.nodes[b.0]
                    .data()
                    .iter()
                    .zip(y.iter().zip(gout))
                    .map(|(&x, (&o, &g))| branch(x, o, g))
                    .collect();
                self.acc(*a, &ga);
                self.acc(*b, &gb);
            }
            Op::Embedding { table, ids, out: _ } => {
                let dim = self.nodes[table.0].shape()[1];
                let mut gt = vec![0.0; self.nodes[table.0].numel()];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..dim {
                        gt[id * dim + j] += gout[r * dim + j];
                    }
                }
                self.acc(*table, &gt);
            }
            Op::Concat { axis, parts, out } => {
                let out_shape = self.nodes[out.0].shape().to_vec();
                match (out_shape.len(), *axis) {
                    (1, 0) | (2, 0) => {
                        let mut offset = 0;
                        for &p in parts {
                            let n = self.nodes[p.0].numel();
                            let gp = gout[offset..offset + n].to_vec();
                            self.acc(p, &gp);
                            offset += n;
                        }
                    }
                    (2, 1) => {
                        let rows = out_shape[0];
                        let out_cols = out_shape[1];
                        let mut col_offset = 0;
                        for &p in parts {
                            let c = self.nodes[p.0].shape()[1];
                            let mut gp = Vec::with_capacity(rows * c);
                            for i in 0..rows {
                                gp.extend_from_slice(
                                    &gout[i * out_cols + col_offset..i * out_cols + col_offset + c],
                                );
                            }
                            self.acc(p, &gp);
                            col_offset += c;
                        }
                    }
                    _ => unreachable!("concat axis validated at record time"),
                }
            }
            Op::Narrow { a, axis, start, out } => {
                let a_shape = self.nodes[a.0].shape().to_vec();
                let len = self.nodes[out.0].shape()[*axis];
                let mut ga = vec![0.0; self.nodes[a.0].numel()];
                match (a_shape.len(), *axis) {
                    (1, 0) => ga[*start..*start + len].copy_from_slice(gout),
                    (2, 0) => {
                        let cols = a_shape[1];
                        ga[start * cols..(start + len) * cols].copy_from_slice(gout);
                    }
                    (2, 1) => {
                        let (rows, cols) = (a_shape[0], a_shape[1]);
                        for i in 0..rows {
                            ga[i * cols + start..i * cols + start + len]
                                .copy_from_slice(&gout[i * len..(i + 1) * len]);
                        }
                    }
                    _ => unreachable!("narrow axis validated at record time"),
                }
                self.acc(*a, &ga);
            }
            Op::Reshape { a, out: _ } => {
                self.acc(*a, gout);
            }
            Op::MeanRows { a, out: _ } => {
                let (m, d) = {
                    let s = self.nodes[a.0].shape();
                    (s[0], s[1])
                };
                let inv = 1.0 / m as f64;
                let mut ga = vec![0.0; m * d];
                for i in 0..m {
                    for j in 0..d {
                        ga[i * d + j] = gout[j] * inv;
                    }
                }
                self.acc(*a, &ga);
            }
            Op::Sum { a, out: _ } => {
                let ga = vec![gout[0]; self.nodes[a.0].numel()];
                self.acc(*a, &ga);
            }
        }
    }

    fn acc(&mut self, v: Var, contrib: &[f64]) {
        if self.nodes[v.0].grad().is_none() {
            self.allocated += self.nodes[v.0].numel();
        }
        self.nodes[v.0].accumulate_grad(contrib);
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

pub(crate) fn log_sum_exp_raw(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Iteration plan for reductions along an axis: (start, len, stride) per
/// lane, for rank-1 and rank-2 tensors.
fn lanes(shape: &[usize], axis: usize, op: &'static str) -> Result<Vec<(usize, usize, usize)>> {
    let bad = || Error::ShapeMismatch {
        op,
        lhs: shape.to_vec(),
        rhs: vec![axis],
    };
    match (shape.len(), axis) {
        (1, 0) => {
            if shape[0] == 0 {
                return Err(Error::EmptyInput("reduction over an empty dimension"));
            }
            Ok(vec![(0, shape[0], 1)])
        }
        (2, 1) => {
            if shape[1] == 0 {
                return Err(Error::EmptyInput("reduction over an empty dimension"));
            }
            Ok((0..shape[0]).map(|i| (i * shape[1], shape[1], 1)).collect())
        }
        (2, 0) => {
            if shape[0] == 0 {
                return Err(Error::EmptyInput("reduction over an empty dimension"));
            }
            Ok((0..shape[1]).map(|j| (j, shape[0], shape[1])).collect())
        }
        _ => Err(bad()),
    }
}
