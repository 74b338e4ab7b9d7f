//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every forward op appends a node holding its value and a description of
//! how to route gradients back to its inputs. Parameters are referenced
//! from the borrowed [`ParamStore`] without copying.

use rand::Rng;

use super::tensor::{gemm_nn, gemm_nt, gemm_tn};
use super::{NnError, ParamId, ParamStore, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var, usize),
    LogSoftmax(Var),
    Transpose(Var),
    Concat(Vec<Var>, usize),
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    Conv1d {
        input: Var,
        weight: Var,
        bias: Var,
        width: usize,
    },
    MaxOverTime {
        input: Var,
        argmax: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<f64>,
        positive_only: bool,
    },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Option<Tensor>,
    op: Op,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Tensor)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, if any flowed there.
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.nodes.get(var.0).and_then(Option::as_ref)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(id, t)| (*id, t))
    }
}

pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    train: bool,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn dims2(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl<'s> Tape<'s> {
    /// Evaluation-mode tape: dropout is the identity.
    pub fn new(store: &'s ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            train: false,
        }
    }

    /// Training-mode tape: dropout is active.
    pub fn training(store: &'s ParamStore) -> Self {
        Tape {
            train: true,
            ..Tape::new(store)
        }
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            (None, _) => unreachable!("non-parameter node without a value"),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var, NnError> {
        if !value.is_finite() {
            return Err(NnError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NnError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(NnError::ShapeMismatch {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: fn(f64, f64) -> f64) -> Result<Var, NnError> {
        self.same_shape(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(out, op, name)
    }

    fn unary(&mut self, a: Var, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Var, NnError> {
        let out = self.value(a).map(f);
        self.push(out, op, name)
    }

    /// `[m,k] × [k,n] → [m,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((m, k), (k2, n)) = (dims2(ta), dims2(tb));
        if k != k2 {
            return Err(NnError::ShapeMismatch {
                op: "matmul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(ta.data(), tb.data(), &mut out, m, k, n);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Adds a `[1,n]` row to every row of an `[m,n]` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NnError> {
        let (ta, tr) = (self.value(a), self.value(row));
        let (m, n) = dims2(ta);
        if tr.rows() != 1 || tr.cols() != n {
            return Err(NnError::ShapeMismatch {
                op: "add_row",
                left: ta.shape().to_vec(),
                right: tr.shape().to_vec(),
            });
        }
        let r = tr.data();
        let data = ta
            .data()
            .chunks(n)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(x, y)| x + y))
            .collect();
        self.push(Tensor::matrix(m, n, data)?, Op::AddRow(a, row), "add_row")
    }

    /// `scale * a + shift`
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var, NnError> {
        self.unary(a, Op::Affine(a, scale), "affine", |x| scale * x + shift)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NnError> {
        self.unary(a, Op::Tanh(a), "tanh", f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NnError> {
        self.unary(a, Op::Sigmoid(a), "sigmoid", sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NnError> {
        self.unary(a, Op::Relu(a), "relu", |x| x.max(0.0))
    }

    /// Softmax normalizing along `axis` (0: each column, 1: each row).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, NnError> {
        let t = self.value(a);
        let (m, n) = dims2(t);
        let mut out = t.data().to_vec();
        let norm = |vals: &mut dyn Iterator<Item = &mut f64>| {
            let slots: Vec<&mut f64> = vals.collect();
            let max = slots.iter().map(|v| **v).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            let mut slots = slots;
            for v in slots.iter_mut() {
                **v = (**v - max).exp();
                total += **v;
            }
            for v in slots.iter_mut() {
                **v /= total;
            }
        };
        match axis {
            1 => out.chunks_mut(n).for_each(|row| norm(&mut row.iter_mut())),
            0 => {
                for j in 0..n {
                    norm(&mut out.iter_mut().skip(j).step_by(n));
                }
            }
            _ => return Err(NnError::InvalidArgument(format!("softmax axis {axis}"))),
        }
        let out = Tensor::matrix(m, n, out)?;
        self.push(out, Op::Softmax(a, axis), "softmax")
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var, NnError> {
        let t = self.value(a);
        let (m, n) = dims2(t);
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        self.push(Tensor::matrix(m, n, out)?, Op::LogSoftmax(a), "log_softmax")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NnError> {
        let t = self.value(a);
        let (m, n) = dims2(t);
        let d = t.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        self.push(Tensor::matrix(n, m, out)?, Op::Transpose(a), "transpose")
    }

    /// Concatenates 2-D tensors along `axis` (0: stack rows, 1: join columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, NnError> {
        let first = *parts
            .first()
            .ok_or_else(|| NnError::InvalidArgument("concat of nothing".into()))?;
        let (m0, n0) = dims2(self.value(first));
        let (rows, cols, data) = match axis {
            0 => {
                let mut data = Vec::new();
                let mut rows = 0;
                for &p in parts {
                    let t = self.value(p);
                    if t.cols() != n0 {
                        return Err(NnError::ShapeMismatch {
                            op: "concat",
                            left: self.value(first).shape().to_vec(),
                            right: t.shape().to_vec(),
                        });
                    }
                    rows += t.rows();
                    data.extend_from_slice(t.data());
                }
                (rows, n0, data)
            }
            1 => {
                let mut cols = 0;
                for &p in parts {
                    let t = self.value(p);
                    if t.rows() != m0 {
                        return Err(NnError::ShapeMismatch {
                            op: "concat",
                            left: self.value(first).shape().to_vec(),
                            right: t.shape().to_vec(),
                        });
                    }
                    cols += t.cols();
                }
                let mut data = Vec::with_capacity(m0 * cols);
                for i in 0..m0 {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row_slice(i));
                    }
                }
                (m0, cols, data)
            }
            _ => return Err(NnError::InvalidArgument(format!("concat axis {axis}"))),
        };
        self.push(
            Tensor::matrix(rows, cols, data)?,
            Op::Concat(parts.to_vec(), axis),
            "concat",
        )
    }

    /// `len` rows (axis 0) or columns (axis 1) starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, NnError> {
        let t = self.value(a);
        let (m, n) = dims2(t);
        let limit = if axis == 0 { m } else { n };
        if axis > 1 || start + len > limit || len == 0 {
            return Err(NnError::InvalidArgument(format!(
                "slice [{start}, {}) on axis {axis} of {:?}",
                start + len,
                t.shape()
            )));
        }
        let (rows, cols, data) = if axis == 0 {
            (len, n, t.data()[start * n..(start + len) * n].to_vec())
        } else {
            let data = t
                .data()
                .chunks(n)
                .flat_map(|row| row[start..start + len].iter().copied())
                .collect();
            (m, len, data)
        };
        self.push(
            Tensor::matrix(rows, cols, data)?,
            Op::Slice { input: a, axis, start },
            "slice",
        )
    }

    /// Gathers rows `ids` of a `[V,D]` table into `[len(ids), D]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, NnError> {
        let t = self.value(table);
        let (v, d) = dims2(t);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(NnError::InvalidArgument(format!(
                "embedding id {bad} out of range for table {:?}",
                t.shape()
            )));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(t.row_slice(i));
        }
        self.push(
            Tensor::matrix(ids.len(), d, data)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            "embedding",
        )
    }

    /// Inverted dropout. Identity in evaluation mode or when `rate == 0`.
    pub fn dropout(&mut self, a: Var, rate: f64, rng: &mut impl Rng) -> Result<Var, NnError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::InvalidArgument(format!("dropout rate {rate}")));
        }
        if !self.train || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let t = self.value(a);
        let mask: Vec<f64> = (0..t.numel())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        self.push(out, Op::Dropout { input: a, mask }, "dropout")
    }

    /// Valid 1-D convolution over time. `input` is `[T,E]`, `weight` is
    /// `[width*E, F]`, `bias` is `[1,F]`; output is `[T-width+1, F]`.
    pub fn conv1d_valid(&mut self, input: Var, weight: Var, bias: Var, width: usize) -> Result<Var, NnError> {
        let (tx, tw, tb) = (self.value(input), self.value(weight), self.value(bias));
        let (t_len, e) = dims2(tx);
        let (wk, f) = dims2(tw);
        if wk != width * e || tb.numel() != f {
            return Err(NnError::ShapeMismatch {
                op: "conv1d_valid",
                left: tx.shape().to_vec(),
                right: tw.shape().to_vec(),
            });
        }
        if t_len < width || width == 0 {
            return Err(NnError::InvalidArgument(format!(
                "conv1d_valid: sequence length {t_len} shorter than width {width}"
            )));
        }
        let out_len = t_len - width + 1;
        let mut out = Vec::with_capacity(out_len * f);
        for _ in 0..out_len {
            out.extend_from_slice(tb.data());
        }
        for t in 0..out_len {
            let window = &tx.data()[t * e..(t + width) * e];
            gemm_nn(window, tw.data(), &mut out[t * f..(t + 1) * f], 1, wk, f);
        }
        self.push(
            Tensor::matrix(out_len, f, out)?,
            Op::Conv1d {
                input,
                weight,
                bias,
                width,
            },
            "conv1d_valid",
        )
    }

    /// Column-wise max over rows: `[T,F] → [1,F]`.
    pub fn max_over_time(&mut self, a: Var) -> Result<Var, NnError> {
        let t = self.value(a);
        let (m, n) = dims2(t);
        let mut argmax = vec![0; n];
        let mut out = t.row_slice(0).to_vec();
        for i in 1..m {
            for (j, &v) in t.row_slice(i).iter().enumerate() {
                if v > out[j] {
                    out[j] = v;
                    argmax[j] = i;
                }
            }
        }
        self.push(Tensor::row(out), Op::MaxOverTime { input: a, argmax }, "max_over_time")
    }

    /// Mean negative log-likelihood of `targets` (one per row) under
    /// row-wise softmax of `logits`. Returns a `[1,1]` scalar.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, NnError> {
        let t = self.value(logits);
        let (m, n) = dims2(t);
        if targets.len() != m {
            return Err(NnError::ShapeMismatch {
                op: "cross_entropy",
                left: t.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&c| c >= n) {
            return Err(NnError::InvalidArgument(format!("target {bad} out of {n} classes")));
        }
        let mut probs = t.data().to_vec();
        let mut loss = 0.0;
        for (row, &target) in probs.chunks_mut(n).zip(targets) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[target];
            row.iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        let probs = Tensor::matrix(m, n, probs)?;
        self.push(
            Tensor::scalar(loss / m as f64),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            "cross_entropy",
        )
    }

    /// Mean binary cross-entropy of `targets` under `sigmoid(logits)`.
    /// With `positive_only`, only the `-t·ln σ(l)` term is kept.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64], positive_only: bool) -> Result<Var, NnError> {
        let t = self.value(logits);
        if targets.len() != t.numel() {
            return Err(NnError::ShapeMismatch {
                op: "bce_with_logits",
                left: t.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let total: f64 = t
            .data()
            .iter()
            .zip(targets)
            .map(|(&l, &y)| {
                if positive_only {
                    y * softplus(-l)
                } else {
                    softplus(l) - y * l
                }
            })
            .sum();
        let n = targets.len().max(1) as f64;
        self.push(
            Tensor::scalar(total / n),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
                positive_only,
            },
            "bce_with_logits",
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NnError> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NnError> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), "mean")
    }

    /// Linear layer `x W + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, weight: ParamId, bias: ParamId) -> Result<Var, NnError> {
        let w = self.param(weight);
        let b = self.param(bias);
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    /// Back-propagates from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NnError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(NnError::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        let mut params = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads, &mut params);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn backprop_node(
        &self,
        i: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        params: &mut Vec<(ParamId, Tensor)>,
    ) {
        // Accumulates into the gradient slot of `v`, allocating on first use.
        fn acc<'g>(grads: &'g mut [Option<Tensor>], tape: &Tape<'_>, v: Var) -> &'g mut Tensor {
            grads[v.0].get_or_insert_with(|| Tensor::zeros(tape.value(v).shape()))
        }
        fn acc_each(grads: &mut [Option<Tensor>], tape: &Tape<'_>, v: Var, f: impl Fn(usize) -> f64) {
            let slot = acc(grads, tape, v);
            for (k, s) in slot.data_mut().iter_mut().enumerate() {
                *s += f(k);
            }
        }

        let gd = g.data();
        let out = self.value(Var(i));
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Param(id) => params.push((*id, g.clone())),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let ((m, k), (_, n)) = (dims2(ta), dims2(tb));
                gemm_nt(gd, tb.data(), acc(grads, self, *a).data_mut(), m, n, k);
                gemm_tn(ta.data(), gd, acc(grads, self, *b).data_mut(), m, k, n);
            }
            Op::Add(a, b) => {
                acc(grads, self, *a).add_assign(g);
                acc(grads, self, *b).add_assign(g);
            }
            Op::AddRow(a, r) => {
                acc(grads, self, *a).add_assign(g);
                let n = g.cols();
                let slot = acc(grads, self, *r);
                for row in gd.chunks(n) {
                    for (s, v) in slot.data_mut().iter_mut().zip(row) {
                        *s += v;
                    }
                }
            }
            Op::Sub(a, b) => {
                acc(grads, self, *a).add_assign(g);
                acc_each(grads, self, *b, |k| -gd[k]);
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                acc_each(grads, self, *a, |k| gd[k] * db[k]);
                acc_each(grads, self, *b, |k| gd[k] * da[k]);
            }
            Op::Affine(a, scale) => acc_each(grads, self, *a, |k| gd[k] * scale),
            Op::Tanh(a) => {
                let y = out.data();
                acc_each(grads, self, *a, |k| gd[k] * (1.0 - y[k] * y[k]));
            }
            Op::Sigmoid(a) => {
                let y = out.data();
                acc_each(grads, self, *a, |k| gd[k] * y[k] * (1.0 - y[k]));
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                acc_each(grads, self, *a, |k| if x[k] > 0.0 { gd[k] } else { 0.0 });
            }
            Op::Softmax(a, axis) => {
                let y = out.data();
                let (m, n) = dims2(out);
                let mut dx = vec![0.0; m * n];
                if *axis == 1 {
                    for r in 0..m {
                        let s: f64 = (0..n).map(|c| gd[r * n + c] * y[r * n + c]).sum();
                        for c in 0..n {
                            dx[r * n + c] = y[r * n + c] * (gd[r * n + c] - s);
                        }
                    }
                } else {
                    for c in 0..n {
                        let s: f64 = (0..m).map(|r| gd[r * n + c] * y[r * n + c]).sum();
                        for r in 0..m {
                            dx[r * n + c] = y[r * n + c] * (gd[r * n + c] - s);
                        }
                    }
                }
                acc_each(grads, self, *a, |k| dx[k]);
            }
            Op::LogSoftmax(a) => {
                let y = out.data();
                let n = out.cols();
                let mut dx = vec![0.0; y.len()];
                for (r, row) in gd.chunks(n).enumerate() {
                    let s: f64 = row.iter().sum();
                    for c in 0..n {
                        dx[r * n + c] = row[c] - y[r * n + c].exp() * s;
                    }
                }
                acc_each(grads, self, *a, |k| dx[k]);
            }
            Op::Transpose(a) => {
                let (m, n) = dims2(out);
                // out is [m,n], input is [n,m]
                acc_each(grads, self, *a, |k| {
                    let (r, c) = (k / m, k % m);
                    gd[c * n + r]
                });
            }
            Op::Concat(parts, axis) => {
                if *axis == 0 {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).numel();
                        acc_each(grads, self, p, |k| gd[offset + k]);
                        offset += len;
                    }
                } else {
                    let total = out.cols();
                    let mut col = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        acc_each(grads, self, p, |k| gd[(k / w) * total + col + k % w]);
                        col += w;
                    }
                }
            }
            Op::Slice { input, axis, start } => {
                let n_in = self.value(*input).cols();
                let (_, n_out) = dims2(out);
                let slot = acc(grads, self, *input);
                let sd = slot.data_mut();
                if *axis == 0 {
                    for (k, v) in gd.iter().enumerate() {
                        sd[start * n_in + k] += v;
                    }
                } else {
                    for (k, v) in gd.iter().enumerate() {
                        sd[(k / n_out) * n_in + start + k % n_out] += v;
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let d = out.cols();
                let slot = acc(grads, self, *table);
                let sd = slot.data_mut();
                for (r, &id) in ids.iter().enumerate() {
                    for c in 0..d {
                        sd[id * d + c] += gd[r * d + c];
                    }
                }
            }
            Op::Dropout { input, mask } => acc_each(grads, self, *input, |k| gd[k] * mask[k]),
            Op::Conv1d {
                input,
                weight,
                bias,
                width,
            } => {
                let (tx, tw) = (self.value(*input), self.value(*weight));
                let e = tx.cols();
                let (wk, f) = dims2(tw);
                let out_len = out.rows();
                {
                    let slot = acc(grads, self, *bias);
                    for row in gd.chunks(f) {
                        for (s, v) in slot.data_mut().iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                }
                {
                    let slot = acc(grads, self, *weight);
                    for t in 0..out_len {
                        let window = &tx.data()[t * e..(t + width) * e];
                        gemm_tn(window, &gd[t * f..(t + 1) * f], slot.data_mut(), 1, wk, f);
                    }
                }
                let slot = acc(grads, self, *input);
                for t in 0..out_len {
                    let dst = &mut slot.data_mut()[t * e..(t + width) * e];
                    gemm_nt(&gd[t * f..(t + 1) * f], tw.data(), dst, 1, f, wk);
                }
            }
            Op::MaxOverTime { input, argmax } => {
                let n = argmax.len();
                let slot = acc(grads, self, *input);
                for (j, &r) in argmax.iter().enumerate() {
                    slot.data_mut()[r * n + j] += gd[j];
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let n = probs.cols();
                let scale = gd[0] / targets.len() as f64;
                let p = probs.data();
                acc_each(grads, self, *logits, |k| {
                    let onehot = if targets[k / n] == k % n { 1.0 } else { 0.0 };
                    scale * (p[k] - onehot)
                });
            }
            Op::BceWithLogits {
                logits,
                targets,
                positive_only,
            } => {
                let l = self.value(*logits).data();
                let scale = gd[0] / targets.len().max(1) as f64;
                acc_each(grads, self, *logits, |k| {
                    let s = sigmoid(l[k]);
                    if *positive_only {
                        -scale * targets[k] * (1.0 - s)
                    } else {
                        scale * (s - targets[k])
                    }
                });
            }
            Op::Sum(a) => acc_each(grads, self, *a, |_| gd[0]),
            Op::Mean(a) => {
                let n = self.value(*a).numel() as f64;
                acc_each(grads, self, *a, |_| gd[0] / n);
            }
        }
    }
}
