//! Reverse-mode automatic differentiation over a linear operation tape.
//!
//! Every op appends one node holding its output value, so node order is a
//! topological order and the backward sweep is a single reverse pass. Ops that
//! work "along the last axis" treat the tensor as `rows × last_dim`.
//!
//! Shape misuse is a programming error: ops panic with a descriptive message.

use crate::kernels::{self, ConvGeom, MatRef};
use crate::{ParamId, ParamStore, Tensor};

/// Denominator floor for [`Tape::l2_normalize`].
pub const L2_NORM_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    Tanh(Var),
    Relu(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    MaxLast {
        x: Var,
        argmax: Vec<usize>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    L2Normalize {
        x: Var,
        norms: Vec<f64>,
    },
    Fc {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d {
        x: Var,
        k: Var,
        b: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    Reshape(Var),
    RepeatRows {
        x: Var,
        times: usize,
    },
    ConcatRows(Vec<Var>),
    GatherLast {
        x: Var,
        index: Vec<usize>,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Whether [`Tape::backward_into`] clears parameter gradients first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradMode {
    Overwrite,
    Accumulate,
}

/// Recorded computation. Create one per forward pass.
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(Var, ParamId)>,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// Gradients of a scalar with respect to every node that requires them.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `var`; zero when `var` is not on a path to the loss.
    pub fn wrt(&self, var: Var) -> Tensor {
        let shape = self.shapes[var.0].clone();
        match &self.grads[var.0] {
            Some(g) => Tensor::new(shape, g.clone()),
            None => Tensor::zeros(&shape),
        }
    }
}

fn rows_of(t: &Tensor) -> (usize, usize) {
    let n = t.last_dim();
    (t.numel() / n.max(1), n)
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that never tracks gradients; backward caches are not kept.
    pub fn no_grad() -> Self {
        Tape {
            grad_enabled: false,
            ..Tape::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad =
            self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    // ---- leaves -------------------------------------------------------

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives gradients (unless the tape is `no_grad`).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf bound to a stored parameter; see [`Tape::backward_into`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.leaf(store.value(id).clone());
        if self.grad_enabled {
            self.params.push((v, id));
        }
        v
    }

    /// Copy of `v` cut off from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    // ---- elementwise --------------------------------------------------

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{what}: shape mismatch {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| f(*x)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let out = self.zip(a, b, |x, y| x + y);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let out = self.zip(a, b, |x, y| x - y);
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let out = self.zip(a, b, |x, y| x * y);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.map(a, |x| x + c);
        self.push(out, Op::AddScalar(a), &[a])
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.map(a, |x| x * c);
        self.push(out, Op::MulScalar(a, c), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| if x > 0.0 { x } else { 0.0 });
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| x * x);
        self.push(out, Op::Square(a), &[a])
    }

    // ---- reductions ---------------------------------------------------

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(m), Op::Mean(a), &[a])
    }

    /// Sum over the last axis: `[.., n] -> [..]`.
    pub fn sum_last(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (_, n) = rows_of(t);
        let data = t.data().chunks(n).map(|r| r.iter().sum()).collect();
        let shape = t.shape()[..t.ndim().saturating_sub(1)].to_vec();
        self.push(Tensor::new(shape, data), Op::SumLast(a), &[a])
    }

    /// Max over the last axis; gradient flows to the first maximal entry.
    pub fn max_last(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (_, n) = rows_of(t);
        let mut data = Vec::with_capacity(t.numel() / n);
        let mut argmax = Vec::with_capacity(data.capacity());
        for row in t.data().chunks(n) {
            let i = argmax_first(row);
            argmax.push(i);
            data.push(row[i]);
        }
        let shape = t.shape()[..t.ndim().saturating_sub(1)].to_vec();
        self.push(Tensor::new(shape, data), Op::MaxLast { x: a, argmax }, &[a])
    }

    // ---- normalizations -----------------------------------------------

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (_, n) = rows_of(t);
        let mut data = Vec::with_capacity(t.numel());
        for row in t.data().chunks(n) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            data.extend(row.iter().map(|x| (x - m).exp()));
            let z: f64 = data[start..].iter().sum();
            for v in &mut data[start..] {
                *v /= z;
            }
        }
        let out = Tensor::new(t.shape().to_vec(), data);
        self.push(out, Op::Softmax(a), &[a])
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (_, n) = rows_of(t);
        let mut data = Vec::with_capacity(t.numel());
        for row in t.data().chunks(n) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|x| x - lse));
        }
        let out = Tensor::new(t.shape().to_vec(), data);
        self.push(out, Op::LogSoftmax(a), &[a])
    }

    /// Divide each last-axis row by its L2 norm, floored at [`L2_NORM_EPS`].
    ///
    /// Debug builds panic on rows whose norm does not exceed the floor.
    pub fn l2_normalize(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (_, n) = rows_of(t);
        let mut data = Vec::with_capacity(t.numel());
        let mut norms = Vec::with_capacity(t.numel() / n);
        for row in t.data().chunks(n) {
            let s = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            debug_assert!(
                s > L2_NORM_EPS,
                "l2_normalize of a near-zero vector (norm {s:e})"
            );
            let d = s.max(L2_NORM_EPS);
            data.extend(row.iter().map(|x| x / d));
            norms.push(s);
        }
        let out = Tensor::new(t.shape().to_vec(), data);
        self.push(out, Op::L2Normalize { x: a, norms }, &[a])
    }

    // ---- linear layers ------------------------------------------------

    /// Fully connected layer `y = x Wᵀ + b`.
    ///
    /// `x` is `[k_in]` or `[batch, k_in]`, `w` is `[k_out, k_in]`, `b` is `[k_out]`.
    pub fn fc(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (xt, wt) = (self.value(x), self.value(w));
        assert_eq!(wt.ndim(), 2, "fc: weight must be 2-D, got {:?}", wt.shape());
        let (k_out, k_in) = (wt.shape()[0], wt.shape()[1]);
        let (batch, out_shape) = match xt.shape() {
            [k] if *k == k_in => (1, vec![k_out]),
            [bsz, k] if *k == k_in => (*bsz, vec![*bsz, k_out]),
            s => panic!(
                "fc: input shape {s:?} does not match weight {:?}",
                wt.shape()
            ),
        };
        let mut y = vec![0.0; batch * k_out];
        if let Some(b) = b {
            let bt = self.value(b);
            assert_eq!(
                bt.shape(),
                &[k_out],
                "fc: bias shape {:?} != [{k_out}]",
                bt.shape()
            );
            for row in y.chunks_mut(k_out) {
                row.copy_from_slice(bt.data());
            }
        }
        kernels::gemm(
            batch,
            k_in,
            k_out,
            MatRef::rows(xt.data(), k_in),
            MatRef::transposed(wt.data(), k_in),
            &mut y,
            if b.is_some() { 1.0 } else { 0.0 },
        );
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(Tensor::new(out_shape, y), Op::Fc { x, w, b }, &inputs)
    }

    /// Valid (unpadded) cross-correlation plus per-channel bias.
    ///
    /// `x` is `[c_in, h, w]` or `[batch, c_in, h, w]`; `kernels` is
    /// `[c_out, c_in, kh, kw]`. Panics when the stride does not tile the input
    /// exactly.
    pub fn conv2d(&mut self, x: Var, kernels_var: Var, bias: Var, stride: usize) -> Var {
        let (xt, kt, bt) = (self.value(x), self.value(kernels_var), self.value(bias));
        assert!(stride >= 1, "conv2d: stride must be positive");
        let (batch, c_in, h, w, batched) = match xt.shape() {
            [c, h, w] => (1, *c, *h, *w, false),
            [b, c, h, w] => (*b, *c, *h, *w, true),
            s => panic!("conv2d: input must be 3-D or 4-D, got {s:?}"),
        };
        let [c_out, kc, kh, kw] = kt.shape() else {
            panic!("conv2d: kernels must be 4-D, got {:?}", kt.shape());
        };
        let (c_out, kh, kw) = (*c_out, *kh, *kw);
        assert_eq!(
            *kc, c_in,
            "conv2d: kernel expects {kc} channels, input has {c_in}"
        );
        assert_eq!(
            bt.shape(),
            &[c_out],
            "conv2d: bias shape {:?} != [{c_out}]",
            bt.shape()
        );
        assert!(
            kh <= h && kw <= w,
            "conv2d: kernel {kh}x{kw} larger than input {h}x{w}"
        );
        assert!(
            (h - kh) % stride == 0 && (w - kw) % stride == 0,
            "conv2d: stride {stride} does not tile a {h}x{w} input with a {kh}x{kw} kernel"
        );
        let geom = ConvGeom {
            batch,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            oh: (h - kh) / stride + 1,
            ow: (w - kw) / stride + 1,
        };
        let cols = kernels::im2col(xt.data(), &geom);
        let ncols = geom.columns();
        let mut out_cm = vec![0.0; c_out * ncols];
        for (c, row) in out_cm.chunks_mut(ncols).enumerate() {
            row.fill(bt.data()[c]);
        }
        kernels::gemm(
            c_out,
            geom.patch(),
            ncols,
            MatRef::rows(kt.data(), geom.patch()),
            MatRef::rows(&cols, ncols),
            &mut out_cm,
            1.0,
        );
        let out = channel_major_to_batch(&out_cm, &geom);
        let shape = if batched {
            vec![batch, c_out, geom.oh, geom.ow]
        } else {
            vec![c_out, geom.oh, geom.ow]
        };
        let cols = if self.grad_enabled { cols } else { Vec::new() };
        self.push(
            Tensor::new(shape, out),
            Op::Conv2d {
                x,
                k: kernels_var,
                b: bias,
                geom,
                cols,
            },
            &[x, kernels_var, bias],
        )
    }

    // ---- layout -------------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let out = self.value(a).clone().reshaped(shape.to_vec());
        self.push(out, Op::Reshape(a), &[a])
    }

    /// Repeat every row (first-axis slice) `times` times consecutively.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Var {
        let t = self.value(a);
        assert!(t.ndim() >= 1, "repeat_rows on a scalar");
        let row = t.numel() / t.shape()[0].max(1);
        let mut data = Vec::with_capacity(t.numel() * times);
        for r in t.data().chunks(row.max(1)) {
            for _ in 0..times {
                data.extend_from_slice(r);
            }
        }
        let mut shape = t.shape().to_vec();
        shape[0] *= times;
        self.push(
            Tensor::new(shape, data),
            Op::RepeatRows { x: a, times },
            &[a],
        )
    }

    /// Concatenate along the first axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let tail = self.shape(parts[0])[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            assert_eq!(
                &t.shape()[1..],
                &tail[..],
                "concat_rows: trailing shapes differ"
            );
            rows += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        self.push(
            Tensor::new(shape, data),
            Op::ConcatRows(parts.to_vec()),
            parts,
        )
    }

    /// Pick one entry per last-axis row: `[.., n] -> [..]`.
    pub fn gather_last(&mut self, a: Var, index: &[usize]) -> Var {
        let t = self.value(a);
        let (rows, n) = rows_of(t);
        assert_eq!(
            index.len(),
            rows,
            "gather_last: {} indices for {rows} rows",
            index.len()
        );
        let data = t
            .data()
            .chunks(n)
            .zip(index)
            .map(|(r, &i)| {
                assert!(i < n, "gather_last: index {i} out of range {n}");
                r[i]
            })
            .collect();
        let shape = t.shape()[..t.ndim() - 1].to_vec();
        self.push(
            Tensor::new(shape, data),
            Op::GatherLast {
                x: a,
                index: index.to_vec(),
            },
            &[a],
        )
    }

    /// Select first-axis slices by index (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let t = self.value(a);
        let nrows = t.shape()[0];
        let row = t.numel() / nrows.max(1);
        let mut data = Vec::with_capacity(rows.len() * row);
        for &r in rows {
            assert!(r < nrows, "gather_rows: row {r} out of range {nrows}");
            data.extend_from_slice(&t.data()[r * row..(r + 1) * row]);
        }
        let mut shape = t.shape().to_vec();
        shape[0] = rows.len();
        self.push(
            Tensor::new(shape, data),
            Op::GatherRows {
                x: a,
                rows: rows.to_vec(),
            },
            &[a],
        )
    }

    // ---- backward -----------------------------------------------------

    /// Gradients of the scalar `loss` with respect to every tracked node.
    ///
    /// Panics if `loss` is not a one-element tensor.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(
            self.value(loss).numel(),
            1,
            "backward: loss must be scalar, got shape {:?}",
            self.shape(loss)
        );
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients {
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        }
    }

    /// Backpropagate `loss` and write parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore, mode: GradMode) {
        let grads = self.backward(loss);
        if mode == GradMode::Overwrite {
            store.zero_grad();
        }
        for &(v, id) in &self.params {
            if let Some(g) = &grads.grads[v.0] {
                let dst = store.get_mut(id).grad.data_mut();
                assert_eq!(dst.len(), g.len(), "parameter {} changed shape", id.0);
                for (d, s) in dst.iter_mut().zip(g) {
                    *d += s;
                }
            }
        }
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(ga) = self.acc(grads, *v) {
                        add_into(ga, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for (d, s) in gb.iter_mut().zip(g) {
                        *d -= s;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.acc(grads, *a) {
                    for ((d, s), y) in ga.iter_mut().zip(g).zip(vb) {
                        *d += s * y;
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for ((d, s), x) in gb.iter_mut().zip(g).zip(va) {
                        *d += s * x;
                    }
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, g);
                }
            }
            Op::MulScalar(a, c) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for (d, s) in ga.iter_mut().zip(g) {
                        *d += c * s;
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for ((d, s), y) in ga.iter_mut().zip(g).zip(out) {
                        *d += s * (1.0 - y * y);
                    }
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((d, s), x) in ga.iter_mut().zip(g).zip(x) {
                        if *x > 0.0 {
                            *d += s;
                        }
                    }
                }
            }
            Op::Square(a) => {
                let x = self.value(*a).data();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((d, s), x) in ga.iter_mut().zip(g).zip(x) {
                        *d += 2.0 * x * s;
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for d in ga.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel() as f64;
                if let Some(ga) = self.acc(grads, *a) {
                    for d in ga.iter_mut() {
                        *d += g[0] / n;
                    }
                }
            }
            Op::SumLast(a) => {
                let n = self.value(*a).last_dim();
                if let Some(ga) = self.acc(grads, *a) {
                    for (row, s) in ga.chunks_mut(n).zip(g) {
                        for d in row {
                            *d += s;
                        }
                    }
                }
            }
            Op::MaxLast { x, argmax } => {
                let n = self.value(*x).last_dim();
                if let Some(ga) = self.acc(grads, *x) {
                    for (r, (&j, s)) in argmax.iter().zip(g).enumerate() {
                        ga[r * n + j] += s;
                    }
                }
            }
            Op::Softmax(a) => {
                let n = self.value(*a).last_dim();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((d, y), s) in ga.chunks_mut(n).zip(out.chunks(n)).zip(g.chunks(n)) {
                        let dot: f64 = y.iter().zip(s).map(|(p, q)| p * q).sum();
                        for j in 0..n {
                            d[j] += y[j] * (s[j] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let n = self.value(*a).last_dim();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((d, y), s) in ga.chunks_mut(n).zip(out.chunks(n)).zip(g.chunks(n)) {
                        let total: f64 = s.iter().sum();
                        for j in 0..n {
                            d[j] += s[j] - y[j].exp() * total;
                        }
                    }
                }
            }
            Op::L2Normalize { x, norms } => {
                let n = self.value(*x).last_dim();
                if let Some(ga) = self.acc(grads, *x) {
                    for (((d, y), s), &norm) in ga
                        .chunks_mut(n)
                        .zip(out.chunks(n))
                        .zip(g.chunks(n))
                        .zip(norms)
                    {
                        if norm > L2_NORM_EPS {
                            let dot: f64 = y.iter().zip(s).map(|(p, q)| p * q).sum();
                            for j in 0..n {
                                d[j] += (s[j] - y[j] * dot) / norm;
                            }
                        } else {
                            for j in 0..n {
                                d[j] += s[j] / L2_NORM_EPS;
                            }
                        }
                    }
                }
            }
            Op::Fc { x, w, b } => self.fc_backward(*x, *w, *b, g, grads),
            Op::Conv2d {
                x,
                k,
                b,
                geom,
                cols,
            } => self.conv_backward(*x, *k, *b, geom, cols, g, grads),
            Op::RepeatRows { x, times } => {
                let t = self.value(*x);
                let row = t.numel() / t.shape()[0].max(1);
                if let Some(ga) = self.acc(grads, *x) {
                    for (r, dst) in ga.chunks_mut(row.max(1)).enumerate() {
                        for k in 0..*times {
                            let src = &g[(r * times + k) * row..][..row];
                            add_into(dst, src);
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).numel();
                    if let Some(gp) = self.acc(grads, *p) {
                        add_into(gp, &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::GatherLast { x, index } => {
                let n = self.value(*x).last_dim();
                if let Some(ga) = self.acc(grads, *x) {
                    for (r, (&j, s)) in index.iter().zip(g).enumerate() {
                        ga[r * n + j] += s;
                    }
                }
            }
            Op::GatherRows { x, rows } => {
                let t = self.value(*x);
                let row = t.numel() / t.shape()[0].max(1);
                if let Some(ga) = self.acc(grads, *x) {
                    for (m, &r) in rows.iter().enumerate() {
                        add_into(&mut ga[r * row..(r + 1) * row], &g[m * row..(m + 1) * row]);
                    }
                }
            }
        }
    }

    fn fc_backward(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (xt, wt) = (self.value(x), self.value(w));
        let (k_out, k_in) = (wt.shape()[0], wt.shape()[1]);
        let batch = xt.numel() / k_in;
        if let Some(gx) = self.acc(grads, x) {
            kernels::gemm(
                batch,
                k_out,
                k_in,
                MatRef::rows(g, k_out),
                MatRef::rows(wt.data(), k_in),
                gx,
                1.0,
            );
        }
        if let Some(gw) = self.acc(grads, w) {
            kernels::gemm(
                k_out,
                batch,
                k_in,
                MatRef::transposed(g, k_out),
                MatRef::rows(xt.data(), k_in),
                gw,
                1.0,
            );
        }
        if let Some(b) = b {
            if let Some(gb) = self.acc(grads, b) {
                for row in g.chunks(k_out) {
                    add_into(gb, row);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_backward(
        &self,
        x: Var,
        k: Var,
        b: Var,
        geom: &ConvGeom,
        cols: &[f64],
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let g_cm = batch_to_channel_major(g, geom);
        let ncols = geom.columns();
        if let Some(gb) = self.acc(grads, b) {
            for (c, row) in g_cm.chunks(ncols).enumerate() {
                gb[c] += row.iter().sum::<f64>();
            }
        }
        if let Some(gk) = self.acc(grads, k) {
            kernels::gemm(
                geom.c_out,
                ncols,
                geom.patch(),
                MatRef::rows(&g_cm, ncols),
                MatRef::transposed(cols, ncols),
                gk,
                1.0,
            );
        }
        let kt = self.value(k);
        if let Some(gx) = self.acc(grads, x) {
            let mut dcols = vec![0.0; geom.patch() * ncols];
            kernels::gemm(
                geom.patch(),
                geom.c_out,
                ncols,
                MatRef::transposed(kt.data(), geom.patch()),
                MatRef::rows(&g_cm, ncols),
                &mut dcols,
                0.0,
            );
            kernels::col2im_add(&dcols, geom, gx);
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Index of the first maximal element (ties resolve to the lowest index).
pub fn argmax_first(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// `[c_out, batch·positions]` → `[batch, c_out, positions]`.
fn channel_major_to_batch(cm: &[f64], g: &ConvGeom) -> Vec<f64> {
    let p = g.positions();
    let ncols = g.columns();
    let mut out = vec![0.0; cm.len()];
    for b in 0..g.batch {
        for c in 0..g.c_out {
            out[(b * g.c_out + c) * p..][..p].copy_from_slice(&cm[c * ncols + b * p..][..p]);
        }
    }
    out
}

fn batch_to_channel_major(bm: &[f64], g: &ConvGeom) -> Vec<f64> {
    let p = g.positions();
    let ncols = g.columns();
    let mut out = vec![0.0; bm.len()];
    for b in 0..g.batch {
        for c in 0..g.c_out {
            out[c * ncols + b * p..][..p].copy_from_slice(&bm[(b * g.c_out + c) * p..][..p]);
        }
    }
    out
}
