//! Reverse-mode automatic differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every primitive in the order it is applied. Because a
//! node can only reference nodes created before it, walking the tape from the
//! loss back to index 0 visits nodes in reverse topological order.
//!
//! ```
//! use igrec::autodiff::Tape;
//! use igrec::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::scalar(3.0));
//! let y = tape.mul(x, x);
//! let loss = tape.sum(y);
//! let grads = tape.backward(loss);
//! assert_eq!(grads.get(x).unwrap().item(), 6.0);
//! ```

use std::sync::Arc;

use crate::tensor::{gemm, SparseOperator, Tensor};

/// Norms below this make a cosine similarity degenerate.
pub const COSINE_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Contiguous segments over a flat list, described by offsets.
/// Segment `s` covers `offsets[s]..offsets[s + 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    offsets: Vec<usize>,
}

impl Segments {
    pub fn from_lengths(lengths: impl IntoIterator<Item = usize>) -> Self {
        let mut offsets = vec![0];
        for l in lengths {
            offsets.push(offsets.last().unwrap() + l);
        }
        Self { offsets }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn range(&self, s: usize) -> std::ops::Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMM { a: Arc<SparseOperator>, x: Var, adjoint: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Sigmoid(Var),
    Relu(Var),
    LogSigmoid(Var),
    GatherRows(Var, Arc<[usize]>),
    RowDot(Var, Var),
    MulRows(Var, Var),
    SegmentSoftmax(Var, Arc<Segments>),
    SegmentSum(Var, Arc<Segments>),
    SegmentMax(Var, Arc<Segments>, Vec<usize>),
    SoftmaxRows(Var, f64),
    StraightThrough(Var),
    Column(Var, usize),
    ConcatCols(Vec<Var>),
    RowCosine(Var, Var),
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` did not reach
    /// the loss.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.rows(), like.cols()))
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` without overflow for large `|x|`.
pub fn log_sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn softmax_in_place(xs: &mut [f64], tau: f64) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = ((*x - max) / tau).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

/// Cosine similarity and whether the pair was degenerate.
pub fn cosine_parts(a: &[f64], b: &[f64]) -> (f64, bool) {
    let na = crate::tensor::norm(a);
    let nb = crate::tensor::norm(b);
    if na < COSINE_EPS || nb < COSINE_EPS {
        return (0.0, true);
    }
    ((crate::tensor::dot(a, b) / (na * nb)).clamp(-1.0, 1.0), false)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.cols(), vb.rows(), "matmul shape");
        let mut out = Tensor::zeros(va.rows(), vb.cols());
        gemm(false, false, va, vb, 1.0, 0.0, &mut out);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    /// `A x` for a sparse `A`, or `Aᵀ x` when `adjoint` is set.
    pub fn spmm(&mut self, a: &Arc<SparseOperator>, x: Var, adjoint: bool) -> Var {
        let vx = self.value(x);
        let out = if adjoint { a.apply_adjoint(vx) } else { a.apply(vx) }.expect("spmm shape");
        let ng = self.ng(x);
        self.push(out, Op::SpMM { a: Arc::clone(a), x, adjoint }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, c), ng)
    }

    /// Adds a `1 x d` row to every row of an `n x d` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (va, vr) = (self.value(a), self.value(row));
        assert_eq!((vr.rows(), vr.cols()), (1, va.cols()), "add_row shape");
        let mut out = va.clone();
        let d = va.cols();
        for r in 0..va.rows() {
            for (o, b) in out.row_slice_mut(r).iter_mut().zip(vr.data()) {
                *o += b;
            }
        }
        debug_assert_eq!(out.cols(), d);
        let ng = self.ng(a) || self.ng(row);
        self.push(out, Op::AddRow(a, row), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid_scalar);
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(log_sigmoid_scalar);
        let ng = self.ng(a);
        self.push(out, Op::LogSigmoid(a), ng)
    }

    pub fn gather_rows(&mut self, a: Var, idx: Arc<[usize]>) -> Var {
        let out = self.value(a).select_rows(&idx);
        let ng = self.ng(a);
        self.push(out, Op::GatherRows(a, idx), ng)
    }

    /// Row-wise inner products of two `n x d` matrices, as `n x 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert!(va.same_shape(vb), "row_dot shape");
        let vals: Vec<f64> = (0..va.rows()).map(|r| crate::tensor::dot(va.row_slice(r), vb.row_slice(r))).collect();
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::column(&vals), Op::RowDot(a, b), ng)
    }

    /// Scales row `r` of `a` (`n x d`) by `w[r]` (`w` is `n x 1`).
    pub fn mul_rows(&mut self, a: Var, w: Var) -> Var {
        let (va, vw) = (self.value(a), self.value(w));
        assert_eq!((vw.rows(), vw.cols()), (va.rows(), 1), "mul_rows shape");
        let mut out = va.clone();
        for r in 0..va.rows() {
            let s = vw.data()[r];
            out.row_slice_mut(r).iter_mut().for_each(|x| *x *= s);
        }
        let ng = self.ng(a) || self.ng(w);
        self.push(out, Op::MulRows(a, w), ng)
    }

    /// Softmax of an `n x 1` column within each segment.
    pub fn segment_softmax(&mut self, a: Var, seg: Arc<Segments>) -> Var {
        let va = self.value(a);
        assert_eq!((va.rows(), va.cols()), (seg.total(), 1), "segment_softmax shape");
        let mut out = va.clone();
        for s in 0..seg.len() {
            let r = seg.range(s);
            if !r.is_empty() {
                softmax_in_place(&mut out.data_mut()[r], 1.0);
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::SegmentSoftmax(a, seg), ng)
    }

    /// Sums the rows of each segment; empty segments yield zero rows.
    pub fn segment_sum(&mut self, a: Var, seg: Arc<Segments>) -> Var {
        let va = self.value(a);
        assert_eq!(va.rows(), seg.total(), "segment_sum shape");
        let d = va.cols();
        let mut out = Tensor::zeros(seg.len(), d);
        for s in 0..seg.len() {
            for r in seg.range(s) {
                let src = va.row_slice(r);
                for (o, x) in out.row_slice_mut(s).iter_mut().zip(src) {
                    *o += x;
                }
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::SegmentSum(a, seg), ng)
    }

    /// Columnwise maximum over the rows of each segment; empty segments
    /// yield zero rows.
    pub fn segment_max(&mut self, a: Var, seg: Arc<Segments>) -> Var {
        let va = self.value(a);
        assert_eq!(va.rows(), seg.total(), "segment_max shape");
        let d = va.cols();
        let mut out = Tensor::zeros(seg.len(), d);
        let mut argmax = vec![usize::MAX; seg.len() * d];
        for s in 0..seg.len() {
            for c in 0..d {
                let mut best = f64::NEG_INFINITY;
                for r in seg.range(s) {
                    let v = va.get(r, c);
                    if v > best {
                        best = v;
                        argmax[s * d + c] = r;
                    }
                }
                if argmax[s * d + c] != usize::MAX {
                    out.set(s, c, best);
                }
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::SegmentMax(a, seg, argmax), ng)
    }

    /// Row-wise `softmax(x / tau)`.
    pub fn softmax_rows(&mut self, a: Var, tau: f64) -> Var {
        assert!(tau > 0.0, "temperature must be positive");
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_slice_mut(r), tau);
        }
        let ng = self.ng(a);
        self.push(out, Op::SoftmaxRows(a, tau), ng)
    }

    /// Forward: one-hot at each row's argmax (first on ties).
    /// Backward: identity, so gradients flow to the soft input.
    pub fn straight_through_one_hot(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut out = Tensor::zeros(va.rows(), va.cols());
        for r in 0..va.rows() {
            let row = va.row_slice(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            if !row.is_empty() {
                out.set(r, best, 1.0);
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::StraightThrough(a), ng)
    }

    pub fn column(&mut self, a: Var, j: usize) -> Var {
        let va = self.value(a);
        let vals: Vec<f64> = (0..va.rows()).map(|r| va.get(r, j)).collect();
        let ng = self.ng(a);
        self.push(Tensor::column(&vals), Op::Column(a, j), ng)
    }

    /// Concatenates `n x 1` columns into an `n x k` matrix.
    pub fn concat_cols(&mut self, cols: &[Var]) -> Var {
        let n = self.value(cols[0]).rows();
        let k = cols.len();
        let mut out = Tensor::zeros(n, k);
        for (j, &c) in cols.iter().enumerate() {
            let vc = self.value(c);
            assert_eq!((vc.rows(), vc.cols()), (n, 1), "concat_cols shape");
            for r in 0..n {
                out.set(r, j, vc.data()[r]);
            }
        }
        let ng = cols.iter().any(|&c| self.ng(c));
        self.push(out, Op::ConcatCols(cols.to_vec()), ng)
    }

    /// Row-wise cosine similarity as `n x 1`. Degenerate rows give 0.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert!(va.same_shape(vb), "row_cosine shape");
        let vals: Vec<f64> = (0..va.rows()).map(|r| cosine_parts(va.row_slice(r), vb.row_slice(r)).0).collect();
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::column(&vals), Op::RowCosine(a, b), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(out, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let va = self.value(a);
        assert!(!va.is_empty(), "mean of empty tensor");
        let out = Tensor::scalar(va.sum() / va.len() as f64);
        let ng = self.ng(a);
        self.push(out, Op::Mean(a), ng)
    }

    /// Propagates gradients from the scalar `loss` back to every node that
    /// depends on a trainable leaf.
    pub fn backward(&self, loss: Var) -> Gradients {
        let lv = self.value(loss);
        assert_eq!(lv.len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Accumulates `g` without allocating when a gradient already exists.
    fn accumulate_with(
        &self,
        grads: &mut [Option<Tensor>],
        v: Var,
        shape: (usize, usize),
        f: impl FnOnce(&mut Tensor),
    ) {
        if !self.ng(v) {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(shape.0, shape.1));
        }
        f(slot.as_mut().unwrap());
    }

    fn backward_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.accumulate_with(grads, *a, (va.rows(), va.cols()), |ga| gemm(false, true, g, vb, 1.0, 1.0, ga));
                self.accumulate_with(grads, *b, (vb.rows(), vb.cols()), |gb| gemm(true, false, va, g, 1.0, 1.0, gb));
            }
            Op::SpMM { a, x, adjoint } => {
                let gx = if *adjoint { a.apply(g) } else { a.apply_adjoint(g) }.expect("spmm shape");
                self.accumulate(grads, *x, gx);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, g.zip_map(vb, |x, y| x * y));
                self.accumulate(grads, *b, g.zip_map(va, |x, y| x * y));
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, g.map(|x| x * c));
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                let d = g.cols();
                self.accumulate_with(grads, *row, (1, d), |gr| {
                    for r in 0..g.rows() {
                        for (o, x) in gr.data_mut().iter_mut().zip(g.row_slice(r)) {
                            *o += x;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                self.accumulate(grads, *a, g.zip_map(y, |gi, yi| gi * yi * (1.0 - yi)));
            }
            Op::Relu(a) => {
                let va = self.value(*a);
                self.accumulate(grads, *a, g.zip_map(va, |gi, x| if x > 0.0 { gi } else { 0.0 }));
            }
            Op::LogSigmoid(a) => {
                let va = self.value(*a);
                self.accumulate(grads, *a, g.zip_map(va, |gi, x| gi * sigmoid_scalar(-x)));
            }
            Op::GatherRows(a, idx) => {
                let va = self.value(*a);
                self.accumulate_with(grads, *a, (va.rows(), va.cols()), |ga| {
                    for (k, &i) in idx.iter().enumerate() {
                        for (o, x) in ga.row_slice_mut(i).iter_mut().zip(g.row_slice(k)) {
                            *o += x;
                        }
                    }
                });
            }
            Op::RowDot(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut ga = vb.clone();
                let mut gb = va.clone();
                for r in 0..va.rows() {
                    let s = g.data()[r];
                    ga.row_slice_mut(r).iter_mut().for_each(|x| *x *= s);
                    gb.row_slice_mut(r).iter_mut().for_each(|x| *x *= s);
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::MulRows(a, w) => {
                let (va, vw) = (self.value(*a), self.value(*w));
                if self.ng(*a) {
                    let mut ga = g.clone();
                    for r in 0..ga.rows() {
                        let s = vw.data()[r];
                        ga.row_slice_mut(r).iter_mut().for_each(|x| *x *= s);
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.ng(*w) {
                    let vals: Vec<f64> =
                        (0..va.rows()).map(|r| crate::tensor::dot(g.row_slice(r), va.row_slice(r))).collect();
                    self.accumulate(grads, *w, Tensor::column(&vals));
                }
            }
            Op::SegmentSoftmax(a, seg) => {
                let y = &node.value;
                let mut ga = Tensor::zeros(y.rows(), 1);
                for s in 0..seg.len() {
                    let r = seg.range(s);
                    let inner: f64 = r.clone().map(|i| g.data()[i] * y.data()[i]).sum();
                    for i in r {
                        ga.data_mut()[i] = y.data()[i] * (g.data()[i] - inner);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SegmentSum(a, seg) => {
                let va = self.value(*a);
                self.accumulate_with(grads, *a, (va.rows(), va.cols()), |ga| {
                    for s in 0..seg.len() {
                        for r in seg.range(s) {
                            for (o, x) in ga.row_slice_mut(r).iter_mut().zip(g.row_slice(s)) {
                                *o += x;
                            }
                        }
                    }
                });
            }
            Op::SegmentMax(a, seg, argmax) => {
                let va = self.value(*a);
                let d = va.cols();
                self.accumulate_with(grads, *a, (va.rows(), d), |ga| {
                    for s in 0..seg.len() {
                        for c in 0..d {
                            let r = argmax[s * d + c];
                            if r != usize::MAX {
                                let v = ga.get(r, c) + g.get(s, c);
                                ga.set(r, c, v);
                            }
                        }
                    }
                });
            }
            Op::SoftmaxRows(a, tau) => {
                let y = &node.value;
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                    let inner = crate::tensor::dot(yr, gr);
                    for (j, o) in ga.row_slice_mut(r).iter_mut().enumerate() {
                        *o = yr[j] * (gr[j] - inner) / tau;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::StraightThrough(a) => self.accumulate(grads, *a, g.clone()),
            Op::Column(a, j) => {
                let va = self.value(*a);
                let j = *j;
                self.accumulate_with(grads, *a, (va.rows(), va.cols()), |ga| {
                    for r in 0..va.rows() {
                        let v = ga.get(r, j) + g.data()[r];
                        ga.set(r, j, v);
                    }
                });
            }
            Op::ConcatCols(cols) => {
                for (j, &c) in cols.iter().enumerate() {
                    let vals: Vec<f64> = (0..g.rows()).map(|r| g.get(r, j)).collect();
                    self.accumulate(grads, c, Tensor::column(&vals));
                }
            }
            Op::RowCosine(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut ga = Tensor::zeros(va.rows(), va.cols());
                let mut gb = Tensor::zeros(vb.rows(), vb.cols());
                for r in 0..va.rows() {
                    let (ar, br) = (va.row_slice(r), vb.row_slice(r));
                    let (cos, degenerate) = cosine_parts(ar, br);
                    if degenerate {
                        continue;
                    }
                    let na = crate::tensor::norm(ar);
                    let nb = crate::tensor::norm(br);
                    let s = g.data()[r];
                    for (j, o) in ga.row_slice_mut(r).iter_mut().enumerate() {
                        *o = s * (br[j] / (na * nb) - cos * ar[j] / (na * na));
                    }
                    for (j, o) in gb.row_slice_mut(r).iter_mut().enumerate() {
                        *o = s * (ar[j] / (na * nb) - cos * br[j] / (nb * nb));
                    }
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Sum(a) => {
                let va = self.value(*a);
                self.accumulate(grads, *a, Tensor::full(va.rows(), va.cols(), g.item()));
            }
            Op::Mean(a) => {
                let va = self.value(*a);
                let s = g.item() / va.len() as f64;
                self.accumulate(grads, *a, Tensor::full(va.rows(), va.cols(), s));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_difference_check;
    use crate::tensor::SparseMatrix;
    use rand::{Rng, SeedableRng};

    fn rand_tensor(rng: &mut impl Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Reduces any tensor to a scalar with non-uniform weights so every
    /// output coordinate matters.
    fn weighted_sum(t: &mut Tape, v: Var) -> Var {
        let shape = t.value(v).shape();
        let w = Tensor::from_vec(
            shape[0],
            shape[1],
            (0..shape[0] * shape[1]).map(|i| 0.3 + (i as f64 * 0.37).sin()).collect(),
        )
        .unwrap();
        let w = t.constant(w);
        let p = t.mul(v, w);
        t.sum(p)
    }

    fn check(params: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Var) {
        let r = finite_difference_check(
            |t, v| {
                let out = f(t, v);
                Ok(weighted_sum(t, out))
            },
            params,
            1e-5,
            64,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn primitive_gradients_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let a = rand_tensor(&mut rng, 4, 3);
        let b = rand_tensor(&mut rng, 3, 5);
        let c = rand_tensor(&mut rng, 4, 3);
        let row = rand_tensor(&mut rng, 1, 3);
        let col = rand_tensor(&mut rng, 4, 1);

        check(&[a.clone(), b.clone()], |t, v| t.matmul(v[0], v[1]));
        check(&[a.clone(), c.clone()], |t, v| t.add(v[0], v[1]));
        check(&[a.clone(), c.clone()], |t, v| t.sub(v[0], v[1]));
        check(&[a.clone(), c.clone()], |t, v| t.mul(v[0], v[1]));
        check(&[a.clone()], |t, v| t.scale(v[0], -2.5));
        check(&[a.clone(), row.clone()], |t, v| t.add_row(v[0], v[1]));
        check(&[a.clone()], |t, v| t.sigmoid(v[0]));
        check(&[a.map(|x| x + 0.05 * x.signum())], |t, v| t.relu(v[0]));
        check(&[a.clone()], |t, v| t.log_sigmoid(v[0]));
        check(&[a.clone()], |t, v| t.gather_rows(v[0], Arc::from(vec![2, 0, 2, 3])));
        check(&[a.clone(), c.clone()], |t, v| t.row_dot(v[0], v[1]));
        check(&[a.clone(), col.clone()], |t, v| t.mul_rows(v[0], v[1]));
        check(&[a.clone()], |t, v| t.softmax_rows(v[0], 0.7));
        check(&[a.clone()], |t, v| t.column(v[0], 1));
        check(&[col.clone(), col.map(|x| x * x)], |t, v| t.concat_cols(&[v[0], v[1]]));
        check(&[a.clone(), c.clone()], |t, v| t.row_cosine(v[0], v[1]));
        check(&[a.clone()], |t, v| t.mean(v[0]));

        let seg = Arc::new(Segments::from_lengths([1, 0, 3]));
        check(&[col.clone()], |t, v| t.segment_softmax(v[0], Arc::clone(&seg)));
        check(&[a.clone()], |t, v| t.segment_sum(v[0], Arc::clone(&seg)));
        check(&[a.clone()], |t, v| t.segment_max(v[0], Arc::clone(&seg)));

        let sp = SparseMatrix::from_triples(3, 4, vec![(0, 1, 0.5), (0, 3, -1.0), (2, 2, 2.0)]).unwrap();
        let op = SparseOperator::new(&sp);
        check(&[a.clone()], |t, v| t.spmm(&op, v[0], false));
        let x = rand_tensor(&mut rng, 3, 2);
        check(&[x], |t, v| t.spmm(&op, v[0], true));
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(0.0));
        let y = t.sigmoid(x);
        let g = t.backward(y);
        assert_eq!(t.value(y).item(), 0.5);
        assert_eq!(g.get(x).unwrap().item(), 0.25);
    }

    #[test]
    fn unreachable_params_get_no_gradient() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(2.0));
        let unused = t.param(Tensor::row(&[1.0, 1.0]));
        let y = t.mul(x, x);
        let g = t.backward(y);
        assert!(g.get(unused).is_none());
        assert_eq!(g.get_or_zeros(unused, t.value(unused)), Tensor::zeros(1, 2));
    }

    #[test]
    fn straight_through_forward_is_one_hot_backward_is_identity() {
        let mut t = Tape::new();
        let x = t.param(Tensor::from_rows(&[vec![0.2, 0.5, 0.3], vec![0.6, 0.1, 0.3]]).unwrap());
        let h = t.straight_through_one_hot(x);
        assert_eq!(t.value(h).data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        let w = t.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap());
        let p = t.mul(h, w);
        let s = t.sum(p);
        let g = t.backward(s);
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn degenerate_cosine_has_zero_gradient() {
        let mut t = Tape::new();
        let a = t.param(Tensor::row(&[0.0, 0.0]));
        let b = t.param(Tensor::row(&[1.0, 2.0]));
        let c = t.row_cosine(a, b);
        let s = t.sum(c);
        let g = t.backward(s);
        assert_eq!(t.value(c).item(), 0.0);
        assert_eq!(g.get(a).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(g.get(b).unwrap().data(), &[0.0, 0.0]);
    }
}
