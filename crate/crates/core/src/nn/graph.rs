//! A small reverse-mode automatic differentiation tape.
//!
//! A [`Graph`] records operations on 2-D tensors for one forward pass. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and returns
//! parameter gradients. Parameter leaves read their values straight from the
//! borrowed [`ParamStore`], so building a graph never copies weights.

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, Tensor};
use std::collections::HashMap;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddBroadcast(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    PairSum(Var, Var),
    PairMul(Var, Var),
    Sum(Var),
    CharConv {
        emb: Var,
        filters: Var,
        bias: Var,
        chars: Arc<Vec<Vec<usize>>>,
        width: usize,
        // per (token, filter): winning window start
        argmax: Vec<usize>,
    },
    SpanAttention {
        scores: Var,
        x: Var,
        spans: Vec<(usize, usize)>,
        weights: Vec<Vec<f64>>,
    },
    ScalarMix {
        weights: Var,
        scale: Var,
        layers: Arc<Vec<Tensor>>,
        probs: Vec<f64>,
        mix: Tensor,
    },
    EpsNll {
        scores: Var,
        terms: Vec<(usize, Option<usize>)>,
        // (rows + 1) × cols, last row is ε
        probs: Tensor,
    },
}

struct Node {
    value: Option<Tensor>,
    op: Op,
}

pub struct Graph<'a> {
    params: &'a ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

impl<'a> Graph<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols, bv.rows, "matmul shape mismatch");
        let mut out = Tensor::zeros(av.rows, bv.cols);
        matmul_acc(av, bv, &mut out);
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        let bv = self.value(b);
        assert_eq!(out.shape(), bv.shape(), "add shape mismatch");
        out.add_assign(bv);
        self.push(out, Op::Add(a, b))
    }

    /// `a + b` where `b` is `n×p`, `1×p`, `n×1` or `1×1` against `a: n×p`.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, p) = av.shape();
        assert!(
            (bv.rows == n || bv.rows == 1) && (bv.cols == p || bv.cols == 1),
            "broadcast shape mismatch: {:?} vs {:?}",
            av.shape(),
            bv.shape()
        );
        let mut out = av.clone();
        for i in 0..n {
            let bi = if bv.rows == 1 { 0 } else { i };
            for j in 0..p {
                let bj = if bv.cols == 1 { 0 } else { j };
                out.data[i * p + j] += bv.data[bi * bv.cols + bj];
            }
        }
        self.push(out, Op::AddBroadcast(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        let bv = self.value(b);
        assert_eq!(out.shape(), bv.shape(), "mul shape mismatch");
        for (o, x) in out.data.iter_mut().zip(&bv.data) {
            *o *= x;
        }
        self.push(out, Op::Mul(a, b))
    }

    pub fn mul_const(&mut self, a: Var, mask: Tensor) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.shape(), mask.shape(), "mask shape mismatch");
        for (o, m) in out.data.iter_mut().zip(&mask.data) {
            *o *= m;
        }
        self.push(out, Op::MulConst(a, mask))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.scale(s);
        self.push(out, Op::Scale(a, s))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let mut out = self.value(a).clone();
        for v in &mut out.data {
            *v = f(*v);
        }
        self.push(out, op)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |v| v.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows, rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.data[r * cols + offset..r * cols + offset + pv.cols].copy_from_slice(pv.row(r));
            }
            offset += pv.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols, cols, "concat_rows col mismatch");
            data.extend_from_slice(&pv.data);
            rows += pv.rows;
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.cols, "slice out of range");
        let mut out = Tensor::zeros(av.rows, len);
        for r in 0..av.rows {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let av = self.value(a);
        let mut out = Tensor::zeros(idx.len(), av.cols);
        for (o, &i) in idx.iter().enumerate() {
            out.row_mut(o).copy_from_slice(av.row(i));
        }
        self.push(out, Op::GatherRows(a, idx.to_vec()))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.len(), rows * cols, "reshape size mismatch");
        let out = Tensor::from_vec(rows, cols, av.data.clone());
        self.push(out, Op::Reshape(a))
    }

    /// Row `i * p + j` of the output is `a_i + b_j` for `a: n×m`, `b: p×m`.
    pub fn pair_sum(&mut self, a: Var, b: Var) -> Var {
        self.pairwise(a, b, false)
    }

    /// Row `i * p + j` of the output is `a_i ∘ b_j`.
    pub fn pair_mul(&mut self, a: Var, b: Var) -> Var {
        self.pairwise(a, b, true)
    }

    fn pairwise(&mut self, a: Var, b: Var, product: bool) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols, bv.cols, "pairwise width mismatch");
        let (n, p, m) = (av.rows, bv.rows, av.cols);
        let mut out = Tensor::zeros(n * p, m);
        for i in 0..n {
            for j in 0..p {
                let o = out.row_mut(i * p + j);
                for ((o, x), y) in o.iter_mut().zip(av.row(i)).zip(bv.row(j)) {
                    *o = if product { x * y } else { x + y };
                }
            }
        }
        let op = if product {
            Op::PairMul(a, b)
        } else {
            Op::PairSum(a, b)
        };
        self.push(out, op)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Character convolution with max-pooling over window positions followed
    /// by ReLU. `chars[t]` holds the (already padded) character ids of token
    /// `t`; every sequence must be at least `width` long.
    pub fn char_conv(
        &mut self,
        emb: Var,
        filters: Var,
        bias: Var,
        chars: Arc<Vec<Vec<usize>>>,
        width: usize,
    ) -> Var {
        let (ev, fv, bv) = (self.value(emb), self.value(filters), self.value(bias));
        let dim = ev.cols;
        assert_eq!(fv.rows, width * dim, "filter bank shape mismatch");
        let nf = fv.cols;
        let mut out = Tensor::zeros(chars.len(), nf);
        let mut argmax = vec![0usize; chars.len() * nf];
        let mut window = vec![0.0; width * dim];
        let mut resp = vec![0.0; nf];
        for (t, ids) in chars.iter().enumerate() {
            assert!(ids.len() >= width, "token shorter than filter width");
            let mut best = vec![f64::NEG_INFINITY; nf];
            for pos in 0..=ids.len() - width {
                for (k, &c) in ids[pos..pos + width].iter().enumerate() {
                    window[k * dim..(k + 1) * dim].copy_from_slice(ev.row(c));
                }
                resp.iter_mut().for_each(|r| *r = 0.0);
                for (k, &w) in window.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    for (r, &f) in resp.iter_mut().zip(fv.row(k)) {
                        *r += w * f;
                    }
                }
                for f in 0..nf {
                    if resp[f] > best[f] {
                        best[f] = resp[f];
                        argmax[t * nf + f] = pos;
                    }
                }
            }
            for f in 0..nf {
                out.data[t * nf + f] = (best[f] + bv.data[f]).max(0.0);
            }
        }
        self.push(
            out,
            Op::CharConv {
                emb,
                filters,
                bias,
                chars,
                width,
                argmax,
            },
        )
    }

    /// Soft head-word vectors: for each inclusive `(start, end)` span, the
    /// attention-weighted sum of rows of `x` using a softmax over `scores`
    /// (an `n×1` column) restricted to the span.
    pub fn span_attention(&mut self, scores: Var, x: Var, spans: &[(usize, usize)]) -> Var {
        let (sv, xv) = (self.value(scores), self.value(x));
        assert_eq!(sv.cols, 1);
        assert_eq!(sv.rows, xv.rows);
        let d = xv.cols;
        let mut out = Tensor::zeros(spans.len(), d);
        let mut weights = Vec::with_capacity(spans.len());
        for (s, &(start, end)) in spans.iter().enumerate() {
            let w = softmax(&sv.data[start..=end]);
            let row = out.row_mut(s);
            for (k, &a) in w.iter().enumerate() {
                for (o, &v) in row.iter_mut().zip(xv.row(start + k)) {
                    *o += a * v;
                }
            }
            weights.push(w);
        }
        self.push(
            out,
            Op::SpanAttention {
                scores,
                x,
                spans: spans.to_vec(),
                weights,
            },
        )
    }

    /// `scale · Σ_l softmax(weights)_l · layers[l]` with `weights: 1×L`,
    /// `scale: 1×1`.
    pub fn scalar_mix(&mut self, weights: Var, scale: Var, layers: Arc<Vec<Tensor>>) -> Var {
        let (wv, gv) = (self.value(weights), self.value(scale));
        assert_eq!(wv.len(), layers.len(), "one mixture weight per layer");
        let probs = softmax(&wv.data);
        let shape = layers[0].shape();
        let mut mix = Tensor::zeros(shape.0, shape.1);
        for (p, layer) in probs.iter().zip(layers.iter()) {
            for (m, v) in mix.data.iter_mut().zip(&layer.data) {
                *m += p * v;
            }
        }
        let mut out = mix.clone();
        out.scale(gv.item());
        self.push(
            out,
            Op::ScalarMix {
                weights,
                scale,
                layers,
                probs,
                mix,
            },
        )
    }

    /// Summed negative log-likelihood over `terms`. Column `j` of `scores`
    /// holds candidate logits for one outcome distribution, extended with an
    /// implicit ε logit fixed at 0. A term `(j, Some(i))` targets candidate
    /// `i`; `(j, None)` targets ε.
    pub fn eps_nll(&mut self, scores: Var, terms: Vec<(usize, Option<usize>)>) -> Var {
        let sv = self.value(scores);
        let (m, p) = sv.shape();
        let mut probs = Tensor::zeros(m + 1, p);
        let mut col = vec![0.0; m + 1];
        for j in 0..p {
            for i in 0..m {
                col[i] = sv.get(i, j);
            }
            col[m] = 0.0;
            let pr = softmax(&col);
            for (i, v) in pr.into_iter().enumerate() {
                probs.set(i, j, v);
            }
        }
        let mut loss = 0.0;
        for &(j, target) in &terms {
            let i = target.unwrap_or(m);
            let column_logits: Vec<f64> = (0..m)
                .map(|r| sv.get(r, j))
                .chain(std::iter::once(0.0))
                .collect();
            loss += log_sum_exp(&column_logits) - column_logits[i];
        }
        self.push(
            Tensor::scalar(loss),
            Op::EpsNll {
                scores,
                terms,
                probs,
            },
        )
    }

    /// Reverse pass from scalar node `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.shape(root), (1, 1), "backward from non-scalar");
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::new(self.params);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = slot(&mut grads, *a, av.shape());
                    matmul_bt_acc(&g, bv, ga);
                    let gb = slot(&mut grads, *b, bv.shape());
                    matmul_at_acc(av, &g, gb);
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        slot(&mut grads, v, g.shape()).add_assign(&g);
                    }
                }
                Op::AddBroadcast(a, b) => {
                    slot(&mut grads, *a, g.shape()).add_assign(&g);
                    let bshape = self.shape(*b);
                    let gb = slot(&mut grads, *b, bshape);
                    for i in 0..g.rows {
                        let bi = if bshape.0 == 1 { 0 } else { i };
                        for j in 0..g.cols {
                            let bj = if bshape.1 == 1 { 0 } else { j };
                            gb.data[bi * bshape.1 + bj] += g.get(i, j);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = slot(&mut grads, *a, av.shape());
                    for ((o, gg), y) in ga.data.iter_mut().zip(&g.data).zip(&bv.data) {
                        *o += gg * y;
                    }
                    let gb = slot(&mut grads, *b, bv.shape());
                    for ((o, gg), x) in gb.data.iter_mut().zip(&g.data).zip(&av.data) {
                        *o += gg * x;
                    }
                }
                Op::MulConst(a, mask) => {
                    let ga = slot(&mut grads, *a, g.shape());
                    for ((o, gg), m) in ga.data.iter_mut().zip(&g.data).zip(&mask.data) {
                        *o += gg * m;
                    }
                }
                Op::Scale(a, s) => {
                    let ga = slot(&mut grads, *a, g.shape());
                    for (o, gg) in ga.data.iter_mut().zip(&g.data) {
                        *o += gg * s;
                    }
                }
                Op::Relu(a) | Op::Tanh(a) | Op::Sigmoid(a) => {
                    let y = node.value.as_ref().expect("activation output");
                    let ga = slot(&mut grads, *a, g.shape());
                    for ((o, gg), yv) in ga.data.iter_mut().zip(&g.data).zip(&y.data) {
                        let d = match node.op {
                            Op::Relu(_) => {
                                if *yv > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Op::Tanh(_) => 1.0 - yv * yv,
                            _ => yv * (1.0 - yv),
                        };
                        *o += gg * d;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let shape = self.shape(p);
                        let gp = slot(&mut grads, p, shape);
                        for r in 0..shape.0 {
                            for (o, gg) in gp
                                .row_mut(r)
                                .iter_mut()
                                .zip(&g.row(r)[offset..offset + shape.1])
                            {
                                *o += gg;
                            }
                        }
                        offset += shape.1;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let shape = self.shape(p);
                        let n = shape.0 * shape.1;
                        let gp = slot(&mut grads, p, shape);
                        for (o, gg) in gp.data.iter_mut().zip(&g.data[offset..offset + n]) {
                            *o += gg;
                        }
                        offset += n;
                    }
                }
                Op::SliceCols(a, start) => {
                    let shape = self.shape(*a);
                    let ga = slot(&mut grads, *a, shape);
                    for r in 0..g.rows {
                        for (o, gg) in ga.row_mut(r)[*start..*start + g.cols]
                            .iter_mut()
                            .zip(g.row(r))
                        {
                            *o += gg;
                        }
                    }
                }
                Op::GatherRows(a, idx) => {
                    let shape = self.shape(*a);
                    let ga = slot(&mut grads, *a, shape);
                    for (o, &i) in idx.iter().enumerate() {
                        for (x, gg) in ga.row_mut(i).iter_mut().zip(g.row(o)) {
                            *x += gg;
                        }
                    }
                }
                Op::Reshape(a) => {
                    let shape = self.shape(*a);
                    let ga = slot(&mut grads, *a, shape);
                    for (o, gg) in ga.data.iter_mut().zip(&g.data) {
                        *o += gg;
                    }
                }
                Op::PairSum(a, b) | Op::PairMul(a, b) => {
                    let product = matches!(node.op, Op::PairMul(..));
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (n, p) = (av.rows, bv.rows);
                    let mut ga = Tensor::zeros(n, av.cols);
                    let mut gb = Tensor::zeros(p, bv.cols);
                    for i in 0..n {
                        for j in 0..p {
                            let gr = g.row(i * p + j);
                            if product {
                                for (k, gg) in gr.iter().enumerate() {
                                    ga.data[i * av.cols + k] += gg * bv.get(j, k);
                                    gb.data[j * bv.cols + k] += gg * av.get(i, k);
                                }
                            } else {
                                for (k, gg) in gr.iter().enumerate() {
                                    ga.data[i * av.cols + k] += gg;
                                    gb.data[j * bv.cols + k] += gg;
                                }
                            }
                        }
                    }
                    slot(&mut grads, *a, ga.shape()).add_assign(&ga);
                    slot(&mut grads, *b, gb.shape()).add_assign(&gb);
                }
                Op::Sum(a) => {
                    let shape = self.shape(*a);
                    let gv = g.item();
                    let ga = slot(&mut grads, *a, shape);
                    for o in &mut ga.data {
                        *o += gv;
                    }
                }
                Op::CharConv {
                    emb,
                    filters,
                    bias,
                    chars,
                    width,
                    argmax,
                } => {
                    let y = node.value.as_ref().expect("conv output");
                    let (ev, fv) = (self.value(*emb), self.value(*filters));
                    let dim = ev.cols;
                    let nf = fv.cols;
                    let mut ge = Tensor::zeros(ev.rows, ev.cols);
                    let mut gf = Tensor::zeros(fv.rows, fv.cols);
                    let mut gbias = Tensor::zeros(1, nf);
                    for (t, ids) in chars.iter().enumerate() {
                        for f in 0..nf {
                            if y.get(t, f) <= 0.0 {
                                continue;
                            }
                            let gg = g.get(t, f);
                            if gg == 0.0 {
                                continue;
                            }
                            gbias.data[f] += gg;
                            let pos = argmax[t * nf + f];
                            for k in 0..*width {
                                let c = ids[pos + k];
                                for dd in 0..dim {
                                    let row = k * dim + dd;
                                    gf.data[row * nf + f] += gg * ev.get(c, dd);
                                    ge.data[c * dim + dd] += gg * fv.get(row, f);
                                }
                            }
                        }
                    }
                    slot(&mut grads, *emb, ge.shape()).add_assign(&ge);
                    slot(&mut grads, *filters, gf.shape()).add_assign(&gf);
                    slot(&mut grads, *bias, gbias.shape()).add_assign(&gbias);
                }
                Op::SpanAttention {
                    scores,
                    x,
                    spans,
                    weights,
                } => {
                    let xv = self.value(*x);
                    let mut gx = Tensor::zeros(xv.rows, xv.cols);
                    let mut gs = Tensor::zeros(xv.rows, 1);
                    for (s, (&(start, _), w)) in spans.iter().zip(weights).enumerate() {
                        let gr = g.row(s);
                        let dalpha: Vec<f64> = (0..w.len())
                            .map(|k| gr.iter().zip(xv.row(start + k)).map(|(a, b)| a * b).sum())
                            .collect();
                        let mean: f64 = w.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
                        for (k, &a) in w.iter().enumerate() {
                            for (o, gg) in gx.row_mut(start + k).iter_mut().zip(gr) {
                                *o += a * gg;
                            }
                            gs.data[start + k] += a * (dalpha[k] - mean);
                        }
                    }
                    slot(&mut grads, *x, gx.shape()).add_assign(&gx);
                    slot(&mut grads, *scores, gs.shape()).add_assign(&gs);
                }
                Op::ScalarMix {
                    weights,
                    scale,
                    layers,
                    probs,
                    mix,
                } => {
                    let gamma = self.value(*scale).item();
                    let dscale: f64 = g.data.iter().zip(&mix.data).map(|(a, b)| a * b).sum();
                    let dots: Vec<f64> = layers
                        .iter()
                        .map(|l| {
                            gamma * g.data.iter().zip(&l.data).map(|(a, b)| a * b).sum::<f64>()
                        })
                        .collect();
                    let mean: f64 = probs.iter().zip(&dots).map(|(p, d)| p * d).sum();
                    let gw: Vec<f64> = probs
                        .iter()
                        .zip(&dots)
                        .map(|(p, d)| p * (d - mean))
                        .collect();
                    let n = gw.len();
                    slot(&mut grads, *weights, (1, n)).add_assign(&Tensor::from_vec(1, n, gw));
                    slot(&mut grads, *scale, (1, 1)).add_assign(&Tensor::scalar(dscale));
                }
                Op::EpsNll {
                    scores,
                    terms,
                    probs,
                } => {
                    let gv = g.item();
                    let shape = self.shape(*scores);
                    let m = shape.0;
                    let gs = slot(&mut grads, *scores, shape);
                    for &(j, target) in terms {
                        for i in 0..m {
                            let indicator = if target == Some(i) { 1.0 } else { 0.0 };
                            gs.data[i * shape.1 + j] += gv * (probs.get(i, j) - indicator);
                        }
                    }
                }
            }
        }
        out
    }
}

fn slot(grads: &mut [Option<Tensor>], v: Var, shape: (usize, usize)) -> &mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1))
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::uniform;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central finite differences of `f` with respect to every entry of every
    /// parameter, compared against the tape gradient.
    fn check(store: &mut ParamStore, f: impl Fn(&mut Graph) -> Var) {
        let analytic = {
            let mut g = Graph::new(store);
            let root = f(&mut g);
            g.backward(root)
        };
        let h = 1e-5;
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            for k in 0..store.get(id).len() {
                let orig = store.get(id).data[k];
                store.get_mut(id).data[k] = orig + h;
                let plus = {
                    let mut g = Graph::new(store);
                    let r = f(&mut g);
                    g.value(r).item()
                };
                store.get_mut(id).data[k] = orig - h;
                let minus = {
                    let mut g = Graph::new(store);
                    let r = f(&mut g);
                    g.value(r).item()
                };
                store.get_mut(id).data[k] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let a = analytic.get(id).map_or(0.0, |t| t.data[k]);
                let denom = a.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    (a - numeric).abs() / denom < 1e-4,
                    "{}[{k}]: analytic {a} numeric {numeric}",
                    store.name(id)
                );
            }
        }
    }

    #[test]
    fn dense_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let x = store.add("x", uniform(&mut rng, 3, 4, 1.0));
        let w = store.add("w", uniform(&mut rng, 4, 2, 1.0));
        let b = store.add("b", uniform(&mut rng, 1, 2, 1.0));
        let y = store.add("y", uniform(&mut rng, 2, 2, 1.0));
        check(&mut store, |g| {
            let (xv, wv, bv, yv) = (g.param(x), g.param(w), g.param(b), g.param(y));
            let h = g.matmul(xv, wv);
            let h = g.add_broadcast(h, bv);
            let t = g.tanh(h);
            let s = g.sigmoid(h);
            let m = g.mul(t, s);
            let cat = g.concat_cols(&[m, t]);
            let sl = g.slice_cols(cat, 1, 2);
            let gathered = g.gather_rows(sl, &[2, 0]);
            let ps = g.pair_sum(gathered, yv);
            let pm = g.pair_mul(ps, yv);
            let r = g.reshape(pm, 4, 4);
            let rows = g.concat_rows(&[r, r]);
            let sc = g.scale(rows, 0.5);
            let sq = g.mul(sc, sc);
            g.sum(sq)
        });
    }

    #[test]
    fn eps_nll_gradient_and_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let s = store.add("s", uniform(&mut rng, 3, 2, 2.0));
        check(&mut store, |g| {
            let sv = g.param(s);
            g.eps_nll(sv, vec![(0, Some(1)), (1, None), (0, Some(2))])
        });
        let mut g = Graph::new(&store);
        let zero = g.constant(Tensor::zeros(3, 1));
        let l = g.eps_nll(zero, vec![(0, None)]);
        assert!((g.value(l).item() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn char_conv_and_attention_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let emb = store.add("emb", uniform(&mut rng, 5, 2, 1.0));
        let filt = store.add("filt", uniform(&mut rng, 6, 3, 1.0));
        let bias = store.add("bias", uniform(&mut rng, 1, 3, 0.5));
        let sc = store.add("sc", uniform(&mut rng, 4, 1, 1.0));
        let chars = Arc::new(vec![vec![1, 2, 3, 0], vec![4, 4, 1], vec![2, 0, 0], vec![3, 1, 2]]);
        check(&mut store, |g| {
            let (e, f, b, s) = (g.param(emb), g.param(filt), g.param(bias), g.param(sc));
            let conv = g.char_conv(e, f, b, chars.clone(), 3);
            let att = g.span_attention(s, conv, &[(0, 2), (1, 1), (2, 3)]);
            let sq = g.mul(att, att);
            g.sum(sq)
        });
    }

    #[test]
    fn scalar_mix_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let w = store.add("w", uniform(&mut rng, 1, 3, 1.0));
        let gamma = store.add("gamma", Tensor::scalar(0.7));
        let layers = Arc::new((0..3).map(|_| uniform(&mut rng, 2, 3, 1.0)).collect::<Vec<_>>());
        let target = uniform(&mut rng, 2, 3, 1.0);
        check(&mut store, |g| {
            let (wv, gv) = (g.param(w), g.param(gamma));
            let mix = g.scalar_mix(wv, gv, layers.clone());
            let t = g.constant(target.clone());
            let prod = g.mul(mix, t);
            let sq = g.mul(prod, mix);
            g.sum(sq)
        });
    }
}
