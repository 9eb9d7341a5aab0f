//! Reverse-mode automatic differentiation over 2-D `f64` tensors.
//!
//! A [`Tape`] records one forward pass. Parameter leaves borrow their values from a
//! [`ParamStore`] instead of copying them, and [`Tape::backward`] accumulates straight
//! into a [`Grads`] buffer, so one tape per example is cheap enough for small models.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Axis};

use crate::params::{Grads, ParamId, ParamStore};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Input,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    /// a · bᵀ
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Gelu(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(NodeId),
    Gather {
        table: ParamId,
        ids: Vec<usize>,
    },
    SliceCols {
        x: NodeId,
        start: usize,
    },
    ConcatCols(Vec<NodeId>),
    MeanRows(NodeId),
    Dropout {
        x: NodeId,
        mask: Array2<f64>,
    },
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Array2<f64>,
    },
    BceLogits {
        logits: NodeId,
        cells: Vec<(usize, usize)>,
        labels: Vec<f64>,
        weights: Vec<f64>,
    },
    WeightedSum(Vec<(NodeId, f64)>),
}

struct Node {
    value: Option<Array2<f64>>,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let u = C * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub fn gelu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(gelu);
}

/// Numerically stable `log(1 + e^z)`.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// In-place row-wise softmax.
pub fn softmax_rows(a: &mut Array2<f64>) {
    for mut row in a.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
}

/// Row-wise layer normalization without affine terms; returns inverse std per row.
pub fn normalize_rows(a: &mut Array2<f64>) -> Vec<f64> {
    let d = a.ncols() as f64;
    let mut inv = Vec::with_capacity(a.nrows());
    for mut row in a.rows_mut() {
        let mean = row.sum() / d;
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d;
        let is = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|x| (x - mean) * is);
        inv.push(is);
    }
    inv
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        let node = &self.nodes[id.0];
        match node.op {
            Op::Param(pid) => self.params.get(pid),
            _ => node.value.as_ref().expect("node value"),
        }
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id)[[0, 0]]
    }

    fn push(&mut self, value: Option<Array2<f64>>, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn ng(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn input(&mut self, value: Array2<f64>) -> NodeId {
        self.push(Some(value), Op::Input, false)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.push(None, Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(Some(v), Op::MatMul(a, b), ng)
    }

    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(&self.value(b).t());
        let ng = self.ng(a) || self.ng(b);
        self.push(Some(v), Op::MatMulT(a, b), ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(Some(v), Op::Add(a, b), ng)
    }

    /// Adds a 1×n row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let v = self.value(a) + self.value(row);
        let ng = self.ng(a) || self.ng(row);
        self.push(Some(v), Op::AddRow(a, row), ng)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a) * s;
        let ng = self.ng(a);
        self.push(Some(v), Op::Scale(a, s), ng)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(gelu);
        let ng = self.ng(a);
        self.push(Some(v), Op::Gelu(a), ng)
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let mut xhat = self.value(x).clone();
        let inv_std = normalize_rows(&mut xhat);
        let v = &xhat * self.value(gain) + self.value(bias);
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        self.push(
            Some(v),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// Row-wise softmax. With `causal`, entries above the diagonal are masked out.
    pub fn softmax(&mut self, a: NodeId, causal: bool) -> NodeId {
        let mut v = self.value(a).clone();
        if causal {
            let n = v.ncols();
            for (i, mut row) in v.rows_mut().into_iter().enumerate() {
                for j in (i + 1)..n {
                    row[j] = f64::NEG_INFINITY;
                }
            }
        }
        softmax_rows(&mut v);
        let ng = self.ng(a);
        self.push(Some(v), Op::Softmax(a), ng)
    }

    /// Selects rows of a parameter table (embedding lookup).
    pub fn gather(&mut self, table: ParamId, ids: &[usize]) -> NodeId {
        let t = self.params.get(table);
        let mut v = Array2::zeros((ids.len(), t.ncols()));
        for (r, &id) in ids.iter().enumerate() {
            v.row_mut(r).assign(&t.row(id));
        }
        self.push(
            Some(v),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            true,
        )
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, width: usize) -> NodeId {
        let v = self
            .value(x)
            .slice(s![.., start..start + width])
            .to_owned();
        let ng = self.ng(x);
        self.push(Some(v), Op::SliceCols { x, start }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat rows must match");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Some(v), Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn mean_rows(&mut self, x: NodeId) -> NodeId {
        let v = self
            .value(x)
            .mean_axis(Axis(0))
            .expect("nonempty")
            .insert_axis(Axis(0));
        let ng = self.ng(x);
        self.push(Some(v), Op::MeanRows(x), ng)
    }

    /// Inverted dropout with a precomputed mask of 0 / (1/(1-p)) entries.
    pub fn dropout(&mut self, x: NodeId, mask: Array2<f64>) -> NodeId {
        let v = self.value(x) * &mask;
        let ng = self.ng(x);
        self.push(Some(v), Op::Dropout { x, mask }, ng)
    }

    /// `Σ_i w_i · (−log softmax(logits_i)[targets_i])` as a 1×1 node.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize], weights: &[f64]) -> NodeId {
        assert_eq!(targets.len(), self.value(logits).nrows());
        assert_eq!(targets.len(), weights.len());
        let mut probs = self.value(logits).clone();
        let mut total = 0.0;
        for (i, mut row) in probs.rows_mut().into_iter().enumerate() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += weights[i] * (lse - row[targets[i]]);
            row.mapv_inplace(|x| (x - lse).exp());
        }
        let ng = self.ng(logits);
        self.push(
            Some(Array2::from_elem((1, 1), total)),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            ng,
        )
    }

    /// Weighted binary cross-entropy on selected logit cells, as a 1×1 node.
    pub fn bce_logits(
        &mut self,
        logits: NodeId,
        cells: &[(usize, usize)],
        labels: &[f64],
        weights: &[f64],
    ) -> NodeId {
        assert_eq!(cells.len(), labels.len());
        assert_eq!(cells.len(), weights.len());
        let lv = self.value(logits);
        let mut total = 0.0;
        for ((&(r, c), &y), &w) in cells.iter().zip(labels).zip(weights) {
            let z = lv[[r, c]];
            total += w * (softplus(z) - y * z);
        }
        let ng = self.ng(logits);
        self.push(
            Some(Array2::from_elem((1, 1), total)),
            Op::BceLogits {
                logits,
                cells: cells.to_vec(),
                labels: labels.to_vec(),
                weights: weights.to_vec(),
            },
            ng,
        )
    }

    /// `Σ c_i · s_i` over 1×1 nodes.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> NodeId {
        let total: f64 = terms.iter().map(|&(n, c)| c * self.scalar(n)).sum();
        let ng = terms.iter().any(|&(n, _)| self.ng(n));
        self.push(
            Some(Array2::from_elem((1, 1), total)),
            Op::WeightedSum(terms.to_vec()),
            ng,
        )
    }

    /// Back-propagates from the 1×1 node `root`, adding `d root / d θ` into `grads`.
    pub fn backward(&self, root: NodeId, grads: &mut Grads) {
        let mut ng: Vec<Option<Array2<f64>>> = (0..=root.0).map(|_| None).collect();
        ng[root.0] = Some(Array2::from_elem((1, 1), 1.0));

        for i in (0..=root.0).rev() {
            let Some(dy) = ng[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param(pid) => {
                    *grads.get_mut(*pid) += &dy;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.ng(*a) {
                        let slot = self.slot(&mut ng, grads, *a);
                        general_mat_mul(1.0, &dy, &bv.t(), 1.0, slot);
                    }
                    if self.ng(*b) {
                        let slot = self.slot(&mut ng, grads, *b);
                        general_mat_mul(1.0, &av.t(), &dy, 1.0, slot);
                    }
                }
                Op::MatMulT(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.ng(*a) {
                        let slot = self.slot(&mut ng, grads, *a);
                        general_mat_mul(1.0, &dy, bv, 1.0, slot);
                    }
                    if self.ng(*b) {
                        let slot = self.slot(&mut ng, grads, *b);
                        general_mat_mul(1.0, &dy.t(), av, 1.0, slot);
                    }
                }
                Op::Add(a, b) => {
                    if self.ng(*a) {
                        *self.slot(&mut ng, grads, *a) += &dy;
                    }
                    if self.ng(*b) {
                        *self.slot(&mut ng, grads, *b) += &dy;
                    }
                }
                Op::AddRow(a, row) => {
                    if self.ng(*row) {
                        let sum = dy.sum_axis(Axis(0));
                        *self.slot(&mut ng, grads, *row) += &sum;
                    }
                    if self.ng(*a) {
                        *self.slot(&mut ng, grads, *a) += &dy;
                    }
                }
                Op::Scale(a, s) => {
                    self.slot(&mut ng, grads, *a).scaled_add(*s, &dy);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let mut d = dy;
                    d.zip_mut_with(x, |g, &xv| *g *= gelu_grad(xv));
                    *self.slot(&mut ng, grads, *a) += &d;
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    if self.ng(*gain) {
                        let dg = (&dy * xhat).sum_axis(Axis(0));
                        *self.slot(&mut ng, grads, *gain) += &dg;
                    }
                    if self.ng(*bias) {
                        let db = dy.sum_axis(Axis(0));
                        *self.slot(&mut ng, grads, *bias) += &db;
                    }
                    if self.ng(*x) {
                        let g = self.value(*gain);
                        let dxhat = &dy * g;
                        let d = xhat.ncols() as f64;
                        let mut dx = Array2::zeros(xhat.raw_dim());
                        for r in 0..xhat.nrows() {
                            let dh = dxhat.row(r);
                            let xh = xhat.row(r);
                            let sum_dh = dh.sum();
                            let sum_dhx = dh.dot(&xh);
                            let is = inv_std[r];
                            let mut out = dx.row_mut(r);
                            for c in 0..xhat.ncols() {
                                out[c] = is / d * (d * dh[c] - sum_dh - xh[c] * sum_dhx);
                            }
                        }
                        *self.slot(&mut ng, grads, *x) += &dx;
                    }
                }
                Op::Softmax(a) => {
                    let y = node.value.as_ref().unwrap();
                    let mut dx = &dy * y;
                    for (r, mut row) in dx.rows_mut().into_iter().enumerate() {
                        let s: f64 = row.sum();
                        let yr = y.row(r);
                        for c in 0..row.len() {
                            row[c] -= yr[c] * s;
                        }
                    }
                    *self.slot(&mut ng, grads, *a) += &dx;
                }
                Op::Gather { table, ids } => {
                    let g = grads.get_mut(*table);
                    for (r, &id) in ids.iter().enumerate() {
                        let mut dst = g.row_mut(id);
                        dst += &dy.row(r);
                    }
                }
                Op::SliceCols { x, start } => {
                    let w = dy.ncols();
                    let slot = self.slot(&mut ng, grads, *x);
                    let mut view = slot.slice_mut(s![.., *start..*start + w]);
                    view += &dy;
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        if self.ng(p) {
                            let piece = dy.slice(s![.., off..off + w]);
                            *self.slot(&mut ng, grads, p) += &piece;
                        }
                        off += w;
                    }
                }
                Op::MeanRows(x) => {
                    let n = self.value(*x).nrows() as f64;
                    let row = &dy / n;
                    *self.slot(&mut ng, grads, *x) += &row;
                }
                Op::Dropout { x, mask } => {
                    let d = &dy * mask;
                    *self.slot(&mut ng, grads, *x) += &d;
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    weights,
                    probs,
                } => {
                    let g = dy[[0, 0]];
                    let mut d = probs.clone();
                    for (r, mut row) in d.rows_mut().into_iter().enumerate() {
                        row[targets[r]] -= 1.0;
                        row.mapv_inplace(|v| v * g * weights[r]);
                    }
                    *self.slot(&mut ng, grads, *logits) += &d;
                }
                Op::BceLogits {
                    logits,
                    cells,
                    labels,
                    weights,
                } => {
                    let g = dy[[0, 0]];
                    let lv = self.value(*logits);
                    let mut d = Array2::zeros(lv.raw_dim());
                    for ((&(r, c), &y), &w) in cells.iter().zip(labels).zip(weights) {
                        d[[r, c]] += g * w * (sigmoid(lv[[r, c]]) - y);
                    }
                    *self.slot(&mut ng, grads, *logits) += &d;
                }
                Op::WeightedSum(terms) => {
                    let g = dy[[0, 0]];
                    for &(n, c) in terms {
                        if self.ng(n) {
                            self.slot(&mut ng, grads, n)[[0, 0]] += g * c;
                        }
                    }
                }
            }
        }
    }

    fn slot<'g>(
        &self,
        ng: &'g mut [Option<Array2<f64>>],
        grads: &'g mut Grads,
        id: NodeId,
    ) -> &'g mut Array2<f64> {
        match self.nodes[id.0].op {
            Op::Param(pid) => grads.get_mut(pid),
            _ => {
                let shape = self.value(id).raw_dim();
                ng[id.0].get_or_insert_with(|| Array2::zeros(shape))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::randn;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central-difference check of a scalar function of the store.
    fn check<F>(store: &mut ParamStore, f: F)
    where
        F: Fn(&mut Tape) -> NodeId,
    {
        let mut grads = Grads::zeros_like(store);
        {
            let mut tape = Tape::new(store);
            let root = f(&mut tape);
            tape.backward(root, &mut grads);
        }
        let eps = 1e-5;
        let ids: Vec<ParamId> = store.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            let n = store.get(id).len();
            for k in 0..n {
                let orig = store.get(id).as_slice().unwrap()[k];
                store.get_mut(id).as_slice_mut().unwrap()[k] = orig + eps;
                let lp = {
                    let mut t = Tape::new(store);
                    let r = f(&mut t);
                    t.scalar(r)
                };
                store.get_mut(id).as_slice_mut().unwrap()[k] = orig - eps;
                let lm = {
                    let mut t = Tape::new(store);
                    let r = f(&mut t);
                    t.scalar(r)
                };
                store.get_mut(id).as_slice_mut().unwrap()[k] = orig;
                let num = (lp - lm) / (2.0 * eps);
                let ana = grads.get(id).as_slice().unwrap()[k];
                let err = (num - ana).abs() / (num.abs() + ana.abs()).max(1e-6);
                assert!(err < 1e-5, "{} [{k}]: analytic {ana} numeric {num}", store.name(id));
            }
        }
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let emb = store.add("emb", randn(&mut rng, 5, 4, 0.5));
        let w = store.add("w", randn(&mut rng, 4, 4, 0.5));
        let b = store.add("b", randn(&mut rng, 1, 4, 0.5));
        let g = store.add("g", randn(&mut rng, 1, 4, 0.5) + 1.0);
        let be = store.add("be", randn(&mut rng, 1, 4, 0.1));
        let out = store.add("out", randn(&mut rng, 4, 5, 0.5));
        let mask = Array2::from_shape_fn((3, 4), |(i, j)| if (i + j) % 3 == 0 { 0.0 } else { 1.25 });
        check(&mut store, |t| {
            let x = t.gather(emb, &[1, 3, 1]);
            let wn = t.param(w);
            let bn = t.param(b);
            let h = t.matmul(x, wn);
            let h = t.add_row(h, bn);
            let gn = t.param(g);
            let ben = t.param(be);
            let h = t.layer_norm(h, gn, ben);
            let h = t.gelu(h);
            let h = t.dropout(h, mask.clone());
            let scores = t.matmul_t(h, x);
            let a = t.softmax(scores, true);
            let ctx = t.matmul(a, x);
            let l = t.slice_cols(ctx, 1, 2);
            let r = t.slice_cols(h, 0, 2);
            let cat = t.concat_cols(&[r, l]);
            let h2 = t.add(cat, h);
            let h2 = t.scale(h2, 0.7);
            let on = t.param(out);
            let logits = t.matmul(h2, on);
            let ce = t.cross_entropy(logits, &[0, 4, 2], &[0.5, 1.0, 0.25]);
            let bce = t.bce_logits(logits, &[(0, 1), (2, 3)], &[1.0, 0.0], &[1.0, 2.0]);
            let m = t.mean_rows(h2);
            let mw = t.matmul(m, on);
            let bce2 = t.bce_logits(mw, &[(0, 0)], &[1.0], &[1.0]);
            t.weighted_sum(&[(ce, 0.6), (bce, 0.4), (bce2, 1.0)])
        });
    }

    #[test]
    fn softplus_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}
