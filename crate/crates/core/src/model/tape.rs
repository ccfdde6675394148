//! Reverse-mode differentiation over vector-valued nodes.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! never copied onto the tape: nodes refer to them by [`ParamId`] and read
//! them from the borrowed [`ParamStore`] groups. [`Tape::backward`] walks
//! the nodes in reverse and returns gradients shaped like the stores.

use super::tensor::{ParamStore, Tensor};

/// A parameter tensor inside one of the tape's store groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId {
    pub group: usize,
    pub index: usize,
}

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Const,
    /// `sum_k W_k x_k + sum adds + b`
    Affine {
        terms: Vec<(ParamId, Var)>,
        adds: Vec<Var>,
        bias: Option<ParamId>,
    },
    Add(Var, Var),
    Mul(Var, Var),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    Mean(Vec<Var>),
    Softmax(Var),
    /// Row-wise softmax of a square parameter matrix, stored row-major.
    RowSoftmax(ParamId),
    /// `p^T M` for a vector `p` of length C and a C x C matrix node.
    VecMat(Var, Var),
    NegLog(Var, usize),
    WeightedSum(Vec<(Var, f64)>),
    /// Trace of a square matrix node divided by its size.
    TraceMean(Var),
    /// One row of a parameter matrix.
    Row(ParamId, usize),
    /// A fused gated recurrent step; keeps the gate activations `z`, `r`
    /// and `n` for the backward pass.
    GruStep {
        u: [ParamId; 3],
        b: [ParamId; 3],
        inputs: [Vec<Var>; 3],
        h: Var,
        gates: Box<[Vec<f64>; 3]>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Vec<f64>,
}

pub struct Tape<'p> {
    groups: Vec<&'p ParamStore>,
    nodes: Vec<Node>,
}

/// Gradients for every parameter of every group, shaped like the stores.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub groups: Vec<Vec<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.groups[id.group][id.index]
    }

    pub fn squared_norm(&self) -> f64 {
        self.groups
            .iter()
            .flatten()
            .flat_map(|t| t.data())
            .map(|g| g * g)
            .sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.groups.iter_mut().flatten() {
            for g in t.data_mut() {
                *g *= factor;
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl<'p> Tape<'p> {
    pub fn new(groups: Vec<&'p ParamStore>) -> Self {
        Self {
            groups,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn param(&self, id: ParamId) -> &'p Tensor {
        self.groups[id.group].get(id.index)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(Op::Const, value)
    }

    pub fn affine(
        &mut self,
        terms: Vec<(ParamId, Var)>,
        adds: Vec<Var>,
        bias: Option<ParamId>,
    ) -> Var {
        let rows = match (terms.first(), adds.first(), bias) {
            (Some((w, _)), _, _) => self.param(*w).rows(),
            (None, Some(a), _) => self.value(*a).len(),
            (None, None, Some(b)) => self.param(b).len(),
            _ => panic!("affine needs at least one operand"),
        };
        let mut out = match bias {
            Some(b) => self.param(b).data().to_vec(),
            None => vec![0.0; rows],
        };
        assert_eq!(out.len(), rows, "bias length");
        for &(w, x) in &terms {
            let w = self.param(w);
            let x = self.value(x);
            assert_eq!(w.cols(), x.len(), "affine input length");
            assert_eq!(w.rows(), rows, "affine output length");
            let cols = w.cols();
            for (o, row) in out.iter_mut().zip(w.data().chunks_exact(cols)) {
                *o += dot(row, x);
            }
        }
        for &a in &adds {
            let a = self.value(a);
            assert_eq!(a.len(), rows, "affine addend length");
            for (o, v) in out.iter_mut().zip(a) {
                *o += v;
            }
        }
        self.push(Op::Affine { terms, adds, bias }, out)
    }

    /// `z * h + (1 - z) * n` with
    /// `z = sigmoid(Uz h + sum inputs[0] + bz)`,
    /// `r = sigmoid(Ur h + sum inputs[1] + br)` and
    /// `n = tanh(Un (r * h) + sum inputs[2] + bn)`.
    pub fn gru_step(
        &mut self,
        u: [ParamId; 3],
        b: [ParamId; 3],
        inputs: [Vec<Var>; 3],
        h: Var,
    ) -> Var {
        let hv = self.value(h);
        let pre = |gate: usize, x: &[f64]| {
            let w = self.param(u[gate]);
            assert_eq!(w.cols(), x.len(), "recurrent input length");
            let mut out = self.param(b[gate]).data().to_vec();
            for (o, row) in out.iter_mut().zip(w.data().chunks_exact(w.cols())) {
                *o += dot(row, x);
            }
            for &a in &inputs[gate] {
                for (o, v) in out.iter_mut().zip(self.value(a)) {
                    *o += v;
                }
            }
            out
        };
        let z: Vec<f64> = pre(0, hv).into_iter().map(sigmoid).collect();
        let r: Vec<f64> = pre(1, hv).into_iter().map(sigmoid).collect();
        let rh: Vec<f64> = r.iter().zip(hv).map(|(x, y)| x * y).collect();
        let n: Vec<f64> = pre(2, &rh).into_iter().map(f64::tanh).collect();
        let out = z
            .iter()
            .zip(hv)
            .zip(&n)
            .map(|((zi, hi), ni)| zi * hi + (1.0 - zi) * ni)
            .collect();
        let gates = Box::new([z, r, n]);
        self.push(
            Op::GruStep {
                u,
                b,
                inputs,
                h,
                gates,
            },
            out,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        self.push(Op::Add(a, b), out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).len(), self.value(b).len());
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        self.push(Op::Mul(a, b), out)
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|x| 1.0 - x).collect();
        self.push(Op::OneMinus(a), out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        self.push(Op::Sigmoid(a), out)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push(Op::Tanh(a), out)
    }

    pub fn concat(&mut self, parts: Vec<Var>) -> Var {
        let mut out = Vec::new();
        for &p in &parts {
            out.extend_from_slice(self.value(p));
        }
        self.push(Op::Concat(parts), out)
    }

    pub fn mean(&mut self, parts: Vec<Var>) -> Var {
        assert!(!parts.is_empty(), "mean of nothing");
        let n = parts.len() as f64;
        let mut out = vec![0.0; self.value(parts[0]).len()];
        for &p in &parts {
            for (o, v) in out.iter_mut().zip(self.value(p)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= n;
        }
        self.push(Op::Mean(parts), out)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).to_vec();
        softmax_in_place(&mut out);
        self.push(Op::Softmax(a), out)
    }

    pub fn row_softmax(&mut self, scores: ParamId) -> Var {
        let s = self.param(scores);
        let c = s.cols();
        let mut out = s.data().to_vec();
        for row in out.chunks_exact_mut(c) {
            softmax_in_place(row);
        }
        self.push(Op::RowSoftmax(scores), out)
    }

    pub fn vec_mat(&mut self, p: Var, m: Var) -> Var {
        let pv = self.value(p);
        let mv = self.value(m);
        let c = pv.len();
        assert_eq!(mv.len(), c * c, "vec_mat shape mismatch");
        let mut out = vec![0.0; c];
        for (pi, row) in pv.iter().zip(mv.chunks_exact(c)) {
            axpy(*pi, row, &mut out);
        }
        self.push(Op::VecMat(p, m), out)
    }

    pub fn neg_log(&mut self, p: Var, index: usize) -> Var {
        let v = -self.value(p)[index].ln();
        self.push(Op::NegLog(p, index), vec![v])
    }

    pub fn weighted_sum(&mut self, terms: Vec<(Var, f64)>) -> Var {
        let v = terms.iter().map(|&(t, w)| w * self.scalar(t)).sum();
        self.push(Op::WeightedSum(terms), vec![v])
    }

    pub fn trace_mean(&mut self, m: Var) -> Var {
        let mv = self.value(m);
        let c = (mv.len() as f64).sqrt() as usize;
        assert_eq!(c * c, mv.len(), "trace of non-square node");
        let v = (0..c).map(|i| mv[i * c + i]).sum::<f64>() / c as f64;
        self.push(Op::TraceMean(m), vec![v])
    }

    pub fn row(&mut self, matrix: ParamId, index: usize) -> Var {
        let out = self.param(matrix).row(index).to_vec();
        self.push(Op::Row(matrix, index), out)
    }

    /// Gradients of the scalar `root` with respect to every parameter.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).len(), 1, "backward from a non-scalar node");
        let mut params: Vec<Vec<Tensor>> = self.groups.iter().map(|g| g.zeros_like()).collect();
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, Vec::new);
        grads[root.0] = vec![1.0];

        // Accumulate into a node's gradient slot, allocating it on first use.
        fn slot(grads: &mut [Vec<f64>], v: Var, len: usize) -> &mut Vec<f64> {
            let g = &mut grads[v.0];
            if g.is_empty() {
                g.resize(len, 0.0);
            }
            g
        }

        for i in (0..=root.0).rev() {
            if grads[i].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            let node = &self.nodes[i];
            match &node.op {
                Op::Const => {}
                Op::Affine { terms, adds, bias } => {
                    for &(w, x) in terms {
                        let wt = self.param(w);
                        let xv = self.value(x);
                        let cols = wt.cols();
                        let dw = params[w.group][w.index].data_mut();
                        for (r, &gr) in g.iter().enumerate() {
                            if gr != 0.0 {
                                axpy(gr, xv, &mut dw[r * cols..(r + 1) * cols]);
                            }
                        }
                        let dx = slot(&mut grads, x, cols);
                        for (r, &gr) in g.iter().enumerate() {
                            if gr != 0.0 {
                                axpy(gr, &wt.data()[r * cols..(r + 1) * cols], dx);
                            }
                        }
                    }
                    for &a in adds {
                        let da = slot(&mut grads, a, g.len());
                        axpy(1.0, &g, da);
                    }
                    if let Some(b) = bias {
                        axpy(1.0, &g, params[b.group][b.index].data_mut());
                    }
                }
                Op::Add(a, b) => {
                    axpy(1.0, &g, slot(&mut grads, *a, g.len()));
                    axpy(1.0, &g, slot(&mut grads, *b, g.len()));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da = slot(&mut grads, *a, g.len());
                    for ((d, gi), bi) in da.iter_mut().zip(&g).zip(bv) {
                        *d += gi * bi;
                    }
                    let db = slot(&mut grads, *b, g.len());
                    for ((d, gi), ai) in db.iter_mut().zip(&g).zip(av) {
                        *d += gi * ai;
                    }
                }
                Op::OneMinus(a) => {
                    axpy(-1.0, &g, slot(&mut grads, *a, g.len()));
                }
                Op::Sigmoid(a) => {
                    let da = slot(&mut grads, *a, g.len());
                    for ((d, gi), y) in da.iter_mut().zip(&g).zip(&node.value) {
                        *d += gi * y * (1.0 - y);
                    }
                }
                Op::Tanh(a) => {
                    let da = slot(&mut grads, *a, g.len());
                    for ((d, gi), y) in da.iter_mut().zip(&g).zip(&node.value) {
                        *d += gi * (1.0 - y * y);
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        axpy(1.0, &g[offset..offset + len], slot(&mut grads, p, len));
                        offset += len;
                    }
                }
                Op::Mean(parts) => {
                    let scale = 1.0 / parts.len() as f64;
                    for &p in parts {
                        axpy(scale, &g, slot(&mut grads, p, g.len()));
                    }
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let s = dot(&g, y);
                    let da = slot(&mut grads, *a, g.len());
                    for ((d, gi), yi) in da.iter_mut().zip(&g).zip(y) {
                        *d += yi * (gi - s);
                    }
                }
                Op::RowSoftmax(scores) => {
                    let c = self.param(*scores).cols();
                    let ds = params[scores.group][scores.index].data_mut();
                    for ((grow, yrow), drow) in g
                        .chunks_exact(c)
                        .zip(node.value.chunks_exact(c))
                        .zip(ds.chunks_exact_mut(c))
                    {
                        let s = dot(grow, yrow);
                        for ((d, gi), yi) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += yi * (gi - s);
                        }
                    }
                }
                Op::VecMat(p, m) => {
                    let (pv, mv) = (self.value(*p), self.value(*m));
                    let c = pv.len();
                    let dp = slot(&mut grads, *p, c);
                    for (d, row) in dp.iter_mut().zip(mv.chunks_exact(c)) {
                        *d += dot(row, &g);
                    }
                    let dm = slot(&mut grads, *m, c * c);
                    for (pi, drow) in pv.iter().zip(dm.chunks_exact_mut(c)) {
                        axpy(*pi, &g, drow);
                    }
                }
                Op::NegLog(p, k) => {
                    let pv = self.value(*p);
                    let len = pv.len();
                    let d = -g[0] / pv[*k];
                    slot(&mut grads, *p, len)[*k] += d;
                }
                Op::WeightedSum(terms) => {
                    for &(t, w) in terms {
                        slot(&mut grads, t, 1)[0] += g[0] * w;
                    }
                }
                Op::TraceMean(m) => {
                    let len = self.value(*m).len();
                    let c = (len as f64).sqrt() as usize;
                    let dm = slot(&mut grads, *m, len);
                    for j in 0..c {
                        dm[j * c + j] += g[0] / c as f64;
                    }
                }
                Op::Row(matrix, index) => {
                    let cols = self.param(*matrix).cols();
                    let dm = params[matrix.group][matrix.index].data_mut();
                    axpy(1.0, &g, &mut dm[index * cols..(index + 1) * cols]);
                }
                Op::GruStep {
                    u,
                    b,
                    inputs,
                    h,
                    gates,
                } => {
                    let [z, r, n] = &**gates;
                    let hv = self.value(*h);
                    let len = hv.len();
                    let rh: Vec<f64> = r.iter().zip(hv).map(|(x, y)| x * y).collect();
                    let mut dh: Vec<f64> = g.iter().zip(z).map(|(gi, zi)| gi * zi).collect();
                    let dn_pre: Vec<f64> = (0..len)
                        .map(|i| g[i] * (1.0 - z[i]) * (1.0 - n[i] * n[i]))
                        .collect();
                    let dz_pre: Vec<f64> = (0..len)
                        .map(|i| g[i] * (hv[i] - n[i]) * z[i] * (1.0 - z[i]))
                        .collect();
                    // through Un (r * h)
                    let mut drh = vec![0.0; len];
                    let un = self.param(u[2]);
                    let dun = params[u[2].group][u[2].index].data_mut();
                    for (row, &gr) in dn_pre.iter().enumerate() {
                        if gr != 0.0 {
                            axpy(gr, &rh, &mut dun[row * len..(row + 1) * len]);
                            axpy(gr, &un.data()[row * len..(row + 1) * len], &mut drh);
                        }
                    }
                    let dr_pre: Vec<f64> = (0..len)
                        .map(|i| drh[i] * hv[i] * r[i] * (1.0 - r[i]))
                        .collect();
                    for i in 0..len {
                        dh[i] += drh[i] * r[i];
                    }
                    for (gate, d) in [(0, &dz_pre), (1, &dr_pre)] {
                        let w = self.param(u[gate]);
                        let dw = params[u[gate].group][u[gate].index].data_mut();
                        for (row, &gr) in d.iter().enumerate() {
                            if gr != 0.0 {
                                axpy(gr, hv, &mut dw[row * len..(row + 1) * len]);
                                axpy(gr, &w.data()[row * len..(row + 1) * len], &mut dh);
                            }
                        }
                    }
                    for (gate, d) in [(0, &dz_pre), (1, &dr_pre), (2, &dn_pre)] {
                        axpy(1.0, d, params[b[gate].group][b[gate].index].data_mut());
                        for &a in &inputs[gate] {
                            axpy(1.0, d, slot(&mut grads, a, len));
                        }
                    }
                    axpy(1.0, &dh, slot(&mut grads, *h, len));
                }
            }
        }
        Gradients { groups: params }
    }
}
