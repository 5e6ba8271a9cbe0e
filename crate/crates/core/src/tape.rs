//! Reverse-mode automatic differentiation over dense 2-D `f64` matrices.
//!
//! A [`Tape`] records one computation (one sequence through one model);
//! [`Tape::backward`] walks it in reverse. Leaves borrow parameter tensors
//! so building a tape never copies weights.

use std::borrow::Cow;

use ndarray::{s, ArrayView2, Axis, Zip};

use crate::{Mat, Params};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Relu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    /// Row softmax; the additive bias is a constant and needs no gradient.
    Softmax(Var),
    ColSlice {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    GatherRows {
        table: Var,
        idx: Vec<usize>,
    },
    RowMask {
        x: Var,
        keep: Vec<bool>,
    },
    RowNormalize {
        x: Var,
        norms: Vec<f64>,
    },
    /// Attention over an explicit sparse neighbourhood; `weights[i]` holds
    /// `(key, softmax weight)` pairs for query `i`.
    SparseAttention {
        q: Var,
        k: Var,
        v: Var,
        scale: f64,
        weights: Vec<Vec<(usize, f64)>>,
    },
    Im2Col {
        x: Var,
        kernel: usize,
    },
    MaxPoolRows {
        x: Var,
        argmax: Vec<usize>,
    },
    /// Scalar loss whose gradient w.r.t. `input` was computed in the forward
    /// pass.
    Loss {
        input: Var,
        dinput: Mat,
    },
    Sum(Vec<Var>),
}

struct Node<'a> {
    value: Cow<'a, Mat>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.grads[v.0].take()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Row-wise softmax of `x + bias`. Rows whose entries are all `-inf` become
/// zero rows.
pub fn softmax_rows(x: ArrayView2<f64>, bias: Option<ArrayView2<f64>>) -> Mat {
    let mut out = x.to_owned();
    if let Some(b) = bias {
        out += &b;
    }
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            row.fill(0.0);
            continue;
        }
        let mut sum = 0.0;
        row.mapv_inplace(|v| {
            let e = (v - max).exp();
            sum += e;
            e
        });
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Log-sum-exp of a slice; `-inf` for an empty or all `-inf` slice.
pub fn logsumexp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.into_iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Mean cross-entropy of rows of `logits` against class targets, with its
/// gradient. `targets` holds `(row, class)` pairs; rows not listed
/// contribute nothing. The sum is divided by `norm`.
pub fn cross_entropy(logits: ArrayView2<f64>, targets: &[(usize, usize)], norm: f64) -> (f64, Mat) {
    let mut grad = Mat::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for &(row, class) in targets {
        let r = logits.row(row);
        let lse = logsumexp(r.iter().copied());
        loss += lse - r[class];
        let mut g = grad.row_mut(row);
        for (gj, &z) in g.iter_mut().zip(r.iter()) {
            *gj += (z - lse).exp() / norm;
        }
        g[class] -= 1.0 / norm;
    }
    (loss / norm, grad)
}

/// Binary cross-entropy with logits taken from column `col`; `labels` holds
/// `(row, target in {0,1})`.
pub fn binary_cross_entropy(
    logits: ArrayView2<f64>,
    col: usize,
    labels: &[(usize, f64)],
    norm: f64,
) -> (f64, Mat) {
    let mut grad = Mat::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for &(row, y) in labels {
        let z = logits[[row, col]];
        // log(1 + e^z) - y z, stable for both signs of z
        loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        grad[[row, col]] += (sigmoid(z) - y) / norm;
    }
    (loss / norm, grad)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Cow<'a, Mat>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    /// A borrowed leaf; gradients are tracked when `trainable`.
    pub fn leaf(&mut self, value: &'a Mat, trainable: bool) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, trainable)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    /// An owned leaf whose gradient is tracked (used for probing gradients
    /// w.r.t. intermediate inputs).
    pub fn input(&mut self, value: Mat) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(Cow::Owned(v), Op::MatMul(a, b), ng)
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        let ng = self.needs(a) || self.needs(b);
        self.push(Cow::Owned(v), Op::MatMulT(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(Cow::Owned(v), Op::Add(a, b), ng)
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        let ng = self.needs(a) || self.needs(row);
        self.push(Cow::Owned(v), Op::AddRow(a, row), ng)
    }

    /// `x · w + b`
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let h = self.matmul(x, w);
        self.add_row(h, b)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a) * factor;
        let ng = self.needs(a);
        self.push(Cow::Owned(v), Op::Scale(a, factor), ng)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        let ng = self.needs(a);
        self.push(Cow::Owned(v), Op::Gelu(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let ng = self.needs(a);
        self.push(Cow::Owned(v), Op::Relu(a), ng)
    }

    /// Per-row layer normalization with learned `1 × n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / n;
            let is = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| v * is);
            inv_std.push(is);
        }
        let out = &xhat * self.value(gamma) + self.value(beta);
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(
            Cow::Owned(out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// Row softmax of `a + bias` where `bias` is a constant (e.g. `-inf` for
    /// masked keys).
    pub fn softmax(&mut self, a: Var, bias: Option<&Mat>) -> Var {
        let v = softmax_rows(self.value(a).view(), bias.map(|b| b.view()));
        let ng = self.needs(a);
        self.push(Cow::Owned(v), Op::Softmax(a), ng)
    }

    pub fn col_slice(&mut self, x: Var, start: usize, width: usize) -> Var {
        let v = self.value(x).slice(s![.., start..start + width]).to_owned();
        let ng = self.needs(x);
        self.push(Cow::Owned(v), Op::ColSlice { x, start }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("parts share a row count");
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Cow::Owned(v), Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Var {
        let t = self.value(table);
        let mut v = Mat::zeros((idx.len(), t.ncols()));
        for (i, &r) in idx.iter().enumerate() {
            v.row_mut(i).assign(&t.row(r));
        }
        let ng = self.needs(table);
        self.push(
            Cow::Owned(v),
            Op::GatherRows {
                table,
                idx: idx.to_vec(),
            },
            ng,
        )
    }

    /// Zeroes rows where `keep` is false.
    pub fn row_mask(&mut self, x: Var, keep: &[bool]) -> Var {
        let mut v = self.value(x).clone();
        for (mut row, &k) in v.rows_mut().into_iter().zip(keep) {
            if !k {
                row.fill(0.0);
            }
        }
        let ng = self.needs(x);
        self.push(
            Cow::Owned(v),
            Op::RowMask {
                x,
                keep: keep.to_vec(),
            },
            ng,
        )
    }

    /// Scales each row to unit L2 norm (zero rows stay zero).
    pub fn row_normalize(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        let mut norms = Vec::with_capacity(v.nrows());
        for mut row in v.rows_mut() {
            let n = row.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n > 0.0 {
                row.mapv_inplace(|a| a / n);
            }
            norms.push(n);
        }
        let ng = self.needs(x);
        self.push(Cow::Owned(v), Op::RowNormalize { x, norms }, ng)
    }

    /// `out_i = Σ_j a_ij v_j` with `a_ij ∝ c_ij · exp(scale · q_i·k_j)` over the
    /// listed `(j, c_ij)` neighbours of query `i`. Queries without
    /// neighbours produce zero rows.
    pub fn sparse_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        scale: f64,
        neighbours: &[Vec<(usize, f64)>],
    ) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut out = Mat::zeros((qv.nrows(), vv.ncols()));
        let mut weights = Vec::with_capacity(neighbours.len());
        for (i, nb) in neighbours.iter().enumerate() {
            let scores: Vec<f64> = nb
                .iter()
                .map(|&(j, c)| c.ln() + scale * qv.row(i).dot(&kv.row(j)))
                .collect();
            let lse = logsumexp(scores.iter().copied());
            let w: Vec<(usize, f64)> = nb
                .iter()
                .zip(&scores)
                .map(|(&(j, _), &s)| (j, (s - lse).exp()))
                .collect();
            let mut row = out.row_mut(i);
            for &(j, a) in &w {
                row.scaled_add(a, &vv.row(j));
            }
            weights.push(w);
        }
        let ng = self.needs(q) || self.needs(k) || self.needs(v);
        self.push(
            Cow::Owned(out),
            Op::SparseAttention {
                q,
                k,
                v,
                scale,
                weights,
            },
            ng,
        )
    }

    /// Unfolds windows of `kernel` rows (zero padded, centred) so a 1-D
    /// convolution over the row axis becomes a matrix product. Output row
    /// `i` is `[x_{i-p}, …, x_{i+p}]` flattened, `p = kernel / 2`.
    pub fn im2col(&mut self, x: Var, kernel: usize) -> Var {
        let xv = self.value(x);
        let (n, c) = xv.dim();
        let pad = kernel / 2;
        let mut out = Mat::zeros((n, kernel * c));
        for i in 0..n {
            for t in 0..kernel {
                let src = i + t;
                if src < pad || src - pad >= n {
                    continue;
                }
                out.slice_mut(s![i, t * c..(t + 1) * c]).assign(&xv.row(src - pad));
            }
        }
        let ng = self.needs(x);
        self.push(Cow::Owned(out), Op::Im2Col { x, kernel }, ng)
    }

    /// Column-wise max over the rows where `valid` is true, as a `1 × c` row.
    pub fn max_pool_rows(&mut self, x: Var, valid: &[bool]) -> Var {
        let xv = self.value(x);
        let c = xv.ncols();
        let mut out = Mat::from_elem((1, c), f64::NEG_INFINITY);
        let mut argmax = vec![0usize; c];
        for (i, row) in xv.rows().into_iter().enumerate() {
            if !valid[i] {
                continue;
            }
            for (j, &val) in row.iter().enumerate() {
                if val > out[[0, j]] {
                    out[[0, j]] = val;
                    argmax[j] = i;
                }
            }
        }
        assert!(valid.iter().any(|&v| v), "max pool over an empty row set");
        let ng = self.needs(x);
        self.push(Cow::Owned(out), Op::MaxPoolRows { x, argmax }, ng)
    }

    pub fn cross_entropy(&mut self, logits: Var, targets: &[(usize, usize)], norm: f64) -> Var {
        let (loss, d) = cross_entropy(self.value(logits).view(), targets, norm);
        self.loss(logits, loss, d)
    }

    pub fn binary_cross_entropy(
        &mut self,
        logits: Var,
        col: usize,
        labels: &[(usize, f64)],
        norm: f64,
    ) -> Var {
        let (loss, d) = binary_cross_entropy(self.value(logits).view(), col, labels, norm);
        self.loss(logits, loss, d)
    }

    /// Records a scalar loss computed outside the tape together with its
    /// gradient w.r.t. `input`.
    pub fn loss(&mut self, input: Var, value: f64, dinput: Mat) -> Var {
        let ng = self.needs(input);
        self.push(
            Cow::Owned(Mat::from_elem((1, 1), value)),
            Op::Loss { input, dinput },
            ng,
        )
    }

    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let mut v = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            v += self.value(p);
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Cow::Owned(v), Op::Sum(parts.to_vec()), ng)
    }

    /// Back-propagates from `root` seeded with ones.
    pub fn backward(&self, root: Var) -> Grads {
        let seed = Mat::ones(self.value(root).raw_dim());
        self.backward_with(root, seed)
    }

    pub fn backward_with(&self, root: Var, seed: Mat) -> Grads {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { grads }
    }

    fn acc(&self, grads: &mut [Option<Mat>], v: Var, delta: Mat) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => *g += &delta,
            slot => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node<'a>, g: &Mat, grads: &mut [Option<Mat>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    self.acc(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.needs(*b) {
                    self.acc(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::MatMulT(a, b) => {
                if self.needs(*a) {
                    self.acc(grads, *a, g.dot(self.value(*b)));
                }
                if self.needs(*b) {
                    self.acc(grads, *b, g.t().dot(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                self.acc(grads, *a, g.clone());
                if self.needs(*row) {
                    self.acc(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Scale(a, f) => self.acc(grads, *a, g * *f),
            Op::Gelu(a) => {
                let mut d = self.value(*a).mapv(gelu_grad);
                d *= g;
                self.acc(grads, *a, d);
            }
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0
                        }
                    });
                self.acc(grads, *a, d);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                if self.needs(*gamma) {
                    self.acc(grads, *gamma, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.needs(*beta) {
                    self.acc(grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.needs(*x) {
                    let gam = self.value(*gamma);
                    let dxhat = g * gam;
                    let n = xhat.ncols() as f64;
                    let mut dx = Mat::zeros(xhat.raw_dim());
                    for r in 0..xhat.nrows() {
                        let dh = dxhat.row(r);
                        let xh = xhat.row(r);
                        let mean_dh = dh.sum() / n;
                        let mean_dh_xh = dh.dot(&xh) / n;
                        let is = inv_std[r];
                        for c in 0..xhat.ncols() {
                            dx[[r, c]] = is * (dh[c] - mean_dh - xh[c] * mean_dh_xh);
                        }
                    }
                    self.acc(grads, *x, dx);
                }
            }
            Op::Softmax(a) => {
                let p = &*node.value;
                let mut d = g * p;
                for (mut drow, prow) in d.rows_mut().into_iter().zip(p.rows()) {
                    let dot: f64 = drow.sum();
                    drow.scaled_add(-dot, &prow);
                }
                self.acc(grads, *a, d);
            }
            Op::ColSlice { x, start } => {
                let xv = self.value(*x);
                let mut d = Mat::zeros(xv.raw_dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                self.acc(grads, *x, d);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    if self.needs(p) {
                        self.acc(grads, p, g.slice(s![.., off..off + w]).to_owned());
                    }
                    off += w;
                }
            }
            Op::GatherRows { table, idx } => {
                let mut d = Mat::zeros(self.value(*table).raw_dim());
                for (i, &r) in idx.iter().enumerate() {
                    let mut row = d.row_mut(r);
                    row += &g.row(i);
                }
                self.acc(grads, *table, d);
            }
            Op::RowMask { x, keep } => {
                let mut d = g.clone();
                for (mut row, &k) in d.rows_mut().into_iter().zip(keep) {
                    if !k {
                        row.fill(0.0);
                    }
                }
                self.acc(grads, *x, d);
            }
            Op::RowNormalize { x, norms } => {
                let y = &*node.value;
                let mut d = Mat::zeros(y.raw_dim());
                for r in 0..y.nrows() {
                    if norms[r] == 0.0 {
                        continue;
                    }
                    let gy = g.row(r);
                    let yr = y.row(r);
                    let proj = gy.dot(&yr);
                    for c in 0..y.ncols() {
                        d[[r, c]] = (gy[c] - proj * yr[c]) / norms[r];
                    }
                }
                self.acc(grads, *x, d);
            }
            Op::SparseAttention {
                q,
                k,
                v,
                scale,
                weights,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let mut dq = Mat::zeros(qv.raw_dim());
                let mut dk = Mat::zeros(kv.raw_dim());
                let mut dv = Mat::zeros(vv.raw_dim());
                for (i, w) in weights.iter().enumerate() {
                    let gi = g.row(i);
                    let da: Vec<f64> = w.iter().map(|&(j, _)| gi.dot(&vv.row(j))).collect();
                    let mean: f64 = w.iter().zip(&da).map(|(&(_, a), d)| a * d).sum();
                    for (&(j, a), d) in w.iter().zip(&da) {
                        dv.row_mut(j).scaled_add(a, &gi);
                        let ds = a * (d - mean) * scale;
                        dq.row_mut(i).scaled_add(ds, &kv.row(j));
                        dk.row_mut(j).scaled_add(ds, &qv.row(i));
                    }
                }
                self.acc(grads, *q, dq);
                self.acc(grads, *k, dk);
                self.acc(grads, *v, dv);
            }
            Op::Im2Col { x, kernel } => {
                let (n, c) = self.value(*x).dim();
                let pad = kernel / 2;
                let mut d = Mat::zeros((n, c));
                for i in 0..n {
                    for t in 0..*kernel {
                        let src = i + t;
                        if src < pad || src - pad >= n {
                            continue;
                        }
                        let mut row = d.row_mut(src - pad);
                        row += &g.slice(s![i, t * c..(t + 1) * c]);
                    }
                }
                self.acc(grads, *x, d);
            }
            Op::MaxPoolRows { x, argmax } => {
                let mut d = Mat::zeros(self.value(*x).raw_dim());
                for (j, &r) in argmax.iter().enumerate() {
                    d[[r, j]] += g[[0, j]];
                }
                self.acc(grads, *x, d);
            }
            Op::Loss { input, dinput } => {
                self.acc(grads, *input, dinput * g[[0, 0]]);
            }
            Op::Sum(parts) => {
                for &p in parts {
                    self.acc(grads, p, g.clone());
                }
            }
        }
    }
}

/// A parameter map bound onto a tape, addressable by name.
pub struct Bindings {
    vars: indexmap::IndexMap<String, Var>,
}

impl Bindings {
    pub fn bind<'a>(tape: &mut Tape<'a>, params: &'a Params, trainable: bool) -> Self {
        let vars = params
            .iter()
            .map(|(name, t)| (name.clone(), tape.leaf(t, trainable)))
            .collect();
        Self { vars }
    }

    /// # Panics
    /// If `name` was not bound; parameter names are fixed by the model
    /// config, so a miss is a programming error.
    pub fn get(&self, name: &str) -> Var {
        match self.vars.get(name) {
            Some(&v) => v,
            None => panic!("parameter {name} not bound"),
        }
    }

    /// Gradients for every bound parameter, zero where none flowed.
    pub fn gradients(&self, tape: &Tape, grads: &mut Grads) -> Params {
        self.vars
            .iter()
            .map(|(name, &v)| {
                let g = grads
                    .take(v)
                    .unwrap_or_else(|| Mat::zeros(tape.value(v).raw_dim()));
                (name.clone(), g)
            })
            .collect()
    }
}
