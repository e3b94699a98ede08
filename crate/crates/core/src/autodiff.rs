//! Reverse-mode differentiation over dense row-major f64 matrices.
//!
//! A [`Tape`] records operations as they run; [`Tape::backward`] walks it in
//! reverse and accumulates gradients for every parameter read through
//! [`Tape::param`]. Parameters live in a [`ParamStore`] outside the tape, so
//! one tape serves one forward/backward pass.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("index {index} out of range for {bound} rows in {op}")]
    IndexOutOfRange { op: &'static str, index: usize, bound: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}

type Result<T> = std::result::Result<T, AutodiffError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
        assert_eq!(rows * cols, data.len(), "tensor data length");
        Tensor { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::from_vec(1, 1, vec![v])
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `a · b` with an i-k-j loop; the summation order is fixed.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let x = a.data[i * a.cols + k];
            if x == 0.0 {
                continue;
            }
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &y) in orow.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    out
}

/// `aᵀ · b`.
fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let arow = a.row(k);
        let brow = b.row(k);
        for (i, &x) in arow.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, &y) in orow.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    out
}

/// `a · bᵀ`.
fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let arow = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = arow.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    }
    out
}

pub type ParamId = usize;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub values: Vec<Tensor>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let id = self.values.len();
        self.names.push(name.to_string());
        self.values.push(value);
        self.index.insert(name.to_string(), id);
        id
    }

    /// Uniform(-a, a) with `a = sqrt(6 / (rows + cols))`.
    pub fn xavier(&mut self, name: &str, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> ParamId {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
        self.insert(name, Tensor::from_vec(rows, cols, data))
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.insert(name, Tensor::zeros(rows, cols))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|t| t.data.len()).sum()
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.values.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect()
    }
}

pub type Var = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddN(Vec<Var>),
    Concat(Vec<Var>),
    Relu(Var),
    Scale(Var, f64),
    ScaleRows(Var, Vec<f64>),
    RowSum(Var),
    RowMean(Var),
    Gather(Var, Vec<usize>),
    ScatterAdd(Var, Vec<usize>),
    SoftmaxCe(Var, Vec<usize>),
    SigmoidBce(Var, Vec<f64>),
    Mse(Var, Vec<f64>),
}

#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Tensor>,
    ops: Vec<Op>,
}

fn check(op: &'static str, ok: bool, left: (usize, usize), right: (usize, usize)) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(AutodiffError::ShapeMismatch { op, left, right })
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

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.values.len() - 1
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.values[v].shape()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.values[id].clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        check("matmul", sa.1 == sb.0, sa, sb)?;
        let v = matmul(&self.values[a], &self.values[b]);
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        check("add", sa == sb, sa, sb)?;
        let mut v = self.values[a].clone();
        v.add_assign(&self.values[b]);
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(row));
        check("add_row", sb.0 == 1 && sa.1 == sb.1, sa, sb)?;
        let mut v = self.values[a].clone();
        let r = self.values[row].data.clone();
        for chunk in v.data.chunks_mut(sa.1.max(1)) {
            for (x, y) in chunk.iter_mut().zip(&r) {
                *x += y;
            }
        }
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var> {
        let s = self.shape(xs[0]);
        let mut v = Tensor::zeros(s.0, s.1);
        for &x in xs {
            check("add_n", self.shape(x) == s, s, self.shape(x))?;
            v.add_assign(&self.values[x]);
        }
        Ok(self.push(v, Op::AddN(xs.to_vec())))
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let rows = self.shape(xs[0]).0;
        let mut cols = 0;
        for &x in xs {
            check("concat_cols", self.shape(x).0 == rows, (rows, 0), self.shape(x))?;
            cols += self.shape(x).1;
        }
        let mut v = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &x in xs {
                let t = &self.values[x];
                v.data[r * cols + off..r * cols + off + t.cols].copy_from_slice(t.row(r));
                off += t.cols;
            }
        }
        Ok(self.push(v, Op::Concat(xs.to_vec())))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut v = self.values[a].clone();
        v.data.iter_mut().for_each(|x| *x = x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let mut v = self.values[a].clone();
        v.data.iter_mut().for_each(|x| *x *= k);
        self.push(v, Op::Scale(a, k))
    }

    /// Multiplies row `i` by the constant `s[i]`.
    pub fn scale_rows(&mut self, a: Var, s: Vec<f64>) -> Result<Var> {
        let sa = self.shape(a);
        check("scale_rows", s.len() == sa.0, sa, (s.len(), 1))?;
        let mut v = self.values[a].clone();
        for (r, chunk) in v.data.chunks_mut(sa.1.max(1)).enumerate().take(sa.0) {
            chunk.iter_mut().for_each(|x| *x *= s[r]);
        }
        Ok(self.push(v, Op::ScaleRows(a, s)))
    }

    /// Sum of each row, `r × 1`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let t = &self.values[a];
        let v = Tensor::from_vec(t.rows, 1, (0..t.rows).map(|r| t.row(r).iter().sum()).collect());
        self.push(v, Op::RowSum(a))
    }

    /// Mean of each row, `r × 1`.
    pub fn row_mean(&mut self, a: Var) -> Var {
        let t = &self.values[a];
        let c = t.cols.max(1) as f64;
        let v = Tensor::from_vec(t.rows, 1, (0..t.rows).map(|r| t.row(r).iter().sum::<f64>() / c).collect());
        self.push(v, Op::RowMean(a))
    }

    /// Rows `a[idx[0]], a[idx[1]], ...`.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let t = &self.values[a];
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows) {
            return Err(AutodiffError::IndexOutOfRange {
                op: "gather_rows",
                index: bad,
                bound: t.rows,
            });
        }
        let mut v = Tensor::zeros(idx.len(), t.cols);
        for (o, &i) in idx.iter().enumerate() {
            v.data[o * t.cols..(o + 1) * t.cols].copy_from_slice(t.row(i));
        }
        Ok(self.push(v, Op::Gather(a, idx)))
    }

    /// `out[idx[i]] += a[i]` into an `n_out`-row result.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Vec<usize>, n_out: usize) -> Result<Var> {
        let t = &self.values[a];
        check("scatter_add_rows", idx.len() == t.rows, t.shape(), (idx.len(), 1))?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= n_out) {
            return Err(AutodiffError::IndexOutOfRange {
                op: "scatter_add_rows",
                index: bad,
                bound: n_out,
            });
        }
        let mut v = Tensor::zeros(n_out, t.cols);
        for (i, &o) in idx.iter().enumerate() {
            for (x, y) in v.data[o * t.cols..(o + 1) * t.cols].iter_mut().zip(t.row(i)) {
                *x += y;
            }
        }
        let out = self.push(v, Op::ScatterAdd(a, idx));
        Ok(out)
    }

    /// Mean softmax cross-entropy of `n × C` logits against class indices.
    pub fn softmax_ce(&mut self, logits: Var, labels: Vec<usize>) -> Result<Var> {
        let t = &self.values[logits];
        check("softmax_ce", labels.len() == t.rows, t.shape(), (labels.len(), 1))?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= t.cols) {
            return Err(AutodiffError::LabelOutOfRange {
                label: bad,
                classes: t.cols,
            });
        }
        let mut loss = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = t.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            loss += lse - row[y];
        }
        let n = labels.len().max(1) as f64;
        Ok(self.push(Tensor::scalar(loss / n), Op::SoftmaxCe(logits, labels)))
    }

    /// Mean binary cross-entropy of `n × 1` logits against targets in [0, 1].
    pub fn sigmoid_bce(&mut self, logits: Var, targets: Vec<f64>) -> Result<Var> {
        let t = &self.values[logits];
        check("sigmoid_bce", t.cols == 1 && targets.len() == t.rows, t.shape(), (targets.len(), 1))?;
        let loss: f64 = t
            .data
            .iter()
            .zip(&targets)
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .sum();
        let n = targets.len().max(1) as f64;
        Ok(self.push(Tensor::scalar(loss / n), Op::SigmoidBce(logits, targets)))
    }

    /// Mean squared error of `n × 1` predictions.
    pub fn mse(&mut self, pred: Var, targets: Vec<f64>) -> Result<Var> {
        let t = &self.values[pred];
        check("mse", t.cols == 1 && targets.len() == t.rows, t.shape(), (targets.len(), 1))?;
        let loss: f64 = t.data.iter().zip(&targets).map(|(x, y)| (x - y) * (x - y)).sum();
        let n = targets.len().max(1) as f64;
        Ok(self.push(Tensor::scalar(loss / n), Op::Mse(pred, targets)))
    }

    /// Gradients of the scalar `loss` with respect to every parameter in
    /// `store`, aligned with `store.values`.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Vec<Tensor> {
        let mut param_grads = store.zero_grads();
        self.backward_into(loss, &mut param_grads);
        param_grads
    }

    pub fn backward_into(&self, loss: Var, param_grads: &mut [Tensor]) {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = vec![None; loss + 1];
        grads[loss] = Some(Tensor::scalar(1.0));
        for v in (0..=loss).rev() {
            let Some(g) = grads[v].take() else { continue };
            let acc = |grads: &mut Vec<Option<Tensor>>, x: Var, t: Tensor| match &mut grads[x] {
                Some(e) => e.add_assign(&t),
                slot @ None => *slot = Some(t),
            };
            match &self.ops[v] {
                Op::Leaf => {}
                Op::Param(id) => param_grads[*id].add_assign(&g),
                Op::MatMul(a, b) => {
                    let ga = matmul_nt(&g, &self.values[*b]);
                    let gb = matmul_tn(&self.values[*a], &g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (x, y) in gr.data.iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, g);
                }
                Op::AddN(xs) => {
                    for &x in xs {
                        acc(&mut grads, x, g.clone());
                    }
                }
                Op::Concat(xs) => {
                    let mut off = 0;
                    for &x in xs {
                        let c = self.values[x].cols;
                        let mut part = Tensor::zeros(g.rows, c);
                        for r in 0..g.rows {
                            part.data[r * c..(r + 1) * c].copy_from_slice(&g.row(r)[off..off + c]);
                        }
                        off += c;
                        acc(&mut grads, x, part);
                    }
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    for (x, &inp) in ga.data.iter_mut().zip(&self.values[*a].data) {
                        if inp <= 0.0 {
                            *x = 0.0;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Scale(a, k) => {
                    let mut ga = g;
                    ga.data.iter_mut().for_each(|x| *x *= k);
                    acc(&mut grads, *a, ga);
                }
                Op::ScaleRows(a, s) => {
                    let mut ga = g;
                    let c = ga.cols.max(1);
                    for (r, chunk) in ga.data.chunks_mut(c).enumerate() {
                        chunk.iter_mut().for_each(|x| *x *= s[r]);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::RowSum(a) | Op::RowMean(a) => {
                    let t = &self.values[*a];
                    let k = if matches!(self.ops[v], Op::RowMean(_)) {
                        1.0 / t.cols.max(1) as f64
                    } else {
                        1.0
                    };
                    let mut ga = Tensor::zeros(t.rows, t.cols);
                    for r in 0..t.rows {
                        let gr = g.data[r] * k;
                        ga.data[r * t.cols..(r + 1) * t.cols].iter_mut().for_each(|x| *x = gr);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Gather(a, idx) => {
                    let t = &self.values[*a];
                    let mut ga = Tensor::zeros(t.rows, t.cols);
                    for (o, &i) in idx.iter().enumerate() {
                        for (x, y) in ga.data[i * t.cols..(i + 1) * t.cols].iter_mut().zip(g.row(o)) {
                            *x += y;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ScatterAdd(a, idx) => {
                    let t = &self.values[*a];
                    let mut ga = Tensor::zeros(t.rows, t.cols);
                    for (i, &o) in idx.iter().enumerate() {
                        ga.data[i * t.cols..(i + 1) * t.cols].copy_from_slice(g.row(o));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SoftmaxCe(a, labels) => {
                    let t = &self.values[*a];
                    let scale = g.data[0] / labels.len().max(1) as f64;
                    let mut ga = Tensor::zeros(t.rows, t.cols);
                    for (r, &y) in labels.iter().enumerate() {
                        let row = t.row(r);
                        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
                        for c in 0..t.cols {
                            let p = (row[c] - m).exp() / z;
                            ga.data[r * t.cols + c] = scale * (p - if c == y { 1.0 } else { 0.0 });
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SigmoidBce(a, targets) => {
                    let t = &self.values[*a];
                    let scale = g.data[0] / targets.len().max(1) as f64;
                    let data = t.data.iter().zip(targets).map(|(&x, &y)| scale * (sigmoid(x) - y)).collect();
                    acc(&mut grads, *a, Tensor::from_vec(t.rows, 1, data));
                }
                Op::Mse(a, targets) => {
                    let t = &self.values[*a];
                    let scale = g.data[0] / targets.len().max(1) as f64;
                    let data = t.data.iter().zip(targets).map(|(&x, &y)| scale * 2.0 * (x - y)).collect();
                    acc(&mut grads, *a, Tensor::from_vec(t.rows, 1, data));
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: store.zero_grads(),
            v: store.zero_grads(),
        }
    }

    /// One bias-corrected update.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        for (p, g) in store.values.iter().zip(grads) {
            check("adam", p.shape() == g.shape(), p.shape(), g.shape())?;
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let (m, v, p) = (&mut self.m[i], &mut self.v[i], &mut store.values[i]);
            for j in 0..g.data.len() {
                let gj = g.data[j];
                m.data[j] = self.beta1 * m.data[j] + (1.0 - self.beta1) * gj;
                v.data[j] = self.beta2 * v.data[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m.data[j] / bc1;
                let vh = v.data[j] / bc2;
                p.data[j] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Compares analytic gradients against central differences on up to
/// `n_samples` randomly chosen scalar parameters. Returns the largest
/// relative error `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(
    store: &mut ParamStore,
    analytic: &[Tensor],
    n_samples: usize,
    h: f64,
    seed: u64,
    mut loss: impl FnMut(&ParamStore) -> f64,
) -> f64 {
    let mut slots: Vec<(usize, usize)> = Vec::new();
    for (p, t) in store.values.iter().enumerate() {
        slots.extend((0..t.data.len()).map(|j| (p, j)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, slots.len(), n_samples.min(slots.len())).into_vec();
    let mut worst: f64 = 0.0;
    for k in picks {
        let (p, j) = slots[k];
        let orig = store.values[p].data[j];
        store.values[p].data[j] = orig + h;
        let up = loss(store);
        store.values[p].data[j] = orig - h;
        let down = loss(store);
        store.values[p].data[j] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[p].data[j];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}
