//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Graph`] is a tape: every op appends a node whose parents have smaller
//! indices, so walking the node list backwards is a reverse topological order
//! and each node is visited exactly once during [`Graph::backward`].

use rand::Rng;

use super::tensor::{matmul_into, Real, Tensor};
use crate::error::{PunError, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    MulCol(usize, usize),
    Scale(usize, T),
    Transpose(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    Tanh(usize),
    Gelu(usize),
    RowSoftmax(usize),
    RowNormalize(usize),
    Gather(usize, Vec<usize>),
    Dropout(usize, Vec<T>),
    SumRows(usize),
    MeanCols(usize),
    SumAll(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of `v`; zeros when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor<T> {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert!(
            value.all_finite(),
            "non-finite output from {:?}",
            std::mem::discriminant(&op)
        );
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Trainable input.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    /// Stop-gradient copy of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(PunError::shape("matmul", &[m, k], &[k2, n]));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_into(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a.0, b.0), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.dims(a) != self.dims(b) {
            return Err(self.shape_err("add", a, b));
        }
        let (m, n) = self.dims(a);
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::Add(a.0, b.0), rg))
    }

    /// `a (m x n) + b (1 x n)` with `b` repeated over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.dims(b) != (1, n) {
            return Err(self.shape_err("add_row", a, b));
        }
        let bias = self.value(b).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, &bv) in row.iter_mut().zip(&bias) {
                *x += bv;
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::AddRow(a.0, b.0), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.dims(a) != self.dims(b) {
            return Err(self.shape_err("mul", a, b));
        }
        let (m, n) = self.dims(a);
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::Mul(a.0, b.0), rg))
    }

    /// Row `i` of `b (m x n)` scaled by `a[i]`, `a` being `m x 1`.
    pub fn mul_col(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.dims(b);
        if self.dims(a) != (m, 1) {
            return Err(self.shape_err("mul_col", a, b));
        }
        let s = self.value(a).data().to_vec();
        let mut data = self.value(b).data().to_vec();
        for (row, &sv) in data.chunks_mut(n).zip(&s) {
            for x in row {
                *x = *x * sv;
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::MulCol(a.0, b.0), rg))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let (m, n) = self.dims(a);
        let data = self.value(a).data().iter().map(|&x| x * c).collect();
        let rg = self.rg(a);
        self.push(
            Tensor::matrix(m, n, data).expect("same size"),
            Op::Scale(a.0, c),
            rg,
        )
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(t, Op::Transpose(a.0), rg)
    }

    /// Side-by-side concatenation: all parts share the row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| PunError::arg("concat_cols of nothing"))?;
        let m = self.dims(first).0;
        let mut total = 0;
        for &p in parts {
            if self.dims(p).0 != m {
                return Err(self.shape_err("concat_cols", first, p));
            }
            total += self.dims(p).1;
        }
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let ids = parts.iter().map(|p| p.0).collect();
        Ok(self.push(Tensor::matrix(m, total, data)?, Op::ConcatCols(ids), rg))
    }

    /// Stacked concatenation: all parts share the column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| PunError::arg("concat_rows of nothing"))?;
        let n = self.dims(first).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            if self.dims(p).1 != n {
                return Err(self.shape_err("concat_rows", first, p));
            }
            rows += self.dims(p).0;
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let ids = parts.iter().map(|p| p.0).collect();
        Ok(self.push(Tensor::matrix(rows, n, data)?, Op::ConcatRows(ids), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if start + len > m {
            return Err(PunError::shape("slice_rows", &[m, n], &[start, len]));
        }
        let data = self.value(a).data()[start * n..(start + len) * n].to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(len, n, data)?, Op::SliceRows(a.0, start), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if start + len > n {
            return Err(PunError::shape("slice_cols", &[m, n], &[start, len]));
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&src.row_slice(r)[start..start + len]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(m, len, data)?, Op::SliceCols(a.0, start), rg))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.tanh());
        let rg = self.rg(a);
        self.push(t, Op::Tanh(a.0), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let c = T::lit(GELU_C);
        let k = T::lit(GELU_A);
        let half = T::lit(0.5);
        let t = self
            .value(a)
            .map(|x| half * x * (T::one() + (c * (x + k * x * x * x)).tanh()));
        let rg = self.rg(a);
        self.push(t, Op::Gelu(a.0), rg)
    }

    /// Softmax over each row.
    pub fn row_softmax(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        let rg = self.rg(a);
        self.push(
            Tensor::matrix(m, n, data).expect("same size"),
            Op::RowSoftmax(a.0),
            rg,
        )
    }

    /// Softmax down each column (across rows).
    pub fn col_softmax(&mut self, a: Var) -> Var {
        let t = self.transpose(a);
        let s = self.row_softmax(t);
        self.transpose(s)
    }

    /// Each row divided by its own sum.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n) {
            let s: T = row.iter().copied().sum();
            for x in row {
                *x = *x / s;
            }
        }
        let rg = self.rg(a);
        self.push(
            Tensor::matrix(m, n, data).expect("same size"),
            Op::RowNormalize(a.0),
            rg,
        )
    }

    /// Rows of `table` picked by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= m) {
            return Err(PunError::arg(format!(
                "gather index {bad} out of range for table with {m} rows"
            )));
        }
        let src = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * n);
        for &i in ids {
            data.extend_from_slice(src.row_slice(i));
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::matrix(ids.len(), n, data)?,
            Op::Gather(table.0, ids.to_vec()),
            rg,
        ))
    }

    /// Inverted dropout. Identity when `rng` is `None` (eval mode) or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: Option<&mut R>) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(PunError::arg(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        let rng = match rng {
            Some(r) if p > 0.0 => r,
            _ => return Ok(a),
        };
        let keep = T::lit(1.0 / (1.0 - p));
        let (m, n) = self.dims(a);
        let mask: Vec<T> = (0..m * n)
            .map(|_| {
                if rng.gen::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let data = zip_map(self.value(a).data(), &mask, |x, k| x * k);
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::Dropout(a.0, mask), rg))
    }

    /// Column sums, `1 x n`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let (_, n) = self.dims(a);
        let mut out = vec![T::zero(); n];
        for row in self.value(a).data().chunks(n) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::row(out), Op::SumRows(a.0), rg)
    }

    /// Row means, `m x 1`.
    pub fn mean_cols(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let inv = T::one() / T::from_usize(n).expect("usize fits");
        let out: Vec<T> = self
            .value(a)
            .data()
            .chunks(n)
            .map(|r| r.iter().copied().sum::<T>() * inv)
            .collect();
        let rg = self.rg(a);
        self.push(
            Tensor::matrix(m, 1, out).expect("same size"),
            Op::MeanCols(a.0),
            rg,
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::SumAll(a.0), rg)
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (`1 x n`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.dims(x);
        if self.dims(gamma) != (1, n) {
            return Err(self.shape_err("layer_norm", x, gamma));
        }
        if self.dims(beta) != (1, n) {
            return Err(self.shape_err("layer_norm", x, beta));
        }
        let eps = T::lit(eps);
        let nf = T::from_usize(n).expect("usize fits");
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let mut xhat = Vec::with_capacity(m * n);
        let mut inv_std = Vec::with_capacity(m);
        let mut out = Vec::with_capacity(m * n);
        for row in self.value(x).data().chunks(n) {
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::matrix(m, n, out)?,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Mean softmax cross-entropy of `logits (m x c)` against class `labels`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (m, c) = self.dims(logits);
        if labels.len() != m {
            return Err(PunError::shape("cross_entropy", &[m, c], &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(PunError::arg(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = T::zero();
        for (row, &l) in probs.chunks_mut(c).zip(labels) {
            let lse = log_sum_exp(row);
            loss += lse - row[l];
            softmax_in_place(row);
        }
        let mf = T::from_usize(m.max(1)).expect("usize fits");
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss / mf),
            Op::CrossEntropy {
                logits: logits.0,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// `(T Tᵀ) / sqrt(d)`.
    pub fn scaled_dot(&mut self, t: Var, d: usize) -> Result<Var> {
        if d == 0 {
            return Err(PunError::arg("scaled_dot with d = 0"));
        }
        let tt = self.transpose(t);
        let prod = self.matmul(t, tt)?;
        Ok(self.scale(
            prod,
            T::one() / T::from_usize(d).expect("usize fits").sqrt(),
        ))
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> PunError {
        PunError::shape(op, self.value(a).shape(), self.value(b).shape())
    }

    /// Gradients of a scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(PunError::arg(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let shapes: Vec<Vec<usize>> = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(&shapes[loss.0], T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], target: usize, g: Tensor<T>) {
        if !self.nodes[target].requires_grad {
            return;
        }
        let shape = self.nodes[target].value.shape();
        let g = if g.shape() == shape {
            g
        } else {
            Tensor::from_vec(shape.to_vec(), g.into_data()).expect("gradient size matches")
        };
        match &mut grads[target] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        let (m, n) = (y.rows(), y.cols());
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let av = &self.nodes[a].value;
                let bv = &self.nodes[b].value;
                let k = av.cols();
                if self.nodes[a].requires_grad {
                    let mut ga = vec![T::zero(); m * k];
                    matmul_into(dy.data(), bv.transpose().data(), &mut ga, m, n, k);
                    self.accumulate(grads, a, Tensor::matrix(m, k, ga).expect("size"));
                }
                if self.nodes[b].requires_grad {
                    let mut gb = vec![T::zero(); k * n];
                    matmul_into(av.transpose().data(), dy.data(), &mut gb, k, m, n);
                    self.accumulate(grads, b, Tensor::matrix(k, n, gb).expect("size"));
                }
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, dy.clone());
                self.accumulate(grads, b, dy.clone());
            }
            &Op::AddRow(a, b) => {
                self.accumulate(grads, a, dy.clone());
                let mut gb = vec![T::zero(); n];
                for row in dy.data().chunks(n) {
                    for (g, &d) in gb.iter_mut().zip(row) {
                        *g += d;
                    }
                }
                self.accumulate(grads, b, Tensor::row(gb));
            }
            &Op::Mul(a, b) => {
                let av = self.nodes[a].value.data();
                let bv = self.nodes[b].value.data();
                let ga = zip_map(dy.data(), bv, |d, x| d * x);
                let gb = zip_map(dy.data(), av, |d, x| d * x);
                self.accumulate(grads, a, Tensor::matrix(m, n, ga).expect("size"));
                self.accumulate(grads, b, Tensor::matrix(m, n, gb).expect("size"));
            }
            &Op::MulCol(a, b) => {
                let s = self.nodes[a].value.data();
                let bv = self.nodes[b].value.data();
                let ga: Vec<T> = dy
                    .data()
                    .chunks(n)
                    .zip(bv.chunks(n))
                    .map(|(d, x)| d.iter().zip(x).map(|(&d, &x)| d * x).sum())
                    .collect();
                let mut gb = dy.data().to_vec();
                for (row, &sv) in gb.chunks_mut(n).zip(s) {
                    for g in row {
                        *g = *g * sv;
                    }
                }
                self.accumulate(grads, a, Tensor::matrix(m, 1, ga).expect("size"));
                self.accumulate(grads, b, Tensor::matrix(m, n, gb).expect("size"));
            }
            &Op::Scale(a, c) => self.accumulate(grads, a, dy.map(|d| d * c)),
            &Op::Transpose(a) => self.accumulate(grads, a, dy.transpose()),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.nodes[p].value.cols();
                    let mut g = Vec::with_capacity(m * w);
                    for r in 0..m {
                        g.extend_from_slice(&dy.row_slice(r)[offset..offset + w]);
                    }
                    offset += w;
                    self.accumulate(grads, p, Tensor::matrix(m, w, g).expect("size"));
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let h = self.nodes[p].value.rows();
                    let g = dy.data()[offset * n..(offset + h) * n].to_vec();
                    offset += h;
                    self.accumulate(grads, p, Tensor::matrix(h, n, g).expect("size"));
                }
            }
            &Op::SliceRows(a, start) => {
                let src = &self.nodes[a].value;
                let mut g = Tensor::zeros(&[src.rows(), src.cols()]);
                g.data_mut()[start * n..(start + m) * n].copy_from_slice(dy.data());
                self.accumulate(grads, a, g);
            }
            &Op::SliceCols(a, start) => {
                let src = &self.nodes[a].value;
                let w = src.cols();
                let mut g = Tensor::zeros(&[src.rows(), w]);
                for r in 0..m {
                    g.data_mut()[r * w + start..r * w + start + n].copy_from_slice(dy.row_slice(r));
                }
                self.accumulate(grads, a, g);
            }
            &Op::Tanh(a) => {
                let g = zip_map(dy.data(), y.data(), |d, t| d * (T::one() - t * t));
                self.accumulate(grads, a, Tensor::matrix(m, n, g).expect("size"));
            }
            &Op::Gelu(a) => {
                let c = T::lit(GELU_C);
                let k = T::lit(GELU_A);
                let half = T::lit(0.5);
                let three = T::lit(3.0);
                let x = self.nodes[a].value.data();
                let g = zip_map(dy.data(), x, |d, x| {
                    let t = (c * (x + k * x * x * x)).tanh();
                    let dt = (T::one() - t * t) * c * (T::one() + three * k * x * x);
                    d * (half * (T::one() + t) + half * x * dt)
                });
                self.accumulate(grads, a, Tensor::matrix(m, n, g).expect("size"));
            }
            &Op::RowSoftmax(a) => {
                let mut g = Vec::with_capacity(m * n);
                for (dr, yr) in dy.data().chunks(n).zip(y.data().chunks(n)) {
                    let dot: T = dr.iter().zip(yr).map(|(&d, &p)| d * p).sum();
                    g.extend(dr.iter().zip(yr).map(|(&d, &p)| p * (d - dot)));
                }
                self.accumulate(grads, a, Tensor::matrix(m, n, g).expect("size"));
            }
            &Op::RowNormalize(a) => {
                let x = self.nodes[a].value.data();
                let mut g = Vec::with_capacity(m * n);
                for (dr, xr) in dy.data().chunks(n).zip(x.chunks(n)) {
                    let s: T = xr.iter().copied().sum();
                    let dot: T = dr.iter().zip(xr).map(|(&d, &v)| d * v).sum();
                    g.extend(dr.iter().map(|&d| d / s - dot / (s * s)));
                }
                self.accumulate(grads, a, Tensor::matrix(m, n, g).expect("size"));
            }
            Op::Gather(table, ids) => {
                let src = &self.nodes[*table].value;
                let mut g = Tensor::zeros(&[src.rows(), src.cols()]);
                for (r, &i) in ids.iter().enumerate() {
                    let dst = &mut g.data_mut()[i * n..(i + 1) * n];
                    for (o, &d) in dst.iter_mut().zip(dy.row_slice(r)) {
                        *o += d;
                    }
                }
                self.accumulate(grads, *table, g);
            }
            Op::Dropout(a, mask) => {
                let g = zip_map(dy.data(), mask, |d, k| d * k);
                self.accumulate(grads, *a, Tensor::matrix(m, n, g).expect("size"));
            }
            &Op::SumRows(a) => {
                let src = &self.nodes[a].value;
                let rows = src.rows();
                let mut g = Vec::with_capacity(rows * n);
                for _ in 0..rows {
                    g.extend_from_slice(dy.data());
                }
                self.accumulate(grads, a, Tensor::matrix(rows, n, g).expect("size"));
            }
            &Op::MeanCols(a) => {
                let w = self.nodes[a].value.cols();
                let inv = T::one() / T::from_usize(w).expect("usize fits");
                let mut g = Vec::with_capacity(m * w);
                for &d in dy.data() {
                    g.extend(std::iter::repeat_n(d * inv, w));
                }
                self.accumulate(grads, a, Tensor::matrix(m, w, g).expect("size"));
            }
            &Op::SumAll(a) => {
                let src = &self.nodes[a].value;
                self.accumulate(grads, a, Tensor::filled(src.shape(), dy.item()));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gv = self.nodes[*gamma].value.data();
                let nf = T::from_usize(n).expect("usize fits");
                let mut gx = Vec::with_capacity(m * n);
                let mut gg = vec![T::zero(); n];
                let mut gb = vec![T::zero(); n];
                for r in 0..m {
                    let dr = dy.row_slice(r);
                    let hr = &xhat[r * n..(r + 1) * n];
                    let dh: Vec<T> = dr.iter().zip(gv).map(|(&d, &g)| d * g).collect();
                    let mean_dh = dh.iter().copied().sum::<T>() / nf;
                    let mean_dh_h = dh.iter().zip(hr).map(|(&a, &b)| a * b).sum::<T>() / nf;
                    for j in 0..n {
                        gx.push(inv_std[r] * (dh[j] - mean_dh - hr[j] * mean_dh_h));
                        gg[j] += dr[j] * hr[j];
                        gb[j] += dr[j];
                    }
                }
                self.accumulate(grads, *x, Tensor::matrix(m, n, gx).expect("size"));
                self.accumulate(grads, *gamma, Tensor::row(gg));
                self.accumulate(grads, *beta, Tensor::row(gb));
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let lv = &self.nodes[*logits].value;
                let (rows, c) = (lv.rows(), lv.cols());
                let scale = dy.item() / T::from_usize(rows.max(1)).expect("usize fits");
                let mut g = probs.clone();
                for (row, &l) in g.chunks_mut(c).zip(labels) {
                    row[l] = row[l] - T::one();
                    for v in row.iter_mut() {
                        *v = *v * scale;
                    }
                }
                self.accumulate(grads, *logits, Tensor::matrix(rows, c, g).expect("size"));
            }
        }
    }
}

fn zip_map<T: Real>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x = *x / sum;
    }
}

fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = row.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_softmax() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::row(vec![0.0, 0.0, 0.0]));
        let y = g.row_softmax(x);
        for &p in g.value(y).data() {
            assert_relative_eq!(p, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn tanh_zero() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::scalar(0.0));
        let y = g.tanh(x);
        assert_eq!(g.value(y).item(), 0.0);
    }

    #[test]
    fn cross_entropy_uniform_is_ln2() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::row(vec![0.0, 0.0]));
        let l = g.cross_entropy(x, &[1]).unwrap();
        assert_relative_eq!(g.value(l).item(), 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn linear_map_gradient() {
        let mut g = Graph::<f64>::new();
        let w = g.param(Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6]).unwrap());
        let x = g.constant(Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0]).unwrap());
        let y = g.matmul(w, x).unwrap();
        let loss = g.sum_all(y);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(w).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn detached_and_unused_get_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::row(vec![1.0, 2.0]));
        let unused = g.param(Tensor::row(vec![5.0]));
        let d = g.detach(a);
        let p = g.mul(a, d).unwrap();
        let loss = g.sum_all(p);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(a).data(), &[1.0, 2.0]);
        assert_eq!(grads.get(d).data(), &[0.0, 0.0]);
        assert_eq!(grads.get(unused).data(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(g.backward(a), Err(PunError::Argument(_))));
    }

    #[test]
    fn shape_error_names_both_shapes() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("matmul"), "{err}");
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::row(vec![1.0, 2.0, 3.0]));
        let b = g.dropout::<ChaCha8Rng>(a, 0.5, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dropout_train_scales_survivors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::filled(&[1, 200], 1.0));
        let b = g.dropout(a, 0.25, Some(&mut rng)).unwrap();
        for &v in g.value(b).data() {
            assert!(v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn scaled_dot_divides_by_root_d() {
        let mut g = Graph::<f64>::new();
        let t = g.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 1.0, 1.0]).unwrap());
        let s = g.scaled_dot(t, 4).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5, 0.5, 1.0]);
    }
}
