//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every operation eagerly: values are available as soon as a
//! node is pushed, so callers may read intermediate results, compute constants
//! from them and keep building on the same tape. [`Tape::backward`] then walks
//! the nodes in reverse creation order.
//!
//! Besides the elementwise primitives the tape has a few fused operations (GRU
//! cell, affine map, squared-error and KL reductions). They keep the node count
//! per training block small; each one is covered by finite-difference checks.

use super::tensor::{matmul_acc, matmul_grad_input, matmul_grad_weight, Tensor};
use crate::error::{MaserError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    MatMul { x: Var, w: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Elu(Var),
    Abs(Var),
    Sigmoid(Var),
    Tanh(Var),
    Gru { x: Var, h: Var, wi: Var, wh: Var, bi: Var, bh: Var, cache: Vec<f64> },
    Gather { x: Var, idx: Vec<usize> },
    MaskedMax { x: Var, argmax: Vec<usize> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    RowBmm { q: Var, w: Var, n: usize, e: usize },
    RowDot(Var, Var),
    Sum(Var),
    LinComb(Vec<(Var, f64)>),
    WeightedSqErr { x: Var, target: Vec<f64>, weight: Vec<f64> },
    KlUniform { x: Var, weight: Vec<f64> },
    DistErr { a: Var, b: Var, target: Vec<f64>, weight: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Eager computation graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or `None` when the loss does not depend on it.
    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Differentiable input (parameters, or inputs whose gradient is wanted).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn check_same(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(MaserError::Config(format!(
                "{what}: shape mismatch {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    /// `x * w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (rows, inner) = self.shape(x);
        let (wr, cols) = self.shape(w);
        if wr != inner || self.shape(b) != (1, cols) {
            return Err(MaserError::Config(format!(
                "affine: input {rows}x{inner}, weight {wr}x{cols}, bias {:?}",
                self.shape(b)
            )));
        }
        let mut out = Vec::with_capacity(rows * cols);
        let bias = self.value(b).data();
        for _ in 0..rows {
            out.extend_from_slice(bias);
        }
        matmul_acc(self.value(x).data(), self.value(w).data(), &mut out, rows, inner, cols);
        let ng = self.ng(&[x, w, b]);
        Ok(self.push(Tensor::from_vec(rows, cols, out), Op::Affine { x, w, b }, ng))
    }

    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (rows, inner) = self.shape(x);
        let (wr, cols) = self.shape(w);
        if wr != inner {
            return Err(MaserError::Config(format!("matmul: {rows}x{inner} times {wr}x{cols}")));
        }
        let mut out = vec![0.0; rows * cols];
        matmul_acc(self.value(x).data(), self.value(w).data(), &mut out, rows, inner, cols);
        let ng = self.ng(&[x, w]);
        Ok(self.push(Tensor::from_vec(rows, cols, out), Op::MatMul { x, w }, ng))
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op, what: &str) -> Result<Var> {
        self.check_same(a, b, what)?;
        let (r, c) = self.shape(a);
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let ng = self.ng(&[a, b]);
        Ok(self.push(Tensor::from_vec(r, c, data), op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.shape(a);
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        let ng = self.ng(&[a]);
        self.push(Tensor::from_vec(r, c, data), op, ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    /// ELU with unit scale: `x` for positive inputs, `exp(x) - 1` otherwise.
    pub fn elu(&mut self, a: Var) -> Var {
        self.map(a, |x| if x > 0.0 { x } else { x.exp_m1() }, Op::Elu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.map(a, f64::abs, Op::Abs(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    /// Gated recurrent cell (reset and update gates), gate order `[r | z | n]`:
    ///
    /// ```text
    /// r  = sigmoid(x Wi_r + bi_r + h Wh_r + bh_r)
    /// z  = sigmoid(x Wi_z + bi_z + h Wh_z + bh_z)
    /// n  = tanh(x Wi_n + bi_n + r * (h Wh_n + bh_n))
    /// h' = (1 - z) * n + z * h
    /// ```
    pub fn gru(&mut self, x: Var, h: Var, wi: Var, wh: Var, bi: Var, bh: Var) -> Result<Var> {
        let (rows, inp) = self.shape(x);
        let (hr, hid) = self.shape(h);
        let g = 3 * hid;
        if hr != rows
            || self.shape(wi) != (inp, g)
            || self.shape(wh) != (hid, g)
            || self.shape(bi) != (1, g)
            || self.shape(bh) != (1, g)
        {
            return Err(MaserError::Config(format!(
                "gru: input {rows}x{inp}, hidden {hr}x{hid}, wi {:?}, wh {:?}",
                self.shape(wi),
                self.shape(wh)
            )));
        }
        let mut gi = Vec::with_capacity(rows * g);
        let mut gh = Vec::with_capacity(rows * g);
        for _ in 0..rows {
            gi.extend_from_slice(self.value(bi).data());
            gh.extend_from_slice(self.value(bh).data());
        }
        matmul_acc(self.value(x).data(), self.value(wi).data(), &mut gi, rows, inp, g);
        matmul_acc(self.value(h).data(), self.value(wh).data(), &mut gh, rows, hid, g);
        let hv = self.value(h).data();
        let mut out = vec![0.0; rows * hid];
        let mut cache = vec![0.0; rows * 4 * hid];
        for r in 0..rows {
            let gir = &gi[r * g..(r + 1) * g];
            let ghr = &gh[r * g..(r + 1) * g];
            let c = &mut cache[r * 4 * hid..(r + 1) * 4 * hid];
            for j in 0..hid {
                let rg = sigmoid(gir[j] + ghr[j]);
                let zg = sigmoid(gir[hid + j] + ghr[hid + j]);
                let hn = ghr[2 * hid + j];
                let n = (gir[2 * hid + j] + rg * hn).tanh();
                out[r * hid + j] = (1.0 - zg) * n + zg * hv[r * hid + j];
                c[j] = rg;
                c[hid + j] = zg;
                c[2 * hid + j] = n;
                c[3 * hid + j] = hn;
            }
        }
        let ng = self.ng(&[x, h, wi, wh, bi, bh]);
        Ok(self.push(
            Tensor::from_vec(rows, hid, out),
            Op::Gru { x, h, wi, wh, bi, bh, cache },
            ng,
        ))
    }

    /// Picks `x[r, idx[r]]` for every row, giving a column.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        if idx.len() != rows || idx.iter().any(|&i| i >= cols) {
            return Err(MaserError::Config(format!("gather: {} indices into {rows}x{cols}", idx.len())));
        }
        let v = self.value(x);
        let data = idx.iter().enumerate().map(|(r, &i)| v.get(r, i)).collect();
        let ng = self.ng(&[x]);
        Ok(self.push(Tensor::from_vec(rows, 1, data), Op::Gather { x, idx: idx.to_vec() }, ng))
    }

    /// Row-wise maximum over the columns allowed by `mask` (row-major, same
    /// shape as `x`). Ties resolve to the lowest column.
    pub fn masked_max(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        if mask.len() != rows * cols {
            return Err(MaserError::Config(format!("masked_max: mask length {} for {rows}x{cols}", mask.len())));
        }
        let v = self.value(x);
        let mut argmax = Vec::with_capacity(rows);
        let mut data = Vec::with_capacity(rows);
        for r in 0..rows {
            let mut best: Option<usize> = None;
            for c in 0..cols {
                if mask[r * cols + c] && best.is_none_or(|b| v.get(r, c) > v.get(r, b)) {
                    best = Some(c);
                }
            }
            let b = best.ok_or_else(|| MaserError::Config(format!("masked_max: row {r} has no allowed column")))?;
            argmax.push(b);
            data.push(v.get(r, b));
        }
        let ng = self.ng(&[x]);
        Ok(self.push(Tensor::from_vec(rows, 1, data), Op::MaskedMax { x, argmax }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |&p| self.shape(p).0);
        if parts.iter().any(|&p| self.shape(p).0 != rows) {
            return Err(MaserError::Config("concat_cols: row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let ng = self.ng(parts);
        Ok(self.push(Tensor::from_vec(rows, cols, data), Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map_or(0, |&p| self.shape(p).1);
        if parts.iter().any(|&p| self.shape(p).1 != cols) {
            return Err(MaserError::Config("concat_rows: column counts differ".into()));
        }
        let rows: usize = parts.iter().map(|&p| self.shape(p).0).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let ng = self.ng(parts);
        Ok(self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Per-row vector-matrix product: `q` is `B x n`, `w` is `B x (n*e)` holding
    /// one row-major `n x e` matrix per row; the result is `B x e`.
    pub fn row_bmm(&mut self, q: Var, w: Var, e: usize) -> Result<Var> {
        let (rows, n) = self.shape(q);
        if self.shape(w) != (rows, n * e) {
            return Err(MaserError::Config(format!(
                "row_bmm: q {rows}x{n}, w {:?}, embed {e}",
                self.shape(w)
            )));
        }
        let qv = self.value(q).data();
        let wv = self.value(w).data();
        let mut out = vec![0.0; rows * e];
        for r in 0..rows {
            matmul_acc(&qv[r * n..(r + 1) * n], &wv[r * n * e..(r + 1) * n * e], &mut out[r * e..(r + 1) * e], 1, n, e);
        }
        let ng = self.ng(&[q, w]);
        Ok(self.push(Tensor::from_vec(rows, e, out), Op::RowBmm { q, w, n, e }, ng))
    }

    /// Row-wise inner product, giving a column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "row_dot")?;
        let (rows, cols) = self.shape(a);
        let (av, bv) = (self.value(a), self.value(b));
        let data = (0..rows)
            .map(|r| av.row_slice(r).iter().zip(bv.row_slice(r)).map(|(x, y)| x * y).sum())
            .collect();
        let _ = cols;
        let ng = self.ng(&[a, b]);
        Ok(self.push(Tensor::from_vec(rows, 1, data), Op::RowDot(a, b), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// `sum_k c_k * x_k` over same-shaped nodes.
    pub fn lin_comb(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let Some(&(first, _)) = terms.first() else {
            return Ok(self.constant(Tensor::scalar(0.0)));
        };
        let (r, c) = self.shape(first);
        let mut out = vec![0.0; r * c];
        for &(v, k) in terms {
            if self.shape(v) != (r, c) {
                return Err(MaserError::Config("lin_comb: shape mismatch".into()));
            }
            for (o, x) in out.iter_mut().zip(self.value(v).data()) {
                *o += k * x;
            }
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let ng = self.ng(&vars);
        Ok(self.push(Tensor::from_vec(r, c, out), Op::LinComb(terms.to_vec()), ng))
    }

    /// `sum_k weight[k] * (x[k] - target[k])^2` over the entries of `x`.
    pub fn weighted_sq_err(&mut self, x: Var, target: Vec<f64>, weight: Vec<f64>) -> Result<Var> {
        let n = self.value(x).len();
        if target.len() != n || weight.len() != n {
            return Err(MaserError::Config(format!(
                "weighted_sq_err: {n} entries, {} targets, {} weights",
                target.len(),
                weight.len()
            )));
        }
        let mut s = 0.0;
        for ((x, y), w) in self.value(x).data().iter().zip(&target).zip(&weight) {
            if *w != 0.0 {
                let d = x - y;
                s += w * d * d;
            }
        }
        let ng = self.ng(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::WeightedSqErr { x, target, weight }, ng))
    }

    /// `sum_r weight[r] * KL(softmax(x[r, :]) || uniform)`.
    pub fn kl_uniform(&mut self, x: Var, weight: Vec<f64>) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        if weight.len() != rows {
            return Err(MaserError::Config(format!("kl_uniform: {} weights for {rows} rows", weight.len())));
        }
        let v = self.value(x);
        let mut s = 0.0;
        for (r, w) in weight.iter().enumerate() {
            if *w != 0.0 {
                s += w * kl_to_uniform(v.row_slice(r));
            }
        }
        let _ = cols;
        let ng = self.ng(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::KlUniform { x, weight }, ng))
    }

    /// `sum_r weight[r] * (||a[r, :] - b[r, :]||_2 - target[r])^2`.
    pub fn dist_err(&mut self, a: Var, b: Var, target: Vec<f64>, weight: Vec<f64>) -> Result<Var> {
        self.check_same(a, b, "dist_err")?;
        let rows = self.shape(a).0;
        if target.len() != rows || weight.len() != rows {
            return Err(MaserError::Config("dist_err: target/weight length".into()));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut s = 0.0;
        for r in 0..rows {
            if weight[r] != 0.0 {
                let d = euclid(av.row_slice(r), bv.row_slice(r)) - target[r];
                s += weight[r] * d * d;
            }
        }
        let ng = self.ng(&[a, b]);
        Ok(self.push(Tensor::scalar(s), Op::DistErr { a, b, target, weight }, ng))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(MaserError::Config(format!(
                "backward needs a scalar loss, got {}x{}",
                lv.rows(),
                lv.cols()
            )));
        }
        if !lv.item().is_finite() {
            return Err(MaserError::NonFinite(format!("loss value {}", lv.item())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let (rows, inner) = self.shape(*x);
                let cols = self.shape(*w).1;
                if let Some(db) = self.slot(grads, *b) {
                    for r in 0..rows {
                        for (d, v) in db.iter_mut().zip(&gd[r * cols..(r + 1) * cols]) {
                            *d += v;
                        }
                    }
                }
                if let Some(dw) = self.slot(grads, *w) {
                    matmul_grad_weight(self.value(*x).data(), gd, dw, rows, inner, cols);
                }
                if let Some(dx) = self.slot(grads, *x) {
                    matmul_grad_input(gd, self.value(*w).data(), dx, rows, inner, cols);
                }
            }
            Op::MatMul { x, w } => {
                let (rows, inner) = self.shape(*x);
                let cols = self.shape(*w).1;
                if let Some(dw) = self.slot(grads, *w) {
                    matmul_grad_weight(self.value(*x).data(), gd, dw, rows, inner, cols);
                }
                if let Some(dx) = self.slot(grads, *x) {
                    matmul_grad_input(gd, self.value(*w).data(), dx, rows, inner, cols);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = self.slot(grads, v) {
                        d.iter_mut().zip(gd).for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = self.slot(grads, *a) {
                    d.iter_mut().zip(gd).for_each(|(d, g)| *d += g);
                }
                if let Some(d) = self.slot(grads, *b) {
                    d.iter_mut().zip(gd).for_each(|(d, g)| *d -= g);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(d) = self.slot(grads, *a) {
                    for ((d, g), y) in d.iter_mut().zip(gd).zip(bv) {
                        *d += g * y;
                    }
                }
                if let Some(d) = self.slot(grads, *b) {
                    for ((d, g), x) in d.iter_mut().zip(gd).zip(av) {
                        *d += g * x;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(d) = self.slot(grads, *a) {
                    d.iter_mut().zip(gd).for_each(|(d, g)| *d += c * g);
                }
            }
            Op::Relu(a) => self.unary_grad(grads, *a, gd, |x, _| if x > 0.0 { 1.0 } else { 0.0 }, &node.value),
            Op::Elu(a) => self.unary_grad(grads, *a, gd, |x, _| if x > 0.0 { 1.0 } else { x.exp() }, &node.value),
            Op::Abs(a) => self.unary_grad(
                grads,
                *a,
                gd,
                |x, _| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                },
                &node.value,
            ),
            Op::Sigmoid(a) => self.unary_grad(grads, *a, gd, |_, y| y * (1.0 - y), &node.value),
            Op::Tanh(a) => self.unary_grad(grads, *a, gd, |_, y| 1.0 - y * y, &node.value),
            Op::Gru { x, h, wi, wh, bi, bh, cache } => {
                self.gru_backward(grads, gd, [*x, *h, *wi, *wh, *bi, *bh], cache);
            }
            Op::Gather { x, idx } => {
                let cols = self.shape(*x).1;
                if let Some(d) = self.slot(grads, *x) {
                    for (r, &i) in idx.iter().enumerate() {
                        d[r * cols + i] += gd[r];
                    }
                }
            }
            Op::MaskedMax { x, argmax } => {
                let cols = self.shape(*x).1;
                if let Some(d) = self.slot(grads, *x) {
                    for (r, &i) in argmax.iter().enumerate() {
                        d[r * cols + i] += gd[r];
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut off = 0;
                for &p in parts {
                    let (rows, c) = self.shape(p);
                    if let Some(d) = self.slot(grads, p) {
                        for r in 0..rows {
                            for j in 0..c {
                                d[r * c + j] += gd[r * total + off + j];
                            }
                        }
                    }
                    off += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if let Some(d) = self.slot(grads, p) {
                        d.iter_mut().zip(&gd[off..off + n]).for_each(|(d, g)| *d += g);
                    }
                    off += n;
                }
            }
            Op::RowBmm { q, w, n, e } => {
                let (n, e) = (*n, *e);
                let rows = self.shape(*q).0;
                let (qv, wv) = (self.value(*q).data(), self.value(*w).data());
                if let Some(dq) = self.slot(grads, *q) {
                    for r in 0..rows {
                        matmul_grad_input(&gd[r * e..(r + 1) * e], &wv[r * n * e..(r + 1) * n * e], &mut dq[r * n..(r + 1) * n], 1, n, e);
                    }
                }
                if let Some(dw) = self.slot(grads, *w) {
                    for r in 0..rows {
                        matmul_grad_weight(&qv[r * n..(r + 1) * n], &gd[r * e..(r + 1) * e], &mut dw[r * n * e..(r + 1) * n * e], 1, n, e);
                    }
                }
            }
            Op::RowDot(a, b) => {
                let cols = self.shape(*a).1;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(d) = self.slot(grads, *a) {
                    for (k, dv) in d.iter_mut().enumerate() {
                        *dv += gd[k / cols] * bv[k];
                    }
                }
                if let Some(d) = self.slot(grads, *b) {
                    for (k, dv) in d.iter_mut().enumerate() {
                        *dv += gd[k / cols] * av[k];
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(d) = self.slot(grads, *a) {
                    d.iter_mut().for_each(|d| *d += gd[0]);
                }
            }
            Op::LinComb(terms) => {
                for &(v, c) in terms {
                    if let Some(d) = self.slot(grads, v) {
                        d.iter_mut().zip(gd).for_each(|(d, g)| *d += c * g);
                    }
                }
            }
            Op::WeightedSqErr { x, target, weight } => {
                let xv = self.value(*x).data();
                if let Some(d) = self.slot(grads, *x) {
                    for k in 0..d.len() {
                        if weight[k] != 0.0 {
                            d[k] += gd[0] * 2.0 * weight[k] * (xv[k] - target[k]);
                        }
                    }
                }
            }
            Op::KlUniform { x, weight } => {
                let (rows, cols) = self.shape(*x);
                let xv = self.value(*x);
                if let Some(d) = self.slot(grads, *x) {
                    for r in 0..rows {
                        if weight[r] == 0.0 {
                            continue;
                        }
                        let logp = log_softmax(xv.row_slice(r));
                        let plogp: f64 = logp.iter().map(|l| l.exp() * l).sum();
                        for c in 0..cols {
                            let p = logp[c].exp();
                            d[r * cols + c] += gd[0] * weight[r] * p * (logp[c] - plogp);
                        }
                    }
                }
            }
            Op::DistErr { a, b, target, weight } => {
                let (rows, cols) = self.shape(*a);
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut coef = vec![0.0; rows];
                for r in 0..rows {
                    if weight[r] == 0.0 {
                        continue;
                    }
                    let n = euclid(av.row_slice(r), bv.row_slice(r));
                    if n > 0.0 {
                        coef[r] = gd[0] * 2.0 * weight[r] * (n - target[r]) / n;
                    }
                }
                let sign_a = [(*a, 1.0), (*b, -1.0)];
                for (v, sgn) in sign_a {
                    if let Some(d) = self.slot(grads, v) {
                        for r in 0..rows {
                            if coef[r] == 0.0 {
                                continue;
                            }
                            for c in 0..cols {
                                let diff = av.get(r, c) - bv.get(r, c);
                                d[r * cols + c] += sgn * coef[r] * diff;
                            }
                        }
                    }
                }
            }
        }
    }

    fn unary_grad(
        &self,
        grads: &mut [Option<Tensor>],
        a: Var,
        gd: &[f64],
        deriv: impl Fn(f64, f64) -> f64,
        out: &Tensor,
    ) {
        let xv = self.value(a).data();
        if let Some(d) = self.slot(grads, a) {
            for k in 0..d.len() {
                d[k] += gd[k] * deriv(xv[k], out.data()[k]);
            }
        }
    }

    fn gru_backward(&self, grads: &mut [Option<Tensor>], gd: &[f64], vars: [Var; 6], cache: &[f64]) {
        let [x, h, wi, wh, bi, bh] = vars;
        let (rows, inp) = self.shape(x);
        let hid = self.shape(h).1;
        let g = 3 * hid;
        let hv = self.value(h).data();
        let mut dgi = vec![0.0; rows * g];
        let mut dgh = vec![0.0; rows * g];
        let mut dh_direct = vec![0.0; rows * hid];
        for r in 0..rows {
            let c = &cache[r * 4 * hid..(r + 1) * 4 * hid];
            for j in 0..hid {
                let (rg, zg, n, hn) = (c[j], c[hid + j], c[2 * hid + j], c[3 * hid + j]);
                let dout = gd[r * hid + j];
                let dz = dout * (hv[r * hid + j] - n);
                let dn = dout * (1.0 - zg);
                dh_direct[r * hid + j] = dout * zg;
                let dn_pre = dn * (1.0 - n * n);
                let dr_pre = dn_pre * hn * rg * (1.0 - rg);
                let dz_pre = dz * zg * (1.0 - zg);
                dgi[r * g + j] = dr_pre;
                dgi[r * g + hid + j] = dz_pre;
                dgi[r * g + 2 * hid + j] = dn_pre;
                dgh[r * g + j] = dr_pre;
                dgh[r * g + hid + j] = dz_pre;
                dgh[r * g + 2 * hid + j] = dn_pre * rg;
            }
        }
        if let Some(d) = self.slot(grads, bi) {
            for r in 0..rows {
                d.iter_mut().zip(&dgi[r * g..(r + 1) * g]).for_each(|(d, v)| *d += v);
            }
        }
        if let Some(d) = self.slot(grads, bh) {
            for r in 0..rows {
                d.iter_mut().zip(&dgh[r * g..(r + 1) * g]).for_each(|(d, v)| *d += v);
            }
        }
        if let Some(d) = self.slot(grads, wi) {
            matmul_grad_weight(self.value(x).data(), &dgi, d, rows, inp, g);
        }
        if let Some(d) = self.slot(grads, wh) {
            matmul_grad_weight(hv, &dgh, d, rows, hid, g);
        }
        if let Some(d) = self.slot(grads, x) {
            matmul_grad_input(&dgi, self.value(wi).data(), d, rows, inp, g);
        }
        if let Some(d) = self.slot(grads, h) {
            d.iter_mut().zip(&dh_direct).for_each(|(d, v)| *d += v);
            matmul_grad_input(&dgh, self.value(wh).data(), d, rows, hid, g);
        }
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Tensor>], v: Var) -> Option<&'a mut [f64]> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        let slot = &mut grads[v.0];
        let t = slot.get_or_insert_with(|| Tensor::zeros(node.value.rows(), node.value.cols()));
        Some(t.data_mut())
    }
}

/// Euclidean distance between two equal-length slices.
pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

/// `KL(softmax(x) || uniform) = ln|x| + sum_u p_u ln p_u`.
pub fn kl_to_uniform(x: &[f64]) -> f64 {
    let logp = log_softmax(x);
    (x.len() as f64).ln() + logp.iter().map(|l| l.exp() * l).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let p = t.leaf(Tensor::scalar(3.0));
        let sq = t.mul(p, p).unwrap();
        let g = t.backward(sq).unwrap();
        assert_eq!(g.get(p).unwrap().item(), 6.0);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut t = Tape::new();
        let p = t.leaf(Tensor::scalar(3.0));
        let c = t.constant(Tensor::scalar(5.0));
        let loss = t.lin_comb(&[(c, 1.0), (p, 0.0)]).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(p).map_or(0.0, |g| g.item()), 0.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let p = t.leaf(Tensor::row(&[1.0, 2.0]));
        assert!(matches!(t.backward(p), Err(MaserError::Config(_))));
    }

    #[test]
    fn non_finite_loss_is_rejected() {
        let mut t = Tape::new();
        let p = t.leaf(Tensor::scalar(f64::NAN));
        assert!(matches!(t.backward(p), Err(MaserError::NonFinite(_))));
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row(&[1.0, 2.0]));
        let w = t.leaf(Tensor::zeros(3, 2));
        let b = t.leaf(Tensor::zeros(1, 2));
        assert!(t.affine(x, w, b).is_err());
    }

    #[test]
    fn identity_affine() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row(&[1.0, 2.0]));
        let w = t.leaf(Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let b = t.leaf(Tensor::zeros(1, 2));
        let y = t.affine(x, w, b).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_gru_keeps_zero_state() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row(&[0.3, -2.0, 5.0]));
        let h = t.constant(Tensor::zeros(1, 4));
        let wi = t.leaf(Tensor::zeros(3, 12));
        let wh = t.leaf(Tensor::zeros(4, 12));
        let bi = t.leaf(Tensor::zeros(1, 12));
        let bh = t.leaf(Tensor::zeros(1, 12));
        let out = t.gru(x, h, wi, wh, bi, bh).unwrap();
        assert_eq!(t.value(out).data(), &[0.0; 4]);
    }

    #[test]
    fn masked_max_ties_to_lowest_index() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::row(&[0.0, 2.0, 2.0, 9.0]));
        let m = t.masked_max(x, &[true, true, true, false]).unwrap();
        assert_eq!(t.value(m).item(), 2.0);
        let g = t.backward(m).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn kl_of_two_action_example() {
        // softmax([1, 0]) = (e/(e+1), 1/(e+1)); KL to uniform = ln 2 - H.
        let p1 = std::f64::consts::E / (std::f64::consts::E + 1.0);
        let p2 = 1.0 - p1;
        let entropy = -(p1 * p1.ln() + p2 * p2.ln());
        let expected = std::f64::consts::LN_2 - entropy;
        assert!((kl_to_uniform(&[1.0, 0.0]) - expected).abs() < 1e-15);
        assert!((expected - 0.110_944_071_671_727_4).abs() < 1e-12);
    }
}
