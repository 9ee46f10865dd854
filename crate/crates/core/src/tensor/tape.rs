use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use super::{gemm, ModelParams, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MatMul(Var, Var),
    Sum(Var),
    SumRows(Var),
    SumCols(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Square(Var),
    Sqrt(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Silu(Var),
    Sigmoid(Var),
    Softmax(Var),
    LogSumExp(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Rc<[usize]>),
    ScatterAddRows(Var, Rc<[usize]>),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Records operations as they run so [`Tape::backward`] can replay them in
/// reverse. A tape is single-threaded and meant to live for one forward and
/// backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<BTreeMap<String, Var>>,
}

fn check(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(TensorError::NonFiniteValue { op })
    }
}

fn broadcast_shape(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(TensorError::ShapeMismatch { op, lhs: a, rhs: b }),
    }
}

fn broadcast_zip(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor { rows: a.rows, cols: a.cols, data });
    }
    let (r, c) = broadcast_shape(op, a.shape(), b.shape())?;
    // fast paths: one full operand against a row or column vector
    if a.shape() == (r, c) && (b.rows == 1 || b.cols == 1) {
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in a.data.chunks_exact(c.max(1)).enumerate() {
            if b.rows == 1 && b.cols == c {
                data.extend(row.iter().zip(&b.data).map(|(&x, &y)| f(x, y)));
            } else {
                let y = b.data[if b.rows == 1 { 0 } else { i }];
                data.extend(row.iter().map(|&x| f(x, y)));
            }
        }
        return Ok(Tensor { rows: r, cols: c, data });
    }
    if b.shape() == (r, c) && (a.rows == 1 || a.cols == 1) {
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in b.data.chunks_exact(c.max(1)).enumerate() {
            if a.rows == 1 && a.cols == c {
                data.extend(a.data.iter().zip(row).map(|(&x, &y)| f(x, y)));
            } else {
                let x = a.data[if a.rows == 1 { 0 } else { i }];
                data.extend(row.iter().map(|&y| f(x, y)));
            }
        }
        return Ok(Tensor { rows: r, cols: c, data });
    }
    let at = |t: &Tensor, i: usize, j: usize| t.data[if t.rows == 1 { 0 } else { i } * t.cols + if t.cols == 1 { 0 } else { j }];
    Ok(Tensor::from_fn(r, c, |i, j| f(at(a, i, j), at(b, i, j))))
}

/// Sums `g` down to `shape` along broadcast dimensions.
fn reduce_to(g: Tensor, shape: (usize, usize)) -> Tensor {
    if g.shape() == shape {
        return g;
    }
    let mut out = Tensor::zeros(shape.0, shape.1);
    if shape.0 == 1 && shape.1 == g.cols {
        for row in g.data.chunks_exact(g.cols.max(1)) {
            for (o, x) in out.data.iter_mut().zip(row) {
                *o += x;
            }
        }
        return out;
    }
    if shape.1 == 1 && shape.0 == g.rows {
        for (o, row) in out.data.iter_mut().zip(g.data.chunks_exact(g.cols.max(1))) {
            *o = row.iter().sum();
        }
        return out;
    }
    for i in 0..g.rows {
        let oi = if shape.0 == 1 { 0 } else { i };
        for j in 0..g.cols {
            let oj = if shape.1 == 1 { 0 } else { j };
            out.data[oi * shape.1 + oj] += g.data[i * g.cols + j];
        }
    }
    out
}

/// `exp` by range reduction to `|r| <= ln2 / 2` and a degree-13 Taylor
/// polynomial; within a few ulp of `f64::exp` and branch-free, so hot
/// elementwise loops vectorise.
#[inline]
pub(crate) fn fast_exp(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    let x = x.clamp(-708.0, 709.0);
    // round to nearest without a libm call
    const SHIFT: f64 = 6_755_399_441_055_744.0;
    let k = (x * std::f64::consts::LOG2_E + SHIFT) - SHIFT;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    let mut p = 1.0 / 6_227_020_800.0;
    for c in [
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    p * f64::from_bits(((k as i64 + 1023) as u64) << 52)
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    // exp(-|x|) never overflows
    let e = fast_exp(-x.abs());
    let num = if x >= 0.0 { 1.0 } else { e };
    num / (1.0 + e)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, needs_grad });
        Var(nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.0].value.shape()
    }

    /// Differentiable input.
    pub fn leaf(&self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// The leaf for parameter `name`; repeated calls return the same `Var`.
    pub fn param(&self, params: &ModelParams, name: &str) -> Result<Var> {
        if let Some(v) = self.params.borrow().get(name) {
            return Ok(*v);
        }
        let t = params.get(name).ok_or_else(|| TensorError::UnknownParam(name.to_string()))?.clone();
        let v = self.leaf(t);
        self.params.borrow_mut().insert(name.to_string(), v);
        Ok(v)
    }

    /// Parameters read so far, by name.
    pub fn param_vars(&self) -> BTreeMap<String, Var> {
        self.params.borrow().clone()
    }

    fn unary(&self, op: &'static str, a: Var, f: impl Fn(f64) -> f64, rec: Op) -> Result<Var> {
        let out = self.value(a).map(f);
        check(op, &out)?;
        Ok(self.push(out, rec, self.needs(a)))
    }

    fn binary(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, rec: Op) -> Result<Var> {
        let out = broadcast_zip(op, &self.value(a), &self.value(b), f)?;
        check(op, &out)?;
        Ok(self.push(out, rec, self.needs(a) || self.needs(b)))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(&self.value(b))?;
        check("matmul", &out)?;
        Ok(self.push(out, Op::MatMul(a, b), self.needs(a) || self.needs(b)))
    }

    /// Sum of all entries, as `1 x 1`.
    pub fn sum(&self, a: Var) -> Result<Var> {
        let s = self.value(a).data.iter().sum();
        let out = Tensor::scalar(s);
        check("sum", &out)?;
        Ok(self.push(out, Op::Sum(a), self.needs(a)))
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Sum along the last axis: `r x c -> r x 1`.
    pub fn sum_rows(&self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let out = Tensor::from_fn(v.rows, 1, |i, _| v.row(i).iter().sum());
        check("sum_rows", &out)?;
        Ok(self.push(out, Op::SumRows(a), self.needs(a)))
    }

    /// Sum along the first axis: `r x c -> 1 x c`.
    pub fn sum_cols(&self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let mut out = Tensor::zeros(1, v.cols);
        for i in 0..v.rows {
            for (o, x) in out.data.iter_mut().zip(v.row(i)) {
                *o += x;
            }
        }
        check("sum_cols", &out)?;
        Ok(self.push(out, Op::SumCols(a), self.needs(a)))
    }

    pub fn scale(&self, a: Var, s: f64) -> Result<Var> {
        self.unary("scale", a, |x| x * s, Op::Scale(a, s))
    }

    pub fn neg(&self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&self, a: Var, s: f64) -> Result<Var> {
        self.unary("add_scalar", a, |x| x + s, Op::AddScalar(a))
    }

    pub fn square(&self, a: Var) -> Result<Var> {
        self.unary("square", a, |x| x * x, Op::Square(a))
    }

    pub fn sqrt(&self, a: Var) -> Result<Var> {
        self.unary("sqrt", a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn exp(&self, a: Var) -> Result<Var> {
        self.unary("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn log(&self, a: Var) -> Result<Var> {
        self.unary("log", a, f64::ln, Op::Log(a))
    }

    pub fn softplus(&self, a: Var) -> Result<Var> {
        self.unary("softplus", a, softplus, Op::Softplus(a))
    }

    pub fn silu(&self, a: Var) -> Result<Var> {
        self.unary("silu", a, |x| x * sigmoid(x), Op::Silu(a))
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    /// Row-wise softmax.
    pub fn softmax(&self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let mut out = (*v).clone();
        for i in 0..v.rows {
            let row = &mut out.data[i * v.cols..(i + 1) * v.cols];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                z += *x;
            }
            for x in row.iter_mut() {
                *x /= z;
            }
        }
        check("softmax", &out)?;
        Ok(self.push(out, Op::Softmax(a), self.needs(a)))
    }

    /// Row-wise `log sum exp`: `r x c -> r x 1`.
    pub fn logsumexp(&self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let out = Tensor::from_fn(v.rows, 1, |i, _| {
            let row = v.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
        });
        check("logsumexp", &out)?;
        Ok(self.push(out, Op::LogSumExp(a), self.needs(a)))
    }

    /// Concatenation along the last axis.
    pub fn concat(&self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<Rc<Tensor>> = parts.iter().map(|&p| self.value(p)).collect();
        let rows = vals.first().map_or(0, |v| v.rows);
        if let Some(bad) = vals.iter().find(|v| v.rows != rows) {
            return Err(TensorError::ShapeMismatch { op: "concat", lhs: vals[0].shape(), rhs: bad.shape() });
        }
        let cols: usize = vals.iter().map(|v| v.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for v in &vals {
                data.extend_from_slice(v.row(i));
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor { rows, cols, data }, Op::Concat(parts.to_vec()), needs))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&self, a: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(a);
        if start > end || end > v.cols {
            return Err(TensorError::ShapeMismatch { op: "slice_cols", lhs: v.shape(), rhs: (start, end) });
        }
        let out = Tensor::from_fn(v.rows, end - start, |i, j| v.get(i, start + j));
        Ok(self.push(out, Op::SliceCols(a, start), self.needs(a)))
    }

    /// `out[k] = a[idx[k]]`.
    pub fn gather_rows(&self, a: Var, idx: &Rc<[usize]>) -> Result<Var> {
        let v = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= v.rows) {
            return Err(TensorError::ShapeMismatch { op: "gather_rows", lhs: v.shape(), rhs: (bad, 0) });
        }
        let mut data = Vec::with_capacity(idx.len() * v.cols);
        for &i in idx.iter() {
            data.extend_from_slice(v.row(i));
        }
        let out = Tensor { rows: idx.len(), cols: v.cols, data };
        Ok(self.push(out, Op::GatherRows(a, Rc::clone(idx)), self.needs(a)))
    }

    /// `out[idx[k]] += a[k]` into `rows` output rows.
    pub fn scatter_add_rows(&self, a: Var, idx: &Rc<[usize]>, rows: usize) -> Result<Var> {
        let v = self.value(a);
        if idx.len() != v.rows || idx.iter().any(|&i| i >= rows) {
            return Err(TensorError::ShapeMismatch { op: "scatter_add_rows", lhs: v.shape(), rhs: (idx.len(), rows) });
        }
        let mut out = Tensor::zeros(rows, v.cols);
        for (k, &i) in idx.iter().enumerate() {
            for (o, x) in out.data[i * v.cols..(i + 1) * v.cols].iter_mut().zip(v.row(k)) {
                *o += x;
            }
        }
        check("scatter_add_rows", &out)?;
        Ok(self.push(out, Op::ScatterAddRows(a, Rc::clone(idx)), self.needs(a)))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.0].value.shape();
        if shape != (1, 1) {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        let acc = |grads: &mut Vec<Option<Tensor>>, v: Var, g: Tensor| {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(old) => old.add_assign(&g),
                slot => *slot = Some(g),
            }
        };

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let out = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Add(a, b) => {
                    if nodes[b.0].needs_grad {
                        acc(&mut grads, *b, reduce_to(g.clone(), nodes[b.0].value.shape()));
                    }
                    acc(&mut grads, *a, reduce_to(g, nodes[a.0].value.shape()));
                }
                Op::Sub(a, b) => {
                    if nodes[b.0].needs_grad {
                        acc(&mut grads, *b, reduce_to(g.map(|x| -x), nodes[b.0].value.shape()));
                    }
                    acc(&mut grads, *a, reduce_to(g, nodes[a.0].value.shape()));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    if nodes[a.0].needs_grad {
                        acc(&mut grads, *a, reduce_to(broadcast_zip("mul", &g, vb, |x, y| x * y)?, va.shape()));
                    }
                    if nodes[b.0].needs_grad {
                        acc(&mut grads, *b, reduce_to(broadcast_zip("mul", &g, va, |x, y| x * y)?, vb.shape()));
                    }
                }
                Op::Div(a, b) => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    if nodes[a.0].needs_grad {
                        acc(&mut grads, *a, reduce_to(broadcast_zip("div", &g, vb, |x, y| x / y)?, va.shape()));
                    }
                    if nodes[b.0].needs_grad {
                        // d(a/b)/db = -out / b
                        let t = broadcast_zip("div", &g, out, |x, y| -x * y)?;
                        let t = broadcast_zip("div", &t, vb, |x, y| x / y)?;
                        acc(&mut grads, *b, reduce_to(t, vb.shape()));
                    }
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (m, k, n) = (va.rows, va.cols, vb.cols);
                    if nodes[a.0].needs_grad {
                        // dA = G B^T
                        let d = gemm(m, n, k, &g.data, n as isize, 1, &vb.data, 1, n as isize);
                        acc(&mut grads, *a, Tensor { rows: m, cols: k, data: d });
                    }
                    if nodes[b.0].needs_grad {
                        // dB = A^T G
                        let d = gemm(k, m, n, &va.data, 1, k as isize, &g.data, n as isize, 1);
                        acc(&mut grads, *b, Tensor { rows: k, cols: n, data: d });
                    }
                }
                Op::Sum(a) => {
                    let (r, c) = nodes[a.0].value.shape();
                    acc(&mut grads, *a, Tensor::full(r, c, g.item()));
                }
                Op::SumRows(a) => {
                    let (r, c) = nodes[a.0].value.shape();
                    acc(&mut grads, *a, Tensor::from_fn(r, c, |i, _| g.data[i]));
                }
                Op::SumCols(a) => {
                    let (r, c) = nodes[a.0].value.shape();
                    acc(&mut grads, *a, Tensor::from_fn(r, c, |_, j| g.data[j]));
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.map(|x| x * s)),
                Op::AddScalar(a) => acc(&mut grads, *a, g),
                Op::Square(a) => {
                    let d = zip(&g, &nodes[a.0].value, |g, x| 2.0 * g * x);
                    acc(&mut grads, *a, d);
                }
                Op::Sqrt(a) => acc(&mut grads, *a, zip(&g, out, |g, y| 0.5 * g / y)),
                Op::Exp(a) => acc(&mut grads, *a, zip(&g, out, |g, y| g * y)),
                Op::Log(a) => acc(&mut grads, *a, zip(&g, &nodes[a.0].value, |g, x| g / x)),
                Op::Softplus(a) => acc(&mut grads, *a, zip(&g, &nodes[a.0].value, |g, x| g * sigmoid(x))),
                Op::Sigmoid(a) => acc(&mut grads, *a, zip(&g, out, |g, y| g * y * (1.0 - y))),
                Op::Silu(a) => {
                    let d = zip3(&g, &nodes[a.0].value, out, |g, x, y| {
                        // sigmoid recovered from the output where it is well conditioned
                        let s = if x.abs() > 1e-3 { y / x } else { sigmoid(x) };
                        g * (s + y * (1.0 - s))
                    });
                    acc(&mut grads, *a, d);
                }
                Op::Softmax(a) => {
                    let mut d = zip(&g, out, |g, y| g * y);
                    for r in 0..out.rows {
                        let dot: f64 = d.row(r).iter().sum();
                        for c in 0..out.cols {
                            let k = r * out.cols + c;
                            d.data[k] -= out.data[k] * dot;
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::LogSumExp(a) => {
                    let x = &nodes[a.0].value;
                    let d = Tensor::from_fn(x.rows, x.cols, |r, c| g.data[r] * (x.get(r, c) - out.data[r]).exp());
                    acc(&mut grads, *a, d);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let (r, c) = nodes[p.0].value.shape();
                        if nodes[p.0].needs_grad {
                            acc(&mut grads, *p, Tensor::from_fn(r, c, |i, j| g.get(i, off + j)));
                        }
                        off += c;
                    }
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = nodes[a.0].value.shape();
                    let mut d = Tensor::zeros(r, c);
                    for i in 0..r {
                        for j in 0..g.cols {
                            d.data[i * c + start + j] = g.get(i, j);
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::GatherRows(a, idx) => {
                    let (r, c) = nodes[a.0].value.shape();
                    let mut d = Tensor::zeros(r, c);
                    for (k, &row) in idx.iter().enumerate() {
                        for (o, x) in d.data[row * c..(row + 1) * c].iter_mut().zip(g.row(k)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::ScatterAddRows(a, idx) => {
                    let c = g.cols;
                    let mut data = Vec::with_capacity(idx.len() * c);
                    for &row in idx.iter() {
                        data.extend_from_slice(g.row(row));
                    }
                    acc(&mut grads, *a, Tensor { rows: idx.len(), cols: c, data });
                }
            }
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                check("backward", g).map_err(|_| TensorError::NonFiniteValue { op: op_name(&nodes[i].op) })?;
            }
        }
        Ok(Grads { grads, params: self.param_vars() })
    }
}

fn zip3(a: &Tensor, b: &Tensor, c: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
    let data = a.data.iter().zip(&b.data).zip(&c.data).map(|((&x, &y), &z)| f(x, y, z)).collect();
    Tensor { rows: a.rows, cols: a.cols, data }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor { rows: a.rows, cols: a.cols, data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect() }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Div(..) => "div",
        Op::MatMul(..) => "matmul",
        Op::Sum(_) => "sum",
        Op::SumRows(_) => "sum_rows",
        Op::SumCols(_) => "sum_cols",
        Op::Scale(..) => "scale",
        Op::AddScalar(_) => "add_scalar",
        Op::Square(_) => "square",
        Op::Sqrt(_) => "sqrt",
        Op::Exp(_) => "exp",
        Op::Log(_) => "log",
        Op::Softplus(_) => "softplus",
        Op::Silu(_) => "silu",
        Op::Sigmoid(_) => "sigmoid",
        Op::Softmax(_) => "softmax",
        Op::LogSumExp(_) => "logsumexp",
        Op::Concat(_) => "concat",
        Op::SliceCols(..) => "slice_cols",
        Op::GatherRows(..) => "gather_rows",
        Op::ScatterAddRows(..) => "scatter_add_rows",
    }
}

/// Gradients of one backward pass.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
    params: BTreeMap<String, Var>,
}

impl Grads {
    /// Gradient with respect to `v`, if it was reached.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for every parameter in `params`; exact zeros for parameters
    /// the loss does not depend on.
    pub fn for_params(&self, params: &ModelParams) -> super::Gradients {
        let mut out = BTreeMap::new();
        for (name, t) in params.iter() {
            let g = self.params.get(name).and_then(|v| self.get(*v)).cloned();
            out.insert(name.clone(), g.unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols())));
        }
        super::Gradients(out)
    }
}

#[cfg(test)]
mod tests {
    #[test]
    fn fast_exp_matches_std() {
        let mut x = -700.0;
        while x < 700.0 {
            let (a, b) = (super::fast_exp(x), x.exp());
            assert!(((a - b) / b).abs() < 4e-16, "{x}: {a} vs {b}");
            x += 0.0137;
        }
    }

    use super::*;

    #[test]
    fn square_derivative() {
        let t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let y = t.square(x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn softmax_uniform_and_shift_invariant_grad() {
        let t = Tape::new();
        let x = t.leaf(Tensor::zeros(1, 3));
        let y = t.softmax(x).unwrap();
        for v in t.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let first = t.slice_cols(y, 0, 1).unwrap();
        let l = t.sum(first).unwrap();
        let g = t.backward(l).unwrap();
        let s: f64 = g.get(x).unwrap().data().iter().sum();
        assert!(s.abs() < 1e-15);
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let t = Tape::new();
        let a = t.leaf(Tensor::zeros(4, 3));
        let b = t.leaf(Tensor::zeros(1, 3));
        let c = t.add(a, b).unwrap();
        let l = t.sum(c).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[4.0, 4.0, 4.0]);
    }

    #[test]
    fn shape_errors() {
        let t = Tape::new();
        let a = t.leaf(Tensor::zeros(2, 3));
        let b = t.leaf(Tensor::zeros(2, 2));
        assert!(matches!(t.add(a, b), Err(TensorError::ShapeMismatch { .. })));
        assert!(matches!(t.matmul(a, a), Err(TensorError::ShapeMismatch { .. })));
        assert!(matches!(t.backward(a), Err(TensorError::NonScalarLoss((2, 3)))));
    }

    #[test]
    fn non_finite_trips() {
        let t = Tape::new();
        let a = t.leaf(Tensor::scalar(-1.0));
        assert_eq!(t.log(a).unwrap_err(), TensorError::NonFiniteValue { op: "log" });
        assert_eq!(t.sqrt(a).unwrap_err(), TensorError::NonFiniteValue { op: "sqrt" });
    }

    #[test]
    fn constants_get_no_gradient() {
        let t = Tape::new();
        let a = t.constant(Tensor::scalar(2.0));
        let b = t.leaf(Tensor::scalar(5.0));
        let c = t.mul(a, b).unwrap();
        let g = t.backward(c).unwrap();
        assert!(g.get(a).is_none());
        assert_eq!(g.get(b).unwrap().item(), 2.0);
    }

    #[test]
    fn scatter_gather_are_adjoint() {
        let t = Tape::new();
        let idx: Rc<[usize]> = vec![2, 0, 2].into();
        let a = t.leaf(Tensor::from_fn(3, 2, |i, j| (i * 2 + j) as f64));
        let g = t.gather_rows(a, &idx).unwrap();
        assert_eq!(t.value(g).row(0), &[4.0, 5.0]);
        let s = t.scatter_add_rows(g, &idx, 3).unwrap();
        assert_eq!(t.value(s).row(2), &[8.0, 10.0]);
        assert_eq!(t.value(s).row(1), &[0.0, 0.0]);
        let l = t.sum(s).unwrap();
        let gr = t.backward(l).unwrap();
        assert_eq!(gr.get(a).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }
}
