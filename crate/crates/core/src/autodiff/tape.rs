use std::cell::RefCell;
use std::rc::Rc;

use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type Backward = Box<dyn Fn(&Tensor) -> Vec<Tensor>>;

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    MatMul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    /// Per column, the row that won.
    ReduceRows(Var, Vec<usize>),
    /// Flat index that won.
    ReduceAll(Var, usize),
    Clamp(Var, f64, f64),
    Threshold(Var, f64),
    NormRows(Var),
    NormalizeRows(Var),
    QuatRotate(Var, Var),
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Custom(&'static str, Vec<Var>, Backward),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
}

/// Records operations on dense tensors for one reverse sweep. Rebuilt for
/// every forward pass; single owner.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Adjoints from one [`Tape::backward`] call.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Adjoint of `v`; zeros when `v` does not influence the root.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value.item()
    }

    /// Input or constant; gradients are reported for leaves like any node.
    pub fn leaf(&self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn constant(&self, v: f64) -> Var {
        self.leaf(Tensor::scalar(v))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("add", &va, &vb)?;
        Ok(self.push(va.zip_map(&vb, |x, y| x + y), Op::Add(a, b)))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("sub", &va, &vb)?;
        Ok(self.push(va.zip_map(&vb, |x, y| x - y), Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("mul", &va, &vb)?;
        Ok(self.push(va.zip_map(&vb, |x, y| x * y), Op::Mul(a, b)))
    }

    pub fn scale(&self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_scalar(&self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x + s);
        self.push(v, Op::Offset(a))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(shape_err("matmul", format!("{:?} · {:?}", va.shape(), vb.shape())));
        }
        Ok(self.push(matmul(&va, &vb), Op::MatMul(a, b)))
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_row(&self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.rows() != 1 || vr.cols() != va.cols() {
            return Err(shape_err("add_row", format!("{:?} + {:?}", va.shape(), vr.shape())));
        }
        let out = Tensor::from_fn(va.rows(), va.cols(), |r, c| va.get(r, c) + vr.get(0, c));
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    /// Multiplies every row of `a` elementwise by a `1×c` row.
    pub fn mul_row(&self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.rows() != 1 || vr.cols() != va.cols() {
            return Err(shape_err("mul_row", format!("{:?} * {:?}", va.shape(), vr.shape())));
        }
        let out = Tensor::from_fn(va.rows(), va.cols(), |r, c| va.get(r, c) * vr.get(0, c));
        Ok(self.push(out, Op::MulRow(a, row)))
    }

    /// `x·w + b` for `x: n×i`, `w: i×o`, `b: 1×o`.
    pub fn linear(&self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    pub fn relu(&self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(v, Op::Relu(a))
    }

    pub fn tanh(&self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn exp(&self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn log(&self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log(a))
    }

    pub fn abs(&self, a: Var) -> Var {
        let v = self.value(a).map(f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn square(&self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn sum(&self, a: Var) -> Var {
        let v = self.value(a).data().iter().sum::<f64>();
        self.push(Tensor::scalar(v), Op::Sum(a))
    }

    /// Mean of all entries; 0 for an empty tensor.
    pub fn mean(&self, a: Var) -> Var {
        let t = self.value(a);
        let v = if t.is_empty() { 0.0 } else { t.data().iter().sum::<f64>() / t.len() as f64 };
        self.push(Tensor::scalar(v), Op::Mean(a))
    }

    /// Column sums as a `1×c` row.
    pub fn sum_rows(&self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = Tensor::zeros(1, t.cols());
        for r in 0..t.rows() {
            for c in 0..t.cols() {
                out.data_mut()[c] += t.get(r, c);
            }
        }
        self.push(out, Op::SumRows(a))
    }

    fn reduce_rows(&self, op: &'static str, a: Var, better: fn(f64, f64) -> bool) -> Result<Var> {
        let t = self.value(a);
        if t.rows() == 0 {
            return Err(shape_err(op, "reduction over zero rows".into()));
        }
        let mut arg = vec![0usize; t.cols()];
        let mut out = Tensor::zeros(1, t.cols());
        for c in 0..t.cols() {
            let mut best = t.get(0, c);
            for r in 1..t.rows() {
                let x = t.get(r, c);
                if better(x, best) {
                    best = x;
                    arg[c] = r;
                }
            }
            out.data_mut()[c] = best;
        }
        Ok(self.push(out, Op::ReduceRows(a, arg)))
    }

    /// Column-wise maximum over rows (`1×c`); ties go to the first row.
    pub fn max_rows(&self, a: Var) -> Result<Var> {
        self.reduce_rows("max_rows", a, |x, b| x > b)
    }

    /// Column-wise minimum over rows (`1×c`); ties go to the first row.
    pub fn min_rows(&self, a: Var) -> Result<Var> {
        self.reduce_rows("min_rows", a, |x, b| x < b)
    }

    fn reduce_all(&self, op: &'static str, a: Var, better: fn(f64, f64) -> bool) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(shape_err(op, "reduction over an empty tensor".into()));
        }
        let mut arg = 0;
        for (i, &x) in t.data().iter().enumerate().skip(1) {
            if better(x, t.data()[arg]) {
                arg = i;
            }
        }
        Ok(self.push(Tensor::scalar(t.data()[arg]), Op::ReduceAll(a, arg)))
    }

    /// Maximum entry; the gradient goes to the first maximal element.
    pub fn max(&self, a: Var) -> Result<Var> {
        self.reduce_all("max", a, |x, b| x > b)
    }

    /// Minimum entry; the gradient goes to the first minimal element.
    pub fn min(&self, a: Var) -> Result<Var> {
        self.reduce_all("min", a, |x, b| x < b)
    }

    /// Elementwise clamp into `[lo, hi]`; gradient passes where the input
    /// lies inside the closed interval.
    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.max(lo).min(hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    /// Hinge `max(x − t, 0)`.
    pub fn hinge(&self, a: Var, t: f64) -> Var {
        let shifted = self.add_scalar(a, -t);
        self.relu(shifted)
    }

    /// `x` where `x > t`, else 0.
    pub fn threshold(&self, a: Var, t: f64) -> Var {
        let v = self.value(a).map(|x| if x > t { x } else { 0.0 });
        self.push(v, Op::Threshold(a, t))
    }

    /// Euclidean norm of every row (`n×1`).
    pub fn norm_rows(&self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::from_fn(t.rows(), 1, |r, _| t.row_slice(r).iter().map(|x| x * x).sum::<f64>().sqrt());
        self.push(out, Op::NormRows(a))
    }

    /// Every row scaled to unit length.
    pub fn normalize_rows(&self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = (*t).clone();
        for r in 0..t.rows() {
            let n = t.row_slice(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            for c in 0..t.cols() {
                out.set(r, c, t.get(r, c) / n);
            }
        }
        self.push(out, Op::NormalizeRows(a))
    }

    /// Rotates every row of `points` (`n×3`) by the quaternion `q` (`1×4`,
    /// `w, x, y, z`, normalized internally).
    pub fn quat_rotate(&self, q: Var, points: Var) -> Result<Var> {
        let (vq, vp) = (self.value(q), self.value(points));
        if vq.shape() != (1, 4) || vp.cols() != 3 {
            return Err(shape_err("quat_rotate", format!("q {:?}, points {:?}", vq.shape(), vp.shape())));
        }
        let r = quat_matrix(vq.data());
        let out = Tensor::from_fn(vp.rows(), 3, |i, a| (0..3).map(|b| r[a][b] * vp.get(i, b)).sum());
        Ok(self.push(out, Op::QuatRotate(q, points)))
    }

    /// Rows `idx` of `a`, repeats allowed.
    pub fn gather_rows(&self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(shape_err("gather_rows", format!("row {bad} of {}", t.rows())));
        }
        let mut data = Vec::with_capacity(idx.len() * t.cols());
        for &i in idx {
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor::new(idx.len(), t.cols(), data)?;
        Ok(self.push(out, Op::GatherRows(a, idx.to_vec())))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if start > end || end > t.cols() {
            return Err(shape_err("slice_cols", format!("{start}..{end} of {} columns", t.cols())));
        }
        let out = Tensor::from_fn(t.rows(), end - start, |r, c| t.get(r, start + c));
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<Rc<Tensor>> = parts.iter().map(|&p| self.value(p)).collect();
        let rows = vals.first().map(|t| t.rows()).unwrap_or(0);
        if vals.iter().any(|t| t.rows() != rows) {
            return Err(shape_err("concat_cols", "row counts differ".into()));
        }
        let cols: usize = vals.iter().map(|t| t.cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for t in &vals {
                data.extend_from_slice(t.row_slice(r));
            }
        }
        Ok(self.push(Tensor::new(rows, cols, data)?, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<Rc<Tensor>> = parts.iter().map(|&p| self.value(p)).collect();
        let cols = vals.first().map(|t| t.cols()).unwrap_or(0);
        if vals.iter().any(|t| t.cols() != cols) {
            return Err(shape_err("concat_rows", "column counts differ".into()));
        }
        let rows: usize = vals.iter().map(|t| t.rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for t in &vals {
            data.extend_from_slice(t.data());
        }
        Ok(self.push(Tensor::new(rows, cols, data)?, Op::ConcatRows(parts.to_vec())))
    }

    /// Records an operation whose forward value was computed elsewhere.
    /// `backward` maps the output adjoint to one adjoint per input, each with
    /// that input's shape.
    pub fn custom(
        &self,
        name: &'static str,
        inputs: &[Var],
        value: Tensor,
        backward: impl Fn(&Tensor) -> Vec<Tensor> + 'static,
    ) -> Var {
        self.push(value, Op::Custom(name, inputs.to_vec(), Box::new(backward)))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let shapes: Vec<(usize, usize)> = nodes.iter().map(|n| n.value.shape()).collect();
        if shapes[root.0] != (1, 1) {
            return Err(Error::arg(format!("backward needs a scalar root, got shape {:?}", shapes[root.0])));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(e) => e.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            let val = |v: Var| nodes[v.0].value.clone();
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    acc(&mut grads, *a, g.zip_map(&vb, |x, y| x * y));
                    acc(&mut grads, *b, g.zip_map(&va, |x, y| x * y));
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.map(|x| x * s)),
                Op::Offset(a) => acc(&mut grads, *a, g.clone()),
                Op::MatMul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    acc(&mut grads, *a, matmul_nt(&g, &vb));
                    acc(&mut grads, *b, matmul_tn(&va, &g));
                }
                Op::AddRow(a, r) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *r, column_sums(&g));
                }
                Op::MulRow(a, r) => {
                    let (va, vr) = (val(*a), val(*r));
                    let ga = Tensor::from_fn(g.rows(), g.cols(), |i, c| g.get(i, c) * vr.get(0, c));
                    let prod = Tensor::from_fn(g.rows(), g.cols(), |i, c| g.get(i, c) * va.get(i, c));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *r, column_sums(&prod));
                }
                Op::Relu(a) => {
                    let va = val(*a);
                    acc(&mut grads, *a, g.zip_map(&va, |gx, x| if x > 0.0 { gx } else { 0.0 }));
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    acc(&mut grads, *a, g.zip_map(y, |gx, y| gx * (1.0 - y * y)));
                }
                Op::Exp(a) => acc(&mut grads, *a, g.zip_map(&node.value, |gx, y| gx * y)),
                Op::Log(a) => {
                    let va = val(*a);
                    acc(&mut grads, *a, g.zip_map(&va, |gx, x| gx / x));
                }
                Op::Abs(a) => {
                    let va = val(*a);
                    acc(&mut grads, *a, g.zip_map(&va, |gx, x| if x > 0.0 { gx } else if x < 0.0 { -gx } else { 0.0 }));
                }
                Op::Square(a) => {
                    let va = val(*a);
                    acc(&mut grads, *a, g.zip_map(&va, |gx, x| 2.0 * x * gx));
                }
                Op::Sum(a) => {
                    let (r, c) = shapes[a.0];
                    acc(&mut grads, *a, Tensor::filled(r, c, g.item()));
                }
                Op::Mean(a) => {
                    let (r, c) = shapes[a.0];
                    let n = (r * c).max(1) as f64;
                    acc(&mut grads, *a, Tensor::filled(r, c, g.item() / n));
                }
                Op::SumRows(a) => {
                    let (r, c) = shapes[a.0];
                    acc(&mut grads, *a, Tensor::from_fn(r, c, |_, j| g.get(0, j)));
                }
                Op::ReduceRows(a, arg) => {
                    let (r, c) = shapes[a.0];
                    let mut out = Tensor::zeros(r, c);
                    for (j, &row) in arg.iter().enumerate() {
                        out.set(row, j, g.get(0, j));
                    }
                    acc(&mut grads, *a, out);
                }
                Op::ReduceAll(a, arg) => {
                    let (r, c) = shapes[a.0];
                    let mut out = Tensor::zeros(r, c);
                    out.data_mut()[*arg] = g.item();
                    acc(&mut grads, *a, out);
                }
                Op::Clamp(a, lo, hi) => {
                    let va = val(*a);
                    acc(&mut grads, *a, g.zip_map(&va, |gx, x| if x >= *lo && x <= *hi { gx } else { 0.0 }));
                }
                Op::Threshold(a, t) => {
                    let va = val(*a);
                    acc(&mut grads, *a, g.zip_map(&va, |gx, x| if x > *t { gx } else { 0.0 }));
                }
                Op::NormRows(a) => {
                    let va = val(*a);
                    let y = &node.value;
                    let out = Tensor::from_fn(va.rows(), va.cols(), |r, c| {
                        let n = y.get(r, 0);
                        if n > 0.0 {
                            g.get(r, 0) * va.get(r, c) / n
                        } else {
                            0.0
                        }
                    });
                    acc(&mut grads, *a, out);
                }
                Op::NormalizeRows(a) => {
                    let va = val(*a);
                    let y = &node.value;
                    let mut out = Tensor::zeros(va.rows(), va.cols());
                    for r in 0..va.rows() {
                        let n = va.row_slice(r).iter().map(|x| x * x).sum::<f64>().sqrt();
                        let dot: f64 = (0..va.cols()).map(|c| g.get(r, c) * y.get(r, c)).sum();
                        for c in 0..va.cols() {
                            out.set(r, c, (g.get(r, c) - y.get(r, c) * dot) / n);
                        }
                    }
                    acc(&mut grads, *a, out);
                }
                Op::QuatRotate(q, p) => {
                    let (vq, vp) = (val(*q), val(*p));
                    let (gq, gp) = quat_rotate_backward(vq.data(), &vp, &g);
                    acc(&mut grads, *q, gq);
                    acc(&mut grads, *p, gp);
                }
                Op::GatherRows(a, idx) => {
                    let (r, c) = shapes[a.0];
                    let mut out = Tensor::zeros(r, c);
                    for (k, &i) in idx.iter().enumerate() {
                        for j in 0..c {
                            let cur = out.get(i, j);
                            out.set(i, j, cur + g.get(k, j));
                        }
                    }
                    acc(&mut grads, *a, out);
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = shapes[a.0];
                    let mut out = Tensor::zeros(r, c);
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            out.set(i, start + j, g.get(i, j));
                        }
                    }
                    acc(&mut grads, *a, out);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (r, c) = shapes[p.0];
                        acc(&mut grads, p, Tensor::from_fn(r, c, |i, j| g.get(i, off + j)));
                        off += c;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (r, c) = shapes[p.0];
                        acc(&mut grads, p, Tensor::from_fn(r, c, |i, j| g.get(off + i, j)));
                        off += r;
                    }
                }
                Op::Custom(name, inputs, back) => {
                    let outs = back(&g);
                    if outs.len() != inputs.len() {
                        return Err(shape_err(name, format!("{} adjoints for {} inputs", outs.len(), inputs.len())));
                    }
                    for (&v, o) in inputs.iter().zip(outs) {
                        if o.shape() != shapes[v.0] {
                            return Err(shape_err(name, format!("adjoint {:?} for input {:?}", o.shape(), shapes[v.0])));
                        }
                        acc(&mut grads, v, o);
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }
}

fn column_sums(g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, g.cols());
    for r in 0..g.rows() {
        for c in 0..g.cols() {
            out.data_mut()[c] += g.get(r, c);
        }
    }
    out
}

/// Rotation matrix of a (not necessarily unit) quaternion `(w, x, y, z)`.
pub fn quat_matrix(q: &[f64]) -> [[f64; 3]; 3] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn quat_rotate_backward(q: &[f64], p: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let r = quat_matrix(q);
    let gp = Tensor::from_fn(p.rows(), 3, |i, b| (0..3).map(|a| r[a][b] * g.get(i, a)).sum());
    // G = Σ g_i p_iᵀ, then chain through R(q̂) and the normalization
    let mut gm = [[0.0; 3]; 3];
    for i in 0..p.rows() {
        for a in 0..3 {
            for b in 0..3 {
                gm[a][b] += g.get(i, a) * p.get(i, b);
            }
        }
    }
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let dr: [[[f64; 3]; 3]; 4] = [
        [[0.0, -2.0 * z, 2.0 * y], [2.0 * z, 0.0, -2.0 * x], [-2.0 * y, 2.0 * x, 0.0]],
        [[0.0, 2.0 * y, 2.0 * z], [2.0 * y, -4.0 * x, -2.0 * w], [2.0 * z, 2.0 * w, -4.0 * x]],
        [[-4.0 * y, 2.0 * x, 2.0 * w], [2.0 * x, 0.0, 2.0 * z], [-2.0 * w, 2.0 * z, -4.0 * y]],
        [[-4.0 * z, -2.0 * w, 2.0 * x], [2.0 * w, -4.0 * z, 2.0 * y], [2.0 * x, 2.0 * y, 0.0]],
    ];
    let mut dh = [0.0; 4];
    for k in 0..4 {
        for a in 0..3 {
            for b in 0..3 {
                dh[k] += dr[k][a][b] * gm[a][b];
            }
        }
    }
    let qh = [w, x, y, z];
    let dot: f64 = (0..4).map(|k| dh[k] * qh[k]).sum();
    let gq = Tensor::row(&[0, 1, 2, 3].map(|k| (dh[k] - qh[k] * dot) / n));
    (gq, gp)
}
