use std::sync::Arc;

use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::groups::wrap_angle;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise primitives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Neg,
    Exp,
    Ln,
    Sqrt,
    Sin,
    Cos,
    Square,
    Sigmoid,
    Swish,
    Powf(f64),
}

impl Unary {
    /// Looks up a primitive by name. Names outside the supported set
    /// (`relu`, `abs`, ...) fail here, before anything is recorded.
    pub fn from_name(name: &str) -> Result<Unary> {
        Ok(match name {
            "neg" => Unary::Neg,
            "exp" => Unary::Exp,
            "ln" | "log" => Unary::Ln,
            "sqrt" => Unary::Sqrt,
            "sin" => Unary::Sin,
            "cos" => Unary::Cos,
            "square" => Unary::Square,
            "sigmoid" => Unary::Sigmoid,
            "swish" => Unary::Swish,
            other => return Err(Error::Unsupported(format!("primitive '{other}'"))),
        })
    }

    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Unary::Neg => -x,
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Sqrt => x.sqrt(),
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Square => x * x,
            Unary::Sigmoid => x.sigmoid(),
            Unary::Swish => x * x.sigmoid(),
            Unary::Powf(a) => x.powf(a),
        }
    }

    /// dy/dx given input `x` and output `y`.
    fn deriv<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Unary::Neg => -T::one(),
            Unary::Exp => y,
            Unary::Ln => x.recip(),
            Unary::Sqrt => (T::from_f64(2.0) * y).recip(),
            Unary::Sin => x.cos(),
            Unary::Cos => -x.sin(),
            Unary::Square => T::from_f64(2.0) * x,
            Unary::Sigmoid => y * (T::one() - y),
            Unary::Swish => {
                let s = x.sigmoid();
                s * (T::one() + x * (T::one() - s))
            }
            Unary::Powf(a) => T::from_f64(a) * x.powf(a - 1.0),
        }
    }
}

/// Center/member index pairs of a convolution, one entry per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairIndex {
    pub center: Vec<usize>,
    pub member: Vec<usize>,
    pub n_centers: usize,
}

impl PairIndex {
    pub fn len(&self) -> usize {
        self.center.len()
    }

    pub fn is_empty(&self) -> bool {
        self.center.is_empty()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    SubRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Identity(Var),
    MatMul(Var, Var),
    Unary(Var, Unary),
    Atan2(Var, Var),
    Sum(Var),
    SumRows(Var),
    SumCols(Var),
    Gather(Var, Arc<Vec<usize>>),
    SegmentSum(Var, Arc<Vec<usize>>),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Permute(Var, Arc<Vec<usize>>),
    PairOuter(Var, Var, Arc<PairIndex>),
    PairApply(Var, Var, Arc<PairIndex>),
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op,
    value: Tensor<T>,
    grad: bool,
}

/// Records tensor operations for reverse-mode differentiation. Nodes are
/// appended in evaluation order, so the tape is acyclic by construction.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Adjoints of every node that needed one, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// The adjoint, or zeros of `shape` when nothing reached `v`.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
    }
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Dimension(format!("{op}: shapes {}x{} and {}x{} do not match", a.0, a.1, b.0, b.1))
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Largest element count among recorded nodes with exactly `rows` rows.
    /// With `rows` set to the pair count this measures the widest per-pair
    /// tensor a computation materialized.
    pub fn max_len_with_rows(&self, rows: usize) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.value.rows() == rows)
            .map(|n| n.value.len())
            .max()
            .unwrap_or(0)
    }

    fn push(&mut self, op: Op, value: Tensor<T>, grad: bool) -> Var {
        self.nodes.push(Node { op, value, grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].grad)
    }

    /// Input that gradients flow to.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t, true)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t, false)
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(Op::Add(a, b), v, self.needs(&[a, b])))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(Op::Sub(a, b), v, self.needs(&[a, b])))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), v, self.needs(&[a, b])))
    }

    fn row_broadcast(&mut self, x: Var, r: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (n, c) = self.shape(x);
        if self.shape(r) != (1, c) {
            return Err(shape_err(name, (n, c), self.shape(r)));
        }
        let rv = self.value(r).data().to_vec();
        let mut out = self.value(x).clone();
        for i in 0..n {
            for (o, b) in out.row_slice_mut(i).iter_mut().zip(&rv) {
                *o = f(*o, *b);
            }
        }
        Ok(out)
    }

    /// `x + r` with the `1 x c` row `r` added to every row.
    pub fn add_row(&mut self, x: Var, r: Var) -> Result<Var> {
        let v = self.row_broadcast(x, r, "add_row", |a, b| a + b)?;
        Ok(self.push(Op::AddRow(x, r), v, self.needs(&[x, r])))
    }

    pub fn sub_row(&mut self, x: Var, r: Var) -> Result<Var> {
        let v = self.row_broadcast(x, r, "sub_row", |a, b| a - b)?;
        Ok(self.push(Op::SubRow(x, r), v, self.needs(&[x, r])))
    }

    pub fn mul_row(&mut self, x: Var, r: Var) -> Result<Var> {
        let v = self.row_broadcast(x, r, "mul_row", |a, b| a * b)?;
        Ok(self.push(Op::MulRow(x, r), v, self.needs(&[x, r])))
    }

    /// Scales row `i` of `x` by entry `i` of the `n x 1` column `c`.
    pub fn mul_col(&mut self, x: Var, c: Var) -> Result<Var> {
        let (n, m) = self.shape(x);
        if self.shape(c) != (n, 1) {
            return Err(shape_err("mul_col", (n, m), self.shape(c)));
        }
        let cv = self.value(c).data().to_vec();
        let mut out = self.value(x).clone();
        for (i, s) in cv.iter().enumerate() {
            for o in out.row_slice_mut(i) {
                *o *= *s;
            }
        }
        Ok(self.push(Op::MulCol(x, c), out, self.needs(&[x, c])))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let k = T::from_f64(s);
        let v = self.value(x).map(|a| a * k);
        let g = self.needs(&[x]);
        self.push(Op::Scale(x, s), v, g)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let k = T::from_f64(s);
        let v = self.value(x).map(|a| a + k);
        let g = self.needs(&[x]);
        self.push(Op::Identity(x), v, g)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a).1 != self.shape(b).0 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let v = self.value(a).matmul(self.value(b));
        Ok(self.push(Op::MatMul(a, b), v, self.needs(&[a, b])))
    }

    pub fn unary(&mut self, x: Var, u: Unary) -> Var {
        let v = self.value(x).map(|a| u.apply(a));
        let g = self.needs(&[x]);
        self.push(Op::Unary(x, u), v, g)
    }

    /// Applies a primitive looked up by name.
    pub fn unary_named(&mut self, x: Var, name: &str) -> Result<Var> {
        Ok(self.unary(x, Unary::from_name(name)?))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Ln)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sqrt)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Square)
    }

    pub fn swish(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Swish)
    }

    pub fn powf(&mut self, x: Var, a: f64) -> Var {
        self.unary(x, Unary::Powf(a))
    }

    /// Elementwise `atan2(y, x)`.
    pub fn atan2(&mut self, y: Var, x: Var) -> Result<Var> {
        self.same_shape("atan2", y, x)?;
        let v = self.value(y).zip_map(self.value(x), |a, b| a.atan2(b));
        Ok(self.push(Op::Atan2(y, x), v, self.needs(&[y, x])))
    }

    /// Maps angles to `(-pi, pi]` by subtracting a locally constant multiple
    /// of `2 pi`; the derivative is 1 away from the cut.
    pub fn wrap_angle(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| {
            let shift = a.re() - wrap_angle(a.re());
            a - T::from_f64(shift)
        });
        let g = self.needs(&[x]);
        self.push(Op::Identity(x), v, g)
    }

    /// Sum of all entries as a `1 x 1` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        let g = self.needs(&[x]);
        self.push(Op::Sum(x), v, g)
    }

    /// Column sums, `n x c -> 1 x c`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let v = self.value(x).sum_rows();
        let g = self.needs(&[x]);
        self.push(Op::SumRows(x), v, g)
    }

    /// Row sums, `n x c -> n x 1`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let v = self.value(x).sum_cols();
        let g = self.needs(&[x]);
        self.push(Op::SumCols(x), v, g)
    }

    /// Rows `idx[0], idx[1], ...` of `x`.
    pub fn gather_rows(&mut self, x: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let (n, c) = self.shape(x);
        if let Some(bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Dimension(format!("gather index {bad} out of {n} rows")));
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            data.extend_from_slice(src.row_slice(i));
        }
        let v = Tensor::new(idx.len(), c, data)?;
        let g = self.needs(&[x]);
        Ok(self.push(Op::Gather(x, idx), v, g))
    }

    /// Sums row `r` of `x` into output row `seg[r]`; `n_seg` output rows.
    pub fn segment_sum(&mut self, x: Var, seg: Arc<Vec<usize>>, n_seg: usize) -> Result<Var> {
        let (n, c) = self.shape(x);
        if seg.len() != n || seg.iter().any(|&s| s >= n_seg) {
            return Err(Error::Dimension("segment ids do not match rows or exceed segment count".into()));
        }
        let src = self.value(x);
        let mut out = Tensor::zeros(n_seg, c);
        for (r, &s) in seg.iter().enumerate() {
            for (o, a) in out.row_slice_mut(s).iter_mut().zip(src.row_slice(r)) {
                *o += *a;
            }
        }
        let g = self.needs(&[x]);
        Ok(self.push(Op::SegmentSum(x, seg), out, g))
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(Error::Dimension("concat of nothing".into()));
        };
        let n = self.shape(first).0;
        if let Some(&bad) = xs.iter().find(|&&x| self.shape(x).0 != n) {
            return Err(shape_err("concat_cols", self.shape(first), self.shape(bad)));
        }
        let total: usize = xs.iter().map(|&x| self.shape(x).1).sum();
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for &x in xs {
                data.extend_from_slice(self.value(x).row_slice(i));
            }
        }
        let v = Tensor::new(n, total, data)?;
        let g = self.needs(xs);
        Ok(self.push(Op::Concat(xs.to_vec()), v, g))
    }

    /// Columns `start .. start + width`.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (n, c) = self.shape(x);
        if start + width > c {
            return Err(Error::Dimension(format!("slice {start}+{width} beyond {c} columns")));
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(n * width);
        for i in 0..n {
            data.extend_from_slice(&src.row_slice(i)[start..start + width]);
        }
        let v = Tensor::new(n, width, data)?;
        let g = self.needs(&[x]);
        Ok(self.push(Op::Slice(x, start), v, g))
    }

    /// Reinterprets the row-major data with a new shape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let (n, c) = self.shape(x);
        if n * c != rows * cols {
            return Err(shape_err("reshape", (n, c), (rows, cols)));
        }
        let v = self.value(x).clone().reshaped(rows, cols);
        let g = self.needs(&[x]);
        Ok(self.push(Op::Identity(x), v, g))
    }

    /// `out.data[k] = x.data[perm[k]]`, shaped `rows x cols`.
    pub fn permute(&mut self, x: Var, perm: Arc<Vec<usize>>, rows: usize, cols: usize) -> Result<Var> {
        let len = self.value(x).len();
        if perm.len() != rows * cols || perm.iter().any(|&p| p >= len) {
            return Err(Error::Dimension("permutation does not fit tensor".into()));
        }
        let src = self.value(x).data();
        let data = perm.iter().map(|&p| src[p]).collect();
        let v = Tensor::new(rows, cols, data)?;
        let g = self.needs(&[x]);
        Ok(self.push(Op::Permute(x, perm), v, g))
    }

    /// `B[i, g*c + b] = sum over pairs (i, j) of s[pair, g] * f[j, b]`.
    /// Never materializes a per-pair `c`-wide product.
    pub fn pair_outer(&mut self, s: Var, f: Var, pairs: Arc<PairIndex>) -> Result<Var> {
        let (np, h) = self.shape(s);
        let (nf, c) = self.shape(f);
        check_pairs(&pairs, np, nf)?;
        let sv = self.value(s);
        let fv = self.value(f);
        let mut out = Tensor::zeros(pairs.n_centers, h * c);
        for p in 0..np {
            let frow = fv.row_slice(pairs.member[p]);
            let orow = out.row_slice_mut(pairs.center[p]);
            for (gi, &sg) in sv.row_slice(p).iter().enumerate() {
                for (o, &fb) in orow[gi * c..(gi + 1) * c].iter_mut().zip(frow) {
                    *o += sg * fb;
                }
            }
        }
        Ok(self.push(Op::PairOuter(s, f, pairs), out, self.needs(&[s, f])))
    }

    /// `out[i, a] = sum over pairs (i, j) of sum_b K[pair, a*ci + b] f[j, b]`
    /// with `ci` the width of `f`.
    pub fn pair_apply(&mut self, k: Var, f: Var, pairs: Arc<PairIndex>) -> Result<Var> {
        let (np, kw) = self.shape(k);
        let (nf, ci) = self.shape(f);
        check_pairs(&pairs, np, nf)?;
        if ci == 0 || kw % ci != 0 {
            return Err(Error::Dimension(format!(
                "kernel width {kw} is not a multiple of {ci} input channels"
            )));
        }
        let co = kw / ci;
        let kv = self.value(k);
        let fv = self.value(f);
        let mut out = Tensor::zeros(pairs.n_centers, co);
        for p in 0..np {
            let frow = fv.row_slice(pairs.member[p]);
            let krow = kv.row_slice(p);
            let orow = out.row_slice_mut(pairs.center[p]);
            for (a, o) in orow.iter_mut().enumerate() {
                let mut acc = T::zero();
                for (kk, fb) in krow[a * ci..(a + 1) * ci].iter().zip(frow) {
                    acc += *kk * *fb;
                }
                *o += acc;
            }
        }
        Ok(self.push(Op::PairApply(k, f, pairs), out, self.needs(&[k, f])))
    }

    /// Reverse pass from a `1 x 1` output.
    pub fn backward(&self, out: Var) -> Result<Grads<T>> {
        if self.shape(out) != (1, 1) {
            return Err(Error::Dimension(format!(
                "backward needs a scalar output, got {:?}",
                self.shape(out)
            )));
        }
        self.backward_seeded(out, Tensor::scalar(T::one()))
    }

    /// Reverse pass with an explicit output adjoint (a vector-Jacobian
    /// product for non-scalar outputs).
    pub fn backward_seeded(&self, out: Var, seed: Tensor<T>) -> Result<Grads<T>> {
        if seed.shape() != self.shape(out) {
            return Err(shape_err("backward seed", seed.shape(), self.shape(out)));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(seed);
        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.grad {
                grads[idx] = None;
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Ok(Grads { grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, t: Tensor<T>) {
        if !self.nodes[v.0].grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot => *slot = Some(t),
        }
    }

    fn propagate(&self, op: &Op, y: &Tensor<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let val = |v: &Var| &self.nodes[v.0].value;
        let wants = |v: &Var| self.nodes[v.0].grad;
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                if wants(b) {
                    self.acc(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if wants(a) {
                    self.acc(grads, *a, g.zip_map(val(b), |x, y| x * y));
                }
                if wants(b) {
                    self.acc(grads, *b, g.zip_map(val(a), |x, y| x * y));
                }
            }
            Op::AddRow(x, r) | Op::SubRow(x, r) => {
                self.acc(grads, *x, g.clone());
                if wants(r) {
                    let s = g.sum_rows();
                    let s = if matches!(op, Op::SubRow(..)) { s.map(|v| -v) } else { s };
                    self.acc(grads, *r, s);
                }
            }
            Op::MulRow(x, r) => {
                let rv = val(r).data();
                if wants(x) {
                    let mut dx = g.clone();
                    for i in 0..dx.rows() {
                        for (d, s) in dx.row_slice_mut(i).iter_mut().zip(rv) {
                            *d *= *s;
                        }
                    }
                    self.acc(grads, *x, dx);
                }
                if wants(r) {
                    self.acc(grads, *r, g.zip_map(val(x), |a, b| a * b).sum_rows());
                }
            }
            Op::MulCol(x, c) => {
                let cv = val(c).data();
                if wants(x) {
                    let mut dx = g.clone();
                    for (i, s) in cv.iter().enumerate() {
                        for d in dx.row_slice_mut(i) {
                            *d *= *s;
                        }
                    }
                    self.acc(grads, *x, dx);
                }
                if wants(c) {
                    self.acc(grads, *c, g.zip_map(val(x), |a, b| a * b).sum_cols());
                }
            }
            Op::Scale(x, s) => {
                let k = T::from_f64(*s);
                self.acc(grads, *x, g.map(|v| v * k));
            }
            Op::Identity(x) => {
                let (r, c) = self.nodes[x.0].value.shape();
                self.acc(grads, *x, g.clone().reshaped(r, c));
            }
            Op::MatMul(a, b) => {
                if wants(a) {
                    self.acc(grads, *a, g.matmul_t(val(b)));
                }
                if wants(b) {
                    self.acc(grads, *b, val(a).t_matmul(g));
                }
            }
            Op::Unary(x, u) => {
                let xv = val(x);
                let mut dx = g.clone();
                for ((d, xi), yi) in dx.data_mut().iter_mut().zip(xv.data()).zip(y.data()) {
                    *d *= u.deriv(*xi, *yi);
                }
                self.acc(grads, *x, dx);
            }
            Op::Atan2(yv, xv) => {
                let (ys, xs) = (val(yv), val(xv));
                if wants(yv) {
                    let mut d = g.clone();
                    for ((o, a), b) in d.data_mut().iter_mut().zip(ys.data()).zip(xs.data()) {
                        *o *= *b / (*a * *a + *b * *b);
                    }
                    self.acc(grads, *yv, d);
                }
                if wants(xv) {
                    let mut d = g.clone();
                    for ((o, a), b) in d.data_mut().iter_mut().zip(ys.data()).zip(xs.data()) {
                        *o *= -*a / (*a * *a + *b * *b);
                    }
                    self.acc(grads, *xv, d);
                }
            }
            Op::Sum(x) => {
                let (r, c) = val(x).shape();
                self.acc(grads, *x, Tensor::filled(r, c, g.get(0, 0)));
            }
            Op::SumRows(x) => {
                let (r, c) = val(x).shape();
                let mut d = Tensor::zeros(r, c);
                for i in 0..r {
                    d.row_slice_mut(i).copy_from_slice(g.data());
                }
                self.acc(grads, *x, d);
            }
            Op::SumCols(x) => {
                let (r, c) = val(x).shape();
                let mut d = Tensor::zeros(r, c);
                for i in 0..r {
                    let gi = g.get(i, 0);
                    d.row_slice_mut(i).iter_mut().for_each(|v| *v = gi);
                }
                self.acc(grads, *x, d);
            }
            Op::Gather(x, idx) => {
                let (r, c) = val(x).shape();
                let mut d = Tensor::zeros(r, c);
                for (k, &i) in idx.iter().enumerate() {
                    for (o, a) in d.row_slice_mut(i).iter_mut().zip(g.row_slice(k)) {
                        *o += *a;
                    }
                }
                self.acc(grads, *x, d);
            }
            Op::SegmentSum(x, seg) => {
                let c = g.cols();
                let mut data = Vec::with_capacity(seg.len() * c);
                for &s in seg.iter() {
                    data.extend_from_slice(g.row_slice(s));
                }
                self.acc(grads, *x, Tensor::new(seg.len(), c, data).expect("segment shape"));
            }
            Op::Concat(xs) => {
                let mut start = 0;
                for x in xs {
                    let (r, c) = val(x).shape();
                    if wants(x) {
                        let mut d = Tensor::zeros(r, c);
                        for i in 0..r {
                            d.row_slice_mut(i).copy_from_slice(&g.row_slice(i)[start..start + c]);
                        }
                        self.acc(grads, *x, d);
                    }
                    start += c;
                }
            }
            Op::Slice(x, start) => {
                let (r, c) = val(x).shape();
                let w = g.cols();
                let mut d = Tensor::zeros(r, c);
                for i in 0..r {
                    d.row_slice_mut(i)[*start..start + w].copy_from_slice(g.row_slice(i));
                }
                self.acc(grads, *x, d);
            }
            Op::Permute(x, perm) => {
                let (r, c) = val(x).shape();
                let mut d = Tensor::zeros(r, c);
                let dd = d.data_mut();
                for (k, &p) in perm.iter().enumerate() {
                    dd[p] += g.data()[k];
                }
                self.acc(grads, *x, d);
            }
            Op::PairOuter(s, f, pairs) => {
                let (sv, fv) = (val(s), val(f));
                let c = fv.cols();
                if wants(s) {
                    let mut ds = Tensor::zeros(sv.rows(), sv.cols());
                    for p in 0..pairs.len() {
                        let grow = g.row_slice(pairs.center[p]);
                        let frow = fv.row_slice(pairs.member[p]);
                        for (gi, d) in ds.row_slice_mut(p).iter_mut().enumerate() {
                            let mut acc = T::zero();
                            for (a, b) in grow[gi * c..(gi + 1) * c].iter().zip(frow) {
                                acc += *a * *b;
                            }
                            *d = acc;
                        }
                    }
                    self.acc(grads, *s, ds);
                }
                if wants(f) {
                    let mut df = Tensor::zeros(fv.rows(), c);
                    for p in 0..pairs.len() {
                        let grow = g.row_slice(pairs.center[p]);
                        let srow = sv.row_slice(p);
                        let drow = df.row_slice_mut(pairs.member[p]);
                        for (gi, &sg) in srow.iter().enumerate() {
                            for (d, a) in drow.iter_mut().zip(&grow[gi * c..(gi + 1) * c]) {
                                *d += sg * *a;
                            }
                        }
                    }
                    self.acc(grads, *f, df);
                }
            }
            Op::PairApply(k, f, pairs) => {
                let (kv, fv) = (val(k), val(f));
                let ci = fv.cols();
                if wants(k) {
                    let mut dk = Tensor::zeros(kv.rows(), kv.cols());
                    for p in 0..pairs.len() {
                        let grow = g.row_slice(pairs.center[p]);
                        let frow = fv.row_slice(pairs.member[p]);
                        let drow = dk.row_slice_mut(p);
                        for (a, &ga) in grow.iter().enumerate() {
                            for (d, fb) in drow[a * ci..(a + 1) * ci].iter_mut().zip(frow) {
                                *d = ga * *fb;
                            }
                        }
                    }
                    self.acc(grads, *k, dk);
                }
                if wants(f) {
                    let mut df = Tensor::zeros(fv.rows(), ci);
                    for p in 0..pairs.len() {
                        let grow = g.row_slice(pairs.center[p]);
                        let krow = kv.row_slice(p);
                        let drow = df.row_slice_mut(pairs.member[p]);
                        for (a, &ga) in grow.iter().enumerate() {
                            for (d, kk) in drow.iter_mut().zip(&krow[a * ci..(a + 1) * ci]) {
                                *d += ga * *kk;
                            }
                        }
                    }
                    self.acc(grads, *f, df);
                }
            }
        }
    }
}

fn check_pairs(pairs: &PairIndex, n_pairs: usize, n_members: usize) -> Result<()> {
    if pairs.center.len() != n_pairs || pairs.member.len() != n_pairs {
        return Err(Error::Dimension(format!(
            "{} pair indices for {n_pairs} pair rows",
            pairs.center.len()
        )));
    }
    if pairs.center.iter().any(|&i| i >= pairs.n_centers) || pairs.member.iter().any(|&j| j >= n_members) {
        return Err(Error::Dimension("pair index out of range".into()));
    }
    Ok(())
}
