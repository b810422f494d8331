//! Define-by-run reverse-mode differentiation over dense 2-D arrays.
//!
//! Every operation on a [`Tape`] evaluates immediately and appends one
//! record holding its operand references, its output value and, for
//! elementwise primitives, the local derivative used by the reverse sweep.
//! Vectors are `1 × n` rows and scalars are `1 × 1`.

use std::collections::{BTreeMap, HashMap};

use ndarray::{s, Array2, Axis, Zip};

use super::params::ParamStore;
use crate::error::{Error, Result};

/// Handle to a record on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Const,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Affine { x: Var, w: Var, b: Var },
    /// Elementwise unary op whose local derivative is stored on the record.
    Unary(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    Concat(Vec<Var>),
    SliceCols { a: Var, start: usize },
    RowKron(Var, Var),
    BceWithLogits { logits: Var, target: Var },
}

enum Value {
    Owned(Array2<f64>),
    Param(usize),
}

struct Record {
    op: Op,
    value: Value,
    local: Option<Array2<f64>>,
    needs_grad: bool,
}

/// A recording of primitive operations, optionally reading trainable
/// parameters from a borrowed [`ParamStore`].
pub struct Tape<'s> {
    records: Vec<Record>,
    store: Option<&'s ParamStore>,
    param_vars: HashMap<usize, Var>,
    inputs: BTreeMap<String, Var>,
    outputs: BTreeMap<String, Var>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'s> Tape<'s> {
    pub fn new() -> Self {
        Self {
            records: Vec::new(),
            store: None,
            param_vars: HashMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn with_params(store: &'s ParamStore) -> Self {
        Self {
            store: Some(store),
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        match &self.records[v.0].value {
            Value::Owned(a) => a,
            Value::Param(i) => self.store.expect("param record without store").value_at(*i),
        }
    }

    /// The single entry of a `1 × 1` record.
    pub fn scalar(&self, v: Var) -> f64 {
        let a = self.value(v);
        debug_assert_eq!(a.dim(), (1, 1));
        a[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    fn push(&mut self, op: Op, value: Array2<f64>, local: Option<Array2<f64>>) -> Var {
        let needs_grad = match &op {
            Op::Input | Op::Param => true,
            Op::Const => false,
            op => operands(op).iter().any(|v| self.records[v.0].needs_grad),
        };
        self.records.push(Record {
            op,
            value: Value::Owned(value),
            local,
            needs_grad,
        });
        Var(self.records.len() - 1)
    }

    fn err(&self, op: &'static str, msg: String) -> Error {
        Error::Graph {
            record: self.records.len(),
            op,
            msg,
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(self.err(
                op,
                format!("operand shapes {:?} and {:?} differ", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    /// A differentiable named input.
    pub fn input(&mut self, name: &str, value: Array2<f64>) -> Var {
        let v = self.push(Op::Input, value, None);
        self.inputs.insert(name.to_string(), v);
        v
    }

    /// The most recent input recorded under `name`.
    pub fn input_var(&self, name: &str) -> Option<Var> {
        self.inputs.get(name).copied()
    }

    /// A non-differentiable value (data, noise draws).
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Const, value, None)
    }

    /// Same value as `v`, but no gradient flows back through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    /// The parameter `name` from the attached store.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        let store = self
            .store
            .ok_or_else(|| self.err("param", format!("no parameter store attached for {name:?}")))?;
        let idx = store
            .index_of(name)
            .ok_or_else(|| self.err("param", format!("unknown parameter {name:?}")))?;
        if let Some(&v) = self.param_vars.get(&idx) {
            return Ok(v);
        }
        self.records.push(Record {
            op: Op::Param,
            value: Value::Param(idx),
            local: None,
            needs_grad: true,
        });
        let v = Var(self.records.len() - 1);
        self.param_vars.insert(idx, v);
        Ok(v)
    }

    pub fn set_output(&mut self, name: &str, v: Var) {
        self.outputs.insert(name.to_string(), v);
    }

    /// Forward values of every named output.
    pub fn outputs(&self) -> BTreeMap<String, Array2<f64>> {
        self.outputs
            .iter()
            .map(|(k, &v)| (k.clone(), self.value(v).clone()))
            .collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a) + self.value(b);
        Ok(self.push(Op::Add(a, b), out, None))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a) - self.value(b);
        Ok(self.push(Op::Sub(a, b), out, None))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a) * self.value(b);
        Ok(self.push(Op::Mul(a, b), out, None))
    }

    /// Adds the `1 × n` row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let (ra, ca) = self.shape(a);
        if self.shape(r) != (1, ca) {
            return Err(self.err("add_row", format!("row shape {:?} does not broadcast over ({ra}, {ca})", self.shape(r))));
        }
        let out = self.value(a) + self.value(r);
        Ok(self.push(Op::AddRow(a, r), out, None))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        self.push(Op::Scale(a, c), out, None)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) + c;
        self.push(Op::AddScalar(a), out, None)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(self.err("matmul", format!("cannot multiply {sa:?} by {sb:?}")));
        }
        let out = self.value(a).dot(self.value(b));
        Ok(self.push(Op::MatMul(a, b), out, None))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.1 {
            return Err(self.err("matmul_bt", format!("cannot multiply {sa:?} by transpose of {sb:?}")));
        }
        let out = self.value(a).dot(&self.value(b).t());
        Ok(self.push(Op::MatMulBt(a, b), out, None))
    }

    /// Row-batched affine map `x·Wᵀ + b` with `W: m × n`, `b: 1 × m`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.1 != sw.1 || sb != (1, sw.0) {
            return Err(self.err(
                "affine",
                format!("input {sx:?}, weight {sw:?} and bias {sb:?} are incompatible"),
            ));
        }
        let mut out = self.value(x).dot(&self.value(w).t());
        out += self.value(b);
        Ok(self.push(Op::Affine { x, w, b }, out, None))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> (f64, f64)) -> Var {
        let src = self.value(a);
        let mut out = Array2::zeros(src.dim());
        let mut local = Array2::zeros(src.dim());
        Zip::from(&mut out).and(&mut local).and(src).for_each(|o, l, &x| {
            let (v, d) = f(x);
            *o = v;
            *l = d;
        });
        self.push(Op::Unary(a), out, Some(local))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { (x, 1.0) } else { (0.0, 0.0) })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| {
            let s = sigmoid(x);
            (s, s * (1.0 - s))
        })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| {
            let t = x.tanh();
            (t, 1.0 - t * t)
        })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| {
            let e = x.exp();
            (e, e)
        })
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, |x| (x.ln(), 1.0 / x))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| (x * x, 2.0 * x))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, move |x| {
            if x < lo {
                (lo, 0.0)
            } else if x > hi {
                (hi, 0.0)
            } else {
                (x, 1.0)
            }
        })
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        self.push(Op::Softmax(a), out, None)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let mut out = src.clone();
        for mut row in out.rows_mut() {
            let lse = log_sum_exp(row.iter().copied());
            row.mapv_inplace(|x| x - lse);
        }
        self.push(Op::LogSoftmax(a), out, None)
    }

    /// Sum of all entries, as a `1 × 1` record.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).sum();
        self.push(Op::Sum(a), Array2::from_elem((1, 1), total), None)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.sum() / v.len() as f64;
        self.push(Op::Mean(a), Array2::from_elem((1, 1), m), None)
    }

    /// Per-row sums, as a `B × 1` column.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(Op::SumRows(a), out, None)
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.shape(p).0).ok_or_else(|| self.err("concat", "nothing to concatenate".into()))?;
        if let Some(&p) = parts.iter().find(|&&p| self.shape(p).0 != rows) {
            return Err(self.err("concat", format!("row count {} differs from {rows}", self.shape(p).0)));
        }
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        // Row-major output; `ndarray::concatenate` along columns yields
        // column-major storage, which makes later products and sums slow.
        let mut out = Array2::zeros((rows, total));
        let mut start = 0;
        for &p in parts {
            let v = self.value(p);
            out.slice_mut(s![.., start..start + v.ncols()]).assign(v);
            start += v.ncols();
        }
        Ok(self.push(Op::Concat(parts.to_vec()), out, None))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (_, cols) = self.shape(a);
        if start + len > cols || len == 0 {
            return Err(self.err("slice_cols", format!("columns {start}..{} outside 0..{cols}", start + len)));
        }
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        Ok(self.push(Op::SliceCols { a, start }, out, None))
    }

    /// Row-wise Kronecker product: row `i` of the output is `a_i ⊗ b_i`
    /// with `a` as the outer factor.
    pub fn row_kron(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((ra, ca), (rb, cb)) = (self.shape(a), self.shape(b));
        if ra != rb {
            return Err(self.err("row_kron", format!("row counts {ra} and {rb} differ")));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Array2::zeros((ra, ca * cb));
        for i in 0..ra {
            for p in 0..ca {
                let x = av[[i, p]];
                for q in 0..cb {
                    out[[i, p * cb + q]] = x * bv[[i, q]];
                }
            }
        }
        Ok(self.push(Op::RowKron(a, b), out, None))
    }

    /// Elementwise Bernoulli negative log-likelihood of `target` under
    /// `sigmoid(logits)`, computed stably from the logits.
    pub fn bce_with_logits(&mut self, logits: Var, target: Var) -> Result<Var> {
        self.same_shape("bce_with_logits", logits, target)?;
        let mut out = Array2::zeros(self.shape(logits));
        Zip::from(&mut out)
            .and(self.value(logits))
            .and(self.value(target))
            .for_each(|o, &l, &t| *o = l.max(0.0) - l * t + (-l.abs()).exp().ln_1p());
        Ok(self.push(Op::BceWithLogits { logits, target }, out, None))
    }

    /// Reverse sweep from a scalar record.
    pub fn backward(&self, seed: Var) -> Result<Gradients> {
        if self.shape(seed) != (1, 1) {
            return Err(Error::contract(format!(
                "gradient seed must be scalar, record {} has shape {:?}",
                seed.0,
                self.shape(seed)
            )));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.records.len()];
        grads[seed.0] = Some(Array2::ones((1, 1)));
        for idx in (0..=seed.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let rec = &self.records[idx];
            if !rec.needs_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let param_grads = self
            .param_vars
            .iter()
            .map(|(&pidx, &v)| (pidx, grads[v.0].clone()))
            .collect();
        Ok(Gradients {
            grads,
            param_grads,
            shapes: self.records.iter().enumerate().map(|(i, _)| self.shape(Var(i))).collect(),
        })
    }

    fn propagate(&self, idx: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let rec = &self.records[idx];
        let want = |v: Var| self.records[v.0].needs_grad;
        match &rec.op {
            Op::Input | Op::Const | Op::Param => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, want(*a), || g.clone());
                accumulate(grads, *b, want(*b), || g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, want(*a), || g.clone());
                accumulate(grads, *b, want(*b), || -g);
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, want(*a), || g * self.value(*b));
                accumulate(grads, *b, want(*b), || g * self.value(*a));
            }
            Op::AddRow(a, r) => {
                accumulate(grads, *a, want(*a), || g.clone());
                accumulate(grads, *r, want(*r), || g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Scale(a, c) => accumulate(grads, *a, want(*a), || g * *c),
            Op::AddScalar(a) => accumulate(grads, *a, want(*a), || g.clone()),
            Op::MatMul(a, b) => {
                accumulate(grads, *a, want(*a), || g.dot(&self.value(*b).t()));
                accumulate(grads, *b, want(*b), || self.value(*a).t().dot(g));
            }
            Op::MatMulBt(a, b) => {
                accumulate(grads, *a, want(*a), || g.dot(self.value(*b)));
                accumulate(grads, *b, want(*b), || g.t().dot(self.value(*a)));
            }
            Op::Affine { x, w, b } => {
                accumulate(grads, *x, want(*x), || g.dot(self.value(*w)));
                accumulate(grads, *w, want(*w), || g.t().dot(self.value(*x)));
                accumulate(grads, *b, want(*b), || g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Unary(a) => {
                let local = rec.local.as_ref().expect("unary records store their derivative");
                accumulate(grads, *a, want(*a), || g * local);
            }
            Op::Softmax(a) => accumulate(grads, *a, want(*a), || {
                let sm = self.value(Var(idx));
                let mut dx = g * sm;
                let dots = dx.sum_axis(Axis(1));
                for (mut row, (srow, d)) in dx.rows_mut().into_iter().zip(sm.rows().into_iter().zip(dots.iter())) {
                    row.zip_mut_with(&srow, |r, &s| *r -= s * d);
                }
                dx
            }),
            Op::LogSoftmax(a) => accumulate(grads, *a, want(*a), || {
                let ls = self.value(Var(idx));
                let totals = g.sum_axis(Axis(1));
                let mut dx = g.clone();
                for ((mut row, lrow), t) in dx.rows_mut().into_iter().zip(ls.rows()).zip(totals.iter()) {
                    row.zip_mut_with(&lrow, |r, &l| *r -= l.exp() * t);
                }
                dx
            }),
            Op::Sum(a) => accumulate(grads, *a, want(*a), || Array2::from_elem(self.shape(*a), g[[0, 0]])),
            Op::Mean(a) => accumulate(grads, *a, want(*a), || {
                let shape = self.shape(*a);
                Array2::from_elem(shape, g[[0, 0]] / (shape.0 * shape.1) as f64)
            }),
            Op::SumRows(a) => accumulate(grads, *a, want(*a), || {
                let shape = self.shape(*a);
                Array2::from_shape_fn(shape, |(i, _)| g[[i, 0]])
            }),
            Op::Concat(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    accumulate(grads, p, want(p), || g.slice(s![.., start..start + w]).to_owned());
                    start += w;
                }
            }
            Op::SliceCols { a, start } => accumulate(grads, *a, want(*a), || {
                let mut dx = Array2::zeros(self.shape(*a));
                dx.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                dx
            }),
            Op::RowKron(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (rows, ca) = av.dim();
                let cb = bv.ncols();
                accumulate(grads, *a, want(*a), || {
                    Array2::from_shape_fn((rows, ca), |(i, p)| (0..cb).map(|q| g[[i, p * cb + q]] * bv[[i, q]]).sum())
                });
                accumulate(grads, *b, want(*b), || {
                    Array2::from_shape_fn((rows, cb), |(i, q)| (0..ca).map(|p| g[[i, p * cb + q]] * av[[i, p]]).sum())
                });
            }
            Op::BceWithLogits { logits, target } => {
                let (lv, tv) = (self.value(*logits), self.value(*target));
                accumulate(grads, *logits, want(*logits), || {
                    let mut d = Array2::zeros(g.dim());
                    Zip::from(&mut d).and(g).and(lv).and(tv).for_each(|d, &g, &l, &t| *d = g * (sigmoid(l) - t));
                    d
                });
                accumulate(grads, *target, want(*target), || -(g * lv));
            }
        }
    }
}

fn operands(op: &Op) -> Vec<Var> {
    match op {
        Op::Input | Op::Const | Op::Param => vec![],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) | Op::MatMul(a, b) | Op::MatMulBt(a, b) | Op::RowKron(a, b) => {
            vec![*a, *b]
        }
        Op::Scale(a, _) | Op::AddScalar(a) | Op::Unary(a) | Op::Softmax(a) | Op::LogSoftmax(a) | Op::Sum(a) | Op::Mean(a) | Op::SumRows(a) => {
            vec![*a]
        }
        Op::SliceCols { a, .. } => vec![*a],
        Op::Affine { x, w, b } => vec![*x, *w, *b],
        Op::Concat(parts) => parts.clone(),
        Op::BceWithLogits { logits, target } => vec![*logits, *target],
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, wanted: bool, g: impl FnOnce() -> Array2<f64>) {
    if !wanted {
        return;
    }
    let g = g();
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax_rows(a: &Array2<f64>) -> Array2<f64> {
    let mut out = a.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - m).exp());
        let z = row.sum();
        row.mapv_inplace(|x| x / z);
    }
    out
}

/// Result of a reverse sweep.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    param_grads: Vec<(usize, Option<Array2<f64>>)>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to a record; zeros when the seed does not
    /// depend on it.
    pub fn wrt(&self, v: Var) -> Array2<f64> {
        self.grads[v.0].clone().unwrap_or_else(|| Array2::zeros(self.shapes[v.0]))
    }

    /// Adds the parameter gradients into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (pidx, g) in &self.param_grads {
            if let Some(g) = g {
                *store.grad_at_mut(*pidx) += g;
            }
        }
    }
}
