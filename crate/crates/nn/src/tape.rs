//! Reverse-mode differentiation over dense arrays.
//!
//! A [`Tape`] borrows a [`ParameterStore`] and records every operation
//! applied to [`Var`] handles. Parameter values are read in place, never
//! copied. [`Tape::backward`] walks the record in reverse and returns
//! [`Gradients`], which the caller folds back into the store with
//! [`ParameterStore::accumulate`].
//!
//! Arrays on the tape are rank 1 (`[n]`) or rank 2 (`[rows, n]`). Scalars
//! are rank-1 arrays of length one.

use std::borrow::Cow;
use std::collections::HashMap;

use rand::Rng;

use crate::array::DenseArray;
use crate::error::{NnError, Result};
use crate::kernels;
use crate::params::ParameterStore;

pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    ParamRow { param: usize, row: usize },
    Affine { w: Var, b: Option<Var>, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    CrossEntropy { probs: Var, target: usize },
    SumSquares(Var),
    BroadcastRows(Var),
    WeightedRowSum { weights: Var, rows: Var },
    StackRows(Vec<Var>),
    Concat(Vec<Var>),
    Reshape(Var),
}

struct Node<'s> {
    shape: Vec<usize>,
    value: Cow<'s, [f64]>,
    op: Op,
}

pub struct Tape<'s> {
    store: &'s ParameterStore,
    nodes: Vec<Node<'s>>,
    params: HashMap<usize, Var>,
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParameterStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'s ParameterStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn to_array(&self, v: Var) -> DenseArray {
        let n = &self.nodes[v.0];
        DenseArray::new(n.shape.clone(), n.value.to_vec()).expect("tape node shape")
    }

    /// Scalar value of a length-one node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, shape: Vec<usize>, value: Cow<'s, [f64]>, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { shape, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, array: &DenseArray) -> Var {
        self.push(
            array.shape().to_vec(),
            Cow::Owned(array.values().to_vec()),
            Op::Leaf,
        )
    }

    pub fn input_vec(&mut self, values: Vec<f64>) -> Var {
        self.push(vec![values.len()], Cow::Owned(values), Op::Leaf)
    }

    /// Node reading a whole parameter. Repeated calls return the same node.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        let index = self.store.index_of(name)?;
        if let Some(&v) = self.params.get(&index) {
            return Ok(v);
        }
        let (_, p) = self.store.by_index(index);
        let v = self.push(
            p.value.shape().to_vec(),
            Cow::Borrowed(p.value.values()),
            Op::Param(index),
        );
        self.params.insert(index, v);
        Ok(v)
    }

    /// Embedding lookup: row `row` of a rank-2 parameter.
    pub fn param_row(&mut self, name: &str, row: usize) -> Result<Var> {
        let index = self.store.index_of(name)?;
        let (_, p) = self.store.by_index(index);
        let shape = p.value.shape();
        if shape.len() != 2 {
            return Err(NnError::Dimension(format!(
                "`{name}` is not a lookup table (shape {shape:?})"
            )));
        }
        if row >= shape[0] {
            return Err(NnError::Index {
                index: row,
                len: shape[0],
            });
        }
        let cols = shape[1];
        let values = &p.value.values()[row * cols..(row + 1) * cols];
        Ok(self.push(
            vec![cols],
            Cow::Borrowed(values),
            Op::ParamRow { param: index, row },
        ))
    }

    /// `x·Wᵀ + b` for `x` of shape `[n]` or `[rows, n]` and `W` of shape `[m, n]`.
    pub fn affine(&mut self, w: Var, b: Option<Var>, x: Var) -> Result<Var> {
        let ws = self.shape(w).to_vec();
        let xs = self.shape(x).to_vec();
        if ws.len() != 2 {
            return Err(NnError::Dimension(format!("weight must be rank 2, got {ws:?}")));
        }
        let (m, n) = (ws[0], ws[1]);
        let (rows, out_shape) = match xs.as_slice() {
            [k] if *k == n => (1, vec![m]),
            [r, k] if *k == n => (*r, vec![*r, m]),
            _ => {
                return Err(NnError::Dimension(format!(
                    "input shape {xs:?} does not match weight shape {ws:?}"
                )))
            }
        };
        if let Some(b) = b {
            if self.shape(b) != [m] {
                return Err(NnError::Dimension(format!(
                    "bias shape {:?} does not match output {m}",
                    self.shape(b)
                )));
            }
        }
        let wv = self.value(w);
        let xv = self.value(x);
        let mut out = vec![0.0; rows * m];
        for r in 0..rows {
            kernels::matvec(wv, m, n, &xv[r * n..(r + 1) * n], &mut out[r * m..(r + 1) * m]);
        }
        if let Some(b) = b {
            let bv = self.value(b);
            for r in 0..rows {
                for (o, bb) in out[r * m..(r + 1) * m].iter_mut().zip(bv) {
                    *o += bb;
                }
            }
        }
        Ok(self.push(out_shape, Cow::Owned(out), Op::Affine { w, b, x }))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(NnError::Dimension(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, Cow::Owned(out), op)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out: Vec<f64> = self.value(a).iter().map(|x| f(*x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, Cow::Owned(out), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), kernels::sigmoid)
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).len() != 1 {
            return Err(NnError::Dimension(format!(
                "softmax expects a vector, got {:?}",
                self.shape(a)
            )));
        }
        let out = kernels::softmax(self.value(a))?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, Cow::Owned(out), Op::Softmax(a)))
    }

    /// `−ln max(probs[target], 1e−12)`.
    pub fn cross_entropy(&mut self, probs: Var, target: usize) -> Result<Var> {
        let p = self.value(probs);
        if target >= p.len() {
            return Err(NnError::Index {
                index: target,
                len: p.len(),
            });
        }
        let loss = -p[target].max(PROB_FLOOR).ln();
        Ok(self.push(vec![1], Cow::Owned(vec![loss]), Op::CrossEntropy { probs, target }))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).iter().map(|x| x * x).sum();
        self.push(vec![1], Cow::Owned(vec![s]), Op::SumSquares(a))
    }

    /// Repeats a vector `[n]` into `[rows, n]`.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 1 || rows == 0 {
            return Err(NnError::Dimension(format!(
                "broadcast_rows expects a vector and rows ≥ 1, got {s:?} × {rows}"
            )));
        }
        let n = s[0];
        let v = self.value(a);
        let mut out = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            out.extend_from_slice(v);
        }
        Ok(self.push(vec![rows, n], Cow::Owned(out), Op::BroadcastRows(a)))
    }

    /// `Σ_i weights[i] · rows[i, :]`.
    pub fn weighted_row_sum(&mut self, weights: Var, rows: Var) -> Result<Var> {
        let ws = self.shape(weights);
        let rs = self.shape(rows);
        if ws.len() != 1 || rs.len() != 2 || ws[0] != rs[0] {
            return Err(NnError::Dimension(format!(
                "weighted_row_sum: weights {ws:?} vs rows {rs:?}"
            )));
        }
        let (r, n) = (rs[0], rs[1]);
        let wv = self.value(weights);
        let rv = self.value(rows);
        let mut out = vec![0.0; n];
        for i in 0..r {
            let w = wv[i];
            for (o, x) in out.iter_mut().zip(&rv[i * n..(i + 1) * n]) {
                *o += w * x;
            }
        }
        Ok(self.push(vec![n], Cow::Owned(out), Op::WeightedRowSum { weights, rows }))
    }

    /// Stacks equal-length vectors into a `[rows, n]` matrix.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| NnError::Dimension("stack_rows of nothing".into()))?;
        let s = self.shape(*first).to_vec();
        if s.len() != 1 || parts.iter().any(|p| self.shape(*p) != s.as_slice()) {
            return Err(NnError::Dimension("stack_rows expects equal-length vectors".into()));
        }
        let mut out = Vec::with_capacity(parts.len() * s[0]);
        for p in parts {
            out.extend_from_slice(self.value(*p));
        }
        Ok(self.push(
            vec![parts.len(), s[0]],
            Cow::Owned(out),
            Op::StackRows(parts.to_vec()),
        ))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() || parts.iter().any(|p| self.shape(*p).len() != 1) {
            return Err(NnError::Dimension("concat expects one or more vectors".into()));
        }
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(self.value(*p));
        }
        Ok(self.push(vec![out.len()], Cow::Owned(out), Op::Concat(parts.to_vec())))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(NnError::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape(a)
            )));
        }
        let v = self.value(a).to_vec();
        Ok(self.push(shape.to_vec(), Cow::Owned(v), Op::Reshape(a)))
    }

    /// Inverted dropout. Identity in eval mode or when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(NnError::Config(format!("dropout probability {p} not in [0, 1)")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(a);
        }
        let mask = kernels::dropout_mask(self.value(a).len(), p, rng);
        let shape = self.shape(a).to_vec();
        let m = self.push(shape, Cow::Owned(mask), Op::Leaf);
        self.mul(a, m)
    }

    /// Gradients of the scalar `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(NnError::Dimension(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(output)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);
        let mut param_grads: Vec<Option<Vec<f64>>> = vec![None; self.store.len()];
        let mut leaf_grads = HashMap::new();

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    leaf_grads.insert(i, g);
                }
                Op::Param(index) => {
                    add_into(&mut param_grads[*index], &g, 0, self.param_len(*index));
                }
                Op::ParamRow { param, row } => {
                    add_into(&mut param_grads[*param], &g, row * g.len(), self.param_len(*param));
                }
                Op::Affine { w, b, x } => {
                    let ws = self.shape(*w);
                    let (m, n) = (ws[0], ws[1]);
                    let rows = g.len() / m;
                    let wv = self.value(*w);
                    let xv = self.value(*x);
                    let mut gw = vec![0.0; m * n];
                    let mut gx = vec![0.0; rows * n];
                    for r in 0..rows {
                        let gr = &g[r * m..(r + 1) * m];
                        let xr = &xv[r * n..(r + 1) * n];
                        kernels::outer_add(gr, xr, &mut gw);
                        kernels::matvec_t_add(wv, m, n, gr, &mut gx[r * n..(r + 1) * n]);
                    }
                    acc(&mut grads, *w, gw);
                    acc(&mut grads, *x, gx);
                    if let Some(b) = b {
                        let mut gb = vec![0.0; m];
                        for r in 0..rows {
                            for (o, v) in gb.iter_mut().zip(&g[r * m..(r + 1) * m]) {
                                *o += v;
                            }
                        }
                        acc(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.iter().map(|v| -v).collect());
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let ga = g.iter().zip(bv).map(|(g, y)| g * y).collect();
                    let gb = g.iter().zip(av).map(|(g, x)| g * x).collect();
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g.iter().map(|v| c * v).collect()),
                Op::Tanh(a) => {
                    let ga = g.iter().zip(node.value.iter()).map(|(g, y)| g * (1.0 - y * y)).collect();
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = g.iter().zip(node.value.iter()).map(|(g, y)| g * y * (1.0 - y)).collect();
                    acc(&mut grads, *a, ga);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let dot: f64 = g.iter().zip(y.iter()).map(|(g, y)| g * y).sum();
                    let ga = g.iter().zip(y.iter()).map(|(g, y)| y * (g - dot)).collect();
                    acc(&mut grads, *a, ga);
                }
                Op::CrossEntropy { probs, target } => {
                    let p = self.value(*probs);
                    let mut gp = vec![0.0; p.len()];
                    if p[*target] > PROB_FLOOR {
                        gp[*target] = -g[0] / p[*target];
                    }
                    acc(&mut grads, *probs, gp);
                }
                Op::SumSquares(a) => {
                    let ga = self.value(*a).iter().map(|x| 2.0 * x * g[0]).collect();
                    acc(&mut grads, *a, ga);
                }
                Op::BroadcastRows(a) => {
                    let n = self.value(*a).len();
                    let mut ga = vec![0.0; n];
                    for chunk in g.chunks(n) {
                        for (o, v) in ga.iter_mut().zip(chunk) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::WeightedRowSum { weights, rows } => {
                    let wv = self.value(*weights);
                    let rv = self.value(*rows);
                    let n = g.len();
                    let gw = (0..wv.len())
                        .map(|i| kernels::dot(&rv[i * n..(i + 1) * n], &g))
                        .collect();
                    let mut gr = vec![0.0; rv.len()];
                    for (i, w) in wv.iter().enumerate() {
                        for (o, v) in gr[i * n..(i + 1) * n].iter_mut().zip(&g) {
                            *o = w * v;
                        }
                    }
                    acc(&mut grads, *weights, gw);
                    acc(&mut grads, *rows, gr);
                }
                Op::StackRows(parts) | Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        acc(&mut grads, *p, g[offset..offset + n].to_vec());
                        offset += n;
                    }
                }
                Op::Reshape(a) => acc(&mut grads, *a, g),
            }
        }
        Ok(Gradients {
            param_grads,
            leaf_grads,
        })
    }

    fn param_len(&self, index: usize) -> usize {
        self.store.by_index(index).1.value.len()
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(g) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn add_into(slot: &mut Option<Vec<f64>>, g: &[f64], offset: usize, len: usize) {
    let buf = slot.get_or_insert_with(|| vec![0.0; len]);
    for (e, x) in buf[offset..offset + g.len()].iter_mut().zip(g) {
        *e += x;
    }
}

/// Parameter gradients produced by one backward sweep.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    param_grads: Vec<Option<Vec<f64>>>,
    leaf_grads: HashMap<usize, Vec<f64>>,
}

impl Gradients {
    pub fn param_grads(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.param_grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_deref().map(|g| (i, g)))
    }

    /// Gradient for a parameter by store index; `None` if it was not on the tape.
    pub fn get(&self, index: usize) -> Option<&[f64]> {
        self.param_grads.get(index).and_then(|g| g.as_deref())
    }

    /// Gradient reaching an input node, if any flowed there.
    pub fn wrt(&self, input: Var) -> Option<&[f64]> {
        self.leaf_grads.get(&input.0).map(Vec::as_slice)
    }

    pub fn get_mut(&mut self, index: usize) -> Option<&mut Vec<f64>> {
        self.param_grads.get_mut(index).and_then(|g| g.as_mut())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::rng::RngState;

    fn store() -> ParameterStore {
        let mut r = RngState::new(17).rng();
        let mut s = ParameterStore::new();
        s.add_matrix("m", 3, 4, &mut r).unwrap();
        s.add_embedding("emb", 5, 4, &mut r).unwrap();
        s.add_matrix("v", 1, 4, &mut r).unwrap();
        s.add_matrix("w", 3, 1, &mut r).unwrap();
        s
    }

    #[test]
    fn structural_ops_pass_gradient_check() {
        let s = store();
        let report = grad_check(
            &s,
            |t: &mut Tape<'_>| {
                let m = t.param("m")?;
                let e0 = t.param_row("emb", 0)?;
                let e3 = t.param_row("emb", 3)?;
                let e3b = t.param_row("emb", 3)?;
                let rows = t.stack_rows(&[e0, e3, e3b])?;
                let both = t.add(rows, m)?;
                let v = t.param("v")?;
                let v = t.reshape(v, &[4])?;
                let vb = t.broadcast_rows(v, 3)?;
                let prod = t.mul(both, vb)?;
                let w = t.param("w")?;
                let w = t.reshape(w, &[3])?;
                let w = t.softmax(w)?;
                let pooled = t.weighted_row_sum(w, prod)?;
                let cat = t.concat(&[pooled, e0])?;
                let cat = t.scale(cat, 0.7);
                let cat = t.sub(cat, cat)?;
                let pooled2 = t.tanh(pooled);
                let total = t.concat(&[cat, pooled2])?;
                Ok(t.sum_squares(total))
            },
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.coordinates_checked, 12 + 20 + 4 + 3);
    }

    #[test]
    fn shape_errors() {
        let s = store();
        let mut t = Tape::new(&s);
        let a = t.input_vec(vec![1.0, 2.0]);
        let b = t.input_vec(vec![1.0, 2.0, 3.0]);
        assert!(t.add(a, b).is_err());
        let m = t.param("m").unwrap();
        assert!(t.affine(m, None, a).is_err());
        assert!(t.param_row("emb", 5).is_err());
        assert!(t.param("missing").is_err());
        assert!(t.backward(a).is_err());
        assert!(t.cross_entropy(a, 2).is_err());
    }

    #[test]
    fn repeated_param_reads_share_a_node() {
        let s = store();
        let mut t = Tape::new(&s);
        assert_eq!(t.param("m").unwrap(), t.param("m").unwrap());
    }

    #[test]
    fn input_gradients_are_reported() {
        let s = store();
        let mut t = Tape::new(&s);
        let x = t.input_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let m = t.param("m").unwrap();
        let y = t.affine(m, None, x).unwrap();
        let l = t.sum_squares(y);
        let g = t.backward(l).unwrap();
        let wx = t.value(y).to_vec();
        let mv = s.value("m").unwrap();
        for j in 0..4 {
            let expect: f64 = (0..3).map(|i| 2.0 * wx[i] * mv.values()[i * 4 + j]).sum();
            assert!((g.wrt(x).unwrap()[j] - expect).abs() < 1e-12);
        }
    }
}
