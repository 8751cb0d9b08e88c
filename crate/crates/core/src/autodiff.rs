//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation in creation order. Each op stores its
//! output value and the handles of its inputs; [`Tape::backward`] walks the
//! record in reverse and applies the local gradient rules.
//!
//! ```
//! use hotrnn::autodiff::Tape;
//! use hotrnn::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let w = tape.var(Tensor::vector(vec![1.0, 2.0, 3.0]));
//! let sq = tape.mul(w, w).unwrap();
//! let loss = tape.sum(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(w).data(), &[2.0, 4.0, 6.0]);
//! ```
//!
//! Tapes are single-threaded. Separate tapes may live on separate threads.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::tensor::{Result, Tensor, TensorError};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

/// A fused operation with a hand-written backward rule.
///
/// The forward value is computed by the caller and passed to
/// [`Tape::custom`]; the op only has to map the output gradient back onto its
/// inputs. Anything the backward pass needs beyond the input and output
/// values can be saved inside the implementing struct.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Gradients for each input, in input order, each shaped like its input.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Scalar,
    /// rhs is lhs with the last extent replaced by 1.
    Trailing(usize),
}

impl Broadcast {
    fn rhs_index(self, i: usize) -> usize {
        match self {
            Broadcast::Same => i,
            Broadcast::Scalar => 0,
            Broadcast::Trailing(last) => i / last,
        }
    }
}

enum Op {
    Leaf,
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Scale(Var, f64),
    MatVec(Var, Var),
    Linear(Var, Var),
    AddBias(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Sum(Var),
    Concat(Vec<Var>),
    Slice(Var, usize, usize),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

impl fmt::Debug for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Custom(inputs, op) => write!(f, "Custom({}, {:?})", op.name(), inputs),
            Op::Leaf => write!(f, "Leaf"),
            Op::Add(..) => write!(f, "Add"),
            Op::Sub(..) => write!(f, "Sub"),
            Op::Mul(..) => write!(f, "Mul"),
            Op::Scale(..) => write!(f, "Scale"),
            Op::MatVec(..) => write!(f, "MatVec"),
            Op::Linear(..) => write!(f, "Linear"),
            Op::AddBias(..) => write!(f, "AddBias"),
            Op::Sigmoid(..) => write!(f, "Sigmoid"),
            Op::Tanh(..) => write!(f, "Tanh"),
            Op::Sum(..) => write!(f, "Sum"),
            Op::Concat(..) => write!(f, "Concat"),
            Op::Slice(..) => write!(f, "Slice"),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the root w.r.t. `var`; `None` when `var` does not feed the root.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index).and_then(Option::as_ref)
    }

    /// Like [`get`](Self::get) but yields zeros for variables the root does not depend on.
    pub fn wrt(&self, var: Var) -> Tensor {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.index]),
        }
    }

    /// Moves the gradient out, leaving zeros behind.
    pub fn take(&mut self, var: Var) -> Tensor {
        match self.grads[var.index].take() {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[var.index]),
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

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            index,
        }
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(TensorError::ForeignVar);
        }
        Ok(())
    }

    /// Records a leaf tensor (parameter, input or constant).
    pub fn var(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable from a different tape");
        &self.nodes[v.index].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<Broadcast> {
        self.check(a)?;
        self.check(b)?;
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa == sb {
            return Ok(Broadcast::Same);
        }
        if sb.iter().all(|&e| e == 1) && sb.len() <= 1 {
            return Ok(Broadcast::Scalar);
        }
        if !sa.is_empty() && sa.len() == sb.len() {
            let k = sa.len() - 1;
            if sb[k] == 1 && sa[..k] == sb[..k] {
                return Ok(Broadcast::Trailing(sa[k]));
            }
        }
        Err(TensorError::Dimension {
            op,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        })
    }

    fn zip_with(&self, a: Var, b: Var, bc: Broadcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let va = self.value(a);
        let vb = self.value(b).data();
        let data = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, vb[bc.rhs_index(i)]))
            .collect();
        Tensor::new(va.shape().to_vec(), data).expect("shape preserved")
    }

    /// Elementwise sum. `b` may broadcast as a scalar or over a trailing singleton axis.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.order_for_broadcast(a, b);
        let bc = self.broadcast("add", a, b)?;
        let out = self.zip_with(a, b, bc, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b, bc)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = self.broadcast("sub", a, b)?;
        let out = self.zip_with(a, b, bc, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b, bc)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.order_for_broadcast(a, b);
        let bc = self.broadcast("mul", a, b)?;
        let out = self.zip_with(a, b, bc, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b, bc)))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.mul(a, b)
    }

    // Commutative ops put the smaller operand on the right so it can broadcast.
    fn order_for_broadcast(&self, a: Var, b: Var) -> (Var, Var) {
        if self.check(a).is_ok()
            && self.check(b).is_ok()
            && self.value(a).len() < self.value(b).len()
        {
            (b, a)
        } else {
            (a, b)
        }
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(|x| x * factor);
        Ok(self.push(out, Op::Scale(a, factor)))
    }

    /// Matrix-vector product `w · v` for `w` of shape (m, k) and `v` of shape (k).
    pub fn matvec(&mut self, w: Var, v: Var) -> Result<Var> {
        self.check(w)?;
        self.check(v)?;
        let (sw, sv) = (self.shape(w), self.shape(v));
        if sw.len() != 2 || sv.len() != 1 || sw[1] != sv[0] {
            return Err(TensorError::Dimension {
                op: "matvec",
                lhs: sw.to_vec(),
                rhs: sv.to_vec(),
            });
        }
        let (m, k) = (sw[0], sw[1]);
        let wd = self.value(w).data();
        let vd = self.value(v).data();
        let out: Vec<f64> = (0..m)
            .map(|i| dot(&wd[i * k..(i + 1) * k], vd))
            .collect();
        Ok(self.push(Tensor::vector(out), Op::MatVec(w, v)))
    }

    /// Row-wise affine map without bias: `x · wᵀ`.
    ///
    /// `x` is (batch, k) or (k); `w` is (m, k). The result is (batch, m) or (m).
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        let (sx, sw) = (self.shape(x), self.shape(w));
        let k = *sx.last().unwrap_or(&0);
        if sw.len() != 2 || sx.is_empty() || sx.len() > 2 || sw[1] != k {
            return Err(TensorError::Dimension {
                op: "linear",
                lhs: sx.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        let m = sw[0];
        let rows = if sx.len() == 2 { sx[0] } else { 1 };
        let out_shape = if sx.len() == 2 { vec![rows, m] } else { vec![m] };
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut out = vec![0.0; rows * m];
        for b in 0..rows {
            let xr = &xd[b * k..(b + 1) * k];
            for (o, slot) in out[b * m..(b + 1) * m].iter_mut().enumerate() {
                *slot = dot(xr, &wd[o * k..(o + 1) * k]);
            }
        }
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(value, Op::Linear(x, w)))
    }

    /// Adds a bias vector of length m to every row of a (batch, m) or (m) tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.check(x)?;
        self.check(bias)?;
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.len() != 1 || sx.is_empty() || sx[sx.len() - 1] != sb[0] {
            return Err(TensorError::Dimension {
                op: "add_bias",
                lhs: sx.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let m = sb[0];
        let bd = self.value(bias).data();
        let out = Tensor::new(
            sx.to_vec(),
            self.value(x)
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| v + bd[i % m])
                .collect(),
        )?;
        Ok(self.push(out, Op::AddBias(x, bias)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(sigmoid);
        Ok(self.push(out, Op::Sigmoid(a)))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(f64::tanh);
        Ok(self.push(out, Op::Tanh(a)))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    /// Concatenates along the last axis. All parts must agree on the leading axes.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat of zero tensors".into()))?;
        for &p in parts {
            self.check(p)?;
        }
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(TensorError::Dimension {
                    op: "concat",
                    lhs: self.shape(first).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Concat(parts.to_vec())))
    }

    /// Columns `start..start + width` of the last axis.
    pub fn slice(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        self.check(a)?;
        let s = self.shape(a).to_vec();
        let last = *s.last().unwrap_or(&0);
        if s.is_empty() || start + width > last {
            return Err(TensorError::Dimension {
                op: "slice",
                lhs: s,
                rhs: vec![start, width],
            });
        }
        let rows = self.value(a).len() / last;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            data.extend_from_slice(&src[r * last + start..r * last + start + width]);
        }
        let mut shape = s;
        *shape.last_mut().unwrap() = width;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Slice(a, start, width)))
    }

    /// Records a fused op whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, op: Box<dyn CustomOp>) -> Result<Var> {
        for &v in inputs {
            self.check(v)?;
        }
        Ok(self.push(value, Op::Custom(inputs.to_vec(), op)))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        self.check(root)?;
        let root_value = self.value(root);
        if root_value.len() != 1 || root_value.rank() > 1 {
            return Err(TensorError::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.index + 1];
        grads[root.index] = Some(Tensor::filled(root_value.shape(), 1.0));

        for idx in (0..=root.index).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b, bc) => {
                    acc(&mut grads, *a, || g.clone());
                    let gb = self.reduce_broadcast(&g, *b, *bc);
                    acc(&mut grads, *b, || gb);
                }
                Op::Sub(a, b, bc) => {
                    acc(&mut grads, *a, || g.clone());
                    let gb = self.reduce_broadcast(&g.map(|x| -x), *b, *bc);
                    acc(&mut grads, *b, || gb);
                }
                Op::Mul(a, b, bc) => {
                    let va = self.value(*a);
                    let vb = self.value(*b).data();
                    let ga_data = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, &x)| x * vb[bc.rhs_index(i)])
                        .collect();
                    let ga = Tensor::new(va.shape().to_vec(), ga_data)?;
                    let prod_b = Tensor::new(
                        g.shape().to_vec(),
                        g.data().iter().zip(va.data()).map(|(x, y)| x * y).collect(),
                    )?;
                    let gb = self.reduce_broadcast(&prod_b, *b, *bc);
                    acc(&mut grads, *a, || ga);
                    acc(&mut grads, *b, || gb);
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    acc(&mut grads, *a, || g.map(|x| x * k));
                }
                Op::MatVec(w, v) => {
                    let wv = self.value(*w);
                    let vv = self.value(*v);
                    let (m, k) = (wv.shape()[0], wv.shape()[1]);
                    let mut gw = vec![0.0; m * k];
                    let mut gv = vec![0.0; k];
                    for i in 0..m {
                        let gi = g.data()[i];
                        let wrow = &wv.data()[i * k..(i + 1) * k];
                        for j in 0..k {
                            gw[i * k + j] = gi * vv.data()[j];
                            gv[j] += gi * wrow[j];
                        }
                    }
                    acc(&mut grads, *w, || Tensor::new(vec![m, k], gw).expect("shape"));
                    acc(&mut grads, *v, || Tensor::vector(gv));
                }
                Op::Linear(x, w) => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let (m, k) = (wv.shape()[0], wv.shape()[1]);
                    let rows = xv.len() / k;
                    let mut gx = vec![0.0; rows * k];
                    let mut gw = vec![0.0; m * k];
                    let gd = g.data();
                    for b in 0..rows {
                        let xr = &xv.data()[b * k..(b + 1) * k];
                        let gxr = &mut gx[b * k..(b + 1) * k];
                        for o in 0..m {
                            let go = gd[b * m + o];
                            if go == 0.0 {
                                continue;
                            }
                            let wr = &wv.data()[o * k..(o + 1) * k];
                            let gwr = &mut gw[o * k..(o + 1) * k];
                            for j in 0..k {
                                gxr[j] += go * wr[j];
                                gwr[j] += go * xr[j];
                            }
                        }
                    }
                    acc(&mut grads, *x, || {
                        Tensor::new(xv.shape().to_vec(), gx).expect("shape")
                    });
                    acc(&mut grads, *w, || Tensor::new(vec![m, k], gw).expect("shape"));
                }
                Op::AddBias(x, bias) => {
                    let m = self.shape(*bias)[0];
                    let mut gb = vec![0.0; m];
                    for (i, v) in g.data().iter().enumerate() {
                        gb[i % m] += v;
                    }
                    acc(&mut grads, *x, || g.clone());
                    acc(&mut grads, *bias, || Tensor::vector(gb));
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let ga = Tensor::new(
                        y.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(y.data())
                            .map(|(gi, s)| gi * s * (1.0 - s))
                            .collect(),
                    )?;
                    acc(&mut grads, *a, || ga);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let ga = Tensor::new(
                        y.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(y.data())
                            .map(|(gi, t)| gi * (1.0 - t * t))
                            .collect(),
                    )?;
                    acc(&mut grads, *a, || ga);
                }
                Op::Sum(a) => {
                    let gv = g.item();
                    let shape = self.shape(*a).to_vec();
                    acc(&mut grads, *a, || Tensor::filled(&shape, gv));
                }
                Op::Concat(parts) => {
                    let total = *g.shape().last().unwrap();
                    let rows = g.len() / total;
                    let mut offset = 0;
                    for &p in parts {
                        let s = self.shape(p).to_vec();
                        let w = *s.last().unwrap();
                        let mut data = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            data.extend_from_slice(
                                &g.data()[r * total + offset..r * total + offset + w],
                            );
                        }
                        offset += w;
                        acc(&mut grads, p, || Tensor::new(s, data).expect("shape"));
                    }
                }
                Op::Slice(a, start, width) => {
                    let s = self.shape(*a).to_vec();
                    let last = *s.last().unwrap();
                    let rows = g.len() / width;
                    let mut data = vec![0.0; rows * last];
                    for r in 0..rows {
                        data[r * last + start..r * last + start + width]
                            .copy_from_slice(&g.data()[r * width..(r + 1) * width]);
                    }
                    acc(&mut grads, *a, || Tensor::new(s, data).expect("shape"));
                }
                Op::Custom(inputs, op) => {
                    let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                    let local = op.backward(&values, &node.value, &g);
                    debug_assert_eq!(local.len(), inputs.len());
                    for (&v, gv) in inputs.iter().zip(local) {
                        acc(&mut grads, v, || gv);
                    }
                }
            }
            grads[idx] = Some(g);
        }

        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn reduce_broadcast(&self, g: &Tensor, b: Var, bc: Broadcast) -> Tensor {
        match bc {
            Broadcast::Same => g.clone(),
            Broadcast::Scalar => Tensor::filled(self.shape(b), g.sum()),
            Broadcast::Trailing(last) => {
                let mut out = Tensor::zeros(self.shape(b));
                for (i, v) in g.data().iter().enumerate() {
                    out.data_mut()[i / last] += v;
                }
                out
            }
        }
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, make: impl FnOnce() -> Tensor) {
    match &mut grads[v.index] {
        Some(existing) => existing.accumulate(&make()),
        slot @ None => *slot = Some(make()),
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
