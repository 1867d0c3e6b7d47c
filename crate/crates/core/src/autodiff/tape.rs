use std::collections::HashMap;

use super::kernels::{affine_rows, axpy, Activation};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
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
    Affine { w: Var, x: Var, b: Var },
    Act { kind: Activation, x: Var },
    Concat { a: Var, b: Var },
    Slice { x: Var, start: usize },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    Sum { x: Var },
    Mse { pred: Var, target: Var },
    GaussianKl { mu: Var, logvar: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only record of a forward pass.
///
/// Nodes are stored in creation order, so every op's inputs precede it and
/// a single reverse sweep visits each node once. Tapes are rebuilt for each
/// forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    param_index: HashMap<String, Var>,
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::contract(format!("variable {} is not on this tape", v.0)))
        }
    }

    /// A constant input. Gradients still flow to it and can be read back.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A named trainable leaf; [`Tape::backward`] reports a gradient for
    /// every named leaf, zero when the loss does not depend on it.
    pub fn param(&mut self, name: &str, value: Tensor) -> Result<Var> {
        if self.param_index.contains_key(name) {
            return Err(Error::contract(format!("parameter `{name}` bound twice")));
        }
        let v = self.push(value, Op::Leaf);
        self.params.push((name.to_string(), v));
        self.param_index.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// `W · x + b`, with `x` either a vector of length `n` or a batch of
    /// rows `[B, n]`.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        for v in [w, x, b] {
            self.check(v)?;
        }
        let (wt, xt, bt) = (self.value(w), self.value(x), self.value(b));
        let shape_err = || {
            Error::dim(format!(
                "affine: W {:?}, x {:?}, b {:?} do not conform",
                wt.dims(),
                xt.dims(),
                bt.dims()
            ))
        };
        if wt.rank() != 2 || bt.rank() != 1 || !(xt.rank() == 1 || xt.rank() == 2) {
            return Err(shape_err());
        }
        let (m, n) = (wt.dims()[0], wt.dims()[1]);
        if xt.cols() != n || bt.dims()[0] != m {
            return Err(shape_err());
        }
        let mut out_dims = xt.dims().to_vec();
        *out_dims.last_mut().unwrap() = m;
        let mut out = Tensor::zeros(&out_dims);
        affine_rows(wt.data(), bt.data(), m, n, xt.data(), out.data_mut());
        Ok(self.push(out, Op::Affine { w, x, b }))
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Result<Var> {
        self.check(x)?;
        let xt = self.value(x);
        let data = xt.data().iter().map(|&v| kind.apply(v)).collect();
        let out = Tensor::new(xt.dims().to_vec(), data)?;
        Ok(self.push(out, Op::Act { kind, x }))
    }

    /// `[a; b]` for two vectors.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (at, bt) = (self.value(a), self.value(b));
        if at.rank() != 1 || bt.rank() != 1 {
            return Err(Error::dim(format!(
                "concat needs two vectors, got {:?} and {:?}",
                at.dims(),
                bt.dims()
            )));
        }
        let mut data = at.data().to_vec();
        data.extend_from_slice(bt.data());
        Ok(self.push(Tensor::vector(data), Op::Concat { a, b }))
    }

    /// Columns `start..start+len` of the trailing axis.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.check(x)?;
        let xt = self.value(x);
        let cols = xt.cols();
        if xt.rank() == 0 || start + len > cols {
            return Err(Error::dim(format!(
                "slice {start}..{} out of range for shape {:?}",
                start + len,
                xt.dims()
            )));
        }
        let rows = xt.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&xt.data()[r * cols + start..r * cols + start + len]);
        }
        let mut dims = xt.dims().to_vec();
        *dims.last_mut().unwrap() = len;
        let out = Tensor::new(dims, data)?;
        Ok(self.push(out, Op::Slice { x, start }))
    }

    fn binary_same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        self.check(a)?;
        self.check(b)?;
        let (at, bt) = (self.value(a), self.value(b));
        if !at.same_shape(bt) {
            return Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                at.dims(),
                bt.dims()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "add")?;
        let (at, bt) = (self.value(a), self.value(b));
        let data = at.data().iter().zip(bt.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(at.dims().to_vec(), data)?;
        Ok(self.push(out, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "mul")?;
        let (at, bt) = (self.value(a), self.value(b));
        let data = at.data().iter().zip(bt.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(at.dims().to_vec(), data)?;
        Ok(self.push(out, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.check(x)?;
        let xt = self.value(x);
        let data = xt.data().iter().map(|v| v * factor).collect();
        let out = Tensor::new(xt.dims().to_vec(), data)?;
        Ok(self.push(out, Op::Scale { x, factor }))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s = self.value(x).data().iter().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum { x }))
    }

    /// Mean of squared differences over all elements. `target` must be a
    /// leaf; no gradient is sent to it.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.binary_same_shape(pred, target, "mse")?;
        if !matches!(self.nodes[target.0].op, Op::Leaf) {
            return Err(Error::contract("mse target must be a leaf"));
        }
        let (pt, tt) = (self.value(pred), self.value(target));
        let n = pt.len().max(1) as f64;
        let s: f64 = pt
            .data()
            .iter()
            .zip(tt.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        Ok(self.push(Tensor::scalar(s / n), Op::Mse { pred, target }))
    }

    /// `KL(N(mu, exp(logvar)) || N(0, I))`. For a batch `[B, k]` this is the
    /// mean of the per-row divergences.
    pub fn gaussian_kl(&mut self, mu: Var, logvar: Var) -> Result<Var> {
        self.binary_same_shape(mu, logvar, "gaussian_kl")?;
        let (mt, lt) = (self.value(mu), self.value(logvar));
        let rows = mt.rows() as f64;
        let s: f64 = mt
            .data()
            .iter()
            .zip(lt.data())
            .map(|(m, lv)| m * m + lv.exp() - lv - 1.0)
            .sum();
        Ok(self.push(Tensor::scalar(0.5 * s / rows), Op::GaussianKl { mu, logvar }))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check(loss)?;
        if self.value(loss).rank() != 0 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).dims()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match node.op {
                Op::Leaf => {}
                Op::Affine { w, x, b } => {
                    let (wt, xt) = (self.value(w), self.value(x));
                    let (m, n) = (wt.dims()[0], wt.dims()[1]);
                    let rows = xt.rows();
                    let gd = g.data();
                    let mut gw = vec![0.0; m * n];
                    let mut gx = vec![0.0; rows * n];
                    let mut gb = vec![0.0; m];
                    for r in 0..rows {
                        let xr = &xt.data()[r * n..(r + 1) * n];
                        let gxr = &mut gx[r * n..(r + 1) * n];
                        for j in 0..m {
                            let gy = gd[r * m + j];
                            if gy == 0.0 {
                                continue;
                            }
                            gb[j] += gy;
                            axpy(gy, xr, &mut gw[j * n..(j + 1) * n]);
                            axpy(gy, &wt.data()[j * n..(j + 1) * n], gxr);
                        }
                    }
                    accumulate(&mut grads, w, wt.dims(), gw);
                    accumulate(&mut grads, x, xt.dims(), gx);
                    accumulate(&mut grads, b, &[m], gb);
                }
                Op::Act { kind, x } => {
                    let xt = self.value(x);
                    let gx = xt
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .zip(g.data())
                        .map(|((&xv, &yv), &gv)| gv * kind.derivative(xv, yv))
                        .collect();
                    accumulate(&mut grads, x, xt.dims(), gx);
                }
                Op::Concat { a, b } => {
                    let na = self.value(a).len();
                    let gd = g.data();
                    accumulate(&mut grads, a, &[na], gd[..na].to_vec());
                    accumulate(&mut grads, b, &[gd.len() - na], gd[na..].to_vec());
                }
                Op::Slice { x, start } => {
                    let xt = self.value(x);
                    let (cols, len) = (xt.cols(), node.value.cols());
                    let mut gx = vec![0.0; xt.len()];
                    for r in 0..xt.rows() {
                        gx[r * cols + start..r * cols + start + len]
                            .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                    }
                    accumulate(&mut grads, x, xt.dims(), gx);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, a, g.dims(), g.data().to_vec());
                    accumulate(&mut grads, b, g.dims(), g.data().to_vec());
                }
                Op::Mul { a, b } => {
                    let (at, bt) = (self.value(a), self.value(b));
                    let ga = g.data().iter().zip(bt.data()).map(|(gv, bv)| gv * bv).collect();
                    let gb = g.data().iter().zip(at.data()).map(|(gv, av)| gv * av).collect();
                    accumulate(&mut grads, a, at.dims(), ga);
                    accumulate(&mut grads, b, bt.dims(), gb);
                }
                Op::Scale { x, factor } => {
                    let gx = g.data().iter().map(|gv| gv * factor).collect();
                    accumulate(&mut grads, x, g.dims(), gx);
                }
                Op::Sum { x } => {
                    let xt = self.value(x);
                    let gv = g.data()[0];
                    accumulate(&mut grads, x, xt.dims(), vec![gv; xt.len()]);
                }
                Op::Mse { pred, target } => {
                    let (pt, tt) = (self.value(pred), self.value(target));
                    let c = 2.0 * g.data()[0] / pt.len().max(1) as f64;
                    let gp = pt
                        .data()
                        .iter()
                        .zip(tt.data())
                        .map(|(p, t)| c * (p - t))
                        .collect();
                    accumulate(&mut grads, pred, pt.dims(), gp);
                }
                Op::GaussianKl { mu, logvar } => {
                    let (mt, lt) = (self.value(mu), self.value(logvar));
                    let c = g.data()[0] / mt.rows() as f64;
                    let gm = mt.data().iter().map(|m| c * m).collect();
                    let gl = lt.data().iter().map(|lv| c * 0.5 * (lv.exp() - 1.0)).collect();
                    accumulate(&mut grads, mu, mt.dims(), gm);
                    accumulate(&mut grads, logvar, lt.dims(), gl);
                }
            }
            grads[i] = Some(g);
        }

        let named = self
            .params
            .iter()
            .map(|(name, v)| {
                let g = grads[v.0]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(self.value(*v).dims()));
                (name.clone(), g)
            })
            .collect();
        Ok(Gradients {
            per_var: grads,
            named: GradMap::from_vec(named),
        })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, dims: &[usize], delta: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(delta) {
                *e += d;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(dims.to_vec(), delta).expect("gradient shape follows value"));
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    per_var: Vec<Option<Tensor>>,
    named: GradMap,
}

impl Gradients {
    /// Gradient for any variable on the tape, `None` if the loss does not
    /// depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.per_var.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients of named parameters, in binding order.
    pub fn named(&self) -> &GradMap {
        &self.named
    }

    pub fn into_named(self) -> GradMap {
        self.named
    }
}

/// Ordered map from parameter name to gradient.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradMap {
    entries: Vec<(String, Tensor)>,
}

impl GradMap {
    pub fn from_vec(entries: Vec<(String, Tensor)>) -> Self {
        GradMap { entries }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn insert(&mut self, name: &str, grad: Tensor) {
        match self.entries.iter_mut().find(|(n, _)| n == name) {
            Some((_, t)) => *t = grad,
            None => self.entries.push((name.to_string(), grad)),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
