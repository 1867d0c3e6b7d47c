//! Dense layer stacks shared by every model.
//!
//! A stack named `p` with sizes `[n0, n1, ..., nL]` owns tensors
//! `p.0.w`, `p.0.b`, ..., `p.{L-1}.w`, `p.{L-1}.b`, where `p.i.w` is
//! `n{i+1} × n{i}`. Hidden layers use tanh; the last layer applies the
//! stack's output activation, if any.

use rand::Rng;

use crate::autodiff::kernels::affine_rows;
use crate::autodiff::{push_dense, Activation, Bound, ParamSet, Tape, Var};
use crate::error::{Error, Result};

pub(crate) const HIDDEN: Activation = Activation::Tanh;

pub(crate) fn init_stack<R: Rng>(
    set: &mut ParamSet,
    prefix: &str,
    sizes: &[usize],
    rng: &mut R,
) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::contract(format!(
            "layer sizes for `{prefix}` must be positive and at least two, got {sizes:?}"
        )));
    }
    for (i, pair) in sizes.windows(2).enumerate() {
        push_dense(set, &format!("{prefix}.{i}"), pair[0], pair[1], rng)?;
    }
    Ok(())
}

/// Layer sizes recovered from the stored weight shapes.
pub(crate) fn stack_sizes(set: &ParamSet, prefix: &str) -> Result<Vec<usize>> {
    let mut sizes = Vec::new();
    for i in 0.. {
        let Some(w) = set.get(&format!("{prefix}.{i}.w")) else { break };
        let b = set
            .get(&format!("{prefix}.{i}.b"))
            .ok_or_else(|| Error::contract(format!("`{prefix}.{i}.b` missing")))?;
        if w.rank() != 2 || b.dims() != [w.dims()[0]] {
            return Err(Error::dim(format!(
                "`{prefix}.{i}` has weight {:?} and bias {:?}",
                w.dims(),
                b.dims()
            )));
        }
        if let Some(&last) = sizes.last() {
            if w.dims()[1] != last {
                return Err(Error::dim(format!(
                    "`{prefix}.{i}.w` takes {} inputs, previous layer gives {last}",
                    w.dims()[1]
                )));
            }
        } else {
            sizes.push(w.dims()[1]);
        }
        sizes.push(w.dims()[0]);
    }
    if sizes.is_empty() {
        return Err(Error::contract(format!("no layers named `{prefix}.*`")));
    }
    Ok(sizes)
}

/// Tape-free forward pass over a batch of `rows` inputs laid out row-major.
pub(crate) fn forward(
    set: &ParamSet,
    prefix: &str,
    layers: usize,
    x: &[f64],
    rows: usize,
    out_act: Option<Activation>,
) -> Vec<f64> {
    let mut cur = x.to_vec();
    for i in 0..layers {
        let w = set.expect(&format!("{prefix}.{i}.w"));
        let b = set.expect(&format!("{prefix}.{i}.b"));
        let (m, n) = (w.dims()[0], w.dims()[1]);
        let mut next = vec![0.0; rows * m];
        affine_rows(w.data(), b.data(), m, n, &cur, &mut next);
        let act = if i + 1 < layers { Some(HIDDEN) } else { out_act };
        if let Some(a) = act {
            next.iter_mut().for_each(|v| *v = a.apply(*v));
        }
        cur = next;
    }
    cur
}

pub(crate) fn forward_tape(
    tape: &mut Tape,
    bound: &Bound,
    prefix: &str,
    layers: usize,
    x: Var,
    out_act: Option<Activation>,
) -> Result<Var> {
    let mut cur = x;
    for i in 0..layers {
        let w = bound.var(&format!("{prefix}.{i}.w"));
        let b = bound.var(&format!("{prefix}.{i}.b"));
        cur = tape.affine(w, cur, b)?;
        let act = if i + 1 < layers { Some(HIDDEN) } else { out_act };
        if let Some(a) = act {
            cur = tape.activation(a, cur)?;
        }
    }
    Ok(cur)
}

/// Seeded permutation of `0..n`.
pub(crate) fn shuffled<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}
