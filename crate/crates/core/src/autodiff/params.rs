use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Named tensors in insertion order.
///
/// Insertion order is the canonical order: genomes, digests and checkpoints
/// all walk the set in this order.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl PartialEq for ParamSet {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor, trainable: bool) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::contract(format!("duplicate parameter name `{name}`")));
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            tensor,
            trainable,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.entries[i].tensor)
    }

    pub(crate) fn expect(&self, name: &str) -> &Tensor {
        self.get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` missing from a constructed set"))
    }

    pub fn is_trainable(&self, name: &str) -> Option<bool> {
        self.index.get(name).map(|&i| self.entries[i].trainable)
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::contract(format!("no parameter named `{name}`")))?;
        self.entries[i].trainable = trainable;
        Ok(())
    }

    pub fn freeze_all(&mut self) {
        for e in &mut self.entries {
            e.trainable = false;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.iter()
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamEntry> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    /// Records every tensor on `tape`. Trainable tensors become named
    /// parameters; frozen ones become plain leaves.
    pub fn bind(&self, tape: &mut Tape) -> Result<Bound> {
        let mut vars = HashMap::with_capacity(self.entries.len());
        for e in &self.entries {
            let v = if e.trainable {
                tape.param(&e.name, e.tensor.clone())?
            } else {
                tape.leaf(e.tensor.clone())
            };
            vars.insert(e.name.clone(), v);
        }
        Ok(Bound { vars })
    }

    /// Concatenation of all values in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.scalar_count());
        for e in &self.entries {
            out.extend_from_slice(e.tensor.data());
        }
        out
    }

    /// Overwrites every value from a flat vector laid out as [`flatten`].
    ///
    /// [`flatten`]: ParamSet::flatten
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.scalar_count() {
            return Err(Error::contract(format!(
                "flat vector has {} values, parameter set needs {}",
                flat.len(),
                self.scalar_count()
            )));
        }
        let mut offset = 0;
        for e in &mut self.entries {
            let n = e.tensor.len();
            e.tensor.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

/// Name → tape variable mapping produced by [`ParamSet::bind`].
#[derive(Debug)]
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` was not bound"))
    }
}

/// Appends a dense layer `name.w` (`outputs × inputs`, scaled by
/// `1/√inputs`) and zero bias `name.b`.
pub(crate) fn push_dense<R: Rng>(
    set: &mut ParamSet,
    name: &str,
    inputs: usize,
    outputs: usize,
    rng: &mut R,
) -> Result<()> {
    let scale = 1.0 / (inputs as f64).sqrt();
    let w: Vec<f64> = (0..inputs * outputs)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
        .collect();
    set.insert(&format!("{name}.w"), Tensor::matrix(outputs, inputs, w)?, true)?;
    set.insert(&format!("{name}.b"), Tensor::zeros(&[outputs]), true)?;
    Ok(())
}
