use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a parameter registered in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
struct Slot {
    name: String,
    frozen: bool,
    /// Index into the trainable or frozen list.
    at: usize,
}

/// Named model parameters. Trainable and frozen tensors live in separate
/// lists so the optimizer never sees frozen ones.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    slots: Vec<Slot>,
    trainable: Vec<Tensor>,
    frozen: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.insert(name.into(), value, false)
    }

    pub fn add_frozen(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.insert(name.into(), value, true)
    }

    fn insert(&mut self, name: String, value: Tensor, frozen: bool) -> ParamId {
        let list = if frozen { &mut self.frozen } else { &mut self.trainable };
        list.push(value);
        self.slots.push(Slot {
            name,
            frozen,
            at: list.len() - 1,
        });
        ParamId(self.slots.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        let s = &self.slots[id.0];
        if s.frozen {
            &self.frozen[s.at]
        } else {
            &self.trainable[s.at]
        }
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        let s = &self.slots[id.0];
        if s.frozen {
            &mut self.frozen[s.at]
        } else {
            &mut self.trainable[s.at]
        }
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.slots[id.0].name
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.slots.len()).map(ParamId)
    }

    pub fn trainable(&self) -> &[Tensor] {
        &self.trainable
    }

    pub fn trainable_mut(&mut self) -> &mut [Tensor] {
        &mut self.trainable
    }

    /// Number of learnable scalars; frozen tensors are not counted.
    pub fn parameter_count(&self) -> usize {
        self.trainable.iter().map(Tensor::len).sum()
    }

    /// Places every parameter on `tape`, frozen ones as constants.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .slots
            .iter()
            .map(|s| {
                if s.frozen {
                    tape.constant(self.frozen[s.at].clone())
                } else {
                    tape.param(self.trainable[s.at].clone())
                }
            })
            .collect();
        Bound {
            vars,
            trainable: self
                .slots
                .iter()
                .enumerate()
                .filter(|(_, s)| !s.frozen)
                .map(|(i, _)| i)
                .collect(),
        }
    }

    /// Writes one CNNT file per parameter plus `manifest.txt`
    /// (`name file frozen` per line).
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut manifest = String::new();
        for id in self.ids() {
            let file = format!("p{:04}.cnnt", id.0);
            self.get(id).write_cnnt(dir.join(&file))?;
            let _ = writeln!(manifest, "{} {} {}", self.name(id), file, self.slots[id.0].frozen);
        }
        fs::write(dir.join("manifest.txt"), manifest)?;
        Ok(())
    }

    /// Reads a checkpoint written by [`ParamStore::save`] into a store with
    /// the same names and shapes.
    pub fn load(&mut self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let manifest = fs::read_to_string(dir.join("manifest.txt"))?;
        let lines: Vec<&str> = manifest.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.len() != self.len() {
            return Err(Error::Validation(format!(
                "checkpoint has {} parameters, model has {}",
                lines.len(),
                self.len()
            )));
        }
        for (id, line) in self.ids().zip(lines) {
            let mut parts = line.split_whitespace();
            let (Some(name), Some(file)) = (parts.next(), parts.next()) else {
                return Err(Error::Validation(format!("bad manifest line `{line}`")));
            };
            if name != self.name(id) {
                return Err(Error::Validation(format!(
                    "checkpoint parameter `{name}` where `{}` was expected",
                    self.name(id)
                )));
            }
            let t = Tensor::read_cnnt(dir.join(file))?;
            if t.shape() != self.get(id).shape() {
                return Err(Error::Validation(format!(
                    "`{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    self.get(id).shape()
                )));
            }
            *self.get_mut(id) = t;
        }
        Ok(())
    }
}

/// Parameters of a [`ParamStore`] placed on one tape.
pub struct Bound {
    vars: Vec<Var>,
    trainable: Vec<usize>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients of the trainable parameters, in store order.
    pub fn trainable_grads(&self, tape: &Tape, grads: &Gradients) -> Vec<Tensor> {
        self.trainable
            .iter()
            .map(|&i| grads.tensor(tape, self.vars[i]))
            .collect()
    }
}
