use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Gaussian init with the given standard deviation.
    pub fn add_normal(&mut self, name: impl Into<String>, shape: &[usize], std: f64, rng: &mut impl Rng) -> ParamId {
        let normal = Normal::new(0.0, std).expect("valid std");
        let numel = shape.iter().product();
        let data = (0..numel).map(|_| normal.sample(rng)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data).expect("shape"))
    }

    pub fn add_const(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> ParamId {
        self.add(name, Tensor::full(shape, value))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Places every parameter on `graph` as a leaf.
    pub fn bind(&self, graph: &mut Graph) -> Bound {
        Bound {
            vars: self.values.iter().map(|v| graph.leaf(v.clone())).collect(),
        }
    }

    /// Collects gradients of bound parameters (zeros for unreachable ones).
    pub fn grads(&self, graph: &Graph, bound: &Bound) -> Vec<Tensor> {
        bound
            .vars
            .iter()
            .zip(&self.values)
            .map(|(&v, p)| graph.grad(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect()
    }

    pub fn round_to_f32(&mut self) {
        self.values.iter_mut().for_each(Tensor::round_to_f32);
    }

    /// Writes one `.ctten` file per parameter under `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, value) in self.names.iter().zip(&self.values) {
            value.write_ctten(&dir.join(format!("{name}.ctten")))?;
        }
        Ok(())
    }

    /// Loads values for the already-registered names from `dir`, checking shapes.
    pub fn load_dir(&mut self, dir: &Path) -> Result<()> {
        let mut loaded = BTreeMap::new();
        for name in &self.names {
            let t = Tensor::read_ctten(&dir.join(format!("{name}.ctten")))?;
            loaded.insert(name.clone(), t);
        }
        for (name, value) in self.names.iter().zip(self.values.iter_mut()) {
            let t = loaded.remove(name).expect("loaded above");
            if t.shape() != value.shape() {
                return Err(Error::config(format!(
                    "checkpoint tensor {name} has shape {:?}, model expects {:?}",
                    t.shape(),
                    value.shape()
                )));
            }
            *value = t;
        }
        Ok(())
    }
}

/// Graph handles of a [`ParamStore`] bound with [`ParamStore::bind`].
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}
