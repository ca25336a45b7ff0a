//! Named parameter storage and seeded initialization.

use std::collections::HashMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// What kind of layer a registered module is. Used for the architecture census.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    InstanceNorm,
    BatchNorm,
    Linear,
    MaxPool,
    ChannelAttention,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerInfo {
    pub path: String,
    pub kind: LayerKind,
}

/// Ordered collection of trainable tensors keyed by canonical path names
/// such as `content.stage1.block0.conv2.weight`.
#[derive(Debug, Default)]
pub struct ParamStore {
    entries: Vec<(String, Var)>,
    index: HashMap<String, usize>,
    layers: Vec<LayerInfo>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn layers(&self) -> &[LayerInfo] {
        &self.layers
    }

    /// Top-level component of a parameter path (`content`, `appearance`, `decoder`).
    pub fn group_of(name: &str) -> &str {
        name.split('.').next().unwrap_or(name)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.elem_count()).sum()
    }

    pub(crate) fn register_layer(&mut self, path: &str, kind: LayerKind) {
        self.layers.push(LayerInfo {
            path: path.to_string(),
            kind,
        });
    }

    fn insert(&mut self, name: String, var: Var) -> Result<()> {
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, var));
        Ok(())
    }

    /// Overwrites a parameter's values in place.
    pub fn assign(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{name}`")))?;
        if var.shape() != value.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter `{name}` has shape {:?}, checkpoint holds {:?}",
                var.shape(),
                value.shape()
            )));
        }
        var.set(&value.to_dtype(var.dtype())?)?;
        Ok(())
    }
}

/// Creates parameters from a seeded stream so a model is reproducible from
/// (config, seed) alone.
pub(crate) struct ParamBuilder {
    rng: ChaCha8Rng,
    pub dtype: DType,
    pub device: Device,
    pub store: ParamStore,
}

impl ParamBuilder {
    pub fn new(seed: u64, dtype: DType) -> Self {
        ParamBuilder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            dtype,
            device: Device::Cpu,
            store: ParamStore::default(),
        }
    }

    fn var_from(&mut self, name: String, values: Vec<f64>, shape: &[usize]) -> Result<Var> {
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        self.store.insert(name, var.clone())?;
        Ok(var)
    }

    pub fn normal(&mut self, name: String, shape: &[usize], std: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| std * self.rng.sample::<f64, _>(StandardNormal)).collect();
        self.var_from(name, values, shape)
    }

    pub fn constant(&mut self, name: String, shape: &[usize], value: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        self.var_from(name, vec![value; n], shape)
    }
}
