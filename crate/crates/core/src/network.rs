//! Network manifests and checkpoint files.
//!
//! A checkpoint is a named-array container whose metadata holds the JSON
//! [`Manifest`]; weights are stored as f64 regardless of the training
//! precision.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::config::{ArchConfig, SystemConfig};
use crate::error::{Error, Result};
use crate::nn::{spec::validate_chain, LayerSpec, Scalar, Slot, Visit};
use crate::store::{self, ArrayData, NamedArray};

pub const CHECKPOINT_FORMAT: &str = "slplink-network";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkKind {
    /// Precoding transmitter plus shared decode block.
    Slpd,
    /// Modulation-order classifier.
    Mop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub kind: NetworkKind,
    pub num_antennas: usize,
    pub num_users: usize,
    pub max_order: u32,
    pub rate_req: u32,
    /// Convolutional input channels.
    pub input_channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enumeration_rule: Option<String>,
    pub arch: ArchConfig,
    pub blocks: Vec<Block>,
}

impl Manifest {
    pub fn new(kind: NetworkKind, cfg: &SystemConfig, arch: &ArchConfig, input_channels: usize) -> Self {
        Manifest {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind,
            num_antennas: cfg.num_antennas,
            num_users: cfg.num_users,
            max_order: cfg.max_order,
            rate_req: cfg.rate_req,
            input_channels,
            num_classes: None,
            enumeration_rule: None,
            arch: arch.clone(),
            blocks: Vec::new(),
        }
    }

    pub fn block(&self, name: &str) -> Result<&[LayerSpec]> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .map(|b| b.layers.as_slice())
            .ok_or_else(|| Error::Format(format!("manifest has no block {name}")))
    }

    /// Per-block chain consistency.
    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint {} v{}", self.format, self.version)));
        }
        self.blocks.iter().try_for_each(|b| validate_chain(&b.layers))
    }

    /// Rejects checkpoints trained for a different scenario.
    pub fn check_compatible(&self, kind: NetworkKind, cfg: &SystemConfig) -> Result<()> {
        let mismatch = |what: &str, a: String, b: String| {
            Err(Error::Incompatible(format!("{what}: checkpoint has {a}, configuration has {b}")))
        };
        if self.kind != kind {
            return mismatch("network kind", format!("{:?}", self.kind), format!("{kind:?}"));
        }
        if self.num_antennas != cfg.num_antennas {
            return mismatch("num_antennas", self.num_antennas.to_string(), cfg.num_antennas.to_string());
        }
        if self.num_users != cfg.num_users {
            return mismatch("num_users", self.num_users.to_string(), cfg.num_users.to_string());
        }
        if self.max_order != cfg.max_order {
            return mismatch("max_order", self.max_order.to_string(), cfg.max_order.to_string());
        }
        if kind == NetworkKind::Mop && self.rate_req != cfg.rate_req {
            return mismatch("rate_req", self.rate_req.to_string(), cfg.rate_req.to_string());
        }
        Ok(())
    }
}

/// Manifest plus weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub tensors: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        store::write(path, &self.tensors, &[("manifest", serde_json::to_string(&self.manifest)?)])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (arrays, meta) = store::read(path)?;
        let manifest: Manifest = serde_json::from_str(
            meta.get("manifest").ok_or_else(|| Error::Format(format!("{} has no manifest", path.display())))?,
        )?;
        manifest.validate()?;
        let mut tensors: Vec<NamedArray> = arrays.into_values().collect();
        tensors.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(Checkpoint { manifest, tensors })
    }
}

/// Copies every parameter and buffer out as f64 arrays.
pub fn export_tensors<T: Scalar>(net: &mut dyn Visit<T>) -> Vec<NamedArray> {
    let mut out = Vec::new();
    net.visit_mut(&mut |name, slot| match slot {
        Slot::Param(p) => out.push(NamedArray::f64(
            name,
            vec![p.value.nrows(), p.value.ncols()],
            p.value.iter().map(|v| v.as_f64()).collect(),
        )),
        Slot::Buffer(b) => out.push(NamedArray::f64(name, vec![b.len()], b.iter().map(|v| v.as_f64()).collect())),
    });
    out
}

/// Loads tensors by name; every slot of `net` must be present with its shape.
pub fn import_tensors<T: Scalar>(net: &mut dyn Visit<T>, tensors: &[NamedArray]) -> Result<()> {
    let by_name: std::collections::HashMap<&str, &NamedArray> = tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let mut err = None;
    let mut seen = 0;
    net.visit_mut(&mut |name, slot| {
        if err.is_some() {
            return;
        }
        let Some(t) = by_name.get(name) else {
            err = Some(Error::Format(format!("checkpoint lacks tensor {name}")));
            return;
        };
        let ArrayData::F64(data) = &t.data else {
            err = Some(Error::Format(format!("tensor {name} is not f64")));
            return;
        };
        if data.iter().any(|v| !v.is_finite()) {
            err = Some(Error::Format(format!("tensor {name} contains non-finite values")));
            return;
        }
        seen += 1;
        match slot {
            Slot::Param(p) => {
                if t.shape != [p.value.nrows(), p.value.ncols()] {
                    err = Some(Error::Format(format!("tensor {name} has shape {:?}", t.shape)));
                    return;
                }
                p.value = Array2::from_shape_vec(p.value.raw_dim(), data.iter().map(|&v| T::cast(v)).collect())
                    .expect("shape checked");
            }
            Slot::Buffer(b) => {
                if t.shape != [b.len()] {
                    err = Some(Error::Format(format!("tensor {name} has shape {:?}", t.shape)));
                    return;
                }
                *b = Array1::from_iter(data.iter().map(|&v| T::cast(v)));
            }
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    if seen != tensors.len() {
        return Err(Error::Format(format!("checkpoint has {} tensors, network uses {seen}", tensors.len())));
    }
    Ok(())
}

/// True when every parameter and buffer is finite.
pub fn all_finite<T: Scalar>(net: &mut dyn Visit<T>) -> bool {
    let mut ok = true;
    net.visit_mut(&mut |_, slot| match slot {
        Slot::Param(p) => ok &= p.value.iter().all(|v| v.is_finite()),
        Slot::Buffer(b) => ok &= b.iter().all(|v| v.is_finite()),
    });
    ok
}
