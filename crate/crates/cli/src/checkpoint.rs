//! JSON checkpoints with bit-exact floats and a parameter digest.

use std::path::Path;

use serde::{Deserialize, Serialize};

use sbp_core::tensor::{checksum_params, Module, Param, Tensor};

use crate::error::{usage, CliError, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model_kind: String,
    pub layers: Vec<LayerRecord>,
    pub frozen: bool,
    /// Hex digest of names, shapes and value bits, as [`Module::checksum`].
    pub param_checksum: String,
    pub config: serde_json::Value,
}

pub fn hex(sum: u64) -> String {
    format!("{sum:016x}")
}

impl Checkpoint {
    pub fn capture(kind: &str, modules: &[&dyn ModuleRef], frozen: bool, config: serde_json::Value) -> Self {
        let params: Vec<&Param> = modules.iter().flat_map(|m| m.param_refs()).collect();
        let layers = params
            .iter()
            .map(|p| LayerRecord {
                name: p.name.clone(),
                shape: p.shape().to_vec(),
                values: p.value.data().to_vec(),
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            model_kind: kind.to_string(),
            layers,
            frozen,
            param_checksum: hex(checksum_params(&params)),
            config,
        }
    }

    /// Digest recomputed from the stored layers.
    pub fn computed_checksum(&self) -> Result<u64> {
        let params = self
            .layers
            .iter()
            .map(|l| {
                let t = Tensor::new(l.shape.clone(), l.values.clone())
                    .map_err(|e| CliError::Contract(format!("checkpoint layer {}: {e}", l.name)))?;
                Ok(Param::new(l.name.clone(), t))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(checksum_params(&params.iter().collect::<Vec<_>>()))
    }

    pub fn verify(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(usage(format!(
                "checkpoint format_version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let got = hex(self.computed_checksum()?);
        if got != self.param_checksum {
            return Err(CliError::Contract(format!(
                "checkpoint checksum mismatch: recorded {}, computed {got}",
                self.param_checksum
            )));
        }
        Ok(())
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.model_kind != kind {
            return Err(usage(format!("expected a {kind} checkpoint, got {}", self.model_kind)));
        }
        Ok(())
    }

    /// Copies the stored values into `modules`, which must have exactly the
    /// stored parameter names and shapes, in order.
    pub fn restore(&self, modules: &mut [&mut dyn ModuleRef]) -> Result<()> {
        let mut params: Vec<&mut Param> = modules.iter_mut().flat_map(|m| m.param_muts()).collect();
        if params.len() != self.layers.len() {
            return Err(usage(format!(
                "checkpoint has {} layers, the configured model has {}",
                self.layers.len(),
                params.len()
            )));
        }
        for (p, l) in params.iter_mut().zip(&self.layers) {
            if p.name != l.name || p.shape() != l.shape.as_slice() {
                return Err(usage(format!(
                    "checkpoint layer {} {:?} does not match configured {} {:?}",
                    l.name,
                    l.shape,
                    p.name,
                    p.shape()
                )));
            }
            p.value.data_mut().copy_from_slice(&l.values);
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Contract(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
    }

    /// Reads and verifies a checkpoint.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
        let ck: Self = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        ck.verify()?;
        Ok(ck)
    }
}

/// Object-safe view of [`Module`] parameter access.
pub trait ModuleRef {
    fn param_refs(&self) -> Vec<&Param>;
    fn param_muts(&mut self) -> Vec<&mut Param>;
}

impl<M: Module> ModuleRef for M {
    fn param_refs(&self) -> Vec<&Param> {
        self.params()
    }
    fn param_muts(&mut self) -> Vec<&mut Param> {
        self.params_mut()
    }
}
