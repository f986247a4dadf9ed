//! Binary checkpoint format.
//!
//! Layout: 8-byte magic, little-endian `u64` header length, a JSON header,
//! then every parameter tensor as little-endian `f32` in module order,
//! optionally followed by one optimizer momentum buffer per trainable
//! parameter.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::{Module, ParamKind};
use super::{AnchorConfig, ModelConfig, Network};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HPCKPT\0\x01";
pub const SCHEMA_VERSION: u32 = 1;

/// Input preprocessing baked into a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    /// Multiplier applied to 8-bit pixel values.
    pub pixel_scale: f64,
    /// Gray level used to pad letterboxed inputs.
    pub pad_value: u8,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            pixel_scale: 1.0 / 255.0,
            pad_value: 114,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub anchors: AnchorConfig,
    pub input_size: usize,
    pub normalization: Normalization,
    /// Element count of every parameter tensor, in module order.
    pub param_lengths: Vec<usize>,
    pub has_optimizer: bool,
    /// Epochs completed when the checkpoint was written.
    pub epoch: usize,
    /// Free-form training configuration and state.
    #[serde(default)]
    pub training: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub weights: Vec<Vec<f32>>,
    /// Momentum buffers for trainable (non-buffer) parameters.
    pub optimizer: Option<Vec<Vec<f32>>>,
}

impl Checkpoint {
    pub fn from_network(
        net: &mut Network,
        anchors: &AnchorConfig,
        input_size: usize,
        normalization: Normalization,
        epoch: usize,
        training: serde_json::Value,
        optimizer: Option<Vec<Vec<f32>>>,
    ) -> Self {
        let model = net.config().clone();
        let weights: Vec<Vec<f32>> = net.params_mut().iter().map(|p| p.value.clone()).collect();
        Self {
            header: CheckpointHeader {
                schema_version: SCHEMA_VERSION,
                model,
                anchors: anchors.clone(),
                input_size,
                normalization,
                param_lengths: weights.iter().map(Vec::len).collect(),
                has_optimizer: optimizer.is_some(),
                epoch,
                training,
            },
            weights,
            optimizer,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_vec(&self.header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
        write(MAGIC)?;
        write(&(header.len() as u64).to_le_bytes())?;
        write(&header)?;
        for t in self.weights.iter().chain(self.optimizer.iter().flatten()) {
            let bytes: Vec<u8> = t.iter().flat_map(|v| v.to_le_bytes()).collect();
            write(&bytes)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if hlen > body.len() {
            return Err(bad("truncated header"));
        }
        let header: CheckpointHeader =
            serde_json::from_slice(&body[..hlen]).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(Error::Checkpoint(format!(
                "schema version {} unsupported (expected {SCHEMA_VERSION})",
                header.schema_version
            )));
        }
        let mut data = body[hlen..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        if (body.len() - hlen) % 4 != 0 {
            return Err(bad("payload is not a whole number of f32 values"));
        }
        let mut take = |n: usize| -> Result<Vec<f32>> {
            let v: Vec<f32> = data.by_ref().take(n).collect();
            if v.len() == n {
                Ok(v)
            } else {
                Err(bad("truncated weights"))
            }
        };
        let weights = header
            .param_lengths
            .iter()
            .map(|&n| take(n))
            .collect::<Result<Vec<_>>>()?;
        let optimizer = if header.has_optimizer {
            let mut net = Network::new(&header.model, header.input_size, 0);
            let trainable: Vec<usize> = net
                .params_mut()
                .iter()
                .filter(|p| p.kind != ParamKind::Buffer)
                .map(|p| p.value.len())
                .collect();
            Some(trainable.into_iter().map(&mut take).collect::<Result<Vec<_>>>()?)
        } else {
            None
        };
        if data.next().is_some() {
            return Err(bad("trailing data"));
        }
        Ok(Self {
            header,
            weights,
            optimizer,
        })
    }

    /// Instantiates the stored network.
    pub fn build_network(&self) -> Result<Network> {
        let mut net = Network::new(&self.header.model, self.header.input_size, 0);
        net.load_weights(&self.weights)?;
        Ok(net)
    }
}

impl Network {
    /// Overwrites all parameters, in module order.
    pub fn load_weights(&mut self, weights: &[Vec<f32>]) -> Result<()> {
        let mut params = Vec::new();
        self.collect_params(&mut params);
        if params.len() != weights.len() {
            return Err(Error::Checkpoint(format!(
                "{} tensors stored, network has {}",
                weights.len(),
                params.len()
            )));
        }
        for (i, (p, w)) in params.into_iter().zip(weights).enumerate() {
            if p.value.len() != w.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {i}: {} values stored, network expects {}",
                    w.len(),
                    p.value.len()
                )));
            }
            p.value.copy_from_slice(w);
        }
        Ok(())
    }
}
