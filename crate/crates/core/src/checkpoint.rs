//! Model checkpoints.
//!
//! Layout: the line `SPLTCKPT1`, a little-endian `u64` header length, a TOML
//! header (layers, split index, seed, loss config, block shapes), then every
//! parameter block as little-endian `f64` in layer order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::nn::{LayerSpec, SplitModel};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8] = b"SPLTCKPT1\n";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub layers: Vec<LayerSpec>,
    pub split_index: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub blocks: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: SplitModel,
    pub loss: LossConfig,
}

impl Checkpoint {
    pub fn new(model: SplitModel, loss: LossConfig) -> Self {
        Checkpoint { model, loss }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let params = self.model.parameters(self.model.full_range());
        let header = CheckpointHeader {
            layers: self.model.specs().to_vec(),
            split_index: self.model.split_index(),
            seed: self.model.seed(),
            loss: self.loss,
            blocks: params.iter().map(|p| p.shape().to_vec()).collect(),
        };
        let text = toml::to_string(&header).map_err(|e| Error::Schema(e.to_string()))?;
        let mut out = CHECKPOINT_MAGIC.to_vec();
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        for p in params {
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if !bytes.starts_with(CHECKPOINT_MAGIC) {
            return Err(Error::Parse {
                offset: 0,
                message: "missing SPLTCKPT1 magic".into(),
            });
        }
        let mut pos = CHECKPOINT_MAGIC.len();
        let len_bytes = bytes.get(pos..pos + 8).ok_or(Error::Parse {
            offset: pos as u64,
            message: "truncated header length".into(),
        })?;
        let len = u64::from_le_bytes(len_bytes.try_into().expect("8 bytes")) as usize;
        pos += 8;
        let text = bytes
            .get(pos..pos.saturating_add(len))
            .ok_or(Error::Parse {
                offset: pos as u64,
                message: format!("header of {len} bytes runs past the end"),
            })?;
        let text = std::str::from_utf8(text).map_err(|e| Error::Parse {
            offset: (pos + e.valid_up_to()) as u64,
            message: "header is not UTF-8".into(),
        })?;
        let header: CheckpointHeader = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        pos += len;
        let mut params = Vec::with_capacity(header.blocks.len());
        for shape in &header.blocks {
            let n: usize = shape.iter().product();
            let raw = bytes.get(pos..pos + 8 * n).ok_or(Error::Parse {
                offset: pos as u64,
                message: format!("parameter block {shape:?} truncated"),
            })?;
            let data = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            params.push(Tensor::new(shape.clone(), data)?);
            pos += 8 * n;
        }
        if pos != bytes.len() {
            return Err(Error::Parse {
                offset: pos as u64,
                message: format!("{} trailing bytes", bytes.len() - pos),
            });
        }
        let model = SplitModel::from_parameters(&header.layers, header.split_index, header.seed, params)?;
        Ok(Checkpoint {
            model,
            loss: header.loss,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Activation;
    use crate::nn::{build_mlp, mlp_specs};

    fn sample() -> Checkpoint {
        let (specs, split) = mlp_specs(5, &[7, 3], 2, Activation::LeakyRelu { slope: 0.01 }, true);
        Checkpoint::new(build_mlp(&specs, split, 11).unwrap(), LossConfig::pe(0.5))
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = c.encode().unwrap();
        assert!(bytes.starts_with(b"SPLTCKPT1"));
        assert_eq!(Checkpoint::decode(&bytes).unwrap(), c);
    }

    #[test]
    fn truncation_and_magic_are_detected() {
        let bytes = sample().encode().unwrap();
        assert!(matches!(
            Checkpoint::decode(&bytes[..bytes.len() - 5]),
            Err(Error::Parse { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::decode(&bad), Err(Error::Parse { offset: 0, .. })));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let c = sample();
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
    }
}
