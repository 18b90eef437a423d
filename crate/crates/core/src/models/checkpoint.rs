//! Model checkpoints: a JSON header describing the architecture followed by
//! the binary parameter block.
//!
//! ```text
//! magic b"CKPT"   header_len u32 (LE)   header (JSON)   ParamVector bytes
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dual::DualEncoderSpec;
use super::layers::EncoderSpec;
use crate::error::{Error, Result};
use crate::numerics::ParamVector;

const MAGIC: &[u8; 4] = b"CKPT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CheckpointHeader {
    DualEncoder { spec: DualEncoderSpec },
    VisionClassifier { encoder: EncoderSpec, num_classes: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamVector,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&self.header)?;
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        self.params.write_to(&mut w)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut header)?;
        let header = serde_json::from_slice(&header)?;
        let params = ParamVector::read_from(r)?;
        Ok(Self { header, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Activation, TrainableModel, VisionClassifier};

    #[test]
    fn roundtrip_through_file() {
        let encoder = EncoderSpec {
            input_dim: 3,
            hidden_dims: vec![4],
            output_dim: 2,
            activation: Activation::Relu,
            seed: 11,
        };
        let model = VisionClassifier::new(&encoder, 4, 12).unwrap();
        let ckpt = Checkpoint {
            header: CheckpointHeader::VisionClassifier { encoder, num_classes: 4 },
            params: model.params().clone(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        let mut a = Vec::new();
        let mut b = Vec::new();
        ckpt.write_to(&mut a).unwrap();
        back.write_to(&mut b).unwrap();
        assert_eq!(a, b);
    }
}
