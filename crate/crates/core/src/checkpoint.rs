//! PDAC checkpoints.
//!
//! ```text
//! "PDAC" | u32 version (=1) | u32 header length h | h bytes of JSON header
//! f32 payloads, one per parameter in header order, row-major, little-endian
//! ```
//!
//! Parameters are kept at single precision during training, so a saved model
//! reloads with bitwise-identical weights and predictions.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Ablation, Model, ModelConfig};
use crate::nn::ParamStore;
use crate::scene::FeatureDims;
use crate::training::TrainConfig;

pub const MAGIC: &[u8; 4] = b"PDAC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
}

/// Position of the training RNG, enough to resume its stream exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    /// 32 seed bytes as hex.
    pub seed: String,
    pub stream: u64,
    /// Decimal, since it does not fit in a JSON number.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = |what: &str| Error::Checkpoint(format!("rng {what} is malformed"));
        if self.seed.len() != 64 {
            return Err(bad("seed"));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad("seed"))?;
        }
        let word_pos: u128 = self.word_pos.parse().map_err(|_| bad("word position"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(word_pos);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub model: ModelConfig,
    pub dims: FeatureDims,
    pub ablation: Ablation,
    pub train: Option<TrainConfig>,
    pub epoch: usize,
    pub rng: Option<RngState>,
    pub params: Vec<ParamEntry>,
}

/// A trained model plus the bookkeeping needed to reproduce it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub train: Option<TrainConfig>,
    pub epoch: usize,
    pub rng: Option<RngState>,
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Self {
            model,
            train: None,
            epoch: 0,
            rng: None,
        }
    }

    pub fn header(&self) -> Header {
        Header {
            model: self.model.config.clone(),
            dims: self.model.dims,
            ablation: self.model.ablation,
            train: self.train.clone(),
            epoch: self.epoch,
            rng: self.rng.clone(),
            params: self
                .model
                .store
                .iter()
                .map(|p| ParamEntry {
                    name: p.name.clone(),
                    shape: p.shape(),
                })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header())?;
        let mut buf = Vec::with_capacity(12 + header.len() + 4 * self.model.store.num_values());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header);
        for p in self.model.store.iter() {
            for &v in p.value.iter() {
                let x = v as f32;
                if !x.is_finite() {
                    return Err(Error::Checkpoint(format!(
                        "parameter {} holds a non-finite value",
                        p.name
                    )));
                }
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let short = || Error::Checkpoint("file is truncated".into());
        if bytes.len() < 12 {
            return Err(short());
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes.get(12..12 + h).ok_or_else(short)?;
        let header: Header = serde_json::from_slice(body).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let mut model = Model::new(header.model.clone(), header.dims, header.ablation, 0)
            .map_err(|e| Error::Checkpoint(format!("header config: {e}")))?;

        let mut pos = 12 + h;
        let mut store = ParamStore::new();
        for entry in &header.params {
            let n = entry.shape[0]
                .checked_mul(entry.shape[1])
                .ok_or_else(|| Error::Checkpoint(format!("{}: shape overflows", entry.name)))?;
            let raw = bytes.get(pos..pos + 4 * n).ok_or_else(short)?;
            pos += 4 * n;
            let values: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            let value = Array2::from_shape_vec((entry.shape[0], entry.shape[1]), values)
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", entry.name)))?;
            store.insert(entry.name.clone(), value);
        }
        if pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - pos)));
        }
        model.store.load_values(&store)?;
        Ok(Self {
            model,
            train: header.train,
            epoch: header.epoch,
            rng: header.rng,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::load(path.display().to_string(), e.to_string()))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synthetic_dims;
    use rand::{RngCore, SeedableRng};

    fn tiny() -> Model {
        let config = ModelConfig {
            d_e: 4,
            d_gd: 4,
            d_int: 3,
            d_dyn: 2,
            gat_hidden: 4,
            ..ModelConfig::default()
        };
        Model::new(config, synthetic_dims(), Ablation::default(), 5).unwrap()
    }

    #[test]
    fn bytes_round_trip() {
        let ck = Checkpoint {
            epoch: 7,
            ..Checkpoint::new(tiny())
        };
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.epoch, 7);
        for (a, b) in ck.model.store.iter().zip(back.model.store.iter()) {
            assert_eq!(a.value, b.value);
        }
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rng_resumes_mid_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        rng.next_u64();
        let state = RngState::capture(&rng);
        let mut back = state.restore().unwrap();
        assert_eq!(back.next_u64(), rng.next_u64());
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = Checkpoint::new(tiny()).to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }
}
