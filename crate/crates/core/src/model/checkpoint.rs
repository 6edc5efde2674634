//! Versioned binary checkpoint container.
//!
//! Layout: `AAECKPT\0` magic, little-endian `u32` version, `u64` header length,
//! JSON header (configs, epoch, rng states, tensor index), raw little-endian
//! `f64` payload, and a trailing SHA-256 of everything before it.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::{Model, ModelConfig};
use super::params::{ParamSet, ParamSpec};
use super::ModelError;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"AAECKPT\0";
const DIGEST_LEN: usize = 32;

/// Restorable position of a ChaCha8 stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Decimal string; JSON numbers cannot carry a `u128`.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, ModelError> {
        use rand::SeedableRng;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| ModelError::CorruptCheckpoint(format!("bad rng word position {:?}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    group: String,
    #[serde(flatten)]
    spec: ParamSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    model_config: ModelConfig,
    config_echo: serde_json::Value,
    epoch: usize,
    rng_states: BTreeMap<String, RngState>,
    metadata: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    /// Free-form echo of the full run configuration.
    pub config_echo: serde_json::Value,
    pub epoch: usize,
    pub rng_states: BTreeMap<String, RngState>,
    pub metadata: serde_json::Value,
    pub encoder: ParamSet,
    pub decoder: ParamSet,
    pub discriminator: ParamSet,
}

const GROUPS: [&str; 3] = ["encoder", "decoder", "discriminator"];

impl Checkpoint {
    pub fn from_model(model: &Model, epoch: usize) -> Self {
        Self {
            model_config: model.config().clone(),
            config_echo: serde_json::Value::Null,
            epoch,
            rng_states: BTreeMap::new(),
            metadata: serde_json::Value::Null,
            encoder: model.encoder.params().clone(),
            decoder: model.decoder.params().clone(),
            discriminator: model.discriminator.params().clone(),
        }
    }

    fn groups(&self) -> [&ParamSet; 3] {
        [&self.encoder, &self.decoder, &self.discriminator]
    }

    /// Rebuilds a model from the stored config and copies the stored arrays in.
    pub fn to_model(&self) -> Result<Model, ModelError> {
        let config = ModelConfig {
            pretrained_init: None,
            ..self.model_config.clone()
        };
        let mut model = Model::new(config)?;
        self.apply_to(&mut model)?;
        Ok(model)
    }

    /// Overwrites the parameters of `model`; every array must match by name and shape.
    pub fn apply_to(&self, model: &mut Model) -> Result<(), ModelError> {
        for ((name, source), target) in GROUPS.iter().zip(self.groups()).zip(model.groups_mut()) {
            if target.specs().len() != source.specs().len()
                || target.specs().iter().zip(source.specs()).any(|(a, b)| a.name != b.name || a.shape != b.shape)
            {
                return Err(ModelError::CheckpointMismatch(format!(
                    "{name} parameters do not match the model layout"
                )));
            }
            target.values_mut().copy_from_slice(source.values());
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors = Vec::new();
        for (group, set) in GROUPS.iter().zip(self.groups()) {
            for spec in set.specs() {
                tensors.push(TensorEntry {
                    group: (*group).to_string(),
                    spec: spec.clone(),
                });
            }
        }
        let header = Header {
            model_config: self.model_config.clone(),
            config_echo: self.config_echo.clone(),
            epoch: self.epoch,
            rng_states: self.rng_states.clone(),
            metadata: self.metadata.clone(),
            tensors,
        };
        let header = serde_json::to_vec(&header).expect("header is serializable");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for set in self.groups() {
            for v in set.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let corrupt = |m: &str| ModelError::CorruptCheckpoint(m.to_string());
        if bytes.len() < MAGIC.len() + 12 + DIGEST_LEN || &bytes[..8] != MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::CorruptCheckpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| corrupt("header length out of range"))?;
        let header: Header = serde_json::from_slice(&body[20..header_end])
            .map_err(|e| ModelError::CorruptCheckpoint(format!("bad header: {e}")))?;
        let payload = &body[header_end..];
        if payload.len() % 8 != 0 {
            return Err(corrupt("payload is not a whole number of f64 values"));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();

        let mut sets: [ParamSet; 3] = Default::default();
        let mut cursor = 0;
        for (gi, group) in GROUPS.iter().enumerate() {
            for entry in header.tensors.iter().filter(|t| t.group == *group) {
                let spec = &entry.spec;
                if spec.len != spec.shape.iter().product::<usize>() || cursor + spec.len > values.len() {
                    return Err(ModelError::CorruptCheckpoint(format!("tensor {} is truncated", spec.name)));
                }
                let idx = sets[gi].add(&spec.name, &spec.shape, spec.fan_in);
                let range = sets[gi].range(idx);
                sets[gi].values_mut()[range].copy_from_slice(&values[cursor..cursor + spec.len]);
                cursor += spec.len;
            }
        }
        if cursor != values.len() {
            return Err(corrupt("payload has trailing values"));
        }
        let [encoder, decoder, discriminator] = sets;
        Ok(Self {
            model_config: header.model_config,
            config_echo: header.config_echo,
            epoch: header.epoch,
            rng_states: header.rng_states,
            metadata: header.metadata,
            encoder,
            decoder,
            discriminator,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_bytes()).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = fs::read(path).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
