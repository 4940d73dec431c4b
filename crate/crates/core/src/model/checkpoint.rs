//! Checkpoint files: a TOML header, a `---` line, then named little-endian
//! `f32` arrays (parameters first, optimizer moments after).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::train::adam::{Adam, AdamConfig};
use crate::traj::Normalization;

const MAGIC: &str = "trajmask-checkpoint";
const VERSION: u32 = 1;
const SEPARATOR: &[u8] = b"\n---\n";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub normalization: Normalization,
    /// Training regime that produced the weights, e.g. `random-mask` or `finetune:RC`.
    pub regime: String,
    pub seed: u64,
    pub optimizer: Option<Adam>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    config_hash: String,
    payload_sha256: String,
    regime: String,
    seed: u64,
    layer_norm: String,
    optimizer_step: Option<u64>,
    adam: Option<AdamConfig>,
    config: ModelConfig,
    normalization: Normalization,
    arrays: Vec<ArrayInfo>,
}

#[derive(Serialize, Deserialize, PartialEq, Debug)]
#[serde(deny_unknown_fields)]
struct ArrayInfo {
    name: String,
    rows: usize,
    cols: usize,
}

/// Stable hash of a model configuration.
pub fn config_hash(config: &ModelConfig) -> String {
    let text = toml::to_string(config).expect("model config serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl Checkpoint {
    pub fn new(model: Model<f32>, normalization: Normalization, regime: impl Into<String>, seed: u64) -> Self {
        Self {
            model,
            normalization,
            regime: regime.into(),
            seed,
            optimizer: None,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let entries = self.model.layout().entries();
        let mut arrays: Vec<ArrayInfo> = entries
            .iter()
            .map(|e| ArrayInfo {
                name: e.name.clone(),
                rows: e.rows,
                cols: e.cols,
            })
            .collect();
        let mut payload = Vec::with_capacity(4 * self.model.params.len() * 3);
        for v in &self.model.params {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(opt) = &self.optimizer {
            for (prefix, values) in [("adam.m", &opt.m), ("adam.v", &opt.v)] {
                for e in entries {
                    arrays.push(ArrayInfo {
                        name: format!("{prefix}.{}", e.name),
                        rows: e.rows,
                        cols: e.cols,
                    });
                }
                for v in values {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let header = Header {
            format: MAGIC.into(),
            version: VERSION,
            config_hash: config_hash(&self.model.config),
            payload_sha256: hex::encode(Sha256::digest(&payload)),
            regime: self.regime.clone(),
            seed: self.seed,
            layer_norm: "pre".into(),
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
            adam: self.optimizer.as_ref().map(|o| o.config),
            config: self.model.config.clone(),
            normalization: self.normalization.clone(),
            arrays,
        };
        let mut out = toml::to_string(&header).expect("header serializes").into_bytes();
        out.extend_from_slice(SEPARATOR);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let split = bytes
            .windows(SEPARATOR.len())
            .position(|w| w == SEPARATOR)
            .ok_or_else(|| Error::Checkpoint("missing header separator".into()))?;
        let text = std::str::from_utf8(&bytes[..split])
            .map_err(|_| Error::Checkpoint("header is not valid UTF-8".into()))?;
        let header: Header =
            toml::from_str(text).map_err(|e| Error::Checkpoint(format!("unreadable header: {e}")))?;
        if header.format != MAGIC || header.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} version {}",
                header.format, header.version
            )));
        }
        if config_hash(&header.config) != header.config_hash {
            return Err(Error::Checkpoint("config hash does not match the stored config".into()));
        }
        if header.layer_norm != "pre" {
            return Err(Error::Checkpoint(format!("unsupported layer norm placement {}", header.layer_norm)));
        }
        let payload = &bytes[split + SEPARATOR.len()..];
        if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
            return Err(Error::Checkpoint("payload checksum mismatch".into()));
        }
        if payload.len() % 4 != 0 {
            return Err(Error::Checkpoint("payload is not a whole number of f32 values".into()));
        }
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();

        let probe = Model::<f32>::init(header.config.clone(), 0)?;
        let expected: Vec<ArrayInfo> = probe
            .layout()
            .entries()
            .iter()
            .map(|e| ArrayInfo {
                name: e.name.clone(),
                rows: e.rows,
                cols: e.cols,
            })
            .collect();
        let n = probe.num_params();
        let with_opt = header.optimizer_step.is_some();
        let arrays_ok = header.arrays.len() == expected.len() * if with_opt { 3 } else { 1 }
            && header.arrays[..expected.len()] == expected[..];
        if !arrays_ok || values.len() != n * if with_opt { 3 } else { 1 } {
            return Err(Error::Checkpoint("stored arrays do not match the architecture".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint("non-finite values in checkpoint".into()));
        }
        let model = Model::from_params(header.config, values[..n].to_vec())?;
        let optimizer = match header.optimizer_step {
            Some(step) => Some(Adam {
                config: header.adam.unwrap_or_default(),
                step,
                m: values[n..2 * n].to_vec(),
                v: values[2 * n..].to_vec(),
            }),
            None => None,
        };
        Ok(Self {
            model,
            normalization: header.normalization,
            regime: header.regime,
            seed: header.seed,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads and refuses a checkpoint whose configuration differs from `expected`.
    pub fn load_expecting(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Self> {
        let ck = Self::load(path)?;
        if config_hash(ck.config()) != config_hash(expected) {
            return Err(Error::Checkpoint(format!(
                "checkpoint config ({} k={} embed={}) differs from the requested config ({} k={} embed={})",
                ck.config().arch,
                ck.config().k,
                ck.config().embed_dim,
                expected.arch,
                expected.k,
                expected.embed_dim
            )));
        }
        Ok(ck)
    }
}
