//! Weight bundles and the `asdplanner-weights v1` container.
//!
//! Layout:
//!
//! ```text
//! asdplanner-weights v1\n
//! {"kind":"riskmap2","map_size":16,...,"tensors":[{"name":..,"shape":..,"offset":..,"length":..}]}\n
//! <payload: little-endian f32 tensors; offsets and lengths in bytes, relative to payload start>
//! ```
//!
//! Tensor names follow the PyTorch `nn.TransformerEncoderLayer` parameter
//! names so a trainer can export its state dict without renaming. Loading
//! is eager: every tensor the architecture needs must be present with the
//! right shape and finite values, and nothing else may be in the file.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::InferenceError;
use crate::rng::{self, Stream};

pub const WEIGHTS_MAGIC: &str = "asdplanner-weights v1";

/// Output scale of the state model's squashed head.
pub const DEFAULT_STATE_SCALE: f64 = 252.0;

pub const DEFAULT_STATE_MAX_SIZE: usize = 64;

pub const DEFAULT_LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Riskmap2,
    State,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Riskmap2 => "riskmap2",
            ModelKind::State => "state",
        }
    }
}

/// Number of heuristic classes for an `n x n` map: every Manhattan distance
/// `0..=2(n-1)` plus the penalty.
pub fn riskmap2_classes(map_size: usize, penalty: u32) -> usize {
    2 * (map_size - 1) + penalty as usize + 1
}

/// Architecture fields of the header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub kind: ModelKind,
    /// Riskmap2: the one map side length the model accepts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map_size: Option<usize>,
    /// State: maps are padded up to this side length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_size: Option<usize>,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    pub penalty: u32,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
}

fn default_eps() -> f64 {
    DEFAULT_LAYER_NORM_EPS
}

impl Architecture {
    /// Riskmap2 architecture with the class count implied by `penalty`.
    pub fn riskmap2(map_size: usize, penalty: u32, d_model: usize, layers: usize, heads: usize, ffn: usize) -> Self {
        Self {
            kind: ModelKind::Riskmap2,
            map_size: Some(map_size),
            max_size: None,
            d_model,
            layers,
            heads,
            ffn,
            classes: Some(riskmap2_classes(map_size, penalty)),
            scale: None,
            penalty,
            layer_norm_eps: DEFAULT_LAYER_NORM_EPS,
        }
    }

    pub fn state(max_size: usize, d_model: usize, layers: usize, heads: usize, ffn: usize) -> Self {
        Self {
            kind: ModelKind::State,
            map_size: None,
            max_size: Some(max_size),
            d_model,
            layers,
            heads,
            ffn,
            classes: None,
            scale: Some(DEFAULT_STATE_SCALE),
            penalty: 0,
            layer_norm_eps: DEFAULT_LAYER_NORM_EPS,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Side length the model works at: `map_size` or `max_size`.
    pub fn side(&self) -> usize {
        match self.kind {
            ModelKind::Riskmap2 => self.map_size.unwrap_or(0),
            ModelKind::State => self.max_size.unwrap_or(0),
        }
    }

    /// Encoder sequence length.
    pub fn sequence_len(&self) -> usize {
        let grid = self.side() * self.side();
        match self.kind {
            ModelKind::Riskmap2 => grid,
            ModelKind::State => grid + 1,
        }
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        let bad = |msg: String| Err(InferenceError::InvalidHeader(msg));
        if self.d_model == 0 || self.heads == 0 || self.ffn == 0 {
            return bad("d_model, heads and ffn must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return bad(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            ));
        }
        if !(self.layer_norm_eps > 0.0 && self.layer_norm_eps.is_finite()) {
            return bad(format!("layer_norm_eps {} must be positive", self.layer_norm_eps));
        }
        match self.kind {
            ModelKind::Riskmap2 => {
                if !self.map_size.is_some_and(|n| n >= 1) {
                    return bad("riskmap2 header needs map_size >= 1".into());
                }
                if !self.classes.is_some_and(|c| c >= 1) {
                    return bad("riskmap2 header needs classes >= 1".into());
                }
            }
            ModelKind::State => {
                if !self.max_size.is_some_and(|n| n >= 1) {
                    return bad("state header needs max_size >= 1".into());
                }
                if !self.scale.is_some_and(|s| s > 0.0 && s.is_finite()) {
                    return bad("state header needs a positive scale".into());
                }
            }
        }
        Ok(())
    }

    /// Every tensor the forward pass reads, with its shape, in file order.
    pub fn expected_tensors(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.d_model;
        let mut out: Vec<(String, Vec<usize>)> = Vec::new();
        let mut push = |name: &str, shape: &[usize]| out.push((name.to_string(), shape.to_vec()));
        match self.kind {
            ModelKind::Riskmap2 => {
                let n2 = self.side() * self.side();
                push("start_embedding.weight", &[n2, d]);
                push("dest_embedding.weight", &[n2, d]);
                push("risk_embedding.weight", &[d, 1]);
                push("risk_embedding.bias", &[d]);
            }
            ModelKind::State => {
                push("risk_embedding.weight", &[d, 1]);
                push("risk_embedding.bias", &[d]);
                push("current_embedding.weight", &[d, 3]);
                push("current_embedding.bias", &[d]);
                push("dest_embedding.weight", &[d, 2]);
                push("dest_embedding.bias", &[d]);
            }
        }
        for l in 0..self.layers {
            let p = format!("encoder.layers.{l}.");
            push(&format!("{p}self_attn.in_proj_weight"), &[3 * d, d]);
            push(&format!("{p}self_attn.in_proj_bias"), &[3 * d]);
            push(&format!("{p}self_attn.out_proj.weight"), &[d, d]);
            push(&format!("{p}self_attn.out_proj.bias"), &[d]);
            push(&format!("{p}linear1.weight"), &[self.ffn, d]);
            push(&format!("{p}linear1.bias"), &[self.ffn]);
            push(&format!("{p}linear2.weight"), &[d, self.ffn]);
            push(&format!("{p}linear2.bias"), &[d]);
            push(&format!("{p}norm1.weight"), &[d]);
            push(&format!("{p}norm1.bias"), &[d]);
            push(&format!("{p}norm2.weight"), &[d]);
            push(&format!("{p}norm2.bias"), &[d]);
        }
        let out_dim = match self.kind {
            ModelKind::Riskmap2 => self.classes.unwrap_or(0),
            ModelKind::State => 1,
        };
        push("head.weight", &[out_dim, d]);
        push("head.bias", &[out_dim]);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    length: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    #[serde(flatten)]
    arch: Architecture,
    tensors: Vec<TensorEntry>,
}

/// Immutable, validated weight bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    arch: Architecture,
    tensors: Vec<Tensor>,
}

impl ModelWeights {
    /// Validates `tensors` against `arch` and reorders them into file order.
    pub fn new(arch: Architecture, tensors: Vec<Tensor>) -> Result<Self, InferenceError> {
        arch.validate()?;
        let mut pool = tensors;
        let mut ordered = Vec::with_capacity(pool.len());
        for (name, shape) in arch.expected_tensors() {
            let pos = pool
                .iter()
                .position(|t| t.name == name)
                .ok_or_else(|| InferenceError::MissingTensor(name.clone()))?;
            let t = pool.swap_remove(pos);
            if t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(InferenceError::ShapeMismatch {
                    name,
                    expected: shape,
                    found: t.shape,
                });
            }
            if let Some(index) = t.data.iter().position(|v| !v.is_finite()) {
                return Err(InferenceError::NonFinite { name, index });
            }
            ordered.push(t);
        }
        if let Some(extra) = pool.first() {
            return Err(InferenceError::UnexpectedTensor(extra.name.clone()));
        }
        Ok(Self { arch, tensors: ordered })
    }

    /// Deterministic Xavier-uniform initialisation with small random biases
    /// and unit layer-norm gains.
    pub fn random(arch: Architecture, seed: u64) -> Result<Self, InferenceError> {
        arch.validate()?;
        let mut rng = rng::rng_for(seed, Stream::Weights, 0);
        let tensors = arch
            .expected_tensors()
            .into_iter()
            .map(|(name, shape)| {
                let len = shape.iter().product();
                let data = if name.contains("norm") && name.ends_with(".weight") {
                    vec![1.0; len]
                } else {
                    let limit = match shape.as_slice() {
                        [rows, cols] => (6.0 / (rows + cols) as f64).sqrt(),
                        _ => 0.1,
                    };
                    (0..len).map(|_| rng.random_range(-limit..limit) as f32).collect()
                };
                Tensor { name, shape, data }
            })
            .collect();
        Self::new(arch, tensors)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn kind(&self) -> ModelKind {
        self.arch.kind
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor, InferenceError> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| InferenceError::MissingTensor(name.to_string()))
    }

    pub(crate) fn data(&self, name: &str) -> &[f32] {
        // Presence was checked at construction.
        &self
            .tensor(name)
            .unwrap_or_else(|_| panic!("validated bundle lacks {name}"))
            .data
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<(), InferenceError> {
        let mut offset = 0u64;
        let entries = self
            .tensors
            .iter()
            .map(|t| {
                let length = 4 * t.data.len() as u64;
                let e = TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    offset,
                    length,
                };
                offset += length;
                e
            })
            .collect();
        let header = Header {
            arch: self.arch.clone(),
            tensors: entries,
        };
        writeln!(out, "{WEIGHTS_MAGIC}")?;
        serde_json::to_writer(&mut out, &header).map_err(|e| InferenceError::Format(e.to_string()))?;
        out.write_all(b"\n")?;
        for t in &self.tensors {
            for v in &t.data {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(mut input: R) -> Result<Self, InferenceError> {
        let mut magic = String::new();
        input.read_line(&mut magic)?;
        if magic.trim_end_matches(['\n', '\r']) != WEIGHTS_MAGIC {
            return Err(InferenceError::Format(format!(
                "expected `{WEIGHTS_MAGIC}`, found {:?}",
                magic.trim_end()
            )));
        }
        let mut header_line = String::new();
        input.read_line(&mut header_line)?;
        let raw: serde_json::Value =
            serde_json::from_str(&header_line).map_err(|e| InferenceError::Format(format!("header: {e}")))?;
        match raw.get("kind").and_then(|k| k.as_str()) {
            Some("riskmap2" | "state") => {}
            Some(other) => return Err(InferenceError::UnknownKind(other.to_string())),
            None => return Err(InferenceError::Format("header has no `kind`".into())),
        }
        let header: Header = serde_json::from_value(raw).map_err(|e| InferenceError::Format(format!("header: {e}")))?;

        let mut payload = Vec::new();
        input.read_to_end(&mut payload)?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let end = entry.offset.checked_add(entry.length);
            let in_range = end.is_some_and(|e| e <= payload.len() as u64);
            let elems: usize = entry.shape.iter().product();
            if !in_range || entry.length != 4 * elems as u64 {
                return Err(InferenceError::BadExtent {
                    name: entry.name,
                    offset: entry.offset,
                    length: entry.length,
                    payload: payload.len() as u64,
                });
            }
            let bytes = &payload[entry.offset as usize..(entry.offset + entry.length) as usize];
            let data = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            tensors.push(Tensor {
                name: entry.name,
                shape: entry.shape,
                data,
            });
        }
        Self::new(header.arch, tensors)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), InferenceError> {
        self.write(io::BufWriter::new(fs::File::create(path)?))
    }
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelWeights, InferenceError> {
    ModelWeights::read(BufReader::new(fs::File::open(path)?))
}
