//! Checkpoint directories: a JSON manifest plus one binary file per tensor.
//!
//! Tensor file layout: magic `FFT1`, `u32` rank, `u64` dims, then
//! little-endian `f32` values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldWeights;
use crate::fsutil::{create_dir, write_json};
use crate::nn::Parameters;
use crate::optim::VecAdam;
use crate::train::{CodeBank, TrainConfig, TrainState};

pub const CHECKPOINT_SCHEMA: u32 = 1;
pub const CHECKPOINT_KIND: &str = "facefield-checkpoint";
const MAGIC: &[u8; 4] = b"FFT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub file: PathBuf,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    /// Hex-encoded 32-byte seed.
    pub seed: String,
    pub stream: u64,
    /// Decimal string; the position is a 128-bit counter.
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

    pub fn restore(&self, path: &Path) -> Result<ChaCha8Rng> {
        let bad = |why: &str| Error::schema(path, format!("rng state: {why}"));
        if self.seed.len() != 64 {
            return Err(bad("seed must be 64 hex digits"));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad("seed is not hex"))?;
        }
        let word_pos: u128 = self.word_pos.parse().map_err(|_| bad("word position is not an integer"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(word_pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub schema: u32,
    pub kind: String,
    pub step: u64,
    pub config: TrainConfig,
    pub rng: RngState,
    pub expression_steps: Vec<u64>,
    pub tensors: Vec<TensorEntry>,
}

fn file_name(name: &str) -> PathBuf {
    PathBuf::from("tensors").join(format!("{name}.bin"))
}

pub fn encode_tensor(shape: &[usize], data: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * shape.len() + 4 * data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for d in shape {
        out.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let bad = |why: String| Error::schema(path, why);
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("missing tensor header".into()));
    }
    let rank = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let header = 8 + 8 * rank;
    if bytes.len() < header {
        return Err(bad(format!("truncated shape header for rank {rank}")));
    }
    let shape: Vec<usize> = (0..rank)
        .map(|i| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().expect("8 bytes")) as usize)
        .collect();
    let count = shape
        .iter()
        .try_fold(1usize, |a, d| a.checked_mul(*d))
        .ok_or_else(|| bad("shape overflows".into()))?;
    let expected = count
        .checked_mul(4)
        .and_then(|b| b.checked_add(header))
        .ok_or_else(|| bad("shape overflows".into()))?;
    if bytes.len() != expected {
        return Err(bad(format!("expected {expected} bytes for shape {shape:?}, found {}", bytes.len())));
    }
    let data = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((shape, data))
}

fn matrix(rows: &[Vec<f32>]) -> (Vec<usize>, Vec<f32>) {
    let cols = rows.first().map_or(0, Vec::len);
    (vec![rows.len(), cols], rows.iter().flatten().copied().collect())
}

/// Every named tensor of a training state, in a fixed order.
fn state_tensors(state: &TrainState) -> Vec<(String, Vec<usize>, Vec<f32>)> {
    let mut out = Vec::new();
    for (prefix, w) in [("weights", &state.weights), ("optim.m", &state.adam_m), ("optim.v", &state.adam_v)] {
        for t in w.tensors() {
            out.push((format!("{prefix}.{}", t.name), t.shape.clone(), t.data.to_vec()));
        }
    }
    let b = &state.bank;
    let em: Vec<Vec<f32>> = b.expression_optim.iter().map(|o| o.m.clone()).collect();
    let ev: Vec<Vec<f32>> = b.expression_optim.iter().map(|o| o.v.clone()).collect();
    for (name, rows) in [
        ("bank.shape", &b.shape),
        ("bank.appearance", &b.appearance),
        ("bank.expression", &b.expression),
        ("bank.expression_m", &em),
        ("bank.expression_v", &ev),
    ] {
        let (shape, data) = matrix(rows);
        out.push((name.to_string(), shape, data));
    }
    out
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io("writing tensor", path, e))
}

pub fn export_checkpoint(state: &TrainState, dir: &Path) -> Result<()> {
    create_dir(&dir.join("tensors"))?;
    let mut entries = Vec::new();
    for (name, shape, data) in state_tensors(state) {
        let file = file_name(&name);
        write_bytes(&dir.join(&file), &encode_tensor(&shape, &data))?;
        entries.push(TensorEntry { name, file, shape });
    }
    let manifest = CheckpointManifest {
        schema: CHECKPOINT_SCHEMA,
        kind: CHECKPOINT_KIND.to_string(),
        step: state.step,
        config: state.config.clone(),
        rng: RngState::capture(&state.rng),
        expression_steps: state.bank.expression_optim.iter().map(|o| o.t).collect(),
        tensors: entries,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io("reading checkpoint manifest", &path, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::schema(&path, e.to_string()))?;
    let schema = raw.get("schema").and_then(|v| v.as_u64());
    if schema != Some(CHECKPOINT_SCHEMA as u64) {
        return Err(Error::schema(
            &path,
            format!("unsupported checkpoint schema {schema:?}, expected {CHECKPOINT_SCHEMA}"),
        ));
    }
    let manifest: CheckpointManifest = serde_json::from_value(raw).map_err(|e| Error::schema(&path, e.to_string()))?;
    if manifest.kind != CHECKPOINT_KIND {
        return Err(Error::schema(&path, format!("unexpected kind {:?}", manifest.kind)));
    }
    Ok(manifest)
}

/// Reads and validates every tensor listed in the manifest.
fn read_tensors(dir: &Path, manifest: &CheckpointManifest) -> Result<BTreeMap<String, (Vec<usize>, Vec<f32>)>> {
    let mut out = BTreeMap::new();
    for e in &manifest.tensors {
        let path = dir.join(&e.file);
        let bytes = std::fs::read(&path).map_err(|err| Error::io("reading tensor", &path, err))?;
        let (shape, data) = decode_tensor(&bytes, &path)?;
        if shape != e.shape {
            return Err(Error::schema(&path, format!("shape {shape:?} disagrees with manifest {:?}", e.shape)));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::schema(&path, "non-finite value"));
        }
        if out.insert(e.name.clone(), (shape, data)).is_some() {
            return Err(Error::schema(dir.join("manifest.json"), format!("duplicate tensor {}", e.name)));
        }
    }
    Ok(out)
}

fn take(
    tensors: &mut BTreeMap<String, (Vec<usize>, Vec<f32>)>,
    name: &str,
    dir: &Path,
) -> Result<(Vec<usize>, Vec<f32>)> {
    tensors
        .remove(name)
        .ok_or_else(|| Error::schema(dir.join("manifest.json"), format!("missing tensor {name}")))
}

fn fill_weights(
    target: &mut FieldWeights<f32>,
    prefix: &str,
    tensors: &mut BTreeMap<String, (Vec<usize>, Vec<f32>)>,
    dir: &Path,
) -> Result<()> {
    let names: Vec<(String, Vec<usize>)> = target.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
    for (slot, (name, shape)) in target.tensors_mut().into_iter().zip(names) {
        let full = format!("{prefix}.{name}");
        let (s, data) = take(tensors, &full, dir)?;
        if s != shape {
            return Err(Error::schema(dir.join("manifest.json"), format!("{full} has shape {s:?}, model expects {shape:?}")));
        }
        slot.copy_from_slice(&data);
    }
    Ok(())
}

fn rows(shape: &[usize], data: Vec<f32>, cols: usize, name: &str, dir: &Path) -> Result<Vec<Vec<f32>>> {
    if shape.len() != 2 || (shape[0] > 0 && shape[1] != cols) {
        return Err(Error::schema(dir.join("manifest.json"), format!("{name} has shape {shape:?}, expected [_, {cols}]")));
    }
    if cols == 0 {
        return Ok(vec![Vec::new(); shape[0]]);
    }
    Ok(data.chunks(cols).map(<[f32]>::to_vec).collect())
}

/// Loads a full training state. Nothing is returned unless every tensor and
/// field validates.
pub fn load_checkpoint(dir: &Path) -> Result<TrainState> {
    let manifest = read_manifest(dir)?;
    manifest.config.validate()?;
    let mut tensors = read_tensors(dir, &manifest)?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(0);
    let mut weights = FieldWeights::<f32>::new(manifest.config.field.clone(), &mut init_rng)?;
    fill_weights(&mut weights, "weights", &mut tensors, dir)?;
    let mut adam_m = weights.zeros_like();
    fill_weights(&mut adam_m, "optim.m", &mut tensors, dir)?;
    let mut adam_v = weights.zeros_like();
    fill_weights(&mut adam_v, "optim.v", &mut tensors, dir)?;

    let f = &manifest.config.field;
    let mut bank_rows = |name: &str, cols: usize| -> Result<Vec<Vec<f32>>> {
        let (shape, data) = take(&mut tensors, name, dir)?;
        rows(&shape, data, cols, name, dir)
    };
    let shape = bank_rows("bank.shape", f.shape_dim)?;
    let appearance = bank_rows("bank.appearance", crate::codes::APPEARANCE_DIM)?;
    let expression = bank_rows("bank.expression", f.expr_dim)?;
    let em = bank_rows("bank.expression_m", f.expr_dim)?;
    let ev = bank_rows("bank.expression_v", f.expr_dim)?;
    let mpath = dir.join("manifest.json");
    if !tensors.is_empty() {
        return Err(Error::schema(&mpath, format!("unexpected tensors {:?}", tensors.keys().collect::<Vec<_>>())));
    }
    if em.len() != expression.len() || ev.len() != expression.len() || manifest.expression_steps.len() != expression.len() {
        return Err(Error::schema(&mpath, "expression optimizer state does not match the code bank"));
    }
    if !appearance.is_empty() && appearance.len() != shape.len() {
        return Err(Error::schema(&mpath, "appearance snapshot does not cover every subject"));
    }
    let expression_optim = em
        .into_iter()
        .zip(ev)
        .zip(&manifest.expression_steps)
        .map(|((m, v), t)| VecAdam { m, v, t: *t })
        .collect();
    let rng = manifest.rng.restore(&mpath)?;
    Ok(TrainState {
        config: manifest.config,
        weights,
        adam_m,
        adam_v,
        bank: CodeBank {
            shape,
            appearance,
            expression,
            expression_optim,
        },
        step: manifest.step,
        rng,
    })
}
