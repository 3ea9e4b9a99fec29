//! Binary checkpoint container.
//!
//! ```text
//! magic "VLHSACKP" | version u32 | sha256(config JSON) [32]
//! metadata length u64 | metadata JSON
//! block count u32
//! per block: name length u32 | name | ndim u32 | dims u64 × ndim | f32 payload
//! ```
//!
//! All integers and floats are little-endian. Blocks are named
//! `param/<name>`, `adam.m/<name>` and `adam.v/<name>`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::optim::AdamW;
use super::schedule::Scheduler;
use super::TrainConfig;
use crate::autodiff::Mat;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::puzzle::GridGeometry;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VLHSACKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Model parameters plus everything needed to resume or evaluate.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub geometry: GridGeometry,
    /// Epoch (0-based) whose parameters are stored.
    pub epoch: usize,
    pub best_val_piece: f64,
    /// Optimizer steps taken.
    pub step: u64,
    pub scheduler: Scheduler,
    pub model: Model,
    pub optimizer: AdamW,
    /// Set on load when the stored config hash disagrees with the stored
    /// config.
    pub hash_mismatch: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    config: TrainConfig,
    geometry: GridGeometry,
    epoch: usize,
    best_val_piece: f64,
    step: u64,
    scheduler: Scheduler,
}

/// SHA-256 of the config's canonical JSON serialization.
pub fn config_hash(config: &TrainConfig) -> [u8; 32] {
    let json = serde_json::to_string(config).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    let mut out = [0u8; 32];
    out.copy_from_slice(&digest);
    out
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&config_hash(&self.config));
        let meta = serde_json::to_vec(&Metadata {
            config: self.config.clone(),
            geometry: self.geometry,
            epoch: self.epoch,
            best_val_piece: self.best_val_piece,
            step: self.step,
            scheduler: self.scheduler.clone(),
        })
        .expect("metadata serializes");
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);

        let store = &self.model.store;
        let mut blocks: Vec<(String, &Mat)> = Vec::new();
        for (_, name, value) in store.iter() {
            blocks.push((format!("param/{name}"), value));
        }
        for (i, (_, name, _)) in store.iter().enumerate() {
            blocks.push((format!("adam.m/{name}"), &self.optimizer.m[i]));
        }
        for (i, (_, name, _)) in store.iter().enumerate() {
            blocks.push((format!("adam.v/{name}"), &self.optimizer.v[i]));
        }
        out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
        for (name, m) in blocks {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&2u32.to_le_bytes());
            out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
            for &x in m.iter() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8, "header")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32("header")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let mut hash = [0u8; 32];
        hash.copy_from_slice(r.take(32, "header")?);
        let meta_len = r.u64("metadata")? as usize;
        let meta: Metadata = serde_json::from_slice(r.take(meta_len, "metadata")?)
            .map_err(|e| Error::Checkpoint(format!("corrupt metadata: {e}")))?;
        let hash_mismatch = hash != config_hash(&meta.config);
        if hash_mismatch {
            log::warn!("checkpoint config hash does not match its stored config");
        }

        let mut model = Model::new(&meta.config.model, &meta.geometry, meta.config.seed)
            .map_err(|e| Error::Checkpoint(format!("stored config is unusable: {e}")))?;
        let mut optimizer = AdamW::new(&model.store, meta.config.weight_decay);
        optimizer.t = meta.step;

        let count = r.u32("block table")? as usize;
        let mut seen = vec![[false; 3]; model.store.len()];
        for _ in 0..count {
            let name_len = r.u32("block name")? as usize;
            let name = String::from_utf8(r.take(name_len, "block name")?.to_vec())
                .map_err(|_| Error::Checkpoint("block name is not UTF-8".into()))?;
            let ndim = r.u32(&name)? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u64(&name)? as usize);
            }
            let numel: usize = dims.iter().product();
            let payload = r.take(numel * 4, &name)?;
            let (kind, pname) = name
                .split_once('/')
                .ok_or_else(|| Error::Checkpoint(format!("malformed block name `{name}`")))?;
            let slot = match kind {
                "param" => 0,
                "adam.m" => 1,
                "adam.v" => 2,
                _ => return Err(Error::Checkpoint(format!("unknown block kind in `{name}`"))),
            };
            let id = model
                .store
                .id(pname)
                .ok_or_else(|| Error::Checkpoint(format!("block `{name}` matches no model parameter")))?;
            let want = model.store.get(id).dim();
            if dims != [want.0, want.1] {
                return Err(Error::Checkpoint(format!(
                    "block `{name}` has shape {dims:?}, the model expects {want:?}"
                )));
            }
            let values: Vec<f64> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            let m = Mat::from_shape_vec(want, values).expect("shape checked");
            match slot {
                0 => *model.store.get_mut(id) = m,
                1 => optimizer.m[id.index()] = m,
                _ => optimizer.v[id.index()] = m,
            }
            seen[id.index()][slot] = true;
        }
        if let Some((i, _)) = seen.iter().enumerate().find(|(_, s)| !s[0]) {
            let name = model.store.name(crate::autodiff::ParamId(i));
            return Err(Error::Checkpoint(format!("missing block `param/{name}`")));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the last block",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            config: meta.config,
            geometry: meta.geometry,
            epoch: meta.epoch,
            best_val_piece: meta.best_val_piece,
            step: meta.step,
            scheduler: meta.scheduler,
            model,
            optimizer,
            hash_mismatch,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint(format!(
                "file truncated in `{what}` (needs {n} bytes at offset {}, file has {})",
                self.pos,
                self.bytes.len()
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}

/// Writes atomically: a temporary sibling file is written, synced, and
/// renamed over `path`.
pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&checkpoint.to_bytes())
            .and_then(|_| f.sync_all())
            .map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
