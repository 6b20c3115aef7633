//! Single-file checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes            | content                                   |
//! |------------------|-------------------------------------------|
//! | 8                | magic `NESHCKPT`                          |
//! | 4                | format version (`u32`)                    |
//! | 8                | manifest length `n` (`u64`)               |
//! | n                | JSON manifest                             |
//! | payload          | arrays, each `f64` or `u64`, 8 bytes/elem |
//! | 32               | SHA-256 of everything before it           |
//!
//! The manifest records scalar settings and, for every named array, its
//! dtype, shape, byte offset into the payload and element count.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::NodeMapping;
use crate::embeddings::{BatchNormState, EmbeddingTable, StickParams};
use crate::error::{NeshError, Result};
use crate::gp::{KernelParams, SvgpState};

use super::{AdamState, Checkpoint, Embeddings, ModelState, PriorMode, TrainConfig, TrainHistory};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NESHCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER: usize = 8 + 4 + 8;
const DIGEST: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Dtype {
    F64,
    U64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    dtype: Dtype,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    config: TrainConfig,
    prior: PriorMode,
    rank: usize,
    mode_sizes: Vec<usize>,
    alpha: f64,
    horizon: f64,
    time_offset: f64,
    batchnorm_eps: f64,
    kernel_jitter: f64,
    adam_steps: u64,
    rejected_steps: u64,
    arrays: Vec<ArrayEntry>,
}

enum Data {
    F64(Vec<f64>),
    U64(Vec<u64>),
}

struct Writer {
    arrays: Vec<ArrayEntry>,
    payload: Vec<u8>,
}

impl Writer {
    fn push(&mut self, name: String, shape: Vec<usize>, data: Data) {
        let (dtype, len) = match &data {
            Data::F64(v) => (Dtype::F64, v.len()),
            Data::U64(v) => (Dtype::U64, v.len()),
        };
        debug_assert_eq!(shape.iter().product::<usize>(), len);
        self.arrays.push(ArrayEntry {
            name,
            dtype,
            shape,
            offset: self.payload.len() as u64,
            len: len as u64,
        });
        match data {
            Data::F64(v) => v
                .iter()
                .for_each(|x| self.payload.extend_from_slice(&x.to_le_bytes())),
            Data::U64(v) => v
                .iter()
                .for_each(|x| self.payload.extend_from_slice(&x.to_le_bytes())),
        }
    }

    fn f64s(&mut self, name: impl Into<String>, shape: Vec<usize>, v: Vec<f64>) {
        self.push(name.into(), shape, Data::F64(v));
    }

    fn u64s(&mut self, name: impl Into<String>, v: Vec<u64>) {
        let n = v.len();
        self.push(name.into(), vec![n], Data::U64(v));
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    (0..r)
        .flat_map(|i| (0..c).map(move |j| m[(i, j)]))
        .collect()
}

/// Serializes a checkpoint to bytes.
pub fn checkpoint_to_bytes(c: &Checkpoint) -> Vec<u8> {
    let model = &c.model;
    let mut w = Writer {
        arrays: Vec::new(),
        payload: Vec::new(),
    };
    let (blocks, alpha) = match &model.embeddings {
        Embeddings::Sticks(p) => (&p.logits, p.alpha),
        Embeddings::Gaussian(t) => (&t.log_weights, c.config.alpha),
    };
    let rank = model.rank();
    for (k, (b, &d)) in blocks.iter().zip(model.mode_sizes()).enumerate() {
        w.f64s(format!("embeddings.mode{k}"), vec![rank, d], b.clone());
    }
    let dim = model.batchnorm.dim();
    w.f64s("batchnorm.mean", vec![dim], model.batchnorm.mean.clone());
    w.f64s(
        "batchnorm.log_std",
        vec![dim],
        model.batchnorm.log_std.clone(),
    );
    let gp = &model.gp;
    let (h, gdim) = gp.inducing.shape();
    w.f64s("gp.inducing", vec![h, gdim], row_major(&gp.inducing));
    w.f64s("gp.mean", vec![h], gp.mean.iter().copied().collect());
    w.f64s("gp.factor_raw", vec![h, h], row_major(&gp.factor_raw));
    w.f64s(
        "gp.log_lengthscales",
        vec![gdim],
        gp.kernel.log_lengthscales.clone(),
    );
    w.f64s(
        "gp.log_variances",
        vec![2],
        vec![gp.kernel.log_var_embed, gp.kernel.log_var_time],
    );
    w.f64s("adam.m", vec![c.adam.m.len()], c.adam.m.clone());
    w.f64s("adam.v", vec![c.adam.v.len()], c.adam.v.clone());
    w.f64s(
        "history.epoch_elbo",
        vec![c.history.epoch_elbo.len()],
        c.history.epoch_elbo.clone(),
    );
    w.f64s(
        "history.step_elbo",
        vec![c.history.step_elbo.len()],
        c.history.step_elbo.clone(),
    );
    for (k, ids) in c.mapping.raw_ids.iter().enumerate() {
        w.u64s(format!("mapping.mode{k}"), ids.clone());
    }
    for (k, ids) in c.active.iter().enumerate() {
        w.u64s(
            format!("active.mode{k}"),
            ids.iter().map(|&j| j as u64).collect(),
        );
    }

    let manifest = Manifest {
        config: c.config.clone(),
        prior: model.prior_mode(),
        rank,
        mode_sizes: model.mode_sizes().to_vec(),
        alpha,
        horizon: model.horizon,
        time_offset: c.time_offset,
        batchnorm_eps: model.batchnorm.eps,
        kernel_jitter: gp.kernel.jitter,
        adam_steps: c.adam.t,
        rejected_steps: c.history.rejected_steps,
        arrays: w.arrays,
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(HEADER + json.len() + w.payload.len() + DIGEST);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&w.payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    manifest: &'a Manifest,
    payload: &'a [u8],
}

impl Reader<'_> {
    fn entry(&self, name: &str, dtype: Dtype) -> Result<&ArrayEntry> {
        let e = self
            .manifest
            .arrays
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| NeshError::Corrupt(format!("missing array `{name}`")))?;
        if e.dtype != dtype {
            return Err(NeshError::Corrupt(format!(
                "array `{name}` has the wrong dtype"
            )));
        }
        Ok(e)
    }

    fn raw(&self, e: &ArrayEntry) -> Result<&[u8]> {
        let start = e.offset as usize;
        let end = start + 8 * e.len as usize;
        if e.shape.iter().product::<usize>() as u64 != e.len {
            return Err(NeshError::Corrupt(format!(
                "array `{}` shape does not match its length",
                e.name
            )));
        }
        self.payload
            .get(start..end)
            .ok_or_else(|| NeshError::Corrupt(format!("array `{}` runs past the payload", e.name)))
    }

    fn f64s(&self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let e = self.entry(name, Dtype::F64)?;
        if e.shape != shape {
            return Err(NeshError::Corrupt(format!(
                "array `{name}` has shape {:?}, expected {shape:?}",
                e.shape
            )));
        }
        Ok(self
            .raw(e)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect())
    }

    fn f64s_any(&self, name: &str) -> Result<Vec<f64>> {
        let e = self.entry(name, Dtype::F64)?;
        let shape = e.shape.clone();
        self.f64s(name, &shape)
    }

    fn u64s(&self, name: &str) -> Result<Vec<u64>> {
        let e = self.entry(name, Dtype::U64)?;
        Ok(self
            .raw(e)?
            .chunks_exact(8)
            .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect())
    }

    fn matrix(&self, name: &str, r: usize, c: usize) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_row_slice(r, c, &self.f64s(name, &[r, c])?))
    }
}

/// Parses bytes produced by [`checkpoint_to_bytes`]. `origin` names the
/// source in checksum errors.
pub fn checkpoint_from_bytes(bytes: &[u8], origin: &Path) -> Result<Checkpoint> {
    if bytes.len() < HEADER + DIGEST {
        return Err(NeshError::Corrupt(format!(
            "file is truncated ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(NeshError::Corrupt(
            "not a checkpoint file (bad magic)".into(),
        ));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(NeshError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body_end = bytes.len() - DIGEST;
    if mlen > body_end - HEADER {
        return Err(NeshError::Corrupt(
            "file is truncated inside the manifest".into(),
        ));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[HEADER..HEADER + mlen])
        .map_err(|e| NeshError::Corrupt(format!("unreadable manifest: {e}")))?;
    let payload_len: u64 = manifest.arrays.iter().map(|a| 8 * a.len).sum();
    if (HEADER + mlen) as u64 + payload_len != body_end as u64 {
        return Err(NeshError::Corrupt(format!(
            "payload is {} bytes, manifest describes {payload_len}",
            body_end as i64 - (HEADER + mlen) as i64
        )));
    }
    if Sha256::digest(&bytes[..body_end]).as_slice() != &bytes[body_end..] {
        return Err(NeshError::Checksum(origin.to_path_buf()));
    }
    let r = Reader {
        manifest: &manifest,
        payload: &bytes[HEADER + mlen..body_end],
    };

    let m = &manifest;
    let k = m.mode_sizes.len();
    let mut blocks = Vec::with_capacity(k);
    for (i, &d) in m.mode_sizes.iter().enumerate() {
        blocks.push(r.f64s(&format!("embeddings.mode{i}"), &[m.rank, d])?);
    }
    let embeddings = match m.prior {
        PriorMode::Nesh => Embeddings::Sticks(StickParams {
            alpha: m.alpha,
            rank: m.rank,
            mode_sizes: m.mode_sizes.clone(),
            logits: blocks,
        }),
        PriorMode::Gaussian => Embeddings::Gaussian(EmbeddingTable {
            rank: m.rank,
            mode_sizes: m.mode_sizes.clone(),
            log_weights: blocks,
        }),
    };
    let dim = k * m.rank;
    let batchnorm = BatchNormState {
        mean: r.f64s("batchnorm.mean", &[dim])?,
        log_std: r.f64s("batchnorm.log_std", &[dim])?,
        eps: m.batchnorm_eps,
    };
    let h = r.entry("gp.mean", Dtype::F64)?.len as usize;
    let gdim = dim + 1;
    let lv = r.f64s("gp.log_variances", &[2])?;
    let gp = SvgpState {
        inducing: r.matrix("gp.inducing", h, gdim)?,
        mean: DVector::from_vec(r.f64s("gp.mean", &[h])?),
        factor_raw: r.matrix("gp.factor_raw", h, h)?,
        kernel: KernelParams {
            log_lengthscales: r.f64s("gp.log_lengthscales", &[gdim])?,
            log_var_embed: lv[0],
            log_var_time: lv[1],
            jitter: m.kernel_jitter,
        },
    };
    let model = ModelState {
        horizon: m.horizon,
        embeddings,
        batchnorm,
        gp,
    };
    model.validate()?;
    let n = model.num_params();
    let adam = AdamState {
        m: r.f64s("adam.m", &[n])?,
        v: r.f64s("adam.v", &[n])?,
        t: m.adam_steps,
    };
    let history = TrainHistory {
        epoch_elbo: r.f64s_any("history.epoch_elbo")?,
        step_elbo: r.f64s_any("history.step_elbo")?,
        rejected_steps: m.rejected_steps,
    };
    let mut raw_ids = Vec::with_capacity(k);
    let mut active = Vec::with_capacity(k);
    for (i, &d) in m.mode_sizes.iter().enumerate() {
        let ids = r.u64s(&format!("mapping.mode{i}"))?;
        if ids.len() != d {
            return Err(NeshError::Corrupt(format!(
                "mapping for mode {i} has {} ids, expected {d}",
                ids.len()
            )));
        }
        raw_ids.push(ids);
        let act: Vec<usize> = r
            .u64s(&format!("active.mode{i}"))?
            .into_iter()
            .map(|j| j as usize)
            .collect();
        if act.iter().any(|&j| j >= d) || act.windows(2).any(|w| w[0] >= w[1]) {
            return Err(NeshError::Corrupt(format!(
                "active list for mode {i} is invalid"
            )));
        }
        active.push(act);
    }
    Ok(Checkpoint {
        config: m.config.clone(),
        model,
        adam,
        history,
        mapping: NodeMapping { raw_ids },
        active,
        time_offset: m.time_offset,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, c: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_to_bytes(c)).map_err(|e| NeshError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| NeshError::io(path, e))?;
    checkpoint_from_bytes(&bytes, path)
}
