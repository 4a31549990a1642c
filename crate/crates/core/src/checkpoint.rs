//! Checkpoint file format.
//!
//! ```text
//! "DRKACKP1"                         8-byte magic
//! u32 LE                             section count
//! per section:
//!   [u8; 8]                          ASCII name, space padded
//!   u32 LE rows, u32 LE cols
//!   rows*cols f64 LE                 (JSONMETA: `rows` UTF-8 bytes, cols = 1)
//! ```
//!
//! Matrix sections hold the entity and relation tables, the projection and
//! the optimizer moments; the final `JSONMETA` section holds the config,
//! counters, RNG position and description selector.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::atomic_write;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::models::{EmbeddingState, ModelKind};
use crate::optim::{Moments, Optimizer};
use crate::retriever::{DocSelector, Projection};
use crate::trainer::{Checkpoint, DrkaModel, TrainConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DRKACKP1";

const SECTIONS: [&str; 12] = [
    "ENTITIES", "RELATION", "PROJ_W", "PROJ_B", "ADAM_M_E", "ADAM_V_E", "ADAM_M_R", "ADAM_V_R", "ADAM_M_W",
    "ADAM_V_W", "ADAM_M_B", "ADAM_V_B",
];
const META: &str = "JSONMETA";

#[derive(Serialize, Deserialize)]
struct Meta {
    config: TrainConfig,
    model_kind: ModelKind,
    dim: usize,
    epoch: usize,
    optimizer_step: u64,
    rng_word_pos: String,
    best_valid_mrr: Option<f64>,
    skipped_triples: usize,
    selector: DocSelector,
    text_weight: f64,
    #[serde(default)]
    extra: serde_json::Value,
}

fn name_bytes(name: &str) -> [u8; 8] {
    let mut b = [b' '; 8];
    b[..name.len()].copy_from_slice(name.as_bytes());
    b
}

fn put_matrix(buf: &mut Vec<u8>, name: &str, m: &Matrix) {
    buf.extend_from_slice(&name_bytes(name));
    buf.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn row(v: &[f64]) -> Matrix {
    Matrix::from_vec(1, v.len(), v.to_vec())
}

/// Serializes a checkpoint; `extra` is stored verbatim in the metadata.
pub fn encode(ckpt: &Checkpoint, extra: &serde_json::Value) -> Result<Vec<u8>> {
    let m = &ckpt.model;
    let mo = &ckpt.optimizer.moments;
    let mats: [Matrix; 12] = [
        m.state.entities.clone(),
        m.state.relations.clone(),
        m.proj.weight.clone(),
        row(&m.proj.bias),
        mo.entities.0.clone(),
        mo.entities.1.clone(),
        mo.relations.0.clone(),
        mo.relations.1.clone(),
        mo.weight.0.clone(),
        mo.weight.1.clone(),
        row(&mo.bias.0),
        row(&mo.bias.1),
    ];
    let meta = Meta {
        config: ckpt.config.clone(),
        model_kind: m.state.kind,
        dim: m.state.dim,
        epoch: ckpt.epoch,
        optimizer_step: ckpt.optimizer.step,
        rng_word_pos: ckpt.rng_word_pos.to_string(),
        best_valid_mrr: ckpt.best_valid_mrr.is_finite().then_some(ckpt.best_valid_mrr),
        skipped_triples: ckpt.skipped_triples,
        selector: m.selector.clone(),
        text_weight: m.text_weight,
        extra: extra.clone(),
    };
    let json = serde_json::to_vec(&meta)?;

    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&((SECTIONS.len() + 1) as u32).to_le_bytes());
    for (name, mat) in SECTIONS.iter().zip(&mats) {
        put_matrix(&mut buf, name, mat);
    }
    buf.extend_from_slice(&name_bytes(META));
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&1u32.to_le_bytes());
    buf.extend_from_slice(&json);
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint {
                section: section.to_owned(),
                msg: "unexpected end of file".into(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, section: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }

    fn header(&mut self, expected: &str) -> Result<(usize, usize)> {
        let name = self.take(8, expected)?;
        if name != name_bytes(expected) {
            return Err(Error::Checkpoint {
                section: expected.to_owned(),
                msg: format!("found section `{}`", String::from_utf8_lossy(name).trim_end()),
            });
        }
        Ok((self.u32(expected)? as usize, self.u32(expected)? as usize))
    }

    fn matrix(&mut self, name: &str) -> Result<Matrix> {
        let (rows, cols) = self.header(name)?;
        let raw = self.take(rows * cols * 8, name)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Matrix::from_vec(rows, cols, data))
    }
}

fn shape_err(section: &str, msg: String) -> Error {
    Error::Checkpoint {
        section: section.to_owned(),
        msg,
    }
}

pub fn decode(bytes: &[u8]) -> Result<(Checkpoint, serde_json::Value)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "header")? != CHECKPOINT_MAGIC {
        return Err(shape_err("header", "bad magic".into()));
    }
    let count = r.u32("header")? as usize;
    if count != SECTIONS.len() + 1 {
        return Err(shape_err("header", format!("expected {} sections, found {count}", SECTIONS.len() + 1)));
    }
    let mut mats = Vec::with_capacity(SECTIONS.len());
    for name in SECTIONS {
        mats.push(r.matrix(name)?);
    }
    let (len, _) = r.header(META)?;
    let json = r.take(len, META)?;
    let meta: Meta = serde_json::from_slice(json).map_err(|e| shape_err(META, e.to_string()))?;

    let mut it = mats.into_iter();
    let mut next = || it.next().unwrap();
    let (entities, relations, weight, bias) = (next(), next(), next(), next());
    let moments = Moments {
        entities: (next(), next()),
        relations: (next(), next()),
        weight: (next(), next()),
        bias: (next().as_slice().to_vec(), next().as_slice().to_vec()),
    };
    if entities.cols() != meta.dim {
        return Err(shape_err("ENTITIES", format!("width {} ≠ dim {}", entities.cols(), meta.dim)));
    }
    if weight.rows() != meta.dim || bias.cols() != meta.dim {
        return Err(shape_err("PROJ_W", "projection shape does not match dim".into()));
    }
    if moments.entities.0.rows() != entities.rows() || moments.relations.0.rows() != relations.rows() {
        return Err(shape_err("ADAM_M_E", "moment shapes do not match tables".into()));
    }
    let rng_word_pos = meta
        .rng_word_pos
        .parse::<u128>()
        .map_err(|e| shape_err(META, format!("rng_word_pos: {e}")))?;
    let state = EmbeddingState {
        kind: meta.model_kind,
        dim: meta.dim,
        entities,
        relations,
    };
    let ckpt = Checkpoint {
        optimizer: Optimizer {
            kind: meta.config.optimizer,
            lr: meta.config.lr,
            step: meta.optimizer_step,
            moments,
        },
        config: meta.config,
        model: DrkaModel {
            state,
            proj: Projection {
                weight,
                bias: bias.as_slice().to_vec(),
            },
            selector: meta.selector,
            text_weight: meta.text_weight,
        },
        epoch: meta.epoch,
        rng_word_pos,
        best_valid_mrr: meta.best_valid_mrr.unwrap_or(f64::NEG_INFINITY),
        skipped_triples: meta.skipped_triples,
    };
    Ok((ckpt, meta.extra))
}

pub fn save(path: &Path, ckpt: &Checkpoint, extra: &serde_json::Value) -> Result<()> {
    atomic_write(path, &encode(ckpt, extra)?)
}

pub fn load(path: &Path) -> Result<(Checkpoint, serde_json::Value)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
