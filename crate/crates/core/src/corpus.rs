//! Description corpus: metadata, mention annotations and the dense vector
//! matrix (`DRKAEMB1` on disk).

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, Triple};
use crate::linalg::{normalize_in_place, Matrix};

pub const VECTOR_MAGIC: &[u8; 8] = b"DRKAEMB1";
const HEADER_LEN: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Description {
    pub id: usize,
    pub text: String,
    pub mentions: BTreeSet<usize>,
}

impl Description {
    pub fn new(id: usize, text: impl Into<String>, mentions: impl IntoIterator<Item = usize>) -> Self {
        Description {
            id,
            text: text.into(),
            mentions: mentions.into_iter().collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DescriptionCorpus {
    pub records: Vec<Description>,
    vectors: Matrix,
    pub encoder_tag: String,
    /// Mention strings in the meta file that did not resolve to a graph entity.
    pub dropped_mentions: usize,
    by_entity: HashMap<usize, Vec<usize>>,
}

/// One line of the JSON Lines metadata file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetaLine {
    pub id: usize,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub entities: Vec<String>,
}

impl DescriptionCorpus {
    /// Vector entries are rounded through `f32` so that the in-memory values
    /// are exactly what the on-disk format stores.
    pub fn new(records: Vec<Description>, vectors: Matrix, encoder_tag: impl Into<String>) -> Result<Self> {
        if records.len() != vectors.rows() {
            return Err(Error::Corpus(format!(
                "row-count mismatch {}≠{}",
                records.len(),
                vectors.rows()
            )));
        }
        for (i, r) in records.iter().enumerate() {
            if r.id != i {
                return Err(Error::Corpus(format!(
                    "non-contiguous ids: record {i} has id {}",
                    r.id
                )));
            }
        }
        if !vectors.all_finite() {
            return Err(Error::Corpus("non-finite vector entry".into()));
        }
        let mut vectors = vectors;
        for v in vectors.as_mut_slice() {
            *v = *v as f32 as f64;
        }
        let mut by_entity: HashMap<usize, Vec<usize>> = HashMap::new();
        for r in &records {
            for &e in &r.mentions {
                by_entity.entry(e).or_default().push(r.id);
            }
        }
        Ok(DescriptionCorpus {
            records,
            vectors,
            encoder_tag: encoder_tag.into(),
            dropped_mentions: 0,
            by_entity,
        })
    }

    pub fn empty(dim: usize) -> Self {
        DescriptionCorpus::new(Vec::new(), Matrix::zeros(0, dim), "empty").expect("empty corpus")
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Raw encoder dimension `m`.
    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn vector(&self, id: usize) -> &[f64] {
        self.vectors.row(id)
    }

    /// Description ids mentioning `entity`, ascending.
    pub fn mentioning(&self, entity: usize) -> &[usize] {
        self.by_entity.get(&entity).map_or(&[], Vec::as_slice)
    }

    pub fn mentioned_entities(&self) -> BTreeSet<usize> {
        self.by_entity.keys().copied().collect()
    }

    /// Description ids mentioning both `a` and `b`.
    pub fn co_mentioning(&self, a: usize, b: usize) -> Vec<usize> {
        let (xs, ys) = (self.mentioning(a), self.mentioning(b));
        intersect_sorted(xs, ys)
    }

    pub fn co_mentioned(&self, a: usize, b: usize) -> bool {
        !self.co_mentioning(a, b).is_empty()
    }

    /// Distant-supervision gold set for a triple: descriptions mentioning both
    /// entities, else those mentioning either one, else empty.
    pub fn gold_for(&self, t: &Triple) -> Vec<usize> {
        let both = self.co_mentioning(t.head, t.tail);
        if !both.is_empty() {
            return both;
        }
        let mut either: Vec<usize> = self
            .mentioning(t.head)
            .iter()
            .chain(self.mentioning(t.tail))
            .copied()
            .collect();
        either.sort_unstable();
        either.dedup();
        either
    }

    pub fn stats(&self, kg: &KnowledgeGraph) -> CorpusStats {
        let covered = self.by_entity.len();
        let mention_total: usize = self.by_entity.values().map(Vec::len).sum();
        let pair_cov = |split: &[Triple]| {
            if split.is_empty() {
                0.0
            } else {
                split.iter().filter(|t| self.co_mentioned(t.head, t.tail)).count() as f64
                    / split.len() as f64
            }
        };
        CorpusStats {
            descriptions: self.len(),
            dim: self.dim(),
            entities_covered: covered,
            entity_coverage: if kg.num_entities() == 0 {
                0.0
            } else {
                covered as f64 / kg.num_entities() as f64
            },
            mean_descriptions_per_entity: if covered == 0 {
                0.0
            } else {
                mention_total as f64 / covered as f64
            },
            train_pair_coverage: pair_cov(&kg.train),
            valid_pair_coverage: pair_cov(&kg.valid),
            test_pair_coverage: pair_cov(&kg.test),
        }
    }

    /// Loads JSON Lines metadata plus the `DRKAEMB1` vector file, resolving
    /// mention strings against the graph vocabulary.
    pub fn load(meta_path: &Path, vectors_path: &Path, kg: &KnowledgeGraph) -> Result<Self> {
        let meta = fs::read_to_string(meta_path).map_err(|e| Error::io(meta_path, e))?;
        let vectors = read_vectors(vectors_path)?;
        let mut records = Vec::new();
        let mut dropped = 0;
        for (lineno, line) in meta.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let m: MetaLine = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: meta_path.to_path_buf(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
            let mut mentions = BTreeSet::new();
            for name in &m.entities {
                match kg.entity_id(name) {
                    Some(e) => {
                        mentions.insert(e);
                    }
                    None => dropped += 1,
                }
            }
            records.push(Description {
                id: m.id,
                text: m.text,
                mentions,
            });
        }
        if dropped > 0 {
            warn!("{}: {dropped} unknown entity mention(s) dropped", meta_path.display());
        }
        records.sort_by_key(|r| r.id);
        let tag = vectors_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut corpus = DescriptionCorpus::new(records, vectors, tag)?;
        corpus.dropped_mentions = dropped;
        Ok(corpus)
    }

    /// Writes the metadata (JSON Lines) and the vectors (`DRKAEMB1`).
    pub fn write(&self, meta_path: &Path, vectors_path: &Path, kg: &KnowledgeGraph) -> Result<()> {
        let mut meta = String::new();
        for r in &self.records {
            let line = MetaLine {
                id: r.id,
                text: r.text.clone(),
                entities: r.mentions.iter().map(|&e| kg.entity_names[e].clone()).collect(),
            };
            meta.push_str(&serde_json::to_string(&line)?);
            meta.push('\n');
        }
        atomic_write(meta_path, meta.as_bytes())?;
        write_vectors(vectors_path, &self.vectors)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub descriptions: usize,
    pub dim: usize,
    pub entities_covered: usize,
    pub entity_coverage: f64,
    pub mean_descriptions_per_entity: f64,
    pub train_pair_coverage: f64,
    pub valid_pair_coverage: f64,
    pub test_pair_coverage: f64,
}

fn intersect_sorted(xs: &[usize], ys: &[usize]) -> Vec<usize> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < xs.len() && j < ys.len() {
        match xs[i].cmp(&ys[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(xs[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

pub fn encode_vectors(m: &Matrix) -> Result<Vec<u8>> {
    let rows = u32::try_from(m.rows()).map_err(|_| Error::Corpus("too many rows".into()))?;
    let cols = u32::try_from(m.cols()).map_err(|_| Error::Corpus("dimension too large".into()))?;
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * m.as_slice().len());
    buf.extend_from_slice(VECTOR_MAGIC);
    buf.extend_from_slice(&rows.to_le_bytes());
    buf.extend_from_slice(&cols.to_le_bytes());
    for &v in m.as_slice() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_vectors(bytes: &[u8]) -> Result<Matrix> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != VECTOR_MAGIC {
        return Err(Error::Corpus("missing DRKAEMB1 magic".into()));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(Error::Corpus("dimension field is 0".into()));
    }
    let body = &bytes[HEADER_LEN..];
    if body.len() != rows * dim * 4 {
        return Err(Error::Corpus(format!(
            "payload is {} bytes, header declares {rows}x{dim}",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Matrix::from_vec(rows, dim, data))
}

pub fn read_vectors(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_vectors(&bytes)
}

pub fn write_vectors(path: &Path, m: &Matrix) -> Result<()> {
    atomic_write(path, &encode_vectors(m)?)
}

pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp~");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn token_vector(token: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(token.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalize_in_place(&mut v);
    v
}

/// Deterministic bag-of-words embedder used in place of a pretrained encoder:
/// each whitespace token maps to a seeded pseudo-random unit vector and a text
/// is the L2-normalized mean of its tokens. Empty text gives the zero vector.
pub fn synth_embed<S: AsRef<str>>(texts: &[S], dim: usize, seed: u64) -> Matrix {
    assert!(dim >= 1, "embedding dimension must be positive");
    let mut cache: HashMap<&str, Vec<f64>> = HashMap::new();
    let mut out = Matrix::zeros(texts.len(), dim);
    for (i, text) in texts.iter().enumerate() {
        let row = out.row_mut(i);
        let mut n = 0usize;
        for tok in text.as_ref().split_whitespace() {
            let v = cache
                .entry(tok)
                .or_insert_with(|| token_vector(tok, dim, seed));
            row.iter_mut().zip(v.iter()).for_each(|(a, b)| *a += b);
            n += 1;
        }
        if n > 0 {
            normalize_in_place(row);
        }
    }
    out
}
