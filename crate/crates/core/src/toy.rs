//! Small synthetic knowledge graph with mention-annotated descriptions, used by
//! tests, the demo page and `drka toy`.
//!
//! Entities fall into types of five. Relation `r` maps type `c` to type
//! `c + shift(r)` and links each head to three random members of the target
//! type. Descriptions state facts as `"<head> <tail>"` plus two filler words and
//! mention both entities; the held-out facts are described first, so the text
//! carries knowledge the training graph lacks.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{synth_embed, Description, DescriptionCorpus};
use crate::error::Result;
use crate::graph::KnowledgeGraph;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct ToySpec {
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub descriptions: usize,
    pub text_dim: usize,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            entities: 20,
            relations: 5,
            train: 100,
            valid: 20,
            test: 20,
            descriptions: 60,
            text_dim: 64,
            seed: 17,
        }
    }
}

pub struct Toy {
    pub kg: KnowledgeGraph,
    pub corpus: DescriptionCorpus,
}

const FILLER: usize = 30;
const TYPE_SIZE: usize = 5;
const TAILS: usize = 3;
const SHIFTS: [i64; 5] = [1, 2, -1, -2, 3];

impl ToySpec {
    pub fn build(&self) -> Result<Toy> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = self.entities;
        let types = n.div_ceil(TYPE_SIZE) as i64;
        let ent = |i: usize| format!("e{i:02}");
        let rel = |r: usize| format!("r{r}");

        let mut facts: Vec<(usize, usize, usize)> = Vec::new();
        for r in 0..self.relations {
            let shift = SHIFTS[r % SHIFTS.len()] * (1 + (r / SHIFTS.len()) as i64);
            for h in 0..n {
                let target = (h / TYPE_SIZE) as i64 + shift;
                if !(0..types).contains(&target) {
                    continue;
                }
                let lo = target as usize * TYPE_SIZE;
                let mut members: Vec<usize> = (lo..(lo + TYPE_SIZE).min(n)).filter(|&t| t != h).collect();
                members.shuffle(&mut rng);
                for &t in members.iter().take(TAILS) {
                    facts.push((h, r, t));
                }
            }
        }
        facts.shuffle(&mut rng);
        let need = self.train + self.valid + self.test;
        facts.truncate(need.min(facts.len()));

        let names: Vec<(String, String, String)> = facts.iter().map(|&(h, r, t)| (ent(h), rel(r), ent(t))).collect();
        fn as_refs(s: &[(String, String, String)]) -> Vec<(&str, &str, &str)> {
            s.iter().map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str())).collect()
        }
        let n_train = self.train.min(names.len());
        let (tr, rest) = names.split_at(n_train);
        let (va, te) = rest.split_at(self.valid.min(rest.len()));
        let kg = KnowledgeGraph::from_named(&as_refs(tr), &as_refs(va), &as_refs(te))?;

        let mut known = facts[..n_train].to_vec();
        known.shuffle(&mut rng);
        let mut described = facts[n_train..].to_vec();
        described.extend(known);
        let mut texts = Vec::with_capacity(self.descriptions);
        let mut records = Vec::with_capacity(self.descriptions);
        for id in 0..self.descriptions {
            let (h, _, t) = described[id % described.len()];
            let w1 = rng.random_range(0..FILLER);
            let w2 = rng.random_range(0..FILLER);
            let text = format!("{} {} w{w1} w{w2}", ent(h), ent(t));
            let (hid, tid) = (kg.entity_id(&ent(h)).unwrap(), kg.entity_id(&ent(t)).unwrap());
            records.push(Description::new(id, text.clone(), [hid, tid]));
            texts.push(text);
        }
        let vectors = synth_embed(&texts, self.text_dim, self.seed);
        let corpus = DescriptionCorpus::new(records, vectors, "synth")?;
        Ok(Toy { kg, corpus })
    }
}

/// Paths of a toy dataset written to disk.
#[derive(Clone, Debug)]
pub struct ToyFiles {
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
    pub meta: PathBuf,
    pub vectors: PathBuf,
}

impl Toy {
    pub fn write(&self, dir: &Path) -> Result<ToyFiles> {
        let [train, valid, test] = self.kg.write_tsv(dir)?;
        let meta = dir.join("descriptions.jsonl");
        let vectors = dir.join("descriptions.emb");
        self.corpus.write(&meta, &vectors, &self.kg)?;
        Ok(ToyFiles {
            train,
            valid,
            test,
            meta,
            vectors,
        })
    }
}

/// Training settings used for the toy data: the defaults with a small
/// embedding width.
pub fn train_config() -> TrainConfig {
    TrainConfig {
        dim: 32,
        epochs: 150,
        ..TrainConfig::default()
    }
}

/// A run config for files written by [`Toy::write`], with paths relative to
/// `dir`.
pub fn config_text(files: &ToyFiles, dir: &Path) -> String {
    let rel = |p: &Path| p.strip_prefix(dir).unwrap_or(p).display().to_string();
    let t = train_config();
    format!(
        "# synthetic toy dataset\ntrain = {}\nvalid = {}\ntest = {}\ncorpus_meta = {}\ncorpus_vectors = {}\nout_dir = run\n\
         dim = {}\nepochs = {}\nk = {}\nseed = {}\nk_sweep = 1..8\n",
        rel(&files.train),
        rel(&files.valid),
        rel(&files.test),
        rel(&files.meta),
        rel(&files.vectors),
        t.dim,
        t.epochs,
        t.k,
        t.seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_toy_shape() {
        let toy = ToySpec::default().build().unwrap();
        assert_eq!(toy.kg.num_entities(), 20);
        assert_eq!(toy.kg.num_relations(), 5);
        assert_eq!(toy.kg.train.len(), 100);
        assert_eq!(toy.corpus.len(), 60);
        assert!(toy.corpus.records.iter().all(|d| d.mentions.len() == 2));
    }
}
