//! Browser demo: trains on the synthetic toy graph and exposes training,
//! retrieval and tail-ranking views as JSON strings.

use drka_core::eval::Scorer;
use drka_core::linalg::l1_dist;
use drka_core::retriever::doc_scores_projected;
use drka_core::toy::{train_config, Toy, ToySpec};
use drka_core::trainer::{initialize, resume, Checkpoint, EpochRecord, TrainConfig};
use drka_core::Triple;
use serde::Serialize;
use wasm_bindgen::prelude::*;

pub struct Session {
    toy: Toy,
    ckpt: Checkpoint,
    trace: Vec<EpochRecord>,
}

#[derive(Serialize)]
pub struct GraphView {
    pub entities: Vec<String>,
    pub relations: Vec<String>,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    pub descriptions: Vec<String>,
}

#[derive(Serialize)]
pub struct DocView {
    pub id: usize,
    pub text: String,
    pub score: f64,
    /// Attention weight when the description is in the retrieved set.
    pub attention: Option<f64>,
    /// Whether the description mentions both the head and the tail.
    pub co_mention: bool,
}

#[derive(Serialize)]
pub struct Explanation {
    pub kg_score: f64,
    pub text_term: f64,
    pub score: f64,
    /// Every description, highest retrieval score first.
    pub docs: Vec<DocView>,
}

#[derive(Serialize)]
pub struct Candidate {
    pub entity: usize,
    pub name: String,
    pub score: f64,
    pub kg_score: f64,
    /// `train`, `valid`, `test`, or empty when the triple is not in the graph.
    pub split: &'static str,
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

impl Session {
    pub fn new(seed: u64, alpha: f64, k: usize) -> Result<Self, String> {
        let toy = ToySpec::default().build().map_err(err)?;
        let cfg = TrainConfig { seed, alpha, k, ..train_config() };
        let ckpt = initialize(&toy.kg, &toy.corpus, &cfg).map_err(err)?;
        Ok(Session { toy, ckpt, trace: Vec::new() })
    }

    pub fn epoch(&self) -> usize {
        self.ckpt.epoch
    }

    /// Trains `epochs` more epochs and returns their trace rows.
    pub fn train(&mut self, epochs: usize) -> Result<Vec<EpochRecord>, String> {
        let target = self.ckpt.epoch + epochs;
        let out = resume(&self.toy.kg, &self.toy.corpus, self.ckpt.clone(), target).map_err(err)?;
        self.ckpt = out.last;
        self.trace.extend_from_slice(&out.trace);
        Ok(out.trace)
    }

    pub fn trace(&self) -> &[EpochRecord] {
        &self.trace
    }

    pub fn graph(&self) -> GraphView {
        let kg = &self.toy.kg;
        GraphView {
            entities: kg.entity_names.clone(),
            relations: kg.relation_names.clone(),
            train: kg.train.clone(),
            valid: kg.valid.clone(),
            test: kg.test.clone(),
            descriptions: self.toy.corpus.records.iter().map(|d| d.text.clone()).collect(),
        }
    }

    fn check(&self, t: &Triple) -> Result<(), String> {
        let (ne, nr) = (self.toy.kg.num_entities(), self.toy.kg.num_relations());
        if t.head >= ne || t.tail >= ne || t.relation >= nr {
            return Err(format!("triple {t:?} out of range ({ne} entities, {nr} relations)"));
        }
        Ok(())
    }

    pub fn explain(&self, t: Triple) -> Result<Explanation, String> {
        self.check(&t)?;
        let model = &self.ckpt.model;
        let corpus = &self.toy.corpus;
        let scorer = Scorer::new(model, corpus).map_err(err)?;
        let retrieved = scorer.retrieve(&t).ok_or("empty corpus")?;
        let anchor = model.state.anchor(&t);
        let text_term = -model.text_weight * l1_dist(&retrieved.fused, &anchor);
        let projected = model.proj.project_corpus(corpus).map_err(err)?;
        let scores = doc_scores_projected(&model.state.triple_query(&t), &projected);
        let mut docs: Vec<DocView> = corpus
            .records
            .iter()
            .map(|d| DocView {
                id: d.id,
                text: d.text.clone(),
                score: scores[d.id],
                attention: retrieved.doc_ids.iter().position(|&i| i == d.id).map(|p| retrieved.attention[p]),
                co_mention: d.mentions.contains(&t.head) && d.mentions.contains(&t.tail),
            })
            .collect();
        docs.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
        Ok(Explanation {
            kg_score: scorer.kg_score(&t),
            text_term,
            score: scorer.score(&t),
            docs,
        })
    }

    /// All tails for `(head, relation, ?)`, best first.
    pub fn rank_tails(&self, head: usize, relation: usize) -> Result<Vec<Candidate>, String> {
        self.check(&Triple::new(head, relation, head))?;
        let kg = &self.toy.kg;
        let scorer = Scorer::new(&self.ckpt.model, &self.toy.corpus).map_err(err)?;
        let mut out: Vec<Candidate> = (0..kg.num_entities())
            .map(|e| {
                let t = Triple::new(head, relation, e);
                let split = [("train", &kg.train), ("valid", &kg.valid), ("test", &kg.test)]
                    .into_iter()
                    .find(|(_, s)| s.contains(&t))
                    .map_or("", |(n, _)| n);
                Candidate {
                    entity: e,
                    name: kg.entity_names[e].clone(),
                    score: scorer.score(&t),
                    kg_score: scorer.kg_score(&t),
                    split,
                }
            })
            .collect();
        out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.entity.cmp(&b.entity)));
        Ok(out)
    }
}

fn json<T: Serialize>(v: &T) -> Result<String, JsValue> {
    serde_json::to_string(v).map_err(|e| JsValue::from_str(&e.to_string()))
}

fn js(e: String) -> JsValue {
    JsValue::from_str(&e)
}

#[wasm_bindgen]
pub struct Demo(Session);

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, alpha: f64, k: u32) -> Result<Demo, JsValue> {
        Session::new(u64::from(seed), alpha, k as usize).map(Demo).map_err(js)
    }

    pub fn epoch(&self) -> u32 {
        self.0.epoch() as u32
    }

    /// Graph, names and description texts.
    pub fn graph(&self) -> Result<String, JsValue> {
        json(&self.0.graph())
    }

    /// Trains more epochs; returns the new trace rows.
    pub fn train(&mut self, epochs: u32) -> Result<String, JsValue> {
        json(&self.0.train(epochs as usize).map_err(js)?)
    }

    pub fn trace(&self) -> Result<String, JsValue> {
        json(&self.0.trace())
    }

    /// Retrieval scores, attention and score decomposition for one triple.
    pub fn explain(&self, head: u32, relation: u32, tail: u32) -> Result<String, JsValue> {
        let t = Triple::new(head as usize, relation as usize, tail as usize);
        json(&self.0.explain(t).map_err(js)?)
    }

    pub fn rank_tails(&self, head: u32, relation: u32) -> Result<String, JsValue> {
        json(&self.0.rank_tails(head as usize, relation as usize).map_err(js)?)
    }
}
