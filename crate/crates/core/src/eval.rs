//! Link prediction, relation prediction and triplet classification.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::DescriptionCorpus;
use crate::error::{Error, Result};
use crate::graph::{stratify, KnowledgeGraph, Triple};
use crate::linalg::{l1_dist, Matrix};
use crate::retriever::{fuse_set, RetrievalResult};
use crate::trainer::DrkaModel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub id: usize,
    pub score: f64,
}

/// Mid-rank of `target`: `1 + #better + #tied/2`, ties excluding the target.
pub fn rank_of(candidates: &[ScoredCandidate], target: usize) -> Result<f64> {
    let t = candidates
        .iter()
        .find(|c| c.id == target)
        .ok_or_else(|| Error::Eval(format!("target {target} not among candidates")))?;
    Ok(mid_rank(candidates.iter().filter(|c| c.id != target).map(|c| c.score), t.score))
}

fn mid_rank(others: impl Iterator<Item = f64>, target: f64) -> f64 {
    let (mut better, mut ties) = (0usize, 0usize);
    for s in others {
        if s > target {
            better += 1;
        } else if s == target {
            ties += 1;
        }
    }
    1.0 + better as f64 + ties as f64 / 2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    pub mr: f64,
    pub hits: BTreeMap<usize, f64>,
    pub n: usize,
}

pub fn metrics(ranks: &[f64], cutoffs: &[usize]) -> Result<Metrics> {
    if ranks.is_empty() {
        return Err(Error::Eval("no ranks to summarize".into()));
    }
    let n = ranks.len() as f64;
    Ok(Metrics {
        mrr: ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n,
        mr: ranks.iter().sum::<f64>() / n,
        hits: cutoffs
            .iter()
            .map(|&c| (c, ranks.iter().filter(|&&r| r <= c as f64).count() as f64 / n))
            .collect(),
        n: ranks.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "LP")]
    LinkPrediction,
    #[serde(rename = "RP")]
    RelationPrediction,
    #[serde(rename = "TP")]
    TripletClassification,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    Overall,
    WithMentions,
    WithoutMentions,
}

impl Stratum {
    pub fn label(self) -> &'static str {
        match self {
            Stratum::Overall => "Overall",
            Stratum::WithMentions => "With mentions",
            Stratum::WithoutMentions => "Without mentions",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub stratum: Stratum,
    pub metrics: BTreeMap<String, f64>,
    pub filtered: bool,
    pub n_queries: usize,
    /// TP column (`valid`, `head`, `tail`, `all`) and corruption source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
}

impl EvalReport {
    /// Checks metric ranges: MRR in (0,1], Hits@N and accuracy in [0,1], MR >= 1.
    pub fn check(&self) -> Result<()> {
        for (k, &v) in &self.metrics {
            let ok = match k.as_str() {
                "MRR" => v > 0.0 && v <= 1.0,
                "MR" => v >= 1.0,
                k if k.starts_with("Hits@") || k == "accuracy" => (0.0..=1.0).contains(&v),
                _ => v.is_finite(),
            };
            if !ok {
                return Err(Error::Eval(format!("metric {k} = {v} out of range")));
            }
        }
        Ok(())
    }

    fn from_ranks(task: Task, stratum: Stratum, filtered: bool, ranks: &[f64], cutoffs: &[usize]) -> Option<Self> {
        let m = metrics(ranks, cutoffs).ok()?;
        let mut map = BTreeMap::new();
        map.insert("MRR".to_owned(), m.mrr);
        map.insert("MR".to_owned(), m.mr);
        for (c, h) in m.hits {
            map.insert(format!("Hits@{c}"), h);
        }
        Some(EvalReport {
            task,
            stratum,
            metrics: map,
            filtered,
            n_queries: ranks.len(),
            variant: None,
        })
    }
}

/// Inference-time triple scoring: model score plus weighted text alignment
/// `-‖fused - anchor‖₁`.
pub struct Scorer<'a> {
    pub model: &'a DrkaModel,
    corpus: &'a DescriptionCorpus,
    projected: Matrix,
    cached_topk: bool,
}

impl<'a> Scorer<'a> {
    pub fn new(model: &'a DrkaModel, corpus: &'a DescriptionCorpus) -> Result<Self> {
        let projected = if corpus.is_empty() {
            Matrix::zeros(0, model.state.dim)
        } else {
            model.proj.project_corpus(corpus)?
        };
        Ok(Scorer {
            model,
            corpus,
            projected,
            cached_topk: false,
        })
    }

    pub fn with_cached_topk(mut self, on: bool) -> Self {
        self.cached_topk = on;
        self
    }

    fn text_enabled(&self) -> bool {
        !self.corpus.is_empty() && self.model.text_weight != 0.0
    }

    pub fn kg_score(&self, t: &Triple) -> f64 {
        self.model.state.score(t)
    }

    pub fn retrieve(&self, t: &Triple) -> Option<RetrievalResult> {
        if self.corpus.is_empty() {
            return None;
        }
        let q = self.model.state.triple_query(t);
        self.model.selector.select(&q, &self.projected, t.head, t.tail).ok()
    }

    fn text_term(&self, t: &Triple, fused: &[f64]) -> f64 {
        -l1_dist(fused, &self.model.state.anchor(t))
    }

    pub fn score(&self, t: &Triple) -> f64 {
        let kg = self.kg_score(t);
        if !self.text_enabled() {
            return kg;
        }
        match self.retrieve(t) {
            Some(r) => kg + self.model.text_weight * self.text_term(t, &r.fused),
            None => kg,
        }
    }

    /// Scores `t` fusing a given description set instead of retrieving one.
    pub fn score_with_docs(&self, t: &Triple, doc_ids: &[usize]) -> f64 {
        let kg = self.kg_score(t);
        if !self.text_enabled() {
            return kg;
        }
        let q = self.model.state.triple_query(t);
        let r = fuse_set(&q, &self.projected, doc_ids);
        kg + self.model.text_weight * self.text_term(t, &r.fused)
    }

    /// Scores of all `candidates` built from a true triple; in cached mode they
    /// all reuse the true triple's description set.
    fn score_candidates(&self, truth: &Triple, candidates: impl Iterator<Item = Triple>) -> Vec<f64> {
        if self.cached_topk && self.text_enabled() {
            let ids = self.retrieve(truth).map(|r| r.doc_ids).unwrap_or_default();
            candidates.map(|c| self.score_with_docs(&c, &ids)).collect()
        } else {
            candidates.map(|c| self.score(&c)).collect()
        }
    }
}

pub(crate) fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Head and tail ranks for one triple. Filtered mode drops candidates that
/// form another known-true triple.
pub fn link_ranks(kg: &KnowledgeGraph, t: &Triple, scorer: &Scorer<'_>, filtered: bool) -> (f64, f64) {
    let ne = kg.num_entities();
    let keep = |c: &Triple, is_target: bool| is_target || !filtered || !kg.is_true(c);

    let heads: Vec<Triple> = (0..ne)
        .map(|e| Triple::new(e, t.relation, t.tail))
        .filter(|c| keep(c, c.head == t.head))
        .collect();
    let hs = scorer.score_candidates(t, heads.iter().copied());
    let target = hs[heads.iter().position(|c| c.head == t.head).unwrap()];
    let head_rank = mid_rank(
        heads.iter().zip(&hs).filter(|(c, _)| c.head != t.head).map(|(_, s)| *s),
        target,
    );

    let tails: Vec<Triple> = (0..ne)
        .map(|e| Triple::new(t.head, t.relation, e))
        .filter(|c| keep(c, c.tail == t.tail))
        .collect();
    let ts = scorer.score_candidates(t, tails.iter().copied());
    let target = ts[tails.iter().position(|c| c.tail == t.tail).unwrap()];
    let tail_rank = mid_rank(
        tails.iter().zip(&ts).filter(|(c, _)| c.tail != t.tail).map(|(_, s)| *s),
        target,
    );
    (head_rank, tail_rank)
}

/// Concatenated head and tail ranks (`[h0, t0, h1, t1, ...]`) over `split`.
pub fn link_prediction_ranks(kg: &KnowledgeGraph, split: &[Triple], scorer: &Scorer<'_>, filtered: bool) -> Vec<f64> {
    par_map(split, |t| link_ranks(kg, t, scorer, filtered))
        .into_iter()
        .flat_map(|(h, t)| [h, t])
        .collect()
}

pub const LP_CUTOFFS: [usize; 3] = [1, 3, 10];

/// Link prediction reports for the overall, with-mentions and
/// without-mentions strata of `split`. Empty strata are omitted.
pub fn link_prediction(
    kg: &KnowledgeGraph,
    split: &[Triple],
    scorer: &Scorer<'_>,
    corpus: &DescriptionCorpus,
    filtered: bool,
) -> Result<Vec<EvalReport>> {
    if split.is_empty() {
        return Err(Error::Eval("empty evaluation split".into()));
    }
    let per: HashMap<Triple, (f64, f64)> = split
        .iter()
        .copied()
        .zip(par_map(split, |t| link_ranks(kg, t, scorer, filtered)))
        .collect();
    let (with, without) = stratify(corpus, split);
    let ranks = |ts: &[Triple]| ts.iter().flat_map(|t| {
        let (h, tl) = per[t];
        [h, tl]
    }).collect::<Vec<_>>();
    Ok([
        (Stratum::Overall, ranks(split)),
        (Stratum::WithMentions, ranks(&with)),
        (Stratum::WithoutMentions, ranks(&without)),
    ]
    .into_iter()
    .filter_map(|(s, r)| EvalReport::from_ranks(Task::LinkPrediction, s, filtered, &r, &LP_CUTOFFS))
    .collect())
}

pub fn relation_rank(kg: &KnowledgeGraph, t: &Triple, scorer: &Scorer<'_>, filtered: bool) -> f64 {
    let cands: Vec<Triple> = (0..kg.num_relations())
        .map(|r| Triple::new(t.head, r, t.tail))
        .filter(|c| c.relation == t.relation || !filtered || !kg.is_true(c))
        .collect();
    let scores = scorer.score_candidates(t, cands.iter().copied());
    let target = scores[cands.iter().position(|c| c.relation == t.relation).unwrap()];
    mid_rank(
        cands.iter().zip(&scores).filter(|(c, _)| c.relation != t.relation).map(|(_, s)| *s),
        target,
    )
}

pub const RP_CUTOFFS: [usize; 2] = [1, 3];

/// Relation prediction reports (overall and without-mentions strata).
pub fn relation_prediction(
    kg: &KnowledgeGraph,
    split: &[Triple],
    scorer: &Scorer<'_>,
    corpus: &DescriptionCorpus,
    filtered: bool,
) -> Result<Vec<EvalReport>> {
    if split.is_empty() {
        return Err(Error::Eval("empty evaluation split".into()));
    }
    let per: HashMap<Triple, f64> = split
        .iter()
        .copied()
        .zip(par_map(split, |t| relation_rank(kg, t, scorer, filtered)))
        .collect();
    let (_, without) = stratify(corpus, split);
    let ranks = |ts: &[Triple]| ts.iter().map(|t| per[t]).collect::<Vec<_>>();
    Ok([
        (Stratum::Overall, ranks(split)),
        (Stratum::WithoutMentions, ranks(&without)),
    ]
    .into_iter()
    .filter_map(|(s, r)| EvalReport::from_ranks(Task::RelationPrediction, s, filtered, &r, &RP_CUTOFFS))
    .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptSource {
    Kg,
    CorpusMentions,
}

/// Decision threshold maximizing accuracy of `score >= threshold ⇒ valid`.
/// Candidates are the lowest score, midpoints between consecutive distinct
/// scores, and `+∞`; ties go to the lowest threshold.
pub fn fit_threshold(pairs: &[(f64, bool)]) -> (f64, f64) {
    if pairs.is_empty() {
        return (0.0, 0.0);
    }
    let mut sorted: Vec<(f64, bool)> = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = sorted.len() as f64;
    let total_pos = sorted.iter().filter(|p| p.1).count();
    // threshold at sorted[0].0: everything predicted valid
    let mut best = (sorted[0].0, total_pos as f64 / n);
    let (mut neg_below, mut pos_below) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == v {
            if sorted[i].1 {
                pos_below += 1;
            } else {
                neg_below += 1;
            }
            i += 1;
        }
        let thr = if i < sorted.len() {
            0.5 * (v + sorted[i].0)
        } else {
            f64::INFINITY
        };
        let acc = (neg_below + total_pos - pos_below) as f64 / n;
        if acc > best.1 {
            best = (thr, acc);
        }
    }
    best
}

pub fn accuracy_at(pairs: &[(f64, bool)], threshold: f64) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().filter(|(s, y)| (*s >= threshold) == *y).count() as f64 / pairs.len() as f64
}

/// Per-relation thresholds with a global fallback.
#[derive(Clone, Debug, PartialEq)]
pub struct Thresholds {
    pub per_relation: HashMap<usize, f64>,
    pub global: f64,
}

impl Thresholds {
    pub fn fit(labelled: &[(Triple, f64, bool)]) -> Self {
        let mut by_rel: BTreeMap<usize, Vec<(f64, bool)>> = BTreeMap::new();
        for &(t, s, y) in labelled {
            by_rel.entry(t.relation).or_default().push((s, y));
        }
        let all: Vec<(f64, bool)> = labelled.iter().map(|&(_, s, y)| (s, y)).collect();
        Thresholds {
            per_relation: by_rel.into_iter().map(|(r, p)| (r, fit_threshold(&p).0)).collect(),
            global: fit_threshold(&all).0,
        }
    }

    pub fn get(&self, relation: usize) -> f64 {
        self.per_relation.get(&relation).copied().unwrap_or(self.global)
    }
}

fn pick_other<R: Rng + ?Sized>(rng: &mut R, pool: &[usize], exclude: usize) -> Option<usize> {
    let n = pool.len() - usize::from(pool.binary_search(&exclude).is_ok());
    if n == 0 {
        return None;
    }
    let mut i = rng.random_range(0..n);
    for &p in pool {
        if p == exclude {
            continue;
        }
        if i == 0 {
            return Some(p);
        }
        i -= 1;
    }
    None
}

/// Corrupted version of `t` for classification: `column` is `head`, `tail` or
/// `all` (head, relation and tail replaced). Replacement entities come from
/// `pool` (sorted). Corruptions that are true triples are resampled.
pub fn tp_corrupt<R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    t: &Triple,
    column: &str,
    pool: &[usize],
    rng: &mut R,
) -> Option<Triple> {
    let relations: Vec<usize> = (0..kg.num_relations()).collect();
    for _ in 0..1000 {
        let mut c = *t;
        match column {
            "head" => c.head = pick_other(rng, pool, t.head)?,
            "tail" => c.tail = pick_other(rng, pool, t.tail)?,
            _ => {
                c.head = pick_other(rng, pool, t.head)?;
                c.relation = pick_other(rng, &relations, t.relation)?;
                c.tail = pick_other(rng, pool, t.tail)?;
            }
        }
        if !kg.is_true(&c) {
            return Some(c);
        }
    }
    None
}

pub const TP_COLUMNS: [&str; 4] = ["valid", "head", "tail", "all"];

/// Scored material for classification: validation pairs for threshold
/// fitting and, per test triple, its score plus the score of each corruption.
#[derive(Clone, Debug, PartialEq)]
pub struct TpInstance {
    pub valid: Vec<(Triple, f64, bool)>,
    pub test: Vec<(Triple, f64)>,
    /// column name → (corrupted triple, score) per test triple that could be corrupted
    pub corrupted: BTreeMap<String, Vec<(Triple, f64)>>,
}

pub fn tp_instance<R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    score: impl Fn(&Triple) -> f64,
    pool: &[usize],
    rng: &mut R,
) -> TpInstance {
    let mut valid = Vec::new();
    for v in &kg.valid {
        valid.push((*v, score(v), true));
        let col = ["head", "tail", "all"][rng.random_range(0..3)];
        if let Some(c) = tp_corrupt(kg, v, col, pool, rng) {
            valid.push((c, score(&c), false));
        }
    }
    let test: Vec<(Triple, f64)> = kg.test.iter().map(|t| (*t, score(t))).collect();
    let mut corrupted = BTreeMap::new();
    for col in ["head", "tail", "all"] {
        let v: Vec<(Triple, f64)> = kg
            .test
            .iter()
            .filter_map(|t| tp_corrupt(kg, t, col, pool, rng))
            .map(|c| (c, score(&c)))
            .collect();
        corrupted.insert(col.to_owned(), v);
    }
    TpInstance {
        valid,
        test,
        corrupted,
    }
}

/// Accuracy per column: `valid` over the true test triples alone, the
/// corruption columns over the balanced set of true triples plus that
/// column's corruptions.
pub fn tp_accuracies(inst: &TpInstance, th: &Thresholds) -> BTreeMap<String, f64> {
    let pos: Vec<bool> = inst.test.iter().map(|(t, s)| *s >= th.get(t.relation)).collect();
    let pos_correct = pos.iter().filter(|b| **b).count();
    let mut out = BTreeMap::new();
    out.insert(
        "valid".to_owned(),
        if pos.is_empty() { 0.0 } else { pos_correct as f64 / pos.len() as f64 },
    );
    for (col, negs) in &inst.corrupted {
        let neg_correct = negs.iter().filter(|(t, s)| *s < th.get(t.relation)).count();
        let n = pos.len() + negs.len();
        let acc = if n == 0 { 0.0 } else { (pos_correct + neg_correct) as f64 / n as f64 };
        out.insert(col.clone(), acc);
    }
    out
}

pub fn triplet_classification<R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    scorer: &Scorer<'_>,
    corpus: &DescriptionCorpus,
    source: CorruptSource,
    rng: &mut R,
) -> Result<Vec<EvalReport>> {
    if kg.test.is_empty() {
        return Err(Error::Eval("empty test split".into()));
    }
    let pool: Vec<usize> = match source {
        CorruptSource::Kg => (0..kg.num_entities()).collect(),
        CorruptSource::CorpusMentions => corpus.mentioned_entities().into_iter().collect(),
    };
    let inst = tp_instance(kg, |t| scorer.score(t), &pool, rng);
    let th = Thresholds::fit(&inst.valid);
    let acc = tp_accuracies(&inst, &th);
    let tag = match source {
        CorruptSource::Kg => "",
        CorruptSource::CorpusMentions => "*",
    };
    Ok(TP_COLUMNS
        .iter()
        .map(|col| {
            let n = if *col == "valid" {
                inst.test.len()
            } else {
                inst.test.len() + inst.corrupted[*col].len()
            };
            EvalReport {
                task: Task::TripletClassification,
                stratum: Stratum::Overall,
                metrics: BTreeMap::from([("accuracy".to_owned(), acc[*col])]),
                filtered: true,
                n_queries: n,
                variant: Some(format!("{col}{tag}")),
            }
        })
        .collect())
}

fn pct(v: Option<&f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |v| format!("{:.1}", 100.0 * v))
}

/// Markdown tables in the usual LP / RP / TP layouts.
pub fn render_markdown(model_name: &str, reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let find = |task: Task, stratum: Stratum, filtered: bool| {
        reports
            .iter()
            .find(|r| r.task == task && r.stratum == stratum && r.filtered == filtered && r.variant.is_none())
    };
    for filtered in [true, false] {
        let strata = [Stratum::Overall, Stratum::WithMentions, Stratum::WithoutMentions];
        if strata.iter().all(|s| find(Task::LinkPrediction, *s, filtered).is_none()) {
            continue;
        }
        let _ = writeln!(
            out,
            "### Link prediction ({})\n",
            if filtered { "filtered" } else { "raw" }
        );
        let _ = writeln!(out, "| Model | Overall MRR | Overall Hits@10 | With MRR | With Hits@10 | Without MRR | Without Hits@10 |");
        let _ = writeln!(out, "|---|---|---|---|---|---|---|");
        let mut row = format!("| {model_name} |");
        for s in strata {
            let r = find(Task::LinkPrediction, s, filtered);
            let _ = write!(
                row,
                " {} | {} |",
                pct(r.and_then(|r| r.metrics.get("MRR"))),
                pct(r.and_then(|r| r.metrics.get("Hits@10")))
            );
        }
        let _ = writeln!(out, "{row}\n");
    }
    if reports.iter().any(|r| r.task == Task::RelationPrediction) {
        let _ = writeln!(out, "### Relation prediction\n");
        let _ = writeln!(out, "| Model | Overall MR | Overall Hits@1 | Without MR | Without Hits@1 |");
        let _ = writeln!(out, "|---|---|---|---|---|");
        let mut row = format!("| {model_name} |");
        for s in [Stratum::Overall, Stratum::WithoutMentions] {
            let r = reports.iter().find(|r| r.task == Task::RelationPrediction && r.stratum == s);
            let mr = r.and_then(|r| r.metrics.get("MR")).map_or("-".to_owned(), |v| format!("{v:.2}"));
            let _ = write!(row, " {mr} | {} |", pct(r.and_then(|r| r.metrics.get("Hits@1"))));
        }
        let _ = writeln!(out, "{row}\n");
    }
    let tp: Vec<&EvalReport> = reports.iter().filter(|r| r.task == Task::TripletClassification).collect();
    if !tp.is_empty() {
        let _ = writeln!(out, "### Triplet classification accuracy (%)\n");
        let _ = writeln!(out, "| Model | e_s,r,e_o | e_s',r,e_o | e_s,r,e_o' | e_s',r',e_o' |");
        let _ = writeln!(out, "|---|---|---|---|---|");
        for tag in ["", "*"] {
            let cell = |col: &str| {
                let v = format!("{col}{tag}");
                pct(tp.iter().find(|r| r.variant.as_deref() == Some(&v)).and_then(|r| r.metrics.get("accuracy")))
            };
            if tp.iter().any(|r| r.variant.as_deref().is_some_and(|v| v.ends_with('*') == (tag == "*"))) {
                let _ = writeln!(
                    out,
                    "| {model_name}{tag} | {} | {} | {} | {} |",
                    cell("valid"),
                    cell("head"),
                    cell("tail"),
                    cell("all")
                );
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cands(scores: &[f64]) -> Vec<ScoredCandidate> {
        scores
            .iter()
            .enumerate()
            .map(|(id, &score)| ScoredCandidate { id, score })
            .collect()
    }

    #[test]
    fn rank_cases() {
        assert_eq!(rank_of(&cands(&[3.0, 1.0, 2.0]), 0).unwrap(), 1.0);
        assert_eq!(rank_of(&cands(&[3.0, 3.0, 2.0]), 1).unwrap(), 1.5);
        assert!(rank_of(&cands(&[1.0]), 5).is_err());
    }

    #[test]
    fn metric_cases() {
        let m = metrics(&[1.0], &[10]).unwrap();
        assert_eq!((m.mrr, m.mr, m.hits[&10]), (1.0, 1.0, 1.0));
        let m = metrics(&[1.0, 2.0, 4.0], &[1]).unwrap();
        assert!((m.mrr - 1.75 / 3.0).abs() < 1e-15);
        assert!((m.mr - 7.0 / 3.0).abs() < 1e-15);
        assert!((m.hits[&1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(metrics(&[11.0, 12.0], &[10]).unwrap().hits[&10], 0.0);
        assert!(metrics(&[], &[10]).is_err());
    }

    #[test]
    fn threshold_fit_separable_and_constant() {
        let sep = [(1.0, true), (1.0, true), (-1.0, false), (-1.0, false)];
        let (t, acc) = fit_threshold(&sep);
        assert_eq!((t, acc), (0.0, 1.0));
        let constant = [(0.3, true), (0.3, false)];
        let (t, acc) = fit_threshold(&constant);
        assert_eq!((t, acc), (0.3, 0.5));
    }

    #[test]
    fn report_check_rejects_bad_ranges() {
        let mut r = EvalReport {
            task: Task::LinkPrediction,
            stratum: Stratum::Overall,
            metrics: BTreeMap::from([("MRR".to_owned(), 0.5), ("MR".to_owned(), 2.0)]),
            filtered: true,
            n_queries: 2,
            variant: None,
        };
        assert!(r.check().is_ok());
        r.metrics.insert("MR".to_owned(), 0.5);
        assert!(r.check().is_err());
    }
}
