//! Joint optimization of the embedding tables and the description projection.
//!
//! Each positive triple contributes a margin ranking term against its sampled
//! negatives plus, weighted by `alpha`, a retrieval cross-entropy over
//! descriptions. The per-triple dissimilarity used by the margin term is
//!
//! ```text
//! d(t) = ‖fused(t) - anchor(t)‖₁ + energy(t)
//! ```
//!
//! where `anchor` is the model's head/relation composition and
//! `energy = -score` is the model's own triple energy, so the text side and
//! the structural side are trained against the same target.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::DescriptionCorpus;
use crate::error::{Error, Result};
use crate::eval::{self, Scorer};
use crate::graph::{KnowledgeGraph, Triple};
use crate::linalg::{normalize_in_place, sign0, Matrix};
use crate::models::{check_dim, EmbeddingState, ModelKind, TripleQuery};
use crate::optim::{Gradients, Optimizer, OptimizerKind};
use crate::retriever::{
    fuse_backward, log_sum_exp, score_backward, doc_score, DocSelector, FixedSets, Projection,
    ProjectionGrad, RetrievalResult,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub k: usize,
    pub negatives_per_triple: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub dim: usize,
    pub model_kind: ModelKind,
    /// Softmax denominator sample size for the retrieval loss; 0 = full corpus.
    pub retrieval_candidates: usize,
    /// Weight of the text alignment term in inference-time scoring.
    pub text_weight: f64,
    /// Replace retrieval with fixed per-entity description sets.
    pub no_retriever: bool,
    pub descs_per_entity: usize,
    /// Reuse the true triple's retrieved set for every candidate at evaluation.
    pub eval_cached_topk: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            gamma: 1.0,
            k: 5,
            negatives_per_triple: 100,
            lr: 1e-3,
            epochs: 70,
            batch_size: 8,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            dim: 200,
            model_kind: ModelKind::TransE,
            retrieval_candidates: 256,
            text_weight: 1.0,
            no_retriever: false,
            descs_per_entity: 2,
            eval_cached_topk: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.alpha.is_nan() || self.alpha < 0.0 {
            return bad(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if self.gamma.is_nan() || self.gamma < 0.0 {
            return bad(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if self.k == 0 {
            return bad("k must be >= 1".into());
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.negatives_per_triple == 0 {
            return bad("negatives_per_triple must be >= 1".into());
        }
        if self.no_retriever && self.descs_per_entity == 0 {
            return bad("descs_per_entity must be >= 1".into());
        }
        check_dim(self.model_kind, self.dim)
    }
}

/// Everything needed to score triples: embeddings, projection, and how
/// descriptions are chosen.
#[derive(Clone, Debug, PartialEq)]
pub struct DrkaModel {
    pub state: EmbeddingState,
    pub proj: Projection,
    pub selector: DocSelector,
    pub text_weight: f64,
}

/// One side (the positive or one negative) of a margin comparison.
#[derive(Clone, Copy, Debug)]
pub struct AlignInput<'a> {
    pub fused: &'a [f64],
    pub anchor: &'a [f64],
    /// Structural energy `-score`; zero for a pure text alignment.
    pub kg_energy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignGrad {
    pub fused: Vec<f64>,
    pub anchor: Vec<f64>,
    pub kg_energy: f64,
}

impl AlignGrad {
    fn zeros(l: usize) -> Self {
        AlignGrad {
            fused: vec![0.0; l],
            anchor: vec![0.0; l],
            kg_energy: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignLoss {
    pub loss: f64,
    pub pos: AlignGrad,
    pub negs: Vec<AlignGrad>,
}

pub fn dissimilarity(x: &AlignInput<'_>) -> f64 {
    crate::linalg::l1_dist(x.fused, x.anchor) + x.kg_energy
}

/// Margin ranking hinge `Σ_neg max(γ + d(pos) - d(neg), 0)` with gradients for
/// every input. Inactive hinges contribute nothing.
pub fn align_loss(pos: &AlignInput<'_>, negs: &[AlignInput<'_>], gamma: f64) -> AlignLoss {
    let l = pos.fused.len();
    let d_pos = dissimilarity(pos);
    let mut out = AlignLoss {
        loss: 0.0,
        pos: AlignGrad::zeros(l),
        negs: Vec::with_capacity(negs.len()),
    };
    let mut active = 0.0;
    for neg in negs {
        let margin = gamma + d_pos - dissimilarity(neg);
        let mut g = AlignGrad::zeros(l);
        if margin.is_nan() {
            out.loss = f64::NAN;
        } else if margin > 0.0 {
            out.loss += margin;
            active += 1.0;
            for j in 0..l {
                let s = sign0(neg.fused[j] - neg.anchor[j]);
                g.fused[j] = -s;
                g.anchor[j] = s;
            }
            g.kg_energy = -1.0;
        }
        out.negs.push(g);
    }
    for j in 0..l {
        let s = sign0(pos.fused[j] - pos.anchor[j]);
        out.pos.fused[j] = active * s;
        out.pos.anchor[j] = -active * s;
    }
    out.pos.kg_energy = active;
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalLoss {
    pub loss: f64,
    /// `∂L/∂query`, 3×l
    pub query: Matrix,
    pub projection: ProjectionGrad,
}

/// Candidate set for the retrieval softmax: gold plus `candidates` uniformly
/// sampled descriptions, or the whole corpus when `candidates` is 0 or covers it.
pub fn retrieval_candidates<R: Rng + ?Sized>(
    corpus_len: usize,
    gold: &[usize],
    candidates: usize,
    rng: &mut R,
) -> Vec<usize> {
    if candidates == 0 || candidates >= corpus_len {
        return (0..corpus_len).collect();
    }
    let mut ids: Vec<usize> = rand::seq::index::sample(rng, corpus_len, candidates).into_vec();
    ids.extend_from_slice(gold);
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// `-log` of the softmax mass the candidate set assigns to the gold
/// descriptions. `None` when there is no gold description.
pub fn retrieval_loss<R: Rng + ?Sized>(
    q: &TripleQuery,
    projected: &Matrix,
    corpus: &DescriptionCorpus,
    gold: &[usize],
    candidates: usize,
    rng: &mut R,
) -> Option<RetrievalLoss> {
    if gold.is_empty() || corpus.is_empty() {
        return None;
    }
    let cand = retrieval_candidates(corpus.len(), gold, candidates, rng);
    let scores: Vec<f64> = cand.iter().map(|&i| doc_score(q, projected.row(i))).collect();
    let is_gold: Vec<bool> = cand.iter().map(|i| gold.binary_search(i).is_ok()).collect();
    let lse_all = log_sum_exp(scores.iter().copied());
    let gold_scores = scores.iter().zip(&is_gold).filter(|(_, g)| **g).map(|(s, _)| *s);
    let lse_gold = log_sum_exp(gold_scores);
    let loss = (lse_all - lse_gold).max(0.0);

    let mut gq = Matrix::zeros(3, q.dim());
    let mut gproj = ProjectionGrad::zeros(projected.cols(), corpus.dim());
    for ((&i, &s), &g) in cand.iter().zip(&scores).zip(&is_gold) {
        let mut d = (s - lse_all).exp();
        if g {
            d -= (s - lse_gold).exp();
        }
        let gp = score_backward(q, projected.row(i), d, &mut gq);
        gproj.add_projected(&gp, corpus.vector(i));
    }
    Some(RetrievalLoss {
        loss,
        query: gq,
        projection: gproj,
    })
}

/// Forward pass for one triple.
struct Side {
    triple: Triple,
    query: TripleQuery,
    res: RetrievalResult,
    anchor: Vec<f64>,
    kg_energy: f64,
}

impl Side {
    fn input(&self) -> AlignInput<'_> {
        AlignInput {
            fused: &self.res.fused,
            anchor: &self.anchor,
            kg_energy: self.kg_energy,
        }
    }
}

fn forward(model: &DrkaModel, projected: &Matrix, t: Triple) -> Result<Side> {
    let query = model.state.triple_query(&t);
    let res = model.selector.select(&query, projected, t.head, t.tail)?;
    Ok(Side {
        triple: t,
        anchor: model.state.anchor(&t),
        kg_energy: -model.state.score(&t),
        res,
        query,
    })
}

fn add_query_grad(state: &EmbeddingState, t: &Triple, gq: &Matrix, grads: &mut Gradients, scale: f64) {
    grads.add_entity(t.head, gq.row(0), scale);
    grads.add_relation(t.relation, &state.relation_pullback(t.relation, gq.row(1)), scale);
    grads.add_entity(t.tail, gq.row(2), scale);
}

fn backward(
    state: &EmbeddingState,
    projected: &Matrix,
    corpus: &DescriptionCorpus,
    side: &Side,
    g: &AlignGrad,
    grads: &mut Gradients,
) {
    let t = &side.triple;
    if g.fused.iter().any(|v| *v != 0.0) {
        let mut gq = Matrix::zeros(3, state.dim);
        fuse_backward(&side.query, projected, corpus, &side.res, &g.fused, &mut gq, &mut grads.projection);
        add_query_grad(state, t, &gq, grads, 1.0);
    }
    if g.anchor.iter().any(|v| *v != 0.0) {
        let (gh, gr) = state.anchor_backward(t, &g.anchor);
        grads.add_entity(t.head, &gh, 1.0);
        grads.add_relation(t.relation, &gr, 1.0);
    }
    if g.kg_energy != 0.0 {
        let sg = state.score_grad(t);
        grads.add_entity(t.head, &sg.head, -g.kg_energy);
        grads.add_relation(t.relation, &sg.relation, -g.kg_energy);
        grads.add_entity(t.tail, &sg.tail, -g.kg_energy);
    }
}

/// Loss and gradient of one positive triple.
#[derive(Clone, Debug)]
pub struct TripleLoss {
    pub align: f64,
    pub retrieval: f64,
    pub grads: Gradients,
}

#[derive(Clone, Copy, Debug)]
pub struct TextInputs<'a> {
    pub corpus: &'a DescriptionCorpus,
    pub projected: &'a Matrix,
}

pub fn triple_loss(
    kg: &KnowledgeGraph,
    model: &DrkaModel,
    text: TextInputs<'_>,
    cfg: &TrainConfig,
    pos: Triple,
    rng: &mut ChaCha8Rng,
) -> Result<TripleLoss> {
    let negatives = kg.sample_negatives(pos, cfg.negatives_per_triple, rng)?;
    let state = &model.state;
    let mut grads = Gradients::zeros(state.dim, text.corpus.dim());

    let pos_side = forward(model, text.projected, pos)?;
    let neg_sides = negatives
        .iter()
        .map(|n| forward(model, text.projected, n.triple))
        .collect::<Result<Vec<_>>>()?;
    let neg_inputs: Vec<AlignInput<'_>> = neg_sides.iter().map(Side::input).collect();
    let al = align_loss(&pos_side.input(), &neg_inputs, cfg.gamma);
    backward(state, text.projected, text.corpus, &pos_side, &al.pos, &mut grads);
    for (side, g) in neg_sides.iter().zip(&al.negs) {
        backward(state, text.projected, text.corpus, side, g, &mut grads);
    }

    let mut retrieval = 0.0;
    if cfg.alpha > 0.0 && matches!(model.selector, DocSelector::TopK(_)) {
        let gold = text.corpus.gold_for(&pos);
        if let Some(rl) = retrieval_loss(&pos_side.query, text.projected, text.corpus, &gold, cfg.retrieval_candidates, rng) {
            retrieval = rl.loss;
            add_query_grad(state, &pos, &rl.query, &mut grads, cfg.alpha);
            grads.projection.add_scaled(&rl.projection, cfg.alpha);
        }
    }
    Ok(TripleLoss {
        align: al.loss,
        retrieval,
        grads,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub align: f64,
    pub retrieval: f64,
    pub total: f64,
}

/// Batch-mean losses and gradient, without touching parameters. Randomness
/// (negatives, retrieval candidates) is drawn from `rng`.
pub fn batch_loss(
    kg: &KnowledgeGraph,
    model: &DrkaModel,
    corpus: &DescriptionCorpus,
    cfg: &TrainConfig,
    batch: &[Triple],
    rng: &mut ChaCha8Rng,
) -> Result<(StepLosses, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let projected = model.proj.project_corpus(corpus)?;
    let text = TextInputs {
        corpus,
        projected: &projected,
    };
    let seeds: Vec<u64> = batch.iter().map(|_| rng.next_u64()).collect();
    let work = |(i, (&t, &seed)): (usize, (&Triple, &u64))| -> Result<TripleLoss> {
        let mut local = ChaCha8Rng::seed_from_u64(seed);
        let tl = triple_loss(kg, model, text, cfg, t, &mut local)?;
        if !tl.align.is_finite() || !tl.retrieval.is_finite() || !tl.grads.all_finite() {
            return Err(Error::NonFinite { index: i, triple: t });
        }
        Ok(tl)
    };
    #[cfg(feature = "parallel")]
    let per_triple: Vec<Result<TripleLoss>> = {
        use rayon::prelude::*;
        batch.par_iter().zip(seeds.par_iter()).enumerate().map(work).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let per_triple: Vec<Result<TripleLoss>> = batch.iter().zip(seeds.iter()).enumerate().map(work).collect();

    let scale = 1.0 / batch.len() as f64;
    let mut grads = Gradients::zeros(model.state.dim, corpus.dim());
    let (mut align, mut retrieval) = (0.0, 0.0);
    for tl in per_triple {
        let tl = tl?;
        align += tl.align;
        retrieval += tl.retrieval;
        grads.merge(&tl.grads, scale);
    }
    align *= scale;
    retrieval *= scale;
    let total = align + cfg.alpha * retrieval;
    Ok((
        StepLosses {
            align,
            retrieval,
            total,
        },
        grads,
    ))
}

/// One optimizer update on a mini-batch; returns the losses measured before
/// the update.
pub fn joint_step(
    kg: &KnowledgeGraph,
    model: &mut DrkaModel,
    opt: &mut Optimizer,
    corpus: &DescriptionCorpus,
    cfg: &TrainConfig,
    batch: &[Triple],
    rng: &mut ChaCha8Rng,
) -> Result<StepLosses> {
    let (losses, grads) = batch_loss(kg, model, corpus, cfg, batch, rng)?;
    let touched = opt.apply(&mut model.state, &mut model.proj, &grads);
    if model.state.kind == ModelKind::TransE {
        for e in touched {
            normalize_in_place(model.state.entities.row_mut(e));
        }
    }
    Ok(losses)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub align: f64,
    pub retrieval: f64,
    pub total: f64,
    pub valid_mrr: f64,
}

pub fn trace_csv(trace: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,align,retrieval,total,valid_mrr\n");
    for r in trace {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.align, r.retrieval, r.total, r.valid_mrr
        ));
    }
    s
}

/// Complete training state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: DrkaModel,
    pub optimizer: Optimizer,
    /// Number of completed epochs.
    pub epoch: usize,
    /// Position of the training RNG stream (seeded from `config.seed`).
    pub rng_word_pos: u128,
    pub best_valid_mrr: f64,
    pub skipped_triples: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// State with the best validation MRR (the final state if there is no
    /// validation split).
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub trace: Vec<EpochRecord>,
}

/// Initial checkpoint: fresh embeddings, projection and optimizer state.
pub fn initialize(kg: &KnowledgeGraph, corpus: &DescriptionCorpus, cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    if !cfg.no_retriever && cfg.k > corpus.len() {
        return Err(Error::Config(format!(
            "k = {} exceeds corpus size {}",
            cfg.k,
            corpus.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let state = EmbeddingState::init(cfg.model_kind, kg.num_entities(), kg.num_relations(), cfg.dim, &mut rng)?;
    let proj = Projection::init(cfg.dim, corpus.dim(), &mut rng);
    let selector = if cfg.no_retriever {
        DocSelector::Fixed(FixedSets::sample(corpus, kg.num_entities(), cfg.descs_per_entity, &mut rng))
    } else {
        DocSelector::TopK(cfg.k)
    };
    let skipped = match &selector {
        DocSelector::Fixed(s) => kg.train.iter().filter(|t| !s.covers(t.head, t.tail)).count(),
        DocSelector::TopK(_) => 0,
    };
    let optimizer = Optimizer::new(cfg.optimizer, cfg.lr, &state, &proj);
    Ok(Checkpoint {
        config: cfg.clone(),
        model: DrkaModel {
            state,
            proj,
            selector,
            text_weight: cfg.text_weight,
        },
        optimizer,
        epoch: 0,
        rng_word_pos: rng.get_word_pos(),
        best_valid_mrr: f64::NEG_INFINITY,
        skipped_triples: skipped,
    })
}

pub fn validation_mrr(kg: &KnowledgeGraph, model: &DrkaModel, corpus: &DescriptionCorpus, cached_topk: bool) -> Result<f64> {
    if kg.valid.is_empty() {
        return Ok(f64::NAN);
    }
    let scorer = Scorer::new(model, corpus)?.with_cached_topk(cached_topk);
    let ranks = eval::link_prediction_ranks(kg, &kg.valid, &scorer, true);
    Ok(eval::metrics(&ranks, &[])?.mrr)
}

pub fn train(kg: &KnowledgeGraph, corpus: &DescriptionCorpus, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let init = initialize(kg, corpus, cfg)?;
    resume(kg, corpus, init, cfg.epochs)
}

/// Continues training from `ckpt` until `total_epochs` epochs are complete.
pub fn resume(kg: &KnowledgeGraph, corpus: &DescriptionCorpus, ckpt: Checkpoint, total_epochs: usize) -> Result<TrainOutcome> {
    let cfg = ckpt.config.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_word_pos(ckpt.rng_word_pos);
    let mut cur = ckpt;
    let mut best = cur.clone();
    let mut trace = Vec::new();

    let train_set: Vec<Triple> = kg
        .train
        .iter()
        .copied()
        .filter(|t| cur.model.selector.covers(t.head, t.tail))
        .collect();
    if train_set.is_empty() && total_epochs > cur.epoch {
        return Err(Error::Config("no trainable triples".into()));
    }

    while cur.epoch < total_epochs {
        let mut order = train_set.clone();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let (mut align, mut retrieval, mut total) = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let l = joint_step(kg, &mut cur.model, &mut cur.optimizer, corpus, &cfg, batch, &mut rng)?;
            let w = batch.len() as f64;
            align += l.align * w;
            retrieval += l.retrieval * w;
            total += l.total * w;
        }
        let n = order.len() as f64;
        cur.epoch += 1;
        cur.rng_word_pos = rng.get_word_pos();
        let valid_mrr = validation_mrr(kg, &cur.model, corpus, cfg.eval_cached_topk)?;
        log::info!(
            "epoch {} align {:.4} retrieval {:.4} valid_mrr {:.4}",
            cur.epoch,
            align / n,
            retrieval / n,
            valid_mrr
        );
        trace.push(EpochRecord {
            epoch: cur.epoch,
            align: align / n,
            retrieval: retrieval / n,
            total: total / n,
            valid_mrr,
        });
        if valid_mrr > cur.best_valid_mrr {
            cur.best_valid_mrr = valid_mrr;
            best = cur.clone();
        }
        best.best_valid_mrr = cur.best_valid_mrr;
    }
    if kg.valid.is_empty() {
        best = cur.clone();
    }
    Ok(TrainOutcome {
        best,
        last: cur,
        trace,
    })
}
