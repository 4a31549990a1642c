#![allow(dead_code)]

use drka_core::corpus::{Description, DescriptionCorpus};
use drka_core::graph::{KnowledgeGraph, Triple};
use drka_core::linalg::Matrix;
use drka_core::models::{EmbeddingState, ModelKind, TripleQuery};
use drka_core::optim::Gradients;
use drka_core::retriever::{fuse_backward, fuse_set, top_k, doc_scores_projected, Projection, ProjectionGrad};
use drka_core::retriever::DocSelector;
use drka_core::trainer::{align_loss, batch_loss, retrieval_loss, AlignInput, DrkaModel, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-4;

/// Central difference of `f` at `x` along every coordinate.
pub fn fd_grad(x: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + eps;
            let up = f(&y);
            y[i] = x[i] - eps;
            let down = f(&y);
            y[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// `‖a - b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Largest `|a - b| / max(1, |b|)` over coordinates.
pub fn component_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / n.abs().max(1.0))
        .fold(0.0, f64::max)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Matrix {
    Matrix::from_vec(rows, cols, uniform_vec(rng, rows * cols, bound))
}

pub fn random_dim(rng: &mut ChaCha8Rng, kind: ModelKind) -> usize {
    let d = rng.random_range(1..=4) * 2;
    if kind.is_complex() {
        d
    } else {
        d + rng.random_range(0..2)
    }
}

fn state_from(kind: ModelKind, dim: usize, entities: Matrix, relations: Matrix) -> EmbeddingState {
    EmbeddingState {
        kind,
        dim,
        entities,
        relations,
    }
}

fn relation_width(kind: ModelKind, dim: usize) -> usize {
    if kind == ModelKind::RotatE {
        dim / 2
    } else {
        dim
    }
}

/// Distance of a triple from the non-differentiable set of its score.
fn score_kink_distance(state: &EmbeddingState, t: &Triple) -> f64 {
    let a = state.anchor(t);
    let tail = state.entities.row(t.tail);
    match state.kind {
        ModelKind::TransE => a.iter().zip(tail).map(|(x, y)| (x - y).abs()).fold(f64::INFINITY, f64::min),
        ModelKind::RotatE => {
            let h = state.dim / 2;
            (0..h)
                .map(|j| (a[j] - tail[j]).hypot(a[j + h] - tail[j + h]))
                .fold(f64::INFINITY, f64::min)
        }
        _ => f64::INFINITY,
    }
}

/// Worst error of `score_grad` over `n` random instances of `kind`, taking the
/// larger of the vector-relative and component-wise measures.
pub fn check_score_gradients(kind: ModelKind, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < n {
        let dim = random_dim(&mut rng, kind);
        let rw = relation_width(kind, dim);
        let h = uniform_vec(&mut rng, dim, 1.0);
        let r = uniform_vec(&mut rng, rw, if kind == ModelKind::RotatE { 3.0 } else { 1.0 });
        let t = uniform_vec(&mut rng, dim, 1.0);
        let triple = Triple::new(0, 0, 1);
        let build = |h: &[f64], r: &[f64], t: &[f64]| {
            let mut ents = h.to_vec();
            ents.extend_from_slice(t);
            state_from(kind, dim, Matrix::from_vec(2, dim, ents), Matrix::from_vec(1, rw, r.to_vec()))
        };
        let state = build(&h, &r, &t);
        if score_kink_distance(&state, &triple) < 1e-3 {
            continue;
        }
        let g = state.score_grad(&triple);
        let mut analytic = g.head.clone();
        analytic.extend_from_slice(&g.relation);
        analytic.extend_from_slice(&g.tail);

        let mut x = h.clone();
        x.extend_from_slice(&r);
        x.extend_from_slice(&t);
        let numeric = fd_grad(&x, FD_EPS, |x| {
            build(&x[..dim], &x[dim..dim + rw], &x[dim + rw..]).score(&triple)
        });
        worst = worst.max(rel_err(&analytic, &numeric)).max(component_err(&analytic, &numeric));
        done += 1;
    }
    worst
}

/// Worst relative error of the margin loss gradient with respect to fused
/// vectors, anchors and structural energies.
pub fn check_align_gradients(n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < n {
        let l = rng.random_range(2..=6);
        let negs = rng.random_range(1..=4);
        let gamma = rng.random_range(0.0..2.0);
        let sides = negs + 1;
        // layout per side: fused (l), anchor (l), energy (1)
        let width = 2 * l + 1;
        let x = uniform_vec(&mut rng, sides * width, 1.0);
        let loss_at = |x: &[f64]| {
            let inputs: Vec<AlignInput<'_>> = (0..sides)
                .map(|s| {
                    let o = s * width;
                    AlignInput {
                        fused: &x[o..o + l],
                        anchor: &x[o + l..o + 2 * l],
                        kg_energy: x[o + 2 * l],
                    }
                })
                .collect();
            align_loss(&inputs[0], &inputs[1..], gamma)
        };
        let al = loss_at(&x);
        let near_kink = (0..sides).any(|s| {
            let o = s * width;
            (0..l).any(|j| (x[o + j] - x[o + l + j]).abs() < 1e-3)
        }) || {
            let d = |s: usize| {
                let o = s * width;
                (0..l).map(|j| (x[o + j] - x[o + l + j]).abs()).sum::<f64>() + x[o + 2 * l]
            };
            (1..sides).any(|s| (gamma + d(0) - d(s)).abs() < 1e-3)
        };
        if near_kink {
            continue;
        }
        let mut analytic = Vec::with_capacity(x.len());
        for g in std::iter::once(&al.pos).chain(&al.negs) {
            analytic.extend_from_slice(&g.fused);
            analytic.extend_from_slice(&g.anchor);
            analytic.push(g.kg_energy);
        }
        let numeric = fd_grad(&x, FD_EPS, |x| loss_at(x).loss);
        worst = worst.max(rel_err(&analytic, &numeric));
        done += 1;
    }
    worst
}

pub fn corpus_from(vectors: Matrix, mentions: &[Vec<usize>]) -> DescriptionCorpus {
    let records = (0..vectors.rows())
        .map(|i| Description::new(i, format!("d{i}"), mentions.get(i).cloned().unwrap_or_default()))
        .collect();
    DescriptionCorpus::new(records, vectors, "test").unwrap()
}

fn project(w: &Matrix, b: &[f64], corpus: &DescriptionCorpus) -> Matrix {
    Projection {
        weight: w.clone(),
        bias: b.to_vec(),
    }
    .project_corpus(corpus)
    .unwrap()
}

fn pack(q: &Matrix, w: &Matrix, b: &[f64]) -> Vec<f64> {
    let mut x = q.as_slice().to_vec();
    x.extend_from_slice(w.as_slice());
    x.extend_from_slice(b);
    x
}

fn unpack(x: &[f64], l: usize, m: usize) -> (TripleQuery, Matrix, Vec<f64>) {
    let q = TripleQuery {
        rows: Matrix::from_vec(3, l, x[..3 * l].to_vec()),
    };
    let w = Matrix::from_vec(l, m, x[3 * l..3 * l + l * m].to_vec());
    let b = x[3 * l + l * m..].to_vec();
    (q, w, b)
}

/// Worst relative error of the retrieval cross-entropy gradient with respect
/// to the query rows and the projection, full-corpus softmax.
pub fn check_retrieval_gradients(n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let (l, m, c) = (rng.random_range(2..=5), rng.random_range(2..=5), rng.random_range(2..=8));
        let corpus = corpus_from(random_matrix(&mut rng, c, m, 1.0), &[]);
        let gold: Vec<usize> = {
            let mut g: Vec<usize> = (0..c).filter(|_| rng.random_bool(0.3)).collect();
            if g.is_empty() {
                g.push(rng.random_range(0..c));
            }
            g
        };
        let q = random_matrix(&mut rng, 3, l, 1.0);
        let w = random_matrix(&mut rng, l, m, 1.0);
        let b = uniform_vec(&mut rng, l, 0.5);
        let loss = |x: &[f64]| {
            let (q, w, b) = unpack(x, l, m);
            let projected = project(&w, &b, &corpus);
            let mut r = ChaCha8Rng::seed_from_u64(0);
            retrieval_loss(&q, &projected, &corpus, &gold, 0, &mut r).unwrap()
        };
        let x = pack(&q, &w, &b);
        let rl = loss(&x);
        let analytic = pack(&rl.query, &rl.projection.weight, &rl.projection.bias);
        let numeric = fd_grad(&x, FD_EPS, |x| loss(x).loss);
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

/// Worst relative error of `g · fused` through top-k selection, attention and
/// fusion, with the selected set held fixed (instances whose k-th and
/// (k+1)-th scores are within 1e-3 are redrawn).
pub fn check_fuse_gradients(n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < n {
        let (l, m, c) = (rng.random_range(2..=5), rng.random_range(2..=5), rng.random_range(2..=8));
        let k = rng.random_range(1..=c);
        let corpus = corpus_from(random_matrix(&mut rng, c, m, 1.0), &[]);
        let q = random_matrix(&mut rng, 3, l, 1.0);
        let w = random_matrix(&mut rng, l, m, 1.0);
        let b = uniform_vec(&mut rng, l, 0.5);
        let g = uniform_vec(&mut rng, l, 1.0);
        let x = pack(&q, &w, &b);

        let (q0, w0, b0) = unpack(&x, l, m);
        let projected = project(&w0, &b0, &corpus);
        let mut scores = doc_scores_projected(&q0, &projected);
        scores.sort_by(|a, b| b.total_cmp(a));
        if k < c && scores[k - 1] - scores[k] < 1e-3 {
            continue;
        }
        let ids = top_k(&doc_scores_projected(&q0, &projected), k).unwrap();
        let res = fuse_set(&q0, &projected, &ids);
        let mut gq = Matrix::zeros(3, l);
        let mut gproj = ProjectionGrad::zeros(l, m);
        fuse_backward(&q0, &projected, &corpus, &res, &g, &mut gq, &mut gproj);
        let analytic = pack(&gq, &gproj.weight, &gproj.bias);

        let numeric = fd_grad(&x, FD_EPS, |x| {
            let (q, w, b) = unpack(x, l, m);
            let projected = project(&w, &b, &corpus);
            let ids = top_k(&doc_scores_projected(&q, &projected), k).unwrap();
            let fused = fuse_set(&q, &projected, &ids).fused;
            fused.iter().zip(&g).map(|(a, b)| a * b).sum()
        });
        worst = worst.max(rel_err(&analytic, &numeric));
        done += 1;
    }
    worst
}

/// A small random graph with a mention-annotated random corpus.
pub fn random_problem(rng: &mut ChaCha8Rng, entities: usize, relations: usize, triples: usize, docs: usize, text_dim: usize) -> (KnowledgeGraph, DescriptionCorpus) {
    let mut set = std::collections::BTreeSet::new();
    while set.len() < triples {
        let h = rng.random_range(0..entities);
        let t = rng.random_range(0..entities);
        if h != t {
            set.insert((h, rng.random_range(0..relations), t));
        }
    }
    let names: Vec<(String, String, String)> = set.iter().map(|(h, r, t)| (format!("e{h}"), format!("r{r}"), format!("e{t}"))).collect();
    let refs: Vec<(&str, &str, &str)> = names.iter().map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str())).collect();
    let kg = KnowledgeGraph::from_named(&refs, &[], &[]).unwrap();
    let mentions: Vec<Vec<usize>> = (0..docs)
        .map(|_| {
            let a = rng.random_range(0..kg.num_entities());
            let b = rng.random_range(0..kg.num_entities());
            vec![a, b]
        })
        .collect();
    let corpus = corpus_from(random_matrix(rng, docs, text_dim, 1.0), &mentions);
    (kg, corpus)
}

fn model_params(m: &DrkaModel) -> Vec<f64> {
    let mut x = m.state.entities.as_slice().to_vec();
    x.extend_from_slice(m.state.relations.as_slice());
    x.extend_from_slice(m.proj.weight.as_slice());
    x.extend_from_slice(&m.proj.bias);
    x
}

fn set_model_params(m: &mut DrkaModel, x: &[f64]) {
    let mut o = 0;
    for dst in [
        m.state.entities.as_mut_slice(),
        m.state.relations.as_mut_slice(),
        m.proj.weight.as_mut_slice(),
        m.proj.bias.as_mut_slice(),
    ] {
        let n = dst.len();
        dst.copy_from_slice(&x[o..o + n]);
        o += n;
    }
}

fn dense_grads(m: &DrkaModel, g: &Gradients) -> Vec<f64> {
    let mut e = Matrix::zeros(m.state.entities.rows(), m.state.entities.cols());
    for (&i, row) in &g.entities {
        e.row_mut(i).copy_from_slice(row);
    }
    let mut r = Matrix::zeros(m.state.relations.rows(), m.state.relations.cols());
    for (&i, row) in &g.relations {
        r.row_mut(i).copy_from_slice(row);
    }
    let mut x = e.as_slice().to_vec();
    x.extend_from_slice(r.as_slice());
    x.extend_from_slice(g.projection.weight.as_slice());
    x.extend_from_slice(&g.projection.bias);
    x
}

/// Full training loss (margin term plus weighted retrieval term, negatives
/// and retrieval fixed by a seeded RNG) against central differences over
/// every parameter. Coordinates where the difference quotient at `eps` and
/// `eps / 10` disagree sit on a kink (L1, hinge or top-k boundary) and are
/// left out. Returns the worst relative error and the fraction left out.
pub fn check_pipeline_gradients(n: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let (mut skipped, mut total) = (0usize, 0usize);
    for i in 0..n {
        let kind = drka_core::ModelKind::ALL[i % 4];
        let (kg, corpus) = random_problem(&mut rng, 6, 2, 6, 8, 3);
        let dim = if kind.is_complex() { 4 } else { rng.random_range(3..=4) };
        let cfg = TrainConfig {
            dim,
            model_kind: kind,
            k: rng.random_range(1..=4),
            alpha: rng.random_range(0.0..2.0),
            gamma: rng.random_range(0.5..2.0),
            negatives_per_triple: 3,
            retrieval_candidates: 0,
            text_weight: 1.0,
            ..TrainConfig::default()
        };
        let mut init_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let state = EmbeddingState::init(kind, kg.num_entities(), kg.num_relations(), dim, &mut init_rng).unwrap();
        let mut proj = Projection::init(dim, corpus.dim(), &mut init_rng);
        proj.bias = uniform_vec(&mut init_rng, dim, 0.3);
        let mut model = DrkaModel {
            state,
            proj,
            selector: DocSelector::TopK(cfg.k),
            text_weight: 1.0,
        };
        let batch: Vec<Triple> = kg.train.iter().copied().take(3).collect();
        let step_seed: u64 = rng.random();
        let loss = |m: &DrkaModel| {
            let mut r = ChaCha8Rng::seed_from_u64(step_seed);
            batch_loss(&kg, m, &corpus, &cfg, &batch, &mut r).unwrap()
        };
        let (_, grads) = loss(&model);
        let analytic = dense_grads(&model, &grads);
        let x = model_params(&model);
        let mut probe = model.clone();
        let mut f = |x: &[f64]| {
            set_model_params(&mut probe, x);
            loss(&probe).0.total
        };
        let coarse = fd_grad(&x, FD_EPS, &mut f);
        let fine = fd_grad(&x, FD_EPS / 10.0, &mut f);
        let keep: Vec<usize> = (0..x.len())
            .filter(|&j| (coarse[j] - fine[j]).abs() <= 1e-4 * coarse[j].abs().max(1.0))
            .collect();
        skipped += x.len() - keep.len();
        total += x.len();
        let a: Vec<f64> = keep.iter().map(|&j| analytic[j]).collect();
        let b: Vec<f64> = keep.iter().map(|&j| coarse[j]).collect();
        worst = worst.max(rel_err(&a, &b));
        set_model_params(&mut model, &x);
    }
    (worst, skipped as f64 / total as f64)
}
