//! Dense description retrieval and attention fusion.
//!
//! A description vector `d` is projected into entity space as `W d + b`. Its
//! relevance to a triple is the L2 norm of the three inner products between
//! the query rows `[head; relation; tail]` and the projected vector. The top-k
//! descriptions by relevance are softmax-weighted (renormalized over the k
//! selected) and summed into the fused triple representation.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::DescriptionCorpus;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Matrix};
use crate::models::TripleQuery;

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// `l × m`
    pub weight: Matrix,
    /// length `l`
    pub bias: Vec<f64>,
}

impl Projection {
    /// Uniform `[-1/√m, 1/√m]` weights, zero bias.
    pub fn init<R: Rng + ?Sized>(kg_dim: usize, text_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (text_dim.max(1) as f64).sqrt();
        let data = (0..kg_dim * text_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Projection {
            weight: Matrix::from_vec(kg_dim, text_dim, data),
            bias: vec![0.0; kg_dim],
        }
    }

    pub fn kg_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn text_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn project(&self, d: &[f64]) -> Result<Vec<f64>> {
        if d.len() != self.text_dim() || self.bias.len() != self.kg_dim() {
            return Err(Error::Shape(format!(
                "projection is {}x{} (bias {}), input has length {}",
                self.kg_dim(),
                self.text_dim(),
                self.bias.len(),
                d.len()
            )));
        }
        let mut out = self.weight.mat_vec(d);
        out.iter_mut().zip(&self.bias).for_each(|(o, b)| *o += b);
        Ok(out)
    }

    /// Projects every corpus vector; row `i` is description `i` in entity space.
    pub fn project_corpus(&self, corpus: &DescriptionCorpus) -> Result<Matrix> {
        let mut out = Matrix::zeros(corpus.len(), self.kg_dim());
        for i in 0..corpus.len() {
            out.row_mut(i).copy_from_slice(&self.project(corpus.vector(i))?);
        }
        Ok(out)
    }

    pub fn all_finite(&self) -> bool {
        self.weight.all_finite() && self.bias.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl ProjectionGrad {
    pub fn zeros(kg_dim: usize, text_dim: usize) -> Self {
        ProjectionGrad {
            weight: Matrix::zeros(kg_dim, text_dim),
            bias: vec![0.0; kg_dim],
        }
    }

    /// Accumulates `∂L/∂(W d + b) = g` for raw description vector `d`.
    pub fn add_projected(&mut self, g: &[f64], d: &[f64]) {
        self.weight.add_outer(1.0, g, d);
        axpy(1.0, g, &mut self.bias);
    }

    pub fn add_scaled(&mut self, other: &ProjectionGrad, scale: f64) {
        axpy(scale, other.weight.as_slice(), self.weight.as_mut_slice());
        axpy(scale, &other.bias, &mut self.bias);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub doc_ids: Vec<usize>,
    pub attention: Vec<f64>,
    pub fused: Vec<f64>,
}

/// Inner products of each query row with a projected description.
pub fn similarity(q: &TripleQuery, d_proj: &[f64]) -> [f64; 3] {
    [
        dot(q.head(), d_proj),
        dot(q.relation(), d_proj),
        dot(q.tail(), d_proj),
    ]
}

fn norm3(s: &[f64; 3]) -> f64 {
    (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt()
}

pub fn doc_score(q: &TripleQuery, d_proj: &[f64]) -> f64 {
    norm3(&similarity(q, d_proj))
}

pub fn doc_scores(q: &TripleQuery, proj: &Projection, corpus: &DescriptionCorpus) -> Result<Vec<f64>> {
    if corpus.is_empty() {
        return Err(Error::Corpus("retrieval over an empty corpus".into()));
    }
    let projected = proj.project_corpus(corpus)?;
    Ok(doc_scores_projected(q, &projected))
}

pub fn doc_scores_projected(q: &TripleQuery, projected: &Matrix) -> Vec<f64> {
    projected.iter_rows().map(|p| doc_score(q, p)).collect()
}

/// Softmax with max subtraction.
pub fn attention(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
    out
}

/// `log Σ exp(s_i)` over the given scores.
pub fn log_sum_exp(scores: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = scores.clone().fold(f64::NEG_INFINITY, f64::max);
    max + scores.map(|s| (s - max).exp()).sum::<f64>().ln()
}

fn rank_order(scores: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// Indices of the `k` largest scores in descending order; ties go to the
/// smaller index.
pub fn top_k(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > scores.len() {
        return Err(Error::Config(format!(
            "top-k needs 1 <= k <= {}, got {k}",
            scores.len()
        )));
    }
    let cmp = rank_order(scores);
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, &cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(&cmp);
    Ok(idx)
}

/// Attention-weighted fusion over an explicit description set.
pub fn fuse_set(q: &TripleQuery, projected: &Matrix, doc_ids: &[usize]) -> RetrievalResult {
    let l = projected.cols();
    if doc_ids.is_empty() {
        return RetrievalResult {
            doc_ids: Vec::new(),
            attention: Vec::new(),
            fused: vec![0.0; l],
        };
    }
    let scores: Vec<f64> = doc_ids
        .iter()
        .map(|&i| doc_score(q, projected.row(i)))
        .collect();
    let att = attention(&scores);
    let mut fused = vec![0.0; l];
    for (&i, &a) in doc_ids.iter().zip(&att) {
        axpy(a, projected.row(i), &mut fused);
    }
    RetrievalResult {
        doc_ids: doc_ids.to_vec(),
        attention: att,
        fused,
    }
}

pub fn fuse_projected(q: &TripleQuery, projected: &Matrix, k: usize) -> Result<RetrievalResult> {
    let scores = doc_scores_projected(q, projected);
    let ids = top_k(&scores, k)?;
    Ok(fuse_set(q, projected, &ids))
}

/// Scores all descriptions, keeps the top `k`, renormalizes attention over
/// them and returns the weighted sum of their projections.
pub fn fuse(q: &TripleQuery, proj: &Projection, corpus: &DescriptionCorpus, k: usize) -> Result<RetrievalResult> {
    if corpus.is_empty() {
        return Err(Error::Corpus("retrieval over an empty corpus".into()));
    }
    let projected = proj.project_corpus(corpus)?;
    fuse_projected(q, &projected, k)
}

/// Backpropagates `g = ∂L/∂score` through `score = ‖Q p‖₂` into the query
/// (`gq`, 3×l) and returns `∂L/∂p`.
pub fn score_backward(q: &TripleQuery, p: &[f64], g: f64, gq: &mut Matrix) -> Vec<f64> {
    let s = similarity(q, p);
    let n = norm3(&s);
    if n == 0.0 || g == 0.0 {
        return vec![0.0; p.len()];
    }
    let u = [s[0] / n, s[1] / n, s[2] / n];
    gq.add_outer(g, &u, p);
    q.rows.mat_t_vec(&u).into_iter().map(|v| g * v).collect()
}

/// Gradient of a loss through [`fuse_set`], with the selected set held fixed.
/// Accumulates into the query gradient `gq` (3×l) and the projection gradient.
pub fn fuse_backward(
    q: &TripleQuery,
    projected: &Matrix,
    corpus: &DescriptionCorpus,
    res: &RetrievalResult,
    g_fused: &[f64],
    gq: &mut Matrix,
    gproj: &mut ProjectionGrad,
) {
    if res.doc_ids.is_empty() {
        return;
    }
    let gp_dot: Vec<f64> = res
        .doc_ids
        .iter()
        .map(|&i| dot(g_fused, projected.row(i)))
        .collect();
    let mean: f64 = res.attention.iter().zip(&gp_dot).map(|(a, g)| a * g).sum();
    for ((&i, &a), &gd) in res.doc_ids.iter().zip(&res.attention).zip(&gp_dot) {
        let p = projected.row(i);
        let g_score = a * (gd - mean);
        let mut gp = score_backward(q, p, g_score, gq);
        axpy(a, g_fused, &mut gp);
        gproj.add_projected(&gp, corpus.vector(i));
    }
}

/// How the description set for a triple is chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DocSelector {
    /// Exact top-k retrieval over the whole corpus.
    TopK(usize),
    /// A fixed, pre-sampled set per entity; a triple uses its head's set
    /// followed by its tail's set. No retrieval is performed.
    Fixed(FixedSets),
}

impl DocSelector {
    pub fn select(&self, q: &TripleQuery, projected: &Matrix, head: usize, tail: usize) -> Result<RetrievalResult> {
        match self {
            DocSelector::TopK(k) => fuse_projected(q, projected, *k),
            DocSelector::Fixed(sets) => Ok(fuse_set(q, projected, &sets.for_pair(head, tail))),
        }
    }

    /// Whether a triple has any descriptions to fuse under this selector.
    pub fn covers(&self, head: usize, tail: usize) -> bool {
        match self {
            DocSelector::TopK(_) => true,
            DocSelector::Fixed(sets) => sets.covers(head, tail),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedSets {
    pub per_entity: Vec<Vec<usize>>,
}

impl FixedSets {
    /// Samples up to `per_entity` distinct descriptions mentioning each entity,
    /// uniformly without replacement.
    pub fn sample<R: Rng + ?Sized>(
        corpus: &DescriptionCorpus,
        num_entities: usize,
        per_entity: usize,
        rng: &mut R,
    ) -> Self {
        let per_entity = (0..num_entities)
            .map(|e| {
                let pool = corpus.mentioning(e);
                let n = per_entity.min(pool.len());
                let mut picked: Vec<usize> = rand::seq::index::sample(rng, pool.len(), n)
                    .into_iter()
                    .map(|i| pool[i])
                    .collect();
                picked.sort_unstable();
                picked
            })
            .collect();
        FixedSets { per_entity }
    }

    pub fn for_pair(&self, head: usize, tail: usize) -> Vec<usize> {
        let mut ids = self.per_entity[head].clone();
        ids.extend_from_slice(&self.per_entity[tail]);
        ids
    }

    pub fn covers(&self, head: usize, tail: usize) -> bool {
        !self.per_entity[head].is_empty() && !self.per_entity[tail].is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Description;

    fn query(rows: &[Vec<f64>]) -> TripleQuery {
        TripleQuery {
            rows: Matrix::from_rows(rows),
        }
    }

    fn corpus(vectors: &[Vec<f64>]) -> DescriptionCorpus {
        let recs = (0..vectors.len()).map(|i| Description::new(i, "", [])).collect();
        DescriptionCorpus::new(recs, Matrix::from_rows(vectors), "t").unwrap()
    }

    #[test]
    fn projection_cases() {
        let id = Projection {
            weight: Matrix::identity(3),
            bias: vec![0.0; 3],
        };
        assert_eq!(id.project(&[1.0, -2.0, 3.0]).unwrap(), vec![1.0, -2.0, 3.0]);
        let bias_only = Projection {
            weight: Matrix::zeros(2, 3),
            bias: vec![1.0, 1.0],
        };
        assert_eq!(bias_only.project(&[4.0, 5.0, 6.0]).unwrap(), vec![1.0, 1.0]);
        let w = Projection {
            weight: Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]),
            bias: vec![0.0, 0.0],
        };
        assert_eq!(w.project(&[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
        assert!(matches!(w.project(&[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn similarity_cases() {
        let q = query(&[vec![1.0, 1.0], vec![2.0, 0.0], vec![0.0, 3.0]]);
        assert_eq!(similarity(&q, &[0.0, 0.0]), [0.0, 0.0, 0.0]);
        assert_eq!(similarity(&q, &[1.0, 2.0]), [3.0, 2.0, 6.0]);
        let basis = query(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        assert_eq!(similarity(&basis, &[4.0, 5.0, 6.0]), [4.0, 5.0, 6.0]);
    }

    #[test]
    fn doc_score_is_norm_of_similarity() {
        let basis = query(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        assert_eq!(doc_score(&basis, &[3.0, 4.0, 0.0]), 5.0);
        let c = corpus(&[vec![0.0, 0.0], vec![0.0, 0.0]]);
        let p = Projection {
            weight: Matrix::identity(2),
            bias: vec![0.0, 0.0],
        };
        let q = query(&[vec![1.0, 1.0], vec![2.0, 0.0], vec![0.0, 3.0]]);
        assert_eq!(doc_scores(&q, &p, &c).unwrap(), vec![0.0, 0.0]);
        assert!(doc_scores(&q, &p, &DescriptionCorpus::empty(2)).is_err());
    }

    #[test]
    fn attention_cases() {
        assert_eq!(attention(&[3.7]), vec![1.0]);
        assert_eq!(attention(&[2.0, 2.0]), vec![0.5, 0.5]);
        let a = attention(&[1.0, 2.0, 3.0]);
        let want = [0.09003057317038046, 0.24472847105479767, 0.6652409557748219];
        for (x, y) in a.iter().zip(want) {
            assert!((x - y).abs() < 1e-12);
        }
        // large scores do not overflow
        let big = attention(&[1000.0, 1001.0]);
        assert!(big.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn top_k_cases() {
        assert_eq!(top_k(&[5.0, 1.0, 9.0], 2).unwrap(), vec![2, 0]);
        assert_eq!(top_k(&[1.0, 1.0, 1.0], 2).unwrap(), vec![0, 1]);
        assert!(top_k(&[1.0], 2).is_err());
        assert!(top_k(&[1.0], 0).is_err());
    }

    #[test]
    fn fuse_single_and_symmetric() {
        let c = corpus(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.1, 0.1]]);
        let p = Projection {
            weight: Matrix::identity(2),
            bias: vec![0.0, 0.0],
        };
        // q rows give equal scores to docs 0 and 1
        let q = query(&[vec![1.0, 1.0], vec![0.0, 0.0], vec![0.0, 0.0]]);
        let r = fuse(&q, &p, &c, 1).unwrap();
        assert_eq!(r.attention, vec![1.0]);
        assert_eq!(r.fused, vec![1.0, 0.0]);
        let r = fuse(&q, &p, &c, 2).unwrap();
        assert_eq!(r.doc_ids, vec![0, 1]);
        assert_eq!(r.fused, vec![0.5, 0.5]);
    }
}
