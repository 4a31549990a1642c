//! Knowledge-graph embedding models: TransE, DistMult, ComplEx and RotatE.
//!
//! Every model is written as a composition `anchor = compose(head, relation)`
//! followed by a comparison of the anchor with the tail:
//!
//! | model    | compose                 | score(anchor, tail)          |
//! |----------|-------------------------|------------------------------|
//! | TransE   | `h + r`                 | `-‖anchor - t‖₁`             |
//! | DistMult | `h ∘ r`                 | `⟨anchor, t⟩`                |
//! | ComplEx  | complex `h · r`         | `⟨anchor, t⟩` = `Re⟨h, r, t̄⟩` |
//! | RotatE   | complex `h · e^{iθ}`    | `-Σ |anchor_j - t_j|`        |
//!
//! Scores are oriented higher-is-better for all four. Complex vectors of
//! length `l` store `l/2` real parts followed by `l/2` imaginary parts.
//! RotatE relation rows hold `l/2` phases; [`EmbeddingState::relation_vector`]
//! expands them to the length-`l` vector `[cos θ; sin θ]`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Triple;
use crate::linalg::{dot, normalize_in_place, sign0, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    TransE,
    DistMult,
    ComplEx,
    RotatE,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::TransE,
        ModelKind::DistMult,
        ModelKind::ComplEx,
        ModelKind::RotatE,
    ];

    pub fn is_complex(self) -> bool {
        matches!(self, ModelKind::ComplEx | ModelKind::RotatE)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelKind::TransE => "TransE",
            ModelKind::DistMult => "DistMult",
            ModelKind::ComplEx => "ComplEx",
            ModelKind::RotatE => "RotatE",
        };
        f.write_str(s)
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "transe" => Ok(ModelKind::TransE),
            "distmult" => Ok(ModelKind::DistMult),
            "complex" => Ok(ModelKind::ComplEx),
            "rotate" => Ok(ModelKind::RotatE),
            other => Err(Error::Config(format!(
                "unknown model `{other}` (expected transe, distmult, complex, rotate)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingState {
    pub kind: ModelKind,
    pub dim: usize,
    pub entities: Matrix,
    /// `|R| × l`, or `|R| × l/2` phases for RotatE.
    pub relations: Matrix,
}

/// The `3 × l` query `[head; relation; tail]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripleQuery {
    pub rows: Matrix,
}

impl TripleQuery {
    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn head(&self) -> &[f64] {
        self.rows.row(0)
    }

    pub fn relation(&self) -> &[f64] {
        self.rows.row(1)
    }

    pub fn tail(&self) -> &[f64] {
        self.rows.row(2)
    }
}

/// Gradient with respect to the parameter rows one triple touches.
/// `relation` is in table space (phases for RotatE).
#[derive(Clone, Debug, PartialEq)]
pub struct TripleGrad {
    pub head: Vec<f64>,
    pub relation: Vec<f64>,
    pub tail: Vec<f64>,
}

pub fn check_dim(kind: ModelKind, dim: usize) -> Result<()> {
    if dim < 2 {
        return Err(Error::Config(format!("embedding dimension must be >= 2, got {dim}")));
    }
    if kind.is_complex() && !dim.is_multiple_of(2) {
        return Err(Error::Config(format!("{kind} needs an even dimension, got {dim}")));
    }
    Ok(())
}

impl EmbeddingState {
    /// Uniform `[-6/√l, 6/√l]` initialization; TransE entity rows are then
    /// L2-normalized and RotatE phases are uniform in `[-π, π)`.
    pub fn init<R: Rng + ?Sized>(
        kind: ModelKind,
        num_entities: usize,
        num_relations: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        check_dim(kind, dim)?;
        let bound = 6.0 / (dim as f64).sqrt();
        let mut uniform = |rows: usize, cols: usize, lo: f64, hi: f64| {
            let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
            Matrix::from_vec(rows, cols, data)
        };
        let mut entities = uniform(num_entities, dim, -bound, bound);
        let relations = match kind {
            ModelKind::RotatE => uniform(num_relations, dim / 2, -PI, PI),
            _ => uniform(num_relations, dim, -bound, bound),
        };
        if kind == ModelKind::TransE {
            for i in 0..num_entities {
                normalize_in_place(entities.row_mut(i));
            }
        }
        Ok(EmbeddingState {
            kind,
            dim,
            entities,
            relations,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.entities.rows()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.rows()
    }

    /// Relation as a length-`l` vector in entity space.
    pub fn relation_vector(&self, r: usize) -> Vec<f64> {
        let row = self.relations.row(r);
        match self.kind {
            ModelKind::RotatE => row
                .iter()
                .map(|p| p.cos())
                .chain(row.iter().map(|p| p.sin()))
                .collect(),
            _ => row.to_vec(),
        }
    }

    /// Maps a gradient with respect to [`Self::relation_vector`] back to the
    /// stored relation row.
    pub fn relation_pullback(&self, r: usize, g: &[f64]) -> Vec<f64> {
        match self.kind {
            ModelKind::RotatE => {
                let half = self.dim / 2;
                self.relations
                    .row(r)
                    .iter()
                    .enumerate()
                    .map(|(j, p)| -p.sin() * g[j] + p.cos() * g[j + half])
                    .collect()
            }
            _ => g.to_vec(),
        }
    }

    /// `compose(head, relation)`, the vector the model compares with the tail.
    pub fn anchor(&self, t: &Triple) -> Vec<f64> {
        compose(self.kind, self.entities.row(t.head), &self.relation_vector(t.relation))
    }

    /// Backpropagates `g = ∂L/∂anchor` to `(∂L/∂head, ∂L/∂relation_row)`.
    pub fn anchor_backward(&self, t: &Triple, g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let rv = self.relation_vector(t.relation);
        let (gh, gr) = compose_backward(self.kind, self.entities.row(t.head), &rv, g);
        (gh, self.relation_pullback(t.relation, &gr))
    }

    pub fn score(&self, t: &Triple) -> f64 {
        let a = self.anchor(t);
        let tail = self.entities.row(t.tail);
        match self.kind {
            ModelKind::TransE => -a.iter().zip(tail).map(|(x, y)| (x - y).abs()).sum::<f64>(),
            ModelKind::DistMult | ModelKind::ComplEx => dot(&a, tail),
            ModelKind::RotatE => {
                let half = self.dim / 2;
                -(0..half)
                    .map(|j| (a[j] - tail[j]).hypot(a[j + half] - tail[j + half]))
                    .sum::<f64>()
            }
        }
    }

    /// Analytic gradient of [`Self::score`]; L1 and modulus kinks use the zero
    /// subgradient.
    pub fn score_grad(&self, t: &Triple) -> TripleGrad {
        let a = self.anchor(t);
        let tail = self.entities.row(t.tail);
        let (g_anchor, g_tail): (Vec<f64>, Vec<f64>) = match self.kind {
            ModelKind::TransE => {
                let s: Vec<f64> = a.iter().zip(tail).map(|(x, y)| sign0(x - y)).collect();
                (s.iter().map(|v| -v).collect(), s)
            }
            ModelKind::DistMult | ModelKind::ComplEx => (tail.to_vec(), a.clone()),
            ModelKind::RotatE => {
                let half = self.dim / 2;
                let mut ga = vec![0.0; self.dim];
                for j in 0..half {
                    let (dr, di) = (a[j] - tail[j], a[j + half] - tail[j + half]);
                    let m = dr.hypot(di);
                    if m > 0.0 {
                        ga[j] = -dr / m;
                        ga[j + half] = -di / m;
                    }
                }
                let gt = ga.iter().map(|v| -v).collect();
                (ga, gt)
            }
        };
        let (head, relation) = self.anchor_backward(t, &g_anchor);
        TripleGrad {
            head,
            relation,
            tail: g_tail,
        }
    }

    /// Snapshot of `[head; relation; tail]` from the current tables.
    pub fn triple_query(&self, t: &Triple) -> TripleQuery {
        let mut rows = Matrix::zeros(3, self.dim);
        rows.row_mut(0).copy_from_slice(self.entities.row(t.head));
        rows.row_mut(1).copy_from_slice(&self.relation_vector(t.relation));
        rows.row_mut(2).copy_from_slice(self.entities.row(t.tail));
        TripleQuery { rows }
    }

    pub fn all_finite(&self) -> bool {
        self.entities.all_finite() && self.relations.all_finite()
    }
}

pub fn compose(kind: ModelKind, h: &[f64], r: &[f64]) -> Vec<f64> {
    match kind {
        ModelKind::TransE => h.iter().zip(r).map(|(a, b)| a + b).collect(),
        ModelKind::DistMult => h.iter().zip(r).map(|(a, b)| a * b).collect(),
        ModelKind::ComplEx | ModelKind::RotatE => {
            let half = h.len() / 2;
            let mut out = vec![0.0; h.len()];
            for j in 0..half {
                let (hr, hi, rr, ri) = (h[j], h[j + half], r[j], r[j + half]);
                out[j] = hr * rr - hi * ri;
                out[j + half] = hr * ri + hi * rr;
            }
            out
        }
    }
}

pub fn compose_backward(kind: ModelKind, h: &[f64], r: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    match kind {
        ModelKind::TransE => (g.to_vec(), g.to_vec()),
        ModelKind::DistMult => (
            g.iter().zip(r).map(|(a, b)| a * b).collect(),
            g.iter().zip(h).map(|(a, b)| a * b).collect(),
        ),
        ModelKind::ComplEx | ModelKind::RotatE => {
            let half = h.len() / 2;
            let mut gh = vec![0.0; h.len()];
            let mut gr = vec![0.0; h.len()];
            for j in 0..half {
                let (hr, hi, rr, ri) = (h[j], h[j + half], r[j], r[j + half]);
                let (gre, gim) = (g[j], g[j + half]);
                gh[j] = gre * rr + gim * ri;
                gh[j + half] = -gre * ri + gim * rr;
                gr[j] = gre * hr + gim * hi;
                gr[j + half] = -gre * hi + gim * hr;
            }
            (gh, gr)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state(kind: ModelKind, ent: &[Vec<f64>], rel: &[Vec<f64>]) -> EmbeddingState {
        EmbeddingState {
            kind,
            dim: ent[0].len(),
            entities: Matrix::from_rows(ent),
            relations: Matrix::from_rows(rel),
        }
    }

    #[test]
    fn transe_rows_are_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = EmbeddingState::init(ModelKind::TransE, 5, 2, 4, &mut rng).unwrap();
        assert_eq!((s.entities.rows(), s.entities.cols()), (5, 4));
        for r in s.entities.iter_rows() {
            assert!((crate::linalg::l2_norm(r) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rotate_phases_in_range_and_unit_modulus() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = EmbeddingState::init(ModelKind::RotatE, 5, 3, 4, &mut rng).unwrap();
        assert!(s.relations.as_slice().iter().all(|p| (-PI..PI).contains(p)));
        for r in 0..3 {
            let v = s.relation_vector(r);
            for j in 0..2 {
                assert!((v[j] * v[j] + v[j + 2] * v[j + 2] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = EmbeddingState::init(ModelKind::ComplEx, 4, 2, 6, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = EmbeddingState::init(ModelKind::ComplEx, 4, 2, 6, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn odd_dim_complex_is_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            EmbeddingState::init(ModelKind::RotatE, 2, 1, 5, &mut rng),
            Err(Error::Config(_))
        ));
        assert!(EmbeddingState::init(ModelKind::TransE, 2, 1, 5, &mut rng).is_ok());
    }

    #[test]
    fn transe_exact_translation() {
        let s = state(
            ModelKind::TransE,
            &[vec![1.0, 0.0], vec![1.0, 1.0]],
            &[vec![0.0, 1.0]],
        );
        assert_eq!(s.score(&Triple::new(0, 0, 1)), 0.0);
    }

    #[test]
    fn distmult_hand_value_and_grad() {
        let s = state(
            ModelKind::DistMult,
            &[vec![1.0, 2.0], vec![3.0, 1.0]],
            &[vec![1.0, 1.0]],
        );
        let t = Triple::new(0, 0, 1);
        assert_eq!(s.score(&t), 5.0);
        assert_eq!(s.score_grad(&t).head, vec![3.0, 1.0]);
    }

    #[test]
    fn transe_subgradient() {
        // e_s + r - e_o = [2, -3]
        let s = state(
            ModelKind::TransE,
            &[vec![2.0, 0.0], vec![0.0, 3.0], vec![5.0, 5.0]],
            &[vec![0.0, 0.0]],
        );
        let g = s.score_grad(&Triple::new(0, 0, 1));
        assert_eq!(g.head, vec![-1.0, 1.0]);
        // zero difference in both coordinates
        let g = s.score_grad(&Triple::new(2, 0, 2));
        assert_eq!(g.head, vec![0.0, 0.0]);
    }

    #[test]
    fn rotate_identity_rotation() {
        let s = state(
            ModelKind::RotatE,
            &[vec![0.3, -1.0, 2.0, 0.5]],
            &[vec![0.0, 0.0]],
        );
        assert_eq!(s.score(&Triple::new(0, 0, 0)), 0.0);
    }

    #[test]
    fn complex_matches_definition() {
        // h = 1+2i, r = 3-1i, t = 0.5+1i : Re(h r conj(t)) = Re((5+5i)(0.5-1i)) = 2.5 + 5 = 7.5
        let s = state(
            ModelKind::ComplEx,
            &[vec![1.0, 2.0], vec![0.5, 1.0]],
            &[vec![3.0, -1.0]],
        );
        assert!((s.score(&Triple::new(0, 0, 1)) - 7.5).abs() < 1e-12);
    }

    #[test]
    fn query_stacks_rows_in_order() {
        let s = state(
            ModelKind::TransE,
            &[vec![1.0, 2.0], vec![5.0, 6.0]],
            &[vec![3.0, 4.0]],
        );
        let q = s.triple_query(&Triple::new(0, 0, 1));
        assert_eq!(q.rows, Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]));
        assert_eq!(q.head(), s.entities.row(0));
    }
}
