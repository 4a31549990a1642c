//! Adam and SGD over the embedding tables and the projection.
//!
//! Table gradients are sparse (row id → gradient row). Only rows present in a
//! gradient are read or written, moments included, so untouched rows stay
//! bit-identical across a step.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, Matrix};
use crate::models::EmbeddingState;
use crate::retriever::{Projection, ProjectionGrad};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            o => Err(Error::Config(format!("unknown optimizer `{o}` (expected adam, sgd)"))),
        }
    }
}

/// Gradient of a loss with respect to every trainable parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub entities: BTreeMap<usize, Vec<f64>>,
    pub relations: BTreeMap<usize, Vec<f64>>,
    pub projection: ProjectionGrad,
}

impl Gradients {
    pub fn zeros(kg_dim: usize, text_dim: usize) -> Self {
        Gradients {
            entities: BTreeMap::new(),
            relations: BTreeMap::new(),
            projection: ProjectionGrad::zeros(kg_dim, text_dim),
        }
    }

    pub fn add_entity(&mut self, id: usize, g: &[f64], scale: f64) {
        add_row(&mut self.entities, id, g, scale);
    }

    pub fn add_relation(&mut self, id: usize, g: &[f64], scale: f64) {
        add_row(&mut self.relations, id, g, scale);
    }

    pub fn all_finite(&self) -> bool {
        let rows = self.entities.values().chain(self.relations.values());
        rows.flatten().all(|v| v.is_finite())
            && self.projection.weight.all_finite()
            && self.projection.bias.iter().all(|v| v.is_finite())
    }

    /// `self += scale · other`
    pub fn merge(&mut self, other: &Gradients, scale: f64) {
        for (&i, g) in &other.entities {
            self.add_entity(i, g, scale);
        }
        for (&i, g) in &other.relations {
            self.add_relation(i, g, scale);
        }
        self.projection.add_scaled(&other.projection, scale);
    }
}

fn add_row(map: &mut BTreeMap<usize, Vec<f64>>, id: usize, g: &[f64], scale: f64) {
    let row = map.entry(id).or_insert_with(|| vec![0.0; g.len()]);
    axpy(scale, g, row);
}

/// One bias-corrected Adam update of `params` in place; `t` is the 1-based
/// step count.
pub fn adam_step(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, t: u64) {
    let bc1 = 1.0 - BETA1.powi(t as i32);
    let bc2 = 1.0 - BETA2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
}

/// First and second moments for every parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub entities: (Matrix, Matrix),
    pub relations: (Matrix, Matrix),
    pub weight: (Matrix, Matrix),
    pub bias: (Vec<f64>, Vec<f64>),
}

impl Moments {
    pub fn zeros(state: &EmbeddingState, proj: &Projection) -> Self {
        let z = |m: &Matrix| (Matrix::zeros(m.rows(), m.cols()), Matrix::zeros(m.rows(), m.cols()));
        Moments {
            entities: z(&state.entities),
            relations: z(&state.relations),
            weight: z(&proj.weight),
            bias: (vec![0.0; proj.bias.len()], vec![0.0; proj.bias.len()]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub step: u64,
    pub moments: Moments,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, state: &EmbeddingState, proj: &Projection) -> Self {
        Optimizer {
            kind,
            lr,
            step: 0,
            moments: Moments::zeros(state, proj),
        }
    }

    /// Applies one update. Returns the entity rows that were written.
    pub fn apply(&mut self, state: &mut EmbeddingState, proj: &mut Projection, grads: &Gradients) -> Vec<usize> {
        self.step += 1;
        let (lr, t) = (self.lr, self.step);
        match self.kind {
            OptimizerKind::Adam => {
                let mo = &mut self.moments;
                for (&i, g) in &grads.entities {
                    adam_step(state.entities.row_mut(i), g, mo.entities.0.row_mut(i), mo.entities.1.row_mut(i), lr, t);
                }
                for (&i, g) in &grads.relations {
                    adam_step(state.relations.row_mut(i), g, mo.relations.0.row_mut(i), mo.relations.1.row_mut(i), lr, t);
                }
                adam_step(
                    proj.weight.as_mut_slice(),
                    grads.projection.weight.as_slice(),
                    mo.weight.0.as_mut_slice(),
                    mo.weight.1.as_mut_slice(),
                    lr,
                    t,
                );
                adam_step(&mut proj.bias, &grads.projection.bias, &mut mo.bias.0, &mut mo.bias.1, lr, t);
            }
            OptimizerKind::Sgd => {
                for (&i, g) in &grads.entities {
                    axpy(-lr, g, state.entities.row_mut(i));
                }
                for (&i, g) in &grads.relations {
                    axpy(-lr, g, state.relations.row_mut(i));
                }
                axpy(-lr, grads.projection.weight.as_slice(), proj.weight.as_mut_slice());
                axpy(-lr, &grads.projection.bias, &mut proj.bias);
            }
        }
        grads.entities.keys().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_is_stationary() {
        let mut p = vec![0.3, -1.2];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        adam_step(&mut p, &[0.0, 0.0], &mut m, &mut v, 1e-3, 1);
        assert_eq!(p, vec![0.3, -1.2]);
    }

    #[test]
    fn first_step_hand_value() {
        // t=1: m̂ = g, v̂ = g², step = lr·g/(|g| + ε)
        let g = [0.5, -2.0];
        let mut p = vec![1.0, 1.0];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        adam_step(&mut p, &g, &mut m, &mut v, 0.1, 1);
        for (pi, gi) in p.iter().zip(g) {
            let want = 1.0 - 0.1 * gi / (gi.abs() + EPSILON);
            assert!((pi - want).abs() < 1e-12, "{pi} vs {want}");
        }
        assert!((m[0] - 0.05).abs() < 1e-15);
        assert!((v[1] - 0.004).abs() < 1e-15);
    }

    #[test]
    fn equal_grads_equal_updates() {
        let mut p = vec![0.0, 0.0];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        for t in 1..5 {
            adam_step(&mut p, &[0.7, 0.7], &mut m, &mut v, 1e-2, t);
        }
        assert_eq!(p[0], p[1]);
    }
}
