//! Knowledge-graph embedding with retrieved description augmentation.
//!
//! A triple's head, relation and tail embeddings query a corpus of encoded
//! entity descriptions; the top-k matches are fused by attention and aligned
//! with the model's head/relation composition while a retrieval loss teaches
//! the projection which descriptions are relevant. Four scoring models are
//! supported (TransE, DistMult, ComplEx, RotatE), together with link
//! prediction, relation prediction and triplet classification evaluation.
//!
//! ```no_run
//! use drka_core::toy::ToySpec;
//! use drka_core::trainer::{train, TrainConfig};
//!
//! let toy = ToySpec::default().build().unwrap();
//! let cfg = TrainConfig { dim: 32, epochs: 50, ..TrainConfig::default() };
//! let outcome = train(&toy.kg, &toy.corpus, &cfg).unwrap();
//! println!("best validation MRR {}", outcome.best.best_valid_mrr);
//! ```

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod graph;
pub mod linalg;
pub mod models;
pub mod optim;
pub mod retriever;
pub mod toy;
pub mod trainer;

pub use corpus::{Description, DescriptionCorpus};
pub use error::{Error, Result};
pub use graph::{KnowledgeGraph, Triple};
pub use models::{EmbeddingState, ModelKind};
pub use trainer::{DrkaModel, TrainConfig};
