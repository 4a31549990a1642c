//! Run configuration files.
//!
//! One `key = value` pair per line; `#` starts a comment. Relative paths are
//! resolved against the directory holding the file.
//!
//! ```text
//! train = data/train.tsv
//! valid = data/valid.tsv
//! test = data/test.tsv
//! corpus_meta = data/descriptions.jsonl
//! corpus_vectors = data/descriptions.emb
//! model_kind = transe
//! dim = 32
//! epochs = 100
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Task;
use crate::trainer::TrainConfig;

pub const TRAIN_KEYS: [&str; 16] = [
    "alpha",
    "gamma",
    "k",
    "negatives_per_triple",
    "lr",
    "epochs",
    "batch_size",
    "optimizer",
    "seed",
    "dim",
    "model_kind",
    "retrieval_candidates",
    "text_weight",
    "no_retriever",
    "descs_per_entity",
    "eval_cached_topk",
];

pub const PATH_KEYS: [&str; 5] = ["train", "valid", "test", "corpus_meta", "corpus_vectors"];

pub const OTHER_KEYS: [&str; 4] = ["out_dir", "tasks", "k_sweep", "parallel"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
    pub corpus_meta: PathBuf,
    pub corpus_vectors: PathBuf,
}

impl DataPaths {
    pub fn named(&self) -> [(&'static str, &Path); 5] {
        [
            ("train", &self.train),
            ("valid", &self.valid),
            ("test", &self.test),
            ("corpus_meta", &self.corpus_meta),
            ("corpus_vectors", &self.corpus_vectors),
        ]
    }

    /// Fails on the first path that does not exist, naming its key.
    pub fn check_exist(&self) -> Result<()> {
        for (key, p) in self.named() {
            if !p.exists() {
                return Err(Error::Config(format!("`{key}`: {} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataPaths,
    pub out_dir: Option<PathBuf>,
    pub tasks: Vec<Task>,
    pub k_sweep: Option<(usize, usize)>,
    pub parallel: bool,
}

pub fn parse_tasks(s: &str) -> Result<Vec<Task>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let t = match part.to_ascii_lowercase().as_str() {
            "lp" => Task::LinkPrediction,
            "rp" => Task::RelationPrediction,
            "tp" => Task::TripletClassification,
            o => return Err(Error::Config(format!("unknown task `{o}` (expected lp, rp, tp)"))),
        };
        if !out.contains(&t) {
            out.push(t);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("empty task list".into()));
    }
    Ok(out)
}

/// Parses `LO..HI` (inclusive on both ends).
pub fn parse_range(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("bad range `{s}` (expected LO..HI)"));
    let (lo, hi) = s.split_once("..").ok_or_else(bad)?;
    let hi = hi.strip_prefix('=').unwrap_or(hi);
    let lo: usize = lo.trim().parse().map_err(|_| bad())?;
    let hi: usize = hi.trim().parse().map_err(|_| bad())?;
    if lo == 0 || hi < lo {
        return Err(Error::Config(format!("range `{s}` must satisfy 1 <= LO <= HI")));
    }
    Ok((lo, hi))
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{v}`: {e}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected a boolean, got `{v}`"))),
    }
}

/// Sets one training field from its textual value.
pub fn set_train_key(cfg: &mut TrainConfig, key: &str, v: &str) -> Result<()> {
    match key {
        "alpha" => cfg.alpha = parse_value(key, v)?,
        "gamma" => cfg.gamma = parse_value(key, v)?,
        "k" => cfg.k = parse_value(key, v)?,
        "negatives_per_triple" => cfg.negatives_per_triple = parse_value(key, v)?,
        "lr" => cfg.lr = parse_value(key, v)?,
        "epochs" => cfg.epochs = parse_value(key, v)?,
        "batch_size" => cfg.batch_size = parse_value(key, v)?,
        "optimizer" => cfg.optimizer = v.parse()?,
        "seed" => cfg.seed = parse_value(key, v)?,
        "dim" => cfg.dim = parse_value(key, v)?,
        "model_kind" => cfg.model_kind = v.parse()?,
        "retrieval_candidates" => cfg.retrieval_candidates = parse_value(key, v)?,
        "text_weight" => cfg.text_weight = parse_value(key, v)?,
        "no_retriever" => cfg.no_retriever = parse_bool(key, v)?,
        "descs_per_entity" => cfg.descs_per_entity = parse_value(key, v)?,
        "eval_cached_topk" => cfg.eval_cached_topk = parse_bool(key, v)?,
        _ => return Err(unknown_key(key)),
    }
    Ok(())
}

fn unknown_key(key: &str) -> Error {
    let valid: Vec<&str> = TRAIN_KEYS.iter().chain(&PATH_KEYS).chain(&OTHER_KEYS).copied().collect();
    Error::Config(format!("unknown key `{key}`; valid keys: {}", valid.join(", ")))
}

impl RunConfig {
    /// Parses config text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut train = TrainConfig::default();
        let mut paths: [Option<PathBuf>; 5] = Default::default();
        let mut out_dir = None;
        let mut tasks = vec![
            Task::LinkPrediction,
            Task::RelationPrediction,
            Task::TripletClassification,
        ];
        let mut k_sweep = None;
        let mut parallel = false;

        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(i) = PATH_KEYS.iter().position(|k| *k == key) {
                paths[i] = Some(base.join(value));
                continue;
            }
            match key {
                "out_dir" => out_dir = Some(base.join(value)),
                "tasks" => tasks = parse_tasks(value)?,
                "k_sweep" => k_sweep = Some(parse_range(value)?),
                "parallel" => parallel = parse_bool(key, value)?,
                _ => set_train_key(&mut train, key, value)?,
            }
        }
        let mut it = paths.into_iter().zip(PATH_KEYS);
        let mut take = || {
            let (p, key) = it.next().unwrap();
            p.ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
        };
        let data = DataPaths {
            train: take()?,
            valid: take()?,
            test: take()?,
            corpus_meta: take()?,
            corpus_vectors: take()?,
        };
        train.validate()?;
        Ok(RunConfig {
            train,
            data,
            out_dir,
            tasks,
            k_sweep,
            parallel,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Renders the config back to the file format. Paths are written as
    /// given, so a file produced with absolute paths reloads from anywhere.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let tasks: Vec<&str> = self
            .tasks
            .iter()
            .map(|t| match t {
                Task::LinkPrediction => "lp",
                Task::RelationPrediction => "rp",
                Task::TripletClassification => "tp",
            })
            .collect();
        let mut s = String::new();
        for (k, p) in self.data.named() {
            s.push_str(&format!("{k} = {}\n", p.display()));
        }
        if let Some(o) = &self.out_dir {
            s.push_str(&format!("out_dir = {}\n", o.display()));
        }
        s.push_str(&format!("tasks = {}\n", tasks.join(",")));
        if let Some((lo, hi)) = self.k_sweep {
            s.push_str(&format!("k_sweep = {lo}..{hi}\n"));
        }
        s.push_str(&format!("parallel = {}\n", self.parallel));
        let fields = [
            ("alpha", t.alpha.to_string()),
            ("gamma", t.gamma.to_string()),
            ("k", t.k.to_string()),
            ("negatives_per_triple", t.negatives_per_triple.to_string()),
            ("lr", t.lr.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("optimizer", t.optimizer.to_string()),
            ("seed", t.seed.to_string()),
            ("dim", t.dim.to_string()),
            ("model_kind", t.model_kind.to_string()),
            ("retrieval_candidates", t.retrieval_candidates.to_string()),
            ("text_weight", t.text_weight.to_string()),
            ("no_retriever", t.no_retriever.to_string()),
            ("descs_per_entity", t.descs_per_entity.to_string()),
            ("eval_cached_topk", t.eval_cached_topk.to_string()),
        ];
        for (k, v) in fields {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }
}
