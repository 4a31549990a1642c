//! The batch commands behind the `drka` binary: train, eval, sweep-k and
//! ablate. Each writes its artifacts plus a `manifest.json` recording the
//! config, seed and content hashes of every input.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::config::{DataPaths, RunConfig};
use crate::corpus::{atomic_write, CorpusStats, DescriptionCorpus};
use crate::error::{Error, Result};
use crate::eval::{self, CorruptSource, EvalReport, Scorer, Task};
use crate::graph::{GraphSummary, KnowledgeGraph};
use crate::trainer::{self, trace_csv, Checkpoint, TrainConfig, TrainOutcome};

/// SHA-256 over `"blob <len>\0" ++ bytes`, the object framing git uses.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(blob_hash(&bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: BTreeMap<String, InputRecord>,
    pub graph: GraphSummary,
    pub corpus: CorpusStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped_triples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_valid_mrr: Option<f64>,
    /// Output file name → content hash.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn absolute_paths(d: &DataPaths) -> DataPaths {
    DataPaths {
        train: absolute(&d.train),
        valid: absolute(&d.valid),
        test: absolute(&d.test),
        corpus_meta: absolute(&d.corpus_meta),
        corpus_vectors: absolute(&d.corpus_vectors),
    }
}

pub fn load_data(paths: &DataPaths) -> Result<(KnowledgeGraph, DescriptionCorpus)> {
    paths.check_exist()?;
    let kg = KnowledgeGraph::load(&paths.train, &paths.valid, &paths.test)?;
    let corpus = DescriptionCorpus::load(&paths.corpus_meta, &paths.corpus_vectors, &kg)?;
    log::info!("graph {:?}", kg.summary());
    Ok((kg, corpus))
}

fn input_records(paths: &DataPaths) -> Result<BTreeMap<String, InputRecord>> {
    paths
        .named()
        .into_iter()
        .map(|(k, p)| {
            Ok((
                k.to_owned(),
                InputRecord {
                    path: p.to_path_buf(),
                    hash: file_hash(p)?,
                },
            ))
        })
        .collect()
}

/// Collects output files and writes them plus the manifest into `out`.
struct Outputs {
    dir: PathBuf,
    hashes: BTreeMap<String, String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            hashes: BTreeMap::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        atomic_write(&path, bytes)?;
        self.hashes.insert(name.to_owned(), blob_hash(bytes));
        Ok(path)
    }

    fn finish(self, mut manifest: Manifest) -> Result<Manifest> {
        manifest.outputs = self.hashes;
        let json = serde_json::to_vec_pretty(&manifest)?;
        atomic_write(&self.dir.join("manifest.json"), &json)?;
        Ok(manifest)
    }
}

struct Session {
    cfg: RunConfig,
    kg: KnowledgeGraph,
    corpus: DescriptionCorpus,
    inputs: BTreeMap<String, InputRecord>,
}

impl Session {
    fn open(cfg: &RunConfig) -> Result<Self> {
        let mut cfg = cfg.clone();
        cfg.data = absolute_paths(&cfg.data);
        let (kg, corpus) = load_data(&cfg.data)?;
        let inputs = input_records(&cfg.data)?;
        Ok(Session { cfg, kg, corpus, inputs })
    }

    fn manifest(&self, command: &str) -> Manifest {
        Manifest {
            command: command.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            seed: self.cfg.train.seed,
            config: self.cfg.clone(),
            inputs: self.inputs.clone(),
            graph: self.kg.summary(),
            corpus: self.corpus.stats(&self.kg),
            skipped_triples: None,
            best_valid_mrr: None,
            outputs: BTreeMap::new(),
        }
    }

    fn train(&self, tc: &TrainConfig) -> Result<TrainOutcome> {
        let outcome = trainer::train(&self.kg, &self.corpus, tc)?;
        if outcome.best.skipped_triples > 0 {
            log::warn!(
                "{} training triples skipped: head or tail has no mentioning description",
                outcome.best.skipped_triples
            );
        }
        Ok(outcome)
    }
}

fn checkpoint_extra(data: &DataPaths) -> Result<serde_json::Value> {
    Ok(serde_json::json!({ "data": serde_json::to_value(data)? }))
}

fn write_training(out: &mut Outputs, data: &DataPaths, outcome: &TrainOutcome) -> Result<()> {
    let extra = checkpoint_extra(data)?;
    out.write("checkpoint.bin", &checkpoint::encode(&outcome.best, &extra)?)?;
    out.write("last.bin", &checkpoint::encode(&outcome.last, &extra)?)?;
    out.write("trace.csv", trace_csv(&outcome.trace).as_bytes())?;
    Ok(())
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub outcome: TrainOutcome,
    pub manifest: Manifest,
}

/// Trains with `cfg` and writes `checkpoint.bin` (best validation MRR),
/// `last.bin`, `trace.csv` and `manifest.json` into `out`.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<TrainRun> {
    let s = Session::open(cfg)?;
    let outcome = s.train(&s.cfg.train)?;
    let mut files = Outputs::new(out)?;
    write_training(&mut files, &s.cfg.data, &outcome)?;
    let mut manifest = s.manifest("train");
    manifest.skipped_triples = Some(outcome.best.skipped_triples);
    manifest.best_valid_mrr = finite(outcome.best.best_valid_mrr);
    let manifest = files.finish(manifest)?;
    Ok(TrainRun { outcome, manifest })
}

/// Reports for the selected tasks on the test split. LP gives filtered and
/// raw reports over three strata; RP filtered reports; TP accuracies with
/// corruptions drawn from the graph and from corpus mentions.
pub fn evaluate(
    kg: &KnowledgeGraph,
    corpus: &DescriptionCorpus,
    ckpt: &Checkpoint,
    tasks: &[Task],
    seed: u64,
) -> Result<Vec<EvalReport>> {
    let scorer = Scorer::new(&ckpt.model, corpus)?.with_cached_topk(ckpt.config.eval_cached_topk);
    let mut reports = Vec::new();
    for task in tasks {
        match task {
            Task::LinkPrediction => {
                for filtered in [true, false] {
                    reports.extend(eval::link_prediction(kg, &kg.test, &scorer, corpus, filtered)?);
                }
            }
            Task::RelationPrediction => {
                reports.extend(eval::relation_prediction(kg, &kg.test, &scorer, corpus, true)?);
            }
            Task::TripletClassification => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for source in [CorruptSource::Kg, CorruptSource::CorpusMentions] {
                    reports.extend(eval::triplet_classification(kg, &scorer, corpus, source, &mut rng)?);
                }
            }
        }
    }
    for r in &reports {
        r.check()?;
    }
    Ok(reports)
}

pub fn task_file(task: Task) -> &'static str {
    match task {
        Task::LinkPrediction => "lp.json",
        Task::RelationPrediction => "rp.json",
        Task::TripletClassification => "tp.json",
    }
}

fn write_reports(out: &mut Outputs, model_name: &str, tasks: &[Task], reports: &[EvalReport]) -> Result<()> {
    for &task in tasks {
        let rs: Vec<&EvalReport> = reports.iter().filter(|r| r.task == task).collect();
        out.write(task_file(task), &serde_json::to_vec_pretty(&rs)?)?;
    }
    out.write("report.md", eval::render_markdown(model_name, reports).as_bytes())?;
    Ok(())
}

pub fn load_reports(path: &Path) -> Result<Vec<EvalReport>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let reports: Vec<EvalReport> = serde_json::from_slice(&bytes)?;
    for r in &reports {
        r.check()?;
    }
    Ok(reports)
}

fn model_label(cfg: &TrainConfig) -> String {
    if cfg.no_retriever {
        format!("DRKA - Retriever ({})", cfg.model_kind)
    } else {
        format!("DRKA ({})", cfg.model_kind)
    }
}

/// Evaluates a checkpoint written by `cmd_train` or `cmd_ablate`. Data
/// paths are taken from the checkpoint; `seed` overrides the one it was
/// trained with for TP corruption sampling.
pub fn cmd_eval(ckpt_path: &Path, tasks: &[Task], out: &Path, seed: Option<u64>) -> Result<Vec<EvalReport>> {
    let (ckpt, extra) = checkpoint::load(ckpt_path)?;
    let data: DataPaths = serde_json::from_value(extra.get("data").cloned().unwrap_or_default()).map_err(|e| {
        Error::Checkpoint {
            section: "JSONMETA".into(),
            msg: format!("data paths: {e}"),
        }
    })?;
    let run = RunConfig {
        train: ckpt.config.clone(),
        data,
        out_dir: Some(out.to_path_buf()),
        tasks: tasks.to_vec(),
        k_sweep: None,
        parallel: false,
    };
    let s = Session::open(&run)?;
    let seed = seed.unwrap_or(ckpt.config.seed);
    let reports = evaluate(&s.kg, &s.corpus, &ckpt, tasks, seed)?;
    let mut files = Outputs::new(out)?;
    write_reports(&mut files, &model_label(&ckpt.config), tasks, &reports)?;
    let mut manifest = s.manifest("eval");
    manifest.seed = seed;
    manifest.inputs.insert(
        "checkpoint".into(),
        InputRecord {
            path: absolute(ckpt_path),
            hash: file_hash(ckpt_path)?,
        },
    );
    files.finish(manifest)?;
    Ok(reports)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub mrr: f64,
    pub hits10: f64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("k,mrr,hits10\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.k, r.mrr, r.hits10);
    }
    s
}

/// Filtered overall link prediction MRR and Hits@10 on the test split.
pub fn lp_summary(kg: &KnowledgeGraph, corpus: &DescriptionCorpus, ckpt: &Checkpoint) -> Result<(f64, f64)> {
    let scorer = Scorer::new(&ckpt.model, corpus)?.with_cached_topk(ckpt.config.eval_cached_topk);
    let ranks = eval::link_prediction_ranks(kg, &kg.test, &scorer, true);
    let m = eval::metrics(&ranks, &[10])?;
    Ok((m.mrr, m.hits[&10]))
}

/// Retrains from scratch for every k in `lo..=hi` and writes `sweep.csv`.
/// All runs share the config seed, unless `parallel` is set, in which case
/// run k uses seed + k and the runs execute concurrently.
pub fn cmd_sweep_k(cfg: &RunConfig, range: (usize, usize), out: &Path) -> Result<Vec<SweepRow>> {
    let (lo, hi) = range;
    if lo == 0 || hi < lo {
        return Err(Error::Config(format!("k range {lo}..{hi} must satisfy 1 <= lo <= hi")));
    }
    let s = Session::open(cfg)?;
    if hi > s.corpus.len() {
        return Err(Error::Config(format!("k range upper bound {hi} exceeds corpus size {}", s.corpus.len())));
    }
    let parallel = s.cfg.parallel;
    let run_k = |k: usize| -> Result<SweepRow> {
        let mut tc = s.cfg.train.clone();
        tc.k = k;
        tc.no_retriever = false;
        if parallel {
            tc.seed = tc.seed.wrapping_add(k as u64);
        }
        let outcome = s.train(&tc)?;
        let (mrr, hits10) = lp_summary(&s.kg, &s.corpus, &outcome.best)?;
        log::info!("k = {k}: mrr {mrr:.4} hits@10 {hits10:.4}");
        Ok(SweepRow { k, mrr, hits10 })
    };
    let ks: Vec<usize> = (lo..=hi).collect();
    let rows: Vec<SweepRow> = if parallel {
        eval::par_map(&ks, |&k| run_k(k)).into_iter().collect::<Result<_>>()?
    } else {
        ks.iter().map(|&k| run_k(k)).collect::<Result<_>>()?
    };
    let mut files = Outputs::new(out)?;
    files.write("sweep.csv", sweep_csv(&rows).as_bytes())?;
    let mut manifest = s.manifest("sweep-k");
    manifest.config.k_sweep = Some(range);
    files.finish(manifest)?;
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct AblateRun {
    pub outcome: TrainOutcome,
    pub reports: Vec<EvalReport>,
    pub manifest: Manifest,
}

/// Retriever ablation: fixed description sets of `descs_per_entity` per
/// entity, alignment loss only. Writes the training artifacts plus LP and RP
/// reports.
pub fn cmd_ablate(cfg: &RunConfig, descs_per_entity: usize, out: &Path) -> Result<AblateRun> {
    let mut cfg = cfg.clone();
    cfg.train.no_retriever = true;
    cfg.train.alpha = 0.0;
    cfg.train.descs_per_entity = descs_per_entity;
    cfg.train.validate()?;
    let s = Session::open(&cfg)?;
    let outcome = s.train(&s.cfg.train)?;
    let tasks = [Task::LinkPrediction, Task::RelationPrediction];
    let reports = evaluate(&s.kg, &s.corpus, &outcome.best, &tasks, s.cfg.train.seed)?;
    let mut files = Outputs::new(out)?;
    write_training(&mut files, &s.cfg.data, &outcome)?;
    write_reports(&mut files, &model_label(&s.cfg.train), &tasks, &reports)?;
    let mut manifest = s.manifest("ablate");
    manifest.config.tasks = tasks.to_vec();
    manifest.skipped_triples = Some(outcome.best.skipped_triples);
    manifest.best_valid_mrr = finite(outcome.best.best_valid_mrr);
    let manifest = files.finish(manifest)?;
    Ok(AblateRun {
        outcome,
        reports,
        manifest,
    })
}
