//! Knowledge graph loading, indexing, negative sampling and mention strata.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::DescriptionCorpus;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub const fn new(head: usize, relation: usize, tail: usize) -> Self {
        Triple {
            head,
            relation,
            tail,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// Positions replaced when corrupting a positive triple.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Corruption {
    Head,
    Tail,
    Relation,
    /// Head, relation and tail all replaced at once.
    All,
}

impl Corruption {
    pub const FAMILIES: [Corruption; 4] = [
        Corruption::Head,
        Corruption::Tail,
        Corruption::Relation,
        Corruption::All,
    ];

    /// The family a corrupted triple belongs to, judged by which positions differ.
    /// `None` when the positions that differ match no family.
    pub fn classify(source: Triple, corrupted: Triple) -> Option<Corruption> {
        let h = source.head != corrupted.head;
        let r = source.relation != corrupted.relation;
        let t = source.tail != corrupted.tail;
        match (h, r, t) {
            (true, false, false) => Some(Corruption::Head),
            (false, false, true) => Some(Corruption::Tail),
            (false, true, false) => Some(Corruption::Relation),
            (true, true, true) => Some(Corruption::All),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeSample {
    pub triple: Triple,
    pub corruption: Corruption,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadStats {
    pub duplicates_dropped: usize,
    pub cross_split_dropped: usize,
}

#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    pub entity_names: Vec<String>,
    pub relation_names: Vec<String>,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    pub all_true: HashSet<Triple>,
    entity_index: HashMap<String, usize>,
    relation_index: HashMap<String, usize>,
    pub stats: LoadStats,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

struct VocabBuilder {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl VocabBuilder {
    fn new() -> Self {
        VocabBuilder {
            names: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn intern(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len();
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), i);
        i
    }
}

fn parse_split(
    path: &Path,
    text: &str,
    entities: &mut VocabBuilder,
    relations: &mut VocabBuilder,
) -> Result<Vec<(usize, Triple)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let head = entities.intern(fields[0]);
        let relation = relations.intern(fields[1]);
        let tail = entities.intern(fields[2]);
        out.push((lineno + 1, Triple::new(head, relation, tail)));
    }
    Ok(out)
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl KnowledgeGraph {
    /// Loads the three TSV splits. Indices follow first appearance in train,
    /// then valid, then test.
    pub fn load(train_path: &Path, valid_path: &Path, test_path: &Path) -> Result<Self> {
        let texts = [
            (train_path, read_to_string(train_path)?),
            (valid_path, read_to_string(valid_path)?),
            (test_path, read_to_string(test_path)?),
        ];
        let mut entities = VocabBuilder::new();
        let mut relations = VocabBuilder::new();
        let mut parsed = Vec::with_capacity(3);
        for (path, text) in &texts {
            parsed.push(parse_split(path, text, &mut entities, &mut relations)?);
        }
        let mut it = parsed.into_iter();
        let (train, valid, test) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
        Self::assemble(
            entities,
            relations,
            [
                (train_path.to_path_buf(), train),
                (valid_path.to_path_buf(), valid),
                (test_path.to_path_buf(), test),
            ],
        )
    }

    /// Builds a graph from in-memory name triples, with the same indexing and
    /// deduplication rules as [`KnowledgeGraph::load`].
    pub fn from_named(
        train: &[(&str, &str, &str)],
        valid: &[(&str, &str, &str)],
        test: &[(&str, &str, &str)],
    ) -> Result<Self> {
        let mut entities = VocabBuilder::new();
        let mut relations = VocabBuilder::new();
        let mut conv = |rows: &[(&str, &str, &str)]| {
            rows.iter()
                .enumerate()
                .map(|(i, (h, r, t))| {
                    let h = entities.intern(h);
                    let r = relations.intern(r);
                    let t = entities.intern(t);
                    (i + 1, Triple::new(h, r, t))
                })
                .collect::<Vec<_>>()
        };
        let a = conv(train);
        let b = conv(valid);
        let c = conv(test);
        Self::assemble(
            entities,
            relations,
            [
                (PathBuf::from("<train>"), a),
                (PathBuf::from("<valid>"), b),
                (PathBuf::from("<test>"), c),
            ],
        )
    }

    fn assemble(
        entities: VocabBuilder,
        relations: VocabBuilder,
        splits: [(PathBuf, Vec<(usize, Triple)>); 3],
    ) -> Result<Self> {
        let mut stats = LoadStats::default();
        let mut all_true = HashSet::new();
        let mut out: Vec<Vec<Triple>> = Vec::with_capacity(3);
        for (path, rows) in splits {
            let mut seen = HashSet::new();
            let mut kept = Vec::with_capacity(rows.len());
            for (line, t) in rows {
                if !seen.insert(t) {
                    warn!("{}:{line}: duplicate triple dropped", path.display());
                    stats.duplicates_dropped += 1;
                    continue;
                }
                if all_true.contains(&t) {
                    warn!(
                        "{}:{line}: triple already present in an earlier split, dropped",
                        path.display()
                    );
                    stats.cross_split_dropped += 1;
                    continue;
                }
                kept.push(t);
            }
            all_true.extend(kept.iter().copied());
            out.push(kept);
        }
        let mut it = out.into_iter();
        Ok(KnowledgeGraph {
            entity_names: entities.names,
            relation_names: relations.names,
            train: it.next().unwrap(),
            valid: it.next().unwrap(),
            test: it.next().unwrap(),
            all_true,
            entity_index: entities.index,
            relation_index: relations.index,
            stats,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entity_index.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relation_index.get(name).copied()
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn is_true(&self, t: &Triple) -> bool {
        self.all_true.contains(t)
    }

    pub fn summary(&self) -> GraphSummary {
        GraphSummary {
            entities: self.num_entities(),
            relations: self.num_relations(),
            train: self.train.len(),
            valid: self.valid.len(),
            test: self.test.len(),
        }
    }

    pub fn to_tsv(&self, split: Split) -> String {
        let mut s = String::new();
        for t in self.split(split) {
            s.push_str(&self.entity_names[t.head]);
            s.push('\t');
            s.push_str(&self.relation_names[t.relation]);
            s.push('\t');
            s.push_str(&self.entity_names[t.tail]);
            s.push('\n');
        }
        s
    }

    /// Writes `train.tsv`, `valid.tsv` and `test.tsv` into `dir`.
    pub fn write_tsv(&self, dir: &Path) -> Result<[PathBuf; 3]> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = [Split::Train, Split::Valid, Split::Test].map(|s| {
            let p = dir.join(format!("{}.tsv", s.name()));
            (s, p)
        });
        for (s, p) in &paths {
            fs::write(p, self.to_tsv(*s)).map_err(|e| Error::io(p, e))?;
        }
        Ok(paths.map(|(_, p)| p))
    }

    /// Draws one corruption of `positive` in the given family, resampling up to
    /// `MAX_ATTEMPTS` times when the corruption is itself a true triple.
    pub fn corrupt<R: Rng + ?Sized>(
        &self,
        positive: Triple,
        family: Corruption,
        rng: &mut R,
    ) -> Option<NegativeSample> {
        let ne = self.num_entities();
        let nr = self.num_relations();
        let needs_entity = matches!(family, Corruption::Head | Corruption::Tail | Corruption::All);
        let needs_relation = matches!(family, Corruption::Relation | Corruption::All);
        if (needs_entity && ne < 2) || (needs_relation && nr < 2) {
            return None;
        }
        for _ in 0..MAX_ATTEMPTS {
            let mut t = positive;
            match family {
                Corruption::Head => t.head = other_index(rng, ne, positive.head),
                Corruption::Tail => t.tail = other_index(rng, ne, positive.tail),
                Corruption::Relation => t.relation = other_index(rng, nr, positive.relation),
                Corruption::All => {
                    t.head = other_index(rng, ne, positive.head);
                    t.relation = other_index(rng, nr, positive.relation);
                    t.tail = other_index(rng, ne, positive.tail);
                }
            }
            if !self.all_true.contains(&t) {
                return Some(NegativeSample {
                    triple: t,
                    corruption: family,
                });
            }
        }
        None
    }

    /// Filtered negative sampling: each sample's family is drawn uniformly from
    /// the four corruption families, falling back to the remaining families
    /// (in declaration order) when the chosen one cannot produce a negative.
    pub fn sample_negatives<R: Rng + ?Sized>(
        &self,
        positive: Triple,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<NegativeSample>> {
        if n == 0 {
            return Err(Error::Config("negative sample count must be >= 1".into()));
        }
        if self.num_entities() < 2 {
            return Err(Error::Saturated(positive));
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let first = Corruption::FAMILIES[rng.random_range(0..4)];
            let sample = std::iter::once(first)
                .chain(Corruption::FAMILIES.into_iter().filter(|f| *f != first))
                .find_map(|f| self.corrupt(positive, f, rng));
            out.push(sample.ok_or(Error::Saturated(positive))?);
        }
        Ok(out)
    }
}

const MAX_ATTEMPTS: usize = 1000;

fn other_index<R: Rng + ?Sized>(rng: &mut R, n: usize, exclude: usize) -> usize {
    let i = rng.random_range(0..n - 1);
    if i >= exclude {
        i + 1
    } else {
        i
    }
}

/// Partitions `split` by whether some description mentions both the head and
/// the tail entity of the triple.
pub fn stratify(corpus: &DescriptionCorpus, split: &[Triple]) -> (Vec<Triple>, Vec<Triple>) {
    split
        .iter()
        .partition(|t| corpus.co_mentioned(t.head, t.tail))
}
