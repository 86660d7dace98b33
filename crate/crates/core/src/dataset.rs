//! Relation files, the vocabulary-disjoint train/validation/test split, and
//! negative sampling for the neighbor regularizer.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Hypernym,
    Synonym,
    Cohyponym,
}

impl Relation {
    pub fn is_negative(self) -> bool {
        !matches!(self, Relation::Hypernym)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Hypernym => "hypernym",
            Relation::Synonym => "synonym",
            Relation::Cohyponym => "cohyponym",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hypernym" => Ok(Relation::Hypernym),
            "synonym" => Ok(Relation::Synonym),
            "cohyponym" => Ok(Relation::Cohyponym),
            other => Err(Error::Invalid(format!("unknown relation `{other}`"))),
        }
    }
}

/// One labelled word pair. For positives `source` is the hyponym and `target`
/// the hypernym.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RelationPair {
    pub source: String,
    pub target: String,
    pub relation: Relation,
}

impl RelationPair {
    pub fn new(source: impl Into<String>, target: impl Into<String>, relation: Relation) -> Self {
        RelationPair {
            source: source.into(),
            target: target.into(),
            relation,
        }
    }

    pub fn hypernym(source: impl Into<String>, target: impl Into<String>) -> Self {
        Self::new(source, target, Relation::Hypernym)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RelationFile {
    pub pairs: Vec<RelationPair>,
    /// Exact duplicate lines dropped while reading.
    pub duplicates: usize,
}

pub fn load_relations(path: &Path) -> Result<RelationFile> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_relations(BufReader::new(file), path)
}

/// Parses `source<TAB>target<TAB>relation` lines; `#` lines and blank lines are skipped.
pub fn read_relations<R: BufRead>(reader: R, origin: &Path) -> Result<RelationFile> {
    let mut seen = HashSet::new();
    let mut out = RelationFile::default();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        let line = line.trim_end_matches('\r');
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 {
            return Err(Error::parse(
                origin,
                lineno,
                format!("expected 3 tab-separated columns, found {}", cols.len()),
            ));
        }
        let relation: Relation = cols[2]
            .trim()
            .parse()
            .map_err(|_| Error::parse(origin, lineno, format!("unknown relation label `{}`", cols[2])))?;
        let (source, target) = (cols[0].trim(), cols[1].trim());
        if source.is_empty() || target.is_empty() {
            return Err(Error::parse(origin, lineno, "empty word"));
        }
        if source == target {
            return Err(Error::parse(origin, lineno, format!("source equals target (`{source}`)")));
        }
        let pair = RelationPair::new(source, target, relation);
        if seen.insert(pair.clone()) {
            out.pairs.push(pair);
        } else {
            out.duplicates += 1;
        }
    }
    if out.duplicates > 0 {
        warn!("{}: dropped {} duplicate lines", origin.display(), out.duplicates);
    }
    Ok(out)
}

pub fn write_relations<W: Write>(pairs: &[RelationPair], mut w: W) -> std::io::Result<()> {
    for p in pairs {
        writeln!(w, "{}\t{}\t{}", p.source, p.target, p.relation)?;
    }
    w.flush()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Train,
    Validation,
    Test,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::Train, Bucket::Validation, Bucket::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Bucket::Train => "train",
            Bucket::Validation => "validation",
            Bucket::Test => "test",
        }
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self> {
        let f = SplitFractions {
            train,
            validation,
            test,
        };
        let all = f.as_array();
        if all.iter().any(|x| !x.is_finite() || *x <= 0.0) {
            return Err(Error::Invalid(format!(
                "split fractions must all be positive, got {train}, {validation}, {test}"
            )));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("split fractions must sum to 1, got {sum}")));
        }
        Ok(f)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.train, self.validation, self.test]
    }
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

/// Bucket assignment aligned index-for-index with the pairs it was computed from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub buckets: Vec<Bucket>,
}

impl Split {
    /// Positive pairs per bucket, in `Bucket::ALL` order.
    pub fn positive_counts(&self, pairs: &[RelationPair]) -> [usize; 3] {
        let mut counts = [0; 3];
        for (p, b) in pairs.iter().zip(&self.buckets) {
            if !p.relation.is_negative() {
                counts[*b as usize] += 1;
            }
        }
        counts
    }

    pub fn pairs_in<'a>(&'a self, pairs: &'a [RelationPair], bucket: Bucket) -> impl Iterator<Item = &'a RelationPair> + 'a {
        pairs
            .iter()
            .zip(&self.buckets)
            .filter(move |(_, b)| **b == bucket)
            .map(|(p, _)| p)
    }

    /// `source<TAB>target<TAB>bucket` for every pair.
    pub fn write_manifest<W: Write>(&self, pairs: &[RelationPair], mut w: W) -> std::io::Result<()> {
        for (p, b) in pairs.iter().zip(&self.buckets) {
            writeln!(w, "{}\t{}\t{}", p.source, p.target, b)?;
        }
        w.flush()
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new() -> Self {
        DisjointSet { parent: Vec::new() }
    }

    fn add(&mut self) -> usize {
        self.parent.push(self.parent.len());
        self.parent.len() - 1
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Assigns every pair to a bucket so that no word occurs in two buckets.
///
/// Words are nodes and pairs are edges; whole connected components are
/// shuffled and dealt out one at a time to whichever bucket is least full
/// relative to its target number of positive pairs. Negative pairs take part
/// in the graph, so negatives always land with the hyponym they describe.
/// Components without positives go to the training bucket.
pub fn lexical_split(pairs: &[RelationPair], fractions: SplitFractions, seed: u64) -> Result<Split> {
    let fractions = SplitFractions::new(fractions.train, fractions.validation, fractions.test)?;

    let mut ids: HashMap<&str, usize> = HashMap::new();
    let mut dsu = DisjointSet::new();
    let mut edges = Vec::with_capacity(pairs.len());
    for p in pairs {
        let a = *ids.entry(p.source.as_str()).or_insert_with(|| dsu.add());
        let b = *ids.entry(p.target.as_str()).or_insert_with(|| dsu.add());
        dsu.union(a, b);
        edges.push(a);
    }

    // Components in order of their first pair.
    let mut comp_of_root: HashMap<usize, usize> = HashMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut positives: Vec<usize> = Vec::new();
    for (i, (p, &a)) in pairs.iter().zip(&edges).enumerate() {
        let root = dsu.find(a);
        let c = *comp_of_root.entry(root).or_insert_with(|| {
            members.push(Vec::new());
            positives.push(0);
            members.len() - 1
        });
        members[c].push(i);
        if !p.relation.is_negative() {
            positives[c] += 1;
        }
    }

    let mut order: Vec<usize> = (0..members.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let total: usize = positives.iter().sum();
    let targets = fractions.as_array().map(|f| f * total as f64);
    let largest = targets.iter().cloned().fold(0.0, f64::max);
    let mut filled = [0usize; 3];
    let mut buckets = vec![Bucket::Train; pairs.len()];
    for c in order {
        let bucket = if positives[c] == 0 {
            Bucket::Train
        } else {
            if positives[c] as f64 > largest {
                warn!(
                    "a connected component with {} positive pairs exceeds the largest bucket target ({largest:.0}); split fractions will be approximate",
                    positives[c]
                );
            }
            let mut best = 0;
            for b in 1..3 {
                let ratio = |i: usize| filled[i] as f64 / targets[i];
                if ratio(b) < ratio(best) {
                    best = b;
                }
            }
            Bucket::ALL[best]
        };
        filled[bucket as usize] += positives[c];
        for &i in &members[c] {
            buckets[i] = bucket;
        }
    }
    Ok(Split { buckets })
}

/// A positive pair resolved to table rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoundPair {
    pub source: usize,
    pub target: usize,
}

/// Positive pairs per bucket plus the training negatives, all as table rows.
#[derive(Debug, Clone, Default)]
pub struct RelationDataset {
    pub train: Vec<BoundPair>,
    pub validation: Vec<BoundPair>,
    pub test: Vec<BoundPair>,
    /// Training hyponym → candidate negatives (synonyms, co-hyponyms).
    pub negatives: HashMap<usize, Vec<usize>>,
    /// Pairs dropped because a word was missing from the table.
    pub dropped: usize,
}

impl RelationDataset {
    /// Binds split pairs against `table`. Unresolvable pairs are dropped and counted.
    pub fn bind(pairs: &[RelationPair], split: &Split, table: &EmbeddingTable) -> Result<Self> {
        if pairs.len() != split.buckets.len() {
            return Err(Error::Invalid(format!(
                "split covers {} pairs, dataset has {}",
                split.buckets.len(),
                pairs.len()
            )));
        }
        let per = |b| split.pairs_in(pairs, b).cloned().collect::<Vec<_>>();
        Self::from_buckets(&per(Bucket::Train), &per(Bucket::Validation), &per(Bucket::Test), table)
    }

    /// Binds pre-split buckets. Negatives are read from the training bucket only.
    pub fn from_buckets(
        train: &[RelationPair],
        validation: &[RelationPair],
        test: &[RelationPair],
        table: &EmbeddingTable,
    ) -> Result<Self> {
        let mut ds = RelationDataset::default();
        let resolve = |p: &RelationPair| -> Option<BoundPair> {
            match (table.lookup(&p.source), table.lookup(&p.target)) {
                (Some(source), Some(target)) => Some(BoundPair { source, target }),
                _ => None,
            }
        };
        let bind_positives = |bucket: &[RelationPair], dropped: &mut usize| -> Vec<BoundPair> {
            let mut out = Vec::new();
            for p in bucket.iter().filter(|p| !p.relation.is_negative()) {
                match resolve(p) {
                    Some(b) => out.push(b),
                    None => *dropped += 1,
                }
            }
            out
        };
        let mut dropped = 0;
        ds.train = bind_positives(train, &mut dropped);
        ds.validation = bind_positives(validation, &mut dropped);
        ds.test = bind_positives(test, &mut dropped);

        let held_out: HashSet<usize> = ds
            .validation
            .iter()
            .chain(&ds.test)
            .flat_map(|p| [p.source, p.target])
            .collect();
        let train_sources: HashSet<usize> = ds.train.iter().map(|p| p.source).collect();
        for p in train.iter().filter(|p| p.relation.is_negative()) {
            let (Some(a), Some(b)) = (table.lookup(&p.source), table.lookup(&p.target)) else {
                dropped += 1;
                continue;
            };
            // Synonymy and co-hyponymy are symmetric.
            for (key, neg) in [(a, b), (b, a)] {
                if train_sources.contains(&key) && !held_out.contains(&neg) {
                    let list = ds.negatives.entry(key).or_default();
                    if !list.contains(&neg) {
                        list.push(neg);
                    }
                }
            }
        }
        ds.dropped = dropped;
        if dropped > 0 {
            warn!("dropped {dropped} pairs with words missing from the embeddings");
        }
        if let Some(word) = ds.first_shared_word() {
            warn!(
                "bucket vocabularies overlap (e.g. `{}`); evaluation is not lexically disjoint",
                table.word(word)
            );
        }
        Ok(ds)
    }

    pub fn bucket(&self, bucket: Bucket) -> &[BoundPair] {
        match bucket {
            Bucket::Train => &self.train,
            Bucket::Validation => &self.validation,
            Bucket::Test => &self.test,
        }
    }

    pub fn vocabulary(&self, bucket: Bucket) -> HashSet<usize> {
        self.bucket(bucket).iter().flat_map(|p| [p.source, p.target]).collect()
    }

    /// Some word that occurs in two buckets, if any.
    pub fn first_shared_word(&self) -> Option<usize> {
        let vocabs = Bucket::ALL.map(|b| self.vocabulary(b));
        for i in 0..3 {
            for j in (i + 1)..3 {
                if let Some(w) = vocabs[i].intersection(&vocabs[j]).min() {
                    return Some(*w);
                }
            }
        }
        None
    }

    /// Uniform draw from the negatives of `source`; falls back to `source`
    /// itself when it has none.
    pub fn sample_negative<R: Rng + ?Sized>(&self, source: usize, rng: &mut R) -> usize {
        match self.negatives.get(&source) {
            Some(list) if !list.is_empty() => list[rng.random_range(0..list.len())],
            _ => source,
        }
    }
}
