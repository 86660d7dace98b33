//! hit@l curves and their trapezoid AUC.
//!
//! A test pair `(x, y)` is routed to a cluster by its gold offset `y - x`,
//! projected with that cluster's matrix, and scored by where `y` lands among
//! the nearest neighbors of the projection. The hyponym itself is excluded
//! from the candidates by default.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::offset_into;
use crate::dataset::{BoundPair, RelationPair};
use crate::embeddings::{neighbor_order, EmbeddingTable, Neighbor, NeighborList, Similarity};
use crate::error::{Error, Result};
use crate::projection::ProjectionModel;

pub const DEFAULT_L_MAX: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Drop the hyponym from its own candidate list.
    pub exclude_query: bool,
    pub similarity: Similarity,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            exclude_query: true,
            similarity: Similarity::Cosine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub hyponym: String,
    pub gold: String,
    pub cluster: usize,
    /// 1-based rank of the gold hypernym within the top `l_max`.
    pub rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `hits[i]` is hit@(i + 1).
    pub hits: Vec<f64>,
    pub auc: f64,
    pub l_max: usize,
    pub n_pairs: usize,
    /// Input pairs skipped because a word is missing from the embeddings.
    pub skips: usize,
    #[serde(skip)]
    pub per_pair: Vec<PairOutcome>,
}

impl EvalReport {
    pub fn hit(&self, l: usize) -> Option<f64> {
        l.checked_sub(1).and_then(|i| self.hits.get(i).copied())
    }

    /// `hyponym<TAB>gold<TAB>cluster<TAB>rank`, with `-` for a missing rank.
    pub fn write_pairs<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        for p in &self.per_pair {
            match p.rank {
                Some(r) => writeln!(w, "{}\t{}\t{}\t{}", p.hyponym, p.gold, p.cluster, r)?,
                None => writeln!(w, "{}\t{}\t{}\t-", p.hyponym, p.gold, p.cluster)?,
            }
        }
        w.flush()
    }
}

/// `½ Σ_{i=1}^{l-1} (hit@i + hit@(i+1))` over a curve starting at hit@1.
pub fn auc(hits: &[f64]) -> Result<f64> {
    if hits.len() < 2 {
        return Err(Error::Invalid(format!(
            "AUC needs at least two hit@l values, got {}",
            hits.len()
        )));
    }
    Ok(0.5 * hits.windows(2).map(|w| w[0] + w[1]).sum::<f64>())
}

/// hit@1..hit@l_max from per-pair ranks (`None` is a miss at every depth).
pub fn hits_from_ranks(ranks: &[Option<usize>], l_max: usize) -> Vec<f64> {
    let n = ranks.len() as f64;
    (1..=l_max)
        .map(|l| ranks.iter().filter(|r| matches!(r, Some(r) if *r <= l)).count() as f64 / n)
        .collect()
}

/// Rank of `pair.target` among the top `l` neighbors of `prediction`.
/// A zero prediction under cosine similarity ranks nothing.
pub(crate) fn gold_rank(
    table: &EmbeddingTable,
    prediction: &[f64],
    pair: &BoundPair,
    l: usize,
    exclude_query: bool,
    similarity: Similarity,
) -> Option<usize> {
    let exclude = exclude_query.then_some(pair.source);
    match table.nearest_by_index(prediction, l, exclude, similarity) {
        Ok(nn) => nn.rank_of(pair.target),
        Err(_) => None,
    }
}

struct Resolved {
    pairs: Vec<(BoundPair, usize)>,
    skips: usize,
}

fn resolve(model: &ProjectionModel, table: &EmbeddingTable, pairs: &[RelationPair]) -> Result<Resolved> {
    if model.dim() != table.dim() {
        return Err(Error::Dimension {
            expected: table.dim(),
            found: model.dim(),
        });
    }
    let positives: Vec<&RelationPair> = pairs.iter().filter(|p| !p.relation.is_negative()).collect();
    if positives.is_empty() {
        return Err(Error::Invalid("no hypernym pairs to evaluate".into()));
    }
    let mut out = Resolved {
        pairs: Vec::with_capacity(positives.len()),
        skips: 0,
    };
    let mut offset = vec![0.0; table.dim()];
    for p in positives {
        match (table.lookup(&p.source), table.lookup(&p.target)) {
            (Some(source), Some(target)) => {
                let bound = BoundPair { source, target };
                offset_into(table, bound, &mut offset);
                out.pairs.push((bound, model.clusters.assign(&offset)));
            }
            _ => out.skips += 1,
        }
    }
    if out.pairs.is_empty() {
        return Err(Error::Invalid(format!(
            "all {} pairs have words missing from the embeddings",
            out.skips
        )));
    }
    Ok(out)
}

fn ranks(
    model: &ProjectionModel,
    table: &EmbeddingTable,
    pairs: &[(BoundPair, usize)],
    l: usize,
    opts: EvalOptions,
) -> Result<Vec<Option<usize>>> {
    pairs
        .par_iter()
        .map(|(p, c)| {
            let pred = model.predict(table.vector(p.source), *c)?;
            Ok(gold_rank(table, &pred, p, l, opts.exclude_query, opts.similarity))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitAt {
    pub score: f64,
    pub n_pairs: usize,
    pub skips: usize,
}

/// Fraction of hypernym pairs whose gold hypernym is among the top `l`
/// neighbors. Pairs with another relation label are ignored.
pub fn hit_at(
    model: &ProjectionModel,
    table: &EmbeddingTable,
    pairs: &[RelationPair],
    l: usize,
    opts: EvalOptions,
) -> Result<HitAt> {
    if l == 0 {
        return Err(Error::Invalid("l must be at least 1".into()));
    }
    let resolved = resolve(model, table, pairs)?;
    let ranks = ranks(model, table, &resolved.pairs, l, opts)?;
    Ok(HitAt {
        score: hits_from_ranks(&ranks, l)[l - 1],
        n_pairs: ranks.len(),
        skips: resolved.skips,
    })
}

/// hit@1..hit@l_max, AUC and per-pair ranks from one neighbor search per pair.
pub fn evaluate(
    model: &ProjectionModel,
    table: &EmbeddingTable,
    pairs: &[RelationPair],
    l_max: usize,
    opts: EvalOptions,
) -> Result<EvalReport> {
    if l_max < 2 {
        return Err(Error::Invalid("l_max must be at least 2 for an AUC".into()));
    }
    let resolved = resolve(model, table, pairs)?;
    let ranks = ranks(model, table, &resolved.pairs, l_max, opts)?;
    let hits = hits_from_ranks(&ranks, l_max);
    let per_pair = resolved
        .pairs
        .iter()
        .zip(&ranks)
        .map(|((p, c), r)| PairOutcome {
            hyponym: table.word(p.source).to_owned(),
            gold: table.word(p.target).to_owned(),
            cluster: *c,
            rank: *r,
        })
        .collect();
    Ok(EvalReport {
        auc: auc(&hits)?,
        hits,
        l_max,
        n_pairs: ranks.len(),
        skips: resolved.skips,
        per_pair,
    })
}

/// Hypernym candidates for a word without a gold pair: every cluster's
/// projection is searched and the lists are merged, keeping each word's best
/// score.
pub fn predict_candidates(
    model: &ProjectionModel,
    table: &EmbeddingTable,
    word: &str,
    l: usize,
    opts: EvalOptions,
) -> Result<NeighborList> {
    let source = table
        .lookup(word)
        .ok_or_else(|| Error::UnknownWord(word.to_owned()))?;
    let x = table.vector(source);
    let exclude = opts.exclude_query.then_some(source);
    let mut merged: Vec<Neighbor> = Vec::new();
    for c in 0..model.k() {
        let pred = model.predict(x, c)?;
        match table.nearest_by_index(&pred, l, exclude, opts.similarity) {
            Ok(nn) => merged.extend(nn.entries),
            Err(Error::ZeroQuery) => continue,
            Err(e) => return Err(e),
        }
    }
    merged.sort_by(neighbor_order);
    let mut seen = std::collections::HashSet::new();
    merged.retain(|n| seen.insert(n.index));
    merged.truncate(l);
    Ok(NeighborList { entries: merged })
}
