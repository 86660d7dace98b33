//! Dense word embeddings: loading, writing, and exhaustive nearest-neighbor search.
//!
//! Two on-disk layouts are supported. The text layout is one word per line,
//! `word v1 v2 ... vd`, with an optional leading `count dim` header. The binary
//! layout is the word2vec one: an ASCII `count dim\n` header followed, for each
//! word, by the token, a single space, and `d` little-endian `f32` values.
//!
//! Vectors are widened to `f64` on load regardless of the file precision.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, norm, Matrix};

/// Vocabulary sizes above which the similarity scan is split across threads.
const PARALLEL_SCAN_MIN: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingFormat {
    Text,
    Binary,
}

impl FromStr for EmbeddingFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(EmbeddingFormat::Text),
            "binary" => Ok(EmbeddingFormat::Binary),
            other => Err(Error::Invalid(format!("unknown embedding format `{other}`"))),
        }
    }
}

/// Similarity used to rank neighbors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    #[default]
    Cosine,
    Dot,
}

impl FromStr for Similarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Similarity::Cosine),
            "dot" => Ok(Similarity::Dot),
            other => Err(Error::Invalid(format!("unknown similarity `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub score: f64,
}

/// Neighbors sorted by descending score, ties broken by ascending vocabulary index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NeighborList {
    pub entries: Vec<Neighbor>,
}

impl NeighborList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// 1-based rank of `index`, if present.
    pub fn rank_of(&self, index: usize) -> Option<usize> {
        self.entries.iter().position(|n| n.index == index).map(|p| p + 1)
    }

    pub fn words<'a>(&'a self, table: &'a EmbeddingTable) -> impl Iterator<Item = (&'a str, f64)> + 'a {
        self.entries.iter().map(move |n| (table.word(n.index), n.score))
    }
}

/// Total order used everywhere neighbors are ranked.
pub(crate) fn neighbor_order(a: &Neighbor, b: &Neighbor) -> std::cmp::Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then(a.index.cmp(&b.index))
}

/// Immutable vocabulary plus one dense row per word.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Matrix,
    norms: Vec<f64>,
    normalized: bool,
}

impl EmbeddingTable {
    /// Builds a table from in-memory rows. Duplicate words keep their first row.
    pub fn from_rows<W, R>(words: &[W], rows: &[R], normalize: bool) -> Result<Self>
    where
        W: AsRef<str>,
        R: AsRef<[f64]>,
    {
        if words.len() != rows.len() {
            return Err(Error::Invalid(format!(
                "{} words but {} vectors",
                words.len(),
                rows.len()
            )));
        }
        let mut builder = Builder::default();
        for (i, (w, r)) in words.iter().zip(rows).enumerate() {
            builder
                .push(w.as_ref().to_owned(), r.as_ref().to_vec(), normalize)
                .map_err(|msg| Error::Invalid(format!("row {}: {msg}", i + 1)))?;
        }
        builder.finish(normalize)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn lookup(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, index: usize) -> &str {
        &self.words[index]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn vector(&self, index: usize) -> &[f64] {
        self.vectors.row(index)
    }

    pub fn vector_of(&self, word: &str) -> Option<&[f64]> {
        self.lookup(word).map(|i| self.vector(i))
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    /// SHA-256 over the vocabulary in table order, newline separated.
    pub fn vocab_hash(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.words {
            h.update(w.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// Top-`l` words by similarity to `query`, optionally skipping one word.
    pub fn nearest_neighbors(
        &self,
        query: &[f64],
        l: usize,
        exclude: Option<&str>,
        similarity: Similarity,
    ) -> Result<NeighborList> {
        let exclude = exclude.and_then(|w| self.lookup(w));
        self.nearest_by_index(query, l, exclude, similarity)
    }

    /// As [`nearest_neighbors`](Self::nearest_neighbors) with the exclusion given as a row index.
    ///
    /// Rows with zero norm are not usable under cosine similarity and are skipped.
    /// Asking for more neighbors than there are usable rows returns all of them.
    pub fn nearest_by_index(
        &self,
        query: &[f64],
        l: usize,
        exclude: Option<usize>,
        similarity: Similarity,
    ) -> Result<NeighborList> {
        if l == 0 {
            return Err(Error::Invalid("neighbor count must be at least 1".into()));
        }
        check_dim(self.dim(), query.len())?;
        let qnorm = norm(query);
        if !qnorm.is_finite() {
            return Err(Error::NonFinite("query vector".into()));
        }
        if similarity == Similarity::Cosine && qnorm == 0.0 {
            return Err(Error::ZeroQuery);
        }

        let score = |i: usize| -> Option<Neighbor> {
            if Some(i) == exclude {
                return None;
            }
            let raw = dot(query, self.vectors.row(i));
            let s = match similarity {
                Similarity::Dot => raw,
                Similarity::Cosine => {
                    let rn = self.norms[i];
                    if rn == 0.0 {
                        return None;
                    }
                    raw / (qnorm * rn)
                }
            };
            Some(Neighbor { index: i, score: s })
        };

        let mut scored: Vec<Neighbor> = if self.len() >= PARALLEL_SCAN_MIN {
            (0..self.len()).into_par_iter().filter_map(score).collect()
        } else {
            (0..self.len()).filter_map(score).collect()
        };

        if l < scored.len() {
            scored.select_nth_unstable_by(l - 1, neighbor_order);
            scored.truncate(l);
        }
        scored.sort_by(neighbor_order);
        Ok(NeighborList { entries: scored })
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.len(), self.dim())?;
        for (i, word) in self.words.iter().enumerate() {
            w.write_all(word.as_bytes())?;
            for v in self.vector(i) {
                write!(w, " {}", Sig9(*v))?;
            }
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    /// Values are narrowed to `f32`, as the layout requires.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.len(), self.dim())?;
        for (i, word) in self.words.iter().enumerate() {
            w.write_all(word.as_bytes())?;
            w.write_all(b" ")?;
            for v in self.vector(i) {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
            w.write_all(b"\n")?;
        }
        w.flush()
    }
}

/// Formats a float with 9 significant digits, `%g` style.
pub struct Sig9(pub f64);

impl fmt::Display for Sig9 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.0;
        if v == 0.0 || !v.is_finite() {
            return write!(f, "{v}");
        }
        let sci = format!("{v:.8e}");
        let (mantissa, exp) = sci.split_once('e').expect("scientific notation");
        let exp: i32 = exp.parse().expect("exponent");
        if (-5..9).contains(&exp) {
            let decimals = (8 - exp) as usize;
            let fixed = format!("{v:.decimals$}");
            f.write_str(trim_zeros(&fixed))
        } else {
            write!(f, "{}e{exp}", trim_zeros(mantissa))
        }
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[derive(Default)]
struct Builder {
    words: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
    norms: Vec<f64>,
    dim: Option<usize>,
    duplicates: usize,
}

impl Builder {
    fn push(&mut self, word: String, mut v: Vec<f64>, normalize: bool) -> std::result::Result<(), String> {
        if word.is_empty() {
            return Err("empty word".into());
        }
        match self.dim {
            None if v.is_empty() => return Err("vector has no components".into()),
            None => self.dim = Some(v.len()),
            Some(d) if d != v.len() => {
                return Err(format!("expected {d} components, found {}", v.len()));
            }
            _ => {}
        }
        if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
            return Err(format!("non-finite value {bad}"));
        }
        if self.index.contains_key(&word) {
            self.duplicates += 1;
            warn!("duplicate vocabulary entry `{word}`, keeping the first occurrence");
            return Ok(());
        }
        let mut n = norm(&v);
        if normalize {
            if n == 0.0 {
                return Err(format!("zero vector for `{word}` cannot be normalized"));
            }
            for x in &mut v {
                *x /= n;
            }
            n = norm(&v);
        }
        self.index.insert(word.clone(), self.words.len());
        self.words.push(word);
        self.data.extend_from_slice(&v);
        self.norms.push(n);
        Ok(())
    }

    fn finish(self, normalized: bool) -> Result<EmbeddingTable> {
        let dim = self
            .dim
            .ok_or_else(|| Error::Invalid("embedding table is empty".into()))?;
        let rows = self.words.len();
        Ok(EmbeddingTable {
            words: self.words,
            index: self.index,
            vectors: Matrix::from_vec(rows, dim, self.data),
            norms: self.norms,
            normalized,
        })
    }
}

/// Reads an embedding file from disk.
pub fn load_embeddings(path: &Path, format: EmbeddingFormat, normalize: bool) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    match format {
        EmbeddingFormat::Text => read_text(reader, path, normalize),
        EmbeddingFormat::Binary => read_binary(reader, path, normalize),
    }
}

/// Parses the text layout. `origin` is only used in error messages.
pub fn read_text<R: BufRead>(reader: R, origin: &Path, normalize: bool) -> Result<EmbeddingTable> {
    let mut builder = Builder::default();
    let mut declared: Option<(usize, usize)> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        let mut fields = line.split_ascii_whitespace();
        let Some(word) = fields.next() else {
            continue;
        };
        let rest: Vec<&str> = fields.collect();
        if lineno == 1 && rest.len() == 1 {
            if let (Ok(count), Ok(dim)) = (word.parse::<usize>(), rest[0].parse::<usize>()) {
                declared = Some((count, dim));
                builder.dim = Some(dim);
                continue;
            }
        }
        let mut v = Vec::with_capacity(rest.len());
        for tok in rest {
            let x: f64 = tok
                .parse()
                .map_err(|_| Error::parse(origin, lineno, format!("cannot parse `{tok}` as a number")))?;
            v.push(x);
        }
        builder
            .push(word.to_owned(), v, normalize)
            .map_err(|msg| Error::parse(origin, lineno, msg))?;
    }
    if builder.words.is_empty() {
        return Err(Error::parse(origin, 1, "no embeddings in file"));
    }
    if let Some((count, _)) = declared {
        if count != builder.words.len() + builder.duplicates {
            warn!(
                "{}: header declares {count} words, read {}",
                origin.display(),
                builder.words.len() + builder.duplicates
            );
        }
    }
    builder.finish(normalize)
}

/// Parses the word2vec binary layout. Error "lines" count the header as line 1
/// and each entry as one line after it.
pub fn read_binary<R: BufRead>(mut reader: R, origin: &Path, normalize: bool) -> Result<EmbeddingTable> {
    let mut header = String::new();
    reader
        .read_line(&mut header)
        .map_err(|e| Error::io(origin, e))?;
    if header.trim().is_empty() {
        return Err(Error::parse(origin, 1, "no embeddings in file"));
    }
    let mut parts = header.split_ascii_whitespace();
    let parse_num = |s: Option<&str>| s.and_then(|s| s.parse::<usize>().ok());
    let (Some(count), Some(dim)) = (parse_num(parts.next()), parse_num(parts.next())) else {
        return Err(Error::parse(origin, 1, "header must be `count dim`"));
    };
    if count == 0 || dim == 0 {
        return Err(Error::parse(origin, 1, "header declares an empty table"));
    }

    let mut builder = Builder::default();
    let mut token = Vec::new();
    let mut buf = vec![0u8; 4 * dim];
    for entry in 0..count {
        let line = entry + 2;
        token.clear();
        reader
            .read_until(b' ', &mut token)
            .map_err(|e| Error::io(origin, e))?;
        if token.last() != Some(&b' ') {
            return Err(Error::parse(origin, line, "unexpected end of file in word token"));
        }
        token.pop();
        let word = std::str::from_utf8(&token)
            .map_err(|_| Error::parse(origin, line, "word is not valid UTF-8"))?
            .trim()
            .to_owned();
        reader
            .read_exact(&mut buf)
            .map_err(|_| Error::parse(origin, line, "unexpected end of file in vector"))?;
        let v: Vec<f64> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        builder
            .push(word, v, normalize)
            .map_err(|msg| Error::parse(origin, line, msg))?;
    }
    builder.finish(normalize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn text(s: &str, normalize: bool) -> Result<EmbeddingTable> {
        read_text(Cursor::new(s), Path::new("mem.txt"), normalize)
    }

    fn abc() -> EmbeddingTable {
        EmbeddingTable::from_rows(&["a", "b", "c"], &[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]], false).unwrap()
    }

    #[test]
    fn reads_two_line_file() {
        let t = text("a 1 0\nb 0 1\n", false).unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.vector_of("a"), Some(&[1.0, 0.0][..]));
        let t = text("a 1 0\nb 0 1\n", true).unwrap();
        assert_eq!(t.vector_of("a"), Some(&[1.0, 0.0][..]));
        assert_eq!(t.vector_of("b"), Some(&[0.0, 1.0][..]));
    }

    #[test]
    fn normalizes_three_four_five() {
        let t = text("c 3 4\n", true).unwrap();
        let v = t.vector_of("c").unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15);
        assert!((v[1] - 0.8).abs() < 1e-15);
        assert!(t.is_normalized());
    }

    #[test]
    fn header_is_optional() {
        let t = text("2 2\na 1 0\nb 0 1\n", false).unwrap();
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn rejects_bad_input() {
        match text("a 1 0\nb 0 1 2\n", false) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(text("a 1 nan\n", false), Err(Error::Parse { .. })));
        assert!(matches!(text("a 1 inf\n", false), Err(Error::Parse { .. })));
        assert!(matches!(text("", false), Err(Error::Parse { .. })));
        assert!(matches!(text("z 0 0\n", true), Err(Error::Parse { .. })));
    }

    #[test]
    fn duplicates_keep_first() {
        let t = text("a 1 0\na 0 1\nB 2 2\nb 3 3\n", false).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.vector_of("a"), Some(&[1.0, 0.0][..]));
        // No case folding.
        assert_ne!(t.lookup("B"), t.lookup("b"));
    }

    #[test]
    fn neighbors_by_hand() {
        let t = abc();
        let nn = t.nearest_neighbors(&[1.0, 0.0], 2, None, Similarity::Cosine).unwrap();
        assert_eq!(nn.words(&t).collect::<Vec<_>>(), vec![("a", 1.0), ("b", 0.0)]);
        let nn = t.nearest_neighbors(&[1.0, 0.0], 2, Some("a"), Similarity::Cosine).unwrap();
        assert_eq!(nn.words(&t).collect::<Vec<_>>(), vec![("b", 0.0), ("c", -1.0)]);
        let nn = t.nearest_neighbors(&[1.0, 0.0], 5, None, Similarity::Cosine).unwrap();
        assert_eq!(nn.len(), 3);
    }

    #[test]
    fn neighbor_errors() {
        let t = abc();
        assert!(matches!(
            t.nearest_neighbors(&[0.0, 0.0], 1, None, Similarity::Cosine),
            Err(Error::ZeroQuery)
        ));
        assert!(matches!(
            t.nearest_neighbors(&[1.0], 1, None, Similarity::Cosine),
            Err(Error::Dimension { .. })
        ));
        // Dot products against a zero query are all zero, and well defined.
        let nn = t.nearest_neighbors(&[0.0, 0.0], 3, None, Similarity::Dot).unwrap();
        assert_eq!(nn.entries.iter().map(|n| n.index).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn ties_break_by_index() {
        let t = EmbeddingTable::from_rows(&["p", "q", "r"], &[[0.0, 1.0], [1.0, 0.0], [0.0, 1.0]], false).unwrap();
        let nn = t.nearest_neighbors(&[0.0, 1.0], 2, None, Similarity::Cosine).unwrap();
        assert_eq!(nn.entries.iter().map(|n| n.index).collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn zero_rows_are_unusable_under_cosine() {
        let t = EmbeddingTable::from_rows(&["z", "a"], &[[0.0, 0.0], [1.0, 1.0]], false).unwrap();
        let nn = t.nearest_neighbors(&[1.0, 0.0], 5, None, Similarity::Cosine).unwrap();
        assert_eq!(nn.len(), 1);
    }

    #[test]
    fn binary_round_trip() {
        let t = EmbeddingTable::from_rows(&["x", "yy", "é"], &[[0.5, -1.25], [3.0, 0.0], [1e-3, 2.0]], false).unwrap();
        let mut buf = Vec::new();
        t.write_binary(&mut buf).unwrap();
        let back = read_binary(Cursor::new(buf), Path::new("mem.bin"), false).unwrap();
        assert_eq!(back.words(), t.words());
        for i in 0..t.len() {
            for (a, b) in back.vector(i).iter().zip(t.vector(i)) {
                assert_eq!(*a, *b as f32 as f64);
            }
        }
    }

    #[test]
    fn truncated_binary_is_an_error() {
        let mut buf = b"2 2\na ".to_vec();
        buf.extend_from_slice(&1f32.to_le_bytes());
        assert!(matches!(
            read_binary(Cursor::new(buf), Path::new("mem.bin"), false),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(Sig9(0.6).to_string(), "0.6");
        assert_eq!(Sig9(-1.0).to_string(), "-1");
        assert_eq!(Sig9(1.0 / 3.0).to_string(), "0.333333333");
        assert_eq!(Sig9(123456789.4).to_string(), "123456789");
        assert_eq!(Sig9(1.5e-7).to_string(), "1.5e-7");
        assert_eq!(Sig9(2.5e12).to_string(), "2.5e12");
    }
}
