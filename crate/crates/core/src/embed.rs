//! Word vectors, additive concept embeddings and cosine ranking.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::concept::{ConceptId, ConceptSet};
use crate::error::{Error, Result};

const BINARY_MAGIC: &[u8; 4] = b"CCWV";
const BINARY_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct WordVectorTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    /// Lowercase tokens before lookup (keys are stored lowercased too).
    lowercase: bool,
}

impl WordVectorTable {
    pub fn new(dim: usize, lowercase: bool) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("word vector dimension must be positive"));
        }
        Ok(Self {
            dim,
            vectors: HashMap::new(),
            lowercase,
        })
    }

    pub fn insert(&mut self, token: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::invalid(format!(
                "vector for {token:?} has {} dims, expected {}",
                vector.len(),
                self.dim
            )));
        }
        self.vectors.insert(self.key(token), vector);
        Ok(())
    }

    fn key(&self, token: &str) -> String {
        if self.lowercase {
            token.to_lowercase()
        } else {
            token.to_string()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(&self.key(token)).map(Vec::as_slice)
    }

    /// Parses `token v1 ... vd` lines. The dimension comes from the first line.
    pub fn load(path: impl AsRef<Path>, lowercase: bool) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut table: Option<Self> = None;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else {
                continue;
            };
            let values = parts
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
            if values.is_empty() {
                return Err(Error::parse(path, i + 1, "token without vector"));
            }
            let t = match table.as_mut() {
                Some(t) => t,
                None => table.insert(Self::new(values.len(), lowercase)?),
            };
            if values.len() != t.dim {
                return Err(Error::parse(
                    path,
                    i + 1,
                    format!("expected {} dims, found {}", t.dim, values.len()),
                ));
            }
            t.insert(token, values)?;
        }
        table.ok_or_else(|| Error::parse(path, 0, "empty word vector file"))
    }

    /// Writes the text format with tokens in sorted order.
    pub fn save_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut tokens: Vec<&String> = self.vectors.keys().collect();
        tokens.sort();
        let mut out = String::new();
        for t in tokens {
            out.push_str(t);
            for v in &self.vectors[t] {
                out.push_str(&format!(" {v:.6}"));
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Binary cache: magic, version, dim, count, then (len, utf8, f64 * dim) entries.
    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        buf.extend_from_slice(BINARY_MAGIC);
        buf.extend_from_slice(&BINARY_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dim as u64).to_le_bytes());
        buf.extend_from_slice(&[self.lowercase as u8]);
        buf.extend_from_slice(&(self.vectors.len() as u64).to_le_bytes());
        let mut tokens: Vec<&String> = self.vectors.keys().collect();
        tokens.sort();
        for t in tokens {
            buf.extend_from_slice(&(t.len() as u32).to_le_bytes());
            buf.extend_from_slice(t.as_bytes());
            for v in &self.vectors[t] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load_binary(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let bad = |msg: &str| Error::parse(path, 0, msg.to_string());
        let mut cur = bytes.as_slice();
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(bad("truncated binary vector cache"));
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(4)? != BINARY_MAGIC {
            return Err(bad("not a binary vector cache"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != BINARY_VERSION {
            return Err(bad("unsupported binary vector cache version"));
        }
        let dim = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let lowercase = take(1)?[0] != 0;
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let mut table = Self::new(dim, lowercase)?;
        for _ in 0..count {
            let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let token = std::str::from_utf8(take(len)?)
                .map_err(|_| bad("token is not utf-8"))?
                .to_string();
            let mut v = Vec::with_capacity(dim);
            for _ in 0..dim {
                v.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
            }
            table.vectors.insert(token, v);
        }
        Ok(table)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConceptEmbedding {
    pub vector: Vec<f64>,
    /// Fraction of the surface's tokens found in the table.
    pub coverage: f64,
}

/// Sum of the word vectors of the surface's whitespace tokens. Unknown
/// tokens contribute nothing.
pub fn compose(surface: &str, table: &WordVectorTable) -> ConceptEmbedding {
    let mut vector = vec![0.0; table.dim()];
    let mut total = 0usize;
    let mut found = 0usize;
    for tok in surface.split_whitespace() {
        total += 1;
        if let Some(v) = table.get(tok) {
            found += 1;
            for (acc, x) in vector.iter_mut().zip(v) {
                *acc += x;
            }
        }
    }
    let coverage = if total == 0 { 0.0 } else { found as f64 / total as f64 };
    ConceptEmbedding { vector, coverage }
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// Cosine similarity; zero when either operand is the zero vector.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::invalid(format!(
            "cosine of vectors with lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    Ok(cosine_unchecked(u, v))
}

pub(crate) fn cosine_unchecked(u: &[f64], v: &[f64]) -> f64 {
    let denom = norm(u) * norm(v);
    if denom == 0.0 {
        return 0.0;
    }
    (dot(u, v) / denom).clamp(-1.0, 1.0)
}

/// Composed embeddings for every concept of a set, indexed by concept id.
#[derive(Clone, Debug)]
pub struct ConceptEmbeddings {
    dim: usize,
    embeddings: Vec<ConceptEmbedding>,
}

impl ConceptEmbeddings {
    pub fn compose_all(set: &ConceptSet, table: &WordVectorTable) -> Self {
        Self {
            dim: table.dim(),
            embeddings: set.iter().map(|c| compose(&c.surface, table)).collect(),
        }
    }

    pub fn from_vectors(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let dim = vectors.first().map_or(0, Vec::len);
        if vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::invalid("embeddings of unequal length"));
        }
        Ok(Self {
            dim,
            embeddings: vectors
                .into_iter()
                .map(|vector| ConceptEmbedding { vector, coverage: 1.0 })
                .collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn vector(&self, id: ConceptId) -> &[f64] {
        &self.embeddings[id.index()].vector
    }

    pub fn get(&self, id: ConceptId) -> &ConceptEmbedding {
        &self.embeddings[id.index()]
    }

    pub fn ids(&self) -> impl Iterator<Item = ConceptId> {
        (0..self.embeddings.len() as u32).map(ConceptId)
    }
}

/// Sorts `(id, score)` pairs by score descending, ties by ascending id.
pub fn rank_by_score(scored: &mut [(ConceptId, f64)]) {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

/// The `top_n` concepts most cosine-similar to `query`, skipping `exclude`.
pub fn nearest_concepts(
    query: &[f64],
    embeddings: &ConceptEmbeddings,
    top_n: usize,
    exclude: Option<ConceptId>,
) -> Vec<ConceptId> {
    let mut scored: Vec<(ConceptId, f64)> = embeddings
        .ids()
        .filter(|&id| Some(id) != exclude)
        .map(|id| (id, cosine_unchecked(query, embeddings.vector(id))))
        .collect();
    rank_by_score(&mut scored);
    scored.into_iter().take(top_n).map(|(id, _)| id).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy_table() -> WordVectorTable {
        let mut t = WordVectorTable::new(2, true).unwrap();
        t.insert("digital", vec![1.0, 0.0]).unwrap();
        t.insert("cameras", vec![0.0, 2.0]).unwrap();
        t
    }

    #[test]
    fn load_text_vectors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.txt");
        std::fs::write(&p, "a 1 2 3 4\nb 0 0 0 1\nc 1 1 1 1\n").unwrap();
        let t = WordVectorTable::load(&p, true).unwrap();
        assert_eq!(t.dim(), 4);
        assert_eq!(t.len(), 3);
        assert_eq!(t.get("A").unwrap(), &[1.0, 2.0, 3.0, 4.0]);

        std::fs::write(&p, "").unwrap();
        assert!(WordVectorTable::load(&p, true).is_err());

        std::fs::write(&p, "a 1 2\nb 1 2 3\n").unwrap();
        match WordVectorTable::load(&p, true) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(WordVectorTable::load(dir.path().join("missing"), true).is_err());
    }

    #[test]
    fn binary_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.bin");
        let t = toy_table();
        t.save_binary(&p).unwrap();
        assert_eq!(WordVectorTable::load_binary(&p).unwrap(), t);
        std::fs::write(&p, b"XXXX").unwrap();
        assert!(WordVectorTable::load_binary(&p).is_err());
    }

    #[test]
    fn compose_adds_token_vectors() {
        let t = toy_table();
        let e = compose("Digital Cameras", &t);
        assert_eq!(e.vector, vec![1.0, 2.0]);
        assert_eq!(e.coverage, 1.0);
        assert_eq!(compose("Digital", &t).vector, vec![1.0, 0.0]);
        let half = compose("Digital Sanitizers", &t);
        assert_eq!(half.coverage, 0.5);
        let none = compose("Hand Sanitizers", &t);
        assert_eq!(none.vector, vec![0.0, 0.0]);
        assert_eq!(none.coverage, 0.0);
    }

    #[test]
    fn cosine_values() {
        assert!((cosine(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
        assert_eq!(cosine(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 5.0]).unwrap(), 0.0);
        assert_eq!(cosine(&[0.0, 0.0], &[0.0, 5.0]).unwrap(), 0.0);
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn nearest_matches_brute_force_on_toy_fixture() {
        let vecs = vec![
            vec![1.0, 0.0],
            vec![0.9, 0.1],
            vec![0.0, 1.0],
            vec![-1.0, 0.2],
            vec![0.5, 0.5],
        ];
        let emb = ConceptEmbeddings::from_vectors(vecs.clone()).unwrap();
        let query = [1.0, 0.2];
        // brute force: score every pair by hand-written formula, then selection sort
        let mut remaining: Vec<(u32, f64)> = vecs
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let d = query[0] * v[0] + query[1] * v[1];
                let n = (query[0] * query[0] + query[1] * query[1]).sqrt()
                    * (v[0] * v[0] + v[1] * v[1]).sqrt();
                (i as u32, d / n)
            })
            .collect();
        let mut expected = Vec::new();
        while !remaining.is_empty() {
            let mut best = 0;
            for i in 1..remaining.len() {
                if remaining[i].1 > remaining[best].1 {
                    best = i;
                }
            }
            expected.push(ConceptId(remaining.remove(best).0));
        }
        assert_eq!(nearest_concepts(&query, &emb, 10, None), expected);
        assert_eq!(nearest_concepts(&query, &emb, 2, None), expected[..2]);
        let without_first = nearest_concepts(&query, &emb, 10, Some(expected[0]));
        assert_eq!(without_first, expected[1..]);
    }

    #[test]
    fn zero_query_ties_break_by_id() {
        let emb = ConceptEmbeddings::from_vectors(vec![vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        assert_eq!(
            nearest_concepts(&[0.0], &emb, 3, Some(ConceptId(1))),
            vec![ConceptId(0), ConceptId(2)]
        );
    }

    proptest! {
        #[test]
        fn compose_ignores_token_order(a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0) {
            let mut t = WordVectorTable::new(2, false).unwrap();
            t.insert("x", vec![a, b]).unwrap();
            t.insert("y", vec![c, a]).unwrap();
            prop_assert_eq!(compose("x y", &t).vector, compose("y x", &t).vector);
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(
            u in prop::collection::vec(-10.0f64..10.0, 4),
            v in prop::collection::vec(-10.0f64..10.0, 4),
            scale in 0.01f64..100.0,
        ) {
            let c = cosine(&u, &v).unwrap();
            prop_assert!((-1.0..=1.0).contains(&c));
            prop_assert!((c - cosine(&v, &u).unwrap()).abs() < 1e-12);
            let scaled: Vec<f64> = u.iter().map(|x| x * scale).collect();
            prop_assert!((c - cosine(&scaled, &v).unwrap()).abs() < 1e-9);
        }
    }
}
