//! Building the complementary-concept dataset from a product catalog and
//! co-purchase logs.
//!
//! Products are mapped to concepts by walking their category path from the
//! leaf upwards. Co-purchase events are then counted per concept pair and
//! turned into confidence-ranked complement lists.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::concept::{ConceptId, ConceptSet, RankedList};
use crate::error::{Error, Result};
use crate::serialize;

pub const DATASET_SCHEMA_VERSION: u32 = 1;
/// Number of targets used for training and evaluation.
pub const TARGET_SIZE: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub product_id: String,
    /// Root to leaf.
    pub category: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorRecord {
    pub product_id: String,
    #[serde(default)]
    pub also_buy: Vec<String>,
}

/// Returns the most fine-grained element of the category path that is a concept.
pub fn map_product_to_concept(entry: &CatalogEntry, set: &ConceptSet) -> Option<ConceptId> {
    entry
        .category
        .iter()
        .rev()
        .find_map(|level| set.lookup(level).map(|c| c.id))
}

pub fn filter_concept_by_tokens(surface: &str, max_tokens: usize) -> bool {
    crate::concept::token_count(surface) <= max_tokens
}

/// Concept occurrence and directed co-purchase counts.
///
/// `freq(x)` counts behavior records whose source product maps to `x`;
/// `cofreq(x, y)` counts those records listing at least one `also_buy`
/// product that maps to `y`. Each record contributes at most once per pair,
/// which keeps `cofreq(x, y) <= freq(x)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceTable {
    freq: BTreeMap<ConceptId, u64>,
    cofreq: BTreeMap<ConceptId, BTreeMap<ConceptId, u64>>,
}

impl ConfidenceTable {
    pub fn freq(&self, x: ConceptId) -> u64 {
        self.freq.get(&x).copied().unwrap_or(0)
    }

    pub fn cofreq(&self, x: ConceptId, y: ConceptId) -> u64 {
        self.cofreq
            .get(&x)
            .and_then(|row| row.get(&y))
            .copied()
            .unwrap_or(0)
    }

    /// `cofreq(x, y) / freq(x)`, zero when either count is zero.
    pub fn conf(&self, x: ConceptId, y: ConceptId) -> f64 {
        let fx = self.freq(x);
        if fx == 0 {
            return 0.0;
        }
        self.cofreq(x, y) as f64 / fx as f64
    }

    /// Partners of `x` with positive co-purchase count, keyed by id.
    pub fn partners(&self, x: ConceptId) -> impl Iterator<Item = (ConceptId, u64)> + '_ {
        self.cofreq
            .get(&x)
            .into_iter()
            .flat_map(|row| row.iter().map(|(&y, &n)| (y, n)))
    }

    pub fn partner_count(&self, x: ConceptId) -> usize {
        self.cofreq.get(&x).map_or(0, |r| r.len())
    }

    pub fn concepts(&self) -> impl Iterator<Item = (ConceptId, u64)> + '_ {
        self.freq.iter().map(|(&x, &n)| (x, n))
    }

    pub fn is_empty(&self) -> bool {
        self.freq.is_empty()
    }

    /// Partners of `x` ordered by confidence descending, ties by ascending id.
    pub fn ranked_partners(&self, x: ConceptId) -> Vec<(ConceptId, f64)> {
        let mut row: Vec<(ConceptId, u64)> = self.partners(x).collect();
        // same denominator within a row, so integer counts order exactly
        row.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        row.into_iter().map(|(y, _)| (y, self.conf(x, y))).collect()
    }

    pub fn add_record(&mut self, source: ConceptId, partners: &BTreeSet<ConceptId>) {
        *self.freq.entry(source).or_insert(0) += 1;
        for &y in partners {
            if y == source {
                continue;
            }
            *self.cofreq.entry(source).or_default().entry(y).or_insert(0) += 1;
        }
    }

    /// Associative merge of two partial tables.
    pub fn merge(&mut self, other: &ConfidenceTable) {
        for (&x, &n) in &other.freq {
            *self.freq.entry(x).or_insert(0) += n;
        }
        for (&x, row) in &other.cofreq {
            let dst = self.cofreq.entry(x).or_default();
            for (&y, &n) in row {
                *dst.entry(y).or_insert(0) += n;
            }
        }
    }
}

pub fn build_confidence_table(
    catalog: &[CatalogEntry],
    behavior: &[BehaviorRecord],
    set: &ConceptSet,
) -> ConfidenceTable {
    let product_concept: HashMap<&str, ConceptId> = catalog
        .iter()
        .filter_map(|e| Some((e.product_id.as_str(), map_product_to_concept(e, set)?)))
        .collect();
    let mut table = ConfidenceTable::default();
    for rec in behavior {
        let Some(&x) = product_concept.get(rec.product_id.as_str()) else {
            continue;
        };
        let partners: BTreeSet<ConceptId> = rec
            .also_buy
            .iter()
            .filter(|p| **p != rec.product_id)
            .filter_map(|p| product_concept.get(p.as_str()).copied())
            .filter(|&y| y != x)
            .collect();
        table.add_record(x, &partners);
    }
    table
}

/// Top-`k_collect` partners for every concept with enough support.
pub fn build_ranked_lists(
    table: &ConfidenceTable,
    k_collect: usize,
    min_freq: u64,
) -> BTreeMap<ConceptId, RankedList> {
    let mut lists = BTreeMap::new();
    for (x, fx) in table.concepts() {
        if fx < min_freq || table.partner_count(x) < k_collect {
            continue;
        }
        let mut targets = table.ranked_partners(x);
        targets.truncate(k_collect);
        lists.insert(x, RankedList { input: x, targets });
    }
    lists
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<ConceptId>,
    pub dev: Vec<ConceptId>,
    pub test: Vec<ConceptId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.82,
            dev: 0.06,
            test: 0.12,
        }
    }
}

/// Seeded shuffle of `concepts`, cut by ratio. Dev and test sizes are floored
/// and the remainder goes to train. Each split is returned in ascending id order.
pub fn split_concepts(concepts: &[ConceptId], ratios: SplitRatios, seed: u64) -> Result<Splits> {
    let sum = ratios.train + ratios.dev + ratios.test;
    if (sum - 1.0).abs() > 1e-6 || ratios.train < 0.0 || ratios.dev < 0.0 || ratios.test < 0.0 {
        return Err(Error::invalid(format!("split ratios must be non-negative and sum to 1, got {sum}")));
    }
    if concepts.len() < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 concepts to split, got {}",
            concepts.len()
        )));
    }
    let n = concepts.len();
    let mut order: Vec<ConceptId> = concepts.to_vec();
    order.sort();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_dev = (n as f64 * ratios.dev + 1e-9).floor() as usize;
    let n_test = (n as f64 * ratios.test + 1e-9).floor() as usize;
    let n_train = n - n_dev - n_test;
    let mut train = order[..n_train].to_vec();
    let mut dev = order[n_train..n_train + n_dev].to_vec();
    let mut test = order[n_train + n_dev..].to_vec();
    train.sort();
    dev.sort();
    test.sort();
    Ok(Splits { train, dev, test })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildParams {
    pub k_collect: usize,
    pub min_freq: u64,
    pub max_tokens: usize,
    pub ratios: SplitRatios,
    pub seed: u64,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self {
            k_collect: 10,
            min_freq: 20,
            max_tokens: 6,
            ratios: SplitRatios::default(),
            seed: 0,
        }
    }
}

/// The persisted benchmark: concepts, confidence statistics, top lists and splits.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Dataset {
    pub schema_version: u32,
    #[serde(default)]
    pub config_hash: String,
    pub params: BuildParams,
    pub target_size: usize,
    pub concepts: ConceptSet,
    pub table: ConfidenceTable,
    #[serde(with = "list_map")]
    pub lists: BTreeMap<ConceptId, RankedList>,
    pub splits: Splits,
}

mod list_map {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<ConceptId, RankedList>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(map.values())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<BTreeMap<ConceptId, RankedList>, D::Error> {
        let lists = Vec::<RankedList>::deserialize(d)?;
        Ok(lists.into_iter().map(|l| (l.input, l)).collect())
    }
}

impl Dataset {
    /// Runs the whole construction: token filter, confidence table, ranked
    /// lists and split.
    pub fn build(
        catalog: &[CatalogEntry],
        behavior: &[BehaviorRecord],
        concept_set: &ConceptSet,
        params: BuildParams,
    ) -> Result<Self> {
        if params.k_collect < TARGET_SIZE {
            return Err(Error::invalid(format!(
                "k_collect must be at least {TARGET_SIZE}, got {}",
                params.k_collect
            )));
        }
        let mut concepts = ConceptSet::new();
        for c in concept_set.iter() {
            if !filter_concept_by_tokens(&c.surface, params.max_tokens) {
                continue;
            }
            serialize::check_surface(&c.surface)?;
            concepts.intern(&c.surface)?;
        }
        concepts.freeze();
        let table = build_confidence_table(catalog, behavior, &concepts);
        let lists = build_ranked_lists(&table, params.k_collect, params.min_freq);
        let listed: Vec<ConceptId> = lists.keys().copied().collect();
        let splits = split_concepts(&listed, params.ratios, params.seed)?;
        Ok(Self {
            schema_version: DATASET_SCHEMA_VERSION,
            config_hash: String::new(),
            params,
            target_size: TARGET_SIZE,
            concepts,
            table,
            lists,
            splits,
        })
    }

    pub fn list(&self, x: ConceptId) -> Option<&RankedList> {
        self.lists.get(&x)
    }

    /// Target concepts (top `target_size`) of `x`.
    pub fn targets(&self, x: ConceptId) -> Vec<ConceptId> {
        self.lists
            .get(&x)
            .map(|l| l.top(self.target_size))
            .unwrap_or_default()
    }

    pub fn surface(&self, id: ConceptId) -> &str {
        self.concepts.surface(id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != DATASET_SCHEMA_VERSION {
            return Err(Error::Data(format!(
                "unsupported dataset schema version {}",
                self.schema_version
            )));
        }
        let n = self.concepts.len() as u32;
        for list in self.lists.values() {
            list.validate()?;
            if list.len() < self.target_size {
                return Err(Error::Data(format!(
                    "list of {} has fewer than {} targets",
                    list.input, self.target_size
                )));
            }
            if list.input.0 >= n || list.concepts().any(|y| y.0 >= n) {
                return Err(Error::Data("list refers to an unknown concept".into()));
            }
        }
        let mut seen = BTreeSet::new();
        for id in self.splits.train.iter().chain(&self.splits.dev).chain(&self.splits.test) {
            if !seen.insert(*id) {
                return Err(Error::Data(format!("{id} appears in more than one split")));
            }
            if !self.lists.contains_key(id) {
                return Err(Error::Data(format!("{id} is split but has no list")));
            }
        }
        if seen.len() != self.lists.len() {
            return Err(Error::Data("splits do not cover every listed concept".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ds: Dataset =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        ds.validate()?;
        Ok(ds)
    }
}

/// Reads line-delimited JSON records, skipping blank lines.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, path: &[&str]) -> CatalogEntry {
        CatalogEntry {
            product_id: id.into(),
            category: path.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn maps_to_deepest_known_level() {
        let set = ConceptSet::from_surfaces(["Electronics", "Digital Cameras"]).unwrap();
        let e = entry(
            "B00004TJ7O",
            &["Electronics", "Camera & Photo", "Digital Cameras", "Point & Shoot Digital Cameras"],
        );
        assert_eq!(map_product_to_concept(&e, &set), Some(ConceptId(1)));
        let leaf = ConceptSet::from_surfaces(["Point & Shoot Digital Cameras"]).unwrap();
        assert_eq!(map_product_to_concept(&e, &leaf), Some(ConceptId(0)));
        let none = ConceptSet::from_surfaces(["Batteries"]).unwrap();
        assert_eq!(map_product_to_concept(&e, &none), None);
    }

    #[test]
    fn token_filter_boundary() {
        assert!(filter_concept_by_tokens("Point & Shoot Digital Cameras", 6));
        assert!(filter_concept_by_tokens("a b c d e f", 6));
        assert!(!filter_concept_by_tokens("a b c d e f g", 6));
        assert!(filter_concept_by_tokens("Batteries", 6));
    }

    #[test]
    fn single_record_table() {
        let set = ConceptSet::from_surfaces(["X", "Y"]).unwrap();
        let catalog = [entry("p1", &["X"]), entry("p2", &["Y"])];
        let behavior = [BehaviorRecord {
            product_id: "p1".into(),
            also_buy: vec!["p2".into()],
        }];
        let t = build_confidence_table(&catalog, &behavior, &set);
        assert_eq!(t.freq(ConceptId(0)), 1);
        assert_eq!(t.cofreq(ConceptId(0), ConceptId(1)), 1);
        assert_eq!(t.conf(ConceptId(0), ConceptId(1)), 1.0);
        assert_eq!(t.freq(ConceptId(1)), 0);
    }

    #[test]
    fn conf_half_and_dropped_pairs() {
        let set = ConceptSet::from_surfaces(["X", "Y"]).unwrap();
        let catalog = [entry("p1", &["X"]), entry("p1b", &["X"]), entry("p2", &["Y"])];
        let mk = |src: &str, ab: &[&str]| BehaviorRecord {
            product_id: src.into(),
            also_buy: ab.iter().map(|s| s.to_string()).collect(),
        };
        let behavior = [
            mk("p1", &["p2", "p2", "p1b"]), // repeated partner counts once, self concept dropped
            mk("p1", &["unknown"]),
            mk("p1b", &["p2"]),
            mk("p1b", &[]),
            mk("ghost", &["p2"]),
        ];
        let t = build_confidence_table(&catalog, &behavior, &set);
        assert_eq!(t.freq(ConceptId(0)), 4);
        assert_eq!(t.cofreq(ConceptId(0), ConceptId(1)), 2);
        assert_eq!(t.conf(ConceptId(0), ConceptId(1)), 0.5);
        assert_eq!(t.cofreq(ConceptId(0), ConceptId(0)), 0);
        assert!(build_confidence_table(&catalog, &[], &set).is_empty());
    }

    #[test]
    fn merge_is_associative_with_single_pass() {
        let set = ConceptSet::from_surfaces(["A", "B", "C"]).unwrap();
        let catalog = [entry("a", &["A"]), entry("b", &["B"]), entry("c", &["C"])];
        let mk = |src: &str, ab: &[&str]| BehaviorRecord {
            product_id: src.into(),
            also_buy: ab.iter().map(|s| s.to_string()).collect(),
        };
        let recs = vec![mk("a", &["b"]), mk("b", &["c", "a"]), mk("a", &["c"]), mk("c", &["a"])];
        let whole = build_confidence_table(&catalog, &recs, &set);
        let mut left = build_confidence_table(&catalog, &recs[..2], &set);
        left.merge(&build_confidence_table(&catalog, &recs[2..], &set));
        assert_eq!(whole, left);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ids: Vec<_> = (0..100).map(ConceptId).collect();
        let r = SplitRatios { train: 0.8, dev: 0.1, test: 0.1 };
        let s = split_concepts(&ids, r, 7).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (80, 10, 10));
        assert_eq!(s, split_concepts(&ids, r, 7).unwrap());
        assert_ne!(s, split_concepts(&ids, r, 8).unwrap());
        assert!(split_concepts(&ids[..2], r, 7).is_err());
        let bad = SplitRatios { train: 0.5, dev: 0.1, test: 0.1 };
        assert!(split_concepts(&ids, bad, 7).is_err());
    }

    #[test]
    fn default_ratios_on_full_size_count() {
        let ids: Vec<_> = (0..7084).map(ConceptId).collect();
        let s = split_concepts(&ids, SplitRatios::default(), 1).unwrap();
        // 7084 * 0.06 = 425.04, 7084 * 0.12 = 850.08, remainder 5809
        assert!((s.train.len() as i64 - 5809).abs() <= 1);
        assert!((s.dev.len() as i64 - 425).abs() <= 1);
        assert!((s.test.len() as i64 - 850).abs() <= 1);
    }
}
