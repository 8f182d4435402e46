//! Scoring of generated lists.
//!
//! Position-wise accuracy counts the `m`-th prediction as a hit when it ranks
//! within the top `k` of the input's confidence ordering and does not repeat
//! an earlier prediction. The nDCG variant weighs every non-repeated
//! prediction by its co-purchase confidence and normalizes by the ideal
//! ordering of the ground-truth list.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concept::{ConceptId, ConceptSet};
use crate::dataset::{ConfidenceTable, Dataset};
use crate::error::{Error, Result};
use crate::prediction::PredictionRecord;

pub const DEFAULT_K: usize = 10;

#[derive(Clone, Debug)]
struct TruthEntry {
    ranks: HashMap<ConceptId, usize>,
    conf: HashMap<ConceptId, f64>,
    /// Ground-truth list in rank order.
    list: Vec<(ConceptId, f64)>,
    freq: u64,
}

/// Confidence orderings for the evaluated concepts.
#[derive(Clone, Debug, Default)]
pub struct GroundTruth {
    entries: BTreeMap<ConceptId, TruthEntry>,
}

impl GroundTruth {
    /// Every candidate with positive confidence is ranked, by confidence
    /// descending then ascending id. Zero-confidence candidates are unranked.
    pub fn from_table(table: &ConfidenceTable, concepts: &[ConceptId], list_len: usize) -> Self {
        let entries = concepts
            .iter()
            .map(|&x| {
                let order = table.ranked_partners(x);
                let ranks = order.iter().enumerate().map(|(i, &(y, _))| (y, i + 1)).collect();
                let conf = order.iter().copied().collect();
                let list = order.iter().take(list_len).copied().collect();
                (
                    x,
                    TruthEntry {
                        ranks,
                        conf,
                        list,
                        freq: table.freq(x),
                    },
                )
            })
            .collect();
        Self { entries }
    }

    pub fn from_dataset(ds: &Dataset, concepts: &[ConceptId]) -> Self {
        Self::from_table(&ds.table, concepts, ds.params.k_collect)
    }

    pub fn concepts(&self) -> impl Iterator<Item = ConceptId> + '_ {
        self.entries.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn freq(&self, x: ConceptId) -> u64 {
        self.entries.get(&x).map_or(0, |e| e.freq)
    }

    /// 1-based rank of `candidate` for input `x`; `None` means unranked.
    pub fn rank_of(&self, x: ConceptId, candidate: Option<ConceptId>) -> Option<usize> {
        self.entries.get(&x)?.ranks.get(&candidate?).copied()
    }

    pub fn conf(&self, x: ConceptId, y: ConceptId) -> f64 {
        self.entries
            .get(&x)
            .and_then(|e| e.conf.get(&y))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn top(&self, x: ConceptId, n: usize) -> Vec<ConceptId> {
        self.entries
            .get(&x)
            .map(|e| e.list.iter().take(n).map(|&(y, _)| y).collect())
            .unwrap_or_default()
    }

    fn subset(&self, keep: impl Fn(ConceptId) -> bool) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .filter(|(&x, _)| keep(x))
                .map(|(&x, e)| (x, e.clone()))
                .collect(),
        }
    }
}

/// Predictions aligned with ground-truth concepts. Concepts without a record
/// are scored as empty lists.
pub struct Aligned<'a> {
    pub rows: Vec<(ConceptId, Option<&'a PredictionRecord>)>,
    pub unmatched: usize,
}

pub fn align<'a>(
    records: &'a [PredictionRecord],
    truth: &GroundTruth,
    set: &ConceptSet,
) -> Result<Aligned<'a>> {
    let mut by_input: HashMap<ConceptId, &PredictionRecord> = HashMap::new();
    let mut unmatched = 0;
    for rec in records {
        match set.lookup(&rec.input).map(|c| c.id) {
            Some(x) if truth.entries.contains_key(&x) => {
                if by_input.insert(x, rec).is_some() {
                    return Err(Error::Data(format!("more than one record for {:?}", rec.input)));
                }
            }
            _ => unmatched += 1,
        }
    }
    Ok(Aligned {
        rows: truth.concepts().map(|x| (x, by_input.get(&x).copied())).collect(),
        unmatched,
    })
}

/// Dedup-aware hit indicator for position `m` of one prediction list.
pub fn hit_at(truth: &GroundTruth, x: ConceptId, predicted: &[Option<ConceptId>], m: usize, k: usize) -> bool {
    let Some(&Some(y)) = predicted.get(m - 1) else {
        return false;
    };
    if predicted[..m - 1].contains(&Some(y)) {
        return false;
    }
    truth.rank_of(x, Some(y)).is_some_and(|r| r <= k)
}

pub fn dcg(truth: &GroundTruth, x: ConceptId, predicted: &[Option<ConceptId>], m: usize) -> f64 {
    let mut seen = HashSet::new();
    let mut total = 0.0;
    for (i, p) in predicted.iter().take(m).enumerate() {
        let w = match p {
            Some(y) if seen.insert(*y) => truth.conf(x, *y),
            _ => 0.0,
        };
        total += w / ((i + 2) as f64).log2();
    }
    total
}

pub fn ideal_dcg(truth: &GroundTruth, x: ConceptId, m: usize) -> f64 {
    let Some(e) = truth.entries.get(&x) else {
        return 0.0;
    };
    let mut total = 0.0;
    for (i, &(_, c)) in e.list.iter().take(m).enumerate() {
        total += c / ((i + 2) as f64).log2();
    }
    total
}

fn predicted(rec: Option<&PredictionRecord>) -> Vec<Option<ConceptId>> {
    rec.map(|r| r.concepts()).unwrap_or_default()
}

pub fn acc_at_k(aligned: &Aligned<'_>, truth: &GroundTruth, m: usize, k: usize) -> Result<f64> {
    if aligned.rows.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    if m == 0 {
        return Err(Error::invalid("positions are 1-based"));
    }
    let hits = aligned
        .rows
        .iter()
        .filter(|(x, rec)| hit_at(truth, *x, &predicted(*rec), m, k))
        .count();
    Ok(hits as f64 / aligned.rows.len() as f64)
}

/// Mean of the position accuracies `1..=m`.
pub fn acc_overall(aligned: &Aligned<'_>, truth: &GroundTruth, m: usize, k: usize) -> Result<f64> {
    let mut sum = 0.0;
    for i in 1..=m {
        sum += acc_at_k(aligned, truth, i, k)?;
    }
    Ok(sum / m as f64)
}

pub fn ndcg(aligned: &Aligned<'_>, truth: &GroundTruth, m: usize) -> Result<f64> {
    if aligned.rows.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let mut sum = 0.0;
    for (x, rec) in &aligned.rows {
        let ideal = ideal_dcg(truth, *x, m);
        if ideal <= 0.0 {
            return Err(Error::Data(format!("ideal DCG of {x} is zero")));
        }
        sum += dcg(truth, *x, &predicted(*rec), m) / ideal;
    }
    Ok(sum / aligned.rows.len() as f64)
}

/// Fraction of generated (non-prefix) slots that name a concept of the set.
pub fn valid_rate(records: &[PredictionRecord]) -> f64 {
    let mut total = 0usize;
    let mut valid = 0usize;
    for rec in records {
        for slot in rec.slots.iter().skip(rec.prefix_len) {
            total += 1;
            valid += slot.is_valid() as usize;
        }
    }
    if total == 0 {
        0.0
    } else {
        valid as f64 / total as f64
    }
}

/// Which numbers a report carries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportSpec {
    pub positions: Vec<usize>,
    pub k: usize,
    /// Include the mean of the reported positions.
    pub overall: bool,
    /// nDCG cut-off, when reported.
    pub ndcg_m: Option<usize>,
}

impl ReportSpec {
    /// Positions 1..=m, overall, nDCG@m.
    pub fn full(m: usize, k: usize) -> Self {
        Self {
            positions: (1..=m).collect(),
            k,
            overall: true,
            ndcg_m: Some(m),
        }
    }

    /// Position 1 only, for single-target models.
    pub fn first_only(k: usize) -> Self {
        Self {
            positions: vec![1],
            k,
            overall: false,
            ndcg_m: None,
        }
    }

    pub fn positions(positions: Vec<usize>, k: usize) -> Self {
        Self {
            positions,
            k,
            overall: false,
            ndcg_m: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub lower: u64,
    pub upper: Option<u64>,
    /// Absent when no test concept falls in the bucket.
    pub report: Option<Box<MetricReport>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub mode: String,
    pub k: usize,
    pub n_test: usize,
    /// Accuracy by 1-based position.
    pub acc_at_k: BTreeMap<usize, f64>,
    pub acc_overall: Option<f64>,
    pub ndcg_m: Option<usize>,
    pub ndcg: Option<f64>,
    pub valid_rate: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub buckets: Vec<BucketReport>,
}

pub fn evaluate(
    name: &str,
    mode: &str,
    records: &[PredictionRecord],
    truth: &GroundTruth,
    set: &ConceptSet,
    spec: &ReportSpec,
) -> Result<MetricReport> {
    let aligned = align(records, truth, set)?;
    let mut acc = BTreeMap::new();
    for &m in &spec.positions {
        acc.insert(m, acc_at_k(&aligned, truth, m, spec.k)?);
    }
    let acc_overall = if spec.overall && !acc.is_empty() {
        Some(acc.values().sum::<f64>() / acc.len() as f64)
    } else {
        None
    };
    let ndcg = spec.ndcg_m.map(|m| ndcg(&aligned, truth, m)).transpose()?;
    let used: Vec<PredictionRecord> = aligned
        .rows
        .iter()
        .filter_map(|(_, r)| r.map(|r| (*r).clone()))
        .collect();
    Ok(MetricReport {
        name: name.to_string(),
        mode: mode.to_string(),
        k: spec.k,
        n_test: aligned.rows.len(),
        acc_at_k: acc,
        acc_overall,
        ndcg_m: spec.ndcg_m,
        ndcg,
        valid_rate: valid_rate(&used),
        buckets: Vec::new(),
    })
}

/// Splits the evaluated concepts by `freq(x)` at `edges` and reports each part.
pub fn frequency_bucket_report(
    records: &[PredictionRecord],
    truth: &GroundTruth,
    set: &ConceptSet,
    spec: &ReportSpec,
    edges: &[u64],
) -> Result<Vec<BucketReport>> {
    let mut edges = edges.to_vec();
    edges.sort_unstable();
    edges.dedup();
    let mut bounds = Vec::new();
    let mut lower = 0;
    for &e in &edges {
        if e > lower {
            bounds.push((lower, Some(e)));
            lower = e;
        }
    }
    bounds.push((lower, None));
    bounds
        .into_iter()
        .map(|(lo, hi)| {
            let part = truth.subset(|x| {
                let f = truth.freq(x);
                f >= lo && hi.is_none_or(|h| f < h)
            });
            let report = if part.is_empty() {
                None
            } else {
                let label = match hi {
                    Some(h) => format!("freq [{lo}, {h})"),
                    None => format!("freq >= {lo}"),
                };
                Some(Box::new(evaluate(&label, "plain", records, &part, set, spec)?))
            };
            Ok(BucketReport {
                lower: lo,
                upper: hi,
                report,
            })
        })
        .collect()
}

/// How the given part of a list is chosen for sequential evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefixMode {
    Plain,
    /// The top `n` ground-truth concepts, in order.
    GivenTopN,
    /// `n` concepts sampled from the top-10 list.
    GivenSampledTop10N,
    /// `n` concepts sampled from the whole concept set.
    GivenSampledAllN,
}

impl PrefixMode {
    pub fn tag(self, n: usize) -> String {
        match self {
            PrefixMode::Plain => "plain".into(),
            PrefixMode::GivenTopN => format!("+{n}"),
            PrefixMode::GivenSampledTop10N => format!("+{n} (top 10)"),
            PrefixMode::GivenSampledAllN => format!("+{n} (all)"),
        }
    }
}

impl std::str::FromStr for PrefixMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(PrefixMode::Plain),
            "given_top_n" => Ok(PrefixMode::GivenTopN),
            "given_sampled_top10_n" => Ok(PrefixMode::GivenSampledTop10N),
            "given_sampled_all_n" => Ok(PrefixMode::GivenSampledAllN),
            other => Err(Error::invalid(format!("unknown prefix mode {other:?}"))),
        }
    }
}

/// Anything that can produce a list for an input concept given a prefix.
pub trait ListGenerator: Sync {
    fn name(&self) -> &str;
    fn generate(&self, x: ConceptId, prefix: &[ConceptId]) -> PredictionRecord;
}

#[derive(Clone, Debug)]
pub struct SequentialSpec {
    pub mode: PrefixMode,
    pub n: usize,
    pub seed: u64,
    /// Score the position right after a full-length prefix.
    pub probe_next: bool,
    pub list_size: usize,
    pub k: usize,
}

impl SequentialSpec {
    pub fn plain(list_size: usize, k: usize) -> Self {
        Self {
            mode: PrefixMode::Plain,
            n: 0,
            seed: 0,
            probe_next: false,
            list_size,
            k,
        }
    }

    /// Absolute positions scored in this mode.
    pub fn scored_positions(&self) -> Result<Vec<usize>> {
        if self.mode == PrefixMode::Plain {
            return Ok((1..=self.list_size).collect());
        }
        if self.n == 0 {
            return Err(Error::invalid("prefix modes need n >= 1"));
        }
        if self.n >= self.list_size && !self.probe_next {
            return Err(Error::invalid(format!(
                "n = {} leaves no position to score in a {}-slot list; pass the probe flag",
                self.n, self.list_size
            )));
        }
        if self.n > self.list_size {
            return Err(Error::invalid(format!(
                "n = {} exceeds the list size {}",
                self.n, self.list_size
            )));
        }
        let mut positions: Vec<usize> = (self.n + 1..=self.list_size).collect();
        if self.probe_next && self.n == self.list_size {
            positions.push(self.list_size + 1);
        }
        Ok(positions)
    }

    /// Prefix for concept `x`. Random modes seed per concept so prefixes do
    /// not depend on evaluation order.
    pub fn prefix(&self, x: ConceptId, truth: &GroundTruth, universe: &[ConceptId]) -> Vec<ConceptId> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (u64::from(x.0) << 32 | 0x5eed));
        match self.mode {
            PrefixMode::Plain => Vec::new(),
            PrefixMode::GivenTopN => truth.top(x, self.n),
            PrefixMode::GivenSampledTop10N => {
                let pool = truth.top(x, 10);
                pool.choose_multiple(&mut rng, self.n.min(pool.len())).copied().collect()
            }
            PrefixMode::GivenSampledAllN => {
                let pool: Vec<ConceptId> = universe.iter().copied().filter(|&c| c != x).collect();
                pool.choose_multiple(&mut rng, self.n.min(pool.len())).copied().collect()
            }
        }
    }
}

/// Generates with mode-specific prefixes and scores only the positions after
/// the prefix, reported at their absolute positions.
pub fn sequential_evaluate<G: ListGenerator + ?Sized>(
    generator: &G,
    truth: &GroundTruth,
    set: &ConceptSet,
    spec: &SequentialSpec,
) -> Result<(MetricReport, Vec<PredictionRecord>)> {
    let positions = spec.scored_positions()?;
    let universe: Vec<ConceptId> = set.ids().collect();
    let concepts: Vec<ConceptId> = truth.concepts().collect();
    let records: Vec<PredictionRecord> = concepts
        .par_iter()
        .map(|&x| {
            let prefix = spec.prefix(x, truth, &universe);
            generator.generate(x, &prefix)
        })
        .collect();
    let report_spec = if spec.mode == PrefixMode::Plain {
        ReportSpec::full(spec.list_size, spec.k)
    } else {
        ReportSpec::positions(positions, spec.k)
    };
    let report = evaluate(
        generator.name(),
        &spec.mode.tag(spec.n),
        &records,
        truth,
        set,
        &report_spec,
    )?;
    Ok((report, records))
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", v * 100.0))
}

/// Aligned text table: one row per report, scores ×100 with two decimals.
pub fn render_table(reports: &[MetricReport]) -> String {
    let max_pos = reports
        .iter()
        .flat_map(|r| r.acc_at_k.keys().copied())
        .max()
        .unwrap_or(5)
        .max(5);
    let mut header: Vec<String> = vec!["Model / Score (%)".into()];
    header.extend((1..=max_pos).map(|p| p.to_string()));
    header.extend(["Overall", "nDCG", "VR"].map(String::from));
    let mut rows = vec![header];
    for r in reports {
        let label = if r.mode == "plain" {
            r.name.clone()
        } else {
            format!("{} {}", r.name, r.mode)
        };
        let mut row = vec![label];
        row.extend((1..=max_pos).map(|p| pct(r.acc_at_k.get(&p).copied())));
        row.push(pct(r.acc_overall));
        row.push(pct(r.ndcg));
        row.push(pct(Some(r.valid_rate)));
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                if c == 0 {
                    format!("{cell:<w$}", w = widths[c])
                } else {
                    format!("{cell:>w$}", w = widths[c])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}
