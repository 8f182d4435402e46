//! Comparison systems: embedding similarity, nearest-neighbor pooling, a
//! linear pair scorer, item2vec-style context embeddings, a complement
//! projection, and ingestion of outputs from an external model.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::concept::{CaseMode, ConceptId, ConceptSet};
use crate::dataset::Dataset;
use crate::embed::{self, compose, cosine_unchecked, dot, norm, rank_by_score, ConceptEmbeddings, WordVectorTable};
use crate::error::{Error, Result};
use crate::metrics::ListGenerator;
use crate::prediction::PredictionRecord;
use crate::serialize::{DecodeOptions, Grammar};

pub const CHECKPOINT_FORMAT: &str = "ccgen-baseline";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const DEFAULT_NEGATIVES: usize = 5;

/// A system that ranks candidate complements for an input concept.
pub trait Ranker: Sync {
    fn name(&self) -> &str;
    /// The `n` best candidates for `x`, never including `x` itself.
    fn rank(&self, x: ConceptId, n: usize) -> Vec<ConceptId>;
}

/// Record with exactly `n` slots from a ranker.
pub fn rank_record(ranker: &dyn Ranker, set: &ConceptSet, x: ConceptId, n: usize) -> PredictionRecord {
    PredictionRecord::from_concepts(set.surface(x), ranker.name(), &ranker.rank(x, n), set)
}

/// [`ListGenerator`] view of a ranker. Prefixes are ignored: baselines rank
/// independently of previously listed concepts.
pub struct RankerGenerator<'a> {
    pub ranker: &'a dyn Ranker,
    pub set: &'a ConceptSet,
    pub n: usize,
}

impl ListGenerator for RankerGenerator<'_> {
    fn name(&self) -> &str {
        self.ranker.name()
    }

    fn generate(&self, x: ConceptId, _prefix: &[ConceptId]) -> PredictionRecord {
        rank_record(self.ranker, self.set, x, self.n)
    }
}

/// Scores every concept except `x` and keeps the best `n`.
fn top_by<F: Fn(ConceptId) -> f64>(len: usize, x: ConceptId, n: usize, score: F) -> Vec<ConceptId> {
    let mut scored: Vec<(ConceptId, f64)> = (0..len as u32)
        .map(ConceptId)
        .filter(|&y| y != x)
        .map(|y| (y, score(y)))
        .collect();
    rank_by_score(&mut scored);
    scored.into_iter().take(n).map(|(y, _)| y).collect()
}

// ---------------------------------------------------------------------------
// checkpoints

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub dim: usize,
    pub seed: u64,
    pub epochs: usize,
    #[serde(default)]
    pub config_hash: String,
}

impl CheckpointHeader {
    pub fn new(kind: &str, dim: usize, seed: u64, epochs: usize) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind: kind.into(),
            dim,
            seed,
            epochs,
            config_hash: String::new(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint<T> {
    header: CheckpointHeader,
    model: T,
}

/// Writes `model` as JSON behind a header.
pub fn save_checkpoint<T: Serialize>(path: impl AsRef<Path>, header: &CheckpointHeader, model: &T) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string(&Checkpoint {
        header: header.clone(),
        model,
    })?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint, checking format, version and `kind`.
pub fn load_checkpoint<T: DeserializeOwned>(path: impl AsRef<Path>, kind: &str) -> Result<(CheckpointHeader, T)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint<T> = serde_json::from_str(&text).map_err(|e| Error::parse(path, 0, e.to_string()))?;
    let h = &ck.header;
    if h.format != CHECKPOINT_FORMAT || h.version != CHECKPOINT_VERSION {
        return Err(Error::Data(format!(
            "{}: not a baseline checkpoint ({} v{})",
            path.display(),
            h.format,
            h.version
        )));
    }
    if h.kind != kind {
        return Err(Error::Data(format!(
            "{}: checkpoint holds a {} model, expected {kind}",
            path.display(),
            h.kind
        )));
    }
    Ok((ck.header, ck.model))
}

// ---------------------------------------------------------------------------
// embedding similarity

/// Cosine similarity between composed embeddings.
pub struct GloveRanker<'a> {
    pub embeddings: &'a ConceptEmbeddings,
}

impl Ranker for GloveRanker<'_> {
    fn name(&self) -> &str {
        "glove"
    }

    fn rank(&self, x: ConceptId, n: usize) -> Vec<ConceptId> {
        embed::nearest_concepts(self.embeddings.vector(x), self.embeddings, n, Some(x))
    }
}

pub fn glove_rank(x: ConceptId, set: &ConceptSet, embeddings: &ConceptEmbeddings, n: usize) -> PredictionRecord {
    rank_record(&GloveRanker { embeddings }, set, x, n)
}

// ---------------------------------------------------------------------------
// nearest neighbors

/// Pools the stored lists of the `k` training concepts closest to the input.
pub struct KnnRanker<'a> {
    pub embeddings: &'a ConceptEmbeddings,
    /// Training concept → its target list.
    pub train_lists: BTreeMap<ConceptId, Vec<ConceptId>>,
    pub k: usize,
}

impl<'a> KnnRanker<'a> {
    pub fn new(ds: &Dataset, embeddings: &'a ConceptEmbeddings, k: usize) -> Result<Self> {
        let train_lists: BTreeMap<ConceptId, Vec<ConceptId>> =
            ds.splits.train.iter().map(|&x| (x, ds.targets(x))).collect();
        Self::from_lists(train_lists, embeddings, k)
    }

    pub fn from_lists(
        train_lists: BTreeMap<ConceptId, Vec<ConceptId>>,
        embeddings: &'a ConceptEmbeddings,
        k: usize,
    ) -> Result<Self> {
        if train_lists.is_empty() {
            return Err(Error::invalid("knn needs a non-empty training split"));
        }
        if k == 0 {
            return Err(Error::invalid("knn needs k >= 1"));
        }
        Ok(Self {
            embeddings,
            train_lists,
            k,
        })
    }

    /// The `k` training concepts closest to `x` (including `x` itself when it
    /// is a training concept), with their similarities.
    pub fn neighbors(&self, x: ConceptId) -> Vec<(ConceptId, f64)> {
        let q = self.embeddings.vector(x);
        let mut scored: Vec<(ConceptId, f64)> = self
            .train_lists
            .keys()
            .map(|&c| (c, cosine_unchecked(q, self.embeddings.vector(c))))
            .collect();
        // the input itself always comes first when present
        scored.sort_by(|a, b| {
            (b.0 == x)
                .cmp(&(a.0 == x))
                .then(b.1.total_cmp(&a.1))
                .then(a.0.cmp(&b.0))
        });
        scored.truncate(self.k);
        scored
    }
}

impl Ranker for KnnRanker<'_> {
    fn name(&self) -> &str {
        "knn"
    }

    fn rank(&self, x: ConceptId, n: usize) -> Vec<ConceptId> {
        // count, summed similarity, best position in any pooled list
        let mut pool: BTreeMap<ConceptId, (usize, f64, usize)> = BTreeMap::new();
        for (c, sim) in self.neighbors(x) {
            for (pos, &y) in self.train_lists[&c].iter().enumerate() {
                if y != x {
                    let e = pool.entry(y).or_insert((0, 0.0, usize::MAX));
                    e.0 += 1;
                    e.1 += sim;
                    e.2 = e.2.min(pos);
                }
            }
        }
        // the position key keeps a single neighbor's list in its own order
        let mut ranked: Vec<(ConceptId, (usize, f64, usize))> = pool.into_iter().collect();
        ranked.sort_by(|a, b| {
            b.1 .0
                .cmp(&a.1 .0)
                .then(b.1 .1.total_cmp(&a.1 .1))
                .then(a.1 .2.cmp(&b.1 .2))
                .then(a.0.cmp(&b.0))
        });
        let mut out: Vec<ConceptId> = ranked.into_iter().take(n).map(|(y, _)| y).collect();
        if out.len() < n {
            // small pools are topped up by plain similarity
            let taken: BTreeSet<ConceptId> = out.iter().copied().collect();
            let fill = embed::nearest_concepts(self.embeddings.vector(x), self.embeddings, self.embeddings.len(), Some(x));
            out.extend(fill.into_iter().filter(|y| !taken.contains(y)).take(n - out.len()));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// training pairs

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTrainingSet {
    pub positives: Vec<(ConceptId, ConceptId)>,
    pub negatives: Vec<(ConceptId, ConceptId)>,
    pub ratio: usize,
}

impl PairTrainingSet {
    /// Positives from the target lists of `split`; `ratio` negatives per
    /// positive drawn uniformly from the concepts that are neither `x` nor
    /// one of its positives.
    pub fn build(ds: &Dataset, split: &[ConceptId], ratio: usize, seed: u64) -> Result<Self> {
        let lists: BTreeMap<ConceptId, Vec<ConceptId>> = split.iter().map(|&x| (x, ds.targets(x))).collect();
        Self::from_lists(&lists, ds.concepts.len(), ratio, seed)
    }

    pub fn from_lists(
        lists: &BTreeMap<ConceptId, Vec<ConceptId>>,
        universe: usize,
        ratio: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut positives = Vec::new();
        let mut negatives = Vec::new();
        for (&x, ys) in lists {
            let excluded: BTreeSet<ConceptId> = ys.iter().copied().chain([x]).collect();
            let pool: Vec<ConceptId> = (0..universe as u32).map(ConceptId).filter(|c| !excluded.contains(c)).collect();
            for &y in ys {
                positives.push((x, y));
                if pool.is_empty() {
                    continue;
                }
                for _ in 0..ratio {
                    negatives.push((x, pool[rng.gen_range(0..pool.len())]));
                }
            }
        }
        if positives.is_empty() {
            return Err(Error::invalid("no positive pairs"));
        }
        Ok(Self {
            positives,
            negatives,
            ratio,
        })
    }

    /// Positives (label true) and negatives (label false) interleaved in a
    /// seeded order.
    fn shuffled(&self, rng: &mut ChaCha8Rng) -> Vec<(ConceptId, ConceptId, bool)> {
        let mut all: Vec<(ConceptId, ConceptId, bool)> = self
            .positives
            .iter()
            .map(|&(x, y)| (x, y, true))
            .chain(self.negatives.iter().map(|&(x, y)| (x, y, false)))
            .collect();
        all.shuffle(rng);
        all
    }
}

// ---------------------------------------------------------------------------
// linear pair scorer

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairScorerConfig {
    pub epochs: usize,
    pub lr: f64,
    /// L2 penalty on the weights.
    pub lambda: f64,
    pub seed: u64,
}

impl Default for PairScorerConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 0.05,
            lambda: 1e-4,
            seed: 0,
        }
    }
}

/// Linear classifier over `emb(x) ⊕ emb(y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearPairScorer {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearPairScorer {
    pub fn score_vectors(&self, ex: &[f64], ey: &[f64]) -> f64 {
        let d = ex.len();
        dot(&self.weights[..d], ex) + dot(&self.weights[d..], ey) + self.bias
    }

    pub fn score(&self, emb: &ConceptEmbeddings, x: ConceptId, y: ConceptId) -> f64 {
        self.score_vectors(emb.vector(x), emb.vector(y))
    }
}

/// Hinge-loss training by stochastic gradient steps.
pub fn train_pair_scorer(
    pairs: &PairTrainingSet,
    emb: &ConceptEmbeddings,
    config: &PairScorerConfig,
) -> Result<LinearPairScorer> {
    if pairs.positives.is_empty() || pairs.negatives.is_empty() {
        return Err(Error::invalid("pair scorer needs both positive and negative pairs"));
    }
    let d = emb.dim();
    let mut model = LinearPairScorer {
        weights: vec![0.0; 2 * d],
        bias: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..config.epochs {
        for (x, y, positive) in pairs.shuffled(&mut rng) {
            let label = if positive { 1.0 } else { -1.0 };
            let (ex, ey) = (emb.vector(x), emb.vector(y));
            let margin = label * model.score_vectors(ex, ey);
            for w in &mut model.weights {
                *w *= 1.0 - config.lr * config.lambda;
            }
            if margin < 1.0 {
                for (w, f) in model.weights.iter_mut().zip(ex.iter().chain(ey)) {
                    *w += config.lr * label * f;
                }
                model.bias += config.lr * label;
            }
        }
    }
    Ok(model)
}

pub struct PairRanker<'a> {
    pub model: &'a LinearPairScorer,
    pub embeddings: &'a ConceptEmbeddings,
}

impl Ranker for PairRanker<'_> {
    fn name(&self) -> &str {
        "pair"
    }

    fn rank(&self, x: ConceptId, n: usize) -> Vec<ConceptId> {
        top_by(self.embeddings.len(), x, n, |y| self.model.score(self.embeddings, x, y))
    }
}

pub fn score_rank(
    model: &LinearPairScorer,
    x: ConceptId,
    set: &ConceptSet,
    embeddings: &ConceptEmbeddings,
    n: usize,
) -> PredictionRecord {
    rank_record(&PairRanker { model, embeddings }, set, x, n)
}

// ---------------------------------------------------------------------------
// item2vec

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Item2vecConfig {
    pub epochs: usize,
    pub lr: f64,
    pub negatives: usize,
    pub seed: u64,
}

impl Default for Item2vecConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.05,
            negatives: DEFAULT_NEGATIVES,
            seed: 0,
        }
    }
}

/// Learned context vectors against frozen composed target embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextEmbeddingTable {
    pub context: Vec<Vec<f64>>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Negative-sampling objective: raise `σ(target(y)·context(x))` for observed
/// pairs, in both directions, and lower it for `negatives` uniformly drawn
/// non-partners per pair. Context vectors start at zero, so an untrained
/// table ranks every candidate equally and ties fall to concept ids.
pub fn train_item2vec_context(
    lists: &BTreeMap<ConceptId, Vec<ConceptId>>,
    targets: &ConceptEmbeddings,
    config: &Item2vecConfig,
) -> Result<ContextEmbeddingTable> {
    let mut positives: BTreeSet<(ConceptId, ConceptId)> = BTreeSet::new();
    for (&x, ys) in lists {
        for &y in ys {
            positives.insert((x, y));
            positives.insert((y, x));
        }
    }
    if positives.is_empty() {
        return Err(Error::invalid("no positive pairs"));
    }
    let n = targets.len();
    let mut context = vec![vec![0.0; targets.dim()]; n];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<(ConceptId, ConceptId)> = positives.iter().copied().collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &(x, y) in &order {
            let mut samples = vec![(y, 1.0)];
            while samples.len() <= config.negatives && n > 2 {
                let c = ConceptId(rng.gen_range(0..n as u32));
                if c != x && !positives.contains(&(x, c)) {
                    samples.push((c, 0.0));
                }
                if positives.range((x, ConceptId(0))..=(x, ConceptId(u32::MAX))).count() + 1 >= n {
                    break;
                }
            }
            let cx = &mut context[x.index()];
            for (c, label) in samples {
                let t = targets.vector(c);
                let g = label - sigmoid(dot(t, cx));
                for (v, tv) in cx.iter_mut().zip(t) {
                    *v += config.lr * g * tv;
                }
            }
        }
    }
    Ok(ContextEmbeddingTable { context })
}

pub struct Item2vecRanker<'a> {
    pub table: &'a ContextEmbeddingTable,
    pub targets: &'a ConceptEmbeddings,
}

impl Ranker for Item2vecRanker<'_> {
    fn name(&self) -> &str {
        "item2vec"
    }

    fn rank(&self, x: ConceptId, n: usize) -> Vec<ConceptId> {
        let cx = &self.table.context[x.index()];
        top_by(self.targets.len(), x, n, |y| cosine_unchecked(self.targets.vector(y), cx))
    }
}

pub fn item2vec_rank(
    table: &ContextEmbeddingTable,
    targets: &ConceptEmbeddings,
    set: &ConceptSet,
    x: ConceptId,
    n: usize,
) -> PredictionRecord {
    rank_record(&Item2vecRanker { table, targets }, set, x, n)
}

// ---------------------------------------------------------------------------
// complement projection

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompanionConfig {
    pub epochs: usize,
    pub lr: f64,
    pub margin: f64,
    pub seed: u64,
}

impl Default for CompanionConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.05,
            margin: 0.5,
            seed: 0,
        }
    }
}

/// Maps a source embedding into the space of its complements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompanionProjection {
    pub dim: usize,
    /// Row-major `dim × dim`.
    pub projection: Vec<f64>,
    pub margin: f64,
}

impl CompanionProjection {
    pub fn identity(dim: usize, margin: f64) -> Self {
        let mut projection = vec![0.0; dim * dim];
        for i in 0..dim {
            projection[i * dim + i] = 1.0;
        }
        Self { dim, projection, margin }
    }

    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        self.projection.chunks(self.dim).map(|row| dot(row, v)).collect()
    }

    pub fn score(&self, emb: &ConceptEmbeddings, x: ConceptId, y: ConceptId) -> f64 {
        cosine_unchecked(&self.project(emb.vector(x)), emb.vector(y))
    }

    /// Hinge loss `max(0, margin − cos(u, y⁺) + cos(u, y⁻))` with `u = P·x`,
    /// and its gradient with respect to `u`.
    pub fn pair_loss(&self, u: &[f64], pos: &[f64], neg: &[f64]) -> (f64, Vec<f64>) {
        let loss = self.margin - cosine_unchecked(u, pos) + cosine_unchecked(u, neg);
        if loss <= 0.0 {
            return (0.0, vec![0.0; u.len()]);
        }
        let gp = cosine_grad(u, pos);
        let gn = cosine_grad(u, neg);
        (loss, gn.iter().zip(&gp).map(|(n, p)| n - p).collect())
    }
}

/// d cos(u, v) / du; zero when either vector vanishes.
fn cosine_grad(u: &[f64], v: &[f64]) -> Vec<f64> {
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return vec![0.0; u.len()];
    }
    let c = dot(u, v) / (nu * nv);
    u.iter().zip(v).map(|(a, b)| b / (nu * nv) - c * a / (nu * nu)).collect()
}

/// Learns the projection against frozen embeddings with `negatives` sampled
/// non-partners per positive.
pub fn train_companion(
    pairs: &PairTrainingSet,
    emb: &ConceptEmbeddings,
    config: &CompanionConfig,
) -> Result<CompanionProjection> {
    if pairs.positives.is_empty() {
        return Err(Error::invalid("no positive pairs"));
    }
    if !(config.margin > 0.0) {
        return Err(Error::invalid("margin must be positive"));
    }
    let dim = emb.dim();
    let mut model = CompanionProjection::identity(dim, config.margin);
    let mut negs: BTreeMap<ConceptId, Vec<ConceptId>> = BTreeMap::new();
    for &(x, y) in &pairs.negatives {
        negs.entry(x).or_default().push(y);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order = pairs.positives.clone();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &(x, y) in &order {
            let Some(pool) = negs.get(&x) else { continue };
            let ex = emb.vector(x);
            for _ in 0..pairs.ratio.max(1) {
                let neg = pool[rng.gen_range(0..pool.len())];
                let u = model.project(ex);
                let (loss, gu) = model.pair_loss(&u, emb.vector(y), emb.vector(neg));
                if loss == 0.0 {
                    continue;
                }
                for (row, g) in model.projection.chunks_mut(dim).zip(&gu) {
                    for (p, xv) in row.iter_mut().zip(ex) {
                        *p -= config.lr * g * xv;
                    }
                }
            }
        }
    }
    if model.projection.iter().any(|p| !p.is_finite()) {
        return Err(Error::Divergence {
            epoch: config.epochs,
            message: "non-finite projection".into(),
        });
    }
    Ok(model)
}

pub struct CompanionRanker<'a> {
    pub model: &'a CompanionProjection,
    pub embeddings: &'a ConceptEmbeddings,
}

impl Ranker for CompanionRanker<'_> {
    fn name(&self) -> &str {
        "companion"
    }

    fn rank(&self, x: ConceptId, n: usize) -> Vec<ConceptId> {
        let u = self.model.project(self.embeddings.vector(x));
        top_by(self.embeddings.len(), x, n, |y| cosine_unchecked(&u, self.embeddings.vector(y)))
    }
}

pub fn companion_rank(
    model: &CompanionProjection,
    embeddings: &ConceptEmbeddings,
    set: &ConceptSet,
    x: ConceptId,
    n: usize,
) -> PredictionRecord {
    rank_record(&CompanionRanker { model, embeddings }, set, x, n)
}

// ---------------------------------------------------------------------------
// external generations

/// Everything needed to map out-of-set surfaces to their nearest concept.
pub struct SetMapper<'a> {
    pub table: &'a WordVectorTable,
    pub embeddings: &'a ConceptEmbeddings,
}

impl SetMapper<'_> {
    /// Replaces invalid slots by the nearest in-set concept. Slots none of
    /// whose tokens have a vector stay invalid.
    pub fn apply(&self, rec: &mut PredictionRecord, set: &ConceptSet) {
        let input = set.lookup(&rec.input).map(|c| c.id);
        for slot in &mut rec.slots {
            if slot.concept.is_some() || slot.surface.is_empty() {
                continue;
            }
            let e = compose(&slot.surface, self.table);
            if e.coverage == 0.0 {
                continue;
            }
            if let Some(&c) = embed::nearest_concepts(&e.vector, self.embeddings, 1, input).first() {
                slot.concept = Some(c);
                slot.surface = set.surface(c).to_string();
            }
        }
    }
}

/// Reads external generations. Lines starting with `{` are interchange
/// records; anything else is a raw serialized list (`[SOS] x are purchased
/// with 1) ...`) and is run through the list decoder. Blank lines are
/// skipped.
pub fn external_llm_ingest(
    path: impl AsRef<Path>,
    set: &ConceptSet,
    grammar: &Grammar,
    case: CaseMode,
    mapper: Option<&SetMapper<'_>>,
) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let opts = DecodeOptions {
        case,
        source: "external".into(),
        ..DecodeOptions::plain()
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut rec = if line.starts_with('{') {
            PredictionRecord::from_json_line(line, set, case).map_err(|e| Error::parse(path, i + 1, e.to_string()))?
        } else {
            grammar.decode_list(line, set, &opts)
        };
        if let Some(m) = mapper {
            m.apply(&mut rec, set);
        }
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(n: usize) -> ConceptSet {
        ConceptSet::from_surfaces((0..n).map(|i| format!("c{i}"))).unwrap()
    }

    fn emb(vs: &[[f64; 2]]) -> ConceptEmbeddings {
        ConceptEmbeddings::from_vectors(vs.iter().map(|v| v.to_vec()).collect()).unwrap()
    }

    #[test]
    fn glove_ranks_by_cosine_then_id() {
        let e = emb(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, 0.1], [0.0, 0.0]]);
        let r = GloveRanker { embeddings: &e };
        assert_eq!(r.rank(ConceptId(0), 4), vec![ConceptId(3), ConceptId(2), ConceptId(1), ConceptId(4)]);
        // zero query: every cosine is 0, so ids decide
        assert_eq!(r.rank(ConceptId(4), 3), vec![ConceptId(0), ConceptId(1), ConceptId(2)]);
    }

    #[test]
    fn knn_single_neighbor_returns_own_list() {
        let e = emb(&[[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.5, 0.5], [0.2, 0.8], [0.7, 0.3], [1.0, 1.0]]);
        let own: Vec<ConceptId> = [5, 2, 6, 3, 4].map(ConceptId).to_vec();
        let lists = BTreeMap::from([(ConceptId(0), own.clone()), (ConceptId(1), [6, 5, 4, 3, 2].map(ConceptId).to_vec())]);
        let knn = KnnRanker::from_lists(lists, &e, 1).unwrap();
        assert_eq!(knn.rank(ConceptId(0), 5), own);
    }

    #[test]
    fn knn_count_dominates() {
        let e = emb(&[[1.0, 0.0], [0.9, 0.1], [0.8, 0.2], [0.0, 1.0], [0.1, 0.9], [0.2, 0.8]]);
        let lists = BTreeMap::from([
            (ConceptId(1), vec![ConceptId(3), ConceptId(4)]),
            (ConceptId(2), vec![ConceptId(5), ConceptId(4)]),
        ]);
        let knn = KnnRanker::from_lists(lists, &e, 2).unwrap();
        assert_eq!(knn.rank(ConceptId(0), 3), vec![ConceptId(4), ConceptId(3), ConceptId(5)]);
        assert!(KnnRanker::from_lists(BTreeMap::new(), &e, 1).is_err());
    }

    #[test]
    fn pair_scorer_rejects_one_class() {
        let e = emb(&[[1.0, 0.0], [0.0, 1.0]]);
        let pairs = PairTrainingSet {
            positives: vec![(ConceptId(0), ConceptId(1))],
            negatives: vec![],
            ratio: 5,
        };
        assert!(train_pair_scorer(&pairs, &e, &PairScorerConfig::default()).is_err());
    }

    #[test]
    fn companion_identity_and_degenerate_loss() {
        let e = emb(&[[1.0, 2.0], [3.0, -1.0]]);
        let p = CompanionProjection::identity(2, 0.5);
        assert!((p.score(&e, ConceptId(0), ConceptId(0)) - 1.0).abs() < 1e-12);
        let zero = CompanionProjection { margin: 0.0, ..p };
        let u = [1.0, 2.0];
        let (loss, g) = zero.pair_loss(&u, &[3.0, 1.0], &[3.0, 1.0]);
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cosine_gradient_matches_differences() {
        let u = [0.3, -1.2, 0.7];
        let v = [1.0, 0.4, -0.2];
        let g = cosine_grad(&u, &v);
        for i in 0..3 {
            let mut a = u;
            let mut b = u;
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let num = (cosine_unchecked(&a, &v) - cosine_unchecked(&b, &v)) / 2e-6;
            assert!((num - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn records_have_n_valid_slots() {
        let s = set(6);
        let e = emb(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, 0.1], [0.3, 0.3], [-1.0, 0.2]]);
        let rec = glove_rank(ConceptId(1), &s, &e, 5);
        assert_eq!(rec.slots.len(), 5);
        rec.validate(&s).unwrap();
        assert!(rec.concepts().iter().all(|c| c.is_some() && *c != Some(ConceptId(1))));
    }
}
