//! Compact autoregressive list generator.
//!
//! Serialized lists are tokenized on whitespace and modeled by a
//! fixed-window feedforward network conditioned on the input concept. Lists
//! are produced by beam search from a grammar prompt and parsed back with the
//! list decoder.

pub mod decode;
pub mod network;
pub mod train;
pub mod vocab;

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::concept::{CaseMode, ConceptId, ConceptSet};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{self, GroundTruth, ListGenerator, ReportSpec};
use crate::prediction::PredictionRecord;
use crate::serialize::{DecodeOptions, Grammar, SerializedExample};

pub use decode::{DecodeConfig, Decoder, Hypothesis};
pub use network::{Encoded, Params, Shape};
pub use train::{EpochStat, PhaseOutcome, TrainConfig};
pub use vocab::Vocab;

pub const CHECKPOINT_FORMAT: &str = "ccgen-listlm";
pub const CHECKPOINT_VERSION: u32 = 1;

/// What the model was trained to emit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Whole numbered lists.
    List,
    /// Numbered lists with an explanation after each concept.
    ExplainedList,
    /// One concept per sequence, no markers.
    SingleTarget,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub variant: Variant,
    pub seed: u64,
    /// Training phases in order, e.g. `["unordered", "ordered"]`.
    pub phases: Vec<String>,
    pub history: Vec<EpochStat>,
    #[serde(default)]
    pub config_hash: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ListModel {
    pub format: String,
    pub version: u32,
    pub meta: ModelMeta,
    pub grammar: Grammar,
    pub vocab: Vocab,
    pub params: Params,
}

/// Tokens after `[SOS]` up to the relation phrase.
pub fn cond_span(tokens: &[&str], relation: &str) -> Range<usize> {
    let rel: Vec<&str> = relation.split_whitespace().collect();
    let start = usize::from(tokens.first() == Some(&crate::serialize::SOS));
    let end = if rel.is_empty() {
        None
    } else {
        tokens
            .windows(rel.len())
            .enumerate()
            .skip(start)
            .find(|(_, w)| *w == rel.as_slice())
            .map(|(i, _)| i)
    };
    match end {
        Some(end) => start..end,
        None => start..start,
    }
}

impl ListModel {
    pub fn new(vocab: Vocab, params: Params, grammar: Grammar, meta: ModelMeta) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            meta,
            grammar,
            vocab,
            params,
        }
    }

    pub fn shape_for(vocab: &Vocab, config: &TrainConfig) -> Shape {
        Shape {
            vocab: vocab.len(),
            dim: config.dim,
            hidden: config.hidden,
            window: config.window,
        }
    }

    pub fn encode(&self, text: &str) -> Encoded {
        encode_with(&self.vocab, &self.grammar, text)
    }

    /// Log-probability of a whole serialized line. Out-of-vocabulary tokens
    /// are an error unless `allow_unk`.
    pub fn sequence_logprob(&self, text: &str, allow_unk: bool) -> Result<f64> {
        if !text.split_whitespace().next().is_some_and(|t| t == crate::serialize::SOS) {
            return Err(Error::invalid("sequence must begin with [SOS]"));
        }
        let enc = if allow_unk {
            self.encode(text)
        } else {
            let tokens = self.vocab.encode_strict(text)?;
            let words: Vec<&str> = text.split_whitespace().collect();
            Encoded {
                tokens,
                cond: cond_span(&words, &self.grammar.relation),
            }
        };
        Ok(network::sequence_logprob(&self.params, &enc))
    }

    pub fn decoder(&self, config: DecodeConfig) -> Decoder<'_> {
        Decoder {
            params: &self.params,
            vocab: &self.vocab,
            config,
        }
    }

    /// Prompt, beam search, then parse the full text back into a record.
    pub fn generate_list<S: AsRef<str>>(
        &self,
        set: &ConceptSet,
        x: &str,
        given: &[S],
        decode: &DecodeConfig,
        case: CaseMode,
        source: &str,
    ) -> PredictionRecord {
        let prompt = match self.meta.variant {
            Variant::SingleTarget => self.grammar.build_prefix_prompt::<&str>(x, &[]),
            _ => self.grammar.build_prefix_prompt(x, given),
        };
        let enc = self.encode(&prompt.text);
        let hyp = self.decoder(decode.clone()).beam(&enc.tokens, enc.cond.clone());
        let text = format!("{} {}", prompt.text, self.vocab.decode(&hyp.tokens));
        let opts = DecodeOptions {
            expect_explanations: self.meta.variant == Variant::ExplainedList,
            case,
            max_slots: None,
            source: source.to_string(),
        };
        let mut rec = match self.meta.variant {
            Variant::SingleTarget => self.grammar.decode_single(&text, set, &opts),
            _ => self.grammar.decode_list(&text, set, &opts),
        };
        if self.meta.variant != Variant::SingleTarget {
            rec.prefix_len = given.len().min(rec.slots.len());
        }
        rec.truncated |= hyp.truncated;
        rec
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: ListModel =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        if model.format != CHECKPOINT_FORMAT || model.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "{}: unsupported checkpoint {} v{}",
                path.display(),
                model.format,
                model.version
            )));
        }
        let s = model.params.shape;
        if s.vocab != model.vocab.len()
            || model.params.emb.len() != s.vocab * s.dim
            || model.params.w1.len() != s.hidden * s.input_width()
            || model.params.w2.len() != s.vocab * s.hidden
        {
            return Err(Error::Data(format!("{}: inconsistent parameter shapes", path.display())));
        }
        Ok(model)
    }
}

fn encode_with(vocab: &Vocab, grammar: &Grammar, text: &str) -> Encoded {
    let words: Vec<&str> = text.split_whitespace().collect();
    Encoded {
        tokens: words.iter().map(|w| vocab.id_or_unk(w)).collect(),
        cond: cond_span(&words, &grammar.relation),
    }
}

/// Beam width and length limit from a training config. Explained lists get
/// four times the token budget.
pub fn decode_config_for(variant: Variant, config: &TrainConfig) -> DecodeConfig {
    DecodeConfig {
        beam: config.beam,
        max_len: match variant {
            Variant::ExplainedList => config.max_decode_len * 4,
            _ => config.max_decode_len,
        },
        no_repeat_concept: false,
    }
}

/// [`ListGenerator`] adapter over a model and concept set.
pub struct LmGenerator<'a> {
    pub model: &'a ListModel,
    pub set: &'a ConceptSet,
    pub decode: DecodeConfig,
    pub case: CaseMode,
    pub name: String,
}

impl ListGenerator for LmGenerator<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, x: ConceptId, prefix: &[ConceptId]) -> PredictionRecord {
        let given: Vec<&str> = prefix.iter().map(|&c| self.set.surface(c)).collect();
        self.model.generate_list(
            self.set,
            self.set.surface(x),
            &given,
            &self.decode,
            self.case,
            &self.name,
        )
    }
}

/// Training corpora derived from a dataset split.
pub struct Corpora;

impl Corpora {
    fn targets(ds: &Dataset, x: ConceptId) -> Vec<&str> {
        ds.targets(x).into_iter().map(|y| ds.surface(y)).collect()
    }

    pub fn ordered(ds: &Dataset, grammar: &Grammar, split: &[ConceptId]) -> Result<Vec<SerializedExample>> {
        split
            .iter()
            .map(|&x| grammar.encode_ordered(ds.surface(x), &Self::targets(ds, x)))
            .collect()
    }

    /// `n` distinct permutations per list, seeded per concept.
    pub fn permuted(
        ds: &Dataset,
        grammar: &Grammar,
        split: &[ConceptId],
        n: usize,
        seed: u64,
    ) -> Result<Vec<SerializedExample>> {
        let mut out = Vec::with_capacity(split.len() * n);
        for &x in split {
            let batch = grammar.sample_permutations(
                ds.surface(x),
                &Self::targets(ds, x),
                n,
                seed ^ (u64::from(x.0) << 20),
            )?;
            out.extend(batch.permutations);
        }
        Ok(out)
    }

    /// `explanations[(x, y)]` must cover every target pair.
    pub fn explained(
        ds: &Dataset,
        grammar: &Grammar,
        split: &[ConceptId],
        explanations: &BTreeMap<(ConceptId, ConceptId), String>,
    ) -> Result<Vec<SerializedExample>> {
        split
            .iter()
            .map(|&x| {
                let ys = ds.targets(x);
                let exps = ys
                    .iter()
                    .map(|&y| {
                        explanations.get(&(x, y)).map(String::as_str).ok_or_else(|| {
                            Error::Data(format!(
                                "no explanation for ({}, {})",
                                ds.surface(x),
                                ds.surface(y)
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                grammar.encode_with_explanations(ds.surface(x), &Self::targets(ds, x), &exps)
            })
            .collect()
    }

    /// One line per (x, y_i): the list split into `target_size` examples.
    pub fn single_target(ds: &Dataset, grammar: &Grammar, split: &[ConceptId]) -> Result<Vec<SerializedExample>> {
        let mut out = Vec::new();
        for &x in split {
            for y in Self::targets(ds, x) {
                out.push(grammar.encode_single_target(ds.surface(x), y)?);
            }
        }
        Ok(out)
    }
}

/// Everything a training run needs besides the corpora.
pub struct Trainer<'a> {
    pub dataset: &'a Dataset,
    pub grammar: Grammar,
    pub config: TrainConfig,
    /// Select checkpoints by dev nDCG; without it the last epoch is kept.
    pub select_on_dev: bool,
}

/// Models produced by two-step training.
pub struct TwoStepModels {
    pub unordered: ListModel,
    pub two_step: ListModel,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, config: TrainConfig) -> Self {
        Self {
            dataset,
            grammar: Grammar::default(),
            config,
            select_on_dev: true,
        }
    }

    fn decode_config(&self, variant: Variant) -> DecodeConfig {
        decode_config_for(variant, &self.config)
    }

    /// Dev-split nDCG of the model the given parameters define.
    fn dev_score(&self, vocab: &Vocab, params: &Params, variant: Variant) -> Result<f64> {
        let ds = self.dataset;
        let truth = GroundTruth::from_dataset(ds, &ds.splits.dev);
        if truth.is_empty() {
            return Ok(0.0);
        }
        let model = ListModel::new(
            vocab.clone(),
            params.clone(),
            self.grammar.clone(),
            ModelMeta {
                variant,
                seed: self.config.seed,
                phases: Vec::new(),
                history: Vec::new(),
                config_hash: String::new(),
            },
        );
        let gen = LmGenerator {
            model: &model,
            set: &ds.concepts,
            decode: self.decode_config(variant),
            case: CaseMode::Sensitive,
            name: "dev".into(),
        };
        let m = self.config.select_ndcg_m.min(ds.target_size);
        let spec = metrics::SequentialSpec::plain(ds.target_size, metrics::DEFAULT_K);
        let (_, records) = metrics::sequential_evaluate(&gen, &truth, &ds.concepts, &spec)?;
        let report_spec = ReportSpec {
            positions: vec![1],
            k: metrics::DEFAULT_K,
            overall: false,
            ndcg_m: Some(m),
        };
        let report = metrics::evaluate("dev", "plain", &records, &truth, &ds.concepts, &report_spec)?;
        Ok(report.ndcg.unwrap_or(0.0))
    }

    fn run_phase(
        &self,
        vocab: &Vocab,
        init: Params,
        corpus: &[SerializedExample],
        epochs: usize,
        phase_seed: u64,
        variant: Variant,
    ) -> Result<PhaseOutcome> {
        let encoded: Vec<Encoded> = corpus
            .iter()
            .map(|ex| encode_with(vocab, &self.grammar, &ex.text))
            .collect();
        let selector = |p: &Params| self.dev_score(vocab, p, variant);
        let selector: Option<&(dyn Fn(&Params) -> Result<f64> + Sync)> = if self.select_on_dev {
            Some(&selector)
        } else {
            None
        };
        train::train_phase(init, &encoded, &self.config, epochs, phase_seed, selector)
    }

    fn meta(&self, variant: Variant, phases: &[&str], history: Vec<EpochStat>) -> ModelMeta {
        ModelMeta {
            variant,
            seed: self.config.seed,
            phases: phases.iter().map(|s| s.to_string()).collect(),
            history,
            config_hash: String::new(),
        }
    }

    fn vocab_for(&self, corpora: &[&[SerializedExample]]) -> Result<Vocab> {
        Vocab::build(corpora.iter().flat_map(|c| c.iter().map(|e| e.text.as_str())))
    }

    /// Ordered training only.
    pub fn train_ordered(&self) -> Result<ListModel> {
        let ds = self.dataset;
        let ordered = Corpora::ordered(ds, &self.grammar, &ds.splits.train)?;
        let permuted = Corpora::permuted(ds, &self.grammar, &ds.splits.train, self.config.permutations, self.config.seed)?;
        // same vocabulary as two-step training so the variants are comparable
        let vocab = self.vocab_for(&[&permuted, &ordered])?;
        let init = Params::init(ListModel::shape_for(&vocab, &self.config), self.config.seed);
        let out = self.run_phase(&vocab, init, &ordered, self.config.epochs, self.config.seed ^ 0x0d, Variant::List)?;
        Ok(ListModel::new(
            vocab,
            out.params,
            self.grammar.clone(),
            self.meta(Variant::List, &["ordered"], out.history),
        ))
    }

    /// Unordered training on permutations, then ordered training (optionally
    /// on explanation-augmented lines).
    pub fn train_two_step(
        &self,
        explanations: Option<&BTreeMap<(ConceptId, ConceptId), String>>,
    ) -> Result<TwoStepModels> {
        let ds = self.dataset;
        let permuted = Corpora::permuted(ds, &self.grammar, &ds.splits.train, self.config.permutations, self.config.seed)?;
        let (second, variant) = match explanations {
            Some(e) => (Corpora::explained(ds, &self.grammar, &ds.splits.train, e)?, Variant::ExplainedList),
            None => (Corpora::ordered(ds, &self.grammar, &ds.splits.train)?, Variant::List),
        };
        let vocab = self.vocab_for(&[&permuted, &second])?;
        let init = Params::init(ListModel::shape_for(&vocab, &self.config), self.config.seed);
        let first = self.run_phase(
            &vocab,
            init,
            &permuted,
            self.config.unordered_epochs,
            self.config.seed ^ 0x01,
            Variant::List,
        )?;
        let unordered = ListModel::new(
            vocab.clone(),
            first.params.clone(),
            self.grammar.clone(),
            self.meta(Variant::List, &["unordered"], first.history.clone()),
        );
        let out = self.run_phase(&vocab, first.params, &second, self.config.epochs, self.config.seed ^ 0x02, variant)?;
        let mut history = first.history;
        history.extend(out.history);
        let two_step = ListModel::new(
            vocab,
            out.params,
            self.grammar.clone(),
            self.meta(variant, &["unordered", "ordered"], history),
        );
        Ok(TwoStepModels { unordered, two_step })
    }

    /// Ordered training on explanation-augmented lines without the unordered phase.
    pub fn train_explained(&self, explanations: &BTreeMap<(ConceptId, ConceptId), String>) -> Result<ListModel> {
        let ds = self.dataset;
        let lines = Corpora::explained(ds, &self.grammar, &ds.splits.train, explanations)?;
        let vocab = self.vocab_for(&[&lines])?;
        let init = Params::init(ListModel::shape_for(&vocab, &self.config), self.config.seed);
        let out = self.run_phase(&vocab, init, &lines, self.config.epochs, self.config.seed ^ 0x0e, Variant::ExplainedList)?;
        Ok(ListModel::new(
            vocab,
            out.params,
            self.grammar.clone(),
            self.meta(Variant::ExplainedList, &["ordered"], out.history),
        ))
    }

    /// The single-target ablation: each list becomes `target_size` lines.
    pub fn train_single_target(&self) -> Result<ListModel> {
        let ds = self.dataset;
        let lines = Corpora::single_target(ds, &self.grammar, &ds.splits.train)?;
        let vocab = self.vocab_for(&[&lines])?;
        let init = Params::init(ListModel::shape_for(&vocab, &self.config), self.config.seed);
        let out = self.run_phase(&vocab, init, &lines, self.config.epochs, self.config.seed ^ 0x05, Variant::SingleTarget)?;
        Ok(ListModel::new(
            vocab,
            out.params,
            self.grammar.clone(),
            self.meta(Variant::SingleTarget, &["single_target"], out.history),
        ))
    }
}
