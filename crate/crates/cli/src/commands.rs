use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ccgen::baselines::{
    self, CheckpointHeader, CompanionRanker, GloveRanker, Item2vecRanker, KnnRanker, PairRanker, PairTrainingSet,
    Ranker, SetMapper,
};
use ccgen::concept::{ConceptId, ConceptSet};
use ccgen::dataset::{read_jsonl, BehaviorRecord, CatalogEntry, Dataset};
use ccgen::embed::{ConceptEmbeddings, WordVectorTable};
use ccgen::explain::{self, CountingTransport, ExplanationCache, HttpTransport, MockTransport, Teacher, Transport};
use ccgen::listlm::{self, ListModel, LmGenerator, Trainer, Variant};
use ccgen::metrics::{self, GroundTruth, MetricReport, PrefixMode, ReportSpec, SequentialSpec};
use ccgen::prediction::{read_predictions, write_predictions};
use ccgen::serialize::Grammar;
use ccgen::synth::SyntheticWorld;
use ccgen::PredictionRecord;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{input_path, RunConfig};
use crate::diag::{info, CliError};
use crate::{
    BaselineKind, BuildDatasetArgs, DistillArgs, EvaluateArgs, GenerateArgs, IngestArgs, PrefixArgs, ReportArgs,
    SequentialEvalArgs, SynthGenArgs, TrainBaselineArgs, TrainLmArgs,
};

type Result<T> = std::result::Result<T, CliError>;

/// Provenance written next to line-oriented artifacts as `<file>.meta.json`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
}

impl ArtifactMeta {
    fn new(command: &str, cfg: &RunConfig) -> Self {
        Self {
            command: command.into(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            ..Self::default()
        }
    }
}

fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::data(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn write_meta(path: &Path, meta: &ArtifactMeta) -> Result<()> {
    write_json(&meta_path(path), meta)
}

fn read_meta(path: &Path) -> Option<ArtifactMeta> {
    let text = std::fs::read_to_string(meta_path(path)).ok()?;
    serde_json::from_str(&text).ok()
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => {
            std::fs::create_dir_all(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))
        }
        _ => Ok(()),
    }
}

fn load_dataset(cfg: &RunConfig, flag: Option<PathBuf>) -> Result<Dataset> {
    let path = input_path(flag, &cfg.paths.dataset, "paths.dataset")?;
    Ok(Dataset::load(path)?)
}

fn split_of(ds: &Dataset, name: &str) -> Result<Vec<ConceptId>> {
    match name {
        "train" => Ok(ds.splits.train.clone()),
        "dev" => Ok(ds.splits.dev.clone()),
        "test" => Ok(ds.splits.test.clone()),
        other => Err(CliError::config("split", format!("unknown split {other:?}"))),
    }
}

fn load_vectors(cfg: &RunConfig, flag: Option<PathBuf>) -> Result<WordVectorTable> {
    let path = input_path(flag, &cfg.paths.vectors, "paths.vectors")?;
    Ok(WordVectorTable::load(path, cfg.embed.lowercase)?)
}

fn sequential_spec(cfg: &RunConfig, args: &PrefixArgs, list_size: usize) -> Result<SequentialSpec> {
    let mode: PrefixMode = args
        .prefix_mode
        .parse()
        .map_err(|e: ccgen::Error| CliError::config("prefix_mode", e.to_string()))?;
    if mode == PrefixMode::Plain && (args.n != 0 || args.probe_6) {
        return Err(CliError::config("n", "plain mode takes no prefix"));
    }
    if args.probe_6 && args.n != list_size {
        return Err(CliError::config("probe-6", format!("the probe needs --n {list_size}")));
    }
    let spec = SequentialSpec {
        mode,
        n: args.n,
        seed: args.prefix_seed.unwrap_or(cfg.seed),
        probe_next: args.probe_6,
        list_size,
        k: cfg.eval.k,
    };
    spec.scored_positions().map_err(|e| CliError::config("n", e.to_string()))?;
    Ok(spec)
}

fn report_name(path: &Path, records: &[PredictionRecord], meta: Option<&ArtifactMeta>) -> String {
    meta.and_then(|m| m.source.clone())
        .or_else(|| records.first().map(|r| r.source.clone()).filter(|s| !s.is_empty()))
        .unwrap_or_else(|| path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned()))
}

#[derive(Serialize)]
struct ReportFile<'a> {
    command: &'a str,
    config_hash: String,
    seed: u64,
    reports: &'a [MetricReport],
}

fn emit_reports(command: &str, cfg: &RunConfig, reports: &[MetricReport], out: Option<&Path>) -> Result<()> {
    print!("{}", metrics::render_table(reports));
    if let Some(out) = out {
        ensure_parent(out)?;
        write_json(
            out,
            &ReportFile {
                command,
                config_hash: cfg.hash(),
                seed: cfg.seed,
                reports,
            },
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------

pub fn synth_gen(mut cfg: RunConfig, a: SynthGenArgs) -> Result<()> {
    if let Some(n) = a.n_concepts {
        cfg.synth.n_concepts = n;
    }
    if let Some(b) = a.baskets {
        cfg.synth.baskets = b;
    }
    if let Some(r) = a.noise {
        cfg.synth.noise_rate = r;
    }
    cfg.validate()?;
    let world = SyntheticWorld::generate(&cfg.synth)?;
    world.write(&a.out)?;
    write_json(&a.out.join("run.meta.json"), &ArtifactMeta::new("synth-gen", &cfg))?;
    info(
        "synth-gen",
        json!({"out": a.out, "concepts": world.concepts.len(), "baskets": world.behavior.len()}),
    );
    Ok(())
}

pub fn build_dataset(mut cfg: RunConfig, a: BuildDatasetArgs) -> Result<()> {
    if let Some(v) = a.min_freq {
        cfg.dataset.min_freq = v;
    }
    if let Some(v) = a.k_collect {
        cfg.dataset.k_collect = v;
    }
    if let Some(v) = a.max_tokens {
        cfg.dataset.max_tokens = v;
    }
    cfg.validate()?;
    let concepts = input_path(a.concepts, &cfg.paths.concepts, "paths.concepts")?;
    let catalog = input_path(a.catalog, &cfg.paths.catalog, "paths.catalog")?;
    let behavior = input_path(a.behavior, &cfg.paths.behavior, "paths.behavior")?;
    let set = ConceptSet::load(&concepts)?;
    let catalog: Vec<CatalogEntry> = read_jsonl(&catalog)?;
    let behavior: Vec<BehaviorRecord> = read_jsonl(&behavior)?;
    let mut ds = Dataset::build(&catalog, &behavior, &set, cfg.dataset.clone())?;
    ds.config_hash = cfg.hash();
    ensure_parent(&a.out)?;
    ds.save(&a.out)?;
    info(
        "build-dataset",
        json!({
            "out": a.out,
            "concepts": ds.concepts.len(),
            "lists": ds.lists.len(),
            "train": ds.splits.train.len(),
            "dev": ds.splits.dev.len(),
            "test": ds.splits.test.len(),
        }),
    );
    Ok(())
}

pub fn train_baseline(mut cfg: RunConfig, a: TrainBaselineArgs) -> Result<()> {
    if let Some(k) = a.k_neighbors {
        cfg.baselines.knn_k = k;
    }
    if let Some(e) = a.epochs {
        match a.kind {
            BaselineKind::Pair => cfg.baselines.pair.epochs = e,
            BaselineKind::Item2vec => cfg.baselines.item2vec.epochs = e,
            BaselineKind::Companion => cfg.baselines.companion.epochs = e,
            _ => return Err(CliError::config("epochs", format!("{} is not trained", a.kind.name()))),
        }
    }
    if let Some(s) = a.split {
        cfg.eval.split = s;
    }
    cfg.validate()?;
    let ds = load_dataset(&cfg, a.dataset)?;
    let table = load_vectors(&cfg, a.vectors)?;
    let emb = ConceptEmbeddings::compose_all(&ds.concepts, &table);
    let b = &cfg.baselines;
    let name = a.kind.name();
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::data(format!("{}: {e}", a.out.display())))?;
    let ckpt = a.out.join(format!("{name}.ckpt.json"));
    let header = |epochs: usize| {
        let mut h = CheckpointHeader::new(name, emb.dim(), cfg.seed, epochs);
        h.config_hash = cfg.hash();
        h
    };
    let train_lists: BTreeMap<ConceptId, Vec<ConceptId>> =
        ds.splits.train.iter().map(|&x| (x, ds.targets(x))).collect();
    let pairs = || PairTrainingSet::build(&ds, &ds.splits.train, b.negatives, cfg.seed);

    let pair_model;
    let i2v_model;
    let comp_model;
    let ranker: Box<dyn Ranker + '_> = match a.kind {
        BaselineKind::Glove => {
            baselines::save_checkpoint(&ckpt, &header(0), &json!({}))?;
            Box::new(GloveRanker { embeddings: &emb })
        }
        BaselineKind::Knn => {
            let knn = KnnRanker::from_lists(train_lists.clone(), &emb, b.knn_k)?;
            baselines::save_checkpoint(&ckpt, &header(0), &json!({"k": b.knn_k, "train_lists": train_lists}))?;
            Box::new(knn)
        }
        BaselineKind::Pair => {
            pair_model = baselines::train_pair_scorer(&pairs()?, &emb, &b.pair)?;
            baselines::save_checkpoint(&ckpt, &header(b.pair.epochs), &pair_model)?;
            Box::new(PairRanker {
                model: &pair_model,
                embeddings: &emb,
            })
        }
        BaselineKind::Item2vec => {
            i2v_model = baselines::train_item2vec_context(&train_lists, &emb, &b.item2vec)?;
            baselines::save_checkpoint(&ckpt, &header(b.item2vec.epochs), &i2v_model)?;
            Box::new(Item2vecRanker {
                table: &i2v_model,
                targets: &emb,
            })
        }
        BaselineKind::Companion => {
            comp_model = baselines::train_companion(&pairs()?, &emb, &b.companion)?;
            baselines::save_checkpoint(&ckpt, &header(b.companion.epochs), &comp_model)?;
            Box::new(CompanionRanker {
                model: &comp_model,
                embeddings: &emb,
            })
        }
    };
    let records: Vec<PredictionRecord> = split_of(&ds, &cfg.eval.split)?
        .into_iter()
        .map(|x| baselines::rank_record(ranker.as_ref(), &ds.concepts, x, b.list_size))
        .collect();
    let preds = a.out.join(format!("{name}.predictions.jsonl"));
    write_predictions(&preds, &records)?;
    let mut meta = ArtifactMeta::new("train-baseline", &cfg);
    meta.source = Some(name.into());
    write_meta(&preds, &meta)?;
    info(
        "train-baseline",
        json!({"kind": name, "checkpoint": ckpt, "predictions": preds, "records": records.len()}),
    );
    Ok(())
}

pub fn train_lm(mut cfg: RunConfig, a: TrainLmArgs) -> Result<()> {
    if let Some(e) = a.epochs {
        cfg.model.epochs = e;
    }
    if let Some(e) = a.unordered_epochs {
        cfg.model.unordered_epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.model.lr = lr;
    }
    if let Some(t) = a.teacher_id {
        cfg.teacher.id = t;
    }
    cfg.validate()?;
    let ds = load_dataset(&cfg, a.dataset)?;
    let mut trainer = Trainer::new(&ds, cfg.model.clone());
    trainer.select_on_dev = !a.no_select;
    let hash = cfg.hash();
    ensure_parent(&a.out)?;
    let finish = |mut m: ListModel, path: &Path| -> Result<()> {
        m.meta.config_hash = hash.clone();
        m.save(path)?;
        let last = m.meta.history.last();
        info(
            "train-lm",
            json!({
                "checkpoint": path,
                "variant": m.meta.variant,
                "phases": m.meta.phases,
                "final_nll": last.map(|h| h.mean_nll),
                "vocab": m.vocab.len(),
            }),
        );
        Ok(())
    };
    if a.no_lg {
        return finish(trainer.train_single_target()?, &a.out);
    }
    let explanations = match &a.with_explanations {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::config("with-explanations", format!("{} does not exist", path.display())));
            }
            let cache = ExplanationCache::open(path)?;
            let mut map = BTreeMap::new();
            for &x in &ds.splits.train {
                for y in ds.targets(x) {
                    let e = cache.get(ds.surface(x), ds.surface(y), &cfg.teacher.id).ok_or_else(|| {
                        CliError::data(format!(
                            "no cached explanation from teacher {:?} for ({}, {}); run distill-explanations first",
                            cfg.teacher.id,
                            ds.surface(x),
                            ds.surface(y)
                        ))
                    })?;
                    map.insert((x, y), e.to_string());
                }
            }
            Some(map)
        }
        None => None,
    };
    if a.two_step {
        let models = trainer.train_two_step(explanations.as_ref())?;
        let stem = a.out.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned());
        let unordered = a.out.with_file_name(format!("{stem}.unordered.json"));
        finish(models.unordered, &unordered)?;
        finish(models.two_step, &a.out)
    } else if let Some(map) = &explanations {
        finish(trainer.train_explained(map)?, &a.out)
    } else {
        finish(trainer.train_ordered()?, &a.out)
    }
}

/// Generates records for the split with a prefix mode; also returns the report.
fn run_model(
    cfg: &RunConfig,
    model_path: &Path,
    ds: &Dataset,
    split: &[ConceptId],
    spec: &SequentialSpec,
    beam: Option<usize>,
) -> Result<(MetricReport, Vec<PredictionRecord>, ListModel)> {
    let model = ListModel::load(model_path)?;
    if model.meta.variant == Variant::SingleTarget && spec.mode != PrefixMode::Plain {
        return Err(CliError::config("prefix_mode", "single-target models take no prefix"));
    }
    let mut tc = cfg.model.clone();
    if let Some(b) = beam {
        tc.beam = b;
    }
    if tc.beam == 0 {
        return Err(CliError::config("beam", "must be positive"));
    }
    let mut decode = listlm::decode_config_for(model.meta.variant, &tc);
    decode.no_repeat_concept = cfg.eval.no_repeat_concept;
    let name = model_path
        .file_stem()
        .map_or_else(|| "listlm".into(), |s| s.to_string_lossy().trim_end_matches(".ckpt").to_string());
    let truth = GroundTruth::from_dataset(ds, split);
    let generator = LmGenerator {
        model: &model,
        set: &ds.concepts,
        decode,
        case: cfg.case_mode(),
        name,
    };
    let (mut report, records) = metrics::sequential_evaluate(&generator, &truth, &ds.concepts, spec)?;
    if model.meta.variant == Variant::SingleTarget {
        report = metrics::evaluate(
            &report.name,
            &report.mode,
            &records,
            &truth,
            &ds.concepts,
            &ReportSpec::first_only(cfg.eval.k),
        )?;
    }
    Ok((report, records, model))
}

pub fn generate(mut cfg: RunConfig, a: GenerateArgs) -> Result<()> {
    if let Some(s) = a.split {
        cfg.eval.split = s;
    }
    cfg.validate()?;
    let ds = load_dataset(&cfg, a.dataset)?;
    let split = split_of(&ds, &cfg.eval.split)?;
    let spec = sequential_spec(&cfg, &a.prefix, ds.target_size)?;
    if !a.model.exists() {
        return Err(CliError::config("model", format!("{} does not exist", a.model.display())));
    }
    let (report, records, model) = run_model(&cfg, &a.model, &ds, &split, &spec, a.beam)?;
    ensure_parent(&a.out)?;
    write_predictions(&a.out, &records)?;
    let mut meta = ArtifactMeta::new("generate", &cfg);
    meta.source = Some(report.name.clone());
    meta.variant = Some(model.meta.variant);
    meta.mode = Some(spec.mode.tag(spec.n));
    write_meta(&a.out, &meta)?;
    info(
        "generate",
        json!({"out": a.out, "records": records.len(), "mode": spec.mode.tag(spec.n)}),
    );
    Ok(())
}

pub fn distill(cfg: RunConfig, a: DistillArgs) -> Result<()> {
    cfg.validate()?;
    let ds = load_dataset(&cfg, a.dataset)?;
    let split = split_of(&ds, &a.split)?;
    let mut endpoint = cfg.teacher.endpoint.clone();
    let transport: Box<dyn Transport> = if a.mock {
        Box::new(MockTransport)
    } else {
        match &a.teacher_url {
            Some(url) => endpoint.base_url = url.clone(),
            None if cfg.teacher.endpoint == explain::TeacherEndpoint::default() => {
                return Err(CliError::config("teacher.base_url", "pass --teacher-url, --mock, or configure [teacher]"));
            }
            None => {}
        }
        Box::new(HttpTransport::new(&endpoint)?)
    };
    let counting = CountingTransport::new(transport);
    let id = if a.mock { explain::MOCK_TEACHER_ID.to_string() } else { cfg.teacher.id.clone() };
    let teacher = Teacher::from_endpoint(id.clone(), &counting, &endpoint);
    ensure_parent(&a.cache)?;
    let mut cache = ExplanationCache::open(&a.cache)?;
    let corpus = explain::build_explained_corpus(&ds, &split, &Grammar::default(), &teacher, &mut cache)?;
    ensure_parent(&a.out)?;
    let text: String = corpus.lines.iter().map(|l| format!("{}\n", l.text)).collect();
    std::fs::write(&a.out, text).map_err(|e| CliError::data(format!("{}: {e}", a.out.display())))?;
    let mut meta = ArtifactMeta::new("distill-explanations", &cfg);
    meta.source = Some(id.clone());
    write_meta(&a.out, &meta)?;
    let summary = json!({
        "teacher_id": id,
        "lines": corpus.lines.len(),
        "explanations": corpus.explanations.len(),
        "teacher_calls": counting.count(),
        "cache_entries": cache.len(),
    });
    println!("{summary}");
    Ok(())
}

fn load_predictions(cfg: &RunConfig, ds: &Dataset, path: &Path) -> Result<(Vec<PredictionRecord>, Option<ArtifactMeta>)> {
    if !path.exists() {
        return Err(CliError::config("predictions", format!("{} does not exist", path.display())));
    }
    Ok((read_predictions(path, &ds.concepts, cfg.case_mode())?, read_meta(path)))
}

fn plain_report(
    cfg: &RunConfig,
    ds: &Dataset,
    truth: &GroundTruth,
    path: &Path,
) -> Result<(MetricReport, Vec<PredictionRecord>, ReportSpec)> {
    let (records, meta) = load_predictions(cfg, ds, path)?;
    if records.iter().any(|r| r.prefix_len > 0) {
        return Err(CliError::data(format!(
            "{} holds prefixed generations; score them with sequential-eval",
            path.display()
        )));
    }
    let spec = match meta.as_ref().and_then(|m| m.variant) {
        Some(Variant::SingleTarget) => ReportSpec::first_only(cfg.eval.k),
        _ => ReportSpec::full(ds.target_size, cfg.eval.k),
    };
    let name = report_name(path, &records, meta.as_ref());
    let report = metrics::evaluate(&name, "plain", &records, truth, &ds.concepts, &spec)?;
    Ok((report, records, spec))
}

pub fn evaluate(mut cfg: RunConfig, a: EvaluateArgs) -> Result<()> {
    if let Some(s) = a.split {
        cfg.eval.split = s;
    }
    cfg.validate()?;
    let ds = load_dataset(&cfg, a.dataset)?;
    let truth = GroundTruth::from_dataset(&ds, &split_of(&ds, &cfg.eval.split)?);
    let reports = a
        .predictions
        .iter()
        .map(|p| plain_report(&cfg, &ds, &truth, p).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    emit_reports("evaluate", &cfg, &reports, a.out.as_deref())
}

pub fn sequential_eval(mut cfg: RunConfig, a: SequentialEvalArgs) -> Result<()> {
    if let Some(s) = a.split {
        cfg.eval.split = s;
    }
    cfg.validate()?;
    let ds = load_dataset(&cfg, a.dataset)?;
    let split = split_of(&ds, &cfg.eval.split)?;
    let spec = sequential_spec(&cfg, &a.prefix, ds.target_size)?;
    let (report, records) = match (&a.model, &a.predictions) {
        (Some(model), _) => {
            if !model.exists() {
                return Err(CliError::config("model", format!("{} does not exist", model.display())));
            }
            let (report, records, _) = run_model(&cfg, model, &ds, &split, &spec, None)?;
            (report, records)
        }
        (None, Some(path)) => {
            let truth = GroundTruth::from_dataset(&ds, &split);
            let (records, meta) = load_predictions(&cfg, &ds, path)?;
            let positions = spec.scored_positions()?;
            let name = report_name(path, &records, meta.as_ref());
            let report = metrics::evaluate(
                &name,
                &spec.mode.tag(spec.n),
                &records,
                &truth,
                &ds.concepts,
                &ReportSpec::positions(positions, cfg.eval.k),
            )?;
            (report, records)
        }
        (None, None) => return Err(CliError::config("model", "pass --model or --predictions")),
    };
    if let Some(p) = &a.predictions_out {
        ensure_parent(p)?;
        write_predictions(p, &records)?;
        let mut meta = ArtifactMeta::new("sequential-eval", &cfg);
        meta.source = Some(report.name.clone());
        meta.mode = Some(report.mode.clone());
        write_meta(p, &meta)?;
    }
    emit_reports("sequential-eval", &cfg, std::slice::from_ref(&report), a.out.as_deref())
}

pub fn report(mut cfg: RunConfig, a: ReportArgs) -> Result<()> {
    if let Some(s) = a.split {
        cfg.eval.split = s;
    }
    if let Some(edges) = a.bucket_edges {
        cfg.eval.buckets = edges;
    }
    cfg.validate()?;
    let ds = load_dataset(&cfg, a.dataset)?;
    let truth = GroundTruth::from_dataset(&ds, &split_of(&ds, &cfg.eval.split)?);
    let mut reports = Vec::new();
    for p in &a.predictions {
        let (mut report, records, spec) = plain_report(&cfg, &ds, &truth, p)?;
        if a.buckets {
            report.buckets = metrics::frequency_bucket_report(&records, &truth, &ds.concepts, &spec, &cfg.eval.buckets)?;
        }
        reports.push(report);
    }
    print!("{}", metrics::render_table(&reports));
    if a.buckets {
        for r in &reports {
            println!();
            println!("{} by input frequency", r.name);
            let present: Vec<MetricReport> = r.buckets.iter().filter_map(|b| b.report.as_deref().cloned()).collect();
            if !present.is_empty() {
                print!("{}", metrics::render_table(&present));
            }
            for b in r.buckets.iter().filter(|b| b.report.is_none()) {
                match b.upper {
                    Some(u) => println!("freq [{}, {u}): no concepts", b.lower),
                    None => println!("freq >= {}: no concepts", b.lower),
                }
            }
        }
    }
    if let Some(out) = &a.out {
        ensure_parent(out)?;
        write_json(
            out,
            &ReportFile {
                command: "report",
                config_hash: cfg.hash(),
                seed: cfg.seed,
                reports: &reports,
            },
        )?;
    }
    Ok(())
}

pub fn ingest(cfg: RunConfig, a: IngestArgs) -> Result<()> {
    cfg.validate()?;
    let ds = load_dataset(&cfg, a.dataset)?;
    if !a.input.exists() {
        return Err(CliError::config("input", format!("{} does not exist", a.input.display())));
    }
    let table;
    let emb;
    let mapper = if a.map_to_set {
        table = load_vectors(&cfg, a.vectors)?;
        emb = ConceptEmbeddings::compose_all(&ds.concepts, &table);
        Some(SetMapper {
            table: &table,
            embeddings: &emb,
        })
    } else {
        None
    };
    let records =
        baselines::external_llm_ingest(&a.input, &ds.concepts, &Grammar::default(), cfg.case_mode(), mapper.as_ref())?;
    ensure_parent(&a.out)?;
    write_predictions(&a.out, &records)?;
    let mut meta = ArtifactMeta::new("ingest-external", &cfg);
    meta.source = Some("external".into());
    write_meta(&a.out, &meta)?;
    let invalid: usize = records.iter().flat_map(|r| &r.slots).filter(|s| s.concept.is_none()).count();
    info(
        "ingest-external",
        json!({"out": a.out, "records": records.len(), "invalid_slots": invalid, "mapped": a.map_to_set}),
    );
    Ok(())
}
