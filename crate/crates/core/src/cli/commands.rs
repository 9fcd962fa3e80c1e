use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{BacktranslateConfig, EdaConfig, EvalConfig, FileConfig, RewriteConfig};
use super::*;
use crate::dataset::{
    gen_synthetic, ingest_captions, read_augmented, write_atomic, write_augmented, AugmentedRecord, CaptionRecord,
    DatasetError, FeatureStore, SyntheticSpec,
};
use crate::encoder::{train, write_metrics_csv, Checkpoint, EncoderError, TrainConfig};
use crate::eval::{
    build_zeroshot_classifier, embed_images, fewshot_eval, lambda_grid, linear_probe_sweep, render_table,
    zeroshot_accuracy, EpisodeSpec, EvalReport, LbfgsOptions, ModelTextEncoder, Split, DEFAULT_TEMPLATES,
};
use crate::icl::{
    rewrite_dataset, CompletionBackend, FixtureBackend, HttpCompletion, IclError, MetaRegistry, RewriteCache,
    RewriteOptions, Strategy,
};
use crate::textaug::{
    back_translate, eda_augment, EdaParams, HttpTranslator, IdentityTranslator, Language, SynonymTable, TextAugError,
    TranslationBackend,
};
use crate::util::{derive_seed, record_seed, rng_from_seed, stable_hash};
use crate::FORMAT_HEADER;

pub(super) fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let file = FileConfig::load(cli.config.as_deref())?;
    if let Some(jobs) = cli.jobs.or(file.jobs) {
        if jobs == 0 {
            return Err(invalid("--jobs must be at least 1"));
        }
        // Already initialized when run() is called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    match &cli.command {
        Command::Rewrite(a) => rewrite(&file, a),
        Command::AugmentEda(a) => augment_eda(&file, a),
        Command::Backtranslate(a) => backtranslate(&file, a),
        Command::Synth(a) => synth(&file, a),
        Command::Train(a) => train_cmd(&file, a),
        Command::EvalZeroshot(a) => eval_zeroshot(&file, a),
        Command::EvalFewshot(a) => eval_fewshot(&file, a),
        Command::EvalLinear(a) => eval_linear(&file, a),
        Command::Report(a) => report(a),
    }
}

fn config_hash<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    format!("{:016x}", stable_hash(json.as_bytes()))
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{}{suffix}", path.display()))
}

struct Manifest<'a> {
    command: &'a str,
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: BTreeMap<&'a str, String>,
    outputs: Vec<String>,
    summary: serde_json::Value,
}

impl Manifest<'_> {
    fn write(&self, path: &Path) -> Result<(), CliError> {
        let value = json!({
            "command": self.command,
            "config": self.config,
            "config_hash": config_hash(&self.config),
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "summary": self.summary,
            "versions": {"laclip": env!("CARGO_PKG_VERSION"), "format": FORMAT_HEADER},
        });
        let mut text = serde_json::to_string_pretty(&value).expect("manifest serializes");
        text.push('\n');
        write_atomic(path, text.as_bytes()).map_err(failed)
    }
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(invalid(format!("input {} does not exist", path.display())))
    }
}

/// Augmented records, or caption records lifted to `M = 0`.
fn load_records(path: &Path) -> Result<Vec<AugmentedRecord>, CliError> {
    require_file(path)?;
    match read_augmented(path) {
        Ok(r) => Ok(r),
        Err(DatasetError::Parse { .. }) => ingest_captions(path).map_err(|e| invalid(format!("{}: {e}", path.display()))),
        Err(e) => Err(invalid(format!("{}: {e}", path.display()))),
    }
}

fn write_records(path: &Path, records: &[AugmentedRecord]) -> Result<(), CliError> {
    write_augmented(path, records).map_err(failed)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(failed)
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn rewrite(file: &FileConfig, a: &RewriteArgs) -> Result<(), CliError> {
    let mut cfg: RewriteConfig = file.section("rewrite", &file.rewrite, true)?;
    if let Some(list) = &a.strategies {
        cfg.strategies = list.iter().map(|s| s.parse::<Strategy>()).collect::<Result<_, _>>().map_err(invalid)?;
    }
    cfg.temperature = a.temperature.unwrap_or(cfg.temperature);
    cfg.concurrency = a.concurrency.unwrap_or(cfg.concurrency);
    cfg.max_retries = a.max_retries.unwrap_or(cfg.max_retries);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.backend = a.backend.unwrap_or(cfg.backend);
    if a.cache.is_some() {
        cfg.cache = a.cache.clone();
    }

    let records = load_records(&a.input)?;
    let captions: Vec<CaptionRecord> = records
        .into_iter()
        .map(|r| CaptionRecord {
            caption: r.captions[0].clone(),
            id: r.id,
            image_ref: r.image_ref,
        })
        .collect();
    let backend: Box<dyn CompletionBackend> = match cfg.backend {
        CompletionKind::Fixture => Box::new(FixtureBackend::echo()),
        CompletionKind::Http => Box::new(HttpCompletion::from_env().ok_or_else(|| {
            invalid(format!("{} is not set; use --backend fixture for offline runs", HttpCompletion::ENDPOINT_VAR))
        })?),
    };
    let cache = match &cfg.cache {
        Some(p) => RewriteCache::open(p).map_err(invalid)?,
        None => RewriteCache::in_memory(),
    };
    let opts = RewriteOptions {
        strategies: cfg.strategies.clone(),
        temperature: cfg.temperature,
        concurrency: cfg.concurrency,
        seed: cfg.seed,
        max_retries: cfg.max_retries,
        backoff: Duration::from_millis(cfg.backoff_ms),
        max_tokens: cfg.max_tokens,
        stop: "\n".into(),
    };
    let out = rewrite_dataset(&captions, &opts, &MetaRegistry::bundled(), backend.as_ref(), &cache).map_err(|e| match e {
        IclError::Backend { .. } | IclError::Cache { .. } => failed(e),
        other => invalid(other),
    })?;
    write_records(&a.out, &out.records)?;
    let report = serde_json::to_value(&out.report).expect("report serializes");
    println!("{report}");
    Manifest {
        command: "rewrite",
        config: serde_json::to_value(&cfg).expect("config serializes"),
        seed: Some(cfg.seed),
        inputs: BTreeMap::from([("in", path_str(&a.input))]),
        outputs: vec![path_str(&a.out)],
        summary: report,
    }
    .write(&sidecar(&a.out, ".manifest.json"))
}

fn augment_eda(file: &FileConfig, a: &EdaArgs) -> Result<(), CliError> {
    let mut cfg: EdaConfig = file.section("augment_eda", &file.augment_eda, true)?;
    cfg.op = a.op.unwrap_or(cfg.op);
    cfg.n_aug = a.n_aug.unwrap_or(cfg.n_aug);
    if let Some(alpha) = a.alpha {
        (cfg.alpha_sr, cfg.alpha_ri, cfg.alpha_rs, cfg.p_rd) = (alpha, alpha, alpha, alpha);
    }
    if a.synonyms.is_some() {
        cfg.synonyms = a.synonyms.clone();
    }
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    let params = EdaParams {
        alpha_sr: cfg.alpha_sr,
        alpha_ri: cfg.alpha_ri,
        alpha_rs: cfg.alpha_rs,
        p_rd: cfg.p_rd,
        synonym_table: match &cfg.synonyms {
            Some(p) => SynonymTable::load(p).map_err(invalid)?,
            None => SynonymTable::bundled(),
        },
    };
    params.validate().map_err(invalid)?;
    let mut records = load_records(&a.input)?;
    let op_name = serde_json::to_value(cfg.op).expect("op serializes");
    let label = format!("eda-{}", op_name.as_str().unwrap_or("op"));
    for r in &mut records {
        let mut rng = rng_from_seed(record_seed(cfg.seed, "eda", &r.id));
        for _ in 0..cfg.n_aug {
            let text = eda_augment(&r.captions[0], cfg.op, &params, &mut rng)
                .map_err(|e| invalid(format!("record {}: {e}", r.id)))?;
            r.push_rewrite(text, label.clone(), "local");
        }
    }
    write_records(&a.out, &records)?;
    Manifest {
        command: "augment-eda",
        config: serde_json::to_value(&cfg).expect("config serializes"),
        seed: Some(cfg.seed),
        inputs: BTreeMap::from([("in", path_str(&a.input))]),
        outputs: vec![path_str(&a.out)],
        summary: json!({"records": records.len()}),
    }
    .write(&sidecar(&a.out, ".manifest.json"))
}

fn backtranslate(file: &FileConfig, a: &BacktranslateArgs) -> Result<(), CliError> {
    let mut cfg: BacktranslateConfig = file.section("backtranslate", &file.backtranslate, false)?;
    if let Some(list) = &a.languages {
        cfg.languages = list.iter().map(|s| s.parse::<Language>()).collect::<Result<_, _>>().map_err(invalid)?;
    }
    cfg.backend = a.backend.unwrap_or(cfg.backend);
    if cfg.languages.contains(&Language::En) {
        return Err(invalid("English cannot be a pivot language"));
    }
    let (client, backend_id): (Box<dyn TranslationBackend>, String) = match cfg.backend {
        TranslatorKind::Identity => (Box::new(IdentityTranslator), "identity".into()),
        TranslatorKind::Http => {
            let http = HttpTranslator::from_env()
                .ok_or_else(|| invalid(format!("{} is not set; use --backend identity for offline runs", HttpTranslator::ENDPOINT_VAR)))?;
            (Box::new(http), "http".into())
        }
    };
    let records = load_records(&a.input)?;
    let rewrites: Vec<Vec<String>> = records
        .par_iter()
        .map(|r| {
            cfg.languages
                .iter()
                .map(|&lang| back_translate(&r.captions[0], lang, client.as_ref()))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| match e {
                    TextAugError::EmptyInput => invalid(format!("record {}: {e}", r.id)),
                    other => failed(format!("record {}: {other}", r.id)),
                })
        })
        .collect::<Result<_, _>>()?;
    let mut out = records;
    for (r, texts) in out.iter_mut().zip(rewrites) {
        for (lang, text) in cfg.languages.iter().zip(texts) {
            r.push_rewrite(text, format!("bt-{}", lang.code()), backend_id.clone());
        }
    }
    write_records(&a.out, &out)?;
    Manifest {
        command: "backtranslate",
        config: serde_json::to_value(&cfg).expect("config serializes"),
        seed: None,
        inputs: BTreeMap::from([("in", path_str(&a.input))]),
        outputs: vec![path_str(&a.out)],
        summary: json!({"records": out.len()}),
    }
    .write(&sidecar(&a.out, ".manifest.json"))
}

/// Written next to synthetic data; read by the evaluation commands.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelsFile {
    class_names: Vec<String>,
    labels: BTreeMap<String, usize>,
    #[serde(default)]
    caption_templates: Vec<String>,
    #[serde(default)]
    paraphrase_templates: Vec<String>,
}

impl LabelsFile {
    fn read(path: &Path) -> Result<Self, CliError> {
        require_file(path)?;
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let parsed: Self = serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        if let Some((id, &c)) = parsed.labels.iter().find(|(_, &c)| c >= parsed.class_names.len()) {
            return Err(invalid(format!("{}: label {c} of {id:?} has no class name", path.display())));
        }
        Ok(parsed)
    }

    fn labels_for(&self, records: &[AugmentedRecord]) -> Result<Vec<usize>, CliError> {
        records
            .iter()
            .map(|r| self.labels.get(&r.id).copied().ok_or_else(|| invalid(format!("no label for record {:?}", r.id))))
            .collect()
    }
}

fn synth(file: &FileConfig, a: &SynthArgs) -> Result<(), CliError> {
    let mut table = file.synth.clone().unwrap_or_default();
    let file_seed = match table.remove("seed") {
        Some(v) => Some(v.as_integer().filter(|&s| s >= 0).ok_or_else(|| invalid("[synth] seed must be a non-negative integer"))? as u64),
        None => file.seed,
    };
    let mut spec: SyntheticSpec = toml::Value::Table(table)
        .try_into()
        .map_err(|e| invalid(format!("config section [synth]: {e}")))?;
    spec.n_classes = a.classes.unwrap_or(spec.n_classes);
    spec.samples_per_class = a.per_class.unwrap_or(spec.samples_per_class);
    spec.feature_dim = a.dim.unwrap_or(spec.feature_dim);
    spec.noise_sigma = a.noise.unwrap_or(spec.noise_sigma);
    spec.n_rewrites = a.rewrites.unwrap_or(spec.n_rewrites);
    let seed = a.seed.or(file_seed).unwrap_or(0);
    spec.validate().map_err(invalid)?;

    let data = gen_synthetic(&spec, seed).map_err(invalid)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| failed(format!("{}: {e}", a.out_dir.display())))?;
    let dir = &a.out_dir;
    let outputs = ["train.jsonl", "test.jsonl", "test_shifted.jsonl", "features.bin", "labels.json"].map(|f| dir.join(f));
    write_records(&outputs[0], &data.train)?;
    write_records(&outputs[1], &data.test)?;
    write_records(&outputs[2], &data.test_shifted)?;
    data.features.write(&outputs[3]).map_err(failed)?;
    write_json(
        &outputs[4],
        &LabelsFile {
            class_names: data.class_names.clone(),
            labels: data.labels.clone(),
            caption_templates: spec.caption_templates.clone(),
            paraphrase_templates: spec.paraphrase_templates.clone(),
        },
    )?;
    let mut config = serde_json::to_value(&spec).expect("spec serializes");
    config["seed"] = json!(seed);
    Manifest {
        command: "synth",
        config,
        seed: Some(seed),
        inputs: BTreeMap::new(),
        outputs: outputs.iter().map(|p| path_str(p)).collect(),
        summary: json!({"train": data.train.len(), "test": data.test.len(), "classes": data.class_names.len()}),
    }
    .write(&dir.join("manifest.json"))
}

fn train_cmd(file: &FileConfig, a: &TrainArgs) -> Result<(), CliError> {
    let mut cfg: TrainConfig = file.section("train", &file.train, true)?;
    cfg.mode = a.mode.unwrap_or(cfg.mode);
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    cfg.lr = a.lr.unwrap_or(cfg.lr);
    cfg.weight_decay = a.weight_decay.unwrap_or(cfg.weight_decay);
    cfg.vocab_size = a.vocab_size.unwrap_or(cfg.vocab_size);
    cfg.embed_dim = a.embed_dim.unwrap_or(cfg.embed_dim);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.validate().map_err(invalid)?;
    let records = load_records(&a.input)?;
    require_file(&a.features)?;
    let features = FeatureStore::read(&a.features).map_err(invalid)?;

    let out = train(&cfg, &records, &features).map_err(|e| match e {
        EncoderError::InvalidConfig(_) | EncoderError::Dataset(_) => invalid(e),
        other => failed(other),
    })?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| failed(format!("{}: {e}", a.out_dir.display())))?;
    let ck_path = a.out_dir.join("checkpoint.bin");
    let csv_path = a.out_dir.join("metrics.csv");
    let ck = Checkpoint::new(cfg.clone(), out.params.clone());
    write_atomic(&ck_path, &ck.to_bytes()).map_err(failed)?;
    write_atomic(&csv_path, write_metrics_csv(&out.metrics).as_bytes()).map_err(failed)?;
    let epoch_losses = out.epoch_losses();
    let summary = json!({
        "steps": out.metrics.len(),
        "first_epoch_loss": epoch_losses.first(),
        "final_epoch_loss": epoch_losses.last(),
        "final_tau": out.params.temp.tau(),
    });
    println!("{summary}");
    Manifest {
        command: "train",
        config: serde_json::to_value(&cfg).expect("config serializes"),
        seed: Some(cfg.seed),
        inputs: BTreeMap::from([("in", path_str(&a.input)), ("features", path_str(&a.features))]),
        outputs: vec![path_str(&ck_path), path_str(&csv_path)],
        summary,
    }
    .write(&a.out_dir.join("manifest.json"))
}

struct EvalData {
    labels: LabelsFile,
    features: FeatureStore,
    checkpoint: Option<Checkpoint>,
}

impl EvalData {
    fn load(common: &EvalInputs) -> Result<Self, CliError> {
        let labels = LabelsFile::read(&common.labels)?;
        require_file(&common.features)?;
        let features = FeatureStore::read(&common.features).map_err(invalid)?;
        let checkpoint = match &common.checkpoint {
            Some(p) => {
                require_file(p)?;
                let ck = Checkpoint::read(p).map_err(invalid)?;
                if ck.params.image_proj.nrows() != features.dim() {
                    return Err(invalid(format!(
                        "checkpoint expects {}-d image features, sidecar has {}",
                        ck.params.image_proj.nrows(),
                        features.dim()
                    )));
                }
                Some(ck)
            }
            None => None,
        };
        Ok(Self {
            labels,
            features,
            checkpoint,
        })
    }

    /// Image embeddings through the checkpoint, or the raw features.
    fn rows(&self, records: &[AugmentedRecord]) -> Result<Array2<f64>, CliError> {
        let refs: Vec<&str> = records.iter().map(|r| r.image_ref.as_str()).collect();
        let raw = self.features.gather(&refs).map_err(invalid)?;
        match &self.checkpoint {
            Some(ck) => embed_images(&ck.params, raw.view()).map_err(failed),
            None => Ok(raw),
        }
    }

    fn config_hash(&self) -> String {
        self.checkpoint
            .as_ref()
            .map(|c| c.config_hash.clone())
            .unwrap_or_else(|| "raw-features".into())
    }
}

fn dataset_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn finish_eval(
    command: &str,
    cfg: &EvalConfig,
    inputs: BTreeMap<&str, String>,
    report: &EvalReport,
    out: &Path,
    extra_outputs: Vec<String>,
) -> Result<(), CliError> {
    write_json(out, report)?;
    print!("{}", render_table(std::slice::from_ref(report)));
    let mut outputs = vec![path_str(out)];
    outputs.extend(extra_outputs);
    Manifest {
        command,
        config: serde_json::to_value(cfg).expect("config serializes"),
        seed: Some(cfg.seed),
        inputs,
        outputs,
        summary: serde_json::to_value(report).expect("report serializes"),
    }
    .write(&sidecar(out, ".manifest.json"))
}

fn eval_zeroshot(file: &FileConfig, a: &ZeroShotArgs) -> Result<(), CliError> {
    let mut cfg: EvalConfig = file.section("eval", &file.eval, true)?;
    if !a.template.is_empty() {
        cfg.templates = Some(a.template.clone());
    } else if let Some(set) = &a.templates {
        cfg.templates = None;
        cfg.template_set = set.clone();
    }
    let data = EvalData::load(&a.common)?;
    let Some(ck) = &data.checkpoint else {
        return Err(invalid("eval-zeroshot needs --checkpoint"));
    };
    let templates: Vec<String> = match &cfg.templates {
        Some(t) => t.clone(),
        None => match cfg.template_set.as_str() {
            "default" => DEFAULT_TEMPLATES.iter().map(|s| s.to_string()).collect(),
            "training" => data.labels.caption_templates.clone(),
            "paraphrase" => data.labels.paraphrase_templates.clone(),
            other => return Err(invalid(format!("unknown template set {other:?}"))),
        },
    };
    if templates.is_empty() {
        return Err(invalid("no templates selected"));
    }
    let records = load_records(&a.input)?;
    let labels = data.labels.labels_for(&records)?;
    let images = data.rows(&records)?;
    let encoder = ModelTextEncoder {
        params: &ck.params,
        tokenizer: ck.config.tokenizer(),
    };
    let classifier = build_zeroshot_classifier(&data.labels.class_names, &templates, &encoder).map_err(invalid)?;
    let accuracy = zeroshot_accuracy(&classifier, images.view(), &labels).map_err(invalid)?;
    cfg.templates = Some(templates);
    let report = EvalReport {
        protocol: "zeroshot".into(),
        dataset: dataset_name(&a.input),
        config_hash: data.config_hash(),
        metrics: BTreeMap::from([("accuracy".into(), accuracy), ("n".into(), labels.len() as f64)]),
        ci: None,
    };
    let inputs = BTreeMap::from([
        ("in", path_str(&a.input)),
        ("checkpoint", a.common.checkpoint.as_deref().map(path_str).unwrap_or_default()),
        ("features", path_str(&a.common.features)),
        ("labels", path_str(&a.common.labels)),
    ]);
    finish_eval("eval-zeroshot", &cfg, inputs, &report, &a.common.out, vec![])
}

fn eval_fewshot(file: &FileConfig, a: &FewShotArgs) -> Result<(), CliError> {
    let mut cfg: EvalConfig = file.section("eval", &file.eval, true)?;
    cfg.episodes = a.episodes.unwrap_or(cfg.episodes);
    cfg.way = a.way.unwrap_or(cfg.way);
    cfg.shot = a.shot.unwrap_or(cfg.shot);
    cfg.n_query = a.query.unwrap_or(cfg.n_query);
    cfg.method = a.method.unwrap_or(cfg.method);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    let data = EvalData::load(&a.common)?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for p in &a.input {
        for r in load_records(p)? {
            if !seen.insert(r.id.clone()) {
                return Err(invalid(format!("record {:?} appears in more than one input", r.id)));
            }
            records.push(r);
        }
    }
    let labels = data.labels.labels_for(&records)?;
    let rows = data.rows(&records)?;
    let spec = EpisodeSpec {
        way: cfg.way,
        shot: cfg.shot,
        n_query: cfg.n_query,
    };
    let result = fewshot_eval(rows.view(), &labels, &spec, cfg.episodes, cfg.seed, cfg.method).map_err(invalid)?;
    let report = EvalReport {
        protocol: "fewshot".into(),
        dataset: a.input.iter().map(|p| dataset_name(p)).collect::<Vec<_>>().join("+"),
        config_hash: data.config_hash(),
        metrics: BTreeMap::from([("accuracy".into(), result.mean), ("episodes".into(), result.episodes as f64)]),
        ci: Some(result.ci),
    };
    let inputs = BTreeMap::from([
        ("in", a.input.iter().map(|p| path_str(p)).collect::<Vec<_>>().join(",")),
        ("checkpoint", a.common.checkpoint.as_deref().map(path_str).unwrap_or_default()),
        ("features", path_str(&a.common.features)),
        ("labels", path_str(&a.common.labels)),
    ]);
    finish_eval("eval-fewshot", &cfg, inputs, &report, &a.common.out, vec![])
}

fn eval_linear(file: &FileConfig, a: &LinearArgs) -> Result<(), CliError> {
    let mut cfg: EvalConfig = file.section("eval", &file.eval, true)?;
    cfg.val_fraction = a.val_fraction.unwrap_or(cfg.val_fraction);
    cfg.max_iter = a.max_iter.unwrap_or(cfg.max_iter);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    if !(0.0 < cfg.val_fraction && cfg.val_fraction < 1.0) {
        return Err(invalid("val_fraction must lie in (0, 1)"));
    }
    let data = EvalData::load(&a.common)?;
    let mut train_records = load_records(&a.train)?;
    let test_records = load_records(&a.test)?;
    let val_records = match &a.val {
        Some(p) => load_records(p)?,
        None => {
            train_records.shuffle(&mut rng_from_seed(derive_seed(cfg.seed, "val-split", 0)));
            let n_val = ((train_records.len() as f64 * cfg.val_fraction).round() as usize).clamp(1, train_records.len() - 1);
            train_records.split_off(train_records.len() - n_val)
        }
    };
    let n_classes = data.labels.class_names.len();
    let (ytr, yva, yte) = (
        data.labels.labels_for(&train_records)?,
        data.labels.labels_for(&val_records)?,
        data.labels.labels_for(&test_records)?,
    );
    let (xtr, xva, xte) = (data.rows(&train_records)?, data.rows(&val_records)?, data.rows(&test_records)?);
    let opts = LbfgsOptions {
        max_iter: cfg.max_iter,
        ..LbfgsOptions::default()
    };
    let result = linear_probe_sweep(
        Split { x: xtr.view(), y: &ytr },
        Split { x: xva.view(), y: &yva },
        Split { x: xte.view(), y: &yte },
        &lambda_grid(),
        n_classes,
        &opts,
    )
    .map_err(invalid)?;
    let sweep_path = sidecar(&a.common.out, ".sweep.csv");
    let mut csv = String::from("lambda,val_acc\n");
    for (l, acc) in &result.sweep_table {
        csv.push_str(&format!("{l:e},{acc}\n"));
    }
    write_atomic(&sweep_path, csv.as_bytes()).map_err(failed)?;
    let report = EvalReport {
        protocol: "linear".into(),
        dataset: dataset_name(&a.test),
        config_hash: data.config_hash(),
        metrics: BTreeMap::from([
            ("best_lambda".into(), result.best_lambda),
            ("val_acc".into(), result.val_acc),
            ("test_acc".into(), result.test_acc),
        ]),
        ci: None,
    };
    let inputs = BTreeMap::from([
        ("train", path_str(&a.train)),
        ("val", a.val.as_deref().map(path_str).unwrap_or_default()),
        ("test", path_str(&a.test)),
        ("checkpoint", a.common.checkpoint.as_deref().map(path_str).unwrap_or_default()),
        ("features", path_str(&a.common.features)),
        ("labels", path_str(&a.common.labels)),
    ]);
    finish_eval("eval-linear", &cfg, inputs, &report, &a.common.out, vec![path_str(&sweep_path)])
}

fn report(a: &ReportArgs) -> Result<(), CliError> {
    let reports = a
        .reports
        .iter()
        .map(|p| {
            require_file(p)?;
            let text = std::fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<EvalReport>(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let table = render_table(&reports);
    print!("{table}");
    if let Some(out) = &a.out {
        write_atomic(out, table.as_bytes()).map_err(failed)?;
    }
    Ok(())
}
