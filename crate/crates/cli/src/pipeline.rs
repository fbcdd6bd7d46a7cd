//! Data preparation, pretraining, fine-tuning and run-directory output.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use labelattn_core::corpus::{
    filter_top_labels, generate_synthetic, load_jsonl, stats, write_jsonl, Dataset, LabelSpace, LoadMode,
};
use labelattn_core::encoder::{mlm_pretrain_step, EncoderState};
use labelattn_core::metrics::{MetricsReport, ThresholdSource};
use labelattn_core::rng::stream;
use labelattn_core::tokenizer::{fragmentation_ratio, Tokenizer};
use labelattn_core::training::{
    evaluate_docs, predict_docs, train, AdamW, AdamWConfig, EncodedDoc, LrSchedule, Model, ModelConfig,
    Thresholds, TrainOutcome,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const DEV_FILE: &str = "dev.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const LABELS_FILE: &str = "labels.json";
pub const STATS_FILE: &str = "stats.json";

const PRETRAIN_STREAM: u64 = 0x9E7A;

/// Writes `contents` through a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, contents).map_err(CliError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(CliError::io(path))
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Writes a dataset directory: three JSONL splits, the label space and
/// per-split statistics.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    for (name, docs) in [(TRAIN_FILE, &data.train), (DEV_FILE, &data.dev), (TEST_FILE, &data.test)] {
        write_jsonl(&dir.join(name), docs, &data.labels)?;
    }
    write_atomic(&dir.join(LABELS_FILE), data.labels.to_json().as_bytes())?;
    let stats = serde_json::json!({
        "train": stats(&data.train)?,
        "dev": stats(&data.dev)?,
        "test": stats(&data.test)?,
    });
    write_atomic(
        &dir.join(STATS_FILE),
        serde_json::to_string_pretty(&stats).expect("stats serialize").as_bytes(),
    )
}

/// `gen-data` command: the synthetic corpus named by the config, written
/// with the resolved config next to it.
pub fn run_gen_data(config: &ExperimentConfig, out: &Path) -> Result<Dataset> {
    let spec = config
        .corpus
        .as_ref()
        .ok_or_else(|| CliError::Config("gen-data needs a `corpus` section".into()))?;
    let data = generate_synthetic(spec)?;
    write_dataset(out, &data)?;
    write_atomic(&out.join(CONFIG_FILE), config.to_json().as_bytes())?;
    Ok(data)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let labels_path = dir.join(LABELS_FILE);
    let mut labels = if labels_path.exists() {
        let text = fs::read_to_string(&labels_path).map_err(CliError::io(&labels_path))?;
        LabelSpace::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", labels_path.display())))?
    } else {
        LabelSpace::new()
    };
    let load = |name: &str, labels: &mut LabelSpace, mode| {
        let path = dir.join(name);
        if !path.exists() {
            return Err(CliError::Io {
                path: path.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "missing split"),
            });
        }
        load_jsonl(&path, labels, mode)
            .map(|(docs, _)| docs)
            .map_err(|e| match e {
                labelattn_core::corpus::CorpusError::Io(source) => CliError::Io { path, source },
                e => CliError::Config(format!("{}: {e}", path.display())),
            })
    };
    let train = load(TRAIN_FILE, &mut labels, LoadMode::Train)?;
    let dev = load(DEV_FILE, &mut labels, LoadMode::Eval { permissive: true })?;
    let test = load(TEST_FILE, &mut labels, LoadMode::Eval { permissive: true })?;
    labels.recount(&train);
    Ok(Dataset {
        train,
        dev,
        test,
        labels,
    })
}

/// The dataset named by the config (or by an explicit directory), after
/// optional top-k label filtering.
pub fn load_dataset(config: &ExperimentConfig, data_dir: Option<&Path>) -> Result<Dataset> {
    let data = match (data_dir, config.data_path.as_deref(), &config.corpus) {
        (Some(dir), _, _) | (None, Some(dir), _) => read_dataset(dir)?,
        (None, None, Some(spec)) => generate_synthetic(spec)?,
        (None, None, None) => {
            return Err(CliError::Config(
                "no data: set `corpus` or `data_path`, or pass --data".into(),
            ))
        }
    };
    Ok(match config.top_k_labels {
        Some(k) => filter_top_labels(&data, k),
        None => data,
    })
}

/// Tokenized splits plus the tokenizer and label space they share.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub labels: LabelSpace,
    pub tokenizer: Tokenizer,
    pub fragmentation: f64,
    pub train: Vec<EncodedDoc>,
    pub dev: Vec<EncodedDoc>,
    pub test: Vec<EncodedDoc>,
}

/// Trains the tokenizer on the training split and records the resulting
/// vocabulary size in `config.encoder`.
pub fn prepare(config: &mut ExperimentConfig, data: &Dataset) -> Result<Prepared> {
    let tokenizer = config.tokenizer.train(&data.train)?;
    prepare_with(config, data, tokenizer)
}

pub fn prepare_with(config: &mut ExperimentConfig, data: &Dataset, tokenizer: Tokenizer) -> Result<Prepared> {
    config.encoder.vocab_size = tokenizer.vocab().len();
    let n = data.labels.len();
    Ok(Prepared {
        fragmentation: fragmentation_ratio(&data.train, &tokenizer)?,
        train: EncodedDoc::batch(&data.train, &tokenizer, n),
        dev: EncodedDoc::batch(&data.dev, &tokenizer, n),
        test: EncodedDoc::batch(&data.test, &tokenizer, n),
        labels: data.labels.clone(),
        tokenizer,
    })
}

pub fn model_config(config: &ExperimentConfig, num_labels: usize) -> ModelConfig {
    ModelConfig {
        encoder: config.encoder.clone(),
        head: config.head.clone(),
        segmenter: config.segmenter.clone(),
        num_labels,
    }
}

/// Masked-LM pretraining on the segments of the training split.
pub fn pretrain(
    config: &ExperimentConfig,
    prepared: &Prepared,
    mut log: Option<&mut dyn Write>,
) -> Result<EncoderState<f32>> {
    let mut state = EncoderState::<f32>::init_random(&config.encoder)?;
    let mut pool = Vec::new();
    for doc in &prepared.train {
        for seg in config.segmenter.segments(&doc.tokens).map_err(|e| CliError::Config(e.to_string()))? {
            pool.push((seg.ids, seg.mask));
        }
    }
    if pool.is_empty() {
        return Err(CliError::Config("pretraining corpus is empty".into()));
    }
    let p = &config.pretrain;
    let schedule = LrSchedule {
        peak: p.peak_lr,
        warmup_steps: p.warmup_steps,
        total_steps: p.steps,
        kind: p.schedule,
    };
    let mut opt = AdamW::new(
        &state.store,
        AdamWConfig {
            weight_decay: p.weight_decay,
            ..Default::default()
        },
    );
    let mut rng = stream(config.seed, PRETRAIN_STREAM, 0);
    for step in 0..p.steps {
        let batch: Vec<_> = (0..p.batch_size)
            .map(|_| pool[rng.random_range(0..pool.len())].clone())
            .collect();
        let lr = schedule.lr_at(step + 1);
        match mlm_pretrain_step(&mut state, &mut opt, lr, &batch, &mut rng)? {
            Some(loss) => {
                if let Some(w) = log.as_deref_mut() {
                    writeln!(w, "{}", serde_json::json!({"step": step + 1, "lr": lr, "loss": loss}))
                        .map_err(CliError::io("<pretrain log>"))?;
                }
            }
            None => log::warn!("pretraining step {} had no maskable positions; skipped", step + 1),
        }
    }
    Ok(state)
}

pub enum Init {
    Random,
    Pretrained(EncoderState<f32>),
}

pub struct FitResult {
    pub model: Model<f32>,
    pub outcome: TrainOutcome,
    pub test_report: MetricsReport,
    pub test_scores: Vec<Vec<f64>>,
}

/// Fine-tunes a model and evaluates it on the test split at the tuned
/// threshold.
pub fn fit(
    config: &ExperimentConfig,
    prepared: &Prepared,
    init: &Init,
    log: Option<&mut dyn Write>,
) -> Result<FitResult> {
    let mc = model_config(config, prepared.labels.len());
    let mut model = match init {
        Init::Random => Model::new(mc)?,
        Init::Pretrained(state) => Model::with_encoder(mc, state)?,
    };
    let outcome = train(&mut model, &prepared.train, &prepared.dev, &prepared.labels, &config.train, log)?;
    let test_scores = predict_docs(&model, &prepared.test)?;
    let test_report = evaluate_docs(
        &prepared.test,
        test_scores.clone(),
        &outcome.thresholds,
        outcome.thresholds.source(),
        &prepared.labels,
    )?;
    Ok(FitResult {
        model,
        outcome,
        test_report,
        test_scores,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildInfo {
    pub version: String,
    pub git: Option<String>,
}

impl BuildInfo {
    pub fn current() -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").into(),
            git: option_env!("LABELATTN_GIT_REV").map(str::to_string),
        }
    }
}

/// Written last, atomically, into every run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub build: BuildInfo,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub init: String,
    pub best_epoch: usize,
    pub thresholds: Thresholds,
    pub fragmentation_ratio: f64,
    pub files: Vec<String>,
    pub dev_report: MetricsReport,
    pub report: MetricsReport,
}

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const TOKENIZER_FILE: &str = "tokenizer.txt";
pub const THRESHOLD_FILE: &str = "threshold.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const EPOCHS_FILE: &str = "epochs.json";
pub const DEV_REPORT_FILE: &str = "dev_report.json";
pub const TEST_REPORT_FILE: &str = "test_report.json";

fn pretty<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec_pretty(v).expect("serializable")
}

/// Full `train` command: prepare, fit, and populate `out`.
pub fn run_train(
    config: &ExperimentConfig,
    data_dir: Option<&Path>,
    init_ckpt: Option<&Path>,
    out: &Path,
) -> Result<RunManifest> {
    let started = unix_now();
    let mut config = config.clone();
    let data = load_dataset(&config, data_dir)?;
    if let Some(dir) = data_dir {
        config.data_path = Some(dir.to_path_buf());
        config.corpus = None;
    }
    let (prepared, init, init_name) = match init_ckpt {
        Some(path) => {
            let (state, extra) = EncoderState::<f32>::load(path)?;
            let tokenizer = tokenizer_from_extra(&extra, path)?;
            let prepared = prepare_with(&mut config, &data, tokenizer)?;
            (prepared, Init::Pretrained(state), path.display().to_string())
        }
        None => (prepare(&mut config, &data)?, Init::Random, "random".to_string()),
    };
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    write_atomic(&out.join(CONFIG_FILE), config.to_json().as_bytes())?;
    let log_path = out.join(TRAIN_LOG_FILE);
    let mut log = BufWriter::new(fs::File::create(&log_path).map_err(CliError::io(&log_path))?);
    let result = fit(&config, &prepared, &init, Some(&mut log));
    log.flush().map_err(CliError::io(&log_path))?;
    let result = match result {
        Err(CliError::Numerical(msg)) => {
            let dump = serde_json::json!({"error": msg, "config": config});
            let _ = write_atomic(&out.join("failure.json"), &pretty(&dump));
            return Err(CliError::Numerical(msg));
        }
        r => r?,
    };
    write_run_files(out, &config, &prepared, &result, &init_name, started)
}

fn tokenizer_payload(tokenizer: &Tokenizer) -> serde_json::Value {
    let text = match tokenizer {
        Tokenizer::Word(v) => v.to_text(),
        Tokenizer::Bpe(b) => b.to_text(),
    };
    serde_json::json!({"tokenizer_kind": tokenizer.kind(), "tokenizer": text})
}

pub fn tokenizer_from_extra(extra: &serde_json::Value, path: &Path) -> Result<Tokenizer> {
    let bad = || CliError::Config(format!("{}: checkpoint carries no tokenizer", path.display()));
    let kind = serde_json::from_value(extra.get("tokenizer_kind").cloned().ok_or_else(bad)?)
        .map_err(|_| bad())?;
    let text = extra.get("tokenizer").and_then(|v| v.as_str()).ok_or_else(bad)?;
    let tok = match kind {
        labelattn_core::tokenizer::TokenizerKind::Word => {
            Tokenizer::Word(labelattn_core::tokenizer::Vocabulary::from_text(text)?)
        }
        labelattn_core::tokenizer::TokenizerKind::Bpe => {
            Tokenizer::Bpe(labelattn_core::tokenizer::BpeModel::from_text(text)?)
        }
    };
    Ok(tok)
}

/// Full `pretrain` command: writes an encoder checkpoint (carrying its
/// tokenizer) and a loss curve next to it.
pub fn run_pretrain(config: &ExperimentConfig, data_dir: Option<&Path>, out: &Path) -> Result<()> {
    let mut config = config.clone();
    let data = load_dataset(&config, data_dir)?;
    let prepared = prepare(&mut config, &data)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    }
    let curve = out.with_extension("loss.jsonl");
    let mut log = BufWriter::new(fs::File::create(&curve).map_err(CliError::io(&curve))?);
    let state = pretrain(&config, &prepared, Some(&mut log))?;
    log.flush().map_err(CliError::io(&curve))?;
    state.save(out, tokenizer_payload(&prepared.tokenizer))?;
    Ok(())
}

pub fn write_run_files(
    out: &Path,
    config: &ExperimentConfig,
    prepared: &Prepared,
    result: &FitResult,
    init_name: &str,
    started: u64,
) -> Result<RunManifest> {
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    write_atomic(&out.join(CONFIG_FILE), config.to_json().as_bytes())?;
    prepared
        .tokenizer
        .save(&out.join(TOKENIZER_FILE))
        .map_err(CliError::from)?;
    write_atomic(&out.join(LABELS_FILE), prepared.labels.to_json().as_bytes())?;
    let mut extra = tokenizer_payload(&prepared.tokenizer);
    extra["labels"] = serde_json::json!(prepared.labels.codes());
    result.model.save(&out.join(CHECKPOINT_FILE), extra)?;
    write_atomic(&out.join(THRESHOLD_FILE), &pretty(&result.outcome.thresholds))?;
    write_atomic(&out.join(EPOCHS_FILE), &pretty(&result.outcome.history))?;
    write_atomic(&out.join(DEV_REPORT_FILE), &pretty(&result.outcome.dev_report))?;
    write_atomic(&out.join(TEST_REPORT_FILE), &pretty(&result.test_report))?;
    let mut files: Vec<String> = [
        CONFIG_FILE,
        TOKENIZER_FILE,
        LABELS_FILE,
        CHECKPOINT_FILE,
        THRESHOLD_FILE,
        EPOCHS_FILE,
        DEV_REPORT_FILE,
        TEST_REPORT_FILE,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    if out.join(TRAIN_LOG_FILE).exists() {
        files.push(TRAIN_LOG_FILE.into());
    }
    let manifest = RunManifest {
        config: config.clone(),
        build: BuildInfo::current(),
        started_unix: started,
        finished_unix: unix_now(),
        init: init_name.into(),
        best_epoch: result.outcome.best_epoch,
        thresholds: result.outcome.thresholds.clone(),
        fragmentation_ratio: prepared.fragmentation,
        files,
        dev_report: result.outcome.dev_report.clone(),
        report: result.test_report.clone(),
    };
    write_atomic(&out.join(MANIFEST_FILE), &pretty(&manifest))?;
    Ok(manifest)
}

pub fn read_manifest(run: &Path) -> Result<RunManifest> {
    let path = run.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(CliError::io(&path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train, dev or test)")),
        }
    }
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

/// `eval` command: re-scores a split with a stored run and writes the
/// report plus a prediction dump.
pub fn run_eval(
    run: &Path,
    split: Split,
    threshold_override: Option<f64>,
    data_dir: Option<&Path>,
) -> Result<MetricsReport> {
    let config = ExperimentConfig::load(&run.join(CONFIG_FILE))?;
    let ckpt = run.join(CHECKPOINT_FILE);
    let (model, extra) = Model::<f32>::load(&ckpt)?;
    let tokenizer = tokenizer_from_extra(&extra, &ckpt)?;
    let label_path = run.join(LABELS_FILE);
    let labels = LabelSpace::from_json(&fs::read_to_string(&label_path).map_err(CliError::io(&label_path))?)
        .map_err(|e| CliError::Config(format!("{}: {e}", label_path.display())))?;
    let data = load_dataset(&config, data_dir)?;
    if data.labels.codes() != labels.codes() {
        return Err(CliError::Config("dataset label space differs from the run's".into()));
    }
    let docs = match split {
        Split::Train => &data.train,
        Split::Dev => &data.dev,
        Split::Test => &data.test,
    };
    let docs = EncodedDoc::batch(docs, &tokenizer, labels.len());
    let thr_path = run.join(THRESHOLD_FILE);
    let stored: Thresholds = serde_json::from_slice(&fs::read(&thr_path).map_err(CliError::io(&thr_path))?)
        .map_err(|e| CliError::Config(format!("{}: {e}", thr_path.display())))?;
    let (thresholds, source) = match threshold_override {
        Some(t) if (0.0..=1.0).contains(&t) => (Thresholds::Global(t), ThresholdSource::Override),
        Some(t) => return Err(CliError::Config(format!("threshold {t} outside [0, 1]"))),
        None => {
            let src = stored.source();
            (stored, src)
        }
    };
    let mut scores = Vec::with_capacity(docs.len());
    let mut dump = String::new();
    let mut attention = String::new();
    for d in &docs {
        let p = model.predict(&d.tokens)?;
        dump.push_str(
            &serde_json::json!({"id": d.id, "scores": p.probs, "gold": d.gold.ids()}).to_string(),
        );
        dump.push('\n');
        if config.eval.dump_attention {
            if let Some(a) = p.attention.first() {
                let segments = config.segmenter.segments(&d.tokens).map_err(|e| CliError::Config(e.to_string()))?;
                let positions = labelattn_core::segmenter::column_positions(&segments, config.segmenter.include_specials);
                let map = labelattn_core::heads::attention_dump(a, &positions, &labels, config.eval.attention_top_k);
                attention.push_str(&serde_json::json!({"id": d.id, "attention": map}).to_string());
                attention.push('\n');
            }
        }
        scores.push(p.probs);
    }
    let report = evaluate_docs(&docs, scores, &thresholds, source, &labels)?;
    let name = split.name();
    let suffix = if source == ThresholdSource::Override { "_override" } else { "" };
    write_atomic(&run.join(format!("eval_{name}{suffix}.json")), &pretty(&report))?;
    write_atomic(&run.join(format!("predictions_{name}.jsonl")), dump.as_bytes())?;
    if config.eval.dump_attention {
        write_atomic(&run.join(format!("attention_{name}.jsonl")), attention.as_bytes())?;
    }
    Ok(report)
}

pub fn resolve_out(explicit: Option<PathBuf>) -> Result<PathBuf> {
    explicit
        .or_else(|| std::env::var_os("LABELATTN_OUT_DIR").map(PathBuf::from))
        .ok_or_else(|| CliError::Config("no output directory: pass --out or set LABELATTN_OUT_DIR".into()))
}
