use crate::manifest::{beside, RunManifest};
use crate::{Breakdown, EvaluateArgs, GensynthArgs, ImportArgs, PredictArgs, TrainArgs};
use anyhow::{bail, Context, Result};
use rolelink::checkpoint::{Checkpoint, CheckpointError};
use rolelink::config::{ConfigError, ModelConfig};
use rolelink::corpus::{
    generate_synthetic, import_rams as read_rams, load_jsonl, save_jsonl, CorpusError, Document, RamsError,
    SynthConfig, SynthError,
};
use rolelink::decoder::{read_predictions, write_predictions, DecodeError, Decoding};
use rolelink::encoder::{vocabulary, ContextualDir, ContextualSource, NoContextual, WordVectors};
use rolelink::evaluation::{evaluate as score_report, role_similarity, similarity_csv, ReportOptions};
use rolelink::model::Model;
use rolelink::ontology::{Ontology, OntologyError};
use rolelink::pipeline::{predict as run_predict, PredictError};
use rolelink::training::{train as run_train, TrainError};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

/// A problem with the invocation or its inputs rather than with the run.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

/// 2 for usage and validation errors, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        let validation = cause.is::<Invalid>()
            || matches!(cause.downcast_ref::<ConfigError>(), Some(e) if !matches!(e, ConfigError::Io(_)))
            || matches!(cause.downcast_ref::<OntologyError>(), Some(e) if !matches!(e, OntologyError::Io(_)))
            || matches!(cause.downcast_ref::<CorpusError>(), Some(e) if !matches!(e, CorpusError::Io(_)))
            || matches!(cause.downcast_ref::<RamsError>(), Some(e) if !matches!(e, RamsError::Io(_)))
            || cause.is::<SynthError>()
            || matches!(
                cause.downcast_ref::<CheckpointError>(),
                Some(CheckpointError::RoleMapMismatch { .. } | CheckpointError::BadMagic | CheckpointError::Version { .. })
            );
        if validation {
            return 2;
        }
    }
    1
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(invalid(format!("{what} `{}` does not exist", path.display())));
    }
    Ok(())
}

fn load_ontology(path: &Path) -> Result<Ontology> {
    require_file(path, "ontology")?;
    Ontology::load(path).with_context(|| format!("loading ontology {}", path.display()))
}

fn load_corpus(path: &Path, ontology: Option<&Ontology>, what: &str) -> Result<Vec<Document>> {
    require_file(path, what)?;
    load_jsonl(path, ontology).with_context(|| format!("loading {what} {}", path.display()))
}

fn contextual_source(dir: Option<&Path>) -> Result<Box<dyn ContextualSource>> {
    match dir {
        Some(d) if !d.is_dir() => Err(invalid(format!("contextual directory `{}` does not exist", d.display()))),
        Some(d) => Ok(Box::new(ContextualDir(d.to_path_buf()))),
        None => Ok(Box::new(NoContextual)),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn resolve_config(base: ModelConfig, file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<ModelConfig> {
    let mut cfg = base;
    if let Some(path) = file {
        require_file(path, "config")?;
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg = cfg.merge_toml_str(&text).with_context(|| format!("in config {}", path.display()))?;
    }
    for o in overrides {
        let (key, value) = o
            .split_once('=')
            .ok_or_else(|| invalid(format!("--set expects KEY=VALUE, got `{o}`")))?;
        cfg = cfg
            .with_override(key.trim(), value.trim())
            .with_context(|| format!("in --set {o}"))?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut manifest = RunManifest::start();
    manifest.phase("load");
    let ontology = load_ontology(&args.ontology)?;
    let train_docs = load_corpus(&args.data, Some(&ontology), "training corpus")?;
    let dev_docs = load_corpus(&args.dev, Some(&ontology), "dev corpus")?;
    let ctx = contextual_source(args.contextual_dir.as_deref())?;
    manifest.input("ontology", &args.ontology)?;
    manifest.input("data", &args.data)?;
    manifest.input("dev", &args.dev)?;
    if let Some(dir) = &args.contextual_dir {
        manifest.input_dir("contextual", dir)?;
    }
    let vocab = vocabulary(train_docs.iter().chain(&dev_docs));

    let model = match &args.init_checkpoint {
        Some(path) => {
            require_file(path, "initial checkpoint")?;
            manifest.input("init_checkpoint", path)?;
            let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            ck.check_roles(&ontology)?;
            let cfg = resolve_config(ck.manifest.config.clone(), args.config.as_deref(), &args.overrides, args.seed)?;
            let mut model = ck.into_model(ck.load_word_vectors(Some(&vocab))?)?;
            model.set_training_options(&cfg)?;
            if model.config() != &cfg {
                return Err(invalid(
                    "fine-tuning cannot change architecture options (sizes, layers, filters, word vectors, contextual layers)",
                ));
            }
            model
        }
        None => {
            let cfg = resolve_config(ModelConfig::default(), args.config.as_deref(), &args.overrides, args.seed)?;
            let words = match &cfg.word_vectors {
                Some(p) => {
                    require_file(Path::new(p), "word vectors")?;
                    manifest.input("word_vectors", Path::new(p))?;
                    Some(Arc::new(WordVectors::load(p, Some(&vocab))?))
                }
                None => None,
            };
            Model::new(cfg, ontology, words)?
        }
    };
    manifest.config(model.config())?;
    manifest.seed = Some(model.config().seed);

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    manifest.phase("train");
    let mut log = create(&args.out.join("training_log.jsonl"))?;
    let mut log_err = None;
    let outcome = run_train(model, &train_docs, &dev_docs, ctx.as_ref(), args.jobs, &mut |r| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  dev F1 {:6.2}{}",
            r.epoch,
            r.mean_loss,
            r.dev_f1,
            if r.improved { "  *" } else { "" }
        );
        if let Err(e) = serde_json::to_writer(&mut log, r).map_err(std::io::Error::from).and_then(|_| log.write_all(b"\n")) {
            log_err.get_or_insert(e);
        }
    })
    .map_err(|e| match e {
        TrainError::NoTrainingData | TrainError::NoDevData => invalid(e.to_string()),
        other => other.into(),
    })?;
    if let Some(e) = log_err {
        return Err(e).context("writing training log");
    }
    log.flush()?;
    for s in &outcome.skipped {
        eprintln!("skipped {s}");
    }

    manifest.phase("save");
    let ck = Checkpoint::from_model(&outcome.model, outcome.best_dev_f1, outcome.best_epoch, outcome.history);
    let ck_path = args.out.join("model.ckpt");
    ck.save(&ck_path).with_context(|| format!("writing {}", ck_path.display()))?;
    eprintln!(
        "best dev F1 {:.2} at epoch {}; wrote {}",
        outcome.best_dev_f1,
        outcome.best_epoch,
        ck_path.display()
    );
    manifest.finish(&args.out.join("manifest.json"))
}

pub fn predict(args: PredictArgs) -> Result<()> {
    let mut manifest = RunManifest::start();
    manifest.phase("load");
    require_file(&args.model, "model checkpoint")?;
    let ck = Checkpoint::load(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let ontology = ck.ontology()?;
    let docs = load_corpus(&args.data, Some(&ontology), "corpus")?;
    let decoding: Decoding = args.decoding.into();
    if decoding == Decoding::Tcd {
        if let Some((d, e)) = docs
            .iter()
            .flat_map(|d| d.events.iter().map(move |e| (d, e)))
            .find(|(_, e)| e.gold_type.is_none())
        {
            return Err(invalid(format!(
                "type-constrained decoding needs event types; event `{}` in `{}` has none",
                e.event_id, d.doc_id
            )));
        }
    }
    let ctx = contextual_source(args.contextual_dir.as_deref())?;
    manifest.input("model", &args.model)?;
    manifest.input("data", &args.data)?;
    if let Some(dir) = &args.contextual_dir {
        manifest.input_dir("contextual", dir)?;
    }
    let words = ck.load_word_vectors(Some(&vocabulary(&docs)))?;
    let model = ck.into_model(words)?;
    manifest.config(serde_json::json!({ "model": model.config(), "decoding": decoding.to_string() }))?;
    manifest.seed = Some(model.config().seed);

    manifest.phase("predict");
    let preds = run_predict(&model, &docs, ctx.as_ref(), decoding, args.jobs).map_err(|e| match e {
        PredictError::Decode(d @ DecodeError::MissingType(_)) => invalid(d.to_string()),
        other => other.into(),
    })?;
    let mut out = create(&args.out)?;
    write_predictions(&preds, &mut out)?;
    out.flush()?;
    eprintln!("wrote {} predictions to {}", preds.len(), args.out.display());
    manifest.finish(&beside(&args.out))
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let mut manifest = RunManifest::start();
    manifest.phase("load");
    require_file(&args.pred, "predictions")?;
    let preds = read_predictions(BufReader::new(File::open(&args.pred)?))
        .map_err(|e| invalid(format!("{}: {e}", args.pred.display())))?;
    let docs = load_corpus(&args.gold, None, "gold corpus")?;
    manifest.input("pred", &args.pred)?;
    manifest.input("gold", &args.gold)?;

    manifest.phase("score");
    let options = ReportOptions {
        distance: matches!(args.breakdown, Some(Breakdown::Distance)),
        confusion: args.confusion.is_some(),
        string_match: args.string_match,
    };
    let report = score_report(&preds, &docs, options).map_err(|e| invalid(e.to_string()))?;
    if let (Some(path), Some(c)) = (&args.confusion, &report.confusion) {
        let mut f = create(path)?;
        f.write_all(c.matrix.to_csv().as_bytes())?;
        f.flush()?;
    }
    if let Some(path) = &args.similarity {
        let model_path = args.model.as_deref().expect("clap requires --model");
        require_file(model_path, "model checkpoint")?;
        manifest.input("model", model_path)?;
        let ck = Checkpoint::load(model_path)?;
        let words = ck.load_word_vectors(Some(&vocabulary(&docs)))?;
        let model = ck.into_model(words)?;
        let table = model.params().get(model.linker().role_embedding);
        let csv = similarity_csv(model.ontology().roles(), &role_similarity(table));
        let mut f = create(path)?;
        f.write_all(csv.as_bytes())?;
        f.flush()?;
    }
    manifest.config(serde_json::json!({
        "breakdown": options.distance.then_some("distance"),
        "confusion": options.confusion,
        "string_match": options.string_match,
    }))?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match &args.out {
        Some(path) => {
            let mut f = create(path)?;
            f.write_all(text.as_bytes())?;
            f.flush()?;
            eprintln!(
                "P {:.2}  R {:.2}  F1 {:.2}",
                report.overall.prf.precision, report.overall.prf.recall, report.overall.prf.f1
            );
            manifest.finish(&beside(path))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn gensynth(args: GensynthArgs) -> Result<()> {
    let mut manifest = RunManifest::start();
    let mut cfg = match &args.config {
        Some(path) => {
            require_file(path, "generator config")?;
            manifest.input("config", path)?;
            let text = std::fs::read_to_string(path)?;
            toml_config(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => SynthConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.dev_docs >= cfg.n_docs && args.dev_docs > 0 {
        bail!(invalid(format!(
            "--dev-docs {} leaves no training documents out of {}",
            args.dev_docs, cfg.n_docs
        )));
    }
    manifest.config(&cfg)?;
    manifest.seed = Some(cfg.seed);
    manifest.phase("generate");
    let corpus = generate_synthetic(&cfg)?;
    let split = corpus.documents.len() - args.dev_docs;
    let (train_docs, dev_docs) = corpus.documents.split_at(split);
    save_jsonl(train_docs, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    if let Some(dev_out) = &args.dev_out {
        save_jsonl(dev_docs, dev_out).with_context(|| format!("writing {}", dev_out.display()))?;
    }
    if let Some(path) = &args.ontology_out {
        std::fs::write(path, corpus.ontology.to_tsv()).with_context(|| format!("writing {}", path.display()))?;
    }
    eprintln!(
        "wrote {} training and {} dev documents",
        train_docs.len(),
        dev_docs.len()
    );
    manifest.finish(&beside(&args.out))
}

fn toml_config(text: &str) -> Result<SynthConfig> {
    let cfg: SynthConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn import_rams(args: ImportArgs) -> Result<()> {
    let mut manifest = RunManifest::start();
    let ontology = load_ontology(&args.ontology)?;
    require_file(&args.input, "RAMS file")?;
    manifest.input("input", &args.input)?;
    manifest.input("ontology", &args.ontology)?;
    manifest.phase("import");
    let docs = read_rams(&args.input, &ontology)?;
    save_jsonl(&docs, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    eprintln!("imported {} documents", docs.len());
    manifest.finish(&beside(&args.out))
}
