use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use declid::backend::{Backend, DEFAULT_L2, DEFAULT_LDA_DIM};
use declid::corpus::{build_corpus, BigramOracle, Corpus, CorpusConfig, FeatureMode, Utterance};
use declid::embedding_heads::{read_embeddings_csv, write_embeddings_csv, EmbeddingRecord};
use declid::evaluation::{accuracy, evaluate_buckets, render_table, write_predictions_csv, EvaluationReport};
use declid::model::ModelConfig;
use declid::numerics::argmax;
use declid::training::{model_gradcheck, train, write_log, TrainConfig, TrainedModel, TrainingScheme};

#[derive(Parser)]
#[command(
    name = "declid",
    version,
    about = "Spoken language identification from decoder-generative representations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Root directory for run outputs.
    #[arg(long, default_value = "runs")]
    output_dir: PathBuf,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Name of the run subdirectory (default: command plus a config hash).
    #[arg(long)]
    run_id: Option<String>,
}

#[derive(Args, Clone, Default)]
struct TrainFlags {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    w: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_scale: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_linguistic: Option<usize>,
    #[arg(long)]
    train_limit: Option<usize>,
    #[arg(long)]
    init_checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and its manifest.
    CorpusGen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        languages: Option<usize>,
        #[arg(long = "per-lang")]
        per_lang: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long, value_parser = ["direct", "waveform"])]
        mode: Option<String>,
    },
    /// Train one scheme and keep the best-validation checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        scheme: Option<String>,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Evaluate a checkpoint on the test duration buckets.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Buckets to score (default: those listed in the manifest).
        #[arg(long, value_delimiter = ',')]
        buckets: Vec<f64>,
    },
    /// Export head embeddings for every split and test bucket as CSV.
    EmbedExport {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Fit LDA + length normalization + logistic regression on embeddings.
    BackendFit {
        #[command(flatten)]
        common: Common,
        /// Training embeddings CSV.
        #[arg(long)]
        train: PathBuf,
        /// Embeddings CSVs to score with the fitted back-end (repeatable).
        #[arg(long)]
        test: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_LDA_DIM)]
        lda_dim: usize,
        #[arg(long, default_value_t = DEFAULT_L2)]
        l2: f64,
    },
    /// Finite-difference check of every gradient of the full model.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Input frames for the check.
        #[arg(long, default_value_t = 24)]
        frames: usize,
        #[arg(long, default_value_t = 1e-4)]
        threshold: f64,
    },
    /// Train and evaluate several schemes under one configuration.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Schemes to compare (default: all).
        #[arg(long, value_delimiter = ',')]
        schemes: Vec<String>,
        #[command(flatten)]
        flags: TrainFlags,
    },
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// The resolved configuration of a run plus the digests of its inputs.
struct RunSpec {
    command: &'static str,
    config_text: String,
    inputs: BTreeMap<String, (PathBuf, String)>,
}

impl RunSpec {
    fn new(command: &'static str, config_text: String) -> Self {
        Self {
            command,
            config_text,
            inputs: BTreeMap::new(),
        }
    }

    fn input(&mut self, name: &str, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.inputs.insert(name.to_string(), (path.to_path_buf(), digest));
        Ok(())
    }

    fn snapshot(&self) -> String {
        let mut s = format!("# command: {}\n", self.command);
        for (name, (path, digest)) in &self.inputs {
            s.push_str(&format!("# input {name}: {} sha256={digest}\n", path.display()));
        }
        s.push_str(&self.config_text);
        s
    }

    fn run_dir(&self, common: &Common) -> Result<PathBuf> {
        let id = match &common.run_id {
            Some(id) => id.clone(),
            None => {
                let digest = hex::encode(Sha256::digest(self.snapshot().as_bytes()));
                format!("{}-{}", self.command, &digest[..12])
            }
        };
        let dir = common.output_dir.join(id);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join("config.txt"), self.snapshot())?;
        Ok(dir)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn split_override(kv: &str) -> Result<(&str, &str)> {
    kv.split_once('=')
        .with_context(|| format!("override `{kv}` is not of the form KEY=VALUE"))
}

fn resolve_train_config(common: &Common, scheme: Option<&str>, flags: &TrainFlags) -> Result<TrainConfig> {
    let mut cfg = match &common.config {
        Some(p) => TrainConfig::from_file(p).with_context(|| format!("reading {}", p.display()))?,
        None => TrainConfig::default(),
    };
    let mut set = |k: &str, v: Option<String>| -> Result<()> {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
        Ok(())
    };
    set("scheme", scheme.map(str::to_string))?;
    set("lambda", flags.lambda.map(|v| v.to_string()))?;
    set("w", flags.w.map(|v| v.to_string()))?;
    set("lr", flags.lr.map(|v| v.to_string()))?;
    set("lr_scale", flags.lr_scale.map(|v| v.to_string()))?;
    set("epochs", flags.epochs.map(|v| v.to_string()))?;
    set("batch_size", flags.batch_size.map(|v| v.to_string()))?;
    set("seed", flags.seed.map(|v| v.to_string()))?;
    set("n_linguistic", flags.n_linguistic.map(|v| v.to_string()))?;
    set("train_limit", flags.train_limit.map(|v| v.to_string()))?;
    set(
        "init_checkpoint",
        flags.init_checkpoint.as_ref().map(|p| p.display().to_string()),
    )?;
    for kv in &common.overrides {
        let (k, v) = split_override(kv)?;
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_training(cfg: &TrainConfig, corpus: &Corpus, dir: &Path) -> Result<(TrainedModel, serde_json::Value)> {
    let init = match &cfg.init_checkpoint {
        Some(p) => Some(TrainedModel::load(Path::new(p))?.model),
        None => None,
    };
    let out = train(cfg, corpus, init)?;
    fs::create_dir_all(dir)?;
    let ckpt = dir.join("model.ckpt");
    out.checkpoint.save(&ckpt)?;
    write_log(&dir.join("train_log.ndjson"), &out.log)?;
    let summary = json!({
        "scheme": cfg.scheme,
        "checkpoint": "model.ckpt",
        "best_epoch": out.checkpoint.header.epoch,
        "best_val_acc": out.checkpoint.header.val_acc,
        "steps": out.log.len(),
        "epochs": out.epochs,
    });
    Ok((out.checkpoint, summary))
}

fn cmd_corpus_gen(
    common: &Common,
    languages: Option<usize>,
    per_lang: Option<usize>,
    seed: Option<u64>,
    duration: Option<f64>,
    mode: Option<String>,
) -> Result<()> {
    let mut cfg = CorpusConfig::default();
    if let Some(p) = &common.config {
        cfg.apply_text(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?;
    }
    if let Some(v) = languages {
        cfg.languages = v;
    }
    if let Some(v) = per_lang {
        cfg.per_language = v;
    }
    if let Some(v) = seed {
        cfg.seed = v;
    }
    if let Some(v) = duration {
        cfg.duration_s = v;
    }
    if let Some(m) = mode {
        cfg.mode = if m == "waveform" {
            FeatureMode::Waveform
        } else {
            FeatureMode::Direct
        };
    }
    for kv in &common.overrides {
        let (k, v) = split_override(kv)?;
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    let spec = RunSpec::new("corpus-gen", cfg.to_text());
    let dir = spec.run_dir(common)?;
    let corpus = build_corpus(&cfg)?;
    let manifest = corpus.write(&dir)?;
    let oracle = BigramOracle::fit(&corpus.train, cfg.languages, cfg.text_tokens);
    let ceiling: BTreeMap<String, f64> = corpus
        .buckets()
        .iter()
        .map(|(s, u)| (format!("{s}s"), oracle.accuracy(u)))
        .collect();
    write_json(
        &dir.join("summary.json"),
        &json!({
            "command": "corpus-gen",
            "manifest": "manifest.json",
            "utterances": cfg.total(),
            "train": corpus.train.len(),
            "valid": corpus.valid.len(),
            "test": corpus.test.len(),
            "transcript_oracle_accuracy": ceiling,
        }),
    )?;
    println!("{}", manifest.display());
    Ok(())
}

fn cmd_train(common: &Common, manifest: &Path, scheme: Option<&str>, flags: &TrainFlags) -> Result<()> {
    let cfg = resolve_train_config(common, scheme, flags)?;
    let mut spec = RunSpec::new("train", cfg.to_text());
    spec.input("manifest", manifest)?;
    if let Some(p) = &cfg.init_checkpoint {
        spec.input("init_checkpoint", Path::new(p))?;
    }
    let corpus = Corpus::load(manifest)?;
    let dir = spec.run_dir(common)?;
    let (ckpt, mut summary) = run_training(&cfg, &corpus, &dir)?;
    summary["command"] = json!("train");
    write_json(&dir.join("summary.json"), &summary)?;
    println!(
        "{} best epoch {} val acc {}",
        dir.join("model.ckpt").display(),
        ckpt.header.epoch,
        ckpt.header.val_acc.map_or("n/a".into(), |v| format!("{v:.2}"))
    );
    Ok(())
}

fn selected_buckets(corpus: &Corpus, requested: &[f64]) -> Vec<f64> {
    if requested.is_empty() {
        corpus.config.buckets.clone()
    } else {
        requested.to_vec()
    }
}

fn cmd_eval(common: &Common, checkpoint: &Path, manifest: &Path, buckets: &[f64]) -> Result<()> {
    let trained = TrainedModel::load(checkpoint)?;
    let corpus = Corpus::load(manifest)?;
    let buckets = selected_buckets(&corpus, buckets);
    let text = format!(
        "buckets = {}\n",
        buckets.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(",")
    );
    let mut spec = RunSpec::new("eval", text);
    spec.input("checkpoint", checkpoint)?;
    spec.input("manifest", manifest)?;
    let dir = spec.run_dir(common)?;
    let predictor = trained.predictor()?;
    let (report, predictions) = evaluate_buckets(&predictor, trained.header.scheme, &corpus.buckets(), &buckets)?;
    fs::write(dir.join("report.json"), report.to_json()?)?;
    fs::write(dir.join("report.txt"), report.to_table())?;
    write_predictions_csv(&dir.join("predictions.csv"), &predictions)?;
    write_json(
        &dir.join("summary.json"),
        &json!({
            "command": "eval",
            "scheme": report.scheme,
            "accuracy": report.buckets.iter().map(|b| (format!("{}s", b.duration_s), b.accuracy)).collect::<BTreeMap<_, _>>(),
            "mean_accuracy": report.mean_accuracy(),
            "report": dir.join("report.json"),
        }),
    )?;
    print!("{}", report.to_table());
    Ok(())
}

fn export_split(predictor: &declid::evaluation::Predictor<'_>, utts: &[Utterance], path: &Path) -> Result<usize> {
    let records = utts
        .iter()
        .map(|u| {
            Ok(EmbeddingRecord {
                utterance_id: u.id.clone(),
                true_language: u.language,
                embedding: predictor.embedding(&u.features)?,
            })
        })
        .collect::<declid::Result<Vec<_>>>()?;
    write_embeddings_csv(path, &records)?;
    Ok(records.len())
}

fn cmd_embed_export(common: &Common, checkpoint: &Path, manifest: &Path) -> Result<()> {
    let trained = TrainedModel::load(checkpoint)?;
    let corpus = Corpus::load(manifest)?;
    let mut spec = RunSpec::new("embed-export", String::new());
    spec.input("checkpoint", checkpoint)?;
    spec.input("manifest", manifest)?;
    let dir = spec.run_dir(common)?;
    let predictor = trained.predictor()?;
    let mut files = BTreeMap::new();
    for (name, utts) in [("train", &corpus.train), ("valid", &corpus.valid)] {
        let path = dir.join(format!("embeddings_{name}.csv"));
        files.insert(
            name.to_string(),
            json!({"path": path, "rows": export_split(&predictor, utts, &path)?}),
        );
    }
    for (seconds, utts) in corpus.buckets() {
        let name = format!("test_{seconds}s");
        let path = dir.join(format!("embeddings_{name}.csv"));
        files.insert(
            name,
            json!({"path": path, "rows": export_split(&predictor, &utts, &path)?}),
        );
    }
    write_json(
        &dir.join("summary.json"),
        &json!({"command": "embed-export", "scheme": trained.header.scheme, "files": files}),
    )?;
    println!("{}", dir.display());
    Ok(())
}

fn rows(records: &[EmbeddingRecord]) -> (Vec<Vec<f64>>, Vec<usize>) {
    records
        .iter()
        .map(|r| (r.embedding.values.clone(), r.true_language))
        .unzip()
}

fn cmd_backend_fit(common: &Common, train_csv: &Path, tests: &[PathBuf], lda_dim: usize, l2: f64) -> Result<()> {
    let mut spec = RunSpec::new("backend-fit", format!("lda_dim = {lda_dim}\nl2 = {l2}\n"));
    spec.input("train", train_csv)?;
    for (i, t) in tests.iter().enumerate() {
        spec.input(&format!("test{i}"), t)?;
    }
    let dir = spec.run_dir(common)?;
    let train_records = read_embeddings_csv(train_csv)?;
    let (x, y) = rows(&train_records);
    let classes = y.iter().max().map_or(0, |m| m + 1);
    let backend = Backend::fit(&x, &y, classes, lda_dim, l2)?;
    backend.save(&dir.join("backend.json"))?;
    let mut scores = BTreeMap::new();
    for t in tests {
        let (tx, ty) = rows(&read_embeddings_csv(t)?);
        let preds = tx
            .iter()
            .map(|v| backend.posterior(v).map(|p| argmax(&p)))
            .collect::<declid::Result<Vec<_>>>()?;
        let acc = accuracy(&preds, &ty)?;
        println!("{}: {acc:.2}", t.display());
        scores.insert(t.display().to_string(), acc);
    }
    if !backend.converged {
        eprintln!("warning: logistic regression stopped at the iteration cap");
    }
    write_json(
        &dir.join("summary.json"),
        &json!({
            "command": "backend-fit",
            "backend": dir.join("backend.json"),
            "converged": backend.converged,
            "iterations": backend.iterations,
            "accuracy": scores,
        }),
    )?;
    Ok(())
}

fn cmd_gradcheck(common: &Common, seed: u64, frames: usize, threshold: f64) -> Result<bool> {
    let spec = RunSpec::new(
        "gradcheck",
        format!("seed = {seed}\nframes = {frames}\nthreshold = {threshold}\n"),
    );
    let dir = spec.run_dir(common)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let report = model_gradcheck(ModelConfig::default(), frames, &mut rng)?;
    let pass = report.max_relative_error < threshold;
    write_json(
        &dir.join("summary.json"),
        &json!({
            "command": "gradcheck",
            "max_relative_error": report.max_relative_error,
            "worst_parameter": report.worst_parameter,
            "worst_values": report.worst_values,
            "checked": report.checked,
            "threshold": threshold,
            "pass": pass,
        }),
    )?;
    println!(
        "max relative error {:.3e} over {} entries ({})",
        report.max_relative_error,
        report.checked,
        if pass { "ok" } else { "FAIL" }
    );
    Ok(pass)
}

fn cmd_compare(common: &Common, manifest: &Path, schemes: &[String], flags: &TrainFlags) -> Result<()> {
    let schemes: Vec<TrainingScheme> = if schemes.is_empty() {
        TrainingScheme::ALL.to_vec()
    } else {
        schemes.iter().map(|s| s.parse()).collect::<declid::Result<_>>()?
    };
    let base = resolve_train_config(common, None, flags)?;
    let list = schemes.iter().map(|s| s.name()).collect::<Vec<_>>().join(",");
    let mut spec = RunSpec::new("compare", format!("schemes = {list}\n{}", base.to_text()));
    spec.input("manifest", manifest)?;
    let corpus = Corpus::load(manifest)?;
    let dir = spec.run_dir(common)?;
    let mut reports: Vec<EvaluationReport> = Vec::new();
    let mut runs = Vec::new();
    for scheme in &schemes {
        let cfg = TrainConfig {
            scheme: *scheme,
            ..base.clone()
        };
        let sub = dir.join(scheme.name());
        let (ckpt, summary) = run_training(&cfg, &corpus, &sub)?;
        let (report, predictions) =
            evaluate_buckets(&ckpt.predictor()?, *scheme, &corpus.buckets(), &corpus.config.buckets)?;
        fs::write(sub.join("report.json"), report.to_json()?)?;
        write_predictions_csv(&sub.join("predictions.csv"), &predictions)?;
        eprintln!("{}: mean accuracy {:.2}", scheme.display_name(), report.mean_accuracy());
        runs.push(summary);
        reports.push(report);
    }
    let table = render_table(&reports);
    fs::write(dir.join("table.txt"), &table)?;
    write_json(&dir.join("compare.json"), &reports)?;
    write_json(
        &dir.join("summary.json"),
        &json!({"command": "compare", "runs": runs, "table": dir.join("table.txt")}),
    )?;
    print!("{table}");
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::CorpusGen {
            common,
            languages,
            per_lang,
            seed,
            duration,
            mode,
        } => cmd_corpus_gen(&common, languages, per_lang, seed, duration, mode)?,
        Command::Train {
            common,
            manifest,
            scheme,
            flags,
        } => cmd_train(&common, &manifest, scheme.as_deref(), &flags)?,
        Command::Eval {
            common,
            checkpoint,
            manifest,
            buckets,
        } => cmd_eval(&common, &checkpoint, &manifest, &buckets)?,
        Command::EmbedExport {
            common,
            checkpoint,
            manifest,
        } => cmd_embed_export(&common, &checkpoint, &manifest)?,
        Command::BackendFit {
            common,
            train,
            test,
            lda_dim,
            l2,
        } => cmd_backend_fit(&common, &train, &test, lda_dim, l2)?,
        Command::Gradcheck {
            common,
            seed,
            frames,
            threshold,
        } => return cmd_gradcheck(&common, seed, frames, threshold),
        Command::Compare {
            common,
            manifest,
            schemes,
            flags,
        } => cmd_compare(&common, &manifest, &schemes, &flags)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
