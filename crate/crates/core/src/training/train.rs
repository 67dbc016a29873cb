//! Epoch loop, checkpoints and the training log.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{stream_rng, Corpus, Utterance};
use crate::embedding_heads::init_head_params;
use crate::error::{Error, Result};
use crate::evaluation::Predictor;
use crate::model::{load_checkpoint, save_checkpoint, ModelConfig, SpeechModel, TokenVocabulary};
use crate::numerics::{AdamState, ParamStore, WarmRestartSchedule};
use crate::training::{training_step, TrainConfig, TrainingScheme, TrainingStepReport};

const STREAM_INIT: u64 = 10;
const STREAM_HEAD: u64 = 11;
const STREAM_SHUFFLE: u64 = 12;

/// JSON header stored in front of the tensors of a trained checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub scheme: TrainingScheme,
    pub n_linguistic: usize,
    pub has_head: bool,
    /// Epoch whose parameters were kept (0 = initialization).
    pub epoch: usize,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub header: CheckpointHeader,
    pub model: SpeechModel,
}

impl TrainedModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.header, &self.model.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, params) = load_checkpoint(path)?;
        let header: CheckpointHeader = serde_json::from_value(header)?;
        header.model.validate()?;
        let model = SpeechModel {
            config: header.model,
            params,
        };
        Ok(Self { header, model })
    }

    pub fn predictor(&self) -> Result<Predictor<'_>> {
        Predictor::new(&self.model, self.header.scheme, self.header.n_linguistic)
    }
}

/// One line of the NDJSON training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub epoch: usize,
    pub scheme: TrainingScheme,
    pub l_lid: f64,
    pub l_asr: f64,
    pub l_total: f64,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_acc: Option<f64>,
}

impl LogRecord {
    fn new(r: &TrainingStepReport, epoch: usize, scheme: TrainingScheme) -> Self {
        Self {
            step: r.step,
            epoch,
            scheme,
            l_lid: r.l_lid,
            l_asr: r.l_asr,
            l_total: r.l_total,
            lr: r.lr,
            val_acc: None,
        }
    }
}

pub fn write_log(path: &Path, log: &[LogRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in log {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_l_total: f64,
    pub val_acc: f64,
}

/// Fresh model for `cfg`, with an embedding head when the scheme needs one.
pub fn init_model(cfg: &TrainConfig, vocabulary: TokenVocabulary) -> Result<SpeechModel> {
    let mut model = SpeechModel::new(cfg.model_config(vocabulary), &mut stream_rng(cfg.seed, STREAM_INIT, 0))?;
    ensure_head(&mut model, cfg);
    Ok(model)
}

fn ensure_head(model: &mut SpeechModel, cfg: &TrainConfig) {
    if cfg.scheme.uses_head() && model.params.by_name("head.fc1.w").is_none() {
        let c = model.config;
        init_head_params(
            &mut model.params,
            2 * c.d_model,
            c.head_dim,
            c.vocabulary.languages,
            &mut stream_rng(cfg.seed, STREAM_HEAD, 0),
        );
    }
}

/// Up to `limit` utterances, interleaving languages so every language gets
/// an equal share.
pub fn balanced_subset(utts: &[Utterance], limit: usize) -> Vec<&Utterance> {
    if limit == 0 || limit >= utts.len() {
        return utts.iter().collect();
    }
    let languages = utts.iter().map(|u| u.language + 1).max().unwrap_or(0);
    let mut queues: Vec<Vec<&Utterance>> = vec![Vec::new(); languages];
    for u in utts {
        queues[u.language].push(u);
    }
    let mut out = Vec::with_capacity(limit);
    let mut i = 0;
    while out.len() < limit {
        for q in &queues {
            if let Some(u) = q.get(i) {
                if out.len() < limit {
                    out.push(*u);
                }
            }
        }
        i += 1;
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}

/// Owns the parameters and optimizer state for one training run.
pub struct Trainer<'c> {
    cfg: TrainConfig,
    train: Vec<&'c Utterance>,
    valid: &'c [Utterance],
    model: SpeechModel,
    adam: AdamState,
    schedule: WarmRestartSchedule,
    step: u64,
    epoch: usize,
    best: Option<(f64, usize, ParamStore)>,
    log: Vec<LogRecord>,
    epochs: Vec<EpochSummary>,
}

impl<'c> Trainer<'c> {
    /// `init` replaces the fresh seeded initialization (e.g. a checkpoint).
    pub fn new(cfg: &TrainConfig, corpus: &'c Corpus, init: Option<SpeechModel>) -> Result<Self> {
        cfg.validate()?;
        if corpus.train.is_empty() || corpus.valid.is_empty() {
            return Err(Error::Data("training needs non-empty train and valid splits".into()));
        }
        let vocab = corpus.vocabulary()?;
        let model = match init {
            Some(mut m) => {
                if m.config.vocabulary != vocab {
                    return Err(Error::Config(
                        "initial checkpoint vocabulary does not match the corpus".into(),
                    ));
                }
                ensure_head(&mut m, cfg);
                m
            }
            None => init_model(cfg, vocab)?,
        };
        let train = balanced_subset(&corpus.train, cfg.train_limit);
        let steps_per_epoch = train.len().div_ceil(cfg.batch_size) as u64;
        let lr = cfg.peak_lr();
        let schedule = WarmRestartSchedule {
            lr_max: lr,
            lr_min: lr * cfg.lr_min_ratio,
            cycle_length: cfg.cycle_epochs as u64 * steps_per_epoch,
            cycle_multiplier: cfg.cycle_multiplier,
        };
        schedule.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            train,
            valid: &corpus.valid,
            adam: AdamState::new(&model.params),
            model,
            schedule,
            step: 0,
            epoch: 0,
            best: None,
            log: Vec::new(),
            epochs: Vec::new(),
        })
    }

    pub fn model(&self) -> &SpeechModel {
        &self.model
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn validation_accuracy(&self) -> Result<f64> {
        Predictor::new(&self.model, self.cfg.scheme, self.cfg.n_linguistic)?.accuracy_on(self.valid)
    }

    /// One pass over the (shuffled) training set followed by validation.
    pub fn run_epoch(&mut self) -> Result<EpochSummary> {
        self.epoch += 1;
        let mut order = self.train.clone();
        order.shuffle(&mut stream_rng(self.cfg.seed, STREAM_SHUFFLE, self.epoch as u64));
        let weights = self.cfg.weights();
        let mut total = 0.0;
        let batches = order.chunks(self.cfg.batch_size);
        let n_batches = batches.len();
        for batch in batches {
            let lr = self.schedule.lr(self.step);
            let report = training_step(
                &mut self.model,
                &mut self.adam,
                self.cfg.scheme,
                &weights,
                self.cfg.n_linguistic,
                batch,
                lr,
                self.step,
            )?;
            total += report.l_total;
            self.log.push(LogRecord::new(&report, self.epoch, self.cfg.scheme));
            self.step += 1;
        }
        let val_acc = self.validation_accuracy()?;
        if let Some(last) = self.log.last_mut() {
            last.val_acc = Some(val_acc);
        }
        if self.best.as_ref().is_none_or(|(acc, _, _)| val_acc > *acc) {
            self.best = Some((val_acc, self.epoch, self.model.params.clone()));
        }
        let summary = EpochSummary {
            epoch: self.epoch,
            mean_l_total: total / n_batches as f64,
            val_acc,
        };
        self.epochs.push(summary);
        Ok(summary)
    }

    /// The best-validation parameters (or the initialization when no epoch
    /// ran), the full log and per-epoch summaries.
    pub fn finish(self) -> TrainOutcome {
        let (val_acc, epoch, params) = match self.best {
            Some((acc, epoch, params)) => (Some(acc), epoch, params),
            None => (None, 0, self.model.params),
        };
        let config = self.model.config;
        TrainOutcome {
            checkpoint: TrainedModel {
                header: CheckpointHeader {
                    model: config,
                    scheme: self.cfg.scheme,
                    n_linguistic: self.cfg.n_linguistic,
                    has_head: params.by_name("head.fc1.w").is_some(),
                    epoch,
                    val_acc,
                },
                model: SpeechModel { config, params },
            },
            log: self.log,
            epochs: self.epochs,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: TrainedModel,
    pub log: Vec<LogRecord>,
    pub epochs: Vec<EpochSummary>,
}

/// Runs `cfg.epochs` epochs and keeps the best-validation parameters.
pub fn train(cfg: &TrainConfig, corpus: &Corpus, init: Option<SpeechModel>) -> Result<TrainOutcome> {
    let mut t = Trainer::new(cfg, corpus, init)?;
    for _ in 0..cfg.epochs {
        t.run_epoch()?;
    }
    Ok(t.finish())
}
