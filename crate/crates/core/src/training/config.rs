//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding_heads::{DEFAULT_N_LINGUISTIC, EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TokenVocabulary};
use crate::training::{LossWeights, TrainingScheme};

/// Peak learning rate for a freshly initialized desk-scale model. Both scheme
/// families diverge at 3e-3 and crawl at 1e-4.
pub const DEFAULT_LR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub scheme: TrainingScheme,
    pub lambda: f64,
    pub w: f64,
    /// Explicit peak learning rate; `None` means `DEFAULT_LR · lr_scale`.
    pub lr: Option<f64>,
    pub lr_scale: f64,
    pub lr_min_ratio: f64,
    pub cycle_epochs: usize,
    pub cycle_multiplier: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub n_linguistic: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub feedforward_dim: usize,
    pub max_positions: usize,
    pub head_dim: usize,
    /// Use at most this many training utterances per epoch (0 = all),
    /// taken language-balanced from the front of the split.
    pub train_limit: usize,
    pub init_checkpoint: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            scheme: TrainingScheme::DecFtlid,
            lambda: 0.1,
            w: 0.01,
            lr: None,
            lr_scale: 1.0,
            lr_min_ratio: 0.01,
            cycle_epochs: 1,
            cycle_multiplier: 2.0,
            epochs: 10,
            batch_size: 16,
            seed: 7,
            n_linguistic: DEFAULT_N_LINGUISTIC,
            encoder_layers: m.encoder_layers,
            decoder_layers: m.decoder_layers,
            d_model: m.d_model,
            heads: m.heads,
            feedforward_dim: m.feedforward_dim,
            max_positions: m.max_positions,
            head_dim: EMBEDDING_DIM,
            train_limit: 0,
            init_checkpoint: None,
        }
    }
}

pub const CONFIG_KEYS: [&str; 21] = [
    "scheme",
    "lambda",
    "w",
    "lr",
    "lr_scale",
    "lr_min_ratio",
    "cycle_epochs",
    "cycle_multiplier",
    "epochs",
    "batch_size",
    "seed",
    "n_linguistic",
    "encoder_layers",
    "decoder_layers",
    "d_model",
    "heads",
    "feedforward_dim",
    "max_positions",
    "head_dim",
    "train_limit",
    "init_checkpoint",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

impl TrainConfig {
    /// Sets one key. Unknown keys are rejected by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        let v = value.trim();
        match key {
            "scheme" => self.scheme = v.parse()?,
            "lambda" => self.lambda = parse(key, v)?,
            "w" => self.w = parse(key, v)?,
            "lr" => {
                self.lr = match v {
                    "" | "auto" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            "lr_scale" => self.lr_scale = parse(key, v)?,
            "lr_min_ratio" => self.lr_min_ratio = parse(key, v)?,
            "cycle_epochs" => self.cycle_epochs = parse(key, v)?,
            "cycle_multiplier" => self.cycle_multiplier = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "n_linguistic" => self.n_linguistic = parse(key, v)?,
            "encoder_layers" => self.encoder_layers = parse(key, v)?,
            "decoder_layers" => self.decoder_layers = parse(key, v)?,
            "d_model" => self.d_model = parse(key, v)?,
            "heads" => self.heads = parse(key, v)?,
            "feedforward_dim" => self.feedforward_dim = parse(key, v)?,
            "max_positions" => self.max_positions = parse(key, v)?,
            "head_dim" => self.head_dim = parse(key, v)?,
            "train_limit" => self.train_limit = parse(key, v)?,
            "init_checkpoint" => self.init_checkpoint = (!v.is_empty() && v != "none").then(|| v.to_string()),
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    /// Every key with its resolved value, one per line, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("scheme", self.scheme.to_string());
        put("lambda", self.lambda.to_string());
        put("w", self.w.to_string());
        put("lr", self.lr.map_or("auto".into(), |v| v.to_string()));
        put("lr_scale", self.lr_scale.to_string());
        put("lr_min_ratio", self.lr_min_ratio.to_string());
        put("cycle_epochs", self.cycle_epochs.to_string());
        put("cycle_multiplier", self.cycle_multiplier.to_string());
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("seed", self.seed.to_string());
        put("n_linguistic", self.n_linguistic.to_string());
        put("encoder_layers", self.encoder_layers.to_string());
        put("decoder_layers", self.decoder_layers.to_string());
        put("d_model", self.d_model.to_string());
        put("heads", self.heads.to_string());
        put("feedforward_dim", self.feedforward_dim.to_string());
        put("max_positions", self.max_positions.to_string());
        put("head_dim", self.head_dim.to_string());
        put("train_limit", self.train_limit.to_string());
        put(
            "init_checkpoint",
            self.init_checkpoint.clone().unwrap_or_else(|| "none".into()),
        );
        out
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_lemb: self.lambda,
            w_ftlid: self.w,
        }
    }

    pub fn peak_lr(&self) -> f64 {
        self.lr.unwrap_or(DEFAULT_LR * self.lr_scale)
    }

    pub fn model_config(&self, vocabulary: TokenVocabulary) -> ModelConfig {
        ModelConfig {
            encoder_layers: self.encoder_layers,
            decoder_layers: self.decoder_layers,
            d_model: self.d_model,
            heads: self.heads,
            feedforward_dim: self.feedforward_dim,
            max_positions: self.max_positions,
            head_dim: self.head_dim,
            vocabulary,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights().validate()?;
        let lr = self.peak_lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..=1.0).contains(&self.lr_min_ratio) {
            return Err(Error::Config(format!(
                "lr_min_ratio must lie in [0, 1], got {}",
                self.lr_min_ratio
            )));
        }
        if self.cycle_epochs == 0 || !(self.cycle_multiplier >= 1.0) {
            return Err(Error::Config(
                "cycle_epochs must be ≥ 1 and cycle_multiplier ≥ 1".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.n_linguistic == 0 {
            return Err(Error::Config("n_linguistic must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.apply_text("scheme = dec-ftlid-asre\nw = 0.1 # comment\n\nlr = 0.003\ninit_checkpoint = a/b.ckpt\n")
            .unwrap();
        assert_eq!(cfg.scheme, TrainingScheme::DecFtlidAsre);
        assert_eq!(cfg.w, 0.1);
        assert_eq!(cfg.lr, Some(0.003));
        let mut again = TrainConfig::default();
        again.apply_text(&cfg.to_text()).unwrap();
        assert_eq!(again, cfg);
        for key in cfg.to_text().lines().map(|l| l.split(" = ").next().unwrap()) {
            assert!(CONFIG_KEYS.contains(&key), "{key}");
        }
    }

    #[test]
    fn unknown_key_is_named() {
        let mut cfg = TrainConfig::default();
        let err = cfg.apply_text("lamda = 0.3").unwrap_err();
        assert!(err.to_string().contains("`lamda`"), "{err}");
        assert!(cfg.apply_text("epochs").is_err());
        assert!(cfg.set("epochs", "many").is_err());
    }

    #[test]
    fn explicit_rate_overrides_the_scaled_default() {
        let mut cfg = TrainConfig::default();
        assert_eq!(cfg.peak_lr(), DEFAULT_LR);
        cfg.lr_scale = 0.5;
        assert_eq!(cfg.peak_lr(), 0.5 * DEFAULT_LR);
        cfg.lr = Some(2e-4);
        assert_eq!(cfg.peak_lr(), 2e-4);
        cfg.lambda = 1.5;
        assert!(matches!(cfg.validate(), Err(Error::Range { .. })));
    }
}
