//! Synthetic multilingual corpus: per-language bigram token chains rendered
//! as log-Mel features, split into train/valid/test with 1/2/3 s test
//! buckets.

mod manifest;
mod oracle;
mod profile;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use manifest::{
    read_features, write_features, Manifest, ManifestEntry, FEATURE_MAGIC, MANIFEST_FILE, SCHEMA_VERSION,
};
pub use oracle::{nearest_template_decode, BigramOracle};
pub use profile::{make_language_profile, make_language_profiles, LanguageProfile, MIN_LANGUAGE_DISTANCE};

use crate::error::{Error, Result};
use crate::frontend::{hz_to_mel, log_mel_spectrogram, mel_to_hz, LogMelSpectrogram, Waveform, N_MELS, SAMPLE_RATE};
use crate::model::{TokenSequence, TokenVocabulary};
use crate::numerics::Tensor;

pub const TOKENS_PER_SECOND: usize = 10;
pub const FRAMES_PER_TOKEN: usize = 10;
pub const DEFAULT_BUCKETS: [f64; 3] = [1.0, 2.0, 3.0];

const STREAM_UTTERANCE: u64 = 3;
const STREAM_SPLIT: u64 = 4;

/// A ChaCha stream keyed by `(seed, purpose, index)`.
pub(crate) fn stream_rng(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 48) ^ index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Template tiling directly in log-Mel space.
    #[default]
    Direct,
    /// Tones rendered to audio and passed through the log-Mel frontend.
    Waveform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub languages: usize,
    pub per_language: usize,
    pub duration_s: f64,
    pub seed: u64,
    pub text_tokens: usize,
    /// Per-frame Gaussian noise added to templates.
    pub jitter: f64,
    /// Per-language perturbation of the shared template bank.
    pub accent: f64,
    /// Weight of the language-specific part of every bigram row.
    pub language_weight: f64,
    /// Strength in [0, 1] of each language's token preference.
    pub inventory: f64,
    /// Gamma shape for the Dirichlet-like rows; smaller is peakier.
    pub concentration: f64,
    /// Exponent applied to row weights before normalization.
    pub sharpen: f64,
    pub template_scale: f64,
    pub mode: FeatureMode,
    pub buckets: Vec<f64>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            languages: 8,
            per_language: 250,
            duration_s: 3.0,
            seed: 7,
            text_tokens: 64,
            jitter: 1.0,
            accent: 0.05,
            language_weight: 0.8,
            inventory: 0.7,
            concentration: 0.1,
            sharpen: 1.0,
            template_scale: 1.0,
            mode: FeatureMode::Direct,
            buckets: DEFAULT_BUCKETS.to_vec(),
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.languages < 2 {
            return Err(Error::Config(format!(
                "need at least 2 languages, got {}",
                self.languages
            )));
        }
        if self.per_language < 10 {
            return Err(Error::Config(format!(
                "per_language must be at least 10, got {}",
                self.per_language
            )));
        }
        if self.text_tokens < 2 {
            return Err(Error::Config("text_tokens must be at least 2".into()));
        }
        let min = 1.0 / TOKENS_PER_SECOND as f64;
        if !(self.duration_s >= min) {
            return Err(Error::TooShort(format!(
                "{} s holds no token; minimum is {min} s",
                self.duration_s
            )));
        }
        for (name, v) in [
            ("jitter", self.jitter),
            ("accent", self.accent),
            ("template_scale", self.template_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.language_weight) {
            return Err(Error::Range {
                name: "language_weight",
                value: self.language_weight,
            });
        }
        if !(0.0..=1.0).contains(&self.inventory) {
            return Err(Error::Range {
                name: "inventory",
                value: self.inventory,
            });
        }
        if !(self.concentration > 0.0 && self.sharpen > 0.0) {
            return Err(Error::Config("concentration and sharpen must be positive".into()));
        }
        if self.buckets.is_empty() || self.buckets.iter().any(|b| !(*b > 0.0) || *b > self.duration_s) {
            return Err(Error::Config(format!(
                "buckets {:?} must be positive and no longer than {} s",
                self.buckets, self.duration_s
            )));
        }
        Ok(())
    }

    pub fn vocabulary(&self) -> Result<TokenVocabulary> {
        TokenVocabulary::new(self.text_tokens, self.languages)
    }

    /// Sets one field from text; lists are comma-separated. Unknown keys are
    /// rejected by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        let value = value.trim();
        let mut map = match serde_json::to_value(&*self)? {
            serde_json::Value::Object(m) => m,
            _ => unreachable!("config serializes to an object"),
        };
        let slot = map
            .get_mut(key)
            .ok_or_else(|| Error::Config(format!("unknown corpus key `{key}`")))?;
        let bad = || Error::Config(format!("bad value `{value}` for `{key}`"));
        *slot = match slot {
            serde_json::Value::String(_) => serde_json::Value::String(value.to_string()),
            serde_json::Value::Array(_) => serde_json::Value::Array(
                value
                    .split(',')
                    .map(|v| serde_json::from_str(v.trim()).map_err(|_| bad()))
                    .collect::<Result<_>>()?,
            ),
            _ => serde_json::from_str(value).map_err(|_| bad())?,
        };
        *self = serde_json::from_value(serde_json::Value::Object(map)).map_err(|_| bad())?;
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

    /// Every field as a `key = value` line, sorted by key.
    pub fn to_text(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        for (k, v) in value.as_object().expect("object") {
            let v = match v {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Array(a) => a.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
                other => other.to_string(),
            };
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn total(&self) -> usize {
        self.languages * self.per_language
    }

    /// Train/valid/test counts per language (80/10/10, test takes the rest).
    pub fn split_counts(&self) -> (usize, usize, usize) {
        let n = self.per_language;
        let train = n * 8 / 10;
        let valid = n / 10;
        (train, valid, n - train - valid)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub language: usize,
    pub transcript: TokenSequence,
    pub features: LogMelSpectrogram,
    pub duration_s: f64,
}

/// Tokens per utterance of the given length.
pub fn tokens_for(duration_s: f64) -> usize {
    (duration_s * TOKENS_PER_SECOND as f64 + 1e-9).floor() as usize
}

/// Samples a token chain from `profile` and renders it.
pub fn synthesize_utterance(profile: &LanguageProfile, duration_s: f64, utterance_seed: u64) -> Result<Utterance> {
    synthesize_with_mode(profile, duration_s, utterance_seed, FeatureMode::Direct)
}

pub fn synthesize_with_mode(
    profile: &LanguageProfile,
    duration_s: f64,
    utterance_seed: u64,
    mode: FeatureMode,
) -> Result<Utterance> {
    let n = tokens_for(duration_s);
    if n == 0 {
        return Err(Error::TooShort(format!("{duration_s} s holds no token")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(utterance_seed);
    let mut transcript = Vec::with_capacity(n);
    let mut prev = None;
    for _ in 0..n {
        let t = profile.sample_next(prev, &mut rng);
        transcript.push(t);
        prev = Some(t);
    }
    let features = match mode {
        FeatureMode::Direct => render_direct(profile, &transcript, &mut rng)?,
        FeatureMode::Waveform => render_waveform(profile, &transcript, &mut rng)?,
    };
    Ok(Utterance {
        id: format!(
            "{}-{utterance_seed:016x}",
            TokenVocabulary::language_code(profile.language_id)
        ),
        language: profile.language_id,
        duration_s: features.duration_s(),
        transcript,
        features,
    })
}

fn render_direct<R: Rng>(profile: &LanguageProfile, transcript: &[usize], rng: &mut R) -> Result<LogMelSpectrogram> {
    let frames = transcript.len() * FRAMES_PER_TOKEN;
    let mut data = Vec::with_capacity(frames * N_MELS);
    let noise =
        (profile.template_jitter > 0.0).then(|| Normal::new(0.0, profile.template_jitter).expect("finite jitter"));
    for &t in transcript {
        let template = &profile.token_templates[t];
        for _ in 0..FRAMES_PER_TOKEN {
            match &noise {
                Some(n) => data.extend(template.iter().map(|x| x + n.sample(rng))),
                None => data.extend_from_slice(template),
            }
        }
    }
    LogMelSpectrogram::new(Tensor::new(vec![frames, N_MELS], data)?)
}

/// Each token sounds as three partials at the Mel-band centres where its
/// template peaks, plus white noise scaled by the jitter.
fn render_waveform<R: Rng>(profile: &LanguageProfile, transcript: &[usize], rng: &mut R) -> Result<LogMelSpectrogram> {
    let per_token = SAMPLE_RATE as usize / TOKENS_PER_SECOND;
    let top = hz_to_mel(8000.0);
    let centre = |band: usize| mel_to_hz(top * (band + 1) as f64 / (N_MELS + 1) as f64);
    let noise = Normal::new(0.0, 0.01 * profile.template_jitter.max(1e-6)).expect("finite jitter");
    let mut samples = Vec::with_capacity(per_token * transcript.len());
    for &t in transcript {
        let mut bands: Vec<usize> = (0..N_MELS).collect();
        let tpl = &profile.token_templates[t];
        bands.sort_by(|a, b| tpl[*b].total_cmp(&tpl[*a]));
        let freqs: Vec<f64> = bands[..3].iter().map(|&b| centre(b)).collect();
        for _ in 0..per_token {
            let k = samples.len() as f64 / SAMPLE_RATE as f64;
            let s: f64 = freqs
                .iter()
                .map(|f| 0.1 * (2.0 * std::f64::consts::PI * f * k).sin())
                .sum();
            samples.push(s + noise.sample(rng));
        }
    }
    log_mel_spectrogram(&Waveform::new(samples))
}

/// A generated corpus held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub train: Vec<Utterance>,
    pub valid: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

/// Generates every utterance and assigns balanced splits.
pub fn build_corpus(config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;
    let profiles = make_language_profiles(config)?;
    let (n_train, n_valid, _) = config.split_counts();
    let mut corpus = Corpus {
        config: config.clone(),
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    for profile in &profiles {
        let lang = profile.language_id;
        let code = TokenVocabulary::language_code(lang);
        let mut utts = Vec::with_capacity(config.per_language);
        for i in 0..config.per_language {
            let seed: u64 = stream_rng(config.seed, STREAM_UTTERANCE, (lang * config.per_language + i) as u64).gen();
            let mut u = synthesize_with_mode(profile, config.duration_s, seed, config.mode)?;
            u.id = format!("{code}-{i:04}");
            utts.push(u);
        }
        let mut order: Vec<usize> = (0..utts.len()).collect();
        order.shuffle(&mut stream_rng(config.seed, STREAM_SPLIT, lang as u64));
        let mut slots: Vec<Option<Utterance>> = utts.into_iter().map(Some).collect();
        for (rank, idx) in order.into_iter().enumerate() {
            let u = slots[idx].take().expect("each index once");
            if rank < n_train {
                corpus.train.push(u);
            } else if rank < n_train + n_valid {
                corpus.valid.push(u);
            } else {
                corpus.test.push(u);
            }
        }
    }
    for split in [&mut corpus.train, &mut corpus.valid, &mut corpus.test] {
        split.sort_by(|a, b| a.id.cmp(&b.id));
    }
    Ok(corpus)
}

impl Corpus {
    pub fn profiles(&self) -> Result<Vec<LanguageProfile>> {
        make_language_profiles(&self.config)
    }

    pub fn vocabulary(&self) -> Result<TokenVocabulary> {
        self.config.vocabulary()
    }

    /// Leading `seconds` of every test utterance; utterances that are too
    /// short are skipped.
    pub fn bucket(&self, seconds: f64) -> Vec<Utterance> {
        cut_bucket(&self.test, seconds)
    }

    pub fn buckets(&self) -> Vec<(f64, Vec<Utterance>)> {
        self.config.buckets.iter().map(|&s| (s, self.bucket(s))).collect()
    }
}

pub fn cut_bucket(utts: &[Utterance], seconds: f64) -> Vec<Utterance> {
    utts.iter()
        .filter_map(|u| {
            let features = u.features.leading(seconds).ok()?;
            let keep = tokens_for(seconds).min(u.transcript.len());
            Some(Utterance {
                id: u.id.clone(),
                language: u.language,
                transcript: u.transcript[..keep].to_vec(),
                duration_s: features.duration_s(),
                features,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests;
