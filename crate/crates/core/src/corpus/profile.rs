use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{stream_rng, CorpusConfig};
use crate::frontend::N_MELS;

/// Minimum mean row total-variation distance between any two languages.
pub const MIN_LANGUAGE_DISTANCE: f64 = 0.1;

const STREAM_SHARED: u64 = 1;
const STREAM_LANGUAGE: u64 = 2;

/// Gamma shape of the per-language token preference.
const INVENTORY_SHAPE: f64 = 0.5;

/// Generative model of one synthetic language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageProfile {
    pub language_id: usize,
    /// First-token distribution.
    pub initial: Vec<f64>,
    /// `V × V` row-stochastic bigram matrix.
    pub transition_matrix: Vec<Vec<f64>>,
    /// `V × 80` log-Mel template per text token.
    pub token_templates: Vec<Vec<f64>>,
    pub template_jitter: f64,
}

impl LanguageProfile {
    /// Mean over rows of the total-variation distance between transition rows.
    pub fn total_variation(&self, other: &LanguageProfile) -> f64 {
        let rows = self.transition_matrix.len();
        self.transition_matrix
            .iter()
            .zip(&other.transition_matrix)
            .map(|(a, b)| 0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
            .sum::<f64>()
            / rows as f64
    }

    pub fn vocabulary(&self) -> usize {
        self.initial.len()
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, prev: Option<usize>, rng: &mut R) -> usize {
        let row = match prev {
            Some(p) => &self.transition_matrix[p],
            None => &self.initial,
        };
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (t, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return t;
            }
        }
        row.len() - 1
    }
}

/// Structure common to all languages: a bigram chain and a template bank.
struct SharedBank {
    initial: Vec<f64>,
    transitions: Vec<Vec<f64>>,
    templates: Vec<Vec<f64>>,
}

fn sharpened_row<R: Rng + ?Sized>(v: usize, concentration: f64, sharpen: f64, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("positive concentration");
    let mut row: Vec<f64> = (0..v).map(|_| gamma.sample(rng).powf(sharpen)).collect();
    let total: f64 = row.iter().sum();
    if total > 0.0 && total.is_finite() {
        row.iter_mut().for_each(|x| *x /= total);
    } else {
        row = vec![1.0 / v as f64; v];
    }
    row
}

fn shared_bank(cfg: &CorpusConfig) -> SharedBank {
    let v = cfg.text_tokens;
    let mut rng = stream_rng(cfg.seed, STREAM_SHARED, 0);
    let initial = sharpened_row(v, cfg.concentration, cfg.sharpen, &mut rng);
    let transitions = (0..v)
        .map(|_| sharpened_row(v, cfg.concentration, cfg.sharpen, &mut rng))
        .collect();
    let templates = (0..v)
        .map(|_| {
            (0..N_MELS)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    cfg.template_scale * z
                })
                .collect()
        })
        .collect();
    SharedBank {
        initial,
        transitions,
        templates,
    }
}

fn mix(shared: &[f64], own: &[f64], weight: f64) -> Vec<f64> {
    let mut row: Vec<f64> = shared
        .iter()
        .zip(own)
        .map(|(s, o)| (1.0 - weight) * s + weight * o)
        .collect();
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x /= total);
    row
}

fn draw_profile(cfg: &CorpusConfig, bank: &SharedBank, language_id: usize, attempt: u64) -> LanguageProfile {
    let v = cfg.text_tokens;
    let mut rng: ChaCha8Rng = stream_rng(cfg.seed, STREAM_LANGUAGE, ((language_id as u64) << 16) | attempt);
    // Token inventory: a per-language preference over the vocabulary that
    // tilts every language-specific row, so unigram statistics differ too.
    let preference: Vec<f64> = sharpened_row(v, INVENTORY_SHAPE, 1.0, &mut rng)
        .into_iter()
        .map(|p| 1.0 - cfg.inventory + cfg.inventory * v as f64 * p)
        .collect();
    let own_row = |rng: &mut ChaCha8Rng| {
        let row = sharpened_row(v, cfg.concentration, cfg.sharpen, rng);
        let tilted: Vec<f64> = row.iter().zip(&preference).map(|(r, p)| r * p).collect();
        let total: f64 = tilted.iter().sum();
        if total > 0.0 {
            tilted.into_iter().map(|x| x / total).collect()
        } else {
            row
        }
    };
    let own_initial = own_row(&mut rng);
    let initial = mix(&bank.initial, &own_initial, cfg.language_weight);
    let transition_matrix = bank
        .transitions
        .iter()
        .map(|shared| mix(shared, &own_row(&mut rng), cfg.language_weight))
        .collect();
    let token_templates = bank
        .templates
        .iter()
        .map(|t| {
            t.iter()
                .map(|x| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x + cfg.accent * z
                })
                .collect()
        })
        .collect();
    LanguageProfile {
        language_id,
        initial,
        transition_matrix,
        token_templates,
        template_jitter: cfg.jitter,
    }
}

/// Deterministic profile for `language_id` under `cfg.seed`.
pub fn make_language_profile(cfg: &CorpusConfig, language_id: usize) -> LanguageProfile {
    draw_profile(cfg, &shared_bank(cfg), language_id, 0)
}

/// Profiles for every language, redrawing any language whose transitions
/// sit closer than [`MIN_LANGUAGE_DISTANCE`] to an earlier one.
pub fn make_language_profiles(cfg: &CorpusConfig) -> crate::Result<Vec<LanguageProfile>> {
    const MAX_ATTEMPTS: u64 = 64;
    let bank = shared_bank(cfg);
    let mut out: Vec<LanguageProfile> = Vec::with_capacity(cfg.languages);
    for id in 0..cfg.languages {
        let mut accepted = None;
        for attempt in 0..MAX_ATTEMPTS {
            let p = draw_profile(cfg, &bank, id, attempt);
            if out.iter().all(|q| q.total_variation(&p) > MIN_LANGUAGE_DISTANCE) {
                accepted = Some(p);
                break;
            }
        }
        out.push(accepted.ok_or_else(|| {
            crate::Error::Config(format!(
                "could not draw language {id} at least {MIN_LANGUAGE_DISTANCE} away from the others; \
                 raise language_weight"
            ))
        })?);
    }
    Ok(out)
}
