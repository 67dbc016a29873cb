//! Reference classifiers that bound how much signal the corpus carries.

use crate::corpus::{Utterance, FRAMES_PER_TOKEN};
use crate::frontend::LogMelSpectrogram;
use crate::numerics::argmax;

/// Add-one-smoothed bigram language model per language, scored by
/// log-likelihood.
#[derive(Debug, Clone)]
pub struct BigramOracle {
    log_initial: Vec<Vec<f64>>,
    log_transition: Vec<Vec<Vec<f64>>>,
}

impl BigramOracle {
    pub fn fit(utts: &[Utterance], languages: usize, vocabulary: usize) -> Self {
        let mut initial = vec![vec![1.0; vocabulary]; languages];
        let mut trans = vec![vec![vec![1.0; vocabulary]; vocabulary]; languages];
        for u in utts {
            if let Some(&first) = u.transcript.first() {
                initial[u.language][first] += 1.0;
            }
            for w in u.transcript.windows(2) {
                trans[u.language][w[0]][w[1]] += 1.0;
            }
        }
        let log_norm = |row: &Vec<f64>| {
            let total: f64 = row.iter().sum();
            row.iter().map(|c| (c / total).ln()).collect::<Vec<_>>()
        };
        Self {
            log_initial: initial.iter().map(log_norm).collect(),
            log_transition: trans.iter().map(|m| m.iter().map(log_norm).collect()).collect(),
        }
    }

    pub fn scores(&self, transcript: &[usize]) -> Vec<f64> {
        (0..self.log_initial.len())
            .map(|l| {
                let mut s = transcript.first().map_or(0.0, |&t| self.log_initial[l][t]);
                for w in transcript.windows(2) {
                    s += self.log_transition[l][w[0]][w[1]];
                }
                s
            })
            .collect()
    }

    pub fn classify(&self, transcript: &[usize]) -> usize {
        argmax(&self.scores(transcript))
    }

    /// Percentage of `utts` classified correctly.
    pub fn accuracy(&self, utts: &[Utterance]) -> f64 {
        let hits = utts
            .iter()
            .filter(|u| self.classify(&u.transcript) == u.language)
            .count();
        100.0 * hits as f64 / utts.len().max(1) as f64
    }
}

/// Decodes each token span as the nearest template (Euclidean) to the span's
/// mean frame.
pub fn nearest_template_decode(features: &LogMelSpectrogram, templates: &[Vec<f64>]) -> Vec<usize> {
    let frames = features.frames();
    let spans = frames.rows() / FRAMES_PER_TOKEN;
    (0..spans)
        .map(|s| {
            let mut mean = vec![0.0; frames.cols()];
            for r in s * FRAMES_PER_TOKEN..(s + 1) * FRAMES_PER_TOKEN {
                for (m, v) in mean.iter_mut().zip(frames.row(r)) {
                    *m += v / FRAMES_PER_TOKEN as f64;
                }
            }
            let neg_dist: Vec<f64> = templates
                .iter()
                .map(|t| -t.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .collect();
            argmax(&neg_dist)
        })
        .collect()
}
