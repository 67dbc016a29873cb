//! Per-bucket accuracy, confusion matrices and report rendering.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Utterance;
use crate::embedding_heads::{
    dec_lemb_pooled, enc_lemb_pooled, extract_embedding, head_forward, EmbeddingHead, PooledEmbedding,
    UtteranceEmbedding,
};
use crate::error::{Error, Result};
use crate::frontend::LogMelSpectrogram;
use crate::model::SpeechModel;
use crate::numerics::{argmax, parallel_map};
use crate::training::{InferencePath, TrainingScheme};

/// `100 · matches / total`.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Data("accuracy of an empty set".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(100.0 * hits as f64 / labels.len() as f64)
}

/// Scheme-appropriate inference over a fixed model.
pub struct Predictor<'m> {
    model: &'m SpeechModel,
    head: Option<EmbeddingHead>,
    path: InferencePath,
    n_linguistic: usize,
}

impl<'m> Predictor<'m> {
    pub fn new(model: &'m SpeechModel, scheme: TrainingScheme, n_linguistic: usize) -> Result<Self> {
        let path = scheme.inference_path();
        let head = match path {
            InferencePath::FirstToken => None,
            _ => Some(EmbeddingHead::from_store(&model.params).map_err(|_| {
                Error::Config(format!(
                    "scheme {scheme} needs an embedding head but the checkpoint has none"
                ))
            })?),
        };
        Ok(Self {
            model,
            head,
            path,
            n_linguistic,
        })
    }

    pub fn path(&self) -> InferencePath {
        self.path
    }

    fn pooled(&self, mel: &LogMelSpectrogram) -> Result<PooledEmbedding> {
        match self.path {
            InferencePath::EncoderHead => enc_lemb_pooled(self.model, mel),
            InferencePath::DecoderHead => dec_lemb_pooled(self.model, mel, self.n_linguistic),
            InferencePath::FirstToken => Err(Error::Config("first-token inference has no embedding".into())),
        }
    }

    pub fn posterior(&self, mel: &LogMelSpectrogram) -> Result<Vec<f64>> {
        match &self.head {
            Some(head) => head_forward(&self.pooled(mel)?, head),
            None => self.model.lid_posterior_first_token(&self.model.encode(mel)?),
        }
    }

    /// Arg-max language; ties go to the lowest index.
    pub fn predict(&self, mel: &LogMelSpectrogram) -> Result<usize> {
        Ok(argmax(&self.posterior(mel)?))
    }

    /// The head's fc1 embedding (embedding schemes only).
    pub fn embedding(&self, mel: &LogMelSpectrogram) -> Result<UtteranceEmbedding> {
        let head = self
            .head
            .as_ref()
            .ok_or_else(|| Error::Config("embedding export needs an embedding-head scheme".into()))?;
        extract_embedding(&self.pooled(mel)?, head)
    }

    pub fn accuracy_on(&self, utts: &[Utterance]) -> Result<f64> {
        let preds = parallel_map(utts, |u| self.predict(&u.features))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<usize> = utts.iter().map(|u| u.language).collect();
        accuracy(&preds, &labels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub utterance_id: String,
    pub bucket_s: f64,
    pub true_language: usize,
    pub predicted: usize,
    pub posterior: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketResult {
    pub duration_s: f64,
    pub utterance_count: usize,
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl BucketResult {
    pub fn from_predictions(duration_s: f64, languages: usize, preds: &[(usize, usize)]) -> Result<Self> {
        let mut confusion = vec![vec![0usize; languages]; languages];
        for &(t, p) in preds {
            if t >= languages || p >= languages {
                return Err(Error::Index {
                    op: "confusion",
                    index: t.max(p),
                    len: languages,
                });
            }
            confusion[t][p] += 1;
        }
        let (p, l): (Vec<usize>, Vec<usize>) = preds.iter().map(|&(t, p)| (p, t)).unzip();
        Ok(Self {
            duration_s,
            utterance_count: preds.len(),
            accuracy: accuracy(&p, &l)?,
            confusion,
        })
    }

    /// `100 · trace / total`.
    pub fn accuracy_from_confusion(&self) -> f64 {
        let total: usize = self.confusion.iter().flatten().sum();
        let trace: usize = (0..self.confusion.len()).map(|i| self.confusion[i][i]).sum();
        100.0 * trace as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub scheme: TrainingScheme,
    pub buckets: Vec<BucketResult>,
}

impl EvaluationReport {
    pub fn bucket(&self, seconds: f64) -> Option<&BucketResult> {
        self.buckets.iter().find(|b| b.duration_s == seconds)
    }

    pub fn mean_accuracy(&self) -> f64 {
        self.buckets.iter().map(|b| b.accuracy).sum::<f64>() / self.buckets.len().max(1) as f64
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn to_table(&self) -> String {
        render_table(std::slice::from_ref(self))
    }
}

fn bucket_label(seconds: f64) -> String {
    format!("{seconds}s")
}

/// Aligned accuracy table, one row per report and one column per bucket.
pub fn render_table(reports: &[EvaluationReport]) -> String {
    let mut columns: Vec<f64> = Vec::new();
    for r in reports {
        for b in &r.buckets {
            if !columns.contains(&b.duration_s) {
                columns.push(b.duration_s);
            }
        }
    }
    let name_w = reports
        .iter()
        .map(|r| r.scheme.display_name().len())
        .chain(["Method".len()])
        .max()
        .unwrap_or(6);
    let mut out = String::new();
    let _ = write!(out, "{:<name_w$}", "Method");
    for c in &columns {
        let _ = write!(out, " | {:>6}", bucket_label(*c));
    }
    let _ = writeln!(out, " | {:>6}", "mean");
    let _ = writeln!(out, "{}", "-".repeat(name_w + 9 * (columns.len() + 1)));
    for r in reports {
        let _ = write!(out, "{:<name_w$}", r.scheme.display_name());
        for c in &columns {
            match r.bucket(*c) {
                Some(b) => {
                    let _ = write!(out, " | {:>6.2}", b.accuracy);
                }
                None => {
                    let _ = write!(out, " | {:>6}", "-");
                }
            }
        }
        let _ = writeln!(out, " | {:>6.2}", r.mean_accuracy());
    }
    out
}

/// Runs inference over every bucket in order.
pub fn evaluate(
    predictor: &Predictor<'_>,
    scheme: TrainingScheme,
    buckets: &[(f64, Vec<Utterance>)],
) -> Result<(EvaluationReport, Vec<Prediction>)> {
    let languages = predictor.model.vocab().languages;
    let mut results = Vec::with_capacity(buckets.len());
    let mut predictions = Vec::new();
    for (seconds, utts) in buckets {
        if utts.is_empty() {
            return Err(Error::Data(format!("bucket {} is empty", bucket_label(*seconds))));
        }
        let posteriors = parallel_map(utts, |u| predictor.posterior(&u.features));
        let mut pairs = Vec::with_capacity(utts.len());
        for (u, posterior) in utts.iter().zip(posteriors) {
            let posterior = posterior?;
            let predicted = argmax(&posterior);
            pairs.push((u.language, predicted));
            predictions.push(Prediction {
                utterance_id: u.id.clone(),
                bucket_s: *seconds,
                true_language: u.language,
                predicted,
                posterior,
            });
        }
        results.push(BucketResult::from_predictions(*seconds, languages, &pairs)?);
    }
    Ok((
        EvaluationReport {
            scheme,
            buckets: results,
        },
        predictions,
    ))
}

/// Evaluates over `required` buckets, failing if any is absent.
pub fn evaluate_buckets(
    predictor: &Predictor<'_>,
    scheme: TrainingScheme,
    available: &[(f64, Vec<Utterance>)],
    required: &[f64],
) -> Result<(EvaluationReport, Vec<Prediction>)> {
    let mut chosen = Vec::with_capacity(required.len());
    for s in required {
        let b = available
            .iter()
            .find(|(d, _)| d == s)
            .ok_or_else(|| Error::Data(format!("missing bucket {}", bucket_label(*s))))?;
        chosen.push(b.clone());
    }
    evaluate(predictor, scheme, &chosen)
}

pub fn write_predictions_csv(path: &Path, predictions: &[Prediction]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("csv: {e}")))?;
    let languages = predictions.first().map_or(0, |p| p.posterior.len());
    let mut header = vec![
        "utterance_id".to_string(),
        "bucket_s".to_string(),
        "true_language".to_string(),
        "predicted".to_string(),
    ];
    header.extend((0..languages).map(|i| format!("p{i}")));
    w.write_record(&header).map_err(|e| Error::Data(format!("csv: {e}")))?;
    for p in predictions {
        let mut row = vec![
            p.utterance_id.clone(),
            p.bucket_s.to_string(),
            p.true_language.to_string(),
            p.predicted.to_string(),
        ];
        row.extend(p.posterior.iter().map(|v| format!("{v:e}")));
        w.write_record(&row).map_err(|e| Error::Data(format!("csv: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Two-sided `confidence` band for the accuracy (in percent) of `n` guesses
/// that are each right with probability `p`, from exact binomial quantiles.
pub fn binomial_band(n: usize, p: f64, confidence: f64) -> (f64, f64) {
    let alpha = (1.0 - confidence) / 2.0;
    // pmf by recurrence in log space, so large n does not underflow
    let q = 1.0 - p;
    let mut log_pmf = n as f64 * q.ln();
    let mut pmf = vec![log_pmf.exp(); 1];
    for k in 1..=n {
        log_pmf += ((n - k + 1) as f64 / k as f64).ln() + (p / q).ln();
        pmf.push(log_pmf.exp());
    }
    let mut cdf = 0.0;
    let mut lo = 0;
    for (k, m) in pmf.iter().enumerate() {
        cdf += m;
        if cdf >= alpha {
            lo = k;
            break;
        }
    }
    let mut tail = 0.0;
    let mut hi = n;
    for k in (0..=n).rev() {
        tail += pmf[k];
        if tail >= alpha {
            hi = k;
            break;
        }
    }
    (100.0 * lo as f64 / n as f64, 100.0 * hi as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 100.0);
        let labels: Vec<usize> = (0..80).map(|i| i % 8).collect();
        assert_eq!(accuracy(&vec![3; 80], &labels).unwrap(), 12.5);
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 0, 0]).unwrap(), 75.0);
        assert!(matches!(accuracy(&[0], &[0, 1]), Err(Error::Data(_))));
        assert!(matches!(accuracy(&[], &[]), Err(Error::Data(_))));
    }

    #[test]
    fn confusion_agrees_with_accuracy() {
        let pairs = [(0, 0), (1, 2), (2, 2), (1, 1), (0, 2)];
        let b = BucketResult::from_predictions(1.0, 3, &pairs).unwrap();
        assert_eq!(b.accuracy, 60.0);
        assert!((b.accuracy_from_confusion() - b.accuracy).abs() < 1e-12);
        assert_eq!(b.confusion[0].iter().sum::<usize>(), 2);
        assert_eq!(b.confusion.iter().flatten().sum::<usize>(), 5);
    }

    #[test]
    fn table_lists_buckets_and_rows() {
        let mk = |scheme, accs: [f64; 3]| EvaluationReport {
            scheme,
            buckets: accs
                .iter()
                .zip([1.0, 2.0, 3.0])
                .map(|(&a, d)| BucketResult {
                    duration_s: d,
                    utterance_count: 10,
                    accuracy: a,
                    confusion: vec![],
                })
                .collect(),
        };
        let t = render_table(&[
            mk(TrainingScheme::EncLemb, [50.0, 60.0, 70.0]),
            mk(TrainingScheme::DecFtlid, [80.0, 90.0, 95.5]),
        ]);
        let lines: Vec<&str> = t.lines().collect();
        assert!(lines[0].contains("1s") && lines[0].contains("3s"));
        assert!(lines[2].starts_with("Enc-LEmb"));
        assert!(lines[3].contains("95.50"));
        assert_eq!(lines[2].len(), lines[3].len());
    }

    #[test]
    fn chance_band_for_eight_languages() {
        let (lo, hi) = binomial_band(200, 0.125, 0.99);
        assert!(lo > 5.0 && lo < 12.5, "{lo}");
        assert!(hi < 20.0 && hi > 12.5, "{hi}");
        let (lo, hi) = binomial_band(10, 0.5, 0.99);
        assert!(lo <= 10.0 && hi >= 90.0);
    }
}
