//! Per-scheme loss graphs and the batched optimizer step.

use serde::{Deserialize, Serialize};

use crate::corpus::Utterance;
use crate::embedding_heads::{dec_lemb_graph, enc_lemb_graph};
use crate::error::{Error, Result};
use crate::model::{cross_kv, decode_graph, encode_graph, EncoderOutput, SpeechModel, ENGLISH};
use crate::numerics::{adam_step, parallel_map, AdamConfig, AdamState, Gradients, Graph, Var};
use crate::training::{
    build_targets_en2en, build_targets_en2gt, build_targets_original, mix_loss_ftlid, mix_loss_lemb, LossWeights,
    TrainingScheme,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingStepReport {
    pub step: u64,
    pub l_lid: f64,
    pub l_asr: f64,
    pub l_total: f64,
    pub lr: f64,
}

/// One utterance's loss graph.
#[derive(Debug, Clone, Copy)]
pub struct SampleLoss {
    pub total: Var,
    pub l_lid: f64,
    pub l_asr: f64,
}

/// The reported total for a scheme given its two component losses.
pub fn scheme_total(scheme: TrainingScheme, weights: &LossWeights, l_lid: f64, l_asr: f64) -> Result<f64> {
    match scheme {
        TrainingScheme::EncLemb | TrainingScheme::DecLemb => Ok(l_lid),
        TrainingScheme::DecLembAsreEn2en | TrainingScheme::DecLembAsreEn2gt => {
            mix_loss_lemb(l_lid, l_asr, weights.lambda_lemb)
        }
        TrainingScheme::DecFtOriginal => Ok(l_asr),
        TrainingScheme::DecFtlid => mix_loss_ftlid(l_lid, l_asr, 0.0),
        TrainingScheme::DecFtlidAsre => mix_loss_ftlid(l_lid, l_asr, weights.w_ftlid),
    }
}

fn check_sample(model: &SpeechModel, scheme: TrainingScheme, utt: &Utterance) -> Result<()> {
    let vocab = model.vocab();
    if utt.language >= vocab.languages {
        return Err(Error::Data(format!(
            "{}: language {} outside the model's {} languages",
            utt.id, utt.language, vocab.languages
        )));
    }
    if scheme.uses_head() && model.params.by_name("head.out.w").is_none() {
        return Err(Error::Protocol(format!(
            "scheme {scheme} needs an embedding head but the model has none"
        )));
    }
    Ok(())
}

/// Builds the loss graph for one utterance under `scheme`.
///
/// The component values are the unweighted losses; `total` carries the
/// scheme's mixing weights so that a zero weight contributes no gradient.
pub fn sample_loss(
    g: &mut Graph<'_>,
    model: &SpeechModel,
    scheme: TrainingScheme,
    weights: &LossWeights,
    n_linguistic: usize,
    utt: &Utterance,
) -> Result<SampleLoss> {
    check_sample(model, scheme, utt)?;
    let cfg = &model.config;
    let vocab = model.vocab();
    let mel = utt.features.frames();
    let lang = utt.language;
    match scheme {
        TrainingScheme::EncLemb => {
            let head = enc_lemb_graph(g, cfg, mel)?;
            let l = g.tape.cross_entropy(head.logits, &[(0, lang)])?;
            Ok(SampleLoss {
                total: l,
                l_lid: g.tape.scalar(l),
                l_asr: 0.0,
            })
        }
        TrainingScheme::DecLemb | TrainingScheme::DecLembAsreEn2en | TrainingScheme::DecLembAsreEn2gt => {
            let enc = encode_graph(g, cfg, mel)?;
            let states = EncoderOutput {
                states: g.tape.value(enc).clone(),
            };
            let rollout = model.rollout(&states, &vocab.prompt(ENGLISH), n_linguistic, true)?;
            let cross = cross_kv(g, cfg, enc)?;
            let head = dec_lemb_graph(g, cfg, &cross, &rollout.tokens)?;
            let l_lid = g.tape.cross_entropy(head.logits, &[(0, lang)])?;
            if scheme == TrainingScheme::DecLemb {
                return Ok(SampleLoss {
                    total: l_lid,
                    l_lid: g.tape.scalar(l_lid),
                    l_asr: 0.0,
                });
            }
            let pair = if scheme == TrainingScheme::DecLembAsreEn2en {
                build_targets_en2en(vocab, &utt.transcript)?
            } else {
                build_targets_en2gt(vocab, &utt.transcript, lang)?
            };
            let (logits, _) = decode_graph(g, cfg, &cross, &pair.inputs)?;
            let l_asr = g.tape.cross_entropy(logits, &pair.asr_targets())?;
            let lambda = weights.lambda_lemb;
            let total = g.tape.weighted_sum(&[(l_lid, 1.0 - lambda), (l_asr, lambda)]);
            Ok(SampleLoss {
                total,
                l_lid: g.tape.scalar(l_lid),
                l_asr: g.tape.scalar(l_asr),
            })
        }
        TrainingScheme::DecFtOriginal | TrainingScheme::DecFtlid | TrainingScheme::DecFtlidAsre => {
            let pair = build_targets_original(vocab, &utt.transcript, lang)?;
            let enc = encode_graph(g, cfg, mel)?;
            let cross = cross_kv(g, cfg, enc)?;
            let (logits, _) = decode_graph(g, cfg, &cross, &pair.inputs)?;
            let first = g.tape.slice_rows(logits, 0, 1)?;
            let range = vocab.language_range();
            let lang_logits = g.tape.slice_cols(first, range.start, range.end)?;
            let l_lid = g.tape.cross_entropy(lang_logits, &[(0, lang)])?;
            match scheme {
                TrainingScheme::DecFtOriginal => {
                    let l_full = g.tape.cross_entropy(logits, &pair.all_targets())?;
                    Ok(SampleLoss {
                        total: l_full,
                        l_lid: g.tape.scalar(l_lid),
                        l_asr: g.tape.scalar(l_full),
                    })
                }
                TrainingScheme::DecFtlid => {
                    let total = g.tape.weighted_sum(&[(l_lid, 1.0)]);
                    Ok(SampleLoss {
                        total,
                        l_lid: g.tape.scalar(l_lid),
                        l_asr: 0.0,
                    })
                }
                _ => {
                    let l_asr = g.tape.cross_entropy(logits, &pair.asr_targets())?;
                    let w = weights.w_ftlid;
                    let total = g.tape.weighted_sum(&[(l_lid, 1.0 - w), (l_asr, w)]);
                    Ok(SampleLoss {
                        total,
                        l_lid: g.tape.scalar(l_lid),
                        l_asr: g.tape.scalar(l_asr),
                    })
                }
            }
        }
    }
}

/// Batch-mean gradients and batch-mean component losses.
pub fn batch_gradients(
    model: &SpeechModel,
    scheme: TrainingScheme,
    weights: &LossWeights,
    n_linguistic: usize,
    batch: &[&Utterance],
) -> Result<(Gradients, f64, f64)> {
    weights.validate()?;
    if batch.is_empty() {
        return Err(Error::Data("empty training batch".into()));
    }
    let seed = 1.0 / batch.len() as f64;
    let one = |utt: &Utterance| -> Result<(Gradients, f64, f64)> {
        let mut g = Graph::new(&model.params);
        let s = sample_loss(&mut g, model, scheme, weights, n_linguistic, utt)?;
        if !g.tape.scalar(s.total).is_finite() {
            return Err(Error::Numeric { op: "training loss" });
        }
        let mut grads = Gradients::new(model.params.len());
        g.backward_into(s.total, seed, &mut grads);
        Ok((grads, s.l_lid, s.l_asr))
    };
    // per-sample results are reduced in batch order
    let per_sample = parallel_map(batch, |u| one(u));
    let mut grads = Gradients::new(model.params.len());
    let (mut l_lid, mut l_asr) = (0.0, 0.0);
    for r in per_sample {
        let (g, lid, asr) = r?;
        grads.merge(&g);
        l_lid += lid * seed;
        l_asr += asr * seed;
    }
    Ok((grads, l_lid, l_asr))
}

/// Computes the batch loss, back-propagates and applies one Adam update.
#[allow(clippy::too_many_arguments)]
pub fn training_step(
    model: &mut SpeechModel,
    adam: &mut AdamState,
    scheme: TrainingScheme,
    weights: &LossWeights,
    n_linguistic: usize,
    batch: &[&Utterance],
    lr: f64,
    step: u64,
) -> Result<TrainingStepReport> {
    let (grads, l_lid, l_asr) = batch_gradients(model, scheme, weights, n_linguistic, batch)?;
    if !grads.global_norm().is_finite() {
        return Err(Error::Numeric { op: "gradient" });
    }
    adam_step(&mut model.params, &grads, adam, lr, &AdamConfig::default())?;
    Ok(TrainingStepReport {
        step,
        l_lid,
        l_asr,
        l_total: scheme_total(scheme, weights, l_lid, l_asr)?,
        lr,
    })
}
