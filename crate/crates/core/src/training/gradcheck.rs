//! Finite-difference check over every parameter of a full model.

use rand::Rng;

use crate::embedding_heads::{dec_lemb_graph, enc_lemb_graph, init_head_params};
use crate::error::Result;
use crate::frontend::N_MELS;
use crate::model::{cross_kv, decode_graph, encode_graph, ModelConfig, SpeechModel};
use crate::numerics::{gradcheck, GradcheckReport, Graph, Tensor};
use crate::training::build_targets_original;

/// Central-difference step used by [`model_gradcheck`].
pub const GRADCHECK_EPSILON: f64 = 1e-3;

/// Builds a model of shape `config` plus an embedding head, and checks the
/// gradient of a loss touching every parameter: first-token LID and
/// teacher-forced ASR cross-entropy, plus head cross-entropy on both the
/// pooled encoder states and the pooled decoder states.
pub fn model_gradcheck<R: Rng + ?Sized>(config: ModelConfig, frames: usize, rng: &mut R) -> Result<GradcheckReport> {
    let mut model = SpeechModel::new(config, rng)?;
    init_head_params(
        &mut model.params,
        2 * config.d_model,
        config.head_dim,
        config.vocabulary.languages,
        rng,
    );
    let mel = Tensor::randn(&[frames, N_MELS], 1.0, rng);
    let vocab = config.vocabulary;
    let language = rng.gen_range(0..vocab.languages);
    let transcript: Vec<usize> = (0..4).map(|_| rng.gen_range(0..vocab.text_tokens)).collect();
    let pair = build_targets_original(&vocab, &transcript, language)?;
    let range = vocab.language_range();
    let loss = |g: &mut Graph<'_>| {
        let enc = encode_graph(g, &config, &mel)?;
        let cross = cross_kv(g, &config, enc)?;
        let (logits, _) = decode_graph(g, &config, &cross, &pair.inputs)?;
        let first = g.tape.slice_rows(logits, 0, 1)?;
        let lang = g.tape.slice_cols(first, range.start, range.end)?;
        let l_lid = g.tape.cross_entropy(lang, &[(0, language)])?;
        let l_asr = g.tape.cross_entropy(logits, &pair.asr_targets())?;
        let dec_head = dec_lemb_graph(g, &config, &cross, &pair.inputs)?;
        let l_dec = g.tape.cross_entropy(dec_head.logits, &[(0, language)])?;
        let enc_head = enc_lemb_graph(g, &config, &mel)?;
        let l_enc = g.tape.cross_entropy(enc_head.logits, &[(0, language)])?;
        Ok(g.tape
            .weighted_sum(&[(l_lid, 0.4), (l_asr, 0.3), (l_dec, 0.2), (l_enc, 0.1)]))
    };
    gradcheck(loss, &model.params, GRADCHECK_EPSILON, rng)
}
