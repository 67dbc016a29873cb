//! Miniature Whisper-style encoder-decoder: encoding, teacher-forced
//! decoding, greedy generative rollout and the first-token language
//! posterior.

mod checkpoint;
mod config;
mod transformer;
mod vocab;

use rand::Rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use transformer::{cross_kv, decode_graph, encode_graph, init_model_params, sinusoids, CrossKv};
pub use vocab::{Token, TokenSequence, TokenVocabulary, ENGLISH, LANGUAGE_CODES};

use crate::error::{Error, Result};
use crate::frontend::LogMelSpectrogram;
use crate::numerics::{argmax, softmax_in_place, Graph, ParamStore, Tensor};

/// Encoder states, `ceil(T/2) × d_model`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub states: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    /// `prefix_len × vocabulary`.
    pub logits: Tensor,
    /// `prefix_len × d_model`, pre-projection.
    pub hiddens: Tensor,
}

/// Tokens and per-position hidden states produced by greedy decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderRollout {
    pub tokens: TokenSequence,
    /// One row per decoder position (`U × d_model`).
    pub hiddens: Tensor,
    pub prompt_length: usize,
    /// Full logit rows that chose each generated token, in order.
    pub step_logits: Vec<Vec<f64>>,
    pub ended_with_eot: bool,
}

impl DecoderRollout {
    /// Hidden states at generated-token positions.
    pub fn linguistic_states(&self) -> usize {
        self.hiddens.rows() - self.prompt_length
    }

    /// True when decoding stopped before the requested number of states.
    pub fn is_short(&self, n_linguistic: usize) -> bool {
        self.linguistic_states() < n_linguistic
    }
}

/// Model configuration plus a parameter store (which may also hold an
/// embedding head under `head.*`).
#[derive(Debug, Clone, PartialEq)]
pub struct SpeechModel {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl SpeechModel {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = init_model_params(&config, rng);
        Ok(Self { config, params })
    }

    pub fn vocab(&self) -> &TokenVocabulary {
        &self.config.vocabulary
    }

    pub fn encode(&self, mel: &LogMelSpectrogram) -> Result<EncoderOutput> {
        let mut g = Graph::new(&self.params);
        let enc = encode_graph(&mut g, &self.config, mel.frames())?;
        Ok(EncoderOutput {
            states: g.tape.value(enc).clone(),
        })
    }

    pub fn decode_step(&self, enc: &EncoderOutput, prefix: &[Token]) -> Result<DecodeOutput> {
        let mut g = Graph::new(&self.params);
        let e = g.tape.constant(enc.states.clone());
        let cross = cross_kv(&mut g, &self.config, e)?;
        let (logits, hiddens) = decode_graph(&mut g, &self.config, &cross, prefix)?;
        Ok(DecodeOutput {
            logits: g.tape.value(logits).clone(),
            hiddens: g.tape.value(hiddens).clone(),
        })
    }

    /// Greedy decoding from `prompt` until `n_linguistic` hidden states
    /// exist past the prompt, EOT is chosen, or the context is full.
    pub fn generative_rollout(
        &self,
        enc: &EncoderOutput,
        prompt: &[Token],
        n_linguistic: usize,
    ) -> Result<DecoderRollout> {
        self.rollout(enc, prompt, n_linguistic, false)
    }

    /// As [`Self::generative_rollout`], optionally barring EOT as the first
    /// generated token.
    pub fn rollout(
        &self,
        enc: &EncoderOutput,
        prompt: &[Token],
        n_linguistic: usize,
        suppress_initial_eot: bool,
    ) -> Result<DecoderRollout> {
        let eot = self.vocab().eot();
        let mut g = Graph::new(&self.params);
        let e = g.tape.constant(enc.states.clone());
        let cross = cross_kv(&mut g, &self.config, e)?;
        let mut tokens = prompt.to_vec();
        let mut step_logits = Vec::new();
        loop {
            let (logits, hiddens) = decode_graph(&mut g, &self.config, &cross, &tokens)?;
            let done = tokens.len() - prompt.len() >= n_linguistic || tokens.len() >= self.config.max_positions;
            if done {
                return Ok(DecoderRollout {
                    tokens,
                    hiddens: g.tape.value(hiddens).clone(),
                    prompt_length: prompt.len(),
                    step_logits,
                    ended_with_eot: false,
                });
            }
            let logits = g.tape.value(logits);
            let mut row = logits.row(logits.rows() - 1).to_vec();
            step_logits.push(row.clone());
            if suppress_initial_eot && tokens.len() == prompt.len() {
                row[eot] = f64::NEG_INFINITY;
            }
            let next = argmax(&row);
            if next == eot {
                return Ok(DecoderRollout {
                    tokens,
                    hiddens: g.tape.value(hiddens).clone(),
                    prompt_length: prompt.len(),
                    step_logits,
                    ended_with_eot: true,
                });
            }
            tokens.push(next);
        }
    }

    /// `p(language | x)` from one decode step on `[SOT]`, restricted to the
    /// language tokens and renormalized.
    pub fn lid_posterior_first_token(&self, enc: &EncoderOutput) -> Result<Vec<f64>> {
        let out = self.decode_step(enc, &[self.vocab().sot()])?;
        let mut p = out.logits.row(0)[self.vocab().language_range()].to_vec();
        softmax_in_place(&mut p);
        Ok(p)
    }

    pub fn check_compatible(&self, other: &ModelConfig) -> Result<()> {
        if &self.config != other {
            return Err(Error::Config("model configuration mismatch".into()));
        }
        Ok(())
    }
}
