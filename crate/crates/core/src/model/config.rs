use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TokenVocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub feedforward_dim: usize,
    /// Decoder context length; the encoder accepts up to twice this many
    /// input frames.
    pub max_positions: usize,
    /// Width of the embedding head's fully-connected layers.
    pub head_dim: usize,
    pub vocabulary: TokenVocabulary,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder_layers: 2,
            decoder_layers: 2,
            d_model: 64,
            heads: 4,
            feedforward_dim: 256,
            max_positions: 448,
            head_dim: 512,
            vocabulary: TokenVocabulary {
                text_tokens: 64,
                languages: 8,
            },
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("feedforward_dim", self.feedforward_dim),
            ("max_positions", self.max_positions),
            ("head_dim", self.head_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::Config("d_model must be even for sinusoidal positions".into()));
        }
        TokenVocabulary::new(self.vocabulary.text_tokens, self.vocabulary.languages)?;
        Ok(())
    }

    pub fn languages(&self) -> usize {
        self.vocabulary.languages
    }
}
