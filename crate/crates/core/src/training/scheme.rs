use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The seven training recipes: two embedding pipelines, the ASR-enhanced
/// embedding variants under both token schemes, and three fine-tuning
/// recipes for the first-token posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingScheme {
    EncLemb,
    DecLemb,
    DecLembAsreEn2en,
    DecLembAsreEn2gt,
    DecFtOriginal,
    DecFtlid,
    DecFtlidAsre,
}

/// How a trained model turns an utterance into a language posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferencePath {
    EncoderHead,
    DecoderHead,
    FirstToken,
}

impl TrainingScheme {
    pub const ALL: [TrainingScheme; 7] = [
        TrainingScheme::EncLemb,
        TrainingScheme::DecLemb,
        TrainingScheme::DecLembAsreEn2en,
        TrainingScheme::DecLembAsreEn2gt,
        TrainingScheme::DecFtOriginal,
        TrainingScheme::DecFtlid,
        TrainingScheme::DecFtlidAsre,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrainingScheme::EncLemb => "enc-lemb",
            TrainingScheme::DecLemb => "dec-lemb",
            TrainingScheme::DecLembAsreEn2en => "dec-lemb-asre-en2en",
            TrainingScheme::DecLembAsreEn2gt => "dec-lemb-asre-en2gt",
            TrainingScheme::DecFtOriginal => "dec-ft-original",
            TrainingScheme::DecFtlid => "dec-ftlid",
            TrainingScheme::DecFtlidAsre => "dec-ftlid-asre",
        }
    }

    /// Row label in comparison tables.
    pub fn display_name(self) -> &'static str {
        match self {
            TrainingScheme::EncLemb => "Enc-LEmb",
            TrainingScheme::DecLemb => "Dec-LEmb",
            TrainingScheme::DecLembAsreEn2en => "Dec-LEmb-ASRe (EN2EN)",
            TrainingScheme::DecLembAsreEn2gt => "Dec-LEmb-ASRe (EN2GT)",
            TrainingScheme::DecFtOriginal => "Dec-FT (Original)",
            TrainingScheme::DecFtlid => "Dec-FTLID",
            TrainingScheme::DecFtlidAsre => "Dec-FTLID-ASRe",
        }
    }

    pub fn inference_path(self) -> InferencePath {
        match self {
            TrainingScheme::EncLemb => InferencePath::EncoderHead,
            TrainingScheme::DecLemb | TrainingScheme::DecLembAsreEn2en | TrainingScheme::DecLembAsreEn2gt => {
                InferencePath::DecoderHead
            }
            _ => InferencePath::FirstToken,
        }
    }

    pub fn uses_head(self) -> bool {
        self.inference_path() != InferencePath::FirstToken
    }
}

impl fmt::Display for TrainingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        TrainingScheme::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| {
                let names: Vec<_> = TrainingScheme::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!("unknown scheme `{s}`; expected one of {}", names.join(", ")))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for k in TrainingScheme::ALL {
            assert_eq!(k.name().parse::<TrainingScheme>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.name()));
        }
        assert_eq!(
            "DEC_FTLID_ASRE".parse::<TrainingScheme>().unwrap(),
            TrainingScheme::DecFtlidAsre
        );
        assert!("dec-lid".parse::<TrainingScheme>().is_err());
    }
}
