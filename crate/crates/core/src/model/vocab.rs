use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Token = usize;
pub type TokenSequence = Vec<Token>;

/// Display codes for the first eight languages; index 0 plays the role of
/// English in the fixed-language prompt schemes.
pub const LANGUAGE_CODES: [&str; 8] = ["en", "de", "nl", "fr", "es", "it", "pt", "pl"];

pub const ENGLISH: usize = 0;

/// Token id layout: text tokens first, then EOT, SOT, one token per language
/// (contiguous), the transcribe task token and the no-timestamps token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenVocabulary {
    pub text_tokens: usize,
    pub languages: usize,
}

impl TokenVocabulary {
    pub fn new(text_tokens: usize, languages: usize) -> Result<Self> {
        if languages < 2 {
            return Err(Error::Config(format!("need at least 2 languages, got {languages}")));
        }
        if text_tokens == 0 {
            return Err(Error::Config("empty text vocabulary".into()));
        }
        Ok(Self { text_tokens, languages })
    }

    pub fn eot(&self) -> Token {
        self.text_tokens
    }

    pub fn sot(&self) -> Token {
        self.text_tokens + 1
    }

    pub fn lang(&self, language: usize) -> Token {
        debug_assert!(language < self.languages);
        self.text_tokens + 2 + language
    }

    pub fn transcribe(&self) -> Token {
        self.text_tokens + 2 + self.languages
    }

    pub fn no_timestamps(&self) -> Token {
        self.text_tokens + 3 + self.languages
    }

    pub fn size(&self) -> usize {
        self.text_tokens + 4 + self.languages
    }

    /// Half-open id range of the language tokens.
    pub fn language_range(&self) -> std::ops::Range<Token> {
        self.lang(0)..self.lang(0) + self.languages
    }

    pub fn is_text(&self, t: Token) -> bool {
        t < self.text_tokens
    }

    pub fn language_of(&self, t: Token) -> Option<usize> {
        self.language_range().contains(&t).then(|| t - self.lang(0))
    }

    /// `[SOT, LANG(language), TRANSCRIBE, NO_TIMESTAMPS]`.
    pub fn prompt(&self, language: usize) -> TokenSequence {
        vec![self.sot(), self.lang(language), self.transcribe(), self.no_timestamps()]
    }

    pub fn language_code(language: usize) -> String {
        LANGUAGE_CODES
            .get(language)
            .map_or_else(|| format!("l{language}"), |c| c.to_string())
    }

    pub fn check_transcript(&self, transcript: &[Token]) -> Result<()> {
        match transcript.iter().find(|t| !self.is_text(**t)) {
            Some(t) => Err(Error::Protocol(format!("non-text token {t} inside transcript"))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_distinct_and_languages_contiguous() {
        let v = TokenVocabulary::new(64, 8).unwrap();
        let mut ids = vec![v.eot(), v.sot(), v.transcribe(), v.no_timestamps()];
        ids.extend(v.language_range());
        ids.extend(0..64);
        let n = ids.len();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), n);
        assert_eq!(n, v.size());
        assert_eq!(v.language_of(v.lang(5)), Some(5));
        assert_eq!(v.language_of(v.sot()), None);
        assert!(TokenVocabulary::new(64, 1).is_err());
    }
}
