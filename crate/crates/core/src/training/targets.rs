//! Teacher-forced input/label pairs for the three token schemes.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{Token, TokenSequence, TokenVocabulary, ENGLISH};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeacherForcedPair {
    pub inputs: TokenSequence,
    pub labels: TokenSequence,
    /// Position whose label is the language token scored by the LID loss.
    pub lid_label_position: Option<usize>,
    /// Positions scored by the ASR loss.
    pub asr_positions: Vec<usize>,
}

impl TeacherForcedPair {
    /// `(row, label)` targets at the ASR positions.
    pub fn asr_targets(&self) -> Vec<(usize, Token)> {
        self.asr_positions.iter().map(|&i| (i, self.labels[i])).collect()
    }

    /// `(row, label)` targets at every position.
    pub fn all_targets(&self) -> Vec<(usize, Token)> {
        self.labels.iter().copied().enumerate().collect()
    }
}

/// `inputs = prompt(language) ⧺ transcript`, `labels` = inputs shifted left
/// with EOT appended.
fn shifted(
    vocab: &TokenVocabulary,
    transcript: &[Token],
    input_language: usize,
) -> Result<(TokenSequence, TokenSequence)> {
    vocab.check_transcript(transcript)?;
    let mut inputs = vocab.prompt(input_language);
    inputs.extend_from_slice(transcript);
    let mut labels = inputs[1..].to_vec();
    labels.push(vocab.eot());
    Ok((inputs, labels))
}

/// English in, English out: the language slot carries no information.
pub fn build_targets_en2en(vocab: &TokenVocabulary, transcript: &[Token]) -> Result<TeacherForcedPair> {
    let (inputs, labels) = shifted(vocab, transcript, ENGLISH)?;
    let asr_positions = (0..labels.len()).collect();
    Ok(TeacherForcedPair {
        inputs,
        labels,
        lid_label_position: None,
        asr_positions,
    })
}

/// English in, ground-truth language out at the first label.
pub fn build_targets_en2gt(
    vocab: &TokenVocabulary,
    transcript: &[Token],
    gt_language: usize,
) -> Result<TeacherForcedPair> {
    check_language(vocab, gt_language)?;
    let mut pair = build_targets_en2en(vocab, transcript)?;
    pair.labels[0] = vocab.lang(gt_language);
    Ok(pair)
}

/// Ground-truth language as both the second input and the first label.
pub fn build_targets_original(
    vocab: &TokenVocabulary,
    transcript: &[Token],
    gt_language: usize,
) -> Result<TeacherForcedPair> {
    check_language(vocab, gt_language)?;
    let (inputs, labels) = shifted(vocab, transcript, gt_language)?;
    let asr_positions = (1..labels.len()).collect();
    Ok(TeacherForcedPair {
        inputs,
        labels,
        lid_label_position: Some(0),
        asr_positions,
    })
}

fn check_language(vocab: &TokenVocabulary, language: usize) -> Result<()> {
    if language >= vocab.languages {
        return Err(crate::Error::Index {
            op: "language",
            index: language,
            len: vocab.languages,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v() -> TokenVocabulary {
        TokenVocabulary::new(64, 8).unwrap()
    }

    #[test]
    fn en2en_example() {
        let v = v();
        let p = build_targets_en2en(&v, &[1, 2]).unwrap();
        let en = v.lang(ENGLISH);
        let (task, nots, sot, eot) = (v.transcribe(), v.no_timestamps(), v.sot(), v.eot());
        assert_eq!(p.inputs, vec![sot, en, task, nots, 1, 2]);
        assert_eq!(p.labels, vec![en, task, nots, 1, 2, eot]);
        assert_eq!(p.lid_label_position, None);
        assert_eq!(p.asr_positions, (0..6).collect::<Vec<_>>());

        let p = build_targets_en2en(&v, &[]).unwrap();
        assert_eq!(p.inputs, vec![sot, en, task, nots]);
        assert_eq!(p.labels, vec![en, task, nots, eot]);
    }

    #[test]
    fn en2gt_example() {
        let v = v();
        let de = 1;
        let p = build_targets_en2gt(&v, &[7], de).unwrap();
        assert_eq!(
            p.inputs,
            vec![v.sot(), v.lang(ENGLISH), v.transcribe(), v.no_timestamps(), 7]
        );
        assert_eq!(
            p.labels,
            vec![v.lang(de), v.transcribe(), v.no_timestamps(), 7, v.eot()]
        );
        assert_eq!(
            build_targets_en2gt(&v, &[3, 9], ENGLISH).unwrap(),
            build_targets_en2en(&v, &[3, 9]).unwrap()
        );
    }

    #[test]
    fn original_example() {
        let v = v();
        let fr = 3;
        let p = build_targets_original(&v, &[3], fr).unwrap();
        assert_eq!(
            p.inputs,
            vec![v.sot(), v.lang(fr), v.transcribe(), v.no_timestamps(), 3]
        );
        assert_eq!(
            p.labels,
            vec![v.lang(fr), v.transcribe(), v.no_timestamps(), 3, v.eot()]
        );
        assert_eq!(p.lid_label_position, Some(0));
        let mut covered = p.asr_positions.clone();
        covered.push(0);
        covered.sort_unstable();
        assert_eq!(covered, (0..p.labels.len()).collect::<Vec<_>>());
    }

    #[test]
    fn special_tokens_in_transcript_are_rejected() {
        let v = v();
        assert!(matches!(
            build_targets_en2en(&v, &[1, v.sot()]),
            Err(crate::Error::Protocol(_))
        ));
        assert!(build_targets_original(&v, &[1], 8).is_err());
    }
}
