use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// ASR share for the ASR-enhanced embedding schemes.
    pub lambda_lemb: f64,
    /// ASR share for ASR-enhanced fine-tuning.
    pub w_ftlid: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_lemb: 0.1,
            w_ftlid: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        check_unit("lambda", self.lambda_lemb)?;
        check_unit("w", self.w_ftlid)
    }
}

fn check_unit(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::Range { name, value })
    }
}

/// `(1-λ)·l_lid + λ·l_asr`.
pub fn mix_loss_lemb(l_lid: f64, l_asr: f64, lambda: f64) -> Result<f64> {
    check_unit("lambda", lambda)?;
    Ok((1.0 - lambda) * l_lid + lambda * l_asr)
}

/// `(1-w)·l_lid + w·l_asr`.
pub fn mix_loss_ftlid(l_lid: f64, l_asr: f64, w: f64) -> Result<f64> {
    check_unit("w", w)?;
    Ok((1.0 - w) * l_lid + w * l_asr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_examples() {
        assert!((mix_loss_lemb(2.0, 3.0, 0.1).unwrap() - 2.1).abs() < 1e-12);
        assert!((mix_loss_ftlid(1.0, 4.0, 0.01).unwrap() - 1.03).abs() < 1e-12);
        assert_eq!(mix_loss_lemb(2.5, 7.0, 0.0).unwrap(), 2.5);
        assert_eq!(mix_loss_lemb(2.5, 7.0, 1.0).unwrap(), 7.0);
        assert_eq!(mix_loss_ftlid(0.3, 9.0, 0.0).unwrap(), 0.3);
        assert_eq!(mix_loss_ftlid(0.3, 9.0, 1.0).unwrap(), 9.0);
    }

    #[test]
    fn weights_outside_unit_interval_are_rejected() {
        assert!(matches!(
            mix_loss_lemb(1.0, 1.0, -0.1),
            Err(Error::Range { name: "lambda", .. })
        ));
        assert!(matches!(
            mix_loss_ftlid(1.0, 1.0, 1.5),
            Err(Error::Range { name: "w", .. })
        ));
        assert!(mix_loss_ftlid(1.0, 1.0, f64::NAN).is_err());
    }
}
