use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Gradients, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    step_count: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[Tensor] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Tensor] {
        &self.second_moment
    }
}

/// One bias-corrected Adam update.
///
/// Parameter tensors whose gradient is absent or identically zero are left
/// untouched, moments included, so a zero gradient never moves a parameter.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if state.first_moment.len() != params.len() || grads.len() > params.len() {
        return Err(Error::dims(
            "adam_step",
            &[params.len()],
            &[state.first_moment.len(), grads.len()],
        ));
    }
    for id in params.ids() {
        if let Some(g) = grads.get(id) {
            if g.shape() != params.get(id).shape() {
                return Err(Error::dims("adam_step", params.get(id).shape(), g.shape()));
            }
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for id in params.ids() {
        let Some(g) = grads.get(id) else { continue };
        if g.data().iter().all(|v| *v == 0.0) {
            continue;
        }
        let m = state.first_moment[id.0].data_mut();
        let v = state.second_moment[id.0].data_mut();
        let p = params.get_mut(id).data_mut();
        for i in 0..p.len() {
            let gi = g.data()[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Cosine annealing with warm restarts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarmRestartSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub cycle_length: u64,
    pub cycle_multiplier: f64,
}

impl WarmRestartSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr_max > 0.0
            && self.lr_min >= 0.0
            && self.lr_min <= self.lr_max
            && self.cycle_length > 0
            && self.cycle_multiplier >= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid warm-restart schedule {self:?}")))
        }
    }

    pub fn lr(&self, step: u64) -> f64 {
        cosine_warm_restart_lr(step, self)
    }
}

pub fn cosine_warm_restart_lr(step: u64, sched: &WarmRestartSchedule) -> f64 {
    let mut offset = step;
    let mut cycle = sched.cycle_length.max(1);
    while offset >= cycle {
        offset -= cycle;
        cycle = ((cycle as f64 * sched.cycle_multiplier).floor() as u64).max(1);
    }
    if offset == 0 {
        return sched.lr_max;
    }
    let phase = std::f64::consts::PI * offset as f64 / cycle as f64;
    let lr = sched.lr_min + 0.5 * (sched.lr_max - sched.lr_min) * (1.0 + phase.cos());
    lr.clamp(sched.lr_min, sched.lr_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ParamId;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::scalar(v));
        s
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut params = scalar_store(1.5);
        let mut state = AdamState::new(&params);
        let mut grads = Gradients::new(1);
        grads.accumulate(ParamId(0), &[1], &[0.0], 1.0);
        adam_step(&mut params, &grads, &mut state, 0.1, &AdamConfig::default()).unwrap();
        assert_eq!(params.get(ParamId(0)).data()[0], 1.5);
        assert_eq!(state.step_count(), 1);

        // non-fresh state: still unchanged under a zero gradient
        let mut g1 = Gradients::new(1);
        g1.accumulate(ParamId(0), &[1], &[0.7], 1.0);
        adam_step(&mut params, &g1, &mut state, 0.1, &AdamConfig::default()).unwrap();
        let before = params.get(ParamId(0)).data()[0];
        adam_step(&mut params, &grads, &mut state, 0.1, &AdamConfig::default()).unwrap();
        assert_eq!(params.get(ParamId(0)).data()[0], before);
        assert_eq!(state.step_count(), 3);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = 1, v̂ = 1 after bias correction: Δ = lr / (1 + eps)
        let mut params = scalar_store(0.0);
        let mut state = AdamState::new(&params);
        let mut grads = Gradients::new(1);
        grads.accumulate(ParamId(0), &[1], &[1.0], 1.0);
        adam_step(&mut params, &grads, &mut state, 0.1, &AdamConfig::default()).unwrap();
        let p = params.get(ParamId(0)).data()[0];
        assert!((p + 0.1 / (1.0 + 1e-8)).abs() < 1e-15, "{p}");
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut params = scalar_store(0.3);
            let mut state = AdamState::new(&params);
            for k in 0..20 {
                let mut g = Gradients::new(1);
                g.accumulate(ParamId(0), &[1], &[(k as f64).sin()], 1.0);
                adam_step(&mut params, &g, &mut state, 0.01, &AdamConfig::default()).unwrap();
            }
            params.get(ParamId(0)).data()[0].to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut params = scalar_store(0.0);
        let mut state = AdamState::new(&params);
        let mut g = Gradients::new(1);
        g.accumulate(ParamId(0), &[2], &[1.0, 1.0], 1.0);
        let err = adam_step(&mut params, &g, &mut state, 0.1, &AdamConfig::default());
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }

    #[test]
    fn schedule_landmarks() {
        let s = WarmRestartSchedule {
            lr_max: 1e-3,
            lr_min: 1e-5,
            cycle_length: 100,
            cycle_multiplier: 2.0,
        };
        assert_eq!(s.lr(0), 1e-3);
        assert!((s.lr(50) - (1e-3 + 1e-5) / 2.0).abs() < 1e-15);
        assert_eq!(s.lr(100), 1e-3);
        // second cycle is 200 steps long
        assert!((s.lr(200) - (1e-3 + 1e-5) / 2.0).abs() < 1e-15);
        assert_eq!(s.lr(300), 1e-3);
        for step in 0..1000 {
            let lr = s.lr(step);
            assert!((s.lr_min..=s.lr_max).contains(&lr));
        }
    }
}
