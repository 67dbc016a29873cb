use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Var};

/// Parameters checked per tensor, at most.
pub const MAX_CHECKED_PER_TENSOR: usize = 24;

/// Gradients smaller than this are compared on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-7;

/// Entries whose first estimate disagrees by more than this are re-estimated
/// with steps ε/10 and ε/100.
pub const RETRY_ABOVE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_relative_error: f64,
    pub worst_parameter: Option<(String, usize)>,
    /// `(analytic, numeric)` at the worst entry.
    pub worst_values: Option<(f64, f64)>,
    pub checked: usize,
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares reverse-mode gradients of `loss_fn` against fourth-order central
/// differences on a uniform sample of at most `MAX_CHECKED_PER_TENSOR`
/// entries per tensor.
///
/// A step can straddle a kink (ReLU at zero), where no finite difference is
/// valid; such entries are retried with smaller steps and scored by the step
/// that agrees best. A wrong gradient disagrees at every step size.
pub fn gradcheck<F, R>(loss_fn: F, params: &ParamStore, epsilon: f64, rng: &mut R) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
    R: Rng + ?Sized,
{
    let eval = |p: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(p);
        let loss = loss_fn(&mut g)?;
        Ok(g.tape.scalar(loss))
    };

    let mut g = Graph::new(params);
    let loss = loss_fn(&mut g)?;
    let first = g.tape.scalar(loss);
    let second = eval(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Determinism { first, second });
    }
    let grads = g.gradients(loss);
    drop(g);

    let mut probe = params.clone();
    let mut report = GradcheckReport {
        max_relative_error: 0.0,
        worst_parameter: None,
        worst_values: None,
        checked: 0,
    };
    for id in params.ids() {
        let n = params.get(id).len();
        let picks: Vec<usize> = if n <= MAX_CHECKED_PER_TENSOR {
            (0..n).collect()
        } else {
            let mut v = sample(rng, n, MAX_CHECKED_PER_TENSOR).into_vec();
            v.sort_unstable();
            v
        };
        for i in picks {
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[i]);
            let mut numeric = central_difference(&eval, &mut probe, id, i, epsilon)?;
            let mut err = relative_error(analytic, numeric);
            for h in [epsilon / 10.0, epsilon / 100.0] {
                if err <= RETRY_ABOVE {
                    break;
                }
                let n = central_difference(&eval, &mut probe, id, i, h)?;
                let e = relative_error(analytic, n);
                if e < err {
                    (numeric, err) = (n, e);
                }
            }
            report.checked += 1;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst_parameter = Some((params.name(id).to_string(), i));
                report.worst_values = Some((analytic, numeric));
            }
        }
    }
    Ok(report)
}

fn central_difference<E>(eval: &E, probe: &mut ParamStore, id: ParamId, index: usize, epsilon: f64) -> Result<f64>
where
    E: Fn(&ParamStore) -> Result<f64>,
{
    let original = probe.get(id).data()[index];
    let mut at = |h: f64| {
        probe.get_mut(id).data_mut()[index] = original + h;
        eval(probe)
    };
    // five-point stencil: truncation O(ε⁴), so ε can be large enough to keep
    // roundoff well below the smallest gradients of interest
    let (p1, m1, p2, m2) = (at(epsilon)?, at(-epsilon)?, at(2.0 * epsilon)?, at(-2.0 * epsilon)?);
    probe.get_mut(id).data_mut()[index] = original;
    Ok((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * epsilon))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = ParamStore::new();
        params.insert("p", Tensor::randn(&[1, 50], 1.0, &mut rng));
        let report = gradcheck(
            |g| {
                // Σ p² as p·pᵀ
                let x = g.param("p")?;
                g.tape.matmul_t(x, x, true)
            },
            &params,
            1e-3,
            &mut rng,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-8, "{report:?}");
        assert_eq!(report.checked, MAX_CHECKED_PER_TENSOR);
    }

    #[test]
    fn constant_loss_reports_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = ParamStore::new();
        params.insert("p", Tensor::randn(&[3], 1.0, &mut rng));
        let report = gradcheck(|g| Ok(g.tape.constant(Tensor::scalar(4.0))), &params, 1e-5, &mut rng).unwrap();
        assert_eq!(report.max_relative_error, 0.0);
    }

    #[test]
    fn nondeterminism_is_detected() {
        use std::cell::Cell;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ParamStore::new();
        params.insert("p", Tensor::scalar(1.0));
        let calls = Cell::new(0.0);
        let err = gradcheck(
            |g| {
                calls.set(calls.get() + 1.0);
                Ok(g.tape.constant(Tensor::scalar(calls.get())))
            },
            &params,
            1e-5,
            &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Determinism { .. }));
    }

    #[test]
    fn steps_straddling_a_kink_are_retried() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = ParamStore::new();
        params.insert("p", Tensor::new(vec![1, 3], vec![5e-4, -5e-4, 0.3]).unwrap());
        let ones = Tensor::filled(&[1, 3], 1.0);
        let report = gradcheck(
            |g| {
                let x = g.param("p")?;
                let r = g.tape.relu(x);
                g.tape.dot_const(r, &ones)
            },
            &params,
            1e-3,
            &mut rng,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-8, "{report:?}");
    }

    #[test]
    fn a_missing_gradient_fails_at_every_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = ParamStore::new();
        params.insert("p", Tensor::new(vec![1, 2], vec![0.7, -1.1]).unwrap());
        let ones = Tensor::filled(&[1, 2], 1.0);
        let report = gradcheck(
            |g| {
                // p₀² enters the value as a constant, invisible to backprop
                let hidden = g.params().by_name("p").unwrap().data()[0].powi(2);
                let x = g.param("p")?;
                let s = g.tape.dot_const(x, &ones)?;
                let c = g.tape.constant(Tensor::scalar(hidden));
                g.tape.add(s, c)
            },
            &params,
            1e-3,
            &mut rng,
        )
        .unwrap();
        assert!(report.max_relative_error > 0.5, "{report:?}");
        assert_eq!(report.worst_parameter, Some(("p".to_string(), 0)));
    }
}
