//! Parametric performance models and per-trace nonlinear least-squares
//! fitting.
//!
//! Both model families capture the rapid-decline-then-plateau shape of the
//! metric traces: an exponential `a*exp(-b*t) + c` and a sigmoid
//! `L/(1 + exp(-k*t)) + d`. Fitting uses damped Gauss-Newton with analytic
//! Jacobians.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{steady_state, PerfTrace, STEADY_WINDOW_SECS};

/// Iteration cap for the damped Gauss-Newton loop.
pub const FIT_MAX_ITERS: usize = 500;
/// Convergence threshold on the relative objective change.
pub const FIT_REL_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum ModelsError {
    #[error("fitting needs at least {need} samples, got {got}")]
    TooFewPoints { got: usize, need: usize },
}

/// The two model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Exponential,
    Sigmoid,
}

impl ModelKind {
    /// Parameter names in slot order.
    pub fn param_names(&self) -> [&'static str; 3] {
        match self {
            ModelKind::Exponential => ["a", "b", "c"],
            ModelKind::Sigmoid => ["l", "k", "d"],
        }
    }
}

/// Parameter triple of one model: `(a, b, c)` for the exponential family
/// (initial scale, decay rate, asymptote), `(L, k, d)` for the sigmoid
/// (scale, steepness, baseline).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams(pub [f64; 3]);

/// Result of a single-trace fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub params: ModelParams,
    pub mse: f64,
    pub converged: bool,
}

/// Evaluate the model at time `t`.
pub fn predict(kind: ModelKind, phi: &ModelParams, t: f64) -> f64 {
    predict_with_grad(kind, phi, t).0
}

/// Model value and its gradient with respect to the three parameters.
///
/// The exponential argument is clamped at 700 to keep the value finite for
/// wild parameters mid-optimization; the clamped branch reports a zero rate
/// gradient.
pub fn predict_with_grad(kind: ModelKind, phi: &ModelParams, t: f64) -> (f64, [f64; 3]) {
    match kind {
        ModelKind::Exponential => {
            let [a, b, _c] = phi.0;
            let arg = -b * t;
            if arg > 350.0 {
                let e = 350.0f64.exp();
                (a * e + phi.0[2], [e, 0.0, 1.0])
            } else {
                let e = arg.exp();
                (a * e + phi.0[2], [e, -a * t * e, 1.0])
            }
        }
        ModelKind::Sigmoid => {
            let [l, k, d] = phi.0;
            let s = sigmoid(k * t);
            (l * s + d, [s, l * t * s * (1.0 - s), 1.0])
        }
    }
}

/// The long-time value the model settles to.
pub fn steady_value(kind: ModelKind, phi: &ModelParams) -> f64 {
    match kind {
        ModelKind::Exponential => phi.0[2],
        ModelKind::Sigmoid => {
            let [l, k, d] = phi.0;
            if k >= 0.0 {
                l + d
            } else {
                d
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fit one model to one trace by damped Gauss-Newton, minimizing the mean
/// squared error. Deterministic given the trace. If the iteration cap is
/// reached before the relative objective change drops below [`FIT_REL_TOL`],
/// the best parameters so far are returned with `converged = false`.
pub fn fit_single(trace: &PerfTrace, kind: ModelKind) -> Result<FitOutcome, ModelsError> {
    if trace.len() < 10 {
        return Err(ModelsError::TooFewPoints { got: trace.len(), need: 10 });
    }
    let times = trace.times();
    let values = trace.values();

    let mut params = initial_guess(trace, kind);
    let mut mse = mse_of(kind, &params, times, values);
    let mut lambda = 1e-3;
    let mut converged = false;

    for _ in 0..FIT_MAX_ITERS {
        // Normal equations at the current point.
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for (&t, &y) in times.iter().zip(values.iter()) {
            let (value, grad) = predict_with_grad(kind, &params, t);
            let residual = value - y;
            for i in 0..3 {
                jtr[i] += grad[i] * residual;
                for j in 0..3 {
                    jtj[i][j] += grad[i] * grad[j];
                }
            }
        }

        let mut stepped = false;
        while lambda <= 1e12 {
            let mut damped = jtj;
            for i in 0..3 {
                damped[i][i] += lambda * jtj[i][i].max(1e-12);
            }
            let rhs = [-jtr[0], -jtr[1], -jtr[2]];
            let Some(delta) = solve3(&damped, &rhs) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = ModelParams([
                params.0[0] + delta[0],
                params.0[1] + delta[1],
                params.0[2] + delta[2],
            ]);
            // Keep the exponential decay rate positive.
            if kind == ModelKind::Exponential && candidate.0[1] <= 0.0 {
                lambda *= 10.0;
                continue;
            }
            let candidate_mse = mse_of(kind, &candidate, times, values);
            if candidate_mse.is_finite() && candidate_mse <= mse {
                let improvement = mse - candidate_mse;
                params = candidate;
                mse = candidate_mse;
                lambda = (lambda * 0.3).max(1e-12);
                stepped = true;
                if improvement <= FIT_REL_TOL * mse.max(f64::MIN_POSITIVE) || mse < 1e-22 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }

        if converged || !stepped {
            // No acceptable step at any damping: a (local) minimum.
            converged = converged || !stepped;
            break;
        }
    }

    Ok(FitOutcome { params, mse, converged })
}

/// Heuristic starting point: asymptote from the trace tail, scale from the
/// first value, rate from the time to reach halfway between them.
pub(crate) fn initial_guess(trace: &PerfTrace, kind: ModelKind) -> ModelParams {
    let duration = trace.duration();
    let window = (duration * 0.5).min(STEADY_WINDOW_SECS);
    let steady =
        steady_state(trace, window).expect("window shorter than duration by construction");
    let first = trace.values()[0];

    let t0 = trace.times()[0];
    let mid = 0.5 * (first + steady);
    let decaying = first >= steady;
    let t_half = trace
        .times()
        .iter()
        .zip(trace.values().iter())
        .find(|(_, &v)| if decaying { v <= mid } else { v >= mid })
        .map(|(&t, _)| t - t0)
        .filter(|dt| *dt > 0.0)
        .unwrap_or(duration * 0.5);
    let rate = std::f64::consts::LN_2 / t_half;

    match kind {
        ModelKind::Exponential => ModelParams([first - steady, rate, steady]),
        ModelKind::Sigmoid => ModelParams([2.0 * (first - steady), -rate, steady]),
    }
}

fn mse_of(kind: ModelKind, phi: &ModelParams, times: &[f64], values: &[f64]) -> f64 {
    let sum: f64 = times
        .iter()
        .zip(values.iter())
        .map(|(&t, &y)| {
            let r = predict(kind, phi, t) - y;
            r * r
        })
        .sum();
    sum / times.len() as f64
}

/// Solve a 3x3 linear system by Gaussian elimination with partial pivoting.
/// Returns `None` when the matrix is numerically singular.
fn solve3(a: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let mut m = [[0.0f64; 4]; 3];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&a[i]);
        m[i][3] = b[i];
    }
    for col in 0..3 {
        let pivot = (col..3).max_by(|&r1, &r2| m[r1][col].abs().total_cmp(&m[r2][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        for row in 0..3 {
            if row != col {
                let factor = m[row][col] / m[col][col];
                for k in col..4 {
                    m[row][k] -= factor * m[col][k];
                }
            }
        }
    }
    let mut x = [0.0; 3];
    for i in 0..3 {
        x[i] = m[i][3] / m[i][i];
        if !x[i].is_finite() {
            return None;
        }
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricKind;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn synth_trace(kind: ModelKind, phi: &ModelParams, n: usize, dt: f64, noise: f64) -> PerfTrace {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let normal = Normal::new(0.0, noise.max(1e-300)).unwrap();
        let times: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
        let values: Vec<f64> = times
            .iter()
            .map(|&t| {
                let v = predict(kind, phi, t) + if noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                v.max(0.0)
            })
            .collect();
        PerfTrace::new(MetricKind::Ospa, times, values).unwrap()
    }

    #[test]
    fn predict_examples() {
        let flat = ModelParams([0.0, 0.1, 3.0]);
        for t in [0.0, 10.0, 250.0] {
            assert_eq!(predict(ModelKind::Exponential, &flat, t), 3.0);
        }

        let sig = ModelParams([6.0, -0.05, 1.0]);
        assert_relative_eq!(predict(ModelKind::Sigmoid, &sig, 0.0), 6.0 / 2.0 + 1.0);

        let exp = ModelParams([8.0, 0.05, 2.0]);
        assert_relative_eq!(
            predict(ModelKind::Exponential, &exp, 20.0),
            8.0 * (-1.0f64).exp() + 2.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn steady_values() {
        assert_eq!(steady_value(ModelKind::Exponential, &ModelParams([8.0, 0.1, 2.0])), 2.0);
        assert_eq!(steady_value(ModelKind::Sigmoid, &ModelParams([8.0, -0.1, 2.0])), 2.0);
        assert_eq!(steady_value(ModelKind::Sigmoid, &ModelParams([8.0, 0.1, 2.0])), 10.0);
    }

    #[test]
    fn fit_recovers_noiseless_exponential() {
        let truth = ModelParams([8.0, 0.05, 2.0]);
        let trace = synth_trace(ModelKind::Exponential, &truth, 600, 0.5, 0.0);
        let fit = fit_single(&trace, ModelKind::Exponential).unwrap();
        for (got, want) in fit.params.0.iter().zip(truth.0.iter()) {
            assert!(
                ((got - want) / want).abs() < 0.01,
                "parameter {got} vs {want}"
            );
        }
        assert!(fit.mse < 1e-12);
    }

    #[test]
    fn fit_recovers_noiseless_sigmoid_curve() {
        let truth = ModelParams([16.0, -0.04, 2.0]);
        let trace = synth_trace(ModelKind::Sigmoid, &truth, 600, 0.5, 0.0);
        let fit = fit_single(&trace, ModelKind::Sigmoid).unwrap();
        assert!(fit.mse < 1e-10, "mse {}", fit.mse);
    }

    #[test]
    fn fit_constant_trace_degenerates_cleanly() {
        let times: Vec<f64> = (0..60).map(|i| i as f64).collect();
        let trace = PerfTrace::new(MetricKind::Ospa, times, vec![4.2; 60]).unwrap();
        let fit = fit_single(&trace, ModelKind::Exponential).unwrap();
        assert!(fit.params.0[0].abs() < 1e-9);
        assert_relative_eq!(fit.params.0[2], 4.2, max_relative = 1e-9);
        assert!(fit.mse < 1e-18);
    }

    #[test]
    fn fit_noisy_exponential_within_tolerance() {
        let truth = ModelParams([8.0, 0.05, 2.0]);
        let trace = synth_trace(ModelKind::Exponential, &truth, 600, 0.5, 0.05);
        let fit = fit_single(&trace, ModelKind::Exponential).unwrap();
        for (got, want) in fit.params.0.iter().zip(truth.0.iter()) {
            assert!(
                ((got - want) / want).abs() < 0.05,
                "parameter {got} vs {want}"
            );
        }
    }

    #[test]
    fn fit_never_worse_than_initial_guess() {
        let truth = ModelParams([7.0, 0.02, 3.0]);
        let trace = synth_trace(ModelKind::Exponential, &truth, 200, 0.5, 0.3);
        let init = initial_guess(&trace, ModelKind::Exponential);
        let init_mse = mse_of(ModelKind::Exponential, &init, trace.times(), trace.values());
        let fit = fit_single(&trace, ModelKind::Exponential).unwrap();
        assert!(fit.mse <= init_mse);
    }

    #[test]
    fn refit_of_own_predictions_is_a_fixed_point() {
        let truth = ModelParams([9.0, 0.03, 1.5]);
        let noisy = synth_trace(ModelKind::Exponential, &truth, 300, 0.5, 0.2);
        let first = fit_single(&noisy, ModelKind::Exponential).unwrap();
        let refit_trace = synth_trace(ModelKind::Exponential, &first.params, 300, 0.5, 0.0);
        let second = fit_single(&refit_trace, ModelKind::Exponential).unwrap();
        for (a, b) in second.params.0.iter().zip(first.params.0.iter()) {
            assert!(((a - b) / b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn sigmoid_fit_of_decaying_data_is_consistent_at_infinity() {
        let truth = ModelParams([8.0, 0.05, 2.0]);
        let trace = synth_trace(ModelKind::Exponential, &truth, 600, 0.5, 0.05);
        let fit = fit_single(&trace, ModelKind::Sigmoid).unwrap();
        let [l, k, _d] = fit.params.0;
        assert!(k < 0.0 || l < 0.0, "decaying data should flip a sign: {:?}", fit.params);

        let tail_start = trace.len() - 100;
        let tail = &trace.values()[tail_start..];
        let tail_mean = tail.iter().sum::<f64>() / tail.len() as f64;
        let tail_std = (tail.iter().map(|v| (v - tail_mean).powi(2)).sum::<f64>()
            / tail.len() as f64)
            .sqrt();
        let steady = steady_state(&trace, 50.0).unwrap();
        let asymptote = steady_value(ModelKind::Sigmoid, &fit.params);
        assert!(
            (asymptote - steady).abs() <= 3.0 * tail_std.max(1e-3),
            "asymptote {asymptote} vs steady {steady} (tail std {tail_std})"
        );
    }

    #[test]
    fn fit_rejects_short_traces() {
        let times: Vec<f64> = (0..5).map(|i| i as f64).collect();
        let trace = PerfTrace::new(MetricKind::Ospa, times, vec![1.0; 5]).unwrap();
        assert_eq!(
            fit_single(&trace, ModelKind::Exponential).unwrap_err(),
            ModelsError::TooFewPoints { got: 5, need: 10 }
        );
    }
}
