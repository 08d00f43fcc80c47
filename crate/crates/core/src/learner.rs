//! Co-learning of the dimensionless variable and its polynomial links.
//!
//! The learnable parameters are the three null-basis coefficients `gamma`
//! (the structure of `Pi`) and, per model parameter, five polynomial
//! coefficients `beta` (the link from `Pi` to the model parameter). Both are
//! refined by alternating moment-adaptive gradient steps on the mean squared
//! trace-prediction error, after a random-restart pretraining phase.
//!
//! The polynomial argument is the z-scored `log Pi` over the training set;
//! that normalization is part of the objective (its gradient terms included)
//! and the constants are stored with the learned model.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dimension::{
    compute_null_basis, gamma_to_w, DimensionError, DimensionalMatrix, GammaVector,
    TeamTaskParams, WVector,
};
use crate::metrics::{median, MetricKind, MetricsError, PerfTrace};
use crate::models::{predict_with_grad, ModelKind, ModelParams};
use crate::sim::SearchAlgorithm;

/// Polynomial degree of each link.
pub const POLY_DEGREE: usize = 4;
/// Coefficients per link polynomial.
pub const POLY_COEFFS: usize = POLY_DEGREE + 1;
/// Smallest usable normalization spread.
const SIGMA_FLOOR: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("dataset must contain at least one sample")]
    EmptyDataset,
    #[error(transparent)]
    Dimension(#[from] DimensionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Per-model-parameter polynomial coefficients in the normalized `log Pi`.
/// `coeffs[i][k]` multiplies `z^k` for model parameter slot `i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolyLink {
    pub coeffs: [[f64; POLY_COEFFS]; 3],
}

impl PolyLink {
    pub fn zeros() -> Self {
        Self { coeffs: [[0.0; POLY_COEFFS]; 3] }
    }
}

/// Evaluate all three link polynomials at the normalized argument `z`.
pub fn phi_of_pi(z: f64, link: &PolyLink) -> ModelParams {
    let mut phi = [0.0; 3];
    for (slot, coeffs) in phi.iter_mut().zip(link.coeffs.iter()) {
        let mut power = 1.0;
        for c in coeffs {
            *slot += c * power;
            power *= z;
        }
    }
    ModelParams(phi)
}

/// One training sample: a team/task configuration and its (trial-median)
/// metric trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnSample {
    pub theta: TeamTaskParams,
    pub trace: PerfTrace,
}

/// Hyperparameters of the learning procedure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub gamma_rate: f64,
    pub beta_rate: f64,
    pub decay1: f64,
    pub decay2: f64,
    pub epsilon: f64,
    pub max_iters: usize,
    /// Stop once the objective drops below this mean squared error.
    pub mse_threshold: f64,
    pub pretrain_restarts: usize,
    /// Alternating iterations each pretraining restart is trained for before
    /// the best-performing restarts seed the main phase.
    pub pretrain_iters: usize,
    /// Pretraining finalists that each get a share of the main-phase budget;
    /// the best final objective wins. Ranking restarts by early objective
    /// alone favors structures that fit fast over structures that fit well.
    pub finalists: usize,
    /// Iterations without best-objective improvement before the step sizes
    /// are halved and the search resumes from the best point. Constant-rate
    /// moment-adaptive steps orbit the valley floor otherwise.
    pub plateau_patience: usize,
    pub plateau_decay: f64,
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            gamma_rate: 1e-3,
            beta_rate: 1e-2,
            decay1: 0.9,
            decay2: 0.999,
            epsilon: 1e-8,
            max_iters: 50_000,
            mse_threshold: 1e-4,
            pretrain_restarts: 16,
            pretrain_iters: 200,
            finalists: 3,
            plateau_patience: 400,
            plateau_decay: 0.5,
            seed: 0,
        }
    }
}

impl LearnerConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }
}

/// A learned dimensionless predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedModel {
    pub kind: ModelKind,
    pub gamma: GammaVector,
    /// Derived exponents `W * gamma`; kept alongside gamma for reporting.
    pub w: WVector,
    pub links: PolyLink,
    /// Mean of `log Pi` over the training set at the learned gamma.
    pub norm_mean: f64,
    /// Standard deviation of `log Pi` over the training set (floored away
    /// from zero).
    pub norm_std: f64,
    pub train_mse: f64,
    pub test_mse: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub seed: u64,
    /// Predicted values are clamped to the training data's value range; a
    /// bounded metric's predictor has no business outside it, and the clamp
    /// keeps extrapolated rate polynomials from exploding.
    pub clamp_lo: f64,
    pub clamp_hi: f64,
    /// Training range of the normalized log Pi. Predictions for
    /// configurations outside it use the boundary value (constant
    /// extension): a fourth-order polynomial has no authority beyond the
    /// hull it was fit on.
    pub z_lo: f64,
    pub z_hi: f64,
    /// Labels attached by the pipeline for reporting.
    pub algorithm: Option<SearchAlgorithm>,
    pub metric: Option<MetricKind>,
}

impl LearnedModel {
    /// Normalized polynomial argument for a configuration, clamped to the
    /// range seen in training.
    pub fn normalized_pi(&self, theta: &TeamTaskParams) -> Result<f64, LearnerError> {
        let log_pi = crate::dimension::log_pi(theta, &self.gamma)?;
        Ok(((log_pi - self.norm_mean) / self.norm_std).clamp(self.z_lo, self.z_hi))
    }

    /// Model parameters predicted for a configuration.
    pub fn phi(&self, theta: &TeamTaskParams) -> Result<ModelParams, LearnerError> {
        Ok(phi_of_pi(self.normalized_pi(theta)?, &self.links))
    }

    /// Predicted metric values over `times`, clamped to the training value
    /// range.
    pub fn predict_values(
        &self,
        theta: &TeamTaskParams,
        times: &[f64],
    ) -> Result<Vec<f64>, LearnerError> {
        let phi = self.phi(theta)?;
        Ok(times
            .iter()
            .map(|&t| predict_with_grad(self.kind, &phi, t).0.clamp(self.clamp_lo, self.clamp_hi))
            .collect())
    }

    /// Predicted trace, clamped into the metric's valid range so it always
    /// forms a well-formed [`PerfTrace`].
    pub fn predict_trace(
        &self,
        theta: &TeamTaskParams,
        times: &[f64],
    ) -> Result<PerfTrace, LearnerError> {
        let kind = self.metric.unwrap_or(MetricKind::Ospa);
        let values = self
            .predict_values(theta, times)?
            .into_iter()
            .map(|v| match kind {
                MetricKind::Ospa => v.max(0.0),
                MetricKind::Ei => v.clamp(0.0, 100.0),
            })
            .collect();
        Ok(PerfTrace::new(kind, times.to_vec(), values)?)
    }

    /// Mean squared prediction error over a dataset, with the stored
    /// (training-set) normalization and value clamping.
    pub fn evaluate(&self, dataset: &[LearnSample]) -> Result<f64, LearnerError> {
        if dataset.is_empty() {
            return Err(LearnerError::EmptyDataset);
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for sample in dataset {
            let phi = self.phi(&sample.theta)?;
            for (&t, &y) in sample.trace.times().iter().zip(sample.trace.values()) {
                let prediction =
                    predict_with_grad(self.kind, &phi, t).0.clamp(self.clamp_lo, self.clamp_hi);
                let r = prediction - y;
                total += r * r;
                count += 1;
            }
        }
        Ok(total / count as f64)
    }
}

/// Exponent structure of a learned model, for the polar-plot emitters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WStructure {
    pub w: WVector,
    pub gamma: GammaVector,
    /// Unit-norm gamma direction (zero vector if gamma is zero).
    pub gamma_unit: [f64; 3],
}

/// Exponent report for a learned model: the derived per-parameter exponents
/// plus the raw and direction-normalized basis coefficients.
pub fn extract_w_structure(model: &LearnedModel) -> WStructure {
    let norm = model.gamma.norm();
    let gamma_unit = if norm > 0.0 {
        [
            model.gamma.0[0] / norm,
            model.gamma.0[1] / norm,
            model.gamma.0[2] / norm,
        ]
    } else {
        [0.0; 3]
    };
    WStructure { w: model.w, gamma: model.gamma, gamma_unit }
}

// ---------------------------------------------------------------------------
// Objective and gradients
// ---------------------------------------------------------------------------

struct Features {
    /// `log` of the three Pi bases per sample.
    u: Vec<[f64; 3]>,
    u_bar: [f64; 3],
}

fn features(dataset: &[LearnSample]) -> Result<Features, LearnerError> {
    if dataset.is_empty() {
        return Err(LearnerError::EmptyDataset);
    }
    let u: Vec<[f64; 3]> = dataset
        .iter()
        .map(|s| s.theta.log_pi_bases())
        .collect::<Result<_, _>>()?;
    let n = u.len() as f64;
    let mut u_bar = [0.0; 3];
    for row in &u {
        for (acc, v) in u_bar.iter_mut().zip(row) {
            *acc += v;
        }
    }
    for v in &mut u_bar {
        *v /= n;
    }
    Ok(Features { u, u_bar })
}

struct NormState {
    /// Centered log Pi per sample.
    centered: Vec<f64>,
    mean: f64,
    sigma: f64,
    /// True when the raw spread fell below the floor (sigma then treated as
    /// a constant).
    degenerate: bool,
}

fn norm_state(feats: &Features, gamma: &[f64; 3]) -> NormState {
    let mean: f64 = gamma.iter().zip(feats.u_bar.iter()).map(|(g, u)| g * u).sum();
    let centered: Vec<f64> = feats
        .u
        .iter()
        .map(|row| {
            row.iter()
                .zip(feats.u_bar.iter())
                .zip(gamma.iter())
                .map(|((u, ub), g)| g * (u - ub))
                .sum()
        })
        .collect();
    let var = centered.iter().map(|q| q * q).sum::<f64>() / centered.len() as f64;
    let raw_std = var.sqrt();
    let degenerate = !(raw_std > SIGMA_FLOOR);
    NormState {
        centered,
        mean,
        sigma: if degenerate { SIGMA_FLOOR } else { raw_std },
        degenerate,
    }
}

struct Eval {
    objective: f64,
    d_gamma: [f64; 3],
    d_beta: [[f64; POLY_COEFFS]; 3],
}

fn eval_objective(
    dataset: &[LearnSample],
    feats: &Features,
    gamma: &[f64; 3],
    links: &PolyLink,
    kind: ModelKind,
    want_grad: bool,
) -> Eval {
    let n = dataset.len() as f64;
    let norm = norm_state(feats, gamma);
    let z: Vec<f64> = norm.centered.iter().map(|q| q / norm.sigma).collect();

    // d sigma / d gamma_j, zero when the spread sits on the floor.
    let mut sigma_grad = [0.0; 3];
    if want_grad && !norm.degenerate {
        for (zi, row) in z.iter().zip(feats.u.iter()) {
            for j in 0..3 {
                sigma_grad[j] += zi * (row[j] - feats.u_bar[j]);
            }
        }
        for s in &mut sigma_grad {
            *s /= n;
        }
    }

    let mut total_sq = 0.0;
    let mut count = 0usize;
    let mut d_gamma = [0.0; 3];
    let mut d_beta = [[0.0; POLY_COEFFS]; 3];

    for (sample_idx, sample) in dataset.iter().enumerate() {
        let zi = z[sample_idx];
        let mut powers = [0.0; POLY_COEFFS];
        let mut p = 1.0;
        for slot in &mut powers {
            *slot = p;
            p *= zi;
        }
        let phi = phi_of_pi(zi, links);
        let mut dphi_dz = [0.0; 3];
        for i in 0..3 {
            for k in 1..POLY_COEFFS {
                dphi_dz[i] += k as f64 * links.coeffs[i][k] * powers[k - 1];
            }
        }

        // Per-parameter residual weights: sum over t of 2 e dm/dphi_i.
        let mut weight = [0.0; 3];
        for (&t, &y) in sample.trace.times().iter().zip(sample.trace.values()) {
            let (value, grad) = predict_with_grad(kind, &phi, t);
            let e = value - y;
            total_sq += e * e;
            count += 1;
            if want_grad {
                for i in 0..3 {
                    weight[i] += 2.0 * e * grad[i];
                }
            }
        }

        if want_grad {
            for i in 0..3 {
                for k in 0..POLY_COEFFS {
                    d_beta[i][k] += weight[i] * powers[k];
                }
            }
            let chain: f64 = (0..3).map(|i| weight[i] * dphi_dz[i]).sum();
            for j in 0..3 {
                let dz = (feats.u[sample_idx][j] - feats.u_bar[j] - zi * sigma_grad[j])
                    / norm.sigma;
                d_gamma[j] += chain * dz;
            }
        }
    }

    let scale = 1.0 / count as f64;
    for g in &mut d_gamma {
        *g *= scale;
    }
    for row in &mut d_beta {
        for g in row.iter_mut() {
            *g *= scale;
        }
    }
    Eval { objective: total_sq * scale, d_gamma, d_beta }
}

/// Mean squared trace-prediction error of `(gamma, links)` over `dataset`,
/// with the polynomial argument z-scored over that same dataset.
pub fn objective(
    dataset: &[LearnSample],
    gamma: &GammaVector,
    links: &PolyLink,
    kind: ModelKind,
) -> Result<f64, LearnerError> {
    let feats = features(dataset)?;
    Ok(eval_objective(dataset, &feats, &gamma.0, links, kind, false).objective)
}

/// Maximum disagreement between the implemented gradients of [`objective`]
/// and central finite differences (step `1e-5` per parameter on its own
/// scale), over all 18 parameters, measured relative to the largest gradient
/// magnitude at the point.
pub fn gradient_check(
    dataset: &[LearnSample],
    gamma: &GammaVector,
    links: &PolyLink,
    kind: ModelKind,
) -> Result<f64, LearnerError> {
    let feats = features(dataset)?;
    let eval = eval_objective(dataset, &feats, &gamma.0, links, kind, true);
    let mut scale: f64 = 1e-8;
    for g in eval.d_gamma {
        scale = scale.max(g.abs());
    }
    for row in &eval.d_beta {
        for g in row {
            scale = scale.max(g.abs());
        }
    }

    let mut worst: f64 = 0.0;
    let mut compare = |analytic: f64, x: f64, perturb: &mut dyn FnMut(f64) -> f64| {
        let h = 1e-5 * x.abs().max(1.0);
        let plus = perturb(x + h);
        let minus = perturb(x - h);
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max((analytic - numeric).abs() / scale);
    };

    for j in 0..3 {
        let base = gamma.0[j];
        compare(eval.d_gamma[j], base, &mut |value| {
            let mut g = gamma.0;
            g[j] = value;
            eval_objective(dataset, &feats, &g, links, kind, false).objective
        });
    }
    for i in 0..3 {
        for k in 0..POLY_COEFFS {
            let base = links.coeffs[i][k];
            compare(eval.d_beta[i][k], base, &mut |value| {
                let mut l = *links;
                l.coeffs[i][k] = value;
                eval_objective(dataset, &feats, &gamma.0, &l, kind, false).objective
            });
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Learning
// ---------------------------------------------------------------------------

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    rate: f64,
}

impl AdamState {
    fn new(len: usize, rate: f64) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0, rate }
    }

    fn reset_with_rate(&mut self, rate: f64) {
        self.m.iter_mut().for_each(|v| *v = 0.0);
        self.v.iter_mut().for_each(|v| *v = 0.0);
        self.step = 0;
        self.rate = rate;
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64], cfg: &LearnerConfig) {
        self.step += 1;
        let correction1 = 1.0 - cfg.decay1.powi(self.step as i32);
        let correction2 = 1.0 - cfg.decay2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = cfg.decay1 * *m + (1.0 - cfg.decay1) * g;
            *v = cfg.decay2 * *v + (1.0 - cfg.decay2) * g * g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *p -= self.rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// Result of [`learn`]: the model plus the best-objective trajectory (one
/// entry per iteration, non-increasing by construction).
#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub model: LearnedModel,
    pub best_history: Vec<f64>,
}

/// Algorithm: train each random restart briefly and keep the best as the
/// starting point (pretraining), then alternate one moment-adaptive gradient
/// step on `gamma` (links frozen) with one on the link coefficients (`gamma`
/// frozen) until the objective falls below the threshold or the iteration
/// cap is reached. Deterministic given the config seed.
pub fn learn(
    dataset: &[LearnSample],
    kind: ModelKind,
    config: &LearnerConfig,
) -> Result<LearnOutcome, LearnerError> {
    let feats = features(dataset)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // Pretraining: short training runs from random parameters; the best few
    // finalists each get a share of the main-phase budget.
    let normal = Normal::new(0.0, 0.1).expect("valid std");
    let zero_candidate = {
        let gamma = [0.0f64; 3];
        let links = PolyLink::zeros();
        let obj = eval_objective(dataset, &feats, &gamma, &links, kind, false).objective;
        (obj, gamma, links)
    };
    // Canonical directions always advance to the finalist stage: the three
    // basis axes and their diagonal. Random restarts alone can miss a
    // narrow global basin, and early-objective ranking favors structures
    // that fit fast over structures that fit well. Every candidate's links
    // start at the closed-form regression of the per-sample fits on its
    // own normalized log Pi (the "per-sample Phi" initialization), which
    // places it near the best its direction can do.
    let fits = per_sample_fits(dataset, kind);
    let informed_links = |gamma: &[f64; 3]| -> PolyLink {
        let norm = norm_state(&feats, gamma);
        let z: Vec<f64> = norm.centered.iter().map(|q| q / norm.sigma).collect();
        lsq_links(&z, &fits)
    };

    let mut finalists: Vec<(f64, [f64; 3], PolyLink)> = vec![zero_candidate];
    // All {-1, 0, 1} directions up to the sign gauge.
    const DIRECTION_FAN: [[f64; 3]; 13] = [
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [1.0, 1.0, 0.0],
        [1.0, -1.0, 0.0],
        [1.0, 0.0, 1.0],
        [1.0, 0.0, -1.0],
        [0.0, 1.0, 1.0],
        [0.0, 1.0, -1.0],
        [1.0, 1.0, 1.0],
        [1.0, 1.0, -1.0],
        [1.0, -1.0, 1.0],
        [1.0, -1.0, -1.0],
    ];
    for axis in DIRECTION_FAN {
        let candidate = burn_in(
            dataset,
            &feats,
            axis,
            informed_links(&axis),
            kind,
            config,
            config.pretrain_iters,
        );
        if candidate.0.is_finite() {
            finalists.push(candidate);
        }
    }
    // Data-driven directions: regress each per-sample fitted parameter (raw
    // and log magnitude) on the centered log features; the resulting
    // coefficient vectors point at the structures that explain parameter
    // variation.
    for direction in regression_directions(&feats, &fits) {
        let candidate = burn_in(
            dataset,
            &feats,
            direction,
            informed_links(&direction),
            kind,
            config,
            config.pretrain_iters,
        );
        if candidate.0.is_finite() {
            finalists.push(candidate);
        }
    }
    let mut randoms: Vec<(f64, [f64; 3], PolyLink)> = Vec::new();
    for restart in 0..config.pretrain_restarts {
        let mut g = [0.0; 3];
        for slot in &mut g {
            *slot = rng.random::<f64>() * 4.0 - 2.0;
        }
        let mut l = PolyLink::zeros();
        for row in &mut l.coeffs {
            for c in row.iter_mut() {
                *c = normal.sample(&mut rng);
            }
        }
        // Alternate fully random links with regression-informed links.
        if restart % 2 == 0 {
            l = informed_links(&g);
        }
        let candidate = burn_in(dataset, &feats, g, l, kind, config, config.pretrain_iters);
        if candidate.0.is_finite() {
            randoms.push(candidate);
        }
    }
    randoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    finalists.extend(randoms.into_iter().take(config.finalists.max(1)));

    // Stage one: a short main run per finalist. Stage two: the best few
    // stage-one results split the remaining budget; judging on stage one
    // alone would hand the whole budget to whichever basin descends fastest.
    let stage_budget = (config.max_iters / 2) / finalists.len().max(1);
    let mut best_obj = f64::INFINITY;
    let mut best_gamma = [0.0f64; 3];
    let mut best_links = PolyLink::zeros();
    let mut iterations = 0usize;
    let mut converged = false;
    let mut history: Vec<f64> = Vec::new();
    let mut stage_results: Vec<(f64, [f64; 3], PolyLink)> = Vec::new();
    for (start_obj, start_gamma, start_links) in finalists {
        let run = main_phase(
            dataset,
            &feats,
            start_obj,
            start_gamma,
            start_links,
            kind,
            config,
            stage_budget,
        );
        iterations += run.iterations;
        // Best-so-far across finalists stays monotone in the history.
        for obj in run.history {
            history.push(obj.min(best_obj));
        }
        if run.best_obj < best_obj {
            best_obj = run.best_obj;
            best_gamma = run.gamma;
            best_links = run.links;
        }
        if std::env::var_os("MRMTT_LEARN_DEBUG").is_some() {
            eprintln!(
                "  candidate start=({:+.2},{:+.2},{:+.2}) stage={:.4} c1={:+.3} c2={:+.3}",
                start_gamma[0],
                start_gamma[1],
                start_gamma[2],
                run.best_obj,
                run.gamma[0] + run.gamma[2],
                run.gamma[1] + run.gamma[2],
            );
        }
        stage_results.push((run.best_obj, run.gamma, run.links));
        if best_obj < config.mse_threshold {
            converged = true;
            break;
        }
    }
    if !converged && iterations < config.max_iters {
        stage_results.sort_by(|a, b| a.0.total_cmp(&b.0));
        stage_results.truncate(3);
        let polish_budget = (config.max_iters - iterations) / stage_results.len().max(1);
        for (start_obj, start_gamma, start_links) in stage_results {
            let run = main_phase(
                dataset,
                &feats,
                start_obj,
                start_gamma,
                start_links,
                kind,
                config,
                polish_budget,
            );
            iterations += run.iterations;
            for obj in run.history {
                history.push(obj.min(best_obj));
            }
            if run.best_obj < best_obj {
                best_obj = run.best_obj;
                best_gamma = run.gamma;
                best_links = run.links;
            }
            if best_obj < config.mse_threshold {
                converged = true;
                break;
            }
        }
        converged = converged || best_obj < config.mse_threshold;
    }

    let (canon_gamma, canon_links) =
        canonicalize(dataset, &feats, best_gamma, best_links, kind);
    let norm = norm_state(&feats, &canon_gamma);

    let mut clamp_lo = f64::INFINITY;
    let mut clamp_hi = f64::NEG_INFINITY;
    for sample in dataset {
        for v in sample.trace.values() {
            clamp_lo = clamp_lo.min(*v);
            clamp_hi = clamp_hi.max(*v);
        }
    }

    // Training range of the polynomial argument at the canonical gamma.
    let mut z_lo = f64::INFINITY;
    let mut z_hi = f64::NEG_INFINITY;
    for q in &norm.centered {
        let z = q / norm.sigma;
        z_lo = z_lo.min(z);
        z_hi = z_hi.max(z);
    }

    let basis = compute_null_basis(&DimensionalMatrix::build()).expect("fixed matrix has rank 2");
    let gamma_vec = GammaVector(canon_gamma);
    let w = gamma_to_w(&gamma_vec, &basis);

    let mut model = LearnedModel {
        kind,
        gamma: gamma_vec,
        w,
        links: canon_links,
        norm_mean: norm.mean,
        norm_std: norm.sigma,
        train_mse: 0.0,
        test_mse: None,
        converged,
        iterations,
        seed: config.seed,
        clamp_lo,
        clamp_hi,
        z_lo,
        z_hi,
        algorithm: None,
        metric: None,
    };
    model.train_mse = model.evaluate(dataset)?;

    Ok(LearnOutcome { model, best_history: history })
}

fn links_to_flat(links: &PolyLink) -> Vec<f64> {
    links.coeffs.iter().flatten().copied().collect()
}

fn grad_to_flat(grad: &[[f64; POLY_COEFFS]; 3]) -> Vec<f64> {
    grad.iter().flatten().copied().collect()
}

fn links_from_flat(flat: &[f64]) -> PolyLink {
    let mut links = PolyLink::zeros();
    for (i, chunk) in flat.chunks(POLY_COEFFS).enumerate() {
        links.coeffs[i].copy_from_slice(chunk);
    }
    links
}

/// Per-sample model fits used to seed the link polynomials. Sigmoid fits
/// are normalized to the decaying representation (`k < 0`); the two sign
/// patterns describe the same curve.
fn per_sample_fits(dataset: &[LearnSample], kind: ModelKind) -> Vec<Option<[f64; 3]>> {
    dataset
        .iter()
        .map(|sample| {
            crate::models::fit_single(&sample.trace, kind).ok().map(|fit| {
                let mut p = fit.params.0;
                if kind == ModelKind::Sigmoid && p[1] > 0.0 {
                    p = [-p[0], -p[1], p[2] + p[0]];
                }
                p
            })
        })
        .collect()
}

/// Closed-form ridge least squares of each fitted model parameter on the
/// powers of the candidate's normalized log Pi.
fn lsq_links(z: &[f64], fits: &[Option<[f64; 3]>]) -> PolyLink {
    let mut links = PolyLink::zeros();
    for param in 0..3 {
        let mut normal = [[0.0f64; POLY_COEFFS]; POLY_COEFFS];
        let mut rhs = [0.0f64; POLY_COEFFS];
        for (zi, fit) in z.iter().zip(fits.iter()) {
            let Some(phi) = fit else { continue };
            let mut powers = [0.0; POLY_COEFFS];
            let mut p = 1.0;
            for slot in &mut powers {
                *slot = p;
                p *= zi;
            }
            for a in 0..POLY_COEFFS {
                rhs[a] += powers[a] * phi[param];
                for b in 0..POLY_COEFFS {
                    normal[a][b] += powers[a] * powers[b];
                }
            }
        }
        for (i, row) in normal.iter_mut().enumerate() {
            row[i] += 1e-8;
        }
        if let Some(solution) = solve_sym(&normal, &rhs) {
            links.coeffs[param] = solution;
        }
    }
    links
}

/// Gaussian elimination for the 5x5 link initialization systems.
fn solve_sym(a: &[[f64; POLY_COEFFS]; POLY_COEFFS], b: &[f64; POLY_COEFFS]) -> Option<[f64; POLY_COEFFS]> {
    const N: usize = POLY_COEFFS;
    let mut m = [[0.0f64; N + 1]; N];
    for i in 0..N {
        m[i][..N].copy_from_slice(&a[i]);
        m[i][N] = b[i];
    }
    for col in 0..N {
        let pivot = (col..N).max_by(|&r1, &r2| m[r1][col].abs().total_cmp(&m[r2][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        for row in 0..N {
            if row != col {
                let factor = m[row][col] / m[col][col];
                for k in col..=N {
                    m[row][k] -= factor * m[col][k];
                }
            }
        }
    }
    let mut x = [0.0; N];
    for i in 0..N {
        x[i] = m[i][N] / m[i][i];
        if !x[i].is_finite() {
            return None;
        }
    }
    Some(x)
}

/// Least-squares directions of each fitted parameter (raw and log
/// magnitude) against the centered log features, normalized to unit length.
fn regression_directions(feats: &Features, fits: &[Option<[f64; 3]>]) -> Vec<[f64; 3]> {
    let mut out = Vec::new();
    for param in 0..3 {
        for log_space in [false, true] {
            let mut normal = [[0.0f64; 3]; 3];
            let mut rhs = [0.0f64; 3];
            let mut count = 0usize;
            for (row, fit) in feats.u.iter().zip(fits.iter()) {
                let Some(phi) = fit else { continue };
                let target = if log_space {
                    phi[param].abs().max(1e-9).ln()
                } else {
                    phi[param]
                };
                let centered = [
                    row[0] - feats.u_bar[0],
                    row[1] - feats.u_bar[1],
                    row[2] - feats.u_bar[2],
                ];
                for a in 0..3 {
                    rhs[a] += centered[a] * target;
                    for b in 0..3 {
                        normal[a][b] += centered[a] * centered[b];
                    }
                }
                count += 1;
            }
            if count < 4 {
                continue;
            }
            for (i, row) in normal.iter_mut().enumerate() {
                row[i] += 1e-9;
            }
            if let Some(coeffs) = solve3_shared(&normal, &rhs) {
                let norm = (coeffs.iter().map(|c| c * c).sum::<f64>()).sqrt();
                if norm > 1e-9 {
                    out.push([coeffs[0] / norm, coeffs[1] / norm, coeffs[2] / norm]);
                }
            }
        }
    }
    out
}

struct PhaseResult {
    best_obj: f64,
    gamma: [f64; 3],
    links: PolyLink,
    iterations: usize,
    history: Vec<f64>,
}

/// The alternating-descent main phase from one starting point: one
/// moment-adaptive step on gamma (links frozen), one on the links (gamma
/// frozen), per iteration, with plateau-halved step sizes that re-warm
/// during the first half of the budget.
#[allow(clippy::too_many_arguments)]
fn main_phase(
    dataset: &[LearnSample],
    feats: &Features,
    start_obj: f64,
    start_gamma: [f64; 3],
    start_links: PolyLink,
    kind: ModelKind,
    config: &LearnerConfig,
    budget: usize,
) -> PhaseResult {
    let mut gamma = start_gamma;
    let mut links = start_links;
    let mut best_obj = if start_obj.is_finite() { start_obj } else { f64::INFINITY };
    let mut best_gamma = gamma;
    let mut best_links = links;
    let mut adam_gamma = AdamState::new(3, config.gamma_rate);
    let mut adam_beta = AdamState::new(3 * POLY_COEFFS, config.beta_rate);
    let mut history = Vec::with_capacity(budget.min(1 << 20));
    let mut converged = best_obj < config.mse_threshold;
    let mut iterations = 0usize;
    let mut rate_scale = 1.0f64;
    let mut since_improvement = 0usize;

    while !converged && iterations < budget {
        iterations += 1;

        if since_improvement >= config.plateau_patience {
            rate_scale *= config.plateau_decay;
            if rate_scale < 1e-4 && iterations < budget / 2 {
                rate_scale = 1.0;
            }
            gamma = best_gamma;
            links = best_links;
            adam_gamma.reset_with_rate(config.gamma_rate * rate_scale);
            adam_beta.reset_with_rate(config.beta_rate * rate_scale);
            since_improvement = 0;
        }

        // Step on gamma with the links frozen.
        let eval = eval_objective(dataset, feats, &gamma, &links, kind, true);
        if !eval.objective.is_finite() || eval.d_gamma.iter().any(|g| !g.is_finite()) {
            gamma = best_gamma;
            links = best_links;
            adam_gamma = AdamState::new(3, config.gamma_rate);
            adam_beta = AdamState::new(3 * POLY_COEFFS, config.beta_rate);
            history.push(best_obj);
            continue;
        }
        if eval.objective < best_obj {
            best_obj = eval.objective;
            best_gamma = gamma;
            best_links = links;
            since_improvement = 0;
        }
        adam_gamma.apply(&mut gamma, &eval.d_gamma, config);

        // Recompute predictions, then step on the links with gamma frozen.
        let eval = eval_objective(dataset, feats, &gamma, &links, kind, true);
        let beta_grad_finite = eval
            .d_beta
            .iter()
            .all(|row| row.iter().all(|g| g.is_finite()));
        if !eval.objective.is_finite() || !beta_grad_finite {
            gamma = best_gamma;
            links = best_links;
            adam_gamma = AdamState::new(3, config.gamma_rate);
            adam_beta = AdamState::new(3 * POLY_COEFFS, config.beta_rate);
            history.push(best_obj);
            continue;
        }
        if eval.objective < best_obj {
            best_obj = eval.objective;
            best_gamma = gamma;
            best_links = links;
            since_improvement = 0;
        }
        let mut flat: Vec<f64> = links_to_flat(&links);
        let grad_flat: Vec<f64> = grad_to_flat(&eval.d_beta);
        adam_beta.apply(&mut flat, &grad_flat, config);
        links = links_from_flat(&flat);

        since_improvement += 1;
        history.push(best_obj);
        converged = best_obj < config.mse_threshold;
    }

    // Final check of the last iterate.
    let final_eval = eval_objective(dataset, feats, &gamma, &links, kind, false);
    if final_eval.objective.is_finite() && final_eval.objective < best_obj {
        best_obj = final_eval.objective;
        best_gamma = gamma;
        best_links = links;
    }

    PhaseResult {
        best_obj,
        gamma: best_gamma,
        links: best_links,
        iterations,
        history,
    }
}

/// Short alternating-descent run used by pretraining. Returns the best
/// objective reached and the parameters attaining it.
fn burn_in(
    dataset: &[LearnSample],
    feats: &Features,
    mut gamma: [f64; 3],
    mut links: PolyLink,
    kind: ModelKind,
    config: &LearnerConfig,
    iters: usize,
) -> (f64, [f64; 3], PolyLink) {
    let mut adam_gamma = AdamState::new(3, config.gamma_rate);
    let mut adam_beta = AdamState::new(3 * POLY_COEFFS, config.beta_rate);
    let mut best = (f64::INFINITY, gamma, links);
    for _ in 0..iters {
        let eval = eval_objective(dataset, feats, &gamma, &links, kind, true);
        if !eval.objective.is_finite() || eval.d_gamma.iter().any(|g| !g.is_finite()) {
            break;
        }
        if eval.objective < best.0 {
            best = (eval.objective, gamma, links);
        }
        adam_gamma.apply(&mut gamma, &eval.d_gamma, config);

        let eval = eval_objective(dataset, feats, &gamma, &links, kind, true);
        let finite = eval.objective.is_finite()
            && eval.d_beta.iter().all(|row| row.iter().all(|g| g.is_finite()));
        if !finite {
            break;
        }
        if eval.objective < best.0 {
            best = (eval.objective, gamma, links);
        }
        let mut flat = links_to_flat(&links);
        adam_beta.apply(&mut flat, &grad_to_flat(&eval.d_beta), config);
        links = links_from_flat(&flat);
    }
    best
}

// ---------------------------------------------------------------------------
// Canonicalization of the reported exponents
// ---------------------------------------------------------------------------

/// The predictor only depends on gamma through the z-scored `log Pi`, which
/// leaves two freedoms: components of gamma along directions the dataset
/// never varies (z is exactly invariant), and a global sign flip of gamma
/// compensated by flipping the odd polynomial coefficients. Both are fixed
/// here so the reported exponent structure is reproducible. Along the
/// unidentified directions, gamma is chosen to minimize the density
/// exponents (gamma_2, gamma_3) with a small norm tie-break: when densities
/// are tied to the counts by a fixed arena, shared variation is attributed
/// to the counts, which are the controlled variables. The sign is chosen so
/// that z correlates positively with the per-sample steady-state metric
/// level. Predictions are unchanged.
fn canonicalize(
    dataset: &[LearnSample],
    feats: &Features,
    gamma: [f64; 3],
    links: PolyLink,
    _kind: ModelKind,
) -> ([f64; 3], PolyLink) {
    // Covariance of the centered log-base features.
    let n = feats.u.len() as f64;
    let mut cov = [[0.0f64; 3]; 3];
    for row in &feats.u {
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += (row[i] - feats.u_bar[i]) * (row[j] - feats.u_bar[j]);
            }
        }
    }
    for row in &mut cov {
        for v in row.iter_mut() {
            *v /= n;
        }
    }

    let (eigenvalues, eigenvectors) = sym_eigen3(cov);
    let max_eig = eigenvalues.iter().fold(0.0f64, |a, b| a.max(*b));
    let mut null_axes: Vec<[f64; 3]> = Vec::new();
    if max_eig > 0.0 {
        for (idx, &lambda) in eigenvalues.iter().enumerate() {
            if lambda < 1e-10 * max_eig {
                null_axes.push([
                    eigenvectors[0][idx],
                    eigenvectors[1][idx],
                    eigenvectors[2][idx],
                ]);
            }
        }
    }

    // Minimize gamma_2^2 + gamma_3^2 (+ tiny * |gamma|^2) over shifts along
    // the null axes: solve the K x K normal equations, K <= 3.
    let mut projected = gamma;
    let k = null_axes.len();
    if k > 0 {
        const RIDGE: f64 = 1e-9;
        let mut a = [[0.0f64; 3]; 3];
        let mut b = [0.0f64; 3];
        for (p, dp) in null_axes.iter().enumerate() {
            for (q, dq) in null_axes.iter().enumerate() {
                let mut dot = RIDGE * (dp[0] * dq[0] + dp[1] * dq[1] + dp[2] * dq[2]);
                for j in 1..3 {
                    dot += dp[j] * dq[j];
                }
                a[p][q] = dot;
            }
            let mut rhs = -RIDGE * (dp[0] * gamma[0] + dp[1] * gamma[1] + dp[2] * gamma[2]);
            for j in 1..3 {
                rhs -= dp[j] * gamma[j];
            }
            b[p] = rhs;
        }
        for p in k..3 {
            a[p][p] = 1.0;
            b[p] = 0.0;
        }
        if let Some(t) = solve3_shared(&a, &b) {
            for (axis, coeff) in null_axes.iter().zip(t.iter()) {
                for (g, d) in projected.iter_mut().zip(axis.iter()) {
                    *g += coeff * d;
                }
            }
        }
    }

    // Sign convention: z correlates positively with the steady metric level.
    let norm = norm_state(feats, &projected);
    let steady: Vec<f64> = dataset
        .iter()
        .map(|s| {
            let values = s.trace.values();
            let tail = values.len().div_ceil(5).max(1);
            median(&values[values.len() - tail..])
        })
        .collect();
    let z_mean = 0.0; // centered by construction
    let s_mean = steady.iter().sum::<f64>() / n;
    let mut covariance = 0.0;
    for (q, s) in norm.centered.iter().zip(steady.iter()) {
        covariance += (q / norm.sigma - z_mean) * (s - s_mean);
    }
    let mut out_links = links;
    if covariance < 0.0 {
        for p in &mut projected {
            *p = -*p;
        }
        for row in &mut out_links.coeffs {
            for (k, c) in row.iter_mut().enumerate() {
                if k % 2 == 1 {
                    *c = -*c;
                }
            }
        }
    }
    (projected, out_links)
}

/// Gaussian elimination with partial pivoting for the canonicalization
/// normal equations.
fn solve3_shared(a: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
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
                for idx in col..4 {
                    m[row][idx] -= factor * m[col][idx];
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

/// Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and the matrix of eigenvectors as columns.
fn sym_eigen3(mut a: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut v = [[0.0; 3]; 3];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _ in 0..64 {
        // Largest off-diagonal element.
        let pairs = [(0usize, 1usize), (0, 2), (1, 2)];
        let (p, q) = *pairs
            .iter()
            .max_by(|x, y| a[x.0][x.1].abs().total_cmp(&a[y.0][y.1].abs()))
            .expect("non-empty");
        let apq = a[p][q];
        let scale = a[0][0].abs() + a[1][1].abs() + a[2][2].abs();
        if apq.abs() <= 1e-15 * scale.max(1e-300) {
            break;
        }
        let tau = (a[q][q] - a[p][p]) / (2.0 * apq);
        let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
        let c = 1.0 / (1.0 + t * t).sqrt();
        let s = t * c;

        let app = a[p][p];
        let aqq = a[q][q];
        a[p][p] = app - t * apq;
        a[q][q] = aqq + t * apq;
        a[p][q] = 0.0;
        a[q][p] = 0.0;
        for r in 0..3 {
            if r != p && r != q {
                let arp = a[r][p];
                let arq = a[r][q];
                a[r][p] = c * arp - s * arq;
                a[p][r] = a[r][p];
                a[r][q] = s * arp + c * arq;
                a[q][r] = a[r][q];
            }
        }
        for r in 0..3 {
            let vrp = v[r][p];
            let vrq = v[r][q];
            v[r][p] = c * vrp - s * vrq;
            v[r][q] = s * vrp + c * vrq;
        }
    }
    ([a[0][0], a[1][1], a[2][2]], v)
}
