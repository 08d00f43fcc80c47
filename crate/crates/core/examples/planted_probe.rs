use mrmtt_core::dimension::{GammaVector, TeamTaskParams};
use mrmtt_core::learner::{learn, phi_of_pi, LearnSample, LearnerConfig, PolyLink};
use mrmtt_core::metrics::{MetricKind, PerfTrace};
use mrmtt_core::models::{predict, ModelKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn planted_theta_grid() -> Vec<TeamTaskParams> {
    let mut out = Vec::new();
    let radii = [3.0, 4.0, 5.0, 6.0, 7.0];
    let robot_areas = [6_000.0, 8_000.0, 10_000.0, 12_000.0, 14_000.0];
    let target_areas = [14_000.0, 12_000.0, 10_000.0, 8_000.0, 6_000.0];
    for (i, &n_r) in [10u32, 20, 30, 40, 50].iter().enumerate() {
        for (j, &n_t) in [10u32, 25, 40, 55, 70].iter().enumerate() {
            out.push(
                TeamTaskParams::from_counts(n_r, n_t, radii[(i + j) % 5], robot_areas[j], target_areas[i]).unwrap(),
            );
        }
    }
    out
}

fn main() {
    let gamma = GammaVector([0.9, -0.3, 0.4]);
    let mut links = PolyLink::zeros();
    links.coeffs[0] = [8.0, -1.5, 0.2, 0.0, 0.0];
    links.coeffs[1] = [0.06, 0.015, 0.0, 0.0, 0.0];
    links.coeffs[2] = [2.0, 0.8, 0.0, 0.0, 0.0];

    let thetas = planted_theta_grid();
    let times: Vec<f64> = (0..60).map(|i| i as f64).collect();
    let logs: Vec<f64> = thetas.iter().map(|t| mrmtt_core::dimension::log_pi(t, &gamma).unwrap()).collect();
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    let var = logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / logs.len() as f64;
    let std = var.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dist = Normal::new(0.0, 1e-300).unwrap();
    let dataset: Vec<LearnSample> = thetas
        .iter()
        .zip(logs.iter())
        .map(|(theta, log_pi)| {
            let z = (log_pi - mean) / std;
            let phi = phi_of_pi(z, &links);
            let values: Vec<f64> = times
                .iter()
                .map(|&t| (predict(ModelKind::Exponential, &phi, t) + dist.sample(&mut rng) * 0.0).max(0.0))
                .collect();
            LearnSample { theta: *theta, trace: PerfTrace::new(MetricKind::Ospa, times.clone(), values).unwrap() }
        })
        .collect();

    // Noisy recovery shaped like the acceptance criterion: noise 0.05, MSE
    // against the noiseless truth, direction cosine.
    let noise = Normal::new(0.0f64, 0.05).unwrap();
    let mut rng2 = ChaCha8Rng::seed_from_u64(40);
    let noisy: Vec<LearnSample> = dataset
        .iter()
        .map(|s| {
            let values: Vec<f64> = s.trace.values().iter().map(|v| (v + noise.sample(&mut rng2)).max(0.0)).collect();
            LearnSample { theta: s.theta, trace: PerfTrace::new(MetricKind::Ospa, s.trace.times().to_vec(), values).unwrap() }
        })
        .collect();

    for seed in [5u64, 6, 7, 8, 9, 10, 11, 12] {
        let mut config = LearnerConfig::with_seed(seed);
        let start = std::time::Instant::now();
        let out = learn(&noisy, ModelKind::Exponential, &config).unwrap();
        // MSE of predictions against the noiseless generating curves.
        let mut err = 0.0;
        let mut count = 0usize;
        for (clean, sample) in dataset.iter().zip(noisy.iter()) {
            let pred = out.model.predict_values(&sample.theta, clean.trace.times()).unwrap();
            for (p, y) in pred.iter().zip(clean.trace.values()) {
                err += (p - y) * (p - y);
                count += 1;
            }
        }
        err /= count as f64;
        let g = out.model.gamma.0;
        let dot: f64 = g.iter().zip(gamma.0.iter()).map(|(a, b)| a * b).sum();
        let cos = dot / (out.model.gamma.norm() * gamma.norm());
        println!("seed {seed}: truth-mse {err:.2e} cos {cos:+.3} train {:.2e} ({:.0?})", out.model.train_mse, start.elapsed());
    }
}
