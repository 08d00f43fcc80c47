use mrmtt_core::dataset::{aggregate, TrialFileRecord};
use mrmtt_core::learner::{learn, LearnSample, LearnerConfig};
use mrmtt_core::metrics::{downsample_median, MetricKind};
use mrmtt_core::models::ModelKind;
use mrmtt_core::sim::{expand_grid, run_grid, ExperimentGrid, SearchAlgorithm, SimConfig};

fn main() {
    let template = SimConfig::new(10, 10, 5.0, SearchAlgorithm::Sa, 0);
    let grid = ExperimentGrid {
        template,
        n_r_values: vec![10, 30, 50],
        n_t_values: vec![10, 30, 50],
        fov_values: vec![3.0, 5.0, 7.0],
        algorithms: vec![SearchAlgorithm::Sa, SearchAlgorithm::Lloyds],
        trials: 3,
        seed_base: 2024,
    };
    let outcome = run_grid(&expand_grid(&grid));
    let records: Vec<TrialFileRecord> =
        outcome.records.iter().map(TrialFileRecord::from_record).collect();
    let aggregated = aggregate(&records).unwrap();

    for (algo, kind) in [
        (SearchAlgorithm::Sa, ModelKind::Exponential),
        (SearchAlgorithm::Lloyds, ModelKind::Sigmoid),
    ] {
        let samples: Vec<LearnSample> = aggregated
            .iter()
            .filter(|s| s.algorithm == algo)
            .map(|s| LearnSample {
                theta: s.theta,
                trace: downsample_median(&s.trace(MetricKind::Ospa), 10).unwrap(),
            })
            .collect();
        println!("== {algo} {kind:?} ({} samples)", samples.len());
        let mut results: Vec<(f64, f64, f64)> = Vec::new();
        for seed in 0..24u64 {
            let mut cfg = LearnerConfig::with_seed(seed);
            cfg.max_iters = 8000;
            let out = learn(&samples, kind, &cfg).unwrap();
            let g = out.model.gamma.0;
            let c1 = g[0] + g[2];
            let c2 = g[1] + g[2];
            results.push((out.model.train_mse, c1, c2));
        }
        results.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (mse, c1, c2) in results.iter().take(8) {
            println!("  mse {mse:.3}  c1 {c1:+.2} c2 {c2:+.2}  w_nt>0: {}  w_nr<0: {}",
                (2.0 * c1 - c2) > 0.0, (c1 + c2) > 0.0);
        }
    }
}
