use mrmtt_core::dataset::{aggregate, split, TrialFileRecord};
use mrmtt_core::learner::{learn, LearnSample, LearnerConfig};
use mrmtt_core::metrics::{downsample_median, median, steady_state, MetricKind};
use mrmtt_core::models::ModelKind;
use mrmtt_core::sim::{expand_grid, run_grid, ExperimentGrid, SearchAlgorithm, SimConfig};
use std::time::Instant;

fn main() {
    let template = SimConfig::new(10, 10, 5.0, SearchAlgorithm::Sa, 0);
    let grid = ExperimentGrid {
        template,
        n_r_values: vec![10, 30, 50],
        n_t_values: vec![10, 30, 50],
        fov_values: vec![3.0, 5.0, 7.0],
        algorithms: SearchAlgorithm::ALL.to_vec(),
        trials: 3,
        seed_base: 2024,
    };
    let specs = expand_grid(&grid);
    let start = Instant::now();
    let outcome = run_grid(&specs);
    eprintln!("grid in {:.1?}", start.elapsed());

    // Criterion 8 probe: steady-state median vs n_r at n_t=50, r=5.
    for algo in SearchAlgorithm::ALL {
        let mut line = format!("{algo}: ");
        for n_r in [10u32, 30, 50] {
            let steadies: Vec<f64> = outcome
                .records
                .iter()
                .filter(|r| {
                    r.algorithm == algo
                        && r.theta.n_r == n_r as f64
                        && r.theta.n_t == 50.0
                        && r.theta.r == 5.0
                })
                .map(|r| steady_state(&r.ospa_trace, 50.0).unwrap())
                .collect();
            line += &format!("n_r={n_r}: {:.3}  ", median(&steadies));
        }
        println!("{line}");
    }

    // Criteria 9/10 probe: learn both kinds per algorithm on OSPA.
    let records: Vec<TrialFileRecord> =
        outcome.records.iter().map(TrialFileRecord::from_record).collect();
    let aggregated = aggregate(&records).unwrap();
    let t_learn = Instant::now();
    for algo in SearchAlgorithm::ALL {
        let per_algo: Vec<_> = aggregated.iter().filter(|s| s.algorithm == algo).collect();
        let samples: Vec<LearnSample> = per_algo
            .iter()
            .map(|s| LearnSample {
                theta: s.theta,
                trace: downsample_median(&s.trace(MetricKind::Ospa), 10).unwrap(),
            })
            .collect();
        let (train, test) = split(&samples, 0.7, 7);
        for kind in [ModelKind::Exponential, ModelKind::Sigmoid] {
            let mut cfg = LearnerConfig::with_seed(7);
            cfg.pretrain_restarts = 24;
            cfg.pretrain_iters = 1000;
            cfg.finalists = 4;
            let out = learn(&train, kind, &cfg).unwrap();
            let test_mse = out.model.evaluate(&test).unwrap();
            let g = out.model.gamma.0;
            let ok10 = out.model.w.0[1] > 0.0
                && out.model.w.0[0] < 0.0
                && g[0].abs() >= g[1].abs()
                && g[0].abs() >= g[2].abs();
            println!(
                "{algo} {kind:?}: train {:.4} test {:.4} ratio {:.2} w=[{:.2},{:.2},{:.2},{:.2},{:.2}] gamma=[{:.2},{:.2},{:.2}] crit10 {}",
                out.model.train_mse,
                test_mse,
                test_mse / out.model.train_mse,
                out.model.w.0[0], out.model.w.0[1], out.model.w.0[2], out.model.w.0[3], out.model.w.0[4],
                g[0], g[1], g[2],
                if ok10 { "PASS" } else { "FAIL" }
            );
        }
    }
    eprintln!("learning in {:.1?}", t_learn.elapsed());
}
