use mrmtt_core::metrics::{median, steady_state};
use mrmtt_core::sim::{expand_grid, run_grid, ExperimentGrid, SearchAlgorithm, SimConfig};

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
    let outcome = run_grid(&expand_grid(&grid));

    // Median steady OSPA per (algo, n_r, n_t, r) then least squares of
    // log(steady) on x1 = ln(n_t/n_r), x2 = ln(r^2).
    for algo in SearchAlgorithm::ALL {
        let mut rows: Vec<(f64, f64, f64)> = Vec::new(); // (x1, x2, log steady)
        for n_r in [10u32, 30, 50] {
            for n_t in [10u32, 30, 50] {
                for r in [3.0f64, 5.0, 7.0] {
                    let vals: Vec<f64> = outcome
                        .records
                        .iter()
                        .filter(|rec| {
                            rec.algorithm == algo
                                && rec.theta.n_r == n_r as f64
                                && rec.theta.n_t == n_t as f64
                                && rec.theta.r == r
                        })
                        .map(|rec| steady_state(&rec.ospa_trace, 50.0).unwrap())
                        .collect();
                    let m = median(&vals).max(0.05);
                    rows.push(((n_t as f64 / n_r as f64).ln(), (r * r).ln(), m.ln()));
                }
            }
        }
        // 2-feature least squares with intercept.
        let n = rows.len() as f64;
        let (mut sx1, mut sx2, mut sy) = (0.0, 0.0, 0.0);
        for (x1, x2, y) in &rows {
            sx1 += x1;
            sx2 += x2;
            sy += y;
        }
        let (mx1, mx2, my) = (sx1 / n, sx2 / n, sy / n);
        let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (x1, x2, y) in &rows {
            let (u, v, w) = (x1 - mx1, x2 - mx2, y - my);
            a11 += u * u;
            a12 += u * v;
            a22 += v * v;
            b1 += u * w;
            b2 += v * w;
        }
        let det = a11 * a22 - a12 * a12;
        let c1 = (b1 * a22 - b2 * a12) / det;
        let c2 = (a11 * b2 - a12 * b1) / det;
        println!("{algo}: log-steady ~ {c1:+.3}*ln(nt/nr) {c2:+.3}*ln(r^2)   ratio-dominant: {}", c1.abs() > c2.abs());
    }
}
