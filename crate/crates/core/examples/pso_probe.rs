use mrmtt_core::sim::{run_trial_observed, SearchAlgorithm, SimConfig};

fn main() {
    let cfg = SimConfig::new(30, 50, 5.0, SearchAlgorithm::Pso, 99);
    let mut step = 0usize;
    let record = run_trial_observed(&cfg, 0, |world| {
        if step % 120 == 0 {
            let mean_x: f64 = world.robots.iter().map(|r| r[0]).sum::<f64>() / world.robots.len() as f64;
            let mean_y: f64 = world.robots.iter().map(|r| r[1]).sum::<f64>() / world.robots.len() as f64;
            let spread: f64 = world
                .robots
                .iter()
                .map(|r| ((r[0] - mean_x).powi(2) + (r[1] - mean_y).powi(2)).sqrt())
                .sum::<f64>()
                / world.robots.len() as f64;
            println!(
                "t={:6.1} mean=({mean_x:5.1},{mean_y:5.1}) spread={spread:5.1} explored={:6.0} phd_mass={:6.2}",
                world.clock,
                world.explored_area(),
                world.phd.total_mass()
            );
        }
        step += 1;
    })
    .unwrap();
    println!("first OSPA {:.2}", record.ospa_trace.values()[0]);
    println!("last OSPA {:.2}", record.ospa_trace.values()[599]);
    println!("last EI {:.2}", record.ei_trace.values()[599]);
}
