//! Trial execution: world setup, the sense/update/estimate/move loop, and
//! deterministic parallel grid runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dimension::TeamTaskParams;
use crate::metrics::{
    exploration_inefficiency, ospa, MetricKind, PerfTrace, TargetSet, DEFAULT_OSPA_CUTOFF,
    DEFAULT_OSPA_ORDER,
};
use crate::sim::config::{SearchAlgorithm, SimConfig, SimError};
use crate::sim::phd::{estimate_targets, fov_cells, phd_step, PhdGrid, SensorSweep};
use crate::sim::search::{step_search, SearchState};

/// Fraction of the arena width the robot start box spans, centered.
const START_BOX_WIDTH_FRACTION: (f64, f64) = (0.4, 0.6);
/// Fraction of the arena height the robot start box spans, from the bottom.
const START_BOX_HEIGHT_FRACTION: f64 = 0.1;

/// Mutable state of one running trial.
#[derive(Debug, Clone)]
pub struct WorldState {
    pub robots: Vec<[f64; 2]>,
    pub targets: TargetSet,
    pub phd: PhdGrid,
    explored: Vec<bool>,
    explored_count: usize,
    pub clock: f64,
    pub(crate) search: SearchState,
}

impl WorldState {
    /// Cells whose center has ever been inside any robot's field of view.
    pub fn explored_mask(&self) -> &[bool] {
        &self.explored
    }

    /// Explored area in square meters.
    pub fn explored_area(&self) -> f64 {
        self.explored_count as f64 * self.phd.cell_size() * self.phd.cell_size()
    }
}

/// One finished trial: the configuration fingerprint and both metric traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub algorithm: SearchAlgorithm,
    pub theta: TeamTaskParams,
    pub seed: u64,
    pub trial_id: u32,
    pub digest: u64,
    pub ospa_trace: PerfTrace,
    pub ei_trace: PerfTrace,
}

/// Spawn robots in the lower-central start box, targets uniformly over the
/// arena, and a uniform prior belief.
pub fn spawn_world(cfg: &SimConfig) -> Result<WorldState, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    spawn_world_with(cfg, &mut rng)
}

pub(crate) fn spawn_world_with<R: Rng>(
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<WorldState, SimError> {
    cfg.validate()?;
    let (x_lo, x_hi) = (
        START_BOX_WIDTH_FRACTION.0 * cfg.arena_width,
        START_BOX_WIDTH_FRACTION.1 * cfg.arena_width,
    );
    let y_hi = START_BOX_HEIGHT_FRACTION * cfg.arena_height;
    let robots: Vec<[f64; 2]> = (0..cfg.n_r)
        .map(|_| {
            [
                x_lo + rng.random::<f64>() * (x_hi - x_lo),
                rng.random::<f64>() * y_hi,
            ]
        })
        .collect();
    let targets = TargetSet::new(
        (0..cfg.n_t)
            .map(|_| {
                [
                    rng.random::<f64>() * cfg.arena_width,
                    rng.random::<f64>() * cfg.arena_height,
                ]
            })
            .collect(),
    )?;
    let phd = PhdGrid::uniform(
        cfg.arena_width,
        cfg.arena_height,
        cfg.grid_cell,
        cfg.initial_phd_mass,
    );
    let explored = vec![false; phd.cell_count()];
    let search = SearchState::new(cfg, &robots, &phd, rng);
    Ok(WorldState {
        robots,
        targets,
        phd,
        explored,
        explored_count: 0,
        clock: 0.0,
        search,
    })
}

/// Noisy detections of the targets inside one robot's field of view: each
/// in-range target is reported with probability `1 - p_fn`, perturbed by
/// zero-mean Gaussian noise with the configured covariance.
pub fn sense<R: Rng>(
    robot: [f64; 2],
    targets: &TargetSet,
    cfg: &SimConfig,
    rng: &mut R,
) -> Vec<[f64; 2]> {
    let r2 = cfg.fov_radius * cfg.fov_radius;
    let chol = cfg.noise_chol();
    let mut out = Vec::new();
    for t in targets.points() {
        let d2 = (t[0] - robot[0]).powi(2) + (t[1] - robot[1]).powi(2);
        if d2 > r2 {
            continue;
        }
        if rng.random::<f64>() < cfg.p_fn {
            continue;
        }
        let z0: f64 = StandardNormal.sample(rng);
        let z1: f64 = StandardNormal.sample(rng);
        out.push([
            t[0] + chol[0][0] * z0,
            t[1] + chol[1][0] * z0 + chol[1][1] * z1,
        ]);
    }
    out
}

/// Run one trial to completion. Deterministic given the configuration seed.
pub fn run_trial(cfg: &SimConfig) -> Result<TrialRecord, SimError> {
    run_trial_observed(cfg, 0, |_| {})
}

/// [`run_trial`] with a trial id folded into the record and an observer
/// called once after spawn and once after every step (useful for invariant
/// instrumentation).
pub fn run_trial_observed(
    cfg: &SimConfig,
    trial_id: u32,
    mut observer: impl FnMut(&WorldState),
) -> Result<TrialRecord, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut world = spawn_world_with(cfg, &mut rng)?;
    observer(&world);

    let steps = cfg.steps();
    let dt = cfg.dt();
    let max_step = cfg.v_max * dt;
    let mut times = Vec::with_capacity(steps);
    let mut ospa_values = Vec::with_capacity(steps);
    let mut ei_values = Vec::with_capacity(steps);

    for k in 0..steps {
        world.clock = k as f64 * dt;

        let sweeps: Vec<SensorSweep> = world
            .robots
            .iter()
            .map(|&center| SensorSweep {
                center,
                detections: sense(center, &world.targets, cfg, &mut rng),
            })
            .collect();
        let mask = fov_cells(&world.phd, &world.robots, cfg.fov_radius);
        phd_step(&mut world.phd, &sweeps, cfg);
        for (idx, covered) in mask.iter().enumerate() {
            if *covered && !world.explored[idx] {
                world.explored[idx] = true;
                world.explored_count += 1;
            }
        }

        let estimate = estimate_targets(&world.phd);
        times.push(world.clock);
        ospa_values.push(ospa(
            &world.targets,
            &estimate,
            DEFAULT_OSPA_CUTOFF,
            DEFAULT_OSPA_ORDER,
        )?);
        ei_values.push(exploration_inefficiency(
            world.explored_area(),
            world.phd.area(),
        )?);

        let goals = step_search(&mut world, cfg, &mut rng);
        for (pos, goal) in world.robots.iter_mut().zip(goals.iter()) {
            let dx = goal[0] - pos[0];
            let dy = goal[1] - pos[1];
            let dist = (dx * dx + dy * dy).sqrt();
            if dist > 1e-12 {
                let scale = (max_step / dist).min(1.0);
                pos[0] = (pos[0] + dx * scale).clamp(0.0, cfg.arena_width);
                pos[1] = (pos[1] + dy * scale).clamp(0.0, cfg.arena_height);
            }
        }
        observer(&world);
    }

    Ok(TrialRecord {
        algorithm: cfg.algorithm,
        theta: cfg.theta()?,
        seed: cfg.seed,
        trial_id,
        digest: config_digest(cfg, trial_id),
        ospa_trace: PerfTrace::new(MetricKind::Ospa, times.clone(), ospa_values)?,
        ei_trace: PerfTrace::new(MetricKind::Ei, times, ei_values)?,
    })
}

/// Stable fingerprint of (theta, algorithm, seed, trial id).
pub fn config_digest(cfg: &SimConfig, trial_id: u32) -> u64 {
    let mut h = Fnv1a::new();
    h.write(cfg.algorithm.name().as_bytes());
    h.write_u64(u64::from(cfg.n_r));
    h.write_u64(u64::from(cfg.n_t));
    h.write_u64(cfg.fov_radius.to_bits());
    h.write_u64(cfg.robot_area.unwrap_or_else(|| cfg.arena_area()).to_bits());
    h.write_u64(cfg.target_area.unwrap_or_else(|| cfg.arena_area()).to_bits());
    h.write_u64(cfg.seed);
    h.write_u64(u64::from(trial_id));
    h.finish()
}

struct Fnv1a(u64);

impl Fnv1a {
    fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

/// Cartesian experiment grid over team sizes, target counts, radii, and
/// algorithms, with a fixed trial count per configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub template: SimConfig,
    pub n_r_values: Vec<u32>,
    pub n_t_values: Vec<u32>,
    pub fov_values: Vec<f64>,
    pub algorithms: Vec<SearchAlgorithm>,
    pub trials: u32,
    pub seed_base: u64,
}

/// Expand a grid into per-trial configurations in a fixed nested order
/// (algorithm, radius, robots, targets, trial), each with a distinct seed
/// derived from the base seed.
pub fn expand_grid(grid: &ExperimentGrid) -> Vec<(SimConfig, u32)> {
    let mut out = Vec::new();
    let mut index: u64 = 0;
    for algo in &grid.algorithms {
        for &fov in &grid.fov_values {
            for &n_r in &grid.n_r_values {
                for &n_t in &grid.n_t_values {
                    for trial in 0..grid.trials {
                        let mut cfg = grid.template.clone();
                        cfg.algorithm = *algo;
                        cfg.fov_radius = fov;
                        cfg.n_r = n_r;
                        cfg.n_t = n_t;
                        cfg.seed = mix_seed(grid.seed_base, index);
                        out.push((cfg, trial));
                        index += 1;
                    }
                }
            }
        }
    }
    out
}

fn mix_seed(base: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the pair.
    let mut z = base ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub index: usize,
    pub summary: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    /// Successful trials, in expansion order.
    pub records: Vec<TrialRecord>,
    /// Failed trials, in expansion order; failures never abort the grid.
    pub failures: Vec<TrialFailure>,
}

/// Run every trial of the grid, in parallel, with deterministic output
/// order regardless of the thread count.
pub fn run_grid(specs: &[(SimConfig, u32)]) -> GridOutcome {
    run_grid_with_progress(specs, |_| {})
}

/// [`run_grid`] with a completion callback (called from worker threads).
pub fn run_grid_with_progress(
    specs: &[(SimConfig, u32)],
    on_trial_done: impl Fn(usize) + Sync,
) -> GridOutcome {
    let results: Vec<(usize, Result<TrialRecord, SimError>)> = specs
        .par_iter()
        .enumerate()
        .map(|(i, (cfg, trial_id))| {
            let result = run_trial_observed(cfg, *trial_id, |_| {});
            on_trial_done(i);
            (i, result)
        })
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (i, result) in results {
        match result {
            Ok(record) => records.push(record),
            Err(err) => {
                let (cfg, trial_id) = &specs[i];
                failures.push(TrialFailure {
                    index: i,
                    summary: format!(
                        "{} n_r={} n_t={} r={} trial={}",
                        cfg.algorithm, cfg.n_r, cfg.n_t, cfg.fov_radius, trial_id
                    ),
                    error: err.to_string(),
                });
            }
        }
    }
    GridOutcome { records, failures }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(algorithm: SearchAlgorithm, seed: u64) -> SimConfig {
        let mut cfg = SimConfig::new(8, 12, 5.0, algorithm, seed);
        cfg.duration = 30.0;
        cfg
    }

    #[test]
    fn spawn_is_deterministic_and_in_bounds() {
        let cfg = small_cfg(SearchAlgorithm::Sa, 42);
        let a = spawn_world(&cfg).unwrap();
        let b = spawn_world(&cfg).unwrap();
        assert_eq!(a.robots, b.robots);
        assert_eq!(a.targets, b.targets);

        for r in &a.robots {
            assert!(r[0] >= 40.0 && r[0] <= 60.0, "robot x {r:?}");
            assert!(r[1] >= 0.0 && r[1] <= 10.0, "robot y {r:?}");
        }
        for t in a.targets.points() {
            assert!(t[0] >= 0.0 && t[0] <= 100.0);
            assert!(t[1] >= 0.0 && t[1] <= 100.0);
        }

        let other = spawn_world(&small_cfg(SearchAlgorithm::Sa, 43)).unwrap();
        assert_ne!(a.robots, other.robots);
    }

    #[test]
    fn spawn_rejects_empty_counts() {
        let mut cfg = small_cfg(SearchAlgorithm::Sa, 1);
        cfg.n_r = 0;
        assert_eq!(spawn_world(&cfg).unwrap_err(), SimError::EmptyTeam);
        cfg.n_r = 5;
        cfg.n_t = 0;
        assert_eq!(spawn_world(&cfg).unwrap_err(), SimError::NoTargets);
    }

    #[test]
    fn sense_edge_cases() {
        let cfg = small_cfg(SearchAlgorithm::Sa, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);

        let far = TargetSet::new(vec![[90.0, 90.0]]).unwrap();
        assert!(sense([10.0, 10.0], &far, &cfg, &mut rng).is_empty());

        let mut exact = cfg.clone();
        exact.p_fn = 0.0;
        exact.meas_noise_cov = [[0.0, 0.0], [0.0, 0.0]];
        let near = TargetSet::new(vec![[12.0, 10.0], [10.0, 13.0]]).unwrap();
        let got = sense([10.0, 10.0], &near, &exact, &mut rng);
        assert_eq!(got, vec![[12.0, 10.0], [10.0, 13.0]]);
    }

    #[test]
    fn sense_detection_rate_matches_false_negative_rate() {
        let cfg = small_cfg(SearchAlgorithm::Sa, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let one = TargetSet::new(vec![[11.0, 10.0]]).unwrap();
        let trials = 100_000;
        let mut detected = 0usize;
        for _ in 0..trials {
            detected += sense([10.0, 10.0], &one, &cfg, &mut rng).len();
        }
        let rate = detected as f64 / trials as f64;
        assert!((rate - 0.8).abs() < 0.01, "detection rate {rate}");
    }

    #[test]
    fn trial_traces_have_expected_shape() {
        let cfg = small_cfg(SearchAlgorithm::Pso, 5);
        let record = run_trial(&cfg).unwrap();
        assert_eq!(record.ospa_trace.len(), 60);
        assert_eq!(record.ei_trace.len(), 60);
        assert_eq!(record.ospa_trace.times(), record.ei_trace.times());

        // Exploration inefficiency never increases.
        let ei = record.ei_trace.values();
        for pair in ei.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }

        // Tracking error starts near the cutoff.
        assert!(record.ospa_trace.values()[0] > 7.0);
    }

    #[test]
    fn trials_are_bit_identical_across_reruns() {
        for algorithm in SearchAlgorithm::ALL {
            let cfg = small_cfg(algorithm, 1234);
            let a = run_trial(&cfg).unwrap();
            let b = run_trial(&cfg).unwrap();
            assert_eq!(a, b, "{algorithm} not deterministic");
        }
    }

    #[test]
    fn grid_expansion_counts_and_keys() {
        let grid = ExperimentGrid {
            template: small_cfg(SearchAlgorithm::Sa, 0),
            n_r_values: vec![4, 6, 8],
            n_t_values: vec![5, 10, 15],
            fov_values: vec![5.0],
            algorithms: vec![SearchAlgorithm::Sa],
            trials: 3,
            seed_base: 77,
        };
        let specs = expand_grid(&grid);
        assert_eq!(specs.len(), 27);

        let outcome = run_grid(&specs);
        assert!(outcome.failures.is_empty());
        assert_eq!(outcome.records.len(), 27);

        let mut keys: Vec<(u64, u32)> =
            outcome.records.iter().map(|r| (r.digest, r.trial_id)).collect();
        keys.sort_unstable();
        keys.dedup();
        assert_eq!(keys.len(), 27, "digest+trial keys must be distinct");

        assert!(run_grid(&[]).records.is_empty());
    }

    #[test]
    fn grid_aggregates_failures_without_aborting() {
        let good = small_cfg(SearchAlgorithm::Sa, 3);
        let mut bad = small_cfg(SearchAlgorithm::Sa, 4);
        bad.n_t = 0;
        let outcome = run_grid(&[(good, 0), (bad, 1)]);
        assert_eq!(outcome.records.len(), 1);
        assert_eq!(outcome.failures.len(), 1);
        assert_eq!(outcome.failures[0].index, 1);
    }
}
