//! Simulation configuration and validation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dimension::TeamTaskParams;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("false-negative rate must lie in [0, 1), got {0}")]
    BadFalseNegativeRate(f64),
    #[error("measurement covariance must be symmetric positive-definite")]
    BadCovariance,
    #[error("team must contain at least one robot")]
    EmptyTeam,
    #[error("scenario must contain at least one target")]
    NoTargets,
    #[error("unknown search algorithm {0:?}")]
    UnknownAlgorithm(String),
    #[error("metric failure inside trial: {0}")]
    Metric(#[from] crate::metrics::MetricsError),
    #[error("invalid team/task parameters: {0}")]
    Dimension(#[from] crate::dimension::DimensionError),
}

/// The five search strategies, each treating the PHD intensity as the
/// objective landscape to cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchAlgorithm {
    /// Weighted-centroid steps over the robot's Voronoi cell.
    Lloyds,
    /// Per-robot Metropolis moves with a geometric temperature schedule.
    Sa,
    /// Velocity blend of inertia, personal best, and neighborhood best.
    Pso,
    /// Goals sampled from a pheromone grid fed by the PHD.
    Aco,
    /// Affinity-proportional cloning of high-intensity waypoints.
    Ais,
}

impl SearchAlgorithm {
    pub const ALL: [SearchAlgorithm; 5] = [
        SearchAlgorithm::Lloyds,
        SearchAlgorithm::Sa,
        SearchAlgorithm::Pso,
        SearchAlgorithm::Aco,
        SearchAlgorithm::Ais,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SearchAlgorithm::Lloyds => "lloyds",
            SearchAlgorithm::Sa => "sa",
            SearchAlgorithm::Pso => "pso",
            SearchAlgorithm::Aco => "aco",
            SearchAlgorithm::Ais => "ais",
        }
    }
}

impl std::fmt::Display for SearchAlgorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SearchAlgorithm {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lloyds" | "lloyd" => Ok(SearchAlgorithm::Lloyds),
            "sa" => Ok(SearchAlgorithm::Sa),
            "pso" => Ok(SearchAlgorithm::Pso),
            "aco" => Ok(SearchAlgorithm::Aco),
            "ais" => Ok(SearchAlgorithm::Ais),
            other => Err(SimError::UnknownAlgorithm(other.to_string())),
        }
    }
}

/// Simulated-annealing constants. Proposals snap to the best cell within
/// `snap_radius` (the adaptation that locks anchors onto discovered
/// maxima); an anchor that has not moved for `hold_steps` accepts the next
/// proposal unconditionally, bounding the attention one discovery consumes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaParams {
    pub initial_temp: f64,
    pub cooling: f64,
    pub step_len: f64,
    pub snap_radius: f64,
    pub hold_steps: u32,
}

impl Default for SaParams {
    fn default() -> Self {
        Self {
            initial_temp: 0.05,
            cooling: 0.995,
            step_len: 10.0,
            snap_radius: 3.0,
            hold_steps: 400,
        }
    }
}

/// Particle-swarm constants. The niching extras (memory decay, exclusion
/// radius) keep the swarm from collapsing onto the first discovered target:
/// stale personal bests fade, and a cell already claimed by a lower-index
/// robot cannot be claimed again.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsoParams {
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Cap on the velocity magnitude, in meters per step.
    pub v_limit: f64,
    /// Radius of the best-sharing neighborhood; infinite means team-wide.
    pub neighbor_radius: f64,
    /// Per-step decay of a held personal best's value.
    pub memory_decay: f64,
    /// Personal bests of other robots exclude cells within this radius.
    pub exclusion_radius: f64,
}

impl Default for PsoParams {
    fn default() -> Self {
        Self {
            inertia: 0.72,
            cognitive: 2.0,
            social: 0.8,
            v_limit: 10.0,
            neighbor_radius: 15.0,
            memory_decay: 0.999,
            exclusion_radius: 3.0,
        }
    }
}

/// Ant-colony constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcoParams {
    pub evaporation: f64,
    pub deposit: f64,
    /// Additive sampling floor so fully evaporated cells stay reachable.
    pub floor: f64,
    /// Steps a sampled goal is kept before resampling; arriving early means
    /// holding position at the goal for the remainder (the attention a
    /// discovered target consumes).
    pub commit_steps: u32,
}

impl Default for AcoParams {
    fn default() -> Self {
        Self { evaporation: 0.05, deposit: 6.0, floor: 1e-4, commit_steps: 140 }
    }
}

/// Artificial-immune-system constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AisParams {
    /// Clones spawned per selected waypoint.
    pub clones: u32,
    pub mutation_radius: f64,
    /// Fraction of the population replaced by random newcomers each step.
    pub newcomer_fraction: f64,
}

impl Default for AisParams {
    fn default() -> Self {
        Self { clones: 2, mutation_radius: 12.0, newcomer_fraction: 0.05 }
    }
}

/// Full configuration of one simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub arena_width: f64,
    pub arena_height: f64,
    /// Trial length in seconds.
    pub duration: f64,
    /// Sensing rate in Hz; one simulation step per sensing period.
    pub sense_rate: f64,
    /// Maximum robot speed in m/s.
    pub v_max: f64,
    /// Field-of-view radius in meters.
    pub fov_radius: f64,
    /// Probability of failing to detect a target inside the field of view.
    pub p_fn: f64,
    /// Measurement noise covariance (meters squared).
    pub meas_noise_cov: [[f64; 2]; 2],
    pub n_r: u32,
    pub n_t: u32,
    pub algorithm: SearchAlgorithm,
    pub seed: u64,
    /// PHD/exploration grid cell edge in meters.
    pub grid_cell: f64,
    /// Total mass of the uniform initial PHD (expected target count prior).
    pub initial_phd_mass: f64,
    /// Area the robot density is measured against; defaults to the arena.
    pub robot_area: Option<f64>,
    /// Area the target density is measured against; defaults to the arena.
    pub target_area: Option<f64>,
    /// Cell stride when sampling the grid for Voronoi centroids.
    pub lloyd_stride: u32,
    pub sa: SaParams,
    pub pso: PsoParams,
    pub aco: AcoParams,
    pub ais: AisParams,
}

impl SimConfig {
    /// A configuration with the documented defaults: 100x100 m arena, 300 s
    /// at 2 Hz, 2 m/s robots, 20% missed detections, 0.25*I measurement
    /// noise, 1 m grid cells, uniform prior mass 50.
    pub fn new(n_r: u32, n_t: u32, fov_radius: f64, algorithm: SearchAlgorithm, seed: u64) -> Self {
        Self {
            arena_width: 100.0,
            arena_height: 100.0,
            duration: 300.0,
            sense_rate: 2.0,
            v_max: 2.0,
            fov_radius,
            p_fn: 0.2,
            meas_noise_cov: [[0.25, 0.0], [0.0, 0.25]],
            n_r,
            n_t,
            algorithm,
            seed,
            grid_cell: 1.0,
            initial_phd_mass: 50.0,
            robot_area: None,
            target_area: None,
            lloyd_stride: 2,
            sa: SaParams::default(),
            pso: PsoParams::default(),
            aco: AcoParams::default(),
            ais: AisParams::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let positive = |name: &'static str, value: f64| {
            if value > 0.0 && value.is_finite() {
                Ok(())
            } else {
                Err(SimError::NonPositive { name, value })
            }
        };
        positive("arena_width", self.arena_width)?;
        positive("arena_height", self.arena_height)?;
        positive("duration", self.duration)?;
        positive("sense_rate", self.sense_rate)?;
        positive("v_max", self.v_max)?;
        positive("fov_radius", self.fov_radius)?;
        positive("grid_cell", self.grid_cell)?;
        positive("initial_phd_mass", self.initial_phd_mass)?;
        positive("lloyd_stride", f64::from(self.lloyd_stride))?;
        if let Some(a) = self.robot_area {
            positive("robot_area", a)?;
        }
        if let Some(a) = self.target_area {
            positive("target_area", a)?;
        }
        if !(0.0..1.0).contains(&self.p_fn) {
            return Err(SimError::BadFalseNegativeRate(self.p_fn));
        }
        let [[a, b], [c, d]] = self.meas_noise_cov;
        let symmetric = (b - c).abs() <= 1e-12 * b.abs().max(c.abs()).max(1.0);
        let spd = a > 0.0 && a * d - b * c > 0.0;
        if !(symmetric && spd && [a, b, c, d].iter().all(|v| v.is_finite())) {
            return Err(SimError::BadCovariance);
        }
        if self.n_r == 0 {
            return Err(SimError::EmptyTeam);
        }
        if self.n_t == 0 {
            return Err(SimError::NoTargets);
        }
        Ok(())
    }

    /// Seconds per simulation step.
    pub fn dt(&self) -> f64 {
        1.0 / self.sense_rate
    }

    /// Number of simulation steps (samples per trace).
    pub fn steps(&self) -> usize {
        (self.duration * self.sense_rate).round().max(1.0) as usize
    }

    pub fn arena_area(&self) -> f64 {
        self.arena_width * self.arena_height
    }

    /// The team/task parameter vector this configuration realizes.
    pub fn theta(&self) -> Result<TeamTaskParams, SimError> {
        let robot_area = self.robot_area.unwrap_or_else(|| self.arena_area());
        let target_area = self.target_area.unwrap_or_else(|| self.arena_area());
        Ok(TeamTaskParams::from_counts(
            self.n_r,
            self.n_t,
            self.fov_radius,
            robot_area,
            target_area,
        )?)
    }

    /// Lower-triangular Cholesky factor of the measurement covariance.
    /// Tolerates the degenerate all-zero covariance (exact measurements).
    pub(crate) fn noise_chol(&self) -> [[f64; 2]; 2] {
        let [[a, b], [_, d]] = self.meas_noise_cov;
        let l11 = a.max(0.0).sqrt();
        let l21 = if l11 > 0.0 { b / l11 } else { 0.0 };
        let l22 = (d - l21 * l21).max(0.0).sqrt();
        [[l11, 0.0], [l21, l22]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let cfg = SimConfig::new(10, 20, 5.0, SearchAlgorithm::Sa, 1);
        cfg.validate().unwrap();
        assert_eq!(cfg.steps(), 600);
        assert_eq!(cfg.dt(), 0.5);
    }

    #[test]
    fn validation_catches_bad_fields() {
        let mut cfg = SimConfig::new(10, 20, 5.0, SearchAlgorithm::Sa, 1);
        cfg.p_fn = 1.0;
        assert_eq!(cfg.validate().unwrap_err(), SimError::BadFalseNegativeRate(1.0));

        let mut cfg = SimConfig::new(10, 20, 5.0, SearchAlgorithm::Sa, 1);
        cfg.meas_noise_cov = [[0.25, 0.6], [0.6, 0.25]];
        assert_eq!(cfg.validate().unwrap_err(), SimError::BadCovariance);

        let cfg = SimConfig::new(0, 20, 5.0, SearchAlgorithm::Sa, 1);
        assert_eq!(cfg.validate().unwrap_err(), SimError::EmptyTeam);

        let cfg = SimConfig::new(10, 0, 5.0, SearchAlgorithm::Sa, 1);
        assert_eq!(cfg.validate().unwrap_err(), SimError::NoTargets);
    }

    #[test]
    fn theta_uses_exact_density_ratios() {
        let cfg = SimConfig::new(30, 70, 5.0, SearchAlgorithm::Pso, 1);
        let theta = cfg.theta().unwrap();
        assert_eq!(theta.rho_r, 30.0 / 10_000.0);
        assert_eq!(theta.rho_t, 70.0 / 10_000.0);

        let mut decoupled = cfg;
        decoupled.robot_area = Some(5_000.0);
        let theta = decoupled.theta().unwrap();
        assert_eq!(theta.rho_r, 30.0 / 5_000.0);
    }

    #[test]
    fn algorithm_names_round_trip() {
        for algo in SearchAlgorithm::ALL {
            assert_eq!(algo.name().parse::<SearchAlgorithm>().unwrap(), algo);
        }
        assert!(matches!(
            "gradient".parse::<SearchAlgorithm>(),
            Err(SimError::UnknownAlgorithm(_))
        ));
    }
}
