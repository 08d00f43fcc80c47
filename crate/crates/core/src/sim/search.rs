//! Goal selection for the five search strategies.
//!
//! Each strategy reads the shared PHD intensity as its objective landscape
//! and proposes one goal position per robot; the trial loop then moves each
//! robot toward its goal under the speed cap. The optimization-inspired
//! strategies are deliberately simple adaptations of their namesakes, with
//! every constant in [`SimConfig`].

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::sim::config::{SearchAlgorithm, SimConfig};
use crate::sim::phd::PhdGrid;
use crate::sim::trial::WorldState;

/// Per-strategy mutable state carried across steps of one trial.
#[derive(Debug, Clone)]
pub(crate) enum SearchState {
    Lloyds,
    Sa {
        anchors: Vec<[f64; 2]>,
        temperature: f64,
        held_for: Vec<u32>,
    },
    Pso {
        velocity: Vec<[f64; 2]>,
        pbest: Vec<[f64; 2]>,
        pbest_val: Vec<f64>,
        pbest_age: Vec<u32>,
    },
    Aco { pheromone: Vec<f64>, goals: Vec<[f64; 2]>, remaining: Vec<u32> },
    Ais { waypoints: Vec<[f64; 2]> },
}

impl SearchState {
    pub(crate) fn new<R: Rng>(
        cfg: &SimConfig,
        robots: &[[f64; 2]],
        phd: &PhdGrid,
        rng: &mut R,
    ) -> Self {
        match cfg.algorithm {
            SearchAlgorithm::Lloyds => SearchState::Lloyds,
            SearchAlgorithm::Sa => SearchState::Sa {
                anchors: robots.to_vec(),
                temperature: cfg.sa.initial_temp,
                held_for: vec![0; robots.len()],
            },
            SearchAlgorithm::Pso => SearchState::Pso {
                // Nonzero starting velocities; on the uniform prior every
                // cell ties, and a swarm with zero velocity would never move.
                velocity: (0..robots.len())
                    .map(|_| {
                        let angle = rng.random::<f64>() * std::f64::consts::TAU;
                        let speed = 0.5 * cfg.pso.v_limit * rng.random::<f64>().sqrt();
                        [speed * angle.cos(), speed * angle.sin()]
                    })
                    .collect(),
                pbest: robots.to_vec(),
                pbest_val: robots.iter().map(|p| phd.value_at(*p)).collect(),
                pbest_age: vec![0; robots.len()],
            },
            SearchAlgorithm::Aco => SearchState::Aco {
                pheromone: vec![1.0; phd.cell_count()],
                goals: robots.to_vec(),
                remaining: vec![0; robots.len()],
            },
            SearchAlgorithm::Ais => {
                let pop = (2 * robots.len()).max(16);
                let waypoints = (0..pop)
                    .map(|_| uniform_point(cfg.arena_width, cfg.arena_height, rng))
                    .collect();
                SearchState::Ais { waypoints }
            }
        }
    }
}

/// Compute one goal per robot and advance the strategy state.
pub fn step_search<R: Rng>(
    world: &mut WorldState,
    cfg: &SimConfig,
    rng: &mut R,
) -> Vec<[f64; 2]> {
    let robots = world.robots.clone();
    match &mut world.search {
        SearchState::Lloyds => lloyds_goals(&robots, &world.phd, cfg),
        SearchState::Sa { anchors, temperature, held_for } => {
            let goals = sa_goals(anchors, held_for, *temperature, &world.phd, cfg, rng);
            *temperature *= cfg.sa.cooling;
            goals
        }
        SearchState::Pso { velocity, pbest, pbest_val, pbest_age } => {
            pso_goals(&robots, velocity, pbest, pbest_val, pbest_age, &world.phd, cfg, rng)
        }
        SearchState::Aco { pheromone, goals, remaining } => {
            aco_goals(&robots, pheromone, goals, remaining, &world.phd, cfg, rng)
        }
        SearchState::Ais { waypoints } => ais_goals(&robots, waypoints, &world.phd, cfg, rng),
    }
}

fn clamp_to_arena(p: [f64; 2], cfg: &SimConfig) -> [f64; 2] {
    [p[0].clamp(0.0, cfg.arena_width), p[1].clamp(0.0, cfg.arena_height)]
}

fn uniform_point<R: Rng>(width: f64, height: f64, rng: &mut R) -> [f64; 2] {
    [rng.random::<f64>() * width, rng.random::<f64>() * height]
}

// --- Lloyd's -----------------------------------------------------------

/// Weighted centroid of each robot's Voronoi cell, with the PHD intensity as
/// the weight. The grid is sampled at `lloyd_stride` to bound the cost; a
/// robot whose cell carries no mass falls back to the unweighted centroid.
fn lloyds_goals(robots: &[[f64; 2]], phd: &PhdGrid, cfg: &SimConfig) -> Vec<[f64; 2]> {
    let n = robots.len();
    let mut w_sum = vec![0.0f64; n];
    let mut w_xy = vec![[0.0f64; 2]; n];
    let mut count = vec![0usize; n];
    let mut c_xy = vec![[0.0f64; 2]; n];

    let stride = cfg.lloyd_stride as usize;
    for row in (0..phd.rows()).step_by(stride) {
        for col in (0..phd.cols()).step_by(stride) {
            let idx = phd.index(row, col);
            let c = phd.cell_center(idx);
            let mut owner = 0usize;
            let mut best = f64::INFINITY;
            for (i, robot) in robots.iter().enumerate() {
                let d2 = (c[0] - robot[0]).powi(2) + (c[1] - robot[1]).powi(2);
                if d2 < best {
                    best = d2;
                    owner = i;
                }
            }
            let w = phd.intensity()[idx];
            w_sum[owner] += w;
            w_xy[owner][0] += w * c[0];
            w_xy[owner][1] += w * c[1];
            count[owner] += 1;
            c_xy[owner][0] += c[0];
            c_xy[owner][1] += c[1];
        }
    }

    robots
        .iter()
        .enumerate()
        .map(|(i, robot)| {
            if w_sum[i] > 1e-12 {
                [w_xy[i][0] / w_sum[i], w_xy[i][1] / w_sum[i]]
            } else if count[i] > 0 {
                [c_xy[i][0] / count[i] as f64, c_xy[i][1] / count[i] as f64]
            } else {
                *robot
            }
        })
        .collect()
}

// --- Simulated annealing ------------------------------------------------

/// Each robot keeps an anchor point and proposes a uniform-disk displacement
/// snapped to the best nearby cell, accepted by the Metropolis rule on the
/// PHD intensity. The temperature follows a geometric schedule shared by the
/// team; an anchor held past the hold budget takes the next proposal
/// unconditionally.
fn sa_goals<R: Rng>(
    anchors: &mut [[f64; 2]],
    held_for: &mut [u32],
    temperature: f64,
    phd: &PhdGrid,
    cfg: &SimConfig,
    rng: &mut R,
) -> Vec<[f64; 2]> {
    for (anchor, held) in anchors.iter_mut().zip(held_for.iter_mut()) {
        let angle = rng.random::<f64>() * std::f64::consts::TAU;
        let radius = cfg.sa.step_len * rng.random::<f64>().sqrt();
        let proposal = clamp_to_arena(
            [anchor[0] + radius * angle.cos(), anchor[1] + radius * angle.sin()],
            cfg,
        );
        let kick = *held >= cfg.sa.hold_steps;

        // Snap to the strongest cell around the proposal. A hold-kick takes
        // the raw proposal instead, otherwise it would snap straight back
        // onto the maximum the anchor is leaving.
        let mut candidate = proposal;
        let mut proposed = phd.value_at(proposal);
        if !kick {
            phd.cells_in_disk(proposal, cfg.sa.snap_radius, |idx| {
                let v = phd.intensity()[idx];
                if v > proposed {
                    proposed = v;
                    candidate = phd.cell_center(idx);
                }
            });
        }

        let current = phd.value_at(*anchor);
        let accept = if kick || proposed >= current {
            true
        } else if temperature > 0.0 {
            rng.random::<f64>() < ((proposed - current) / temperature).exp()
        } else {
            false
        };
        if accept {
            let moved = (candidate[0] - anchor[0]).powi(2)
                + (candidate[1] - anchor[1]).powi(2)
                > phd.cell_size() * phd.cell_size();
            *anchor = candidate;
            *held = if moved { 0 } else { held.saturating_add(1) };
        } else {
            *held = held.saturating_add(1);
        }
    }
    anchors.to_vec()
}

// --- Particle swarm -----------------------------------------------------

/// Personal best is the highest-intensity cell seen inside the robot's own
/// field of view, excluding cells already claimed by a lower-index robot;
/// a held best fades with age so the robot eventually moves on (the belief
/// keeps the discovered target either way). The neighborhood best is shared
/// among robots within `neighbor_radius`. Velocities blend inertia with both
/// attractions.
#[allow(clippy::too_many_arguments)]
fn pso_goals<R: Rng>(
    robots: &[[f64; 2]],
    velocity: &mut [[f64; 2]],
    pbest: &mut [[f64; 2]],
    pbest_val: &mut [f64],
    pbest_age: &mut [u32],
    phd: &PhdGrid,
    cfg: &SimConfig,
    rng: &mut R,
) -> Vec<[f64; 2]> {
    let excl2 = cfg.pso.exclusion_radius * cfg.pso.exclusion_radius;
    for (i, robot) in robots.iter().enumerate() {
        // Refresh against the current belief (explored-away cells lose
        // their pull) and fade with age.
        pbest_age[i] = pbest_age[i].saturating_add(1);
        pbest_val[i] =
            phd.value_at(pbest[i]) * cfg.pso.memory_decay.powi(pbest_age[i] as i32);

        let claims = &pbest[..i];
        let mut best_val = f64::NEG_INFINITY;
        let mut best_d2 = -1.0f64;
        let mut best_pos = *robot;
        phd.cells_in_disk(*robot, cfg.fov_radius, |idx| {
            let v = phd.intensity()[idx];
            if v < best_val {
                return;
            }
            let c = phd.cell_center(idx);
            let d2 = (c[0] - robot[0]).powi(2) + (c[1] - robot[1]).powi(2);
            // Ties break toward the farthest cell: on a flat belief the
            // swarm pushes outward instead of idling on its own cell.
            if v == best_val && d2 <= best_d2 {
                return;
            }
            let claimed = claims
                .iter()
                .any(|p| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) <= excl2);
            if !claimed {
                best_val = v;
                best_d2 = d2;
                best_pos = c;
            }
        });
        if best_val > pbest_val[i] {
            pbest_val[i] = best_val;
            pbest[i] = best_pos;
            pbest_age[i] = 0;
        }
    }

    let nr2 = cfg.pso.neighbor_radius * cfg.pso.neighbor_radius;
    let mut goals = Vec::with_capacity(robots.len());
    for (i, robot) in robots.iter().enumerate() {
        let mut nbest = pbest[i];
        let mut nbest_val = pbest_val[i];
        for (j, other) in robots.iter().enumerate() {
            let d2 = (robot[0] - other[0]).powi(2) + (robot[1] - other[1]).powi(2);
            if d2 <= nr2 && pbest_val[j] > nbest_val {
                nbest_val = pbest_val[j];
                nbest = pbest[j];
            }
        }

        let v = &mut velocity[i];
        for dim in 0..2 {
            let r1 = rng.random::<f64>();
            let r2 = rng.random::<f64>();
            v[dim] = cfg.pso.inertia * v[dim]
                + cfg.pso.cognitive * r1 * (pbest[i][dim] - robot[dim])
                + cfg.pso.social * r2 * (nbest[dim] - robot[dim]);
        }
        let speed = (v[0] * v[0] + v[1] * v[1]).sqrt();
        if speed > cfg.pso.v_limit {
            let scale = cfg.pso.v_limit / speed;
            v[0] *= scale;
            v[1] *= scale;
        }
        goals.push(clamp_to_arena([robot[0] + v[0], robot[1] + v[1]], cfg));
    }
    goals
}

// --- Ant colony ---------------------------------------------------------

/// A team-wide pheromone grid evaporates geometrically and is reinforced in
/// proportion to the PHD intensity; robots sample goal cells from it and
/// commit to a sampled goal for a fixed number of steps.
fn aco_goals<R: Rng>(
    robots: &[[f64; 2]],
    pheromone: &mut [f64],
    goals: &mut [[f64; 2]],
    remaining: &mut [u32],
    phd: &PhdGrid,
    cfg: &SimConfig,
    rng: &mut R,
) -> Vec<[f64; 2]> {
    for (tau, nu) in pheromone.iter_mut().zip(phd.intensity().iter()) {
        *tau = (1.0 - cfg.aco.evaporation) * *tau + cfg.aco.deposit * nu;
    }

    let mut cumulative = Vec::with_capacity(pheromone.len());
    let mut total = 0.0;
    for tau in pheromone.iter() {
        total += tau + cfg.aco.floor;
        cumulative.push(total);
    }

    for (i, _robot) in robots.iter().enumerate() {
        if remaining[i] == 0 {
            let u = rng.random::<f64>() * total;
            let idx = cumulative.partition_point(|acc| *acc < u).min(pheromone.len() - 1);
            goals[i] = phd.cell_center(idx);
            remaining[i] = cfg.aco.commit_steps;
        } else {
            remaining[i] -= 1;
        }
    }
    goals.to_vec()
}

// --- Artificial immune system -------------------------------------------

/// Clonal selection over a waypoint population: high-affinity (high-PHD)
/// waypoints are cloned with a hypermutation radius that shrinks with
/// affinity, the weakest are replaced by random newcomers, and robots are
/// greedily assigned to the strongest waypoints.
fn ais_goals<R: Rng>(
    robots: &[[f64; 2]],
    waypoints: &mut Vec<[f64; 2]>,
    phd: &PhdGrid,
    cfg: &SimConfig,
    rng: &mut R,
) -> Vec<[f64; 2]> {
    let pop = waypoints.len();
    let mut scored: Vec<(f64, [f64; 2])> =
        waypoints.iter().map(|w| (phd.value_at(*w), *w)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let keep = pop / 2;
    let max_aff = scored[0].0;
    let mut candidates: Vec<(f64, [f64; 2])> = scored[..keep].to_vec();
    for &(aff, point) in &scored[..keep] {
        let aff_norm = if max_aff > 0.0 { aff / max_aff } else { 0.0 };
        let sigma = cfg.ais.mutation_radius * (1.0 - 0.8 * aff_norm);
        for _ in 0..cfg.ais.clones {
            let dx: f64 = StandardNormal.sample(rng);
            let dy: f64 = StandardNormal.sample(rng);
            let clone = clamp_to_arena([point[0] + sigma * dx, point[1] + sigma * dy], cfg);
            candidates.push((phd.value_at(clone), clone));
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0));

    let newcomers = ((pop as f64 * cfg.ais.newcomer_fraction) as usize).min(pop - 1);
    waypoints.clear();
    waypoints.extend(candidates.iter().take(pop - newcomers).map(|(_, p)| *p));
    while waypoints.len() < pop {
        waypoints.push(uniform_point(cfg.arena_width, cfg.arena_height, rng));
    }

    // Greedy unique assignment of robots to the strongest waypoints.
    let top = &waypoints[..robots.len().min(waypoints.len())];
    let mut claimed = vec![false; top.len()];
    robots
        .iter()
        .map(|robot| {
            let mut best = None;
            let mut best_d2 = f64::INFINITY;
            for (j, w) in top.iter().enumerate() {
                if claimed[j] {
                    continue;
                }
                let d2 = (w[0] - robot[0]).powi(2) + (w[1] - robot[1]).powi(2);
                if d2 < best_d2 {
                    best_d2 = d2;
                    best = Some(j);
                }
            }
            match best {
                Some(j) => {
                    claimed[j] = true;
                    top[j]
                }
                None => *robot,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::trial::spawn_world;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lloyds_on_uniform_phd_gives_unweighted_centroids() {
        let cfg = SimConfig::new(4, 5, 5.0, SearchAlgorithm::Lloyds, 9);
        let world = spawn_world(&cfg).unwrap();
        let goals = lloyds_goals(&world.robots, &world.phd, &cfg);

        // Reference: unweighted centroid over the same sampled cells.
        let zero_weight = PhdGrid::uniform(cfg.arena_width, cfg.arena_height, cfg.grid_cell, 0.0);
        let reference = lloyds_goals(&world.robots, &zero_weight, &cfg);
        for (g, r) in goals.iter().zip(reference.iter()) {
            assert_relative_eq!(g[0], r[0], max_relative = 1e-9);
            assert_relative_eq!(g[1], r[1], max_relative = 1e-9);
        }
    }

    #[test]
    fn sa_at_zero_temperature_never_worsens() {
        let mut cfg = SimConfig::new(8, 5, 5.0, SearchAlgorithm::Sa, 11);
        cfg.sa.initial_temp = 0.0;
        let mut world = spawn_world(&cfg).unwrap();
        // Shape the landscape so proposals actually differ in value.
        for idx in 0..world.phd.cell_count() {
            let c = world.phd.cell_center(idx);
            world.phd.set_intensity(idx, (c[0] + 2.0 * c[1]) / 1000.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut last_vals: Vec<f64> = match &world.search {
            SearchState::Sa { anchors, .. } => {
                anchors.iter().map(|a| world.phd.value_at(*a)).collect()
            }
            _ => unreachable!(),
        };
        for _ in 0..40 {
            let goals = step_search(&mut world, &cfg, &mut rng);
            for (goal, last) in goals.iter().zip(last_vals.iter_mut()) {
                let v = world.phd.value_at(*goal);
                assert!(v >= *last - 1e-15, "accepted a worsening move: {v} < {last}");
                *last = v;
            }
        }
    }

    #[test]
    fn pso_drifts_toward_the_only_hot_cell() {
        let mut cfg = SimConfig::new(6, 5, 5.0, SearchAlgorithm::Pso, 21);
        cfg.pso.social = 2.5;
        let mut world = spawn_world(&cfg).unwrap();
        for idx in 0..world.phd.cell_count() {
            world.phd.set_intensity(idx, 0.0);
        }
        // Inside robot 0's starting field of view, so the swarm finds it.
        let hot = [world.robots[0][0] + 1.0, world.robots[0][1] + 1.0];
        let hot_idx = world.phd.cell_containing(hot).unwrap();
        world.phd.set_intensity(hot_idx, 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mean_dist = |world: &WorldState| {
            world
                .robots
                .iter()
                .map(|r| ((r[0] - hot[0]).powi(2) + (r[1] - hot[1]).powi(2)).sqrt())
                .sum::<f64>()
                / world.robots.len() as f64
        };
        let before = mean_dist(&world);
        for _ in 0..50 {
            let goals = step_search(&mut world, &cfg, &mut rng);
            let max_step = cfg.v_max * cfg.dt();
            for (pos, goal) in world.robots.iter_mut().zip(goals.iter()) {
                let dx = goal[0] - pos[0];
                let dy = goal[1] - pos[1];
                let dist = (dx * dx + dy * dy).sqrt();
                if dist > 1e-12 {
                    let scale = (max_step / dist).min(1.0);
                    pos[0] += dx * scale;
                    pos[1] += dy * scale;
                }
            }
        }
        let after = mean_dist(&world);
        assert!(after < before, "mean distance {before} -> {after}");
    }

    #[test]
    fn aco_samples_goals_from_the_grid() {
        let cfg = SimConfig::new(5, 5, 5.0, SearchAlgorithm::Aco, 31);
        let mut world = spawn_world(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let goals = step_search(&mut world, &cfg, &mut rng);
        assert_eq!(goals.len(), 5);
        for g in goals {
            assert!(g[0] >= 0.0 && g[0] <= cfg.arena_width);
            assert!(g[1] >= 0.0 && g[1] <= cfg.arena_height);
        }
    }

    #[test]
    fn ais_population_size_is_stable_and_goals_unique() {
        let cfg = SimConfig::new(7, 5, 5.0, SearchAlgorithm::Ais, 41);
        let mut world = spawn_world(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let goals = step_search(&mut world, &cfg, &mut rng);
            assert_eq!(goals.len(), 7);
            match &world.search {
                SearchState::Ais { waypoints } => assert_eq!(waypoints.len(), 16),
                _ => unreachable!(),
            }
            for (i, a) in goals.iter().enumerate() {
                for b in goals.iter().skip(i + 1) {
                    assert!(a != b, "duplicate goal {a:?}");
                }
            }
        }
    }
}
