//! Centralized grid approximation of the probability-hypothesis-density
//! belief over target positions.
//!
//! Cells covered by a field of view with no detection support decay toward
//! zero; each detection redistributes one expected target of mass as a
//! Gaussian kernel weighted by the prior intensity. Mass outside every field
//! of view is untouched, so discovered targets persist in the belief.

use crate::metrics::TargetSet;
use crate::sim::SimConfig;

/// Nonnegative expected-target intensity per grid cell, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PhdGrid {
    cols: usize,
    rows: usize,
    cell: f64,
    intensity: Vec<f64>,
}

impl PhdGrid {
    /// Uniform grid over a `width x height` arena with the given total mass.
    pub fn uniform(width: f64, height: f64, cell: f64, total_mass: f64) -> Self {
        let cols = (width / cell).ceil().max(1.0) as usize;
        let rows = (height / cell).ceil().max(1.0) as usize;
        let n = cols * rows;
        Self { cols, rows, cell, intensity: vec![total_mass / n as f64; n] }
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    pub fn intensity(&self) -> &[f64] {
        &self.intensity
    }

    /// Grid-covered area in square meters.
    pub fn area(&self) -> f64 {
        (self.cols as f64 * self.cell) * (self.rows as f64 * self.cell)
    }

    pub fn cell_count(&self) -> usize {
        self.intensity.len()
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    #[inline]
    pub fn cell_center(&self, idx: usize) -> [f64; 2] {
        let row = idx / self.cols;
        let col = idx % self.cols;
        [(col as f64 + 0.5) * self.cell, (row as f64 + 0.5) * self.cell]
    }

    /// Index of the cell containing `p`, if inside the grid.
    pub fn cell_containing(&self, p: [f64; 2]) -> Option<usize> {
        if p[0] < 0.0 || p[1] < 0.0 {
            return None;
        }
        let col = (p[0] / self.cell) as usize;
        let row = (p[1] / self.cell) as usize;
        (col < self.cols && row < self.rows).then(|| self.index(row, col))
    }

    /// Intensity of the cell containing `p`; zero outside the grid.
    pub fn value_at(&self, p: [f64; 2]) -> f64 {
        self.cell_containing(p).map_or(0.0, |i| self.intensity[i])
    }

    pub fn total_mass(&self) -> f64 {
        self.intensity.iter().sum()
    }

    pub fn set_intensity(&mut self, idx: usize, value: f64) {
        assert!(value >= 0.0 && value.is_finite());
        self.intensity[idx] = value;
    }

    /// Visit every cell whose center lies within `radius` of `center`.
    pub(crate) fn cells_in_disk(&self, center: [f64; 2], radius: f64, mut f: impl FnMut(usize)) {
        let r2 = radius * radius;
        let col_lo = ((center[0] - radius) / self.cell).floor().max(0.0) as usize;
        let col_hi = (((center[0] + radius) / self.cell).ceil() as usize).min(self.cols);
        let row_lo = ((center[1] - radius) / self.cell).floor().max(0.0) as usize;
        let row_hi = (((center[1] + radius) / self.cell).ceil() as usize).min(self.rows);
        for row in row_lo..row_hi {
            let cy = (row as f64 + 0.5) * self.cell;
            for col in col_lo..col_hi {
                let cx = (col as f64 + 0.5) * self.cell;
                let dx = cx - center[0];
                let dy = cy - center[1];
                if dx * dx + dy * dy <= r2 {
                    f(self.index(row, col));
                }
            }
        }
    }
}

/// One robot's sensing pass: its field-of-view center and the detections it
/// produced this step.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSweep {
    pub center: [f64; 2],
    pub detections: Vec<[f64; 2]>,
}

/// One measurement-update step of the grid belief, applying each robot's
/// sweep in sequence (robot order is part of the contract; the trial loop
/// uses team order).
///
/// Per sweep, cells inside the robot's field of view keep a fraction
/// `1 - p_d*(1 - p_fn)` of their mass (`p_d = 1` inside the field of view),
/// then each of its detections deposits at most one expected target,
/// distributed as a likelihood-times-prior kernel, or as a plain Gaussian
/// kernel when no prior mass supports it. Sequential per-sensor updates keep
/// the mass near a target at roughly one expected target no matter how many
/// fields of view overlap it. Mass outside every field of view is unchanged.
pub fn phd_step(phd: &mut PhdGrid, sweeps: &[SensorSweep], cfg: &SimConfig) {
    let p_det = 1.0 - cfg.p_fn;
    let survive = 1.0 - p_det;

    // Kernel geometry from the measurement covariance.
    let [[sxx, sxy], [_, syy]] = cfg.meas_noise_cov;
    let det = sxx * syy - sxy * sxy;
    let inv = [[syy / det, -sxy / det], [-sxy / det, sxx / det]];
    let reach = 3.5 * sxx.max(syy).sqrt();
    let fov2 = cfg.fov_radius * cfg.fov_radius;

    let mut additions: Vec<(usize, f64)> = Vec::new();
    let mut scratch: Vec<(usize, f64)> = Vec::new();
    for sweep in sweeps {
        // Kernel contributions against this robot's prior, before its decay.
        additions.clear();
        for z in &sweep.detections {
            scratch.clear();
            let mut support = 0.0;
            let mut plain = 0.0;
            phd.cells_in_disk(*z, reach, |idx| {
                let c = phd.cell_center(idx);
                let dx = c[0] - sweep.center[0];
                let dy = c[1] - sweep.center[1];
                if dx * dx + dy * dy > fov2 {
                    return;
                }
                let dx = c[0] - z[0];
                let dy = c[1] - z[1];
                let quad = inv[0][0] * dx * dx + 2.0 * inv[0][1] * dx * dy + inv[1][1] * dy * dy;
                let g = (-0.5 * quad).exp();
                scratch.push((idx, g));
                support += g * phd.intensity[idx];
                plain += g;
            });
            if support > 1e-300 {
                for &(idx, g) in &scratch {
                    additions.push((idx, g * phd.intensity[idx] / support));
                }
            } else if plain > 1e-300 {
                // Measurement-driven birth: no prior mass near this detection.
                for &(idx, g) in &scratch {
                    additions.push((idx, g / plain));
                }
            }
        }

        scratch.clear();
        phd.cells_in_disk(sweep.center, cfg.fov_radius, |idx| scratch.push((idx, 0.0)));
        for &(idx, _) in &scratch {
            phd.intensity[idx] *= survive;
        }
        for &(idx, mass) in &additions {
            phd.intensity[idx] += mass;
        }
    }
}

/// Boolean mask of cells inside any robot's field of view.
pub fn fov_cells(phd: &PhdGrid, robots: &[[f64; 2]], radius: f64) -> Vec<bool> {
    let mut mask = vec![false; phd.cell_count()];
    for robot in robots {
        phd.cells_in_disk(*robot, radius, |idx| mask[idx] = true);
    }
    mask
}

/// Extract a target-set estimate: round the total mass to an expected count
/// `k` and return the `k` highest local-maximum cell centers. Plateau ties
/// break toward the lowest (row, col).
pub fn estimate_targets(phd: &PhdGrid) -> TargetSet {
    let k = phd.total_mass().round();
    if k < 1.0 {
        return TargetSet::empty();
    }
    let k = k as usize;

    let (cols, rows) = (phd.cols as isize, phd.rows as isize);
    let mut candidates: Vec<(f64, usize)> = Vec::new();
    for row in 0..rows {
        'cells: for col in 0..cols {
            let idx = phd.index(row as usize, col as usize);
            let v = phd.intensity[idx];
            if v <= 0.0 {
                continue;
            }
            for dr in -1..=1isize {
                for dc in -1..=1isize {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (nr, nc) = (row + dr, col + dc);
                    if nr < 0 || nc < 0 || nr >= rows || nc >= cols {
                        continue;
                    }
                    if phd.intensity[phd.index(nr as usize, nc as usize)] > v {
                        continue 'cells;
                    }
                }
            }
            candidates.push((v, idx));
        }
    }

    // Highest intensity first; row-major order breaks plateau ties. The
    // candidate index is already row-major, so compare (value desc, idx asc).
    let cmp = |a: &(f64, usize), b: &(f64, usize)| {
        b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1))
    };
    let take = k.min(candidates.len());
    if take > 0 && take < candidates.len() {
        candidates.select_nth_unstable_by(take - 1, cmp);
        candidates.truncate(take);
    }
    candidates.sort_by(cmp);

    let points: Vec<[f64; 2]> = candidates.iter().take(take).map(|&(_, idx)| phd.cell_center(idx)).collect();
    TargetSet::new(points).expect("cell centers are finite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::SearchAlgorithm;

    fn cfg() -> SimConfig {
        SimConfig::new(5, 5, 5.0, SearchAlgorithm::Sa, 1)
    }

    #[test]
    fn untouched_without_coverage() {
        let mut phd = PhdGrid::uniform(20.0, 20.0, 1.0, 10.0);
        let before = phd.clone();
        phd_step(&mut phd, &[], &cfg());
        assert_eq!(phd, before);
    }

    #[test]
    fn empty_region_decays_monotonically_to_zero() {
        let mut phd = PhdGrid::uniform(20.0, 20.0, 1.0, 10.0);
        let sweep = SensorSweep { center: [10.0, 10.0], detections: vec![] };
        let watched = phd.cell_containing([10.0, 10.0]).unwrap();
        let mut last = phd.intensity()[watched];
        for _ in 0..50 {
            phd_step(&mut phd, std::slice::from_ref(&sweep), &cfg());
            let now = phd.intensity()[watched];
            assert!(now <= last);
            last = now;
        }
        assert!(last < 1e-10);
    }

    #[test]
    fn repeated_detection_pins_unit_mass() {
        let mut phd = PhdGrid::uniform(20.0, 20.0, 1.0, 4.0);
        let target = [10.3, 9.6];
        let sweep = SensorSweep { center: [10.0, 10.0], detections: vec![target] };
        for _ in 0..100 {
            phd_step(&mut phd, std::slice::from_ref(&sweep), &cfg());
        }
        let mut local = 0.0;
        phd.cells_in_disk(target, 3.0, |idx| local += phd.intensity()[idx]);
        assert!((0.5..=1.5).contains(&local), "local mass {local}");
    }

    #[test]
    fn overlapping_sensors_do_not_inflate_target_mass() {
        let mut phd = PhdGrid::uniform(20.0, 20.0, 1.0, 4.0);
        let target = [10.3, 9.6];
        // Four robots all covering the same target, each detecting it.
        let sweeps: Vec<SensorSweep> = [[10.0, 10.0], [11.0, 9.0], [9.0, 9.5], [10.5, 11.0]]
            .iter()
            .map(|&center| SensorSweep { center, detections: vec![target] })
            .collect();
        for _ in 0..100 {
            phd_step(&mut phd, &sweeps, &cfg());
        }
        let mut local = 0.0;
        phd.cells_in_disk(target, 3.0, |idx| local += phd.intensity()[idx]);
        assert!((0.5..=1.5).contains(&local), "local mass {local}");
    }

    #[test]
    fn mass_bookkeeping_bounds() {
        let mut phd = PhdGrid::uniform(30.0, 30.0, 1.0, 9.0);
        let sweeps = vec![
            SensorSweep { center: [5.0, 5.0], detections: vec![[5.5, 5.5]] },
            SensorSweep { center: [20.0, 20.0], detections: vec![[20.5, 19.5], [19.0, 20.0]] },
        ];
        for _ in 0..20 {
            let before = phd.total_mass();
            phd_step(&mut phd, &sweeps, &cfg());
            let after = phd.total_mass();
            assert!(after <= before + 3.0 + 1e-9);
            assert!(phd.intensity().iter().all(|v| *v >= 0.0 && v.is_finite()));
        }
    }

    #[test]
    fn estimate_of_zero_grid_is_empty() {
        let phd = PhdGrid::uniform(10.0, 10.0, 1.0, 0.0);
        assert!(estimate_targets(&phd).is_empty());
    }

    #[test]
    fn estimate_finds_single_bump() {
        let mut phd = PhdGrid::uniform(20.0, 20.0, 1.0, 0.0);
        let bump = [7.3, 11.2];
        // Crude Gaussian bump of total mass ~1.
        let mut total = 0.0;
        phd.cells_in_disk(bump, 3.0, |idx| {
            let c = phd.cell_center(idx);
            let d2 = (c[0] - bump[0]).powi(2) + (c[1] - bump[1]).powi(2);
            total += (-d2 / 0.5).exp();
        });
        let mut updates = Vec::new();
        phd.cells_in_disk(bump, 3.0, |idx| {
            let c = phd.cell_center(idx);
            let d2 = (c[0] - bump[0]).powi(2) + (c[1] - bump[1]).powi(2);
            updates.push((idx, (-d2 / 0.5).exp() / total));
        });
        for (idx, v) in updates {
            phd.set_intensity(idx, v);
        }
        let est = estimate_targets(&phd);
        assert_eq!(est.len(), 1);
        let p = est.points()[0];
        let dist = ((p[0] - bump[0]).powi(2) + (p[1] - bump[1]).powi(2)).sqrt();
        assert!(dist <= phd.cell_size() * 1.5, "estimate {p:?} vs bump {bump:?}");
    }

    #[test]
    fn estimate_separates_two_bumps() {
        let mut phd = PhdGrid::uniform(30.0, 30.0, 1.0, 0.0);
        let bumps = [[5.0, 5.0], [25.0, 25.0]];
        for b in bumps {
            let idx = phd.cell_containing(b).unwrap();
            phd.set_intensity(idx, 0.8);
            let neighbor = phd.cell_containing([b[0] + 1.0, b[1]]).unwrap();
            phd.set_intensity(neighbor, 0.2);
        }
        let est = estimate_targets(&phd);
        assert_eq!(est.len(), 2);
        for b in bumps {
            assert!(est
                .points()
                .iter()
                .any(|p| ((p[0] - b[0]).powi(2) + (p[1] - b[1]).powi(2)).sqrt() < 1.0));
        }
    }

    #[test]
    fn plateau_ties_break_row_major() {
        let phd = PhdGrid::uniform(10.0, 10.0, 1.0, 3.0);
        let est = estimate_targets(&phd);
        assert_eq!(est.points(), &[[0.5, 0.5], [1.5, 0.5], [2.5, 0.5]]);
    }
}
