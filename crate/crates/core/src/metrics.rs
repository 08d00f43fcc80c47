//! Team performance metrics: OSPA tracking error and exploration
//! inefficiency, plus the temporal and cross-trial aggregations applied to
//! their time series.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Median window for the steady-state estimate, in seconds.
pub const STEADY_WINDOW_SECS: f64 = 50.0;
/// Default OSPA cutoff distance in meters.
pub const DEFAULT_OSPA_CUTOFF: f64 = 10.0;
/// Default OSPA order.
pub const DEFAULT_OSPA_ORDER: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("cutoff distance must be positive and finite, got {0}")]
    BadCutoff(f64),
    #[error("order p must be >= 1 and finite, got {0}")]
    BadOrder(f64),
    #[error("target position must be finite, got ({0}, {1})")]
    NonFinitePoint(f64, f64),
    #[error("explored area {explored} exceeds total area {total}")]
    ExploredExceedsTotal { explored: f64, total: f64 },
    #[error("invalid areas: explored {explored}, total {total}")]
    BadAreas { explored: f64, total: f64 },
    #[error("trace must contain at least one sample")]
    EmptyTrace,
    #[error("trace has {times} timestamps but {values} values")]
    LengthMismatch { times: usize, values: usize },
    #[error("trace times must be finite and strictly increasing (offending index {0})")]
    NonMonotonicTimes(usize),
    #[error("{kind:?} value {value} at index {index} is outside its valid range")]
    ValueOutOfRange { kind: MetricKind, value: f64, index: usize },
    #[error("trace duration {duration} s does not exceed the {window} s window")]
    TraceShorterThanWindow { duration: f64, window: f64 },
    #[error("window must be positive and finite, got {0}")]
    BadWindow(f64),
    #[error("traces do not share one time grid")]
    MismatchedTimeGrids,
    #[error("traces mix metric kinds")]
    MixedKinds,
    #[error("batch size must be >= 1")]
    BadBatch,
    #[error("no traces given")]
    NoTraces,
}

/// A finite set of 2-D positions in meters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TargetSet {
    points: Vec<[f64; 2]>,
}

impl TargetSet {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self, MetricsError> {
        for p in &points {
            if !(p[0].is_finite() && p[1].is_finite()) {
                return Err(MetricsError::NonFinitePoint(p[0], p[1]));
            }
        }
        Ok(Self { points })
    }

    pub fn empty() -> Self {
        Self { points: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }
}

/// Which performance metric a trace records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    /// Optimal SubPattern Assignment tracking error, in meters within [0, cutoff].
    Ospa,
    /// Exploration inefficiency: unexplored percentage of the arena, in [0, 100].
    Ei,
}

/// Timestamped series of one metric for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfTrace {
    kind: MetricKind,
    times: Vec<f64>,
    values: Vec<f64>,
}

impl PerfTrace {
    pub fn new(kind: MetricKind, times: Vec<f64>, values: Vec<f64>) -> Result<Self, MetricsError> {
        if times.is_empty() {
            return Err(MetricsError::EmptyTrace);
        }
        if times.len() != values.len() {
            return Err(MetricsError::LengthMismatch { times: times.len(), values: values.len() });
        }
        for (i, t) in times.iter().enumerate() {
            if !t.is_finite() || (i > 0 && *t <= times[i - 1]) {
                return Err(MetricsError::NonMonotonicTimes(i));
            }
        }
        for (i, v) in values.iter().enumerate() {
            let ok = match kind {
                MetricKind::Ospa => v.is_finite() && *v >= 0.0,
                MetricKind::Ei => v.is_finite() && (0.0..=100.0).contains(v),
            };
            if !ok {
                return Err(MetricsError::ValueOutOfRange { kind, value: *v, index: i });
            }
        }
        Ok(Self { kind, times, values })
    }

    pub fn kind(&self) -> MetricKind {
        self.kind
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction guarantees at least one sample
    }

    pub fn duration(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }
}

/// OSPA distance between a ground-truth set and an estimated set.
///
/// The localization term uses the cutoff distance `d_c(x, y) = min(c, |x-y|)`
/// raised to power `p`, minimized over assignments of the smaller set into
/// the larger by an optimal assignment solver; the cardinality term charges
/// `c^p` per unmatched point. Both empty sets give 0 by convention.
pub fn ospa(x: &TargetSet, y: &TargetSet, cutoff: f64, order: f64) -> Result<f64, MetricsError> {
    if !(cutoff > 0.0 && cutoff.is_finite()) {
        return Err(MetricsError::BadCutoff(cutoff));
    }
    if !(order >= 1.0 && order.is_finite()) {
        return Err(MetricsError::BadOrder(order));
    }
    if x.is_empty() && y.is_empty() {
        return Ok(0.0);
    }
    if x.is_empty() || y.is_empty() {
        return Ok(cutoff);
    }
    let (small, large) = if x.len() <= y.len() { (x, y) } else { (y, x) };
    let m = small.len();
    let n = large.len();

    let cost: Vec<Vec<f64>> = small
        .points()
        .iter()
        .map(|a| {
            large
                .points()
                .iter()
                .map(|b| {
                    let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                    d.min(cutoff).powf(order)
                })
                .collect()
        })
        .collect();

    let assignment_cost = solve_assignment(&cost);
    let total = (assignment_cost + cutoff.powf(order) * (n - m) as f64) / n as f64;
    Ok(total.powf(1.0 / order).clamp(0.0, cutoff))
}

/// Minimum-cost assignment of every row to a distinct column (rows <= cols),
/// by shortest augmenting paths over dual potentials (Jonker-Volgenant).
fn solve_assignment(cost: &[Vec<f64>]) -> f64 {
    let m = cost.len();
    let n = cost[0].len();
    assert!(m <= n, "assignment expects rows <= cols");

    // col_to_row[n] is a virtual column used to start each augmentation.
    let mut col_to_row: Vec<Option<usize>> = vec![None; n + 1];
    let mut row_potential = vec![0.0f64; m];
    let mut col_potential = vec![0.0f64; n + 1];

    for row in 0..m {
        let mut cur_col = n;
        col_to_row[n] = Some(row);
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut prev_col: Vec<Option<usize>> = vec![None; n + 1];
        let mut visited = vec![false; n + 1];

        while let Some(cur_row) = col_to_row[cur_col] {
            visited[cur_col] = true;
            let mut delta = f64::INFINITY;
            let mut next_col = n;
            for col in 0..n {
                if visited[col] {
                    continue;
                }
                let reduced = cost[cur_row][col] - row_potential[cur_row] - col_potential[col];
                if reduced < min_to[col] {
                    min_to[col] = reduced;
                    prev_col[col] = Some(cur_col);
                }
                if min_to[col] < delta {
                    delta = min_to[col];
                    next_col = col;
                }
            }
            for col in 0..=n {
                if visited[col] {
                    if let Some(r) = col_to_row[col] {
                        row_potential[r] += delta;
                    }
                    col_potential[col] -= delta;
                } else {
                    min_to[col] -= delta;
                }
            }
            cur_col = next_col;
        }

        // Walk the augmenting path back to the virtual column.
        while cur_col != n {
            let back = prev_col[cur_col].expect("augmenting path is connected");
            col_to_row[cur_col] = col_to_row[back];
            cur_col = back;
        }
    }

    let mut total = 0.0;
    for col in 0..n {
        if let Some(row) = col_to_row[col] {
            total += cost[row][col];
        }
    }
    total
}

/// Percentage of the arena never covered by any robot field of view.
pub fn exploration_inefficiency(explored_area: f64, total_area: f64) -> Result<f64, MetricsError> {
    if !(total_area > 0.0 && total_area.is_finite())
        || !(explored_area >= 0.0 && explored_area.is_finite())
    {
        return Err(MetricsError::BadAreas { explored: explored_area, total: total_area });
    }
    if explored_area > total_area {
        return Err(MetricsError::ExploredExceedsTotal {
            explored: explored_area,
            total: total_area,
        });
    }
    Ok((1.0 - explored_area / total_area) * 100.0)
}

/// Median of the trace values in the final `window` seconds.
pub fn steady_state(trace: &PerfTrace, window: f64) -> Result<f64, MetricsError> {
    if !(window > 0.0 && window.is_finite()) {
        return Err(MetricsError::BadWindow(window));
    }
    let duration = trace.duration();
    if duration <= window {
        return Err(MetricsError::TraceShorterThanWindow { duration, window });
    }
    let t_end = trace.times[trace.times.len() - 1];
    let tail: Vec<f64> = trace
        .times
        .iter()
        .zip(trace.values.iter())
        .filter(|(t, _)| **t >= t_end - window)
        .map(|(_, v)| *v)
        .collect();
    Ok(median(&tail))
}

/// Pointwise median across trials sharing one time grid.
pub fn median_across_trials(traces: &[PerfTrace]) -> Result<PerfTrace, MetricsError> {
    let first = traces.first().ok_or(MetricsError::NoTraces)?;
    for t in &traces[1..] {
        if t.kind != first.kind {
            return Err(MetricsError::MixedKinds);
        }
        if t.times != first.times {
            return Err(MetricsError::MismatchedTimeGrids);
        }
    }
    let values: Vec<f64> = (0..first.len())
        .map(|i| {
            let column: Vec<f64> = traces.iter().map(|t| t.values[i]).collect();
            median(&column)
        })
        .collect();
    PerfTrace::new(first.kind, first.times.clone(), values)
}

/// Reduce consecutive non-overlapping batches of `batch` samples to their
/// (median time, median value); a trailing partial batch is reduced the same
/// way.
pub fn downsample_median(trace: &PerfTrace, batch: usize) -> Result<PerfTrace, MetricsError> {
    if batch == 0 {
        return Err(MetricsError::BadBatch);
    }
    let times: Vec<f64> = trace.times.chunks(batch).map(median).collect();
    let values: Vec<f64> = trace.values.chunks(batch).map(median).collect();
    PerfTrace::new(trace.kind, times, values)
}

/// Median with the usual midpoint convention for even counts.
/// Panics on an empty slice; callers guarantee at least one element.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn set(points: &[[f64; 2]]) -> TargetSet {
        TargetSet::new(points.to_vec()).unwrap()
    }

    #[test]
    fn ospa_identity_on_equal_sets() {
        let x = set(&[[1.0, 2.0], [30.0, 40.0], [5.5, 5.5]]);
        assert_eq!(ospa(&x, &x, 10.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn ospa_empty_conventions() {
        let empty = TargetSet::empty();
        let y = set(&[[1.0, 1.0], [2.0, 2.0]]);
        assert_eq!(ospa(&empty, &empty, 10.0, 1.0).unwrap(), 0.0);
        assert_eq!(ospa(&empty, &y, 10.0, 1.0).unwrap(), 10.0);
        assert_eq!(ospa(&y, &empty, 10.0, 1.0).unwrap(), 10.0);
    }

    #[test]
    fn ospa_cardinality_term() {
        // Two coincident points against the same two plus one far point:
        // localization 0, one unmatched at cutoff 10, n = 3.
        let x = set(&[[0.0, 0.0], [5.0, 5.0]]);
        let y = set(&[[0.0, 0.0], [5.0, 5.0], [90.0, 90.0]]);
        assert_relative_eq!(ospa(&x, &y, 10.0, 1.0).unwrap(), 10.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn ospa_rejects_bad_parameters() {
        let x = set(&[[0.0, 0.0]]);
        assert_eq!(ospa(&x, &x, 0.0, 1.0).unwrap_err(), MetricsError::BadCutoff(0.0));
        assert_eq!(ospa(&x, &x, 10.0, 0.5).unwrap_err(), MetricsError::BadOrder(0.5));
        assert!(TargetSet::new(vec![[f64::NAN, 0.0]]).is_err());
    }

    #[test]
    fn assignment_picks_global_minimum() {
        // Greedy row-by-row would pick 1.0 for row 0 and pay 10.0 for row 1.
        let cost = vec![vec![1.0, 2.0], vec![1.0, 10.0]];
        assert_relative_eq!(solve_assignment(&cost), 3.0);
    }

    #[test]
    fn exploration_inefficiency_examples() {
        assert_eq!(exploration_inefficiency(0.0, 10_000.0).unwrap(), 100.0);
        assert_eq!(exploration_inefficiency(10_000.0, 10_000.0).unwrap(), 0.0);
        assert_eq!(exploration_inefficiency(2_500.0, 10_000.0).unwrap(), 75.0);
        assert!(exploration_inefficiency(11_000.0, 10_000.0).is_err());
        assert!(exploration_inefficiency(1.0, 0.0).is_err());
    }

    fn trace(kind: MetricKind, values: &[f64]) -> PerfTrace {
        let times: Vec<f64> = (0..values.len()).map(|i| i as f64).collect();
        PerfTrace::new(kind, times, values.to_vec()).unwrap()
    }

    #[test]
    fn trace_validation() {
        assert!(PerfTrace::new(MetricKind::Ospa, vec![], vec![]).is_err());
        assert!(PerfTrace::new(MetricKind::Ospa, vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(PerfTrace::new(MetricKind::Ospa, vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(PerfTrace::new(MetricKind::Ei, vec![0.0, 1.0], vec![50.0, 101.0]).is_err());
        assert!(PerfTrace::new(MetricKind::Ospa, vec![0.0, 1.0], vec![-0.1, 1.0]).is_err());
    }

    #[test]
    fn steady_state_examples() {
        let constant = trace(MetricKind::Ospa, &[4.0; 100]);
        assert_eq!(steady_state(&constant, 50.0).unwrap(), 4.0);

        // Window covers exactly the final three samples {1, 2, 100}.
        let mut values = vec![7.0; 10];
        values[7] = 1.0;
        values[8] = 2.0;
        values[9] = 100.0;
        let t = trace(MetricKind::Ospa, &values);
        assert_eq!(steady_state(&t, 2.0).unwrap(), 2.0);

        let short = trace(MetricKind::Ospa, &[1.0, 2.0]);
        assert!(matches!(
            steady_state(&short, 50.0),
            Err(MetricsError::TraceShorterThanWindow { .. })
        ));
    }

    #[test]
    fn median_across_trials_examples() {
        let a = trace(MetricKind::Ei, &[1.0; 5]);
        let single = median_across_trials(std::slice::from_ref(&a)).unwrap();
        assert_eq!(single, a);

        let b = trace(MetricKind::Ei, &[5.0; 5]);
        let c = trace(MetricKind::Ei, &[9.0; 5]);
        let med = median_across_trials(&[a.clone(), b, c]).unwrap();
        assert_eq!(med.values(), &[5.0; 5]);

        let shifted = PerfTrace::new(
            MetricKind::Ei,
            vec![0.5, 1.5, 2.5, 3.5, 4.5],
            vec![1.0; 5],
        )
        .unwrap();
        assert_eq!(
            median_across_trials(&[a, shifted]).unwrap_err(),
            MetricsError::MismatchedTimeGrids
        );
    }

    #[test]
    fn downsample_examples() {
        let t = trace(MetricKind::Ospa, &[3.0; 25]);
        assert_eq!(downsample_median(&t, 1).unwrap(), t);

        let ten = trace(MetricKind::Ospa, &[2.0; 10]);
        let one = downsample_median(&ten, 10).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.values()[0], 2.0);

        let three = downsample_median(&t, 10).unwrap();
        assert_eq!(three.len(), 3);
        // Batch sizes 10, 10, 5: median times 4.5, 14.5, 22.0.
        assert_eq!(three.times(), &[4.5, 14.5, 22.0]);

        assert_eq!(downsample_median(&t, 0).unwrap_err(), MetricsError::BadBatch);
    }

    #[test]
    fn median_conventions() {
        assert_eq!(median(&[1.0, 2.0, 100.0]), 2.0);
        assert_eq!(median(&[1.0, 3.0]), 2.0);
        assert_eq!(median(&[5.0]), 5.0);
    }
}
