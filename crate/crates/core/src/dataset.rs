//! Trial persistence, aggregation into the learning dataset, and the
//! train/test split.
//!
//! Trials are stored as line-delimited JSON records with an explicit schema
//! version; floats use the shortest round-trip decimal form so write-read is
//! lossless and files diff cleanly. Unknown fields survive a round trip.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dimension::TeamTaskParams;
use crate::metrics::{median_across_trials, MetricKind, MetricsError, PerfTrace};
use crate::models::{fit_single, FitOutcome, ModelKind, ModelsError};
use crate::sim::{SearchAlgorithm, TrialRecord};

/// Version stamp written into every record.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    MalformedLine { line: usize, source: serde_json::Error },
    #[error("line {line}: schema version {found} unsupported (expected {expected})")]
    VersionMismatch { line: usize, found: u32, expected: u32 },
    #[error("line {line}: {source}")]
    InvalidRecord { line: usize, source: MetricsError },
    #[error("group {group}: traces do not share a time grid")]
    InconsistentGroup { group: String },
    #[error("group {group}: {source}")]
    FitFailed { group: String, source: ModelsError },
    #[error("metric error: {0}")]
    Metric(#[from] MetricsError),
    #[error("serialization error: {0}")]
    Serialize(#[from] serde_json::Error),
}

/// One line of a trial file. Mirrors [`TrialRecord`] plus a version stamp;
/// unknown fields are preserved across read/write.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFileRecord {
    pub schema_version: u32,
    pub algorithm: SearchAlgorithm,
    pub n_r: f64,
    pub n_t: f64,
    pub r: f64,
    pub rho_r: f64,
    pub rho_t: f64,
    pub seed: u64,
    pub trial_id: u32,
    pub digest: u64,
    /// Samples as `[t, ospa, ei]` triples, sorted by `t`.
    pub samples: Vec<[f64; 3]>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl TrialFileRecord {
    pub fn from_record(record: &TrialRecord) -> Self {
        let samples = record
            .ospa_trace
            .times()
            .iter()
            .zip(record.ospa_trace.values())
            .zip(record.ei_trace.values())
            .map(|((t, o), e)| [*t, *o, *e])
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            algorithm: record.algorithm,
            n_r: record.theta.n_r,
            n_t: record.theta.n_t,
            r: record.theta.r,
            rho_r: record.theta.rho_r,
            rho_t: record.theta.rho_t,
            seed: record.seed,
            trial_id: record.trial_id,
            digest: record.digest,
            samples,
            extra: BTreeMap::new(),
        }
    }

    pub fn theta(&self) -> Result<TeamTaskParams, crate::dimension::DimensionError> {
        TeamTaskParams::new(self.n_r, self.n_t, self.r, self.rho_r, self.rho_t)
    }

    pub fn trace(&self, kind: MetricKind) -> Result<PerfTrace, MetricsError> {
        let times = self.samples.iter().map(|s| s[0]).collect();
        let values = self
            .samples
            .iter()
            .map(|s| match kind {
                MetricKind::Ospa => s[1],
                MetricKind::Ei => s[2],
            })
            .collect();
        PerfTrace::new(kind, times, values)
    }

    /// Key identifying the configuration a trial belongs to (exact on the
    /// float bits, so grouping never merges distinct configurations).
    pub fn group_key(&self) -> GroupKey {
        GroupKey {
            algorithm: self.algorithm,
            n_r: self.n_r.to_bits(),
            n_t: self.n_t.to_bits(),
            r: self.r.to_bits(),
            rho_r: self.rho_r.to_bits(),
            rho_t: self.rho_t.to_bits(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupKey {
    pub algorithm: SearchAlgorithm,
    n_r: u64,
    n_t: u64,
    r: u64,
    rho_r: u64,
    rho_t: u64,
}

/// Write trial records as line-delimited JSON.
pub fn write_trials<W: Write>(writer: W, records: &[TrialFileRecord]) -> Result<(), DatasetError> {
    let mut w = std::io::BufWriter::new(writer);
    for record in records {
        serde_json::to_writer(&mut w, record)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trials_path(path: &Path, records: &[TrialFileRecord]) -> Result<(), DatasetError> {
    write_trials(std::fs::File::create(path)?, records)
}

/// Read a trial file, reporting malformed lines by line number and refusing
/// unknown schema versions.
pub fn read_trials<R: Read>(reader: R) -> Result<Vec<TrialFileRecord>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrialFileRecord = serde_json::from_str(&line)
            .map_err(|source| DatasetError::MalformedLine { line: line_no, source })?;
        if record.schema_version != SCHEMA_VERSION {
            return Err(DatasetError::VersionMismatch {
                line: line_no,
                found: record.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        // Surface unsorted or non-finite samples early.
        record
            .trace(MetricKind::Ospa)
            .and_then(|_| record.trace(MetricKind::Ei))
            .map_err(|source| DatasetError::InvalidRecord { line: line_no, source })?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_trials_path(path: &Path) -> Result<Vec<TrialFileRecord>, DatasetError> {
    read_trials(std::fs::File::open(path)?)
}

/// Fits of both model kinds for one metric of one aggregated configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricFits {
    pub exponential: FitOutcome,
    pub sigmoid: FitOutcome,
}

/// One aggregated configuration: trial-median traces plus per-sample fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedSample {
    pub schema_version: u32,
    pub algorithm: SearchAlgorithm,
    pub theta: TeamTaskParams,
    pub trial_count: usize,
    pub times: Vec<f64>,
    pub ospa_median: Vec<f64>,
    pub ei_median: Vec<f64>,
    pub ospa_fits: MetricFits,
    /// Exploration-inefficiency fits are computed on the [0, 1] fraction
    /// scale (values divided by 100) so their MSE is comparable across
    /// metrics.
    pub ei_fits: MetricFits,
}

impl AggregatedSample {
    pub fn trace(&self, kind: MetricKind) -> PerfTrace {
        let values = match kind {
            MetricKind::Ospa => self.ospa_median.clone(),
            MetricKind::Ei => self.ei_median.clone(),
        };
        PerfTrace::new(kind, self.times.clone(), values).expect("aggregated traces are valid")
    }
}

/// Group trials by identical configuration, take the pointwise median across
/// each group, and fit both model kinds to both metrics.
pub fn aggregate(trials: &[TrialFileRecord]) -> Result<Vec<AggregatedSample>, DatasetError> {
    let mut groups: BTreeMap<GroupKey, Vec<&TrialFileRecord>> = BTreeMap::new();
    for t in trials {
        groups.entry(t.group_key()).or_default().push(t);
    }

    let mut out = Vec::new();
    for (key, group) in groups {
        let describe = || {
            let first = group[0];
            format!(
                "{} n_r={} n_t={} r={}",
                key.algorithm, first.n_r, first.n_t, first.r
            )
        };
        let collect_traces = |kind: MetricKind| -> Result<Vec<PerfTrace>, DatasetError> {
            group
                .iter()
                .map(|t| {
                    t.trace(kind)
                        .map_err(|_| DatasetError::InconsistentGroup { group: describe() })
                })
                .collect()
        };
        let ospa_median = median_across_trials(&collect_traces(MetricKind::Ospa)?)
            .map_err(|_| DatasetError::InconsistentGroup { group: describe() })?;
        let ei_median = median_across_trials(&collect_traces(MetricKind::Ei)?)
            .map_err(|_| DatasetError::InconsistentGroup { group: describe() })?;

        let fit_both = |trace: &PerfTrace| -> Result<MetricFits, DatasetError> {
            Ok(MetricFits {
                exponential: fit_single(trace, ModelKind::Exponential)
                    .map_err(|source| DatasetError::FitFailed { group: describe(), source })?,
                sigmoid: fit_single(trace, ModelKind::Sigmoid)
                    .map_err(|source| DatasetError::FitFailed { group: describe(), source })?,
            })
        };
        let ei_fraction = scale_ei_to_fraction(&ei_median)?;

        out.push(AggregatedSample {
            schema_version: SCHEMA_VERSION,
            algorithm: key.algorithm,
            theta: group[0].theta().expect("validated on read"),
            trial_count: group.len(),
            times: ospa_median.times().to_vec(),
            ospa_median: ospa_median.values().to_vec(),
            ei_median: ei_median.values().to_vec(),
            ospa_fits: fit_both(&ospa_median)?,
            ei_fits: fit_both(&ei_fraction)?,
        });
    }
    Ok(out)
}

/// Exploration inefficiency rescaled from percent to the [0, 1] fraction
/// scale used for fitting and learning.
pub fn scale_ei_to_fraction(trace: &PerfTrace) -> Result<PerfTrace, MetricsError> {
    PerfTrace::new(
        MetricKind::Ei,
        trace.times().to_vec(),
        trace.values().iter().map(|v| v / 100.0).collect(),
    )
}

pub fn write_aggregated<W: Write>(
    writer: W,
    samples: &[AggregatedSample],
) -> Result<(), DatasetError> {
    let mut w = std::io::BufWriter::new(writer);
    for sample in samples {
        serde_json::to_writer(&mut w, sample)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregated_path(path: &Path, samples: &[AggregatedSample]) -> Result<(), DatasetError> {
    write_aggregated(std::fs::File::create(path)?, samples)
}

pub fn read_aggregated<R: Read>(reader: R) -> Result<Vec<AggregatedSample>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: AggregatedSample = serde_json::from_str(&line)
            .map_err(|source| DatasetError::MalformedLine { line: line_no, source })?;
        if sample.schema_version != SCHEMA_VERSION {
            return Err(DatasetError::VersionMismatch {
                line: line_no,
                found: sample.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        out.push(sample);
    }
    Ok(out)
}

pub fn read_aggregated_path(path: &Path) -> Result<Vec<AggregatedSample>, DatasetError> {
    read_aggregated(std::fs::File::open(path)?)
}

/// Disjoint, exhaustive split: seeded uniform shuffle, then a prefix of
/// `round(train_fraction * n)` samples becomes the training set.
pub fn split<T: Clone>(dataset: &[T], train_fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = ((dataset.len() as f64) * train_fraction).round() as usize;
    let n_train = n_train.min(dataset.len());
    let train = order[..n_train].iter().map(|&i| dataset[i].clone()).collect();
    let test = order[n_train..].iter().map(|&i| dataset[i].clone()).collect();
    (train, test)
}
