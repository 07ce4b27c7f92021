//! Synthetic drifting-stream generators, a CSV loader, and the min-max
//! normalizer fitted on pretraining data.
//!
//! Region-based generators (`sea`, `circle`, `sine`) draw the class label
//! first (Bernoulli at the configured anomaly rate) and then rejection-
//! sample features inside the active concept's class region; boundary hits
//! are resampled. A drift event swaps the class regions. The `vib` generator
//! is density-based: the normal class follows an isotropic Gaussian whose
//! mean moves on drift, the anomalous class stays at mean 5.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("anomaly rate must lie in (0, 0.5), got {0}")]
    BadRate(f64),
    #[error("invalid drift schedule: {0}")]
    BadSchedule(String),
    #[error("csv: non-numeric value {value:?} at row {row}, column {col}")]
    NonNumeric { row: usize, col: usize, value: String },
    #[error("csv: non-finite value {value:?} at row {row}, column {col}")]
    NonFinite { row: usize, col: usize, value: String },
    #[error("csv: label must be 0 or 1 at row {row}, got {value:?}")]
    BadLabel { row: usize, value: String },
    #[error("csv: row {row} has {got} fields, header has {expected}")]
    Ragged { row: usize, expected: usize, got: usize },
    #[error("csv: file has no feature columns")]
    NoFeatures,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One streamed observation. The label is consumed by the evaluator only;
/// the engine never sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub features: Vec<f64>,
    pub label: Option<u8>,
    pub t: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    Sea,
    Circle,
    Sine,
    Vib,
}

impl GeneratorKind {
    pub fn feature_dim(self) -> usize {
        match self {
            GeneratorKind::Sea | GeneratorKind::Circle | GeneratorKind::Sine => 2,
            GeneratorKind::Vib => 10,
        }
    }

    /// Declared feature domain, when the generator has one. Density-based
    /// generators are unbounded and normalize from pretraining statistics
    /// instead.
    pub fn feature_ranges(self) -> Option<Vec<(f64, f64)>> {
        match self {
            GeneratorKind::Sea => Some(vec![(0.0, 10.0), (0.0, 10.0)]),
            GeneratorKind::Circle => Some(vec![(0.0, 1.0), (0.0, 1.0)]),
            GeneratorKind::Sine => {
                Some(vec![(0.0, std::f64::consts::PI), (-1.0, 1.0)])
            }
            GeneratorKind::Vib => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftKind {
    Abrupt,
    /// Linear interpolation toward the new concept over `duration` steps.
    Incremental,
    /// Return to the previous concept.
    RecurrentRevert,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DriftEvent {
    pub at: u64,
    pub kind: DriftKind,
    pub duration: u64,
}

impl DriftEvent {
    pub fn abrupt(at: u64) -> Self {
        Self { at, kind: DriftKind::Abrupt, duration: 0 }
    }

    pub fn incremental(at: u64, duration: u64) -> Self {
        Self { at, kind: DriftKind::Incremental, duration }
    }

    pub fn revert(at: u64) -> Self {
        Self { at, kind: DriftKind::RecurrentRevert, duration: 0 }
    }
}

/// Drift times and kinds from the standard benchmark layout of each
/// generator: `sea` drifts at 10000 and reverts at 15000, `circle`/`sine`
/// drift abruptly at 10000, `vib` ramps between 10000 and 11000.
pub fn default_schedule(kind: GeneratorKind) -> Vec<DriftEvent> {
    match kind {
        GeneratorKind::Sea => vec![DriftEvent::abrupt(10_000), DriftEvent::revert(15_000)],
        GeneratorKind::Circle | GeneratorKind::Sine => vec![DriftEvent::abrupt(10_000)],
        GeneratorKind::Vib => vec![DriftEvent::incremental(10_000, 1_000)],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamSpec {
    pub kind: GeneratorKind,
    pub length: u64,
    pub anomaly_rate: f64,
    pub schedule: Vec<DriftEvent>,
}

impl StreamSpec {
    pub fn new(
        kind: GeneratorKind,
        length: u64,
        anomaly_rate: f64,
        schedule: Vec<DriftEvent>,
    ) -> Result<Self, StreamError> {
        if !(anomaly_rate > 0.0 && anomaly_rate < 0.5) {
            return Err(StreamError::BadRate(anomaly_rate));
        }
        let mut prev = 0u64;
        for (i, ev) in schedule.iter().enumerate() {
            if i > 0 && ev.at <= prev {
                return Err(StreamError::BadSchedule(
                    "drift times must be strictly increasing".into(),
                ));
            }
            if ev.at >= length {
                return Err(StreamError::BadSchedule(format!(
                    "drift time {} is not before the stream end {length}",
                    ev.at
                )));
            }
            if ev.kind == DriftKind::Incremental {
                if kind != GeneratorKind::Vib {
                    return Err(StreamError::BadSchedule(
                        "incremental drift is only defined for the vib generator".into(),
                    ));
                }
                if ev.duration == 0 {
                    return Err(StreamError::BadSchedule(
                        "incremental drift needs a positive duration".into(),
                    ));
                }
            }
            prev = ev.at;
        }
        Ok(Self { kind, length, anomaly_rate, schedule })
    }
}

/// Class of `features` under the given region concept (0 = original
/// regions, 1 = swapped), or `None` for an exact boundary hit.
pub fn region_class(kind: GeneratorKind, concept: usize, features: &[f64]) -> Option<u8> {
    let base = match kind {
        GeneratorKind::Sea => {
            let s = features[0] + features[1];
            // C0: x1 + x2 > 7, C1 otherwise; the boundary belongs to C1.
            Some(if s > 7.0 { 0 } else { 1 })
        }
        GeneratorKind::Circle => {
            // Strict membership partitions the square: a point at distance
            // exactly radius is not inside.
            Some(if circle_inside(features) { 0 } else { 1 })
        }
        GeneratorKind::Sine => {
            let diff = features[1] - features[0].sin();
            if diff > 0.0 {
                Some(0)
            } else if diff < 0.0 {
                Some(1)
            } else {
                None
            }
        }
        GeneratorKind::Vib => panic!("vib is density-based, not region-based"),
    };
    base.map(|c| if concept % 2 == 1 { 1 - c } else { c })
}

pub const CIRCLE_CENTER: (f64, f64) = (0.4, 0.5);
pub const CIRCLE_RADIUS: f64 = 0.2;

fn circle_distance_sq(features: &[f64]) -> f64 {
    let dx = features[0] - CIRCLE_CENTER.0;
    let dy = features[1] - CIRCLE_CENTER.1;
    dx * dx + dy * dy
}

/// Strict membership: a point at distance exactly `radius` is not inside.
pub fn circle_inside(features: &[f64]) -> bool {
    circle_distance_sq(features) < CIRCLE_RADIUS * CIRCLE_RADIUS
}

const VIB_NORMAL_MEAN_A: f64 = 0.0;
const VIB_NORMAL_MEAN_B: f64 = 3.0;
const VIB_ANOMALY_MEAN: f64 = 5.0;

/// Synthetic generator; yields instances for `t = 1 ..= length`.
#[derive(Debug, Clone)]
pub struct SyntheticStream {
    spec: StreamSpec,
    rng: ChaCha12Rng,
    t: u64,
}

impl SyntheticStream {
    pub fn new(spec: StreamSpec, rng: ChaCha12Rng) -> Self {
        Self { spec, rng, t: 0 }
    }

    pub fn spec(&self) -> &StreamSpec {
        &self.spec
    }

    /// Number of swap events in effect at step `t` (parity selects the
    /// active region concept).
    pub fn concept_at(&self, t: u64) -> usize {
        self.spec.schedule.iter().filter(|ev| ev.at <= t).count()
    }

    /// Mean of the vib normal class at step `t`; events alternate the target
    /// between the two concept means, ramping when a duration is set.
    pub fn vib_normal_mean_at(&self, t: u64) -> f64 {
        let mut mean = VIB_NORMAL_MEAN_A;
        let mut target_is_b = true;
        for ev in &self.spec.schedule {
            if ev.at > t {
                break;
            }
            let from = mean;
            let to = if target_is_b { VIB_NORMAL_MEAN_B } else { VIB_NORMAL_MEAN_A };
            mean = if ev.duration == 0 || t >= ev.at + ev.duration {
                to
            } else {
                from + (to - from) * (t - ev.at) as f64 / ev.duration as f64
            };
            target_is_b = !target_is_b;
        }
        mean
    }

    fn sample_features(&mut self, t: u64, label: u8) -> Vec<f64> {
        match self.spec.kind {
            GeneratorKind::Vib => {
                let mean = if label == 1 {
                    VIB_ANOMALY_MEAN
                } else {
                    self.vib_normal_mean_at(t)
                };
                (0..10)
                    .map(|_| {
                        let noise: f64 = StandardNormal.sample(&mut self.rng);
                        mean + noise
                    })
                    .collect()
            }
            kind => {
                let concept = self.concept_at(t);
                loop {
                    let candidate = match kind {
                        GeneratorKind::Sea => vec![
                            10.0 * self.rng.random::<f64>(),
                            10.0 * self.rng.random::<f64>(),
                        ],
                        GeneratorKind::Circle => {
                            vec![self.rng.random::<f64>(), self.rng.random::<f64>()]
                        }
                        GeneratorKind::Sine => vec![
                            std::f64::consts::PI * self.rng.random::<f64>(),
                            2.0 * self.rng.random::<f64>() - 1.0,
                        ],
                        GeneratorKind::Vib => unreachable!(),
                    };
                    if region_class(kind, concept, &candidate) == Some(label) {
                        return candidate;
                    }
                }
            }
        }
    }

    pub fn next_instance(&mut self) -> Option<Instance> {
        if self.t >= self.spec.length {
            return None;
        }
        self.t += 1;
        let t = self.t;
        let label = u8::from(self.rng.random::<f64>() < self.spec.anomaly_rate);
        let features = self.sample_features(t, label);
        Some(Instance { features, label: Some(label), t })
    }

    /// Normal-class instances from the pre-drift concept, for offline
    /// pretraining. Uses its own RNG so the stream itself is unaffected.
    pub fn pretrain_sample(spec: &StreamSpec, n: usize, rng: &mut ChaCha12Rng) -> Vec<Instance> {
        let mut gen = SyntheticStream::new(
            StreamSpec {
                schedule: Vec::new(), // pre-drift concept only
                ..spec.clone()
            },
            rng.clone(),
        );
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let features = gen.sample_features(0, 0);
            out.push(Instance { features, label: Some(0), t: 0 });
        }
        // Hand the advanced state back so subsequent draws do not repeat.
        *rng = gen.rng;
        out
    }
}

impl Iterator for SyntheticStream {
    type Item = Instance;

    fn next(&mut self) -> Option<Instance> {
        self.next_instance()
    }
}

/// Per-feature min-max scaling into [0,1], fitted on pretraining data and
/// frozen afterwards; out-of-range online values clamp to the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    min: Vec<f64>,
    max: Vec<f64>,
    degenerate: Vec<usize>,
}

impl Normalizer {
    /// Scaling from known feature domains.
    pub fn from_ranges(ranges: &[(f64, f64)]) -> Self {
        let min: Vec<f64> = ranges.iter().map(|r| r.0).collect();
        let max: Vec<f64> = ranges.iter().map(|r| r.1).collect();
        let degenerate = (0..min.len()).filter(|&j| min[j] == max[j]).collect();
        Self { min, max, degenerate }
    }

    pub fn fit(data: &[Instance]) -> Self {
        assert!(!data.is_empty(), "normalizer needs at least one instance");
        let d = data[0].features.len();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for inst in data {
            for (j, &v) in inst.features.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        let degenerate = (0..d).filter(|&j| min[j] == max[j]).collect();
        Self { min, max, degenerate }
    }

    /// Feature indices with `min == max`; these map to 0.5.
    pub fn degenerate_features(&self) -> &[usize] {
        &self.degenerate
    }

    pub fn min(&self) -> &[f64] {
        &self.min
    }

    pub fn max(&self) -> &[f64] {
        &self.max
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, &v)| {
                if self.min[j] == self.max[j] {
                    0.5
                } else {
                    ((v - self.min[j]) / (self.max[j] - self.min[j])).clamp(0.0, 1.0)
                }
            })
            .collect()
    }
}

/// Parsed CSV stream: instances in file order, labels attached when the
/// final column is named `label`.
#[derive(Debug, Clone)]
pub struct CsvData {
    pub instances: Vec<Instance>,
    pub labeled: bool,
    pub feature_names: Vec<String>,
}

/// Loads a UTF-8 comma-separated file with a header row. Feature columns
/// are numeric; a trailing column named `label` (values 0/1) is optional.
pub fn load_csv(path: &Path) -> Result<CsvData, StreamError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let labeled = headers.last().map(String::as_str) == Some("label");
    let n_features = if labeled { headers.len() - 1 } else { headers.len() };
    if n_features == 0 {
        return Err(StreamError::NoFeatures);
    }

    let mut instances = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let row = idx + 2; // 1-based, after the header line
        if record.len() != headers.len() {
            return Err(StreamError::Ragged {
                row,
                expected: headers.len(),
                got: record.len(),
            });
        }
        let mut features = Vec::with_capacity(n_features);
        for col in 0..n_features {
            let raw = record.get(col).unwrap_or("");
            let value: f64 = raw.trim().parse().map_err(|_| StreamError::NonNumeric {
                row,
                col: col + 1,
                value: raw.to_string(),
            })?;
            if !value.is_finite() {
                return Err(StreamError::NonFinite {
                    row,
                    col: col + 1,
                    value: raw.to_string(),
                });
            }
            features.push(value);
        }
        let label = if labeled {
            let raw = record.get(headers.len() - 1).unwrap_or("");
            match raw.trim() {
                "0" => Some(0),
                "1" => Some(1),
                other => {
                    return Err(StreamError::BadLabel {
                        row,
                        value: other.to_string(),
                    })
                }
            }
        } else {
            None
        };
        instances.push(Instance {
            features,
            label,
            t: (idx + 1) as u64,
        });
    }
    Ok(CsvData {
        instances,
        labeled,
        feature_names: headers[..n_features].to_vec(),
    })
}

/// Piecewise feature scaling: each `(at, factor)` entry applies from step
/// `at` until the next entry. Models recurrent drifts where a segment of a
/// real stream is rescaled.
pub fn apply_scale_schedule(instances: &mut [Instance], schedule: &[(u64, f64)]) {
    if schedule.is_empty() {
        return;
    }
    for inst in instances.iter_mut() {
        let factor = schedule
            .iter()
            .take_while(|(at, _)| *at <= inst.t)
            .last()
            .map(|&(_, f)| f);
        if let Some(f) = factor {
            for v in &mut inst.features {
                *v *= f;
            }
        }
    }
}
