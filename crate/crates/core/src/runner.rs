//! Experiment driver: wires stream → engine → evaluator, runs seeded
//! repetitions, and persists per-repetition traces plus aggregate summary
//! and timing reports.
//!
//! Output layout under the run directory:
//! - `trace_<rep>.csv` — one row per stream step
//! - `summary.json` — per-metric mean/stderr across repetitions
//! - `timings.json` — measured per-step / per-event wall-clock means

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;
use thiserror::Error;

use crate::config::{mix_seed, ConfigError, ExperimentConfig, GeneratorName};
use crate::ensemble::{Engine, EngineError, ResetInfo};
use crate::eval::{
    drift_delays, DelayReport, PrequentialMetrics, ScoreWindow, DEFAULT_FADING_FACTOR,
    DEFAULT_SCORE_WINDOW,
};
use crate::stream::{
    apply_scale_schedule, load_csv, Instance, Normalizer, StreamError, SyntheticStream,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("aggregation error: {0}")]
    Aggregation(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("trace write error: {0}")]
    Trace(#[from] csv::Error),
}

impl RunError {
    /// True for errors the user fixes by editing the config file.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            RunError::Config(_)
                | RunError::Engine(EngineError::BadConfig(_))
                | RunError::Engine(EngineError::BadPercentile(_))
                | RunError::Engine(EngineError::PretrainTooSmall { .. })
                | RunError::Stream(StreamError::BadRate(_))
                | RunError::Stream(StreamError::BadSchedule(_))
        )
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One trace record; undefined metrics stay empty in the CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: u64,
    pub y: Option<u8>,
    pub yhat: u8,
    pub score: f64,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub gmean: Option<f64>,
    pub pauc: Option<f64>,
    pub alarm: bool,
}

pub const TRACE_HEADER: [&str; 9] = [
    "t", "y", "yhat", "score", "recall", "specificity", "gmean", "pauc", "alarm",
];

/// Whole-run averages of the per-step metrics (mean over the steps where
/// each metric is defined) plus their final values.
#[derive(Debug, Clone, Copy, Default, Serialize, PartialEq)]
pub struct WholeRun {
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub gmean: Option<f64>,
    pub pauc: Option<f64>,
    pub recall_final: Option<f64>,
    pub specificity_final: Option<f64>,
    pub gmean_final: Option<f64>,
    pub pauc_final: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RepTiming {
    pub stream_seconds: f64,
    pub steps: u64,
    pub incr_seconds: f64,
    pub incr_events: u64,
    pub drift_seconds: f64,
    pub drift_events: u64,
}

/// Everything produced by one repetition, kept in memory for aggregation
/// and assertions; persistence is separate.
#[derive(Debug, Clone)]
pub struct RepResult {
    pub rep: usize,
    pub rows: Vec<TraceRow>,
    pub alarms: Vec<u64>,
    pub train_events: Vec<(u64, usize)>,
    pub resets: Vec<(u64, ResetInfo)>,
    pub whole_run: WholeRun,
    pub timing: RepTiming,
    pub labels_available: bool,
    pub drift_times: Vec<u64>,
}

impl RepResult {
    /// Delay report against the stream's true drift schedule.
    pub fn delay_report(&self, horizon: u64) -> DelayReport {
        drift_delays(&self.alarms, &self.drift_times, horizon)
    }
}

/// Runs one repetition without touching the filesystem.
pub fn run_single(cfg: &ExperimentConfig, rep: usize) -> Result<RepResult, RunError> {
    let rep_seed = mix_seed(cfg.seed, rep as u64);
    let stream_seed = mix_seed(rep_seed, 1);
    let pretrain_seed = mix_seed(rep_seed, 2);
    let engine_seed = mix_seed(rep_seed, 3);

    // Assemble pretraining data and the stream.
    let (pretrain, instances, drift_times) = match cfg.stream.generator {
        GeneratorName::Csv => {
            let path = cfg.stream.csv_path.as_ref().ok_or_else(|| {
                ConfigError("csv generator requires stream.csv_path".to_string())
            })?;
            let mut data = load_csv(path)?;
            apply_scale_schedule(&mut data.instances, &scale_pairs(cfg));
            if data.instances.len() <= cfg.pretrain_size {
                return Err(ConfigError(format!(
                    "csv file holds {} rows; pretrain_size {} leaves no stream",
                    data.instances.len(),
                    cfg.pretrain_size
                ))
                .into());
            }
            let mut instances = data.instances;
            let stream: Vec<Instance> = instances.split_off(cfg.pretrain_size);
            let stream: Vec<Instance> = stream
                .into_iter()
                .take(cfg.stream.length as usize)
                .enumerate()
                .map(|(i, mut inst)| {
                    inst.t = (i + 1) as u64;
                    inst
                })
                .collect();
            let drifts = cfg
                .stream
                .drift_schedule
                .as_ref()
                .map(|s| s.iter().map(|e| e.at).collect())
                .unwrap_or_default();
            (instances, stream, drifts)
        }
        _ => {
            let spec = cfg.stream_spec()?;
            let mut pre_rng = ChaCha12Rng::seed_from_u64(pretrain_seed);
            let pretrain =
                SyntheticStream::pretrain_sample(&spec, cfg.pretrain_size, &mut pre_rng);
            let drifts = spec.schedule.iter().map(|e| e.at).collect();
            let stream: Vec<Instance> =
                SyntheticStream::new(spec, ChaCha12Rng::seed_from_u64(stream_seed)).collect();
            (pretrain, stream, drifts)
        }
    };

    // Generators with a declared feature domain normalize by it; unbounded
    // or file-based data falls back to pretraining min/max.
    let normalizer = match cfg.generator_kind().and_then(|k| k.feature_ranges()) {
        Some(ranges) => Normalizer::from_ranges(&ranges),
        None => Normalizer::fit(&pretrain),
    };
    let pretrain_norm: Vec<Vec<f64>> = pretrain
        .iter()
        .map(|i| normalizer.normalize(&i.features))
        .collect();
    let input_dim = pretrain[0].features.len();

    let mut engine = Engine::new(
        cfg.engine_config(),
        cfg.model_config(input_dim),
        &pretrain_norm,
        engine_seed,
    )?;

    let labels_available = instances.iter().all(|i| i.label.is_some());
    let mut metrics = PrequentialMetrics::new(DEFAULT_FADING_FACTOR);
    let mut scores = ScoreWindow::new(DEFAULT_SCORE_WINDOW);

    let mut rows = Vec::with_capacity(instances.len());
    let mut alarms = Vec::new();
    let mut train_events = Vec::new();
    let mut resets = Vec::new();
    let mut timing = RepTiming::default();

    for inst in &instances {
        let x = normalizer.normalize(&inst.features);
        let started = Instant::now();
        let out = engine.step(&x)?;
        let step_seconds = started.elapsed().as_secs_f64();
        timing.stream_seconds += step_seconds - out.train_seconds - out.reset_seconds;
        timing.steps += 1;
        timing.incr_seconds += out.train_seconds;
        timing.incr_events += out.trained.len() as u64;
        if let Some(info) = out.reset {
            timing.drift_seconds += out.reset_seconds;
            timing.drift_events += 1;
            resets.push((out.t, info));
        }
        for &m in &out.trained {
            train_events.push((out.t, m));
        }
        if out.alarm {
            alarms.push(out.t);
        }

        let (recall, specificity, gmean_v, pauc) = if let Some(y) = inst.label {
            metrics.update(y, out.prediction);
            scores.push(out.ensemble_score, y);
            (
                metrics.recall(),
                metrics.specificity(),
                metrics.gmean(),
                scores.pauc(),
            )
        } else {
            (None, None, None, None)
        };
        rows.push(TraceRow {
            t: out.t,
            y: inst.label,
            yhat: out.prediction,
            score: out.ensemble_score,
            recall,
            specificity,
            gmean: gmean_v,
            pauc,
            alarm: out.alarm,
        });
    }

    let whole_run = WholeRun {
        recall: mean_defined(rows.iter().map(|r| r.recall)),
        specificity: mean_defined(rows.iter().map(|r| r.specificity)),
        gmean: mean_defined(rows.iter().map(|r| r.gmean)),
        pauc: mean_defined(rows.iter().map(|r| r.pauc)),
        recall_final: last_defined(rows.iter().map(|r| r.recall)),
        specificity_final: last_defined(rows.iter().map(|r| r.specificity)),
        gmean_final: last_defined(rows.iter().map(|r| r.gmean)),
        pauc_final: last_defined(rows.iter().map(|r| r.pauc)),
    };

    Ok(RepResult {
        rep,
        rows,
        alarms,
        train_events,
        resets,
        whole_run,
        timing,
        labels_available,
        drift_times,
    })
}

fn scale_pairs(cfg: &ExperimentConfig) -> Vec<(u64, f64)> {
    cfg.stream
        .scale_schedule
        .iter()
        .map(|e| (e.at, e.factor))
        .collect()
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for v in values.flatten() {
        sum += v;
        count += 1;
    }
    (count > 0).then(|| sum / count as f64)
}

fn last_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    values.flatten().last()
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MetricStat {
    pub mean: Option<f64>,
    pub stderr: Option<f64>,
    pub reps_defined: usize,
}

fn metric_stat(values: &[Option<f64>]) -> MetricStat {
    let defined: Vec<f64> = values.iter().copied().flatten().collect();
    if defined.is_empty() {
        return MetricStat {
            mean: None,
            stderr: None,
            reps_defined: 0,
        };
    }
    let n = defined.len() as f64;
    let mean = defined.iter().sum::<f64>() / n;
    let stderr = if defined.len() == 1 {
        0.0 // single repetition: stderr 0 by convention, flagged in summary
    } else {
        let var = defined.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    };
    MetricStat {
        mean: Some(mean),
        stderr: Some(stderr),
        reps_defined: defined.len(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub config_hash: String,
    pub repetitions: usize,
    pub single_repetition: bool,
    pub labels_available: bool,
    /// Whole-run averages aggregated across repetitions.
    pub whole_run: BTreeMap<String, MetricStat>,
    /// Per-step mean and standard error across repetitions.
    pub per_step: BTreeMap<String, Vec<Option<f64>>>,
    pub alarms_per_rep: Vec<Vec<u64>>,
}

/// Cross-repetition aggregation: per-metric mean and standard error
/// (sample std / √reps), whole-run and per-step.
pub fn aggregate_reps(cfg: &ExperimentConfig, results: &[RepResult]) -> Result<Summary, RunError> {
    if results.is_empty() {
        return Err(RunError::Aggregation("no repetitions to aggregate".into()));
    }
    let len = results[0].rows.len();
    if results.iter().any(|r| r.rows.len() != len) {
        return Err(RunError::Aggregation(format!(
            "trace lengths differ: {:?}",
            results.iter().map(|r| r.rows.len()).collect::<Vec<_>>()
        )));
    }

    let mut whole_run = BTreeMap::new();
    let fields: [(&str, fn(&WholeRun) -> Option<f64>); 8] = [
        ("recall", |w| w.recall),
        ("specificity", |w| w.specificity),
        ("gmean", |w| w.gmean),
        ("pauc", |w| w.pauc),
        ("recall_final", |w| w.recall_final),
        ("specificity_final", |w| w.specificity_final),
        ("gmean_final", |w| w.gmean_final),
        ("pauc_final", |w| w.pauc_final),
    ];
    for (name, getter) in fields {
        let values: Vec<Option<f64>> = results.iter().map(|r| getter(&r.whole_run)).collect();
        whole_run.insert(name.to_string(), metric_stat(&values));
    }

    let mut per_step = BTreeMap::new();
    let row_fields: [(&str, fn(&TraceRow) -> Option<f64>); 4] = [
        ("recall", |r| r.recall),
        ("specificity", |r| r.specificity),
        ("gmean", |r| r.gmean),
        ("pauc", |r| r.pauc),
    ];
    for (name, getter) in row_fields {
        let mut means = Vec::with_capacity(len);
        let mut errs = Vec::with_capacity(len);
        for t in 0..len {
            let values: Vec<Option<f64>> =
                results.iter().map(|r| getter(&r.rows[t])).collect();
            let stat = metric_stat(&values);
            means.push(stat.mean);
            errs.push(stat.stderr);
        }
        per_step.insert(format!("{name}_mean"), means);
        per_step.insert(format!("{name}_stderr"), errs);
    }

    Ok(Summary {
        config_hash: cfg.hash(),
        repetitions: results.len(),
        single_repetition: results.len() == 1,
        labels_available: results.iter().all(|r| r.labels_available),
        whole_run,
        per_step,
        alarms_per_rep: results.iter().map(|r| r.alarms.clone()).collect(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TimingEntry {
    pub events: u64,
    /// Mean wall-clock seconds per event; absent when no events occurred.
    pub mean_seconds: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TimingReport {
    /// Per-step streaming work (prediction + drift tests), training and
    /// reset time excluded.
    pub t_stream: TimingEntry,
    /// Per incremental-training event.
    pub t_incr: TimingEntry,
    /// Per drift-triggered retraining event.
    pub t_drift: TimingEntry,
}

pub fn measure_timings(results: &[RepResult]) -> TimingReport {
    let mut stream_seconds = 0.0;
    let mut steps = 0u64;
    let mut incr_seconds = 0.0;
    let mut incr_events = 0u64;
    let mut drift_seconds = 0.0;
    let mut drift_events = 0u64;
    for r in results {
        stream_seconds += r.timing.stream_seconds;
        steps += r.timing.steps;
        incr_seconds += r.timing.incr_seconds;
        incr_events += r.timing.incr_events;
        drift_seconds += r.timing.drift_seconds;
        drift_events += r.timing.drift_events;
    }
    let entry = |total: f64, events: u64| TimingEntry {
        events,
        mean_seconds: (events > 0).then(|| total / events as f64),
    };
    TimingReport {
        t_stream: entry(stream_seconds, steps),
        t_incr: entry(incr_seconds, incr_events),
        t_drift: entry(drift_seconds, drift_events),
    }
}

/// Paths produced by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub trace_paths: Vec<PathBuf>,
    pub summary_path: PathBuf,
    pub timing_path: PathBuf,
    pub summary: Summary,
    pub timing: TimingReport,
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path)?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    w.write_record(TRACE_HEADER)?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            r.y.map(|v| v.to_string()).unwrap_or_default(),
            r.yhat.to_string(),
            r.score.to_string(),
            fmt(r.recall),
            fmt(r.specificity),
            fmt(r.gmean),
            fmt(r.pauc),
            u8::from(r.alarm).to_string(),
        ])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Runs every repetition, persists traces, summary, and timing report.
/// `out_override` takes precedence over the config's `output_dir`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_override: Option<&Path>,
) -> Result<RunArtifacts, RunError> {
    if cfg.repetitions == 0 {
        return Err(ConfigError("repetitions must be >= 1".into()).into());
    }
    cfg.engine_config().validate()?;
    if cfg.stream.generator != GeneratorName::Csv {
        cfg.stream_spec()?;
    }

    let out_dir: PathBuf = out_override
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    std::fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;

    let mut results = Vec::with_capacity(cfg.repetitions);
    let mut trace_paths = Vec::with_capacity(cfg.repetitions);
    for rep in 0..cfg.repetitions {
        let result = run_single(cfg, rep)?;
        let path = out_dir.join(format!("trace_{rep:03}.csv"));
        write_trace(&path, &result.rows)?;
        trace_paths.push(path);
        results.push(result);
    }

    let summary = aggregate_reps(cfg, &results)?;
    let summary_path = out_dir.join("summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)
        .map_err(io_err(&summary_path))?;

    let timing = measure_timings(&results);
    let timing_path = out_dir.join("timings.json");
    std::fs::write(&timing_path, serde_json::to_string_pretty(&timing)?)
        .map_err(io_err(&timing_path))?;

    Ok(RunArtifacts {
        trace_paths,
        summary_path,
        timing_path,
        summary,
        timing,
    })
}
