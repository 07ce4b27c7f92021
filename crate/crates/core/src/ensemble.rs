//! The two-level ensemble engine.
//!
//! Level one: `n` VAE anomaly predictors vote on each instance (anomalous
//! when at least `p_thre` members score above their adaptive thresholds).
//! Level two: per-member drift detectors vote on model resets (a reset when
//! at least `d_thre` members raise an alarm simultaneously).
//!
//! Per step, in order: the instance joins the shared training window; each
//! member predicts with its pre-update model, feeds its drift detector, and
//! fine-tunes when its personal cadence `t % w_train(i) == 0` fires; then
//! the warn buffer is updated, the prediction vote is taken, and a passing
//! drift vote rebuilds every member from the warn buffer.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::drift::{DriftDetector, DriftFlag};
use crate::vae::{VaeConfig, VaeError, VaeModel};
use crate::window::SlidingWindow;

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error("invalid engine config: {0}")]
    BadConfig(String),
    #[error("threshold requires a non-empty loss set")]
    EmptyLosses,
    #[error("percentile must lie in (0, 100), got {0}")]
    BadPercentile(f64),
    #[error("pretraining set of {got} instances is smaller than the largest drift window {need}")]
    PretrainTooSmall { got: usize, need: usize },
}

/// How the per-member anomaly threshold is derived from window losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdRule {
    /// Mean plus one (population) standard deviation.
    Adaptive,
    /// Fixed percentile `b` of the losses, linearly interpolated.
    Percentile(f64),
}

/// Feature subsets of the full method, used by the ablation studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngineMode {
    /// Pretrained once, never updated, no drift detection; single model.
    Baseline,
    /// Single model with incremental training, no drift detection.
    VaePp,
    /// Ensemble with incremental training, no drift detection.
    VaePpEs,
    /// Ensemble with incremental training and one shared drift detector.
    OneDd,
    /// The full method: ensembles of predictors and of drift detectors.
    Esdd,
}

impl EngineMode {
    pub fn training_enabled(self) -> bool {
        !matches!(self, EngineMode::Baseline)
    }

    pub fn forced_ensemble_size(self) -> Option<usize> {
        match self {
            EngineMode::Baseline | EngineMode::VaePp => Some(1),
            _ => None,
        }
    }

    fn detector_count(self, n: usize) -> usize {
        match self {
            EngineMode::Esdd => n,
            EngineMode::OneDd => 1,
            _ => 0,
        }
    }
}

/// Where each detector's reference window comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RefInit {
    /// The first `w_drift(i)` streamed instances.
    #[default]
    Stream,
    /// The tail of the pretraining set.
    Pretrain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub ensemble_size: usize,
    /// Capacity of the shared training window.
    pub w_train: usize,
    /// Spread of the per-member window sizes: `w_train(i)` is drawn
    /// uniformly from `(w_train - gamma, w_train]`.
    pub gamma: usize,
    pub w_drift_min: usize,
    pub w_drift_max: usize,
    /// Prediction vote threshold.
    pub p_thre: usize,
    /// Drift (alarm) vote threshold.
    pub d_thre: usize,
    pub p_warn: f64,
    pub p_alarm: f64,
    /// Steps a warning may stay open without an alarm before it is
    /// discarded as false.
    pub expiry_time: u64,
    pub threshold: ThresholdRule,
    pub mode: EngineMode,
    pub ref_init: RefInit,
    /// Minimum number of instances for post-alarm retraining; a smaller
    /// warn buffer falls back to the tail of the training window.
    pub min_retrain: usize,
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |msg: String| Err(EngineError::BadConfig(msg));
        if self.ensemble_size == 0 {
            return bad("ensemble_size must be >= 1".into());
        }
        if self.gamma == 0 || self.gamma > self.w_train {
            return bad(format!(
                "gamma must lie in [1, w_train]; got gamma={} w_train={}",
                self.gamma, self.w_train
            ));
        }
        if self.w_drift_min < 2 || self.w_drift_min > self.w_drift_max {
            return bad(format!(
                "drift window range [{}, {}] is invalid",
                self.w_drift_min, self.w_drift_max
            ));
        }
        let n = self.effective_size();
        // Single-model modes pin the prediction vote to 1; drift-disabled
        // modes never consult d_thre, so only the full method checks it.
        if self.mode.forced_ensemble_size().is_none() && (self.p_thre == 0 || self.p_thre > n) {
            return bad(format!(
                "p_thre must lie in [1, {n}], got {}",
                self.p_thre
            ));
        }
        if self.mode == EngineMode::Esdd && (self.d_thre == 0 || self.d_thre > n) {
            return bad(format!(
                "d_thre must lie in [1, {n}], got {}",
                self.d_thre
            ));
        }
        if !(0.0 < self.p_alarm && self.p_alarm < self.p_warn && self.p_warn < 1.0) {
            return bad(format!(
                "need 0 < p_alarm < p_warn < 1; got p_alarm={} p_warn={}",
                self.p_alarm, self.p_warn
            ));
        }
        if let ThresholdRule::Percentile(b) = self.threshold {
            if !(0.0 < b && b < 100.0) {
                return Err(EngineError::BadPercentile(b));
            }
        }
        if self.min_retrain == 0 {
            return bad("min_retrain must be >= 1".into());
        }
        Ok(())
    }

    /// Single-model modes run with one member and a trivial prediction vote.
    pub fn effective_size(&self) -> usize {
        self.mode.forced_ensemble_size().unwrap_or(self.ensemble_size)
    }
}

/// θ = mean + population standard deviation of the losses.
pub fn adaptive_threshold(losses: &[f64]) -> Result<f64, EngineError> {
    if losses.is_empty() {
        return Err(EngineError::EmptyLosses);
    }
    let n = losses.len() as f64;
    let mean = losses.iter().sum::<f64>() / n;
    let var = losses.iter().map(|&l| (l - mean) * (l - mean)).sum::<f64>() / n;
    Ok(mean + var.sqrt())
}

/// θ = `b`-th percentile of the losses with linear interpolation.
pub fn fixed_percentile_threshold(losses: &[f64], b: f64) -> Result<f64, EngineError> {
    if losses.is_empty() {
        return Err(EngineError::EmptyLosses);
    }
    if !(0.0 < b && b < 100.0) {
        return Err(EngineError::BadPercentile(b));
    }
    let mut sorted = losses.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = b / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < sorted.len() {
        Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
    } else {
        Ok(sorted[lo])
    }
}

fn threshold_of(rule: ThresholdRule, losses: &[f64]) -> Result<f64, EngineError> {
    match rule {
        ThresholdRule::Adaptive => adaptive_threshold(losses),
        ThresholdRule::Percentile(b) => fixed_percentile_threshold(losses, b),
    }
}

/// Anomalous iff the score strictly exceeds the threshold.
pub fn predict_from_score(score: f64, theta: f64) -> u8 {
    u8::from(score > theta)
}

/// Ensemble prediction: anomalous iff at least `p_thre` members say so.
pub fn predict_vote(member_preds: &[u8], p_thre: usize) -> u8 {
    let positives: usize = member_preds.iter().map(|&p| p as usize).sum();
    u8::from(positives >= p_thre)
}

/// Drift decision: true iff at least `d_thre` members hold an alarm flag.
pub fn drift_vote(member_flags: &[DriftFlag], d_thre: usize) -> bool {
    member_flags.iter().filter(|f| f.is_alarm()).count() >= d_thre
}

/// Buffers `x` while a warning is open without an alarm; expires stale
/// warnings. Returns true when the warning was discarded as false.
pub fn warn_buffer_update(
    warn_trig: &mut Option<u64>,
    alarm_trig: Option<u64>,
    buffer: &mut SlidingWindow<Vec<f64>>,
    x: &[f64],
    t: u64,
    expiry_time: u64,
) -> bool {
    if let Some(warn_at) = *warn_trig {
        if alarm_trig.is_none() {
            buffer.push(x.to_vec());
            if t - warn_at > expiry_time {
                buffer.clear();
                *warn_trig = None;
                return true;
            }
        }
    }
    false
}

#[derive(Debug, Clone)]
struct Member {
    model: VaeModel,
    w_train: usize,
    theta: f64,
    detector: Option<DriftDetector>,
    rng: ChaCha12Rng,
}

/// Where a post-alarm retraining set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetrainSource {
    WarnBuffer,
    /// The warn buffer was below `min_retrain`; the tail of the training
    /// window was used instead (degraded but functional).
    TrainWindowFallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResetInfo {
    pub source: RetrainSource,
    pub retrain_size: usize,
}

/// Everything observable about one engine step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub t: u64,
    pub prediction: u8,
    pub member_predictions: Vec<u8>,
    pub member_flags: Vec<DriftFlag>,
    pub member_scores: Vec<f64>,
    /// Vote-aligned anomaly score: the `p_thre`-th largest margin
    /// `score(i) − θ(i)`; positive iff the prediction vote passes.
    pub ensemble_score: f64,
    /// The drift vote passed and the ensemble was reset this step.
    pub alarm: bool,
    /// Members that ran an incremental update this step.
    pub trained: Vec<usize>,
    pub reset: Option<ResetInfo>,
    /// Wall-clock seconds spent in incremental training this step.
    pub train_seconds: f64,
    /// Wall-clock seconds spent in the post-alarm reset this step.
    pub reset_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct Engine {
    cfg: EngineConfig,
    model_cfg: VaeConfig,
    members: Vec<Member>,
    mov_train: SlidingWindow<Vec<f64>>,
    mov_warn: SlidingWindow<Vec<f64>>,
    warn_trig: Option<u64>,
    alarm_trig: Option<u64>,
    d_thre_eff: usize,
    p_thre_eff: usize,
    t: u64,
}

impl Engine {
    /// Builds and pretrains the ensemble on `pretrain` (already normalized
    /// feature vectors). Every member gets an independent RNG stream, its
    /// own window sizes, and a threshold fitted on the pretraining losses.
    pub fn new(
        cfg: EngineConfig,
        model_cfg: VaeConfig,
        pretrain: &[Vec<f64>],
        seed: u64,
    ) -> Result<Self, EngineError> {
        cfg.validate()?;
        model_cfg.validate().map_err(EngineError::Vae)?;
        if pretrain.len() < cfg.w_drift_max {
            return Err(EngineError::PretrainTooSmall {
                got: pretrain.len(),
                need: cfg.w_drift_max,
            });
        }
        let n = cfg.effective_size();
        let mut master = ChaCha12Rng::seed_from_u64(seed);
        let mut members = Vec::with_capacity(n);
        let detector_count = cfg.mode.detector_count(n);
        let mut largest_w_drift = 0;
        for i in 0..n {
            let member_seed: u64 = master.random();
            let w_train = master.random_range(cfg.w_train - cfg.gamma + 1..=cfg.w_train);
            let w_drift = master.random_range(cfg.w_drift_min..=cfg.w_drift_max);
            largest_w_drift = largest_w_drift.max(w_drift);
            let mut rng = ChaCha12Rng::seed_from_u64(member_seed);
            let mut model = VaeModel::new(model_cfg.clone(), &mut rng)?;
            let _ = model.train_epochs(pretrain, &mut rng)?;
            let losses = score_all(&model, pretrain)?;
            let theta = threshold_of(cfg.threshold, &losses)?;
            let detector = if i < detector_count {
                let mut det = DriftDetector::new(w_drift, cfg.p_warn, cfg.p_alarm);
                if cfg.ref_init == RefInit::Pretrain {
                    det.seed_reference(pretrain, &mut |x: &[f64]| model.score(x))?;
                }
                Some(det)
            } else {
                None
            };
            members.push(Member {
                model,
                w_train,
                theta,
                detector,
                rng,
            });
        }
        let d_thre_eff = match cfg.mode {
            EngineMode::OneDd => 1,
            _ => cfg.d_thre,
        };
        let p_thre_eff = if cfg.mode.forced_ensemble_size() == Some(1) {
            1
        } else {
            cfg.p_thre
        };
        Ok(Self {
            mov_train: SlidingWindow::new(cfg.w_train),
            // The warn buffer holds up to the largest member drift window,
            // so no member's retraining need is undercut.
            mov_warn: SlidingWindow::new(largest_w_drift),
            warn_trig: None,
            alarm_trig: None,
            d_thre_eff,
            p_thre_eff,
            t: 0,
            cfg,
            model_cfg,
            members,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn member_theta(&self, i: usize) -> f64 {
        self.members[i].theta
    }

    pub fn member_model(&self, i: usize) -> &VaeModel {
        &self.members[i].model
    }

    pub fn member_w_train(&self, i: usize) -> usize {
        self.members[i].w_train
    }

    pub fn member_w_drift(&self, i: usize) -> Option<usize> {
        self.members[i].detector.as_ref().map(|d| d.window())
    }

    pub fn member_flag(&self, i: usize) -> DriftFlag {
        self.members[i]
            .detector
            .as_ref()
            .map(|d| d.flag())
            .unwrap_or_default()
    }

    pub fn warn_buffer_len(&self) -> usize {
        self.mov_warn.len()
    }

    pub fn train_window_len(&self) -> usize {
        self.mov_train.len()
    }

    pub fn warn_trigger(&self) -> Option<u64> {
        self.warn_trig
    }

    pub fn alarm_trigger(&self) -> Option<u64> {
        self.alarm_trig
    }

    /// Runs one stream step. Predictions use the model state from before
    /// any training that happens within the same step.
    pub fn step(&mut self, x: &[f64]) -> Result<StepOutput, EngineError> {
        self.t += 1;
        let t = self.t;
        self.mov_train.push(x.to_vec());

        let n = self.members.len();
        let mut scores = Vec::with_capacity(n);
        let mut preds = Vec::with_capacity(n);
        let mut flags = Vec::with_capacity(n);
        let mut trained = Vec::new();
        let mut train_seconds = 0.0;

        for (i, member) in self.members.iter_mut().enumerate() {
            let score = member.model.score(x)?;
            preds.push(predict_from_score(score, member.theta));
            scores.push(score);

            let flag = match member.detector.as_mut() {
                Some(det) => {
                    let model = &member.model;
                    det.step(x, score, &mut |xx: &[f64]| model.score(xx))?
                }
                None => DriftFlag::None,
            };
            flags.push(flag);
            if (flag.is_warn() || flag.is_alarm()) && self.warn_trig.is_none() {
                self.warn_trig = Some(t);
            }
            if flag.is_alarm() && self.alarm_trig.is_none() {
                self.alarm_trig = Some(t);
            }

            if self.cfg.mode.training_enabled()
                && t % member.w_train as u64 == 0
                && self.mov_train.len() >= member.w_train
            {
                let started = Instant::now();
                let window: Vec<Vec<f64>> =
                    self.mov_train.recent(member.w_train).cloned().collect();
                let _ = member.model.train_epochs(&window, &mut member.rng)?;
                let losses = score_all(&member.model, &window)?;
                member.theta = threshold_of(self.cfg.threshold, &losses)?;
                if let Some(det) = member.detector.as_mut() {
                    det.mark_stale();
                }
                train_seconds += started.elapsed().as_secs_f64();
                trained.push(i);
            }
        }

        warn_buffer_update(
            &mut self.warn_trig,
            self.alarm_trig,
            &mut self.mov_warn,
            x,
            t,
            self.cfg.expiry_time,
        );

        let prediction = predict_vote(&preds, self.p_thre_eff);
        let ensemble_score = kth_largest_margin(&scores, &self.thetas(), self.p_thre_eff);

        let alarm = drift_vote(&flags, self.d_thre_eff);
        let mut reset = None;
        let mut reset_seconds = 0.0;
        if alarm {
            let started = Instant::now();
            reset = Some(self.reset_on_alarm()?);
            reset_seconds = started.elapsed().as_secs_f64();
        }

        Ok(StepOutput {
            t,
            prediction,
            member_predictions: preds,
            member_flags: flags,
            member_scores: scores,
            ensemble_score,
            alarm,
            trained,
            reset,
            train_seconds,
            reset_seconds,
        })
    }

    fn thetas(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.theta).collect()
    }

    /// Replaces every member with a freshly initialized model trained on
    /// the warn buffer, refits thresholds, and clears all windows, flags,
    /// and triggers. An underfilled buffer falls back to the most recent
    /// instances of the training window.
    fn reset_on_alarm(&mut self) -> Result<ResetInfo, EngineError> {
        let (data, source) = if self.mov_warn.len() >= self.cfg.min_retrain {
            (self.mov_warn.snapshot(), RetrainSource::WarnBuffer)
        } else {
            let take = self.cfg.min_retrain.min(self.mov_train.len());
            let data: Vec<Vec<f64>> = self.mov_train.recent(take).cloned().collect();
            (data, RetrainSource::TrainWindowFallback)
        };
        for member in &mut self.members {
            let mut model = VaeModel::new(self.model_cfg.clone(), &mut member.rng)?;
            let _ = model.train_epochs(&data, &mut member.rng)?;
            let losses = score_all(&model, &data)?;
            member.theta = threshold_of(self.cfg.threshold, &losses)?;
            member.model = model;
            if let Some(det) = member.detector.as_mut() {
                det.reset();
            }
        }
        self.mov_train.clear();
        self.mov_warn.clear();
        self.warn_trig = None;
        self.alarm_trig = None;
        Ok(ResetInfo {
            source,
            retrain_size: data.len(),
        })
    }
}

fn score_all(model: &VaeModel, data: &[Vec<f64>]) -> Result<Vec<f64>, VaeError> {
    data.iter().map(|x| model.score(x)).collect()
}

/// The `k`-th largest of `score − θ` over members; positive exactly when at
/// least `k` members predict anomalous.
fn kth_largest_margin(scores: &[f64], thetas: &[f64], k: usize) -> f64 {
    let mut margins: Vec<f64> = scores
        .iter()
        .zip(thetas.iter())
        .map(|(s, t)| s - t)
        .collect();
    margins.sort_by(|a, b| b.total_cmp(a));
    margins[k - 1]
}
