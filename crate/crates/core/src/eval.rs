//! Prequential evaluation: fading-factor recall/specificity/G-mean, a
//! sliding score window for PAUC/ROC, and drift-detection delay accounting.
//!
//! Fading metrics discount old outcomes geometrically, so the reported
//! values track the current concept rather than the whole history. PAUC is
//! the probability that a positive in the window outscores a negative,
//! with strict ties counting zero.

use crate::window::SlidingWindow;

/// Fading factor used throughout unless configured otherwise.
pub const DEFAULT_FADING_FACTOR: f64 = 0.99;

/// Default capacity of the PAUC/ROC score window.
pub const DEFAULT_SCORE_WINDOW: usize = 1000;

/// One class-conditional fading accumulator: `S ← 1[hit] + α·S`,
/// `B ← 1 + α·B`, value `S/B`.
#[derive(Debug, Clone)]
pub struct FadingMetric {
    s: f64,
    b: f64,
    alpha: f64,
}

impl FadingMetric {
    pub fn new(alpha: f64) -> Self {
        assert!((0.0..=1.0).contains(&alpha));
        Self { s: 0.0, b: 0.0, alpha }
    }

    pub fn update(&mut self, hit: bool) {
        self.s = f64::from(hit) + self.alpha * self.s;
        self.b = 1.0 + self.alpha * self.b;
    }

    /// `None` until the first relevant observation.
    pub fn value(&self) -> Option<f64> {
        (self.b > 0.0).then(|| self.s / self.b)
    }
}

/// √(recall · specificity).
pub fn gmean(r_pos: f64, r_neg: f64) -> f64 {
    (r_pos * r_neg).sqrt()
}

/// Recall (over true anomalies) and specificity (over true normals) under
/// prequential fading updates.
#[derive(Debug, Clone)]
pub struct PrequentialMetrics {
    recall: FadingMetric,
    specificity: FadingMetric,
}

impl PrequentialMetrics {
    pub fn new(alpha: f64) -> Self {
        Self {
            recall: FadingMetric::new(alpha),
            specificity: FadingMetric::new(alpha),
        }
    }

    pub fn update(&mut self, y: u8, y_hat: u8) {
        if y == 1 {
            self.recall.update(y_hat == 1);
        } else {
            self.specificity.update(y_hat == 0);
        }
    }

    pub fn recall(&self) -> Option<f64> {
        self.recall.value()
    }

    pub fn specificity(&self) -> Option<f64> {
        self.specificity.value()
    }

    /// Defined once both classes have been observed.
    pub fn gmean(&self) -> Option<f64> {
        match (self.recall(), self.specificity()) {
            (Some(r), Some(s)) => Some(gmean(r, s)),
            _ => None,
        }
    }
}

/// Trailing window of (anomaly score, true label) pairs with sorted caches
/// per class, so PAUC reduces to binary-search counting.
#[derive(Debug, Clone)]
pub struct ScoreWindow {
    ring: SlidingWindow<(f64, u8)>,
    pos: Vec<f64>,
    neg: Vec<f64>,
}

impl ScoreWindow {
    pub fn new(capacity: usize) -> Self {
        Self {
            ring: SlidingWindow::new(capacity),
            pos: Vec::new(),
            neg: Vec::new(),
        }
    }

    pub fn push(&mut self, score: f64, label: u8) {
        if let Some((old_score, old_label)) = self.ring.push((score, label)) {
            let side = if old_label == 1 { &mut self.pos } else { &mut self.neg };
            let idx = side.partition_point(|&v| v < old_score);
            debug_assert!(idx < side.len() && side[idx] == old_score);
            side.remove(idx);
        }
        let side = if label == 1 { &mut self.pos } else { &mut self.neg };
        let idx = side.partition_point(|&v| v < score);
        side.insert(idx, score);
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.pos.len()
    }

    pub fn negatives(&self) -> usize {
        self.neg.len()
    }

    /// `(1/|P||N|) Σ Σ 1[s⁺ > s⁻]`, strict; `None` without both classes.
    pub fn pauc(&self) -> Option<f64> {
        if self.pos.is_empty() || self.neg.is_empty() {
            return None;
        }
        let mut wins = 0.0;
        for &p in &self.pos {
            wins += self.neg.partition_point(|&v| v < p) as f64;
        }
        Some(wins / (self.pos.len() as f64 * self.neg.len() as f64))
    }

    /// ROC points swept over the distinct scores in the window, from (0,0)
    /// to (1,1) in order of decreasing threshold.
    pub fn proc_curve(&self) -> Option<Vec<(f64, f64)>> {
        if self.pos.is_empty() || self.neg.is_empty() {
            return None;
        }
        let mut items: Vec<(f64, u8)> = self.ring.iter().copied().collect();
        items.sort_by(|a, b| b.0.total_cmp(&a.0));
        let p = self.pos.len() as f64;
        let n = self.neg.len() as f64;
        let mut curve = vec![(0.0, 0.0)];
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut i = 0;
        while i < items.len() {
            let score = items[i].0;
            while i < items.len() && items[i].0 == score {
                if items[i].1 == 1 {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
                i += 1;
            }
            curve.push((fp / n, tp / p));
        }
        Some(curve)
    }
}

/// Trapezoidal area under a curve of (x, y) points sorted by x.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Delay accounting against a known drift schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayReport {
    /// Per true drift, the delay of the first matched alarm (None = missed).
    pub delays: Vec<Option<u64>>,
    pub false_alarms: Vec<u64>,
    pub missed: usize,
}

/// Matches each alarm to the most recent true drift at most `horizon` steps
/// before it. Unmatched alarms are false; unmatched drifts are missed.
pub fn drift_delays(alarms: &[u64], drifts: &[u64], horizon: u64) -> DelayReport {
    let mut delays: Vec<Option<u64>> = vec![None; drifts.len()];
    let mut false_alarms = Vec::new();
    for &a in alarms {
        let matched = drifts
            .iter()
            .enumerate()
            .rev()
            .find(|(_, &d)| d <= a && a - d <= horizon);
        match matched {
            Some((i, &d)) => {
                let delay = a - d;
                if delays[i].is_none_or(|cur| delay < cur) {
                    delays[i] = Some(delay);
                }
            }
            None => false_alarms.push(a),
        }
    }
    let missed = delays.iter().filter(|d| d.is_none()).count();
    DelayReport { delays, false_alarms, missed }
}
