//! Unsupervised drift detection on reconstruction losses.
//!
//! A detector keeps a frozen reference window of instances (the first ones
//! it saw) and a moving window of the most recent ones. Each step both
//! windows are scored with the current model and compared with a tie-aware
//! Mann-Whitney U test under the normal approximation; the resulting p-value
//! feeds a two-level warn/alarm flag.
//!
//! Losses are cached per instance and only recomputed after the owner marks
//! the detector stale (i.e. the model changed). Without that rescoring an
//! incremental model update alone would shift one window's loss
//! distribution relative to the other and trip the test.

use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::window::{FrozenWindow, SlidingWindow};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DriftError {
    #[error("rank test requires non-empty windows")]
    EmptyWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DriftFlag {
    #[default]
    None,
    Warn,
    Alarm,
}

impl DriftFlag {
    pub fn is_alarm(self) -> bool {
        matches!(self, DriftFlag::Alarm)
    }

    pub fn is_warn(self) -> bool {
        matches!(self, DriftFlag::Warn)
    }
}

/// 1-based ranks with tied groups averaged over the positions they occupy.
pub fn ranks_with_ties(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i+1 ..= j+1 share the average rank
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Rank sum of the first sample and the pooled tie term `Σ (t³ − t)`,
/// computed by a merge walk over two individually sorted slices.
fn rank_stats_sorted(a_sorted: &[f64], b_sorted: &[f64]) -> (f64, f64) {
    let mut rank_sum_a = 0.0;
    let mut tie_term = 0.0;
    let (mut i, mut j) = (0usize, 0usize);
    let mut pos = 0usize;
    while i < a_sorted.len() || j < b_sorted.len() {
        let v = match (a_sorted.get(i), b_sorted.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        let mut ca = 0usize;
        while i < a_sorted.len() && a_sorted[i] == v {
            ca += 1;
            i += 1;
        }
        let mut cb = 0usize;
        while j < b_sorted.len() && b_sorted[j] == v {
            cb += 1;
            j += 1;
        }
        let c = ca + cb;
        let avg_rank = pos as f64 + (c as f64 + 1.0) / 2.0;
        rank_sum_a += ca as f64 * avg_rank;
        if c > 1 {
            let cf = c as f64;
            tie_term += cf * cf * cf - cf;
        }
        pos += c;
    }
    (rank_sum_a, tie_term)
}

/// U statistics for the reference and moving samples:
/// `U_ref = n_ref·n_mov + n_ref(n_ref+1)/2 − RankSum(ref)` and symmetrically
/// for the moving window. `U_ref + U_mov = n_ref·n_mov` always.
pub fn mann_whitney_u(ref_losses: &[f64], mov_losses: &[f64]) -> Result<(f64, f64), DriftError> {
    if ref_losses.is_empty() || mov_losses.is_empty() {
        return Err(DriftError::EmptyWindow);
    }
    let mut a = ref_losses.to_vec();
    let mut b = mov_losses.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(mwu_from_sorted(&a, &b).0)
}

/// Returns `((u_ref, u_mov), tie_term)` from already-sorted samples.
fn mwu_from_sorted(a_sorted: &[f64], b_sorted: &[f64]) -> ((f64, f64), f64) {
    let n1 = a_sorted.len() as f64;
    let n2 = b_sorted.len() as f64;
    let (rank_sum_a, tie_term) = rank_stats_sorted(a_sorted, b_sorted);
    let total_rank_sum = (n1 + n2) * (n1 + n2 + 1.0) / 2.0;
    let u_ref = n1 * n2 + n1 * (n1 + 1.0) / 2.0 - rank_sum_a;
    let u_mov = n1 * n2 + n2 * (n2 + 1.0) / 2.0 - (total_rank_sum - rank_sum_a);
    ((u_ref, u_mov), tie_term)
}

/// Null moments of the U statistic with the standard tie correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestConstants {
    pub mean_u: f64,
    pub std_u: f64,
}

impl TestConstants {
    pub fn from_samples(n_ref: usize, n_mov: usize, tie_term: f64) -> Self {
        let n1 = n_ref as f64;
        let n2 = n_mov as f64;
        let n = n1 + n2;
        let mean_u = n1 * n2 / 2.0;
        let correction = if n > 1.0 { tie_term / (n * (n - 1.0)) } else { 0.0 };
        let variance = n1 * n2 / 12.0 * ((n + 1.0) - correction);
        Self {
            mean_u,
            std_u: variance.max(0.0).sqrt(),
        }
    }
}

/// `Z = (U_min − mean(U)) / std(U)`; a degenerate null (all pooled values
/// identical) maps to `Z = 0`, i.e. no evidence of drift.
pub fn z_value(u_min: f64, constants: TestConstants) -> f64 {
    if constants.std_u == 0.0 {
        0.0
    } else {
        (u_min - constants.mean_u) / constants.std_u
    }
}

/// Two-sided normal-approximation p-value `P = 2·Φ(−|Z|)`.
pub fn p_value(z: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (2.0 * normal.cdf(-z.abs())).min(1.0)
}

/// Two-level decision: alarm below `p_alarm`, warn below `p_warn`.
pub fn evaluate_flags(p: f64, p_warn: f64, p_alarm: f64) -> DriftFlag {
    debug_assert!(p_alarm < p_warn);
    if p < p_alarm {
        DriftFlag::Alarm
    } else if p < p_warn {
        DriftFlag::Warn
    } else {
        DriftFlag::None
    }
}

/// Per-member drift detector state.
#[derive(Debug, Clone)]
pub struct DriftDetector {
    window: usize,
    p_warn: f64,
    p_alarm: f64,
    ref_x: FrozenWindow<Vec<f64>>,
    mov_x: SlidingWindow<Vec<f64>>,
    ref_losses: Vec<f64>,
    mov_losses: SlidingWindow<f64>,
    ref_sorted: Vec<f64>,
    mov_sorted: Vec<f64>,
    stale: bool,
    flag: DriftFlag,
    last_p: Option<f64>,
}

impl DriftDetector {
    pub fn new(window: usize, p_warn: f64, p_alarm: f64) -> Self {
        assert!(window >= 1);
        assert!(
            0.0 < p_alarm && p_alarm < p_warn && p_warn < 1.0,
            "thresholds must satisfy 0 < p_alarm < p_warn < 1"
        );
        Self {
            window,
            p_warn,
            p_alarm,
            ref_x: FrozenWindow::new(window),
            mov_x: SlidingWindow::new(window),
            ref_losses: Vec::with_capacity(window),
            mov_losses: SlidingWindow::new(window),
            ref_sorted: Vec::with_capacity(window),
            mov_sorted: Vec::with_capacity(window),
            stale: false,
            flag: DriftFlag::None,
            last_p: None,
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn flag(&self) -> DriftFlag {
        self.flag
    }

    pub fn last_p(&self) -> Option<f64> {
        self.last_p
    }

    /// Both windows filled, i.e. the test is running.
    pub fn is_ready(&self) -> bool {
        self.ref_x.is_full() && self.mov_x.is_full()
    }

    pub fn ref_losses(&self) -> &[f64] {
        &self.ref_losses
    }

    pub fn mov_losses(&self) -> impl Iterator<Item = &f64> {
        self.mov_losses.iter()
    }

    /// The owning model changed; cached losses must be rescored before the
    /// next test.
    pub fn mark_stale(&mut self) {
        self.stale = true;
    }

    /// Clears all windows and flags; the reference refills from new data.
    pub fn reset(&mut self) {
        self.ref_x.reset();
        self.mov_x.clear();
        self.ref_losses.clear();
        self.mov_losses.clear();
        self.ref_sorted.clear();
        self.mov_sorted.clear();
        self.stale = false;
        self.flag = DriftFlag::None;
        self.last_p = None;
    }

    /// Pre-fills the reference window from held-out data (the last `window`
    /// instances of `data`), scoring them with the current model.
    pub fn seed_reference<E, F>(&mut self, data: &[Vec<f64>], score: &mut F) -> Result<(), E>
    where
        F: FnMut(&[f64]) -> Result<f64, E>,
    {
        let start = data.len().saturating_sub(self.window);
        for x in &data[start..] {
            if self.ref_x.is_full() {
                break;
            }
            let loss = score(x)?;
            self.ref_x.push(x.clone()).expect("not full");
            self.ref_losses.push(loss);
            insert_sorted(&mut self.ref_sorted, loss);
        }
        Ok(())
    }

    /// Feeds one instance (with its precomputed loss under the current
    /// model) and re-runs the test when both windows are full. `rescore` is
    /// only invoked when the detector was marked stale.
    pub fn step<E, F>(&mut self, x: &[f64], loss: f64, rescore: &mut F) -> Result<DriftFlag, E>
    where
        F: FnMut(&[f64]) -> Result<f64, E>,
    {
        if self.stale {
            self.rescore_all(rescore)?;
            self.stale = false;
        }

        if let Some(evicted) = self.mov_losses.push(loss) {
            remove_sorted(&mut self.mov_sorted, evicted);
        }
        insert_sorted(&mut self.mov_sorted, loss);
        self.mov_x.push(x.to_vec());

        if !self.ref_x.is_full() {
            self.ref_x.push(x.to_vec()).expect("not full");
            self.ref_losses.push(loss);
            insert_sorted(&mut self.ref_sorted, loss);
        }

        self.flag = if self.is_ready() {
            let ((u_ref, u_mov), tie_term) = mwu_from_sorted(&self.ref_sorted, &self.mov_sorted);
            let constants = TestConstants::from_samples(
                self.ref_sorted.len(),
                self.mov_sorted.len(),
                tie_term,
            );
            let z = z_value(u_ref.min(u_mov), constants);
            let p = p_value(z);
            self.last_p = Some(p);
            evaluate_flags(p, self.p_warn, self.p_alarm)
        } else {
            DriftFlag::None
        };
        Ok(self.flag)
    }

    fn rescore_all<E, F>(&mut self, rescore: &mut F) -> Result<(), E>
    where
        F: FnMut(&[f64]) -> Result<f64, E>,
    {
        self.ref_losses.clear();
        for x in self.ref_x.iter() {
            self.ref_losses.push(rescore(x)?);
        }
        self.ref_sorted.clear();
        self.ref_sorted.extend_from_slice(&self.ref_losses);
        self.ref_sorted.sort_by(f64::total_cmp);

        let mut fresh = SlidingWindow::new(self.window);
        self.mov_sorted.clear();
        for x in self.mov_x.iter() {
            let loss = rescore(x)?;
            fresh.push(loss);
            insert_sorted(&mut self.mov_sorted, loss);
        }
        self.mov_losses = fresh;
        Ok(())
    }
}

fn insert_sorted(v: &mut Vec<f64>, x: f64) {
    let idx = v.partition_point(|&e| e < x);
    v.insert(idx, x);
}

fn remove_sorted(v: &mut Vec<f64>, x: f64) {
    let idx = v.partition_point(|&e| e < x);
    debug_assert!(idx < v.len() && v[idx] == x, "value {x} missing from sorted cache");
    v.remove(idx);
}
