//! Evaluation mathematics: false-alarm-rate curves, sensitive fractions,
//! per-SNR sensitivity, one-vs-rest ROC/AUC, and report assembly helpers.
//!
//! The FAR at ranking statistic `R` counts background events with stat >= R
//! per unit time (reported per 30-day month). An injection is detected at
//! threshold `R` when a foreground event within +-0.5 s of its merger time
//! has stat >= R; the matched event is the in-window event with the highest
//! stat (nearest in time on ties), so each injection is counted once.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search::Event;

/// FAR time unit: one 30-day month.
pub const SECONDS_PER_MONTH: f64 = 30.0 * 86400.0;

/// Background-derived false-alarm-rate curve; one point per background
/// event, thresholds descending, FAR nondecreasing along the array.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FarCurve {
    pub thresholds: Vec<f64>,
    pub far_per_month: Vec<f64>,
    pub total_duration_s: f64,
}

/// Build the FAR curve from background events.
pub fn far_curve(background: &[Event], duration_s: f64) -> Result<FarCurve> {
    if !(duration_s > 0.0) {
        return Err(Error::Parameter(format!("duration must be positive, got {duration_s}")));
    }
    let months = duration_s / SECONDS_PER_MONTH;
    let mut stats: Vec<f64> = background.iter().map(|e| e.stat).collect();
    stats.sort_by(|a, b| b.partial_cmp(a).expect("finite stats"));
    let mut far = Vec::with_capacity(stats.len());
    let mut i = 0usize;
    while i < stats.len() {
        // Tie group: every event with this stat shares one count.
        let mut j = i;
        while j < stats.len() && stats[j] == stats[i] {
            j += 1;
        }
        for _ in i..j {
            far.push(j as f64 / months);
        }
        i = j;
    }
    Ok(FarCurve { thresholds: stats, far_per_month: far, total_duration_s: duration_s })
}

/// Detection threshold derived from a FAR target. `inclusive` decides
/// whether stats equal to `value` qualify.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatThreshold {
    pub value: f64,
    pub inclusive: bool,
}

impl StatThreshold {
    pub fn admits(&self, stat: f64) -> bool {
        if self.inclusive {
            stat >= self.value
        } else {
            stat > self.value
        }
    }
}

/// The most sensitive background-derived threshold whose FAR stays at or
/// below the target. When even the loudest background event exceeds the
/// target rate, detection requires beating the loudest background stat.
pub fn threshold_for_far(curve: &FarCurve, target_per_month: f64) -> StatThreshold {
    let mut chosen: Option<f64> = None;
    for (t, f) in curve.thresholds.iter().zip(curve.far_per_month.iter()) {
        if *f <= target_per_month {
            chosen = Some(*t);
        } else {
            break;
        }
    }
    match chosen {
        Some(value) => StatThreshold { value, inclusive: true },
        None => match curve.thresholds.first() {
            Some(&max_stat) => StatThreshold { value: max_stat, inclusive: false },
            None => StatThreshold { value: f64::NEG_INFINITY, inclusive: true },
        },
    }
}

/// One injected signal, as read from the injection manifest.
#[derive(Debug, Clone, Copy)]
pub struct Injection {
    pub merger_gps: f64,
    pub injection_snr: f64,
}

/// Stat of the event matched to each injection (highest stat within the
/// association window; nearest in time breaks ties), or None.
pub fn matched_stats(
    foreground: &[Event],
    injections: &[Injection],
    window_s: f64,
) -> Vec<Option<f64>> {
    injections
        .iter()
        .map(|inj| {
            let mut best: Option<(f64, f64)> = None; // (stat, |dt|)
            for e in foreground {
                let dt = (e.time_s - inj.merger_gps).abs();
                if dt <= window_s {
                    let better = match best {
                        None => true,
                        Some((stat, bdt)) => e.stat > stat || (e.stat == stat && dt < bdt),
                    };
                    if better {
                        best = Some((e.stat, dt));
                    }
                }
            }
            best.map(|(stat, _)| stat)
        })
        .collect()
}

/// Sensitivity S(F): fraction of injections detected at each point of the
/// background FAR curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityCurve {
    /// (far_per_month, sensitive_fraction), FAR ascending.
    pub points: Vec<(f64, f64)>,
}

pub fn sensitive_fraction(
    foreground: &[Event],
    injections: &[Injection],
    far: &FarCurve,
    window_s: f64,
) -> Result<SensitivityCurve> {
    if injections.is_empty() {
        return Err(Error::Parameter("injection manifest is empty".into()));
    }
    let stats = matched_stats(foreground, injections, window_s);
    let n = injections.len() as f64;
    let mut points: Vec<(f64, f64)> = far
        .thresholds
        .iter()
        .zip(far.far_per_month.iter())
        .map(|(&thr, &f)| {
            let detected = stats.iter().filter(|s| s.map_or(false, |v| v >= thr)).count();
            (f, detected as f64 / n)
        })
        .collect();
    points.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite FAR"));
    Ok(SensitivityCurve { points })
}

/// Sensitive fraction at one explicit threshold.
pub fn sensitive_fraction_at(
    foreground: &[Event],
    injections: &[Injection],
    threshold: &StatThreshold,
    window_s: f64,
) -> Result<f64> {
    if injections.is_empty() {
        return Err(Error::Parameter("injection manifest is empty".into()));
    }
    let stats = matched_stats(foreground, injections, window_s);
    let detected = stats.iter().filter(|s| s.map_or(false, |v| threshold.admits(v))).count();
    Ok(detected as f64 / injections.len() as f64)
}

/// Unit-width injection-SNR bin with its detection fraction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnrBin {
    pub lo: f64,
    pub hi: f64,
    pub total: usize,
    pub detected: usize,
}

impl SnrBin {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.detected as f64 / self.total as f64
        }
    }
}

/// Detection fraction per unit-width injection-SNR bin at a fixed
/// threshold (bins cover `[lo, hi)`, closed at the top edge).
pub fn sensitive_distribution(
    foreground: &[Event],
    injections: &[Injection],
    threshold: &StatThreshold,
    window_s: f64,
    snr_lo: f64,
    snr_hi: f64,
) -> Result<Vec<SnrBin>> {
    if injections.is_empty() {
        return Err(Error::Parameter("injection manifest is empty".into()));
    }
    let n_bins = (snr_hi - snr_lo).ceil() as usize;
    let mut bins: Vec<SnrBin> = (0..n_bins)
        .map(|i| SnrBin { lo: snr_lo + i as f64, hi: snr_lo + (i + 1) as f64, total: 0, detected: 0 })
        .collect();
    let stats = matched_stats(foreground, injections, window_s);
    for (inj, stat) in injections.iter().zip(stats.iter()) {
        let idx = ((inj.injection_snr - snr_lo).floor() as i64).clamp(0, n_bins as i64 - 1) as usize;
        bins[idx].total += 1;
        if stat.map_or(false, |v| threshold.admits(v)) {
            bins[idx].detected += 1;
        }
    }
    Ok(bins)
}

/// One-vs-rest ROC curve with its AUC.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RocCurve {
    pub class: usize,
    /// (fpr, tpr) points from (0,0) to (1,1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Binary ROC/AUC with tied scores grouped.
pub fn roc_binary(labels: &[bool], scores: &[f64]) -> Result<RocCurve> {
    if labels.len() != scores.len() {
        return Err(Error::Shape("labels and scores must align".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Parameter(
            "ROC needs at least one positive and one negative".into(),
        ));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let mut points = vec![(0.0, 0.0)];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0usize;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    let mut auc = 0.0;
    for w in points.windows(2) {
        auc += (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0;
    }
    Ok(RocCurve { class: 0, points, auc })
}

/// One-vs-rest ROC/AUC for every class.
pub fn roc_ovr(labels: &[u8], probs: &[Vec<f64>], n_classes: usize) -> Result<Vec<RocCurve>> {
    if labels.len() != probs.len() {
        return Err(Error::Shape("labels and probability rows must align".into()));
    }
    (0..n_classes)
        .map(|c| {
            let bin: Vec<bool> = labels.iter().map(|&l| l as usize == c).collect();
            let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
            let mut curve = roc_binary(&bin, &scores)?;
            curve.class = c;
            Ok(curve)
        })
        .collect()
}

/// Least-squares nondecreasing fit (pool-adjacent-violators).
pub fn isotonic_fit(values: &[f64]) -> Vec<f64> {
    #[derive(Clone, Copy)]
    struct Block {
        sum: f64,
        weight: f64,
        len: usize,
    }
    let mut blocks: Vec<Block> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push(Block { sum: v, weight: 1.0, len: 1 });
        while blocks.len() >= 2 {
            let b = blocks[blocks.len() - 1];
            let a = blocks[blocks.len() - 2];
            if a.sum / a.weight <= b.sum / b.weight {
                break;
            }
            blocks.pop();
            let last = blocks.last_mut().expect("nonempty");
            last.sum += b.sum;
            last.weight += b.weight;
            last.len += b.len;
        }
    }
    let mut out = Vec::with_capacity(values.len());
    for b in blocks {
        let mean = b.sum / b.weight;
        out.extend(std::iter::repeat(mean).take(b.len));
    }
    out
}
