//! Long-duration detection: sliding-window scoring, trigger thresholding,
//! time clustering, and event-list emission.
//!
//! Windows are 1 s long and advance by 0.1 s; a window whose model score
//! reaches the detection threshold becomes a trigger stamped at the window
//! midpoint. Triggers chained within `cluster_gap_s` form a cluster; a
//! cluster with enough triggers is promoted to an event carrying
//! `(stat, time, var)` where `stat` is the peak trigger score, `time` the
//! GPS of that peak, and `var` a fixed 0.5 s timing accuracy.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cnn::{Network, Tensor3};
use crate::dataio::{self, CLASS_SIGNAL};
use crate::error::{Error, Result};
use crate::features;
use crate::forest::{self, ForestModel};

/// Fixed per-event timing accuracy in seconds.
pub const EVENT_VAR_S: f64 = 0.5;

/// A window whose score met the detection threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trigger {
    /// Window midpoint, GPS-like seconds.
    pub gps_s: f64,
    pub score: f64,
}

/// A clustered detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub stat: f64,
    pub time_s: f64,
    pub var_s: f64,
}

/// Search parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub window_s: f64,
    pub step_s: f64,
    pub threshold: f64,
    pub cluster_min: usize,
    pub cluster_gap_s: f64,
    /// `true`: clusters with count >= cluster_min become events;
    /// `false`: strictly greater.
    pub cluster_min_inclusive: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            window_s: 1.0,
            step_s: 0.1,
            threshold: 0.3,
            cluster_min: 6,
            cluster_gap_s: 0.15,
            cluster_min_inclusive: true,
        }
    }
}

impl SearchConfig {
    fn validate(&self) -> Result<()> {
        if !(self.step_s > 0.0 && self.step_s <= self.window_s) {
            return Err(Error::Parameter(format!(
                "step {} must be in (0, window {}]",
                self.step_s, self.window_s
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Parameter(format!(
                "threshold {} outside (0, 1)",
                self.threshold
            )));
        }
        if self.cluster_min < 1 {
            return Err(Error::Parameter("cluster_min must be at least 1".into()));
        }
        Ok(())
    }
}

/// A model scoring 1 s windows; one scorer may expose several outputs
/// (computed in a single pass over shared intermediate results).
pub trait WindowScorer: Sync {
    fn output_names(&self) -> Vec<String>;
    /// One score in [0, 1] per output.
    fn score(&self, window: &Tensor3<f32>) -> Result<Vec<f64>>;
}

/// GW-class softmax probability of a single network.
pub struct CnnScorer {
    pub name: String,
    pub net: Network<f32>,
}

impl WindowScorer for CnnScorer {
    fn output_names(&self) -> Vec<String> {
        vec![self.name.clone()]
    }

    fn score(&self, window: &Tensor3<f32>) -> Result<Vec<f64>> {
        let probs = self.net.forward(window)?;
        Ok(vec![probs[CLASS_SIGNAL as usize] as f64])
    }
}

/// Baseline network plus random forest; yields the plain network score and
/// the forest score from one captured forward pass.
pub struct CnnRfScorer {
    pub net: Network<f32>,
    pub forest: ForestModel,
}

impl WindowScorer for CnnRfScorer {
    fn output_names(&self) -> Vec<String> {
        vec!["cnn".into(), "cnn_rf".into()]
    }

    fn score(&self, window: &Tensor3<f32>) -> Result<Vec<f64>> {
        let (probs, maps) = self.net.forward_capture(window)?;
        let stack = maps.cast::<f64>();
        let probs64: Vec<f64> = probs.iter().map(|&p| p as f64).collect();
        let fv = features::assemble_feature_vector(&stack, &probs64)?;
        let rf = forest::predict_proba(&self.forest, &fv.as_array());
        Ok(vec![probs64[CLASS_SIGNAL as usize], rf[CLASS_SIGNAL as usize]])
    }
}

/// Several scorers run window-by-window; outputs concatenate in order.
pub struct MultiScorer(pub Vec<Box<dyn WindowScorer>>);

impl WindowScorer for MultiScorer {
    fn output_names(&self) -> Vec<String> {
        self.0.iter().flat_map(|s| s.output_names()).collect()
    }

    fn score(&self, window: &Tensor3<f32>) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for s in &self.0 {
            out.extend(s.score(window)?);
        }
        Ok(out)
    }
}

/// A conditioned (whitened, high-passed) two-detector recording.
#[derive(Debug, Clone)]
pub struct Recording {
    pub h1: Vec<f32>,
    pub l1: Vec<f32>,
    pub sample_rate_hz: f64,
    pub epoch_s: f64,
}

impl Recording {
    fn window_tensor(&self, start: usize, len: usize) -> Result<Tensor3<f32>> {
        let mut data = Vec::with_capacity(2 * len);
        data.extend_from_slice(&self.h1[start..start + len]);
        data.extend_from_slice(&self.l1[start..start + len]);
        Tensor3::from_vec(data, (1, 2, len))
    }
}

/// Slide over the recording; returns one time-sorted trigger list per
/// scorer output. Windows start at multiples of the step (rounded to whole
/// samples); the final partial window is dropped. Scoring runs in parallel
/// but triggers assemble in window order.
pub fn slide(
    rec: &Recording,
    cfg: &SearchConfig,
    scorer: &dyn WindowScorer,
) -> Result<Vec<Vec<Trigger>>> {
    use rayon::prelude::*;

    cfg.validate()?;
    let fs = rec.sample_rate_hz;
    let win = (cfg.window_s * fs).round() as usize;
    let n = rec.h1.len().min(rec.l1.len());
    if n < win {
        return Err(Error::Parameter(format!(
            "recording of {n} samples is shorter than one {win}-sample window"
        )));
    }
    let mut starts = Vec::new();
    let mut k = 0usize;
    loop {
        let start = (k as f64 * cfg.step_s * fs + 0.5).floor() as usize;
        if start + win > n {
            break;
        }
        starts.push(start);
        k += 1;
    }

    let n_outputs = scorer.output_names().len();
    let scores: Vec<Vec<f64>> = starts
        .par_iter()
        .map(|&start| {
            let w = rec.window_tensor(start, win)?;
            scorer.score(&w)
        })
        .collect::<Result<_>>()?;

    let mut out = vec![Vec::new(); n_outputs];
    for (&start, score_row) in starts.iter().zip(scores.iter()) {
        let gps = rec.epoch_s + start as f64 / fs + cfg.window_s / 2.0;
        for (o, &s) in score_row.iter().enumerate() {
            if s >= cfg.threshold {
                out[o].push(Trigger { gps_s: gps, score: s });
            }
        }
    }
    Ok(out)
}

/// Greedy time-chaining of consecutive triggers; returns every cluster
/// regardless of size (the event cut is applied separately).
pub fn cluster_spans(triggers: &[Trigger], gap_s: f64) -> Vec<Vec<Trigger>> {
    let mut clusters: Vec<Vec<Trigger>> = Vec::new();
    for &t in triggers {
        match clusters.last_mut() {
            Some(cur) if t.gps_s - cur.last().expect("nonempty cluster").gps_s <= gap_s => {
                cur.push(t);
            }
            _ => clusters.push(vec![t]),
        }
    }
    clusters
}

fn promote(cluster: &[Trigger]) -> Event {
    let mut best = cluster[0];
    for &t in &cluster[1..] {
        if t.score > best.score {
            best = t;
        }
    }
    Event { stat: best.score, time_s: best.gps_s, var_s: EVENT_VAR_S }
}

/// Cluster triggers and promote large-enough clusters to events.
pub fn cluster_triggers(triggers: &[Trigger], cfg: &SearchConfig) -> Result<Vec<Event>> {
    if triggers.windows(2).any(|w| w[1].gps_s < w[0].gps_s) {
        return Err(Error::Parameter("triggers must be sorted by time".into()));
    }
    Ok(cluster_spans(triggers, cfg.cluster_gap_s)
        .iter()
        .filter(|c| {
            if cfg.cluster_min_inclusive {
                c.len() >= cfg.cluster_min
            } else {
                c.len() > cfg.cluster_min
            }
        })
        .map(|c| promote(c))
        .collect())
}

/// Write the stat/time/var event list, ranked by stat descending (ties by
/// time ascending).
pub fn write_event_list(events: &[Event], path: &Path) -> Result<()> {
    let mut sorted = events.to_vec();
    sorted.sort_by(|a, b| {
        b.stat
            .partial_cmp(&a.stat)
            .expect("finite stats")
            .then(a.time_s.partial_cmp(&b.time_s).expect("finite times"))
    });
    let rows: Vec<Vec<String>> = sorted
        .iter()
        .map(|e| vec![e.stat.to_string(), e.time_s.to_string(), e.var_s.to_string()])
        .collect();
    dataio::write_csv(path, "stat,time,var", &rows)
}

pub fn read_event_list(path: &Path) -> Result<Vec<Event>> {
    let (header, rows) = dataio::read_csv(path)?;
    if header != "stat,time,var" {
        return Err(Error::Format(format!("unexpected event list header `{header}`")));
    }
    rows.iter()
        .map(|r| {
            if r.len() != 3 {
                return Err(Error::Format("event row arity".into()));
            }
            Ok(Event {
                stat: dataio::parse_f64(&r[0], "stat")?,
                time_s: dataio::parse_f64(&r[1], "time")?,
                var_s: dataio::parse_f64(&r[2], "var")?,
            })
        })
        .collect()
}

/// Max-normalized per-cluster trigger-count frequencies for the background
/// and foreground runs. Rows cover counts `1..=max observed`.
pub fn trigger_count_histogram(
    background_sizes: &[usize],
    foreground_sizes: &[usize],
) -> Vec<(usize, f64, f64)> {
    let max = background_sizes
        .iter()
        .chain(foreground_sizes.iter())
        .copied()
        .max()
        .unwrap_or(0);
    if max == 0 {
        return Vec::new();
    }
    let tally = |sizes: &[usize]| {
        let mut freq = vec![0.0f64; max + 1];
        for &s in sizes {
            freq[s] += 1.0;
        }
        let peak = freq.iter().cloned().fold(0.0, f64::max);
        if peak > 0.0 {
            freq.iter_mut().for_each(|v| *v /= peak);
        }
        freq
    };
    let bg = tally(background_sizes);
    let fg = tally(foreground_sizes);
    (1..=max).map(|c| (c, bg[c], fg[c])).collect()
}
