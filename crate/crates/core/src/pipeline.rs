//! End-to-end orchestration behind the CLI subcommands.
//!
//! Stage outputs live under fixed locations inside the output directory:
//!
//! ```text
//! out/
//!   datasets/{d1,d2,d3,remix_half,remix_third}/
//!   models/{cnn_baseline,cnn_half,cnn_third}/   model.json weights.f32le loss_log.csv
//!   models/forest/forest.json importance.csv confusion.csv
//!   features/features.csv split.csv
//!   search/<scorer>/events_{background,foreground}.csv trigger_count_histogram.csv
//!   report/
//! ```
//!
//! Every stage writes a manifest echoing the full configuration and the
//! crate version, contains no timestamps, and is a pure function of its
//! declared inputs, so reruns are byte-identical.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cnn::{self, Checkpoint, Network, Tensor3, Variant};
use crate::config::{DatasetKind, PipelineConfig, ScorerKind};
use crate::dataio::{self, WindowSet, CLASS_GLITCH, CLASS_NOISE, CLASS_SIGNAL};
use crate::dsp::{self, PsdEstimate, RealSeries};
use crate::error::{Error, Result};
use crate::evaluation::{self, Injection, RocCurve};
use crate::features::{self, FeatureVector, FEATURE_NAMES};
use crate::forest::{self, ForestModel};
use crate::search::{
    self, CnnRfScorer, CnnScorer, Event, MultiScorer, Recording, WindowScorer,
};
use crate::synth::{self, Detector, GlitchParams, InjectionMeta, StrainSegment};

/// Reference scores reported by the original full-scale experiment; they
/// appear in report tables for comparison and are never asserted.
pub const REFERENCE_SENSITIVE_FRACTION: [(&str, [f64; 3]); 4] = [
    ("cnn", [0.62, 0.66, 0.71]),
    ("cnn_rf", [0.75, 0.78, 0.80]),
    ("cnn_half", [0.40, 0.59, 0.71]),
    ("cnn_third", [0.43, 0.56, 0.61]),
];

/// Reference impurity importances (variance, snr, overlap, peak, output).
pub const REFERENCE_IMPORTANCE: [f64; 5] = [0.3943, 0.1629, 0.1219, 0.0626, 0.2583];

/// Reference OvR AUC per class (noise, signal, glitch).
pub const REFERENCE_AUC: [f64; 3] = [0.982, 0.976, 0.957];

/// Configure the global worker pool; 0 keeps the core count.
pub fn init_threads(threads: usize) {
    if threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunManifest {
    command: String,
    version: String,
    seed: u64,
    config: PipelineConfig,
}

fn write_run_manifest(cfg: &PipelineConfig, command: &str, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    dataio::write_json(
        &dir.join("manifest.json"),
        &RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.seed,
            config: cfg.clone(),
        },
    )
}

/// Build one dataset (d1, d2, or the d3 recording pair).
pub fn cmd_synth(cfg: &PipelineConfig, kind: DatasetKind) -> Result<()> {
    let dir = cfg.dataset_dir(kind.as_str());
    match kind {
        DatasetKind::D1 => {
            let m = synth::build_d1(cfg.synth.d1_count, &cfg.synth.common, cfg.seed, &dir)?;
            println!(
                "d1: {} samples ({} noise / {} signal) -> {}",
                m.count,
                m.class_counts[0],
                m.class_counts[1],
                dir.display()
            );
            for (name, sum) in &m.checksums {
                println!("  sha256 {name} {sum}");
            }
        }
        DatasetKind::D2 => {
            let m = synth::build_d2(cfg.synth.d2_count, &cfg.synth.common, cfg.seed, &dir)?;
            println!(
                "d2: {} samples ({} noise / {} signal / {} glitch) -> {}",
                m.count,
                m.class_counts[0],
                m.class_counts[1],
                m.class_counts[2],
                dir.display()
            );
            for (name, sum) in &m.checksums {
                println!("  sha256 {name} {sum}");
            }
        }
        DatasetKind::D3 => {
            let m = synth::build_long_recording(
                &cfg.synth.recording,
                &cfg.synth.common,
                cfg.seed,
                &dir,
            )?;
            println!(
                "d3: {:.2} h background + foreground, {} injections, {} glitches -> {}",
                m.duration_s / 3600.0,
                m.injection_count,
                m.glitch_count,
                dir.display()
            );
            for (name, sum) in &m.checksums {
                println!("  sha256 {name} {sum}");
            }
        }
    }
    Ok(())
}

fn variant_dataset(cfg: &PipelineConfig, variant: Variant) -> Result<(PathBuf, WindowSet)> {
    let window_len = cfg.synth.common.window_len();
    match variant {
        Variant::Baseline => {
            let dir = cfg.dataset_dir("d1");
            let set = WindowSet::load(&dir, 2, window_len)?;
            Ok((dir, set))
        }
        Variant::Half => {
            let dir = cfg.dataset_dir("remix_half");
            if !dir.join("samples.f32le").exists() {
                synth::build_half_remix(
                    cfg.synth.variant_train_count,
                    &cfg.synth.common,
                    cfg.seed,
                    &dir,
                )?;
            }
            let mut set = WindowSet::load(&dir, 2, window_len)?;
            // Collapse to binary: signal vs everything else.
            for l in set.labels.iter_mut() {
                *l = u8::from(*l == CLASS_SIGNAL);
            }
            Ok((dir, set))
        }
        Variant::Third => {
            let dir = cfg.dataset_dir("remix_third");
            if !dir.join("samples.f32le").exists() {
                synth::build_third_remix(
                    cfg.synth.variant_train_count,
                    &cfg.synth.common,
                    cfg.seed,
                    &dir,
                )?;
            }
            let set = WindowSet::load(&dir, 2, window_len)?;
            Ok((dir, set))
        }
    }
}

/// Train one network variant; writes the checkpoint and per-epoch loss log.
pub fn cmd_train_cnn(cfg: &PipelineConfig, variant: Variant) -> Result<PathBuf> {
    let (data_dir, set) = variant_dataset(cfg, variant)?;
    eprintln!(
        "training {} on {} windows from {}",
        variant.as_str(),
        set.n,
        data_dir.display()
    );
    let out = cnn::train_cnn(&set, &cfg.train_config(), variant)?;
    let dir = cfg.model_dir(&format!("cnn_{}", variant.as_str()));
    out.checkpoint.save(&dir)?;
    let rows: Vec<Vec<String>> = out
        .log
        .iter()
        .map(|e| {
            vec![
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.val_loss.to_string(),
                e.val_accuracy.to_string(),
            ]
        })
        .collect();
    dataio::write_csv(&dir.join("loss_log.csv"), "epoch,train_loss,val_loss,val_accuracy", &rows)?;
    write_run_manifest(cfg, &format!("train-cnn --variant {}", variant.as_str()), &dir)?;
    println!(
        "{}: best epoch {} (train loss {:.6}) -> {}",
        variant.as_str(),
        out.checkpoint.manifest.epoch,
        out.checkpoint.manifest.train_loss,
        dir.display()
    );
    Ok(dir)
}

fn load_checkpoint(cfg: &PipelineConfig, name: &str) -> Result<Checkpoint> {
    let dir = cfg.model_dir(name);
    if !dir.join("model.json").exists() {
        return Err(Error::missing(&dir.join("model.json")));
    }
    Checkpoint::load(&dir)
}

/// Extract the five-feature table from d2 with the fixed baseline network.
pub fn cmd_extract_features(cfg: &PipelineConfig) -> Result<()> {
    use rayon::prelude::*;

    let ck = load_checkpoint(cfg, "cnn_baseline")?;
    let net = ck.to_network()?;
    let set = WindowSet::load(&cfg.dataset_dir("d2"), 2, cfg.synth.common.window_len())?;
    eprintln!("extracting features for {} windows", set.n);

    let rows: Vec<(FeatureVector, u8)> = (0..set.n)
        .into_par_iter()
        .map(|i| {
            let x = set.window_tensor(i).expect("window shape");
            let (probs, maps) = net.forward_capture(&x).expect("forward");
            let stack = maps.cast::<f64>();
            let probs64: Vec<f64> = probs.iter().map(|&p| p as f64).collect();
            let fv = features::assemble_feature_vector(&stack, &probs64).expect("features");
            (fv, set.labels[i])
        })
        .collect();

    let dir = cfg.features_dir();
    std::fs::create_dir_all(&dir)?;
    features::write_feature_table(&dir.join("features.csv"), &rows)?;

    let n_train = ((set.n as f64) * (1.0 - cfg.rf.test_fraction)).floor() as usize;
    let split_rows: Vec<Vec<String>> = (0..set.n)
        .map(|i| {
            vec![i.to_string(), if i < n_train { "train".into() } else { "test".into() }]
        })
        .collect();
    dataio::write_csv(&dir.join("split.csv"), "index,role", &split_rows)?;
    write_run_manifest(cfg, "extract-features", &dir)?;
    println!(
        "features: {} rows ({} train / {} test) -> {}",
        rows.len(),
        n_train,
        set.n - n_train,
        dir.display()
    );
    Ok(())
}

/// Read the feature table together with its split file.
pub fn load_feature_split(
    cfg: &PipelineConfig,
) -> Result<(Vec<(FeatureVector, u8)>, Vec<usize>, Vec<usize>)> {
    let dir = cfg.features_dir();
    let rows = features::read_feature_table(&dir.join("features.csv"))?;
    let (header, split) = dataio::read_csv(&dir.join("split.csv"))?;
    if header != "index,role" {
        return Err(Error::Format(format!("unexpected split header `{header}`")));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for r in &split {
        let idx: usize = r[0]
            .parse()
            .map_err(|_| Error::Format(format!("bad split index `{}`", r[0])))?;
        match r[1].as_str() {
            "train" => train.push(idx),
            "test" => test.push(idx),
            other => return Err(Error::Format(format!("bad split role `{other}`"))),
        }
    }
    Ok((rows, train, test))
}

/// Train the random forest on the extracted feature table.
pub fn cmd_train_rf(cfg: &PipelineConfig) -> Result<()> {
    let (rows, train, test) = load_feature_split(cfg)?;
    let feature_rows: Vec<Vec<f64>> = rows.iter().map(|(fv, _)| fv.as_array().to_vec()).collect();
    let labels: Vec<u8> = rows.iter().map(|(_, l)| *l).collect();

    let train_rows: Vec<Vec<f64>> = train.iter().map(|&i| feature_rows[i].clone()).collect();
    let train_labels: Vec<u8> = train.iter().map(|&i| labels[i]).collect();
    let names: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    eprintln!("fitting {} trees on {} rows", cfg.rf.n_trees, train_rows.len());
    let model = forest::fit_forest(&train_rows, &train_labels, 3, &names, &cfg.forest_config())?;

    let dir = cfg.model_dir("forest");
    std::fs::create_dir_all(&dir)?;
    model.save(&dir.join("forest.json"))?;

    // Test-split confusion matrix.
    let mut confusion = [[0usize; 3]; 3];
    for &i in &test {
        let pred = forest::predict(&model, &feature_rows[i]);
        confusion[labels[i] as usize][pred] += 1;
    }
    let confusion_rows: Vec<Vec<String>> = (0..3)
        .map(|t| {
            let mut row = vec![dataio::CLASS_NAMES[t].to_string()];
            row.extend((0..3).map(|p| confusion[t][p].to_string()));
            row
        })
        .collect();
    dataio::write_csv(
        &dir.join("confusion.csv"),
        "true_class,pred_noise,pred_signal,pred_glitch",
        &confusion_rows,
    )?;

    let importance = forest::feature_importance(&model);
    let permutation = if cfg.rf.permutation_importance {
        Some(forest::permutation_importance(&model, &train_rows, &train_labels, 5, cfg.rf.seed))
    } else {
        None
    };
    write_importance_csv(&dir.join("importance.csv"), &importance, permutation.as_deref())?;
    write_run_manifest(cfg, "train-rf", &dir)?;

    let correct: usize = (0..3).map(|c| confusion[c][c]).sum();
    let total: usize = test.len();
    println!(
        "forest: {} trees, test accuracy {:.4} -> {}",
        model.trees.len(),
        correct as f64 / total.max(1) as f64,
        dir.display()
    );
    Ok(())
}

fn write_importance_csv(
    path: &Path,
    importance: &[f64],
    permutation: Option<&[f64]>,
) -> Result<()> {
    let header = if permutation.is_some() {
        "feature,score,reference_score,permutation_score"
    } else {
        "feature,score,reference_score"
    };
    let rows: Vec<Vec<String>> = FEATURE_NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let mut row = vec![
                name.to_string(),
                importance[i].to_string(),
                REFERENCE_IMPORTANCE[i].to_string(),
            ];
            if let Some(p) = permutation {
                row.push(p[i].to_string());
            }
            row
        })
        .collect();
    dataio::write_csv(path, header, &rows)
}

/// Models backing the requested scorers, composed so shared forward passes
/// run once (the baseline network serves both `cnn` and `cnn_rf`).
fn build_scorer(cfg: &PipelineConfig, scorers: &[ScorerKind]) -> Result<(MultiScorer, Vec<String>)> {
    let mut parts: Vec<Box<dyn WindowScorer>> = Vec::new();
    let wants = |k: ScorerKind| scorers.contains(&k);
    if wants(ScorerKind::CnnRf) {
        let net = load_checkpoint(cfg, "cnn_baseline")?.to_network()?;
        let model = ForestModel::load(&cfg.model_dir("forest").join("forest.json"))?;
        parts.push(Box::new(CnnRfScorer { net, forest: model }));
    } else if wants(ScorerKind::Cnn) {
        let net = load_checkpoint(cfg, "cnn_baseline")?.to_network()?;
        parts.push(Box::new(CnnScorer { name: "cnn".into(), net }));
    }
    if wants(ScorerKind::CnnHalf) {
        let net = load_checkpoint(cfg, "cnn_half")?.to_network()?;
        parts.push(Box::new(CnnScorer { name: "cnn_half".into(), net }));
    }
    if wants(ScorerKind::CnnThird) {
        let net = load_checkpoint(cfg, "cnn_third")?.to_network()?;
        parts.push(Box::new(CnnScorer { name: "cnn_third".into(), net }));
    }
    let scorer = MultiScorer(parts);
    let names = scorer.output_names();
    Ok((scorer, names))
}

fn read_strain(dir: &Path, name: &str) -> Result<Vec<f32>> {
    dataio::read_f32le(&dir.join(format!("strain_{name}.f32le")))
}

/// Condition one recording with the background-derived PSDs.
fn condition_recording(
    dir: &Path,
    fs: f64,
    highpass_hz: f64,
    psds: &(PsdEstimate<f32>, PsdEstimate<f32>),
) -> Result<Recording> {
    let mut channels: Vec<Vec<f32>> = Vec::with_capacity(2);
    for (name, psd) in [("h1", &psds.0), ("l1", &psds.1)] {
        let raw = read_strain(dir, name)?;
        let white = dsp::whiten_highpass_long(&raw, fs, psd, highpass_hz)?;
        drop(raw);
        channels.push(white);
    }
    let l1 = channels.pop().expect("two channels");
    let h1 = channels.pop().expect("two channels");
    Ok(Recording { h1, l1, sample_rate_hz: fs, epoch_s: 0.0 })
}

/// Sliding-window search over the d3 pair with the requested scorers.
pub fn cmd_search(cfg: &PipelineConfig, scorers: &[ScorerKind]) -> Result<()> {
    let d3 = cfg.dataset_dir("d3");
    let manifest: synth::LongRecordingManifest = dataio::read_json(&d3.join("manifest.json"))?;
    let fs = manifest.sample_rate_hz;
    let (scorer, output_names) = build_scorer(cfg, scorers)?;

    // PSD for both runs comes from the background stretch.
    let seg_len = cfg.synth.common.window_len();
    let psds = {
        let h1 = read_strain(&d3.join("background"), "h1")?;
        let l1 = read_strain(&d3.join("background"), "l1")?;
        let ph = dsp::welch_psd(
            &RealSeries { samples: h1, sample_rate_hz: fs },
            seg_len,
            cfg.synth.common.welch_overlap,
        )?;
        let pl = dsp::welch_psd(
            &RealSeries { samples: l1, sample_rate_hz: fs },
            seg_len,
            cfg.synth.common.welch_overlap,
        )?;
        (ph, pl)
    };

    // The foreground histogram counts only clusters near injections, so the
    // curve shows how many windows an injected signal lights up (the
    // background curve shows the same for noise and glitches).
    let injection_times: Vec<f64> = read_injection_list(cfg)
        .map(|v| v.iter().map(|i| i.merger_gps).collect())
        .unwrap_or_default();

    let mut outputs: BTreeMap<String, (Vec<Event>, Vec<usize>, Vec<Event>, Vec<usize>)> =
        BTreeMap::new();
    for run in ["background", "foreground"] {
        eprintln!("search: conditioning + scoring {run}");
        let rec = condition_recording(&d3.join(run), fs, cfg.synth.common.highpass_hz, &psds)?;
        let trigger_lists = search::slide(&rec, &cfg.search.params, &scorer)?;
        drop(rec);
        for (name, triggers) in output_names.iter().zip(trigger_lists.iter()) {
            let spans = search::cluster_spans(triggers, cfg.search.params.cluster_gap_s);
            let sizes: Vec<usize> = if run == "background" {
                spans.iter().map(|c| c.len()).collect()
            } else {
                spans
                    .iter()
                    .filter(|c| {
                        injection_times.iter().any(|&t| {
                            c.iter().any(|trig| (trig.gps_s - t).abs() <= 2.0)
                        })
                    })
                    .map(|c| c.len())
                    .collect()
            };
            let events = search::cluster_triggers(triggers, &cfg.search.params)?;
            let entry = outputs
                .entry(name.clone())
                .or_insert_with(|| (Vec::new(), Vec::new(), Vec::new(), Vec::new()));
            if run == "background" {
                entry.0 = events;
                entry.1 = sizes;
            } else {
                entry.2 = events;
                entry.3 = sizes;
            }
            eprintln!("  {name} {run}: {} triggers", triggers.len());
        }
    }

    for kind in scorers {
        let name = kind.as_str();
        let (bg_events, bg_sizes, fg_events, fg_sizes) = outputs
            .get(name)
            .ok_or_else(|| Error::Numeric(format!("scorer `{name}` produced no output")))?;
        let dir = cfg.search_dir(*kind);
        std::fs::create_dir_all(&dir)?;
        search::write_event_list(bg_events, &dir.join("events_background.csv"))?;
        search::write_event_list(fg_events, &dir.join("events_foreground.csv"))?;
        let hist = search::trigger_count_histogram(bg_sizes, fg_sizes);
        let rows: Vec<Vec<String>> = hist
            .iter()
            .map(|(c, b, f)| vec![c.to_string(), b.to_string(), f.to_string()])
            .collect();
        dataio::write_csv(
            &dir.join("trigger_count_histogram.csv"),
            "count,background,foreground",
            &rows,
        )?;
        write_run_manifest(cfg, &format!("search --scorer {name}"), &dir)?;
        println!(
            "{name}: {} background events, {} foreground events -> {}",
            bg_events.len(),
            fg_events.len(),
            dir.display()
        );
    }
    Ok(())
}

pub fn read_injection_list(cfg: &PipelineConfig) -> Result<Vec<Injection>> {
    let path = cfg.dataset_dir("d3").join("injections.csv");
    Ok(synth::read_injections(&path)?
        .into_iter()
        .map(|(merger_gps, _m1, _m2, snr)| Injection { merger_gps, injection_snr: snr })
        .collect())
}

/// Per-model evaluation bundle.
#[derive(Debug, Clone)]
pub struct ModelEvaluation {
    pub name: String,
    pub far: evaluation::FarCurve,
    pub sensitivity: evaluation::SensitivityCurve,
    /// (far target, threshold value, sensitive fraction)
    pub at_targets: Vec<(f64, f64, f64)>,
    pub distribution: Vec<evaluation::SnrBin>,
}

/// Evaluate one scorer's event lists against the injection manifest.
pub fn evaluate_scorer(
    cfg: &PipelineConfig,
    kind: ScorerKind,
    injections: &[Injection],
    duration_s: f64,
) -> Result<ModelEvaluation> {
    let dir = cfg.search_dir(kind);
    let bg = search::read_event_list(&dir.join("events_background.csv"))?;
    let fg = search::read_event_list(&dir.join("events_foreground.csv"))?;
    let far = evaluation::far_curve(&bg, duration_s)?;
    let window = cfg.eval.association_window_s;
    let sensitivity = evaluation::sensitive_fraction(&fg, injections, &far, window)?;
    let at_targets = cfg
        .eval
        .far_targets_per_month
        .iter()
        .map(|&target| {
            let thr = evaluation::threshold_for_far(&far, target);
            let frac = evaluation::sensitive_fraction_at(&fg, injections, &thr, window)?;
            Ok((target, thr.value, frac))
        })
        .collect::<Result<Vec<_>>>()?;
    let dist_thr = evaluation::threshold_for_far(&far, cfg.eval.distribution_far_per_month);
    let distribution = evaluation::sensitive_distribution(
        &fg,
        injections,
        &dist_thr,
        window,
        cfg.eval.snr_bin_lo,
        cfg.eval.snr_bin_hi,
    )?;
    Ok(ModelEvaluation { name: kind.as_str().into(), far, sensitivity, at_targets, distribution })
}

fn feature_histogram_rows(
    rows: &[(FeatureVector, u8)],
    indices: &[usize],
    bins: usize,
) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for (f_idx, f_name) in FEATURE_NAMES.iter().enumerate() {
        let values: Vec<f64> = indices.iter().map(|&i| rows[i].0.as_array()[f_idx]).collect();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let mut counts = vec![[0usize; 3]; bins];
        for &i in indices {
            let v = rows[i].0.as_array()[f_idx];
            let b = (((v - lo) / span * bins as f64).floor() as usize).min(bins - 1);
            counts[b][rows[i].1 as usize] += 1;
        }
        let class_totals: [usize; 3] = {
            let mut t = [0usize; 3];
            for &i in indices {
                t[rows[i].1 as usize] += 1;
            }
            t
        };
        for (b, c) in counts.iter().enumerate() {
            for class in 0..3 {
                let freq = if class_totals[class] == 0 {
                    0.0
                } else {
                    c[class] as f64 / class_totals[class] as f64
                };
                out.push(vec![
                    f_name.to_string(),
                    dataio::CLASS_NAMES[class].to_string(),
                    (lo + b as f64 * span / bins as f64).to_string(),
                    (lo + (b + 1) as f64 * span / bins as f64).to_string(),
                    c[class].to_string(),
                    freq.to_string(),
                ]);
            }
        }
    }
    out
}

/// Median of a slice (empty slices give NaN).
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Representative inputs for the per-layer feature-map export: a pure
/// waveform, a signal (waveform + noise), pure noise, and a glitch, all
/// drawn deterministically and conditioned like training data.
pub fn representative_windows(cfg: &PipelineConfig) -> Result<Vec<(String, Tensor3<f32>)>> {
    let sc = &cfg.synth.common;
    let fs = sc.sample_rate_hz;
    let dur = sc.segment_duration_s;
    let win = sc.window_len();

    let noise_h = synth::colored_noise(&sc.psd, dur, fs, cfg.seed ^ 0x6669_6733)?;
    let noise_l = synth::colored_noise(&sc.psd, dur, fs, cfg.seed ^ 0x6669_6734)?;
    let meta = InjectionMeta {
        m1_msun: 30.0,
        m2_msun: 30.0,
        injection_snr: 16.0,
        merger_time_s: sc.merger_time_s,
        amp_ratio: 0.9,
        time_delay_s: 0.004,
        spin1z: 0.0,
        spin2z: 0.0,
    };
    let (h, l) = synth::newtonian_chirp(&meta, fs, dur)?;
    let noise_seg =
        StrainSegment::new(noise_h.clone(), noise_l.clone(), 0.0, CLASS_NOISE)?;
    let (signal_seg, alpha) = synth::inject(&noise_seg, &h, &l, meta.injection_snr, &sc.psd)?;

    // Pure waveform, whitened with the noise-derived PSDs so the scale is
    // comparable to the signal sample.
    let seg_len = sc.window_len();
    let psd_h = dsp::welch_psd(&noise_h, seg_len, sc.welch_overlap)?;
    let psd_l = dsp::welch_psd(&noise_l, seg_len, sc.welch_overlap)?;
    let wave_h = dsp::whiten_highpass(
        &RealSeries::new(h.samples.iter().map(|v| alpha * v).collect(), fs)?,
        &psd_h,
        sc.highpass_hz,
    )?;
    let wave_l = dsp::whiten_highpass(
        &RealSeries::new(l.samples.iter().map(|v| alpha * v).collect(), fs)?,
        &psd_l,
        sc.highpass_hz,
    )?;

    let glitch = GlitchParams {
        center_time_s: 4.0,
        f0_hz: 150.0,
        q: 8.0,
        amplitude_snr: 15.0,
        detector: Detector::H1,
    };
    let burst = synth::sine_gaussian_glitch(&glitch, fs, dur, &sc.psd)?;
    let mut glitch_seg = noise_seg.clone();
    for (o, &v) in glitch_seg.h1.samples.iter_mut().zip(burst.samples.iter()) {
        *o += v;
    }
    glitch_seg.label = CLASS_GLITCH;

    let noise_cond = synth::condition_segment(&noise_seg, sc)?;
    let signal_cond = synth::condition_segment(&signal_seg, sc)?;
    let glitch_cond = synth::condition_segment(&glitch_seg, sc)?;

    let cut = |seg: &StrainSegment, start_s: f64| -> Result<Tensor3<f32>> {
        let start = (start_s * fs).round() as usize;
        let mut data = Vec::with_capacity(2 * win);
        data.extend(seg.h1.samples[start..start + win].iter().map(|&v| v as f32));
        data.extend(seg.l1.samples[start..start + win].iter().map(|&v| v as f32));
        Tensor3::from_vec(data, (1, 2, win))
    };
    let merger_window_start = sc.merger_time_s - 0.5;
    let wave_seg = StrainSegment::new(wave_h, wave_l, 0.0, CLASS_SIGNAL)?;
    Ok(vec![
        ("waveform".to_string(), cut(&wave_seg, merger_window_start)?),
        ("signal".to_string(), cut(&signal_cond, merger_window_start)?),
        ("noise".to_string(), cut(&noise_cond, 3.5)?),
        ("glitch".to_string(), cut(&glitch_cond, glitch.center_time_s - 0.5)?),
    ])
}

fn export_feature_maps(cfg: &PipelineConfig, net: &Network<f32>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, window) in representative_windows(cfg)? {
        let trace = net.forward_trace(&window)?;
        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut conv_idx = 0usize;
        for entry in &trace {
            let is_input = entry.label == "input";
            if entry.label != "conv" && !is_input {
                continue;
            }
            if entry.label == "conv" {
                conv_idx += 1;
            }
            let (ch, det, t) = match entry.shape.as_slice() {
                [c, d, t] => (*c, *d, *t),
                _ => continue,
            };
            for map in 0..ch.min(2) {
                for d in 0..det {
                    for i in 0..t {
                        rows.push(vec![
                            if is_input { "input".into() } else { format!("conv{conv_idx}") },
                            map.to_string(),
                            if d == 0 { "H1".into() } else { "L1".into() },
                            i.to_string(),
                            entry.data[(map * det + d) * t + i].to_string(),
                        ]);
                    }
                }
            }
        }
        dataio::write_csv(&dir.join(format!("{name}.csv")), "layer,map,detector,t,value", &rows)?;
    }
    Ok(())
}

/// Assemble the report directory from the completed stage outputs.
pub fn cmd_evaluate(cfg: &PipelineConfig) -> Result<()> {
    let report = cfg.report_dir();
    std::fs::create_dir_all(&report)?;

    let d3_manifest: synth::LongRecordingManifest =
        dataio::read_json(&cfg.dataset_dir("d3").join("manifest.json"))?;
    let injections = read_injection_list(cfg)?;

    // Which scorers have completed searches?
    let evaluated: Vec<ModelEvaluation> = cfg
        .search
        .scorers
        .iter()
        .filter(|k| cfg.search_dir(**k).join("events_background.csv").exists())
        .map(|k| evaluate_scorer(cfg, *k, &injections, d3_manifest.duration_s))
        .collect::<Result<_>>()?;
    if evaluated.is_empty() {
        return Err(Error::MissingInput(format!(
            "no completed searches under {}",
            cfg.out_dir.join("search").display()
        )));
    }

    // Sensitive fraction at the FAR targets (with reference values).
    let mut rows = Vec::new();
    for ev in &evaluated {
        let reference = REFERENCE_SENSITIVE_FRACTION
            .iter()
            .find(|(n, _)| *n == ev.name)
            .map(|(_, v)| *v);
        for (i, (target, thr, frac)) in ev.at_targets.iter().enumerate() {
            rows.push(vec![
                ev.name.clone(),
                target.to_string(),
                thr.to_string(),
                frac.to_string(),
                reference.map(|r| r[i].to_string()).unwrap_or_default(),
            ]);
        }
    }
    dataio::write_csv(
        &report.join("sensitive_fraction.csv"),
        "model,far_per_month,threshold,sensitive_fraction,reference_fraction",
        &rows,
    )?;

    // Full sensitivity-vs-FAR curves.
    let mut rows = Vec::new();
    for ev in &evaluated {
        for (far, frac) in &ev.sensitivity.points {
            rows.push(vec![ev.name.clone(), far.to_string(), frac.to_string()]);
        }
    }
    dataio::write_csv(
        &report.join("sensitivity_vs_far.csv"),
        "model,far_per_month,sensitive_fraction",
        &rows,
    )?;

    // Per-SNR sensitive distribution at the distribution FAR target.
    let mut rows = Vec::new();
    for ev in &evaluated {
        for bin in &ev.distribution {
            rows.push(vec![
                ev.name.clone(),
                bin.lo.to_string(),
                bin.hi.to_string(),
                bin.total.to_string(),
                bin.detected.to_string(),
                bin.fraction().to_string(),
            ]);
        }
    }
    dataio::write_csv(
        &report.join("sensitive_distribution.csv"),
        "model,snr_lo,snr_hi,total,detected,fraction",
        &rows,
    )?;

    // Trigger-count histograms, one block per scorer.
    let mut rows = Vec::new();
    for ev in &evaluated {
        let path = cfg
            .search_dir(ScorerKind::parse(&ev.name)?)
            .join("trigger_count_histogram.csv");
        let (_, hist) = dataio::read_csv(&path)?;
        for r in hist {
            rows.push(vec![ev.name.clone(), r[0].clone(), r[1].clone(), r[2].clone()]);
        }
    }
    dataio::write_csv(
        &report.join("trigger_count_histogram.csv"),
        "model,count,background,foreground",
        &rows,
    )?;

    // Feature-table products: histograms, medians, ROC/AUC, importances.
    let (feature_rows, train_idx, test_idx) = load_feature_split(cfg)?;
    let hist_rows =
        feature_histogram_rows(&feature_rows, &train_idx, cfg.eval.feature_histogram_bins);
    dataio::write_csv(
        &report.join("feature_histograms.csv"),
        "feature,class,bin_lo,bin_hi,count,frequency",
        &hist_rows,
    )?;

    let model = ForestModel::load(&cfg.model_dir("forest").join("forest.json"))?;
    let probs: Vec<Vec<f64>> = test_idx
        .iter()
        .map(|&i| forest::predict_proba(&model, &feature_rows[i].0.as_array()))
        .collect();
    let test_labels: Vec<u8> = test_idx.iter().map(|&i| feature_rows[i].1).collect();
    let curves = evaluation::roc_ovr(&test_labels, &probs, 3)?;
    let rows: Vec<Vec<String>> = curves
        .iter()
        .map(|c: &RocCurve| {
            vec![
                dataio::CLASS_NAMES[c.class].to_string(),
                c.auc.to_string(),
                REFERENCE_AUC[c.class].to_string(),
            ]
        })
        .collect();
    dataio::write_csv(&report.join("roc_auc.csv"), "class,auc,reference_auc", &rows)?;
    let mut rows = Vec::new();
    for c in &curves {
        for (fpr, tpr) in &c.points {
            rows.push(vec![
                dataio::CLASS_NAMES[c.class].to_string(),
                fpr.to_string(),
                tpr.to_string(),
            ]);
        }
    }
    dataio::write_csv(&report.join("roc_curves.csv"), "class,fpr,tpr", &rows)?;

    let importance = forest::feature_importance(&model);
    write_importance_csv(&report.join("feature_importance.csv"), &importance, None)?;

    // Feature-map visualization data from the baseline network.
    let net = load_checkpoint(cfg, "cnn_baseline")?.to_network()?;
    export_feature_maps(cfg, &net, &report.join("feature_maps"))?;

    // Plain-text summary.
    let mut text = String::new();
    text.push_str("Pipeline report\n===============\n\n");
    text.push_str(&format!(
        "Recording: {:.2} h, {} injections; association window +-{} s\n\n",
        d3_manifest.duration_s / 3600.0,
        injections.len(),
        cfg.eval.association_window_s
    ));
    text.push_str("Sensitive fraction at FAR targets (reference values in parentheses):\n");
    for ev in &evaluated {
        let reference = REFERENCE_SENSITIVE_FRACTION
            .iter()
            .find(|(n, _)| *n == ev.name)
            .map(|(_, v)| *v);
        let cells: Vec<String> = ev
            .at_targets
            .iter()
            .enumerate()
            .map(|(i, (t, _, f))| {
                let r = reference
                    .map(|r| format!(" ({:.2})", r[i]))
                    .unwrap_or_default();
                format!("FAR {t}: {f:.4}{r}")
            })
            .collect();
        text.push_str(&format!("  {:<10} {}\n", ev.name, cells.join("  ")));
    }
    text.push_str("\nOvR AUC on the d2 test split (reference in parentheses):\n");
    for c in &curves {
        text.push_str(&format!(
            "  {:<8} {:.4} ({:.3})\n",
            dataio::CLASS_NAMES[c.class], c.auc, REFERENCE_AUC[c.class]
        ));
    }
    text.push_str("\nImpurity feature importances (reference in parentheses):\n");
    for (i, name) in FEATURE_NAMES.iter().enumerate() {
        text.push_str(&format!(
            "  {:<15} {:.4} ({:.4})\n",
            name, importance[i], REFERENCE_IMPORTANCE[i]
        ));
    }
    text.push_str("\nFeature medians by class (training split):\n");
    for (f_idx, name) in FEATURE_NAMES.iter().enumerate() {
        let med = |class: u8| {
            let v: Vec<f64> = train_idx
                .iter()
                .filter(|&&i| feature_rows[i].1 == class)
                .map(|&i| feature_rows[i].0.as_array()[f_idx])
                .collect();
            median(&v)
        };
        text.push_str(&format!(
            "  {:<15} noise {:.4}  signal {:.4}  glitch {:.4}\n",
            name,
            med(CLASS_NOISE),
            med(CLASS_SIGNAL),
            med(CLASS_GLITCH)
        ));
    }
    std::fs::write(report.join("summary.txt"), text)?;
    write_run_manifest(cfg, "evaluate", &report)?;
    println!("report -> {}", report.display());
    Ok(())
}

/// Run every stage in order with the configured scorers.
pub fn cmd_all(cfg: &PipelineConfig) -> Result<()> {
    cmd_synth(cfg, DatasetKind::D1)?;
    cmd_synth(cfg, DatasetKind::D2)?;
    cmd_synth(cfg, DatasetKind::D3)?;
    cmd_train_cnn(cfg, Variant::Baseline)?;
    if cfg.search.scorers.contains(&ScorerKind::CnnHalf) {
        cmd_train_cnn(cfg, Variant::Half)?;
    }
    if cfg.search.scorers.contains(&ScorerKind::CnnThird) {
        cmd_train_cnn(cfg, Variant::Third)?;
    }
    cmd_extract_features(cfg)?;
    cmd_train_rf(cfg)?;
    cmd_search(cfg, &cfg.search.scorers)?;
    cmd_evaluate(cfg)?;
    Ok(())
}
