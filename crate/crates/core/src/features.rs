//! Hand-crafted features computed from the final convolutional layer.
//!
//! Each of the 128 feature maps holds one length-65 row per detector
//! (H1-feature and L1-feature). Four scalars summarize the stack:
//!
//! - `snr`: mean over maps of `max(|<h|l>| / sqrt(<h|h>), |<l|h>| / sqrt(<l|l>))`
//! - `overlap`: mean of `|<h|l>| / (sqrt(<h|h>) * sqrt(<l|l>))`
//! - `variance`: sum over maps of the population variance of the
//!   min-max-normalized difference `h - l`
//! - `peak_amplitude`: mean over maps of `max |h - l|`
//!
//! Inner products go through [`crate::dsp::inner_product`] after zero-padding
//! the length-65 rows by one sample (the one-sided sum needs an even length).
//! Removable 0/0 singularities contribute 0: zero-norm maps to `snr` and
//! `overlap`, constant-difference maps to `variance`.

use rustfft::FftNum;
use serde::{Deserialize, Serialize};

use crate::cnn::{Tensor3, FEATURE_MAP_SHAPE};
use crate::dataio;
use crate::dsp::{self, RealSeries};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Field order is fixed; the random forest depends on it.
pub const FEATURE_NAMES: [&str; 5] = ["variance", "snr", "overlap", "peak_amplitude", "cnn_output"];

/// The five-component input to the random forest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub variance: f64,
    pub snr: f64,
    pub overlap: f64,
    pub peak_amplitude: f64,
    /// GW-class probability from the fixed two-class network.
    pub cnn_output: f64,
}

impl FeatureVector {
    pub fn as_array(&self) -> [f64; 5] {
        [self.variance, self.snr, self.overlap, self.peak_amplitude, self.cnn_output]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self { variance: a[0], snr: a[1], overlap: a[2], peak_amplitude: a[3], cnn_output: a[4] }
    }
}

fn check_stack<T: Scalar>(stack: &Tensor3<T>) -> Result<()> {
    if stack.shape != FEATURE_MAP_SHAPE {
        return Err(Error::Shape(format!(
            "feature map stack must be {:?}, got {:?}",
            FEATURE_MAP_SHAPE, stack.shape
        )));
    }
    Ok(())
}

/// Inner product of two feature rows, zero-padded to an even length.
fn row_inner_product<T: Scalar + FftNum>(a: &[T], b: &[T]) -> T {
    let mut av = a.to_vec();
    let mut bv = b.to_vec();
    if av.len() % 2 != 0 {
        av.push(T::zero());
        bv.push(T::zero());
    }
    let sa = RealSeries { samples: av, sample_rate_hz: 1.0 };
    let sb = RealSeries { samples: bv, sample_rate_hz: 1.0 };
    dsp::inner_product(&sa, &sb).expect("equal padded lengths")
}

/// Mean cross-detector feature-space SNR.
pub fn feat_snr<T: Scalar + FftNum>(stack: &Tensor3<T>) -> Result<T> {
    check_stack(stack)?;
    let n_maps = stack.shape.0;
    let mut total = T::zero();
    for i in 0..n_maps {
        let h = stack.row(i, 0);
        let l = stack.row(i, 1);
        let hl = row_inner_product(h, l).abs();
        let lh = row_inner_product(l, h).abs();
        let hh = row_inner_product(h, h);
        let ll = row_inner_product(l, l);
        let b1 = if hh > T::zero() { hl / hh.sqrt() } else { T::zero() };
        let b2 = if ll > T::zero() { lh / ll.sqrt() } else { T::zero() };
        total += b1.max(b2);
    }
    Ok(total / T::from_f64_c(n_maps as f64))
}

/// Mean cross-detector waveform overlap (phase similarity, in [0, 1]).
pub fn feat_overlap<T: Scalar + FftNum>(stack: &Tensor3<T>) -> Result<T> {
    check_stack(stack)?;
    let n_maps = stack.shape.0;
    let mut total = T::zero();
    for i in 0..n_maps {
        let h = stack.row(i, 0);
        let l = stack.row(i, 1);
        let hh = row_inner_product(h, h);
        let ll = row_inner_product(l, l);
        if hh > T::zero() && ll > T::zero() {
            let hl = row_inner_product(h, l).abs();
            total += hl / (hh.sqrt() * ll.sqrt());
        }
    }
    Ok(total / T::from_f64_c(n_maps as f64))
}

/// Sum over maps of the variance of the min-max-normalized difference.
pub fn feat_variance<T: Scalar>(stack: &Tensor3<T>) -> Result<T> {
    check_stack(stack)?;
    let (n_maps, _, len) = stack.shape;
    let inv_m = T::one() / T::from_f64_c(len as f64);
    let mut total = T::zero();
    for i in 0..n_maps {
        let h = stack.row(i, 0);
        let l = stack.row(i, 1);
        let x: Vec<T> = h.iter().zip(l.iter()).map(|(&a, &b)| a - b).collect();
        let mut lo = x[0];
        let mut hi = x[0];
        for &v in &x[1..] {
            if v < lo {
                lo = v;
            }
            if v > hi {
                hi = v;
            }
        }
        if hi == lo {
            continue;
        }
        let span = hi - lo;
        let mut mean = T::zero();
        for &v in &x {
            mean += (v - lo) / span;
        }
        mean = mean * inv_m;
        let mut var = T::zero();
        for &v in &x {
            let d = (v - lo) / span - mean;
            var += d * d;
        }
        total += var * inv_m;
    }
    Ok(total)
}

/// Mean over maps of the largest absolute detector difference.
pub fn feat_peak_amplitude<T: Scalar>(stack: &Tensor3<T>) -> Result<T> {
    check_stack(stack)?;
    let n_maps = stack.shape.0;
    let mut total = T::zero();
    for i in 0..n_maps {
        let h = stack.row(i, 0);
        let l = stack.row(i, 1);
        let mut peak = T::zero();
        for (&a, &b) in h.iter().zip(l.iter()) {
            let d = (a - b).abs();
            if d > peak {
                peak = d;
            }
        }
        total += peak;
    }
    Ok(total / T::from_f64_c(n_maps as f64))
}

/// Bundle the four map features with the GW-class network probability.
pub fn assemble_feature_vector<T: Scalar + FftNum>(
    stack: &Tensor3<T>,
    cnn_probs: &[T],
) -> Result<FeatureVector> {
    if cnn_probs.len() != 2 {
        return Err(Error::Shape(format!(
            "expected two-class probabilities, got {}",
            cnn_probs.len()
        )));
    }
    Ok(FeatureVector {
        variance: feat_variance(stack)?.to_f64_c(),
        snr: feat_snr(stack)?.to_f64_c(),
        overlap: feat_overlap(stack)?.to_f64_c(),
        peak_amplitude: feat_peak_amplitude(stack)?.to_f64_c(),
        cnn_output: cnn_probs[dataio::CLASS_SIGNAL as usize].to_f64_c(),
    })
}

/// Feature table header (one row per sample).
pub const FEATURE_TABLE_HEADER: &str = "variance,snr,overlap,peak_amplitude,cnn_output,label";

pub fn write_feature_table(
    path: &std::path::Path,
    rows: &[(FeatureVector, u8)],
) -> Result<()> {
    let formatted: Vec<Vec<String>> = rows
        .iter()
        .map(|(fv, label)| {
            vec![
                fv.variance.to_string(),
                fv.snr.to_string(),
                fv.overlap.to_string(),
                fv.peak_amplitude.to_string(),
                fv.cnn_output.to_string(),
                label.to_string(),
            ]
        })
        .collect();
    dataio::write_csv(path, FEATURE_TABLE_HEADER, &formatted)
}

pub fn read_feature_table(path: &std::path::Path) -> Result<Vec<(FeatureVector, u8)>> {
    let (header, rows) = dataio::read_csv(path)?;
    if header != FEATURE_TABLE_HEADER {
        return Err(Error::Format(format!("unexpected feature table header `{header}`")));
    }
    rows.iter()
        .map(|r| {
            if r.len() != 6 {
                return Err(Error::Format("feature row arity".into()));
            }
            let fv = FeatureVector {
                variance: dataio::parse_f64(&r[0], "variance")?,
                snr: dataio::parse_f64(&r[1], "snr")?,
                overlap: dataio::parse_f64(&r[2], "overlap")?,
                peak_amplitude: dataio::parse_f64(&r[3], "peak_amplitude")?,
                cnn_output: dataio::parse_f64(&r[4], "cnn_output")?,
            };
            let label = r[5]
                .parse::<u8>()
                .map_err(|_| Error::Format(format!("bad label `{}`", r[5])))?;
            Ok((fv, label))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn stack_from(f: impl Fn(usize, usize, usize) -> f64) -> Tensor3<f64> {
        let mut t = Tensor3::zeros(FEATURE_MAP_SHAPE);
        for i in 0..128 {
            for d in 0..2 {
                for j in 0..65 {
                    t.row_mut(i, d)[j] = f(i, d, j);
                }
            }
        }
        t
    }

    fn random_stack(seed: u64) -> Tensor3<f64> {
        let mut rng = crate::rng::stream(seed, "feat-test", 0);
        let mut t = Tensor3::zeros(FEATURE_MAP_SHAPE);
        for v in t.data.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        t
    }

    // Straight-line re-implementation with a direct O(n^2) DFT, independent
    // of the FFT-backed production path.
    mod oracle {
        pub fn inner(a: &[f64], b: &[f64]) -> f64 {
            let mut av = a.to_vec();
            let mut bv = b.to_vec();
            if av.len() % 2 == 1 {
                av.push(0.0);
                bv.push(0.0);
            }
            let n = av.len();
            let mut sum = 0.0;
            for k in 1..n / 2 {
                let (mut ar, mut ai, mut br, mut bi) = (0.0, 0.0, 0.0, 0.0);
                for t in 0..n {
                    let ang = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                    ar += av[t] * ang.cos();
                    ai += av[t] * ang.sin();
                    br += bv[t] * ang.cos();
                    bi += bv[t] * ang.sin();
                }
                sum += ar * br + ai * bi; // Re(A * conj(B))
            }
            4.0 * sum
        }

        pub fn snr(stack: &super::Tensor3<f64>) -> f64 {
            let mut total = 0.0;
            for i in 0..128 {
                let h = stack.row(i, 0);
                let l = stack.row(i, 1);
                let hl = inner(h, l).abs();
                let lh = inner(l, h).abs();
                let hh = inner(h, h);
                let ll = inner(l, l);
                let b1 = if hh > 0.0 { hl / hh.sqrt() } else { 0.0 };
                let b2 = if ll > 0.0 { lh / ll.sqrt() } else { 0.0 };
                total += b1.max(b2);
            }
            total / 128.0
        }

        pub fn overlap(stack: &super::Tensor3<f64>) -> f64 {
            let mut total = 0.0;
            for i in 0..128 {
                let h = stack.row(i, 0);
                let l = stack.row(i, 1);
                let hh = inner(h, h);
                let ll = inner(l, l);
                if hh > 0.0 && ll > 0.0 {
                    total += inner(h, l).abs() / (hh.sqrt() * ll.sqrt());
                }
            }
            total / 128.0
        }

        pub fn variance(stack: &super::Tensor3<f64>) -> f64 {
            let mut total = 0.0;
            for i in 0..128 {
                let x: Vec<f64> = (0..65)
                    .map(|j| stack.row(i, 0)[j] - stack.row(i, 1)[j])
                    .collect();
                let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if hi == lo {
                    continue;
                }
                let xn: Vec<f64> = x.iter().map(|v| (v - lo) / (hi - lo)).collect();
                let mu = xn.iter().sum::<f64>() / 65.0;
                total += xn.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 65.0;
            }
            total
        }

        pub fn peak(stack: &super::Tensor3<f64>) -> f64 {
            let mut total = 0.0;
            for i in 0..128 {
                let m = (0..65)
                    .map(|j| (stack.row(i, 0)[j] - stack.row(i, 1)[j]).abs())
                    .fold(0.0, f64::max);
                total += m;
            }
            total / 128.0
        }
    }

    #[test]
    fn identical_detectors_give_degenerate_features() {
        let stack = stack_from(|i, _, j| ((i * 65 + j) as f64 * 0.1).sin());
        assert!((feat_overlap(&stack).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(feat_variance(&stack).unwrap(), 0.0);
        assert_eq!(feat_peak_amplitude(&stack).unwrap(), 0.0);
        // snr reduces to the mean of sqrt(<h|h>).
        let mut expect = 0.0;
        for i in 0..128 {
            expect += oracle::inner(stack.row(i, 0), stack.row(i, 0)).sqrt();
        }
        expect /= 128.0;
        let got = feat_snr(&stack).unwrap();
        assert!((got - expect).abs() < 1e-9 * expect, "{got} vs {expect}");
    }

    #[test]
    fn doubled_detector_selects_smaller_norm_branch() {
        let stack = stack_from(|i, d, j| {
            let base = ((i + j) as f64 * 0.21).cos();
            if d == 1 {
                2.0 * base
            } else {
                base
            }
        });
        // Per map: <h|l> = 2<h|h>; branch1 = 2 sqrt(<h|h>), branch2 = sqrt(<h|h>).
        let mut expect = 0.0;
        for i in 0..128 {
            expect += 2.0 * oracle::inner(stack.row(i, 0), stack.row(i, 0)).sqrt();
        }
        expect /= 128.0;
        let got = feat_snr(&stack).unwrap();
        assert!((got - expect).abs() < 1e-9 * expect);
        // Overlap is scale invariant.
        assert!((feat_overlap(&stack).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ramp_variance_closed_form() {
        // One map with x_j = j, all others zero: Var{0..64}/64^2 = 352/4096.
        let stack = stack_from(|i, d, j| {
            if i == 0 && d == 0 {
                j as f64
            } else {
                0.0
            }
        });
        let v = feat_variance(&stack).unwrap();
        assert!((v - 0.0859375).abs() < 1e-12, "{v}");
    }

    #[test]
    fn single_peak_map_gives_half() {
        let stack = stack_from(|i, d, j| {
            if i == 0 && d == 0 && j == 10 {
                64.0
            } else {
                0.0
            }
        });
        let p = feat_peak_amplitude(&stack).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn features_match_straight_line_oracle() {
        for seed in 0..10 {
            let stack = random_stack(seed);
            let pairs = [
                (feat_snr(&stack).unwrap(), oracle::snr(&stack)),
                (feat_overlap(&stack).unwrap(), oracle::overlap(&stack)),
                (feat_variance(&stack).unwrap(), oracle::variance(&stack)),
                (feat_peak_amplitude(&stack).unwrap(), oracle::peak(&stack)),
            ];
            for (got, want) in pairs {
                assert!(
                    (got - want).abs() <= 1e-9 * want.abs().max(1e-12),
                    "seed {seed}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn sparse_orthogonal_map_matches_oracle() {
        // h = e0, l = e1 in map 0 only.
        let stack = stack_from(|i, d, j| {
            if i == 0 && ((d == 0 && j == 0) || (d == 1 && j == 1)) {
                1.0
            } else {
                0.0
            }
        });
        // Both paths evaluate a mathematically zero cross product here, so
        // compare absolutely at the overlap scale (the metric lives in [0,1]).
        let got = feat_overlap(&stack).unwrap();
        let want = oracle::overlap(&stack);
        assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
    }

    #[test]
    fn invariants_hold_on_random_stacks() {
        for seed in 20..40 {
            let stack = random_stack(seed);
            let overlap = feat_overlap(&stack).unwrap();
            assert!((0.0..=1.0 + 1e-9).contains(&overlap));
            let variance = feat_variance(&stack).unwrap();
            assert!((0.0..=32.0).contains(&variance));
            assert!(feat_snr(&stack).unwrap() >= 0.0);
            assert!(feat_peak_amplitude(&stack).unwrap() >= 0.0);

            // Scale behavior under c > 0.
            let c = 3.7;
            let scaled = Tensor3 {
                data: stack.data.iter().map(|v| c * v).collect(),
                shape: stack.shape,
            };
            let tol = 1e-9;
            assert!((feat_overlap(&scaled).unwrap() - overlap).abs() < tol);
            assert!(
                (feat_variance(&scaled).unwrap() - variance).abs() < tol * variance.max(1.0)
            );
            assert!(
                (feat_snr(&scaled).unwrap() - c * feat_snr(&stack).unwrap()).abs()
                    < tol * feat_snr(&stack).unwrap().max(1.0)
            );
            assert!(
                (feat_peak_amplitude(&scaled).unwrap()
                    - c * feat_peak_amplitude(&stack).unwrap())
                .abs()
                    < tol
            );

            // Detector swap leaves snr/overlap/peak unchanged; variance is
            // recomputed on x -> -x after normalization.
            let mut swapped = Tensor3::zeros(stack.shape);
            for i in 0..128 {
                swapped.row_mut(i, 0).copy_from_slice(stack.row(i, 1));
                swapped.row_mut(i, 1).copy_from_slice(stack.row(i, 0));
            }
            assert!((feat_snr(&swapped).unwrap() - feat_snr(&stack).unwrap()).abs() < tol);
            assert!((feat_overlap(&swapped).unwrap() - overlap).abs() < tol);
            assert!(
                (feat_peak_amplitude(&swapped).unwrap()
                    - feat_peak_amplitude(&stack).unwrap())
                .abs()
                    < tol
            );
            let swapped_var = feat_variance(&swapped).unwrap();
            assert!((swapped_var - oracle::variance(&swapped)).abs() < 1e-9);
        }
    }

    #[test]
    fn assemble_zero_stack_uniform_probs() {
        let stack = Tensor3::zeros(FEATURE_MAP_SHAPE);
        let fv = assemble_feature_vector(&stack, &[0.5, 0.5]).unwrap();
        assert_eq!(fv.as_array(), [0.0, 0.0, 0.0, 0.0, 0.5]);
        // Components equal the single-feature operations.
        let stack = random_stack(50);
        let fv = assemble_feature_vector(&stack, &[0.25, 0.75]).unwrap();
        assert_eq!(fv.variance, feat_variance(&stack).unwrap());
        assert_eq!(fv.snr, feat_snr(&stack).unwrap());
        assert_eq!(fv.overlap, feat_overlap(&stack).unwrap());
        assert_eq!(fv.peak_amplitude, feat_peak_amplitude(&stack).unwrap());
        assert_eq!(fv.cnn_output, 0.75);
    }

    #[test]
    fn feature_table_round_trip_is_bitwise() {
        let rows: Vec<(FeatureVector, u8)> = (0..8)
            .map(|i| {
                let stack = random_stack(60 + i);
                (assemble_feature_vector(&stack, &[0.3, 0.7]).unwrap(), (i % 3) as u8)
            })
            .collect();
        let dir = std::env::temp_dir().join(format!("gwdet-feat-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("features.csv");
        write_feature_table(&path, &rows).unwrap();
        let back = read_feature_table(&path).unwrap();
        std::fs::remove_dir_all(&dir).ok();
        assert_eq!(rows.len(), back.len());
        for ((a, la), (b, lb)) in rows.iter().zip(back.iter()) {
            assert_eq!(la, lb);
            assert_eq!(a.as_array().map(f64::to_bits), b.as_array().map(f64::to_bits));
        }
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let t = Tensor3::<f64>::zeros((64, 2, 65));
        assert!(matches!(feat_snr(&t), Err(Error::Shape(_))));
    }
}
