//! Frequency-domain primitives.
//!
//! Conventions used throughout:
//!
//! - DFT: `X_k = sum_n x_n * exp(-2*pi*i*k*n/N)`, one-sided storage
//!   (`N/2 + 1` bins for even `N`).
//! - PSD: one-sided, strain^2/Hz; white noise of variance `s^2` at sample
//!   rate `fs` has a flat PSD of `2*s^2/fs`.
//! - Whitening: division of the spectrum by `sqrt(S(f) * fs / 2)`, so noise
//!   drawn from `S(f)` whitens to unit variance per sample.
//! - Inner product: `4 * Re sum a_k * conj(b_k)` over `k = 1 .. N/2-1`
//!   (DC and Nyquist excluded, no PSD division, no delta-f scaling).
//! - High-pass: zero-phase raised-cosine taper rising from `f_cut/2` to
//!   `f_cut`.

use std::any::{Any, TypeId};
use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftNum, FftPlanner};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

thread_local! {
    static PLANNER_F64: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
    static PLANNER_F32: RefCell<FftPlanner<f32>> = RefCell::new(FftPlanner::new());
}

/// Thread-local plan cache; repeated transforms of one length (feature rows,
/// conditioning blocks, Welch segments) plan once per thread.
fn plan<T: FftNum>(n: usize, forward: bool) -> Arc<dyn Fft<T>> {
    let t = TypeId::of::<T>();
    let boxed: Box<dyn Any> = if t == TypeId::of::<f64>() {
        PLANNER_F64.with(|p| {
            let mut p = p.borrow_mut();
            Box::new(if forward { p.plan_fft_forward(n) } else { p.plan_fft_inverse(n) })
                as Box<dyn Any>
        })
    } else if t == TypeId::of::<f32>() {
        PLANNER_F32.with(|p| {
            let mut p = p.borrow_mut();
            Box::new(if forward { p.plan_fft_forward(n) } else { p.plan_fft_inverse(n) })
                as Box<dyn Any>
        })
    } else {
        let mut p = FftPlanner::<T>::new();
        Box::new(if forward { p.plan_fft_forward(n) } else { p.plan_fft_inverse(n) })
    };
    *boxed.downcast::<Arc<dyn Fft<T>>>().expect("planner type")
}

/// Frequency floor for SNR integration; matches the pipeline's high-pass.
pub const SNR_BAND_FLOOR_HZ: f64 = 20.0;

/// A real-valued, uniformly sampled time series.
#[derive(Debug, Clone, PartialEq)]
pub struct RealSeries<T> {
    pub samples: Vec<T>,
    pub sample_rate_hz: f64,
}

impl<T: Scalar> RealSeries<T> {
    pub fn new(samples: Vec<T>, sample_rate_hz: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Length(format!(
                "series needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        if !(sample_rate_hz > 0.0) {
            return Err(Error::Parameter(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        Ok(Self { samples, sample_rate_hz })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }
}

/// One-sided spectrum of a real series.
#[derive(Debug, Clone)]
pub struct Spectrum<T> {
    pub bins: Vec<Complex<T>>,
    pub delta_f_hz: f64,
}

/// One-sided power spectral density estimate.
#[derive(Debug, Clone)]
pub struct PsdEstimate<T> {
    pub values: Vec<T>,
    pub delta_f_hz: f64,
}

impl<T: Scalar> PsdEstimate<T> {
    /// Linear interpolation onto an arbitrary frequency, clamped at the ends.
    pub fn value_at(&self, f_hz: f64) -> T {
        let pos = f_hz / self.delta_f_hz;
        if pos <= 0.0 {
            return self.values[0];
        }
        let last = self.values.len() - 1;
        if pos >= last as f64 {
            return self.values[last];
        }
        let lo = pos.floor() as usize;
        let frac = T::from_f64_c(pos - lo as f64);
        self.values[lo] + (self.values[lo + 1] - self.values[lo]) * frac
    }
}

/// Window applied to Welch segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WelchWindow {
    Hann,
    Rectangular,
}

fn require_even(n: usize, what: &str) -> Result<()> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::Length(format!(
            "{what} requires an even length of at least 2, got {n}"
        )));
    }
    Ok(())
}

/// One-sided DFT of a real series.
pub fn dft_real<T: Scalar + FftNum>(x: &RealSeries<T>) -> Result<Spectrum<T>> {
    let n = x.len();
    require_even(n, "dft_real")?;
    let mut buf: Vec<Complex<T>> = x.samples.iter().map(|&v| Complex::new(v, T::zero())).collect();
    plan::<T>(n, true).process(&mut buf);
    buf.truncate(n / 2 + 1);
    Ok(Spectrum { bins: buf, delta_f_hz: x.sample_rate_hz / n as f64 })
}

/// Inverse of [`dft_real`]: rebuild the length-`n` real series.
pub fn idft_real<T: Scalar + FftNum>(spec: &Spectrum<T>, n: usize) -> Result<RealSeries<T>> {
    require_even(n, "idft_real")?;
    if spec.bins.len() != n / 2 + 1 {
        return Err(Error::Shape(format!(
            "spectrum has {} bins; a length-{n} series needs {}",
            spec.bins.len(),
            n / 2 + 1
        )));
    }
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    buf[..n / 2 + 1].copy_from_slice(&spec.bins);
    for k in 1..n / 2 {
        buf[n - k] = spec.bins[k].conj();
    }
    plan::<T>(n, false).process(&mut buf);
    let inv_n = T::from_f64_c(1.0 / n as f64);
    let samples = buf.iter().map(|c| c.re * inv_n).collect();
    RealSeries::new(samples, spec.delta_f_hz * n as f64)
}

fn hann<T: Scalar>(len: usize) -> Vec<T> {
    (0..len)
        .map(|i| {
            let u = 2.0 * std::f64::consts::PI * i as f64 / len as f64;
            T::from_f64_c(0.5 * (1.0 - u.cos()))
        })
        .collect()
}

/// Welch PSD with the pipeline defaults (Hann window).
pub fn welch_psd<T: Scalar + FftNum>(
    x: &RealSeries<T>,
    segment_length: usize,
    overlap_fraction: f64,
) -> Result<PsdEstimate<T>> {
    welch_psd_windowed(x, segment_length, overlap_fraction, WelchWindow::Hann)
}

/// Welch PSD with an explicit segment window.
pub fn welch_psd_windowed<T: Scalar + FftNum>(
    x: &RealSeries<T>,
    segment_length: usize,
    overlap_fraction: f64,
    window: WelchWindow,
) -> Result<PsdEstimate<T>> {
    require_even(segment_length, "welch_psd segment")?;
    if x.len() < segment_length {
        return Err(Error::Length(format!(
            "series of {} samples is shorter than the segment length {}",
            x.len(),
            segment_length
        )));
    }
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(Error::Parameter(format!(
            "overlap fraction must be in [0,1), got {overlap_fraction}"
        )));
    }
    let w: Vec<T> = match window {
        WelchWindow::Hann => hann(segment_length),
        WelchWindow::Rectangular => vec![T::one(); segment_length],
    };
    let window_power: f64 = w.iter().map(|&v| v.to_f64_c() * v.to_f64_c()).sum();
    let hop = ((segment_length as f64 * (1.0 - overlap_fraction)).round() as usize).max(1);
    let n_bins = segment_length / 2 + 1;
    let mut acc = vec![0.0f64; n_bins];
    let fft = plan::<T>(segment_length, true);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); segment_length];
    let mut n_segments = 0usize;
    let mut start = 0usize;
    while start + segment_length <= x.len() {
        for (b, (&s, &wv)) in buf.iter_mut().zip(x.samples[start..].iter().zip(w.iter())) {
            *b = Complex::new(s * wv, T::zero());
        }
        fft.process(&mut buf);
        for (a, c) in acc.iter_mut().zip(buf[..n_bins].iter()) {
            let re = c.re.to_f64_c();
            let im = c.im.to_f64_c();
            *a += re * re + im * im;
        }
        n_segments += 1;
        start += hop;
    }
    let fs = x.sample_rate_hz;
    let norm = 1.0 / (n_segments as f64 * fs * window_power);
    let values = acc
        .iter()
        .enumerate()
        .map(|(k, &a)| {
            // One-sided doubling except at DC and Nyquist.
            let two_sided = if k == 0 || k == segment_length / 2 { 1.0 } else { 2.0 };
            T::from_f64_c(a * norm * two_sided)
        })
        .collect();
    Ok(PsdEstimate { values, delta_f_hz: fs / segment_length as f64 })
}

/// One-sided whitening multipliers `1/sqrt(S(f_k) * fs/2)` on a length-`n` grid.
fn whitening_multiplier<T: Scalar>(psd: &PsdEstimate<T>, n: usize, fs: f64) -> Result<Vec<f64>> {
    let delta_f = fs / n as f64;
    let mut mult = Vec::with_capacity(n / 2 + 1);
    for k in 0..=n / 2 {
        let s = psd.value_at(k as f64 * delta_f).to_f64_c();
        if !(s > 0.0) {
            return Err(Error::SingularPsd(format!(
                "PSD is {s} at {:.3} Hz",
                k as f64 * delta_f
            )));
        }
        mult.push(1.0 / (s * fs / 2.0).sqrt());
    }
    Ok(mult)
}

/// Raised-cosine high-pass gains: 0 below `f_cut/2`, 1 above `f_cut`.
fn highpass_multiplier(n: usize, fs: f64, f_cut_hz: f64) -> Vec<f64> {
    let delta_f = fs / n as f64;
    (0..=n / 2)
        .map(|k| {
            let f = k as f64 * delta_f;
            let half = f_cut_hz / 2.0;
            if f <= half {
                0.0
            } else if f >= f_cut_hz {
                1.0
            } else {
                0.5 * (1.0 - (std::f64::consts::PI * (f - half) / half).cos())
            }
        })
        .collect()
}

/// Apply a real one-sided spectral multiplier (zero-phase filter).
fn apply_multiplier<T: Scalar + FftNum>(samples: &[T], mult: &[f64]) -> Vec<T> {
    let n = samples.len();
    let mut buf: Vec<Complex<T>> = samples.iter().map(|&v| Complex::new(v, T::zero())).collect();
    plan::<T>(n, true).process(&mut buf);
    for k in 0..=n / 2 {
        let m = T::from_f64_c(mult[k]);
        buf[k] = buf[k] * m;
        if k > 0 && k < n / 2 {
            buf[n - k] = buf[n - k] * m;
        }
    }
    plan::<T>(n, false).process(&mut buf);
    let inv_n = T::from_f64_c(1.0 / n as f64);
    buf.iter().map(|c| c.re * inv_n).collect()
}

/// Whiten a series by a PSD (interpolated onto the series' frequency grid).
pub fn whiten<T: Scalar + FftNum>(x: &RealSeries<T>, psd: &PsdEstimate<T>) -> Result<RealSeries<T>> {
    require_even(x.len(), "whiten")?;
    let mult = whitening_multiplier(psd, x.len(), x.sample_rate_hz)?;
    RealSeries::new(apply_multiplier(&x.samples, &mult), x.sample_rate_hz)
}

/// Zero-phase high-pass at `f_cut_hz`.
pub fn highpass<T: Scalar + FftNum>(x: &RealSeries<T>, f_cut_hz: f64) -> Result<RealSeries<T>> {
    require_even(x.len(), "highpass")?;
    if !(f_cut_hz > 0.0 && f_cut_hz < x.sample_rate_hz / 2.0) {
        return Err(Error::Parameter(format!(
            "high-pass cutoff {f_cut_hz} Hz outside (0, {}) Hz",
            x.sample_rate_hz / 2.0
        )));
    }
    let mult = highpass_multiplier(x.len(), x.sample_rate_hz, f_cut_hz);
    RealSeries::new(apply_multiplier(&x.samples, &mult), x.sample_rate_hz)
}

/// Whiten and high-pass in a single transform.
pub fn whiten_highpass<T: Scalar + FftNum>(
    x: &RealSeries<T>,
    psd: &PsdEstimate<T>,
    f_cut_hz: f64,
) -> Result<RealSeries<T>> {
    require_even(x.len(), "whiten_highpass")?;
    if !(f_cut_hz > 0.0 && f_cut_hz < x.sample_rate_hz / 2.0) {
        return Err(Error::Parameter(format!(
            "high-pass cutoff {f_cut_hz} Hz outside (0, {}) Hz",
            x.sample_rate_hz / 2.0
        )));
    }
    let mut mult = whitening_multiplier(psd, x.len(), x.sample_rate_hz)?;
    for (m, h) in mult.iter_mut().zip(highpass_multiplier(x.len(), x.sample_rate_hz, f_cut_hz)) {
        *m *= h;
    }
    RealSeries::new(apply_multiplier(&x.samples, &mult), x.sample_rate_hz)
}

/// Block size for long-recording conditioning (64 s at 4096 Hz).
const CONDITION_BLOCK: usize = 1 << 18;
/// Guard samples discarded on each side of a conditioned block (4 s at 4096 Hz).
const CONDITION_GUARD: usize = 1 << 14;

/// Whiten + high-pass an arbitrarily long recording in overlap-discard blocks.
///
/// Blocks of [`CONDITION_BLOCK`] samples are filtered with a guard margin of
/// [`CONDITION_GUARD`] on each side; only the interior is kept, so the block
/// decomposition does not leak into the output away from the recording edges.
/// Recordings that fit in one block are filtered directly.
pub fn whiten_highpass_long<T: Scalar + FftNum>(
    samples: &[T],
    sample_rate_hz: f64,
    psd: &PsdEstimate<T>,
    f_cut_hz: f64,
) -> Result<Vec<T>> {
    let n = samples.len();
    require_even(n, "whiten_highpass_long")?;
    if n + 2 * CONDITION_GUARD <= CONDITION_BLOCK {
        let x = RealSeries::new(samples.to_vec(), sample_rate_hz)?;
        return Ok(whiten_highpass(&x, psd, f_cut_hz)?.samples);
    }
    let mut mult = whitening_multiplier(psd, CONDITION_BLOCK, sample_rate_hz)?;
    for (m, h) in mult
        .iter_mut()
        .zip(highpass_multiplier(CONDITION_BLOCK, sample_rate_hz, f_cut_hz))
    {
        *m *= h;
    }
    let hop = CONDITION_BLOCK - 2 * CONDITION_GUARD;
    let mut out = Vec::with_capacity(n);
    let mut block = vec![T::zero(); CONDITION_BLOCK];
    let mut start = 0usize;
    while start < n {
        // Block covers [start - guard, start - guard + BLOCK), zero-padded
        // outside the recording.
        for (i, b) in block.iter_mut().enumerate() {
            let pos = start as i64 - CONDITION_GUARD as i64 + i as i64;
            *b = if pos >= 0 && (pos as usize) < n { samples[pos as usize] } else { T::zero() };
        }
        let filtered = apply_multiplier(&block, &mult);
        let keep = hop.min(n - start);
        out.extend_from_slice(&filtered[CONDITION_GUARD..CONDITION_GUARD + keep]);
        start += hop;
    }
    Ok(out)
}

/// Whitened inner product `4 * Re sum_{k=1}^{N/2-1} a_k * conj(b_k)`.
///
/// DC and Nyquist are excluded; there is no PSD division and no delta-f
/// scaling (the scale cancels in every downstream ratio). A series with only
/// DC content therefore has zero norm under this product.
pub fn inner_product<T: Scalar + FftNum>(a: &RealSeries<T>, b: &RealSeries<T>) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "inner product needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.sample_rate_hz != b.sample_rate_hz {
        return Err(Error::Shape(format!(
            "inner product needs equal sample rates, got {} and {}",
            a.sample_rate_hz, b.sample_rate_hz
        )));
    }
    let sa = dft_real(a)?;
    let sb = dft_real(b)?;
    let n = a.len();
    let mut sum = T::zero();
    for k in 1..n / 2 {
        let prod = sa.bins[k] * sb.bins[k].conj();
        sum += prod.re;
    }
    Ok(T::from_f64_c(4.0) * sum)
}

/// Optimal SNR `sqrt(4 * sum |h(f_k)|^2 / S(f_k) * delta_f)` above 20 Hz,
/// with `h(f) = DFT/fs` (the continuous-transform normalization).
///
/// Under this convention the energy of the whitened waveform equals the
/// squared SNR, i.e. an injection scaled to SNR `rho` stands at `rho` sigma
/// against whitened unit-variance noise; that is what "injection SNR"
/// means for a matched filter. Using raw DFT bins instead would shrink
/// every injection by a factor of the sample rate.
pub fn optimal_snr<T: Scalar + FftNum>(h: &RealSeries<T>, psd: &PsdEstimate<T>) -> Result<T> {
    let spec = dft_real(h)?;
    let n = h.len();
    let fs = h.sample_rate_hz;
    let delta_f = fs / n as f64;
    let mut sum = 0.0f64;
    for k in 1..n / 2 {
        let f = k as f64 * delta_f;
        if f < SNR_BAND_FLOOR_HZ {
            continue;
        }
        let s = psd.value_at(f).to_f64_c();
        if !(s > 0.0) {
            return Err(Error::SingularPsd(format!("PSD is {s} at {f:.3} Hz")));
        }
        let c = spec.bins[k];
        let mag2 = c.re.to_f64_c() * c.re.to_f64_c() + c.im.to_f64_c() * c.im.to_f64_c();
        sum += mag2 / (fs * fs) / s;
    }
    Ok(T::from_f64_c((4.0 * sum * delta_f).sqrt()))
}

/// Two-detector network SNR.
pub fn network_snr<T: Scalar>(rho_h: T, rho_l: T) -> T {
    (rho_h * rho_h + rho_l * rho_l).sqrt()
}
