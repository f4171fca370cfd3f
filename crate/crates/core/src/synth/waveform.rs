use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::{mean_power, CoupletLabel, IQFrame, ModScheme, SignalClass, SynthError, NOISELESS};
use crate::rng::rng_from_seed;

pub const MIN_FRAME_LEN: usize = 64;

/// Pulse span in symbols for both RRC and Gaussian shaping.
const RRC_SPAN: usize = 10;
const GAUSS_SPAN: usize = 4;
const GFSK_BT: f64 = 0.5;
const GFSK_INDEX: f64 = 0.5;

/// Root-raised-cosine taps sampled at `sps` samples per symbol over `span`
/// symbols, normalized to unit energy.
pub fn rrc_taps(rolloff: f64, sps: usize, span: usize) -> Vec<f64> {
    let half = (span * sps / 2) as isize;
    let beta = rolloff;
    let mut taps: Vec<f64> = (-half..=half)
        .map(|n| {
            let t = n as f64 / sps as f64;
            if n == 0 {
                1.0 - beta + 4.0 * beta / PI
            } else if beta > 0.0 && (t.abs() - 1.0 / (4.0 * beta)).abs() < 1e-12 {
                let a = PI / (4.0 * beta);
                beta / 2f64.sqrt() * ((1.0 + 2.0 / PI) * a.sin() + (1.0 - 2.0 / PI) * a.cos())
            } else {
                let num = (PI * t * (1.0 - beta)).sin() + 4.0 * beta * t * (PI * t * (1.0 + beta)).cos();
                let den = PI * t * (1.0 - (4.0 * beta * t).powi(2));
                num / den
            }
        })
        .collect();
    let energy = taps.iter().map(|h| h * h).sum::<f64>().sqrt();
    taps.iter_mut().for_each(|h| *h /= energy);
    taps
}

fn gaussian_taps(bt: f64, sps: usize, span: usize) -> Vec<f64> {
    let half = (span * sps / 2) as isize;
    let sigma = (2f64.ln()).sqrt() / (2.0 * PI * bt);
    let mut taps: Vec<f64> = (-half..=half)
        .map(|n| {
            let t = n as f64 / sps as f64;
            (-t * t / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|h| *h /= sum);
    taps
}

/// Linear convolution of an impulse train (one impulse every `sps` samples)
/// with `taps`, keeping `frame_len` steady-state samples.
fn shape_symbols(symbols: &[Complex64], taps: &[f64], sps: usize, frame_len: usize) -> Vec<Complex64> {
    let offset = taps.len() - 1;
    (0..frame_len)
        .map(|m| {
            let n = m + offset;
            // symbols k with 0 <= n - k*sps < taps.len()
            let k_hi = n / sps;
            let k_lo = (n + 1).saturating_sub(taps.len()).div_ceil(sps);
            (k_lo..=k_hi.min(symbols.len() - 1))
                .map(|k| symbols[k] * taps[n - k * sps])
                .sum()
        })
        .collect()
}

fn linear_waveform(
    constellation: &[Complex64],
    rolloff: f64,
    sps: usize,
    frame_len: usize,
    rng: &mut crate::rng::Rng,
) -> Vec<Complex64> {
    let taps = rrc_taps(rolloff, sps, RRC_SPAN);
    let n_symbols = (frame_len + taps.len()).div_ceil(sps) + 1;
    let symbols: Vec<Complex64> = (0..n_symbols)
        .map(|_| constellation[rng.random_range(0..constellation.len())])
        .collect();
    shape_symbols(&symbols, &taps, sps, frame_len)
}

fn gfsk_waveform(sps: usize, frame_len: usize, rng: &mut crate::rng::Rng) -> Vec<Complex64> {
    let taps = gaussian_taps(GFSK_BT, sps, GAUSS_SPAN);
    let offset = taps.len() - 1;
    let n_symbols = (frame_len + offset).div_ceil(sps) + 1;
    let nrz: Vec<f64> = (0..n_symbols)
        .flat_map(|_| {
            let bit = if rng.random::<bool>() { 1.0 } else { -1.0 };
            std::iter::repeat_n(bit, sps)
        })
        .collect();
    let step = PI * GFSK_INDEX / sps as f64;
    let mut phase = 0.0;
    (0..frame_len)
        .map(|m| {
            let n = m + offset;
            let freq: f64 = taps.iter().enumerate().map(|(i, h)| h * nrz[n - i]).sum();
            phase += step * freq;
            Complex64::from_polar(1.0, phase)
        })
        .collect()
}

/// Generate a noiseless unit-power frame for `(scheme, sig)`.
///
/// Output depends only on the arguments. Burst classes zero everything
/// outside a window of `duty_cycle * frame_len` samples at a random offset.
/// The returned frame has `id = 0`; dataset construction assigns ids.
pub fn modulate(scheme: ModScheme, sig: SignalClass, frame_len: usize, seed: u64) -> Result<IQFrame, SynthError> {
    if frame_len < MIN_FRAME_LEN {
        return Err(SynthError::FrameTooShort {
            len: frame_len,
            min: MIN_FRAME_LEN,
        });
    }
    let profile = sig.profile();
    let mut rng = rng_from_seed(seed);
    let mut samples = match scheme.constellation() {
        Some(points) => linear_waveform(
            &points,
            profile.rolloff,
            profile.samples_per_symbol,
            frame_len,
            &mut rng,
        ),
        None => gfsk_waveform(profile.samples_per_symbol, frame_len, &mut rng),
    };
    if profile.duty_cycle < 1.0 {
        let on = ((frame_len as f64) * profile.duty_cycle).round() as usize;
        let start = rng.random_range(0..=frame_len - on);
        for (i, s) in samples.iter_mut().enumerate() {
            if i < start || i >= start + on {
                *s = Complex64::new(0.0, 0.0);
            }
        }
    }
    let scale = mean_power(&samples).sqrt().recip();
    samples.iter_mut().for_each(|s| *s *= scale);
    Ok(IQFrame {
        id: 0,
        samples,
        snr_db: NOISELESS,
        truth: CoupletLabel::new(scheme, sig),
        seed,
    })
}

/// Add circular complex white Gaussian noise at `snr_db` relative to the
/// frame's measured power.
///
/// The noise realization is rescaled so that its empirical power equals
/// `signal_power / 10^(snr_db/10)` exactly; every generated frame therefore
/// hits its nominal SNR rather than scattering around it.
pub fn add_awgn(frame: &IQFrame, snr_db: f64, seed: u64) -> Result<IQFrame, SynthError> {
    if !frame.is_noiseless() {
        return Err(SynthError::AlreadyNoisy(frame.snr_db));
    }
    if !snr_db.is_finite() {
        return Err(SynthError::NonFiniteSnr(snr_db));
    }
    let signal_power = frame.mean_power();
    let noise_power = signal_power / 10f64.powf(snr_db / 10.0);
    let mut rng = rng_from_seed(seed);
    let mut noise: Vec<Complex64> = (0..frame.len())
        .map(|_| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re, im)
        })
        .collect();
    let raw = mean_power(&noise);
    let scale = if raw > 0.0 { (noise_power / raw).sqrt() } else { 0.0 };
    noise.iter_mut().for_each(|n| *n *= scale);
    Ok(IQFrame {
        samples: frame.samples.iter().zip(&noise).map(|(s, n)| s + n).collect(),
        snr_db,
        ..frame.clone()
    })
}

/// Ratio of clean-signal power to the power of `noisy - clean`, in dB.
pub fn measured_snr_db(clean: &[Complex64], noisy: &[Complex64]) -> f64 {
    let noise: Vec<Complex64> = noisy.iter().zip(clean).map(|(y, s)| y - s).collect();
    10.0 * (mean_power(clean) / mean_power(&noise)).log10()
}
