//! Frame featurization and 224x224 spectrogram rasterization.
//!
//! The feature vector is the usual AMC statistic family: normalized
//! higher-order cumulants of the complex envelope, envelope and instantaneous
//! frequency statistics, phase coherence, and Welch-PSD shape measures.
//! Everything except `power` and `mean_amplitude` is invariant to a positive
//! rescaling of the frame; see [`FEATURE_SCALE_POWERS`].

use std::borrow::Borrow;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::synth::{CoupletLabel, IQFrame, MIN_FRAME_LEN};

pub const FEATURE_DIM: usize = 16;

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "c20_norm",
    "c40_norm",
    "c41_norm",
    "c42_norm",
    "c63_norm",
    "power",
    "mean_amplitude",
    "amplitude_cv",
    "amplitude_kurtosis",
    "inst_freq_std",
    "spectral_symmetry",
    "phase_coherence_2",
    "phase_coherence_4",
    "occupied_bandwidth",
    "spectral_flatness",
    "block_power_cv",
];

/// Scaling a frame by `c > 0` multiplies feature `i` by `c^FEATURE_SCALE_POWERS[i]`.
pub const FEATURE_SCALE_POWERS: [i32; FEATURE_DIM] = [0, 0, 0, 0, 0, 2, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0];

/// Minimum per-dimension standard deviation kept by [`NormStats`].
pub const STD_FLOOR: f64 = 1e-8;

pub const IMAGE_SIZE: usize = 224;

const WELCH_SEGMENT: usize = 128;
const OCCUPIED_FRACTION: f64 = 0.9;
const POWER_BLOCKS: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("frame {frame_id} is all zeros")]
    Degenerate { frame_id: u64 },
    #[error("frame {frame_id} contains non-finite samples")]
    NonFinite { frame_id: u64 },
    #[error("frame length {len} below minimum {min}")]
    TooShort { len: usize, min: usize },
    #[error("cannot fit normalizer on an empty set")]
    EmptyTrainingSet,
    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub frame_id: u64,
    pub values: Vec<f64>,
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

struct Moments {
    m20: Complex64,
    m21: f64,
    m40: Complex64,
    m41: Complex64,
    m42: f64,
    m63: f64,
}

impl Moments {
    fn of(x: &[Complex64]) -> Self {
        let n = x.len() as f64;
        let (mut m20, mut m40, mut m41) = (Complex64::default(), Complex64::default(), Complex64::default());
        let (mut m21, mut m42, mut m63) = (0.0, 0.0, 0.0);
        for &s in x {
            let p = s.norm_sqr();
            let s2 = s * s;
            m20 += s2;
            m21 += p;
            m40 += s2 * s2;
            m41 += s2 * p;
            m42 += p * p;
            m63 += p * p * p;
        }
        Moments {
            m20: m20 / n,
            m21: m21 / n,
            m40: m40 / n,
            m41: m41 / n,
            m42: m42 / n,
            m63: m63 / n,
        }
    }

    fn c40(&self) -> Complex64 {
        self.m40 - 3.0 * self.m20 * self.m20
    }

    fn c41(&self) -> Complex64 {
        self.m41 - 3.0 * self.m20 * self.m21
    }

    fn c42(&self) -> f64 {
        self.m42 - self.m20.norm_sqr() - 2.0 * self.m21 * self.m21
    }

    fn c63(&self) -> f64 {
        let c21 = self.m21;
        self.m63 - 6.0 * (self.m41 * self.m20.conj()).re - 9.0 * self.m42 * c21
            + 18.0 * self.m20.norm_sqr() * c21
            + 12.0 * c21.powi(3)
    }
}

fn mean_std(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Welch PSD with 50% overlapping Hann segments, in FFT bin order.
fn welch_psd(x: &[Complex64], planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let seg = WELCH_SEGMENT.min(x.len());
    let hop = seg / 2;
    let window = hann(seg);
    let fft = planner.plan_fft_forward(seg);
    let mut psd = vec![0.0; seg];
    let mut buf = vec![Complex64::default(); seg];
    let mut segments = 0;
    let mut start = 0;
    while start + seg <= x.len() {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = x[start + i] * window[i];
        }
        fft.process(&mut buf);
        for (p, b) in psd.iter_mut().zip(&buf) {
            *p += b.norm_sqr();
        }
        segments += 1;
        start += hop.max(1);
    }
    psd.iter_mut().for_each(|p| *p /= segments as f64);
    psd
}

/// Compute the 16-dimensional feature vector of `frame`.
pub fn extract_features(frame: &IQFrame) -> Result<FeatureVector, FeatureError> {
    let x = &frame.samples;
    if x.len() < MIN_FRAME_LEN {
        return Err(FeatureError::TooShort {
            len: x.len(),
            min: MIN_FRAME_LEN,
        });
    }
    if x.iter().any(|s| !s.re.is_finite() || !s.im.is_finite()) {
        return Err(FeatureError::NonFinite { frame_id: frame.id });
    }
    if x.iter().all(|s| s.norm_sqr() == 0.0) {
        return Err(FeatureError::Degenerate { frame_id: frame.id });
    }
    let n = x.len() as f64;

    let m = Moments::of(x);
    let c21 = m.m21;

    let amp = x.iter().map(|s| s.norm());
    let (amp_mean, amp_std) = mean_std(amp.clone());
    let a4 = amp.map(|a| a.powi(4)).sum::<f64>() / n;

    let inst_freq = x.windows(2).map(|w| (w[1] * w[0].conj()).arg());
    let (_, freq_std) = mean_std(inst_freq);

    let (mut u2, mut u4, mut nonzero) = (Complex64::default(), Complex64::default(), 0usize);
    for s in x.iter().filter(|s| s.norm_sqr() > 0.0) {
        let u = s / s.norm();
        let uu = u * u;
        u2 += uu;
        u4 += uu * uu;
        nonzero += 1;
    }

    let mut planner = FftPlanner::new();
    let psd = welch_psd(x, &mut planner);
    let total: f64 = psd.iter().sum();
    let bins = psd.len();
    // FFT order: bins 1..bins/2 positive, upper half negative frequencies
    let positive: f64 = psd[1..bins.div_ceil(2)].iter().sum();
    let negative: f64 = psd[bins / 2 + 1..].iter().sum();
    let symmetry = if positive + negative > 0.0 {
        (positive - negative) / (positive + negative)
    } else {
        0.0
    };
    let mut sorted = psd.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut occupied = bins;
    for (i, p) in sorted.iter().enumerate() {
        acc += p;
        if acc >= OCCUPIED_FRACTION * total {
            occupied = i + 1;
            break;
        }
    }
    let floor = sorted[0] * 1e-12;
    let log_mean = psd.iter().map(|p| p.max(floor).ln()).sum::<f64>() / bins as f64;
    let flatness = log_mean.exp() / (total / bins as f64);

    let block = x.len() / POWER_BLOCKS;
    let block_power = (0..POWER_BLOCKS)
        .map(|b| x[b * block..(b + 1) * block].iter().map(|s| s.norm_sqr()).sum::<f64>() / block as f64);
    let (bp_mean, bp_std) = mean_std(block_power);

    let values = vec![
        m.m20.norm() / c21,
        m.c40().re / (c21 * c21),
        m.c41().norm() / (c21 * c21),
        m.c42() / (c21 * c21),
        m.c63() / c21.powi(3),
        c21,
        amp_mean,
        amp_std / amp_mean,
        a4 / (c21 * c21),
        freq_std,
        symmetry,
        u2.norm() / nonzero as f64,
        u4.norm() / nonzero as f64,
        occupied as f64 / bins as f64,
        flatness,
        bp_std / bp_mean,
    ];
    debug_assert_eq!(values.len(), FEATURE_DIM);
    debug_assert!(values.iter().all(|v| v.is_finite()));
    Ok(FeatureVector {
        frame_id: frame.id,
        values,
    })
}

/// Featurize many frames in parallel, preserving order.
pub fn extract_all<F: Borrow<IQFrame> + Sync>(frames: &[F]) -> Result<Vec<FeatureVector>, FeatureError> {
    frames.par_iter().map(|f| extract_features(f.borrow())).collect()
}

/// Per-dimension standardization fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn fit<R: AsRef<[f64]>>(train: &[R]) -> Result<Self, FeatureError> {
        let first = train.first().ok_or(FeatureError::EmptyTrainingSet)?.as_ref();
        let dim = first.len();
        let n = train.len() as f64;
        let mut mean = vec![0.0; dim];
        for row in train {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(FeatureError::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in train {
            for ((s, v), m) in var.iter_mut().zip(row.as_ref()).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
        Ok(NormStats { mean, std })
    }

    pub fn normalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    pub fn denormalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((z, m), s)| z * s + m)
            .collect()
    }

    pub fn normalize_vector(&self, v: &FeatureVector) -> FeatureVector {
        FeatureVector {
            frame_id: v.frame_id,
            values: self.normalize(&v.values),
        }
    }
}

/// 224x224 8-bit grayscale image, row-major. Rows are frequency (row 0 is
/// the most negative frequency), columns are time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageGrid {
    pub frame_id: u64,
    pub pixels: Vec<u8>,
}

impl ImageGrid {
    pub fn width(&self) -> usize {
        IMAGE_SIZE
    }

    pub fn height(&self) -> usize {
        IMAGE_SIZE
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * IMAGE_SIZE + col]
    }

    /// Binary PGM (P5).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{IMAGE_SIZE} {IMAGE_SIZE}\n255\n").into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Spectrogram row holding normalized frequency `f` (cycles/sample).
pub fn spectrogram_row(f: f64) -> usize {
    let bin = (f * IMAGE_SIZE as f64).round() as isize;
    (bin + IMAGE_SIZE as isize / 2).rem_euclid(IMAGE_SIZE as isize) as usize
}

/// Magnitude STFT rendered as an [`ImageGrid`].
///
/// 224-sample Hann window, 224-point FFT, 224 frames whose start offsets are
/// spread evenly over the capture. Magnitudes are min-max scaled to 0..=255;
/// a spectrogram with no dynamic range (e.g. an all-zero frame) renders black.
pub fn rasterize(frame: &IQFrame) -> Result<ImageGrid, FeatureError> {
    let x = &frame.samples;
    if x.len() < IMAGE_SIZE {
        return Err(FeatureError::TooShort {
            len: x.len(),
            min: IMAGE_SIZE,
        });
    }
    let window = hann(IMAGE_SIZE);
    let fft = FftPlanner::new().plan_fft_forward(IMAGE_SIZE);
    let span = (x.len() - IMAGE_SIZE) as f64;
    let mut mag = vec![0.0f64; IMAGE_SIZE * IMAGE_SIZE];
    let mut buf = vec![Complex64::default(); IMAGE_SIZE];
    for col in 0..IMAGE_SIZE {
        let start = (col as f64 * span / (IMAGE_SIZE - 1) as f64).round() as usize;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = x[start + i] * window[i];
        }
        fft.process(&mut buf);
        for (bin, v) in buf.iter().enumerate() {
            let row = (bin + IMAGE_SIZE / 2) % IMAGE_SIZE;
            mag[row * IMAGE_SIZE + col] = v.norm();
        }
    }
    let lo = mag.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pixels = if hi > lo {
        mag.iter()
            .map(|m| ((m - lo) / (hi - lo) * 255.0).round() as u8)
            .collect()
    } else {
        vec![0; mag.len()]
    };
    Ok(ImageGrid {
        frame_id: frame.id,
        pixels,
    })
}

/// Feature matrix CSV: `frame_id,couplet,snr_db,<feature names>`.
pub fn write_feature_csv<W: Write>(
    mut out: W,
    rows: &[(FeatureVector, CoupletLabel, f64)],
) -> Result<(), FeatureError> {
    write!(out, "frame_id,couplet,snr_db")?;
    for name in FEATURE_NAMES {
        write!(out, ",{name}")?;
    }
    writeln!(out)?;
    for (v, label, snr) in rows {
        write!(out, "{},{},{}", v.frame_id, label, snr)?;
        for x in &v.values {
            write!(out, ",{x}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}
