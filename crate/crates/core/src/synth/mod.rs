//! Synthetic couplet-labelled I/Q datasets.
//!
//! Six modulation schemes crossed with eight signal classes (pulse-shaping and
//! framing profiles) give the label space; nine of those pairs form the
//! default couplet registry. The registry is a stand-in for a field-captured
//! dataset whose class list is not public, so treat the particular pairs as a
//! documented convention rather than ground truth about any real emitter.

mod dataset;
mod io;
mod waveform;

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use dataset::{build_dataset, Dataset, DatasetSpec};
pub use io::{read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use waveform::{add_awgn, measured_snr_db, modulate, rrc_taps, MIN_FRAME_LEN};

/// Sentinel `snr_db` of a frame that has not been through the channel.
pub const NOISELESS: f64 = f64::INFINITY;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("unknown modulation scheme `{0}`")]
    UnknownModulation(String),
    #[error("unknown signal class `{0}`")]
    UnknownSignalClass(String),
    #[error("couplet `{0}` is not in the registry")]
    UnregisteredCouplet(String),
    #[error("malformed couplet `{0}`, expected MODULATION/SIGNAL")]
    MalformedCouplet(String),
    #[error("frame length {len} below minimum {min}")]
    FrameTooShort { len: usize, min: usize },
    #[error("frame already carries noise at {0} dB")]
    AlreadyNoisy(f64),
    #[error("snr must be finite, got {0}")]
    NonFiniteSnr(f64),
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("dataset file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModScheme {
    #[serde(rename = "BPSK")]
    Bpsk,
    #[serde(rename = "QPSK")]
    Qpsk,
    #[serde(rename = "PSK8")]
    Psk8,
    #[serde(rename = "QAM16")]
    Qam16,
    #[serde(rename = "QAM64")]
    Qam64,
    #[serde(rename = "GFSK")]
    Gfsk,
}

impl ModScheme {
    pub const ALL: [ModScheme; 6] = [
        ModScheme::Bpsk,
        ModScheme::Qpsk,
        ModScheme::Psk8,
        ModScheme::Qam16,
        ModScheme::Qam64,
        ModScheme::Gfsk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModScheme::Bpsk => "BPSK",
            ModScheme::Qpsk => "QPSK",
            ModScheme::Psk8 => "PSK8",
            ModScheme::Qam16 => "QAM16",
            ModScheme::Qam64 => "QAM64",
            ModScheme::Gfsk => "GFSK",
        }
    }

    pub fn index(self) -> u8 {
        Self::ALL.iter().position(|&m| m == self).unwrap() as u8
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }

    /// Unit-average-power symbol alphabet, `None` for the continuous-phase
    /// scheme.
    ///
    /// QPSK sits on the axes (`1, j, -1, -j`) so that its fourth-order
    /// cumulant is positive while BPSK's is negative.
    pub fn constellation(self) -> Option<Vec<Complex64>> {
        let points = match self {
            ModScheme::Bpsk => vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)],
            ModScheme::Qpsk => (0..4)
                .map(|k| Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_2 * k as f64))
                .collect(),
            ModScheme::Psk8 => (0..8)
                .map(|k| Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_4 * k as f64))
                .collect(),
            ModScheme::Qam16 => square_qam(4),
            ModScheme::Qam64 => square_qam(8),
            ModScheme::Gfsk => return None,
        };
        Some(points)
    }
}

fn square_qam(side: usize) -> Vec<Complex64> {
    let levels: Vec<f64> = (0..side).map(|i| 2.0 * i as f64 - (side as f64 - 1.0)).collect();
    let raw: Vec<Complex64> = levels
        .iter()
        .flat_map(|&i| levels.iter().map(move |&q| Complex64::new(i, q)))
        .collect();
    let power = raw.iter().map(|p| p.norm_sqr()).sum::<f64>() / raw.len() as f64;
    let scale = power.sqrt().recip();
    raw.into_iter().map(|p| p * scale).collect()
}

impl fmt::Display for ModScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModScheme {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| SynthError::UnknownModulation(s.to_string()))
    }
}

/// Pulse-shaping and framing parameters of a signal class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalProfile {
    pub samples_per_symbol: usize,
    /// Root-raised-cosine roll-off; ignored by GFSK.
    pub rolloff: f64,
    /// Fraction of the frame that carries signal, `1.0` for continuous.
    pub duty_cycle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SignalClass {
    ContinuousNarrow,
    ContinuousMedium,
    ContinuousWide,
    SharpMedium,
    SoftMedium,
    BurstNarrow,
    BurstMedium,
    BurstWide,
}

impl SignalClass {
    pub const ALL: [SignalClass; 8] = [
        SignalClass::ContinuousNarrow,
        SignalClass::ContinuousMedium,
        SignalClass::ContinuousWide,
        SignalClass::SharpMedium,
        SignalClass::SoftMedium,
        SignalClass::BurstNarrow,
        SignalClass::BurstMedium,
        SignalClass::BurstWide,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SignalClass::ContinuousNarrow => "ContinuousNarrow",
            SignalClass::ContinuousMedium => "ContinuousMedium",
            SignalClass::ContinuousWide => "ContinuousWide",
            SignalClass::SharpMedium => "SharpMedium",
            SignalClass::SoftMedium => "SoftMedium",
            SignalClass::BurstNarrow => "BurstNarrow",
            SignalClass::BurstMedium => "BurstMedium",
            SignalClass::BurstWide => "BurstWide",
        }
    }

    pub fn index(self) -> u8 {
        Self::ALL.iter().position(|&s| s == self).unwrap() as u8
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }

    pub fn profile(self) -> SignalProfile {
        let (samples_per_symbol, rolloff, duty_cycle) = match self {
            SignalClass::ContinuousNarrow => (8, 0.35, 1.0),
            SignalClass::ContinuousMedium => (4, 0.35, 1.0),
            SignalClass::ContinuousWide => (2, 0.35, 1.0),
            SignalClass::SharpMedium => (4, 0.15, 1.0),
            SignalClass::SoftMedium => (4, 1.0, 1.0),
            SignalClass::BurstNarrow => (8, 0.35, 0.5),
            SignalClass::BurstMedium => (4, 0.35, 0.5),
            SignalClass::BurstWide => (2, 0.35, 0.5),
        };
        SignalProfile {
            samples_per_symbol,
            rolloff,
            duty_cycle,
        }
    }
}

impl fmt::Display for SignalClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SignalClass {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| SynthError::UnknownSignalClass(s.to_string()))
    }
}

/// The joint (modulation, signal class) label of one frame.
///
/// Ordering is lexicographic on the display name `MODULATION/SIGNAL`; the
/// classifiers use it as their final tie-break.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CoupletLabel {
    pub modulation: ModScheme,
    pub signal: SignalClass,
}

impl CoupletLabel {
    pub const fn new(modulation: ModScheme, signal: SignalClass) -> Self {
        Self { modulation, signal }
    }

    pub fn is_registered(&self) -> bool {
        REGISTERED_COUPLETS.contains(self)
    }

    /// Rejects couplets outside the registry.
    pub fn registered(self) -> Result<Self, SynthError> {
        if self.is_registered() {
            Ok(self)
        } else {
            Err(SynthError::UnregisteredCouplet(self.to_string()))
        }
    }
}

impl Ord for CoupletLabel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.modulation.name(), self.signal.name()).cmp(&(other.modulation.name(), other.signal.name()))
    }
}

impl PartialOrd for CoupletLabel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for CoupletLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.modulation, self.signal)
    }
}

impl FromStr for CoupletLabel {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (m, c) = s
            .split_once('/')
            .ok_or_else(|| SynthError::MalformedCouplet(s.to_string()))?;
        Ok(CoupletLabel::new(m.trim().parse()?, c.trim().parse()?))
    }
}

/// The nine couplets present in generated datasets.
///
/// All six modulations and all eight signal classes appear. Pairs that
/// differ in one component only (PSK8 and QAM16 on the same shaping, QAM16
/// under two roll-offs) stay confusable at 0 dB and separate cleanly by
/// 18 dB.
pub const REGISTERED_COUPLETS: [CoupletLabel; 9] = {
    use ModScheme::*;
    use SignalClass::*;
    [
        CoupletLabel::new(Bpsk, ContinuousNarrow),
        CoupletLabel::new(Gfsk, BurstNarrow),
        CoupletLabel::new(Psk8, ContinuousMedium),
        CoupletLabel::new(Qam16, ContinuousMedium),
        CoupletLabel::new(Qam64, BurstMedium),
        CoupletLabel::new(Gfsk, ContinuousWide),
        CoupletLabel::new(Bpsk, BurstWide),
        CoupletLabel::new(Qpsk, SharpMedium),
        CoupletLabel::new(Qam16, SoftMedium),
    ]
};

/// One complex baseband capture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IQFrame {
    pub id: u64,
    pub samples: Vec<Complex64>,
    /// [`NOISELESS`] until the frame has been through [`add_awgn`].
    pub snr_db: f64,
    pub truth: CoupletLabel,
    pub seed: u64,
}

impl IQFrame {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_noiseless(&self) -> bool {
        self.snr_db == NOISELESS
    }

    pub fn mean_power(&self) -> f64 {
        mean_power(&self.samples)
    }
}

pub(crate) fn mean_power(samples: &[Complex64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / samples.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_sizes() {
        assert_eq!(ModScheme::ALL.len(), 6);
        assert_eq!(SignalClass::ALL.len(), 8);
        assert_eq!(REGISTERED_COUPLETS.len(), 9);
        let mut unique = REGISTERED_COUPLETS.to_vec();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), 9);
        // every signal class is used by at least one couplet
        for class in SignalClass::ALL {
            assert!(REGISTERED_COUPLETS.iter().any(|c| c.signal == class));
        }
    }

    #[test]
    fn constellations_have_unit_power() {
        for scheme in ModScheme::ALL {
            if let Some(points) = scheme.constellation() {
                let p = mean_power(&points);
                assert!((p - 1.0).abs() < 1e-9, "{scheme}: {p}");
            }
        }
        assert_eq!(ModScheme::Qam16.constellation().unwrap().len(), 16);
        assert_eq!(ModScheme::Qam64.constellation().unwrap().len(), 64);
    }

    #[test]
    fn couplet_parse_and_order() {
        let c: CoupletLabel = "qpsk/SharpMedium".parse().unwrap();
        assert_eq!(c, CoupletLabel::new(ModScheme::Qpsk, SignalClass::SharpMedium));
        assert_eq!(c.to_string(), "QPSK/SharpMedium");
        assert!(c.is_registered());
        assert!(matches!(
            "FM/BurstNarrow".parse::<CoupletLabel>(),
            Err(SynthError::UnknownModulation(_))
        ));
        assert!(matches!(
            "QPSK".parse::<CoupletLabel>(),
            Err(SynthError::MalformedCouplet(_))
        ));
        let unregistered = CoupletLabel::new(ModScheme::Gfsk, SignalClass::BurstWide);
        assert!(unregistered.registered().is_err());

        let a: CoupletLabel = "BPSK/ContinuousNarrow".parse().unwrap();
        let b: CoupletLabel = "BPSK/BurstWide".parse().unwrap();
        assert!(b < a);
        assert!(a < c);
    }

    #[test]
    fn couplet_json_shape() {
        let c = REGISTERED_COUPLETS[0];
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(json, r#"{"modulation":"BPSK","signal":"ContinuousNarrow"}"#);
    }
}
