//! Binary dataset files (`.iqds`).
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        4 bytes   "IQDS"
//! version      u16       1
//! header_len   u32       byte length of the JSON header
//! header       UTF-8     DatasetSpec as JSON
//! frame_count  u64
//! frame_len    u32       complex samples per frame
//! frame_count records, each:
//!   id         u64
//!   modulation u8        index into ModScheme::ALL
//!   signal     u8        index into SignalClass::ALL
//!   snr_db     f64
//!   seed       u64
//!   samples    2*frame_len f32, interleaved I, Q
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use super::{CoupletLabel, Dataset, DatasetSpec, IQFrame, ModScheme, SignalClass, SynthError};

pub const DATASET_MAGIC: &[u8; 4] = b"IQDS";
pub const DATASET_VERSION: u16 = 1;

pub fn write_dataset<W: Write>(dataset: &Dataset, mut out: W) -> Result<(), SynthError> {
    let header = serde_json::to_vec(&dataset.spec).map_err(|e| SynthError::Format(e.to_string()))?;
    let frame_len = dataset.frames.first().map_or(dataset.spec.frame_len, |f| f.len());
    out.write_all(DATASET_MAGIC)?;
    out.write_all(&DATASET_VERSION.to_le_bytes())?;
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(&header)?;
    out.write_all(&(dataset.frames.len() as u64).to_le_bytes())?;
    out.write_all(&(frame_len as u32).to_le_bytes())?;
    for frame in &dataset.frames {
        if frame.len() != frame_len {
            return Err(SynthError::Format(format!(
                "frame {} has {} samples, expected {frame_len}",
                frame.id,
                frame.len()
            )));
        }
        out.write_all(&frame.id.to_le_bytes())?;
        out.write_all(&[frame.truth.modulation.index(), frame.truth.signal.index()])?;
        out.write_all(&frame.snr_db.to_le_bytes())?;
        out.write_all(&frame.seed.to_le_bytes())?;
        for s in &frame.samples {
            out.write_all(&(s.re as f32).to_le_bytes())?;
            out.write_all(&(s.im as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], SynthError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Dataset, SynthError> {
    if &take::<4, _>(&mut r)? != DATASET_MAGIC {
        return Err(SynthError::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes(take(&mut r)?);
    if version != DATASET_VERSION {
        return Err(SynthError::Format(format!("unsupported version {version}")));
    }
    let header_len = u32::from_le_bytes(take(&mut r)?) as usize;
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header)?;
    let spec: DatasetSpec = serde_json::from_slice(&header).map_err(|e| SynthError::Format(e.to_string()))?;
    let count = u64::from_le_bytes(take(&mut r)?) as usize;
    let frame_len = u32::from_le_bytes(take(&mut r)?) as usize;
    let mut frames = Vec::with_capacity(count);
    for _ in 0..count {
        let id = u64::from_le_bytes(take(&mut r)?);
        let [m, s] = take::<2, _>(&mut r)?;
        let modulation = ModScheme::from_index(m).ok_or_else(|| SynthError::Format(format!("modulation index {m}")))?;
        let signal = SignalClass::from_index(s).ok_or_else(|| SynthError::Format(format!("signal index {s}")))?;
        let snr_db = f64::from_le_bytes(take(&mut r)?);
        let seed = u64::from_le_bytes(take(&mut r)?);
        let mut samples = Vec::with_capacity(frame_len);
        for _ in 0..frame_len {
            let re = f32::from_le_bytes(take(&mut r)?);
            let im = f32::from_le_bytes(take(&mut r)?);
            samples.push(Complex64::new(re as f64, im as f64));
        }
        frames.push(IQFrame {
            id,
            samples,
            snr_db,
            truth: CoupletLabel::new(modulation, signal),
            seed,
        });
    }
    Ok(Dataset { spec, frames })
}

impl Dataset {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SynthError> {
        write_dataset(self, BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        read_dataset(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::build_dataset;

    fn spec() -> DatasetSpec {
        DatasetSpec {
            snr_list: vec![4.0],
            frames_per_couplet_per_snr: 2,
            frame_len: 64,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn round_trip_to_f32_precision() {
        let ds = build_dataset(&spec()).unwrap();
        let mut bytes = Vec::new();
        write_dataset(&ds, &mut bytes).unwrap();
        let header = serde_json::to_vec(&ds.spec).unwrap().len();
        assert_eq!(
            bytes.len(),
            4 + 2 + 4 + header + 8 + 4 + ds.len() * (8 + 2 + 8 + 8 + 64 * 8)
        );
        let back = read_dataset(bytes.as_slice()).unwrap();
        assert_eq!(back.spec, ds.spec);
        for (a, b) in ds.frames.iter().zip(&back.frames) {
            assert_eq!((a.id, a.truth, a.snr_db, a.seed), (b.id, b.truth, b.snr_db, b.seed));
            for (x, y) in a.samples.iter().zip(&b.samples) {
                assert!((x - y).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(read_dataset(&b"NOPE\x01\x00"[..]), Err(SynthError::Format(_))));
        let mut bytes = Vec::new();
        write_dataset(&build_dataset(&spec()).unwrap(), &mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(read_dataset(bytes.as_slice()), Err(SynthError::Io(_))));
    }

    #[test]
    fn golden_checksum() {
        use sha2::{Digest, Sha256};
        let spec = DatasetSpec {
            snr_list: vec![0.0, 10.0],
            frames_per_couplet_per_snr: 2,
            frame_len: 64,
            master_seed: 42,
            ..DatasetSpec::default()
        };
        let mut bytes = Vec::new();
        write_dataset(&build_dataset(&spec).unwrap(), &mut bytes).unwrap();
        let digest: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(
            digest,
            "2ee47c5381f634e3c1a3afa2c2f3b83459db84d692bdcb32cfab645a0c65a175"
        );
    }
}
