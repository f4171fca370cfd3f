use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{add_awgn, modulate, CoupletLabel, IQFrame, SynthError, MIN_FRAME_LEN, REGISTERED_COUPLETS};
use crate::rng::{derive_seed, rng_from_seed};

/// Parameters of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub couplets: Vec<CoupletLabel>,
    pub snr_list: Vec<f64>,
    pub frames_per_couplet_per_snr: usize,
    /// When set, replaces `frames_per_couplet_per_snr`: this many frames per
    /// SNR, spread over the couplets as evenly as possible (earlier couplets
    /// take the remainder).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames_per_snr: Option<usize>,
    pub frame_len: usize,
    pub master_seed: u64,
    /// Permit couplet lists other than the nine registered ones.
    #[serde(default)]
    pub allow_custom_couplets: bool,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            couplets: REGISTERED_COUPLETS.to_vec(),
            snr_list: (0..10).map(|i| 2.0 * i as f64).collect(),
            frames_per_couplet_per_snr: 100,
            frames_per_snr: None,
            frame_len: 1024,
            master_seed: 42,
            allow_custom_couplets: false,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::InvalidSpec(msg));
        if !self.allow_custom_couplets {
            if self.couplets.len() != REGISTERED_COUPLETS.len() {
                return bad(format!(
                    "expected {} couplets, got {}",
                    REGISTERED_COUPLETS.len(),
                    self.couplets.len()
                ));
            }
            if let Some(c) = self.couplets.iter().find(|c| !c.is_registered()) {
                return Err(SynthError::UnregisteredCouplet(c.to_string()));
            }
        }
        if self.couplets.is_empty() {
            return bad("no couplets".into());
        }
        let mut sorted = self.couplets.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.couplets.len() {
            return bad("duplicate couplet".into());
        }
        if self.snr_list.is_empty() {
            return bad("snr_list is empty".into());
        }
        if let Some(s) = self.snr_list.iter().find(|s| !s.is_finite()) {
            return Err(SynthError::NonFiniteSnr(*s));
        }
        if self.frames_per_couplet_per_snr == 0 && self.frames_per_snr.is_none() {
            return bad("frames_per_couplet_per_snr must be >= 1".into());
        }
        if self.frames_per_snr == Some(0) {
            return bad("frames_per_snr must be >= 1".into());
        }
        if self.frame_len < MIN_FRAME_LEN {
            return Err(SynthError::FrameTooShort {
                len: self.frame_len,
                min: MIN_FRAME_LEN,
            });
        }
        Ok(())
    }

    /// Frames generated for couplet `ci` at each SNR.
    pub fn count_for(&self, ci: usize) -> usize {
        match self.frames_per_snr {
            None => self.frames_per_couplet_per_snr,
            Some(total) => {
                let n = self.couplets.len();
                total / n + usize::from(ci < total % n)
            }
        }
    }

    pub fn total_frames(&self) -> usize {
        let per_snr: usize = (0..self.couplets.len()).map(|c| self.count_for(c)).sum();
        per_snr * self.snr_list.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub frames: Vec<IQFrame>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frames at one SNR, in dataset order.
    pub fn at_snr(&self, snr_db: f64) -> Vec<&IQFrame> {
        self.frames.iter().filter(|f| f.snr_db == snr_db).collect()
    }

    pub fn frame(&self, id: u64) -> Option<&IQFrame> {
        self.frames.iter().find(|f| f.id == id)
    }
}

/// Generate every frame of `spec`.
///
/// Frame ids enumerate `(snr, couplet, repetition)` in that nesting order;
/// each frame's seed is `derive_seed(master_seed, id)` and its noise seed is
/// `derive_seed(frame_seed, 1)`. The final order is a shuffle keyed on the
/// master seed, so the output is identical regardless of thread count.
pub fn build_dataset(spec: &DatasetSpec) -> Result<Dataset, SynthError> {
    spec.validate()?;
    let mut jobs = Vec::with_capacity(spec.total_frames());
    for &snr in &spec.snr_list {
        for (ci, &couplet) in spec.couplets.iter().enumerate() {
            for _ in 0..spec.count_for(ci) {
                jobs.push((jobs.len() as u64, couplet, snr));
            }
        }
    }
    let mut frames = jobs
        .into_par_iter()
        .map(|(id, couplet, snr)| {
            let seed = derive_seed(spec.master_seed, id);
            let clean = modulate(couplet.modulation, couplet.signal, spec.frame_len, seed)?;
            let mut frame = add_awgn(&clean, snr, derive_seed(seed, 1))?;
            frame.id = id;
            Ok(frame)
        })
        .collect::<Result<Vec<_>, SynthError>>()?;
    frames.shuffle(&mut rng_from_seed(derive_seed(spec.master_seed, u64::MAX)));
    Ok(Dataset {
        spec: spec.clone(),
        frames,
    })
}
