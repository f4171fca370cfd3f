use std::collections::HashMap;

use super::LoopError;
use crate::features::{extract_all, NormStats};
use crate::synth::{CoupletLabel, Dataset};

/// Feature rows a session labels, keyed by frame id. Not part of the
/// checkpoint: a resumed session is handed the same data again.
#[derive(Debug, Clone)]
pub struct LoopData {
    ids: Vec<u64>,
    features: Vec<Vec<f64>>,
    strata: Option<Vec<CoupletLabel>>,
    index: HashMap<u64, usize>,
}

impl LoopData {
    /// `strata` (ground truth) is only used to stratify bootstrap draws.
    pub fn new(ids: Vec<u64>, features: Vec<Vec<f64>>, strata: Option<Vec<CoupletLabel>>) -> Result<Self, LoopError> {
        if ids.is_empty() {
            return Err(LoopError::EmptyData);
        }
        let bad = |m: String| Err(LoopError::InvalidConfig(m));
        if features.len() != ids.len() || strata.as_ref().is_some_and(|s| s.len() != ids.len()) {
            return bad("ids, features and strata differ in length".into());
        }
        let dim = features[0].len();
        if features
            .iter()
            .any(|f| f.len() != dim || f.iter().any(|v| !v.is_finite()))
        {
            return bad("feature rows must be finite and of one dimension".into());
        }
        let index: HashMap<u64, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        if index.len() != ids.len() {
            return bad("duplicate frame id".into());
        }
        Ok(Self {
            ids,
            features,
            strata,
            index,
        })
    }

    /// Featurize every frame and standardize with statistics of the whole
    /// set (the session labels all of it, so there is no held-out split).
    pub fn from_dataset(dataset: &Dataset, with_strata: bool) -> Result<Self, LoopError> {
        let raw = extract_all(&dataset.frames)?;
        let norm = NormStats::fit(&raw)?;
        let features = raw.iter().map(|f| norm.normalize(&f.values)).collect();
        let ids = dataset.frames.iter().map(|f| f.id).collect();
        let strata = with_strata.then(|| dataset.frames.iter().map(|f| f.truth).collect());
        Self::new(ids, features, strata)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Ids in dataset order.
    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn contains(&self, id: u64) -> bool {
        self.index.contains_key(&id)
    }

    pub fn features(&self, id: u64) -> Option<&[f64]> {
        self.index.get(&id).map(|&i| self.features[i].as_slice())
    }

    pub fn stratum(&self, id: u64) -> Option<CoupletLabel> {
        let strata = self.strata.as_ref()?;
        self.index.get(&id).map(|&i| strata[i])
    }

    pub fn has_strata(&self) -> bool {
        self.strata.is_some()
    }

    pub fn without_strata(mut self) -> Self {
        self.strata = None;
        self
    }
}
