//! From-scratch classifiers over feature vectors.
//!
//! All models are generic over the label type. Labels must be totally
//! ordered: the order is the last-resort tie-break everywhere (the smaller
//! label wins), which keeps every prediction deterministic.

mod knn;
mod logistic;
mod naive_bayes;
mod ova;
mod svm;

use std::collections::BTreeMap;
use std::fmt::Debug;

use rand::seq::SliceRandom;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::rng::rng_from_seed;

pub use knn::{knn_vote, select_k, KnnModel, DEFAULT_K, DISTANCE_TIE_EPS, K_CANDIDATES};
pub use logistic::LogisticModel;
pub use naive_bayes::{NbClass, NbModel, PosteriorVector, VAR_SMOOTHING};
pub use ova::{BinaryScorer, ClassScorer, OvaEnsemble, OvaPrediction, ScorerConfig};
pub use svm::{
    default_gamma, dual_objective, rbf_kernel, svm_fit, svm_fit_detailed, CalibratedSvm, PlattScaler, SvmModel,
    SvmParams, SvmSolution,
};

/// Bound satisfied by every label type the classifiers accept.
pub trait Label: Clone + Ord + Debug + Send + Sync + Serialize + DeserializeOwned {}

impl<T> Label for T where T: Clone + Ord + Debug + Send + Sync + Serialize + DeserializeOwned {}

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("k = {k} invalid for {n} training points")]
    InvalidK { k: usize, n: usize },
    #[error("class {class} has {count} training points, need at least {needed}")]
    TooFewSamples { class: String, count: usize, needed: usize },
    #[error("binary training needs both labels present")]
    SingleClass,
    #[error("labels must be +1 or -1, got {0}")]
    InvalidBinaryLabel(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("class {0} already has a scorer")]
    DuplicateClass(String),
    #[error("no negative samples for the new class")]
    EmptyNegatives,
    #[error("ensemble has no classes")]
    EmptyEnsemble,
    #[error("model blob: {0}")]
    Blob(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint<L> {
    pub x: Vec<f64>,
    pub y: L,
}

impl<L> LabeledPoint<L> {
    pub fn new(x: Vec<f64>, y: L) -> Self {
        Self { x, y }
    }
}

/// `sqrt(sum_i (x_i - y_i)^2)`.
pub fn euclidean_distance(x: &[f64], y: &[f64]) -> Result<f64, ClassifierError> {
    if x.len() != y.len() {
        return Err(ClassifierError::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(squared_distance(x, y).sqrt())
}

pub(crate) fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub(crate) fn check_dims<L>(train: &[LabeledPoint<L>]) -> Result<usize, ClassifierError> {
    let dim = train.first().ok_or(ClassifierError::EmptyTrainingSet)?.x.len();
    for p in train {
        if p.x.len() != dim {
            return Err(ClassifierError::DimensionMismatch {
                expected: dim,
                got: p.x.len(),
            });
        }
    }
    Ok(dim)
}

/// Split indices `0..labels.len()` into `(train, test)`, stratified by label.
///
/// Each class contributes `round(test_fraction * n)` items to the test side,
/// clamped to `1..=n-1` when the class has at least two members; singleton
/// classes go to train. Both index lists come back sorted.
pub fn stratified_split<L: Ord>(labels: &[L], test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut groups: BTreeMap<&L, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let mut rng = rng_from_seed(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (_, mut idx) in groups {
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_test = if n < 2 {
            0
        } else {
            ((test_fraction * n as f64).round() as usize).clamp(1, n - 1)
        };
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Versioned, self-describing JSON container for fitted models.
pub trait Persist: Serialize + DeserializeOwned {
    const KIND: &'static str;

    fn to_blob(&self) -> Vec<u8> {
        #[derive(Serialize)]
        struct Blob<'a, T> {
            format: &'static str,
            version: u32,
            kind: &'static str,
            model: &'a T,
        }
        serde_json::to_vec(&Blob {
            format: BLOB_FORMAT,
            version: BLOB_VERSION,
            kind: Self::KIND,
            model: self,
        })
        .expect("model serialization is infallible")
    }

    fn from_blob(bytes: &[u8]) -> Result<Self, ClassifierError> {
        #[derive(Deserialize)]
        struct Blob<T> {
            format: String,
            version: u32,
            kind: String,
            model: T,
        }
        let blob: Blob<Self> = serde_json::from_slice(bytes).map_err(|e| ClassifierError::Blob(e.to_string()))?;
        if blob.format != BLOB_FORMAT || blob.version != BLOB_VERSION || blob.kind != Self::KIND {
            return Err(ClassifierError::Blob(format!(
                "expected {BLOB_FORMAT} v{BLOB_VERSION} {}, found {} v{} {}",
                Self::KIND,
                blob.format,
                blob.version,
                blob.kind
            )));
        }
        Ok(blob.model)
    }

    fn size_bytes(&self) -> usize {
        self.to_blob().len()
    }
}

pub const BLOB_FORMAT: &str = "iqal-model";
pub const BLOB_VERSION: u32 = 1;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_examples() {
        assert_eq!(euclidean_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(euclidean_distance(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
        assert_eq!(euclidean_distance(&[1.0, 2.0, 3.0], &[4.0, 6.0, 3.0]).unwrap(), 5.0);
        assert!(matches!(
            euclidean_distance(&[1.0], &[1.0, 2.0]),
            Err(ClassifierError::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn stratified_split_proportions() {
        let labels: Vec<u8> = (0..100).map(|i| (i % 4) as u8).collect();
        let (train, test) = stratified_split(&labels, 0.3, 9);
        assert_eq!(train.len() + test.len(), 100);
        for class in 0..4u8 {
            let n_test = test.iter().filter(|&&i| labels[i] == class).count();
            assert_eq!(n_test, 8); // round(0.3 * 25)
        }
        assert_eq!((train.clone(), test.clone()), stratified_split(&labels, 0.3, 9));
        assert_ne!(test, stratified_split(&labels, 0.3, 10).1);

        let (train, test) = stratified_split(&["a", "a", "b"], 0.3, 1);
        assert_eq!(test.len(), 1);
        assert!(test[0] < 2);
        assert_eq!(train, vec![1 - test[0], 2]);
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn distance_is_a_metric(
            a in prop::collection::vec(-1e3f64..1e3, 1..8),
            b in prop::collection::vec(-1e3f64..1e3, 1..8),
        ) {
            let n = a.len().min(b.len());
            let (a, b) = (&a[..n], &b[..n]);
            let ab = euclidean_distance(a, b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, euclidean_distance(b, a).unwrap());
            prop_assert_eq!(euclidean_distance(a, a).unwrap(), 0.0);
            prop_assert_eq!(ab == 0.0, a == b);
        }
    }
}
