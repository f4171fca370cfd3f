use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_dims, CalibratedSvm, ClassifierError, Label, LabeledPoint, LogisticModel, Persist, SvmParams};

/// Which binary model each class gets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScorerConfig {
    Logistic { l2: f64 },
    Svm(SvmParams),
}

impl ScorerConfig {
    pub fn logistic() -> Self {
        Self::Logistic { l2: 1.0 }
    }

    pub fn svm() -> Self {
        Self::Svm(SvmParams::default())
    }
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self::svm()
    }
}

/// One class-versus-rest model producing a score in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BinaryScorer {
    Logistic(LogisticModel),
    Svm(CalibratedSvm),
    /// Used when the rest set is empty: the class is all there is.
    Constant {
        p: f64,
    },
}

impl BinaryScorer {
    pub fn fit(config: &ScorerConfig, positives: &[&[f64]], negatives: &[&[f64]]) -> Result<Self, ClassifierError> {
        if positives.is_empty() {
            return Err(ClassifierError::EmptyTrainingSet);
        }
        if negatives.is_empty() {
            return Ok(Self::Constant { p: 1.0 });
        }
        match *config {
            ScorerConfig::Logistic { l2 } => LogisticModel::fit(positives, negatives, l2).map(Self::Logistic),
            ScorerConfig::Svm(params) => {
                let x: Vec<Vec<f64>> = positives.iter().chain(negatives).map(|r| r.to_vec()).collect();
                let y: Vec<f64> = std::iter::repeat_n(1.0, positives.len())
                    .chain(std::iter::repeat_n(-1.0, negatives.len()))
                    .collect();
                CalibratedSvm::fit(&x, &y, &params).map(Self::Svm)
            }
        }
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        match self {
            Self::Logistic(m) => m.probability(x),
            Self::Svm(m) => m.probability(x),
            Self::Constant { p } => *p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "L: Label")]
pub struct ClassScorer<L> {
    pub label: L,
    pub scorer: BinaryScorer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "L: Label")]
pub struct OvaPrediction<L> {
    pub label: L,
    /// Winning scorer's output.
    pub confidence: f64,
    /// Best minus second-best score; 1 with a single class.
    pub margin: f64,
    /// Shannon entropy (nats) of the scores normalised to sum to one.
    pub entropy: f64,
    pub scores: Vec<(L, f64)>,
}

/// One independent binary scorer per class, kept sorted by label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "L: Label")]
pub struct OvaEnsemble<L> {
    config: ScorerConfig,
    dim: usize,
    scorers: Vec<ClassScorer<L>>,
}

impl<L: Label> Persist for OvaEnsemble<L> {
    const KIND: &'static str = "ova";
}

impl<L: Label> OvaEnsemble<L> {
    /// Every distinct label in `train` gets a scorer trained against all the
    /// other points. Classes are fitted in parallel; each fit is independent
    /// so the result does not depend on scheduling.
    pub fn fit(train: &[LabeledPoint<L>], config: ScorerConfig) -> Result<Self, ClassifierError> {
        let dim = check_dims(train)?;
        let mut labels: Vec<&L> = train.iter().map(|p| &p.y).collect();
        labels.sort();
        labels.dedup();
        let scorers = labels
            .par_iter()
            .map(|&label| {
                let (pos, neg) = partition(train, label);
                Ok(ClassScorer {
                    label: label.clone(),
                    scorer: BinaryScorer::fit(&config, &pos, &neg)?,
                })
            })
            .collect::<Result<Vec<_>, ClassifierError>>()?;
        Ok(Self { config, dim, scorers })
    }

    /// Train a scorer for a class not yet present. Existing scorers are not
    /// touched.
    pub fn add_class(&mut self, label: L, positives: &[&[f64]], negatives: &[&[f64]]) -> Result<(), ClassifierError> {
        let pos = match self.scorers.binary_search_by(|s| s.label.cmp(&label)) {
            Ok(_) => return Err(ClassifierError::DuplicateClass(format!("{label:?}"))),
            Err(pos) => pos,
        };
        if negatives.is_empty() {
            return Err(ClassifierError::EmptyNegatives);
        }
        if let Some(r) = positives.iter().chain(negatives).find(|r| r.len() != self.dim) {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.dim,
                got: r.len(),
            });
        }
        let scorer = BinaryScorer::fit(&self.config, positives, negatives)?;
        self.scorers.insert(pos, ClassScorer { label, scorer });
        Ok(())
    }

    /// Refit one existing class's scorer.
    pub fn retrain_class(
        &mut self,
        label: &L,
        positives: &[&[f64]],
        negatives: &[&[f64]],
    ) -> Result<(), ClassifierError> {
        let idx = self
            .scorers
            .binary_search_by(|s| s.label.cmp(label))
            .map_err(|_| ClassifierError::InvalidParameter(format!("unknown class {label:?}")))?;
        self.scorers[idx].scorer = BinaryScorer::fit(&self.config, positives, negatives)?;
        Ok(())
    }

    pub fn labels(&self) -> impl Iterator<Item = &L> {
        self.scorers.iter().map(|s| &s.label)
    }

    pub fn contains(&self, label: &L) -> bool {
        self.scorers.binary_search_by(|s| s.label.cmp(label)).is_ok()
    }

    pub fn scorers(&self) -> &[ClassScorer<L>] {
        &self.scorers
    }

    pub fn config(&self) -> &ScorerConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.scorers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scorers.is_empty()
    }

    /// Argmax over scorer outputs; ties go to the smaller label.
    pub fn predict(&self, x: &[f64]) -> Result<OvaPrediction<L>, ClassifierError> {
        if self.scorers.is_empty() {
            return Err(ClassifierError::EmptyEnsemble);
        }
        if x.len() != self.dim {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let scores: Vec<(L, f64)> = self
            .scorers
            .iter()
            .map(|s| (s.label.clone(), s.scorer.score(x)))
            .collect();
        let (mut best, mut second) = (0usize, f64::NEG_INFINITY);
        for (i, s) in scores.iter().enumerate().skip(1) {
            if s.1 > scores[best].1 {
                second = scores[best].1;
                best = i;
            } else if s.1 > second {
                second = s.1;
            }
        }
        let confidence = scores[best].1;
        let margin = if scores.len() == 1 { 1.0 } else { confidence - second };
        let total: f64 = scores.iter().map(|s| s.1).sum();
        let entropy = if total > 0.0 {
            -scores
                .iter()
                .map(|s| s.1 / total)
                .filter(|&p| p > 0.0)
                .map(|p| p * p.ln())
                .sum::<f64>()
        } else {
            (scores.len() as f64).ln()
        };
        Ok(OvaPrediction {
            label: scores[best].0.clone(),
            confidence,
            margin,
            entropy,
            scores,
        })
    }
}

/// Feature rows of `label` and of everything else, in input order.
pub(crate) fn partition<'a, L: PartialEq>(train: &'a [LabeledPoint<L>], label: &L) -> (Vec<&'a [f64]>, Vec<&'a [f64]>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for p in train {
        if &p.y == label {
            pos.push(p.x.as_slice());
        } else {
            neg.push(p.x.as_slice());
        }
    }
    (pos, neg)
}
