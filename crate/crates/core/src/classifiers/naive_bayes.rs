use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{check_dims, ClassifierError, Label, LabeledPoint, Persist};

/// Variance smoothing as a fraction of the largest per-dimension variance.
pub const VAR_SMOOTHING: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "L: Label")]
pub struct NbClass<L> {
    pub label: L,
    pub prior: f64,
    pub mean: Vec<f64>,
    /// Maximum-likelihood variance plus the smoothing floor.
    pub var: Vec<f64>,
}

/// Gaussian naive Bayes. Classes are stored in label order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "L: Label")]
pub struct NbModel<L> {
    classes: Vec<NbClass<L>>,
    smoothing: f64,
}

/// `p(class | x)` for every class, in label order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "L: Label")]
pub struct PosteriorVector<L> {
    pub entries: Vec<(L, f64)>,
}

impl<L: Label> PosteriorVector<L> {
    /// Highest posterior; ties go to the smaller label.
    pub fn argmax(&self) -> &L {
        let mut best = &self.entries[0];
        for e in &self.entries[1..] {
            if e.1 > best.1 {
                best = e;
            }
        }
        &best.0
    }

    pub fn get(&self, label: &L) -> Option<f64> {
        self.entries.iter().find(|e| &e.0 == label).map(|e| e.1)
    }
}

impl<L: Label> Persist for NbModel<L> {
    const KIND: &'static str = "gaussian-nb";
}

impl<L: Label> NbModel<L> {
    pub fn fit(train: &[LabeledPoint<L>]) -> Result<Self, ClassifierError> {
        let dim = check_dims(train)?;
        let mut groups: BTreeMap<&L, Vec<&[f64]>> = BTreeMap::new();
        for p in train {
            groups.entry(&p.y).or_default().push(&p.x);
        }
        if let Some((l, g)) = groups.iter().find(|(_, g)| g.len() < 2) {
            return Err(ClassifierError::TooFewSamples {
                class: format!("{l:?}"),
                count: g.len(),
                needed: 2,
            });
        }

        let n = train.len() as f64;
        let mut max_var = 0.0f64;
        for d in 0..dim {
            let mean = train.iter().map(|p| p.x[d]).sum::<f64>() / n;
            let var = train.iter().map(|p| (p.x[d] - mean).powi(2)).sum::<f64>() / n;
            max_var = max_var.max(var);
        }
        let smoothing = VAR_SMOOTHING * max_var.max(f64::MIN_POSITIVE);

        let classes = groups
            .into_iter()
            .map(|(label, xs)| {
                let m = xs.len() as f64;
                let mean: Vec<f64> = (0..dim).map(|d| xs.iter().map(|x| x[d]).sum::<f64>() / m).collect();
                let var = (0..dim)
                    .map(|d| xs.iter().map(|x| (x[d] - mean[d]).powi(2)).sum::<f64>() / m + smoothing)
                    .collect();
                NbClass {
                    label: label.clone(),
                    prior: m / n,
                    mean,
                    var,
                }
            })
            .collect();
        Ok(Self { classes, smoothing })
    }

    pub fn classes(&self) -> &[NbClass<L>] {
        &self.classes
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    /// `ln p(class) + ln p(x | class)` for every class.
    pub fn joint_log_likelihood(&self, x: &[f64]) -> Result<Vec<f64>, ClassifierError> {
        let dim = self.classes[0].mean.len();
        if x.len() != dim {
            return Err(ClassifierError::DimensionMismatch {
                expected: dim,
                got: x.len(),
            });
        }
        Ok(self
            .classes
            .iter()
            .map(|c| {
                let ll: f64 = x
                    .iter()
                    .zip(c.mean.iter().zip(&c.var))
                    .map(|(xi, (mu, v))| -0.5 * ((2.0 * PI * v).ln() + (xi - mu).powi(2) / v))
                    .sum();
                c.prior.ln() + ll
            })
            .collect())
    }

    pub fn posterior(&self, x: &[f64]) -> Result<PosteriorVector<L>, ClassifierError> {
        let jll = self.joint_log_likelihood(x)?;
        let max = jll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = jll.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = weights.iter().sum();
        Ok(PosteriorVector {
            entries: self
                .classes
                .iter()
                .zip(weights)
                .map(|(c, w)| (c.label.clone(), w / z))
                .collect(),
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<L, ClassifierError> {
        Ok(self.posterior(x)?.argmax().clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[(f64, char)]) -> Vec<LabeledPoint<char>> {
        v.iter().map(|&(x, y)| LabeledPoint::new(vec![x], y)).collect()
    }

    #[test]
    fn singleton_class_rejected() {
        let err = NbModel::fit(&pts(&[(0.0, 'A'), (1.0, 'A'), (2.0, 'A'), (5.0, 'B')])).unwrap_err();
        assert!(matches!(err, ClassifierError::TooFewSamples { count: 1, .. }));
    }

    #[test]
    fn balanced_priors_and_ml_moments() {
        let m = NbModel::fit(&pts(&[(0.0, 'A'), (2.0, 'A'), (10.0, 'B'), (12.0, 'B')])).unwrap();
        let a = &m.classes()[0];
        assert_eq!(a.label, 'A');
        assert_eq!(a.prior, 0.5);
        assert_eq!(m.classes()[1].prior, 0.5);
        assert_eq!(a.mean, vec![1.0]);
        assert!((a.var[0] - 1.0).abs() < 1e-6);
        assert!(a.var[0] >= 1.0 + m.smoothing());
    }

    #[test]
    fn equidistant_query_is_even() {
        let m = NbModel::fit(&pts(&[(-1.0, 'A'), (1.0, 'A'), (9.0, 'B'), (11.0, 'B')])).unwrap();
        let p = m.posterior(&[5.0]).unwrap();
        assert!((p.get(&'A').unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(*p.argmax(), 'A');
    }

    #[test]
    fn unit_gaussians_at_zero_and_two() {
        // {-1, 1} and {1, 3}: ML means 0 and 2, ML variances 1
        let m = NbModel::fit(&pts(&[(-1.0, 'A'), (1.0, 'A'), (1.0, 'B'), (3.0, 'B')])).unwrap();
        let p = m.posterior(&[0.0]).unwrap().get(&'A').unwrap();
        assert!((p - 0.8808).abs() < 1e-4, "{p}");
    }

    #[test]
    fn far_queries_do_not_underflow() {
        let m = NbModel::fit(&pts(&[(-1.0, 'A'), (1.0, 'A'), (1.0, 'B'), (3.0, 'B')])).unwrap();
        let p = m.posterior(&[1e6]).unwrap();
        let s: f64 = p.entries.iter().map(|e| e.1).sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(*p.argmax(), 'B');
    }
}
