use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{check_dims, squared_distance, stratified_split, ClassifierError, Label, LabeledPoint, Persist};

pub const DEFAULT_K: usize = 5;
pub const K_CANDIDATES: [usize; 5] = [1, 3, 5, 7, 9];
pub const DISTANCE_TIE_EPS: f64 = 1e-9;

/// Brute-force k-nearest-neighbour classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "L: Label")]
pub struct KnnModel<L> {
    train: Vec<LabeledPoint<L>>,
    k: usize,
    dim: usize,
}

impl<L: Label> Persist for KnnModel<L> {
    const KIND: &'static str = "knn";
}

impl<L: Label> KnnModel<L> {
    pub fn new(train: Vec<LabeledPoint<L>>, k: usize) -> Result<Self, ClassifierError> {
        let dim = check_dims(&train)?;
        if k == 0 || k > train.len() {
            return Err(ClassifierError::InvalidK { k, n: train.len() });
        }
        Ok(Self { train, k, dim })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn train(&self) -> &[LabeledPoint<L>] {
        &self.train
    }

    /// The `k` nearest training points as `(index, distance)`, ordered by
    /// distance and then by training index.
    pub fn neighbors(&self, x: &[f64]) -> Result<Vec<(usize, f64)>, ClassifierError> {
        if x.len() != self.dim {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut all: Vec<(usize, f64)> = self
            .train
            .iter()
            .enumerate()
            .map(|(i, p)| (i, squared_distance(&p.x, x)))
            .collect();
        let by_key = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        if self.k < all.len() {
            all.select_nth_unstable_by(self.k - 1, by_key);
            all.truncate(self.k);
        }
        all.sort_unstable_by(by_key);
        for n in &mut all {
            n.1 = n.1.sqrt();
        }
        Ok(all)
    }

    pub fn predict(&self, x: &[f64]) -> Result<L, ClassifierError> {
        let nb = self.neighbors(x)?;
        Ok(knn_vote(nb.iter().map(|&(i, d)| (d, &self.train[i].y))))
    }
}

/// Majority vote over `(distance, label)` pairs.
///
/// Ties on count go to the smaller summed distance (equal counts make this the
/// same as the smaller mean), then to the smaller label. Sums within a
/// relative [`DISTANCE_TIE_EPS`] are equal, so that totals like `√2 + √8` and
/// `√18` are not split by rounding.
pub fn knn_vote<'a, L: Ord + Clone + 'a>(neighbors: impl IntoIterator<Item = (f64, &'a L)>) -> L {
    let mut tally: BTreeMap<&L, (usize, f64)> = BTreeMap::new();
    for (d, l) in neighbors {
        let e = tally.entry(l).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += d;
    }
    let mut best: Option<(&L, usize, f64)> = None;
    for (l, (count, sum)) in tally {
        let better = match best {
            None => true,
            Some((_, bc, bs)) => count > bc || (count == bc && sum < bs - DISTANCE_TIE_EPS * bs.max(1.0)),
        };
        if better {
            best = Some((l, count, sum));
        }
    }
    best.expect("vote over zero neighbours").0.clone()
}

/// Choose k from [`K_CANDIDATES`] by accuracy on a stratified 30% hold-out.
///
/// Ties prefer [`DEFAULT_K`], then the smaller k. Falls back to
/// `min(DEFAULT_K, n)` when the set is too small to split.
pub fn select_k<L: Label>(train: &[LabeledPoint<L>], seed: u64) -> Result<usize, ClassifierError> {
    check_dims(train)?;
    let labels: Vec<&L> = train.iter().map(|p| &p.y).collect();
    let (fit_idx, val_idx) = stratified_split(&labels, 0.3, seed);
    let fallback = DEFAULT_K.min(train.len());
    if val_idx.is_empty() || fit_idx.is_empty() {
        return Ok(fallback);
    }
    let fit: Vec<LabeledPoint<L>> = fit_idx.iter().map(|&i| train[i].clone()).collect();
    let mut best: Option<(usize, usize)> = None;
    for &k in K_CANDIDATES.iter().filter(|&&k| k <= fit.len()) {
        let model = KnnModel::new(fit.clone(), k)?;
        let mut correct = 0;
        for &i in &val_idx {
            if model.predict(&train[i].x)? == train[i].y {
                correct += 1;
            }
        }
        let better = match best {
            None => true,
            Some((bk, bc)) => correct > bc || (correct == bc && k == DEFAULT_K && bk != DEFAULT_K),
        };
        if better {
            best = Some((k, correct));
        }
    }
    Ok(best.map_or(fallback, |b| b.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[(f64, &str)]) -> Vec<LabeledPoint<String>> {
        v.iter()
            .map(|&(x, y)| LabeledPoint::new(vec![x], y.to_string()))
            .collect()
    }

    #[test]
    fn exact_match_with_k1() {
        let m = KnnModel::new(pts(&[(0.0, "A"), (5.0, "B"), (9.0, "C")]), 1).unwrap();
        assert_eq!(m.predict(&[5.0]).unwrap(), "B");
    }

    #[test]
    fn three_neighbour_majority() {
        let m = KnnModel::new(pts(&[(0.0, "A"), (1.0, "A"), (10.0, "B")]), 3).unwrap();
        assert_eq!(m.predict(&[0.4]).unwrap(), "A");
    }

    #[test]
    fn equidistant_tie_goes_to_smaller_label() {
        let m = KnnModel::new(pts(&[(-1.0, "B"), (1.0, "A")]), 2).unwrap();
        assert_eq!(m.predict(&[0.0]).unwrap(), "A");
        let m = KnnModel::new(pts(&[(-1.0, "A"), (1.0, "B")]), 2).unwrap();
        assert_eq!(m.predict(&[0.0]).unwrap(), "A");
    }

    #[test]
    fn count_tie_goes_to_closer_class() {
        // two A at distance 1 and 3, two B at distance 2 and 2.5: sums 4 vs 4.5
        let m = KnnModel::new(pts(&[(1.0, "B"), (-3.0, "B"), (2.0, "A"), (-2.5, "A")]), 4).unwrap();
        assert_eq!(m.predict(&[0.0]).unwrap(), "B");
    }

    #[test]
    fn invalid_construction() {
        assert!(matches!(
            KnnModel::<String>::new(vec![], 1),
            Err(ClassifierError::EmptyTrainingSet)
        ));
        assert!(matches!(
            KnnModel::new(pts(&[(0.0, "A")]), 2),
            Err(ClassifierError::InvalidK { k: 2, n: 1 })
        ));
        assert!(matches!(
            KnnModel::new(pts(&[(0.0, "A")]), 0),
            Err(ClassifierError::InvalidK { .. })
        ));
        let m = KnnModel::new(pts(&[(0.0, "A")]), 1).unwrap();
        assert!(m.predict(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn select_k_prefers_default_on_ties() {
        // perfectly separated clusters: every k scores 100%
        let mut train = Vec::new();
        for i in 0..20 {
            train.push(LabeledPoint::new(vec![i as f64 * 0.01], 'A'));
            train.push(LabeledPoint::new(vec![100.0 + i as f64 * 0.01], 'B'));
        }
        assert_eq!(select_k(&train, 3).unwrap(), DEFAULT_K);
        assert_eq!(select_k(&train[..2], 3).unwrap(), 2);
    }

    #[test]
    fn blob_round_trip() {
        let m = KnnModel::new(pts(&[(0.0, "A"), (5.0, "B")]), 1).unwrap();
        let blob = m.to_blob();
        assert_eq!(KnnModel::<String>::from_blob(&blob).unwrap().k(), 1);
        assert_eq!(m.size_bytes(), blob.len());
        assert!(super::super::NbModel::<String>::from_blob(&blob).is_err());
    }
}
