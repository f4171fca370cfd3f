//! Shared fixtures for the benchmarks in `benches/`.

use iqal_core::classifiers::LabeledPoint;
use iqal_core::features::{extract_all, NormStats};
use iqal_core::synth::{build_dataset, CoupletLabel, Dataset, DatasetSpec};

/// Nine couplets at one SNR, `per_couplet` frames each.
pub fn dataset(snr_db: f64, per_couplet: usize, frame_len: usize) -> Dataset {
    build_dataset(&DatasetSpec {
        snr_list: vec![snr_db],
        frames_per_couplet_per_snr: per_couplet,
        frame_len,
        master_seed: 11,
        ..DatasetSpec::default()
    })
    .expect("bench dataset")
}

/// Standardized feature rows with their couplet labels.
pub fn labeled_points(ds: &Dataset) -> Vec<LabeledPoint<CoupletLabel>> {
    let feats = extract_all(&ds.frames).expect("features");
    let rows: Vec<Vec<f64>> = feats.iter().map(|f| f.values.clone()).collect();
    let stats = NormStats::fit(&rows).expect("stats");
    rows.iter()
        .zip(&ds.frames)
        .map(|(r, f)| LabeledPoint::new(stats.normalize(r), f.truth))
        .collect()
}
