use std::collections::HashMap;

use iqal_core::features::{extract_features, rasterize, NormStats, FEATURE_DIM, IMAGE_SIZE};
use iqal_core::synth::{
    add_awgn, build_dataset, measured_snr_db, modulate, read_dataset, write_dataset, CoupletLabel, DatasetSpec,
    ModScheme, SignalClass,
};
use num_complex::Complex64;
use proptest::prelude::*;

fn scheme() -> impl Strategy<Value = ModScheme> {
    prop::sample::select(ModScheme::ALL.to_vec())
}

fn signal() -> impl Strategy<Value = SignalClass> {
    prop::sample::select(SignalClass::ALL.to_vec())
}

fn small_spec() -> impl Strategy<Value = DatasetSpec> {
    (
        prop::collection::vec(prop::sample::select(vec![0.0, 4.0, 9.0, 18.0, -2.0]), 1..3),
        1usize..4,
        64usize..300,
        any::<u64>(),
    )
        .prop_map(|(snr_list, per, frame_len, master_seed)| DatasetSpec {
            snr_list,
            frames_per_couplet_per_snr: per,
            frame_len,
            master_seed,
            ..DatasetSpec::default()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn noiseless_frames_have_unit_power(s in scheme(), g in signal(), len in 64usize..4096, seed in any::<u64>()) {
        let f = modulate(s, g, len, seed).unwrap();
        prop_assert_eq!(f.len(), len);
        prop_assert!(f.is_noiseless());
        prop_assert!((f.mean_power() - 1.0).abs() <= 1e-6, "power {}", f.mean_power());
        prop_assert_eq!(f, modulate(s, g, len, seed).unwrap());
    }

    #[test]
    fn awgn_hits_the_requested_snr(s in scheme(), g in signal(), len in 64usize..2048, snr in -5.0f64..30.0, seed in any::<u64>()) {
        let clean = modulate(s, g, len, seed).unwrap();
        let noisy = add_awgn(&clean, snr, seed ^ 0xA5).unwrap();
        prop_assert!((measured_snr_db(&clean.samples, &noisy.samples) - snr).abs() <= 0.5);
        prop_assert_eq!(noisy.snr_db, snr);
        prop_assert!(add_awgn(&noisy, snr, seed).is_err());
    }

    #[test]
    fn datasets_are_balanced_deterministic_and_round_trip(spec in small_spec()) {
        let ds = build_dataset(&spec).unwrap();
        prop_assert_eq!(ds.len(), 9 * spec.snr_list.len() * spec.frames_per_couplet_per_snr);
        prop_assert_eq!(&ds, &build_dataset(&spec).unwrap());

        let mut counts: HashMap<(CoupletLabel, i64), usize> = HashMap::new();
        for f in &ds.frames {
            prop_assert_eq!(f.len(), spec.frame_len);
            *counts.entry((f.truth, (f.snr_db * 10.0) as i64)).or_default() += 1;
        }
        let mut distinct = spec.snr_list.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        // duplicated SNR entries add frames to the same cell
        for c in counts.values() {
            prop_assert_eq!(c % spec.frames_per_couplet_per_snr, 0);
        }
        prop_assert_eq!(counts.len(), 9 * distinct.len());

        let mut bytes = Vec::new();
        write_dataset(&ds, &mut bytes).unwrap();
        let back = read_dataset(bytes.as_slice()).unwrap();
        prop_assert_eq!(back.len(), ds.len());
        for (a, b) in ds.frames.iter().zip(&back.frames) {
            prop_assert_eq!((a.id, a.truth, a.seed), (b.id, b.truth, b.seed));
            for (x, y) in a.samples.iter().zip(&b.samples) {
                prop_assert_eq!((x.re as f32, x.im as f32), (y.re as f32, y.im as f32));
            }
        }
    }

    #[test]
    fn features_are_pure_and_finite(s in scheme(), g in signal(), len in 64usize..2048, snr in 0.0f64..20.0, seed in any::<u64>()) {
        let f = add_awgn(&modulate(s, g, len, seed).unwrap(), snr, seed).unwrap();
        let v = extract_features(&f).unwrap();
        prop_assert_eq!(v.values.len(), FEATURE_DIM);
        prop_assert!(v.values.iter().all(|x| x.is_finite()));
        prop_assert_eq!(&v, &extract_features(&f.clone()).unwrap());
    }

    #[test]
    fn rasters_are_224_square_for_any_frame(
        samples in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 224..1500),
    ) {
        let mut f = modulate(ModScheme::Bpsk, SignalClass::ContinuousNarrow, samples.len(), 0).unwrap();
        f.samples = samples.iter().map(|&(re, im)| Complex64::new(re, im)).collect();
        let img = rasterize(&f).unwrap();
        prop_assert_eq!((img.width(), img.height()), (IMAGE_SIZE, IMAGE_SIZE));
        let pgm = img.to_pgm();
        let header = format!("P5\n{IMAGE_SIZE} {IMAGE_SIZE}\n255\n");
        prop_assert!(pgm.starts_with(header.as_bytes()));
        prop_assert_eq!(pgm.len(), header.len() + IMAGE_SIZE * IMAGE_SIZE);
    }

    #[test]
    fn normalization_round_trips(
        rows in prop::collection::vec(prop::collection::vec(-1e4f64..1e4, 5), 1..50),
        probe in prop::collection::vec(-1e4f64..1e4, 5),
    ) {
        let stats = NormStats::fit(&rows).unwrap();
        for v in rows.iter().chain(std::iter::once(&probe)) {
            let back = stats.denormalize(&stats.normalize(v));
            for (a, b) in v.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{} vs {}", a, b);
            }
        }
        // training columns come out centred
        let normed: Vec<Vec<f64>> = rows.iter().map(|r| stats.normalize(r)).collect();
        for d in 0..5 {
            let mean = normed.iter().map(|r| r[d]).sum::<f64>() / normed.len() as f64;
            prop_assert!(mean.abs() < 1e-9, "column {} mean {}", d, mean);
        }
    }
}
