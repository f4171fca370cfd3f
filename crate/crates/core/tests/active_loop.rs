use std::collections::{BTreeMap, HashMap};

use iqal_core::active::{LabelSource, LoopConfig, LoopData, LoopError, Phase, SessionState};
use iqal_core::metrics::model_label_ratio;
use iqal_core::oracle::SimulatedOracle;
use iqal_core::rng::rng_from_seed;
use iqal_core::run_session;
use iqal_core::synth::{CoupletLabel, REGISTERED_COUPLETS};
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

/// `n` frames cycling through `classes` Gaussian blobs on a circle of
/// radius 3 in the first two of four dimensions.
fn blobs(n: usize, classes: usize, spread: f64, seed: u64) -> (LoopData, HashMap<u64, CoupletLabel>) {
    let mut rng = rng_from_seed(seed);
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut strata = Vec::new();
    let mut truth = HashMap::new();
    for i in 0..n {
        let c = i % classes;
        let a = c as f64 * std::f64::consts::TAU / classes as f64;
        let mut x = vec![3.0 * a.cos(), 3.0 * a.sin(), 0.0, 0.0];
        for v in &mut x {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += spread * z;
        }
        let id = 1000 + i as u64;
        ids.push(id);
        rows.push(x);
        strata.push(REGISTERED_COUPLETS[c]);
        truth.insert(id, REGISTERED_COUPLETS[c]);
    }
    (LoopData::new(ids, rows, Some(strata)).unwrap(), truth)
}

fn oracle(truth: &HashMap<u64, CoupletLabel>, classes: usize, eps: f64, seed: u64) -> SimulatedOracle {
    SimulatedOracle::new(truth.clone(), REGISTERED_COUPLETS[..classes].to_vec(), eps, seed).unwrap()
}

/// Fresh session with its bootstrap labelled from `truth`.
fn bootstrapped(data: &LoopData, truth: &HashMap<u64, CoupletLabel>, config: LoopConfig) -> SessionState {
    let mut s = SessionState::new(data, config, 3).unwrap();
    let ids = s.begin_bootstrap(data).unwrap();
    let labels: Vec<_> = ids.iter().map(|id| (*id, truth[id])).collect();
    s.complete_bootstrap(data, &labels).unwrap();
    s
}

/// Corrections for the first `k` items of the outstanding page, each to a
/// label other than the model's among the first three couplets.
fn wrong_labels(s: &SessionState, k: usize) -> Vec<(u64, CoupletLabel)> {
    let page = s.outstanding_page().unwrap();
    page.items
        .iter()
        .take(k)
        .map(|it| {
            let other = if it.model_label == REGISTERED_COUPLETS[0] {
                REGISTERED_COUPLETS[1]
            } else {
                REGISTERED_COUPLETS[0]
            };
            (it.frame_id, other)
        })
        .collect()
}

#[test]
fn bootstrap_labels_thirty_and_fits_one_scorer_per_class() {
    let (data, truth) = blobs(100, 3, 0.3, 1);
    let s = bootstrapped(&data, &truth, LoopConfig::default());
    assert_eq!(s.count(LabelSource::User), 30);
    assert_eq!(s.pool().len(), 70);
    assert_eq!(s.ensemble().unwrap().len(), 3);
    assert_eq!(s.phase(), &Phase::Ready);

    // stratified: 10 of each class
    let mut per_class: BTreeMap<CoupletLabel, usize> = BTreeMap::new();
    for l in s.labeled().values() {
        *per_class.entry(l.label).or_default() += 1;
    }
    assert!(per_class.values().all(|&n| n == 10), "{per_class:?}");
}

#[test]
fn pool_smaller_than_bootstrap_is_rejected() {
    let (data, _) = blobs(10, 3, 0.3, 1);
    assert!(matches!(
        SessionState::new(&data, LoopConfig::default(), 0),
        Err(LoopError::PoolTooSmall { pool: 10, needed: 30 })
    ));
}

#[test]
fn bootstrap_submission_must_cover_the_batch_exactly() {
    let (data, truth) = blobs(100, 3, 0.3, 1);
    let mut s = SessionState::new(&data, LoopConfig::default(), 3).unwrap();
    let ids = s.begin_bootstrap(&data).unwrap();
    let mut labels: Vec<_> = ids.iter().map(|id| (*id, truth[id])).collect();
    let before = s.to_checkpoint();
    let last = labels.pop().unwrap();
    assert!(matches!(
        s.complete_bootstrap(&data, &labels),
        Err(LoopError::MissingLabels(1))
    ));
    labels.push((1, last.1));
    assert!(matches!(
        s.complete_bootstrap(&data, &labels),
        Err(LoopError::NotOutstanding(1))
    ));
    labels.pop();
    labels.push(labels[0]);
    assert!(matches!(
        s.complete_bootstrap(&data, &labels),
        Err(LoopError::DuplicateSubmission(_))
    ));
    assert_eq!(s.to_checkpoint(), before);
}

#[test]
fn pages_hold_thirty_then_the_remainder() {
    let (data, truth) = blobs(100, 3, 0.3, 1);
    let mut s = bootstrapped(&data, &truth, LoopConfig::default());
    assert_eq!(s.predict_page(&data).unwrap().items.len(), 30);

    let (data, truth) = blobs(37, 3, 0.3, 1);
    let mut s = bootstrapped(&data, &truth, LoopConfig::default());
    let page = s.predict_page(&data).unwrap();
    assert_eq!(page.items.len(), 7);
    assert!(page.items.iter().all(|i| (0.0..=1.0).contains(&i.confidence)));
    s.review_page(&data, &[]).unwrap();
    assert!(s.is_finished());
}

#[test]
fn second_predict_without_review_is_a_protocol_error() {
    let (data, truth) = blobs(100, 3, 0.3, 1);
    let mut s = bootstrapped(&data, &truth, LoopConfig::default());
    s.predict_page(&data).unwrap();
    assert!(matches!(
        s.predict_page(&data),
        Err(LoopError::WrongPhase {
            expected: "ready",
            actual: "awaiting_review"
        })
    ));
    let fresh = SessionState::new(&data, LoopConfig::default(), 0).unwrap();
    assert!(matches!(
        fresh.clone().predict_page(&data),
        Err(LoopError::WrongPhase { .. })
    ));
}

#[test]
fn ten_corrections_on_a_page_of_thirty() {
    let (data, truth) = blobs(200, 3, 0.3, 1);
    let mut s = bootstrapped(&data, &truth, LoopConfig::default());
    s.predict_page(&data).unwrap();
    let (m0, u0) = (s.count(LabelSource::Model), s.count(LabelSource::User));
    let fixes = wrong_labels(&s, 10);
    let out = s.review_page(&data, &fixes).unwrap();
    assert_eq!(out.incorrect, 10);
    assert!(!out.flushed && !out.restarted);
    assert_eq!(s.buffer().len(), 10);
    assert_eq!(s.count(LabelSource::Model), m0 + 20);
    assert_eq!(s.count(LabelSource::User), u0 + 10);
    for (id, label) in fixes {
        assert_eq!(s.labeled()[&id].label, label);
        assert_eq!(s.labeled()[&id].source, LabelSource::User);
    }
    s.check_invariants().unwrap();
}

#[test]
fn empty_review_finalizes_the_page_as_model_labels() {
    let (data, truth) = blobs(200, 3, 0.3, 1);
    let mut s = bootstrapped(&data, &truth, LoopConfig::default());
    let page = s.predict_page(&data).unwrap().clone();
    s.review_page(&data, &[]).unwrap();
    assert_eq!(s.count(LabelSource::Model), 30);
    assert!(s.buffer().is_empty());
    for it in &page.items {
        assert_eq!(s.labeled()[&it.frame_id].label, it.model_label);
    }
}

#[test]
fn correction_that_matches_the_model_is_an_accept() {
    let (data, truth) = blobs(200, 3, 0.3, 1);
    let mut s = bootstrapped(&data, &truth, LoopConfig::default());
    let it = s.predict_page(&data).unwrap().items[0].clone();
    let out = s.review_page(&data, &[(it.frame_id, it.model_label)]).unwrap();
    assert_eq!(out.incorrect, 0);
    assert_eq!(s.labeled()[&it.frame_id].source, LabelSource::Model);
}

#[test]
fn correction_off_the_page_is_rejected_without_state_change() {
    let (data, truth) = blobs(200, 3, 0.3, 1);
    let mut s = bootstrapped(&data, &truth, LoopConfig::default());
    s.predict_page(&data).unwrap();
    let before = s.to_checkpoint();
    let stale = *s.labeled().keys().next().unwrap();
    let err = s.review_page(&data, &[(stale, REGISTERED_COUPLETS[0])]).unwrap_err();
    assert!(matches!(err, LoopError::NotOutstanding(id) if id == stale));
    assert_eq!(s.to_checkpoint(), before);
}

#[test]
fn unseen_class_adds_one_scorer_and_leaves_others_untouched() {
    let (data, truth) = blobs(200, 3, 0.3, 1);
    let mut s = bootstrapped(&data, &truth, LoopConfig::default());
    let before: BTreeMap<CoupletLabel, Vec<u8>> = s
        .ensemble()
        .unwrap()
        .scorers()
        .iter()
        .map(|c| (c.label, serde_json::to_vec(&c.scorer).unwrap()))
        .collect();
    s.predict_page(&data).unwrap();
    let new_class = REGISTERED_COUPLETS[7];
    let id = s.outstanding_page().unwrap().items[0].frame_id;
    let out = s.review_page(&data, &[(id, new_class)]).unwrap();
    assert_eq!(out.new_classes, vec![new_class]);

    let e = s.ensemble().unwrap();
    assert_eq!(e.len(), 4);
    assert!(e.contains(&new_class));
    for c in e.scorers().iter().filter(|c| c.label != new_class) {
        assert_eq!(serde_json::to_vec(&c.scorer).unwrap(), before[&c.label]);
    }
}

#[test]
fn buffer_flushes_only_when_strictly_over_capacity() {
    let (data, truth) = blobs(400, 3, 0.3, 1);
    let mut s = bootstrapped(&data, &truth, LoopConfig::default());
    for expected in [15, 30, 45, 60] {
        s.predict_page(&data).unwrap();
        let out = s.review_page(&data, &wrong_labels(&s, 15)).unwrap();
        assert!(!out.flushed && !out.restarted);
        assert_eq!(s.buffer().len(), expected);
    }
    let retrains = s.retrains();
    s.predict_page(&data).unwrap();
    let out = s.review_page(&data, &wrong_labels(&s, 1)).unwrap();
    assert!(out.flushed);
    assert_eq!(s.buffer().len(), 0);
    assert_eq!(s.retrains(), retrains + 1);
    let last = s.records().last().unwrap();
    assert!(last.flushed);
    assert_eq!(last.buffer_size, 0);
    s.check_invariants().unwrap();
}

#[test]
fn restart_fires_above_fifteen_incorrect() {
    for (k, restart) in [(0, false), (15, false), (16, true), (30, true)] {
        let (data, truth) = blobs(200, 3, 0.3, 1);
        let mut s = bootstrapped(&data, &truth, LoopConfig::default());
        s.predict_page(&data).unwrap();
        let out = s.review_page(&data, &wrong_labels(&s, k)).unwrap();
        assert_eq!(out.restarted, restart, "k = {k}");
        assert_eq!(s.restarts(), usize::from(restart));
        let want = if restart { "needs_bootstrap" } else { "ready" };
        assert_eq!(s.phase().name(), want);
        if restart {
            // re-bootstraps on what is left, never touching finalized frames
            let ids = s.begin_bootstrap(&data).unwrap();
            assert_eq!(ids.len(), 30);
            assert!(ids.iter().all(|id| !s.labeled().contains_key(id)));
        }
    }
}

#[test]
fn thirty_frame_dataset_is_all_bootstrap() {
    let (data, truth) = blobs(30, 3, 0.3, 1);
    let r = run_session(&data, LoopConfig::default(), 0, &mut oracle(&truth, 3, 0.0, 0)).unwrap();
    assert_eq!((r.total, r.user_labelled, r.model_labelled), (30, 30, 0));
    assert_eq!(r.model_label_ratio, 0.0);
    assert_eq!(model_label_ratio(&r).unwrap(), 0.0);
    assert!(r.complete);
    assert!(r.records.is_empty());
}

#[test]
fn perfectly_separable_data_needs_only_the_bootstrap() {
    // Blobs 0.05 wide at distance 3 apart: every scorer is exact after the
    // bootstrap, so the user never corrects anything.
    let (data, truth) = blobs(300, 5, 0.05, 2);
    let r = run_session(&data, LoopConfig::default(), 9, &mut oracle(&truth, 5, 0.0, 0)).unwrap();
    assert_eq!(r.user_labelled, 30);
    assert_eq!(r.model_label_ratio, 270.0 / 300.0);
    assert!(r.records.iter().all(|x| x.incorrect == 0));
    assert_eq!(r.records.len(), 9);
}

#[test]
fn sessions_are_deterministic() {
    let (data, truth) = blobs(400, 4, 1.0, 5);
    let run = || run_session(&data, LoopConfig::default(), 17, &mut oracle(&truth, 4, 0.1, 3)).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
}

#[test]
fn checkpoint_after_every_operation_replays_to_the_same_report() {
    let (data, truth) = blobs(500, 4, 1.1, 6);
    let config = LoopConfig {
        buffer_capacity: 30,
        ..LoopConfig::default()
    };
    let straight = run_session(&data, config.clone(), 4, &mut oracle(&truth, 4, 0.1, 8)).unwrap();
    assert!(straight.retrains > 1, "want a flush in the run");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("session.json");
    let mut o = oracle(&truth, 4, 0.1, 8);
    let mut s = SessionState::new(&data, config, 4).unwrap();
    let mut turn = 0;
    while !s.is_finished() {
        // alternate between whole steps and split-phase operations so both
        // kinds of intermediate phase are checkpointed
        match (turn % 3, s.phase().name()) {
            (0, "needs_bootstrap") => {
                s.begin_bootstrap(&data).unwrap();
            }
            (0, "ready") => {
                s.predict_page(&data).unwrap();
            }
            _ => s.step(&data, &mut o).unwrap(),
        }
        s.save(&path).unwrap();
        s = SessionState::load(&path).unwrap();
        turn += 1;
    }
    assert_eq!(s.report(), straight);
}

#[test]
fn foreign_checkpoints_are_rejected() {
    let (data, _) = blobs(100, 3, 0.3, 1);
    let s = SessionState::new(&data, LoopConfig::default(), 0).unwrap();
    let mut v: serde_json::Value = serde_json::from_slice(&s.to_checkpoint()).unwrap();
    v["version"] = 99.into();
    assert!(matches!(
        SessionState::from_checkpoint(&serde_json::to_vec(&v).unwrap()),
        Err(LoopError::Checkpoint(_))
    ));
    assert!(SessionState::from_checkpoint(b"{").is_err());
}

#[test]
fn next_page_after_a_flush_is_no_worse_in_most_sessions() {
    // Overlapping blobs keep corrections flowing until the buffer
    // overflows. Compare the flushing page with the page after it.
    let (mut trials, mut no_worse) = (0, 0);
    for seed in 0..50 {
        let (data, truth) = blobs(900, 5, 1.0, seed);
        let r = run_session(&data, LoopConfig::default(), seed, &mut oracle(&truth, 5, 0.0, seed)).unwrap();
        let Some(i) = r.records.iter().position(|x| x.flushed) else {
            continue;
        };
        if i + 1 == r.records.len() || r.records[i].restarted {
            continue;
        }
        trials += 1;
        no_worse += usize::from(r.records[i + 1].incorrect <= r.records[i].incorrect);
    }
    assert!(trials >= 45, "only {trials} sessions flushed");
    assert!(no_worse * 5 >= trials * 4, "{no_worse}/{trials}");
}

fn random_config(capacity: usize) -> LoopConfig {
    LoopConfig {
        buffer_capacity: capacity,
        ..LoopConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn loop_invariants_hold_between_operations(
        seed in 0u64..1_000,
        n in 60usize..400,
        classes in 2usize..6,
        spread in prop::sample::select(vec![0.5, 1.0, 1.6]),
        eps in prop::sample::select(vec![0.0, 0.1]),
        capacity in prop::sample::select(vec![30usize, 60]),
    ) {
        let (data, truth) = blobs(n, classes, spread, seed);
        let mut o = oracle(&truth, classes, eps, seed);
        let mut s = SessionState::new(&data, random_config(capacity), seed).unwrap();
        let mut pool = s.pool().len();
        while !s.is_finished() {
            s.step(&data, &mut o).unwrap();
            prop_assert!(s.check_invariants().is_ok(), "{:?}", s.check_invariants());
            prop_assert!(s.buffer().len() <= capacity);
            prop_assert!(s.pool().len() <= pool);
            pool = s.pool().len();
        }
        let r = s.report();
        prop_assert_eq!(r.user_labelled + r.model_labelled, n);
        prop_assert!(r.complete);
        prop_assert_eq!(s.pool().len(), 0);
        for rec in &r.records {
            prop_assert_eq!(rec.restarted, rec.incorrect > 15);
            prop_assert_eq!(rec.correct + rec.incorrect, rec.page_len);
        }
        let page_user: usize = r.records.iter().map(|x| x.user_labelled).sum();
        prop_assert!(page_user <= r.user_labelled);
    }

    #[test]
    fn restart_iff_more_than_threshold_corrections(k in 0usize..=30, seed in 0u64..50) {
        let (data, truth) = blobs(120, 3, 0.3, seed);
        let mut s = bootstrapped(&data, &truth, LoopConfig::default());
        s.predict_page(&data).unwrap();
        let out = s.review_page(&data, &wrong_labels(&s, k)).unwrap();
        prop_assert_eq!(out.restarted, k > 15);
        prop_assert_eq!(out.incorrect, k);
    }
}
