use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::Path;
use std::time::Instant;

use rand::seq::{IndexedRandom, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    BufferEntry, CorrectionBuffer, FinalLabel, IterationRecord, LabelMap, LabelSource, LoopConfig, LoopData, LoopError,
    Page, PageItem, Phase, SelectionPolicy, SessionReport, TrainKind, TrainRound,
};
use crate::classifiers::{LabeledPoint, OvaEnsemble};
use crate::oracle::{Oracle, OracleRequest};
use crate::rng::{derive_seed, rng_from_seed};
use crate::synth::CoupletLabel;

pub const CHECKPOINT_FORMAT: &str = "iqal-session";
pub const CHECKPOINT_VERSION: u32 = 1;

// Seed stream tags.
const STREAM_POOL: u64 = 0x706f_6f6c;
const STREAM_BOOTSTRAP: u64 = 0x626f_6f74;
const STREAM_FLUSH: u64 = 0x666c_7573;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewOutcome {
    pub incorrect: usize,
    pub flushed: bool,
    pub restarted: bool,
    pub new_classes: Vec<CoupletLabel>,
}

/// Everything needed to resume a session, given the same [`LoopData`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    format: String,
    version: u32,
    config: LoopConfig,
    rng_seed: u64,
    total: usize,
    /// Unlabelled frames; pages are taken from the front.
    pool: VecDeque<u64>,
    labeled: LabelMap,
    ensemble: Option<OvaEnsemble<CoupletLabel>>,
    buffer: CorrectionBuffer,
    phase: Phase,
    iteration: usize,
    restarts: usize,
    retrains: usize,
    records: Vec<IterationRecord>,
    train_rounds: Vec<TrainRound>,
    pending_user: usize,
    pending_train_samples: usize,
    pending_train_seconds: Option<f64>,
}

impl SessionState {
    /// The pool is every frame of `data` in an order shuffled under `seed`.
    pub fn new(data: &LoopData, config: LoopConfig, seed: u64) -> Result<Self, LoopError> {
        config.validate()?;
        if data.len() < config.bootstrap_count {
            return Err(LoopError::PoolTooSmall {
                pool: data.len(),
                needed: config.bootstrap_count,
            });
        }
        let mut ids = data.ids().to_vec();
        ids.shuffle(&mut rng_from_seed(derive_seed(seed, STREAM_POOL)));
        let capacity = config.buffer_capacity;
        Ok(Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config,
            rng_seed: seed,
            total: data.len(),
            pool: ids.into(),
            labeled: BTreeMap::new(),
            ensemble: None,
            buffer: CorrectionBuffer {
                entries: Vec::new(),
                capacity,
            },
            phase: Phase::NeedsBootstrap,
            iteration: 0,
            restarts: 0,
            retrains: 0,
            records: Vec::new(),
            train_rounds: Vec::new(),
            pending_user: 0,
            pending_train_samples: 0,
            pending_train_seconds: None,
        })
    }

    pub fn config(&self) -> &LoopConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn phase(&self) -> &Phase {
        &self.phase
    }

    pub fn is_finished(&self) -> bool {
        self.phase == Phase::Complete
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn pool(&self) -> &VecDeque<u64> {
        &self.pool
    }

    pub fn labeled(&self) -> &LabelMap {
        &self.labeled
    }

    pub fn ensemble(&self) -> Option<&OvaEnsemble<CoupletLabel>> {
        self.ensemble.as_ref()
    }

    pub fn buffer(&self) -> &CorrectionBuffer {
        &self.buffer
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn restarts(&self) -> usize {
        self.restarts
    }

    pub fn retrains(&self) -> usize {
        self.retrains
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    pub fn count(&self, source: LabelSource) -> usize {
        self.labeled.values().filter(|l| l.source == source).count()
    }

    /// Frames awaiting bootstrap labels, if that is the current phase.
    pub fn outstanding_bootstrap(&self) -> Option<&[u64]> {
        match &self.phase {
            Phase::AwaitingBootstrap { frame_ids } => Some(frame_ids),
            _ => None,
        }
    }

    pub fn outstanding_page(&self) -> Option<&Page> {
        match &self.phase {
            Phase::AwaitingReview { page } => Some(page),
            _ => None,
        }
    }

    fn expect_phase(&self, expected: &'static str) -> Result<(), LoopError> {
        if self.phase.name() == expected {
            Ok(())
        } else {
            Err(LoopError::WrongPhase {
                expected,
                actual: self.phase.name(),
            })
        }
    }

    /// Draw the next bootstrap batch: `bootstrap_count` frames, or the whole
    /// pool if fewer remain after a restart. Stratified by ground truth when
    /// the data carries it.
    pub fn begin_bootstrap(&mut self, data: &LoopData) -> Result<Vec<u64>, LoopError> {
        self.expect_phase("needs_bootstrap")?;
        let n = self.config.bootstrap_count.min(self.pool.len());
        let mut rng = rng_from_seed(derive_seed(
            derive_seed(self.rng_seed, STREAM_BOOTSTRAP),
            self.restarts as u64,
        ));
        let ids: Vec<u64> = if n == self.pool.len() {
            self.pool.iter().copied().collect()
        } else if data.has_strata() {
            let mut groups: BTreeMap<CoupletLabel, Vec<u64>> = BTreeMap::new();
            for &id in &self.pool {
                if let Some(s) = data.stratum(id) {
                    groups.entry(s).or_default().push(id);
                }
            }
            let mut queues: Vec<VecDeque<u64>> = groups
                .into_values()
                .map(|mut g| {
                    g.shuffle(&mut rng);
                    g.into()
                })
                .collect();
            let mut picked = Vec::with_capacity(n);
            while picked.len() < n {
                for q in &mut queues {
                    if picked.len() == n {
                        break;
                    }
                    if let Some(id) = q.pop_front() {
                        picked.push(id);
                    }
                }
            }
            picked
        } else {
            let pool: Vec<u64> = self.pool.iter().copied().collect();
            pool.choose_multiple(&mut rng, n).copied().collect()
        };
        self.phase = Phase::AwaitingBootstrap { frame_ids: ids.clone() };
        Ok(ids)
    }

    /// Record user labels for the whole outstanding batch and retrain.
    pub fn complete_bootstrap(&mut self, data: &LoopData, labels: &[(u64, CoupletLabel)]) -> Result<(), LoopError> {
        self.expect_phase("awaiting_bootstrap")?;
        let wanted: BTreeSet<u64> = self
            .outstanding_bootstrap()
            .unwrap_or_default()
            .iter()
            .copied()
            .collect();
        let mut seen = BTreeSet::new();
        for &(id, _) in labels {
            if !wanted.contains(&id) {
                return Err(LoopError::NotOutstanding(id));
            }
            if !seen.insert(id) {
                return Err(LoopError::DuplicateSubmission(id));
            }
        }
        if seen.len() != wanted.len() {
            return Err(LoopError::MissingLabels(wanted.len() - seen.len()));
        }
        // fit first so a failure leaves the state untouched
        let mut labeled = self.labeled.clone();
        for &(id, label) in labels {
            labeled.insert(
                id,
                FinalLabel {
                    label,
                    source: LabelSource::User,
                },
            );
        }
        let (ensemble, round) = self.fit(data, &labeled, &[], TrainKind::Bootstrap)?;
        self.labeled = labeled;
        self.commit_training(ensemble, round);
        self.pool.retain(|id| !wanted.contains(id));
        self.pending_user += labels.len();
        self.phase = if self.pool.is_empty() {
            Phase::Complete
        } else {
            Phase::Ready
        };
        Ok(())
    }

    /// Score the next page of the pool with the current ensemble.
    pub fn predict_page(&mut self, data: &LoopData) -> Result<&Page, LoopError> {
        self.expect_phase("ready")?;
        let ensemble = self.ensemble.as_ref().ok_or(LoopError::WrongPhase {
            expected: "trained ensemble",
            actual: "untrained",
        })?;
        let ids: Vec<u64> = self.pool.iter().take(self.config.page_size).copied().collect();
        let items = ids
            .par_iter()
            .map(|&id| {
                let x = data.features(id).ok_or(LoopError::NotOutstanding(id))?;
                let p = ensemble.predict(x)?;
                Ok(PageItem {
                    frame_id: id,
                    model_label: p.label,
                    confidence: p.confidence,
                    margin: p.margin,
                    entropy: p.entropy,
                })
            })
            .collect::<Result<Vec<_>, LoopError>>()?;
        self.phase = Phase::AwaitingReview {
            page: Page {
                index: self.iteration,
                items,
            },
        };
        Ok(self.outstanding_page().expect("page just set"))
    }

    /// Finalize the outstanding page. `corrections` lists user labels for
    /// frames the model got wrong; every other item keeps its model label.
    /// Then flush the buffer if it overflowed and apply the restart rule.
    pub fn review_page(
        &mut self,
        data: &LoopData,
        corrections: &[(u64, CoupletLabel)],
    ) -> Result<ReviewOutcome, LoopError> {
        self.expect_phase("awaiting_review")?;
        let page = self.outstanding_page().expect("phase checked").clone();
        let on_page: HashMap<u64, &PageItem> = page.items.iter().map(|i| (i.frame_id, i)).collect();
        let mut fixes: HashMap<u64, CoupletLabel> = HashMap::new();
        for &(id, label) in corrections {
            if !on_page.contains_key(&id) {
                return Err(LoopError::NotOutstanding(id));
            }
            if fixes.insert(id, label).is_some() {
                return Err(LoopError::DuplicateSubmission(id));
            }
        }

        let mut labeled = self.labeled.clone();
        let mut new_entries = Vec::new();
        let mut new_classes: Vec<CoupletLabel> = Vec::new();
        let ensemble = self.ensemble.as_ref().expect("review implies a trained ensemble");
        for item in &page.items {
            match fixes.get(&item.frame_id) {
                Some(&label) if label != item.model_label => {
                    labeled.insert(
                        item.frame_id,
                        FinalLabel {
                            label,
                            source: LabelSource::User,
                        },
                    );
                    new_entries.push(BufferEntry {
                        frame_id: item.frame_id,
                        model_label: item.model_label,
                        true_label: label,
                        margin: item.margin,
                        entropy: item.entropy,
                    });
                    if !ensemble.contains(&label) && !new_classes.contains(&label) {
                        new_classes.push(label);
                    }
                }
                _ => {
                    labeled.insert(
                        item.frame_id,
                        FinalLabel {
                            label: item.model_label,
                            source: LabelSource::Model,
                        },
                    );
                }
            }
        }

        let mut ensemble = ensemble.clone();
        for &class in &new_classes {
            let (pos, neg) = training_rows(data, &labeled, class, self.config.train_on_reviewed);
            ensemble.add_class(class, &pos, &neg)?;
        }

        let incorrect = new_entries.len();
        self.labeled = labeled;
        self.ensemble = Some(ensemble);
        self.buffer.entries.extend(new_entries);
        let taken: Vec<u64> = self.pool.drain(..page.items.len()).collect();
        debug_assert!(taken.iter().zip(&page.items).all(|(a, b)| *a == b.frame_id));
        self.pending_user += incorrect;
        self.iteration += 1;

        let flushed = self.buffer.overflowing();
        if flushed {
            self.flush(data)?;
        }
        let restarted = incorrect > self.config.restart_threshold;
        if restarted {
            self.restarts += 1;
        }
        self.records.push(IterationRecord {
            iteration: self.iteration,
            page_len: page.items.len(),
            correct: page.items.len() - incorrect,
            incorrect,
            model_labelled: page.items.len() - incorrect,
            user_labelled: std::mem::take(&mut self.pending_user),
            buffer_size: self.buffer.len(),
            flushed,
            restarted,
            train_samples: std::mem::take(&mut self.pending_train_samples),
            train_seconds: self.pending_train_seconds.take(),
        });
        self.phase = if self.pool.is_empty() || self.iteration >= self.config.max_iterations {
            Phase::Complete
        } else if restarted {
            Phase::NeedsBootstrap
        } else {
            Phase::Ready
        };
        Ok(ReviewOutcome {
            incorrect,
            flushed,
            restarted,
            new_classes,
        })
    }

    /// Retrain on all user labels with the selected buffered entries
    /// duplicated, then empty the buffer.
    fn flush(&mut self, data: &LoopData) -> Result<(), LoopError> {
        let mut order: Vec<usize> = (0..self.buffer.len()).collect();
        let e = &self.buffer.entries;
        match self.config.selection_policy {
            SelectionPolicy::Margin => order.sort_by(|&a, &b| {
                e[a].margin
                    .total_cmp(&e[b].margin)
                    .then(e[a].frame_id.cmp(&e[b].frame_id))
            }),
            SelectionPolicy::Entropy => order.sort_by(|&a, &b| {
                e[b].entropy
                    .total_cmp(&e[a].entropy)
                    .then(e[a].frame_id.cmp(&e[b].frame_id))
            }),
            SelectionPolicy::Random => order.shuffle(&mut rng_from_seed(derive_seed(
                derive_seed(self.rng_seed, STREAM_FLUSH),
                self.retrains as u64,
            ))),
        }
        let selected: Vec<u64> = order
            .iter()
            .take(self.config.flush_select)
            .map(|&i| e[i].frame_id)
            .collect();
        let (ensemble, round) = self.fit(data, &self.labeled, &selected, TrainKind::Flush)?;
        self.commit_training(ensemble, round);
        self.buffer.entries.clear();
        Ok(())
    }

    fn fit(
        &self,
        data: &LoopData,
        labeled: &LabelMap,
        emphasised: &[u64],
        kind: TrainKind,
    ) -> Result<(OvaEnsemble<CoupletLabel>, TrainRound), LoopError> {
        let mut train: Vec<LabeledPoint<CoupletLabel>> = Vec::new();
        let reviewed = self.config.train_on_reviewed;
        for (&id, l) in labeled
            .iter()
            .filter(|(_, l)| reviewed || l.source == LabelSource::User)
        {
            let x = data.features(id).ok_or(LoopError::NotOutstanding(id))?;
            train.push(LabeledPoint::new(x.to_vec(), l.label));
        }
        for &id in emphasised {
            let (x, l) = (data.features(id), labeled.get(&id));
            if let (Some(x), Some(l)) = (x, l) {
                for _ in 1..self.config.duplicate_factor {
                    train.push(LabeledPoint::new(x.to_vec(), l.label));
                }
            }
        }
        let start = Instant::now();
        let ensemble = OvaEnsemble::fit(&train, self.config.scorer)?;
        let seconds = self.config.record_wall_time.then(|| start.elapsed().as_secs_f64());
        let round = TrainRound {
            round: self.retrains + 1,
            kind,
            samples: train.len(),
            seconds,
        };
        Ok((ensemble, round))
    }

    fn commit_training(&mut self, ensemble: OvaEnsemble<CoupletLabel>, round: TrainRound) {
        self.ensemble = Some(ensemble);
        self.retrains += 1;
        self.pending_train_samples += round.samples;
        if let Some(s) = round.seconds {
            *self.pending_train_seconds.get_or_insert(0.0) += s;
        }
        self.train_rounds.push(round);
    }

    /// Perform the next transition, asking `oracle` for whatever labels it
    /// needs: a full bootstrap batch or the review of one page.
    pub fn step(&mut self, data: &LoopData, oracle: &mut dyn Oracle) -> Result<(), LoopError> {
        match self.phase {
            Phase::Complete => Ok(()),
            Phase::NeedsBootstrap | Phase::AwaitingBootstrap { .. } => {
                let ids = match self.outstanding_bootstrap() {
                    Some(ids) => ids.to_vec(),
                    None => self.begin_bootstrap(data)?,
                };
                let mut labels = Vec::with_capacity(ids.len());
                for id in ids {
                    let req = OracleRequest {
                        frame_id: id,
                        proposed: None,
                        features: None,
                    };
                    labels.push((id, oracle.label(&req)?.label));
                }
                self.complete_bootstrap(data, &labels)
            }
            Phase::Ready | Phase::AwaitingReview { .. } => {
                let page = match self.outstanding_page() {
                    Some(p) => p.clone(),
                    None => self.predict_page(data)?.clone(),
                };
                let mut corrections = Vec::new();
                for item in &page.items {
                    let req = OracleRequest {
                        frame_id: item.frame_id,
                        proposed: Some(item.model_label),
                        features: None,
                    };
                    let answer = oracle.label(&req)?.label;
                    if answer != item.model_label {
                        corrections.push((item.frame_id, answer));
                    }
                }
                self.review_page(data, &corrections).map(|_| ())
            }
        }
    }

    pub fn report(&self) -> SessionReport {
        let model = self.count(LabelSource::Model);
        let user = self.count(LabelSource::User);
        SessionReport {
            total: self.total,
            model_labelled: model,
            user_labelled: user,
            model_label_ratio: model as f64 / self.total as f64,
            iterations: self.iteration,
            restarts: self.restarts,
            retrains: self.retrains,
            complete: self.pool.is_empty(),
            records: self.records.clone(),
            train_rounds: self.train_rounds.clone(),
        }
    }

    /// Structural invariants that must hold between operations.
    pub fn check_invariants(&self) -> Result<(), String> {
        if let Some(id) = self.pool.iter().find(|id| self.labeled.contains_key(id)) {
            return Err(format!("frame {id} is both pooled and labelled"));
        }
        if self.pool.len() + self.labeled.len() != self.total {
            return Err(format!(
                "pool {} + labelled {} != total {}",
                self.pool.len(),
                self.labeled.len(),
                self.total
            ));
        }
        if self.buffer.overflowing() {
            return Err(format!(
                "buffer {} > capacity {}",
                self.buffer.len(),
                self.buffer.capacity
            ));
        }
        for e in &self.buffer.entries {
            match self.labeled.get(&e.frame_id) {
                Some(l)
                    if l.source == LabelSource::User && l.label == e.true_label && e.model_label != e.true_label => {}
                _ => return Err(format!("buffer entry {} is not a recorded correction", e.frame_id)),
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("session state serializes")
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self, LoopError> {
        let state: Self = serde_json::from_slice(bytes).map_err(|e| LoopError::Checkpoint(e.to_string()))?;
        if state.format != CHECKPOINT_FORMAT || state.version != CHECKPOINT_VERSION {
            return Err(LoopError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                state.format, state.version
            )));
        }
        Ok(state)
    }

    /// Write via a temporary file and rename, so a crash never leaves a
    /// partial checkpoint.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LoopError> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        let io = |e: std::io::Error| LoopError::Checkpoint(e.to_string());
        std::fs::write(&tmp, self.to_checkpoint()).map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LoopError> {
        let bytes = std::fs::read(path).map_err(|e| LoopError::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(&bytes)
    }
}

/// Feature rows of training frames labelled `class`, and of all others.
fn training_rows<'a>(
    data: &'a LoopData,
    labeled: &LabelMap,
    class: CoupletLabel,
    reviewed: bool,
) -> (Vec<&'a [f64]>, Vec<&'a [f64]>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (&id, l) in labeled
        .iter()
        .filter(|(_, l)| reviewed || l.source == LabelSource::User)
    {
        if let Some(x) = data.features(id) {
            if l.label == class {
                pos.push(x);
            } else {
                neg.push(x);
            }
        }
    }
    (pos, neg)
}
