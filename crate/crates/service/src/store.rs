//! Session registry. Each session is a single-writer slot behind a mutex;
//! a separately locked snapshot serves status reads without waiting on a
//! submission that is busy retraining.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use iqal_core::active::{LabelSource, LoopData, Phase, SessionState};
use iqal_core::features::rasterize;
use iqal_core::oracle::AuditLog;
use iqal_core::synth::{CoupletLabel, Dataset, REGISTERED_COUPLETS};
use serde::{Deserialize, Serialize};

use crate::api::{
    CreateSessionRequest, OutcomeView, Progress, SessionStatus, StatusResponse, Submission, SubmitResponse, WorkItem,
    WorkKind, WorkResponse,
};
use crate::error::ApiError;

pub const DATASET_EXTENSION: &str = "iqds";
const RECORD_FORMAT: &str = "iqal-service-session";
const RECORD_VERSION: u32 = 1;
/// Upper bound on constellation points per work item.
const CONSTELLATION_POINTS: usize = 256;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub dataset_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    /// Idle time with work outstanding after which a session reads as paused.
    pub lease_timeout: Duration,
}

impl ServiceConfig {
    pub fn new(dataset_dir: impl Into<PathBuf>, checkpoint_dir: impl Into<PathBuf>) -> Self {
        Self {
            dataset_dir: dataset_dir.into(),
            checkpoint_dir: checkpoint_dir.into(),
            lease_timeout: Duration::from_secs(30 * 60),
        }
    }
}

struct LoadedDataset {
    dataset: Dataset,
    index: HashMap<u64, usize>,
    /// Features standardized over the whole set, with ground-truth strata.
    data: LoopData,
}

/// Checkpoint file body: the loop state plus what is needed to rebuild the
/// slot around it.
#[derive(Serialize, Deserialize)]
struct SessionRecord {
    format: String,
    version: u32,
    session_id: String,
    dataset: String,
    stratify: bool,
    paused: bool,
    state: SessionState,
}

struct Slot {
    id: String,
    dataset_name: String,
    dataset: Arc<LoadedDataset>,
    /// The dataset's features, stripped of strata unless requested.
    data: Arc<LoopData>,
    stratify: bool,
    state: SessionState,
    audit: AuditLog,
    paused: bool,
}

#[derive(Clone)]
struct Snapshot {
    base: SessionStatus,
    phase: &'static str,
    progress: Progress,
    paused: bool,
    last_activity: Instant,
}

pub struct SessionEntry {
    dataset: String,
    slot: Mutex<Slot>,
    snapshot: RwLock<Snapshot>,
    training: AtomicBool,
}

pub struct App {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<SessionEntry>>>,
    datasets: Mutex<HashMap<String, Arc<LoadedDataset>>>,
}

fn base_status(phase: &Phase) -> SessionStatus {
    match phase {
        Phase::NeedsBootstrap | Phase::AwaitingBootstrap { .. } => SessionStatus::Bootstrapping,
        Phase::Ready | Phase::AwaitingReview { .. } => SessionStatus::AwaitingReview,
        Phase::Complete => SessionStatus::Complete,
    }
}

fn progress(state: &SessionState) -> Progress {
    Progress {
        total: state.total(),
        model_labelled: state.count(LabelSource::Model),
        user_labelled: state.count(LabelSource::User),
        pool_remaining: state.pool().len(),
        buffer_fill: state.buffer().len(),
        buffer_capacity: state.buffer().capacity,
        restarts: state.restarts(),
        retrains: state.retrains(),
        iteration: state.iteration(),
    }
}

fn parse_label(s: &str) -> Result<CoupletLabel, ApiError> {
    s.parse().map_err(|e| ApiError::invalid(format!("label {s:?}: {e}")))
}

/// Write via a synced temporary file and rename, so the checkpoint on disk
/// is always either the old or the new one.
fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("json.tmp");
    let mut f = std::fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    std::fs::rename(&tmp, path)
}

impl Slot {
    fn snapshot(&self) -> Snapshot {
        Snapshot {
            base: base_status(self.state.phase()),
            phase: self.state.phase().name(),
            progress: progress(&self.state),
            paused: self.paused,
            last_activity: Instant::now(),
        }
    }

    fn checkpoint(&self, dir: &Path) -> Result<(), ApiError> {
        let record = SessionRecord {
            format: RECORD_FORMAT.to_string(),
            version: RECORD_VERSION,
            session_id: self.id.clone(),
            dataset: self.dataset_name.clone(),
            stratify: self.stratify,
            paused: self.paused,
            state: self.state.clone(),
        };
        let bytes = serde_json::to_vec(&record).map_err(|e| ApiError::internal(e.to_string()))?;
        write_atomic(&dir.join(format!("{}.json", self.id)), &bytes)
            .map_err(|e| ApiError::internal(format!("checkpoint: {e}")))
    }

    fn work_item(&self, frame_id: u64, session_id: &str) -> WorkItem {
        let constellation = match self.dataset.index.get(&frame_id) {
            Some(&i) => {
                let s = &self.dataset.dataset.frames[i].samples;
                let step = s.len().div_ceil(CONSTELLATION_POINTS).max(1);
                s.iter().step_by(step).map(|c| [c.re as f32, c.im as f32]).collect()
            }
            None => Vec::new(),
        };
        WorkItem {
            frame_id,
            model_label: None,
            confidence: None,
            margin: None,
            constellation,
            spectrogram: format!("/sessions/{session_id}/frames/{frame_id}/spectrogram"),
        }
    }
}

impl SessionEntry {
    fn status_at(&self, lease: Duration) -> (SessionStatus, Snapshot) {
        let snap = self.snapshot.read().expect("snapshot lock").clone();
        let status = if self.training.load(Ordering::SeqCst) {
            SessionStatus::Training
        } else if snap.base == SessionStatus::Complete {
            SessionStatus::Complete
        } else if snap.paused || snap.last_activity.elapsed() > lease {
            SessionStatus::Paused
        } else {
            snap.base
        };
        (status, snap)
    }

    fn publish(&self, slot: &Slot) {
        *self.snapshot.write().expect("snapshot lock") = slot.snapshot();
    }
}

impl App {
    /// Open the registry, resuming every session checkpointed in
    /// `config.checkpoint_dir`.
    pub fn open(config: ServiceConfig) -> Result<Self, ApiError> {
        std::fs::create_dir_all(&config.checkpoint_dir)
            .map_err(|e| ApiError::internal(format!("checkpoint dir: {e}")))?;
        let app = Self {
            config,
            sessions: RwLock::new(HashMap::new()),
            datasets: Mutex::new(HashMap::new()),
        };
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&app.config.checkpoint_dir)
            .map_err(|e| ApiError::internal(e.to_string()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for path in paths {
            let bytes = std::fs::read(&path).map_err(|e| ApiError::internal(e.to_string()))?;
            let record: SessionRecord =
                serde_json::from_slice(&bytes).map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))?;
            if record.format != RECORD_FORMAT || record.version != RECORD_VERSION {
                return Err(ApiError::internal(format!(
                    "{}: unsupported checkpoint",
                    path.display()
                )));
            }
            let dataset = app.dataset(&record.dataset)?;
            let slot = app.make_slot(
                record.session_id,
                record.dataset,
                dataset,
                record.stratify,
                record.state,
            )?;
            let slot = Slot {
                paused: record.paused,
                ..slot
            };
            app.insert(slot);
        }
        Ok(app)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().expect("registry lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    fn dataset(&self, name: &str) -> Result<Arc<LoadedDataset>, ApiError> {
        let valid = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
        if !valid || name.starts_with('.') {
            return Err(ApiError::unknown_dataset(name));
        }
        if let Some(d) = self.datasets.lock().expect("dataset cache").get(name) {
            return Ok(d.clone());
        }
        let path = self.config.dataset_dir.join(format!("{name}.{DATASET_EXTENSION}"));
        if !path.is_file() {
            return Err(ApiError::unknown_dataset(name));
        }
        let dataset = Dataset::load(&path).map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))?;
        let data = LoopData::from_dataset(&dataset, true)?;
        let index = dataset.frames.iter().enumerate().map(|(i, f)| (f.id, i)).collect();
        let loaded = Arc::new(LoadedDataset { dataset, index, data });
        self.datasets
            .lock()
            .expect("dataset cache")
            .insert(name.to_string(), loaded.clone());
        Ok(loaded)
    }

    fn make_slot(
        &self,
        id: String,
        dataset_name: String,
        dataset: Arc<LoadedDataset>,
        stratify: bool,
        state: SessionState,
    ) -> Result<Slot, ApiError> {
        let data = if stratify {
            dataset.data.clone()
        } else {
            dataset.data.clone().without_strata()
        };
        let audit_path = self.config.checkpoint_dir.join(format!("{id}.audit.jsonl"));
        let audit = AuditLog::open_append(&audit_path).map_err(|e| ApiError::internal(format!("audit log: {e}")))?;
        Ok(Slot {
            id,
            dataset_name,
            dataset,
            data: Arc::new(data),
            stratify,
            state,
            audit,
            paused: false,
        })
    }

    fn insert(&self, slot: Slot) -> Arc<SessionEntry> {
        let entry = Arc::new(SessionEntry {
            dataset: slot.dataset_name.clone(),
            snapshot: RwLock::new(slot.snapshot()),
            slot: Mutex::new(slot),
            training: AtomicBool::new(false),
        });
        let id = entry.slot.lock().expect("slot lock").id.clone();
        self.sessions.write().expect("registry lock").insert(id, entry.clone());
        entry
    }

    fn entry(&self, id: &str) -> Result<Arc<SessionEntry>, ApiError> {
        self.sessions
            .read()
            .expect("registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("session {id:?} not found")))
    }

    pub fn create(&self, req: CreateSessionRequest) -> Result<crate::api::SessionHandle, ApiError> {
        let dataset = self.dataset(&req.dataset)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let state = SessionState::new(&dataset.data, req.config, req.seed)?;
        let slot = self.make_slot(id.clone(), req.dataset, dataset, req.stratify, state)?;
        slot.checkpoint(&self.config.checkpoint_dir)?;
        let entry = self.insert(slot);
        let (status, snap) = entry.status_at(self.config.lease_timeout);
        Ok(crate::api::SessionHandle {
            session_id: id,
            status,
            progress: snap.progress,
        })
    }

    pub fn status(&self, id: &str) -> Result<StatusResponse, ApiError> {
        let entry = self.entry(id)?;
        let (status, snap) = entry.status_at(self.config.lease_timeout);
        if status == SessionStatus::Paused && !snap.paused {
            // first observation of an expired lease: persist the pause
            if let Ok(mut slot) = entry.slot.try_lock() {
                slot.paused = true;
                slot.checkpoint(&self.config.checkpoint_dir)?;
                entry.snapshot.write().expect("snapshot lock").paused = true;
            }
        }
        Ok(StatusResponse {
            session_id: id.to_string(),
            dataset: entry.dataset.clone(),
            status,
            phase: snap.phase.to_string(),
            progress: snap.progress,
        })
    }

    /// Outstanding work, drawing a bootstrap batch or predicting a page
    /// first if none is outstanding. Repeated calls return the same work.
    pub fn work(&self, id: &str) -> Result<WorkResponse, ApiError> {
        let entry = self.entry(id)?;
        let mut slot = entry.slot.lock().expect("slot lock");
        let before = slot.state.clone();
        let data = slot.data.clone();
        match slot.state.phase() {
            Phase::Complete => return Err(ApiError::wrong_state("session is complete")),
            Phase::NeedsBootstrap => {
                slot.state.begin_bootstrap(&data)?;
            }
            Phase::Ready => {
                slot.state.predict_page(&data)?;
            }
            Phase::AwaitingBootstrap { .. } | Phase::AwaitingReview { .. } => {}
        }
        let resumed = std::mem::replace(&mut slot.paused, false);
        if slot.state.phase() != before.phase() || resumed {
            if let Err(e) = slot.checkpoint(&self.config.checkpoint_dir) {
                slot.state = before;
                slot.paused = resumed;
                return Err(e);
            }
        }
        entry.publish(&slot);

        let (kind, page_index, items) = match slot.state.phase() {
            Phase::AwaitingBootstrap { frame_ids } => {
                let items = frame_ids.iter().map(|&f| slot.work_item(f, id)).collect();
                (WorkKind::Bootstrap, None, items)
            }
            Phase::AwaitingReview { page } => {
                let items = page
                    .items
                    .iter()
                    .map(|p| WorkItem {
                        model_label: Some(p.model_label.to_string()),
                        confidence: Some(p.confidence),
                        margin: Some(p.margin),
                        ..slot.work_item(p.frame_id, id)
                    })
                    .collect();
                (WorkKind::Review, Some(page.index), items)
            }
            _ => unreachable!("work leaves the session awaiting labels"),
        };
        Ok(WorkResponse {
            session_id: id.to_string(),
            status: base_status(slot.state.phase()),
            kind,
            page_index,
            items,
            couplets: REGISTERED_COUPLETS.iter().map(|c| c.to_string()).collect(),
        })
    }

    /// Apply labels to the outstanding work. The checkpoint is on disk
    /// before this returns; on any error the session is unchanged.
    pub fn submit(&self, id: &str, labels: &[Submission]) -> Result<SubmitResponse, ApiError> {
        let entry = self.entry(id)?;
        let mut slot = entry.slot.lock().expect("slot lock");
        let parsed: Vec<(u64, CoupletLabel)> = labels
            .iter()
            .map(|s| Ok((s.frame_id, parse_label(&s.label)?)))
            .collect::<Result<_, ApiError>>()?;
        let data = slot.data.clone();
        let before = slot.state.clone();

        entry.training.store(true, Ordering::SeqCst);
        let result = match slot.state.phase() {
            Phase::AwaitingBootstrap { .. } => slot.state.complete_bootstrap(&data, &parsed).map(|()| None),
            Phase::AwaitingReview { .. } => slot.state.review_page(&data, &parsed).map(Some),
            other => Err(iqal_core::active::LoopError::WrongPhase {
                expected: "awaiting_bootstrap or awaiting_review",
                actual: other.name(),
            }),
        };
        entry.training.store(false, Ordering::SeqCst);
        let outcome = result?;

        slot.paused = false;
        if let Err(e) = slot.checkpoint(&self.config.checkpoint_dir) {
            slot.state = before;
            return Err(e);
        }
        self.audit(&mut slot, &before, &parsed)?;
        entry.publish(&slot);
        let (status, snap) = entry.status_at(self.config.lease_timeout);
        Ok(SubmitResponse {
            session_id: id.to_string(),
            status,
            progress: snap.progress,
            outcome: outcome.as_ref().map(OutcomeView::from),
        })
    }

    /// One audit line per label the submission finalized, accepted model
    /// labels included.
    fn audit(&self, slot: &mut Slot, before: &SessionState, parsed: &[(u64, CoupletLabel)]) -> Result<(), ApiError> {
        let io = |e: std::io::Error| ApiError::internal(format!("audit log: {e}"));
        match before.phase() {
            Phase::AwaitingBootstrap { .. } => {
                for &(f, l) in parsed {
                    slot.audit.record(f, l, "user_bootstrap").map_err(io)?;
                }
            }
            Phase::AwaitingReview { page } => {
                for item in &page.items {
                    match parsed.iter().find(|(f, _)| *f == item.frame_id) {
                        Some(&(f, l)) if l != item.model_label => slot.audit.record(f, l, "user_correction"),
                        _ => slot.audit.record(item.frame_id, item.model_label, "user_accept"),
                    }
                    .map_err(io)?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn report(&self, id: &str) -> Result<crate::api::ReportResponse, ApiError> {
        let entry = self.entry(id)?;
        let (status, _) = entry.status_at(self.config.lease_timeout);
        let slot = entry.slot.lock().expect("slot lock");
        let report = slot.state.report();
        let pct = iqal_core::metrics::model_label_ratio(&report)
            .map(iqal_core::metrics::format_percent)
            .map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(crate::api::ReportResponse {
            session_id: id.to_string(),
            status,
            model_label_percent: pct,
            report,
        })
    }

    /// PGM spectrogram of a frame in the session's dataset.
    pub fn spectrogram(&self, id: &str, frame_id: u64) -> Result<Vec<u8>, ApiError> {
        let entry = self.entry(id)?;
        let dataset = entry.slot.lock().expect("slot lock").dataset.clone();
        let &i = dataset
            .index
            .get(&frame_id)
            .ok_or_else(|| ApiError::not_found(format!("frame {frame_id} not in dataset")))?;
        let grid = rasterize(&dataset.dataset.frames[i]).map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(grid.to_pgm())
    }
}
