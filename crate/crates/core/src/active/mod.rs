//! Buffer-enabled active labelling as a resumable state machine.
//!
//! A session alternates between user-labelled bootstrap batches and pages of
//! model-labelled frames that the user reviews. Corrections accumulate in a
//! buffer; when it overflows, the ensemble is retrained on all user labels
//! with the most informative corrections emphasised. A page with too many
//! corrections sends the session back to bootstrapping on what remains.
//!
//! Phase graph:
//!
//! ```text
//! NeedsBootstrap -> AwaitingBootstrap -> Ready -> AwaitingReview -> Ready
//!       ^                    |                          |
//!       +---- restart -------+--------------------------+
//!                            v                          v
//!                         Complete  <-------------------+
//! ```

mod data;
mod session;

use serde::{Deserialize, Serialize};

use crate::classifiers::{ClassifierError, ScorerConfig};
use crate::features::FeatureError;
use crate::oracle::{Oracle, OracleError};
use crate::synth::CoupletLabel;

pub use data::LoopData;
pub use session::{ReviewOutcome, SessionState, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    /// Smallest gap between the two best scores when buffered.
    Margin,
    /// Highest score entropy when buffered.
    Entropy,
    Random,
}

impl std::str::FromStr for SelectionPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "margin" => Ok(Self::Margin),
            "entropy" => Ok(Self::Entropy),
            "random" => Ok(Self::Random),
            _ => Err(format!("unknown selection policy {s:?}")),
        }
    }
}

/// Missing fields take their defaults when deserialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub page_size: usize,
    /// A page with strictly more corrections than this triggers a restart.
    pub restart_threshold: usize,
    /// The buffer is flushed once it holds strictly more entries than this.
    pub buffer_capacity: usize,
    pub bootstrap_count: usize,
    pub selection_policy: SelectionPolicy,
    /// Buffered entries emphasised per flush.
    pub flush_select: usize,
    /// Copies of each emphasised entry in the retraining set.
    pub duplicate_factor: usize,
    pub max_iterations: usize,
    pub scorer: ScorerConfig,
    /// Retrain on model labels that survived review as well as on user
    /// labels. A reviewed page is fully checked by the user, so its accepted
    /// model labels are as trustworthy as corrections.
    pub train_on_reviewed: bool,
    /// Record wall-clock training time. Off by default so reports are
    /// reproducible byte for byte.
    pub record_wall_time: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            page_size: 30,
            restart_threshold: 15,
            buffer_capacity: 60,
            bootstrap_count: 30,
            selection_policy: SelectionPolicy::Margin,
            flush_select: 30,
            duplicate_factor: 2,
            max_iterations: 10_000,
            scorer: ScorerConfig::logistic(),
            train_on_reviewed: true,
            record_wall_time: false,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), LoopError> {
        let bad = |m: &str| Err(LoopError::InvalidConfig(m.to_string()));
        if self.page_size == 0 {
            return bad("page_size must be >= 1");
        }
        if self.restart_threshold > self.page_size {
            return bad("restart_threshold must be <= page_size");
        }
        if self.buffer_capacity == 0 {
            return bad("buffer_capacity must be >= 1");
        }
        if self.bootstrap_count == 0 {
            return bad("bootstrap_count must be >= 1");
        }
        if self.flush_select == 0 {
            return bad("flush_select must be >= 1");
        }
        if self.duplicate_factor == 0 {
            return bad("duplicate_factor must be >= 1");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoopError {
    #[error("invalid loop config: {0}")]
    InvalidConfig(String),
    #[error("pool has {pool} frames, bootstrap needs {needed}")]
    PoolTooSmall { pool: usize, needed: usize },
    #[error("operation needs phase {expected}, session is {actual}")]
    WrongPhase {
        expected: &'static str,
        actual: &'static str,
    },
    #[error("frame {0} is not part of the outstanding work")]
    NotOutstanding(u64),
    #[error("frame {0} submitted twice")]
    DuplicateSubmission(u64),
    #[error("{0} outstanding frames have no label")]
    MissingLabels(usize),
    #[error("dataset is empty")]
    EmptyData,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    User,
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalLabel {
    pub label: CoupletLabel,
    pub source: LabelSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageItem {
    pub frame_id: u64,
    pub model_label: CoupletLabel,
    pub confidence: f64,
    pub margin: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub index: usize,
    pub items: Vec<PageItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub frame_id: u64,
    pub model_label: CoupletLabel,
    pub true_label: CoupletLabel,
    pub margin: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionBuffer {
    pub entries: Vec<BufferEntry>,
    pub capacity: usize,
}

impl CorrectionBuffer {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn overflowing(&self) -> bool {
        self.entries.len() > self.capacity
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum Phase {
    NeedsBootstrap,
    AwaitingBootstrap { frame_ids: Vec<u64> },
    Ready,
    AwaitingReview { page: Page },
    Complete,
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::NeedsBootstrap => "needs_bootstrap",
            Phase::AwaitingBootstrap { .. } => "awaiting_bootstrap",
            Phase::Ready => "ready",
            Phase::AwaitingReview { .. } => "awaiting_review",
            Phase::Complete => "complete",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainKind {
    Bootstrap,
    Flush,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRound {
    /// 1-based.
    pub round: usize,
    pub kind: TrainKind,
    /// Rows in the training set, duplicates included.
    pub samples: usize,
    pub seconds: Option<f64>,
}

/// One reviewed page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: usize,
    pub page_len: usize,
    pub correct: usize,
    pub incorrect: usize,
    /// Model-labelled frames finalized on this page.
    pub model_labelled: usize,
    /// User labels since the previous page: bootstrap batches plus this
    /// page's corrections.
    pub user_labelled: usize,
    /// Buffer size after any flush.
    pub buffer_size: usize,
    pub flushed: bool,
    pub restarted: bool,
    /// Training rounds run since the previous page.
    pub train_samples: usize,
    pub train_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub total: usize,
    pub model_labelled: usize,
    pub user_labelled: usize,
    /// `model_labelled / total`.
    pub model_label_ratio: f64,
    pub iterations: usize,
    pub restarts: usize,
    pub retrains: usize,
    /// False when `max_iterations` ran out with frames still in the pool.
    pub complete: bool,
    pub records: Vec<IterationRecord>,
    pub train_rounds: Vec<TrainRound>,
}

/// Drive a fresh session to completion against `oracle`.
pub fn run_session(
    data: &LoopData,
    config: LoopConfig,
    seed: u64,
    oracle: &mut dyn Oracle,
) -> Result<SessionReport, LoopError> {
    let mut state = SessionState::new(data, config, seed)?;
    while !state.is_finished() {
        state.step(data, oracle)?;
    }
    Ok(state.report())
}

/// Final labels of a finished session, for callers that need them.
pub type LabelMap = std::collections::BTreeMap<u64, FinalLabel>;
