//! Request and response bodies. Couplet labels travel as their display
//! strings, e.g. `"QPSK/SharpMedium"`.

use iqal_core::active::{LoopConfig, ReviewOutcome, SessionReport};
use serde::{Deserialize, Serialize};

/// Externally visible session status.
///
/// ```text
/// bootstrapping <-> awaiting_review -> complete
///        \              /
///         +- paused ---+        (training: transient, during a submission)
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Bootstrapping,
    AwaitingReview,
    Training,
    Complete,
    Paused,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct CreateSessionRequest {
    /// Stem of a `.iqds` file in the dataset directory.
    pub dataset: String,
    #[serde(default)]
    pub config: LoopConfig,
    #[serde(default)]
    pub seed: u64,
    /// Stratify bootstrap draws by the dataset's ground truth. Off by
    /// default: a live session should not peek at labels.
    #[serde(default)]
    pub stratify: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub model_labelled: usize,
    pub user_labelled: usize,
    pub pool_remaining: usize,
    pub buffer_fill: usize,
    pub buffer_capacity: usize,
    pub restarts: usize,
    pub retrains: usize,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHandle {
    pub session_id: String,
    pub status: SessionStatus,
    pub progress: Progress,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkKind {
    Bootstrap,
    Review,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkItem {
    pub frame_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    /// Decimated `[i, q]` pairs for a scatter plot.
    pub constellation: Vec<[f32; 2]>,
    /// Path of the frame's 224x224 PGM spectrogram on this server.
    pub spectrogram: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkResponse {
    pub session_id: String,
    pub status: SessionStatus,
    pub kind: WorkKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page_index: Option<usize>,
    pub items: Vec<WorkItem>,
    /// Labels the UI offers; anything else declares a new class.
    pub couplets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub frame_id: u64,
    pub label: String,
}

/// During bootstrap every outstanding frame must be labelled. During
/// review only corrections are sent; omitted items accept the model label.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub labels: Vec<Submission>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeView {
    pub incorrect: usize,
    pub flushed: bool,
    pub restarted: bool,
    pub new_classes: Vec<String>,
}

impl From<&ReviewOutcome> for OutcomeView {
    fn from(o: &ReviewOutcome) -> Self {
        Self {
            incorrect: o.incorrect,
            flushed: o.flushed,
            restarted: o.restarted,
            new_classes: o.new_classes.iter().map(|c| c.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub session_id: String,
    pub status: SessionStatus,
    pub progress: Progress,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<OutcomeView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusResponse {
    pub session_id: String,
    pub dataset: String,
    pub status: SessionStatus,
    /// Loop phase behind the status, e.g. `awaiting_bootstrap`.
    pub phase: String,
    pub progress: Progress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportResponse {
    pub session_id: String,
    pub status: SessionStatus,
    /// `100 * model_labelled / total`, two decimals.
    pub model_label_percent: String,
    pub report: SessionReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}
