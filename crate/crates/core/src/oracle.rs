//! Labelling authorities: a seeded simulated annotator and a channel-backed
//! bridge to a human answering through some other thread.

use std::collections::HashMap;
use std::io::Write;
use std::sync::mpsc::{Receiver, RecvTimeoutError, Sender};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, rng_from_seed};
use crate::synth::{CoupletLabel, Dataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRequest {
    pub frame_id: u64,
    /// The model's label; absent while bootstrapping.
    pub proposed: Option<CoupletLabel>,
    /// Rendering hint for interactive annotators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResponse {
    pub frame_id: u64,
    pub label: CoupletLabel,
    pub latency_seconds: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("frame {0} is not known to the oracle")]
    UnknownFrame(u64),
    #[error("no answer for frame {frame_id} within {timeout:?}")]
    Timeout { frame_id: u64, timeout: Duration },
    #[error("oracle channel closed")]
    Disconnected,
    #[error("answer for frame {got} while waiting on {expected}")]
    OutOfOrder { expected: u64, got: u64 },
    #[error("error rate {0} outside [0, 1]")]
    InvalidErrorRate(f64),
    #[error("audit log: {0}")]
    Audit(#[from] std::io::Error),
}

/// Exactly one response per request.
pub trait Oracle {
    fn label(&mut self, req: &OracleRequest) -> Result<OracleResponse, OracleError>;
}

/// Answers with ground truth, replaced with probability `error_rate` by a
/// uniformly chosen different couplet.
///
/// Each frame's draw comes from its own stream `derive_seed(seed, frame_id)`,
/// so answers do not depend on query order and a frame asked twice gets the
/// same answer.
#[derive(Debug, Clone)]
pub struct SimulatedOracle {
    truth: HashMap<u64, CoupletLabel>,
    classes: Vec<CoupletLabel>,
    error_rate: f64,
    seed: u64,
}

impl SimulatedOracle {
    pub fn new(
        truth: HashMap<u64, CoupletLabel>,
        classes: Vec<CoupletLabel>,
        error_rate: f64,
        seed: u64,
    ) -> Result<Self, OracleError> {
        if !(0.0..=1.0).contains(&error_rate) {
            return Err(OracleError::InvalidErrorRate(error_rate));
        }
        let mut classes = classes;
        classes.sort();
        classes.dedup();
        Ok(Self {
            truth,
            classes,
            error_rate,
            seed,
        })
    }

    /// Wrong answers are drawn from the dataset's couplet list.
    pub fn from_dataset(dataset: &Dataset, error_rate: f64, seed: u64) -> Result<Self, OracleError> {
        let truth = dataset.frames.iter().map(|f| (f.id, f.truth)).collect();
        Self::new(truth, dataset.spec.couplets.clone(), error_rate, seed)
    }

    pub fn error_rate(&self) -> f64 {
        self.error_rate
    }

    pub fn answer(&self, frame_id: u64) -> Result<CoupletLabel, OracleError> {
        let truth = *self.truth.get(&frame_id).ok_or(OracleError::UnknownFrame(frame_id))?;
        let mut rng = rng_from_seed(derive_seed(self.seed, frame_id));
        let u: f64 = rng.random();
        let wrong: Vec<&CoupletLabel> = self.classes.iter().filter(|&&c| c != truth).collect();
        if u < self.error_rate && !wrong.is_empty() {
            Ok(*wrong[rng.random_range(0..wrong.len())])
        } else {
            Ok(truth)
        }
    }
}

impl Oracle for SimulatedOracle {
    fn label(&mut self, req: &OracleRequest) -> Result<OracleResponse, OracleError> {
        Ok(OracleResponse {
            frame_id: req.frame_id,
            label: self.answer(req.frame_id)?,
            latency_seconds: 0.0,
        })
    }
}

/// One line of the append-only audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
    pub frame_id: u64,
    pub label: CoupletLabel,
    pub source: String,
}

pub struct AuditLog {
    out: Box<dyn Write + Send>,
}

impl AuditLog {
    pub fn new(out: impl Write + Send + 'static) -> Self {
        Self { out: Box::new(out) }
    }

    pub fn open_append(path: impl AsRef<std::path::Path>) -> std::io::Result<Self> {
        let f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self::new(f))
    }

    pub fn record(&mut self, frame_id: u64, label: CoupletLabel, source: &str) -> std::io::Result<()> {
        let entry = AuditEntry {
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0.0, |d| d.as_secs_f64()),
            frame_id,
            label,
            source: source.to_string(),
        };
        let mut line = serde_json::to_vec(&entry).map_err(std::io::Error::other)?;
        line.push(b'\n');
        self.out.write_all(&line)?;
        self.out.flush()
    }
}

/// Forwards each request over a channel and blocks for the matching answer.
pub struct ChannelOracle {
    requests: Sender<OracleRequest>,
    answers: Receiver<(u64, CoupletLabel)>,
    timeout: Duration,
    audit: Option<AuditLog>,
}

impl ChannelOracle {
    pub fn new(
        requests: Sender<OracleRequest>,
        answers: Receiver<(u64, CoupletLabel)>,
        timeout: Duration,
        audit: Option<AuditLog>,
    ) -> Self {
        Self {
            requests,
            answers,
            timeout,
            audit,
        }
    }
}

impl Oracle for ChannelOracle {
    fn label(&mut self, req: &OracleRequest) -> Result<OracleResponse, OracleError> {
        let start = Instant::now();
        self.requests.send(req.clone()).map_err(|_| OracleError::Disconnected)?;
        let (frame_id, label) = match self.answers.recv_timeout(self.timeout) {
            Ok(a) => a,
            Err(RecvTimeoutError::Timeout) => {
                return Err(OracleError::Timeout {
                    frame_id: req.frame_id,
                    timeout: self.timeout,
                })
            }
            Err(RecvTimeoutError::Disconnected) => return Err(OracleError::Disconnected),
        };
        if frame_id != req.frame_id {
            return Err(OracleError::OutOfOrder {
                expected: req.frame_id,
                got: frame_id,
            });
        }
        if let Some(log) = &mut self.audit {
            log.record(frame_id, label, "human")?;
        }
        Ok(OracleResponse {
            frame_id,
            label,
            latency_seconds: start.elapsed().as_secs_f64(),
        })
    }
}
