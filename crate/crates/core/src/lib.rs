//! Real-time couplet labelling of radio frames with a buffer-driven active
//! learning loop, and the KNN / Gaussian naive Bayes / RBF-SVM baselines it
//! is compared against.
//!
//! The pipeline runs left to right:
//!
//! - [`synth`] generates seeded I/Q frames for (modulation, signal class)
//!   couplets over an SNR sweep.
//! - [`features`] turns a frame into a fixed-length statistic vector (and a
//!   224x224 spectrogram for display).
//! - [`classifiers`] holds the from-scratch models.
//! - [`active`] is the labelling session as a resumable state machine, fed by
//!   an [`oracle`].
//! - [`metrics`] summarizes sessions and sweeps and writes the CSV artifacts.
//!
//! All randomness flows from explicit `u64` seeds through [`rng`], so every
//! result here is reproducible bit for bit.

pub mod active;
pub mod classifiers;
pub mod features;
pub mod metrics;
pub mod oracle;
pub mod rng;
pub mod synth;

pub use active::{run_session, LoopConfig, LoopData, SelectionPolicy, SessionReport, SessionState};
pub use classifiers::{Label, LabeledPoint, OvaEnsemble, ScorerConfig};
pub use features::{FeatureVector, ImageGrid, FEATURE_DIM};
pub use oracle::{Oracle, OracleRequest, OracleResponse, SimulatedOracle};
pub use synth::{build_dataset, CoupletLabel, Dataset, DatasetSpec, IQFrame, ModScheme, SignalClass};
