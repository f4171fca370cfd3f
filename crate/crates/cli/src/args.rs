use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use iqal_core::active::SelectionPolicy;
use iqal_core::metrics::ClassifierKind;

#[derive(Debug, Parser)]
#[command(
    name = "iqal",
    version,
    about = "Synthetic I/Q datasets, modulation classifiers and active labelling sessions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic I/Q dataset
    GenData(GenDataArgs),
    /// Sweep KNN, naive Bayes and SVM over SNR and report accuracy and model size
    EvalClassifiers(EvalArgs),
    /// Run one labelling session against a simulated oracle
    LabelSession(SessionArgs),
    /// Serve labelling sessions over HTTP/JSON
    Serve(ServeArgs),
    /// Re-render session CSVs from a checkpoint
    Report(ReportArgs),
}

/// Dataset shape, shared by every subcommand that synthesizes frames.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// SNR grid in dB: start:step:end, a comma list, or a single value
    #[arg(long, value_name = "RANGE", value_parser = parse_snr)]
    pub snr: Option<SnrList>,
    /// Frames per couplet per SNR
    #[arg(long, value_name = "N")]
    pub frames: Option<usize>,
    /// Frames per SNR spread over all couplets, instead of --frames
    #[arg(long, value_name = "N", conflicts_with = "frames")]
    pub frames_per_snr: Option<usize>,
    /// Complex samples per frame
    #[arg(long, value_name = "N", default_value_t = 1024)]
    pub frame_len: usize,
    /// Master seed for everything the run draws at random
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Evaluate a saved dataset instead of generating one
    #[arg(long, value_name = "FILE", conflicts_with_all = ["snr", "frames", "frames_per_snr"])]
    pub dataset: Option<PathBuf>,
    /// Classifiers to evaluate, comma separated
    #[arg(long, value_name = "LIST", value_delimiter = ',', default_value = "knn,nb,svm")]
    pub classifiers: Vec<ClassifierKind>,
    /// Seed of the stratified train/test split
    #[arg(long, value_name = "SEED", default_value_t = 7)]
    pub split_seed: u64,
    /// Fraction of each couplet held out for testing
    #[arg(long, value_name = "F", default_value_t = 0.3)]
    pub test_fraction: f64,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Timing {
    /// Report training time as NA (reproducible output)
    Off,
    /// Measure wall-clock training time
    Wall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scorer {
    Logistic,
    Svm,
}

#[derive(Debug, Args)]
pub struct SessionArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Label a saved dataset instead of generating one
    #[arg(long, value_name = "FILE", conflicts_with_all = ["snr", "frames", "frames_per_snr"])]
    pub dataset: Option<PathBuf>,
    /// Loop configuration as JSON; the flags below override its fields
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Probability that the simulated oracle answers with a wrong couplet
    #[arg(long, value_name = "P", default_value_t = 0.0)]
    pub error_rate: f64,
    /// Items per review page
    #[arg(long, value_name = "N")]
    pub page_size: Option<usize>,
    /// Restart when a page has more corrections than this
    #[arg(long, value_name = "N")]
    pub restart_threshold: Option<usize>,
    /// Retrain when the correction buffer holds more entries than this
    #[arg(long, value_name = "N")]
    pub buffer_capacity: Option<usize>,
    /// Frames labelled by the user before the first model is trained
    #[arg(long, value_name = "N")]
    pub bootstrap: Option<usize>,
    /// How buffered corrections are ranked for retraining: margin, entropy or random
    #[arg(long, value_name = "POLICY", value_parser = parse_policy)]
    pub policy: Option<SelectionPolicy>,
    /// One-vs-all scorer family
    #[arg(long, value_enum)]
    pub scorer: Option<Scorer>,
    /// Training-time measurement
    #[arg(long, value_enum, default_value_t = Timing::Off)]
    pub timing: Timing,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Listen address
    #[arg(long, env = "IQAL_LISTEN", default_value = "127.0.0.1:8080")]
    pub listen: SocketAddr,
    /// Directory of .iqds datasets, addressed by file stem
    #[arg(long, env = "IQAL_DATASETS", value_name = "DIR")]
    pub datasets: PathBuf,
    /// Directory for session checkpoints and audit logs
    #[arg(long, env = "IQAL_CHECKPOINTS", value_name = "DIR")]
    pub checkpoints: PathBuf,
    /// Idle seconds before a session with outstanding work reads as paused
    #[arg(long, env = "IQAL_LEASE_SECS", value_name = "SECS", default_value_t = 1800)]
    pub lease_secs: u64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Session checkpoint from label-session or the service
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnrList(pub Vec<f64>);

/// `start:step:end` (inclusive), `a,b,c`, or one value.
pub fn parse_snr(s: &str) -> Result<SnrList, String> {
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("{t:?} is not a number"))
    };
    let parts: Vec<&str> = s.split(':').collect();
    let values = match parts.as_slice() {
        [one] => one.split(',').map(num).collect::<Result<Vec<_>, _>>()?,
        [start, step, end] => {
            let (start, step, end) = (num(start)?, num(step)?, num(end)?);
            if step <= 0.0 {
                return Err("step must be positive".into());
            }
            if end < start {
                return Err("end is below start".into());
            }
            let span = (end - start) / step;
            let n = span.round();
            if (span - n).abs() > 1e-9 {
                return Err(format!("{end} is not reachable from {start} in steps of {step}"));
            }
            (0..=n as usize).map(|i| start + i as f64 * step).collect()
        }
        _ => return Err("expected start:step:end".into()),
    };
    Ok(SnrList(values))
}

fn parse_policy(s: &str) -> Result<SelectionPolicy, String> {
    s.parse()
}
