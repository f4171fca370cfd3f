mod args;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::Parser;
use iqal_core::active::{LoopConfig, LoopData, SessionState};
use iqal_core::metrics::{self, EvalConfig};
use iqal_core::oracle::SimulatedOracle;
use iqal_core::synth::{build_dataset, Dataset, DatasetSpec};
use iqal_core::ScorerConfig;
use iqal_service::ServiceConfig;
use serde_json::json;

use args::{Cli, Command, DataArgs, EvalArgs, GenDataArgs, ReportArgs, Scorer, ServeArgs, SessionArgs, Timing};
use manifest::Manifest;

pub const DATASET_FILE: &str = "dataset.iqds";
pub const CHECKPOINT_FILE: &str = "session_checkpoint.json";
pub const REPORT_JSON_FILE: &str = "session_report.json";

/// Frame count when neither `--frames` nor `--frames-per-snr` is given.
enum FrameDefault {
    PerCouplet(usize),
    PerSnr(usize),
}

fn dataset_spec(data: &DataArgs, default_snr: &[f64], frames: FrameDefault) -> DatasetSpec {
    let mut spec = DatasetSpec {
        snr_list: data.snr.as_ref().map_or_else(|| default_snr.to_vec(), |s| s.0.clone()),
        frame_len: data.frame_len,
        master_seed: data.seed,
        ..DatasetSpec::default()
    };
    match (data.frames, data.frames_per_snr, frames) {
        (Some(n), _, _) | (None, None, FrameDefault::PerCouplet(n)) => spec.frames_per_couplet_per_snr = n,
        (None, Some(n), _) | (None, None, FrameDefault::PerSnr(n)) => spec.frames_per_snr = Some(n),
    }
    spec
}

fn even_grid() -> Vec<f64> {
    (0..10).map(|i| 2.0 * i as f64).collect()
}

fn load_or_build(path: Option<&Path>, spec: &DatasetSpec) -> Result<Dataset> {
    match path {
        Some(p) => Dataset::load(p).with_context(|| format!("reading dataset {}", p.display())),
        None => build_dataset(spec).context("generating dataset"),
    }
}

fn gen_data(a: &GenDataArgs) -> Result<Manifest> {
    let spec = dataset_spec(&a.data, &even_grid(), FrameDefault::PerCouplet(100));
    let ds = build_dataset(&spec).context("generating dataset")?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    ds.save(a.out.join(DATASET_FILE)).context("writing dataset")?;
    eprintln!("{} frames -> {}", ds.len(), a.out.join(DATASET_FILE).display());
    let mut m = Manifest::new("gen-data", json!({ "dataset": spec }));
    m.add(&a.out, DATASET_FILE)?;
    Ok(m)
}

fn eval_classifiers(a: &EvalArgs) -> Result<Manifest> {
    let spec = dataset_spec(&a.data, &even_grid(), FrameDefault::PerCouplet(100));
    let ds = load_or_build(a.dataset.as_deref(), &spec)?;
    let config = EvalConfig {
        split_seed: a.split_seed,
        test_fraction: a.test_fraction,
        classifiers: a.classifiers.clone(),
        ..EvalConfig::default()
    };
    let eval = metrics::evaluate(&ds, &config)?;
    for row in &eval.table.rows {
        let cells: Vec<String> = row
            .cells
            .iter()
            .map(|c| format!("{} {:.2}%", c.classifier.name(), c.accuracy()))
            .collect();
        eprintln!("{:>6.1} dB  {}", row.snr_db, cells.join("  "));
    }
    let mut m = Manifest::new("eval-classifiers", json!({ "dataset": ds.spec, "eval": config }));
    for path in metrics::export_evaluation(&eval, &a.out)? {
        m.add_path(&a.out, &path)?;
    }
    Ok(m)
}

fn loop_config(a: &SessionArgs) -> Result<LoopConfig> {
    let mut c: LoopConfig = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => LoopConfig::default(),
    };
    if let Some(v) = a.page_size {
        c.page_size = v;
    }
    if let Some(v) = a.restart_threshold {
        c.restart_threshold = v;
    }
    if let Some(v) = a.buffer_capacity {
        c.buffer_capacity = v;
    }
    if let Some(v) = a.bootstrap {
        c.bootstrap_count = v;
    }
    if let Some(v) = a.policy {
        c.selection_policy = v;
    }
    match a.scorer {
        Some(Scorer::Logistic) => c.scorer = ScorerConfig::logistic(),
        Some(Scorer::Svm) => c.scorer = ScorerConfig::svm(),
        None => {}
    }
    c.record_wall_time = a.timing == Timing::Wall;
    c.validate()?;
    Ok(c)
}

fn label_session(a: &SessionArgs) -> Result<Manifest> {
    let config = loop_config(a)?;
    let spec = dataset_spec(&a.data, &[18.0], FrameDefault::PerSnr(5642));
    let ds = load_or_build(a.dataset.as_deref(), &spec)?;
    let data = LoopData::from_dataset(&ds, true)?;
    let mut oracle = SimulatedOracle::from_dataset(&ds, a.error_rate, a.data.seed)?;

    let mut state = SessionState::new(&data, config.clone(), a.data.seed)?;
    while !state.is_finished() {
        state.step(&data, &mut oracle)?;
    }
    let report = state.report();
    if report.user_labelled + report.model_labelled != report.total {
        bail!("label counts do not add up to the dataset size");
    }
    eprintln!(
        "{} frames: {} model-labelled ({}%), {} user-labelled, {} restarts, {} retrains",
        report.total,
        report.model_labelled,
        metrics::format_percent(metrics::model_label_ratio(&report)?),
        report.user_labelled,
        report.restarts,
        report.retrains,
    );

    let mut m = Manifest::new(
        "label-session",
        json!({ "dataset": ds.spec, "loop": config, "error_rate": a.error_rate, "seed": a.data.seed }),
    );
    for path in metrics::export_session(&report, &a.out)? {
        m.add_path(&a.out, &path)?;
    }
    let report_json = serde_json::to_vec_pretty(&report)?;
    metrics::write_artifact(&a.out, REPORT_JSON_FILE, &report_json)?;
    m.add(&a.out, REPORT_JSON_FILE)?;
    state.save(a.out.join(CHECKPOINT_FILE))?;
    m.add(&a.out, CHECKPOINT_FILE)?;
    Ok(m)
}

/// Accepts a bare session checkpoint or a service session record, which
/// wraps one under `state`.
fn read_checkpoint(path: &Path) -> Result<SessionState> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_slice(&bytes).with_context(|| format!("{} is not JSON", path.display()))?;
    let inner = match value.get("state") {
        Some(state) if value.get("session_id").is_some() => serde_json::to_vec(state)?,
        _ => bytes,
    };
    SessionState::from_checkpoint(&inner).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn report(a: &ReportArgs) -> Result<Manifest> {
    let state = read_checkpoint(&a.checkpoint)?;
    let report = state.report();
    let mut m = Manifest::new("report", json!({ "seed": state.seed(), "loop": state.config() }));
    for path in metrics::export_session(&report, &a.out)? {
        m.add_path(&a.out, &path)?;
    }
    metrics::write_artifact(&a.out, REPORT_JSON_FILE, &serde_json::to_vec_pretty(&report)?)?;
    m.add(&a.out, REPORT_JSON_FILE)?;
    if !report.complete {
        eprintln!(
            "session is not complete; rendered {} iterations so far",
            report.iterations
        );
    }
    Ok(m)
}

fn serve(a: &ServeArgs) -> Result<()> {
    let mut config = ServiceConfig::new(&a.datasets, &a.checkpoints);
    config.lease_timeout = Duration::from_secs(a.lease_secs);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(iqal_service::serve(a.listen, config))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let (manifest, out): (Manifest, &PathBuf) = match &cli.command {
        Command::GenData(a) => (gen_data(a)?, &a.out),
        Command::EvalClassifiers(a) => (eval_classifiers(a)?, &a.out),
        Command::LabelSession(a) => (label_session(a)?, &a.out),
        Command::Report(a) => (report(a)?, &a.out),
        Command::Serve(a) => return serve(a),
    };
    manifest.write(out)
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
