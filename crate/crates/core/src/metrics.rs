//! Session and classifier metrics, and their CSV exports.
//!
//! Every export is plain text produced with fixed float formatting, so the
//! same inputs always give byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::active::SessionReport;
use crate::classifiers::{
    select_k, stratified_split, ClassifierError, KnnModel, LabeledPoint, NbModel, OvaEnsemble, Persist, ScorerConfig,
    SvmParams,
};
use crate::features::{extract_all, FeatureError, NormStats};
use crate::rng::derive_seed;
use crate::synth::{CoupletLabel, Dataset};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("report has zero frames")]
    ZeroTotal,
    #[error("{label} at {snr_db} dB has {count} frames, need at least 2")]
    InsufficientSamples {
        snr_db: f64,
        label: CoupletLabel,
        count: usize,
    },
    #[error("test fraction {0} must lie strictly between 0 and 1")]
    BadFraction(f64),
    #[error("no classifiers requested")]
    NoClassifiers,
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Percentage of frames labelled by the model, `100 * model / total`.
pub fn model_label_ratio(report: &SessionReport) -> Result<f64, MetricsError> {
    ratio_percent(report.model_labelled, report.total)
}

pub fn ratio_percent(part: usize, total: usize) -> Result<f64, MetricsError> {
    if total == 0 {
        return Err(MetricsError::ZeroTotal);
    }
    Ok(100.0 * part as f64 / total as f64)
}

/// Two-decimal display form used by every export.
pub fn format_percent(p: f64) -> String {
    format!("{p:.2}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Knn,
    NaiveBayes,
    Svm,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 3] = [ClassifierKind::Knn, ClassifierKind::NaiveBayes, ClassifierKind::Svm];

    pub fn name(self) -> &'static str {
        match self {
            Self::Knn => "knn",
            Self::NaiveBayes => "nb",
            Self::Svm => "svm",
        }
    }
}

impl std::str::FromStr for ClassifierKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "knn" => Ok(Self::Knn),
            "nb" | "naive_bayes" => Ok(Self::NaiveBayes),
            "svm" => Ok(Self::Svm),
            _ => Err(format!("unknown classifier {s:?}")),
        }
    }
}

/// Raw outcome counts of one classifier on one test set, keyed by
/// (truth, prediction).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: BTreeMap<(CoupletLabel, CoupletLabel), usize>,
}

impl Confusion {
    pub fn record(&mut self, truth: CoupletLabel, predicted: CoupletLabel) {
        *self.counts.entry((truth, predicted)).or_default() += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn correct(&self) -> usize {
        self.counts.iter().filter(|((t, p), _)| t == p).map(|(_, n)| n).sum()
    }

    /// Percent correct; 0 for an empty test set.
    pub fn accuracy(&self) -> f64 {
        ratio_percent(self.correct(), self.total()).unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCell {
    pub classifier: ClassifierKind,
    pub confusion: Confusion,
}

impl AccuracyCell {
    pub fn accuracy(&self) -> f64 {
        self.confusion.accuracy()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub snr_db: f64,
    /// In the order of [`EvalConfig::classifiers`].
    pub cells: Vec<AccuracyCell>,
}

impl AccuracyRow {
    pub fn accuracy(&self, kind: ClassifierKind) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.classifier == kind)
            .map(AccuracyCell::accuracy)
    }
}

/// Accuracy per classifier per SNR, rows in ascending SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub classifiers: Vec<ClassifierKind>,
    pub rows: Vec<AccuracyRow>,
}

impl AccuracyTable {
    pub fn row(&self, snr_db: f64) -> Option<&AccuracyRow> {
        self.rows.iter().find(|r| r.snr_db == snr_db)
    }
}

/// Serialized model size per classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSizeReport {
    /// SNR whose models were measured.
    pub snr_db: f64,
    pub sizes: Vec<(ClassifierKind, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub split_seed: u64,
    pub test_fraction: f64,
    pub classifiers: Vec<ClassifierKind>,
    pub svm: SvmParams,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            split_seed: 7,
            test_fraction: 0.3,
            classifiers: ClassifierKind::ALL.to_vec(),
            svm: SvmParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub table: AccuracyTable,
    /// Models of the highest SNR in the sweep.
    pub sizes: ModelSizeReport,
}

/// Fit `kind` on `train`, score it on `test`, and return the confusion
/// counts with the model's serialized size in bytes.
pub fn fit_and_score(
    kind: ClassifierKind,
    train: &[LabeledPoint<CoupletLabel>],
    test: &[LabeledPoint<CoupletLabel>],
    config: &EvalConfig,
) -> Result<(Confusion, usize), MetricsError> {
    let mut confusion = Confusion::default();
    let size = match kind {
        ClassifierKind::Knn => {
            let k = select_k(train, derive_seed(config.split_seed, 1))?;
            let model = KnnModel::new(train.to_vec(), k)?;
            for p in test {
                confusion.record(p.y, model.predict(&p.x)?);
            }
            model.to_blob().len()
        }
        ClassifierKind::NaiveBayes => {
            let model = NbModel::fit(train)?;
            for p in test {
                confusion.record(p.y, model.predict(&p.x)?);
            }
            model.to_blob().len()
        }
        ClassifierKind::Svm => {
            let model = OvaEnsemble::fit(train, ScorerConfig::Svm(config.svm))?;
            for p in test {
                confusion.record(p.y, model.predict(&p.x)?.label);
            }
            model.to_blob().len()
        }
    };
    Ok((confusion, size))
}

/// Per SNR: order frames by id, split 70/30 stratified by couplet under
/// `split_seed`, standardize with training statistics, then fit and score
/// every requested classifier. Sorting by id first makes the result
/// independent of the order frames are stored in.
pub fn evaluate(dataset: &Dataset, config: &EvalConfig) -> Result<Evaluation, MetricsError> {
    if config.classifiers.is_empty() {
        return Err(MetricsError::NoClassifiers);
    }
    if !(config.test_fraction > 0.0 && config.test_fraction < 1.0) {
        return Err(MetricsError::BadFraction(config.test_fraction));
    }
    let mut snrs: Vec<f64> = dataset.frames.iter().map(|f| f.snr_db).collect();
    snrs.sort_by(f64::total_cmp);
    snrs.dedup();

    let per_snr = snrs
        .par_iter()
        .map(|&snr| {
            let mut frames = dataset.at_snr(snr);
            frames.sort_by_key(|f| f.id);
            let labels: Vec<CoupletLabel> = frames.iter().map(|f| f.truth).collect();
            let mut counts: BTreeMap<CoupletLabel, usize> = BTreeMap::new();
            for l in &labels {
                *counts.entry(*l).or_default() += 1;
            }
            if let Some((&label, &count)) = counts.iter().find(|(_, &n)| n < 2) {
                return Err(MetricsError::InsufficientSamples {
                    snr_db: snr,
                    label,
                    count,
                });
            }
            let raw = extract_all(&frames)?;
            let (tr, te) = stratified_split(&labels, config.test_fraction, config.split_seed);
            let norm = NormStats::fit(&tr.iter().map(|&i| raw[i].values.as_slice()).collect::<Vec<_>>())?;
            let point = |i: usize| LabeledPoint::new(norm.normalize(&raw[i].values), labels[i]);
            let train: Vec<_> = tr.iter().map(|&i| point(i)).collect();
            let test: Vec<_> = te.iter().map(|&i| point(i)).collect();
            let mut cells = Vec::new();
            let mut sizes = Vec::new();
            for &kind in &config.classifiers {
                let (confusion, size) = fit_and_score(kind, &train, &test, config)?;
                cells.push(AccuracyCell {
                    classifier: kind,
                    confusion,
                });
                sizes.push((kind, size));
            }
            Ok((AccuracyRow { snr_db: snr, cells }, sizes))
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;

    let sizes = ModelSizeReport {
        snr_db: per_snr.last().map_or(f64::NAN, |r| r.0.snr_db),
        sizes: per_snr.last().map(|r| r.1.clone()).unwrap_or_default(),
    };
    Ok(Evaluation {
        table: AccuracyTable {
            classifiers: config.classifiers.clone(),
            rows: per_snr.into_iter().map(|r| r.0).collect(),
        },
        sizes,
    })
}

pub fn accuracy_table(dataset: &Dataset, config: &EvalConfig) -> Result<AccuracyTable, MetricsError> {
    evaluate(dataset, config).map(|e| e.table)
}

/// Spearman rank correlation with average ranks for ties. `None` when
/// either side is constant or shorter than two.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let (mut vx, mut vy) = (0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Correlation between iteration index and correct predictions per page.
pub fn correct_in_page_trend(report: &SessionReport) -> Option<f64> {
    let it: Vec<f64> = report.records.iter().map(|r| r.iteration as f64).collect();
    let correct: Vec<f64> = report.records.iter().map(|r| r.correct as f64).collect();
    spearman(&it, &correct)
}

pub const FIG1_FILE: &str = "fig1_labels.csv";
pub const FIG2_FILE: &str = "fig2_predictions.csv";
pub const FIG3_FILE: &str = "fig3_time.csv";
pub const TABLE1_FILE: &str = "table1_accuracy.csv";
pub const FIG5_FILE: &str = "fig5_sizes.csv";
pub const SESSION_ITERATIONS_FILE: &str = "session_report.csv";
pub const SESSION_SUMMARY_FILE: &str = "session_summary.csv";
pub const PLOT_SCRIPT_FILE: &str = "plots.gp";

/// Per-page model and user label counts.
pub fn fig1_csv(report: &SessionReport) -> String {
    let mut s = String::from("iteration,model_count,user_count\n");
    for r in &report.records {
        let _ = writeln!(s, "{},{},{}", r.iteration, r.model_labelled, r.user_labelled);
    }
    s
}

pub fn fig2_csv(report: &SessionReport) -> String {
    let mut s = String::from("iteration,correct_in_page,page_size\n");
    for r in &report.records {
        let _ = writeln!(s, "{},{},{}", r.iteration, r.correct, r.page_len);
    }
    s
}

/// Training attributed to each page. `seconds` is `NA` unless wall time was
/// recorded; `train_samples` counts rows fitted, duplicates included.
pub fn fig3_csv(report: &SessionReport) -> String {
    let mut s = String::from("train_round,seconds,train_samples\n");
    for r in &report.records {
        let secs = match r.train_seconds {
            Some(t) => format!("{t:.6}"),
            None if r.train_samples == 0 => "0.000000".to_string(),
            None => "NA".to_string(),
        };
        let _ = writeln!(s, "{},{},{}", r.iteration, secs, r.train_samples);
    }
    s
}

pub fn session_iterations_csv(report: &SessionReport) -> String {
    let mut s = String::from(
        "iteration,page_len,correct,incorrect,model_labelled,user_labelled,buffer_size,flushed,restarted,train_samples\n",
    );
    for r in &report.records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            r.page_len,
            r.correct,
            r.incorrect,
            r.model_labelled,
            r.user_labelled,
            r.buffer_size,
            r.flushed,
            r.restarted,
            r.train_samples
        );
    }
    s
}

pub fn session_summary_csv(report: &SessionReport) -> String {
    let pct = ratio_percent(report.model_labelled, report.total).map_or("NA".to_string(), format_percent);
    format!(
        "total,model_labelled,user_labelled,model_label_percent,iterations,restarts,retrains,complete\n{},{},{},{},{},{},{},{}\n",
        report.total,
        report.model_labelled,
        report.user_labelled,
        pct,
        report.iterations,
        report.restarts,
        report.retrains,
        report.complete
    )
}

/// One row per SNR: accuracy per classifier, then the raw counts it was
/// computed from.
pub fn table1_csv(table: &AccuracyTable) -> String {
    let mut s = String::from("snr_db");
    for k in &table.classifiers {
        let _ = write!(s, ",{}_accuracy", k.name());
    }
    for k in &table.classifiers {
        let _ = write!(s, ",{}_correct", k.name());
    }
    s.push_str(",test_count\n");
    for row in &table.rows {
        let _ = write!(s, "{}", row.snr_db);
        for c in &row.cells {
            let _ = write!(s, ",{}", format_percent(c.accuracy()));
        }
        for c in &row.cells {
            let _ = write!(s, ",{}", c.confusion.correct());
        }
        let n = row.cells.first().map_or(0, |c| c.confusion.total());
        let _ = writeln!(s, ",{n}");
    }
    s
}

pub fn fig5_csv(sizes: &ModelSizeReport) -> String {
    let mut s = String::from("classifier,size_bytes,snr_db\n");
    for (k, n) in &sizes.sizes {
        let _ = writeln!(s, "{},{},{}", k.name(), n, sizes.snr_db);
    }
    s
}

/// Gnuplot script drawing whichever of the CSVs above sit next to it.
pub fn plot_script() -> &'static str {
    r#"# gnuplot -persist plots.gp
set datafile separator ","
set key autotitle columnhead
set terminal pngcairo size 800,500
if (system("test -f fig1_labels.csv && echo 1") eq "1") {
    set output "fig1_labels.png"; set xlabel "iteration"; set ylabel "frames"
    plot "fig1_labels.csv" using 1:2 with lines, "" using 1:3 with lines
}
if (system("test -f fig2_predictions.csv && echo 1") eq "1") {
    set output "fig2_predictions.png"; set xlabel "iteration"; set ylabel "correct in page"
    plot "fig2_predictions.csv" using 1:2 with linespoints
}
if (system("test -f fig3_time.csv && echo 1") eq "1") {
    set output "fig3_time.png"; set xlabel "training number"; set ylabel "seconds"
    plot "fig3_time.csv" using 1:2 with impulses
}
if (system("test -f table1_accuracy.csv && echo 1") eq "1") {
    set output "table1_accuracy.png"; set xlabel "SNR (dB)"; set ylabel "accuracy (%)"
    plot "table1_accuracy.csv" using 1:2 with linespoints, "" using 1:3 with linespoints, "" using 1:4 with linespoints
}
if (system("test -f fig5_sizes.csv && echo 1") eq "1") {
    set output "fig5_sizes.png"; set style data histograms; set style fill solid; set ylabel "bytes"
    plot "fig5_sizes.csv" using 2:xtic(1)
}
"#
}

/// Write `contents` to `dir/name`, creating `dir` if needed.
pub fn write_artifact(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf, MetricsError> {
    let path = dir.join(name);
    let io = |source| MetricsError::Io {
        path: path.clone(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut f = std::fs::File::create(&path).map_err(io)?;
    f.write_all(contents).map_err(io)?;
    f.sync_all().map_err(io)?;
    Ok(path)
}

/// Session CSVs: fig1, fig2, fig3, the per-iteration report and totals.
pub fn export_session(report: &SessionReport, dir: &Path) -> Result<Vec<PathBuf>, MetricsError> {
    [
        (FIG1_FILE, fig1_csv(report)),
        (FIG2_FILE, fig2_csv(report)),
        (FIG3_FILE, fig3_csv(report)),
        (SESSION_ITERATIONS_FILE, session_iterations_csv(report)),
        (SESSION_SUMMARY_FILE, session_summary_csv(report)),
        (PLOT_SCRIPT_FILE, plot_script().to_string()),
    ]
    .iter()
    .map(|(name, body)| write_artifact(dir, name, body.as_bytes()))
    .collect()
}

/// Classifier CSVs: table1 and fig5.
pub fn export_evaluation(eval: &Evaluation, dir: &Path) -> Result<Vec<PathBuf>, MetricsError> {
    [
        (TABLE1_FILE, table1_csv(&eval.table)),
        (FIG5_FILE, fig5_csv(&eval.sizes)),
        (PLOT_SCRIPT_FILE, plot_script().to_string()),
    ]
    .iter()
    .map(|(name, body)| write_artifact(dir, name, body.as_bytes()))
    .collect()
}
