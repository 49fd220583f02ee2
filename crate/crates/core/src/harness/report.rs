//! Multi-trial aggregation, grid search and CSV output.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Network;

use super::config::{ExperimentConfig, RegularizerKind};
use super::train::{load_data, train_prepared, EpochMetrics, PreparedData};

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,val_acc,s_t,mean_kappa";
pub const AGGREGATE_HEADER: &str = "b,alpha,trial,max_val_acc,tail_mean_val_acc";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialSummary {
    pub max_val_accuracy: f64,
    /// Mean validation accuracy over the last `ceil(0.1 · epochs)` epochs.
    pub tail_mean_val_accuracy: f64,
}

impl TrialSummary {
    pub fn from_metrics(metrics: &[EpochMetrics]) -> Result<Self> {
        if metrics.is_empty() {
            return Err(Error::Input("no epochs to summarize".into()));
        }
        let max = metrics.iter().map(|m| m.val_accuracy).fold(f64::NEG_INFINITY, f64::max);
        let tail = metrics.len().div_ceil(10).max(1);
        let tail_mean = metrics[metrics.len() - tail..]
            .iter()
            .map(|m| m.val_accuracy)
            .sum::<f64>()
            / tail as f64;
        Ok(Self {
            max_val_accuracy: max,
            tail_mean_val_accuracy: tail_mean,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub metrics: Vec<EpochMetrics>,
    pub summary: TrialSummary,
    pub network: Network,
}

#[derive(Debug, Clone)]
pub struct TrialsReport {
    pub trials: Vec<TrialRecord>,
    pub mean_max_val_accuracy: f64,
    pub mean_tail_val_accuracy: f64,
}

impl TrialsReport {
    fn from_trials(trials: Vec<TrialRecord>) -> Self {
        let k = trials.len() as f64;
        let mean_max = trials.iter().map(|t| t.summary.max_val_accuracy).sum::<f64>() / k;
        let mean_tail = trials.iter().map(|t| t.summary.tail_mean_val_accuracy).sum::<f64>() / k;
        Self {
            trials,
            mean_max_val_accuracy: mean_max,
            mean_tail_val_accuracy: mean_tail,
        }
    }

    /// Aggregate CSV rows: one per trial, then the trial mean.
    pub fn aggregate_rows(&self, b: Option<f64>, alpha: Option<f64>) -> Vec<AggregateRow> {
        let mut rows: Vec<AggregateRow> = self
            .trials
            .iter()
            .map(|t| AggregateRow {
                b,
                alpha,
                trial: Some(t.trial),
                max_val_accuracy: t.summary.max_val_accuracy,
                tail_mean_val_accuracy: t.summary.tail_mean_val_accuracy,
            })
            .collect();
        rows.push(AggregateRow {
            b,
            alpha,
            trial: None,
            max_val_accuracy: self.mean_max_val_accuracy,
            tail_mean_val_accuracy: self.mean_tail_val_accuracy,
        });
        rows
    }
}

/// Trains `config.trials` independent runs with seeds `base_seed + k`.
pub fn run_trials(config: &ExperimentConfig) -> Result<TrialsReport> {
    config.validate()?;
    let data = load_data(&config.dataset)?;
    run_trials_prepared(config, &data)
}

pub fn run_trials_prepared(config: &ExperimentConfig, data: &PreparedData) -> Result<TrialsReport> {
    let mut trials = Vec::with_capacity(config.trials);
    for k in 0..config.trials {
        let seed = config.base_seed.wrapping_add(k as u64);
        let out = train_prepared(config, data, seed)?;
        trials.push(TrialRecord {
            trial: k,
            seed,
            summary: TrialSummary::from_metrics(&out.metrics)?,
            metrics: out.metrics,
            network: out.network,
        });
    }
    Ok(TrialsReport::from_trials(trials))
}

#[derive(Debug, Clone)]
pub struct GridCell {
    pub b: f64,
    pub alpha: f64,
    pub report: TrialsReport,
}

#[derive(Debug, Clone)]
pub struct GridReport {
    pub cells: Vec<GridCell>,
    /// Index into `cells` of the highest mean-of-max accuracy.
    pub best: usize,
}

impl GridReport {
    pub fn best_cell(&self) -> &GridCell {
        &self.cells[self.best]
    }

    pub fn aggregate_rows(&self) -> Vec<AggregateRow> {
        self.cells
            .iter()
            .flat_map(|c| c.report.aggregate_rows(Some(c.b), Some(c.alpha)))
            .collect()
    }
}

/// Index of the best `(b, alpha, score)`; ties go to the smallest `(b, alpha)`.
pub fn select_best(scores: &[(f64, f64, f64)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &(b, a, s)) in scores.iter().enumerate() {
        best = match best {
            None => Some(i),
            Some(j) => {
                let (bb, ba, bs) = scores[j];
                if s > bs || (s == bs && (b, a) < (bb, ba)) {
                    Some(i)
                } else {
                    Some(j)
                }
            }
        };
    }
    best
}

/// Runs every `(b, alpha)` pair of the schedule scale and sigmoid steepness.
pub fn grid_search(config: &ExperimentConfig, b_values: &[f64], alpha_values: &[f64]) -> Result<GridReport> {
    config.validate()?;
    let data = load_data(&config.dataset)?;
    grid_search_prepared(config, &data, b_values, alpha_values)
}

pub fn grid_search_prepared(
    config: &ExperimentConfig,
    data: &PreparedData,
    b_values: &[f64],
    alpha_values: &[f64],
) -> Result<GridReport> {
    if config.regularizer.kind != RegularizerKind::Smoothing {
        return Err(Error::Config("grid search needs the smoothing regularizer".into()));
    }
    if b_values.is_empty() || alpha_values.is_empty() {
        return Err(Error::Config("grid values must be non-empty".into()));
    }
    let mut cells = Vec::new();
    for &b in b_values {
        for &alpha in alpha_values {
            let mut c = config.clone();
            c.regularizer.schedule.b = b;
            c.regularizer.smoothing.alpha = alpha;
            c.validate()?;
            cells.push(GridCell {
                b,
                alpha,
                report: run_trials_prepared(&c, data)?,
            });
        }
    }
    let scores: Vec<_> = cells
        .iter()
        .map(|c| (c.b, c.alpha, c.report.mean_max_val_accuracy))
        .collect();
    let best = select_best(&scores).expect("grid is non-empty");
    Ok(GridReport { cells, best })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateRow {
    pub b: Option<f64>,
    pub alpha: Option<f64>,
    /// `None` marks the mean-over-trials row.
    pub trial: Option<usize>,
    pub max_val_accuracy: f64,
    pub tail_mean_val_accuracy: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn to_csv(header: &str, records: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header.split(',')).expect("in-memory write");
    for r in records {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
}

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    to_csv(
        METRICS_HEADER,
        metrics.iter().map(|m| {
            vec![
                m.epoch.to_string(),
                format!("{:.6}", m.train_loss),
                format!("{:.6}", m.train_accuracy),
                format!("{:.6}", m.val_accuracy),
                format!("{:.6}", m.s_t),
                format!("{:.6}", m.mean_kappa),
            ]
        }),
    )
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    to_csv(
        AGGREGATE_HEADER,
        rows.iter().map(|r| {
            vec![
                opt(r.b),
                opt(r.alpha),
                r.trial.map(|t| t.to_string()).unwrap_or_else(|| "mean".into()),
                format!("{:.6}", r.max_val_accuracy),
                format!("{:.6}", r.tail_mean_val_accuracy),
            ]
        }),
    )
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Where a record sits: 1-based line and byte offset.
#[derive(Clone, Copy)]
struct At {
    line: u64,
    byte: u64,
}

impl At {
    fn of(p: Option<&csv::Position>) -> Self {
        p.map_or(At { line: 0, byte: 0 }, |p| At {
            line: p.line(),
            byte: p.byte(),
        })
    }
}

fn format_error(path: &Path, at: At, message: String) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: at.byte,
        message,
    }
}

fn field<T: std::str::FromStr>(path: &Path, at: At, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| format_error(path, at, format!("bad field `{raw}` on line {}", at.line)))
}

fn records(path: &Path, text: &str, header: &str) -> Result<Vec<(At, csv::StringRecord)>> {
    let start = At { line: 1, byte: 0 };
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let found = reader
        .headers()
        .map_err(|e| format_error(path, start, e.to_string()))?
        .clone();
    if found.iter().ne(header.split(',')) {
        return Err(format_error(path, start, format!("expected header `{header}`")));
    }
    reader
        .records()
        .map(|r| {
            let r = r.map_err(|e| format_error(path, At::of(e.position()), e.to_string()))?;
            Ok((At::of(r.position()), r))
        })
        .collect()
}

pub fn parse_metrics_csv(path: &Path, text: &str) -> Result<Vec<EpochMetrics>> {
    records(path, text, METRICS_HEADER)?
        .into_iter()
        .map(|(at, c)| {
            Ok(EpochMetrics {
                epoch: field(path, at, &c[0])?,
                train_loss: field(path, at, &c[1])?,
                train_accuracy: field(path, at, &c[2])?,
                val_accuracy: field(path, at, &c[3])?,
                s_t: field(path, at, &c[4])?,
                mean_kappa: field(path, at, &c[5])?,
            })
        })
        .collect()
}

pub fn parse_aggregate_csv(path: &Path, text: &str) -> Result<Vec<AggregateRow>> {
    let optional = |at, raw: &str| -> Result<Option<f64>> {
        if raw.is_empty() {
            Ok(None)
        } else {
            field(path, at, raw).map(Some)
        }
    };
    records(path, text, AGGREGATE_HEADER)?
        .into_iter()
        .map(|(at, c)| {
            Ok(AggregateRow {
                b: optional(at, &c[0])?,
                alpha: optional(at, &c[1])?,
                trial: if &c[2] == "mean" {
                    None
                } else {
                    Some(field(path, at, &c[2])?)
                },
                max_val_accuracy: field(path, at, &c[3])?,
                tail_mean_val_accuracy: field(path, at, &c[4])?,
            })
        })
        .collect()
}
