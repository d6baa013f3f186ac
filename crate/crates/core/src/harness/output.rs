use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use csv::{ReaderBuilder, Terminator, WriterBuilder};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::{ExperimentConfig, Scale};
use super::experiments::RunOutput;
use super::{HarnessError, ResultRow};

const FIXED_HEAD: [&str; 2] = ["experiment", "replicate"];
const FIXED_TAIL: [&str; 3] = ["objective", "accuracy", "winner_class"];

fn param_names(rows: &[ResultRow]) -> Result<Vec<String>, HarnessError> {
    let first = rows
        .first()
        .ok_or_else(|| HarnessError::Results("no rows to write".into()))?;
    let names: Vec<String> = first.params.iter().map(|(k, _)| k.clone()).collect();
    for r in rows {
        if r.params.len() != names.len() || r.params.iter().zip(&names).any(|((k, _), n)| k != n) {
            return Err(HarnessError::Results(format!(
                "rows disagree on parameter columns: {:?} vs {:?}",
                names,
                r.params.iter().map(|(k, _)| k).collect::<Vec<_>>()
            )));
        }
    }
    Ok(names)
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    WriterBuilder::new().terminator(Terminator::Any(b'\n')).from_writer(out)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `experiment, replicate, <params>, objective, accuracy, winner_class`.
pub fn write_results_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<(), HarnessError> {
    let names = param_names(rows)?;
    let mut w = writer(out);
    let header: Vec<&str> = FIXED_HEAD
        .iter()
        .copied()
        .chain(names.iter().map(String::as_str))
        .chain(FIXED_TAIL)
        .collect();
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.experiment.clone(), r.replicate.to_string()];
        rec.extend(r.params.iter().map(|(_, v)| v.clone()));
        rec.push(r.objective.to_string());
        rec.push(opt(r.accuracy));
        rec.push(opt(r.winner_class));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `experiment, replicate, <params>, elapsed_ms`; kept apart from the
/// results so those stay reproducible byte for byte.
pub fn write_timings_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<(), HarnessError> {
    let names = param_names(rows)?;
    let mut w = writer(out);
    let header: Vec<&str> = FIXED_HEAD
        .iter()
        .copied()
        .chain(names.iter().map(String::as_str))
        .chain(["elapsed_ms"])
        .collect();
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.experiment.clone(), r.replicate.to_string()];
        rec.extend(r.params.iter().map(|(_, v)| v.clone()));
        rec.push(r.elapsed_ms.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn bad(line: u64, detail: impl Into<String>) -> HarnessError {
    HarnessError::Results(format!("line {line}: {}", detail.into()))
}

/// Parses a results table written by [`write_results_csv`] and checks every
/// row with [`validate_rows`]. `elapsed_ms` reads back as 0.
pub fn read_results<R: Read>(input: R) -> Result<Vec<ResultRow>, HarnessError> {
    let mut reader = ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = reader.headers()?.clone();
    let k = header.len();
    if k < FIXED_HEAD.len() + FIXED_TAIL.len()
        || header.iter().take(2).ne(FIXED_HEAD)
        || header.iter().skip(k - 3).ne(FIXED_TAIL)
    {
        return Err(bad(1, format!("unexpected header {header:?}")));
    }
    let names: Vec<String> = header.iter().skip(2).take(k - 5).map(String::from).collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let replicate = rec[1].parse().map_err(|_| bad(line, "replicate is not an index"))?;
        let objective = rec[k - 3].parse().map_err(|_| bad(line, "objective is not a number"))?;
        let accuracy = match &rec[k - 2] {
            "" => None,
            s => Some(s.parse().map_err(|_| bad(line, "accuracy is not a number"))?),
        };
        let winner_class = match &rec[k - 1] {
            "" => None,
            s => Some(s.parse().map_err(|_| bad(line, "winner_class is not an index"))?),
        };
        rows.push(ResultRow {
            experiment: rec[0].to_string(),
            replicate,
            params: names
                .iter()
                .enumerate()
                .map(|(i, n)| (n.clone(), rec[2 + i].to_string()))
                .collect(),
            objective,
            accuracy,
            winner_class,
            elapsed_ms: 0,
        });
    }
    validate_rows(&rows)?;
    Ok(rows)
}

/// Objectives are finite and nonnegative (Frobenius distances, traces,
/// variances, KS distances, within-cluster sums); accuracies lie in [0, 1]
/// except adjusted Rand indices, which lie in [-1, 1].
pub fn validate_rows(rows: &[ResultRow]) -> Result<(), HarnessError> {
    for (i, r) in rows.iter().enumerate() {
        if !(r.objective.is_finite() && r.objective >= 0.0) {
            return Err(HarnessError::Results(format!("row {i}: objective {} out of range", r.objective)));
        }
        if let Some(a) = r.accuracy {
            let lo = if r.param("stage") == Some("clustering") { -1.0 } else { 0.0 };
            if !(lo..=1.0).contains(&a) {
                return Err(HarnessError::Results(format!("row {i}: accuracy {a} out of range")));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub package: String,
    pub version: String,
    pub scale: Scale,
    pub rows: usize,
    pub config: ExperimentConfig,
    pub extras: BTreeMap<String, Value>,
}

impl Manifest {
    pub fn new(cfg: &ExperimentConfig, out: &RunOutput) -> Self {
        Self {
            experiment: cfg.name().to_string(),
            package: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            scale: cfg.scale,
            rows: out.rows.len(),
            config: cfg.clone(),
            extras: out.extras.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunFiles {
    pub results: PathBuf,
    pub timings: PathBuf,
    pub manifest: PathBuf,
}

/// Writes `<name>.csv`, `<name>.timings.csv` and `<name>.manifest.json`
/// under `dir`, creating it if needed.
pub fn write_run(cfg: &ExperimentConfig, out: &RunOutput, dir: &Path) -> Result<RunFiles, HarnessError> {
    fs::create_dir_all(dir)?;
    let name = cfg.name();
    let files = RunFiles {
        results: dir.join(format!("{name}.csv")),
        timings: dir.join(format!("{name}.timings.csv")),
        manifest: dir.join(format!("{name}.manifest.json")),
    };
    write_results_csv(&out.rows, File::create(&files.results)?)?;
    write_timings_csv(&out.rows, File::create(&files.timings)?)?;
    let mut text = serde_json::to_string_pretty(&Manifest::new(cfg, out))
        .map_err(|e| HarnessError::Results(e.to_string()))?;
    text.push('\n');
    fs::write(&files.manifest, text)?;
    Ok(files)
}
