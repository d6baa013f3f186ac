//! Graph files.
//!
//! Dense CSV: a header line `n=<N>,kind=<binary|weighted>` followed by `N`
//! comma-separated rows. Edge list TSV: a header line `n=<N>` followed by
//! `u<TAB>v<TAB>w` lines, 0-based, each undirected edge listed once. An edge
//! list whose weights are all exactly 1 loads as binary.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use csv::{ReaderBuilder, StringRecord, Terminator, WriterBuilder};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, GraphError, GraphKind};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed header on line {line}: {detail}")]
    MalformedHeader { line: u64, detail: String },
    #[error("malformed row on line {line}: {detail}")]
    MalformedRow { line: u64, detail: String },
    #[error("asymmetric input: entry ({i}, {j}) differs from ({j}, {i})")]
    Asymmetric { i: usize, j: usize },
    #[error("line {line}: vertex index {index} out of range for n = {n}")]
    IndexOutOfRange { line: u64, index: usize, n: usize },
    #[error("line {line}: duplicate edge {{{u}, {v}}}")]
    DuplicateEdge { line: u64, u: usize, v: usize },
    #[error("line {line}: self-loop at vertex {vertex}")]
    SelfLoop { line: u64, vertex: usize },
    #[error("unknown graph format {0:?}")]
    UnknownFormat(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl From<csv::Error> for IoError {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line()).unwrap_or(0);
        match e.into_kind() {
            csv::ErrorKind::Io(io) => IoError::Io(io),
            other => IoError::MalformedRow {
                line,
                detail: format!("{other:?}"),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphFormat {
    DenseCsv,
    EdgeList,
}

impl GraphFormat {
    /// `.csv` is dense, `.tsv` / `.edges` are edge lists.
    pub fn from_path(path: &Path) -> Result<Self, IoError> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(Self::DenseCsv),
            Some("tsv") | Some("edges") => Ok(Self::EdgeList),
            other => Err(IoError::UnknownFormat(other.unwrap_or("").to_string())),
        }
    }
}

impl FromStr for GraphFormat {
    type Err = IoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dense-csv" | "csv" | "dense" => Ok(Self::DenseCsv),
            "edge-list" | "tsv" | "edges" => Ok(Self::EdgeList),
            _ => Err(IoError::UnknownFormat(s.to_string())),
        }
    }
}

fn line_of(rec: &StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn header_field<'a>(field: &'a str, key: &str, line: u64) -> Result<&'a str, IoError> {
    let (k, v) = field.trim().split_once('=').ok_or_else(|| IoError::MalformedHeader {
        line,
        detail: format!("expected `{key}=...`, found {field:?}"),
    })?;
    if k.trim() != key {
        return Err(IoError::MalformedHeader {
            line,
            detail: format!("expected key `{key}`, found {k:?}"),
        });
    }
    Ok(v.trim())
}

fn parse_order(field: &str, line: u64) -> Result<usize, IoError> {
    let v = header_field(field, "n", line)?;
    let n: usize = v.parse().map_err(|_| IoError::MalformedHeader {
        line,
        detail: format!("vertex count {v:?} is not a nonnegative integer"),
    })?;
    if n == 0 {
        return Err(IoError::MalformedHeader {
            line,
            detail: "vertex count must be positive".into(),
        });
    }
    Ok(n)
}

fn parse_value(s: &str, line: u64) -> Result<f64, IoError> {
    let v: f64 = s.trim().parse().map_err(|_| IoError::MalformedRow {
        line,
        detail: format!("{s:?} is not a number"),
    })?;
    if !v.is_finite() {
        return Err(IoError::MalformedRow {
            line,
            detail: format!("{s:?} is not finite"),
        });
    }
    Ok(v)
}

fn fmt_value(v: f64) -> String {
    // Display prints the shortest representation that parses back exactly.
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v}")
    }
}

fn first_record<R: Read>(reader: &mut csv::Reader<R>, what: &str) -> Result<StringRecord, IoError> {
    let mut rec = StringRecord::new();
    if !reader.read_record(&mut rec)? {
        return Err(IoError::MalformedHeader {
            line: 1,
            detail: format!("empty file, expected {what}"),
        });
    }
    Ok(rec)
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<(), IoError> {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if m[(i, j)] != m[(j, i)] {
                return Err(IoError::Asymmetric { i, j });
            }
        }
    }
    Ok(())
}

pub fn read_dense_csv<R: Read>(input: R) -> Result<Graph, IoError> {
    let mut reader = ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let header = first_record(&mut reader, "`n=<N>,kind=<binary|weighted>`")?;
    let hl = line_of(&header);
    if header.len() != 2 {
        return Err(IoError::MalformedHeader {
            line: hl,
            detail: format!("expected two fields, found {}", header.len()),
        });
    }
    let n = parse_order(&header[0], hl)?;
    let kind = match header_field(&header[1], "kind", hl)? {
        "binary" => GraphKind::Binary,
        "weighted" => GraphKind::Weighted,
        other => {
            return Err(IoError::MalformedHeader {
                line: hl,
                detail: format!("unknown kind {other:?}"),
            })
        }
    };
    let mut m = DMatrix::<f64>::zeros(n, n);
    let mut rows = 0usize;
    for rec in reader.records() {
        let rec = rec?;
        let line = line_of(&rec);
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rows == n {
            return Err(IoError::MalformedRow {
                line,
                detail: format!("more than {n} rows"),
            });
        }
        if rec.len() != n {
            return Err(IoError::MalformedRow {
                line,
                detail: format!("expected {n} fields, found {}", rec.len()),
            });
        }
        for (j, field) in rec.iter().enumerate() {
            m[(rows, j)] = parse_value(field, line)?;
        }
        rows += 1;
    }
    if rows != n {
        return Err(IoError::MalformedRow {
            line: hl + rows as u64 + 1,
            detail: format!("expected {n} rows, found {rows}"),
        });
    }
    check_symmetric(&m)?;
    Ok(Graph::new(m, kind)?)
}

pub fn write_dense_csv<W: Write>(g: &Graph, out: W) -> Result<(), IoError> {
    let mut w = BufWriter::new(out);
    let kind = match g.kind() {
        GraphKind::Binary => "binary",
        GraphKind::Weighted => "weighted",
    };
    writeln!(w, "n={},kind={kind}", g.n())?;
    let mut writer = WriterBuilder::new()
        .terminator(Terminator::Any(b'\n'))
        .from_writer(w);
    for i in 0..g.n() {
        writer.write_record((0..g.n()).map(|j| fmt_value(g.get(i, j))))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_edge_list<R: Read>(input: R) -> Result<Graph, IoError> {
    let mut reader = ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .delimiter(b'\t')
        .from_reader(input);
    let header = first_record(&mut reader, "`n=<N>`")?;
    let hl = line_of(&header);
    if header.len() != 1 {
        return Err(IoError::MalformedHeader {
            line: hl,
            detail: format!("expected one field, found {}", header.len()),
        });
    }
    let n = parse_order(&header[0], hl)?;
    let mut m = DMatrix::<f64>::zeros(n, n);
    let mut seen = vec![false; n * n];
    let mut all_unit = true;
    for rec in reader.records() {
        let rec = rec?;
        let line = line_of(&rec);
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != 3 {
            return Err(IoError::MalformedRow {
                line,
                detail: format!("expected `u<TAB>v<TAB>w`, found {} fields", rec.len()),
            });
        }
        let index = |s: &str| -> Result<usize, IoError> {
            let i: usize = s.trim().parse().map_err(|_| IoError::MalformedRow {
                line,
                detail: format!("{s:?} is not a vertex index"),
            })?;
            if i >= n {
                return Err(IoError::IndexOutOfRange { line, index: i, n });
            }
            Ok(i)
        };
        let (u, v) = (index(&rec[0])?, index(&rec[1])?);
        let w = parse_value(&rec[2], line)?;
        if u == v {
            return Err(IoError::SelfLoop { line, vertex: u });
        }
        let (a, b) = (u.min(v), u.max(v));
        if std::mem::replace(&mut seen[a * n + b], true) {
            return Err(IoError::DuplicateEdge { line, u: a, v: b });
        }
        all_unit &= w == 1.0;
        m[(u, v)] = w;
        m[(v, u)] = w;
    }
    let kind = if all_unit {
        GraphKind::Binary
    } else {
        GraphKind::Weighted
    };
    Ok(Graph::new(m, kind)?)
}

/// Zero-weight pairs are omitted.
pub fn write_edge_list<W: Write>(g: &Graph, out: W) -> Result<(), IoError> {
    let mut w = BufWriter::new(out);
    writeln!(w, "n={}", g.n())?;
    for i in 0..g.n() {
        for j in (i + 1)..g.n() {
            let v = g.get(i, j);
            if v != 0.0 {
                writeln!(w, "{i}\t{j}\t{}", fmt_value(v))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_graph(path: &Path, format: GraphFormat) -> Result<Graph, IoError> {
    let f = BufReader::new(File::open(path)?);
    match format {
        GraphFormat::DenseCsv => read_dense_csv(f),
        GraphFormat::EdgeList => read_edge_list(f),
    }
}

pub fn save_graph(g: &Graph, path: &Path, format: GraphFormat) -> Result<(), IoError> {
    let f = File::create(path)?;
    match format {
        GraphFormat::DenseCsv => write_dense_csv(g, f),
        GraphFormat::EdgeList => write_edge_list(g, f),
    }
}
