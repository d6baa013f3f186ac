use std::collections::BTreeMap;
use std::str::FromStr;

use csv::{Terminator, WriterBuilder};

use super::{HarnessError, ResultRow};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotSpec {
    /// Means over replicates for each parameter combination.
    ObjectiveCurve,
    /// Objective and error-rate matrices over mixed class pairs.
    CosieHeatmap,
    /// Per held-out scan: every fine match, the own-class clustered match
    /// and the coarse match, for objective and error rate.
    ConnectomeMatrix,
    /// Held-out scans against every class mean.
    ClassDeltas,
}

impl FromStr for PlotSpec {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "objective-curve" => Ok(Self::ObjectiveCurve),
            "cosie-heatmap" => Ok(Self::CosieHeatmap),
            "connectome-matrix" => Ok(Self::ConnectomeMatrix),
            "class-deltas" => Ok(Self::ClassDeltas),
            other => Err(HarnessError::Config(format!("unknown plot spec {other:?}"))),
        }
    }
}

impl PlotSpec {
    pub fn defaults_for(experiment: &str) -> Vec<PlotSpec> {
        match experiment {
            "cosie-grid" => vec![Self::CosieHeatmap],
            "connectome-surrogate" => vec![Self::ConnectomeMatrix, Self::ClassDeltas],
            _ => vec![Self::ObjectiveCurve],
        }
    }
}

/// A named CSV document.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotTable {
    pub name: String,
    pub csv: String,
}

#[derive(Default)]
struct Mean {
    sum: f64,
    count: usize,
}

impl Mean {
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }

    fn cell(&self) -> String {
        if self.count == 0 {
            String::new()
        } else {
            (self.sum / self.count as f64).to_string()
        }
    }
}

fn render(records: &[Vec<String>]) -> Result<String, HarnessError> {
    let mut w = WriterBuilder::new()
        .terminator(Terminator::Any(b'\n'))
        .flexible(false)
        .from_writer(Vec::new());
    for r in records {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Results(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| HarnessError::Results(e.to_string()))
}

fn require<'a>(r: &'a ResultRow, name: &str) -> Result<&'a str, HarnessError> {
    r.param(name)
        .ok_or_else(|| HarnessError::Results(format!("rows lack the {name:?} column")))
}

fn index(r: &ResultRow, name: &str) -> Result<usize, HarnessError> {
    require(r, name)?
        .parse()
        .map_err(|_| HarnessError::Results(format!("{name:?} is not an index")))
}

pub fn emit_plot_data(rows: &[ResultRow], spec: PlotSpec) -> Result<Vec<PlotTable>, HarnessError> {
    let first = rows
        .first()
        .ok_or_else(|| HarnessError::Results("no rows to plot".into()))?;
    match spec {
        PlotSpec::ObjectiveCurve => curve(rows, &first.experiment),
        PlotSpec::CosieHeatmap => heatmap(rows),
        PlotSpec::ConnectomeMatrix => connectome_matrix(rows),
        PlotSpec::ClassDeltas => class_deltas(rows),
    }
}

fn curve(rows: &[ResultRow], experiment: &str) -> Result<Vec<PlotTable>, HarnessError> {
    let names: Vec<String> = rows[0].params.iter().map(|(k, _)| k.clone()).collect();
    let mut order: Vec<Vec<String>> = Vec::new();
    let mut groups: BTreeMap<Vec<String>, (Mean, Mean)> = BTreeMap::new();
    for r in rows {
        let key: Vec<String> = r.params.iter().map(|(_, v)| v.clone()).collect();
        let entry = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            Default::default()
        });
        entry.0.add(r.objective);
        if let Some(a) = r.accuracy {
            entry.1.add(a);
        }
    }
    let mut records = vec![names
        .into_iter()
        .chain(["replicates".into(), "mean_objective".into(), "mean_accuracy".into()])
        .collect::<Vec<_>>()];
    for key in order {
        let (obj, acc) = &groups[&key];
        let mut rec = key.clone();
        rec.push(obj.count.to_string());
        rec.push(obj.cell());
        rec.push(acc.cell());
        records.push(rec);
    }
    Ok(vec![PlotTable {
        name: format!("{experiment}_curve.csv"),
        csv: render(&records)?,
    }])
}

fn square(labels: &[usize], cells: &BTreeMap<(usize, usize), Mean>) -> Vec<Vec<String>> {
    let mut records = vec![std::iter::once("a\\b".to_string())
        .chain(labels.iter().map(|l| l.to_string()))
        .collect::<Vec<_>>()];
    for &a in labels {
        let mut rec = vec![a.to_string()];
        for &b in labels {
            rec.push(cells.get(&(a.min(b), a.max(b))).filter(|_| a != b).map(Mean::cell).unwrap_or_default());
        }
        records.push(rec);
    }
    records
}

fn heatmap(rows: &[ResultRow]) -> Result<Vec<PlotTable>, HarnessError> {
    let mut objective: BTreeMap<(usize, usize), Mean> = BTreeMap::new();
    let mut error: BTreeMap<(usize, usize), Mean> = BTreeMap::new();
    let mut labels = std::collections::BTreeSet::new();
    for r in rows {
        let (a, b) = (index(r, "a")?, index(r, "b")?);
        let key = (a.min(b), a.max(b));
        labels.insert(a);
        labels.insert(b);
        objective.entry(key).or_default().add(r.objective);
        if let Some(acc) = r.accuracy {
            error.entry(key).or_default().add(1.0 - acc);
        }
    }
    let labels: Vec<usize> = labels.into_iter().collect();
    Ok(vec![
        PlotTable {
            name: "cosie_objective.csv".into(),
            csv: render(&square(&labels, &objective))?,
        },
        PlotTable {
            name: "cosie_error.csv".into(),
            csv: render(&square(&labels, &error))?,
        },
    ])
}

/// Modes in first-seen order.
fn modes(rows: &[ResultRow]) -> Result<Vec<String>, HarnessError> {
    let mut out: Vec<String> = Vec::new();
    for r in rows {
        let m = require(r, "mode")?;
        if !out.iter().any(|x| x == m) {
            out.push(m.to_string());
        }
    }
    Ok(out)
}

fn held_out(r: &ResultRow) -> Result<(usize, usize), HarnessError> {
    Ok((index(r, "out_class")?, index(r, "out_scan")?))
}

fn column_header(outs: &[(usize, usize)]) -> Vec<String> {
    std::iter::once("row".to_string())
        .chain(outs.iter().map(|(c, s)| format!("c{c}s{s}")))
        .collect()
}

/// Sort key of a connectome matrix row: granularity rank, then index.
type RowKey = (u8, usize);

fn connectome_matrix(rows: &[ResultRow]) -> Result<Vec<PlotTable>, HarnessError> {
    let mut tables = Vec::new();
    for mode in modes(rows)? {
        let mut outs = std::collections::BTreeSet::new();
        let mut fine_targets = std::collections::BTreeSet::new();
        let mut cells: BTreeMap<(RowKey, (usize, usize)), (Mean, Mean)> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.param("mode") == Some(mode.as_str())) {
            let out = held_out(r)?;
            outs.insert(out);
            let key = match require(r, "granularity")? {
                "fine" => {
                    let t = index(r, "target")?;
                    fine_targets.insert(t);
                    (0u8, t)
                }
                "clustered" if index(r, "target")? == out.0 => (1, 0),
                "coarse" => (2, 0),
                _ => continue,
            };
            let cell = cells.entry((key, out)).or_default();
            cell.0.add(r.objective);
            if let Some(a) = r.accuracy {
                cell.1.add(1.0 - a);
            }
        }
        let outs: Vec<(usize, usize)> = outs.into_iter().collect();
        let row_keys: Vec<((u8, usize), String)> = fine_targets
            .iter()
            .map(|&t| ((0u8, t), format!("fine_{t}")))
            .chain([((1, 0), "clustered".to_string()), ((2, 0), "coarse".to_string())])
            .collect();
        for (which, pick) in [("objective", 0usize), ("error", 1)] {
            let mut records = vec![column_header(&outs)];
            for (key, label) in &row_keys {
                let mut rec = vec![label.clone()];
                for out in &outs {
                    rec.push(
                        cells
                            .get(&(*key, *out))
                            .map(|(o, e)| if pick == 0 { o.cell() } else { e.cell() })
                            .unwrap_or_default(),
                    );
                }
                records.push(rec);
            }
            tables.push(PlotTable {
                name: format!("connectome_{mode}_{which}.csv"),
                csv: render(&records)?,
            });
        }
    }
    Ok(tables)
}

fn class_deltas(rows: &[ResultRow]) -> Result<Vec<PlotTable>, HarnessError> {
    let mut tables = Vec::new();
    for mode in modes(rows)? {
        let mut outs = std::collections::BTreeSet::new();
        let mut classes = std::collections::BTreeSet::new();
        let mut cells: BTreeMap<(usize, (usize, usize)), Mean> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.param("mode") == Some(mode.as_str())) {
            if require(r, "granularity")? != "clustered" {
                continue;
            }
            let out = held_out(r)?;
            let class = index(r, "target")?;
            outs.insert(out);
            classes.insert(class);
            cells.entry((class, out)).or_default().add(r.objective);
        }
        let outs: Vec<(usize, usize)> = outs.into_iter().collect();
        let mut records = vec![column_header(&outs)];
        for class in classes {
            let mut rec = vec![format!("class_{class}")];
            for out in &outs {
                rec.push(cells.get(&(class, *out)).map(Mean::cell).unwrap_or_default());
            }
            records.push(rec);
        }
        tables.push(PlotTable {
            name: format!("connectome_{mode}_class_deltas.csv"),
            csv: render(&records)?,
        });
    }
    Ok(tables)
}
