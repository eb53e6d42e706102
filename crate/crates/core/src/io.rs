//! File formats: `.tts` tensors, label CSVs and result JSON.
//!
//! A `.tts` file holds optional `#` comment lines, a header line with the
//! dimensions `D1 .. DN T`, and then `T` rows of `D1 * .. * DN` values in
//! mode-1-fastest order. A comment of the form `# labels <n>: a b c` names
//! the variables of mode `n`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterParams, Diagnostics, LambdaTrace};
use crate::error::{Error, Result};
use crate::mdl::{Assignments, CostBreakdown};
use crate::model::ClusterModel;
use crate::segmenter::Segmentation;
use crate::tensor::{interpolate_missing, TensorTS};

const LABELS_PREFIX: &str = "labels";

fn parse_labels_comment(body: &str) -> Option<(usize, Vec<String>)> {
    let rest = body.trim().strip_prefix(LABELS_PREFIX)?;
    let (mode, names) = rest.split_once(':')?;
    let mode = mode.trim().parse().ok()?;
    Some((mode, names.split_whitespace().map(str::to_owned).collect()))
}

/// Parses a `.tts` stream. Missing values (`nan`) are filled by linear
/// interpolation when `interpolate` is set and rejected otherwise.
pub fn read_tts<R: Read>(reader: R, interpolate: bool) -> Result<TensorTS> {
    let mut header: Option<Vec<usize>> = None;
    let mut data = Vec::new();
    let mut rows = 0;
    let mut labels: Vec<(usize, Vec<String>)> = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if let Some(body) = trimmed.strip_prefix('#') {
            if let Some(l) = parse_labels_comment(body) {
                labels.push(l);
            }
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        match &header {
            None => {
                let dims = trimmed
                    .split_whitespace()
                    .map(|tok| tok.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Parse { line: lineno, msg: format!("bad header: {e}") })?;
                if dims.len() < 2 || dims.contains(&0) {
                    return Err(Error::Parse { line: lineno, msg: "header needs positive D1 .. DN T".into() });
                }
                header = Some(dims);
            }
            Some(shape) => {
                let d: usize = shape[..shape.len() - 1].iter().product();
                let t_len = shape[shape.len() - 1];
                if rows == t_len {
                    return Err(Error::Parse { line: lineno, msg: format!("more than {t_len} data rows") });
                }
                let before = data.len();
                for tok in trimmed.split_whitespace() {
                    let v: f64 = tok
                        .parse()
                        .map_err(|_| Error::Parse { line: lineno, msg: format!("invalid number '{tok}'") })?;
                    if v.is_infinite() {
                        return Err(Error::Parse { line: lineno, msg: "infinite value".into() });
                    }
                    if v.is_nan() && !interpolate {
                        return Err(Error::Parse {
                            line: lineno,
                            msg: "missing value (enable interpolation to fill it)".into(),
                        });
                    }
                    data.push(v);
                }
                if data.len() - before != d {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("expected {d} values, found {}", data.len() - before),
                    });
                }
                rows += 1;
            }
        }
    }
    let shape = header.ok_or(Error::Parse { line: 0, msg: "missing header".into() })?;
    let t_len = shape[shape.len() - 1];
    if rows != t_len {
        return Err(Error::Parse { line: 0, msg: format!("expected {t_len} data rows, found {rows}") });
    }
    let d = data.len() / t_len;
    let filled = interpolate_missing(&mut data, d)?;
    if filled > 0 {
        log::info!("interpolated {filled} missing values");
    }
    let n_modes = shape.len() - 1;
    let x = TensorTS::new(shape, data)?;
    if labels.is_empty() {
        return Ok(x);
    }
    let mut per_mode: Vec<Option<Vec<String>>> = vec![None; n_modes];
    for (mode, names) in labels {
        if mode == 0 || mode > n_modes {
            return Err(Error::Parse { line: 0, msg: format!("labels for unknown mode {mode}") });
        }
        per_mode[mode - 1] = Some(names);
    }
    let all = per_mode
        .into_iter()
        .enumerate()
        .map(|(n, l)| l.unwrap_or_else(|| (1..=x.dims()[n]).map(|i| i.to_string()).collect()))
        .collect();
    x.with_mode_labels(all)
}

pub fn read_tts_file(path: &Path, interpolate: bool) -> Result<TensorTS> {
    read_tts(File::open(path)?, interpolate)
}

pub fn write_tts<W: Write>(mut w: W, x: &TensorTS) -> Result<()> {
    if let Some(labels) = x.mode_labels() {
        for (n, names) in labels.iter().enumerate() {
            writeln!(w, "# {LABELS_PREFIX} {}: {}", n + 1, names.join(" "))?;
        }
    }
    let header: Vec<String> = x.shape().iter().map(ToString::to_string).collect();
    writeln!(w, "{}", header.join(" "))?;
    for t in 0..x.len_t() {
        let row: Vec<String> = x.row(t).iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

pub fn write_tts_file(path: &Path, x: &TensorTS) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tts(&mut w, x)?;
    w.flush()?;
    Ok(())
}

/// Writes `t,cluster` rows with 1-based time.
pub fn write_labels_csv<W: Write>(mut w: W, labels: &[usize]) -> Result<()> {
    writeln!(w, "t,cluster")?;
    for (t, c) in labels.iter().enumerate() {
        writeln!(w, "{},{c}", t + 1)?;
    }
    Ok(())
}

pub fn write_labels_file(path: &Path, labels: &[usize]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_labels_csv(&mut w, labels)?;
    w.flush()?;
    Ok(())
}

/// Reads a `t,cluster` CSV; rows must list `t = 1, 2, ..` in order.
pub fn read_labels_csv<R: Read>(reader: R) -> Result<Vec<usize>> {
    let mut labels = Vec::new();
    let mut lines = BufReader::new(reader).lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h.trim() == "t,cluster" => {}
        Some((_, Err(e))) => return Err(e.into()),
        _ => return Err(Error::Parse { line: 1, msg: "expected header 't,cluster'".into() }),
    }
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (t, c) = line
            .trim()
            .split_once(',')
            .ok_or(Error::Parse { line: lineno, msg: "expected 't,cluster'".into() })?;
        let bad = |what: &str| Error::Parse { line: lineno, msg: format!("invalid {what}") };
        let t: usize = t.trim().parse().map_err(|_| bad("time index"))?;
        let c: usize = c.trim().parse().map_err(|_| bad("cluster id"))?;
        if t != labels.len() + 1 {
            return Err(Error::Parse { line: lineno, msg: format!("expected t = {}, found {t}", labels.len() + 1) });
        }
        labels.push(c);
    }
    Ok(labels)
}

pub fn read_labels_file(path: &Path) -> Result<Vec<usize>> {
    read_labels_csv(File::open(path)?)
}

/// On-disk form of a clustering result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub shape: Vec<usize>,
    pub lambda: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub cut_points: Vec<usize>,
    pub segment_cluster: Vec<usize>,
    pub clusters: Vec<ClusterModel>,
    pub costs: CostBreakdown,
    pub diagnostics: Diagnostics,
    pub lambda_trace: Vec<LambdaTrace>,
}

impl ResultFile {
    pub fn new(shape: &[usize], params: &ClusterParams) -> Self {
        let mut diagnostics = params.diagnostics.clone();
        let lambda_trace = std::mem::take(&mut diagnostics.lambda_trace);
        ResultFile {
            shape: shape.to_vec(),
            lambda: params.lambda,
            k: params.k,
            cut_points: params.assignments.cut_points.cut_points().to_vec(),
            segment_cluster: params.assignments.segment_cluster.clone(),
            clusters: params.models.clone(),
            costs: params.costs,
            diagnostics,
            lambda_trace,
        }
    }

    /// Rebuilds and validates the result.
    pub fn into_params(self) -> Result<ClusterParams> {
        let t_len = *self.shape.last().ok_or_else(|| Error::InvalidShape("empty shape".into()))?;
        let dims = &self.shape[..self.shape.len() - 1];
        let seg = Segmentation::new(self.cut_points, t_len)?;
        let assignments = Assignments::new(seg, self.segment_cluster, self.k)?;
        if self.clusters.len() != self.k {
            return Err(Error::InvalidModel(format!("{} models for K = {}", self.clusters.len(), self.k)));
        }
        for m in &self.clusters {
            m.validate(dims)?;
        }
        let mut diagnostics = self.diagnostics;
        diagnostics.lambda_trace = self.lambda_trace;
        Ok(ClusterParams {
            assignments,
            models: self.clusters,
            lambda: self.lambda,
            k: self.k,
            costs: self.costs,
            diagnostics,
        })
    }
}

pub fn write_json<T: Serialize, W: Write>(mut w: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_json(&mut w, value)?;
    w.flush()?;
    Ok(())
}

pub fn read_result_file(path: &Path) -> Result<ResultFile> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}
