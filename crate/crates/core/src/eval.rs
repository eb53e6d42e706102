//! Clustering quality: macro-F1 under optimal label matching, and the
//! log-likelihood of a fitted result.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterParams;
use crate::error::{Error, Result};
use crate::mdl::cost_data;
use crate::tensor::TensorTS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub macro_f1: f64,
    /// Predicted id -> matched truth id.
    pub matching: BTreeMap<usize, usize>,
    /// Truth class ids in ascending order, aligned with `per_class_f1`.
    pub truth_classes: Vec<usize>,
    pub per_class_f1: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loglik: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n_segments: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n_clusters: Option<usize>,
}

impl EvalReport {
    pub fn with_loglik(mut self, ll: &LoglikReport) -> Self {
        self.loglik = Some(ll.loglik);
        self.n_segments = Some(ll.n_segments);
        self.n_clusters = Some(ll.n_clusters);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoglikReport {
    /// Total log-likelihood in nats.
    pub loglik: f64,
    pub n_segments: usize,
    pub n_clusters: usize,
}

fn distinct(labels: &[usize]) -> Vec<usize> {
    let mut ids = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// `f1[p][c]` for every predicted id `p` against every truth id `c`.
pub(crate) fn f1_table(pred: &[usize], truth: &[usize], pred_ids: &[usize], truth_ids: &[usize]) -> Vec<Vec<f64>> {
    let pi: BTreeMap<usize, usize> = pred_ids.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let ti: BTreeMap<usize, usize> = truth_ids.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut joint = vec![vec![0usize; truth_ids.len()]; pred_ids.len()];
    let mut pred_n = vec![0usize; pred_ids.len()];
    let mut truth_n = vec![0usize; truth_ids.len()];
    for (p, c) in pred.iter().zip(truth) {
        let (i, j) = (pi[p], ti[c]);
        joint[i][j] += 1;
        pred_n[i] += 1;
        truth_n[j] += 1;
    }
    joint
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, &n)| 2.0 * n as f64 / (pred_n[i] + truth_n[j]) as f64)
                .collect()
        })
        .collect()
}

/// Minimum-cost perfect assignment on a square matrix (Hungarian method with
/// potentials). Returns the column assigned to each row.
pub(crate) fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    // row_of[j]: 1-based row matched to column j (0 = none).
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0; n];
    for j in 1..=n {
        if row_of[j] > 0 {
            col_of[row_of[j] - 1] = j - 1;
        }
    }
    col_of
}

/// Macro-F1 over the truth classes after the injective predicted-to-truth
/// matching that maximizes it. Truth classes left unmatched score 0.
pub fn macro_f1(pred: &[usize], truth: &[usize]) -> Result<EvalReport> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predicted labels vs {} truth labels",
            pred.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::InsufficientData("no labels to compare".into()));
    }
    let pred_ids = distinct(pred);
    let truth_ids = distinct(truth);
    let f1 = f1_table(pred, truth, &pred_ids, &truth_ids);
    let n = pred_ids.len().max(truth_ids.len());
    let cost: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i < pred_ids.len() && j < truth_ids.len() { -f1[i][j] } else { 0.0 }).collect())
        .collect();
    let col_of = hungarian(&cost);
    let mut per_class_f1 = vec![0.0; truth_ids.len()];
    let mut matching = BTreeMap::new();
    for (i, &j) in col_of.iter().enumerate().take(pred_ids.len()) {
        if j < truth_ids.len() {
            per_class_f1[j] = f1[i][j];
            matching.insert(pred_ids[i], truth_ids[j]);
        }
    }
    let macro_f1 = per_class_f1.iter().sum::<f64>() / truth_ids.len() as f64;
    Ok(EvalReport {
        macro_f1,
        matching,
        truth_classes: truth_ids,
        per_class_f1,
        loglik: None,
        n_segments: None,
        n_clusters: None,
    })
}

/// Log-likelihood of `x` under the fitted result's models and assignments.
pub fn loglik_report(x: &TensorTS, result: &ClusterParams) -> Result<LoglikReport> {
    let data = cost_data(x, &result.models, &result.assignments)?;
    Ok(LoglikReport { loglik: -data, n_segments: result.assignments.m(), n_clusters: result.assignments.k })
}
