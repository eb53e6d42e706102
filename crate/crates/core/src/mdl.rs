//! Total description cost.
//!
//! Unit conventions follow the cost definitions literally: `log*` is base 2,
//! while the model and data terms use natural logarithms. The total is only
//! ever compared against other totals computed the same way.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{total_log_likelihood, ClusterModel};
use crate::segmenter::Segmentation;
use crate::tensor::TensorTS;

/// Floating point cost `c_F` in bits.
pub const FLOAT_COST: f64 = 32.0;

/// The four cost terms and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    #[serde(rename = "assign")]
    pub cost_assign: f64,
    #[serde(rename = "model")]
    pub cost_model: f64,
    #[serde(rename = "data")]
    pub cost_data: f64,
    #[serde(rename = "l1")]
    pub cost_l1: f64,
    pub total: f64,
}

impl CostBreakdown {
    pub fn new(cost_assign: f64, cost_model: f64, cost_data: f64, cost_l1: f64) -> Self {
        CostBreakdown {
            cost_assign,
            cost_model,
            cost_data,
            cost_l1,
            total: cost_assign + cost_model + cost_data + cost_l1,
        }
    }
}

/// Segment-to-cluster assignment. Cluster ids are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignments {
    pub cut_points: Segmentation,
    pub segment_cluster: Vec<usize>,
    #[serde(rename = "K")]
    pub k: usize,
}

impl Assignments {
    pub fn new(cut_points: Segmentation, segment_cluster: Vec<usize>, k: usize) -> Result<Self> {
        let a = Assignments { cut_points, segment_cluster, k };
        a.validate()?;
        Ok(a)
    }

    /// All segments in one cluster.
    pub fn single(cut_points: Segmentation) -> Self {
        let m = cut_points.len();
        Assignments { cut_points, segment_cluster: vec![1; m], k: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.segment_cluster.len() != self.cut_points.len() {
            return Err(Error::InvalidAssignments(format!(
                "{} labels for {} segments",
                self.segment_cluster.len(),
                self.cut_points.len()
            )));
        }
        if self.k == 0 {
            return Err(Error::InvalidAssignments("K must be at least 1".into()));
        }
        let mut used = vec![false; self.k];
        for &c in &self.segment_cluster {
            if c == 0 || c > self.k {
                return Err(Error::InvalidAssignments(format!("cluster id {c} outside 1..={}", self.k)));
            }
            used[c - 1] = true;
        }
        if let Some(empty) = used.iter().position(|u| !u) {
            return Err(Error::InvalidAssignments(format!("cluster {} has no segments", empty + 1)));
        }
        Ok(())
    }

    /// Number of segments `m`.
    pub fn m(&self) -> usize {
        self.segment_cluster.len()
    }

    /// `|A_k|`: time steps per cluster.
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for ((a, b), &c) in self.cut_points.segments().zip(&self.segment_cluster) {
            if c >= 1 && c <= self.k {
                sizes[c - 1] += b - a;
            }
        }
        sizes
    }

    /// Cluster id of every time step.
    pub fn labels(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.cut_points.t_len());
        for ((a, b), &c) in self.cut_points.segments().zip(&self.segment_cluster) {
            out.extend(std::iter::repeat_n(c, b - a));
        }
        out
    }

    /// 1-based segment indices `(start, end)` belonging to cluster `k`.
    pub fn members(&self, k: usize) -> Vec<(usize, usize)> {
        self.cut_points
            .segments()
            .zip(&self.segment_cluster)
            .filter(|(_, &c)| c == k)
            .map(|(s, _)| s)
            .collect()
    }
}

/// Universal integer code length `log*(x) = sum_j max(0, log2^(j)(x))`, in bits.
pub fn log_star(x: u64) -> Result<f64> {
    if x < 1 {
        return Err(Error::InvalidArgument("log* is defined for integers >= 1".into()));
    }
    Ok(log_star_unchecked(x))
}

/// `log*` with `log*(0) = 0`.
pub(crate) fn log_star_unchecked(x: u64) -> f64 {
    let mut total = 0.0;
    let mut v = x as f64;
    loop {
        v = v.log2();
        if v <= 0.0 {
            break;
        }
        total += v;
    }
    total
}

fn cost_assign_sizes(k: usize, m: usize, sizes: impl IntoIterator<Item = usize>) -> f64 {
    let lk = log_star_unchecked(k as u64);
    lk + log_star_unchecked(m as u64) + m as f64 * lk + sizes.into_iter().map(|s| log_star_unchecked(s as u64)).sum::<f64>()
}

/// `log*(K) + log*(m) + m log*(K) + sum_k log*(|A_k|)`.
pub fn cost_assign(a: &Assignments) -> Result<f64> {
    a.validate()?;
    Ok(cost_assign_sizes(a.k, a.m(), a.cluster_sizes()))
}

/// Assignment cost for `segment_sizes.len()` segments, each its own cluster.
pub(crate) fn cost_assign_solo(segment_sizes: &[usize]) -> f64 {
    let n = segment_sizes.len();
    cost_assign_sizes(n, n, segment_sizes.iter().copied())
}

/// Model coding cost of a single cluster model.
pub fn cost_model_single(model: &ClusterModel) -> f64 {
    let n_modes = model.networks.len() as f64;
    model
        .networks
        .iter()
        .map(|net| {
            let d = net.dim() as f64;
            let nnz = net.upper_nonzeros();
            let diag = d * (d.ln() + FLOAT_COST);
            let edges = if nnz == 0 { 0.0 } else { nnz as f64 * ((d * (d - 1.0) / 2.0).ln() + FLOAT_COST) };
            (diag + log_star_unchecked(nnz as u64) + edges) / (d * d * n_modes)
        })
        .sum()
}

/// `sum_k sum_n {D_n(ln D_n + c_F) + log*(nnz) + nnz(ln(D_n(D_n-1)/2) + c_F)} / (D_n^2 N)`.
pub fn cost_model(models: &[ClusterModel]) -> f64 {
    models.iter().map(cost_model_single).sum()
}

/// Negative log-likelihood (nats) of the data under the assigned models.
pub fn cost_data(x: &TensorTS, models: &[ClusterModel], a: &Assignments) -> Result<f64> {
    if a.cut_points.t_len() != x.len_t() {
        return Err(Error::DimensionMismatch(format!(
            "assignments cover {} steps, series has {}",
            a.cut_points.t_len(),
            x.len_t()
        )));
    }
    let mut nll = 0.0;
    for ((start, end), &c) in a.cut_points.segments().zip(&a.segment_cluster) {
        let model = models
            .get(c - 1)
            .ok_or_else(|| Error::InvalidAssignments(format!("cluster {c} has no model")))?;
        let seg = x.slice_time(start, end)?;
        nll -= total_log_likelihood(&seg, model)?.iter().sum::<f64>();
    }
    Ok(nll)
}

/// `lambda * sum_k sum_n ||Psi_k^(n)||_od,1`.
pub fn cost_l1(models: &[ClusterModel], lambda: f64) -> f64 {
    lambda * models.iter().flat_map(|m| &m.networks).map(|n| n.offdiag_l1()).sum::<f64>()
}

/// All four terms for a complete result.
pub fn cost_total(x: &TensorTS, models: &[ClusterModel], a: &Assignments, lambda: f64) -> Result<CostBreakdown> {
    if models.len() != a.k {
        return Err(Error::InvalidAssignments(format!("{} models for K = {}", models.len(), a.k)));
    }
    Ok(CostBreakdown::new(cost_assign(a)?, cost_model(models), cost_data(x, models, a)?, cost_l1(models, lambda)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glasso::ModeNetwork;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn seg(cps: &[usize], t: usize) -> Segmentation {
        Segmentation::new(cps.to_vec(), t).unwrap()
    }

    fn model(psis: Vec<DMatrix<f64>>) -> ClusterModel {
        let d: usize = psis.iter().map(|p| p.nrows()).product();
        ClusterModel {
            networks: psis
                .into_iter()
                .enumerate()
                .map(|(i, psi)| {
                    let n = psi.nrows();
                    ModeNetwork {
                        mode: i + 1,
                        support: DMatrix::from_fn(n, n, |a, b| a == b || psi[(a, b)] != 0.0),
                        psi,
                        converged: true,
                        iterations: 0,
                        fallback: false,
                    }
                })
                .collect(),
            mean_vec: vec![0.0; d],
            member_count: 1,
        }
    }

    #[test]
    fn log_star_values() {
        assert_eq!(log_star(1).unwrap(), 0.0);
        assert_eq!(log_star(2).unwrap(), 1.0);
        assert_eq!(log_star(16).unwrap(), 7.0);
        assert!(log_star(0).is_err());
    }

    #[test]
    fn assign_cost_cases() {
        let a = Assignments::single(seg(&[1], 300));
        assert_abs_diff_eq!(cost_assign(&a).unwrap(), log_star(300).unwrap(), epsilon = 1e-12);

        let a = Assignments::new(seg(&[1, 101, 201], 300), vec![1, 2, 1], 2).unwrap();
        assert_eq!(a.cluster_sizes(), vec![200, 100]);
        let ls = |x| log_star(x).unwrap();
        let want = ls(2) + ls(3) + 3.0 * ls(2) + ls(200) + ls(100);
        assert_abs_diff_eq!(cost_assign(&a).unwrap(), want, epsilon = 1e-12);

        let renamed = Assignments::new(seg(&[1, 101, 201], 300), vec![2, 1, 2], 2).unwrap();
        assert_eq!(cost_assign(&renamed).unwrap(), cost_assign(&a).unwrap());

        assert!(Assignments::new(seg(&[1, 101], 300), vec![1, 1], 2).is_err());
        assert!(Assignments::new(seg(&[1, 101], 300), vec![1, 3], 2).is_err());
    }

    #[test]
    fn model_cost_cases() {
        let empty = model(vec![DMatrix::identity(2, 2)]);
        let base = 2.0 * (2f64.ln() + 32.0) / 4.0;
        assert_abs_diff_eq!(cost_model(&[empty.clone()]), base, epsilon = 1e-12);

        let dense = model(vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.0])]);
        assert_abs_diff_eq!(cost_model(&[dense]), base + (0.0 + 1.0 * (1f64.ln() + 32.0)) / 4.0, epsilon = 1e-12);

        let doubled = model(vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2)]);
        assert_abs_diff_eq!(cost_model(&[doubled]), 2.0 * base / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn l1_cost_cases() {
        let m = model(vec![DMatrix::from_row_slice(2, 2, &[1.0, -0.4, -0.4, 1.0])]);
        assert_eq!(cost_l1(&[m.clone()], 0.0), 0.0);
        assert_abs_diff_eq!(cost_l1(&[m], 2.5), 2.5 * 0.8, epsilon = 1e-12);
        assert_eq!(cost_l1(&[model(vec![DMatrix::identity(3, 3)])], 4.0), 0.0);
    }

    #[test]
    fn data_cost_of_standard_normal_at_mean() {
        let x = TensorTS::new(vec![1, 5], vec![0.0; 5]).unwrap();
        let m = model(vec![DMatrix::identity(1, 1)]);
        let a = Assignments::single(seg(&[1], 5));
        let want = 5.0 * 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert_abs_diff_eq!(cost_data(&x, &[m.clone()], &a).unwrap(), want, epsilon = 1e-12);

        let total = cost_total(&x, &[m.clone()], &a, 1.0).unwrap();
        assert_abs_diff_eq!(
            total.total,
            total.cost_assign + total.cost_model + total.cost_data + total.cost_l1,
            epsilon = 1e-9
        );
        assert!(cost_total(&x, &[m.clone(), m], &a, 1.0).is_err());
    }
}
