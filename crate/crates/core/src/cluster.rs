//! Cluster detection: EM over segment assignments with MDL-driven choice of
//! the cluster count and the sparsity weight.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glasso::{AdmmConfig, SuffStats};
use crate::mdl::{cost_total, Assignments, CostBreakdown};
use crate::model::ClusterModel;
use crate::segmenter::{detect, init_cutpoints, InitialWindows, Segmentation, SweepRecord};
use crate::tensor::TensorTS;

/// Sparsity weights searched by default.
pub const DEFAULT_LAMBDA_GRID: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub admm: AdmmConfig,
    pub max_em_iters: usize,
    /// Random initializations per cluster count; the cheapest is kept.
    pub restarts: usize,
    /// Upper bound on the cluster count (also capped by the segment count).
    pub k_max: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig { admm: AdmmConfig::default(), max_em_iters: 20, restarts: 1, k_max: 20 }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        self.admm.validate()?;
        if self.max_em_iters == 0 || self.restarts == 0 || self.k_max == 0 {
            return Err(Error::InvalidArgument("max_em_iters, restarts and k_max must be at least 1".into()));
        }
        Ok(())
    }
}

/// Outcome of one cluster count in the outer search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KTrace {
    /// Requested cluster count.
    pub k: usize,
    /// Clusters left after dropping empty ones.
    pub effective_k: usize,
    pub total: f64,
    pub em_iterations: usize,
    pub em_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaTrace {
    pub lambda: f64,
    pub total: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub segments: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub em_iterations: usize,
    pub em_converged: bool,
    pub k_trace: Vec<KTrace>,
    #[serde(default)]
    pub segmenter_sweeps: Vec<SweepRecord>,
    #[serde(default)]
    pub fallback_fits: usize,
    /// Networks of the final models whose ADMM run hit the iteration cap.
    #[serde(default)]
    pub nonconverged_networks: usize,
    #[serde(default)]
    pub lambda_trace: Vec<LambdaTrace>,
}

/// The full clustering result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub assignments: Assignments,
    pub models: Vec<ClusterModel>,
    pub lambda: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub costs: CostBreakdown,
    pub diagnostics: Diagnostics,
}

impl ClusterParams {
    pub fn segmentation(&self) -> &Segmentation {
        &self.assignments.cut_points
    }

    /// Cluster id of every time step.
    pub fn labels(&self) -> Vec<usize> {
        self.assignments.labels()
    }
}

fn segment_stats(x: &TensorTS, cp: &Segmentation) -> Vec<SuffStats> {
    let bounds: Vec<(usize, usize)> = cp.segments().collect();
    bounds.par_iter().map(|&(a, b)| SuffStats::from_range(x, a - 1, b - 1)).collect()
}

/// Raw E-step: 0-based best model per segment, ties to the lowest index.
fn e_step(stats: &[SuffStats], models: &[ClusterModel]) -> Result<Vec<usize>> {
    let prepared = models.iter().map(ClusterModel::prepare).collect::<Result<Vec<_>>>()?;
    Ok(stats
        .par_iter()
        .map(|s| {
            let mut best = (0, f64::INFINITY);
            for (k, p) in prepared.iter().enumerate() {
                let cost = -p.log_likelihood(s);
                if cost < best.1 {
                    best = (k, cost);
                }
            }
            best.0
        })
        .collect())
}

/// Renumbers 0-based labels densely, keeping the original order.
/// Returns the new labels and the surviving original indices.
fn compact(labels: &[usize], k: usize) -> (Vec<usize>, Vec<usize>) {
    let mut used = vec![false; k];
    for &l in labels {
        used[l] = true;
    }
    let kept: Vec<usize> = (0..k).filter(|&c| used[c]).collect();
    let mut remap = vec![usize::MAX; k];
    for (new, &old) in kept.iter().enumerate() {
        remap[old] = new;
    }
    (labels.iter().map(|&l| remap[l]).collect(), kept)
}

/// Assigns each segment to the model with the lowest data coding cost.
///
/// Returns compacted assignments (unused models dropped) and the 0-based
/// indices of the models that kept at least one segment; cluster `c` of the
/// assignments corresponds to `models[kept[c - 1]]`.
pub fn assign_segments(x: &TensorTS, models: &[ClusterModel], cp: &Segmentation) -> Result<(Assignments, Vec<usize>)> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("at least one model is required".into()));
    }
    if cp.t_len() != x.len_t() {
        return Err(Error::DimensionMismatch("segmentation and series lengths differ".into()));
    }
    for m in models {
        m.validate(x.dims())?;
    }
    let raw = e_step(&segment_stats(x, cp), models)?;
    let (labels, kept) = compact(&raw, models.len());
    let k = kept.len();
    let a = Assignments::new(cp.clone(), labels.into_iter().map(|l| l + 1).collect(), k)?;
    Ok((a, kept))
}

/// M-step: one model per cluster, pooled over its member time steps in time order.
pub fn infer_networks(x: &TensorTS, a: &Assignments, lambda: f64, cfg: &AdmmConfig) -> Result<Vec<ClusterModel>> {
    a.validate()?;
    if a.cut_points.t_len() != x.len_t() {
        return Err(Error::DimensionMismatch("assignments and series lengths differ".into()));
    }
    (1..=a.k)
        .into_par_iter()
        .map(|k| {
            let mut stats = SuffStats::zeros(x.dims());
            for (s, e) in a.members(k) {
                stats.push_range(x, s - 1, e - 1);
            }
            ClusterModel::fit(&stats, lambda, cfg)
        })
        .collect()
}

struct EmOutcome {
    assignments: Assignments,
    models: Vec<ClusterModel>,
    iterations: usize,
    converged: bool,
}

fn run_em(
    x: &TensorTS,
    cp: &Segmentation,
    stats: &[SuffStats],
    init: Vec<usize>,
    k: usize,
    lambda: f64,
    cfg: &ClusterConfig,
) -> Result<EmOutcome> {
    let (mut labels, kept) = compact(&init, k);
    let mut k_cur = kept.len();
    let to_assign = |labels: &[usize], k: usize| Assignments::new(cp.clone(), labels.iter().map(|l| l + 1).collect(), k);
    let mut assignments = to_assign(&labels, k_cur)?;
    let mut models = infer_networks(x, &assignments, lambda, &cfg.admm)?;
    let mut history = vec![labels.clone()];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_em_iters {
        iterations += 1;
        let raw = e_step(stats, &models)?;
        let (next, kept) = compact(&raw, k_cur);
        if next == labels {
            converged = true;
            break;
        }
        let repeated = history.contains(&next);
        labels = next;
        k_cur = kept.len();
        assignments = to_assign(&labels, k_cur)?;
        models = infer_networks(x, &assignments, lambda, &cfg.admm)?;
        if repeated {
            log::debug!("EM revisited an earlier assignment after {iterations} iterations");
            break;
        }
        history.push(labels.clone());
    }
    Ok(EmOutcome { assignments, models, iterations, converged })
}

/// Random segment-to-cluster labels in which every cluster gets a segment.
fn random_labels(m: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    let mut labels = vec![0; m];
    for (rank, &seg) in order.iter().enumerate() {
        labels[seg] = if rank < k { rank } else { rng.random_range(0..k) };
    }
    labels
}

fn count_nonconverged(models: &[ClusterModel]) -> usize {
    models.iter().flat_map(|m| &m.networks).filter(|n| !n.converged).count()
}

/// Searches `K = 1, 2, ..` while the total description cost keeps
/// decreasing, running EM at each `K` from a seeded random assignment.
pub fn detect_clusters(x: &TensorTS, cp: &Segmentation, lambda: f64, seed: u64, cfg: &ClusterConfig) -> Result<ClusterParams> {
    cfg.validate()?;
    if cp.t_len() != x.len_t() {
        return Err(Error::DimensionMismatch("segmentation and series lengths differ".into()));
    }
    let stats = segment_stats(x, cp);
    let m = cp.len();

    let single = Assignments::single(cp.clone());
    let models = infer_networks(x, &single, lambda, &cfg.admm)?;
    let costs = cost_total(x, &models, &single, lambda)?;
    let mut k_trace = vec![KTrace { k: 1, effective_k: 1, total: costs.total, em_iterations: 0, em_converged: true }];
    let mut best = ClusterParams {
        assignments: single,
        models,
        lambda,
        k: 1,
        costs,
        diagnostics: Diagnostics { em_iterations: 0, em_converged: true, ..Diagnostics::default() },
    };
    let mut previous = costs.total;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 2..=m.min(cfg.k_max) {
        let mut best_k: Option<(EmOutcome, CostBreakdown)> = None;
        for _ in 0..cfg.restarts {
            let init = random_labels(m, k, &mut rng);
            let outcome = run_em(x, cp, &stats, init, k, lambda, cfg)?;
            let c = cost_total(x, &outcome.models, &outcome.assignments, lambda)?;
            if best_k.as_ref().is_none_or(|(_, bc)| c.total < bc.total) {
                best_k = Some((outcome, c));
            }
        }
        let (outcome, c) = best_k.expect("at least one restart");
        log::debug!(
            "lambda {lambda}: K = {k} (effective {}) cost {:.3} after {} EM iterations",
            outcome.assignments.k,
            c.total,
            outcome.iterations
        );
        k_trace.push(KTrace {
            k,
            effective_k: outcome.assignments.k,
            total: c.total,
            em_iterations: outcome.iterations,
            em_converged: outcome.converged,
        });
        if c.total < best.costs.total {
            best = ClusterParams {
                k: outcome.assignments.k,
                assignments: outcome.assignments,
                models: outcome.models,
                lambda,
                costs: c,
                diagnostics: Diagnostics {
                    em_iterations: outcome.iterations,
                    em_converged: outcome.converged,
                    ..Diagnostics::default()
                },
            };
        }
        if c.total >= previous {
            break;
        }
        previous = c.total;
    }
    best.diagnostics.k_trace = k_trace;
    best.diagnostics.nonconverged_networks = count_nonconverged(&best.models);
    Ok(best)
}

/// Full pipeline for every sparsity weight in `lambda_grid`; returns the run
/// with the lowest total description cost.
pub fn fit(x: &TensorTS, w: &InitialWindows, lambda_grid: &[f64], seed: u64, cfg: &ClusterConfig) -> Result<ClusterParams> {
    cfg.validate()?;
    if lambda_grid.is_empty() {
        return Err(Error::InvalidArgument("empty lambda grid".into()));
    }
    if let Some(bad) = lambda_grid.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(Error::InvalidArgument(format!("invalid lambda {bad}")));
    }
    let initial = init_cutpoints(x.len_t(), w)?;
    let runs: Vec<ClusterParams> = lambda_grid
        .par_iter()
        .map(|&lambda| {
            let detection = detect(x, &initial, lambda, &cfg.admm)?;
            let mut params = detect_clusters(x, &detection.segmentation, lambda, seed, cfg)?;
            params.diagnostics.segmenter_sweeps = detection.sweeps;
            params.diagnostics.fallback_fits = detection.fallback_fits;
            Ok(params)
        })
        .collect::<Result<_>>()?;
    let trace: Vec<LambdaTrace> = runs
        .iter()
        .map(|r| LambdaTrace { lambda: r.lambda, total: r.costs.total, k: r.k, segments: r.assignments.m() })
        .collect();
    let mut best = runs
        .into_iter()
        .reduce(|a, b| if b.costs.total < a.costs.total { b } else { a })
        .expect("non-empty grid");
    best.diagnostics.lambda_trace = trace;
    Ok(best)
}
