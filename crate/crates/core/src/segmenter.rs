//! Bottom-up cut point detection.
//!
//! Starting from a fine segmentation, each sweep walks the segments left to
//! right and compares three candidates for the active triple: all solo, the
//! first two merged, or the last two merged. Sweeps repeat until the cut
//! points stop changing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glasso::{AdmmConfig, SuffStats};
use crate::mdl::{cost_assign_solo, cost_l1, cost_model_single};
use crate::model::ClusterModel;
use crate::tensor::TensorTS;

/// Strictly increasing 1-based segment starts with `cp_1 = 1`; the sentinel
/// `T+1` is implicit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SegmentationRepr", into = "SegmentationRepr")]
pub struct Segmentation {
    cut_points: Vec<usize>,
    t_len: usize,
}

#[derive(Serialize, Deserialize)]
struct SegmentationRepr {
    cut_points: Vec<usize>,
    #[serde(rename = "T")]
    t_len: usize,
}

impl From<Segmentation> for SegmentationRepr {
    fn from(s: Segmentation) -> Self {
        SegmentationRepr { cut_points: s.cut_points, t_len: s.t_len }
    }
}

impl TryFrom<SegmentationRepr> for Segmentation {
    type Error = Error;

    fn try_from(r: SegmentationRepr) -> Result<Self> {
        Segmentation::new(r.cut_points, r.t_len)
    }
}

impl Segmentation {
    pub fn new(cut_points: Vec<usize>, t_len: usize) -> Result<Self> {
        if t_len == 0 {
            return Err(Error::InvalidArgument("segmentation of an empty series".into()));
        }
        if cut_points.first() != Some(&1) {
            return Err(Error::InvalidArgument("first cut point must be 1".into()));
        }
        if cut_points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("cut points must be strictly increasing".into()));
        }
        if *cut_points.last().unwrap() > t_len {
            return Err(Error::InvalidArgument(format!("cut point beyond T = {t_len}")));
        }
        Ok(Segmentation { cut_points, t_len })
    }

    /// One segment covering the whole series.
    pub fn whole(t_len: usize) -> Self {
        Segmentation { cut_points: vec![1], t_len }
    }

    pub fn cut_points(&self) -> &[usize] {
        &self.cut_points
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    /// Number of segments `m`.
    pub fn len(&self) -> usize {
        self.cut_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cut_points.is_empty()
    }

    /// 1-based `(start, end)` pairs, `end` exclusive.
    pub fn segments(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cut_points
            .iter()
            .enumerate()
            .map(|(i, &a)| (a, self.cut_points.get(i + 1).copied().unwrap_or(self.t_len + 1)))
    }

    pub fn segment_lengths(&self) -> Vec<usize> {
        self.segments().map(|(a, b)| b - a).collect()
    }
}

/// Initial segment sizes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitialWindows {
    /// Every segment has this length; a shorter remainder ends the series.
    Constant(usize),
    /// Explicit lengths summing to `T`.
    Sizes(Vec<usize>),
}

pub fn init_cutpoints(t_len: usize, w: &InitialWindows) -> Result<Segmentation> {
    match w {
        InitialWindows::Constant(size) => {
            if *size == 0 {
                return Err(Error::InvalidArgument("window size must be at least 1".into()));
            }
            Segmentation::new((1..=t_len).step_by(*size).collect(), t_len)
        }
        InitialWindows::Sizes(sizes) => {
            if sizes.iter().any(|&s| s == 0) {
                return Err(Error::InvalidArgument("window sizes must be positive".into()));
            }
            let total: usize = sizes.iter().sum();
            if total != t_len {
                return Err(Error::InvalidArgument(format!("window sizes sum to {total}, series has T = {t_len}")));
            }
            let mut cps = Vec::with_capacity(sizes.len());
            let mut at = 1;
            for &s in sizes {
                cps.push(at);
                at += s;
            }
            Segmentation::new(cps, t_len)
        }
    }
}

/// Fits one model on time steps `a..b-1` (1-based, `b` exclusive).
pub fn fit_segment_model(x: &TensorTS, a: usize, b: usize, lambda: f64, cfg: &AdmmConfig) -> Result<ClusterModel> {
    if a == 0 || a >= b || b > x.len_t() + 1 {
        return Err(Error::InvalidTimeRange { start: a, end: b, len: x.len_t() });
    }
    ClusterModel::fit(&SuffStats::from_range(x, a - 1, b - 1), lambda, cfg)
}

/// Cost of one segment coded by its own model, excluding the assignment term.
fn own_cost(x: &TensorTS, a: usize, b: usize, lambda: f64, cfg: &AdmmConfig) -> Result<(f64, bool)> {
    let stats = SuffStats::from_range(x, a - 1, b - 1);
    let model = ClusterModel::fit(&stats, lambda, cfg)?;
    let nll = -model.prepare()?.log_likelihood(&stats);
    let cost = cost_model_single(&model) + cost_l1(std::slice::from_ref(&model), lambda) + nll;
    Ok((cost, model.used_fallback()))
}

/// Per-sweep record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub segments_in: usize,
    pub segments_out: usize,
    /// Total cost of the incoming segmentation with every segment its own cluster.
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub segmentation: Segmentation,
    pub sweeps: Vec<SweepRecord>,
    /// Segment fits that fell back to diagonal networks.
    pub fallback_fits: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Choice {
    Solo,
    Left,
    Right,
}

/// Picks the cheapest candidate; ties prefer solo, then left, then right.
fn choose(solo: f64, left: f64, right: f64) -> Choice {
    let mut best = (Choice::Solo, solo);
    if left < best.1 {
        best = (Choice::Left, left);
    }
    if right < best.1 {
        best = (Choice::Right, right);
    }
    best.0
}

/// One sweep; returns the surviving cut points.
fn sweep(
    x: &TensorTS,
    seg: &Segmentation,
    lambda: f64,
    cfg: &AdmmConfig,
    fallbacks: &mut usize,
) -> Result<(Vec<usize>, f64)> {
    let bounds: Vec<(usize, usize)> = seg.segments().collect();
    let m = bounds.len();
    let lengths: Vec<usize> = bounds.iter().map(|(a, b)| b - a).collect();

    let solo: Vec<(f64, bool)> = bounds
        .par_iter()
        .map(|&(a, b)| own_cost(x, a, b, lambda, cfg))
        .collect::<Result<_>>()?;
    // pair[i] merges segments i and i+1
    let pair: Vec<(f64, bool)> = (0..m.saturating_sub(1))
        .into_par_iter()
        .map(|i| own_cost(x, bounds[i].0, bounds[i + 1].1, lambda, cfg))
        .collect::<Result<_>>()?;
    *fallbacks += solo.iter().chain(&pair).filter(|c| c.1).count();

    let sweep_cost = solo.iter().map(|c| c.0).sum::<f64>() + cost_assign_solo(&lengths);

    // keep[j]: boundary between segment j and j+1 survives
    let mut keep = vec![false; m.saturating_sub(1)];
    let mut id = 0;
    while id < m {
        if id + 2 < m {
            let c_solo = solo[id].0 + solo[id + 1].0 + solo[id + 2].0 + cost_assign_solo(&lengths[id..id + 3]);
            let c_left = pair[id].0
                + solo[id + 2].0
                + cost_assign_solo(&[lengths[id] + lengths[id + 1], lengths[id + 2]]);
            let c_right = solo[id].0
                + pair[id + 1].0
                + cost_assign_solo(&[lengths[id], lengths[id + 1] + lengths[id + 2]]);
            match choose(c_solo, c_left, c_right) {
                Choice::Solo => {
                    keep[id] = true;
                    id += 1;
                }
                Choice::Left => {
                    keep[id + 1] = true;
                    id += 2;
                }
                Choice::Right => {
                    keep[id] = true;
                    if id + 2 < m - 1 {
                        keep[id + 2] = true;
                    }
                    id += 3;
                }
            }
        } else if id + 1 < m {
            let c_solo = solo[id].0 + solo[id + 1].0 + cost_assign_solo(&lengths[id..id + 2]);
            let c_merge = pair[id].0 + cost_assign_solo(&[lengths[id] + lengths[id + 1]]);
            if c_merge < c_solo {
                id += 2;
            } else {
                keep[id] = true;
                id += 1;
            }
        } else {
            id += 1;
        }
    }

    let mut cps = vec![1];
    cps.extend(keep.iter().enumerate().filter(|(_, &k)| k).map(|(j, _)| bounds[j + 1].0));
    Ok((cps, sweep_cost))
}

/// Merges segments until the cut points are stable.
pub fn detect(x: &TensorTS, cp: &Segmentation, lambda: f64, cfg: &AdmmConfig) -> Result<Detection> {
    if cp.t_len() != x.len_t() {
        return Err(Error::DimensionMismatch(format!(
            "segmentation covers {} steps, series has {}",
            cp.t_len(),
            x.len_t()
        )));
    }
    let mut current = cp.clone();
    let mut sweeps = Vec::new();
    let mut fallback_fits = 0;
    loop {
        let (cps, cost) = sweep(x, &current, lambda, cfg, &mut fallback_fits)?;
        sweeps.push(SweepRecord { segments_in: current.len(), segments_out: cps.len(), cost });
        log::debug!("cut point sweep {}: {} -> {} segments, cost {cost:.3}", sweeps.len(), current.len(), cps.len());
        if cps == current.cut_points() {
            break;
        }
        current = Segmentation::new(cps, x.len_t())?;
    }
    Ok(Detection { segmentation: current, sweeps, fallback_fits })
}
