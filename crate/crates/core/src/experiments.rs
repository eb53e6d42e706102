//! Drivers for accuracy and scaling experiments on synthetic data.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cluster::{fit, ClusterConfig, DEFAULT_LAMBDA_GRID};
use crate::error::{Error, Result};
use crate::eval::macro_f1;
use crate::segmenter::InitialWindows;
use crate::synth::{gen_tts, Sequence, STEPS_PER_SEGMENT};

/// Everything `fit` needs besides the data and the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub window: InitialWindows,
    pub lambda_grid: Vec<f64>,
    pub cluster: ClusterConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            window: InitialWindows::Constant(4),
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            cluster: ClusterConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRun {
    pub seed: u64,
    pub macro_f1: f64,
    pub k_selected: usize,
    pub k_true: usize,
    pub segments: usize,
    pub lambda: f64,
    pub seconds: f64,
}

/// Generates a series for `seed`, fits it with the same seed, and scores the
/// recovered labels against the truth.
pub fn accuracy_run(sequence: &Sequence, dims: &[usize], seed: u64, cfg: &PipelineConfig) -> Result<AccuracyRun> {
    let (x, truth) = gen_tts(sequence, dims, seed)?;
    let start = Instant::now();
    let result = fit(&x, &cfg.window, &cfg.lambda_grid, seed, &cfg.cluster)?;
    let seconds = start.elapsed().as_secs_f64();
    let report = macro_f1(&result.labels(), &truth.labels)?;
    Ok(AccuracyRun {
        seed,
        macro_f1: report.macro_f1,
        k_selected: result.k,
        k_true: sequence.n_clusters(),
        segments: result.assignments.m(),
        lambda: result.lambda,
        seconds,
    })
}

/// A sequence cycling through `k` clusters whose series has `t_len` steps.
pub fn cyclic_sequence(t_len: usize, k: usize) -> Result<Sequence> {
    if t_len == 0 || t_len % STEPS_PER_SEGMENT != 0 {
        return Err(Error::InvalidArgument(format!("T must be a positive multiple of {STEPS_PER_SEGMENT}")));
    }
    let segments = t_len / STEPS_PER_SEGMENT;
    Sequence::new((0..segments).map(|i| i % k.clamp(1, segments) + 1).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub dims: Vec<usize>,
    pub t_len: usize,
    pub seconds: f64,
}

/// Wall-clock time of one `fit` on a generated series of the given size.
pub fn time_fit(dims: &[usize], t_len: usize, seed: u64, cfg: &PipelineConfig) -> Result<ScalingPoint> {
    let (x, _) = gen_tts(&cyclic_sequence(t_len, 4)?, dims, seed)?;
    let start = Instant::now();
    fit(&x, &cfg.window, &cfg.lambda_grid, seed, &cfg.cluster)?;
    Ok(ScalingPoint { dims: dims.to_vec(), t_len, seconds: start.elapsed().as_secs_f64() })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Renders scaling points as CSV with header `dims,T,seconds`.
pub fn scaling_csv(points: &[ScalingPoint]) -> String {
    let mut out = String::from("dims,T,seconds\n");
    for p in points {
        let dims: Vec<String> = p.dims.iter().map(ToString::to_string).collect();
        out.push_str(&format!("{},{},{:.6}\n", dims.join("x"), p.t_len, p.seconds));
    }
    out
}
