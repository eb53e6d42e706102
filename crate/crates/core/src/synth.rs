//! Synthetic tensor time series with known cluster structure.
//!
//! Every cluster gets one random sparse network per mode; the networks are
//! assembled hierarchically, shifted to be positive definite, and used as the
//! precision of zero-mean Gaussian samples.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::assemble_hierarchical;
use crate::segmenter::Segmentation;
use crate::tensor::TensorTS;

/// Probability that an unordered variable pair is connected.
pub const EDGE_PROB: f64 = 0.2;
/// Range of edge weight magnitudes.
pub const WEIGHT_RANGE: (f64, f64) = (0.3, 0.6);
/// Smallest eigenvalue of every generated precision.
pub const MIN_EIGENVALUE: f64 = 0.1;
/// Time steps contributed per segment of a cluster.
pub const STEPS_PER_SEGMENT: usize = 100;
/// Shortest generated segment.
pub const MIN_SEGMENT: usize = 20;

/// An ordered list of 1-based cluster ids, one per segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequence(Vec<usize>);

impl Sequence {
    pub fn new(ids: Vec<usize>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::InvalidArgument("empty cluster sequence".into()));
        }
        let k = *ids.iter().max().unwrap();
        if ids.contains(&0) {
            return Err(Error::InvalidArgument("cluster ids are 1-based".into()));
        }
        if let Some(missing) = (1..=k).find(|c| !ids.contains(c)) {
            return Err(Error::InvalidArgument(format!("cluster {missing} never appears in the sequence")));
        }
        Ok(Sequence(ids))
    }

    /// One of the named benchmark sequences `A`-`D`.
    pub fn named(name: &str) -> Option<Self> {
        let ids = match name {
            "A" => vec![1, 2, 1],
            "B" => vec![1, 2, 3, 2, 1],
            "C" => vec![1, 2, 3, 4, 1, 2, 3, 4],
            "D" => vec![1, 2, 2, 1, 3, 3, 3, 1],
            _ => return None,
        };
        Some(Sequence(ids))
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn n_clusters(&self) -> usize {
        *self.0.iter().max().unwrap()
    }

    /// Segments per cluster.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_clusters()];
        for &c in &self.0 {
            counts[c - 1] += 1;
        }
        counts
    }
}

impl FromStr for Sequence {
    type Err = Error;

    /// Accepts a named sequence (`A`-`D`) or a comma-separated id list.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(seq) = Sequence::named(&s.to_ascii_uppercase()) {
            return Ok(seq);
        }
        let ids = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::InvalidArgument(format!("unknown sequence '{s}'")))?;
        Sequence::new(ids)
    }
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

/// The generator's hidden truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    /// Cluster id per time step.
    pub labels: Vec<usize>,
    pub true_cut_points: Segmentation,
    /// `[cluster][mode]` weighted adjacency.
    #[serde(serialize_with = "nested_rows")]
    pub true_networks: Vec<Vec<DMatrix<f64>>>,
    /// Per-cluster `D x D` precision of `vec(X_t)`.
    #[serde(serialize_with = "matrix_list_rows")]
    pub assembled_precisions: Vec<DMatrix<f64>>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_list_rows<S: Serializer>(ms: &[DMatrix<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(ms.iter().map(rows))
}

fn nested_rows<S: Serializer>(ms: &[Vec<DMatrix<f64>>], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(ms.iter().map(|c| c.iter().map(rows).collect::<Vec<_>>()))
}

/// Symmetric Erdős–Rényi adjacency with zero diagonal and weights of random
/// sign and magnitude in [`WEIGHT_RANGE`].
pub fn gen_mode_network<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        for i in 0..j {
            if rng.random::<f64>() < EDGE_PROB {
                let mag = rng.random_range(WEIGHT_RANGE.0..=WEIGHT_RANGE.1);
                let w = if rng.random::<bool>() { mag } else { -mag };
                m[(i, j)] = w;
                m[(j, i)] = w;
            }
        }
    }
    m
}

/// Hierarchical assembly shifted so the smallest eigenvalue is at least
/// [`MIN_EIGENVALUE`].
pub fn build_cluster_precision(networks: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let mut theta = assemble_hierarchical(networks)?;
    let c = theta.clone().symmetric_eigenvalues().min();
    let shift = MIN_EIGENVALUE + c.abs();
    for i in 0..theta.nrows() {
        theta[(i, i)] += shift;
    }
    Ok(theta)
}

/// Uniform composition of `total` into `parts` pieces, each at least `min`.
fn random_composition<R: Rng + ?Sized>(total: usize, parts: usize, min: usize, rng: &mut R) -> Vec<usize> {
    debug_assert!(parts >= 1 && total >= parts * min);
    let slack = total - parts * min;
    // Stars and bars: choose the positions of parts-1 bars among slack+parts-1 slots.
    let mut bars: Vec<usize> = sample(rng, slack + parts - 1, parts - 1).into_vec();
    bars.sort_unstable();
    let mut out = Vec::with_capacity(parts);
    let mut prev = 0;
    for (i, &b) in bars.iter().enumerate() {
        out.push(b - i - prev + min);
        prev = b - i;
    }
    out.push(slack - prev + min);
    out
}

/// Draws `n` samples of `N(0, theta^-1)`, appending them to `out`.
fn sample_gaussian<R: Rng + ?Sized>(theta: &DMatrix<f64>, n: usize, rng: &mut R, out: &mut Vec<f64>) -> Result<()> {
    let dim = theta.nrows();
    let chol = theta
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidModel("precision is not positive definite".into()))?;
    // theta = L L^T, so x = L^-T z has covariance theta^-1.
    let lt = chol.l().transpose();
    for _ in 0..n {
        let z = nalgebra::DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = lt
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::InvalidModel("singular Cholesky factor".into()))?;
        out.extend(x.iter());
    }
    Ok(())
}

/// Generates a labelled series: each cluster contributes
/// `STEPS_PER_SEGMENT` steps per occurrence in `sequence`, split randomly
/// across its segments.
pub fn gen_tts(sequence: &Sequence, dims: &[usize], seed: u64) -> Result<(TensorTS, GroundTruth)> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::InvalidShape(format!("invalid variable dims {dims:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = sequence.n_clusters();
    let true_networks: Vec<Vec<DMatrix<f64>>> =
        (0..k).map(|_| dims.iter().map(|&d| gen_mode_network(d, &mut rng)).collect()).collect();
    let precisions = true_networks
        .iter()
        .map(|nets| build_cluster_precision(nets))
        .collect::<Result<Vec<_>>>()?;

    let counts = sequence.counts();
    let mut lengths: Vec<std::vec::IntoIter<usize>> = counts
        .iter()
        .map(|&g| random_composition(STEPS_PER_SEGMENT * g, g, MIN_SEGMENT, &mut rng).into_iter())
        .collect();

    let d: usize = dims.iter().product();
    let t_len = STEPS_PER_SEGMENT * sequence.ids().len();
    let mut data = Vec::with_capacity(d * t_len);
    let mut labels = Vec::with_capacity(t_len);
    let mut cut_points = Vec::with_capacity(sequence.ids().len());
    for &c in sequence.ids() {
        let len = lengths[c - 1].next().expect("one length per segment");
        cut_points.push(labels.len() + 1);
        labels.extend(std::iter::repeat_n(c, len));
        sample_gaussian(&precisions[c - 1], len, &mut rng, &mut data)?;
    }
    let mut shape = dims.to_vec();
    shape.push(t_len);
    let x = TensorTS::new(shape, data)?;
    let truth = GroundTruth {
        labels,
        true_cut_points: Segmentation::new(cut_points, t_len)?,
        true_networks,
        assembled_precisions: precisions,
    };
    Ok((x, truth))
}
