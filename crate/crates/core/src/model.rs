//! A cluster model: one network per mode plus the member mean.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glasso::{fit_network_or_fallback, mode_log_likelihood, AdmmConfig, ModeNetwork, PreparedMode, SuffStats};
use crate::tensor::{ModeLayout, TensorTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub networks: Vec<ModeNetwork>,
    /// Mean of the member observations in `vec(X_t)` order.
    pub mean_vec: Vec<f64>,
    pub member_count: usize,
}

impl ClusterModel {
    /// Fits every mode network on pooled statistics.
    pub fn fit(stats: &SuffStats, lambda: f64, cfg: &AdmmConfig) -> Result<Self> {
        let dims = stats.dims();
        let networks = (1..=dims.len())
            .map(|mode| fit_network_or_fallback(stats, mode, lambda, cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(ClusterModel { networks, mean_vec: stats.mean_vec(), member_count: stats.count })
    }

    pub fn dims(&self) -> Vec<usize> {
        self.networks.iter().map(ModeNetwork::dim).collect()
    }

    pub fn converged(&self) -> bool {
        self.networks.iter().all(|n| n.converged)
    }

    pub fn used_fallback(&self) -> bool {
        self.networks.iter().any(|n| n.fallback)
    }

    /// Checks shape agreement with `dims` and positive definiteness.
    pub fn validate(&self, dims: &[usize]) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::DimensionMismatch(format!(
                "model dims {:?} vs data dims {dims:?}",
                self.dims()
            )));
        }
        if self.mean_vec.len() != dims.iter().product::<usize>() {
            return Err(Error::DimensionMismatch("mean vector length".into()));
        }
        for (i, net) in self.networks.iter().enumerate() {
            if net.mode != i + 1 {
                return Err(Error::InvalidModel(format!("network {} labelled mode {}", i + 1, net.mode)));
            }
            net.validate()?;
        }
        Ok(())
    }

    /// Per-fibre means `mu_d` of mode `n` as a `p^(n) x D_n` matrix.
    pub fn mode_means(&self, mode: usize) -> DMatrix<f64> {
        let layout = ModeLayout::new(&self.dims(), mode - 1);
        DMatrix::from_fn(layout.probdim(), layout.dim, |d, i| self.mean_vec[layout.offset(d, i)])
    }

    pub(crate) fn prepare(&self) -> Result<PreparedModel> {
        let dims = self.dims();
        let modes = self
            .networks
            .iter()
            .map(|net| PreparedMode::new(&dims, net, &self.mean_vec))
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedModel { modes })
    }
}

/// Cached per-mode quantities for repeated likelihood evaluation.
#[derive(Debug, Clone)]
pub(crate) struct PreparedModel {
    modes: Vec<PreparedMode>,
}

impl PreparedModel {
    /// `sum_t sum_n ll^(n)(t)` over the time steps summarized by `stats`.
    pub fn log_likelihood(&self, stats: &SuffStats) -> f64 {
        self.modes.iter().map(|m| m.log_likelihood(stats)).sum()
    }
}

/// Builds the `D x D` hierarchical precision from per-mode networks.
///
/// Level 1 is `Psi^(1)`; level `n` repeats level `n-1` along its block
/// diagonal and places `psi^(n)_ij * I` off the diagonal. Diagonal entries of
/// `Psi^(n)` for `n >= 2` do not appear.
pub fn assemble_hierarchical(networks: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let Some(first) = networks.first() else {
        return Err(Error::DimensionMismatch("no networks to assemble".into()));
    };
    for (n, m) in networks.iter().enumerate() {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!("network {} is not square", n + 1)));
        }
    }
    let mut theta = first.clone();
    for psi in &networks[1..] {
        let block = theta.nrows();
        let dn = psi.nrows();
        let mut next = DMatrix::zeros(block * dn, block * dn);
        for bi in 0..dn {
            for bj in 0..dn {
                if bi == bj {
                    next.view_mut((bi * block, bj * block), (block, block)).copy_from(&theta);
                } else {
                    let w = psi[(bi, bj)];
                    for k in 0..block {
                        next[(bi * block + k, bj * block + k)] = w;
                    }
                }
            }
        }
        theta = next;
    }
    Ok(theta)
}

/// Per-time total log-likelihood `sum_n ll^(n)(t)` of a series under a model.
pub fn total_log_likelihood(x: &TensorTS, model: &ClusterModel) -> Result<Vec<f64>> {
    model.validate(x.dims())?;
    let mut total = vec![0.0; x.len_t()];
    for (n, net) in model.networks.iter().enumerate() {
        let mode = n + 1;
        let ll = mode_log_likelihood(&x.mode_slices(mode)?, &model.mode_means(mode), net)?;
        for (acc, v) in total.iter_mut().zip(ll) {
            *acc += v;
        }
    }
    Ok(total)
}
