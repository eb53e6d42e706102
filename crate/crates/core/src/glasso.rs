//! Per-mode sparse inverse covariance estimation.
//!
//! For mode `n` every time step contributes `p^(n)` fibres of length `D_n`.
//! The pooled covariance divides by `T * p^(n)`, which absorbs the `1/p^(n)`
//! factor of the per-mode log-likelihood, so the graphical lasso problem
//! solved here is
//!
//! ```text
//! minimize  lambda * ||Psi||_od,1 + (T/2) * (tr(S Psi) - log det Psi)
//! ```
//!
//! over symmetric positive definite `Psi`.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ModeLayout, ModeSlices, TensorTS};

/// Eigenvalue tolerance below which a covariance is rejected as not PSD.
const PSD_TOL: f64 = 1e-10;
/// Variances below this make the penalized likelihood unbounded.
const MIN_VARIANCE: f64 = 1e-12;

/// Empirical per-fibre means and pooled covariance of one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeStats {
    /// 1-based mode index.
    pub mode: usize,
    /// `p^(n) x D_n`; row `d` is the mean of fibre `d`.
    pub means: DMatrix<f64>,
    /// `D_n x D_n` pooled covariance `S`.
    pub pooled_cov: DMatrix<f64>,
    pub t_count: usize,
    pub probdim: usize,
}

impl ModeStats {
    pub fn dim(&self) -> usize {
        self.pooled_cov.nrows()
    }
}

/// Computes fibre means and the pooled covariance from a `(T, p, D_n)` slice array.
pub fn compute_mode_stats(slices: &ModeSlices, mode: usize) -> Result<ModeStats> {
    let (t_len, p, dim) = (slices.t_len, slices.probdim, slices.dim);
    if t_len * p < 2 || t_len == 0 {
        return Err(Error::InsufficientData(format!(
            "{t_len} time steps x {p} fibres is too few samples for a covariance"
        )));
    }
    let mut means = DMatrix::zeros(p, dim);
    for t in 0..t_len {
        for d in 0..p {
            for (i, v) in slices.fibre(t, d).iter().enumerate() {
                means[(d, i)] += v;
            }
        }
    }
    means /= t_len as f64;
    let mut cov = DMatrix::zeros(dim, dim);
    let mut centered = vec![0.0; dim];
    for t in 0..t_len {
        for d in 0..p {
            for (i, v) in slices.fibre(t, d).iter().enumerate() {
                centered[i] = v - means[(d, i)];
            }
            for j in 0..dim {
                for i in 0..dim {
                    cov[(i, j)] += centered[i] * centered[j];
                }
            }
        }
    }
    cov /= (t_len * p) as f64;
    Ok(ModeStats { mode, means, pooled_cov: cov, t_count: t_len, probdim: p })
}

/// Additive sufficient statistics of a set of time steps: count, the sum of
/// `vec(X_t)` and, per mode, the summed fibre outer products.
#[derive(Debug, Clone, PartialEq)]
pub struct SuffStats {
    dims: Vec<usize>,
    pub count: usize,
    pub sum: Vec<f64>,
    /// Upper triangles (row-major `D_n x D_n`, lower part unused) per mode.
    scatter: Vec<Vec<f64>>,
}

impl SuffStats {
    pub fn zeros(dims: &[usize]) -> Self {
        SuffStats {
            dims: dims.to_vec(),
            count: 0,
            sum: vec![0.0; dims.iter().product()],
            scatter: dims.iter().map(|&d| vec![0.0; d * d]).collect(),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.sum.len());
        for (s, v) in self.sum.iter_mut().zip(row) {
            *s += v;
        }
        let mut buf = Vec::new();
        for (m, acc) in self.scatter.iter_mut().enumerate() {
            let layout = ModeLayout::new(&self.dims, m);
            let dim = layout.dim;
            layout.for_each_fibre(row, &mut buf, |_, f| {
                for i in 0..dim {
                    let fi = f[i];
                    let acc_row = &mut acc[i * dim..(i + 1) * dim];
                    for j in i..dim {
                        acc_row[j] += fi * f[j];
                    }
                }
            });
        }
        self.count += 1;
    }

    /// Accumulates zero-based time steps `a0..b0` in order.
    pub fn push_range(&mut self, x: &TensorTS, a0: usize, b0: usize) {
        for t in a0..b0 {
            self.push_row(x.row(t));
        }
    }

    pub fn from_range(x: &TensorTS, a0: usize, b0: usize) -> Self {
        let mut s = SuffStats::zeros(x.dims());
        s.push_range(x, a0, b0);
        s
    }

    pub fn merge(&mut self, other: &SuffStats) {
        debug_assert_eq!(self.dims, other.dims);
        self.count += other.count;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.scatter.iter_mut().zip(&other.scatter) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Symmetric summed outer products `sum_t sum_d x x^T` of mode `n` (1-based).
    pub fn scatter(&self, mode: usize) -> DMatrix<f64> {
        let dim = self.dims[mode - 1];
        let acc = &self.scatter[mode - 1];
        DMatrix::from_fn(dim, dim, |i, j| {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            acc[a * dim + b]
        })
    }

    /// Empirical mean of `vec(X_t)`.
    pub fn mean_vec(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.sum.iter().map(|s| s / n).collect()
    }

    /// Pooled per-variable variances of mode `n`; zero when fewer than two samples.
    pub fn fibre_variances(&self, mode: usize) -> Vec<f64> {
        let layout = ModeLayout::new(&self.dims, mode - 1);
        let dim = layout.dim;
        if self.count == 0 {
            return vec![0.0; dim];
        }
        let tf = self.count as f64;
        let acc = &self.scatter[mode - 1];
        (0..dim)
            .map(|i| {
                let mean_sq: f64 = (0..layout.probdim()).map(|d| (self.sum[layout.offset(d, i)] / tf).powi(2)).sum();
                ((acc[i * dim + i] / tf - mean_sq) / layout.probdim() as f64).max(0.0)
            })
            .collect()
    }

    /// Per-mode statistics equivalent to [`compute_mode_stats`] on the same data.
    pub fn mode_stats(&self, mode: usize) -> Result<ModeStats> {
        let layout = ModeLayout::new(&self.dims, mode - 1);
        let (p, dim) = (layout.probdim(), layout.dim);
        let t = self.count;
        if t * p < 2 || t == 0 {
            return Err(Error::InsufficientData(format!(
                "{t} time steps x {p} fibres is too few samples for a covariance"
            )));
        }
        let tf = t as f64;
        let means = DMatrix::from_fn(p, dim, |d, i| self.sum[layout.offset(d, i)] / tf);
        let mut cov = self.scatter(mode);
        for d in 0..p {
            for j in 0..dim {
                let mj = means[(d, j)] * tf;
                for i in 0..dim {
                    cov[(i, j)] -= means[(d, i)] * mj;
                }
            }
        }
        cov /= tf * p as f64;
        // exact symmetry
        for j in 0..dim {
            for i in 0..j {
                let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        Ok(ModeStats { mode, means, pooled_cov: cov, t_count: t, probdim: p })
    }
}

/// ADMM solver settings. `rho` is the penalty of the problem normalized by `T/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmConfig {
    pub rho: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        AdmmConfig { rho: 1.0, abs_tol: 1e-6, rel_tol: 1e-5, max_iter: 1000 }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidArgument(format!("ADMM rho must be positive, got {}", self.rho)));
        }
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::InvalidArgument("ADMM tolerances must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("ADMM max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// A fitted precision matrix `Psi^(n)` with its structural support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "NetworkRepr", try_from = "NetworkRepr")]
pub struct ModeNetwork {
    /// 1-based mode index.
    pub mode: usize,
    pub psi: DMatrix<f64>,
    /// Structural nonzeros; symmetric with a true diagonal.
    pub support: DMatrix<bool>,
    pub converged: bool,
    pub iterations: usize,
    /// Set when the data were too degenerate for the solver and a diagonal
    /// model was substituted.
    pub fallback: bool,
}

impl ModeNetwork {
    pub fn dim(&self) -> usize {
        self.psi.nrows()
    }

    /// Diagonal network `psi_ii = 1 / max(var_i, 1e-6)`.
    pub fn diagonal_fallback(mode: usize, variances: &[f64]) -> Self {
        let dim = variances.len();
        let psi = DMatrix::from_fn(dim, dim, |i, j| if i == j { 1.0 / variances[i].max(1e-6) } else { 0.0 });
        ModeNetwork {
            mode,
            psi,
            support: DMatrix::from_fn(dim, dim, |i, j| i == j),
            converged: true,
            iterations: 0,
            fallback: true,
        }
    }

    /// Number of strictly-upper-triangle support entries.
    pub fn upper_nonzeros(&self) -> usize {
        let d = self.dim();
        (0..d).map(|j| (0..j).filter(|&i| self.support[(i, j)]).count()).sum()
    }

    /// Off-diagonal l1 norm (both triangles).
    pub fn offdiag_l1(&self) -> f64 {
        offdiag_l1(&self.psi)
    }

    pub fn log_det(&self) -> Result<f64> {
        log_det_pd(&self.psi)
            .ok_or_else(|| Error::InvalidModel(format!("mode-{} network is not positive definite", self.mode)))
    }

    /// Partial correlation `-psi_ij / sqrt(psi_ii psi_jj)`.
    pub fn partial_correlation(&self, i: usize, j: usize) -> f64 {
        -self.psi[(i, j)] / (self.psi[(i, i)] * self.psi[(j, j)]).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.psi.ncols() != d || self.support.nrows() != d || self.support.ncols() != d {
            return Err(Error::InvalidModel("network matrices are not square and matching".into()));
        }
        for j in 0..d {
            if !self.support[(j, j)] {
                return Err(Error::InvalidModel("support diagonal must be set".into()));
            }
            for i in 0..j {
                if self.support[(i, j)] != self.support[(j, i)] {
                    return Err(Error::InvalidModel("support is not symmetric".into()));
                }
                if (self.psi[(i, j)] - self.psi[(j, i)]).abs() > 1e-8 {
                    return Err(Error::InvalidModel("psi is not symmetric".into()));
                }
            }
        }
        self.log_det().map(|_| ())
    }
}

#[derive(Serialize, Deserialize)]
struct NetworkRepr {
    mode: usize,
    psi: Vec<Vec<f64>>,
    support: Vec<Vec<bool>>,
    converged: bool,
    #[serde(default)]
    iterations: usize,
    #[serde(default)]
    fallback: bool,
}

impl From<ModeNetwork> for NetworkRepr {
    fn from(n: ModeNetwork) -> Self {
        let d = n.dim();
        NetworkRepr {
            mode: n.mode,
            psi: (0..d).map(|i| (0..d).map(|j| n.psi[(i, j)]).collect()).collect(),
            support: (0..d).map(|i| (0..d).map(|j| n.support[(i, j)]).collect()).collect(),
            converged: n.converged,
            iterations: n.iterations,
            fallback: n.fallback,
        }
    }
}

impl TryFrom<NetworkRepr> for ModeNetwork {
    type Error = Error;

    fn try_from(r: NetworkRepr) -> Result<Self> {
        let d = r.psi.len();
        if r.psi.iter().any(|row| row.len() != d) || r.support.len() != d || r.support.iter().any(|row| row.len() != d) {
            return Err(Error::InvalidModel("network arrays must be square".into()));
        }
        let net = ModeNetwork {
            mode: r.mode,
            psi: DMatrix::from_fn(d, d, |i, j| r.psi[i][j]),
            support: DMatrix::from_fn(d, d, |i, j| r.support[i][j]),
            converged: r.converged,
            iterations: r.iterations,
            fallback: r.fallback,
        };
        net.validate()?;
        Ok(net)
    }
}

pub fn offdiag_l1(m: &DMatrix<f64>) -> f64 {
    let d = m.nrows();
    let mut s = 0.0;
    for j in 0..d {
        for i in 0..d {
            if i != j {
                s += m[(i, j)].abs();
            }
        }
    }
    s
}

/// `log det` of a positive definite matrix, or `None` if Cholesky fails.
pub fn log_det_pd(m: &DMatrix<f64>) -> Option<f64> {
    let chol = Cholesky::new(m.clone())?;
    let l = chol.l_dirty();
    Some(2.0 * (0..m.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>())
}

/// Penalized objective `lambda ||Psi||_od,1 + (T/2)(tr(S Psi) - log det Psi)`.
/// Infinite when `psi` is not positive definite.
pub fn glasso_objective(stats: &ModeStats, psi: &DMatrix<f64>, lambda: f64) -> f64 {
    let Some(ld) = log_det_pd(psi) else {
        return f64::INFINITY;
    };
    let tr = stats.pooled_cov.component_mul(psi).sum();
    lambda * offdiag_l1(psi) + 0.5 * stats.t_count as f64 * (tr - ld)
}

fn check_psd(stats: &ModeStats) -> Result<()> {
    let s = &stats.pooled_cov;
    let dim = s.nrows();
    if s.ncols() != dim || stats.means.ncols() != dim || dim == 0 {
        return Err(Error::InvalidStats("covariance/means dimension mismatch".into()));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidStats("covariance has non-finite entries".into()));
    }
    for j in 0..dim {
        for i in 0..j {
            if (s[(i, j)] - s[(j, i)]).abs() > 1e-10 * (1.0 + s[(i, j)].abs()) {
                return Err(Error::InvalidStats("covariance is not symmetric".into()));
            }
        }
    }
    let scale = (0..dim).map(|i| s[(i, i)].abs()).fold(1.0, f64::max);
    let min_eig = SymmetricEigen::new(s.clone()).eigenvalues.min();
    if min_eig < -PSD_TOL * scale {
        return Err(Error::InvalidStats(format!("covariance has eigenvalue {min_eig:.3e}")));
    }
    Ok(())
}

fn soft_threshold_offdiag(m: &DMatrix<f64>, kappa: f64) -> DMatrix<f64> {
    let d = m.nrows();
    DMatrix::from_fn(d, d, |i, j| {
        let v = m[(i, j)];
        if i == j {
            v
        } else if v > kappa {
            v - kappa
        } else if v < -kappa {
            v + kappa
        } else {
            0.0
        }
    })
}

/// Solves the per-mode graphical lasso by ADMM.
///
/// Works on the objective divided by `T/2`, so the penalty on `Z` becomes
/// `2 lambda / T`. The returned `psi` is the sparse iterate `Z` when it is
/// positive definite (the usual case), else the smooth iterate `Theta`.
/// Support is read from the exact zeros of `Z`.
pub fn fit_network(stats: &ModeStats, lambda: f64, cfg: &AdmmConfig) -> Result<ModeNetwork> {
    cfg.validate()?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be a finite nonnegative value, got {lambda}")));
    }
    if stats.t_count == 0 {
        return Err(Error::InsufficientData("no samples".into()));
    }
    check_psd(stats)?;
    let s = &stats.pooled_cov;
    let dim = s.nrows();
    if let Some(i) = (0..dim).find(|&i| s[(i, i)] < MIN_VARIANCE) {
        return Err(Error::InsufficientData(format!(
            "variable {} of mode {} has zero variance",
            i + 1,
            stats.mode
        )));
    }

    let alpha = 2.0 * lambda / stats.t_count as f64;
    let mut rho = cfg.rho;
    let mut z = DMatrix::from_fn(dim, dim, |i, j| if i == j { 1.0 / s[(i, i)] } else { 0.0 });
    let mut u = DMatrix::<f64>::zeros(dim, dim);
    let mut theta = z.clone();
    let scale = dim as f64;
    let mut converged = false;
    let mut iterations = 0;
    let mut best: Option<(f64, DMatrix<f64>, DMatrix<f64>)> = None;

    for it in 1..=cfg.max_iter {
        iterations = it;
        let rhs = (&z - &u) * rho - s;
        let eig = SymmetricEigen::new(rhs);
        let roots = eig.eigenvalues.map(|q| (q + (q * q + 4.0 * rho).sqrt()) / (2.0 * rho));
        let q = &eig.eigenvectors;
        theta = q * DMatrix::from_diagonal(&roots) * q.transpose();
        theta = (&theta + theta.transpose()) * 0.5;

        let z_old = z;
        z = soft_threshold_offdiag(&(&theta + &u), alpha / rho);
        u += &theta - &z;

        let r_norm = (&theta - &z).norm();
        let s_norm = rho * (&z - &z_old).norm();
        let eps_pri = scale * cfg.abs_tol + cfg.rel_tol * theta.norm().max(z.norm());
        let eps_dual = scale * cfg.abs_tol + cfg.rel_tol * rho * u.norm();
        if r_norm <= eps_pri && s_norm <= eps_dual {
            converged = true;
            break;
        }
        let merit = r_norm / eps_pri + s_norm / eps_dual;
        if best.as_ref().is_none_or(|(m, _, _)| merit < *m) {
            best = Some((merit, theta.clone(), z.clone()));
        }
        // residual balancing
        if r_norm > 10.0 * s_norm {
            rho *= 2.0;
            u /= 2.0;
        } else if s_norm > 10.0 * r_norm {
            rho /= 2.0;
            u *= 2.0;
        }
    }
    if !converged {
        if let Some((_, t, zb)) = best {
            theta = t;
            z = zb;
        }
    }

    let support = DMatrix::from_fn(dim, dim, |i, j| i == j || z[(i, j)] != 0.0);
    let psi = if Cholesky::new(z.clone()).is_some() {
        z
    } else {
        // keep support consistent with the returned matrix
        DMatrix::from_fn(dim, dim, |i, j| if support[(i, j)] { theta[(i, j)] } else { 0.0 })
    };
    let psi = if Cholesky::new(psi.clone()).is_some() { psi } else { theta };
    Ok(ModeNetwork { mode: stats.mode, psi, support, converged, iterations, fallback: false })
}

/// Fits mode `mode` from pooled statistics, substituting a diagonal network
/// when the data are too degenerate for the solver.
pub(crate) fn fit_network_or_fallback(stats: &SuffStats, mode: usize, lambda: f64, cfg: &AdmmConfig) -> Result<ModeNetwork> {
    let result = stats.mode_stats(mode).and_then(|st| fit_network(&st, lambda, cfg));
    match result {
        Err(Error::InsufficientData(msg)) => {
            log::debug!("mode {mode}: {msg}; using diagonal fallback");
            Ok(ModeNetwork::diagonal_fallback(mode, &stats.fibre_variances(mode)))
        }
        other => other,
    }
}

/// Per-time mode-n log-likelihood:
/// `(1/p) sum_d { -1/2 (x-mu_d)' Psi (x-mu_d) + 1/2 log det Psi - D_n/2 log 2 pi }`.
pub fn mode_log_likelihood(slices: &ModeSlices, means: &DMatrix<f64>, net: &ModeNetwork) -> Result<Vec<f64>> {
    let (p, dim) = (slices.probdim, slices.dim);
    if means.nrows() != p || means.ncols() != dim || net.dim() != dim {
        return Err(Error::DimensionMismatch(format!(
            "slices ({p}, {dim}), means {}x{}, network {}",
            means.nrows(),
            means.ncols(),
            net.dim()
        )));
    }
    let ld = net.log_det()?;
    let constant = 0.5 * ld - 0.5 * dim as f64 * (2.0 * PI).ln();
    let mut centered = vec![0.0; dim];
    let mut out = Vec::with_capacity(slices.t_len);
    for t in 0..slices.t_len {
        let mut quad = 0.0;
        for d in 0..p {
            for (i, v) in slices.fibre(t, d).iter().enumerate() {
                centered[i] = v - means[(d, i)];
            }
            for j in 0..dim {
                let mut acc = 0.0;
                for i in 0..dim {
                    acc += net.psi[(i, j)] * centered[i];
                }
                quad += acc * centered[j];
            }
        }
        out.push(-0.5 * quad / p as f64 + constant);
    }
    Ok(out)
}

/// A network prepared for repeated likelihood evaluation from [`SuffStats`].
#[derive(Debug, Clone)]
pub(crate) struct PreparedMode {
    mode0: usize,
    layout: ModeLayout,
    psi: DMatrix<f64>,
    /// `Psi mu_d`, laid out like `vec(X_t)`.
    psi_mu: Vec<f64>,
    /// `sum_d mu_d' Psi mu_d`.
    mu_quad: f64,
    /// `1/2 log det Psi - D_n/2 log 2 pi`.
    constant: f64,
}

impl PreparedMode {
    pub fn new(dims: &[usize], net: &ModeNetwork, mean_vec: &[f64]) -> Result<Self> {
        let layout = ModeLayout::new(dims, net.mode - 1);
        let dim = layout.dim;
        let ld = net.log_det()?;
        let mut psi_mu = vec![0.0; mean_vec.len()];
        let mut mu_quad = 0.0;
        for d in 0..layout.probdim() {
            for i in 0..dim {
                let mut acc = 0.0;
                for j in 0..dim {
                    acc += net.psi[(i, j)] * mean_vec[layout.offset(d, j)];
                }
                psi_mu[layout.offset(d, i)] = acc;
                mu_quad += acc * mean_vec[layout.offset(d, i)];
            }
        }
        Ok(PreparedMode {
            mode0: net.mode - 1,
            layout,
            psi: net.psi.clone(),
            psi_mu,
            mu_quad,
            constant: 0.5 * ld - 0.5 * dim as f64 * (2.0 * PI).ln(),
        })
    }

    /// Summed log-likelihood of all time steps in `stats`.
    pub fn log_likelihood(&self, stats: &SuffStats) -> f64 {
        let scatter = &stats.scatter[self.mode0];
        let dim = self.layout.dim;
        let mut tr = 0.0;
        for i in 0..dim {
            tr += self.psi[(i, i)] * scatter[i * dim + i];
            for j in i + 1..dim {
                tr += 2.0 * self.psi[(i, j)] * scatter[i * dim + j];
            }
        }
        let cross: f64 = self.psi_mu.iter().zip(&stats.sum).map(|(a, b)| a * b).sum();
        let n = stats.count as f64;
        let quad = tr - 2.0 * cross + n * self.mu_quad;
        -0.5 * quad / self.layout.probdim() as f64 + n * self.constant
    }
}
