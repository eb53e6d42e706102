//! Cross-check of the ADMM solver against an independent accelerated proximal
//! gradient solver run to high precision.

use dmm::glasso::{fit_network, AdmmConfig, ModeStats};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Instance {
    stats: ModeStats,
    lambda: f64,
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let dim = rng.random_range(1..=4);
    let n = rng.random_range(dim + 2..dim + 30);
    let a = DMatrix::from_fn(n, dim, |_, _| rng.random_range(-1.0..1.0));
    // Correlate the columns a little so the optimum has off-diagonal mass.
    let mix = DMatrix::from_fn(dim, dim, |i, j| if i == j { 1.0 } else { rng.random_range(-0.6..0.6) });
    let b = a * mix;
    let s = b.transpose() * &b / n as f64;
    let t_count = rng.random_range(5..60);
    let lambda = rng.random_range(0.0..2.0) * t_count as f64 / 10.0;
    Instance {
        stats: ModeStats { mode: 1, means: DMatrix::zeros(1, dim), pooled_cov: s, t_count, probdim: 1 },
        lambda,
    }
}

fn smooth_part(s: &DMatrix<f64>, t: f64, psi: &DMatrix<f64>) -> Option<f64> {
    let chol = psi.clone().cholesky()?;
    let ld: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Some(0.5 * t * (s.component_mul(psi).sum() - ld))
}

fn prox(m: &DMatrix<f64>, kappa: f64) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
        let v = m[(i, j)];
        if i == j {
            v
        } else {
            v.signum() * (v.abs() - kappa).max(0.0)
        }
    })
}

/// FISTA with backtracking and adaptive restart on
/// `(T/2)(tr(S Psi) - log det Psi) + lambda ||Psi||_od,1`.
fn oracle(inst: &Instance) -> DMatrix<f64> {
    let s = &inst.stats.pooled_cov;
    let t = inst.stats.t_count as f64;
    let dim = s.nrows();
    let mut x = DMatrix::from_fn(dim, dim, |i, j| if i == j { 1.0 / s[(i, i)] } else { 0.0 });
    let mut y = x.clone();
    let mut momentum: f64 = 1.0;
    let mut step = 1.0;
    let obj = |p: &DMatrix<f64>| smooth_part(s, t, p).map(|f| f + inst.lambda * offdiag(p));
    let mut f_x = obj(&x).unwrap();
    for _ in 0..200_000 {
        let f_y = smooth_part(s, t, &y).unwrap();
        let inv_y = y.clone().cholesky().unwrap().inverse();
        let grad = (s - inv_y) * (0.5 * t);
        let next = loop {
            let cand = prox(&(&y - &grad * step), step * inst.lambda);
            if let Some(f_c) = smooth_part(s, t, &cand) {
                let d = &cand - &y;
                if f_c <= f_y + grad.component_mul(&d).sum() + d.norm_squared() / (2.0 * step) + 1e-15 {
                    break cand;
                }
            }
            step *= 0.5;
        };
        let f_next = obj(&next).unwrap();
        if f_next > f_x {
            // restart momentum
            momentum = 1.0;
            y = x.clone();
            continue;
        }
        let m_next = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
        let delta = (&next - &x).norm();
        y = &next + (&next - &x) * ((momentum - 1.0) / m_next);
        if y.clone().cholesky().is_none() {
            y = next.clone();
        }
        momentum = m_next;
        x = next;
        f_x = f_next;
        step *= 1.2;
        if delta < 1e-14 {
            break;
        }
    }
    x
}

fn offdiag(m: &DMatrix<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i != j {
                s += m[(i, j)].abs();
            }
        }
    }
    s
}

/// Solves 25 random instances both ways; panics on the first disagreement.
pub fn admm_matches_proximal_gradient_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = AdmmConfig::default();
    let (mut zeros, mut edges) = (0, 0);
    for case in 0..25 {
        let inst = random_instance(&mut rng);
        let net = fit_network(&inst.stats, inst.lambda, &cfg).unwrap();
        let reference = oracle(&inst);
        let s = &inst.stats.pooled_cov;
        let t = inst.stats.t_count as f64;
        let ours = smooth_part(s, t, &net.psi).expect("fitted network is PD") + inst.lambda * offdiag(&net.psi);
        let theirs = smooth_part(s, t, &reference).unwrap() + inst.lambda * offdiag(&reference);
        assert!(
            (ours - theirs).abs() <= 1e-4,
            "case {case}: objective {ours} vs oracle {theirs} (dim {}, lambda {})",
            inst.stats.dim(),
            inst.lambda
        );
        let dim = inst.stats.dim();
        for i in 0..dim {
            for j in 0..dim {
                let oracle_nz = reference[(i, j)].abs() > 1e-8;
                if i < j {
                    if oracle_nz {
                        edges += 1;
                    } else {
                        zeros += 1;
                    }
                }
                assert_eq!(
                    net.support[(i, j)],
                    oracle_nz || i == j,
                    "case {case}: support differs at ({i}, {j}); ours {} oracle {}",
                    net.psi[(i, j)],
                    reference[(i, j)]
                );
            }
        }
    }
    assert!(zeros > 0 && edges > 0, "instances should exercise both zero and nonzero entries");
}
