//! Sum-rate evaluators: per-realization, Monte-Carlo ergodic, and the
//! statistical-CSI surrogate built on the covariance matrices.
//!
//! Equal power `P/U` per user throughout; powers are linear watts.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{contract, domain, Result};
use crate::geometry::{sample_channels, ChannelRealization, ChannelStats, CMatrix, CVector};
use crate::par::{sharded_sum, Execution};
use crate::statcov::{hermitian_defect, CovarianceSet};

const CONSTRAINT_TOL: f64 = 1e-9;

/// Transmit beamformers (columns of `f`, N × U) and RIS reflection diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingSolution {
    pub f: CMatrix,
    pub xi: CVector,
}

impl BeamformingSolution {
    /// Matched-size start: every beamformer `1/√N · 1`, every RIS element 1.
    pub fn uniform(n: usize, users: usize, m: usize) -> Self {
        let amp = Complex64::from(1.0 / (n as f64).sqrt());
        Self { f: CMatrix::from_element(n, users, amp), xi: CVector::from_element(m, Complex64::new(1.0, 0.0)) }
    }

    pub fn num_users(&self) -> usize {
        self.f.ncols()
    }

    /// Unit-norm beamformers and unit-modulus RIS coefficients.
    pub fn check(&self) -> Result<()> {
        for (u, col) in self.f.column_iter().enumerate() {
            let norm = col.norm();
            if (norm - 1.0).abs() > CONSTRAINT_TOL {
                return Err(contract(format!("beamformer {u} has norm {norm}")));
            }
        }
        for (m, z) in self.xi.iter().enumerate() {
            if (z.norm() - 1.0).abs() > CONSTRAINT_TOL {
                return Err(contract(format!("RIS element {m} has modulus {}", z.norm())));
            }
        }
        Ok(())
    }
}

fn check_powers(p: f64, sigma2: f64) -> Result<()> {
    if !(sigma2 > 0.0) {
        return Err(domain(format!("noise power must be positive, got {sigma2}")));
    }
    if !(p >= 0.0) {
        return Err(domain(format!("transmit power must be non-negative, got {p}")));
    }
    Ok(())
}

fn sinr_rates(gains: impl Fn(usize, usize) -> f64, users: usize, p: f64, sigma2: f64) -> Vec<f64> {
    let share = p / users as f64;
    (0..users)
        .map(|u| {
            let interference: f64 = (0..users).filter(|&i| i != u).map(|i| gains(u, i)).sum();
            let sinr = share * gains(u, u) / (sigma2 + share * interference);
            (1.0 + sinr).log2()
        })
        .collect()
}

fn check_dims(real: &ChannelRealization, sol: &BeamformingSolution) -> Result<()> {
    let n = sol.f.nrows();
    if real.h_u0.len() != sol.num_users() || real.h_u2.len() != sol.num_users() {
        return Err(contract("user count of channels and beamformers differ"));
    }
    if real.h1.shape() != (sol.xi.len(), n) || real.h_u0.iter().any(|h| h.len() != n) {
        return Err(contract("channel and solution dimensions differ"));
    }
    Ok(())
}

fn rates_unchecked(real: &ChannelRealization, sol: &BeamformingSolution, p: f64, sigma2: f64) -> Vec<f64> {
    let users = sol.num_users();
    let h: Vec<CVector> = (0..users).map(|u| real.effective_channel(u, &sol.xi)).collect();
    // |h_u^T f_i|²
    let g: Vec<Vec<f64>> = h.iter().map(|hu| (0..users).map(|i| hu.dot(&sol.f.column(i)).norm_sqr()).collect()).collect();
    sinr_rates(|u, i| g[u][i], users, p, sigma2)
}

/// Per-user `log₂(1 + SINR_u)` on one channel realization.
pub fn instantaneous_rates(real: &ChannelRealization, sol: &BeamformingSolution, p: f64, sigma2: f64) -> Result<Vec<f64>> {
    check_powers(p, sigma2)?;
    sol.check()?;
    check_dims(real, sol)?;
    Ok(rates_unchecked(real, sol, p, sigma2))
}

pub fn instantaneous_sum_rate(real: &ChannelRealization, sol: &BeamformingSolution, p: f64, sigma2: f64) -> Result<f64> {
    Ok(instantaneous_rates(real, sol, p, sigma2)?.iter().sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErgodicEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

/// Monte-Carlo average of the instantaneous sum rate over fresh channel
/// draws from `stats`, with the solution held fixed.
pub fn ergodic_sum_rate_mc<R: Rng + ?Sized>(
    stats: &ChannelStats,
    sol: &BeamformingSolution,
    p: f64,
    sigma2: f64,
    n_samples: usize,
    rng: &mut R,
    exec: Execution,
) -> Result<ErgodicEstimate> {
    if n_samples == 0 {
        return Err(contract("n_samples must be at least 1"));
    }
    check_powers(p, sigma2)?;
    sol.check()?;
    if stats.num_users() != sol.num_users() || stats.num_bs_antennas() != sol.f.nrows() || stats.num_ris_elements() != sol.xi.len() {
        return Err(contract("channel statistics and solution dimensions differ"));
    }
    let seed = rng.gen::<u64>();
    let (sum, sumsq) = sharded_sum(
        n_samples,
        seed,
        exec,
        |rng, len| {
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..len {
                let r: f64 = rates_unchecked(&sample_channels(stats, rng), sol, p, sigma2).iter().sum();
                s += r;
                s2 += r * r;
            }
            (s, s2)
        },
        |a, b| (a.0 + b.0, a.1 + b.1),
    )
    .expect("at least one shard");
    let n = n_samples as f64;
    let mean = sum / n;
    let std_error = if n_samples > 1 {
        ((sumsq - n * mean * mean).max(0.0) / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    Ok(ErgodicEstimate { mean, std_error, n_samples })
}

fn check_covariances(covs: &CovarianceSet, f: &CMatrix) -> Result<()> {
    if covs.num_users() != f.ncols() {
        return Err(contract(format!("{} covariances for {} beamformers", covs.num_users(), f.ncols())));
    }
    for (u, c) in covs.per_user.iter().enumerate() {
        if c.shape() != (f.nrows(), f.nrows()) {
            return Err(contract(format!("covariance {u} has shape {:?}", c.shape())));
        }
        let scale = c.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if hermitian_defect(c) > 1e-10 * scale.max(f64::MIN_POSITIVE) {
            return Err(contract(format!("covariance {u} is not Hermitian")));
        }
    }
    Ok(())
}

/// `f^H C f`, which is real for Hermitian `C`.
fn quadratic_form(c: &CMatrix, f: nalgebra::DVectorView<'_, Complex64>) -> Result<f64> {
    let q = f.dotc(&(c * f));
    let scale = c.norm() * f.norm_squared();
    if q.im.abs() > 1e-8 * scale.max(f64::MIN_POSITIVE) {
        return Err(contract(format!("quadratic form has imaginary part {}", q.im)));
    }
    Ok(q.re)
}

fn gain_table(covs: &CovarianceSet, f: &CMatrix) -> Result<Vec<Vec<f64>>> {
    check_covariances(covs, f)?;
    covs.per_user
        .iter()
        .map(|c| (0..f.ncols()).map(|i| quadratic_form(c, f.column(i))).collect())
        .collect()
}

/// Per-user surrogate rates `log₂(1 + (P/U) f_u^H C_u f_u / (σ² + (P/U) Σ_{i≠u} f_i^H C_u f_i))`.
pub fn scsi_rates(covs: &CovarianceSet, f: &CMatrix, p: f64, sigma2: f64) -> Result<Vec<f64>> {
    check_powers(p, sigma2)?;
    let g = gain_table(covs, f)?;
    Ok(sinr_rates(|u, i| g[u][i], f.ncols(), p, sigma2))
}

pub fn scsi_sum_rate(covs: &CovarianceSet, f: &CMatrix, p: f64, sigma2: f64) -> Result<f64> {
    Ok(scsi_rates(covs, f, p, sigma2)?.iter().sum())
}

/// The two logarithms whose difference is each user's surrogate rate:
/// `(log₂(σ² + (P/U) Σ_i f_i^H C_u f_i), log₂(σ² + (P/U) Σ_{i≠u} f_i^H C_u f_i))`.
pub fn rate_decomposed(covs: &CovarianceSet, f: &CMatrix, p: f64, sigma2: f64) -> Result<Vec<(f64, f64)>> {
    check_powers(p, sigma2)?;
    let g = gain_table(covs, f)?;
    let users = f.ncols();
    let share = p / users as f64;
    Ok((0..users)
        .map(|u| {
            let all: f64 = g[u].iter().sum();
            let interference: f64 = (0..users).filter(|&i| i != u).map(|i| g[u][i]).sum();
            ((sigma2 + share * all).log2(), (sigma2 + share * interference).log2())
        })
        .collect())
}
