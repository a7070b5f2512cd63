//! Closed-form statistical covariance `C_u = E[h_u* h_u^T]` of the effective
//! channel and a sampling oracle that estimates the same quantity directly.

use nalgebra::SymmetricEigen;
use num_complex::Complex64;
use rand::Rng;

use crate::error::{contract, Result};
use crate::geometry::{complex_gaussian, rician_weights, ChannelStats, CMatrix, CVector};
use crate::par::{sharded_sum, Execution};

const UNIT_MODULUS_TOL: f64 = 1e-9;

fn los_fraction(kappa: f64) -> f64 {
    if kappa.is_infinite() {
        1.0
    } else {
        kappa / (1.0 + kappa)
    }
}

fn nlos_fraction(kappa: f64) -> f64 {
    if kappa.is_infinite() {
        0.0
    } else {
        1.0 / (1.0 + kappa)
    }
}

/// `conj(a) · b^T`
fn conj_outer(a: &CVector, b: &CVector) -> CMatrix {
    a.conjugate() * b.transpose()
}

fn scaled_identity(n: usize, c: f64) -> CMatrix {
    CMatrix::identity(n, n) * Complex64::from(c)
}

pub(crate) fn check_phases(xi: &CVector, m: usize) -> Result<()> {
    if xi.len() != m {
        return Err(contract(format!("phase vector has {} entries, RIS has {m}", xi.len())));
    }
    if let Some(bad) = xi.iter().find(|z| (z.norm() - 1.0).abs() > UNIT_MODULUS_TOL) {
        return Err(contract(format!("RIS coefficient {bad} is not unit modulus")));
    }
    Ok(())
}

/// The additive pieces of the closed-form covariance.
///
/// `direct_nlos + ris_nlos` together form the scaled identity term.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceTerms {
    /// `δ_{u,0}κ_{u,0}/(1+κ_{u,0}) · h̄_{u,0}* h̄_{u,0}^T`
    pub direct_los: CMatrix,
    /// `δ_{u,0}/(1+κ_{u,0}) · I`
    pub direct_nlos: CMatrix,
    /// `M·δ_1·δ_{u,2}/(1+κ_1) · I`
    pub ris_nlos: CMatrix,
    /// Direct/reflected LoS cross terms; the only piece that sees a global
    /// phase rotation of Ξ.
    pub cross: CMatrix,
    /// `δ_1δ_{u,2}κ_1/((1+κ_1)(1+κ_{u,2})) · H̄_1^H H̄_1`, where
    /// `H̄_1^H H̄_1 = M·a_BS a_BS^H`.
    pub ris_bs_los: CMatrix,
    /// Fully coherent reflected LoS outer product.
    pub ris_coherent: CMatrix,
}

impl CovarianceTerms {
    pub fn total(&self) -> CMatrix {
        self.direct() + &self.cross + self.reflected()
    }

    /// `E[h_{u,0}* h_{u,0}^T]`
    pub fn direct(&self) -> CMatrix {
        &self.direct_los + &self.direct_nlos
    }

    /// `E[g* g^T]` for the reflected path `g^T = h_{u,2}^T Ξ H_1`.
    pub fn reflected(&self) -> CMatrix {
        &self.ris_nlos + &self.ris_bs_los + &self.ris_coherent
    }
}

/// Evaluates every closed-form term for `user` under RIS phases `xi`.
pub fn covariance_terms(stats: &ChannelStats, user: usize, xi: &CVector) -> Result<CovarianceTerms> {
    let u = stats
        .users
        .get(user)
        .ok_or_else(|| contract(format!("user {user} out of range ({} users)", stats.num_users())))?;
    let n = stats.num_bs_antennas();
    let m = stats.num_ris_elements();
    check_phases(xi, m)?;
    if u.hbar_u0.len() != n || u.hbar_u2.len() != m || stats.hbar1.shape() != (m, n) {
        return Err(contract("channel statistics have inconsistent dimensions"));
    }

    let (d0, d1, d2) = (u.delta_u0, stats.delta1, u.delta_u2);
    let (lf0, lf1, lf2) = (los_fraction(u.kappa_u0), los_fraction(stats.kappa1), los_fraction(u.kappa_u2));
    let (nf0, nf1, nf2) = (nlos_fraction(u.kappa_u0), nlos_fraction(stats.kappa1), nlos_fraction(u.kappa_u2));

    // reflected LoS row h̄_{u,2}^T Ξ H̄_1, stored as a column
    let g = stats.hbar1.tr_mul(&u.hbar_u2.component_mul(xi));
    let c = |x: f64| Complex64::from(x);

    let cross_coef = (d0 * d1 * d2 * lf0 * lf1 * lf2).sqrt();
    let gram = stats.hbar1.ad_mul(&stats.hbar1);

    Ok(CovarianceTerms {
        direct_los: conj_outer(&u.hbar_u0, &u.hbar_u0) * c(d0 * lf0),
        direct_nlos: scaled_identity(n, d0 * nf0),
        ris_nlos: scaled_identity(n, m as f64 * d1 * d2 * nf1),
        cross: (conj_outer(&u.hbar_u0, &g) + conj_outer(&g, &u.hbar_u0)) * c(cross_coef),
        ris_bs_los: gram * c(d1 * d2 * lf1 * nf2),
        ris_coherent: conj_outer(&g, &g) * c(d1 * d2 * lf1 * lf2),
    })
}

/// Closed-form `C_u` for one user.
pub fn covariance_closed_form(stats: &ChannelStats, user: usize, xi: &CVector) -> Result<CMatrix> {
    Ok(covariance_terms(stats, user, xi)?.total())
}

/// Covariance matrices of every user, built with the same RIS phases.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSet {
    pub per_user: Vec<CMatrix>,
    pub xi: CVector,
}

impl CovarianceSet {
    pub fn num_users(&self) -> usize {
        self.per_user.len()
    }
}

pub fn covariance_set(stats: &ChannelStats, xi: &CVector) -> Result<CovarianceSet> {
    let per_user = (0..stats.num_users())
        .map(|u| covariance_closed_form(stats, u, xi))
        .collect::<Result<Vec<_>>>()?;
    Ok(CovarianceSet { per_user, xi: xi.clone() })
}

/// Sample averages of the direct, cross and reflected outer products.
/// `total()` is the Monte-Carlo estimate of `C_u`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledCovariance {
    pub direct: CMatrix,
    pub cross: CMatrix,
    pub reflected: CMatrix,
    pub n_samples: usize,
}

impl SampledCovariance {
    pub fn total(&self) -> CMatrix {
        &self.direct + &self.cross + &self.reflected
    }
}

struct Accum {
    direct: CMatrix,
    cross: CMatrix,
    reflected: CMatrix,
}

impl Accum {
    fn zeros(n: usize) -> Self {
        Self { direct: CMatrix::zeros(n, n), cross: CMatrix::zeros(n, n), reflected: CMatrix::zeros(n, n) }
    }
}

fn rician_draw<R: Rng + ?Sized>(los: &CVector, delta: f64, kappa: f64, rng: &mut R) -> CVector {
    let (a, b) = rician_weights(delta, kappa);
    los.map(|l| l * a + complex_gaussian(rng) * b)
}

/// Estimates `E[h_u* h_u^T]` by averaging over `n_samples` channel draws of
/// the Rician model for a single user, with `h_u^T = h_{u,0}^T + h_{u,2}^T Ξ H_1`.
///
/// Samples are split into fixed shards with independent RNG streams seeded
/// from `rng`, so the estimate does not depend on `exec`.
pub fn covariance_monte_carlo<R: Rng + ?Sized>(
    stats: &ChannelStats,
    user: usize,
    xi: &CVector,
    n_samples: usize,
    rng: &mut R,
    exec: Execution,
) -> Result<SampledCovariance> {
    if n_samples == 0 {
        return Err(contract("n_samples must be at least 1"));
    }
    let u = stats
        .users
        .get(user)
        .ok_or_else(|| contract(format!("user {user} out of range ({} users)", stats.num_users())))?;
    let n = stats.num_bs_antennas();
    check_phases(xi, stats.num_ris_elements())?;
    let seed = rng.gen::<u64>();

    let acc = sharded_sum(
        n_samples,
        seed,
        exec,
        |rng, len| {
            let mut acc = Accum::zeros(n);
            let (a1, b1) = rician_weights(stats.delta1, stats.kappa1);
            for _ in 0..len {
                let h0 = rician_draw(&u.hbar_u0, u.delta_u0, u.kappa_u0, rng);
                let mut h1 = stats.hbar1.map(|l| l * a1);
                for v in h1.iter_mut() {
                    *v += complex_gaussian(rng) * b1;
                }
                let h2 = rician_draw(&u.hbar_u2, u.delta_u2, u.kappa_u2, rng);
                let g = h1.tr_mul(&h2.component_mul(xi));
                acc.direct += conj_outer(&h0, &h0);
                acc.cross += conj_outer(&h0, &g) + conj_outer(&g, &h0);
                acc.reflected += conj_outer(&g, &g);
            }
            acc
        },
        |mut a, b| {
            a.direct += b.direct;
            a.cross += b.cross;
            a.reflected += b.reflected;
            a
        },
    )
    .expect("at least one shard");

    let scale = Complex64::from(1.0 / n_samples as f64);
    Ok(SampledCovariance {
        direct: acc.direct * scale,
        cross: acc.cross * scale,
        reflected: acc.reflected * scale,
        n_samples,
    })
}

/// Largest entrywise modulus of `C − C^H`.
pub fn hermitian_defect(c: &CMatrix) -> f64 {
    (c - c.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Eigenvalues (ascending) of the Hermitian part `(C + C^H)/2`.
pub fn hermitian_eigenvalues(c: &CMatrix) -> Vec<f64> {
    let h = (c + c.adjoint()) * Complex64::from(0.5);
    let mut ev: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// `‖est − exact‖_F / ‖exact‖_F`, or the absolute error when `exact` is zero.
pub fn relative_frobenius_error(est: &CMatrix, exact: &CMatrix) -> f64 {
    let diff = (est - exact).norm();
    let scale = exact.norm();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_stats, SystemGeometry, UserStats};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_phases(m: usize, rng: &mut impl Rng) -> CVector {
        CVector::from_iterator(m, (0..m).map(|_| Complex64::from_polar(1.0, 2.0 * PI * rng.gen::<f64>())))
    }

    fn desk_stats(users: usize) -> ChannelStats {
        let g = SystemGeometry { bs_dims: [4, 2], ris_dims: [4, 2], num_users: users, ..SystemGeometry::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        build_stats(&g, &crate::geometry::sample_ue_positions(&g, &mut rng)).unwrap()
    }

    /// Stats whose direct and reflected powers are comparable, so the
    /// oracle comparison actually exercises the RIS terms.
    fn balanced_stats(k1: f64, k2: f64) -> ChannelStats {
        let mut s = desk_stats(1);
        let m = s.num_ris_elements() as f64;
        s.kappa1 = k1;
        let u = &mut s.users[0];
        u.kappa_u2 = k2;
        u.kappa_u0 = 0.5;
        u.delta_u0 = 1.0;
        s.delta1 = 1.0;
        u.delta_u2 = 1.0 / m;
        s
    }

    #[test]
    fn no_reflected_power_reduces_to_direct_link() {
        let mut s = desk_stats(1);
        s.users[0].delta_u2 = 0.0;
        let xi = random_phases(8, &mut ChaCha8Rng::seed_from_u64(1));
        let c = covariance_closed_form(&s, 0, &xi).unwrap();
        let u = &s.users[0];
        let k = u.kappa_u0;
        let expect = conj_outer(&u.hbar_u0, &u.hbar_u0) * Complex64::from(u.delta_u0 * k / (1.0 + k))
            + scaled_identity(8, u.delta_u0 / (1.0 + k));
        assert!((c - expect).iter().all(|z| z.norm() <= 1e-12 * s.users[0].delta_u0));
    }

    #[test]
    fn no_ris_reduces_to_direct_link() {
        let g = SystemGeometry { bs_dims: [4, 2], num_users: 1, ..SystemGeometry::default() }.without_ris();
        let s = build_stats(&g, &[g.ue_circle_center]).unwrap();
        let t = covariance_terms(&s, 0, &CVector::zeros(0)).unwrap();
        assert_eq!(t.total(), t.direct());
        assert_eq!(t.reflected(), CMatrix::zeros(8, 8));
    }

    #[test]
    fn pure_rayleigh_is_isotropic() {
        let mut s = desk_stats(1);
        s.kappa1 = 0.0;
        s.delta1 = 1.0;
        let u = &mut s.users[0];
        u.kappa_u0 = 0.0;
        u.kappa_u2 = 0.0;
        u.delta_u0 = 1.0;
        u.delta_u2 = 1.0 / 8.0;
        let xi = CVector::from_element(8, Complex64::new(1.0, 0.0));
        let c = covariance_closed_form(&s, 0, &xi).unwrap();
        assert!((c - scaled_identity(8, 2.0)).norm() < 1e-14);
    }

    #[test]
    fn ris_bs_term_is_m_times_bs_outer_product() {
        let s = desk_stats(1);
        let gram = s.hbar1.ad_mul(&s.hbar1);
        let expect = (&s.a_bs * s.a_bs.adjoint()) * Complex64::from(8.0);
        assert!((gram - expect).norm() < 1e-12);
    }

    #[test]
    fn global_phase_only_rotates_cross_term() {
        let s = desk_stats(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xi = random_phases(8, &mut rng);
        let rot = Complex64::from_polar(1.0, 0.77);
        let a = covariance_terms(&s, 0, &xi).unwrap();
        let b = covariance_terms(&s, 0, &xi.map(|z| z * rot)).unwrap();
        assert_eq!(a.direct_los, b.direct_los);
        assert_eq!(a.direct_nlos, b.direct_nlos);
        assert_eq!(a.ris_nlos, b.ris_nlos);
        assert_eq!(a.ris_bs_los, b.ris_bs_los);
        let scale = a.ris_coherent.norm();
        assert!((&a.ris_coherent - &b.ris_coherent).norm() <= 1e-12 * scale);
        // cross = conj(h0) g^T + conj(g) h0^T with g → rot·g
        let u = &s.users[0];
        let g = s.hbar1.tr_mul(&u.hbar_u2.component_mul(&xi));
        let coef = a.cross.norm() / (conj_outer(&u.hbar_u0, &g) + conj_outer(&g, &u.hbar_u0)).norm();
        let rotated = (conj_outer(&u.hbar_u0, &g) * rot + conj_outer(&g, &u.hbar_u0) * rot.conj()) * Complex64::from(coef);
        assert!((&b.cross - rotated).norm() <= 1e-9 * a.cross.norm());
    }

    #[test]
    fn hermitian_and_psd_for_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let k1 = 10f64.powf(rng.gen_range(-2.0..2.0));
            let k2 = 10f64.powf(rng.gen_range(-2.0..2.0));
            let mut s = balanced_stats(k1, k2);
            s.users[0].kappa_u0 = 10f64.powf(rng.gen_range(-2.0..2.0));
            let xi = random_phases(8, &mut rng);
            let c = covariance_closed_form(&s, 0, &xi).unwrap();
            let tr: f64 = c.trace().re;
            assert!(hermitian_defect(&c) <= 1e-10 * tr.max(1.0));
            assert!(hermitian_eigenvalues(&c)[0] >= -1e-8 * tr);
        }
    }

    #[test]
    fn rejects_bad_phases() {
        let s = desk_stats(1);
        let bad = CVector::from_element(8, Complex64::new(0.5, 0.0));
        assert!(covariance_closed_form(&s, 0, &bad).is_err());
        let short = CVector::from_element(3, Complex64::new(1.0, 0.0));
        assert!(covariance_closed_form(&s, 0, &short).is_err());
        assert!(covariance_closed_form(&s, 4, &CVector::from_element(8, Complex64::new(1.0, 0.0))).is_err());
    }

    #[test]
    fn deterministic_channel_single_sample() {
        let mut s = balanced_stats(f64::INFINITY, f64::INFINITY);
        s.users[0].kappa_u0 = f64::INFINITY;
        let xi = random_phases(8, &mut ChaCha8Rng::seed_from_u64(4));
        let mc = covariance_monte_carlo(&s, 0, &xi, 1, &mut ChaCha8Rng::seed_from_u64(0), Execution::Sequential).unwrap();
        let u = &s.users[0];
        let g = s.hbar1.tr_mul(&u.hbar_u2.component_mul(&xi)) * Complex64::from((s.delta1 * u.delta_u2).sqrt());
        let h = u.hbar_u0.map(|z| z * u.delta_u0.sqrt()) + g;
        let expect = conj_outer(&h, &h);
        assert!(relative_frobenius_error(&mc.total(), &expect) < 1e-12);
        let cf = covariance_closed_form(&s, 0, &xi).unwrap();
        assert!(relative_frobenius_error(&cf, &expect) < 1e-12);
    }

    #[test]
    fn oracle_agrees_when_ris_terms_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for &(k1, k2) in &[(0.1, 10.0), (1.0, 1.0), (10.0, 0.1), (10.0, 10.0)] {
            let s = balanced_stats(k1, k2);
            let xi = random_phases(8, &mut rng);
            let t = covariance_terms(&s, 0, &xi).unwrap();
            let mc = covariance_monte_carlo(&s, 0, &xi, 100_000, &mut rng, Execution::default()).unwrap();
            let err = relative_frobenius_error(&mc.total(), &t.total());
            assert!(err < 0.02, "kappa=({k1},{k2}) err={err}");
            assert!(relative_frobenius_error(&mc.reflected, &t.reflected()) < 0.03);
            assert!(relative_frobenius_error(&mc.direct, &t.direct()) < 0.03);
        }
    }

    #[test]
    fn execution_mode_does_not_change_the_estimate() {
        let s = balanced_stats(1.0, 1.0);
        let xi = random_phases(8, &mut ChaCha8Rng::seed_from_u64(3));
        let a = covariance_monte_carlo(&s, 0, &xi, 10_000, &mut ChaCha8Rng::seed_from_u64(6), Execution::Sequential).unwrap();
        let b = covariance_monte_carlo(&s, 0, &xi, 10_000, &mut ChaCha8Rng::seed_from_u64(6), Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    /// `E[X^H Z X] = trace(Z)·I` for X with i.i.d. CN(0,1) entries.
    #[test]
    fn gaussian_quadratic_form_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (p, q) = (5, 3);
        let z = CMatrix::from_fn(p, p, |_, _| complex_gaussian(&mut rng));
        let n = 100_000;
        let mut acc = CMatrix::zeros(q, q);
        for _ in 0..n {
            let x = CMatrix::from_fn(p, q, |_, _| complex_gaussian(&mut rng));
            acc += x.adjoint() * &z * x;
        }
        acc /= Complex64::from(n as f64);
        let expect = CMatrix::identity(q, q) * z.trace();
        assert!((acc - &expect).norm() < 0.05 * z.norm() * (q as f64).sqrt());
    }

    #[test]
    fn set_batches_users() {
        let s = desk_stats(3);
        let xi = random_phases(8, &mut ChaCha8Rng::seed_from_u64(0));
        let set = covariance_set(&s, &xi).unwrap();
        assert_eq!(set.num_users(), 3);
        for u in 0..3 {
            assert_eq!(set.per_user[u], covariance_closed_form(&s, u, &xi).unwrap());
        }
        let mut same = s.clone();
        same.users[1] = same.users[0].clone();
        let set = covariance_set(&same, &xi).unwrap();
        assert_eq!(set.per_user[0], set.per_user[1]);
        let _: &UserStats = &s.users[0];
    }

    #[test]
    fn relative_error_of_zero_matrix_is_absolute() {
        let z = CMatrix::zeros(2, 2);
        assert_eq!(relative_frobenius_error(&z, &z), 0.0);
        assert_relative_eq!(relative_frobenius_error(&scaled_identity(2, 1.0), &scaled_identity(2, 2.0)), 0.5);
    }
}
