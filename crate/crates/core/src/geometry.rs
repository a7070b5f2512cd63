//! Scenario geometry, large-scale pathloss, UPA steering vectors and Rician
//! channel sampling.
//!
//! Steering vectors are unnormalized: every entry has unit modulus, so an
//! array of `P` elements has `‖a‖² = P`. The closed-form covariance in
//! [`crate::statcov`] relies on this convention.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{contract, domain, Error, Result};

pub type Point = [f64; 3];
pub type CVector = DVector<Complex64>;
pub type CMatrix = DMatrix<Complex64>;

/// dB to linear power ratio. `-inf` dB maps to exactly zero.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Positions, array sizes and propagation constants of one deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemGeometry {
    pub bs_pos: Point,
    pub ris_pos: Point,
    pub ue_circle_center: Point,
    pub ue_circle_radius: f64,
    pub num_users: usize,
    /// (horizontal, vertical) antenna counts at the BS.
    pub bs_dims: [usize; 2],
    /// (horizontal, vertical) element counts at the RIS; zero removes the RIS.
    pub ris_dims: [usize; 2],
    pub element_spacing_over_wavelength: f64,
    /// Pathloss at the 1 m reference distance.
    pub pl0_db: f64,
    /// BS–UE exponent.
    pub alpha0: f64,
    /// BS–RIS exponent.
    pub alpha1: f64,
    /// RIS–UE exponent.
    pub alpha2: f64,
    #[serde(with = "db_serde")]
    pub kappa_u0_db: f64,
    #[serde(with = "db_serde")]
    pub kappa1_db: f64,
    #[serde(with = "db_serde")]
    pub kappa_u2_db: f64,
    pub noise_power_dbm: f64,
    pub tx_power_dbm: f64,
}

impl Default for SystemGeometry {
    /// The reference deployment: BS at (5, 0, 30), RIS at (0, 70, 3), three
    /// users on a 3 m disc around (5, 70, 0), 8×4 arrays on both sides.
    fn default() -> Self {
        Self {
            bs_pos: [5.0, 0.0, 30.0],
            ris_pos: [0.0, 70.0, 3.0],
            ue_circle_center: [5.0, 70.0, 0.0],
            ue_circle_radius: 3.0,
            num_users: 3,
            bs_dims: [8, 4],
            ris_dims: [8, 4],
            element_spacing_over_wavelength: 0.5,
            pl0_db: -30.0,
            alpha0: 3.4,
            alpha1: 2.2,
            alpha2: 3.0,
            kappa_u0_db: -3.0,
            kappa1_db: 10.0,
            kappa_u2_db: 10.0,
            noise_power_dbm: -80.0,
            tx_power_dbm: 10.0,
        }
    }
}

impl SystemGeometry {
    pub fn num_bs_antennas(&self) -> usize {
        self.bs_dims[0] * self.bs_dims[1]
    }

    pub fn num_ris_elements(&self) -> usize {
        self.ris_dims[0] * self.ris_dims[1]
    }

    pub fn tx_power_watts(&self) -> f64 {
        dbm_to_watts(self.tx_power_dbm)
    }

    pub fn noise_watts(&self) -> f64 {
        dbm_to_watts(self.noise_power_dbm)
    }

    /// The same deployment with the RIS removed.
    pub fn without_ris(&self) -> Self {
        Self { ris_dims: [0, 0], ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_bs_antennas() == 0 {
            return Err(Error::Config("BS needs at least one antenna".into()));
        }
        if self.num_users == 0 {
            return Err(Error::Config("at least one user is required".into()));
        }
        if !(self.ue_circle_radius >= 0.0) {
            return Err(Error::Config("ue_circle_radius must be >= 0".into()));
        }
        if !(self.element_spacing_over_wavelength > 0.0) {
            return Err(Error::Config("element spacing must be positive".into()));
        }
        if distance(&self.bs_pos, &self.ris_pos) <= 0.0 {
            return Err(Error::Config("BS and RIS coincide".into()));
        }
        for (name, v) in [("kappa_u0_db", self.kappa_u0_db), ("kappa1_db", self.kappa1_db), ("kappa_u2_db", self.kappa_u2_db)] {
            if v.is_nan() || v == f64::INFINITY {
                return Err(Error::Config(format!("{name} must be finite or -inf")));
            }
        }
        Ok(())
    }
}

/// Rician factors are allowed to be `-inf` dB (pure Rayleigh); JSON has no
/// infinity literal, so that value is written as the string `"-inf"`.
mod db_serde {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Str(s) => Err(de::Error::custom(format!("expected a number or \"-inf\", got {s:?}"))),
        }
    }
}

fn distance(a: &Point, b: &Point) -> f64 {
    a.iter().zip(b).map(|(x, y)| (y - x) * (y - x)).sum::<f64>().sqrt()
}

/// Large-scale power gain `10^((PL0 − 10·α·log10 d)/10)` at distance `d` metres.
pub fn pathloss_linear(d: f64, alpha: f64, pl0_db: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(domain(format!("pathloss distance must be positive, got {d}")));
    }
    Ok(db_to_linear(pl0_db - 10.0 * alpha * d.log10()))
}

/// Array response of a `dims[0] × dims[1]` uniform planar array.
///
/// Entry `h·P_V + v` is `exp(j2π(D/λ)(h·sinφ·sinψ + v·cosψ))`.
pub fn upa_steering(azimuth: f64, elevation: f64, dims: [usize; 2], spacing: f64) -> CVector {
    let [ph, pv] = dims;
    let kx = 2.0 * PI * spacing * azimuth.sin() * elevation.sin();
    let kz = 2.0 * PI * spacing * elevation.cos();
    CVector::from_iterator(
        ph * pv,
        (0..ph).flat_map(|h| (0..pv).map(move |v| Complex64::from_polar(1.0, h as f64 * kx + v as f64 * kz))),
    )
}

/// Azimuth `atan2(Δy, Δx)` and elevation `arccos(Δz/‖Δ‖)` of `to` seen from `from`.
pub fn angles_between(from: &Point, to: &Point) -> Result<(f64, f64)> {
    let d = [to[0] - from[0], to[1] - from[1], to[2] - from[2]];
    let norm = distance(from, to);
    if norm == 0.0 {
        return Err(domain("angles between coincident points"));
    }
    let el = (d[2] / norm).clamp(-1.0, 1.0).acos();
    Ok((d[1].atan2(d[0]), el))
}

/// Deterministic statistics of one user's links.
#[derive(Debug, Clone, PartialEq)]
pub struct UserStats {
    pub delta_u0: f64,
    pub delta_u2: f64,
    pub kappa_u0: f64,
    pub kappa_u2: f64,
    /// BS → UE LoS steering vector (length N).
    pub hbar_u0: CVector,
    /// RIS → UE LoS steering vector (length M).
    pub hbar_u2: CVector,
}

/// Everything the statistical-CSI design is allowed to know.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub delta1: f64,
    pub kappa1: f64,
    /// BS steering vector towards the RIS.
    pub a_bs: CVector,
    /// RIS steering vector towards the BS.
    pub a_ris: CVector,
    /// Rank-one LoS part of the BS → RIS channel, `a_ris · a_bs^H` (M × N).
    pub hbar1: CMatrix,
    pub users: Vec<UserStats>,
}

impl ChannelStats {
    pub fn num_bs_antennas(&self) -> usize {
        self.a_bs.len()
    }

    pub fn num_ris_elements(&self) -> usize {
        self.a_ris.len()
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }
}

/// One draw of every small-scale channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h_u0: Vec<CVector>,
    /// BS → RIS channel (M × N).
    pub h1: CMatrix,
    pub h_u2: Vec<CVector>,
}

impl ChannelRealization {
    /// Effective channel `h_u` with `h_u^T = h_{u,0}^T + h_{u,2}^T Ξ H_1`.
    pub fn effective_channel(&self, user: usize, xi: &CVector) -> CVector {
        let reflected = self.h_u2[user].component_mul(xi);
        &self.h_u0[user] + self.h1.tr_mul(&reflected)
    }
}

/// Draws user positions uniformly on the horizontal disc of the geometry.
pub fn sample_ue_positions<R: Rng + ?Sized>(geometry: &SystemGeometry, rng: &mut R) -> Vec<Point> {
    let c = geometry.ue_circle_center;
    (0..geometry.num_users)
        .map(|_| {
            let r = geometry.ue_circle_radius * rng.gen::<f64>().sqrt();
            let t = 2.0 * PI * rng.gen::<f64>();
            [c[0] + r * t.cos(), c[1] + r * t.sin(), c[2]]
        })
        .collect()
}

fn steering_or_empty(from: &Point, to: &Point, dims: [usize; 2], spacing: f64) -> Result<CVector> {
    if dims[0] * dims[1] == 0 {
        return Ok(CVector::zeros(0));
    }
    let (az, el) = angles_between(from, to)?;
    Ok(upa_steering(az, el, dims, spacing))
}

/// Builds per-link pathloss, Rician factors and LoS steering vectors.
pub fn build_stats(geometry: &SystemGeometry, ue_positions: &[Point]) -> Result<ChannelStats> {
    geometry.validate()?;
    if ue_positions.len() != geometry.num_users {
        return Err(contract(format!(
            "expected {} user positions, got {}",
            geometry.num_users,
            ue_positions.len()
        )));
    }
    let g = geometry;
    let spacing = g.element_spacing_over_wavelength;
    let a_bs = steering_or_empty(&g.bs_pos, &g.ris_pos, g.bs_dims, spacing)?;
    let a_ris = steering_or_empty(&g.ris_pos, &g.bs_pos, g.ris_dims, spacing)?;
    let hbar1 = &a_ris * a_bs.adjoint();
    let delta1 = pathloss_linear(distance(&g.bs_pos, &g.ris_pos), g.alpha1, g.pl0_db)?;

    let users = ue_positions
        .iter()
        .map(|ue| {
            Ok(UserStats {
                delta_u0: pathloss_linear(distance(&g.bs_pos, ue), g.alpha0, g.pl0_db)?,
                delta_u2: pathloss_linear(distance(&g.ris_pos, ue), g.alpha2, g.pl0_db)?,
                kappa_u0: db_to_linear(g.kappa_u0_db),
                kappa_u2: db_to_linear(g.kappa_u2_db),
                hbar_u0: steering_or_empty(&g.bs_pos, ue, g.bs_dims, spacing)?,
                hbar_u2: steering_or_empty(&g.ris_pos, ue, g.ris_dims, spacing)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ChannelStats { delta1, kappa1: db_to_linear(g.kappa1_db), a_bs, a_ris, hbar1, users })
}

/// `√(δκ/(1+κ))` and `√(δ/(1+κ))`: LoS and NLoS amplitudes of a Rician link.
/// An infinite κ yields a purely deterministic link.
pub fn rician_weights(delta: f64, kappa: f64) -> (f64, f64) {
    if kappa.is_infinite() {
        return (delta.sqrt(), 0.0);
    }
    ((delta * kappa / (1.0 + kappa)).sqrt(), (delta / (1.0 + kappa)).sqrt())
}

/// Circularly-symmetric CN(0, 1) draw.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn rician_vector<R: Rng + ?Sized>(los: &CVector, delta: f64, kappa: f64, rng: &mut R) -> CVector {
    let (a, b) = rician_weights(delta, kappa);
    CVector::from_iterator(los.len(), los.iter().map(|l| l * a + complex_gaussian(rng) * b))
}

/// Samples one realization of every link.
///
/// Draw order is fixed: all direct links, then the BS–RIS matrix
/// (column-major), then all RIS–UE links. Direct-link draws therefore do not
/// depend on the RIS size.
pub fn sample_channels<R: Rng + ?Sized>(stats: &ChannelStats, rng: &mut R) -> ChannelRealization {
    let h_u0 = stats.users.iter().map(|u| rician_vector(&u.hbar_u0, u.delta_u0, u.kappa_u0, rng)).collect();
    let (a, b) = rician_weights(stats.delta1, stats.kappa1);
    let mut h1 = stats.hbar1.map(|l| l * a);
    for v in h1.iter_mut() {
        *v += complex_gaussian(rng) * b;
    }
    let h_u2 = stats.users.iter().map(|u| rician_vector(&u.hbar_u2, u.delta_u2, u.kappa_u2, rng)).collect();
    ChannelRealization { h_u0, h1, h_u2 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pathloss_examples() {
        assert_relative_eq!(pathloss_linear(1.0, 3.4, -30.0).unwrap(), 1e-3, max_relative = 1e-12);
        assert_relative_eq!(pathloss_linear(10.0, 2.2, -30.0).unwrap(), 10f64.powf(-5.2), max_relative = 1e-12);
        assert_relative_eq!(pathloss_linear(100.0, 3.0, -30.0).unwrap(), 1e-9, max_relative = 1e-12);
        assert!(matches!(pathloss_linear(0.0, 2.0, -30.0), Err(Error::Domain(_))));
        assert!(matches!(pathloss_linear(-1.0, 2.0, -30.0), Err(Error::Domain(_))));
    }

    #[test]
    fn steering_examples() {
        let a = upa_steering(0.0, PI / 2.0, [3, 2], 0.5);
        assert!(a.iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-15));
        assert_eq!(upa_steering(1.1, 0.3, [1, 1], 0.5), CVector::from_element(1, Complex64::new(1.0, 0.0)));
        let a = upa_steering(PI / 2.0, PI / 2.0, [2, 1], 0.5);
        assert!((a[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((a[1] - Complex64::new(-1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn steering_is_row_major_with_vertical_fastest() {
        // elevation 0 → only the vertical index contributes
        let a = upa_steering(0.7, 0.0, [2, 3], 0.25);
        for h in 0..2 {
            for v in 0..3 {
                let expect = Complex64::from_polar(1.0, 2.0 * PI * 0.25 * v as f64);
                assert!((a[h * 3 + v] - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn angle_examples() {
        let o = [0.0; 3];
        let (az, el) = angles_between(&o, &[0.0, 0.0, 1.0]).unwrap();
        assert_eq!((az, el), (0.0, 0.0));
        let (az, el) = angles_between(&o, &[1.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(az, 0.0);
        assert_relative_eq!(el, PI / 2.0);
        let (az, el) = angles_between(&o, &[0.0, 1.0, 0.0]).unwrap();
        assert_relative_eq!(az, PI / 2.0);
        assert_relative_eq!(el, PI / 2.0);
        assert!(matches!(angles_between(&o, &o), Err(Error::Domain(_))));
    }

    #[test]
    fn antipodal_elevations_on_z_axis() {
        let p = [1.0, 2.0, 3.0];
        let q = [1.0, 2.0, -4.0];
        let (_, e1) = angles_between(&p, &q).unwrap();
        let (_, e2) = angles_between(&q, &p).unwrap();
        assert_relative_eq!(e1 + e2, PI, epsilon = 1e-15);
    }

    #[test]
    fn default_geometry_stats() {
        let g = SystemGeometry::default();
        let ues = vec![g.ue_circle_center; g.num_users];
        let s = build_stats(&g, &ues).unwrap();
        let d1 = (25.0f64 + 70.0 * 70.0 + 27.0 * 27.0).sqrt();
        assert_relative_eq!(s.delta1, pathloss_linear(d1, 2.2, -30.0).unwrap(), max_relative = 1e-12);
        assert_relative_eq!(s.users[0].kappa_u0, 0.501187, max_relative = 1e-5);
        assert_relative_eq!(s.kappa1, 10.0, max_relative = 1e-12);
        assert_eq!(s.hbar1.shape(), (32, 32));
        // rank one and equal to a_ris a_bs^H
        let outer = &s.a_ris * s.a_bs.adjoint();
        assert!((&s.hbar1 - outer).norm() < 1e-12);
        let sv = s.hbar1.clone().singular_values();
        assert!(sv[1] < 1e-9 * sv[0]);
        for u in &s.users {
            assert!(u.hbar_u0.iter().chain(u.hbar_u2.iter()).all(|z| (z.norm() - 1.0).abs() < 1e-12));
        }
        assert_eq!(s.users[0], s.users[2]);
    }

    #[test]
    fn single_element_ris_colocated_users_identical() {
        let g = SystemGeometry { ris_dims: [1, 1], ..SystemGeometry::default() };
        let s = build_stats(&g, &[g.ue_circle_center; 3]).unwrap();
        assert_eq!(s.users[0], s.users[1]);
        assert_eq!(s.users[1], s.users[2]);
    }

    #[test]
    fn rejects_wrong_user_count() {
        let g = SystemGeometry::default();
        assert!(matches!(build_stats(&g, &[g.ue_circle_center]), Err(Error::Contract(_))));
    }

    #[test]
    fn user_positions_stay_on_disc() {
        let g = SystemGeometry::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            for p in sample_ue_positions(&g, &mut rng) {
                assert!(distance(&p, &g.ue_circle_center) <= g.ue_circle_radius + 1e-12);
                assert_eq!(p[2], g.ue_circle_center[2]);
            }
        }
    }

    fn test_stats(kappa_db: f64) -> ChannelStats {
        let g = SystemGeometry {
            bs_dims: [2, 2],
            ris_dims: [2, 2],
            num_users: 1,
            kappa_u0_db: kappa_db,
            kappa1_db: kappa_db,
            kappa_u2_db: kappa_db,
            ..SystemGeometry::default()
        };
        build_stats(&g, &[g.ue_circle_center]).unwrap()
    }

    #[test]
    fn infinite_kappa_is_deterministic() {
        let s = test_stats(120.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = sample_channels(&s, &mut rng);
        let u = &s.users[0];
        let los = u.hbar_u2.map(|z| z * u.delta_u2.sqrt());
        assert!((&r.h_u2[0] - &los).norm() <= 1e-5 * los.norm());
        let los1 = s.hbar1.map(|z| z * s.delta1.sqrt());
        assert!((&r.h1 - &los1).norm() <= 1e-5 * los1.norm());
    }

    #[test]
    fn rayleigh_mean_vanishes_and_power_matches() {
        for kappa_db in [f64::NEG_INFINITY, 0.0, 10.0] {
            let s = test_stats(kappa_db);
            let u = &s.users[0];
            let m = u.hbar_u2.len() as f64;
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let n = 100_000;
            let mut mean = CVector::zeros(u.hbar_u2.len());
            let mut power = 0.0;
            let mut power1 = 0.0;
            for _ in 0..n {
                let r = sample_channels(&s, &mut rng);
                mean += &r.h_u2[0];
                power += r.h_u2[0].norm_squared();
                power1 += r.h1.norm_squared();
            }
            mean /= Complex64::from(n as f64);
            if kappa_db == f64::NEG_INFINITY {
                assert!(mean.norm() <= 0.05 * (u.delta_u2 * m).sqrt());
            }
            assert_relative_eq!(power / n as f64, u.delta_u2 * m, max_relative = 0.02);
            assert_relative_eq!(power1 / n as f64, s.delta1 * 16.0, max_relative = 0.02);
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let s = test_stats(3.0);
        let a = sample_channels(&s, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_channels(&s, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn direct_draws_independent_of_ris_size() {
        let g = SystemGeometry { bs_dims: [2, 2], num_users: 2, ..SystemGeometry::default() };
        let ues = vec![g.ue_circle_center; 2];
        let with = build_stats(&g, &ues).unwrap();
        let without = build_stats(&g.without_ris(), &ues).unwrap();
        let a = sample_channels(&with, &mut ChaCha8Rng::seed_from_u64(4));
        let b = sample_channels(&without, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a.h_u0, b.h_u0);
        assert_eq!(b.h1.shape(), (0, 4));
    }

    #[test]
    fn rayleigh_kappa_roundtrips_through_json() {
        let g = SystemGeometry { kappa_u0_db: f64::NEG_INFINITY, ..SystemGeometry::default() };
        let text = serde_json::to_string(&g).unwrap();
        assert!(text.contains("\"-inf\""));
        let back: SystemGeometry = serde_json::from_str(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(db_to_linear(back.kappa_u0_db), 0.0);
    }
}
