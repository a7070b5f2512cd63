//! Beamforming environments: observation encoding, action decoding, reward,
//! episode lifecycle, and the RIS phase quantizer.
//!
//! Four scenarios share one [`RisEnv`]:
//!
//! | scenario       | reward                                  | observation                     |
//! |----------------|-----------------------------------------|---------------------------------|
//! | `scsi_joint`   | surrogate rate on `C_u(Ξ)`              | beamformers, Ξ, μ_u, Λ_u        |
//! | `no_ris`       | surrogate rate, RIS removed             | beamformers, μ_u, Λ_u           |
//! | `random_phase` | rate on a frozen draw, frozen random Ξ  | channels, beamformers, sum rate |
//! | `icsi`         | rate on a frozen draw                   | channels, beamformers, Ξ, sum rate |
//!
//! Channel blocks in observations are divided by the square root of their
//! link pathloss, and μ_u is expressed in units of `σ²/(P/U)`, so every input
//! is O(1) regardless of the deployment scale.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::geometry::{build_stats, sample_channels, sample_ue_positions, ChannelRealization, ChannelStats, CMatrix, CVector, Point, SystemGeometry};
use crate::rate::{instantaneous_rates, scsi_rates, BeamformingSolution};
use crate::statcov::{covariance_set, CovarianceSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Joint beamformer and RIS design from channel statistics.
    ScsiJoint,
    /// Beamformers only, RIS removed.
    NoRis,
    /// Beamformers only, RIS phases drawn uniformly once per episode.
    RandomPhase,
    /// Joint design with the instantaneous channel known.
    Icsi,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::ScsiJoint, Scenario::NoRis, Scenario::RandomPhase, Scenario::Icsi];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::ScsiJoint => "scsi_joint",
            Scenario::NoRis => "no_ris",
            Scenario::RandomPhase => "random_phase",
            Scenario::Icsi => "icsi",
        }
    }

    /// Whether the reward is computed from the covariance matrices.
    pub fn is_statistical(self) -> bool {
        matches!(self, Scenario::ScsiJoint | Scenario::NoRis)
    }

    /// Whether the agent controls the RIS phases.
    pub fn controls_ris(self) -> bool {
        matches!(self, Scenario::ScsiJoint | Scenario::Icsi)
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario {s:?}")))
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub scenario: Scenario,
    pub geometry: SystemGeometry,
    pub episode_length: usize,
    /// Fixed user positions; drawn on the disc at every reset when `None`.
    pub user_positions: Option<Vec<Point>>,
}

impl EnvConfig {
    pub fn new(scenario: Scenario, geometry: SystemGeometry, episode_length: usize) -> Self {
        Self { scenario, geometry, episode_length, user_positions: None }
    }
}

/// Observation length for a scenario with `n` antennas, `m` RIS elements and
/// `u` users (for `no_ris`, `m` is ignored).
pub fn observation_dim(scenario: Scenario, n: usize, m: usize, u: usize) -> usize {
    match scenario {
        Scenario::ScsiJoint => u * (3 * n + 1) + 2 * m,
        Scenario::NoRis => u * (3 * n + 1),
        Scenario::RandomPhase => 4 * n * u + 2 * n * m + 2 * u * m + 1,
        Scenario::Icsi => 4 * n * u + 2 * n * m + 2 * u * m + 2 * m + 1,
    }
}

pub fn action_dim(scenario: Scenario, n: usize, m: usize, u: usize) -> usize {
    if scenario.controls_ris() {
        2 * u * n + 2 * m
    } else {
        2 * u * n
    }
}

/// Maps a raw action in `[-1, 1]^dim` to a feasible solution.
///
/// Layout: `[α_f (U·N), β_f (U·N), α_Ξ (M), β_Ξ (M)]`, user-major. Each raw
/// value `r` becomes an angle `π(r + 1) ∈ [0, 2π]`; entries are
/// `cos α + j sin β`. Beamformers are then scaled to unit norm and RIS
/// coefficients to unit modulus. A zero beamformer falls back to the
/// uniform one and a zero RIS coefficient to 1.
///
/// When the scenario does not control the RIS, `fixed_xi` is used verbatim.
pub fn decode_action(raw: &[f64], scenario: Scenario, n: usize, m: usize, u: usize, fixed_xi: &CVector) -> Result<BeamformingSolution> {
    let dim = action_dim(scenario, n, m, u);
    if raw.len() != dim {
        return Err(contract(format!("{scenario} action must have {dim} entries, got {}", raw.len())));
    }
    let angle = |r: f64| PI * (r + 1.0);
    let entry = |a: f64, b: f64| Complex64::new(angle(a).cos(), angle(b).sin());
    let un = u * n;

    let mut f = CMatrix::from_fn(n, u, |k, user| entry(raw[user * n + k], raw[un + user * n + k]));
    for mut col in f.column_iter_mut() {
        let norm = col.norm();
        if norm > 1e-12 {
            col /= Complex64::from(norm);
        } else {
            col.fill(Complex64::from(1.0 / (n as f64).sqrt()));
        }
    }

    let xi = if scenario.controls_ris() {
        CVector::from_fn(m, |k, _| {
            let z = entry(raw[2 * un + k], raw[2 * un + m + k]);
            let r = z.norm();
            if r > 1e-12 {
                z / r
            } else {
                Complex64::new(1.0, 0.0)
            }
        })
    } else {
        fixed_xi.clone()
    };
    Ok(BeamformingSolution { f, xi })
}

fn wrap_phase(z: Complex64) -> f64 {
    let a = z.arg();
    if a < 0.0 {
        a + 2.0 * PI
    } else {
        a
    }
}

/// Snaps each unit-modulus coefficient to the nearest of the `2^q` phases
/// `{0, 2π/2^q, …}`; exact ties go to the smaller grid phase.
pub fn quantize_phases(xi: &CVector, bits: u32) -> Result<CVector> {
    if bits == 0 || bits > 30 {
        return Err(contract(format!("quantization needs 1..=30 bits, got {bits}")));
    }
    if let Some(bad) = xi.iter().find(|z| (z.norm() - 1.0).abs() > 1e-9) {
        return Err(contract(format!("cannot quantize non-unit-modulus coefficient {bad}")));
    }
    let levels = 1u64 << bits;
    let step = 2.0 * PI / levels as f64;
    Ok(xi.map(|z| {
        let phase = wrap_phase(z);
        let lo = ((phase / step).floor() as u64).min(levels - 1);
        let hi = (lo + 1) % levels;
        let d_lo = phase - lo as f64 * step;
        let d_hi = (lo + 1) as f64 * step - phase;
        let k = if d_hi < d_lo || (d_hi == d_lo && hi < lo) { hi } else { lo };
        Complex64::from_polar(1.0, k as f64 * step)
    }))
}

/// Wrapped angular distance between two unit-modulus numbers.
pub fn phase_distance(a: Complex64, b: Complex64) -> f64 {
    (a * b.conj()).arg().abs()
}

/// Per-episode context fixed at reset.
#[derive(Debug, Clone)]
pub struct EpisodeSetup {
    pub stats: ChannelStats,
    /// Frozen realization (random-phase and I-CSI scenarios).
    pub realization: Option<ChannelRealization>,
    /// Frozen RIS phases (random-phase scenario).
    pub fixed_xi: Option<CVector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone)]
struct EnvState {
    setup: EpisodeSetup,
    solution: BeamformingSolution,
    covariances: Option<CovarianceSet>,
    rates: Vec<f64>,
    timestep: usize,
}

/// One single-owner environment instance.
#[derive(Debug, Clone)]
pub struct RisEnv {
    config: EnvConfig,
    geometry: SystemGeometry,
    power: f64,
    noise: f64,
    state: Option<EnvState>,
}

impl RisEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        if config.episode_length == 0 {
            return Err(Error::Config("episode_length must be at least 1".into()));
        }
        let geometry = match config.scenario {
            Scenario::NoRis => config.geometry.without_ris(),
            _ => config.geometry.clone(),
        };
        geometry.validate()?;
        if let Some(p) = &config.user_positions {
            if p.len() != geometry.num_users {
                return Err(Error::Config("user_positions length differs from num_users".into()));
            }
        }
        Ok(Self { power: geometry.tx_power_watts(), noise: geometry.noise_watts(), geometry, config, state: None })
    }

    pub fn scenario(&self) -> Scenario {
        self.config.scenario
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    /// The geometry actually simulated (RIS removed for `no_ris`).
    pub fn geometry(&self) -> &SystemGeometry {
        &self.geometry
    }

    fn dims(&self) -> (usize, usize, usize) {
        (self.geometry.num_bs_antennas(), self.geometry.num_ris_elements(), self.geometry.num_users)
    }

    pub fn observation_dim(&self) -> usize {
        let (n, m, u) = self.dims();
        observation_dim(self.scenario(), n, m, u)
    }

    pub fn action_dim(&self) -> usize {
        let (n, m, u) = self.dims();
        action_dim(self.scenario(), n, m, u)
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    /// Draws the per-episode context: user positions, then (random-phase
    /// only) the frozen phases, then (random-phase, I-CSI) the frozen draw.
    pub fn draw_setup<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<EpisodeSetup> {
        let positions = match &self.config.user_positions {
            Some(p) => p.clone(),
            None => sample_ue_positions(&self.geometry, rng),
        };
        let stats = build_stats(&self.geometry, &positions)?;
        let m = stats.num_ris_elements();
        let fixed_xi = (self.scenario() == Scenario::RandomPhase)
            .then(|| CVector::from_fn(m, |_, _| Complex64::from_polar(1.0, 2.0 * PI * rng.gen::<f64>())));
        let realization = (!self.scenario().is_statistical()).then(|| sample_channels(&stats, rng));
        Ok(EpisodeSetup { stats, realization, fixed_xi })
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Vec<f64>> {
        let setup = self.draw_setup(rng)?;
        self.reset_with(setup)
    }

    /// Starts an episode from an explicit context.
    pub fn reset_with(&mut self, setup: EpisodeSetup) -> Result<Vec<f64>> {
        let (n, m, u) = self.dims();
        if setup.stats.num_bs_antennas() != n || setup.stats.num_ris_elements() != m || setup.stats.num_users() != u {
            return Err(contract("episode setup does not match the environment geometry"));
        }
        if !self.scenario().is_statistical() && setup.realization.is_none() {
            return Err(contract(format!("{} needs a frozen channel realization", self.scenario())));
        }
        let mut solution = BeamformingSolution::uniform(n, u, m);
        if self.scenario() == Scenario::RandomPhase {
            solution.xi = setup.fixed_xi.clone().ok_or_else(|| contract("random_phase needs frozen RIS phases"))?;
        }
        let mut state = EnvState { setup, solution, covariances: None, rates: Vec::new(), timestep: 0 };
        self.evaluate_into(&mut state)?;
        self.state = Some(state);
        Ok(self.observation())
    }

    fn evaluate_into(&self, state: &mut EnvState) -> Result<()> {
        if self.scenario().is_statistical() {
            let covs = covariance_set(&state.setup.stats, &state.solution.xi)?;
            state.rates = scsi_rates(&covs, &state.solution.f, self.power, self.noise)?;
            state.covariances = Some(covs);
        } else {
            let real = state.setup.realization.as_ref().expect("checked at reset");
            state.rates = instantaneous_rates(real, &state.solution, self.power, self.noise)?;
        }
        Ok(())
    }

    fn state(&self) -> Result<&EnvState> {
        self.state.as_ref().ok_or_else(|| contract("environment used before reset"))
    }

    pub fn solution(&self) -> Result<&BeamformingSolution> {
        Ok(&self.state()?.solution)
    }

    pub fn setup(&self) -> Result<&EpisodeSetup> {
        Ok(&self.state()?.setup)
    }

    pub fn covariances(&self) -> Result<Option<&CovarianceSet>> {
        Ok(self.state()?.covariances.as_ref())
    }

    /// Current per-user rates under the scenario's objective.
    pub fn rates(&self) -> Result<&[f64]> {
        Ok(&self.state()?.rates)
    }

    pub fn timestep(&self) -> usize {
        self.state.as_ref().map_or(0, |s| s.timestep)
    }

    pub fn is_done(&self) -> bool {
        self.state.as_ref().is_some_and(|s| s.timestep >= self.config.episode_length)
    }

    /// Scenario objective of an arbitrary solution under the current episode.
    pub fn objective(&self, solution: &BeamformingSolution) -> Result<f64> {
        let state = self.state()?;
        if self.scenario().is_statistical() {
            let covs = covariance_set(&state.setup.stats, &solution.xi)?;
            Ok(scsi_rates(&covs, &solution.f, self.power, self.noise)?.iter().sum())
        } else {
            let real = state.setup.realization.as_ref().expect("checked at reset");
            Ok(instantaneous_rates(real, solution, self.power, self.noise)?.iter().sum())
        }
    }

    pub fn decode(&self, raw: &[f64]) -> Result<BeamformingSolution> {
        let (n, m, u) = self.dims();
        let state = self.state()?;
        let fixed = state.setup.fixed_xi.clone().unwrap_or_else(|| state.solution.xi.clone());
        decode_action(raw, self.scenario(), n, m, u, &fixed)
    }

    pub fn step(&mut self, raw: &[f64]) -> Result<StepOutcome> {
        if self.is_done() {
            return Err(contract("step called on a finished episode"));
        }
        let solution = self.decode(raw)?;
        let mut state = self.state.take().ok_or_else(|| contract("environment used before reset"))?;
        state.solution = solution;
        let evaluated = self.evaluate_into(&mut state);
        state.timestep += 1;
        let done = state.timestep >= self.config.episode_length;
        let reward = state.rates.iter().sum();
        self.state = Some(state);
        evaluated?;
        Ok(StepOutcome { observation: self.observation(), reward, done })
    }

    /// Observation of the current state.
    pub fn observation(&self) -> Vec<f64> {
        let state = self.state.as_ref().expect("observation before reset");
        match self.scenario() {
            Scenario::ScsiJoint | Scenario::NoRis => self.observation_statistical(state),
            Scenario::RandomPhase | Scenario::Icsi => self.observation_instantaneous(state),
        }
    }

    fn observation_statistical(&self, state: &EnvState) -> Vec<f64> {
        let (n, m, u) = self.dims();
        let mut obs = Vec::with_capacity(observation_dim(self.scenario(), n, m, u));
        push_beamformers(&mut obs, &state.solution.f);
        if self.scenario() == Scenario::ScsiJoint {
            obs.extend(state.solution.xi.iter().map(|z| z.re));
            obs.extend(state.solution.xi.iter().map(|z| z.im));
        }
        let covs = state.covariances.as_ref().expect("statistical scenario keeps covariances");
        let snr_scale = self.power / u as f64 / self.noise;
        for (c, f) in covs.per_user.iter().zip(state.solution.f.column_iter()) {
            obs.extend((c * f).iter().map(|z| z.norm() * snr_scale));
        }
        obs.extend_from_slice(&state.rates);
        obs
    }

    fn observation_instantaneous(&self, state: &EnvState) -> Vec<f64> {
        let real = state.setup.realization.as_ref().expect("checked at reset");
        let stats = &state.setup.stats;
        let mut obs = Vec::with_capacity(self.observation_dim());
        let scale = |d: f64| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 };
        let direct: Vec<(f64, &CVector)> = stats.users.iter().zip(&real.h_u0).map(|(s, h)| (scale(s.delta_u0), h)).collect();
        push_channels(&mut obs, &direct);
        let s1 = scale(stats.delta1);
        obs.extend(real.h1.iter().map(|z| z.re * s1));
        obs.extend(real.h1.iter().map(|z| z.im * s1));
        let reflected: Vec<(f64, &CVector)> = stats.users.iter().zip(&real.h_u2).map(|(s, h)| (scale(s.delta_u2), h)).collect();
        push_channels(&mut obs, &reflected);
        push_beamformers(&mut obs, &state.solution.f);
        if self.scenario() == Scenario::Icsi {
            obs.extend(state.solution.xi.iter().map(|z| z.re));
            obs.extend(state.solution.xi.iter().map(|z| z.im));
        }
        obs.push(state.rates.iter().sum());
        obs
    }
}

fn push_beamformers(obs: &mut Vec<f64>, f: &CMatrix) {
    // column-major storage: user-major order
    obs.extend(f.iter().map(|z| z.re));
    obs.extend(f.iter().map(|z| z.im));
}

fn push_channels(obs: &mut Vec<f64>, links: &[(f64, &CVector)]) {
    for (s, h) in links {
        obs.extend(h.iter().map(|z| z.re * s));
    }
    for (s, h) in links {
        obs.extend(h.iter().map(|z| z.im * s));
    }
}
