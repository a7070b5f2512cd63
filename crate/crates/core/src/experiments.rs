//! The four studies (convergence, RIS–UE distance with phase quantization,
//! transmit power, Rician factor) and the covariance check, with
//! deterministic CSV output.
//!
//! Every (grid point, variant, seed) job trains from its own seed and is
//! evaluated on common random numbers: drop `e` of seed `s` is drawn from the
//! same stream for every variant, so variants differ only through their
//! policies.

use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{EvalConfig, ExperimentConfig, SweepAxis, SweepConfig, Variant};
use crate::env::{quantize_phases, EnvConfig, EpisodeSetup, RisEnv, Scenario};
use crate::error::{domain, Error, Result};
use crate::geometry::{build_stats, sample_channels, sample_ue_positions, CVector, Point, SystemGeometry};
use crate::nn::PolicyParams;
use crate::par::{map_indexed, stream_rng, Execution};
use crate::ppo::{greedy_solution, train_with_log, Algorithm, TrainConfig, TrainingLog, TrainingOutcome};
use crate::rate::ergodic_sum_rate_mc;
use crate::statcov::{covariance_monte_carlo, covariance_terms, relative_frobenius_error};

/// Mixed into a seed to derive its evaluation streams.
pub const EVAL_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn csv_string(rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Environment for one scenario; the episode length comes from `train`.
pub fn make_env(scenario: Scenario, geometry: &SystemGeometry, positions: Option<Vec<Point>>, train: &TrainConfig) -> Result<RisEnv> {
    let mut cfg = EnvConfig::new(scenario, geometry.clone(), train.episode_length);
    cfg.user_positions = positions;
    RisEnv::new(cfg)
}

/// Trains one policy from `seed`.
pub fn train_policy(env: &mut RisEnv, train: &TrainConfig, algorithm: Algorithm, seed: u64) -> Result<TrainingOutcome> {
    let mut log = TrainingLog::default();
    let params = train_with_log(env, train, algorithm, &mut ChaCha8Rng::seed_from_u64(seed), &mut log)?;
    Ok(TrainingOutcome { params, log })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    /// Mean of the scenario's own objective (surrogate rate for S-CSI
    /// variants, instantaneous rate for the others).
    pub objective: f64,
    /// Mean instantaneous sum rate over fresh channel draws.
    pub ergodic: f64,
}

/// Scores a policy: for each drop, run the mean action from reset and keep
/// the best solution by the scenario objective. S-CSI solutions are then
/// averaged over `realizations` channel draws; I-CSI-fed scenarios redesign
/// per draw and average what they achieve.
pub fn evaluate(env: &mut RisEnv, params: &PolicyParams, eval: &EvalConfig, seed: u64, exec: Execution) -> Result<Score> {
    let (mut objective, mut ergodic) = (0.0, 0.0);
    let (p, sigma2) = (env.power(), env.noise());
    for e in 0..eval.episodes {
        let mut rng = stream_rng(seed ^ EVAL_SALT, e as u64);
        let positions = match &env.config().user_positions {
            Some(p) => p.clone(),
            None => sample_ue_positions(env.geometry(), &mut rng),
        };
        let stats = build_stats(env.geometry(), &positions)?;
        if env.scenario().is_statistical() {
            env.reset_with(EpisodeSetup { stats: stats.clone(), realization: None, fixed_xi: None })?;
            let (sol, obj) = greedy_solution(env, params, eval.greedy_steps)?;
            objective += obj;
            ergodic += ergodic_sum_rate_mc(&stats, &sol, p, sigma2, eval.realizations, &mut rng, exec)?.mean;
        } else {
            let m = stats.num_ris_elements();
            let fixed_xi = (env.scenario() == Scenario::RandomPhase)
                .then(|| CVector::from_fn(m, |_, _| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * rng.gen::<f64>())));
            let mut total = 0.0;
            for _ in 0..eval.realizations {
                let realization = Some(sample_channels(&stats, &mut rng));
                env.reset_with(EpisodeSetup { stats: stats.clone(), realization, fixed_xi: fixed_xi.clone() })?;
                total += greedy_solution(env, params, eval.greedy_steps)?.1;
            }
            let mean = total / eval.realizations as f64;
            objective += mean;
            ergodic += mean;
        }
    }
    let n = eval.episodes as f64;
    Ok(Score { objective: objective / n, ergodic: ergodic / n })
}

/// Trains and scores one variant.
pub fn run_variant(variant: Variant, geometry: &SystemGeometry, train: &TrainConfig, eval: &EvalConfig, seed: u64, exec: Execution) -> Result<(Score, TrainingLog)> {
    let mut env = make_env(variant.scenario(), geometry, None, train)?;
    let out = train_policy(&mut env, train, variant.algorithm(), seed)?;
    Ok((evaluate(&mut env, &out.params, eval, seed, exec)?, out.log))
}

/// Power and Rician sweeps use a pure Rayleigh direct link.
pub fn power_geometry(base: &SystemGeometry, p_dbm: f64) -> SystemGeometry {
    SystemGeometry { tx_power_dbm: p_dbm, kappa_u0_db: f64::NEG_INFINITY, ..base.clone() }
}

pub fn rician_geometry(base: &SystemGeometry, kappa_db: f64) -> SystemGeometry {
    SystemGeometry { kappa1_db: kappa_db, kappa_u2_db: kappa_db, kappa_u0_db: f64::NEG_INFINITY, ..base.clone() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub x: f64,
    pub variant: Variant,
    pub seed: u64,
    pub score: Score,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub x: f64,
    pub variant: Variant,
    pub ergodic: (f64, f64),
    pub objective: (f64, f64),
    pub seeds: usize,
}

fn run_sweep(cfg: &ExperimentConfig, grid: &[f64], geometry_at: impl Fn(f64) -> SystemGeometry + Sync, exec: Execution) -> Result<Vec<SweepPoint>> {
    let jobs: Vec<(f64, Variant, u64)> = grid
        .iter()
        .flat_map(|&x| cfg.variants.iter().flat_map(move |&v| cfg.seeds.iter().map(move |&s| (x, v, s))))
        .collect();
    map_indexed(jobs.len(), exec, |i| {
        let (x, variant, seed) = jobs[i];
        let (score, _) = run_variant(variant, &geometry_at(x), &cfg.train, &cfg.eval, seed, exec)?;
        Ok(SweepPoint { x, variant, seed, score })
    })
    .into_iter()
    .collect()
}

pub fn run_power_sweep(cfg: &ExperimentConfig, exec: Execution) -> Result<Vec<SweepPoint>> {
    let grid = cfg.sweep.grid_for(SweepAxis::PowerDbm, SweepConfig::power());
    run_sweep(cfg, &grid, |p| power_geometry(&cfg.geometry, p), exec)
}

pub fn run_rician_sweep(cfg: &ExperimentConfig, exec: Execution) -> Result<Vec<SweepPoint>> {
    let grid = cfg.sweep.grid_for(SweepAxis::RicianDb, SweepConfig::rician());
    run_sweep(cfg, &grid, |k| rician_geometry(&cfg.geometry, k), exec)
}

/// Per (grid point, variant) statistics over seeds, in first-seen order.
pub fn summarize(points: &[SweepPoint]) -> Vec<SweepSummary> {
    let mut keys: Vec<(f64, Variant)> = Vec::new();
    for p in points {
        if !keys.iter().any(|&(x, v)| x == p.x && v == p.variant) {
            keys.push((p.x, p.variant));
        }
    }
    keys.into_iter()
        .map(|(x, variant)| {
            let sel: Vec<&SweepPoint> = points.iter().filter(|p| p.x == x && p.variant == variant).collect();
            let erg: Vec<f64> = sel.iter().map(|p| p.score.ergodic).collect();
            let obj: Vec<f64> = sel.iter().map(|p| p.score.objective).collect();
            SweepSummary { x, variant, ergodic: mean_std(&erg), objective: mean_std(&obj), seeds: sel.len() }
        })
        .collect()
}

/// Summary CSV: `<axis>,variant,mean_sum_rate,std_sum_rate,mean_objective,std_objective,seeds`.
pub fn sweep_csv(axis: &str, points: &[SweepPoint]) -> Result<String> {
    let header = [axis, "variant", "mean_sum_rate", "std_sum_rate", "mean_objective", "std_objective", "seeds"].map(String::from).to_vec();
    let rows = summarize(points).into_iter().map(|s| {
        vec![s.x.to_string(), s.variant.to_string(), s.ergodic.0.to_string(), s.ergodic.1.to_string(), s.objective.0.to_string(), s.objective.1.to_string(), s.seeds.to_string()]
    });
    csv_string(std::iter::once(header).chain(rows))
}

/// One row per job: `<axis>,variant,seed,sum_rate,objective`.
pub fn sweep_seed_csv(axis: &str, points: &[SweepPoint]) -> Result<String> {
    let header = [axis, "variant", "seed", "sum_rate", "objective"].map(String::from).to_vec();
    let rows = points.iter().map(|p| vec![p.x.to_string(), p.variant.to_string(), p.seed.to_string(), p.score.ergodic.to_string(), p.score.objective.to_string()]);
    csv_string(std::iter::once(header).chain(rows))
}

/// Single user, 5 dBm budget.
pub fn distance_geometry(base: &SystemGeometry) -> SystemGeometry {
    SystemGeometry { num_users: 1, tx_power_dbm: 5.0, ..base.clone() }
}

/// User position at 3-D distance `d` from the RIS, on the user plane, moved
/// along +x from the point below the RIS.
pub fn distance_position(geometry: &SystemGeometry, d: f64) -> Result<Point> {
    let [rx, ry, rz] = geometry.ris_pos;
    let z = geometry.ue_circle_center[2];
    let h = rz - z;
    if !(d > h.abs()) {
        return Err(domain(format!("RIS–UE distance {d} m is not reachable from a RIS {h} m above the user plane")));
    }
    Ok([rx + (d * d - h * h).sqrt(), ry, z])
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistancePoint {
    pub d: f64,
    pub seed: u64,
    /// Surrogate rate at the trained continuous phases.
    pub continuous: f64,
    /// Surrogate rate after quantizing the phases, per bit count.
    pub quantized: Vec<(u32, f64)>,
}

pub fn run_distance_sweep(cfg: &ExperimentConfig, exec: Execution) -> Result<Vec<DistancePoint>> {
    let grid = cfg.sweep.grid_for(SweepAxis::Distance, SweepConfig::distance());
    let geometry = distance_geometry(&cfg.geometry);
    let jobs: Vec<(f64, u64)> = grid.iter().flat_map(|&d| cfg.seeds.iter().map(move |&s| (d, s))).collect();
    map_indexed(jobs.len(), exec, |i| {
        let (d, seed) = jobs[i];
        let mut env = make_env(Scenario::ScsiJoint, &geometry, Some(vec![distance_position(&geometry, d)?]), &cfg.train)?;
        let out = train_policy(&mut env, &cfg.train, Algorithm::Ppo, seed)?;
        env.reset(&mut stream_rng(seed ^ EVAL_SALT, 0))?;
        let (sol, continuous) = greedy_solution(&mut env, &out.params, cfg.eval.greedy_steps)?;
        let quantized = cfg
            .quantization_bits
            .iter()
            .map(|&q| {
                let mut s = sol.clone();
                s.xi = quantize_phases(&sol.xi, q)?;
                Ok((q, env.objective(&s)?))
            })
            .collect::<Result<_>>()?;
        Ok(DistancePoint { d, seed, continuous, quantized })
    })
    .into_iter()
    .collect()
}

/// `d,q_bits,mean_sum_rate,std_sum_rate`; `q_bits` is `continuous` for the
/// unquantized phases.
pub fn distance_csv(points: &[DistancePoint]) -> Result<String> {
    let mut ds: Vec<f64> = Vec::new();
    for p in points {
        if !ds.contains(&p.d) {
            ds.push(p.d);
        }
    }
    let bits: Vec<u32> = points.first().map(|p| p.quantized.iter().map(|q| q.0).collect()).unwrap_or_default();
    let mut rows = vec![["d", "q_bits", "mean_sum_rate", "std_sum_rate"].map(String::from).to_vec()];
    for d in ds {
        let at: Vec<&DistancePoint> = points.iter().filter(|p| p.d == d).collect();
        let (m, s) = mean_std(&at.iter().map(|p| p.continuous).collect::<Vec<_>>());
        rows.push(vec![d.to_string(), "continuous".into(), m.to_string(), s.to_string()]);
        for (k, q) in bits.iter().enumerate() {
            let (m, s) = mean_std(&at.iter().map(|p| p.quantized[k].1).collect::<Vec<_>>());
            rows.push(vec![d.to_string(), q.to_string(), m.to_string(), s.to_string()]);
        }
    }
    csv_string(rows)
}

#[derive(Debug, Clone)]
pub struct ConvergenceRun {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub log: TrainingLog,
}

fn algorithm_name(a: Algorithm) -> &'static str {
    match a {
        Algorithm::Ppo => "ppo",
        Algorithm::A2c => "a2c",
    }
}

/// Trains PPO (and A2C when enabled) for every seed on the configured
/// scenario. With `out` set, each run's full log is written to
/// `train_<alg>_seed<s>.csv` as soon as it finishes, or up to the failing
/// episode if training aborts.
pub fn run_convergence(cfg: &ExperimentConfig, out: Option<&Path>, exec: Execution) -> Result<Vec<ConvergenceRun>> {
    let mut algorithms = vec![Algorithm::Ppo];
    if cfg.include_a2c {
        algorithms.push(Algorithm::A2c);
    }
    let jobs: Vec<(Algorithm, u64)> = algorithms.iter().flat_map(|&a| cfg.seeds.iter().map(move |&s| (a, s))).collect();
    map_indexed(jobs.len(), exec, |i| {
        let (algorithm, seed) = jobs[i];
        let mut env = make_env(cfg.scenario, &cfg.geometry, None, &cfg.train)?;
        let mut log = TrainingLog::default();
        let result = train_with_log(&mut env, &cfg.train, algorithm, &mut ChaCha8Rng::seed_from_u64(seed), &mut log);
        if let Some(dir) = out {
            write_text(&dir.join(format!("train_{}_seed{seed}.csv", algorithm_name(algorithm))), &log.to_csv(true)?)?;
        }
        result?;
        Ok(ConvergenceRun { algorithm, seed, log })
    })
    .into_iter()
    .collect()
}

/// `algorithm,seed,episode,reward,smoothed_reward`.
pub fn convergence_csv(runs: &[ConvergenceRun]) -> Result<String> {
    let header = ["algorithm", "seed", "episode", "reward", "smoothed_reward"].map(String::from).to_vec();
    let rows = runs.iter().flat_map(|r| {
        r.log.rows.iter().map(move |row| {
            vec![algorithm_name(r.algorithm).to_string(), r.seed.to_string(), row.episode.to_string(), row.cumulative_reward.to_string(), row.smoothed_reward.to_string()]
        })
    });
    csv_string(std::iter::once(header).chain(rows))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceRow {
    pub kappa1: f64,
    pub kappa_u2: f64,
    pub user: usize,
    pub n_samples: usize,
    pub err_direct: f64,
    pub err_cross: f64,
    pub err_reflected: f64,
    pub err_total: f64,
}

/// Default grid of linear Rician factors for the covariance check.
pub const COVARIANCE_KAPPA_GRID: [f64; 3] = [0.1, 1.0, 10.0];

/// Compares closed-form and sampled covariances for every
/// `(κ₁, κ_{u,2}) ∈ grid²` and every user, at the configured geometry, one
/// user drop and one random phase vector per seed.
pub fn verify_covariance(cfg: &ExperimentConfig, kappa_grid: &[f64], exec: Execution) -> Result<Vec<CovarianceRow>> {
    let seed = cfg.seeds[0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions = sample_ue_positions(&cfg.geometry, &mut rng);
    let m = cfg.geometry.num_ris_elements();
    let xi = CVector::from_fn(m, |_, _| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * rng.gen::<f64>()));
    let mut rows = Vec::new();
    for &k1 in kappa_grid {
        for &k2 in kappa_grid {
            let g = SystemGeometry { kappa1_db: 10.0 * k1.log10(), kappa_u2_db: 10.0 * k2.log10(), ..cfg.geometry.clone() };
            let stats = build_stats(&g, &positions)?;
            for user in 0..stats.num_users() {
                let exact = covariance_terms(&stats, user, &xi)?;
                let mc = covariance_monte_carlo(&stats, user, &xi, cfg.eval.covariance_samples, &mut rng, exec)?;
                rows.push(CovarianceRow {
                    kappa1: k1,
                    kappa_u2: k2,
                    user,
                    n_samples: mc.n_samples,
                    err_direct: relative_frobenius_error(&mc.direct, &exact.direct()),
                    err_cross: relative_frobenius_error(&mc.cross, &exact.cross),
                    err_reflected: relative_frobenius_error(&mc.reflected, &exact.reflected()),
                    err_total: relative_frobenius_error(&mc.total(), &exact.total()),
                });
            }
        }
    }
    Ok(rows)
}

/// `kappa1,kappa_u2,user,samples,err_direct,err_cross,err_reflected,err_total`.
pub fn covariance_csv(rows: &[CovarianceRow]) -> Result<String> {
    let header = ["kappa1", "kappa_u2", "user", "samples", "err_direct", "err_cross", "err_reflected", "err_total"].map(String::from).to_vec();
    let body = rows.iter().map(|r| {
        vec![
            r.kappa1.to_string(),
            r.kappa_u2.to_string(),
            r.user.to_string(),
            r.n_samples.to_string(),
            r.err_direct.to_string(),
            r.err_cross.to_string(),
            r.err_reflected.to_string(),
            r.err_total.to_string(),
        ]
    });
    csv_string(std::iter::once(header).chain(body))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Preset;
    use crate::ppo::trailing_mean;

    fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::preset(Preset::Desk);
        cfg.geometry.bs_dims = [2, 1];
        cfg.geometry.ris_dims = [2, 1];
        cfg.train = TrainConfig { episodes: 2, episode_length: 6, horizon: 3, epochs: 2, minibatch: 3, hidden: vec![8], ..TrainConfig::desk() };
        cfg.eval = EvalConfig { greedy_steps: 2, episodes: 2, realizations: 8, covariance_samples: 2000, random_baseline_episodes: 2 };
        cfg.seeds = vec![1, 2];
        cfg
    }

    #[test]
    fn mean_std_basics() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn smoothing_step_response() {
        let mut raw = vec![1.0; 100];
        raw.extend(vec![2.0; 100]);
        let s = trailing_mean(&raw, 100);
        assert_eq!(s[99], 1.0);
        for j in 0..100 {
            assert!((s[100 + j] - (1.0 + (j + 1) as f64 / 100.0)).abs() < 1e-12);
        }
        let c = trailing_mean(&[4.0; 7], 100);
        assert!(c.iter().all(|&v| v == 4.0));
    }

    #[test]
    fn distance_positions_hit_the_requested_distance() {
        let g = distance_geometry(&SystemGeometry::default());
        for d in SweepConfig::distance().grid {
            let p = distance_position(&g, d).unwrap();
            let r = g.ris_pos;
            let dist = ((p[0] - r[0]).powi(2) + (p[1] - r[1]).powi(2) + (p[2] - r[2]).powi(2)).sqrt();
            assert!((dist - d).abs() < 1e-9);
        }
        assert!(distance_position(&g, 2.0).is_err());
    }

    #[test]
    fn rayleigh_direct_link_drops_direct_los_and_cross_terms() {
        let g = rician_geometry(&SystemGeometry { bs_dims: [2, 2], ris_dims: [2, 2], num_users: 2, ..SystemGeometry::default() }, 5.0);
        let stats = build_stats(&g, &[[4.0, 70.0, 0.0], [6.0, 71.0, 0.0]]).unwrap();
        let xi = CVector::from_fn(4, |k, _| Complex64::from_polar(1.0, k as f64));
        for u in 0..2 {
            let t = covariance_terms(&stats, u, &xi).unwrap();
            assert!(t.direct_los.iter().all(|z| *z == Complex64::from(0.0)));
            assert!(t.cross.iter().all(|z| *z == Complex64::from(0.0)));
        }
    }

    #[test]
    fn sweeps_are_deterministic_and_schema_stable() {
        let mut cfg = tiny_config();
        cfg.variants = vec![Variant::ScsiPpo, Variant::NoRis, Variant::RandomPhase, Variant::IcsiPpo];
        cfg.sweep = SweepConfig { axis: SweepAxis::PowerDbm, grid: vec![0.0, 10.0] };
        let a = run_power_sweep(&cfg, Execution::Sequential).unwrap();
        let b = run_power_sweep(&cfg, Execution::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2 * 4 * 2);
        let csv = sweep_csv("p_dbm", &a).unwrap();
        assert!(csv.starts_with("p_dbm,variant,mean_sum_rate,std_sum_rate,mean_objective,std_objective,seeds\n"));
        assert_eq!(csv.lines().count(), 1 + 2 * 4);
        assert_eq!(sweep_seed_csv("p_dbm", &a).unwrap().lines().count(), 1 + 16);
        for p in &a {
            assert!(p.score.ergodic.is_finite() && p.score.ergodic >= 0.0);
            if !p.variant.scenario().is_statistical() {
                assert_eq!(p.score.ergodic, p.score.objective);
            }
        }
    }

    #[test]
    fn distance_sweep_rows() {
        let mut cfg = tiny_config();
        cfg.sweep = SweepConfig { axis: SweepAxis::Distance, grid: vec![40.0, 70.0] };
        let pts = run_distance_sweep(&cfg, Execution::default()).unwrap();
        assert_eq!(pts.len(), 4);
        let csv = distance_csv(&pts).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "d,q_bits,mean_sum_rate,std_sum_rate");
        assert_eq!(lines.len(), 1 + 2 * 4);
        assert!(lines[1].starts_with("40,continuous,"));
        assert!(lines[2].starts_with("40,1,"));
        assert_eq!(csv, distance_csv(&run_distance_sweep(&cfg, Execution::Sequential).unwrap()).unwrap());
    }

    #[test]
    fn convergence_writes_logs() {
        let cfg = tiny_config();
        let dir = tempfile::tempdir().unwrap();
        let runs = run_convergence(&cfg, Some(dir.path()), Execution::default()).unwrap();
        assert_eq!(runs.len(), 4);
        let csv = convergence_csv(&runs).unwrap();
        assert_eq!(csv.lines().count(), 1 + 4 * 2);
        for name in ["train_ppo_seed1.csv", "train_a2c_seed2.csv"] {
            let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
            assert_eq!(text.lines().count(), 3);
        }
    }

    #[test]
    fn covariance_check_is_small_and_deterministic() {
        let mut cfg = tiny_config();
        cfg.eval.covariance_samples = 20_000;
        let rows = verify_covariance(&cfg, &[1.0], Execution::default()).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.err_total < 0.1));
        assert_eq!(rows, verify_covariance(&cfg, &[1.0], Execution::Sequential).unwrap());
        let huge = verify_covariance(&ExperimentConfig { geometry: SystemGeometry { kappa_u0_db: 300.0, ..cfg.geometry.clone() }, ..cfg.clone() }, &[1e30], Execution::default()).unwrap();
        assert!(huge.iter().all(|r| r.err_total <= 1e-6), "{huge:?}");
    }
}
