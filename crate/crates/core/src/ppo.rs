//! On-policy training: rollouts, generalized advantage estimation, the
//! clipped PPO surrogate, the A2C baseline loss, and the episode loop.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::RisEnv;
use crate::error::{contract, Error, Result};
use crate::nn::{log_prob, log_prob_grad, policy_sample, Adam, PolicyParams};
use crate::rate::BeamformingSolution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    /// Rollout length between updates.
    pub horizon: usize,
    /// Optimization passes over each rollout (PPO only).
    pub epochs: usize,
    pub minibatch: usize,
    pub lr: f64,
    pub episodes: usize,
    pub episode_length: usize,
    pub hidden: Vec<usize>,
    pub value_coef: f64,
    /// Subtract the running mean reward before advantage estimation, so the
    /// critic fits deviations instead of a large discounted constant.
    pub center_rewards: bool,
    /// Trailing window of the smoothed reward column.
    pub smoothing_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.995,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            horizon: 10,
            epochs: 100,
            minibatch: 10,
            lr: 1.5e-4,
            episodes: 2000,
            episode_length: 4000,
            hidden: vec![64, 64],
            value_coef: 0.5,
            center_rewards: true,
            smoothing_window: 100,
        }
    }
}

impl TrainConfig {
    /// Table-scale hyperparameters with a shortened run.
    pub fn desk() -> Self {
        Self { episodes: 200, episode_length: 200, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let fail = |m: &str| Err(Error::Config(m.into()));
        if !unit(self.gamma) || !unit(self.gae_lambda) {
            return fail("gamma and gae_lambda must lie in [0, 1]");
        }
        if !(self.clip_eps > 0.0) || !(self.lr > 0.0) || !(self.value_coef >= 0.0) {
            return fail("clip_eps and lr must be positive, value_coef non-negative");
        }
        if self.horizon == 0 || self.epochs == 0 || self.episodes == 0 || self.episode_length == 0 || self.smoothing_window == 0 {
            return fail("horizon, epochs, episodes, episode_length and smoothing_window must be positive");
        }
        if self.minibatch == 0 || self.minibatch > self.horizon {
            return fail("minibatch must lie in 1..=horizon");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return fail("hidden layer widths must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Ppo,
    A2c,
}

/// Transitions collected under the behaviour policy.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub observations: Vec<Vec<f64>>,
    /// Unclipped Gaussian draws.
    pub z: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    /// Critic estimate of the state after the last transition.
    pub bootstrap_value: f64,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Values with the bootstrap appended, `len + 1` entries.
    pub fn values_with_bootstrap(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        v.push(self.bootstrap_value);
        v
    }
}

/// `Â_t = δ_t + γλ Â_{t+1}` with `δ_t = r_t + γV_{t+1} − V_t` and `Â_T = 0`.
pub fn compute_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    if values.len() != rewards.len() + 1 {
        return Err(contract(format!("GAE needs {} values for {} rewards, got {}", rewards.len() + 1, rewards.len(), values.len())));
    }
    let mut adv = vec![0.0; rewards.len()];
    let mut next = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        next = delta + gamma * lambda * next;
        adv[t] = next;
    }
    Ok(adv)
}

/// Shifts to zero mean and scales to unit standard deviation, unless the
/// spread is below `1e-8`.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std >= 1e-8 {
        adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
    }
}

/// `min(ρA, clip(ρ, 1−ε, 1+ε)A)` for one sample.
pub fn clipped_objective(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage)
}

/// Batch ready for a gradient step.
#[derive(Debug, Clone)]
pub struct Minibatch {
    /// Observations as columns.
    pub observations: DMatrix<f64>,
    /// Unclipped draws as columns.
    pub z: DMatrix<f64>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.old_log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.old_log_probs.is_empty()
    }

    /// Selects columns `idx` of a rollout, with precomputed advantages and
    /// returns for every transition.
    pub fn from_rollout(buf: &RolloutBuffer, advantages: &[f64], returns: &[f64], idx: &[usize]) -> Self {
        let obs_dim = buf.observations[0].len();
        let act_dim = buf.z[0].len();
        Self {
            observations: DMatrix::from_iterator(obs_dim, idx.len(), idx.iter().flat_map(|&i| buf.observations[i].iter().copied())),
            z: DMatrix::from_iterator(act_dim, idx.len(), idx.iter().flat_map(|&i| buf.z[i].iter().copied())),
            old_log_probs: idx.iter().map(|&i| buf.log_probs[i]).collect(),
            advantages: idx.iter().map(|&i| advantages[i]).collect(),
            returns: idx.iter().map(|&i| returns[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    /// Negated policy objective.
    pub policy: f64,
    /// Mean squared critic error.
    pub value: f64,
    pub total: f64,
}

/// Mean squared error between critic outputs and empirical returns.
pub fn value_loss(params: &PolicyParams, batch: &Minibatch) -> Result<f64> {
    let fwd = params.forward(&batch.observations)?;
    Ok(mse(fwd.values(), &batch.returns))
}

fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64
}

/// Loss and gradient for one update: the clipped surrogate (PPO) or the
/// plain log-likelihood policy gradient (A2C), plus `value_coef` times the
/// value loss.
pub fn loss_and_grad(params: &PolicyParams, batch: &Minibatch, algorithm: Algorithm, clip_eps: f64, value_coef: f64) -> Result<(LossParts, Vec<f64>)> {
    let b = batch.len();
    if b == 0 {
        return Err(contract("empty minibatch"));
    }
    let fwd = params.forward(&batch.observations)?;
    let log_std = params.log_std();
    let act = params.act_dim();
    let scale = 1.0 / b as f64;

    let mut d_means = DMatrix::zeros(act, b);
    let mut d_log_std = vec![0.0; act];
    let mut dm = vec![0.0; act];
    let mut dl = vec![0.0; act];
    let mut policy = 0.0;
    for i in 0..b {
        let mean = fwd.means().column(i);
        let z = batch.z.column(i);
        let lp = log_prob(mean.as_slice(), log_std, z.as_slice());
        let a = batch.advantages[i];
        let d_lp = match algorithm {
            Algorithm::Ppo => {
                let ratio = (lp - batch.old_log_probs[i]).exp();
                let unclipped = ratio * a;
                let clipped = clipped_objective(ratio, a, clip_eps);
                debug_assert!(clipped <= unclipped);
                policy -= clipped * scale;
                // the clip branch is flat in θ
                if unclipped <= clipped {
                    -unclipped * scale
                } else {
                    0.0
                }
            }
            Algorithm::A2c => {
                policy -= lp * a * scale;
                -a * scale
            }
        };
        if d_lp != 0.0 {
            log_prob_grad(mean.as_slice(), log_std, z.as_slice(), &mut dm, &mut dl);
            for k in 0..act {
                d_means[(k, i)] = d_lp * dm[k];
                d_log_std[k] += d_lp * dl[k];
            }
        }
    }
    let value = mse(fwd.values(), &batch.returns);
    let d_values: Vec<f64> = fwd.values().iter().zip(&batch.returns).map(|(v, r)| value_coef * 2.0 * (v - r) * scale).collect();
    let grad = params.backward(&fwd, &d_means, &d_values, &d_log_std);
    Ok((LossParts { policy, value, total: policy + value_coef * value }, grad))
}

/// Runs the stochastic policy from the environment's current state for up
/// to `horizon` steps, stopping early at episode end.
pub fn rollout<R: Rng + ?Sized>(env: &mut RisEnv, params: &PolicyParams, horizon: usize, rng: &mut R) -> Result<RolloutBuffer> {
    let mut buf = RolloutBuffer::default();
    let mut obs = env.observation();
    for _ in 0..horizon {
        if env.is_done() {
            break;
        }
        let x = params.batch(&[&obs])?;
        let fwd = params.forward(&x)?;
        let sample = policy_sample(fwd.means().as_slice(), params.log_std(), rng);
        let out = env.step(&sample.action)?;
        buf.observations.push(std::mem::replace(&mut obs, out.observation));
        buf.z.push(sample.z);
        buf.log_probs.push(sample.log_prob);
        buf.rewards.push(out.reward);
        buf.values.push(fwd.values()[0]);
        buf.dones.push(out.done);
    }
    // time-limit truncation, not a terminal state: keep bootstrapping
    buf.bootstrap_value = params.value(&obs)?;
    Ok(buf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub episode: usize,
    pub cumulative_reward: f64,
    pub smoothed_reward: f64,
    pub mean_value_loss: f64,
    pub mean_policy_loss: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub fn rewards(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.cumulative_reward).collect()
    }

    pub fn smoothed(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.smoothed_reward).collect()
    }

    /// CSV text; `with_wall` off drops the timing column so reruns compare
    /// byte for byte.
    pub fn to_csv(&self, with_wall: bool) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["episode", "cumulative_reward", "smoothed_reward", "mean_value_loss", "mean_policy_loss"];
        if with_wall {
            header.push("wall_seconds");
        }
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.episode.to_string(), r.cumulative_reward.to_string(), r.smoothed_reward.to_string(), r.mean_value_loss.to_string(), r.mean_policy_loss.to_string()];
            if with_wall {
                rec.push(format!("{:.3}", r.wall_seconds));
            }
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(self.to_csv(true)?.as_bytes())?;
        Ok(())
    }
}

/// Trailing moving average; the first `k − 1` entries average what exists.
pub fn trailing_mean(values: &[f64], k: usize) -> Vec<f64> {
    assert!(k > 0, "smoothing window must be positive");
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= k {
            sum -= values[i - k];
        }
        out.push(sum / (i + 1).min(k) as f64);
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub params: PolicyParams,
    pub log: TrainingLog,
}

/// Trains a fresh policy on `env` for `config.episodes` episodes.
///
/// The environment's episode length is taken from its own configuration.
/// All randomness (initialization, resets, sampling, shuffling) comes from
/// `rng`, so a fixed seed reproduces the run exactly.
pub fn train<R: Rng + ?Sized>(env: &mut RisEnv, config: &TrainConfig, algorithm: Algorithm, rng: &mut R) -> Result<TrainingOutcome> {
    let mut log = TrainingLog::default();
    let params = train_with_log(env, config, algorithm, rng, &mut log)?;
    Ok(TrainingOutcome { params, log })
}

/// Like [`train`], appending rows to a caller-owned log so that the episodes
/// completed before an abort remain available.
pub fn train_with_log<R: Rng + ?Sized>(env: &mut RisEnv, config: &TrainConfig, algorithm: Algorithm, rng: &mut R, log: &mut TrainingLog) -> Result<PolicyParams> {
    config.validate()?;
    let mut params = PolicyParams::new(env.observation_dim(), env.action_dim(), &config.hidden, rng);
    let mut opt = Adam::new(params.num_params());
    let start = Instant::now();
    let mut rewards = Vec::with_capacity(config.episodes);
    let (mut reward_sum, mut reward_count) = (0.0, 0usize);

    for episode in 0..config.episodes {
        env.reset(rng)?;
        let mut cumulative = 0.0;
        let (mut value_sum, mut policy_sum, mut updates) = (0.0, 0.0, 0usize);
        while !env.is_done() {
            let buf = rollout(env, &params, config.horizon, rng)?;
            cumulative += buf.rewards.iter().sum::<f64>();
            reward_sum += buf.rewards.iter().sum::<f64>();
            reward_count += buf.len();
            let baseline = if config.center_rewards { reward_sum / reward_count as f64 } else { 0.0 };
            let centered: Vec<f64> = buf.rewards.iter().map(|r| r - baseline).collect();
            let raw_adv = compute_gae(&centered, &buf.values_with_bootstrap(), config.gamma, config.gae_lambda)?;
            let returns: Vec<f64> = raw_adv.iter().zip(&buf.values).map(|(a, v)| a + v).collect();
            let mut idx: Vec<usize> = (0..buf.len()).collect();
            let epochs = match algorithm {
                Algorithm::Ppo => config.epochs,
                Algorithm::A2c => 1,
            };
            let full = (config.minibatch >= buf.len()).then(|| {
                let mut adv = raw_adv.clone();
                normalize_advantages(&mut adv);
                Minibatch::from_rollout(&buf, &adv, &returns, &idx)
            });
            for _ in 0..epochs {
                let batches = match &full {
                    Some(b) => vec![b.clone()],
                    None => {
                        idx.shuffle(rng);
                        idx.chunks(config.minibatch)
                            .map(|chunk| {
                                let mut adv: Vec<f64> = chunk.iter().map(|&i| raw_adv[i]).collect();
                                normalize_advantages(&mut adv);
                                let mut scattered = raw_adv.clone();
                                chunk.iter().zip(&adv).for_each(|(&i, &a)| scattered[i] = a);
                                Minibatch::from_rollout(&buf, &scattered, &returns, chunk)
                            })
                            .collect()
                    }
                };
                for batch in &batches {
                    let (loss, grad) = loss_and_grad(&params, batch, algorithm, config.clip_eps, config.value_coef)?;
                    if !loss.total.is_finite() {
                        return Err(Error::NonFinite { episode, what: format!("loss (policy {}, value {})", loss.policy, loss.value) });
                    }
                    opt.step(params.theta_mut(), &grad, config.lr)?;
                    if !params.is_finite() {
                        return Err(Error::NonFinite { episode, what: "parameters after optimizer step".into() });
                    }
                    value_sum += loss.value;
                    policy_sum += loss.policy;
                    updates += 1;
                }
            }
        }
        rewards.push(cumulative);
        let k = config.smoothing_window.min(rewards.len());
        let smoothed = rewards[rewards.len() - k..].iter().sum::<f64>() / k as f64;
        let denom = updates.max(1) as f64;
        log.rows.push(LogRow {
            episode,
            cumulative_reward: cumulative,
            smoothed_reward: smoothed,
            mean_value_loss: value_sum / denom,
            mean_policy_loss: policy_sum / denom,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(params)
}

/// Mean per-episode cumulative reward of uniformly random actions.
pub fn random_policy_reward<R: Rng + ?Sized>(env: &mut RisEnv, episodes: usize, rng: &mut R) -> Result<f64> {
    if episodes == 0 {
        return Err(contract("random-policy baseline needs at least one episode"));
    }
    let dim = env.action_dim();
    let mut total = 0.0;
    for _ in 0..episodes {
        env.reset(rng)?;
        while !env.is_done() {
            let raw: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            total += env.step(&raw)?.reward;
        }
    }
    Ok(total / episodes as f64)
}

/// Runs the mean action for `steps` steps from the environment's current
/// state and returns the best solution seen (by the scenario objective) with
/// its objective value. The starting solution counts as a candidate.
pub fn greedy_solution(env: &mut RisEnv, params: &PolicyParams, steps: usize) -> Result<(BeamformingSolution, f64)> {
    let mut best = (env.solution()?.clone(), env.rates()?.iter().sum::<f64>());
    let mut obs = env.observation();
    for _ in 0..steps {
        if env.is_done() {
            break;
        }
        let mean = params.actor_mean(&obs)?;
        let out = env.step(&mean)?;
        if out.reward > best.1 {
            best = (env.solution()?.clone(), out.reward);
        }
        obs = out.observation;
    }
    Ok(best)
}
