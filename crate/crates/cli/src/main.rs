use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ris_scsi::config::{ExperimentConfig, Preset};
use ris_scsi::env::Scenario;
use ris_scsi::experiments::{self, COVARIANCE_KAPPA_GRID};
use ris_scsi::nn::PolicyParams;
use ris_scsi::par::{configure_workers, Execution};
use ris_scsi::ppo::{random_policy_reward, train_with_log, Algorithm, TrainingLog};

#[derive(Parser)]
#[command(name = "ris-scsi", version, about = "RIS-aided MU-MISO beamforming from channel statistics with a PPO agent")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON file layered over the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = PresetArg::Desk)]
    preset: PresetArg,
    /// Replace the configured seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the configured one).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    scenario: Option<ScenarioArg>,
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Paper,
    Desk,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    ScsiJoint,
    NoRis,
    RandomPhase,
    Icsi,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Ppo,
    A2c,
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy; writes the log and a checkpoint.
    Train {
        #[arg(long, value_enum, default_value_t = AlgorithmArg::Ppo)]
        algorithm: AlgorithmArg,
    },
    /// Score a checkpoint on the configured scenario.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Learning curves for every seed.
    Convergence,
    /// Sum rate against RIS–UE distance, with quantized phases.
    SweepDistance,
    /// Sum rate against transmit power for every variant.
    SweepPower,
    /// Sum rate against the BS–RIS / RIS–UE Rician factor.
    SweepRician,
    /// Closed-form against sampled covariances.
    VerifyCovariance,
    /// Print the effective configuration as JSON.
    ShowConfig,
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let preset = match c.preset {
        PresetArg::Paper => Preset::Paper,
        PresetArg::Desk => Preset::Desk,
    };
    let mut cfg = match &c.config {
        Some(path) => ExperimentConfig::load(path, preset).with_context(|| format!("loading {}", path.display()))?,
        None => ExperimentConfig::preset(preset),
    };
    if let Some(seed) = c.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &c.out {
        cfg.output_dir = out.clone();
    }
    if let Some(s) = c.scenario {
        cfg.scenario = match s {
            ScenarioArg::ScsiJoint => Scenario::ScsiJoint,
            ScenarioArg::NoRis => Scenario::NoRis,
            ScenarioArg::RandomPhase => Scenario::RandomPhase,
            ScenarioArg::Icsi => Scenario::Icsi,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    experiments::write_text(&path, text).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let exec = match cli.common.jobs {
        Some(j) => configure_workers(j)?,
        None => Execution::default(),
    };
    let out = cfg.output_dir.clone();
    match cli.command {
        Command::ShowConfig => println!("{}", cfg.to_json()?),
        Command::Train { algorithm } => {
            let algorithm = match algorithm {
                AlgorithmArg::Ppo => Algorithm::Ppo,
                AlgorithmArg::A2c => Algorithm::A2c,
            };
            let seed = cfg.seeds[0];
            let mut env = experiments::make_env(cfg.scenario, &cfg.geometry, None, &cfg.train)?;
            let mut log = TrainingLog::default();
            let trained = train_with_log(&mut env, &cfg.train, algorithm, &mut ChaCha8Rng::seed_from_u64(seed), &mut log);
            write(&out, "train_log.csv", &log.to_csv(true)?)?;
            let params = trained?;
            params.save(&out.join("policy.bin"))?;
            eprintln!("wrote {}", out.join("policy.bin").display());
            let baseline = random_policy_reward(&mut env, cfg.eval.random_baseline_episodes, &mut ChaCha8Rng::seed_from_u64(seed ^ experiments::EVAL_SALT))?;
            let last = log.rows.last().map_or(0.0, |r| r.smoothed_reward);
            println!("final smoothed reward {last:.4}, random-policy reward {baseline:.4}");
        }
        Command::Eval { checkpoint } => {
            let params = PolicyParams::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let mut env = experiments::make_env(cfg.scenario, &cfg.geometry, None, &cfg.train)?;
            if params.obs_dim() != env.observation_dim() || params.act_dim() != env.action_dim() {
                bail!(
                    "checkpoint expects observation/action sizes {}/{} but the {} scenario uses {}/{}",
                    params.obs_dim(),
                    params.act_dim(),
                    cfg.scenario,
                    env.observation_dim(),
                    env.action_dim()
                );
            }
            let score = experiments::evaluate(&mut env, &params, &cfg.eval, cfg.seeds[0], exec)?;
            println!("objective {:.6}\nergodic_sum_rate {:.6}", score.objective, score.ergodic);
        }
        Command::Convergence => {
            let runs = experiments::run_convergence(&cfg, Some(&out), exec)?;
            write(&out, "convergence.csv", &experiments::convergence_csv(&runs)?)?;
        }
        Command::SweepDistance => {
            let pts = experiments::run_distance_sweep(&cfg, exec)?;
            write(&out, "distance_sweep.csv", &experiments::distance_csv(&pts)?)?;
        }
        Command::SweepPower => {
            let pts = experiments::run_power_sweep(&cfg, exec)?;
            write(&out, "power_sweep.csv", &experiments::sweep_csv("p_dbm", &pts)?)?;
            write(&out, "power_sweep_seeds.csv", &experiments::sweep_seed_csv("p_dbm", &pts)?)?;
        }
        Command::SweepRician => {
            let pts = experiments::run_rician_sweep(&cfg, exec)?;
            write(&out, "rician_sweep.csv", &experiments::sweep_csv("kappa_db", &pts)?)?;
            write(&out, "rician_sweep_seeds.csv", &experiments::sweep_seed_csv("kappa_db", &pts)?)?;
        }
        Command::VerifyCovariance => {
            let rows = experiments::verify_covariance(&cfg, &COVARIANCE_KAPPA_GRID, exec)?;
            let worst = rows.iter().map(|r| r.err_total).fold(0.0, f64::max);
            write(&out, "covariance_check.csv", &experiments::covariance_csv(&rows)?)?;
            println!("worst total relative error {worst:.4e}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
