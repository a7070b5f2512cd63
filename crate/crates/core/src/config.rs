//! Experiment configuration: presets, JSON loading with partial overrides,
//! and validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::env::Scenario;
use crate::error::{Error, Result};
use crate::geometry::SystemGeometry;
use crate::ppo::{Algorithm, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Full-size arrays and the published training budget.
    Paper,
    /// Small arrays and a short training budget for a single core.
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            _ => Err(Error::Config(format!("unknown preset {s:?} (expected paper or desk)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    None,
    Distance,
    PowerDbm,
    RicianDb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    /// Strictly increasing grid; ignored when `axis` is `none`.
    pub grid: Vec<f64>,
}

impl SweepConfig {
    pub fn distance() -> Self {
        Self { axis: SweepAxis::Distance, grid: (0..13).map(|i| 40.0 + 5.0 * i as f64).collect() }
    }

    pub fn power() -> Self {
        Self { axis: SweepAxis::PowerDbm, grid: (0..7).map(|i| -10.0 + 5.0 * i as f64).collect() }
    }

    pub fn rician() -> Self {
        Self { axis: SweepAxis::RicianDb, grid: vec![-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0] }
    }

    /// Grid of this config if it sweeps `axis`, otherwise `fallback`'s.
    pub fn grid_for(&self, axis: SweepAxis, fallback: SweepConfig) -> Vec<f64> {
        if self.axis == axis {
            self.grid.clone()
        } else {
            fallback.grid
        }
    }
}

/// Trained solution variants compared in the sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    ScsiPpo,
    ScsiA2c,
    RandomPhase,
    NoRis,
    IcsiPpo,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::ScsiPpo, Variant::ScsiA2c, Variant::RandomPhase, Variant::NoRis, Variant::IcsiPpo];

    pub fn scenario(self) -> Scenario {
        match self {
            Variant::ScsiPpo | Variant::ScsiA2c => Scenario::ScsiJoint,
            Variant::RandomPhase => Scenario::RandomPhase,
            Variant::NoRis => Scenario::NoRis,
            Variant::IcsiPpo => Scenario::Icsi,
        }
    }

    pub fn algorithm(self) -> Algorithm {
        match self {
            Variant::ScsiA2c => Algorithm::A2c,
            _ => Algorithm::Ppo,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::ScsiPpo => "scsi_ppo",
            Variant::ScsiA2c => "scsi_a2c",
            Variant::RandomPhase => "random_phase",
            Variant::NoRis => "no_ris",
            Variant::IcsiPpo => "icsi_ppo",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// How a trained policy is scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Deterministic policy steps from reset; the best solution is kept.
    pub greedy_steps: usize,
    /// User drops per evaluation.
    pub episodes: usize,
    /// Channel draws per drop; `episodes × realizations` MC samples in total.
    pub realizations: usize,
    /// Samples per covariance check.
    pub covariance_samples: usize,
    /// Episodes of the uniform random-action baseline.
    pub random_baseline_episodes: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { greedy_steps: 10, episodes: 20, realizations: 500, covariance_samples: 200_000, random_baseline_episodes: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub geometry: SystemGeometry,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    pub quantization_bits: Vec<u32>,
    pub seeds: Vec<u64>,
    /// Variants trained in the power and Rician sweeps.
    pub variants: Vec<Variant>,
    /// Also train A2C in the convergence study.
    pub include_a2c: bool,
    pub eval: EvalConfig,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let paper = Self {
            scenario: Scenario::ScsiJoint,
            geometry: SystemGeometry::default(),
            train: TrainConfig::default(),
            sweep: SweepConfig { axis: SweepAxis::None, grid: Vec::new() },
            quantization_bits: vec![1, 2, 3],
            seeds: vec![1, 2, 3],
            variants: Variant::ALL.to_vec(),
            include_a2c: true,
            eval: EvalConfig::default(),
            output_dir: PathBuf::from("results"),
        };
        match preset {
            Preset::Paper => paper,
            Preset::Desk => Self {
                geometry: SystemGeometry { bs_dims: [4, 2], ris_dims: [4, 2], num_users: 2, ..SystemGeometry::default() },
                train: TrainConfig::desk(),
                ..paper
            },
        }
    }

    /// Parses a JSON document layered over `base`: any subset of fields
    /// (nested objects included) may be given.
    pub fn from_json_over(text: &str, base: Preset) -> Result<Self> {
        let overrides: Value = serde_json::from_str(text)?;
        let mut merged = serde_json::to_value(Self::preset(base))?;
        merge(&mut merged, overrides);
        let cfg: Self = serde_json::from_value(merged)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, base: Preset) -> Result<Self> {
        Self::from_json_over(&std::fs::read_to_string(path)?, base)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.train.validate()?;
        let fail = |m: String| Err(Error::Config(m));
        if self.sweep.axis != SweepAxis::None {
            if self.sweep.grid.is_empty() {
                return fail("sweep grid is empty".into());
            }
            if self.sweep.grid.windows(2).any(|w| !(w[0] < w[1])) || self.sweep.grid.iter().any(|g| !g.is_finite()) {
                return fail("sweep grid must be finite and strictly increasing".into());
            }
        }
        if self.seeds.is_empty() {
            return fail("at least one seed is required".into());
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return fail("seeds must be distinct".into());
        }
        if let Some(b) = self.quantization_bits.iter().find(|&&b| b == 0 || b > 30) {
            return fail(format!("quantization bits must lie in 1..=30, got {b}"));
        }
        if self.variants.is_empty() {
            return fail("at least one variant is required".into());
        }
        let e = &self.eval;
        if e.episodes == 0 || e.realizations == 0 || e.covariance_samples == 0 || e.random_baseline_episodes == 0 {
            return fail("evaluation counts must be positive".into());
        }
        Ok(())
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
