//! Experiment configuration, seeded trials, sweeps and CSV output.

mod genie;
mod sweep;

pub use genie::{genie_channel_estimate, genie_mmse_baseline, GenieOutcome};
pub use sweep::{
    format_float, run_sweep, sweep_rows, theory_command, theory_rows, ResultRow, SweepMode,
    SweepOptions, TheoryColumns,
};

use std::path::Path;
use std::time::Instant;

use ndarray::s;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bigamp::{detect_activity, run_bigamp, BigampConfig, BigampError, BigampResult, Priors, SymbolPrior};
use crate::metrics::{self, correct_set, dad_error_rate, TrialRecord};
use crate::model::{generate_scenario, ModelError, Scenario, SystemConfig};
use crate::theory::TheoryError;

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "GFBIGAMP_WORKERS";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Bigamp(#[from] BigampError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
}

/// Scenario parameters that can be swept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    NDevices,
    NAntennas,
    PilotLen,
    DataLen,
    ActivityProb,
    SnrDb,
    CodewordLen,
    CodebookSize,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::NDevices => "n_devices",
            SweepParam::NAntennas => "n_antennas",
            SweepParam::PilotLen => "pilot_len",
            SweepParam::DataLen => "data_len",
            SweepParam::ActivityProb => "activity_prob",
            SweepParam::SnrDb => "snr_db",
            SweepParam::CodewordLen => "codeword_len",
            SweepParam::CodebookSize => "codebook_size",
        }
    }

    pub fn is_integer(self) -> bool {
        !matches!(self, SweepParam::ActivityProb | SweepParam::SnrDb)
    }

    pub fn apply(self, cfg: &mut SystemConfig, value: f64) -> Result<(), HarnessError> {
        let int = || -> Result<usize, HarnessError> {
            if value >= 0.0 && value.fract() == 0.0 && value < 1e15 {
                Ok(value as usize)
            } else {
                Err(HarnessError::Config(format!("{} needs a nonnegative integer, got {value}", self.name())))
            }
        };
        match self {
            SweepParam::NDevices => cfg.n_devices = int()?,
            SweepParam::NAntennas => cfg.n_antennas = int()?,
            SweepParam::PilotLen => cfg.pilot_len = int()?,
            SweepParam::DataLen => cfg.data_len = int()?,
            SweepParam::ActivityProb => cfg.activity_prob = value,
            SweepParam::SnrDb => cfg.snr_db = value,
            SweepParam::CodewordLen => cfg.codeword_len = int()?,
            SweepParam::CodebookSize => cfg.codebook_size = int()?,
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

fn default_trials() -> usize {
    1
}

fn default_rho() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub system: SystemConfig,
    #[serde(default)]
    pub sweep: Vec<SweepAxis>,
    #[serde(default = "default_trials")]
    pub n_trials: usize,
    #[serde(default)]
    pub bigamp: BigampConfig,
    /// Gallager exponent used for the codeword error bound.
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Write wall-clock time per trial; off by default so that output is reproducible.
    #[serde(default)]
    pub record_runtime: bool,
}

impl ExperimentSpec {
    pub fn new(system: SystemConfig) -> Self {
        ExperimentSpec {
            system,
            sweep: Vec::new(),
            n_trials: 1,
            bigamp: BigampConfig::default(),
            rho: 0.5,
            record_runtime: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let spec: ExperimentSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            HarnessError::Json(j) => HarnessError::Config(format!("{}: {j}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.n_trials == 0 {
            return Err(HarnessError::Config("n_trials must be at least 1".into()));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(HarnessError::Config("rho must lie in (0, 1)".into()));
        }
        let b = &self.bigamp;
        if !(b.kappa > 0.0 && b.kappa <= 1.0) || b.t_max == 0 {
            return Err(HarnessError::Config("bigamp needs 0 < kappa <= 1 and t_max >= 1".into()));
        }
        let d = &b.damping;
        if !(d.min > 0.0 && d.min <= d.initial && d.initial <= d.max && d.max <= 1.0) {
            return Err(HarnessError::Config("damping needs 0 < min <= initial <= max <= 1".into()));
        }
        for (i, axis) in self.sweep.iter().enumerate() {
            if axis.values.is_empty() {
                return Err(HarnessError::Config(format!("sweep axis {} has no values", axis.param.name())));
            }
            if self.sweep[..i].iter().any(|a| a.param == axis.param) {
                return Err(HarnessError::Config(format!("sweep axis {} repeated", axis.param.name())));
            }
        }
        for point in self.points() {
            self.point_config(&point)?.validate()?;
        }
        Ok(())
    }

    /// Cartesian product of the sweep axes, first axis varying slowest.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let mut pts = vec![Vec::new()];
        for axis in &self.sweep {
            pts = pts
                .into_iter()
                .flat_map(|p| {
                    axis.values.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        pts
    }

    pub fn point_config(&self, point: &[f64]) -> Result<SystemConfig, HarnessError> {
        let mut cfg = self.system.clone();
        for (axis, &v) in self.sweep.iter().zip(point) {
            axis.param.apply(&mut cfg, v)?;
        }
        if cfg.path_loss.as_ref().is_some_and(|b| b.len() != cfg.n_devices) {
            return Err(HarnessError::Config("path_loss length must match n_devices at every sweep point".into()));
        }
        Ok(cfg)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the bit patterns of the point coordinates.
fn point_hash(point: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in point {
        for byte in v.to_bits().to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }
    h
}

/// Seed of one trial; depends only on the base seed, the point and the trial index.
pub fn trial_seed(base_seed: u64, point: &[f64], trial: usize) -> u64 {
    splitmix64(splitmix64(base_seed ^ splitmix64(point_hash(point))) ^ trial as u64)
}

pub fn priors_for(cfg: &SystemConfig, sigma2: f64) -> Priors {
    let symbols = match cfg.scaled_alphabet() {
        Some(alpha) => SymbolPrior::uniform(alpha),
        None => SymbolPrior::Gaussian,
    };
    Priors { beta: cfg.path_loss_vec(), activity_prob: cfg.activity_prob, symbols, sigma2 }
}

/// Everything produced by one trial.
#[derive(Debug, Clone)]
pub struct TrialRun {
    pub scenario: Scenario,
    pub result: BigampResult,
    pub detected: Vec<bool>,
    pub record: TrialRecord,
}

impl TrialRun {
    /// Devices that are active and detected.
    pub fn correct_set(&self) -> Vec<usize> {
        correct_set(&self.scenario.activity, &self.detected)
    }

    /// Mean data-symbol posterior variance over correctly detected devices.
    pub fn mean_symbol_var(&self) -> Option<f64> {
        let set = self.correct_set();
        if set.is_empty() {
            return None;
        }
        let va = self.result.state.v_a.slice(s![self.scenario.pilot_len.., ..]);
        let total: f64 = set.iter().map(|&k| va.column(k).sum()).sum();
        Some(total / (set.len() * va.nrows()) as f64)
    }
}

/// Scores a finished run against the scenario it was run on.
pub fn score(cfg: &SystemConfig, sc: &Scenario, res: &BigampResult, seed: u64, runtime_ms: f64) -> (Vec<bool>, TrialRecord) {
    let detected = detect_activity(&res.state.phi, cfg.activity_prob);
    let dad = dad_error_rate(&sc.activity, &detected).expect("lengths agree");
    let set = correct_set(&sc.activity, &detected);
    let ce_mse = metrics::ce_mse_empirical(sc.channel.view(), res.state.x_hat.view(), &set);
    let data_hat = res.state.a_hat.slice(s![sc.pilot_len.., ..]);
    let ser = match (&sc.codebook, &sc.codeword_index, &sc.symbol_index) {
        (Some(book), Some(idx), _) => metrics::ser(idx.view(), data_hat, book, &set),
        (_, _, Some(idx)) => {
            let alpha = cfg.scaled_alphabet().expect("constellation prior");
            metrics::ser_symbols(idx.view(), data_hat, &alpha, &set)
        }
        _ => None,
    };
    let record = TrialRecord {
        dad_error: dad.rate,
        n_false_alarm: dad.n_false_alarm,
        n_miss: dad.n_miss,
        ce_mse,
        ser,
        iterations: res.iterations,
        converged: res.converged,
        seed,
        runtime_ms,
    };
    (detected, record)
}

/// Generates a scenario from `seed`, runs the estimator and scores it.
pub fn simulate_trial(cfg: &SystemConfig, bcfg: &BigampConfig, seed: u64) -> Result<TrialRun, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sc = generate_scenario(cfg, &mut rng)?;
    simulate_on(cfg, bcfg, sc, seed)
}

/// Runs the estimator on a given scenario.
pub fn simulate_on(cfg: &SystemConfig, bcfg: &BigampConfig, sc: Scenario, seed: u64) -> Result<TrialRun, HarnessError> {
    let priors = priors_for(cfg, sc.sigma2.max(0.0));
    let start = Instant::now();
    let result = run_bigamp(&sc.observation, &sc.pilots(), cfg.data_len, &priors, bcfg)?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    let (detected, record) = score(cfg, &sc, &result, seed, ms);
    Ok(TrialRun { scenario: sc, result, detected, record })
}

/// One seeded trial at sweep point `point` of `spec`.
pub fn run_trial(spec: &ExperimentSpec, point: &[f64], trial: usize) -> Result<TrialRecord, HarnessError> {
    let cfg = spec.point_config(point)?;
    let seed = trial_seed(spec.system.seed, point, trial);
    Ok(simulate_trial(&cfg, &spec.bigamp, seed)?.record)
}
