//! Synthetic grant-free access scenarios.
//!
//! A coherence block is modelled as `Y = A X + W` where the columns of `A`
//! carry each device's pilot followed by its data symbols, the rows of `X`
//! are the (row-sparse) channel vectors and `W` is circular AWGN.

use ndarray::{s, Array1, Array2};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("codebook generator produced duplicate codewords")]
    DuplicateCodeword,
}

/// How the data part of each device's column of `A` is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalPrior {
    /// Each block of `codeword_len` symbols is a uniformly chosen codeword
    /// from a shared Gaussian codebook.
    #[default]
    Codebook,
    /// Independent CN(0, 1/L) symbols.
    Gaussian,
    /// Uniform symbols from a finite alphabet, rescaled to power 1/L.
    Constellation { alphabet: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub n_devices: usize,
    pub n_antennas: usize,
    pub pilot_len: usize,
    pub data_len: usize,
    pub activity_prob: f64,
    pub snr_db: f64,
    /// Per-device large-scale fading; `None` means all ones.
    #[serde(default)]
    pub path_loss: Option<Vec<f64>>,
    #[serde(default = "default_codeword_len")]
    pub codeword_len: usize,
    #[serde(default = "default_codebook_size")]
    pub codebook_size: usize,
    #[serde(default)]
    pub signal_prior: SignalPrior,
    #[serde(default)]
    pub seed: u64,
}

fn default_codeword_len() -> usize {
    5
}

fn default_codebook_size() -> usize {
    64
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            n_devices: 1000,
            n_antennas: 64,
            pilot_len: 40,
            data_len: 100,
            activity_prob: 0.05,
            snr_db: 10.0,
            path_loss: None,
            codeword_len: 5,
            codebook_size: 64,
            signal_prior: SignalPrior::Codebook,
            seed: 0,
        }
    }
}

impl SystemConfig {
    pub fn block_len(&self) -> usize {
        self.pilot_len + self.data_len
    }

    /// Number of codewords per device (`data_len / codeword_len`).
    pub fn n_blocks(&self) -> usize {
        self.data_len / self.codeword_len
    }

    pub fn path_loss_vec(&self) -> Vec<f64> {
        match &self.path_loss {
            Some(b) => b.clone(),
            None => vec![1.0; self.n_devices],
        }
    }

    pub fn mean_path_loss(&self) -> f64 {
        match &self.path_loss {
            Some(b) if !b.is_empty() => b.iter().sum::<f64>() / b.len() as f64,
            _ => 1.0,
        }
    }

    /// Expected number of active devices.
    pub fn expected_active(&self) -> f64 {
        self.activity_prob * self.n_devices as f64
    }

    /// Symbol alphabet rescaled to unit-free power `1/L`, if the prior is discrete.
    pub fn scaled_alphabet(&self) -> Option<Vec<Complex64>> {
        match &self.signal_prior {
            SignalPrior::Constellation { alphabet } => {
                let pts: Vec<Complex64> =
                    alphabet.iter().map(|p| Complex64::new(p[0], p[1])).collect();
                let power = pts.iter().map(|z| z.norm_sqr()).sum::<f64>() / pts.len() as f64;
                let scale = (1.0 / (self.block_len() as f64 * power)).sqrt();
                Some(pts.into_iter().map(|z| z * scale).collect())
            }
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.n_devices == 0 || self.n_antennas == 0 || self.pilot_len == 0 {
            return bad("n_devices, n_antennas and pilot_len must be positive");
        }
        if !(self.activity_prob > 0.0 && self.activity_prob < 1.0) {
            return bad("activity_prob must lie in (0, 1)");
        }
        if !self.snr_db.is_finite() {
            return bad("snr_db must be finite");
        }
        if let Some(b) = &self.path_loss {
            if b.len() != self.n_devices {
                return bad("path_loss length must equal n_devices");
            }
            if b.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return bad("path_loss entries must be positive");
            }
        }
        match &self.signal_prior {
            SignalPrior::Codebook => {
                if self.codeword_len == 0 || self.codebook_size < 2 {
                    return bad("codeword_len must be >= 1 and codebook_size >= 2");
                }
                if self.data_len == 0 || self.data_len % self.codeword_len != 0 {
                    return bad("data_len must be a positive multiple of codeword_len");
                }
            }
            SignalPrior::Gaussian => {}
            SignalPrior::Constellation { alphabet } => {
                if alphabet.is_empty() {
                    return bad("constellation alphabet is empty");
                }
                if alphabet.iter().all(|p| p[0] == 0.0 && p[1] == 0.0) {
                    return bad("constellation alphabet has zero power");
                }
            }
        }
        Ok(())
    }
}

/// Per-entry complex noise variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma2: f64,
}

/// Noise variance for the configured SNR, where SNR is the expected received
/// power per antenna and symbol, `eps * N * mean(beta) / L`, over `sigma2`.
pub fn sigma2_from_snr(cfg: &SystemConfig) -> f64 {
    let signal = cfg.expected_active() * cfg.mean_path_loss() / cfg.block_len() as f64;
    signal / 10f64.powf(cfg.snr_db / 10.0)
}

/// One draw from CN(0, var).
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let sd = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * sd, im * sd)
}

pub fn complex_normal_matrix<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    var: f64,
) -> Array2<Complex64> {
    Array2::from_shape_simple_fn((rows, cols), || complex_normal(rng, var))
}

/// `size` codewords of length `len` with i.i.d. CN(0, 1/L) entries.
pub fn generate_codebook<R: Rng + ?Sized>(
    len: usize,
    size: usize,
    block_len: usize,
    rng: &mut R,
) -> Result<Vec<Vec<Complex64>>, ModelError> {
    let var = 1.0 / block_len as f64;
    let book: Vec<Vec<Complex64>> = (0..size)
        .map(|_| (0..len).map(|_| complex_normal(rng, var)).collect())
        .collect();
    for i in 0..size {
        for j in 0..i {
            if book[i] == book[j] {
                return Err(ModelError::DuplicateCodeword);
            }
        }
    }
    Ok(book)
}

#[derive(Debug, Clone)]
pub struct Scenario {
    /// L x N transmit matrix; rows `0..pilot_len` are pilots.
    pub transmit: Array2<Complex64>,
    /// N x M channel matrix, zero rows for inactive devices.
    pub channel: Array2<Complex64>,
    pub activity: Vec<bool>,
    pub noise: Array2<Complex64>,
    pub observation: Array2<Complex64>,
    pub sigma2: f64,
    pub pilot_len: usize,
    pub codebook: Option<Vec<Vec<Complex64>>>,
    /// Codeword index per device and block (N x n_blocks), codebook prior only.
    pub codeword_index: Option<Array2<usize>>,
    /// Symbol index per data row and device (L_d x N), constellation prior only.
    pub symbol_index: Option<Array2<usize>>,
}

impl Scenario {
    pub fn pilots(&self) -> Array2<Complex64> {
        self.transmit.slice(s![..self.pilot_len, ..]).to_owned()
    }

    pub fn n_active(&self) -> usize {
        self.activity.iter().filter(|&&a| a).count()
    }
}

/// Draws a full scenario with the noise level implied by `cfg.snr_db`.
pub fn generate_scenario<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    rng: &mut R,
) -> Result<Scenario, ModelError> {
    generate_scenario_with(cfg, cfg.activity_prob, sigma2_from_snr(cfg), rng)
}

/// As [`generate_scenario`] but with the activity probability and noise
/// variance given explicitly (either may be zero).
pub fn generate_scenario_with<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    activity_prob: f64,
    sigma2: f64,
    rng: &mut R,
) -> Result<Scenario, ModelError> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&activity_prob) || !(sigma2 >= 0.0) {
        return Err(ModelError::InvalidConfig("bad activity or noise override".into()));
    }
    let (n, m, lp, ld) = (cfg.n_devices, cfg.n_antennas, cfg.pilot_len, cfg.data_len);
    let l = lp + ld;
    let beta = cfg.path_loss_vec();
    let symbol_var = 1.0 / l as f64;

    let coin = Bernoulli::new(activity_prob).expect("probability checked above");
    let activity: Vec<bool> = (0..n).map(|_| coin.sample(rng)).collect();

    let mut channel = Array2::<Complex64>::zeros((n, m));
    for (k, mut row) in channel.outer_iter_mut().enumerate() {
        if activity[k] {
            row.iter_mut().for_each(|x| *x = complex_normal(rng, beta[k]));
        }
    }

    let mut transmit = Array2::<Complex64>::zeros((l, n));
    transmit
        .slice_mut(s![..lp, ..])
        .assign(&complex_normal_matrix(rng, lp, n, symbol_var));

    let mut codebook = None;
    let mut codeword_index = None;
    let mut symbol_index = None;
    match &cfg.signal_prior {
        SignalPrior::Codebook => {
            let j = cfg.codeword_len;
            let book = generate_codebook(j, cfg.codebook_size, l, rng)?;
            let nb = cfg.n_blocks();
            let mut idx = Array2::<usize>::zeros((n, nb));
            for k in 0..n {
                for b in 0..nb {
                    let d = rng.random_range(0..book.len());
                    idx[[k, b]] = d;
                    for (i, &v) in book[d].iter().enumerate() {
                        transmit[[lp + b * j + i, k]] = v;
                    }
                }
            }
            codebook = Some(book);
            codeword_index = Some(idx);
        }
        SignalPrior::Gaussian => {
            transmit
                .slice_mut(s![lp.., ..])
                .assign(&complex_normal_matrix(rng, ld, n, symbol_var));
        }
        SignalPrior::Constellation { .. } => {
            let alphabet = cfg.scaled_alphabet().expect("constellation prior");
            let mut idx = Array2::<usize>::zeros((ld, n));
            for r in 0..ld {
                for k in 0..n {
                    let i = rng.random_range(0..alphabet.len());
                    idx[[r, k]] = i;
                    transmit[[lp + r, k]] = alphabet[i];
                }
            }
            symbol_index = Some(idx);
        }
    }

    let noise = complex_normal_matrix(rng, l, m, sigma2);
    let observation = transmit.dot(&channel) + &noise;
    Ok(Scenario {
        transmit,
        channel,
        activity,
        noise,
        observation,
        sigma2,
        pilot_len: lp,
        codebook,
        codeword_index,
        symbol_index,
    })
}

/// Squared row norms of a complex matrix.
pub fn row_norms_sqr(x: &Array2<Complex64>) -> Array1<f64> {
    x.outer_iter().map(|r| r.iter().map(|z| z.norm_sqr()).sum()).collect()
}
