//! Scalar-variance MMSE estimators used inside the message-passing loop.

use ndarray::{Array1, ArrayView1, Zip};
use num_complex::Complex64;
use thiserror::Error;

/// Variances below this are clamped before they are used as divisors.
pub const NUMERIC_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum DenoiseError {
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),
}

/// Mean vector with one variance shared by every entry.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorMoments {
    pub mean: Array1<Complex64>,
    pub var: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarMoments {
    pub mean: Complex64,
    pub var: f64,
}

/// Posterior activity probability of one device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivityBelief {
    pub phi: f64,
    pub log_odds: f64,
    pub psi: f64,
}

pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Posterior of `z` given `y = z + CN(0, sigma2)` and prior `CN(p_hat, v_p)`.
pub fn output_posterior_awgn(
    y: ArrayView1<Complex64>,
    p_hat: ArrayView1<Complex64>,
    v_p: f64,
    sigma2: f64,
) -> VectorMoments {
    let d = sigma2 + v_p;
    let mean = Zip::from(&y).and(&p_hat).map_collect(|&y, &p| (y * v_p + p * sigma2) / d);
    VectorMoments { mean, var: sigma2 * v_p / d }
}

/// `s = (z - p) / v_p` with variance `(1 - v_z / v_p) / v_p`.
pub fn scaled_residual(
    z_hat: ArrayView1<Complex64>,
    p_hat: ArrayView1<Complex64>,
    v_p: f64,
    v_z: f64,
) -> Result<VectorMoments, DenoiseError> {
    if !(v_p > NUMERIC_FLOOR) {
        return Err(DenoiseError::Degenerate("v_p at or below the numeric floor"));
    }
    let mean = Zip::from(&z_hat).and(&p_hat).map_collect(|&z, &p| (z - p) / v_p);
    Ok(VectorMoments { mean, var: (1.0 - v_z / v_p) / v_p })
}

/// Row-sparse Bernoulli-Gaussian channel denoiser.
///
/// The prior on the row is `(1 - eps) delta_0 + eps CN(0, beta I)` and the
/// pseudo-observation is `r = x + CN(0, v_r I)`.
pub fn denoise_x_bg(
    r_hat: ArrayView1<Complex64>,
    v_r: f64,
    beta: f64,
    eps: f64,
) -> Result<(VectorMoments, ActivityBelief), DenoiseError> {
    if !(v_r > NUMERIC_FLOOR) {
        return Err(DenoiseError::Degenerate("v_r at or below the numeric floor"));
    }
    let m = r_hat.len() as f64;
    let energy = r_hat.iter().map(|z| z.norm_sqr()).sum::<f64>() / m;
    let (mean_scale, var, belief) = bg_scalars(energy, m, v_r, beta, eps);
    let mean = r_hat.mapv(|z| z * mean_scale);
    Ok((VectorMoments { mean, var }, belief))
}

/// Shrinkage factor, per-entry variance and belief for a row whose
/// pseudo-observation has mean squared entry `energy`.
pub(crate) fn bg_scalars(
    energy: f64,
    m: f64,
    v_r: f64,
    beta: f64,
    eps: f64,
) -> (f64, f64, ActivityBelief) {
    let gain = beta / (beta + v_r);
    let psi = (1.0 / v_r - 1.0 / (beta + v_r)) * energy - (beta / v_r).ln_1p();
    let log_odds = (eps / (1.0 - eps)).ln() + m * psi;
    let phi = logistic(log_odds);
    // ((1 - eps) / eps) * exp(-m psi) * phi, evaluated without overflow
    let off = logistic(-log_odds);
    let var = gain * gain * phi * off * energy + gain * v_r * phi;
    (phi * gain, var, ActivityBelief { phi, log_odds, psi })
}

/// Gaussian symbol prior CN(0, 1/L) under pseudo-observation `q = a + CN(0, v_q)`.
pub fn denoise_a_gaussian(q_hat: Complex64, v_q: f64, block_len: usize) -> ScalarMoments {
    let d = 1.0 + block_len as f64 * v_q;
    ScalarMoments { mean: q_hat / d, var: v_q / d }
}

/// Known pilot symbol.
pub fn denoise_a_pilot(c: Complex64) -> ScalarMoments {
    ScalarMoments { mean: c, var: 0.0 }
}

/// Finite-alphabet prior with weights under pseudo-observation
/// `q = a + CN(0, v_q)`.
pub fn denoise_a_discrete(
    q_hat: Complex64,
    v_q: f64,
    alphabet: &[Complex64],
    weights: &[f64],
) -> Result<ScalarMoments, DenoiseError> {
    if alphabet.is_empty() || alphabet.len() != weights.len() {
        return Err(DenoiseError::Degenerate("alphabet and weights must be nonempty and equal length"));
    }
    if !(v_q > NUMERIC_FLOOR) {
        return Err(DenoiseError::Degenerate("v_q at or below the numeric floor"));
    }
    let logw: Vec<f64> = alphabet
        .iter()
        .zip(weights)
        .map(|(s, &w)| w.ln() - (q_hat - s).norm_sqr() / v_q)
        .collect();
    let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|&lw| (lw - top).exp()).collect();
    let total: f64 = w.iter().sum();
    let mean = alphabet.iter().zip(&w).map(|(s, &wi)| s * wi).sum::<Complex64>() / total;
    let var = alphabet.iter().zip(&w).map(|(s, &wi)| wi * (s - mean).norm_sqr()).sum::<f64>() / total;
    Ok(ScalarMoments { mean, var })
}

/// Index of the alphabet point nearest to `q`, lowest index on ties.
pub fn nearest_symbol(q: Complex64, alphabet: &[Complex64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, s) in alphabet.iter().enumerate() {
        let d = (q - s).norm_sqr();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}
