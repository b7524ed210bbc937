//! State evolution and closed-form performance predictions.

pub mod gamma;

use rand::Rng;
use thiserror::Error;

use crate::denoise::bg_scalars;
use crate::model::{complex_normal, sigma2_from_snr, SystemConfig};
pub use gamma::{regularized_gamma_lower, regularized_gamma_upper};

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("domain error: {0}")]
    Domain(String),
}

/// Scalar parameters of the state-evolution recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeParams {
    /// Effective number of active devices, `eps * N`.
    pub k_eff: f64,
    pub l: usize,
    pub m: usize,
    pub beta_bar: f64,
    pub sigma2: f64,
}

impl SeParams {
    pub fn from_config(cfg: &SystemConfig) -> Self {
        SeParams {
            k_eff: cfg.expected_active(),
            l: cfg.block_len(),
            m: cfg.n_antennas,
            beta_bar: cfg.mean_path_loss(),
            sigma2: sigma2_from_snr(cfg),
        }
    }

    /// Start from the full prior uncertainty: `v_r = sigma2 + K beta`, `v_q = v_r / M`.
    pub fn default_init(&self) -> (f64, f64) {
        let vr = self.sigma2 + self.k_eff * self.beta_bar;
        (vr, vr / self.m as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeRecord {
    pub t: usize,
    pub v_p: f64,
    pub v_r: f64,
    pub v_q: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeTrace {
    pub records: Vec<SeRecord>,
    pub fixed_point: bool,
    pub c1: f64,
    pub c2: f64,
}

impl SeTrace {
    pub fn last(&self) -> &SeRecord {
        self.records.last().expect("trace has an initial record")
    }

    pub fn tau_star(&self) -> f64 {
        self.last().tau
    }
}

/// One step of the recursion: returns `(v_p', v_r', v_q')`.
pub fn se_step(v_r: f64, v_q: f64, p: &SeParams) -> (f64, f64, f64) {
    let l = p.l as f64;
    let g = p.beta_bar * v_r / (p.beta_bar + v_r);
    let h = v_q / (1.0 + l * v_q);
    let v_p = p.k_eff / l * g + p.k_eff * h + p.k_eff * g * h;
    let v_r = p.sigma2 + v_p;
    (v_p, v_r, v_r / p.m as f64)
}

/// Iterates [`se_step`] until `|tau(t) - tau(t-1)| < tol` or `t_max` steps.
pub fn run_se(p: &SeParams, init: (f64, f64), t_max: usize, tol: f64) -> SeTrace {
    let (mut v_r, mut v_q) = init;
    let mut records = vec![SeRecord { t: 0, v_p: v_r - p.sigma2, v_r, v_q, tau: v_r }];
    let mut fixed_point = false;
    for t in 1..=t_max {
        let (vp, vr, vq) = se_step(v_r, v_q, p);
        let tau = vp + p.sigma2;
        let prev = records.last().unwrap().tau;
        records.push(SeRecord { t, v_p: vp, v_r: vr, v_q: vq, tau });
        v_r = vr;
        v_q = vq;
        if (tau - prev).abs() < tol {
            fixed_point = true;
            break;
        }
    }
    let (c1, c2) = condition_constants(p, v_r, v_q);
    SeTrace { records, fixed_point, c1, c2 }
}

/// State evolution from the default start with tolerance `1e-6` and 500 steps.
pub fn run_se_default(p: &SeParams) -> SeTrace {
    run_se(p, p.default_init(), 500, 1e-6)
}

fn condition_constants(p: &SeParams, v_r: f64, v_q: f64) -> (f64, f64) {
    let b = p.beta_bar;
    let lq = p.l as f64 * v_q;
    let c1 = b * b / ((b + v_r) * (b + v_r)) * (1.0 + lq / (1.0 + lq));
    let c2 = 1.0 / ((1.0 + lq) * (1.0 + lq)) * (1.0 + b * v_r / (b + v_r));
    (c1, c2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceCheck {
    pub c1: f64,
    pub c2: f64,
    /// `L > c1 K`.
    pub l_ok: bool,
    /// `M > c2 K`.
    pub m_ok: bool,
    /// Small-variance regime (`v_r <= beta <= 1`, `L v_q <= 0.1`) in which
    /// both constants lie in `(1/4, 2)`.
    pub in_regime: bool,
}

pub fn convergence_condition(p: &SeParams, v_r: f64, v_q: f64) -> ConvergenceCheck {
    let (c1, c2) = condition_constants(p, v_r, v_q);
    let in_regime = v_r <= p.beta_bar && p.beta_bar <= 1.0 && p.l as f64 * v_q <= 0.1;
    if in_regime {
        debug_assert!(c1 > 0.25 && c1 < 2.0 && c2 > 0.25 && c2 < 2.0, "c1={c1} c2={c2}");
    }
    ConvergenceCheck {
        c1,
        c2,
        l_ok: p.l as f64 > c1 * p.k_eff,
        m_ok: p.m as f64 > c2 * p.k_eff,
        in_regime,
    }
}

/// Probability that the activity detector errs on a device with path loss
/// `beta` when the channel pseudo-observation has noise variance `v_r`.
pub fn dad_error_prob(m: usize, v_r: f64, beta: f64, eps: f64) -> Result<f64, TheoryError> {
    if m == 0 || !(v_r > 0.0) || !(beta > 0.0) || !(eps > 0.0 && eps < 1.0) {
        return Err(TheoryError::Domain("dad_error_prob needs M >= 1, v_r > 0, beta > 0, 0 < eps < 1".into()));
    }
    let (b, c) = detection_thresholds(v_r, beta);
    let mf = m as f64;
    let fa = regularized_gamma_upper(mf, mf * b)?;
    let miss = regularized_gamma_lower(mf, mf * c)?;
    Ok(((1.0 - eps) * fa + eps * miss).clamp(0.0, 1.0))
}

/// Per-antenna thresholds `(b, c)` on `||r||^2 / (M v_r)` and
/// `||r||^2 / (M (beta + v_r))` that the detector compares against.
pub fn detection_thresholds(v_r: f64, beta: f64) -> (f64, f64) {
    let lg = ((beta + v_r) / v_r).ln();
    ((beta + v_r) / beta * lg, v_r / beta * lg)
}

/// Large-M channel MSE per antenna, `beta v_r / (beta + v_r)`.
pub fn ce_mse_limit(beta: f64, v_r: f64) -> f64 {
    if v_r.is_infinite() {
        return beta;
    }
    beta * v_r / (beta + v_r)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
}

/// Monte Carlo channel MSE of the Bernoulli-Gaussian denoiser applied to an
/// active row observed through `CN(0, v_r)` noise with `M` antennas.
pub fn ce_mse_finite<R: Rng + ?Sized>(
    beta: f64,
    v_r: f64,
    m: usize,
    eps: f64,
    n_samples: usize,
    rng: &mut R,
) -> McEstimate {
    ce_mse_finite_with(beta, v_r, m, n_samples, rng, |energy| {
        bg_scalars(energy, m as f64, v_r, beta, eps).2.phi
    })
}

/// As [`ce_mse_finite`] with the activity belief supplied by `belief`,
/// a function of the mean squared entry of the pseudo-observation.
pub fn ce_mse_finite_with<R: Rng + ?Sized, F: Fn(f64) -> f64>(
    beta: f64,
    v_r: f64,
    m: usize,
    n_samples: usize,
    rng: &mut R,
    belief: F,
) -> McEstimate {
    if v_r == 0.0 {
        return McEstimate { mean: 0.0, std_err: 0.0 };
    }
    let gain = beta / (beta + v_r);
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    let mut h = vec![num_complex::Complex64::new(0.0, 0.0); m];
    let mut r = h.clone();
    for _ in 0..n_samples {
        for i in 0..m {
            h[i] = complex_normal(rng, beta);
            r[i] = h[i] + complex_normal(rng, v_r);
        }
        let energy = r.iter().map(|z| z.norm_sqr()).sum::<f64>() / m as f64;
        let scale = belief(energy) * gain;
        let err = h.iter().zip(&r).map(|(h, r)| (r * scale - h).norm_sqr()).sum::<f64>() / m as f64;
        sum += err;
        sum2 += err * err;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = if n_samples > 1 { (sum2 / n - mean * mean).max(0.0) * n / (n - 1.0) } else { 0.0 };
    McEstimate { mean, std_err: (var / n).sqrt() }
}

/// Gallager-type bound on the codeword error rate for codewords of length
/// `j` from a book of `d`, at symbol posterior variance `v_a`.
pub fn ser_bound(rho: f64, j: usize, d: usize, l: usize, v_a: f64) -> Result<f64, TheoryError> {
    if !(v_a > 0.0) {
        return Err(TheoryError::Domain(format!("v_a must be positive, got {v_a}")));
    }
    if !(rho > 0.0 && rho < 1.0) || d < 2 || j == 0 || l == 0 {
        return Err(TheoryError::Domain("ser_bound needs 0 < rho < 1, D >= 2, J >= 1, L >= 1".into()));
    }
    let e = -rho * ((d - 1) as f64).ln()
        - j as f64 * rho * (1.0 / (l as f64 * v_a * (1.0 + rho))).ln_1p();
    Ok(e.exp().min(1.0))
}

/// Everything the theory predicts at one operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub params: SeParams,
    pub trace: SeTrace,
    pub check: ConvergenceCheck,
    /// Symbol posterior variance implied by the fixed point.
    pub v_a_star: f64,
    pub dad_error: f64,
    pub mse_limit: f64,
    pub ser_bound: Option<f64>,
}

pub fn predict(cfg: &SystemConfig, rho: f64) -> Result<Prediction, TheoryError> {
    let params = SeParams::from_config(cfg);
    let trace = run_se_default(&params);
    let last = *trace.last();
    let check = convergence_condition(&params, last.v_r, last.v_q);
    let l = params.l as f64;
    let v_a_star = last.v_q / (1.0 + l * last.v_q);
    let beta = params.beta_bar;
    let ser = match cfg.signal_prior {
        crate::model::SignalPrior::Codebook => {
            Some(ser_bound(rho, cfg.codeword_len, cfg.codebook_size, params.l, v_a_star)?)
        }
        _ => None,
    };
    Ok(Prediction {
        params,
        check,
        v_a_star,
        dad_error: dad_error_prob(cfg.n_antennas, last.v_r, beta, cfg.activity_prob)?,
        mse_limit: ce_mse_limit(beta, last.v_r),
        ser_bound: ser,
        trace,
    })
}
