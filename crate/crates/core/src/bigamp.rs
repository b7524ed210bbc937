//! Vector-valued bilinear GAMP with known pilot rows.
//!
//! Estimates the transmit matrix `A` (pilot rows known, data rows unknown)
//! and the row-sparse channel matrix `X` from `Y = A X + W`. Every variance
//! is a scalar per row (or per entry of `A`).

use ndarray::{s, Array1, Array2, Axis, Zip};
use num_complex::Complex64;
use thiserror::Error;

use crate::denoise::{
    denoise_a_discrete, denoise_a_gaussian, denoise_x_bg, output_posterior_awgn,
    scaled_residual, DenoiseError, NUMERIC_FLOOR,
};

#[derive(Debug, Error, PartialEq)]
pub enum BigampError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Denoise(#[from] DenoiseError),
}

/// Prior on the data symbols of `A`.
#[derive(Debug, Clone, PartialEq)]
pub enum SymbolPrior {
    /// CN(0, 1/L).
    Gaussian,
    Discrete { alphabet: Vec<Complex64>, weights: Vec<f64> },
}

impl SymbolPrior {
    pub fn uniform(alphabet: Vec<Complex64>) -> Self {
        let w = vec![1.0 / alphabet.len() as f64; alphabet.len()];
        SymbolPrior::Discrete { alphabet, weights: w }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Priors {
    /// Path loss per device.
    pub beta: Vec<f64>,
    pub activity_prob: f64,
    pub symbols: SymbolPrior,
    pub sigma2: f64,
}

/// Step-size control. With `adaptive` off the step is fixed at `initial`.
/// With it on, a step that increases `||Y - A X||_F^2` is recomputed with a
/// smaller step, and accepted steps let the step grow again up to `max`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DampingConfig {
    pub initial: f64,
    pub min: f64,
    pub max: f64,
    pub shrink: f64,
    pub growth: f64,
    pub adaptive: bool,
}

impl Default for DampingConfig {
    fn default() -> Self {
        DampingConfig { initial: 0.2, min: 1.0 / 64.0, max: 1.0, shrink: 0.5, growth: 1.1, adaptive: false }
    }
}

impl DampingConfig {
    pub fn undamped() -> Self {
        DampingConfig { initial: 1.0, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BigampConfig {
    pub t_max: usize,
    pub kappa: f64,
    pub damping: DampingConfig,
    pub numeric_floor: f64,
}

impl Default for BigampConfig {
    fn default() -> Self {
        BigampConfig { t_max: 200, kappa: 1e-4, damping: DampingConfig::default(), numeric_floor: NUMERIC_FLOOR }
    }
}

#[derive(Debug, Clone)]
pub struct BigampState {
    pub pilot_len: usize,
    pub a_hat: Array2<Complex64>,
    pub v_a: Array2<f64>,
    pub x_hat: Array2<Complex64>,
    pub v_x: Array1<f64>,
    pub s_hat: Array2<Complex64>,
    pub v_s: Array1<f64>,
    /// `a_hat * x_hat` for the current estimates.
    pub p_bar: Array2<Complex64>,
    pub v_pbar: Array1<f64>,
    pub p_hat: Array2<Complex64>,
    pub v_p: Array1<f64>,
    pub r_hat: Array2<Complex64>,
    pub v_r: Array1<f64>,
    pub v_q: Array2<f64>,
    pub phi: Array1<f64>,
    /// Damped copies of the estimates fed to the backward pass.
    pub x_bar: Array2<Complex64>,
    pub a_bar: Array2<Complex64>,
    pub eta: f64,
    pub t: usize,
}

/// Initial state: known pilots, zero data and channel means, unit data
/// variance and channel variance equal to the path loss.
pub fn init_state(
    y: &Array2<Complex64>,
    pilots: &Array2<Complex64>,
    data_len: usize,
    priors: &Priors,
    cfg: &BigampConfig,
) -> Result<BigampState, BigampError> {
    let (l, m) = y.dim();
    let (lp, n) = pilots.dim();
    if lp + data_len != l {
        return Err(BigampError::Dimension(format!("{lp} pilot rows + {data_len} data rows != {l}")));
    }
    if priors.beta.len() != n {
        return Err(BigampError::Dimension("beta length differs from pilot columns".into()));
    }
    let mut a_hat = Array2::zeros((l, n));
    a_hat.slice_mut(s![..lp, ..]).assign(pilots);
    let mut v_a = Array2::ones((l, n));
    v_a.slice_mut(s![..lp, ..]).fill(0.0);
    let x_hat = Array2::zeros((n, m));
    Ok(BigampState {
        pilot_len: lp,
        p_bar: Array2::zeros((l, m)),
        x_bar: x_hat.clone(),
        a_bar: a_hat.clone(),
        a_hat,
        v_a,
        x_hat,
        v_x: Array1::from(priors.beta.clone()),
        s_hat: Array2::zeros((l, m)),
        v_s: Array1::zeros(l),
        v_pbar: Array1::zeros(l),
        p_hat: Array2::zeros((l, m)),
        v_p: Array1::zeros(l),
        r_hat: Array2::zeros((n, m)),
        v_r: Array1::zeros(n),
        v_q: Array2::zeros((l, n)),
        phi: Array1::zeros(n),
        eta: cfg.damping.initial,
        t: 0,
    })
}

fn conj_t(a: &Array2<Complex64>) -> Array2<Complex64> {
    a.t().mapv(|z| z.conj())
}

fn sq_norm(a: &Array2<Complex64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

fn abs2(a: &Array2<Complex64>) -> Array2<f64> {
    a.mapv(|z| z.norm_sqr())
}

fn all_finite_c(a: &Array2<Complex64>) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Plug-in product, its variance, and the Onsager-corrected estimate.
///
/// Returns `(p_bar, v_pbar, p_hat, v_p)` computed from the current estimates
/// and the previous scaled residual.
pub fn forward_pass(
    st: &BigampState,
) -> (Array2<Complex64>, Array1<f64>, Array2<Complex64>, Array1<f64>) {
    let m = st.x_hat.ncols() as f64;
    let x2 = st.x_hat.map_axis(Axis(1), |r| r.iter().map(|z| z.norm_sqr()).sum::<f64>() / m);
    let v_pbar = abs2(&st.a_hat).dot(&st.v_x) + st.v_a.dot(&x2);
    let v_p = &v_pbar + &st.v_a.dot(&st.v_x);
    let p_bar = st.a_hat.dot(&st.x_hat);
    let p_hat = &p_bar - &(&st.s_hat * &v_pbar.view().insert_axis(Axis(1)));
    (p_bar, v_pbar, p_hat, v_p)
}

/// Pseudo-observations of `A` and `X`.
///
/// Returns `(q_hat, v_q, r_hat, v_r)`; `q_hat` and `v_q` are only meaningful on
/// the data rows.
pub fn backward_pass(
    a: &Array2<Complex64>,
    v_a: &Array2<f64>,
    x: &Array2<Complex64>,
    v_x: &Array1<f64>,
    s_hat: &Array2<Complex64>,
    v_s: &Array1<f64>,
    floor: f64,
) -> Result<(Array2<Complex64>, Array2<f64>, Array2<Complex64>, Array1<f64>), BigampError> {
    let m = x.ncols() as f64;
    let v_r = abs2(a).t().dot(v_s).mapv(|d| 1.0 / d.max(floor));
    let onsager_x = v_a.t().dot(v_s);
    let mut r_hat = conj_t(a).dot(s_hat);
    Zip::from(r_hat.rows_mut())
        .and(x.rows())
        .and(&v_r)
        .and(&onsager_x)
        .for_each(|mut r, xr, &vr, &o| {
            let keep = 1.0 - vr * o;
            Zip::from(&mut r).and(&xr).for_each(|ri, &xi| *ri = *ri * vr + xi * keep);
        });

    let xn2 = x.map_axis(Axis(1), |r| r.iter().map(|z| z.norm_sqr()).sum::<f64>());
    let mut v_q = Array2::zeros(a.dim());
    let mut q_hat = s_hat.dot(&conj_t(x));
    Zip::indexed(&mut q_hat).and(&mut v_q).and(a).for_each(|(l, n), q, vq, &al| {
        let v = 1.0 / (v_s[l] * xn2[n]).max(floor);
        *vq = v;
        *q = *q * v + al * (1.0 - v * m * v_x[n] * v_s[l]);
    });
    Ok((q_hat, v_q, r_hat, v_r))
}

/// Computes one full update with step `eta` without mutating `st`.
fn propose(
    st: &BigampState,
    y: &Array2<Complex64>,
    priors: &Priors,
    eta: f64,
    floor: f64,
) -> Result<BigampState, BigampError> {
    let (l, m) = y.dim();
    let lp = st.pilot_len;
    let first = st.t == 0;
    let e = if first { 1.0 } else { eta };
    let mix = |new: f64, old: f64| e * new + (1.0 - e) * old;

    let (v_pbar, p_hat, v_p) = {
        let (pb, mut vpb, _, mut vp) = forward_pass(st);
        if !first {
            Zip::from(&mut vpb).and(&st.v_pbar).for_each(|a, &b| *a = mix(*a, b));
            Zip::from(&mut vp).and(&st.v_p).for_each(|a, &b| *a = mix(*a, b));
        }
        let ph = &pb - &(&st.s_hat * &vpb.view().insert_axis(Axis(1)));
        (vpb, ph, vp)
    };

    let mut s_hat = Array2::zeros((l, m));
    let mut v_s = Array1::zeros(l);
    for i in 0..l {
        let vp = v_p[i].max(floor);
        let z = output_posterior_awgn(y.row(i), p_hat.row(i), vp, priors.sigma2);
        let sr = scaled_residual(z.mean.view(), p_hat.row(i), vp, z.var)?;
        s_hat.row_mut(i).assign(&sr.mean);
        v_s[i] = sr.var;
    }
    let (x_bar, a_bar) = if first {
        (st.x_hat.clone(), st.a_hat.clone())
    } else {
        s_hat.zip_mut_with(&st.s_hat, |a, &b| *a = *a * e + b * (1.0 - e));
        Zip::from(&mut v_s).and(&st.v_s).for_each(|a, &b| *a = mix(*a, b));
        let xb = &st.x_hat * e + &st.x_bar * (1.0 - e);
        let ab = &st.a_hat * e + &st.a_bar * (1.0 - e);
        (xb, ab)
    };

    let (q_hat, v_q, r_hat, v_r) = backward_pass(&a_bar, &st.v_a, &x_bar, &st.v_x, &s_hat, &v_s, floor)?;
    if !all_finite_c(&r_hat) || v_r.iter().any(|v| !v.is_finite()) {
        return Err(BigampError::NonFinite("channel pseudo-observation"));
    }

    let mut a_hat = st.a_hat.clone();
    let mut v_a = st.v_a.clone();
    for i in lp..l {
        for n in 0..a_hat.ncols() {
            let out = match &priors.symbols {
                SymbolPrior::Gaussian => denoise_a_gaussian(q_hat[[i, n]], v_q[[i, n]], l),
                SymbolPrior::Discrete { alphabet, weights } => {
                    denoise_a_discrete(q_hat[[i, n]], v_q[[i, n]], alphabet, weights)?
                }
            };
            a_hat[[i, n]] = out.mean;
            v_a[[i, n]] = out.var;
        }
    }

    let n = st.x_hat.nrows();
    let mut x_hat = Array2::zeros((n, m));
    let mut v_x = Array1::zeros(n);
    let mut phi = Array1::zeros(n);
    for k in 0..n {
        let (xm, belief) = denoise_x_bg(r_hat.row(k), v_r[k].max(floor), priors.beta[k], priors.activity_prob)?;
        x_hat.row_mut(k).assign(&xm.mean);
        v_x[k] = xm.var;
        phi[k] = belief.phi;
    }
    if !all_finite_c(&x_hat) || !all_finite_c(&a_hat) {
        return Err(BigampError::NonFinite("estimates"));
    }

    let product = a_hat.dot(&x_hat);
    Ok(BigampState {
        pilot_len: lp,
        a_hat,
        v_a,
        x_hat,
        v_x,
        s_hat,
        v_s,
        p_bar: product,
        v_pbar,
        p_hat,
        v_p,
        r_hat,
        v_r,
        v_q,
        phi,
        x_bar,
        a_bar,
        eta,
        t: st.t + 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// Step size used by the accepted update.
    pub eta: f64,
    /// `||Y - A X||_F^2` after the update.
    pub cost: f64,
    pub rejected: usize,
    /// The step hit its lower limit and the cost still went up.
    pub exhausted: bool,
}

/// One iteration: forward pass, output posterior, residual, backward pass,
/// symbol and channel denoising, then step-size control.
pub fn bigamp_step(
    st: &mut BigampState,
    y: &Array2<Complex64>,
    priors: &Priors,
    cfg: &BigampConfig,
) -> Result<StepReport, BigampError> {
    let d = &cfg.damping;
    let before = sq_norm(&(y - &st.p_bar));
    let mut eta = st.eta.clamp(d.min.min(d.max), d.max);
    let mut rejected = 0;
    loop {
        let next = propose(st, y, priors, eta, cfg.numeric_floor)?;
        let cost = sq_norm(&(y - &next.p_bar));
        let worse = !(cost <= before);
        if d.adaptive && st.t > 0 && worse && eta > d.min {
            eta = (eta * d.shrink).max(d.min);
            rejected += 1;
            continue;
        }
        *st = next;
        st.eta = if d.adaptive { (eta * d.growth).min(d.max) } else { eta };
        return Ok(StepReport { eta, cost, rejected, exhausted: d.adaptive && worse && st.t > 1 });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    MaxIterations,
    Diverged,
}

#[derive(Debug, Clone)]
pub struct BigampResult {
    pub state: BigampState,
    pub iterations: usize,
    pub converged: bool,
    pub status: RunStatus,
    /// `||Y - A X||_F^2 / (L M)` after each iteration.
    pub residual_trace: Vec<f64>,
    /// Squared change of `A X` and squared norm of the previous `A X` at the
    /// final iteration.
    pub last_change: f64,
    pub last_reference: f64,
}

impl BigampResult {
    pub fn x_hat(&self) -> &Array2<Complex64> {
        &self.state.x_hat
    }

    pub fn a_hat(&self) -> &Array2<Complex64> {
        &self.state.a_hat
    }

    pub fn phi(&self) -> &Array1<f64> {
        &self.state.phi
    }

    pub fn v_r(&self) -> &Array1<f64> {
        &self.state.v_r
    }

    /// Mean symbol pseudo-observation variance over the data rows.
    pub fn v_q_final(&self) -> f64 {
        let d = self.state.v_q.slice(s![self.state.pilot_len.., ..]);
        if d.is_empty() {
            0.0
        } else {
            d.mean().unwrap_or(0.0)
        }
    }
}

/// Iterates until `||P(t+1) - P(t)||^2 <= kappa * eta^2 * ||P(t)||^2`
/// (with `P = A X` and `eta` the step just taken) or `t_max` is reached.
pub fn run_bigamp(
    y: &Array2<Complex64>,
    pilots: &Array2<Complex64>,
    data_len: usize,
    priors: &Priors,
    cfg: &BigampConfig,
) -> Result<BigampResult, BigampError> {
    let mut st = init_state(y, pilots, data_len, priors, cfg)?;
    let lm = (y.nrows() * y.ncols()) as f64;
    let mut trace = Vec::new();
    let mut status = RunStatus::MaxIterations;
    let (mut last_change, mut last_reference) = (f64::NAN, f64::NAN);
    while st.t < cfg.t_max {
        let prev = st.p_bar.clone();
        let backup = st.clone();
        match bigamp_step(&mut st, y, priors, cfg) {
            Ok(rep) => {
                trace.push(rep.cost / lm);
                last_change = sq_norm(&(&st.p_bar - &prev));
                last_reference = sq_norm(&prev);
                if last_reference > 0.0 && last_change <= cfg.kappa * rep.eta * rep.eta * last_reference {
                    status = RunStatus::Converged;
                    break;
                }
            }
            Err(BigampError::NonFinite(_)) | Err(BigampError::Denoise(_)) => {
                st = backup;
                status = RunStatus::Diverged;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(BigampResult {
        iterations: st.t,
        converged: status == RunStatus::Converged,
        status,
        state: st,
        residual_trace: trace,
        last_change,
        last_reference,
    })
}

/// Declares device `n` active iff its belief exceeds the prior activity.
pub fn detect_activity(phi: &Array1<f64>, eps: f64) -> Vec<bool> {
    phi.iter().map(|&p| p > eps).collect()
}

/// Channel and data-symbol estimates of one detected device.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceEstimate {
    pub device: usize,
    pub channel: Array1<Complex64>,
    pub data: Array1<Complex64>,
}

pub fn extract_estimates(result: &BigampResult, detected: &[bool]) -> Vec<DeviceEstimate> {
    let lp = result.state.pilot_len;
    detected
        .iter()
        .enumerate()
        .filter(|(_, &d)| d)
        .map(|(k, _)| DeviceEstimate {
            device: k,
            channel: result.state.x_hat.row(k).to_owned(),
            data: result.state.a_hat.slice(s![lp.., k]).to_owned(),
        })
        .collect()
}
