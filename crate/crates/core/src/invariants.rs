//! Randomized property checks across modules.

use crate::bigamp::{bigamp_step, init_state, run_bigamp, BigampConfig, Priors, SymbolPrior};
use crate::denoise::{denoise_a_discrete, denoise_a_gaussian, denoise_x_bg, output_posterior_awgn};
use crate::metrics::{ce_mse_empirical, dad_error_rate, ser};
use crate::model::{complex_normal_matrix, generate_codebook};
use crate::theory::{convergence_condition, dad_error_prob, run_se, run_se_default, ser_bound, SeParams};
use ndarray::{s, Array1, Array2};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cvec(max_len: usize, scale: f64) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-scale..scale, -scale..scale), 1..=max_len)
        .prop_map(|v| v.into_iter().map(|(re, im)| Complex64::new(re, im)).collect())
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

proptest! {
    #[test]
    fn channel_estimate_is_shrunk(r in cvec(64, 5.0), v_r in 1e-3..10.0f64, beta in 1e-2..5.0f64, eps in 1e-3..0.999f64) {
        let (x, b) = denoise_x_bg(Array1::from(r.clone()).view(), v_r, beta, eps).unwrap();
        let xs: Vec<_> = x.mean.to_vec();
        prop_assert!(norm(&xs) <= beta / (beta + v_r) * norm(&r) * (1.0 + 1e-12));
        prop_assert!(x.var >= 0.0);
        prop_assert!((0.0..=1.0).contains(&b.phi));
    }

    #[test]
    fn belief_grows_with_energy(r in cvec(16, 2.0), t in 1.0..4.0f64, v_r in 1e-2..3.0f64, beta in 0.1..3.0f64, eps in 0.01..0.5f64) {
        let lo = denoise_x_bg(Array1::from(r.clone()).view(), v_r, beta, eps).unwrap().1;
        let scaled: Vec<_> = r.iter().map(|z| z * t).collect();
        let hi = denoise_x_bg(Array1::from(scaled).view(), v_r, beta, eps).unwrap().1;
        prop_assert!(hi.phi >= lo.phi);
    }

    #[test]
    fn output_posterior_is_a_convex_combination(
        y in cvec(8, 3.0), shift in cvec(8, 3.0), v_p in 0.0..5.0f64, sigma2 in 0.0..5.0f64,
    ) {
        prop_assume!(v_p + sigma2 > 0.0);
        let n = y.len().min(shift.len());
        let y = Array1::from(y[..n].to_vec());
        let p = Array1::from(shift[..n].to_vec());
        let z = output_posterior_awgn(y.view(), p.view(), v_p, sigma2);
        prop_assert!(z.var >= 0.0 && z.var <= sigma2.min(v_p) * (1.0 + 1e-12));
        let within = |v: f64, a: f64, b: f64| v >= a.min(b) - 1e-12 && v <= a.max(b) + 1e-12;
        for i in 0..n {
            prop_assert!(within(z.mean[i].re, y[i].re, p[i].re));
            prop_assert!(within(z.mean[i].im, y[i].im, p[i].im));
        }
    }

    #[test]
    fn symbol_variances_are_bounded(q in (-3.0..3.0f64, -3.0..3.0f64), v_q in 1e-6..100.0f64, l in 1usize..400) {
        let a = denoise_a_gaussian(Complex64::new(q.0, q.1), v_q, l);
        prop_assert!(a.var >= 0.0);
        prop_assert!(a.var <= v_q.min(1.0 / l as f64));
        let alphabet = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0), Complex64::new(-1.0, -1.0)];
        let d = denoise_a_discrete(Complex64::new(q.0, q.1), v_q, &alphabet, &[0.2, 0.3, 0.5]).unwrap();
        prop_assert!(d.var >= 0.0);
    }

    #[test]
    fn se_stays_above_noise(k in 0.0..100.0f64, l in 10usize..300, m in 1usize..300, beta in 0.1..3.0f64, sigma2 in 1e-6..2.0f64) {
        let p = SeParams { k_eff: k, l, m, beta_bar: beta, sigma2 };
        let tr = run_se_default(&p);
        for r in &tr.records {
            prop_assert!(r.tau >= sigma2 && r.v_r >= sigma2);
        }
    }

    #[test]
    fn se_descends_when_the_condition_holds(k in 1.0..100.0f64, l in 10usize..300, m in 1usize..300, beta in 0.1..3.0f64, sigma2 in 1e-4..1.0f64) {
        let p = SeParams { k_eff: k, l, m, beta_bar: beta, sigma2 };
        let tr = run_se_default(&p);
        let last = tr.last();
        let chk = convergence_condition(&p, last.v_r, last.v_q);
        prop_assume!(chk.l_ok && chk.m_ok);
        for w in tr.records.windows(2) {
            prop_assert!(w[1].tau <= w[0].tau);
        }
    }

    #[test]
    fn se_fixed_point_ignores_the_start(k in 1.0..60.0f64, l in 60usize..300, m in 60usize..300, beta in 0.2..2.0f64, sigma2 in 1e-3..1.0f64) {
        let p = SeParams { k_eff: k, l, m, beta_bar: beta, sigma2 };
        let (vr0, _) = p.default_init();
        let taus: Vec<f64> = [vr0, 4.0 * vr0, sigma2 + 0.1 * (vr0 - sigma2)]
            .iter()
            .map(|&vr| run_se(&p, (vr, vr / m as f64), 5000, 1e-13).tau_star())
            .collect();
        let last = run_se_default(&p);
        let chk = convergence_condition(&p, last.last().v_r, last.last().v_q);
        prop_assume!(chk.l_ok && chk.m_ok);
        for t in &taus[1..] {
            prop_assert!((t - taus[0]).abs() <= 1e-9 * taus[0], "{taus:?}");
        }
    }

    #[test]
    fn detection_error_falls_with_antennas(v_r in 0.01..2.0f64, beta in 0.2..2.0f64, eps in 0.01..0.3f64) {
        let mut prev = 1.0;
        for m in (8..=256).step_by(8) {
            let p = dad_error_prob(m, v_r, beta, eps).unwrap();
            prop_assert!(p <= prev * (1.0 + 1e-9) + 1e-300);
            prev = p;
        }
    }

    #[test]
    fn ser_bound_orders(rho in 0.05..1.0f64, j in 1usize..20, d in 2usize..256, l in 10usize..300, v_a in 1e-5..1.0f64, f in 1.0..3.0f64) {
        let base = ser_bound(rho, j, d, l, v_a).unwrap();
        prop_assert!(ser_bound(rho, j + 1, d, l, v_a).unwrap() <= base);
        prop_assert!(ser_bound(rho, j, d, l, v_a * f).unwrap() >= base);
    }

    #[test]
    fn swapping_truth_and_decision(bits in prop::collection::vec((any::<bool>(), any::<bool>()), 1..200)) {
        let truth: Vec<bool> = bits.iter().map(|b| b.0).collect();
        let det: Vec<bool> = bits.iter().map(|b| b.1).collect();
        let a = dad_error_rate(&truth, &det).unwrap();
        let b = dad_error_rate(&det, &truth).unwrap();
        prop_assert_eq!(a.rate, b.rate);
        prop_assert_eq!(a.n_miss, b.n_false_alarm);
        prop_assert_eq!(a.n_false_alarm, b.n_miss);
    }

    #[test]
    fn metrics_ignore_devices_outside_the_set(seed in any::<u64>(), n in 2usize..10, keep in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = keep.min(n - 1);
        let set: Vec<usize> = (0..keep).collect();
        let (j, nb) = (3, 2);
        let book = generate_codebook(j, 8, 20, &mut rng).unwrap();
        let truth = Array2::from_shape_fn((n, nb), |_| rng.random_range(0..8));
        let h = complex_normal_matrix(&mut rng, n, 4, 1.0);
        let h_hat = complex_normal_matrix(&mut rng, n, 4, 1.0);
        let d_hat = complex_normal_matrix(&mut rng, j * nb, n, 0.05);
        let mut h_hat2 = h_hat.clone();
        let mut d_hat2 = d_hat.clone();
        for k in keep..n {
            h_hat2.row_mut(k).fill(Complex64::new(9.0, -9.0));
            d_hat2.column_mut(k).fill(Complex64::new(-3.0, 3.0));
        }
        prop_assert_eq!(ce_mse_empirical(h.view(), h_hat.view(), &set), ce_mse_empirical(h.view(), h_hat2.view(), &set));
        prop_assert_eq!(ser(truth.view(), d_hat.view(), &book, &set), ser(truth.view(), d_hat2.view(), &book, &set));
    }
}

fn instance(seed: u64) -> (Array2<Complex64>, Array2<Complex64>, usize, Priors) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..12);
    let lp = rng.random_range(2..10);
    let ld = rng.random_range(1..8);
    let m = rng.random_range(1..6);
    let l = lp + ld;
    let a = complex_normal_matrix(&mut rng, l, n, 1.0 / l as f64);
    let mut x = complex_normal_matrix(&mut rng, n, m, 1.0);
    for k in 0..n {
        if rng.random_bool(0.6) {
            x.row_mut(k).fill(Complex64::new(0.0, 0.0));
        }
    }
    let sigma2 = 10f64.powf(rng.random_range(-4.0..0.0));
    let y = a.dot(&x) + complex_normal_matrix(&mut rng, l, m, sigma2);
    let priors = Priors { beta: vec![1.0; n], activity_prob: 0.4, symbols: SymbolPrior::Gaussian, sigma2 };
    (y, a.slice(s![..lp, ..]).to_owned(), ld, priors)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn steps_keep_pilots_and_variances(seed in any::<u64>()) {
        let (y, pilots, ld, priors) = instance(seed);
        let cfg = BigampConfig::default();
        let mut st = init_state(&y, &pilots, ld, &priors, &cfg).unwrap();
        let lp = pilots.nrows();
        for _ in 0..10 {
            if bigamp_step(&mut st, &y, &priors, &cfg).is_err() {
                break;
            }
            prop_assert_eq!(st.a_hat.slice(s![..lp, ..]), pilots.view());
            prop_assert!(st.v_a.slice(s![..lp, ..]).iter().all(|&v| v == 0.0));
            prop_assert!(st.v_a.iter().chain(&st.v_x).chain(&st.v_r).chain(&st.v_s).chain(&st.v_p).all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn converged_runs_satisfy_the_stop_rule(seed in any::<u64>()) {
        let (y, pilots, ld, priors) = instance(seed);
        let cfg = BigampConfig::default();
        let res = run_bigamp(&y, &pilots, ld, &priors, &cfg).unwrap();
        if res.converged {
            prop_assert!(res.last_change <= cfg.kappa * res.last_reference);
        }
    }
}
