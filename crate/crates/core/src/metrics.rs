//! Ground-truth evaluation of one trial.

use ndarray::{Array2, ArrayView1, ArrayView2};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub dad_error: f64,
    pub n_false_alarm: usize,
    pub n_miss: usize,
    /// Per-antenna channel MSE over correctly detected devices.
    pub ce_mse: Option<f64>,
    pub ser: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub seed: u64,
    pub runtime_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DadError {
    pub rate: f64,
    pub n_false_alarm: usize,
    pub n_miss: usize,
}

pub fn dad_error_rate(truth: &[bool], detected: &[bool]) -> Result<DadError, MetricsError> {
    if truth.len() != detected.len() {
        return Err(MetricsError::Length(truth.len(), detected.len()));
    }
    let mut fa = 0;
    let mut miss = 0;
    for (&a, &d) in truth.iter().zip(detected) {
        match (a, d) {
            (false, true) => fa += 1,
            (true, false) => miss += 1,
            _ => {}
        }
    }
    let n = truth.len().max(1) as f64;
    Ok(DadError { rate: (fa + miss) as f64 / n, n_false_alarm: fa, n_miss: miss })
}

/// Devices that are active and detected.
pub fn correct_set(truth: &[bool], detected: &[bool]) -> Vec<usize> {
    truth
        .iter()
        .zip(detected)
        .enumerate()
        .filter(|(_, (&a, &d))| a && d)
        .map(|(k, _)| k)
        .collect()
}

/// Mean over `set` of `||h_hat_k - h_k||^2 / M`; `None` for an empty set.
pub fn ce_mse_empirical(
    truth: ArrayView2<Complex64>,
    estimate: ArrayView2<Complex64>,
    set: &[usize],
) -> Option<f64> {
    if set.is_empty() {
        return None;
    }
    let m = truth.ncols() as f64;
    let total: f64 = set
        .iter()
        .map(|&k| {
            truth.row(k).iter().zip(estimate.row(k)).map(|(h, e)| (e - h).norm_sqr()).sum::<f64>() / m
        })
        .sum();
    Some(total / set.len() as f64)
}

/// Index of the nearest codeword in Euclidean distance, lowest index on ties.
pub fn nearest_codeword(block: ArrayView1<Complex64>, codebook: &[Vec<Complex64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, cw) in codebook.iter().enumerate() {
        let d: f64 = block.iter().zip(cw).map(|(a, b)| (a - b).norm_sqr()).sum();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Fraction of wrongly decoded codewords among devices in `set`.
///
/// `data_hat` is `L_d x N`; `truth` holds the transmitted codeword index per
/// device and block (`N x n_blocks`).
pub fn ser(
    truth: ArrayView2<usize>,
    data_hat: ArrayView2<Complex64>,
    codebook: &[Vec<Complex64>],
    set: &[usize],
) -> Option<f64> {
    if set.is_empty() || codebook.is_empty() {
        return None;
    }
    let j = codebook[0].len();
    let nb = truth.ncols();
    let mut wrong = 0usize;
    for &k in set {
        let col = data_hat.column(k);
        for b in 0..nb {
            let blk = col.slice(ndarray::s![b * j..(b + 1) * j]);
            if nearest_codeword(blk, codebook) != truth[[k, b]] {
                wrong += 1;
            }
        }
    }
    Some(wrong as f64 / (set.len() * nb) as f64)
}

/// Symbol error rate for a finite alphabet: each data entry is a length-one codeword.
pub fn ser_symbols(
    truth: ArrayView2<usize>,
    data_hat: ArrayView2<Complex64>,
    alphabet: &[Complex64],
    set: &[usize],
) -> Option<f64> {
    let book: Vec<Vec<Complex64>> = alphabet.iter().map(|&s| vec![s]).collect();
    let t: Array2<usize> = truth.t().to_owned();
    ser(t.view(), data_hat, &book, set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::complex_normal;
    use ndarray::{array, Array1};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn dad_examples() {
        let e = dad_error_rate(&[true, false], &[true, false]).unwrap();
        assert_eq!((e.rate, e.n_false_alarm, e.n_miss), (0.0, 0, 0));
        let e = dad_error_rate(&[true, false], &[false, false]).unwrap();
        assert_eq!((e.rate, e.n_false_alarm, e.n_miss), (0.5, 0, 1));
        assert!(dad_error_rate(&[true], &[true, false]).is_err());
    }

    #[test]
    fn independent_detector_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 200_000;
        let a: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.05).collect();
        let d: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.05).collect();
        let e = dad_error_rate(&a, &d).unwrap();
        let want = 2.0 * 0.05 * 0.95;
        let se = (want * (1.0 - want) / n as f64).sqrt();
        assert!((e.rate - want).abs() < 4.0 * se);
    }

    #[test]
    fn mse_examples() {
        let h = array![[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]];
        let z = Array2::zeros((1, 4));
        assert_eq!(ce_mse_empirical(h.view(), h.view(), &[0]), Some(0.0));
        assert_eq!(ce_mse_empirical(h.view(), z.view(), &[0]), Some(0.25));
        assert_eq!(ce_mse_empirical(h.view(), z.view(), &[]), None);
    }

    #[test]
    fn nearest_codeword_cases() {
        let book = vec![vec![c(1.0, 0.0)], vec![c(-1.0, 0.0)]];
        assert_eq!(nearest_codeword(Array1::from(vec![c(0.0, 0.0)]).view(), &book), 0);
        assert_eq!(nearest_codeword(Array1::from(vec![c(-1.0, 0.0)]).view(), &book), 1);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let book: Vec<Vec<Complex64>> = (0..8).map(|_| (0..3).map(|_| complex_normal(&mut rng, 1.0)).collect()).collect();
        for _ in 0..100 {
            let q: Array1<Complex64> = (0..3).map(|_| complex_normal(&mut rng, 1.0)).collect();
            let dists: Vec<f64> = book
                .iter()
                .map(|cw| (0..3).map(|i| (q[i] - cw[i]).norm_sqr()).sum())
                .collect();
            let mut want = 0;
            for i in 1..8 {
                if dists[i] < dists[want] {
                    want = i;
                }
            }
            assert_eq!(nearest_codeword(q.view(), &book), want);
        }
    }

    #[test]
    fn ser_cases() {
        let book = vec![vec![c(1.0, 0.0), c(1.0, 0.0)], vec![c(-1.0, 0.0), c(-1.0, 0.0)]];
        let truth = array![[0usize, 1], [1, 1]];
        let mut data = Array2::zeros((4, 2));
        for k in 0..2 {
            for b in 0..2 {
                for i in 0..2 {
                    data[[2 * b + i, k]] = book[truth[[k, b]]][i];
                }
            }
        }
        assert_eq!(ser(truth.view(), data.view(), &book, &[0, 1]), Some(0.0));
        data[[0, 1]] = c(1.0, 0.0);
        data[[1, 1]] = c(1.0, 0.0);
        assert_eq!(ser(truth.view(), data.view(), &book, &[0, 1]), Some(0.25));
        assert_eq!(ser(truth.view(), data.view(), &book, &[0]), Some(0.0));
        assert_eq!(ser(truth.view(), data.view(), &book, &[]), None);
    }

    #[test]
    fn random_decoding_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let book: Vec<Vec<Complex64>> = (0..64).map(|_| (0..5).map(|_| complex_normal(&mut rng, 1.0)).collect()).collect();
        let (n, nb) = (200, 20);
        let truth = Array2::from_shape_fn((n, nb), |_| rng.random_range(0..64));
        let data = Array2::from_shape_fn((nb * 5, n), |_| complex_normal(&mut rng, 1.0));
        let set: Vec<usize> = (0..n).collect();
        let s = ser(truth.view(), data.view(), &book, &set).unwrap();
        let want = 63.0 / 64.0;
        let se = (want * (1.0 - want) / (n * nb) as f64).sqrt();
        assert!((s - want).abs() < 4.0 * se, "{s}");
    }
}
