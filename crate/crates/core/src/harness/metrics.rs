//! Scalar summaries: normalized contrast error, support overlap, rank correlation.

use serde::{Deserialize, Serialize};

use crate::dgp::OracleGrid;
use crate::error::{Result, TauqError};
use crate::tau::ContrastFunction;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastError {
    /// `mse / range²`, or `mse` itself when the range is zero.
    pub normalized: f64,
    pub mse: f64,
    pub range: f64,
    pub zero_range: bool,
}

const ZERO_RANGE_RTOL: f64 = 1e-9;

/// Error of the binary contrast at `oracle.t` over the oracle states.
pub fn contrast_error(tau: &dyn ContrastFunction, oracle: &OracleGrid) -> Result<ContrastError> {
    if oracle.is_empty() {
        return Err(TauqError::InvalidArgument("empty oracle grid".into()));
    }
    let n = oracle.len() as f64;
    let mse = oracle
        .states
        .iter()
        .zip(&oracle.tau_true)
        .map(|(s, v)| (tau.tau(oracle.t, s) - v).powi(2))
        .sum::<f64>()
        / n;
    let hi = oracle
        .tau_true
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let lo = oracle
        .tau_true
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let range = hi - lo;
    // a constant contrast evaluated in floating point can show a range of a few ulps
    let zero_range = !(range > ZERO_RANGE_RTOL * hi.abs().max(lo.abs()).max(1.0));
    Ok(ContrastError {
        normalized: if zero_range {
            mse
        } else {
            mse / (range * range)
        },
        mse,
        range,
        zero_range,
    })
}

/// Mean squared error over the grid divided by the squared range of the true contrast.
pub fn normalized_mse(tau: &dyn ContrastFunction, oracle: &OracleGrid) -> Result<f64> {
    contrast_error(tau, oracle).map(|e| e.normalized)
}

/// `|a ∩ b| / |a ∪ b|`, with two empty sets scoring 1.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let sa: std::collections::BTreeSet<_> = a.iter().collect();
    let sb: std::collections::BTreeSet<_> = b.iter().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

/// Mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, _) = mean_stderr(&rx);
    let (my, _) = mean_stderr(&ry);
    let sxy: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Shift(f64);
    impl ContrastFunction for Shift {
        fn n_actions(&self) -> usize {
            2
        }
        fn contrast(&self, _t: usize, s: &[f64], a: usize) -> f64 {
            if a == 0 {
                0.0
            } else {
                s[0] + self.0
            }
        }
    }

    fn grid() -> OracleGrid {
        let states: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        OracleGrid {
            t: 1,
            tau_true: states.iter().map(|s| s[0]).collect(),
            stderr: vec![0.0; 5],
            states,
            rollouts: 1,
        }
    }

    #[test]
    fn offset_scales_with_range() {
        assert_eq!(normalized_mse(&Shift(0.0), &grid()).unwrap(), 0.0);
        let e = normalized_mse(&Shift(2.0), &grid()).unwrap();
        assert!((e - 4.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn zero_range_is_flagged() {
        let mut g = grid();
        g.tau_true = vec![1.0; 5];
        let e = contrast_error(&Shift(0.0), &g).unwrap();
        assert!(e.zero_range);
        assert_eq!(e.normalized, e.mse);
        g.tau_true[2] += 1.6e-16;
        assert!(contrast_error(&Shift(0.0), &g).unwrap().zero_range);
    }

    #[test]
    fn summaries() {
        assert_eq!(jaccard(&[1, 2, 3], &[2, 3, 4]), 0.5);
        assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), Some(2.5));
        assert!((spearman(&[1.0, 2.0, 3.0], &[9.0, 4.0, 1.0]) + 1.0).abs() < 1e-12);
    }
}
