use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lasso::lasso_path;
use super::{check_inputs, SolverOptions};
use crate::error::{Result, TauqError};
use crate::types::FoldAssignment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub lambda: f64,
    pub index: usize,
    /// Mean held-out weighted squared error per grid entry.
    pub losses: Vec<f64>,
}

/// `k` penalties spaced geometrically from `lambda_max` down to `1e-4·lambda_max`.
pub fn default_lambda_grid(lambda_max: f64, k: usize) -> Vec<f64> {
    if k == 0 {
        return vec![];
    }
    if !(lambda_max > 0.0) {
        return vec![0.0];
    }
    if k == 1 {
        return vec![lambda_max];
    }
    let ratio = 1e-4f64;
    (0..k)
        .map(|i| lambda_max * ratio.powf(i as f64 / (k - 1) as f64))
        .collect()
}

/// Picks the penalty with the smallest `folds`-fold held-out loss. Ties go to the
/// larger penalty.
pub fn cv_select_lambda(
    x: &DMatrix<f64>,
    y: &[f64],
    w: Option<&[f64]>,
    grid: &[f64],
    folds: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<CvResult> {
    let wv = check_inputs(x, y, w)?;
    if grid.is_empty() {
        return Err(TauqError::Config("empty penalty grid".into()));
    }
    let n = x.nrows();
    let assign = FoldAssignment::random(n, folds, seed)?;
    // path is warm-started from the largest penalty
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));
    let sorted: Vec<f64> = order.iter().map(|&i| grid[i]).collect();

    let mut loss = vec![0.0; grid.len()];
    let mut total_w = 0.0;
    for f in 0..folds {
        let train = assign.complement(f);
        let test = assign.members(f);
        let xt = x.select_rows(train.iter());
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let wt: Vec<f64> = train.iter().map(|&i| wv[i]).collect();
        if wt.iter().all(|v| *v == 0.0) {
            continue;
        }
        let path = lasso_path(&xt, &yt, Some(&wt), &sorted, opts)?;
        for (k, model) in path.iter().enumerate() {
            let mut acc = 0.0;
            for &i in &test {
                let row: Vec<f64> = x.row(i).iter().copied().collect();
                acc += wv[i] * (y[i] - model.predict_row(&row)).powi(2);
            }
            loss[order[k]] += acc;
        }
        total_w += test.iter().map(|&i| wv[i]).sum::<f64>();
    }
    if !(total_w > 0.0) {
        return Err(TauqError::InvalidArgument(
            "no held-out weight in any fold".into(),
        ));
    }
    loss.iter_mut().for_each(|l| *l /= total_w);

    let mut best = order[0];
    for &i in &order[1..] {
        // strict improvement required, so equal losses keep the larger penalty
        if loss[i] < loss[best] {
            best = i;
        }
    }
    Ok(CvResult {
        lambda: grid[best],
        index: best,
        losses: loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_endpoints() {
        let g = default_lambda_grid(2.0, 20);
        assert_eq!(g.len(), 20);
        assert!((g[0] - 2.0).abs() < 1e-15);
        assert!((g[19] - 2e-4).abs() < 1e-15);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn ties_prefer_larger_penalty() {
        // constant response: every penalty predicts the training mean
        let x = DMatrix::from_fn(20, 2, |i, j| ((i * 7 + j * 3) % 5) as f64);
        let y = vec![1.0; 20];
        let grid = [0.1, 1.0, 0.01];
        let r = cv_select_lambda(&x, &y, None, &grid, 4, 3, &SolverOptions::default()).unwrap();
        assert_eq!(r.lambda, 1.0);
    }

    #[test]
    fn signal_prefers_small_penalty() {
        let x = DMatrix::from_fn(40, 1, |i, _| i as f64 / 10.0);
        let y: Vec<f64> = (0..40).map(|i| 3.0 * i as f64 / 10.0).collect();
        let grid = default_lambda_grid(5.0, 10);
        let r = cv_select_lambda(&x, &y, None, &grid, 5, 1, &SolverOptions::default()).unwrap();
        assert_eq!(r.index, 9);
    }
}
