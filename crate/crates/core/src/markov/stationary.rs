use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_stochastic, MarkovError, MeanChain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StationaryMethod {
    LinearSolve,
    /// Power iteration on the lazy chain `(I + P) / 2`, i.e. successive
    /// averaging of `x` and `xP`; converges for periodic chains too.
    AveragedPowerIteration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryDist {
    pub pi: Vec<f64>,
    pub method: StationaryMethod,
    /// `max_j |(πP)_j − π_j|`.
    pub residual: f64,
}

const CONDITION_LIMIT: f64 = 1e12;
const RESIDUAL_LIMIT: f64 = 1e-10;
const ITERATION_TOL: f64 = 1e-12;
const MAX_ITERATIONS: usize = 10_000_000;

/// Stationary distribution `π P = π`, `Σ π = 1` of the mean chain.
///
/// Uniqueness requires exactly one closed communicating class. The
/// singular system is solved with one balance equation replaced by the
/// normalization; an ill-conditioned or inaccurate solve falls back to
/// averaged power iteration.
pub fn limit_distribution(chain: &MeanChain) -> Result<StationaryDist, MarkovError> {
    let p = &chain.p;
    check_stochastic(p)?;
    let closed = closed_classes(p);
    if closed != 1 {
        return Err(MarkovError::NotUnique(closed));
    }
    let k = p.nrows();
    let pm = DMatrix::from_fn(k, k, |i, j| p[[i, j]]);

    if let Some(pi) = linear_solve(&pm) {
        let residual = residual(&pm, &pi);
        if residual <= RESIDUAL_LIMIT {
            return Ok(StationaryDist {
                pi,
                method: StationaryMethod::LinearSolve,
                residual,
            });
        }
    }
    let pi = averaged_power_iteration(&pm);
    let residual = residual(&pm, &pi);
    Ok(StationaryDist {
        pi,
        method: StationaryMethod::AveragedPowerIteration,
        residual,
    })
}

fn linear_solve(p: &DMatrix<f64>) -> Option<Vec<f64>> {
    let k = p.nrows();
    // Rows of (Pᵀ − I) are the balance equations; the last one is redundant.
    let mut a = p.transpose() - DMatrix::identity(k, k);
    for j in 0..k {
        a[(k - 1, j)] = 1.0;
    }
    let sv = a.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if smin <= 0.0 || smax / smin > CONDITION_LIMIT {
        return None;
    }
    let mut b = DVector::zeros(k);
    b[k - 1] = 1.0;
    let x = a.lu().solve(&b)?;
    if x.iter().any(|&v| !v.is_finite() || v < -1e-12) {
        return None;
    }
    let clipped: Vec<f64> = x.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    Some(clipped.into_iter().map(|v| v / total).collect())
}

fn averaged_power_iteration(p: &DMatrix<f64>) -> Vec<f64> {
    let k = p.nrows();
    let mut x = DVector::from_element(k, 1.0 / k as f64);
    for _ in 0..MAX_ITERATIONS {
        let next = p.tr_mul(&x);
        let delta = (&next - &x).amax();
        if delta <= ITERATION_TOL {
            break;
        }
        x = (&x + &next) * 0.5;
    }
    let total = x.sum();
    x.iter().map(|v| v / total).collect()
}

fn residual(p: &DMatrix<f64>, pi: &[f64]) -> f64 {
    let x = DVector::from_column_slice(pi);
    (p.tr_mul(&x) - x).amax()
}

/// Number of closed communicating classes of the transition graph.
fn closed_classes(p: &ndarray::Array2<f64>) -> usize {
    let k = p.nrows();
    let mut reach = vec![vec![false; k]; k];
    for (i, row) in reach.iter_mut().enumerate() {
        row[i] = true;
        for (j, r) in row.iter_mut().enumerate() {
            *r |= p[[i, j]] > 0.0;
        }
    }
    for m in 0..k {
        for i in 0..k {
            if reach[i][m] {
                for j in 0..k {
                    if reach[m][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    (0..k)
        .filter(|&i| {
            // i represents its class if it is the lowest index of the class,
            // and the class is closed if everything reachable reaches back.
            let lowest = (0..i).all(|j| !(reach[i][j] && reach[j][i]));
            let closed = (0..k).all(|j| !reach[i][j] || reach[j][i]);
            lowest && closed
        })
        .count()
}
