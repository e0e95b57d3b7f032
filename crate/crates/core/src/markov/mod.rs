//! Non-homogeneous Markov chains over segments: per-year transition
//! estimation, homogeneity testing, trajectory simulation, pooled "mean"
//! chains and limit distributions.
//!
//! States are 0-based indices internally; CSV and report outputs use 1-based
//! segment labels.

mod homogeneity;
mod simulate;
mod stationary;
mod trajectory_io;

pub mod fixtures;

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use homogeneity::{adjacent_homogeneity_tests, homogeneity_test, HomogeneityTest};
pub use simulate::{simulate, Fallback, STREAM_PATHS};
pub use stationary::{limit_distribution, StationaryDist, StationaryMethod};
pub use trajectory_io::{read_trajectories_csv, write_trajectories_csv};

#[derive(Debug, Error, PartialEq)]
pub enum MarkovError {
    #[error("no transitions observed from {0} to the next year")]
    NoTransitions(i32),
    #[error("segment {label} outside 1..={k}", label = .label + 1)]
    LabelOutOfRange { label: usize, k: usize },
    #[error("invalid year range {0}..={1}")]
    InvalidYears(i32, i32),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid initial distribution: {0}")]
    InvalidInitial(String),
    #[error("row {state} undefined in {year}", state = .state + 1)]
    UndefinedRowEncountered { year: i32, state: usize },
    #[error("no trajectories")]
    EmptyInput,
    #[error("state {} never left in any trajectory", .0 + 1)]
    UnvisitedState(usize),
    #[error("trajectories have different horizons or state counts")]
    HorizonMismatch,
    #[error("stationary distribution is not unique ({0} closed classes)")]
    NotUnique(usize),
    #[error("matrix is not stochastic: {0}")]
    NonStochastic(String),
    #[error("trajectory csv: {0}")]
    Csv(String),
}

/// Segment membership of one (individual, year) observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledObservation {
    pub individual_id: String,
    pub year: i32,
    pub segment: usize,
}

/// The family of per-year transition matrices `P[n]`, one per year pair
/// `(first_year + n, first_year + n + 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionTensor {
    pub k: usize,
    pub first_year: i32,
    #[serde(with = "crate::matrix::nested_vec")]
    pub counts: Vec<Array2<u64>>,
    #[serde(with = "crate::matrix::nested_vec")]
    pub probabilities: Vec<Array2<f64>>,
    /// `observed[n][i]` is false when row `i` of `P[n]` is undefined.
    pub observed: Vec<Vec<bool>>,
}

impl TransitionTensor {
    /// Maximum-likelihood row normalization; rows without counts stay zero
    /// and are flagged unobserved.
    pub fn from_counts(k: usize, first_year: i32, counts: Vec<Array2<u64>>) -> Self {
        let mut probabilities = Vec::with_capacity(counts.len());
        let mut observed = Vec::with_capacity(counts.len());
        for c in &counts {
            let (p, obs) = normalize_counts(c, 0.0);
            probabilities.push(p);
            observed.push(obs);
        }
        Self {
            k,
            first_year,
            counts,
            probabilities,
            observed,
        }
    }

    /// The same stochastic matrix for every one of `pairs` year pairs. Counts
    /// are left at zero.
    pub fn homogeneous(p: &Array2<f64>, first_year: i32, pairs: usize) -> Result<Self, MarkovError> {
        check_stochastic(p)?;
        let k = p.nrows();
        Ok(Self {
            k,
            first_year,
            counts: vec![Array2::zeros((k, k)); pairs],
            probabilities: vec![p.clone(); pairs],
            observed: vec![vec![true; k]; pairs],
        })
    }

    /// Number of year pairs.
    pub fn pairs(&self) -> usize {
        self.probabilities.len()
    }

    /// Start years of the year pairs.
    pub fn years(&self) -> Vec<i32> {
        (0..self.pairs() as i32).map(|n| self.first_year + n).collect()
    }

    /// Years covered by a full trajectory.
    pub fn horizon(&self) -> usize {
        self.pairs() + 1
    }

    /// Add-`alpha` smoothing of every row; unobserved rows become uniform
    /// when `alpha > 0`.
    pub fn smoothed(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        for (n, c) in self.counts.iter().enumerate() {
            let (p, obs) = normalize_counts(c, alpha);
            out.probabilities[n] = p;
            out.observed[n] = obs;
        }
        out
    }

    /// Year pairs `range` as a tensor of their own.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            k: self.k,
            first_year: self.first_year + range.start as i32,
            counts: self.counts[range.clone()].to_vec(),
            probabilities: self.probabilities[range.clone()].to_vec(),
            observed: self.observed[range].to_vec(),
        }
    }

    /// Counts summed over all year pairs.
    pub fn pooled_counts(&self) -> Array2<u64> {
        let mut total = Array2::zeros((self.k, self.k));
        for c in &self.counts {
            total += c;
        }
        total
    }
}

fn normalize_counts(c: &Array2<u64>, alpha: f64) -> (Array2<f64>, Vec<bool>) {
    let k = c.ncols();
    let mut p = Array2::zeros(c.dim());
    let mut obs = vec![false; c.nrows()];
    for (i, row) in c.rows().into_iter().enumerate() {
        let total = row.sum() as f64 + alpha * k as f64;
        if total > 0.0 {
            obs[i] = true;
            for (j, &x) in row.iter().enumerate() {
                p[[i, j]] = (x as f64 + alpha) / total;
            }
        }
    }
    (p, obs)
}

pub(crate) fn check_stochastic(p: &Array2<f64>) -> Result<(), MarkovError> {
    if p.nrows() != p.ncols() || p.nrows() == 0 {
        return Err(MarkovError::NonStochastic(format!("shape {:?}", p.dim())));
    }
    for (i, row) in p.rows().into_iter().enumerate() {
        if row.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(MarkovError::NonStochastic(format!("row {} has invalid entries", i + 1)));
        }
        let s = row.sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(MarkovError::NonStochastic(format!("row {} sums to {s}", i + 1)));
        }
    }
    Ok(())
}

/// Counts transitions between consecutive years of the same individual and
/// normalizes them per year pair. Every year pair in
/// `first_year..last_year` must carry at least one transition.
pub fn estimate_transitions(
    observations: &[LabeledObservation],
    k: usize,
    first_year: i32,
    last_year: i32,
) -> Result<TransitionTensor, MarkovError> {
    if last_year <= first_year {
        return Err(MarkovError::InvalidYears(first_year, last_year));
    }
    let pairs = (last_year - first_year) as usize;
    let mut by_individual: BTreeMap<&str, BTreeMap<i32, usize>> = BTreeMap::new();
    for o in observations {
        if o.segment >= k {
            return Err(MarkovError::LabelOutOfRange { label: o.segment, k });
        }
        by_individual
            .entry(o.individual_id.as_str())
            .or_default()
            .insert(o.year, o.segment);
    }
    let mut counts = vec![Array2::<u64>::zeros((k, k)); pairs];
    for path in by_individual.values() {
        for (&year, &from) in path {
            if year < first_year || year >= last_year {
                continue;
            }
            if let Some(&to) = path.get(&(year + 1)) {
                counts[(year - first_year) as usize][[from, to]] += 1;
            }
        }
    }
    if let Some(n) = counts.iter().position(|c| c.sum() == 0) {
        return Err(MarkovError::NoTransitions(first_year + n as i32));
    }
    Ok(TransitionTensor::from_counts(k, first_year, counts))
}

/// A full path of segment states, one per year from `start_year`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub individual_id: String,
    pub start_year: i32,
    pub states: Vec<usize>,
}

/// Pooled transition matrix over all consecutive-year steps of a set of
/// trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanChain {
    #[serde(with = "crate::matrix::nested")]
    pub p: Array2<f64>,
    /// Pooled counts (all zero when the chain was given directly).
    #[serde(with = "crate::matrix::nested")]
    pub counts: Array2<u64>,
    pub transitions: u64,
}

impl MeanChain {
    /// Wraps a given matrix, rescaling each row to sum to 1. Negative
    /// entries or all-zero rows are rejected.
    pub fn from_matrix(m: &Array2<f64>) -> Result<Self, MarkovError> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(MarkovError::NonStochastic(format!("shape {:?}", m.dim())));
        }
        let mut p = m.clone();
        for (i, mut row) in p.rows_mut().into_iter().enumerate() {
            if row.iter().any(|&x| !x.is_finite() || x < 0.0) {
                return Err(MarkovError::NonStochastic(format!("row {} has invalid entries", i + 1)));
            }
            let s = row.sum();
            if s <= 0.0 {
                return Err(MarkovError::NonStochastic(format!("row {} is zero", i + 1)));
            }
            row.mapv_inplace(|x| x / s);
        }
        Ok(Self {
            counts: Array2::zeros(p.dim()),
            p,
            transitions: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.p.nrows()
    }
}

pub fn mean_chain(trajectories: &[Trajectory], k: usize) -> Result<MeanChain, MarkovError> {
    if trajectories.is_empty() {
        return Err(MarkovError::EmptyInput);
    }
    let mut counts = Array2::<u64>::zeros((k, k));
    for t in trajectories {
        if let Some(&bad) = t.states.iter().find(|&&s| s >= k) {
            return Err(MarkovError::LabelOutOfRange { label: bad, k });
        }
        for w in t.states.windows(2) {
            counts[[w[0], w[1]]] += 1;
        }
    }
    let (p, observed) = normalize_counts(&counts, 0.0);
    if let Some(i) = observed.iter().position(|o| !o) {
        return Err(MarkovError::UnvisitedState(i));
    }
    Ok(MeanChain {
        p,
        transitions: counts.sum(),
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn obs(id: &str, year: i32, segment: usize) -> LabeledObservation {
        LabeledObservation {
            individual_id: id.into(),
            year,
            segment,
        }
    }

    #[test]
    fn single_path_mle() {
        let t = estimate_transitions(&[obs("A", 1990, 0), obs("A", 1991, 1), obs("A", 1992, 1)], 2, 1990, 1992).unwrap();
        assert_eq!(t.pairs(), 2);
        assert_eq!(t.probabilities[0][[0, 1]], 1.0);
        assert_eq!(t.probabilities[1][[1, 1]], 1.0);
        assert_eq!(t.observed[0], vec![true, false]);
        assert_eq!(t.probabilities[0].row(1).sum(), 0.0);
    }

    #[test]
    fn normalization() {
        let t = TransitionTensor::from_counts(2, 2000, vec![array![[2, 0], [1, 1]]]);
        assert_eq!(t.probabilities[0], array![[1.0, 0.0], [0.5, 0.5]]);
        let s = TransitionTensor::from_counts(2, 2000, vec![array![[2, 0], [0, 0]]]).smoothed(1.0);
        assert_eq!(s.probabilities[0], array![[0.75, 0.25], [0.5, 0.5]]);
        assert!(s.observed[0][1]);
    }

    #[test]
    fn estimation_errors() {
        let r = estimate_transitions(&[obs("A", 1990, 0), obs("A", 1991, 0)], 1, 1990, 1992);
        assert_eq!(r, Err(MarkovError::NoTransitions(1991)));
        let r = estimate_transitions(&[obs("A", 1990, 3)], 2, 1990, 1991);
        assert_eq!(r, Err(MarkovError::LabelOutOfRange { label: 3, k: 2 }));
        assert_eq!(estimate_transitions(&[], 2, 1990, 1990), Err(MarkovError::InvalidYears(1990, 1990)));
    }

    #[test]
    fn mean_chain_cases() {
        let single = Trajectory {
            individual_id: "x".into(),
            start_year: 1990,
            states: vec![0, 0, 0],
        };
        assert_eq!(mean_chain(std::slice::from_ref(&single), 2), Err(MarkovError::UnvisitedState(1)));
        assert_eq!(mean_chain(&[], 2), Err(MarkovError::EmptyInput));
        let other = Trajectory {
            states: vec![1, 0, 1],
            ..single.clone()
        };
        let m = mean_chain(&[single, other], 2).unwrap();
        assert_eq!(m.p, array![[2.0 / 3.0, 1.0 / 3.0], [1.0, 0.0]]);
        assert_eq!(m.transitions, 4);
    }

    #[test]
    fn from_matrix_renormalizes() {
        let m = MeanChain::from_matrix(&array![[99.9, 0.1], [50.0, 50.1]]).unwrap();
        for row in m.p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert!(MeanChain::from_matrix(&array![[0.0, 0.0], [1.0, 0.0]]).is_err());
        assert!(MeanChain::from_matrix(&array![[-1.0, 2.0], [1.0, 0.0]]).is_err());
    }
}
