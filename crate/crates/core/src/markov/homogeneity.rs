use serde::{Deserialize, Serialize};

use super::{MarkovError, TransitionTensor};
use crate::stats::chi_square_sf;

/// Likelihood-ratio test of a homogeneous chain against year-specific
/// transition matrices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// `G = 2 Σ_n Σ_ij N[n]_ij ln(P[n]_ij / P̂_ij)` with `P̂` the pooled MLE.
/// Degrees of freedom are `Σ_i (T_i − 1)(m_i − 1)` where `T_i` counts the
/// year pairs observing row `i` and `m_i` the non-empty pooled columns.
pub fn homogeneity_test(tensor: &TransitionTensor) -> Result<HomogeneityTest, MarkovError> {
    let observed_pairs = tensor.counts.iter().filter(|c| c.sum() > 0).count();
    if observed_pairs < 2 {
        return Err(MarkovError::InsufficientData(format!(
            "{observed_pairs} year pair(s) with transitions, need 2"
        )));
    }
    let pooled = tensor.pooled_counts();
    let mut statistic = 0.0;
    let mut df = 0usize;
    for i in 0..tensor.k {
        let pooled_row = pooled.row(i);
        let pooled_total = pooled_row.sum();
        if pooled_total == 0 {
            continue;
        }
        let mut rows_observed = 0usize;
        for c in &tensor.counts {
            let row = c.row(i);
            let total = row.sum();
            if total == 0 {
                continue;
            }
            rows_observed += 1;
            for (j, &x) in row.iter().enumerate() {
                if x == 0 {
                    continue;
                }
                let p_year = x as f64 / total as f64;
                let p_pooled = pooled_row[j] as f64 / pooled_total as f64;
                statistic += 2.0 * x as f64 * (p_year / p_pooled).ln();
            }
        }
        let columns = pooled_row.iter().filter(|&&x| x > 0).count();
        df += rows_observed.saturating_sub(1) * columns.saturating_sub(1);
    }
    // Rounding can leave a tiny negative sum for identical years.
    let statistic = statistic.max(0.0);
    Ok(HomogeneityTest {
        statistic,
        df,
        p_value: chi_square_sf(statistic, df),
    })
}

/// Tests each adjacent pair of year pairs separately, keyed by the start
/// year of the earlier pair. Pairs lacking data are reported as errors.
pub fn adjacent_homogeneity_tests(tensor: &TransitionTensor) -> Vec<(i32, Result<HomogeneityTest, MarkovError>)> {
    (0..tensor.pairs().saturating_sub(1))
        .map(|n| (tensor.first_year + n as i32, homogeneity_test(&tensor.slice(n..n + 2))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identical_years_give_zero() {
        let c = array![[5u64, 3, 2], [1, 7, 0], [0, 4, 4]];
        let t = TransitionTensor::from_counts(3, 1990, vec![c.clone(), c.clone(), c]);
        let r = homogeneity_test(&t).unwrap();
        assert!(r.statistic.abs() < 1e-12);
        assert_eq!(r.p_value, 1.0);
        // Rows 1 and 3: (3-1)(3-1) and (3-1)(2-1); row 2 has two columns.
        assert_eq!(r.df, 4 + 2 + 2);
    }

    #[test]
    fn hand_computed_statistic() {
        // Row 1: year A [10, 0], year B [0, 10], pooled [10, 10].
        let t = TransitionTensor::from_counts(1, 2000, vec![array![[10u64]], array![[10]]]);
        assert_eq!(homogeneity_test(&t).unwrap().df, 0);
        let t = TransitionTensor::from_counts(2, 2000, vec![array![[10u64, 0], [0, 0]], array![[0, 10], [0, 0]]]);
        let r = homogeneity_test(&t).unwrap();
        let expected = 2.0 * (10.0 * 2f64.ln() + 10.0 * 2f64.ln());
        assert!((r.statistic - expected).abs() < 1e-12);
        assert_eq!(r.df, 1);
    }

    #[test]
    fn needs_two_observed_pairs() {
        let t = TransitionTensor::from_counts(2, 2000, vec![array![[1u64, 0], [0, 1]], array![[0, 0], [0, 0]]]);
        assert!(matches!(homogeneity_test(&t), Err(MarkovError::InsufficientData(_))));
        let adj = adjacent_homogeneity_tests(&t);
        assert_eq!(adj.len(), 1);
        assert_eq!(adj[0].0, 2000);
    }
}
