//! Reference tables bundled for golden tests and the demo.

use ndarray::Array2;

use crate::matrix::read_matrix_csv;

/// Mean transition matrix between seven segments, in percent. Rows sum to
/// 100 only up to rounding (99.9 to 100.1).
pub const MEAN_CHAIN_CSV: &str = include_str!("../../data/reference_mean_chain.csv");

/// Reference limit distribution (percent), in row order of the reference
/// table. Its row labels do not line up with the transition matrix, so
/// comparisons use sorted values.
pub const REFERENCE_LIMIT: [f64; 7] = [3.63, 52.01, 9.90, 11.50, 12.50, 3.30, 7.80];

/// Observed frequency column (percent) accompanying [`REFERENCE_LIMIT`].
pub const REFERENCE_OBSERVED: [f64; 7] = [3.63, 53.13, 10.91, 9.79, 9.72, 4.23, 8.60];

/// Observations per segment of the reference segmentation, segments 1..7.
pub const SEGMENT_SIZES: [u64; 7] = [16438, 3029, 3375, 3006, 1122, 1309, 2660];

/// The bundled transition matrix in percent.
pub fn mean_chain_percent() -> Array2<f64> {
    read_matrix_csv(MEAN_CHAIN_CSV.as_bytes())
        .expect("bundled table parses")
        .1
}

/// Segment shares of [`SEGMENT_SIZES`], used as a stand-in for first-year
/// shares.
pub fn segment_shares() -> Vec<f64> {
    let total: u64 = SEGMENT_SIZES.iter().sum();
    SEGMENT_SIZES.iter().map(|&c| c as f64 / total as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_shape_and_rounding() {
        let t = mean_chain_percent();
        assert_eq!(t.dim(), (7, 7));
        for row in t.rows() {
            assert!((row.sum() - 100.0).abs() <= 0.1 + 1e-9);
        }
        assert_eq!(t[[6, 6]], 62.8);
        assert!((segment_shares().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
