//! Small numeric helpers shared across modules.

/// Index drawn from the (possibly unnormalized) weights `p` using a uniform
/// variate `u` in `[0, 1)`. Rounding slack at the top end resolves to the
/// last positive weight.
pub fn sample_categorical(p: &[f64], u: f64) -> usize {
    let total: f64 = p.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in p.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last_positive = i;
        if target < acc {
            return i;
        }
    }
    last_positive
}

/// Upper tail of the chi-square distribution with `df` degrees of freedom.
pub fn chi_square_sf(statistic: f64, df: usize) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    if df == 0 || statistic <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df as f64)
        .map(|d| d.sf(statistic))
        .unwrap_or(f64::NAN)
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mixes a base seed with a stream index into an independent 64-bit seed
/// (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categorical_edges() {
        assert_eq!(sample_categorical(&[0.0, 1.0, 0.0], 0.0), 1);
        assert_eq!(sample_categorical(&[0.5, 0.5, 0.0], 0.999_999_999), 1);
        assert_eq!(sample_categorical(&[0.25, 0.25, 0.5], 0.3), 1);
        assert_eq!(sample_categorical(&[0.2, 0.8], 1.0), 1);
    }

    #[test]
    fn chi_square_tail() {
        assert_eq!(chi_square_sf(0.0, 3), 1.0);
        // 95th percentile of chi2(1).
        assert!((chi_square_sf(3.841_458_820_694_124, 1) - 0.05).abs() < 1e-9);
    }
}
