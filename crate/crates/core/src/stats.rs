//! Rank statistics for the paired-seed comparisons.

/// One-sided Mann-Whitney U test for the alternative "a tends smaller
/// than b". Returns the normal-approximation p-value with tie correction
/// and continuity correction.
pub fn mann_whitney_less(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len() as f64, b.len() as f64);
    if a.is_empty() || b.is_empty() {
        return 1.0;
    }
    // U = #{(i,j): a_i < b_j} + 0.5 #{a_i == b_j}; small U favors "a < b"
    // counted the other way, so count wins for a directly.
    let mut u = 0.0;
    for &x in a {
        for &y in b {
            if x < y {
                u += 1.0;
            } else if x == y {
                u += 0.5;
            }
        }
    }
    // Tie correction over the pooled sample.
    let mut pooled: Vec<f64> = a.iter().chain(b.iter()).cloned().collect();
    pooled.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let total = n + m;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i + 1;
        while j < pooled.len() && pooled[j] == pooled[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let mean = n * m / 2.0;
    let var = n * m / 12.0 * ((total + 1.0) - tie_term / (total * (total - 1.0)));
    if var <= 0.0 {
        return if u > mean { 1.0 } else { 0.5 };
    }
    // Large U means a < b often; the one-sided p-value is the upper tail.
    let z = (u - 0.5 - mean) / var.sqrt();
    1.0 - crate::num::normal_cdf(z)
}

/// Median of a sample (averaging the middle pair for even counts).
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Interquartile range via the median-of-halves convention.
pub fn iqr(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    let lower = &v[..n / 2];
    let upper = &v[n.div_ceil(2)..];
    median(upper) - median(lower)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, rng_for};

    #[test]
    fn median_and_iqr_basics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(iqr(&[1.0, 2.0, 3.0, 4.0]), 2.0);
    }

    #[test]
    fn mann_whitney_detects_clear_shift() {
        let mut rng = rng_for(99, 0);
        let a: Vec<f64> = (0..20).map(|_| normal(&mut rng)).collect();
        let b: Vec<f64> = (0..20).map(|_| 2.0 + normal(&mut rng)).collect();
        let p = mann_whitney_less(&a, &b);
        assert!(p < 0.001, "p = {p}");
        // Reverse direction is not significant.
        let p_rev = mann_whitney_less(&b, &a);
        assert!(p_rev > 0.5, "p_rev = {p_rev}");
    }

    #[test]
    fn mann_whitney_null_is_calibrated() {
        // Identical distributions: p should be roughly uniform; check that
        // it is not systematically tiny.
        let mut rng = rng_for(7, 0);
        let mut rejections = 0;
        let trials = 200;
        for _ in 0..trials {
            let a: Vec<f64> = (0..15).map(|_| normal(&mut rng)).collect();
            let b: Vec<f64> = (0..15).map(|_| normal(&mut rng)).collect();
            if mann_whitney_less(&a, &b) < 0.05 {
                rejections += 1;
            }
        }
        let rate = rejections as f64 / trials as f64;
        assert!(rate < 0.12, "null rejection rate {rate}");
    }
}
