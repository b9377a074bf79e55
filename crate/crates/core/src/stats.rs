//! Small numerical helpers shared across estimators.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance with the `n - 1` denominator.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
}

fn standard_normal() -> Normal {
    Normal::standard()
}

/// Standard normal quantile `Φ⁻¹(p)`; infinite at 0 and 1.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        standard_normal().inverse_cdf(p)
    }
}

pub fn normal_cdf(z: f64) -> f64 {
    standard_normal().cdf(z)
}

/// Closed interval `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    /// Two-sided Wald interval `estimate ± z_{1-(1-level)/2} · se`.
    pub fn wald(estimate: f64, se: f64, level: f64) -> Self {
        let z = normal_quantile(1.0 - (1.0 - level) / 2.0);
        let half = if se == 0.0 { 0.0 } else { z * se };
        Interval {
            lower: estimate - half,
            upper: estimate + half,
        }
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lower <= other.lower && other.upper <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

pub(crate) fn check_level(level: f64) -> crate::Result<()> {
    if level.is_finite() && level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(crate::Error::Domain(format!(
            "confidence level must lie in (0, 1), got {level}"
        )))
    }
}

/// SplitMix64 finalizer; used to derive independent per-replicate seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_and_cdf() {
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-9);
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert_eq!(normal_quantile(1.0), f64::INFINITY);
    }

    #[test]
    fn wald_zero_se_is_degenerate() {
        let ci = Interval::wald(3.0, 0.0, 0.95);
        assert_eq!((ci.lower, ci.upper), (3.0, 3.0));
    }

    #[test]
    fn variance_matches_hand_value() {
        assert!((sample_variance(&[1.0, 2.0, 3.0, 4.0]) - 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn seeds_differ_per_stream() {
        assert_ne!(mix_seed(7, 0), mix_seed(7, 1));
        assert_eq!(mix_seed(7, 3), mix_seed(7, 3));
    }
}
