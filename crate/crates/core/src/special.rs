//! Scalar special functions shared by the likelihoods.

pub use statrs::function::gamma::{digamma, ln_gamma};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Trigamma function ψ₁(x) for x > 0.
///
/// Recurrence up to x ≥ 10, then the asymptotic expansion in 1/x.
pub fn trigamma(mut x: f64) -> f64 {
    if x <= 0.0 || !x.is_finite() {
        return f64::NAN;
    }
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let z = 1.0 / (x * x);
    // 1/x + 1/2x² + Σ B_2k / x^{2k+1}
    let tail = z
        * (1.0 / 6.0
            - z * (1.0 / 30.0
                - z * (1.0 / 42.0 - z * (1.0 / 30.0 - z * (5.0 / 66.0 - z * 691.0 / 2730.0)))));
    acc + 1.0 / x + 0.5 * z + tail / x
}

/// ln(1 + eᵘ) without overflow.
pub fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

/// Logistic sigmoid 1 / (1 + e⁻ᵘ).
pub fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// log Σ exp(xᵢ) weighted: log Σ wᵢ exp(xᵢ), with wᵢ ≥ 0.
pub fn log_sum_exp_weighted(values: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    let pairs: Vec<(f64, f64)> = values.into_iter().collect();
    let max = pairs
        .iter()
        .filter(|(w, _)| *w > 0.0)
        .map(|(_, x)| *x)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = pairs.iter().map(|(w, x)| w * (x - max).exp()).sum();
    max + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trigamma_known_values() {
        // ψ₁(1) = π²/6, ψ₁(1/2) = π²/2
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((trigamma(1.0) - pi2 / 6.0).abs() < 1e-12);
        assert!((trigamma(0.5) - pi2 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn trigamma_is_digamma_derivative() {
        for &x in &[0.03f64, 0.7, 2.5, 11.0, 140.0] {
            let h = 1e-5 * x.max(1.0);
            let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert!((trigamma(x) - fd).abs() < 1e-6 * trigamma(x).max(1.0), "x={x}");
        }
    }

    #[test]
    fn softplus_extremes() {
        assert_eq!(softplus(-800.0), 0.0);
        assert_eq!(softplus(800.0), 800.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn weighted_lse_matches_direct() {
        let v = [(0.25, 1.0), (0.75, -2.0)];
        let direct = (0.25 * 1f64.exp() + 0.75 * (-2f64).exp()).ln();
        assert!((log_sum_exp_weighted(v) - direct).abs() < 1e-14);
    }
}
