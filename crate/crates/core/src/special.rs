//! Modified Bessel functions of the first kind, orders 0 and 1.
//!
//! Below [`SERIES_LIMIT`] the ascending power series is summed directly (all
//! terms are positive, so there is no cancellation). Above it the Hankel
//! asymptotic expansion of `e^{-x} I_ν(x)` is used, truncated at the smallest
//! term; at the crossover the truncation error is below `e^{-2x} ≈ 4e-18`.
//!
//! Kernel code works exclusively with the exponentially scaled forms
//! `e^{-x} I_ν(x)` and `ln(e^{-x} I_0(x))`. The unscaled functions overflow
//! beyond `x ≈ 713` and are provided for completeness and testing.

use crate::error::{Error, Result};

/// Argument at which evaluation switches from the power series to the
/// asymptotic expansion.
pub const SERIES_LIMIT: f64 = 20.0;

const MAX_TERMS: usize = 200;

fn check_arg(x: f64) -> Result<()> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::Domain(format!(
            "Bessel argument must be finite and nonnegative, got {x}"
        )));
    }
    Ok(())
}

/// Sum of the series terms of `I_0(x)` beyond the leading 1.
fn i0_series_tail(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut tail = 0.0;
    for k in 1..MAX_TERMS {
        let kf = k as f64;
        term *= q / (kf * kf);
        tail += term;
        if term <= f64::EPSILON * 0.25 * (1.0 + tail) {
            break;
        }
    }
    tail
}

fn i1_series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 0.5 * x;
    let mut sum = term;
    for k in 1..MAX_TERMS {
        let kf = k as f64;
        term *= q / (kf * (kf + 1.0));
        sum += term;
        if term <= f64::EPSILON * 0.25 * sum {
            break;
        }
    }
    sum
}

/// `sqrt(2πx) e^{-x} I_ν(x)` by the Hankel expansion, `four_nu_sq = 4ν²`.
fn hankel_sum(x: f64, four_nu_sq: f64) -> f64 {
    let mut term = 1.0_f64;
    let mut sum = 1.0;
    for k in 1..MAX_TERMS {
        let odd = (2 * k - 1) as f64;
        let next = term * (odd * odd - four_nu_sq) / (8.0 * k as f64 * x);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() <= f64::EPSILON * 0.25 * sum.abs() {
            break;
        }
    }
    sum
}

fn inv_sqrt_2pi_x(x: f64) -> f64 {
    1.0 / (2.0 * std::f64::consts::PI * x).sqrt()
}

/// `e^{-x} I_0(x)` without argument checks. `x` must be finite and `≥ 0`.
#[inline]
pub(crate) fn i0e(x: f64) -> f64 {
    if x < SERIES_LIMIT {
        (1.0 + i0_series_tail(x)) * (-x).exp()
    } else {
        hankel_sum(x, 0.0) * inv_sqrt_2pi_x(x)
    }
}

/// `e^{-x} I_1(x)` without argument checks.
#[inline]
pub(crate) fn i1e(x: f64) -> f64 {
    if x < SERIES_LIMIT {
        i1_series(x) * (-x).exp()
    } else {
        hankel_sum(x, 4.0) * inv_sqrt_2pi_x(x)
    }
}

/// `ln(e^{-x} I_0(x))` without argument checks.
#[inline]
pub(crate) fn ln_i0e(x: f64) -> f64 {
    if x < SERIES_LIMIT {
        i0_series_tail(x).ln_1p() - x
    } else {
        hankel_sum(x, 0.0).ln() - 0.5 * (2.0 * std::f64::consts::PI * x).ln()
    }
}

/// `I_1(x) / I_0(x)`, which stays bounded in `[0, 1)`.
#[inline]
pub(crate) fn i1_over_i0(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else if x < SERIES_LIMIT {
        i1_series(x) / (1.0 + i0_series_tail(x))
    } else {
        hankel_sum(x, 4.0) / hankel_sum(x, 0.0)
    }
}

/// Modified Bessel function `I_0(x)`.
pub fn bessel_i0(x: f64) -> Result<f64> {
    check_arg(x)?;
    Ok(if x < SERIES_LIMIT {
        1.0 + i0_series_tail(x)
    } else {
        hankel_sum(x, 0.0) * inv_sqrt_2pi_x(x) * x.exp()
    })
}

/// Modified Bessel function `I_1(x)`.
pub fn bessel_i1(x: f64) -> Result<f64> {
    check_arg(x)?;
    Ok(if x < SERIES_LIMIT {
        i1_series(x)
    } else {
        hankel_sum(x, 4.0) * inv_sqrt_2pi_x(x) * x.exp()
    })
}

/// Exponentially scaled `e^{-x} I_0(x)`.
pub fn bessel_i0_scaled(x: f64) -> Result<f64> {
    check_arg(x)?;
    Ok(i0e(x))
}

/// Exponentially scaled `e^{-x} I_1(x)`.
pub fn bessel_i1_scaled(x: f64) -> Result<f64> {
    check_arg(x)?;
    Ok(i1e(x))
}

/// `ln I_0(x) - x`. Nonincreasing, zero at the origin, and
/// `≈ -½ ln(2πx)` for large `x`.
pub fn log_bessel_i0_scaled(x: f64) -> Result<f64> {
    check_arg(x)?;
    Ok(ln_i0e(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    // Integral representation I_n(x) = (1/π) ∫_0^π e^{x cos θ} cos(nθ) dθ.
    // The trapezoid rule is spectrally accurate for this periodic integrand.
    fn integral_oracle(n: i32, x: f64) -> f64 {
        let m = 400;
        let h = PI / m as f64;
        let mut s = 0.0;
        for j in 0..=m {
            let th = j as f64 * h;
            let w = if j == 0 || j == m { 0.5 } else { 1.0 };
            s += w * (x * th.cos()).exp() * (n as f64 * th).cos();
        }
        s * h / PI
    }

    #[test]
    fn frozen_values() {
        assert_eq!(bessel_i0(0.0).unwrap(), 1.0);
        assert_eq!(bessel_i1(0.0).unwrap(), 0.0);
        assert_relative_eq!(bessel_i0(0.5).unwrap(), 1.063_483_370_741_323_4, max_relative = 1e-14);
        assert_relative_eq!(bessel_i1(0.5).unwrap(), 0.257_894_305_390_896_36, max_relative = 1e-14);
        assert_relative_eq!(bessel_i0(0.264706).unwrap(), 1.017_594_180_181_782_7, max_relative = 1e-14);
        assert_relative_eq!(bessel_i1(0.264706).unwrap(), 0.133_515_624_094_325_8, max_relative = 1e-14);
    }

    #[test]
    fn agrees_with_integral_representation() {
        for i in 0..=60 {
            let x = 0.5 * i as f64;
            assert_relative_eq!(bessel_i0(x).unwrap(), integral_oracle(0, x), max_relative = 1e-12);
            if x > 0.0 {
                assert_relative_eq!(bessel_i1(x).unwrap(), integral_oracle(1, x), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn continuous_across_crossover() {
        let below = SERIES_LIMIT * (1.0 - 1e-15);
        assert_relative_eq!(i0e(below), i0e(SERIES_LIMIT), max_relative = 1e-10);
        assert_relative_eq!(i1e(below), i1e(SERIES_LIMIT), max_relative = 1e-10);
        let series = (1.0 + i0_series_tail(SERIES_LIMIT)) * (-SERIES_LIMIT).exp();
        assert_relative_eq!(series, i0e(SERIES_LIMIT), max_relative = 1e-13);
        let series1 = i1_series(SERIES_LIMIT) * (-SERIES_LIMIT).exp();
        assert_relative_eq!(series1, i1e(SERIES_LIMIT), max_relative = 1e-13);
    }

    #[test]
    fn log_scaled_values() {
        assert_eq!(log_bessel_i0_scaled(0.0).unwrap(), 0.0);
        assert!((log_bessel_i0_scaled(0.5).unwrap() - (-0.438_450_280_814_5)).abs() < 1e-12);
        let big = log_bessel_i0_scaled(100.0).unwrap();
        assert!((big + 0.5 * (200.0 * PI).ln() - f64::ln(1.0 + 1.0 / 800.0 + 9.0 / 1_280_000.0)).abs() < 1e-6);
        for i in 0..=200 {
            let x = 0.1 * i as f64;
            let direct = bessel_i0(x).unwrap().ln() - x;
            assert!((log_bessel_i0_scaled(x).unwrap() - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        for bad in [-1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(bessel_i0(bad), Err(Error::Domain(_))));
            assert!(matches!(bessel_i1(bad), Err(Error::Domain(_))));
            assert!(log_bessel_i0_scaled(bad).is_err());
        }
    }

    #[test]
    fn derivative_of_i0_is_i1() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let x: f64 = rng.random_range(0.01..10.0);
            let h = 1e-5;
            let fd = (bessel_i0(x + h).unwrap() - bessel_i0(x - h).unwrap()) / (2.0 * h);
            let i1 = bessel_i1(x).unwrap();
            assert!((fd - i1).abs() <= 1e-6 * i1.max(1.0), "x={x}");
        }
    }

    #[test]
    fn ratio_matches_quotient() {
        for x in [0.0, 1e-8, 0.3, 2.0, 19.9, 20.0, 55.0, 800.0] {
            let expect = if x == 0.0 { 0.0 } else { i1e(x) / i0e(x) };
            assert_relative_eq!(i1_over_i0(x), expect, max_relative = 1e-13);
        }
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn ordering(x in 0.0f64..700.0) {
                let i0 = bessel_i0_scaled(x).unwrap();
                let i1 = bessel_i1_scaled(x).unwrap();
                prop_assert!(i0 >= i1 && i1 >= 0.0);
                if x < 700.0 {
                    prop_assert!(bessel_i0(x).unwrap() >= 1.0);
                }
            }

            #[test]
            fn log_scaled_nonincreasing(x in 0.0f64..500.0, dx in 1e-6f64..5.0) {
                let a = log_bessel_i0_scaled(x).unwrap();
                let b = log_bessel_i0_scaled(x + dx).unwrap();
                prop_assert!(b <= a + 1e-15);
            }
        }
    }
}
