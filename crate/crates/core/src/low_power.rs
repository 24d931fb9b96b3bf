//! Closed forms for the single-mass input `F = u(r − √α)` at `ρ = 1`.
//!
//! With `z = Kα/(2(1+α))`:
//!
//! ```text
//! T  = e^{−z} I₀(z)
//! R̂₀ = z − ln I₀(z)
//! λ  = K/(2(1+α)²) · e^{−z} (I₀(z) − I₁(z))
//! ```
//!
//! and `Φ₁(r)` follows from the Bessel product integral
//! `∫₀^∞ e^{−ax} I₀(b₁√x) I₀(b₂√x) dx = (1/a) e^{(b₁²+b₂²)/(4a)} I₀(b₁b₂/(2a))`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::special::{i0e, i1e, ln_i0e};

pub use crate::kkt::lambda_from_single_mass as lambda_single_mass;

/// Step in `α` for the curvature finite differences.
pub const CURVATURE_STEP: f64 = 1e-3;

/// Tolerance on `min Φ₁` used by [`admissibility_scan`].
pub const ADMISSIBILITY_TOL: f64 = 1e-12;

fn check_nonneg(name: &'static str, v: f64) -> Result<()> {
    if !v.is_finite() || v < 0.0 {
        return Err(invalid(name, format!("must be finite and nonnegative, got {v}")));
    }
    Ok(())
}

/// `(1/a) e^{(b₁²+b₂²)/(4a)} I₀(b₁b₂/(2a))`.
///
/// The integral converges for every `a > 0` because `I₀(b√x)` grows only
/// like `e^{b√x}`.
pub fn glasser_integral(a: f64, b1: f64, b2: f64) -> Result<f64> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::Domain(format!("integral diverges for a = {a}")));
    }
    check_nonneg("b1", b1)?;
    check_nonneg("b2", b2)?;
    let arg = b1 * b2 / (2.0 * a);
    let expo = (b1 * b1 + b2 * b2) / (4.0 * a) + arg;
    Ok(expo.exp() * i0e(arg) / a)
}

/// `∫ ĝ(R, √α) ĝ(R, r) dR` at `ρ = 1`. Analytic in `α` near 0, so small
/// negative `α` is allowed internally for central differences at `r = 0`.
fn cross_term(r: f64, alpha: f64, k: f64) -> f64 {
    let s1 = 1.0 + alpha;
    let s2 = 1.0 + r * r;
    let a = 0.5 * (1.0 / s1 + 1.0 / s2);
    let b1_sq = k * alpha / (s1 * s1);
    let b2 = k.sqrt() * r / s2;
    let b1b2 = (k * alpha.max(0.0)).sqrt() / s1 * b2;
    let arg = b1b2 / (2.0 * a);
    let expo = -k * alpha / (2.0 * s1) - k * r * r / (2.0 * s2) + (b1_sq + b2 * b2) / (4.0 * a) + arg;
    2.0 * (s1 * s2).sqrt() / (s1 + s2) * expo.exp() * i0e(arg)
}

fn t_single(alpha: f64, k: f64) -> f64 {
    i0e(k * alpha / (2.0 * (1.0 + alpha)))
}

fn lambda_any(alpha: f64, k: f64) -> f64 {
    let z = k * alpha / (2.0 * (1.0 + alpha));
    // I₁ is odd: e^{−z}I₁(z) = sgn(z)·e^{|z|−z}·e^{−|z|}I₁(|z|)
    let i1 = z.signum() * (z.abs() - z).exp() * i1e(z.abs());
    k / (2.0 * (1.0 + alpha).powi(2)) * (i0e(z) - i1)
}

fn phi_origin(alpha: f64, k: f64) -> f64 {
    cross_term(0.0, alpha, k) - t_single(alpha, k) - 0.5 * lambda_any(alpha, k) * alpha
}

fn check_args(r: f64, alpha: f64, k: f64) -> Result<()> {
    check_nonneg("r", r)?;
    check_nonneg("alpha", alpha)?;
    check_nonneg("k_factor", k)
}

/// `Φ₁(r) = ∫ĝ(R,√α)ĝ(R,r)dR − e^{−z}I₀(z) + (λ/2)(r² − α)`.
pub fn phi_single_mass(r: f64, alpha: f64, k_factor: f64, lambda: f64) -> Result<f64> {
    check_args(r, alpha, k_factor)?;
    Ok(cross_term(r, alpha, k_factor) - t_single(alpha, k_factor) + 0.5 * lambda * (r * r - alpha))
}

/// `R̂₀ = z − ln I₀(z)` in nats.
pub fn cutoff_single_mass(alpha: f64, k_factor: f64) -> Result<f64> {
    check_nonneg("alpha", alpha)?;
    check_nonneg("k_factor", k_factor)?;
    Ok(0.0 - ln_i0e(k_factor * alpha / (2.0 * (1.0 + alpha))))
}

/// `∂²Φ₁(0, α)/∂α²` at `α = 0`, as `(K² + 4K − 4)/8`.
pub fn curvature_at_origin(k_factor: f64) -> f64 {
    (k_factor * k_factor + 4.0 * k_factor - 4.0) / 8.0
}

/// `∂²Φ₁(0, α)/∂α²` at `α = 0` by central differences with one Richardson
/// step, `λ = λ(α, K)` at every abscissa.
pub fn curvature_finite_difference(k_factor: f64, step: f64) -> Result<f64> {
    check_nonneg("k_factor", k_factor)?;
    if !(step > 0.0 && step < 0.25) {
        return Err(invalid("step", format!("must lie in (0, 0.25), got {step}")));
    }
    let d2 = |h: f64| {
        (phi_origin(h, k_factor) - 2.0 * phi_origin(0.0, k_factor) + phi_origin(-h, k_factor)) / (h * h)
    };
    Ok((4.0 * d2(0.5 * step) - d2(step)) / 3.0)
}

/// `∂Φ₁(0, α)/∂α` at `α = 0` by Richardson-extrapolated central differences.
fn slope_finite_difference(k_factor: f64, step: f64) -> f64 {
    let d1 = |h: f64| (phi_origin(h, k_factor) - phi_origin(-h, k_factor)) / (2.0 * h);
    (4.0 * d1(0.5 * step) - d1(step)) / 3.0
}

/// Positive root `2√2 − 2` of `K² + 4K − 4`.
pub fn single_mass_threshold() -> f64 {
    2.0 * std::f64::consts::SQRT_2 - 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleMassAnalysis {
    pub alpha: f64,
    pub k_factor: f64,
    pub lambda: f64,
    /// Nats.
    pub r0_hat: f64,
    pub phi_min_on_grid: f64,
    pub argmin_r: f64,
    pub single_mass_admissible: bool,
    /// `Φ₁(0, 0)`.
    pub origin_value: f64,
    /// `∂Φ₁(0, α)/∂α` at `α = 0`.
    pub origin_slope: f64,
    pub curvature: f64,
    pub tolerance: f64,
}

/// `601` uniform points on `[0, max(3, 3√α)]` plus `√α`.
pub fn default_scan_grid(alpha: f64) -> Vec<f64> {
    let hi = (3.0 * alpha.sqrt()).max(3.0);
    let mut g: Vec<f64> = (0..=600).map(|i| hi * i as f64 / 600.0).collect();
    g.push(alpha.sqrt());
    g.sort_by(f64::total_cmp);
    g
}

/// Evaluates `Φ₁` with the closed-form `λ` on `grid`; the single mass is
/// admissible when the minimum is at least `−ADMISSIBILITY_TOL`.
pub fn admissibility_scan(alpha: f64, k_factor: f64, grid: &[f64]) -> Result<SingleMassAnalysis> {
    check_nonneg("alpha", alpha)?;
    check_nonneg("k_factor", k_factor)?;
    let lambda = lambda_single_mass(alpha, k_factor);
    let mut min = (f64::INFINITY, f64::NAN);
    for &r in grid {
        let v = phi_single_mass(r, alpha, k_factor, lambda)?;
        if v < min.0 {
            min = (v, r);
        }
    }
    Ok(SingleMassAnalysis {
        alpha,
        k_factor,
        lambda,
        r0_hat: cutoff_single_mass(alpha, k_factor)?,
        phi_min_on_grid: min.0,
        argmin_r: min.1,
        single_mass_admissible: min.0 >= -ADMISSIBILITY_TOL,
        origin_value: phi_origin(0.0, k_factor),
        origin_slope: slope_finite_difference(k_factor, CURVATURE_STEP),
        curvature: curvature_at_origin(k_factor),
        tolerance: ADMISSIBILITY_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelParams, ExponentParams};
    use crate::distribution::DiscreteDistribution;
    use crate::functional::{objective_t, QuadratureConfig};
    use crate::kkt::phi;
    use crate::quadrature::integrate_adaptive;
    use crate::special::bessel_i0;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bessel_product_by_quadrature(a: f64, b1: f64, b2: f64) -> f64 {
        let f = |x: f64| {
            let s = x.sqrt();
            (-a * x).exp() * bessel_i0(b1 * s).unwrap() * bessel_i0(b2 * s).unwrap()
        };
        let hi = ((b1 + b2) / a + (40.0 / a).sqrt()).powi(2) + 40.0 / a;
        let bp: Vec<f64> = (0..=64).map(|i| hi * i as f64 / 64.0).collect();
        integrate_adaptive(f, &bp, 1e-15, 1e-13, 4000).unwrap().value
    }

    #[test]
    fn bessel_product_special_values() {
        assert_relative_eq!(glasser_integral(2.5, 0.0, 0.0).unwrap(), 0.4, max_relative = 1e-15);
        let v = glasser_integral(1.0, 1.0, 1.0).unwrap();
        assert!((v - 1.753_40).abs() < 1e-4, "{v}");
        assert!((v - bessel_product_by_quadrature(1.0, 1.0, 1.0)).abs() < 1e-10);
        let v = glasser_integral(2.0, 1.0, 0.5).unwrap();
        assert!((v - bessel_product_by_quadrature(2.0, 1.0, 0.5)).abs() < 1e-8);
        assert!(glasser_integral(0.0, 1.0, 1.0).is_err());
        assert!(glasser_integral(1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn bessel_product_matches_quadrature_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        for _ in 0..10 {
            let a = rng.random_range(0.3..3.0);
            let b1 = rng.random_range(0.0..3.0);
            let b2 = rng.random_range(0.0..3.0);
            let exact = glasser_integral(a, b1, b2).unwrap();
            let q = bessel_product_by_quadrature(a, b1, b2);
            assert!((exact - q).abs() <= 1e-8 * exact.max(1.0), "{a} {b1} {b2}: {exact} vs {q}");
        }
    }

    #[test]
    fn phi_vanishes_at_the_mass_point() {
        for &(k, a) in &[(1.0, 0.09), (2.0, 0.36), (5.0, 1.7), (0.0, 0.4)] {
            let lam = lambda_single_mass(a, k);
            let v = phi_single_mass(a.sqrt(), a, k, lam).unwrap();
            assert!(v.abs() < 1e-10, "{v}");
        }
    }

    #[test]
    fn known_regimes() {
        let lam = lambda_single_mass(0.09, 1.0);
        let scan = admissibility_scan(0.09, 1.0, &default_scan_grid(0.09)).unwrap();
        assert!(scan.single_mass_admissible);
        assert_eq!(scan.lambda, lam);
        let scan = admissibility_scan(0.36, 2.0, &default_scan_grid(0.36)).unwrap();
        assert!(scan.single_mass_admissible);
        let lam = lambda_single_mass(0.01, 0.5);
        assert!(phi_single_mass(0.0, 0.01, 0.5, lam).unwrap() < 0.0);
        let scan = admissibility_scan(0.01, 0.5, &default_scan_grid(0.01)).unwrap();
        assert!(!scan.single_mass_admissible);
    }

    #[test]
    fn closed_form_matches_quadrature_phi() {
        let qc = QuadratureConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(49);
        for _ in 0..50 {
            let r = rng.random_range(0.0..3.0);
            let a: f64 = rng.random_range(0.0..2.0);
            let k = rng.random_range(0.0..5.0);
            let lam = lambda_single_mass(a, k);
            let cp = ChannelParams::new(k, a).unwrap();
            let dist = DiscreteDistribution::single(a.sqrt()).unwrap();
            let q = phi(r, &dist, 1.0, &cp, lam, &qc).unwrap();
            let c = phi_single_mass(r, a, k, lam).unwrap();
            assert!((q - c).abs() < 1e-7, "r={r} α={a} K={k}: {q} vs {c}");
        }
    }

    #[test]
    fn cutoff_closed_form_matches_quadrature() {
        let ep = ExponentParams::new(1.0, 0.0).unwrap();
        let qc = QuadratureConfig::default();
        for &k in &[0.0, 0.5, 1.0, 2.0, 5.0] {
            for &a in &[0.01, 0.09, 0.36, 1.0] {
                let cp = ChannelParams::new(k, a).unwrap();
                let dist = DiscreteDistribution::single(f64::sqrt(a)).unwrap();
                let t = objective_t(&dist, &ep, &cp, &qc).unwrap().t_value;
                assert!((-t.ln() - cutoff_single_mass(a, k).unwrap()).abs() < 1e-8);
            }
        }
        assert_eq!(cutoff_single_mass(0.0, 3.0).unwrap(), 0.0);
        // z = 0.264705882..., I₀(z) = 1.017594... from the power series
        let z: f64 = 2.0 * 0.36 / 2.72;
        let series: f64 = (0..30)
            .map(|m| (0.25 * z * z).powi(m) / (1..=m).map(f64::from).product::<f64>().powi(2))
            .sum();
        assert_relative_eq!(cutoff_single_mass(0.36, 2.0).unwrap(), z - series.ln(), epsilon = 1e-14);
        assert!((cutoff_single_mass(0.36, 2.0).unwrap() - 0.247_27).abs() < 1e-5);
        assert!((cutoff_single_mass(1.0, 2.0).unwrap() - 0.438_45).abs() < 1e-5);
    }

    #[test]
    fn lambda_makes_mass_point_stationary() {
        for &(k, a) in &[(1.0, 0.09), (2.0, 0.36), (3.0, 1.2), (0.4, 0.05)] {
            let lam = lambda_single_mass(a, k);
            let r = f64::sqrt(a);
            let h = 1e-5;
            let d = (phi_single_mass(r + h, a, k, lam).unwrap() - phi_single_mass(r - h, a, k, lam).unwrap())
                / (2.0 * h);
            assert!(d.abs() < 1e-6, "K={k} α={a}: {d}");
        }
    }

    #[test]
    fn cutoff_is_monotone() {
        let mut prev_k = vec![0.0; 20];
        for ki in 0..12 {
            let k = 0.5 * ki as f64;
            let mut prev = 0.0;
            for ai in 0..20 {
                let a = 0.1 * (ai + 1) as f64;
                let v = cutoff_single_mass(a, k).unwrap();
                assert!(v >= prev && v >= prev_k[ai]);
                prev = v;
                prev_k[ai] = v;
            }
        }
    }

    #[test]
    fn curvature_polynomial_and_threshold() {
        assert_eq!(curvature_at_origin(2.0), 1.0);
        assert_eq!(curvature_at_origin(0.0), -0.5);
        let th = single_mass_threshold();
        assert!(th > 0.8284 && th < 0.8285);
        assert!(curvature_at_origin(th).abs() < 1e-12);
        assert!(curvature_at_origin(th - 1e-6) < 0.0 && curvature_at_origin(th + 1e-6) > 0.0);
    }

    #[test]
    fn finite_difference_curvature_matches_high_precision_values() {
        // second derivatives of Φ₁(0, α) at α = 0 from 40-digit evaluation
        for &(k, v) in &[(0.0, -0.25), (0.5, -0.109_375), (2.0, 0.5)] {
            let fd = curvature_finite_difference(k, CURVATURE_STEP).unwrap();
            assert!((fd - v).abs() < 1e-6, "K={k}: {fd}");
        }
        let fd = curvature_finite_difference(single_mass_threshold(), CURVATURE_STEP).unwrap();
        assert!(fd.abs() < 1e-6);
    }

    #[test]
    fn origin_boundary_properties() {
        for &k in &[0.0, 0.5, 2.0, 4.0] {
            let scan = admissibility_scan(0.2, k, &default_scan_grid(0.2)).unwrap();
            assert!(scan.origin_value.abs() < 1e-15);
            assert!(scan.origin_slope.abs() < 1e-9);
            assert!(scan.lambda >= 0.0 && scan.r0_hat >= 0.0);
        }
        assert_eq!(lambda_single_mass(0.7, 0.0), 0.0);
    }

    proptest! {
        #[test]
        fn lambda_and_cutoff_are_nonnegative(a in 0.0f64..20.0, k in 0.0f64..50.0) {
            prop_assert!(lambda_single_mass(a, k) >= 0.0);
            let r0 = cutoff_single_mass(a, k).unwrap();
            prop_assert!(r0 >= 0.0);
            prop_assert_eq!(r0 == 0.0, k * a == 0.0);
        }
    }
}
