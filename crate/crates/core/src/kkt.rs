//! Kuhn–Tucker functionals for the minimization of `T(F)`.
//!
//! With `M(R) = Σᵢ pᵢ g(R, rᵢ)`, the average-power condition reads
//!
//! ```text
//! Φ(r) = ∫ M(R)^ρ ĝ(R, r) dR − T(F) + λ(r² − α)/(1 + ρ) ≥ 0,
//! ```
//!
//! with equality at the mass points. Under a peak limit the `λ` term is
//! dropped and `ν̄` moves inside the kernel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{tail_cutoff, validate_rho, ChannelParams, Kernel};
use crate::distribution::DiscreteDistribution;
use crate::error::{invalid, Error, Result};
use crate::functional::{check_peak, node_rule, Mixture, QuadratureConfig};
use crate::special::{i0e, i1e};

/// A distribution whose power is within this relative distance of `α` is
/// treated as meeting the constraint, so `λ` is fitted rather than zero.
pub const ACTIVE_POWER_RTOL: f64 = 1e-2;

/// Largest amplitude swept by default when `λ` does not bound the search.
pub const DEFAULT_R_CAP: f64 = 10.0;

/// `Φ` tabulated on the shared Gauss–Legendre rule. `M^ρ` is computed once
/// per node and reused for every `r`.
#[derive(Debug, Clone)]
pub(crate) struct PhiEvaluator {
    pub(crate) rho: f64,
    pub(crate) nu_bar: f64,
    pub(crate) cp: ChannelParams,
    tol: f64,
    hint: Option<f64>,
    pub(crate) nodes: Vec<f64>,
    wm: Vec<f64>,
    mix_len: usize,
    pub(crate) t_value: f64,
}

impl PhiEvaluator {
    /// `r_top` is the largest amplitude that will be evaluated.
    pub(crate) fn new(
        amplitudes: &[f64],
        probabilities: &[f64],
        rho: f64,
        nu_bar: f64,
        cp: &ChannelParams,
        qc: &QuadratureConfig,
        r_top: f64,
    ) -> Self {
        let mix = Mixture::from_parts(
            amplitudes.iter().copied(),
            probabilities.iter().copied(),
            rho,
            nu_bar,
            cp,
        );
        let tol = 0.5 * qc.abs_tol;
        let r_mix = qc.r_max_hint.unwrap_or_else(|| mix.r_max(tol));
        let top = match qc.r_max_hint {
            Some(h) => h,
            None => r_mix.max(tail_cutoff(&Kernel::new(r_top, rho, nu_bar, cp), tol)),
        };
        let rule = node_rule(top);
        let ln_m: Vec<f64> = rule.nodes.iter().map(|&x| mix.ln_at(x)).collect();
        let wm: Vec<f64> = rule
            .weights
            .iter()
            .zip(&ln_m)
            .map(|(w, l)| w * (rho * l).exp())
            .collect();
        let n_mix = rule.nodes.partition_point(|&x| x <= r_mix);
        let c = 1.0 + rho;
        let t_value = rule.weights[..n_mix]
            .iter()
            .zip(&ln_m)
            .map(|(w, l)| w * (c * l).exp())
            .sum();
        Self {
            rho,
            nu_bar,
            cp: *cp,
            tol,
            hint: qc.r_max_hint,
            nodes: rule.nodes,
            wm,
            mix_len: n_mix,
            t_value,
        }
    }

    pub(crate) fn from_dist(
        dist: &DiscreteDistribution,
        rho: f64,
        nu_bar: f64,
        cp: &ChannelParams,
        qc: &QuadratureConfig,
        r_top: f64,
    ) -> Self {
        let a: Vec<f64> = dist.amplitudes().collect();
        let p: Vec<f64> = dist.probabilities().collect();
        Self::new(&a, &p, rho, nu_bar, cp, qc, r_top)
    }

    pub(crate) fn kernel(&self, r: f64) -> Kernel {
        Kernel::new(r, self.rho, self.nu_bar, &self.cp)
    }

    /// Number of leading nodes needed for the integrand at `r`.
    pub(crate) fn span(&self, kernel: &Kernel) -> usize {
        match self.hint {
            Some(_) => self.nodes.len(),
            None => {
                let cut = tail_cutoff(kernel, self.tol);
                self.nodes.partition_point(|&x| x <= cut).max(self.mix_len)
            }
        }
    }

    /// `∫ M^ρ g(R, r) dR`.
    pub(crate) fn first_term(&self, r: f64) -> f64 {
        let k = self.kernel(r);
        let n = self.span(&k);
        self.nodes[..n]
            .iter()
            .zip(&self.wm)
            .map(|(&x, w)| w * k.ln(x).exp())
            .sum()
    }

    /// First term and its derivative in `r`.
    pub(crate) fn first_term_with_derivative(&self, r: f64) -> (f64, f64) {
        let k = self.kernel(r);
        let n = self.span(&k);
        let mut f = 0.0;
        let mut df = 0.0;
        for (&x, w) in self.nodes[..n].iter().zip(&self.wm) {
            let v = w * k.ln(x).exp();
            f += v;
            if v != 0.0 {
                df += v * k.d_ln_dr(x);
            }
        }
        (f, df)
    }

    pub(crate) fn phi(&self, r: f64, lambda: f64) -> f64 {
        self.first_term(r) - self.t_value + self.power_term(r, lambda)
    }

    pub(crate) fn power_term(&self, r: f64, lambda: f64) -> f64 {
        lambda * (r * r - self.cp.alpha()) / (1.0 + self.rho)
    }
}

/// One sample of a Kuhn–Tucker sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiSample {
    pub r: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verdict {
    Optimal,
    /// Smallest swept amplitude with `Φ < −tol`, or a mass point where
    /// `|Φ| > tol`. The global minimizer is in [`KktReport::argmin_r`].
    ViolatedAt { r: f64 },
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub grid: Vec<PhiSample>,
    pub mass_point_values: Vec<PhiSample>,
    pub min_phi: f64,
    pub argmin_r: f64,
    pub lambda: f64,
    pub nu_bar: f64,
    pub verdict: Verdict,
    pub tolerance: f64,
    pub t_value: f64,
}

impl KktReport {
    pub fn is_optimal(&self) -> bool {
        self.verdict == Verdict::Optimal
    }

    /// Two-column `r,phi` table of the sweep.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("r,phi\n");
        for s in &self.grid {
            out.push_str(&format!("{},{}\n", s.r, s.phi));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSpec {
    /// `r = 0` plus `points − 1` log-spaced amplitudes up to `r_hi`, with
    /// the mass points appended.
    Default { points: usize },
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktOptions {
    pub grid: GridSpec,
    pub tol: f64,
    /// Fitted from the distribution when absent.
    pub lambda: Option<f64>,
    /// Used only under a peak limit.
    pub nu_bar: f64,
    pub quadrature: QuadratureConfig,
    pub r_hi: Option<f64>,
}

impl Default for KktOptions {
    fn default() -> Self {
        Self {
            grid: GridSpec::Default { points: 400 },
            tol: 1e-6,
            lambda: None,
            nu_bar: 0.0,
            quadrature: QuadratureConfig::default(),
            r_hi: None,
        }
    }
}

fn check_amplitude(r: f64) -> Result<()> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::Domain(format!("amplitude must be finite and nonnegative, got {r}")));
    }
    Ok(())
}

fn check_nonneg(name: &'static str, v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(invalid(name, "must be finite and nonnegative"));
    }
    Ok(())
}

fn peak_limit(cp: &ChannelParams) -> Result<f64> {
    cp.peak_amplitude()
        .ok_or_else(|| invalid("kappa", "a peak limit is required"))
}

/// `Φ(r)` for the average-power constraint.
pub fn phi(
    r: f64,
    dist: &DiscreteDistribution,
    rho: f64,
    cp: &ChannelParams,
    lambda: f64,
    qc: &QuadratureConfig,
) -> Result<f64> {
    check_amplitude(r)?;
    validate_rho(rho)?;
    check_nonneg("lambda", lambda)?;
    qc.validate()?;
    let ev = PhiEvaluator::from_dist(dist, rho, 0.0, cp, qc, r);
    Ok(ev.phi(r, lambda))
}

/// `Φ_p(r)` for combined average and peak constraints.
pub fn phi_peak(
    r: f64,
    dist: &DiscreteDistribution,
    rho: f64,
    nu_bar: f64,
    cp: &ChannelParams,
    qc: &QuadratureConfig,
) -> Result<f64> {
    check_amplitude(r)?;
    validate_rho(rho)?;
    check_nonneg("nu_bar", nu_bar)?;
    qc.validate()?;
    let peak = peak_limit(cp)?;
    if r > peak * (1.0 + 1e-12) {
        return Err(Error::Domain(format!("amplitude {r} exceeds the peak limit {peak}")));
    }
    check_peak(dist, cp)?;
    let ev = PhiEvaluator::from_dist(dist, rho, nu_bar, cp, qc, r);
    Ok(ev.phi(r, 0.0))
}

/// `∂T/∂ν̄ = (1+ρ) ∫ M^ρ Σᵢ pᵢ (rᵢ² − α) g(R, rᵢ) dR`.
pub fn nu_stationarity_residual(
    dist: &DiscreteDistribution,
    rho: f64,
    nu_bar: f64,
    cp: &ChannelParams,
    qc: &QuadratureConfig,
) -> Result<f64> {
    validate_rho(rho)?;
    check_nonneg("nu_bar", nu_bar)?;
    qc.validate()?;
    check_peak(dist, cp)?;
    let ev = PhiEvaluator::from_dist(dist, rho, nu_bar, cp, qc, dist.max_amplitude());
    Ok(residual_from(&ev, dist))
}

pub(crate) fn residual_from(ev: &PhiEvaluator, dist: &DiscreteDistribution) -> f64 {
    let alpha = ev.cp.alpha();
    (1.0 + ev.rho)
        * dist
            .points()
            .iter()
            .map(|m| m.p * (m.r * m.r - alpha) * ev.first_term(m.r))
            .sum::<f64>()
}

/// Multiplier making `F = δ(r − √α)` stationary at `ρ = 1`:
/// `λ = K/(2(1+α)²) · e^{−z}(I₀(z) − I₁(z))`, `z = Kα/(2(1+α))`.
pub fn lambda_from_single_mass(alpha: f64, k_factor: f64) -> f64 {
    let z = k_factor * alpha / (2.0 * (1.0 + alpha));
    k_factor / (2.0 * (1.0 + alpha).powi(2)) * (i0e(z) - i1e(z))
}

/// Least-squares `λ` from `Φ(rᵢ) = 0` at the nonzero mass points. When all
/// of those sit at `r² = α`, falls back to `Φ'(rᵢ) = 0`.
pub(crate) fn signed_lambda_fit(ev: &PhiEvaluator, dist: &DiscreteDistribution) -> Option<f64> {
    let alpha = ev.cp.alpha();
    let c = 1.0 + ev.rho;
    let mut num = 0.0;
    let mut den = 0.0;
    for m in dist.points().iter().filter(|m| m.r > 0.0) {
        let a = (m.r * m.r - alpha) / c;
        if a.abs() > 1e-9 {
            num += a * (ev.first_term(m.r) - ev.t_value);
            den += a * a;
        }
    }
    if den > 0.0 {
        return Some(-num / den);
    }
    for m in dist.points().iter().filter(|m| m.r > 0.0) {
        let a = 2.0 * m.r / c;
        num += a * ev.first_term_with_derivative(m.r).1;
        den += a * a;
    }
    (den > 0.0).then(|| -num / den)
}

/// Nonnegative `λ` fitted so that `Φ` vanishes at the mass points.
pub fn lambda_fit(
    dist: &DiscreteDistribution,
    rho: f64,
    cp: &ChannelParams,
    qc: &QuadratureConfig,
) -> Result<f64> {
    validate_rho(rho)?;
    qc.validate()?;
    let ev = PhiEvaluator::from_dist(dist, rho, 0.0, cp, qc, dist.max_amplitude());
    signed_lambda_fit(&ev, dist)
        .map(|l| l.max(0.0))
        .ok_or(Error::DegenerateDistribution("all mass at r = 0"))
}

pub(crate) fn log_grid(points: usize, r_hi: f64) -> Vec<f64> {
    let mut g = vec![0.0];
    if points > 1 && r_hi > 0.0 {
        let lo = r_hi * 1e-3;
        let n = points - 1;
        let step = if n > 1 { (r_hi / lo).ln() / (n - 1) as f64 } else { 0.0 };
        g.extend((0..n).map(|i| {
            if i + 1 == n {
                r_hi
            } else {
                lo * (step * i as f64).exp()
            }
        }));
    }
    g
}

/// Sweeps `Φ` (or `Φ_p` when `cp` carries a peak limit) and decides
/// optimality of `dist`.
pub fn kkt_report(
    dist: &DiscreteDistribution,
    rho: f64,
    cp: &ChannelParams,
    options: &KktOptions,
) -> Result<KktReport> {
    validate_rho(rho)?;
    options.quadrature.validate()?;
    if !(options.tol > 0.0) {
        return Err(invalid("tol", "must be positive"));
    }
    if let Some(l) = options.lambda {
        check_nonneg("lambda", l)?;
    }
    check_nonneg("nu_bar", options.nu_bar)?;
    if let Some(r) = options.r_hi {
        if !(r > 0.0) || !r.is_finite() {
            return Err(invalid("r_hi", "must be positive and finite"));
        }
    }
    check_peak(dist, cp)?;
    let qc = &options.quadrature;
    let alpha = cp.alpha();
    let c = 1.0 + rho;
    let peak = cp.peak_amplitude();
    let explicit_max = match &options.grid {
        GridSpec::Explicit(g) => {
            for &r in g {
                check_amplitude(r)?;
            }
            g.iter().copied().fold(0.0, f64::max)
        }
        GridSpec::Default { .. } => 0.0,
    };
    let base_hi = (3.0 * alpha.sqrt()).max(2.0 * dist.max_amplitude());
    let r_top = match peak {
        Some(p) => p.max(explicit_max),
        None => options
            .r_hi
            .unwrap_or(base_hi.max(DEFAULT_R_CAP))
            .max(base_hi)
            .max(explicit_max),
    };
    let nu_bar = if peak.is_some() { options.nu_bar } else { 0.0 };
    let ev = PhiEvaluator::from_dist(dist, rho, nu_bar, cp, qc, r_top);
    let t = ev.t_value;

    let mass: Vec<(f64, f64)> = dist
        .points()
        .iter()
        .map(|m| (m.r, ev.first_term(m.r) - t))
        .collect();

    let slack = dist.average_power() < alpha * (1.0 - ACTIVE_POWER_RTOL) - 1e-12;
    let fitted = if peak.is_some() {
        Some(0.0)
    } else if let Some(l) = options.lambda {
        Some(l)
    } else if slack {
        Some(0.0)
    } else {
        signed_lambda_fit(&ev, dist).map(|l| l.max(0.0))
    };

    let mut grid = match (&options.grid, peak) {
        (GridSpec::Explicit(g), _) => g.clone(),
        (GridSpec::Default { points }, Some(p)) => {
            let mut g = log_grid(*points, p);
            g.extend(dist.amplitudes());
            g
        }
        (GridSpec::Default { points }, None) => {
            let r_hi = options.r_hi.unwrap_or_else(|| {
                let safe = match fitted {
                    Some(l) if l > 0.0 => (alpha + c * t / l).sqrt(),
                    _ => f64::INFINITY,
                };
                base_hi.max(safe.min(DEFAULT_R_CAP))
            });
            let mut g = log_grid(*points, r_hi);
            g.extend(dist.amplitudes());
            g
        }
    };
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let diffs: Vec<f64> = grid.par_iter().map(|&r| ev.first_term(r) - t).collect();

    let lambda = match fitted {
        Some(l) => l,
        // smallest λ ≥ 0 keeping Φ ≥ 0 on the grid
        None => grid
            .iter()
            .zip(&diffs)
            .filter(|(r, _)| *r * *r > alpha)
            .map(|(r, d)| -c * d / (r * r - alpha))
            .fold(0.0, f64::max),
    };

    let power = |r: f64| {
        if peak.is_some() {
            0.0
        } else {
            lambda * (r * r - alpha) / c
        }
    };
    let samples: Vec<PhiSample> = grid
        .iter()
        .zip(&diffs)
        .map(|(&r, d)| PhiSample { r, phi: d + power(r) })
        .collect();
    let mass_point_values: Vec<PhiSample> = mass
        .iter()
        .map(|&(r, d)| PhiSample { r, phi: d + power(r) })
        .collect();

    let (argmin_r, min_phi) = samples
        .iter()
        .fold((f64::NAN, f64::INFINITY), |(ar, mp), s| {
            if s.phi < mp {
                (s.r, s.phi)
            } else {
                (ar, mp)
            }
        });
    let tol = options.tol;
    let verdict = if samples.is_empty() || !min_phi.is_finite() {
        Verdict::Inconclusive
    } else if let Some(first) = samples.iter().find(|s| s.phi < -tol) {
        Verdict::ViolatedAt { r: first.r }
    } else if let Some(bad) = mass_point_values.iter().find(|s| s.phi.abs() > tol) {
        Verdict::ViolatedAt { r: bad.r }
    } else {
        Verdict::Optimal
    };
    Ok(KktReport {
        grid: samples,
        mass_point_values,
        min_phi,
        argmin_r,
        lambda,
        nu_bar,
        verdict,
        tolerance: tol,
        t_value: t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ExponentParams;
    use crate::functional::objective_t;
    use crate::quadrature::integrate_adaptive;

    fn qc() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    fn single(r: f64) -> DiscreteDistribution {
        DiscreteDistribution::single(r).unwrap()
    }

    #[test]
    fn lambda_closed_form_values() {
        assert!((lambda_from_single_mass(0.09, 1.0) - 0.3956).abs() < 5e-4);
        assert!((lambda_from_single_mass(0.36, 2.0) - 0.3668).abs() < 5e-4);
        // mpmath oracle
        assert!((lambda_from_single_mass(0.09, 1.0) - 0.395_654_2).abs() < 1e-7);
        assert!((lambda_from_single_mass(0.36, 2.0) - 0.366_819_8).abs() < 1e-7);
        for a in [0.0, 0.3, 4.0] {
            assert_eq!(lambda_from_single_mass(a, 0.0), 0.0);
        }
    }

    #[test]
    fn vanishes_at_single_mass() {
        for (k, a) in [(1.0, 0.09), (2.0, 0.36), (3.0, 1.0)] {
            let cp = ChannelParams::new(k, a).unwrap();
            let r = f64::sqrt(a);
            let l = lambda_from_single_mass(a, k);
            assert!(phi(r, &single(r), 1.0, &cp, l, &qc()).unwrap().abs() < 1e-6);
        }
    }

    #[test]
    fn low_power_single_mass_is_optimal() {
        for (k, a, l) in [(1.0, 0.09, 0.3956), (2.0, 0.36, 0.3668)] {
            let cp = ChannelParams::new(k, a).unwrap();
            let d = single(a.sqrt());
            let opts = KktOptions {
                grid: GridSpec::Explicit((0..=300).map(|i| 0.01 * i as f64).collect()),
                lambda: Some(l),
                ..KktOptions::default()
            };
            let rep = kkt_report(&d, 1.0, &cp, &opts).unwrap();
            assert!(rep.min_phi > -1e-3, "K={k}: {}", rep.min_phi);
            let at_mass = phi(a.sqrt(), &d, 1.0, &cp, l, &qc()).unwrap();
            assert!(at_mass.abs() < 1e-3);
            let rep = kkt_report(&d, 1.0, &cp, &KktOptions::default()).unwrap();
            assert!(rep.is_optimal(), "{:?}", rep.verdict);
        }
    }

    #[test]
    fn first_term_matches_adaptive_quadrature() {
        let cp = ChannelParams::new(2.0, 1.0).unwrap();
        let d = DiscreteDistribution::new([(0.0, 0.234), (1.142, 0.766)]).unwrap();
        for rho in [0.3, 1.0] {
            let mix = Mixture::new(&d, rho, 0.0, &cp);
            let ev = PhiEvaluator::from_dist(&d, rho, 0.0, &cp, &qc(), 6.0);
            for r in [0.0, 0.7, 2.0, 6.0] {
                let k = Kernel::new(r, rho, 0.0, &cp);
                let oracle = integrate_adaptive(
                    |x| (rho * mix.ln_at(x) + k.ln(x)).exp(),
                    &[0.0, 10.0, 50.0, 200.0, 2000.0],
                    1e-14,
                    1e-12,
                    10_000,
                )
                .unwrap()
                .value;
                assert!((ev.first_term(r) - oracle).abs() < 1e-10, "r={r}");
            }
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let cp = ChannelParams::new(2.0, 1.0).unwrap();
        let d = DiscreteDistribution::new([(0.0, 0.3), (1.2, 0.7)]).unwrap();
        let ev = PhiEvaluator::from_dist(&d, 0.6, 0.2, &cp, &qc(), 4.0);
        let h = 1e-5;
        for r in [0.0, 0.4, 1.2, 2.5] {
            let fd = if r == 0.0 {
                (ev.first_term(h) - ev.first_term(0.0)) / h
            } else {
                (ev.first_term(r + h) - ev.first_term(r - h)) / (2.0 * h)
            };
            assert!((ev.first_term_with_derivative(r).1 - fd).abs() < 1e-5);
        }
    }

    #[test]
    fn mass_point_terms_reproduce_t() {
        let cp = ChannelParams::new(1.5, 0.8).unwrap();
        let d = DiscreteDistribution::new([(0.0, 0.2), (0.6, 0.3), (1.5, 0.5)]).unwrap();
        for rho in [0.2, 0.5, 1.0] {
            let ev = PhiEvaluator::from_dist(&d, rho, 0.0, &cp, &qc(), 3.0);
            let sum: f64 = d.points().iter().map(|m| m.p * ev.first_term(m.r)).sum();
            let t = objective_t(&d, &ExponentParams::new(rho, 0.0).unwrap(), &cp, &qc())
                .unwrap()
                .t_value;
            assert!((sum - t).abs() < 1e-8);
            assert!((ev.t_value - t).abs() < 1e-10);
        }
    }

    #[test]
    fn peak_and_average_forms_coincide_at_zero_multipliers() {
        let cp = ChannelParams::with_peak(2.0, 1.0, 3.0).unwrap();
        let d = DiscreteDistribution::new([(0.0, 0.4), (1.3, 0.6)]).unwrap();
        for r in [0.0, 0.5, 1.0, 1.7] {
            let a = phi(r, &d, 0.8, &cp, 0.0, &qc()).unwrap();
            let b = phi_peak(r, &d, 0.8, 0.0, &cp, &qc()).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
        assert!(phi_peak(2.0, &d, 0.8, 0.0, &cp, &qc()).is_err());
        let no_peak = cp.without_peak();
        assert!(phi_peak(0.5, &d, 0.8, 0.0, &no_peak, &qc()).is_err());
    }

    #[test]
    fn residual_matches_derivative_of_t() {
        let cp = ChannelParams::with_peak(2.0, 1.0, 4.0).unwrap();
        let d = single(0.5);
        let r0 = nu_stationarity_residual(&d, 1.0, 0.0, &cp, &qc()).unwrap();
        assert!(r0 < 0.0);
        let cases = [
            (vec![(0.0, 0.3), (1.4, 0.7)], 0.5, 0.1),
            (vec![(0.2, 0.5), (1.0, 0.5)], 1.0, 0.4),
            (vec![(0.5, 1.0)], 0.3, 0.0),
            (vec![(0.0, 0.2), (0.9, 0.3), (1.9, 0.5)], 0.7, 0.25),
        ];
        for (pts, rho, nu) in cases {
            let d = DiscreteDistribution::new(pts).unwrap();
            let t = |n: f64| {
                objective_t(&d, &ExponentParams::new(rho, n).unwrap(), &cp, &qc())
                    .unwrap()
                    .t_value
            };
            let h = 1e-4;
            let fd = if nu >= h {
                (t(nu + h) - t(nu - h)) / (2.0 * h)
            } else {
                (-3.0 * t(nu) + 4.0 * t(nu + h) - t(nu + 2.0 * h)) / (2.0 * h)
            };
            let res = nu_stationarity_residual(&d, rho, nu, &cp, &qc()).unwrap();
            assert!((res - fd).abs() < 1e-6, "{res} vs {fd}");
        }
    }

    #[test]
    fn lambda_fit_rules() {
        for (k, a) in [(1.0, 0.09), (2.0, 0.36), (0.5, 2.0)] {
            let cp = ChannelParams::new(k, a).unwrap();
            let l = lambda_fit(&single(a.sqrt()), 1.0, &cp, &qc()).unwrap();
            assert!((l - lambda_from_single_mass(a, k)).abs() < 1e-6);
        }
        let cp = ChannelParams::new(2.0, 1.0).unwrap();
        let rounded = DiscreteDistribution::new([(0.0, 0.234), (1.142, 0.766)]).unwrap();
        let l = lambda_fit(&rounded, 1.0, &cp, &qc()).unwrap();
        assert!((l - 0.1422).abs() < 2e-3);
        assert!(matches!(
            lambda_fit(&single(0.0), 1.0, &cp, &qc()),
            Err(Error::DegenerateDistribution(_))
        ));

        // two points with Φ(r₁) = Φ(r₂) = 0 for a common λ
        let d = DiscreteDistribution::new([(0.5, 0.5), (1.5, 0.5)]).unwrap();
        let ev = PhiEvaluator::from_dist(&d, 1.0, 0.0, &cp, &qc(), 1.5);
        let l = signed_lambda_fit(&ev, &d).unwrap();
        let resid: f64 = d
            .points()
            .iter()
            .map(|m| ev.phi(m.r, l) * ev.power_term(m.r, 1.0))
            .sum();
        assert!(resid.abs() < 1e-8);
    }

    #[test]
    fn low_power_mass_at_rms_fails_for_small_k() {
        let cp = ChannelParams::new(0.5, 0.01).unwrap();
        let rep = kkt_report(&single(0.1), 1.0, &cp, &KktOptions::default()).unwrap();
        assert_eq!(rep.verdict, Verdict::ViolatedAt { r: 0.0 });
    }

    #[test]
    fn empty_grid_is_inconclusive() {
        let cp = ChannelParams::new(2.0, 1.0).unwrap();
        let opts = KktOptions {
            grid: GridSpec::Explicit(vec![]),
            ..KktOptions::default()
        };
        let rep = kkt_report(&single(1.0), 1.0, &cp, &opts).unwrap();
        assert_eq!(rep.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn report_serializes() {
        let cp = ChannelParams::new(2.0, 1.0).unwrap();
        let opts = KktOptions {
            grid: GridSpec::Default { points: 5 },
            ..KktOptions::default()
        };
        let rep = kkt_report(&single(1.0), 1.0, &cp, &opts).unwrap();
        let csv = rep.to_csv();
        assert!(csv.starts_with("r,phi\n"));
        assert_eq!(csv.lines().count(), rep.grid.len() + 1);
        let json = serde_json::to_string(&rep).unwrap();
        let back: KktReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.verdict, rep.verdict);
        assert!(json.contains("\"kind\""));
    }

    #[test]
    fn grid_reaches_safe_radius() {
        let g = log_grid(400, 3.0);
        assert_eq!(g.len(), 400);
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), 3.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn closed_form_lambda_nonnegative(a in 0.0f64..50.0, k in 0.0f64..50.0) {
                prop_assert!(lambda_from_single_mass(a, k) >= 0.0);
            }

            #[test]
            fn peak_form_with_zero_nu_is_average_form(
                r in 0.0f64..1.5,
                p in 0.05f64..0.95,
                r1 in 0.1f64..1.5,
                rho in 0.0f64..1.0,
            ) {
                let cp = ChannelParams::with_peak(1.0, 1.0, 2.25).unwrap();
                let d = DiscreteDistribution::new([(0.0, p), (r1, 1.0 - p)]).unwrap();
                let a = phi(r, &d, rho, &cp, 0.0, &qc()).unwrap();
                let b = phi_peak(r, &d, rho, 0.0, &cp, &qc()).unwrap();
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
