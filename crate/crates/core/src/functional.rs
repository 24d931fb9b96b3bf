//! The Gallager objective `T(F) = ∫₀^∞ (Σᵢ pᵢ g(R, rᵢ))^{1+ρ} dR` over
//! discrete amplitude distributions, and `E₀ = −ln T`.
//!
//! The integral is truncated at an `R_max` chosen from an explicit
//! envelope of the mixture tail (see [`crate::channel`]), so the reported
//! `tail_bound` is a rigorous bound on the discarded mass rather than an
//! estimate.

use serde::{Deserialize, Serialize};

use crate::channel::{tail_bound, tail_cutoff, ChannelParams, ExponentParams, Kernel};
use crate::distribution::DiscreteDistribution;
use crate::error::{invalid, Error, Result};
use crate::quadrature::{integrate_adaptive, NodeRule};

/// Panel width of the shared Gauss–Legendre rule and the initial adaptive
/// partition. Kernels vary on scales of at least `1 + ρ ≥ 1` in `R`.
pub(crate) const PANEL_WIDTH: f64 = 4.0;

const MAX_PANELS: usize = 20_000;

/// Tolerances for the semi-infinite integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Overrides the envelope-derived truncation point.
    pub r_max_hint: Option<f64>,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            r_max_hint: None,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || !(self.abs_tol > 0.0) {
            return Err(invalid("quadrature", "tolerances must be positive"));
        }
        if let Some(h) = self.r_max_hint {
            if !(h > 0.0) || !h.is_finite() {
                return Err(invalid("r_max_hint", "must be positive and finite"));
            }
        }
        Ok(())
    }
}

/// Value of the objective together with its accuracy certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionalValue {
    pub t_value: f64,
    /// `−ln T`, in nats.
    pub e0: f64,
    /// Bound on `∫_{R_max}^∞` of the integrand.
    pub tail_bound: f64,
    /// Quadrature error estimate on `[0, R_max]`.
    pub error_estimate: f64,
    pub r_max: f64,
}

/// Log-domain mixture `ln Σᵢ pᵢ g(R, rᵢ)`.
#[derive(Debug, Clone)]
pub(crate) struct Mixture {
    ln_p: Vec<f64>,
    p: Vec<f64>,
    kernels: Vec<Kernel>,
}

impl Mixture {
    pub(crate) fn new(dist: &DiscreteDistribution, rho: f64, nu_bar: f64, cp: &ChannelParams) -> Self {
        Self::from_parts(dist.amplitudes(), dist.probabilities(), rho, nu_bar, cp)
    }

    pub(crate) fn from_parts(
        amplitudes: impl IntoIterator<Item = f64>,
        probabilities: impl IntoIterator<Item = f64>,
        rho: f64,
        nu_bar: f64,
        cp: &ChannelParams,
    ) -> Self {
        let mut ln_p = Vec::new();
        let mut p = Vec::new();
        let mut kernels = Vec::new();
        for (r, pi) in amplitudes.into_iter().zip(probabilities) {
            if pi > 0.0 {
                ln_p.push(pi.ln());
                p.push(pi);
                kernels.push(Kernel::new(r, rho, nu_bar, cp));
            }
        }
        Self { ln_p, p, kernels }
    }

    #[inline]
    pub(crate) fn ln_at(&self, big_r: f64) -> f64 {
        let mut terms = [0.0f64; 16];
        let mut heap_terms;
        let buf: &mut [f64] = if self.kernels.len() <= terms.len() {
            &mut terms[..self.kernels.len()]
        } else {
            heap_terms = vec![0.0; self.kernels.len()];
            &mut heap_terms
        };
        let mut max = f64::NEG_INFINITY;
        for ((t, k), lp) in buf.iter_mut().zip(&self.kernels).zip(&self.ln_p) {
            *t = lp + k.ln(big_r);
            max = max.max(*t);
        }
        max + buf.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
    }

    /// Truncation point at which every component tail is below `tol`.
    pub(crate) fn r_max(&self, tol: f64) -> f64 {
        self.kernels
            .iter()
            .map(|k| tail_cutoff(k, tol))
            .fold(0.0, f64::max)
    }

    /// Bound on the tail of `(Σ pᵢ gᵢ)^{1+ρ}` via Jensen: `≤ Σ pᵢ gᵢ^{1+ρ}`.
    pub(crate) fn tail_bound(&self, r_max: f64) -> f64 {
        self.kernels
            .iter()
            .zip(&self.p)
            .map(|(k, p)| p * tail_bound(k, r_max))
            .sum()
    }
}

/// Shared composite rule on `[0, r_max]`. Panels widen like `√R/2` past
/// `R = 64`, matching the spread of the kernels in `R`.
pub(crate) fn node_rule(r_max: f64) -> NodeRule {
    let mut breaks = vec![0.0];
    let mut x = 0.0f64;
    while x < r_max {
        x += PANEL_WIDTH.max(0.5 * x.sqrt());
        breaks.push(x);
    }
    if breaks.len() == 1 {
        breaks.push(PANEL_WIDTH);
    }
    NodeRule::from_breakpoints(&breaks)
}

pub(crate) fn check_peak(dist: &DiscreteDistribution, cp: &ChannelParams) -> Result<()> {
    if let Some(peak) = cp.peak_amplitude() {
        let max = dist.max_amplitude();
        if max > peak * (1.0 + 1e-12) + 1e-15 {
            return Err(Error::InvalidDistribution(format!(
                "amplitude {max} exceeds the peak limit {peak}"
            )));
        }
    }
    Ok(())
}

/// `E{r²} = Σ pᵢ rᵢ²`.
pub fn average_power(dist: &DiscreteDistribution) -> f64 {
    dist.average_power()
}

/// `ln ∫ g(R, r) dF(r)` by log-sum-exp over the mass points.
pub fn inner_mixture_log(
    big_r: f64,
    dist: &DiscreteDistribution,
    ep: &ExponentParams,
    cp: &ChannelParams,
) -> f64 {
    Mixture::new(dist, ep.rho(), ep.nu_bar(), cp).ln_at(big_r)
}

/// Evaluates `T(F)` with adaptive Gauss–Kronrod quadrature on `[0, R_max]`.
pub fn objective_t(
    dist: &DiscreteDistribution,
    ep: &ExponentParams,
    cp: &ChannelParams,
    qc: &QuadratureConfig,
) -> Result<FunctionalValue> {
    qc.validate()?;
    check_peak(dist, cp)?;
    let mix = Mixture::new(dist, ep.rho(), ep.nu_bar(), cp);
    let c = 1.0 + ep.rho();
    let r_max = qc.r_max_hint.unwrap_or_else(|| mix.r_max(0.5 * qc.abs_tol));
    let panels = ((r_max / (2.0 * PANEL_WIDTH)).ceil() as usize).max(1);
    let breaks: Vec<f64> = (0..=panels)
        .map(|i| r_max * i as f64 / panels as f64)
        .collect();
    let integral = integrate_adaptive(
        |x| (c * mix.ln_at(x)).exp(),
        &breaks,
        0.5 * qc.abs_tol,
        qc.rel_tol,
        MAX_PANELS,
    )?;
    Ok(FunctionalValue {
        t_value: integral.value,
        e0: -integral.value.ln(),
        tail_bound: mix.tail_bound(r_max),
        error_estimate: integral.error,
        r_max,
    })
}

/// Gallager function `E₀ = −ln T(F)` in nats.
pub fn gallager_e0(
    dist: &DiscreteDistribution,
    ep: &ExponentParams,
    cp: &ChannelParams,
    qc: &QuadratureConfig,
) -> Result<f64> {
    objective_t(dist, ep, cp, qc).map(|v| v.e0)
}
