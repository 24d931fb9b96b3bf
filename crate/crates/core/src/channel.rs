//! Channel parameterization and the output kernels.
//!
//! The physical model is `y = d·x + a·x + n` with `a ~ CN(0, γ²)` and
//! `n ~ CN(0, N₀)`. After integrating out a uniform input phase and passing
//! to the normalized amplitude `r = γ|x|/√N₀` and output energy
//! `R = |y|²/N₀`, every quantity in this crate is expressed through the
//! kernel
//!
//! ```text
//! g(R, r) = exp(ν̄(r² − α)) (1 + r²)^{-1/(1+ρ)}
//!           · exp(−(R + K r²) / ((1+ρ)(1+r²)))
//!           · I₀(2√K r √R / ((1+ρ)(1+r²)))
//! ```
//!
//! and its `ν̄ = 0` specialization ĝ. Kernels are evaluated in the log domain;
//! the exponent and the Bessel factor are combined as
//! `−(√R − √K r)²/((1+ρ)(1+r²)) + ln(e^{-b} I₀(b))`, which stays finite for
//! any finite `R`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::special::{i1_over_i0, ln_i0e};

fn nonneg(name: &'static str, v: f64) -> Result<f64> {
    if !v.is_finite() || v < 0.0 {
        return Err(invalid(name, format!("must be finite and nonnegative, got {v}")));
    }
    Ok(v)
}

/// Unnormalized channel description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Line-of-sight power `|d|²`. The phase of `d` is taken to be zero.
    pub d_mag_sq: f64,
    /// Diffuse fading variance `γ² = E|a|²`.
    pub gamma_sq: f64,
    /// Noise variance `N₀`.
    pub n0: f64,
    /// Average input power limit `P`.
    pub p: f64,
}

impl PhysicalParams {
    pub fn new(d_mag_sq: f64, gamma_sq: f64, n0: f64, p: f64) -> Result<Self> {
        let n0 = nonneg("n0", n0)?;
        if n0 == 0.0 {
            return Err(invalid("n0", "noise variance must be positive"));
        }
        Ok(Self {
            d_mag_sq: nonneg("d_mag_sq", d_mag_sq)?,
            gamma_sq: nonneg("gamma_sq", gamma_sq)?,
            n0,
            p: nonneg("p", p)?,
        })
    }

    fn d(&self) -> f64 {
        self.d_mag_sq.sqrt()
    }
}

/// Normalized channel: Rician factor `K`, SNR `α`, optional peak ratio `κ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawChannelParams")]
pub struct ChannelParams {
    k_factor: f64,
    alpha: f64,
    kappa: Option<f64>,
}

#[derive(Deserialize)]
struct RawChannelParams {
    k_factor: f64,
    alpha: f64,
    kappa: Option<f64>,
}

impl TryFrom<RawChannelParams> for ChannelParams {
    type Error = Error;
    fn try_from(raw: RawChannelParams) -> Result<Self> {
        match raw.kappa {
            Some(kappa) => Self::with_peak(raw.k_factor, raw.alpha, kappa),
            None => Self::new(raw.k_factor, raw.alpha),
        }
    }
}

impl ChannelParams {
    /// Average-power-limited channel.
    pub fn new(k_factor: f64, alpha: f64) -> Result<Self> {
        Ok(Self {
            k_factor: nonneg("k_factor", k_factor)?,
            alpha: nonneg("alpha", alpha)?,
            kappa: None,
        })
    }

    /// Channel with both average and peak limits, `r² ≤ κα`.
    pub fn with_peak(k_factor: f64, alpha: f64, kappa: f64) -> Result<Self> {
        if !kappa.is_finite() || kappa < 1.0 {
            return Err(invalid("kappa", format!("must be finite and at least 1, got {kappa}")));
        }
        let mut cp = Self::new(k_factor, alpha)?;
        cp.kappa = Some(kappa);
        Ok(cp)
    }

    pub fn k_factor(&self) -> f64 {
        self.k_factor
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn kappa(&self) -> Option<f64> {
        self.kappa
    }

    /// Largest admissible amplitude `√(κα)`, if a peak limit is set.
    pub fn peak_amplitude(&self) -> Option<f64> {
        self.kappa.map(|k| (k * self.alpha).sqrt())
    }

    /// Same channel without the peak limit.
    pub fn without_peak(&self) -> Self {
        Self {
            kappa: None,
            ..*self
        }
    }
}

/// Gallager parameter `ρ` and the normalized shaping exponent `ν̄ = νN₀/γ²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentParams {
    rho: f64,
    nu_bar: f64,
}

impl ExponentParams {
    pub fn new(rho: f64, nu_bar: f64) -> Result<Self> {
        validate_rho(rho)?;
        Ok(Self {
            rho,
            nu_bar: nonneg("nu_bar", nu_bar)?,
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn nu_bar(&self) -> f64 {
        self.nu_bar
    }
}

pub(crate) fn validate_rho(rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(invalid("rho", format!("must lie in [0, 1], got {rho}")));
    }
    Ok(())
}

/// `K = |d|²/γ²`, `α = γ²P/N₀`.
pub fn normalize(phys: &PhysicalParams) -> Result<ChannelParams> {
    if phys.gamma_sq == 0.0 {
        return Err(Error::DegenerateChannel(
            "zero fading variance admits no normalization",
        ));
    }
    ChannelParams::new(phys.d_mag_sq / phys.gamma_sq, phys.gamma_sq * phys.p / phys.n0)
}

/// Conditional output density `f(y|x)` of the unnormalized channel.
pub fn conditional_density(y: Complex64, x: Complex64, phys: &PhysicalParams) -> f64 {
    let var = phys.gamma_sq * x.norm_sqr() + phys.n0;
    let dev = (y - x * phys.d()).norm_sqr();
    (-dev / var).exp() / (std::f64::consts::PI * var)
}

/// `ln f(y|x)`.
pub fn log_conditional_density(y: Complex64, x: Complex64, phys: &PhysicalParams) -> f64 {
    let var = phys.gamma_sq * x.norm_sqr() + phys.n0;
    let dev = (y - x * phys.d()).norm_sqr();
    -dev / var - (std::f64::consts::PI * var).ln()
}

/// Kernel `g(·, r)` with everything that does not depend on `R` folded into
/// constants.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Kernel {
    r: f64,
    c: f64,
    s: f64,
    offset: f64,
    mean: f64,
    inv_cs: f64,
    bessel_coef: f64,
    sqrt_k: f64,
    nu_bar: f64,
}

impl Kernel {
    pub(crate) fn new(r: f64, rho: f64, nu_bar: f64, cp: &ChannelParams) -> Self {
        let c = 1.0 + rho;
        let s = 1.0 + r * r;
        let sqrt_k = cp.k_factor.sqrt();
        Self {
            r,
            c,
            s,
            offset: nu_bar * (r * r - cp.alpha) - s.ln() / c,
            mean: sqrt_k * r,
            inv_cs: 1.0 / (c * s),
            bessel_coef: 2.0 * sqrt_k * r / (c * s),
            sqrt_k,
            nu_bar,
        }
    }

    /// `ln g(R, r)`.
    #[inline]
    pub(crate) fn ln(&self, big_r: f64) -> f64 {
        let sr = big_r.sqrt();
        let dev = sr - self.mean;
        self.offset - dev * dev * self.inv_cs + ln_i0e(self.bessel_coef * sr)
    }

    /// `∂/∂r ln g(R, r)`.
    #[inline]
    pub(crate) fn d_ln_dr(&self, big_r: f64) -> f64 {
        let r = self.r;
        let sr = big_r.sqrt();
        let k = self.sqrt_k * self.sqrt_k;
        let s2 = self.s * self.s;
        let b = self.bessel_coef * sr;
        let db = 2.0 * self.sqrt_k * sr / self.c * (1.0 - r * r) / s2;
        2.0 * self.nu_bar * r - 2.0 * r * self.inv_cs
            + 2.0 * r * (big_r - k) / (self.c * s2)
            + i1_over_i0(b) * db
    }

    /// `ln C` and `m` such that `g(R, r)^{1+ρ} ≤ (C/s) exp(−(√R − m)²/s)`.
    pub(crate) fn tail_envelope(&self) -> (f64, f64, f64) {
        (self.c * self.nu_bar_term(), self.mean, self.s)
    }

    fn nu_bar_term(&self) -> f64 {
        self.offset + self.s.ln() / self.c
    }
}

/// `ln g(R, r)` for general `ν̄`.
pub fn log_kernel_g(big_r: f64, r: f64, ep: &ExponentParams, cp: &ChannelParams) -> f64 {
    Kernel::new(r, ep.rho, ep.nu_bar, cp).ln(big_r)
}

/// `ln ĝ(R, r)`, the `ν̄ = 0` kernel.
pub fn log_kernel_g_hat(big_r: f64, r: f64, rho: f64, cp: &ChannelParams) -> f64 {
    Kernel::new(r, rho, 0.0, cp).ln(big_r)
}

/// Smallest `R_max` such that `∫_{R_max}^∞ g(R, r)^{1+ρ} dR ≤ tol` for a
/// kernel with the given envelope constants.
///
/// Uses `ln I₀(b) ≤ b`, which gives `g^{1+ρ} ≤ (C/s)·exp(−(√R − m)²/s)`, and
/// `erfc(t) ≤ e^{−t²}` on the resulting Gaussian tail in `√R`.
pub(crate) fn tail_cutoff(kernel: &Kernel, tol: f64) -> f64 {
    let (ln_c, m, s) = kernel.tail_envelope();
    let lead = ln_c + (1.0 + m * (std::f64::consts::PI / s).sqrt()).ln();
    let v0 = (s * (lead - tol.ln()).max(0.0)).sqrt();
    (m + v0).powi(2)
}

/// The bound on `∫_{R_max}^∞ g^{1+ρ} dR` implied by the envelope.
pub(crate) fn tail_bound(kernel: &Kernel, r_max: f64) -> f64 {
    let (ln_c, m, s) = kernel.tail_envelope();
    let v0 = r_max.sqrt() - m;
    if v0 <= 0.0 {
        return (ln_c.exp() * (1.0 + m * (std::f64::consts::PI / s).sqrt())).max(1.0);
    }
    (ln_c - v0 * v0 / s).exp() * (1.0 + m * (std::f64::consts::PI / s).sqrt())
}
