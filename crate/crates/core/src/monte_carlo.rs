//! Seeded Monte Carlo checks: output sampling, an importance-sampling
//! estimate of `T(F)`, and random-coding simulations with ML decoding.
//!
//! Work is split into fixed-size blocks. Block `b` draws from a ChaCha8
//! stream keyed by `(seed, b)`, so results do not depend on the thread count.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{log_conditional_density, validate_rho, ChannelParams, PhysicalParams};
use crate::distribution::DiscreteDistribution;
use crate::error::{invalid, Result};
use crate::functional::Mixture;

/// Samples per independent stream.
pub const BLOCK: usize = 1 << 14;
pub const MIN_T_SAMPLES: usize = 1000;
pub const MAX_BLOCK_LENGTH: usize = 64;
pub const MAX_CODEWORDS: usize = 1 << 16;
/// Fewer observed errors than this marks a coding estimate low-confidence.
pub const MIN_ERRORS: u64 = 10;

/// Generator for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub seed: u64,
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let u: f64 = StandardNormal.sample(rng);
    let v: f64 = StandardNormal.sample(rng);
    Complex64::new(u, v) * std::f64::consts::FRAC_1_SQRT_2
}

/// `R = |y|²` with `y ~ CN(√K r, 1 + r²)`.
pub fn sample_normalized_output<R: Rng + ?Sized>(r: f64, cp: &ChannelParams, rng: &mut R) -> f64 {
    let mean = cp.k_factor().sqrt() * r;
    let y = Complex64::new(mean, 0.0) + complex_normal(rng) * (1.0 + r * r).sqrt();
    y.norm_sqr()
}

fn check_dist(dist: &DiscreteDistribution) -> Result<()> {
    if dist.is_empty() {
        return Err(invalid("dist", "needs at least one mass point"));
    }
    Ok(())
}

/// Index `i` with probability `cum[i] − cum[i−1]`.
fn draw_index<R: Rng + ?Sized>(cum: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    cum.partition_point(|&c| c <= u).min(cum.len() - 1)
}

fn cumulative(dist: &DiscreteDistribution) -> Vec<f64> {
    dist.probabilities()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect()
}

/// Pairwise sum, independent of how the blocks were scheduled.
fn pairwise(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => pairwise(&v[..n / 2]) + pairwise(&v[n / 2..]),
    }
}

/// `T(F)` by sampling `R` from `m(R) = Σ pᵢ f(R|rᵢ)` and averaging
/// `(Σ pᵢ ĝ(R, rᵢ))^{1+ρ} / m(R)`.
pub fn estimate_t(
    dist: &DiscreteDistribution,
    rho: f64,
    cp: &ChannelParams,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    validate_rho(rho)?;
    check_dist(dist)?;
    if n_samples < MIN_T_SAMPLES {
        return Err(invalid("n_samples", format!("must be at least {MIN_T_SAMPLES}")));
    }
    let g = Mixture::new(dist, rho, 0.0, cp);
    let m = Mixture::new(dist, 0.0, 0.0, cp);
    let amps: Vec<f64> = dist.amplitudes().collect();
    let cum = cumulative(dist);
    let c = 1.0 + rho;
    let blocks = n_samples.div_ceil(BLOCK);
    let sums: Vec<(f64, f64)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, b as u64);
            let n = BLOCK.min(n_samples - b * BLOCK);
            let mut vals = Vec::with_capacity(n);
            for _ in 0..n {
                let r = amps[draw_index(&cum, &mut rng)];
                let big_r = sample_normalized_output(r, cp, &mut rng);
                vals.push((c * g.ln_at(big_r) - m.ln_at(big_r)).exp());
            }
            let sq: Vec<f64> = vals.iter().map(|v| v * v).collect();
            (pairwise(&vals), pairwise(&sq))
        })
        .collect();
    let n = n_samples as f64;
    let s1 = pairwise(&sums.iter().map(|s| s.0).collect::<Vec<_>>());
    let s2 = pairwise(&sums.iter().map(|s| s.1).collect::<Vec<_>>());
    let mean = s1 / n;
    let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(McEstimate {
        value: mean,
        std_error: (var / n).sqrt(),
        n_samples,
        seed,
    })
}

/// Random-coding experiment parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub block_length: usize,
    pub n_codewords: usize,
    pub n_trials: u64,
    /// Exponent `E` the error rate is compared against, nats.
    pub exponent: f64,
}

impl ExperimentSpec {
    /// Codebook size `max(2, round(e^{NR}))` for a rate in nats.
    pub fn codewords_for_rate(rate: f64, block_length: usize) -> Result<usize> {
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(invalid("rate", "must be finite and nonnegative"));
        }
        let m = (rate * block_length as f64).exp().round().max(2.0);
        if m > MAX_CODEWORDS as f64 {
            return Err(invalid("rate", format!("needs {m} codewords, more than {MAX_CODEWORDS}")));
        }
        Ok(m as usize)
    }

    pub fn rate(&self) -> f64 {
        (self.n_codewords as f64).ln() / self.block_length as f64
    }

    fn validate(&self) -> Result<()> {
        if self.block_length == 0 || self.block_length > MAX_BLOCK_LENGTH {
            return Err(invalid("block_length", format!("must lie in 1..={MAX_BLOCK_LENGTH}")));
        }
        if self.n_codewords < 2 || self.n_codewords > MAX_CODEWORDS {
            return Err(invalid("n_codewords", format!("must lie in 2..={MAX_CODEWORDS}")));
        }
        if self.n_trials == 0 {
            return Err(invalid("n_trials", "must be positive"));
        }
        if !(self.exponent >= 0.0) || !self.exponent.is_finite() {
            return Err(invalid("exponent", "must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodingExperiment {
    pub block_length: usize,
    /// Nats per symbol.
    pub rate: f64,
    pub n_codewords: usize,
    pub n_trials: u64,
    pub errors: u64,
    pub p_e: f64,
    pub std_error: f64,
    pub exponent: f64,
    /// `exp(−N·E)`.
    pub exponent_bound: f64,
    /// `P_e / exp(−N·E)`.
    pub ratio: f64,
    pub low_confidence: bool,
    pub seed: u64,
}

const TRIALS_PER_BLOCK: u64 = 4096;

/// Block error rate of ML decoding over random codebooks with i.i.d.
/// letters `r e^{jθ}`, `r ~ dist`, `θ` uniform. Codeword 0 is sent.
pub fn simulate_random_coding(
    spec: &ExperimentSpec,
    cp: &ChannelParams,
    dist: &DiscreteDistribution,
    seed: u64,
) -> Result<CodingExperiment> {
    spec.validate()?;
    check_dist(dist)?;
    let phys = PhysicalParams::new(cp.k_factor(), 1.0, 1.0, cp.alpha())?;
    let amps: Vec<f64> = dist.amplitudes().collect();
    let cum = cumulative(dist);
    let (n, m) = (spec.block_length, spec.n_codewords);
    let blocks = spec.n_trials.div_ceil(TRIALS_PER_BLOCK);
    let errors: u64 = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, b);
            let trials = TRIALS_PER_BLOCK.min(spec.n_trials - b * TRIALS_PER_BLOCK);
            let mut book = vec![Complex64::new(0.0, 0.0); n * m];
            let mut y = vec![Complex64::new(0.0, 0.0); n];
            let mut errs = 0u64;
            for _ in 0..trials {
                for x in book.iter_mut() {
                    let r = amps[draw_index(&cum, &mut rng)];
                    let theta = rng.random_range(0.0..std::f64::consts::TAU);
                    *x = Complex64::from_polar(r, theta);
                }
                for (yk, &xk) in y.iter_mut().zip(&book[..n]) {
                    let fade = Complex64::new(phys.d_mag_sq.sqrt(), 0.0) + complex_normal(&mut rng);
                    *yk = fade * xk + complex_normal(&mut rng);
                }
                let score = |w: usize| -> f64 {
                    book[w * n..(w + 1) * n]
                        .iter()
                        .zip(&y)
                        .map(|(&x, &yk)| log_conditional_density(yk, x, &phys))
                        .sum()
                };
                let sent = score(0);
                let mut ties = 0u32;
                let mut lost = false;
                for w in 1..m {
                    let s = score(w);
                    if s > sent {
                        lost = true;
                        break;
                    }
                    if s == sent {
                        ties += 1;
                    }
                }
                if !lost && ties > 0 {
                    lost = rng.random_range(0..=ties) != 0;
                }
                errs += lost as u64;
            }
            errs
        })
        .sum();
    let trials = spec.n_trials as f64;
    let p_e = errors as f64 / trials;
    let bound = (-(n as f64) * spec.exponent).exp();
    Ok(CodingExperiment {
        block_length: n,
        rate: spec.rate(),
        n_codewords: m,
        n_trials: spec.n_trials,
        errors,
        p_e,
        std_error: (p_e * (1.0 - p_e) / trials).sqrt(),
        exponent: spec.exponent,
        exponent_bound: bound,
        ratio: p_e / bound,
        low_confidence: errors < MIN_ERRORS,
        seed,
    })
}

/// Least-squares slope of `ln P_e` against `N`. `None` with fewer than two
/// experiments or any zero error count.
pub fn log_error_slope(runs: &[CodingExperiment]) -> Option<f64> {
    if runs.len() < 2 || runs.iter().any(|r| r.errors == 0) {
        return None;
    }
    let n = runs.len() as f64;
    let xs: Vec<f64> = runs.iter().map(|r| r.block_length as f64).collect();
    let ys: Vec<f64> = runs.iter().map(|r| r.p_e.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{log_kernel_g_hat, ExponentParams};
    use crate::functional::{objective_t, QuadratureConfig};
    use crate::quadrature::integrate_adaptive;
    use crate::special::bessel_i0;

    fn density(big_r: f64, r: f64, k: f64) -> f64 {
        let s = 1.0 + r * r;
        (-(big_r + k * r * r) / s).exp() * bessel_i0(2.0 * k.sqrt() * r * big_r.sqrt() / s).unwrap() / s
    }

    fn moments(r: f64, cp: &ChannelParams, n: usize, seed: u64) -> (f64, f64) {
        let mut rng = stream_rng(seed, 0);
        let xs: Vec<f64> = (0..n).map(|_| sample_normalized_output(r, cp, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (mean, var)
    }

    #[test]
    fn pure_noise_output_is_unit_exponential() {
        let cp = ChannelParams::new(2.0, 1.0).unwrap();
        let n = 1_000_000;
        let (mean, var) = moments(0.0, &cp, n, 7);
        assert!((mean - 1.0).abs() <= 3.0 * (var / n as f64).sqrt(), "{mean}");
        assert!((var - 1.0).abs() < 0.01);
    }

    #[test]
    fn output_mean_matches_moment_identity() {
        let n = 400_000;
        for &(k, r) in &[(2.0, 1.142), (0.5, 0.3), (0.0, 1.5)] {
            let cp = ChannelParams::new(k, 1.0).unwrap();
            let (mean, var) = moments(r, &cp, n, 9);
            let expect = 1.0 + r * r + k * r * r;
            assert!((mean - expect).abs() <= 3.0 * (var / n as f64).sqrt(), "K={k} r={r}: {mean}");
            if k == 0.0 {
                // exponential: variance is the squared mean
                assert!((var / (expect * expect) - 1.0).abs() < 0.02);
            }
        }
    }

    #[test]
    fn kernel_at_zero_rho_is_the_output_density() {
        for &k in &[0.0, 0.5, 2.0, 7.0] {
            let cp = ChannelParams::new(k, 1.0).unwrap();
            for &r in &[0.0, 0.6, 1.142, 2.5] {
                for &big_r in &[0.0, 0.3, 2.0, 9.0, 30.0] {
                    let f = density(big_r, r, k);
                    let g = log_kernel_g_hat(big_r, r, 0.0, &cp).exp();
                    assert!((f - g).abs() <= 1e-12 * f.max(1e-300), "{f} vs {g}");
                }
            }
        }
    }

    #[test]
    fn output_density_integrates_to_one() {
        for &k in &[0.0f64, 2.0] {
            for &r in &[0.0, 0.6, 1.142] {
                let hi = (k.sqrt() * r + 12.0 * (1.0 + r * r)).powi(2);
                let bp: Vec<f64> = (0..=40).map(|i| hi * i as f64 / 40.0).collect();
                let v = integrate_adaptive(|x| density(x, r, k), &bp, 1e-14, 1e-12, 4000).unwrap();
                assert!((v.value - 1.0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn point_mass_at_zero_is_exact() {
        let cp = ChannelParams::new(2.0, 1.0).unwrap();
        let d = DiscreteDistribution::single(0.0).unwrap();
        for &rho in &[0.0, 0.5, 1.0] {
            let e = estimate_t(&d, rho, &cp, 5000, 1).unwrap();
            assert!((e.value - 1.0).abs() < 1e-12 && e.std_error < 1e-12);
        }
    }

    #[test]
    fn estimate_agrees_with_quadrature() {
        let cp = ChannelParams::new(2.0, 1.0).unwrap();
        let d = DiscreteDistribution::new([(0.0, 0.234), (1.142, 0.766)]).unwrap();
        let ep = ExponentParams::new(1.0, 0.0).unwrap();
        let q = objective_t(&d, &ep, &cp, &QuadratureConfig::default()).unwrap().t_value;
        let e = estimate_t(&d, 1.0, &cp, 1_000_000, 2024).unwrap();
        assert!((e.value - q).abs() <= 3.0 * e.std_error, "{} ± {} vs {q}", e.value, e.std_error);
    }

    #[test]
    fn estimates_are_reproducible() {
        let cp = ChannelParams::new(1.0, 0.5).unwrap();
        let d = DiscreteDistribution::new([(0.2, 0.5), (1.0, 0.5)]).unwrap();
        let a = estimate_t(&d, 0.7, &cp, 50_000, 5).unwrap();
        let b = estimate_t(&d, 0.7, &cp, 50_000, 5).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
        let c = estimate_t(&d, 0.7, &cp, 50_000, 6).unwrap();
        assert_ne!(a.value, c.value);
        assert!(estimate_t(&d, 0.7, &cp, 999, 5).is_err());
    }

    #[test]
    fn standard_error_scales_like_inverse_root_n() {
        let cp = ChannelParams::new(2.0, 1.0).unwrap();
        let d = DiscreteDistribution::new([(0.0, 0.234), (1.142, 0.766)]).unwrap();
        let se: Vec<f64> = [10_000, 100_000, 1_000_000]
            .iter()
            .map(|&n| estimate_t(&d, 1.0, &cp, n, 77).unwrap().std_error)
            .collect();
        for w in se.windows(2) {
            let ratio = w[0] / w[1];
            assert!((ratio / 10f64.sqrt() - 1.0).abs() < 0.2, "ratio {ratio}");
        }
    }

    #[test]
    fn overloaded_code_almost_always_fails() {
        let cp = ChannelParams::new(2.0, 1.0).unwrap();
        let d = DiscreteDistribution::new([(0.0, 0.234), (1.142, 0.766)]).unwrap();
        let spec = ExperimentSpec {
            block_length: 2,
            n_codewords: 4096,
            n_trials: 200,
            exponent: 0.0,
        };
        let e = simulate_random_coding(&spec, &cp, &d, 3).unwrap();
        assert!(e.p_e > 0.9, "{}", e.p_e);
        assert_eq!(e.rate, 4096f64.ln() / 2.0);
    }

    #[test]
    fn coding_runs_are_reproducible_and_validated() {
        let cp = ChannelParams::new(2.0, 1.0).unwrap();
        let d = DiscreteDistribution::new([(0.0, 0.234), (1.142, 0.766)]).unwrap();
        let spec = ExperimentSpec {
            block_length: 8,
            n_codewords: 2,
            n_trials: 20_000,
            exponent: 0.45,
        };
        let a = simulate_random_coding(&spec, &cp, &d, 11).unwrap();
        let b = simulate_random_coding(&spec, &cp, &d, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.p_e > 0.0 && a.p_e < 0.2);
        assert!(!a.low_confidence);
        let bad = ExperimentSpec { n_trials: 0, ..spec };
        assert!(simulate_random_coding(&bad, &cp, &d, 1).is_err());
        let bad = ExperimentSpec { block_length: 65, ..spec };
        assert!(simulate_random_coding(&bad, &cp, &d, 1).is_err());
        assert!(ExperimentSpec::codewords_for_rate(10.0, 64).is_err());
        assert_eq!(ExperimentSpec::codewords_for_rate(0.0, 8).unwrap(), 2);
    }

    #[test]
    fn identical_codewords_fail_by_coin_toss() {
        let cp = ChannelParams::new(2.0, 1.0).unwrap();
        let d = DiscreteDistribution::single(0.0).unwrap();
        let spec = ExperimentSpec {
            block_length: 4,
            n_codewords: 2,
            n_trials: 40_000,
            exponent: 0.0,
        };
        let e = simulate_random_coding(&spec, &cp, &d, 8).unwrap();
        assert!((e.p_e - 0.5).abs() < 4.0 * e.std_error);
    }

    #[test]
    fn slope_of_exact_exponentials() {
        let mk = |n: usize, p: f64| CodingExperiment {
            block_length: n,
            rate: 0.0,
            n_codewords: 2,
            n_trials: 1,
            errors: 1,
            p_e: p,
            std_error: 0.0,
            exponent: 0.0,
            exponent_bound: 1.0,
            ratio: p,
            low_confidence: false,
            seed: 0,
        };
        let runs = [mk(4, (-2.0f64).exp()), mk(8, (-4.0f64).exp()), mk(16, (-8.0f64).exp())];
        assert!((log_error_slope(&runs).unwrap() + 0.5).abs() < 1e-12);
        assert!(log_error_slope(&runs[..1]).is_none());
    }
}
