//! Minimization of `T(F)` over discrete amplitude distributions, cutoff
//! rates and random-coding exponents.
//!
//! The outer loop alternates three steps until the Kuhn–Tucker sweep
//! certifies the candidate:
//!
//! 1. weights at fixed support (damped Newton, each step an exact QP over
//!    the simplex and the power constraint),
//! 2. joint Newton steps on the mass locations,
//! 3. a new mass point at the minimizer of `Φ` when `Φ` dips below zero.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::channel::{tail_cutoff, validate_rho, ChannelParams, ExponentParams, Kernel};
use crate::distribution::DiscreteDistribution;
use crate::error::{invalid, Error, Result};
use crate::functional::{check_peak, node_rule, objective_t, QuadratureConfig};
use crate::kkt::{kkt_report, log_grid, residual_from, GridSpec, KktOptions, KktReport, PhiEvaluator, DEFAULT_R_CAP};

const MAX_NEWTON: usize = 80;
const MAX_LOCATION_PASSES: usize = 40;
const MERGE_DIST: f64 = 1e-4;
const NEW_POINT_WEIGHT: f64 = 0.02;
const RHO_TRIVIAL: f64 = 1e-12;
const CURVATURE_CAP: f64 = 1e3;
const CONSOLIDATE_GAP: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub max_mass_points: usize,
    pub weight_tol: f64,
    pub location_tol: f64,
    pub kkt_tol: f64,
    pub max_outer_iters: usize,
    pub rho_search_tol: f64,
    pub seed: Option<DiscreteDistribution>,
    pub quadrature: QuadratureConfig,
    pub sweep_points: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_mass_points: 8,
            weight_tol: 1e-9,
            location_tol: 1e-7,
            kkt_tol: 1e-6,
            max_outer_iters: 40,
            rho_search_tol: 1e-4,
            seed: None,
            quadrature: QuadratureConfig::default(),
            sweep_points: 400,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_mass_points == 0 {
            return Err(invalid("max_mass_points", "must be at least 1"));
        }
        for (name, v) in [
            ("weight_tol", self.weight_tol),
            ("location_tol", self.location_tol),
            ("kkt_tol", self.kkt_tol),
            ("rho_search_tol", self.rho_search_tol),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(name, "must be positive"));
            }
        }
        if self.sweep_points < 2 {
            return Err(invalid("sweep_points", "must be at least 2"));
        }
        self.quadrature.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentResult {
    pub rho: f64,
    pub dist: DiscreteDistribution,
    pub t_value: f64,
    /// `−ln T`, nats.
    pub e0: f64,
    pub lambda: f64,
    pub nu_bar: f64,
    pub kkt: KktReport,
    pub converged: bool,
    pub iterations: usize,
}

/// Solution of the fixed-support weight problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSolution {
    /// Weights aligned with the input locations.
    pub weights: Vec<f64>,
    /// The same solution with zero-weight points removed.
    pub dist: DiscreteDistribution,
    /// Multiplier of the power constraint.
    pub lambda: f64,
    pub t_value: f64,
}

/// `ln g(R_k, rᵢ)` on a shared rule.
struct Table {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    lg: Vec<Vec<f64>>,
    kernels: Vec<Kernel>,
    r: Vec<f64>,
    rho: f64,
}

impl Table {
    fn new(r: &[f64], rho: f64, nu_bar: f64, cp: &ChannelParams, qc: &QuadratureConfig, r_top: f64) -> Self {
        let top = qc.r_max_hint.unwrap_or_else(|| {
            tail_cutoff(&Kernel::new(r_top, rho, nu_bar, cp), 0.5 * qc.abs_tol)
        });
        let rule = node_rule(top);
        let kernels: Vec<Kernel> = r.iter().map(|&ri| Kernel::new(ri, rho, nu_bar, cp)).collect();
        let lg = kernels.iter().map(|k| row(&rule.nodes, k)).collect();
        Self {
            nodes: rule.nodes,
            weights: rule.weights,
            lg,
            kernels,
            r: r.to_vec(),
            rho,
        }
    }

    fn ln_m(&self, p: &[f64]) -> Vec<f64> {
        let active: Vec<(f64, &Vec<f64>)> = p
            .iter()
            .zip(&self.lg)
            .filter(|(pi, _)| **pi > 0.0)
            .map(|(pi, l)| (pi.ln(), l))
            .collect();
        (0..self.nodes.len())
            .map(|k| {
                let max = active
                    .iter()
                    .map(|(lp, l)| lp + l[k])
                    .fold(f64::NEG_INFINITY, f64::max);
                max + active
                    .iter()
                    .map(|(lp, l)| (lp + l[k] - max).exp())
                    .sum::<f64>()
                    .ln()
            })
            .collect()
    }

    fn t(&self, ln_m: &[f64]) -> f64 {
        let c = 1.0 + self.rho;
        self.weights
            .iter()
            .zip(ln_m)
            .map(|(w, l)| w * (c * l).exp())
            .sum()
    }

    /// `∂T/∂pᵢ = (1+ρ) ∫ M^ρ gᵢ dR`.
    fn grad(&self, ln_m: &[f64]) -> Vec<f64> {
        let c = 1.0 + self.rho;
        self.lg
            .iter()
            .map(|l| {
                c * self
                    .weights
                    .iter()
                    .zip(ln_m)
                    .zip(l)
                    .map(|((w, m), g)| w * (self.rho * m + g).exp())
                    .sum::<f64>()
            })
            .collect()
    }

    /// `∫ M^ρ ∂g(R, rᵢ)/∂rᵢ dR`.
    fn first_derivative(&self, ln_m: &[f64], i: usize) -> f64 {
        let k = &self.kernels[i];
        self.weights
            .iter()
            .zip(ln_m)
            .zip(&self.nodes)
            .zip(&self.lg[i])
            .map(|(((w, m), &x), g)| {
                let v = w * (self.rho * m + g).exp();
                if v == 0.0 {
                    0.0
                } else {
                    v * k.d_ln_dr(x)
                }
            })
            .sum()
    }

    /// `∂²T/∂pᵢ∂pⱼ = (1+ρ)ρ ∫ M^{ρ−1} gᵢ gⱼ dR`.
    fn hess(&self, ln_m: &[f64]) -> Vec<Vec<f64>> {
        let n = self.lg.len();
        let scale = (1.0 + self.rho) * self.rho;
        let mut h = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i..n {
                let v: f64 = self
                    .weights
                    .iter()
                    .zip(ln_m)
                    .enumerate()
                    .map(|(k, (w, m))| w * ((self.rho - 1.0) * m + self.lg[i][k] + self.lg[j][k]).exp())
                    .sum();
                h[i][j] = scale * v;
                h[j][i] = scale * v;
            }
        }
        h
    }
}

fn row(nodes: &[f64], k: &Kernel) -> Vec<f64> {
    nodes.iter().map(|&x| k.ln(x)).collect()
}

/// Dense solve with partial pivoting.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let norm = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |m, x| m.max(x.abs()));
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-13 * norm {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// `min bᵀq + ½qᵀHq` over `Σq = 1, q ≥ 0` and `aᵀq ≤ 0` (or `= 0`).
/// Every face is solved exactly; the best feasible face minimizer wins.
/// Returns the minimizer and the power multiplier.
fn simplex_qp(h: &[Vec<f64>], b: &[f64], a: &[f64], equality: bool) -> Option<(Vec<f64>, f64)> {
    let n = b.len();
    let a_scale = a.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let feas = 1e-11 * a_scale;
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    for mask in 1u32..(1u32 << n) {
        let free: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        let nf = free.len();
        for active in [false, true] {
            let m = nf + 1 + usize::from(active);
            let mut mat = vec![vec![0.0; m]; m];
            let mut rhs = vec![0.0; m];
            for (ri, &i) in free.iter().enumerate() {
                for (ci, &j) in free.iter().enumerate() {
                    mat[ri][ci] = h[i][j];
                }
                mat[ri][nf] = -1.0;
                if active {
                    mat[ri][nf + 1] = a[i];
                }
                rhs[ri] = -b[i];
            }
            for ci in 0..nf {
                mat[nf][ci] = 1.0;
            }
            rhs[nf] = 1.0;
            if active {
                for (ci, &i) in free.iter().enumerate() {
                    mat[nf + 1][ci] = a[i];
                }
            }
            let Some(x) = solve_linear(mat, rhs) else {
                continue;
            };
            let mut q = vec![0.0; n];
            let mut ok = true;
            for (ci, &i) in free.iter().enumerate() {
                if x[ci] < -1e-12 {
                    ok = false;
                    break;
                }
                q[i] = x[ci].max(0.0);
            }
            if !ok {
                continue;
            }
            let s: f64 = q.iter().sum();
            q.iter_mut().for_each(|v| *v /= s);
            let power: f64 = q.iter().zip(a).map(|(qi, ai)| qi * ai).sum();
            if power > feas || (equality && power < -feas) {
                continue;
            }
            let mu = if active { x[nf + 1] } else { 0.0 };
            let obj: f64 = (0..n)
                .map(|i| q[i] * (b[i] + 0.5 * (0..n).map(|j| h[i][j] * q[j]).sum::<f64>()))
                .sum();
            let better = match &best {
                None => true,
                Some((bo, _, _)) => obj < bo - 1e-14 * bo.abs().max(1e-300),
            };
            if better {
                best = Some((obj, q, mu));
            }
        }
    }
    best.map(|(_, q, mu)| (q, mu))
}

/// For `ρ < 1` the curvature in the direction of a point with vanishing
/// weight is unbounded. Rows and columns whose diagonal exceeds
/// `CURVATURE_CAP` times the largest diagonal among well-supported points
/// are scaled down symmetrically, which keeps `H` positive semidefinite.
fn cap_curvature(h: &mut [Vec<f64>], p: &[f64]) {
    let n = p.len();
    let reference = (0..n)
        .filter(|&i| p[i] >= 1e-3)
        .map(|i| h[i][i])
        .fold(0.0f64, f64::max);
    if !(reference > 0.0) {
        return;
    }
    let cap = CURVATURE_CAP * reference;
    let s: Vec<f64> = (0..n)
        .map(|i| if h[i][i] > cap { (cap / h[i][i]).sqrt() } else { 1.0 })
        .collect();
    for i in 0..n {
        for j in 0..n {
            h[i][j] *= s[i] * s[j];
        }
    }
}

struct WeightOutcome {
    p: Vec<f64>,
    mu: f64,
    t: f64,
}

fn power_ok(p: &[f64], a: &[f64], equality: bool) -> bool {
    let scale = a.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let v: f64 = p.iter().zip(a).map(|(x, y)| x * y).sum();
    v <= 1e-11 * scale && (!equality || v >= -1e-11 * scale)
}

fn solve_weights(tab: &Table, a: &[f64], p0: &[f64], equality: bool, tol: f64) -> Result<WeightOutcome> {
    let n = a.len();
    let mut p = p0.to_vec();
    let mut mu = 0.0;
    let mut ln_m = tab.ln_m(&p);
    for _ in 0..MAX_NEWTON {
        let g = tab.grad(&ln_m);
        let mut h = tab.hess(&ln_m);
        cap_curvature(&mut h, &p);
        let diag = (0..n).map(|i| h[i][i]).fold(0.0f64, f64::max);
        for (i, hr) in h.iter_mut().enumerate() {
            hr[i] += 1e-13 * diag + 1e-300;
        }
        let b: Vec<f64> = (0..n)
            .map(|i| g[i] - (0..n).map(|j| h[i][j] * p[j]).sum::<f64>())
            .collect();
        let (q, m) = simplex_qp(&h, &b, a, equality)
            .ok_or_else(|| Error::Infeasible("no mass point satisfies the power constraint".into()))?;
        mu = m;
        let d: Vec<f64> = q.iter().zip(&p).map(|(x, y)| x - y).collect();
        let step = d.iter().fold(0.0f64, |s, x| s.max(x.abs()));
        if !power_ok(&p, a, equality) || step < tol {
            p = q;
            ln_m = tab.ln_m(&p);
            if step < tol {
                break;
            }
            continue;
        }
        let dec = -g.iter().zip(&d).map(|(x, y)| x * y).sum::<f64>();
        let t0 = tab.t(&ln_m);
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = if t == 1.0 {
                q.clone()
            } else {
                p.iter().zip(&d).map(|(x, y)| x + t * y).collect()
            };
            let lm = tab.ln_m(&trial);
            if tab.t(&lm) <= t0 - 1e-4 * t * dec.max(0.0) || t < 1e-10 {
                p = trial;
                ln_m = lm;
                break;
            }
            t *= 0.5;
        }
        if t < 1e-10 {
            break;
        }
    }
    let t = tab.t(&ln_m);
    // With every supported point on r² = α the weights leave μ free; take
    // it from Φ'(rᵢ) = 0 instead.
    let a_scale = 1e-9 * a.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let support: Vec<usize> = (0..n).filter(|&i| p[i] > 0.0).collect();
    if support.iter().all(|&i| a[i].abs() <= a_scale) {
        let c = 1.0 + tab.rho;
        let (mut num, mut den) = (0.0, 0.0);
        for &i in support.iter().filter(|&&i| tab.r[i] > 0.0) {
            let w = 2.0 * tab.r[i] / c;
            num += w * tab.first_derivative(&ln_m, i);
            den += w * w;
        }
        if den > 0.0 {
            mu = -num / den;
        }
    }
    Ok(WeightOutcome { p, mu, t })
}

/// Minimizes `T` over the weights of a fixed set of locations under
/// `Σ pᵢ rᵢ² ≤ α`.
pub fn optimize_weights(
    locations: &[f64],
    rho: f64,
    nu_bar: f64,
    cp: &ChannelParams,
    qc: &QuadratureConfig,
) -> Result<WeightSolution> {
    validate_rho(rho)?;
    qc.validate()?;
    if locations.is_empty() || locations.len() > 16 {
        return Err(invalid("locations", "need between 1 and 16 points"));
    }
    if !(nu_bar >= 0.0) || !nu_bar.is_finite() {
        return Err(invalid("nu_bar", "must be finite and nonnegative"));
    }
    for (i, &r) in locations.iter().enumerate() {
        if !(r >= 0.0) || !r.is_finite() {
            return Err(Error::Domain(format!("location {r} is not a valid amplitude")));
        }
        if locations[..i].contains(&r) {
            return Err(invalid("locations", "must be distinct"));
        }
    }
    let probe = DiscreteDistribution::normalized(locations.iter().map(|&r| (r, 1.0)))?;
    check_peak(&probe, cp)?;
    let alpha = cp.alpha();
    let a: Vec<f64> = locations.iter().map(|r| r * r - alpha).collect();
    let n = locations.len();
    let r_top = locations.iter().copied().fold(0.0, f64::max);
    let tab = Table::new(locations, rho, nu_bar, cp, qc, r_top);
    let p0 = vec![1.0 / n as f64; n];
    let out = solve_weights(&tab, &a, &p0, false, 1e-12)?;
    let dist = DiscreteDistribution::normalized(
        locations.iter().copied().zip(out.p.iter().copied()),
    )?;
    Ok(WeightSolution {
        weights: out.p,
        dist,
        lambda: out.mu.max(0.0),
        t_value: out.t,
    })
}

#[derive(Debug, Clone)]
struct Support {
    r: Vec<f64>,
    p: Vec<f64>,
}

impl Support {
    fn from_dist(d: &DiscreteDistribution) -> Self {
        Self {
            r: d.amplitudes().collect(),
            p: d.probabilities().collect(),
        }
    }

    fn prune_and_merge(&mut self) {
        let mut pts: Vec<(f64, f64)> = self
            .r
            .iter()
            .copied()
            .zip(self.p.iter().copied())
            .filter(|(_, p)| *p > 0.0)
            .map(|(r, p)| (if r < 1e-9 { 0.0 } else { r }, p))
            .collect();
        pts.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
        for (r, p) in pts {
            match out.last_mut() {
                Some(last) if r - last.0 < MERGE_DIST => {
                    let w = last.1 + p;
                    // keep an exact zero amplitude in place
                    last.0 = if last.0 == 0.0 { 0.0 } else { (last.0 * last.1 + r * p) / w };
                    last.1 = w;
                }
                _ => out.push((r, p)),
            }
        }
        let s: f64 = out.iter().map(|x| x.1).sum();
        self.r = out.iter().map(|x| x.0).collect();
        self.p = out.iter().map(|x| x.1 / s).collect();
    }

    fn to_dist(&self) -> Result<DiscreteDistribution> {
        DiscreteDistribution::normalized(self.r.iter().copied().zip(self.p.iter().copied()))
    }
}

struct Problem<'a> {
    rho: f64,
    nu_bar: f64,
    cp: &'a ChannelParams,
    cfg: &'a OptimizerConfig,
    equality: bool,
}

struct Inner {
    support: Support,
    mu: f64,
    converged: bool,
    iterations: usize,
}

impl Problem<'_> {
    fn alpha(&self) -> f64 {
        self.cp.alpha()
    }

    /// Whether some weights on `r` can meet the power constraint.
    fn feasible(&self, r: &[f64]) -> bool {
        let a = self.powers(r);
        let lo = a.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let eps = 1e-12 * (1.0 + self.alpha());
        lo <= eps && (!self.equality || hi >= -eps)
    }

    fn powers(&self, r: &[f64]) -> Vec<f64> {
        r.iter().map(|x| x * x - self.alpha()).collect()
    }

    fn weights(&self, sup: &mut Support) -> Result<f64> {
        let a = self.powers(&sup.r);
        let r_top = sup.r.iter().copied().fold(0.0, f64::max);
        let tab = Table::new(&sup.r, self.rho, self.nu_bar, self.cp, &self.cfg.quadrature, r_top);
        let out = solve_weights(&tab, &a, &sup.p, self.equality, self.cfg.weight_tol)?;
        sup.p = out.p;
        sup.prune_and_merge();
        Ok(out.mu)
    }

    /// One damped Newton step on all locations for the Lagrangian
    /// `T + μ Σ pᵢ rᵢ²` at fixed weights. Returns the largest move.
    fn locations(&self, sup: &mut Support, mu: f64) -> f64 {
        let n = sup.r.len();
        let peak = self.cp.peak_amplitude().unwrap_or(f64::INFINITY);
        let r_top = sup.r.iter().copied().fold(0.0, f64::max) + 1.0;
        let mut tab = Table::new(&sup.r, self.rho, self.nu_bar, self.cp, &self.cfg.quadrature, r_top);
        let kernels: Vec<Kernel> = sup
            .r
            .iter()
            .map(|&r| Kernel::new(r, self.rho, self.nu_bar, self.cp))
            .collect();
        let lagr = |tab: &Table, r: &[f64]| -> f64 {
            tab.t(&tab.ln_m(&sup.p))
                + mu * sup.p.iter().zip(r).map(|(p, x)| p * x * x).sum::<f64>()
        };
        let ln_m = tab.ln_m(&sup.p);
        let l0 = lagr(&tab, &sup.r);
        let mut steps = vec![0.0; n];
        let mut dec = 0.0;
        for i in 0..n {
            if sup.r[i] == 0.0 {
                continue;
            }
            let g0 = location_grad(&tab, &ln_m, i, &kernels[i], sup.p[i], sup.r[i], mu, self.rho);
            let h = 1e-6 * sup.r[i].max(1.0);
            let kh = Kernel::new(sup.r[i] + h, self.rho, self.nu_bar, self.cp);
            let saved = std::mem::replace(&mut tab.lg[i], row(&tab.nodes, &kh));
            let ln_mh = tab.ln_m(&sup.p);
            let g1 = location_grad(&tab, &ln_mh, i, &kh, sup.p[i], sup.r[i] + h, mu, self.rho);
            tab.lg[i] = saved;
            let curv = (g1 - g0) / h;
            let mut s = if curv > 0.0 { -g0 / curv } else { -0.1 * g0.signum() };
            s = s.clamp(-0.5, 0.5);
            if sup.r[i] + s < 0.0 {
                s = -sup.r[i];
            }
            if sup.r[i] + s > peak - 1e-9 * peak.max(1.0) && s > 0.0 {
                s = peak - sup.r[i];
            }
            steps[i] = s;
            dec -= g0 * s;
        }
        if dec <= 0.0 || steps.iter().all(|s| *s == 0.0) {
            return 0.0;
        }
        let mut t = 1.0;
        while t > 1e-8 {
            let trial: Vec<f64> = sup.r.iter().zip(&steps).map(|(r, s)| r + t * s).collect();
            if !self.feasible(&trial) {
                t *= 0.5;
                continue;
            }
            for (i, &r) in trial.iter().enumerate() {
                tab.lg[i] = row(&tab.nodes, &Kernel::new(r, self.rho, self.nu_bar, self.cp));
            }
            if lagr(&tab, &trial) <= l0 - 1e-4 * t * dec {
                let moved = steps.iter().fold(0.0f64, |m, s| m.max((t * s).abs()));
                sup.r = trial;
                return moved;
            }
            t *= 0.5;
        }
        0.0
    }

    fn sweep_hi(&self, sup: &Support, mu: f64, t: f64) -> f64 {
        if let Some(p) = self.cp.peak_amplitude() {
            return p;
        }
        let alpha = self.alpha();
        let base = (3.0 * alpha.sqrt()).max(2.0 * sup.r.iter().copied().fold(0.0, f64::max));
        let safe = if mu > 0.0 {
            (alpha + (1.0 + self.rho) * t / mu).sqrt()
        } else {
            f64::INFINITY
        };
        base.max(safe.min(DEFAULT_R_CAP))
    }

    /// Local minima of `Φ` (multiplier `mu`) below `−threshold` on the
    /// sweep grid, each refined by golden-section search, most negative
    /// first. Also returns the global minimum value.
    fn violations(&self, sup: &Support, mu: f64, threshold: f64) -> (Vec<f64>, f64) {
        let qc = &self.cfg.quadrature;
        let probe = PhiEvaluator::new(&sup.r, &sup.p, self.rho, self.nu_bar, self.cp, qc, 0.0);
        let hi = self.sweep_hi(sup, mu, probe.t_value);
        let ev = PhiEvaluator::new(&sup.r, &sup.p, self.rho, self.nu_bar, self.cp, qc, hi);
        let grid = log_grid(self.cfg.sweep_points, hi);
        let vals: Vec<f64> = grid.iter().map(|&r| ev.phi(r, mu)).collect();
        let n = grid.len();
        let mut found: Vec<(f64, f64)> = Vec::new();
        for k in 0..n {
            let left = k == 0 || vals[k] <= vals[k - 1];
            let right = k + 1 == n || vals[k] <= vals[k + 1];
            if !(left && right) || vals[k] >= -threshold {
                continue;
            }
            let lo = if k == 0 { 0.0 } else { grid[k - 1] };
            let up = if k + 1 < n { grid[k + 1] } else { grid[k] };
            let (r, v) = golden_min(|r| ev.phi(r, mu), lo, up, 1e-10);
            found.push(if v < vals[k] { (r, v) } else { (grid[k], vals[k]) });
        }
        found.sort_by(|x, y| x.1.total_cmp(&y.1));
        let min = found.first().map_or(vals.iter().copied().fold(f64::INFINITY, f64::min), |f| f.1);
        (found.into_iter().map(|f| f.0).collect(), min)
    }

    /// `∂T/∂ν̄` at the current support.
    fn residual(&self, sup: &Support) -> Result<f64> {
        let dist = sup.to_dist()?;
        let ev = PhiEvaluator::from_dist(&dist, self.rho, self.nu_bar, self.cp, &self.cfg.quadrature, dist.max_amplitude());
        Ok(residual_from(&ev, &dist))
    }

    fn polish(&self, sup: &mut Support) -> Result<f64> {
        let mut mu = self.weights(sup)?;
        for _ in 0..MAX_LOCATION_PASSES {
            let moved = match self.joint_step(sup, mu) {
                Some((moved, m)) => {
                    mu = m;
                    moved
                }
                None => {
                    let moved = self.locations(sup, mu);
                    mu = self.weights(sup)?;
                    moved
                }
            };
            if moved < self.cfg.location_tol {
                break;
            }
        }
        Ok(mu)
    }

    /// Newton step on weights and free locations together, constrained to
    /// `Σp = 1` and, when active, the power line. The weights are re-solved
    /// after the step, which is kept only if `T` does not increase.
    /// Returns the largest location move and the new multiplier.
    fn joint_step(&self, sup: &mut Support, mu: f64) -> Option<(f64, f64)> {
        let n = sup.r.len();
        let peak = self.cp.peak_amplitude().unwrap_or(f64::INFINITY);
        let free: Vec<usize> = (0..n)
            .filter(|&i| sup.r[i] > 0.0 && (peak.is_infinite() || sup.r[i] < peak - 1e-9 * peak.max(1.0)))
            .collect();
        if free.is_empty() || sup.p.iter().any(|&p| p < 1e-8) {
            return None;
        }
        let m = free.len();
        let nv = n + m;
        let r_top = sup.r.iter().copied().fold(0.0, f64::max) + 1.0;
        let mut tab = Table::new(&sup.r, self.rho, self.nu_bar, self.cp, &self.cfg.quadrature, r_top);
        let p = &sup.p;
        let grad = |tab: &Table, i: usize, ki: &Kernel, ri: f64| -> Vec<f64> {
            let ln_m = tab.ln_m(p);
            let mut g = tab.grad(&ln_m);
            for &j in &free {
                let (kj, rj) = if j == i {
                    (*ki, ri)
                } else {
                    (Kernel::new(sup.r[j], self.rho, self.nu_bar, self.cp), sup.r[j])
                };
                g.push(location_grad(tab, &ln_m, j, &kj, p[j], rj, 0.0, self.rho));
            }
            g
        };
        let k0 = Kernel::new(sup.r[free[0]], self.rho, self.nu_bar, self.cp);
        let g0 = grad(&tab, free[0], &k0, sup.r[free[0]]);
        let mut w = vec![vec![0.0; nv]; nv];
        let hpp = tab.hess(&tab.ln_m(p));
        for i in 0..n {
            w[i][..n].copy_from_slice(&hpp[i]);
        }
        for (q, &i) in free.iter().enumerate() {
            let ri = sup.r[i];
            let h = 1e-5 * ri.max(1.0);
            let lo = (ri - h).max(0.0);
            let hi = ri + h;
            let mut eval = |x: f64| {
                let k = Kernel::new(x, self.rho, self.nu_bar, self.cp);
                let saved = std::mem::replace(&mut tab.lg[i], row(&tab.nodes, &k));
                let g = grad(&tab, i, &k, x);
                tab.lg[i] = saved;
                g
            };
            let (gh, gl) = (eval(hi), eval(lo));
            for v in 0..nv {
                w[v][n + q] = (gh[v] - gl[v]) / (hi - lo);
            }
        }
        for (q, &i) in free.iter().enumerate() {
            for v in 0..n {
                w[n + q][v] = w[v][n + q];
            }
            for (u, _) in free.iter().enumerate().skip(q + 1) {
                let avg = 0.5 * (w[n + q][n + u] + w[n + u][n + q]);
                w[n + q][n + u] = avg;
                w[n + u][n + q] = avg;
            }
            w[i][n + q] += 2.0 * mu * sup.r[i];
            w[n + q][i] += 2.0 * mu * sup.r[i];
            w[n + q][n + q] += 2.0 * mu * p[i];
        }
        let a = self.powers(&sup.r);
        let mut rows = vec![(
            (0..nv).map(|v| if v < n { 1.0 } else { 0.0 }).collect::<Vec<f64>>(),
            p.iter().sum::<f64>() - 1.0,
        )];
        let power_row = (
            (0..n)
                .map(|i| a[i])
                .chain(free.iter().map(|&i| 2.0 * p[i] * sup.r[i]))
                .collect::<Vec<f64>>(),
            p.iter().zip(&a).map(|(p, a)| p * a).sum::<f64>(),
        );
        let solve = |rows: &[(Vec<f64>, f64)]| -> Option<Vec<f64>> {
            let k = rows.len();
            let mut mat = vec![vec![0.0; nv + k]; nv + k];
            let mut rhs = vec![0.0; nv + k];
            for v in 0..nv {
                mat[v][..nv].copy_from_slice(&w[v]);
                rhs[v] = -g0[v];
            }
            for (c, (row, val)) in rows.iter().enumerate() {
                for v in 0..nv {
                    mat[nv + c][v] = row[v];
                    mat[v][nv + c] = row[v];
                }
                rhs[nv + c] = -val;
            }
            solve_linear(mat, rhs)
        };
        let sol = if self.equality || mu > 0.0 {
            rows.push(power_row);
            let sol = solve(&rows)?;
            if !self.equality && sol[nv + 1] < 0.0 {
                rows.pop();
                solve(&rows)?
            } else {
                sol
            }
        } else {
            solve(&rows)?
        };
        let d = &sol[..nv];
        let curv: f64 = (0..nv).map(|u| d[u] * (0..nv).map(|v| w[u][v] * d[v]).sum::<f64>()).sum();
        if curv.is_nan() || curv <= 0.0 {
            return None;
        }
        let mut tau: f64 = 1.0;
        for i in 0..n {
            if d[i] < 0.0 {
                tau = tau.min(-p[i] / d[i]);
            }
        }
        for (q, &i) in free.iter().enumerate() {
            let s = d[n + q];
            tau = tau.min(0.5 / s.abs().max(1e-300));
            if s < 0.0 {
                tau = tau.min(-sup.r[i] / s);
            } else if s > 0.0 && peak.is_finite() {
                tau = tau.min((peak - sup.r[i]) / s);
            }
        }
        let t0 = self.t_of(sup);
        for _ in 0..8 {
            let mut trial = sup.clone();
            for i in 0..n {
                trial.p[i] = (p[i] + tau * d[i]).max(0.0);
            }
            for (q, &i) in free.iter().enumerate() {
                trial.r[i] = (sup.r[i] + tau * d[n + q]).clamp(0.0, peak);
            }
            if self.feasible(&trial.r) {
                if let Ok(m) = self.weights(&mut trial) {
                    if self.t_of(&trial) <= t0 + 1e-14 * t0 {
                        let moved = free.iter().enumerate().fold(0.0f64, |x, (q, _)| x.max((tau * d[n + q]).abs()));
                        *sup = trial;
                        return Some((moved, m));
                    }
                }
            }
            tau *= 0.5;
        }
        None
    }

    fn t_of(&self, sup: &Support) -> f64 {
        let r_top = sup.r.iter().copied().fold(0.0, f64::max);
        let tab = Table::new(&sup.r, self.rho, self.nu_bar, self.cp, &self.cfg.quadrature, r_top);
        tab.t(&tab.ln_m(&sup.p))
    }

    /// Replaces adjacent points closer than `CONSOLIDATE_GAP` by one point
    /// with the same power, keeping the merge when the re-polished `T` does
    /// not increase.
    fn consolidate(&self, sup: &mut Support, mu: &mut f64) -> Result<()> {
        let mut t = self.t_of(sup);
        let mut k = 0;
        while k + 1 < sup.r.len() {
            let (r0, r1) = (sup.r[k], sup.r[k + 1]);
            if r1 - r0 >= CONSOLIDATE_GAP {
                k += 1;
                continue;
            }
            let (p0, p1) = (sup.p[k], sup.p[k + 1]);
            let mut trial = sup.clone();
            trial.r[k] = if r0 == 0.0 {
                0.0
            } else {
                ((p0 * r0 * r0 + p1 * r1 * r1) / (p0 + p1)).sqrt()
            };
            trial.p[k] = p0 + p1;
            trial.r.remove(k + 1);
            trial.p.remove(k + 1);
            let m = self.polish(&mut trial)?;
            let tt = self.t_of(&trial);
            if tt <= t + 1e-15 * t {
                *sup = trial;
                *mu = m;
                t = tt;
            } else {
                k += 1;
            }
        }
        Ok(())
    }

    fn solve(&self, start: Support) -> Result<Inner> {
        let mut sup = start;
        let mut mu = self.polish(&mut sup)?;
        self.consolidate(&mut sup, &mut mu)?;
        let mut iterations = 0;
        let mut converged = false;
        let threshold = 0.01 * self.cfg.kkt_tol;
        while iterations < self.cfg.max_outer_iters {
            iterations += 1;
            let (new_points, _) = self.violations(&sup, mu, threshold);
            if new_points.is_empty() {
                converged = true;
                break;
            }
            let room = self.cfg.max_mass_points.saturating_sub(sup.r.len());
            let fresh: Vec<f64> = new_points
                .into_iter()
                .filter(|&r| sup.r.iter().all(|&x| (x - r).abs() >= MERGE_DIST))
                .take(room)
                .collect();
            if fresh.is_empty() {
                break;
            }
            let keep = 1.0 - NEW_POINT_WEIGHT * fresh.len() as f64;
            sup.p.iter_mut().for_each(|p| *p *= keep);
            for r in fresh {
                sup.r.push(r);
                sup.p.push(NEW_POINT_WEIGHT);
            }
            mu = self.polish(&mut sup)?;
            self.consolidate(&mut sup, &mut mu)?;
        }
        Ok(Inner {
            support: sup,
            mu,
            converged,
            iterations,
        })
    }
}

/// `∂/∂rᵢ (T + μ Σ pⱼ rⱼ²)` with `k` the kernel at `rᵢ = r`.
#[allow(clippy::too_many_arguments)]
fn location_grad(tab: &Table, ln_m: &[f64], i: usize, k: &Kernel, p: f64, r: f64, mu: f64, rho: f64) -> f64 {
    let s: f64 = tab
        .weights
        .iter()
        .zip(ln_m)
        .zip(&tab.nodes)
        .zip(&tab.lg[i])
        .map(|(((w, m), &x), g)| {
            let v = w * (rho * m + g).exp();
            if v == 0.0 {
                0.0
            } else {
                v * k.d_ln_dr(x)
            }
        })
        .sum();
    (1.0 + rho) * p * s + 2.0 * mu * p * r
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

fn trivial_result(rho: f64, cp: &ChannelParams, cfg: &OptimizerConfig) -> Result<ExponentResult> {
    let dist = DiscreteDistribution::single(0.0)?;
    finish(rho, 0.0, dist, cp, cfg, true, 0)
}

fn finish(
    rho: f64,
    nu_bar: f64,
    dist: DiscreteDistribution,
    cp: &ChannelParams,
    cfg: &OptimizerConfig,
    inner_converged: bool,
    iterations: usize,
) -> Result<ExponentResult> {
    let ep = ExponentParams::new(rho, nu_bar)?;
    let value = objective_t(&dist, &ep, cp, &cfg.quadrature)?;
    let opts = KktOptions {
        grid: GridSpec::Default {
            points: cfg.sweep_points,
        },
        tol: cfg.kkt_tol,
        lambda: None,
        nu_bar,
        quadrature: cfg.quadrature,
        r_hi: None,
    };
    let kkt = kkt_report(&dist, rho, cp, &opts)?;
    Ok(ExponentResult {
        rho,
        t_value: value.t_value,
        e0: value.e0,
        lambda: kkt.lambda,
        nu_bar,
        converged: inner_converged && kkt.is_optimal(),
        kkt,
        dist,
        iterations,
    })
}

/// Optimal discrete amplitude distribution for `E₀(ρ, ·)`.
pub fn optimize_distribution(
    rho: f64,
    cp: &ChannelParams,
    cfg: &OptimizerConfig,
) -> Result<ExponentResult> {
    validate_rho(rho)?;
    cfg.validate()?;
    let alpha = cp.alpha();
    if alpha == 0.0 || rho < RHO_TRIVIAL {
        return trivial_result(rho, cp, cfg);
    }
    let start = match &cfg.seed {
        Some(seed) => {
            check_peak(seed, cp)?;
            let mut s = Support::from_dist(seed);
            if s.r.iter().all(|r| r * r > alpha) {
                s.p.iter_mut().for_each(|p| *p *= 1.0 - NEW_POINT_WEIGHT);
                s.r.push(0.0);
                s.p.push(NEW_POINT_WEIGHT);
            }
            s
        }
        None => Support {
            r: vec![alpha.sqrt()],
            p: vec![1.0],
        },
    };
    let base = Problem {
        rho,
        nu_bar: 0.0,
        cp,
        cfg,
        equality: false,
    };
    let inner = base.solve(start)?;
    if cp.peak_amplitude().is_none() || inner.mu <= 1e-3 * cfg.kkt_tol {
        let dist = inner.support.to_dist()?;
        return finish(rho, 0.0, dist, cp, cfg, inner.converged, inner.iterations);
    }
    let decline = -base.residual(&inner.support)?;
    if decline <= 1e-12 {
        let dist = inner.support.to_dist()?;
        return finish(rho, 0.0, dist, cp, cfg, inner.converged, inner.iterations);
    }

    // T still decreases in ν̄ at ν̄ = 0: search ν̄ > 0 with E{r²} = α. On a
    // nondegenerate support ∂T/∂ν̄ = −μ Σ pᵢ(rᵢ² − α)², so the root is
    // tracked through the power multiplier μ, which keeps its sign when
    // the support collapses onto r² = α.
    let mut total_iters = inner.iterations;
    let mut warm = inner.support.clone();
    let eval = |nu: f64, warm: &mut Support, iters: &mut usize| -> Result<(Inner, f64)> {
        let prob = Problem {
            rho,
            nu_bar: nu,
            cp,
            cfg,
            equality: true,
        };
        let out = prob.solve(warm.clone())?;
        *iters += out.iterations;
        *warm = out.support.clone();
        let f = out.mu;
        Ok((out, f))
    };
    let (mut lo, mut f_lo) = (0.0, inner.mu);
    let mut hi = 1.0;
    let (mut at_hi, mut f_hi) = eval(hi, &mut warm, &mut total_iters)?;
    let mut grow = 0;
    while f_hi > 0.0 && grow < 30 {
        lo = hi;
        f_lo = f_hi;
        hi *= 2.0;
        (at_hi, f_hi) = eval(hi, &mut warm, &mut total_iters)?;
        grow += 1;
    }
    let mut best = (hi, at_hi, f_hi);
    let mut side = 0i8;
    for _ in 0..60 {
        if best.2.abs() <= 1e-3 * cfg.kkt_tol || hi - lo < 1e-12 * hi.max(1.0) {
            break;
        }
        let nu = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
        let nu = if nu > lo && nu < hi { nu } else { 0.5 * (lo + hi) };
        let (out, f) = eval(nu, &mut warm, &mut total_iters)?;
        if f > 0.0 {
            lo = nu;
            f_lo = f;
            if side == 1 {
                f_hi *= 0.5;
            }
            side = 1;
        } else {
            hi = nu;
            f_hi = f;
            if side == -1 {
                f_lo *= 0.5;
            }
            side = -1;
        }
        if f.abs() < best.2.abs() {
            best = (nu, out, f);
        }
    }
    let (nu, out, _) = best;
    let dist = out.support.to_dist()?;
    finish(rho, nu, dist, cp, cfg, out.converged, total_iters)
}

/// Cutoff-rate lower bound: the optimum at `ρ = 1`, `ν̄ = 0` path.
pub fn cutoff_rate(cp: &ChannelParams, cfg: &OptimizerConfig) -> Result<ExponentResult> {
    optimize_distribution(1.0, cp, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorExponent {
    pub rate: f64,
    pub exponent: f64,
    pub rho_star: f64,
    pub result: ExponentResult,
}

/// Per-`ρ` optima, reused across rates.
struct RhoCache<'a> {
    cp: &'a ChannelParams,
    cfg: &'a OptimizerConfig,
    memo: HashMap<u64, ExponentResult>,
    last: Option<DiscreteDistribution>,
}

impl<'a> RhoCache<'a> {
    fn new(cp: &'a ChannelParams, cfg: &'a OptimizerConfig) -> Self {
        Self {
            cp,
            cfg,
            memo: HashMap::new(),
            last: None,
        }
    }

    fn get(&mut self, rho: f64) -> Result<ExponentResult> {
        if let Some(r) = self.memo.get(&rho.to_bits()) {
            return Ok(r.clone());
        }
        let mut cfg = self.cfg.clone();
        if cfg.seed.is_none() {
            cfg.seed = self.last.clone();
        }
        let res = optimize_distribution(rho, self.cp, &cfg)?;
        self.last = Some(res.dist.clone());
        self.memo.insert(rho.to_bits(), res.clone());
        Ok(res)
    }

    fn exponent(&mut self, rate: f64) -> Result<ErrorExponent> {
        let score = |r: &ExponentResult| r.e0 - r.rho * rate;
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (0.0, 1.0);
        let mut x1 = b - phi * (b - a);
        let mut x2 = a + phi * (b - a);
        let mut r1 = self.get(x1)?;
        let mut r2 = self.get(x2)?;
        while b - a > self.cfg.rho_search_tol {
            if score(&r1) >= score(&r2) {
                b = x2;
                x2 = x1;
                r2 = r1;
                x1 = b - phi * (b - a);
                r1 = self.get(x1)?;
            } else {
                a = x1;
                x1 = x2;
                r1 = r2;
                x2 = a + phi * (b - a);
                r2 = self.get(x2)?;
            }
        }
        let end = self.get(1.0)?;
        let best = [r1, r2, end]
            .into_iter()
            .max_by(|x, y| score(x).total_cmp(&score(y)))
            .expect("three candidates");
        if score(&best) <= 0.0 {
            return Ok(ErrorExponent {
                rate,
                exponent: 0.0,
                rho_star: 0.0,
                result: trivial_result(0.0, self.cp, self.cfg)?,
            });
        }
        Ok(ErrorExponent {
            rate,
            exponent: score(&best),
            rho_star: best.rho,
            result: best,
        })
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(invalid("rate", "must be finite and nonnegative"));
    }
    Ok(())
}

/// `E(R) = max_{0≤ρ≤1} (E₀*(ρ) − ρR)` by golden-section search in `ρ`.
pub fn error_exponent(rate: f64, cp: &ChannelParams, cfg: &OptimizerConfig) -> Result<ErrorExponent> {
    check_rate(rate)?;
    cfg.validate()?;
    if cp.alpha() == 0.0 {
        return Ok(ErrorExponent {
            rate,
            exponent: 0.0,
            rho_star: 0.0,
            result: trivial_result(0.0, cp, cfg)?,
        });
    }
    RhoCache::new(cp, cfg).exponent(rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub rate: f64,
    pub exponent: f64,
    pub rho_star: f64,
    pub n_mass_points: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentCurve {
    pub rows: Vec<CurveRow>,
    /// Whether the exponent column is nonincreasing.
    pub monotone: bool,
}

impl ExponentCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rate,exponent,rho_star,n_mass_points\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.rate, r.exponent, r.rho_star, r.n_mass_points
            ));
        }
        out
    }
}

/// Tabulates `E(R)` over sorted nonnegative rates.
pub fn exponent_curve(rates: &[f64], cp: &ChannelParams, cfg: &OptimizerConfig) -> Result<ExponentCurve> {
    for &r in rates {
        check_rate(r)?;
    }
    if rates.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("rates", "must be sorted ascending"));
    }
    cfg.validate()?;
    let mut cache = RhoCache::new(cp, cfg);
    let mut rows = Vec::with_capacity(rates.len());
    for &rate in rates {
        let e = if cp.alpha() == 0.0 {
            error_exponent(rate, cp, cfg)?
        } else {
            cache.exponent(rate)?
        };
        rows.push(CurveRow {
            rate,
            exponent: e.exponent,
            rho_star: e.rho_star,
            n_mass_points: e.result.dist.len(),
            converged: e.result.converged,
        });
    }
    let monotone = rows
        .windows(2)
        .all(|w| w[1].exponent <= w[0].exponent + 1e-9);
    Ok(ExponentCurve { rows, monotone })
}
