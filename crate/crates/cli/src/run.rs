use std::path::{Path, PathBuf};

use rician_core::channel::ChannelParams;
use rician_core::distribution::DiscreteDistribution;
use rician_core::error::Error;
use rician_core::kkt::{kkt_report, GridSpec, KktOptions};
use rician_core::low_power::{
    admissibility_scan, curvature_at_origin, default_scan_grid, single_mass_threshold,
};
use rician_core::monte_carlo::{simulate_random_coding, ExperimentSpec};
use rician_core::optimizer::{cutoff_rate, error_exponent, exponent_curve, OptimizerConfig};

use crate::args::{
    ChannelArgs, Command, CutoffArgs, ExponentArgs, KktArgs, LowpowerArgs, SimulateArgs,
};

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
    pub partial: Option<String>,
}

impl Failure {
    pub fn usage(message: String) -> Self {
        Self {
            code: 2,
            message,
            partial: None,
        }
    }

    pub fn io(message: String) -> Self {
        Self {
            code: 1,
            message,
            partial: None,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Quadrature { .. } => 3,
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
            partial: None,
        }
    }
}

/// Output of one subcommand.
pub struct Report {
    pub primary: String,
    pub extra: Vec<(PathBuf, String)>,
    pub summary: Option<String>,
    pub seed: Option<u64>,
    pub converged: bool,
}

impl Report {
    fn new(primary: String) -> Self {
        Self {
            primary,
            extra: Vec::new(),
            summary: None,
            seed: None,
            converged: true,
        }
    }
}

fn channel(a: &ChannelArgs) -> Result<ChannelParams, Failure> {
    Ok(match a.kappa {
        Some(kappa) => ChannelParams::with_peak(a.k, a.alpha, kappa)?,
        None => ChannelParams::new(a.k, a.alpha)?,
    })
}

fn config(path: Option<&Path>) -> Result<OptimizerConfig, Failure> {
    let cfg = match path {
        None => OptimizerConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::usage(format!("reading {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::usage(format!("bad config: {e}")))?
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

fn distribution(inline: Option<&str>, file: Option<&Path>) -> Result<Option<DiscreteDistribution>, Failure> {
    if let Some(s) = inline {
        return Ok(Some(s.parse()?));
    }
    match file {
        None => Ok(None),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::usage(format!("reading {}: {e}", p.display())))?;
            let d = serde_json::from_str(&text)
                .map_err(|e| Failure::usage(format!("bad distribution file: {e}")))?;
            Ok(Some(d))
        }
    }
}

fn json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

pub fn dispatch(cmd: &Command) -> Result<Report, Failure> {
    match cmd {
        Command::Cutoff(a) => cutoff(a),
        Command::Exponent(a) => exponent(a),
        Command::Kkt(a) => kkt(a),
        Command::Lowpower(a) => lowpower(a),
        Command::Simulate(a) => simulate(a),
        Command::Replay(_) => unreachable!("replay is resolved by the caller"),
    }
}

fn cutoff(a: &CutoffArgs) -> Result<Report, Failure> {
    let cp = channel(&a.channel)?;
    let cfg = config(a.config.as_deref())?;
    let res = cutoff_rate(&cp, &cfg)?;
    let mut report = Report::new(json(&res));
    if let Some(p) = &a.csv {
        report.extra.push((p.clone(), res.kkt.to_csv()));
    }
    report.converged = res.converged;
    Ok(report)
}

fn exponent(a: &ExponentArgs) -> Result<Report, Failure> {
    let cp = channel(&a.channel)?;
    let cfg = config(a.config.as_deref())?;
    let rates = match (a.rate, a.rate_grid) {
        (Some(r), _) => vec![r],
        (None, Some(g)) => g.points(),
        (None, None) => return Err(Failure::usage("one of --rate, --rate-grid is required".into())),
    };
    let curve = exponent_curve(&rates, &cp, &cfg)?;
    let mut report = Report::new(curve.to_csv());
    report.converged = curve.rows.iter().all(|r| r.converged);
    if !curve.monotone {
        report.summary = Some("warning: exponent column is not monotone".into());
    }
    Ok(report)
}

fn kkt(a: &KktArgs) -> Result<Report, Failure> {
    let cp = channel(&a.channel)?;
    let dist = distribution(a.dist.as_deref(), a.dist_file.as_deref())?
        .ok_or_else(|| Failure::usage("one of --dist, --dist-file is required".into()))?;
    let opts = KktOptions {
        grid: GridSpec::Default { points: a.grid },
        tol: a.tol,
        lambda: a.lambda,
        nu_bar: a.nu_bar,
        r_hi: a.r_hi,
        ..KktOptions::default()
    };
    let rep = kkt_report(&dist, a.rho, &cp, &opts)?;
    let primary = if a.json { json(&rep) } else { rep.to_csv() };
    let mut report = Report::new(primary);
    report.summary = Some(format!(
        "min_phi={},argmin_r={},lambda={},nu_bar={},verdict={}",
        rep.min_phi,
        rep.argmin_r,
        rep.lambda,
        rep.nu_bar,
        serde_json::to_string(&rep.verdict).expect("serializable")
    ));
    Ok(report)
}

fn lowpower(a: &LowpowerArgs) -> Result<Report, Failure> {
    let mut out = String::from("alpha,lambda,r0_hat,admissible\n");
    for alpha in a.alpha_grid.points() {
        let s = admissibility_scan(alpha, a.k, &default_scan_grid(alpha))?;
        out.push_str(&format!("{},{},{},{}\n", s.alpha, s.lambda, s.r0_hat, s.single_mass_admissible));
    }
    let curv = curvature_at_origin(a.k);
    let th = single_mass_threshold();
    let side = if a.k > th {
        "above"
    } else if a.k < th {
        "below"
    } else {
        "at"
    };
    let mut report = Report::new(out);
    report.summary = Some(format!(
        "curvature_at_origin={curv},curvature_sign={},threshold={th},k_side={side}",
        if curv > 0.0 {
            "positive"
        } else if curv < 0.0 {
            "negative"
        } else {
            "zero"
        }
    ));
    Ok(report)
}

fn simulate(a: &SimulateArgs) -> Result<Report, Failure> {
    let cp = channel(&a.channel)?;
    let cfg = config(a.config.as_deref())?;
    let seed = a.seed.unwrap_or(0);
    let n_codewords = match a.codewords {
        Some(m) => m,
        None => ExperimentSpec::codewords_for_rate(a.rate, a.n)?,
    };
    let spec_probe = ExperimentSpec {
        block_length: a.n,
        n_codewords,
        n_trials: a.trials,
        exponent: 0.0,
    };
    if a.trials == 0 {
        return Err(Failure::usage("--trials must be positive".into()));
    }
    let ee = error_exponent(a.rate, &cp, &cfg)?;
    let mut converged = ee.result.converged;
    let dist = match distribution(a.dist.as_deref(), a.dist_file.as_deref())? {
        Some(d) => d,
        None if ee.rho_star > 0.0 => ee.result.dist.clone(),
        None => {
            let r = cutoff_rate(&cp, &cfg)?;
            converged = r.converged;
            r.dist
        }
    };
    let spec = ExperimentSpec {
        exponent: ee.exponent,
        ..spec_probe
    };
    let exp = simulate_random_coding(&spec, &cp, &dist, seed)?;
    let mut report = Report::new(json(&exp));
    report.seed = Some(seed);
    report.converged = converged;
    if exp.low_confidence {
        report.summary = Some(format!(
            "warning: only {} errors in {} trials; estimate is low-confidence",
            exp.errors, exp.n_trials
        ));
    }
    Ok(report)
}
