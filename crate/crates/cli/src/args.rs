use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Parser, Serialize, Deserialize)]
#[command(name = "rician", version, about = "Error exponents and cutoff rate of the noncoherent Rician fading channel")]
pub struct Cli {
    /// Write the primary output here instead of stdout.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,

    /// Manifest path. Defaults to `<output>.manifest.json`, or stderr when
    /// writing to stdout.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Cutoff-rate lower bound and its optimal input (JSON).
    Cutoff(CutoffArgs),
    /// Random-coding exponent E(R) (CSV).
    Exponent(ExponentArgs),
    /// Kuhn-Tucker sweep of a given input distribution (CSV).
    Kkt(KktArgs),
    /// Single-mass closed forms over an SNR grid (CSV).
    Lowpower(LowpowerArgs),
    /// Random-coding simulation with ML decoding (JSON).
    Simulate(SimulateArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ChannelArgs {
    /// Rician factor K.
    #[arg(long = "k", allow_negative_numbers = true)]
    pub k: f64,
    /// Normalized SNR α.
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: f64,
    /// Peak-to-average ratio κ ≥ 1.
    #[arg(long, allow_negative_numbers = true)]
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CutoffArgs {
    #[command(flatten)]
    pub channel: ChannelArgs,
    /// Optimizer configuration as JSON; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also write the KKT sweep of the optimum as `r,phi` CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ExponentArgs {
    #[command(flatten)]
    pub channel: ChannelArgs,
    /// Single rate in nats.
    #[arg(long, allow_negative_numbers = true, conflicts_with = "rate_grid", required_unless_present = "rate_grid")]
    pub rate: Option<f64>,
    /// `lo:hi:n`, n evenly spaced rates including both ends.
    #[arg(long)]
    pub rate_grid: Option<Grid>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct KktArgs {
    #[command(flatten)]
    pub channel: ChannelArgs,
    /// Distribution as `r:p,r:p,...`.
    #[arg(long, conflicts_with = "dist_file", required_unless_present = "dist_file")]
    pub dist: Option<String>,
    /// Distribution as JSON `{"points": [{"r": .., "p": ..}, ...]}`.
    #[arg(long)]
    pub dist_file: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub rho: f64,
    /// Fitted from the distribution when absent.
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    /// Shaping exponent, used with --kappa.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub nu_bar: f64,
    /// Number of sweep points.
    #[arg(long, default_value_t = 400)]
    pub grid: usize,
    /// Upper end of the sweep.
    #[arg(long)]
    pub r_hi: Option<f64>,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Emit the full report as JSON instead of CSV.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct LowpowerArgs {
    #[arg(long = "k", allow_negative_numbers = true)]
    pub k: f64,
    #[arg(long, default_value = "0:1:101")]
    pub alpha_grid: Grid,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub channel: ChannelArgs,
    /// Block length N.
    #[arg(long = "n")]
    pub n: usize,
    /// Rate in nats per symbol; the codebook has max(2, round(e^{NR})) words.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub rate: f64,
    /// Codebook size, overriding the one implied by --rate.
    #[arg(long)]
    pub codewords: Option<usize>,
    #[arg(long)]
    pub trials: u64,
    #[arg(long, env = "RICIAN_SEED")]
    pub seed: Option<u64>,
    /// Input distribution; the optimized one when absent.
    #[arg(long, conflicts_with = "dist_file")]
    pub dist: Option<String>,
    #[arg(long)]
    pub dist_file: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest_path: PathBuf,
}

/// `lo:hi:n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Grid {
    pub fn points(&self) -> Vec<f64> {
        match self.n {
            1 => vec![self.lo],
            n => (0..n)
                .map(|i| {
                    if i == n - 1 {
                        self.hi
                    } else {
                        self.lo + (self.hi - self.lo) * i as f64 / (n - 1) as f64
                    }
                })
                .collect(),
        }
    }
}

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("expected lo:hi:n, got `{s}`"));
        }
        let lo: f64 = parts[0].parse().map_err(|e| format!("bad lo `{}`: {e}", parts[0]))?;
        let hi: f64 = parts[1].parse().map_err(|e| format!("bad hi `{}`: {e}", parts[1]))?;
        let n: usize = parts[2].parse().map_err(|e| format!("bad n `{}`: {e}", parts[2]))?;
        if !lo.is_finite() || !hi.is_finite() || hi < lo {
            return Err(format!("need finite lo ≤ hi, got {lo}:{hi}"));
        }
        if n == 0 {
            return Err("n must be positive".into());
        }
        Ok(Self { lo, hi, n })
    }
}
