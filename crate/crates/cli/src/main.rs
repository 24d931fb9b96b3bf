mod args;
mod run;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use serde::{Deserialize, Serialize};

use args::{Cli, Command};
use run::{Failure, Report};

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub cli: Cli,
    pub seed: Option<u64>,
    pub version: String,
    pub outputs: Vec<PathBuf>,
}

fn subcommand_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Cutoff(_) => "cutoff",
        Command::Exponent(_) => "exponent",
        Command::Kkt(_) => "kkt",
        Command::Lowpower(_) => "lowpower",
        Command::Simulate(_) => "simulate",
        Command::Replay(_) => "replay",
    }
}

fn write_file(path: &Path, body: &str) -> Result<(), Failure> {
    std::fs::write(path, body).map_err(|e| Failure::io(format!("writing {}: {e}", path.display())))
}

fn emit(cli: &Cli, report: &Report) -> Result<(), Failure> {
    let mut outputs = Vec::new();
    match &cli.output {
        Some(path) => {
            write_file(path, &report.primary)?;
            outputs.push(path.clone());
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(report.primary.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Failure::io(format!("writing stdout: {e}")))?;
        }
    }
    for (path, body) in &report.extra {
        write_file(path, body)?;
        outputs.push(path.clone());
    }
    if let Some(summary) = &report.summary {
        eprintln!("{summary}");
    }
    let manifest = RunManifest {
        subcommand: subcommand_name(&cli.command).to_string(),
        cli: cli.clone(),
        seed: report.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        outputs,
    };
    let mut resolved = manifest.clone();
    if let (Command::Simulate(a), Some(seed)) = (&mut resolved.cli.command, report.seed) {
        a.seed = Some(seed);
    }
    let json = serde_json::to_string_pretty(&resolved).expect("manifest serializes");
    let target = cli.manifest.clone().or_else(|| {
        cli.output.as_ref().map(|p| {
            let mut s = p.clone().into_os_string();
            s.push(".manifest.json");
            PathBuf::from(s)
        })
    });
    match target {
        Some(path) => write_file(&path, &json)?,
        None => eprintln!("{}", serde_json::to_string(&resolved).expect("manifest serializes")),
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<bool, Failure> {
    if let Command::Replay(r) = &cli.command {
        let text = std::fs::read_to_string(&r.manifest_path)
            .map_err(|e| Failure::usage(format!("reading {}: {e}", r.manifest_path.display())))?;
        let manifest: RunManifest =
            serde_json::from_str(&text).map_err(|e| Failure::usage(format!("bad manifest: {e}")))?;
        if matches!(manifest.cli.command, Command::Replay(_)) {
            return Err(Failure::usage("a manifest cannot record a replay".into()));
        }
        let mut inner = manifest.cli;
        if cli.output.is_some() {
            inner.output = cli.output.clone();
            inner.manifest = cli.manifest.clone();
        }
        return execute(inner);
    }
    let report = run::dispatch(&cli.command)?;
    emit(&cli, &report)?;
    Ok(report.converged)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: did not converge; partial result written");
            ExitCode::from(3)
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            if let Some(partial) = f.partial {
                print!("{partial}");
            }
            ExitCode::from(f.code)
        }
    }
}
