use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use darkstate_sim::run::{error_json, run_config, Format};
use darkstate_sim::{parse_config, Experiment, SimError};

/// Quantum-dot spin / Overhauser-field simulator.
#[derive(Debug, Parser)]
#[command(name = "darkstate-sim", version)]
struct Cli {
    /// g2, cpt-map, cpt-visibility, phase-jump, transient-scan or steady-state
    experiment: Experiment,
    /// JSON configuration file
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing)
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Comma-separated output formats
    #[arg(long, value_delimiter = ',', default_value = "csv")]
    format: Vec<Format>,
}

fn run(cli: &Cli) -> Result<(), SimError> {
    let text = std::fs::read_to_string(&cli.config)
        .map_err(|e| SimError::Config(format!("cannot read config {}: {e}", cli.config.display())))?;
    let mut cfg = parse_config(&text, Some(cli.experiment))?;
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    run_config(&cfg, &cli.out, &cli.format, cli.threads)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::to_string_pretty(&error_json(&e)).expect("error serialises");
            eprintln!("{body}");
            // best effort: the output directory may be the thing that failed
            if std::fs::create_dir_all(&cli.out).is_ok() {
                let _ = std::fs::write(cli.out.join("error.json"), format!("{body}\n"));
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
