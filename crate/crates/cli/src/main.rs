mod compare;
mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use ges_core::config::RunConfig;
use ges_core::optimizer::Mode;
use ges_core::sim::{self, Scenario, SAMPLE_SCENARIO};
use ges_core::{report, signals};

/// Simulates a GES fleet coordinated through a demand-curve market and
/// scheduled for the energy and regulation markets.
#[derive(Parser)]
#[command(name = "gesim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its artifacts.
    Run {
        /// Scenario file; the bundled sample scenario when omitted.
        config: Option<PathBuf>,
        #[arg(long)]
        mode: Option<Mode>,
        /// Fleet sampling seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        regd_seed: Option<u64>,
        #[arg(long)]
        hours: Option<usize>,
        /// Output directory (default: run.output_dir, else runs/<mode>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the costs of two or more runs, relative to the first.
    Compare {
        #[arg(required = true, num_args = 2..)]
        manifests: Vec<PathBuf>,
    },
    /// Render a figure from a run as SVG.
    Plot {
        /// Run directory or its manifest.json.
        manifest: PathBuf,
        figure: String,
        /// Output file (default: <run dir>/<figure>.svg).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic regD signal as CSV.
    SynthRegd {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 24)]
        hours: usize,
        /// Sample period, s.
        #[arg(long, default_value_t = 2)]
        period: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a scenario file and everything it references.
    ValidateConfig {
        config: Option<PathBuf>,
        /// Print the scenario with every default filled in.
        #[arg(long)]
        print: bool,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::from_toml(SAMPLE_SCENARIO)?,
    })
}

fn cmd_run(
    config: Option<&Path>,
    mode: Option<Mode>,
    seed: Option<u64>,
    regd_seed: Option<u64>,
    hours: Option<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(m) = mode {
        cfg.run.mode = m;
    }
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    if let Some(s) = regd_seed {
        cfg.run.regd_seed = s;
    }
    if let Some(h) = hours {
        cfg.run.hours = h;
    }
    cfg.validate()?;
    let dir = out
        .or_else(|| cfg.run.output_dir.clone())
        .unwrap_or_else(|| Path::new("runs").join(cfg.run.mode.label()));

    let sc = Scenario::from_config(&cfg)?;
    log::info!(
        "running {} with {} devices for {} h",
        sc.mode,
        sc.devices.len(),
        sc.hours
    );
    let output = sim::run(&sc)?;
    let m = report::write_run(&dir, &cfg, &sc, &output)?;
    let s = &m.summary;
    println!("mode                 {}", m.mode);
    println!("energy bill          {:.2} $", s.bill);
    println!("regulation payments  {:.2} $", s.regulation_payment);
    println!("total cost           {:.2} $", s.total);
    println!("tracking rms         {:.4}", s.tracking_rms);
    if let Some(score) = s.mean_score {
        println!("mean score           {score:.3} over {} h", s.scored_hours);
    }
    println!(
        "ev deadband misses   {} of {}",
        s.ev_deadband_violations, s.ev_sessions
    );
    println!("wrote {}", dir.join(report::MANIFEST_FILE).display());
    Ok(())
}

fn cmd_validate(config: Option<&Path>, print: bool) -> Result<()> {
    let cfg = load_config(config)?;
    let sc = Scenario::from_config(&cfg)?;
    if print {
        print!("{}", cfg.to_toml()?);
    } else {
        println!(
            "ok: {} devices, {} h, mode {}, scenario {}",
            sc.devices.len(),
            sc.hours,
            sc.mode,
            cfg.scenario_hash()?
        );
    }
    Ok(())
}

fn cmd_synth(seed: u64, hours: usize, period: u32, out: &Path) -> Result<()> {
    let sig = signals::synth_regd(seed, hours, period)?;
    sig.series
        .write_csv(out)
        .with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {} samples to {}", sig.series.len(), out.display());
    Ok(())
}

/// 2 config error, 3 infeasible, 4 I/O error, 1 anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    use ges_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config(_) | E::Load { .. } | E::InvalidParameter(_) => 2,
                E::Infeasible { .. } => 3,
                E::Io(_) | E::Csv(_) | E::Json(_) => 4,
                _ => 1,
            };
        }
        if cause.downcast_ref::<plot::UnknownFigure>().is_some() {
            return 2;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            mode,
            seed,
            regd_seed,
            hours,
            out,
        } => cmd_run(config.as_deref(), mode, seed, regd_seed, hours, out),
        Command::Compare { manifests } => compare::run(&manifests),
        Command::Plot {
            manifest,
            figure,
            out,
        } => plot::run(&manifest, &figure, out.as_deref()),
        Command::SynthRegd {
            seed,
            hours,
            period,
            out,
        } => cmd_synth(seed, hours, period, &out),
        Command::ValidateConfig { config, print } => cmd_validate(config.as_deref(), print),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
