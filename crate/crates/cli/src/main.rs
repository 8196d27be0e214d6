use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, Subcommand};
use tunnelpilot::service::{self, ServeOptions};
use tunnelpilot::{bench, report, resolve_scenario, CliError};
use tunnelpilot_core::sim::{load_log, run_scenario, LogError, Timing};
use tunnelpilot_core::{load_config, Config, ConfigError};

#[derive(Parser)]
#[command(name = "tunnelpilot", version, about = "NMPC navigation for MAVs in tunnels")]
struct Cli {
    /// Parameter file (TOML); defaults apply to anything it leaves out.
    #[arg(long, global = true, env = "TUNNELPILOT_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fly a scenario in batch mode and write the run log.
    Run {
        /// Built-in scenario name or scenario TOML path.
        scenario: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Override the scenario duration [s].
        #[arg(long)]
        duration: Option<f64>,
        /// Leave solve times out of the log so runs compare byte for byte.
        #[arg(long)]
        no_timing: bool,
    },
    /// Summarize a run log.
    Report {
        log: PathBuf,
        #[arg(long)]
        json: bool,
        /// Also write per-plot CSV slices into this directory.
        #[arg(long)]
        slices: Option<PathBuf>,
    },
    /// Run the live loop and serve telemetry over TCP.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 7878)]
        port: u16,
        #[arg(long, default_value = "straight_tunnel")]
        scenario: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        duration: Option<f64>,
        /// Real-time factor; 2 runs the loop twice as fast as the wall clock.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Write each session's run log here on reset and shutdown.
        #[arg(long)]
        log_dir: Option<PathBuf>,
    },
    /// Time the controller on states recorded in the straight tunnel.
    Bench {
        #[arg(long, default_value_t = 1000)]
        calls: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
}

fn config(path: &Option<PathBuf>) -> anyhow::Result<Config> {
    match path {
        Some(p) => Ok(load_config(p)?),
        None => Ok(Config::default()),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(c) = cause.downcast_ref::<CliError>() {
            return c.exit_code();
        }
        if cause.is::<std::io::Error>()
            || matches!(cause.downcast_ref::<LogError>(), Some(LogError::Io { .. }))
            || matches!(cause.downcast_ref::<ConfigError>(), Some(ConfigError::Io { .. }))
        {
            return 3;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = config(&cli.config)?;
    match cli.command {
        Command::Run {
            scenario,
            seed,
            out,
            duration,
            no_timing,
        } => {
            let mut scenario = resolve_scenario(&scenario, &cfg)?;
            if let Some(d) = duration {
                anyhow::ensure!(d.is_finite() && d >= 0.0, "duration must be >= 0");
                scenario.duration = d;
            }
            let timing = if no_timing { Timing::Omitted } else { Timing::Measured };
            let (log, fault) = match run_scenario(&scenario, &cfg, seed) {
                Ok(log) => (log, None),
                Err(f) => (f.log, Some(f.error)),
            };
            let path = log.save(&out, timing)?;
            print!("{}", report::render_text(&report::summarize(&log.records, Some(&log.meta(timing)))));
            println!("log             {}", path.display());
            if let Some(e) = fault {
                return Err(anyhow::Error::new(e).context("run aborted"));
            }
        }
        Command::Report { log, json, slices } => {
            let (records, meta) = load_log(&log)?;
            let summary = report::summarize(&records, meta.as_ref());
            if json {
                println!("{}", serde_json::to_string_pretty(&summary)?);
            } else {
                print!("{}", report::render_text(&summary));
            }
            if let Some(dir) = slices {
                for p in report::write_slices(&records, &dir)? {
                    eprintln!("wrote {}", p.display());
                }
            }
        }
        Command::Serve {
            host,
            port,
            scenario,
            seed,
            duration,
            speed,
            log_dir,
        } => {
            anyhow::ensure!(speed.is_finite() && speed > 0.0, "speed must be > 0");
            let mut scenario = resolve_scenario(&scenario, &cfg)?;
            if let Some(d) = duration {
                scenario.duration = d;
            }
            let mut opts = ServeOptions::new(scenario, cfg.clone(), seed);
            opts.tick_period = Duration::from_secs_f64(cfg.nmpc.ts / speed);
            opts.log_dir = log_dir;
            let server = service::start((host.as_str(), port), opts)
                .with_context(|| format!("starting server on {host}:{port}"))?;
            eprintln!("listening on {}", server.local_addr());
            server.wait();
        }
        Command::Bench { calls, seed, json } => {
            let r = bench::run(&cfg, seed, calls)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&r)?);
            } else {
                println!(
                    "{} calls: mean {:.3} ms, p50 {:.3} ms, p99 {:.3} ms, max {:.3} ms",
                    r.calls, r.mean_ms, r.p50_ms, r.p99_ms, r.max_ms
                );
            }
        }
    }
    Ok(())
}
