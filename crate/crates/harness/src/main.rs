use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use clap::{Parser, Subcommand};
use opencourier_core::clock::{Clock, SystemClock};
use opencourier_core::disclosure::{Salt, TimeRange};
use opencourier_core::ids::Role;
use opencourier_gateway::config::ServerConfig;
use opencourier_gateway::routes::{registry_router, render, router, ROUTES};
use opencourier_gateway::{build_state, registry_state, serve};
use opencourier_harness::scenario::Scenario;
use opencourier_harness::sim::run_scenario;
use opencourier_harness::verify::verify_text;

#[derive(Parser)]
#[command(name = "opencourier", version, about = "OpenCourier servers, simulator and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the instance gateway described by a config file.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Seconds between maintenance ticks.
        #[arg(long, default_value_t = 5)]
        tick_secs: u64,
    },
    /// Standalone registry service.
    Registry {
        #[command(subcommand)]
        command: RegistryCommand,
    },
    /// Deterministic federation simulator.
    Sim {
        #[command(subcommand)]
        command: SimCommand,
    },
    /// Write the anonymized disclosure CSV of one instance.
    Export {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        instance: String,
        #[arg(long)]
        from: DateTime<Utc>,
        #[arg(long)]
        to: DateTime<Utc>,
        /// Pin the hashing salt; random per export otherwise.
        #[arg(long)]
        salt: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the route table.
    Routes,
}

#[derive(Subcommand)]
enum RegistryCommand {
    Serve {
        /// Registry document; created when missing.
        #[arg(long)]
        file: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8081")]
        bind: String,
        #[arg(long, env = "OPENCOURIER_REGISTRY_TOKEN")]
        admin_token: String,
    },
}

#[derive(Subcommand)]
enum SimCommand {
    /// Run a scenario and write its JSON-lines event log.
    Run {
        scenario: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Log destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a log's invariants. Exits 1 on any violation.
    Verify { log: PathBuf },
}

fn read(path: &PathBuf) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn write(path: Option<&PathBuf>, text: &str) -> Result<(), String> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| format!("cannot write {}: {e}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn core(e: opencourier_core::Error) -> String {
    format!("{}: {}", e.code.as_str(), e.message)
}

async fn bind(addr: &str) -> Result<tokio::net::TcpListener, String> {
    tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| format!("cannot bind {addr}: {e}"))
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Serve { config, tick_secs } => {
            let cfg = ServerConfig::load(&config).map_err(core)?;
            let state = build_state(&cfg, Arc::new(SystemClock)).map_err(core)?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            rt.block_on(async {
                let listener = bind(&cfg.bind).await?;
                let app = router(state.clone());
                serve(state, app, listener, Duration::from_secs(tick_secs.max(1)))
                    .await
                    .map_err(|e| e.to_string())
            })
        }
        Command::Registry {
            command: RegistryCommand::Serve { file, bind: addr, admin_token },
        } => {
            let state = registry_state(&file, &admin_token).map_err(core)?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            rt.block_on(async {
                let listener = bind(&addr).await?;
                let app = registry_router(state.clone());
                serve(state, app, listener, Duration::from_secs(60))
                    .await
                    .map_err(|e| e.to_string())
            })
        }
        Command::Sim {
            command: SimCommand::Run { scenario, seed, out },
        } => {
            let mut sc = Scenario::from_json(&read(&scenario)?).map_err(core)?;
            if let Some(s) = seed {
                sc.seed = s;
            }
            let output = run_scenario(&sc).map_err(core)?;
            write(out.as_ref(), &output.log_text())?;
            for s in &output.summary {
                eprintln!(
                    "{}: {} tasks, {} delivered, {} canceled, {} in flight",
                    s.instance, s.tasks, s.delivered, s.canceled, s.in_flight
                );
            }
            Ok(())
        }
        Command::Sim {
            command: SimCommand::Verify { log },
        } => {
            let report = verify_text(&read(&log)?);
            if report.is_clean() {
                println!("ok: {} lines", report.lines);
                Ok(())
            } else {
                for v in &report.violations {
                    println!("{v}");
                }
                Err(format!("{} violation(s)", report.violations.len()))
            }
        }
        Command::Export {
            config,
            instance,
            from,
            to,
            salt,
            out,
        } => {
            let cfg = ServerConfig::load(&config).map_err(core)?;
            let clock: Arc<dyn Clock> = Arc::new(SystemClock);
            let state = build_state(&cfg, clock).map_err(core)?;
            let inst = state.fed.instance(&instance).map_err(core)?;
            let range = TimeRange::new(from, to).map_err(core)?;
            let salt = salt.map_or_else(Salt::random, Salt::pinned);
            let csv = inst.export_csv(range, Role::Admin, &salt).map_err(core)?;
            write(out.as_ref(), &csv)
        }
        Command::Routes => {
            print!("{}", render(ROUTES));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
