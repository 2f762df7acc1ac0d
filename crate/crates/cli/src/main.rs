use std::io;
use std::net::TcpListener;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use lgs_cli::commands::{self, CheckArgs, ExploreArgs, SimulateArgs};
use lgs_cli::server::{serve, ServeOptions};
use lgs_cli::Exit;
use lgs_core::config::{ModelConfig, Mutant};
use lgs_core::model::Preset;

#[derive(Debug, Parser)]
#[command(name = "lgs", version, about = "Landing-gear controller model: simulate, explore, check, serve")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario file and write its trace.
    Simulate(SimulateArgs),
    /// Exhaustively explore the reachable states.
    Explore(ExploreArgs),
    /// Replay a trace and re-run the monitor over it.
    Check(CheckArgs),
    /// Serve interactive sessions over websocket.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8765)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value = "ground")]
    preset: Preset,
    /// Milliseconds between automatic macro-cycles.
    #[arg(long, default_value_t = 200)]
    tick_ms: u64,
    /// Start sessions paused.
    #[arg(long)]
    paused: bool,
    /// Serve sessions with a seeded defect (announced on startup).
    #[arg(long)]
    mutant: Option<Mutant>,
}

fn run(cli: Cli) -> Result<Exit, lgs_cli::CliError> {
    let mut out = io::stdout().lock();
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a, &mut out),
        Command::Explore(a) => commands::explore(&a, &mut out),
        Command::Check(a) => commands::check(&a, &mut out),
        Command::Serve(a) => {
            let addr = format!("{}:{}", a.host, a.port);
            let listener = TcpListener::bind(&addr)
                .map_err(|source| lgs_cli::CliError::Io { path: addr.clone().into(), source })?;
            if let Some(m) = a.mutant {
                eprintln!("MUTANT {m}: not nominal evidence");
            }
            eprintln!("listening on ws://{}", listener.local_addr().map(|a| a.to_string()).unwrap_or(addr.clone()));
            let opts = ServeOptions {
                preset: a.preset,
                config: ModelConfig { mutant: a.mutant, ..Default::default() },
                tick: Duration::from_millis(a.tick_ms),
                start_paused: a.paused,
            };
            serve(listener, opts).map_err(|source| lgs_cli::CliError::Io { path: addr.into(), source })?;
            Ok(Exit::Ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(exit) => ExitCode::from(exit as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit() as u8)
        }
    }
}
