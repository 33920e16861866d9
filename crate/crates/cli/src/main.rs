use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rai_core::msgbus::bridge::BridgeConfig;
use rai_core::scenario::{
    evaluate_transcript, outcome_of, read_jsonl, run_blocking, Outcome, RunOptions, ScenarioConfig,
};

#[derive(Parser)]
#[command(name = "rai", about = "Run multi-agent robot scenarios")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario to completion and evaluate its checkers.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Wall-clock ticks (10 per second) instead of fake time.
        #[arg(long)]
        live: bool,
    },
    /// Run a scenario live and expose the bus over WebSocket.
    Serve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
    /// Re-evaluate the checkers recorded in a transcript.
    Checkers {
        #[arg(long)]
        transcript: PathBuf,
    },
}

fn load(path: &Path) -> Result<ScenarioConfig, ExitCode> {
    ScenarioConfig::load(path).map_err(|e| {
        eprintln!("{e}");
        ExitCode::from(e.exit_code() as u8)
    })
}

fn run(scenario: &Path, opts: RunOptions) -> ExitCode {
    let cfg = match load(scenario) {
        Ok(c) => c,
        Err(code) => return code,
    };
    match run_blocking(&cfg, opts) {
        Ok(report) => {
            print!("{}", report.render());
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn serve(scenario: &Path, port: u16) -> ExitCode {
    let listener = match std::net::TcpListener::bind(("0.0.0.0", port)) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("cannot listen on port {port}: {e}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = listener.set_nonblocking(true) {
        eprintln!("{e}");
        return ExitCode::from(2);
    }
    eprintln!("bridge listening on ws://0.0.0.0:{port}");
    let opts = RunOptions {
        live: true,
        hold: true,
        max_ticks: Some(u64::MAX),
        on_start: Some(Box::new(move |bus| {
            let bus = bus.clone();
            tokio::spawn(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
                if let Err(e) = rai_cli::serve_ws(bus, listener, BridgeConfig::default()).await {
                    eprintln!("bridge stopped: {e}");
                }
            });
        })),
        ..Default::default()
    };
    run(scenario, opts)
}

fn checkers(path: &Path) -> ExitCode {
    let results = match read_jsonl(path).and_then(|ev| evaluate_transcript(&ev)) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    for c in &results {
        println!(
            "{} {}: {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.diagnosis
        );
    }
    match outcome_of(&results) {
        Outcome::Passed => ExitCode::SUCCESS,
        Outcome::Failed => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::Run {
            scenario,
            seed,
            transcript,
            live,
        } => run(
            &scenario,
            RunOptions {
                seed,
                transcript,
                live,
                ..Default::default()
            },
        ),
        Cmd::Serve { scenario, port } => serve(&scenario, port),
        Cmd::Checkers { transcript } => checkers(&transcript),
    }
}
