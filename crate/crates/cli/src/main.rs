use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use etk_cli::{cmd_analyze, cmd_ingest, cmd_synth, Bandwidth, ProfileSource, RunConfig, ZoneSource};

#[derive(Parser)]
#[command(name = "etk", version, about = "Gaze, input and heart-rate session analytics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate session directories; prints a JSON summary.
    Ingest {
        #[arg(required = true)]
        sessions: Vec<PathBuf>,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Run the analysis pipeline and write artifacts to --out.
    Analyze {
        #[arg(required = true)]
        sessions: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Zone table CSV (k,label,x,y) or "default".
        #[arg(long, default_value = "default")]
        zones: String,
        #[arg(long, default_value_t = 15.0, value_parser = positive)]
        window_s: f64,
        #[arg(long, default_value_t = 1.0, value_parser = positive)]
        hop_s: f64,
        /// KDE bandwidth: "auto" (Silverman) or a positive value.
        #[arg(long, default_value = "auto", value_parser = Bandwidth::parse)]
        bandwidth: Bandwidth,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write synthetic session directories.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Profile JSON or "default" (one third professional, the rest amateur).
        #[arg(long, default_value = "default")]
        profile: String,
        #[arg(long, default_value_t = 15)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got {s:?}")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ETK_LOG", "warn")).init();
    let code = match Cli::parse().command {
        Command::Ingest { sessions, jobs } => {
            let outcome = cmd_ingest(&sessions, jobs);
            println!("{}", serde_json::to_string_pretty(&outcome.summary).expect("json"));
            outcome.code
        }
        Command::Analyze {
            sessions,
            out,
            zones,
            window_s,
            hop_s,
            bandwidth,
            jobs,
            seed,
        } => cmd_analyze(&RunConfig {
            sessions,
            zones: ZoneSource::parse(&zones),
            window_s,
            hop_s,
            bandwidth,
            out,
            seed,
            jobs,
        }),
        Command::Synth {
            out,
            profile,
            count,
            seed,
            jobs,
        } => cmd_synth(&ProfileSource::parse(&profile), count, seed, &out, jobs),
    };
    ExitCode::from(code as u8)
}
