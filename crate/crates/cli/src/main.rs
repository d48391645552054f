use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use heteroglossia_core::stats::report::{build_study_report, parse_distances, parse_ratings};
use heteroglossia_server::{resolve_config_path, serve, Config, CONFIG_ENV};
use heteroglossia_sim::{run_sim_to_dir, SimProfile, HISTOGRAM_FILE, RESULT_FILE, SUMMARY_FILE};

#[derive(Parser)]
#[command(name = "heteroglossia", version, about = "Role-play crowd ideation service and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        /// Config file; defaults to the path in HG_CONFIG.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Build the study report from ratings and distances.
    Report {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        distances: PathBuf,
        /// Directory for report.txt and report.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Drive a simulated crowd against a running service.
    Sim {
        #[arg(long)]
        profile: PathBuf,
        /// Base URL, e.g. http://127.0.0.1:8080
        #[arg(long)]
        server: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve { config } => run_serve(config.as_deref()),
        Command::Report { ratings, distances, out } => run_report(&ratings, &distances, &out),
        Command::Sim { profile, server, out } => run_simulation(&profile, &server, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn runtime() -> Result<tokio::runtime::Runtime, String> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| e.to_string())
}

fn run_serve(flag: Option<&Path>) -> Result<(), String> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let path = resolve_config_path(flag).ok_or_else(|| format!("no config: pass --config or set {CONFIG_ENV}"))?;
    let config = Config::load(&path).map_err(|e| e.to_string())?;
    runtime()?.block_on(serve(&config)).map_err(|e| e.to_string())
}

fn run_report(ratings: &Path, distances: &Path, out: &Path) -> Result<(), String> {
    let open = |p: &Path| File::open(p).map_err(|e| format!("{}: {e}", p.display()));
    let ratings = parse_ratings(open(ratings)?).map_err(|e| format!("ratings: {e}"))?;
    let distances = parse_distances(open(distances)?).map_err(|e| format!("distances: {e}"))?;
    let report = build_study_report(&ratings, &distances).map_err(|e| e.to_string())?;
    std::fs::create_dir_all(out).map_err(|e| format!("{}: {e}", out.display()))?;
    let text = report.to_text();
    for (name, body) in [("report.txt", &text), ("report.csv", &report.to_csv())] {
        let path = out.join(name);
        std::fs::write(&path, body).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    print!("{text}");
    Ok(())
}

fn run_simulation(profile: &Path, server: &str, out: &Path) -> Result<(), String> {
    let profile = SimProfile::load(profile).map_err(|e| e.to_string())?;
    let result = runtime()?
        .block_on(run_sim_to_dir(&profile, server, out))
        .map_err(|e| e.to_string())?;
    let rejected: usize = result.rejections.values().sum();
    println!(
        "{} of {} slots accepted, {} rejections, {} voided, latency agrees with service: {}",
        result.acceptances,
        result.total_slots,
        rejected,
        result.voided_slots,
        result.latency_agrees()
    );
    print!("{}", result.summary_csv());
    for f in [HISTOGRAM_FILE, SUMMARY_FILE, RESULT_FILE] {
        println!("wrote {}", out.join(f).display());
    }
    Ok(())
}
