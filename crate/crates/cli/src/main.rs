use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use tclsim::report::{self, RunOptions};
use tclsim::scenario::Scenario;

#[derive(Parser)]
#[command(name = "tclsim", version, about = "Simulate TCL populations under broadcast demand-response protocols")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a scenario file (or bundled scenario name) without running it.
    Validate { scenario: String },
    /// Run one scenario and write its artifacts.
    Run {
        scenario: String,
        /// Override the population seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: runs/<scenario name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write trace.svg.
        #[arg(long)]
        svg: bool,
        /// Write into a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Run every *.toml scenario in a directory, each into <out>/<stem>.
    Batch {
        dir: PathBuf,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long)]
        svg: bool,
        #[arg(long)]
        force: bool,
    },
    /// List the bundled scenarios.
    List,
}

fn exit_code(err: &tclsim::Error) -> ExitCode {
    if err.is_validation() {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}

fn report_error(context: &str, err: &tclsim::Error) -> ExitCode {
    eprintln!("error: {context}: {err}");
    exit_code(err)
}

fn scenario_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    Ok(files)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Cmd::Validate { scenario } => match Scenario::load(&scenario) {
            Ok(s) => {
                println!("ok: {scenario} ({} devices, {} events)", s.population.n, s.events.len());
                ExitCode::SUCCESS
            }
            Err(e) => report_error(&scenario, &e),
        },
        Cmd::Run { scenario, seed, out, svg, force } => {
            let opts = RunOptions { seed, out_dir: out, svg, force };
            match report::run(&scenario, &opts) {
                Ok(summary) => {
                    println!("{}", format_summary(&summary));
                    ExitCode::SUCCESS
                }
                Err(e) => report_error(&scenario, &e),
            }
        }
        Cmd::Batch { dir, out, svg, force } => {
            let files = match scenario_files(&dir) {
                Ok(f) => f,
                Err(e) => {
                    eprintln!("error: {}: {e}", dir.display());
                    return ExitCode::from(1);
                }
            };
            // Scenarios are independent; each writes to its own directory.
            let results: Vec<_> = files
                .par_iter()
                .map(|path| {
                    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run").to_string();
                    let opts = RunOptions { seed: None, out_dir: Some(out.join(&stem)), svg, force };
                    (path, report::run(&path.to_string_lossy(), &opts))
                })
                .collect();
            // A runtime failure outranks a validation failure.
            let mut invalid = false;
            let mut failed = false;
            for (path, r) in results {
                match r {
                    Ok(s) => println!("ok: {} ({:.1} s)", path.display(), s.wall_clock_s),
                    Err(e) => {
                        invalid |= e.is_validation();
                        failed |= !e.is_validation();
                        eprintln!("error: {}: {e}", path.display());
                    }
                }
            }
            match (failed, invalid) {
                (true, _) => ExitCode::from(1),
                (false, true) => ExitCode::from(2),
                _ => ExitCode::SUCCESS,
            }
        }
        Cmd::List => {
            for name in Scenario::bundled_names() {
                let caption = Scenario::bundled(name).map(|s| s.caption).unwrap_or_default();
                println!("{name:20} {caption}");
            }
            ExitCode::SUCCESS
        }
    }
}

fn format_summary(summary: &report::RunSummary) -> String {
    let events: Vec<String> = summary
        .events
        .iter()
        .map(|e| match &e.metrics {
            Some(m) => format!(
                "  {} at {:.1} min: depth {:.2} MW, width {:.2} min, oscillation index {}, settling {}",
                e.command.label(),
                e.t_min,
                m.depth,
                m.width_at_half,
                m.oscillation_index,
                m.settling_time.map_or("unsettled".to_string(), |t| format!("{t:.1} min")),
            ),
            None => format!("  {} at {:.1} min: no metrics", e.command.label(), e.t_min),
        })
        .collect();
    format!(
        "steady power {:.2} MW, mean ON fraction {:.3}, {:.1} s\n{}",
        summary.steady_power,
        summary.mean_frac_on,
        summary.wall_clock_s,
        events.join("\n")
    )
}
