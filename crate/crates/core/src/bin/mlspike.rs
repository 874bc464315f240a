use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use mlspike::harness::{describe, emit, resolve_config, run_experiment, ExperimentId, Overrides};
use mlspike::learning::Rule;
use mlspike::network::Variant;

#[derive(Parser)]
#[command(
    name = "mlspike",
    version,
    about = "Train multilayer stochastic spiking networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment preset, optionally overridden by a TOML file.
    Run {
        /// single-map, noise-map, xor, structure-compare, capacity,
        /// generalization, spatio-temporal, ratio-sweep or bio-compare.
        experiment: ExperimentId,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Base seed; run r uses seed + r.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Multiplies the pattern count and the episode count.
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long, value_parser = parse_rule)]
        rule: Option<Rule>,
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        /// Print the resolved configuration as TOML and exit.
        #[arg(long)]
        print_config: bool,
    },
}

fn parse_rule(s: &str) -> Result<Rule, String> {
    s.parse().map_err(|e: mlspike::Error| e.to_string())
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: mlspike::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cmd: Command) -> mlspike::Result<ExitCode> {
    let Command::Run {
        experiment,
        config,
        seed,
        runs,
        episodes,
        scale,
        out,
        rule,
        variant,
        print_config,
    } = cmd;
    let overrides = Overrides {
        config,
        seed,
        runs,
        episodes,
        scale,
        rule,
        variant,
    };
    let cfg = resolve_config(experiment, &overrides)?;
    if print_config {
        print!("{}", cfg.to_toml()?);
        return Ok(ExitCode::SUCCESS);
    }

    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = Arc::clone(&stop);
        // A second interrupt falls through to the default handler.
        let installed = ctrlc::set_handler(move || {
            if stop.swap(true, Ordering::SeqCst) {
                std::process::exit(130);
            }
            eprintln!("interrupt received, finishing current episodes and writing partial results");
        });
        if let Err(e) = installed {
            eprintln!("warning: could not install interrupt handler: {e}");
        }
    }

    let n_conditions = cfg.conditions()?.len();
    eprintln!(
        "{}: {} condition(s) x {} run(s), writing to {}",
        cfg.experiment,
        n_conditions,
        cfg.runs,
        out.display()
    );
    let result = run_experiment(&cfg, &stop)?;
    let files = emit(&result, &out)?;
    for line in describe(&result) {
        println!("{line}");
    }
    println!("summary: {}", files.summary.display());
    println!("manifest: {}", files.manifest.display());
    if result.interrupted {
        eprintln!("run interrupted; results are partial");
        return Ok(ExitCode::from(130));
    }
    Ok(ExitCode::SUCCESS)
}
