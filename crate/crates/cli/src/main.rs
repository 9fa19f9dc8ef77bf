//! `splitguard`: train, attack, evaluate and sweep split models from TOML
//! configs, run the theory checks, and draw tradeoff plots.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use splitguard::checkpoint::Checkpoint;
use splitguard::eval::angular_distance_histogram;
use splitguard::experiment::{self, LoadedConfig, RunOptions, TheoryConfig, RESULT_COLUMNS};
use splitguard::protocol::test_accuracy;
use splitguard::{Error, Partition, Result};

#[derive(Parser, Debug)]
#[command(name = "splitguard", version, about = "Label-privacy experiments for split learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment or theory config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the config's `output_dir`, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train every sweep cell and save checkpoints, without attacks.
    Train(Common),
    /// Train, checkpoint and attack every sweep cell; write results, summary and plots.
    Sweep(Common),
    /// Run the config's attack grid against one checkpoint.
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Test accuracy and angular-distance histogram of one checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 36)]
        bins: usize,
    },
    /// Particle energy minimization, sphere Monte Carlo and sampling-error scaling.
    Theory(Common),
    /// Tradeoff SVGs from a summary CSV.
    Plot {
        /// Summary CSV; defaults to `<out>/summary.csv`.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn out_dir(common: &Common, loaded: Option<&LoadedConfig>) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| loaded.and_then(|l| l.config.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn run_sweep(common: &Common, train_only: bool) -> Result<u8> {
    let loaded = LoadedConfig::load(&common.config)?;
    let out = out_dir(common, Some(&loaded));
    let opts = RunOptions {
        out_dir: out.clone(),
        jobs: common.jobs,
        seed: common.seed,
        train_only,
        write_checkpoints: true,
    };
    let outcome = experiment::run_experiment(&loaded, &opts)?;
    if !train_only {
        experiment::write_tradeoff_plots(&outcome.summary_csv, &out)?;
    }
    println!(
        "{} result rows, {} summary rows written to {}",
        outcome.rows.len(),
        outcome.summary.len(),
        out.display()
    );
    for (defense, value) in &outcome.all_diverged {
        eprintln!("every trial diverged for {defense} at {value}");
    }
    Ok(outcome.exit_code() as u8)
}

fn run_attack(common: &Common, checkpoint: &Path) -> Result<u8> {
    let loaded = LoadedConfig::load(&common.config)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let rows = experiment::attack_checkpoint(&loaded, &ckpt, common.seed)?;
    let out = out_dir(common, Some(&loaded));
    let path = out.join("attack.csv");
    experiment::write(&path, &experiment::to_csv(&rows, RESULT_COLUMNS)?)?;
    for r in &rows {
        println!(
            "{:<12} k={:<4} attack={:.4} baseline={}",
            r.attack_kind.map_or("-", |k| k.as_str()),
            r.k.map_or("-".to_owned(), |k| k.to_string()),
            r.attack_accuracy.unwrap_or(f64::NAN),
            r.baseline_accuracy.map_or("-".to_owned(), |b| format!("{b:.4}")),
        );
    }
    Ok(0)
}

fn run_eval(common: &Common, checkpoint: &Path, bins: usize) -> Result<u8> {
    let loaded = LoadedConfig::load(&common.config)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let data = loaded.dataset()?;
    let test = data.part(Partition::Test);
    let acc = test_accuracy(&ckpt.model, &test)?;
    let z = ckpt.model.forward_bottom(&test.x)?;
    let hist = angular_distance_histogram(&z, &test.y, bins)?;
    let out = out_dir(common, Some(&loaded));
    experiment::write(&out.join("angles.csv"), &hist.to_csv())?;
    let title = format!("{} {}", ckpt.loss.defense, ckpt.loss.value());
    experiment::write(&out.join("angles.svg"), &hist.to_svg(&title))?;
    println!("test_accuracy = {acc:.4}");
    println!(
        "median angle: same-class {:.4} rad, different-class {:.4} rad",
        hist.median_same, hist.median_diff
    );
    Ok(0)
}

fn run_theory(common: &Common) -> Result<u8> {
    let text = experiment::read_config_text(&common.config)?;
    let config: TheoryConfig = experiment::parse_config(&common.config, &text)?;
    let out = out_dir(common, None);
    for path in experiment::run_theory(&config, common.seed, &out, common.jobs)? {
        println!("wrote {}", path.display());
    }
    Ok(0)
}

fn run_plot(summary: Option<PathBuf>, out: Option<PathBuf>) -> Result<u8> {
    let out = out.unwrap_or_else(|| PathBuf::from("out"));
    let summary = summary.unwrap_or_else(|| out.join("summary.csv"));
    let text = std::fs::read_to_string(&summary).map_err(|e| Error::Io {
        path: summary.clone(),
        source: e,
    })?;
    for path in experiment::write_tradeoff_plots(&text, &out)? {
        println!("wrote {}", path.display());
    }
    Ok(0)
}

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::Train(c) => run_sweep(&c, true),
        Command::Sweep(c) => run_sweep(&c, false),
        Command::Attack { common, checkpoint } => run_attack(&common, &checkpoint),
        Command::Eval {
            common,
            checkpoint,
            bins,
        } => run_eval(&common, &checkpoint, bins),
        Command::Theory(c) => run_theory(&c),
        Command::Plot { summary, out } => run_plot(summary, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
