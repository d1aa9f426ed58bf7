use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use emax::harness::{self, ExperimentConfig, TrainingRun};

#[derive(Parser)]
#[command(name = "emax", version, about = "Train, evaluate and summarise cooperative multi-agent value learners")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config, writing metrics and checkpoints.
    Train { config: PathBuf },
    /// Evaluate a saved checkpoint with the config's evaluation settings.
    Eval { checkpoint: PathBuf, config: PathBuf },
    /// Time the baseline against each ensemble size.
    Speedtest {
        config: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Aggregate every metrics CSV under a directory.
    Metrics {
        dir: PathBuf,
        #[arg(long, default_value_t = 2000)]
        resamples: usize,
        #[arg(long)]
        json: bool,
    },
}

const CONFIG_ERROR: u8 = 1;
const RUNTIME_ERROR: u8 = 2;

fn load(path: &Path) -> Result<ExperimentConfig, ExitCode> {
    ExperimentConfig::load(path).map_err(|e| {
        eprintln!("config error: {e}");
        ExitCode::from(CONFIG_ERROR)
    })
}

fn fail(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(RUNTIME_ERROR)
}

fn train(path: &Path) -> Result<(), ExitCode> {
    let config = load(path)?;
    let artifacts = harness::run_experiment(&config).map_err(fail)?;
    for s in &artifacts.seeds {
        match &s.error {
            None => println!("seed {}: {} steps in {:.1}s -> {}", s.seed, s.steps, s.seconds, s.metrics_file.display()),
            Some(e) => eprintln!("seed {} failed after {} steps: {e}", s.seed, s.steps),
        }
    }
    if artifacts.all_failed() {
        return Err(ExitCode::from(RUNTIME_ERROR));
    }
    Ok(())
}

fn eval(checkpoint: &Path, path: &Path) -> Result<(), ExitCode> {
    let config = load(path)?;
    let mut run = TrainingRun::load(checkpoint).map_err(fail)?;
    let saved = run.config();
    if saved.algorithm != config.algorithm || saved.env != config.env {
        eprintln!(
            "config error: checkpoint holds {} on {}, config asks for {} on {}",
            saved.algorithm,
            saved.task(),
            config.algorithm,
            config.task()
        );
        return Err(ExitCode::from(CONFIG_ERROR));
    }
    run.set_evaluation(config.eval_episodes, config.eval_member, config.deep.eval_epsilon);
    let ret = run.evaluate("cli").map_err(fail)?;
    println!(
        "{} seed {} after {} steps: mean return {ret} over {} episodes",
        config.algorithm,
        run.seed(),
        run.step_count(),
        config.eval_episodes
    );
    Ok(())
}

fn speedtest(path: &Path, json: bool) -> Result<(), ExitCode> {
    let config = load(path)?;
    if !matches!(config.algorithm, harness::Algorithm::Deep(_)) {
        eprintln!("config error: the speed benchmark needs a deep algorithm");
        return Err(ExitCode::from(CONFIG_ERROR));
    }
    let table = harness::speed_benchmark(&config).map_err(fail)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&table).expect("table serialises"));
    } else {
        print!("{table}");
    }
    Ok(())
}

fn metrics(dir: &Path, resamples: usize, json: bool) -> Result<(), ExitCode> {
    let runs = harness::load_runs(dir).map_err(fail)?;
    let report = harness::build_report(&runs, resamples).map_err(fail)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serialises"));
    } else {
        print!("{report}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { CONFIG_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train { config } => train(&config),
        Command::Eval { checkpoint, config } => eval(&checkpoint, &config),
        Command::Speedtest { config, json } => speedtest(&config, json),
        Command::Metrics { dir, resamples, json } => metrics(&dir, resamples, json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
