use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use wvn_harness::runs;
use wvn_harness::serve::run_serve;
use wvn_harness::{ExperimentConfig, RunMode};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Demo,
    Navigate,
    Follow,
    Ablate,
    Eval,
    Serve,
}

impl From<Mode> for RunMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Demo => RunMode::Demo,
            Mode::Navigate => RunMode::Navigate,
            Mode::Follow => RunMode::Follow,
            Mode::Ablate => RunMode::Ablate,
            Mode::Eval => RunMode::Eval,
            Mode::Serve => RunMode::Serve,
        }
    }
}

/// Self-supervised traversability simulator.
#[derive(Debug, Parser)]
#[command(name = "wvn", version)]
struct Cli {
    mode: Mode,
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Training-step budget.
    #[arg(long)]
    steps: Option<usize>,
    /// Single-threaded interleaved learner; byte-reproducible outputs.
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(cli: &Cli) -> wvn_harness::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&cli.config)?;
    cfg.run.mode = cli.mode.into();
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if let Some(n) = cli.steps {
        cfg.run.steps = n;
    }
    if cli.deterministic {
        cfg.run.deterministic = true;
    }
    if let Some(out) = &cli.out {
        // Relative to the working directory, not the config file.
        cfg.run.out_dir = std::path::absolute(out)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cfg: &ExperimentConfig) -> wvn_harness::Result<ExitCode> {
    match cfg.run.mode {
        RunMode::Demo => {
            let out = runs::run_demo(cfg)?;
            println!(
                "demo: {} ticks, {} training steps, val GT accuracy {:.2}% (self {:.2}%, geometric {:.2}%)",
                out.sim.tick,
                out.rows.len(),
                out.report.gt_accuracy,
                out.report.self_accuracy,
                out.report.geometric_accuracy
            );
        }
        RunMode::Navigate => {
            let out = runs::run_navigate(cfg)?;
            let r = &out.report;
            println!("navigate: reached {}/{} goals, {} costmap violations, {} ticks", r.reached, r.goals.len(), r.violations, r.ticks);
        }
        RunMode::Follow => {
            let out = runs::run_follow(cfg)?;
            let r = &out.report;
            println!(
                "follow: adherence {:.3} over {} steps, {:.1} m driven{}",
                r.adherence,
                r.steps,
                r.distance,
                if r.carrot_failed { " (carrot failed)" } else { "" }
            );
        }
        RunMode::Ablate => {
            print!("{}", runs::ablate_csv(&runs::run_ablate(cfg)?));
        }
        RunMode::Eval => {
            let out = runs::run_eval(cfg)?;
            if let Some(r) = &out.report {
                println!(
                    "eval: GT accuracy {:.2}% (threshold {:.2}%), self {:.2}%, {} cells",
                    r.gt_accuracy, cfg.eval.min_gt_accuracy, r.self_accuracy, r.cells
                );
            }
            if let Some(m) = &out.cross_world {
                print!("{}", m.csv());
            }
            if let Some(points) = &out.speed {
                println!("speed study: {} points written to speed.csv", points.len());
            }
            if !out.passed {
                return Ok(ExitCode::from(2));
            }
        }
        RunMode::Serve => {
            let ticks = run_serve(cfg)?;
            println!("serve: stopped after {ticks} ticks");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match load(&cli).and_then(|cfg| run(&cfg)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("wvn: {e}");
            ExitCode::FAILURE
        }
    }
}
