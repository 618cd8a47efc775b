use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gazegraph::error::Error;
use gazegraph::pipeline::{
    exit_code, parse_config, run_chain, run_pipeline, Command, PipelineConfig, RunOptions, RunStatus,
};

#[derive(Parser)]
#[command(name = "gazegraph", version, about = "Driver-gaze simulation over scene graphs")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic scenes and scripted gaze.
    Gen(Common),
    /// Train the model on the generated training split.
    Train(Common),
    /// Roll out gaze traces on the test split.
    Simulate(Common),
    /// Detect fixations in simulated and human traces.
    Fixate(Common),
    /// Build per-frame saliency maps from fixations.
    Saliency(Common),
    /// Compute the metric tables.
    Evaluate(Common),
    /// Write the summary CSV and SVG figures.
    Report(Common),
    /// Run every stage in order.
    All(Common),
    /// Print the effective configuration as TOML.
    Config(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Artifact root.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Replace existing output directories.
    #[arg(long)]
    force: bool,
    /// Override a config key, e.g. `--set train.epochs=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<PipelineConfig, Error> {
        let base = match &self.config {
            Some(p) => parse_config(p)?,
            None => PipelineConfig::default(),
        };
        let mut sets = self.overrides.clone();
        let flags = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("train.epochs", self.epochs.map(|v| v.to_string())),
            ("simulate.horizon", self.horizon.map(|v| v.to_string())),
            ("simulate.runs", self.runs.map(|v| v.to_string())),
        ];
        sets.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| format!("{k}={v}"))));
        base.with_overrides(&sets)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmds, common): (Vec<Command>, &Common) = match &cli.command {
        Cmd::Gen(c) => (vec![Command::Gen], c),
        Cmd::Train(c) => (vec![Command::Train], c),
        Cmd::Simulate(c) => (vec![Command::Simulate], c),
        Cmd::Fixate(c) => (vec![Command::Fixate], c),
        Cmd::Saliency(c) => (vec![Command::Saliency], c),
        Cmd::Evaluate(c) => (vec![Command::Evaluate], c),
        Cmd::Report(c) => (vec![Command::Report], c),
        Cmd::All(c) => (Command::ALL.to_vec(), c),
        Cmd::Config(c) => {
            return match c.load().and_then(|cfg| cfg.validate().map(|_| cfg)) {
                Ok(cfg) => {
                    print!("{}", gazegraph::pipeline::config::to_toml(&cfg));
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            };
        }
    };
    if let Some(n) = common.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = common.load().and_then(|cfg| {
        let opts = RunOptions {
            out: common.out.clone(),
            force: common.force,
        };
        if cmds.len() == 1 {
            run_pipeline(cmds[0], &cfg, &opts)
        } else {
            run_chain(&cmds, &cfg, &opts)
        }
    });
    match &result {
        Ok(o) => match &o.status {
            RunStatus::Completed => println!("{}: {} files", o.dir.display(), o.outputs.len()),
            RunStatus::Aborted(why) => eprintln!("{}: aborted: {why}", o.dir.display()),
        },
        Err(Error::Prerequisite { stage, path }) => {
            eprintln!("error: missing {}; run `gazegraph {stage}` first", path.display())
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&result) as u8)
}
