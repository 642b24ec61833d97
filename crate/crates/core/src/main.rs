use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use trihybrid::config::{ExperimentConfig, Preset};
use trihybrid::experiments::{run_experiment, Experiment};
use trihybrid::Error;

#[derive(Parser)]
#[command(name = "trihybrid", version, about = "Tri-timescale tri-hybrid beamforming experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named experiment and write its CSV tables.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum)]
        experiment: ExperimentArg,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Parse and range-check a configuration, then print it.
    Validate {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// `section.key=value`, applied after the file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    #[value(name = "desk_scale", alias = "desk-scale")]
    DeskScale,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentArg {
    Convergence,
    PowerSweep,
    FramesSweep,
    GeometrySweep,
    ApsDemo,
    NmseSweep,
    MSweep,
    ScalingSweep,
}

impl From<ExperimentArg> for Experiment {
    fn from(e: ExperimentArg) -> Self {
        match e {
            ExperimentArg::Convergence => Experiment::Convergence,
            ExperimentArg::PowerSweep => Experiment::PowerSweep,
            ExperimentArg::FramesSweep => Experiment::FramesSweep,
            ExperimentArg::GeometrySweep => Experiment::GeometrySweep,
            ExperimentArg::ApsDemo => Experiment::ApsDemo,
            ExperimentArg::NmseSweep => Experiment::NmseSweep,
            ExperimentArg::MSweep => Experiment::MSweep,
            ExperimentArg::ScalingSweep => Experiment::ScalingSweep,
        }
    }
}

fn load(args: &ConfigArgs, extra: Vec<String>) -> Result<ExperimentConfig, Error> {
    let preset = args.preset.map(|p| match p {
        PresetArg::DeskScale => Preset::DeskScale,
    });
    let mut overrides = args.overrides.clone();
    overrides.extend(extra);
    ExperimentConfig::load(args.config.as_deref(), preset, &overrides)
}

fn config_error(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => match load(&config, Vec::new()) {
            Ok(cfg) => {
                print!("{}", cfg.to_toml());
                println!("\n# derived\n# noise_w = {:e}\n# pt_w = {:e}", cfg.noise_watts(), cfg.pt_watts());
                ExitCode::SUCCESS
            }
            Err(e) => config_error(&e),
        },
        Command::Run { config, experiment, seed, trials, out } => {
            let mut extra = Vec::new();
            if let Some(s) = seed {
                extra.push(format!("sim.seed={s}"));
            }
            if let Some(t) = trials {
                extra.push(format!("sim.trials={t}"));
            }
            let cfg = match load(&config, extra) {
                Ok(c) => c,
                Err(e) => return config_error(&e),
            };
            let exp = Experiment::from(experiment);
            log::info!("running {exp} with seed {} and {} trials", cfg.sim.seed, cfg.sim.trials);
            match run_experiment(exp, &cfg, &out) {
                Ok(summary) => {
                    log::info!("{exp} finished in {:.1} s: {}", summary.wall_time_s, summary.files.join(", "));
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
    }
}
