use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hieralign::commands::{self, TrainOptions};
use hieralign::{Error, Result, RunConfig};
use hieralign_core::ablation::Axis;
use hieralign_core::eval::Mode;

#[derive(Parser)]
#[command(
    name = "hieralign",
    version,
    about = "Multi-resolution vision-language pre-training on synthetic slides"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic corpus
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train on a generated corpus
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// corpus directory written by gen-data
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// resume from this checkpoint
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// stop once this many steps are complete
        #[arg(long)]
        until: Option<u64>,
    },
    /// Zero-shot evaluation of a checkpoint
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// must hash to the checkpoint's configuration when given
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "guided")]
        mode: ModeArg,
        /// ensemble every prompt template instead of the first
        #[arg(long)]
        pe: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate every arm of one ablation axis
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        axis: String,
        #[arg(long, value_enum, default_value = "guided")]
        mode: ModeArg,
        #[arg(long)]
        pe: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Guided,
    Classical,
    Both,
}

impl ModeArg {
    fn modes(self) -> Vec<Mode> {
        match self {
            ModeArg::Guided => vec![Mode::Guided],
            ModeArg::Classical => vec![Mode::Classical],
            ModeArg::Both => vec![Mode::Guided, Mode::Classical],
        }
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::parse("")?,
    };
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData { config, seed, out } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let h = commands::gen_data(&cfg, config.as_deref(), &out)?;
            println!("wrote {} (manifest {h})", out.display());
        }
        Cmd::Train {
            config,
            seed,
            data,
            out,
            checkpoint,
            until,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let opts = TrainOptions {
                resume: checkpoint,
                until,
            };
            let o = commands::train(&cfg, config.as_deref(), &data, &out, &opts)?;
            if let Some(last) = o.log.records.last() {
                println!("step {} total {:.4}", last.step, last.loss.total);
            }
            println!("wrote {} (manifest {})", out.display(), o.manifest_hash);
        }
        Cmd::Eval {
            checkpoint,
            config,
            data,
            mode,
            pe,
            out,
        } => {
            let cfg = config.as_deref().map(RunConfig::load).transpose()?;
            let reports = commands::eval(&checkpoint, cfg.as_ref(), &data, &mode.modes(), pe, &out)?;
            print!("{}", hieralign::report::render_reports(&reports));
        }
        Cmd::Ablate {
            config,
            seed,
            data,
            axis,
            mode,
            pe,
            out,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let axis = Axis::parse(&axis).map_err(|_| Error::Config {
                key: "--axis".into(),
                msg: format!("unknown axis {axis:?}; expected losses, k_o, resolution or parent_child"),
            })?;
            let mode = match mode {
                ModeArg::Both => {
                    return Err(Error::Config {
                        key: "--mode".into(),
                        msg: "ablate takes one mode".into(),
                    })
                }
                m => m.modes()[0],
            };
            let table = commands::ablate(&cfg, config.as_deref(), &data, axis, mode, pe, &out, |row| {
                eprintln!("{}: tile f1 {:.4}", row.arm, row.report.weighted_f1)
            })?;
            print!("{}", table.render());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.one_line());
            ExitCode::FAILURE
        }
    }
}
