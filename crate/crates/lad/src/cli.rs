use std::io::{Read, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::formats::{read_dataset, write_dataset, Checkpoint, MetricsFile, CSV_HEADER};
use crate::io::{append_csv, read_to_string};
use crate::pool::Pool;
use crate::run;

#[derive(Debug, Parser)]
#[command(name = "lad", version, about = "Label assignment distillation experiments on a synthetic detection world")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Threads {
    /// Worker threads (0 = one per core). Results do not depend on this.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a scene dataset as JSON Lines.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Id of the first scene; ranges from the same seed never overlap.
        #[arg(long, default_value_t = 0)]
        first_id: u64,
    },
    /// Train under the configured strategy.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint path; co-learning writes `<out>.a` and `<out>.b`.
        #[arg(long)]
        out: PathBuf,
        /// History log (default `<out>.history.jsonl`).
        #[arg(long)]
        history: Option<PathBuf>,
        #[command(flatten)]
        threads: Threads,
    },
    /// Evaluate a checkpoint; prints metrics JSON.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Append a row to this CSV file.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Run label in the outputs (default: checkpoint file name).
        #[arg(long)]
        run_id: Option<String>,
        #[command(flatten)]
        threads: Threads,
    },
    /// Dump costs, mixture fits and labels for one scene.
    Assign {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        scene: u64,
    },
    /// Fit the two-component mixture to newline-separated costs.
    GmmFit {
        /// Input file; stdin when omitted or `-`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Gen { config, count, out: path, first_id } => {
            let exp = ExperimentConfig::load(&config)?;
            let scenes = run::generate(&exp, first_id, count)?;
            write_dataset(&path, &scenes)
        }
        Command::Train { config, data, out: path, history, threads } => {
            let exp = ExperimentConfig::load(&config)?;
            let teacher = run::load_teacher(&exp)?;
            let pool = Pool::new(threads.threads)?;
            let scenes = read_dataset(&data, &exp.world)?;
            let prepared = run::prepare(&exp, &scenes, &pool);
            let outcome = run::train_run(&exp, &prepared, teacher.as_ref(), &pool)?;
            let history = history.unwrap_or_else(|| {
                let mut p = path.as_os_str().to_owned();
                p.push(".history.jsonl");
                p.into()
            });
            for p in run::save_outcome(&exp, &outcome, &path, &history)? {
                emit(out, &format!("wrote {}", p.display()))?;
            }
            emit(out, &format!("wrote {}", history.display()))
        }
        Command::Eval { config, checkpoint, data, csv, run_id, threads } => {
            let exp = ExperimentConfig::load(&config)?;
            let ckpt = Checkpoint::read(&checkpoint)?;
            let params = Checkpoint::load_params(&checkpoint, &exp.model_hash())?;
            let pool = Pool::new(threads.threads)?;
            let scenes = read_dataset(&data, &exp.world)?;
            let prepared = run::prepare(&exp, &scenes, &pool);
            let report = run::eval_run(&exp, &params, &prepared, &pool)?;
            let run_id = run_id.unwrap_or_else(|| {
                checkpoint
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default()
            });
            let metrics = MetricsFile::new(&run_id, &ckpt.strategy, exp.train.seed, report);
            if let Some(csv) = csv {
                append_csv(&csv, CSV_HEADER, &metrics.csv_row())?;
            }
            emit(out, &metrics.to_json())
        }
        Command::Assign { config, checkpoint, data, scene } => {
            let exp = ExperimentConfig::load(&config)?;
            let params = Checkpoint::load_params(&checkpoint, &exp.model_hash())?;
            let scenes = read_dataset(&data, &exp.world)?;
            let found = scenes
                .iter()
                .find(|s| s.id == scene)
                .ok_or_else(|| Error::Usage(format!("scene {scene} not found in {}", data.display())))?;
            let prepared = run::prepare(&exp, std::slice::from_ref(found), &lad_core::exec::Sequential);
            let dump = run::assign_dump(&exp, &params, &prepared[0])?;
            emit(out, &serde_json::to_string_pretty(&dump).expect("dump serializes"))
        }
        Command::GmmFit { input } => {
            let text = match input {
                Some(p) if p.as_os_str() != "-" => read_to_string(&p)?,
                _ => {
                    let mut s = String::new();
                    std::io::stdin()
                        .read_to_string(&mut s)
                        .map_err(|e| Error::io("<stdin>", e))?;
                    s
                }
            };
            let dump = run::gmm_fit_text(&text).map_err(Error::Usage)?;
            emit(out, &serde_json::to_string_pretty(&dump).expect("fit serializes"))
        }
    }
}
