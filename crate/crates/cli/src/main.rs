use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use timgcn_cli::commands::{
    cmd_ablate, cmd_eval, cmd_gradcheck, cmd_synth, cmd_train, format_gradcheck, load_config, resolve_out_dir,
    EvalArgs, Overrides, CHECKPOINT_FILE, GRADCHECK_TOL,
};
use timgcn_cli::{CliError, Result, RunConfig, Split};
use timgcn_core::HorizonSet;

/// Human motion prediction with a temporal inception encoder and a GCN.
#[derive(Debug, Parser)]
#[command(name = "timgcn", version)]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Gradient-check tolerance.
    #[arg(long, global = true, default_value_t = GRADCHECK_TOL)]
    tol: f64,
    /// Rescale batch gradients whose global norm exceeds this.
    #[arg(long, global = true)]
    clip_norm: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on the config's data and write a checkpoint.
    Train {
        /// Separate TIM parameters for every coordinate.
        #[arg(long)]
        per_coordinate_params: bool,
    },
    /// Per-horizon errors of a checkpoint next to the zero-velocity baseline.
    Eval {
        /// Defaults to `<out>/checkpoint.json`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Motion CSV to evaluate instead of the config's data.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated horizons in ms.
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<f64>>,
    },
    /// Compare analytic and finite-difference gradients on a small model.
    Gradcheck,
    /// Train and compare the kernel-size / subsequence variants.
    Ablate,
    /// Generate a synthetic motion CSV.
    Synth {
        /// Synthetic spec (JSON); defaults to --config.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output CSV; defaults to `<out>/motion.csv`.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn require_config(cli: &Cli, overrides: &Overrides) -> Result<RunConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::validation("--config is required for this command"))?;
    load_config(path, overrides)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::validation(format!("--threads: {e}")))?;
    }
    let mut overrides = Overrides {
        seed: cli.seed,
        clip_norm: cli.clip_norm,
        per_coordinate_params: false,
    };
    match &cli.command {
        Command::Train { per_coordinate_params } => {
            overrides.per_coordinate_params = *per_coordinate_params;
            let cfg = require_config(&cli, &overrides)?;
            let out = resolve_out_dir(Some(&cfg), cli.out.as_deref());
            let art = cmd_train(&cfg, &out)?;
            if let Some(last) = art.history.last() {
                eprintln!("epoch {} mean loss {} lr {}", last.epoch, last.mean_loss, last.lr);
            }
            print!("{}", art.final_metrics.to_csv());
            eprintln!("wrote {}", out.display());
        }
        Command::Eval {
            checkpoint,
            split,
            data,
            horizons,
        } => {
            let cfg = require_config(&cli, &overrides)?;
            let out = resolve_out_dir(Some(&cfg), cli.out.as_deref());
            let horizons_ms = horizons.clone().map(HorizonSet::new).transpose()?;
            let args = EvalArgs {
                checkpoint: checkpoint.clone().unwrap_or_else(|| out.join(CHECKPOINT_FILE)),
                split: *split,
                data: data.clone(),
                horizons_ms,
            };
            let table = cmd_eval(&cfg, &args)?;
            std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
            let path = out.join(format!("eval_{}.csv", format!("{split:?}").to_lowercase()));
            table.save(&path)?;
            print!("{}", table.to_csv());
            eprintln!("wrote {}", path.display());
        }
        Command::Gradcheck => {
            let cfg = match &cli.config {
                Some(_) => Some(require_config(&cli, &overrides)?),
                None => None,
            };
            let seed = cli.seed.or(cfg.as_ref().map(|c| c.train.seed)).unwrap_or(0);
            let report = cmd_gradcheck(cfg.as_ref(), seed, cli.tol)?;
            print!("{}", format_gradcheck(&report));
            if !report.passed {
                return Err(CliError::Numeric(format!(
                    "gradient check failed: {:e} >= {:e}",
                    report.max_rel_err, report.tol
                )));
            }
        }
        Command::Ablate => {
            let cfg = require_config(&cli, &overrides)?;
            let out = resolve_out_dir(Some(&cfg), cli.out.as_deref());
            let outcome = cmd_ablate(&cfg, &out)?;
            eprint!("{}", outcome.report);
            print!("{}", outcome.table.to_csv());
        }
        Command::Synth { spec, csv } => {
            let spec = spec
                .clone()
                .or_else(|| cli.config.clone())
                .ok_or_else(|| CliError::validation("synth needs --spec <json>"))?;
            let csv = csv
                .clone()
                .unwrap_or_else(|| resolve_out_dir(None, cli.out.as_deref()).join("motion.csv"));
            let seq = cmd_synth(&spec, &csv)?;
            eprintln!("wrote {} ({} frames, K={})", csv.display(), seq.frames(), seq.coords());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
