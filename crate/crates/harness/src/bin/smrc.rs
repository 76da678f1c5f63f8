use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use smrc_harness::checkpoint::Checkpoint;
use smrc_harness::config::{ExperimentConfig, Preset, SearchKind};
use smrc_harness::experiment;
use smrc_harness::fsutil::write_atomic;
use smrc_harness::records::read_runs;
use smrc_harness::Result;

#[derive(Parser)]
#[command(name = "smrc", version, about = "Self-modulated reservoir computing experiments")]
struct Cli {
    /// Config file (key=value); repeat to layer files, later ones win.
    #[arg(long, global = true)]
    config: Vec<PathBuf>,
    /// Training budget preset, applied before the config files.
    #[arg(long, global = true, value_parser = ["desk", "paper"])]
    preset: Option<String>,
    /// Base seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads [default: all cores].
    #[arg(long, global = true, env = "SMRC_WORKERS")]
    workers: Option<usize>,
    /// Reuse finished restarts instead of retraining them.
    #[arg(long, global = true)]
    resume: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the task dataset to <out>/dataset.
    Generate,
    /// Train all restarts of the configured cell.
    Train,
    /// Score a checkpoint on a materialized dataset.
    Evaluate {
        /// Defaults to the configured cell's best checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to <out>/dataset.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Search conventional-reservoir hyperparameters.
    Hpo {
        #[arg(long, value_parser = ["grid", "random"])]
        search: Option<String>,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Gate statistics and local sensitivity profiles of a trained model.
    Sensitivity {
        /// Defaults to the configured cell's best checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated propagation horizons; overrides `sensitivity.t_p`.
        #[arg(long, value_delimiter = ',')]
        t_p: Vec<usize>,
    },
    /// Train every cell of the sweep axes and write aggregates and plot data.
    Sweep,
    /// Summarize <out>/runs.csv.
    Report,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let preset = cli.preset.as_deref().map(str::parse::<Preset>).transpose()?;
    let mut cfg = ExperimentConfig::load(&cli.config, preset)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    let out = cfg.output_dir.clone();
    match cli.command {
        Command::Generate => {
            let m = experiment::generate(&cfg)?;
            println!("wrote {} train and {} test sequences to {}", m.n_train, m.n_test, out.join("dataset").display());
        }
        Command::Train => {
            let cell = experiment::train(&cfg, cli.resume)?;
            print!("{}", experiment::cell_summary(&cell));
            println!("best checkpoint: {}", experiment::best_checkpoint_path(&out, &cfg).display());
        }
        Command::Evaluate { checkpoint, data } => {
            let ck = checkpoint.unwrap_or_else(|| experiment::best_checkpoint_path(&out, &cfg));
            let data = data.unwrap_or_else(|| out.join("dataset"));
            let m = experiment::evaluate(&cfg, &ck, &data)?;
            println!("test_mse={} over {} sequences", m.test_mse, m.per_sequence_mse.len());
        }
        Command::Hpo { search, budget } => {
            if let Some(s) = search {
                cfg.hpo.search = s.parse::<SearchKind>()?;
            }
            if let Some(b) = budget {
                cfg.hpo.budget = b;
            }
            cfg.validate()?;
            let (trials, best) = experiment::hpo(&cfg)?;
            experiment::write_hpo(&out, &cfg, &trials, best)?;
            let t = &trials[best];
            println!(
                "best of {} trials: rho_in={} rho_hat_res={} xi={} val_mse={:?}",
                trials.len(),
                t.rho_in,
                t.rho_hat_res,
                t.xi,
                t.val_mse
            );
        }
        Command::Sensitivity { checkpoint, t_p } => {
            if !t_p.is_empty() {
                cfg.sensitivity.t_p = t_p;
            }
            cfg.validate()?;
            let ck_path = checkpoint.unwrap_or_else(|| experiment::best_checkpoint_path(&out, &cfg));
            let model = Checkpoint::load(&ck_path)?.to_model()?;
            let name = ck_path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            for f in experiment::sensitivity(&cfg, &model, &name)? {
                println!("wrote {}", f.display());
            }
        }
        Command::Sweep => {
            let cells = experiment::sweep(&cfg, cli.resume)?;
            for c in &cells {
                print!("{}", experiment::cell_summary(c));
            }
        }
        Command::Report => {
            let records = read_runs(&out.join("runs.csv"))?;
            let text = experiment::report(&records);
            write_atomic(&out.join("report.txt"), text.as_bytes())?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
