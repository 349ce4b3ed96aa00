use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use learned_schwarz::evalcli::{self, Method, RunConfig};
use learned_schwarz::mggnn::ModelParams;
use learned_schwarz::train::{self, prepare};
use learned_schwarz::Error;

/// Learned two-level Schwarz preconditioners.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Base settings: `smoke` (30 grids, 3 epochs) or `full` (1000 grids, 20 epochs).
    #[arg(long, global = true, default_value = "smoke")]
    profile: String,
    /// TOML file layered over the profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted overrides, e.g. `--set train.lr=1e-3`.
    #[arg(long = "set", global = true)]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate training and held-out grids.
    GenData {
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Train a model; uses `<data>/train` when present.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "model")]
        out: PathBuf,
    },
    /// Compare learned and classical preconditioners on held-out grids.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
    },
    /// Train and evaluate one model per ablation setting.
    Ablate {
        /// Restrict to groups: heads, loss, sparsity, layers, arch.
        #[arg(long)]
        only: Vec<String>,
        #[arg(long, default_value = "ablate")]
        out: PathBuf,
    },
    /// Time model forward passes across grid sizes.
    Scaling {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "scaling")]
        out: PathBuf,
    },
    /// Surrogate statistics and gradient checks.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Outcome {
    Ok,
    Diverged,
    Failed,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = std::env::var("LSCHWARZ_WORKERS").ok().and_then(|v| v.parse().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cli = Cli::parse();
    let cfg = match RunConfig::load(&cli.profile, cli.config.as_deref(), &cli.set) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(cli.command, &cfg) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(1),
        Ok(Outcome::Diverged) => {
            eprintln!("more than half of the runs hit the iteration limit");
            ExitCode::from(3)
        }
        Err(e @ (Error::Config(_) | Error::Parse(_))) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Command, cfg: &RunConfig) -> learned_schwarz::Result<Outcome> {
    match cmd {
        Command::GenData { out } => {
            let items = train::make_dataset(&cfg.train.data, cfg.train.seed)?;
            train::save_dataset(&items, &cfg.train.data, cfg.train.seed, &out.join("train"))?;
            let tests = evalcli::test_grids(&cfg.eval, &cfg.train)?;
            evalcli::save_test_set(&tests, &evalcli::test_targets(&cfg.eval), &cfg.train.data, cfg.eval.seed, &out.join("test"))?;
            fs::write(out.join("run.toml"), cfg.to_toml()?)?;
            info!("{} training and {} held-out grids in {}", items.len(), tests.len(), out.display());
        }
        Command::Train { data, out } => {
            let items = match data {
                Some(d) => train::load_dataset(&d.join("train"))?,
                None => train::make_dataset(&cfg.train.data, cfg.train.seed)?,
            };
            let grids = prepare(items, &cfg.train.model)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("run.toml"), cfg.to_toml()?)?;
            let res = train::train(&cfg.train, &grids, Some(&out))?;
            info!("checkpoint {}", train::checkpoint_path(&out).display());
            if let Some(last) = res.history.epochs.last() {
                println!("final mean loss {:.6}", last.mean_loss);
            }
        }
        Command::Eval { checkpoint, data, out } => {
            let params = ModelParams::load(&checkpoint)?;
            let (grids, targets) = match data {
                Some(d) => evalcli::load_test_set(&d.join("test"))?,
                None => (evalcli::test_grids(&cfg.eval, &cfg.train)?, evalcli::test_targets(&cfg.eval)),
            };
            let rep = evalcli::evaluate(&grids, &targets, Some((&params, cfg.train.heads)), &Method::ALL, &cfg.eval);
            rep.write_all(&out)?;
            for s in rep.summary() {
                println!("{:<26} stationary {:>8.2}  fgmres {:>7.2}  diverged {}", s.method, s.mean_stationary, s.mean_fgmres, s.diverged);
            }
            if rep.divergence_dominated() {
                return Ok(Outcome::Diverged);
            }
        }
        Command::Ablate { only, out } => {
            let variants = evalcli::ablation_variants(&only);
            if variants.is_empty() {
                return Err(Error::Config(format!("no ablation groups match {only:?}; use {:?}", evalcli::ABLATION_GROUPS)));
            }
            let (_, summary) = evalcli::ablate(cfg, &variants, &out)?;
            for s in summary {
                println!("{:<9} {:<14} learned {:>8.2} / {:>7.2}  ras-2level {:>8.2} / {:>7.2}", s.group, s.variant, s.mean_stationary, s.mean_fgmres, s.baseline_stationary, s.baseline_fgmres);
            }
        }
        Command::Scaling { checkpoint, out } => {
            let params = load_or_init(checkpoint.as_deref(), cfg)?;
            let rows = evalcli::scaling(&params, &cfg.scaling, &cfg.train)?;
            fs::create_dir_all(&out)?;
            evalcli::write_scaling_csv(&rows, &out.join("scaling.csv"))?;
            for w in rows.windows(2) {
                println!("n {:>6} -> {:>6}: time ratio {:.2}", w[0].n, w[1].n, w[1].median_seconds / w[0].median_seconds);
            }
        }
        Command::Verify { seed } => {
            let mut ok = true;
            for line in evalcli::verify_all(&cfg.train.model, seed)? {
                println!("{} {:<10} {}", if line.passed { "PASS" } else { "FAIL" }, line.name, line.detail);
                ok &= line.passed;
            }
            if !ok {
                return Ok(Outcome::Failed);
            }
        }
    }
    Ok(Outcome::Ok)
}

fn load_or_init(path: Option<&Path>, cfg: &RunConfig) -> learned_schwarz::Result<ModelParams> {
    match path {
        Some(p) => ModelParams::load(p),
        None => Ok(ModelParams::init(&cfg.train.model, cfg.train.seed)),
    }
}
