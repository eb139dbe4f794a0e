//! `drnet`: generate synthetic data, train, evaluate, run the gradient suite
//! and export learned dilation factors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drnet::config::RunConfig;
use drnet::data::{self, Checkpoint};
use drnet::dump::{dilation_csv, dilation_factors};
use drnet::gradsuite;
use drnet::network::{DrNet, TaskKind};
use drnet::trainer::{self, LoopOptions, Trainer, BEST_CHECKPOINT, LOG_HEADER};
use drnet::{Error, Result};

#[derive(Parser)]
#[command(name = "drnet", version, about = "Point cloud classification and part segmentation")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Common {
    /// key=value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic train/test dataset to data_dir
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train on data_dir, writing the log and checkpoints to out_dir
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from out_dir/last.ckpt
        #[arg(long)]
        resume: bool,
        /// Stop once this many epochs are complete
        #[arg(long, value_name = "EPOCHS")]
        stop_after: Option<usize>,
    },
    /// Score a checkpoint on one split of data_dir
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to out_dir/best.ckpt
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Rescaled copies averaged per cloud (overrides the config)
        #[arg(long)]
        votes: Option<usize>,
        #[arg(long, default_value = "test", value_parser = ["train", "test"])]
        split: String,
        /// Also write the metric CSV here
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Check every analytic gradient against central finite differences
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Write x,y,z,dilation_factor,gate for every point of a cloud
    DilationDump {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Cloud text file (x y z [label] per line)
        #[arg(long)]
        cloud: PathBuf,
        /// E-M module, 1-based
        #[arg(long, default_value_t = 1)]
        layer: usize,
        /// Object category (segmentation models)
        #[arg(long, default_value_t = 0)]
        category: usize,
        /// Defaults to standard output
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn load_config(c: &Common) -> Result<RunConfig> {
    RunConfig::load(c.config.as_deref(), &c.set)
}

/// Builds the model described by `cfg` with the label counts stored in the
/// checkpoint, and loads its parameters.
fn load_model(cfg: &RunConfig, path: &Path) -> Result<DrNet<f32>> {
    let ckpt = data::load_checkpoint(path)?;
    model_from(cfg, &ckpt)
}

fn model_from(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<DrNet<f32>> {
    let (classes, categories) = Trainer::checkpoint_label_counts(ckpt)?;
    let mut net_cfg = cfg.train.net.clone();
    net_cfg.classes = classes;
    net_cfg.categories = categories;
    let mut net = DrNet::new(net_cfg, 0)?;
    ckpt.restore_store(&mut net.store)?;
    Ok(net)
}

fn cmd_gen(cfg: &RunConfig) -> Result<()> {
    let (train, test) = match cfg.task() {
        TaskKind::Classification => {
            data::gen_cls_dataset(cfg.data_seed, cfg.train_per_class, cfg.test_per_class, cfg.points)?
        }
        TaskKind::Segmentation => data::gen_seg_splits(cfg.data_seed, cfg.train_shapes, cfg.test_shapes, cfg.points)?,
    };
    std::fs::create_dir_all(&cfg.data_dir)?;
    data::save_dataset(&cfg.data_dir, &train, &test)?;
    println!(
        "wrote {} train and {} test clouds of {} points to {}",
        train.len(),
        test.len(),
        cfg.points,
        cfg.data_dir.display()
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig, resume: bool, stop_after: Option<usize>) -> Result<()> {
    let (train, test) = data::load_dataset(&cfg.data_dir)?;
    if train.task != cfg.task() {
        return Err(Error::Config("dataset task does not match the configured task".into()));
    }
    let mut tc = cfg.train.clone();
    tc.net.classes = train.num_classes();
    tc.net.categories = train.categories.len();
    let opts = LoopOptions {
        out_dir: Some(cfg.out_dir.clone()),
        resume,
        stop_after,
    };
    let val = (!test.is_empty()).then_some(&test);
    println!("{LOG_HEADER}");
    let (t, _) = trainer::train_loop(&tc, &train, val, &opts, |r| println!("{}", r.log_line()))?;
    println!(
        "finished {} epochs; best validation {:.4}; checkpoints in {}",
        t.epoch,
        t.best_val,
        cfg.out_dir.display()
    );
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>, votes: Option<usize>, split: &str, csv: Option<&Path>) -> Result<()> {
    let default = cfg.out_dir.join(BEST_CHECKPOINT);
    let net = load_model(cfg, checkpoint.unwrap_or(&default))?;
    let (train, test) = data::load_dataset(&cfg.data_dir)?;
    let ds = if split == "train" { &train } else { &test };
    let votes = votes.unwrap_or(cfg.votes);
    if votes == 0 {
        return Err(Error::InvalidArgument("votes must be at least 1".into()));
    }
    let report = trainer::evaluate(&net, ds, votes, cfg.train.seed)?;
    let text = report.to_csv();
    if let Some(p) = csv {
        std::fs::write(p, &text)?;
    }
    print!("{text}");
    println!("{} clouds, {votes} vote(s): {}", ds.len(), report.summary());
    Ok(())
}

/// Exit code for a failed gradient check (numerical failure).
const GRADCHECK_FAILED: u8 = 3;

/// Returns whether every check passed.
fn cmd_gradcheck(cfg: &RunConfig) -> Result<bool> {
    let checks = gradsuite::run_suite(cfg.train.seed)?;
    let mut failed = 0;
    for c in &checks {
        let status = if c.passed() { "ok" } else { "FAIL" };
        println!("{status:<4} {:<24} max rel err {:.3e} over {} entries", c.name, c.max_rel_error, c.entries);
        if !c.passed() {
            println!("     worst: {}", c.worst);
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("error: {failed} of {} gradient checks failed", checks.len());
        return Ok(false);
    }
    println!("all {} gradient checks passed", checks.len());
    Ok(true)
}

fn cmd_dump(cfg: &RunConfig, checkpoint: &Path, cloud: &Path, layer: usize, category: usize, output: Option<&Path>) -> Result<()> {
    let net = load_model(cfg, checkpoint)?;
    let c = data::load_cloud(cloud, None)?;
    let (factors, gate) = dilation_factors(&net, &c.coords, layer, category)?;
    let text = dilation_csv(&c.coords, &factors, &gate);
    match output {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Command::Gradcheck { common } = &cli.cmd {
        let ok = cmd_gradcheck(&load_config(common)?)?;
        return Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(GRADCHECK_FAILED) });
    }
    match cli.cmd {
        Command::Gen { common } => cmd_gen(&load_config(&common)?),
        Command::Train { common, resume, stop_after } => cmd_train(&load_config(&common)?, resume, stop_after),
        Command::Eval { common, checkpoint, votes, split, csv } => {
            cmd_eval(&load_config(&common)?, checkpoint.as_deref(), votes, &split, csv.as_deref())
        }
        Command::Gradcheck { .. } => unreachable!("handled above"),
        Command::DilationDump { common, checkpoint, cloud, layer, category, output } => cmd_dump(
            &load_config(&common)?,
            &checkpoint,
            &cloud,
            layer,
            category,
            output.as_deref(),
        ),
    }
    .map(|()| ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
