use clap::{Args, Parser, Subcommand};
use qprune_cli::{cmd_compare, cmd_distill, cmd_eval, cmd_features, cmd_prune, cmd_train, CliError, CliResult, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

/// Quaternion CNN training, filter pruning, distillation and evaluation.
#[derive(Parser)]
#[command(name = "qprune", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a dataset directory.
    Train(Shared),
    /// Prune a checkpoint (optionally fine-tuning it).
    Prune {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        prune: PruneFlags,
    },
    /// Distill a teacher checkpoint into a student.
    Distill {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        prune: PruneFlags,
        #[command(flatten)]
        kd: KdFlags,
    },
    /// Evaluate a checkpoint: metric, parameters, MACs, inference time.
    Eval(Shared),
    /// Merge metrics CSV files into one sorted table.
    Compare(Shared),
    /// Write feature files from WAV clips or a synthetic dataset.
    Features(Shared),
}

#[derive(Args)]
struct Shared {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any config key, as KEY=VALUE (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct PruneFlags {
    /// l1, gm or op.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    ratio: Option<f64>,
    /// default, from:N, last:N, ordinals like 4,5 or idx:I,J.
    #[arg(long)]
    layers: Option<String>,
}

#[derive(Args)]
struct KdFlags {
    #[arg(long)]
    teacher: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long = "t2-scaling")]
    t2_scaling: bool,
}

fn base_config(s: &Shared) -> CliResult<RunConfig> {
    let mut cfg = match &s.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &s.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = s.seed {
        cfg.set("seed", seed.to_string())?;
    }
    if let Some(out) = &s.out {
        cfg.set("out", out.display().to_string())?;
    }
    Ok(cfg)
}

fn apply_prune_flags(cfg: &mut RunConfig, p: &PruneFlags) -> CliResult<()> {
    if let Some(m) = &p.method {
        cfg.set("method", m.clone())?;
    }
    if let Some(r) = p.ratio {
        cfg.set("ratio", r.to_string())?;
    }
    if let Some(l) = &p.layers {
        cfg.set("layers", l.clone())?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(s) => cmd_train(&base_config(&s)?).map(drop),
        Command::Prune { shared, prune } => {
            let mut cfg = base_config(&shared)?;
            apply_prune_flags(&mut cfg, &prune)?;
            cmd_prune(&cfg).map(drop)
        }
        Command::Distill { shared, prune, kd } => {
            let mut cfg = base_config(&shared)?;
            apply_prune_flags(&mut cfg, &prune)?;
            if let Some(t) = &kd.teacher {
                cfg.set("teacher", t.display().to_string())?;
            }
            if let Some(a) = kd.alpha {
                cfg.set("alpha", a.to_string())?;
            }
            if let Some(t) = kd.temperature {
                cfg.set("temperature", t.to_string())?;
            }
            if kd.t2_scaling {
                cfg.set("t2_scaling", "true")?;
            }
            cmd_distill(&cfg).map(drop)
        }
        Command::Eval(s) => cmd_eval(&base_config(&s)?).map(drop),
        Command::Compare(s) => cmd_compare(&base_config(&s)?).map(drop),
        Command::Features(s) => cmd_features(&base_config(&s)?).map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
