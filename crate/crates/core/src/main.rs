use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mca_core::runner::{
    apply_override, cmd_evaluate, cmd_ingest, cmd_report, cmd_simulate, cmd_train, exit_code,
    ExperimentConfig, LineageRef,
};
use mca_core::Result;

/// Mass-conserving gated-node rainfall-runoff models: ingest, train, evaluate.
#[derive(Parser, Debug)]
#[command(name = "mca", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Experiment configuration (TOML).
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Output root; falls back to the config, then $MCA_OUTPUT_ROOT, then ./mca-out.
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
    /// Override any config field, e.g. `--set train.epochs=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Read forcing, build spin-up, split subsets and flow groups.
    Ingest {
        #[arg(long)]
        forcing: Option<PathBuf>,
        #[arg(long)]
        split_seed: Option<u64>,
        #[arg(long)]
        spinup_repeats: Option<usize>,
        #[arg(long)]
        n_groups: Option<usize>,
    },
    /// Train one model, or the whole campaign of the config.
    Train {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        seed_base: Option<u64>,
        /// Parent run directory or file, optionally `PATH:sm,ch,gw`. Repeatable.
        #[arg(long, value_name = "RUN[:ROLES]")]
        lineage: Vec<String>,
    },
    /// Score a trained run and export trace, reports and hydrographs.
    Evaluate {
        #[command(flatten)]
        model: ModelArgs,
        /// Run directory (selected run) or run file.
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Export the full trace of a trained run.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        run: Option<PathBuf>,
        /// Forcing file to drive the run instead of the ingested series.
        #[arg(long)]
        forcing: Option<PathBuf>,
    },
    /// Comparison table over all evaluated runs.
    Report,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Variant label, e.g. MA5BP2 or MA1-const.
    #[arg(long)]
    variant: Option<String>,
    /// Run name; defaults to the variant label.
    #[arg(long)]
    name: Option<String>,
}

impl ModelArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(v) = &self.variant {
            cfg.model.variant = v.clone();
        }
        if let Some(n) = &self.name {
            cfg.model.name = Some(n.clone());
        }
    }
}

fn effective_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.global.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for s in &cli.global.set {
        cfg = apply_override(&cfg, s)?;
    }
    if let Some(o) = &cli.global.output {
        cfg.output_dir = Some(o.clone());
    }
    match &cli.command {
        Command::Ingest {
            forcing,
            split_seed,
            spinup_repeats,
            n_groups,
        } => {
            if let Some(f) = forcing {
                cfg.forcing.path = Some(f.clone());
            }
            if let Some(s) = split_seed {
                cfg.forcing.split_seed = *s;
            }
            if let Some(r) = spinup_repeats {
                cfg.forcing.spinup_repeats = *r;
            }
            if let Some(n) = n_groups {
                cfg.forcing.n_groups = *n;
            }
        }
        Command::Train {
            model,
            epochs,
            seeds,
            seed_base,
            lineage,
        } => {
            model.apply(&mut cfg);
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            if let Some(s) = seeds {
                cfg.train.seeds = *s;
            }
            if let Some(b) = seed_base {
                cfg.train.seed_base = *b;
            }
            if !lineage.is_empty() {
                cfg.lineage = lineage
                    .iter()
                    .map(|l| LineageRef::parse(l))
                    .collect::<Result<_>>()?;
            }
            if model.variant.is_some() {
                // an explicit model replaces the campaign of the config file
                cfg.campaign.clear();
            }
        }
        Command::Evaluate { model, .. } | Command::Simulate { model, .. } => model.apply(&mut cfg),
        Command::Report => {}
    }
    cfg.resolve_output();
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = effective_config(cli)?;
    match &cli.command {
        Command::Ingest { .. } => {
            let art = cmd_ingest(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&art.summary)?);
        }
        Command::Train { .. } => {
            for out in cmd_train(&cfg)? {
                println!(
                    "{}: {} runs, selected seed {} (selection KGEss {:.4}) -> {}",
                    out.name,
                    out.runs,
                    out.selected.seed,
                    out.selected.selection_kge_ss,
                    out.dir.display()
                );
            }
        }
        Command::Evaluate { run, .. } => {
            let out = cmd_evaluate(&cfg, run.as_deref())?;
            print!("{}", out.report.to_tables());
            println!("written to {}", out.dir.display());
        }
        Command::Simulate { run, forcing, .. } => {
            let path = cmd_simulate(&cfg, run.as_deref(), forcing.as_deref())?;
            println!("{}", path.display());
        }
        Command::Report => {
            let path = cmd_report(&cfg)?;
            print!("{}", std::fs::read_to_string(&path).unwrap_or_default());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
