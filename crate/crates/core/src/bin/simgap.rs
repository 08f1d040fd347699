use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use simgap::manager::ApplyMode;
use simgap::oned::SimKind;
use simgap::pipeline::{self, files, PipelineConfig, PipelineReport, OUT_DIR_ENV};
use simgap::{Error, Result};

/// Estimate where a simulator and the real system disagree, forge correction
/// kernels, and evaluate controllers with and without them.
#[derive(Parser, Debug)]
#[command(name = "simgap", version)]
struct Cli {
    #[command(flatten)]
    opts: Overrides,
    #[command(subcommand)]
    cmd: Command,
}

/// Flags override the config file, which overrides built-in defaults.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// TOML config file
    #[arg(long, short = 'c', global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, env = OUT_DIR_ENV)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Missions per evaluation curve
    #[arg(long, global = true)]
    n_missions: Option<u64>,
    /// Schema TOML (defaults to the testbed schema)
    #[arg(long, global = true)]
    schema: Option<PathBuf>,
    #[arg(long, global = true)]
    eps_c: Option<f64>,
    #[arg(long, global = true)]
    eps_p: Option<f64>,
    #[arg(long, global = true)]
    sigma: Option<f64>,
    #[arg(long, global = true)]
    theta_act: Option<f64>,
    /// Least-squares fit window
    #[arg(long, global = true)]
    window: Option<usize>,
    #[arg(long, global = true)]
    n_rollouts: Option<usize>,
    #[arg(long, global = true)]
    max_len: Option<usize>,
    #[arg(long, global = true)]
    per_action_maps: Option<bool>,
    /// always | stochastic
    #[arg(long, global = true, value_parser = parse_apply_mode)]
    apply_mode: Option<ApplyMode>,
    /// SARSA training episodes
    #[arg(long, global = true)]
    episodes: Option<u64>,
    #[arg(long, global = true)]
    n_actions: Option<usize>,
    /// Testbed deadline in steps
    #[arg(long, global = true)]
    deadline_steps: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the baseline controller on the design or deploy simulator
    Simulate {
        #[arg(long, value_parser = parse_sim)]
        sim: SimKind,
        /// Missions (defaults to n_missions)
        #[arg(long)]
        n: Option<u64>,
    },
    /// Build kernels from a simulated and a physical log
    Genker {
        #[arg(long)]
        sim_log: PathBuf,
        #[arg(long)]
        phy_log: PathBuf,
    },
    /// Baseline controller on the design simulator with kernels applied
    Rerun {
        #[arg(long)]
        kernels: PathBuf,
        #[arg(long)]
        n: Option<u64>,
    },
    /// Train a new controller on the kernel-managed simulator
    Redesign {
        #[arg(long)]
        kernels: PathBuf,
    },
    /// Evaluate a trained controller on the deploy simulator
    Redeploy {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        n: Option<u64>,
    },
    /// Recount a run directory from its logs and print the report
    Report {
        /// Run directory (defaults to the output directory)
        dir: Option<PathBuf>,
    },
    /// simulate, genker, rerun, redesign, redeploy and report in one go
    Run,
    /// Print the effective configuration
    Config,
}

fn parse_apply_mode(s: &str) -> std::result::Result<ApplyMode, String> {
    match s {
        "always" => Ok(ApplyMode::Always),
        "stochastic" => Ok(ApplyMode::Stochastic),
        _ => Err(format!("expected 'always' or 'stochastic', got '{s}'")),
    }
}

fn parse_sim(s: &str) -> std::result::Result<SimKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn build_config(o: &Overrides) -> Result<PipelineConfig> {
    let mut cfg = match &o.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    macro_rules! set {
        ($($field:ident => $target:expr),* $(,)?) => {
            $(if let Some(v) = o.$field.clone() { $target = v; })*
        };
    }
    set! {
        out_dir => cfg.out_dir,
        seed => cfg.seed,
        n_missions => cfg.n_missions,
        eps_c => cfg.eps_c,
        eps_p => cfg.eps_p,
        sigma => cfg.sigma,
        theta_act => cfg.theta_act,
        window => cfg.window,
        n_rollouts => cfg.n_rollouts,
        max_len => cfg.max_len,
        per_action_maps => cfg.per_action_maps,
        apply_mode => cfg.apply_mode,
        episodes => cfg.sarsa.episodes,
        n_actions => cfg.n_actions,
        deadline_steps => cfg.testbed.deadline_steps,
    }
    if let Some(s) = &o.schema {
        cfg.schema = Some(s.clone());
    }
    cfg.validate().map_err(|e| Error::Usage(e.to_string()))?;
    Ok(cfg)
}

fn print_report(r: &PipelineReport) -> Result<()> {
    print!("{}", r.to_text());
    if r.is_clean() {
        Ok(())
    } else {
        Err(Error::Invariant(format!(
            "{} recount mismatches",
            r.mismatches.len()
        )))
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = build_config(&cli.opts)?;
    let n = |n: Option<u64>| n.unwrap_or(cfg.n_missions);
    match cli.cmd {
        Command::Simulate { sim, n: k } => {
            let s = pipeline::cmd_simulate(&cfg, sim, n(k))?;
            println!("{}: final ATR {:.4}", s.curve, s.final_atr);
        }
        Command::Genker { sim_log, phy_log } => {
            let g = pipeline::cmd_genker(&cfg, &sim_log, &phy_log)?;
            println!(
                "{} divergences ({} unique), {} kernels -> {}",
                g.divergences,
                g.unique_divergences,
                g.kernels,
                cfg.out_dir.join(files::KERNELS).display()
            );
        }
        Command::Rerun { kernels, n: k } => {
            let s = pipeline::cmd_rerun(&cfg, &kernels, n(k))?;
            println!("{}: final ATR {:.4}", s.curve, s.final_atr);
        }
        Command::Redesign { kernels } => {
            let r = pipeline::cmd_redesign(&cfg, &kernels)?;
            println!(
                "trained {} episodes; {}: final ATR {:.4}",
                r.episodes, r.evaluation.curve, r.evaluation.final_atr
            );
        }
        Command::Redeploy { policy, n: k } => {
            let s = pipeline::cmd_redeploy(&cfg, &policy, n(k))?;
            println!("{}: final ATR {:.4}", s.curve, s.final_atr);
        }
        Command::Report { dir } => {
            let dir = dir.unwrap_or_else(|| cfg.out_dir.clone());
            print_report(&pipeline::cmd_report(Path::new(&dir))?)?;
        }
        Command::Run => print_report(&pipeline::run_all(&cfg)?)?,
        Command::Config => print!("{}", cfg.to_toml_string()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
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
