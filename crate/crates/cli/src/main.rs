//! `marl` — train, sweep, and evaluate the coordination learners.
//!
//! Exit codes: 0 on success, 1 on user error (bad arguments, unreadable
//! config, missing files), 2 on run fault.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use marl_core::config::ExperimentConfig;
use marl_core::harness::{self, classify_policy, greedy_rollout, resolve_layout, RunError};
use marl_core::{Agent, Cmotp};

mod sweep;

#[derive(Parser)]
#[command(
    name = "marl",
    about = "Cooperative grid-world training with lenient and hysteretic deep Q-learners",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training configuration and write its run directory.
    Train(TrainArgs),
    /// Run the K x d x xi hyper-parameter grid and write heatmap.csv.
    Sweep(sweep::SweepArgs),
    /// Greedy rollouts from a run directory's checkpoints.
    Eval(EvalArgs),
    /// Exact planners over layouts.
    Oracle(OracleArgs),
}

#[derive(Args)]
pub(crate) struct CommonOverrides {
    /// Base config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Algorithm: ddqn | hdqn | shdqn | ldqn.
    #[arg(long)]
    algo: Option<String>,
    /// Layout: built-in name (original, narrow, stochastic, desk) or path.
    #[arg(long)]
    layout: Option<String>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    step_limit: Option<u32>,
    /// Exploration policy: epsilon | tbar.
    #[arg(long)]
    exploration: Option<String>,
    /// Temperature-greedy exponent.
    #[arg(long)]
    xi: Option<f64>,
    /// Leniency moderation factor.
    #[arg(long)]
    k: Option<f64>,
    /// Retroactive schedule decay rate.
    #[arg(long)]
    d: Option<f64>,
    /// Maximum-temperature decay coefficient.
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Hysteretic rate as a fraction of alpha.
    #[arg(long)]
    beta: Option<f64>,
    /// Network: full | tiny.
    #[arg(long)]
    network: Option<String>,
    #[arg(long)]
    slippery: Option<bool>,
    #[arg(long)]
    noisy: Option<bool>,
    /// Leniency decay flavor: tds | atf.
    #[arg(long)]
    leniency: Option<String>,
    /// Output directory for run artifacts.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    overrides: CommonOverrides,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory containing config.cfg and agent checkpoints.
    #[arg(long)]
    run_dir: PathBuf,
    /// Number of greedy rollouts.
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Layout override (mismatched shapes are rejected).
    #[arg(long)]
    layout: Option<String>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(subcommand)]
    command: OracleCommand,
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Print the optimal joint step count for a layout.
    Bfs {
        #[arg(long)]
        layout: String,
    },
}

/// User mistakes exit 1; faults inside a run exit 2.
pub(crate) enum CliError {
    User(String),
    Fault(String),
}

impl CliError {
    fn code(&self) -> ExitCode {
        match self {
            CliError::User(_) => ExitCode::from(1),
            CliError::Fault(_) => ExitCode::from(2),
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::User(m) | CliError::Fault(m) => m,
        }
    }
}

pub(crate) fn user<E: std::fmt::Display>(e: E) -> CliError {
    CliError::User(e.to_string())
}

pub(crate) fn classify_run_error(e: RunError) -> CliError {
    match e {
        RunError::Layout { .. } | RunError::LayoutIo { .. } => CliError::User(e.to_string()),
        other => CliError::Fault(other.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are not errors.
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Sweep(args) => sweep::cmd_sweep(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Oracle(args) => cmd_oracle(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

/// Builds the effective config from a file plus command-line overrides.
pub(crate) fn build_config(overrides: &CommonOverrides) -> Result<ExperimentConfig, CliError> {
    let mut config = match &overrides.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| user(format!("config {}: {e}", path.display())))?;
            ExperimentConfig::parse(&text).map_err(user)?
        }
        None => ExperimentConfig::default(),
    };
    let mut set = |section: &str, key: &str, value: String| -> Result<(), CliError> {
        config.apply(section, key, &value).map_err(user)
    };
    if let Some(v) = overrides.seed {
        set("run", "seed", v.to_string())?;
    }
    if let Some(v) = &overrides.algo {
        set("run", "algorithm", v.clone())?;
    }
    if let Some(v) = &overrides.layout {
        set("run", "layout", v.clone())?;
    }
    if let Some(v) = overrides.episodes {
        set("run", "episodes", v.to_string())?;
    }
    if let Some(v) = overrides.step_limit {
        set("run", "step_limit", v.to_string())?;
    }
    if let Some(v) = &overrides.exploration {
        set("agent", "exploration", v.clone())?;
    }
    if let Some(v) = overrides.xi {
        set("agent", "xi", v.to_string())?;
    }
    if let Some(v) = overrides.k {
        set("agent", "k", v.to_string())?;
    }
    if let Some(v) = overrides.d {
        set("agent", "d", v.to_string())?;
    }
    if let Some(v) = overrides.mu {
        set("agent", "mu", v.to_string())?;
    }
    if let Some(v) = overrides.alpha {
        set("agent", "alpha", v.to_string())?;
    }
    if let Some(v) = overrides.beta {
        set("agent", "beta", v.to_string())?;
    }
    if let Some(v) = &overrides.network {
        set("run", "network", v.clone())?;
    }
    if let Some(v) = overrides.slippery {
        set("run", "slippery", v.to_string())?;
    }
    if let Some(v) = overrides.noisy {
        set("run", "noisy", v.to_string())?;
    }
    if let Some(v) = &overrides.leniency {
        set("agent", "leniency", v.clone())?;
    }
    if let Some(v) = &overrides.output {
        set("run", "output", v.display().to_string())?;
    }
    Ok(config)
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let config = build_config(&args.overrides)?;
    // Validate the layout and agent config before the long run starts.
    resolve_layout(&config.layout).map_err(classify_run_error)?;
    config.agent_config().validate().map_err(user)?;
    let (dir, result) = harness::execute_run(&config).map_err(classify_run_error)?;
    let csp = result
        .csp
        .map(|v| format!("{v:.1}%"))
        .unwrap_or_else(|| "n/a".into());
    println!(
        "run {} episodes={} spe={:.1} csp={} spr={} policy={} dir={}",
        config.run_id(),
        result.episodes.len(),
        result.spe,
        csp,
        result.spr,
        result.converged_policy.tag(),
        dir.display()
    );
    Ok(())
}

/// Loads the two agents a run directory was written with.
fn load_agents(dir: &Path, config: &ExperimentConfig) -> Result<(Agent, Agent), CliError> {
    let layout = resolve_layout(&config.layout).map_err(classify_run_error)?;
    let spec = match config.network {
        marl_core::config::NetworkChoice::Full => {
            marl_core::nn::q_network(layout.height, layout.width, marl_core::env::ACTION_COUNT)
        }
        marl_core::config::NetworkChoice::Tiny => marl_core::nn::tiny_q_network(
            layout.height,
            layout.width,
            marl_core::env::ACTION_COUNT,
        ),
    };
    let mut agents = Vec::new();
    for name in ["agent1.ckpt", "agent2.ckpt"] {
        let path = dir.join(name);
        let bytes = std::fs::read(&path)
            .map_err(|e| user(format!("checkpoint {}: {e}", path.display())))?;
        let mut agent = Agent::new(
            config.agent_config(),
            spec.clone(),
            marl_core::hashing::StateHasher::Exact,
            0,
        )
        .map_err(user)?;
        agent.restore(&bytes).map_err(user)?;
        agents.push(agent);
    }
    let agent2 = agents.pop().expect("two agents");
    let agent1 = agents.pop().expect("two agents");
    Ok((agent1, agent2))
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let config_path = args.run_dir.join("config.cfg");
    let text = std::fs::read_to_string(&config_path)
        .map_err(|e| user(format!("config {}: {e}", config_path.display())))?;
    let mut config = ExperimentConfig::parse(&text).map_err(user)?;
    if let Some(layout) = &args.layout {
        config.layout = layout.clone();
    }
    let (agent1, agent2) = load_agents(&args.run_dir, &config)?;
    let layout = resolve_layout(&config.layout).map_err(classify_run_error)?;
    let env = Cmotp::new(layout).with_step_limit(config.step_limit);

    let mut rng = rand_seeded(config.seed);
    let mut total_steps = 0u64;
    let mut deliveries = 0usize;
    for trial in 0..args.trials {
        let (zone, steps) = greedy_rollout(&env, &agent1, &agent2, config.noisy, &mut rng);
        let zone_name = zone
            .map(|z| env.layout.dropzones[z].id.to_string())
            .unwrap_or_else(|| "-".into());
        println!("trial {trial}: zone={zone_name} steps={steps}");
        total_steps += steps as u64;
        if zone.is_some() {
            deliveries += 1;
        }
    }
    let verdict = classify_policy(
        &env,
        &agent1,
        &agent2,
        args.trials,
        config.noisy,
        &mut rand_seeded(config.seed + 1),
    );
    let mean = total_steps as f64 / args.trials.max(1) as f64;
    println!(
        "verdict={} deliveries={}/{} mean_steps={mean:.1}",
        verdict.tag(),
        deliveries,
        args.trials
    );
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<(), CliError> {
    match args.command {
        OracleCommand::Bfs { layout } => {
            let layout = resolve_layout(&layout).map_err(classify_run_error)?;
            let env = Cmotp::new(layout);
            match marl_core::oracle::bfs_optimal_steps(&env) {
                Some(steps) => println!("optimal joint steps: {steps}"),
                None => println!("unsolvable: no drop-zone reachable"),
            }
            Ok(())
        }
    }
}

fn rand_seeded(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand_chacha::rand_core::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
