//! Orchestrates two independent learners through seeded episodes, collects
//! the per-episode metrics, and manages the autoencoder warm-up/freeze in
//! noisy mode.
//!
//! One run is one sequential loop; distinct runs share nothing and may
//! execute in parallel.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::agent::{Agent, AgentError};
use crate::config::{ExperimentConfig, NetworkChoice};
use crate::env::{parse_layout, Action, Cmotp, EnvError, Layout, LayoutError, ACTION_COUNT};
use crate::hashing::{ProjectionMatrix, StateHasher};
use crate::layouts;
use crate::nn::{
    autoencoder, reconstruction_loss_grad, AdamState, Network, NetworkSpec, NnError,
    AUTOENCODER_CODE_LAYER,
};
use crate::oracle::bfs_optimal_steps;

/// Amplitude of the uniform noise injected into the code layer while the
/// autoencoder trains; drives the sigmoid units toward saturation so the
/// rounded codes survive observation noise.
const CODE_NOISE_AMPLITUDE: f64 = 0.3;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("layout {path:?}: {source}")]
    Layout {
        path: String,
        source: LayoutError,
    },
    #[error("layout file {path:?}: {source}")]
    LayoutIo {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("episode {episode}, step {step}: non-finite loss")]
    NonFiniteLoss { episode: usize, step: u32 },
    #[error("output {path:?}: {source}")]
    Output {
        path: String,
        source: std::io::Error,
    },
}

/// Per-episode record; the unit the CSV files are built from.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub steps: u32,
    pub reward: f64,
    /// Coordinated fraction of attached-phase steps, in percent; `None`
    /// when the episode never reached the attached phase.
    pub coordinated_pct: Option<f64>,
    /// Mean exploration probability of agent 1 over the episode.
    pub explore_level: f64,
    /// Drop-zone index if the goods were delivered.
    pub delivered: Option<usize>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyClass {
    Optimal,
    Suboptimal,
    None,
}

impl PolicyClass {
    pub fn tag(self) -> &'static str {
        match self {
            PolicyClass::Optimal => "optimal",
            PolicyClass::Suboptimal => "suboptimal",
            PolicyClass::None => "none",
        }
    }
}

/// Aggregated outcome of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub episodes: Vec<EpisodeRecord>,
    /// Mean steps per episode over the final 100 episodes.
    pub spe: f64,
    /// Mean coordinated-steps percentage over the final 100 episodes that
    /// had an attached phase.
    pub csp: Option<f64>,
    /// Total steps across the run.
    pub spr: u64,
    pub converged_policy: PolicyClass,
}

impl RunResult {
    /// Copy with wall-clock timings zeroed; everything else in a run is a
    /// deterministic function of the configuration and seed.
    pub fn without_wall_times(&self) -> RunResult {
        let mut clone = self.clone();
        for e in clone.episodes.iter_mut() {
            e.wall_ms = 0;
        }
        clone
    }
}

/// Final-100-window metrics; recomputable from the episodes CSV.
pub fn aggregate(episodes: &[EpisodeRecord]) -> (f64, Option<f64>, u64) {
    let window = episodes.len().saturating_sub(100);
    let tail = &episodes[window..];
    let spe = if tail.is_empty() {
        0.0
    } else {
        tail.iter().map(|e| e.steps as f64).sum::<f64>() / tail.len() as f64
    };
    let mut csp_sum = 0.0;
    let mut csp_count = 0usize;
    for e in tail {
        if let Some(pct) = e.coordinated_pct {
            csp_sum += pct;
            csp_count += 1;
        }
    }
    let csp = if csp_count > 0 {
        Some(csp_sum / csp_count as f64)
    } else {
        None
    };
    let spr = episodes.iter().map(|e| e.steps as u64).sum();
    (spe, csp, spr)
}

/// Loads a layout by built-in name or file path.
pub fn resolve_layout(name_or_path: &str) -> Result<Layout, RunError> {
    let text = match layouts::builtin(name_or_path) {
        Some(text) => text.to_string(),
        None => std::fs::read_to_string(name_or_path).map_err(|source| RunError::LayoutIo {
            path: name_or_path.to_string(),
            source,
        })?,
    };
    parse_layout(&text).map_err(|source| RunError::Layout {
        path: name_or_path.to_string(),
        source,
    })
}

fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut bytes = [0u8; 16];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..].copy_from_slice(&salt.to_le_bytes());
    crate::hashing::fnv1a64(&bytes)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn network_spec(choice: NetworkChoice, layout: &Layout) -> NetworkSpec {
    match choice {
        NetworkChoice::Full => crate::nn::q_network(layout.height, layout.width, ACTION_COUNT),
        NetworkChoice::Tiny => {
            crate::nn::tiny_q_network(layout.height, layout.width, ACTION_COUNT)
        }
    }
}

/// Collects observations with a random policy and trains the autoencoder
/// on them; returns the frozen encoder.
pub fn train_autoencoder(
    env: &Cmotp,
    config: &ExperimentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Network, Vec<f64>, f64), RunError> {
    let spec = autoencoder(env.layout.height, env.layout.width, config.code_size);
    let net = Network::new(spec.clone());
    let mut params = crate::nn::Parameters::init(&spec, derive_seed(config.seed, 0xae));
    let mut adam = AdamState::new(spec.param_count(), config.autoencoder_alpha);

    // Record states from random rollouts.
    let mut states: Vec<Vec<f64>> = Vec::with_capacity(config.autoencoder_states);
    'collect: loop {
        let mut state = env.reset();
        loop {
            let obs = env.render(&state, true, rng);
            states.push(obs.as_slice().to_vec());
            if states.len() >= config.autoencoder_states {
                break 'collect;
            }
            let a1 = Action::ALL[rng.gen_range(0..ACTION_COUNT)];
            let a2 = Action::ALL[rng.gen_range(0..ACTION_COUNT)];
            let out = env.step(&mut state, a1, a2, rng)?;
            if out.terminal {
                break;
            }
        }
    }

    let mut grad = vec![0.0; spec.param_count()];
    let mut last_loss = f64::INFINITY;
    for _ in 0..config.autoencoder_steps {
        let batch: Vec<(&[f64], &[f64])> = (0..config.autoencoder_batch)
            .map(|_| {
                let s = states[rng.gen_range(0..states.len())].as_slice();
                (s, s)
            })
            .collect();
        last_loss = reconstruction_loss_grad(
            &net,
            &params.online,
            &batch,
            Some((AUTOENCODER_CODE_LAYER, CODE_NOISE_AMPLITUDE, rng)),
            &mut grad,
        )?;
        crate::nn::adam_step(&mut params.online, &grad, &mut adam)?;
    }
    Ok((net, params.online, last_loss))
}

/// Builds the run's state hasher: exact byte hashing in clean mode, frozen
/// autoencoder + SimHash in noisy mode.
pub fn build_hasher(
    env: &Cmotp,
    config: &ExperimentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<StateHasher, RunError> {
    if !config.noisy {
        return Ok(StateHasher::Exact);
    }
    let (encoder, params, _) = train_autoencoder(env, config, rng)?;
    let projection = ProjectionMatrix::new(
        config.hash_bits,
        config.code_size,
        config.projection_seed,
    )
    .expect("valid projection dimensions");
    Ok(StateHasher::Sim {
        projection,
        encoder,
        params,
        code_layer: AUTOENCODER_CODE_LAYER,
    })
}

/// Fraction of sampled states whose two independent noisy renders map to
/// the same state key.
pub fn key_stability(
    env: &Cmotp,
    hasher: &StateHasher,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64, RunError> {
    let mut stable = 0usize;
    let mut seen = 0usize;
    'outer: loop {
        let mut state = env.reset();
        loop {
            let a = env.render(&state, true, rng);
            let b = env.render(&state, true, rng);
            if hasher.key(&a) == hasher.key(&b) {
                stable += 1;
            }
            seen += 1;
            if seen >= samples {
                break 'outer;
            }
            let a1 = Action::ALL[rng.gen_range(0..ACTION_COUNT)];
            let a2 = Action::ALL[rng.gen_range(0..ACTION_COUNT)];
            let out = env.step(&mut state, a1, a2, rng)?;
            if out.terminal {
                break;
            }
        }
    }
    Ok(stable as f64 / seen as f64)
}

/// Executes one full training run. Deterministic given the configuration:
/// the seed fans out into separate streams for the environment, each
/// agent, the warm-up phase, and evaluation.
pub fn run(config: &ExperimentConfig) -> Result<RunResult, RunError> {
    run_with_agents(config).map(|(result, _, _)| result)
}

/// Like [`run`], also returning the trained agents for checkpointing.
pub fn run_with_agents(
    config: &ExperimentConfig,
) -> Result<(RunResult, Agent, Agent), RunError> {
    let layout = resolve_layout(&config.layout)?;
    let slip = if config.slippery {
        crate::env::DEFAULT_SLIP_PROB
    } else {
        0.0
    };
    let env = Cmotp::new(layout)
        .with_slip(slip)
        .with_step_limit(config.step_limit);
    let mut env_rng = stream_rng(config.seed, 0);
    let mut warmup_rng = stream_rng(config.seed, 3);

    let hasher = build_hasher(&env, config, &mut warmup_rng)?;
    let spec = network_spec(config.network, &env.layout);
    let agent_config = config.agent_config();
    let mut agent1 = Agent::new(
        agent_config.clone(),
        spec.clone(),
        hasher.clone(),
        derive_seed(config.seed, 1),
    )?;
    let mut agent2 = Agent::new(
        agent_config,
        spec,
        hasher,
        derive_seed(config.seed, 2),
    )?;

    let mut episodes = Vec::with_capacity(config.episodes);
    for episode in 0..config.episodes {
        let started = Instant::now();
        let mut state = env.reset();
        let mut obs = env.render(&state, config.noisy, &mut env_rng);
        let mut attached_steps = 0u32;
        let mut coordinated_steps = 0u32;
        let mut explore_sum = 0.0;
        let reward;
        let delivered;
        loop {
            explore_sum += agent1.explore_probability(&obs);
            let a1 = agent1.select_action(&obs);
            let a2 = agent2.select_action(&obs);
            let attached_before = state.attached;
            let out = env.step(&mut state, a1, a2, &mut env_rng)?;
            let next_obs = env.render(&state, config.noisy, &mut env_rng);
            if attached_before {
                attached_steps += 1;
                if a1 == a2 && a1 != Action::Stay && out.goods_moved {
                    coordinated_steps += 1;
                }
            }
            agent1.observe(obs.clone(), a1, out.reward, next_obs.clone(), out.terminal)?;
            agent2.observe(obs.clone(), a2, out.reward, next_obs.clone(), out.terminal)?;
            let l1 = agent1.learn_step()?;
            let l2 = agent2.learn_step()?;
            for loss in [l1, l2].into_iter().flatten() {
                if !loss.is_finite() {
                    return Err(RunError::NonFiniteLoss {
                        episode,
                        step: state.steps_taken,
                    });
                }
            }
            obs = next_obs;
            if out.terminal {
                reward = out.reward;
                delivered = out.delivered;
                break;
            }
        }
        let completed = delivered.is_some();
        agent1.end_episode(completed)?;
        agent2.end_episode(completed)?;
        episodes.push(EpisodeRecord {
            episode,
            steps: state.steps_taken,
            reward,
            coordinated_pct: if attached_steps > 0 {
                Some(100.0 * coordinated_steps as f64 / attached_steps as f64)
            } else {
                None
            },
            explore_level: explore_sum / state.steps_taken.max(1) as f64,
            delivered,
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }

    let (spe, csp, spr) = aggregate(&episodes);
    let converged_policy = if config.episodes == 0 || config.classify_trials == 0 {
        PolicyClass::None
    } else {
        classify_policy(
            &env,
            &agent1,
            &agent2,
            config.classify_trials,
            config.noisy,
            &mut stream_rng(config.seed, 4),
        )
    };
    Ok((
        RunResult {
            episodes,
            spe,
            csp,
            spr,
            converged_policy,
        },
        agent1,
        agent2,
    ))
}

/// One greedy (exploration-free) rollout on deterministic dynamics.
/// Returns the delivered zone, if any, and the steps taken.
pub fn greedy_rollout(
    env: &Cmotp,
    agent1: &Agent,
    agent2: &Agent,
    noisy: bool,
    rng: &mut ChaCha8Rng,
) -> (Option<usize>, u32) {
    let eval_env = Cmotp {
        layout: env.layout.clone(),
        slip_prob: 0.0,
        step_limit: env.step_limit,
    };
    let mut state = eval_env.reset();
    loop {
        let obs = eval_env.render(&state, noisy, rng);
        let a1 = agent1.greedy_action(&obs);
        let a2 = agent2.greedy_action(&obs);
        let out = eval_env
            .step(&mut state, a1, a2, rng)
            .expect("non-terminal rollout state");
        if out.terminal {
            return (out.delivered, state.steps_taken);
        }
    }
}

/// Greedy-rollout classification: `Optimal` when at least 90% of trials
/// deliver to the best-expected-value zone within twice the planner's
/// optimal step count, `Suboptimal` when at least 90% deliver to another
/// zone, `None` otherwise.
pub fn classify_policy(
    env: &Cmotp,
    agent1: &Agent,
    agent2: &Agent,
    trials: usize,
    noisy: bool,
    rng: &mut ChaCha8Rng,
) -> PolicyClass {
    let no_slip = Cmotp {
        layout: env.layout.clone(),
        slip_prob: 0.0,
        step_limit: env.step_limit,
    };
    let oracle = bfs_optimal_steps(&no_slip);
    let best = env.layout.best_dropzone();
    let mut optimal = 0usize;
    let mut other = 0usize;
    for _ in 0..trials {
        let (delivered, steps) = greedy_rollout(env, agent1, agent2, noisy, rng);
        match delivered {
            Some(zone) if zone == best => {
                if oracle.is_some_and(|o| steps <= 2 * o) {
                    optimal += 1;
                }
            }
            Some(_) => other += 1,
            None => {}
        }
    }
    let threshold = (trials as f64 * 0.9).ceil() as usize;
    if optimal >= threshold {
        PolicyClass::Optimal
    } else if other >= threshold {
        PolicyClass::Suboptimal
    } else {
        PolicyClass::None
    }
}

/// Replays a fixed joint plan for `episodes` episodes, producing the same
/// metrics a learning run would. Used to validate metric plumbing against
/// the planner's optimal solution.
pub fn run_scripted(
    env: &Cmotp,
    plan: &[(Action, Action)],
    episodes: usize,
) -> Result<RunResult, RunError> {
    let mut records = Vec::with_capacity(episodes);
    let mut rng = stream_rng(0, 0);
    for episode in 0..episodes {
        let started = Instant::now();
        let mut state = env.reset();
        let mut attached_steps = 0u32;
        let mut coordinated_steps = 0u32;
        let mut reward = 0.0;
        let mut delivered = None;
        for &(a1, a2) in plan {
            let attached_before = state.attached;
            let out = env.step(&mut state, a1, a2, &mut rng)?;
            if attached_before {
                attached_steps += 1;
                if a1 == a2 && a1 != Action::Stay && out.goods_moved {
                    coordinated_steps += 1;
                }
            }
            if out.terminal {
                reward = out.reward;
                delivered = out.delivered;
                break;
            }
        }
        records.push(EpisodeRecord {
            episode,
            steps: state.steps_taken,
            reward,
            coordinated_pct: if attached_steps > 0 {
                Some(100.0 * coordinated_steps as f64 / attached_steps as f64)
            } else {
                None
            },
            explore_level: 0.0,
            delivered,
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }
    let (spe, csp, spr) = aggregate(&records);
    Ok(RunResult {
        episodes: records,
        spe,
        csp,
        spr,
        converged_policy: PolicyClass::None,
    })
}

// ---------------------------------------------------------------------------
// Run outputs
// ---------------------------------------------------------------------------

pub const EPISODES_CSV_HEADER: &str =
    "run_id,episode,steps,reward,coordinated_pct,explore_level,wall_ms";
pub const SUMMARY_CSV_HEADER: &str = "run_id,episodes,spe,csp,spr,converged_policy,seed";

/// Renders the per-episode CSV. Floats use the shortest round-trip
/// representation, so recomputing metrics from the file is exact.
pub fn episodes_csv(run_id: &str, episodes: &[EpisodeRecord]) -> String {
    let mut s = String::from(EPISODES_CSV_HEADER);
    s.push('\n');
    for e in episodes {
        let coordinated = match e.coordinated_pct {
            Some(pct) => format!("{pct}"),
            None => String::new(),
        };
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            run_id, e.episode, e.steps, e.reward, coordinated, e.explore_level, e.wall_ms
        ));
    }
    s
}

pub fn summary_csv(run_id: &str, seed: u64, result: &RunResult) -> String {
    let csp = match result.csp {
        Some(v) => format!("{v}"),
        None => String::new(),
    };
    format!(
        "{}\n{},{},{},{},{},{},{}\n",
        SUMMARY_CSV_HEADER,
        run_id,
        result.episodes.len(),
        result.spe,
        csp,
        result.spr,
        result.converged_policy.tag(),
        seed
    )
}

/// Parses an episodes CSV back into records (metric recomputation and the
/// resume check).
pub fn parse_episodes_csv(text: &str) -> Option<Vec<EpisodeRecord>> {
    let mut lines = text.lines();
    if lines.next()? != EPISODES_CSV_HEADER {
        return None;
    }
    let mut records = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return None;
        }
        records.push(EpisodeRecord {
            episode: fields[1].parse().ok()?,
            steps: fields[2].parse().ok()?,
            reward: fields[3].parse().ok()?,
            coordinated_pct: if fields[4].is_empty() {
                None
            } else {
                Some(fields[4].parse().ok()?)
            },
            explore_level: fields[5].parse().ok()?,
            delivered: None,
            wall_ms: fields[6].parse().ok()?,
        });
    }
    Some(records)
}

/// Writes the complete run directory: serialized config, both CSV files,
/// agent checkpoints, and a metadata file with the code version.
pub fn write_run_outputs(
    dir: &Path,
    config: &ExperimentConfig,
    result: &RunResult,
    checkpoints: Option<(&[u8], &[u8])>,
) -> Result<(), RunError> {
    let wrap = |path: &Path, source: std::io::Error| RunError::Output {
        path: path.display().to_string(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(|e| wrap(dir, e))?;
    let run_id = config.run_id();
    let write = |name: &str, bytes: &[u8]| -> Result<(), RunError> {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| wrap(&path, e))
    };
    write("config.cfg", config.serialize().as_bytes())?;
    write("episodes.csv", episodes_csv(&run_id, &result.episodes).as_bytes())?;
    write(
        "summary.csv",
        summary_csv(&run_id, config.seed, result).as_bytes(),
    )?;
    write(
        "metadata.txt",
        format!(
            "run_id={}\nseed={}\nversion={}\n",
            run_id,
            config.seed,
            env!("CARGO_PKG_VERSION")
        )
        .as_bytes(),
    )?;
    if let Some((a1, a2)) = checkpoints {
        write("agent1.ckpt", a1)?;
        write("agent2.ckpt", a2)?;
    }
    Ok(())
}

/// Executes a run and writes its directory (CSVs, config copy, agent
/// checkpoints) under `config.output_dir`. Returns the directory path and
/// the result.
pub fn execute_run(
    config: &ExperimentConfig,
) -> Result<(std::path::PathBuf, RunResult), RunError> {
    let (result, agent1, agent2) = run_with_agents(config)?;
    let dir = Path::new(&config.output_dir).join(config.run_id());
    write_run_outputs(
        &dir,
        config,
        &result,
        Some((&agent1.checkpoint(), &agent2.checkpoint())),
    )?;
    Ok((dir, result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::Algorithm;
    use crate::config::{ExplorationChoice, LeniencyChoice};
    use crate::oracle::bfs_plan;

    fn desk_config() -> ExperimentConfig {
        let mut config = ExperimentConfig::default();
        config.layout = "desk".into();
        config.network = NetworkChoice::Tiny;
        config.episodes = 3;
        config.step_limit = 60;
        config.algorithm = Algorithm::Ldqn;
        config.exploration = ExplorationChoice::Tbar;
        config.leniency = LeniencyChoice::Tds;
        config.batch_size = 8;
        config.replay_warmup = 16;
        config.replay_capacity = 512;
        config.classify_trials = 0;
        config.seed = 5;
        config
    }

    #[test]
    fn zero_episode_budget_gives_empty_result() {
        let mut config = desk_config();
        config.episodes = 0;
        let result = run(&config).unwrap();
        assert!(result.episodes.is_empty());
        assert_eq!(result.spe, 0.0);
        assert_eq!(result.csp, None);
        assert_eq!(result.spr, 0);
        assert_eq!(result.converged_policy, PolicyClass::None);
    }

    #[test]
    fn runs_are_seed_deterministic() {
        let config = desk_config();
        let a = run(&config).unwrap();
        let b = run(&config).unwrap();
        assert_eq!(a.without_wall_times(), b.without_wall_times());
        let mut other = desk_config();
        other.seed = 6;
        let c = run(&other).unwrap();
        assert_ne!(
            a.without_wall_times().episodes,
            c.without_wall_times().episodes
        );
    }

    #[test]
    fn scripted_optimal_run_has_spe_33() {
        let env = Cmotp::new(crate::layouts::load_builtin("original").unwrap());
        let plan = bfs_plan(&env).unwrap();
        assert_eq!(plan.len(), 33);
        let result = run_scripted(&env, &plan, 120).unwrap();
        assert_eq!(result.spe, 33.0);
        assert_eq!(result.spr, 120 * 33);
        // The optimal plan coordinates on every attached step.
        assert_eq!(result.csp, Some(100.0));
    }

    #[test]
    fn csv_roundtrip_and_recompute() {
        let env = Cmotp::new(crate::layouts::load_builtin("desk").unwrap());
        let plan = bfs_plan(&env).unwrap();
        let result = run_scripted(&env, &plan, 7).unwrap();
        let csv = episodes_csv("test-run", &result.episodes);
        let parsed = parse_episodes_csv(&csv).unwrap();
        assert_eq!(parsed.len(), result.episodes.len());
        let (spe, csp, spr) = aggregate(&parsed);
        assert_eq!(spe, result.spe);
        assert_eq!(csp, result.csp);
        assert_eq!(spr, result.spr);
    }

    #[test]
    fn coordinated_fraction_edge_cases() {
        // All attached steps coordinated -> 100%.
        let env = Cmotp::new(crate::layouts::load_builtin("desk").unwrap());
        let plan = bfs_plan(&env).unwrap();
        let result = run_scripted(&env, &plan, 1).unwrap();
        assert_eq!(result.episodes[0].coordinated_pct, Some(100.0));

        // Alternating coordinated/uncoordinated attached steps -> 50%.
        let mut alternating = vec![(Action::Stay, Action::Stay)]; // attach
        alternating.push((Action::Up, Action::Up)); // coordinated
        alternating.push((Action::Left, Action::Right)); // blocked
        alternating.push((Action::Up, Action::Up));
        alternating.push((Action::Left, Action::Right));
        let result = run_scripted(&env, &alternating, 1).unwrap();
        assert_eq!(result.episodes[0].coordinated_pct, Some(50.0));

        // No attached phase -> excluded from CSP.
        let wander = vec![(Action::Left, Action::Right); 4];
        let result = run_scripted(&env, &wander, 1).unwrap();
        assert_eq!(result.episodes[0].coordinated_pct, None);
        assert_eq!(result.csp, None);
    }
}
