//! Independent verification machinery: an exact joint-state BFS planner over
//! the environment dynamics, a tabular double-Q reference learner, and a
//! one-shot stochastic coordination game.

use std::collections::{HashMap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::env::{Action, Cell, Cmotp, EnvState, Pos};
use crate::leniency::max_temperature;

/// Canonical joint configuration used as a BFS key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct JointState {
    pub agent1: Pos,
    pub agent2: Pos,
    pub goods: Pos,
    pub attached: bool,
}

impl JointState {
    pub fn of(state: &EnvState) -> JointState {
        JointState {
            agent1: state.agent1,
            agent2: state.agent2,
            goods: state.goods,
            attached: state.attached,
        }
    }

    /// Rebuilds a steppable state. Step counters are irrelevant to the
    /// dynamics searched here.
    pub fn to_env_state(self) -> EnvState {
        EnvState {
            agent1: self.agent1,
            agent2: self.agent2,
            goods: self.goods,
            attached: self.attached,
            steps_taken: 0,
            terminal: false,
            timeout: false,
            last_joint_action: None,
        }
    }
}

/// Exact minimum number of joint steps from reset to delivery, or `None`
/// if no drop-zone is reachable. Requires deterministic dynamics.
pub fn bfs_optimal_steps(env: &Cmotp) -> Option<u32> {
    bfs_plan(env).map(|plan| plan.len() as u32)
}

/// Shortest joint-action sequence from reset to delivery.
///
/// Searches over the same `step()` dynamics the learners use, with slip
/// disabled; panics if called on a slippery environment.
pub fn bfs_plan(env: &Cmotp) -> Option<Vec<(Action, Action)>> {
    assert_eq!(env.slip_prob, 0.0, "BFS assumes deterministic transitions");
    // Plans must fit the episode budget; searching further is pointless.
    let depth_limit = env.step_limit;

    let start = env.reset();
    let start_key = JointState::of(&start);
    let mut parents: HashMap<JointState, (JointState, (Action, Action))> = HashMap::new();
    let mut frontier = VecDeque::new();
    frontier.push_back((start_key, 0u32));
    parents.insert(start_key, (start_key, (Action::Stay, Action::Stay)));

    let mut rng = throwaway_rng();
    while let Some((key, depth)) = frontier.pop_front() {
        if depth >= depth_limit {
            continue;
        }
        for a1 in Action::ALL {
            for a2 in Action::ALL {
                let mut state = key.to_env_state();
                let out = env
                    .step(&mut state, a1, a2, &mut rng)
                    .expect("non-terminal BFS node");
                if out.delivered.is_some() {
                    // Reconstruct the plan backwards.
                    let mut plan = vec![(a1, a2)];
                    let mut cursor = key;
                    while cursor != start_key {
                        let (prev, action) = parents[&cursor];
                        plan.push(action);
                        cursor = prev;
                    }
                    plan.reverse();
                    return Some(plan);
                }
                let next = JointState::of(&state);
                if next != key && !parents.contains_key(&next) {
                    parents.insert(next, (key, (a1, a2)));
                    frontier.push_back((next, depth + 1));
                }
            }
        }
    }
    None
}

/// Every joint configuration reachable from reset, including the start.
/// Terminal delivery configurations are not expanded further.
pub fn enumerate_reachable(env: &Cmotp) -> Vec<JointState> {
    assert_eq!(env.slip_prob, 0.0, "enumeration assumes determinism");
    let start = JointState::of(&env.reset());
    let mut seen: HashMap<JointState, ()> = HashMap::new();
    let mut order = Vec::new();
    let mut frontier = VecDeque::new();
    seen.insert(start, ());
    order.push(start);
    frontier.push_back(start);
    let mut rng = throwaway_rng();
    while let Some(key) = frontier.pop_front() {
        for a1 in Action::ALL {
            for a2 in Action::ALL {
                let mut state = key.to_env_state();
                let out = env
                    .step(&mut state, a1, a2, &mut rng)
                    .expect("non-terminal node");
                let next = JointState::of(&state);
                if seen.insert(next, ()).is_none() {
                    order.push(next);
                    if out.delivered.is_none() {
                        frontier.push_back(next);
                    }
                }
            }
        }
    }
    order
}

fn throwaway_rng() -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(0)
}

/// True if the goods in `key` sit on a drop-zone cell.
pub fn is_delivered(env: &Cmotp, key: JointState) -> bool {
    matches!(env.layout.cell(key.goods), Cell::Dropzone(_))
}

// ---------------------------------------------------------------------------
// Tabular reference learner
// ---------------------------------------------------------------------------

/// Update rule variants mirrored by the deep learners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TabularRule {
    /// Plain Q-learning: rate `alpha` for every update.
    Plain,
    /// Two-rate update: `alpha` when the estimate rises, `alpha * beta` when
    /// it falls (`beta` expressed as a fraction of `alpha`).
    Hysteretic { beta: f64 },
    /// Negative updates are dropped with probability `l = 1 - exp(-k * T)`,
    /// where the per-pair temperature `T` decays by `temp_decay` per visit.
    Lenient { k: f64, temp_decay: f64 },
    /// Negative updates are never applied.
    MaximumBased,
}

/// Tabular Q-learner over a small enumerable state space.
#[derive(Debug, Clone)]
pub struct TabularLearner {
    pub q: Vec<Vec<f64>>,
    pub temperatures: Vec<Vec<f64>>,
    pub rule: TabularRule,
    pub alpha: f64,
    pub gamma: f64,
}

impl TabularLearner {
    pub fn new(states: usize, actions: usize, rule: TabularRule, alpha: f64, gamma: f64) -> Self {
        TabularLearner {
            q: vec![vec![0.0; actions]; states],
            temperatures: vec![vec![max_temperature(); actions]; states],
            rule,
            alpha,
            gamma,
        }
    }

    pub fn greedy(&self, state: usize) -> usize {
        argmax(&self.q[state])
    }

    /// One transition update. `next` is `None` for terminal transitions.
    pub fn update<R: Rng>(
        &mut self,
        state: usize,
        action: usize,
        reward: f64,
        next: Option<usize>,
        rng: &mut R,
    ) {
        let target = match next {
            None => reward,
            Some(s2) => {
                let best = argmax(&self.q[s2]);
                reward + self.gamma * self.q[s2][best]
            }
        };
        let delta = target - self.q[state][action];
        let weight = match self.rule {
            TabularRule::Plain => 1.0,
            TabularRule::Hysteretic { beta } => {
                if delta > 0.0 {
                    1.0
                } else {
                    beta
                }
            }
            TabularRule::Lenient { k, temp_decay } => {
                let t = self.temperatures[state][action];
                self.temperatures[state][action] = t * temp_decay;
                let leniency = 1.0 - (-k * t).exp();
                if delta > 0.0 {
                    1.0
                } else {
                    let x: f64 = rng.gen();
                    if x > leniency {
                        1.0
                    } else {
                        0.0
                    }
                }
            }
            TabularRule::MaximumBased => {
                if delta > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        };
        self.q[state][action] += self.alpha * weight * delta;
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// One-shot stochastic coordination game
// ---------------------------------------------------------------------------

/// Payoffs for the two-action coordination game mirroring the stochastic
/// drop-zones: both players picking action 0 pays the first spec, both
/// picking action 1 samples the second, any mismatch pays zero.
#[derive(Debug, Clone)]
pub struct OneShotGame {
    pub payoff: [crate::env::RewardSpec; 2],
}

impl OneShotGame {
    /// The drop-zone payoffs from the stochastic task: 0.8 deterministic
    /// versus 1.0 at 60% / 0.4 at 40% (expected 0.76).
    pub fn dropzone_default() -> OneShotGame {
        OneShotGame {
            payoff: [
                crate::env::RewardSpec::deterministic(0.8),
                crate::env::RewardSpec {
                    outcomes: vec![(1.0, 0.6), (0.4, 0.4)],
                },
            ],
        }
    }

    pub fn joint_reward<R: Rng>(&self, a1: usize, a2: usize, rng: &mut R) -> f64 {
        if a1 == a2 {
            self.payoff[a1].sample(rng)
        } else {
            0.0
        }
    }
}

/// Fraction of independent paired runs whose final greedy joint choice is
/// action 0 (the higher-expected-value option) for both players.
pub fn one_shot_game<R: Rng>(
    game: &OneShotGame,
    rule: TabularRule,
    runs: usize,
    episodes: usize,
    rng: &mut R,
) -> f64 {
    let mut optimal = 0usize;
    for _ in 0..runs {
        let mut p1 = TabularLearner::new(1, 2, rule, 0.1, 0.0);
        let mut p2 = TabularLearner::new(1, 2, rule, 0.1, 0.0);
        let mut epsilon = 1.0f64;
        for _ in 0..episodes {
            let a1 = if rng.gen::<f64>() < epsilon {
                rng.gen_range(0..2)
            } else {
                p1.greedy(0)
            };
            let a2 = if rng.gen::<f64>() < epsilon {
                rng.gen_range(0..2)
            } else {
                p2.greedy(0)
            };
            let reward = game.joint_reward(a1, a2, rng);
            p1.update(0, a1, reward, None, rng);
            p2.update(0, a2, reward, None, rng);
            epsilon = (epsilon * 0.999).max(0.05);
        }
        if p1.greedy(0) == 0 && p2.greedy(0) == 0 {
            optimal += 1;
        }
    }
    optimal as f64 / runs as f64
}
