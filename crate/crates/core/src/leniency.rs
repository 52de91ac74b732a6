//! Temperature bookkeeping for lenient learners: the per-(state-key, action)
//! temperature table, leniency computation, average temperature folding,
//! the retroactive temperature decay schedule, and the decaying maximum
//! temperature used to clamp incomplete runs.

use std::collections::HashMap;

use rand::Rng;
use thiserror::Error;

use crate::hashing::StateKey;

/// Upper bound for every stored temperature; fresh entries start here.
pub const MAX_TEMPERATURE: f64 = 1.0;

pub fn max_temperature() -> f64 {
    MAX_TEMPERATURE
}

/// Pair visits recorded over one episode, in visit order.
pub type EpisodeTrace = Vec<(StateKey, usize)>;

/// Precomputed retroactive decay multipliers `beta_t = exp(rho * d^t)`.
///
/// Index 0 applies to the final step of an episode; higher indices reach
/// further back, decaying earlier pairs at a slower rate.
#[derive(Debug, Clone)]
pub struct TdsSchedule {
    betas: Vec<f64>,
    pub rho: f64,
    pub decay_rate: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("TDS exponent rho must be negative, got {0}")]
    NonNegativeRho(f64),
    #[error("TDS decay rate must lie in (0, 1), got {0}")]
    DecayRateRange(f64),
    #[error("TDS length must be at least 1")]
    EmptySchedule,
}

/// Builds the schedule for episodes of at most `n` steps.
pub fn build_tds(rho: f64, decay_rate: f64, n: usize) -> Result<TdsSchedule, ScheduleError> {
    if !(rho < 0.0) {
        return Err(ScheduleError::NonNegativeRho(rho));
    }
    if !(decay_rate > 0.0 && decay_rate < 1.0) {
        return Err(ScheduleError::DecayRateRange(decay_rate));
    }
    if n == 0 {
        return Err(ScheduleError::EmptySchedule);
    }
    let mut betas = Vec::with_capacity(n);
    let mut factor = 1.0;
    for _ in 0..n {
        betas.push((rho * factor).exp());
        factor *= decay_rate;
    }
    Ok(TdsSchedule {
        betas,
        rho,
        decay_rate,
    })
}

impl TdsSchedule {
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    /// Multiplier for a pair `steps_from_terminal` steps before the end.
    /// Episodes longer than the schedule reuse the last multiplier.
    pub fn beta(&self, steps_from_terminal: usize) -> f64 {
        let idx = steps_from_terminal.min(self.betas.len() - 1);
        self.betas[idx]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.betas
    }
}

/// Average temperature folding constants (fold-in weight and per-visit decay).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtfConfig {
    pub fold_in: f64,
    pub decay: f64,
}

impl Default for AtfConfig {
    fn default() -> Self {
        AtfConfig {
            fold_in: 0.4,
            decay: 0.99,
        }
    }
}

/// Map from (state-key, action) to a temperature in (0, MAX_TEMPERATURE],
/// plus the decaying maximum temperature `nu`.
#[derive(Debug, Clone)]
pub struct TemperatureTable {
    entries: HashMap<(StateKey, usize), f64>,
    /// Leniency moderation factor `K`.
    pub moderation: f64,
    /// Decaying maximum temperature.
    pub nu: f64,
    /// Per-episode decay rate of `nu`.
    pub nu_decay: f64,
}

impl TemperatureTable {
    pub fn new(moderation: f64, nu: f64, nu_decay: f64) -> TemperatureTable {
        TemperatureTable {
            entries: HashMap::new(),
            moderation,
            nu,
            nu_decay,
        }
    }

    /// Table 2 defaults: K = 2, nu = 1, mu = 0.999.
    pub fn with_defaults() -> TemperatureTable {
        TemperatureTable::new(2.0, 1.0, 0.999)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Current temperature, creating the entry at MAX_TEMPERATURE on first touch.
    pub fn temperature(&mut self, key: StateKey, action: usize) -> f64 {
        *self.entries.entry((key, action)).or_insert(MAX_TEMPERATURE)
    }

    /// Temperature without creating an entry; absent pairs read as MAX_TEMPERATURE.
    pub fn peek(&self, key: &StateKey, action: usize) -> f64 {
        self.entries
            .get(&(*key, action))
            .copied()
            .unwrap_or(MAX_TEMPERATURE)
    }

    /// Directly overwrites a pair's temperature (table reconstruction and
    /// test fixtures).
    pub fn set(&mut self, key: StateKey, action: usize, temperature: f64) {
        self.entries.insert((key, action), temperature);
    }

    /// Leniency for a pair: `l = 1 - exp(-K * T)`. Does not decay `T`.
    pub fn leniency(&mut self, key: StateKey, action: usize) -> f64 {
        let t = self.temperature(key, action);
        1.0 - (-self.moderation * t).exp()
    }

    /// Mean temperature over all `action_count` actions of a state; absent
    /// entries count as MAX_TEMPERATURE. Read-only.
    pub fn mean_temperature(&self, key: &StateKey, action_count: usize) -> f64 {
        let sum: f64 = (0..action_count).map(|a| self.peek(key, a)).sum();
        sum / action_count as f64
    }

    /// Applies the retroactive decay schedule after an episode.
    ///
    /// Completed episodes walk the trace from the final step backwards,
    /// decaying pair `i` by the schedule multiplier for its distance to the
    /// terminal state, clamped at `nu`. Incomplete (timed-out) episodes only
    /// clamp visited pairs down to `nu`. Either way `nu` then decays once.
    pub fn apply_tds(&mut self, trace: &EpisodeTrace, schedule: &TdsSchedule, completed: bool) {
        if completed {
            for (dist, &(key, action)) in trace.iter().rev().enumerate() {
                let beta = schedule.beta(dist);
                let t = self.temperature(key, action);
                let decayed = beta * t;
                let new_t = if decayed < self.nu { decayed } else { self.nu };
                self.entries.insert((key, action), new_t);
            }
        } else {
            for &(key, action) in trace {
                let t = self.temperature(key, action);
                if t > self.nu {
                    self.entries.insert((key, action), self.nu);
                }
            }
        }
        self.nu *= self.nu_decay;
    }

    /// Average temperature folding: one-step decay of the pair that was just
    /// visited, blending in the successor state's mean temperature.
    pub fn atf_decay(
        &mut self,
        key: StateKey,
        action: usize,
        next_key: Option<&StateKey>,
        action_count: usize,
        config: AtfConfig,
    ) {
        let t = self.temperature(key, action);
        let new_t = match next_key {
            // Terminal successor: plain decay.
            None => config.decay * t,
            Some(next) => {
                let folded = (1.0 - config.fold_in) * t
                    + config.fold_in * self.mean_temperature(next, action_count);
                config.decay * folded
            }
        };
        self.entries.insert((key, action), new_t);
    }

    /// Dump of every entry as `hexkey action temperature` lines, sorted for
    /// stable output.
    pub fn dump(&self) -> String {
        let mut rows: Vec<_> = self.entries.iter().collect();
        rows.sort_by(|a, b| a.0.cmp(b.0));
        let mut out = String::new();
        for ((key, action), t) in rows {
            out.push_str(&format!("{} {} {:.17e}\n", key.to_hex(), action, t));
        }
        out
    }
}

/// Per-sample weight of a lenient update: positive TD errors always pass;
/// negative ones pass with probability `1 - l` via a fresh uniform draw.
pub fn lenient_accept<R: Rng>(delta: f64, leniency: f64, rng: &mut R) -> f64 {
    if delta > 0.0 {
        return 1.0;
    }
    let x: f64 = rng.gen();
    if x > leniency {
        1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashing::StateKey;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn key(n: u64) -> StateKey {
        StateKey::exact(n)
    }

    #[test]
    fn leniency_closed_forms() {
        let mut table = TemperatureTable::new(2.0, 1.0, 0.999);
        let l = table.leniency(key(1), 0);
        assert!((l - (1.0 - (-2.0f64).exp())).abs() < 1e-15);
        assert!((l - 0.864_664_716_763_387_3).abs() < 1e-12);

        let mut table3 = TemperatureTable::new(3.0, 1.0, 0.999);
        let l3 = table3.leniency(key(1), 0);
        assert!((l3 - 0.950_212_931_632_136).abs() < 1e-12);
    }

    #[test]
    fn leniency_vanishes_with_temperature() {
        let mut table = TemperatureTable::new(2.0, 1.0, 0.999);
        table.entries.insert((key(1), 0), 1e-12);
        let l = table.leniency(key(1), 0);
        assert!(l < 1e-10);
    }

    #[test]
    fn lenient_accept_never_blocks_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            assert_eq!(lenient_accept(0.5, 0.999, &mut rng), 1.0);
        }
    }

    #[test]
    fn lenient_accept_rate_matches_one_minus_l() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let l = 1.0 - (-2.0f64).exp(); // 0.8647
        let n = 10_000;
        let accepted: f64 = (0..n)
            .map(|_| lenient_accept(-0.5, l, &mut rng))
            .sum::<f64>();
        let rate = accepted / n as f64;
        assert!((rate - (1.0 - l)).abs() < 0.01, "rate {rate}");
    }

    #[test]
    fn tds_closed_forms() {
        let schedule = build_tds(-0.01, 0.95, 30).unwrap();
        assert!((schedule.beta(0) - 0.990_049_833_749_168).abs() < 1e-12);
        assert!((schedule.beta(20) - (-0.01f64 * 0.95f64.powi(20)).exp()).abs() < 1e-15);
        assert!((schedule.beta(20) - 0.996_421).abs() < 1e-6);
        // Strictly increasing toward 1.
        for t in 1..30 {
            assert!(schedule.beta(t) > schedule.beta(t - 1));
            assert!(schedule.beta(t) < 1.0);
        }
    }

    #[test]
    fn tds_rejects_bad_ranges() {
        assert_eq!(
            build_tds(0.01, 0.95, 10).unwrap_err(),
            ScheduleError::NonNegativeRho(0.01)
        );
        assert_eq!(
            build_tds(-0.01, 1.0, 10).unwrap_err(),
            ScheduleError::DecayRateRange(1.0)
        );
        assert_eq!(build_tds(-0.01, 0.95, 0).unwrap_err(), ScheduleError::EmptySchedule);
    }

    #[test]
    fn apply_tds_single_step_episode() {
        let mut table = TemperatureTable::new(2.0, 1.0, 0.999);
        let schedule = build_tds(-0.01, 0.95, 10).unwrap();
        let trace = vec![(key(1), 2)];
        table.apply_tds(&trace, &schedule, true);
        assert!((table.peek(&key(1), 2) - 0.990_049_833_749_168).abs() < 1e-12);
        assert!((table.nu - 0.999).abs() < 1e-15);
    }

    #[test]
    fn apply_tds_clamps_at_nu() {
        let mut table = TemperatureTable::new(2.0, 0.5, 0.999);
        let schedule = build_tds(-0.01, 0.95, 10).unwrap();
        let trace = vec![(key(1), 0)];
        table.apply_tds(&trace, &schedule, true);
        // beta * 1.0 = 0.99 >= nu = 0.5, so the clamp branch assigns nu.
        assert_eq!(table.peek(&key(1), 0), 0.5);
    }

    #[test]
    fn apply_tds_timeout_only_clamps() {
        let mut table = TemperatureTable::new(2.0, 0.8, 0.999);
        table.entries.insert((key(1), 0), 0.3);
        table.entries.insert((key(2), 1), 0.95);
        let schedule = build_tds(-0.01, 0.95, 10).unwrap();
        let trace = vec![(key(1), 0), (key(2), 1)];
        table.apply_tds(&trace, &schedule, false);
        assert_eq!(table.peek(&key(1), 0), 0.3); // below nu: untouched
        assert_eq!(table.peek(&key(2), 1), 0.8); // clamped to nu
        assert!((table.nu - 0.8 * 0.999).abs() < 1e-15);
    }

    #[test]
    fn apply_tds_orders_backwards() {
        // Last visited pair gets beta(0), first gets beta(len-1).
        let mut table = TemperatureTable::new(2.0, 1.0, 0.999);
        let schedule = build_tds(-0.01, 0.9, 100).unwrap();
        let trace: EpisodeTrace = (0..3).map(|i| (key(i), 0)).collect();
        table.apply_tds(&trace, &schedule, true);
        let t_first = table.peek(&key(0), 0);
        let t_mid = table.peek(&key(1), 0);
        let t_last = table.peek(&key(2), 0);
        assert!((t_last - schedule.beta(0)).abs() < 1e-15);
        assert!((t_mid - schedule.beta(1)).abs() < 1e-15);
        assert!((t_first - schedule.beta(2)).abs() < 1e-15);
        assert!(t_last < t_mid && t_mid < t_first);
    }

    #[test]
    fn apply_tds_exhausted_schedule_reuses_last_beta() {
        let mut table = TemperatureTable::new(2.0, 1.0, 0.999);
        let schedule = build_tds(-0.01, 0.5, 2).unwrap();
        let trace: EpisodeTrace = (0..5).map(|i| (key(i), 0)).collect();
        table.apply_tds(&trace, &schedule, true);
        // Steps beyond the schedule use beta(1).
        for i in 0..3 {
            assert!((table.peek(&key(i), 0) - schedule.beta(1)).abs() < 1e-15);
        }
    }

    #[test]
    fn nu_decays_once_per_episode_end() {
        let mut table = TemperatureTable::new(2.0, 1.0, 0.999);
        let schedule = build_tds(-0.01, 0.95, 10).unwrap();
        for i in 0..10 {
            let completed = i % 2 == 0;
            table.apply_tds(&vec![(key(i), 0)], &schedule, completed);
        }
        assert!((table.nu - 0.999f64.powi(10)).abs() < 1e-12);
    }

    #[test]
    fn atf_terminal_and_fold_branches() {
        let config = AtfConfig {
            fold_in: 0.4,
            decay: 0.9,
        };
        let mut table = TemperatureTable::new(2.0, 1.0, 0.999);
        // Terminal branch: T = 0.9 * 1.0.
        table.atf_decay(key(1), 0, None, 5, config);
        assert!((table.peek(&key(1), 0) - 0.9).abs() < 1e-15);

        // Fold branch: T = 0.9 * (0.6 * 0.5 + 0.4 * 1.0) = 0.63.
        table.entries.insert((key(2), 0), 0.5);
        table.atf_decay(key(2), 0, Some(&key(3)), 5, config);
        assert!((table.peek(&key(2), 0) - 0.63).abs() < 1e-15);
    }

    #[test]
    fn atf_with_zero_fold_is_plain_decay() {
        let config = AtfConfig {
            fold_in: 0.0,
            decay: 0.9,
        };
        let mut table = TemperatureTable::new(2.0, 1.0, 0.999);
        table.entries.insert((key(1), 0), 0.7);
        table.atf_decay(key(1), 0, Some(&key(9)), 5, config);
        assert!((table.peek(&key(1), 0) - 0.63).abs() < 1e-15);
    }

    #[test]
    fn atf_repeated_terminal_visits_drive_temperature_to_zero() {
        let config = AtfConfig::default();
        let mut table = TemperatureTable::new(2.0, 1.0, 0.999);
        for _ in 0..3000 {
            table.atf_decay(key(1), 0, None, 5, config);
        }
        assert!(table.peek(&key(1), 0) < 1e-10);
    }

    #[test]
    fn mean_temperature_counts_absent_as_max() {
        let mut table = TemperatureTable::new(2.0, 1.0, 0.999);
        assert_eq!(table.mean_temperature(&key(1), 5), 1.0);
        table.entries.insert((key(1), 4), 0.0);
        assert!((table.mean_temperature(&key(1), 5) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn temperatures_monotone_under_tds() {
        let mut table = TemperatureTable::new(2.0, 1.0, 0.999);
        let schedule = build_tds(-0.01, 0.95, 50).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        use rand::Rng;
        let mut last: HashMap<(StateKey, usize), f64> = HashMap::new();
        for episode in 0..200 {
            let len = 1 + (rng.gen::<u64>() % 8) as usize;
            let trace: EpisodeTrace = (0..len)
                .map(|_| (key(rng.gen::<u64>() % 10), rng.gen_range(0..5)))
                .collect();
            table.apply_tds(&trace, &schedule, episode % 3 != 0);
            for (pair, t) in table.entries.iter() {
                if let Some(prev) = last.get(pair) {
                    assert!(*t <= prev + 1e-15, "temperature rose for {pair:?}");
                }
                last.insert(*pair, *t);
            }
        }
    }
}
