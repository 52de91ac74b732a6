//! Experience replay: a fixed-capacity ring buffer with per-transition
//! metadata (stored leniency or scheduled learning rate), uniform sampling,
//! and the per-episode queue used for terminal-state flushes.

use rand::Rng;
use thiserror::Error;

use crate::env::Observation;

/// Per-transition metadata; exactly one kind is used per run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Meta {
    None,
    /// Leniency snapshot computed at insertion time; never recomputed.
    Leniency(f64),
    /// Scheduled learning-rate fraction in (0, 1] (relative to alpha).
    Beta(f64),
}

impl Meta {
    pub fn kind(&self) -> MetaKind {
        match self {
            Meta::None => MetaKind::None,
            Meta::Leniency(_) => MetaKind::Leniency,
            Meta::Beta(_) => MetaKind::Beta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetaKind {
    None,
    Leniency,
    Beta,
}

/// One stored experience.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Observation,
    pub action: usize,
    pub reward: f64,
    pub next_state: Observation,
    pub terminal: bool,
    pub meta: Meta,
}

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("transition meta {got:?} does not match the run's meta kind {expected:?}")]
    MetaMismatch { expected: MetaKind, got: MetaKind },
    #[error("cannot sample {requested} transitions from a memory of {size}")]
    Insufficient { requested: usize, size: usize },
}

/// Ring buffer of transitions; oldest entries are overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    buffer: Vec<Transition>,
    capacity: usize,
    /// Total insertions since construction; `head = inserted % capacity`.
    inserted: u64,
    meta_kind: MetaKind,
}

pub const DEFAULT_CAPACITY: usize = 250_000;

impl ReplayMemory {
    pub fn new(capacity: usize, meta_kind: MetaKind) -> ReplayMemory {
        assert!(capacity > 0);
        ReplayMemory {
            buffer: Vec::new(),
            capacity,
            inserted: 0,
            meta_kind,
        }
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn insert(&mut self, transition: Transition) -> Result<(), ReplayError> {
        if transition.meta.kind() != self.meta_kind {
            return Err(ReplayError::MetaMismatch {
                expected: self.meta_kind,
                got: transition.meta.kind(),
            });
        }
        if self.buffer.len() < self.capacity {
            self.buffer.push(transition);
        } else {
            let slot = (self.inserted % self.capacity as u64) as usize;
            self.buffer[slot] = transition;
        }
        self.inserted += 1;
        Ok(())
    }

    /// Uniform sample with replacement; deterministic given the rng.
    /// Sampling with replacement only needs a non-empty memory.
    pub fn sample_indices<R: Rng>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>, ReplayError> {
        if self.buffer.is_empty() {
            return Err(ReplayError::Insufficient {
                requested: n,
                size: 0,
            });
        }
        Ok((0..n).map(|_| rng.gen_range(0..self.buffer.len())).collect())
    }

    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<&Transition>, ReplayError> {
        Ok(self
            .sample_indices(n, rng)?
            .into_iter()
            .map(|i| &self.buffer[i])
            .collect())
    }

    pub fn get(&self, index: usize) -> &Transition {
        &self.buffer[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.buffer.iter()
    }
}

/// Scheduled learning-rate fractions for episodic flushes, indexed by
/// distance to the terminal transition: `max(floor, final_beta * d^t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaSchedule {
    pub final_beta: f64,
    pub decay: f64,
    pub floor: f64,
}

impl BetaSchedule {
    /// The reference schedule: final rate 0.9, decay 0.99, floored at 0.4.
    pub fn default_shdqn() -> BetaSchedule {
        BetaSchedule {
            final_beta: 0.9,
            decay: 0.99,
            floor: 0.4,
        }
    }

    pub fn beta(&self, steps_from_terminal: usize) -> f64 {
        (self.final_beta * self.decay.powi(steps_from_terminal as i32)).max(self.floor)
    }
}

/// Ordered transitions of the in-progress episode; emptied exactly once at
/// episode end.
#[derive(Debug, Clone, Default)]
pub struct EpisodeQueue {
    transitions: Vec<Transition>,
}

impl EpisodeQueue {
    pub fn new() -> EpisodeQueue {
        EpisodeQueue::default()
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn push(&mut self, transition: Transition) {
        self.transitions.push(transition);
    }

    /// Transfers the queued episode into the memory. With a schedule the
    /// transitions are annotated so the final one carries the schedule's
    /// final beta and earlier ones geometrically smaller values, floored;
    /// without one they transfer as queued.
    pub fn flush(
        &mut self,
        memory: &mut ReplayMemory,
        schedule: Option<&BetaSchedule>,
    ) -> Result<(), ReplayError> {
        let n = self.transitions.len();
        for (i, mut transition) in self.transitions.drain(..).enumerate() {
            if let Some(schedule) = schedule {
                let dist = n - 1 - i;
                transition.meta = Meta::Beta(schedule.beta(dist));
            }
            memory.insert(transition)?;
        }
        Ok(())
    }
}
