//! Independent multi-agent deep Q-learners (double, hysteretic, scheduled
//! hysteretic, and lenient variants) together with the cooperative
//! object-transportation grid world they are evaluated on.
//!
//! The crate is organized around the training loop's moving parts:
//!
//! * [`env`] — the grid world: layouts, joint dynamics, rendering
//! * [`hashing`] — discrete state keys (exact bytes or SimHash of a code)
//! * [`nn`] — dense/conv networks, exact backprop, Adam
//! * [`replay`] — experience memory with per-transition metadata
//! * [`leniency`] — temperature table, decay schedules, lenient masking
//! * [`agent`] — the four learner variants and their exploration policies
//! * [`harness`] — seeded runs, metrics, policy classification
//! * [`oracle`] — BFS planner, tabular reference learner, one-shot game
//! * [`config`] — experiment configuration files
//! * [`layouts`] — the reference maps shipped with the crate

pub mod agent;
pub mod config;
pub mod env;
pub mod harness;
pub mod hashing;
pub mod layouts;
pub mod leniency;
pub mod nn;
pub mod oracle;
pub mod replay;

pub use agent::{Agent, AgentConfig, Algorithm, Exploration, LeniencyMode};
pub use config::ExperimentConfig;
pub use env::{Action, Cmotp, EnvState, Layout, Observation, RewardSpec, StepOutcome};
pub use hashing::{ProjectionMatrix, Scheme, StateKey};
pub use leniency::{TdsSchedule, TemperatureTable};
pub use nn::{AdamState, Network, NetworkSpec, Parameters};
pub use replay::{Meta, ReplayMemory, Transition};
