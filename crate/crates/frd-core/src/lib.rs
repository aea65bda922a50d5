//! Simulator for groups of CartPole actor-critic agents that periodically
//! exchange quantized *proxy* experience through a central aggregator and
//! distill the aggregate back into their local networks.
//!
//! The crate is layered bottom-up:
//!
//! * [`env`] — the CartPole balancing task (plain Euler integration).
//! * [`nn`] — small dense networks, softmax, backprop, and Adam.
//! * [`seeding`] — master-seed to per-agent stream derivation.
//! * [`memory`] — state-space quantization grids and local experience
//!   memories (per-cluster policy/value averages, plus a raw experience
//!   memory for the distillation baseline).
//! * [`federation`] — exchange messages, the round schedule, aggregation,
//!   and the line-oriented wire format.
//! * [`agent`] — the advantage actor-critic learner.
//! * [`distill`] — cross-entropy / mean-squared-error distillation of
//!   aggregated memories into local networks.
//! * [`baselines`] — federated weight averaging and raw experience
//!   exchange.
//! * [`rounds`] — per-round orchestration shared by all exchange modes.
//! * [`harness`] — experiment presets, mission evaluation, sweeps,
//!   statistics, and CSV output.

pub mod agent;
pub mod baselines;
pub mod distill;
pub mod env;
pub mod federation;
pub mod harness;
pub mod memory;
pub mod nn;
pub mod rounds;
pub mod seeding;
