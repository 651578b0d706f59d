//! Multi-debris rendezvous mission planning.
//!
//! The crate is organised bottom-up:
//!
//! - [`astro`]: two-body circular-orbit mechanics, Hohmann and detour transfers.
//! - [`scenario`]: random debris fields, mission parameters and the scenario CSV format.
//! - [`env`]: the decision process (masking, reward, collision zones, refuelling).
//! - [`planners`]: greedy heuristics, UCT tree search and an exhaustive oracle.
//! - [`ppo`]: a small dense network trained with masked PPO.
//! - [`harness`]: the four evaluation modes and report aggregation.

pub mod astro;
pub mod env;
pub mod harness;
pub mod planners;
pub mod ppo;
pub mod rng;
pub mod scenario;

pub use astro::{KeplerianElements, StateVector, TransferPlan};
pub use env::{Action, MissionEnv, MissionState, Observation, StepOutcome, TerminationReason};
pub use scenario::{MissionParams, Scenario};
