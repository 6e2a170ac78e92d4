//! Decentralized partially observable environments.

pub mod skirmish;
pub mod spec;

pub use skirmish::{scripted_enemy_policy, GlobalState, Side, Skirmish, Unit};
pub use spec::{EnvSpec, Region, RewardConstants, RewardMode, UnitSpec, BUILTIN_NAMES};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Discrete action set shared by the skirmish maps.
pub mod action {
    pub const NOOP: usize = 0;
    pub const NORTH: usize = 1;
    pub const SOUTH: usize = 2;
    pub const EAST: usize = 3;
    pub const WEST: usize = 4;
    pub const ATTACK: usize = 5;
}

pub const N_ACTIONS: usize = 6;

/// Outcome of one joint step; the next observations and state are read from
/// the environment afterwards.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepResult {
    /// Extrinsic team reward for this step.
    pub reward: f64,
    pub done: bool,
    pub won: bool,
    /// Health-delta part of the dense reward (already scaled); zero for
    /// environments without health.
    pub health_delta: f64,
}

/// Cooperative multi-agent environment driven by a joint action per step.
pub trait Environment {
    fn name(&self) -> &str;
    fn n_agents(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn state_dim(&self) -> usize;
    /// Maximum episode length `T_e`.
    fn episode_limit(&self) -> usize;
    fn reset(&mut self, seed: u64);
    /// One fixed-length vector per agent.
    fn observations(&self) -> Vec<Vec<f64>>;
    fn state_vector(&self) -> Vec<f64>;
    /// Allowed actions per agent.
    fn avail_actions(&self) -> Vec<Vec<bool>>;
    fn step(&mut self, actions: &[usize]) -> Result<StepResult>;
}

/// One line of an episode log (JSON lines, one timestep per line).
///
/// `t` counts from 1. `obs` holds the per-agent observation vectors seen before
/// acting, `actions` the joint action taken, `r_ex` the extrinsic reward and
/// `done` whether the episode terminated on this step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub r_ex: f64,
    pub done: bool,
}

/// Builds a built-in skirmish map by name with the given reward mode.
pub fn make_builtin(name: &str, mode: RewardMode) -> Result<Skirmish> {
    Ok(Skirmish::new(EnvSpec::builtin(name)?)?.with_reward_mode(mode))
}
