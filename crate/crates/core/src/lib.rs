//! Cooperative multi-agent Q-learning with subgoals drawn from the replay
//! buffer: environments, networks, reward shaping, losses and the trainer.

pub mod agent;
pub mod config;
pub mod env;
pub mod error;
pub mod losses;
pub mod mixer;
pub mod nn;
pub mod replay;
pub mod reward;
pub mod subgoal;
pub mod trainer;

pub use config::{CorrectionMode, TrainConfig};
pub use error::{MaserError, Result};
pub use trainer::{Arch, BlockReport, Learner};
