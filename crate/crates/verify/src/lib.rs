//! Deliberately slow reference implementations: exhaustive subgoal search,
//! finite-difference gradients, an exactly solvable tabular game, a plain
//! QMIX update and a full-state planner for the skirmish maps.

pub mod cases;
pub mod finite_diff;
pub mod forward;
pub mod planner;
pub mod qmix;
pub mod subgoal;
pub mod tabular;

pub use finite_diff::{finite_diff_at, finite_diff_grad, finite_diff_scalar, relative_error, Coord};
pub use subgoal::brute_force_subgoal;
pub use tabular::{value_iteration, JointQ, TabularGame};
