//! Grid skirmish between learning allies and scripted enemies.
//!
//! Each step resolves in a fixed order: the scripted enemies choose their
//! actions from the pre-step state, all units move in unit-index order (allies
//! first, a move into an occupied, cliff or off-grid cell is dropped), then
//! every unit that chose to attack hits its nearest opposing unit within attack
//! range. Attacks are simultaneous: all damage is computed from the post-move
//! positions and applied together.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::spec::{EnvSpec, RewardMode};
use super::{action, Environment, StepResult, N_ACTIONS};
use crate::error::{MaserError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Ally,
    Enemy,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Unit {
    pub side: Side,
    pub x: i32,
    pub y: i32,
    pub health: i32,
    pub max_health: i32,
    pub damage: i32,
    pub alive: bool,
}

impl Unit {
    pub fn dist(&self, other: &Unit) -> i32 {
        (self.x - other.x).abs() + (self.y - other.y).abs()
    }
}

/// Full simulator state. Unit indices: allies `0..n_allies`, then enemies.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlobalState {
    pub width: i32,
    pub height: i32,
    pub units: Vec<Unit>,
    pub n_allies: usize,
    pub t: usize,
}

impl GlobalState {
    pub fn allies(&self) -> &[Unit] {
        &self.units[..self.n_allies]
    }

    pub fn enemies(&self) -> &[Unit] {
        &self.units[self.n_allies..]
    }

    pub fn occupied(&self, x: i32, y: i32) -> bool {
        self.units.iter().any(|u| u.alive && u.x == x && u.y == y)
    }

    /// Nearest alive unit of side `side` within `radius` of unit `from`,
    /// lowest index on ties.
    pub fn nearest(&self, from: usize, side: Side, radius: i32) -> Option<usize> {
        let me = &self.units[from];
        self.units
            .iter()
            .enumerate()
            .filter(|(j, u)| *j != from && u.alive && u.side == side && me.dist(u) <= radius)
            .min_by_key(|(j, u)| (me.dist(u), *j))
            .map(|(j, _)| j)
    }
}

fn delta(a: usize) -> (i32, i32) {
    match a {
        action::NORTH => (0, -1),
        action::SOUTH => (0, 1),
        action::EAST => (1, 0),
        action::WEST => (-1, 0),
        _ => (0, 0),
    }
}

/// Scripted opponent: attack the nearest visible ally when it is in range,
/// otherwise step toward it (first of N/S/E/W that shortens the distance and is
/// not blocked by terrain), and hold when no ally is visible.
pub fn scripted_enemy_policy(spec: &EnvSpec, state: &GlobalState) -> Vec<usize> {
    (state.n_allies..state.units.len())
        .map(|e| {
            let me = &state.units[e];
            if !me.alive {
                return action::NOOP;
            }
            let Some(target) = state.nearest(e, Side::Ally, spec.sight_radius) else {
                return action::NOOP;
            };
            let tgt = &state.units[target];
            let d = me.dist(tgt);
            if d <= spec.attack_range {
                return action::ATTACK;
            }
            for a in [action::NORTH, action::SOUTH, action::EAST, action::WEST] {
                let (dx, dy) = delta(a);
                let (nx, ny) = (me.x + dx, me.y + dy);
                let closer = (nx - tgt.x).abs() + (ny - tgt.y).abs() < d;
                if closer && spec.in_bounds(nx, ny) && !spec.is_cliff(nx, ny) {
                    return a;
                }
            }
            action::NOOP
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct Skirmish {
    spec: EnvSpec,
    reward_mode: RewardMode,
    state: GlobalState,
    last_actions: Vec<usize>,
    last_damage: Vec<i32>,
    terminal: bool,
}

impl Skirmish {
    pub fn new(spec: EnvSpec) -> Result<Self> {
        spec.validate()?;
        let reward_mode = spec.reward_mode;
        let mut env = Self {
            state: GlobalState {
                width: spec.width,
                height: spec.height,
                units: Vec::new(),
                n_allies: spec.allies.len(),
                t: 0,
            },
            last_actions: vec![action::NOOP; spec.allies.len()],
            last_damage: Vec::new(),
            terminal: true,
            reward_mode,
            spec,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn with_reward_mode(mut self, mode: RewardMode) -> Self {
        self.reward_mode = mode;
        self
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn state(&self) -> &GlobalState {
        &self.state
    }

    pub fn reward_mode(&self) -> RewardMode {
        self.reward_mode
    }

    /// Damage each unit took in the most recent step.
    pub fn last_damage(&self) -> &[i32] {
        &self.last_damage
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    /// Replaces the simulator state, e.g. to set up a scenario in tests.
    pub fn set_state(&mut self, state: GlobalState) {
        self.terminal = false;
        self.last_damage = vec![0; state.units.len()];
        self.state = state;
    }

    fn n_units(&self) -> usize {
        self.spec.allies.len() + self.spec.enemies.len()
    }

    fn observe(&self, i: usize) -> Vec<f64> {
        let mut o = vec![0.0; self.obs_dim()];
        let me = &self.state.units[i];
        if !me.alive {
            return o;
        }
        let (w, h) = ((self.spec.width - 1) as f64, (self.spec.height - 1) as f64);
        o[0] = me.health as f64 / me.max_health as f64;
        o[1] = me.x as f64 / w;
        o[2] = me.y as f64 / h;
        let r = self.spec.sight_radius as f64;
        let mut k = 3;
        for (j, u) in self.state.units.iter().enumerate() {
            if j == i {
                continue;
            }
            if u.alive && me.dist(u) <= self.spec.sight_radius {
                o[k] = (u.x - me.x) as f64 / r;
                o[k + 1] = (u.y - me.y) as f64 / r;
                o[k + 2] = u.health as f64 / u.max_health as f64;
                o[k + 3] = if u.side == Side::Ally { 1.0 } else { -1.0 };
            }
            k += 4;
        }
        o[k + self.last_actions[i]] = 1.0;
        o
    }
}

impl Environment for Skirmish {
    fn name(&self) -> &str {
        &self.spec.name
    }

    fn n_agents(&self) -> usize {
        self.spec.allies.len()
    }

    fn n_actions(&self) -> usize {
        N_ACTIONS
    }

    /// Own health, own position, four features per other unit, last action.
    fn obs_dim(&self) -> usize {
        3 + 4 * (self.n_units() - 1) + N_ACTIONS
    }

    /// Per unit: position, health fraction, alive flag; plus elapsed time.
    fn state_dim(&self) -> usize {
        4 * self.n_units() + 1
    }

    fn episode_limit(&self) -> usize {
        self.spec.episode_limit
    }

    fn reset(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut units = Vec::with_capacity(self.n_units());
        for (side, region, specs) in [
            (Side::Ally, self.spec.ally_spawn, &self.spec.allies),
            (Side::Enemy, self.spec.enemy_spawn, &self.spec.enemies),
        ] {
            let cells: Vec<(i32, i32)> = region
                .cells()
                .filter(|&(x, y)| self.spec.in_bounds(x, y) && !self.spec.is_cliff(x, y))
                .collect();
            let picks = sample(&mut rng, cells.len(), specs.len());
            for (u, idx) in specs.iter().zip(picks.iter()) {
                let (x, y) = cells[idx];
                units.push(Unit {
                    side,
                    x,
                    y,
                    health: u.health,
                    max_health: u.health,
                    damage: u.damage,
                    alive: true,
                });
            }
        }
        self.state = GlobalState {
            width: self.spec.width,
            height: self.spec.height,
            n_allies: self.spec.allies.len(),
            units,
            t: 0,
        };
        self.last_actions = vec![action::NOOP; self.spec.allies.len()];
        self.last_damage = vec![0; self.n_units()];
        self.terminal = false;
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        (0..self.spec.allies.len()).map(|i| self.observe(i)).collect()
    }

    fn state_vector(&self) -> Vec<f64> {
        let (w, h) = ((self.spec.width - 1) as f64, (self.spec.height - 1) as f64);
        let mut s = Vec::with_capacity(self.state_dim());
        for u in &self.state.units {
            s.push(u.x as f64 / w);
            s.push(u.y as f64 / h);
            s.push(u.health as f64 / u.max_health as f64);
            s.push(if u.alive { 1.0 } else { 0.0 });
        }
        s.push(self.state.t as f64 / self.spec.episode_limit as f64);
        s
    }

    fn avail_actions(&self) -> Vec<Vec<bool>> {
        self.state
            .allies()
            .iter()
            .map(|u| {
                if u.alive {
                    vec![true; N_ACTIONS]
                } else {
                    let mut m = vec![false; N_ACTIONS];
                    m[action::NOOP] = true;
                    m
                }
            })
            .collect()
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        if self.terminal {
            return Err(MaserError::Usage("step called on a terminal state; reset first".into()));
        }
        let na = self.state.n_allies;
        if actions.len() != na {
            return Err(MaserError::Usage(format!("expected {na} actions, got {}", actions.len())));
        }
        for (i, &a) in actions.iter().enumerate() {
            if a >= N_ACTIONS {
                return Err(MaserError::Usage(format!("agent {i}: action {a} out of range")));
            }
            if !self.state.units[i].alive && a != action::NOOP {
                return Err(MaserError::Usage(format!("agent {i} is dead and may only no-op")));
            }
        }
        let mut joint = actions.to_vec();
        joint.extend(scripted_enemy_policy(&self.spec, &self.state));

        for (k, &a) in joint.iter().enumerate() {
            let (dx, dy) = delta(a);
            if (dx, dy) == (0, 0) || !self.state.units[k].alive {
                continue;
            }
            let (nx, ny) = (self.state.units[k].x + dx, self.state.units[k].y + dy);
            if self.spec.in_bounds(nx, ny) && !self.spec.is_cliff(nx, ny) && !self.state.occupied(nx, ny) {
                self.state.units[k].x = nx;
                self.state.units[k].y = ny;
            }
        }

        let mut incoming = vec![0; self.state.units.len()];
        for (k, &a) in joint.iter().enumerate() {
            let u = &self.state.units[k];
            if a != action::ATTACK || !u.alive {
                continue;
            }
            let foe = if u.side == Side::Ally { Side::Enemy } else { Side::Ally };
            if let Some(target) = self.state.nearest(k, foe, self.spec.attack_range) {
                incoming[target] += u.damage;
            }
        }
        let (mut enemy_deaths, mut ally_deaths) = (0, 0);
        let (mut dealt, mut received) = (0.0, 0.0);
        for (k, u) in self.state.units.iter_mut().enumerate() {
            let lost = incoming[k].min(u.health);
            self.last_damage[k] = lost;
            if lost == 0 {
                continue;
            }
            u.health -= lost;
            let frac = lost as f64;
            if u.side == Side::Enemy {
                dealt += frac;
            } else {
                received += frac;
            }
            if u.health == 0 && u.alive {
                u.alive = false;
                if u.side == Side::Enemy {
                    enemy_deaths += 1;
                } else {
                    ally_deaths += 1;
                }
            }
        }

        self.state.t += 1;
        self.last_actions = actions.to_vec();
        let won = self.state.enemies().iter().all(|u| !u.alive);
        let lost_all = self.state.allies().iter().all(|u| !u.alive);
        let done = won || lost_all || self.state.t >= self.spec.episode_limit;
        self.terminal = done;

        let rc = &self.spec.rewards;
        let mut reward = if won { rc.win } else { 0.0 } + rc.kill * enemy_deaths as f64 - rc.death * ally_deaths as f64;
        if self.reward_mode == RewardMode::Dense {
            reward += rc.health_scale * (dealt - received);
        }
        Ok(StepResult {
            reward,
            done,
            won,
            health_delta: rc.health_scale * (dealt - received),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(side: Side, x: i32, y: i32, health: i32) -> Unit {
        Unit {
            side,
            x,
            y,
            health,
            max_health: 6,
            damage: 2,
            alive: health > 0,
        }
    }

    fn scenario(units: Vec<Unit>, n_allies: usize) -> Skirmish {
        let mut env = Skirmish::new(EnvSpec::skirmish_2v2()).unwrap();
        env.set_state(GlobalState {
            width: 7,
            height: 7,
            units,
            n_allies,
            t: 0,
        });
        env
    }

    #[test]
    fn reset_places_all_units() {
        let mut env = Skirmish::new(EnvSpec::skirmish_2v2()).unwrap();
        env.reset(11);
        assert_eq!(env.state().allies().iter().filter(|u| u.alive).count(), 2);
        assert_eq!(env.state().enemies().iter().filter(|u| u.alive).count(), 2);
        assert!(env.state().units.iter().all(|u| u.health == u.max_health));
        assert_eq!(env.state().t, 0);
    }

    #[test]
    fn reset_is_deterministic() {
        let mut a = Skirmish::new(EnvSpec::skirmish_2v2()).unwrap();
        let mut b = a.clone();
        a.reset(99);
        b.reset(99);
        assert_eq!(a.state(), b.state());
    }

    #[test]
    fn cliff_cells_free_at_reset() {
        let mut env = Skirmish::new(EnvSpec::cliff_2v2()).unwrap();
        for seed in 0..50 {
            env.reset(seed);
            assert!(env.state().units.iter().all(|u| !env.spec().is_cliff(u.x, u.y)));
        }
    }

    #[test]
    fn moves_only_give_zero_sparse_reward() {
        let mut env = Skirmish::new(EnvSpec::skirmish_2v2()).unwrap();
        env.reset(3);
        let r = env.step(&[action::WEST, action::EAST]).unwrap();
        assert_eq!(r.reward, 0.0);
    }

    #[test]
    fn single_kill_is_plus_ten() {
        // Ally 0 and ally 1 focus enemy 2 (health 2); enemy 3 stays far away.
        let mut env = scenario(
            vec![
                unit(Side::Ally, 3, 4, 6),
                unit(Side::Ally, 4, 3, 6),
                unit(Side::Enemy, 3, 3, 2),
                unit(Side::Enemy, 0, 0, 6),
            ],
            2,
        );
        let r = env.step(&[action::ATTACK, action::ATTACK]).unwrap();
        // enemy 2 attacks ally 0 (nearest, lowest index) before dying
        assert_eq!(r.reward, 10.0);
        assert!(!r.won);
    }

    #[test]
    fn last_kill_stacks_win_bonus() {
        let mut env = scenario(
            vec![
                unit(Side::Ally, 3, 4, 6),
                unit(Side::Ally, 0, 6, 6),
                unit(Side::Enemy, 3, 3, 2),
                unit(Side::Enemy, 6, 0, 0),
            ],
            2,
        );
        let r = env.step(&[action::ATTACK, action::NOOP]).unwrap();
        assert_eq!(r.reward, 210.0);
        assert!(r.won && r.done);
    }

    #[test]
    fn ally_death_is_minus_five() {
        let mut env = scenario(
            vec![
                unit(Side::Ally, 3, 4, 2),
                unit(Side::Ally, 0, 6, 6),
                unit(Side::Enemy, 3, 3, 6),
                unit(Side::Enemy, 6, 0, 6),
            ],
            2,
        );
        let r = env.step(&[action::NOOP, action::NOOP]).unwrap();
        assert_eq!(r.reward, -5.0);
    }

    #[test]
    fn stepping_terminal_state_is_usage_error() {
        let mut env = scenario(
            vec![
                unit(Side::Ally, 3, 4, 6),
                unit(Side::Ally, 0, 6, 6),
                unit(Side::Enemy, 3, 3, 2),
                unit(Side::Enemy, 6, 0, 0),
            ],
            2,
        );
        env.step(&[action::ATTACK, action::NOOP]).unwrap();
        assert!(matches!(env.step(&[action::NOOP, action::NOOP]), Err(MaserError::Usage(_))));
    }

    #[test]
    fn dead_agent_must_noop() {
        let mut env = scenario(
            vec![
                unit(Side::Ally, 3, 4, 0),
                unit(Side::Ally, 0, 6, 6),
                unit(Side::Enemy, 3, 0, 6),
                unit(Side::Enemy, 6, 0, 6),
            ],
            2,
        );
        assert_eq!(env.avail_actions()[0], vec![true, false, false, false, false, false]);
        assert!(env.step(&[action::NORTH, action::NOOP]).is_err());
    }

    #[test]
    fn enemy_attacks_adjacent_ally() {
        let spec = EnvSpec::skirmish_2v2();
        let st = GlobalState {
            width: 7,
            height: 7,
            n_allies: 2,
            t: 0,
            units: vec![
                unit(Side::Ally, 3, 3, 6),
                unit(Side::Ally, 0, 6, 6),
                unit(Side::Enemy, 3, 2, 6),
                unit(Side::Enemy, 6, 0, 6),
            ],
        };
        assert_eq!(scripted_enemy_policy(&spec, &st), vec![action::ATTACK, action::NOOP]);
    }

    #[test]
    fn enemy_holds_without_visible_ally() {
        let spec = EnvSpec::skirmish_2v2();
        let st = GlobalState {
            width: 7,
            height: 7,
            n_allies: 2,
            t: 0,
            units: vec![
                unit(Side::Ally, 0, 6, 6),
                unit(Side::Ally, 1, 6, 6),
                unit(Side::Enemy, 6, 0, 6),
                unit(Side::Enemy, 5, 0, 6),
            ],
        };
        assert_eq!(scripted_enemy_policy(&spec, &st), vec![action::NOOP, action::NOOP]);
    }

    #[test]
    fn enemy_targets_lower_indexed_of_equidistant_allies() {
        let spec = EnvSpec::skirmish_2v2();
        // Enemy at (3,2); allies at (1,2) and (5,2), both at distance 2.
        let st = GlobalState {
            width: 7,
            height: 7,
            n_allies: 2,
            t: 0,
            units: vec![
                unit(Side::Ally, 1, 2, 6),
                unit(Side::Ally, 5, 2, 6),
                unit(Side::Enemy, 3, 2, 6),
                unit(Side::Enemy, 6, 6, 6),
            ],
        };
        assert_eq!(scripted_enemy_policy(&spec, &st)[0], action::WEST);
    }

    #[test]
    fn observation_dim_and_range() {
        let mut env = Skirmish::new(EnvSpec::skirmish_3v3()).unwrap();
        env.reset(5);
        for _ in 0..10 {
            for o in env.observations() {
                assert_eq!(o.len(), env.obs_dim());
                assert!(o.iter().all(|v| (-1.0..=1.0).contains(v)));
            }
            if env.step(&[action::NORTH, action::NORTH, action::ATTACK]).unwrap().done {
                break;
            }
        }
    }
}
