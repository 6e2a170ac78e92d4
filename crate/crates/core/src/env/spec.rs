//! Environment spec files (TOML).
//!
//! ```toml
//! name = "skirmish-2v2"
//! width = 7
//! height = 7
//! episode_limit = 30
//! sight_radius = 3
//! attack_range = 1
//! reward_mode = "sparse"          # or "dense"
//! cliff = []                      # [[x, y], ...] impassable cells
//! allies = [{ health = 6, damage = 2 }, { health = 6, damage = 2 }]
//! enemies = [{ health = 6, damage = 2 }, { health = 6, damage = 2 }]
//! ally_spawn = { x0 = 0, y0 = 5, x1 = 6, y1 = 6 }
//! enemy_spawn = { x0 = 0, y0 = 0, x1 = 6, y1 = 1 }
//!
//! [rewards]
//! win = 200.0
//! kill = 10.0
//! death = 5.0
//! health_scale = 1.0
//! ```
//!
//! `y` grows southwards; `(0, 0)` is the north-west corner. Allies are the
//! learning agents, enemies follow the scripted policy.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{config_err, MaserError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    Dense,
    Sparse,
}

impl std::str::FromStr for RewardMode {
    type Err = MaserError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Self::Dense),
            "sparse" => Ok(Self::Sparse),
            _ => Err(config_err(format!("reward mode must be dense|sparse, got `{s}`"))),
        }
    }
}

impl std::fmt::Display for RewardMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Dense => "dense",
            Self::Sparse => "sparse",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitSpec {
    pub health: i32,
    pub damage: i32,
}

/// Inclusive rectangle of cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub x0: i32,
    pub y0: i32,
    pub x1: i32,
    pub y1: i32,
}

impl Region {
    pub fn cells(&self) -> impl Iterator<Item = (i32, i32)> + '_ {
        (self.y0..=self.y1).flat_map(move |y| (self.x0..=self.x1).map(move |x| (x, y)))
    }
}

/// Event rewards. The win bonus stacks with the kill bonus of the final enemy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConstants {
    pub win: f64,
    pub kill: f64,
    pub death: f64,
    /// Multiplier on health deltas in dense mode.
    pub health_scale: f64,
}

impl Default for RewardConstants {
    fn default() -> Self {
        Self {
            win: 200.0,
            kill: 10.0,
            death: 5.0,
            health_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub name: String,
    pub width: i32,
    pub height: i32,
    pub episode_limit: usize,
    pub sight_radius: i32,
    pub attack_range: i32,
    pub reward_mode: RewardMode,
    #[serde(default)]
    pub cliff: Vec<[i32; 2]>,
    pub allies: Vec<UnitSpec>,
    pub enemies: Vec<UnitSpec>,
    pub ally_spawn: Region,
    pub enemy_spawn: Region,
    #[serde(default)]
    pub rewards: RewardConstants,
}

pub const BUILTIN_NAMES: &[&str] = &["skirmish-2v2", "skirmish-3v3", "cliff-2v2"];

fn uniform_units(n: usize) -> Vec<UnitSpec> {
    vec![UnitSpec { health: 6, damage: 2 }; n]
}

impl EnvSpec {
    /// 7x7 grid, two allies against two scripted enemies.
    pub fn skirmish_2v2() -> Self {
        Self {
            name: "skirmish-2v2".into(),
            width: 7,
            height: 7,
            episode_limit: 30,
            sight_radius: 3,
            attack_range: 1,
            reward_mode: RewardMode::Sparse,
            cliff: Vec::new(),
            allies: uniform_units(2),
            enemies: uniform_units(2),
            ally_spawn: Region { x0: 0, y0: 5, x1: 6, y1: 6 },
            enemy_spawn: Region { x0: 0, y0: 0, x1: 6, y1: 1 },
            rewards: RewardConstants::default(),
        }
    }

    pub fn skirmish_3v3() -> Self {
        Self {
            name: "skirmish-3v3".into(),
            width: 9,
            height: 9,
            episode_limit: 40,
            allies: uniform_units(3),
            enemies: uniform_units(3),
            ally_spawn: Region { x0: 0, y0: 7, x1: 8, y1: 8 },
            enemy_spawn: Region { x0: 0, y0: 0, x1: 8, y1: 1 },
            ..Self::skirmish_2v2()
        }
    }

    /// `skirmish-2v2` with an impassable row between the spawn regions; the
    /// only crossing is a single gap at the west edge.
    pub fn cliff_2v2() -> Self {
        Self {
            name: "cliff-2v2".into(),
            cliff: (1..7).map(|x| [x, 3]).collect(),
            ..Self::skirmish_2v2()
        }
    }

    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "skirmish-2v2" => Ok(Self::skirmish_2v2()),
            "skirmish-3v3" => Ok(Self::skirmish_3v3()),
            "cliff-2v2" => Ok(Self::cliff_2v2()),
            _ => Err(config_err(format!(
                "unknown environment `{name}`; built-ins are {}",
                BUILTIN_NAMES.join(", ")
            ))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| MaserError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("env spec serializes")
    }

    pub fn is_cliff(&self, x: i32, y: i32) -> bool {
        self.cliff.iter().any(|c| c[0] == x && c[1] == y)
    }

    pub fn in_bounds(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && x < self.width && y < self.height
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(config_err("grid must be at least 2x2"));
        }
        if self.allies.is_empty() || self.enemies.is_empty() {
            return Err(config_err("need at least one ally and one enemy"));
        }
        if self.episode_limit == 0 {
            return Err(config_err("episode_limit must be positive"));
        }
        if self.sight_radius < 1 || self.attack_range < 1 || self.attack_range > self.sight_radius {
            return Err(config_err("need 1 <= attack_range <= sight_radius"));
        }
        for u in self.allies.iter().chain(&self.enemies) {
            if u.health <= 0 || u.damage < 0 {
                return Err(config_err("unit health must be positive and damage non-negative"));
            }
        }
        for c in &self.cliff {
            if !self.in_bounds(c[0], c[1]) {
                return Err(config_err(format!("cliff cell {c:?} outside the grid")));
            }
        }
        for (region, n, who) in [
            (&self.ally_spawn, self.allies.len(), "ally"),
            (&self.enemy_spawn, self.enemies.len(), "enemy"),
        ] {
            let free = region
                .cells()
                .filter(|&(x, y)| self.in_bounds(x, y) && !self.is_cliff(x, y))
                .count();
            if free < n {
                return Err(config_err(format!("{who} spawn region has {free} free cells for {n} units")));
            }
        }
        let overlap = self.ally_spawn.cells().any(|c| self.enemy_spawn.cells().any(|d| c == d));
        if overlap {
            return Err(config_err("spawn regions overlap"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_validate_and_roundtrip() {
        for name in BUILTIN_NAMES {
            let spec = EnvSpec::builtin(name).unwrap();
            spec.validate().unwrap();
            let back = EnvSpec::from_toml(&spec.to_toml()).unwrap();
            assert_eq!(back, spec);
        }
    }

    #[test]
    fn cliff_has_single_gap() {
        let spec = EnvSpec::cliff_2v2();
        let open: Vec<i32> = (0..spec.width).filter(|&x| !spec.is_cliff(x, 3)).collect();
        assert_eq!(open, vec![0]);
    }

    #[test]
    fn unknown_key_rejected() {
        let mut text = EnvSpec::skirmish_2v2().to_toml();
        text.insert_str(0, "bogus = 1\n");
        assert!(EnvSpec::from_toml(&text).is_err());
    }

    #[test]
    fn unknown_builtin_lists_names() {
        let err = EnvSpec::builtin("nope").unwrap_err().to_string();
        assert!(err.contains("cliff-2v2"));
    }
}
