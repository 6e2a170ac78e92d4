//! One-step lookahead over joint actions with full access to the simulator
//! state. Used to show the skirmish maps are winnable.

use maser_core::env::{Environment, Side, Skirmish};

/// Higher is better for the allies: health and survivors on each side, a
/// large bonus once every enemy is down, and a small pull toward the
/// nearest enemy.
pub fn position_value(env: &Skirmish) -> f64 {
    let st = env.state();
    let mut v = 0.0;
    for u in &st.units {
        let sign = if u.side == Side::Ally { 1.0 } else { -1.0 };
        v += sign * (3.0 * u.health.max(0) as f64 + if u.alive { 100.0 } else { 0.0 });
    }
    if st.enemies().iter().all(|u| !u.alive) {
        v += 1000.0;
    }
    for a in st.allies().iter().filter(|u| u.alive) {
        let d = st.enemies().iter().filter(|e| e.alive).map(|e| a.dist(e)).min().unwrap_or(0);
        v -= 0.1 * d as f64;
    }
    v
}

/// Joint action maximizing [`position_value`] after one simulated step;
/// lowest joint-action code on ties.
pub fn plan_actions(env: &Skirmish) -> Vec<usize> {
    let n = env.n_agents();
    let u = env.n_actions();
    let avail = env.avail_actions();
    let mut best = (f64::NEG_INFINITY, vec![0; n]);
    for code in 0..u.pow(n as u32) {
        let acts: Vec<usize> = (0..n).map(|i| (code / u.pow(i as u32)) % u).collect();
        if acts.iter().enumerate().any(|(i, &a)| !avail[i][a]) {
            continue;
        }
        let mut sim = env.clone();
        if sim.step(&acts).is_err() {
            continue;
        }
        let v = position_value(&sim);
        if v > best.0 {
            best = (v, acts);
        }
    }
    best.1
}
