//! Training runs, their on-disk layout and checkpoint evaluation.
//!
//! A run directory holds:
//!
//! ```text
//! manifest.toml        resolved config, environment spec, version, seeds, layout
//! metrics.csv          one row per evaluation point
//! checkpoints/         latest.ckpt (refreshed at each evaluation) and final.ckpt
//! subgoals.jsonl       per-block subgoal score curves, when dump_subgoals is set
//! failure.json         written only when a run aborts
//! ```
//!
//! `metrics.csv` columns: `env_steps, block, eval_win_rate, L_TD, sum_Li,
//! sum_LE, sum_LD, mean_Rt, epsilon`. Loss columns average the updates since
//! the previous row.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use maser_core::env::{EnvSpec, Environment, Skirmish};
use maser_core::nn::Checkpoint;
use maser_core::subgoal::write_traces;
use maser_core::trainer::{build_env, evaluate_policy, Arch, BlockReport, EvalReport, LossReport};
use maser_core::{Learner, MaserError, Result, TrainConfig};
use serde::{Deserialize, Serialize};

pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const SUBGOAL_FILE: &str = "subgoals.jsonl";
pub const FAILURE_FILE: &str = "failure.json";

pub fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub metrics: String,
    pub checkpoints: String,
    pub subgoals: String,
}

impl Default for Layout {
    fn default() -> Self {
        Self {
            metrics: METRICS_FILE.into(),
            checkpoints: CHECKPOINT_DIR.into(),
            subgoals: SUBGOAL_FILE.into(),
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seeds: Vec<u64>,
    pub config: TrainConfig,
    pub env_spec: EnvSpec,
    pub layout: Layout,
}

impl RunManifest {
    pub fn new(config: &TrainConfig, env: &Skirmish) -> Self {
        Self {
            version: version_string(),
            seeds: vec![config.seed],
            config: config.clone(),
            env_spec: env.spec().clone(),
            layout: Layout::default(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| MaserError::Parse(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub env_steps: u64,
    pub block: u64,
    pub eval_win_rate: f64,
    #[serde(rename = "L_TD")]
    pub l_td: f64,
    #[serde(rename = "sum_Li")]
    pub sum_li: f64,
    #[serde(rename = "sum_LE")]
    pub sum_le: f64,
    #[serde(rename = "sum_LD")]
    pub sum_ld: f64,
    #[serde(rename = "mean_Rt")]
    pub mean_rt: f64,
    pub epsilon: f64,
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| MaserError::Parse(e.to_string()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| MaserError::Parse(e.to_string())))
        .collect()
}

/// Running mean of the loss reports since the last metrics row.
#[derive(Default)]
struct LossAccumulator {
    sum: LossReport,
    n: u32,
}

impl LossAccumulator {
    fn add(&mut self, r: &LossReport) {
        self.sum.l_td += r.l_td;
        self.sum.sum_li += r.sum_li;
        self.sum.sum_le += r.sum_le;
        self.sum.sum_ld += r.sum_ld;
        self.sum.mean_rt += r.mean_rt;
        self.n += 1;
    }

    fn take(&mut self) -> LossReport {
        let k = f64::from(self.n.max(1));
        let out = LossReport {
            l_td: self.sum.l_td / k,
            sum_li: self.sum.sum_li / k,
            sum_le: self.sum.sum_le / k,
            sum_ld: self.sum.sum_ld / k,
            mean_rt: self.sum.mean_rt / k,
            ..LossReport::default()
        };
        *self = Self::default();
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub env_steps: u64,
    pub episodes: u64,
    pub blocks: u64,
    pub final_win_rate: f64,
}

/// Default directory name for a run under the output root.
pub fn default_run_name(cfg: &TrainConfig) -> String {
    format!("{}_{}_seed{}", cfg.env, cfg.subgoal_mode, cfg.seed)
}

fn eval_seed(cfg: &TrainConfig, episodes: u64) -> u64 {
    cfg.seed.wrapping_mul(1_000_003).wrapping_add(episodes)
}

fn checkpoint_for(learner: &Learner, env: &Skirmish) -> Checkpoint {
    let mut ck = Checkpoint::from_params(&learner.params);
    ck.meta.insert("config".into(), serde_json::Value::String(learner.config.to_toml()));
    ck.meta.insert("env_spec".into(), serde_json::Value::String(env.spec().to_toml()));
    ck.meta.insert("env_steps".into(), learner.env_steps.into());
    ck.meta.insert("episodes".into(), learner.episodes.into());
    ck.meta.insert("version".into(), version_string().into());
    ck
}

#[derive(Serialize)]
struct FailureDump<'a> {
    error: String,
    block: u64,
    env_steps: u64,
    episodes: u64,
    last_report: Option<&'a BlockReport>,
}

/// Trains to `cfg.max_env_steps`, evaluating every `eval_interval` collected
/// episodes and once more at the end.
pub fn run_train(cfg: &TrainConfig, out_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let env = build_env(cfg)?;
    let mut eval_env = env.clone();
    std::fs::create_dir_all(out_dir.join(CHECKPOINT_DIR))?;
    std::fs::write(out_dir.join(MANIFEST_FILE), RunManifest::new(cfg, &env).to_toml())?;
    let spec_env = env.clone();
    let mut learner = Learner::new(cfg.clone(), Box::new(env))?;
    let mut metrics = csv::Writer::from_path(out_dir.join(METRICS_FILE)).map_err(|e| MaserError::Io(e.into()))?;
    let mut subgoals = if cfg.dump_subgoals {
        Some(BufWriter::new(File::create(out_dir.join(SUBGOAL_FILE))?))
    } else {
        None
    };
    let mut acc = LossAccumulator::default();
    let mut last: Option<BlockReport> = None;
    let mut final_win_rate = 0.0;
    let result: Result<()> = (|| {
        while learner.env_steps < cfg.max_env_steps {
            let report = learner.train_block()?;
            if report.updated {
                acc.add(&report.losses);
            }
            if let Some(w) = subgoals.as_mut() {
                write_traces(w, &learner.last_traces)?;
            }
            let at_end = learner.env_steps >= cfg.max_env_steps;
            if learner.episodes % cfg.eval_interval == 0 || at_end {
                let ev = evaluate_policy(
                    &learner.arch,
                    &learner.params,
                    &mut eval_env,
                    cfg.eval_episodes,
                    eval_seed(cfg, learner.episodes),
                )?;
                final_win_rate = ev.win_rate;
                let l = acc.take();
                let row = MetricsRow {
                    env_steps: learner.env_steps,
                    block: report.block,
                    eval_win_rate: ev.win_rate,
                    l_td: l.l_td,
                    sum_li: l.sum_li,
                    sum_le: l.sum_le,
                    sum_ld: l.sum_ld,
                    mean_rt: l.mean_rt,
                    epsilon: report.epsilon,
                };
                if [row.l_td, row.sum_li, row.sum_le, row.sum_ld, row.mean_rt].iter().any(|v| !v.is_finite()) {
                    return Err(MaserError::NonFinite(format!("loss average at block {}", report.block)));
                }
                metrics.serialize(row).map_err(|e| MaserError::Io(std::io::Error::other(e)))?;
                metrics.flush()?;
                checkpoint_for(&learner, &spec_env).save(&out_dir.join(CHECKPOINT_DIR).join("latest.ckpt"))?;
            }
            last = Some(report);
        }
        Ok(())
    })();
    if let Some(mut w) = subgoals {
        w.flush()?;
    }
    if let Err(e) = result {
        let dump = FailureDump {
            error: e.to_string(),
            block: learner.blocks,
            env_steps: learner.env_steps,
            episodes: learner.episodes,
            last_report: last.as_ref(),
        };
        let text = serde_json::to_string_pretty(&dump).unwrap_or_default();
        std::fs::write(out_dir.join(FAILURE_FILE), text)?;
        return Err(e);
    }
    checkpoint_for(&learner, &spec_env).save(&out_dir.join(CHECKPOINT_DIR).join("final.ckpt"))?;
    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        env_steps: learner.env_steps,
        episodes: learner.episodes,
        blocks: learner.blocks,
        final_win_rate,
    })
}

fn meta_str<'a>(ck: &'a Checkpoint, key: &str) -> Result<&'a str> {
    ck.meta
        .get(key)
        .and_then(|v| v.as_str())
        .ok_or_else(|| MaserError::Parse(format!("checkpoint has no `{key}` entry")))
}

/// Greedy evaluation of a saved checkpoint on the environment it was
/// trained on.
pub fn run_eval(checkpoint: &Path, episodes: usize, seed: u64) -> Result<EvalReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let cfg = TrainConfig::from_toml(meta_str(&ck, "config")?)?;
    let spec = EnvSpec::from_toml(meta_str(&ck, "env_spec")?)?;
    let mut env = Skirmish::new(spec)?.with_reward_mode(cfg.reward_mode);
    let arch = Arch::for_env(&env as &dyn Environment, &cfg);
    let params = ck.to_params(&arch.template_params())?;
    evaluate_policy(&arch, &params, &mut env, episodes, seed)
}
