//! Blockwise learner: one summed-loss gradient step per block, then one new
//! epsilon-greedy episode.
//!
//! Within an update the M sampled episodes are processed as one batch; tape
//! rows are laid out step-major (`row = t * M + k` for episode `k`).
//! Block-start values (Q-vectors, greedy maxima, mixer totals at the stored
//! actions) are read off the online forward pass before any parameter moves,
//! which is exactly the snapshot evaluation; they enter the losses only as
//! constants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{act_epsilon_greedy, masked_argmax, RecurrentController, UtilityNet};
use crate::config::{CorrectionMode, TrainConfig};
use crate::env::{make_builtin, EnvSpec, Environment, Skirmish};
use crate::error::{config_err, MaserError, Result};
use crate::losses::td_target;
use crate::mixer::Mixer;
use crate::nn::{BoundParams, GradBundle, ParamSet, RmsProp, Tape, Tensor, Var};
use crate::replay::{Episode, EpisodeBuilder, ReplayBuffer};
use crate::reward::{actionable_distance, ReprNet, RewardBundle};
use crate::subgoal::{select_subgoals, select_subgoals_random, subgoal_traces, EpisodeValues, SubgoalAssignment, SubgoalTrace};

/// Network shapes derived from an environment and a config.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub share_params: bool,
    pub net: UtilityNet,
    pub mixer: Mixer,
    pub repr: ReprNet,
}

impl Arch {
    pub fn for_env(env: &dyn Environment, cfg: &TrainConfig) -> Self {
        let (n, u, d, s) = (env.n_agents(), env.n_actions(), env.obs_dim(), env.state_dim());
        Self {
            n_agents: n,
            n_actions: u,
            obs_dim: d,
            state_dim: s,
            share_params: cfg.share_params,
            net: UtilityNet {
                obs_dim: d,
                hidden: cfg.hidden_dim,
                n_actions: u,
            },
            mixer: Mixer {
                n_agents: n,
                state_dim: s,
                embed: cfg.mixer_embed,
            },
            repr: ReprNet {
                obs_dim: d,
                hidden: cfg.repr_hidden,
                out_dim: u,
            },
        }
    }

    /// Utility nets, then the mixer, then the representation nets, all drawn
    /// from `rng` in that order.
    pub fn init_params(&self, rng: &mut impl Rng) -> ParamSet {
        let n_util = if self.share_params { 1 } else { self.n_agents };
        let utility = (0..n_util).map(|_| self.net.init(rng)).collect();
        let mixer = self.mixer.init(rng);
        let repr = (0..self.n_agents).map(|_| self.repr.init(rng)).collect();
        ParamSet::new(utility, mixer, repr)
    }

    /// All-zero parameters with the right shapes, e.g. for loading checkpoints.
    pub fn template_params(&self) -> ParamSet {
        let mut p = self.init_params(&mut rand::rngs::mock::StepRng::new(0, 0));
        for g in p.online_groups_mut() {
            for t in g.tensors_mut() {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        p.sync_targets();
        p
    }
}

/// Builds the configured environment; the config's reward mode wins over
/// the one in the spec.
pub fn build_env(cfg: &TrainConfig) -> Result<Skirmish> {
    match &cfg.env_file {
        Some(path) => Ok(Skirmish::new(EnvSpec::load(std::path::Path::new(path))?)?.with_reward_mode(cfg.reward_mode)),
        None => make_builtin(&cfg.env, cfg.reward_mode),
    }
}

/// Component values of one update, summed over the sampled episodes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub l_td: f64,
    pub sum_li: f64,
    pub sum_le: f64,
    pub sum_ld: f64,
    pub mean_rt: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

pub struct UpdateOutput {
    pub grads: GradBundle,
    pub report: LossReport,
    pub assignments: Vec<SubgoalAssignment>,
    pub values: Vec<EpisodeValues>,
    pub rewards: Vec<RewardBundle>,
    pub traces: Vec<SubgoalTrace>,
}

fn rows_of(batch: &[&Episode], l: usize, f: impl Fn(&Episode, usize) -> Option<&[f64]>, width: usize) -> Tensor {
    let m = batch.len();
    let mut data = vec![0.0; l * m * width];
    for t in 0..l {
        for (k, ep) in batch.iter().enumerate() {
            if let Some(v) = f(ep, t) {
                let r = t * m + k;
                data[r * width..(r + 1) * width].copy_from_slice(v);
            }
        }
    }
    Tensor::from_vec(l * m, width, data)
}

fn check_batch(arch: &Arch, batch: &[&Episode]) -> Result<usize> {
    if batch.is_empty() {
        return Err(MaserError::EmptyBuffer);
    }
    for ep in batch {
        if ep.n_agents() != arch.n_agents
            || ep.obs_dim() != arch.obs_dim
            || ep.state_dim() != arch.state_dim
            || ep.n_actions() != arch.n_actions
        {
            return Err(config_err(format!("episode {} does not match the network shapes", ep.id)));
        }
        if ep.len == 0 {
            return Err(MaserError::MalformedEpisode(format!("episode {} is empty", ep.id)));
        }
    }
    Ok(batch.iter().map(|e| e.len).max().unwrap())
}

/// Greedy maxima of the target utility nets at the next step and the target
/// mixer applied to them, per row. Rows without a successor hold zeros.
fn target_values(arch: &Arch, params: &ParamSet, batch: &[&Episode], l: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let m = batch.len();
    let n = arch.n_agents;
    let mut tape = Tape::new();
    let mut next_max = vec![vec![0.0; l * m]; n];
    for (i, nm) in next_max.iter_mut().enumerate() {
        let p = params.target_utility_of(i).bind_const(&mut tape);
        let inputs = (0..l).map(|t| rows_of(batch, 1, |ep, _| Some(&ep.obs[t][i]), arch.obs_dim)).collect();
        let qs = arch.net.unroll(&mut tape, &p, inputs)?;
        for t in 0..l.saturating_sub(1) {
            let q = tape.value(qs[t + 1]);
            for (k, ep) in batch.iter().enumerate() {
                if t + 1 < ep.len {
                    let row = q.row_slice(k);
                    let a = masked_argmax(row, &ep.avail[t + 1][i])
                        .ok_or_else(|| MaserError::MalformedEpisode(format!("no allowed action at t={}", t + 1)))?;
                    nm[t * m + k] = row[a];
                }
            }
        }
    }
    let mut qdata = vec![0.0; l * m * n];
    for r in 0..l * m {
        for i in 0..n {
            qdata[r * n + i] = next_max[i][r];
        }
    }
    let q = tape.constant(Tensor::from_vec(l * m, n, qdata));
    let states = tape.constant(rows_of(
        batch,
        l,
        |ep, t| (t + 1 < ep.len).then(|| ep.states[t + 1].as_slice()),
        arch.state_dim,
    ));
    let p = params.target_mixer.bind_const(&mut tape);
    let tot = arch.mixer.forward(&mut tape, &p, q, states)?;
    Ok((next_max, tape.value(tot).data().to_vec()))
}

/// Block-start quantities that enter the losses as constants.
#[derive(Clone, Debug)]
pub struct Frozen {
    pub values: Vec<EpisodeValues>,
    pub assignments: Vec<SubgoalAssignment>,
    pub rewards: Vec<RewardBundle>,
    /// `[agent][row]` target-network greedy maxima at the next step.
    pub next_max: Vec<Vec<f64>>,
    /// `[row]` target mixer at the next step.
    pub next_tot: Vec<f64>,
    pub traces: Vec<SubgoalTrace>,
}

/// Loss nodes of one update, all on `tape`.
pub struct LossGraph {
    pub tape: Tape,
    pub bound: BoundParams,
    pub l_td: Var,
    pub li: Vec<Var>,
    pub le: Vec<Var>,
    /// `None` when the representation nets are disabled.
    pub ld: Vec<Option<Var>>,
    pub steps: usize,
}

impl LossGraph {
    /// Weighted sum of the components; zero-weight terms are left out.
    pub fn composite(&mut self, cfg: &TrainConfig) -> Result<Var> {
        let (w_i, w_e, w_d) = (cfg.individual_weight(), cfg.correction_weight(), cfg.repr_weight());
        let mut terms: Vec<(Var, f64)> = vec![(self.l_td, 1.0)];
        for i in 0..self.li.len() {
            if w_i > 0.0 {
                terms.push((self.li[i], w_i));
            }
            if w_e > 0.0 {
                terms.push((self.le[i], w_e));
            }
            if let (Some(d), true) = (self.ld[i], w_d > 0.0) {
                terms.push((d, w_d));
            }
        }
        self.tape.lin_comb(&terms)
    }

    pub fn value(&self, v: Var) -> f64 {
        self.tape.value(v).item()
    }

    /// Unclipped gradient of `loss` for every online array.
    pub fn gradient(&self, loss: Var, params: &ParamSet) -> Result<GradBundle> {
        let mut g = self.tape.backward(loss)?;
        Ok(self.bound.collect(params, &mut g))
    }
}

/// Builds every loss term over `batch`. With `frozen` given, its constants
/// are used instead of being derived from `params`, which lets callers
/// perturb parameters while holding rewards and targets fixed.
pub fn build_loss_graph(
    cfg: &TrainConfig,
    arch: &Arch,
    params: &ParamSet,
    batch: &[&Episode],
    frozen: Option<&Frozen>,
    rng: &mut impl Rng,
    block: u64,
) -> Result<(LossGraph, Frozen)> {
    let l = check_batch(arch, batch)?;
    let m = batch.len();
    let n = arch.n_agents;
    let rows = l * m;
    let mut tape = Tape::new();
    let bound = BoundParams::bind(params, &mut tape);

    // Online utility values for every agent.
    let mut q_all = Vec::with_capacity(n);
    let mut q_taken = Vec::with_capacity(n);
    for i in 0..n {
        let p = &bound.utility[params.utility_index(i)];
        let inputs = (0..l).map(|t| rows_of(batch, 1, |ep, _| Some(&ep.obs[t][i]), arch.obs_dim)).collect();
        let qs = arch.net.unroll(&mut tape, p, inputs)?;
        let all = tape.concat_rows(&qs)?;
        let idx: Vec<usize> = (0..rows).map(|r| batch[r % m].actions[r / m][i]).collect();
        q_taken.push(tape.gather(all, &idx)?);
        q_all.push(all);
    }
    let qt = tape.concat_cols(&q_taken)?;
    let states = tape.constant(rows_of(batch, l, |ep, t| Some(&ep.states[t]), arch.state_dim));
    let qtot = arch.mixer.forward(&mut tape, &bound.mixer, qt, states)?;

    let (values, assignments, traces) = match frozen {
        Some(f) => (f.values.clone(), f.assignments.clone(), f.traces.clone()),
        None => {
            let mut values = Vec::with_capacity(m);
            for (k, ep) in batch.iter().enumerate() {
                let mut qvecs = Vec::with_capacity(ep.len);
                let mut maxq = Vec::with_capacity(ep.len);
                let mut qtot_taken = Vec::with_capacity(ep.len);
                for t in 0..ep.len {
                    let r = t * m + k;
                    let mut qv = Vec::with_capacity(n);
                    let mut mq = Vec::with_capacity(n);
                    for (i, &qa) in q_all.iter().enumerate() {
                        let row = tape.value(qa).row_slice(r);
                        let a = masked_argmax(row, &ep.avail[t][i])
                            .ok_or_else(|| MaserError::MalformedEpisode(format!("no allowed action at t={t}")))?;
                        mq.push(row[a]);
                        qv.push(row.to_vec());
                    }
                    qvecs.push(qv);
                    maxq.push(mq);
                    qtot_taken.push(tape.value(qtot).get(r, 0));
                }
                values.push(EpisodeValues {
                    qvecs,
                    maxq,
                    qtot_taken,
                });
            }
            let alpha = cfg.subgoal_mode.alpha(cfg.alpha);
            let assignments: Vec<SubgoalAssignment> = batch
                .iter()
                .zip(&values)
                .map(|(ep, v)| match alpha {
                    Some(a) => select_subgoals(v, ep, a),
                    None => select_subgoals_random(ep, rng),
                })
                .collect();
            let traces = if cfg.dump_subgoals {
                values
                    .iter()
                    .zip(&assignments)
                    .flat_map(|(v, a)| subgoal_traces(block, v, a, alpha))
                    .collect()
            } else {
                Vec::new()
            };
            (values, assignments, traces)
        }
    };

    // Embeddings of step and subgoal observations.
    let use_repr = !cfg.disable_repr;
    let mut phi = Vec::with_capacity(n);
    let mut embed_t: Vec<Vec<Vec<Vec<f64>>>> = batch.iter().map(|ep| vec![Vec::with_capacity(n); ep.len]).collect();
    let mut embed_g = vec![Vec::with_capacity(n); m];
    for i in 0..n {
        if use_repr {
            let x = tape.constant(rows_of(batch, l, |ep, t| Some(&ep.obs[t][i]), arch.obs_dim));
            let mut goal_rows = vec![0.0; rows * arch.obs_dim];
            for r in 0..rows {
                goal_rows[r * arch.obs_dim..(r + 1) * arch.obs_dim].copy_from_slice(&assignments[r % m].goals[i]);
            }
            let g = tape.constant(Tensor::from_vec(rows, arch.obs_dim, goal_rows));
            let pt = arch.repr.forward(&mut tape, &bound.repr[i], x)?;
            let pg = arch.repr.forward(&mut tape, &bound.repr[i], g)?;
            if frozen.is_none() {
                for (k, ep) in batch.iter().enumerate() {
                    for (t, e) in embed_t[k].iter_mut().enumerate().take(ep.len) {
                        e.push(tape.value(pt).row_slice(t * m + k).to_vec());
                    }
                    embed_g[k].push(tape.value(pg).row_slice(k).to_vec());
                }
            }
            phi.push(Some((pt, pg)));
        } else {
            if frozen.is_none() {
                for (k, ep) in batch.iter().enumerate() {
                    for (t, e) in embed_t[k].iter_mut().enumerate().take(ep.len) {
                        e.push(ep.obs[t][i].clone());
                    }
                    embed_g[k].push(assignments[k].goals[i].clone());
                }
            }
            phi.push(None);
        }
    }

    let (rewards, next_max, next_tot) = match frozen {
        Some(f) => (f.rewards.clone(), f.next_max.clone(), f.next_tot.clone()),
        None => {
            let rewards: Vec<RewardBundle> = batch
                .iter()
                .enumerate()
                .map(|(k, ep)| {
                    RewardBundle::compute(&ep.rewards[..ep.len], &embed_t[k], &embed_g[k], &values[k].maxq, cfg.lambda)
                })
                .collect();
            let (next_max, next_tot) = target_values(arch, params, batch, l)?;
            (rewards, next_max, next_tot)
        }
    };

    let mut weight = vec![0.0; rows];
    let mut tot_target = vec![0.0; rows];
    for (k, ep) in batch.iter().enumerate() {
        for t in 0..ep.len {
            let r = t * m + k;
            weight[r] = 1.0 / ep.len as f64;
            tot_target[r] = td_target(rewards[k].proxy[t], next_tot[r], ep.done[t], cfg.gamma);
        }
    }
    let l_td = tape.weighted_sq_err(qtot, tot_target, weight.clone())?;

    let mut li = Vec::with_capacity(n);
    let mut le = Vec::with_capacity(n);
    let mut ld = Vec::with_capacity(n);
    for i in 0..n {
        let mut target = vec![0.0; rows];
        let mut corr = vec![0.0; rows];
        let mut dq = vec![0.0; rows];
        for (k, ep) in batch.iter().enumerate() {
            let t_star = assignments[k].steps[i];
            for t in 0..ep.len {
                let r = t * m + k;
                target[r] = td_target(rewards[k].individual[t][i], next_max[i][r], ep.done[t], cfg.gamma);
                corr[r] = match cfg.correction {
                    CorrectionMode::Normal if t >= t_star => 1.0,
                    CorrectionMode::Over => 1.0,
                    _ => 0.0,
                };
                dq[r] = actionable_distance(&values[k].qvecs[t][i], &values[k].qvecs[t_star][i]);
            }
        }
        li.push(tape.weighted_sq_err(q_taken[i], target, weight.clone())?);
        le.push(tape.kl_uniform(q_all[i], corr)?);
        ld.push(match phi[i] {
            Some((pt, pg)) => Some(tape.dist_err(pt, pg, dq, weight.clone())?),
            None => None,
        });
    }

    let graph = LossGraph {
        tape,
        bound,
        l_td,
        li,
        le,
        ld,
        steps: batch.iter().map(|e| e.len).sum(),
    };
    let frozen = Frozen {
        values,
        assignments,
        rewards,
        next_max,
        next_tot,
        traces,
    };
    Ok((graph, frozen))
}

/// Builds the composite loss over `batch`, differentiates it and clips the
/// gradient. Parameters are not modified.
pub fn compute_update(
    cfg: &TrainConfig,
    arch: &Arch,
    params: &ParamSet,
    batch: &[&Episode],
    rng: &mut impl Rng,
    block: u64,
) -> Result<UpdateOutput> {
    let (mut graph, frozen) = build_loss_graph(cfg, arch, params, batch, None, rng, block)?;
    let total = graph.composite(cfg)?;
    let tape = &graph.tape;
    let sum = |vs: &[Var]| vs.iter().map(|&v| tape.value(v).item()).sum::<f64>();
    let mut report = LossReport {
        total: tape.value(total).item(),
        l_td: tape.value(graph.l_td).item(),
        sum_li: sum(&graph.li),
        sum_le: sum(&graph.le),
        sum_ld: graph.ld.iter().flatten().map(|&v| tape.value(v).item()).sum(),
        mean_rt: frozen.rewards.iter().flat_map(|b| &b.proxy).sum::<f64>() / graph.steps as f64,
        grad_norm: 0.0,
    };
    let mut grads = match graph.gradient(total, params) {
        Ok(g) => g,
        Err(MaserError::NonFinite(msg)) => {
            return Err(MaserError::NonFinite(format!(
                "block {block}: {msg}; L_TD={} sum_Li={} sum_LE={} sum_LD={} mean_Rt={}",
                report.l_td, report.sum_li, report.sum_le, report.sum_ld, report.mean_rt
            )))
        }
        Err(e) => return Err(e),
    };
    report.grad_norm = if cfg.grad_clip > 0.0 {
        grads.clip_global_norm(cfg.grad_clip)
    } else {
        grads.global_norm()
    };
    if !grads.is_finite() {
        return Err(MaserError::NonFinite(format!("block {block}: gradient has non-finite entries")));
    }
    Ok(UpdateOutput {
        grads,
        report,
        assignments: frozen.assignments,
        values: frozen.values,
        rewards: frozen.rewards,
        traces: frozen.traces,
    })
}

/// Outcome of one collected episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub len: usize,
    pub ret: f64,
    pub won: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub block: u64,
    /// False for pure collection blocks (empty buffer).
    pub updated: bool,
    pub losses: LossReport,
    /// `[episode][agent]` 1-based subgoal steps.
    pub subgoal_steps: Vec<Vec<usize>>,
    /// Exploration rate used for the episode collected in this block.
    pub epsilon: f64,
    pub env_steps: u64,
    pub episodes: u64,
    pub synced: bool,
    pub episode: EpisodeSummary,
}

pub struct Learner {
    pub config: TrainConfig,
    pub arch: Arch,
    pub params: ParamSet,
    pub optimizer: RmsProp,
    pub buffer: ReplayBuffer,
    pub env: Box<dyn Environment + Send>,
    pub rng: ChaCha8Rng,
    pub env_steps: u64,
    pub episodes: u64,
    pub blocks: u64,
    last_sync: u64,
    /// Subgoal traces of the most recent update when dumping is enabled.
    pub last_traces: Vec<SubgoalTrace>,
}

impl Learner {
    pub fn new(config: TrainConfig, env: Box<dyn Environment + Send>) -> Result<Self> {
        config.validate()?;
        let arch = Arch::for_env(env.as_ref(), &config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = arch.init_params(&mut rng);
        Ok(Self {
            optimizer: RmsProp::new(config.lr, config.rms_decay, config.rms_eps),
            buffer: ReplayBuffer::new(config.buffer_capacity),
            config,
            arch,
            params,
            env,
            rng,
            env_steps: 0,
            episodes: 0,
            blocks: 0,
            last_sync: 0,
            last_traces: Vec::new(),
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.config.epsilon_schedule().value(self.env_steps)
    }

    /// Rolls out one epsilon-greedy episode into the buffer.
    pub fn collect_episode(&mut self) -> Result<EpisodeSummary> {
        let eps = self.epsilon();
        let env = self.env.as_mut();
        let (n, d, s, u) = (env.n_agents(), env.obs_dim(), env.state_dim(), env.n_actions());
        env.reset(self.rng.gen());
        let mut ctl = RecurrentController::new(&self.arch.net, n);
        let mut builder = EpisodeBuilder::new(self.episodes, env.episode_limit(), n, d, s, u);
        let mut ret = 0.0;
        let mut won = false;
        for _ in 0..env.episode_limit() {
            let obs = env.observations();
            let state = env.state_vector();
            let avail = env.avail_actions();
            let qs = ctl.step(&self.arch.net, |i| self.params.utility_of(i), &obs)?;
            let actions = qs
                .iter()
                .zip(&avail)
                .map(|(q, mask)| act_epsilon_greedy(q, eps, &mut self.rng, mask))
                .collect::<Result<Vec<_>>>()?;
            let res = env.step(&actions)?;
            ret += res.reward;
            builder.push(obs, state, avail, actions, res.reward, res.done);
            if res.done {
                won = res.won;
                break;
            }
        }
        let ep = builder.finish(won)?;
        let summary = EpisodeSummary {
            len: ep.len,
            ret,
            won,
        };
        self.env_steps += ep.len as u64;
        self.episodes += 1;
        self.buffer.push(ep)?;
        Ok(summary)
    }

    /// Snapshot, sample, one gradient step, optional target sync, then one
    /// new episode. With an empty buffer only the collection happens.
    pub fn train_block(&mut self) -> Result<BlockReport> {
        let mut losses = LossReport::default();
        let mut subgoal_steps = Vec::new();
        let mut updated = false;
        let mut synced = false;
        if !self.buffer.is_empty() {
            let batch = self.buffer.sample(self.config.batch_size, &mut self.rng)?;
            let out = compute_update(&self.config, &self.arch, &self.params, &batch, &mut self.rng, self.blocks)?;
            drop(batch);
            self.optimizer.step(&mut self.params, &out.grads)?;
            losses = out.report;
            subgoal_steps = out
                .assignments
                .iter()
                .map(|a| a.steps.iter().map(|t| t + 1).collect())
                .collect();
            self.last_traces = out.traces;
            updated = true;
            if self.episodes - self.last_sync >= self.config.target_interval {
                self.params.sync_targets();
                self.last_sync = self.episodes;
                synced = true;
            }
        }
        let epsilon = self.epsilon();
        let episode = self.collect_episode()?;
        let report = BlockReport {
            block: self.blocks,
            updated,
            losses,
            subgoal_steps,
            epsilon,
            env_steps: self.env_steps,
            episodes: self.episodes,
            synced,
            episode,
        };
        self.blocks += 1;
        Ok(report)
    }

    pub fn evaluate(&self, env: &mut dyn Environment, episodes: usize, seed: u64) -> Result<EvalReport> {
        evaluate_policy(&self.arch, &self.params, env, episodes, seed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub wins: usize,
    pub win_rate: f64,
    pub mean_return: f64,
}

/// Runs `policy` (called with the environment and the step index) for
/// `episodes` episodes; resets draw their seeds from `seed`.
pub fn evaluate_with<E: Environment + ?Sized>(
    env: &mut E,
    episodes: usize,
    seed: u64,
    mut policy: impl FnMut(&E, usize) -> Result<Vec<usize>>,
) -> Result<EvalReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wins = 0;
    let mut total = 0.0;
    for _ in 0..episodes {
        env.reset(rng.gen());
        for t in 0..env.episode_limit() {
            let actions = policy(&*env, t)?;
            let res = env.step(&actions)?;
            total += res.reward;
            if res.done {
                wins += usize::from(res.won);
                break;
            }
        }
    }
    Ok(EvalReport {
        episodes,
        wins,
        win_rate: if episodes == 0 { 0.0 } else { wins as f64 / episodes as f64 },
        mean_return: if episodes == 0 { 0.0 } else { total / episodes as f64 },
    })
}

/// Greedy decentralized execution: each agent acts on its own Q-values.
pub fn evaluate_policy(
    arch: &Arch,
    params: &ParamSet,
    env: &mut dyn Environment,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    let mut ctl = RecurrentController::new(&arch.net, arch.n_agents);
    evaluate_with(env, episodes, seed, |env, t| {
        if t == 0 {
            ctl = RecurrentController::new(&arch.net, arch.n_agents);
        }
        let qs = ctl.step(&arch.net, |i| params.utility_of(i), &env.observations())?;
        qs.iter()
            .zip(env.avail_actions())
            .map(|(q, mask)| q.greedy(&mask).ok_or_else(|| MaserError::Usage("no allowed action".into())))
            .collect()
    })
}
