//! Decentralized multi-agent PPO.
//!
//! Every vehicle in every environment acts through one shared parameter set.
//! Rollouts are collected per vehicle slot, advantages come from GAE, and the
//! clipped-surrogate loss is minimized with Adam over shuffled minibatches.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_traits::Num;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::comms::Observation;
use crate::dynamics::ControlCommand;
use crate::env::{EnvConfig, EnvError, EnvState, Environment};
use crate::policy::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
use crate::policy::{gradients, init_policy, LossDefinition, LossStats, PolicyError, PolicyParameters, PolicyShape, Sample, ACTION_DIM};
use crate::real::Real;
use crate::rewards::CurriculumSchedule;
use crate::track::TrackModel;
use crate::VehicleId;

pub const STATS_INTERVAL: u64 = 20_000;
/// Completed episodes kept in [`TrainerState::recent`].
pub const RECENT_EPISODES: usize = 20;
pub const STATS_HEADER: &str = "global_step,mean_cum_reward,mean_episode_len,crash_rate,policy_loss,value_loss,entropy";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid PPO config: {0}")]
    Config(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("environment {0} is in a terminal state and was not reset")]
    Terminal(usize),
    #[error("no trajectories to learn from")]
    EmptyBatch,
    #[error("loss became non-finite; update discarded")]
    NonFiniteLoss,
    #[error("environment {env}: {source}")]
    Env {
        env: usize,
        #[source]
        source: EnvError,
    },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("checkpoint {path}: {source}")]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("trainer state {path}: {message}")]
    State { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", default, deny_unknown_fields)]
pub struct PpoConfig<T: Real> {
    pub gamma: T,
    pub lambda: T,
    pub clip_epsilon: T,
    pub learning_rate: T,
    /// Decay the learning rate linearly to zero over `total_steps`.
    pub anneal_lr: bool,
    pub epochs: usize,
    pub minibatch_size: usize,
    /// Steps per environment per rollout.
    pub horizon: usize,
    pub entropy_coef: T,
    pub value_coef: T,
    pub total_steps: u64,
    pub num_envs: usize,
    pub optimizer: OptimizerKind,
    pub adam_beta1: T,
    pub adam_beta2: T,
    pub adam_epsilon: T,
    /// Global gradient-norm clip per minibatch; `None` disables clipping.
    pub max_grad_norm: Option<T>,
    /// Write a checkpoint every this many updates (0 = only at the end).
    pub checkpoint_every: usize,
    /// Obstacles of environments after the first are moved along the road by up to this much.
    pub obstacle_shift: T,
}

impl<T: Real> Default for PpoConfig<T> {
    fn default() -> Self {
        Self {
            gamma: T::lit(0.99),
            lambda: T::lit(0.95),
            clip_epsilon: T::lit(0.2),
            learning_rate: T::lit(3e-4),
            anneal_lr: false,
            epochs: 3,
            minibatch_size: 1024,
            horizon: 2048,
            entropy_coef: T::lit(5e-3),
            value_coef: T::lit(0.5),
            total_steps: 25_000_000,
            num_envs: 2,
            optimizer: OptimizerKind::Adam,
            adam_beta1: T::lit(0.9),
            adam_beta2: T::lit(0.999),
            adam_epsilon: T::lit(1e-8),
            max_grad_norm: Some(T::lit(0.5)),
            checkpoint_every: 10,
            obstacle_shift: T::lit(20.0),
        }
    }
}

impl<T: Real> PpoConfig<T> {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        let unit = |v: T| v > T::zero() && v <= T::one();
        if !unit(self.gamma) || !unit(self.lambda) {
            return bad("gamma and lambda must lie in (0, 1]");
        }
        if !(self.clip_epsilon > T::zero()) {
            return bad("clip_epsilon must be positive");
        }
        if !(self.learning_rate > T::zero()) {
            return bad("learning_rate must be positive");
        }
        if self.total_steps == 0 {
            return bad("total_steps must be positive");
        }
        if self.epochs == 0 || self.minibatch_size == 0 || self.horizon == 0 || self.num_envs == 0 {
            return bad("epochs, minibatch_size, horizon and num_envs must be positive");
        }
        if self.max_grad_norm.is_some_and(|g| !(g > T::zero())) {
            return bad("max_grad_norm must be positive");
        }
        Ok(())
    }

    pub fn loss(&self) -> LossDefinition<T> {
        LossDefinition::ppo(self.clip_epsilon, self.value_coef, self.entropy_coef)
    }

    /// Global steps gained by one rollout over every environment.
    pub fn steps_per_update(&self) -> u64 {
        (self.num_envs * self.horizon) as u64
    }

    pub fn updates_needed(&self) -> u64 {
        self.total_steps.div_ceil(self.steps_per_update())
    }

    /// Learning rate for the update that follows `updates_done` earlier ones.
    pub fn learning_rate_at(&self, updates_done: u64) -> T {
        if !self.anneal_lr {
            return self.learning_rate;
        }
        let n = self.updates_needed();
        let left = n.saturating_sub(updates_done) as f64 / n as f64;
        self.learning_rate * T::lit(left)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    /// Plain gradient descent.
    Sgd,
}

/// Rollout record of one vehicle slot in one environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Trajectory<T: Real> {
    pub env_index: usize,
    pub vehicle: VehicleId,
    pub observations: Vec<Observation<T>>,
    /// Pre-clamp actions.
    pub actions: Vec<[T; ACTION_DIM]>,
    pub log_probs: Vec<T>,
    pub rewards: Vec<T>,
    pub values: Vec<T>,
    pub dones: Vec<bool>,
    /// Indices where a new episode begins.
    pub episode_starts: Vec<usize>,
    /// Value of the state following the last transition (0 after a done).
    pub bootstrap_value: T,
}

impl<T: Real> Trajectory<T> {
    pub fn new(env_index: usize, vehicle: VehicleId) -> Self {
        Self {
            env_index,
            vehicle,
            observations: Vec::new(),
            actions: Vec::new(),
            log_probs: Vec::new(),
            rewards: Vec::new(),
            values: Vec::new(),
            dones: Vec::new(),
            episode_starts: Vec::new(),
            bootstrap_value: T::zero(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn check_lengths(&self) -> Result<(), TrainError> {
        let n = self.len();
        let lens = [
            self.observations.len(),
            self.actions.len(),
            self.log_probs.len(),
            self.values.len(),
            self.dones.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(TrainError::LengthMismatch(format!(
                "trajectory {}/{} has field lengths {lens:?} and {n} rewards",
                self.env_index, self.vehicle
            )));
        }
        Ok(())
    }
}

/// SHA-256 over every number and flag in the trajectories, in order.
pub fn trajectory_checksum<T: Real>(trajectories: &[Trajectory<T>]) -> String {
    let mut h = Sha256::new();
    for t in trajectories {
        h.update((t.env_index as u64).to_le_bytes());
        h.update(t.vehicle.0.to_le_bytes());
        for (k, o) in t.observations.iter().enumerate() {
            o.as_slice().iter().for_each(|v| h.update(v.as_f64().to_le_bytes()));
            t.actions[k].iter().for_each(|v| h.update(v.as_f64().to_le_bytes()));
            for v in [t.log_probs[k], t.rewards[k], t.values[k]] {
                h.update(v.as_f64().to_le_bytes());
            }
            h.update([t.dones[k] as u8]);
        }
        h.update(t.bootstrap_value.as_f64().to_le_bytes());
    }
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Generalized advantage estimation over one sequence.
///
/// `dones[t]` cuts bootstrapping from `t + 1`; `last_value` is the value after the final
/// step. Returns `(advantages, returns)` with `returns = advantages + values`.
pub fn gae<S: Clone + Num>(
    rewards: &[S],
    values: &[S],
    dones: &[bool],
    last_value: S,
    gamma: S,
    lambda: S,
) -> Result<(Vec<S>, Vec<S>), TrainError> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(TrainError::LengthMismatch(format!(
            "{n} rewards, {} values, {} dones",
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![S::zero(); n];
    let mut next_adv = S::zero();
    let mut next_value = last_value;
    for t in (0..n).rev() {
        let (bootstrap, carry) = if dones[t] {
            (S::zero(), S::zero())
        } else {
            (gamma.clone() * next_value.clone(), next_adv.clone())
        };
        let delta = rewards[t].clone() + bootstrap - values[t].clone();
        next_adv = delta + gamma.clone() * lambda.clone() * carry;
        adv[t] = next_adv.clone();
        next_value = values[t].clone();
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a.clone() + v.clone()).collect();
    Ok((adv, returns))
}

pub fn compute_gae<T: Real>(trajectory: &Trajectory<T>, gamma: T, lambda: T) -> Result<(Vec<T>, Vec<T>), TrainError> {
    trajectory.check_lengths()?;
    gae(
        &trajectory.rewards,
        &trajectory.values,
        &trajectory.dones,
        trajectory.bootstrap_value,
        gamma,
        lambda,
    )
}

/// Shifts and scales in place to sample mean 0 and population std 1.
pub fn normalize_advantages<T: Real>(adv: &mut [T]) {
    if adv.is_empty() {
        return;
    }
    let n = T::from_usize_lossy(adv.len());
    let mean = adv.iter().copied().sum::<T>() / n;
    let var = adv.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / n;
    let std = var.sqrt();
    let scale = if std > T::lit(1e-12) { T::one() / std } else { T::one() };
    adv.iter_mut().for_each(|a| *a = (*a - mean) * scale);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Adam<T: Real> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T], cfg: &PpoConfig<T>) {
        self.t += 1;
        if cfg.optimizer == OptimizerKind::Sgd {
            for (p, &g) in params.iter_mut().zip(grad) {
                *p = *p - cfg.learning_rate * g;
            }
            return;
        }
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let t = self.t as i32;
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        let step = cfg.learning_rate * c2.sqrt() / c1;
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            *p = *p - step * *m / (v.sqrt() + cfg.adam_epsilon);
        }
    }
}

/// Mean loss components over every minibatch of one update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct UpdateStats<T: Real> {
    pub policy_loss: T,
    pub value_loss: T,
    pub entropy: T,
    pub clip_fraction: T,
    pub minibatches: usize,
}

/// Clipped-surrogate PPO update over pooled trajectories. On a non-finite loss the
/// parameters and optimizer state are left exactly as they were.
pub fn ppo_update<T: Real>(
    params: &mut PolicyParameters<T>,
    adam: &mut Adam<T>,
    trajectories: &[Trajectory<T>],
    config: &PpoConfig<T>,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats<T>, TrainError> {
    let mut samples = Vec::new();
    for t in trajectories {
        let (adv, ret) = compute_gae(t, config.gamma, config.lambda)?;
        for k in 0..t.len() {
            samples.push(Sample {
                obs: t.observations[k],
                action: t.actions[k],
                old_log_prob: t.log_probs[k],
                advantage: adv[k],
                ret: ret[k],
            });
        }
    }
    if samples.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut adv: Vec<T> = samples.iter().map(|s| s.advantage).collect();
    normalize_advantages(&mut adv);
    samples.iter_mut().zip(&adv).for_each(|(s, &a)| s.advantage = a);

    let saved = (params.data.clone(), adam.clone());
    let restore = |params: &mut PolicyParameters<T>, adam: &mut Adam<T>| {
        params.data.clone_from(&saved.0);
        *adam = saved.1.clone();
    };
    let loss = config.loss();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut acc = LossStats::<T>::default();
    let mut count = 0usize;
    let mut batch = Vec::with_capacity(config.minibatch_size);
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.minibatch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| samples[i]));
            let (mut grad, stats) = match gradients(params, &batch, &loss) {
                Ok(v) => v,
                Err(PolicyError::NonFiniteLoss) => {
                    restore(params, adam);
                    return Err(TrainError::NonFiniteLoss);
                }
                Err(e) => {
                    restore(params, adam);
                    return Err(e.into());
                }
            };
            if let Some(max) = config.max_grad_norm {
                let norm = grad.iter().map(|g| *g * *g).sum::<T>().sqrt();
                if norm > max {
                    let s = max / norm;
                    grad.iter_mut().for_each(|g| *g = *g * s);
                }
            }
            adam.step(&mut params.data, &grad, config);
            if !params.is_finite() {
                restore(params, adam);
                return Err(TrainError::NonFiniteLoss);
            }
            acc.surrogate = acc.surrogate + stats.surrogate;
            acc.value_loss = acc.value_loss + stats.value_loss;
            acc.entropy = acc.entropy + stats.entropy;
            acc.clip_fraction = acc.clip_fraction + stats.clip_fraction;
            count += 1;
        }
    }
    let n = T::from_usize_lossy(count);
    Ok(UpdateStats {
        policy_loss: -acc.surrogate / n,
        value_loss: acc.value_loss / n,
        entropy: acc.entropy / n,
        clip_fraction: acc.clip_fraction / n,
        minibatches: count,
    })
}

/// One finished vehicle episode, stamped with the global step at which it ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub global_step: u64,
    pub env_index: usize,
    pub vehicle: VehicleId,
    pub cum_reward: f64,
    pub length: u64,
    pub crashed: bool,
    pub finished: bool,
}

/// An environment plus its private action-sampling stream.
#[derive(Debug, Clone)]
pub struct Worker<T: Real> {
    pub index: usize,
    pub env: Environment<T>,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct WorkerState<T: Real> {
    pub env: EnvState<T>,
    pub rng: ChaCha8Rng,
}

impl<T: Real> Worker<T> {
    pub fn new(index: usize, env: Environment<T>, seed: u64) -> Self {
        Self {
            index,
            env,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn snapshot(&self) -> WorkerState<T> {
        WorkerState {
            env: self.env.snapshot(),
            rng: self.rng.clone(),
        }
    }

    pub fn restore(&mut self, state: WorkerState<T>) {
        self.env.restore(state.env);
        self.rng = state.rng;
    }

    fn rollout(
        &mut self,
        params: &PolicyParameters<T>,
        horizon: usize,
        global_step: u64,
        num_envs: u64,
        schedule: &CurriculumSchedule,
    ) -> Result<(Vec<Trajectory<T>>, Vec<EpisodeRecord>), TrainError> {
        let env_err = |source| TrainError::Env { env: self.index, source };
        if self.env.is_terminal() {
            return Err(TrainError::Terminal(self.index));
        }
        let n = self.env.config().platoon_size;
        let mut trajs: Vec<_> = (0..n as u32).map(|v| Trajectory::new(self.index, VehicleId(v))).collect();
        let mut fresh = vec![true; n];
        let mut episodes = Vec::new();
        let mut actions = vec![ControlCommand::default(); n];
        let mut taken = Vec::with_capacity(n);
        for j in 0..horizon as u64 {
            let phase = schedule.phase_for_step(global_step + j * num_envs);
            taken.clear();
            actions.iter_mut().for_each(|a| *a = ControlCommand::default());
            for (&id, obs) in self.env.observations() {
                let s = params.sample_action(obs, &mut self.rng)?;
                actions[id.0 as usize] = ControlCommand::new(s.action[0], s.action[1]);
                taken.push((id, *obs, s));
            }
            let outcome = self.env.step(&actions, phase).map_err(env_err)?;
            for (step, (id, obs, s)) in outcome.agents.iter().zip(&taken) {
                debug_assert_eq!(step.id, *id);
                let k = id.0 as usize;
                let t = &mut trajs[k];
                if fresh[k] {
                    t.episode_starts.push(t.len());
                    fresh[k] = false;
                }
                t.observations.push(*obs);
                t.actions.push(s.raw);
                t.log_probs.push(s.log_prob);
                t.rewards.push(step.reward);
                t.values.push(s.value);
                t.dones.push(step.done);
            }
            for &(pred, value) in &outcome.late_credit {
                let t = &mut trajs[pred.0 as usize];
                if let Some(r) = t.rewards.last_mut() {
                    *r = *r + value;
                }
            }
            if outcome.done {
                let gs = global_step + (j + 1) * num_envs;
                episodes.extend(self.env.agents().iter().map(|a| EpisodeRecord {
                    global_step: gs,
                    env_index: self.index,
                    vehicle: a.id,
                    cum_reward: a.cum_reward.as_f64(),
                    length: a.steps,
                    crashed: a.status == crate::env::VehicleStatus::Crashed,
                    finished: a.status == crate::env::VehicleStatus::Finished,
                }));
                self.env.reset().map_err(env_err)?;
                fresh.iter_mut().for_each(|f| *f = true);
            }
        }
        for t in &mut trajs {
            t.bootstrap_value = match (t.dones.last(), self.env.observation(t.vehicle)) {
                (Some(false), Some(obs)) => params.forward(obs.as_slice())?.value,
                _ => T::zero(),
            };
        }
        Ok((trajs, episodes))
    }
}

/// Steps every environment `horizon` times with the same parameter snapshot.
/// Returns per-slot trajectories (environment-major), completed episodes and the new global step.
pub fn collect_rollouts<T: Real>(
    workers: &mut [Worker<T>],
    params: &PolicyParameters<T>,
    horizon: usize,
    global_step: u64,
    schedule: &CurriculumSchedule,
) -> Result<(Vec<Trajectory<T>>, Vec<EpisodeRecord>, u64), TrainError> {
    if !params.is_finite() {
        return Err(TrainError::Policy(PolicyError::NonFiniteLoss));
    }
    let num_envs = workers.len() as u64;
    let results: Vec<_> = workers
        .par_iter_mut()
        .map(|w| w.rollout(params, horizon, global_step, num_envs, schedule))
        .collect();
    let mut trajs = Vec::new();
    let mut episodes = Vec::new();
    for r in results {
        let (t, e) = r?;
        trajs.extend(t);
        episodes.extend(e);
    }
    episodes.sort_by_key(|e| (e.global_step, e.env_index, e.vehicle));
    Ok((trajs, episodes, global_step + num_envs * horizon as u64))
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TAG_POLICY: u64 = 1;
const TAG_ENV: u64 = 2;
const TAG_ACTIONS: u64 = 3;
const TAG_OBSTACLES: u64 = 4;
const TAG_SHUFFLE: u64 = 5;

/// Environments for training: the first keeps the track's obstacles, the others get
/// seeded obstacle layouts.
pub fn build_workers<T: Real>(
    track: &TrackModel<T>,
    env: &EnvConfig<T>,
    ppo: &PpoConfig<T>,
    seed: u64,
) -> Result<Vec<Worker<T>>, TrainError> {
    (0..ppo.num_envs)
        .map(|e| {
            let t = if e == 0 || track.obstacles.is_empty() {
                track.clone()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, TAG_OBSTACLES, e as u64));
                crate::env::shift_obstacles(track, ppo.obstacle_shift, &mut rng)
            };
            let environment = Environment::new(Arc::new(t), env.clone(), derive_seed(seed, TAG_ENV, e as u64))
                .map_err(|source| TrainError::Env { env: e, source })?;
            Ok(Worker::new(e, environment, derive_seed(seed, TAG_ACTIONS, e as u64)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub global_step: u64,
    pub mean_cum_reward: f64,
    pub mean_episode_len: f64,
    pub crash_rate: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Share of the window's episodes that reached the finish line (not written to CSV).
    #[serde(default)]
    pub finish_rate: f64,
    #[serde(default)]
    pub episodes: usize,
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v}")
    }
}

impl StatsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.global_step,
            fmt_num(self.mean_cum_reward),
            fmt_num(self.mean_episode_len),
            fmt_num(self.crash_rate),
            fmt_num(self.policy_loss),
            fmt_num(self.value_loss),
            fmt_num(self.entropy)
        )
    }

    fn from_window(global_step: u64, episodes: &[EpisodeRecord], last: Option<&UpdateStats<f64>>) -> Self {
        let n = episodes.len() as f64;
        let mean = |f: &dyn Fn(&EpisodeRecord) -> f64| {
            if episodes.is_empty() {
                f64::NAN
            } else {
                episodes.iter().map(f).sum::<f64>() / n
            }
        };
        Self {
            global_step,
            mean_cum_reward: mean(&|e| e.cum_reward),
            mean_episode_len: mean(&|e| e.length as f64),
            crash_rate: mean(&|e| e.crashed as u8 as f64),
            policy_loss: last.map_or(f64::NAN, |s| s.policy_loss),
            value_loss: last.map_or(f64::NAN, |s| s.value_loss),
            entropy: last.map_or(f64::NAN, |s| s.entropy),
            finish_rate: mean(&|e| e.finished as u8 as f64),
            episodes: episodes.len(),
        }
    }
}

/// Parses a stats CSV written by [`train`].
pub fn parse_stats_csv(text: &str) -> Result<Vec<StatsRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == STATS_HEADER => {}
        _ => return Err("missing stats header".into()),
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 7 {
                return Err(format!("line {}: expected 7 fields", i + 2));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| format!("line {}: {e}", i + 2));
            Ok(StatsRow {
                global_step: f[0].parse().map_err(|e| format!("line {}: {e}", i + 2))?,
                mean_cum_reward: num(f[1])?,
                mean_episode_len: num(f[2])?,
                crash_rate: num(f[3])?,
                policy_loss: num(f[4])?,
                value_loss: num(f[5])?,
                entropy: num(f[6])?,
                finish_rate: f64::NAN,
                episodes: 0,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub seed: u64,
    pub ppo: PpoConfig<f64>,
    pub env: EnvConfig<f64>,
    pub track: TrackModel<f64>,
    pub policy_shape: PolicyShape,
    pub config_hash: u64,
    pub out_dir: PathBuf,
    /// Continue from this checkpoint; its sibling `.state.json` must exist.
    pub resume_from: Option<PathBuf>,
    /// Stop after this many updates of this invocation (for interrupted-run tests).
    pub stop_after_updates: Option<u64>,
}

/// Everything needed to continue a run exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainerState {
    pub updates: u64,
    pub global_step: u64,
    pub adam: Adam<f64>,
    pub workers: Vec<WorkerState<f64>>,
    pub shuffle_rng: ChaCha8Rng,
    pub pending: Vec<EpisodeRecord>,
    pub rows: Vec<StatsRow>,
    pub next_row: u64,
    pub last_update: Option<UpdateStats<f64>>,
    /// The last [`RECENT_EPISODES`] completed episodes, oldest first.
    pub recent: VecDeque<EpisodeRecord>,
    pub config_hash: u64,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub updates: u64,
    pub global_step: u64,
    pub rows: Vec<StatsRow>,
    pub recent_episodes: Vec<EpisodeRecord>,
    pub final_checkpoint: PathBuf,
    pub stats_path: PathBuf,
    pub params: PolicyParameters<f64>,
}

pub fn state_path_for(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("state.json")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_stats(path: &Path, rows: &[StatsRow]) -> Result<(), TrainError> {
    let mut text = String::from(STATS_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&r.csv_line());
        text.push('\n');
    }
    fs::write(path, text).map_err(io_err(path))
}

fn save_all(
    path: &Path,
    params: &PolicyParameters<f64>,
    state: &TrainerState,
) -> Result<(), TrainError> {
    let ckpt = Checkpoint {
        params: params.clone(),
        train_step: state.global_step,
        config_hash: state.config_hash,
    };
    save_checkpoint(path, &ckpt).map_err(|source| TrainError::Checkpoint {
        path: path.to_path_buf(),
        source,
    })?;
    let sp = state_path_for(path);
    let json = serde_json::to_string(state).map_err(|e| TrainError::State {
        path: sp.clone(),
        message: e.to_string(),
    })?;
    fs::write(&sp, json).map_err(io_err(&sp))
}

/// Runs collect/update cycles until `total_steps`, writing `stats.csv`, periodic
/// checkpoints under `checkpoints/` and `final.ckpt` in the output directory.
/// `on_row` sees every stats row as it is produced.
pub fn train(config: &TrainConfig, mut on_row: impl FnMut(&StatsRow)) -> Result<TrainSummary, TrainError> {
    config.ppo.validate()?;
    config.env.validate().map_err(|source| TrainError::Env { env: 0, source })?;
    let out = &config.out_dir;
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(io_err(&ckpt_dir))?;
    let stats_path = out.join("stats.csv");

    let mut workers = build_workers(&config.track, &config.env, &config.ppo, config.seed)?;
    let (mut params, mut state) = match &config.resume_from {
        None => {
            let params = init_policy::<f64>(&config.policy_shape, derive_seed(config.seed, TAG_POLICY, 0));
            let state = TrainerState {
                updates: 0,
                global_step: 0,
                adam: Adam::new(params.layout.len),
                workers: workers.iter().map(Worker::snapshot).collect(),
                shuffle_rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, TAG_SHUFFLE, 0)),
                pending: Vec::new(),
                rows: Vec::new(),
                next_row: STATS_INTERVAL,
                last_update: None,
                recent: VecDeque::new(),
                config_hash: config.config_hash,
            };
            (params, state)
        }
        Some(path) => {
            let ckpt: Checkpoint<f64> = load_checkpoint(path).map_err(|source| TrainError::Checkpoint {
                path: path.clone(),
                source,
            })?;
            let sp = state_path_for(path);
            let text = fs::read_to_string(&sp).map_err(io_err(&sp))?;
            let state: TrainerState = serde_json::from_str(&text).map_err(|e| TrainError::State {
                path: sp.clone(),
                message: e.to_string(),
            })?;
            if state.workers.len() != workers.len() || state.global_step != ckpt.train_step {
                return Err(TrainError::State {
                    path: sp,
                    message: "state does not match checkpoint or environment count".into(),
                });
            }
            for (w, s) in workers.iter_mut().zip(&state.workers) {
                w.restore(s.clone());
            }
            (ckpt.params, state)
        }
    };
    if params.shape != config.policy_shape {
        return Err(TrainError::Config("checkpoint network shape differs from the configured one".into()));
    }
    write_stats(&stats_path, &state.rows)?;
    let mut stats_file = fs::OpenOptions::new()
        .append(true)
        .open(&stats_path)
        .map_err(io_err(&stats_path))?;

    let target = config.ppo.updates_needed();
    let schedule = config.env.rewards.curriculum;
    let mut this_run = 0u64;
    while state.updates < target {
        if config.stop_after_updates.is_some_and(|n| this_run >= n) {
            break;
        }
        let (trajs, episodes, gs) =
            collect_rollouts(&mut workers, &params, config.ppo.horizon, state.global_step, &schedule)?;
        let ppo = PpoConfig {
            learning_rate: config.ppo.learning_rate_at(state.updates),
            ..config.ppo.clone()
        };
        let upd = ppo_update(&mut params, &mut state.adam, &trajs, &ppo, &mut state.shuffle_rng)?;
        state.global_step = gs;
        state.updates += 1;
        this_run += 1;
        state.last_update = Some(upd);
        let mut finished_in_order = episodes.clone();
        finished_in_order.sort_by_key(|e| (e.global_step, e.env_index, e.vehicle));
        state.recent.extend(finished_in_order);
        let excess = state.recent.len().saturating_sub(RECENT_EPISODES);
        state.recent.drain(..excess);
        state.pending.extend(episodes);
        while state.next_row <= state.global_step {
            let lo = state.next_row.saturating_sub(STATS_INTERVAL);
            let window: Vec<_> = state
                .pending
                .iter()
                .filter(|e| e.global_step > lo && e.global_step <= state.next_row)
                .copied()
                .collect();
            state.pending.retain(|e| e.global_step > state.next_row);
            let row = StatsRow::from_window(state.next_row, &window, state.last_update.as_ref());
            writeln!(stats_file, "{}", row.csv_line()).map_err(io_err(&stats_path))?;
            on_row(&row);
            state.rows.push(row);
            state.next_row += STATS_INTERVAL;
        }
        state.workers = workers.iter().map(Worker::snapshot).collect();
        let every = config.ppo.checkpoint_every as u64;
        if every > 0 && state.updates % every == 0 {
            let p = ckpt_dir.join(format!("update_{:06}.ckpt", state.updates));
            save_all(&p, &params, &state)?;
        }
    }
    state.workers = workers.iter().map(Worker::snapshot).collect();
    let final_checkpoint = out.join("final.ckpt");
    save_all(&final_checkpoint, &params, &state)?;
    Ok(TrainSummary {
        updates: state.updates,
        global_step: state.global_step,
        rows: state.rows,
        recent_episodes: state.recent.into(),
        final_checkpoint,
        stats_path,
        params,
    })
}

/// Episodes grouped by vehicle slot, for reporting.
pub fn episodes_by_vehicle(episodes: &[EpisodeRecord]) -> BTreeMap<VehicleId, Vec<EpisodeRecord>> {
    let mut m: BTreeMap<VehicleId, Vec<EpisodeRecord>> = BTreeMap::new();
    for e in episodes {
        m.entry(e.vehicle).or_default().push(*e);
    }
    m
}
