//! Multi-vehicle platoon environment.
//!
//! One environment holds a track and a platoon. Each step integrates every active
//! vehicle, resolves collisions, checkpoint and finish crossings, assigns rewards
//! (including caring credit to predecessors), updates the V2V chain and assembles
//! the next observations. A crashed vehicle stays where it stopped as a static
//! obstacle; a finished vehicle leaves the world.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comms::{
    assemble_observation, build_topology, exchange, reassign_leader, CommsError, Observation, PlatoonTopology,
};
use crate::dynamics::{default_params, step_vehicle, ControlCommand, VehicleParams, VehicleState, DEFAULT_DT};
use crate::geom::{Obb, Vec2};
use crate::real::Real;
use crate::rewards::{gap, step_reward, CaringTracker, CurriculumPhase, EventKind, RewardConfig, RewardError, RewardEvent, Role};
use crate::sensing::{sense, Body, RaycastConfig, SensingError, SensorFrame};
use crate::track::{check_collision, checkpoint_crossed, finish_crossed, Footprint, Lane, TrackModel};
use crate::VehicleId;

pub const DEFAULT_MAX_STEPS: u64 = 10_000;
const PROJECTION_WINDOW: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("episode is over; reset the environment first")]
    Terminal,
    #[error("expected {expected} actions, got {found}")]
    ActionCount { expected: usize, found: usize },
    #[error("platoon of {size} needs {size} start poses, track has {available}")]
    StartPoses { size: usize, available: usize },
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("vehicle {0} is not active")]
    Inactive(VehicleId),
    #[error(transparent)]
    Sensing(#[from] SensingError),
    #[error(transparent)]
    Comms(#[from] CommsError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EnvConfig<T: Real> {
    pub platoon_size: usize,
    pub dt: T,
    pub vehicle: VehicleParams<T>,
    pub footprint: Footprint<T>,
    pub rays: RaycastConfig<T>,
    pub rewards: RewardConfig<T>,
    /// Off: every vehicle observes as a leader (V2V slots zero); gap penalties still apply.
    pub v2v: bool,
    /// Credit predecessors when their follower finishes (and crashes, with `rewards.crash_caring`).
    pub caring: bool,
    /// Step cap after which the episode is truncated.
    pub max_steps: u64,
    /// Start speeds are drawn from `[0, start_speed_fraction * v_max]`.
    pub start_speed_fraction: T,
    /// Start positions are shifted along the heading by up to this many meters.
    pub start_jitter: T,
}

impl<T: Real> Default for EnvConfig<T> {
    fn default() -> Self {
        Self {
            platoon_size: 3,
            dt: T::lit(DEFAULT_DT),
            vehicle: default_params(),
            footprint: Footprint::default(),
            rays: RaycastConfig::default(),
            rewards: RewardConfig::default(),
            v2v: true,
            caring: true,
            max_steps: DEFAULT_MAX_STEPS,
            start_speed_fraction: T::lit(0.3),
            start_jitter: T::one(),
        }
    }
}

impl<T: Real> EnvConfig<T> {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::Config(m.to_string()));
        if self.platoon_size == 0 {
            return bad("platoon_size must be at least 1");
        }
        if !(self.dt > T::zero()) {
            return bad("dt must be positive");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive");
        }
        if !(self.start_speed_fraction >= T::zero() && self.start_speed_fraction <= T::one()) {
            return bad("start_speed_fraction must lie in [0, 1]");
        }
        if !(self.start_jitter >= T::zero()) {
            return bad("start_jitter must be non-negative");
        }
        self.rewards.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VehicleStatus {
    Active,
    Finished,
    Crashed,
    /// Taken out of the world by a perturbation.
    Removed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LedgerEntry<T: Real> {
    pub step: u64,
    pub kind: EventKind,
    pub value: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Agent<T: Real> {
    pub id: VehicleId,
    pub state: VehicleState<T>,
    pub status: VehicleStatus,
    /// Arc length along the centerline.
    pub arc: T,
    pub cum_reward: T,
    pub steps: u64,
    /// Every event reward this vehicle received during the episode.
    pub ledger: Vec<LedgerEntry<T>>,
    next_checkpoint: [usize; 2],
    segment_hint: usize,
}

impl<T: Real> Agent<T> {
    pub fn is_active(&self) -> bool {
        self.status == VehicleStatus::Active
    }

    /// Event rewards of one kind, in order.
    pub fn ledger_values(&self, kind: EventKind) -> Vec<T> {
        self.ledger.iter().filter(|e| e.kind == kind).map(|e| e.value).collect()
    }
}

/// Everything that changes while an environment runs; restoring it resumes bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EnvState<T: Real> {
    pub agents: Vec<Agent<T>>,
    pub topology: PlatoonTopology,
    /// Chain used for caring credit: keeps finished and crashed vehicles.
    pub caring_chain: PlatoonTopology,
    caring: CaringTracker,
    pub step: u64,
    pub episode: u64,
    pub terminal: bool,
    pub messages_last_step: usize,
    observations: BTreeMap<VehicleId, Observation<T>>,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentStep<T: Real> {
    pub id: VehicleId,
    pub reward: T,
    pub done: bool,
    pub role: Role,
    /// Distance to the predecessor after the step, for followers.
    pub gap: Option<T>,
    pub events: Vec<EventKind>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<T: Real> {
    /// Steps taken in this episode, including this one.
    pub step: u64,
    /// One entry per vehicle that was active when the step began, in slot order.
    pub agents: Vec<AgentStep<T>>,
    /// Caring credit for vehicles that were already out of the episode.
    pub late_credit: Vec<(VehicleId, T)>,
    pub done: bool,
    pub truncated: bool,
}

#[derive(Debug, Clone)]
pub struct Environment<T: Real> {
    track: Arc<TrackModel<T>>,
    config: EnvConfig<T>,
    state: EnvState<T>,
}

fn lane_slot(lane: Lane) -> usize {
    match lane {
        Lane::Right => 0,
        Lane::Left => 1,
    }
}

impl<T: Real> Environment<T> {
    pub fn new(track: Arc<TrackModel<T>>, config: EnvConfig<T>, seed: u64) -> Result<Self, EnvError> {
        config.validate()?;
        if track.start_poses.len() < config.platoon_size {
            return Err(EnvError::StartPoses {
                size: config.platoon_size,
                available: track.start_poses.len(),
            });
        }
        let ids: Vec<_> = (0..config.platoon_size as u32).map(VehicleId).collect();
        let topology = build_topology(&ids)?;
        let mut env = Self {
            track,
            config,
            state: EnvState {
                agents: Vec::new(),
                caring_chain: topology.clone(),
                topology,
                caring: CaringTracker::new(),
                step: 0,
                episode: 0,
                terminal: true,
                messages_last_step: 0,
                observations: BTreeMap::new(),
                rng: ChaCha8Rng::seed_from_u64(seed),
            },
        };
        env.reset()?;
        Ok(env)
    }

    pub fn track(&self) -> &TrackModel<T> {
        &self.track
    }

    pub fn config(&self) -> &EnvConfig<T> {
        &self.config
    }

    pub fn state(&self) -> &EnvState<T> {
        &self.state
    }

    pub fn snapshot(&self) -> EnvState<T> {
        self.state.clone()
    }

    pub fn restore(&mut self, state: EnvState<T>) {
        self.state = state;
    }

    pub fn agents(&self) -> &[Agent<T>] {
        &self.state.agents
    }

    pub fn agent(&self, id: VehicleId) -> Option<&Agent<T>> {
        self.state.agents.get(id.0 as usize)
    }

    pub fn topology(&self) -> &PlatoonTopology {
        &self.state.topology
    }

    pub fn is_terminal(&self) -> bool {
        self.state.terminal
    }

    pub fn step_count(&self) -> u64 {
        self.state.step
    }

    pub fn messages_last_step(&self) -> usize {
        self.state.messages_last_step
    }

    /// Current observation of every active vehicle.
    pub fn observations(&self) -> &BTreeMap<VehicleId, Observation<T>> {
        &self.state.observations
    }

    pub fn observation(&self, id: VehicleId) -> Option<&Observation<T>> {
        self.state.observations.get(&id)
    }

    pub fn active_ids(&self) -> Vec<VehicleId> {
        self.state.agents.iter().filter(|a| a.is_active()).map(|a| a.id).collect()
    }

    /// Starts a new episode with randomized start speeds and positions.
    pub fn reset(&mut self) -> Result<(), EnvError> {
        let n = self.config.platoon_size;
        let v_cap = self.config.start_speed_fraction * self.config.vehicle.v_max;
        let jitter = self.config.start_jitter;
        let mut agents = Vec::with_capacity(n);
        for k in 0..n {
            let pose = self.track.start_poses[k];
            let shift = if jitter > T::zero() {
                T::lit(self.state.rng.random_range(-1.0..=1.0)) * jitter
            } else {
                T::zero()
            };
            let speed = if v_cap > T::zero() {
                T::lit(self.state.rng.random_range(0.0..=1.0)) * v_cap
            } else {
                T::zero()
            };
            let position = pose.position + Vec2::from_angle(pose.heading) * shift;
            let (arc, _, hint) = self.track.project_near(position, 0, usize::MAX / 4);
            agents.push(Agent {
                id: VehicleId(k as u32),
                state: VehicleState::new(position, pose.heading, speed),
                status: VehicleStatus::Active,
                arc,
                cum_reward: T::zero(),
                steps: 0,
                ledger: Vec::new(),
                next_checkpoint: [first_ahead(self.track.checkpoints(Lane::Right), arc, self.track.checkpoint_spacing),
                    first_ahead(self.track.checkpoints(Lane::Left), arc, self.track.checkpoint_spacing)],
                segment_hint: hint,
            });
        }
        let ids: Vec<_> = agents.iter().map(|a| a.id).collect();
        self.state.agents = agents;
        self.state.topology = build_topology(&ids)?;
        self.state.caring_chain = self.state.topology.clone();
        self.state.caring = CaringTracker::new();
        self.state.step = 0;
        self.state.episode += 1;
        self.state.terminal = false;
        self.refresh_observations()?;
        Ok(())
    }

    /// Rectangles of every vehicle still in the world (active and crashed).
    pub fn bodies(&self) -> Vec<Body<T>> {
        self.state
            .agents
            .iter()
            .filter(|a| matches!(a.status, VehicleStatus::Active | VehicleStatus::Crashed))
            .map(|a| Body {
                id: a.id,
                rect: self.config.footprint.at(a.state.position, a.state.heading),
                speed: a.state.speed,
            })
            .collect()
    }

    fn refresh_observations(&mut self) -> Result<(), EnvError> {
        let bodies = self.bodies();
        let v_max = self.config.vehicle.v_max;
        let mut frames: BTreeMap<VehicleId, SensorFrame<T>> = BTreeMap::new();
        for a in self.state.agents.iter().filter(|a| a.is_active()) {
            frames.insert(a.id, sense(a.id, &self.track, &bodies, &self.config.rays, v_max)?);
        }
        let messages = if self.config.v2v {
            exchange(&frames, &self.state.topology, self.state.step)?
        } else {
            BTreeMap::new()
        };
        self.state.messages_last_step = messages.len();
        let g_max = self.config.rewards.g_max;
        let mut observations = BTreeMap::new();
        for (&id, frame) in &frames {
            let obs = match messages.get(&id) {
                Some(m) => {
                    let g = gap(self.position(id), self.position(m.sender));
                    assemble_observation(frame, Some(g), Some(m), g_max)?
                }
                None => assemble_observation(frame, None, None, g_max)?,
            };
            observations.insert(id, obs);
        }
        self.state.observations = observations;
        Ok(())
    }

    fn position(&self, id: VehicleId) -> Vec2<T> {
        self.state.agents[id.0 as usize].state.position
    }

    /// Takes an active vehicle out of the world and splices both chains around it.
    pub fn remove_vehicle(&mut self, id: VehicleId) -> Result<(), EnvError> {
        match self.state.agents.get(id.0 as usize) {
            Some(a) if a.is_active() => {}
            _ => return Err(EnvError::Inactive(id)),
        }
        self.state.agents[id.0 as usize].status = VehicleStatus::Removed;
        self.state.topology = reassign_leader(&self.state.topology, id)?;
        if self.state.caring_chain.contains(id) {
            self.state.caring_chain = reassign_leader(&self.state.caring_chain, id)?;
        }
        if self.state.agents.iter().all(|a| !a.is_active()) {
            self.state.terminal = true;
            self.state.observations.clear();
        } else {
            self.refresh_observations()?;
        }
        Ok(())
    }

    /// Advances the episode by one step. `actions[k]` drives vehicle `k`; entries for
    /// vehicles that are no longer active are ignored.
    pub fn step(&mut self, actions: &[ControlCommand<T>], phase: CurriculumPhase) -> Result<StepOutcome<T>, EnvError> {
        if self.state.terminal {
            return Err(EnvError::Terminal);
        }
        if actions.len() != self.config.platoon_size {
            return Err(EnvError::ActionCount {
                expected: self.config.platoon_size,
                found: actions.len(),
            });
        }
        let track = Arc::clone(&self.track);
        let cfg = &self.config;
        let active: Vec<usize> = (0..self.state.agents.len())
            .filter(|&k| self.state.agents[k].is_active())
            .collect();
        let prev: Vec<Vec2<T>> = active.iter().map(|&k| self.state.agents[k].state.position).collect();

        for &k in &active {
            let a = &mut self.state.agents[k];
            a.state = step_vehicle(&a.state, actions[k], &cfg.vehicle, cfg.dt);
            a.steps += 1;
        }
        self.state.step += 1;

        // Collisions against the post-move world.
        let rects: Vec<(VehicleId, Obb<T>)> = self
            .bodies()
            .into_iter()
            .map(|b| (b.id, b.rect))
            .collect();
        let mut crashed = vec![false; self.state.agents.len()];
        for &k in &active {
            let id = self.state.agents[k].id;
            let others: Vec<_> = rects.iter().filter(|(o, _)| *o != id).copied().collect();
            let own = rects.iter().find(|(o, _)| *o == id).map(|(_, r)| *r).expect("active body");
            let report = check_collision(&own, &track, &others);
            if report.collided() {
                crashed[k] = true;
                if let Some(other) = report.other_id() {
                    if self.state.agents[other.0 as usize].is_active() {
                        crashed[other.0 as usize] = true;
                    }
                }
            }
        }

        // Checkpoints and finish.
        let mut events: Vec<Vec<EventKind>> = vec![Vec::new(); active.len()];
        for (i, &k) in active.iter().enumerate() {
            if crashed[k] {
                events[i].push(EventKind::Crash);
                continue;
            }
            let a = &mut self.state.agents[k];
            let pos = a.state.position;
            let (arc, _, hint) = track.project_near(pos, a.segment_hint, PROJECTION_WINDOW);
            a.arc = arc;
            a.segment_hint = hint;
            for lane in [Lane::Right, Lane::Left] {
                let cps = track.checkpoints(lane);
                let slot = &mut a.next_checkpoint[lane_slot(lane)];
                while cps.get(*slot).is_some_and(|c| c.arc < arc - track.checkpoint_spacing) {
                    *slot += 1;
                }
                if checkpoint_crossed(prev[i], pos, cps, *slot).is_some() {
                    *slot += 1;
                    events[i].push(match lane {
                        Lane::Right => EventKind::RightCheckpoint,
                        Lane::Left => EventKind::LeftCheckpoint,
                    });
                }
            }
            if finish_crossed(prev[i], pos, &track) {
                events[i].push(EventKind::FinishLine);
            }
        }

        // Caring credit along the chain as it was before anyone left.
        let mut credit: Vec<(VehicleId, EventKind)> = Vec::new();
        if cfg.caring {
            for (i, &k) in active.iter().enumerate() {
                for &kind in &events[i] {
                    if matches!(kind, EventKind::FinishLine | EventKind::Crash) {
                        let ev = RewardEvent {
                            kind,
                            subject: self.state.agents[k].id,
                        };
                        credit.extend(
                            self.state
                                .caring
                                .caring_events(&ev, &self.state.caring_chain, cfg.rewards.crash_caring)
                                .into_iter()
                                .map(|e| (e.subject, e.kind)),
                        );
                    }
                }
            }
        }
        for &(pred, kind) in &credit {
            if let Some(i) = active.iter().position(|&k| self.state.agents[k].id == pred) {
                events[i].push(kind);
            }
        }

        // Rewards from post-step speeds and gaps, roles from the chain before removal.
        let mut steps = Vec::with_capacity(active.len());
        for (i, &k) in active.iter().enumerate() {
            let a = &self.state.agents[k];
            let pred = self.state.topology.predecessor_of(a.id);
            let (role, v_ref, g) = match pred {
                Some(p) => {
                    let pa = &self.state.agents[p.0 as usize];
                    (Role::Follower, Some(pa.state.speed), Some(gap(a.state.position, pa.state.position)))
                }
                None => (Role::Leader, None, None),
            };
            let reward = step_reward(role, a.state.speed, v_ref, g, &events[i], phase, &cfg.rewards)?;
            let done = crashed[k] || events[i].contains(&EventKind::FinishLine);
            steps.push(AgentStep {
                id: a.id,
                reward,
                done,
                role,
                gap: g,
                events: events[i].clone(),
            });
        }

        let mut late_credit = Vec::new();
        for &(pred, kind) in &credit {
            if !active.iter().any(|&k| self.state.agents[k].id == pred) {
                let value = cfg.rewards.events.value(kind, phase);
                let a = &mut self.state.agents[pred.0 as usize];
                a.cum_reward = a.cum_reward + value;
                a.ledger.push(LedgerEntry {
                    step: self.state.step,
                    kind,
                    value,
                });
                late_credit.push((pred, value));
            }
        }

        let step_no = self.state.step;
        for s in &steps {
            let a = &mut self.state.agents[s.id.0 as usize];
            a.cum_reward = a.cum_reward + s.reward;
            for &kind in &s.events {
                a.ledger.push(LedgerEntry {
                    step: step_no,
                    kind,
                    value: cfg.rewards.events.value(kind, phase),
                });
            }
            if s.events.contains(&EventKind::Crash) {
                a.status = VehicleStatus::Crashed;
                a.state.speed = T::zero();
            } else if s.events.contains(&EventKind::FinishLine) {
                a.status = VehicleStatus::Finished;
            }
        }
        for s in &steps {
            if s.done {
                self.state.topology = reassign_leader(&self.state.topology, s.id)?;
            }
        }

        let all_done = self.state.agents.iter().all(|a| !a.is_active());
        let truncated = !all_done && self.state.step >= cfg.max_steps;
        if truncated {
            for s in steps.iter_mut() {
                s.done = true;
            }
        }
        let done = all_done || truncated;
        if done {
            self.state.terminal = true;
            self.state.observations.clear();
            self.state.messages_last_step = 0;
        } else {
            self.refresh_observations()?;
        }
        Ok(StepOutcome {
            step: step_no,
            agents: steps,
            late_credit,
            done,
            truncated,
        })
    }
}

fn first_ahead<T: Real>(cps: &[crate::track::Checkpoint<T>], arc: T, spacing: T) -> usize {
    cps.iter().position(|c| c.arc >= arc - spacing).unwrap_or(cps.len())
}

/// Copy of `track` with every obstacle moved along the road by a uniform draw from
/// `[-max_shift, max_shift]`, keeping its lateral offset and relative yaw.
pub fn shift_obstacles<T: Real, R: Rng + ?Sized>(track: &TrackModel<T>, max_shift: T, rng: &mut R) -> TrackModel<T> {
    let start_zone = track
        .start_poses
        .iter()
        .map(|p| track.project(p.position).0)
        .fold(T::zero(), T::max)
        + T::lit(15.0);
    let end = track.total_length - T::lit(10.0);
    let moved = track
        .obstacles
        .iter()
        .map(|o| {
            let (s, lateral) = track.project(o.center);
            let u = T::lit(rng.random_range(-1.0..=1.0));
            let lo = start_zone.min(s);
            let target = (s + u * max_shift).max(lo).min(end.max(lo));
            let (_, t0) = track.point_at(s);
            let (p1, t1) = track.point_at(target);
            Obb::new(p1 + t1.perp() * lateral, o.half, o.yaw + t1.angle() - t0.angle())
        })
        .collect();
    track.with_obstacles(moved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::{bundled, load_track};

    fn smoke() -> Arc<TrackModel<f64>> {
        Arc::new(load_track(bundled::SMOKE_STRAIGHT).unwrap())
    }

    fn straight() -> Arc<TrackModel<f64>> {
        Arc::new(load_track(bundled::STRAIGHT_TEST).unwrap())
    }

    fn still() -> EnvConfig<f64> {
        EnvConfig {
            start_speed_fraction: 0.0,
            start_jitter: 0.0,
            ..EnvConfig::default()
        }
    }

    #[test]
    fn reset_places_platoon_on_start_grid() {
        let env = Environment::new(straight(), still(), 1).unwrap();
        assert_eq!(env.active_ids().len(), 3);
        assert_eq!(env.observations().len(), 3);
        assert_eq!(env.messages_last_step(), 2);
        let leader = env.observation(VehicleId(0)).unwrap();
        assert!(leader.v2v_slots_zero());
        assert!(!env.observation(VehicleId(1)).unwrap().v2v_slots_zero());
        assert_eq!(env.topology().leader(), Some(VehicleId(0)));
    }

    #[test]
    fn config_and_start_pose_errors() {
        let cfg = EnvConfig { platoon_size: 2, ..still() };
        assert!(matches!(
            Environment::new(smoke(), cfg, 0),
            Err(EnvError::StartPoses { size: 2, available: 1 })
        ));
        let cfg = EnvConfig { platoon_size: 0, ..still() };
        assert!(matches!(Environment::new(smoke(), cfg, 0), Err(EnvError::Config(_))));
    }

    #[test]
    fn full_throttle_reaches_finish_and_collects_right_checkpoints() {
        let cfg = EnvConfig { platoon_size: 1, ..still() };
        let mut env = Environment::new(smoke(), cfg, 0).unwrap();
        let mut outcome = None;
        for _ in 0..5000 {
            let o = env.step(&[ControlCommand::new(0.0, 1.0)], CurriculumPhase::One).unwrap();
            if o.done {
                outcome = Some(o);
                break;
            }
        }
        let o = outcome.expect("finished");
        assert!(!o.truncated);
        assert!(o.agents[0].events.contains(&EventKind::FinishLine));
        let a = env.agent(VehicleId(0)).unwrap();
        assert_eq!(a.status, VehicleStatus::Finished);
        assert_eq!(a.ledger_values(EventKind::RightCheckpoint).len(), 20);
        assert!(a.ledger_values(EventKind::LeftCheckpoint).is_empty());
        assert_eq!(a.ledger_values(EventKind::FinishLine), vec![100.0]);
        assert_eq!(env.step(&[ControlCommand::default()], CurriculumPhase::One), Err(EnvError::Terminal));
        env.reset().unwrap();
        assert!(!env.is_terminal());
    }

    #[test]
    fn truncation_at_step_cap() {
        let cfg = EnvConfig {
            platoon_size: 1,
            max_steps: 7,
            ..still()
        };
        let mut env = Environment::new(smoke(), cfg, 0).unwrap();
        for k in 1..=7 {
            let o = env.step(&[ControlCommand::default()], CurriculumPhase::One).unwrap();
            assert_eq!(o.done, k == 7);
            assert_eq!(o.truncated, k == 7);
            assert_eq!(o.agents[0].done, k == 7);
        }
    }

    #[test]
    fn rear_end_crash_leaves_static_obstacle() {
        let cfg = EnvConfig { platoon_size: 2, ..still() };
        let mut env = Environment::new(straight(), cfg, 0).unwrap();
        // Follower floors it while the leader waits.
        let mut crashed = false;
        for _ in 0..1000 {
            let o = env
                .step(&[ControlCommand::new(0.0, -1.0), ControlCommand::new(0.0, 1.0)], CurriculumPhase::One)
                .unwrap();
            if o.agents.iter().any(|s| s.events.contains(&EventKind::Crash)) {
                assert!(o.agents.iter().all(|s| s.done));
                crashed = true;
                break;
            }
        }
        assert!(crashed);
        assert!(env.is_terminal());
        assert!(env.agents().iter().all(|a| a.status == VehicleStatus::Crashed));
        assert_eq!(env.bodies().len(), 2);
    }

    #[test]
    fn removing_the_leader_promotes_the_first_follower() {
        let mut env = Environment::new(straight(), still(), 0).unwrap();
        env.remove_vehicle(VehicleId(0)).unwrap();
        assert_eq!(env.topology().leader(), Some(VehicleId(1)));
        env.topology().check_invariants().unwrap();
        assert!(env.observation(VehicleId(1)).unwrap().v2v_slots_zero());
        assert_eq!(env.messages_last_step(), 1);
        assert_eq!(env.remove_vehicle(VehicleId(0)), Err(EnvError::Inactive(VehicleId(0))));
        assert_eq!(env.bodies().len(), 2);
    }

    #[test]
    fn v2v_off_zeroes_every_shared_slot() {
        let cfg = EnvConfig { v2v: false, ..still() };
        let mut env = Environment::new(straight(), cfg, 0).unwrap();
        assert_eq!(env.messages_last_step(), 0);
        assert!(env.observations().values().all(|o| o.v2v_slots_zero()));
        let o = env.step(&[ControlCommand::default(); 3], CurriculumPhase::One).unwrap();
        // Gap penalties still apply to followers.
        assert_eq!(o.agents[1].role, Role::Follower);
        assert!(o.agents[1].gap.is_some());
    }

    #[test]
    fn snapshot_restore_is_exact() {
        let cfg = EnvConfig::default();
        let mut a = Environment::new(straight(), cfg, 5).unwrap();
        let cmds = [ControlCommand::new(0.1, 0.7); 3];
        for _ in 0..10 {
            a.step(&cmds, CurriculumPhase::One).unwrap();
        }
        let snap = a.snapshot();
        let json = serde_json::to_string(&snap).unwrap();
        let mut b = a.clone();
        b.restore(serde_json::from_str(&json).unwrap());
        for _ in 0..50 {
            let oa = a.step(&cmds, CurriculumPhase::One).unwrap();
            let ob = b.step(&cmds, CurriculumPhase::One).unwrap();
            assert_eq!(oa, ob);
        }
        assert_eq!(a.snapshot(), b.snapshot());
    }

    #[test]
    fn shifted_obstacles_stay_on_the_road() {
        let track = load_track::<f64>(bundled::TRAINING).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let moved = shift_obstacles(&track, 20.0, &mut rng);
        assert_eq!(moved.obstacles.len(), track.obstacles.len());
        assert_ne!(moved.obstacles, track.obstacles);
        for (a, b) in track.obstacles.iter().zip(&moved.obstacles) {
            let (sa, la) = track.project(a.center);
            let (sb, lb) = track.project(b.center);
            assert!((sa - sb).abs() <= 20.0 + 1e-6);
            assert!((la - lb).abs() < 0.5, "{la} {lb}");
        }
    }
}
