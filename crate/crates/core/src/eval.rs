//! Scripted test scenarios, per-step traces and the gap, crash and throughput metrics
//! computed from them.
//!
//! Every rollout takes the policy's mean action, starts the platoon at rest on the
//! start grid and is therefore deterministic for a given checkpoint.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::comms::PlatoonTopology;
use crate::dynamics::ControlCommand;
use crate::env::{EnvConfig, EnvError, Environment, StepOutcome, DEFAULT_MAX_STEPS};
use crate::policy::{PolicyError, PolicyParameters};
use crate::real::Real;
use crate::rewards::{CurriculumPhase, EventKind, Role};
use crate::track::{bundled, load_track, TrackError, TrackModel};
use crate::VehicleId;

pub const TRACE_HEADER: &str = "step,time_s,vehicle_id,role,x,z,heading,speed,gap_error,reward,cum_reward,event";
pub const SCENARIO_IDS: [u8; 5] = [1, 2, 3, 4, 5];
pub const DEFAULT_EVAL_PLATOON: usize = 8;
/// Share of a gap's samples averaged into its stall value.
pub const STALL_FRACTION: f64 = 0.05;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("unknown scenario {0}; valid ids are 1, 2, 3, 4, 5")]
    UnknownScenario(u8),
    #[error("inconsistent scenario {id}: {message}")]
    Spec { id: u8, message: String },
    #[error("trace is empty")]
    EmptyTrace,
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown track {0:?}")]
    UnknownTrack(String),
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Leader speed override: P-control on throttle towards `target_speed` while
/// `start_s <= t < end_s`; the policy drives before and after.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedProfile {
    pub start_s: f64,
    pub end_s: f64,
    pub target_speed: f64,
    pub gain: f64,
}

impl Default for SpeedProfile {
    fn default() -> Self {
        Self {
            start_s: 20.0,
            end_s: 30.0,
            target_speed: 3.0,
            gain: 0.5,
        }
    }
}

impl SpeedProfile {
    pub fn throttle(&self, time_s: f64, speed: f64) -> Option<f64> {
        (time_s >= self.start_s && time_s < self.end_s)
            .then(|| (self.gain * (self.target_speed - speed)).clamp(-1.0, 1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    None,
    LeaderSpeedProfile(SpeedProfile),
    RemoveLeaderAtStep(u64),
    V2vOff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: u8,
    /// Bundled track name or path to a track file.
    pub track: String,
    pub platoon_size: usize,
    pub perturbation: Perturbation,
    pub max_steps: u64,
}

impl ScenarioSpec {
    pub fn standard(id: u8) -> Result<Self, EvalError> {
        let (track, perturbation) = match id {
            1 => ("straight_test", Perturbation::None),
            2 => ("straight_test", Perturbation::LeaderSpeedProfile(SpeedProfile::default())),
            3 => ("straight_test", Perturbation::RemoveLeaderAtStep(500)),
            4 => ("urban_test", Perturbation::None),
            5 => ("urban_test", Perturbation::None),
            _ => return Err(EvalError::UnknownScenario(id)),
        };
        Ok(Self {
            id,
            track: track.into(),
            platoon_size: DEFAULT_EVAL_PLATOON,
            perturbation,
            max_steps: DEFAULT_MAX_STEPS,
        })
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| {
            Err(EvalError::Spec {
                id: self.id,
                message: m.into(),
            })
        };
        if !SCENARIO_IDS.contains(&self.id) {
            return Err(EvalError::UnknownScenario(self.id));
        }
        if self.platoon_size == 0 || self.max_steps == 0 {
            return bad("platoon size and max steps must be positive");
        }
        match (self.id, &self.perturbation) {
            (1 | 4, Perturbation::None) | (5, Perturbation::None | Perturbation::V2vOff) => Ok(()),
            (2, Perturbation::LeaderSpeedProfile(p)) if p.start_s < p.end_s && p.target_speed >= 0.0 => Ok(()),
            (2, _) => bad("needs a leader speed profile with start_s < end_s"),
            (3, Perturbation::RemoveLeaderAtStep(s)) if *s > 0 && *s < self.max_steps => Ok(()),
            (3, _) => bad("needs remove_leader_at_step within the step cap"),
            (_, p) => bad(&format!("perturbation {p:?} does not belong to this scenario")),
        }
    }

    /// Named runs this scenario expands to: scenario 5 compares V2V on and off.
    pub fn variants(&self) -> Vec<(&'static str, ScenarioSpec)> {
        if self.id == 5 {
            let with = |p| ScenarioSpec {
                perturbation: p,
                ..self.clone()
            };
            vec![("v2v_on", with(Perturbation::None)), ("v2v_off", with(Perturbation::V2vOff))]
        } else {
            vec![("main", self.clone())]
        }
    }

    pub fn load_track<T: Real>(&self) -> Result<TrackModel<T>, EvalError> {
        let text = match bundled::by_name(&self.track) {
            Some(t) => t.to_string(),
            None => {
                let path = Path::new(&self.track);
                if !path.is_file() {
                    return Err(EvalError::UnknownTrack(self.track.clone()));
                }
                std::fs::read_to_string(path).map_err(|source| EvalError::Io {
                    path: path.into(),
                    source,
                })?
            }
        };
        Ok(load_track(&text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TraceEvent {
    CheckpointRight,
    CheckpointLeft,
    Crash,
    Finish,
    LeaderRemoved,
    Caring,
}

impl TraceEvent {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceEvent::CheckpointRight => "checkpoint_r",
            TraceEvent::CheckpointLeft => "checkpoint_l",
            TraceEvent::Crash => "crash",
            TraceEvent::Finish => "finish",
            TraceEvent::LeaderRemoved => "leader_removed",
            TraceEvent::Caring => "caring",
        }
    }

    pub fn from_kind(kind: EventKind) -> Self {
        match kind {
            EventKind::RightCheckpoint => TraceEvent::CheckpointRight,
            EventKind::LeftCheckpoint => TraceEvent::CheckpointLeft,
            EventKind::FinishLine => TraceEvent::Finish,
            EventKind::Crash => TraceEvent::Crash,
            EventKind::FollowerFinishCaring | EventKind::FollowerCrashCaring => TraceEvent::Caring,
        }
    }
}

impl FromStr for TraceEvent {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        [
            TraceEvent::CheckpointRight,
            TraceEvent::CheckpointLeft,
            TraceEvent::Crash,
            TraceEvent::Finish,
            TraceEvent::LeaderRemoved,
            TraceEvent::Caring,
        ]
        .into_iter()
        .find(|e| e.as_str() == s)
        .ok_or_else(|| format!("unknown event {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceRole {
    Leader,
    Follower,
    /// Row for a vehicle already out of the episode that received caring credit.
    Inactive,
}

impl TraceRole {
    fn as_str(self) -> &'static str {
        match self {
            TraceRole::Leader => "leader",
            TraceRole::Follower => "follower",
            TraceRole::Inactive => "inactive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub time_s: f64,
    pub vehicle: VehicleId,
    pub role: TraceRole,
    pub x: f64,
    pub z: f64,
    pub heading: f64,
    pub speed: f64,
    /// Gap minus the desired gap; absent for leaders.
    pub gap_error: Option<f64>,
    pub reward: f64,
    pub cum_reward: f64,
    pub events: Vec<TraceEvent>,
}

impl TraceRow {
    fn write_csv(&self, out: &mut String) {
        let gap = self.gap_error.map(|g| g.to_string()).unwrap_or_default();
        let events = if self.events.is_empty() {
            "none".to_string()
        } else {
            self.events.iter().map(|e| e.as_str()).collect::<Vec<_>>().join(";")
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.time_s,
            self.vehicle,
            self.role.as_str(),
            self.x,
            self.z,
            self.heading,
            self.speed,
            gap,
            self.reward,
            self.cum_reward,
            events
        );
    }

    fn parse(line: &str) -> Result<Self, String> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(format!("expected 12 fields, found {}", f.len()));
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|e| format!("field {}: {e}", i + 1));
        let role = match f[3] {
            "leader" => TraceRole::Leader,
            "follower" => TraceRole::Follower,
            "inactive" => TraceRole::Inactive,
            r => return Err(format!("unknown role {r:?}")),
        };
        let events = match f[11] {
            "none" => Vec::new(),
            s => s.split(';').map(str::parse).collect::<Result<_, _>>()?,
        };
        Ok(Self {
            step: f[0].parse().map_err(|e| format!("field 1: {e}"))?,
            time_s: num(1)?,
            vehicle: VehicleId(f[2].parse().map_err(|e| format!("field 3: {e}"))?),
            role,
            x: num(4)?,
            z: num(5)?,
            heading: num(6)?,
            speed: num(7)?,
            gap_error: if f[8].is_empty() { None } else { Some(num(8)?) },
            reward: num(9)?,
            cum_reward: num(10)?,
            events,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(96 * (self.rows.len() + 1));
        out.push_str(TRACE_HEADER);
        out.push('\n');
        for r in &self.rows {
            r.write_csv(&mut out);
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self, EvalError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            None => return Err(EvalError::EmptyTrace),
            Some((_, h)) if h.trim_end() == TRACE_HEADER => {}
            Some(_) => {
                return Err(EvalError::Parse {
                    line: 1,
                    message: "missing trace header".into(),
                })
            }
        }
        let rows = lines
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| TraceRow::parse(l.trim_end()).map_err(|message| EvalError::Parse { line: i + 1, message }))
            .collect::<Result<Vec<_>, _>>()?;
        if rows.is_empty() {
            return Err(EvalError::EmptyTrace);
        }
        Ok(Self { rows })
    }

    /// Hex SHA-256 of the CSV serialization.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_csv().as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapMetrics {
    pub rmse: f64,
    /// Population standard deviation.
    pub std: f64,
    pub mean: f64,
    /// Signed error of largest magnitude; the later sample wins ties.
    pub max: f64,
    /// Mean error over the final [`STALL_FRACTION`] of samples (at least one).
    pub stall: f64,
    pub samples: usize,
}

impl GapMetrics {
    pub fn from_errors(errors: &[f64]) -> Option<Self> {
        if errors.is_empty() {
            return None;
        }
        let n = errors.len() as f64;
        let mean = errors.iter().sum::<f64>() / n;
        let ms = errors.iter().map(|e| e * e).sum::<f64>() / n;
        let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
        let max = errors
            .iter()
            .copied()
            .reduce(|best, e| if e.abs() >= best.abs() { e } else { best })
            .unwrap_or(0.0);
        let tail = ((STALL_FRACTION * n).ceil() as usize).clamp(1, errors.len());
        let stall = errors[errors.len() - tail..].iter().sum::<f64>() / tail as f64;
        Some(Self {
            rmse: ms.sqrt(),
            std: var.sqrt(),
            mean,
            max,
            stall,
            samples: errors.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    /// The follower whose gap to its predecessor this row measures.
    pub follower: VehicleId,
    pub metrics: GapMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetrics {
    pub gaps: Vec<GapRow>,
    pub crashes: usize,
    pub finished: usize,
    pub vehicles: usize,
    /// Finished vehicles per simulated minute.
    pub throughput: f64,
}

/// Gap rows use only steps where the follower had an active predecessor, so a
/// removed or departed vehicle's gap never enters the statistics.
pub fn compute_metrics(trace: &Trace) -> Result<TraceMetrics, EvalError> {
    if trace.rows.is_empty() {
        return Err(EvalError::EmptyTrace);
    }
    let mut errors: BTreeMap<VehicleId, Vec<f64>> = BTreeMap::new();
    for r in &trace.rows {
        if let (TraceRole::Follower, Some(e)) = (r.role, r.gap_error) {
            errors.entry(r.vehicle).or_default().push(e);
        }
    }
    let gaps = errors
        .into_iter()
        .filter_map(|(follower, e)| GapMetrics::from_errors(&e).map(|metrics| GapRow { follower, metrics }))
        .collect();
    let count = |ev: TraceEvent| trace.rows.iter().filter(|r| r.events.contains(&ev)).count();
    Ok(TraceMetrics {
        gaps,
        crashes: count(TraceEvent::Crash),
        finished: count(TraceEvent::Finish),
        vehicles: trace.rows.iter().map(|r| r.vehicle).collect::<BTreeSet<_>>().len(),
        throughput: throughput(trace),
    })
}

/// Finished vehicles divided by the simulated minutes until the last finish, or
/// until the end of the trace when some vehicle never left the episode.
pub fn throughput(trace: &Trace) -> f64 {
    let finishes: Vec<f64> = trace
        .rows
        .iter()
        .filter(|r| r.events.contains(&TraceEvent::Finish))
        .map(|r| r.time_s)
        .collect();
    if finishes.is_empty() {
        return 0.0;
    }
    let vehicles: BTreeSet<VehicleId> = trace.rows.iter().map(|r| r.vehicle).collect();
    let resolved: BTreeSet<VehicleId> = trace
        .rows
        .iter()
        .filter(|r| {
            r.events
                .iter()
                .any(|e| matches!(e, TraceEvent::Finish | TraceEvent::Crash | TraceEvent::LeaderRemoved))
        })
        .map(|r| r.vehicle)
        .collect();
    let end = if resolved.len() == vehicles.len() {
        finishes.iter().copied().fold(f64::MIN, f64::max)
    } else {
        trace.rows.iter().map(|r| r.time_s).fold(f64::MIN, f64::max)
    };
    if end > 0.0 {
        finishes.len() as f64 / (end / 60.0)
    } else {
        0.0
    }
}

/// Relative change `(on - off) / off`; `None` when `off` is zero.
pub fn relative_change(on: f64, off: f64) -> Option<f64> {
    (off != 0.0).then(|| (on - off) / off)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: u8,
    pub variant: String,
    pub metrics: TraceMetrics,
    pub trace_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRun {
    pub report: ScenarioReport,
    #[serde(skip)]
    pub trace: Trace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub scenario: u8,
    pub runs: Vec<ScenarioRun>,
    /// Scenario 5 only: relative throughput change of V2V on over off.
    pub throughput_change: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings<T: Real> {
    pub env: EnvConfig<T>,
    pub phase: CurriculumPhase,
}

impl<T: Real> Default for EvalSettings<T> {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            phase: CurriculumPhase::Three,
        }
    }
}

/// Observer hook: called after every step (and after a scripted removal) with the
/// environment and the step outcome.
pub trait StepObserver<T: Real> {
    fn observe(&mut self, variant: &str, env: &Environment<T>, outcome: &StepOutcome<T>);
}

impl<T: Real, F: FnMut(&str, &Environment<T>, &StepOutcome<T>)> StepObserver<T> for F {
    fn observe(&mut self, variant: &str, env: &Environment<T>, outcome: &StepOutcome<T>) {
        self(variant, env, outcome)
    }
}

pub struct NoObserver;

impl<T: Real> StepObserver<T> for NoObserver {
    fn observe(&mut self, _: &str, _: &Environment<T>, _: &StepOutcome<T>) {}
}

pub fn run_scenario<T: Real>(
    spec: &ScenarioSpec,
    params: &PolicyParameters<T>,
    settings: &EvalSettings<T>,
    observer: &mut impl StepObserver<T>,
) -> Result<EvalOutcome, EvalError> {
    spec.validate()?;
    let track = Arc::new(spec.load_track::<T>()?);
    let runs = spec
        .variants()
        .into_iter()
        .map(|(name, variant)| {
            let trace = rollout(&variant, Arc::clone(&track), params, settings, &mut |env: &Environment<T>,
                                                                                          out: &StepOutcome<T>| {
                observer.observe(name, env, out)
            })?;
            let metrics = compute_metrics(&trace)?;
            Ok(ScenarioRun {
                report: ScenarioReport {
                    scenario: spec.id,
                    variant: name.into(),
                    metrics,
                    trace_path: None,
                },
                trace,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let throughput_change = match runs.as_slice() {
        [on, off] if spec.id == 5 => relative_change(on.report.metrics.throughput, off.report.metrics.throughput),
        _ => None,
    };
    Ok(EvalOutcome {
        scenario: spec.id,
        runs,
        throughput_change,
    })
}

fn rollout<T: Real>(
    spec: &ScenarioSpec,
    track: Arc<TrackModel<T>>,
    params: &PolicyParameters<T>,
    settings: &EvalSettings<T>,
    observer: &mut dyn FnMut(&Environment<T>, &StepOutcome<T>),
) -> Result<Trace, EvalError> {
    let mut cfg = settings.env.clone();
    cfg.platoon_size = spec.platoon_size;
    cfg.max_steps = spec.max_steps;
    cfg.start_speed_fraction = T::zero();
    cfg.start_jitter = T::zero();
    if spec.perturbation == Perturbation::V2vOff {
        cfg.v2v = false;
    }
    let g_desired = cfg.rewards.g_desired.as_f64();
    let dt = cfg.dt.as_f64();
    let mut env = Environment::new(track, cfg, 0)?;
    let mut trace = Trace::default();
    let mut actions = vec![ControlCommand::default(); spec.platoon_size];
    while !env.is_terminal() {
        let time_s = env.step_count() as f64 * dt;
        actions.iter_mut().for_each(|a| *a = ControlCommand::default());
        for (&id, obs) in env.observations() {
            let m = params.mean_action(obs)?.action;
            actions[id.0 as usize] = ControlCommand::new(m[0], m[1]);
        }
        if let (Perturbation::LeaderSpeedProfile(p), Some(leader)) = (&spec.perturbation, env.topology().leader()) {
            let speed = env.agents()[leader.0 as usize].state.speed.as_f64();
            if let Some(th) = p.throttle(time_s, speed) {
                actions[leader.0 as usize].throttle = T::lit(th);
            }
        }
        let outcome = env.step(&actions, settings.phase)?;
        let first = trace.rows.len();
        record(&mut trace, &env, &outcome, dt, g_desired);
        if let Perturbation::RemoveLeaderAtStep(at) = spec.perturbation {
            if outcome.step == at && !env.is_terminal() {
                if let Some(leader) = env.topology().leader() {
                    env.remove_vehicle(leader)?;
                    if let Some(row) = trace.rows[first..].iter_mut().find(|r| r.vehicle == leader) {
                        row.events.push(TraceEvent::LeaderRemoved);
                    }
                }
            }
        }
        observer(&env, &outcome);
    }
    Ok(trace)
}

fn record<T: Real>(trace: &mut Trace, env: &Environment<T>, outcome: &StepOutcome<T>, dt: f64, g_desired: f64) {
    let time_s = outcome.step as f64 * dt;
    let row = |id: VehicleId, role, gap_error, reward: f64, events: Vec<TraceEvent>| {
        let a = &env.agents()[id.0 as usize];
        TraceRow {
            step: outcome.step,
            time_s,
            vehicle: id,
            role,
            x: a.state.position.x.as_f64(),
            z: a.state.position.z.as_f64(),
            heading: a.state.heading.as_f64(),
            speed: a.state.speed.as_f64(),
            gap_error,
            reward,
            cum_reward: a.cum_reward.as_f64(),
            events,
        }
    };
    for s in &outcome.agents {
        let role = match s.role {
            Role::Leader => TraceRole::Leader,
            Role::Follower => TraceRole::Follower,
        };
        let events = s.events.iter().map(|&k| TraceEvent::from_kind(k)).collect();
        trace.rows.push(row(
            s.id,
            role,
            s.gap.map(|g| g.as_f64() - g_desired),
            s.reward.as_f64(),
            events,
        ));
    }
    for &(id, value) in &outcome.late_credit {
        trace
            .rows
            .push(row(id, TraceRole::Inactive, None, value.as_f64(), vec![TraceEvent::Caring]));
    }
}

/// Topology invariants plus zeroed V2V slots for the current leader.
pub fn leader_is_isolated<T: Real>(env: &Environment<T>) -> bool {
    let topo: &PlatoonTopology = env.topology();
    topo.check_invariants().is_ok()
        && topo
            .leader()
            .and_then(|l| env.observation(l))
            .is_none_or(|o| o.v2v_slots_zero())
}

impl fmt::Display for TraceMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8} {:>10} {:>10} {:>10} {:>10} {:>8}", "gap", "rmse_m", "std_m", "max_m", "stall_m", "samples")?;
        if self.gaps.is_empty() {
            writeln!(f, "(no gaps)")?;
        }
        for (i, g) in self.gaps.iter().enumerate() {
            let x = &g.metrics;
            writeln!(
                f,
                "{:<8} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>8}",
                format!("gap{} v{}", i + 1, g.follower),
                x.rmse,
                x.std,
                x.max,
                x.stall,
                x.samples
            )?;
        }
        writeln!(
            f,
            "crashes {}  finished {}/{}  throughput {:.3} veh/min",
            self.crashes, self.finished, self.vehicles, self.throughput
        )?;
        writeln!(f, "gaps of removed or departed vehicles are excluded")
    }
}

impl fmt::Display for ScenarioReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Scenario {} ({})", self.scenario, self.variant)?;
        write!(f, "{}", self.metrics)
    }
}

impl fmt::Display for EvalOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.runs {
            write!(f, "{}", r.report)?;
        }
        if self.scenario == 5 {
            match self.throughput_change {
                Some(c) => writeln!(f, "throughput change v2v on vs off: {:+.1}%", 100.0 * c)?,
                None => writeln!(f, "throughput change v2v on vs off: n/a (no finishes with v2v off)")?,
            }
        }
        Ok(())
    }
}

pub const GAP_CSV_HEADER: &str = "scenario,variant,gap,follower,rmse,std,max,stall,samples";
pub const SUMMARY_CSV_HEADER: &str = "scenario,variant,crashes,finished,vehicles,throughput_per_min,throughput_change";

pub fn gap_csv(reports: &[&ScenarioReport]) -> String {
    let mut out = format!("{GAP_CSV_HEADER}\n");
    for r in reports {
        for (i, g) in r.metrics.gaps.iter().enumerate() {
            let m = &g.metrics;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.scenario,
                r.variant,
                i + 1,
                g.follower,
                m.rmse,
                m.std,
                m.max,
                m.stall,
                m.samples
            );
        }
    }
    out
}

pub fn summary_csv(outcome: &EvalOutcome) -> String {
    let mut out = format!("{SUMMARY_CSV_HEADER}\n");
    let change = outcome.throughput_change.map(|c| c.to_string()).unwrap_or_default();
    for r in outcome.runs.iter().map(|r| &r.report) {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.scenario, r.variant, m.crashes, m.finished, m.vehicles, m.throughput, change
        );
    }
    out
}

/// Writes `scenario{id}_{variant}.trace.csv` per run plus `scenario{id}_gaps.csv`,
/// `scenario{id}_summary.csv` and `scenario{id}_report.txt`; fills in trace paths.
pub fn write_outputs(outcome: &mut EvalOutcome, out_dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| EvalError::Io { path, source }
    };
    std::fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let id = outcome.scenario;
    let mut written = Vec::new();
    for run in &mut outcome.runs {
        let path = out_dir.join(format!("scenario{id}_{}.trace.csv", run.report.variant));
        std::fs::write(&path, run.trace.to_csv()).map_err(io(&path))?;
        run.report.trace_path = Some(path.clone());
        written.push(path);
    }
    let reports: Vec<_> = outcome.runs.iter().map(|r| &r.report).collect();
    let files = [
        (format!("scenario{id}_gaps.csv"), gap_csv(&reports)),
        (format!("scenario{id}_summary.csv"), summary_csv(outcome)),
        (format!("scenario{id}_report.txt"), outcome.to_string()),
    ];
    for (name, body) in files {
        let path = out_dir.join(name);
        std::fs::write(&path, body).map_err(io(&path))?;
        written.push(path);
    }
    Ok(written)
}
