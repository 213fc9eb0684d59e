//! Dense per-step penalties, the inter-vehicle gap, discrete event rewards with a
//! three-phase curriculum, and caring credit propagated to predecessors.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comms::PlatoonTopology;
use crate::dynamics::{DEFAULT_DT, DEFAULT_V_MAX};
use crate::geom::Vec2;
use crate::real::Real;
use crate::VehicleId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RewardError {
    #[error("leader must not be given a gap or reference speed")]
    LeaderWithGap,
    #[error("follower needs both a gap and the predecessor speed")]
    FollowerWithoutGap,
    #[error("invalid reward config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CurriculumPhase {
    One = 1,
    Two = 2,
    Three = 3,
}

impl CurriculumPhase {
    pub const ALL: [CurriculumPhase; 3] = [CurriculumPhase::One, CurriculumPhase::Two, CurriculumPhase::Three];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Global-step boundaries of the curriculum phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumSchedule {
    pub phase_two_start: u64,
    pub phase_three_start: u64,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        Self {
            phase_two_start: 10_000_000,
            phase_three_start: 15_000_000,
        }
    }
}

impl CurriculumSchedule {
    pub fn phase_for_step(&self, global_step: u64) -> CurriculumPhase {
        if global_step < self.phase_two_start {
            CurriculumPhase::One
        } else if global_step < self.phase_three_start {
            CurriculumPhase::Two
        } else {
            CurriculumPhase::Three
        }
    }
}

/// Phase for `global_step` under the default 10M / 15M schedule.
pub fn phase_for_step(global_step: u64) -> CurriculumPhase {
    CurriculumSchedule::default().phase_for_step(global_step)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    RightCheckpoint,
    LeftCheckpoint,
    FinishLine,
    /// Credited to the predecessor of a vehicle that finished.
    FollowerFinishCaring,
    Crash,
    /// Credited to the predecessor of a vehicle that crashed; only with `crash_caring` on.
    FollowerCrashCaring,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardEvent {
    pub kind: EventKind,
    pub subject: VehicleId,
}

/// Event values per curriculum phase (index 0 = phase one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", default, deny_unknown_fields)]
pub struct EventTable<T: Real> {
    pub right_checkpoint: [T; 3],
    pub left_checkpoint: [T; 3],
    pub finish_line: [T; 3],
    pub follower_finish_caring: [T; 3],
    pub crash: [T; 3],
    pub follower_crash_caring: [T; 3],
}

impl<T: Real> Default for EventTable<T> {
    fn default() -> Self {
        let row = |a: f64, b: f64, c: f64| [T::lit(a), T::lit(b), T::lit(c)];
        Self {
            right_checkpoint: row(1.0, 1.0, 1.0),
            left_checkpoint: row(-0.1, -1.0, -2.0),
            finish_line: row(100.0, 100.0, 100.0),
            follower_finish_caring: row(50.0, 50.0, 50.0),
            crash: row(-10.0, -10.0, -50.0),
            follower_crash_caring: row(-10.0, -10.0, -50.0),
        }
    }
}

impl<T: Real> EventTable<T> {
    pub fn value(&self, kind: EventKind, phase: CurriculumPhase) -> T {
        let row = match kind {
            EventKind::RightCheckpoint => &self.right_checkpoint,
            EventKind::LeftCheckpoint => &self.left_checkpoint,
            EventKind::FinishLine => &self.finish_line,
            EventKind::FollowerFinishCaring => &self.follower_finish_caring,
            EventKind::Crash => &self.crash,
            EventKind::FollowerCrashCaring => &self.follower_crash_caring,
        };
        row[phase.index() - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", default, deny_unknown_fields)]
pub struct RewardConfig<T: Real> {
    pub v_desired: T,
    pub v_max: T,
    pub g_desired: T,
    pub g_max: T,
    /// Divisor of the gap error; `g_max - g_desired` puts -1 exactly at `g_max`.
    pub gap_normalizer: T,
    pub dt: T,
    pub events: EventTable<T>,
    pub curriculum: CurriculumSchedule,
    pub crash_caring: bool,
}

impl<T: Real> Default for RewardConfig<T> {
    fn default() -> Self {
        Self {
            v_desired: T::lit(DEFAULT_V_MAX),
            v_max: T::lit(DEFAULT_V_MAX),
            g_desired: T::lit(10.0),
            g_max: T::lit(30.0),
            gap_normalizer: T::lit(20.0),
            dt: T::lit(DEFAULT_DT),
            events: EventTable::default(),
            curriculum: CurriculumSchedule::default(),
            crash_caring: false,
        }
    }
}

impl<T: Real> RewardConfig<T> {
    pub fn validate(&self) -> Result<(), RewardError> {
        let bad = |m: &str| Err(RewardError::Config(m.to_string()));
        if !(self.g_desired > T::zero() && self.g_desired < self.g_max) {
            return bad("need 0 < g_desired < g_max");
        }
        if !(self.gap_normalizer > T::zero()) {
            return bad("gap_normalizer must be positive");
        }
        if !(self.v_max > T::zero()) || !(self.dt > T::zero()) {
            return bad("v_max and dt must be positive");
        }
        if self.curriculum.phase_two_start > self.curriculum.phase_three_start {
            return bad("curriculum phases out of order");
        }
        Ok(())
    }
}

/// Euclidean distance between two vehicle positions.
pub fn gap<T: Real>(ego_pos: Vec2<T>, pred_pos: Vec2<T>) -> T {
    let dx = ego_pos.x - pred_pos.x;
    let dz = ego_pos.z - pred_pos.z;
    (dx * dx + dz * dz).sqrt()
}

pub fn leader_velocity_penalty<T: Real>(v_l: T, config: &RewardConfig<T>) -> T {
    let e = (v_l - config.v_desired) / config.v_max;
    -(e * e)
}

pub fn follower_velocity_penalty<T: Real>(v_f: T, v_pred: T, config: &RewardConfig<T>) -> T {
    let e = (v_f - v_pred) / config.v_max;
    -(e * e)
}

/// Zero at the desired gap, -1 at the maximum gap and beyond.
pub fn gap_penalty<T: Real>(g: T, config: &RewardConfig<T>) -> T {
    let e = (g - config.g_desired) / config.gap_normalizer;
    -((e * e).min(T::one()))
}

pub fn event_reward<T: Real>(kind: EventKind, phase: CurriculumPhase, config: &RewardConfig<T>) -> T {
    config.events.value(kind, phase)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Leader,
    Follower,
}

/// Dense penalties plus every event reward for one vehicle and one step.
///
/// Followers pass the predecessor speed and the gap; the leader passes neither and
/// tracks `v_desired`.
pub fn step_reward<T: Real>(
    role: Role,
    speed: T,
    reference_speed: Option<T>,
    gap_m: Option<T>,
    events: &[EventKind],
    phase: CurriculumPhase,
    config: &RewardConfig<T>,
) -> Result<T, RewardError> {
    let dense = match (role, reference_speed, gap_m) {
        (Role::Leader, None, None) => leader_velocity_penalty(speed, config),
        (Role::Leader, _, _) => return Err(RewardError::LeaderWithGap),
        (Role::Follower, Some(v_pred), Some(g)) => {
            follower_velocity_penalty(speed, v_pred, config) + gap_penalty(g, config)
        }
        (Role::Follower, _, _) => return Err(RewardError::FollowerWithoutGap),
    };
    Ok(events
        .iter()
        .fold(dense, |acc, &k| acc + event_reward(k, phase, config)))
}

/// Emits caring credit for predecessors, at most once per subject per episode.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaringTracker {
    credited: BTreeSet<(VehicleId, EventKind)>,
}

impl CaringTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Caring events triggered by a finish or crash. `topology` is the chain before the
    /// subject leaves it.
    pub fn caring_events(
        &mut self,
        event: &RewardEvent,
        topology: &PlatoonTopology,
        crash_caring: bool,
    ) -> Vec<RewardEvent> {
        let kind = match event.kind {
            EventKind::FinishLine => EventKind::FollowerFinishCaring,
            EventKind::Crash if crash_caring => EventKind::FollowerCrashCaring,
            _ => return Vec::new(),
        };
        let Some(pred) = topology.predecessor_of(event.subject) else {
            return Vec::new();
        };
        if !self.credited.insert((event.subject, kind)) {
            return Vec::new();
        }
        vec![RewardEvent { kind, subject: pred }]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comms::build_topology;
    use proptest::prelude::*;

    fn cfg() -> RewardConfig<f64> {
        RewardConfig::default()
    }

    #[test]
    fn gap_examples() {
        assert_eq!(gap(Vec2::new(0.0, 0.0), Vec2::new(0.0, 0.0)), 0.0);
        assert_eq!(gap(Vec2::new(0.0, 0.0), Vec2::new(3.0, 4.0)), 5.0);
    }

    #[test]
    fn velocity_penalties() {
        let c = cfg();
        assert_eq!(leader_velocity_penalty(c.v_desired, &c), 0.0);
        assert_eq!(leader_velocity_penalty(0.0, &c), -1.0);
        assert!((leader_velocity_penalty(c.v_max / 2.0, &c) + 0.25).abs() < 1e-15);
        assert_eq!(follower_velocity_penalty(5.0, 5.0, &c), 0.0);
        assert_eq!(follower_velocity_penalty(c.v_max, 0.0, &c), -1.0);
        assert_eq!(
            follower_velocity_penalty(3.0, 8.0, &c),
            follower_velocity_penalty(8.0, 3.0, &c)
        );
    }

    #[test]
    fn gap_penalty_endpoints() {
        let c = cfg();
        assert_eq!(gap_penalty(10.0, &c), 0.0);
        assert_eq!(gap_penalty(30.0, &c), -1.0);
        assert_eq!(gap_penalty(50.0, &c), -1.0);
        assert_eq!(gap_penalty(20.0, &c), -0.25);
    }

    #[test]
    fn phases() {
        assert_eq!(phase_for_step(0), CurriculumPhase::One);
        assert_eq!(phase_for_step(9_999_999), CurriculumPhase::One);
        assert_eq!(phase_for_step(10_000_000), CurriculumPhase::Two);
        assert_eq!(phase_for_step(15_000_000), CurriculumPhase::Three);
        assert_eq!(phase_for_step(24_999_999), CurriculumPhase::Three);
    }

    #[test]
    fn event_examples() {
        let c = cfg();
        assert_eq!(event_reward(EventKind::LeftCheckpoint, CurriculumPhase::Three, &c), -2.0);
        assert_eq!(event_reward(EventKind::Crash, CurriculumPhase::One, &c), -10.0);
        assert_eq!(event_reward(EventKind::FollowerFinishCaring, CurriculumPhase::Two, &c), 50.0);
    }

    #[test]
    fn step_reward_examples() {
        let c = cfg();
        let p = CurriculumPhase::One;
        assert_eq!(step_reward(Role::Leader, c.v_desired, None, None, &[], p, &c), Ok(0.0));
        assert_eq!(
            step_reward(Role::Follower, 5.0, Some(5.0), Some(10.0), &[EventKind::RightCheckpoint], p, &c),
            Ok(1.0)
        );
        assert_eq!(
            step_reward(
                Role::Follower,
                c.v_max,
                Some(0.0),
                Some(31.0),
                &[EventKind::Crash],
                CurriculumPhase::Three,
                &c
            ),
            Ok(-52.0)
        );
        assert_eq!(
            step_reward(Role::Leader, 1.0, None, Some(10.0), &[], p, &c),
            Err(RewardError::LeaderWithGap)
        );
        assert_eq!(
            step_reward(Role::Follower, 1.0, Some(1.0), None, &[], p, &c),
            Err(RewardError::FollowerWithoutGap)
        );
    }

    #[test]
    fn caring_goes_to_predecessor_once() {
        let (a, b, c) = (VehicleId(0), VehicleId(1), VehicleId(2));
        let t = build_topology(&[a, b, c]).unwrap();
        let mut tracker = CaringTracker::new();
        let finish = |s| RewardEvent {
            kind: EventKind::FinishLine,
            subject: s,
        };
        assert_eq!(
            tracker.caring_events(&finish(c), &t, false),
            vec![RewardEvent {
                kind: EventKind::FollowerFinishCaring,
                subject: b
            }]
        );
        assert!(tracker.caring_events(&finish(c), &t, false).is_empty());
        assert!(tracker.caring_events(&finish(a), &t, false).is_empty());

        let crash = RewardEvent {
            kind: EventKind::Crash,
            subject: b,
        };
        assert!(tracker.caring_events(&crash, &t, false).is_empty());
        assert_eq!(
            tracker.caring_events(&crash, &t, true),
            vec![RewardEvent {
                kind: EventKind::FollowerCrashCaring,
                subject: a
            }]
        );
    }

    #[test]
    fn default_config_validates() {
        cfg().validate().unwrap();
        let mut bad = cfg();
        bad.g_desired = 40.0;
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn penalties_bounded(v1 in 0.0f64..11.12, v2 in 0.0f64..11.12, g in 0.0f64..100.0) {
            let mut c = cfg();
            c.v_max = 11.12;
            c.v_desired = 11.12;
            for p in [leader_velocity_penalty(v1, &c), follower_velocity_penalty(v1, v2, &c), gap_penalty(g, &c)] {
                prop_assert!((-1.0..=0.0).contains(&p));
            }
        }

        #[test]
        fn gap_penalty_monotone_in_error(e1 in 0.0f64..40.0, e2 in 0.0f64..40.0, sign in any::<bool>()) {
            let c = cfg();
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            let s = if sign { 1.0 } else { -1.0 };
            let g = |e: f64| 10.0 + s * e;
            prop_assume!(g(hi) >= 0.0);
            prop_assert!(gap_penalty(g(hi), &c) <= gap_penalty(g(lo), &c));
            if lo >= 20.0 {
                prop_assert_eq!(gap_penalty(g(lo), &c), -1.0);
            }
        }

        #[test]
        fn gap_is_symmetric(ax in -1e3f64..1e3, az in -1e3f64..1e3, bx in -1e3f64..1e3, bz in -1e3f64..1e3) {
            let a = Vec2::new(ax, az);
            let b = Vec2::new(bx, bz);
            prop_assert_eq!(gap(a, b), gap(b, a));
        }
    }
}
