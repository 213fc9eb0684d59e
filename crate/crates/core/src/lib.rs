//! Decentralized cooperative platoon driving with a shared PPO policy.
//!
//! The crate is generic over the scalar type ([`Real`], implemented for `f32`
//! and `f64`); the aliases at the bottom fix it to `f64`, which is what the
//! trainer and command-line tool use.

pub mod comms;
pub mod dynamics;
pub mod env;
pub mod eval;
pub mod geom;
pub mod policy;
pub mod real;
pub mod rewards;
pub mod sensing;
pub mod track;
pub mod trainer;

use serde::{Deserialize, Serialize};

pub use real::Real;

/// Stable identifier of a vehicle within an environment; also its slot in the start grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VehicleId(pub u32);

impl std::fmt::Display for VehicleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub type Vec2 = geom::Vec2<f64>;
pub type Track = track::TrackModel<f64>;
pub type VehicleState = dynamics::VehicleState<f64>;
pub type SensorFrame = sensing::SensorFrame<f64>;
pub type Observation = comms::Observation<f64>;
pub type RewardConfig = rewards::RewardConfig<f64>;
pub type PolicyParameters = policy::PolicyParameters<f64>;
pub type Environment = env::Environment<f64>;
pub type PpoConfig = trainer::PpoConfig<f64>;
pub type Trajectory = trainer::Trajectory<f64>;
