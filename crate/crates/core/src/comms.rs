//! Predecessor-follower "sharing and caring" V2V layer: chain topology, message
//! exchange, observation assembly and decentralized leader reassignment.
//!
//! Each follower hears only from the vehicle directly ahead of it, so the number of
//! messages per step is `N - 1` for an `N`-vehicle platoon. When a vehicle leaves the
//! platoon the chain is spliced; if it was the leader the first follower takes over.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::real::Real;
use crate::sensing::{SensorFrame, RAY_COUNT};
use crate::VehicleId;

pub const OBSERVATION_LEN: usize = 2 * RAY_COUNT + 3;
/// Offset of the gap slot; everything from here on is zero for a leader.
pub const GAP_SLOT: usize = RAY_COUNT + 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CommsError {
    #[error("platoon needs at least one vehicle")]
    Empty,
    #[error("vehicle {0:?} listed twice")]
    Duplicate(VehicleId),
    #[error("vehicle {0:?} is not in the platoon")]
    Unknown(VehicleId),
    #[error("no sensor frame for vehicle {0:?}")]
    MissingFrame(VehicleId),
    #[error("gap and predecessor message must both be present or both absent")]
    MixedPresence,
    #[error("topology invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct V2VMessage<T: Real> {
    pub sender: VehicleId,
    pub shared_distances: [T; RAY_COUNT],
    pub shared_speed_norm: T,
    pub step: u64,
}

/// Ordered chain, leader first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlatoonTopology {
    order: Vec<VehicleId>,
    predecessor_of: BTreeMap<VehicleId, VehicleId>,
}

impl PlatoonTopology {
    fn from_order(order: Vec<VehicleId>) -> Self {
        let predecessor_of = order.windows(2).map(|w| (w[1], w[0])).collect();
        Self { order, predecessor_of }
    }

    pub fn order(&self) -> &[VehicleId] {
        &self.order
    }

    pub fn leader(&self) -> Option<VehicleId> {
        self.order.first().copied()
    }

    pub fn predecessor_of(&self, id: VehicleId) -> Option<VehicleId> {
        self.predecessor_of.get(&id).copied()
    }

    pub fn predecessors(&self) -> &BTreeMap<VehicleId, VehicleId> {
        &self.predecessor_of
    }

    pub fn follower_of(&self, id: VehicleId) -> Option<VehicleId> {
        let i = self.order.iter().position(|&v| v == id)?;
        self.order.get(i + 1).copied()
    }

    pub fn contains(&self, id: VehicleId) -> bool {
        self.order.contains(&id)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn is_leader(&self, id: VehicleId) -> bool {
        self.leader() == Some(id)
    }

    /// Checks chain coverage, acyclicity and the leader/predecessor relation.
    pub fn check_invariants(&self) -> Result<(), CommsError> {
        let fail = |m: &str| Err(CommsError::Invariant(m.to_string()));
        let unique: BTreeSet<_> = self.order.iter().collect();
        if unique.len() != self.order.len() {
            return fail("duplicate vehicle in order");
        }
        if self.order.is_empty() {
            return if self.predecessor_of.is_empty() {
                Ok(())
            } else {
                fail("empty platoon with predecessor entries")
            };
        }
        if self.predecessor_of.len() != self.order.len() - 1 {
            return fail("predecessor map size must be N-1");
        }
        if self.predecessor_of.contains_key(&self.order[0]) {
            return fail("leader has a predecessor");
        }
        // Walk back from every vehicle; the walk must reach the leader within N hops.
        for &start in &self.order {
            let mut cur = start;
            let mut hops = 0;
            while let Some(&p) = self.predecessor_of.get(&cur) {
                if !unique.contains(&p) {
                    return fail("predecessor outside the platoon");
                }
                cur = p;
                hops += 1;
                if hops > self.order.len() {
                    return fail("cycle in predecessor chain");
                }
            }
            if cur != self.order[0] {
                return fail("chain does not reach the leader");
            }
        }
        for w in self.order.windows(2) {
            if self.predecessor_of.get(&w[1]) != Some(&w[0]) {
                return fail("predecessor map disagrees with order");
            }
        }
        Ok(())
    }
}

pub fn build_topology(ordered_ids: &[VehicleId]) -> Result<PlatoonTopology, CommsError> {
    if ordered_ids.is_empty() {
        return Err(CommsError::Empty);
    }
    let mut seen = BTreeSet::new();
    for &id in ordered_ids {
        if !seen.insert(id) {
            return Err(CommsError::Duplicate(id));
        }
    }
    Ok(PlatoonTopology::from_order(ordered_ids.to_vec()))
}

/// Each follower receives its predecessor's current frame.
pub fn exchange<T: Real>(
    frames: &BTreeMap<VehicleId, SensorFrame<T>>,
    topology: &PlatoonTopology,
    step: u64,
) -> Result<BTreeMap<VehicleId, V2VMessage<T>>, CommsError> {
    if let Some(&missing) = topology.order.iter().find(|id| !frames.contains_key(id)) {
        return Err(CommsError::MissingFrame(missing));
    }
    Ok(topology
        .predecessor_of
        .iter()
        .map(|(&follower, &pred)| {
            let f = &frames[&pred];
            (
                follower,
                V2VMessage {
                    sender: pred,
                    shared_distances: f.distances,
                    shared_speed_norm: f.speed_norm,
                    step,
                },
            )
        })
        .collect())
}

/// Removes `failed_id` and splices the chain around it.
pub fn reassign_leader(topology: &PlatoonTopology, failed_id: VehicleId) -> Result<PlatoonTopology, CommsError> {
    if !topology.contains(failed_id) {
        return Err(CommsError::Unknown(failed_id));
    }
    let order = topology.order.iter().copied().filter(|&v| v != failed_id).collect();
    Ok(PlatoonTopology::from_order(order))
}

/// Fixed-length policy input: ego rays, ego speed, gap, shared rays, shared speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Observation<T: Real>(#[serde(with = "obs_serde")] pub [T; OBSERVATION_LEN]);

mod obs_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer, T: Real>(v: &[T; OBSERVATION_LEN], s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>, T: Real>(d: D) -> Result<[T; OBSERVATION_LEN], D::Error> {
        let v = Vec::<T>::deserialize(d)?;
        v.try_into()
            .map_err(|_| serde::de::Error::custom("observation must have 35 values"))
    }
}

impl<T: Real> Observation<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    /// Whether every V2V slot (gap, shared rays, shared speed) is zero.
    pub fn v2v_slots_zero(&self) -> bool {
        self.0[GAP_SLOT..].iter().all(|&v| v == T::zero())
    }
}

pub fn assemble_observation<T: Real>(
    ego: &SensorFrame<T>,
    gap: Option<T>,
    incoming: Option<&V2VMessage<T>>,
    g_max: T,
) -> Result<Observation<T>, CommsError> {
    let mut out = [T::zero(); OBSERVATION_LEN];
    out[..RAY_COUNT].copy_from_slice(&ego.distances);
    out[RAY_COUNT] = ego.speed_norm;
    match (gap, incoming) {
        (None, None) => {}
        (Some(g), Some(m)) => {
            out[GAP_SLOT] = (g / g_max).max(T::zero()).min(T::one());
            out[GAP_SLOT + 1..GAP_SLOT + 1 + RAY_COUNT].copy_from_slice(&m.shared_distances);
            out[OBSERVATION_LEN - 1] = m.shared_speed_norm;
        }
        _ => return Err(CommsError::MixedPresence),
    }
    Ok(Observation(out))
}
