//! Sixteen-ray depth perception against borders, obstacles and other vehicles.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{ray_obb, ray_segment, Obb, Vec2};
use crate::real::Real;
use crate::track::TrackModel;
use crate::VehicleId;

pub const RAY_COUNT: usize = 16;
pub const DEFAULT_RAY_RANGE: f64 = 30.0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SensingError {
    #[error("unknown vehicle {0:?}")]
    UnknownVehicle(VehicleId),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RaycastConfig<T: Real> {
    /// Body-relative ray angles, strictly increasing over `[-pi, pi)`.
    pub angles: [T; RAY_COUNT],
    pub range: T,
}

impl<T: Real> Default for RaycastConfig<T> {
    fn default() -> Self {
        Self::evenly_spaced(T::lit(DEFAULT_RAY_RANGE))
    }
}

impl<T: Real> RaycastConfig<T> {
    pub fn evenly_spaced(range: T) -> Self {
        let step = (T::PI() + T::PI()) / T::from_usize_lossy(RAY_COUNT);
        let angles = std::array::from_fn(|k| -T::PI() + step * T::from_usize_lossy(k));
        Self { angles, range }
    }

    /// Index of the ray pointing straight ahead.
    pub fn forward_ray(&self) -> usize {
        RAY_COUNT / 2
    }
}

/// Normalized ray distances (1 = nothing within range) and normalized speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SensorFrame<T: Real> {
    pub distances: [T; RAY_COUNT],
    pub speed_norm: T,
}

impl<T: Real> SensorFrame<T> {
    pub fn clear(speed_norm: T) -> Self {
        Self {
            distances: [T::one(); RAY_COUNT],
            speed_norm,
        }
    }
}

/// A vehicle as seen by others: its rectangle and speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Body<T: Real> {
    pub id: VehicleId,
    pub rect: Obb<T>,
    pub speed: T,
}

/// Geometry visible to a ray: track borders and obstacles plus vehicle rectangles.
#[derive(Debug, Clone, Copy)]
pub struct Scene<'a, T: Real> {
    pub track: &'a TrackModel<T>,
    pub bodies: &'a [Body<T>],
    /// Vehicle excluded from hits (the one casting).
    pub ego: Option<VehicleId>,
}

/// Distance to the nearest hit along a unit ray, capped at `range`.
pub fn cast_ray<T: Real>(origin: Vec2<T>, direction: Vec2<T>, range: T, scene: &Scene<'_, T>) -> T {
    let mut best = range;
    let end = origin + direction * range;
    let lo = Vec2::new(origin.x.min(end.x), origin.z.min(end.z));
    let hi = Vec2::new(origin.x.max(end.x), origin.z.max(end.z));
    let mut candidates = Vec::new();
    scene.track.border_candidates(lo, hi, &mut candidates);
    for &i in &candidates {
        if let Some(t) = ray_segment(origin, direction, &scene.track.border_segments[i]) {
            best = best.min(t);
        }
    }
    for o in &scene.track.obstacles {
        if let Some(t) = ray_obb(origin, direction, o) {
            best = best.min(t);
        }
    }
    for b in scene.bodies {
        if Some(b.id) == scene.ego {
            continue;
        }
        if (b.rect.center - origin).norm() - b.rect.bounding_radius() > best {
            continue;
        }
        if let Some(t) = ray_obb(origin, direction, &b.rect) {
            best = best.min(t);
        }
    }
    best
}

/// Casts every configured ray from the center of `vehicle`.
pub fn sense<T: Real>(
    vehicle: VehicleId,
    track: &TrackModel<T>,
    bodies: &[Body<T>],
    config: &RaycastConfig<T>,
    v_max: T,
) -> Result<SensorFrame<T>, SensingError> {
    let ego = bodies
        .iter()
        .find(|b| b.id == vehicle)
        .ok_or(SensingError::UnknownVehicle(vehicle))?;
    let scene = Scene {
        track,
        bodies,
        ego: Some(vehicle),
    };
    let origin = ego.rect.center;
    let distances = std::array::from_fn(|k| {
        let dir = Vec2::from_angle(ego.rect.yaw + config.angles[k]);
        let d = cast_ray(origin, dir, config.range, &scene);
        (d / config.range).max(T::zero()).min(T::one())
    });
    let speed_norm = (ego.speed / v_max).max(T::zero()).min(T::one());
    Ok(SensorFrame {
        distances,
        speed_norm,
    })
}
