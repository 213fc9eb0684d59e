//! Kinematic bicycle model stepped at a fixed timestep.

use serde::{Deserialize, Serialize};

use crate::geom::Vec2;
use crate::real::{normalize_angle, Real};

pub const DEFAULT_DT: f64 = 0.02;
/// 40 km/h.
pub const DEFAULT_V_MAX: f64 = 40.0 / 3.6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct VehicleState<T: Real> {
    pub position: Vec2<T>,
    /// Radians in `(-pi, pi]`, measured from +x towards +z.
    pub heading: T,
    pub speed: T,
}

impl<T: Real> VehicleState<T> {
    pub fn new(position: Vec2<T>, heading: T, speed: T) -> Self {
        Self {
            position,
            heading: normalize_angle(heading),
            speed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct VehicleParams<T: Real> {
    pub wheelbase: T,
    pub max_steer_angle: T,
    pub max_accel: T,
    pub max_brake: T,
    pub v_max: T,
}

impl<T: Real> Default for VehicleParams<T> {
    fn default() -> Self {
        default_params()
    }
}

pub fn default_params<T: Real>() -> VehicleParams<T> {
    VehicleParams {
        wheelbase: T::lit(2.5),
        max_steer_angle: T::lit(0.5),
        max_accel: T::lit(3.0),
        max_brake: T::lit(6.0),
        v_max: T::lit(DEFAULT_V_MAX),
    }
}

/// Normalized steering and throttle, each in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ControlCommand<T: Real> {
    pub steering: T,
    pub throttle: T,
}

impl<T: Real> ControlCommand<T> {
    pub fn new(steering: T, throttle: T) -> Self {
        Self { steering, throttle }
    }

    pub fn clamped(self) -> Self {
        let one = T::one();
        Self {
            steering: self.steering.max(-one).min(one),
            throttle: self.throttle.max(-one).min(one),
        }
    }
}

/// Advances one vehicle by `dt` seconds.
pub fn step_vehicle<T: Real>(
    state: &VehicleState<T>,
    command: ControlCommand<T>,
    params: &VehicleParams<T>,
    dt: T,
) -> VehicleState<T> {
    let cmd = command.clamped();
    let steer = cmd.steering * params.max_steer_angle;
    let accel = if cmd.throttle >= T::zero() {
        cmd.throttle * params.max_accel
    } else {
        cmd.throttle * params.max_brake
    };
    let speed = (state.speed + accel * dt).max(T::zero()).min(params.v_max);
    let heading = normalize_angle(state.heading + speed / params.wheelbase * steer.tan() * dt);
    let position = state.position + Vec2::from_angle(heading) * (speed * dt);
    VehicleState {
        position,
        heading,
        speed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    type S = VehicleState<f64>;

    #[test]
    fn coasting_advances_speed_times_dt() {
        let p = default_params::<f64>();
        let s = S::new(Vec2::zero(), 0.0, 10.0);
        let n = step_vehicle(&s, ControlCommand::new(0.0, 0.0), &p, 0.02);
        assert!((n.position.x - 0.2).abs() < 1e-12);
        assert_eq!(n.position.z, 0.0);
        assert_eq!(n.speed, 10.0);
    }

    #[test]
    fn full_throttle_at_top_speed_stays_capped() {
        let p = default_params::<f64>();
        let s = S::new(Vec2::zero(), 0.0, p.v_max);
        let n = step_vehicle(&s, ControlCommand::new(0.0, 1.0), &p, 0.02);
        assert_eq!(n.speed, p.v_max);
    }

    #[test]
    fn constant_steer_closes_circle() {
        let p = default_params::<f64>();
        let steering = 0.4;
        let v = 5.0;
        let radius = p.wheelbase / (steering * p.max_steer_angle).tan();
        let period = 2.0 * std::f64::consts::PI * radius / v;
        let steps = (period / 0.02).round() as usize;
        let mut s = S::new(Vec2::zero(), 0.0, v);
        let mut max_dist: f64 = 0.0;
        for _ in 0..steps {
            s = step_vehicle(&s, ControlCommand::new(steering, 0.0), &p, 0.02);
            max_dist = max_dist.max(s.position.norm());
        }
        assert!(s.position.norm() < 0.1, "{:?}", s.position);
        assert!((max_dist - 2.0 * radius).abs() < 0.05);
    }

    #[test]
    fn default_params_match_top_speed() {
        let p = default_params::<f64>();
        assert!((p.v_max * 3.6 - 40.0).abs() < 1e-12);
        for v in [p.wheelbase, p.max_steer_angle, p.max_accel, p.max_brake, p.v_max] {
            assert!(v > 0.0);
        }
        let r = p.wheelbase / p.max_steer_angle.tan();
        assert!((r - 4.5764).abs() < 1e-3);
    }

    #[test]
    fn parked_vehicle_without_throttle_stays() {
        let p = default_params::<f64>();
        let mut s = S::new(Vec2::new(3.0, 4.0), 1.0, 0.0);
        for k in 0..500 {
            let steer = if k % 2 == 0 { 1.0 } else { -0.3 };
            s = step_vehicle(&s, ControlCommand::new(steer, 0.0), &p, 0.02);
        }
        assert_eq!(s.position, Vec2::new(3.0, 4.0));
        assert_eq!(s.heading, 1.0);
    }

    proptest! {
        #[test]
        fn speed_stays_in_range(cmds in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..200)) {
            let p = default_params::<f64>();
            let mut s = S::new(Vec2::zero(), 0.0, 0.0);
            for (st, th) in cmds {
                s = step_vehicle(&s, ControlCommand::new(st, th), &p, 0.02);
                prop_assert!(s.speed >= 0.0 && s.speed <= p.v_max);
                prop_assert!(s.heading > -std::f64::consts::PI && s.heading <= std::f64::consts::PI);
            }
        }

        #[test]
        fn negated_steering_mirrors_trajectory(
            cmds in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..200),
            heading in -3.0f64..3.0,
            speed in 0.0f64..11.0,
        ) {
            let p = default_params::<f64>();
            let mut a = S::new(Vec2::zero(), heading, speed);
            let mut b = a;
            let axis = Vec2::from_angle(heading);
            for (st, th) in cmds {
                a = step_vehicle(&a, ControlCommand::new(st, th), &p, 0.02);
                b = step_vehicle(&b, ControlCommand::new(-st, th), &p, 0.02);
                // Reflect `a` across the initial heading axis.
                let along = a.position.dot(axis);
                let reflected = axis * (along + along) - a.position;
                prop_assert!((reflected - b.position).norm() < 1e-9);
            }
        }

        #[test]
        fn integration_is_bitwise_deterministic(st in -1.0f64..1.0, th in -1.0f64..1.0, v in 0.0f64..11.0, h in -3.0f64..3.0) {
            let p = default_params::<f64>();
            let s = S::new(Vec2::new(1.5, -2.0), h, v);
            let a = step_vehicle(&s, ControlCommand::new(st, th), &p, 0.02);
            let b = step_vehicle(&s, ControlCommand::new(st, th), &p, 0.02);
            prop_assert_eq!(a.position.x.to_bits(), b.position.x.to_bits());
            prop_assert_eq!(a.position.z.to_bits(), b.position.z.to_bits());
            prop_assert_eq!(a.heading.to_bits(), b.heading.to_bits());
        }
    }
}
