//! Brute-force geometry oracles shared by the oracle and acceptance suites.

use platoon::geom::{Obb, Segment, Vec2};
use platoon::sensing::Body;
use platoon::track::{Footprint, StartPose, TrackModel, TrackSpec};
use platoon::VehicleId;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type V = Vec2<f64>;

/// Gently bending road of 4 to 7 vertices with borders.
pub fn random_track(rng: &mut ChaCha8Rng, obstacles: usize) -> TrackModel<f64> {
    let n = rng.random_range(4..8);
    let mut heading: f64 = rng.random_range(-3.0..3.0);
    let mut p = V::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
    let mut centerline = vec![p];
    for _ in 1..n {
        heading += rng.random_range(-0.5..0.5);
        p = p + V::from_angle(heading) * rng.random_range(8.0..25.0);
        centerline.push(p);
    }
    let lane_width = rng.random_range(3.0..5.0);
    let near = |rng: &mut ChaCha8Rng, c: &[V]| {
        let k = rng.random_range(0..c.len());
        c[k] + V::new(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0))
    };
    let obstacles = (0..obstacles)
        .map(|_| {
            let c = near(rng, &centerline);
            Obb::new(c, V::new(rng.random_range(0.3..3.0), rng.random_range(0.3..2.0)), rng.random_range(-3.0..3.0))
        })
        .collect();
    TrackSpec {
        name: "random".into(),
        lane_width,
        checkpoint_spacing: 5.0,
        borders: true,
        finish: Segment::new(centerline[n - 1], centerline[n - 1] + V::new(0.0, 1.0)),
        start_poses: vec![StartPose {
            position: centerline[0],
            heading: 0.0,
        }],
        centerline,
        obstacles,
    }
    .build()
    .unwrap()
}

pub fn random_bodies(rng: &mut ChaCha8Rng, track: &TrackModel<f64>, n: usize) -> Vec<Body<f64>> {
    (0..n)
        .map(|k| {
            let c = track.centerline[rng.random_range(0..track.centerline.len())];
            let pos = c + V::new(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0));
            Body {
                id: VehicleId(k as u32 + 1),
                rect: Footprint::default().at(pos, rng.random_range(-3.0..3.0)),
                speed: 0.0,
            }
        })
        .collect()
}

pub fn orient(a: V, b: V, c: V) -> f64 {
    (b.x - a.x) * (c.z - a.z) - (b.z - a.z) * (c.x - a.x)
}

/// Proper or touching intersection of two closed segments, by orientation signs.
pub fn crosses(p: V, q: V, a: V, b: V) -> bool {
    let d1 = orient(a, b, p);
    let d2 = orient(a, b, q);
    let d3 = orient(p, q, a);
    let d4 = orient(p, q, b);
    d1 * d2 <= 0.0 && d3 * d4 <= 0.0
}

pub fn inside(r: &Obb<f64>, p: V) -> bool {
    let (c, s) = (r.yaw.cos(), r.yaw.sin());
    let d = p - r.center;
    let (x, z) = (d.x * c + d.z * s, -d.x * s + d.z * c);
    x.abs() <= r.half.x && z.abs() <= r.half.z
}

/// March at 1 mm steps; the first step that lands inside a box or crosses a border wins.
pub fn marched_distance(origin: V, dir: V, range: f64, track: &TrackModel<f64>, bodies: &[Body<f64>]) -> f64 {
    let step = 1e-3;
    let boxes: Vec<&Obb<f64>> = track.obstacles.iter().chain(bodies.iter().map(|b| &b.rect)).collect();
    let steps = (range / step).round() as usize;
    let mut prev = origin;
    for k in 0..=steps {
        let t = k as f64 * step;
        let p = origin + dir * t;
        if boxes.iter().any(|b| inside(b, p)) {
            return t;
        }
        if k > 0 && track.border_segments.iter().any(|s| crosses(prev, p, s.a, s.b)) {
            return t;
        }
        prev = p;
    }
    range
}

