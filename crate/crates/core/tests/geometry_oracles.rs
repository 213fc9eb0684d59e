mod support;

use platoon::geom::{Obb, Segment};
use platoon::sensing::{cast_ray, sense, Body, RaycastConfig, Scene};
use platoon::track::{bundled, check_collision, load_track, Footprint, StartPose, TrackModel, TrackSpec};
use platoon::VehicleId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::geometry::*;

#[test]
fn cast_ray_matches_one_millimeter_march_on_1000_scenes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let k = rng.random_range(0..5);
        let track = random_track(&mut rng, k);
        let k = rng.random_range(0..4);
        let bodies = random_bodies(&mut rng, &track, k);
        let c = track.centerline[rng.random_range(0..track.centerline.len())];
        let origin = c + V::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let dir = V::from_angle(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
        let scene = Scene {
            track: &track,
            bodies: &bodies,
            ego: None,
        };
        let fast = cast_ray(origin, dir, 30.0, &scene);
        let slow = marched_distance(origin, dir, 30.0, &track, &bodies);
        worst = worst.max((fast - slow).abs());
    }
    assert!(worst <= 2e-3, "worst disagreement {worst} m");
}

#[test]
fn adding_geometry_never_lengthens_a_ray() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cfg = RaycastConfig::<f64>::default();
    for _ in 0..300 {
        let track = random_track(&mut rng, 2);
        let mut bodies = random_bodies(&mut rng, &track, 3);
        bodies[0].id = VehicleId(0);
        let before = sense(VehicleId(0), &track, &bodies, &cfg, 11.0).unwrap();
        let mut more = track.obstacles.clone();
        let c = bodies[0].rect.center;
        more.push(Obb::new(
            c + V::new(rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0)),
            V::new(1.0, 1.0),
            rng.random_range(-3.0..3.0),
        ));
        let bigger = track.with_obstacles(more);
        let mut crowd = bodies.clone();
        crowd.extend(random_bodies(&mut rng, &track, 1).into_iter().map(|mut b| {
            b.id = VehicleId(99);
            b
        }));
        let after = sense(VehicleId(0), &bigger, &crowd, &cfg, 11.0).unwrap();
        for (a, b) in after.distances.iter().zip(&before.distances) {
            assert!(a <= b);
        }
    }
}

#[test]
fn sensor_frame_is_invariant_under_rigid_motion() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let cfg = RaycastConfig::<f64>::default();
    for _ in 0..200 {
        let track = random_track(&mut rng, 3);
        let mut bodies = random_bodies(&mut rng, &track, 3);
        bodies[0].id = VehicleId(0);
        let angle: f64 = rng.random_range(-3.0..3.0);
        let shift = V::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
        let mv = |p: V| p.rotated(angle) + shift;
        let spec = TrackSpec {
            name: "moved".into(),
            lane_width: track.lane_width,
            checkpoint_spacing: 5.0,
            borders: true,
            centerline: track.centerline.iter().map(|&p| mv(p)).collect(),
            obstacles: track.obstacles.iter().map(|o| Obb::new(mv(o.center), o.half, o.yaw + angle)).collect(),
            start_poses: vec![StartPose {
                position: mv(track.centerline[0]),
                heading: 0.0,
            }],
            finish: Segment::new(mv(track.finish.a), mv(track.finish.b)),
        };
        let moved = spec.build().unwrap();
        let moved_bodies: Vec<_> = bodies
            .iter()
            .map(|b| Body {
                rect: Obb::new(mv(b.rect.center), b.rect.half, b.rect.yaw + angle),
                ..*b
            })
            .collect();
        let a = sense(VehicleId(0), &track, &bodies, &cfg, 11.0).unwrap();
        let b = sense(VehicleId(0), &moved, &moved_bodies, &cfg, 11.0).unwrap();
        for (x, y) in a.distances.iter().zip(&b.distances) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }
}

fn line_distance(p: V, a: V, b: V) -> f64 {
    orient(a, b, p).abs() / a.distance(b)
}

#[test]
fn border_vertices_sit_at_the_road_half_width() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut tracks: Vec<TrackModel<f64>> = bundled::NAMES
        .iter()
        .filter_map(|n| load_track(bundled::by_name(n).unwrap()).ok())
        .filter(|t| t.borders.is_some())
        .collect();
    tracks.extend((0..50).map(|_| random_track(&mut rng, 0)));
    for t in &tracks {
        let b = t.borders.as_ref().unwrap();
        let hw = t.lane_width;
        let c = &t.centerline;
        for side in [&b.left, &b.right] {
            for (i, &v) in side.iter().enumerate() {
                let segs = [i.checked_sub(1), (i + 1 < c.len()).then_some(i)];
                for s in segs.into_iter().flatten() {
                    let d = line_distance(v, c[s], c[s + 1]);
                    assert!((d - hw).abs() < 1e-6, "{}: vertex {i} at {d}, want {hw}", t.name);
                }
            }
        }
    }
}

#[test]
fn checkpoints_are_not_collidable() {
    for name in bundled::NAMES {
        let track = load_track::<f64>(bundled::by_name(name).unwrap()).unwrap().with_obstacles(Vec::new());
        for cp in track.checkpoints_right.iter().chain(&track.checkpoints_left) {
            let mid = cp.segment.midpoint();
            let heading = (cp.segment.b - cp.segment.a).angle();
            let rect = Footprint::default().at(mid, heading + std::f64::consts::FRAC_PI_2);
            // The footprint straddles the checkpoint segment but stays inside the road.
            let report = check_collision(&rect, &track, &[]);
            assert!(!report.collided(), "{name}: checkpoint {} {:?}", cp.index, report);
        }
    }
}

fn boundary_samples(r: &Obb<f64>, spacing: f64) -> Vec<V> {
    let c = r.corners();
    let mut out = Vec::new();
    for k in 0..4 {
        let (a, b) = (c[k], c[(k + 1) % 4]);
        let n = (a.distance(b) / spacing).ceil() as usize;
        out.extend((0..n).map(|i| a + (b - a) * (i as f64 / n as f64)));
    }
    out
}

fn oracle_collides(own: &Obb<f64>, track: &TrackModel<f64>, others: &[Obb<f64>]) -> bool {
    let samples = boundary_samples(own, 0.01);
    let boxes: Vec<&Obb<f64>> = track.obstacles.iter().chain(others).collect();
    let box_hit = boxes
        .iter()
        .any(|b| samples.iter().any(|&p| inside(b, p)) || b.corners().iter().any(|&p| inside(own, p)));
    let ring: Vec<(V, V)> = (0..samples.len()).map(|i| (samples[i], samples[(i + 1) % samples.len()])).collect();
    let border_hit = track
        .border_segments
        .iter()
        .any(|s| inside(own, s.a) || inside(own, s.b) || ring.iter().any(|&(p, q)| crosses(p, q, s.a, s.b)));
    box_hit || border_hit
}

fn grown(r: &Obb<f64>, by: f64) -> Obb<f64> {
    Obb::new(r.center, V::new(r.half.x + by, r.half.z + by), r.yaw)
}

#[test]
fn check_collision_matches_one_centimeter_boundary_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut hits = 0;
    for scene in 0..1000 {
        let k = rng.random_range(0..4);
        let track = random_track(&mut rng, k);
        let k = rng.random_range(0..4);
        let bodies = random_bodies(&mut rng, &track, k);
        let c = track.centerline[rng.random_range(0..track.centerline.len())];
        let own = Footprint::default().at(
            c + V::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
            rng.random_range(-3.0..3.0),
        );
        let others: Vec<_> = bodies.iter().map(|b| (b.id, b.rect)).collect();
        let rects: Vec<_> = bodies.iter().map(|b| b.rect).collect();
        let fast = check_collision(&own, &track, &others).collided();
        let slow = oracle_collides(&own, &track, &rects);
        hits += usize::from(fast);
        if fast != slow {
            // Only contacts thinner than the sampling resolution may disagree.
            let outer = check_collision(&grown(&own, 0.01), &track, &others).collided();
            let inner = check_collision(&grown(&own, -0.01), &track, &others).collided();
            assert!(outer && !inner, "scene {scene}: fast {fast} oracle {slow}");
        }
    }
    assert!(hits > 100 && hits < 900, "scene mix too one-sided: {hits} hits");
}

#[test]
fn finish_line_sits_at_the_end_of_every_bundled_track() {
    for name in bundled::NAMES {
        let t = load_track::<f64>(bundled::by_name(name).unwrap()).unwrap();
        let (s, _) = t.project(t.finish.midpoint());
        assert!((s - t.total_length).abs() <= t.lane_width, "{name}: finish at {s} of {}", t.total_length);
    }
}
