//! Drivable world: centerline, two lanes, borders, checkpoints, obstacles and
//! start/finish geometry, plus the collision and progress queries over it.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{obb_overlap, obb_segment_intersect, segments_intersect, Obb, Segment, Vec2};
use crate::real::Real;
use crate::VehicleId;

pub const DEFAULT_LANE_WIDTH: f64 = 4.0;
pub const DEFAULT_CHECKPOINT_SPACING: f64 = 10.0;
pub const VEHICLE_LENGTH: f64 = 4.0;
pub const VEHICLE_WIDTH: f64 = 1.8;

#[derive(Debug, Error, PartialEq)]
pub enum TrackError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid track: {0}")]
    Validation(String),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Lane {
    Right,
    Left,
}

/// Non-physical crossing segment granting a lane-dependent reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Checkpoint<T: Real> {
    pub lane: Lane,
    pub index: usize,
    /// Arc length along the centerline.
    pub arc: T,
    pub segment: Segment<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct StartPose<T: Real> {
    pub position: Vec2<T>,
    pub heading: T,
}

/// Vehicle rectangle dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Footprint<T: Real> {
    pub length: T,
    pub width: T,
}

impl<T: Real> Default for Footprint<T> {
    fn default() -> Self {
        Self {
            length: T::lit(VEHICLE_LENGTH),
            width: T::lit(VEHICLE_WIDTH),
        }
    }
}

impl<T: Real> Footprint<T> {
    pub fn at(&self, position: Vec2<T>, heading: T) -> Obb<T> {
        let half = T::lit(0.5);
        Obb::new(position, Vec2::new(self.length * half, self.width * half), heading)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Borders<T: Real> {
    pub left: Vec<Vec2<T>>,
    pub right: Vec<Vec2<T>>,
}

/// Raw track description as it appears in a track file, before derivation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSpec<T: Real> {
    pub name: String,
    pub lane_width: T,
    pub checkpoint_spacing: T,
    pub borders: bool,
    pub centerline: Vec<Vec2<T>>,
    pub obstacles: Vec<Obb<T>>,
    pub start_poses: Vec<StartPose<T>>,
    pub finish: Segment<T>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CollisionKind {
    Border,
    StaticObstacle,
    Vehicle(VehicleId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CollisionReport {
    Clear,
    Hit(CollisionKind),
}

impl CollisionReport {
    pub fn collided(&self) -> bool {
        matches!(self, CollisionReport::Hit(_))
    }

    pub fn kind(&self) -> Option<&CollisionKind> {
        match self {
            CollisionReport::Clear => None,
            CollisionReport::Hit(k) => Some(k),
        }
    }

    pub fn other_id(&self) -> Option<VehicleId> {
        match self {
            CollisionReport::Hit(CollisionKind::Vehicle(id)) => Some(*id),
            _ => None,
        }
    }
}

/// Uniform grid over segment bounding boxes.
#[derive(Debug, Clone)]
pub struct SegmentGrid<T: Real> {
    cell: T,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl<T: Real> SegmentGrid<T> {
    pub fn new(segments: &[Segment<T>], cell: T) -> Self {
        let mut grid = Self {
            cell,
            cells: HashMap::new(),
        };
        for (i, s) in segments.iter().enumerate() {
            let (lo, hi) = s.aabb();
            let (x0, z0) = grid.cell_of(lo);
            let (x1, z1) = grid.cell_of(hi);
            for cx in x0..=x1 {
                for cz in z0..=z1 {
                    grid.cells.entry((cx, cz)).or_default().push(i);
                }
            }
        }
        grid
    }

    fn cell_of(&self, p: Vec2<T>) -> (i64, i64) {
        let cx = (p.x / self.cell).floor().to_i64().unwrap_or(0);
        let cz = (p.z / self.cell).floor().to_i64().unwrap_or(0);
        (cx, cz)
    }

    /// Indices of segments whose cells overlap the box, ascending and unique.
    pub fn query(&self, lo: Vec2<T>, hi: Vec2<T>, out: &mut Vec<usize>) {
        out.clear();
        let (x0, z0) = self.cell_of(lo);
        let (x1, z1) = self.cell_of(hi);
        for cx in x0..=x1 {
            for cz in z0..=z1 {
                if let Some(v) = self.cells.get(&(cx, cz)) {
                    out.extend_from_slice(v);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
    }
}

#[derive(Debug, Clone)]
pub struct TrackModel<T: Real> {
    pub name: String,
    pub centerline: Vec<Vec2<T>>,
    /// Arc length at each centerline vertex.
    pub cumulative: Vec<T>,
    pub lane_width: T,
    pub borders: Option<Borders<T>>,
    pub border_segments: Vec<Segment<T>>,
    border_grid: SegmentGrid<T>,
    pub checkpoints_right: Vec<Checkpoint<T>>,
    pub checkpoints_left: Vec<Checkpoint<T>>,
    pub obstacles: Vec<Obb<T>>,
    pub start_poses: Vec<StartPose<T>>,
    pub finish: Segment<T>,
    pub total_length: T,
    pub checkpoint_spacing: T,
}

/// Offsets the centerline to both sides by `road_halfwidth` using mitered joins.
pub fn build_borders<T: Real>(
    centerline: &[Vec2<T>],
    lane_width: T,
    road_halfwidth: T,
) -> Result<Borders<T>, TrackError> {
    if centerline.len() < 2 {
        return Err(TrackError::Degenerate(
            "centerline needs at least two points".into(),
        ));
    }
    if road_halfwidth < lane_width {
        return Err(TrackError::Validation(format!(
            "road half-width {road_halfwidth} is narrower than lane width {lane_width}"
        )));
    }
    let mut normals = Vec::with_capacity(centerline.len() - 1);
    for (i, w) in centerline.windows(2).enumerate() {
        let t = (w[1] - w[0]).normalized().ok_or_else(|| {
            TrackError::Degenerate(format!("zero-length centerline segment {i}"))
        })?;
        normals.push(t.perp());
    }
    let n = centerline.len();
    let mut left = Vec::with_capacity(n);
    let mut right = Vec::with_capacity(n);
    for (i, &p) in centerline.iter().enumerate() {
        let offset = if i == 0 {
            normals[0] * road_halfwidth
        } else if i == n - 1 {
            normals[n - 2] * road_halfwidth
        } else {
            let n0 = normals[i - 1];
            let bisector = (n0 + normals[i]).normalized().ok_or_else(|| {
                TrackError::Degenerate(format!("centerline reverses at vertex {i}"))
            })?;
            let cos_half = bisector.dot(n0);
            if cos_half < T::lit(0.25) {
                return Err(TrackError::Degenerate(format!(
                    "corner at vertex {i} is too sharp to offset"
                )));
            }
            bisector * (road_halfwidth / cos_half)
        };
        left.push(p + offset);
        right.push(p - offset);
    }
    Ok(Borders { left, right })
}

fn cumulative_lengths<T: Real>(centerline: &[Vec2<T>]) -> Vec<T> {
    let mut acc = T::zero();
    let mut out = Vec::with_capacity(centerline.len());
    out.push(acc);
    for w in centerline.windows(2) {
        acc = acc + w[0].distance(w[1]);
        out.push(acc);
    }
    out
}

/// Point and unit tangent at arc length `s` (clamped to the polyline).
fn point_at<T: Real>(centerline: &[Vec2<T>], cumulative: &[T], s: T) -> (Vec2<T>, Vec2<T>) {
    let last = cumulative.len() - 1;
    let s = s.max(T::zero()).min(cumulative[last]);
    let seg = match cumulative.iter().position(|&c| c > s) {
        Some(0) => 0,
        Some(k) => k - 1,
        None => last - 1,
    };
    let a = centerline[seg];
    let b = centerline[seg + 1];
    let len = cumulative[seg + 1] - cumulative[seg];
    let t = (b - a) * (T::one() / len);
    (a + t * (s - cumulative[seg]), t)
}

fn lane_checkpoints<T: Real>(
    centerline: &[Vec2<T>],
    cumulative: &[T],
    lane_width: T,
    spacing: T,
) -> Result<(Vec<Checkpoint<T>>, Vec<Checkpoint<T>>), TrackError> {
    if !(spacing > T::zero()) {
        return Err(TrackError::Validation("checkpoint spacing must be positive".into()));
    }
    let total = *cumulative.last().expect("non-empty centerline");
    if spacing > total {
        return Err(TrackError::Validation(format!(
            "checkpoint spacing {spacing} exceeds track length {total}"
        )));
    }
    let count = (total / spacing + T::lit(1e-9)).floor().to_usize().unwrap_or(0);
    let mut right = Vec::with_capacity(count);
    let mut left = Vec::with_capacity(count);
    for k in 0..count {
        let arc = (T::from_usize_lossy(k) + T::lit(0.5)) * spacing;
        let (p, t) = point_at(centerline, cumulative, arc);
        let n = t.perp();
        right.push(Checkpoint {
            lane: Lane::Right,
            index: k,
            arc,
            segment: Segment::new(p, p - n * lane_width),
        });
        left.push(Checkpoint {
            lane: Lane::Left,
            index: k,
            arc,
            segment: Segment::new(p, p + n * lane_width),
        });
    }
    Ok((right, left))
}

/// Checkpoint sequences (right, left) at `spacing` meters, centered in each lane.
pub fn place_checkpoints<T: Real>(
    track: &TrackModel<T>,
    spacing: T,
) -> Result<(Vec<Checkpoint<T>>, Vec<Checkpoint<T>>), TrackError> {
    lane_checkpoints(&track.centerline, &track.cumulative, track.lane_width, spacing)
}

impl<T: Real> TrackSpec<T> {
    pub fn build(self) -> Result<TrackModel<T>, TrackError> {
        let half_width = T::lit(VEHICLE_WIDTH * 0.5);
        if !(self.lane_width > half_width + half_width) {
            return Err(TrackError::Validation(format!(
                "lane width {} must exceed the vehicle width {}",
                self.lane_width,
                half_width + half_width
            )));
        }
        if self.centerline.len() < 2 {
            return Err(TrackError::Degenerate(
                "centerline needs at least two points".into(),
            ));
        }
        if let Some(i) = self.centerline.windows(2).position(|w| w[0] == w[1]) {
            return Err(TrackError::Degenerate(format!(
                "centerline points {i} and {} coincide",
                i + 1
            )));
        }
        if self.start_poses.is_empty() {
            return Err(TrackError::Validation("no start poses".into()));
        }
        let cumulative = cumulative_lengths(&self.centerline);
        let total_length = *cumulative.last().expect("non-empty");
        let borders = if self.borders {
            Some(build_borders(&self.centerline, self.lane_width, self.lane_width)?)
        } else {
            None
        };
        let mut border_segments = Vec::new();
        if let Some(b) = &borders {
            for side in [&b.left, &b.right] {
                border_segments.extend(side.windows(2).map(|w| Segment::new(w[0], w[1])));
            }
        }
        let border_grid = SegmentGrid::new(&border_segments, T::lit(8.0));
        let (checkpoints_right, checkpoints_left) = lane_checkpoints(
            &self.centerline,
            &cumulative,
            self.lane_width,
            self.checkpoint_spacing,
        )?;
        Ok(TrackModel {
            name: self.name,
            centerline: self.centerline,
            cumulative,
            lane_width: self.lane_width,
            borders,
            border_segments,
            border_grid,
            checkpoints_right,
            checkpoints_left,
            obstacles: self.obstacles,
            start_poses: self.start_poses,
            finish: self.finish,
            total_length,
            checkpoint_spacing: self.checkpoint_spacing,
        })
    }
}

impl<T: Real> TrackModel<T> {
    /// The same road with a different obstacle layout.
    pub fn with_obstacles(&self, obstacles: Vec<Obb<T>>) -> Self {
        let mut t = self.clone();
        t.obstacles = obstacles;
        t
    }

    pub fn checkpoints(&self, lane: Lane) -> &[Checkpoint<T>] {
        match lane {
            Lane::Right => &self.checkpoints_right,
            Lane::Left => &self.checkpoints_left,
        }
    }

    /// Border segment indices that may intersect the given box.
    pub fn border_candidates(&self, lo: Vec2<T>, hi: Vec2<T>, out: &mut Vec<usize>) {
        self.border_grid.query(lo, hi, out);
    }

    /// Arc length and signed lateral offset (left positive) of the closest centerline point.
    pub fn project(&self, p: Vec2<T>) -> (T, T) {
        let (s, lat, _) = self.project_window(p, 0, self.centerline.len() - 1);
        (s, lat)
    }

    /// Like [`project`](Self::project) but only over segments `hint - window ..= hint + window`;
    /// also returns the index of the closest segment, to be used as the next hint.
    pub fn project_near(&self, p: Vec2<T>, hint: usize, window: usize) -> (T, T, usize) {
        let n = self.centerline.len() - 1;
        let lo = hint.saturating_sub(window).min(n - 1);
        let hi = (hint + window + 1).min(n);
        self.project_window(p, lo, hi)
    }

    fn project_window(&self, p: Vec2<T>, lo: usize, hi: usize) -> (T, T, usize) {
        let mut best = (T::infinity(), T::zero(), T::zero());
        let mut best_seg = lo;
        for (i, w) in self.centerline[lo..=hi].windows(2).enumerate() {
            let i = i + lo;
            let seg = Segment::new(w[0], w[1]);
            let t = seg.closest_param(p);
            let q = w[0] + (w[1] - w[0]) * t;
            let d = q.distance(p);
            if d < best.0 {
                let len = self.cumulative[i + 1] - self.cumulative[i];
                let side = (w[1] - w[0]).cross(p - w[0]);
                let lateral = if side < T::zero() { -d } else { d };
                best = (d, self.cumulative[i] + len * t, lateral);
                best_seg = i;
            }
        }
        (best.1, best.2, best_seg)
    }

    /// Point and unit tangent at arc length `s`.
    pub fn point_at(&self, s: T) -> (Vec2<T>, Vec2<T>) {
        point_at(&self.centerline, &self.cumulative, s)
    }
}

/// Arc length of the closest centerline point.
pub fn arc_progress<T: Real>(position: Vec2<T>, track: &TrackModel<T>) -> T {
    track.project(position).0
}

/// Collision test with priority vehicle > static obstacle > border.
pub fn check_collision<T: Real>(
    footprint: &Obb<T>,
    track: &TrackModel<T>,
    other_vehicles: &[(VehicleId, Obb<T>)],
) -> CollisionReport {
    if let Some((id, _)) = other_vehicles.iter().find(|(_, o)| obb_overlap(footprint, o)) {
        return CollisionReport::Hit(CollisionKind::Vehicle(*id));
    }
    if track.obstacles.iter().any(|o| obb_overlap(footprint, o)) {
        return CollisionReport::Hit(CollisionKind::StaticObstacle);
    }
    let (lo, hi) = footprint.aabb();
    let mut candidates = Vec::new();
    track.border_candidates(lo, hi, &mut candidates);
    if candidates
        .iter()
        .any(|&i| obb_segment_intersect(footprint, &track.border_segments[i]))
    {
        return CollisionReport::Hit(CollisionKind::Border);
    }
    CollisionReport::Clear
}

/// Returns the crossing iff the movement crosses checkpoint `next_index` of this lane.
pub fn checkpoint_crossed<T: Real>(
    prev_position: Vec2<T>,
    position: Vec2<T>,
    lane_checkpoints: &[Checkpoint<T>],
    next_index: usize,
) -> Option<(Lane, usize)> {
    if prev_position == position {
        return None;
    }
    let cp = lane_checkpoints.get(next_index)?;
    let movement = Segment::new(prev_position, position);
    segments_intersect(&movement, &cp.segment).then_some((cp.lane, next_index))
}

pub fn finish_crossed<T: Real>(prev_position: Vec2<T>, position: Vec2<T>, track: &TrackModel<T>) -> bool {
    prev_position != position && segments_intersect(&Segment::new(prev_position, position), &track.finish)
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Meta,
    Centerline,
    Obstacles,
    Start,
    Finish,
}

fn parse_numbers<T: Real>(line: &str, lineno: usize, expected: usize) -> Result<Vec<T>, TrackError> {
    let values: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
    let values = values.map_err(|e| TrackError::Parse {
        line: lineno,
        message: format!("bad number: {e}"),
    })?;
    if values.len() != expected {
        return Err(TrackError::Parse {
            line: lineno,
            message: format!("expected {expected} numbers, found {}", values.len()),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(TrackError::Parse {
            line: lineno,
            message: "non-finite number".into(),
        });
    }
    Ok(values.into_iter().map(T::lit).collect())
}

/// Parses a track file (sections `[meta]`, `[centerline]`, `[obstacles]`, `[start]`, `[finish]`).
pub fn parse_track<T: Real>(text: &str) -> Result<TrackSpec<T>, TrackError> {
    let mut section = Section::None;
    let mut name = None;
    let mut lane_width = None;
    let mut spacing = T::lit(DEFAULT_CHECKPOINT_SPACING);
    let mut borders = true;
    let mut centerline = Vec::new();
    let mut obstacles = Vec::new();
    let mut start_poses = Vec::new();
    let mut finish = None;

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            section = match line {
                "[meta]" => Section::Meta,
                "[centerline]" => Section::Centerline,
                "[obstacles]" => Section::Obstacles,
                "[start]" => Section::Start,
                "[finish]" => Section::Finish,
                other => {
                    return Err(TrackError::Parse {
                        line: lineno,
                        message: format!("unknown section {other}"),
                    })
                }
            };
            continue;
        }
        match section {
            Section::None => {
                return Err(TrackError::Parse {
                    line: lineno,
                    message: "content before the first section".into(),
                })
            }
            Section::Meta => {
                for item in line.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    let (key, value) = item.split_once('=').ok_or_else(|| TrackError::Parse {
                        line: lineno,
                        message: format!("expected key=value, found `{item}`"),
                    })?;
                    let (key, value) = (key.trim(), value.trim());
                    let number = |v: &str| {
                        v.parse::<f64>().map(T::lit).map_err(|e| TrackError::Parse {
                            line: lineno,
                            message: format!("bad value for {key}: {e}"),
                        })
                    };
                    match key {
                        "name" => name = Some(value.to_string()),
                        "lane_width" => lane_width = Some(number(value)?),
                        "checkpoint_spacing" => spacing = number(value)?,
                        "borders" => {
                            borders = match value {
                                "on" | "true" => true,
                                "off" | "false" => false,
                                _ => {
                                    return Err(TrackError::Parse {
                                        line: lineno,
                                        message: format!("borders must be on or off, found `{value}`"),
                                    })
                                }
                            }
                        }
                        _ => {
                            return Err(TrackError::Parse {
                                line: lineno,
                                message: format!("unknown meta key `{key}`"),
                            })
                        }
                    }
                }
            }
            Section::Centerline => {
                let v = parse_numbers::<T>(line, lineno, 2)?;
                centerline.push(Vec2::new(v[0], v[1]));
            }
            Section::Obstacles => {
                let v = parse_numbers::<T>(line, lineno, 5)?;
                if !(v[2] > T::zero() && v[3] > T::zero()) {
                    return Err(TrackError::Parse {
                        line: lineno,
                        message: "obstacle half extents must be positive".into(),
                    });
                }
                obstacles.push(Obb::new(Vec2::new(v[0], v[1]), Vec2::new(v[2], v[3]), v[4]));
            }
            Section::Start => {
                let v = parse_numbers::<T>(line, lineno, 3)?;
                start_poses.push(StartPose {
                    position: Vec2::new(v[0], v[1]),
                    heading: v[2],
                });
            }
            Section::Finish => {
                if finish.is_some() {
                    return Err(TrackError::Parse {
                        line: lineno,
                        message: "finish given twice".into(),
                    });
                }
                let v = parse_numbers::<T>(line, lineno, 4)?;
                finish = Some(Segment::new(Vec2::new(v[0], v[1]), Vec2::new(v[2], v[3])));
            }
        }
    }

    let lane_width = lane_width.ok_or_else(|| TrackError::Validation("missing lane_width".into()))?;
    let finish = finish.ok_or_else(|| TrackError::Validation("missing [finish]".into()))?;
    Ok(TrackSpec {
        name: name.unwrap_or_else(|| "unnamed".into()),
        lane_width,
        checkpoint_spacing: spacing,
        borders,
        centerline,
        obstacles,
        start_poses,
        finish,
    })
}

pub fn load_track<T: Real>(text: &str) -> Result<TrackModel<T>, TrackError> {
    parse_track(text)?.build()
}

/// Track files shipped with the crate.
pub mod bundled {
    pub const TRAINING: &str = include_str!("../tracks/training.track");
    pub const STRAIGHT_TEST: &str = include_str!("../tracks/straight_test.track");
    pub const URBAN_TEST: &str = include_str!("../tracks/urban_test.track");
    pub const SMOKE_STRAIGHT: &str = include_str!("../tracks/smoke_straight.track");

    /// Looks up a bundled track by its short name.
    pub fn by_name(name: &str) -> Option<&'static str> {
        match name {
            "training" => Some(TRAINING),
            "straight_test" => Some(STRAIGHT_TEST),
            "urban_test" => Some(URBAN_TEST),
            "smoke_straight" => Some(SMOKE_STRAIGHT),
            _ => None,
        }
    }

    pub const NAMES: [&str; 4] = ["training", "straight_test", "urban_test", "smoke_straight"];
}

#[cfg(test)]
mod tests {
    use super::*;

    type V = Vec2<f64>;

    pub(crate) fn straight(length: f64, borders: bool) -> TrackModel<f64> {
        TrackSpec {
            name: "straight".into(),
            lane_width: 4.0,
            checkpoint_spacing: 10.0,
            borders,
            centerline: vec![V::new(0.0, 0.0), V::new(length, 0.0)],
            obstacles: vec![],
            start_poses: vec![StartPose {
                position: V::new(0.0, -2.0),
                heading: 0.0,
            }],
            finish: Segment::new(V::new(length, -4.0), V::new(length, 4.0)),
        }
        .build()
        .unwrap()
    }

    #[test]
    fn straight_track_length() {
        let t = straight(200.0, true);
        assert!((t.total_length - 200.0).abs() < 1e-6);
    }

    #[test]
    fn missing_lane_width_is_validation_error() {
        let text = "[meta]\nname=x\n[centerline]\n0 0\n10 0\n[start]\n0 0 0\n[finish]\n10 -4 10 4\n";
        assert_eq!(
            load_track::<f64>(text).unwrap_err(),
            TrackError::Validation("missing lane_width".into())
        );
    }

    #[test]
    fn parse_error_reports_line() {
        let text = "[meta]\nlane_width=4\n[centerline]\n0 0\n10 zz\n";
        match load_track::<f64>(text).unwrap_err() {
            TrackError::Parse { line, .. } => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn narrow_lane_rejected() {
        let text = "[meta]\nlane_width=1.5\n[centerline]\n0 0\n10 0\n[start]\n0 0 0\n[finish]\n10 -4 10 4\n";
        assert!(matches!(load_track::<f64>(text), Err(TrackError::Validation(_))));
    }

    #[test]
    fn meta_accepts_comma_list() {
        let text = "[meta] \nname=a, lane_width=4, borders=off\n[centerline]\n0 0\n10 0\n[start]\n0 -2 0\n[finish]\n10 -4 10 4\n";
        let t = load_track::<f64>(text).unwrap();
        assert_eq!(t.name, "a");
        assert!(t.borders.is_none());
    }

    #[test]
    fn straight_borders_at_plus_minus_halfwidth() {
        let b = build_borders(&[V::new(0.0, 0.0), V::new(50.0, 0.0), V::new(100.0, 0.0)], 4.0, 4.0)
            .unwrap();
        assert!(b.left.iter().all(|p| (p.z - 4.0).abs() < 1e-12));
        assert!(b.right.iter().all(|p| (p.z + 4.0).abs() < 1e-12));
    }

    #[test]
    fn quarter_arc_border_radii_differ_by_road_width() {
        // Analytic offset curves of a circle of radius r are circles of radius r +- h.
        let r = 30.0;
        let h = 4.0;
        let pts: Vec<V> = (0..=180)
            .map(|k| {
                let a = std::f64::consts::FRAC_PI_2 * k as f64 / 180.0;
                V::new(r * a.cos(), r * a.sin())
            })
            .collect();
        let b = build_borders(&pts, 4.0, h).unwrap();
        for i in 1..pts.len() - 1 {
            let outer = b.right[i].norm();
            let inner = b.left[i].norm();
            assert!(((outer - inner) - 2.0 * h).abs() < 1e-3, "{outer} {inner}");
            assert!((outer - (r + h)).abs() < 2e-3);
        }
    }

    #[test]
    fn single_point_centerline_is_error() {
        assert!(matches!(
            build_borders(&[V::new(1.0, 1.0)], 4.0, 4.0),
            Err(TrackError::Degenerate(_))
        ));
        assert!(matches!(
            build_borders(&[V::new(0.0, 0.0), V::new(1.0, 0.0)], 4.0, 3.0),
            Err(TrackError::Validation(_))
        ));
    }

    #[test]
    fn checkpoints_every_ten_meters() {
        let t = straight(200.0, true);
        let (right, left) = place_checkpoints(&t, 10.0).unwrap();
        assert_eq!(right.len(), 20);
        assert_eq!(left.len(), 20);
        for (k, cp) in right.iter().enumerate() {
            assert_eq!(cp.index, k);
            let m = cp.segment.midpoint();
            assert!((m.z + 2.0).abs() < 1e-12);
            assert!((cp.segment.length() - 4.0).abs() < 1e-12);
        }
        assert!(right.windows(2).all(|w| w[0].arc < w[1].arc));
        assert!(left.iter().all(|cp| (cp.segment.midpoint().z - 2.0).abs() < 1e-12));
        assert!(place_checkpoints(&t, 250.0).is_err());
        assert!(place_checkpoints(&t, 0.0).is_err());
    }

    #[test]
    fn collision_cases() {
        let t = straight(200.0, true);
        let fp = Footprint::<f64>::default();
        assert!(!check_collision(&fp.at(V::new(50.0, -2.0), 0.0), &t, &[]).collided());
        let beyond = check_collision(&fp.at(V::new(50.0, -4.1), 0.0), &t, &[]);
        assert_eq!(beyond, CollisionReport::Hit(CollisionKind::Border));
        let other = fp.at(V::new(50.0, -2.0), 0.0);
        let both = check_collision(&other, &t, &[(VehicleId(3), other)]);
        assert_eq!(both.kind(), Some(&CollisionKind::Vehicle(VehicleId(3))));
        assert_eq!(both.other_id(), Some(VehicleId(3)));
    }

    #[test]
    fn collision_priority_vehicle_over_obstacle_over_border() {
        let mut t = straight(200.0, true);
        let fp = Footprint::<f64>::default();
        let pose = fp.at(V::new(50.0, -3.5), 0.0);
        t.obstacles.push(Obb::new(V::new(51.0, -3.0), V::new(1.0, 1.0), 0.0));
        assert_eq!(check_collision(&pose, &t, &[]).kind(), Some(&CollisionKind::StaticObstacle));
        let other = fp.at(V::new(50.0, -2.0), 0.0);
        assert_eq!(check_collision(&pose, &t, &[(VehicleId(1), other)]).other_id(), Some(VehicleId(1)));
    }

    #[test]
    fn checkpoint_gating() {
        let t = straight(200.0, true);
        let cps = t.checkpoints(Lane::Right);
        // Checkpoint 3 sits at arc 35.
        let prev = V::new(34.0, -2.0);
        let pos = V::new(36.0, -2.0);
        assert_eq!(checkpoint_crossed(prev, pos, cps, 3), Some((Lane::Right, 3)));
        assert_eq!(checkpoint_crossed(prev, pos, cps, 4), None);
        assert_eq!(checkpoint_crossed(pos, pos, cps, 3), None);
        assert_eq!(checkpoint_crossed(prev, pos, cps, 99), None);
        // Right-lane movement never touches the left-lane checkpoint.
        assert_eq!(checkpoint_crossed(prev, pos, t.checkpoints(Lane::Left), 3), None);
    }

    #[test]
    fn progress_on_straight() {
        let t = straight(200.0, true);
        assert!((arc_progress(V::new(100.0, -2.0), &t) - 100.0).abs() < 1e-6);
        assert!(arc_progress(t.start_poses[0].position, &t).abs() < t.lane_width);
        assert!((arc_progress(t.finish.midpoint(), &t) - 200.0).abs() < t.lane_width);
        let (_, lateral) = t.project(V::new(10.0, -2.0));
        assert!((lateral + 2.0).abs() < 1e-12);
    }
}
