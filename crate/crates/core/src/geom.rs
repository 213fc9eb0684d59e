//! Planar geometry in the ground (x, z) plane: vectors, segments, oriented rectangles
//! and the intersection queries the track and sensors are built on.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Vec2<T: Real> {
    pub x: T,
    pub z: T,
}

impl<T: Real> Vec2<T> {
    #[inline]
    pub fn new(x: T, z: T) -> Self {
        Self { x, z }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    /// Unit vector at `angle` radians from +x towards +z.
    #[inline]
    pub fn from_angle(angle: T) -> Self {
        Self::new(angle.cos(), angle.sin())
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.z * o.z
    }

    /// z-component of the 3D cross product (positive when `o` is counter-clockwise of `self`).
    #[inline]
    pub fn cross(self, o: Self) -> T {
        self.x * o.z - self.z * o.x
    }

    #[inline]
    pub fn norm(self) -> T {
        self.x.hypot(self.z)
    }

    #[inline]
    pub fn norm_sq(self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn distance(self, o: Self) -> T {
        (self - o).norm()
    }

    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        if n > T::zero() && n.is_finite() {
            Some(Self::new(self.x / n, self.z / n))
        } else {
            None
        }
    }

    /// Rotates by +90 degrees.
    #[inline]
    pub fn perp(self) -> Self {
        Self::new(-self.z, self.x)
    }

    #[inline]
    pub fn rotated(self, angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x - s * self.z, s * self.x + c * self.z)
    }

    #[inline]
    pub fn angle(self) -> T {
        self.z.atan2(self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.z.is_finite()
    }
}

impl<T: Real> Add for Vec2<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.z + o.z)
    }
}

impl<T: Real> Sub for Vec2<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.z - o.z)
    }
}

impl<T: Real> Mul<T> for Vec2<T> {
    type Output = Self;
    #[inline]
    fn mul(self, k: T) -> Self {
        Self::new(self.x * k, self.z * k)
    }
}

impl<T: Real> Neg for Vec2<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Segment<T: Real> {
    pub a: Vec2<T>,
    pub b: Vec2<T>,
}

impl<T: Real> Segment<T> {
    pub fn new(a: Vec2<T>, b: Vec2<T>) -> Self {
        Self { a, b }
    }

    pub fn length(&self) -> T {
        self.a.distance(self.b)
    }

    pub fn midpoint(&self) -> Vec2<T> {
        (self.a + self.b) * T::lit(0.5)
    }

    /// Parameter in `[0, 1]` of the closest point to `p`.
    pub fn closest_param(&self, p: Vec2<T>) -> T {
        let d = self.b - self.a;
        let len_sq = d.norm_sq();
        if len_sq <= T::zero() {
            return T::zero();
        }
        ((p - self.a).dot(d) / len_sq).max(T::zero()).min(T::one())
    }

    pub fn distance_to_point(&self, p: Vec2<T>) -> T {
        let t = self.closest_param(p);
        (self.a + (self.b - self.a) * t).distance(p)
    }

    pub fn aabb(&self) -> (Vec2<T>, Vec2<T>) {
        (
            Vec2::new(self.a.x.min(self.b.x), self.a.z.min(self.b.z)),
            Vec2::new(self.a.x.max(self.b.x), self.a.z.max(self.b.z)),
        )
    }
}

/// Oriented rectangle: center, half extents along its own (forward, lateral) axes, yaw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Obb<T: Real> {
    pub center: Vec2<T>,
    pub half: Vec2<T>,
    pub yaw: T,
}

impl<T: Real> Obb<T> {
    pub fn new(center: Vec2<T>, half: Vec2<T>, yaw: T) -> Self {
        Self { center, half, yaw }
    }

    /// Forward and lateral unit axes.
    #[inline]
    pub fn axes(&self) -> (Vec2<T>, Vec2<T>) {
        let f = Vec2::from_angle(self.yaw);
        (f, f.perp())
    }

    #[inline]
    pub fn to_local(&self, p: Vec2<T>) -> Vec2<T> {
        let (u, v) = self.axes();
        let d = p - self.center;
        Vec2::new(d.dot(u), d.dot(v))
    }

    pub fn contains(&self, p: Vec2<T>) -> bool {
        let l = self.to_local(p);
        l.x.abs() <= self.half.x && l.z.abs() <= self.half.z
    }

    pub fn corners(&self) -> [Vec2<T>; 4] {
        let (u, v) = self.axes();
        let du = u * self.half.x;
        let dv = v * self.half.z;
        [
            self.center + du + dv,
            self.center - du + dv,
            self.center - du - dv,
            self.center + du - dv,
        ]
    }

    pub fn edges(&self) -> [Segment<T>; 4] {
        let c = self.corners();
        [
            Segment::new(c[0], c[1]),
            Segment::new(c[1], c[2]),
            Segment::new(c[2], c[3]),
            Segment::new(c[3], c[0]),
        ]
    }

    /// Radius of the circumscribed circle.
    pub fn bounding_radius(&self) -> T {
        self.half.norm()
    }

    pub fn aabb(&self) -> (Vec2<T>, Vec2<T>) {
        let (u, v) = self.axes();
        let ex = (u.x * self.half.x).abs() + (v.x * self.half.z).abs();
        let ez = (u.z * self.half.x).abs() + (v.z * self.half.z).abs();
        let e = Vec2::new(ex, ez);
        (self.center - e, self.center + e)
    }
}

/// Distance along a unit-length ray to the first point of `seg`, if hit.
pub fn ray_segment<T: Real>(origin: Vec2<T>, dir: Vec2<T>, seg: &Segment<T>) -> Option<T> {
    let e = seg.b - seg.a;
    let denom = dir.cross(e);
    if denom == T::zero() {
        return None;
    }
    let w = seg.a - origin;
    let t = w.cross(e) / denom;
    let u = w.cross(dir) / denom;
    if t >= T::zero() && u >= T::zero() && u <= T::one() {
        Some(t)
    } else {
        None
    }
}

/// Distance along a unit-length ray to the boundary of `obb`; zero when the origin is inside.
pub fn ray_obb<T: Real>(origin: Vec2<T>, dir: Vec2<T>, obb: &Obb<T>) -> Option<T> {
    let (u, v) = obb.axes();
    let o = obb.to_local(origin);
    let d = Vec2::new(dir.dot(u), dir.dot(v));
    let mut t_min = T::neg_infinity();
    let mut t_max = T::infinity();
    for (oc, dc, h) in [(o.x, d.x, obb.half.x), (o.z, d.z, obb.half.z)] {
        if dc == T::zero() {
            if oc.abs() > h {
                return None;
            }
        } else {
            let t1 = (-h - oc) / dc;
            let t2 = (h - oc) / dc;
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            t_min = t_min.max(lo);
            t_max = t_max.min(hi);
            if t_min > t_max {
                return None;
            }
        }
    }
    if t_max < T::zero() {
        None
    } else {
        Some(t_min.max(T::zero()))
    }
}

fn orient<T: Real>(a: Vec2<T>, b: Vec2<T>, c: Vec2<T>) -> T {
    (b - a).cross(c - a)
}

fn on_segment<T: Real>(a: Vec2<T>, b: Vec2<T>, p: Vec2<T>) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.z >= a.z.min(b.z) && p.z <= a.z.max(b.z)
}

/// Closed-segment intersection test (touching counts).
pub fn segments_intersect<T: Real>(s: &Segment<T>, t: &Segment<T>) -> bool {
    let d1 = orient(t.a, t.b, s.a);
    let d2 = orient(t.a, t.b, s.b);
    let d3 = orient(s.a, s.b, t.a);
    let d4 = orient(s.a, s.b, t.b);
    let zero = T::zero();
    if ((d1 > zero && d2 < zero) || (d1 < zero && d2 > zero))
        && ((d3 > zero && d4 < zero) || (d3 < zero && d4 > zero))
    {
        return true;
    }
    (d1 == zero && on_segment(t.a, t.b, s.a))
        || (d2 == zero && on_segment(t.a, t.b, s.b))
        || (d3 == zero && on_segment(s.a, s.b, t.a))
        || (d4 == zero && on_segment(s.a, s.b, t.b))
}

/// Separating-axis overlap test for two oriented rectangles (touching counts).
pub fn obb_overlap<T: Real>(a: &Obb<T>, b: &Obb<T>) -> bool {
    let reach = a.bounding_radius() + b.bounding_radius();
    if (a.center - b.center).norm_sq() > reach * reach {
        return false;
    }
    let (au, av) = a.axes();
    let (bu, bv) = b.axes();
    let d = b.center - a.center;
    for axis in [au, av, bu, bv] {
        let ra = a.half.x * au.dot(axis).abs() + a.half.z * av.dot(axis).abs();
        let rb = b.half.x * bu.dot(axis).abs() + b.half.z * bv.dot(axis).abs();
        if d.dot(axis).abs() > ra + rb {
            return false;
        }
    }
    true
}

/// Whether a closed segment touches the closed rectangle.
pub fn obb_segment_intersect<T: Real>(obb: &Obb<T>, seg: &Segment<T>) -> bool {
    let p = obb.to_local(seg.a);
    let q = obb.to_local(seg.b);
    let d = q - p;
    // Liang-Barsky clip of the local segment against the axis-aligned box.
    let mut t0 = T::zero();
    let mut t1 = T::one();
    for (pc, dc, h) in [(p.x, d.x, obb.half.x), (p.z, d.z, obb.half.z)] {
        if dc == T::zero() {
            if pc.abs() > h {
                return false;
            }
            continue;
        }
        let a = (-h - pc) / dc;
        let b = (h - pc) / dc;
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        t0 = t0.max(lo);
        t1 = t1.min(hi);
        if t0 > t1 {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    type V = Vec2<f64>;

    #[test]
    fn ray_hits_wall_ahead() {
        let wall = Segment::new(V::new(7.0, -5.0), V::new(7.0, 5.0));
        let t = ray_segment(V::zero(), V::new(1.0, 0.0), &wall).unwrap();
        assert!((t - 7.0).abs() < 1e-12);
        assert!(ray_segment(V::zero(), V::new(-1.0, 0.0), &wall).is_none());
        assert!(ray_segment(V::zero(), V::new(0.0, 1.0), &wall).is_none());
    }

    #[test]
    fn ray_from_inside_box_is_zero() {
        let b = Obb::new(V::new(1.0, 0.0), V::new(2.0, 1.0), 0.3);
        assert_eq!(ray_obb(V::new(1.0, 0.0), V::new(0.0, 1.0), &b), Some(0.0));
    }

    #[test]
    fn ray_box_entry_distance() {
        let b = Obb::new(V::new(10.0, 0.0), V::new(1.0, 1.0), 0.0);
        let t = ray_obb(V::zero(), V::new(1.0, 0.0), &b).unwrap();
        assert!((t - 9.0).abs() < 1e-12);
        assert!(ray_obb(V::zero(), V::new(-1.0, 0.0), &b).is_none());
        assert!(ray_obb(V::new(0.0, 5.0), V::new(1.0, 0.0), &b).is_none());
    }

    #[test]
    fn rotated_boxes_separate_along_box_axis() {
        let a = Obb::new(V::zero(), V::new(2.0, 0.9), 0.0);
        let b = Obb::new(V::new(4.5, 0.0), V::new(2.0, 0.9), 0.0);
        assert!(!obb_overlap(&a, &b));
        let c = Obb::new(V::new(3.9, 0.0), V::new(2.0, 0.9), 0.0);
        assert!(obb_overlap(&a, &c));
        // Diamond close to the corner but outside.
        let d = Obb::new(V::new(3.3, 2.2), V::new(0.5, 0.5), std::f64::consts::FRAC_PI_4);
        assert!(!obb_overlap(&a, &d));
    }

    #[test]
    fn segment_box_cases() {
        let b = Obb::new(V::zero(), V::new(2.0, 1.0), 0.0);
        assert!(obb_segment_intersect(&b, &Segment::new(V::new(-5.0, 0.5), V::new(5.0, 0.5))));
        assert!(!obb_segment_intersect(&b, &Segment::new(V::new(-5.0, 1.5), V::new(5.0, 1.5))));
        // Fully inside.
        assert!(obb_segment_intersect(&b, &Segment::new(V::new(0.1, 0.1), V::new(0.2, 0.2))));
        // Passes by the corner diagonally.
        assert!(!obb_segment_intersect(&b, &Segment::new(V::new(1.5, 2.0), V::new(3.0, 0.5))));
    }

    #[test]
    fn segment_segment_cases() {
        let s = Segment::new(V::new(0.0, 0.0), V::new(2.0, 2.0));
        assert!(segments_intersect(&s, &Segment::new(V::new(0.0, 2.0), V::new(2.0, 0.0))));
        assert!(!segments_intersect(&s, &Segment::new(V::new(3.0, 0.0), V::new(4.0, 1.0))));
        // Touching at an endpoint.
        assert!(segments_intersect(&s, &Segment::new(V::new(2.0, 2.0), V::new(3.0, 0.0))));
    }
}
