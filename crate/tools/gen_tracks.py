#!/usr/bin/env python3
"""Regenerates the bundled track files in crates/core/tracks/."""
import math
import os

OUT = os.path.join(os.path.dirname(__file__), "..", "crates", "core", "tracks")
LANE = 4.0
STEP = 1.0


def build(pieces):
    """pieces: ("s", length) or ("a", radius, degrees; positive = left)."""
    x, z, h = 0.0, 0.0, 0.0
    pts = [(x, z)]
    for p in pieces:
        if p[0] == "s":
            n = max(1, int(round(p[1] / STEP)))
            for _ in range(n):
                x += math.cos(h) * p[1] / n
                z += math.sin(h) * p[1] / n
                pts.append((x, z))
        else:
            r, deg = p[1], p[2]
            total = math.radians(abs(deg))
            n = max(2, int(round(r * total / STEP)))
            sign = 1.0 if deg > 0 else -1.0
            cx = x - sign * r * math.sin(h)
            cz = z + sign * r * math.cos(h)
            for k in range(1, n + 1):
                a = h + sign * total * k / n
                pts.append((cx + sign * r * math.sin(a), cz - sign * r * math.cos(a)))
            h += sign * total
            x, z = pts[-1]
    return pts


def arc_lengths(pts):
    acc = [0.0]
    for a, b in zip(pts, pts[1:]):
        acc.append(acc[-1] + math.dist(a, b))
    return acc


def pose_at(pts, acc, s):
    for i in range(len(pts) - 1):
        if acc[i + 1] >= s:
            t = (s - acc[i]) / (acc[i + 1] - acc[i])
            (ax, az), (bx, bz) = pts[i], pts[i + 1]
            h = math.atan2(bz - az, bx - ax)
            return ax + (bx - ax) * t, az + (bz - az) * t, h
    (ax, az), (bx, bz) = pts[-2], pts[-1]
    return bx, bz, math.atan2(bz - az, bx - ax)


def offset(pose, lateral):
    x, z, h = pose
    return x - math.sin(h) * lateral, z + math.cos(h) * lateral, h


def write(name, header, pts, obstacles, starts, finish_half, borders=True):
    acc = arc_lengths(pts)
    lines = [f"# {header}", f"# centerline length {acc[-1]:.6f} m", "[meta]", f"name={name}", f"lane_width={LANE}"]
    if not borders:
        lines.append("borders=off")
    lines.append("[centerline]")
    lines += [f"{x:.6f} {z:.6f}" for x, z in pts]
    lines.append("[obstacles]")
    lines.append("# cx cz hx hz yaw_rad  (hx along the road, hz across it)")
    for s, lateral, hx, hz in obstacles:
        x, z, h = offset(pose_at(pts, acc, s), lateral)
        lines.append(f"{x:.6f} {z:.6f} {hx} {hz} {h:.6f}")
    lines.append("[start]")
    lines.append("# leader first, 10 m apart in the right lane")
    for s in starts:
        x, z, h = offset(pose_at(pts, acc, s), -LANE / 2)
        lines.append(f"{x:.6f} {z:.6f} {h:.6f}")
    lines.append("[finish]")
    x, z, h = pose_at(pts, acc, acc[-1])
    a = offset((x, z, h), finish_half)
    b = offset((x, z, h), -finish_half)
    lines.append(f"{a[0]:.6f} {a[1]:.6f} {b[0]:.6f} {b[1]:.6f}")
    with open(os.path.join(OUT, f"{name}.track"), "w") as f:
        f.write("\n".join(lines) + "\n")
    print(name, round(acc[-1], 6))


PLATOON_STARTS = [75.0 - 10.0 * k for k in range(8)]

# Training: long straight highway, static obstacles, then progressively tighter turns.
train = build([("s", 400), ("a", 40, 90), ("s", 150), ("a", 30, -90), ("s", 150), ("a", 25, 90),
               ("s", 150), ("a", 20, -90)])
train_len = arc_lengths(train)[-1]
train = build([("s", 400), ("a", 40, 90), ("s", 150), ("a", 30, -90), ("s", 150), ("a", 25, 90),
               ("s", 150), ("a", 20, -90), ("s", 1300 - train_len)])
write("training", "Urban training track (1300 m): straight highway, static obstacles, turns.", train,
      [(200, -2.0, 2.0, 1.0), (330, 2.0, 2.0, 1.0), (575, -2.0, 2.0, 1.0), (900, -2.0, 2.0, 1.0),
       (1200, 2.0, 2.0, 1.0)],
      PLATOON_STARTS, LANE)

write("straight_test", "Straight test track (750 m).", build([("s", 750)]), [], PLATOON_STARTS, LANE)

# Urban test: tight turns, an S-curve, obstacles and a narrow passage between two boxes.
# The passage leaves 1.5 x 1.8 m = 2.7 m between the boxes, centered on the road.
urban_pieces = [("s", 150), ("a", 20, 90), ("s", 80), ("a", 20, -90), ("s", 100), ("a", 15, 90),
                ("a", 15, -90), ("s", 150), ("a", 20, -90)]
urban_len = arc_lengths(build(urban_pieces))[-1]
urban = build(urban_pieces + [("s", 1000 - urban_len)])
box = (2 * LANE - 2.7) / 4.0
write("urban_test", "Urban test track (1000 m): tight turns, obstacles, narrow passage.", urban,
      [(240, -2.0, 2.0, 1.0), (480, LANE - box, 2.0, box), (480, -(LANE - box), 2.0, box), (800, -2.0, 2.0, 1.0)],
      PLATOON_STARTS, LANE)

# Smoke: 200 m straight without borders; the finish line is wide so a drifting vehicle still counts.
write("smoke_straight", "Straight 200 m track without borders or obstacles.", build([("s", 200)]), [],
      [0.0 + 2.0 * 0], 100.0, borders=False)
