"""Generate the bundled track JSON files (run once; outputs are committed).

Tracks are laid out turtle-style from straights and arcs. Straights dominate
the lap so the oracle's steering-label mode sits in the zero bucket, and
corners mix left/right turns and radii.
"""

import json
import math
import pathlib

OUT = pathlib.Path(__file__).resolve().parents[1] / "src" / "ignition" / "tracks"
STEP = 8.0  # control-point spacing, meters


class Turtle:
    def __init__(self, x=0.0, y=0.0, h=0.0):
        self.x, self.y, self.h = x, y, h
        self.pts = [(x, y)]

    def straight(self, length):
        n = max(1, int(round(length / STEP)))
        for _ in range(n):
            self.x += (length / n) * math.cos(self.h)
            self.y += (length / n) * math.sin(self.h)
            self.pts.append((self.x, self.y))

    def arc(self, radius, angle_deg):
        """Positive angle turns left."""
        ang = math.radians(angle_deg)
        n = max(2, int(round(abs(radius * ang) / STEP)))
        sign = 1.0 if ang > 0 else -1.0
        cx = self.x - sign * radius * math.sin(self.h)
        cy = self.y + sign * radius * math.cos(self.h)
        a0 = math.atan2(self.y - cy, self.x - cx)
        for i in range(1, n + 1):
            a = a0 + ang * i / n
            self.x = cx + radius * math.cos(a)
            self.y = cy + radius * math.sin(a)
            self.pts.append((self.x, self.y))
        self.h += ang

    def chicane(self, radius, angle_deg, first="left"):
        """S-pair and its inverse: net zero turn and zero lateral offset."""
        s = 1.0 if first == "left" else -1.0
        self.arc(radius, s * angle_deg)
        self.arc(radius, -s * angle_deg)
        self.arc(radius, -s * angle_deg)
        self.arc(radius, s * angle_deg)

    def displacement_of(self, arcs):
        """World displacement and final heading if `arcs` were applied now."""
        probe = Turtle(self.x, self.y, self.h)
        for r, a in arcs:
            probe.arc(r, a)
        return probe.x - self.x, probe.y - self.y, probe.h

    def straight_to_setup(self, target, arcs):
        """Drive straight so that applying `arcs` afterwards lands on target."""
        dx, dy, _ = self.displacement_of(arcs)
        need_x, need_y = target[0] - dx, target[1] - dy
        dist = (need_x - self.x) * math.cos(self.h) + (need_y - self.y) * math.sin(self.h)
        off = abs((need_x - self.x) * -math.sin(self.h) + (need_y - self.y) * math.cos(self.h))
        assert off < 0.5, f"setup point is {off:.2f} m off the current heading line"
        assert dist > 0, "setup point is behind the turtle"
        self.straight(dist)
        for r, a in arcs:
            self.arc(r, a)


def finish(t: Turtle, name, width=10.0):
    # the control polygon closes last -> first; require smooth alignment
    gap = math.hypot(t.pts[0][0] - t.x, t.pts[0][1] - t.y)
    if gap < STEP / 2:
        t.pts = t.pts[:-1]
        gap = math.hypot(t.pts[0][0] - t.pts[-1][0], t.pts[0][1] - t.pts[-1][1])
    bearing = math.atan2(t.pts[0][1] - t.pts[-1][1], t.pts[0][0] - t.pts[-1][0])
    align = abs(math.remainder(bearing - t.h, 2 * math.pi))
    print(f"{name}: {len(t.pts)} pts, closing edge {gap:.2f} m, heading misalign {math.degrees(align):.3f} deg")
    # chord of the final arc may deviate from the tangent by ~STEP/(2*R)
    assert align < 0.12, "track does not close smoothly"
    return {"name": name, "width_m": width,
            "control_points": [[round(x, 3), round(y, 3)] for x, y in t.pts]}


def oval():
    """Two 300 m straights joined by compound-radius 180-degree turns."""
    t = Turtle()
    t.straight(300.0)
    t.arc(70.0, 90)
    t.arc(50.0, 90)
    t.straight_to_setup((0.0, 0.0), [(55.0, 90), (65.0, 90)])
    return finish(t, "oval")


def road_course():
    """Straight-dominated course with chicanes and mixed-radius corners."""
    t = Turtle()
    t.straight(260.0)
    t.chicane(45.0, 55, first="left")
    t.straight(260.0)
    t.arc(85.0, 90)
    t.arc(35.0, 90)
    t.straight(200.0)
    t.chicane(30.0, 65, first="right")
    t.straight_to_setup((0.0, 0.0), [(65.0, 90), (55.0, 90)])
    return finish(t, "road_course")


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for spec in (oval(), road_course()):
        path = OUT / f"{spec['name']}.json"
        path.write_text(json.dumps(spec, indent=1), encoding="utf-8")
        print("wrote", path)


if __name__ == "__main__":
    main()
