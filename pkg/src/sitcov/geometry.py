"""Small 2D geometry helpers shared by the world model, sensors and monitors.

Coordinates are metres, x east-positive, y north-positive.  Headings are
radians, 0 = east, counter-clockwise positive, normalised to [0, 2*pi).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi


def norm_heading(h: float) -> float:
    h = math.fmod(h, TWO_PI)
    if h < 0.0:
        h += TWO_PI
    return h


def angle_diff(a: float, b: float) -> float:
    """Signed smallest rotation from b to a, in (-pi, pi]."""
    d = math.fmod(a - b, TWO_PI)
    if d > math.pi:
        d -= TWO_PI
    elif d <= -math.pi:
        d += TWO_PI
    return d


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle, edges inclusive."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def contains(self, x: float, y: float) -> bool:
        return self.xmin <= x <= self.xmax and self.ymin <= y <= self.ymax

    def contains_rect(self, other: "Rect") -> bool:
        return (
            self.xmin <= other.xmin
            and self.ymin <= other.ymin
            and self.xmax >= other.xmax
            and self.ymax >= other.ymax
        )

    def overlaps(self, other: "Rect") -> bool:
        """True when the interiors intersect (shared edges do not count)."""
        return (
            self.xmin < other.xmax
            and other.xmin < self.xmax
            and self.ymin < other.ymax
            and other.ymin < self.ymax
        )

    def expanded(self, margin: float) -> "Rect":
        return Rect(self.xmin - margin, self.ymin - margin, self.xmax + margin, self.ymax + margin)

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)


@dataclass(frozen=True)
class OrientedBox:
    """Rectangle with centre, heading along its length, and full extents."""

    cx: float
    cy: float
    heading: float
    length: float
    width: float

    def corners(self):
        c = math.cos(self.heading)
        s = math.sin(self.heading)
        hl = 0.5 * self.length
        hw = 0.5 * self.width
        return [
            (self.cx + c * hl - s * hw, self.cy + s * hl + c * hw),
            (self.cx + c * hl + s * hw, self.cy + s * hl - c * hw),
            (self.cx - c * hl + s * hw, self.cy - s * hl - c * hw),
            (self.cx - c * hl - s * hw, self.cy - s * hl + c * hw),
        ]

    def aabb(self) -> Rect:
        xs = [p[0] for p in self.corners()]
        ys = [p[1] for p in self.corners()]
        return Rect(min(xs), min(ys), max(xs), max(ys))


def _project(corners, ax: float, ay: float):
    dots = [ax * x + ay * y for x, y in corners]
    return min(dots), max(dots)


def boxes_intersect(a: OrientedBox, b: OrientedBox) -> bool:
    """Separating-axis test for two oriented rectangles (touching counts)."""
    ca = a.corners()
    cb = b.corners()
    for heading in (a.heading, b.heading):
        c = math.cos(heading)
        s = math.sin(heading)
        for ax, ay in ((c, s), (-s, c)):
            lo1, hi1 = _project(ca, ax, ay)
            lo2, hi2 = _project(cb, ax, ay)
            if hi1 < lo2 or hi2 < lo1:
                return False
    return True


def box_intersects_rect(a: OrientedBox, r: Rect) -> bool:
    return boxes_intersect(
        a,
        OrientedBox(0.5 * (r.xmin + r.xmax), 0.5 * (r.ymin + r.ymax), 0.0, r.width, r.height),
    )


def point_box_distance(x: float, y: float, b: OrientedBox) -> float:
    """Euclidean distance from a point to an oriented rectangle (0 inside)."""
    c = math.cos(b.heading)
    s = math.sin(b.heading)
    dx = x - b.cx
    dy = y - b.cy
    # point in box frame
    u = c * dx + s * dy
    v = -s * dx + c * dy
    du = max(abs(u) - 0.5 * b.length, 0.0)
    dv = max(abs(v) - 0.5 * b.width, 0.0)
    return math.hypot(du, dv)


def segment_blocked(x0: float, y0: float, x1: float, y1: float, rect: Rect) -> bool:
    """True when the open segment from (x0,y0) to (x1,y1) passes through rect.

    Standard slab clipping; touching the boundary counts as blocked.
    """
    dx = x1 - x0
    dy = y1 - y0
    tmin, tmax = 0.0, 1.0
    for d, lo, hi, o in ((dx, rect.xmin, rect.xmax, x0), (dy, rect.ymin, rect.ymax, y0)):
        if abs(d) < 1e-12:
            if o < lo or o > hi:
                return False
            continue
        t1 = (lo - o) / d
        t2 = (hi - o) / d
        if t1 > t2:
            t1, t2 = t2, t1
        tmin = max(tmin, t1)
        tmax = min(tmax, t2)
        if tmin > tmax:
            return False
    return True
