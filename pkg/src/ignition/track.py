"""Closed racing tracks: smoothed, arc-length-parameterized centerlines.

A track is built from a closed control polygon. The polygon is densely
resampled, smoothed with a periodic Gaussian (so curvature is well defined
everywhere), then resampled again at uniform arc-length spacing ``ds``.
The racing line the oracle follows is the centerline itself.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy.ndimage import gaussian_filter1d

DEFAULT_DS = 0.5

# Smoothing scale (meters) is tied to control-point spacing but kept within
# fixed bounds so sharp polygons get rounded and dense polygons stay put.
_SMOOTH_SIGMA_MIN_M = 2.0
_SMOOTH_SIGMA_MAX_M = 6.0


class TrackError(ValueError):
    """Invalid track definition (too few points, degenerate edges, ...)."""


def _wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    return -np.mod(-np.asarray(a) + np.pi, 2.0 * np.pi) + np.pi


class TrackQueryIndex:
    """Uniform spatial grid over the track bounding box.

    Each cell stores the centerline sample indices that fall in it; a query
    scans the 3x3 cell neighborhood, which is guaranteed to contain the true
    nearest sample for any point within 2x track width of the centerline
    (cell size is 4x width). Falls back to an exhaustive scan otherwise.
    """

    def __init__(self, centerline: np.ndarray, width: float):
        self._pts = centerline
        self._cell = 4.0 * width
        self._origin = centerline.min(axis=0) - self._cell
        cells = np.floor((centerline - self._origin) / self._cell).astype(np.int64)
        buckets: dict[tuple[int, int], list[int]] = {}
        for i, (cx, cy) in enumerate(map(tuple, cells)):
            buckets.setdefault((cx, cy), []).append(i)
        self._buckets = {k: np.asarray(v, dtype=np.int64) for k, v in buckets.items()}

    def nearest(self, point) -> int:
        """Index of the nearest centerline sample to ``point``."""
        p = np.asarray(point, dtype=np.float64)
        cx, cy = np.floor((p - self._origin) / self._cell).astype(np.int64)
        cand = [
            self._buckets[key]
            for key in (
                (cx + dx, cy + dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)
            )
            if key in self._buckets
        ]
        if cand:
            idx = np.concatenate(cand)
            d = self._pts[idx] - p
            d2 = d[:, 0] ** 2 + d[:, 1] ** 2
            j = int(np.argmin(d2))
            # Any point strictly inside the 3x3 block is at least one full
            # cell away from samples outside it, so a hit within one cell
            # width is provably the global nearest.
            if d2[j] <= self._cell * self._cell:
                return int(idx[j])
        d = self._pts - p
        return int(np.argmin(d[:, 0] ** 2 + d[:, 1] ** 2))


@dataclass(frozen=True)
class TrackSpec:
    """Closed-loop 2D track with uniform arc-length sampling.

    ``centerline[k]`` sits at arc length ``k * ds``; the loop closes from the
    last sample back to the first. ``tangents`` are unit vectors, ``curvature``
    is signed (positive = turning left).
    """

    name: str
    control_points: np.ndarray
    width: float
    ds: float
    centerline: np.ndarray
    tangents: np.ndarray
    curvature: np.ndarray
    total_length: float
    index: TrackQueryIndex

    @property
    def n_samples(self) -> int:
        return self.centerline.shape[0]

    def sample_s(self, s: float) -> int:
        """Nearest sample index for arc length ``s`` (wrapped)."""
        return int(round(s / self.ds)) % self.n_samples


def _cross2(a, b) -> float:
    return a[0] * b[1] - a[1] * b[0]


def _segments_intersect(p1, p2, p3, p4) -> bool:
    d1 = _cross2(p4 - p3, p1 - p3)
    d2 = _cross2(p4 - p3, p2 - p3)
    d3 = _cross2(p2 - p1, p3 - p1)
    d4 = _cross2(p2 - p1, p4 - p1)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def _check_simple(points: np.ndarray) -> None:
    m = len(points)
    closed = np.vstack([points, points[:1]])
    for i in range(m):
        for j in range(i + 2, m):
            if i == 0 and j == m - 1:
                continue  # adjacent through the wrap
            if _segments_intersect(closed[i], closed[i + 1], closed[j], closed[j + 1]):
                raise TrackError("control polygon self-intersects")


def build_track(
    control_points,
    width: float,
    ds: float = DEFAULT_DS,
    name: str = "track",
) -> TrackSpec:
    """Build a TrackSpec from a closed control polygon.

    Raises TrackError for fewer than 4 points, non-positive width/ds,
    zero-length polygon edges, or a self-intersecting polygon.
    """
    pts = np.asarray(control_points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 4:
        raise TrackError("need at least 4 control points of shape (n, 2)")
    if not np.all(np.isfinite(pts)):
        raise TrackError("control points must be finite")
    if width <= 0:
        raise TrackError("width must be > 0")
    if ds <= 0:
        raise TrackError("ds must be > 0")
    edges = np.diff(np.vstack([pts, pts[:1]]), axis=0)
    seg_len = np.hypot(edges[:, 0], edges[:, 1])
    if np.any(seg_len < 1e-9):
        raise TrackError("degenerate (zero-length) polygon segment")
    _check_simple(pts)

    # Dense piecewise-linear resample of the closed polygon.
    h = min(ds, 0.5) / 2.0
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    perimeter = cum[-1]
    n_fine = max(64, int(math.ceil(perimeter / h)))
    s_fine = np.arange(n_fine) * (perimeter / n_fine)
    closed_pts = np.vstack([pts, pts[:1]])
    fine = np.column_stack(
        [np.interp(s_fine, cum, closed_pts[:, 0]), np.interp(s_fine, cum, closed_pts[:, 1])]
    )

    # Periodic Gaussian smoothing rounds polygon corners.
    sigma_m = float(np.clip(np.median(seg_len), _SMOOTH_SIGMA_MIN_M, _SMOOTH_SIGMA_MAX_M))
    sigma = sigma_m / (perimeter / n_fine)
    smooth = np.column_stack(
        [gaussian_filter1d(fine[:, 0], sigma, mode="wrap"),
         gaussian_filter1d(fine[:, 1], sigma, mode="wrap")]
    )

    # Uniform arc-length resample of the smoothed curve.
    d = np.diff(np.vstack([smooth, smooth[:1]]), axis=0)
    step = np.hypot(d[:, 0], d[:, 1])
    cum2 = np.concatenate([[0.0], np.cumsum(step)])
    total = cum2[-1]
    n = max(8, int(round(total / ds)))
    ds_actual = total / n
    s_out = np.arange(n) * ds_actual
    closed_smooth = np.vstack([smooth, smooth[:1]])
    center = np.column_stack(
        [np.interp(s_out, cum2, closed_smooth[:, 0]), np.interp(s_out, cum2, closed_smooth[:, 1])]
    )

    # Tangents and curvature from central differences over arc length.
    delta = np.roll(center, -1, axis=0) - np.roll(center, 1, axis=0)
    norm = np.hypot(delta[:, 0], delta[:, 1])
    tangents = delta / norm[:, None]
    phi = np.arctan2(tangents[:, 1], tangents[:, 0])
    dphi = _wrap_angle(np.roll(phi, -1) - np.roll(phi, 1))
    curvature = dphi / (2.0 * ds_actual)

    return TrackSpec(
        name=name,
        control_points=pts,
        width=float(width),
        ds=ds_actual,
        centerline=center,
        tangents=tangents,
        curvature=curvature,
        total_length=float(total),
        index=TrackQueryIndex(center, float(width)),
    )


def locate(track: TrackSpec, point) -> tuple[float, float]:
    """Arc length of the nearest centerline sample and signed lateral offset.

    Lateral offset is the perpendicular distance from the sample's tangent
    line, positive to the left of the direction of travel. Any finite point
    is locatable; |offset| <= width/2 means on-track.
    """
    p = np.asarray(point, dtype=np.float64)
    k = track.index.nearest(p)
    t = track.tangents[k]
    d = p - track.centerline[k]
    lateral = t[0] * d[1] - t[1] * d[0]
    return k * track.ds, float(lateral)


def lookahead_point(track: TrackSpec, s: float, distance: float) -> np.ndarray:
    """Centerline point at arc length (s + distance) mod total_length."""
    if distance < 0:
        raise ValueError("lookahead distance must be >= 0")
    return track.centerline[track.sample_s(s + distance)]


def heading_at(track: TrackSpec, s: float) -> float:
    """Tangent heading (radians, CCW from +x) at arc length s."""
    t = track.tangents[track.sample_s(s)]
    return float(math.atan2(t[1], t[0]))


# --- track files ---------------------------------------------------------

def to_json_dict(track: TrackSpec) -> dict:
    return {
        "name": track.name,
        "width_m": track.width,
        "control_points": track.control_points.tolist(),
    }


def save_track(track: TrackSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(to_json_dict(track), f, indent=1)


def track_from_dict(spec: dict, ds: float = DEFAULT_DS) -> TrackSpec:
    return build_track(
        spec["control_points"], spec["width_m"], ds=ds, name=spec.get("name", "track")
    )


def load_track(path, ds: float = DEFAULT_DS) -> TrackSpec:
    with open(path, encoding="utf-8") as f:
        return track_from_dict(json.load(f), ds=ds)


BUNDLED_TRACKS = ("oval", "road_course")


def load_bundled(name: str, ds: float = DEFAULT_DS) -> TrackSpec:
    """Load one of the tracks shipped with the package."""
    if name not in BUNDLED_TRACKS:
        raise TrackError(f"unknown bundled track {name!r}; have {BUNDLED_TRACKS}")
    data = resources.files("ignition.tracks").joinpath(f"{name}.json").read_text("utf-8")
    return track_from_dict(json.loads(data), ds=ds)
