"""Driver's-eye grayscale frames via per-pixel ground-plane ray casting.

The camera is a pinhole on the hood looking along the car's heading. Every
pixel below the horizon is intersected with the ground plane and classified
against the track (surface / boundary line / off-track); rows above the
horizon are sky. All geometry work happens in the car-local frame, which is
what makes mirror equivariance exact: reflecting the world across the car's
heading axis is represented by negating the local y coordinates, and every
arithmetic step below commutes bitwise with that negation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from ignition import track as trackmod
from ignition.dynamics import CarState

SUPPORTED_SIZES = ((320, 180), (160, 90), (64, 36))

GRAY_SKY = 180
GRAY_SURFACE = 110
GRAY_OFF = 50
GRAY_BOUNDARY = 230
BOUNDARY_BAND_M = 0.3

# Centerline samples are decimated to roughly this spacing for pixel
# classification; lateral offsets come from tangent-line projection, so the
# coarser spacing costs ~kappa*(spacing/2)^2/2 < 1 cm of accuracy.
_RENDER_SAMPLE_SPACING_M = 2.0


class RenderError(ValueError):
    pass


@dataclass(frozen=True)
class CameraParams:
    forward_offset: float = 1.5      # m ahead of car center
    height: float = 1.2              # m above ground
    horizontal_fov: float = 90.0     # degrees
    render_noise_sigma: float = 2.0  # gray levels

    def __post_init__(self):
        if self.height <= 0:
            raise ValueError("camera height must be > 0")
        if not 0 < self.horizontal_fov < 180:
            raise ValueError("horizontal_fov must be in (0, 180)")

    def horizon_row(self, height_px: int) -> int:
        """First image row that can hit the ground."""
        return height_px // 2


@dataclass(frozen=True)
class Frame:
    width: int
    height: int
    pixels: np.ndarray  # (height, width) uint8

    def __post_init__(self):
        if self.pixels.shape != (self.height, self.width) or self.pixels.dtype != np.uint8:
            raise RenderError("pixel buffer does not match declared size")
        if self.width * 9 != self.height * 16:
            raise RenderError("frame aspect must be 16:9")


def horizontal_flip(frame: Frame) -> Frame:
    return Frame(frame.width, frame.height, np.ascontiguousarray(frame.pixels[:, ::-1]))


@dataclass(frozen=True)
class LocalTrackGeometry:
    """Decimated centerline in the car-local frame (x forward, y left)."""

    points: np.ndarray    # (n, 2) float32
    tangents: np.ndarray  # (n, 2) float32
    width: float


def mirror_world(geom: LocalTrackGeometry) -> LocalTrackGeometry:
    """The world reflected across the car's heading axis, represented
    exactly: local y coordinates change sign and nothing else."""
    pts = geom.points.copy()
    pts[:, 1] = -pts[:, 1]
    tan = geom.tangents.copy()
    tan[:, 1] = -tan[:, 1]
    return LocalTrackGeometry(points=pts, tangents=tan, width=geom.width)


_decimated_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _decimated(track: trackmod.TrackSpec) -> tuple[np.ndarray, np.ndarray]:
    key = id(track)
    got = _decimated_cache.get(key)
    if got is None:
        stride = max(1, int(round(_RENDER_SAMPLE_SPACING_M / track.ds)))
        got = (track.centerline[::stride].copy(), track.tangents[::stride].copy())
        _decimated_cache[key] = got
    return got


def localize(track: trackmod.TrackSpec, state: CarState) -> LocalTrackGeometry:
    """Transform the decimated centerline into the car-local frame."""
    pts, tans = _decimated(track)
    c, s = math.cos(state.heading), math.sin(state.heading)
    rot = np.array([[c, s], [-s, c]])  # R(-heading)
    local_pts = (pts - np.array([state.x, state.y])) @ rot.T
    local_tans = tans @ rot.T
    return LocalTrackGeometry(
        points=np.ascontiguousarray(local_pts, dtype=np.float32),
        tangents=np.ascontiguousarray(local_tans, dtype=np.float32),
        width=track.width,
    )


class _RayGrid:
    """Cached per-(camera, size) ray constants for ground pixels."""

    def __init__(self, camera: CameraParams, size: tuple[int, int]):
        w, h = size
        f = (w / 2.0) / math.tan(math.radians(camera.horizontal_fov) / 2.0)
        j = np.arange(w, dtype=np.float64)
        u = (w / 2.0 - j - 0.5) / f               # left positive; exact odd symmetry
        row0 = camera.horizon_row(h)
        i = np.arange(row0, h, dtype=np.float64)
        v = (h / 2.0 - i - 0.5) / f               # negative below horizon
        t = camera.height / (-v)                  # ground distance scale per row
        self.row0 = row0
        self.hit_x = np.ascontiguousarray(
            np.broadcast_to((t + camera.forward_offset)[:, None], (len(t), w)), dtype=np.float32
        ).ravel()
        self.hit_y = np.ascontiguousarray(t[:, None] * u[None, :], dtype=np.float32).ravel()


_ray_cache: dict[tuple, _RayGrid] = {}


def _rays(camera: CameraParams, size: tuple[int, int]) -> _RayGrid:
    key = (camera.forward_offset, camera.height, camera.horizontal_fov, size)
    grid = _ray_cache.get(key)
    if grid is None:
        grid = _RayGrid(camera, size)
        _ray_cache[key] = grid
    return grid


@numba.njit(cache=True)
def _classify_kernel(pts, tans, qx, qy, width, out):  # pragma: no cover - jitted
    n = pts.shape[0]
    stride = max(4, (n + 95) // 96)
    nc = (n + stride - 1) // stride
    half = np.float32(width / 2.0)
    band = np.float32(half - BOUNDARY_BAND_M)
    w2 = np.float32(width * width)
    for i in range(qx.shape[0]):
        x = qx[i]
        y = qy[i]
        # coarse pass over a strided subset
        best = np.float32(np.inf)
        bc = 0
        for c in range(nc):
            k = c * stride
            dx = x - pts[k, 0]
            dy = y - pts[k, 1]
            d2 = dx * dx + dy * dy
            if d2 < best:
                best = d2
                bc = k
        # refine in a circular window around the coarse hit
        best = np.float32(np.inf)
        bk = 0
        bdx = np.float32(0.0)
        bdy = np.float32(0.0)
        for off in range(-(stride + 2), stride + 3):
            k = (bc + off) % n
            dx = x - pts[k, 0]
            dy = y - pts[k, 1]
            d2 = dx * dx + dy * dy
            if d2 < best:
                best = d2
                bk = k
                bdx = dx
                bdy = dy
        if best > w2:
            out[i] = GRAY_OFF
            continue
        lat = abs(tans[bk, 0] * bdy - tans[bk, 1] * bdx)
        if lat < band:
            out[i] = GRAY_SURFACE
        elif lat <= half:
            out[i] = GRAY_BOUNDARY
        else:
            out[i] = GRAY_OFF


def _classify(geom: LocalTrackGeometry, qx: np.ndarray, qy: np.ndarray) -> np.ndarray:
    """Gray level for each ground hit point (flat arrays, float32)."""
    out = np.empty(len(qx), dtype=np.uint8)
    _classify_kernel(geom.points, geom.tangents, qx, qy, np.float32(geom.width), out)
    return out


def render_local(
    geom: LocalTrackGeometry,
    camera: CameraParams,
    size: tuple[int, int] = (64, 36),
    seed: int = 0,
) -> Frame:
    """Render from already-localized geometry (the deterministic core)."""
    if tuple(size) not in SUPPORTED_SIZES:
        raise RenderError(f"unsupported size {size}; supported: {SUPPORTED_SIZES}")
    w, h = size
    grid = _rays(camera, (w, h))
    img = np.full((h, w), GRAY_SKY, dtype=np.uint8)
    img[grid.row0:, :] = _classify(geom, grid.hit_x, grid.hit_y).reshape(h - grid.row0, w)
    if camera.render_noise_sigma > 0:
        rng = np.random.default_rng(seed)
        noisy = img.astype(np.float64) + rng.normal(0.0, camera.render_noise_sigma, img.shape)
        img = np.clip(np.rint(noisy), 0, 255).astype(np.uint8)
    return Frame(w, h, img)


def render(
    track: trackmod.TrackSpec,
    state: CarState,
    camera: CameraParams | None = None,
    size: tuple[int, int] = (64, 36),
    seed: int = 0,
) -> Frame:
    """Synthesize the hood-camera frame for a car state. Deterministic given
    (state, seed)."""
    camera = camera or CameraParams()
    return render_local(localize(track, state), camera, size=size, seed=seed)


def downsample(frame: Frame, target_size: tuple[int, int]) -> Frame:
    """Box-filter average per block, rounded half-up."""
    tw, th = target_size
    if frame.width % tw or frame.height % th:
        raise RenderError(f"target {target_size} does not divide {frame.width}x{frame.height}")
    fx, fy = frame.width // tw, frame.height // th
    blocks = frame.pixels.reshape(th, fy, tw, fx).astype(np.float64)
    mean = blocks.mean(axis=(1, 3))
    return Frame(tw, th, np.floor(mean + 0.5).astype(np.uint8))


def write_pgm(frame: Frame, path) -> None:
    """Binary PGM (P5)."""
    with open(path, "wb") as f:
        f.write(f"P5\n{frame.width} {frame.height}\n255\n".encode("ascii"))
        f.write(frame.pixels.tobytes())
