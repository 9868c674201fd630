"""Dataset synthesis, storage, splits, statistics and train-time augmentation.

File layout (bit-exact): ``manifest.json`` plus ``records.bin``. Records are
fixed-stride little-endian: frame bytes (width*height u8), then velocity_mph,
steer_deg, throttle, brake as f32, stored in shuffled order with split
boundaries kept in the manifest as index ranges.
"""

from __future__ import annotations

import json
import math
import queue
import threading
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import convolve1d

from ignition import track as trackmod
from ignition.dynamics import CarParams, CarState, ControlCommand, reset_to_track, step, DT
from ignition.oracle import OracleDriver, OracleParams
from ignition.render import CameraParams, Frame, render

DATASET_VERSION = 1
TELEMETRY_DECIMATION = 10  # 100 Hz physics -> 10 Hz records
SPLIT_FRACTIONS = (0.92, 0.04, 0.04)

STEER_BINS = 36
PEDAL_BINS = 10


class DatasetError(RuntimeError):
    pass


@dataclass(frozen=True)
class DrivingRecord:
    frame: Frame
    velocity_mph: float
    label: ControlCommand


@dataclass
class AugmentationPolicy:
    jitter_px: int = 5
    blur_sigma_max: float = 1.0
    flip_prob: float = 0.5
    jitter_enabled: bool = True
    blur_enabled: bool = True
    flip_enabled: bool = True

    def __post_init__(self):
        if self.jitter_px < 0 or self.blur_sigma_max < 0:
            raise ValueError("jitter_px and blur_sigma_max must be >= 0")
        if not 0 <= self.flip_prob <= 1:
            raise ValueError("flip_prob must be in [0, 1]")

    @classmethod
    def disabled(cls) -> "AugmentationPolicy":
        return cls(jitter_enabled=False, blur_enabled=False, flip_enabled=False)


@dataclass
class DatasetManifest:
    version: int
    frame_width: int
    frame_height: int
    record_count: int
    split_counts: dict
    rng_seed: int
    track_name: str
    normalization: dict  # pixel mean/std of the train split, in [0, 1] units
    split_mode: str = "random"

    def split_range(self, split: str) -> range:
        n_train = self.split_counts["train"]
        n_val = self.split_counts["val"]
        if split == "train":
            return range(0, n_train)
        if split == "val":
            return range(n_train, n_train + n_val)
        if split == "test":
            return range(n_train + n_val, self.record_count)
        raise DatasetError(f"unknown split {split!r}")


def split_sizes(n: int) -> tuple[int, int, int]:
    train = round(n * SPLIT_FRACTIONS[0])
    val = round(n * SPLIT_FRACTIONS[1])
    return train, val, n - train - val


def record_stride(width: int, height: int) -> int:
    return width * height + 4 * 4


class DatasetWriter:
    """Streams records to records.bin through a bounded queue so rendering
    is never blocked on disk."""

    def __init__(self, out_dir, width: int, height: int):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._file = open(self.out_dir / "records.bin", "wb")
        self._queue: queue.Queue = queue.Queue(maxsize=64)
        self._error: Exception | None = None
        self._thread = threading.Thread(target=self._drain, daemon=True)
        self._thread.start()
        self.width, self.height = width, height

    def _drain(self):
        while True:
            item = self._queue.get()
            if item is None:
                return
            try:
                self._file.write(item)
            except Exception as e:  # surfaced on put/close
                self._error = e
                return

    def put(self, record: DrivingRecord):
        if self._error:
            raise self._error
        buf = record.frame.pixels.tobytes() + np.array(
            [record.velocity_mph, record.label.steer_deg,
             record.label.throttle, record.label.brake],
            dtype="<f4",
        ).tobytes()
        self._queue.put(buf)

    def close(self):
        self._queue.put(None)
        self._thread.join()
        self._file.close()
        if self._error:
            raise self._error


def synthesize(
    track: trackmod.TrackSpec,
    car_params: CarParams,
    oracle_params: OracleParams,
    duration_s: float,
    size: tuple[int, int],
    seed: int,
    out_dir,
    camera: CameraParams | None = None,
    split_mode: str = "random",
) -> DatasetManifest:
    """Run the oracle for duration_s, record every 10th 100 Hz sample as a
    rendered frame + velocity + oracle command, shuffle, split 92-4-4 and
    write the dataset. Deterministic given seed."""
    if duration_s <= 0:
        raise DatasetError("duration_s must be > 0")
    if split_mode not in ("random", "contiguous"):
        raise DatasetError("split_mode must be 'random' or 'contiguous'")
    camera = camera or CameraParams()
    w, h = size
    driver = OracleDriver(track, car_params, oracle_params)
    state = reset_to_track(CarState(), track, 0.0)
    n_steps = int(round(duration_s * 100))
    n_records = n_steps // TELEMETRY_DECIMATION
    frame_ss, shuffle_ss = np.random.SeedSequence(seed).spawn(2)
    frame_seeds = frame_ss.generate_state(n_records, dtype=np.uint64)

    frames = np.empty((n_records, h, w), dtype=np.uint8)
    labels = np.empty((n_records, 4), dtype=np.float32)  # vel, steer, thr, brk
    rec = 0
    for i in range(n_steps):
        cmd = driver.command(state)
        if i % TELEMETRY_DECIMATION == 0:
            frame = render(track, state, camera, size=size, seed=int(frame_seeds[rec]))
            frames[rec] = frame.pixels
            labels[rec] = (state.speed_mph, cmd.steer_deg, cmd.throttle, cmd.brake)
            rec += 1
        state = step(state, cmd, car_params, DT)

    order = np.arange(n_records)
    if split_mode == "random":
        np.random.default_rng(shuffle_ss).shuffle(order)
    n_train, n_val, n_test = split_sizes(n_records)

    train_pixels = frames[order[:n_train]].astype(np.float64) / 255.0
    mean = float(train_pixels.mean())
    std = float(train_pixels.std())

    writer = DatasetWriter(out_dir, w, h)
    try:
        for idx in order:
            writer.put(DrivingRecord(
                frame=Frame(w, h, frames[idx]),
                velocity_mph=float(labels[idx, 0]),
                label=ControlCommand(*labels[idx, 1:]),
            ))
    finally:
        writer.close()

    manifest = DatasetManifest(
        version=DATASET_VERSION,
        frame_width=w,
        frame_height=h,
        record_count=n_records,
        split_counts={"train": n_train, "val": n_val, "test": n_test},
        rng_seed=seed,
        track_name=track.name,
        normalization={"mean": mean, "std": std},
        split_mode=split_mode,
    )
    with open(Path(out_dir) / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(asdict(manifest), f, indent=1, sort_keys=True)
    return manifest


class Dataset:
    """Memory-mapped read access to a written dataset."""

    def __init__(self, path):
        self.path = Path(path)
        with open(self.path / "manifest.json", encoding="utf-8") as f:
            self.manifest = DatasetManifest(**json.load(f))
        m = self.manifest
        stride = record_stride(m.frame_width, m.frame_height)
        raw = np.fromfile(self.path / "records.bin", dtype=np.uint8)
        if len(raw) != stride * m.record_count:
            raise DatasetError("records.bin size does not match manifest")
        raw = raw.reshape(m.record_count, stride)
        self.frames = raw[:, : m.frame_width * m.frame_height].reshape(
            m.record_count, m.frame_height, m.frame_width
        )
        self.values = raw[:, m.frame_width * m.frame_height:].copy().view("<f4").reshape(
            m.record_count, 4
        )

    def __len__(self):
        return self.manifest.record_count

    def record(self, idx: int) -> DrivingRecord:
        m = self.manifest
        v = self.values[idx]
        return DrivingRecord(
            frame=Frame(m.frame_width, m.frame_height, self.frames[idx].copy()),
            velocity_mph=float(v[0]),
            label=ControlCommand(float(v[1]), float(v[2]), float(v[3])),
        )

    def split_indices(self, split: str) -> np.ndarray:
        return np.asarray(self.manifest.split_range(split), dtype=np.int64)


def label_stats(dataset: Dataset) -> dict:
    """Histograms and summary statistics of the stored labels."""
    if len(dataset) == 0:
        raise DatasetError("empty dataset")
    steer = dataset.values[:, 1].astype(np.float64)
    throttle = dataset.values[:, 2].astype(np.float64)
    brake = dataset.values[:, 3].astype(np.float64)
    steer_hist, _ = np.histogram(steer, bins=STEER_BINS, range=(-180.0, 180.0))
    thr_hist, _ = np.histogram(throttle, bins=PEDAL_BINS, range=(0.0, 1.0))
    brk_hist, _ = np.histogram(brake, bins=PEDAL_BINS, range=(0.0, 1.0))
    extreme = ((throttle == 0) | (throttle == 1)) & ((brake == 0) | (brake == 1))
    return {
        "steering_hist": steer_hist.tolist(),
        "throttle_hist": thr_hist.tolist(),
        "brake_hist": brk_hist.tolist(),
        "steering_mean": float(steer.mean()),
        "steering_std": float(steer.std()),
        "extreme_pedal_fraction": float(extreme.mean()),
        "throttle_brake_cooccurrence": float(((throttle > 0) & (brake > 0)).mean()),
        "class_priors": {
            "brake": float((brake >= 0.5).mean()),
            "throttle": float(((brake < 0.5) & (throttle >= 0.5)).mean()),
            "neutral": float(((brake < 0.5) & (throttle < 0.5)).mean()),
        },
    }


def _shift_edge_replicate(pixels: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Translate by (dx right, dy down) with edge-replicate padding."""
    h, w = pixels.shape
    pad = max(abs(dx), abs(dy))
    if pad == 0:
        return pixels
    padded = np.pad(pixels, pad, mode="edge")
    return padded[pad - dy: pad - dy + h, pad - dx: pad - dx + w]


def _gaussian_blur(pixels: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return pixels
    radius = math.ceil(3 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    kernel /= kernel.sum()
    blurred = convolve1d(pixels.astype(np.float64), kernel, axis=0, mode="nearest")
    blurred = convolve1d(blurred, kernel, axis=1, mode="nearest")
    return np.clip(np.rint(blurred), 0, 255).astype(np.uint8)


def augment(record: DrivingRecord, policy: AugmentationPolicy, rng: np.random.Generator) -> DrivingRecord:
    """Train-time augmentation: jitter, blur, then flip (negating steering).

    Velocity, throttle and brake are never touched.
    """
    pixels = record.frame.pixels
    steer = record.label.steer_deg
    if policy.jitter_enabled and policy.jitter_px > 0:
        dx = int(rng.integers(-policy.jitter_px, policy.jitter_px + 1))
        dy = int(rng.integers(-policy.jitter_px, policy.jitter_px + 1))
        pixels = _shift_edge_replicate(pixels, dx, dy)
    if policy.blur_enabled and policy.blur_sigma_max > 0:
        sigma = float(rng.uniform(0.0, policy.blur_sigma_max))
        pixels = _gaussian_blur(pixels, sigma)
    if policy.flip_enabled and rng.random() < policy.flip_prob:
        pixels = np.ascontiguousarray(pixels[:, ::-1])
        steer = -steer
    return DrivingRecord(
        frame=Frame(record.frame.width, record.frame.height, pixels),
        velocity_mph=record.velocity_mph,
        label=ControlCommand(steer, record.label.throttle, record.label.brake),
    )


def normalize(pixels: np.ndarray, manifest: DatasetManifest) -> np.ndarray:
    """Map u8 pixels to (p/255 - mean)/std using train-split statistics."""
    std = manifest.normalization["std"]
    if std == 0:
        raise DatasetError("degenerate dataset: pixel std is zero")
    return (pixels.astype(np.float32) / 255.0 - manifest.normalization["mean"]) / std
