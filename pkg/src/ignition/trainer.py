"""Training loop: seeded shuffling, augmentation, validation, checkpoints.

Determinism contract: given equal seeds, two runs produce identical metrics
histories. Per-record augmentation randomness derives from (seed, epoch,
record index), so it does not depend on iteration interleaving.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from ignition import autodiff as ad
from ignition import model as M
from ignition.autodiff import Graph
from ignition.dataset import AugmentationPolicy, Dataset, augment, normalize
from ignition.model import DrivingModel, ModelConfig

UNIFORM_LOGIT_LOSS = math.log(M.N_STEER_BUCKETS) + math.log(M.N_ACCEL_CLASSES)
KEEP_CHECKPOINTS = 3


class TrainerError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    optimizer: str = "adam"  # or "sgd"
    lr: float = 1e-3
    momentum: float = 0.9
    seed: int = 0
    val_every: int = 200
    checkpoint_every: int = 500
    overfit_n: int | None = None
    augment: AugmentationPolicy = field(default_factory=AugmentationPolicy)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise TrainerError("epochs and batch_size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise TrainerError("optimizer must be 'adam' or 'sgd'")
        if self.overfit_n is not None and self.overfit_n < 1:
            raise TrainerError("overfit_n must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        return d


@dataclass
class MetricsSnapshot:
    step: int
    epoch: int
    train_loss: float | None
    val_loss: float | None
    accel_accuracy: float
    steering_accuracy: float
    steering_within_20deg: float

    def __post_init__(self):
        for a in (self.accel_accuracy, self.steering_accuracy, self.steering_within_20deg):
            if not 0.0 <= a <= 1.0:
                raise TrainerError(f"accuracy out of range: {a}")
        if self.steering_within_20deg < self.steering_accuracy - 1e-12:
            raise TrainerError("within-20deg accuracy cannot be below exact accuracy")

    def to_dict(self) -> dict:
        return asdict(self)


def _record_rng(seed: int, epoch: int, idx: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, idx]))


def _make_batch(ds: Dataset, indices: np.ndarray, cfg: TrainConfig | None, epoch: int):
    """Assemble (frames, velocity, steer buckets, accel classes, raw steer).

    With cfg given, records are augmented using per-record seeded RNGs;
    without it (eval) records are used as stored.
    """
    m = ds.manifest
    n = len(indices)
    frames = np.empty((n, m.frame_height, m.frame_width, 1), np.float32)
    vel = np.empty(n, np.float32)
    steer_b = np.empty(n, np.int64)
    accel_c = np.empty(n, np.int64)
    steer_deg = np.empty(n, np.float32)
    for k, idx in enumerate(indices):
        rec = ds.record(int(idx))
        if cfg is not None:
            rec = augment(rec, cfg.augment, _record_rng(cfg.seed, epoch, int(idx)))
        frames[k, :, :, 0] = normalize(rec.frame.pixels, m)
        vel[k] = rec.velocity_mph
        steer_b[k] = M.steer_bucket(rec.label.steer_deg)
        accel_c[k] = M.accel_class(rec.label.throttle, rec.label.brake)
        steer_deg[k] = rec.label.steer_deg
    return frames, vel, steer_b, accel_c, steer_deg


def evaluate(model: DrivingModel, dataset: Dataset, split: str,
             batch_size: int = 256, step: int = 0, epoch: int = 0,
             train_loss: float | None = None) -> MetricsSnapshot:
    """Eval-mode metrics over a split: no augmentation, running batchnorm
    statistics, deterministic."""
    _check_geometry(model.config, dataset)
    indices = dataset.split_indices(split)
    if len(indices) == 0:
        raise TrainerError(f"split {split!r} is empty")
    total_loss = 0.0
    accel_hits = 0
    steer_hits = 0
    within20 = 0
    for lo in range(0, len(indices), batch_size):
        chunk = indices[lo: lo + batch_size]
        frames, vel, steer_b, accel_c, steer_deg = _make_batch(dataset, chunk, None, 0)
        steer_logits, accel_logits = model.forward(frames, vel, training=False)
        loss = model.loss((steer_logits, accel_logits), steer_b, accel_c)
        total_loss += float(loss.data) * len(chunk)
        steer_pred = steer_logits.data.argmax(axis=1)
        accel_pred = accel_logits.data.argmax(axis=1)
        accel_hits += int((accel_pred == accel_c).sum())
        steer_hits += int((steer_pred == steer_b).sum())
        centers = np.array([M.bucket_center_deg(int(b)) for b in steer_pred])
        within20 += int((np.abs(centers - steer_deg) <= 20.0).sum())
    n = len(indices)
    return MetricsSnapshot(
        step=step, epoch=epoch, train_loss=train_loss, val_loss=total_loss / n,
        accel_accuracy=accel_hits / n, steering_accuracy=steer_hits / n,
        steering_within_20deg=within20 / n,
    )


def _check_geometry(config: ModelConfig, dataset: Dataset) -> None:
    m = dataset.manifest
    if (config.input_width, config.input_height) != (m.frame_width, m.frame_height):
        raise TrainerError(
            f"model expects {config.input_width}x{config.input_height} frames, "
            f"dataset provides {m.frame_width}x{m.frame_height}")


def _atomic_save(model: DrivingModel, path: Path, sidecar_extra: dict) -> None:
    tmp = path.with_name(path.name + ".tmp")
    model.save(tmp, sidecar_extra)
    os.replace(str(tmp) + ".json", str(path) + ".json")
    os.replace(tmp, path)


def _make_optimizer(cfg: TrainConfig, params):
    if cfg.optimizer == "adam":
        return ad.Adam(params, lr=cfg.lr)
    return ad.SGD(params, lr=cfg.lr, momentum=cfg.momentum)


def train(
    dataset: Dataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    out_dir,
    progress=None,
    init_state: dict | None = None,
) -> tuple[DrivingModel, list[MetricsSnapshot]]:
    """Train a model; writes metrics.jsonl and rotating checkpoints under
    out_dir; returns the trained model and the metrics history.

    ``progress`` is an optional callable receiving each snapshot dict;
    failures in it are swallowed so telemetry can never affect training.
    ``init_state`` warm-starts the weights (e.g. resuming a checkpoint).
    """
    cfg = train_config
    _check_geometry(model_config, dataset)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = DrivingModel(model_config, seed=cfg.seed)
    if init_state is not None:
        model.load_state(init_state)
    opt = _make_optimizer(cfg, model.parameters())

    train_idx = dataset.split_indices("train")
    if cfg.overfit_n is not None:
        train_idx = train_idx[: cfg.overfit_n]
    if len(train_idx) == 0:
        raise TrainerError("no training records")
    steps_per_epoch = math.ceil(len(train_idx) / cfg.batch_size)
    sidecar = {
        "normalization": dataset.manifest.normalization,
        "train_config": cfg.to_dict(),
        "track_name": dataset.manifest.track_name,
    }

    history: list[MetricsSnapshot] = []
    recent_losses: list[float] = []
    kept: list[Path] = []
    best_val = math.inf
    step = 0
    metrics_path = out_dir / "metrics.jsonl"

    def emit(snapshot: MetricsSnapshot):
        history.append(snapshot)
        with open(metrics_path, "a", encoding="utf-8") as f:
            f.write(json.dumps(snapshot.to_dict()) + "\n")
        if progress is not None:
            try:
                progress(snapshot.to_dict())
            except Exception:
                pass

    def validate(epoch: int):
        nonlocal best_val
        tl = float(np.mean(recent_losses)) if recent_losses else None
        recent_losses.clear()
        snap = evaluate(model, dataset, "val", step=step, epoch=epoch, train_loss=tl)
        emit(snap)
        if snap.val_loss < best_val:
            best_val = snap.val_loss
            _atomic_save(model, out_dir / "best.ckpt", sidecar)

    metrics_path.unlink(missing_ok=True)
    for epoch in range(cfg.epochs):
        order = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, epoch])).permutation(train_idx)
        for lo in range(0, len(order), cfg.batch_size):
            chunk = order[lo: lo + cfg.batch_size]
            frames, vel, steer_b, accel_c, _ = _make_batch(dataset, chunk, cfg, epoch)
            with Graph() as g:
                if model_config.head == "classification":
                    loss = model.loss(model.forward(frames, vel, training=True),
                                      steer_b, accel_c)
                else:
                    raise TrainerError("train() supports the classification head; "
                                       "use overfit_regression_probe for regression")
                g.backward(loss)
            opt.step()
            opt.zero_grad()
            step += 1
            recent_losses.append(float(loss.data))
            if step % cfg.val_every == 0:
                validate(epoch)
            if step % cfg.checkpoint_every == 0:
                path = out_dir / f"step_{step:06d}.ckpt"
                _atomic_save(model, path, sidecar)
                kept.append(path)
                while len(kept) > KEEP_CHECKPOINTS:
                    old = kept.pop(0)
                    old.unlink(missing_ok=True)
                    Path(str(old) + ".json").unlink(missing_ok=True)
    validate(cfg.epochs - 1)
    _atomic_save(model, out_dir / "final.ckpt", sidecar)
    if not (out_dir / "best.ckpt").exists():
        _atomic_save(model, out_dir / "best.ckpt", sidecar)
    return model, history


# ---------------------------------------------------------------------------
# overfit probes


def overfit_classification_probe(
    dataset: Dataset,
    model_config: ModelConfig,
    n_records: int = 100,
    max_steps: int = 2000,
    check_every: int = 25,
    seed: int = 0,
    lr: float = 1e-3,
    batch_size: int = 25,
) -> dict:
    """Train on the first n_records of the train split (no augmentation) and
    report how many steps it takes to classify all of them perfectly on both
    heads. steps_to_perfect is None if the budget runs out."""
    _check_geometry(model_config, dataset)
    indices = dataset.split_indices("train")[:n_records]
    frames, vel, steer_b, accel_c, _ = _make_batch(dataset, indices, None, 0)
    model = DrivingModel(model_config, seed=seed)
    opt = ad.Adam(model.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    steps_to_perfect = None
    step = 0
    while step < max_steps:
        order = rng.permutation(len(indices))
        for lo in range(0, len(order), batch_size):
            sel = order[lo: lo + batch_size]
            with Graph() as g:
                loss = model.loss(
                    model.forward(frames[sel], vel[sel], training=True),
                    steer_b[sel], accel_c[sel])
                g.backward(loss)
            opt.step()
            opt.zero_grad()
            step += 1
            if step % check_every == 0 or step == max_steps:
                sp, ap = model.predict(frames, vel)
                if np.array_equal(sp, steer_b) and np.array_equal(ap, accel_c):
                    steps_to_perfect = step
                    break
            if step >= max_steps:
                break
        if steps_to_perfect is not None:
            break
    sp, ap = model.predict(frames, vel)
    return {
        "steps_to_perfect": steps_to_perfect,
        "steer_accuracy": float((sp == steer_b).mean()),
        "accel_accuracy": float((ap == accel_c).mean()),
    }


def overfit_regression_probe(
    dataset: Dataset,
    model_config: ModelConfig | None = None,
    n_records: int = 25,
    steps: int = 300,
    seed: int = 0,
    lr: float = 1e-4,
) -> dict:
    """Two equal-budget SGD runs on the regression head: targets scaled into
    (-100, 100) versus raw unit-interval targets.

    Losses live on wildly different absolute scales, so each arm's plateau is
    reported relative to its own initial loss; the returned ratio is
    raw_plateau / scaled_plateau in those relative units.
    """
    if model_config is None:
        model_config = ModelConfig(base_channels=4, stage_blocks=(1, 1, 1, 1),
                                   fc_dim=16, head="regression")
    if model_config.head != "regression":
        raise TrainerError("regression probe needs a regression-head config")
    _check_geometry(model_config, dataset)
    indices = dataset.split_indices("train")[:n_records]
    frames, vel, _, _, _ = _make_batch(dataset, indices, None, 0)
    raw = dataset.values[np.asarray(indices), 1:]  # steer_deg, throttle, brake

    unit_targets = np.stack([
        (raw[:, 0] + 180.0) / 360.0, raw[:, 1], raw[:, 2]], axis=1).astype(np.float32)
    scaled_targets = np.stack([
        M.regression_targets(*row) for row in raw], axis=0).astype(np.float32)

    def run(targets):
        model = DrivingModel(model_config, seed=seed)
        opt = ad.SGD(model.parameters(), lr=lr, momentum=0.9)
        losses = []
        for _ in range(steps):
            with Graph() as g:
                out = model.forward(frames, vel, training=True)
                loss = ad.mse(out, targets)
                g.backward(loss)
            opt.step()
            opt.zero_grad()
            losses.append(float(loss.data))
        tail = losses[-max(1, steps // 10):]
        return losses, float(np.mean(tail)) / losses[0]

    unit_losses, unit_plateau = run(unit_targets)
    scaled_losses, scaled_plateau = run(scaled_targets)
    return {
        "unit_plateau_rel": unit_plateau,
        "scaled_plateau_rel": scaled_plateau,
        "ratio": unit_plateau / scaled_plateau,
        "unit_losses": unit_losses,
        "scaled_losses": scaled_losses,
    }
