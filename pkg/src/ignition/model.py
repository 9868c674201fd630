"""Velocity-conditioned residual CNN for steering/accel prediction.

The network maps a normalized grayscale frame plus the current speed to a
36-way steering-bucket distribution and a 3-way pedal-class distribution
(classification head), or to three scaled continuous targets (regression
head, used for diagnostics).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from ignition import autodiff as ad
from ignition.autodiff import Tensor, Graph
from ignition.dynamics import ControlCommand

N_STEER_BUCKETS = 36
STEER_BUCKET_WIDTH_DEG = 10.0

ACCEL_THROTTLE = 0
ACCEL_NEUTRAL = 1
ACCEL_BRAKE = 2
N_ACCEL_CLASSES = 3
ACCEL_NAMES = ("THROTTLE", "NEUTRAL", "BRAKE")

VELOCITY_SCALE_MPH = 200.0
REGRESSION_STEER_SCALE = 100.0 / 180.0


class ModelError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# target codecs


def steer_bucket(steer_deg: float) -> int:
    """Map a steering angle to one of 36 ten-degree buckets."""
    b = int(math.floor((steer_deg + 180.0) / STEER_BUCKET_WIDTH_DEG))
    return min(max(b, 0), N_STEER_BUCKETS - 1)


def bucket_center_deg(bucket: int) -> float:
    if not 0 <= bucket < N_STEER_BUCKETS:
        raise ModelError(f"bucket out of range: {bucket}")
    return -180.0 + STEER_BUCKET_WIDTH_DEG * bucket + STEER_BUCKET_WIDTH_DEG / 2.0


def accel_class(throttle: float, brake: float) -> int:
    if brake >= 0.5:
        return ACCEL_BRAKE
    if throttle >= 0.5:
        return ACCEL_THROTTLE
    return ACCEL_NEUTRAL


def decode_command(bucket: int, accel: int) -> ControlCommand:
    """Classifier outputs back to an actuator command."""
    steer = bucket_center_deg(bucket)
    if accel == ACCEL_THROTTLE:
        return ControlCommand(steer, 1.0, 0.0)
    if accel == ACCEL_BRAKE:
        return ControlCommand(steer, 0.0, 1.0)
    if accel == ACCEL_NEUTRAL:
        return ControlCommand(steer, 0.0, 0.0)
    raise ModelError(f"accel class out of range: {accel}")


def regression_targets(steer_deg: float, throttle: float, brake: float) -> np.ndarray:
    """Continuous targets scaled into (-100, 100)."""
    return np.array([
        steer_deg * REGRESSION_STEER_SCALE,
        throttle * 200.0 - 100.0,
        brake * 200.0 - 100.0,
    ])


def decode_regression(out: np.ndarray) -> ControlCommand:
    steer = float(out[0]) / REGRESSION_STEER_SCALE
    throttle = (float(out[1]) + 100.0) / 200.0
    brake = (float(out[2]) + 100.0) / 200.0
    return ControlCommand(steer, throttle, brake)


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ModelConfig:
    input_width: int = 64
    input_height: int = 36
    base_channels: int = 16
    stage_blocks: tuple = (2, 2, 2, 2)
    fc_dim: int = 64
    velocity_input: bool = True
    head: str = "classification"  # or "regression"

    def __post_init__(self):
        if (self.input_width, self.input_height) not in ((64, 36), (160, 90), (320, 180)):
            raise ModelError(f"unsupported input size {self.input_width}x{self.input_height}")
        if self.head not in ("classification", "regression"):
            raise ModelError("head must be 'classification' or 'regression'")
        if self.base_channels < 1 or self.fc_dim < 1 or len(self.stage_blocks) != 4:
            raise ModelError("invalid architecture config")
        object.__setattr__(self, "stage_blocks", tuple(int(b) for b in self.stage_blocks))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_blocks"] = list(self.stage_blocks)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["stage_blocks"] = tuple(d["stage_blocks"])
        return cls(**d)


# ---------------------------------------------------------------------------
# layers


class _Conv:
    def __init__(self, rng, name, c_in, c_out, k, stride=1):
        fan_in = c_in * k * k
        self.weight = Tensor(
            (rng.standard_normal((c_out, c_in, k, k)) * math.sqrt(2.0 / fan_in)).astype(np.float32),
            requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(np.zeros(c_out, np.float32), requires_grad=True, name=f"{name}.bias")
        self.stride = stride
        self.padding = k // 2

    def __call__(self, x):
        return ad.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    def params(self):
        return [self.weight, self.bias]


class _BatchNorm:
    def __init__(self, name, c):
        self.gamma = Tensor(np.ones(c, np.float32), requires_grad=True, name=f"{name}.gamma")
        self.beta = Tensor(np.zeros(c, np.float32), requires_grad=True, name=f"{name}.beta")
        self.running_mean = np.zeros(c, np.float32)
        self.running_var = np.ones(c, np.float32)
        self.name = name

    def __call__(self, x, training):
        return ad.batchnorm2d(x, self.gamma, self.beta,
                              self.running_mean, self.running_var, training)

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {f"{self.name}.running_mean": self.running_mean,
                f"{self.name}.running_var": self.running_var}


class _Linear:
    def __init__(self, rng, name, d_in, d_out):
        self.weight = Tensor(
            (rng.standard_normal((d_out, d_in)) * math.sqrt(2.0 / d_in)).astype(np.float32),
            requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(np.zeros(d_out, np.float32), requires_grad=True, name=f"{name}.bias")

    def __call__(self, x):
        return ad.linear(x, self.weight, self.bias)

    def params(self):
        return [self.weight, self.bias]


class _BasicBlock:
    def __init__(self, rng, name, c_in, c_out, stride):
        self.conv1 = _Conv(rng, f"{name}.conv1", c_in, c_out, 3, stride)
        self.bn1 = _BatchNorm(f"{name}.bn1", c_out)
        self.conv2 = _Conv(rng, f"{name}.conv2", c_out, c_out, 3, 1)
        self.bn2 = _BatchNorm(f"{name}.bn2", c_out)
        if stride != 1 or c_in != c_out:
            self.short_conv = _Conv(rng, f"{name}.short", c_in, c_out, 1, stride)
            self.short_bn = _BatchNorm(f"{name}.short_bn", c_out)
        else:
            self.short_conv = None
            self.short_bn = None

    def __call__(self, x, training):
        y = ad.relu(self.bn1(self.conv1(x), training))
        y = self.bn2(self.conv2(y), training)
        if self.short_conv is not None:
            x = self.short_bn(self.short_conv(x), training)
        return ad.relu(ad.add(y, x))

    def modules(self):
        mods = [self.conv1, self.bn1, self.conv2, self.bn2]
        if self.short_conv is not None:
            mods += [self.short_conv, self.short_bn]
        return mods


# ---------------------------------------------------------------------------
# model


class DrivingModel:
    """Residual classifier (or regressor) over hood-camera frames.

    forward() takes frames already normalized per the dataset manifest,
    shaped (N, H, W, 1) float32 (channels last), plus velocity in mph shaped
    (N, 1).
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        c = config.base_channels
        large = config.input_width > 64
        # stem halves the resolution via pooling (plus a strided conv for the
        # large inputs) before the residual stages, like the usual resnet stem
        self.stem = _Conv(rng, "stem", 1, c, 3, stride=2 if large else 1)
        self.stem_bn = _BatchNorm("stem_bn", c)
        self.stem_pool = True
        self.stages: list[list[_BasicBlock]] = []
        c_in = c
        for si, n_blocks in enumerate(config.stage_blocks):
            c_out = c * (2 ** si)
            blocks = []
            for bi in range(n_blocks):
                stride = 2 if (bi == 0 and si > 0) else 1
                blocks.append(_BasicBlock(rng, f"stage{si}.block{bi}", c_in, c_out, stride))
                c_in = c_out
            self.stages.append(blocks)
        feat = c_in + (1 if config.velocity_input else 0)
        self.fc1 = _Linear(rng, "fc1", feat, config.fc_dim)
        if config.head == "classification":
            self.head_steer = _Linear(rng, "head_steer", config.fc_dim, N_STEER_BUCKETS)
            self.head_accel = _Linear(rng, "head_accel", config.fc_dim, N_ACCEL_CLASSES)
        else:
            self.head_reg = _Linear(rng, "head_reg", config.fc_dim, 3)

    # -- structure ----------------------------------------------------------

    def _modules(self):
        mods = [self.stem, self.stem_bn]
        for blocks in self.stages:
            for b in blocks:
                mods.extend(b.modules())
        mods.append(self.fc1)
        if self.config.head == "classification":
            mods += [self.head_steer, self.head_accel]
        else:
            mods.append(self.head_reg)
        return mods

    def parameters(self) -> list[Tensor]:
        out = []
        for m in self._modules():
            out.extend(m.params())
        return out

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def state_tensors(self) -> dict[str, np.ndarray]:
        state = {p.name: p.data for p in self.parameters()}
        for m in self._modules():
            if isinstance(m, _BatchNorm):
                state.update(m.buffers())
        return state

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        own = self.state_tensors()
        if set(own) != set(tensors):
            missing = set(own) ^ set(tensors)
            raise ModelError(f"state tensor names do not match: {sorted(missing)[:5]}")
        for p in self.parameters():
            if p.data.shape != tensors[p.name].shape:
                raise ModelError(f"shape mismatch for {p.name}")
            p.data = tensors[p.name].astype(np.float32).copy()
        for m in self._modules():
            if isinstance(m, _BatchNorm):
                m.running_mean[:] = tensors[f"{m.name}.running_mean"]
                m.running_var[:] = tensors[f"{m.name}.running_var"]

    # -- forward ------------------------------------------------------------

    def forward(self, frames: np.ndarray, velocity_mph: np.ndarray, training: bool = False):
        """Returns (steer_logits, accel_logits) Tensors, or a single (N, 3)
        Tensor for the regression head."""
        x = self.forward_features(Tensor(np.asarray(frames, np.float32)),
                                  velocity_mph, training)
        if self.config.head == "classification":
            return self.head_steer(x), self.head_accel(x)
        return self.head_reg(x)

    def forward_features(self, frames: Tensor, velocity_mph: np.ndarray, training: bool):
        n = frames.data.shape[0]
        expected = (n, self.config.input_height, self.config.input_width, 1)
        if frames.data.shape != expected:
            raise ModelError(f"frames shape {frames.data.shape}, expected {expected}")
        x = ad.relu(self.stem_bn(self.stem(frames), training))
        if self.stem_pool:
            x = ad.max_pool2d(x)
        for blocks in self.stages:
            for b in blocks:
                x = b(x, training)
        x = ad.global_avg_pool(x)
        if self.config.velocity_input:
            vel = np.asarray(velocity_mph, np.float32).reshape(n, 1) / VELOCITY_SCALE_MPH
            x = ad.concat(x, Tensor(vel), axis=1)
        return ad.relu(self.fc1(x))

    def loss(self, outputs, steer_targets: np.ndarray, accel_targets: np.ndarray):
        """Summed cross-entropy over both heads (classification)."""
        steer_logits, accel_logits = outputs
        return ad.add(ad.softmax_cross_entropy(steer_logits, steer_targets),
                      ad.softmax_cross_entropy(accel_logits, accel_targets))

    def predict(self, frames: np.ndarray, velocity_mph: np.ndarray):
        """Argmax classes: (steer_buckets, accel_classes) int arrays."""
        steer_logits, accel_logits = self.forward(frames, velocity_mph, training=False)
        return steer_logits.data.argmax(axis=1), accel_logits.data.argmax(axis=1)

    # -- persistence --------------------------------------------------------

    def save(self, path, sidecar_extra: dict | None = None) -> None:
        ad.save_checkpoint(path, self.state_tensors(), self.config.to_dict(), sidecar_extra)

    @classmethod
    def load(cls, path) -> tuple["DrivingModel", dict]:
        tensors, sidecar = ad.load_checkpoint(path)
        model = cls(ModelConfig.from_dict(sidecar["config"]))
        model.load_state(tensors)
        return model, sidecar


# ---------------------------------------------------------------------------
# saliency


def saliency(model: DrivingModel, frame: np.ndarray, velocity_mph: float,
             accel_logit: int = ACCEL_THROTTLE) -> np.ndarray:
    """Vanilla-gradient saliency of one accel logit w.r.t. the input frame.

    Returns an (H, W) nonnegative map normalized to unit sum.
    """
    if model.config.head != "classification":
        raise ModelError("saliency requires the classification head")
    h, w = model.config.input_height, model.config.input_width
    inp = Tensor(np.asarray(frame, np.float32).reshape(1, h, w, 1))
    with Graph() as g:
        feats = model.forward_features(inp, np.array([velocity_mph]), training=False)
        logits = model.head_accel(feats)
        seed_grad = np.zeros_like(logits.data)
        seed_grad[0, accel_logit] = 1.0
        g.backward_from(logits, seed_grad)
    grad = np.abs(inp.grad[0, :, :, 0])
    total = grad.sum()
    if total > 0:
        grad = grad / total
    return grad
