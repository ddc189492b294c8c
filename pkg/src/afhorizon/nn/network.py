"""Residual 1-D convolutional classifier over (12, 4096) ECG tensors.

Topology: stem convolution (+ batch norm, ReLU), then residual blocks of two
convolutions with batch norm and ReLU, a 1x1 projection on the skip path
whenever channel count or temporal length changes, dropout after each
block's output activation, then global average pooling and a dense layer
whose softmax yields the three class probabilities (NoAF, WithAF, FutureAF).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ..cohort import Label
from ..errors import NumericalError, ValidationError
from . import layers as L

CLASS_ORDER = (Label.NOAF, Label.WITHAF, Label.FUTUREAF)
CLASS_INDEX = {label: i for i, label in enumerate(CLASS_ORDER)}


class ClassProbs(NamedTuple):
    p_noaf: float
    p_withaf: float
    p_futureaf: float


@dataclass(frozen=True)
class NetConfig:
    """Architecture hyperparameters; the default is the desk-scale network.

    The full-scale variant remains constructible, e.g.
    ``NetConfig(block_channels=(64, 128, 196, 256, 320), downsample=(4, 4, 4, 4, 4),
    kernel_size=16)`` for a five-block network.
    """

    n_leads: int = 12
    input_len: int = 4096
    n_classes: int = 3
    stem_channels: int = 16
    block_channels: tuple[int, ...] = (16, 32)
    kernel_size: int = 17
    downsample: tuple[int, ...] = (2, 2)
    dropout: float = 0.5
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5

    def __post_init__(self):
        if isinstance(self.downsample, int):
            object.__setattr__(
                self, "downsample", (self.downsample,) * len(self.block_channels)
            )
        object.__setattr__(self, "block_channels", tuple(self.block_channels))
        object.__setattr__(self, "downsample", tuple(self.downsample))
        if len(self.downsample) != len(self.block_channels):
            raise ValidationError("downsample must give one factor per block")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError("dropout must be in [0, 1)")
        if self.kernel_size < 1 or self.stem_channels < 1 or self.n_classes < 2:
            raise ValidationError("bad architecture sizes")
        length = self.input_len
        for ds in self.downsample:
            length = -(-length // ds)
        if length < 4:
            raise ValidationError(
                f"downsampling leaves only {length} time steps (< 4)"
            )

    @property
    def n_residual_blocks(self) -> int:
        return len(self.block_channels)


@dataclass
class ModelParams:
    """Named parameter tensors plus Adam state; the serializable model unit."""

    config: NetConfig
    tensors: dict[str, np.ndarray]
    step: int = 0
    opt_m: dict[str, np.ndarray] = field(default_factory=dict)
    opt_v: dict[str, np.ndarray] = field(default_factory=dict)

    def trainable_names(self) -> list[str]:
        return [n for n in self.tensors if not n.endswith(("running_mean", "running_var"))]

    def n_parameters(self) -> int:
        return sum(self.tensors[n].size for n in self.trainable_names())

    def copy(self) -> "ModelParams":
        return ModelParams(
            config=self.config,
            tensors={k: v.copy() for k, v in self.tensors.items()},
            step=self.step,
            opt_m={k: v.copy() for k, v in self.opt_m.items()},
            opt_v={k: v.copy() for k, v in self.opt_v.items()},
        )


def _block_specs(cfg: NetConfig):
    """(name, c_in, c_out, stride, needs_projection) per residual block."""
    specs = []
    c_in = cfg.stem_channels
    for i, (c_out, ds) in enumerate(zip(cfg.block_channels, cfg.downsample)):
        specs.append((f"block{i}", c_in, c_out, ds, (c_in != c_out or ds != 1)))
        c_in = c_out
    return specs


def init_params(cfg: NetConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    """He-initialized weights, unit batch-norm scales, zeroed Adam moments."""
    rng = np.random.default_rng([seed, 0x11717])
    tensors: dict[str, np.ndarray] = {}

    def conv(name, c_in, c_out, kernel, bias):
        std = math.sqrt(2.0 / (c_in * kernel))
        tensors[f"{name}.w"] = (rng.standard_normal((c_out, c_in, kernel)) * std).astype(dtype)
        if bias:
            tensors[f"{name}.b"] = np.zeros(c_out, dtype=dtype)

    def bn(name, channels):
        tensors[f"{name}.gamma"] = np.ones(channels, dtype=dtype)
        tensors[f"{name}.beta"] = np.zeros(channels, dtype=dtype)
        tensors[f"{name}.running_mean"] = np.zeros(channels, dtype=dtype)
        tensors[f"{name}.running_var"] = np.ones(channels, dtype=dtype)

    # convolutions followed by batch norm are bias-free (the bias would be
    # canceled by mean subtraction); the skip projection keeps its bias
    conv("stem.conv", cfg.n_leads, cfg.stem_channels, cfg.kernel_size, bias=False)
    bn("stem.bn", cfg.stem_channels)
    for name, c_in, c_out, _, needs_proj in _block_specs(cfg):
        conv(f"{name}.conv1", c_in, c_out, cfg.kernel_size, bias=False)
        bn(f"{name}.bn1", c_out)
        conv(f"{name}.conv2", c_out, c_out, cfg.kernel_size, bias=False)
        bn(f"{name}.bn2", c_out)
        if needs_proj:
            conv(f"{name}.proj", c_in, c_out, 1, bias=True)
    last = cfg.block_channels[-1] if cfg.block_channels else cfg.stem_channels
    std = math.sqrt(2.0 / last)
    tensors["head.dense.w"] = (rng.standard_normal((cfg.n_classes, last)) * std).astype(dtype)
    tensors["head.dense.b"] = np.zeros(cfg.n_classes, dtype=dtype)

    params = ModelParams(config=cfg, tensors=tensors)
    for name in params.trainable_names():
        params.opt_m[name] = np.zeros_like(tensors[name])
        params.opt_v[name] = np.zeros_like(tensors[name])
    return params


def _ensure_finite(name: str, arr: np.ndarray) -> None:
    lo, hi = arr.min(), arr.max()
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise NumericalError(f"non-finite activation after layer {name}")


class _Tape:
    """Forward bookkeeping for one pass; consumed by the backward sweep."""

    def __init__(self, params, training, rng, update_running):
        self.t = params.tensors
        self.cfg = params.config
        self.training = training
        self.rng = rng
        self.update_running = update_running
        self.caches: dict[str, object] = {}

    def conv(self, name, x, stride=1):
        w = self.t[f"{name}.w"]
        if x.shape[1] != w.shape[1]:
            raise ValidationError(
                f"layer {name}: expected {w.shape[1]} input channels, got {x.shape[1]}"
            )
        y, cache = L.conv1d_forward(x, w, self.t.get(f"{name}.b"), stride)
        self.caches[name] = cache
        _ensure_finite(name, y)
        return y

    def conv_back(self, name, dy, grads):
        dx, dw, db = L.conv1d_backward(dy, self.caches[name])
        grads[f"{name}.w"] = dw
        if db is not None:
            grads[f"{name}.b"] = db
        return dx

    def bn(self, name, x):
        cfg = self.cfg
        y, cache, (mean, var) = L.batchnorm_forward(
            x,
            self.t[f"{name}.gamma"],
            self.t[f"{name}.beta"],
            self.t[f"{name}.running_mean"],
            self.t[f"{name}.running_var"],
            cfg.bn_momentum,
            cfg.bn_eps,
            self.training,
        )
        if self.training and self.update_running:
            m = cfg.bn_momentum
            rm, rv = self.t[f"{name}.running_mean"], self.t[f"{name}.running_var"]
            rm *= m
            rm += (1.0 - m) * mean.astype(rm.dtype)
            rv *= m
            rv += (1.0 - m) * var.astype(rv.dtype)
        self.caches[name] = cache
        _ensure_finite(name, y)
        return y

    def bn_back(self, name, dy, grads):
        dx, dgamma, dbeta = L.batchnorm_backward(dy, self.caches[name])
        grads[f"{name}.gamma"] = dgamma
        grads[f"{name}.beta"] = dbeta
        return dx

    def relu(self, name, x):
        y, cache = L.relu_forward(x)
        self.caches[name] = cache
        return y

    def relu_back(self, name, dy):
        return L.relu_backward(dy, self.caches[name])

    def dropout(self, name, x):
        y, mask = L.dropout_forward(x, self.cfg.dropout, self.rng, self.training)
        self.caches[name] = mask
        return y

    def dropout_back(self, name, dy):
        return L.dropout_backward(dy, self.caches[name])


def _forward_logits(params, x, training, rng, update_running):
    cfg = params.config
    if x.ndim != 3 or x.shape[1] != cfg.n_leads or x.shape[2] != cfg.input_len:
        raise ValidationError(
            f"layer stem.conv: expected input (batch, {cfg.n_leads}, {cfg.input_len}),"
            f" got {tuple(x.shape)}"
        )
    if training and cfg.dropout > 0.0 and rng is None:
        raise ValidationError("training-mode forward with dropout needs an rng")
    tape = _Tape(params, training, rng, update_running)

    h = tape.conv("stem.conv", x)
    h = tape.bn("stem.bn", h)
    h = tape.relu("stem.relu", h)
    for name, _, _, stride, needs_proj in _block_specs(cfg):
        identity = h
        m = tape.conv(f"{name}.conv1", h, stride)
        m = tape.bn(f"{name}.bn1", m)
        m = tape.relu(f"{name}.relu1", m)
        m = tape.conv(f"{name}.conv2", m)
        m = tape.bn(f"{name}.bn2", m)
        if needs_proj:
            identity = tape.conv(f"{name}.proj", identity, stride)
        s = m + identity
        s = tape.relu(f"{name}.relu2", s)
        h = tape.dropout(f"{name}.dropout", s)
    pooled, pool_shape = L.global_avg_pool_forward(h)
    tape.caches["head.pool"] = pool_shape
    logits, dense_cache = L.dense_forward(
        pooled, params.tensors["head.dense.w"], params.tensors["head.dense.b"]
    )
    tape.caches["head.dense"] = dense_cache
    _ensure_finite("head.dense", logits)
    return logits, tape


def forward(params, batch, training_mode=False, rng=None):
    """Class probabilities (batch, n_classes); eval mode is deterministic."""
    logits, _ = _forward_logits(params, batch, training_mode, rng, update_running=False)
    return L.softmax(logits)


def loss_and_grad(params, batch, labels, rng=None, update_running=True):
    """Mean cross-entropy and exact gradients for every trainable tensor."""
    labels = np.asarray(labels)
    if batch.shape[0] == 0:
        raise ValidationError("empty batch")
    if labels.shape[0] != batch.shape[0]:
        raise ValidationError("labels do not match batch size")
    logits, tape = _forward_logits(params, batch, True, rng, update_running)
    loss, _, dlogits = L.softmax_cross_entropy(logits, labels)
    if not math.isfinite(loss):
        raise NumericalError("non-finite loss")

    grads: dict[str, np.ndarray] = {}
    cfg = params.config
    dy, dw, db = L.dense_backward(
        dlogits, tape.caches["head.dense"], params.tensors["head.dense.w"]
    )
    grads["head.dense.w"] = dw
    grads["head.dense.b"] = db
    dy = L.global_avg_pool_backward(dy, tape.caches["head.pool"])
    for name, _, _, _, needs_proj in reversed(_block_specs(cfg)):
        dy = tape.dropout_back(f"{name}.dropout", dy)
        dy = tape.relu_back(f"{name}.relu2", dy)
        d_identity = dy
        dm = tape.bn_back(f"{name}.bn2", dy, grads)
        dm = tape.conv_back(f"{name}.conv2", dm, grads)
        dm = tape.relu_back(f"{name}.relu1", dm)
        dm = tape.bn_back(f"{name}.bn1", dm, grads)
        dm = tape.conv_back(f"{name}.conv1", dm, grads)
        if needs_proj:
            d_identity = tape.conv_back(f"{name}.proj", d_identity, grads)
        dy = dm + d_identity
    dy = tape.relu_back("stem.relu", dy)
    dy = tape.bn_back("stem.bn", dy, grads)
    tape.conv_back("stem.conv", dy, grads)
    return loss, grads


def predict_proba(params, tensors, batch_size=64):
    """Eval-mode probabilities for (N, leads, len) input, in batches."""
    out = []
    for start in range(0, tensors.shape[0], batch_size):
        out.append(forward(params, tensors[start : start + batch_size]))
    return np.concatenate(out, axis=0)


def probs_row(row) -> ClassProbs:
    return ClassProbs(float(row[0]), float(row[1]), float(row[2]))
