"""Adam with decoupled weight decay, and a plateau learning-rate schedule."""

from __future__ import annotations

import math

import numpy as np

from ..errors import NumericalError, ValidationError


def adam_update(params, grads, lr, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam step over ``grads``; mutates ``params`` in place and returns it.

    Weight decay is decoupled (applied directly to the weights, not folded
    into the gradient) and only touches convolution/dense kernels; biases
    and batch-norm scale/shift are exempt.
    """
    params.step += 1
    t = params.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, g in grads.items():
        lo, hi = g.min(), g.max()
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise NumericalError(f"non-finite gradient for {name}")
        p = params.tensors[name]
        m = params.opt_m[name]
        v = params.opt_v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if weight_decay and name.endswith(".w"):
            p -= lr * weight_decay * p
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params


class PlateauScheduler:
    """Cut the learning rate by ``factor`` after ``patience`` consecutive
    epochs without validation improvement; signal a stop once the next cut
    would fall below ``min_lr``.

    Improvement means the validation loss dropped strictly below the best
    seen so far minus ``min_delta``.  ``baseline`` seeds the best-seen value
    (typically the untrained model's validation loss) so the very first
    epoch competes against it.
    """

    def __init__(self, initial_lr, factor=0.1, patience=7, min_lr=1e-7,
                 min_delta=1e-6, baseline=math.inf):
        if not 0.0 < factor < 1.0:
            raise ValidationError("lr factor must be in (0, 1)")
        if min_lr >= initial_lr:
            raise ValidationError("min_lr must be below the initial lr")
        if patience < 1:
            raise ValidationError("patience must be >= 1")
        self.initial_lr = initial_lr
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.min_delta = min_delta
        self.best = baseline
        self.n_drops = 0
        self.stale = 0
        self.stopped = False

    @property
    def lr(self) -> float:
        # recomputed from the drop count so repeated multiplication cannot drift
        return self.initial_lr * self.factor**self.n_drops

    def step(self, val_loss) -> None:
        if self.stopped:
            return
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.stale = 0
            return
        self.stale += 1
        if self.stale >= self.patience:
            if self.initial_lr * self.factor ** (self.n_drops + 1) < self.min_lr:
                self.stopped = True
            else:
                self.n_drops += 1
                self.stale = 0
