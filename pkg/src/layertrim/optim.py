"""Lion optimizer with decoupled weight decay and a warmup-to-cosine
learning-rate schedule keyed to the token clock.

Weight decay is masked off for bias and normalization parameters, which in
this codebase are exactly the parameters named ``*.bias`` and ``*.gain``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

logger = logging.getLogger(__name__)

NO_DECAY_SUFFIXES = (".bias", ".gain")


def decay_enabled(name: str) -> bool:
    return not name.endswith(NO_DECAY_SUFFIXES)


class Lion:
    """Sign-momentum optimizer.

    Per parameter with gradient g and momentum m:
        c = beta1 * m + (1 - beta1) * g
        p <- p - lr * (sign(c) + wd * p)      (decay term masked per group)
        m <- beta2 * m + (1 - beta2) * g
    sign(0) is 0, so dead coordinates do not drift.
    """

    def __init__(
        self,
        named_params: list[tuple[str, Tensor]],
        beta1: float = 0.9,
        beta2: float = 0.95,
        weight_decay: float = 1e-4,
    ):
        if not (0.0 <= beta1 <= 1.0 and 0.0 <= beta2 <= 1.0):
            raise ValueError("betas must lie in [0, 1]")
        self.beta1 = beta1
        self.beta2 = beta2
        self.weight_decay = weight_decay
        self.slots: list[tuple[str, Tensor, np.ndarray, bool]] = [
            (name, p, np.zeros_like(p.data), decay_enabled(name)) for name, p in named_params
        ]

    def step(self, lr: float) -> None:
        b1, b2, wd = self.beta1, self.beta2, self.weight_decay
        for _, p, m, decayed in self.slots:
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
            update = np.sign(b1 * m + (1.0 - b1) * g)
            if decayed and wd != 0.0:
                update = update + wd * p.data
            p.data -= np.asarray(lr, dtype=p.data.dtype) * update
            m *= b2
            m += (1.0 - b2) * g

    def zero_grad(self) -> None:
        for _, p, _, _ in self.slots:
            p.grad = None

    def named_state(self) -> list[tuple[str, np.ndarray]]:
        return [(f"opt.m.{name}", m) for name, _, m, _ in self.slots]

    def load_state(self, blobs: dict[str, np.ndarray]) -> None:
        for name, p, m, _ in self.slots:
            key = f"opt.m.{name}"
            if key not in blobs:
                raise KeyError(f"optimizer state missing {key}")
            src = blobs[key]
            if src.shape != m.shape:
                raise ValueError(f"optimizer state {key} shape {src.shape} != {m.shape}")
            m[...] = src.astype(m.dtype, copy=False)


@dataclass
class LrSchedule:
    """Linear warmup to peak_lr over warmup_tokens, then cosine decay to
    final_fraction * peak_lr at total_tokens."""

    peak_lr: float
    warmup_tokens: int
    total_tokens: int
    final_fraction: float = 0.1
    _clamp_logged: bool = False

    def violations(self) -> list[str]:
        out = []
        if self.peak_lr <= 0:
            out.append(f"optim.peak_lr must be positive, got {self.peak_lr}")
        if self.warmup_tokens < 0:
            out.append(f"optim.warmup_tokens must be non-negative, got {self.warmup_tokens}")
        if self.total_tokens <= 0:
            out.append(f"run.total_tokens must be positive, got {self.total_tokens}")
        if self.warmup_tokens > self.total_tokens:
            out.append(
                f"optim.warmup_tokens={self.warmup_tokens} exceeds total_tokens={self.total_tokens}"
            )
        if not (0.0 <= self.final_fraction <= 1.0):
            out.append(f"optim.final_fraction must lie in [0, 1], got {self.final_fraction}")
        return out

    def lr_at(self, tokens: int) -> float:
        if tokens < 0:
            raise ValueError("tokens must be non-negative")
        if tokens > self.total_tokens:
            if not self._clamp_logged:
                logger.warning(
                    "lr queried past total_tokens (%d > %d); clamping to final value",
                    tokens,
                    self.total_tokens,
                )
                self._clamp_logged = True
            return self.final_fraction * self.peak_lr
        if self.warmup_tokens > 0 and tokens < self.warmup_tokens:
            return self.peak_lr * tokens / self.warmup_tokens
        span = self.total_tokens - self.warmup_tokens
        if span == 0:
            return self.peak_lr
        progress = (tokens - self.warmup_tokens) / span
        cosine = 0.5 * (1.0 + math.cos(math.pi * progress))
        return self.peak_lr * (self.final_fraction + (1.0 - self.final_fraction) * cosine)
