"""AdamW with decoupled weight decay and a cosine learning-rate schedule."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

log = logging.getLogger(__name__)


def cosine_lr(step: int, peak: float, total_steps: int, warmup: int = 0, floor: float = 0.0) -> float:
    """Learning rate for 1-based ``step``: optional linear warmup, then cosine decay to ``floor``."""
    if warmup > 0 and step <= warmup:
        return peak * step / warmup
    if total_steps <= warmup:
        return peak
    progress = min(1.0, (step - warmup) / max(1, total_steps - warmup))
    return floor + (peak - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimizerState:
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


class AdamW:
    """AdamW (Loshchilov & Hutter) over a name -> Tensor mapping.

    ``step`` refuses to touch any parameter when a gradient is non-finite and
    returns False; the caller decides whether to skip or abort.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
        total_steps: int = 1,
        warmup: int = 0,
        schedule: str = "cosine",
    ):
        self.params = params
        self.peak_lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.total_steps = max(1, int(total_steps))
        self.warmup = warmup
        self.schedule = schedule
        self.state = OptimizerState(
            first_moment={k: np.zeros_like(p.data) for k, p in params.items()},
            second_moment={k: np.zeros_like(p.data) for k, p in params.items()},
        )

    def lr_at(self, step: int) -> float:
        if self.schedule == "constant":
            return self.peak_lr
        return cosine_lr(step, self.peak_lr, self.total_steps, self.warmup)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> bool:
        for name, p in self.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                log.warning("non-finite gradient in %s at step %d; update refused",
                            name, self.state.step_count + 1)
                return False
        st = self.state
        st.step_count += 1
        t = st.step_count
        lr = self.lr_at(t)
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            g = g.astype(p.dtype, copy=False)
            m = st.first_moment[name]
            v = st.second_moment[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= (lr * update).astype(p.dtype, copy=False)
        return True

    @property
    def current_lr(self) -> float:
        return self.lr_at(max(1, self.state.step_count))
