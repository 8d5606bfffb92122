"""Minimal tensor engine: autodiff tape, AdamW, checkpoints, seeded RNG."""
from __future__ import annotations

import contextlib
import os

from .checkpoint import CheckpointError, load_arrays, save_arrays
from .optim import AdamW, OptimizerState, cosine_lr
from .rng import derive_seed, stream
from .tensor import (
    ShapeError,
    Tensor,
    add,
    gelu,
    layer_norm,
    matmul,
    mse,
    mul,
    reshape,
    scale,
    silu,
    softmax,
    transpose,
)


@contextlib.contextmanager
def strict_mode():
    """Pin BLAS to one thread so reductions run in a fixed order."""
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield


def thread_cap() -> int | None:
    raw = os.environ.get("PHYSLAW_THREADS")
    return int(raw) if raw else None


__all__ = [
    "AdamW", "CheckpointError", "OptimizerState", "ShapeError", "Tensor",
    "add", "cosine_lr", "derive_seed", "gelu", "layer_norm", "load_arrays",
    "matmul", "mse", "mul", "reshape", "save_arrays", "scale", "silu",
    "softmax", "stream", "strict_mode", "thread_cap", "transpose",
]
