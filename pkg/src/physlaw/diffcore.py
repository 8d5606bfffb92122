"""Pixel-space video diffusion with velocity targets and frame conditioning.

Step indices run 1..T. ``gamma[t-1]`` is the signal fraction at step t; it
starts just below 1 and reaches exactly 0 at t = T, so the last corrupted
sample is pure noise.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .numkit import AdamW, Tensor, mse, strict_mode
from .numkit.rng import stream

log = logging.getLogger(__name__)

GAMMA_FIRST = 1.0 - 1e-5
CONVENTIONS = ("standard", "swapped")


class NonFiniteLoss(FloatingPointError):
    def __init__(self, t, batch_id):
        super().__init__(f"non-finite loss in batch {batch_id} (steps {list(np.ravel(t))})")
        self.t = t
        self.batch_id = batch_id


# -- schedule --------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    gamma: np.ndarray  # float64, length T

    def at(self, t) -> np.ndarray:
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.T):
            raise ValueError(f"step outside 0..{self.T}")
        # t = 0 means clean data
        return np.where(t == 0, 1.0, self.gamma[np.clip(t, 1, self.T) - 1])

    def snr(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.where(self.gamma < 1, self.gamma / np.maximum(1.0 - self.gamma, 1e-300), np.inf)


def make_schedule(T: int = 1000, kind: str = "cosine", s: float = 0.008) -> NoiseSchedule:
    """Signal fractions with zero terminal SNR.

    The base curve's square root is shifted to end at 0 and rescaled so the
    first step keeps ``1 - 1e-5`` of the signal.
    """
    if T < 2:
        raise ValueError("T must be at least 2")
    u = np.arange(1, T + 1, dtype=np.float64) / T
    if kind == "cosine":
        base = np.cos((u + s) / (1 + s) * math.pi / 2) ** 2
    elif kind == "linear":
        betas = np.linspace(1e-4, 0.02, T)
        base = np.cumprod(1.0 - betas)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    r = np.sqrt(np.clip(base, 0.0, 1.0))
    r = (r - r[-1]) / (r[0] - r[-1]) * math.sqrt(GAMMA_FIRST)
    g = r * r
    g[-1] = 0.0
    return NoiseSchedule(T, g)


# -- algebra ---------------------------------------------------------------------

def _coef(gamma, convention: str = "standard"):
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}")
    gamma = np.asarray(gamma, dtype=np.float64)
    return np.sqrt(gamma), np.sqrt(1.0 - gamma)


def _bcast(c, ndim):
    c = np.asarray(c)
    return c.reshape(c.shape + (1,) * (ndim - c.ndim)) if c.ndim else c


def forward_corrupt(V, gamma, eps, convention: str = "standard"):
    a, b = _coef(gamma, convention)
    V = np.asarray(V)
    a, b = _bcast(a, V.ndim), _bcast(b, V.ndim)
    return (a * V + b * np.asarray(eps)).astype(V.dtype if V.dtype.kind == "f" else np.float64)


def velocity_target(V, eps, gamma, convention: str = "standard"):
    a, b = _coef(gamma, convention)
    V = np.asarray(V)
    a, b = _bcast(a, V.ndim), _bcast(b, V.ndim)
    if convention == "swapped":
        return (b * np.asarray(eps) - a * V).astype(V.dtype if V.dtype.kind == "f" else np.float64)
    return (a * np.asarray(eps) - b * V).astype(V.dtype if V.dtype.kind == "f" else np.float64)


def recover_from_v(Vt, y, gamma, convention: str = "standard"):
    """Return (V_hat, eps_hat).

    The standard pair is an exact rotation (a^2 + b^2 = 1). The swapped pair
    solves a 2x2 system whose determinant 2ab vanishes at both ends of the
    schedule, so it is only invertible for 0 < gamma < 1.
    """
    a, b = _coef(gamma, convention)
    Vt, y = np.asarray(Vt), np.asarray(y)
    a, b = _bcast(a, Vt.ndim), _bcast(b, Vt.ndim)
    if convention == "swapped":
        if np.any(a == 0) or np.any(b == 0):
            raise ValueError("swapped convention is singular at gamma 0 or 1")
        return (Vt - y) / (2 * a), (Vt + y) / (2 * b)
    return a * Vt - b * y, b * Vt + a * y


# -- conditioning ----------------------------------------------------------------

def to_unit(video_u8: np.ndarray) -> np.ndarray:
    return np.asarray(video_u8, np.float32) / 127.5 - 1.0


def to_u8(video: np.ndarray) -> np.ndarray:
    return np.rint((np.clip(video, -1.0, 1.0) + 1.0) * 127.5).astype(np.uint8)


@dataclass
class ConditionedBatch:
    video: np.ndarray      # (B, L, H, W, 3) in [-1, 1]
    condition: np.ndarray  # same shape, zero past frame c
    mask: np.ndarray       # same shape, 1 on the first c frames
    c: int

    @property
    def frame_weight(self) -> np.ndarray:
        """(1, L, 1, 1, 1) loss weight: 1 on generated frames only."""
        L = self.video.shape[1]
        w = np.ones((1, L, 1, 1, 1), np.float32)
        w[:, : self.c] = 0.0
        return w

    def model_input(self, Vt: np.ndarray) -> np.ndarray:
        return np.concatenate([Vt, self.condition, self.mask], axis=-1).astype(np.float32)


def build_condition(V: np.ndarray, c: int) -> ConditionedBatch:
    V = np.asarray(V, np.float32)
    if V.ndim == 4:
        V = V[None]
    L = V.shape[1]
    if not 1 <= c <= L:
        raise ValueError(f"condition length {c} outside 1..{L}")
    mask = np.zeros_like(V)
    mask[:, :c] = 1.0
    return ConditionedBatch(V, V * mask, mask, c)


# -- training --------------------------------------------------------------------

T_SAMPLING = ("noise", "uniform")


def draw_noise(rng: np.random.Generator, schedule: NoiseSchedule, shape,
               kind: str = "noise") -> tuple[np.ndarray, np.ndarray]:
    """Draw steps and unit noise for a batch.

    ``kind="uniform"`` draws t uniformly from 1..T. ``kind="noise"`` draws t
    with probability proportional to the noise fraction 1 - gamma_t, which
    rarely visits the nearly clean steps where the target is mostly noise.
    """
    if kind == "uniform":
        t = rng.integers(1, schedule.T + 1, size=shape[0])
    elif kind == "noise":
        cdf = np.cumsum(1.0 - schedule.gamma)
        t = np.searchsorted(cdf, rng.random(shape[0]) * cdf[-1], side="right") + 1
        t = np.minimum(t, schedule.T)
    else:
        raise ValueError(f"unknown t sampling {kind!r}; choose from {T_SAMPLING}")
    eps = rng.standard_normal(shape).astype(np.float32)
    return t, eps


def training_loss(model, batch: ConditionedBatch, schedule: NoiseSchedule, t: np.ndarray, eps: np.ndarray,
                  convention: str = "standard", batch_id=None) -> Tensor:
    g = schedule.at(t)
    Vt = forward_corrupt(batch.video, g, eps, convention)
    y = velocity_target(batch.video, eps, g, convention).astype(np.float32)
    pred = model(Tensor(batch.model_input(Vt)), t.astype(np.float64), gamma=g)
    if batch.c >= batch.video.shape[1]:
        raise ValueError("every frame is conditioned; nothing to learn")
    loss = mse(pred, Tensor(y), weight=batch.frame_weight)
    if not np.isfinite(loss.item()):
        raise NonFiniteLoss(t, batch_id)
    return loss


def training_step(model, batch: ConditionedBatch, schedule: NoiseSchedule, rng: np.random.Generator,
                  optimizer: AdamW | None = None, convention: str = "standard", batch_id=None,
                  noise: tuple[np.ndarray, np.ndarray] | None = None, t_sampling: str = "noise") -> float:
    """One gradient step; returns the masked v-loss. ``noise`` pins (t, eps) per example."""
    t, eps = noise if noise is not None else draw_noise(rng, schedule, batch.video.shape, t_sampling)
    if optimizer is not None:
        optimizer.zero_grad()
    loss = training_loss(model, batch, schedule, t, eps, convention, batch_id)
    loss.backward()
    if optimizer is not None and not optimizer.step():
        raise NonFiniteLoss(t, batch_id)
    return loss.item()


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 4
    lr: float = 1e-4
    warmup: int = 0
    weight_decay: float = 0.01
    c: int = 3
    T: int = 1000
    schedule: str = "cosine"
    convention: str = "standard"
    seed: int = 0
    log_every: int = 10
    checkpoint_every: int = 0
    flip: bool = False
    t_sampling: str = "noise"


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    steps_done: int = 0
    seconds: float = 0.0


def _batch_indices(seed: int, n: int, batch_size: int, step: int) -> np.ndarray:
    # every step owns its own stream, so resuming mid-run replays the same batches
    rng = stream(seed, "batch", step)
    return rng.choice(n, size=min(batch_size, n), replace=n < batch_size)


def train(model, videos: np.ndarray, cfg: TrainConfig, *, log_path=None, checkpoint_path=None,
          optimizer: AdamW | None = None, start_step: int = 0,
          callback: Callable[[int, float], None] | None = None, strict: bool = False,
          until: int | None = None) -> tuple[TrainResult, AdamW]:
    """Train on ``videos`` (N, L, H, W, 3) uint8. Appends to a CSV log of step, loss, lr, wall-time.

    ``until`` stops early without changing the learning-rate horizon, which
    is what a later resume expects.
    """
    videos = np.asarray(videos)
    if videos.ndim != 5 or videos.shape[0] == 0:
        raise ValueError(f"expected a non-empty (N, L, H, W, 3) array, got {videos.shape}")
    schedule = make_schedule(cfg.T, cfg.schedule)
    if cfg.convention != "standard" and getattr(getattr(model, "cfg", None), "head", None) == "clean":
        raise ValueError("the clean-frame head emits the standard target; use head='velocity' to train 'swapped'")
    opt = optimizer or AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay,
                             total_steps=cfg.steps, warmup=cfg.warmup)
    result = TrainResult()
    fh = writer = None
    if log_path is not None:
        new = not Path(log_path).exists() or start_step == 0
        fh = open(log_path, "w" if start_step == 0 else "a", newline="")
        writer = csv.writer(fh)
        if new:
            writer.writerow(["step", "loss", "lr", "wall_time"])
    t0 = time.perf_counter()
    ctx = strict_mode() if strict else _null()
    try:
        with ctx:
            for step in range(start_step + 1, min(cfg.steps, until or cfg.steps) + 1):
                idx = _batch_indices(cfg.seed, len(videos), cfg.batch_size, step)
                batch_u8 = videos[idx]
                if cfg.flip:
                    flips = stream(cfg.seed, "flip", step).random(len(idx)) < 0.5
                    batch_u8 = np.where(flips[:, None, None, None, None], batch_u8[:, :, :, ::-1], batch_u8)
                batch = build_condition(to_unit(batch_u8), cfg.c)
                rng = stream(cfg.seed, "noise", step)
                loss = training_step(model, batch, schedule, rng, opt, cfg.convention, batch_id=step,
                                     t_sampling=cfg.t_sampling)
                result.losses.append(loss)
                result.steps_done = step
                if writer is not None and (step % cfg.log_every == 0 or step == cfg.steps):
                    writer.writerow([step, f"{loss:.6g}", f"{opt.current_lr:.6g}", f"{time.perf_counter() - t0:.2f}"])
                    fh.flush()
                if callback is not None:
                    callback(step, loss)
                if checkpoint_path and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                    save_training_state(checkpoint_path, model, opt)
    finally:
        if fh is not None:
            fh.close()
    result.seconds = time.perf_counter() - t0
    if checkpoint_path:
        save_training_state(checkpoint_path, model, opt)
    return result, opt


class _null:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def save_training_state(path, model, opt: AdamW) -> None:
    extra = {"opt/step": np.array([opt.state.step_count], np.int64)}
    for k in opt.params:
        extra["opt/m/" + k] = opt.state.first_moment[k]
        extra["opt/v/" + k] = opt.state.second_moment[k]
    model.save(path, extra)


def restore_optimizer(opt: AdamW, extra: dict[str, np.ndarray]) -> int:
    if "opt/step" not in extra:
        return 0
    opt.state.step_count = int(extra["opt/step"][0])
    for k in opt.params:
        opt.state.first_moment[k] = np.array(extra["opt/m/" + k])
        opt.state.second_moment[k] = np.array(extra["opt/v/" + k])
    return opt.state.step_count


# -- sampling --------------------------------------------------------------------

def sample_timesteps(T: int, steps: int) -> np.ndarray:
    """Descending steps from T; the update after the last one lands on clean data."""
    if steps < 1:
        raise ValueError("steps must be at least 1")
    ts = np.rint(np.linspace(T, 0, steps + 1)[:-1]).astype(int)
    return np.maximum(ts, 1)


def sample(model, condition_u8: np.ndarray, c: int, *, schedule: NoiseSchedule | None = None, steps: int = 50,
           seed: int = 0, eta: float = 0.0, convention: str = "standard",
           n_frames: int | None = None) -> np.ndarray:
    """Generate videos from their first ``c`` frames.

    ``condition_u8`` is (B, L, H, W, 3) or (L, H, W, 3) uint8; only its first
    ``c`` frames are read. ``eta = 0`` is deterministic DDIM; ``eta = 1`` is
    ancestral sampling. Conditioned frames are clamped at every step and
    copied byte-for-byte into the output.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    if convention == "swapped":
        raise ValueError("the swapped target cannot be inverted from pure noise; sample with 'standard'")
    cond = np.asarray(condition_u8, np.uint8)
    single = cond.ndim == 4
    if single:
        cond = cond[None]
    if n_frames is not None and n_frames != cond.shape[1]:
        pad = np.zeros((cond.shape[0], n_frames) + cond.shape[2:], np.uint8)
        k = min(n_frames, cond.shape[1])
        pad[:, :k] = cond[:, :k]
        cond = pad
    schedule = schedule or make_schedule()
    batch = build_condition(to_unit(cond), c)
    rng = stream(seed, "sample")
    x = rng.standard_normal(batch.video.shape).astype(np.float32)
    keep = batch.mask.astype(bool)
    ts = sample_timesteps(schedule.T, steps)
    for i, t in enumerate(ts):
        g = float(schedule.at(t))
        t_next = int(ts[i + 1]) if i + 1 < len(ts) else 0
        g_next = float(schedule.at(t_next))
        y = model.predict(batch.model_input(x), np.full(len(x), float(t)), gamma=np.full(len(x), g))
        V_hat, eps_hat = recover_from_v(x, y, g, convention)
        V_hat = np.where(keep, batch.video, np.clip(V_hat, -1.0, 1.0))
        if t_next == 0:
            x = V_hat
            break
        # noise consistent with the clamped estimate; on conditioned frames this is the
        # true noise in x, so they keep the statistics seen in training
        a_t, b_t = _coef(g)
        eps_hat = (x - a_t * V_hat) / b_t
        a_n, b_n = _coef(g_next)
        sigma = 0.0
        if eta > 0:
            ratio = (b_n ** 2) / max(b_t ** 2, 1e-12) * (1.0 - (a_t ** 2) / max(a_n ** 2, 1e-12))
            sigma = eta * math.sqrt(max(ratio, 0.0))
        dir_coef = math.sqrt(max(b_n ** 2 - sigma ** 2, 0.0))
        x = a_n * V_hat + dir_coef * eps_hat
        if sigma:
            x = x + sigma * rng.standard_normal(x.shape).astype(np.float32)
        x = x.astype(np.float32)
    out = to_u8(x)
    out[keep] = cond[keep]
    return out[0] if single else out
