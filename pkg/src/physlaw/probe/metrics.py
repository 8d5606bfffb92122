"""Velocity error and frame-quality metrics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from ..physim import WorldState
from .tracks import TrackSet, gt_positions

PSNR_CAP = 99.0


@dataclass
class ErrorReport:
    e: float | None
    per_object: dict[str, float | None]
    n_valid: int
    deviations: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))


def velocity_error(tracks: TrackSet, gt: Sequence[WorldState] | np.ndarray,
                   valid: np.ndarray | None = None, start: int = 0) -> ErrorReport:
    """Mean L1 deviation between parsed and true forward-difference velocities.

    ``gt`` is either the state list or an (L, N, 2) array of true centers.
    Only differences ``t -> t+1`` with both frames valid and ``t >= start`` count.
    """
    pos = gt if isinstance(gt, np.ndarray) else gt_positions(gt, tracks.labels)
    if pos.shape != tracks.centers.shape:
        raise ValueError(f"ground truth shape {pos.shape} != tracks {tracks.centers.shape}")
    mask = tracks.valid if valid is None else valid
    ok = mask[:-1] & mask[1:]
    ok[:start] = False
    v_hat = np.diff(tracks.centers, axis=0) / tracks.dt
    v_true = np.diff(pos, axis=0) / tracks.dt
    dev = np.abs(v_hat - v_true).sum(axis=-1)
    per = {}
    for n, name in enumerate(tracks.labels):
        sel = dev[ok[:, n], n]
        per[name] = float(sel.mean()) if sel.size else None
    picked = dev[ok]
    e = float(picked.mean()) if picked.size else None
    return ErrorReport(e, per, int(picked.size), picked)


@dataclass
class SplitSummary:
    mean: float | None
    median: float | None
    count: int


def aggregate(reports: Sequence[ErrorReport]) -> SplitSummary:
    vals = [r.e for r in reports if r.e is not None]
    if not vals:
        return SplitSummary(None, None, 0)
    return SplitSummary(float(np.mean(vals)), float(np.median(vals)), len(vals))


def _as_video(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    return x


def psnr(a, b, data_range: float = 255.0) -> float:
    """Per-frame PSNR averaged over frames; identical frames score ``PSNR_CAP``."""
    a, b = _as_video(a), _as_video(b)
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    mse = ((a - b) ** 2).reshape(a.shape[0], -1).mean(axis=1)
    with np.errstate(divide="ignore"):
        vals = 10.0 * np.log10(data_range ** 2 / mse)
    return float(np.mean(np.minimum(vals, PSNR_CAP)))


def _ssim_frame(x: np.ndarray, y: np.ndarray, data_range: float, sigma: float, k1: float, k2: float):
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    truncate = 3.5
    pad = int(truncate * sigma + 0.5)
    out = []
    for ch in range(x.shape[-1]):
        a, b = x[..., ch], y[..., ch]
        filt = lambda z: ndimage.gaussian_filter(z, sigma, truncate=truncate, mode="reflect")
        mu_a, mu_b = filt(a), filt(b)
        saa = filt(a * a) - mu_a ** 2
        sbb = filt(b * b) - mu_b ** 2
        sab = filt(a * b) - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
        den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
        s = num / den
        out.append(s[pad:-pad, pad:-pad].mean())
    return float(np.mean(out))


def ssim(a, b, data_range: float = 255.0, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Gaussian-window SSIM (11x11, sigma 1.5) per channel, averaged over frames."""
    a, b = _as_video(a), _as_video(b)
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    return float(np.mean([_ssim_frame(x, y, data_range, sigma, k1, k2) for x, y in zip(a, b)]))
