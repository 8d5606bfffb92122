"""Attribute read-out for the pairwise attribute experiments.

Each attribute of the single moving object is measured on the frames after
conditioning and snapped to the nearest value used in training:

* color: palette color with the largest pixel mass;
* shape: isoperimetric ratio P^2/A, with the perimeter taken as the total
  variation of the coverage map (disk 4*pi, square 16, ring with inner radius
  half the outer 12*pi), for shapes under ~6 px the blur pulls every ratio
  toward the disk value, so those are matched against ideal shapes rendered at
  the measured size and position instead;
* size: radius implied by the pixel mass for the measured shape;
* velocity: mean parsed speed between the first and last clean frames.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from ..palette import PALETTE
from ..physim import DT, WORLD, Body, WorldState, make_shape
from ..raster import RenderConfig, render_frame
from .tracks import color_weights

ATTRIBUTES = ("color", "shape", "size", "velocity")
SHAPE_RATIO = {"ball": 4 * math.pi, "square": 16.0, "ring": 12 * math.pi}
# pixel mass per squared size for each shape (size = radius or half side)
_AREA_FACTOR = {"ball": math.pi, "square": 4.0, "ring": 0.75 * math.pi}


@dataclass(frozen=True)
class Attributes:
    color: str
    shape: str
    size: float
    velocity: float

    def get(self, name: str):
        return getattr(self, name)


@dataclass(frozen=True)
class Measurement:
    color: str
    iso_ratio: float
    shape: str
    size: float
    speed: float


_SCHARR = np.array([[3.0, 10.0, 3.0], [0.0, 0.0, 0.0], [-3.0, -10.0, -3.0]]) / 32.0


def perimeter(w: np.ndarray) -> float:
    """Total variation of a coverage map (Scharr gradients, nearly isotropic)."""
    gy = ndimage.correlate(w, _SCHARR, mode="constant")
    gx = ndimage.correlate(w, _SCHARR.T, mode="constant")
    return float(np.hypot(gx, gy).sum())


def iso_ratio(w: np.ndarray) -> float:
    return perimeter(w) ** 2 / float(w.sum())


def reference_coverage(shape: str, size: float, center_px: tuple[float, float], resolution: int) -> np.ndarray:
    """Coverage map of the ideal shape rendered at this size and sub-pixel position."""
    cfg = RenderConfig(resolution)
    s = cfg.scale
    x, y = center_px[0] / s, WORLD - center_px[1] / s
    body = Body(0, make_shape(shape, size), (x, y), color=PALETTE["blue"])
    return color_weights(render_frame(WorldState((body,)), cfg), PALETTE["blue"])


def classify_shape(ratio: float, candidates: Sequence[str] = ("ball", "square", "ring"),
                   references: dict[str, float] | None = None) -> str:
    """Nearest reference isoperimetric ratio, compared on a log scale."""
    ref = references or SHAPE_RATIO
    return min(candidates, key=lambda s: abs(math.log(ratio / ref[s])))


def _nearest(value: float, options: Sequence[float]) -> float:
    return min(options, key=lambda o: abs(math.log(max(value, 1e-6) / o)))


def _implied_size(mass_px: float, shape: str, scale: float) -> float:
    return math.sqrt(mass_px / _AREA_FACTOR[shape]) / scale


def measure(video: np.ndarray, frames: Sequence[int], colors: Sequence[str] = ("red", "blue"),
            shapes: Sequence[str] = ("ball", "square", "ring"), dt: float = DT) -> Measurement:
    """Raw attribute measurements over the given frames."""
    n = video.shape[1]
    scale = n / WORLD
    frames = list(frames)
    weights = {c: [color_weights(video[t], PALETTE[c]) for t in frames] for c in colors}
    color = max(colors, key=lambda c: sum(w.sum() for w in weights[c]))
    idx = np.arange(n) + 0.5
    ratios, masses, votes = [], [], {s: 0 for s in shapes}
    track = []
    for t, w in zip(frames, weights[color]):
        m = float(w.sum())
        if m < 1.0 or w[0].any() or w[-1].any() or w[:, 0].any() or w[:, -1].any():
            continue
        c = (float(w.sum(axis=0) @ idx) / m, float(w.sum(axis=1) @ idx) / m)
        rho = iso_ratio(w)
        refs = {s: reference_coverage(s, _implied_size(m, s, scale), c, n) for s in shapes}
        if min(_implied_size(m, s, scale) for s in shapes) * scale >= 6.0:
            # large enough that blur does not matter: isoperimetric ratio decides
            votes[classify_shape(rho, shapes)] += 1
        else:
            votes[min(shapes, key=lambda s: float(((w - refs[s]) ** 2).sum()))] += 1
        ratios.append(rho)
        masses.append(m)
        track.append((t, np.array(c)))
    if not ratios:
        return Measurement(color, float("nan"), "none", float("nan"), float("nan"))
    shape = max(shapes, key=lambda s: votes[s])
    size = _implied_size(float(np.median(masses)), shape, scale)
    speed = float("nan")
    if len(track) >= 2:
        (t0, c0), (t1, c1) = track[0], track[-1]
        speed = float(np.linalg.norm(c1 - c0)) / scale / ((t1 - t0) * dt)
    return Measurement(color, float(np.median(ratios)), shape, size, speed)


def measure_attributes(video: np.ndarray, frames: Sequence[int], sizes: Sequence[float] = (0.7, 1.4),
                       speeds: Sequence[float] = (1.0, 4.0), colors: Sequence[str] = ("red", "blue"),
                       shapes: Sequence[str] = ("ball", "square", "ring"), dt: float = DT) -> Attributes:
    m = measure(video, frames, colors, shapes, dt)
    size = _nearest(m.size, sizes) if math.isfinite(m.size) else float("nan")
    vel = _nearest(m.speed, speeds) if math.isfinite(m.speed) else float("nan")
    return Attributes(m.color, m.shape, size, vel)


def classify_attribute_outcome(generated: np.ndarray, condition: Attributes, pair: tuple[str, str],
                               n_cond: int = 3, **kw) -> str:
    """Which of the two attributes in ``pair`` the post-conditioning frames keep.

    Returns ``"kept both"``, ``"kept <A>"``, ``"kept <B>"`` or ``"kept neither"``.
    """
    a, b = pair
    if a not in ATTRIBUTES or b not in ATTRIBUTES or a == b:
        raise ValueError(f"bad attribute pair {pair}")
    frames = range(n_cond, generated.shape[0])
    # velocity needs one conditioning frame to form the first difference
    if "velocity" in pair:
        frames = range(n_cond - 1, generated.shape[0])
    got = measure_attributes(generated, list(frames), **kw)
    keep_a = got.get(a) == condition.get(a)
    keep_b = got.get(b) == condition.get(b)
    if keep_a and keep_b:
        return "kept both"
    if keep_a:
        return f"kept {a}"
    if keep_b:
        return f"kept {b}"
    return "kept neither"
