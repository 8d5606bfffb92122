"""Pixel-to-state parsing: per-color centers and validity masks.

A pixel belongs to a palette color when every channel is within ``tol``
(40) of it. The default ``"coverage"`` estimator refines that binary core:
pixels in a one-pixel ring around it are weighted by their anti-aliasing
coverage, read off by projecting onto the background-to-color line. The
plain mean of core pixels is available as ``method="binary"``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from ..palette import BACKGROUND, PALETTE, name_of
from ..physim import DT, WORLD, Box, WorldState

TOL = 40
_RING = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class Detection:
    color: str
    center: tuple[float, float]  # continuous pixel coords (column, row)
    mass: float  # coverage-weighted pixel area
    bbox: tuple[int, int, int, int]  # rows [i0, i1), cols [j0, j1)
    touches_border: bool


def _shadowing(rgb, background, tol: int) -> list[np.ndarray]:
    """Palette colors whose anti-aliased edges against the background look like ``rgb``."""
    c = np.asarray(rgb, dtype=np.float64)
    bg = np.asarray(background, dtype=np.float64)
    out = []
    for other in PALETTE.values():
        o = np.asarray(other, dtype=np.float64)
        if np.array_equal(o, c):
            continue
        d = o - bg
        a = float(np.clip((c - bg) @ d / (d @ d), 0.0, 1.0))
        if a < 1.0 and np.max(np.abs(c - bg - a * d)) <= tol:
            out.append(o)
    return out


def color_weights(frame: np.ndarray, rgb, background=BACKGROUND, tol: int = TOL,
                  method: str = "coverage") -> np.ndarray:
    """Per-pixel membership weight in [0, 1] for one palette color.

    Pixels next to the core of a darker color that lies on the same line
    through the background (black behind gray) are edges of that color and
    are dropped.
    """
    f = frame.astype(np.float64)
    c = np.asarray(rgb, dtype=np.float64)
    core = np.max(np.abs(f - c), axis=-1) <= tol
    shadow = np.zeros(core.shape, dtype=bool)
    for o in _shadowing(rgb, background, tol):
        shadow |= ndimage.binary_dilation(np.max(np.abs(f - o), axis=-1) <= tol, _RING)
    if method == "binary":
        return (core & ~shadow).astype(np.float64)
    if method != "coverage":
        raise ValueError(f"unknown method {method!r}")
    bg = np.asarray(background, dtype=np.float64)
    d = c - bg
    rel = f - bg
    alpha = np.clip(rel @ d / (d @ d), 0.0, 1.0)
    resid = np.max(np.abs(rel - alpha[..., None] * d), axis=-1)
    # true anti-aliased edges sit on the line up to rounding; other colors' edges do not
    on_line = resid <= tol / 2
    # thin shapes may never fully cover a pixel, so half coverage also seeds
    seed = core | (on_line & (alpha >= 0.5))
    region = (ndimage.binary_dilation(seed, _RING) & on_line) | core
    return np.where(region & ~shadow, alpha, 0.0)


def _detect_one(w: np.ndarray, name: str) -> Detection | None:
    total = w.sum()
    if total <= 0.5:
        return None
    n_rows, n_cols = w.shape
    rows = np.arange(n_rows) + 0.5
    cols = np.arange(n_cols) + 0.5
    u = float((w.sum(axis=0) @ cols) / total)
    v = float((w.sum(axis=1) @ rows) / total)
    ri = np.nonzero(w.any(axis=1))[0]
    ci = np.nonzero(w.any(axis=0))[0]
    bbox = (int(ri[0]), int(ri[-1]) + 1, int(ci[0]), int(ci[-1]) + 1)
    border = bbox[0] == 0 or bbox[2] == 0 or bbox[1] == n_rows or bbox[3] == n_cols
    return Detection(name, (u, v), float(total), bbox, bool(border))


def detect_centers(frame: np.ndarray, palette: Mapping[str, tuple] | Sequence[str] | None = None,
                   method: str = "coverage", tol: int = TOL) -> dict[str, Detection | None]:
    """One detection per requested palette color (``None`` when absent)."""
    if palette is None:
        palette = {k: v for k, v in PALETTE.items()}
    elif not isinstance(palette, Mapping):
        palette = {k: PALETTE[k] for k in palette}
    return {name: _detect_one(color_weights(frame, rgb, tol=tol, method=method), name)
            for name, rgb in palette.items()}


@dataclass
class TrackSet:
    labels: list[str]
    centers: np.ndarray  # (L, N, 2) world units, NaN where undetected
    masses: np.ndarray  # (L, N) pixel area
    valid: np.ndarray  # (L, N)
    dt: float = DT
    resolution: int = 128
    meta: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return self.centers.shape[0]

    def velocities(self) -> tuple[np.ndarray, np.ndarray]:
        """Forward differences and their validity, shape (L-1, N, 2) / (L-1, N)."""
        v = np.diff(self.centers, axis=0) / self.dt
        ok = self.valid[:-1] & self.valid[1:]
        return v, ok

    def speeds(self) -> np.ndarray:
        v, ok = self.velocities()
        s = np.linalg.norm(v, axis=-1)
        return np.where(ok, s, np.nan)


def parse_video(video: np.ndarray, labels: Sequence[str], dt: float = DT,
                method: str = "coverage", tol: int = TOL) -> TrackSet:
    """Track each named color through a (L, H, W, 3) video."""
    L, H, W, _ = video.shape
    if H != W:
        raise ValueError("frames must be square")
    s = W / WORLD
    centers = np.full((L, len(labels), 2), np.nan)
    masses = np.zeros((L, len(labels)))
    valid = np.zeros((L, len(labels)), dtype=bool)
    pal = {k: PALETTE[k] for k in labels}
    for t in range(L):
        dets = detect_centers(video[t], pal, method=method, tol=tol)
        for k, name in enumerate(labels):
            d = dets[name]
            if d is None:
                continue
            centers[t, k] = (d.center[0] / s, WORLD - d.center[1] / s)
            masses[t, k] = d.mass
            valid[t, k] = not d.touches_border
    return TrackSet(list(labels), centers, masses, valid, dt, W)


def labels_for(state: WorldState) -> list[str]:
    """Palette names of the bodies, rejecting duplicated tracked colors."""
    names = [name_of(b.color) for b in state.bodies if b.dynamic]
    seen = [n for n in names if n is not None]
    if len(seen) != len(set(seen)):
        raise ValueError(f"tracked objects share a color: {seen}")
    return seen


def gt_positions(states: Sequence[WorldState], labels: Sequence[str]) -> np.ndarray:
    """(L, N, 2) ground-truth centers matched to ``labels`` by color."""
    first = states[0]
    idx = []
    for name in labels:
        rgb = PALETTE[name]
        hits = [k for k, b in enumerate(first.bodies) if tuple(b.color) == rgb]
        if len(hits) != 1:
            raise ValueError(f"color {name!r} matches {len(hits)} bodies")
        idx.append(hits[0])
    return np.stack([[s.bodies[k].position for k in idx] for s in states]).astype(np.float64)


def _gt_inside(states: Sequence[WorldState], labels: Sequence[str]) -> np.ndarray:
    first = states[0]
    out = np.zeros((len(states), len(labels)), dtype=bool)
    for n, name in enumerate(labels):
        k = next(k for k, b in enumerate(first.bodies) if tuple(b.color) == PALETTE[name])
        shape = first.bodies[k].shape
        ex, ey = (shape.half_w, shape.half_h) if isinstance(shape, Box) else (shape.radius, shape.radius)
        for t, s in enumerate(states):
            x, y = s.bodies[k].position
            out[t, n] = ex <= x <= WORLD - ex and ey <= y <= WORLD - ey
    return out


def detect_contact_frame(tracks: TrackSet) -> int | None:
    """First frame whose outgoing relative x-velocity differs in sign from the initial one."""
    if len(tracks.labels) < 2:
        return None
    v, ok = tracks.velocities()
    rel = v[:, 1, 0] - v[:, 0, 0]
    good = ok[:, 0] & ok[:, 1]
    ref = None
    for t in range(len(rel)):
        if not good[t]:
            continue
        if ref is None:
            ref = np.sign(rel[t])
            continue
        if np.sign(rel[t]) != ref:
            return max(t - 1, 0)
    return None


def valid_frames(tracks: TrackSet, gt_states: Sequence[WorldState] | None = None,
                 kind: str | None = None, first_contact_frame: int | None = None) -> np.ndarray:
    """Frames usable for the velocity metric, per object.

    Invalid: undetected, blob touching the border, ground-truth body not fully
    in view, and for collisions every frame up to and including the contact frame.
    """
    mask = tracks.valid.copy()
    if gt_states is not None:
        mask &= _gt_inside(gt_states, tracks.labels)
    if kind == "collision":
        k = first_contact_frame if first_contact_frame is not None else detect_contact_frame(tracks)
        if k is not None:
            mask[: k + 1] = False
    return mask
