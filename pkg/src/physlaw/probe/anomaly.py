"""Rule-based plausibility checks for generated videos.

Three flags per video, all judged against the last conditioning frame:

* persistence: a color's pixel mass leaves +-40% of its reference while the
  color is away from the frame border (objects may leave the view; one that
  vanishes between two frames must have been close enough to clear the edge
  within one frame of travel);
* teleport: a single-blob color jumps more than ``4 * max_speed * dt``;
* shape: the smallest blob "compactness" (mass over the area of the disk with
  the same second moment, 1 for a disk and lower for anything else) drops
  below 0.6x its reference value.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from ..palette import PALETTE
from ..physim import DT, WORLD, Box, Episode, WorldState
from ..raster import RenderConfig, render_frame
from .tracks import color_weights

PERSIST_TOL = 0.4
SHAPE_FLOOR = 0.6
TELEPORT_FACTOR = 4.0
MIN_BLOB = 4.0


@dataclass
class AnomalyReport:
    persistence: bool = False
    shape: bool = False
    teleport: bool = False
    details: list[str] = field(default_factory=list)

    @property
    def any(self) -> bool:
        return self.persistence or self.shape or self.teleport


@dataclass
class _ColorFrame:
    mass: float
    border: bool
    margin: float  # pixels between the color's bounding box and the frame edge
    reach: float  # shortest travel (pixels) that takes the whole bounding box out of view
    blobs: list[tuple[float, float, float, bool]]  # (mass, u, v, touches border) per blob
    compactness: float | None


def _analyze(frame: np.ndarray, rgb) -> _ColorFrame:
    w = color_weights(frame, rgb)
    n = w.shape[0]
    mass = float(w.sum())
    lab, k = ndimage.label(w > 0.0, structure=np.ones((3, 3)))
    blobs = []
    comp = None
    rows = np.arange(n) + 0.5
    for idx, sl in enumerate(ndimage.find_objects(lab), start=1):
        if sl is None:
            continue
        sub = np.where(lab[sl] == idx, w[sl], 0.0)
        m = sub.sum()
        if m < MIN_BLOB:
            continue
        rr, cc = rows[sl[0]], rows[sl[1]]
        v = (sub.sum(axis=1) @ rr) / m
        u = (sub.sum(axis=0) @ cc) / m
        touches = sl[0].start == 0 or sl[1].start == 0 or sl[0].stop == n or sl[1].stop == n
        blobs.append((float(m), float(u), float(v), bool(touches)))
        if not touches:
            var = (sub.sum(axis=1) @ (rr - v) ** 2 + sub.sum(axis=0) @ (cc - u) ** 2) / m
            c = m / (2.0 * np.pi * var) if var > 0 else 1.0
            comp = c if comp is None else min(comp, c)
    border = bool(np.any(w[0] > 0) or np.any(w[-1] > 0) or np.any(w[:, 0] > 0) or np.any(w[:, -1] > 0))
    margin = reach = float(n)
    if mass > 0:
        ri = np.nonzero(w.any(axis=1))[0]
        ci = np.nonzero(w.any(axis=0))[0]
        margin = float(min(ri[0], ci[0], n - 1 - ri[-1], n - 1 - ci[-1]))
        reach = float(min(ri[-1] + 1, ci[-1] + 1, n - ri[0], n - ci[0]))
    return _ColorFrame(mass, border, margin, reach, blobs, comp)


def present_colors(frame: np.ndarray) -> list[str]:
    out = []
    for name, rgb in PALETTE.items():
        if color_weights(frame, rgb).sum() >= MIN_BLOB:
            out.append(name)
    return out


def estimate_max_speed(video: np.ndarray, n_cond: int, colors: Sequence[str], dt: float = DT) -> float:
    """Largest single-blob centroid speed seen in the conditioning frames (world units/s)."""
    scale = video.shape[1] / WORLD
    best = 0.0
    prev = None
    for t in range(n_cond):
        cur = {}
        for name in colors:
            a = _analyze(video[t], PALETTE[name])
            if len(a.blobs) == 1:
                cur[name] = np.array(a.blobs[0][1:3])
        if prev is not None:
            for name in cur.keys() & prev.keys():
                best = max(best, float(np.linalg.norm(cur[name] - prev[name])) / scale / dt)
        prev = cur
    return best


def anomaly_check(video: np.ndarray, n_cond: int, colors: Sequence[str] | None = None,
                  dt: float = DT, max_speed: float | None = None, gravity: float = 0.0,
                  min_speed: float = 1.0) -> AnomalyReport:
    """Flag physically implausible frames after the ``n_cond`` conditioning frames.

    ``max_speed`` defaults to the fastest conditioning-frame motion; gravity
    raises the allowed speed linearly with time after conditioning.
    """
    if n_cond < 1:
        raise ValueError("need at least one conditioning frame")
    L = video.shape[0]
    ref_frame = video[n_cond - 1]
    if colors is None:
        colors = present_colors(ref_frame)
    base = estimate_max_speed(video, n_cond, colors, dt) if max_speed is None else max_speed
    px = video.shape[1] / WORLD

    def jump_bound(t: int) -> float:
        # speed can grow by g per second after the last conditioning frame
        v = max(base + gravity * (t - n_cond + 1) * dt, min_speed)
        return TELEPORT_FACTOR * v * dt * px

    rep = AnomalyReport()
    for name in colors:
        rgb = PALETTE[name]
        ref = _analyze(ref_frame, rgb)
        exited = False
        prev = ref
        for t in range(n_cond, L):
            jump_px = jump_bound(t)
            cur = _analyze(video[t], rgb)
            lost = cur.mass < (1 - PERSIST_TOL) * ref.mass
            if cur.border or (prev.border and not lost):
                exited = exited or lost
            elif lost and prev.reach <= jump_px:
                # small or fast enough to clear the frame edge within one frame
                exited = True
            elif not exited and ref.mass > 0 and abs(cur.mass - ref.mass) > PERSIST_TOL * ref.mass:
                rep.persistence = True
                rep.details.append(f"{name}: mass {cur.mass:.1f} vs {ref.mass:.1f} at frame {t}")
            if (len(cur.blobs) == 1 and len(prev.blobs) == 1 and not cur.border and not prev.border):
                d = np.hypot(cur.blobs[0][1] - prev.blobs[0][1], cur.blobs[0][2] - prev.blobs[0][2])
                if d > jump_px:
                    rep.teleport = True
                    rep.details.append(f"{name}: jump {d:.1f}px > {jump_px:.1f}px at frame {t}")
            if ref.compactness is not None and cur.compactness is not None:
                if cur.compactness < SHAPE_FLOOR * ref.compactness:
                    rep.shape = True
                    rep.details.append(f"{name}: compactness {cur.compactness:.2f} vs "
                                       f"{ref.compactness:.2f} at frame {t}")
            prev = cur
    return rep


# -- synthetic corruptions -----------------------------------------------------

def _inside(body, pos, margin: float = 0.0) -> bool:
    shape = body.shape
    ex, ey = (shape.half_w, shape.half_h) if isinstance(shape, Box) else (shape.radius, shape.radius)
    return (ex + margin <= pos[0] <= WORLD - ex - margin) and (ey + margin <= pos[1] <= WORLD - ey - margin)


def _drop(state: WorldState, body_id: int) -> WorldState:
    return WorldState(tuple(b for b in state.bodies if b.id != body_id), state.gravity, state.dt,
                      state.bounds, state.time, state.integrator)


def _moved(state: WorldState, body_id: int, offset) -> WorldState:
    from dataclasses import replace

    bodies = tuple(replace(b, position=(b.position[0] + offset[0], b.position[1] + offset[1]))
                   if b.id == body_id else b for b in state.bodies)
    return replace(state, bodies=bodies)


def blank_object(ep: Episode, body_id: int, cfg: RenderConfig, start: int = 10) -> tuple[np.ndarray, int]:
    """Re-render with the body erased from the first frame >= ``start`` where it is fully in view."""
    frames = [render_frame(s, cfg) for s in ep.states]
    for t in range(start, len(ep.states)):
        if _inside(ep.states[t].body(body_id), ep.states[t].body(body_id).position, 0.2):
            for k in range(t, len(ep.states)):
                frames[k] = render_frame(_drop(ep.states[k], body_id), cfg)
            return np.stack(frames), t
    raise ValueError("body never fully in view after start frame")


def insert_teleport(ep: Episode, body_id: int, cfg: RenderConfig, start: int = 4,
                    distance: float = 5.0) -> tuple[np.ndarray, int]:
    """Shift the body by ``distance`` units from one frame on, keeping it in view."""
    for t in range(start, len(ep.states)):
        body = ep.states[t].body(body_id)
        for off in ((distance, 0.0), (-distance, 0.0), (0.0, distance), (0.0, -distance)):
            target = (body.position[0] + off[0], body.position[1] + off[1])
            if _inside(body, target, 0.2) and _inside(body, body.position, 0.2):
                frames = [render_frame(s, cfg) for s in ep.states[:t]]
                frames += [render_frame(_moved(s, body_id, off), cfg) for s in ep.states[t:]]
                return np.stack(frames), t
    raise ValueError("no frame allows an in-view teleport")
