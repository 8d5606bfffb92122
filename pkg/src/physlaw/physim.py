"""Deterministic 2D kinematics for the benchmark scenarios.

World units: a 10x10 box with y pointing up, frames every ``dt`` = 0.1 s.
All bodies have density 1, so mass equals area. Bodies do not rotate and
there is no friction.

Integration between contacts is exact for constant gravity
(``x += v*dt + g*dt^2/2``), so free flight matches the closed-form
trajectory to rounding error. Contacts are found by testing overlap on a
16-point sub-grid of the step and then bisecting to the touching time;
approaching contacts get an impulse along the contact normal, slow
(resting) contacts are only de-penetrated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Any, Mapping, Sequence

import numpy as np

from .numkit.rng import stream
from .palette import color as _color

WORLD = 10.0
DT = 0.1
N_FRAMES = 32
GRAVITY = 9.8
BOUNDS = (0.0, 0.0, WORLD, WORLD)
# vertical gap kept between a horizontally moving object and the top/bottom edge;
# about one pixel at 32 px, so anti-aliased edges never touch the frame border
EDGE_CLEARANCE = 0.35

SUBSTEPS = 16
BISECT_ITERS = 60
MAX_EVENTS = 64
MIN_CONTACT_FRAME = 4

KINDS = ("uniform", "collision", "parabola", "combinatorial",
         "composition-spatial", "composition-temporal")


class SpecRejected(ValueError):
    """Raised when a scenario's geometry violates its contract."""

    def __init__(self, message: str, frame: int | None = None):
        super().__init__(message)
        self.frame = frame


# ---------------------------------------------------------------------------
# Shapes and bodies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Circle:
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"circle radius must be > 0, got {self.radius}")

    @property
    def area(self) -> float:
        return math.pi * self.radius ** 2

    @property
    def extent(self) -> tuple[float, float]:
        return self.radius, self.radius


@dataclass(frozen=True)
class Box:
    half_w: float
    half_h: float

    def __post_init__(self):
        if not (self.half_w > 0 and self.half_h > 0):
            raise ValueError(f"box half extents must be > 0, got {self.half_w}, {self.half_h}")

    @property
    def area(self) -> float:
        return 4.0 * self.half_w * self.half_h

    @property
    def extent(self) -> tuple[float, float]:
        return self.half_w, self.half_h


@dataclass(frozen=True)
class Ring:
    """Annulus. Collides like a solid circle of the outer radius."""
    outer: float
    inner: float

    def __post_init__(self):
        if not (0 < self.inner < self.outer):
            raise ValueError(f"ring needs 0 < inner < outer, got {self.inner}, {self.outer}")

    @property
    def radius(self) -> float:
        return self.outer

    @property
    def area(self) -> float:
        return math.pi * (self.outer ** 2 - self.inner ** 2)

    @property
    def extent(self) -> tuple[float, float]:
        return self.outer, self.outer


Shape = Circle | Box | Ring


@dataclass(frozen=True)
class Body:
    id: int
    shape: Shape
    position: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)
    color: tuple[int, int, int] = (220, 30, 30)
    dynamic: bool = True
    restitution: float = 1.0
    label: str = ""

    def __post_init__(self):
        if not 0.0 <= self.restitution <= 1.0:
            raise ValueError("restitution must lie in [0, 1]")
        if not self.dynamic and self.velocity != (0.0, 0.0):
            object.__setattr__(self, "velocity", (0.0, 0.0))

    @property
    def mass(self) -> float:
        return self.shape.area

    @property
    def inv_mass(self) -> float:
        return 1.0 / self.mass if self.dynamic else 0.0

    @property
    def radius(self) -> float:
        """Bounding radius (circumscribed circle for boxes)."""
        if isinstance(self.shape, Box):
            return math.hypot(self.shape.half_w, self.shape.half_h)
        return self.shape.radius


@dataclass(frozen=True)
class WorldState:
    bodies: tuple[Body, ...]
    gravity: float = 0.0
    dt: float = DT
    bounds: tuple[float, float, float, float] = BOUNDS
    time: float = 0.0
    integrator: str = "ballistic"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.integrator not in ("ballistic", "semi-implicit"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        object.__setattr__(self, "bodies", tuple(self.bodies))

    def body(self, body_id: int) -> Body:
        for b in self.bodies:
            if b.id == body_id:
                return b
        raise KeyError(body_id)

    def positions(self) -> np.ndarray:
        return np.array([b.position for b in self.bodies], dtype=np.float64).reshape(-1, 2)

    def velocities(self) -> np.ndarray:
        return np.array([b.velocity for b in self.bodies], dtype=np.float64).reshape(-1, 2)


@dataclass(frozen=True)
class Contact:
    time: float
    a: int
    b: int
    impulse: float


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0
    n_frames: int = N_FRAMES
    dt: float = DT

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        object.__setattr__(self, "params", dict(self.params))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": _jsonable(self.params), "seed": self.seed,
                "n_frames": self.n_frames, "dt": self.dt}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScenarioSpec":
        params = dict(d.get("params", {}))
        if "template" in params:
            params["template"] = tuple(params["template"])
        return cls(d["kind"], params, int(d.get("seed", 0)), int(d.get("n_frames", N_FRAMES)),
                   float(d.get("dt", DT)))


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


@dataclass
class Episode:
    spec: ScenarioSpec
    states: list[WorldState]
    contacts: list[Contact]
    first_contact_frame: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return len(self.states)

    def positions(self) -> np.ndarray:
        """(frames, bodies, 2) array of centers."""
        return np.stack([s.positions() for s in self.states])

    def velocities(self) -> np.ndarray:
        return np.stack([s.velocities() for s in self.states])

    def contact_frames(self, a: int | None = None, b: int | None = None) -> list[int]:
        out = []
        for c in self.contacts:
            if a is not None and a not in (c.a, c.b):
                continue
            if b is not None and b not in (c.a, c.b):
                continue
            out.append(int(math.floor(c.time / self.spec.dt + 1e-9)))
        return out


# ---------------------------------------------------------------------------
# Elementary physics
# ---------------------------------------------------------------------------

def resolve_elastic_collision(m1: float, v1: float, m2: float, v2: float) -> tuple[float, float]:
    """1D perfectly elastic collision; ``m2 = inf`` models an immovable wall."""
    if math.isinf(m2):
        return -v1, v2
    if math.isinf(m1):
        return v1, -v2
    total = m1 + m2
    return ((m1 - m2) * v1 + 2 * m2 * v2) / total, ((m2 - m1) * v2 + 2 * m1 * v1) / total


def _pair_contact(sa: Shape, pa, sb: Shape, pb) -> tuple[float, float, float]:
    """Signed penetration depth and unit normal (from a towards b)."""
    if isinstance(sa, Box) and not isinstance(sb, Box):
        pen, nx, ny = _pair_contact(sb, pb, sa, pa)
        return pen, -nx, -ny
    if not isinstance(sa, Box) and not isinstance(sb, Box):
        dx, dy = pb[0] - pa[0], pb[1] - pa[1]
        d = math.hypot(dx, dy)
        pen = sa.radius + sb.radius - d
        if d == 0.0:
            return pen, 1.0, 0.0
        return pen, dx / d, dy / d
    if not isinstance(sa, Box):
        r = sa.radius
        cx, cy = pa
        bx, by = pb
        hw, hh = sb.half_w, sb.half_h
        qx = min(max(cx, bx - hw), bx + hw)
        qy = min(max(cy, by - hh), by + hh)
        inside = (qx == cx) and (qy == cy)
        if not inside:
            dx, dy = qx - cx, qy - cy
            d = math.hypot(dx, dy)
            return r - d, dx / d, dy / d
        # center inside the box: leave through the nearest face
        faces = ((bx + hw - cx, -1.0, 0.0), (cx - (bx - hw), 1.0, 0.0),
                 (by + hh - cy, 0.0, -1.0), (cy - (by - hh), 0.0, 1.0))
        m, nx, ny = min(faces, key=lambda f: f[0])
        return r + m, nx, ny
    dx, dy = pb[0] - pa[0], pb[1] - pa[1]
    ox = sa.half_w + sb.half_w - abs(dx)
    oy = sa.half_h + sb.half_h - abs(dy)
    if ox < oy:
        return min(ox, oy), (1.0 if dx >= 0 else -1.0), 0.0
    return min(ox, oy), 0.0, (1.0 if dy >= 0 else -1.0)


class _Sim:
    """Mutable scratch state for one step; never escapes ``advance``."""

    def __init__(self, state: WorldState):
        self.state = state
        bodies = state.bodies
        self.n = len(bodies)
        self.shapes = [b.shape for b in bodies]
        self.ids = [b.id for b in bodies]
        self.pos = np.array([b.position for b in bodies], dtype=np.float64).reshape(-1, 2)
        self.vel = np.array([b.velocity for b in bodies], dtype=np.float64).reshape(-1, 2)
        self.dyn = np.array([b.dynamic for b in bodies], dtype=bool)
        self.inv = np.array([b.inv_mass for b in bodies], dtype=np.float64)
        self.rest = [b.restitution for b in bodies]
        self.g = np.array([0.0, -state.gravity])
        self.rest_speed = 2.0 * state.gravity * state.dt
        self.pairs = [(i, j) for i, j in combinations(range(self.n), 2) if self.dyn[i] or self.dyn[j]]
        self.ballistic = state.integrator == "ballistic"

    def flight(self, tau: float) -> tuple[np.ndarray, np.ndarray]:
        pos = self.pos.copy()
        vel = self.vel.copy()
        d = self.dyn
        if self.ballistic:
            pos[d] += vel[d] * tau + 0.5 * self.g * tau * tau
            vel[d] += self.g * tau
        else:
            vel[d] += self.g * tau
            pos[d] += vel[d] * tau
        return pos, vel

    def contact(self, i: int, j: int, pos) -> tuple[float, float, float]:
        return _pair_contact(self.shapes[i], pos[i], self.shapes[j], pos[j])

    def impacts_at(self, pos, vel, candidates, tol=0.0):
        hits = []
        for i, j in candidates:
            pen, nx, ny = self.contact(i, j, pos)
            if pen > tol:
                vn = (vel[j, 0] - vel[i, 0]) * nx + (vel[j, 1] - vel[i, 1]) * ny
                if vn < -self.rest_speed - 1e-12:
                    hits.append((i, j))
        return hits

    def swept_candidates(self, horizon: float):
        p1, _ = self.flight(horizon)
        pmid, _ = self.flight(0.5 * horizon)
        out = []
        for i, j in self.pairs:
            ra, rb = self._bound(i), self._bound(j)
            lo_i = np.minimum(np.minimum(self.pos[i], p1[i]), pmid[i]) - ra
            hi_i = np.maximum(np.maximum(self.pos[i], p1[i]), pmid[i]) + ra
            lo_j = np.minimum(np.minimum(self.pos[j], p1[j]), pmid[j]) - rb
            hi_j = np.maximum(np.maximum(self.pos[j], p1[j]), pmid[j]) + rb
            if np.all(lo_i <= hi_j) and np.all(lo_j <= hi_i):
                out.append((i, j))
        return out

    def _bound(self, i):
        s = self.shapes[i]
        if isinstance(s, Box):
            return np.array([s.half_w, s.half_h])
        return np.array([s.radius, s.radius])

    def find_impact(self, horizon: float):
        cands = self.swept_candidates(horizon)
        if not cands:
            return None
        prev = 0.0
        for k in range(1, SUBSTEPS + 1):
            t = horizon * k / SUBSTEPS
            pos, vel = self.flight(t)
            hits = self.impacts_at(pos, vel, cands)
            if hits:
                lo, hi = prev, t
                for _ in range(BISECT_ITERS):
                    mid = 0.5 * (lo + hi)
                    if mid <= lo or mid >= hi:
                        break
                    pm, _ = self.flight(mid)
                    if any(self.contact(i, j, pm)[0] > 0 for i, j in hits):
                        hi = mid
                    else:
                        lo = mid
                return hi, cands
            prev = t
        return None

    def apply_impulse(self, i, j, restitution_override=None):
        pen, nx, ny = self.contact(i, j, self.pos)
        wi, wj = self.inv[i], self.inv[j]
        wsum = wi + wj
        if wsum == 0:
            return 0.0
        if pen > 0:
            self.pos[i, 0] -= nx * pen * wi / wsum
            self.pos[i, 1] -= ny * pen * wi / wsum
            self.pos[j, 0] += nx * pen * wj / wsum
            self.pos[j, 1] += ny * pen * wj / wsum
        vn = (self.vel[j, 0] - self.vel[i, 0]) * nx + (self.vel[j, 1] - self.vel[i, 1]) * ny
        if vn >= 0:
            return 0.0
        e = min(self.rest[i], self.rest[j]) if restitution_override is None else restitution_override
        jimp = -(1.0 + e) * vn / wsum
        self.vel[i, 0] -= jimp * nx * wi
        self.vel[i, 1] -= jimp * ny * wi
        self.vel[j, 0] += jimp * nx * wj
        self.vel[j, 1] += jimp * ny * wj
        return jimp

    def settle(self, iterations: int = 12):
        """De-penetrate resting contacts and remove their approach speed."""
        for _ in range(iterations):
            worst = 0.0
            for i, j in self.pairs:
                pen, nx, ny = self.contact(i, j, self.pos)
                if pen > 0:
                    worst = max(worst, pen)
                    vn = (self.vel[j, 0] - self.vel[i, 0]) * nx + (self.vel[j, 1] - self.vel[i, 1]) * ny
                    e = None if vn < -self.rest_speed else 0.0
                    self.apply_impulse(i, j, e)
            if worst <= 1e-12:
                break

    def to_state(self, time: float) -> WorldState:
        bodies = []
        for k, b in enumerate(self.state.bodies):
            if b.dynamic:
                b = replace(b, position=(float(self.pos[k, 0]), float(self.pos[k, 1])),
                            velocity=(float(self.vel[k, 0]), float(self.vel[k, 1])))
            bodies.append(b)
        return replace(self.state, bodies=tuple(bodies), time=time)


def advance(state: WorldState) -> tuple[WorldState, list[Contact]]:
    """One frame step; also returns the impacts that happened inside it."""
    sim = _Sim(state)
    remaining = state.dt
    elapsed = 0.0
    contacts: list[Contact] = []
    for _ in range(MAX_EVENTS):
        found = sim.find_impact(remaining)
        if found is None:
            break
        t_hit, cands = found
        sim.pos, sim.vel = sim.flight(t_hit)
        elapsed += t_hit
        remaining -= t_hit
        for i, j in sim.impacts_at(sim.pos, sim.vel, cands, tol=-1e-9):
            jimp = sim.apply_impulse(i, j)
            if jimp:
                contacts.append(Contact(state.time + elapsed, sim.ids[i], sim.ids[j], jimp))
        if remaining <= 0:
            break
    sim.pos, sim.vel = sim.flight(max(remaining, 0.0))
    sim.settle()
    return sim.to_state(state.time + state.dt), contacts


def step(state: WorldState) -> WorldState:
    return advance(state)[0]


def contact_resolution(state: WorldState) -> WorldState:
    """Separate every overlapping pair and reflect approaching normal velocity."""
    sim = _Sim(state)
    for i, j in sim.pairs:
        if sim.contact(i, j, sim.pos)[0] > 0:
            sim.apply_impulse(i, j)
    sim.settle()
    return sim.to_state(state.time)


def kinetic_energy(state: WorldState) -> float:
    return sum(0.5 * b.mass * (b.velocity[0] ** 2 + b.velocity[1] ** 2) for b in state.bodies if b.dynamic)


def momentum(state: WorldState) -> np.ndarray:
    return np.sum([np.multiply(b.mass, b.velocity) for b in state.bodies if b.dynamic], axis=0)


def mirror(state: WorldState) -> WorldState:
    """Reflect the world about its vertical center line."""
    x0, _, x1, _ = state.bounds
    bodies = tuple(replace(b, position=(x0 + x1 - b.position[0], b.position[1]),
                           velocity=(-b.velocity[0], b.velocity[1])) for b in state.bodies)
    return replace(state, bodies=bodies)


def reverse(state: WorldState) -> WorldState:
    bodies = tuple(replace(b, velocity=(-b.velocity[0], -b.velocity[1])) for b in state.bodies)
    return replace(state, bodies=bodies, gravity=state.gravity)


# ---------------------------------------------------------------------------
# Scenario construction
# ---------------------------------------------------------------------------

def make_shape(kind: str, size: float) -> Shape:
    if kind == "ball":
        return Circle(size)
    if kind == "square":
        return Box(size, size)
    if kind == "ring":
        return Ring(size, 0.5 * size)
    raise ValueError(f"unknown shape {kind!r}")


def _uniform_placement(r, v, n_frames, dt, rng):
    span = max(0.0, WORLD - 2 * r - abs(v) * dt * (n_frames / 2))
    return r + rng.uniform(0.0, span), rng.uniform(r + EDGE_CLEARANCE, WORLD - r - EDGE_CLEARANCE)


def _build_uniform(spec: ScenarioSpec, rng) -> WorldState:
    p = spec.params
    r, v = float(p["r"]), float(p["v"])
    direction = float(p.get("direction", 1.0))
    x0, y0 = p.get("x0"), p.get("y0")
    if x0 is None or y0 is None:
        x0, y0 = _uniform_placement(r, v, spec.n_frames, spec.dt, rng)
        if direction < 0:
            x0 = WORLD - x0
    body = Body(0, make_shape(p.get("shape", "ball"), r), (float(x0), float(y0)),
                (direction * v, 0.0), _color(p.get("color", "red")))
    return WorldState((body,), gravity=0.0, dt=spec.dt)


def _build_parabola(spec: ScenarioSpec, rng) -> WorldState:
    p = spec.params
    r, v = float(p["r"]), float(p["v"])
    x0, y0 = p.get("x0"), p.get("y0")
    if x0 is None or y0 is None:
        x0 = r + rng.uniform(0.0, max(0.0, WORLD - 2 * r - v * 1.0))
        y0 = WORLD - r - rng.uniform(0.0, 1.0)
    body = Body(0, Circle(r), (float(x0), float(y0)), (v, 0.0), _color(p.get("color", "red")))
    return WorldState((body,), gravity=float(p.get("gravity", GRAVITY)), dt=spec.dt)


def collision_window(n_frames: int, dt: float) -> tuple[float, float]:
    """Range of first-contact times the generator aims for."""
    lo = (MIN_CONTACT_FRAME + 0.5) * dt
    hi = max(lo, min(12 * dt, (n_frames - 2) * dt))
    return lo, hi


def _build_collision(spec: ScenarioSpec, rng) -> WorldState:
    p = spec.params
    r1, r2 = float(p["r1"]), float(p["r2"])
    v1, v2 = float(p["v1"]), float(p["v2"])
    x1, x2, y = p.get("x1"), p.get("x2"), p.get("y")
    if x1 is None or x2 is None or y is None:
        closing = v1 + v2
        lo, hi = collision_window(spec.n_frames, spec.dt)
        if closing > 0:
            t_max = (WORLD - r1 - r2) / closing
            t_c = rng.uniform(lo, min(hi, t_max)) if t_max >= lo else lo
            gap = closing * t_c
        else:
            gap = rng.uniform(0.5, 2.0)
        dist = r1 + r2 + gap
        left, right = r1, WORLD - r2 - dist
        if right < left:
            left, right = 0.0, max(0.0, WORLD - dist)
        x1 = rng.uniform(left, right)
        x2 = x1 + dist
        rmax = max(r1, r2)
        y = rng.uniform(rmax, WORLD - rmax)
    a = Body(0, Circle(r1), (float(x1), float(y)), (v1, 0.0), _color(p.get("color1", "red")))
    b = Body(1, Circle(r2), (float(x2), float(y)), (-v2, 0.0), _color(p.get("color2", "blue")))
    return WorldState((a, b), gravity=0.0, dt=spec.dt)


# Combinatorial palette: eight object types, every scene also holds a red ball.
OBJECT_TYPES = (
    "small_ball", "large_ball", "ball_cluster", "floor_bar",
    "ledge_bar", "dynamic_box", "box_stack", "wall",
)
COMBO_RESTITUTION = 0.2


def _combo_object(kind: str, rng) -> list[tuple[Shape, tuple[float, float], bool, str]]:
    """Shapes with positions relative to an anchor, plus dynamic flag and color."""
    if kind == "small_ball":
        return [(Circle(rng.uniform(0.4, 0.6)), (0.0, 0.0), True, "gray")]
    if kind == "large_ball":
        return [(Circle(rng.uniform(0.8, 1.1)), (0.0, 0.0), True, "gray")]
    if kind == "ball_cluster":
        r = rng.uniform(0.3, 0.45)
        return [(Circle(r), (dx * 2.2 * r, 0.0), False, "black") for dx in (-1, 0, 1)]
    if kind == "floor_bar":
        return [(Box(rng.uniform(2.0, 3.5), 0.15), (0.0, 0.0), False, "black")]
    if kind == "ledge_bar":
        return [(Box(rng.uniform(1.0, 2.0), 0.15), (0.0, 0.0), False, "black")]
    if kind == "dynamic_box":
        h = rng.uniform(0.4, 0.7)
        return [(Box(h, h), (0.0, 0.0), True, "blue")]
    if kind == "box_stack":
        h = rng.uniform(0.3, 0.5)
        n = int(rng.integers(2, 4))
        return [(Box(h, h), (0.0, 2 * h * k), True, "green") for k in range(n)]
    if kind == "wall":
        hh = rng.uniform(1.5, 3.0)
        return [(Box(0.15, hh), (0.0, hh), False, "black")]
    raise ValueError(f"unknown object type {kind!r}")


_ANCHOR_Y = {
    "small_ball": (3.0, 9.0), "large_ball": (3.0, 8.5), "ball_cluster": (1.0, 6.0),
    "floor_bar": (1.0, 3.0), "ledge_bar": (4.0, 7.0), "dynamic_box": (2.0, 8.5),
    "box_stack": (0.35, 4.0), "wall": (0.0, 0.0),
}


def _boundary_bodies(start_id: int) -> list[Body]:
    """Invisible floor and side walls just outside the visible square."""
    k = dict(dynamic=False, color=(0, 0, 0), restitution=COMBO_RESTITUTION, label="boundary")
    return [
        Body(start_id, Box(WORLD, 0.5), (WORLD / 2, -0.5), **k),
        Body(start_id + 1, Box(0.5, WORLD), (-0.5, WORLD / 2), **k),
        Body(start_id + 2, Box(0.5, WORLD), (WORLD + 0.5, WORLD / 2), **k),
    ]


def _aabb(shape: Shape, pos) -> tuple[float, float, float, float]:
    ex, ey = shape.extent
    return pos[0] - ex, pos[1] - ey, pos[0] + ex, pos[1] + ey


def _overlaps(box_a, box_b, margin=0.05) -> bool:
    return not (box_a[2] + margin <= box_b[0] or box_b[2] + margin <= box_a[0]
                or box_a[3] + margin <= box_b[1] or box_b[3] + margin <= box_a[1])


def _build_combinatorial(spec: ScenarioSpec, rng) -> WorldState:
    template = tuple(spec.params["template"])
    if len(template) != 4 or len(set(template)) != 4:
        raise SpecRejected(f"template must name 4 distinct object types, got {template}")
    kinds = ["red_ball"] + [OBJECT_TYPES[t] for t in template]
    for _attempt in range(200):
        placed: list[tuple[Shape, tuple[float, float], bool, str, str]] = []
        boxes = []
        ok = True
        for kind in kinds:
            if kind == "red_ball":
                parts = [(Circle(rng.uniform(0.4, 0.7)), (0.0, 0.0), True, "red")]
                ylo, yhi = 4.0, 9.3
            else:
                parts = _combo_object(kind, rng)
                ylo, yhi = _ANCHOR_Y[kind]
            xs = [off[0] for _, off, _, _ in parts]
            ext = max(s.extent[0] for s, _, _, _ in parts)
            xlo = 0.1 + ext - min(xs)
            xhi = WORLD - 0.1 - ext - max(xs)
            if xhi <= xlo:
                ok = False
                break
            ax = rng.uniform(xlo, xhi)
            ay = rng.uniform(ylo, yhi) if yhi > ylo else ylo
            cand = []
            for shape, (ox, oy), dyn, col in parts:
                pos = (ax + ox, ay + oy + (shape.extent[1] if kind in ("box_stack",) else 0.0))
                if kind == "wall":
                    pos = (ax + ox, oy)
                cand.append((shape, pos, dyn, col, kind))
            new_boxes = [_aabb(s, p) for s, p, _, _, _ in cand]
            if any(b[1] < 0 or b[3] > WORLD for b in new_boxes):
                ok = False
                break
            if any(_overlaps(nb, ob) for nb in new_boxes for ob in boxes):
                ok = False
                break
            boxes.extend(new_boxes)
            placed.extend(cand)
        if ok:
            break
    else:
        raise SpecRejected(f"could not place template {template} without overlaps")
    bodies = [Body(k, s, (float(p[0]), float(p[1])), (0.0, 0.0), _color(col), dyn,
                   COMBO_RESTITUTION, label)
              for k, (s, p, dyn, col, label) in enumerate(placed)]
    bodies += _boundary_bodies(len(bodies))
    return WorldState(tuple(bodies), gravity=float(spec.params.get("gravity", GRAVITY)), dt=spec.dt)


def _wall_body(body_id: int, lower_half_only: bool) -> Body:
    if lower_half_only:
        return Body(body_id, Box(0.25, 2.5), (WORLD - 0.25, 2.5), dynamic=False,
                    color=_color("black"), label="wall")
    return Body(body_id, Box(0.25, WORLD / 2), (WORLD - 0.25, WORLD / 2), dynamic=False,
                color=_color("black"), label="wall")


def _time_to_wall(x, r, v, wall_x):
    return (wall_x - r - x) / v if v > 0 else math.inf


def _build_spatial(spec: ScenarioSpec, rng) -> WorldState:
    """Moving blue square (top lane) and/or red ball bouncing off a low wall."""
    p = spec.params
    variant = p["variant"]
    if variant not in ("square_moves", "ball_bounces", "both"):
        raise ValueError(f"unknown spatial variant {variant!r}")
    r = float(p.get("r", rng.uniform(0.6, 0.9)))
    h = float(p.get("h", rng.uniform(0.5, 0.8)))
    vb = float(p.get("v_ball", rng.uniform(1.0, 4.0)))
    vs = float(p.get("v_square", rng.uniform(1.0, 4.0)))
    wall = _wall_body(2, lower_half_only=True)
    wall_x = WORLD - 0.5
    lo, hi = collision_window(spec.n_frames, spec.dt)
    t_c = rng.uniform(lo, hi)
    ball_x = wall_x - r - vb * t_c
    ball_y = rng.uniform(r + 0.1, 5.0 - r - 0.1)
    sq_x = rng.uniform(h + 0.1, 4.0)
    sq_y = rng.uniform(5.5 + h, WORLD - h - 0.1)
    ball_v = vb if variant in ("ball_bounces", "both") else 0.0
    if ball_v == 0.0:
        ball_x = rng.uniform(r + 0.1, wall_x - r - 1.0)
    sq_v = vs if variant in ("square_moves", "both") else 0.0
    ball = Body(0, Circle(r), (ball_x, ball_y), (ball_v, 0.0), _color("red"), label="ball")
    square = Body(1, Box(h, h), (sq_x, sq_y), (sq_v, 0.0), _color("blue"), label="square")
    return WorldState((ball, square, wall), gravity=0.0, dt=spec.dt)


def _build_temporal(spec: ScenarioSpec, rng) -> WorldState:
    """Ball-ball collision and/or a wall bounce, chained in 'both'."""
    p = spec.params
    variant = p["variant"]
    if variant not in ("collide", "bounce", "both"):
        raise ValueError(f"unknown temporal variant {variant!r}")
    lo, hi = collision_window(spec.n_frames, spec.dt)
    wall_x = WORLD - 0.5
    y = rng.uniform(2.0, 8.0)
    r_red = float(p.get("r1", rng.uniform(0.6, 0.9)))
    v_red = float(p.get("v1", rng.uniform(2.0, 4.0)))
    if variant == "bounce":
        t_c = rng.uniform(lo, hi)
        red = Body(0, Circle(r_red), (wall_x - r_red - v_red * t_c, y), (v_red, 0.0), _color("red"), label="red")
        return WorldState((red, _wall_body(2, False)), gravity=0.0, dt=spec.dt)
    r_blue = float(p.get("r2", rng.uniform(0.6, 0.9)))
    t_c = rng.uniform(lo, hi)
    if variant == "collide":
        v_blue = float(p.get("v2", rng.uniform(1.0, 3.0)))
        gap = (v_red + v_blue) * t_c
        x_red = rng.uniform(r_red, max(r_red, WORLD - r_red - 2 * r_blue - gap))
        x_blue = x_red + r_red + r_blue + gap
        red = Body(0, Circle(r_red), (x_red, y), (v_red, 0.0), _color("red"), label="red")
        blue = Body(1, Circle(r_blue), (x_blue, y), (-v_blue, 0.0), _color("blue"), label="blue")
        return WorldState((red, blue), gravity=0.0, dt=spec.dt)
    # both: red hits a resting blue ball parked near the wall, blue then rebounds
    x_blue = wall_x - r_blue - rng.uniform(0.3, 1.0)
    x_red = x_blue - r_blue - r_red - v_red * t_c
    red = Body(0, Circle(r_red), (x_red, y), (v_red, 0.0), _color("red"), label="red")
    blue = Body(1, Circle(r_blue), (x_blue, y), (0.0, 0.0), _color("blue"), label="blue")
    return WorldState((red, blue, _wall_body(2, False)), gravity=0.0, dt=spec.dt)


_BUILDERS = {
    "uniform": _build_uniform,
    "parabola": _build_parabola,
    "collision": _build_collision,
    "combinatorial": _build_combinatorial,
    "composition-spatial": _build_spatial,
    "composition-temporal": _build_temporal,
}


def build_world(spec: ScenarioSpec) -> WorldState:
    rng = stream(spec.seed, "placement", spec.kind)
    return _BUILDERS[spec.kind](spec, rng)


def simulate_episode(spec: ScenarioSpec, world: WorldState | None = None) -> Episode:
    """Run ``spec.n_frames`` frames. Collision specs must first touch after frame 4."""
    state = world if world is not None else build_world(spec)
    states = [state]
    contacts: list[Contact] = []
    for _ in range(spec.n_frames - 1):
        state, cs = advance(state)
        states.append(state)
        contacts.extend(cs)
    first = None
    if contacts:
        first = int(math.floor(contacts[0].time / spec.dt + 1e-9))
    if spec.kind == "collision":
        ball_contacts = [c for c in contacts if {c.a, c.b} == {0, 1}]
        if ball_contacts:
            first = int(math.floor(ball_contacts[0].time / spec.dt + 1e-9))
            if first < MIN_CONTACT_FRAME:
                raise SpecRejected(
                    f"balls touch at t={ball_contacts[0].time:.4f}s (frame {first}); "
                    f"contact must come after frame {MIN_CONTACT_FRAME}", frame=first)
    return Episode(spec, states, contacts, first, meta={"events": event_signature(contacts, states)})


def event_signature(contacts: Sequence[Contact], states: Sequence[WorldState]) -> list[str]:
    """Coarse event labels: which bodies moved and which pairs touched."""
    first = states[0]
    labels = set()
    for b in first.bodies:
        if b.dynamic and (b.velocity[0] or b.velocity[1]):
            labels.add(f"moves:{b.label or b.id}")
    for c in contacts:
        la = first.body(c.a).label or str(c.a)
        lb = first.body(c.b).label or str(c.b)
        labels.add("contact:" + "+".join(sorted((la, lb))))
    return sorted(labels)
