"""Dataset splits: grid sampling, OOD levels, gaps, attribute pairs, templates.

Ranges are closed intervals of world units (radius) and units/s (speed).
A variable's domain may be a union of intervals, e.g. the out-of-range
radius band ``[0.3, 0.6] U (1.5, 2.0]``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..numkit.rng import derive_seed, stream
from ..physim import DT, N_FRAMES, OBJECT_TYPES, WORLD, ScenarioSpec, build_world

Interval = tuple[float, float]
Domain = tuple[Interval, ...]

ID_R: Domain = ((0.7, 1.5),)
ID_V: Domain = ((1.0, 4.0),)
# the upper radius band starts just above the in-range maximum 1.5
OOD_R: Domain = ((0.3, 0.6), (math.nextafter(1.5, 2.0), 2.0))
OOD_V: Domain = ((0.0, 0.8), (4.5, 6.0))

SCENARIO_DOFS = {
    "uniform": ("r", "v"),
    "parabola": ("r", "v"),
    "collision": ("r1", "r2", "v1", "v2"),
}

OOD_LEVELS = {
    "uniform": (("r",), ("v",), ("r", "v")),
    "parabola": (("r",), ("v",), ("r", "v")),
    "collision": (("r1",), ("v1",), ("r1", "r2"), ("v1", "v2"), ("r1", "v1"), ("r1", "v1", "r2", "v2")),
}

ATTRIBUTE_VALUES = {
    "color": ("red", "blue"),
    "shape": ("ball", "square"),
    "size": (0.7, 1.4),
    "velocity": (1.0, 4.0),
}


def _id_domain(var: str) -> Domain:
    return ID_R if var.startswith("r") else ID_V


def _ood_domain(var: str) -> Domain:
    return OOD_R if var.startswith("r") else OOD_V


def in_domain(value: float, domain: Domain, eps: float = 1e-12) -> bool:
    return any(lo - eps <= value <= hi + eps for lo, hi in domain)


@dataclass(frozen=True)
class SplitSpec:
    kind: str  # id | ood | gap | attribute-pair | templates | composition
    scenario: str
    name: str
    ranges: Mapping[str, Domain] = field(default_factory=dict)
    extra: Mapping[str, object] = field(default_factory=dict)

    def contains(self, params: Mapping[str, float]) -> bool:
        """Range predicate for the split's numeric degrees of freedom."""
        return all(in_domain(float(params[k]), dom) for k, dom in self.ranges.items())


# -- grids -----------------------------------------------------------------------

def _axis_points(domain: Domain, k: int) -> np.ndarray:
    """``k`` evenly spaced points over a union of intervals (midpoint when k=1)."""
    lengths = np.array([hi - lo for lo, hi in domain])
    total = float(lengths.sum())
    if k == 1:
        s = np.array([total / 2.0])
    else:
        s = np.linspace(0.0, total, k)
    out = []
    starts = np.concatenate([[0.0], np.cumsum(lengths)])
    for v in s:
        idx = int(np.searchsorted(starts, v, side="right") - 1)
        idx = min(max(idx, 0), len(domain) - 1)
        lo, hi = domain[idx]
        out.append(min(lo + (v - starts[idx]), hi))
    return np.array(out)


def grid_points(ranges: Mapping[str, Domain], n: int, seed: int = 0) -> list[dict[str, float]]:
    """``n`` points of the coarsest uniform grid with at least ``n`` nodes.

    Each axis gets ``k = ceil(n ** (1/d))`` points; when ``k**d > n`` a seeded
    subset is kept.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    names = list(ranges)
    for name in names:
        for lo, hi in ranges[name]:
            if not hi > lo:
                raise ValueError(f"degenerate range for {name}: {(lo, hi)}")
    d = len(names)
    k = max(1, math.ceil(round(n ** (1.0 / d), 9)))
    while k ** d < n:
        k += 1
    axes = [_axis_points(ranges[name], k) for name in names]
    nodes = list(itertools.product(*axes))
    if len(nodes) > n:
        keep = np.sort(stream(seed, "grid-subset").choice(len(nodes), size=n, replace=False))
        nodes = [nodes[i] for i in keep]
    return [dict(zip(names, map(float, p))) for p in nodes]


def _specs(kind: str, points: Iterable[Mapping[str, float]], seed: int, tag: str,
           n_frames: int, dt: float, fixed: Mapping | None = None) -> list[ScenarioSpec]:
    out = []
    for i, p in enumerate(points):
        params = dict(fixed or {})
        params.update(p)
        out.append(ScenarioSpec(kind, params, derive_seed(seed, tag, i) % (2 ** 63), n_frames, dt))
    return out


def grid_sample(scenario: str, n: int, ranges: Mapping[str, Domain] | None = None, seed: int = 0,
                n_frames: int = N_FRAMES, dt: float = DT, fixed: Mapping | None = None) -> list[ScenarioSpec]:
    """Grid-sampled specs; positions are drawn per spec from its own seed."""
    ranges = ranges or {v: _id_domain(v) for v in SCENARIO_DOFS[scenario]}
    return _specs(scenario, grid_points(ranges, n, seed), seed, "grid", n_frames, dt, fixed)


def id_eval_sample(scenario: str, n_train: int, n_eval: int, seed: int = 0,
                   n_frames: int = N_FRAMES, dt: float = DT) -> list[ScenarioSpec]:
    """In-range evaluation points guaranteed off the training grid.

    The training grid with ``k`` points per axis is refined to ``2k-1``; nodes
    with at least one odd index lie strictly between training nodes.
    """
    names = SCENARIO_DOFS[scenario]
    d = len(names)
    k = max(1, math.ceil(round(n_train ** (1.0 / d), 9)))
    while k ** d < n_train:
        k += 1
    fine = max(2 * k - 1, 3)
    axes = [_axis_points(_id_domain(v), fine) for v in names]
    cands = [idx for idx in itertools.product(range(fine), repeat=d) if any(i % 2 == 1 for i in idx)]
    rng = stream(seed, "id-eval")
    pick = rng.choice(len(cands), size=min(n_eval, len(cands)), replace=False)
    pts = [{v: float(axes[a][cands[j][a]]) for a, v in enumerate(names)} for j in np.sort(pick)]
    return _specs(scenario, pts, seed, "id-eval", n_frames, dt)


# -- OOD --------------------------------------------------------------------------

def ood_levels(scenario: str) -> list[SplitSpec]:
    if scenario not in OOD_LEVELS:
        raise ValueError(f"no OOD levels defined for scenario {scenario!r}")
    out = []
    for level, ood_vars in enumerate(OOD_LEVELS[scenario], start=1):
        ranges = {v: (_ood_domain(v) if v in ood_vars else _id_domain(v)) for v in SCENARIO_DOFS[scenario]}
        out.append(SplitSpec("ood", scenario, f"ood{level}:" + "&".join(ood_vars), ranges,
                             {"level": level, "ood_vars": ood_vars}))
    return out


def ood_sample(split: SplitSpec, n: int, seed: int = 0, n_frames: int = N_FRAMES,
               dt: float = DT) -> list[ScenarioSpec]:
    return grid_sample(split.scenario, n, split.ranges, derive_seed(seed, split.name), n_frames, dt)


# -- gaps --------------------------------------------------------------------------

def gap_dataset(kept: Sequence[Interval], n: int, scenario: str = "uniform", seed: int = 0,
                n_frames: int = N_FRAMES, dt: float = DT) -> list[ScenarioSpec]:
    """Velocities only from the kept intervals (inside [1, 4]); radius over its full range."""
    kept = tuple(sorted((float(a), float(b)) for a, b in kept))
    for lo, hi in kept:
        if lo < ID_V[0][0] - 1e-12 or hi > ID_V[0][1] + 1e-12:
            raise ValueError(f"kept range {(lo, hi)} is outside {ID_V[0]}")
    ranges = {"r": ID_R, "v": kept}
    return grid_sample(scenario, n, ranges, seed, n_frames, dt)


def excluded_between(kept: Sequence[Interval]) -> Domain:
    kept = sorted(kept)
    return tuple((a[1], b[0]) for a, b in zip(kept[:-1], kept[1:]) if b[0] > a[1])


def in_squares(v1: float, v2: float, squares: Sequence[tuple[float, float, float, float]]) -> bool:
    return any(a < v1 < b and c < v2 < d for a, b, c, d in squares)


def collision_gap_dataset(squares: Sequence[tuple[float, float, float, float]], n: int, seed: int = 0,
                          n_frames: int = N_FRAMES, dt: float = DT) -> list[ScenarioSpec]:
    """Collision specs whose (v1, v2) avoid the open squares ``(v1lo, v1hi, v2lo, v2hi)``."""
    ranges = {v: _id_domain(v) for v in SCENARIO_DOFS["collision"]}
    k = max(2, math.ceil(n ** 0.25))
    while True:
        axes = [_axis_points(ranges[v], k) for v in ("r1", "r2", "v1", "v2")]
        nodes = [p for p in itertools.product(*axes) if not in_squares(p[2], p[3], squares)]
        if len(nodes) >= n:
            break
        k += 1
    keep = np.sort(stream(seed, "collision-gap").choice(len(nodes), size=n, replace=False))
    pts = [dict(zip(("r1", "r2", "v1", "v2"), map(float, nodes[i]))) for i in keep]
    return _specs("collision", pts, seed, "collision-gap", n_frames, dt)


# -- flips -------------------------------------------------------------------------

def mirror_spec(spec: ScenarioSpec) -> ScenarioSpec:
    """Spec of the horizontally mirrored uniform/parabola episode."""
    if spec.kind not in ("uniform", "parabola"):
        raise ValueError(f"mirror_spec supports uniform/parabola, not {spec.kind}")
    body = build_world(spec).bodies[0]
    params = dict(spec.params)
    params["x0"] = WORLD - body.position[0]
    params["y0"] = body.position[1]
    if spec.kind == "uniform":
        params["direction"] = -float(params.get("direction", 1.0))
    else:
        params["v"] = -float(params["v"])
    return ScenarioSpec(spec.kind, params, spec.seed, spec.n_frames, spec.dt)


def flip_augment(specs: Sequence[ScenarioSpec]) -> list[ScenarioSpec]:
    return list(specs) + [mirror_spec(s) for s in specs]


# -- attribute pairs ----------------------------------------------------------------

def attribute_pair_dataset(attr_a: str, attr_b: str, n_per_combo: int, seed: int = 0,
                           ring: bool = False, n_frames: int = N_FRAMES,
                           dt: float = DT) -> tuple[list[ScenarioSpec], list[ScenarioSpec], dict]:
    """Uniform-motion specs for one attribute pair.

    Training uses combos (a0, b0) and (a1, b1); testing the swapped (a0, b1),
    (a1, b0). Attributes outside the pair: color red, shape ball, radius and
    speed drawn from their in-range intervals. ``ring`` swaps the square for a
    ring and orders colors (blue, red), giving blue balls and red rings.
    """
    if attr_a == attr_b or attr_a not in ATTRIBUTE_VALUES or attr_b not in ATTRIBUTE_VALUES:
        raise ValueError(f"bad attribute pair {(attr_a, attr_b)}")
    values = dict(ATTRIBUTE_VALUES)
    if ring:
        values["shape"] = ("ball", "ring")
        values["color"] = ("blue", "red")
    a0, a1 = values[attr_a]
    b0, b1 = values[attr_b]
    train_combos = [(a0, b0), (a1, b1)]
    test_combos = [(a0, b1), (a1, b0)]
    key = {"color": "color", "shape": "shape", "size": "r", "velocity": "v"}

    def build(combos, tag):
        out = []
        rng = stream(seed, "attr", attr_a, attr_b, tag)
        for ci, (va, vb) in enumerate(combos):
            for i in range(n_per_combo):
                params = {"color": "red", "shape": "ball",
                          "r": float(rng.uniform(*ID_R[0])), "v": float(rng.uniform(*ID_V[0]))}
                params[key[attr_a]] = va
                params[key[attr_b]] = vb
                out.append(ScenarioSpec("uniform", params, derive_seed(seed, tag, ci, i) % (2 ** 63),
                                        n_frames, dt))
        return out

    meta = {"pair": (attr_a, attr_b), "train": train_combos, "test": test_combos, "values": values}
    return build(train_combos, "train"), build(test_combos, "test"), meta


# -- templates ----------------------------------------------------------------------

TEMPLATES: tuple[tuple[int, int, int, int], ...] = tuple(itertools.combinations(range(len(OBJECT_TYPES)), 4))


def template_split(n_train: int = 60, n_test: int = 10, seed: int = 0) -> tuple[list[int], list[int]]:
    """Disjoint template ids (indices into ``TEMPLATES``)."""
    if n_train < 0 or n_test < 0 or n_train + n_test > len(TEMPLATES):
        raise ValueError(f"need n_train + n_test <= {len(TEMPLATES)}")
    perm = stream(seed, "templates").permutation(len(TEMPLATES))
    return sorted(int(i) for i in perm[:n_train]), sorted(int(i) for i in perm[n_train:n_train + n_test])


def pairs_covered(template_ids: Iterable[int]) -> set[tuple[int, int]]:
    out = set()
    for t in template_ids:
        out.update(itertools.combinations(TEMPLATES[t], 2))
    return out


def minimal_template_cover() -> list[int]:
    """Smallest template set touching every pair of object types (found by search)."""
    all_pairs = set(itertools.combinations(range(len(OBJECT_TYPES)), 2))
    pair_sets = [set(itertools.combinations(t, 2)) for t in TEMPLATES]

    def search(chosen, covered, size):
        if covered == all_pairs:
            return chosen
        if len(chosen) == size:
            return None
        # branch on the smallest uncovered pair to keep the tree narrow
        target = min(all_pairs - covered)
        for i in range(len(TEMPLATES)):
            if target in pair_sets[i] and i not in chosen:
                got = search(chosen + [i], covered | pair_sets[i], size)
                if got is not None:
                    return got
        return None

    lower = math.ceil(len(all_pairs) / 6)
    for size in range(lower, len(TEMPLATES) + 1):
        found = search([], set(), size)
        if found is not None:
            return sorted(found)
    raise RuntimeError("unreachable")


def template_specs(template_ids: Sequence[int], n_per_template: int, seed: int = 0,
                   n_frames: int = N_FRAMES, dt: float = DT) -> list[ScenarioSpec]:
    out = []
    for t in template_ids:
        for i in range(n_per_template):
            out.append(ScenarioSpec("combinatorial", {"template": TEMPLATES[t], "template_id": int(t)},
                                    derive_seed(seed, "template", t, i) % (2 ** 63), n_frames, dt))
    return out


# -- composition ----------------------------------------------------------------------

COMPOSITION_VARIANTS = {
    "spatial": ("square_moves", "ball_bounces", "both"),
    "temporal": ("collide", "bounce", "both"),
}


def composition_dataset(kind: str, n_train: int, n_test: int, seed: int = 0, n_frames: int = N_FRAMES,
                        dt: float = DT) -> tuple[list[ScenarioSpec], list[ScenarioSpec]]:
    """Training halves show one event type each; test specs combine both."""
    if kind not in COMPOSITION_VARIANTS:
        raise ValueError(f"composition kind must be spatial or temporal, got {kind!r}")
    a, b, both = COMPOSITION_VARIANTS[kind]
    scen = f"composition-{kind}"
    train = [ScenarioSpec(scen, {"variant": a if i % 2 == 0 else b},
                          derive_seed(seed, scen, "train", i) % (2 ** 63), n_frames, dt) for i in range(n_train)]
    test = [ScenarioSpec(scen, {"variant": both}, derive_seed(seed, scen, "test", i) % (2 ** 63), n_frames, dt)
            for i in range(n_test)]
    return train, test
