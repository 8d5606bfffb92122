"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Criteria 5 (``slow``) and 6-8 (``longrun``, needs ``PHYSLAW_LONG=1``) train
models. The long sweeps read their budget from ``PHYSLAW_LONG_STEPS`` and
cache datasets and checkpoints under ``PHYSLAW_LONG_DIR``.
"""
from __future__ import annotations

import itertools
import json
import math
import os
import time
import zlib
from pathlib import Path

import numpy as np
import pytest

from physlaw import diffcore as dc
from physlaw import physim as ps
from physlaw.datagen import simulate_checked
from physlaw.datagen import splits as sp
from physlaw.evaluation import episode_error, generate_and_score, mean_error, parser_baseline
from physlaw.numkit import Tensor, mse
from physlaw.physim import Body, Circle, ScenarioSpec, WorldState
from physlaw.probe import Attributes, anomaly_check, classify_attribute_outcome
from physlaw.probe.anomaly import blank_object, insert_teleport
from physlaw.raster import RenderConfig, render_episode
from physlaw.stdit import PRESETS, ModelConfig, SpacetimeDiT

LONG = os.environ.get("PHYSLAW_LONG") == "1"
longrun = pytest.mark.skipif(not LONG, reason="long-running sweep; set PHYSLAW_LONG=1")


def _episodes(specs):
    return [simulate_checked(s)[1] for s in specs]


def _render_all(eps, res):
    cfg = RenderConfig(res)
    return np.stack([render_episode(ep, cfg) for ep in eps])


# -- 1. simulator conservation ------------------------------------------------------

def _free_elastic_world(rng) -> WorldState:
    """3-5 balls in open space, aimed at the middle so most episodes collide."""
    n = int(rng.integers(3, 6))
    bodies = []
    while len(bodies) < n:
        r = rng.uniform(0.3, 1.2)
        p = rng.uniform(1.5, 8.5, size=2)
        if any(math.dist(p, b.position) < r + b.shape.radius + 0.05 for b in bodies):
            continue
        v = (np.array([5.0, 5.0]) - p) * rng.uniform(0.3, 1.5) + rng.uniform(-1, 1, size=2)
        bodies.append(Body(len(bodies), Circle(r), tuple(p), tuple(v)))
    return WorldState(tuple(bodies))


def test_criterion_01_conservation(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240101)
    worst_p = worst_e = 0.0
    collided = 0
    for _ in range(1000):
        s = _free_elastic_world(rng)
        p0, e0 = ps.momentum(s), ps.kinetic_energy(s)
        # momentum tolerance is relative to the total momentum magnitude sum(m|v|)
        p_scale = sum(b.mass * math.hypot(*b.velocity) for b in s.bodies)
        hit = False
        for _ in range(31):
            s, contacts = ps.advance(s)
            hit |= bool(contacts)
        collided += hit
        worst_p = max(worst_p, float(np.linalg.norm(ps.momentum(s) - p0)) / p_scale)
        worst_e = max(worst_e, abs(ps.kinetic_energy(s) - e0) / e0)

    worst_traj = 0.0
    t = np.arange(32) * 0.1
    for i in range(200):
        r, v = 0.7 + 0.8 * (i % 10) / 9, 1.0 + 3.0 * (i // 10) / 19
        u = ps.simulate_episode(ScenarioSpec("uniform", {"r": r, "v": v, "x0": 1.0, "y0": 5.0}))
        worst_traj = max(worst_traj, float(np.max(np.abs(u.positions()[:, 0, 0] - (1.0 + v * t)))))
        p = ps.simulate_episode(ScenarioSpec("parabola", {"r": r, "v": v, "x0": 0.5, "y0": 9.5}))
        pos = p.positions()[:, 0]
        worst_traj = max(worst_traj, float(np.max(np.abs(pos[:, 0] - (0.5 + v * t)))),
                         float(np.max(np.abs(pos[:, 1] - (9.5 - 0.5 * ps.GRAVITY * t * t)))))
    elapsed = time.perf_counter() - t0
    ok = worst_p <= 1e-9 and worst_e <= 1e-9 and worst_traj <= 1e-9 and collided > 500 and elapsed < 60
    verdict(1, ok, f"momentum {worst_p:.1e}, energy {worst_e:.1e}, closed form {worst_traj:.1e}, "
                   f"{collided}/1000 episodes collided, {elapsed:.0f}s")
    assert ok


# -- 2. parser baseline -------------------------------------------------------------

def test_criterion_02_parser_baseline(verdict):
    t0 = time.perf_counter()
    bounds = {128: 0.03, 32: 0.12}
    results = {}
    for kind in ("uniform", "parabola", "collision"):
        eps = _episodes(sp.grid_sample(kind, 200, seed=2))
        for res in bounds:
            cfg = RenderConfig(res)
            errs = [episode_error(render_episode(ep, cfg), ep, c=1).e for ep in eps]
            results[kind, res] = float(np.mean([e for e in errs if e is not None]))
    elapsed = time.perf_counter() - t0
    ok = all(results[k, r] <= bounds[r] for k, r in results) and elapsed < 300
    detail = ", ".join(f"{k}@{r}={e:.4f}" for (k, r), e in results.items())
    verdict(2, ok, f"{detail}, {elapsed:.0f}s")
    assert ok


# -- 3. diffusion algebra -----------------------------------------------------------

def test_criterion_03_diffusion_algebra(verdict):
    t0 = time.perf_counter()
    sched = dc.make_schedule(1000)
    g = sched.gamma
    monotone = bool(np.all(np.diff(g) < 0)) and g[-1] == 0.0 and sched.snr()[-1] == 0.0
    rng = np.random.default_rng(3)
    worst = {"standard": 0.0, "swapped": 0.0}
    n, d = 10_000, 64
    V = rng.standard_normal((n, d))
    eps = rng.standard_normal((n, d))
    # every step 1..T is hit ten times
    t = np.arange(n) % sched.T + 1
    for conv in worst:
        # the swapped pair is singular where gamma reaches 0
        keep = g[t - 1] > 0 if conv == "swapped" else np.ones(n, bool)
        gam = sched.at(t[keep])
        Vt = dc.forward_corrupt(V[keep], gam, eps[keep], conv)
        y = dc.velocity_target(V[keep], eps[keep], gam, conv)
        V_hat, e_hat = dc.recover_from_v(Vt, y, gam, conv)
        worst[conv] = max(float(np.max(np.abs(V_hat - V[keep]))), float(np.max(np.abs(e_hat - eps[keep]))))
    elapsed = time.perf_counter() - t0
    ok = monotone and max(worst.values()) <= 1e-5 and elapsed < 60
    verdict(3, ok, f"monotone+zero terminal SNR {monotone}, inverse standard {worst['standard']:.1e}, "
                   f"swapped {worst['swapped']:.1e} (t<T), {elapsed:.0f}s")
    assert ok


# -- 4. gradients -------------------------------------------------------------------

def test_criterion_04_gradients(verdict):
    from test_numkit import OP_CASES, _probe_loss_ref, central_fd, rel_err

    t0 = time.perf_counter()
    op_worst = 0.0
    for name, (build, ref, shapes) in sorted(OP_CASES.items()):
        rng = np.random.default_rng(zlib.crc32(name.encode()))
        inputs = [rng.standard_normal(s) for s in shapes]
        probe = rng.standard_normal(ref(*inputs).shape)
        # float32 tapes, as used by the model
        tensors = [Tensor(x.astype(np.float32), requires_grad=True) for x in inputs]
        build(*tensors).backward(probe.astype(np.float32))
        loss = _probe_loss_ref(ref, probe)
        for k, x in enumerate(inputs):
            def f(xk, k=k):
                args = list(inputs)
                args[k] = xk
                return loss(*args)
            fd = central_fd(f, x.copy(), 1e-3 * max(1.0, float(np.abs(x).max())))
            op_worst = max(op_worst, rel_err(tensors[k].grad.astype(np.float64), fd))
    e2e = _end_to_end_fd()
    elapsed = time.perf_counter() - t0
    ok = op_worst <= 1e-4 and e2e <= 1e-3 and elapsed < 300
    verdict(4, ok, f"op-level (float32) {op_worst:.1e} over {len(OP_CASES)} ops, end-to-end {e2e:.1e}, {elapsed:.0f}s")
    assert ok


def _end_to_end_fd() -> float:
    """Relative error of every tiny-model parameter gradient against float64 differences."""
    cfg = ModelConfig(layers=1, hidden=16, heads=2, patch=(2, 4, 4), t_dim=8)
    rng = np.random.default_rng(4)
    m32 = SpacetimeDiT(cfg, seed=1)
    for p in m32.parameters().values():
        p.data = (p.data + rng.normal(0, 0.2, p.shape)).astype(np.float32)
    m64 = SpacetimeDiT(cfg, seed=1)
    for k, p in m64.parameters().items():
        p.data = m32.parameters()[k].data.astype(np.float64)
    x = rng.standard_normal((1, 4, 8, 8, 9)).astype(np.float32)
    y = rng.standard_normal((1, 4, 8, 8, 3)).astype(np.float32)
    t = np.array([17.0])
    mse(m32(x, t), Tensor(y)).backward()
    x64, y64 = Tensor(x.astype(np.float64)), Tensor(y.astype(np.float64))

    def central(W, i, h):
        old = W.data[i]
        W.data[i] = old + h
        fp = float(mse(m64(x64, t), y64).item())
        W.data[i] = old - h
        fm = float(mse(m64(x64, t), y64).item())
        W.data[i] = old
        return (fp - fm) / (2 * h)

    ana, fd = [], []
    for name, W in m64.parameters().items():
        for flat in rng.choice(W.size, size=min(4, W.size), replace=False):
            i = np.unravel_index(flat, W.shape)
            fd.append((4 * central(W, i, 5e-4) - central(W, i, 1e-3)) / 3)
            ana.append(float(m32.parameters()[name].grad[i]))
    ana, fd = np.array(ana), np.array(fd)
    return float(np.linalg.norm(ana - fd) / np.linalg.norm(fd))


# -- 5. overfit smoke test ------------------------------------------------------------

# the criterion allows at most 5k steps
OVERFIT = dict(steps=min(int(os.environ.get("PHYSLAW_OVERFIT_STEPS", 4000)), 5000), batch_size=4, lr=1e-3,
               warmup=100)


@pytest.mark.slow
def test_criterion_05_overfit(verdict):
    t0 = time.perf_counter()
    eps = _episodes(sp.grid_sample("uniform", 16, n_frames=8, seed=0))
    videos = _render_all(eps, 32)
    model = SpacetimeDiT(PRESETS["nano"], seed=0)
    dc.train(model, videos, dc.TrainConfig(c=3, seed=0, **OVERFIT))
    scores, _ = generate_and_score(model, videos, eps, 3, steps=50, seed=1)
    psnr = float(np.mean([s.psnr for s in scores]))
    e = mean_error(scores)
    base = parser_baseline(videos, eps, 3)
    elapsed = time.perf_counter() - t0
    ok = psnr >= 30.0 and e <= 3 * base and elapsed <= 1800
    verdict(5, ok, f"PSNR {psnr:.1f} dB, e {e:.4f} vs 3x baseline {3 * base:.4f}, "
                   f"{OVERFIT['steps']} steps, {elapsed / 60:.1f} min")
    assert ok


# -- 6-8. long-running sweeps ----------------------------------------------------------

LONG_DIR = Path(os.environ.get("PHYSLAW_LONG_DIR", "/tmp/physlaw-long"))
LONG_STEPS = int(os.environ.get("PHYSLAW_LONG_STEPS", 20000))
LONG_EVAL = int(os.environ.get("PHYSLAW_LONG_EVAL", 64))
LONG_MODEL = os.environ.get("PHYSLAW_LONG_MODEL", "micro")


def _trained(name: str, specs_fn):
    """Train (or reload) the long-run model called ``name`` on the specs from ``specs_fn``."""
    ck = LONG_DIR / name / "model.phyw"
    if ck.exists():
        return SpacetimeDiT.load(ck)[0]
    ck.parent.mkdir(parents=True, exist_ok=True)
    videos = _render_all(_episodes(specs_fn()), 32)
    model = SpacetimeDiT(PRESETS[LONG_MODEL], seed=0)
    cfg = dc.TrainConfig(steps=LONG_STEPS, batch_size=8, lr=3e-4, warmup=500, c=3, seed=0)
    dc.train(model, videos, cfg, log_path=ck.parent / "train_log.csv")
    model.save(ck)
    return model


def _eval_cached(name: str, model, specs) -> float:
    out = LONG_DIR / name / "eval.json"
    if out.exists():
        return json.loads(out.read_text())["e"]
    eps = _episodes(specs)
    scores, _ = generate_and_score(model, _render_all(eps, 32), eps, 3, steps=50, seed=7)
    e = mean_error(scores)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({"e": e, "n": len(scores)}))
    return e


def _uniform_id(n: int):
    return lambda: sp.grid_sample("uniform", n, n_frames=8, seed=0)


def _id_eval_specs(n_train: int):
    return sp.id_eval_sample("uniform", n_train, LONG_EVAL, seed=11, n_frames=8)


@pytest.mark.longrun
@longrun
def test_criterion_06_id_ood_gap(verdict):
    model = _trained("id10k", _uniform_id(10_000))
    e_id = _eval_cached("id10k/id", model, _id_eval_specs(10_000))
    ood_v = sp.ood_levels("uniform")[1]
    e_ood = _eval_cached("id10k/ood-v", model, sp.ood_sample(ood_v, LONG_EVAL, seed=12, n_frames=8))
    eval_eps = _episodes(_id_eval_specs(10_000))
    base = parser_baseline(_render_all(eval_eps, 32), eval_eps, 3)
    ok = e_ood >= 5 * e_id and e_id <= 5 * base
    verdict(6, ok, f"ID e {e_id:.4f}, OOD-velocity e {e_ood:.4f} (ratio {e_ood / e_id:.1f}), "
                   f"baseline {base:.4f}, {LONG_MODEL} {LONG_STEPS} steps")
    assert ok


@pytest.mark.longrun
@longrun
def test_criterion_07_data_scaling(verdict):
    sizes = (1_000, 10_000, 50_000)
    errs = []
    for n in sizes:
        model = _trained(f"id{n // 1000}k", _uniform_id(n))
        errs.append(_eval_cached(f"id{n // 1000}k/id", model, _id_eval_specs(10_000)))
    ok = all(b <= 1.2 * a for a, b in zip(errs, errs[1:]))
    verdict(7, ok, "ID e " + ", ".join(f"{n // 1000}K={e:.4f}" for n, e in zip(sizes, errs)))
    assert ok


@pytest.mark.longrun
@longrun
def test_criterion_08_gap_trend(verdict):
    middle = sp.grid_sample("uniform", LONG_EVAL, {"r": sp.ID_R, "v": ((2.25, 2.75),)}, seed=13, n_frames=8)
    errs = {}
    for name, kept in (("narrow", [(1.0, 2.25), (2.75, 4.0)]), ("wide", [(1.0, 1.25), (3.75, 4.0)])):
        model = _trained(f"gap-{name}", lambda kept=kept: sp.gap_dataset(kept, 10_000, seed=0, n_frames=8))
        errs[name] = _eval_cached(f"gap-{name}/middle", model, middle)
    ok = errs["narrow"] < errs["wide"]
    verdict(8, ok, f"middle-band e narrow gap {errs['narrow']:.4f}, wide gap {errs['wide']:.4f}")
    assert ok


# -- 9. splits ------------------------------------------------------------------------

def test_criterion_09_splits(verdict):
    t0 = time.perf_counter()
    train, test = sp.template_split(60, 10, seed=0)
    templates_ok = len(set(train) | set(test)) == 70 and not set(train) & set(test)
    expected = {
        "uniform": [("r",), ("v",), ("r", "v")],
        "parabola": [("r",), ("v",), ("r", "v")],
        "collision": [("r1",), ("v1",), ("r1", "r2"), ("v1", "v2"), ("r1", "v1"), ("r1", "v1", "r2", "v2")],
    }
    levels_ok = all([tuple(lvl.extra["ood_vars"]) for lvl in sp.ood_levels(k)] == v for k, v in expected.items())
    for k in expected:
        for lvl in sp.ood_levels(k):
            for spec in sp.ood_sample(lvl, 16, seed=1):
                for var, dom in lvl.ranges.items():
                    levels_ok &= sp.in_domain(spec.params[var], dom)
    gap_bad = 0
    rng = np.random.default_rng(9)
    for _ in range(50):
        cuts = np.sort(rng.uniform(1.0, 4.0, size=2))
        kept = [(1.0, float(cuts[0])), (float(cuts[1]), 4.0)]
        for spec in sp.gap_dataset(kept, 30, seed=int(rng.integers(1 << 30))):
            gap_bad += cuts[0] < spec.params["v"] < cuts[1]
    squares = [(1.5, 3.5, 1.5, 3.5)]
    gap_bad += sum(sp.in_squares(s.params["v1"], s.params["v2"], squares)
                   for s in sp.collision_gap_dataset(squares, 64, seed=2))
    elapsed = time.perf_counter() - t0
    ok = templates_ok and levels_ok and gap_bad == 0 and elapsed < 60
    verdict(9, ok, f"templates {templates_ok}, OOD levels {levels_ok}, excluded specs {gap_bad}, {elapsed:.0f}s")
    assert ok


# -- 10. anomaly detector -------------------------------------------------------------

def _anomaly_population(n: int):
    """Ground-truth episodes across scenarios and resolutions, cycling deterministically."""
    kinds = itertools.cycle([
        ("uniform", 32, lambda i: sp.grid_sample("uniform", 1, seed=i)[0]),
        ("parabola", 32, lambda i: sp.grid_sample("parabola", 1, seed=i)[0]),
        ("collision", 64, lambda i: sp.grid_sample("collision", 1, seed=i)[0]),
        ("ood-uniform", 32, lambda i: sp.ood_sample(sp.ood_levels("uniform")[2], 1, seed=i)[0]),
        ("combinatorial", 64, lambda i: sp.template_specs([i % 70], 1, seed=i)[0]),
    ])
    for i, (_, res, make) in zip(range(n), kinds):
        yield res, simulate_checked(make(i))[1]


def test_criterion_10_anomaly_detector(verdict):
    t0 = time.perf_counter()
    false_pos = 0
    for res, ep in _anomaly_population(500):
        rep = anomaly_check(render_episode(ep, RenderConfig(res)), 3, gravity=ep.states[0].gravity)
        false_pos += rep.any
    blank_hit = blank_n = tele_hit = tele_n = 0
    for i in range(60):
        kind = ("uniform", "parabola", "collision")[i % 3]
        ep = simulate_checked(sp.grid_sample(kind, 1, seed=1000 + i)[0])[1]
        g = ep.states[0].gravity
        try:
            vid, _ = blank_object(ep, 0, RenderConfig(32), start=4)
            blank_n += 1
            blank_hit += anomaly_check(vid, 3, gravity=g).persistence
        except ValueError:
            pass
        try:
            vid, _ = insert_teleport(ep, 0, RenderConfig(64))
            tele_n += 1
            tele_hit += anomaly_check(vid, 3, gravity=g).teleport
        except ValueError:
            pass
    elapsed = time.perf_counter() - t0
    ok = (false_pos == 0 and blank_hit == blank_n and tele_hit == tele_n and min(blank_n, tele_n) >= 40
          and elapsed < 300)
    verdict(10, ok, f"false positives {false_pos}/500, blanking {blank_hit}/{blank_n}, "
                    f"teleport {tele_hit}/{tele_n}, {elapsed:.0f}s")
    assert ok


# -- 11. attribute classifier ---------------------------------------------------------

def test_criterion_11_attribute_classifier(verdict):
    t0 = time.perf_counter()
    correct = total = 0
    pairs = list(itertools.combinations(sp.ATTRIBUTE_VALUES, 2))
    for (a, b), ring in [(p, False) for p in pairs] + [(("color", "shape"), True)]:
        train, test, _ = sp.attribute_pair_dataset(a, b, 2, seed=5, ring=ring, n_frames=8)
        for res in (32, 128):
            eps = _episodes(train + test)
            vids = [render_episode(ep, RenderConfig(res)) for ep in eps]
            truth = [Attributes(ep.spec.params["color"], ep.spec.params["shape"], float(ep.spec.params["r"]),
                                float(ep.spec.params["v"])) for ep in eps]
            # score every (condition, generated) combination, not only matching ones
            for cond, (vid, got) in itertools.product(truth, zip(vids, truth)):
                keep_a, keep_b = got.get(a) == cond.get(a), got.get(b) == cond.get(b)
                want = ("kept both" if keep_a and keep_b else f"kept {a}" if keep_a
                        else f"kept {b}" if keep_b else "kept neither")
                correct += classify_attribute_outcome(vid, cond, (a, b)) == want
                total += 1
    elapsed = time.perf_counter() - t0
    ok = correct == total
    verdict(11, ok, f"{correct}/{total} outcomes over 6 pairs + ring variant at 32 and 128 px, {elapsed:.0f}s")
    assert ok
