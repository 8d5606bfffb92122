"""``physlaw`` command line: gen, train, sample, eval, report.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from collections import Counter, defaultdict
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import diffcore as dc
from ..datagen import ContainerError, build_dataset, read_dataset, simulate_checked, write_video
from ..datagen import splits as sp
from ..evaluation import generate_and_score, mean_error, parser_baseline
from ..numkit import AdamW, CheckpointError
from ..physim import ScenarioSpec, SpecRejected
from ..raster import RenderConfig
from ..stdit import PRESETS, SpacetimeDiT
from . import svg
from .config import ConfigError, ExperimentConfig, load_config

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
log = logging.getLogger("physlaw")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# -- spec construction -------------------------------------------------------------

def _intervals(text: str) -> list[tuple[float, float]]:
    out = []
    for part in text.split(","):
        lo, hi = part.split("-")
        out.append((float(lo), float(hi)))
    return out


def _squares(text: str) -> list[tuple[float, float, float, float]]:
    out = []
    for part in text.split(","):
        a, b = part.split("/")
        (v1lo, v1hi), (v2lo, v2hi) = _intervals(a)[0], _intervals(b)[0]
        out.append((v1lo, v1hi, v2lo, v2hi))
    return out


def build_specs(cfg: ExperimentConfig) -> tuple[list[ScenarioSpec], dict]:
    scen, split, n, seed, L = cfg.scenario, cfg.split, cfg.n, cfg.seed, cfg.frames
    meta: dict = {"split": split, "seed": seed}
    try:
        if scen in ("uniform", "parabola", "collision"):
            if split == "id":
                specs = sp.grid_sample(scen, n, seed=seed, n_frames=L)
            elif split == "id-eval":
                specs = sp.id_eval_sample(scen, cfg.grid_n, n, seed=seed, n_frames=L)
            elif split.startswith("ood:"):
                levels = sp.ood_levels(scen)
                which = split[4:]
                if which == "all":
                    chosen = levels
                elif which.startswith("level") and which[5:].isdigit() and 1 <= int(which[5:]) <= len(levels):
                    chosen = [levels[int(which[5:]) - 1]]
                else:
                    raise UsageError(f"unknown OOD split {split!r} (levels 1..{len(levels)} or all)")
                specs = [s for lvl in chosen for s in sp.ood_sample(lvl, n, seed, n_frames=L)]
                meta["levels"] = [lvl.name for lvl in chosen]
            elif split.startswith("gap:"):
                if scen == "collision":
                    squares = _squares(split[4:])
                    specs = sp.collision_gap_dataset(squares, n, seed, n_frames=L)
                    meta["squares"] = squares
                else:
                    kept = _intervals(split[4:])
                    specs = sp.gap_dataset(kept, n, scen, seed, n_frames=L)
                    meta["kept"] = kept
            elif split.startswith("range:"):
                rng = tuple(_intervals(split[6:]))
                specs = sp.grid_sample(scen, n, {"r": sp.ID_R, "v": rng}, seed, n_frames=L) \
                    if scen != "collision" else None
                if specs is None:
                    raise UsageError("range splits apply to uniform/parabola")
                meta["v_range"] = rng
            else:
                raise UsageError(f"unknown split {split!r} for {scen}")
            if cfg.flip:
                specs = sp.flip_augment(specs)
        elif scen == "combo":
            train, test = sp.template_split(60, 10, seed)
            ids = {"train": train, "test": test, "all": list(range(len(sp.TEMPLATES))),
                   "cover": sp.minimal_template_cover()}.get(split)
            if ids is None:
                raise UsageError("combo split must be train, test, all or cover")
            specs = sp.template_specs(ids, n, seed, n_frames=L)
            meta["templates"] = ids
        elif scen == "attribute":
            pair = tuple(p.strip() for p in cfg.pair.split(",")) if cfg.pair else ()
            if len(pair) != 2:
                raise UsageError("attribute datasets need pair = A,B")
            if split not in ("train", "test"):
                raise UsageError("attribute split must be train or test")
            train, test, info = sp.attribute_pair_dataset(pair[0], pair[1], max(1, n // 2), seed,
                                                          ring=cfg.ring, n_frames=L)
            specs = train if split == "train" else test
            meta["pair"] = list(pair)
            meta["combos"] = info[split]
        elif scen in ("spatial", "temporal"):
            if split not in ("train", "test"):
                raise UsageError("composition split must be train or test")
            train, test = sp.composition_dataset(scen, n, n, seed, n_frames=L)
            specs = train if split == "train" else test
        else:
            raise UsageError(f"unknown scenario {scen!r}")
    except (ValueError, IndexError) as exc:
        if isinstance(exc, UsageError):
            raise
        raise UsageError(f"bad split {split!r}: {exc}") from None
    return specs, meta


# -- commands ---------------------------------------------------------------------

def _out(cfg: ExperimentConfig) -> Path:
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_gen(cfg: ExperimentConfig) -> int:
    specs, meta = build_specs(cfg)
    if not specs:
        raise UsageError("split produced no episodes")
    try:
        rcfg = RenderConfig(cfg.res)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    meta["scenario_arg"] = cfg.scenario
    man = build_dataset(_out(cfg), specs, rcfg, tags=[cfg.split], meta=meta)
    print(f"wrote {len(man.episodes)} episodes to {cfg.out}")
    return EXIT_OK


def _load_data(cfg: ExperimentConfig):
    if not cfg.data:
        raise UsageError("data = DIR is required")
    try:
        man, videos, _ = read_dataset(cfg.data)
    except (ContainerError, OSError) as exc:
        raise DataError(f"cannot read dataset {cfg.data}: {exc}") from None
    if not videos:
        raise DataError(f"dataset {cfg.data} is empty")
    return man, np.stack(videos)


def cmd_train(cfg: ExperimentConfig, resume: bool = False) -> int:
    if cfg.model not in PRESETS:
        raise UsageError(f"unknown model {cfg.model!r}; choose from {sorted(PRESETS)}")
    man, videos = _load_data(cfg)
    out = _out(cfg)
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    tc = dc.TrainConfig(steps=cfg.steps, batch_size=cfg.batch, lr=cfg.lr, warmup=cfg.warmup, c=cfg.c,
                        seed=cfg.seed, flip=cfg.flip, checkpoint_every=cfg.eval_every)
    ck = out / "model.phyw"
    start, opt = 0, None
    if resume and ck.exists():
        model, extra = SpacetimeDiT.load(ck)
        opt = AdamW(model.parameters(), lr=tc.lr, weight_decay=tc.weight_decay, total_steps=tc.steps,
                    warmup=tc.warmup)
        start = dc.restore_optimizer(opt, extra)
    else:
        model = SpacetimeDiT(PRESETS[cfg.model], seed=cfg.seed)
    res, _ = dc.train(model, videos, tc, log_path=out / "train_log.csv", checkpoint_path=ck, optimizer=opt,
                      start_step=start, strict=cfg.strict, until=cfg.stop_after or None)
    if res.losses:
        print(f"steps {start + 1}..{res.steps_done}: loss {res.losses[0]:.4f} -> {res.losses[-1]:.4f}")
    print(f"checkpoint {ck}")
    return EXIT_OK


def _load_model(cfg: ExperimentConfig) -> SpacetimeDiT:
    if not cfg.checkpoint:
        raise UsageError("checkpoint = FILE is required")
    try:
        model, _ = SpacetimeDiT.load(cfg.checkpoint)
    except (CheckpointError, OSError, KeyError) as exc:
        raise DataError(f"cannot load checkpoint {cfg.checkpoint}: {exc}") from None
    return model


def cmd_sample(cfg: ExperimentConfig) -> int:
    model = _load_model(cfg)
    man, videos = _load_data(cfg)
    out = _out(cfg) / "samples"
    out.mkdir(exist_ok=True)
    gen = []
    for s in range(0, len(videos), 8):
        gen.append(dc.sample(model, videos[s:s + 8], cfg.c, steps=cfg.sample_steps, seed=cfg.seed + s))
    for rec, v in zip(man.episodes, np.concatenate(gen)):
        write_video(out / f"{rec.id}.phyv", v)
    print(f"wrote {len(man.episodes)} samples to {out}")
    return EXIT_OK


def cmd_eval(cfg: ExperimentConfig) -> int:
    model = _load_model(cfg)
    man, videos = _load_data(cfg)
    episodes = []
    for rec in man.episodes:
        try:
            episodes.append(simulate_checked(ScenarioSpec.from_dict(rec.spec))[1])
        except SpecRejected as exc:
            raise DataError(f"episode {rec.id}: {exc}") from None
    pair = tuple(man.meta["pair"]) if "pair" in man.meta else None
    scores, gen = generate_and_score(model, videos, episodes, cfg.c, steps=cfg.sample_steps, seed=cfg.seed,
                                     pair=pair)
    out = _out(cfg)
    keys = sorted({k for s in scores for k in s.params})
    with open(out / "eval.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *keys, "e", "n_valid", "psnr", "abnormal", "outcome"])
        for rec, s in zip(man.episodes, scores):
            w.writerow([rec.id, *[s.params.get(k, "") for k in keys],
                        "" if s.e is None else f"{s.e:.6g}", s.n_valid, f"{s.psnr:.4g}", int(s.abnormal),
                        s.outcome or ""])
    summary = {
        "scenario": man.scenario, "split": man.meta.get("split"), "n": len(scores),
        "mean_e": mean_error(scores), "n_scored": sum(s.e is not None for s in scores),
        "baseline_e": parser_baseline(videos, episodes, cfg.c),
        "psnr": float(np.mean([s.psnr for s in scores])),
        "abnormal_ratio": float(np.mean([s.abnormal for s in scores])),
        "checkpoint": str(cfg.checkpoint), "data": str(cfg.data),
    }
    if pair is not None:
        summary["pair"] = list(pair)
        summary["outcomes"] = dict(Counter(s.outcome for s in scores))
    if "v" in keys:
        rows = _bins(scores, "v")
        _write_rows(out / "bins.csv", ["v_lo", "v_hi", "mean_e", "count"], rows)
        xs = [(a + b) / 2 for a, b, _, _ in rows]
        (out / "bins.svg").write_text(svg.line_chart({"e": (xs, [r[2] for r in rows])},
                                                     "error by conditioned speed", "speed", "e"))
    if {"v1", "v2"} <= set(keys):
        rows = _heat(scores)
        _write_rows(out / "heatmap.csv", ["v1", "v2", "mean_e", "count"], rows)
        v1s, v2s = sorted({r[0] for r in rows}), sorted({r[1] for r in rows})
        cell = {(r[0], r[1]): r[2] for r in rows}
        grid = [[cell.get((a, b), float("nan")) for a in v1s] for b in v2s]
        (out / "heatmap.svg").write_text(svg.heatmap(v1s, v2s, grid, "collision error", "v1", "v2"))
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    if not math.isfinite(summary["mean_e"]):
        print("no video could be scored")
    print(f"mean e {summary['mean_e']:.4g} (parser baseline {summary['baseline_e']:.4g}) "
          f"over {summary['n_scored']}/{summary['n']} videos; abnormal {summary['abnormal_ratio']:.2f}")
    return EXIT_OK


def _bins(scores, key: str, width: float = 0.25):
    groups = defaultdict(list)
    for s in scores:
        if s.e is not None:
            v = abs(float(s.params[key]))
            groups[math.floor(v / width + 1e-9)].append(s.e)
    return [(k * width, (k + 1) * width, float(np.mean(v)), len(v)) for k, v in sorted(groups.items())]


def _heat(scores):
    groups = defaultdict(list)
    for s in scores:
        if s.e is not None:
            groups[(round(float(s.params["v1"]), 3), round(float(s.params["v2"]), 3))].append(s.e)
    return [(a, b, float(np.mean(v)), len(v)) for (a, b), v in sorted(groups.items())]


def _write_rows(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def cmd_report(runs: Sequence[str], out: str) -> int:
    found = []
    for r in runs:
        p = Path(r) / "summary.json"
        if p.is_file():
            try:
                found.append((Path(r).name or r, json.loads(p.read_text())))
            except json.JSONDecodeError as exc:
                raise DataError(f"{p}: {exc}") from None
    outp = Path(out)
    outp.mkdir(parents=True, exist_ok=True)
    if not found:
        (outp / "summary.json").write_text(json.dumps({"status": "no data", "runs": list(runs)}, indent=1))
        print("no data: none of the run directories holds a summary.json")
        return EXIT_DATA
    rows = [{"run": name, **{k: s.get(k) for k in ("scenario", "split", "n", "mean_e", "baseline_e", "psnr",
                                                   "abnormal_ratio")}} for name, s in found]
    _write_rows(outp / "runs.csv", list(rows[0]), [list(r.values()) for r in rows])
    (outp / "error.svg").write_text(svg.bar_chart([r["run"] for r in rows],
                                                  [float(r["mean_e"] if r["mean_e"] is not None else "nan")
                                                   for r in rows], "mean velocity error", "e"))
    attr = [(name, s) for name, s in found if "outcomes" in s]
    for name, s in attr:
        a, b = s["pair"]
        table = [["", f"{b} kept", f"{b} changed"]]
        oc = s["outcomes"]
        table.append([f"{a} kept", oc.get("kept both", 0), oc.get(f"kept {a}", 0)])
        table.append([f"{a} changed", oc.get(f"kept {b}", 0), oc.get("kept neither", 0)])
        _write_rows(outp / f"outcomes_{name}.csv", table[0], table[1:])
    (outp / "summary.json").write_text(json.dumps({"status": "ok", "runs": rows}, indent=1))
    print(f"report for {len(found)} run(s) in {outp}")
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


_FLAGS = ("preset", "scenario", "split", "pair", "n", "grid_n", "res", "frames", "seed", "model", "steps", "stop_after",
          "batch", "lr",
          "warmup", "c", "eval_every", "sample_steps", "data", "checkpoint", "out")
_BOOL_FLAGS = ("ring", "flip", "strict")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="physlaw", description="Physical-law probing lab for video diffusion models.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("gen", "train", "sample", "eval"):
        s = sub.add_parser(name)
        s.add_argument("--config", help="key = value file")
        for f in _FLAGS:
            s.add_argument("--" + f.replace("_", "-"), dest=f, default=None)
        for f in _BOOL_FLAGS:
            s.add_argument("--" + f, dest=f, action="store_const", const=True, default=None)
        if name == "train":
            s.add_argument("--resume", action="store_true", help="continue from OUT/model.phyw")
    r = sub.add_parser("report")
    r.add_argument("runs", nargs="*")
    r.add_argument("--out", default="report")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _parser().parse_args(argv)
        if args.command == "report":
            return cmd_report(args.runs, args.out)
        overrides = {f: getattr(args, f) for f in _FLAGS + _BOOL_FLAGS}
        cfg = load_config(args.config, overrides)
        if cfg.c < 1 or cfg.c >= cfg.frames:
            raise UsageError(f"c must lie in 1..{cfg.frames - 1}")
        if args.command == "gen":
            return cmd_gen(cfg)
        if args.command == "train":
            return cmd_train(cfg, resume=args.resume)
        if args.command == "sample":
            return cmd_sample(cfg)
        return cmd_eval(cfg)
    except (UsageError, ConfigError) as exc:
        print(f"physlaw: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ContainerError, SpecRejected) as exc:
        print(f"physlaw: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (dc.NonFiniteLoss, FloatingPointError) as exc:
        print(f"physlaw: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
