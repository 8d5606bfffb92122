"""Experiment configuration: a UTF-8 ``key = value`` file plus flag overrides.

Schema (every key optional; unknown keys are errors)::

    preset        named defaults applied before the file and flags (overfit)
    scenario      uniform | parabola | collision | combo | attribute | spatial | temporal
    split         id | id-eval | ood:levelK | ood:all | gap:LO-HI,LO-HI,... |
                  train | test | all | cover      (combo templates, composition halves)
                  For collision, gap entries are squares V1LO-V1HI/V2LO-V2HI.
    pair          attribute pair such as color,shape (scenario attribute)
    ring          use the ring shape in attribute datasets (true/false)
    n             episodes (for combo: episodes per template)
    grid_n        training-grid size that id-eval points must avoid
    res           frame size: 32, 64, 128 or 256
    frames        frames per episode
    seed          integer seed for data, initialization and sampling
    flip          gen: append mirrored episodes; train: random horizontal flips
    model         nano | micro | S | B | L | XL
    steps         training steps (sets the learning-rate horizon)
    stop_after    end training early at this step; resume later with --resume
    batch         batch size
    lr            peak learning rate (cosine decay)
    warmup        linear warmup steps
    c             conditioning frames (1 or 3)
    eval_every    checkpoint cadence in steps (0: only at the end)
    sample_steps  sampler steps
    data          dataset directory (train, sample, eval)
    checkpoint    checkpoint path (sample, eval); train writes OUT/model.phyw
    out           output directory
    strict        pin BLAS to one thread for bit-identical reruns
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    preset: str = ""
    scenario: str = "uniform"
    split: str = "id"
    pair: str = ""
    ring: bool = False
    n: int = 64
    grid_n: int = 1000
    res: int = 32
    frames: int = 8
    seed: int = 0
    flip: bool = False
    model: str = "nano"
    steps: int = 2000
    stop_after: int = 0
    batch: int = 4
    lr: float = 1e-4
    warmup: int = 0
    c: int = 3
    eval_every: int = 0
    sample_steps: int = 50
    data: str = ""
    checkpoint: str = ""
    out: str = "run"
    strict: bool = False

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))


# 16 uniform-motion clips memorized by DiT-nano
PRESETS = {
    "overfit": dict(scenario="uniform", split="id", n=16, res=32, frames=8, model="nano", steps=2000,
                    batch=4, lr=1e-3, warmup=100, c=3),
}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _coerce(name: str, raw: str, typ):
    raw = raw.strip()
    try:
        if typ in (bool, "bool"):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {getattr(typ, '__name__', typ)}") from None


def _types() -> dict:
    return {f.name: f.type for f in fields(ExperimentConfig)}


def parse_text(text: str, source: str = "<config>") -> dict:
    types = _types()
    out = {}
    for k, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{k}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"{source}:{k}: unknown key {key!r}")
        out[key] = _coerce(key, value, types[key])
    return out


def load_config(path: str | None, overrides: dict) -> ExperimentConfig:
    values = {}
    if path:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        values.update(parse_text(text, str(p)))
    types = _types()
    for k, v in overrides.items():
        if v is None:
            continue
        if k not in types:
            raise ConfigError(f"unknown key {k!r}")
        values[k] = _coerce(k, str(v), types[k]) if isinstance(v, str) else v
    name = values.get("preset", "")
    if name:
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        # the preset only fills keys the file and flags left unset
        values = {**PRESETS[name], **values}
    return ExperimentConfig(**values)
