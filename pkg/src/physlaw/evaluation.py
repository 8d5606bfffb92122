"""Scoring generated videos against the simulator.

Shared by the CLI and the acceptance harness: one function turns a
(generated video, ground-truth episode) pair into an error report, another
runs a trained model over a whole dataset.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .physim import GRAVITY, Episode
from .probe import anomaly_check, labels_for, parse_video, psnr, valid_frames, velocity_error
from .probe.attributes import Attributes, classify_attribute_outcome
from .probe.metrics import ErrorReport


def episode_error(video: np.ndarray, ep: Episode, c: int = 3, method: str = "coverage") -> ErrorReport:
    """Velocity error of ``video`` against the true trajectory of ``ep``.

    Only velocities entering generated frames count (differences from frame
    ``c - 1`` on), so conditioning frames never score.
    """
    labels = labels_for(ep.states[0])
    tracks = parse_video(video, labels, ep.spec.dt, method=method)
    mask = valid_frames(tracks, ep.states, ep.spec.kind, ep.first_contact_frame)
    return velocity_error(tracks, ep.states, mask, start=max(c - 1, 0))


def parser_baseline(videos: Sequence[np.ndarray], episodes: Sequence[Episode], c: int = 3) -> float:
    errs = [episode_error(v, ep, c).e for v, ep in zip(videos, episodes)]
    errs = [e for e in errs if e is not None]
    return float(np.mean(errs)) if errs else float("nan")


@dataclass
class VideoScore:
    index: int
    e: float | None
    n_valid: int
    psnr: float
    abnormal: bool
    outcome: str | None = None
    params: dict = field(default_factory=dict)


def score_video(i: int, generated: np.ndarray, truth: np.ndarray, ep: Episode, c: int,
                pair: tuple[str, str] | None = None) -> VideoScore:
    rep = episode_error(generated, ep, c)
    gravity = GRAVITY if ep.spec.kind == "parabola" else 0.0
    flags = anomaly_check(generated, c, gravity=gravity, dt=ep.spec.dt)
    outcome = None
    if pair is not None:
        cond = _attributes_of(ep)
        outcome = classify_attribute_outcome(generated, cond, pair, n_cond=c)
    p = psnr(generated[c:], truth[c:]) if c < len(truth) else float("nan")
    params = {k: v for k, v in ep.spec.params.items() if isinstance(v, (int, float, str))}
    return VideoScore(i, rep.e, rep.n_valid, p, flags.any, outcome, params)


def _attributes_of(ep: Episode) -> Attributes:
    p = ep.spec.params
    return Attributes(p.get("color", "red"), p.get("shape", "ball"), float(p["r"]), float(p["v"]))


def generate_and_score(model, videos: np.ndarray, episodes: Sequence[Episode], c: int, *, steps: int = 50,
                       seed: int = 0, batch: int = 8, pair: tuple[str, str] | None = None,
                       ) -> tuple[list[VideoScore], np.ndarray]:
    """Sample continuations for every video and score them; returns (scores, generated)."""
    outs = []
    for s in range(0, len(videos), batch):
        outs.append(dc.sample(model, videos[s:s + batch], c, steps=steps, seed=seed + s))
    gen = np.concatenate(outs) if outs else np.zeros_like(videos)
    scores = [score_video(i, g, v, ep, c, pair) for i, (g, v, ep) in enumerate(zip(gen, videos, episodes))]
    return scores, gen


def mean_error(scores: Sequence[VideoScore]) -> float:
    errs = [s.e for s in scores if s.e is not None]
    return float(np.mean(errs)) if errs else float("nan")
