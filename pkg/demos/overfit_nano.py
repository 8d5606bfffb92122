"""Overfit DiT-nano on 16 uniform-motion clips, then regenerate them.

    python3 demos/overfit_nano.py [STEPS]

About 18 minutes on one CPU core for the default 4000 steps.
"""
from __future__ import annotations

import sys
import time

import numpy as np

from physlaw import diffcore as dc
from physlaw.datagen import simulate_checked, splits
from physlaw.evaluation import generate_and_score, mean_error, parser_baseline
from physlaw.raster import RenderConfig, render_episode
from physlaw.stdit import PRESETS, SpacetimeDiT

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 4000
eps = [simulate_checked(s)[1] for s in splits.grid_sample("uniform", 16, seed=0, n_frames=8)]
videos = np.stack([render_episode(ep, RenderConfig(32)) for ep in eps])

model = SpacetimeDiT(PRESETS["nano"], seed=0)
print(f"nano: {model.n_parameters():,} parameters")
t0 = time.time()


def report(step, loss):
    if step % 250 == 0:
        print(f"step {step:5d}  loss {loss:.4f}  {time.time() - t0:.0f}s", flush=True)


dc.train(model, videos, dc.TrainConfig(steps=steps, batch_size=4, lr=1e-3, warmup=100, c=3), callback=report)
scores, _ = generate_and_score(model, videos, eps, 3, steps=50, seed=1)
print(f"PSNR {np.mean([s.psnr for s in scores]):.1f} dB, e {mean_error(scores):.4f}, "
      f"parser baseline {parser_baseline(videos, eps, 3):.4f}")
