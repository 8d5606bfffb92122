"""Simulate, render, parse and store a few episodes; print the parser error.

    python3 demos/round_trip.py [OUT_DIR]
"""
from __future__ import annotations

import sys
import tempfile

from physlaw.datagen import build_dataset, read_dataset, splits
from physlaw.datagen.container import encode_video
from physlaw.evaluation import episode_error
from physlaw.physim import ScenarioSpec, simulate_episode
from physlaw.raster import RenderConfig, render_episode


def main(out: str) -> None:
    for kind, params in [("uniform", {"r": 1.0, "v": 2.5}),
                         ("parabola", {"r": 0.8, "v": 2.0}),
                         ("collision", {"r1": 1.0, "r2": 0.8, "v1": 2.0, "v2": 3.0})]:
        ep = simulate_episode(ScenarioSpec(kind, params, seed=1))
        for res in (32, 128):
            rep = episode_error(render_episode(ep, RenderConfig(res)), ep, c=1)
            print(f"{kind:9s} {res:3d}px  e = {rep.e:.4f} over {rep.n_valid} valid frames")

    small = render_episode(simulate_episode(ScenarioSpec("uniform", {"r": 1.0, "v": 2.5}, n_frames=4)),
                           RenderConfig(32))
    print("PHYV header:", encode_video(small)[:14].hex(" ", 2))

    specs = splits.grid_sample("uniform", 9, seed=0, n_frames=8)
    man = build_dataset(out, specs, RenderConfig(32), tags=["id"])
    man2, videos, _ = read_dataset(out)
    print(f"wrote and re-read {len(man2.episodes)} episodes of shape {videos[0].shape} under {out}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="physlaw-demo-"))
