"""Dataset construction: splits, episode generation and the on-disk container."""
from __future__ import annotations

from dataclasses import replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..numkit.rng import derive_seed
from ..physim import Episode, ScenarioSpec, SpecRejected, simulate_episode
from ..raster import RenderConfig, render_episode
from .container import (
    ChecksumError, ContainerError, DatasetManifest, EpisodeRecord, MagicError, ManifestError,
    TruncatedError, VersionError, load_videos, read_dataset, read_manifest, read_video,
    write_dataset, write_video,
)
from .splits import (
    ATTRIBUTE_VALUES, ID_R, ID_V, OOD_R, OOD_V, TEMPLATES, SplitSpec, attribute_pair_dataset,
    collision_gap_dataset, composition_dataset, flip_augment, gap_dataset, grid_points,
    grid_sample, id_eval_sample, minimal_template_cover, mirror_spec, ood_levels, ood_sample,
    template_specs, template_split,
)

MAX_PLACEMENT_RETRIES = 20


def simulate_checked(spec: ScenarioSpec) -> tuple[ScenarioSpec, Episode]:
    """Simulate, re-drawing positions when the placement is rejected."""
    last = None
    for attempt in range(MAX_PLACEMENT_RETRIES):
        s = spec if attempt == 0 else replace(spec, seed=derive_seed(spec.seed, "retry", attempt) % (2 ** 63))
        try:
            return s, simulate_episode(s)
        except SpecRejected as exc:
            last = exc
    raise SpecRejected(f"spec rejected after {MAX_PLACEMENT_RETRIES} placements: {last}", last.frame)


def generate(specs: Iterable[ScenarioSpec], cfg: RenderConfig) -> Iterable[tuple[Episode, np.ndarray]]:
    for spec in specs:
        _, ep = simulate_checked(spec)
        yield ep, render_episode(ep, cfg)


def build_dataset(root, specs: Sequence[ScenarioSpec], cfg: RenderConfig, tags: Sequence[str] = (),
                  meta: dict | None = None) -> DatasetManifest:
    if not specs:
        raise ValueError("no specs to write")
    kinds = {s.kind for s in specs}
    scenario = kinds.pop() if len(kinds) == 1 else "mixed"
    return write_dataset(Path(root), ((ep, v, list(tags)) for ep, v in generate(specs, cfg)),
                         scenario=scenario, resolution=cfg.resolution, n_frames=specs[0].n_frames,
                         dt=specs[0].dt, meta=meta)


__all__ = [
    "ATTRIBUTE_VALUES", "ChecksumError", "ContainerError", "DatasetManifest", "EpisodeRecord",
    "ID_R", "ID_V", "MagicError", "ManifestError", "OOD_R", "OOD_V", "SplitSpec", "TEMPLATES",
    "TruncatedError", "VersionError", "attribute_pair_dataset", "build_dataset",
    "collision_gap_dataset", "composition_dataset", "flip_augment", "gap_dataset", "generate",
    "grid_points", "grid_sample", "id_eval_sample", "load_videos", "minimal_template_cover",
    "mirror_spec", "ood_levels", "ood_sample", "read_dataset", "read_manifest", "read_video",
    "simulate_checked", "template_specs", "template_split", "write_dataset", "write_video",
]
