"""On-disk dataset layout.

::

    <root>/manifest.json
    <root>/videos/<id>.phyv      raw frames
    <root>/states/<id>.jsonl     one JSON line per frame

Video file (little endian)::

    offset  size  field
    0       4     magic b"PHYV"
    4       2     u16 version (1)
    6       2     u16 L  frames
    8       2     u16 H
    10      2     u16 W
    12      2     u16 C  (3)
    14      L*H*W*C   u8 RGB, frame-major then row-major
    end-4   4     u32 CRC-32 of every preceding byte
"""
from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from ..physim import Box, Episode, ScenarioSpec, WorldState

VIDEO_MAGIC = b"PHYV"
VIDEO_VERSION = 1
MANIFEST_FORMAT = "physlaw-dataset"
MANIFEST_VERSION = 1
_HEADER = struct.Struct("<4sHHHHH")


class ContainerError(Exception):
    code = "container"


class MagicError(ContainerError):
    code = "bad-magic"


class VersionError(ContainerError):
    code = "bad-version"


class TruncatedError(ContainerError):
    code = "truncated"


class ChecksumError(ContainerError):
    code = "checksum"


class ManifestError(ContainerError):
    code = "manifest"


# -- video files -------------------------------------------------------------------

def encode_video(video: np.ndarray) -> bytes:
    video = np.asarray(video)
    if video.dtype != np.uint8 or video.ndim != 4:
        raise ValueError(f"expected (L, H, W, C) uint8, got {video.dtype} {video.shape}")
    L, H, W, C = video.shape
    if max(L, H, W, C) >= 2 ** 16:
        raise ValueError("dimension does not fit in u16")
    body = _HEADER.pack(VIDEO_MAGIC, VIDEO_VERSION, L, H, W, C) + np.ascontiguousarray(video).tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def decode_video(buf: bytes) -> np.ndarray:
    if len(buf) < 4 or buf[:4] != VIDEO_MAGIC:
        raise MagicError(f"not a video file (magic {bytes(buf[:4])!r})")
    if len(buf) < _HEADER.size:
        raise TruncatedError("header cut short")
    _, version, L, H, W, C = _HEADER.unpack_from(buf)
    if version != VIDEO_VERSION:
        raise VersionError(f"unsupported video version {version}")
    n = L * H * W * C
    if len(buf) < _HEADER.size + n + 4:
        raise TruncatedError(f"expected {_HEADER.size + n + 4} bytes, got {len(buf)}")
    if len(buf) > _HEADER.size + n + 4:
        raise ChecksumError("trailing bytes after checksum")
    (crc,) = struct.unpack_from("<I", buf, _HEADER.size + n)
    if zlib.crc32(buf[: _HEADER.size + n]) != crc:
        raise ChecksumError("CRC-32 mismatch")
    return np.frombuffer(buf, dtype=np.uint8, count=n, offset=_HEADER.size).reshape(L, H, W, C).copy()


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_video(path, video: np.ndarray) -> None:
    _atomic_write(Path(path), encode_video(video))


def read_video(path) -> np.ndarray:
    return decode_video(Path(path).read_bytes())


# -- state sidecars ------------------------------------------------------------------

def _size(body) -> float:
    return body.shape.half_w if isinstance(body.shape, Box) else body.shape.radius


def encode_states(states: Sequence[WorldState]) -> str:
    lines = []
    for t, s in enumerate(states):
        objs = [{"id": b.id, "x": b.position[0], "y": b.position[1], "vx": b.velocity[0],
                 "vy": b.velocity[1], "r": _size(b)} for b in s.bodies]
        lines.append(json.dumps({"t": t, "time": s.time, "objects": objs}))
    return "\n".join(lines) + "\n"


def decode_states(text: str) -> list[dict]:
    out = []
    for k, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec.get("t") != k:
            raise ManifestError(f"state line {k} has frame index {rec.get('t')}")
        out.append(rec)
    return out


def states_array(records: Sequence[dict], fields: Sequence[str] = ("x", "y")) -> np.ndarray:
    """(L, N, len(fields)) array from decoded sidecar records."""
    return np.array([[[o[f] for f in fields] for o in r["objects"]] for r in records], dtype=np.float64)


# -- manifest ------------------------------------------------------------------------

@dataclass
class EpisodeRecord:
    id: str
    spec: dict
    video: str
    states: str
    tags: list[str] = field(default_factory=list)
    first_contact_frame: int | None = None
    events: list[str] = field(default_factory=list)


@dataclass
class DatasetManifest:
    scenario: str
    resolution: int
    n_frames: int
    dt: float
    episodes: list[EpisodeRecord] = field(default_factory=list)
    format: str = MANIFEST_FORMAT
    version: int = MANIFEST_VERSION
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = {
            "format": self.format, "version": self.version, "scenario": self.scenario,
            "resolution": self.resolution, "n_frames": self.n_frames, "dt": self.dt, "meta": self.meta,
            "episodes": [vars(e) for e in self.episodes],
        }
        return json.dumps(d, indent=1, sort_keys=False)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"manifest is not JSON: {exc}") from exc
        if d.get("format") != MANIFEST_FORMAT:
            raise ManifestError(f"unknown manifest format {d.get('format')!r}")
        if d.get("version") != MANIFEST_VERSION:
            raise ManifestError(f"unsupported manifest version {d.get('version')}")
        eps = [EpisodeRecord(**e) for e in d["episodes"]]
        return cls(d["scenario"], int(d["resolution"]), int(d["n_frames"]), float(d["dt"]), eps,
                   meta=d.get("meta", {}))

    def specs(self) -> list[ScenarioSpec]:
        return [ScenarioSpec.from_dict(e.spec) for e in self.episodes]


def validate_manifest(root, manifest: DatasetManifest) -> None:
    root = Path(root)
    seen = set()
    for e in manifest.episodes:
        if e.id in seen:
            raise ManifestError(f"duplicate episode id {e.id!r}")
        seen.add(e.id)
        for rel in (e.video, e.states):
            if not (root / rel).is_file():
                raise ManifestError(f"episode {e.id!r}: missing file {rel}")


def write_dataset(root, episodes: Iterable[tuple[Episode, np.ndarray, Sequence[str]]], *, scenario: str,
                  resolution: int, n_frames: int, dt: float, meta: dict | None = None,
                  id_prefix: str = "ep") -> DatasetManifest:
    """Write ``(episode, video, tags)`` triples and the manifest; returns the manifest."""
    root = Path(root)
    (root / "videos").mkdir(parents=True, exist_ok=True)
    (root / "states").mkdir(parents=True, exist_ok=True)
    man = DatasetManifest(scenario, resolution, n_frames, dt, meta=dict(meta or {}))
    for k, (ep, video, tags) in enumerate(episodes):
        eid = f"{id_prefix}{k:06d}"
        vrel, srel = f"videos/{eid}.phyv", f"states/{eid}.jsonl"
        write_video(root / vrel, video)
        _atomic_write(root / srel, encode_states(ep.states).encode())
        man.episodes.append(EpisodeRecord(eid, ep.spec.to_dict(), vrel, srel, list(tags),
                                          ep.first_contact_frame, list(ep.meta.get("events", []))))
    _atomic_write(root / "manifest.json", man.to_json().encode())
    return man


def read_manifest(root) -> DatasetManifest:
    path = Path(root) / "manifest.json"
    if not path.is_file():
        raise ManifestError(f"no manifest at {path}")
    man = DatasetManifest.from_json(path.read_text())
    validate_manifest(root, man)
    return man


def iter_dataset(root, manifest: DatasetManifest | None = None) -> Iterator[tuple[EpisodeRecord, np.ndarray, list[dict]]]:
    root = Path(root)
    man = manifest or read_manifest(root)
    for e in man.episodes:
        yield e, read_video(root / e.video), decode_states((root / e.states).read_text())


def read_dataset(root) -> tuple[DatasetManifest, list[np.ndarray], list[list[dict]]]:
    man = read_manifest(root)
    videos, states = [], []
    for _, v, s in iter_dataset(root, man):
        videos.append(v)
        states.append(s)
    return man, videos, states


def load_videos(root, manifest: DatasetManifest | None = None, tag: str | None = None) -> np.ndarray:
    """Stack every (optionally tag-filtered) video into one (N, L, H, W, 3) array."""
    root = Path(root)
    man = manifest or read_manifest(root)
    vids = [read_video(root / e.video) for e in man.episodes if tag is None or tag in e.tags]
    if not vids:
        return np.zeros((0, man.n_frames, man.resolution, man.resolution, 3), np.uint8)
    return np.stack(vids)
