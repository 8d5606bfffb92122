"""Spacetime-patch diffusion transformer.

Video stacks of shape (B, L, H, W, 9) (noisy RGB, condition RGB, mask RGB) are
cut into (p_t, p_h, p_w) patches, embedded linearly, and processed by blocks
of full self-attention over every spacetime token. Positions enter only
through a 3D rotary embedding on queries and keys. The diffusion step
conditions each block via adaLN-zero modulation.

With ``head="clean"`` (the default) the last layer estimates the clean frames
and ``forward`` turns that estimate into the velocity target using the noisy
input and the signal fraction. Noise then never has to pass through the
patch bottleneck. ``head="velocity"`` emits the target directly.

Parameter count for hidden size ``d``, ``n`` blocks, timestep frequency size
``f``, patch volume ``P = p_t*p_h*p_w`` and ``C`` input channels::

    embed   (P*C)*d + d
    time    f*d + d + d*d + d
    block   18*d*d + 15*d            (q, k, v, o; 4x MLP; six modulation heads)
    final   2*(d*d + d) + d*(P*3) + P*3
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from .diffcore import make_schedule
from .numkit import Tensor, gelu, layer_norm, matmul, reshape, silu, softmax, transpose
from .numkit.checkpoint import decode_json, encode_json, load_arrays, save_arrays
from .numkit.tensor import ShapeError
from .numkit.rng import stream

IN_CHANNELS = 9
OUT_CHANNELS = 3
HEADS = ("clean", "velocity")
MOD_NAMES = ("shift1", "scale1", "gate1", "shift2", "scale2", "gate2")


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 4
    hidden: int = 128
    heads: int = 4
    patch: tuple[int, int, int] = (2, 4, 4)
    in_channels: int = IN_CHANNELS
    t_dim: int = 128
    mlp_ratio: int = 4
    rope_base: float = 100.0
    head: str = "clean"

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}; choose from {HEADS}")
        object.__setattr__(self, "patch", tuple(int(p) for p in self.patch))
        if self.hidden % self.heads:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        hd = self.hidden // self.heads
        if hd % 8:
            raise ValueError(f"head dim {hd} must be a multiple of 8 for the rotary bands")
        if len(self.patch) != 3 or min(self.patch) < 1:
            raise ValueError(f"bad patch size {self.patch}")
        if self.t_dim % 2:
            raise ValueError("t_dim must be even")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    def check_video(self, L: int, H: int, W: int) -> None:
        pt, ph, pw = self.patch
        if L % pt or H % ph or W % pw:
            raise ShapeError(f"video ({L}, {H}, {W}) not divisible by patch {self.patch}")

    def n_tokens(self, L: int, H: int, W: int) -> int:
        self.check_video(L, H, W)
        pt, ph, pw = self.patch
        return (L // pt) * (H // ph) * (W // pw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["patch"] = list(self.patch)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


PRESETS = {
    "nano": ModelConfig(layers=4, hidden=128, heads=4),
    "micro": ModelConfig(layers=8, hidden=256, heads=8),
    "S": ModelConfig(layers=12, hidden=384, heads=6),
    "B": ModelConfig(layers=12, hidden=768, heads=12),
    "L": ModelConfig(layers=24, hidden=1024, heads=16),
    "XL": ModelConfig(layers=28, hidden=1152, heads=16),
}


def expected_parameter_count(cfg: ModelConfig) -> int:
    d, f = cfg.hidden, cfg.t_dim
    P = cfg.patch[0] * cfg.patch[1] * cfg.patch[2]
    m = cfg.mlp_ratio
    block = 4 * (d * d + d) + (d * m * d + m * d) + (m * d * d + d) + 6 * (d * d + d)
    return (P * cfg.in_channels * d + d) + (f * d + d + d * d + d) + cfg.layers * block \
        + 2 * (d * d + d) + d * P * OUT_CHANNELS + P * OUT_CHANNELS


@lru_cache(maxsize=1)
def _default_schedule():
    return make_schedule()


# -- patches ---------------------------------------------------------------------

def patchify(x, patch: tuple[int, int, int]) -> Tensor:
    """(B, L, H, W, C) -> (B, N, p_t*p_h*p_w*C), tokens ordered t-major then y then x."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    B, L, H, W, C = x.shape
    pt, ph, pw = patch
    if L % pt or H % ph or W % pw:
        raise ShapeError(f"video ({L}, {H}, {W}) not divisible by patch {patch}")
    g = (L // pt, H // ph, W // pw)
    x = reshape(x, (B, g[0], pt, g[1], ph, g[2], pw, C))
    x = transpose(x, (0, 1, 3, 5, 2, 4, 6, 7))
    return reshape(x, (B, g[0] * g[1] * g[2], pt * ph * pw * C))


def unpatchify(tokens, patch: tuple[int, int, int], video_shape: tuple[int, int, int], channels: int) -> Tensor:
    tokens = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
    L, H, W = video_shape
    pt, ph, pw = patch
    g = (L // pt, H // ph, W // pw)
    B = tokens.shape[0]
    x = reshape(tokens, (B, g[0], g[1], g[2], pt, ph, pw, channels))
    x = transpose(x, (0, 1, 4, 2, 5, 3, 6, 7))
    return reshape(x, (B, L, H, W, channels))


def token_coords(video_shape: tuple[int, int, int], patch: tuple[int, int, int]) -> np.ndarray:
    """(N, 3) integer (t, y, x) patch-grid coordinates in token order."""
    g = [n // p for n, p in zip(video_shape, patch)]
    t, y, x = np.meshgrid(*(np.arange(n) for n in g), indexing="ij")
    return np.stack([t.ravel(), y.ravel(), x.ravel()], axis=1)


# -- rotary positions --------------------------------------------------------------

def rope_bands(head_dim: int) -> tuple[int, int, int]:
    """Head-dim split for (t, y, x): a quarter for time, the rest shared by space.

    Widths are rounded to even sizes so every band holds whole rotation pairs.
    """
    t = 2 * (head_dim // 8)
    y = 2 * ((head_dim - t) // 4)
    return t, y, head_dim - t - y


@lru_cache(maxsize=8)
def _rotation(head_dim: int) -> np.ndarray:
    # signed permutation: (a, b) -> (-b, a) on every adjacent pair
    R = np.zeros((head_dim, head_dim), np.float32)
    for i in range(0, head_dim, 2):
        R[i + 1, i] = -1.0
        R[i, i + 1] = 1.0
    return R


def rope_tables(coords: np.ndarray, head_dim: int, base: float = 100.0) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin tables of shape (N, head_dim) for integer (t, y, x) coordinates."""
    coords = np.asarray(coords, np.float64)
    angles = []
    for axis, width in enumerate(rope_bands(head_dim)):
        freqs = base ** (-np.arange(0, width, 2) / width)
        a = coords[:, axis:axis + 1] * freqs[None, :]
        angles.append(np.repeat(a, 2, axis=1))
    ang = np.concatenate(angles, axis=1)
    return np.cos(ang).astype(np.float32), np.sin(ang).astype(np.float32)


def rope3d(q, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate the last axis of ``q`` (..., N, head_dim) by per-token angles."""
    q = q if isinstance(q, Tensor) else Tensor(q)
    R = Tensor(_rotation(q.shape[-1]).astype(q.dtype))
    return q * Tensor(cos.astype(q.dtype)) + matmul(q, R) * Tensor(sin.astype(q.dtype))


# -- model -------------------------------------------------------------------------

def timestep_features(t: np.ndarray, dim: int, max_period: float = 10000.0) -> np.ndarray:
    t = np.asarray(t, np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    a = t[:, None] * freqs[None, :]
    return np.concatenate([np.cos(a), np.sin(a)], axis=1).astype(np.float32)


class SpacetimeDiT:
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.params: dict[str, Tensor] = {}
        rng = stream(seed, "stdit-init")
        d, P = cfg.hidden, cfg.patch[0] * cfg.patch[1] * cfg.patch[2]
        m = cfg.mlp_ratio * d

        def lin(name, fan_in, fan_out, zero=False, std=None):
            if zero:
                w = np.zeros((fan_in, fan_out), np.float32)
            else:
                s = std if std is not None else math.sqrt(6.0 / (fan_in + fan_out))
                w = (rng.uniform(-s, s, (fan_in, fan_out)) if std is None
                     else rng.normal(0, s, (fan_in, fan_out))).astype(np.float32)
            self.params[name + ".w"] = Tensor(w, requires_grad=True)
            self.params[name + ".b"] = Tensor(np.zeros(fan_out, np.float32), requires_grad=True)

        lin("embed", P * cfg.in_channels, d)
        lin("time.0", cfg.t_dim, d, std=0.02)
        lin("time.1", d, d, std=0.02)
        for i in range(cfg.layers):
            for n in ("q", "k", "v", "o"):
                lin(f"blk{i}.{n}", d, d)
            lin(f"blk{i}.fc1", d, m)
            lin(f"blk{i}.fc2", m, d)
            for n in MOD_NAMES:
                lin(f"blk{i}.{n}", d, d, zero=True)
        lin("final.shift", d, d, zero=True)
        lin("final.scale", d, d, zero=True)
        lin("final.out", d, P * OUT_CHANNELS, zero=True)

    # --
    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def _lin(self, name: str, x: Tensor) -> Tensor:
        return matmul(x, self.params[name + ".w"]) + self.params[name + ".b"]

    def forward(self, x, t, gamma=None) -> Tensor:
        """Predict the velocity target for stacks ``x`` (B, L, H, W, 9) at steps ``t`` (B,).

        ``gamma`` is the signal fraction at each step; the clean head needs it
        and falls back to the default schedule when it is omitted.
        """
        cfg = self.cfg
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, np.float32))
        if x.ndim != 5 or x.shape[-1] != cfg.in_channels:
            raise ShapeError(f"expected (B, L, H, W, {cfg.in_channels}), got {x.shape}")
        B, L, H, W, _ = x.shape
        cfg.check_video(L, H, W)
        t = np.broadcast_to(np.asarray(t, np.float64), (B,))
        d, nh, hd = cfg.hidden, cfg.heads, cfg.head_dim
        coords = token_coords((L, H, W), cfg.patch)
        cos, sin = rope_tables(coords, hd, cfg.rope_base)
        N = coords.shape[0]

        h = self._lin("embed", patchify(x, cfg.patch))
        c = self._lin("time.1", silu(self._lin("time.0", Tensor(timestep_features(t, cfg.t_dim)))))
        c = reshape(silu(c), (B, 1, d))
        inv_sqrt = 1.0 / math.sqrt(hd)

        def heads(z):
            return transpose(reshape(z, (B, N, nh, hd)), (0, 2, 1, 3))

        for i in range(cfg.layers):
            p = f"blk{i}."
            mod = {n: self._lin(p + n, c) for n in MOD_NAMES}
            a = layer_norm(h) * (mod["scale1"] + 1.0) + mod["shift1"]
            q = rope3d(heads(self._lin(p + "q", a)), cos, sin)
            k = rope3d(heads(self._lin(p + "k", a)), cos, sin)
            v = heads(self._lin(p + "v", a))
            att = softmax(matmul(q, transpose(k, (0, 1, 3, 2))) * inv_sqrt)
            o = reshape(transpose(matmul(att, v), (0, 2, 1, 3)), (B, N, d))
            h = h + self._lin(p + "o", o) * mod["gate1"]
            a = layer_norm(h) * (mod["scale2"] + 1.0) + mod["shift2"]
            h = h + self._lin(p + "fc2", gelu(self._lin(p + "fc1", a))) * mod["gate2"]

        h = layer_norm(h) * (self._lin("final.scale", c) + 1.0) + self._lin("final.shift", c)
        out = unpatchify(self._lin("final.out", h), cfg.patch, (L, H, W), OUT_CHANNELS)
        if cfg.head == "velocity":
            return out
        if gamma is None:
            gamma = _default_schedule().at(np.rint(t).astype(int))
        g = np.broadcast_to(np.asarray(gamma, np.float64), (B,))
        if np.any(g >= 1.0) or np.any(g < 0.0):
            raise ValueError("signal fraction must lie in [0, 1)")
        # y = (a*x_t - V)/b with V the clean estimate
        a, b = np.sqrt(g).reshape(B, 1, 1, 1, 1), np.sqrt(1.0 - g).reshape(B, 1, 1, 1, 1)
        x_t = x.data[..., :OUT_CHANNELS]
        return out * Tensor((-1.0 / b).astype(np.float32)) + Tensor((a / b * x_t).astype(np.float32))

    __call__ = forward

    def predict(self, x: np.ndarray, t, gamma=None) -> np.ndarray:
        return self.forward(Tensor(np.asarray(x, np.float32)), t, gamma).data

    # -- checkpoints --
    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        if missing:
            raise KeyError(f"checkpoint lacks {sorted(missing)[:3]}")
        for k, p in self.params.items():
            if arrays[k].shape != p.shape:
                raise ShapeError(f"{k}: checkpoint shape {arrays[k].shape} vs model {p.shape}")
            p.data = np.array(arrays[k], dtype=np.float32)

    def save(self, path, extra: dict[str, np.ndarray] | None = None) -> None:
        arrays = {"__config__": encode_json(self.cfg.to_dict())}
        arrays.update({"param/" + k: v for k, v in self.state_arrays().items()})
        arrays.update(extra or {})
        save_arrays(path, arrays)

    @classmethod
    def load(cls, path) -> tuple["SpacetimeDiT", dict[str, np.ndarray]]:
        arrays = load_arrays(path)
        model = cls(ModelConfig.from_dict(decode_json(arrays.pop("__config__"))))
        model.load_state({k[6:]: v for k, v in arrays.items() if k.startswith("param/")})
        return model, {k: v for k, v in arrays.items() if not k.startswith("param/")}
