"""Fixed RGB palette shared by the simulator, renderer and parser.

Colors are far apart in every channel pair that matters so that a
per-channel distance of 40 separates them unambiguously.
"""
from __future__ import annotations

BACKGROUND = (255, 255, 255)

PALETTE: dict[str, tuple[int, int, int]] = {
    "red": (220, 30, 30),
    "blue": (30, 60, 220),
    "gray": (128, 128, 128),
    "black": (0, 0, 0),
    "green": (30, 160, 60),
    "purple": (140, 40, 170),
    "orange": (240, 150, 20),
}


def color(name_or_rgb) -> tuple[int, int, int]:
    if isinstance(name_or_rgb, str):
        return PALETTE[name_or_rgb]
    r, g, b = name_or_rgb
    return int(r), int(g), int(b)


def name_of(rgb) -> str | None:
    rgb = tuple(int(c) for c in rgb)
    for k, v in PALETTE.items():
        if v == rgb:
            return k
    return None
