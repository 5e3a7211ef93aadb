"""Synthetic single-channel shape domains used as ID/OOD stand-ins.

Images are rendered on a supersampled grid and box-filtered down, so edges are
anti-aliased. Every image then gets i.i.d. pixel grain and is clipped back to
[-1, 1], with -1 as background.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DOMAINS = ("disks", "stripes", "crosses", "checker")
ID_DOMAIN = "disks"
SUPERSAMPLE = 4
# Pixel grain keeps the ID training set from collapsing onto a thin manifold,
# which would otherwise make deterministic inversion contract ID latents and
# stretch OOD ones far from unit scale.
TEXTURE_SIGMA = 0.2
STRIPE_PERIOD = (8.0, 14.0)
STRIPE_RAMP = 3.0
STRIPE_PEAK = 0.4


@dataclass(frozen=True)
class DatasetSpec:
    domain: str
    count: int
    seed: int
    image_size: tuple[int, int] = (16, 16)

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain {self.domain!r}; expected one of {DOMAINS}")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        h, w = self.image_size
        if h < 8 or w < 8:
            raise ValueError("image_size must be at least 8x8")


def _grid(h: int, w: int):
    # pixel-centre coordinates of the supersampled grid, in output-pixel units
    ys = (np.arange(h * SUPERSAMPLE) + 0.5) / SUPERSAMPLE
    xs = (np.arange(w * SUPERSAMPLE) + 0.5) / SUPERSAMPLE
    return np.meshgrid(ys, xs, indexing="ij")


def _downsample(mask: np.ndarray, h: int, w: int) -> np.ndarray:
    """Box-filter a [0, 1] coverage map to ``(h, w)`` and map it to [-1, 1]."""
    cov = mask.reshape(h, SUPERSAMPLE, w, SUPERSAMPLE).mean(axis=(1, 3))
    return 2.0 * cov - 1.0


def _disk(rng, yy, xx, h, w):
    r = rng.uniform(0.15, 0.32) * min(h, w)
    cy = rng.uniform(r + 0.5, h - r - 0.5)
    cx = rng.uniform(r + 0.5, w - r - 0.5)
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def _stripes(rng, yy, xx, h, w):
    # soft-edged bars at reduced contrast
    period = rng.uniform(*STRIPE_PERIOD)
    phase = rng.uniform(0.0, period)
    coord = yy if rng.random() < 0.5 else xx
    dist = np.abs((coord + phase) % period - period / 4)
    ramp = np.clip(0.5 + (period / 4 - dist) / STRIPE_RAMP, 0.0, 1.0)
    return ramp * (STRIPE_PEAK + 1.0) / 2.0


def _cross(rng, yy, xx, h, w):
    half = rng.uniform(0.8, 1.6)
    cy = rng.uniform(0.3 * h, 0.7 * h)
    cx = rng.uniform(0.3 * w, 0.7 * w)
    return (np.abs(yy - cy) <= half) | (np.abs(xx - cx) <= half)


def _checker(rng, yy, xx, h, w):
    cell = rng.uniform(2.5, 5.0)
    oy, ox = rng.uniform(0.0, 2 * cell, size=2)
    return (np.floor((yy + oy) / cell) + np.floor((xx + ox) / cell)) % 2 == 0


_RENDERERS = {"disks": _disk, "stripes": _stripes, "crosses": _cross, "checker": _checker}


def make_synthetic_dataset(spec: DatasetSpec) -> np.ndarray:
    """Render ``spec.count`` images of shape ``(count, H, W)`` as float32."""
    h, w = spec.image_size
    yy, xx = _grid(h, w)
    rng = np.random.default_rng(spec.seed)
    render = _RENDERERS[spec.domain]
    out = np.empty((spec.count, h, w), dtype=np.float32)
    for i in range(spec.count):
        img = _downsample(render(rng, yy, xx, h, w).astype(np.float64), h, w)
        out[i] = np.clip(img + TEXTURE_SIGMA * rng.standard_normal((h, w)), -1.0, 1.0)
    return out
