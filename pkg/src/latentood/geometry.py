"""High-dimensional geometry of latent banks.

Angles are reported in degrees. Pair and triple statistics are computed from
seeded random index draws, or from every pair/triple when the requested count
covers them all.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np


class DegenerateInputError(ValueError):
    pass


@dataclass(frozen=True)
class LatentBank:
    vectors: np.ndarray
    domain_label: str = ""
    t: int = 0

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        v = v.reshape(v.shape[0], -1) if v.ndim > 1 else v.reshape(1, -1)
        if v.shape[0] < 2:
            raise ValueError(f"a latent bank needs at least 2 vectors, got {v.shape[0]}")
        if not np.all(np.isfinite(v)):
            raise ValueError("latent bank contains non-finite values")
        object.__setattr__(self, "vectors", v)

    @property
    def N(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    def mean(self) -> np.ndarray:
        return self.vectors.mean(axis=0)


def angle_between(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Angle in degrees between the last-axis vectors of ``u`` and ``v``."""
    nu = np.linalg.norm(u, axis=-1, keepdims=True)
    nv = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(nu == 0) or np.any(nv == 0):
        raise DegenerateInputError("zero-length edge")
    # half-angle form stays accurate near 0 and 180 degrees, unlike arccos
    uh, vh = u / nu, v / nv
    return np.degrees(2.0 * np.arctan2(np.linalg.norm(uh - vh, axis=-1), np.linalg.norm(uh + vh, axis=-1)))


def pair_angle(a, b, c) -> float:
    """Angle at vertex ``c`` of the triangle (a, b, c)."""
    a, b, c = (np.asarray(x, dtype=np.float64) for x in (a, b, c))
    return float(angle_between(a - c, b - c))


def origin_angle(a, b) -> float:
    return float(angle_between(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)))


def pair_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def center_distance(bank_a: LatentBank, bank_b: LatentBank) -> float:
    if bank_a.d != bank_b.d:
        raise ValueError(f"dimension mismatch: {bank_a.d} vs {bank_b.d}")
    return float(np.linalg.norm(bank_a.mean() - bank_b.mean()))


def separation_threshold(d: int) -> float:
    """Center distance above which two unit spherical Gaussians are separable: d**(1/4)."""
    return float(d) ** 0.25


def annulus_fraction(bank: LatentBank, c: float, sigma: float) -> float:
    """Fraction of centred, ``sigma``-scaled vectors with radius within ``c`` of sqrt(d - 1)."""
    if c <= 0 or sigma <= 0:
        raise ValueError("c and sigma must be positive")
    r = np.linalg.norm((bank.vectors - bank.mean()) / sigma, axis=1)
    r0 = math.sqrt(bank.d - 1)
    return float(np.mean((r >= r0 - c) & (r <= r0 + c)))


def _unrank_pairs(k: np.ndarray, n: int) -> np.ndarray:
    # row-major index over the upper triangle (i < j) -> (i, j)
    total = n * (n - 1) // 2
    i = n - 2 - np.floor(np.sqrt(-8 * k + 4 * n * (n - 1) - 7) / 2.0 - 0.5).astype(np.int64)
    j = k + i + 1 - total + (n - i) * (n - i - 1) // 2
    return np.stack([i, j], axis=1)


def sample_pairs(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """``k`` distinct index pairs drawn without replacement; all pairs if ``k`` covers them."""
    total = n * (n - 1) // 2
    if k >= total:
        return np.array(list(itertools.combinations(range(n), 2)), dtype=np.int64)
    return _unrank_pairs(np.sort(rng.choice(total, size=k, replace=False)), n)


def sample_triples(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """``k`` triples (i, j, vertex) of distinct indices; all of them if ``k`` covers them."""
    if n < 3:
        raise ValueError("need at least 3 vectors for triples")
    total = n * (n - 1) * (n - 2) // 2
    if k >= total:
        return np.array(
            [(i, j, v) for i, j in itertools.combinations(range(n), 2) for v in range(n) if v not in (i, j)],
            dtype=np.int64,
        )
    out = np.empty((k, 3), dtype=np.int64)
    for row in range(k):
        out[row] = rng.choice(n, size=3, replace=False)
    return out


def _mean_std(values: np.ndarray) -> dict:
    # sorting first makes the result independent of draw order
    v = np.sort(values)
    return {"mean": float(np.mean(v)), "std": float(np.std(v))}


@dataclass
class GeometryReport:
    pair_angle: dict
    origin_angle: dict
    pair_distance: dict
    center_distance: float | None
    n_pairs: int
    d: int
    clf_acc: float | None = None

    def to_dict(self) -> dict:
        return {
            "pair_angle": self.pair_angle,
            "angle_origin": self.origin_angle,
            "pair_distance": self.pair_distance,
            "center_distance": self.center_distance,
            "clf_acc": self.clf_acc,
            "n_pairs": self.n_pairs,
            "d": self.d,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def geometry_report(
    bank: LatentBank, n_pairs: int = 1000, ref_bank: LatentBank | None = None, seed: int = 0
) -> GeometryReport:
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    X = bank.vectors
    rng = np.random.default_rng(seed)
    pairs = sample_pairs(bank.N, n_pairs, rng)
    a, b = X[pairs[:, 0]], X[pairs[:, 1]]
    dist = np.linalg.norm(a - b, axis=1)
    origin = angle_between(a, b)
    if bank.N >= 3:
        tri = sample_triples(bank.N, n_pairs, rng)
        vertex = X[tri[:, 2]]
        tri_angle = _mean_std(angle_between(X[tri[:, 0]] - vertex, X[tri[:, 1]] - vertex))
    else:
        tri_angle = {"mean": float("nan"), "std": float("nan")}
    return GeometryReport(
        pair_angle=tri_angle,
        origin_angle=_mean_std(origin),
        pair_distance=_mean_std(dist),
        center_distance=center_distance(bank, ref_bank) if ref_bank is not None else None,
        n_pairs=len(pairs),
        d=bank.d,
    )
