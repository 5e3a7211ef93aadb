"""Noise schedules and the closed-form Gaussian marginals of the forward process.

Steps are 1-indexed (``1..T``). Step 0 denotes clean data, with ``alpha_bar = 1``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

ScheduleKind = Literal["linear", "cosine"]

COSINE_OFFSET = 0.008
MAX_BETA = 0.999


class ScheduleError(ValueError):
    """Invalid schedule parameters or step indices."""


@dataclass(frozen=True)
class NoiseSchedule:
    kind: ScheduleKind
    T: int
    beta_min: float | None
    beta_max: float | None
    beta: np.ndarray = field(repr=False, compare=False)
    alpha_step: np.ndarray = field(repr=False, compare=False)
    alpha_bar: np.ndarray = field(repr=False, compare=False)

    def abar(self, t: int) -> float:
        """Cumulative retention at step ``t``; ``abar(0) == 1``."""
        t = int(t)
        if t < 0 or t > self.T:
            raise IndexError(f"step {t} outside [0, {self.T}]")
        if t == 0:
            return 1.0
        return float(self.alpha_bar[t - 1])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "T": self.T, "beta_min": self.beta_min, "beta_max": self.beta_max}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return build_schedule(d["kind"], d["T"], d.get("beta_min"), d.get("beta_max"))

    @classmethod
    def from_json(cls, text: str) -> "NoiseSchedule":
        return cls.from_dict(json.loads(text))


def _cosine_betas(T: int) -> np.ndarray:
    steps = np.arange(T + 1, dtype=np.float64)
    f = np.cos((steps / T + COSINE_OFFSET) / (1 + COSINE_OFFSET) * math.pi / 2) ** 2
    abar = f / f[0]
    return np.minimum(1.0 - abar[1:] / abar[:-1], MAX_BETA)


def build_schedule(
    kind: ScheduleKind = "linear",
    T: int = 1000,
    beta_min: float | None = 1e-4,
    beta_max: float | None = 0.02,
) -> NoiseSchedule:
    """Build a linear or cosine schedule over ``T`` steps.

    Beta bounds are ignored for the cosine kind.
    """
    if isinstance(T, bool) or int(T) != T or T < 1:
        raise ScheduleError(f"T must be a positive integer, got {T!r}")
    T = int(T)
    if kind == "linear":
        if beta_min is None or beta_max is None:
            raise ScheduleError("linear schedule needs beta_min and beta_max")
        if not (0.0 < beta_min <= beta_max < 1.0):
            raise ScheduleError(f"need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})")
        beta = np.linspace(beta_min, beta_max, T, dtype=np.float64)
        bmin, bmax = float(beta_min), float(beta_max)
    elif kind == "cosine":
        beta = _cosine_betas(T)
        bmin = bmax = None
    else:
        raise ScheduleError(f"unknown schedule kind {kind!r}")

    alpha_step = 1.0 - beta
    alpha_bar = np.cumprod(alpha_step)
    for arr in (beta, alpha_step, alpha_bar):
        arr.setflags(write=False)
    return NoiseSchedule(kind, T, bmin, bmax, beta, alpha_step, alpha_bar)


def toy_schedule(T: int = 200) -> NoiseSchedule:
    """Linear schedule with the standard (1e-4, 0.02) at T=1000 bounds rescaled to ``T`` steps."""
    scale = 1000.0 / T
    return build_schedule("linear", T, 1e-4 * scale, min(0.02 * scale, MAX_BETA))


def marginal_params(s: NoiseSchedule, t: int) -> tuple[float, float]:
    """Return ``(sqrt(abar_t), 1 - abar_t)`` of q(x_t | x_0)."""
    if not 1 <= t <= s.T:
        raise IndexError(f"step {t} outside [1, {s.T}]")
    a = s.abar(t)
    return math.sqrt(a), 1.0 - a


def sigma_t(s: NoiseSchedule, t: int, t_prev: int, eta: float) -> float:
    """Per-hop noise scale for a jump ``t -> t_prev``; eta=1 is ancestral, eta=0 deterministic."""
    if t_prev >= t:
        raise ScheduleError(f"need t_prev < t, got t={t}, t_prev={t_prev}")
    if not 0.0 <= eta <= 1.0:
        raise ScheduleError(f"eta must lie in [0, 1], got {eta}")
    if eta == 0.0:
        return 0.0
    a_t, a_prev = s.abar(t), s.abar(t_prev)
    return eta * math.sqrt((1.0 - a_prev) / (1.0 - a_t)) * math.sqrt(1.0 - a_t / a_prev)


def forward_diffuse(x0, t: int, eps, s: NoiseSchedule) -> np.ndarray:
    """Sample of q(x_t | x_0) for the given noise: ``sqrt(abar) x0 + sqrt(1 - abar) eps``."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape} vs eps {eps.shape}")
    a = s.abar(t)
    return math.sqrt(a) * x0 + math.sqrt(1.0 - a) * eps
