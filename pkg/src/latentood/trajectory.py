"""Deterministic and stochastic DDIM traversals between data and a latent step.

``model`` arguments are any callable ``model(x, t) -> eps`` over arrays of shape
``(B, H, W)`` (or ``(H, W)``). :class:`~latentood.denoiser.DenoiserParams`
satisfies this, as do hand-built oracles in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .schedule import NoiseSchedule, sigma_t

EpsModel = Callable[[np.ndarray, int], np.ndarray]


@dataclass(frozen=True)
class StepPlan:
    tau: tuple[int, ...]

    def __post_init__(self):
        tau = tuple(int(v) for v in self.tau)
        object.__setattr__(self, "tau", tau)
        if not tau:
            raise ValueError("empty step plan")
        if tau[0] < 1:
            raise ValueError("plan steps must be >= 1")
        if any(b <= a for a, b in zip(tau, tau[1:])):
            raise ValueError(f"plan must be strictly increasing: {tau}")

    @property
    def S(self) -> int:
        return len(self.tau)

    @property
    def target(self) -> int:
        return self.tau[-1]

    def check(self, s: NoiseSchedule) -> None:
        if self.tau[-1] > s.T:
            raise ValueError(f"plan reaches step {self.tau[-1]} beyond T={s.T}")


def uniform_plan(t: int, steps: int = 60) -> StepPlan:
    """``steps`` roughly evenly spaced indices ending at ``t`` (fewer if ``t < steps``)."""
    if t < 1:
        raise ValueError("target step must be >= 1")
    tau = np.unique(np.round(np.linspace(0, t, min(steps, t) + 1)[1:]).astype(int))
    return StepPlan(tuple(tau))


def default_target(T: int, frac: float = 0.8) -> int:
    return max(1, int(round(frac * T)))


@dataclass
class Trajectory:
    steps: list[int] = field(default_factory=list)
    latents: list[np.ndarray] = field(default_factory=list)

    def record(self, t: int, x: np.ndarray) -> None:
        self.steps.append(int(t))
        self.latents.append(x)

    @property
    def terminal(self) -> np.ndarray:
        return self.latents[-1]

    @property
    def terminal_step(self) -> int:
        return self.steps[-1]


def _check_finite(x: np.ndarray, hop: int) -> None:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite latent after hop {hop}")


def reverse_step(
    x_t: np.ndarray,
    eps_hat: np.ndarray,
    s: NoiseSchedule,
    t: int,
    t_prev: int,
    eta: float = 0.0,
    z: np.ndarray | None = None,
) -> np.ndarray:
    """One generalized DDIM hop ``t -> t_prev`` given a noise estimate."""
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if x_t.shape != eps_hat.shape:
        raise ValueError(f"shape mismatch: x_t {x_t.shape} vs eps_hat {eps_hat.shape}")
    a_t, a_prev = s.abar(t), s.abar(t_prev)
    sig = sigma_t(s, t, t_prev, eta)
    x0_hat = (x_t - math.sqrt(1.0 - a_t) * eps_hat) / math.sqrt(a_t)
    dir_var = 1.0 - a_prev - sig * sig
    if dir_var < 0:
        if dir_var < -1e-12:
            raise FloatingPointError(f"1 - abar_prev - sigma^2 = {dir_var} < 0")
        dir_var = 0.0
    out = math.sqrt(a_prev) * x0_hat + math.sqrt(dir_var) * eps_hat
    if sig > 0:
        if z is None:
            raise ValueError("eta > 0 requires a noise draw z")
        z = np.asarray(z, dtype=np.float64)
        if z.shape != x_t.shape:
            raise ValueError(f"shape mismatch: z {z.shape} vs x_t {x_t.shape}")
        out = out + sig * z
    return out


def invert(
    x0: np.ndarray,
    model: EpsModel,
    s: NoiseSchedule,
    plan: StepPlan,
    literal: bool = False,
) -> Trajectory:
    """Run the deterministic update from data (step 0) up to ``plan.target``.

    The hop out of step 0 evaluates the model at the first plan step, since the
    network is only defined on steps ``1..T``. ``literal=True`` uses the
    source-indexed update ``sqrt(abar_s) x + sqrt(1 - abar_s) eps`` instead of
    the ODE-consistent one; it is kept only for comparison.
    """
    plan.check(s)
    x = np.asarray(x0, dtype=np.float64)
    traj = Trajectory()
    traj.record(0, x)
    prev = 0
    for hop, nxt in enumerate(plan.tau):
        eps_hat = np.asarray(model(x, max(prev, plan.tau[0])), dtype=np.float64)
        a_prev, a_next = s.abar(prev), s.abar(nxt)
        if literal:
            x = math.sqrt(a_prev) * x + math.sqrt(1.0 - a_prev) * eps_hat
        else:
            x0_hat = (x - math.sqrt(1.0 - a_prev) * eps_hat) / math.sqrt(a_prev)
            x = math.sqrt(a_next) * x0_hat + math.sqrt(1.0 - a_next) * eps_hat
        _check_finite(x, hop)
        traj.record(nxt, x)
        prev = nxt
    return traj


def denoise(
    x_t: np.ndarray,
    model: EpsModel,
    s: NoiseSchedule,
    plan: StepPlan,
    eta: float = 0.0,
    seed: int = 0,
) -> Trajectory:
    """Traverse ``plan`` downward from ``plan.target`` to data (step 0)."""
    plan.check(s)
    rng = np.random.default_rng(seed) if eta > 0 else None
    x = np.asarray(x_t, dtype=np.float64)
    steps = list(plan.tau[::-1]) + [0]
    traj = Trajectory()
    traj.record(steps[0], x)
    for hop, (t, t_prev) in enumerate(zip(steps, steps[1:])):
        eps_hat = np.asarray(model(x, t), dtype=np.float64)
        z = rng.standard_normal(x.shape) if rng is not None else None
        x = reverse_step(x, eps_hat, s, t, t_prev, eta, z)
        _check_finite(x, hop)
        traj.record(t_prev, x)
    return traj


def mae01(a: np.ndarray, b: np.ndarray, axis=None) -> np.ndarray | float:
    """Mean absolute error after mapping [-1, 1] images to [0, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return np.mean(np.abs(a - b), axis=axis) / 2.0


def reconstruct(
    x0: np.ndarray,
    model: EpsModel,
    s: NoiseSchedule,
    plan: StepPlan,
    eta: float = 0.0,
    seed: int = 0,
) -> tuple[np.ndarray, float]:
    """Invert then denoise along the same plan; returns the reconstruction and its MAE."""
    latent = invert(x0, model, s, plan).terminal
    rec = denoise(latent, model, s, plan, eta=eta, seed=seed).terminal
    return rec, float(mae01(x0, rec))


def eta_sweep(
    x0: np.ndarray,
    model: EpsModel,
    s: NoiseSchedule,
    t_list: Sequence[int],
    eta_list: Sequence[float],
    plan_builder: Callable[[int], StepPlan] = uniform_plan,
    seed: int = 0,
) -> np.ndarray:
    """Reconstruction MAE grid of shape ``(len(t_list), len(eta_list))``.

    Inversion is always deterministic; only the denoising leg uses ``eta``.
    """
    if not t_list or not eta_list:
        raise ValueError("t_list and eta_list must be non-empty")
    grid = np.empty((len(t_list), len(eta_list)))
    for i, t in enumerate(t_list):
        plan = plan_builder(t)
        latent = invert(x0, model, s, plan).terminal
        for j, eta in enumerate(eta_list):
            rec = denoise(latent, model, s, plan, eta=eta, seed=seed).terminal
            grid[i, j] = mae01(x0, rec)
    return grid
