"""Tuning-free OOD latent discovery.

New latents are proposed by spherical interpolation between an inverted OOD
latent and a draw from a spherical Gaussian fitted to the inverted bank, then
kept only if their distances and vertex angles to bank references match the
bank's own geometry.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import LatentBank, angle_between, sample_pairs, separation_threshold
from .trajectory import EpsModel, StepPlan, denoise

# Angle tolerance that is quoted for 3x256x256 latents; the vertex-angle spread
# shrinks like 1/sqrt(d), so the default is rescaled to the bank dimension.
REFERENCE_ANGLE_TOL = 0.1
REFERENCE_DIM = 3 * 256 * 256
EQUILATERAL = 60.0


@dataclass(frozen=True)
class GaussianEstimate:
    mu: np.ndarray
    var: float

    def __post_init__(self):
        if not self.var > 0:
            raise ValueError(f"variance must be positive, got {self.var}")
        if not np.all(np.isfinite(self.mu)):
            raise ValueError("non-finite mean")


def estimate_gaussian(bank: LatentBank) -> GaussianEstimate:
    """Per-dimension mean and one variance pooled over every coordinate of every sample."""
    X = bank.vectors
    mu = X.mean(axis=0)
    var = float(np.sum((X - mu) ** 2) / (X.size - 1))
    return GaussianEstimate(mu=mu, var=var)


def slerp(a, b, lam: float, return_flag: bool = False):
    """Spherical interpolation from ``a`` (lam=0) to ``b`` (lam=1).

    Falls back to linear interpolation for (anti)parallel endpoints; pass
    ``return_flag=True`` to also get whether that happened.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("slerp endpoints must be non-zero")
    omega = math.radians(float(angle_between(a.ravel(), b.ravel())))
    sin_omega = math.sin(omega)
    degenerate = sin_omega < 1e-9
    if degenerate:
        out = (1.0 - lam) * a + lam * b
    else:
        out = (math.sin((1.0 - lam) * omega) * a + math.sin(lam * omega) * b) / sin_omega
    return (out, degenerate) if return_flag else out


def reference_distance(bank: LatentBank, n_pairs: int = 1000, seed: int = 0) -> float:
    """Mean pairwise distance ``d_o`` over ``n_pairs`` seeded pairs of the bank."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    pairs = sample_pairs(bank.N, n_pairs, np.random.default_rng(seed))
    X = bank.vectors
    return float(np.mean(np.linalg.norm(X[pairs[:, 0]] - X[pairs[:, 1]], axis=1)))


@dataclass(frozen=True)
class RejectionConfig:
    omega_d: float = 0.3
    omega_a: float | None = None
    n_ref: int = 8
    n_pairs: int = 1000
    lambda_range: tuple[float, float] = (0.2, 0.8)
    max_attempts: int = 1000
    seed: int = 0
    anti_interference: bool = False

    def __post_init__(self):
        if not self.omega_d > 0 or (self.omega_a is not None and not self.omega_a > 0):
            raise ValueError("tolerances must be positive")
        lo, hi = self.lambda_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"lambda_range must satisfy 0 <= lo <= hi <= 1, got {self.lambda_range}")
        if self.max_attempts < 1 or self.n_ref < 1 or self.n_pairs < 1:
            raise ValueError("max_attempts, n_ref and n_pairs must be >= 1")

    def angle_tolerance(self, d: int) -> float:
        if self.omega_a is not None:
            return self.omega_a
        return REFERENCE_ANGLE_TOL * math.sqrt(REFERENCE_DIM / d)

    def to_dict(self) -> dict:
        return {
            "omega_d": self.omega_d,
            "omega_a": self.omega_a,
            "n_ref": self.n_ref,
            "n_pairs": self.n_pairs,
            "lambda_range": list(self.lambda_range),
            "max_attempts": self.max_attempts,
            "seed": self.seed,
            "anti_interference": self.anti_interference,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RejectionConfig":
        d = dict(d)
        if "lambda_range" in d:
            d["lambda_range"] = tuple(d["lambda_range"])
        return cls(**d)


@dataclass(frozen=True)
class References:
    """Bank rows used by one filter call: distance references and vertex-angle pairs."""

    ref_idx: np.ndarray
    pair_idx: np.ndarray


def draw_references(n_bank: int, n_ref: int, rng: np.random.Generator) -> References:
    k = min(n_ref, n_bank)
    ref_idx = rng.choice(n_bank, size=k, replace=False)
    pairs = np.empty((n_ref, 2), dtype=np.int64)
    for row in range(n_ref):
        pairs[row] = ref_idx[rng.choice(k, size=2, replace=False)] if k >= 2 else (ref_idx[0], ref_idx[0])
    return References(ref_idx=ref_idx, pair_idx=pairs)


def check_candidate(
    candidate: np.ndarray,
    bank: LatentBank,
    d_o: float,
    cfg: RejectionConfig,
    refs: References,
    id_center: np.ndarray | None = None,
) -> Counter:
    """Failure counts per criterion for ``candidate`` against fixed references; empty means pass."""
    X = bank.vectors
    x = np.asarray(candidate, dtype=np.float64).ravel()
    if x.shape[0] != bank.d:
        raise ValueError(f"dimension mismatch: candidate {x.shape[0]} vs bank {bank.d}")
    reasons: Counter = Counter()
    lo, hi = d_o * (1.0 - cfg.omega_d), d_o * (1.0 + cfg.omega_d)
    for dist in np.linalg.norm(X[refs.ref_idx] - x, axis=1):
        if dist == 0.0:
            reasons["degenerate"] += 1
        elif not lo <= dist <= hi:
            reasons["distance"] += 1

    tol = cfg.angle_tolerance(bank.d)
    u = X[refs.pair_idx[:, 0]] - x
    v = X[refs.pair_idx[:, 1]] - x
    nu, nv = np.linalg.norm(u, axis=1), np.linalg.norm(v, axis=1)
    for k in range(len(u)):
        if nu[k] == 0 or nv[k] == 0 or refs.pair_idx[k, 0] == refs.pair_idx[k, 1]:
            reasons["degenerate"] += 1
            continue
        angle = float(angle_between(u[k], v[k]))
        if not EQUILATERAL - tol <= angle <= EQUILATERAL + tol:
            reasons["angle"] += 1

    if cfg.anti_interference and id_center is not None:
        if np.linalg.norm(x - id_center) < separation_threshold(bank.d):
            reasons["interference"] += 1
    return reasons


def geometric_filter(
    candidate: np.ndarray,
    bank: LatentBank,
    d_o: float,
    cfg: RejectionConfig,
    rng: np.random.Generator | None = None,
    id_center: np.ndarray | None = None,
) -> tuple[bool, Counter]:
    """Accept iff every distance and vertex-angle check passes.

    References are drawn from ``rng``, or from a generator seeded with ``cfg.seed``.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    refs = draw_references(bank.N, cfg.n_ref, rng)
    reasons = check_candidate(candidate, bank, d_o, cfg, refs, id_center)
    return not reasons, reasons


@dataclass
class SampleResult:
    latent: np.ndarray
    attempts: int
    accepted: bool
    rejection_reasons: Counter = field(default_factory=Counter)
    ref_index: int = -1
    lam: float = float("nan")
    refs: References | None = None
    degenerate_slerp: bool = False

    def provenance(self) -> dict:
        return {
            "accepted": self.accepted,
            "attempts": self.attempts,
            "ref_index": int(self.ref_index),
            "lam": float(self.lam),
            "rejection_reasons": dict(sorted(self.rejection_reasons.items())),
            "distance_refs": [int(i) for i in self.refs.ref_idx] if self.refs is not None else [],
            "angle_pairs": [[int(p), int(q)] for p, q in self.refs.pair_idx] if self.refs is not None else [],
        }


def _attempt_rng(seed: int, attempt: int) -> np.random.Generator:
    return np.random.default_rng([seed, attempt])


def propose(bank: LatentBank, est: GaussianEstimate, cfg: RejectionConfig, attempt: int):
    """Candidate number ``attempt`` of the seeded stream, with the references to judge it by.

    Each attempt owns its generator, so the stream does not depend on the
    tolerances or on how many earlier candidates were rejected.
    """
    rng = _attempt_rng(cfg.seed, attempt)
    direction = est.mu + math.sqrt(est.var) * rng.standard_normal(est.mu.shape)
    ref_index = int(rng.integers(bank.N))
    lo, hi = cfg.lambda_range
    lam = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    candidate, degenerate = slerp(bank.vectors[ref_index], direction, lam, return_flag=True)
    refs = draw_references(bank.N, cfg.n_ref, rng)
    return candidate, ref_index, lam, refs, degenerate


def sample_ood_latent(
    bank: LatentBank,
    est: GaussianEstimate,
    cfg: RejectionConfig,
    d_o: float | None = None,
    id_center: np.ndarray | None = None,
) -> SampleResult:
    """Propose candidates until one passes the geometric filter or attempts run out.

    On exhaustion the candidate with the fewest failed checks is returned with
    ``accepted=False``; ties go to the earliest attempt.
    """
    if est.mu.shape[0] != bank.d:
        raise ValueError("estimate and bank dimensions differ")
    if d_o is None:
        d_o = reference_distance(bank, cfg.n_pairs, cfg.seed)
    tally: Counter = Counter()
    best = None
    for attempt in range(cfg.max_attempts):
        candidate, ref_index, lam, refs, degenerate = propose(bank, est, cfg, attempt)
        reasons = check_candidate(candidate, bank, d_o, cfg, refs, id_center)
        tally.update(reasons)
        result = SampleResult(candidate, attempt + 1, not reasons, Counter(tally), ref_index, lam, refs, degenerate)
        if not reasons:
            return result
        score = sum(reasons.values())
        if best is None or score < best[0]:
            best = (score, result)
    out = best[1]
    out.attempts = cfg.max_attempts
    out.rejection_reasons = tally
    return out


def verify_result(result: SampleResult, bank: LatentBank, d_o: float, cfg: RejectionConfig, id_center=None) -> bool:
    """Re-run the recorded checks on an accepted sample."""
    return result.refs is not None and not check_candidate(result.latent, bank, d_o, cfg, result.refs, id_center)


def acceptance_rate(
    bank: LatentBank,
    est: GaussianEstimate,
    cfg: RejectionConfig,
    n_candidates: int,
    d_o: float | None = None,
    id_center: np.ndarray | None = None,
) -> float:
    """Fraction of the first ``n_candidates`` proposals that pass the filter."""
    if d_o is None:
        d_o = reference_distance(bank, cfg.n_pairs, cfg.seed)
    passed = 0
    for attempt in range(n_candidates):
        candidate, _, _, refs, _ = propose(bank, est, cfg, attempt)
        passed += not check_candidate(candidate, bank, d_o, cfg, refs, id_center)
    return passed / n_candidates


def _sample_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


@dataclass
class GenerationResult:
    images: np.ndarray
    results: list[SampleResult]
    d_o: float

    @property
    def shortfall(self) -> int:
        return sum(not r.accepted for r in self.results)

    def provenance(self) -> list[dict]:
        return [r.provenance() for r in self.results]


def generate_ood(
    bank: LatentBank,
    model: EpsModel,
    s,
    plan: StepPlan,
    n: int,
    cfg: RejectionConfig,
    image_shape: tuple[int, int] | None = None,
    id_center: np.ndarray | None = None,
    est: GaussianEstimate | None = None,
) -> GenerationResult:
    """Discover ``n`` latents at ``plan.target`` and denoise the accepted ones with eta=0.

    Unaccepted draws stay in ``results`` and count toward ``shortfall``; they are not denoised.
    """
    if image_shape is None:
        image_shape = tuple(model.arch.image_size)
    est = est or estimate_gaussian(bank)
    d_o = reference_distance(bank, cfg.n_pairs, cfg.seed)
    results = [
        sample_ood_latent(bank, est, replace(cfg, seed=_sample_seed(cfg.seed, i)), d_o, id_center)
        for i in range(n)
    ]
    latents = [r.latent for r in results if r.accepted]
    if not latents:
        return GenerationResult(np.zeros((0, *image_shape)), results, d_o)
    x_t = np.stack(latents).reshape(-1, *image_shape)
    images = denoise(x_t, model, s, plan, eta=0.0).terminal
    return GenerationResult(images, results, d_o)


def sample_vanilla_gaussian(est: GaussianEstimate, n: int, seed: int = 0) -> np.ndarray:
    """``n`` unfiltered draws from N(mu, var I)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    return est.mu + math.sqrt(est.var) * rng.standard_normal((n, est.mu.shape[0]))
