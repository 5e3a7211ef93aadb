"""Linear max-margin classifier for ID/OOD separability checks.

Primal hinge loss with L2 regularisation, trained by seeded mini-batch
subgradient descent. Labels are +1 for the first bank and -1 for the second.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import LatentBank


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")


@dataclass
class LinearModel:
    w: np.ndarray
    b: float
    epochs: int = 0
    final_loss: float = float("nan")
    labels: tuple[str, str] = ("a", "b")
    train_accuracy: float = float("nan")
    history: list[float] = field(default_factory=list, repr=False)

    @property
    def d(self) -> int:
        return self.w.shape[0]

    def decision(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        X = X.reshape(X.shape[0], -1) if X.ndim > 1 else X.reshape(1, -1)
        if X.shape[1] != self.d:
            raise ValueError(f"dimension mismatch: model has d={self.d}, input has {X.shape[1]}")
        return X @ self.w + self.b

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.where(self.decision(X) >= 0, 1, -1)


def _hinge_objective(w, b, X, y, lam):
    margins = y * (X @ w + b)
    return float(np.mean(np.maximum(0.0, 1.0 - margins)) + 0.5 * lam * w @ w)


def train_linear(
    X: np.ndarray,
    y: np.ndarray,
    epochs: int = 200,
    lr: float = 0.01,
    lam: float = 1e-4,
    batch_size: int = 16,
    seed: int = 0,
) -> LinearModel:
    """Fit ``sign(w.x + b)`` to labels in {-1, +1}.

    The step at update ``k`` is ``lr / (1 + lam * lr * k)``, the usual 1/t decay
    for regularised hinge loss.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    rng = np.random.default_rng(seed)
    w = np.zeros(d)
    b = 0.0
    history = []
    k = 0
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            step = lr / (1.0 + lam * lr * k)
            k += 1
            idx = order[start : start + batch_size]
            Xb, yb = X[idx], y[idx]
            active = yb * (Xb @ w + b) < 1.0
            gw = lam * w - (yb[active, None] * Xb[active]).sum(axis=0) / len(idx)
            gb = -yb[active].sum() / len(idx)
            w -= step * gw
            b -= step * gb
        history.append(_hinge_objective(w, b, X, y, lam))
    # weights persist as float32; round now so save/load is lossless
    w = w.astype(np.float32).astype(np.float64)
    model = LinearModel(w=w, b=float(b), epochs=epochs, final_loss=history[-1] if history else float("nan"))
    model.history = history
    model.train_accuracy = float(np.mean(model.predict(X) == y))
    return model


def split_indices(n: int, split: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(split.seed).permutation(n)
    n_train = int(round(split.train_fraction * n))
    return perm[:n_train], perm[n_train:]


def fit_linear(
    bank_a: LatentBank,
    bank_b: LatentBank,
    split: SplitSpec = SplitSpec(),
    epochs: int = 200,
    lr: float = 0.01,
    seed: int = 0,
    lam: float = 1e-4,
) -> tuple[LinearModel, float]:
    """Train on a split of the two banks and return the model with held-out accuracy."""
    if bank_a.N < 10 or bank_b.N < 10:
        raise ValueError("each bank needs at least 10 vectors")
    if bank_a.d != bank_b.d:
        raise ValueError(f"dimension mismatch: {bank_a.d} vs {bank_b.d}")
    X = np.concatenate([bank_a.vectors, bank_b.vectors])
    y = np.concatenate([np.ones(bank_a.N), -np.ones(bank_b.N)])
    train, test = split_indices(len(y), split)
    model = train_linear(X[train], y[train], epochs=epochs, lr=lr, lam=lam, seed=seed)
    model.labels = (bank_a.domain_label, bank_b.domain_label)
    acc = float(np.mean(model.predict(X[test]) == y[test]))
    return model, acc


def classify(m: LinearModel, x) -> tuple[int, float]:
    """Label (+1 first bank, -1 second) and signed distance to the hyperplane."""
    score = float(m.decision(np.asarray(x).reshape(1, -1))[0])
    norm = float(np.linalg.norm(m.w))
    margin = score / norm if norm > 0 else 0.0
    return (1 if score >= 0 else -1), margin


def save_linear(path, m: LinearModel) -> None:
    meta = json.dumps({"d": m.d, "b": m.b, "epochs": m.epochs, "labels": list(m.labels)}, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    buf.write(np.asarray(m.w, dtype="<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_linear(path) -> LinearModel:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise ValueError("linear model file truncated at byte 0")
    (n,) = struct.unpack_from("<I", raw, 0)
    meta = json.loads(raw[4 : 4 + n])
    d = int(meta["d"])
    if len(raw) != 4 + n + 4 * d:
        raise ValueError(f"expected {4 + n + 4 * d} bytes for d={d}, got {len(raw)}")
    w = np.frombuffer(raw, dtype="<f4", count=d, offset=4 + n).astype(np.float64)
    return LinearModel(w=w, b=float(meta["b"]), epochs=int(meta["epochs"]), labels=tuple(meta.get("labels", ("a", "b"))))
