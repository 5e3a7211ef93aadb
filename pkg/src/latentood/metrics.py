"""Image-space evaluation metrics."""

from __future__ import annotations

import numpy as np

from .separability import LinearModel
from .trajectory import mae01


def mae(a, b) -> float:
    """Mean absolute error of two [-1, 1] images measured on the [0, 1] scale."""
    return float(mae01(a, b))


def interference_rate(images, clf: LinearModel) -> float:
    """Fraction of images the pixel classifier assigns to the ID class (label +1)."""
    X = np.asarray(images, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("empty image collection")
    return float(np.mean(clf.predict(X.reshape(X.shape[0], -1)) == 1))


def diversity_score(images, reference=None) -> tuple[float, float | None]:
    """Mean pairwise MAE within ``images`` and, if given, mean MAE to ``reference``.

    ``reference`` may be one image or one image per entry of ``images``.
    """
    X = np.asarray(images, dtype=np.float64)
    if X.shape[0] < 2:
        raise ValueError("need at least 2 images for pairwise diversity")
    flat = X.reshape(X.shape[0], -1)
    iu, ju = np.triu_indices(flat.shape[0], k=1)
    pairwise = float(np.mean(np.abs(flat[iu] - flat[ju])) / 2.0)
    to_ref = None
    if reference is not None:
        ref = np.asarray(reference, dtype=np.float64)
        ref = ref.reshape(-1, flat.shape[1]) if ref.size != flat.shape[1] else ref.reshape(1, -1)
        to_ref = float(np.mean(np.abs(flat - ref)) / 2.0)
    return pairwise, to_ref
