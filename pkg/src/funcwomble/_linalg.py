"""Cholesky factorisation with the package-wide jitter policy."""

from __future__ import annotations

import numpy as np
from scipy.linalg import LinAlgError, cholesky

from .errors import IllConditioned

JITTER_START = 1e-10
JITTER_MAX = 1e-6


def cholesky_jitter(matrix: np.ndarray, scale: float | None = None) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``matrix``, adding diagonal jitter if needed.

    Jitter starts at ``1e-10 * scale`` and grows tenfold up to ``1e-6 * scale``;
    ``scale`` defaults to the mean diagonal.  Returns the factor and the jitter
    actually added (0.0 when none was needed).
    """
    m = np.asarray(matrix, dtype=float)
    if scale is None:
        scale = float(np.mean(np.diag(m))) if m.size else 1.0
    scale = abs(scale) or 1.0
    jitter = 0.0
    step = JITTER_START
    while True:
        try:
            a = m if jitter == 0.0 else m + jitter * np.eye(m.shape[0])
            return cholesky(a, lower=True, check_finite=True), jitter
        except (LinAlgError, ValueError):
            if step > JITTER_MAX * (1 + 1e-9):
                raise IllConditioned(
                    f"matrix is not positive definite even with jitter {jitter:.3g}"
                ) from None
            jitter = step * scale
            step *= 10.0
