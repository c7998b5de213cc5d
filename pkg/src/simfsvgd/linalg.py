"""Small dense linear-algebra helpers (jittered factorizations)."""

import numpy as np
import scipy.linalg

from .errors import NumericFailure


def mean_diag(A):
    d = np.diag(A)
    return float(np.mean(d)) if d.size else 0.0


def jittered_cholesky(A, jitter=1e-8, max_jitter=1e-2, relative=True):
    """Lower Cholesky factor of ``A + eps * I``, escalating ``eps`` by x10 on failure.

    With ``relative=True`` the jitter is scaled by the mean diagonal of ``A``.
    Returns ``(L, eps)``.
    """
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise NumericFailure("matrix to factorize has non-finite entries")
    scale = mean_diag(A) if relative else 1.0
    if scale <= 0.0:
        scale = 1.0
    n = A.shape[0]
    eps = jitter
    while eps <= max_jitter * (1 + 1e-12):
        try:
            L = scipy.linalg.cholesky(A + eps * scale * np.eye(n), lower=True)
            return L, eps * scale
        except np.linalg.LinAlgError:
            eps *= 10.0
    raise NumericFailure(
        f"Cholesky failed even with jitter {max_jitter:g} x {scale:g}; "
        "check for duplicate points or a degenerate kernel"
    )


def cho_solve_lower(L, b):
    return scipy.linalg.cho_solve((L, True), b)
