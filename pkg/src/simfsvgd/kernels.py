"""Isotropic scalar kernels, their input gradients, and curl-free matrix-valued kernels.

Scalar kernels have the form ``variance * rho(||x - x'|| / lengthscale)`` with

* RBF: ``rho(r) = exp(-r**2 / 2)``
* IMQ: ``rho(r) = (1 + r**2) ** -0.5``

The curl-free kernel is the negative Hessian of the RBF kernel viewed as a
function of ``r = x - x'``. Writing the RBF as a function of the squared
distance, ``rho(s) = variance * exp(-s / (2 l^2))`` with ``s = ||r||^2``, gives

    K_cf(x, x') = -4 rho''(s) r r^T - 2 rho'(s) I
    div_x K_cf(x, x') = -4 [(d + 2) rho''(s) + 2 s rho'''(s)] r

The same quantities can be written through the radial profile
``phi(r) = variance * exp(-r^2 / (2 l^2))``; those formulas are kept as
``curlfree_eval_radial`` / ``curlfree_divergence_radial`` for cross-checking.
"""

from dataclasses import dataclass
import warnings

import numpy as np
from scipy.spatial.distance import pdist

FAMILIES = ("rbf", "imq")


@dataclass(frozen=True)
class IsotropicKernel:
    family: str = "rbf"
    variance: float = 1.0
    lengthscale: float = 1.0

    def __post_init__(self):
        family = self.family.lower()
        object.__setattr__(self, "family", family)
        if family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        if not self.variance > 0:
            raise ValueError(f"kernel variance must be positive, got {self.variance}")
        if not self.lengthscale > 0:
            raise ValueError(f"kernel lengthscale must be positive, got {self.lengthscale}")

    def with_lengthscale(self, lengthscale):
        return IsotropicKernel(self.family, self.variance, float(lengthscale))

    def with_variance(self, variance):
        return IsotropicKernel(self.family, float(variance), self.lengthscale)

    def __call__(self, x, y):
        return eval_scalar(self, x, y)


@dataclass(frozen=True)
class CurlFreeKernel:
    """Matrix-valued kernel ``-Hess phi(x - x')`` built on an RBF base kernel."""

    base: IsotropicKernel
    dim: int

    def __post_init__(self):
        if self.base.family != "rbf":
            raise ValueError(
                f"curl-free kernels need a thrice-differentiable base; "
                f"family {self.base.family!r} is not supported (use 'rbf')"
            )
        if int(self.dim) < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.dim}")
        object.__setattr__(self, "dim", int(self.dim))

    def rho_derivs(self, s):
        """First three derivatives of ``rho(s) = v exp(-s / (2 l^2))``."""
        v, l2 = self.base.variance, self.base.lengthscale**2
        rho = v * np.exp(-s / (2.0 * l2))
        c = -1.0 / (2.0 * l2)
        return c * rho, c**2 * rho, c**3 * rho


def _as_points(X, name="X"):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array of points, got shape {X.shape}")
    return X


def _as_vec(x):
    return np.atleast_1d(np.asarray(x, dtype=float))


def _check_pair(x, y):
    x, y = _as_vec(x), _as_vec(y)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return x, y


def _profile(k, sq):
    """``rho`` and ``d rho / d s`` as functions of the squared distance ``s``."""
    l2 = k.lengthscale**2
    if k.family == "rbf":
        val = k.variance * np.exp(-0.5 * sq / l2)
        dval = -0.5 / l2 * val
    else:
        base = 1.0 + sq / l2
        val = k.variance * base**-0.5
        dval = -0.5 * k.variance / l2 * base**-1.5
    return val, dval


def eval_scalar(k, x, y):
    x, y = _check_pair(x, y)
    sq = float(np.sum((x - y) ** 2))
    return float(_profile(k, sq)[0])


def grad_x_scalar(k, x, y):
    """Gradient of ``k(x, y)`` with respect to ``x``."""
    x, y = _check_pair(x, y)
    r = x - y
    _, dval = _profile(k, float(r @ r))
    return 2.0 * dval * r


def sq_dists(X, Y):
    d = X[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d), d


def kernel_matrix(k, X, Y=None):
    """Gram matrix between two point lists.

    For a ``CurlFreeKernel`` the result has shape ``(n*d, m*d)``; block
    ``(i, j)`` (rows ``i*d:(i+1)*d``) holds ``K_cf(X[i], Y[j])``.
    """
    X = _as_points(X)
    Y = X if Y is None else _as_points(Y, "Y")
    if X.shape[0] == 0 or Y.shape[0] == 0:
        raise ValueError("kernel_matrix needs non-empty point lists")
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if isinstance(k, CurlFreeKernel):
        blocks = curlfree_blocks(k, X, Y)
        n, m, d, _ = blocks.shape
        return blocks.transpose(0, 2, 1, 3).reshape(n * d, m * d)
    sq, _ = sq_dists(X, Y)
    return _profile(k, sq)[0]


def gram_and_grad(k, X, Y=None):
    """Gram matrix ``K[i, j] = k(X_i, Y_j)`` and ``G[i, j] = grad_x k(X_i, Y_j)``."""
    X = _as_points(X)
    Y = X if Y is None else _as_points(Y, "Y")
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    sq, diff = sq_dists(X, Y)
    val, dval = _profile(k, sq)
    return val, 2.0 * dval[..., None] * diff


def median_heuristic(X):
    """Median pairwise Euclidean distance; falls back to 1.0 for coincident points."""
    X = _as_points(X)
    if X.shape[0] < 2:
        raise ValueError("median heuristic needs at least two points")
    med = float(np.median(pdist(X)))
    if not med > 0 or not np.isfinite(med):
        warnings.warn("median heuristic: all points coincide, using bandwidth 1.0", RuntimeWarning)
        return 1.0
    return med


# ---------------------------------------------------------------------------
# curl-free kernels


def curlfree_eval(K, x, y):
    x, y = _check_pair(x, y)
    if x.shape[0] != K.dim:
        raise ValueError(f"expected {K.dim}-vectors, got {x.shape[0]}")
    r = x - y
    d1, d2, _ = K.rho_derivs(float(r @ r))
    return -4.0 * d2 * np.outer(r, r) - 2.0 * d1 * np.eye(K.dim)


def curlfree_divergence(K, x, y):
    """Divergence of ``x -> K_cf(x, y)`` (row-wise; the matrix is symmetric)."""
    x, y = _check_pair(x, y)
    if x.shape[0] != K.dim:
        raise ValueError(f"expected {K.dim}-vectors, got {x.shape[0]}")
    r = x - y
    s = float(r @ r)
    _, d2, d3 = K.rho_derivs(s)
    return -4.0 * ((K.dim + 2) * d2 + 2.0 * s * d3) * r


def curlfree_blocks(K, X, Y):
    """All blocks ``K_cf(X_i, Y_j)`` as an ``(n, m, d, d)`` array."""
    sq, r = sq_dists(X, Y)
    d1, d2, _ = K.rho_derivs(sq)
    out = -4.0 * d2[..., None, None] * r[..., :, None] * r[..., None, :]
    out += -2.0 * d1[..., None, None] * np.eye(X.shape[1])
    return out


def curlfree_divergence_matrix(K, X, Y):
    """``D[i, j] = div_x K_cf(X_i, Y_j)`` as an ``(n, m, d)`` array."""
    X, Y = _as_points(X), _as_points(Y, "Y")
    sq, r = sq_dists(X, Y)
    _, d2, d3 = K.rho_derivs(sq)
    return (-4.0 * ((X.shape[1] + 2) * d2 + 2.0 * sq * d3))[..., None] * r


def _radial_derivs(K, r):
    """``phi(r) = v exp(-r^2 / (2 l^2))`` and its first three radial derivatives."""
    v, l2 = K.base.variance, K.base.lengthscale**2
    e = v * np.exp(-(r**2) / (2.0 * l2))
    p1 = -r / l2 * e
    p2 = (r**2 / l2**2 - 1.0 / l2) * e
    p3 = (3.0 * r / l2**2 - r**3 / l2**3) * e
    return p1, p2, p3


def curlfree_eval_radial(K, x, y):
    """Curl-free kernel from the radial-profile formula (undefined at ``x == y``, returns the limit)."""
    x, y = _check_pair(x, y)
    r_vec = x - y
    r = float(np.linalg.norm(r_vec))
    if r == 0.0:
        return K.base.variance / K.base.lengthscale**2 * np.eye(K.dim)
    p1, p2, _ = _radial_derivs(K, r)
    return (p1 / r**3 - p2 / r**2) * np.outer(r_vec, r_vec) - p1 / r * np.eye(K.dim)


def curlfree_divergence_radial(K, x, y):
    x, y = _check_pair(x, y)
    r_vec = x - y
    r = float(np.linalg.norm(r_vec))
    if r == 0.0:
        return np.zeros(K.dim)
    p1, p2, p3 = _radial_derivs(K, r)
    return -(r_vec / r) * (p3 + (K.dim - 1) / r * (p2 - p1 / r))
