"""Score estimators: estimate grad_x log p(x) from i.i.d. samples of p.

Four estimators share one calling convention (``fit(samples, cfg)`` returns a
callable model mapping a ``(k, d)`` query array to ``(k, d)`` scores):

* ``gaussian``  - score of a Gaussian fitted by moments
* ``ssge``      - spectral Stein gradient estimator (Nystrom eigenfunctions)
* ``nu_method`` - curl-free kernel regression regularized by nu-method iterations
* ``tikhonov``  - the same regression with Tikhonov regularization
"""

from dataclasses import dataclass, field
import csv

import numpy as np
import scipy.linalg

from .errors import NumericFailure
from .kernels import (
    CurlFreeKernel,
    IsotropicKernel,
    curlfree_divergence_matrix,
    gram_and_grad,
    kernel_matrix,
    median_heuristic,
)

ESTIMATORS = ("gaussian", "ssge", "nu_method", "tikhonov")


def as_samples(samples, min_rows=2):
    X = np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError(f"samples must be an (m, d) array, got shape {X.shape}")
    if X.shape[0] < min_rows:
        raise ValueError(f"need at least {min_rows} samples, got {X.shape[0]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("samples contain non-finite entries")
    return X


def _as_queries(queries, d):
    Q = np.asarray(queries, dtype=float)
    if Q.ndim == 1:
        Q = Q[:, None] if d == 1 else Q[None, :]
    if Q.ndim != 2 or Q.shape[1] != d:
        raise ValueError(f"queries must have {d} columns, got shape {Q.shape}")
    return Q


@dataclass(frozen=True)
class ScoreField:
    queries: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        if self.queries.shape != self.scores.shape:
            raise ValueError(f"shape mismatch {self.queries.shape} vs {self.scores.shape}")

    def to_csv(self, path):
        d = self.queries.shape[1]
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow([f"x{i + 1}" for i in range(d)] + [f"s{i + 1}" for i in range(d)])
            for q, s in zip(self.queries, self.scores):
                w.writerow([repr(float(v)) for v in np.concatenate([q, s])])


# ---------------------------------------------------------------------------
# Gaussian fit


@dataclass(frozen=True)
class GaussianScoreModel:
    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray = field(repr=False)

    def __call__(self, queries):
        Q = _as_queries(queries, self.mean.shape[0])
        return -scipy.linalg.cho_solve((self.chol, True), (Q - self.mean).T).T


def gaussian_score_fit(samples, jitter=1e-6, relative_jitter=0.0):
    """Fit mean and unbiased covariance (plus ``eps * I``); score is ``-cov^-1 (x - mean)``.

    ``eps = jitter + relative_jitter * trace(cov) / d``.
    """
    X = as_samples(samples)
    mean = X.mean(axis=0)
    cov = np.atleast_2d(np.cov(X, rowvar=False))
    jitter = jitter + relative_jitter * np.trace(cov) / X.shape[1]
    cov = cov + jitter * np.eye(X.shape[1])
    try:
        chol = scipy.linalg.cholesky(cov, lower=True)
    except np.linalg.LinAlgError:
        ev = np.linalg.eigvalsh(cov)
        raise NumericFailure(
            f"sample covariance is singular after jitter {jitter:g} "
            f"(smallest eigenvalue {ev.min():.3g}, m={X.shape[0]}, d={X.shape[1]}); "
            "increase jitter or the number of samples"
        ) from None
    return GaussianScoreModel(mean, cov, chol)


# ---------------------------------------------------------------------------
# SSGE


@dataclass(frozen=True)
class SsgeConfig:
    kernel: IsotropicKernel = field(default_factory=IsotropicKernel)
    eigenvalue_coverage: float = 0.999
    max_eigenfunctions: int | None = None
    bandwidth_mode: str = "median"
    bandwidth_scale: float = 2.0
    eigenvalue_floor: float = 1e-8

    def __post_init__(self):
        if not 0.0 < self.eigenvalue_coverage <= 1.0:
            raise ValueError(f"eigenvalue_coverage must lie in (0, 1], got {self.eigenvalue_coverage}")
        if self.bandwidth_mode not in ("fixed", "median"):
            raise ValueError(f"bandwidth_mode must be 'fixed' or 'median', got {self.bandwidth_mode!r}")
        if self.max_eigenfunctions is not None and self.max_eigenfunctions < 1:
            raise ValueError("max_eigenfunctions must be >= 1")


@dataclass(frozen=True)
class SsgeModel:
    samples: np.ndarray
    kernel: IsotropicKernel
    eigenvalues: np.ndarray  # (J,), descending
    eigenvectors: np.ndarray  # (m, J), column j is u_j
    beta: np.ndarray  # (J, d)
    all_eigenvalues: np.ndarray = field(repr=False)

    @property
    def n_eigenfunctions(self):
        return self.eigenvalues.shape[0]

    def eigenfunctions(self, queries):
        """Nystrom eigenfunctions ``psi_j(x) = sqrt(m) / lambda_j * sum_l u_jl k(x, x_l)``, shape ``(k, J)``."""
        Q = _as_queries(queries, self.samples.shape[1])
        m = self.samples.shape[0]
        Kq = kernel_matrix(self.kernel, Q, self.samples)
        return np.sqrt(m) * (Kq @ self.eigenvectors) / self.eigenvalues

    def __call__(self, queries):
        return self.eigenfunctions(queries) @ self.beta

    def spectrum_to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["index", "eigenvalue"])
            for i, lam in enumerate(self.all_eigenvalues):
                w.writerow([i, repr(float(lam))])


def _sorted_eigh(K):
    """Eigenpairs sorted by descending eigenvalue with a fixed sign convention."""
    evals, evecs = np.linalg.eigh(K)
    order = np.argsort(-evals, kind="stable")
    evals, evecs = evals[order], evecs[:, order]
    # first component with non-negligible magnitude is made positive
    tol = 1e-12 * np.max(np.abs(evecs), axis=0, keepdims=True)
    first = np.argmax(np.abs(evecs) > tol, axis=0)
    signs = np.sign(evecs[first, np.arange(evecs.shape[1])])
    signs[signs == 0] = 1.0
    return evals, evecs * signs


def select_num_eigenfunctions(evals, coverage, floor=1e-8, max_j=None):
    """Number of leading eigenvalues to keep.

    Eigenvalues below ``floor * lambda_1`` are never kept. Among the rest, J is
    the largest count whose cumulative share of the spectrum is strictly below
    ``coverage`` (at least one); ``coverage == 1`` keeps every retained one.
    """
    if not np.all(np.isfinite(evals)):
        raise NumericFailure("non-finite eigenvalues in the kernel matrix")
    lam1 = evals[0]
    if not lam1 > 0:
        raise NumericFailure(f"kernel matrix has no positive eigenvalue (largest {lam1:g})")
    n_valid = int(np.sum(evals >= floor * lam1))
    if max_j is not None:
        return max(1, min(int(max_j), n_valid))
    if coverage >= 1.0:
        return n_valid
    pos = np.clip(evals, 0.0, None)
    frac = np.cumsum(pos) / pos.sum()
    J = int(np.sum(frac[:n_valid] < coverage))
    return max(1, J)


def ssge_fit(samples, cfg=None):
    cfg = cfg or SsgeConfig()
    X = as_samples(samples)
    m = X.shape[0]
    kernel = cfg.kernel
    if cfg.bandwidth_mode == "median":
        kernel = kernel.with_lengthscale(cfg.bandwidth_scale * median_heuristic(X))
    K, G = gram_and_grad(kernel, X)
    evals, evecs = _sorted_eigh(K)
    J = select_num_eigenfunctions(evals, cfg.eigenvalue_coverage, cfg.eigenvalue_floor, cfg.max_eigenfunctions)
    lam, U = evals[:J], evecs[:, :J]
    # beta_ij = -(1/m) sum_l d/dx_i psi_j(x_l), psi_j from the Nystrom formula
    S = G.sum(axis=0)  # S[l', :] = sum_l grad_x k(x_l, x_l')
    beta = -(U.T @ S) / (np.sqrt(m) * lam[:, None])
    if not np.all(np.isfinite(beta)):
        raise NumericFailure("SSGE coefficients are not finite")
    return SsgeModel(X, kernel, lam, U, beta, evals)


def ssge_eval(model, queries):
    Q = _as_queries(queries, model.samples.shape[1])
    return ScoreField(Q, model(Q))


# ---------------------------------------------------------------------------
# curl-free kernel regression: nu-method and Tikhonov


@dataclass(frozen=True)
class NuMethodConfig:
    kernel: IsotropicKernel | CurlFreeKernel = field(default_factory=IsotropicKernel)
    nu: float = 1.0
    iterations: int = 50
    tikhonov_lambda: float | None = None
    bandwidth_mode: str = "median"
    bandwidth_scale: float = 5.0
    normalize: bool = True
    divergence_limit: float = 1e8

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if int(self.iterations) < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.tikhonov_lambda is not None and not self.tikhonov_lambda > 0:
            raise ValueError("tikhonov_lambda must be positive")
        if self.bandwidth_mode not in ("fixed", "median"):
            raise ValueError(f"bandwidth_mode must be 'fixed' or 'median', got {self.bandwidth_mode!r}")


def nu_method_coefficients(t, nu):
    """Momentum ``u_t`` and step ``omega_t`` of the nu-method at iteration ``t >= 1``."""
    if t < 1:
        raise ValueError(f"iteration index must be >= 1, got {t}")
    # u_1 = 0; its denominator vanishes for nu = 1/2
    u = 0.0 if t == 1 else (t - 1) * (2 * t - 3) * (2 * t + 2 * nu - 1) / ((t + 2 * nu - 1) * (2 * t + 4 * nu - 1) * (2 * t + 2 * nu - 3))
    omega = 4 * (2 * t + 2 * nu - 1) * (t + nu - 1) / ((t + 2 * nu - 1) * (2 * t + 4 * nu - 1))
    return u, omega


@dataclass(frozen=True)
class KernelScoreModel:
    """Score estimate ``s(x) = a * zeta(x) + sum_l K_cf(x, x_l) c_l``.

    ``zeta(x) = -(1/M) sum_l div_x K_cf(x, x_l)``; ``h`` stacks ``zeta`` at the
    samples. ``a``/``c`` come from nu-method iterations or a Tikhonov solve.
    """

    samples: np.ndarray
    kernel: CurlFreeKernel
    a: float
    c: np.ndarray  # (M*d,)
    h: np.ndarray = field(repr=False)
    gram: np.ndarray = field(repr=False)
    iterations: int = 0

    def zeta(self, queries):
        Q = _as_queries(queries, self.kernel.dim)
        return -curlfree_divergence_matrix(self.kernel, Q, self.samples).mean(axis=1)

    def __call__(self, queries):
        Q = _as_queries(queries, self.kernel.dim)
        out = self.a * self.zeta(Q)
        if np.any(self.c):
            out = out + (kernel_matrix(self.kernel, Q, self.samples) @ self.c).reshape(Q.shape)
        return out


# the nu-method state is the same finite representation
NuMethodState = KernelScoreModel


def _curlfree_setup(X, cfg):
    d = X.shape[1]
    k = cfg.kernel
    base = k.base if isinstance(k, CurlFreeKernel) else k
    if isinstance(k, CurlFreeKernel) and k.dim != d:
        raise ValueError(f"kernel dimension {k.dim} does not match samples ({d})")
    if cfg.bandwidth_mode == "median":
        base = base.with_lengthscale(cfg.bandwidth_scale * median_heuristic(X))
    K = CurlFreeKernel(base, d)
    M = X.shape[0]
    gram = kernel_matrix(K, X)
    if cfg.normalize:
        # rescale so the empirical integral operator gram / M has unit spectral norm
        top = scipy.linalg.eigh(gram / M, eigvals_only=True, subset_by_index=[M * d - 1, M * d - 1])[0]
        if not top > 0:
            raise NumericFailure("curl-free Gram matrix has no positive eigenvalue")
        K = CurlFreeKernel(base.with_variance(base.variance / top), d)
        gram = gram / top
    h = -curlfree_divergence_matrix(K, X, X).mean(axis=1).reshape(-1)
    return K, gram, h


def nu_method_fit(samples, cfg=None):
    cfg = cfg or NuMethodConfig()
    X = as_samples(samples)
    M = X.shape[0]
    K, gram, h = _curlfree_setup(X, cfg)
    nu, T = cfg.nu, int(cfg.iterations)
    _, omega1 = nu_method_coefficients(1, nu)
    a_prev2, a_prev = 0.0, -omega1
    c_prev2 = np.zeros_like(h)
    c_prev = np.zeros_like(h)
    for t in range(2, T + 1):
        u, omega = nu_method_coefficients(t, nu)
        a_t = (1 + u) * a_prev - u * a_prev2 - omega
        c_t = (1 + u) * c_prev - (omega / M) * (a_prev * h + gram @ c_prev) - u * c_prev2
        size = max(abs(a_t), float(np.max(np.abs(c_t))))
        if not np.isfinite(size) or size > cfg.divergence_limit:
            raise NumericFailure(
                f"nu-method iterates diverged at t={t} (|state|={size:.3g}); "
                "use fewer iterations or a larger kernel bandwidth"
            )
        a_prev2, a_prev = a_prev, a_t
        c_prev2, c_prev = c_prev, c_t
    return KernelScoreModel(X, K, float(a_prev), c_prev, h, gram, T)


def tikhonov_fit(samples, cfg):
    """Solve ``(L_hat + lam I) s = -zeta`` in the finite kernel representation."""
    if cfg.tikhonov_lambda is None:
        raise ValueError("tikhonov_fit needs cfg.tikhonov_lambda")
    X = as_samples(samples)
    M = X.shape[0]
    lam = float(cfg.tikhonov_lambda)
    K, gram, h = _curlfree_setup(X, cfg)
    A = gram / M + lam * np.eye(gram.shape[0])
    try:
        factor = scipy.linalg.cho_factor(A, lower=True)
    except np.linalg.LinAlgError:
        raise NumericFailure(f"Tikhonov system is singular for lambda={lam:g}") from None
    c = scipy.linalg.cho_solve(factor, h / (lam * M))
    resid = np.linalg.norm(A @ c - h / (lam * M)) / max(np.linalg.norm(h / (lam * M)), 1e-300)
    if not np.isfinite(resid) or resid > 1e-10:
        raise NumericFailure(f"Tikhonov solve inaccurate (relative residual {resid:.2e})")
    return KernelScoreModel(X, K, -1.0 / lam, c, h, gram, 0)


# ---------------------------------------------------------------------------
# facade


def default_config(estimator):
    if estimator == "gaussian":
        return {"jitter": 1e-6}
    if estimator == "ssge":
        return SsgeConfig()
    if estimator == "nu_method":
        return NuMethodConfig()
    if estimator == "tikhonov":
        return NuMethodConfig(tikhonov_lambda=1e-3)
    raise ValueError(f"unknown estimator {estimator!r}; expected one of {ESTIMATORS}")


def fit_estimator(estimator, samples, cfg=None):
    """Fit ``estimator`` on ``samples`` and return the callable score model."""
    if cfg is None:
        cfg = default_config(estimator)
    if estimator == "gaussian":
        if isinstance(cfg, dict):
            return gaussian_score_fit(samples, cfg.get("jitter", 1e-6), cfg.get("relative_jitter", 0.0))
        return gaussian_score_fit(samples, float(cfg))
    if estimator == "ssge":
        return ssge_fit(samples, cfg)
    if estimator == "nu_method":
        return nu_method_fit(samples, cfg)
    if estimator == "tikhonov":
        return tikhonov_fit(samples, cfg)
    raise ValueError(f"unknown estimator {estimator!r}; expected one of {ESTIMATORS}")


def estimate_score(estimator, samples, queries, cfg=None):
    model = fit_estimator(estimator, samples, cfg)
    X = as_samples(samples)
    Q = _as_queries(queries, X.shape[1])
    scores = model(Q)
    if not np.all(np.isfinite(scores)):
        raise NumericFailure(f"{estimator} produced non-finite scores")
    return ScoreField(Q, scores)
