"""Simulator-informed functional priors.

A ``CombinedPrior`` describes a stochastic process over functions
``h(x) = g(x, phi) + gap(x)`` where ``g`` is a (vectorized) domain model with
random parameters ``phi ~ p(phi)`` and ``gap`` is a zero-mean GP, independent
per output dimension. Only finite-dimensional marginals on measurement sets
are ever needed: they are sampled here and turned into scores with one of the
estimators in :mod:`simfsvgd.score`.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NumericFailure
from .kernels import IsotropicKernel, kernel_matrix
from .linalg import cho_solve_lower, jittered_cholesky
from .score import ESTIMATORS, fit_estimator

PARAM_KINDS = ("uniform", "loguniform", "normal", "fixed")
MAX_RETRIES = 10
DEFAULT_NUM_PRIOR_SAMPLES = 512
GAUSSIAN_PRIOR_CFG = {"jitter": 0.0, "relative_jitter": 1e-4}


@dataclass(frozen=True)
class ParamSpec:
    """One simulation parameter.

    ``uniform``/``loguniform``: ``a = lo``, ``b = hi``; ``normal``: ``a = mean``,
    ``b = std``; ``fixed``: point mass at ``a``.
    """

    name: str
    kind: str
    a: float
    b: float = 0.0

    def __post_init__(self):
        if self.kind not in PARAM_KINDS:
            raise ValueError(f"parameter {self.name!r}: unknown kind {self.kind!r}; expected one of {PARAM_KINDS}")
        if self.kind in ("uniform", "loguniform") and not self.a < self.b:
            raise ValueError(f"parameter {self.name!r}: need lo < hi, got [{self.a}, {self.b}]")
        if self.kind == "loguniform" and not self.a > 0:
            raise ValueError(f"parameter {self.name!r}: log-uniform bounds must be positive")
        if self.kind == "normal" and not self.b > 0:
            raise ValueError(f"parameter {self.name!r}: std must be positive, got {self.b}")


@dataclass(frozen=True)
class ParamPrior:
    specs: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "specs", tuple(self.specs))
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate parameter names in {names}")

    @classmethod
    def from_dict(cls, spec):
        """``{"m": ["uniform", 0.5, 1.5], "g": ["fixed", 9.81], ...}``."""
        return cls(tuple(ParamSpec(name, v[0], *map(float, v[1:])) for name, v in spec.items()))

    def to_dict(self):
        out = {}
        for s in self.specs:
            out[s.name] = [s.kind, s.a] if s.kind == "fixed" else [s.kind, s.a, s.b]
        return out

    @property
    def names(self):
        return tuple(s.name for s in self.specs)

    @property
    def dim(self):
        return len(self.specs)

    def sample(self, rng, n):
        out = np.empty((n, self.dim))
        for j, s in enumerate(self.specs):
            if s.kind == "uniform":
                out[:, j] = rng.uniform(s.a, s.b, size=n)
            elif s.kind == "loguniform":
                out[:, j] = np.exp(rng.uniform(np.log(s.a), np.log(s.b), size=n))
            elif s.kind == "normal":
                out[:, j] = rng.normal(s.a, s.b, size=n)
            else:
                out[:, j] = s.a
        return out


@dataclass(frozen=True)
class DomainModel:
    """Vectorized simulator ``fn(X, Phi) -> (P, k, d_y)`` for ``X: (k, d_x)``, ``Phi: (P, n_params)``."""

    fn: Callable
    d_x: int
    d_y: int
    n_params: int
    name: str = "domain"

    def __call__(self, X, Phi):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
        if X.shape[1] != self.d_x:
            raise ValueError(f"{self.name}: expected inputs with {self.d_x} columns, got {X.shape[1]}")
        if Phi.shape[1] != self.n_params:
            raise ValueError(f"{self.name}: expected {self.n_params} parameters, got {Phi.shape[1]}")
        out = np.asarray(self.fn(X, Phi), dtype=float)
        expected = (Phi.shape[0], X.shape[0], self.d_y)
        if out.shape != expected:
            raise ValueError(f"{self.name}: simulator returned shape {out.shape}, expected {expected}")
        return out

    def query(self, x, phi):
        """Single-point evaluation ``g(x, phi)``."""
        return self(np.asarray(x, dtype=float)[None, :], np.asarray(phi, dtype=float)[None, :])[0, 0]


def _per_dim(value, d_y, name):
    vals = np.broadcast_to(np.asarray(value, dtype=float), (d_y,)) if np.ndim(value) == 0 else np.asarray(value, float)
    if vals.shape != (d_y,):
        raise ValueError(f"{name} must be a scalar or have {d_y} entries, got shape {vals.shape}")
    return tuple(float(v) for v in vals)


@dataclass(frozen=True)
class SimToRealGP:
    """Zero-mean GP gap, independent across outputs; ``variance = 0`` switches a dimension off."""

    d_y: int
    variance: tuple = 1.0
    lengthscale: tuple = 1.0
    family: str = "rbf"

    def __post_init__(self):
        object.__setattr__(self, "variance", _per_dim(self.variance, self.d_y, "variance"))
        object.__setattr__(self, "lengthscale", _per_dim(self.lengthscale, self.d_y, "lengthscale"))
        if any(v < 0 for v in self.variance):
            raise ValueError(f"gap variances must be non-negative, got {self.variance}")
        if any(not l > 0 for l in self.lengthscale):
            raise ValueError(f"gap lengthscales must be positive, got {self.lengthscale}")
        IsotropicKernel(self.family)  # validates the family name

    def kernel(self, i):
        """Kernel of output ``i``; ``None`` when its variance is zero."""
        v = self.variance[i]
        return IsotropicKernel(self.family, v, self.lengthscale[i]) if v > 0 else None

    def gram(self, i, X):
        k = self.kernel(i)
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.zeros((X.shape[0], X.shape[0])) if k is None else kernel_matrix(k, X)

    def sample(self, X, P, rng):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros((P, X.shape[0], self.d_y))
        for i in range(self.d_y):
            if self.variance[i] == 0:
                continue
            L, _ = jittered_cholesky(self.gram(i, X))
            out[:, :, i] = rng.standard_normal((P, X.shape[0])) @ L.T
        return out


@dataclass(frozen=True)
class CombinedPrior:
    """``h = g(x, phi) + gap``; either component may be absent (``None``)."""

    domain: DomainModel | None
    params: ParamPrior = field(default_factory=ParamPrior)
    gap: SimToRealGP | None = None

    def __post_init__(self):
        if self.domain is None and self.gap is None:
            raise ValueError("a prior needs a domain model, a gap process, or both")
        if self.domain is not None:
            if self.params.dim != self.domain.n_params:
                raise ValueError(
                    f"parameter prior has {self.params.dim} entries, domain model expects {self.domain.n_params}"
                )
            if self.gap is not None and self.gap.d_y != self.domain.d_y:
                raise ValueError(f"gap has d_y={self.gap.d_y}, domain model has d_y={self.domain.d_y}")

    @property
    def d_y(self):
        return self.domain.d_y if self.domain is not None else self.gap.d_y


@dataclass(frozen=True)
class MeasurementSampler:
    """Uniform distribution over an axis-aligned box (zero-width sides allowed)."""

    lo: tuple
    hi: tuple
    k: int = 16
    seed: int | None = None

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi):
            raise ValueError(f"box bounds differ in length: {len(lo)} vs {len(hi)}")
        if any(not a <= b for a, b in zip(lo, hi)):
            raise ValueError(f"need lo <= hi in every dimension, got lo={lo}, hi={hi}")
        if int(self.k) < 1:
            raise ValueError(f"measurement set size must be >= 1, got {self.k}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "k", int(self.k))

    @property
    def dim(self):
        return len(self.lo)


def sample_measurement_set(sampler, rng=None, k=None):
    """``k`` i.i.d. uniform points from the box; uses ``sampler.seed`` when ``rng`` is omitted."""
    if rng is None:
        rng = np.random.default_rng(sampler.seed)
    k = sampler.k if k is None else int(k)
    lo, hi = np.array(sampler.lo), np.array(sampler.hi)
    return lo + (hi - lo) * rng.random((k, sampler.dim))


def sample_prior_functions(prior, X, P, rng):
    """Draw ``P`` function-value samples of the prior at the rows of ``X``, shape ``(P, k, d_y)``."""
    if P < 2:
        raise ValueError(f"need at least 2 prior samples, got {P}")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.zeros((P, X.shape[0], prior.d_y))
    if prior.domain is not None:
        Phi = prior.params.sample(rng, P)
        with np.errstate(all="ignore"):
            sim = prior.domain(X, Phi)
        bad = ~np.all(np.isfinite(sim), axis=(1, 2))
        retries = 0
        while np.any(bad):
            if retries == MAX_RETRIES:
                raise NumericFailure(
                    f"simulator {prior.domain.name!r} kept returning non-finite outputs "
                    f"({int(bad.sum())} of {P} draws after {MAX_RETRIES} redraws)"
                )
            idx = np.flatnonzero(bad)
            Phi[idx] = prior.params.sample(rng, idx.size)
            with np.errstate(all="ignore"):
                sim[idx] = prior.domain(X, Phi[idx])
            bad[idx] = ~np.all(np.isfinite(sim[idx]), axis=(1, 2))
            retries += 1
        out += sim
    if prior.gap is not None:
        out += prior.gap.sample(X, P, rng)
    return out


def _as_function_values(h, k, d_y):
    h = np.asarray(h, dtype=float)
    squeeze = h.ndim == 2
    if squeeze:
        h = h[None]
    if h.ndim != 3 or h.shape[1:] != (k, d_y):
        raise ValueError(f"function values must have shape (L, {k}, {d_y}), got {h.shape}")
    return h, squeeze


def prior_score(prior, X, h, P=DEFAULT_NUM_PRIOR_SAMPLES, estimator="gaussian", cfg=None, rng=None):
    """Estimated ``grad_h log p(h^X)`` for each particle's function values ``h: (L, k, d_y)``.

    Output dimensions are independent under the prior, so one estimator is fit
    per dimension on the ``P`` sampled marginals.
    """
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}; expected one of {ESTIMATORS}")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    k = X.shape[0]
    h, squeeze = _as_function_values(h, k, prior.d_y)
    if estimator == "gaussian":
        if P < k + 2:
            raise ValueError(f"gaussian prior score needs P >= k + 2 = {k + 2} samples, got {P}")
        if cfg is None:
            cfg = GAUSSIAN_PRIOR_CFG
    rng = np.random.default_rng() if rng is None else rng
    samples = sample_prior_functions(prior, X, P, rng)
    scores = np.empty_like(h)
    for i in range(prior.d_y):
        try:
            model = fit_estimator(estimator, samples[:, :, i], cfg)
            scores[:, :, i] = model(h[:, :, i])
        except NumericFailure as exc:
            raise NumericFailure(f"prior score for output dimension {i}: {exc}") from exc
        if not np.all(np.isfinite(scores[:, :, i])):
            raise NumericFailure(f"prior score for output dimension {i} is non-finite")
    return scores[0] if squeeze else scores


def gp_marginal_score(gp, X, h):
    """Exact score ``-K_i^-1 h_i`` of the zero-mean GP marginal, per output dimension."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    h, squeeze = _as_function_values(h, X.shape[0], gp.d_y)
    scores = np.empty_like(h)
    for i in range(gp.d_y):
        if gp.variance[i] == 0:
            raise NumericFailure(f"GP marginal of output dimension {i} is degenerate (zero variance)")
        L, _ = jittered_cholesky(gp.gram(i, X))
        scores[:, :, i] = -cho_solve_lower(L, h[:, :, i].T).T
    return scores[0] if squeeze else scores


def make_prior_score_fn(prior, P=DEFAULT_NUM_PRIOR_SAMPLES, estimator="gaussian", cfg=None):
    """Callable ``(X, h, rng) -> scores`` for the trainers."""

    def fn(X, h, rng):
        return prior_score(prior, X, h, P=P, estimator=estimator, cfg=cfg, rng=rng)

    return fn


def make_gp_score_fn(gp):
    """Exact GP prior score as a trainer callable; ``rng`` is ignored."""

    def fn(X, h, rng):
        return gp_marginal_score(gp, X, h)

    return fn
