"""Training procedures for particle ensembles and variational BNNs.

* ``fsvgd_step`` / ``train_fsvgd`` / ``train_sim_fsvgd``: SVGD on function
  values at ``X = [X_batch, X_measurement]``, pulled back to parameters with a
  vector-Jacobian product. The prior score comes from an exact GP marginal
  (FSVGD) or from an estimator fitted on simulator-prior samples (Sim-FSVGD).
* ``elbo_loss`` / ``vi_train``: mean-field Gaussian VI in weight space.
* ``felbo_grad_step`` / ``fvi_train``: functional VI; the score of the
  variational process is estimated with SSGE from its function samples.
* ``sysid_fit`` / ``greybox_train``: fit simulator parameters by random search
  plus coordinate-wise golden-section refinement, optionally followed by a
  residual FSVGD ensemble.
"""

from dataclasses import dataclass, field, replace
import csv
import time
import warnings

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .bnn import (
    LikelihoodModel,
    ParticleEnsemble,
    batch_forward,
    batch_vjp,
    init_particles,
    likelihood_score,
    log_likelihood,
)
from .errors import NumericFailure
from .evaluation import PredictiveDistribution
from .score import SsgeConfig, ssge_fit
from .sim_priors import make_gp_score_fn, make_prior_score_fn, sample_measurement_set

LOG_COLUMNS = ("step", "train_nll", "grad_norm", "prior_score_norm", "wallclock")
OPTIMIZERS = ("sgd", "adam")


# ---------------------------------------------------------------------------
# optimizers (ascent)


class _Sgd:
    def direction(self, grads):
        return grads


class _Adam:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def direction(self, grads):
        if self.m is None:
            self.m, self.v = np.zeros_like(grads), np.zeros_like(grads)
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grads
        self.v = self.b2 * self.v + (1 - self.b2) * grads * grads
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        return mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(name):
    """Ascent direction per step (unit step size): the gradient, or its Adam preconditioning."""
    if name == "sgd":
        return _Sgd()
    if name == "adam":
        return _Adam()
    raise ValueError(f"unknown optimizer {name!r}; expected one of {OPTIMIZERS}")


def _batch_indices(n, batch_size, rng):
    if batch_size is None or batch_size >= n:
        return np.arange(n)
    return np.sort(rng.choice(n, size=batch_size, replace=False))


def _write_log(log, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(LOG_COLUMNS)
        for row in log:
            w.writerow([row["step"]] + [repr(float(row[c])) for c in LOG_COLUMNS[1:]])


# ---------------------------------------------------------------------------
# FSVGD


@dataclass(frozen=True)
class FsvgdConfig:
    step_size: float = 1e-3
    steps: int = 1000
    batch_size: int | None = None
    k: int = 16
    n_particles: int = 10
    prior: str = "combined"
    estimator: str = "gaussian"
    estimator_cfg: object = None
    num_prior_samples: int = 512
    kernel_variance: float = 1.0
    bandwidth_scale: float = 1.0
    noise_std: float = 0.05
    optimizer: str = "sgd"
    step_size_decay: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.step_size_decay <= 1:
            raise ValueError(f"step size decay must lie in (0, 1], got {self.step_size_decay}")
        if not self.step_size > 0:
            raise ValueError(f"step size must be positive, got {self.step_size}")
        if self.k < 1 or self.steps < 0 or self.n_particles < 1:
            raise ValueError("need k >= 1, steps >= 0 and n_particles >= 1")
        if self.prior not in ("combined", "gp"):
            raise ValueError(f"prior must be 'combined' or 'gp', got {self.prior!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not self.kernel_variance > 0 or not self.bandwidth_scale > 0:
            raise ValueError("function-space kernel variance and bandwidth scale must be positive")


def svgd_direction(H, scores, variance=1.0, bandwidth_scale=1.0):
    """SVGD transport ``u_l = (1/L) sum_i [K_li s_i + grad_{h_i} K(h_i, h_l)]`` on flat values ``(L, D)``.

    RBF kernel with lengthscale ``bandwidth_scale * median pairwise distance``.
    """
    H = np.asarray(H, dtype=float)
    L = H.shape[0]
    if L > 1:
        dists = pdist(H)
        med = float(np.median(dists))
        ell = bandwidth_scale * med if med > 0 else 1.0
        sq = squareform(dists) ** 2
    else:
        ell, sq = 1.0, np.zeros((1, 1))
    K = variance * np.exp(-0.5 * sq / ell**2)
    repulsion = (K.sum(axis=1)[:, None] * H - K @ H) / ell**2
    return (K @ scores + repulsion) / L, ell


def fsvgd_step(ens, batch, n_total, prior_fn, lik, cfg, rng, sampler=None, optimizer=None):
    """One function-space SVGD update; returns ``(new_ensemble, info)``.

    ``batch = (X_b, Y_b)`` may be empty when ``cfg.k >= 1``. ``prior_fn(X, H, rng)``
    returns prior scores for function values ``H: (L, k_total, d_y)``, or is ``None``.
    """
    Xb, Yb = batch
    Xb = np.asarray(Xb, dtype=float).reshape(-1, ens.arch.d_in)
    Yb = np.asarray(Yb, dtype=float).reshape(-1, ens.arch.d_out)
    nb = Xb.shape[0]
    if nb == 0 and cfg.k == 0:
        raise ValueError("an FSVGD step needs data points or a measurement set (k >= 1)")
    parts = [Xb]
    if cfg.k > 0:
        if sampler is None:
            raise ValueError("k >= 1 requires a measurement sampler")
        parts.append(sample_measurement_set(sampler, rng, cfg.k))
    X = np.vstack(parts)
    H = batch_forward(ens.particles, ens.arch, X)
    L = ens.size

    scores = np.zeros_like(H)
    train_nll = float("nan")
    if nb:
        scores[:, :nb] = likelihood_score(lik, H[:, :nb], Yb) * (n_total / nb)
        train_nll = -float(np.mean(log_likelihood(lik, H[:, :nb], Yb))) / nb
    prior_norm = 0.0
    if prior_fn is not None:
        ps = prior_fn(X, H, rng)
        prior_norm = float(np.linalg.norm(ps))
        scores = scores + ps

    U, _ = svgd_direction(H.reshape(L, -1), scores.reshape(L, -1), cfg.kernel_variance, cfg.bandwidth_scale)
    grads = batch_vjp(ens.particles, ens.arch, X, U.reshape(H.shape))
    direction = (optimizer or _Sgd()).direction(grads)
    step_size = cfg.step_size
    with np.errstate(over="ignore", invalid="ignore"):
        new = ens.particles + step_size * direction
    if not np.all(np.isfinite(new)):
        step_size = cfg.step_size / 2
        with np.errstate(over="ignore", invalid="ignore"):
            new = ens.particles + step_size * direction
        if not np.all(np.isfinite(new)):
            raise NumericFailure("FSVGD update is non-finite even after halving the step size")
    out = ParticleEnsemble(new, ens.arch, ens.sigma, ens.meta)
    info = {"train_nll": train_nll, "grad_norm": float(np.linalg.norm(grads)),
            "prior_score_norm": prior_norm, "step_size": step_size}
    return out, info


def _run_fsvgd(dataset, prior_fn, cfg, arch, sampler, lik, init, log_path):
    rng = np.random.default_rng(cfg.seed)
    lik = lik or LikelihoodModel(cfg.noise_std)
    ens = init.copy() if init is not None else init_particles(arch, cfg.n_particles, rng)
    ens.sigma = lik.sigma
    optimizer = make_optimizer(cfg.optimizer)
    n = len(dataset)
    log = []
    t0 = time.perf_counter()
    base = cfg.step_size
    for t in range(cfg.steps):
        idx = _batch_indices(n, cfg.batch_size, rng)
        # geometric decay from step_size to step_size * step_size_decay over the run
        gamma = base * cfg.step_size_decay ** (t / max(1, cfg.steps - 1))
        ens, info = fsvgd_step(ens, (dataset.X[idx], dataset.Y[idx]), n, prior_fn, lik, replace(cfg, step_size=gamma),
                               rng, sampler, optimizer)
        if info["step_size"] != gamma:
            base /= 2
        log.append({"step": t, **{c: info[c] for c in LOG_COLUMNS[1:4]}, "wallclock": time.perf_counter() - t0})
    if log_path is not None:
        _write_log(log, log_path)
    return ens, log


def train_sim_fsvgd(dataset, prior, cfg, arch, sampler, lik=None, init=None, log_path=None):
    """FSVGD with a simulator-informed prior whose score is estimated from prior samples."""
    prior_fn = make_prior_score_fn(prior, cfg.num_prior_samples, cfg.estimator, cfg.estimator_cfg)
    return _run_fsvgd(dataset, prior_fn, cfg, arch, sampler, lik, init, log_path)


def train_fsvgd(dataset, gp, cfg, arch, sampler, lik=None, init=None, log_path=None):
    """FSVGD with a zero-mean GP prior (exact marginal score); ``gp=None`` drops the prior."""
    prior_fn = None if gp is None else make_gp_score_fn(gp)
    return _run_fsvgd(dataset, prior_fn, cfg, arch, sampler, lik, init, log_path)


def ensemble_predictive(ens, X, sigma=None):
    sigma = ens.sigma if sigma is None else sigma
    return PredictiveDistribution(batch_forward(ens.particles, ens.arch, X), np.asarray(sigma, dtype=float))


# ---------------------------------------------------------------------------
# weight-space VI


@dataclass
class VariationalParams:
    mean: np.ndarray
    log_std: np.ndarray
    arch: object

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.log_std = np.broadcast_to(np.asarray(self.log_std, dtype=float), self.mean.shape).copy()
        if self.mean.shape != (self.arch.n_params,):
            raise ValueError(f"mean must have {self.arch.n_params} entries, got {self.mean.shape}")
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.log_std))):
            raise ValueError("variational parameters must be finite")

    @property
    def std(self):
        return np.exp(self.log_std)

    def sample(self, rng, n):
        eps = rng.standard_normal((n, self.mean.size))
        return self.mean + self.std * eps, eps


@dataclass(frozen=True)
class WeightPrior:
    std: float = 1.0

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError(f"prior std must be positive, got {self.std}")


def gaussian_kl(vp, wp):
    """``KL[N(mu, diag(s^2)) || N(0, std^2 I)]`` in closed form."""
    var_ratio = np.exp(2 * vp.log_std) / wp.std**2
    return float(0.5 * np.sum(var_ratio + vp.mean**2 / wp.std**2 - 1.0 - np.log(var_ratio)))


def _elbo_terms(vp, wp, batch, lik, n_total, rng, n_mc):
    X, Y = batch
    X = np.asarray(X, dtype=float).reshape(-1, vp.arch.d_in)
    Y = np.asarray(Y, dtype=float).reshape(-1, vp.arch.d_out)
    if n_mc < 1:
        raise ValueError(f"n_mc must be >= 1, got {n_mc}")
    kl = gaussian_kl(vp, wp)
    g_mean = vp.mean / wp.std**2
    g_log_std = np.exp(2 * vp.log_std) / wp.std**2 - 1.0
    nll, point_nll = 0.0, float("nan")
    if X.shape[0]:
        scale = n_total / X.shape[0]
        thetas, eps = vp.sample(rng, n_mc)
        H = batch_forward(thetas, vp.arch, X)
        point_nll = -float(np.mean(log_likelihood(lik, H, Y))) / X.shape[0]
        nll = scale * X.shape[0] * point_nll
        G = -scale * batch_vjp(thetas, vp.arch, X, likelihood_score(lik, H, Y)) / n_mc  # d nll / d theta_s
        g_mean = g_mean + G.sum(axis=0)
        g_log_std = g_log_std + np.sum(G * eps, axis=0) * vp.std
    return nll + kl, point_nll, g_mean, g_log_std


def elbo_loss(vp, wp, batch, lik, n_total, rng, n_mc=1):
    """Negative ELBO: MC data term scaled by ``n_total / |batch|`` plus the closed-form KL."""
    return _elbo_terms(vp, wp, batch, lik, n_total, rng, n_mc)[0]


def elbo_grad(vp, wp, batch, lik, n_total, rng, n_mc=1):
    """``(loss, d loss / d mean, d loss / d log_std)`` with reparameterized samples."""
    loss, _, gm, gs = _elbo_terms(vp, wp, batch, lik, n_total, rng, n_mc)
    return loss, gm, gs


@dataclass(frozen=True)
class ViConfig:
    steps: int = 2000
    learning_rate: float = 1e-2
    n_mc: int = 8
    batch_size: int | None = None
    noise_std: float = 0.05
    init_log_std: float = -5.0
    optimizer: str = "adam"
    seed: int = 0


def init_variational(arch, rng, init_log_std=-5.0):
    mean = init_particles(arch, 1, rng).particles[0]
    return VariationalParams(mean, np.full(arch.n_params, init_log_std), arch)


def vi_train(dataset, arch, wp, cfg, lik=None, log_path=None):
    rng = np.random.default_rng(cfg.seed)
    lik = lik or LikelihoodModel(cfg.noise_std)
    vp = init_variational(arch, rng, cfg.init_log_std)
    opt = make_optimizer(cfg.optimizer)
    n = len(dataset)
    log = []
    t0 = time.perf_counter()
    for t in range(cfg.steps):
        idx = _batch_indices(n, cfg.batch_size, rng)
        _, point_nll, gm, gs = _elbo_terms(vp, wp, (dataset.X[idx], dataset.Y[idx]), lik, n, rng, cfg.n_mc)
        step = cfg.learning_rate * opt.direction(-np.concatenate([gm, gs]))
        vp = VariationalParams(vp.mean + step[: gm.size], vp.log_std + step[gm.size:], arch)
        log.append({"step": t, "train_nll": point_nll, "grad_norm": float(np.linalg.norm(np.concatenate([gm, gs]))),
                    "prior_score_norm": 0.0, "wallclock": time.perf_counter() - t0})
    if log_path is not None:
        _write_log(log, log_path)
    return vp, log


def vi_predictive(vp, X, sigma, rng, n_samples=100):
    """Moment-matched Gaussian over ``n_samples`` weight draws plus observation noise."""
    thetas, _ = vp.sample(rng, n_samples)
    mix = PredictiveDistribution(batch_forward(thetas, vp.arch, X), np.asarray(sigma, dtype=float))
    return mix.moment_matched()


# ---------------------------------------------------------------------------
# functional VI


@dataclass(frozen=True)
class FviConfig:
    steps: int = 2000
    learning_rate: float = 1e-2
    n_mc: int = 16
    batch_size: int | None = None
    k: int = 16
    noise_std: float = 0.05
    init_log_std: float = -5.0
    ssge: SsgeConfig = field(default_factory=SsgeConfig)
    num_prior_samples: int = 512
    estimator: str = "gaussian"
    estimator_cfg: object = None
    max_skip_fraction: float = 0.1
    optimizer: str = "adam"
    seed: int = 0


MIN_FUNCTION_SAMPLES = 8


def functional_kl_grad(h_samples, prior_scores, ssge_cfg=None):
    """``grad_h [log q(h) - log p(h)]`` at each sample, with ``grad log q`` estimated by SSGE."""
    h_samples = np.asarray(h_samples, dtype=float)
    S = h_samples.shape[0]
    if S < MIN_FUNCTION_SAMPLES:
        raise ValueError(f"need at least {MIN_FUNCTION_SAMPLES} function samples, got {S}")
    flat = h_samples.reshape(S, -1)
    q_score = ssge_fit(flat, ssge_cfg or SsgeConfig())(flat)
    if not np.all(np.isfinite(q_score)):
        raise NumericFailure("SSGE returned non-finite scores for the variational process")
    return q_score.reshape(h_samples.shape) - prior_scores


def felbo_grad_step(state, batch, n_total, prior_fn, lik, cfg, rng, sampler=None, optimizer=None):
    """One negative-fELBO ascent step for ``VariationalParams`` or a ``ParticleEnsemble``.

    Returns ``(new_state, info)``; ``info["skipped"]`` is True when the SSGE fit failed.
    """
    Xb, Yb = batch
    is_vp = isinstance(state, VariationalParams)
    arch = state.arch
    Xb = np.asarray(Xb, dtype=float).reshape(-1, arch.d_in)
    Yb = np.asarray(Yb, dtype=float).reshape(-1, arch.d_out)
    nb = Xb.shape[0]
    parts = [Xb]
    if cfg.k > 0:
        parts.append(sample_measurement_set(sampler, rng, cfg.k))
    X = np.vstack(parts)
    if X.shape[0] == 0:
        raise ValueError("fELBO step needs data points or measurement points")
    if is_vp:
        thetas, eps = state.sample(rng, cfg.n_mc)
    else:
        thetas, eps = state.particles, None
    H = batch_forward(thetas, arch, X)
    g = np.zeros_like(H)
    train_nll = float("nan")
    if nb:
        g[:, :nb] = likelihood_score(lik, H[:, :nb], Yb) * (n_total / nb)
        train_nll = -float(np.mean(log_likelihood(lik, H[:, :nb], Yb))) / nb
    prior_norm = 0.0
    skipped = False
    if prior_fn is not None and cfg.k > 0:
        ps = prior_fn(X, H, rng)
        prior_norm = float(np.linalg.norm(ps))
        try:
            g = g - functional_kl_grad(H, ps, cfg.ssge)
        except NumericFailure as exc:
            warnings.warn(f"fELBO step skipped: {exc}", RuntimeWarning)
            skipped = True
    info = {"train_nll": train_nll, "prior_score_norm": prior_norm, "skipped": skipped, "grad_norm": 0.0}
    if skipped:
        return state, info
    G = batch_vjp(thetas, arch, X, g)
    optimizer = optimizer or _Sgd()
    if is_vp:
        gm = G.mean(axis=0)
        gs = np.mean(G * eps, axis=0) * state.std
        full = np.concatenate([gm, gs])
        step = cfg.learning_rate * optimizer.direction(full)
        new = VariationalParams(state.mean + step[: gm.size], state.log_std + step[gm.size:], arch)
    else:
        full = G
        new = ParticleEnsemble(state.particles + cfg.learning_rate * optimizer.direction(G), arch, state.sigma, state.meta)
    info["grad_norm"] = float(np.linalg.norm(full))
    return new, info


def fvi_train(dataset, arch, prior, cfg, sampler, lik=None, log_path=None):
    """Functional VI with a mean-field Gaussian over weights; ``prior`` is a ``CombinedPrior``."""
    rng = np.random.default_rng(cfg.seed)
    lik = lik or LikelihoodModel(cfg.noise_std)
    vp = init_variational(arch, rng, cfg.init_log_std)
    prior_fn = make_prior_score_fn(prior, cfg.num_prior_samples, cfg.estimator, cfg.estimator_cfg)
    opt = make_optimizer(cfg.optimizer)
    n = len(dataset)
    log, skipped = [], 0
    t0 = time.perf_counter()
    for t in range(cfg.steps):
        idx = _batch_indices(n, cfg.batch_size, rng)
        vp, info = felbo_grad_step(vp, (dataset.X[idx], dataset.Y[idx]), n, prior_fn, lik, cfg, rng, sampler, opt)
        skipped += info["skipped"]
        log.append({"step": t, **{c: info[c] for c in LOG_COLUMNS[1:4]}, "wallclock": time.perf_counter() - t0})
    if cfg.steps and skipped > cfg.max_skip_fraction * cfg.steps:
        raise NumericFailure(f"functional VI skipped {skipped} of {cfg.steps} steps (SSGE failures)")
    if log_path is not None:
        _write_log(log, log_path)
    return vp, log


# ---------------------------------------------------------------------------
# system identification and grey-box models

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
_REFINE_WIDTHS = (0.25, 0.05, 0.01)
LINE_EVALS = 20


@dataclass(frozen=True)
class SysIdResult:
    phi: np.ndarray
    mse: float
    residuals: np.ndarray
    n_evals: int

    def residual_std(self, floor=1e-6):
        return np.maximum(np.sqrt(np.mean(self.residuals**2, axis=0)), floor)


def _support(spec):
    if spec.kind in ("uniform", "loguniform"):
        return spec.a, spec.b
    if spec.kind == "normal":
        return spec.a - 4 * spec.b, spec.a + 4 * spec.b
    return None


def _golden_section(f, lo, hi, n_evals):
    """Minimize a scalar function on ``[lo, hi]`` with exactly ``n_evals >= 2`` evaluations."""
    a, b = lo, hi
    c, d = b - _GOLDEN * (b - a), a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(n_evals - 2):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def sysid_fit(dataset, domain, param_prior, budget=400, rng=None, passes=3):
    """Least-squares simulator parameters: random search, then coordinate-wise golden-section passes."""
    if budget < 1:
        raise ValueError(f"budget must be >= 1 evaluation, got {budget}")
    rng = np.random.default_rng(0) if rng is None else rng
    X, Y = dataset.X, dataset.Y
    free = [j for j, s in enumerate(param_prior.specs) if s.kind != "fixed"]
    n_random = budget if not free else max(1, budget // 4)
    n_searches = (budget - n_random) // LINE_EVALS if free else 0
    n_line = LINE_EVALS
    if free and n_searches < passes * len(free):
        # too little budget for full-resolution searches: one sweep per pass with shorter searches
        n_searches = passes * len(free)
        n_line = (budget - n_random) // n_searches
    if n_line < 2:
        n_random, n_searches = budget, 0
    bounds = np.array([_support(s) or (0.0, 0.0) for s in param_prior.specs])
    evals = 0

    def mse_of(Phi):
        nonlocal evals
        evals += Phi.shape[0]
        with np.errstate(all="ignore"):
            out = domain(X, Phi)
        m = np.mean((out - Y[None]) ** 2, axis=(1, 2))
        return np.where(np.isfinite(m), m, np.inf)

    cand = param_prior.sample(rng, n_random)
    errs = mse_of(cand)
    best = cand[int(np.argmin(errs))].copy()
    best_err = float(np.min(errs))
    # pass p gets an equal share of the line searches, cycling through the free coordinates
    per_pass = [n_searches // passes + (p < n_searches % passes) for p in range(passes)] if n_searches else []
    for p, count in enumerate(per_pass):
        frac = _REFINE_WIDTHS[min(p, len(_REFINE_WIDTHS) - 1)]
        for i in range(count):
            j = free[i % len(free)]
            half = frac * (bounds[j, 1] - bounds[j, 0])
            lo, hi = max(bounds[j, 0], best[j] - half), min(bounds[j, 1], best[j] + half)

            def f(v, j=j):
                phi = best.copy()
                phi[j] = v
                return float(mse_of(phi[None])[0])

            v, fv = _golden_section(f, lo, hi, n_line)
            if fv < best_err:
                best[j], best_err = v, fv
    resid = Y - domain(X, best[None])[0]
    return SysIdResult(best, best_err, resid, evals)


def sysid_predictive(result, domain, X):
    """Simulator prediction with the fitted residual std as noise."""
    mean = domain(np.asarray(X, dtype=float), result.phi[None])[0]
    return PredictiveDistribution(mean[None], result.residual_std())


@dataclass
class GreyBoxModel:
    sysid: SysIdResult
    domain: object
    ensemble: ParticleEnsemble

    def sim_mean(self, X):
        return self.domain(np.asarray(X, dtype=float), self.sysid.phi[None])[0]

    def predictive(self, X):
        res = batch_forward(self.ensemble.particles, self.ensemble.arch, X)
        return PredictiveDistribution(self.sim_mean(X)[None] + res, np.asarray(self.ensemble.sigma, dtype=float))


def greybox_train(dataset, domain, param_prior, gp, cfg, arch, sampler, budget=400, lik=None, log_path=None):
    """SysID fit followed by an FSVGD ensemble (gap-GP prior) on the residual targets."""
    fit = sysid_fit(dataset, domain, param_prior, budget, np.random.default_rng(cfg.seed))
    residual_data = type(dataset)(dataset.X, fit.residuals, dataset.sigma, dict(dataset.meta))
    ens, log = train_fsvgd(residual_data, gp, cfg, arch, sampler, lik, log_path=log_path)
    return GreyBoxModel(fit, domain, ens), log
