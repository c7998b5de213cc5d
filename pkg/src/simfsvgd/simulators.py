"""Pendulum and sinusoid systems, RK4 integration, and dataset generation.

The ideal pendulum (angle measured from the upright position) is

    theta_dd = (m g l sin(theta) + C_m u) / I

The "real" pendulum adds quadratic drag, smoothed Coulomb friction and a
first-order motor lag whose torque ``tau`` is hidden from the learner:

    theta_dd = (m g l sin(theta) + tau - c_d theta_d |theta_d| - mu_f tanh(50 theta_d)) / I
    tau_d    = (C_m u - tau) / t_m

Learners see transitions ``x = [theta, theta_d, u] -> s_next - s`` over one
control period ``dt`` (zero-order-hold input, several RK4 substeps).
"""

from dataclasses import asdict, dataclass, field
import csv
import json
from pathlib import Path

import numpy as np

from .errors import NumericFailure
from .sim_priors import DomainModel, ParamPrior, ParamSpec, sample_measurement_set

DT = 1.0 / 30.0
SUBSTEPS = 10
FRICTION_SHARPNESS = 50.0
PENDULUM_PARAM_NAMES = ("m", "l", "I", "C_m")


def _check_positive(obj, names):
    for n in names:
        if np.any(~(np.asarray(getattr(obj, n), dtype=float) > 0)):
            raise ValueError(f"{type(obj).__name__}.{n} must be strictly positive, got {getattr(obj, n)}")


@dataclass(frozen=True)
class PendulumParams:
    """Fields may be scalars or broadcastable arrays (one entry per parameter sample)."""

    m: float = 1.0
    l: float = 1.0
    I: float = 1.0
    C_m: float = 1.0
    g: float = 9.81

    def __post_init__(self):
        _check_positive(self, ("m", "l", "I", "C_m", "g"))


@dataclass(frozen=True)
class RealPendulumParams:
    base: PendulumParams = field(default_factory=PendulumParams)
    c_d: float = 0.05
    mu_f: float = 0.02
    t_m: float = 0.05

    def __post_init__(self):
        if self.c_d < 0 or self.mu_f < 0:
            raise ValueError(f"drag and friction must be non-negative, got c_d={self.c_d}, mu_f={self.mu_f}")
        if not self.t_m > 0:
            raise ValueError(f"motor time constant must be positive, got {self.t_m}")


def pendulum_rhs(params, state, u):
    """``(theta_d, theta_dd)`` for states ``(..., 2)`` and inputs ``(...)``."""
    state = np.asarray(state, dtype=float)
    p = params
    theta, omega = state[..., 0], state[..., 1]
    acc = (p.m * p.g * p.l * np.sin(theta) + p.C_m * np.asarray(u, dtype=float)) / p.I
    return np.stack(np.broadcast_arrays(omega, acc), axis=-1)


def real_pendulum_rhs(params, state, u):
    """``(theta_d, theta_dd, tau_d)`` for states ``(theta, theta_d, tau)``."""
    state = np.asarray(state, dtype=float)
    p = params.base
    theta, omega, tau = state[..., 0], state[..., 1], state[..., 2]
    resist = params.c_d * omega * np.abs(omega) + params.mu_f * np.tanh(FRICTION_SHARPNESS * omega)
    acc = (p.m * p.g * p.l * np.sin(theta) + tau - resist) / p.I
    dtau = (p.C_m * np.asarray(u, dtype=float) - tau) / params.t_m
    return np.stack(np.broadcast_arrays(omega, acc, dtau), axis=-1)


def rk4_step(rhs, state, u, dt, check=True):
    """One classical Runge-Kutta step with the input held constant."""
    if not dt > 0:
        raise ValueError(f"step size must be positive, got {dt}")
    k1 = rhs(state, u)
    k2 = rhs(state + 0.5 * dt * k1, u)
    k3 = rhs(state + 0.5 * dt * k2, u)
    k4 = rhs(state + dt * k3, u)
    out = state + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if check and not np.all(np.isfinite(out)):
        raise NumericFailure(f"RK4 step produced non-finite state (dt={dt:g})")
    return out


def integrate(rhs, state, u, dt, substeps=SUBSTEPS, check=True):
    h = dt / substeps
    for _ in range(substeps):
        state = rk4_step(rhs, state, u, h, check=check)
    return state


def _split_inputs(X):
    X = np.asarray(X, dtype=float)
    return X[..., :2], X[..., 2]


def pendulum_transition(params, X, dt=DT, substeps=SUBSTEPS, check=True):
    """State differences of the ideal pendulum for inputs ``X[..., :] = [theta, theta_d, u]``."""
    s, u = _split_inputs(X)
    nxt = integrate(lambda z, v: pendulum_rhs(params, z, v), s, u, dt, substeps, check)
    return nxt - s


def real_pendulum_transition(params, X, dt=DT, substeps=SUBSTEPS, check=True):
    """State differences of the real pendulum; the hidden torque starts at 0 for every transition."""
    s, u = _split_inputs(X)
    z0 = np.concatenate([s, np.zeros(s.shape[:-1] + (1,))], axis=-1)
    nxt = integrate(lambda z, v: real_pendulum_rhs(params, z, v), z0, u, dt, substeps, check)
    return nxt[..., :2] - s


def transition_model(params, dt=DT, substeps=SUBSTEPS):
    """Fixed system ``[theta, theta_d, u] -> delta s`` as a parameter-free ``DomainModel``."""
    if not dt > 0:
        raise ValueError(f"transition step dt must be positive, got {dt}")
    step = real_pendulum_transition if isinstance(params, RealPendulumParams) else pendulum_transition
    name = "real_pendulum" if isinstance(params, RealPendulumParams) else "pendulum"

    def fn(X, Phi):
        out = step(params, X, dt, substeps)
        return np.broadcast_to(out, (Phi.shape[0],) + out.shape).copy()

    return DomainModel(fn, d_x=3, d_y=2, n_params=0, name=name)


def _ideal_family_transition(a, b, X, dt, substeps):
    """RK4 for ``theta_dd = a sin(theta) + b u`` with per-draw coefficients ``a, b: (P, 1)``; returns ``(P, k, 2)``."""
    theta0, omega0 = X[:, 0], X[:, 1]
    bu = b * X[:, 2]
    theta = np.broadcast_to(theta0, bu.shape)
    omega = np.broadcast_to(omega0, bu.shape)
    h = dt / substeps
    for _ in range(substeps):
        k1t, k1w = omega, a * np.sin(theta) + bu
        k2t = omega + 0.5 * h * k1w
        k2w = a * np.sin(theta + 0.5 * h * k1t) + bu
        k3t = omega + 0.5 * h * k2w
        k3w = a * np.sin(theta + 0.5 * h * k2t) + bu
        k4t = omega + h * k3w
        k4w = a * np.sin(theta + h * k3t) + bu
        theta = theta + h / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t)
        omega = omega + h / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
    return np.stack([theta - theta0, omega - omega0], axis=-1)


def pendulum_domain_model(dt=DT, substeps=SUBSTEPS, g=9.81):
    """Ideal-pendulum family with parameters ``phi = (m, l, I, C_m)``."""
    if not dt > 0:
        raise ValueError(f"transition step dt must be positive, got {dt}")

    def fn(X, Phi):
        # unvalidated on purpose: bad draws become non-finite rows that the sampler redraws
        m, l, inertia, c_m = (Phi[:, j, None] for j in range(4))
        with np.errstate(all="ignore"):
            return _ideal_family_transition(m * g * l / inertia, c_m / inertia, np.asarray(X, dtype=float), dt, substeps)

    return DomainModel(fn, d_x=3, d_y=2, n_params=4, name="pendulum_family")


def default_pendulum_param_prior():
    return ParamPrior(tuple(ParamSpec(n, "uniform", 0.5, 1.5) for n in PENDULUM_PARAM_NAMES))


def pendulum_energy(params, state):
    """Conserved energy of the ideal unforced pendulum, ``I theta_d^2 / 2 + m g l cos(theta)``."""
    state = np.asarray(state, dtype=float)
    p = params
    return 0.5 * p.I * state[..., 1] ** 2 + p.m * p.g * p.l * np.cos(state[..., 0])


# ---------------------------------------------------------------------------
# sinusoid


@dataclass(frozen=True)
class SinusoidTask:
    """True ``f(x) = A sin(w x + phase) + offset + slope x``; simulator family ``A sin(w x)``."""

    amplitude: float = 2.0
    frequency: float = 1.0
    phase: float = 0.0
    offset: float = 0.0
    slope: float = 0.5
    amplitude_range: tuple = (0.5, 3.0)
    frequency_range: tuple = (0.5, 2.0)

    def __post_init__(self):
        if not self.amplitude > 0 or not self.frequency > 0:
            raise ValueError("sinusoid amplitude and frequency must be positive")

    def true_fn(self, X):
        x = np.asarray(X, dtype=float)[..., 0]
        return (self.amplitude * np.sin(self.frequency * x + self.phase) + self.offset + self.slope * x)[..., None]

    def system(self):
        def fn(X, Phi):
            out = self.true_fn(X)
            return np.broadcast_to(out, (Phi.shape[0],) + out.shape).copy()

        return DomainModel(fn, d_x=1, d_y=1, n_params=0, name="sinusoid")

    def domain_model(self):
        def fn(X, Phi):
            return (Phi[:, 0, None] * np.sin(Phi[:, 1, None] * X[None, :, 0]))[..., None]

        return DomainModel(fn, d_x=1, d_y=1, n_params=2, name="sinusoid_family")

    def param_prior(self):
        return ParamPrior((ParamSpec("A", "uniform", *self.amplitude_range),
                           ParamSpec("omega", "uniform", *self.frequency_range)))


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    sigma: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        if self.X.shape[0] != self.Y.shape[0]:
            raise ValueError(f"row counts differ: {self.X.shape[0]} inputs vs {self.Y.shape[0]} targets")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.Y))):
            raise ValueError("dataset contains non-finite values")

    def __len__(self):
        return self.X.shape[0]

    def save(self, path):
        path = Path(path)
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow([f"x_{i + 1}" for i in range(self.X.shape[1])] + [f"y_{i + 1}" for i in range(self.Y.shape[1])])
            for x, y in zip(self.X, self.Y):
                w.writerow([repr(float(v)) for v in np.concatenate([x, y])])
        sidecar = {"sigma": self.sigma, "d_x": self.X.shape[1], "d_y": self.Y.shape[1], **self.meta}
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path):
        path = Path(path)
        side = json.loads(path.with_suffix(".json").read_text())
        d_x = side.pop("d_x")
        side.pop("d_y")
        sigma = side.pop("sigma")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, :d_x], data[:, d_x:], sigma, side)


def generate_dataset(system, sampler, n, sigma, rng, n_test=0, meta=None):
    """Noisy i.i.d. transitions of ``system``; returns ``(train, test)`` with disjoint inputs."""
    if n < 1:
        raise ValueError(f"need n >= 1 training points, got {n}")
    if sigma < 0:
        raise ValueError(f"noise std must be non-negative, got {sigma}")
    total = n + n_test
    X = sample_measurement_set(sampler, rng, total)
    if np.unique(X, axis=0).shape[0] < total:
        raise ValueError("measurement box is too degenerate to draw disjoint train/test inputs")
    F = system(X, np.zeros((1, system.n_params)))[0]
    Y = F + sigma * rng.standard_normal(F.shape)
    meta = dict(meta or {})
    train = Dataset(X[:n], Y[:n], sigma, {**meta, "split": "train"})
    test = Dataset(X[n:], Y[n:], sigma, {**meta, "split": "test"})
    return train, test


def params_to_dict(params):
    return asdict(params)
