"""MLP function class over flat parameter vectors, particle ensembles and a Gaussian likelihood.

All network evaluations are batched over particles: parameters have shape
``(L, d_theta)`` and function values ``(L, k, d_y)``. The vector-Jacobian
product runs reverse accumulation through the stored activations and never
forms a Jacobian.

The network computes ``h(x) = output_scale * mlp((x - input_shift) / input_scale)``.
"""

from dataclasses import dataclass, field
import json
from pathlib import Path

import numpy as np
from scipy.special import erf

from .errors import NumericFailure

ACTIVATIONS = ("tanh", "relu", "gelu", "identity")
_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "gelu":
        return 0.5 * z * (1.0 + erf(z / _SQRT2))
    return z


def _act_grad(name, z, a):
    """Derivative of the activation given pre-activation ``z`` and output ``a``."""
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "gelu":
        return 0.5 * (1.0 + erf(z / _SQRT2)) + z * _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    return np.ones_like(z)


def _vec(v, n, default, name):
    if v is None:
        return (float(default),) * n
    vals = np.broadcast_to(np.asarray(v, dtype=float), (n,))
    return tuple(float(x) for x in vals)


@dataclass(frozen=True)
class MlpArch:
    widths: tuple
    activation: str = "tanh"
    bias: bool = True
    input_shift: tuple | None = None
    input_scale: tuple | None = None
    output_scale: tuple | None = None

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError(f"widths must list >= 2 positive layer sizes, got {widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")
        if len(widths) < 3 and self.activation != "identity":
            raise ValueError("an MLP needs at least one hidden layer (only the identity config may be affine)")
        object.__setattr__(self, "input_shift", _vec(self.input_shift, widths[0], 0.0, "input_shift"))
        object.__setattr__(self, "input_scale", _vec(self.input_scale, widths[0], 1.0, "input_scale"))
        object.__setattr__(self, "output_scale", _vec(self.output_scale, widths[-1], 1.0, "output_scale"))
        if min(self.input_scale) <= 0 or min(self.output_scale) <= 0:
            raise ValueError("input/output scales must be positive")

    @property
    def d_in(self):
        return self.widths[0]

    @property
    def d_out(self):
        return self.widths[-1]

    def layout(self):
        """``[(w_slice, (fan_in, fan_out), b_slice or None), ...]`` into the flat vector."""
        out, pos = [], 0
        for fi, fo in zip(self.widths[:-1], self.widths[1:]):
            w = slice(pos, pos + fi * fo)
            pos += fi * fo
            b = None
            if self.bias:
                b = slice(pos, pos + fo)
                pos += fo
            out.append((w, (fi, fo), b))
        return out

    @property
    def n_params(self):
        return sum(fi * fo + (fo if self.bias else 0) for fi, fo in zip(self.widths[:-1], self.widths[1:]))

    def to_dict(self):
        return {"widths": list(self.widths), "activation": self.activation, "bias": self.bias,
                "input_shift": list(self.input_shift), "input_scale": list(self.input_scale),
                "output_scale": list(self.output_scale)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["widths"]), d.get("activation", "tanh"), d.get("bias", True),
                   d.get("input_shift"), d.get("input_scale"), d.get("output_scale"))


def _check_params(thetas, arch):
    thetas = np.asarray(thetas, dtype=float)
    single = thetas.ndim == 1
    thetas = np.atleast_2d(thetas)
    if thetas.shape[1] != arch.n_params:
        raise ValueError(f"expected {arch.n_params} parameters, got {thetas.shape[1]}")
    return thetas, single


def _check_inputs(X, arch, L):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[-1] != arch.d_in:
        raise ValueError(f"inputs must have {arch.d_in} columns, got {X.shape[-1]}")
    if X.ndim == 2:
        X = np.broadcast_to(X, (L,) + X.shape)
    elif X.ndim != 3 or X.shape[0] != L:
        raise ValueError(f"inputs must be (k, d_x) or ({L}, k, d_x), got {X.shape}")
    return X


def _forward_batch(thetas, arch, X):
    """Returns outputs ``(L, k, d_y)`` and the per-layer cache for the reverse pass."""
    a = (X - np.asarray(arch.input_shift)) / np.asarray(arch.input_scale)
    L = thetas.shape[0]
    layers = arch.layout()
    cache = []
    for i, (ws, shape, bs) in enumerate(layers):
        W = thetas[:, ws].reshape((L,) + shape)
        z = a @ W
        if bs is not None:
            z = z + thetas[:, None, bs]
        last = i == len(layers) - 1
        out = z if last else _act(arch.activation, z)
        cache.append((a, z, out))
        a = out
    return a * np.asarray(arch.output_scale), cache


def batch_forward(thetas, arch, X):
    """Function values ``(L, k, d_y)`` for parameters ``(L, d_theta)``; ``X`` shared or per particle."""
    thetas, _ = _check_params(thetas, arch)
    X = _check_inputs(X, arch, thetas.shape[0])
    with np.errstate(over="ignore", invalid="ignore"):
        out, _ = _forward_batch(thetas, arch, X)
    if not np.all(np.isfinite(out)):
        raise NumericFailure("network produced non-finite outputs")
    return out


def batch_vjp(thetas, arch, X, cotangent):
    """``(d h / d theta)^T cotangent`` for every particle, shape ``(L, d_theta)``."""
    thetas, _ = _check_params(thetas, arch)
    L = thetas.shape[0]
    X = _check_inputs(X, arch, L)
    cot = np.asarray(cotangent, dtype=float)
    if cot.ndim == 2:
        cot = np.broadcast_to(cot, (L,) + cot.shape)
    if cot.shape != X.shape[:2] + (arch.d_out,):
        raise ValueError(f"cotangent must have shape {X.shape[:2] + (arch.d_out,)}, got {cot.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        _, cache = _forward_batch(thetas, arch, X)
        grad = np.zeros_like(thetas)
        layers = arch.layout()
        delta = cot * np.asarray(arch.output_scale)  # d loss / d z of the last layer
        for i in range(len(layers) - 1, -1, -1):
            ws, shape, bs = layers[i]
            a_in, _, _ = cache[i]
            grad[:, ws] = (a_in.transpose(0, 2, 1) @ delta).reshape(L, -1)
            if bs is not None:
                grad[:, bs] = delta.sum(axis=1)
            if i > 0:
                W = thetas[:, ws].reshape((L,) + shape)
                _, z_prev, a_prev = cache[i - 1]
                delta = (delta @ W.transpose(0, 2, 1)) * _act_grad(arch.activation, z_prev, a_prev)
    if not np.all(np.isfinite(grad)):
        raise NumericFailure("vector-Jacobian product is non-finite")
    return grad


def forward(theta, arch, X):
    """Single-particle network output ``(k, d_y)``."""
    return batch_forward(np.asarray(theta, dtype=float)[None, :], arch, X)[0]


def vjp(theta, arch, X, cotangent):
    """Single-particle ``(d h / d theta)^T vec(cotangent)``."""
    cot = np.asarray(cotangent, dtype=float)[None]
    return batch_vjp(np.asarray(theta, dtype=float)[None, :], arch, X, cot)[0]


@dataclass
class ParticleEnsemble:
    particles: np.ndarray
    arch: MlpArch
    sigma: tuple | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.particles = np.atleast_2d(np.asarray(self.particles, dtype=float))
        if self.particles.shape[1] != self.arch.n_params:
            raise ValueError(f"particles have {self.particles.shape[1]} entries, arch needs {self.arch.n_params}")
        if not np.all(np.isfinite(self.particles)):
            raise ValueError("particles must be finite")

    @property
    def size(self):
        return self.particles.shape[0]

    def copy(self):
        return ParticleEnsemble(self.particles.copy(), self.arch, self.sigma, dict(self.meta))

    def save(self, path):
        doc = {"arch": self.arch.to_dict(), "sigma": None if self.sigma is None else list(self.sigma),
               "particles": self.particles.tolist(), "meta": self.meta}
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path):
        doc = json.loads(Path(path).read_text())
        sigma = None if doc["sigma"] is None else tuple(doc["sigma"])
        return cls(np.array(doc["particles"], dtype=float), MlpArch.from_dict(doc["arch"]), sigma, doc.get("meta", {}))


def init_particles(arch, L, rng):
    """He-normal weights ``N(0, 2 / fan_in)`` and zero biases for ``L`` particles."""
    if L < 1:
        raise ValueError(f"need at least one particle, got {L}")
    P = np.zeros((L, arch.n_params))
    for ws, (fi, fo), _ in arch.layout():
        P[:, ws] = rng.normal(0.0, np.sqrt(2.0 / fi), size=(L, fi * fo))
    return ParticleEnsemble(P, arch)


def ensemble_forward(ens, X):
    return batch_forward(ens.particles, ens.arch, X)


@dataclass(frozen=True)
class LikelihoodModel:
    """Homoscedastic Gaussian likelihood with one noise std per output dimension."""

    sigma: tuple
    learnable: bool = False

    def __post_init__(self):
        s = tuple(float(v) for v in np.atleast_1d(self.sigma))
        if min(s) <= 0:
            raise ValueError(f"noise std must be positive, got {s}")
        object.__setattr__(self, "sigma", s)

    def variance(self, d_y):
        return np.broadcast_to(np.asarray(self.sigma) ** 2, (d_y,))


def likelihood_score(lik, h, y):
    """``d/dh log N(y | h, sigma^2) = (y - h) / sigma^2``."""
    h, y = np.asarray(h, dtype=float), np.asarray(y, dtype=float)
    if h.shape[-2:] != y.shape[-2:]:
        raise ValueError(f"predictions {h.shape} and targets {y.shape} differ in shape")
    return (y - h) / lik.variance(h.shape[-1])


def log_likelihood(lik, h, y):
    """Sum of Gaussian log-densities over the trailing ``(k, d_y)`` axes."""
    h, y = np.asarray(h, dtype=float), np.asarray(y, dtype=float)
    var = lik.variance(h.shape[-1])
    r = y - h
    return -0.5 * np.sum(r * r / var + np.log(2 * np.pi * var), axis=(-2, -1))
