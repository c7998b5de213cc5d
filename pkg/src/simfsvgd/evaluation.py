"""Predictive distributions and their scores: NLL, RMSE, calibration, CSV export."""

from dataclasses import dataclass
import csv
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

RESULT_COLUMNS = ("method", "n_train", "seed", "nll", "rmse", "coverage_90")
CALIBRATION_SAMPLES = 1024


@dataclass(frozen=True)
class PredictiveDistribution:
    """Equal-weight Gaussian mixture per test point.

    ``means``: ``(L, n, d_y)``; ``stds``: broadcastable to the same shape. A
    single Gaussian is the ``L = 1`` case.
    """

    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float)
        if means.ndim == 2:
            means = means[None]
        if means.ndim != 3:
            raise ValueError(f"means must have shape (L, n, d_y), got {means.shape}")
        stds = np.broadcast_to(np.asarray(self.stds, dtype=float), means.shape)
        if np.any(~(stds > 0)):
            raise ValueError("component standard deviations must be positive")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)

    @property
    def n_components(self):
        return self.means.shape[0]

    def mean(self):
        return self.means.mean(axis=0)

    def variance(self):
        return (self.stds**2 + self.means**2).mean(axis=0) - self.mean() ** 2

    def moment_matched(self):
        """Single Gaussian with the mixture's mean and variance."""
        return PredictiveDistribution(self.mean()[None], np.sqrt(np.maximum(self.variance(), 1e-300))[None])

    def log_prob(self, Y):
        """Per-point log density (summed over output dimensions), shape ``(n,)``."""
        Y = np.asarray(Y, dtype=float)
        z = (Y[None] - self.means) / self.stds
        comp = np.sum(-0.5 * z * z - np.log(self.stds) - 0.5 * np.log(2 * np.pi), axis=-1)  # (L, n)
        return logsumexp(comp, axis=0) - np.log(self.n_components)

    def sample(self, rng, S):
        """``S`` draws per test point, shape ``(S, n, d_y)``."""
        comp = rng.integers(0, self.n_components, size=(S,) + self.means.shape[1:2])
        idx = np.arange(self.means.shape[1])
        mu = self.means[comp, idx[None, :]]
        sd = self.stds[comp, idx[None, :]]
        return mu + sd * rng.standard_normal(mu.shape)


def _check_targets(pred, Y):
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if Y.shape != pred.means.shape[1:]:
        raise ValueError(f"targets {Y.shape} do not match predictions {pred.means.shape[1:]}")
    if Y.shape[0] == 0:
        raise ValueError("empty test set")
    return Y


def predictive_nll(pred, Y, moment_matched=False):
    """Mean over test points of the negative log predictive density."""
    if moment_matched:
        pred = pred.moment_matched()
    Y = _check_targets(pred, Y)
    return float(-np.mean(pred.log_prob(Y)))


def rmse(pred, Y):
    Y = _check_targets(pred, Y)
    return float(np.sqrt(np.mean((pred.mean() - Y) ** 2)))


def calibration(pred, Y, levels, rng=None, n_samples=CALIBRATION_SAMPLES):
    """Observed coverage of central predictive intervals, one value per level.

    Interval bounds are empirical quantiles of ``n_samples`` mixture draws per
    point and output; coverage is averaged over points and outputs.
    """
    levels = np.atleast_1d(np.asarray(levels, dtype=float))
    if np.any((levels <= 0) | (levels >= 1)):
        raise ValueError(f"confidence levels must lie in (0, 1), got {levels}")
    Y = _check_targets(pred, Y)
    rng = np.random.default_rng(0) if rng is None else rng
    draws = pred.sample(rng, n_samples)
    out = []
    for a in levels:
        lo = np.quantile(draws, 0.5 - a / 2, axis=0)
        hi = np.quantile(draws, 0.5 + a / 2, axis=0)
        out.append(float(np.mean((Y >= lo) & (Y <= hi))))
    return np.array(out)


def evaluate(pred, test, method, n_train, seed, rng=None):
    """One result row (see ``RESULT_COLUMNS``)."""
    return {
        "method": method,
        "n_train": int(n_train),
        "seed": int(seed),
        "nll": predictive_nll(pred, test.Y),
        "rmse": rmse(pred, test.Y),
        "coverage_90": float(calibration(pred, test.Y, [0.9], rng)[0]),
    }


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def export_curves(results, path):
    """Write result rows and an aggregated ``.agg.csv`` (median and IQR per method and n)."""
    path = Path(path)
    rows = sorted(results, key=lambda r: (r["method"], int(r["n_train"]), int(r["seed"])))
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in RESULT_COLUMNS])
    agg = aggregate(rows)
    metrics = RESULT_COLUMNS[3:]
    with open(path.with_suffix(".agg.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "n_train", "n_seeds"] + [f"{m}_{s}" for m in metrics for s in ("median", "q25", "q75")])
        for (method, n), stats in agg.items():
            w.writerow([method, n, stats["n_seeds"]] + [_fmt(stats[m][s]) for m in metrics for s in ("median", "q25", "q75")])
    return path


def aggregate(results):
    """``{(method, n_train): {"n_seeds": int, metric: {"median", "q25", "q75"}}}``."""
    groups = {}
    for r in results:
        groups.setdefault((r["method"], int(r["n_train"])), []).append(r)
    out = {}
    for key in sorted(groups):
        rows = groups[key]
        stats = {"n_seeds": len(rows)}
        for m in RESULT_COLUMNS[3:]:
            v = np.array([float(r[m]) for r in rows])
            stats[m] = {"median": float(np.median(v)), "q25": float(np.quantile(v, 0.25)),
                        "q75": float(np.quantile(v, 0.75))}
        out[key] = stats
    return out


def load_results(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [{"method": r["method"], "n_train": int(r["n_train"]), "seed": int(r["seed"]),
             **{m: float(r[m]) for m in RESULT_COLUMNS[3:]}} for r in rows]
