"""Experiment definitions behind the command line: score benchmark, sinusoid and pendulum studies.

Each study is a grid of independent cells ``(method, n_train, seed)``. A cell
derives all randomness from ``SeedSequence([seed, n_train, stream])`` so it is
reproducible in isolation, writes its result row to ``cells/<name>.json`` and
is skipped when that file already exists.
"""

from concurrent.futures import ProcessPoolExecutor
import copy
import csv
import hashlib
import json
from pathlib import Path
import time

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .bnn import MlpArch
from .errors import NumericFailure
from .evaluation import evaluate, export_curves
from .score import ESTIMATORS, NuMethodConfig, SsgeConfig, fit_estimator
from .sim_priors import CombinedPrior, MeasurementSampler, SimToRealGP
from .simulators import (
    PendulumParams,
    RealPendulumParams,
    SinusoidTask,
    default_pendulum_param_prior,
    generate_dataset,
    pendulum_domain_model,
    transition_model,
)
from .trainers import (
    FsvgdConfig,
    FviConfig,
    ViConfig,
    WeightPrior,
    ensemble_predictive,
    fvi_train,
    greybox_train,
    sysid_fit,
    sysid_predictive,
    train_fsvgd,
    train_sim_fsvgd,
    vi_predictive,
    vi_train,
)

METHODS = ("sim-fsvgd", "fsvgd", "vi", "fvi", "sysid", "greybox")
EXPERIMENTS = ("score-bench", "sinusoid1d", "pendulum")
SCORE_COLUMNS = ("estimator", "target", "d", "m", "seed", "cosine", "rel_l2")
POSTERIOR_COLUMNS = ("x", "mean", "lo", "hi", "method", "seed")
TEST_STREAM = 10_000  # seed-sequence entry of the shared test set


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the file position or field."""


# ---------------------------------------------------------------------------
# configuration

_TRAIN_DEFAULTS = {
    "fsvgd": {"step_size": 1e-2, "steps": 1000, "k": 16, "n_particles": 20, "optimizer": "adam",
              "estimator": "gaussian", "num_prior_samples": 512, "batch_size": None, "step_size_decay": 1.0,
              "estimator_cfg": None},
    "vi": {"steps": 1000, "learning_rate": 1e-2, "n_mc": 8},
    "fvi": {"steps": 1000, "learning_rate": 1e-2, "n_mc": 16, "k": 16, "num_prior_samples": 512},
    "sysid_budget": 400,
    "weight_prior_std": 1.0,
}

DEFAULTS = {
    "score-bench": {
        "experiment": "score-bench",
        "estimators": list(ESTIMATORS),
        "estimator_cfg": {"ssge": {"eigenvalue_coverage": 0.99}, "nu_method": {"nu": 1.0, "iterations": 50},
                          "tikhonov": {"tikhonov_lambda": 1e-3}},
        "targets": ["gaussian", "mixture"],
        "dims": [1, 2],
        "m_grid": [100, 1000],
        "seeds": [0, 1, 2, 3, 4],
    },
    "sinusoid1d": {
        "experiment": "sinusoid1d",
        "methods": ["sim-fsvgd", "fsvgd", "sysid", "greybox"],
        "n_train": [2, 5, 10],
        "seeds": [0, 1, 2, 3, 4],
        "noise_std": 0.1,
        "n_test": 200,
        "grid_points": 200,
        "task": {},
        "box": {"lo": [-5.0], "hi": [5.0]},
        "arch": {"widths": [1, 64, 64, 1], "activation": "tanh"},
        "gap_gp": {"variance": 0.5, "lengthscale": 3.0},
        "fsvgd_gp": {"variance": 4.0, "lengthscale": 1.0},
        **copy.deepcopy(_TRAIN_DEFAULTS),
    },
    "pendulum": {
        "experiment": "pendulum",
        "methods": ["sim-fsvgd", "fsvgd", "sysid", "greybox"],
        "n_train": [20, 50, 100, 200, 500],
        "seeds": [0, 1, 2, 3, 4],
        "noise_std": 0.02,
        "n_test": 500,
        "real": {"c_d": 0.05, "mu_f": 0.02, "t_m": 0.05},
        "true_params": {"m": 1.0, "l": 1.0, "I": 1.0, "C_m": 1.0},
        "box": {"lo": [-3.141592653589793, -10.0, -3.0], "hi": [3.141592653589793, 10.0, 3.0]},
        "arch": {"widths": [3, 64, 64, 2], "activation": "tanh",
                 "input_scale": [3.141592653589793, 10.0, 3.0], "output_scale": [0.3, 0.5]},
        "gap_gp": {"variance": [0.0003, 0.003], "lengthscale": 2.0},
        "fsvgd_gp": {"variance": [0.1, 0.25], "lengthscale": 2.0},
        **copy.deepcopy(_TRAIN_DEFAULTS),
    },
}
# minibatches keep the pendulum grid affordable; the decaying step removes the Adam noise floor they add
DEFAULTS["pendulum"]["fsvgd"].update(steps=1500, batch_size=32, num_prior_samples=256, step_size_decay=0.1)


def _check_fields(cfg, defaults, where):
    for key, value in cfg.items():
        if key not in defaults:
            raise ConfigError(f"{where}{key}: unknown field; expected one of {sorted(defaults)}")
        if isinstance(defaults[key], dict) and defaults[key] and not isinstance(value, dict):
            raise ConfigError(f"{where}{key}: expected an object, got {type(value).__name__}")
        if isinstance(value, dict) and isinstance(defaults[key], dict) and defaults[key] and key not in ("estimator_cfg",):
            _check_fields(value, defaults[key], f"{where}{key}.")


def _merge(base, over):
    out = copy.deepcopy(base)
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_override(text):
    """``key=value`` with a dotted key path; the value is JSON when it parses, else a string."""
    if "=" not in text:
        raise ConfigError(f"--set {text!r}: expected key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    out = value
    for part in reversed(key.strip().split(".")):
        if not part:
            raise ConfigError(f"--set {text!r}: empty key component")
        out = {part: out}
    return out


def load_config(experiment, path=None, overrides=(), seed=None):
    """Defaults for ``experiment``, overlaid by the JSON file, ``--set`` overrides and ``--seed``."""
    if experiment not in DEFAULTS:
        raise ConfigError(f"unknown experiment {experiment!r}; expected one of {EXPERIMENTS}")
    user = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            user = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
    for o in overrides:
        user = _merge(user, parse_override(o))
    if seed is not None:
        user["seeds"] = [int(seed)]
    defaults = DEFAULTS[experiment]
    _check_fields(user, defaults, "")
    if user.get("experiment", experiment) != experiment:
        raise ConfigError(f"experiment: config is for {user['experiment']!r}, not {experiment!r}")
    cfg = _merge(defaults, user)
    _validate(cfg)
    return cfg


def _validate(cfg):
    if not cfg["seeds"]:
        raise ConfigError("seeds: must be non-empty")
    if cfg["experiment"] == "score-bench":
        bad = [e for e in cfg["estimators"] if e not in ESTIMATORS]
        if not cfg["estimators"] or bad:
            raise ConfigError(f"estimators: must be a non-empty subset of {ESTIMATORS}, got {cfg['estimators']}")
        bad = [t for t in cfg["targets"] if t not in ("gaussian", "mixture")]
        if bad:
            raise ConfigError(f"targets: unknown target(s) {bad}")
        return
    bad = [m for m in cfg["methods"] if m not in METHODS]
    if not cfg["methods"] or bad:
        raise ConfigError(f"methods: must be a non-empty subset of {METHODS}, got {cfg['methods']}")
    if not cfg["n_train"] or min(cfg["n_train"]) < 1:
        raise ConfigError("n_train: must be a non-empty list of positive sizes")
    try:
        _fsvgd_config(cfg, 0)
        MlpArch.from_dict(cfg["arch"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid training configuration: {exc}") from exc


def config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# score benchmark


def _target(name, d):
    """``(sampler(rng, m), score(Q), query grid within two standard deviations)``."""
    if name == "gaussian":
        return (lambda rng, m: rng.standard_normal((m, d))), (lambda Q: -Q), _grid(d, 2.0)
    centers = np.stack([np.full(d, -1.5), np.full(d, 1.5)])
    s = 0.5

    def sample(rng, m):
        return centers[rng.integers(0, 2, size=m)] + s * rng.standard_normal((m, d))

    def score(Q):
        logw = -0.5 * np.sum((Q[:, None, :] - centers[None]) ** 2, axis=-1) / s**2
        w = np.exp(logw - logw.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        return np.einsum("qc,qcd->qd", w, centers[None] - Q[:, None, :]) / s**2

    return sample, score, _grid(d, 2.0 * np.sqrt(s**2 + 1.5**2))


def _grid(d, half):
    g = np.linspace(-half, half, 41 if d == 1 else 9)
    return np.stack(np.meshgrid(*([g] * d), indexing="ij"), axis=-1).reshape(-1, d)


def _estimator_cfg(name, raw):
    raw = dict(raw or {})
    if name == "gaussian":
        return raw or None
    if name == "ssge":
        return SsgeConfig(**raw)
    if name == "tikhonov":
        raw.setdefault("tikhonov_lambda", 1e-3)
    return NuMethodConfig(**raw)


def score_errors(est, true):
    den = np.linalg.norm(est, axis=1) * np.linalg.norm(true, axis=1)
    mask = den > 0
    cos = float(np.mean(np.sum(est * true, axis=1)[mask] / den[mask]))
    return cos, float(np.linalg.norm(est - true) / np.linalg.norm(true))


def run_score_bench(cfg, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for est in cfg["estimators"]:
        ecfg = _estimator_cfg(est, cfg["estimator_cfg"].get(est))
        for target in cfg["targets"]:
            for d in cfg["dims"]:
                sample, score, Q = _target(target, d)
                for m in cfg["m_grid"]:
                    for seed in cfg["seeds"]:
                        X = sample(np.random.default_rng([seed, m, d]), m)
                        try:
                            cos, rel = score_errors(fit_estimator(est, X, ecfg)(Q), score(Q))
                        except NumericFailure:
                            cos, rel = float("nan"), float("nan")
                        rows.append((est, target, d, m, seed, cos, rel))
    path = out / "score_bench.csv"
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(SCORE_COLUMNS)
        for r in rows:
            w.writerow(list(r[:5]) + [repr(r[5]), repr(r[6])])
    return path


# ---------------------------------------------------------------------------
# regression studies


def _fsvgd_config(cfg, seed, **kw):
    raw = dict(cfg["fsvgd"])
    raw.update(kw)
    if raw.get("estimator_cfg") is not None:
        raw["estimator_cfg"] = _estimator_cfg(raw["estimator"], raw["estimator_cfg"])
    return FsvgdConfig(noise_std=cfg["noise_std"], seed=seed, **raw)


def _gp(raw, d_y):
    return SimToRealGP(d_y, raw["variance"], raw["lengthscale"], raw.get("family", "rbf"))


def build_problem(cfg):
    """``(system, domain, param_prior, sampler, d_y)`` for a study configuration."""
    box = MeasurementSampler(cfg["box"]["lo"], cfg["box"]["hi"], k=cfg["fsvgd"]["k"])
    if cfg["experiment"] == "sinusoid1d":
        task = SinusoidTask(**cfg["task"])
        return task.system(), task.domain_model(), task.param_prior(), box, 1
    base = PendulumParams(**cfg["true_params"])
    system = transition_model(RealPendulumParams(base, **cfg["real"]))
    return system, pendulum_domain_model(), default_pendulum_param_prior(), box, 2


def make_datasets(cfg, n, seed):
    system, _, _, box, _ = build_problem(cfg)
    train, _ = generate_dataset(system, box, n, cfg["noise_std"], np.random.default_rng([seed, n, 0]))
    _, test = generate_dataset(system, box, 1, cfg["noise_std"], np.random.default_rng([seed, TEST_STREAM]),
                               n_test=cfg["n_test"])
    return train, test


def fit_method(cfg, method, train, seed_seq):
    """Train ``method``; returns ``(predict, extras)`` with ``predict(X) -> PredictiveDistribution``."""
    _, domain, param_prior, box, d_y = build_problem(cfg)
    arch = MlpArch.from_dict(cfg["arch"])
    seed = int(seed_seq.generate_state(1)[0])
    sigma = cfg["noise_std"]
    gap = _gp(cfg["gap_gp"], d_y)
    if method == "sim-fsvgd":
        prior = CombinedPrior(domain, param_prior, gap)
        ens, _ = train_sim_fsvgd(train, prior, _fsvgd_config(cfg, seed), arch, box)
        return (lambda X: ensemble_predictive(ens, X)), {}
    if method == "fsvgd":
        ens, _ = train_fsvgd(train, _gp(cfg["fsvgd_gp"], d_y), _fsvgd_config(cfg, seed, prior="gp"), arch, box)
        return (lambda X: ensemble_predictive(ens, X)), {}
    if method == "sysid":
        fit = sysid_fit(train, domain, param_prior, cfg["sysid_budget"], np.random.default_rng(seed))
        return (lambda X: sysid_predictive(fit, domain, X)), {"sysid_mse": fit.mse}
    if method == "greybox":
        model, _ = greybox_train(train, domain, param_prior, gap, _fsvgd_config(cfg, seed, prior="gp"), arch, box,
                                 cfg["sysid_budget"])
        return model.predictive, {"sysid_mse": model.sysid.mse}
    rng = np.random.default_rng(seed_seq.spawn(1)[0])
    if method == "vi":
        vp, _ = vi_train(train, arch, WeightPrior(cfg["weight_prior_std"]),
                         ViConfig(noise_std=sigma, seed=seed, **cfg["vi"]))
    else:
        prior = CombinedPrior(domain, param_prior, gap)
        vp, _ = fvi_train(train, arch, prior, FviConfig(noise_std=sigma, seed=seed, **cfg["fvi"]),
                          MeasurementSampler(box.lo, box.hi, k=cfg["fvi"]["k"]))
    return (lambda X: vi_predictive(vp, X, sigma, np.random.default_rng(rng.integers(2**63)))), {}


def cell_name(method, n, seed):
    return f"{method}_n{n}_s{seed}"


def run_cell(cfg, method, n, seed, out):
    """Train and evaluate one cell; idempotent (an existing cell file is returned as is)."""
    out = Path(out)
    path = out / "cells" / f"{cell_name(method, n, seed)}.json"
    if path.exists():
        return json.loads(path.read_text())
    with threadpool_limits(1):
        t0 = time.perf_counter()
        train, test = make_datasets(cfg, n, seed)
        ss = np.random.SeedSequence([seed, n, 1 + METHODS.index(method)])
        predict, extras = fit_method(cfg, method, train, ss)
        row = evaluate(predict(test.X), test, method, n, seed, np.random.default_rng([seed, n, 99]))
        row.update(extras)
        if cfg["experiment"] == "sinusoid1d":
            _dump_posterior(cfg, predict, method, n, seed, out)
        wall = time.perf_counter() - t0
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(row, sort_keys=True))
    tmp.replace(path)
    (out / "cells" / f"{cell_name(method, n, seed)}.time").write_text(f"{wall:.3f}\n")
    return row


def _dump_posterior(cfg, predict, method, n, seed, out):
    lo, hi = cfg["box"]["lo"][0], cfg["box"]["hi"][0]
    width = hi - lo
    x = np.linspace(lo - 0.2 * width, hi + 0.2 * width, cfg["grid_points"])[:, None]
    pred = predict(x)
    mean, std = pred.mean()[:, 0], np.sqrt(pred.variance()[:, 0])
    path = out / "cells" / f"posterior_{cell_name(method, n, seed)}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        for xi, m, s in zip(x[:, 0], mean, std):
            w.writerow([repr(float(xi)), repr(float(m)), repr(float(m - 2 * s)), repr(float(m + 2 * s)), method, seed])


def _cell_job(args):
    return run_cell(*args)


def run_study(cfg, out, jobs=1):
    """Run every missing cell, then write results, posterior dumps and the manifest."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    cells = [(cfg, m, n, s, out) for m in cfg["methods"] for n in cfg["n_train"] for s in cfg["seeds"]]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            rows = list(pool.map(_cell_job, cells))
    else:
        rows = [run_cell(*c) for c in cells]
    export_curves(rows, out / "results.csv")
    if cfg["experiment"] == "pendulum":
        _write_sysid(rows, out / "sysid.csv")
    if cfg["experiment"] == "sinusoid1d":
        _collect_posteriors(cfg, out)
    write_manifest(cfg, out, time.perf_counter() - t0)
    return rows


def _write_sysid(rows, path):
    keep = sorted((r for r in rows if "sysid_mse" in r), key=lambda r: (r["method"], r["n_train"], r["seed"]))
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("method", "n_train", "seed", "sysid_mse"))
        for r in keep:
            w.writerow([r["method"], r["n_train"], r["seed"], repr(float(r["sysid_mse"]))])


def _collect_posteriors(cfg, out):
    for n in cfg["n_train"]:
        with open(out / f"posterior_n{n}.csv", "w", newline="") as f:
            f.write(",".join(POSTERIOR_COLUMNS) + "\n")
            for m in sorted(cfg["methods"]):
                for s in sorted(cfg["seeds"]):
                    f.write((out / "cells" / f"posterior_{cell_name(m, n, s)}.csv").read_text())


def write_manifest(cfg, out, wallclock):
    doc = {"experiment": cfg["experiment"], "config_hash": config_hash(cfg), "code_version": __version__,
           "seeds": cfg["seeds"], "config": cfg, "wallclock_seconds": round(wallclock, 3)}
    (Path(out) / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def run_experiment(cfg, out, jobs=1):
    if cfg["experiment"] == "score-bench":
        t0 = time.perf_counter()
        path = run_score_bench(cfg, out)
        write_manifest(cfg, out, time.perf_counter() - t0)
        return path
    return run_study(cfg, out, jobs)


def evaluate_checkpoint(path, test, method="model", n_train=0, seed=0):
    """Evaluate a saved particle ensemble on a dataset (``eval`` subcommand)."""
    from .bnn import ParticleEnsemble

    ens = ParticleEnsemble.load(path)
    if ens.sigma is None:
        raise ConfigError(f"{path}: checkpoint has no noise std; cannot form a predictive distribution")
    return evaluate(ensemble_predictive(ens, test.X), test, method, n_train, seed)

