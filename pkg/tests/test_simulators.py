import numpy as np
import pytest

from simfsvgd.errors import NumericFailure
from simfsvgd.sim_priors import MeasurementSampler, sample_measurement_set
from simfsvgd.simulators import (
    DT,
    Dataset,
    PendulumParams,
    RealPendulumParams,
    SinusoidTask,
    generate_dataset,
    integrate,
    pendulum_domain_model,
    pendulum_energy,
    pendulum_rhs,
    pendulum_transition,
    real_pendulum_rhs,
    rk4_step,
    transition_model,
)

BOX = MeasurementSampler((-np.pi, -5.0, -2.0), (np.pi, 5.0, 2.0), k=200, seed=0)


def test_pendulum_rhs_examples():
    np.testing.assert_array_equal(pendulum_rhs(PendulumParams(), [0.0, 0.0], 0.0), [0.0, 0.0])
    np.testing.assert_allclose(pendulum_rhs(PendulumParams(1, 1, 1, 1), [np.pi / 2, 0.0], 0.0), [0.0, 9.81])
    np.testing.assert_allclose(pendulum_rhs(PendulumParams(1, 1, 4, 2), [0.0, 0.0], 1.0), [0.0, 0.5])


@pytest.mark.parametrize("kw", [dict(m=0.0), dict(I=-1.0), dict(g=0.0)])
def test_params_validation(kw):
    with pytest.raises(ValueError):
        PendulumParams(**kw)
    with pytest.raises(ValueError):
        RealPendulumParams(t_m=0.0)
    with pytest.raises(ValueError):
        RealPendulumParams(c_d=-0.1)


def test_real_rhs_reduces_to_ideal():
    base = PendulumParams(1.2, 0.8, 0.9, 1.7)
    real = RealPendulumParams(base, c_d=0.0, mu_f=0.0, t_m=0.05)
    rng = np.random.default_rng(0)
    for _ in range(50):
        th, om, u = rng.uniform(-3, 3, size=3)
        ideal = pendulum_rhs(base, [th, om], u)
        r = real_pendulum_rhs(real, [th, om, base.C_m * u], u)
        np.testing.assert_array_equal(r[:2], ideal)
        assert r[2] == 0.0


def test_drag_and_friction_reduce_acceleration():
    ideal = PendulumParams()
    real = RealPendulumParams(ideal)
    for th, om in [(0.3, 0.5), (-1.0, 2.0), (2.0, 0.01)]:
        assert real_pendulum_rhs(real, [th, om, 0.0], 0.0)[1] < pendulum_rhs(ideal, [th, om], 0.0)[1]


def test_rk4_examples():
    s = np.array([0.3, -1.2])
    np.testing.assert_array_equal(rk4_step(lambda z, u: np.zeros_like(z), s, 0.0, 0.1), s)
    x1 = rk4_step(lambda z, u: -z, np.array([1.0]), 0.0, 0.1)
    assert abs(x1[0] - np.exp(-0.1)) <= 1e-6
    with pytest.raises(ValueError):
        rk4_step(lambda z, u: -z, s, 0.0, 0.0)
    with pytest.raises(NumericFailure):
        rk4_step(lambda z, u: np.full_like(z, np.inf), s, 0.0, 0.1)


def rollout(params, s0, dt, T, u=0.0):
    s = np.array(s0, dtype=float)
    for _ in range(int(round(T / dt))):
        s = rk4_step(lambda z, v: pendulum_rhs(params, z, v), s, u, dt)
    return s


def test_rk4_fourth_order_convergence():
    p = PendulumParams()
    s0 = [2.5, 0.5]
    ref = rollout(p, s0, 0.01 / 10, 2.0, u=0.3)
    e1 = np.linalg.norm(rollout(p, s0, 0.01, 2.0, u=0.3) - ref)
    e2 = np.linalg.norm(rollout(p, s0, 0.005, 2.0, u=0.3) - ref)
    assert e1 / e2 >= 2**3 * 0.8


def test_ideal_energy_conserved():
    p = PendulumParams(1.1, 0.9, 1.3, 1.0)
    s0 = np.array([2.0, 0.0])
    dt, E0 = 1e-3, pendulum_energy(p, s0)
    s = s0
    drift = 0.0
    for _ in range(10000):
        s = rk4_step(lambda z, v: pendulum_rhs(p, z, v), s, 0.0, dt)
        drift = max(drift, abs(pendulum_energy(p, s) - E0))
    assert drift <= 1e-5


def test_real_energy_non_increasing():
    r = RealPendulumParams()
    s = np.array([2.0, 1.0, 0.0])
    E = [pendulum_energy(r.base, s)]
    for _ in range(10000):
        s = rk4_step(lambda z, v: real_pendulum_rhs(r, z, v), s, 0.0, 1e-3)
        E.append(pendulum_energy(r.base, s))
    assert np.all(np.diff(E) <= 1e-12)
    assert E[-1] < E[0]


def test_transition_model_contract():
    with pytest.raises(ValueError):
        transition_model(PendulumParams(), dt=0.0)
    with pytest.raises(ValueError):
        pendulum_domain_model(dt=-1.0)
    for params in (PendulumParams(), RealPendulumParams()):
        tm = transition_model(params)
        X = sample_measurement_set(BOX)
        a, b = tm(X, np.zeros((1, 0))), tm(X, np.zeros((1, 0)))
        assert a.tobytes() == b.tobytes() and a.shape == (1, 200, 2)
        np.testing.assert_array_equal(tm([[0.0, 0.0, 0.0]], np.zeros((1, 0))), np.zeros((1, 1, 2)))


def test_transition_lipschitz_in_u():
    p = PendulumParams(1.0, 1.0, 0.8, 1.4)
    X = sample_measurement_set(BOX)
    eps = 1e-4
    for tm in (transition_model(p), transition_model(RealPendulumParams(p))):
        up, dn = X.copy(), X.copy()
        up[:, 2] += eps
        dn[:, 2] -= eps
        slope = np.abs(tm(up, np.zeros((1, 0))) - tm(dn, np.zeros((1, 0))))[0] / (2 * eps)
        assert np.all(slope <= 2 * p.C_m * DT / p.I)


def test_domain_family_matches_fixed_params():
    fam = pendulum_domain_model()
    X = sample_measurement_set(BOX)[:20]
    Phi = np.array([[1.0, 1.0, 1.0, 1.0], [0.7, 1.3, 0.9, 1.2]])
    out = fam(X, Phi)
    for row, phi in zip(out, Phi):
        np.testing.assert_allclose(row, pendulum_transition(PendulumParams(*phi), X), rtol=1e-13, atol=1e-15)


def test_sinusoid_task():
    t = SinusoidTask()
    x = np.array([[0.0], [np.pi / 2], [-1.0]])
    np.testing.assert_allclose(t.true_fn(x)[:, 0], [0.0, 2.0 + np.pi / 4, -2 * np.sin(1.0) - 0.5])
    out = t.domain_model()(x, np.array([[1.0, 2.0], [3.0, 0.5]]))
    np.testing.assert_allclose(out[1, :, 0], 3.0 * np.sin(0.5 * x[:, 0]))
    S = t.param_prior().sample(np.random.default_rng(0), 1000)
    assert S[:, 0].min() >= 0.5 and S[:, 0].max() <= 3.0 and S[:, 1].min() >= 0.5 and S[:, 1].max() <= 2.0
    with pytest.raises(ValueError):
        SinusoidTask(amplitude=0.0)


def test_generate_dataset_noiseless_and_disjoint():
    tm = transition_model(RealPendulumParams())
    train, test = generate_dataset(tm, BOX, 50, 0.0, np.random.default_rng(0), n_test=30)
    np.testing.assert_array_equal(train.Y, tm(train.X, np.zeros((1, 0)))[0])
    assert len(train) == 50 and len(test) == 30
    assert not set(map(tuple, train.X)) & set(map(tuple, test.X))
    with pytest.raises(ValueError):
        generate_dataset(tm, MeasurementSampler((0, 0, 0), (0, 0, 0)), 2, 0.0, np.random.default_rng(0), n_test=1)


def test_generate_dataset_noise_level():
    tm = transition_model(PendulumParams())
    train, _ = generate_dataset(tm, BOX, 1000, 0.05, np.random.default_rng(1))
    resid = train.Y - tm(train.X, np.zeros((1, 0)))[0]
    std = resid.std(axis=0, ddof=1)
    assert np.all((std >= 0.045) & (std <= 0.055))


def test_generate_dataset_reproducible_and_validated():
    tm = SinusoidTask().system()
    box = MeasurementSampler((-5.0,), (5.0,))
    a, _ = generate_dataset(tm, box, 10, 0.1, np.random.default_rng(3))
    b, _ = generate_dataset(tm, box, 10, 0.1, np.random.default_rng(3))
    assert a.X.tobytes() == b.X.tobytes() and a.Y.tobytes() == b.Y.tobytes()
    with pytest.raises(ValueError):
        generate_dataset(tm, box, 0, 0.1, np.random.default_rng(3))
    with pytest.raises(ValueError):
        generate_dataset(tm, box, 5, -0.1, np.random.default_rng(3))


def test_dataset_save_load_roundtrip(tmp_path):
    tm = transition_model(RealPendulumParams())
    train, _ = generate_dataset(tm, BOX, 25, 0.05, np.random.default_rng(0), meta={"seed": 0, "system": "real"})
    train.save(tmp_path / "d.csv")
    header = (tmp_path / "d.csv").read_text().splitlines()[0]
    assert header == "x_1,x_2,x_3,y_1,y_2"
    back = Dataset.load(tmp_path / "d.csv")
    np.testing.assert_array_equal(back.X, train.X)
    np.testing.assert_array_equal(back.Y, train.Y)
    assert back.sigma == 0.05 and back.meta == train.meta
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 1)), np.zeros((2, 1)))


def test_integrate_matches_repeated_steps():
    p = PendulumParams()
    s = np.array([[0.5, 0.1], [-1.0, 2.0]])
    f = lambda z, v: pendulum_rhs(p, z, v)
    ref = s
    for _ in range(10):
        ref = rk4_step(f, ref, np.array([0.2, -0.3]), DT / 10)
    np.testing.assert_array_equal(integrate(f, s, np.array([0.2, -0.3]), DT, 10), ref)
