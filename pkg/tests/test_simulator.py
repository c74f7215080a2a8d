import math

import numpy as np
import pytest
from scipy import stats

from mfgmajor.errors import ConfigError, SimulationDivergedError
from mfgmajor.lq_model import LqSpec
from mfgmajor.master import feedback, solve_master
from mfgmajor.nash import solve_nash
from mfgmajor.simulator import (
    Mu0,
    SimConfig,
    deviation_test,
    estimate_major_cost,
    estimate_minor_cost,
    expected_equilibrium_costs,
    simulate_coupled_particles,
    simulate_equilibrium_flow,
)

from conftest import decoupled


@pytest.fixture(scope="module")
def zero_master():
    return solve_master(LqSpec.zero(), nt=50)


@pytest.fixture(scope="module")
def nash3(spec1):
    return solve_nash(spec1, 3, nt=200)


def test_config_validation():
    for kw, key in [(dict(dt=0.0), "dt"), (dict(paths=0), "paths"), (dict(seed=-1), "seed"),
                    (dict(cloud_size=-2), "cloud_size")]:
        with pytest.raises(ConfigError) as err:
            SimConfig(**kw)
        assert err.value.key == key
    with pytest.raises(ConfigError):
        Mu0.uniform(1.0, 1.0)
    with pytest.raises(ConfigError):
        Mu0.gaussian(0.0, 0.0)
    with pytest.raises(ConfigError):
        SimConfig(dt=0.3).steps(1.0)


def test_mu0_moments():
    g = Mu0.gaussian([1.0, -2.0], 0.5)
    x = g.sample(3, 1, np.arange(20000), 2)
    assert np.allclose(x.mean(axis=0), [1.0, -2.0], atol=0.02)
    assert np.allclose(x.std(axis=0), 0.5, atol=0.01)
    assert np.allclose(g.variance(2), 0.25)
    u = Mu0.uniform(-1.0, [1.0, 3.0])
    assert u.mean(2).tolist() == [0.0, 1.0]
    assert np.allclose(u.variance(2), [4 / 12, 16 / 12])


def test_zero_drift_brownian_law():
    sol = solve_nash(LqSpec.zero(), 2, nt=20)
    cfg = SimConfig(dt=0.01, paths=10_000, seed=1)
    X0 = np.array([0.5, -1.0, 2.0])
    b = simulate_coupled_particles(sol, X0, cfg)
    XT = b.states["X"][:, -1]
    M = cfg.paths
    se = XT.std(axis=0, ddof=1) / math.sqrt(M)
    assert np.all(np.abs(XT.mean(axis=0) - X0) <= 3 * se)
    var = XT.var(axis=0, ddof=1)
    assert np.all(np.abs(var / 2.0 - 1.0) <= 0.05)
    # chi-squared 99% interval for the sample variance of Gaussian endpoints with variance 2T
    lo, hi = stats.chi2.ppf([0.005, 0.995], M - 1) * 2.0 / (M - 1)
    assert np.all((var >= lo) & (var <= hi))


def test_particles_deterministic_and_worker_independent(nash3):
    cfg = SimConfig(dt=0.01, paths=37, seed=9)
    X0 = np.array([0.5, 0.1, -0.2, 0.3])
    a = simulate_coupled_particles(nash3, X0, cfg)
    b = simulate_coupled_particles(nash3, X0, cfg)
    c = simulate_coupled_particles(nash3, X0, cfg, workers=4)
    assert np.array_equal(a.states["X"], b.states["X"]) and np.array_equal(a.states["X"], c.states["X"])
    # a path does not depend on which other paths were simulated with it
    d = simulate_coupled_particles(nash3, X0, cfg.replace(paths=5))
    assert np.array_equal(d.states["X"], a.states["X"][:5])


def test_particles_with_increments_match_internal_noise(nash3):
    cfg = SimConfig(dt=0.01, paths=6, seed=2)
    X0 = np.zeros(4)
    a = simulate_coupled_particles(nash3, X0, cfg, keep_noise=True)
    b = simulate_coupled_particles(nash3, X0, cfg, increments=a.noise)
    assert np.allclose(a.states["X"], b.states["X"], atol=1e-13, rtol=0)


def test_strong_order(nash3):
    paths, T = 400, 1.0
    fine = 0.1 / 8
    n_fine = int(round(T / fine))
    g = np.random.default_rng(3)
    dB = g.normal(scale=math.sqrt(fine), size=(paths, n_fine, 4))
    X0 = np.array([0.5, 1.0, -1.0, 0.2])
    ref = simulate_coupled_particles(nash3, X0, SimConfig(dt=fine, paths=paths), increments=dB)
    errs = []
    for dt in (0.1, 0.05):
        k = int(round(dt / fine))
        coarse = dB.reshape(paths, n_fine // k, k, 4).sum(axis=2)
        run = simulate_coupled_particles(nash3, X0, SimConfig(dt=dt, paths=paths), increments=coarse)
        errs.append(np.mean(np.abs(run.states["X"][:, -1] - ref.states["X"][:, -1])))
    assert math.log2(errs[0] / errs[1]) >= 0.5


def test_divergence_is_reported(nash3):
    with pytest.raises(SimulationDivergedError):
        simulate_coupled_particles(nash3, np.full(4, 2e6), SimConfig(dt=0.1, paths=2))


def test_flow_zero_spec(zero_master):
    cfg = SimConfig(dt=0.01, paths=10_000, seed=4, mu0=Mu0.uniform(0.0, 2.0), x0_init=0.5)
    b = simulate_equilibrium_flow(zero_master, cfg)
    assert np.all(b.states["z"] == 1.0)
    x0T = b.states["x0"][:, -1, 0]
    assert abs(x0T.mean() - 0.5) <= 3 * x0T.std(ddof=1) / 100 and abs(x0T.var() / 2.0 - 1.0) <= 0.05


def test_flow_decoupled_mean_ode():
    sol = solve_master(decoupled(), nt=2000)
    cfg = SimConfig(dt=1e-3, paths=3, seed=0, mu0=Mu0.uniform(0.0, 2.0))
    b = simulate_equilibrium_flow(sol, cfg)
    t = b.times
    exact = 1.0 * np.cosh(1.0 - t) / np.cosh(1.0)
    assert np.max(np.abs(b.states["z"][:, :, 0] - exact)) <= 1e-6


def test_cloud_tracks_mean(spec1, master1):
    cfg = SimConfig(dt=0.01, paths=2, seed=0, cloud_size=10_000, x0_init=0.5)
    b = simulate_equilibrium_flow(master1, cfg)
    idx = np.arange(10, 101, 10)
    se = b.states["cloud_std"][idx] / 100
    assert np.all(np.abs(b.states["cloud_mean"][idx] - b.states["z"][0, idx]) <= 3 * se)
    again = simulate_equilibrium_flow(master1, cfg, workers=3)
    assert np.array_equal(again.states["cloud_mean"], b.states["cloud_mean"])
    assert np.array_equal(again.states["x0"], b.states["x0"])


def test_zero_spec_costs(zero_master):
    cfg = SimConfig(dt=0.01, paths=50)
    a, a0 = feedback(zero_master)
    assert estimate_minor_cost(zero_master, a, cfg).mean == 0.0
    assert estimate_major_cost(zero_master, a0, cfg).mean == 0.0
    r = deviation_test(zero_master, lambda t, x, x0, z: np.ones_like(x), [-0.2, 0.0, 0.2], cfg)
    # only the control cost of the perturbation remains: eps^2 T / 2 on every path
    assert r.cost[1] == 0.0 and np.allclose(r.cost, 0.5 * r.eps**2, atol=1e-12)
    assert np.all(r.std_err <= 1e-12)


def test_costs_agree_with_values(spec1, master1):
    cfg = SimConfig(dt=0.01, paths=4000, seed=5, x0_init=0.5)
    a, a0 = feedback(master1)
    EU, U0 = expected_equilibrium_costs(master1, cfg)
    J = estimate_minor_cost(master1, a, cfg)
    J0 = estimate_major_cost(master1, a0, cfg)
    # dt = 1e-2 adds a small Euler bias on top of the statistical error
    assert abs(J.mean - EU) <= 3 * J.std_err + 0.01
    assert abs(J0.mean - U0) <= 3 * J0.std_err + 0.01
    assert J.paths == cfg.paths and J.std_err > 0


def test_expected_value_by_quadrature(master1):
    from mfgmajor.master import eval_master

    cfg = SimConfig(x0_init=0.5)
    xs = np.polynomial.legendre.leggauss(8)
    vals = eval_master(master1, 0.0, xs[0][:, None], np.array([0.5]), np.array([0.0])).U
    assert abs(expected_equilibrium_costs(master1, cfg)[0] - 0.5 * np.sum(xs[1] * vals)) <= 1e-12


def test_costs_worker_independent(master1):
    cfg = SimConfig(dt=0.05, paths=31, seed=6, x0_init=0.5)
    a, a0 = feedback(master1)
    assert np.array_equal(estimate_minor_cost(master1, a, cfg).samples,
                          estimate_minor_cost(master1, a, cfg, workers=4).samples)
    assert np.array_equal(estimate_major_cost(master1, a0, cfg).samples,
                          estimate_major_cost(master1, a0, cfg, workers=3).samples)


def test_deviation_consistency_and_sandwich(master1):
    cfg = SimConfig(dt=0.01, paths=2000, seed=7, x0_init=0.5)
    a, a0 = feedback(master1)
    r = deviation_test(master1, lambda t, x, x0, z: np.ones_like(x), [0.2, 0.0, -0.2], cfg)
    assert r.cost[1] == estimate_minor_cost(master1, a, cfg).mean
    assert np.all(r.diff >= -3 * r.diff_std_err)
    assert r.curvature > 0
    r0 = deviation_test(master1, lambda t, x0, z: np.ones_like(x0), [0.0, 0.2], cfg, side="major")
    assert r0.cost[0] == estimate_major_cost(master1, a0, cfg).mean
    assert r0.diff[1] >= -3 * r0.diff_std_err[1]
    with pytest.raises(ValueError):
        deviation_test(master1, lambda *a: 1.0, [0.1], cfg)
