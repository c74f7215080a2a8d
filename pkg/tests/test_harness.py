import math

import numpy as np
import pytest

import mfgmajor.harness as harness
from mfgmajor.errors import ConfigError, HorizonTooLongError, RateFitError
from mfgmajor.harness import (
    CHECK_NAMES,
    COLUMNS,
    ConvergenceAborted,
    ConvergenceTable,
    draw_states,
    fit_rate,
    run_convergence,
    verify_all,
)
from mfgmajor.lq_model import LqSpec
from mfgmajor.simulator import Mu0, SimConfig, simulate_equilibrium_flow

from conftest import instance1


def synthetic(Ns, err, samples=5):
    rows = []
    for N in Ns:
        for s in range(samples):
            e = err(N, s)
            rows.append([N, s, e, e, 0.0, e, e])
    return ConvergenceTable(np.array(rows, dtype=float))


NS = (2, 4, 8, 16, 32, 64)


def test_fit_exact_power_laws():
    f = fit_rate(synthetic(NS, lambda N, s: 1.0 / N))
    assert abs(f.slope + 1.0) <= 1e-12 and abs(f.r2 - 1.0) <= 1e-12
    f = fit_rate(synthetic(NS, lambda N, s: 3.0 / N**2))
    assert abs(f.slope + 2.0) <= 1e-12 and f.r2 == pytest.approx(1.0, abs=1e-12)
    assert f.intercept == pytest.approx(math.log(3.0), abs=1e-12)


def test_fit_noisy_rate():
    g = np.random.default_rng(0)
    for _ in range(20):
        eta = g.uniform(-0.1, 0.1, (100, 200))
        f = fit_rate(synthetic(NS, lambda N, s: (1.0 / N) * (1 + eta[N, s]), samples=200))
        assert -1.15 <= f.slope <= -0.85


def test_fit_scale_invariance():
    g = np.random.default_rng(1)
    noise = g.uniform(0.5, 2.0, 100)
    base = fit_rate(synthetic(NS, lambda N, s: noise[N] / N))
    scaled = fit_rate(synthetic(NS, lambda N, s: 1e-4 * noise[N] / N))
    assert abs(base.slope - scaled.slope) <= 1e-12


def test_fit_errors():
    with pytest.raises(RateFitError):
        fit_rate(synthetic((2, 4), lambda N, s: 1.0 / N))
    with pytest.raises(RateFitError):
        fit_rate(synthetic((2, 4, 8), lambda N, s: 0.0 if N == 4 else 1.0))
    f = fit_rate(synthetic((2, 4, 8), lambda N, s: 0.0))
    assert f.exact_match and math.isnan(f.slope)


def test_zero_spec_convergence():
    t = run_convergence(LqSpec.zero(), (2, 4, 8), 10, nt=50)
    assert len(t) == 30 and t.data.shape[1] == len(COLUMNS)
    for c in ("e_minor", "e_major", "e_minor_norm", "e_major_norm"):
        assert not np.any(t.column(c))
    assert fit_rate(t).exact_match


def test_convergence_deterministic_and_parallel_independent(spec1):
    args = dict(N_list=(2, 3, 5), samples=12, nt=200, seed=3)
    a = run_convergence(spec1, **args)
    b = run_convergence(spec1, **args)
    c = run_convergence(spec1, **args, workers=3)
    assert a.equals(b) and a.equals(c)
    # rows do not depend on how many samples or which N are requested alongside
    d = run_convergence(spec1, N_list=(5,), samples=4, nt=200, seed=3)
    assert np.array_equal(d.data, a.data[a.column("N") == 5][:4])


def test_convergence_errors_decrease(spec1, master1):
    t = run_convergence(spec1, (2, 4, 8, 16), 20, nt=2000, master=master1)
    means = [s["mean_e_minor_norm"] for s in t.summary()]
    assert all(a > b for a, b in zip(means, means[1:]))


def test_convergence_t0_on_grid(spec1):
    t = run_convergence(spec1, (2, 4), 5, t0=0.5, nt=200)
    assert np.all(np.isfinite(t.data))
    with pytest.raises(ConfigError) as err:
        run_convergence(spec1, (2, 4), 5, t0=0.1234, nt=200)
    assert err.value.key == "t0"
    with pytest.raises(ConfigError):
        run_convergence(spec1, (1, 4), 5)


def test_draw_states_keyed_per_row():
    mu0 = Mu0.uniform(-1.0, 1.0)
    a = draw_states(5, 4, 30, 2, 1, mu0)
    b = draw_states(5, 4, 7, 2, 1, mu0)
    assert a.shape == (30, 9) and np.array_equal(a[:7], b)
    assert np.all(np.abs(a) <= 1.0)
    assert not np.array_equal(draw_states(5, 3, 7, 2, 1, mu0)[:, :1], b[:, :1])


def test_abort_keeps_completed_rows(spec1, monkeypatch):
    real = harness.solve_nash

    def failing(spec, N, **kw):
        if N == 8:
            raise HorizonTooLongError(0.5, 1e9)
        return real(spec, N, **kw)

    monkeypatch.setattr(harness, "solve_nash", failing)
    with pytest.raises(ConvergenceAborted) as err:
        run_convergence(spec1, (2, 4, 8, 16), 3, nt=100)
    assert len(err.value.table) == 6 and set(err.value.table.Ns) == {2, 4}
    assert isinstance(err.value.cause, HorizonTooLongError)


def test_cloud_check_is_calibrated(master1):
    """Standardized cloud-vs-ODE deviations across seeds look standard normal."""
    scores = []
    for seed in range(40):
        cfg = SimConfig(dt=0.01, paths=1, seed=seed, x0_init=0.5, cloud_size=2000)
        fl = simulate_equilibrium_flow(master1, cfg)
        se = fl.states["cloud_std"][-1, 0] / math.sqrt(cfg.cloud_size)
        scores.append((fl.states["cloud_mean"][-1, 0] - fl.states["z"][0, -1, 0]) / se)
    scores = np.array(scores)
    assert abs(scores.mean()) <= 3 / math.sqrt(40)
    assert 0.6 <= scores.std(ddof=1) <= 1.4


FAST = SimConfig(dt=0.02, paths=400, seed=1, x0_init=0.5)


def test_verify_zero_spec():
    rep = verify_all(LqSpec.zero(), nt=100, N_check=4, cfg=FAST, points=50)
    assert rep.passed, [c for c in rep.checks if not c.passed]
    assert [c.name for c in rep.checks] == ["config", *CHECK_NAMES]
    for name in ("master_residual", "nash_residual", "fenchel_gap", "projection_identities", "exchangeability",
                 "minor_cost_vs_value", "major_cost_vs_value"):
        assert rep[name].value == 0.0, name


def test_verify_invalid_config():
    doc = instance1().to_dict()
    doc["Q"] = [[-1.0]]
    rep = verify_all(doc)
    assert not rep.passed
    assert rep["config"].passed is False and "Q" in rep["config"].detail
    assert all(rep[n].passed is None for n in CHECK_NAMES)
    assert rep.to_dict()["checks"][0]["name"] == "config"


def test_verify_solver_error_is_a_failed_check():
    spec = LqSpec(d=1, d0=1, T=2.0, Q=1.0, A=2.0, QT=1.0, AT=2.0)
    rep = verify_all(spec, nt=200, cfg=FAST, points=10)
    assert rep["master_residual"].passed is False and "HorizonTooLong" in rep["master_residual"].detail
    assert all(rep[n].passed is None for n in CHECK_NAMES[1:])
