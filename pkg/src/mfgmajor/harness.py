"""Experiment drivers: convergence sweep, rate fit and the verification battery."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import lq_model as lq
from . import rng
from .errors import ConfigError, MfgError, RateFitError
from .master import eval_master, feedback, master_residual, solve_master
from .nash import nash_residual, project_master, projection_identity_check, solve_nash
from .simulator import (
    Mu0,
    SimConfig,
    deviation_test,
    estimate_major_cost,
    estimate_minor_cost,
    expected_equilibrium_costs,
    simulate_equilibrium_flow,
)

__all__ = [
    "ConvergenceTable",
    "ConvergenceAborted",
    "RateFit",
    "Check",
    "VerifyReport",
    "run_convergence",
    "fit_rate",
    "verify_all",
    "draw_states",
    "config_failure_report",
]

COLUMNS = ("N", "sample_id", "e_minor", "e_major", "m1", "e_minor_norm", "e_major_norm")


@dataclass(frozen=True, eq=False)
class ConvergenceTable:
    """One row per ``(N, sample)``; columns as in :data:`COLUMNS`."""

    data: np.ndarray  # (rows, 7)

    columns = COLUMNS

    def __len__(self):
        return self.data.shape[0]

    def column(self, name):
        return self.data[:, COLUMNS.index(name)]

    @property
    def Ns(self):
        return np.unique(self.column("N")).astype(int)

    def summary(self):
        """Per-``N`` mean and max of the normalized errors."""
        out = []
        for N in self.Ns:
            sel = self.column("N") == N
            em, e0 = self.column("e_minor_norm")[sel], self.column("e_major_norm")[sel]
            out.append({"N": int(N), "samples": int(sel.sum()), "mean_e_minor_norm": float(em.mean()),
                        "max_e_minor_norm": float(em.max()), "mean_e_major_norm": float(e0.mean()),
                        "max_e_major_norm": float(e0.max())})
        return out

    def equals(self, other):
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)


class ConvergenceAborted(MfgError):
    """A solver failed mid-sweep; ``table`` holds the rows completed before it."""

    def __init__(self, cause, table):
        super().__init__(f"convergence sweep aborted: {cause}")
        self.cause = cause
        self.table = table


def draw_states(seed, N, samples, d, d0, mu0: Mu0):
    """Sampled stacked states ``(samples, d0 + N d)``: ``x0 ~ U[-1,1]^d0``, minors i.i.d. ``mu0``.

    Streams are keyed by ``(N, sample)`` so each row is reproducible on its own.
    """
    ids = np.arange(samples)
    x0 = -1.0 + 2.0 * rng.uniforms(seed, rng.SAMPLE, 2 * N, ids, d0)
    xs = mu0.sample(seed, rng.SAMPLE, ids, d, step=2 * N + 1, count=N)
    return np.concatenate([x0, xs.reshape(samples, N * d)], axis=1)


def _save_every(spec, nt, t0):
    """Coarsest thinning of the Nash grid that still stores ``t0`` as a knot."""
    k0 = t0 / spec.T * nt
    k = int(round(k0))
    if abs(k - k0) > 1e-9 * nt:
        raise ConfigError(f"t0 = {t0} is not on the solver grid of {nt} steps", key="t0")
    return nt if k == 0 else math.gcd(nt, k)


def _rows_for_N(spec, master, N, samples, t0, seed, mu0, nt):
    nash = solve_nash(spec, N, nt=nt, save_every=_save_every(spec, nt, t0))
    X = draw_states(seed, N, samples, spec.d, spec.d0, mu0)
    u = nash.forms(t0)(X[:, None, :])  # (samples, N + 1)
    x0 = X[:, : spec.d0]
    xs = X[:, spec.d0 :].reshape(samples, N, spec.d)
    total = xs.sum(axis=1, keepdims=True)
    z_loo = (total - xs) / (N - 1)
    z = total[:, 0] / N
    U = eval_master(master, t0, xs, x0[:, None, :], z_loo).U  # (samples, N)
    U0 = eval_master(master, t0, z, x0, z).U0  # (samples,)
    e_minor = np.max(np.abs(u[:, 1:] - U), axis=1)
    e_major = np.abs(u[:, 0] - U0)
    m1 = np.mean(np.linalg.norm(xs, axis=-1), axis=1)
    return np.column_stack(
        [np.full(samples, float(N)), np.arange(samples, dtype=float), e_minor, e_major, m1,
         e_minor / (1 + m1), e_major / (1 + m1)]
    )


def run_convergence(
    spec: lq.LqSpec, N_list, samples, t0=0.0, seed=0, mu0: Mu0 | None = None, nt=1000, workers=1, master=None
) -> ConvergenceTable:
    """Errors between the N-player values and the master field at sampled states.

    The master system is solved once (``nt`` steps, unless ``master`` is
    given); the Nash system once per ``N``. Work is spread over ``N`` values
    across ``workers`` threads; rows are returned in ``N_list`` order.
    """
    N_list = [int(N) for N in N_list]
    if not N_list or min(N_list) < 2:
        raise ConfigError("every N must be >= 2", key="Ns")
    if samples < 1:
        raise ConfigError("samples must be >= 1", key="samples")
    if not 0 <= t0 < spec.T:
        raise ConfigError(f"t0 must lie in [0, {spec.T})", key="t0")
    _save_every(spec, nt, t0)  # rejects an off-grid t0 before any solve
    mu0 = Mu0.uniform(-1.0, 1.0) if mu0 is None else mu0
    master = solve_master(spec, nt=nt) if master is None else master

    def job(N):
        try:
            return _rows_for_N(spec, master, N, samples, t0, seed, mu0, nt)
        except MfgError as exc:
            return exc

    if workers > 1 and len(N_list) > 1:
        with ThreadPoolExecutor(min(workers, len(N_list))) as ex:
            results = list(ex.map(job, N_list))
    else:
        results = []
        for N in N_list:
            results.append(job(N))
            if isinstance(results[-1], Exception):
                break
    done = []
    for r in results:
        if isinstance(r, Exception):
            table = ConvergenceTable(np.concatenate(done) if done else np.empty((0, len(COLUMNS))))
            raise ConvergenceAborted(r, table) from r
        done.append(r)
    return ConvergenceTable(np.concatenate(done))


@dataclass(frozen=True)
class RateFit:
    """Log-log least squares ``log e = intercept + slope log N``.

    ``exact_match`` is set instead of a fit when every error is zero.
    """

    slope: float
    intercept: float
    r2: float
    Ns: tuple = ()
    mean_errors: tuple = ()
    exact_match: bool = False

    def to_dict(self):
        return {"slope": self.slope, "intercept": self.intercept, "r2": self.r2, "Ns": list(self.Ns),
                "mean_errors": list(self.mean_errors), "exact_match": self.exact_match}


def fit_rate(table: ConvergenceTable, column="e_minor_norm") -> RateFit:
    Ns = table.Ns
    if Ns.size < 3:
        raise RateFitError(f"need at least 3 distinct N values, got {Ns.size}")
    e = np.array([table.column(column)[table.column("N") == N].mean() for N in Ns])
    if np.all(e == 0):
        return RateFit(math.nan, math.nan, math.nan, tuple(Ns.tolist()), tuple(e.tolist()), exact_match=True)
    if np.any(e <= 0) or not np.all(np.isfinite(e)):
        raise RateFitError("errors must be positive and finite to fit a rate")
    x, y = np.log(Ns.astype(float)), np.log(e)
    xc, yc = x - x.mean(), y - y.mean()
    slope = float(xc @ yc / (xc @ xc))
    intercept = float(y.mean() - slope * x.mean())
    ss_res = float(np.sum((yc - slope * xc) ** 2))
    ss_tot = float(yc @ yc)
    r2 = 1.0 if ss_tot == 0 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return RateFit(slope, intercept, r2, tuple(Ns.tolist()), tuple(e.tolist()))


# --- verification battery -----------------------------------------------------


@dataclass
class Check:
    name: str
    passed: bool | None  # None: skipped
    value: float | None = None
    tolerance: float | None = None
    detail: str = ""

    def to_dict(self):
        return {"name": self.name, "passed": self.passed, "value": self.value, "tolerance": self.tolerance,
                "detail": self.detail}


@dataclass
class VerifyReport:
    checks: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        return {"passed": self.passed, "seconds": self.seconds, "checks": [c.to_dict() for c in self.checks]}


CHECK_NAMES = (
    "master_residual",
    "nash_residual",
    "fenchel_gap",
    "projection_residual_scaling",
    "projection_identities",
    "exchangeability",
    "cloud_mean_consistency",
    "minor_cost_vs_value",
    "major_cost_vs_value",
    "minor_deviation",
    "major_deviation",
)


def config_failure_report(exc: ConfigError) -> VerifyReport:
    """Report with a failed ``config`` check and every other check skipped."""
    checks = [Check("config", False, detail=str(exc))]
    checks.extend(Check(n, None, detail="skipped") for n in CHECK_NAMES)
    return VerifyReport(checks)


def _box(gen, n, k, lo=-2.0, hi=2.0):
    return gen.uniform(lo, hi, (n, k))


def verify_all(spec, nt=4000, N_check=8, seed=7, cfg: SimConfig | None = None, points=1000) -> VerifyReport:
    """Run every consistency check; solver errors become failed checks.

    ``spec`` may be an :class:`LqSpec` or a mapping of its fields, in which
    case a validation failure is reported as a failed ``config`` check and
    the remaining checks are skipped.

    ``seed`` draws the random evaluation points of the deterministic checks;
    the Monte Carlo checks use the streams of ``cfg`` (default
    ``SimConfig(x0_init=0.5)``, i.e. simulation seed 0).
    """
    t_start = time.perf_counter()
    rep = VerifyReport()
    try:
        if not isinstance(spec, lq.LqSpec):
            spec = lq.LqSpec(**spec)
        cfg = SimConfig(x0_init=0.5) if cfg is None else cfg
    except ConfigError as exc:
        rep = config_failure_report(exc)
        rep.seconds = time.perf_counter() - t_start
        return rep
    rep.checks.append(Check("config", True))
    gen = np.random.default_rng(seed)
    state = {}

    def run(name, fn):
        try:
            rep.checks.append(fn())
        except (MfgError, np.linalg.LinAlgError, FloatingPointError) as exc:
            rep.checks.append(Check(name, False, detail=f"{type(exc).__name__}: {exc}"))

    def c_master():
        m = state["master"] = solve_master(spec, nt=nt)
        t = gen.uniform(0.0, spec.T, points)
        x, x0, z = _box(gen, points, spec.d), _box(gen, points, spec.d0), _box(gen, points, spec.d)
        worst = 0.0
        for k in range(points):
            ri, rii = master_residual(m, t[k], x[k], x0[k], z[k])
            worst = max(worst, float(np.max(np.abs(ri))), float(np.max(np.abs(rii))))
        return Check("master_residual", worst <= 1e-6, worst, 1e-6)

    def c_nash():
        ns = state["nash"] = solve_nash(spec, N_check, nt=nt)
        D = ns.layout.D
        n_pts = max(1, points // 10)
        t = gen.uniform(0.0, spec.T, n_pts)
        X = _box(gen, n_pts, D)
        worst = 0.0
        for k in range(n_pts):
            for i in range(N_check + 1):
                worst = max(worst, float(np.max(np.abs(nash_residual(ns, i, t[k], X[k])))))
        return Check("nash_residual", worst <= 1e-6, worst, 1e-6)

    def c_fenchel():
        n_pts = points
        x, x0, z = _box(gen, n_pts, spec.d), _box(gen, n_pts, spec.d0), _box(gen, n_pts, spec.d)
        p, a = _box(gen, n_pts, spec.d), _box(gen, n_pts, spec.d)
        gap = lq.fenchel_gap(spec, x, x0, p, a, z)
        at_opt = np.abs(lq.fenchel_gap(spec, x, x0, p, -p, z))
        scale = 1.0 + np.abs(lq.eval_f(spec, x, x0, z)) + np.sum(p * p, axis=-1)
        worst_opt = float(np.max(at_opt / scale))
        ok = bool(np.all(gap >= -1e-12 * scale)) and worst_opt <= 1e-12
        return Check("fenchel_gap", ok, worst_opt, 1e-12, detail=f"min gap {float(gap.min()):.3e}")

    def c_scaling():
        m = state["master"]
        vals = []
        for N in (N_check, 8 * N_check):
            X = _box(gen, 200, spec.d0 + N * spec.d, -1.0, 1.0)
            lp = project_master(m, N, 0.5 * spec.T, X)
            m1 = np.mean(np.linalg.norm(X[:, spec.d0 :].reshape(200, N, spec.d), axis=-1), axis=1)
            vals.append(float(np.max(N * np.abs(lp.residuals).max(axis=1) / (1 + m1))))
        lo, hi = min(vals), max(vals)
        ratio = 1.0 if hi == 0 else (hi / lo if lo > 0 else math.inf)
        return Check("projection_residual_scaling", ratio <= 3.0, ratio, 3.0,
                     detail=f"N*max|r|/(1+M1) = {vals[0]:.4g} (N={N_check}), {vals[1]:.4g} (N={8 * N_check})")

    def c_identities():
        m = state["master"]
        X = _box(gen, 1, spec.d0 + N_check * spec.d, -1.0, 1.0)[0]
        res = projection_identity_check(m, N_check, 0.5 * spec.T, X)
        rel = {k: v for k, v in res.items() if not k.startswith("exact")}
        worst = max(rel.values())
        return Check("projection_identities", bool(worst <= 1e-5), float(worst), 1e-5)

    def c_exchange():
        ns = state["nash"]
        lay = ns.layout
        X = _box(gen, 20, lay.D)
        perm = gen.permutation(N_check)
        x0, xs = lay.split(X)
        Xp = lay.stack(x0, xs[:, perm])
        t = float(gen.uniform(0.0, spec.T))
        q = ns.forms(t)
        u, up = q(X[:, None, :]), q(Xp[:, None, :])
        # player perm[k] at X is the player k at the permuted state
        err = max(float(np.max(np.abs(up[:, 1 + np.arange(N_check)] - u[:, 1 + perm]))),
                  float(np.max(np.abs(up[:, 0] - u[:, 0]))))
        scale = 1.0 + float(np.max(np.abs(u)))
        return Check("exchangeability", err <= 1e-10 * scale, err, 1e-10 * scale)

    def c_cloud():
        m = state["master"]
        c = cfg.replace(paths=1, cloud_size=10_000)
        fl = simulate_equilibrium_flow(m, c)
        n = fl.times.size - 1
        idx = np.linspace(n / 10, n, 10).round().astype(int)
        z = fl.states["z"][0, idx]
        se = fl.states["cloud_std"][idx] / math.sqrt(c.cloud_size)
        dev = np.abs(fl.states["cloud_mean"][idx] - z)
        ratio = float(np.max(np.where(se > 0, dev / np.where(se > 0, se, 1.0), np.where(dev > 0, np.inf, 0.0))))
        return Check("cloud_mean_consistency", ratio <= 3.0, ratio, 3.0, detail="max |cloud mean - z| / std err")

    def c_costs():
        m = state["master"]
        a, a0 = feedback(m)
        EU, U0 = expected_equilibrium_costs(m, cfg)
        J = estimate_minor_cost(m, a, cfg)
        J0 = estimate_major_cost(m, a0, cfg)
        d1, d0 = abs(J.mean - EU), abs(J0.mean - U0)
        rep.checks.append(Check("minor_cost_vs_value", d1 <= 3 * J.std_err, d1, 3 * J.std_err,
                                detail=f"J = {J.mean:.6g} +- {J.std_err:.2g}, value = {EU:.6g}"))
        return Check("major_cost_vs_value", d0 <= 3 * J0.std_err, d0, 3 * J0.std_err,
                     detail=f"J0 = {J0.mean:.6g} +- {J0.std_err:.2g}, value = {U0:.6g}")

    def c_dev(side):
        def go():
            m = state["master"]
            if side == "minor":
                g = lambda t, x, x0, z: np.ones_like(x)
            else:
                g = lambda t, x0, z: np.ones_like(x0)
            r = deviation_test(m, g, [-0.2, -0.1, 0.0, 0.1, 0.2], cfg, side=side)
            sandwich = bool(np.all(r.diff >= -3 * r.diff_std_err))
            ok = r.curvature > 0 and abs(r.argmin) <= 0.05 and sandwich
            return Check(f"{side}_deviation", ok, r.curvature, 0.05,
                         detail=f"argmin {r.argmin:.4g}, curvature {r.curvature:.4g}, "
                                f"min paired diff {float(r.diff.min()):.3g}")
        return go

    run("master_residual", c_master)
    if "master" not in state:
        rep.checks.extend(Check(n, None, detail="skipped: master solve failed") for n in CHECK_NAMES[1:])
        rep.seconds = time.perf_counter() - t_start
        return rep
    run("nash_residual", c_nash)
    run("fenchel_gap", c_fenchel)
    run("projection_residual_scaling", c_scaling)
    run("projection_identities", c_identities)
    if "nash" in state:
        run("exchangeability", c_exchange)
    else:
        rep.checks.append(Check("exchangeability", None, detail="skipped: nash solve failed"))
    run("cloud_mean_consistency", c_cloud)
    run("minor_cost_vs_value", c_costs)
    run("minor_deviation", c_dev("minor"))
    run("major_deviation", c_dev("major"))
    rep.seconds = time.perf_counter() - t_start
    return rep
