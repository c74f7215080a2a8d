"""Euler-Maruyama simulation of the finite game and of the equilibrium flow.

Randomness comes from counter-based streams (:mod:`mfgmajor.rng`) keyed by
path index, so every output is bitwise reproducible from ``(seed, cfg)``
and independent of ``workers``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import lq_model as lq
from . import rng
from ._backend import get_kernels
from .errors import ConfigError, DimensionMismatchError, NonFiniteCostError, SimulationDivergedError
from .master import MasterSolution, feedback
from .nash import NashSolution, _own_affine
from .quadratic import QuadraticForm

__all__ = [
    "Mu0",
    "SimConfig",
    "PathBundle",
    "CostEstimate",
    "DeviationReport",
    "simulate_coupled_particles",
    "simulate_equilibrium_flow",
    "estimate_minor_cost",
    "estimate_major_cost",
    "deviation_test",
    "expected_equilibrium_costs",
]

DIVERGENCE = 1e6


@dataclass(frozen=True, eq=False)
class Mu0:
    """Initial law of the minor players.

    ``kind="uniform"``: independent coordinates on ``[a, b]``.
    ``kind="gaussian"``: mean ``a`` and standard deviation ``b`` per coordinate.
    """

    kind: str = "uniform"
    a: np.ndarray = -1.0
    b: np.ndarray = 1.0

    def __post_init__(self):
        if self.kind not in ("uniform", "gaussian"):
            raise ConfigError(f"unknown initial law {self.kind!r}", key="mu0.type")
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ConfigError("parameters must be finite", key="mu0.params")
        if self.kind == "uniform" and np.any(np.broadcast_to(a, np.broadcast_shapes(a.shape, b.shape)) >= b):
            raise ConfigError("uniform law requires low < high", key="mu0.params")
        if self.kind == "gaussian" and np.any(b <= 0):
            raise ConfigError("gaussian law requires std > 0", key="mu0.params")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def uniform(cls, low=-1.0, high=1.0):
        return cls("uniform", low, high)

    @classmethod
    def gaussian(cls, mean=0.0, std=1.0):
        return cls("gaussian", mean, std)

    def _params(self, d):
        for v in (self.a, self.b):
            if v.size not in (1, d):
                raise DimensionMismatchError(f"mu0 parameters must be scalars or length {d}")
        return np.broadcast_to(self.a, (d,)), np.broadcast_to(self.b, (d,))

    def mean(self, d):
        a, b = self._params(d)
        return 0.5 * (a + b) if self.kind == "uniform" else np.array(a, dtype=float)

    def variance(self, d):
        a, b = self._params(d)
        return (b - a) ** 2 / 12.0 if self.kind == "uniform" else b**2

    def sample(self, seed, purpose, ids, d, step=0, count=None):
        """Draws for the paths ``ids``: shape ``(len(ids), d)``, or ``(len(ids), count, d)``."""
        a, b = self._params(d)
        n = 1 if count is None else int(count)
        if self.kind == "uniform":
            u = rng.uniforms(seed, purpose, step, ids, n * d).reshape(-1, n, d)
            out = a + (b - a) * u
        else:
            out = a + b * rng.normals(seed, purpose, step, ids, n * d).reshape(-1, n, d)
        return out[:, 0] if count is None else out

    def to_dict(self):
        if self.kind == "uniform":
            return {"type": "uniform", "params": {"low": self.a.tolist(), "high": self.b.tolist()}}
        return {"type": "gaussian", "params": {"mean": self.a.tolist(), "std": self.b.tolist()}}


@dataclass(frozen=True, eq=False)
class SimConfig:
    dt: float = 1e-3
    paths: int = 10_000
    seed: int = 0
    mu0: Mu0 = field(default_factory=Mu0)
    x0_init: np.ndarray = 0.0
    cloud_size: int = 0

    def __post_init__(self):
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ConfigError("must be positive", key="dt")
        if int(self.paths) != self.paths or self.paths < 1:
            raise ConfigError("must be a positive integer", key="paths")
        if int(self.cloud_size) != self.cloud_size or self.cloud_size < 0:
            raise ConfigError("must be a nonnegative integer", key="cloud_size")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("must lie in [0, 2**64)", key="seed")
        object.__setattr__(self, "paths", int(self.paths))
        object.__setattr__(self, "cloud_size", int(self.cloud_size))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "x0_init", np.atleast_1d(np.asarray(self.x0_init, dtype=float)))

    def replace(self, **kw):
        base = dict(dt=self.dt, paths=self.paths, seed=self.seed, mu0=self.mu0, x0_init=self.x0_init,
                    cloud_size=self.cloud_size)
        base.update(kw)
        return SimConfig(**base)

    def x0(self, d0):
        x = self.x0_init
        if x.size == 1 and d0 > 1:
            x = np.full(d0, x[0])
        if x.size != d0:
            raise DimensionMismatchError(f"x0_init must have length {d0}")
        return x

    def steps(self, T):
        n = int(round(T / self.dt))
        if n < 1 or abs(n * self.dt - T) > 1e-9 * T:
            raise ConfigError(f"dt = {self.dt} does not divide the horizon T = {T}", key="dt")
        return n


@dataclass(frozen=True, eq=False)
class PathBundle:
    """Simulated trajectories on ``times``.

    ``kind="nash"``: ``states["X"]`` has shape ``(paths, steps + 1, D)``.
    ``kind="flow"``: ``states["x0"]`` and ``states["z"]`` hold the major
    state and the population mean; with a particle cloud, ``cloud_mean``
    and ``cloud_std`` (``(steps + 1, d)``) follow major path ``0``.
    """

    kind: str
    times: np.ndarray
    states: dict
    path_ids: np.ndarray
    noise: np.ndarray | None = None

    def columns(self):
        if self.kind == "nash":
            D = self.states["X"].shape[-1]
            return ["t", "path_id"] + [f"X_{k}" for k in range(D)]
        d0 = self.states["x0"].shape[-1]
        d = self.states["z"].shape[-1]
        return ["t", "path_id"] + [f"x0_{k}" for k in range(d0)] + [f"z_{k}" for k in range(d)]

    def rows(self, stride=1):
        """Row-major table ``(t, path_id, state...)`` ordered by path then time."""
        if self.kind == "nash":
            S = self.states["X"]
        else:
            S = np.concatenate([self.states["x0"], self.states["z"]], axis=-1)
        S = S[:, ::stride]
        t = self.times[::stride]
        P, n, _ = S.shape
        tt = np.broadcast_to(t[None, :, None], (P, n, 1))
        pid = np.broadcast_to(self.path_ids[:, None, None].astype(float), (P, n, 1))
        return np.concatenate([tt, pid, S], axis=-1).reshape(P * n, -1)


@dataclass(frozen=True)
class CostEstimate:
    mean: float
    std_err: float
    paths: int
    samples: np.ndarray = field(default=None, repr=False, compare=False)


CLOUD_BLOCK = 2048


def _chunks(n, workers):
    ids = np.arange(n)
    return np.array_split(ids, max(1, min(int(workers), n)))


def _map(fn, n, workers):
    parts = _chunks(n, workers)
    if len(parts) == 1:
        return [fn(parts[0])]
    with ThreadPoolExecutor(len(parts)) as ex:
        return list(ex.map(fn, parts))


def _guard(arr, what):
    # NaN fails the comparison, hence the negated form
    if not np.all(np.abs(arr) <= DIVERGENCE):
        raise SimulationDivergedError(f"{what} left the region |state| <= {DIVERGENCE:g}")


# --- coupled N + 1 particle system ---------------------------------------


def _nash_gains(sol: NashSolution, times):
    """Drift ``-(W X + w)`` of every player, as ``(G, g)`` per time."""
    q = sol.forms(times)
    out = []
    for k in range(len(times)):
        qk = QuadraticForm(q.M[k], q.l[k], q.c[k])
        major, minors = _own_affine(qk, sol.layout)
        W = np.concatenate([major.G, minors.G.reshape(-1, sol.layout.D)])
        w = np.concatenate([major.g, minors.g.ravel()])
        out.append((-W, -w))
    return out


def simulate_coupled_particles(
    nash_sol: NashSolution, X_init, cfg: SimConfig, workers=1, keep_noise=False, increments=None
) -> PathBundle:
    """Simulate the N+1 players using their Nash feedbacks ``-D_{x_i} u^{N,i}``.

    ``X_init`` is a stacked state shared by all paths or one per path.
    ``increments`` (``(paths, steps, D)`` Brownian increments) replaces the
    internal noise, e.g. to compare step sizes on a common Brownian path.
    """
    lay = nash_sol.layout
    T = nash_sol.spec.T
    n = cfg.steps(T)
    dt = T / n
    times = np.linspace(0.0, T, n + 1)
    X_init = np.asarray(X_init, dtype=float)
    if X_init.shape[-1] != lay.D:
        raise DimensionMismatchError(f"X_init must have length {lay.D}")
    P = cfg.paths
    X_init = np.broadcast_to(X_init, (P, lay.D))
    if increments is not None:
        increments = np.asarray(increments, dtype=float)
        if increments.shape != (P, n, lay.D):
            raise DimensionMismatchError(f"increments must have shape {(P, n, lay.D)}")
    gains = _nash_gains(nash_sol, times[:-1])
    kern = get_kernels()
    scale = math.sqrt(2.0 * dt)

    def run(ids):
        out = np.empty((ids.size, n + 1, lay.D))
        noise = np.empty((ids.size, n, lay.D)) if keep_noise else None
        X = np.ascontiguousarray(X_init[ids])
        out[:, 0] = X
        for k in range(n):
            G, g = gains[k]
            if increments is None:
                xi = rng.normals(cfg.seed, rng.PARTICLE, k, ids, lay.D)
                X = kern.affine_em_step(X, G, g, dt, scale, xi)
                if keep_noise:
                    noise[:, k] = math.sqrt(dt) * xi
            else:
                X = kern.affine_em_step(X, G, g, dt, math.sqrt(2.0), np.ascontiguousarray(increments[ids, k]))
            _guard(X, "coupled particle system")
            out[:, k + 1] = X
        return out, noise

    parts = _map(run, P, workers)
    X = np.concatenate([p[0] for p in parts])
    noise = np.concatenate([p[1] for p in parts]) if keep_noise else None
    return PathBundle("nash", times, {"X": X}, np.arange(P), noise)


# --- equilibrium flow ------------------------------------------------------


class _FlowGains:
    """Feedback gains of ``alpha_bar`` and ``alpha0_bar`` on the step grid and midpoints."""

    def __init__(self, master: MasterSolution, n):
        T = master.spec.T
        self.n = n
        self.h = T / n
        self.t = np.linspace(0.0, T, 2 * n + 1)  # t_k = k h / 2
        minor, major = feedback(master)
        G, g = minor.gains(self.t)
        d, d0 = master.spec.d, master.spec.d0
        self.Gx, self.G0, self.Gz = G[..., :d], G[..., d : d + d0], G[..., d + d0 :]
        self.g = g
        H, h0 = major.gains(self.t)
        self.H0, self.Hz = H[..., :d0], H[..., d0:]
        self.h0 = h0

    def alpha(self, j, x, x0, z):
        return x @ self.Gx[j].T + x0 @ self.G0[j].T + z @ self.Gz[j].T + self.g[j]

    def alpha0(self, j, x0, z):
        return x0 @ self.H0[j].T + z @ self.Hz[j].T + self.h0[j]

    def mean_step(self, k, z, x0):
        """RK4 step of ``dz/dt = alpha_bar(t, z, x0, z)`` with ``x0`` frozen."""
        h = self.h
        F = lambda j, zz: self.alpha(j, zz, x0, zz)
        k1 = F(2 * k, z)
        k2 = F(2 * k + 1, z + 0.5 * h * k1)
        k3 = F(2 * k + 1, z + 0.5 * h * k2)
        k4 = F(2 * k + 2, z + h * k3)
        return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _flow_paths(master, cfg, ids, gains, alpha0=None):
    """Major state and mean for the paths ``ids``; ``alpha0`` overrides the major feedback."""
    s = master.spec
    n, h = gains.n, gains.h
    scale = math.sqrt(2.0 * h)
    x0 = np.broadcast_to(cfg.x0(s.d0), (ids.size, s.d0)).copy()
    z = np.broadcast_to(cfg.mu0.mean(s.d), (ids.size, s.d)).copy()
    X0 = np.empty((ids.size, n + 1, s.d0))
    Z = np.empty((ids.size, n + 1, s.d))
    A0 = np.empty((ids.size, n, s.d0))
    X0[:, 0], Z[:, 0] = x0, z
    for k in range(n):
        if alpha0 is None:
            a0 = gains.alpha0(2 * k, x0, z)
        else:
            a0 = np.asarray(alpha0(k * h, x0, z), dtype=float)
        A0[:, k] = a0
        xi = rng.normals(cfg.seed, rng.MAJOR, k, ids, s.d0)
        z = gains.mean_step(k, z, x0)
        x0 = x0 + h * a0 + scale * xi
        _guard(x0, "major player")
        _guard(z, "population mean")
        X0[:, k + 1], Z[:, k + 1] = x0, z
    return X0, Z, A0


def simulate_equilibrium_flow(master: MasterSolution, cfg: SimConfig, workers=1) -> PathBundle:
    """Major trajectory and population mean under the equilibrium feedbacks.

    The mean follows the first moment of the Fokker-Planck equation,
    ``dz/dt = alpha_bar(t, z, X0_t, z)`` (RK4 per step, ``X0`` frozen),
    which is exact for affine feedbacks. With ``cfg.cloud_size > 0`` a
    particle cloud driven by independent noises is also simulated along
    major path ``0``; its empirical mean and standard deviation are recorded.
    """
    s = master.spec
    n = cfg.steps(s.T)
    gains = _FlowGains(master, n)
    times = np.linspace(0.0, s.T, n + 1)

    def run(ids):
        X0, Z, _ = _flow_paths(master, cfg, ids, gains)
        return X0, Z

    parts = _map(run, cfg.paths, workers)
    X0 = np.concatenate([p[0] for p in parts])
    Z = np.concatenate([p[1] for p in parts])
    states = {"x0": X0, "z": Z}
    if cfg.cloud_size:
        states.update(_cloud(master, cfg, gains, X0[0], Z[0], workers))
    return PathBundle("flow", times, states, np.arange(cfg.paths))


def _cloud(master, cfg, gains, x0_path, z_path, workers):
    s = master.spec
    n, h = gains.n, gains.h
    scale = math.sqrt(2.0 * h)

    def run(ids):
        Y = cfg.mu0.sample(cfg.seed, rng.CLOUD_INIT, ids, s.d)
        S1 = np.empty((n + 1, s.d))
        S2 = np.empty((n + 1, s.d))
        S1[0], S2[0] = Y.sum(axis=0), (Y * Y).sum(axis=0)
        for k in range(n):
            a = gains.alpha(2 * k, Y, x0_path[k], z_path[k])
            Y = Y + h * a + scale * rng.normals(cfg.seed, rng.CLOUD, k, ids, s.d)
            _guard(Y, "particle cloud")
            S1[k + 1], S2[k + 1] = Y.sum(axis=0), (Y * Y).sum(axis=0)
        return S1, S2

    # fixed-size blocks summed in block order keep the moments independent of `workers`
    blocks = [np.arange(i, min(i + CLOUD_BLOCK, cfg.cloud_size)) for i in range(0, cfg.cloud_size, CLOUD_BLOCK)]
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(min(int(workers), len(blocks))) as ex:
            parts = list(ex.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]
    S1, S2 = parts[0]
    for p in parts[1:]:
        S1, S2 = S1 + p[0], S2 + p[1]
    M = cfg.cloud_size
    mean = S1 / M
    var = np.maximum(S2 - M * mean * mean, 0.0) / max(M - 1, 1)
    return {"cloud_mean": mean, "cloud_std": np.sqrt(var)}


# --- Monte Carlo costs --------------------------------------------------------


def _estimate(samples):
    samples = np.asarray(samples, dtype=float)
    if not np.all(np.isfinite(samples)):
        raise NonFiniteCostError("non-finite path cost")
    M = samples.size
    se = float(samples.std(ddof=1) / math.sqrt(M)) if M > 1 else 0.0
    return CostEstimate(float(samples.mean()), se, M, samples)


def estimate_minor_cost(
    master: MasterSolution, alpha: Callable, cfg: SimConfig, workers=1, flow: PathBundle | None = None
) -> CostEstimate:
    """Monte Carlo ``J(alpha; alpha0_bar, m_bar)`` for a deviating minor player.

    The equilibrium flow ``(X0_bar, m_bar)`` is frozen: it is simulated once
    per path (or taken from ``flow``) and the deviating player's feedback
    ``alpha(t, x, x0, z)`` is evaluated against it.
    """
    s = master.spec
    n = cfg.steps(s.T)
    h = s.T / n
    scale = math.sqrt(2.0 * h)
    if flow is None:
        flow = simulate_equilibrium_flow(master, cfg.replace(cloud_size=0), workers)
    X0, Z = flow.states["x0"], flow.states["z"]
    if X0.shape[0] != cfg.paths or X0.shape[1] != n + 1:
        raise DimensionMismatchError("flow does not match the simulation configuration")

    def run(ids):
        x = cfg.mu0.sample(cfg.seed, rng.INIT, ids, s.d)
        cost = np.zeros(ids.size)
        for k in range(n):
            x0, z = X0[ids, k], Z[ids, k]
            a = np.asarray(alpha(k * h, x, x0, z), dtype=float)
            cost = cost + h * lq.eval_L(s, x, x0, a, z)
            x = x + h * a + scale * rng.normals(cfg.seed, rng.MINOR, k, ids, s.d)
            _guard(x, "minor player")
        return cost + lq.eval_G(s, x, X0[ids, n], Z[ids, n])

    return _estimate(np.concatenate(_map(run, cfg.paths, workers)))


def estimate_major_cost(master: MasterSolution, alpha0: Callable, cfg: SimConfig, workers=1) -> CostEstimate:
    """Monte Carlo ``J0(alpha_bar; alpha0)``: the population reacts to the major's deviation."""
    s = master.spec
    n = cfg.steps(s.T)
    h = s.T / n
    gains = _FlowGains(master, n)

    def run(ids):
        X0, Z, A0 = _flow_paths(master, cfg, ids, gains, alpha0=alpha0)
        cost = np.zeros(ids.size)
        for k in range(n):
            cost = cost + h * lq.eval_L0(s, X0[:, k], A0[:, k], Z[:, k])
        return cost + lq.eval_G0(s, X0[:, n], Z[:, n])

    return _estimate(np.concatenate(_map(run, cfg.paths, workers)))


@dataclass(frozen=True)
class DeviationReport:
    side: str
    eps: np.ndarray
    cost: np.ndarray
    std_err: np.ndarray
    # paired (common random numbers) differences to the eps = 0 entry
    diff: np.ndarray
    diff_std_err: np.ndarray
    fit: np.ndarray  # (c0, c1, c2) of c0 + c1 eps + c2 eps^2
    curvature: float  # second derivative 2 c2
    argmin: float

    def to_dict(self):
        return {
            "side": self.side,
            "eps": self.eps.tolist(),
            "cost": self.cost.tolist(),
            "std_err": self.std_err.tolist(),
            "diff": self.diff.tolist(),
            "diff_std_err": self.diff_std_err.tolist(),
            "fit": self.fit.tolist(),
            "curvature": self.curvature,
            "argmin": self.argmin,
        }


def deviation_test(master: MasterSolution, g: Callable, eps_list, cfg: SimConfig, side="minor", workers=1):
    """Unilateral feedback perturbations ``alpha_bar + eps g`` with common random numbers.

    ``g(t, x, x0, z)`` (minor side) or ``g(t, x0, z)`` (major side) is a
    bounded direction. All ``eps`` share the same seeds so the cost
    differences are estimated with low variance; a quadratic in ``eps`` is
    fitted to the costs.
    """
    eps = np.asarray(sorted(set(float(e) for e in eps_list)))
    if 0.0 not in eps:
        raise ValueError("eps_list must contain 0")
    if side not in ("minor", "major"):
        raise ValueError("side must be 'minor' or 'major'")
    a_bar, a0_bar = feedback(master)
    flow = simulate_equilibrium_flow(master, cfg.replace(cloud_size=0), workers) if side == "minor" else None
    ests = []
    for e in eps:
        if side == "minor":
            alpha = a_bar if e == 0.0 else (lambda t, x, x0, z, e=e: a_bar(t, x, x0, z) + e * np.asarray(g(t, x, x0, z)))
            ests.append(estimate_minor_cost(master, alpha, cfg, workers, flow=flow))
        else:
            alpha0 = a0_bar if e == 0.0 else (lambda t, x0, z, e=e: a0_bar(t, x0, z) + e * np.asarray(g(t, x0, z)))
            ests.append(estimate_major_cost(master, alpha0, cfg, workers))
    base = ests[int(np.flatnonzero(eps == 0.0)[0])]
    cost = np.array([c.mean for c in ests])
    se = np.array([c.std_err for c in ests])
    d = np.array([c.samples - base.samples for c in ests])
    diff = d.mean(axis=1)
    dse = d.std(axis=1, ddof=1) / math.sqrt(d.shape[1]) if d.shape[1] > 1 else np.zeros(len(eps))
    if len(eps) >= 3:
        c2, c1, c0 = np.polyfit(eps, cost, 2)
        curv = 2.0 * c2
        argmin = -c1 / (2.0 * c2) if c2 != 0 else 0.0
    else:
        c2 = c1 = 0.0
        c0 = base.mean
        curv, argmin = 0.0, 0.0
    return DeviationReport(side, eps, cost, se, diff, dse, np.array([c0, c1, c2]), float(curv), float(argmin))


def expected_equilibrium_costs(master: MasterSolution, cfg: SimConfig):
    """Exact ``E_{mu0}[U(0, X, x0_init, mean mu0)]`` and ``U0(0, x0_init, mean mu0)``.

    ``U(0, ., x0, z)`` is quadratic in ``x``, so its mean under ``mu0`` only
    needs the first two moments.
    """
    s = master.spec
    z = cfg.mu0.mean(s.d)
    x0 = cfg.x0(s.d0)
    U0, U = master.forms(0.0)
    ix = master.layout.ix
    at_mean = U(np.concatenate([z, x0, z]))
    spread = 0.5 * float(np.sum(np.diag(U.M[np.ix_(ix, ix)]) * cfg.mu0.variance(s.d)))
    return float(at_mean) + spread, float(U0(np.concatenate([x0, z])))
