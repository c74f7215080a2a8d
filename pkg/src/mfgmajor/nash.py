"""Finite-N Nash system with one major player, and its master projection.

Every value function ``u^{N,i}`` is a quadratic form in the stacked state
``X = (x0, x1, ..., xN)`` of length ``D = d0 + N d``. With ``D_p H = p`` the
Nash system for player ``i`` (``i = 0`` is the major player) reads

    -du^i/dt - sum_j lap_{x_j} u^i + 1/2 |D_{x_i} u^i|^2 - f_i(X)
        + sum_{j != i} D_{x_j} u^i . D_{x_j} u^j = 0,

where ``f_0 = f0(x0, mean m^N)`` and ``f_i = f(x_i, x0, mean m^{N,i})``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lq_model as lq
from ._flow import CoefficientPath, rk4_backward
from .errors import DimensionMismatchError, IndexRangeError, PopulationError
from .lq_model import LqSpec
from .master import MasterSolution
from .measures import EmpiricalMeasure
from .quadratic import Affine, QuadraticForm, selector

__all__ = [
    "NashSolution",
    "NashEval",
    "solve_nash",
    "eval_nash",
    "nash_residual",
    "nash_lhs",
    "project_master",
    "projection_identity_check",
]


class StackLayout:
    """Block structure of the stacked state for ``N`` minor players."""

    def __init__(self, d, d0, N):
        if N < 1:
            raise PopulationError("need at least one minor player")
        self.d, self.d0, self.N = d, d0, N
        self.D = d0 + N * d
        self.blocks = [np.arange(d0)] + [d0 + (j - 1) * d + np.arange(d) for j in range(1, N + 1)]
        self.minor_idx = np.array(self.blocks[1:])  # (N, d)

    def sel(self, j):
        return selector(self.blocks[j], self.D)

    def mean_all(self):
        """Linear map ``X -> mean m^N_X``."""
        return sum(self.sel(j) for j in range(1, self.N + 1)) / self.N

    def mean_without(self, i):
        """Linear map ``X -> mean m^{N,i}_X``."""
        return sum(self.sel(j) for j in range(1, self.N + 1) if j != i) / (self.N - 1)

    def split(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.D:
            raise DimensionMismatchError(f"stacked state must have length {self.D}, got {X.shape[-1]}")
        return X[..., : self.d0], X[..., self.d0 :].reshape(X.shape[:-1] + (self.N, self.d))

    def stack(self, x0, minors):
        minors = np.asarray(minors, dtype=float)
        return np.concatenate([np.asarray(x0, dtype=float), minors.reshape(minors.shape[:-2] + (-1,))], axis=-1)

    def sizes(self):
        P, D = self.N + 1, self.D
        return [P * D * D, P * D, P]

    def pack(self, q: QuadraticForm):
        return np.concatenate([q.M.ravel(), q.l.ravel(), np.ravel(q.c)])

    def unpack(self, v):
        v = np.asarray(v)
        P, D = self.N + 1, self.D
        lead = v.shape[:-1]
        a, b, _ = np.split(v, np.cumsum(self.sizes())[:-1], axis=-1)
        c = v[..., -P:]
        return QuadraticForm(a.reshape(lead + (P, D, D)), b.reshape(lead + (P, D)), c)


def _stack_forms(forms):
    return QuadraticForm(
        np.stack([q.M for q in forms]), np.stack([q.l for q in forms]), np.array([q.c for q in forms])
    )


def _cost_forms(spec: LqSpec, lay: StackLayout, terminal: bool):
    Sx0 = lay.sel(0)
    if terminal:
        forms = [spec.major_terminal_form(Sx0, lay.mean_all())]
        forms += [spec.minor_terminal_form(lay.sel(i), Sx0, lay.mean_without(i)) for i in range(1, lay.N + 1)]
    else:
        forms = [spec.major_running_form(Sx0, lay.mean_all())]
        forms += [spec.minor_running_form(lay.sel(i), Sx0, lay.mean_without(i)) for i in range(1, lay.N + 1)]
    return _stack_forms(forms)


def _own_affine(q: QuadraticForm, lay: StackLayout):
    """Own-state gradients ``D_{x_i} u^i``: major ``(d0, D)``, minors ``(N, d, D)``."""
    major = Affine(q.M[0, lay.blocks[0], :], q.l[0, lay.blocks[0]])
    players = np.arange(1, lay.N + 1)[:, None]
    minors = Affine(q.M[players, lay.minor_idx, :], q.l[players, lay.minor_idx])
    return major, minors


def _make_rhs(spec, lay):
    f = _cost_forms(spec, lay, terminal=False)
    P, D, N, d, d0 = lay.N + 1, lay.D, lay.N, lay.d, lay.d0
    nM, nl = P * D * D, P * D
    # row r of the feedback matrix W is the own-gradient row of the player owning coordinate r
    owner = np.concatenate([np.zeros(d0, dtype=int), np.repeat(np.arange(1, P), d)])
    rows = np.arange(D)

    def rhs(v):
        M = v[:nM].reshape(P, D, D)
        l = v[nM : nM + nl].reshape(P, D)
        # row block j of W is D_{x_j} u^j as a map of X
        W = M[owner, rows, :]
        w = l[owner, rows]
        MW = M @ W
        dM = MW + np.swapaxes(MW, -1, -2)
        dl = M @ w + l @ W
        dc = l @ w
        W0, Wm = W[:d0], W[d0:].reshape(N, d, D)
        w0, wm = w[:d0], w[d0:].reshape(N, d)
        dM[0] -= W0.T @ W0
        dM[1:] -= np.swapaxes(Wm, -1, -2) @ Wm
        dl[0] -= w0 @ W0
        dl[1:] -= np.einsum("nk,nkd->nd", wm, Wm)
        dc[0] -= 0.5 * (w0 @ w0)
        dc[1:] -= 0.5 * np.sum(wm * wm, axis=-1)
        dM -= f.M
        dM = 0.5 * (dM + np.swapaxes(dM, -1, -2))
        dl -= f.l
        dc -= f.c + np.trace(M, axis1=-2, axis2=-1)
        return np.concatenate([dM.ravel(), dl.ravel(), dc])

    return rhs


@dataclass(frozen=True, eq=False)
class NashSolution:
    spec: LqSpec
    N: int
    nt: int
    path: CoefficientPath
    layout: StackLayout

    @property
    def times(self):
        return self.path.times

    def forms(self, t) -> QuadraticForm:
        """Batched quadratic forms of all ``N + 1`` value functions at ``t``."""
        return self.layout.unpack(self.path.value(t))

    def derivative_forms(self, t) -> QuadraticForm:
        return self.layout.unpack(self.path.derivative(t))

    def to_json(self):
        q = self.layout.unpack(self.path.C)
        dq = self.layout.unpack(self.path.dC)
        return {
            "kind": "nash",
            "spec": self.spec.to_dict(),
            "N": self.N,
            "nt": self.nt,
            "times": self.path.times.tolist(),
            "K": q.M.tolist(),
            "k": q.l.tolist(),
            "kappa": np.asarray(q.c).tolist(),
            "dK": dq.M.tolist(),
            "dk": dq.l.tolist(),
            "dkappa": np.asarray(dq.c).tolist(),
        }

    @classmethod
    def from_json(cls, doc):
        spec = LqSpec(**doc["spec"])
        N = int(doc["N"])
        lay = StackLayout(spec.d, spec.d0, N)
        C = np.concatenate(
            [np.array(doc["K"]).reshape(len(doc["times"]), -1), np.array(doc["k"]).reshape(len(doc["times"]), -1),
             np.array(doc["kappa"])],
            axis=-1,
        )
        dC = np.concatenate(
            [np.array(doc["dK"]).reshape(len(doc["times"]), -1), np.array(doc["dk"]).reshape(len(doc["times"]), -1),
             np.array(doc["dkappa"])],
            axis=-1,
        )
        return cls(spec, N, int(doc["nt"]), CoefficientPath(doc["times"], C, dC), lay)


def solve_nash(spec: LqSpec, N, nt=2000, save_every=1) -> NashSolution:
    """Solve the N+1 player Nash system jointly by backward RK4.

    ``save_every`` thins the stored time grid (it must divide ``nt``); with
    ``save_every = nt`` only ``t = 0`` and ``t = T`` are kept, which is what
    large-``N`` sweeps need.
    """
    if N < 2:
        raise PopulationError(f"the Nash system needs N >= 2 minor players, got {N}")
    lay = StackLayout(spec.d, spec.d0, N)
    G = _cost_forms(spec, lay, terminal=True)
    times, C, dC = rk4_backward(_make_rhs(spec, lay), lay.pack(G), spec.T, nt, save_every=save_every)
    return NashSolution(spec, N, nt, CoefficientPath(times, C, dC), lay)


@dataclass(frozen=True)
class NashEval:
    value: np.ndarray
    gradient: np.ndarray

    def block(self, lay: StackLayout, j):
        return self.gradient[..., lay.blocks[j]]

    def blocks(self, lay: StackLayout):
        return [self.block(lay, j) for j in range(lay.N + 1)]


def eval_nash(sol: NashSolution, i, t, X) -> NashEval:
    if not 0 <= i <= sol.N:
        raise IndexRangeError(f"player index must be in 0..{sol.N}, got {i}")
    X = np.asarray(X, dtype=float)
    sol.layout.split(X)
    q = sol.forms(float(t))
    qi = QuadraticForm(q.M[i], q.l[i], q.c[i])
    return NashEval(qi(X), qi.gradient()(X))


def nash_lhs(spec: LqSpec, lay: StackLayout, i, X, dt_u, lap_u, grads):
    """Left-hand side of Nash equation ``i`` from pointwise ingredients.

    ``dt_u`` and ``lap_u`` are ``du^i/dt`` and ``sum_j lap_{x_j} u^i`` at
    ``X``; ``grads[..., j, :]`` is the full stacked gradient of ``u^j``.
    """
    x0, minors = lay.split(X)
    gi = grads[..., i, :]
    own = gi[..., lay.blocks[i]]
    cross = 0.0
    for j in range(lay.N + 1):
        if j != i:
            b = lay.blocks[j]
            cross = cross + np.sum(gi[..., b] * grads[..., j, b], axis=-1)
    if i == 0:
        cost = lq.eval_f0(spec, x0, minors.mean(axis=-2))
    else:
        others = (minors.sum(axis=-2) - minors[..., i - 1, :]) / (lay.N - 1)
        cost = lq.eval_f(spec, minors[..., i - 1, :], x0, others)
    return -dt_u - lap_u + 0.5 * np.sum(own * own, axis=-1) - cost + cross


def nash_residual(sol: NashSolution, i, t, X):
    """Pointwise residual of Nash equation ``i`` for the stored solution."""
    if not 0 <= i <= sol.N:
        raise IndexRangeError(f"player index must be in 0..{sol.N}, got {i}")
    X = np.asarray(X, dtype=float)
    lay = sol.layout
    lay.split(X)
    q = sol.forms(float(t))
    dq = sol.derivative_forms(float(t))
    grads = q.gradient()(X[..., None, :])
    dqi = QuadraticForm(dq.M[i], dq.l[i], dq.c[i])
    lap = np.trace(q.M[i])
    return nash_lhs(sol.spec, lay, i, X, dqi(X), lap, grads)


# --- projection of the master solution -----------------------------------


def _projection_maps(master: MasterSolution, lay: StackLayout):
    """Affine maps ``X -> (x0, z)`` and ``X -> (x_i, x0, z_i)`` for each minor."""
    Sx0 = lay.sel(0)
    to_major = Affine(np.vstack([Sx0, lay.mean_all()]), np.zeros(master.layout.n0))
    to_minor = Affine(
        np.stack([np.vstack([lay.sel(i), Sx0, lay.mean_without(i)]) for i in range(1, lay.N + 1)]),
        np.zeros((lay.N, master.layout.n)),
    )
    return to_major, to_minor


def projected_forms(master: MasterSolution, N, t):
    """``v^{N,i}`` and ``dv^{N,i}/dt`` as batched quadratic forms in ``X``."""
    lay = StackLayout(master.spec.d, master.spec.d0, N)
    to_major, to_minor = _projection_maps(master, lay)
    U0, U = master.forms(float(t))
    dU0, dU = master.derivative_forms(float(t))
    v = _stack_forms([U0.compose(to_major)] + _unbatch(U.compose(to_minor)))
    dv = _stack_forms([dU0.compose(to_major)] + _unbatch(dU.compose(to_minor)))
    return lay, v, dv


def _unbatch(q):
    return [QuadraticForm(q.M[k], q.l[k], q.c[k]) for k in range(q.M.shape[0])]


@dataclass(frozen=True)
class MasterProjection:
    values: np.ndarray  # (..., N + 1)
    residuals: np.ndarray  # (..., N + 1)


def project_master(master: MasterSolution, N, t, X, method="analytic", h=1e-4) -> MasterProjection:
    """Nash-system residuals generated by the projected master solution.

    ``v^{N,0}(t, X) = U0(t, x0, m^N_X)`` and
    ``v^{N,i}(t, X) = U(t, x_i, x0, m^{N,i}_X)``. With ``method="analytic"``
    gradients and Laplacians come from the measure-derivative identities
    (``z``-gradients scaled by ``1/N`` or ``1/(N-1)``); ``method="fd"``
    differentiates the ``v^{N,i}`` numerically in the stacked variable.
    """
    from .master import eval_master

    if N < 2:
        raise PopulationError("the projection needs N >= 2")
    lay = StackLayout(master.spec.d, master.spec.d0, N)
    X = np.asarray(X, dtype=float)
    x0, minors = lay.split(X)
    z = minors.mean(axis=-2)
    P = N + 1
    lead = X.shape[:-1]
    values = np.empty(lead + (P,))
    dt_v = np.empty(lead + (P,))
    lap = np.empty(lead + (P,))
    grads = np.zeros(lead + (P, lay.D))
    U0f, Uf = master.forms(float(t))
    dU0f, dUf = master.derivative_forms(float(t))
    L = master.layout

    if method == "analytic":
        ev0 = eval_master(master, t, z, x0, z)
        values[..., 0] = ev0.U0
        dt_v[..., 0] = dU0f(np.concatenate([x0, z], axis=-1))
        PV = U0f.M
        lap[..., 0] = np.trace(PV[np.ix_(L.i0_x0, L.i0_x0)]) + np.trace(PV[np.ix_(L.i0_z, L.i0_z)]) / N
        grads[..., 0, lay.blocks[0]] = ev0.Dx0U0
        for j in range(1, P):
            grads[..., 0, lay.blocks[j]] = ev0.DzU0 / N
        K = Uf.M
        lap_minor = (
            np.trace(K[np.ix_(L.ix, L.ix)])
            + np.trace(K[np.ix_(L.ix0, L.ix0)])
            + np.trace(K[np.ix_(L.iz, L.iz)]) / (N - 1)
        )
        for i in range(1, P):
            xi = minors[..., i - 1, :]
            zi = (N * z - xi) / (N - 1)
            ev = eval_master(master, t, xi, x0, zi)
            values[..., i] = ev.U
            dt_v[..., i] = dUf(np.concatenate([xi, x0, zi], axis=-1))
            lap[..., i] = lap_minor
            grads[..., i, lay.blocks[0]] = ev.Dx0U
            for j in range(1, P):
                grads[..., i, lay.blocks[j]] = ev.DxU if j == i else ev.DzU / (N - 1)
    elif method == "fd":
        _, v, dv = projected_forms(master, N, t)
        values[...] = v(X[..., None, :])
        dt_v[...] = dv(X[..., None, :])
        v0 = _eval_ld(v, X)
        lap_ld = np.zeros(v0.shape, dtype=np.longdouble)
        for a in range(lay.D):
            e = np.zeros(lay.D)
            e[a] = h
            vp, vm = _eval_ld(v, X + e), _eval_ld(v, X - e)
            grads[..., :, a] = ((vp - vm) / (2 * h)).astype(float)
            lap_ld += (vp - 2 * v0 + vm) / (h * h)
        lap[...] = lap_ld.astype(float)
    else:
        raise ValueError(f"unknown method {method!r}")

    res = np.stack([nash_lhs(master.spec, lay, i, X, dt_v[..., i], lap[..., i], grads) for i in range(P)], axis=-1)
    return MasterProjection(values, res)


def _eval_ld(q: QuadraticForm, X):
    """Evaluate batched forms at ``X`` in extended precision (finite-difference oracle)."""
    M = q.M.astype(np.longdouble)
    l = q.l.astype(np.longdouble)
    c = np.asarray(q.c, dtype=np.longdouble)
    v = np.asarray(X, dtype=np.longdouble)[..., None, :]
    Mv = np.einsum("...ij,...j->...i", M, v)
    return 0.5 * np.sum(v * Mv, axis=-1) + np.sum(l * v, axis=-1) + c


def _relerr(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = np.max(np.abs(b), initial=0.0)
    diff = np.max(np.abs(a - b), initial=0.0)
    if scale == 0.0:
        return diff
    return diff / scale


def projection_identity_check(master: MasterSolution, N, t, X, h=1e-4):
    """Finite-difference check of the derivative relations for ``v^{N,i}``.

    First derivatives of the projected functions are compared with the
    ``1/N``-scaled (``1/(N-1)`` for minors) L-derivatives, second
    derivatives with the ``1/N^2`` (``1/(N-1)^2``) scaled ``D_zz`` blocks.

    Returns a dict ``name -> max relative error`` plus ``"exact_Dx0_v0"``,
    the absolute error of the unscaled ``D_x0`` relation computed through
    the composed quadratic form.
    """
    from .master import eval_master

    if N < 2:
        raise PopulationError("the projection needs N >= 2")
    if h <= 0:
        raise ValueError("h must be positive")
    lay, v, _ = projected_forms(master, N, t)
    X = np.asarray(X, dtype=float).reshape(-1)
    x0, minors = lay.split(X)
    z = minors.mean(axis=0)
    U0f, Uf = master.forms(float(t))
    L = master.layout

    def fd_grad(k, a):
        e = np.zeros(lay.D)
        e[a] = h
        return float((_eval_ld(v, X + e)[k] - _eval_ld(v, X - e)[k]) / (2 * h))

    def fd_hess(k, a, b):
        ea = np.zeros(lay.D)
        eb = np.zeros(lay.D)
        ea[a] = h
        eb[b] = h
        f = lambda Y: _eval_ld(v, Y)[k]
        return float((f(X + ea + eb) - f(X + ea - eb) - f(X - ea + eb) + f(X - ea - eb)) / (4 * h * h))

    def block_grad(k, j):
        return np.array([fd_grad(k, a) for a in lay.blocks[j]])

    def block_hess(k, i, j):
        return np.array([[fd_hess(k, a, b) for b in lay.blocks[j]] for a in lay.blocks[i]])

    report = {}
    ev0 = eval_master(master, t, z, x0, z)
    m = EmpiricalMeasure(minors)
    D0 = lambda zz: eval_master(master, t, zz, x0, zz).DzU0.reshape(-1)
    dm0 = lq.lderivative_mean_functional(D0, m, minors)
    Pzz = U0f.M[np.ix_(L.i0_z, L.i0_z)]
    check = sorted({1, 2, N})

    report["Dx0_v0"] = _relerr(block_grad(0, 0), ev0.Dx0U0.reshape(-1))
    report["Dxi_v0"] = _relerr([block_grad(0, j) for j in check], [dm0.lderiv[j - 1] / N for j in check])
    off = [(i, j) for i in check for j in check if i != j]
    report["Dxixj_v0"] = _relerr([block_hess(0, i, j) for i, j in off], [Pzz / N**2 for _ in off])
    # D_y D_m U0 vanishes under the closure
    report["Dxixi_v0"] = _relerr([block_hess(0, i, i) for i in check], [Pzz / N**2 + 0.0 for _ in check])

    Kzz = Uf.M[np.ix_(L.iz, L.iz)]
    g_x0, g_own, g_other, h_other, h_same = [], [], [], [], []
    r_x0, r_own, r_other, s_other, s_same = [], [], [], [], []
    for i in check:
        xi = minors[i - 1]
        zi = (N * z - xi) / (N - 1)
        ev = eval_master(master, t, xi, x0, zi)
        mi = EmpiricalMeasure(np.delete(minors, i - 1, axis=0))
        Dz = lambda zz: eval_master(master, t, xi, x0, zz).DzU.reshape(-1)
        others = [j for j in check if j != i]
        dmi = lq.lderivative_mean_functional(Dz, mi, np.array([minors[j - 1] for j in others]))
        g_x0.append(block_grad(i, 0))
        r_x0.append(ev.Dx0U.reshape(-1))
        g_own.append(block_grad(i, i))
        r_own.append(ev.DxU.reshape(-1))
        for j, lj in zip(others, dmi.lderiv):
            g_other.append(block_grad(i, j))
            r_other.append(lj / (N - 1))
            h_same.append(block_hess(i, j, j))
            s_same.append(Kzz / (N - 1) ** 2)
            for k in others:
                if k != j:
                    h_other.append(block_hess(i, j, k))
                    s_other.append(Kzz / (N - 1) ** 2)
    report["Dx0_vi"] = _relerr(g_x0, r_x0)
    report["Dxi_vi"] = _relerr(g_own, r_own)
    report["Dxj_vi"] = _relerr(g_other, r_other)
    if h_other:
        report["Dxjxk_vi"] = _relerr(h_other, s_other)
    report["Dxjxj_vi"] = _relerr(h_same, s_same)
    exact = v.gradient()(X)[0, lay.blocks[0]]
    report["exact_Dx0_v0"] = float(np.max(np.abs(exact - ev0.Dx0U0.reshape(-1))))
    return report
