"""Master equations of the major/minor game under the mean-field closure.

With costs depending on the population through its mean ``z`` only, the
value functions ``U0(t, x0, z)`` and ``U(t, x, x0, z)`` are quadratic and
the measure-derivative terms reduce to ``z``-gradients; the
``div_y D_m U`` integrals vanish identically. The reduced system is

    -dU0/dt - lap_x0 U0 + 1/2 |D_x0 U0|^2 - f0 + D_z U0 . D_x U(t, z, x0, z) = 0
    -dU/dt - lap_x U - lap_x0 U + 1/2 |D_x U|^2 - f
        + D_x0 U . D_x0 U0 + D_z U . D_x U(t, z, x0, z) = 0

with ``U0(T) = G0`` and ``U(T) = G``. ``D_x U`` is affine in its first
argument, so averaging it against a measure with mean ``z`` is the same as
evaluating it at ``z``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lq_model as lq
from ._flow import CoefficientPath, compile_quadratic, rk4_backward
from .errors import DimensionMismatchError
from .quadratic import Affine, QuadraticForm, selector

__all__ = [
    "MasterSolution",
    "MasterEval",
    "solve_master",
    "eval_master",
    "master_residual",
    "feedback",
]


class _Layout:
    """Index bookkeeping for ``w0 = (x0, z)`` and ``w = (x, x0, z)``."""

    def __init__(self, d, d0):
        self.d, self.d0 = d, d0
        self.n0 = d0 + d
        self.n = 2 * d + d0
        self.i0_x0 = np.arange(d0)
        self.i0_z = np.arange(d0, d0 + d)
        self.ix = np.arange(d)
        self.ix0 = np.arange(d, d + d0)
        self.iz = np.arange(d + d0, 2 * d + d0)
        # w0 -> w with x := z
        self.sub = Affine(
            np.vstack([selector(self.i0_z, self.n0), selector(self.i0_x0, self.n0), selector(self.i0_z, self.n0)]),
            np.zeros(self.n),
        )
        # w -> w0
        self.proj = Affine(np.vstack([selector(self.ix0, self.n), selector(self.iz, self.n)]), np.zeros(self.n0))
        n0, n = self.n0, self.n
        self.sizes = [n0 * n0, n0, 1, n * n, n, 1]

    def pack(self, U0: QuadraticForm, U: QuadraticForm):
        return np.concatenate(
            [
                np.reshape(U0.M, U0.M.shape[:-2] + (-1,)),
                U0.l,
                np.reshape(U0.c, np.shape(U0.c) + (1,)),
                np.reshape(U.M, U.M.shape[:-2] + (-1,)),
                U.l,
                np.reshape(U.c, np.shape(U.c) + (1,)),
            ],
            axis=-1,
        )

    def unpack(self, v):
        v = np.asarray(v)
        parts = np.split(v, np.cumsum(self.sizes)[:-1], axis=-1)
        lead = v.shape[:-1]
        U0 = QuadraticForm(parts[0].reshape(lead + (self.n0, self.n0)), parts[1], parts[2][..., 0])
        U = QuadraticForm(parts[3].reshape(lead + (self.n, self.n)), parts[4], parts[5][..., 0])
        return U0, U


def _terminal_forms(spec: lq.LqSpec, lay: _Layout):
    G0 = spec.major_terminal_form(selector(lay.i0_x0, lay.n0), selector(lay.i0_z, lay.n0))
    G = spec.minor_terminal_form(selector(lay.ix, lay.n), selector(lay.ix0, lay.n), selector(lay.iz, lay.n))
    return G0, G


def _running_forms(spec: lq.LqSpec, lay: _Layout):
    f0 = spec.major_running_form(selector(lay.i0_x0, lay.n0), selector(lay.i0_z, lay.n0))
    f = spec.minor_running_form(selector(lay.ix, lay.n), selector(lay.ix0, lay.n), selector(lay.iz, lay.n))
    return f0, f


def _make_rhs(spec, lay):
    f0, f = _running_forms(spec, lay)

    def rhs(v):
        U0, U = lay.unpack(v)
        DxU = U.gradient().rows(lay.ix)
        DxU_at_mean = DxU.compose(lay.sub)
        Dx0U0 = U0.gradient().rows(lay.i0_x0)
        DzU0 = U0.gradient().rows(lay.i0_z)
        dU0 = Dx0U0.half_square() - f0 + DzU0.dot(DxU_at_mean) - U0.laplacian(lay.i0_x0)
        dU = (
            DxU.half_square()
            - f
            + U.gradient().rows(lay.ix0).dot(Dx0U0.compose(lay.proj))
            + U.gradient().rows(lay.iz).dot(DxU_at_mean.compose(lay.proj))
            - U.laplacian(lay.ix)
            - U.laplacian(lay.ix0)
        )
        return lay.pack(dU0.symmetrized(), dU.symmetrized())

    return rhs


@dataclass(frozen=True, eq=False)
class MasterSolution:
    spec: lq.LqSpec
    nt: int
    path: CoefficientPath
    layout: _Layout

    @property
    def times(self):
        return self.path.times

    def forms(self, t):
        """``(U0, U)`` quadratic forms at time(s) ``t``."""
        return self.layout.unpack(self.path.value(t))

    def derivative_forms(self, t):
        return self.layout.unpack(self.path.derivative(t))

    def blocks(self, t):
        """Named coefficient blocks of ``U0`` and ``U`` at a single time."""
        U0, U = self.forms(t)
        L = self.layout
        b = lambda M, r, c: M[np.ix_(r, c)]
        return {
            "P00": b(U0.M, L.i0_x0, L.i0_x0),
            "P0z": b(U0.M, L.i0_x0, L.i0_z),
            "Pzz": b(U0.M, L.i0_z, L.i0_z),
            "p0": U0.l[L.i0_x0],
            "pz": U0.l[L.i0_z],
            "pc": float(U0.c),
            "Kxx": b(U.M, L.ix, L.ix),
            "Kx0": b(U.M, L.ix, L.ix0),
            "Kxz": b(U.M, L.ix, L.iz),
            "K00": b(U.M, L.ix0, L.ix0),
            "K0z": b(U.M, L.ix0, L.iz),
            "Kzz": b(U.M, L.iz, L.iz),
            "kx": U.l[L.ix],
            "k0": U.l[L.ix0],
            "kz": U.l[L.iz],
            "kc": float(U.c),
        }

    def to_json(self):
        U0, U = self.layout.unpack(self.path.C)
        dU0, dU = self.layout.unpack(self.path.dC)
        enc = lambda q: {"M": q.M.tolist(), "l": q.l.tolist(), "c": np.asarray(q.c).tolist()}
        return {
            "kind": "master",
            "spec": self.spec.to_dict(),
            "nt": self.nt,
            "times": self.path.times.tolist(),
            "U0": enc(U0),
            "U": enc(U),
            "dU0": enc(dU0),
            "dU": enc(dU),
        }

    @classmethod
    def from_json(cls, doc):
        spec = lq.LqSpec(**doc["spec"])
        lay = _Layout(spec.d, spec.d0)
        dec = lambda q: QuadraticForm(np.array(q["M"]), np.array(q["l"]), np.array(q["c"]))
        C = lay.pack(dec(doc["U0"]), dec(doc["U"]))
        dC = lay.pack(dec(doc["dU0"]), dec(doc["dU"]))
        return cls(spec, int(doc["nt"]), CoefficientPath(doc["times"], C, dC), lay)


def solve_master(spec: lq.LqSpec, nt=2000) -> MasterSolution:
    """Solve the closed master system by quadratic ansatz and backward RK4."""
    lay = _Layout(spec.d, spec.d0)
    G0, G = _terminal_forms(spec, lay)
    c_T = lay.pack(G0, G)
    times, C, dC = rk4_backward(compile_quadratic(_make_rhs(spec, lay), c_T.size), c_T, spec.T, nt)
    return MasterSolution(spec, nt, CoefficientPath(times, C, dC), lay)


@dataclass(frozen=True)
class MasterEval:
    U: float
    U0: float
    DxU: np.ndarray
    Dx0U: np.ndarray
    DzU: np.ndarray
    Dx0U0: np.ndarray
    DzU0: np.ndarray
    hess_U: np.ndarray
    hess_U0: np.ndarray


def _points(sol, x, x0, z):
    s = sol.spec
    x, x0, z = (np.asarray(v, dtype=float) for v in (x, x0, z))
    x, x0, z = (v[None] if v.ndim == 0 else v for v in (x, x0, z))
    for v, n, name in ((x, s.d, "x"), (x0, s.d0, "x0"), (z, s.d, "z")):
        if v.shape[-1] != n:
            raise DimensionMismatchError(f"{name} must have trailing dimension {n}")
    return x, x0, z


def eval_master(sol: MasterSolution, t, x, x0, z) -> MasterEval:
    """Values, gradients and Hessians of ``U`` and ``U0`` at one time."""
    x, x0, z = _points(sol, x, x0, z)
    U0, U = sol.forms(float(t))
    L = sol.layout
    x, x0, z = _bcast(x, x0, z)
    w0 = np.concatenate([x0, z], axis=-1)
    w = np.concatenate([x, x0, z], axis=-1)
    g0 = U0.gradient()(w0)
    g = U.gradient()(w)
    return MasterEval(
        U=U(w),
        U0=U0(w0),
        DxU=g[..., L.ix],
        Dx0U=g[..., L.ix0],
        DzU=g[..., L.iz],
        Dx0U0=g0[..., L.i0_x0],
        DzU0=g0[..., L.i0_z],
        hess_U=U.M,
        hess_U0=U0.M,
    )


def _bcast(x, x0, z):
    lead = np.broadcast_shapes(x.shape[:-1], x0.shape[:-1], z.shape[:-1])
    return (np.broadcast_to(v, lead + v.shape[-1:]) for v in (x, x0, z))


def master_residual(sol: MasterSolution, t, x, x0, z):
    """Pointwise left-hand sides ``(r_i, r_ii)`` of the reduced master system.

    Gradients come from the interpolated quadratic forms and the time
    derivative from the interpolated stored right-hand sides, so the result
    measures how well the stored coefficients satisfy the PDE at ``t``.
    """
    s, L = sol.spec, sol.layout
    x, x0, z = _points(sol, x, x0, z)
    ev = eval_master(sol, t, x, x0, z)
    at_mean = eval_master(sol, t, z, x0, z)
    dU0, dU = sol.derivative_forms(float(t))
    x, x0, z = _bcast(x, x0, z)
    w0 = np.concatenate([x0, z], axis=-1)
    w = np.concatenate([x, x0, z], axis=-1)
    lap0 = np.trace(ev.hess_U0[np.ix_(L.i0_x0, L.i0_x0)])
    lap = np.trace(ev.hess_U[np.ix_(L.ix, L.ix)]) + np.trace(ev.hess_U[np.ix_(L.ix0, L.ix0)])
    drift_mean = at_mean.DxU
    r_i = (
        -dU0(w0)
        - lap0
        + 0.5 * np.sum(ev.Dx0U0**2, axis=-1)
        - lq.eval_f0(s, x0, z)
        + np.sum(ev.DzU0 * drift_mean, axis=-1)
    )
    r_ii = (
        -dU(w)
        - lap
        + 0.5 * np.sum(ev.DxU**2, axis=-1)
        - lq.eval_f(s, x, x0, z)
        + np.sum(ev.Dx0U * ev.Dx0U0, axis=-1)
        + np.sum(ev.DzU * drift_mean, axis=-1)
    )
    return r_i, r_ii


class Feedback:
    """Affine equilibrium feedback ``alpha(t, x, x0, z) = -D_x U``.

    Calls broadcast over leading axes of ``x, x0, z``; ``t`` is a scalar.
    """

    def __init__(self, sol: MasterSolution, major=False):
        self.sol = sol
        self.major = major

    def gains(self, t):
        """``(G, g)`` with ``alpha = G @ w + g`` on the stacked variable.

        ``w = (x, x0, z)`` for the minor feedback and ``(x0, z)`` for the
        major one. ``t`` may be an array; gains gain a leading time axis.
        """
        U0, U = self.sol.forms(t)
        L = self.sol.layout
        if self.major:
            return -U0.M[..., L.i0_x0, :], -U0.l[..., L.i0_x0]
        return -U.M[..., L.ix, :], -U.l[..., L.ix]

    def __call__(self, t, *args):
        G, g = self.gains(float(t))
        arrs = [np.atleast_1d(np.asarray(a, dtype=float)) for a in args]
        lead = np.broadcast_shapes(*(a.shape[:-1] for a in arrs))
        w = np.concatenate([np.broadcast_to(a, lead + a.shape[-1:]) for a in arrs], axis=-1)
        return w @ G.T + g


def feedback(sol: MasterSolution):
    """Equilibrium feedbacks ``(alpha_bar, alpha0_bar)`` derived from ``sol``.

    ``alpha_bar(t, x, x0, z)`` and ``alpha0_bar(t, x0, z)``.
    """
    return Feedback(sol, major=False), Feedback(sol, major=True)
