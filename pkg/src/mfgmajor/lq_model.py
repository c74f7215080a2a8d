"""Linear-quadratic model family with one major and many minor players.

Costs depend on the population only through its mean ``z``::

    f(x, x0, z)  = 1/2 (x - A z - B x0 - b)^T Q (x - A z - B x0 - b)
    f0(x0, z)    = 1/2 (x0 - A0 z - b0)^T Q0 (x0 - A0 z - b0)
    G, G0        : same shape with the terminal coefficients

and the Hamiltonians are ``H = 1/2 |p|^2 - f`` and ``H0 = 1/2 |p0|^2 - f0``,
so ``D_p H = p`` and the Lagrangians are ``L = 1/2 |a|^2 + f``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable, NamedTuple

import numpy as np

from .errors import ConfigError, DimensionMismatchError
from .measures import EmpiricalMeasure, mean
from .quadratic import residual_form

__all__ = [
    "LqSpec",
    "eval_f",
    "eval_f0",
    "eval_G",
    "eval_G0",
    "eval_H",
    "eval_DpH",
    "eval_H0",
    "eval_DpH0",
    "eval_L",
    "eval_L0",
    "fenchel_gap",
    "lderivative_mean_functional",
    "MeasureDerivative",
]

PSD_TOL = -1e-10

# (name, shape as a function of (d, d0))
_SHAPES = {
    "Q": lambda d, d0: (d, d),
    "A": lambda d, d0: (d, d),
    "B": lambda d, d0: (d, d0),
    "b": lambda d, d0: (d,),
    "QT": lambda d, d0: (d, d),
    "AT": lambda d, d0: (d, d),
    "BT": lambda d, d0: (d, d0),
    "bT": lambda d, d0: (d,),
    "Q0": lambda d, d0: (d0, d0),
    "A0": lambda d, d0: (d0, d),
    "b0": lambda d, d0: (d0,),
    "Q0T": lambda d, d0: (d0, d0),
    "A0T": lambda d, d0: (d0, d),
    "b0T": lambda d, d0: (d0,),
}
COST_KEYS = tuple(_SHAPES)
_SYMMETRIC = ("Q", "QT", "Q0", "Q0T")


@dataclass(frozen=True, eq=False)
class LqSpec:
    """Model configuration. Cost blocks left as ``None`` become zeros."""

    d: int
    d0: int
    T: float
    Q: np.ndarray = None
    A: np.ndarray = None
    B: np.ndarray = None
    b: np.ndarray = None
    QT: np.ndarray = None
    AT: np.ndarray = None
    BT: np.ndarray = None
    bT: np.ndarray = None
    Q0: np.ndarray = None
    A0: np.ndarray = None
    b0: np.ndarray = None
    Q0T: np.ndarray = None
    A0T: np.ndarray = None
    b0T: np.ndarray = None

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ConfigError("must be a positive integer", key="d")
        if int(self.d0) != self.d0 or self.d0 < 1:
            raise ConfigError("must be a positive integer", key="d0")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "d0", int(self.d0))
        if not np.isfinite(self.T) or self.T <= 0:
            raise ConfigError("horizon must be positive", key="T")
        object.__setattr__(self, "T", float(self.T))
        for name, shape_of in _SHAPES.items():
            shape = shape_of(self.d, self.d0)
            val = getattr(self, name)
            if val is None:
                arr = np.zeros(shape)
            else:
                arr = np.array(val, dtype=float)
                if arr.size == 1 and arr.shape != shape and int(np.prod(shape)) == 1:
                    arr = arr.reshape(shape)
                if arr.shape != shape:
                    raise ConfigError(f"expected shape {shape}, got {arr.shape}", key=name)
            if not np.all(np.isfinite(arr)):
                raise ConfigError("entries must be finite", key=name)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in _SYMMETRIC:
            M = getattr(self, name)
            if np.max(np.abs(M - M.T), initial=0.0) > 1e-12:
                raise ConfigError("matrix must be symmetric", key=name)
            if np.linalg.eigvalsh(M).min() < PSD_TOL:
                raise ConfigError("matrix must be positive semidefinite", key=name)

    @classmethod
    def zero(cls, d=1, d0=1, T=1.0):
        return cls(d=d, d0=d0, T=T)

    def replace(self, **changes):
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update(changes)
        return LqSpec(**kw)

    def to_dict(self):
        out = {"d": self.d, "d0": self.d0, "T": self.T}
        for name in COST_KEYS:
            out[name] = getattr(self, name).tolist()
        return out

    def equals(self, other) -> bool:
        if (self.d, self.d0, self.T) != (other.d, other.d0, other.T):
            return False
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in COST_KEYS)

    def is_zero_cost(self) -> bool:
        return all(not np.any(getattr(self, k)) for k in _SYMMETRIC)

    # --- cost residuals as affine maps of a stacked variable -------------
    # ``Sx, Sx0, Sz`` select the blocks of the variable holding x, x0, z.

    def minor_running_form(self, Sx, Sx0, Sz):
        E = Sx - self.A @ Sz - self.B @ Sx0
        return residual_form(E, -self.b, self.Q)

    def minor_terminal_form(self, Sx, Sx0, Sz):
        E = Sx - self.AT @ Sz - self.BT @ Sx0
        return residual_form(E, -self.bT, self.QT)

    def major_running_form(self, Sx0, Sz):
        return residual_form(Sx0 - self.A0 @ Sz, -self.b0, self.Q0)

    def major_terminal_form(self, Sx0, Sz):
        return residual_form(Sx0 - self.A0T @ Sz, -self.b0T, self.Q0T)


def _vec(v, n, name):
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        v = v[None]
    if v.shape[-1] != n:
        raise DimensionMismatchError(f"{name}: expected trailing dimension {n}, got {v.shape}")
    return v


def _quad(r, Q):
    return 0.5 * np.einsum("...i,ij,...j->...", r, Q, r)


def eval_f(spec: LqSpec, x, x0, z):
    x, x0, z = _vec(x, spec.d, "x"), _vec(x0, spec.d0, "x0"), _vec(z, spec.d, "z")
    r = x - z @ spec.A.T - x0 @ spec.B.T - spec.b
    return _quad(r, spec.Q)


def eval_f0(spec: LqSpec, x0, z):
    x0, z = _vec(x0, spec.d0, "x0"), _vec(z, spec.d, "z")
    return _quad(x0 - z @ spec.A0.T - spec.b0, spec.Q0)


def eval_G(spec: LqSpec, x, x0, z):
    x, x0, z = _vec(x, spec.d, "x"), _vec(x0, spec.d0, "x0"), _vec(z, spec.d, "z")
    r = x - z @ spec.AT.T - x0 @ spec.BT.T - spec.bT
    return _quad(r, spec.QT)


def eval_G0(spec: LqSpec, x0, z):
    x0, z = _vec(x0, spec.d0, "x0"), _vec(z, spec.d, "z")
    return _quad(x0 - z @ spec.A0T.T - spec.b0T, spec.Q0T)


def eval_H(spec, x, x0, p, z):
    p = _vec(p, spec.d, "p")
    return 0.5 * np.sum(p * p, axis=-1) - eval_f(spec, x, x0, z)


def eval_DpH(spec, x, x0, p, z):
    _vec(x, spec.d, "x"), _vec(x0, spec.d0, "x0"), _vec(z, spec.d, "z")
    return np.array(_vec(p, spec.d, "p"))


def eval_H0(spec, x0, p0, z):
    p0 = _vec(p0, spec.d0, "p0")
    return 0.5 * np.sum(p0 * p0, axis=-1) - eval_f0(spec, x0, z)


def eval_DpH0(spec, x0, p0, z):
    _vec(x0, spec.d0, "x0"), _vec(z, spec.d, "z")
    return np.array(_vec(p0, spec.d0, "p0"))


def eval_L(spec, x, x0, alpha, z):
    alpha = _vec(alpha, spec.d, "alpha")
    return 0.5 * np.sum(alpha * alpha, axis=-1) + eval_f(spec, x, x0, z)


def eval_L0(spec, x0, alpha0, z):
    alpha0 = _vec(alpha0, spec.d0, "alpha0")
    return 0.5 * np.sum(alpha0 * alpha0, axis=-1) + eval_f0(spec, x0, z)


def fenchel_gap(spec, x, x0, p, alpha, z):
    """``L(alpha) + H(p) + alpha.p``; nonnegative, zero iff ``alpha = -p``."""
    ap = np.sum(_vec(alpha, spec.d, "alpha") * _vec(p, spec.d, "p"), axis=-1)
    return eval_L(spec, x, x0, alpha, z) + eval_H(spec, x, x0, p, z) + ap


class MeasureDerivative(NamedTuple):
    flat: np.ndarray
    lderiv: np.ndarray
    div: np.ndarray


def lderivative_mean_functional(
    grad_phi: Callable[[np.ndarray], np.ndarray], m: EmpiricalMeasure, y
) -> MeasureDerivative:
    """Measure derivatives of ``U(m) = phi(mean(m))`` at the points ``y``.

    The flat derivative is normalised to integrate to zero against ``m``:
    ``dU/dm(m, y) = Dphi(z).(y - z)``. Its ``y``-gradient, the L-derivative,
    is ``Dphi(z)`` for every ``y``, so its divergence vanishes.
    """
    z = mean(m)
    y = _vec(y, m.dim, "y")
    g = np.asarray(grad_phi(z), dtype=float).reshape(-1)
    if g.size != m.dim:
        raise DimensionMismatchError("gradient of phi has the wrong dimension")
    flat = (y - z) @ g
    lderiv = np.broadcast_to(g, y.shape).copy()
    return MeasureDerivative(flat, lderiv, np.zeros(y.shape[:-1]))
