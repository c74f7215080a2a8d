"""Uniform empirical measures on R^d and exact Wasserstein distances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import (
    DegenerateLeaveOneOutError,
    DimensionMismatchError,
    EmptyPopulationError,
    InvalidOrderError,
    UnsupportedTransportError,
)

__all__ = [
    "EmpiricalMeasure",
    "empirical_from_states",
    "moment",
    "mean",
    "wasserstein",
]


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Uniform-weight atom cloud ``(1/n) sum_k delta_{atoms[k]}``.

    Parameters
    ----------
    atoms : array_like, shape (n, d) or (n,)
        Atom locations in insertion order. A 1-D input is read as ``n``
        scalar atoms (``d = 1``).
    """

    atoms: np.ndarray

    def __post_init__(self):
        a = np.array(self.atoms, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        if a.ndim != 2:
            raise DimensionMismatchError("atoms must be a (n, d) array")
        if a.shape[0] == 0:
            raise EmptyPopulationError("an empirical measure needs at least one atom")
        if a.shape[1] == 0:
            raise DimensionMismatchError("atom dimension must be positive")
        if not np.all(np.isfinite(a)):
            raise ValueError("atoms must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "atoms", a)

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.size, 1.0 / self.size)

    def __repr__(self):
        return f"EmpiricalMeasure(n={self.size}, dim={self.dim})"


def _split_state(X, d0, d):
    X = np.asarray(X, dtype=float).ravel()
    if d0 < 1 or d < 1:
        raise DimensionMismatchError("state dimensions must be positive")
    rest = X.size - d0
    if rest < 0 or rest % d:
        raise DimensionMismatchError(
            f"stacked state of length {X.size} is not d0 + N*d with d0={d0}, d={d}"
        )
    return X[:d0], X[d0:].reshape(-1, d)


def empirical_from_states(X, d0=1, d=1, leave_one_out=True):
    """Build ``m^N_X`` and the leave-one-out family ``m^{N,i}_X``.

    ``X`` is the stacked state ``(x_0, x_1, ..., x_N)``; the major state
    ``x_0`` never enters any of the returned measures.

    Returns
    -------
    (EmpiricalMeasure, list of EmpiricalMeasure)
        The full measure and, when ``leave_one_out`` is true, the list of
        ``N`` measures obtained by dropping minor ``i``. With
        ``leave_one_out=False`` the list is empty.
    """
    _, minors = _split_state(X, d0, d)
    n = minors.shape[0]
    if n == 0:
        raise EmptyPopulationError("no minor players in the stacked state")
    full = EmpiricalMeasure(minors)
    if not leave_one_out:
        return full, []
    if n == 1:
        raise DegenerateLeaveOneOutError("leave-one-out needs at least two minor players")
    keep = ~np.eye(n, dtype=bool)
    return full, [EmpiricalMeasure(minors[keep[i]]) for i in range(n)]


def moment(m: EmpiricalMeasure, k=1) -> float:
    """Rooted moment ``(int |x|^k dm)^(1/k)``; for ``k = 1`` the first moment."""
    if k < 1:
        raise InvalidOrderError(f"moment order must be >= 1, got {k}")
    r = np.linalg.norm(m.atoms, axis=1)
    if k == 1:
        return float(r.mean())
    return float(np.mean(r**k) ** (1.0 / k))


def mean(m: EmpiricalMeasure) -> np.ndarray:
    return m.atoms.mean(axis=0)


def _wasserstein_1d(a, b, k):
    # pair quantile functions on the merged breakpoint grid
    a = np.sort(a)
    b = np.sort(b)
    n, m = a.size, b.size
    if n == m:
        return float(np.mean(np.abs(a - b) ** k))
    u = np.union1d(np.arange(1, n + 1) / n, np.arange(1, m + 1) / m)
    du = np.diff(np.concatenate(([0.0], u)))
    mid = u - 0.5 * du
    ia = np.minimum((mid * n).astype(int), n - 1)
    ib = np.minimum((mid * m).astype(int), m - 1)
    return float(np.sum(du * np.abs(a[ia] - b[ib]) ** k))


def wasserstein(m: EmpiricalMeasure, m2: EmpiricalMeasure, k=1) -> float:
    """Exact ``d_k`` distance between two uniform empirical measures.

    In one dimension the sorted-quantile formula handles any atom counts.
    In higher dimension both supports must have the same number of atoms and
    the optimal coupling is a permutation, found by exact assignment.
    """
    if k not in (1, 2):
        raise InvalidOrderError(f"only k = 1 or 2 are supported, got {k}")
    if m.dim != m2.dim:
        raise DimensionMismatchError(f"dimension mismatch: {m.dim} vs {m2.dim}")
    if m.dim == 1:
        cost = _wasserstein_1d(m.atoms[:, 0], m2.atoms[:, 0], k)
    else:
        if m.size != m2.size:
            raise UnsupportedTransportError(
                "dim > 1 transport is only supported between equal-size supports"
            )
        diff = m.atoms[:, None, :] - m2.atoms[None, :, :]
        C = np.linalg.norm(diff, axis=2) ** k
        rows, cols = linear_sum_assignment(C)
        cost = float(C[rows, cols].mean())
    return cost ** (1.0 / k)
