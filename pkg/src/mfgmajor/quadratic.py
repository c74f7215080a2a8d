"""Quadratic forms, affine maps, and the products the HJB systems need.

A :class:`QuadraticForm` is ``v -> 1/2 v^T M v + l.v + c`` and an
:class:`Affine` map is ``v -> G v + g``. Both carry optional leading batch
axes so that a whole family of value functions (one per player) can be
manipulated at once; all operations broadcast over those axes.

The Riccati right-hand sides are assembled from these pieces by
polynomial identification: every term of an HJB equation with a quadratic
ansatz is either a quadratic form already, a product of two affine
gradients, or the trace of a Hessian block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["QuadraticForm", "Affine", "residual_form", "selector"]


def _T(a):
    return np.swapaxes(a, -1, -2)


def selector(index, n):
    """Rows of the identity: the linear map ``v -> v[index]``."""
    S = np.zeros((len(index), n))
    S[np.arange(len(index)), index] = 1.0
    return S


@dataclass(frozen=True)
class Affine:
    G: np.ndarray
    g: np.ndarray

    @property
    def n_in(self):
        return self.G.shape[-1]

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        return np.einsum("...ij,...j->...i", self.G, v) + self.g

    def compose(self, inner: "Affine") -> "Affine":
        """``self o inner``."""
        return Affine(self.G @ inner.G, np.einsum("...ij,...j->...i", self.G, inner.g) + self.g)

    def rows(self, index) -> "Affine":
        return Affine(self.G[..., index, :], self.g[..., index])

    def dot(self, other: "Affine") -> "QuadraticForm":
        """The quadratic form ``v -> (G1 v + g1).(G2 v + g2)``."""
        M = _T(self.G) @ other.G + _T(other.G) @ self.G
        l = np.einsum("...ji,...j->...i", self.G, other.g) + np.einsum(
            "...ji,...j->...i", other.G, self.g
        )
        c = np.sum(self.g * other.g, axis=-1)
        return QuadraticForm(M, l, c)

    def half_square(self) -> "QuadraticForm":
        """``v -> 1/2 |G v + g|^2``."""
        M = _T(self.G) @ self.G
        l = np.einsum("...ji,...j->...i", self.G, self.g)
        c = 0.5 * np.sum(self.g * self.g, axis=-1)
        return QuadraticForm(M, l, c)


@dataclass(frozen=True)
class QuadraticForm:
    M: np.ndarray
    l: np.ndarray
    c: np.ndarray | float

    @classmethod
    def zeros(cls, n, batch=()):
        return cls(np.zeros(batch + (n, n)), np.zeros(batch + (n,)), np.zeros(batch))

    @property
    def n(self):
        return self.M.shape[-1]

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        Mv = np.einsum("...ij,...j->...i", self.M, v)
        return 0.5 * np.sum(v * Mv, axis=-1) + np.sum(self.l * v, axis=-1) + self.c

    def gradient(self) -> Affine:
        return Affine(self.M, self.l)

    def hessian(self):
        return self.M

    def laplacian(self, index):
        """Trace of the Hessian block over the coordinates ``index``."""
        idx = np.asarray(index)
        return np.sum(self.M[..., idx, idx], axis=-1)

    def compose(self, inner: Affine) -> "QuadraticForm":
        """``v -> self(G v + g)``."""
        G, g = inner.G, inner.g
        M = _T(G) @ self.M @ G
        Mg = np.einsum("...ij,...j->...i", self.M, g)
        l = np.einsum("...ji,...j->...i", G, Mg + self.l)
        c = 0.5 * np.sum(g * Mg, axis=-1) + np.sum(self.l * g, axis=-1) + self.c
        return QuadraticForm(M, l, c)

    def __add__(self, other):
        if isinstance(other, QuadraticForm):
            return QuadraticForm(self.M + other.M, self.l + other.l, self.c + other.c)
        return QuadraticForm(self.M, self.l, self.c + other)

    def __sub__(self, other):
        if isinstance(other, QuadraticForm):
            return QuadraticForm(self.M - other.M, self.l - other.l, self.c - other.c)
        return QuadraticForm(self.M, self.l, self.c - other)

    def __neg__(self):
        return QuadraticForm(-self.M, -self.l, -self.c)

    def __mul__(self, s):
        return QuadraticForm(s * self.M, s * self.l, s * self.c)

    __rmul__ = __mul__

    def symmetrized(self):
        return QuadraticForm(0.5 * (self.M + _T(self.M)), self.l, self.c)


def residual_form(E, e, Q) -> QuadraticForm:
    """``v -> 1/2 (E v + e)^T Q (E v + e)`` as a quadratic form."""
    E = np.asarray(E, dtype=float)
    e = np.asarray(e, dtype=float)
    Q = np.asarray(Q, dtype=float)
    QE = Q @ E
    M = E.T @ QE
    l = QE.T @ e
    c = 0.5 * float(e @ Q @ e)
    return QuadraticForm(0.5 * (M + M.T), l, c)
