"""Backward RK4 for coefficient ODEs and interpolation of the stored path."""

from __future__ import annotations

import numpy as np

from .errors import HorizonTooLongError, TimeRangeError

BLOWUP = 1e8


def rk4_backward(rhs, terminal, T, nt, save_every=1, blowup=BLOWUP):
    """Integrate ``dC/dt = rhs(C)`` from ``C(T) = terminal`` down to ``t = 0``.

    Fixed step ``T/nt``. Every ``save_every``-th grid point (always including
    both ends) is stored together with ``rhs`` evaluated there.

    Returns
    -------
    times : (n_saved,) ndarray, increasing
    C, dC : (n_saved, n) ndarrays
    """
    if nt < 2:
        raise ValueError("nt must be >= 2")
    if save_every < 1 or nt % save_every:
        raise ValueError("save_every must divide nt")
    h = T / nt
    n_saved = nt // save_every + 1
    c = np.array(terminal, dtype=float)
    C = np.empty((n_saved, c.size))
    dC = np.empty_like(C)
    k1 = rhs(c)
    C[-1], dC[-1] = c, k1
    for step in range(nt, 0, -1):
        k2 = rhs(c - 0.5 * h * k1)
        k3 = rhs(c - 0.5 * h * k2)
        k4 = rhs(c - h * k3)
        c = c - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = (step - 1) * h
        peak = np.max(np.abs(c))
        if not np.isfinite(peak) or peak > blowup:
            raise HorizonTooLongError(t, peak if np.isfinite(peak) else np.inf)
        k1 = rhs(c)
        if (step - 1) % save_every == 0:
            j = (step - 1) // save_every
            C[j], dC[j] = c, k1
    times = np.arange(n_saved) * (T * save_every / nt)
    times[-1] = T
    return times, C, dC


COMPILE_LIMIT = 100


class QuadraticField:
    """A vector field ``v -> b + A v + B(v, v)`` recovered from samples.

    The coefficient ODEs of LQ games are quadratic polynomials in the
    coefficient vector, so evaluating a structural right-hand side at ``0``,
    ``+-e_i`` and ``e_i + e_j`` identifies it exactly (up to rounding). The
    compiled field is then one dense product per call.
    """

    def __init__(self, rhs, n):
        eye = np.eye(n)
        b = np.asarray(rhs(np.zeros(n)), dtype=float)
        plus = np.array([rhs(e) for e in eye])
        minus = np.array([rhs(-e) for e in eye])
        self.b = b
        self.A = (0.5 * (plus - minus)).T
        diag = 0.5 * (plus + minus) - b  # B(e_i, e_i)
        iu, ju = np.triu_indices(n)
        cols = np.empty((iu.size, b.size))
        for k, (i, j) in enumerate(zip(iu, ju)):
            if i == j:
                cols[k] = diag[i]
            else:
                # B(e_i + e_j) - B(e_i) - B(e_j) = 2 B(e_i, e_j), the full cross coefficient
                cols[k] = rhs(eye[i] + eye[j]) - plus[i] - plus[j] + b
        keep = np.any(cols != 0.0, axis=1)
        self.iu, self.ju = iu[keep], ju[keep]
        self.B = cols[keep].T

    def __call__(self, v):
        return self.b + self.A @ v + self.B @ (v[self.iu] * v[self.ju])


def compile_quadratic(rhs, n, limit=COMPILE_LIMIT):
    """:class:`QuadraticField` for ``rhs`` when ``n <= limit``, else ``rhs`` itself."""
    return QuadraticField(rhs, n) if n <= limit else rhs


class CoefficientPath:
    """Coefficient trajectory on a uniform grid with stored time derivatives.

    Values between knots use cubic Hermite interpolation; time derivatives
    use cubic Lagrange interpolation of the stored derivatives, so both are
    fourth-order accurate and exact at the knots.
    """

    def __init__(self, times, C, dC):
        self.times = np.asarray(times, dtype=float)
        self.C = np.asarray(C, dtype=float)
        self.dC = np.asarray(dC, dtype=float)
        self.T = float(self.times[-1])
        self.H = self.T / (self.times.size - 1)
        for a in (self.times, self.C, self.dC):
            a.setflags(write=False)

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-12 * self.T) or np.any(t > self.T * (1 + 1e-12)) or np.any(~np.isfinite(t)):
            raise TimeRangeError(f"t must lie in [0, {self.T}]")
        return np.clip(t, 0.0, self.T)

    def _locate(self, t):
        u = t / self.H
        n = self.times.size
        k = np.clip(np.floor(u).astype(int), 0, n - 2)
        theta = u - k
        near = np.rint(u).astype(int)
        knot = np.abs(u - near) < 1e-9
        return k, theta, knot, np.clip(near, 0, n - 1)

    def value(self, t):
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(self._check(t))
        k, th, knot, near = self._locate(t)
        th = th[:, None]
        h00 = 2 * th**3 - 3 * th**2 + 1
        h10 = th**3 - 2 * th**2 + th
        h01 = -2 * th**3 + 3 * th**2
        h11 = th**3 - th**2
        out = (
            h00 * self.C[k]
            + h10 * self.H * self.dC[k]
            + h01 * self.C[k + 1]
            + h11 * self.H * self.dC[k + 1]
        )
        out[knot] = self.C[near[knot]]
        return out[0] if scalar else out

    def derivative(self, t):
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(self._check(t))
        k, th, knot, near = self._locate(t)
        n = self.times.size
        m = min(4, n)
        base = np.clip(k - (m // 2 - 1), 0, n - m)
        s = (t / self.H - base)[:, None]
        nodes = np.arange(m)
        out = np.zeros((t.size, self.dC.shape[1]))
        for a in range(m):
            w = np.ones_like(s)
            for b in range(m):
                if b != a:
                    w = w * (s - nodes[b]) / (nodes[a] - nodes[b])
            out += w * self.dC[base + a]
        out[knot] = self.dC[near[knot]]
        return out[0] if scalar else out
