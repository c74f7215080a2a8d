"""Explicit finite-difference solver of the three-player (N = 2) Nash system.

Test fixture only: an implementation of the PDEs that shares no code with
the Riccati solver, used as an independent oracle.
"""

import numpy as np

from mfgmajor import lq_model as lq


def _pad(u):
    """Ghost layer by quadratic extrapolation on every face."""
    p = np.pad(u, 1)
    for ax in range(3):
        sl = lambda k: tuple(slice(None) if a != ax else k for a in range(3))
        p[sl(0)] = 3 * p[sl(1)] - 3 * p[sl(2)] + p[sl(3)]
        p[sl(-1)] = 3 * p[sl(-2)] - 3 * p[sl(-3)] + p[sl(-4)]
    return p


def _shift(p, ax, k):
    idx = [slice(1, -1)] * 3
    n = p.shape[ax]
    idx[ax] = slice(1 + k, n - 1 + k)
    return p[tuple(idx)]


def solve_nash_fd(spec, L=3.0, n=41, cfl=0.2):
    """Values ``u^0, u^1, u^2`` at ``t = 0`` on the grid ``linspace(-L, L, n)^3``."""
    g = np.linspace(-L, L, n)
    h = g[1] - g[0]
    X0, X1, X2 = np.meshgrid(g, g, g, indexing="ij")
    cols = lambda a: a.reshape(-1, 1)
    shape = X0.shape
    f = [
        lq.eval_f0(spec, cols(X0), cols(0.5 * (X1 + X2))).reshape(shape),
        lq.eval_f(spec, cols(X1), cols(X0), cols(X2)).reshape(shape),
        lq.eval_f(spec, cols(X2), cols(X0), cols(X1)).reshape(shape),
    ]
    u = [
        lq.eval_G0(spec, cols(X0), cols(0.5 * (X1 + X2))).reshape(shape),
        lq.eval_G(spec, cols(X1), cols(X0), cols(X2)).reshape(shape),
        lq.eval_G(spec, cols(X2), cols(X0), cols(X1)).reshape(shape),
    ]
    t = spec.T
    while t > 1e-14:
        P = [_pad(v) for v in u]
        fwd = [[(_shift(p, a, 1) - p[1:-1, 1:-1, 1:-1]) / h for a in range(3)] for p in P]
        bwd = [[(p[1:-1, 1:-1, 1:-1] - _shift(p, a, -1)) / h for a in range(3)] for p in P]
        cen = [[0.5 * (fwd[i][a] + bwd[i][a]) for a in range(3)] for i in range(3)]
        lap = [sum((fwd[i][a] - bwd[i][a]) / h for a in range(3)) for i in range(3)]
        # drift of player j along its own coordinate
        b = [-cen[j][j] for j in range(3)]
        speed = max(float(np.max(np.abs(v))) for v in b)
        # transport CFL and half the explicit diffusion limit h^2 / 6
        dt = min(cfl * h / max(speed, 1e-12), h * h / 12.0, t)
        new = []
        for i in range(3):
            rhs = lap[i] - 0.5 * cen[i][i] ** 2 + f[i]
            for j in range(3):
                if j != i:
                    up = np.where(b[j] > 0, fwd[i][j], bwd[i][j])
                    rhs = rhs + b[j] * up
            new.append(u[i] + dt * rhs)
        u = new
        t -= dt
    return g, u
