"""Pure-numpy twins of the compiled kernels (bit-identical results)."""

import numpy as np

BACKEND = "python"

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_TWO_M53 = 1.0 / 9007199254740992.0


def _philox_arrays(x0, x1, x2, x3, k0, k1):
    x0, x1, x2, x3 = (np.asarray(v, dtype=np.uint32) for v in (x0, x1, x2, x3))
    k0, k1 = np.uint32(k0), np.uint32(k1)
    s32 = np.uint64(32)
    with np.errstate(over="ignore"):
        for _ in range(10):
            p0 = _M0 * x0.astype(np.uint64)
            p1 = _M1 * x2.astype(np.uint64)
            x0, x1, x2, x3 = (
                (p1 >> s32).astype(np.uint32) ^ x1 ^ k0,
                (p1 & _MASK).astype(np.uint32),
                (p0 >> s32).astype(np.uint32) ^ x3 ^ k1,
                (p0 & _MASK).astype(np.uint32),
            )
            k0 = np.uint32(k0 + _W0)
            k1 = np.uint32(k1 + _W1)
    return x0, x1, x2, x3


def philox4x32(ctr, key):
    c = np.asarray(ctr, dtype=np.uint32)
    k = np.asarray(key, dtype=np.uint32)
    return np.stack(_philox_arrays(c[:, 0], c[:, 1], c[:, 2], c[:, 3], k[0], k[1]), axis=1)


def _to_unit(hi, lo):
    v = (hi.astype(np.uint64) << np.uint64(32)) | lo.astype(np.uint64)
    return (v >> np.uint64(11)).astype(np.float64)


def uniform_pairs(seed, purpose, step, paths, n_streams):
    seed = int(seed)
    p = np.asarray(paths, dtype=np.int64).astype(np.uint32)
    P, S = p.size, int(n_streams)
    c0 = np.full((P, S), step, dtype=np.uint32)
    c1 = np.broadcast_to(np.arange(S, dtype=np.uint32), (P, S))
    c2 = np.broadcast_to(p[:, None], (P, S))
    c3 = np.full((P, S), purpose, dtype=np.uint32)
    x0, x1, x2, x3 = _philox_arrays(c0, c1, c2, c3, seed & 0xFFFFFFFF, seed >> 32)
    u1 = (_to_unit(x0, x1) + 0.5) * _TWO_M53
    u2 = _to_unit(x2, x3) * _TWO_M53
    return u1, u2


def affine_em_step(X, G, g, dt, scale, xi):
    X = np.asarray(X, dtype=float)
    G = np.asarray(G, dtype=float)
    acc = np.zeros_like(X)
    for k in range(X.shape[1]):
        acc = acc + G[None, :, k] * X[:, k, None]
    return X + dt * (acc + g) + scale * xi
