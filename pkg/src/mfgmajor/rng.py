"""Counter-based random streams keyed by (seed, purpose, step, path, stream).

Every draw is a pure function of its key, so results do not depend on how
paths are split across workers or in which order they run.
"""

from __future__ import annotations

import numpy as np

from ._backend import get_kernels

# stream families; never reuse a value for two purposes
INIT = 1
MINOR = 2
MAJOR = 3
CLOUD = 4
CLOUD_INIT = 5
SAMPLE = 6
PARTICLE = 7

_TWO_PI = 2.0 * np.pi


def _check_seed(seed):
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must lie in [0, 2**64)")
    return seed


def uniform_pairs(seed, purpose, step, paths, n_streams, backend=None):
    k = get_kernels(backend)
    return k.uniform_pairs(_check_seed(seed), int(purpose), int(step), np.asarray(paths, dtype=np.int64), int(n_streams))


def uniforms(seed, purpose, step, paths, n_streams, backend=None):
    """Uniform [0, 1) draws of shape ``(len(paths), n_streams)``."""
    return uniform_pairs(seed, purpose, step, paths, n_streams, backend)[1]


def normals(seed, purpose, step, paths, n_streams, backend=None):
    """Standard normal draws of shape ``(len(paths), n_streams)`` (Box-Muller)."""
    u1, u2 = uniform_pairs(seed, purpose, step, paths, n_streams, backend)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)
