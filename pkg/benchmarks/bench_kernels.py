"""Compiled vs pure-Python kernel timings.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5] [--paths 20000]

Each kernel is timed on both backends in-process; the end-to-end particle
simulation is timed in subprocesses, one with ``MFGMAJOR_PURE_PYTHON=1``,
because the active backend is fixed at import. Outputs of the two backends
are also compared bit for bit.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from mfgmajor import rng
from mfgmajor._backend import compiled_available, get_kernels

SIM_SNIPPET = """
import json, time
import numpy as np
from mfgmajor import BACKEND
from mfgmajor.lq_model import LqSpec
from mfgmajor.nash import solve_nash
from mfgmajor.simulator import SimConfig, simulate_coupled_particles
spec = LqSpec(d=1, d0=1, T=1.0, Q=1.0, A=0.4, B=0.3, QT=0.5, AT=0.3, BT=0.2, Q0=0.8, A0=0.5, Q0T=0.4, A0T=0.5)
sol = solve_nash(spec, {N}, nt=200)
cfg = SimConfig(dt=0.01, paths={paths}, seed=1)
X0 = np.linspace(-1, 1, {N} + 1)
t = time.perf_counter()
b = simulate_coupled_particles(sol, X0, cfg)
elapsed = time.perf_counter() - t
print(json.dumps({{"backend": BACKEND, "seconds": elapsed, "checksum": float(np.sum(b.states["X"][:, -1]))}}))
"""


def time_call(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_cases(paths):
    ids = np.arange(paths)
    g = np.random.default_rng(0)
    D = 9
    X, G, gv, xi = g.normal(size=(paths, D)), g.normal(size=(D, D)), g.normal(size=D), g.normal(size=(paths, D))
    return {
        "uniform_pairs": lambda b: rng.uniform_pairs(7, rng.MINOR, 3, ids, D, backend=b),
        "normals": lambda b: rng.normals(7, rng.MINOR, 3, ids, D, backend=b),
        "affine_em_step": lambda b: get_kernels(b).affine_em_step(X, G, gv, 1e-3, 0.04, xi),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(np.array_equal(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def run_simulation(pure, N, paths):
    env = dict(os.environ)
    env.pop("MFGMAJOR_PURE_PYTHON", None)
    if pure:
        env["MFGMAJOR_PURE_PYTHON"] = "1"
    out = subprocess.run([sys.executable, "-c", SIM_SNIPPET.format(N=N, paths=paths)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--paths", type=int, default=20000)
    p.add_argument("--sim-paths", type=int, default=2000)
    p.add_argument("-N", type=int, default=8)
    a = p.parse_args(argv)

    if not compiled_available():
        print("compiled kernels not built; only the python backend is timed")
    backends = ["python"] + (["compiled"] if compiled_available() else [])
    print(f"{'kernel':<18}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}{'bitwise':>9}")
    for name, fn in kernel_cases(a.paths).items():
        times = {b: time_call(lambda: fn(b), a.repeat) for b in backends}
        line = f"{name:<18}" + "".join(f"{times[b] * 1e3:>10.2f}ms" for b in backends)
        if len(backends) == 2:
            line += f"{times['python'] / times['compiled']:>9.1f}x{str(same(fn('python'), fn('compiled'))):>9}"
        print(line)

    sims = [run_simulation(True, a.N, a.sim_paths)]
    if compiled_available():
        sims.append(run_simulation(False, a.N, a.sim_paths))
    label = f"simulate N={a.N}"
    line = f"{label:<18}" + "".join(f"{s['seconds'] * 1e3:>10.1f}ms" for s in sims)
    if len(sims) == 2:
        line += f"{sims[0]['seconds'] / sims[1]['seconds']:>9.1f}x{str(sims[0]['checksum'] == sims[1]['checksum']):>9}"
    print(line)


if __name__ == "__main__":
    main()
