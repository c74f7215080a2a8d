import numpy as np
import pytest

from mfgmajor.lq_model import LqSpec
from mfgmajor.master import solve_master


def instance1(**changes):
    """Coupled one-dimensional reference model."""
    base = dict(d=1, d0=1, T=1.0, Q=1.0, A=0.4, B=0.3, QT=0.5, AT=0.3, BT=0.2, Q0=0.8, A0=0.5, Q0T=0.4, A0T=0.5)
    base.update(changes)
    return LqSpec(**base)


def decoupled(T=1.0):
    """Minor cost ``x^2 / 2`` only: every value function is ``tanh`` Riccati."""
    return LqSpec(d=1, d0=1, T=T, Q=1.0)


def coupled_2d():
    rng = np.random.default_rng(11)
    a = rng.normal(size=(2, 2))
    return LqSpec(
        d=2, d0=2, T=0.8,
        Q=np.eye(2) + 0.2 * a @ a.T, A=0.3 * rng.normal(size=(2, 2)), B=0.3 * rng.normal(size=(2, 2)),
        b=[0.1, -0.2], QT=0.5 * np.eye(2), AT=0.2 * np.eye(2), BT=0.1 * np.ones((2, 2)), bT=[0.0, 0.3],
        Q0=np.diag([0.8, 0.5]), A0=0.4 * rng.normal(size=(2, 2)), b0=[0.2, 0.0], Q0T=0.3 * np.eye(2),
        A0T=0.2 * np.eye(2), b0T=[-0.1, 0.1],
    )


@pytest.fixture(scope="session")
def spec1():
    return instance1()


@pytest.fixture(scope="session")
def master1(spec1):
    return solve_master(spec1, nt=2000)


@pytest.fixture(scope="session")
def spec2d():
    return coupled_2d()


@pytest.fixture(scope="session")
def master2d(spec2d):
    return solve_master(spec2d, nt=1000)
