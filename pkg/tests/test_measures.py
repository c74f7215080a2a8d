import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mfgmajor.errors import (
    DegenerateLeaveOneOutError,
    DimensionMismatchError,
    EmptyPopulationError,
    InvalidOrderError,
    UnsupportedTransportError,
)
from mfgmajor.measures import EmpiricalMeasure, empirical_from_states, mean, moment, wasserstein


def brute_force(a, b, k):
    """Optimal transport between equal-size uniform supports by enumerating permutations."""
    a, b = np.atleast_2d(a.T).T, np.atleast_2d(b.T).T
    best = np.inf
    for perm in itertools.permutations(range(len(a))):
        c = np.mean(np.linalg.norm(a - b[list(perm)], axis=1) ** k)
        best = min(best, c)
    return best ** (1.0 / k)


def test_two_atom_measures():
    full, loo = empirical_from_states([0.0, 1.0, 3.0])
    assert np.array_equal(full.atoms[:, 0], [1.0, 3.0])
    assert np.allclose(full.weights, 0.5)
    assert np.array_equal(loo[0].atoms[:, 0], [3.0])
    assert np.array_equal(loo[1].atoms[:, 0], [1.0])


def test_single_minor():
    full, none = empirical_from_states([5.0, 1.0], leave_one_out=False)
    assert np.array_equal(full.atoms, [[1.0]]) and none == []
    with pytest.raises(DegenerateLeaveOneOutError):
        empirical_from_states([5.0, 1.0])


def test_empty_and_shape_errors():
    with pytest.raises(EmptyPopulationError):
        empirical_from_states([5.0])
    with pytest.raises(EmptyPopulationError):
        EmpiricalMeasure(np.empty((0, 1)))
    with pytest.raises(DimensionMismatchError):
        empirical_from_states([0.0, 1.0, 2.0, 3.0], d0=1, d=2)
    with pytest.raises(ValueError):
        EmpiricalMeasure([[np.nan]])


def test_major_never_enters():
    full, _ = empirical_from_states([100.0, 1.0, 2.0, 3.0, 4.0])
    assert mean(full)[0] == 2.5


def test_atoms_read_only():
    m = EmpiricalMeasure([[1.0], [2.0]])
    with pytest.raises(ValueError):
        m.atoms[0, 0] = 3.0


def test_moment_examples():
    assert moment(EmpiricalMeasure([[-3.0]]), 1) == 3.0
    assert moment(EmpiricalMeasure([[-1.0], [1.0]]), 2) == 1.0
    assert moment(EmpiricalMeasure([[0.0], [1.0], [2.0]]), 1) == 1.0
    with pytest.raises(InvalidOrderError):
        moment(EmpiricalMeasure([[1.0]]), 0)


def test_mean_examples():
    assert mean(EmpiricalMeasure([[1.5, -2.0]])).tolist() == [1.5, -2.0]
    assert mean(EmpiricalMeasure([[1.0], [3.0]]))[0] == 2.0
    assert mean(EmpiricalMeasure([[0.0], [0.0], [3.0]]))[0] == 1.0


def test_wasserstein_examples():
    m = EmpiricalMeasure([[0.3], [-1.2], [4.0]])
    assert wasserstein(m, m) == 0.0
    assert wasserstein(EmpiricalMeasure([[0.0]]), EmpiricalMeasure([[-2.5]])) == 2.5
    assert wasserstein(EmpiricalMeasure([[0.0], [2.0]]), EmpiricalMeasure([[1.0], [3.0]])) == 1.0


def test_wasserstein_errors():
    a = EmpiricalMeasure(np.zeros((2, 2)))
    with pytest.raises(InvalidOrderError):
        wasserstein(a, a, k=3)
    with pytest.raises(DimensionMismatchError):
        wasserstein(a, EmpiricalMeasure([[0.0]]))
    with pytest.raises(UnsupportedTransportError):
        wasserstein(a, EmpiricalMeasure(np.zeros((3, 2))))


def test_wasserstein_unequal_sizes_1d():
    # delta_0 against (delta_0 + delta_1)/2: half the mass moves by 1
    assert wasserstein(EmpiricalMeasure([[0.0]]), EmpiricalMeasure([[0.0], [1.0]])) == pytest.approx(0.5, abs=1e-15)
    assert wasserstein(EmpiricalMeasure([[0.0]]), EmpiricalMeasure([[0.0], [1.0]]), k=2) == pytest.approx(
        np.sqrt(0.5), abs=1e-15)
    # W1 in one dimension equals the L1 distance between CDFs
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=3), rng.normal(size=7)
    grid = np.linspace(-10, 10, 400001)
    Fa = np.searchsorted(np.sort(a), grid, side="right") / a.size
    Fb = np.searchsorted(np.sort(b), grid, side="right") / b.size
    cdf_l1 = np.sum(np.abs(Fa - Fb)) * (grid[1] - grid[0])
    assert wasserstein(EmpiricalMeasure(a), EmpiricalMeasure(b)) == pytest.approx(cdf_l1, abs=1e-4)


def test_inputs_not_mutated():
    atoms = np.array([[3.0], [1.0], [2.0]])
    m = EmpiricalMeasure(atoms)
    wasserstein(m, EmpiricalMeasure([[0.0], [5.0], [1.0]]))
    assert m.atoms[:, 0].tolist() == [3.0, 1.0, 2.0]


def test_brute_force_transport_suite():
    rng = np.random.default_rng(2024)
    for trial in range(100):
        n = int(rng.integers(1, 6))
        dim = int(rng.integers(1, 4))
        k = int(rng.integers(1, 3))
        a, b = rng.normal(size=(n, dim)), rng.normal(size=(n, dim))
        got = wasserstein(EmpiricalMeasure(a), EmpiricalMeasure(b), k)
        assert abs(got - brute_force(a, b, k)) <= 1e-12, (trial, n, dim, k)


atoms5 = arrays(np.float64, (5, 2), elements=st.floats(-10, 10, allow_nan=False))


@settings(max_examples=60, deadline=None)
@given(atoms5, atoms5, atoms5, st.sampled_from([1, 2]))
def test_metric_axioms(a, b, c, k):
    A, B, C = EmpiricalMeasure(a), EmpiricalMeasure(b), EmpiricalMeasure(c)
    assert abs(wasserstein(A, B, k) - wasserstein(B, A, k)) <= 1e-12
    assert wasserstein(A, A, k) <= 1e-12
    assert wasserstein(A, C, k) <= wasserstein(A, B, k) + wasserstein(B, C, k) + 1e-12


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(3, 12), elements=st.floats(-5, 5, allow_nan=False)))
def test_leave_one_out_mean_identity(X):
    full, loo = empirical_from_states(X)
    N = full.size
    for i, m in enumerate(loo):
        expect = (N * mean(full) - full.atoms[i]) / (N - 1)
        assert np.allclose(mean(m), expect, atol=1e-12, rtol=0)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (6, 3), elements=st.floats(-5, 5, allow_nan=False)))
def test_moment_dominates_mean(a):
    m = EmpiricalMeasure(a)
    assert moment(m, 1) >= np.linalg.norm(mean(m)) - 1e-12
    assert moment(m, 2) >= moment(m, 1) - 1e-12


def test_leave_one_out_distance_bound():
    rng = np.random.default_rng(3)
    scaled = []
    for N in (2, 4, 8, 16, 32, 64):
        for _ in range(20):
            X = rng.uniform(-1, 1, N + 1)
            full, loo = empirical_from_states(X)
            lhs = np.mean([wasserstein(m, full) for m in loo])
            m1 = moment(full, 1)
            assert lhs <= 2 / N * m1 + 2 / N * np.max(np.abs(X[1:])) + 1e-12
            scaled.append(N * lhs / (1 + m1))
    assert max(scaled) <= 4.0
