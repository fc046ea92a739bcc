import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import unitary_group

from stochmode.qcore import (
    DensityMatrix,
    HilbertLayout,
    LayoutError,
    Operator,
    embed_system,
    expect,
    fock_ops,
    identity,
    partial_trace_to_system,
    sigma_x,
    sigma_z,
    von_neumann_entropy,
)

from conftest import random_matrix, random_state


def test_fock_ops_smallest_truncation():
    lay = HilbertLayout((2, 2))
    a, ad, n = fock_ops(lay, 1)
    expected = np.kron(np.eye(2), np.array([[0, 1], [0, 0]]))
    assert np.array_equal(a.entries, expected)
    assert np.array_equal(ad.entries, expected.T)


def test_number_operator_eigenvalue():
    lay = HilbertLayout((1, 5))
    _, _, n = fock_ops(lay, 1)
    ket = np.zeros(5)
    ket[3] = 1
    assert np.allclose(n.entries @ ket, 3 * ket)


@pytest.mark.parametrize("N", [2, 3, 6, 10])
def test_truncated_commutator(N):
    # oracle: the truncated [a, a^dag] is diag(1, ..., 1, 1 - N)
    lay = HilbertLayout((1, N))
    a, ad, _ = fock_ops(lay, 1)
    comm = a.entries @ ad.entries - ad.entries @ a.entries
    expected = np.eye(N)
    expected[-1, -1] = 1 - N
    assert np.allclose(comm, expected, atol=1e-14)


def test_fock_ops_slot_and_range():
    lay = HilbertLayout((2, 3, 4))
    a2, _, n2 = fock_ops(lay, 2)
    assert np.array_equal(a2.entries, np.kron(np.eye(6), np.diag(np.sqrt([1.0, 2, 3]), 1)))
    for k in range(4):
        ket = np.kron(np.kron([1, 0], [0, 1, 0]), np.eye(4)[k])
        assert ket @ n2.entries @ ket == pytest.approx(k)
    with pytest.raises(IndexError):
        fock_ops(lay, 0)
    with pytest.raises(IndexError):
        fock_ops(lay, 3)


def test_layout_validation():
    with pytest.raises(LayoutError):
        HilbertLayout((2, 0))
    with pytest.raises(LayoutError):
        HilbertLayout(())
    with pytest.raises(LayoutError):
        HilbertLayout((2, 50, 50))  # 5000 > default cap 4096
    assert HilbertLayout((2, 50, 50), cap=10_000).total == 5000
    with pytest.raises(LayoutError):
        Operator(HilbertLayout((2, 2)), np.eye(2))


def test_partial_trace_product_state(rng):
    rs = random_state(rng, 2)
    rp = 2.5 * random_state(rng, 3)
    rho = DensityMatrix(HilbertLayout((2, 3)), np.kron(rs, rp))
    assert np.allclose(partial_trace_to_system(rho).entries, 2.5 * rs, atol=1e-14)


def test_partial_trace_bell_state():
    ket = np.array([1, 0, 0, 1]) / math.sqrt(2)
    rho = DensityMatrix.from_ket(HilbertLayout((2, 2)), ket)
    assert np.allclose(partial_trace_to_system(rho).entries, np.eye(2) / 2)


def test_partial_trace_matches_direct_summation(rng):
    M = random_matrix(rng, 6)
    red = partial_trace_to_system(DensityMatrix(HilbertLayout((2, 3)), M)).entries
    oracle = np.array([[sum(M[3 * i + k, 3 * j + k] for k in range(3)) for j in range(2)] for i in range(2)])
    assert np.allclose(red, oracle, atol=1e-14)
    assert abs(np.trace(red) - np.trace(M)) < 1e-14


dims_strategy = st.lists(st.integers(1, 4), min_size=1, max_size=3).map(lambda d: (2,) + tuple(d))


@given(dims=dims_strategy, seed=st.integers(0, 2**32 - 1), c=st.complex_numbers(max_magnitude=10))
def test_partial_trace_linear_and_trace_preserving(dims, seed, c):
    rng = np.random.default_rng(seed)
    lay = HilbertLayout(dims)
    A, B = random_matrix(rng, lay.total), random_matrix(rng, lay.total)
    pa = partial_trace_to_system(DensityMatrix(lay, A)).entries
    pb = partial_trace_to_system(DensityMatrix(lay, B)).entries
    pab = partial_trace_to_system(DensityMatrix(lay, A + c * B)).entries
    scale = 1 + abs(c)
    assert np.max(np.abs(pab - pa - c * pb)) <= 1e-12 * scale * lay.total
    assert abs(np.trace(pa) - np.trace(A)) <= 1e-12 * lay.total


def test_entropy_examples():
    lay = HilbertLayout((2,))
    assert von_neumann_entropy(DensityMatrix(lay, np.diag([1.0, 0.0]))) == 0.0
    assert von_neumann_entropy(DensityMatrix(lay, np.eye(2) / 2)) == pytest.approx(math.log(2), abs=1e-14)
    s = von_neumann_entropy(DensityMatrix(lay, np.diag([0.9, 0.1])))
    assert s == pytest.approx(-0.9 * math.log(0.9) - 0.1 * math.log(0.1), abs=1e-14)
    assert s == pytest.approx(0.3251, abs=1e-4)


def test_entropy_clamping_warns_only_below_threshold():
    lay = HilbertLayout((2,))
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("error")
        von_neumann_entropy(DensityMatrix(lay, np.diag([1 + 5e-11, -5e-11])))
    with pytest.warns(RuntimeWarning):
        s = von_neumann_entropy(DensityMatrix(lay, np.diag([1.001, -1e-3])))
    assert s == pytest.approx(-1.001 * math.log(1.001))


@given(n=st.integers(2, 5), seed=st.integers(0, 2**32 - 1))
def test_entropy_unitary_invariance(n, seed):
    rng = np.random.default_rng(seed)
    rho = random_state(rng, n)
    U = unitary_group.rvs(n, random_state=rng)
    lay = HilbertLayout((n,))
    s1 = von_neumann_entropy(DensityMatrix(lay, rho))
    s2 = von_neumann_entropy(DensityMatrix(lay, U @ rho @ U.conj().T))
    assert abs(s1 - s2) <= 1e-10


def test_expect_examples():
    lay = HilbertLayout((2,))
    up = DensityMatrix(lay, np.diag([1.0, 0.0]))
    plus = DensityMatrix.from_ket(lay, np.array([1, 1]) / math.sqrt(2))
    assert expect(Operator(lay, sigma_z()), up) == pytest.approx(1.0)
    assert expect(Operator(lay, sigma_x()), plus) == pytest.approx(1.0)


def test_expect_thermal_occupation_converges():
    beta, Om = 1.3, 0.8
    oracle = 1 / (math.exp(beta * Om) - 1)
    errs = []
    for N in (4, 8, 16, 32):
        lay = HilbertLayout((1, N))
        p = np.exp(-beta * Om * np.arange(N))
        rho = DensityMatrix(lay, np.diag(p / p.sum()))
        _, _, n = fock_ops(lay, 1)
        val = expect(n, rho)
        assert val == pytest.approx(float(np.sum(np.arange(N) * p / p.sum())), rel=1e-13)
        errs.append(abs(val - oracle))
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-10


@given(dims=dims_strategy, seed=st.integers(0, 2**32 - 1))
def test_expect_identity_equals_trace(dims, seed):
    lay = HilbertLayout(dims)
    M = random_matrix(np.random.default_rng(seed), lay.total)
    rho = DensityMatrix(lay, M)
    assert expect(Operator(lay, identity(lay.total)), rho) == rho.trace()


def test_expect_layout_mismatch():
    with pytest.raises(LayoutError):
        expect(embed_system(HilbertLayout((2, 3)), sigma_z()), DensityMatrix(HilbertLayout((2, 2)), np.eye(4)))
