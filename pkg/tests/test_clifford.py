import numpy as np
import pytest
from hypothesis import given, strategies as st

from hdirac.clifford import (anticommutation_residual, build_gamma, commutator,
                             dirac_adjoint, double_conjugation_sign)


@pytest.mark.parametrize("n", range(2, 7))
def test_anticommutation_and_dimension(n):
    rep = build_gamma(n)
    assert rep.N == 2 ** (n // 2)
    assert anticommutation_residual(rep) <= 1e-14


@pytest.mark.parametrize("n", range(2, 7))
def test_hermiticity_and_beta(n):
    rep = build_gamma(n)
    g = rep.gamma
    assert np.array_equal(g[0].conj().T, -g[0])
    for a in range(1, n):
        assert np.array_equal(g[a].conj().T, g[a])
    assert np.array_equal(rep.beta.conj().T, rep.beta)
    assert np.allclose(rep.beta @ rep.beta, np.eye(rep.N), atol=0)


@pytest.mark.parametrize("n", range(2, 7))
def test_entries_are_units(n):
    vals = set(np.round(build_gamma(n).gamma.ravel(), 12).tolist())
    assert vals <= {0, 1, -1, 1j, -1j}


@pytest.mark.parametrize("n", range(2, 7))
def test_traces(n):
    rep = build_gamma(n)
    g = rep.gamma
    assert np.allclose(np.trace(g, axis1=1, axis2=2), 0)
    tr2 = np.einsum("aij,bji->ab", g, g)
    assert np.allclose(tr2, rep.N * rep.eta)


def test_n2_offdiagonal():
    g = build_gamma(2).gamma
    assert build_gamma(2).N == 2
    assert np.array_equal(g[0] @ g[1] + g[1] @ g[0], np.zeros((2, 2)))


def test_n5_last_gamma_is_chirality_product():
    rep = build_gamma(5)
    assert rep.N == 4
    prod = np.linalg.multi_dot(rep.gamma[:4])
    g4 = rep.gamma[4]
    k = np.unravel_index(np.argmax(np.abs(prod)), prod.shape)
    c = g4[k] / prod[k]
    assert np.allclose(g4, c * prod, atol=1e-14)
    assert anticommutation_residual(rep) <= 1e-14


def test_n_below_two_rejected():
    with pytest.raises(ValueError):
        build_gamma(1)


def test_basis_spinor_conjugate():
    rep = build_gamma(4)
    e1 = np.zeros(4, complex)
    e1[0] = 1
    assert np.allclose(dirac_adjoint(rep, e1), -1j * e1 @ rep.gamma[0])


@pytest.mark.parametrize("n", range(2, 7))
def test_double_conjugation_sign(n):
    assert double_conjugation_sign(build_gamma(n)) == 1


@given(st.integers(2, 6), st.integers(0, 10**6))
def test_double_conjugation_identity(n, seed):
    rep = build_gamma(n)
    rng = np.random.default_rng(seed)
    z = rng.normal(size=rep.N) + 1j * rng.normal(size=rep.N)
    M = rng.normal(size=(rep.N, rep.N)) + 1j * rng.normal(size=(rep.N, rep.N))
    back = dirac_adjoint(rep, dirac_adjoint(rep, z, "spinor"), "cospinor")
    assert np.allclose(back, z)
    assert np.allclose(dirac_adjoint(rep, dirac_adjoint(rep, M)), M)


@pytest.mark.parametrize("n", range(2, 7))
def test_adjoint_of_gammas(n):
    rep = build_gamma(n)
    for a in range(n):
        assert np.array_equal(dirac_adjoint(rep, rep.gamma[a]), -rep.gamma[a])


@pytest.mark.parametrize("n", range(2, 7))
def test_commutators_anti_self_adjoint(n):
    rep = build_gamma(n)
    g = rep.gamma
    for a in range(n):
        for b in range(n):
            c = commutator(g[a], g[b])
            assert np.allclose(dirac_adjoint(rep, c), -c, atol=1e-14)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        dirac_adjoint(build_gamma(4), np.ones(2))
