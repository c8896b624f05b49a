import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hdirac.grassmann import (GrassmannPoly, KernelMatrix, KernelRoleError, ModeCountError,
                              algebra_suite, constant, func_derivative, gamma_map, generator,
                              left_derivative, linear, peierls, star, wedge)

M = 4


def _perm_sign(seq):
    """Sign of the sorting permutation by explicit bubble sort (brute-force oracle)."""
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for j in range(len(seq) - 1 - i):
            if seq[j] > seq[j + 1]:
                seq[j], seq[j + 1] = seq[j + 1], seq[j]
                sign = -sign
    return sign


def _brute_wedge(F, G):
    out = {}
    for (k1, a), c1 in F.terms.items():
        for (k2, b), c2 in G.terms.items():
            seq = a + b
            if len(set(seq)) < len(seq):
                continue
            key = (k1 + k2, tuple(sorted(seq)))
            out[key] = out.get(key, 0) + _perm_sign(seq) * c1 * c2
    return GrassmannPoly(F.M, out)


def _random_poly(rng, grades=None):
    terms = {}
    for r in range(M + 1) if grades is None else grades:
        for mono in itertools.combinations(range(M), r):
            if rng.random() < 0.6:
                terms[(0, mono)] = rng.normal() + 1j * rng.normal()
    return GrassmannPoly(M, terms)


def _antisym(rng):
    X = rng.normal(size=(M, M)) + 1j * rng.normal(size=(M, M))
    return X - X.T


def test_generators_anticommute():
    p1, p2 = generator(M, 0), generator(M, 1)
    assert wedge(p1, p2).allclose(wedge(p2, p1) * -1)
    assert wedge(p1, p1).max_abs() == 0


def test_wedge_example_against_brute_force():
    F = generator(M, 0) * 2 + wedge(generator(M, 1), generator(M, 2)) * 3
    G = generator(M, 3)
    assert wedge(F, G).allclose(_brute_wedge(F, G), tol=0)
    assert wedge(F, G).terms == {(0, (0, 3)): 2, (0, (1, 2, 3)): 3}


@given(st.integers(0, 10**6))
def test_wedge_graded_commutative_and_associative(seed):
    rng = np.random.default_rng(seed)
    ra, rb = rng.integers(0, M + 1, size=2)
    F = _random_poly(rng, [ra])
    G = _random_poly(rng, [rb])
    H = _random_poly(rng)
    assert wedge(F, G).allclose(wedge(G, F) * (-1) ** (ra * rb))
    assert wedge(wedge(F, G), H).allclose(wedge(F, wedge(G, H)))
    assert wedge(F, G).allclose(_brute_wedge(F, G))
    assert wedge(constant(M), H).allclose(H)


def test_mode_count_mismatch():
    with pytest.raises(ModeCountError):
        wedge(generator(3, 0), generator(4, 0))


def test_left_derivative_examples():
    F = wedge(generator(M, 0), generator(M, 1))
    e0 = np.eye(M)[0]
    assert func_derivative(F, e0).allclose(generator(M, 1), tol=0)
    assert func_derivative(constant(M, 2.0), e0).max_abs() == 0


@given(st.integers(0, 10**6))
def test_derivative_leibniz_rule(seed):
    rng = np.random.default_rng(seed)
    r = int(rng.integers(0, M + 1))
    F = _random_poly(rng, [r])
    G = _random_poly(rng)
    for i in range(M):
        lhs = left_derivative(wedge(F, G), i)
        rhs = wedge(left_derivative(F, i), G) + wedge(F, left_derivative(G, i)) * (-1) ** r
        assert lhs.allclose(rhs)


@given(st.integers(0, 10**6))
def test_func_derivative_defining_relation(seed):
    # F(u ^ B): pairing the linear field u with a cubic F is the directional left derivative
    rng = np.random.default_rng(seed)
    F = _random_poly(rng, [3])
    u = rng.normal(size=M) + 1j * rng.normal(size=M)
    dF = func_derivative(F, u)
    # oracle: for each monomial, move each generator to the front with its permutation sign
    out = {}
    for (k, mono), c in F.terms.items():
        for p, i in enumerate(mono):
            rest = mono[:p] + mono[p + 1:]
            sign = _perm_sign((i,) + rest) * _perm_sign(mono)
            out[(k, rest)] = out.get((k, rest), 0) + sign * u[i] * c
    assert dF.allclose(GrassmannPoly(M, out))


def test_peierls_examples():
    rng = np.random.default_rng(3)
    S = rng.normal(size=(M, M))
    S = S + S.T
    u, v = rng.normal(size=M), rng.normal(size=M)
    br = peierls(linear(M, u), linear(M, v), KernelMatrix(S, "S"))
    assert br.allclose(constant(M, u @ S @ v))
    # disjoint supports contracted by a zero block
    Z = np.zeros((M, M))
    Z[:2, :2] = S[:2, :2]
    u2 = np.array([1.0, 2.0, 0, 0])
    v2 = np.array([0, 0, 1.0, -1.0])
    assert peierls(linear(M, u2), linear(M, v2), KernelMatrix(Z, "S")).max_abs() == 0


def test_kernel_role_checks():
    K = KernelMatrix(np.eye(M), "omega")
    with pytest.raises(KernelRoleError):
        peierls(generator(M, 0), generator(M, 1), K)
    with pytest.raises(KernelRoleError):
        star(generator(M, 0), generator(M, 1), KernelMatrix(np.eye(M), "S"))
    with pytest.raises(KernelRoleError):
        gamma_map(generator(M, 0), KernelMatrix(np.eye(M), "half_iS"))


def test_star_leading_order_is_wedge():
    rng = np.random.default_rng(5)
    S = rng.normal(size=(M, M))
    S = S + S.T
    K = KernelMatrix(0.5j * S, "half_iS")
    F, G = _random_poly(rng), _random_poly(rng)
    assert star(F, G, K).hbar_part(0).allclose(wedge(F, G))


def test_linear_field_car():
    rng = np.random.default_rng(7)
    S = rng.normal(size=(M, M))
    S = S + S.T
    K = KernelMatrix(0.5j * S, "half_iS")
    u, v = rng.normal(size=M), rng.normal(size=M)
    pu, pv = linear(M, u), linear(M, v)
    anti = star(pu, pv, K) + star(pv, pu, K)
    assert anti.allclose(GrassmannPoly(M, {(1, ()): 1j * u @ S @ v}), tol=1e-14)


def test_gamma_map_examples():
    rng = np.random.default_rng(11)
    K = _antisym(rng)
    F = wedge(generator(M, 1), generator(M, 3))
    assert gamma_map(F, KernelMatrix(np.zeros((M, M)), "omega_a")).allclose(F, tol=0)
    out = gamma_map(F, KernelMatrix(K, "omega_a"))
    assert out.allclose(F + GrassmannPoly(M, {(1, ()): K[1, 3]}))


@given(st.integers(0, 10**6))
def test_gamma_map_cocycle(seed):
    rng = np.random.default_rng(seed)
    K1, K2 = _antisym(rng), _antisym(rng)
    F = _random_poly(rng)
    a = gamma_map(gamma_map(F, KernelMatrix(K2, "omega_a")), KernelMatrix(K1, "omega_a"))
    b = gamma_map(F, KernelMatrix(K1 + K2, "omega_a"))
    assert a.allclose(b, tol=1e-10)


def test_exhaustive_suite():
    res = algebra_suite(M=4)
    for name, value in res.items():
        assert value == 0.0, name
