"""Finite-mode Grassmann algebra: wedge, derivatives, Peierls bracket and star products.

A polynomial over M generators ``psi_0 .. psi_{M-1}`` is a map from
``(k, (i_1 < ... < i_r))`` to complex coefficients, where ``k`` is the power of
the formal parameter hbar.  Generators are the linear fields ``psi(e_i)``.

Conventions
-----------
* Left derivative: ``d_i (psi_i ^ X) = X``; the derivative along ``u`` is
  ``sum_i u_i d_i`` and realizes ``F^(1)(B)(u) = F(u ^ B)``.
* Peierls bracket: ``{F, G} = (-1)^(|F|+1) sum_ij S_ij d_i F ^ d_j G`` per grade.
* ``Gamma_K F = 1/2 sum_ab K_ab d_b d_a F`` so that ``Gamma_K (psi_i ^ psi_j) = K_ij``
  for antisymmetric ``K``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

__all__ = ["GrassmannPoly", "KernelMatrix", "ModeCountError", "KernelRoleError", "wedge",
           "left_derivative", "func_derivative", "peierls", "star", "gamma_map",
           "involution", "generator", "constant", "linear", "algebra_suite"]

_TOL = 1e-14


class ModeCountError(ValueError):
    pass


class KernelRoleError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GrassmannPoly:
    M: int
    terms: dict = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for (k, mono), c in self.terms.items():
            mono = tuple(mono)
            if any(b <= a for a, b in zip(mono, mono[1:])):
                raise ValueError("monomials must be strictly increasing")
            if mono and not (0 <= mono[0] and mono[-1] < self.M):
                raise ValueError("generator index out of range")
            if abs(c) > _TOL:
                clean[(int(k), mono)] = complex(c)
        object.__setattr__(self, "terms", clean)

    def _same(self, other):
        if other.M != self.M:
            raise ModeCountError("polynomials over different generator counts")

    def __add__(self, other):
        if not isinstance(other, GrassmannPoly):
            other = constant(self.M, other)
        self._same(other)
        out = dict(self.terms)
        for key, c in other.terms.items():
            out[key] = out.get(key, 0) + c
        return GrassmannPoly(self.M, out)

    __radd__ = __add__

    def __neg__(self):
        return self * -1

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, c):
        if isinstance(c, GrassmannPoly):
            raise TypeError("use wedge or star for products of polynomials")
        return GrassmannPoly(self.M, {k: v * c for k, v in self.terms.items()})

    __rmul__ = __mul__

    def grade_part(self, r):
        return GrassmannPoly(self.M, {k: v for k, v in self.terms.items() if len(k[1]) == r})

    def hbar_part(self, k):
        return GrassmannPoly(self.M, {(0, m): v for (kk, m), v in self.terms.items() if kk == k})

    def grades(self):
        return sorted({len(m) for _, m in self.terms})

    def is_homogeneous(self):
        return len(self.grades()) <= 1

    @property
    def grade(self):
        g = self.grades()
        if len(g) > 1:
            raise ValueError("polynomial is not homogeneous")
        return g[0] if g else 0

    def max_abs(self):
        return max((abs(c) for c in self.terms.values()), default=0.0)

    def allclose(self, other, tol=1e-12):
        return (self - other).max_abs() <= tol

    def __repr__(self):
        return f"GrassmannPoly(M={self.M}, terms={self.terms})"


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """An M x M kernel with a role tag: ``S``, ``half_iS``, ``omega``, ``omega_a``, ``omega_minus_H``."""

    matrix: np.ndarray
    role: str

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("kernel must be square")
        object.__setattr__(self, "matrix", m)


def generator(M, i):
    return GrassmannPoly(M, {(0, (i,)): 1.0})


def constant(M, c=1.0):
    return GrassmannPoly(M, {(0, ()): c})


def linear(M, u):
    """The linear field psi(u) = sum_i u_i psi_i."""
    u = np.asarray(u)
    if u.shape != (M,):
        raise ModeCountError("mode vector has the wrong length")
    return GrassmannPoly(M, {(0, (i,)): u[i] for i in range(M)})


@lru_cache(maxsize=None)
def _mono_product(a, b):
    """Sign and sorted monomial of a ^ b, or (0, None) if they share a generator."""
    if set(a) & set(b):
        return 0, None
    seq = list(a + b)
    inv = sum(1 for i in range(len(seq)) for j in range(i + 1, len(seq)) if seq[i] > seq[j])
    return (-1) ** inv, tuple(sorted(seq))


def wedge(F, G, cap=None):
    """Graded-commutative product; hbar degrees add and are cut above ``cap``."""
    F._same(G)
    out = {}
    for (k1, a), c1 in F.terms.items():
        for (k2, b), c2 in G.terms.items():
            if cap is not None and k1 + k2 > cap:
                continue
            s, m = _mono_product(a, b)
            if s:
                key = (k1 + k2, m)
                out[key] = out.get(key, 0) + s * c1 * c2
    return GrassmannPoly(F.M, out)


def left_derivative(F, i):
    out = {}
    for (k, mono), c in F.terms.items():
        if i in mono:
            p = mono.index(i)
            key = (k, mono[:p] + mono[p + 1:])
            out[key] = out.get(key, 0) + (-1) ** p * c
    return GrassmannPoly(F.M, out)


def func_derivative(F, u):
    """Left derivative along the mode vector ``u``: the coefficient of F(u ^ B)."""
    u = np.asarray(u)
    if u.shape != (F.M,):
        raise ModeCountError("mode vector has the wrong length")
    out = GrassmannPoly(F.M)
    for i in range(F.M):
        if u[i] != 0:
            out = out + left_derivative(F, i) * u[i]
    return out


def _check_role(K, allowed, M):
    if not isinstance(K, KernelMatrix):
        raise KernelRoleError("expected a KernelMatrix")
    if K.role not in allowed:
        raise KernelRoleError(f"kernel role {K.role!r} not in {allowed}")
    if K.matrix.shape[0] != M:
        raise ModeCountError("kernel size does not match the generator count")


def _contract(F, G, K, cap):
    """sum_ij K_ij d_i F ^ d_j G on a homogeneous F (no sign)."""
    dF = [left_derivative(F, i) for i in range(F.M)]
    dG = [left_derivative(G, j) for j in range(G.M)]
    out = GrassmannPoly(F.M)
    for i, j in zip(*np.nonzero(K)):
        if dF[i].terms and dG[j].terms:
            out = out + wedge(dF[i], dG[j], cap) * K[i, j]
    return out


def peierls(F, G, S):
    """Peierls bracket against the S-role kernel."""
    _check_role(S, ("S",), F.M)
    F._same(G)
    out = GrassmannPoly(F.M)
    for r in F.grades():
        out = out + _contract(F.grade_part(r), G, S.matrix, None) * (-1) ** (r + 1)
    return out


def _gamma_tensor(pairs, K, M):
    """One application of Gamma^(x) to a list of (coef, hbar, a, b) monomial pairs."""
    out = {}
    for (k, a, b), c in pairs.items():
        sign = (-1) ** (len(a) + 1)
        for p, i in enumerate(a):
            da = a[:p] + a[p + 1:]
            for q, j in enumerate(b):
                kij = K[i, j]
                if kij == 0:
                    continue
                key = (k, da, b[:q] + b[q + 1:])
                out[key] = out.get(key, 0) + sign * (-1) ** (p + q) * kij * c
    return out


def star(F, G, K, cap=None):
    """F * G = wedge exp(hbar Gamma^(x)_K)(F (x) G), exact by nilpotency.

    ``K`` has role ``half_iS`` (the kernel (i/2) S) or ``omega``.  ``cap`` limits
    the total hbar degree of the result.
    """
    _check_role(K, ("half_iS", "omega"), F.M)
    F._same(G)
    Km = K.matrix
    pairs = {}
    for (k1, a), c1 in F.terms.items():
        for (k2, b), c2 in G.terms.items():
            key = (k1 + k2, a, b)
            pairs[key] = pairs.get(key, 0) + c1 * c2
    out = {}
    order = 0
    while pairs:
        for (k, a, b), c in pairs.items():
            kk = k + order
            if cap is not None and kk > cap:
                continue
            s, m = _mono_product(a, b)
            if s:
                key = (kk, m)
                out[key] = out.get(key, 0) + s * c / math.factorial(order)
        pairs = {key: c for key, c in _gamma_tensor(pairs, Km, F.M).items() if abs(c) > _TOL}
        order += 1
    return GrassmannPoly(F.M, out)


def _gamma_once(F, K):
    out = {}
    for (k, mono), c in F.terms.items():
        for p, a in enumerate(mono):
            rest = mono[:p] + mono[p + 1:]
            for q, b in enumerate(rest):
                kab = K[a, b]
                if kab == 0:
                    continue
                key = (k + 1, rest[:q] + rest[q + 1:])
                out[key] = out.get(key, 0) + 0.5 * (-1) ** (p + q) * kab * c
    return GrassmannPoly(F.M, out)


def gamma_map(F, K, cap=None, power=1.0):
    """exp(power * hbar * Gamma_K) F, with Gamma_K = 1/2 sum K_ab d_b d_a."""
    _check_role(K, ("omega_a", "omega_minus_H", "omega"), F.M)
    out = F
    term = F
    n = 1
    while term.terms:
        term = _gamma_once(term, K.matrix) * (power / n)
        if cap is not None:
            term = GrassmannPoly(F.M, {k: v for k, v in term.terms.items() if k[0] <= cap})
        out = out + term
        n += 1
    return out


def involution(F, P, graded=False):
    """F* for the conjugation psi_i* = sum_j P_ij psi_j, extended conj-linearly.

    By default the extension reverses products, (F ^ G)* = G* ^ F*, which gives
    (F * G)* = G* * F* for kernels with conj(omega) = P omega^T P^T.  With
    ``graded=True`` it preserves the order, giving
    (F * G)* = (-1)^(|F||G|) G* * F* for kernels with conj(omega) = -P omega^T P^T.
    """
    P = np.asarray(P)
    out = GrassmannPoly(F.M)
    images = [linear(F.M, P[i]) for i in range(F.M)]
    for (k, mono), c in F.terms.items():
        t = GrassmannPoly(F.M, {(k, ()): np.conj(c)})
        for i in mono:
            t = wedge(t, images[i])
        r = len(mono)
        out = out + (t if graded else t * (-1) ** (r * (r - 1) // 2))
    return out


# ---------------------------------------------------------------------------
# exhaustive identity suite

def _basis(M):
    return [GrassmannPoly(M, {(0, m): 1.0}) for r in range(M + 1)
            for m in itertools.combinations(range(M), r)]


def _conjugation_pair(M):
    """An involutive permutation pairing generators (spinor with cospinor components)."""
    P = np.zeros((M, M))
    for i in range(0, M - 1, 2):
        P[i, i + 1] = P[i + 1, i] = 1
    if M % 2:
        P[M - 1, M - 1] = 1
    return P


def algebra_suite(M=4, seed=0):
    """Run the exhaustive M-generator identity checks; returns {name: max residual}."""
    rng = np.random.default_rng(seed)
    # small Gaussian-integer kernels keep every product and 1/k! (k <= M/2) exact for M <= 5
    gauss = lambda *shape: rng.integers(-3, 4, size=shape) + 1j * rng.integers(-3, 4, size=shape)  # noqa: E731
    P = _conjugation_pair(M)
    X = gauss(M, M)
    # conjugation compatibility: conj(omega) = P omega^T P^T for omega = omega_a + (i/2) S
    S = X + X.T
    S = S - P @ S.conj() @ P.T
    Y = gauss(M, M)
    wa = Y - Y.T
    wa = wa - P @ wa.conj() @ P.T
    omega = wa + 0.5j * S
    kS = KernelMatrix(S, "S")
    kh = KernelMatrix(0.5j * S, "half_iS")
    kw = KernelMatrix(omega, "omega")
    ka = KernelMatrix(wa, "omega_a")
    basis = _basis(M)
    res = {}

    r = 0.0
    for a in basis:
        for b in basis:
            for c in basis:
                r = max(r, (star(star(a, b, kh), c, kh) - star(a, star(b, c, kh), kh)).max_abs())
    res["associativity"] = r

    r = 0.0
    for a in basis:
        for b in basis:
            lhs = star(a, b, kw)
            rhs = gamma_map(star(gamma_map(a, ka, power=-1), gamma_map(b, ka, power=-1), kh), ka)
            r = max(r, (lhs - rhs).max_abs())
    res["star_omega_equivalence"] = r

    r = 0.0
    for a in basis:
        for b in basis:
            s = (-1) ** (a.grade * b.grade)
            comm = star(a, b, kh) - star(b, a, kh) * s
            r = max(r, (comm.hbar_part(1) - peierls(a, b, kS) * 1j).max_abs())
            r = max(r, (star(a, b, kh).hbar_part(0) - wedge(a, b)).max_abs())
    res["deformation_quantization"] = r

    r = 0.0
    rg = 0.0
    kg = KernelMatrix(1j * omega, "omega")  # conj(i omega) = -P (i omega)^T P^T
    for a in basis:
        for b in basis:
            s = (-1) ** (a.grade * b.grade)
            lhs = involution(star(a, b, kw), P)
            rhs = star(involution(b, P), involution(a, P), kw)
            r = max(r, (lhs - rhs).max_abs())
            lhs = involution(star(a, b, kg), P, graded=True)
            rhs = star(involution(b, P, graded=True), involution(a, P, graded=True), kg) * s
            rg = max(rg, (lhs - rhs).max_abs())
    res["involution"] = r
    res["involution_graded"] = rg

    r = 0.0
    for _ in range(20):
        u, v = gauss(M), gauss(M)
        pu, pv = linear(M, u), linear(M, v)
        anti = star(pu, pv, kw) + star(pv, pu, kw)
        r = max(r, (anti - GrassmannPoly(M, {(1, ()): 1j * u @ S @ v})).max_abs())
    res["car"] = r

    r = 0.0
    for a in basis:
        for b in basis:
            s = (-1) ** (a.grade * b.grade)
            r = max(r, (peierls(a, b, kS) + peierls(b, a, kS) * s).max_abs())
    res["peierls_antisymmetry"] = r
    return res
