"""Gamma matrices for signature (-, +, ..., +) and the spinor conjugations.

Conventions: ``gamma[0]`` squares to ``-1`` and is anti-Hermitian, the spatial
``gamma[a]`` square to ``+1`` and are Hermitian.  ``beta = -i gamma[0]`` is then
Hermitian with ``beta @ beta = 1`` and the fiber inner product is
``(v, w) = <v, beta w>``.  All entries lie in {0, +-1, +-i}.

Dirac conjugation:

* spinor ``z`` (shape ``(N,)``) maps to the cospinor ``z+ = -i z* gamma[0] = conj(z) @ beta``;
* cospinor ``z'`` maps to the spinor ``-i gamma[0] z'* = beta @ conj(z')``;
* a matrix ``M`` maps to ``beta M^dagger beta``.

With these choices both double conjugations are the identity (sign +1), which
is what :func:`double_conjugation_sign` computes from the representation.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = ["GammaRep", "build_gamma", "dirac_adjoint", "commutator",
           "anticommutation_residual", "double_conjugation_sign", "minkowski"]

_I2 = np.eye(2, dtype=complex)
_SX = np.array([[0, 1], [1, 0]], dtype=complex)
_SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
_SZ = np.array([[1, 0], [0, -1]], dtype=complex)


def minkowski(n):
    eta = np.eye(n)
    eta[0, 0] = -1.0
    return eta


def _euclidean(d):
    """Hermitian generators of the Euclidean Clifford algebra Cl(d), one irreducible block."""
    if d == 1:
        return [np.ones((1, 1), dtype=complex)]
    if d == 2:
        return [_SX, _SY]
    if d % 2 == 1:
        even = _euclidean(d - 1)
        chi = np.linalg.multi_dot(even) if len(even) > 1 else even[0]
        chi = chi * (1j) ** ((d - 1) // 2)
        return even + [chi]
    prev = _euclidean(d - 2)
    eye = np.eye(prev[0].shape[0], dtype=complex)
    return [np.kron(_SX, g) for g in prev] + [np.kron(_SY, eye), np.kron(_SZ, eye)]


@dataclass(frozen=True, eq=False)
class GammaRep:
    n: int
    N: int
    gamma: np.ndarray  # shape (n, N, N)
    beta: np.ndarray
    eta: np.ndarray

    @property
    def gamma_upper(self):
        """Alias: the stored matrices already carry an upper index."""
        return self.gamma

    @property
    def gamma_lower(self):
        return np.einsum("ab,bij->aij", self.eta, self.gamma)

    def sigma(self):
        """Commutators ``[gamma^a, gamma^b]`` with shape (n, n, N, N)."""
        g = self.gamma
        return np.einsum("aij,bjk->abik", g, g) - np.einsum("bij,ajk->abik", g, g)


@lru_cache(maxsize=None)
def build_gamma(n):
    """Irreducible gamma matrices of Cl(1, n-1) with spinor dimension 2^(n//2)."""
    n = int(n)
    if n < 2:
        raise ValueError("dimension must be at least 2")
    # Euclidean generators (Hermitian, square +1); gamma0 = i e_1.  For odd n
    # the last generator is the chirality product of the others.
    e = _euclidean(n)
    gamma = np.array([1j * e[0]] + list(e[1:]))
    gamma = np.round(gamma.real) + 1j * np.round(gamma.imag)
    gamma.setflags(write=False)
    beta = -1j * gamma[0]
    beta.setflags(write=False)
    return GammaRep(n=n, N=gamma.shape[1], gamma=gamma, beta=beta, eta=minkowski(n))


def anticommutation_residual(rep):
    g = rep.gamma
    anti = np.einsum("aij,bjk->abik", g, g) + np.einsum("bij,ajk->abik", g, g)
    target = 2 * np.einsum("ab,ij->abij", rep.eta, np.eye(rep.N))
    return float(np.max(np.abs(anti - target)))


def commutator(a, b):
    return a @ b - b @ a


def dirac_adjoint(rep, obj, kind=None):
    """Dirac conjugate of a spinor, cospinor, or N x N matrix.

    ``kind`` is one of ``"spinor"``, ``"cospinor"``, ``"matrix"``; by default a
    1-d array is treated as a spinor and a 2-d square array as a matrix.
    Trailing batch axes are not supported for vectors: use ``kind`` explicitly.
    """
    obj = np.asarray(obj)
    if kind is None:
        kind = "spinor" if obj.ndim == 1 else "matrix"
    if obj.shape[-1] != rep.N or (kind == "matrix" and obj.shape[-2] != rep.N):
        raise ValueError(f"expected objects of spinor dimension {rep.N}")
    if kind == "spinor":
        return np.conj(obj) @ rep.beta
    if kind == "cospinor":
        return np.conj(obj) @ rep.beta.T
    if kind == "matrix":
        return rep.beta @ np.conj(np.swapaxes(obj, -1, -2)) @ rep.beta
    raise ValueError(f"unknown kind {kind!r}")


def double_conjugation_sign(rep, samples=100, seed=0):
    """The unit scalar ``c`` with ``(z+)+ = c z`` for spinors, measured on random samples."""
    rng = np.random.default_rng(seed)
    ratios = []
    for _ in range(samples):
        z = rng.normal(size=rep.N) + 1j * rng.normal(size=rep.N)
        zz = dirac_adjoint(rep, dirac_adjoint(rep, z, "spinor"), "cospinor")
        k = np.argmax(np.abs(z))
        ratios.append(zz[k] / z[k])
    ratios = np.array(ratios)
    if np.max(np.abs(ratios - ratios[0])) > 1e-12:
        raise RuntimeError("double conjugation is not a fixed scalar")
    return complex(ratios[0])
