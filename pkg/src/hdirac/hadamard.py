"""Hadamard coefficients, Riesz and parametrix kernels, and parametrix assembly.

Kernel conventions
------------------
``C(alpha, n)`` and ``C'(j, n)`` use reciprocal-gamma continuation, so poles of
the factorials in the denominator give 0.  ``R_+`` is supported where ``x'`` lies
in the causal past of ``x`` (``Gamma > 0`` and ``theta0 = t(x) - t(x') > 0``).

The branch of ``(-Gamma -+ i0 theta0)`` in ``T_+-`` is resolved by ``sign(theta0)``.
For even ``n`` the logarithmic kernels use ``(-Gamma +- i0 theta0)`` so that
``T_+(j) - T_-(j) = 2 pi i (R_+(j) - R_-(j))`` holds and ``T_+`` is the boundary
value from the lower half plane in ``t(x) - t(x')`` (positive frequency).  For
odd ``n`` the prefactors and branch are used as displayed; the relation then
holds for ``j > n`` and ``j = n - 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import rgamma

from .clifford import build_gamma
from .exprjet import (Jet, Num, compose, evaluate, free_variables, jet_einsum, jet_sum,
                      variables)
from .geometry import (P_apply, connection_jets, connection_values,
                       curvature_package, field_jets, grad, node_points, shoot, stack_jets,
                       transport)
from .exprjet import _tables

__all__ = [
    "C_const", "C_prime", "riesz_R", "riesz_R_flag", "kernel_derivs", "singular_T",
    "coinciding_V1", "transport_V", "coinciding_V1_transport", "static_flat_V_jets",
    "is_static_flat", "ParametrixEval", "assemble_parametrix", "parametrix_jets",
    "OnConeError",
]


class OnConeError(ValueError):
    pass


def C_const(alpha, n):
    """C(alpha, n) = 2^(1-alpha) pi^((2-n)/2) / ((alpha/2 - 1)! ((alpha-n)/2)!)."""
    return (2.0 ** (1 - alpha) * math.pi ** ((2 - n) / 2)
            * rgamma(alpha / 2) * rgamma((alpha - n) / 2 + 1))


def C_prime(j, n):
    """C'(j, n) = -2^(1-j) pi^((2-n)/2) ((n-j)/2 - 1)! / (j/2 - 1)!, for j < n."""
    if j >= n:
        raise ValueError("C'(j, n) is only used for j < n")
    return -(2.0 ** (1 - j) * math.pi ** ((2 - n) / 2) * gamma_fn((n - j) / 2) * rgamma(j / 2))


def _check_off_cone(Gamma, tol=0.0):
    G = np.asarray(Gamma)
    if np.any(np.abs(G) <= tol):
        raise OnConeError("kernel evaluated on the light cone")


def riesz_R(alpha, n, Gamma, theta0, sign=+1):
    """R_+ (sign=+1) or R_- (sign=-1) off the light cone."""
    Gamma = np.asarray(Gamma, float)
    theta0 = np.asarray(theta0, float)
    _check_off_cone(Gamma)
    inside = (Gamma > 0) & (np.sign(theta0) == sign)
    return riesz_R_flag(alpha, n, Gamma, inside)


def riesz_R_flag(alpha, n, Gamma, inside):
    """C(alpha, n) Gamma^((alpha - n)/2) where ``inside`` holds, else 0."""
    Gamma = np.asarray(Gamma, float)
    _check_off_cone(Gamma)
    inside = np.asarray(inside, bool)
    c = C_const(alpha, n)
    with np.errstate(invalid="ignore", divide="ignore"):
        val = c * np.abs(Gamma) ** ((alpha - n) / 2)
    return np.where(inside, val, 0.0)


def _power_series(base, p, k):
    """Derivatives d^r/dG^r of (base)^p where base = -G, r = 0..k."""
    out = []
    coef = 1.0
    for r in range(k + 1):
        out.append(coef * (-1) ** r * base ** (p - r))
        coef *= (p - r)
    return out


def kernel_derivs(j, n, sign, Gamma, theta0=0.0, Lam=1.0, k=0):
    """Derivatives with respect to Gamma of T_sign(j), orders 0..k.

    ``Gamma`` may be complex (analytic continuation off the real section); the
    branch is then the principal one of ``-Gamma`` and ``theta0`` is ignored.
    """
    if j % 2:
        raise ValueError("j must be even")
    G = np.asarray(Gamma)
    _check_off_cone(G)
    theta0 = np.asarray(theta0, float)
    if np.iscomplexobj(G):
        mG = -G.astype(complex)
    else:
        # -Gamma -+ i0 theta0 on the real section
        G = G.astype(float)
        timelike = G > 0
        if n % 2 == 0:
            phase = sign * np.sign(theta0) * np.pi  # even n: (-Gamma +- i0 theta0)
        else:
            phase = -sign * np.sign(theta0) * np.pi
        mG = np.where(timelike, G * np.exp(1j * phase), -G + 0j)
    p = (j - n) / 2
    if n % 2 == 1:
        pref = math.pi * C_const(j, n)
        if j > n:
            pref *= (-1) ** (j // 2 - n // 2)
        return [pref * d for d in _power_series(mG, p, k)]
    if j < n:
        return [C_prime(j, n) * d for d in _power_series(mG, p, k)]
    # even n, j >= n: C Gamma^p log(mG / Lam^2), integer p >= 0
    c = C_const(j, n)
    p = int(p)
    logv = np.log(mG / Lam ** 2)
    Gc = -mG  # Gamma on the chosen branch sheet (equals Gamma)
    # Leibniz: d^r (G^p log(-G)) = sum_s binom(r,s) d^s(G^p) d^(r-s) log(-G)
    dpow = []
    coef = 1.0
    for s in range(k + 1):
        dpow.append(coef * Gc ** (p - s) if p - s >= 0 else np.zeros_like(Gc))
        coef *= (p - s)
    dlog = [logv] + [(-1) ** (r - 1) * math.factorial(r - 1) / Gc ** r for r in range(1, k + 1)]
    out = []
    for r in range(k + 1):
        out.append(c * sum(math.comb(r, s) * dpow[s] * dlog[r - s] for s in range(r + 1)))
    return out


def singular_T(j, n, sign, Gamma, theta0=0.0, Lam=1.0):
    """T_+ (sign=+1) or T_- (sign=-1) off the light cone."""
    return kernel_derivs(j, n, sign, Gamma, theta0, Lam, 0)[0]


# ---------------------------------------------------------------------------
# coinciding limits in closed form

def coinciding_V1(bg, x, order=5, argument="second"):
    """Closed-form [V1] and [nabla_mu V1] at ``x`` (abelian gauge group).

    ``argument="second"`` differentiates in the base point x' and gives the
    standard displayed form; ``argument="first"`` differentiates in x (the
    argument D-tilde acts on).  The two differ by Synge's rule
    ``[nabla_mu' V] = d_mu [V] - [nabla_mu V]``, which flips the sign of the
    spin-curvature/field-strength divergence term only.
    """
    if argument not in ("first", "second"):
        raise ValueError("argument must be 'first' or 'second'")
    cp = curvature_package(bg, x, order)
    rep = build_gamma(bg.n)
    N = rep.N
    I = np.eye(N)
    gam = cp.gamma_up
    comm = np.einsum("lij,rjk->lrik", gam, gam) - np.einsum("rij,ljk->lrik", gam, gam)
    V1 = (-cp.R / 12 * I - 0.25j * np.einsum("lrij,lr->ij", comm, cp.F) - cp.m ** 2 * I
          + np.einsum("lij,l->ij", gam, cp.dm))
    divF = np.einsum("ls,sml->m", cp.ginv, cp.grad_F)  # nabla^l F_{m l}
    grad = (-cp.grad_R[:, None, None] / 24 * I
            - 0.125j * np.einsum("lrij,mlr->mij", comm, cp.grad_F)
            - (cp.m * cp.dm)[:, None, None] * I
            + 0.5 * np.einsum("lij,ml->mij", gam, cp.hess_m)
            - (cp.div_spin_curvature - 1j * divF[:, None, None] * I) / 6)
    if argument == "first":
        grad = grad + (cp.div_spin_curvature - 1j * divF[:, None, None] * I) / 3
    return V1, grad


# ---------------------------------------------------------------------------
# transport equations along geodesics

def _stencil(n, h):
    offs = [np.zeros(n)]
    for a in range(n):
        for s in (1, -1):
            e = np.zeros(n)
            e[a] = s * h
            offs.append(e)
    for a in range(n):
        for b in range(a + 1, n):
            for sa in (1, -1):
                for sb in (1, -1):
                    e = np.zeros(n)
                    e[a], e[b] = sa * h, sb * h
                    offs.append(e)
    return np.array(offs)


def _jet_from_stencil(vals, n, h):
    """Order-2 jet from values on :func:`_stencil` (axis 0 of ``vals``)."""
    t = _tables(n, 2)
    idx = t["index"]
    c = np.zeros((len(t["mis"]),) + vals.shape[1:], dtype=vals.dtype)
    c[0] = vals[0]
    pos = 1
    for a in range(n):
        fp, fm = vals[pos], vals[pos + 1]
        pos += 2
        e = [0] * n
        e[a] = 1
        c[idx[tuple(e)]] = (fp - fm) / (2 * h)
        e[a] = 2
        c[idx[tuple(e)]] = (fp + fm - 2 * vals[0]) / (2 * h * h)
    for a in range(n):
        for b in range(a + 1, n):
            fpp, fpm, fmp, fmm = vals[pos:pos + 4]
            pos += 4
            e = [0] * n
            e[a] = e[b] = 1
            c[idx[tuple(e)]] = (fpp - fpm - fmp + fmm) / (4 * h * h)
    return Jet(c, n, 2)


def _V0_at(bg, xp, pts, steps):
    v = shoot(bg, xp, pts, steps)
    return transport(bg, xp, v, steps)["V0"]


def transport_V(bg, x, xp, k_max=1, steps=16, h_fd=2e-3):
    """Hadamard coefficients V_0, V_1 at ``x`` (batch (..., n)) for base point ``xp``.

    V_0 solves the homogeneous transport equation; V_1 has source 2 P V_0, with
    P V_0 at the geodesic nodes obtained from a second-order stencil of V_0
    values at neighbouring endpoints.
    """
    x = np.atleast_2d(np.asarray(x, float))
    xp = np.asarray(xp, float)
    B, n = x.shape
    xpb = np.broadcast_to(xp, x.shape)
    v = shoot(bg, xpb, x, steps)
    if k_max == 0:
        return transport(bg, xpb, v, steps)["V0"], None
    nodes = node_points(bg, xpb, v, steps)  # (B, 2 steps + 1, n)
    offs = _stencil(n, h_fd)
    pts = nodes[:, :, None, :] + offs  # (B, M, S, n)
    M, S = pts.shape[1], pts.shape[2]
    base = np.broadcast_to(xp, pts.shape)
    V0s = _V0_at(bg, base.reshape(-1, n), pts.reshape(-1, n), steps)
    N = V0s.shape[-1]
    V0s = V0s.reshape(B, M, S, N, N)
    jet = _jet_from_stencil(np.moveaxis(V0s, 2, 0), n, h_fd)  # shape (B, M, N, N)
    PV0 = np.zeros((B, M, N, N), complex)
    cj = connection_jets(bg, nodes, 2)
    for col in range(N):
        PV0[..., col] = P_apply(bg, jet[..., col], nodes, cj=cj).value
    out = transport(bg, xpb, v, steps, source=lambda j: PV0[:, j])
    return out["V0"], out["W"]


def coinciding_V1_transport(bg, x, hs=(0.08, 0.04, 0.02), steps=16, h_fd=2e-3):
    """[V1] and [nabla_mu V1] from transport solutions at displaced first arguments.

    For each coordinate direction V1(x + h e_mu, x) is computed for h = +-hs, and
    a polynomial in h is fitted; the intercept is [V1] and the slope, plus the
    connection term, is [nabla_mu V1] (derivative in the first argument).
    """
    x = np.asarray(x, float)
    n = x.size
    hs = np.asarray(hs, float)
    signed = np.concatenate([hs, -hs])
    pts = [x + h * np.eye(n)[mu] for mu in range(n) for h in signed]
    _, V1 = transport_V(bg, np.array(pts), x, steps=steps, h_fd=h_fd)
    N = V1.shape[-1]
    V1 = V1.reshape(n, len(signed), N, N)
    deg = min(len(signed) - 1, 4)
    A = np.vander(signed, deg + 1, increasing=True)
    limits, slopes, resid = [], [], []
    for mu in range(n):
        y = V1[mu].reshape(len(signed), -1)
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        limits.append(coef[0].reshape(N, N))
        slopes.append(coef[1].reshape(N, N))
        resid.append(float(np.max(np.abs(A @ coef - y))))
    V1lim = np.mean(limits, axis=0)
    C = connection_values(bg, x)
    grad = np.array(slopes) + np.einsum("mij,jk->mik", C, V1lim)
    return V1lim, grad, dict(spread=float(np.max(np.abs(np.array(limits) - V1lim))),
                             fit_residual=max(resid))


# ---------------------------------------------------------------------------
# static flat backgrounds: closed-form coefficients as jets in both arguments

def is_static_flat(bg):
    """Flat metric, no time dependence, A_0 = 0 and (n == 2 or constant A)."""
    if not bg.is_flat_metric or bg.scale != 1.0:
        return False
    t = bg.coords[0]
    if free_variables(bg.m) & {t}:
        return False
    if not (isinstance(bg.A[0], Num) and bg.A[0].value == 0):
        return False
    for a in bg.A[1:]:
        if t in free_variables(a):
            return False
        if bg.n > 2 and not isinstance(a, Num):
            return False
    return True


_GL = {}


def _gauss(q):
    if q not in _GL:
        u, w = np.polynomial.legendre.leggauss(q)
        _GL[q] = (0.5 * (u + 1), 0.5 * w)
    return _GL[q]


def static_flat_V_jets(bg, x, y, order, nquad=24):
    """V0 and V1 at pairs (x, y) as jets in the 2n variables (x, y).

    Valid when :func:`is_static_flat` holds: then V0 is the U(1) phase
    ``exp(i int_0^1 A(y + s D) . D ds)`` and
    ``V1 = -V0 int_0^1 (m^2 - gamma^a d_a m)(y + s D) ds`` with ``D = x - y``.
    """
    if not is_static_flat(bg):
        raise ValueError("background is not static and flat")
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    x, y = np.broadcast_arrays(x, y)
    n = bg.n
    rep = build_gamma(n)
    V = variables(np.concatenate([x, y], axis=-1), order + 1)
    X, Y = V[:n], V[n:]
    u, w = _gauss(nquad)
    shape_u = (nquad,) + (1,) * (x.ndim - 1)
    ucol = u.reshape(shape_u)
    Z = [Y[i] + (X[i] - Y[i]) * ucol for i in range(n)]
    env = dict(zip(bg.coords, Z))
    s = bg.scale
    phase = None
    for i in range(1, n):
        Ai = evaluate(bg.A[i], env)
        term = (X[i] - Y[i]) * (Ai * s)
        if not isinstance(term, Jet):
            continue
        term = jet_sum(term if term.shape[:1] == (nquad,) else term * np.ones(shape_u), w, 0)
        phase = term if phase is None else phase + term
    if phase is None:
        phase = Jet.const(np.zeros(x.shape[:-1]), 2 * n, order + 1)
    V0 = (phase * 1j).exp().truncate(order)
    mZ = evaluate(bg.m, env)
    if not isinstance(mZ, Jet):
        mZ = Jet.const(np.full((nquad,) + x.shape[:-1], float(mZ)), 2 * n, order + 1)
    mZ = mZ * s
    if mZ.shape[:1] != (nquad,):
        mZ = mZ * np.ones(shape_u)
    N = rep.N
    integrand = Jet.const(np.zeros((nquad,) + x.shape[:-1] + (N, N), complex), 2 * n, order)
    m0 = mZ.truncate(order)
    integrand = integrand + jet_einsum("...,ij->...ij", m0 * m0, np.eye(N))
    for a in range(1, n):
        dma = mZ.partial(a) * (1.0 / ucol)  # d_{x_a} m(Z) = u (d_a m)(Z)
        integrand = integrand - jet_einsum("...,ij->...ij", dma, rep.gamma[a])
    integral = Jet(np.einsum("zq...,q->z...", integrand.c, w), 2 * n, order)
    V1 = -jet_einsum("...,...ij->...ij", V0, integral)
    return V0, V1


# ---------------------------------------------------------------------------
# parametrix assembly

@dataclass(frozen=True, eq=False)
class ParametrixEval:
    x: np.ndarray
    xp: np.ndarray
    k_max: int
    Lam: float
    world_function: float
    theta0: float
    h_plus: np.ndarray
    h_minus: np.ndarray
    H_plus: np.ndarray
    H_minus: np.ndarray
    H_double: np.ndarray
    remainder_r: np.ndarray | None
    V: list


def _coeff_sum(n, sign, Gamma, theta0, Lam, Vs, k):
    """h = 1/(2 pi) sum_j V_j T(2j+2) and d h / d Gamma."""
    h = 0
    dh = 0
    for j, Vj in enumerate(Vs):
        d = kernel_derivs(2 * j + 2, n, sign, Gamma, theta0, Lam, 1)
        h = h + Vj * d[0][..., None, None] / (2 * np.pi)
        dh = dh + Vj * d[1][..., None, None] / (2 * np.pi)
    return h, dh


def parametrix_jets(bg, x, y, order=1, k_max=1, Lam=1.0, time_offset=0.0, sign=+1,
                    nquad=24):
    """h and H = -Dt_x h as jets in the 2n variables (x, y), static flat backgrounds.

    ``time_offset`` (possibly complex) is added to t(x) - t(y) inside the world
    function only; with ``time_offset = -1j * tau`` this gives the Euclidean
    continuation used for point splitting.
    """
    n = bg.n
    rep = build_gamma(n)
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    x, y = np.broadcast_arrays(x, y)
    V0, V1 = static_flat_V_jets(bg, x, y, order + 1, nquad)
    V = variables(np.concatenate([x, y], axis=-1), order + 1)
    D = [V[i] - V[n + i] for i in range(n)]
    D[0] = D[0] + time_offset
    Gam = D[0] * D[0]
    for a in range(1, n):
        Gam = Gam - D[a] * D[a]
    theta0 = x[..., 0] - y[..., 0]
    N = rep.N
    h = None
    for j, Vj in enumerate([jet_einsum("...,ij->...ij", V0, np.eye(N)), V1][:k_max + 1]):
        T = compose(kernel_derivs(2 * j + 2, n, sign, Gam.c[0], theta0, Lam, order + 1), Gam)
        term = jet_einsum("...,...ij->...ij", T, Vj) * (1 / (2 * np.pi))
        h = term if h is None else h + term
    dh = grad(h, range(n))  # (..., i, j, mu)
    k = dh.order
    env = dict(zip(bg.coords, [v.truncate(k) for v in V[:n]]))
    s = bg.scale
    Cmu = []
    for mu in range(n):
        a = evaluate(bg.A[mu], env)
        a = a if isinstance(a, Jet) else Jet.const(np.full(x.shape[:-1], float(a)), 2 * n, k)
        Cmu.append(a * (-1j * s))
    mx = evaluate(bg.m, env)
    mx = mx if isinstance(mx, Jet) else Jet.const(np.full(x.shape[:-1], float(mx)), 2 * n, k)
    mx = mx * s
    h1 = h.truncate(k)
    nab = Jet(np.moveaxis(dh.c, -1, -3), dh.nvars, k)  # (..., mu, i, j)
    nab = nab + stack_jets([jet_einsum("...,...ij->...ij", Cmu[mu], h1) for mu in range(n)],
                           axis=-3)
    H = jet_einsum("mik,...mkj->...ij", rep.gamma.astype(complex), nab)
    H = H + jet_einsum("...,...ij->...ij", mx, h1)
    return h1, H


def assemble_parametrix(bg, x, xp, k_max=1, Lam=1.0, S=None, steps=16, h_fd=2e-3, fd=1e-3):
    """Evaluate h^+-, H^+- = -Dt h^+- and the double-spinor parametrix at a pair.

    Static flat backgrounds use closed-form coefficients; otherwise V_j come from
    the transport equations and their first-argument gradients from central
    differences of step ``fd``.  The singular kernels are differentiated exactly.
    """
    x = np.asarray(x, float)
    xp = np.asarray(xp, float)
    n = bg.n
    rep = build_gamma(n)
    N = rep.N
    if k_max not in (0, 1):
        raise ValueError("k_max must be 0 or 1")

    def pre(a, b, sign):
        if is_static_flat(bg):
            h, H = parametrix_jets(bg, a, b, 1, k_max, Lam, sign=sign)
            Vs = static_flat_V_jets(bg, a, b, 0)
            return h.value, H.value, [Vs[0].value * np.eye(N), Vs[1].value]
        return _generic_pre(bg, a, b, sign, k_max, Lam, steps, h_fd, fd)

    # shoot once for the world function
    v = shoot(bg, xp, x, 4 * steps)
    g_p = field_jets(bg, xp, 0)[0].value
    Gam = float(-np.einsum("mv,m,v->", g_p, v, v))
    theta0 = float(x[0] - xp[0])
    hp, Hp, Vs = pre(x, xp, +1)
    hm, Hm, _ = pre(x, xp, -1)
    hp_r, Hp_r, _ = pre(xp, x, +1)
    hm_r, Hm_r, _ = pre(xp, x, -1)
    beta = rep.beta

    def adj(M):
        return beta @ M.conj().T @ beta

    r = None if S is None else Hp - Hm - 1j * np.asarray(S)
    top = 0.5 * (Hp + adj(Hp_r))
    bottom = -0.5 * (Hm + adj(Hm_r))
    if r is not None:
        corr = 0.25 * (r + adj(r))
        top = top - corr
        bottom = bottom - corr
    Hd = np.zeros((2 * N, 2 * N), complex)
    Hd[:N, N:] = top  # pairs a cospinor at x with a spinor at x'
    Hd[N:, :N] = bottom
    return ParametrixEval(x=x, xp=xp, k_max=k_max, Lam=Lam, world_function=Gam, theta0=theta0,
                          h_plus=hp, h_minus=hm, H_plus=Hp, H_minus=Hm, H_double=Hd,
                          remainder_r=r, V=Vs)


def _generic_pre(bg, x, xp, sign, k_max, Lam, steps, h_fd, fd):
    n = bg.n
    pts = [x] + [x + s * fd * np.eye(n)[mu] for mu in range(n) for s in (1, -1)]
    V0, V1 = transport_V(bg, np.array(pts), xp, k_max=k_max, steps=steps, h_fd=h_fd)
    Vs = [V0] if k_max == 0 else [V0, V1]
    vals = [V[0] for V in Vs]
    grads = [np.array([(V[1 + 2 * mu] - V[2 + 2 * mu]) / (2 * fd) for mu in range(n)]) for V in Vs]
    v = shoot(bg, xp, x, 4 * steps)
    out = transport(bg, xp, v, 4 * steps)
    g_x = field_jets(bg, x, 0)[0].value
    g_p = field_jets(bg, xp, 0)[0].value
    Gam = float(-np.einsum("mv,m,v->", g_p, v, v))
    dGam = -2 * g_x @ out["v"]  # d_mu Gamma at x = 2 g_{mu v} sigma^v, sigma = -gamma'(1)
    theta0 = float(x[0] - xp[0])
    h = 0
    grad_h = 0
    for j in range(len(Vs)):
        d = kernel_derivs(2 * j + 2, n, sign, Gam, theta0, Lam, 1)
        h = h + vals[j] * d[0] / (2 * np.pi)
        grad_h = grad_h + (grads[j] * d[0] + vals[j][None] * d[1] * dGam[:, None, None]) / (2 * np.pi)
    cj = connection_jets(bg, x, 1)
    C = cj.C.value
    gam = cj.gamma_up.value
    m = float(cj.m.value)
    nab = grad_h + np.einsum("mij,jk->mik", C, h)
    H = np.einsum("mij,mjk->ik", gam, nab) + m * h
    return h, H, vals
