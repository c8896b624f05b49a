"""Renormalized Wick squares, current and stress-energy from point-split data.

Conventions.  ``Psi`` is the matrix ``Psi^B_A = <psi^+_A psi^B>`` (so that
``tr(X Psi) = <psi^+ X psi>``), ``Psi_mu = <nabla_mu psi^+ psi>``.  With the
Dirac adjoint ``psi^+ = psi^dagger beta`` the bilinear ``tr(gamma^mu Psi)`` is
imaginary; the real current is ``j^mu = -i tr(gamma^mu Psi)``, normalized so that
``j^0 = <psi^dagger psi>``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .clifford import build_gamma
from .exprjet import Jet, jet_einsum, jet_matinv
from .geometry import field_jets
from .modesum import _m_values, pointsplit_difference

__all__ = ["WickData", "wick_on_grid", "wick_expectations", "current", "stress_energy",
           "trace_identity", "spectral_derivative", "conservation_residual", "current_deltaH",
           "stress_deltaH", "apply_deltaH", "apply_menu", "measure_Q", "measure_Q_stress", "source_term",
           "AmbiguityTensors", "ambiguity_tensors", "divergence_2tensor"]


@dataclass(frozen=True)
class WickData:
    """Wick squares at points ``z`` (coordinates of the background), batched.

    ``Psi`` (P, N, N), ``Psi_mu`` (P, n, N, N), ``dPsi`` (P, n, N, N) = nabla_mu Psi,
    ``m`` (P,) Yukawa values, ``eta`` the (constant) metric, ``errors`` per point.
    """

    z: np.ndarray
    Psi: np.ndarray
    Psi_mu: np.ndarray
    dPsi: np.ndarray
    m: np.ndarray
    metric: np.ndarray
    errors: np.ndarray

    @property
    def n(self):
        return self.metric.shape[0]


def spectral_derivative(f, L, axis=0):
    """d/dx of periodic samples on a uniform grid of period L."""
    f = np.asarray(f)
    K = f.shape[axis]
    k = 2j * np.pi * np.fft.fftfreq(K, d=L / K)
    if K % 2 == 0:
        k[K // 2] = 0.0
    shape = [1] * f.ndim
    shape[axis] = K
    return np.fft.ifft(np.fft.fft(f, axis=axis) * k.reshape(shape), axis=axis)


def wick_on_grid(modes, npts=32, t=0.0, Lam=1.0, taus=None):
    """WickData on the uniform grid x_j = j L / npts of a circle background.

    Spatial derivatives of Psi are spectral over the grid; the time derivative
    vanishes by stationarity.  Values are returned in the background's own
    coordinates (undoing the constant scale of the metric).
    """
    L = modes.L
    xs = np.arange(npts) * L / npts
    parts = [pointsplit_difference(modes, (t, x), Lam=Lam, taus=taus) for x in xs]
    Psi = np.stack([p.value for p in parts])
    dxi = np.stack([p.dxi for p in parts])
    dPsi = np.zeros((npts, 2, 2, 2), complex)
    dPsi[:, 1] = spectral_derivative(Psi, L, axis=0)
    A = np.array([0.0, modes.a])
    # Psi_mu = [d_y M] + i A_mu Psi with d_y = d_z / 2 - d_xi at fixed midpoint
    Psi_mu = 0.5 * dPsi - dxi + 1j * A[None, :, None, None] * Psi[:, None]
    errors = np.array([max(p.fit_residual, p.window_spread) for p in parts])
    wd = WickData(z=np.stack([np.full(npts, t), xs], -1), Psi=Psi, Psi_mu=Psi_mu, dPsi=dPsi,
                  m=_m_values(modes, xs), metric=np.diag([-1.0, 1.0]), errors=errors)
    return _to_background_coords(wd, modes.scale)


def wick_expectations(modes, z, Lam=1.0, h=None, taus=None):
    """WickData at a single point ``z`` (background coordinates).

    nabla Psi is a five-point central difference in x with step ``h``
    (default L / 256) on proper coordinates.
    """
    s = modes.scale
    zp = np.asarray(z, float) / s
    h = modes.L / 256 if h is None else h
    offs = np.array([-2, -1, 0, 1, 2]) * h
    parts = [pointsplit_difference(modes, (zp[0], zp[1] + o), Lam=Lam, taus=taus) for o in offs]
    vals = np.stack([p.value for p in parts])
    c = np.array([1, -8, 0, 8, -1]) / (12 * h)
    dPsi = np.zeros((1, 2, 2, 2), complex)
    dPsi[0, 1] = np.einsum("k,kij->ij", c, vals)
    Psi = vals[2][None]
    A = np.array([0.0, modes.a])
    Psi_mu = 0.5 * dPsi - parts[2].dxi[None] + 1j * A[None, :, None, None] * Psi[:, None]
    wd = WickData(z=zp[None], Psi=Psi, Psi_mu=Psi_mu, dPsi=dPsi, m=_m_values(modes, zp[1:2]),
                  metric=np.diag([-1.0, 1.0]),
                  errors=np.array([max(parts[2].fit_residual, parts[2].window_spread)]))
    return _to_background_coords(wd, s)


def _to_background_coords(wd, s):
    """Proper coordinates X = x / s back to x: covector components pick up 1/s."""
    if s == 1.0:
        return wd
    return replace(wd, z=wd.z * s, Psi_mu=wd.Psi_mu / s, dPsi=wd.dPsi / s,
                   metric=wd.metric / s ** 2)


def current(wd):
    """Real current j^mu = -i tr(gamma^mu Psi), shape (P, n)."""
    return np.real(-1j * np.einsum("mij,pji->pm", _up(wd), wd.Psi))


def _scale(wd):
    return 1.0 / np.sqrt(wd.metric[1, 1])


def _up(wd):
    """gamma^mu = e^mu_a gamma^a for the constant metric s^-2 diag(-1, 1, ...)."""
    return _scale(wd) * build_gamma(wd.n).gamma


def _low(wd):
    return build_gamma(wd.n).gamma_lower / _scale(wd)


def stress_energy(wd):
    """T_{mu nu} assembled from the Wick squares, shape (P, n, n), real part.

    T = tr[ (g_nu Psi_mu + g_mu Psi_nu)/2 - (g_mu nabla_nu Psi + g_nu nabla_mu Psi)/4
            - g_{mu nu} (g^l Psi_l - g^l nabla_l Psi / 2 + m Psi) ].
    """
    gu, gl = _up(wd), _low(wd)
    a = np.einsum("nij,pmji->pmn", gl, wd.Psi_mu)  # tr(g_nu Psi_mu)
    b = np.einsum("mij,pnji->pmn", gl, wd.dPsi)  # tr(g_mu nabla_nu Psi)
    scal = (np.einsum("lij,plji->p", gu, wd.Psi_mu) - 0.5 * np.einsum("lij,plji->p", gu, wd.dPsi)
            + wd.m * np.einsum("pii->p", wd.Psi))
    T = 0.5 * (a + np.swapaxes(a, 1, 2)) - 0.25 * (b + np.swapaxes(b, 1, 2)) \
        - wd.metric[None] * scal[:, None, None]
    return T


def trace_identity(wd):
    """(g^{mu nu} T_{mu nu}, tr[(1-n) g^mu Psi_mu - (1-n)/2 g^mu nabla_mu Psi - n m Psi])."""
    n = wd.n
    T = stress_energy(wd)
    lhs = np.einsum("mn,pmn->p", np.linalg.inv(wd.metric), T)
    gu = _up(wd)
    rhs = ((1 - n) * np.einsum("lij,plji->p", gu, wd.Psi_mu)
           - 0.5 * (1 - n) * np.einsum("lij,plji->p", gu, wd.dPsi)
           - n * wd.m * np.einsum("pii->p", wd.Psi))
    return lhs, rhs


def conservation_residual(samples, L, kind="vector", metric=None):
    """Divergence of static periodic samples on a uniform circle grid.

    ``samples``: (P, 2) contravariant vector j^mu or (P, 2, 2) covariant tensor
    T_{mu nu}.  Returns (divergence, time_part, error_estimate, trace) where the
    error estimate compares the spectral derivative with a fourth-order finite
    difference and ``trace`` is g^{mu nu} T_{mu nu} for tensors (else None).
    """
    samples = np.asarray(samples)
    metric = np.diag([-1.0, 1.0]) if metric is None else np.asarray(metric)
    ginv = np.linalg.inv(metric)
    P = samples.shape[0]
    h = L / P
    if kind == "vector":
        f = samples[:, 1]
    elif kind == "tensor":
        f = ginv[1, 1] * samples[:, 1, :]  # nabla^mu T_{mu nu} = g^{11} d_x T_{1 nu} (static, flat)
    else:
        raise ValueError("kind must be 'vector' or 'tensor'")
    spec = spectral_derivative(f, L, axis=0).real
    fd = (np.roll(f, 2, 0) - 8 * np.roll(f, 1, 0) + 8 * np.roll(f, -1, 0) - np.roll(f, -2, 0)) / (12 * h)
    err = float(np.max(np.abs(spec - fd))) if P >= 5 else float("inf")
    time_part = np.zeros_like(spec)
    trace = np.einsum("mn,pmn->p", ginv, samples) if kind == "tensor" else None
    return spec, time_part, err, trace


def measure_Q(j):
    """Q^mu with d_mu j^mu = d_mu Q^mu on a static circle: the x-dependent part of j^1."""
    j = np.asarray(j, float)
    Q = np.zeros_like(j)
    Q[:, 1] = j[:, 1] - j[:, 1].mean()
    return Q


def current_deltaH(Q_up, metric=None):
    """delta H = -(i / 2^[n/2]) gamma^mu Q_mu for the real current j = -i tr(gamma Psi).

    This is the choice that makes the corrected current ``j - Q`` conserved.
    ``Q_up``: (P, n) contravariant components.  Returns (P, N, N).
    """
    Q_up = np.asarray(Q_up, float)
    n = Q_up.shape[1]
    metric = np.diag([-1.0] + [1.0] * (n - 1)) if metric is None else np.asarray(metric)
    gu = build_gamma(n).gamma / np.sqrt(metric[1, 1])
    Q_low = Q_up @ metric
    return -1j * 2.0 ** -(n // 2) * np.einsum("mij,pm->pij", gu, Q_low)


def stress_deltaH(Q_munu, metric=None, d_V=1):
    """Psi_mu shift -d_V^-1 2^-[n/2] (gamma^nu Q_{mu nu} - gamma_mu Q^l_l / (n - 1)), (P, n, N, N)."""
    Q = np.asarray(Q_munu, complex)
    n = Q.shape[1]
    metric = np.diag([-1.0] + [1.0] * (n - 1)) if metric is None else metric
    rep = build_gamma(n)
    s = 1.0 / np.sqrt(metric[1, 1])
    gu = rep.gamma * s
    gl = rep.gamma_lower / s
    trQ = np.einsum("mn,pmn->p", np.linalg.inv(metric), Q)
    shift = np.einsum("nij,pmn->pmij", gu, Q) - np.einsum("mij,p->pmij", gl, trQ) / (n - 1)
    return -shift * 2.0 ** -(n // 2) / d_V


def apply_deltaH(wd, scalar=None, vector=None, L=None):
    """Redefined WickData for the parametrix shifts delta H(s) and delta H_mu(s) d^mu_x s.

    ``scalar``: (P, N, N) values on the grid of ``wd`` (or (N, N), constant);
    ``Psi -> Psi + dH``, ``nabla Psi -> nabla Psi + nabla dH``,
    ``Psi_mu -> Psi_mu + nabla_mu dH / 2`` (the midpoint dependence).  Spatial
    derivatives of a non-constant ``scalar`` need the grid period ``L``.
    ``vector``: (P, n, N, N) added to ``Psi_mu`` only.
    """
    Psi, Psi_mu, dPsi = wd.Psi, wd.Psi_mu, wd.dPsi
    if scalar is not None:
        dH = np.broadcast_to(np.asarray(scalar, complex), Psi.shape)
        grad = np.zeros_like(dPsi)
        if np.ptp(np.abs(dH), axis=0).max() > 0:
            if L is None:
                raise ValueError("a non-constant scalar shift needs the grid period L")
            grad[:, 1] = spectral_derivative(dH, L, axis=0)
        Psi = Psi + dH
        dPsi = dPsi + grad
        Psi_mu = Psi_mu + 0.5 * grad
    if vector is not None:
        Psi_mu = Psi_mu + np.broadcast_to(np.asarray(vector, complex), Psi_mu.shape)
    return replace(wd, Psi=Psi, Psi_mu=Psi_mu, dPsi=dPsi)


def apply_menu(wd, menu, L):
    """Apply the background's renormalization menu on a static flat circle grid.

    ``menu["alpha"]`` = (a0, .., a4) weights delta H = a0 m^3 + a1 m R + a2 i m gamma gamma F
    + a4 gamma^mu nabla_mu R; ``menu["beta"]`` = (b0, .., b3) weights the stress shift
    b0 I + b1 J + b2 m^2 G + b3 m^4 g.  On the circle R, F, I, J and G vanish, so only
    a0 and b3 act; the stress shift is realized through the Psi_mu redefinition.
    """
    alpha, beta = menu.get("alpha", ()), menu.get("beta", ())
    if len(alpha) > 5 or len(beta) > 4:
        raise ValueError("menu takes at most 5 alpha and 4 beta coefficients")
    N = wd.Psi.shape[-1]
    if len(alpha) and alpha[0]:
        wd = apply_deltaH(wd, scalar=alpha[0] * wd.m[:, None, None] ** 3 * np.eye(N), L=L)
    if len(beta) > 3 and beta[3]:
        dT = beta[3] * wd.m[:, None, None] ** 4 * np.asarray(wd.metric)
        # stress_deltaH(Q) moves T by -Q
        wd = apply_deltaH(wd, vector=stress_deltaH(-dT, wd.metric))
    return wd


def source_term(wd, L):
    """Classical balance term for nonconstant m: nabla^mu T_{mu nu} = -tr(Psi) d_nu m on shell."""
    dm = spectral_derivative(wd.m, L).real
    out = np.zeros((len(wd.m), wd.n))
    out[:, 1] = -np.real(np.einsum("pii->p", wd.Psi)) * dm
    return out


def measure_Q_stress(wd, L):
    """Fit the renormalization part of nabla^mu T_{mu nu} on a static circle grid.

    The divergence minus the classical balance term is fitted as nabla^mu Q_{mu nu}
    with Q_{mu nu} = c m^2 g_{mu nu}.  Returns (Q (P, n, n), c, fit residual).
    """
    T = stress_energy(wd).real
    div, *_ = conservation_residual(T, L, "tensor", wd.metric)
    excess = div - source_term(wd, L)
    dm2 = spectral_derivative(wd.m ** 2, L).real  # d_x (m^2); nabla^mu (m^2 g_{mu 1}) = d_x m^2
    denom = float(np.dot(dm2, dm2))
    c = float(np.dot(dm2, excess[:, 1]) / denom) if denom > 0 else 0.0
    resid = float(np.max(np.abs(excess[:, 1] - c * dm2)) + np.max(np.abs(excess[:, 0])))
    Q = c * (wd.m ** 2)[:, None, None] * wd.metric[None]
    return Q, c, resid


# ---------------------------------------------------------------------------
# ambiguity tensors in n = 4

@dataclass(frozen=True)
class AmbiguityTensors:
    """I_{mu nu}, J_{mu nu} (metric variations of int R^2 and int Ric^2), m^2 G, m^4 g."""

    I: np.ndarray
    J: np.ndarray
    m2G: np.ndarray
    m4g: np.ndarray


def _curv_jets(bg, x, order):
    """Jets of g, ginv, Gamma, Riemann, Ricci, R around x (metric of order+2)."""
    n = bg.n
    g = field_jets(bg, x, order + 2)[0]
    ginv = _jet_inv(g)
    dg = [g.partial(k) for k in range(n)]
    # Gamma^r_{ab} = 1/2 g^{rs} (d_a g_sb + d_b g_sa - d_s g_ab)
    D = Jet(np.stack([d.c for d in dg], axis=-1), g.nvars, g.order - 1)  # (.., s, b, a)
    low = 0.5 * (_perm(D, "sba->sab") + _perm(D, "sab->sab") - _perm(D, "abs->sab"))
    chris = _contract("rs,sab->rab", ginv.truncate(low.order), low)
    dchris = [chris.partial(k) for k in range(n)]
    dC = Jet(np.stack([d.c for d in dchris], axis=-1), g.nvars, chris.order - 1)  # r a b m
    C = chris.truncate(dC.order)
    CC = _contract("rml,lnb->rbmn", C, C)  # Gamma^r_{m l} Gamma^l_{n b}
    # R^r_{b m n} = d_m G^r_{n b} - d_n G^r_{m b} + G^r_{m l} G^l_{n b} - G^r_{n l} G^l_{m b}
    Riem = _perm(dC, "rnbm->rbmn") - _perm(dC, "rmbn->rbmn") + CC - _perm(CC, "rbnm->rbmn")
    Ric = Jet(np.einsum("...rbrn->...bn", Riem.c), Riem.nvars, Riem.order)
    gi = ginv.truncate(Ric.order)
    R = _contract("bn,bn->", gi, Ric)
    return g.truncate(Ric.order), gi, C.truncate(Ric.order), Riem, Ric, R


def _perm(j, spec):
    a, b = spec.split("->")
    return Jet(np.einsum(f"...{a}->...{b}", j.c), j.nvars, j.order)


def _contract(spec, a, b):
    lhs, out = spec.split("->")
    sa, sb = lhs.split(",")
    return _jprod(a, b, f"...{sa},...{sb}->...{out}")


def _jprod(a, b, spec):
    return jet_einsum(spec, a, b)


def _jet_inv(g):
    return jet_matinv(g)


def _tensors_jet(bg, x, order):
    """I, J, G as jets (order ``order``) around x."""
    g, gi, C, Riem, Ric, R = _curv_jets(bg, x, order + 2)
    n = bg.n
    # covariant Hessian of R and box R
    dR = Jet(np.stack([R.partial(k).c for k in range(n)], -1), R.nvars, R.order - 1)
    ddR = Jet(np.stack([dR.partial(b).c for b in range(n)], -1), dR.nvars, dR.order - 1)
    k = ddR.order
    Ck = C.truncate(k)
    hessR = ddR - _contract("lab,l->ab", Ck, dR.truncate(k))
    gik = gi.truncate(k)
    boxR = _contract("ab,ab->", gik, hessR)
    gk, Rk, Rick, Riemk = g.truncate(k), R.truncate(k), Ric.truncate(k), Riem.truncate(k)
    # I_{ab} = 2 nabla_a nabla_b R - 2 g_ab box R + 1/2 g_ab R^2 - 2 R R_ab
    I = hessR * 2 - _contract("ab,->ab", gk, boxR) * 2 + _contract("ab,->ab", gk, Rk * Rk) * 0.5 \
        - _contract("ab,->ab", Rick, Rk) * 2
    # J_{ab} = nabla_a nabla_b R - 1/2 g_ab box R - box R_ab + 1/2 g_ab R_cd R^cd - 2 R_acbd R^cd
    Ric_up = _contract("ac,cd->ad", gik, _contract("cd,db->cb", Rick, gik))
    RR = _contract("cd,cd->", Rick, Ric_up)
    boxRic = _box_tensor(Ric, C, gi, k)
    Rlow = _contract("ar,rbcd->abcd", gk, Riemk)  # R_{a b c d}
    term = _contract("acbd,cd->ab", Rlow, Ric_up)
    J = hessR - _contract("ab,->ab", gk, boxR) * 0.5 - boxRic \
        + _contract("ab,->ab", gk, RR) * 0.5 - term * 2
    G = Rick - _contract("ab,->ab", gk, Rk) * 0.5
    return I, J, G, gk, Ck, gik


def _box_tensor(T, C, gi, k):
    """g^{cd} nabla_c nabla_d T_{ab} for a symmetric covariant 2-tensor jet."""
    n = T.c.shape[-1]
    dT = Jet(np.stack([T.partial(c).c for c in range(n)], -1), T.nvars, T.order - 1)  # a b c
    Cm = C.truncate(dT.order)
    Tm = T.truncate(dT.order)
    # nabla_c T_ab = d_c T_ab - G^l_{ca} T_lb - G^l_{cb} T_al
    nT = dT - _contract("lca,lb->abc", Cm, Tm) - _contract("lcb,al->abc", Cm, Tm)
    dnT = Jet(np.stack([nT.partial(d).c for d in range(n)], -1), nT.nvars, nT.order - 1)
    kk = dnT.order
    Ck = C.truncate(kk)
    nTk = nT.truncate(kk)
    # nabla_d nabla_c T_ab
    nnT = dnT - _contract("lda,lbc->abcd", Ck, nTk) - _contract("ldb,alc->abcd", Ck, nTk) \
        - _contract("ldc,abl->abcd", Ck, nTk)
    return _contract("cd,abcd->ab", gi.truncate(kk), nnT).truncate(k)


def divergence_2tensor(T, C, gi):
    """nabla^a T_{ab} at the expansion point from jets of T, Christoffels and g^{-1}."""
    n = T.c.shape[-1]
    dT = Jet(np.stack([T.partial(c).c for c in range(n)], -1), T.nvars, T.order - 1)
    Cm, Tm = C.truncate(dT.order), T.truncate(dT.order)
    nT = dT - _contract("lca,lb->abc", Cm, Tm) - _contract("lcb,al->abc", Cm, Tm)
    div = _contract("ac,abc->b", gi.truncate(nT.order), nT)
    return div.value


def ambiguity_tensors(bg, x, order=1, with_divergence=False):
    """I, J, m^2 G and m^4 g at ``x`` for an n = 4 background.

    I_{ab} = 2 nabla_a nabla_b R - 2 g_ab box R + g_ab R^2 / 2 - 2 R R_ab and
    J_{ab} = nabla_a nabla_b R - g_ab box R / 2 - box R_ab + g_ab R_cd R^cd / 2
    - 2 R_acbd R^cd are the metric variations of int R^2 and int R_ab R^ab (up to
    sign), conserved identically.  With ``with_divergence`` also returns their
    divergences at x.
    """
    if bg.n != 4:
        raise ValueError("ambiguity tensors are defined for n = 4")
    if order < 1 and with_divergence:
        raise ValueError("divergences need jet order >= 1")
    I, J, G, g, C, gi = _tensors_jet(bg, x, order)
    mv = float(np.real(field_jets(bg, x, 0)[2].value))
    out = AmbiguityTensors(I=np.real(I.value), J=np.real(J.value), m2G=np.real(mv ** 2 * G.value),
                           m4g=np.real(mv ** 4 * g.value))
    if not with_divergence:
        return out
    divs = {"I": divergence_2tensor(I, C, gi), "J": divergence_2tensor(J, C, gi),
            "G": divergence_2tensor(G, C, gi)}
    return out, divs
