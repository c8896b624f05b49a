"""Ground-state two-point functions on ultrastatic circles by spectral projection.

The Dirac equation ``D psi = 0`` with ``D = -gamma^mu nabla_mu + m`` on
``-dt^2 + dx^2``, ``x ~ x + L``, with ``A = (0, a)`` and static ``m(x)`` reads
``i d_t psi = K psi`` with

    K = i gamma0 gamma1 (d_x - i a) + beta m,

which is ``sigma_z (k - a) + sigma_x m`` on the Fourier mode ``e^{ikx}`` in the
representation of :mod:`hdirac.clifford`.  Antiperiodic spinors have
``k = 2 pi (j + 1/2) / L``, periodic ones ``k = 2 pi j / L``.

With ``G(x, y) = sum_E phi_E(x) phi_E(y)^dagger e^{-iE (t_x - t_y)}`` the causal
propagator is ``S = G gamma0`` (so ``S = gamma0 delta`` at equal times), and the
state kernels are ``omega^+- = i G^+- gamma0`` where ``G^+`` (``G^-``) sums over
positive (negative) energies.  Then ``omega^+ + omega^- = i S`` and each
``omega^+-`` is self-conjugate, ``omega(x, y) = beta omega(y, x)^dagger beta``.
The matrix ``M = G^- beta = -omega^-`` is the expectation ``<psi^+_A(y) psi^B(x)>``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .clifford import build_gamma
from .exprjet import evaluate, free_variables
from .geometry import BackgroundError, unscaled
from .hadamard import parametrix_jets

__all__ = ["ModeBasis", "ZeroModeError", "CutoffError", "build_modes", "state_kernels",
           "G_sum", "M_matrix", "car_residual", "conjugation_residual", "bisolution_residual",
           "SmoothPart", "pointsplit_difference", "pointsplit_sequence", "circle_data"]

_SZ = np.array([[1, 0], [0, -1]], dtype=complex)
_SX = np.array([[0, 1], [1, 0]], dtype=complex)


DENSE_MAX = 2048


class ZeroModeError(ValueError):
    pass


class CutoffError(ValueError):
    pass


def circle_data(bg):
    """(L, a, m-expression, delta) of an ultrastatic circle background (scale removed)."""
    bg = unscaled(bg)
    if bg.n != 2 or not bg.is_flat_metric:
        raise BackgroundError("circle backgrounds need n = 2 and the Minkowski metric")
    if bg.circumference is None or not bg.circumference > 0:
        raise BackgroundError("circle backgrounds need a positive circumference")
    t, x = bg.coords
    if free_variables(bg.A[0]) or float(evaluate(bg.A[0], {})) != 0:
        raise BackgroundError("circle backgrounds need A_0 = 0")
    if free_variables(bg.A[1]):
        raise BackgroundError("circle backgrounds need a constant spatial potential (Wilson parameter)")
    if t in free_variables(bg.m):
        raise BackgroundError("the Yukawa field must be static")
    delta = 0.5 if bg.spin_structure == "antiperiodic" else 0.0
    return bg.circumference, float(evaluate(bg.A[1], {})), bg, delta


@dataclass(frozen=True, eq=False)
class ModeBasis:
    """Eigenpairs of K.  ``kidx``/``spinors`` for plane-wave modes, else dense ``coeffs``."""

    L: float
    delta: float
    a: float
    k: np.ndarray  # Fourier momenta (K,)
    E: np.ndarray  # energies (nm,)
    kidx: np.ndarray | None
    spinors: np.ndarray | None  # (nm, 2)
    coeffs: np.ndarray | None  # (nm, K, 2)
    bg: object
    scale: float = 1.0

    @property
    def cutoff(self):
        return self.k.size

    @property
    def E_max(self):
        return float(np.max(np.abs(self.E)))

    def values(self, x):
        """phi_n(x) with shape x.shape + (nm, 2), x in proper coordinates."""
        x = np.asarray(x, float)
        if self.coeffs is None:
            ph = np.exp(1j * np.multiply.outer(x, self.k[self.kidx])) / math.sqrt(self.L)
            return ph[..., None] * self.spinors
        ph = np.exp(1j * np.multiply.outer(x, self.k)) / math.sqrt(self.L)
        return np.einsum("...k,nkc->...nc", ph, self.coeffs)

    def residual(self):
        """Max |K phi - E phi| and orthonormality defect in the Fourier basis."""
        Kd = _K_dense(self) if self.coeffs is not None else None
        if Kd is None:
            Kk = _K_blocks(self.k[self.kidx], self.a, self._m_const())
            r = np.einsum("nij,nj->ni", Kk, self.spinors) - self.E[:, None] * self.spinors
            gram = np.abs(np.linalg.norm(self.spinors, axis=1) - 1)
            return float(np.max(np.abs(r))), float(np.max(gram))
        V = self.coeffs.reshape(len(self.E), -1).T
        r = Kd @ V - V * self.E
        gram = V.conj().T @ V - np.eye(V.shape[1])
        return float(np.max(np.abs(r))), float(np.max(np.abs(gram)))

    def _m_const(self):
        return float(evaluate(self.bg.m, {}))


def _K_blocks(k, a, m):
    return np.multiply.outer(k - a, _SZ) + m * _SX


def _fourier_m(bg, L, nq):
    x = bg.coords[1]
    xs = np.arange(nq) * L / nq
    vals = evaluate(bg.m, {x: xs, bg.coords[0]: 0.0})
    vals = np.broadcast_to(np.asarray(vals, float), xs.shape)
    return np.fft.fft(vals) / nq  # m(x) = sum_p mhat_p e^{2 pi i p x / L}


def _K_dense(modes):
    k = modes.k
    K = k.size
    mh = _fourier_m(modes.bg, modes.L, 4 * K)
    j = np.arange(K)
    diff = (j[:, None] - j[None, :]) % (4 * K)
    Mk = mh[diff]
    H = np.kron(np.diag(k - modes.a), _SZ) + np.kron(Mk, _SX)
    return H


def build_modes(bg, cutoff=4096):
    """Eigenpairs of K on the truncated Fourier basis of ``cutoff`` momenta."""
    if cutoff < 8:
        raise ValueError("cutoff must be at least 8")
    L, a, bgu, delta = circle_data(bg)
    j = np.arange(-(cutoff // 2), cutoff - cutoff // 2)
    k = 2 * np.pi * (j + delta) / L
    const_m = not free_variables(bgu.m)
    if const_m:
        m = float(evaluate(bgu.m, {}))
        q = k - a
        w = np.hypot(q, m)
        if np.any(w < 1e-12):
            raise ZeroModeError("K has a zero mode (periodic massless case); the ground state is not unique")
        # eigenvectors of [[q, m], [m, -q]], cancellation-free branch by sign of q
        pos = (q >= 0)[:, None]
        up = np.where(pos, np.stack([q + w, np.full_like(q, m)], -1),
                      np.stack([np.full_like(q, m), w - q], -1))
        dn = np.where(pos, np.stack([np.full_like(q, m), -(q + w)], -1),
                      np.stack([w - q, np.full_like(q, -m)], -1))
        up /= np.linalg.norm(up, axis=1, keepdims=True)
        dn /= np.linalg.norm(dn, axis=1, keepdims=True)
        E = np.concatenate([w, -w])
        spin = np.concatenate([up, dn]).astype(complex)
        kidx = np.concatenate([np.arange(cutoff), np.arange(cutoff)])
        order = np.argsort(E, kind="stable")
        return ModeBasis(L=L, delta=delta, a=a, k=k, E=E[order], kidx=kidx[order],
                         spinors=spin[order], coeffs=None, bg=bgu, scale=bg.scale)
    if cutoff > DENSE_MAX:
        raise CutoffError(f"nonconstant mass needs dense diagonalization; cutoff must be <= {DENSE_MAX}")
    modes = ModeBasis(L=L, delta=delta, a=a, k=k, E=np.zeros(0), kidx=None, spinors=None,
                      coeffs=np.zeros((0, cutoff, 2)), bg=bgu, scale=bg.scale)
    H = _K_dense(modes)
    herm = float(np.max(np.abs(H - H.conj().T)))
    if herm > 1e-12:
        raise RuntimeError(f"K is not Hermitian (residual {herm:.2e})")
    E, V = np.linalg.eigh(H)
    if np.any(np.abs(E) < 1e-12):
        raise ZeroModeError("K has a zero mode; the ground state is not unique")
    coeffs = V.T.reshape(len(E), cutoff, 2)
    return ModeBasis(L=L, delta=delta, a=a, k=k, E=E, kidx=None, spinors=None, coeffs=coeffs,
                     bg=bgu, scale=bg.scale)


def G_sum(modes, x, y, dt, part):
    """sum over ``part`` ('+', '-', 'all') of phi(x) phi(y)^dagger e^{-iE dt}.

    ``x``, ``y``: spatial proper coordinates (broadcastable arrays); ``dt`` may be
    complex (Im dt < 0 for '+', Im dt > 0 for '-' gives exponential damping).
    """
    x, y, dt = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float), np.asarray(dt))
    sel = {"+": modes.E > 0, "-": modes.E < 0, "all": np.ones(modes.E.shape, bool)}[part]
    E = modes.E[sel]
    px = modes.values(x)[..., sel, :]
    py = modes.values(y)[..., sel, :]
    ph = np.exp(-1j * np.multiply.outer(dt, E))
    return np.einsum("...n,...ni,...nj->...ij", ph, px, py.conj())


def M_matrix(modes, x, y, dt):
    """<psi^+(y) psi(x)> = G^-(x, y) beta, with dt = t_x - t_y."""
    rep = build_gamma(2)
    return G_sum(modes, x, y, dt, "-") @ rep.beta


def state_kernels(modes, pairs):
    """omega^+, omega^- and S at spacetime pairs ((t, x), (t', x')) in proper coordinates.

    Returns arrays of shape (P, 2, 2).
    """
    rep = build_gamma(2)
    pairs = np.asarray(pairs, float)
    X, Y = pairs[:, 0], pairs[:, 1]
    dt = X[:, 0] - Y[:, 0]
    Gp = G_sum(modes, X[:, 1], Y[:, 1], dt, "+")
    Gm = G_sum(modes, X[:, 1], Y[:, 1], dt, "-")
    g0 = rep.gamma[0]
    return 1j * Gp @ g0, 1j * Gm @ g0, (Gp + Gm) @ g0


def car_residual(modes, f, g):
    """Equal-time anticommutator against band-limited smearings.

    ``f``, ``g``: Fourier coefficient arrays (cutoff, 2) of spinor test functions;
    compares ``sum_E <f, phi_E><phi_E, g>`` (the smeared ``G`` at equal time,
    i.e. ``-i (omega^+ + omega^-) gamma0^-1`` ) with the L2 product ``<f, g>``.
    """
    f = np.asarray(f, complex)
    g = np.asarray(g, complex)
    if modes.coeffs is None:
        Vf = np.einsum("nc,nc->n", modes.spinors.conj(), f[modes.kidx])
        Vg = np.einsum("nc,nc->n", modes.spinors.conj(), g[modes.kidx])
    else:
        Vf = np.einsum("nkc,kc->n", modes.coeffs.conj(), f)
        Vg = np.einsum("nkc,kc->n", modes.coeffs.conj(), g)
    pos = modes.E > 0
    # omega^+ + omega^- smeared: i (sum_+ + sum_-) ; S smeared: sum_all
    lhs = 1j * (np.vdot(Vf[pos], Vg[pos]) + np.vdot(Vf[~pos], Vg[~pos]))
    rhs = 1j * np.vdot(f.ravel(), g.ravel())
    return float(abs(lhs - rhs))


def conjugation_residual(modes, pairs):
    """max |omega^+-(x, y) - beta omega^+-(y, x)^dagger beta| over pairs."""
    rep = build_gamma(2)
    pairs = np.asarray(pairs, float)
    wp, wm, _ = state_kernels(modes, pairs)
    wp_r, wm_r, _ = state_kernels(modes, pairs[:, ::-1])
    b = rep.beta
    adj = lambda w: b @ np.swapaxes(w.conj(), -1, -2) @ b  # noqa: E731
    return float(max(np.max(np.abs(wp - adj(wp_r))), np.max(np.abs(wm - adj(wm_r)))))


def bisolution_residual(modes, pairs, window=0.5):
    """max |D_x omega^+-(x, y)| relative to |omega| over pairs, by exact mode differentiation.

    Dense (nonconstant-mass) bases only keep modes with |E| < window * E_max, since
    eigenvectors near the Fourier cutoff leak out of the truncated band.
    """
    rep = build_gamma(2)
    pairs = np.asarray(pairs, float)
    X, Y = pairs[:, 0], pairs[:, 1]
    dt = X[:, 0] - Y[:, 0]
    g0, g1 = rep.gamma
    m = _m_values(modes, X[:, 1])
    worst = 0.0
    for part in ("+", "-"):
        sel = modes.E > 0 if part == "+" else modes.E < 0
        if modes.coeffs is not None:
            sel = sel & (np.abs(modes.E) < window * modes.E_max)
        E = modes.E[sel]
        ph = np.exp(-1j * np.multiply.outer(dt, E))
        py = modes.values(Y[:, 1])[:, sel, :]
        px = modes.values(X[:, 1])[:, sel, :]
        dpx = _dvalues(modes, X[:, 1])[:, sel, :]
        dtpx = -1j * E[None, :, None] * px
        # D phi = -g0 d_t phi - g1 (d_x - i a) phi + m phi, per mode
        Dpx = (-np.einsum("ij,pnj->pni", g0, dtpx)
               - np.einsum("ij,pnj->pni", g1, dpx - 1j * modes.a * px) + m[:, None, None] * px)
        Dw = np.einsum("pn,pni,pnj->pij", ph, Dpx, py.conj())
        w = np.einsum("pn,pni,pnj->pij", ph, px, py.conj())
        worst = max(worst, float(np.max(np.abs(Dw)) / max(1.0, np.max(np.abs(w)))))
    return worst


def _m_values(modes, x):
    xs = modes.bg.coords[1]
    v = evaluate(modes.bg.m, {xs: np.asarray(x, float), modes.bg.coords[0]: 0.0})
    return np.broadcast_to(np.asarray(v, float), np.shape(x))


def _dvalues(modes, x):
    x = np.asarray(x, float)
    if modes.coeffs is None:
        kk = modes.k[modes.kidx]
        return 1j * kk[:, None] * modes.values(x)
    ph = np.exp(1j * np.multiply.outer(x, modes.k)) / math.sqrt(modes.L)
    return np.einsum("...k,nkc->...nc", 1j * modes.k * ph, modes.coeffs)


# ---------------------------------------------------------------------------
# point splitting against the parametrix

@dataclass(frozen=True)
class SmoothPart:
    """Coinciding limits of W = M - H^- at a point (proper coordinates).

    ``value``: [W] (2, 2); ``dxi``: derivatives with respect to the real
    separation xi = x - y at fixed midpoint (n, 2, 2), conjugation-symmetrized.
    """

    value: np.ndarray
    dxi: np.ndarray
    fit_residual: float
    window_spread: float
    tau_min: float


_BASIS = (lambda t: np.ones_like(t), lambda t: t, lambda t: t * t * np.log(t), lambda t: t * t,
          lambda t: t ** 3 * np.log(t), lambda t: t ** 3)


def _fit(taus, vals):
    A = np.stack([f(taus) for f in _BASIS], axis=1)
    norms = np.linalg.norm(A, axis=0)
    y = vals.reshape(len(taus), -1)
    coef, *_ = np.linalg.lstsq(A / norms, y, rcond=None)
    coef = coef / norms[:, None]
    res = float(np.max(np.abs(A @ coef - y)))
    return coef, res


def _W_along(modes, z, d, taus, Lam, k_max=1):
    """W(z + tau d / 2, z - tau d / 2) with d = (i, d1): Euclidean time i tau, spatial tau d1."""
    t0, x0 = z
    d1 = d[1]
    xs = x0 + 0.5 * taus * d1
    ys = x0 - 0.5 * taus * d1
    M = M_matrix(modes, xs, ys, 1j * taus)
    X = np.stack([np.full_like(taus, t0), xs], axis=-1)
    Y = np.stack([np.full_like(taus, t0), ys], axis=-1)
    H = np.empty_like(M)
    for i, tau in enumerate(taus):
        _, Hj = parametrix_jets(modes.bg, X[i], Y[i], order=0, k_max=k_max, Lam=Lam,
                                time_offset=1j * tau, sign=-1)
        H[i] = Hj.value
    return M - H


def default_taus(modes, count=20, span=3.0, start=40.0):
    tmin = start / modes.E_max
    return tmin * np.geomspace(1.0, span, count)


def pointsplit_difference(modes, z, Lam=1.0, taus=None, k_max=1):
    """Value and first derivatives of W = <psi^+ psi> - H^- at the diagonal point z.

    ``z`` in proper coordinates.  Uses Euclidean splitting along d1 = (i, 0) and
    d2 = (i, 1), a fit in the basis 1, tau, tau^2 log tau, tau^2, tau^3 log tau,
    tau^3 over a geometric tau window starting at 40 / E_max, and a second fit on
    the upper half of the window as a stability diagnostic.
    """
    taus = default_taus(modes) if taus is None else np.asarray(taus, float)
    rep = build_gamma(2)
    b = rep.beta
    f1 = _W_along(modes, z, (1j, 0.0), taus, Lam, k_max)
    f2 = _W_along(modes, z, (1j, 1.0), taus, Lam, k_max)
    c1, r1 = _fit(taus, f1)
    c2, r2 = _fit(taus, f2)
    half = len(taus) // 3
    c1b, _ = _fit(taus[half:], f1[half:])
    W0 = c1[0].reshape(2, 2)
    d1 = c1[1].reshape(2, 2)
    d2 = c2[1].reshape(2, 2)
    dxi = np.stack([-1j * d1, d2 - d1])  # d/dxi0 = -i d/dtau along (i, 0)
    spread = float(max(np.max(np.abs(c1b[0] - c1[0])), np.max(np.abs(c2[0] - c1[0]))))

    def adj(w):
        return b @ np.swapaxes(w.conj(), -1, -2) @ b

    value = 0.5 * (W0 + adj(W0))
    dsym = 0.5 * (dxi - adj(dxi))
    return SmoothPart(value=value, dxi=dsym, fit_residual=max(r1, r2), window_spread=spread,
                      tau_min=float(taus[0]))


def pointsplit_sequence(modes, z, Lam=1.0, tau0=None, halvings=6, d=(1j, 0.0)):
    """W along a direction at separations tau0 / 2^k with first-order Richardson estimates.

    Returns a dict with ``taus``, raw values ``W``, Richardson estimates
    ``R_k = 2 W(tau_k / 2) - W(tau_k)``, their successive differences ``steps`` and
    the observed convergence ``orders`` ``log2(steps_k / steps_{k+1})``.
    """
    tau0 = 32.0 * 2 ** halvings / modes.E_max if tau0 is None else tau0
    taus = tau0 / 2.0 ** np.arange(halvings + 1)
    vals = _W_along(modes, z, d, taus, Lam)
    rich = 2 * vals[1:] - vals[:-1]
    steps = np.array([np.max(np.abs(rich[i] - rich[i + 1])) for i in range(len(rich) - 1)])
    with np.errstate(divide="ignore", invalid="ignore"):
        orders = np.log2(steps[:-1] / steps[1:])
    return {"taus": taus, "W": vals, "richardson": rich, "steps": steps, "orders": orders}
