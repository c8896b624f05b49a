"""Background rescaling, the log-Lambda dependence of the parametrix and RG coefficients.

Under ``S_lambda``: ``g -> lambda^-2 g``, ``A -> lambda A``, ``m -> lambda m``.  The
parametrix depends on the scale Lambda only through ``log(-Gamma / Lambda^2)`` in
the kernels with ``2j + 2 >= n`` (n even), so ``d h / d log Lambda`` is the local
polynomial ``-(1/pi) sum_j C(2j+2, n) Gamma^{j+1-n/2} V_j``; for n = 4 this is
``-V_1 / (8 pi^2)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import curvature_package, flat_background
from .hadamard import C_const, assemble_parametrix, coinciding_V1

__all__ = ["ScalingError", "rescale_background", "lambda_derivative", "lambda_linearity",
           "rg_integrand", "RGCoefficient", "rg_coefficient", "isolating_backgrounds",
           "ScalingReport", "scaling_check", "scaling_dimension"]


class ScalingError(ValueError):
    pass


def rescale_background(bg, lam):
    """S_lambda bg: metric times lambda^-2, potential and mass times lambda."""
    if not lam > 0:
        raise ScalingError("lambda must be positive")
    return bg.rescaled(lam)


def _log_prediction(pe, n):
    """-(1/pi) sum_j C(2j+2, n) Gamma^p V_j over the log kernels (even n)."""
    out = 0
    for j, Vj in enumerate(pe.V):
        p = (2 * j + 2 - n) // 2
        if n % 2 == 0 and p >= 0:
            out = out - C_const(2 * j + 2, n) * pe.world_function ** p * np.asarray(Vj) / np.pi
    return out


def lambda_derivative(bg, x, xp, k_max=1, Lam=1.0, dlog=1e-3, **kw):
    """Central difference in log Lambda of the parametrix at a pair.

    Returns a dict with ``dh`` (d h^+ / d log Lambda), ``dH`` (same for the double
    parametrix), ``predicted`` (the local polynomial above) and ``residual``.
    """
    lo = assemble_parametrix(bg, x, xp, k_max=k_max, Lam=Lam * np.exp(-dlog), **kw)
    hi = assemble_parametrix(bg, x, xp, k_max=k_max, Lam=Lam * np.exp(dlog), **kw)
    dh = (hi.h_plus - lo.h_plus) / (2 * dlog)
    dH = (hi.H_double - lo.H_double) / (2 * dlog)
    pred = _log_prediction(hi, bg.n)
    pred = np.zeros_like(dh) if np.isscalar(pred) else pred
    return {"dh": dh, "dH": dH, "predicted": pred, "residual": float(np.max(np.abs(dh - pred)))}


def lambda_linearity(bg, x, xp, k_max=1, Lam=1.0, **kw):
    """max |h(Lam) - h(2 Lam) - 2 log 2 * (-d h / d log Lam)| over h^+-, relative to |h|."""
    a = assemble_parametrix(bg, x, xp, k_max=k_max, Lam=Lam, **kw)
    b = assemble_parametrix(bg, x, xp, k_max=k_max, Lam=2 * Lam, **kw)
    slope = _log_prediction(a, bg.n)
    slope = 0 if np.isscalar(slope) else slope
    res = 0.0
    for u, v in ((a.h_plus, b.h_plus), (a.h_minus, b.h_minus)):
        d = v - u - np.log(2.0) * slope
        res = max(res, float(np.max(np.abs(d)) / max(1.0, np.max(np.abs(u)))))
    return res


# ---------------------------------------------------------------------------
# RG coefficient (n = 4)

def rg_integrand(bg0, x, m1, A1):
    """Log-Lambda coefficient of m1 <psi^+ psi> + i A1_mu <psi^+ gamma^mu psi> at x.

    Psi shifts by -dH/dlogLambda at coincidence, i.e. by -(1/8 pi^2) (gamma^nu
    [nabla_nu V1] + m [V1]) with the derivative in the first argument (the one
    acted on by D-tilde).  Returns the real coefficient up to the overall factor.
    """
    if bg0.n != 4:
        raise ScalingError("the RG coefficient is defined for n = 4")
    V1, grad = coinciding_V1(bg0, x, order=5, argument="first")
    cp = curvature_package(bg0, x, 5)
    gam = cp.gamma_up
    X = np.einsum("nij,njk->ik", gam, grad) + cp.m * V1
    A1 = np.asarray(A1, float)
    val = m1 * np.trace(X) + 1j * np.einsum("m,mij,jk->", A1, gam, X) if np.any(A1) else m1 * np.trace(X)
    return complex(val) / (8 * np.pi ** 2)


@dataclass(frozen=True)
class RGCoefficient:
    """Monomial coefficients of r, normalized so that the m1 m0^3 coefficient is -4."""

    box: float
    R: float
    cubic: float
    F: float
    raw: dict

    def ratios(self):
        return {"box:cubic": self.box / self.cubic, "R:cubic": self.R / self.cubic,
                "F:cubic": self.F / self.cubic}


_CURVED = """coords = t, x, y, z
metric[0][0] = -1
metric[1][1] = exp(0.2*t + 0.1*y) * (1 + 0.1*x*x)
metric[2][2] = 1 + 0.05*sin(x + z)
metric[3][3] = exp(0.15*x*y)
m = {m}
"""


def isolating_backgrounds(mu=0.7, eps=0.3, E=0.4):
    """Backgrounds (and points) isolating each monomial of r.

    cubic: flat, m0 = mu.  box: flat, m0 = eps (x^2 + y^2) at the origin (m0 = 0
    there, box m0 = 4 eps).  R: a curved metric with constant m0 = mu.  F: flat,
    m0 = 0, A0 = (E (x^2 + y^2) / 2, 0, 0, 0) with nabla^l F_{l mu} != 0 only in mu = 0.
    """
    from .geometry import parse_background

    x0 = np.zeros(4)
    return {
        "cubic": (flat_background(4, A=[0, 0, 0, 0], m=str(mu)), x0),
        "box": (flat_background(4, A=[0, 0, 0, 0], m=f"{eps}*(x*x + y*y)"), x0),
        "R": (parse_background(_CURVED.format(m=mu)), np.array([0.1, 0.2, -0.1, 0.3])),
        "F": (flat_background(4, A=[f"{E}*(x*x + y*y)/2", 0, 0, 0], m="0"), x0),
    }


def _monomials(bg0, x, A1):
    cp = curvature_package(bg0, x, 5)
    m0 = float(np.real(cp.m))
    box = float(np.real(np.einsum("ab,ab->", cp.ginv, cp.hess_m)))
    divF = np.einsum("ls,sml->m", cp.ginv, cp.grad_F)  # nabla^l F_{m l}
    A1_up = cp.ginv @ np.asarray(A1, float)
    # A1^mu nabla^l F_{l mu} = -A1^mu nabla^l F_{mu l}
    AF = float(np.real(-A1_up @ divF))
    return {"box": box, "R": float(np.real(cp.R)) * m0, "cubic": m0 ** 3, "F": AF}


def rg_coefficient(backgrounds=None, m1=1.0, A1=(0.3, 0.0, 0.0, 0.0)):
    """Decompose r onto m1 box m0, R m0 m1, m1 m0^3 and A1^mu nabla^l F_{0, l mu}.

    Each background isolates one monomial on top of those already determined
    (the cubic term is subtracted where m0 != 0).  The A1 contribution is taken
    from the F background with m1 = 0.
    """
    bgs = isolating_backgrounds() if backgrounds is None else backgrounds
    raw = {}
    bg, x = bgs["cubic"]
    mono = _monomials(bg, x, A1)
    c_cubic = rg_integrand(bg, x, m1, np.zeros(4)).real / (m1 * mono["cubic"])
    raw["cubic"] = c_cubic
    bg, x = bgs["box"]
    mono = _monomials(bg, x, A1)
    val = rg_integrand(bg, x, m1, np.zeros(4)).real - c_cubic * m1 * mono["cubic"]
    if abs(mono["box"]) < 1e-12:
        raise ScalingError("box background does not isolate m1 box m0")
    c_box = val / (m1 * mono["box"])
    raw["box"] = c_box
    bg, x = bgs["R"]
    mono = _monomials(bg, x, A1)
    val = (rg_integrand(bg, x, m1, np.zeros(4)).real - c_cubic * m1 * mono["cubic"]
           - c_box * m1 * mono["box"])
    if abs(mono["R"]) < 1e-12:
        raise ScalingError("curved background does not isolate R m0 m1")
    c_R = val / (m1 * mono["R"])
    raw["R"] = c_R
    bg, x = bgs["F"]
    mono = _monomials(bg, x, A1)
    if abs(mono["F"]) < 1e-12:
        raise ScalingError("field background does not isolate A1 nabla F")
    c_F = rg_integrand(bg, x, 0.0, A1).real / mono["F"]
    raw["F"] = c_F
    norm = -4.0 / c_cubic
    return RGCoefficient(box=c_box * norm, R=c_R * norm, cubic=-4.0, F=c_F * norm, raw=raw)


# ---------------------------------------------------------------------------
# scaling of Wick squares on circles

@dataclass(frozen=True)
class ScalingReport:
    lams: np.ndarray
    values: np.ndarray
    dimension: int
    homogeneous: float
    log_coefficient: float
    residual: float
    window_slopes: tuple


_SELECTORS = {"trPsi": (0, 0), "j0": (1, 0), "j1": (1, 0), "T00": (0, 2), "T11": (0, 2)}


def scaling_dimension(selector, n=2):
    """Scaling degree of a coordinate component: n - 1 (bilinears), n (T), + up - down indices."""
    if selector not in _SELECTORS:
        raise ScalingError(f"unknown selector {selector!r}")
    up, down = _SELECTORS[selector]
    base = n if selector.startswith("T") else n - 1
    return base + up - down


def _select(wd, selector):
    from .observables import current, stress_energy

    if selector == "trPsi":
        return float(np.real(np.trace(wd.Psi[0])))
    if selector in ("j0", "j1"):
        return float(current(wd)[0, int(selector[1])])
    T = stress_energy(wd).real[0]
    return float(T[int(selector[1]), int(selector[2])])


def scaling_check(bg, point, selector="trPsi", lams=None, cutoff=4096, Lam=1.0):
    """Fit lambda^-d S_lambda W = W + r log lambda over a lambda grid on circle backgrounds."""
    from .modesum import build_modes
    from .observables import wick_expectations

    lams = np.geomspace(0.5, 2.0, 7) if lams is None else np.asarray(lams, float)
    d = scaling_dimension(selector, bg.n)
    vals = []
    for lam in lams:
        modes = build_modes(rescale_background(bg, lam), cutoff)
        vals.append(_select(wick_expectations(modes, point, Lam=Lam), selector))
    vals = np.array(vals)
    y = vals * lams ** -float(d)
    A = np.stack([np.ones_like(lams), np.log(lams)], 1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = float(np.max(np.abs(A @ coef - y)))
    half = len(lams) // 2
    slopes = []
    for sl in (slice(0, half + 1), slice(half, None)):
        c, *_ = np.linalg.lstsq(A[sl], y[sl], rcond=None)
        slopes.append(float(c[1]))
    return ScalingReport(lams=lams, values=vals, dimension=d, homogeneous=float(coef[0]),
                         log_coefficient=float(coef[1]), residual=res, window_slopes=tuple(slopes))
