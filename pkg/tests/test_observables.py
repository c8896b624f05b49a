import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from circles import circle
from hdirac.geometry import flat_background, parse_background
from hdirac.modesum import build_modes
from hdirac.observables import (ambiguity_tensors, apply_deltaH, conservation_residual, current,
                                current_deltaH, measure_Q, measure_Q_stress, source_term,
                                stress_deltaH, stress_energy, trace_identity, wick_expectations,
                                wick_on_grid)
from hdirac.geometry import curvature_package
from oracles.casimir_zeta import casimir_T00, current_j1, trace_psi_constant_mass

TWO_PI = 2 * math.pi


@pytest.fixture(scope="module")
def massless():
    return build_modes(circle(1.0), 4096)


@pytest.fixture(scope="module")
def varying():
    """Nonconstant Yukawa field with a Wilson line on the unit circle, 32-point grid."""
    L = 1.0
    modes = build_modes(circle(L, f"0.6 + 0.3*sin({TWO_PI!r}*x)", 0.2), 512)
    return L, wick_on_grid(modes, 32)


def _tr(a):
    return np.real(np.einsum("pii->p", a))


def test_massless_trace_vanishes(massless):
    wd = wick_expectations(massless, (0.0, 0.3))
    assert abs(_tr(wd.Psi)[0]) <= 1e-8


def test_charge_density_static_and_zero(massless):
    j0 = [current(wick_expectations(massless, (t, 0.3)))[0, 0] for t in (0.0, 0.4, 1.7)]
    assert np.var(j0) <= 1e-10
    assert np.max(np.abs(j0)) <= 1e-6


@pytest.mark.parametrize("L, m", [(1.0, 0.8), (2.0, 0.3)])
def test_constant_mass_image_sum(L, m):
    modes = build_modes(circle(L, str(m)), 4096)
    wd = wick_expectations(modes, (0.0, 0.1))
    assert abs(_tr(wd.Psi)[0] - trace_psi_constant_mass(L, m)) <= 1e-5


def test_casimir_energy_density(massless):
    wd = wick_expectations(massless, (0.0, 0.25))
    T = stress_energy(wd)[0]
    assert abs(T[0, 0] - casimir_T00(1.0)) <= 1e-6
    assert abs(T[1, 1] - T[0, 0]) <= 1e-6
    assert np.max(np.abs(T - T.T)) <= 1e-10


def test_flat_limit_is_isotropic():
    # e^{-mL} ~ 2e-9: the infinite-volume limit; the fit window must keep m tau small
    modes = build_modes(circle(20.0, "1.0"), 16384)
    T = stress_energy(wick_expectations(modes, (0.0, 3.0)))[0]
    assert abs(T[0, 0] + T[1, 1]) <= 1e-6
    assert abs(T[0, 1]) <= 1e-6


def test_parity_even_mass_has_no_current():
    modes = build_modes(circle(1.0, f"0.5 + 0.2*cos({TWO_PI!r}*x)"), 256)
    wd = wick_on_grid(modes, 8)
    assert np.max(np.abs(current(wd)[:, 1])) <= 1e-8


@pytest.mark.parametrize("a", [0.3, 1.1, 2.0, 4.0])
def test_spectral_asymmetry(a):
    plus = current(wick_expectations(build_modes(circle(1.0, "0", a), 4096), (0.0, 0.2)))[0, 1]
    minus = current(wick_expectations(build_modes(circle(1.0, "0", -a), 4096), (0.0, 0.2)))[0, 1]
    assert abs(plus - current_j1(1.0, a=a)) <= 1e-8
    assert abs(plus + minus) <= 1e-8


def test_massless_current_conserved(massless):
    wd = wick_on_grid(build_modes(circle(1.0, "0", 0.7), 1024), 16)
    div, time_part, err, _ = conservation_residual(current(wd), 1.0)
    assert np.max(np.abs(div)) <= 1e-8
    assert np.all(time_part == 0)


def test_current_correction(varying):
    L, wd = varying
    j = current(wd)
    Q = measure_Q(j)
    fixed = apply_deltaH(wd, scalar=current_deltaH(Q), L=L)
    div, *_ = conservation_residual(current(fixed), L)
    assert np.max(np.abs(div)) <= 1e-6
    assert np.allclose(current(fixed), j - Q, atol=1e-14)


def test_stress_shift_leaves_current(varying):
    L, wd = varying
    Q, c, resid = measure_Q_stress(wd, L)
    shifted = apply_deltaH(wd, vector=stress_deltaH(Q))
    assert np.max(np.abs(current(shifted) - current(wd))) <= 1e-12
    assert np.allclose(stress_energy(shifted).real, stress_energy(wd).real - Q, atol=1e-12)


def test_stress_balance(varying):
    L, wd = varying
    Q, c, resid = measure_Q_stress(wd, L)
    assert abs(c + 3 / (4 * math.pi)) <= 1e-3
    shifted = apply_deltaH(wd, vector=stress_deltaH(Q))
    div, *_ = conservation_residual(stress_energy(shifted).real, L, "tensor")
    assert np.max(np.abs(div - source_term(wd, L))) <= 1e-4


def test_trace_identity(varying):
    L, wd = varying
    lhs, rhs = trace_identity(wd)
    assert np.max(np.abs(lhs - rhs)) <= 1e-8


def test_stress_symmetric_and_real(varying):
    T = stress_energy(varying[1])
    assert np.max(np.abs(T - np.swapaxes(T, 1, 2))) <= 1e-10


def test_scalar_menu_term_leaves_current(varying):
    L, wd = varying
    c = 0.37
    dH = c * wd.m[:, None, None] ** 3 * np.eye(2)
    shifted = apply_deltaH(wd, scalar=dH, L=L)
    assert np.allclose(_tr(shifted.Psi) - _tr(wd.Psi), 2 * c * wd.m ** 3, atol=1e-14)
    assert np.max(np.abs(current(shifted) - current(wd))) <= 1e-14


@given(st.integers(0, 10**6))
def test_deltaH_commute(seed):
    rng = np.random.default_rng(seed)
    from hdirac.observables import WickData

    P = 8
    c = lambda *s: rng.normal(size=s) + 1j * rng.normal(size=s)  # noqa: E731
    wd = WickData(z=np.zeros((P, 2)), Psi=c(P, 2, 2), Psi_mu=c(P, 2, 2, 2), dPsi=c(P, 2, 2, 2),
                  m=rng.normal(size=P), metric=np.diag([-1.0, 1.0]), errors=np.zeros(P))
    xs = np.arange(P) / P
    s1 = np.cos(TWO_PI * xs)[:, None, None] * c(2, 2)
    s2 = c(2, 2)
    v1 = c(P, 2, 2, 2)
    a = apply_deltaH(apply_deltaH(wd, scalar=s1, L=1.0), scalar=s2, vector=v1)
    b = apply_deltaH(apply_deltaH(wd, scalar=s2, vector=v1), scalar=s1, L=1.0)
    for name in ("Psi", "Psi_mu", "dPsi"):
        assert np.allclose(getattr(a, name), getattr(b, name), atol=1e-13)


RANDOM_4D = """coords = t, x, y, z
metric[0][0] = "-(1 + 0.1*x*x + 0.05*sin(y))"
metric[0][2] = "0.03*x*z"
metric[1][1] = "exp(0.2*t + 0.1*y)"
metric[2][2] = "1 + 0.1*sin(x + z)"
metric[3][3] = "exp(0.15*x*y) + 0.05*t*t"
m = "0.7"
"""


def test_ambiguity_flat_exactly_zero():
    out = ambiguity_tensors(flat_background(4, m="0.5"), np.zeros(4))
    assert np.all(out.I == 0) and np.all(out.J == 0) and np.all(out.m2G == 0)
    assert np.array_equal(out.m4g, 0.5 ** 4 * np.diag([-1.0, 1, 1, 1]))


def test_ambiguity_conserved_on_random_metric():
    out, divs = ambiguity_tensors(parse_background(RANDOM_4D), np.array([0.1, 0.2, -0.1, 0.3]),
                                  with_divergence=True)
    for name in ("I", "J", "G"):
        assert np.max(np.abs(divs[name])) <= 1e-6
    assert np.max(np.abs(out.I)) > 1e-3


def test_ambiguity_traces_conformally_flat():
    bg = parse_background("""coords = t, x, y, z
metric[0][0] = "-exp(0.3*x + 0.1*t*y)"
metric[1][1] = "exp(0.3*x + 0.1*t*y)"
metric[2][2] = "exp(0.3*x + 0.1*t*y)"
metric[3][3] = "exp(0.3*x + 0.1*t*y)"
""")
    x0 = np.array([0.1, 0.2, -0.1, 0.3])
    out = ambiguity_tensors(bg, x0)
    cp = curvature_package(bg, x0)
    trI = np.einsum("ab,ab->", cp.ginv, out.I)
    trJ = np.einsum("ab,ab->", cp.ginv, out.J)
    # independent box R: second differences of the scalar curvature and its gradient
    h = 1e-3
    hess = np.zeros((4, 4))
    for a in range(4):
        e = np.eye(4)[a] * h
        hess[a] = (curvature_package(bg, x0 + e).grad_R - curvature_package(bg, x0 - e).grad_R) / (2 * h)
    hess_cov = hess - np.einsum("lab,l->ab", cp.christoffel, cp.grad_R)
    boxR = np.einsum("ab,ab->", cp.ginv, hess_cov)
    assert abs(trI / trJ - 3) <= 1e-6
    assert abs(trI + 6 * boxR) <= 1e-5 * max(1.0, abs(boxR))


def test_menu_shifts(varying):
    from hdirac.observables import apply_menu

    L, wd = varying
    a0, b3 = 0.3, -0.2
    out = apply_menu(wd, {"alpha": (a0, 1.0, 1.0, 0.0, 1.0), "beta": (1.0, 1.0, 1.0, b3)}, L)
    assert np.allclose(_tr(out.Psi) - _tr(wd.Psi), 2 * a0 * wd.m ** 3, atol=1e-14)
    assert np.max(np.abs(current(out) - current(wd))) <= 1e-12
    # the scalar term's own stress shift, then the explicit m^4 g term
    scalar_only = apply_menu(wd, {"alpha": (a0,)}, L)
    dT = stress_energy(out).real - stress_energy(scalar_only).real
    assert np.allclose(dT, b3 * wd.m[:, None, None] ** 4 * wd.metric, atol=1e-12)


def test_menu_too_long(varying):
    from hdirac.observables import apply_menu

    with pytest.raises(ValueError):
        apply_menu(varying[1], {"alpha": (0,) * 6}, 1.0)
