import numpy as np
import pytest
from hypothesis import given, strategies as st

from hdirac.exprjet import Jet
from hdirac.geometry import (BackgroundError, P_apply, connection_jets, curvature_package,
                             dirac_apply, flat_background, geodesic_connect, parse_background,
                             unscaled)

CURVED = """coords = t, x
metric[0][0] = "-(1 + 0.1*x^2)"
metric[1][1] = "1 + 0.2*sin(t)"
A[0] = "0.3*x + 0.1*t*x"
A[1] = "0.2*t^2"
m = "0.5 + 0.3*x + 0.2*t"
"""


@pytest.fixture(scope="module")
def curved():
    return parse_background(CURVED)


def _random_jet(rng, batch, N, order, n=2):
    nt = Jet.const(np.zeros(1), n, order).c.shape[0]
    c = rng.normal(size=(nt, batch, N)) + 1j * rng.normal(size=(nt, batch, N))
    return Jet(c, n, order)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_flat_curvature_vanishes(n):
    cp = curvature_package(flat_background(n), np.zeros(n))
    assert np.all(cp.riemann == 0)
    assert cp.R == 0
    assert np.all(cp.sigma == 0)


def test_de_sitter_slice_curvature():
    bg = parse_background('coords = t, x\nmetric[1][1] = "exp(2*t)"')
    assert np.isclose(curvature_package(bg, [0.1, 0.2]).R, 2.0, atol=1e-12)


def test_linear_potential_field_strength():
    E0 = 0.4
    cp = curvature_package(flat_background(2, A=[f"{E0}*x", "0"]), [0.1, 0.2])
    assert np.isclose(cp.F[0, 1], -E0)
    assert np.isclose(cp.F[1, 0], E0)


def test_riemann_symmetries_and_frame(curved):
    bg = parse_background("""coords = t, x, y
metric[0][0] = "-(1 + 0.1*x*y)"
metric[0][1] = "0.05*y"
metric[1][1] = "exp(0.2*t)"
metric[2][2] = "1 + 0.1*sin(x)"
""")
    cp = curvature_package(bg, [0.1, 0.2, 0.3])
    Rl = np.einsum("ra,abcd->rbcd", cp.g, cp.riemann)
    assert np.allclose(Rl, -np.swapaxes(Rl, 2, 3), atol=1e-9)
    assert np.allclose(Rl, -np.swapaxes(Rl, 0, 1), atol=1e-9)
    bianchi = Rl + np.einsum("abcd->acdb", Rl) + np.einsum("abcd->adbc", Rl)
    assert np.max(np.abs(bianchi)) <= 1e-9
    e = cp.frame
    eta = np.diag([-1.0, 1.0, 1.0])
    assert np.allclose(np.einsum("am,bv,mv->ab", e, e, cp.g), eta, atol=1e-12)


def test_degenerate_metric_rejected():
    bg = parse_background('coords = t, x\nmetric[0][0] = "-1"\nmetric[0][1] = "1"\nmetric[1][1] = "-1"')
    with pytest.raises(BackgroundError):
        curvature_package(bg, [0.0, 0.0])
    riemannian = parse_background('coords = t, x\nmetric[0][0] = "1"')
    with pytest.raises(BackgroundError):
        curvature_package(riemannian, [0.0, 0.0])


def test_dirac_on_constant_spinor():
    bg = flat_background(2, m="0.7")
    rng = np.random.default_rng(0)
    psi = Jet.const(rng.normal(size=2) + 0j, 2, 1)
    out = dirac_apply(bg, psi, np.zeros(2), "D")
    assert np.allclose(out.value, 0.7 * psi.value)


def test_plane_wave_dispersion():
    mu, k = 0.6, 1.3
    E = np.hypot(k, mu)
    bg = flat_background(2, m=str(mu))
    rep_beta = np.array([[0, 1], [1, 0]], complex)
    # solve the algebraic Dirac equation (-g^mu (i p_mu) + m) u = 0 for p = (-E, k)
    from hdirac.clifford import build_gamma

    g = build_gamma(2).gamma
    p_low = np.array([-E, k])
    Mmat = -1j * (g[0] * p_low[0] + g[1] * p_low[1]) + mu * np.eye(2)
    w, v = np.linalg.eig(Mmat)
    u = v[:, np.argmin(np.abs(w))]
    x0 = np.array([0.3, -0.2])
    # order-2 jet of u exp(i p.x) at x0
    from hdirac.exprjet import variables

    t, x = variables(x0, 2)
    phase = (t * (1j * p_low[0]) + x * (1j * p_low[1])).exp()
    psi = Jet(phase.c[:, None] * u[None, :], 2, 2)
    assert np.max(np.abs(dirac_apply(bg, psi, x0, "D").value)) <= 1e-12
    bad = Jet(((t * (1j * p_low[0] * 1.1) + x * (1j * p_low[1])).exp()).c[:, None] * u, 2, 2)
    assert np.max(np.abs(dirac_apply(bg, bad, x0, "D").value)) > 1e-2
    assert rep_beta.shape == (2, 2)


def test_eq_P_on_curved_background(curved):
    x = np.array([0.2, 0.3])
    rng = np.random.default_rng(1)
    psi = _random_jet(rng, 100, 2, 2)
    cj = connection_jets(curved, x, 3)
    DDt = dirac_apply(curved, dirac_apply(curved, psi, x, "Dt", cj), x, "D", cj)
    P = P_apply(curved, psi, x, cj)
    assert np.max(np.abs(DDt.value + P.value)) <= 1e-8


@given(st.integers(0, 10**6))
def test_eq_P_random_backgrounds(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-0.3, 0.3, size=6)
    bg = parse_background(f"""coords = t, x, y
metric[0][0] = "-(1 + {a[0]}*x*x)"
metric[1][1] = "exp({a[1]}*t + {a[2]}*y)"
metric[2][2] = "1 + {a[3]}*sin(x)"
A[0] = "{a[4]}*x*y"
A[2] = "{a[5]}*t"
m = "0.5 + {a[2]}*x + {a[0]}*t*y"
""")
    x = rng.uniform(-0.3, 0.3, size=3)
    psi = _random_jet(rng, 5, 2, 2, n=3)
    cj = connection_jets(bg, x, 3)
    DDt = dirac_apply(bg, dirac_apply(bg, psi, x, "Dt", cj), x, "D", cj)
    assert np.max(np.abs(DDt.value + P_apply(bg, psi, x, cj).value)) <= 1e-8


def test_dirac_needs_order_one():
    with pytest.raises(ValueError):
        dirac_apply(flat_background(2), Jet.const(np.ones(2), 2, 0), np.zeros(2))


def test_flat_geodesic_link():
    h = 0.3
    L = geodesic_connect(flat_background(2), np.array([0.0, h]), np.zeros(2))
    assert np.isclose(L.world_function, -h * h)
    assert L.box_world_function == -4.0
    assert np.allclose(L.U_spin, np.eye(2), atol=1e-14)


def test_constant_potential_holonomy():
    a0, h = 0.7, 0.3
    L = geodesic_connect(flat_background(2, A=["0", str(a0)]), np.array([0.0, h]), np.zeros(2))
    assert np.allclose(L.U_spin, np.exp(1j * a0 * h) * np.eye(2), atol=1e-12)


def test_link_symmetry_and_coinciding_limit(curved):
    x = np.array([0.2, 0.3])
    v = np.array([0.3, 1.0])
    cp = curvature_package(curved, x)
    ratios = []
    for h in (0.1, 0.05):
        fwd = geodesic_connect(curved, x + h * v, x)
        back = geodesic_connect(curved, x, x + h * v)
        assert abs(fwd.world_function - back.world_function) <= 1e-10
        assert np.max(np.abs(fwd.U_spin @ back.U_spin - np.eye(2))) <= 1e-8
        assert fwd.residual <= 1e-10
        s = fwd.tangent
        ratios.append((fwd.box_world_function + 4) / ((2 / 3) * s @ cp.ricci @ s))
    # box Gamma + 2n = (2/3) R_ab s^a s^b + O(h^3): Richardson in h
    assert abs(2 * ratios[1] - ratios[0] - 1) <= 1e-3


def test_unscaled_requires_flat(curved):
    with pytest.raises(BackgroundError):
        unscaled(curved.rescaled(2.0))


def test_background_round_trip(curved):
    assert parse_background(curved.to_text()) == curved
