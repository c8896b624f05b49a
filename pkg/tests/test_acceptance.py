"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` or directly as a script.
"""
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from circles import circle  # noqa: E402
from hdirac.clifford import anticommutation_residual, build_gamma  # noqa: E402
from hdirac.exprjet import Jet  # noqa: E402
from hdirac.geometry import (P_apply, connection_jets, dirac_apply, flat_background,  # noqa: E402
                             parse_background)
from hdirac.grassmann import algebra_suite  # noqa: E402
from hdirac.hadamard import (coinciding_V1, coinciding_V1_transport, riesz_R,  # noqa: E402
                             singular_T)
from hdirac.modesum import (bisolution_residual, build_modes, car_residual,  # noqa: E402
                            conjugation_residual, pointsplit_sequence)
from hdirac.observables import (ambiguity_tensors, apply_deltaH, conservation_residual,  # noqa: E402
                                current, current_deltaH, measure_Q, measure_Q_stress,
                                stress_deltaH, stress_energy, trace_identity, wick_expectations,
                                wick_on_grid)
from hdirac.scaling import lambda_linearity, rg_coefficient  # noqa: E402
from oracles.casimir_zeta import casimir_T00  # noqa: E402

CURVED = """coords = t, x
metric[0][0] = "-(1 + 0.1*x^2)"
metric[1][1] = "1 + 0.2*sin(t)"
A[0] = "0.3*x + 0.1*t*x"
A[1] = "0.2*t^2"
m = "0.5 + 0.3*x + 0.2*t"
"""

RANDOM_4D = """coords = t, x, y, z
metric[0][0] = "-(1 + 0.1*x*x + 0.05*sin(y))"
metric[0][2] = "0.03*x*z"
metric[1][1] = "exp(0.2*t + 0.1*y)"
metric[2][2] = "1 + 0.1*sin(x + z)"
metric[3][3] = "exp(0.15*x*y) + 0.05*t*t"
m = "0.7"
"""

TWO_PI = 2 * math.pi


def _max(a):
    return float(np.max(np.abs(a)))


def gamma_algebra():
    worst = 0.0
    dims_ok = True
    for n in range(2, 7):
        rep = build_gamma(n)
        worst = max(worst, anticommutation_residual(rep))
        dims_ok &= rep.N == 2 ** (n // 2) and rep.gamma.shape == (n, rep.N, rep.N)
    return worst <= 1e-14 and dims_ok, f"max residual {worst:.1e}, spinor dims ok {dims_ok}"


def operator_identity():
    bg = parse_background(CURVED)
    x = np.array([0.2, 0.3])
    rng = np.random.default_rng(1)
    nt = Jet.const(np.zeros(1), 2, 2).c.shape[0]
    psi = Jet(rng.normal(size=(nt, 100, 2)) + 1j * rng.normal(size=(nt, 100, 2)), 2, 2)
    cj = connection_jets(bg, x, 3)
    DDt = dirac_apply(bg, dirac_apply(bg, psi, x, "Dt", cj), x, "D", cj)
    r = _max(DDt.value + P_apply(bg, psi, x, cj).value)
    return r <= 1e-8, f"max |D Dt psi + P psi| {r:.1e} over 100 jets"


def coinciding_limits():
    out = {}
    mu = 0.5
    V1, _, _ = coinciding_V1_transport(flat_background(2, m=str(mu)), np.zeros(2))
    out["a"] = _max(V1 + mu * mu * np.eye(2))
    bg = flat_background(2, A=["0.4*x", "0"])
    x = np.array([0.1, 0.2])
    out["b"] = _max(coinciding_V1_transport(bg, x)[0] - coinciding_V1(bg, x, argument="first")[0])
    bg = parse_background(CURVED)
    x = np.array([0.1, 0.2])
    out["c"] = _max(coinciding_V1_transport(bg, x)[0] - coinciding_V1(bg, x, argument="first")[0])
    bg = flat_background(2, m="0.5 + 0.3*x")
    Vt, gt, _ = coinciding_V1_transport(bg, np.zeros(2))
    grad = _max(gt - coinciding_V1(bg, np.zeros(2), argument="first")[1])
    ok = max(out.values()) <= 1e-3 and grad <= 5e-3
    return ok, "V1 (a) {a:.1e} (b) {b:.1e} (c) {c:.1e}".format(**out) + f", grad V1 {grad:.1e}"


def kernel_relation():
    rng = np.random.default_rng(7)
    cases = [(n, j) for n in range(2, 7) for j in range(2, 12, 2) if n % 2 == 0 or j >= n - 1]
    worst = 0.0
    spacelike_zero = True
    for k in range(1000):
        n, j = cases[k % len(cases)]
        G, theta0 = rng.uniform(-3, 3, size=2)
        if abs(G) < 1e-3 or abs(theta0) < 1e-3:
            continue
        Lam = rng.uniform(0.25, 4.0)
        lhs = singular_T(j, n, +1, G, theta0, Lam) - singular_T(j, n, -1, G, theta0, Lam)
        rhs = 2j * math.pi * (riesz_R(j, n, G, theta0, +1) - riesz_R(j, n, G, theta0, -1))
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(rhs)))
        if G < 0:
            spacelike_zero &= lhs == 0 and rhs == 0
    return worst <= 1e-12 and spacelike_zero, f"max rel deviation {worst:.1e}, spacelike zero {spacelike_zero}"


def _band_limited(rng, cutoff, width=200):
    f = np.zeros((cutoff, 2), complex)
    c = cutoff // 2
    f[c - width:c + width] = rng.normal(size=(2 * width, 2)) + 1j * rng.normal(size=(2 * width, 2))
    return f


def car_hadamard():
    modes = build_modes(circle(1.0, "0.8", 0.3), 4096)
    rng = np.random.default_rng(0)
    car = max(car_residual(modes, _band_limited(rng, 4096), _band_limited(rng, 4096)) for _ in range(5))
    pairs = rng.uniform(0, 1, size=(6, 2, 2))
    pairs[:, :, 0] *= 0.3
    conj = conjugation_residual(modes, pairs)
    bis = bisolution_residual(modes, pairs)
    ok = car <= 1e-10 and conj <= 1e-12 and bis <= 1e-8
    return ok, f"CAR {car:.1e}, conjugation {conj:.1e}, bisolution {bis:.1e}"


def smoothness():
    seq = pointsplit_sequence(build_modes(circle(1.0), 1024), (0.0, 0.2), halvings=5)
    orders, steps = np.asarray(seq["orders"]), np.asarray(seq["steps"])
    ok = bool(np.all(orders >= 1)) and steps[-1] <= 1e-3
    return ok, f"min order {orders.min():.2f}, last step {steps[-1]:.1e}"


def casimir():
    wd = wick_expectations(build_modes(circle(1.0), 4096), (0.0, 0.0))
    T00 = float(stress_energy(wd).real[0, 0, 0])
    dev = abs(T00 - casimir_T00(1.0, "antiperiodic", 0.0))
    return dev <= 1e-6, f"T00 {T00:.10f}, deviation {dev:.1e}"


_GRID = {}


def _grid64():
    if "wd" not in _GRID:
        _GRID["wd"] = wick_on_grid(build_modes(circle(1.0, f"0.6 + 0.3*sin({TWO_PI!r}*x)", 0.2), 512), 64)
    return _GRID["wd"]


def conservation():
    wd = _grid64()
    j = current(wd)
    fixed = apply_deltaH(wd, scalar=current_deltaH(measure_Q(j)), L=1.0)
    div = _max(conservation_residual(current(fixed), 1.0)[0])
    Qs, _, _ = measure_Q_stress(fixed, 1.0)
    shift = _max(current(apply_deltaH(fixed, vector=stress_deltaH(Qs))) - current(fixed))
    return div <= 1e-6 and shift <= 1e-12, f"|div j| {div:.1e}, Psi_mu shift moves j by {shift:.1e}"


def trace():
    lhs, rhs = trace_identity(_grid64())
    idx = np.arange(0, 64, 64 // 20)[:20]
    r = _max(lhs[idx] - rhs[idx])
    return r <= 1e-8, f"max deviation {r:.1e} at {len(idx)} points"


def grassmann():
    res = algebra_suite(M=4)
    ok = all(v == 0.0 for v in res.values())
    return ok, "max residual {:.1e}".format(max(res.values()))


def rg_ratios():
    r = rg_coefficient()
    got = np.array([r.box, r.R, r.cubic, r.F])
    target = np.array([2.0, -1 / 3, -4.0, 4 / 3])
    dev = max(abs(got[i] / got[k] - target[i] / target[k]) for i in range(4) for k in range(4))
    lin = lambda_linearity(flat_background(4, A=[0, 0, 0, 0], m="0.5"), np.zeros(4),
                           np.array([0.01, 0.03, 0.02, -0.01]))
    return dev <= 1e-3 and lin <= 1e-12, f"max pairwise ratio deviation {dev:.1e}, Lambda linearity {lin:.1e}"


def ambiguity():
    flat = ambiguity_tensors(flat_background(4, m="0.5"), np.zeros(4))
    flat_zero = bool(np.all(flat.I == 0) and np.all(flat.J == 0))
    _, divs = ambiguity_tensors(parse_background(RANDOM_4D), np.array([0.1, 0.2, -0.1, 0.3]),
                                with_divergence=True)
    d = max(_max(divs["I"]), _max(divs["J"]))
    return d <= 1e-6 and flat_zero, f"max divergence {d:.1e}, flat exactly zero {flat_zero}"


CRITERIA = [
    (1, "gamma algebra", gamma_algebra),
    (2, "operator identity P", operator_identity),
    (3, "coinciding-point limits", coinciding_limits),
    (4, "kernel relation TR", kernel_relation),
    (5, "CAR and Hadamard conditions", car_hadamard),
    (6, "smoothness of omega - H", smoothness),
    (7, "Casimir oracle", casimir),
    (8, "current conservation", conservation),
    (9, "trace identity", trace),
    (10, "Grassmann algebra", grassmann),
    (11, "RG ratios", rg_ratios),
    (12, "ambiguity tensors", ambiguity),
]


def _evaluate(num, name, func):
    t0 = time.perf_counter()
    ok, detail = func()
    line = f"{'PASS' if ok else 'FAIL'} [{num:2d}] {name}: {detail} ({time.perf_counter() - t0:.1f} s)"
    return ok, line


@pytest.mark.parametrize("num, name, func", CRITERIA, ids=[f"c{c[0]:02d}" for c in CRITERIA])
def test_criterion(num, name, func, capsys):
    ok, line = _evaluate(num, name, func)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


if __name__ == "__main__":
    results = [_evaluate(*c) for c in CRITERIA]
    for _, line in results:
        print(line)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
