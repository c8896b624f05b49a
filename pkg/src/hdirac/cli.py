"""Command-line driver: ``hdirac <subcommand> [options]``.

Exit status: 0 success, 1 a diagnostic exceeds its tolerance, 2 invalid input
(unparsable background, bad option values), 3 a numerical procedure did not
converge.  JSON output always carries the configuration echo and the library
version; CSV output is one row per sampled component.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys

import numpy as np

from . import __version__

__all__ = ["main", "build_parser", "run"]


class ConvergenceFailure(RuntimeError):
    pass


class InputError(ValueError):
    pass


# ---------------------------------------------------------------------------
# helpers

def _floats(text, what):
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise InputError(f"cannot parse {what} {text!r} as comma-separated numbers") from None


def _pairs(text):
    """'t,x:t2,x2;...' -> (P, 2, n) array."""
    out = []
    for item in text.split(";"):
        if not item.strip():
            continue
        a, sep, b = item.partition(":")
        if not sep:
            raise InputError(f"pair {item!r} needs the form 't,x:t2,x2'")
        out.append([_floats(a, "point"), _floats(b, "point")])
    if not out:
        raise InputError("no point pairs given")
    return np.array(out)


def _load_bg(path):
    from .geometry import parse_background

    if path is None:
        raise InputError("a background file is required (--bg)")
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_background(fh.read())
    except OSError as err:
        raise InputError(f"cannot read background file: {err}") from None


def _cplx(a):
    """JSON form of a (possibly complex) array: nested lists of [re, im] or plain reals."""
    a = np.asarray(a)
    if np.iscomplexobj(a) and np.any(a.imag != 0):
        return np.stack([a.real, a.imag], -1).round(15).tolist()
    return np.real(a).round(15).tolist()


def _config(args):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
    return {k: (v if isinstance(v, (int, float, str, bool, type(None))) else str(v)) for k, v in cfg.items()}


def _emit_json(args, payload, out):
    doc = {"command": args.command, "version": __version__, "config": _config(args)}
    doc.update(payload)
    out.write(json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _emit_csv(header, rows, out):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{v:.15e}" if isinstance(v, float) else v for v in r])
    out.write(buf.getvalue())


def _status(ok):
    return 0 if ok else 1


def _circle_modes(args, bg):
    from .modesum import build_modes

    if args.cutoff < 8 or args.cutoff & (args.cutoff - 1):
        raise InputError("cutoff must be a power of two >= 8")
    return build_modes(bg, args.cutoff)


# ---------------------------------------------------------------------------
# subcommands

def cmd_gamma(args, out):
    from .clifford import anticommutation_residual, build_gamma, double_conjugation_sign

    if args.dim < 2:
        raise InputError("dim must be at least 2")
    rep = build_gamma(args.dim)
    res = anticommutation_residual(rep)
    payload = {"dim": args.dim, "spinor_dimension": rep.N, "anticommutation_residual": res,
               "double_conjugation_sign": _cplx(double_conjugation_sign(rep))}
    if args.show:
        payload["gamma"] = _cplx(rep.gamma)
        payload["beta"] = _cplx(rep.beta)
    if args.format == "text":
        out.write(f"max anticommutation residual {res:.1e}\n")
    else:
        _emit_json(args, payload, out)
    return _status(not args.check or res <= args.tol)


def cmd_geodesic(args, out):
    from .geometry import geodesic_connect

    bg = _load_bg(args.bg)
    link = geodesic_connect(bg, _floats(args.x, "x"), _floats(args.xp, "xp"), steps=args.steps)
    payload = {"world_function": float(link.world_function), "theta0": float(link.theta0),
               "tangent": _cplx(link.tangent), "velocity": _cplx(link.velocity),
               "midpoint": _cplx(link.midpoint), "box_world_function": float(link.box_world_function),
               "shooting_residual": link.residual}
    _emit_json(args, payload, out)
    return _status(link.residual <= args.tol)


def cmd_v1(args, out):
    from .hadamard import coinciding_V1, coinciding_V1_transport

    bg = _load_bg(args.bg)
    x = _floats(args.point, "point")
    V1, grad = coinciding_V1(bg, x, argument=args.argument)
    payload = {"V1_limit": _cplx(V1), "grad_V1_limit": _cplx(grad), "argument": args.argument}
    ok = True
    if args.transport:
        Vt, gt, info = coinciding_V1_transport(bg, x)
        first = coinciding_V1(bg, x, argument="first")[1]
        payload["transport"] = {"V1_limit": _cplx(Vt), "grad_V1_limit_first": _cplx(gt),
                                "V1_difference": float(np.max(np.abs(Vt - V1))),
                                "grad_difference": float(np.max(np.abs(gt - first)))}
        ok = payload["transport"]["V1_difference"] <= args.tol
    _emit_json(args, payload, out)
    return _status(ok)


def cmd_parametrix(args, out):
    from .hadamard import assemble_parametrix

    bg = _load_bg(args.bg)
    pe = assemble_parametrix(bg, _floats(args.x, "x"), _floats(args.xp, "xp"), k_max=args.k_max,
                             Lam=args.Lam)
    payload = {"world_function": float(pe.world_function), "h_plus": _cplx(pe.h_plus),
               "h_minus": _cplx(pe.h_minus), "H_plus": _cplx(pe.H_plus), "H_minus": _cplx(pe.H_minus),
               "H_double": _cplx(pe.H_double)}
    _emit_json(args, payload, out)
    return 0


def cmd_state(args, out):
    from .modesum import bisolution_residual, conjugation_residual, state_kernels

    bg = _load_bg(args.bg)
    modes = _circle_modes(args, bg)
    pairs = _pairs(args.pairs) / bg.scale
    wp, wm, S = state_kernels(modes, pairs)
    conj = conjugation_residual(modes, pairs)
    bis = bisolution_residual(modes, pairs)
    rows = []
    for p in range(len(pairs)):
        for name, K in (("omega_plus", wp), ("omega_minus", wm), ("S", S)):
            for i in range(2):
                for j in range(2):
                    rows.append([p, name, f"{i}{j}", float(K[p, i, j].real), float(K[p, i, j].imag)])
    if args.format == "json":
        _emit_json(args, {"conjugation_residual": conj, "bisolution_residual": bis,
                          "omega_plus": _cplx(wp), "omega_minus": _cplx(wm), "S": _cplx(S)}, out)
    else:
        _emit_csv(["pair", "kernel", "component", "re", "im"], rows, out)
    if args.report:
        from .plotting import spectrum_figure

        spectrum_figure(args.report, "spectrum.png", modes.E)
    return _status(conj <= 1e-12 and bis <= 1e-8)


def _grid_wick(args, bg, menu=True):
    from .observables import apply_menu, wick_on_grid

    modes = _circle_modes(args, bg)
    wd = wick_on_grid(modes, args.grid, Lam=args.Lam)
    if wd.errors.max() > args.fit_tol:
        raise ConvergenceFailure(f"point-split fit error {wd.errors.max():.2e} exceeds {args.fit_tol:.1e}")
    if menu and bg.menu:
        try:
            wd = apply_menu(wd, bg.menu, modes.L * bg.scale)
        except ValueError as err:
            raise InputError(str(err)) from None
    return modes, wd


def cmd_current(args, out):
    from .observables import current

    bg = _load_bg(args.bg)
    modes, wd = _grid_wick(args, bg)
    j = current(wd)
    rows = [[p, f"j{mu}", float(wd.z[p, 1]), float(j[p, mu]), float(wd.errors[p])]
            for p in range(len(j)) for mu in range(2)]
    _write_grid(args, out, rows, {"j": _cplx(j)})
    if args.report:
        from .plotting import line_figure

        line_figure(args.report, "current.png", wd.z[:, 1], {"j^0": j[:, 0], "j^1": j[:, 1]})
    return 0


def cmd_stress(args, out):
    from .observables import stress_energy, trace_identity

    bg = _load_bg(args.bg)
    modes, wd = _grid_wick(args, bg)
    T = stress_energy(wd).real
    lhs, rhs = trace_identity(wd)
    rows = [[p, f"T{a}{b}", float(wd.z[p, 1]), float(T[p, a, b]), float(wd.errors[p])]
            for p in range(len(T)) for a in range(2) for b in range(2)]
    _write_grid(args, out, rows, {"T": _cplx(T), "trace_identity_residual": float(np.max(np.abs(lhs - rhs)))})
    if args.report:
        from .plotting import line_figure

        line_figure(args.report, "stress.png", wd.z[:, 1], {"T_00": T[:, 0, 0], "T_11": T[:, 1, 1]})
    return _status(float(np.max(np.abs(lhs - rhs))) <= 1e-8)


def _write_grid(args, out, rows, payload):
    if args.format == "json":
        _emit_json(args, payload, out)
    else:
        _emit_csv(["point", "component", "x", "value", "error_estimate"], rows, out)


def cmd_conserve(args, out):
    from .observables import (apply_deltaH, apply_menu, conservation_residual, current,
                              current_deltaH, measure_Q, measure_Q_stress, source_term,
                              stress_deltaH, stress_energy)

    bg = _load_bg(args.bg)
    # the corrections are measured on the canonical Wick squares; the menu is reported on top
    modes, wd = _grid_wick(args, bg, menu=False)
    L = modes.L * bg.scale
    j = current(wd)
    div_j, _, err_j, _ = conservation_residual(j, L, "vector", wd.metric)
    Q = measure_Q(j)
    wd2 = apply_deltaH(wd, scalar=current_deltaH(Q, wd.metric), L=L)
    div_j2, *_ = conservation_residual(current(wd2), L, "vector", wd.metric)
    Qs, c, fit = measure_Q_stress(wd2, L)
    wd3 = apply_deltaH(wd2, vector=stress_deltaH(Qs, wd.metric))
    T3 = stress_energy(wd3).real
    div_T3, _, err_T, trace = conservation_residual(T3, L, "tensor", wd.metric)
    balance = float(np.max(np.abs(div_T3 - source_term(wd3, L))))
    payload = {"current_divergence_before": float(np.max(np.abs(div_j))),
               "current_divergence_after": float(np.max(np.abs(div_j2))),
               "current_shift_from_stress_correction": float(np.max(np.abs(current(wd3) - current(wd2)))),
               "stress_Q_coefficient": c, "stress_Q_fit_residual": fit,
               "stress_balance_residual": balance, "derivative_error_estimate": max(err_j, err_T),
               "trace": _cplx(trace)}
    if bg.menu:
        try:
            wd4 = apply_menu(wd3, bg.menu, L)
        except ValueError as err:
            raise InputError(str(err)) from None
        div_T4, *_ = conservation_residual(stress_energy(wd4).real, L, "tensor", wd.metric)
        payload["menu_balance_residual"] = float(np.max(np.abs(div_T4 - source_term(wd4, L))))
    _emit_json(args, payload, out)
    if args.report:
        from .plotting import line_figure

        line_figure(args.report, "conservation.png", wd.z[:, 1],
                    {"d_x j^1 before": div_j, "d_x j^1 after": div_j2})
    return _status(payload["current_divergence_after"] <= args.tol and balance <= 1e-4)


def cmd_algebra(args, out):
    from .grassmann import algebra_suite

    res = algebra_suite(M=args.modes, seed=args.seed)
    _emit_json(args, {"residuals": res, "max_residual": max(res.values())}, out)
    return _status(max(res.values()) <= args.tol)


def cmd_rg(args, out):
    from .geometry import flat_background
    from .scaling import lambda_linearity, rg_coefficient

    r = rg_coefficient()
    target = {"box": 2.0, "R": -1 / 3, "cubic": -4.0, "F": 4 / 3}
    got = {"box": r.box, "R": r.R, "cubic": r.cubic, "F": r.F}
    dev = max(abs(got[k] - target[k]) for k in target)
    lin = lambda_linearity(flat_background(4, A=[0, 0, 0, 0], m="0.5"), np.zeros(4),
                           np.array([0.01, 0.03, 0.02, -0.01]))
    _emit_json(args, {"coefficients": got, "ratios": r.ratios(), "max_deviation": dev,
                      "lambda_linearity_residual": lin}, out)
    return _status(dev <= 1e-3 and lin <= 1e-12)


def cmd_scaling(args, out):
    from .scaling import scaling_check

    bg = _load_bg(args.bg)
    lams = _floats(args.lams, "lambda grid")
    if np.any(lams <= 0):
        raise InputError("lambda values must be positive")
    rep = scaling_check(bg, _floats(args.point, "point"), args.selector, lams, cutoff=args.cutoff,
                        Lam=args.Lam)
    payload = {"lams": _cplx(rep.lams), "values": _cplx(rep.values), "dimension": rep.dimension,
               "homogeneous": rep.homogeneous, "log_coefficient": rep.log_coefficient,
               "fit_residual": rep.residual, "window_slopes": list(rep.window_slopes)}
    _emit_json(args, payload, out)
    if args.report:
        from .plotting import line_figure

        line_figure(args.report, "scaling.png", np.log(rep.lams),
                    {"lambda^-d S_lambda W": rep.values * rep.lams ** -float(rep.dimension)},
                    xlabel="log lambda")
    return _status(rep.residual <= args.tol)


def casimir_closed_form(L, spin):
    """Zeta-regularized massless energy density -(4 pi / L^2) zeta(-1, q), q = 1/2 or 1.

    Uses zeta(-1, q) = -B_2(q) / 2 with B_2(q) = q^2 - q + 1/6.
    """
    q = 0.5 if spin == "antiperiodic" else 1.0
    zeta = -(q * q - q + 1 / 6) / 2
    return -4 * math.pi * zeta / L ** 2


def cmd_casimir(args, out):
    from .geometry import flat_background
    from .observables import stress_energy, wick_expectations

    if not args.L > 0:
        raise InputError("L must be positive")
    bg = flat_background(2, A=[0, 0], m="0", spin_structure=args.spin, circumference=args.L)
    modes = _circle_modes(args, bg)
    wd = wick_expectations(modes, (0.0, 0.0), Lam=args.Lam)
    T = stress_energy(wd).real[0]
    ref = casimir_closed_form(args.L, args.spin)
    dev = abs(T[0, 0] - ref)
    _emit_json(args, {"T00": float(T[0, 0]), "T11": float(T[1, 1]), "T01": float(T[0, 1]),
                      "zeta_reference": ref, "deviation": dev}, out)
    return _status(dev <= args.tol)


# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="hdirac", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"hdirac {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_, bg=True, fmt=("json",), report=False):
        s = sub.add_parser(name, help=help_)
        if bg:
            s.add_argument("--bg", help="background-spec file")
        s.add_argument("--format", choices=fmt, default=fmt[0])
        s.add_argument("--out", help="write output to this file instead of stdout")
        if report:
            s.add_argument("--report", metavar="DIR", help="also write figures to DIR")
        s.set_defaults(func=func)
        return s

    def circle(s):
        s.add_argument("--cutoff", type=int, default=4096)
        s.add_argument("--Lam", type=float, default=1.0)

    s = add("gamma", cmd_gamma, "gamma matrices and Clifford residual", bg=False, fmt=("text", "json"))
    s.add_argument("--dim", type=int, required=True)
    s.add_argument("--check", action="store_true", help="fail if the residual exceeds --tol")
    s.add_argument("--show", action="store_true", help="include the matrices (json)")
    s.add_argument("--tol", type=float, default=1e-14)

    s = add("geodesic", cmd_geodesic, "geodesic link between two points")
    s.add_argument("--x", required=True)
    s.add_argument("--xp", required=True)
    s.add_argument("--steps", type=int, default=64)
    s.add_argument("--tol", type=float, default=1e-10)

    s = add("v1", cmd_v1, "coinciding limits [V1], [nabla V1]")
    s.add_argument("--point", required=True)
    s.add_argument("--argument", choices=("second", "first"), default="second")
    s.add_argument("--transport", action="store_true", help="cross-check by transport ODEs")
    s.add_argument("--tol", type=float, default=1e-3)

    s = add("parametrix", cmd_parametrix, "parametrix at a point pair")
    s.add_argument("--x", required=True)
    s.add_argument("--xp", required=True)
    s.add_argument("--k-max", dest="k_max", type=int, default=1)
    s.add_argument("--Lam", type=float, default=1.0)

    s = add("state", cmd_state, "ground-state kernels on a circle", fmt=("csv", "json"), report=True)
    circle(s)
    s.add_argument("--pairs", required=True, help="'t,x:t2,x2;...'")

    for name, func, help_ in (("current", cmd_current, "renormalized current on a grid"),
                              ("stress", cmd_stress, "renormalized stress-energy on a grid")):
        s = add(name, func, help_, fmt=("csv", "json"), report=True)
        circle(s)
        s.add_argument("--grid", type=int, default=32)
        s.add_argument("--fit-tol", dest="fit_tol", type=float, default=1e-4)

    s = add("conserve", cmd_conserve, "conservation residuals and delta-H corrections", report=True)
    circle(s)
    s.add_argument("--grid", type=int, default=64)
    s.add_argument("--fit-tol", dest="fit_tol", type=float, default=1e-4)
    s.add_argument("--tol", type=float, default=1e-6)

    s = add("algebra-check", cmd_algebra, "exhaustive Grassmann star-product identities", bg=False)
    s.add_argument("--modes", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tol", type=float, default=1e-12)

    add("rg", cmd_rg, "RG monomial coefficients and Lambda linearity (n = 4)", bg=False)

    s = add("scaling", cmd_scaling, "scaling of a Wick square under S_lambda", report=True)
    circle(s)
    s.add_argument("--point", required=True)
    s.add_argument("--selector", default="trPsi", choices=("trPsi", "j0", "j1", "T00", "T11"))
    s.add_argument("--lams", default="0.5,0.7071067811865476,1,1.4142135623730951,2")
    s.add_argument("--tol", type=float, default=1e-6)

    s = add("casimir", cmd_casimir, "massless circle Casimir energy density", bg=False)
    circle(s)
    s.add_argument("--L", type=float, default=1.0)
    s.add_argument("--spin", choices=("antiperiodic", "periodic"), default="antiperiodic")
    s.add_argument("--tol", type=float, default=1e-6)
    return p


def run(argv=None, out=None):
    """Parse ``argv`` and run the subcommand; returns the exit status."""
    from .exprjet import ExprSyntaxError, JetDomainError, UnknownIdentifierError
    from .geometry import BackgroundError, ShootingError
    from .hadamard import OnConeError
    from .modesum import CutoffError, ZeroModeError
    from .scaling import ScalingError

    parser = build_parser()
    args = parser.parse_args(argv)
    sink = io.StringIO()
    try:
        status = args.func(args, sink)
    except (InputError, BackgroundError, ExprSyntaxError, UnknownIdentifierError, ZeroModeError,
            ScalingError, OnConeError, JetDomainError, CutoffError) as err:
        print(f"hdirac: error: {err}", file=sys.stderr)
        return 2
    except (ConvergenceFailure, ShootingError) as err:
        print(f"hdirac: convergence failure: {err}", file=sys.stderr)
        return 3
    text = sink.getvalue()
    if getattr(args, "out", None):
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        (out or sys.stdout).write(text)
    return status


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
