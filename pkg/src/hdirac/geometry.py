"""Backgrounds, connection and curvature data, Dirac operators, and geodesics.

Curvature conventions::

    R^r_{s m v} = d_m G^r_{v s} - d_v G^r_{m s} + G^r_{m l} G^l_{v s} - G^r_{v l} G^l_{m s}
    R_{s v}     = R^r_{s r v},     R = g^{s v} R_{s v}

With these, the unit 2-sphere has R = +2 and ``-dt^2 + exp(2t) dx^2`` has R = +2.

Spinor covariant derivative ``nabla_m psi = d_m psi + C_m psi`` with
``C_m = sigma_m - i A_m``, the spin connection
``sigma_m = 1/4 omega_{m a b} gamma^a gamma^b`` and
``omega_{m a b} = g_{n r} e_a^r (d_m e_b^n + G^n_{m l} e_b^l)``.
Cospinors use ``nabla^c_m z' = d_m z' - z' C_m``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .clifford import build_gamma
from .exprjet import (BinOp, Call, Jet, Neg, Num, Var, evaluate, free_variables, jet_einsum, jet_matinv,
                      parse_expression, to_source, variables)

__all__ = [
    "Background", "BackgroundError", "parse_background", "load_background", "flat_background",
    "field_jets", "stack_jets", "grad", "connection_jets", "CurvaturePackage",
    "curvature_package", "dirac_apply", "P_apply", "spin_covariant_derivative",
    "ShootingError", "GeodesicLink", "christoffel_values", "connection_values",
    "integrate_geodesic", "shoot", "transport", "node_points", "geodesic_connect",
    "riemann_from", "field_strength_from", "unscaled", "substitute_coords",
]


class BackgroundError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Background:
    """A chart with metric, U(1) potential and Yukawa field given as expressions.

    ``scale`` records a pending rescaling ``g -> scale^-2 g, A -> scale A,
    m -> scale m`` so that rescaling composes exactly.
    """

    coords: tuple
    metric: tuple  # n x n nested tuple of Expression
    A: tuple
    m: object
    spin_structure: str = "antiperiodic"
    circumference: float | None = None
    menu: dict = field(default_factory=dict)
    scale: float = 1.0

    @property
    def n(self):
        return len(self.coords)

    def __eq__(self, other):
        return (isinstance(other, Background) and self.coords == other.coords
                and self.metric == other.metric and self.A == other.A and self.m == other.m
                and self.spin_structure == other.spin_structure
                and self.circumference == other.circumference and self.scale == other.scale)

    def __hash__(self):
        return hash((self.coords, self.metric, self.A, self.m, self.scale))

    def rescaled(self, lam):
        if not lam > 0:
            raise ValueError("scale factor must be positive")
        return replace(self, scale=self.scale * lam)

    @cached_property
    def is_flat_metric(self):
        eta = np.eye(self.n)
        eta[0, 0] = -1
        for i in range(self.n):
            for j in range(self.n):
                e = self.metric[i][j]
                if free_variables(e) or float(evaluate(e, {})) != eta[i, j]:
                    return False
        return True

    def to_text(self):
        lines = [f"dim = {self.n}", "coords = " + ", ".join(self.coords)]
        for i in range(self.n):
            for j in range(i, self.n):
                lines.append(f'metric[{i}][{j}] = "{to_source(self.metric[i][j])}"')
        for i in range(self.n):
            lines.append(f'A[{i}] = "{to_source(self.A[i])}"')
        lines.append(f'm = "{to_source(self.m)}"')
        lines.append(f"spin_structure = {self.spin_structure}")
        if self.circumference is not None:
            lines.append(f"circumference = {self.circumference!r}")
        for k, v in self.menu.items():
            lines.append(f"{k} = " + ", ".join(repr(float(x)) for x in v))
        if self.scale != 1.0:
            lines.append(f"scale = {self.scale!r}")
        return "\n".join(lines) + "\n"


_LINE = re.compile(r"^\s*([A-Za-z_]+)\s*((?:\[\s*\d+\s*\])*)\s*=\s*(.*?)\s*$")


def _unquote(v):
    if len(v) >= 2 and v[0] == v[-1] and v[0] in "\"'":
        return v[1:-1]
    return v


def parse_background(text):
    """Parse the background-spec format (see README for the grammar)."""
    entries = {}
    metric_src, A_src = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip() if '"' not in raw else _strip_comment(raw)
        if not line:
            continue
        mt = _LINE.match(line)
        if mt is None:
            raise BackgroundError(f"line {lineno}: cannot parse {raw.strip()!r}")
        key, idx, val = mt.group(1), mt.group(2), mt.group(3)
        ids = tuple(int(s) for s in re.findall(r"\d+", idx))
        if key == "metric":
            if len(ids) != 2:
                raise BackgroundError(f"line {lineno}: metric needs two indices")
            metric_src[ids] = (_unquote(val), lineno)
        elif key == "A":
            if len(ids) != 1:
                raise BackgroundError(f"line {lineno}: A needs one index")
            A_src[ids[0]] = (_unquote(val), lineno)
        elif ids:
            raise BackgroundError(f"line {lineno}: unexpected index on {key!r}")
        else:
            entries[key] = (_unquote(val), lineno)
    if "coords" not in entries:
        raise BackgroundError("missing 'coords'")
    coords = tuple(c.strip() for c in entries["coords"][0].split(","))
    n = len(coords)
    if "dim" in entries and int(entries["dim"][0]) != n:
        raise BackgroundError("'dim' does not match the number of coordinates")

    def expr(src, lineno):
        try:
            return parse_expression(src, coords)
        except ValueError as err:
            raise BackgroundError(f"line {lineno}: {err}") from err

    eta = np.eye(n)
    eta[0, 0] = -1
    metric = [[None] * n for _ in range(n)]
    for (i, j), (src, ln) in metric_src.items():
        if not (0 <= i < n and 0 <= j < n):
            raise BackgroundError(f"line {ln}: metric index out of range")
        e = expr(src, ln)
        if metric[i][j] is not None and metric[i][j] != e:
            raise BackgroundError(f"line {ln}: metric is not symmetric")
        metric[i][j] = metric[j][i] = e
    for i in range(n):
        for j in range(n):
            if metric[i][j] is None:
                metric[i][j] = Num(float(eta[i, j]))
    A = [Num(0.0)] * n
    for i, (src, ln) in A_src.items():
        if not 0 <= i < n:
            raise BackgroundError(f"line {ln}: A index out of range")
        A[i] = expr(src, ln)
    m = expr(*entries["m"]) if "m" in entries else Num(0.0)
    spin = entries.get("spin_structure", ("antiperiodic", 0))[0]
    if spin not in ("periodic", "antiperiodic"):
        raise BackgroundError("spin_structure must be 'periodic' or 'antiperiodic'")
    circ = float(entries["circumference"][0]) if "circumference" in entries else None
    menu = {}
    for key in ("alpha", "beta"):
        if key in entries:
            menu[key] = tuple(float(v) for v in entries[key][0].split(","))
    scale = float(entries["scale"][0]) if "scale" in entries else 1.0
    known = {"dim", "coords", "m", "spin_structure", "circumference", "alpha", "beta", "scale"}
    unknown = set(entries) - known
    if unknown:
        raise BackgroundError(f"unknown keys: {sorted(unknown)}")
    return Background(coords=coords, metric=tuple(tuple(r) for r in metric), A=tuple(A), m=m,
                      spin_structure=spin, circumference=circ, menu=menu, scale=scale)


def _strip_comment(raw):
    out, quoted = [], None
    for ch in raw:
        if quoted:
            if ch == quoted:
                quoted = None
        elif ch in "\"'":
            quoted = ch
        elif ch == "#":
            break
        out.append(ch)
    return "".join(out).strip()


def load_background(path):
    with open(path) as fh:
        return parse_background(fh.read())


def flat_background(n=2, A=None, m="0", coords=None, **kw):
    """Convenience constructor: Minkowski metric with optional potential and mass strings."""
    coords = tuple(coords or (["t", "x", "y", "z"][:n] if n <= 4 else [f"x{i}" for i in range(n)]))
    lines = ["coords = " + ", ".join(coords), f'm = "{m}"']
    for i, a in enumerate(A or []):
        lines.append(f'A[{i}] = "{a}"')
    bg = parse_background("\n".join(lines))
    return replace(bg, **kw) if kw else bg


def substitute_coords(e, factor):
    """Expression with every coordinate variable ``v`` replaced by ``factor * v``."""
    if isinstance(e, Var):
        return BinOp("*", Num(float(factor)), e)
    if isinstance(e, Neg):
        return Neg(substitute_coords(e.arg, factor))
    if isinstance(e, BinOp):
        return BinOp(e.op, substitute_coords(e.left, factor), substitute_coords(e.right, factor))
    if isinstance(e, Call):
        return Call(e.fn, substitute_coords(e.arg, factor))
    return e


def _times(e, c):
    if c == 1.0:
        return e
    if isinstance(e, Num):
        return Num(e.value * c)
    return BinOp("*", Num(float(c)), e)


def unscaled(bg):
    """An equivalent background with ``scale = 1`` in proper coordinates X = x / scale.

    Only for constant metrics (the rescaled metric is then again Minkowski in X).
    Potential components pick up scale^2, the mass scale, and the circumference 1/scale.
    """
    s = bg.scale
    if s == 1.0:
        return bg
    if not bg.is_flat_metric:
        raise BackgroundError("unscaled() needs a Minkowski coordinate metric")
    A = tuple(_times(substitute_coords(a, s), s * s) for a in bg.A)
    m = _times(substitute_coords(bg.m, s), s)
    circ = None if bg.circumference is None else bg.circumference / s
    return replace(bg, A=A, m=m, circumference=circ, scale=1.0)


# ---------------------------------------------------------------------------
# jets of the background fields

def stack_jets(jets, axis=-1):
    """Stack equal-order jets along a new trailing value axis."""
    order = min(j.order for j in jets)
    jets = [j.truncate(order) for j in jets]
    shape = np.broadcast_shapes(*[j.c.shape for j in jets])
    cs = [np.broadcast_to(j.c, shape) for j in jets]
    ax = axis if axis >= 0 else len(shape) + 1 + axis
    return Jet(np.stack(cs, axis=ax), jets[0].nvars, order)


def grad(j, vars=None):
    """Jet of first partial derivatives with the derivative index appended last."""
    vars = range(j.nvars) if vars is None else vars
    return stack_jets([j.partial(k) for k in vars])


def _eval(e, env, batch, n, order, factor=1.0):
    out = evaluate(e, env)
    if not isinstance(out, Jet):
        out = Jet.const(np.full(batch, float(out)), n, order)
    if factor != 1.0:
        out = out * factor
    return out


def field_jets(bg, x, order):
    """Jets of the metric (..., n, n), potential (..., n) and mass (...) at points ``x``."""
    x = np.asarray(x, dtype=float)
    n = bg.n
    batch = x.shape[:-1]
    env = dict(zip(bg.coords, variables(x, order)))
    s = bg.scale
    g = stack_jets([stack_jets([_eval(bg.metric[i][j], env, batch, n, order, s ** -2)
                                for j in range(n)]) for i in range(n)])
    A = stack_jets([_eval(bg.A[i], env, batch, n, order, s) for i in range(n)])
    m = _eval(bg.m, env, batch, n, order, s)
    # make every field carry the batch shape explicitly
    g = Jet(np.broadcast_to(g.c, g.c.shape[:1] + batch + (n, n)).copy(), n, order)
    A = Jet(np.broadcast_to(A.c, A.c.shape[:1] + batch + (n,)).copy(), n, order)
    m = Jet(np.broadcast_to(m.c, m.c.shape[:1] + batch).copy(), n, order)
    return g, A, m


def _frame(g):
    """Orthonormal frame e[a] (vector jets) by time-first Gram-Schmidt."""
    n = g.shape[-1]
    eta = np.eye(n)
    eta[0, 0] = -1

    def ip(u, v):
        return jet_einsum("...i,...i->...", jet_einsum("...ij,...j->...i", g, v), u)

    basis = np.eye(n)
    es = []
    for a in range(n):
        u = Jet.const(np.broadcast_to(basis[a], g.shape[:-1]), g.nvars, g.order)
        for b in range(a):
            u = u - jet_einsum("...i,...->...i", es[b], ip(u, es[b]) * eta[b, b])
        norm2 = ip(u, u) * eta[a, a]
        if np.any(norm2.value <= 0):
            raise BackgroundError("metric does not have signature (-,+,...,+) here")
        es.append(jet_einsum("...i,...->...i", u, norm2.sqrt().reciprocal()))
    return stack_jets(es, axis=-2)  # shape (..., a, mu)


@dataclass(frozen=True, eq=False)
class ConnectionJets:
    g: Jet
    ginv: Jet
    christoffel: Jet  # (..., l, m, v) order k-1
    frame: Jet  # (..., a, mu) order k
    sigma: Jet  # (..., mu, N, N) order k-1
    A: Jet
    m: Jet
    C: Jet  # sigma - i A, order k-1
    gamma_up: Jet  # e_a^mu gamma^a, (..., mu, N, N) order k
    rep: object


def christoffel_from(g, ginv):
    """G^l_{m v} = 1/2 g^{l k} (d_m g_kv + d_v g_km - d_k g_mv)."""
    D = grad(g).c  # D[..., k, v, m] = d_m g_kv
    low = 0.5 * (np.einsum("...kvm->...kmv", D) + D - np.einsum("...mvk->...kmv", D))
    return jet_einsum("...lk,...kmv->...lmv", ginv.truncate(g.order - 1),
                      Jet(low, g.nvars, g.order - 1))


def connection_jets(bg, x, order):
    """Connection data as jets at points ``x``: metric (order), connection (order - 1)."""
    if order < 1:
        raise ValueError("connection needs order >= 1")
    rep = build_gamma(bg.n)
    g, A, m = field_jets(bg, x, order)
    if np.any(np.abs(np.linalg.det(g.value)) < 1e-14):
        raise BackgroundError("degenerate metric")
    ginv = jet_matinv(g)
    chris = christoffel_from(g, ginv)
    e = _frame(g)
    de = grad(e)  # (..., b, n, mu): d_mu e_b^n
    e1 = e.truncate(order - 1)
    g1 = g.truncate(order - 1)
    nab = Jet(np.moveaxis(de.c, -1, -3), de.nvars, de.order)  # (..., mu, b, n)
    nab = nab + jet_einsum("...nml,...bl->...mbn", chris, e1)
    low = jet_einsum("...nr,...ar->...an", g1, e1)  # e_a with lowered index
    omega = jet_einsum("...an,...mbn->...mab", low, nab)
    gg = np.einsum("aij,bjk->abik", rep.gamma, rep.gamma)
    sigma = jet_einsum("...mab,abik->...mik", omega, gg) * 0.25
    A1 = A.truncate(order - 1)
    C = sigma - jet_einsum("...m,ij->...mij", A1, np.eye(rep.N) * 1j)
    gamma_up = jet_einsum("...am,aij->...mij", e, rep.gamma.astype(complex))
    return ConnectionJets(g=g, ginv=ginv, christoffel=chris, frame=e, sigma=sigma, A=A, m=m,
                          C=C, gamma_up=gamma_up, rep=rep)


def riemann_from(chris):
    """R^r_{s m v} from a Christoffel jet (..., l, m, v)."""
    D = grad(chris)  # D[..., r, v, s, m] = d_m G^r_{v s}
    G = chris.truncate(chris.order - 1)
    lin = Jet(np.einsum("...rvsm->...rsmv", D.c) - np.einsum("...rmsv->...rsmv", D.c),
              D.nvars, D.order)
    quad = jet_einsum("...rml,...lvs->...rsmv", G, G)
    return lin + quad - Jet(np.einsum("...rsmv->...rsvm", quad.c), quad.nvars, quad.order)


def field_strength_from(A):
    D = grad(A).c  # D[..., v, m] = d_m A_v
    return Jet(np.einsum("...vm->...mv", D) - D, A.nvars, A.order - 1)


@dataclass(frozen=True, eq=False)
class CurvaturePackage:
    """Connection and curvature data at a point, plus the derivatives the coefficients need."""

    x: np.ndarray
    g: np.ndarray
    ginv: np.ndarray
    christoffel: np.ndarray
    riemann: np.ndarray
    ricci: np.ndarray
    R: float
    frame: np.ndarray
    sigma: np.ndarray
    F: np.ndarray
    m: float
    dm: np.ndarray
    hess_m: np.ndarray  # nabla_m d_v m
    grad_R: np.ndarray
    grad_F: np.ndarray  # nabla_s F_{m v} with index order (s, m, v)
    spin_curvature: np.ndarray  # d_m sigma_v - d_v sigma_m + [sigma_m, sigma_v]
    div_spin_curvature: np.ndarray  # nabla^l R_{m l} of the spin curvature, (m, N, N)
    gamma_up: np.ndarray
    A: np.ndarray


def _covariant_grad_lower2(T, chris):
    """nabla_s T_{m v} for a rank-2 covariant tensor jet, index order (s, m, v)."""
    dT = grad(T)  # (..., m, v, s)
    G = chris.truncate(dT.order)
    Tt = T.truncate(dT.order)
    out = Jet(np.einsum("...mvs->...smv", dT.c), dT.nvars, dT.order)
    out = out - jet_einsum("...lsm,...lv->...smv", G, Tt)
    out = out - jet_einsum("...lsv,...ml->...smv", G, Tt)
    return out


def curvature_package(bg, x, order=4):
    """Curvature data at a single point via metric jets of the given order (>= 3)."""
    x = np.asarray(x, dtype=float)
    if order < 3:
        raise ValueError("curvature package needs jets of order >= 3")
    cj = connection_jets(bg, x, order)
    chris = cj.christoffel  # order k-1
    riem = riemann_from(chris)  # order k-2
    ric = Jet(np.einsum("...rsrv->...sv", riem.c), riem.nvars, riem.order)
    ginv = cj.ginv.truncate(ric.order)
    Rj = jet_einsum("...sv,...sv->...", ginv, ric)
    F = field_strength_from(cj.A)  # order k-1
    gradF = _covariant_grad_lower2(F, chris)  # order k-2
    dm = grad(cj.m)  # order k-1
    hess = grad(dm)  # (..., v, m) order k-2
    hess_cov = Jet(np.swapaxes(hess.c, -1, -2), hess.nvars, hess.order) - jet_einsum(
        "...lmv,...l->...mv", chris.truncate(hess.order), dm.truncate(hess.order))
    sig = cj.sigma  # order k-1
    dsig = grad(sig)  # (..., v, i, j, m): d_m sigma_v
    s1 = sig.truncate(dsig.order)
    dsv = np.einsum("...vijm->...mvij", dsig.c)
    comm = jet_einsum("...mij,...vjk->...mvik", s1, s1)
    Rspin = Jet(dsv - np.einsum("...mvij->...vmij", dsv), dsig.nvars, dsig.order) + comm - Jet(
        np.einsum("...mvij->...vmij", comm.c), comm.nvars, comm.order)
    # nabla^l Rspin_{m l} as a bundle-valued 2-form: d, Christoffel, and [C, .] terms
    C1 = cj.sigma.truncate(Rspin.order)
    dR = grad(Rspin)  # (..., m, l, i, j, s) order k-3
    k3 = dR.order
    Rs = Rspin.truncate(k3)
    G3 = chris.truncate(k3)
    C3 = C1.truncate(k3)
    cov = Jet(np.einsum("...mlijs->...smlij", dR.c), dR.nvars, k3)
    cov = cov - jet_einsum("...psm,...plij->...smlij", G3, Rs)
    cov = cov - jet_einsum("...psl,...mpij->...smlij", G3, Rs)
    cov = cov + jet_einsum("...sij,...mljk->...smlik", C3, Rs) - jet_einsum(
        "...mlij,...sjk->...smlik", Rs, C3)
    div = jet_einsum("...sl,...smlij->...mij", cj.ginv.truncate(k3), cov)
    return CurvaturePackage(
        x=x, g=cj.g.value, ginv=cj.ginv.value, christoffel=chris.value, riemann=riem.value,
        ricci=ric.value, R=float(Rj.value), frame=cj.frame.value, sigma=cj.sigma.value,
        F=F.value, m=float(cj.m.value), dm=dm.value, hess_m=hess_cov.value,
        grad_R=grad(Rj).value if Rj.order >= 1 else None, grad_F=gradF.value,
        spin_curvature=Rspin.value, div_spin_curvature=div.value,
        gamma_up=cj.gamma_up.value, A=cj.A.value)


# ---------------------------------------------------------------------------
# Dirac operators

def spin_covariant_derivative(cj, psi, cospinor=False):
    """nabla_m of a spinor (..., N) or cospinor jet, derivative index before the spinor index."""
    d = grad(psi)  # (..., N, m)
    d = Jet(np.moveaxis(d.c, -1, -2), d.nvars, d.order)
    C = cj.C.truncate(d.order)
    p = psi.truncate(d.order)
    if cospinor:
        return d - jet_einsum("...j,...mji->...mi", p, C)
    return d + jet_einsum("...mij,...j->...mi", C, p)


def dirac_apply(bg, psi, x, variant="D", cj=None):
    """Apply D, Dt (D tilde), Dstar or Dtstar at ``x`` to a spinor/cospinor jet based at ``x``.

    Returns a jet of order ``psi.order - 1``.
    """
    if psi.order < 1:
        raise ValueError("the field jet must have order >= 1")
    if cj is None or cj.g.order < psi.order:
        cj = connection_jets(bg, x, psi.order)
    cospinor = variant in ("Dstar", "Dtstar")
    nab = spin_covariant_derivative(cj, psi, cospinor)
    gam = cj.gamma_up.truncate(nab.order)
    m = cj.m.truncate(nab.order)
    p = psi.truncate(nab.order)
    if variant == "D":
        return -jet_einsum("...mij,...mj->...i", gam, nab) + jet_einsum("...i,...->...i", p, m)
    if variant == "Dt":
        return -jet_einsum("...mij,...mj->...i", gam, nab) - jet_einsum("...i,...->...i", p, m)
    if variant == "Dstar":
        return jet_einsum("...mj,...mji->...i", nab, gam) + jet_einsum("...i,...->...i", p, m)
    if variant == "Dtstar":
        return jet_einsum("...mj,...mji->...i", nab, gam) - jet_einsum("...i,...->...i", p, m)
    raise ValueError(f"unknown operator variant {variant!r}")


def P_apply(bg, psi, x, cj=None):
    """The second-order operator P in its displayed normally hyperbolic form."""
    if psi.order < 2:
        raise ValueError("the field jet must have order >= 2")
    k = psi.order
    if cj is None or cj.g.order < k:
        cj = connection_jets(bg, x, k)
    N1 = spin_covariant_derivative(cj, psi)  # order k-1
    dN = grad(N1)  # (..., v, i, m)
    k2 = dN.order
    C = cj.C.truncate(k2)
    N2 = N1.truncate(k2)
    G = cj.christoffel.truncate(k2)
    nn = Jet(np.einsum("...vim->...mvi", dN.c), dN.nvars, k2)
    nn = nn + jet_einsum("...mij,...vj->...mvi", C, N2)
    nn = nn - jet_einsum("...lmv,...li->...mvi", G, N2)
    box = jet_einsum("...mv,...mvi->...i", cj.ginv.truncate(k2), nn)
    riem = riemann_from(cj.christoffel)
    R = jet_einsum("...sv,...sv->...", cj.ginv.truncate(riem.order),
                   Jet(np.einsum("...rsrv->...sv", riem.c), riem.nvars, riem.order))
    F = field_strength_from(cj.A).truncate(k2)
    gam = cj.gamma_up.truncate(k2)
    comm = jet_einsum("...mij,...vjk->...mvik", gam, gam)
    comm = comm - Jet(np.einsum("...mvik->...vmik", comm.c), comm.nvars, comm.order)
    dm = grad(cj.m).truncate(k2)
    m = cj.m.truncate(k2)
    p = psi.truncate(k2)
    pot = jet_einsum("...mv,...mvij->...ij", F, comm) * 0.25j
    pot = pot - jet_einsum("...m,...mij->...ij", dm, gam)
    scal = R * 0.25 + m * m
    return -box + jet_einsum("...i,...->...i", p, scal) + jet_einsum("...ij,...j->...i", pot, p)


# ---------------------------------------------------------------------------
# geodesics

class ShootingError(RuntimeError):
    pass


def christoffel_values(bg, pts):
    """Christoffel symbols (..., l, m, v) and their gradients (..., l, m, v, s) at points."""
    g, _, _ = field_jets(bg, pts, 2)
    G = christoffel_from(g, jet_matinv(g))
    return G.value, grad(G).value


def connection_values(bg, pts):
    """C_m = sigma_m - i A_m (..., m, N, N) at points."""
    return connection_jets(bg, pts, 1).C.value


def _geo_rhs(bg, x, v, J, K, flat):
    if flat:
        Z = np.zeros_like(J)
        return v, np.zeros_like(v), K, Z, None
    G, dG = christoffel_values(bg, x)
    acc = -np.einsum("...lmv,...m,...v->...l", G, v, v)
    dK = (-np.einsum("...lmvr,...m,...v,...ra->...la", dG, v, v, J)
          - 2 * np.einsum("...lmv,...m,...va->...la", G, v, K))
    return v, acc, K, dK, G


def integrate_geodesic(bg, xp, v, steps=32):
    """RK4 for the geodesic from ``xp`` with velocity ``v`` and its Jacobi fields.

    Returns ``(x, v, J, K)`` at s = 1 with ``J = d gamma(1)/dv`` and ``K = d gamma'(1)/dv``.
    """
    xp, v = np.broadcast_arrays(np.asarray(xp, float), np.asarray(v, float))
    n = xp.shape[-1]
    flat = bg.is_flat_metric
    J = np.zeros(xp.shape + (n,))
    K = np.broadcast_to(np.eye(n), J.shape).copy()
    h = 1.0 / steps

    def f(state):
        return _geo_rhs(bg, *state, flat)[:4]

    state = (xp.copy(), v.copy(), J, K)
    for _ in range(steps):
        k1 = f(state)
        k2 = f(tuple(s + 0.5 * h * k for s, k in zip(state, k1)))
        k3 = f(tuple(s + 0.5 * h * k for s, k in zip(state, k2)))
        k4 = f(tuple(s + h * k for s, k in zip(state, k3)))
        state = tuple(s + h / 6 * (a + 2 * b + 2 * c + d) for s, a, b, c, d in zip(state, k1, k2, k3, k4))
    return state


def shoot(bg, xp, x, steps=32, tol=1e-13, maxiter=30):
    """Initial velocity at ``xp`` of the affinely parametrized geodesic reaching ``x`` at s = 1."""
    xp = np.asarray(xp, float)
    x = np.asarray(x, float)
    xp, x = np.broadcast_arrays(xp, x)
    v = x - xp
    if bg.is_flat_metric:
        return v.copy()
    scale = max(1.0, float(np.max(np.abs(x - xp))))
    for _ in range(maxiter):
        end, _, J, _ = integrate_geodesic(bg, xp, v, steps)
        res = end - x
        err = float(np.max(np.abs(res))) if res.size else 0.0
        if not np.all(np.isfinite(res)):
            raise ShootingError("geodesic integration diverged")
        if err <= tol * scale:
            return v
        v = v - np.linalg.solve(J, res[..., None])[..., 0]
    end, _, _, _ = integrate_geodesic(bg, xp, v, steps)
    err = float(np.max(np.abs(end - x)))
    if err > 1e3 * tol * scale:
        raise ShootingError(f"shooting did not converge (residual {err:.3e})")
    return v


@dataclass(frozen=True, eq=False)
class GeodesicLink:
    x: np.ndarray
    xp: np.ndarray
    velocity: np.ndarray  # initial velocity at x' of the geodesic x' -> x
    tangent: np.ndarray  # exp_x^{-1}(x'), a vector at x
    world_function: np.ndarray
    theta0: np.ndarray
    box_world_function: np.ndarray
    U_vec: np.ndarray
    U_spin: np.ndarray
    midpoint: np.ndarray
    residual: float


def _transport_rhs_parts(bg, x, v, J, K, s, G=None):
    """Velocity-contracted connection C.v and the coefficient f/(2s) of the transport equation."""
    n = x.shape[-1]
    C = connection_values(bg, x)
    Cv = np.einsum("...mij,...m->...ij", C, v)
    if s == 0:
        return Cv, np.zeros(x.shape[:-1])
    if G is None:
        G = np.zeros(x.shape + (n, n)) if bg.is_flat_metric else christoffel_values(bg, x)[0]
    tr = np.trace(np.linalg.solve(J, K), axis1=-2, axis2=-1) if not bg.is_flat_metric else n / s
    trace_G = np.einsum("...mml,...l->...", G, v)
    # -1/2 box Gamma - n = s tr(K J^-1) + s G^m_ml v^l - n
    return Cv, 0.5 * (tr - n / s + trace_G)


def transport(bg, xp, v, steps=32, source=None, want_vec=False):
    """Integrate the geodesic together with the Hadamard transport equations.

    Returns a dict with the endpoint state and ``V0`` (the solution of the
    homogeneous transport equation), ``U`` (the spinor parallel transporter) and,
    if ``source`` is given, ``W = s V1`` where ``source(j)`` returns ``P V0`` at the
    half-step node ``j``; ``V1 = W(1)``.
    """
    xp = np.asarray(xp, float)
    v = np.asarray(v, float)
    xp, v = np.broadcast_arrays(xp, v)
    n = xp.shape[-1]
    N = build_gamma(n).N
    flat = bg.is_flat_metric
    batch = xp.shape[:-1]
    eye = np.broadcast_to(np.eye(N, dtype=complex), batch + (N, N))
    h = 1.0 / steps

    def f(state, s, node):
        x, vv, J, K, V0, U, W, Uv = state
        dx, dv, dJ, dK, G = _geo_rhs(bg, x, vv, J, K, flat)
        Cv, q = _transport_rhs_parts(bg, x, vv, J, K, s, G)
        dV0 = -Cv @ V0 - q[..., None, None] * V0
        dU = -Cv @ U
        dW = None
        if W is not None:
            dW = -Cv @ W - q[..., None, None] * W - source(node)
        dUv = None
        if Uv is not None:
            Gv = np.zeros(batch + (n, n)) if G is None else np.einsum("...lmr,...m->...lr", G, vv)
            dUv = -Gv @ Uv
        return dx, dv, dJ, dK, dV0, dU, dW, dUv

    def add(state, k, c):
        return tuple(None if a is None else a + c * b for a, b in zip(state, k))

    state = (xp.copy(), v.copy(), np.zeros(batch + (n, n)),
             np.broadcast_to(np.eye(n), batch + (n, n)).copy(), eye.copy(), eye.copy(),
             np.zeros(batch + (N, N), complex) if source is not None else None,
             np.broadcast_to(np.eye(n), batch + (n, n)).copy() if want_vec else None)
    mids = []
    for i in range(steps):
        s = i * h
        k1 = f(state, s, 2 * i)
        k2 = f(add(state, k1, 0.5 * h), s + 0.5 * h, 2 * i + 1)
        k3 = f(add(state, k2, 0.5 * h), s + 0.5 * h, 2 * i + 1)
        k4 = f(add(state, k3, h), s + h, 2 * i + 2)
        state = tuple(None if a is None else a + h / 6 * (b + 2 * c + 2 * d + e)
                      for a, b, c, d, e in zip(state, k1, k2, k3, k4))
        if i == steps // 2 - 1 and steps % 2 == 0:
            mids.append(state[0].copy())
    x, vv, J, K, V0, U, W, Uv = state
    return dict(x=x, v=vv, J=J, K=K, V0=V0, U=U, W=W, U_vec=Uv,
                midpoint=mids[0] if mids else None)


def node_points(bg, xp, v, steps=32):
    """Geodesic points at the half-step nodes s = j / (2 steps), j = 0..2 steps."""
    xp = np.asarray(xp, float)
    v = np.asarray(v, float)
    if bg.is_flat_metric:
        s = np.arange(2 * steps + 1) / (2 * steps)
        return xp[..., None, :] + s[:, None] * v[..., None, :]
    # integrate with half the step so that half-step nodes are exact RK4 nodes
    out = [np.broadcast_to(xp, np.broadcast_shapes(xp.shape, v.shape)).copy()]
    state = (out[0].copy(), np.broadcast_to(v, out[0].shape).copy())
    h = 1.0 / (2 * steps)

    def f(st):
        G, _ = christoffel_values(bg, st[0])
        return st[1], -np.einsum("...lmv,...m,...v->...l", G, st[1], st[1])

    for _ in range(2 * steps):
        k1 = f(state)
        k2 = f(tuple(a + 0.5 * h * b for a, b in zip(state, k1)))
        k3 = f(tuple(a + 0.5 * h * b for a, b in zip(state, k2)))
        k4 = f(tuple(a + h * b for a, b in zip(state, k3)))
        state = tuple(a + h / 6 * (b + 2 * c + 2 * d + e) for a, b, c, d, e in zip(state, k1, k2, k3, k4))
        out.append(state[0].copy())
    return np.stack(out, axis=-2)


def geodesic_connect(bg, x, xp, steps=64):
    """All bitensor data linking ``x`` and ``x'`` (geodesic from x' to x)."""
    x = np.asarray(x, float)
    xp = np.asarray(xp, float)
    v = shoot(bg, xp, x, steps)
    out = transport(bg, xp, v, steps, want_vec=True)
    n = x.shape[-1]
    res = float(np.max(np.abs(out["x"] - x)))
    g_p = field_jets(bg, xp, 0)[0].value
    world = -np.einsum("...mv,...m,...v->...", g_p, v, v)
    if bg.is_flat_metric:
        box = np.full(x.shape[:-1], -2.0 * n)
        G = np.zeros(x.shape + (n, n))
    else:
        G = christoffel_values(bg, x)[0]
        box = (-2 * np.trace(np.linalg.solve(out["J"], out["K"]), axis1=-2, axis2=-1)
               - 2 * np.einsum("...mml,...l->...", G, out["v"]))
    mid = out["midpoint"]
    return GeodesicLink(x=x, xp=xp, velocity=v, tangent=-out["v"], world_function=world,
                        theta0=x[..., 0] - xp[..., 0], box_world_function=box,
                        U_vec=out["U_vec"], U_spin=out["U"], midpoint=mid, residual=res)
