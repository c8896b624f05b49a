"""Expression parsing and truncated multivariate Taylor (jet) arithmetic.

Background fields (metric, gauge potential, Yukawa mass) are given as small
arithmetic expressions over the chart coordinates.  Every derivative used by
the rest of the package is obtained by evaluating those expressions on
:class:`Jet` objects, i.e. exact truncated Taylor polynomials.

A jet stores the Taylor coefficients ``c_alpha = d^alpha f / alpha!`` for all
multi-indices of total degree ``<= order``.  The coefficient array has shape
``(nterms, *shape)``; the trailing ``shape`` broadcasts elementwise, which is
how batches of base points and tensor-valued jets are carried.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations_with_replacement

import numpy as np
import scipy.sparse as sp

__all__ = [
    "ExprSyntaxError", "UnknownIdentifierError", "JetDomainError",
    "Num", "Var", "Neg", "BinOp", "Call", "Expression",
    "parse_expression", "to_source", "free_variables",
    "Jet", "eval_jet", "evaluate", "variables", "constant",
    "jet_einsum", "jet_matinv", "compose", "jet_sum", "substitute_linear",
]

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "tanh")


class ExprSyntaxError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownIdentifierError(ValueError):
    pass


class JetDomainError(ArithmeticError):
    def __init__(self, message, subexpression=None):
        if subexpression is not None:
            message = f"{message} in '{subexpression}'"
        super().__init__(message)
        self.subexpression = subexpression


# ---------------------------------------------------------------------------
# AST

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Expression"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Expression"


Expression = Num | Var | Neg | BinOp | Call

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^(),]))"
)


def _tokenize(src):
    tokens = []
    pos = 0
    n = len(src)
    while pos < n:
        if src[pos:].strip() == "":
            break
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            bad = pos + len(src[pos:]) - len(src[pos:].lstrip())
            raise ExprSyntaxError(f"unexpected character {src[bad]!r}", bad)
        start = m.start(m.lastgroup)
        kind = m.lastgroup
        text = m.group(kind)
        if text == "**":
            text = "^"
        tokens.append((kind, text, start))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src, coords):
        self.tokens = _tokenize(src)
        self.i = 0
        self.coords = set(coords)

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text):
        kind, t, pos = self.take()
        if t != text or kind == "end":
            what = "end of input" if kind == "end" else repr(t)
            raise ExprSyntaxError(f"expected {text!r}, got {what}", pos)

    def parse(self):
        node = self.sum()
        kind, t, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {t!r}", pos)
        return node

    def sum(self):
        node = self.product()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.product())
        return node

    def product(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        kind, t, _ = self.peek()
        if kind == "op" and t == "-":
            self.take()
            return Neg(self.unary())
        if kind == "op" and t == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        kind, t, pos = self.take()
        if kind == "num":
            return Num(float(t))
        if kind == "name":
            if t in FUNCTIONS:
                if self.peek()[1] != "(":
                    raise ExprSyntaxError(f"function {t!r} needs one argument", self.peek()[2])
                self.take()
                arg = self.sum()
                if self.peek()[1] == ",":
                    raise ExprSyntaxError(f"function {t!r} takes exactly one argument", self.peek()[2])
                self.expect(")")
                return Call(t, arg)
            if t == "pi":
                return Num(math.pi)
            if t not in self.coords:
                raise UnknownIdentifierError(f"unknown identifier {t!r} at offset {pos}")
            return Var(t)
        if kind == "op" and t == "(":
            node = self.sum()
            self.expect(")")
            return node
        what = "end of input" if kind == "end" else repr(t)
        raise ExprSyntaxError(f"unexpected {what}", pos)


def parse_expression(src, coords):
    """Parse ``src`` into an AST over the coordinate names ``coords``."""
    coords = list(coords)
    if not coords or len(set(coords)) != len(coords):
        raise ValueError("coordinate names must be nonempty and distinct")
    return _Parser(src, coords).parse()


def to_source(e):
    """Print an AST back to parseable text (fully parenthesized)."""
    if isinstance(e, Num):
        return repr(float(e.value)) if e.value >= 0 else f"(-{repr(-float(e.value))})"
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{to_source(e.arg)})"
    if isinstance(e, BinOp):
        return f"({to_source(e.left)} {e.op} {to_source(e.right)})"
    if isinstance(e, Call):
        return f"{e.fn}({to_source(e.arg)})"
    raise TypeError(f"not an expression node: {e!r}")


def free_variables(e):
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Num):
        return set()
    if isinstance(e, (Neg, Call)):
        return free_variables(e.arg)
    return free_variables(e.left) | free_variables(e.right)


# ---------------------------------------------------------------------------
# Jet tables

@lru_cache(maxsize=None)
def _multi_indices(nvars, order):
    out = []
    for d in range(order + 1):
        for combo in combinations_with_replacement(range(nvars), d):
            alpha = [0] * nvars
            for v in combo:
                alpha[v] += 1
            out.append(tuple(alpha))
    # combinations_with_replacement yields lexicographic order inside a degree
    return tuple(out)


@lru_cache(maxsize=None)
def _tables(nvars, order):
    mis = _multi_indices(nvars, order)
    index = {a: k for k, a in enumerate(mis)}
    I, J, K = [], [], []
    for i, a in enumerate(mis):
        da = sum(a)
        for j, b in enumerate(mis):
            if da + sum(b) <= order:
                I.append(i)
                J.append(j)
                K.append(index[tuple(x + y for x, y in zip(a, b))])
    I = np.array(I, dtype=np.intp)
    J = np.array(J, dtype=np.intp)
    K = np.array(K, dtype=np.intp)
    reduce = sp.csr_matrix((np.ones(len(K)), (K, np.arange(len(K)))), shape=(len(mis), len(K)))
    fact = np.array([math.prod(math.factorial(x) for x in a) for a in mis], dtype=float)
    deg = np.array([sum(a) for a in mis])
    return dict(mis=mis, index=index, I=I, J=J, K=K, reduce=reduce, fact=fact, deg=deg)


@lru_cache(maxsize=None)
def _deriv_map(nvars, order, var):
    t_hi = _tables(nvars, order)
    t_lo = _tables(nvars, order - 1)
    src, scale = [], []
    for b in t_lo["mis"]:
        a = list(b)
        a[var] += 1
        src.append(t_hi["index"][tuple(a)])
        scale.append(a[var])
    return np.array(src, dtype=np.intp), np.array(scale, dtype=float)


@lru_cache(maxsize=None)
def _nterms(nvars, order):
    return math.comb(nvars + order, order)


class Jet:
    """Truncated multivariate Taylor polynomial with broadcastable trailing shape."""

    __array_priority__ = 100

    def __init__(self, coeffs, nvars, order):
        coeffs = np.asarray(coeffs)
        if coeffs.shape[0] != _nterms(nvars, order):
            raise ValueError("coefficient array does not match (nvars, order)")
        self.c = coeffs
        self.nvars = nvars
        self.order = order

    # -- construction ------------------------------------------------------
    @classmethod
    def const(cls, value, nvars, order):
        value = np.asarray(value)
        c = np.zeros((_nterms(nvars, order),) + value.shape, dtype=np.result_type(value, float))
        c[0] = value
        return cls(c, nvars, order)

    # -- basic properties --------------------------------------------------
    @property
    def shape(self):
        return self.c.shape[1:]

    @property
    def value(self):
        return self.c[0]

    @property
    def multi_indices(self):
        return _multi_indices(self.nvars, self.order)

    def coefficient(self, alpha):
        return self.c[_tables(self.nvars, self.order)["index"][tuple(alpha)]]

    def derivative(self, alpha):
        """Partial derivative d^alpha f at the base point."""
        alpha = tuple(alpha)
        return self.coefficient(alpha) * math.prod(math.factorial(a) for a in alpha)

    def gradient(self):
        return np.stack([self.derivative(tuple(int(i == k) for i in range(self.nvars)))
                         for k in range(self.nvars)], axis=-1)

    def partial(self, var):
        if self.order == 0:
            raise ValueError("cannot differentiate an order-0 jet")
        src, scale = _deriv_map(self.nvars, self.order, var)
        c = self.c[src] * scale.reshape((-1,) + (1,) * (self.c.ndim - 1))
        return Jet(c, self.nvars, self.order - 1)

    def truncate(self, order):
        if order > self.order:
            raise ValueError("cannot raise jet order")
        if order == self.order:
            return self
        return Jet(self.c[:_nterms(self.nvars, order)], self.nvars, order)

    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        return Jet(self.c[(slice(None),) + idx], self.nvars, self.order)

    def reshape(self, *shape):
        return Jet(self.c.reshape((self.c.shape[0],) + tuple(shape)), self.nvars, self.order)

    def conj(self):
        return Jet(np.conj(self.c), self.nvars, self.order)

    @property
    def real(self):
        return Jet(self.c.real, self.nvars, self.order)

    # -- arithmetic --------------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, Jet):
            if other.nvars != self.nvars:
                raise ValueError("jets over different variable counts")
            k = min(self.order, other.order)
            return self.truncate(k), other.truncate(k)
        return self, Jet.const(other, self.nvars, self.order)

    def __add__(self, other):
        a, b = self._coerce(other)
        return Jet(_bcast_add(a.c, b.c), a.nvars, a.order)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.c, self.nvars, self.order)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            other = np.asarray(other)
            return Jet(_bcast_mul(self.c, other[None]), self.nvars, self.order)
        a, b = self._coerce(other)
        return _product(a, b, np.multiply)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return self * (1.0 / np.asarray(other))
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, p):
        if isinstance(p, Jet):
            return (self.log() * p).exp()
        if float(p).is_integer() and p >= 0:
            p = int(p)
            out = Jet.const(np.ones(self.shape), self.nvars, self.order)
            base = self
            while p:
                if p & 1:
                    out = out * base
                base = base * base
                p >>= 1
            return out
        return self._compose_fn(lambda x, k: _power_derivs(x, p, k))

    def __matmul__(self, other):
        return jet_einsum("...ij,...jk->...ik", self, other)

    # -- composition with univariate functions ----------------------------
    def _compose_fn(self, derivs):
        x0 = self.c[0]
        d = derivs(x0, self.order)
        return compose(d, self)

    def reciprocal(self):
        x0 = self.c[0]
        if np.any(x0 == 0):
            raise JetDomainError("division by zero")
        return self._compose_fn(lambda x, k: [((-1) ** j) * math.factorial(j) / x ** (j + 1)
                                              for j in range(k + 1)])

    def exp(self):
        return self._compose_fn(lambda x, k: [np.exp(x)] * (k + 1))

    def log(self):
        x0 = self.c[0]
        if not np.iscomplexobj(x0) and np.any(x0 <= 0):
            raise JetDomainError("log of nonpositive value")
        return self._compose_fn(
            lambda x, k: [np.log(x)] + [((-1) ** (j - 1)) * math.factorial(j - 1) / x ** j
                                        for j in range(1, k + 1)])

    def sqrt(self):
        x0 = self.c[0]
        if not np.iscomplexobj(x0) and np.any(x0 < 0):
            raise JetDomainError("sqrt of negative value")
        if np.any(x0 == 0) and self.order > 0:
            raise JetDomainError("sqrt is not differentiable at 0")
        return self._compose_fn(lambda x, k: _power_derivs(x, 0.5, k))

    def sin(self):
        return self._compose_fn(lambda x, k: [(np.sin, np.cos, lambda y: -np.sin(y),
                                               lambda y: -np.cos(y))[j % 4](x) for j in range(k + 1)])

    def cos(self):
        return self._compose_fn(lambda x, k: [(np.cos, lambda y: -np.sin(y), lambda y: -np.cos(y),
                                               np.sin)[j % 4](x) for j in range(k + 1)])

    def tanh(self):
        e2 = (self * 2.0).exp()
        return (e2 - 1.0) / (e2 + 1.0)

    def __repr__(self):
        return f"Jet(nvars={self.nvars}, order={self.order}, shape={self.shape})"


def _align(a, b):
    # broadcast trailing (value) axes against each other, keeping axis 0 as the term axis
    d = a.ndim - b.ndim
    if d > 0:
        b = b.reshape(b.shape[:1] + (1,) * d + b.shape[1:])
    elif d < 0:
        a = a.reshape(a.shape[:1] + (1,) * (-d) + a.shape[1:])
    return a, b


def _bcast_mul(a, b):
    a, b = _align(a, b)
    return a * b


def _bcast_add(a, b):
    a, b = _align(a, b)
    return a + b


def _power_derivs(x, p, k):
    out = []
    coef = 1.0
    for j in range(k + 1):
        out.append(coef * x ** (p - j))
        coef *= (p - j)
    return out


def _product(a, b, op):
    t = _tables(a.nvars, a.order)
    P = op(*_align(a.c[t["I"]], b.c[t["J"]]))
    flat = P.reshape(P.shape[0], -1)
    red = t["reduce"] @ flat if np.isrealobj(flat) else (
        t["reduce"] @ flat.real + 1j * (t["reduce"] @ flat.imag))
    return Jet(np.asarray(red).reshape((t["reduce"].shape[0],) + P.shape[1:]), a.nvars, a.order)


def compose(derivs, u):
    """Compose a univariate Taylor expansion with the jet ``u``.

    ``derivs[j]`` is the j-th derivative of the outer function at ``u.value``.
    """
    du = Jet(u.c.copy(), u.nvars, u.order)
    du.c[0] = 0
    out = Jet.const(np.asarray(derivs[0]) * np.ones(u.shape), u.nvars, u.order)
    powk = None
    for j in range(1, u.order + 1):
        powk = du if powk is None else powk * du
        out = out + powk * (np.asarray(derivs[j]) / math.factorial(j))
    return out


def jet_einsum(subscripts, a, b):
    """Einsum over the trailing (value) axes of two jets, truncated product."""
    if not isinstance(b, Jet):
        return Jet(np.einsum(_lift(subscripts, 1, 0), a.c, np.asarray(b)), a.nvars, a.order)
    if not isinstance(a, Jet):
        return Jet(np.einsum(_lift(subscripts, 0, 1), np.asarray(a), b.c), b.nvars, b.order)
    a, b = a._coerce(b)
    t = _tables(a.nvars, a.order)
    P = np.einsum(_lift(subscripts, 1, 1), a.c[t["I"]], b.c[t["J"]])
    flat = P.reshape(P.shape[0], -1)
    if np.isrealobj(flat):
        red = t["reduce"] @ flat
    else:
        red = t["reduce"] @ flat.real + 1j * (t["reduce"] @ flat.imag)
    return Jet(np.asarray(red).reshape((t["reduce"].shape[0],) + P.shape[1:]), a.nvars, a.order)


def _lift(subscripts, la, lb):
    ins, out = subscripts.split("->")
    sa, sb = ins.split(",")
    sa = ("Z" + sa) if la else sa
    sb = ("Z" + sb) if lb else sb
    return f"{sa},{sb}->Z{out}"


def jet_sum(j, weights, axis=0):
    """Weighted sum of a jet over one of its value axes."""
    c = np.moveaxis(j.c, axis + 1, -1)
    return Jet(c @ np.asarray(weights), j.nvars, j.order)


def substitute_linear(j, M):
    """Re-express a jet in new variables ``u`` with old displacements ``w = M @ u``."""
    M = np.asarray(M, dtype=float)
    p, q = M.shape
    if p != j.nvars:
        raise ValueError("substitution matrix does not match the jet variables")
    t = _tables(p, j.order)
    W = []
    for i in range(p):
        c = np.zeros((_nterms(q, j.order),))
        if j.order >= 1:
            c[1:1 + q] = M[i]
        W.append(Jet(c, q, j.order))
    mono = {tuple([0] * p): Jet.const(1.0, q, j.order)}
    out = None
    for k, alpha in enumerate(t["mis"]):
        if alpha not in mono:
            i = next(i for i, a in enumerate(alpha) if a > 0)
            prev = list(alpha)
            prev[i] -= 1
            mono[alpha] = mono[tuple(prev)] * W[i]
        term = Jet(np.multiply.outer(mono[alpha].c, j.c[k]), q, j.order)
        out = term if out is None else out + term
    return out


def jet_matinv(a):
    """Inverse of a matrix-valued jet via the Neumann series around the base value."""
    a0inv = np.linalg.inv(a.c[0])
    d = Jet(a.c.copy(), a.nvars, a.order)
    d.c[0] = 0
    x = -jet_einsum("...ij,...jk->...ik", a0inv, d)
    term = Jet.const(a0inv, a.nvars, a.order)
    out = term
    for _ in range(a.order):
        term = jet_einsum("...ij,...jk->...ik", x, term)
        out = out + term
    return out


# ---------------------------------------------------------------------------
# Evaluation

def variables(point, order):
    """Coordinate jets ``x_i = point_i + dx_i`` at a (possibly batched) point.

    ``point`` has shape ``(..., n)``; each returned jet has shape ``point.shape[:-1]``.
    """
    point = np.asarray(point)
    n = point.shape[-1]
    out = []
    for i in range(n):
        j = Jet.const(point[..., i], n, order)
        if order >= 1:
            j.c[1 + i] = 1.0
        out.append(j)
    return out


def constant(value, nvars, order):
    return Jet.const(value, nvars, order)


def evaluate(e, env):
    """Evaluate an AST with ``env`` mapping coordinate names to jets (or numbers)."""
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return env[e.name]
    if isinstance(e, Neg):
        return -evaluate(e.arg, env)
    if isinstance(e, BinOp):
        a = evaluate(e.left, env)
        b = evaluate(e.right, env)
        try:
            if e.op == "+":
                return a + b
            if e.op == "-":
                return a - b
            if e.op == "*":
                return a * b
            if e.op == "/":
                if not isinstance(b, Jet):
                    if np.any(np.asarray(b) == 0):
                        raise JetDomainError("division by zero")
                    return a / b
                return a * b.reciprocal() if isinstance(a, Jet) else b.reciprocal() * a
            if e.op == "^":
                if isinstance(b, Jet):
                    if isinstance(a, Jet):
                        return a ** b
                    if np.any(np.asarray(a) <= 0):
                        raise JetDomainError("non-positive base with variable exponent")
                    return (b * math.log(a)).exp()
                if isinstance(a, Jet):
                    if not float(b).is_integer() and np.isrealobj(a.value) and np.any(a.value <= 0):
                        raise JetDomainError("fractional power of nonpositive value")
                    return a ** b
                if np.ndim(a) or np.ndim(b):
                    return np.power(a, b)
                return float(a) ** float(b)
        except JetDomainError as err:
            if err.subexpression is None:
                raise JetDomainError(str(err), to_source(e)) from None
            raise
        except ZeroDivisionError:
            raise JetDomainError("division by zero", to_source(e)) from None
    if isinstance(e, Call):
        a = evaluate(e.arg, env)
        if not isinstance(a, Jet):
            if e.fn == "log" and np.any(np.asarray(a) <= 0):
                raise JetDomainError("log of nonpositive value", to_source(e))
            if e.fn == "sqrt" and np.any(np.asarray(a) < 0):
                raise JetDomainError("sqrt of negative value", to_source(e))
            r = getattr(np, e.fn)(a)
            return float(r) if np.ndim(r) == 0 else r
        try:
            return getattr(a, e.fn)()
        except JetDomainError as err:
            raise JetDomainError(str(err).split(" in '")[0], to_source(e)) from None
    raise TypeError(f"not an expression node: {e!r}")


def eval_jet(e, coords, point, order):
    """Truncated Taylor expansion of ``e`` at ``point`` to total degree ``order``."""
    if order < 0:
        raise ValueError("order must be >= 0")
    point = np.asarray(point, dtype=float)
    if point.shape[-1] != len(coords):
        raise ValueError("point needs one value per coordinate")
    env = dict(zip(coords, variables(point, order)))
    out = evaluate(e, env)
    if not isinstance(out, Jet):
        out = Jet.const(np.full(point.shape[:-1], float(out)), len(coords), order)
    return out
