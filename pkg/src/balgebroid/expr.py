"""Exact symbolic expression trees with numeric evaluation.

Expressions are immutable trees over rational constants, named variables,
arithmetic (+, -, *, /), integer powers and a fixed set of analytic
functions (sin, cos, exp, log, sqrt).  Simplification is deliberately
limited: constant folding and flattening of sums/products happen in the
smart constructors, and a slightly stronger `canonical` pass (term and
factor collection) backs the structural-identity checks.  Everything else
is decided numerically by sampling.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Union

import numpy as np

from .errors import DomainError, EmptyDomain, ParseError

__all__ = [
    "Expr",
    "Const",
    "Pi",
    "Var",
    "Add",
    "Mul",
    "Pow",
    "Func",
    "SStep",
    "const",
    "var",
    "add",
    "mul",
    "pow_",
    "div",
    "neg",
    "sin",
    "cos",
    "exp",
    "log",
    "sqrt",
    "smoothstep",
    "differentiate",
    "evaluate",
    "substitute",
    "free_vars",
    "canonical",
    "structurally_zero",
    "structurally_equal",
    "parse",
    "to_text",
    "SampleDomain",
    "EquivReport",
    "numeric_equiv",
]

Number = Union[int, float, Fraction]

_FUNCS = ("sin", "cos", "exp", "log", "sqrt")


class Expr:
    """Base class.  Subclasses carry a structural key used for hashing."""

    __slots__ = ("_key", "_vars")

    def _init(self, key: tuple, vars_: frozenset):
        object.__setattr__(self, "_key", key)
        object.__setattr__(self, "_vars", vars_)

    def __eq__(self, other):
        return isinstance(other, Expr) and self._key == other._key

    def __hash__(self):
        return hash(self._key)

    def __repr__(self):
        return to_text(self)

    # arithmetic sugar -------------------------------------------------
    def __add__(self, other):
        other = _maybe(other)
        return NotImplemented if other is None else add(self, other)

    def __radd__(self, other):
        other = _maybe(other)
        return NotImplemented if other is None else add(other, self)

    def __sub__(self, other):
        other = _maybe(other)
        return NotImplemented if other is None else add(self, neg(other))

    def __rsub__(self, other):
        other = _maybe(other)
        return NotImplemented if other is None else add(other, neg(self))

    def __mul__(self, other):
        other = _maybe(other)
        return NotImplemented if other is None else mul(self, other)

    def __rmul__(self, other):
        other = _maybe(other)
        return NotImplemented if other is None else mul(other, self)

    def __truediv__(self, other):
        other = _maybe(other)
        return NotImplemented if other is None else div(self, other)

    def __rtruediv__(self, other):
        other = _maybe(other)
        return NotImplemented if other is None else div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, n):
        return pow_(self, n)


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value: Number):
        if not isinstance(value, Fraction):
            value = Fraction(value)
        object.__setattr__(self, "value", value)
        self._init(("const", value), frozenset())


class Pi(Expr):
    """The circle constant, kept symbolic so rational arithmetic stays exact."""

    __slots__ = ()

    def __init__(self):
        self._init(("pi",), frozenset())


class Var(Expr):
    __slots__ = ("name",)

    def __init__(self, name: str):
        object.__setattr__(self, "name", name)
        self._init(("var", name), frozenset((name,)))


class Add(Expr):
    __slots__ = ("terms",)

    def __init__(self, terms: tuple):
        object.__setattr__(self, "terms", terms)
        vs = frozenset().union(*(t._vars for t in terms)) if terms else frozenset()
        self._init(("add",) + tuple(t._key for t in terms), vs)


class Mul(Expr):
    __slots__ = ("factors",)

    def __init__(self, factors: tuple):
        object.__setattr__(self, "factors", factors)
        vs = frozenset().union(*(f._vars for f in factors)) if factors else frozenset()
        self._init(("mul",) + tuple(f._key for f in factors), vs)


class Pow(Expr):
    __slots__ = ("base", "exponent")

    def __init__(self, base: Expr, exponent: int):
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "exponent", exponent)
        self._init(("pow", base._key, exponent), base._vars)


class Func(Expr):
    __slots__ = ("name", "arg")

    def __init__(self, name: str, arg: Expr):
        if name not in _FUNCS:
            raise ParseError(f"unknown function {name!r}")
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "arg", arg)
        self._init(("func", name, arg._key), arg._vars)


class SStep(Expr):
    """Clamped quintic smoothstep family.

    ``SStep(0, u)`` is 0 for u <= 0, 1 for u >= 1 and 6u^5 - 15u^4 + 10u^3
    in between (a C^2 ramp).  ``SStep(d, u)`` is its d-th derivative in u;
    orders above 5 vanish identically inside the ramp.
    """

    __slots__ = ("order", "arg")

    _POLYS = {
        0: (0, 0, 0, 10, -15, 6),
        1: (0, 0, 30, -60, 30),
        2: (0, 60, -180, 120),
        3: (60, -360, 360),
        4: (-360, 720),
        5: (720,),
    }

    def __init__(self, order: int, arg: Expr):
        if order < 0:
            raise ValueError("smoothstep derivative order must be >= 0")
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "arg", arg)
        self._init(("sstep", order, arg._key), arg._vars)


_ZERO = Const(0)
_ONE = Const(1)


def _coerce(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, (int, Fraction)):
        return Const(x)
    if isinstance(x, float):
        return Const(Fraction(x))
    raise TypeError(f"cannot treat {x!r} as an expression")


def _maybe(x):
    """Coerce for operator sugar; None signals NotImplemented fallback."""
    try:
        return _coerce(x)
    except TypeError:
        return None


# smart constructors ----------------------------------------------------


def const(x: Number) -> Expr:
    return _coerce(x)


def var(name: str) -> Expr:
    return Var(name)


def add(*terms) -> Expr:
    flat = []
    acc = Fraction(0)
    for t in terms:
        t = _coerce(t)
        if isinstance(t, Add):
            for s in t.terms:
                if isinstance(s, Const):
                    acc += s.value
                else:
                    flat.append(s)
        elif isinstance(t, Const):
            acc += t.value
        else:
            flat.append(t)
    if acc != 0:
        flat.append(Const(acc))
    if not flat:
        return _ZERO
    if len(flat) == 1:
        return flat[0]
    return Add(tuple(flat))


def mul(*factors) -> Expr:
    flat = []
    acc = Fraction(1)
    for f in factors:
        f = _coerce(f)
        if isinstance(f, Mul):
            for g in f.factors:
                if isinstance(g, Const):
                    acc *= g.value
                else:
                    flat.append(g)
        elif isinstance(f, Const):
            acc *= f.value
        else:
            flat.append(f)
    if acc == 0:
        return _ZERO
    if acc != 1:
        flat.insert(0, Const(acc))
    if not flat:
        return _ONE
    if len(flat) == 1:
        return flat[0]
    return Mul(tuple(flat))


def pow_(base, exponent: int) -> Expr:
    base = _coerce(base)
    if isinstance(exponent, Expr):
        if isinstance(exponent, Const) and exponent.value.denominator == 1:
            exponent = int(exponent.value)
        else:
            raise ParseError("exponents must be integers")
    if not isinstance(exponent, int):
        raise ParseError("exponents must be integers")
    if exponent == 0:
        return _ONE
    if exponent == 1:
        return base
    if isinstance(base, Const):
        if base.value == 0 and exponent < 0:
            raise DomainError("0 raised to a negative power")
        return Const(base.value**exponent)
    if isinstance(base, Pow):
        return pow_(base.base, base.exponent * exponent)
    return Pow(base, exponent)


def div(a, b) -> Expr:
    a, b = _coerce(a), _coerce(b)
    if isinstance(b, Const):
        if b.value == 0:
            raise DomainError("division by the constant 0")
        return mul(a, Const(Fraction(1) / b.value))
    return mul(a, pow_(b, -1))


def neg(a) -> Expr:
    return mul(Const(-1), _coerce(a))


def _pi_multiple(a: Expr):
    """a as a rational multiple of pi, or None."""
    if isinstance(a, Const) and a.value == 0:
        return Fraction(0)
    if isinstance(a, Pi):
        return Fraction(1)
    if isinstance(a, Mul) and len(a.factors) == 2:
        c, p = a.factors
        if isinstance(c, Const) and isinstance(p, Pi):
            return c.value
    return None


def sin(a) -> Expr:
    a = _coerce(a)
    q = _pi_multiple(a)
    if q is not None and (2 * q).denominator == 1:
        return Const([0, 1, 0, -1][int(2 * q) % 4])
    return Func("sin", a)


def cos(a) -> Expr:
    a = _coerce(a)
    q = _pi_multiple(a)
    if q is not None and (2 * q).denominator == 1:
        return Const([1, 0, -1, 0][int(2 * q) % 4])
    return Func("cos", a)


def exp(a) -> Expr:
    a = _coerce(a)
    if isinstance(a, Const) and a.value == 0:
        return _ONE
    return Func("exp", a)


def log(a) -> Expr:
    a = _coerce(a)
    if isinstance(a, Const):
        if a.value <= 0:
            raise DomainError("log of a nonpositive constant")
        if a.value == 1:
            return _ZERO
    return Func("log", a)


def sqrt(a) -> Expr:
    a = _coerce(a)
    if isinstance(a, Const):
        if a.value < 0:
            raise DomainError("sqrt of a negative constant")
        num, den = a.value.numerator, a.value.denominator
        rn, rd = math.isqrt(num), math.isqrt(den)
        if rn * rn == num and rd * rd == den:
            return Const(Fraction(rn, rd))
    return Func("sqrt", a)


def smoothstep(a, order: int = 0) -> Expr:
    return SStep(order, _coerce(a))


_FUNC_BUILDERS = {"sin": sin, "cos": cos, "exp": exp, "log": log, "sqrt": sqrt}


# structural operations -------------------------------------------------


def free_vars(e: Expr) -> frozenset:
    return e._vars


def differentiate(e: Expr, name: str) -> Expr:
    """Structural partial derivative with respect to the variable `name`."""
    if name not in e._vars:
        return _ZERO
    if isinstance(e, Var):
        return _ONE
    if isinstance(e, Add):
        return add(*(differentiate(t, name) for t in e.terms))
    if isinstance(e, Mul):
        pieces = []
        fs = e.factors
        for i, f in enumerate(fs):
            if name not in f._vars:
                continue
            pieces.append(mul(*fs[:i], differentiate(f, name), *fs[i + 1 :]))
        return add(*pieces)
    if isinstance(e, Pow):
        return mul(
            Const(e.exponent),
            pow_(e.base, e.exponent - 1),
            differentiate(e.base, name),
        )
    if isinstance(e, Func):
        da = differentiate(e.arg, name)
        if e.name == "sin":
            return mul(cos(e.arg), da)
        if e.name == "cos":
            return mul(Const(-1), sin(e.arg), da)
        if e.name == "exp":
            return mul(e, da)
        if e.name == "log":
            return mul(pow_(e.arg, -1), da)
        if e.name == "sqrt":
            return mul(Const(Fraction(1, 2)), pow_(e, -1), da)
    if isinstance(e, SStep):
        return mul(SStep(e.order + 1, e.arg), differentiate(e.arg, name))
    raise TypeError(f"cannot differentiate {type(e).__name__}")


def substitute(e: Expr, bindings: Mapping[str, Expr]) -> Expr:
    """Replace variables by expressions, rebuilding through the smart
    constructors so folding reapplies."""
    if not (e._vars & set(bindings)):
        return e
    if isinstance(e, Var):
        return _coerce(bindings[e.name])
    if isinstance(e, Add):
        return add(*(substitute(t, bindings) for t in e.terms))
    if isinstance(e, Mul):
        return mul(*(substitute(f, bindings) for f in e.factors))
    if isinstance(e, Pow):
        return pow_(substitute(e.base, bindings), e.exponent)
    if isinstance(e, Func):
        return _FUNC_BUILDERS[e.name](substitute(e.arg, bindings))
    if isinstance(e, SStep):
        return SStep(e.order, substitute(e.arg, bindings))
    raise TypeError(f"cannot substitute into {type(e).__name__}")


def evaluate(e: Expr, point: Mapping[str, Union[float, np.ndarray]]):
    """Evaluate at a point (floats) or at many points (numpy arrays).

    Raises DomainError when the point leaves the domain of log, sqrt or
    a negative integer power.
    """
    if isinstance(e, Const):
        return float(e.value)
    if isinstance(e, Pi):
        return math.pi
    if isinstance(e, Var):
        try:
            return point[e.name]
        except KeyError:
            raise DomainError(f"no value supplied for variable {e.name!r}") from None
    if isinstance(e, Add):
        total = evaluate(e.terms[0], point)
        for t in e.terms[1:]:
            total = total + evaluate(t, point)
        return total
    if isinstance(e, Mul):
        total = evaluate(e.factors[0], point)
        for f in e.factors[1:]:
            total = total * evaluate(f, point)
        return total
    if isinstance(e, Pow):
        b = evaluate(e.base, point)
        if e.exponent < 0 and np.any(np.asarray(b) == 0.0):
            raise DomainError("negative power of 0")
        return b**e.exponent
    if isinstance(e, Func):
        a = evaluate(e.arg, point)
        if e.name == "sin":
            return np.sin(a)
        if e.name == "cos":
            return np.cos(a)
        if e.name == "exp":
            return np.exp(a)
        if e.name == "log":
            if np.any(np.asarray(a) <= 0.0):
                raise DomainError("log of a non-positive number")
            return np.log(a)
        if e.name == "sqrt":
            if np.any(np.asarray(a) < 0.0):
                raise DomainError("sqrt of a negative number")
            return np.sqrt(a)
    if isinstance(e, SStep):
        u = np.asarray(evaluate(e.arg, point), dtype=float)
        coeffs = SStep._POLYS.get(e.order)
        if coeffs is None:
            inside = np.zeros_like(u)
        else:
            inside = np.zeros_like(u)
            for c in reversed(coeffs):
                inside = inside * u + c
        out = np.where(u <= 0.0, 0.0, np.where(u >= 1.0, 1.0 if e.order == 0 else 0.0, inside))
        return float(out) if out.ndim == 0 else out
    raise TypeError(f"cannot evaluate {type(e).__name__}")


# canonical form --------------------------------------------------------

def _term_split(e: Expr):
    """Split a term into (rational coefficient, residual factor tuple)."""
    if isinstance(e, Const):
        return e.value, ()
    if isinstance(e, Mul):
        coeff = Fraction(1)
        rest = []
        for f in e.factors:
            if isinstance(f, Const):
                coeff *= f.value
            else:
                rest.append(f)
        return coeff, tuple(rest)
    return Fraction(1), (e,)


def canonical(e: Expr) -> Expr:
    """Stronger normal form used only for structural identity checks:
    collects like terms in sums and like bases in products (with sorting),
    on top of the constructors' folding.  Not a full simplifier."""
    if isinstance(e, (Const, Pi, Var)):
        return e
    if isinstance(e, Func):
        return _FUNC_BUILDERS[e.name](canonical(e.arg))
    if isinstance(e, SStep):
        return SStep(e.order, canonical(e.arg))
    if isinstance(e, Pow):
        return pow_(canonical(e.base), e.exponent)
    if isinstance(e, Mul):
        flat = mul(*(canonical(f) for f in e.factors))
        if not isinstance(flat, Mul):
            return flat
        coeff = Fraction(1)
        powers: dict = {}
        order: list = []
        for f in flat.factors:
            if isinstance(f, Const):
                coeff *= f.value
                continue
            if isinstance(f, Pow):
                base, k = f.base, f.exponent
            else:
                base, k = f, 1
            if base._key not in powers:
                powers[base._key] = [base, 0]
                order.append(base._key)
            powers[base._key][1] += k
        parts = []
        for key in sorted(order):
            base, k = powers[key]
            if k != 0:
                parts.append(pow_(base, k))
        return mul(Const(coeff), *parts)
    if isinstance(e, Add):
        flat = add(*(canonical(t) for t in e.terms))
        if not isinstance(flat, Add):
            return flat
        buckets: dict = {}
        order: list = []
        for t in flat.terms:
            coeff, rest = _term_split(t)
            key = tuple(r._key for r in rest)
            if key not in buckets:
                buckets[key] = [Fraction(0), rest]
                order.append(key)
            buckets[key][0] += coeff
        parts = []
        for key in sorted(order):
            coeff, rest = buckets[key]
            if coeff != 0:
                parts.append(mul(Const(coeff), *rest))
        return add(*parts)
    raise TypeError(f"cannot canonicalize {type(e).__name__}")


def structurally_zero(e: Expr) -> bool:
    return canonical(e) == _ZERO


def structurally_equal(e1: Expr, e2: Expr) -> bool:
    return structurally_zero(add(e1, neg(e2)))


# parsing / printing ----------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^()]))"
)


def _tokenize(text: str):
    pos = 0
    tokens = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            rest = text[pos:].strip()
            if not rest:
                break
            raise ParseError(f"unexpected character at {text[pos:]!r}")
        pos = m.end()
        if m.group("num"):
            tokens.append(("num", m.group("num")))
        elif m.group("name"):
            tokens.append(("name", m.group("name")))
        else:
            op = m.group("op")
            tokens.append(("op", "^" if op == "**" else op))
    tokens.append(("end", ""))
    return tokens


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op):
        kind, val = self.next()
        if kind != "op" or val != op:
            raise ParseError(f"expected {op!r}, found {val!r}")

    def parse_expr(self) -> Expr:
        node = self.parse_term()
        while self.peek() == ("op", "+") or self.peek() == ("op", "-"):
            _, op = self.next()
            rhs = self.parse_term()
            node = add(node, rhs if op == "+" else neg(rhs))
        return node

    def parse_term(self) -> Expr:
        node = self.parse_unary()
        while self.peek() == ("op", "*") or self.peek() == ("op", "/"):
            _, op = self.next()
            rhs = self.parse_unary()
            node = mul(node, rhs) if op == "*" else div(node, rhs)
        return node

    def parse_unary(self) -> Expr:
        if self.peek() == ("op", "-"):
            self.next()
            return neg(self.parse_unary())
        if self.peek() == ("op", "+"):
            self.next()
            return self.parse_unary()
        return self.parse_power()

    def parse_power(self) -> Expr:
        base = self.parse_atom()
        if self.peek() == ("op", "^"):
            self.next()
            expo = self.parse_unary()
            if not isinstance(expo, Const) or expo.value.denominator != 1:
                raise ParseError("exponents must be integer constants")
            return pow_(base, int(expo.value))
        return base

    def parse_atom(self) -> Expr:
        kind, val = self.next()
        if kind == "num":
            return Const(Fraction(val))
        if kind == "name":
            if val == "pi":
                return Pi()
            if self.peek() == ("op", "("):
                self.next()
                arg = self.parse_expr()
                self.expect_op(")")
                if val not in _FUNCS:
                    raise ParseError(f"unknown function {val!r}")
                return _FUNC_BUILDERS[val](arg)
            return Var(val)
        if (kind, val) == ("op", "("):
            node = self.parse_expr()
            self.expect_op(")")
            return node
        raise ParseError(f"unexpected token {val!r}")


def parse(text: str) -> Expr:
    """Parse infix text like ``sin(t2)*z^2/(1+x^2)`` into an Expr."""
    parser = _Parser(_tokenize(text))
    node = parser.parse_expr()
    if parser.peek()[0] != "end":
        raise ParseError(f"trailing input near {parser.peek()[1]!r}")
    return node


def _needs_parens_in_product(e: Expr) -> bool:
    return isinstance(e, Add)


def to_text(e: Expr) -> str:
    """Deterministic infix rendering; parses back to an equal tree for
    expressions built from the public grammar."""
    if isinstance(e, Const):
        v = e.value
        if v.denominator == 1:
            return str(v.numerator) if v >= 0 else f"(-{-v.numerator})"
        body = f"{abs(v.numerator)}/{v.denominator}"
        return body if v >= 0 else f"(-{body})"
    if isinstance(e, Pi):
        return "pi"
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Add):
        return "(" + " + ".join(to_text(t) for t in e.terms) + ")"
    if isinstance(e, Mul):
        parts = []
        for f in e.factors:
            s = to_text(f)
            if _needs_parens_in_product(f):
                parts.append(s)
            else:
                parts.append(s)
        return "*".join(parts)
    if isinstance(e, Pow):
        base = to_text(e.base)
        if not isinstance(e.base, (Var, Func, Pi)):
            base = f"({base})"
        if e.exponent < 0:
            return f"{base}^({e.exponent})"
        return f"{base}^{e.exponent}"
    if isinstance(e, Func):
        return f"{e.name}({to_text(e.arg)})"
    if isinstance(e, SStep):
        return f"sstep[{e.order}]({to_text(e.arg)})"
    raise TypeError(f"cannot print {type(e).__name__}")


# sampling --------------------------------------------------------------


@dataclass(frozen=True)
class SampleDomain:
    """Deterministic rejection sampler over a coordinate box.

    Each coordinate gets an interval; periodic coordinates are sampled
    over one full circumference.  Exclusions are expressions that must
    stay at least `margin` away from zero at accepted points.
    """

    coords: tuple
    ranges: Mapping[str, tuple]
    periodic: frozenset = frozenset()
    exclusions: tuple = ()
    count: int = 1000
    seed: int = 42

    DEFAULT_MARGIN = 1e-3
    _MAX_ROUNDS = 60

    def with_(self, **kw) -> "SampleDomain":
        data = {
            "coords": self.coords,
            "ranges": self.ranges,
            "periodic": self.periodic,
            "exclusions": self.exclusions,
            "count": self.count,
            "seed": self.seed,
        }
        data.update(kw)
        return SampleDomain(**data)

    def exclude(self, e: Expr, margin: float = None) -> "SampleDomain":
        m = self.DEFAULT_MARGIN if margin is None else margin
        return self.with_(exclusions=self.exclusions + ((e, m),))

    def sample(self, count: int = None, fixed: Mapping[str, float] = None) -> dict:
        """Return {coord: array} of accepted points.  `fixed` pins some
        coordinates to given values (used for on-locus sampling); pinned
        coordinates skip the exclusion filter only if every exclusion
        still clears its margin."""
        n = self.count if count is None else count
        rng = np.random.default_rng(self.seed)
        kept = {c: [] for c in self.coords}
        total = 0
        for _ in range(self._MAX_ROUNDS):
            batch = {}
            for c in self.coords:
                if fixed and c in fixed:
                    batch[c] = np.full(n, float(fixed[c]))
                    continue
                lo, hi = self.ranges.get(c, (-1.0, 1.0))
                batch[c] = rng.uniform(lo, hi, size=n)
            mask = np.ones(n, dtype=bool)
            for e, margin in self.exclusions:
                if fixed and (e._vars <= set(fixed)):
                    continue
                try:
                    vals = evaluate(e, batch)
                except DomainError:
                    mask[:] = False
                    break
                mask &= np.abs(np.asarray(vals)) >= margin
            for c in self.coords:
                kept[c].append(batch[c][mask])
            total += int(mask.sum())
            if total >= n:
                break
        if total == 0:
            raise EmptyDomain("all sampled points were rejected")
        return {c: np.concatenate(kept[c])[:n] for c in self.coords}

    def sample_points(self, count: int = None, fixed=None) -> list:
        """Same as sample() but as a list of scalar dicts."""
        arrays = self.sample(count=count, fixed=fixed)
        n = len(next(iter(arrays.values()))) if arrays else 0
        return [{c: float(arrays[c][i]) for c in self.coords} for i in range(n)]


@dataclass(frozen=True)
class EquivReport:
    max_abs: float
    max_rel: float
    tol: float
    passed: bool
    witness: Union[dict, None]
    samples: int

    def __bool__(self):
        return self.passed


def numeric_equiv(e1: Expr, e2: Expr, dom: SampleDomain, tol: float) -> EquivReport:
    """Compare two expressions on sampled points.

    Passes when either the max absolute deviation or the max normalized
    deviation stays within tol; on failure the witness point with the
    largest deviation is reported.
    """
    pts = dom.sample()
    n_pts = len(next(iter(pts.values()))) if pts else 0
    v1 = np.broadcast_to(np.asarray(evaluate(e1, pts), dtype=float), (n_pts,))
    v2 = np.broadcast_to(np.asarray(evaluate(e2, pts), dtype=float), (n_pts,))
    dev = np.abs(v1 - v2)
    scale = 1.0 + np.maximum(np.abs(v1), np.abs(v2))
    rel = dev / scale
    max_abs = float(dev.max()) if dev.size else 0.0
    max_rel = float(rel.max()) if rel.size else 0.0
    passed = max_abs <= tol or max_rel <= tol
    witness = None
    if not passed:
        i = int(dev.argmax())
        witness = {c: float(pts[c][i]) for c in dom.coords}
    n = int(dev.size)
    return EquivReport(max_abs, max_rel, tol, passed, witness, n)
