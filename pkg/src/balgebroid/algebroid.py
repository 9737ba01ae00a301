"""Lie algebroids in a single adapted chart.

An algebroid is stored by its frame data: anchor images of the frame
sections as symbolic vector fields on the chart, plus structure
functions c_ab^c.  The families of divisor type (b^k, elliptic,
self-crossing) and constant-coefficient Lie algebras are built here,
together with the Cartan calculus on algebroid forms: wedge, interior
product, Koszul differential, residue and restriction to the divisor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import expr as ex
from .errors import (
    ChartMismatch,
    DegreeOverflow,
    DuplicateCoordinate,
    InvalidSpec,
    NotBK,
    RankMismatch,
    UnknownCoordinate,
)
from .expr import Expr, const, differentiate, evaluate, substitute, var

__all__ = [
    "Chart",
    "DivisorSpec",
    "AlgebroidChart",
    "Section",
    "AForm",
    "tangent",
    "bk",
    "elliptic",
    "selfcrossing",
    "lie_algebra",
    "pullback_product",
    "bracket",
    "exterior_derivative",
    "wedge",
    "interior",
    "residue",
    "restrict_to_locus",
    "domain_for",
    "form_residual",
    "form_max_abs",
]


@dataclass(frozen=True)
class Chart:
    """Ordered coordinates with periodicity and sampling ranges."""

    coords: tuple
    periodic: Mapping[str, float] = field(default_factory=dict)
    ranges: Mapping[str, tuple] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.coords) < 1:
            raise InvalidSpec("a chart needs at least one coordinate")
        if len(set(self.coords)) != len(self.coords):
            raise DuplicateCoordinate(f"repeated coordinate in {self.coords}")
        for name in self.periodic:
            if name not in self.coords:
                raise UnknownCoordinate(name)

    @property
    def dim(self) -> int:
        return len(self.coords)

    def index(self, name: str) -> int:
        try:
            return self.coords.index(name)
        except ValueError:
            raise UnknownCoordinate(name) from None

    def range_of(self, name: str) -> tuple:
        if name in self.periodic:
            return (0.0, float(self.periodic[name]))
        return tuple(self.ranges.get(name, (-1.0, 1.0)))

    def extend(self, new_coords: Sequence[str], periodic: Mapping[str, float] = None,
               ranges: Mapping[str, tuple] = None) -> "Chart":
        for c in new_coords:
            if c in self.coords:
                raise DuplicateCoordinate(c)
        per = dict(self.periodic)
        per.update(periodic or {})
        rng = dict(self.ranges)
        rng.update(ranges or {})
        return Chart(self.coords + tuple(new_coords), per, rng)

    def drop(self, name: str) -> "Chart":
        i = self.index(name)
        per = {k: v for k, v in self.periodic.items() if k != name}
        rng = {k: v for k, v in self.ranges.items() if k != name}
        return Chart(self.coords[:i] + self.coords[i + 1 :], per, rng)


@dataclass(frozen=True)
class DivisorSpec:
    """Divisor data attached to an algebroid chart.

    kind "bk": hypersurface {f = 0} with f depending only on the adapted
    coordinate z, vanishing transversely at the given roots; order k.
    kind "elliptic": coordinate pair (x, y) cutting out {x = y = 0}.
    kind "selfcrossing": several bk components, one per coordinate.
    """

    kind: str
    z: str = None
    k: int = 1
    f: Expr = None
    roots: tuple = (0.0,)
    x: str = None
    y: str = None
    components: tuple = ()  # selfcrossing: ((z, k, f, roots), ...)


class Section:
    """Frame-coefficient vector of an algebroid section."""

    __slots__ = ("alg", "coeffs")

    def __init__(self, alg: "AlgebroidChart", coeffs: Sequence[Expr]):
        if len(coeffs) != alg.rank:
            raise RankMismatch(f"section needs {alg.rank} coefficients")
        self.alg = alg
        self.coeffs = tuple(ex._coerce(c) for c in coeffs)

    def __repr__(self):
        parts = [f"({c!r})*{n}" for c, n in zip(self.coeffs, self.alg.frame_names)
                 if c != ex._ZERO]
        return " + ".join(parts) if parts else "0"

    def anchor_field(self) -> tuple:
        """Components of rho(X) in the coordinate basis."""
        n = self.alg.chart.dim
        out = []
        for i in range(n):
            out.append(ex.add(*(ex.mul(self.coeffs[a], self.alg.anchor[a][i])
                                for a in range(self.alg.rank))))
        return tuple(out)

    def apply(self, f: Expr) -> Expr:
        """Derivation rho(X)(f)."""
        comps = self.anchor_field()
        return ex.add(*(ex.mul(comps[i], differentiate(f, c))
                        for i, c in enumerate(self.alg.chart.coords)))

    def at(self, point) -> np.ndarray:
        return np.array([evaluate(c, point) for c in self.coeffs], dtype=float)

    def __add__(self, other):
        return Section(self.alg, [a + b for a, b in zip(self.coeffs, other.coeffs)])

    def __rmul__(self, f):
        f = ex._coerce(f)
        return Section(self.alg, [ex.mul(f, c) for c in self.coeffs])

    def __neg__(self):
        return Section(self.alg, [ex.neg(c) for c in self.coeffs])


def _merge_sign(I: tuple, J: tuple):
    """Merge two disjoint increasing multi-indices; None if they collide."""
    merged = []
    sign = 1
    i = j = 0
    while i < len(I) and j < len(J):
        if I[i] == J[j]:
            return None, 0
        if I[i] < J[j]:
            merged.append(I[i])
            i += 1
        else:
            if (len(I) - i) % 2 == 1:
                sign = -sign
            merged.append(J[j])
            j += 1
    merged.extend(I[i:])
    merged.extend(J[j:])
    return tuple(merged), sign


class AForm:
    """Algebroid differential form with strictly increasing multi-indices."""

    __slots__ = ("alg", "degree", "coeffs")

    def __init__(self, alg: "AlgebroidChart", degree: int, coeffs: Mapping[tuple, Expr]):
        if degree < 0 or degree > alg.rank:
            raise DegreeOverflow(f"degree {degree} outside 0..{alg.rank}")
        self.alg = alg
        self.degree = degree
        clean = {}
        for I, c in coeffs.items():
            I = tuple(I)
            if len(I) != degree or list(I) != sorted(set(I)):
                raise InvalidSpec(f"bad multi-index {I} for degree {degree}")
            c = ex._coerce(c)
            if c != ex._ZERO:
                clean[I] = c
        self.coeffs = clean

    def __repr__(self):
        if not self.coeffs:
            return "0"
        names = self.alg.coframe_names
        parts = []
        for I in sorted(self.coeffs):
            label = "^".join(names[i] for i in I) if I else "1"
            parts.append(f"({self.coeffs[I]!r})*{label}")
        return " + ".join(parts)

    def get(self, I: tuple) -> Expr:
        return self.coeffs.get(tuple(I), ex._ZERO)

    def __add__(self, other):
        if other.degree != self.degree:
            raise RankMismatch("cannot add forms of different degree")
        if other.alg is not self.alg and other.alg.rank != self.alg.rank:
            raise ChartMismatch("cannot add forms on different algebroids")
        out = dict(self.coeffs)
        for I, c in other.coeffs.items():
            out[I] = ex.add(out.get(I, ex._ZERO), c)
        return AForm(self.alg, self.degree, out)

    def __sub__(self, other):
        return self + (-other)

    def __neg__(self):
        return AForm(self.alg, self.degree, {I: ex.neg(c) for I, c in self.coeffs.items()})

    def __rmul__(self, f):
        f = ex._coerce(f)
        return AForm(self.alg, self.degree, {I: ex.mul(f, c) for I, c in self.coeffs.items()})

    def apply(self, *sections: Section):
        """Evaluate on sections symbolically (determinant convention)."""
        if len(sections) != self.degree:
            raise RankMismatch(f"need {self.degree} sections")
        total = ex._ZERO
        import itertools

        for I, c in self.coeffs.items():
            for perm in itertools.permutations(range(self.degree)):
                sgn = _perm_sign(perm)
                prod = c
                for slot, a in zip(perm, I):
                    prod = ex.mul(prod, sections[slot].coeffs[a])
                total = ex.add(total, ex.mul(const(sgn), prod))
        return total

    def matrix_at(self, point) -> np.ndarray:
        """Degree-2 coefficient matrix M[a,b] = omega(e_a, e_b)."""
        if self.degree != 2:
            raise RankMismatch("matrix_at needs a 2-form")
        r = self.alg.rank
        M = np.zeros((r, r))
        for (a, b), c in self.coeffs.items():
            v = evaluate(c, point)
            M[a, b] = v
            M[b, a] = -v
        return M

    def vector_at(self, point) -> np.ndarray:
        if self.degree != 1:
            raise RankMismatch("vector_at needs a 1-form")
        out = np.zeros(self.alg.rank)
        for (a,), c in self.coeffs.items():
            out[a] = evaluate(c, point)
        return out


def _perm_sign(perm):
    sign = 1
    seen = [False] * len(perm)
    for i in range(len(perm)):
        if seen[i]:
            continue
        j = i
        length = 0
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


@dataclass(frozen=True)
class AlgebroidChart:
    """Anchor frame and structure functions over a chart.

    anchor[a][i] is the i-th coordinate component of rho(e_a); the
    structure map stores c_ab^c for a < b only, antisymmetry is implied.
    """

    chart: Chart
    kind: str
    frame_names: tuple
    coframe_names: tuple
    anchor: tuple
    structure: Mapping[tuple, Mapping[int, Expr]]
    divisor: DivisorSpec = None

    @property
    def rank(self) -> int:
        return len(self.frame_names)

    def struct(self, a: int, b: int) -> Mapping[int, Expr]:
        if a == b:
            return {}
        if a < b:
            return self.structure.get((a, b), {})
        return {c: ex.neg(e) for c, e in self.structure.get((b, a), {}).items()}

    def frame_section(self, a: int) -> Section:
        coeffs = [ex._ZERO] * self.rank
        coeffs[a] = ex._ONE
        return Section(self, coeffs)

    def section(self, coeffs) -> Section:
        return Section(self, coeffs)

    def form(self, degree: int, coeffs: Mapping[tuple, Expr]) -> AForm:
        return AForm(self, degree, coeffs)

    def form_from_labels(self, labeled: Mapping[str, Expr]) -> AForm:
        """Build a 1-form from {coframe label: coefficient}."""
        coeffs = {}
        for label, c in labeled.items():
            try:
                a = self.coframe_names.index(label)
            except ValueError:
                raise UnknownCoordinate(f"no coframe element {label!r}") from None
            coeffs[(a,)] = c
        return AForm(self, 1, coeffs)

    def zero_form(self, f: Expr) -> AForm:
        return AForm(self, 0, {(): f})

    def anchor_matrix_at(self, point) -> np.ndarray:
        """dim x rank matrix of anchor components."""
        n, r = self.chart.dim, self.rank
        M = np.zeros((n, r))
        for a in range(r):
            for i in range(n):
                M[i, a] = evaluate(self.anchor[a][i], point)
        return M


# builders ---------------------------------------------------------------


def _unit_anchor_row(chart: Chart, coord: str) -> tuple:
    row = [ex._ZERO] * chart.dim
    row[chart.index(coord)] = ex._ONE
    return tuple(row)


def tangent(chart: Chart) -> AlgebroidChart:
    """The tangent algebroid: coordinate frame, zero structure functions."""
    anchor = tuple(_unit_anchor_row(chart, c) for c in chart.coords)
    return AlgebroidChart(
        chart=chart,
        kind="tangent",
        frame_names=tuple(f"d_{c}" for c in chart.coords),
        coframe_names=tuple(f"d{c}" for c in chart.coords),
        anchor=anchor,
        structure={},
    )


def _check_bk_function(chart: Chart, z: str, f: Expr, roots) -> None:
    if z not in chart.coords:
        raise UnknownCoordinate(z)
    extra = ex.free_vars(f) - {z}
    if extra:
        raise InvalidSpec(f"divisor function may depend only on {z}, found {sorted(extra)}")
    df = differentiate(f, z)
    for r in roots:
        r = float(evaluate(ex._coerce(r), {})) if isinstance(r, Expr) else float(r)
        v = float(evaluate(f, {z: r}))
        if abs(v) > 1e-12:
            raise InvalidSpec(f"divisor function does not vanish at {z}={r} (value {v})")
        dv = float(evaluate(df, {z: r}))
        if abs(dv) < 1e-9:
            raise InvalidSpec(f"divisor function is not transverse at {z}={r}")


def bk(chart: Chart, z: str, k: int = 1, f: Expr = None, roots=(0.0,)) -> AlgebroidChart:
    """b^k algebroid of the hypersurface {f = 0}, frame <f^k d_z, d_rest>."""
    if k < 1:
        raise InvalidSpec("order k must be >= 1")
    if f is None:
        f = var(z)
    _check_bk_function(chart, z, f, roots)
    rows = [tuple(ex.mul(ex.pow_(f, k), e) for e in _unit_anchor_row(chart, z))]
    frame = [f"e0_{z}"]
    coframe = ["theta0"]
    for c in chart.coords:
        if c == z:
            continue
        rows.append(_unit_anchor_row(chart, c))
        frame.append(f"d_{c}")
        coframe.append(f"d{c}")
    spec = DivisorSpec(kind="bk", z=z, k=k, f=f,
                       roots=tuple(float(evaluate(ex._coerce(r), {})) if isinstance(r, Expr)
                                   else float(r) for r in roots))
    return AlgebroidChart(chart=chart, kind="bk", frame_names=tuple(frame),
                          coframe_names=tuple(coframe), anchor=tuple(rows),
                          structure={}, divisor=spec)


def elliptic(chart: Chart, x: str, y: str) -> AlgebroidChart:
    """Elliptic algebroid of {x = y = 0}: radial and rotational frame."""
    ix, iy = chart.index(x), chart.index(y)
    n = chart.dim
    radial = [ex._ZERO] * n
    radial[ix] = var(x)
    radial[iy] = var(y)
    rot = [ex._ZERO] * n
    rot[ix] = ex.neg(var(y))
    rot[iy] = var(x)
    rows = [tuple(radial), tuple(rot)]
    frame = ["e_r", "e_phi"]
    coframe = ["theta0", "theta1"]
    for c in chart.coords:
        if c in (x, y):
            continue
        rows.append(_unit_anchor_row(chart, c))
        frame.append(f"d_{c}")
        coframe.append(f"d{c}")
    spec = DivisorSpec(kind="elliptic", x=x, y=y)
    return AlgebroidChart(chart=chart, kind="elliptic", frame_names=tuple(frame),
                          coframe_names=tuple(coframe), anchor=tuple(rows),
                          structure={}, divisor=spec)


def selfcrossing(chart: Chart, components: Sequence[tuple]) -> AlgebroidChart:
    """Normal-crossing divisor: one b^k factor per listed (coord, k)."""
    comps = []
    rows = []
    frame = []
    coframe = []
    names = [c for c, _k in components]
    if len(set(names)) != len(names):
        raise DuplicateCoordinate("repeated divisor coordinate")
    for j, (z, k) in enumerate(components):
        f = var(z)
        _check_bk_function(chart, z, f, (0.0,))
        rows.append(tuple(ex.mul(ex.pow_(f, k), e) for e in _unit_anchor_row(chart, z)))
        frame.append(f"e0_{z}")
        coframe.append(f"theta{j}_{z}")
        comps.append((z, int(k), f, (0.0,)))
    for c in chart.coords:
        if c in names:
            continue
        rows.append(_unit_anchor_row(chart, c))
        frame.append(f"d_{c}")
        coframe.append(f"d{c}")
    spec = DivisorSpec(kind="selfcrossing", components=tuple(comps))
    return AlgebroidChart(chart=chart, kind="selfcrossing", frame_names=tuple(frame),
                          coframe_names=tuple(coframe), anchor=tuple(rows),
                          structure={}, divisor=spec)


def lie_algebra(chart: Chart, names: Sequence[str],
                brackets: Mapping[tuple, Mapping[str, Fraction]]) -> AlgebroidChart:
    """Bundle of Lie algebras with zero anchor and constant structure
    constants, given as {(a_name, b_name): {c_name: value}}; the Jacobi
    identity is verified exactly."""
    names = tuple(names)
    idx = {n: i for i, n in enumerate(names)}
    r = len(names)
    c = [[[Fraction(0)] * r for _ in range(r)] for _ in range(r)]
    for (na, nb), out in brackets.items():
        a, b = idx[na], idx[nb]
        if a == b:
            raise InvalidSpec(f"bracket [{na},{na}] must vanish")
        for nc, v in out.items():
            v = Fraction(v)
            c[a][b][idx[nc]] += v
            c[b][a][idx[nc]] -= v
    for a in range(r):
        for b in range(r):
            for cc in range(r):
                for e in range(r):
                    total = Fraction(0)
                    for d in range(r):
                        total += (c[a][b][d] * c[d][cc][e]
                                  + c[b][cc][d] * c[d][a][e]
                                  + c[cc][a][d] * c[d][b][e])
                    if total != 0:
                        raise InvalidSpec(
                            f"structure constants fail the Jacobi identity at "
                            f"({names[a]},{names[b]},{names[cc]})")
    structure = {}
    for a in range(r):
        for b in range(a + 1, r):
            row = {cc: const(c[a][b][cc]) for cc in range(r) if c[a][b][cc] != 0}
            if row:
                structure[(a, b)] = row
    zero_row = tuple([ex._ZERO] * chart.dim)
    return AlgebroidChart(chart=chart, kind="lie_algebra", frame_names=names,
                          coframe_names=tuple(f"{n}*" for n in names),
                          anchor=tuple(zero_row for _ in range(r)),
                          structure=structure)


def pullback_product(A: AlgebroidChart, fibre_coords: Sequence[str],
                     periodic: Mapping[str, float] = None,
                     ranges: Mapping[str, tuple] = None,
                     kind: str = None) -> AlgebroidChart:
    """Pullback along the projection (base x fibre) -> base: the frame of A
    acts horizontally and each fibre coordinate contributes a vertical
    coordinate vector field.  Structure functions are unchanged."""
    chart = A.chart.extend(fibre_coords, periodic=periodic, ranges=ranges)
    pad = len(fibre_coords)
    rows = [row + tuple([ex._ZERO] * pad) for row in A.anchor]
    frame = list(A.frame_names)
    coframe = list(A.coframe_names)
    for c in fibre_coords:
        rows.append(_unit_anchor_row(chart, c))
        frame.append(f"d_{c}")
        coframe.append(f"d{c}")
    return AlgebroidChart(chart=chart, kind=kind or "pullback",
                          frame_names=tuple(frame), coframe_names=tuple(coframe),
                          anchor=tuple(rows), structure=dict(A.structure),
                          divisor=A.divisor)


# calculus ----------------------------------------------------------------


def bracket(X: Section, Y: Section) -> Section:
    """Lie algebroid bracket in frame coefficients (Leibniz in each slot)."""
    A = X.alg
    if Y.alg is not A and Y.alg.rank != A.rank:
        raise ChartMismatch("sections live on different algebroids")
    out = []
    for cidx in range(A.rank):
        total = ex._ZERO
        for a in range(A.rank):
            for b in range(a + 1, A.rank):
                cab = A.structure.get((a, b), {}).get(cidx)
                if cab is not None:
                    skew = ex.add(ex.mul(X.coeffs[a], Y.coeffs[b]),
                                  ex.neg(ex.mul(X.coeffs[b], Y.coeffs[a])))
                    total = ex.add(total, ex.mul(skew, cab))
        total = ex.add(total, X.apply(Y.coeffs[cidx]), ex.neg(Y.apply(X.coeffs[cidx])))
        out.append(total)
    return Section(A, out)


def wedge(w1: AForm, w2: AForm) -> AForm:
    A = w1.alg
    deg = w1.degree + w2.degree
    if deg > A.rank:
        raise DegreeOverflow(f"wedge degree {deg} exceeds rank {A.rank}")
    out: dict = {}
    for I, a in w1.coeffs.items():
        for J, b in w2.coeffs.items():
            K, sign = _merge_sign(I, J)
            if K is None:
                continue
            term = ex.mul(const(sign), a, b)
            out[K] = ex.add(out.get(K, ex._ZERO), term)
    return AForm(A, deg, out)


def interior(X: Section, w: AForm) -> AForm:
    """Contraction in the first slot."""
    A = w.alg
    if w.degree == 0:
        raise DegreeOverflow("cannot contract a 0-form")
    out: dict = {}
    for I, c in w.coeffs.items():
        for pos, a in enumerate(I):
            J = I[:pos] + I[pos + 1 :]
            sign = -1 if pos % 2 else 1
            term = ex.mul(const(sign), X.coeffs[a], c)
            out[J] = ex.add(out.get(J, ex._ZERO), term)
    return AForm(A, w.degree - 1, out)


def _d_coframe(A: AlgebroidChart, c: int) -> AForm:
    """d(theta^c) = -sum_{a<b} c_ab^c theta^a ^ theta^b."""
    out = {}
    for (a, b), row in A.structure.items():
        if c in row:
            out[(a, b)] = ex.neg(row[c])
    return AForm(A, 2, out)


def exterior_derivative(w: AForm) -> AForm:
    """Koszul differential determined by anchor and structure functions."""
    A = w.alg
    if w.degree == 0:
        f = w.coeffs.get((), ex._ZERO)
        return AForm(A, 1, {(a,): A.frame_section(a).apply(f) for a in range(A.rank)})
    if w.degree + 1 > A.rank:
        raise DegreeOverflow(f"d would exceed rank {A.rank}")
    total = AForm(A, w.degree + 1, {})
    for I, c in w.coeffs.items():
        dc = exterior_derivative(A.zero_form(c))
        base = AForm(A, w.degree, {I: ex._ONE})
        total = total + wedge(dc, base)
        for pos, idx in enumerate(I):
            dtheta = _d_coframe(A, idx)
            if not dtheta.coeffs:
                continue
            left = AForm(A, pos, {I[:pos]: ex._ONE}) if pos else None
            right_idx = I[pos + 1 :]
            right = AForm(A, len(right_idx), {right_idx: ex._ONE}) if right_idx else None
            piece = dtheta
            if left is not None:
                piece = wedge(left, piece)
            if right is not None:
                piece = wedge(piece, right)
            sign = -1 if pos % 2 else 1
            total = total + ex.mul(const(sign), c) * piece
    return total


def _restrict_coeff(A: AlgebroidChart, c: Expr, root) -> Expr:
    z = A.divisor.z
    r = A.divisor.roots[0] if root is None else root
    return substitute(c, {z: const(Fraction(r)) if not isinstance(r, Expr) else r})


def z_locus_algebroid(A: AlgebroidChart) -> AlgebroidChart:
    """Tangent algebroid of the divisor hypersurface chart."""
    if A.divisor is None or A.divisor.kind != "bk":
        raise NotBK("operation needs a bk divisor")
    return tangent(A.chart.drop(A.divisor.z))


def residue(A: AlgebroidChart, w: AForm, root: float = None) -> AForm:
    """Residue of a b^k form along the divisor: contract with the divisor
    frame vector e0, restrict to {z = root}.  Degree drops by one; the
    result lives on the tangent algebroid of the Z chart."""
    if w.degree < 1:
        raise RankMismatch("residue expects degree >= 1")
    AZ = z_locus_algebroid(A)
    out = {}
    for I, c in w.coeffs.items():
        if 0 not in I:
            continue
        pos = I.index(0)
        J = tuple(i - 1 for i in I if i != 0)
        sign = -1 if pos % 2 else 1
        out[J] = ex.add(out.get(J, ex._ZERO), ex.mul(const(sign), _restrict_coeff(A, c, root)))
    return AForm(AZ, w.degree - 1, out)


def restrict_to_locus(A: AlgebroidChart, alpha: AForm, root: float = None):
    """Split a b^k 1-form as u*theta0 + beta along the divisor.

    Returns (AZ, u, beta): u is the theta0 coefficient restricted to the
    locus, beta the remaining smooth part, both on the Z chart."""
    if alpha.degree != 1:
        raise RankMismatch("restrict_to_locus expects a 1-form")
    AZ = z_locus_algebroid(A)
    u = _restrict_coeff(A, alpha.get((0,)), root)
    rest = {}
    for I, c in alpha.coeffs.items():
        if 0 in I:
            continue
        rest[tuple(i - 1 for i in I)] = _restrict_coeff(A, c, root)
    return AZ, u, AForm(AZ, 1, rest)


# sampling helpers --------------------------------------------------------


def domain_for(A: AlgebroidChart, count: int = 1000, seed: int = 42,
               margin: float = None, avoid_divisor: bool = True) -> ex.SampleDomain:
    """Sampling domain of the chart box with divisor-locus exclusions."""
    chart = A.chart
    m = ex.SampleDomain.DEFAULT_MARGIN if margin is None else margin
    exclusions = []
    if avoid_divisor and A.divisor is not None:
        d = A.divisor
        if d.kind == "bk":
            exclusions.append((d.f, m))
        elif d.kind == "elliptic":
            sq = ex.add(ex.pow_(var(d.x), 2), ex.pow_(var(d.y), 2))
            exclusions.append((sq, m * m))
        elif d.kind == "selfcrossing":
            for z, k, f, roots in d.components:
                exclusions.append((f, m))
    return ex.SampleDomain(
        coords=chart.coords,
        ranges={c: chart.range_of(c) for c in chart.coords},
        periodic=frozenset(chart.periodic),
        exclusions=tuple(exclusions),
        count=count,
        seed=seed,
    )


def form_residual(w1: AForm, w2: AForm, dom: ex.SampleDomain) -> float:
    """Max abs deviation of coefficients over sampled points."""
    pts = dom.sample()
    worst = 0.0
    keys = set(w1.coeffs) | set(w2.coeffs)
    for I in keys:
        d = np.asarray(evaluate(ex.add(w1.get(I), ex.neg(w2.get(I))), pts))
        if d.size:
            worst = max(worst, float(np.abs(d).max()))
    return worst


def form_max_abs(w: AForm, dom: ex.SampleDomain) -> float:
    pts = dom.sample()
    worst = 0.0
    for I, c in w.coeffs.items():
        v = np.asarray(evaluate(c, pts))
        if v.size:
            worst = max(worst, float(np.abs(v).max()))
    return worst
