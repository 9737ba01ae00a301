"""Regularisations of divisor algebroids.

Each construction replaces the singular frame on the base by an honest
foliation of an extended manifold (base times a vertical factor) together
with defining one-forms and, when one exists, a bundle morphism back to
the algebroid.  Verification is split into the five checkable clauses:
involutivity of the kernel, tangency along the locus, graphicality off
the locus, the morphism identities, and invariance under the structure
group of the vertical factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from itertools import combinations, permutations
from typing import Sequence

import numpy as np

from . import expr as ex
from .algebroid import (
    AForm,
    AlgebroidChart,
    Chart,
    Section,
    bracket,
    exterior_derivative,
    tangent,
    wedge,
)
from .errors import (
    InvalidSpec,
    NotBK,
    NonTransverse,
    RankMismatch,
    UnknownKind,
)
from .expr import Expr, const, differentiate, evaluate, substitute, var

__all__ = [
    "Regularisation",
    "CoorientationRecord",
    "graph_form",
    "trivial",
    "cutoff",
    "compact",
    "intrinsic",
    "elliptic",
    "selfcrossing",
    "foliation",
    "lift_form",
    "lift_section",
    "lift_vector",
    "canonical_lift_check",
    "verify_regularisation",
    "RegReport",
    "CentralLeaf",
    "central_leaf",
    "corrupt_psi",
]

TAU = 2 * math.pi


@dataclass(frozen=True)
class CoorientationRecord:
    """Orientation data carried by one divisor component of the foliation.

    For odd k the defining function orients the vertical leaf direction;
    for even k the transverse sign is all that survives.  Either way the
    recorded sign is the sign of f' at the root times the builder sign."""

    root: float
    k: int
    parity: str
    sign: int
    vertical_velocity_sign: int


@dataclass(frozen=True)
class Regularisation:
    alg: AlgebroidChart
    kind: str
    total: AlgebroidChart        # tangent algebroid of the extended chart
    forms: tuple                 # defining one-forms on `total`
    frame: tuple                 # spanning sections of the foliation
    psi: tuple                   # psi[j] = A-frame coefficients of the j-th frame field, or None
    vertical: tuple              # added coordinate names
    transverse: tuple            # base coordinates cut out by the divisor
    coorientation: tuple = ()
    notes: dict = field(default_factory=dict)

    def domain(self, count: int = 1000, seed: int = 42, margin: float = None,
               avoid_divisor: bool = True) -> ex.SampleDomain:
        chart = self.total.chart
        m = ex.SampleDomain.DEFAULT_MARGIN if margin is None else margin
        exclusions = []
        if avoid_divisor:
            exclusions.extend((e, m if deg == 1 else m * m)
                              for e, deg in self._locus_exprs())
        if self.kind == "elliptic":
            sq = ex.add(ex.pow_(var(self.vertical[0]), 2),
                        ex.pow_(var(self.vertical[1]), 2))
            exclusions.append((sq, 0.01))  # fibre never reaches the origin
        return ex.SampleDomain(
            coords=chart.coords,
            ranges={c: chart.range_of(c) for c in chart.coords},
            periodic=frozenset(chart.periodic),
            exclusions=tuple(exclusions),
            count=count,
            seed=seed,
        )

    def _locus_exprs(self):
        d = self.alg.divisor
        if d is None:
            return []
        if d.kind == "bk":
            return [(d.f, 1)]
        if d.kind == "elliptic":
            return [(ex.add(ex.pow_(var(d.x), 2), ex.pow_(var(d.y), 2)), 2)]
        if d.kind == "selfcrossing":
            return [(f, 1) for _z, _k, f, _r in d.components]
        return []

    def locus_fixings(self):
        """Coordinate pinnings that land samples on each divisor branch."""
        d = self.alg.divisor
        if d is None:
            return []
        if d.kind == "bk":
            return [({d.z: float(r)}, (d.z,)) for r in d.roots]
        if d.kind == "elliptic":
            return [({d.x: 0.0, d.y: 0.0}, (d.x, d.y))]
        if d.kind == "selfcrossing":
            return [({z: 0.0}, (z,)) for z, _k, _f, _r in d.components]
        return []


# builders ----------------------------------------------------------------


def graph_form(chart: Chart, f: Expr, k: int, s_name: str = "s", sign: int = 1,
               compact: bool = False, circumference: float = TAU,
               s_range: tuple = (-2.0, 2.0)):
    """Defining one-form d(f) + sign f^k d(s) on the extended chart.

    Works for any defining function of the chart coordinates; returns the
    tangent algebroid of the extension and the form.  Its kernel is an
    involutive graph-like distribution whatever f is, which is the point.
    """
    if k < 1:
        raise InvalidSpec("order k must be >= 1")
    if sign not in (1, -1):
        raise InvalidSpec("sign must be +1 or -1")
    periodic = {s_name: circumference} if compact else None
    ranges = None if compact else {s_name: s_range}
    total_chart = chart.extend([s_name], periodic=periodic, ranges=ranges)
    T = tangent(total_chart)
    coeffs = {}
    for i, c in enumerate(chart.coords):
        df = differentiate(f, c)
        if df != ex._ZERO:
            coeffs[(i,)] = df
    s_idx = total_chart.index(s_name)
    coeffs[(s_idx,)] = ex.mul(const(sign), ex.pow_(f, k))
    return T, AForm(T, 1, coeffs)


def _bk_data(A: AlgebroidChart):
    d = A.divisor
    if d is None or d.kind != "bk":
        raise NotBK("this construction needs a b^k divisor")
    return d


def _coorientations(d, sign: int) -> tuple:
    fp = differentiate(d.f, d.z)
    recs = []
    for r in d.roots:
        slope = float(evaluate(fp, {d.z: float(r)}))
        vvel = -sign * (1 if slope > 0 else -1)
        recs.append(CoorientationRecord(
            root=float(r), k=d.k, parity="odd" if d.k % 2 else "even",
            sign=-vvel, vertical_velocity_sign=vvel))
    return tuple(recs)


def trivial(A: AlgebroidChart, s_name: str = "s", sign: int = 1,
            compact_vertical: bool = False, circumference: float = TAU,
            s_range: tuple = (-2.0, 2.0)) -> Regularisation:
    """Product-type foliation of base x line (or circle): kernel of
    d(f) + sign f^k d(s), framed by f^k d_z - sign f' d_s and the
    remaining coordinate fields, with the identity morphism in frames."""
    d = _bk_data(A)
    T, theta = graph_form(A.chart, d.f, d.k, s_name=s_name, sign=sign,
                          compact=compact_vertical, circumference=circumference,
                          s_range=s_range)
    chart = T.chart
    zi = chart.index(d.z)
    si = chart.index(s_name)
    fp = differentiate(d.f, d.z)
    n = chart.dim
    x0 = [ex._ZERO] * n
    x0[zi] = ex.pow_(d.f, d.k)
    x0[si] = ex.mul(const(-sign), fp)
    frame = [Section(T, x0)]
    psi = [tuple(ex._ONE if a == 0 else ex._ZERO for a in range(A.rank))]
    a_idx = 1
    for i, c in enumerate(A.chart.coords):
        if c == d.z:
            continue
        row = [ex._ZERO] * n
        row[chart.index(c)] = ex._ONE
        frame.append(Section(T, row))
        psi.append(tuple(ex._ONE if a == a_idx else ex._ZERO for a in range(A.rank)))
        a_idx += 1
    return Regularisation(
        alg=A, kind="compact" if compact_vertical else "trivial", total=T,
        forms=(theta,), frame=tuple(frame), psi=tuple(psi),
        vertical=(s_name,), transverse=(d.z,),
        coorientation=_coorientations(d, sign),
        notes={"sign": sign})


def compact(A: AlgebroidChart, s_name: str = "s", sign: int = 1,
            circumference: float = TAU) -> Regularisation:
    return trivial(A, s_name=s_name, sign=sign, compact_vertical=True,
                   circumference=circumference)


def cutoff(A: AlgebroidChart, inner: float, outer: float,
           s_name: str = "s") -> Regularisation:
    """Foliation that agrees with the trivial one near the locus and is
    horizontal outside |z| >= outer: chi(z) dz + z^k ds with a smooth
    ramp chi that is 1 on |z| <= inner and 0 on |z| >= outer."""
    d = _bk_data(A)
    if d.f != var(d.z):
        raise InvalidSpec("cutoff profile needs the coordinate defining function")
    if not (0 < inner < outer):
        raise InvalidSpec("need 0 < inner < outer")
    z = var(d.z)
    lo, hi = inner * inner, outer * outer
    ramp = ex.div(ex.add(const(Fraction(hi)), ex.neg(ex.pow_(z, 2))),
                  const(Fraction(hi - lo)))
    chi = ex.SStep(0, ramp)
    total_chart = A.chart.extend([s_name], ranges={s_name: (-2.0, 2.0)})
    T = tangent(total_chart)
    zi = total_chart.index(d.z)
    si = total_chart.index(s_name)
    theta = AForm(T, 1, {(zi,): chi, (si,): ex.pow_(z, d.k)})
    n = total_chart.dim
    x0 = [ex._ZERO] * n
    x0[zi] = ex.pow_(z, d.k)
    x0[si] = ex.neg(chi)
    frame = [Section(T, x0)]
    psi = [tuple(ex._ONE if a == 0 else ex._ZERO for a in range(A.rank))]
    a_idx = 1
    for c in A.chart.coords:
        if c == d.z:
            continue
        row = [ex._ZERO] * n
        row[total_chart.index(c)] = ex._ONE
        frame.append(Section(T, row))
        psi.append(tuple(ex._ONE if a == a_idx else ex._ZERO for a in range(A.rank)))
        a_idx += 1
    return Regularisation(
        alg=A, kind="cutoff", total=T, forms=(theta,), frame=tuple(frame),
        psi=tuple(psi), vertical=(s_name,), transverse=(d.z,),
        coorientation=_coorientations(d, 1),
        notes={"inner": inner, "outer": outer})


def intrinsic(A: AlgebroidChart, t_name: str = "t",
              t_range: tuple = (0.3, 3.0)) -> Regularisation:
    """Scaling-invariant foliation of base x (punctured line), kernel of
    d(t f).  For k = 1 the frame maps isomorphically onto the algebroid;
    for k >= 2 no smooth morphism exists and psi is left empty."""
    d = _bk_data(A)
    total_chart = A.chart.extend([t_name], ranges={t_name: t_range})
    T = tangent(total_chart)
    zi = total_chart.index(d.z)
    ti = total_chart.index(t_name)
    t = var(t_name)
    fp = differentiate(d.f, d.z)
    coeffs = {(zi,): ex.mul(t, fp), (ti,): d.f}
    theta = AForm(T, 1, coeffs)
    n = total_chart.dim
    x0 = [ex._ZERO] * n
    x0[zi] = d.f
    x0[ti] = ex.mul(const(-1), t, fp)
    frame = [Section(T, x0)]
    a_idx = 1
    rows = [None]
    for c in A.chart.coords:
        if c == d.z:
            continue
        row = [ex._ZERO] * n
        row[total_chart.index(c)] = ex._ONE
        frame.append(Section(T, row))
        rows.append(a_idx)
        a_idx += 1
    notes = {}
    if d.k == 1:
        psi = [tuple(ex._ONE if a == (0 if j == 0 else rows[j]) else ex._ZERO
                     for a in range(A.rank)) for j in range(len(frame))]
        psi = tuple(psi)
    else:
        psi = None
        notes["degenerate_lift"] = ("anchors differ by f^(1-k), singular on "
                                    "the locus; no smooth frame morphism")
    return Regularisation(
        alg=A, kind="intrinsic", total=T, forms=(theta,), frame=tuple(frame),
        psi=psi, vertical=(t_name,), transverse=(d.z,),
        coorientation=_coorientations(d, 1), notes=notes)


def elliptic(A: AlgebroidChart, w_names=("w1", "w2"),
             w_range: tuple = (-1.5, 1.5)) -> Regularisation:
    """Complex-line version: on base x (plane minus origin) the kernel of
    d Re(w sigma), d Im(w sigma) with sigma = x + i y, framed by the
    radial and rotational lifts."""
    d = A.divisor
    if d is None or d.kind != "elliptic":
        raise UnknownKind("elliptic regularisation needs an elliptic divisor")
    w1n, w2n = w_names
    total_chart = A.chart.extend([w1n, w2n], ranges={w1n: w_range, w2n: w_range})
    T = tangent(total_chart)
    x, y = var(d.x), var(d.y)
    w1, w2 = var(w1n), var(w2n)
    ix, iy = total_chart.index(d.x), total_chart.index(d.y)
    i1, i2 = total_chart.index(w1n), total_chart.index(w2n)
    th_re = AForm(T, 1, {(ix,): w1, (iy,): ex.neg(w2), (i1,): x, (i2,): ex.neg(y)})
    th_im = AForm(T, 1, {(ix,): w2, (iy,): w1, (i1,): y, (i2,): x})
    n = total_chart.dim
    er = [ex._ZERO] * n
    er[ix], er[iy] = x, y
    er[i1], er[i2] = ex.neg(w1), ex.neg(w2)
    eth = [ex._ZERO] * n
    eth[ix], eth[iy] = ex.neg(y), x
    eth[i1], eth[i2] = w2, ex.neg(w1)
    frame = [Section(T, er), Section(T, eth)]
    psi = [tuple(ex._ONE if a == 0 else ex._ZERO for a in range(A.rank)),
           tuple(ex._ONE if a == 1 else ex._ZERO for a in range(A.rank))]
    a_idx = 2
    for c in A.chart.coords:
        if c in (d.x, d.y):
            continue
        row = [ex._ZERO] * n
        row[total_chart.index(c)] = ex._ONE
        frame.append(Section(T, row))
        psi.append(tuple(ex._ONE if a == a_idx else ex._ZERO for a in range(A.rank)))
        a_idx += 1
    return Regularisation(
        alg=A, kind="elliptic", total=T, forms=(th_re, th_im),
        frame=tuple(frame), psi=tuple(psi), vertical=(w1n, w2n),
        transverse=(d.x, d.y), coorientation=(), notes={})


def selfcrossing(A: AlgebroidChart, s_names: Sequence[str] = None) -> Regularisation:
    """One vertical circle-less factor per crossing branch; everything is
    a product of the trivial construction."""
    d = A.divisor
    if d is None or d.kind != "selfcrossing":
        raise UnknownKind("needs a self-crossing divisor")
    comps = d.components
    names = tuple(s_names or (f"s{i+1}" for i in range(len(comps))))
    if len(names) != len(comps):
        raise InvalidSpec("need one vertical name per branch")
    total_chart = A.chart.extend(names, ranges={nm: (-2.0, 2.0) for nm in names})
    T = tangent(total_chart)
    n = total_chart.dim
    forms = []
    frame = []
    psi = []
    for j, ((z, k, f, _roots), nm) in enumerate(zip(comps, names)):
        zi, si = total_chart.index(z), total_chart.index(nm)
        fp = differentiate(f, z)
        forms.append(AForm(T, 1, {(zi,): fp, (si,): ex.pow_(f, k)}))
        x = [ex._ZERO] * n
        x[zi] = ex.pow_(f, k)
        x[si] = ex.neg(fp)
        frame.append(Section(T, x))
        psi.append(tuple(ex._ONE if a == j else ex._ZERO for a in range(A.rank)))
    a_idx = len(comps)
    branch_coords = {z for z, _k, _f, _r in comps}
    for c in A.chart.coords:
        if c in branch_coords:
            continue
        row = [ex._ZERO] * n
        row[total_chart.index(c)] = ex._ONE
        frame.append(Section(T, row))
        psi.append(tuple(ex._ONE if a == a_idx else ex._ZERO for a in range(A.rank)))
        a_idx += 1
    return Regularisation(
        alg=A, kind="selfcrossing", total=T, forms=tuple(forms),
        frame=tuple(frame), psi=tuple(psi), vertical=names,
        transverse=tuple(z for z, _k, _f, _r in comps),
        coorientation=tuple(
            CoorientationRecord(root=0.0, k=k, parity="odd" if k % 2 else "even",
                                sign=1, vertical_velocity_sign=-1)
            for _z, k, _f, _r in comps),
        notes={})


# lifts -------------------------------------------------------------------


def foliation(reg: Regularisation) -> AlgebroidChart:
    """The foliation as an algebroid: the frame fields anchor into the
    extended tangent bundle and commute for every bundled construction."""
    T = reg.total
    rows = tuple(tuple(s.coeffs) for s in reg.frame)
    names = tuple(f"X{j}" for j in range(len(reg.frame)))
    return AlgebroidChart(
        chart=T.chart, kind="foliation", frame_names=names,
        coframe_names=tuple(n + "*" for n in names), anchor=rows,
        structure={}, divisor=reg.alg.divisor)


def _psi_inverse(reg: Regularisation):
    if reg.psi is None:
        raise InvalidSpec("this regularisation carries no frame morphism")
    n = len(reg.psi)
    if n != reg.alg.rank:
        raise RankMismatch("frame morphism is not square")
    M = []
    for row in reg.psi:
        out = []
        for c in row:
            cc = ex.canonical(c)
            if not isinstance(cc, ex.Const):
                raise InvalidSpec("section lifting needs constant morphism entries")
            out.append(cc.value)
        M.append(out)
    # exact inverse by Gauss-Jordan
    aug = [row + [Fraction(int(i == j)) for j in range(n)] for i, row in enumerate(M)]
    for col in range(n):
        piv = next((r for r in range(col, n) if aug[r][col] != 0), None)
        if piv is None:
            raise InvalidSpec("frame morphism is singular")
        aug[col], aug[piv] = aug[piv], aug[col]
        scale = aug[col][col]
        aug[col] = [v / scale for v in aug[col]]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                fct = aug[r][col]
                aug[r] = [v - fct * w for v, w in zip(aug[r], aug[col])]
    return [[aug[i][n + j] for j in range(n)] for i in range(n)]


def lift_section(reg: Regularisation, X: Section) -> Section:
    """Pull an algebroid section through the frame morphism."""
    inv = _psi_inverse(reg)
    F = foliation(reg)
    n = len(reg.frame)
    out = []
    for j in range(n):
        total = ex._ZERO
        for a in range(n):
            # c'_j = sum_a (psi^T)^{-1}[j][a] c_a = inv[a][j]-weighted
            total = ex.add(total, ex.mul(const(inv[a][j]), X.coeffs[a]))
        out.append(total)
    return Section(F, out)


def lift_vector(reg: Regularisation, X: Section) -> Section:
    """Same lift, expressed as a coordinate vector field on the extension."""
    lifted = lift_section(reg, X)
    n = reg.total.chart.dim
    comps = [ex._ZERO] * n
    for j, c in enumerate(lifted.coeffs):
        for i, a in enumerate(reg.frame[j].coeffs):
            comps[i] = ex.add(comps[i], ex.mul(c, a))
    return Section(reg.total, comps)


def lift_form(reg: Regularisation, w: AForm) -> AForm:
    """Pull an algebroid form back through the frame morphism (degree-wise
    minors of psi)."""
    if reg.psi is None:
        raise InvalidSpec("this regularisation carries no frame morphism")
    F = foliation(reg)
    p = w.degree
    nf = len(reg.frame)
    if p == 0:
        return AForm(F, 0, dict(w.coeffs))
    out = {}
    for J in _increasing(nf, p):
        total = ex._ZERO
        for I, c in w.coeffs.items():
            minor = _expr_det([[reg.psi[j][a] for a in I] for j in J])
            if minor != ex._ZERO:
                total = ex.add(total, ex.mul(c, minor))
        if total != ex._ZERO:
            out[J] = total
    return AForm(F, p, out)


def _increasing(n, p):
    return combinations(range(n), p)


def _expr_det(M) -> Expr:
    n = len(M)
    if n == 1:
        return M[0][0]
    total = ex._ZERO
    for perm in permutations(range(n)):
        sgn = 1
        for i in range(n):
            for j in range(i + 1, n):
                if perm[i] > perm[j]:
                    sgn = -sgn
        term = const(sgn)
        for i in range(n):
            term = ex.mul(term, M[i][perm[i]])
        total = ex.add(total, term)
    return total


def canonical_lift_check(reg: Regularisation, alpha: AForm, count: int = 400,
                         seed: int = 3) -> float:
    """Max residual of lift(d alpha) - d(lift alpha) over samples."""
    from .algebroid import form_residual

    lhs = lift_form(reg, exterior_derivative(alpha))
    rhs = exterior_derivative(lift_form(reg, alpha))
    return form_residual(lhs, rhs, reg.domain(count=count, seed=seed))


# verification ------------------------------------------------------------


@dataclass(frozen=True)
class RegReport:
    involutivity_residual: float
    tangency_residual: float
    graphicality_min: float
    morphism_residual: float        # nan when no morphism is claimed
    invariance_residual: float
    invariance_probes: dict
    samples: int
    passed: bool


def verify_regularisation(reg: Regularisation, count: int = 1000, seed: int = 42,
                          margin: float = 0.05, tol: float = 1e-9,
                          graph_floor: float = 1e-6) -> RegReport:
    """Run the five clauses at sampled points and aggregate."""
    inv = _involutivity_residual(reg, count, seed)
    tan = _tangency_residual(reg, count // 4, seed)
    graph = _graphicality_min(reg, count, seed, margin)
    morph = _morphism_residual(reg, count, seed) if reg.psi is not None else math.nan
    probes = _invariance_probes(reg, count // 2, seed)
    inv_res = max(probes.values()) if probes else 0.0
    ok = (inv <= tol and tan <= tol and graph > graph_floor and inv_res <= tol
          and (math.isnan(morph) or morph <= tol))
    return RegReport(inv, tan, graph, morph, inv_res, probes, count, ok)


def _involutivity_residual(reg: Regularisation, count, seed) -> float:
    target_degree = 2 + len(reg.forms)
    if target_degree > reg.total.rank:
        return 0.0  # the product is a form of too high a degree
    dom = reg.domain(count=count, seed=seed, avoid_divisor=False)
    worst = 0.0
    pts = dom.sample()
    n = len(next(iter(pts.values())))
    for th in reg.forms:
        w = exterior_derivative(th)
        for other in reg.forms:
            w = wedge(w, other)
        for _I, c in w.coeffs.items():
            v = np.broadcast_to(np.asarray(evaluate(c, pts)), (n,))
            worst = max(worst, float(np.abs(v).max()))
    return worst


def _tangency_residual(reg: Regularisation, count, seed) -> float:
    dom = reg.domain(count=count, seed=seed, avoid_divisor=False)
    worst = 0.0
    for fixed, trans in reg.locus_fixings():
        pts = dom.sample(count=count, fixed=fixed)
        n = len(next(iter(pts.values())))
        for X in reg.frame:
            for cname in trans:
                idx = reg.total.chart.index(cname)
                v = np.broadcast_to(np.asarray(evaluate(X.coeffs[idx], pts)), (n,))
                worst = max(worst, float(np.abs(v).max()))
    return worst


def _graphicality_min(reg: Regularisation, count, seed, margin) -> float:
    dom = reg.domain(count=count, seed=seed, margin=margin)
    pts = dom.sample()
    n = len(next(iter(pts.values())))
    m = len(reg.forms)
    block = np.zeros((n, m, m))
    for i, th in enumerate(reg.forms):
        for j, vname in enumerate(reg.vertical[:m]):
            idx = reg.total.chart.index(vname)
            c = th.get((idx,))
            block[:, i, j] = np.broadcast_to(np.asarray(evaluate(c, pts)), (n,))
    dets = np.abs(np.linalg.det(block))
    return float(dets.min()) if n else 0.0


def _morphism_residual(reg: Regularisation, count, seed) -> float:
    """Anchor and bracket compatibility of the frame morphism, sampled."""
    A = reg.alg
    T = reg.total
    dom = reg.domain(count=count, seed=seed, avoid_divisor=False)
    pts = dom.sample()
    n_pts = len(next(iter(pts.values())))
    nf = len(reg.frame)
    dim = T.chart.dim
    base_idx = [T.chart.index(c) for c in A.chart.coords]

    def arr(e):
        return np.broadcast_to(np.asarray(evaluate(e, pts), dtype=float), (n_pts,))

    Fv = np.zeros((n_pts, nf, dim))
    for j, X in enumerate(reg.frame):
        for i, c in enumerate(X.coeffs):
            if c != ex._ZERO:
                Fv[:, j, i] = arr(c)
    Pv = np.zeros((n_pts, nf, A.rank))
    for j, row in enumerate(reg.psi):
        for a, c in enumerate(row):
            if c != ex._ZERO:
                Pv[:, j, a] = arr(c)
    worst = 0.0
    # anchors first: rho_A(psi X_j) against the base part of X_j
    anchor = np.zeros((n_pts, A.rank, len(base_idx)))
    for a in range(A.rank):
        for i in range(len(base_idx)):
            c = A.anchor[a][i]
            if c != ex._ZERO:
                anchor[:, a, i] = arr(c)
    for j in range(nf):
        pushed = np.einsum("pa,pai->pi", Pv[:, j, :], anchor)
        base = Fv[:, j, :][:, base_idx]
        worst = max(worst, float(np.abs(pushed - base).max()))
    # brackets: psi of [X_i, X_j] against [psi X_i, psi X_j]
    psi_secs = [Section(A, list(row)) for row in reg.psi]
    for i in range(nf):
        for j in range(i + 1, nf):
            B = bracket(reg.frame[i], reg.frame[j])
            Bv = np.zeros((n_pts, dim))
            for q, c in enumerate(B.coeffs):
                if c != ex._ZERO:
                    Bv[:, q] = arr(c)
            R = bracket(psi_secs[i], psi_secs[j])
            Rv = np.zeros((n_pts, A.rank))
            for a, c in enumerate(R.coeffs):
                if c != ex._ZERO:
                    Rv[:, a] = arr(c)
            for p in range(n_pts):
                coeffs, _res, _rank, _sv = np.linalg.lstsq(
                    Fv[p].T, Bv[p], rcond=None)
                lhs = Pv[p].T @ coeffs
                worst = max(worst, float(np.abs(lhs - Rv[p]).max()))
    return worst


def _invariance_probes(reg: Regularisation, count, seed) -> dict:
    probes = {}
    dom = reg.domain(count=count, seed=seed, avoid_divisor=False)
    pts = dom.sample()
    n = len(next(iter(pts.values())))

    def max_abs(e):
        return float(np.abs(np.broadcast_to(
            np.asarray(evaluate(e, pts)), (n,))).max())

    if reg.kind in ("trivial", "compact", "cutoff", "selfcrossing"):
        worst = 0.0
        shift = {nm: ex.add(var(nm), const(Fraction(7, 10))) for nm in reg.vertical}
        for th in reg.forms:
            for _I, c in th.coeffs.items():
                worst = max(worst, max_abs(ex.add(substitute(c, shift), ex.neg(c))))
        for X in reg.frame:
            for c in X.coeffs:
                worst = max(worst, max_abs(ex.add(substitute(c, shift), ex.neg(c))))
        probes["vertical_translation"] = worst
    elif reg.kind == "intrinsic":
        tname = reg.vertical[0]
        lam = const(2)
        ti = reg.total.chart.index(tname)
        th = reg.forms[0]
        worst = 0.0
        for I, c in th.coeffs.items():
            scaled = substitute(c, {tname: ex.mul(lam, var(tname))})
            if I == (ti,):
                scaled = ex.mul(lam, scaled)
            target = ex.mul(lam, c)
            worst = max(worst, max_abs(ex.add(scaled, ex.neg(target))))
        probes["scaling"] = worst
    elif reg.kind == "elliptic":
        w1n, w2n = reg.vertical
        c0, s0 = math.cos(0.7), math.sin(0.7)
        cc, ss = const(Fraction(c0)), const(Fraction(s0))
        rot = {w1n: ex.add(ex.mul(cc, var(w1n)), ex.neg(ex.mul(ss, var(w2n)))),
               w2n: ex.add(ex.mul(ss, var(w1n)), ex.mul(cc, var(w2n)))}
        i1 = reg.total.chart.index(w1n)
        i2 = reg.total.chart.index(w2n)
        th1, th2 = reg.forms

        def pulled(th):
            out = {}
            for I, c in th.coeffs.items():
                cs = substitute(c, rot)
                idx = I[0]
                if idx == i1:
                    # dw1 o rot = c dw1 - s dw2
                    out[(i1,)] = ex.add(out.get((i1,), ex._ZERO), ex.mul(cs, cc))
                    out[(i2,)] = ex.add(out.get((i2,), ex._ZERO),
                                        ex.neg(ex.mul(cs, ss)))
                elif idx == i2:
                    out[(i1,)] = ex.add(out.get((i1,), ex._ZERO), ex.mul(cs, ss))
                    out[(i2,)] = ex.add(out.get((i2,), ex._ZERO), ex.mul(cs, cc))
                else:
                    out[I] = ex.add(out.get(I, ex._ZERO), cs)
            return AForm(reg.total, 1, out)

        p1, p2 = pulled(th1), pulled(th2)
        # pullback rotates the pair of forms by the same angle
        e11 = (cc * th1) + (-(ss * th2))
        e22 = (ss * th1) + (cc * th2)
        worst = 0.0
        for got, want in ((p1, e11), (p2, e22)):
            diff = got - want
            for _I, c in diff.coeffs.items():
                worst = max(worst, max_abs(c))
        probes["fibre_rotation"] = worst
    return probes


def corrupt_psi(reg: Regularisation, entry: tuple = (0, 0)) -> Regularisation:
    """Flip the sign of one morphism entry; verification must then fail."""
    if reg.psi is None:
        raise InvalidSpec("nothing to corrupt")
    j, a = entry
    rows = [list(r) for r in reg.psi]
    if rows[j][a] == ex._ZERO:
        rows[j][a] = ex._ONE
    else:
        rows[j][a] = ex.neg(rows[j][a])
    return replace(reg, psi=tuple(tuple(r) for r in rows))


# the leaf through the locus ----------------------------------------------


@dataclass(frozen=True)
class CentralLeaf:
    reg: Regularisation
    alg: AlgebroidChart   # tangent algebroid of the leaf chart
    root: float

    def restrict(self, X: Section, tol: float = 1e-9) -> Section:
        """Restrict a vector field on the extension to the leaf; its
        transverse component must vanish there."""
        d = self.reg.alg.divisor
        chart = self.reg.total.chart
        zi = chart.index(d.z)
        subs = {d.z: _root_expr(self.root)}
        zc = ex.canonical(substitute(X.coeffs[zi], subs))
        if not _is_small(zc, self.alg.chart, tol):
            raise NonTransverse("field is not tangent to the central leaf")
        comps = [ex.canonical(substitute(c, subs))
                 for i, c in enumerate(X.coeffs) if i != zi]
        return Section(self.alg, comps)


def _root_expr(root: float) -> Expr:
    """Exact expression for a root, recognising half-integer pi multiples."""
    half = root / (math.pi / 2)
    if abs(half - round(half)) < 1e-12:
        n = int(round(half))
        if n == 0:
            return ex._ZERO
        return ex.mul(const(Fraction(n, 2)), ex.Pi())
    return const(Fraction(root))


def _is_small(e: Expr, chart: Chart, tol: float) -> bool:
    if e == ex._ZERO:
        return True
    dom = ex.SampleDomain(coords=chart.coords,
                          ranges={c: chart.range_of(c) for c in chart.coords},
                          periodic=frozenset(chart.periodic), count=64, seed=5)
    v = np.asarray(evaluate(e, dom.sample()))
    return bool(np.abs(v).max() <= tol)


def central_leaf(reg: Regularisation, root: float = None) -> CentralLeaf:
    """The compact leaf sitting over a divisor root: the locus times the
    vertical factor, as a tangent algebroid ready for flows."""
    d = reg.alg.divisor
    if d is None or d.kind != "bk":
        raise NotBK("central leaves are built for b^k divisors")
    if root is None:
        root = float(d.roots[0])
    leaf_chart = reg.total.chart.drop(d.z)
    return CentralLeaf(reg, tangent(leaf_chart), float(root))
