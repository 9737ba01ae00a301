"""Contact structures on divisor algebroids and what they induce on the
locus: symplectisations, dividing sets, the cosymplectic-type pair on the
cylinder over Z, Reeb restrictions, model maps and the polar blow-up."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import expr as ex
from .algebroid import (
    AForm,
    AlgebroidChart,
    Chart,
    Section,
    bk,
    exterior_derivative,
    form_residual,
    interior,
    pullback_product,
    restrict_to_locus,
    tangent,
    wedge,
)
from .errors import (
    InvalidSpec,
    NonTransverse,
    NotBK,
    RankMismatch,
    UnsupportedRank,
)
from .expr import Expr, const, differentiate, evaluate, substitute, var

__all__ = [
    "Symplectisation",
    "symplectise",
    "DividingSet",
    "dividing_set",
    "InducedData",
    "induced_on_Z",
    "reeb_on_locus",
    "reeb_dividing_check",
    "CosymplecticPair",
    "cosymplectic_pair",
    "verify_cosymplectic",
    "lie_derivative",
    "invariance_probe",
    "normal_form_map_check",
    "NormalFormMap",
    "blowup_pullback",
    "BlowupData",
]


@dataclass(frozen=True)
class Symplectisation:
    total: AlgebroidChart
    lam: AForm            # e^t alpha
    omega: AForm          # d(e^t alpha)
    t_name: str


def symplectise(A: AlgebroidChart, alpha: AForm, t_name: str = "t",
                t_range: tuple = (-0.7, 0.7)) -> Symplectisation:
    """Cylinder over a contact structure with its exact symplectic form."""
    if alpha.degree != 1:
        raise RankMismatch("symplectisation starts from a 1-form")
    total = pullback_product(A, [t_name], ranges={t_name: t_range})
    et = ex.exp(var(t_name))
    lam = et * AForm(total, 1, dict(alpha.coeffs))
    return Symplectisation(total, lam, exterior_derivative(lam), t_name)


# dividing sets -----------------------------------------------------------


@dataclass(frozen=True)
class DividingSet:
    chart: Chart
    points: tuple          # refined crossing points, as coordinate dicts
    max_residual: float    # |u| after refinement

    def values(self, coord: str) -> np.ndarray:
        return np.array(sorted(p[coord] for p in self.points))

    def clusters(self, coord: str, tol: float = 1e-6) -> tuple:
        """Distinct values of one coordinate over the crossing set."""
        vals = self.values(coord)
        out: list = []
        for v in vals:
            if not out or abs(v - out[-1]) > tol:
                out.append(float(v))
        return tuple(out)


def _bisect(f, lo, hi, flo, tol):
    # plain bisection; f is scalar and continuous on [lo, hi]
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(hi - lo) < tol:
            return mid
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def dividing_set(chart: Chart, u: Expr, n_grid: int = 256,
                 lines: int = 12, tol: float = 1e-12) -> DividingSet:
    """Zero set of u, located by sign changes along axis-parallel grid
    lines and refined by bisection."""
    coords = chart.coords
    points = []
    worst = 0.0
    for axis in coords:
        if axis not in u._vars:
            continue
        others = [c for c in coords if c != axis]
        lo, hi = chart.range_of(axis)
        wrap = axis in chart.periodic
        grid = np.linspace(lo, hi, n_grid, endpoint=not wrap)
        other_grids = []
        for c in others:
            clo, chi = chart.range_of(c)
            cn = max(2, lines)
            other_grids.append(np.linspace(clo, chi, cn, endpoint=c not in chart.periodic))
        for combo in _product_rows(other_grids):
            fixed = dict(zip(others, combo))

            def f(x):
                return float(evaluate(u, {**fixed, axis: x}))

            vals = np.array([f(x) for x in grid])
            pairs = list(zip(grid[:-1], grid[1:], vals[:-1], vals[1:]))
            if wrap:
                pairs.append((grid[-1], hi, vals[-1], vals[0]))
            for a, b, fa, fb in pairs:
                if fa == 0.0:
                    root = a
                elif fa * fb < 0:
                    root = _bisect(f, a, b, fa, tol)
                else:
                    continue
                pt = {**fixed, axis: float(root)}
                points.append(pt)
                worst = max(worst, abs(f(root)))
    return DividingSet(chart, tuple(points), worst)


def _product_rows(grids):
    if not grids:
        yield ()
        return
    head, *rest = grids
    for v in head:
        for tail in _product_rows(rest):
            yield (float(v),) + tail


# induced structure on the locus ------------------------------------------


@dataclass(frozen=True)
class InducedData:
    AZ: AlgebroidChart
    u: Expr
    beta: AForm
    omega: AForm          # d(u^-1 beta), defined off the dividing set
    tau: AForm            # d(beta) + u^-1 beta ^ du


def induced_on_Z(A: AlgebroidChart, alpha: AForm, root: float = None) -> InducedData:
    """Split a contact form along the locus and build the leafwise
    symplectic data on the complement of the dividing set."""
    AZ, u, beta = restrict_to_locus(A, alpha, root)
    uinv = ex.pow_(u, -1)
    omega = exterior_derivative(uinv * beta)
    du = exterior_derivative(AForm(AZ, 0, {(): u}))
    tau = exterior_derivative(beta) + (uinv * wedge(beta, du))
    return InducedData(AZ, u, beta, omega, tau)


def reeb_on_locus(A: AlgebroidChart, R: Section, root: float = None) -> Section:
    """Push the anchor image of a Reeb section down to the locus chart."""
    d = A.divisor
    if d is None or d.kind != "bk":
        raise NotBK("locus restriction needs a b^k divisor")
    if root is None:
        root = float(d.roots[0])
    vec = R.anchor_field()
    chart = A.chart
    zi = chart.index(d.z)
    from .regularise import _root_expr

    subs = {d.z: _root_expr(root)}
    zc = ex.canonical(substitute(vec[zi], subs))
    AZ = tangent(chart.drop(d.z))
    if not _small_on(zc, AZ.chart):
        raise NonTransverse("Reeb section is not tangent to the locus")
    comps = [ex.canonical(substitute(c, subs)) for i, c in enumerate(vec) if i != zi]
    return Section(AZ, comps)


def _small_on(e: Expr, chart: Chart, tol: float = 1e-9) -> bool:
    if e == ex._ZERO:
        return True
    dom = ex.SampleDomain(coords=chart.coords,
                          ranges={c: chart.range_of(c) for c in chart.coords},
                          periodic=frozenset(chart.periodic), count=64, seed=3)
    return bool(np.abs(np.asarray(evaluate(e, dom.sample()))).max() <= tol)


def reeb_dividing_check(data: InducedData, R_Z: Section, div: DividingSet = None,
                        count: int = 600, seed: int = 19,
                        margin: float = 0.05) -> dict:
    """Three compatibility residuals between the locus Reeb field and the
    dividing-set geometry: tangency of R_Z to the dividing set, the
    contraction identity i_{R_Z} omega = d(-1/u) off it, and flow
    invariance of u itself."""
    AZ, u = data.AZ, data.u
    chart = AZ.chart
    if div is None:
        div = dividing_set(chart, u)
    du = exterior_derivative(AForm(AZ, 0, {(): u}))
    du_R = interior(R_Z, du).get(())
    on_gamma = 0.0
    for pt in div.points:
        on_gamma = max(on_gamma, abs(float(evaluate(du_R, pt))))
    lhs = interior(R_Z, data.omega)
    rhs = exterior_derivative(AForm(AZ, 0, {(): ex.neg(ex.pow_(u, -1))}))
    dom_off = ex.SampleDomain(
        coords=chart.coords,
        ranges={c: chart.range_of(c) for c in chart.coords},
        periodic=frozenset(chart.periodic),
        exclusions=((u, margin),), count=count, seed=seed)
    contraction = form_residual(lhs, rhs, dom_off)
    dom_all = ex.SampleDomain(
        coords=chart.coords,
        ranges={c: chart.range_of(c) for c in chart.coords},
        periodic=frozenset(chart.periodic), count=count, seed=seed)
    vals = np.asarray(evaluate(du_R, dom_all.sample()))
    invariance = float(np.abs(np.broadcast_to(vals, (count,))).max())
    return {"tangency_on_dividing_set": on_gamma,
            "contraction_identity": contraction,
            "u_invariance": invariance}


# the cosymplectic-type pair on the cylinder ------------------------------


@dataclass(frozen=True)
class CosymplecticPair:
    total: AlgebroidChart   # tangent of (cylinder over Z)
    theta: AForm            # d(e^t u)
    eta: AForm              # d(e^t beta)
    u: Expr
    beta_lift: AForm
    t_name: str


def cosymplectic_pair(data: InducedData, t_name: str = "t",
                      t_range: tuple = (-0.7, 0.7)) -> CosymplecticPair:
    total = pullback_product(data.AZ, [t_name], ranges={t_name: t_range})
    et = ex.exp(var(t_name))
    u_total = AForm(total, 0, {(): ex.mul(et, data.u)})
    beta_lift = AForm(total, 1, dict(data.beta.coeffs))
    theta = exterior_derivative(u_total)
    eta = exterior_derivative(et * beta_lift)
    return CosymplecticPair(total, theta, eta, data.u, beta_lift, t_name)


def verify_cosymplectic(data: InducedData, pair: CosymplecticPair = None,
                        count: int = 700, seed: int = 8,
                        margin: float = 0.08) -> dict:
    """The three displayed identities of the pair, each computed twice:
    once from its defining exterior derivative and once from the spelled
    out right-hand side, then compared at sampled points.

    (1) d(e^t u) against e^t du + e^t u dt
    (2) d(e^t beta) against e^t dt ^ beta + e^t d(beta)
    (3) u eta - theta ^ beta against e^t u^2 omega with omega = d(beta/u)
    """
    if pair is None:
        pair = cosymplectic_pair(data)
    total = pair.total
    chart = total.chart
    t = var(pair.t_name)
    et = ex.exp(t)
    ti = chart.index(pair.t_name)
    dom = ex.SampleDomain(
        coords=chart.coords,
        ranges={c: chart.range_of(c) for c in chart.coords},
        periodic=frozenset(chart.periodic),
        exclusions=((data.u, margin),), count=count, seed=seed)

    du_total = AForm(total, 1, {
        (i,): differentiate(data.u, c)
        for i, c in enumerate(chart.coords)
        if differentiate(data.u, c) != ex._ZERO})
    dt_form = AForm(total, 1, {(ti,): ex._ONE})
    rhs1 = (et * du_total) + (ex.mul(et, data.u) * dt_form)
    id1 = form_residual(pair.theta, rhs1, dom)

    dbeta_lift = AForm(total, 2, dict(exterior_derivative(data.beta).coeffs))
    rhs2 = (et * wedge(dt_form, pair.beta_lift)) + (et * dbeta_lift)
    id2 = form_residual(pair.eta, rhs2, dom)

    lhs3 = (data.u * pair.eta) - wedge(pair.theta, pair.beta_lift)
    omega_lift = AForm(total, 2, dict(data.omega.coeffs))
    rhs3 = ex.mul(et, ex.pow_(data.u, 2)) * omega_lift
    id3 = form_residual(lhs3, rhs3, dom)
    return {"exact_theta": id1, "exact_eta": id2, "pair_identity": id3}


# invariance and model maps -----------------------------------------------


def lie_derivative(X: Section, w: AForm) -> AForm:
    """Cartan formula d i_X + i_X d on algebroid forms."""
    return exterior_derivative(interior(X, w)) + interior(X, exterior_derivative(w))


def invariance_probe(A: AlgebroidChart, alpha: AForm, X: Section,
                     count: int = 500, seed: int = 21) -> float:
    """Max sampled coefficient of the Lie derivative of alpha along X."""
    from .algebroid import domain_for, form_max_abs

    lw = lie_derivative(X, alpha)
    return form_max_abs(lw, domain_for(A, count=count, seed=seed))


@dataclass(frozen=True)
class NormalFormMap:
    k: int
    lam: float
    map_text: str
    coefficient: float    # the pulled back theta0 lands on this multiple of ds
    residual: float


def normal_form_map_check(k: int, count: int = 300, seed: int = 12) -> NormalFormMap:
    """Pull dz/z^k back under the model change of coordinates onto the
    exponential or radial profile and compare with ds.

    k = 1 uses z = exp(s); k = 2, 3 use z = lam * s^(1/(1-k)) with the
    recorded lam.  Orders above 3 would need radicals the expression
    grammar cannot spell, so they are refused."""
    s = var("s")
    if k == 1:
        z_of_s = ex.exp(s)
        lam = 1.0
        expected = 1.0
    elif k == 2:
        lam = -1.0
        z_of_s = ex.mul(const(-1), ex.pow_(s, -1))
        expected = 1.0
    elif k == 3:
        lam = 1.0 / math.sqrt(2.0)
        z_of_s = ex.mul(ex.sqrt(const(Fraction(1, 2))), ex.pow_(ex.sqrt(s), -1))
        expected = -1.0
    else:
        raise UnsupportedRank(
            "no representable radial profile beyond order 3 "
            "(the grammar has square roots only)")
    dz = differentiate(z_of_s, "s")
    pulled = ex.mul(dz, ex.pow_(z_of_s, -k))
    dom = ex.SampleDomain(coords=("s",), ranges={"s": (0.25, 3.0)},
                          count=count, seed=seed)
    rep = ex.numeric_equiv(pulled, const(Fraction(expected)), dom, tol=1e-10)
    return NormalFormMap(k, lam, f"z = {z_of_s!r}", expected, rep.max_abs)


@dataclass(frozen=True)
class BlowupData:
    b_alg: AlgebroidChart
    r_name: str
    angle_name: str
    residual_radial: float
    residual_angular: float


def blowup_pullback(A: AlgebroidChart, r_name: str = "r", angle_name: str = "th",
                    count: int = 500, seed: int = 6) -> BlowupData:
    """Polar coordinates turn the elliptic coframe into the b coframe:
    (x dx + y dy)/(x^2+y^2) becomes dr/r and (x dy - y dx)/(x^2+y^2)
    becomes the angle form.  Both residuals are sampled off r = 0."""
    d = A.divisor
    if d is None or d.kind != "elliptic":
        raise InvalidSpec("the polar blow-up starts from an elliptic divisor")
    r, th = var(r_name), var(angle_name)
    x_of = ex.mul(r, ex.cos(th))
    y_of = ex.mul(r, ex.sin(th))
    subs = {d.x: x_of, d.y: y_of}
    # phi*(dx) = cos dr - r sin dth, phi*(dy) = sin dr + r cos dth
    dx_r, dx_th = ex.cos(th), ex.neg(ex.mul(r, ex.sin(th)))
    dy_r, dy_th = ex.sin(th), ex.mul(r, ex.cos(th))
    sq = ex.pow_(r, -2)
    xs, ys = substitute(var(d.x), subs), substitute(var(d.y), subs)
    rad_r = ex.mul(ex.add(ex.mul(xs, dx_r), ex.mul(ys, dy_r)), sq)
    rad_th = ex.mul(ex.add(ex.mul(xs, dx_th), ex.mul(ys, dy_th)), sq)
    ang_r = ex.mul(ex.add(ex.mul(xs, dy_r), ex.neg(ex.mul(ys, dx_r))), sq)
    ang_th = ex.mul(ex.add(ex.mul(xs, dy_th), ex.neg(ex.mul(ys, dx_th))), sq)
    dom = ex.SampleDomain(coords=(r_name, angle_name),
                          ranges={r_name: (0.05, 1.0), angle_name: (0.0, 2 * math.pi)},
                          periodic=frozenset({angle_name}), count=count, seed=seed)
    res_rad = max(
        ex.numeric_equiv(rad_r, ex.pow_(r, -1), dom, tol=1e-9).max_abs,
        ex.numeric_equiv(rad_th, ex._ZERO, dom, tol=1e-9).max_abs)
    res_ang = max(
        ex.numeric_equiv(ang_r, ex._ZERO, dom, tol=1e-9).max_abs,
        ex.numeric_equiv(ang_th, ex._ONE, dom, tol=1e-9).max_abs)
    chart = Chart((r_name, angle_name), periodic={angle_name: 2 * math.pi},
                  ranges={r_name: (-1.0, 1.0)})
    B = bk(chart, r_name, k=1)
    return BlowupData(B, r_name, angle_name, res_rad, res_ang)
