"""Flows of chart vector fields and periodic orbit location.

Integration is delegated to an adaptive Runge-Kutta scheme; periodic
coordinates are integrated unwrapped and only compared modulo their
circumference.  Orbits are polished by a least-squares Newton iteration
on the period map, which tolerates the translation degeneracy along the
orbit and any symmetry directions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from . import expr as ex
from .algebroid import AlgebroidChart, Chart, Section, tangent
from .errors import (
    Blowup,
    ChartMismatch,
    ConstantProjection,
    DomainExit,
    InvalidSpec,
    NoConvergence,
    NonTransverse,
    NoReturn,
    SingularLevel,
)
from .expr import Expr, evaluate, substitute

__all__ = [
    "as_vector_field",
    "flow",
    "FlowResult",
    "return_map",
    "ReturnData",
    "Orbit",
    "find_orbit",
    "hunt_orbits",
    "dedupe_orbits",
    "project_orbit",
    "ProjectedOrbit",
    "LevelOrbit",
    "level_set_orbits",
]

FLOW_RTOL = 1e-11
FLOW_ATOL = 1e-12


def as_vector_field(A: AlgebroidChart, X: Section) -> Section:
    """Anchor image of an algebroid section, as a tangent section."""
    T = tangent(A.chart)
    return Section(T, list(X.anchor_field()))


# fast scalar compilation -------------------------------------------------


def _py_src(e: Expr, names: Mapping[str, str]) -> str:
    if isinstance(e, ex.Const):
        return repr(float(e.value))
    if isinstance(e, ex.Pi):
        return "_pi"
    if isinstance(e, ex.Var):
        return names[e.name]
    if isinstance(e, ex.Add):
        if not e.terms:
            return "0.0"
        return "(" + "+".join(_py_src(t, names) for t in e.terms) + ")"
    if isinstance(e, ex.Mul):
        if not e.factors:
            return "1.0"
        return "(" + "*".join(_py_src(f, names) for f in e.factors) + ")"
    if isinstance(e, ex.Pow):
        return f"({_py_src(e.base, names)})**({e.exponent})"
    if isinstance(e, ex.Func):
        return f"_{e.name}({_py_src(e.arg, names)})"
    if isinstance(e, ex.SStep):
        return f"_sstep({e.order},{_py_src(e.arg, names)})"
    raise TypeError(f"cannot compile {type(e).__name__}")


def _sstep_scalar(order: int, u: float) -> float:
    poly = ex.SStep._POLYS.get(order)
    if poly is None:
        return 0.0
    if u <= 0.0:
        return 0.0
    if u >= 1.0:
        return 1.0 if order == 0 else 0.0
    acc = 0.0
    for c in reversed(poly):
        acc = acc * u + c
    return acc


_GLOBALS = {
    "_sin": math.sin, "_cos": math.cos, "_exp": math.exp, "_log": math.log,
    "_sqrt": math.sqrt, "_pi": math.pi, "_sstep": _sstep_scalar,
    "__builtins__": {},
}


def _compile_field(coords: Sequence[str], comps: Sequence[Expr]):
    names = {c: f"y[{i}]" for i, c in enumerate(coords)}
    body = ",".join(_py_src(c, names) for c in comps)
    src = f"def _f(t, y):\n    return ({body},)"
    ns = dict(_GLOBALS)
    exec(src, ns)
    return ns["_f"]


# flows -------------------------------------------------------------------


@dataclass(frozen=True)
class FlowResult:
    coords: tuple
    times: np.ndarray
    states: np.ndarray      # unwrapped, shape (n_times, dim)
    sol: object             # dense interpolant

    def at(self, t: float) -> np.ndarray:
        return np.asarray(self.sol(t))

    def end_point(self, chart: Chart = None) -> dict:
        y = self.states[-1]
        if chart is None:
            return dict(zip(self.coords, map(float, y)))
        return _wrap_point(chart, self.coords, y)


def _wrap_point(chart: Chart, coords, y) -> dict:
    out = {}
    for c, v in zip(coords, y):
        L = chart.periodic.get(c)
        out[c] = float(v % L) if L else float(v)
    return out


def flow(field: Section, p0: Mapping[str, float], t_span: float,
         rtol: float = FLOW_RTOL, atol: float = FLOW_ATOL,
         max_step: float = np.inf, bound: float = 1e6) -> FlowResult:
    """Integrate from p0 for time t_span with dense output."""
    chart = field.alg.chart
    coords = chart.coords
    f = _compile_field(coords, field.coeffs)
    y0 = np.array([float(p0[c]) for c in coords])
    sol = solve_ivp(f, (0.0, float(t_span)), y0, method="DOP853",
                    rtol=rtol, atol=atol, dense_output=True,
                    max_step=max_step)
    if not sol.success:
        raise DomainExit(f"integration failed: {sol.message}")
    if np.abs(sol.y).max() > bound:
        raise Blowup(f"trajectory norm exceeded {bound}")
    return FlowResult(tuple(coords), sol.t, sol.y.T, sol.sol)


@dataclass(frozen=True)
class ReturnData:
    time: float
    point: dict            # wrapped to the chart
    displacement: dict     # unwrapped flow_T(p) - p


def return_map(field: Section, p0: Mapping[str, float], coord: str,
               value: float = None, t_max: float = 60.0, direction: int = 0,
               t_min: float = 1e-6, tol: float = 1e-12,
               trans_floor: float = 1e-6) -> ReturnData:
    """First crossing of the section {coord = value} (default: the seed's
    own value, i.e. the first return).

    For a periodic section coordinate the crossing may happen a whole
    number of turns away; every branch is scanned and the earliest
    transverse crossing (matching `direction` when nonzero) is refined
    on the dense interpolant."""
    chart = field.alg.chart
    coords = chart.coords
    i = chart.index(coord)
    res = flow(field, p0, t_max)
    c0 = float(p0[coord]) if value is None else float(value)
    L = chart.periodic.get(coord)
    ts = np.linspace(0.0, t_max, 4001)
    h = np.array([res.at(t)[i] for t in ts]) - c0
    span = max(1.0, np.abs(h).max())
    if L:
        targets = [k * L for k in range(-int(span / L) - 1, int(span / L) + 2)]
    else:
        targets = [0.0]
    f_comp = _compile_field(coords, field.coeffs)
    best = None
    for v in targets:
        g = h - v
        for j in range(len(ts) - 1):
            if ts[j + 1] <= t_min:
                continue
            a, b = g[j], g[j + 1]
            if a == 0.0 and ts[j] > t_min:
                t_star = ts[j]
            elif a * b < 0:
                lo, hi, fa = ts[j], ts[j + 1], a
                for _ in range(200):
                    mid = 0.5 * (lo + hi)
                    fm = float(res.at(mid)[i]) - c0 - v
                    if hi - lo < tol:
                        break
                    if (fm < 0) == (fa < 0):
                        lo, fa = mid, fm
                    else:
                        hi = mid
                t_star = 0.5 * (lo + hi)
            else:
                continue
            if t_star <= t_min:
                continue
            y_star = res.at(t_star)
            vel = f_comp(t_star, y_star)[i]
            if abs(vel) < trans_floor:
                continue
            if direction and math.copysign(1, vel) != direction:
                continue
            if best is None or t_star < best[0]:
                best = (t_star, y_star)
    if best is None:
        raise NoReturn(f"no return to {coord} = {c0} within t = {t_max}")
    t_star, y_star = best
    y0 = np.array([float(p0[c]) for c in coords])
    disp = {c: float(y_star[j] - y0[j]) for j, c in enumerate(coords)}
    return ReturnData(float(t_star), _wrap_point(chart, coords, y_star), disp)


# periodic orbits ---------------------------------------------------------


@dataclass(frozen=True)
class Orbit:
    kind: str               # "horizontal" | "vertical" | "slanted" | "generic"
    point: dict
    period: float           # nan when the orbit does not close
    closure_residual: float
    windings: dict          # per periodic coordinate, over one period
    vertical_shift: float   # displacement of the first vertical coord per period/return
    closed: bool
    iterations: int
    path: dict = None       # coord -> samples over one period, closed orbits only


def _displacement(chart: Chart, coords, y0, y1) -> np.ndarray:
    d = y1 - y0
    for j, c in enumerate(coords):
        L = chart.periodic.get(c)
        if L:
            d[j] = (d[j] + 0.5 * L) % L - 0.5 * L
    return d


def find_orbit(field: Section, seed: Mapping[str, float],
               vertical: Sequence[str] = (), tol: float = 1e-9,
               max_iter: int = 50, t_max: float = 60.0,
               speed_floor: float = 1e-8) -> Orbit:
    """Locate the periodic orbit through (or near) a seed point.

    Base motion is measured on the non-vertical coordinates.  A seed with
    no base motion gives a vertical orbit, closed when the vertical
    factor is.  Otherwise the first return to the fastest base section
    starts a least-squares Newton iteration on the full period map."""
    chart = field.alg.chart
    coords = chart.coords
    vertical = tuple(vertical)
    f = _compile_field(coords, field.coeffs)
    y0 = np.array([float(seed[c]) for c in coords])
    v0 = np.array(f(0.0, y0))
    base_ids = [j for j, c in enumerate(coords) if c not in vertical]
    vert_ids = [j for j, c in enumerate(coords) if c in vertical]
    base_speed = float(np.abs(v0[base_ids]).max()) if base_ids else 0.0
    if base_speed < speed_floor:
        return _vertical_orbit(field, chart, coords, seed, y0, v0, vert_ids, tol)
    sec = coords[base_ids[int(np.argmax(np.abs(v0[base_ids])))]]
    ret = return_map(field, seed, sec, t_max=t_max,
                     direction=int(math.copysign(1, v0[chart.index(sec)])))
    vert_disp = [ret.displacement[c] for c in vertical]
    shift = float(vert_disp[0]) if vert_disp else 0.0
    open_vertical = [c for c in vertical if c not in chart.periodic]
    if any(abs(ret.displacement[c]) > 1e-6 for c in open_vertical):
        return Orbit("slanted", dict(seed), math.nan, math.inf, {}, shift,
                     False, 0)
    # Newton on G(p, T) = wrap(flow_T(p) - p)
    T = ret.time
    y = y0.copy()
    n = len(coords)
    res_norm = math.inf
    for it in range(1, max_iter + 1):
        fl = flow(field, dict(zip(coords, y)), T)
        G = _displacement(chart, coords, y, fl.states[-1])
        res_norm = float(np.abs(G).max())
        if res_norm <= tol:
            break
        J = np.zeros((n, n + 1))
        h = 1e-6
        for j in range(n):
            yp = y.copy()
            yp[j] += h
            flp = flow(field, dict(zip(coords, yp)), T, rtol=1e-10)
            Gp = _displacement(chart, coords, yp, flp.states[-1])
            J[:, j] = (Gp - G) / h
        J[:, n] = np.array(f(T, fl.states[-1]))
        step, *_ = np.linalg.lstsq(J, -G, rcond=None)
        y = y + step[:n]
        T = T + float(step[n])
        if T <= 0:
            raise NoConvergence("period collapsed during the iteration")
    closed = res_norm <= tol
    if not closed:
        raise NoConvergence(
            f"orbit polish stalled at residual {res_norm:.3e} after {it} steps")
    fl = flow(field, dict(zip(coords, y)), T)
    raw = fl.states[-1] - y
    windings = {}
    for j, c in enumerate(coords):
        L = chart.periodic.get(c)
        if L:
            w = int(round(raw[j] / L))
            windings[c] = w
    vshift = 0.0
    if vertical:
        c = vertical[0]
        j = chart.index(c)
        vshift = float(raw[j])
    if not vertical:
        kind = "generic"
    elif any(abs(raw[chart.index(c)]) > 1e-6 for c in vertical):
        kind = "slanted"
    else:
        kind = "horizontal"
    return Orbit(kind, _wrap_point(chart, coords, y), float(T), res_norm,
                 windings, vshift, True, it,
                 path=_sample_path(chart, fl, float(T)))


def _vertical_orbit(field, chart, coords, seed, y0, v0, vert_ids, tol) -> Orbit:
    tag = "vertical" if vert_ids else "generic"
    moving = [j for j in vert_ids if abs(v0[j]) > 1e-12]
    if not moving:
        # an actual fixed point of the field
        return Orbit(tag, dict(seed), math.nan, 0.0, {}, 0.0, False, 0)
    closable = all(coords[j] in chart.periodic for j in moving)
    if not closable:
        return Orbit(tag, dict(seed), math.nan, math.inf, {}, 0.0, False, 0)
    j0 = max(moving, key=lambda j: abs(v0[j]))
    period = chart.periodic[coords[j0]] / abs(v0[j0])
    fl = flow(field, seed, period)
    G = _displacement(chart, coords, y0, fl.states[-1])
    resid = float(np.abs(G).max())
    windings = {coords[j]: int(round((fl.states[-1][j] - y0[j]) /
                                     chart.periodic[coords[j]]))
                for j in moving}
    return Orbit(tag, dict(seed), float(period), resid, windings,
                 float(fl.states[-1][vert_ids[0]] - y0[vert_ids[0]]) if vert_ids else 0.0,
                 resid <= tol, 1,
                 path=_sample_path(chart, fl, float(period)) if resid <= tol else None)


def dedupe_orbits(orbits: Sequence[Orbit], field: Section = None,
                  tol: float = 1e-5) -> list:
    """Collapse orbits that agree in kind, period, windings and in the
    coordinates frozen by the flow."""
    out = []
    seen = set()
    for orb in orbits:
        frozen = []
        if field is not None:
            vals = field.at(orb.point)
            for j, c in enumerate(field.alg.chart.coords):
                if abs(vals[j]) < 1e-10:
                    frozen.append((c, round(orb.point[c] / tol) * tol))
        key = (orb.kind,
               None if math.isnan(orb.period) else round(orb.period / tol) * tol,
               tuple(sorted(orb.windings.items())), tuple(frozen))
        if key in seen:
            continue
        seen.add(key)
        out.append(orb)
    return out


def hunt_orbits(field: Section, seeds: Sequence[Mapping[str, float]],
                vertical: Sequence[str] = (), tol: float = 1e-9,
                t_max: float = 60.0) -> list:
    """find_orbit over a seed list, skipping failures, merging duplicates."""
    found = []
    for seed in seeds:
        try:
            found.append(find_orbit(field, seed, vertical=vertical, tol=tol,
                                    t_max=t_max))
        except (NoReturn, NoConvergence, DomainExit):
            continue
    return dedupe_orbits(found, field=field)


def _sample_path(chart: Chart, fl: FlowResult, T: float, n: int = 128) -> dict:
    ts = np.linspace(0.0, T, n)
    states = np.array([fl.at(t) for t in ts])
    out = {"t": ts}
    for j, c in enumerate(chart.coords):
        L = chart.periodic.get(c)
        out[c] = np.mod(states[:, j], L) if L else states[:, j]
    return out


@dataclass(frozen=True)
class ProjectedOrbit:
    period: float
    path: dict              # base coordinates of the ambient chart
    velocity_residual: float


def project_orbit(reg, field: Section, orbit: Orbit,
                  ambient: Section = None, root: float = None, n: int = 256,
                  tol: float = 1e-8) -> ProjectedOrbit:
    """Push a closed orbit on the regularisation (or its central leaf)
    down to the base.

    Vertical coordinates are dropped; coordinates of the base chart that
    the leaf chart lost are reinstated at the divisor root.  When the
    base field is supplied, the projected velocity is re-checked against
    it pointwise."""
    if not orbit.closed or not math.isfinite(orbit.period):
        raise ConstantProjection("orbit does not close; nothing to project")
    chart = field.alg.chart
    base_chart = reg.alg.chart
    fl = flow(field, orbit.point, orbit.period)
    ts = np.linspace(0.0, orbit.period, n)
    states = np.array([fl.at(t) for t in ts])
    vels = np.array([field.at(dict(zip(chart.coords, y))) for y in states])
    base = [c for c in base_chart.coords if c in chart.coords]
    if all(np.ptp(states[:, chart.index(c)]) < 1e-10 for c in base):
        raise ConstantProjection("orbit projects to a point of the base")
    path = {"t": ts}
    for c in base_chart.coords:
        if c in chart.coords:
            col = states[:, chart.index(c)]
        else:
            d = reg.alg.divisor
            if d is not None and c == d.z:
                col = np.full(n, float(d.roots[0]) if root is None else float(root))
            else:
                raise ChartMismatch(f"cannot reinstate coordinate {c!r}")
        L = base_chart.periodic.get(c)
        path[c] = np.mod(col, L) if L else col
    residual = math.nan
    if ambient is not None:
        worst = 0.0
        for row in range(0, n, 4):
            p = {c: float(path[c][row]) for c in base_chart.coords}
            target = ambient.at(p)
            for j, c in enumerate(base_chart.coords):
                got = vels[row][chart.index(c)] if c in chart.coords else 0.0
                worst = max(worst, abs(float(target[j]) - float(got)))
        residual = worst
        if residual > tol:
            raise NonTransverse(
                f"projected velocity misses the base field by {residual:.3e}")
    return ProjectedOrbit(orbit.period, path, residual)


# orbits on level sets ----------------------------------------------------


@dataclass(frozen=True)
class LevelOrbit:
    epsilon: float
    root: float             # where the level cuts the tracked coordinate
    orbit: Orbit


def level_set_orbits(A: AlgebroidChart, alpha, R: Section, eps,
                     seed_coords: Mapping[str, Sequence[float]] = None,
                     tol: float = 1e-9) -> list:
    """Closed orbits of the Reeb field on the level sets {u = eps}.

    u is the divisor-direction coefficient of the contact form; eps may
    be a single value or a list.  Levels are tracked by root finding on
    the coordinate u depends on."""
    u = ex.canonical(alpha.get((0,)))
    field = as_vector_field(A, R)
    out = []
    for e in ([eps] if isinstance(eps, (int, float)) else list(eps)):
        for root, orb in _orbits_on_level(A.chart, u, field, float(e),
                                          seed_coords=seed_coords, tol=tol):
            out.append(LevelOrbit(float(e), root, orb))
    return out


def _orbits_on_level(chart: Chart, u: Expr, field: Section, epsilon: float,
                     seed_coords: Mapping[str, Sequence[float]] = None,
                     tol: float = 1e-9, du_floor: float = 1e-8) -> list:
    """Closed orbits of an ambient field on the level {u = epsilon}.

    The level function must depend on a single chart coordinate; each
    root is located by bisection, transversality of the level and
    tangency of the field are checked, and the restricted flow is then
    searched from a lattice of seeds."""
    dep = sorted(u._vars)
    if len(dep) != 1:
        raise InvalidSpec("level function must depend on exactly one coordinate")
    cz = dep[0]
    from .contact import dividing_set

    shifted = ex.add(u, ex.const(-ex.Fraction(epsilon)))
    roots = dividing_set(Chart((cz,), periodic={cz: chart.periodic[cz]}
                               if cz in chart.periodic else {},
                               ranges={cz: chart.range_of(cz)} if cz not in chart.periodic else {}),
                         shifted).clusters(cz)
    if not roots:
        raise SingularLevel(f"the level {epsilon} is not attained")
    du = ex.differentiate(u, cz)
    out = []
    rest = [c for c in chart.coords if c != cz]
    for r in roots:
        if abs(float(evaluate(du, {cz: r}))) < du_floor:
            raise SingularLevel(f"level through {cz} = {r} is critical")
        zi = chart.index(cz)
        tang = substitute(field.coeffs[zi], {cz: ex.const(ex.Fraction(r))})
        sub_chart = chart.drop(cz)
        if not _tangent_to_level(tang, sub_chart):
            raise SingularLevel("field does not preserve the level")
        comps = [ex.canonical(substitute(c, {cz: ex.const(ex.Fraction(r))}))
                 for i, c in enumerate(field.coeffs) if i != zi]
        sub_field = Section(tangent(sub_chart), comps)
        seeds = _seed_lattice(sub_chart, seed_coords)
        for orb in hunt_orbits(sub_field, seeds, tol=tol):
            if orb.closed:
                out.append((float(r), orb))
    return out


def _tangent_to_level(e: Expr, chart: Chart, tol: float = 1e-9) -> bool:
    if e == ex._ZERO:
        return True
    dom = ex.SampleDomain(coords=chart.coords,
                          ranges={c: chart.range_of(c) for c in chart.coords},
                          periodic=frozenset(chart.periodic), count=64, seed=4)
    return bool(np.abs(np.asarray(evaluate(e, dom.sample()))).max() <= tol)


def _seed_lattice(chart: Chart, seed_coords) -> list:
    grids = []
    for c in chart.coords:
        if seed_coords and c in seed_coords:
            grids.append([float(v) for v in seed_coords[c]])
        else:
            lo, hi = chart.range_of(c)
            grids.append([lo + (hi - lo) * j / 4 for j in range(4)])
    seeds = []

    def walk(i, acc):
        if i == len(grids):
            seeds.append(dict(zip(chart.coords, acc)))
            return
        for v in grids[i]:
            walk(i + 1, acc + [v])

    walk(0, [])
    return seeds
