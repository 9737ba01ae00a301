"""Distributions inside an algebroid: flags, curvature, classification.

Ranks are decided numerically (singular values at sampled points), the
sections themselves stay symbolic.  Includes the corank-one classifiers
(contact / even-contact / Engel), Reeb section solvers, the canonical
Liouville and Bott two-forms on pullbacks, fatness probing, contact
elements and prolongation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import algebroid as alg
from . import expr as ex
from .algebroid import (
    AForm,
    AlgebroidChart,
    Section,
    bracket,
    domain_for,
    exterior_derivative,
    interior,
    pullback_product,
    wedge,
)
from .errors import (
    Degenerate,
    NonConstantSpan,
    NotContact,
    NotInFlag,
    RankMismatch,
    UnsupportedRank,
)
from .expr import Expr, const, evaluate, var

__all__ = [
    "Distribution",
    "FlagReport",
    "Classification",
    "lie_flag",
    "curvature_eval",
    "classify",
    "reeb_at",
    "verify_reeb",
    "LiouvilleData",
    "liouville",
    "bott",
    "is_fat",
    "FatnessReport",
    "contact_elements",
    "contact_elements_symplectisation_residual",
    "prolong",
    "kernel_sections",
]

RANK_TOL = 1e-8
MEMBERSHIP_TOL = 1e-6


@dataclass(frozen=True)
class Distribution:
    """Spanning sections (possibly redundant) with a declared rank."""

    alg: AlgebroidChart
    sections: tuple
    rank: int

    def __post_init__(self):
        for s in self.sections:
            if s.alg.rank != self.alg.rank:
                raise RankMismatch("section does not live on the algebroid")


def _eval_matrix(sections: Sequence[Section], point) -> np.ndarray:
    """Rows are section coefficient vectors at the point."""
    return np.array([s.at(point) for s in sections], dtype=float)


def _num_rank(M: np.ndarray) -> int:
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    if sv.size == 0:
        return 0
    return int(np.sum(sv > RANK_TOL * max(1.0, sv[0])))


@dataclass(frozen=True)
class FlagReport:
    ranks: tuple
    regular: bool
    involutive: bool
    bracket_generating: bool
    step: int
    generators: tuple  # tuple of section-tuples, one per flag step


def lie_flag(D: Distribution, dom: ex.SampleDomain = None, max_depth: int = 8,
             samples: int = 25) -> FlagReport:
    """Iterated bracket flag with numerically sampled ranks."""
    A = D.alg
    if dom is None:
        dom = domain_for(A, count=samples, seed=7)
    pts = dom.sample_points(samples)
    steps = [list(D.sections)]
    ranks: list = []
    per_point: list = []
    new_sections = list(D.sections)
    regular = True
    for depth in range(max_depth):
        current = steps[-1]
        rk_at = [_num_rank(_eval_matrix(current, p)) for p in pts]
        rk = max(rk_at)
        if any(r != rk for r in rk_at):
            regular = False
        ranks.append(rk)
        per_point.append(rk_at)
        if len(ranks) >= 2 and ranks[-1] == ranks[-2]:
            steps.pop()
            ranks.pop()
            break
        if rk == A.rank:
            break
        fresh = []
        for v in D.sections:
            for w in new_sections:
                fresh.append(bracket(v, w))
        new_sections = fresh
        steps.append(current + fresh)
    involutive = len(ranks) == 1
    bracket_generating = ranks[-1] == A.rank
    return FlagReport(
        ranks=tuple(ranks),
        regular=regular,
        involutive=involutive,
        bracket_generating=bracket_generating,
        step=len(ranks),
        generators=tuple(tuple(s) for s in steps),
    )


def _orthobasis(M: np.ndarray, rank: int) -> np.ndarray:
    """Orthonormal rows spanning the row space of M (first `rank` kept)."""
    if M.size == 0 or rank == 0:
        return np.zeros((0, M.shape[1] if M.ndim == 2 else 0))
    _u, _s, vt = np.linalg.svd(M)
    return vt[:rank]


def _membership_residual(vec: np.ndarray, basis_rows: np.ndarray) -> float:
    if basis_rows.shape[0] == 0:
        return float(np.linalg.norm(vec))
    proj = basis_rows.T @ (basis_rows @ vec)
    return float(np.linalg.norm(vec - proj))


def curvature_eval(D: Distribution, flag: FlagReport, v: Section, w: Section,
                   point, i: int = 1, j: int = 1, check_factoring: bool = True):
    """Curvature Omega_{i,j}(v, w) at a point, expressed in an orthonormal
    basis of xi_{i+j} / xi_{i+j-1}.

    Raises NotInFlag when v (resp. w) fails membership in xi_i (xi_j).
    When possible the factoring claim is re-checked by shifting w by a
    lower flag step and comparing quotient values.
    """
    steps = flag.generators
    if i > len(steps) or j > len(steps) or i + j - 1 > len(steps):
        raise RankMismatch("flag does not reach the requested depth")
    Ei = _orthobasis(_eval_matrix(steps[i - 1], point), flag.ranks[i - 1])
    Ej = _orthobasis(_eval_matrix(steps[j - 1], point), flag.ranks[j - 1])
    vv, wv = v.at(point), w.at(point)
    if _membership_residual(vv, Ei) > MEMBERSHIP_TOL * max(1.0, np.linalg.norm(vv)):
        raise NotInFlag("first argument is not in the requested flag step")
    if _membership_residual(wv, Ej) > MEMBERSHIP_TOL * max(1.0, np.linalg.norm(wv)):
        raise NotInFlag("second argument is not in the requested flag step")
    top_idx = min(i + j, len(steps)) - 1
    low_idx = min(i + j - 1, len(steps)) - 1
    Etop = _orthobasis(_eval_matrix(steps[top_idx], point),
                       flag.ranks[top_idx])
    Elow = _orthobasis(_eval_matrix(steps[low_idx], point),
                       flag.ranks[low_idx])
    quotient = _quotient_basis(Etop, Elow)

    def value(wsec: Section) -> np.ndarray:
        bv = bracket(v, wsec).at(point)
        return quotient @ bv

    out = value(w)
    if check_factoring and j >= 2:
        shift = steps[j - 2][0]
        shifted = value(Section(D.alg, [ex.add(a, b) for a, b in
                                        zip(w.coeffs, shift.coeffs)]))
        if np.max(np.abs(shifted - out)) > 1e-6 * max(1.0, np.max(np.abs(out))):
            raise Degenerate("curvature failed to factor through the flag quotient")
    return out


def _quotient_basis(Etop: np.ndarray, Elow: np.ndarray) -> np.ndarray:
    """Rows spanning Etop ∩ Elow^perp."""
    if Etop.shape[0] == 0:
        return Etop
    if Elow.shape[0] == 0:
        return Etop
    resid = Etop - (Etop @ Elow.T) @ Elow
    _u, s, vt = np.linalg.svd(resid)
    keep = int(np.sum(s > RANK_TOL * max(1.0, s[0] if s.size else 1.0)))
    return vt[:keep]


@dataclass(frozen=True)
class Classification:
    labels: tuple
    flag: FlagReport
    details: dict = field(default_factory=dict)

    def has(self, label: str) -> bool:
        return label in self.labels


def _curvature_spectrum(D: Distribution, flag: FlagReport, points) -> list:
    """Singular values of the corank-one curvature form at each point,
    computed on an orthonormal basis of the distribution."""
    A = D.alg
    secs = list(flag.generators[0])
    n_s = len(secs)
    pair_vals = {}
    for a in range(n_s):
        for b in range(a + 1, n_s):
            pair_vals[(a, b)] = bracket(secs[a], secs[b])
    spectra = []
    for p in points:
        S = _eval_matrix(secs, p)
        k = _num_rank(S)
        B = _orthobasis(S, k)  # rows: orthonormal basis of xi at p
        quotient = _quotient_basis(np.eye(A.rank), B)
        if quotient.shape[0] != 1:
            spectra.append((p, None))
            continue
        # coefficients of basis vectors in terms of the spanning sections
        P, *_ = np.linalg.lstsq(S.T, B.T, rcond=None)
        N = np.zeros((n_s, n_s))
        for (a, b), br in pair_vals.items():
            val = float(quotient @ br.at(p))
            N[a, b] = val
            N[b, a] = -val
        omega = P.T @ N @ P
        sv = np.linalg.svd(omega, compute_uv=False)
        spectra.append((p, sv))
    return spectra


def classify(D: Distribution, dom: ex.SampleDomain = None, alpha: AForm = None,
             samples: int = 25) -> Classification:
    """Label a distribution: involutive, bracket-generating, contact,
    even-contact, Engel.  For corank one, the curvature spectrum decides
    between contact (no kernel) and even-contact (one-dimensional kernel);
    when a defining form is supplied the volume-form criterion
    alpha ^ (d alpha)^r is evaluated as an independent route."""
    A = D.alg
    if dom is None:
        dom = domain_for(A, count=samples, seed=11)
    flag = lie_flag(D, dom=dom, samples=samples)
    labels = []
    details: dict = {"ranks": flag.ranks}
    if flag.involutive:
        labels.append("involutive")
    if flag.bracket_generating:
        labels.append("bracket_generating")
    k = flag.ranks[0]
    corank = A.rank - k
    pts = dom.sample_points(samples)
    if corank == 1:
        spectra = _curvature_spectrum(D, flag, pts)
        kernel_dims = []
        min_prod = math.inf
        for _p, sv in spectra:
            if sv is None:
                kernel_dims.append(None)
                continue
            nz = np.sum(sv > RANK_TOL * max(1.0, sv[0] if sv.size else 1.0))
            kernel_dims.append(k - int(nz))
            if int(nz) == k:
                min_prod = min(min_prod, float(np.prod(sv)))
        details["curvature_kernel_dims"] = tuple(kernel_dims)
        if all(d == 0 for d in kernel_dims):
            labels.append("contact")
            details["min_curvature_det"] = min_prod
        elif all(d == 1 for d in kernel_dims):
            labels.append("even_contact")
    if alpha is not None and corank == 1 and (A.rank % 2) == 1:
        r = (A.rank - 1) // 2
        volume = alpha
        da = exterior_derivative(alpha)
        for _ in range(r):
            volume = wedge(volume, da)
        top = volume.get(tuple(range(A.rank)))
        vals = [abs(float(evaluate(top, p))) for p in pts]
        vals += _on_locus_values(A, top)
        details["volume_min_abs"] = min(vals) if vals else 0.0
        details["volume_route_contact"] = details["volume_min_abs"] > 1e-10
        if details["volume_route_contact"] != ("contact" in labels):
            details["route_disagreement"] = True
    if A.rank == 4 and k == 2 and tuple(flag.ranks[:3]) == (2, 3, 4):
        xi2 = Distribution(A, flag.generators[1], 3)
        sub = classify(xi2, dom=dom, samples=samples)
        if sub.has("even_contact"):
            labels.append("engel")
        details["step2_labels"] = sub.labels
    return Classification(tuple(labels), flag, details)


def _on_locus_values(A: AlgebroidChart, e: Expr, samples: int = 50) -> list:
    """Values of an Expr at points pinned to the divisor locus."""
    if A.divisor is None:
        return []
    d = A.divisor
    fixed_sets = []
    if d.kind == "bk":
        fixed_sets = [{d.z: r} for r in d.roots]
    elif d.kind == "elliptic":
        fixed_sets = [{d.x: 0.0, d.y: 0.0}]
    elif d.kind == "selfcrossing":
        fixed_sets = [{z: 0.0} for z, _k, _f, _r in d.components]
    vals = []
    base = domain_for(A, count=samples, seed=13, avoid_divisor=False)
    for fixed in fixed_sets:
        pts = base.sample(count=samples, fixed=fixed)
        v = np.asarray(evaluate(e, pts))
        v = np.broadcast_to(v, (samples,))
        vals.extend(float(abs(x)) for x in v)
    return vals


# Reeb sections -----------------------------------------------------------


def reeb_at(A: AlgebroidChart, alpha: AForm, point, tol: float = 1e-10) -> np.ndarray:
    """Solve alpha(R) = 1, i_R d(alpha) = 0 at a point by least squares."""
    da = exterior_derivative(alpha)
    av = alpha.vector_at(point)
    M = da.matrix_at(point)
    rows = [av] + [M[:, b] for b in range(A.rank)]
    S = np.array(rows)
    rhs = np.zeros(A.rank + 1)
    rhs[0] = 1.0
    sol, _res, rank, _sv = np.linalg.lstsq(S, rhs, rcond=None)
    resid = float(np.linalg.norm(S @ sol - rhs))
    if rank < A.rank or resid > tol:
        raise Degenerate(f"no Reeb section at this point (residual {resid:.3e})")
    return sol


@dataclass(frozen=True)
class ReebReport:
    pairing_residual: float
    contraction_residual: float
    on_locus_residual: float
    tol: float
    passed: bool


def verify_reeb(A: AlgebroidChart, alpha: AForm, R: Section,
                dom: ex.SampleDomain = None, tol: float = 1e-10) -> ReebReport:
    """Check a closed-form Reeb candidate symbolically then numerically."""
    da = exterior_derivative(alpha)
    pair = interior(R, alpha).get(())
    contraction = interior(R, da)
    if dom is None:
        dom = domain_for(A)
    pts = dom.sample()
    n = len(next(iter(pts.values())))
    pr = float(np.abs(np.broadcast_to(
        np.asarray(evaluate(ex.add(pair, const(-1)), pts)), (n,))).max())
    cr = 0.0
    for _I, c in contraction.coeffs.items():
        cr = max(cr, float(np.abs(np.broadcast_to(np.asarray(evaluate(c, pts)), (n,))).max()))
    onloc = 0.0
    for v in _on_locus_values(A, ex.add(pair, const(-1))):
        onloc = max(onloc, v)
    for _I, c in contraction.coeffs.items():
        for v in _on_locus_values(A, c):
            onloc = max(onloc, v)
    passed = max(pr, cr, onloc) <= tol
    return ReebReport(pr, cr, onloc, tol, passed)


# canonical two-forms on pullbacks ---------------------------------------


@dataclass(frozen=True)
class LiouvilleData:
    total: AlgebroidChart
    lam: AForm
    omega: AForm
    fibre_names: tuple
    annihilator: tuple = ()  # Bott case: covectors as coefficient tuples


def liouville(A: AlgebroidChart, fibre_names: Sequence[str] = None) -> LiouvilleData:
    """Canonical one-form sum t_a theta^a on the dual-bundle pullback and
    its symplectic differential omega = -d(lambda)."""
    names = tuple(fibre_names or (f"t{a+1}" for a in range(A.rank)))
    if len(names) != A.rank:
        raise RankMismatch("need one fibre coordinate per frame element")
    total = pullback_product(A, names, ranges={n: (-1.5, 1.5) for n in names})
    lam = AForm(total, 1, {(a,): var(names[a]) for a in range(A.rank)})
    omega = -exterior_derivative(lam)
    return LiouvilleData(total, lam, omega, names)


def _fraction_nullspace(rows: list) -> list:
    """Exact null space basis of a matrix given as Fraction rows."""
    if not rows:
        return []
    m, n = len(rows), len(rows[0])
    M = [list(r) for r in rows]
    pivots = []
    r = 0
    for c in range(n):
        piv = None
        for i in range(r, m):
            if M[i][c] != 0:
                piv = i
                break
        if piv is None:
            continue
        M[r], M[piv] = M[piv], M[r]
        scale = M[r][c]
        M[r] = [x / scale for x in M[r]]
        for i in range(m):
            if i != r and M[i][c] != 0:
                f = M[i][c]
                M[i] = [x - f * y for x, y in zip(M[i], M[r])]
        pivots.append(c)
        r += 1
        if r == m:
            break
    free = [c for c in range(n) if c not in pivots]
    basis = []
    for fc in free:
        v = [Fraction(0)] * n
        v[fc] = Fraction(1)
        for i, pc in enumerate(pivots):
            v[pc] = -M[i][fc]
        basis.append(v)
    return basis


def bott(A: AlgebroidChart, xi: Sequence[Section],
         fibre_names: Sequence[str] = None) -> LiouvilleData:
    """Canonical two-form on the annihilator of a constant-coefficient
    distribution: lambda = sum t_i alpha_i over an exact rational basis of
    the annihilator, omega = -d(lambda)."""
    rows = []
    for s in xi:
        row = []
        for c in s.coeffs:
            cc = ex.canonical(c)
            if isinstance(cc, ex.Const):
                row.append(cc.value)
            else:
                raise NonConstantSpan("bott needs constant spanning coefficients")
        rows.append(row)
    ann = _fraction_nullspace(rows)
    m = len(ann)
    if m == 0:
        raise RankMismatch("distribution has trivial annihilator")
    names = tuple(fibre_names or (f"t{i+1}" for i in range(m)))
    if len(names) != m:
        raise RankMismatch(f"need {m} fibre coordinate names")
    total = pullback_product(A, names, ranges={n: (-1.5, 1.5) for n in names})
    coeffs: dict = {}
    for i, cov in enumerate(ann):
        for a, val in enumerate(cov):
            if val != 0:
                coeffs[(a,)] = ex.add(coeffs.get((a,), ex._ZERO),
                                      ex.mul(var(names[i]), const(val)))
    lam = AForm(total, 1, coeffs)
    omega = -exterior_derivative(lam)
    return LiouvilleData(total, lam, omega, names,
                         annihilator=tuple(tuple(c) for c in ann))


@dataclass(frozen=True)
class FatnessReport:
    min_abs_det: float
    fat: bool
    samples: int


def is_fat(A: AlgebroidChart, xi: Sequence[Section], data: LiouvilleData = None,
           base_samples: int = 20, sphere_samples: int = 24,
           threshold: float = 1e-8) -> FatnessReport:
    """Nondegeneracy of the Bott two-form over the unit sphere of fibre
    values: min |det| of its coefficient matrix."""
    if data is None:
        data = bott(A, xi)
    total = data.total
    m = len(data.fibre_names)
    base_dom = domain_for(A, count=base_samples, seed=17)
    base_pts = base_dom.sample_points(base_samples)
    if m == 1:
        sphere = [np.array([1.0]), np.array([-1.0])]
    elif m == 2:
        sphere = [np.array([math.cos(a), math.sin(a)])
                  for a in np.linspace(0.0, 2 * math.pi, sphere_samples, endpoint=False)]
    else:
        rng = np.random.default_rng(23)
        raw = rng.normal(size=(sphere_samples, m))
        sphere = [v / np.linalg.norm(v) for v in raw]
    worst = math.inf
    count = 0
    for p in base_pts:
        for tvec in sphere:
            point = dict(p)
            for name, val in zip(data.fibre_names, tvec):
                point[name] = float(val)
            M = data.omega.matrix_at(point)
            worst = min(worst, abs(float(np.linalg.det(M))))
            count += 1
    return FatnessReport(worst, worst > threshold, count)


# contact elements and prolongation --------------------------------------


def contact_elements(A: AlgebroidChart, angle_names: Sequence[str] = ("psi", "phi")):
    """Unit-sphere bundle of corank-one hyperplanes with its canonical
    defining one-form sum n_a(angles) theta^a."""
    tau = 2 * math.pi
    if A.rank == 2:
        psi = angle_names[0]
        total = pullback_product(A, [psi], periodic={psi: tau})
        aform = AForm(total, 1, {(0,): ex.cos(var(psi)), (1,): ex.sin(var(psi))})
        return total, aform
    if A.rank == 3:
        psi, phi = angle_names[0], angle_names[1]
        total = pullback_product(A, [psi, phi], periodic={psi: tau},
                                 ranges={phi: (-1.2, 1.2)})
        cphi = ex.cos(var(phi))
        aform = AForm(total, 1, {
            (0,): ex.mul(cphi, ex.cos(var(psi))),
            (1,): ex.mul(cphi, ex.sin(var(psi))),
            (2,): ex.sin(var(phi)),
        })
        return total, aform
    raise UnsupportedRank("contact elements implemented for rank 2 and 3")


def contact_elements_symplectisation_residual(A: AlgebroidChart,
                                              samples: int = 20) -> float:
    """Compare the symplectisation of the contact-element structure with
    the canonical two-form on the pullback of the dual bundle, under the
    fibre identification t_a = -exp(t) n_a(angles)."""
    if A.rank != 2:
        raise UnsupportedRank("the comparison is implemented for rank 2")
    ce_total, alpha = contact_elements(A)
    sym_total = pullback_product(ce_total, ["t"], ranges={"t": (-0.5, 0.5)})
    alpha_lift = AForm(sym_total, 1, dict(alpha.coeffs))
    et = ex.exp(var("t"))
    omega_sym = exterior_derivative(et * alpha_lift)
    can = liouville(A, fibre_names=("t1", "t2"))
    psi = var("psi")
    subs = {"t1": ex.mul(const(-1), et, ex.cos(psi)),
            "t2": ex.mul(const(-1), et, ex.sin(psi))}
    r = A.rank
    # Jacobian of the fibre map into the (t1, t2) directions
    P = [[ex._ZERO] * (r + 2) for _ in range(r + 2)]
    for a in range(r):
        P[a][a] = ex._ONE
    P[r][r] = ex.mul(et, ex.sin(psi))        # d t1 / d psi
    P[r + 1][r] = ex.mul(const(-1), et, ex.cos(psi))  # d t2 / d psi
    P[r][r + 1] = ex.mul(const(-1), et, ex.cos(psi))  # d t1 / d t
    P[r + 1][r + 1] = ex.mul(const(-1), et, ex.sin(psi))  # d t2 / d t
    pulled = _pullback_two_form(can.omega, sym_total, subs, P)
    dom = domain_for(sym_total, count=samples, seed=29)
    return alg.form_residual(pulled, omega_sym, dom)


def _pullback_two_form(w: AForm, source: AlgebroidChart, subs, P) -> AForm:
    """Pull a two-form back along a fibre map: coefficients are composed
    with `subs` and the frame transforms by the matrix P[target][source]."""
    r_t = w.alg.rank
    r_s = source.rank
    out: dict = {}
    for a in range(r_s):
        for b in range(a + 1, r_s):
            total = ex._ZERO
            for (c, d), coeff in w.coeffs.items():
                cc = ex.substitute(coeff, subs)
                term = ex.add(
                    ex.mul(P[c][a], P[d][b]),
                    ex.neg(ex.mul(P[c][b], P[d][a])),
                )
                total = ex.add(total, ex.mul(cc, term))
            if total != ex._ZERO:
                out[(a, b)] = total
    return AForm(source, 2, out)


def kernel_sections(A: AlgebroidChart, alpha: AForm) -> list:
    """Redundant smooth spanning set of ker(alpha): all alpha_b e_a - alpha_a e_b."""
    if alpha.degree != 1:
        raise RankMismatch("kernel of a 1-form only")
    out = []
    for a in range(A.rank):
        for b in range(a + 1, A.rank):
            coeffs = [ex._ZERO] * A.rank
            coeffs[a] = alpha.get((b,))
            coeffs[b] = ex.neg(alpha.get((a,)))
            if coeffs[a] != ex._ZERO or coeffs[b] != ex._ZERO:
                out.append(Section(A, coeffs))
    return out


def prolong(A: AlgebroidChart, xi: Sequence[Section], m_name: str = "m",
            require_contact: bool = True):
    """Affine-chart prolongation of a rank-two distribution: the span of
    v1 + m v2 and d_m on the pullback with the new fibre coordinate."""
    if len(xi) != 2:
        raise UnsupportedRank("prolongation needs two spanning sections")
    if A.rank == 3 and require_contact:
        cls = classify(Distribution(A, tuple(xi), 2))
        if not cls.has("contact"):
            raise NotContact("prolongation of a rank-3 algebroid needs a contact plane")
    total = pullback_product(A, [m_name], ranges={m_name: (-2.0, 2.0)})
    v1, v2 = xi
    lifted1 = [c for c in v1.coeffs] + [ex._ZERO]
    lifted2 = [c for c in v2.coeffs] + [ex._ZERO]
    m = var(m_name)
    s1 = Section(total, [ex.add(a, ex.mul(m, b)) for a, b in zip(lifted1, lifted2)])
    s2_coeffs = [ex._ZERO] * total.rank
    s2_coeffs[total.rank - 1] = ex._ONE
    s2 = Section(total, s2_coeffs)
    return total, [s1, s2]
