"""Scene files, command dispatch and report emission.

A scene is a JSON document describing one chart-level setup:

    {
      "name": "t3",
      "chart": {"coords": ["t1", "t2", "t3"], "periodic": {"t1": 6.2831...}},
      "algebroid": {"kind": "bk", "coord": "t1", "k": 1,
                    "f": "sin(t1)", "roots": [0.0, 3.1415...]},
      "forms": {"alpha": {"theta0": "sin(t2)", "dt3": "cos(t2)"}},
      "sections": {"reeb": ["sin(t2)", "0", "cos(t2)"]},
      "distributions": {"xi": {"rank": 2, "sections": ["p1", "q1"]}},
      "options": {...}
    }

Coefficients are infix expression text; forms are keyed by coframe
labels ("theta0^dx" for a 2-form entry), sections list frame
coefficients, and distribution entries may name frame elements, name
bundled sections, or spell out coefficient lists.  Commands compose
checks out of the other modules and write a Report as JSON or text,
plus CSV and SVG artifacts.  Fixed scene, flags and seed give
byte-identical JSON.
"""

import argparse
import csv
import hashlib
import itertools
import json
import math
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import contact as ct
from . import distribution as ds
from . import dynamics as dy
from . import expr as ex
from . import jacobi as jc
from . import regularise as rg
from .algebroid import (AForm, AlgebroidChart, Chart, Section, bk, domain_for,
                        elliptic, exterior_derivative, lie_algebra,
                        selfcrossing, tangent, wedge)
from .errors import (InvalidSpec, NotBK, ParseError, UnknownCoordinate,
                     UnknownKind)
from .expr import evaluate, parse, to_text, var

__all__ = [
    "Scene",
    "Check",
    "Report",
    "parse_scene",
    "scene_from_dict",
    "emit_scene",
    "scene_digest",
    "bundled_scenes",
    "execute",
    "emit_report",
    "main",
]

TAU = 2 * math.pi
COMMANDS = ("verify", "regularise", "contact", "orbits", "jacobi", "plot")


# scenes ------------------------------------------------------------------


@dataclass(frozen=True)
class Scene:
    name: str
    alg: AlgebroidChart
    forms: dict
    sections: dict
    distributions: dict
    options: dict

    @property
    def chart(self) -> Chart:
        return self.alg.chart


def _req(mapping, key, where):
    if key not in mapping:
        raise ParseError(f"missing key {key!r} in {where}")
    return mapping[key]


def _parse_chart(spec) -> Chart:
    coords = tuple(_req(spec, "coords", "chart"))
    periodic = {c: float(v) for c, v in spec.get("periodic", {}).items()}
    ranges = {c: (float(lo), float(hi))
              for c, (lo, hi) in spec.get("ranges", {}).items()}
    for c in list(periodic) + list(ranges):
        if c not in coords:
            raise UnknownCoordinate(f"chart option for unknown coordinate {c!r}")
    return Chart(coords, periodic, ranges)


def _parse_algebroid(spec, chart: Chart) -> AlgebroidChart:
    kind = _req(spec, "kind", "algebroid")
    if kind == "tangent":
        return tangent(chart)
    if kind == "bk":
        coord = _req(spec, "coord", "bk algebroid")
        f = parse(spec["f"]) if "f" in spec else None
        roots = tuple(float(r) for r in spec.get("roots", (0.0,)))
        return bk(chart, coord, k=int(spec.get("k", 1)), f=f, roots=roots)
    if kind == "elliptic":
        return elliptic(chart, _req(spec, "x", "elliptic algebroid"),
                        _req(spec, "y", "elliptic algebroid"))
    if kind == "selfcrossing":
        comps = [(c, int(k)) for c, k in _req(spec, "components", "selfcrossing")]
        return selfcrossing(chart, comps)
    if kind == "lie_algebra":
        names = tuple(_req(spec, "frame", "lie algebra"))
        brackets = {}
        for key, out in spec.get("brackets", {}).items():
            a, b = (s.strip() for s in key.split(","))
            brackets[(a, b)] = {c: Fraction(str(v)) for c, v in out.items()}
        return lie_algebra(chart, names, brackets)
    raise UnknownKind(f"unknown algebroid kind {kind!r}")


def _parse_form(A: AlgebroidChart, labeled) -> AForm:
    degree = None
    coeffs = {}
    for label, text in labeled.items():
        parts = label.split("^")
        if degree is None:
            degree = len(parts)
        elif degree != len(parts):
            raise ParseError(f"mixed form degrees near label {label!r}")
        idx = []
        for part in parts:
            try:
                idx.append(A.coframe_names.index(part))
            except ValueError:
                raise UnknownCoordinate(f"no coframe element {part!r}") from None
        key, sign = _sort_key(tuple(idx))
        c = parse(str(text))
        if sign < 0:
            c = ex.neg(c)
        coeffs[key] = ex.add(coeffs.get(key, ex._ZERO), c)
    return AForm(A, degree or 1, coeffs)


def _sort_key(idx):
    if len(set(idx)) != len(idx):
        raise ParseError(f"repeated coframe index in {idx}")
    key = tuple(sorted(idx))
    sign = 1
    perm = list(idx)
    for i in range(len(perm)):
        for j in range(len(perm) - 1 - i):
            if perm[j] > perm[j + 1]:
                perm[j], perm[j + 1] = perm[j + 1], perm[j]
                sign = -sign
    return key, sign


def _parse_section(A: AlgebroidChart, spec) -> Section:
    if isinstance(spec, str):
        try:
            return A.frame_section(A.frame_names.index(spec))
        except ValueError:
            raise UnknownCoordinate(f"no frame element {spec!r}") from None
    coeffs = [parse(str(c)) for c in spec]
    if len(coeffs) != A.rank:
        raise ParseError(f"section needs {A.rank} coefficients, got {len(coeffs)}")
    return Section(A, coeffs)


def scene_from_dict(data, name: str = None) -> Scene:
    if not isinstance(data, dict):
        raise ParseError("scene document must be a JSON object")
    chart = _parse_chart(_req(data, "chart", "scene"))
    A = _parse_algebroid(_req(data, "algebroid", "scene"), chart)
    forms = {n: _parse_form(A, spec) for n, spec in data.get("forms", {}).items()}
    sections = {n: _parse_section(A, spec)
                for n, spec in data.get("sections", {}).items()}
    dists = {}
    for n, spec in data.get("distributions", {}).items():
        secs = []
        for entry in _req(spec, "sections", f"distribution {n!r}"):
            if isinstance(entry, str) and entry in sections:
                secs.append(sections[entry])
            else:
                secs.append(_parse_section(A, entry))
        dists[n] = ds.Distribution(A, tuple(secs), int(_req(spec, "rank", n)))
    return Scene(
        name=data.get("name", name or "scene"),
        alg=A,
        forms=forms,
        sections=sections,
        distributions=dists,
        options=data.get("options", {}),
    )


def parse_scene(path) -> Scene:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"no scene file {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ParseError(f"{path}: line {err.lineno}: {err.msg}") from None
    return scene_from_dict(data, name=path.stem)


def emit_scene(scene: Scene) -> dict:
    """Normalized plain-data rendering; parsing it back reproduces the
    scene structure."""
    chart = scene.chart
    out = {"name": scene.name}
    cspec = {"coords": list(chart.coords)}
    if chart.periodic:
        cspec["periodic"] = {c: float(v) for c, v in chart.periodic.items()}
    if chart.ranges:
        cspec["ranges"] = {c: [float(lo), float(hi)]
                           for c, (lo, hi) in chart.ranges.items()}
    out["chart"] = cspec
    A = scene.alg
    d = A.divisor
    if A.kind == "tangent":
        aspec = {"kind": "tangent"}
    elif A.kind == "bk":
        aspec = {"kind": "bk", "coord": d.z, "k": d.k, "f": to_text(d.f),
                 "roots": [float(r) for r in d.roots]}
    elif A.kind == "elliptic":
        aspec = {"kind": "elliptic", "x": d.x, "y": d.y}
    elif A.kind == "selfcrossing":
        aspec = {"kind": "selfcrossing",
                 "components": [[z, k] for z, k, _f, _r in d.components]}
    elif A.kind == "lie_algebra":
        brackets = {}
        for (a, b), out_map in sorted(A.structure.items()):
            key = f"{A.frame_names[a]},{A.frame_names[b]}"
            brackets[key] = {A.frame_names[c]: str(Fraction(v.value))
                             for c, v in sorted(out_map.items())}
        aspec = {"kind": "lie_algebra", "frame": list(A.frame_names),
                 "brackets": brackets}
    else:
        raise UnknownKind(f"cannot serialize algebroid kind {A.kind!r}")
    out["algebroid"] = aspec
    if scene.forms:
        out["forms"] = {
            n: {"^".join(A.coframe_names[i] for i in key): to_text(c)
                for key, c in sorted(w.coeffs.items())}
            for n, w in scene.forms.items()}
    if scene.sections:
        out["sections"] = {n: [to_text(c) for c in s.coeffs]
                           for n, s in scene.sections.items()}
    if scene.distributions:
        out["distributions"] = {
            n: {"rank": D.rank,
                "sections": [[to_text(c) for c in s.coeffs] for s in D.sections]}
            for n, D in scene.distributions.items()}
    if scene.options:
        out["options"] = scene.options
    return out


def scene_digest(scene: Scene) -> str:
    blob = json.dumps(emit_scene(scene), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def bundled_scenes() -> dict:
    """Name -> path of every scene shipped with the package."""
    root = Path(__file__).parent / "scenes"
    return {p.stem: p for p in sorted(root.glob("*.json"))}


def _resolve(name) -> Path:
    p = Path(name)
    if p.exists():
        return p
    shipped = bundled_scenes()
    stem = p.stem if p.suffix == ".json" else str(name)
    if stem in shipped:
        return shipped[stem]
    raise ParseError(f"no scene file or bundled scene named {name!r}")


# reports -----------------------------------------------------------------


@dataclass(frozen=True)
class Check:
    name: str
    residual: float
    tolerance: float
    passed: bool
    direction: str = "below"


def _below(name, value, tol) -> Check:
    value, tol = float(value), float(tol)
    return Check(name, value, tol, value <= tol)


def _above(name, value, floor) -> Check:
    value, floor = float(value), float(floor)
    return Check(name, value, floor, value > floor, "above")


def _flag(name, ok) -> Check:
    return Check(name, 0.0 if ok else 1.0, 0.5, bool(ok))


@dataclass(frozen=True)
class Report:
    command: str
    scene: str
    digest: str
    seed: int
    checks: tuple
    artifacts: tuple = ()

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def as_dict(self) -> dict:
        return {
            "command": self.command,
            "scene": self.scene,
            "digest": self.digest,
            "seed": self.seed,
            "checks": [
                {"name": c.name, "residual": c.residual,
                 "tolerance": c.tolerance, "direction": c.direction,
                 "passed": c.passed}
                for c in self.checks],
            "artifacts": list(self.artifacts),
            "passed": self.passed,
        }


def emit_report(report, fmt: str = "text") -> str:
    """Stable rendering; the failing checks come first in text mode and
    residuals print with the same digits in both formats."""
    if fmt == "json":
        payload = (report.as_dict() if isinstance(report, Report)
                   else [r.as_dict() for r in report])
        return json.dumps(payload, indent=2)
    if fmt != "text":
        raise InvalidSpec(f"unknown report format {fmt!r}")
    reports = [report] if isinstance(report, Report) else list(report)
    lines = []
    for rep in reports:
        lines.append(f"# {rep.command} {rep.scene}  digest {rep.digest}  seed {rep.seed}")
        ordered = [c for c in rep.checks if not c.passed]
        ordered += [c for c in rep.checks if c.passed]
        for c in ordered:
            word = "PASS" if c.passed else "FAIL"
            rel = "<=" if c.direction == "below" else ">"
            lines.append(f"{word} {c.name}  {c.residual!r} {rel} {c.tolerance!r}")
        for a in rep.artifacts:
            lines.append(f"artifact {a}")
        lines.append(f"result {'PASS' if rep.passed else 'FAIL'}")
    return "\n".join(lines)


# shared knobs ------------------------------------------------------------


def _knobs(scene: Scene, flags):
    opts = scene.options
    seed = flags.seed if flags.seed is not None else int(opts.get("seed", 42))
    count = int(opts.get("count", 1000))
    tol = flags.tol
    return seed, count, tol


def _tol(flag_tol, default):
    return flag_tol if flag_tol is not None else default


def _expect(scene: Scene) -> dict:
    return scene.options.get("expect", {})


def _regularisations(scene: Scene, flags, seed) -> list:
    """(label, Regularisation) list for the scene's divisor kind."""
    A = scene.alg
    d = A.divisor
    if d is None:
        return []
    sign = flags.sign if flags.sign is not None else 1
    if flags.kind:
        kind = flags.kind
    elif flags.compact:
        kind = "compact"
    else:
        kind = None
    if d.kind == "bk":
        if kind is None:
            return [("trivial", rg.trivial(A, sign=sign)),
                    ("compact", rg.compact(A, sign=sign))]
        if kind == "trivial":
            return [("trivial", rg.trivial(A, sign=sign))]
        if kind == "compact":
            return [("compact", rg.compact(A, sign=sign))]
        if kind == "cutoff":
            inner = flags.eps if flags.eps is not None else 0.5
            return [("cutoff", rg.cutoff(A, inner, 2 * inner))]
        if kind == "intrinsic":
            return [("intrinsic", rg.intrinsic(A))]
        raise UnknownKind(f"no regularisation kind {kind!r} for a b^k divisor")
    if d.kind == "elliptic":
        if kind not in (None, "elliptic"):
            raise UnknownKind(f"an elliptic divisor only regularises as 'elliptic'")
        return [("elliptic", rg.elliptic(A))]
    if d.kind == "selfcrossing":
        if kind not in (None, "selfcrossing"):
            raise UnknownKind("a self-crossing divisor only regularises as 'selfcrossing'")
        return [("selfcrossing", rg.selfcrossing(A))]
    return []


# check blocks ------------------------------------------------------------


def _roundtrip_check(scene: Scene) -> Check:
    again = scene_from_dict(json.loads(json.dumps(emit_scene(scene))))
    return _flag("scene_roundtrip", emit_scene(again) == emit_scene(scene))


def _reg_checks(label, reg, count, seed, tol) -> list:
    rep = rg.verify_regularisation(reg, count=count, seed=seed,
                                   tol=_tol(tol, 1e-9))
    out = [_below(f"{label}_involutivity", rep.involutivity_residual, _tol(tol, 1e-9)),
           _below(f"{label}_tangency", rep.tangency_residual, _tol(tol, 1e-9)),
           _above(f"{label}_graphicality", rep.graphicality_min, 1e-6)]
    if not math.isnan(rep.morphism_residual):
        out.append(_below(f"{label}_morphism", rep.morphism_residual, _tol(tol, 1e-9)))
    out.append(_below(f"{label}_invariance", rep.invariance_residual, _tol(tol, 1e-9)))
    return out


def _lift_checks(scene, regs, tol) -> list:
    out = []
    if not regs:
        return out
    label, reg = regs[0]
    for name, w in sorted(scene.forms.items()):
        if w.degree >= scene.alg.rank:
            continue
        res = rg.canonical_lift_check(reg, w)
        out.append(_below(f"lift_commute_{name}", res, _tol(tol, 1e-10)))
    return out


def _unit_volume_check(scene, count, seed) -> Check:
    A = scene.alg
    alpha = scene.forms["alpha"]
    r = (A.rank - 1) // 2
    vol = alpha
    da = exterior_derivative(alpha)
    for _ in range(r):
        vol = wedge(vol, da)
    top = vol.get(tuple(range(A.rank)))
    dom = domain_for(A, count=count, seed=seed, avoid_divisor=False)
    vals = np.abs(np.broadcast_to(np.asarray(evaluate(top, dom.sample())), (count,)))
    return _below("volume_coefficient_unit", float(np.abs(vals - 1.0).max()), 1e-12)


def _contact_checks(scene: Scene, count, seed, tol) -> list:
    A = scene.alg
    if "alpha" not in scene.forms or A.rank < 3 or A.rank % 2 == 0:
        return []
    alpha = scene.forms["alpha"]
    if alpha.degree != 1:
        return []
    out = []
    ker = ds.kernel_sections(A, alpha)
    cls = ds.classify(ds.Distribution(A, tuple(ker), A.rank - 1), alpha=alpha)
    out.append(_flag("contact_classified", cls.has("contact")))
    if "volume_min_abs" in cls.details:
        out.append(_above("contact_volume_min", cls.details["volume_min_abs"], 1e-10))
    if scene.options.get("unit_volume"):
        out.append(_unit_volume_check(scene, count, seed))
    R = scene.sections.get("reeb")
    if R is not None:
        rep = ds.verify_reeb(A, alpha, R, tol=1e-12)
        out += [_below("reeb_pairing", rep.pairing_residual, rep.tol),
                _below("reeb_contraction", rep.contraction_residual, rep.tol),
                _below("reeb_on_locus", rep.on_locus_residual, rep.tol)]
    d = A.divisor
    if d is not None and d.kind == "bk":
        data = ct.induced_on_Z(A, alpha)
        div = ct.dividing_set(data.AZ.chart, data.u)
        out.append(_below("dividing_refinement", div.max_residual, 1e-10))
        expected = _expect(scene).get("dividing", {})
        for coord, targets in sorted(expected.items()):
            got = div.clusters(coord)
            dev = max(min(abs(g - t) for g in got) for t in targets) if got else math.inf
            out.append(_below(f"dividing_location_{coord}", dev, 1e-10))
        if R is not None:
            R_Z = ct.reeb_on_locus(A, R)
            rdc = ct.reeb_dividing_check(data, R_Z, div)
            out += [_below("reeb_gamma_tangency", rdc["tangency_on_dividing_set"], 1e-8),
                    _below("reeb_hamiltonian_identity", rdc["contraction_identity"], 1e-8),
                    _below("reeb_u_invariance", rdc["u_invariance"], 1e-8)]
        cos = ct.verify_cosymplectic(data)
        out += [_below("cosymplectic_exact_theta", cos["exact_theta"], _tol(tol, 1e-9)),
                _below("cosymplectic_exact_eta", cos["exact_eta"], _tol(tol, 1e-9)),
                _below("cosymplectic_pair_identity", cos["pair_identity"], _tol(tol, 1e-9))]
    return out


def _named_distributions(scene: Scene, regs) -> list:
    named = sorted(scene.distributions.items())
    if not named and regs:
        A = scene.alg
        frame = tuple(A.frame_section(a) for a in range(A.rank))
        named = [("frame", ds.Distribution(A, frame, A.rank))]
    return named


def _distribution_checks(scene: Scene, regs) -> list:
    out = []
    expect = _expect(scene)
    exp_ranks = expect.get("ranks", {})
    exp_labels = expect.get("labels", {})
    for name, D in _named_distributions(scene, regs):
        flag = ds.lie_flag(D)
        cls = ds.classify(D)
        if name in exp_ranks:
            out.append(_flag(f"flag_ranks_{name}",
                             list(flag.ranks) == list(exp_ranks[name])))
        if name in exp_labels:
            out.append(_flag(f"labels_{name}",
                             all(l in cls.labels for l in exp_labels[name])))
        if regs:
            _rl, reg = regs[0]
            secs = tuple(rg.lift_section(reg, s) for s in D.sections)
            lifted = ds.Distribution(secs[0].alg, secs, D.rank)
            lflag = ds.lie_flag(lifted)
            lcls = ds.classify(lifted)
            out.append(_flag(f"lift_flag_{name}", lflag.ranks == flag.ranks))
            out.append(_flag(f"lift_labels_{name}",
                             set(lcls.labels) == set(cls.labels)))
    return out


def _fatness_checks(scene: Scene) -> list:
    spec = scene.options.get("fatness")
    if not spec:
        return []
    D = scene.distributions[spec["distribution"]]
    rep = ds.is_fat(scene.alg, list(D.sections))
    return [_above("bott_min_det", rep.min_abs_det, float(spec.get("floor", 0.1)))]


def _prolong_checks(scene: Scene) -> list:
    spec = scene.options.get("prolong")
    if not spec:
        return []
    D = scene.distributions[spec["distribution"]]
    total, secs = ds.prolong(scene.alg, list(D.sections))
    cls = ds.classify(ds.Distribution(total, tuple(secs), 2))
    label = spec.get("expect_label", "engel")
    return [_flag(f"prolongation_{label}", cls.has(label))]


def _contact_elements_checks(scene: Scene, tol) -> list:
    if not scene.options.get("contact_elements"):
        return []
    A = scene.alg
    total, aform = ds.contact_elements(A)
    ker = ds.kernel_sections(total, aform)
    cls = ds.classify(ds.Distribution(total, tuple(ker), total.rank - 1),
                      alpha=aform)
    res = ds.contact_elements_symplectisation_residual(A)
    return [_flag("contact_elements_contact", cls.has("contact")),
            _below("contact_elements_symplectisation", res, _tol(tol, 1e-9))]


def _blowup_checks(scene: Scene, tol) -> list:
    if not scene.options.get("blowup"):
        return []
    bu = ct.blowup_pullback(scene.alg)
    out = [_below("blowup_radial", bu.residual_radial, _tol(tol, 1e-9)),
           _below("blowup_angular", bu.residual_angular, _tol(tol, 1e-9))]
    # the pulled-back contact-elements structure over the polar chart
    chart = Chart((bu.r_name, "th_base", "psi"),
                  periodic={"th_base": TAU, "psi": TAU},
                  ranges={bu.r_name: (-1.0, 1.0)})
    B = bk(chart, bu.r_name, k=1)
    alpha = B.form_from_labels({"theta0": ex.cos(var("psi")),
                                "dth_base": ex.sin(var("psi"))})
    ker = ds.kernel_sections(B, alpha)
    cls = ds.classify(ds.Distribution(B, tuple(ker), 2), alpha=alpha)
    out.append(_flag("blowup_b_contact", cls.has("contact")))
    data = ct.induced_on_Z(B, alpha)
    div = ct.dividing_set(data.AZ.chart, data.u)
    got = div.clusters("psi")
    dev = max(min(abs(g - t) for g in got) for t in (math.pi / 2, 3 * math.pi / 2))
    out.append(_below("blowup_dividing_at_half_pi", dev, 1e-10))
    return out


def _bsymp_checks(scene: Scene, label, A, omega, count, seed, tol) -> list:
    rep = jc.b_symplectic_regularise(A, omega, count=count, seed=seed,
                                     tol=_tol(tol, 1e-9))
    return [_below(f"{label}_closed", rep.closed_residual, _tol(tol, 1e-9)),
            _below(f"{label}_poisson", rep.poisson_residual, _tol(tol, 1e-9)),
            _above(f"{label}_leafwise_nondegenerate", rep.lift_min_det, 1e-8),
            _below(f"{label}_match", rep.match_residual, _tol(tol, 1e-9)),
            _below(f"{label}_tangency", rep.tangency_residual, _tol(tol, 1e-9))]


# commands ----------------------------------------------------------------


def cmd_verify(scene: Scene, flags, outdir) -> tuple:
    seed, count, tol = _knobs(scene, flags)
    checks = [_roundtrip_check(scene)]
    regs = _regularisations(scene, flags, seed)
    for label, reg in regs:
        checks += _reg_checks(label, reg, count, seed, tol)
    checks += _lift_checks(scene, regs, tol)
    checks += _contact_checks(scene, count, seed, tol)
    checks += _distribution_checks(scene, regs)
    checks += _fatness_checks(scene)
    checks += _prolong_checks(scene)
    checks += _contact_elements_checks(scene, tol)
    checks += _blowup_checks(scene, tol)
    if scene.options.get("bsymp_symplectisation") and "alpha" in scene.forms:
        sym = ct.symplectise(scene.alg, scene.forms["alpha"])
        checks += _bsymp_checks(scene, "symplectisation", sym.total, sym.omega,
                                min(count, 200), seed, tol)
    return checks, []


def cmd_regularise(scene: Scene, flags, outdir) -> tuple:
    seed, count, tol = _knobs(scene, flags)
    regs = _regularisations(scene, flags, seed)
    if not regs:
        raise NotBK("the scene has no divisor to regularise")
    checks = []
    for label, reg in regs:
        checks += _reg_checks(label, reg, count, seed, tol)
        checks += _lift_checks(scene, [(label, reg)], tol)
    return checks, []


def cmd_contact(scene: Scene, flags, outdir) -> tuple:
    seed, count, tol = _knobs(scene, flags)
    checks = _contact_checks(scene, count, seed, tol)
    checks += _contact_elements_checks(scene, tol)
    checks += _blowup_checks(scene, tol)
    d = scene.alg.divisor
    if d is not None and d.kind == "bk" and "alpha" in scene.forms:
        nf = ct.normal_form_map_check(d.k)
        checks.append(_below(f"normal_form_map_k{d.k}", nf.residual, 1e-10))
    if not checks:
        raise InvalidSpec("the scene carries no contact data")
    return checks, []


def _seed_lattice(spec) -> list:
    coords = sorted(spec)
    grids = [spec[c] for c in coords]
    return [dict(zip(coords, vals)) for vals in itertools.product(*grids)]


def _orbit_rows(rows, root_label, root, idx, orb, coords):
    if orb.path is None:
        return
    n = len(orb.path["t"])
    for i in range(0, n, 2):
        row = {root_label: repr(float(root)), "orbit": idx, "kind": orb.kind,
               "period": repr(orb.period), "t": repr(float(orb.path["t"][i]))}
        for c in coords:
            row[c] = repr(float(orb.path[c][i]))
        rows.append(row)


def _write_csv(path: Path, fieldnames, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames)
        w.writeheader()
        for row in rows:
            w.writerow(row)


def cmd_orbits(scene: Scene, flags, outdir) -> tuple:
    seed, count, tol = _knobs(scene, flags)
    opts = scene.options.get("orbits", {})
    expect = _expect(scene)
    R = scene.sections.get("reeb")
    if R is None:
        raise InvalidSpec("orbit hunting needs a 'reeb' section in the scene")
    A = scene.alg
    where = flags.where or ("central-leaf" if A.divisor is not None else "base")
    checks, artifacts = [], []
    otol = _tol(tol, 1e-9)
    if where == "central-leaf":
        reg = rg.compact(A, sign=flags.sign if flags.sign is not None else 1)
        RV = rg.lift_vector(reg, R)
        amb = dy.as_vector_field(A, R)
        seeds = _seed_lattice(opts.get("seeds", {}))
        vertical = tuple(opts.get("vertical", ()))
        period_t = expect.get("orbit_period")
        exp_counts = expect.get("orbit_counts")
        leaf_rows, base_rows = [], []
        for root in A.divisor.roots:
            leaf = rg.central_leaf(reg, root=root)
            W = leaf.restrict(RV)
            orbits = dy.hunt_orbits(W, seeds, vertical=vertical, tol=otol)
            tag = f"root{root:.6g}"
            counts = {}
            for idx, orb in enumerate(orbits):
                counts[orb.kind] = counts.get(orb.kind, 0) + 1
                if orb.closed:
                    checks.append(_below(f"{tag}_orbit{idx}_closure",
                                         orb.closure_residual, otol))
                    if period_t is not None and orb.kind in ("horizontal", "vertical"):
                        checks.append(_below(f"{tag}_orbit{idx}_period",
                                             abs(orb.period - period_t), 1e-6))
                    _orbit_rows(leaf_rows, "root", root, idx, orb,
                                W.alg.chart.coords)
                if orb.kind == "horizontal":
                    proj = dy.project_orbit(reg, W, orb, ambient=amb, root=root)
                    checks.append(_below(f"{tag}_orbit{idx}_projection",
                                         proj.velocity_residual, 1e-8))
                    n = len(proj.path["t"])
                    for i in range(0, n, 4):
                        row = {"root": repr(float(root)), "orbit": idx,
                               "kind": "projected", "period": repr(proj.period),
                               "t": repr(float(proj.path["t"][i]))}
                        for c in A.chart.coords:
                            row[c] = repr(float(proj.path[c][i]))
                        base_rows.append(row)
            if exp_counts:
                checks.append(_flag(f"{tag}_census", counts == dict(exp_counts)))
        leaf_coords = list(reg.total.chart.drop(A.divisor.z).coords)
        path = outdir / f"{scene.name}_orbits.csv"
        _write_csv(path, ["root", "orbit", "kind", "period", "t"] + leaf_coords,
                   leaf_rows)
        artifacts.append(str(path))
        if base_rows:
            bpath = outdir / f"{scene.name}_orbits_base.csv"
            _write_csv(bpath, ["root", "orbit", "kind", "period", "t"]
                       + list(A.chart.coords), base_rows)
            artifacts.append(str(bpath))
    elif where == "level":
        alpha = scene.forms["alpha"]
        eps = [flags.eps] if flags.eps is not None else list(opts.get("eps", (0.5,)))
        found = dy.level_set_orbits(A, alpha, R, eps,
                                    seed_coords=opts.get("level_seeds"), tol=otol)
        path_coords = [c for c in A.chart.coords
                       if found and c in found[0].orbit.path]
        rows = []
        for idx, lo in enumerate(found):
            checks.append(_below(f"eps{lo.epsilon:.6g}_orbit{idx}_closure",
                                 lo.orbit.closure_residual, otol))
            n = len(lo.orbit.path["t"])
            for i in range(0, n, 2):
                row = {"epsilon": repr(float(lo.epsilon)),
                       "level_root": repr(float(lo.root)),
                       "orbit": idx, "kind": lo.orbit.kind,
                       "period": repr(lo.orbit.period),
                       "t": repr(float(lo.orbit.path["t"][i]))}
                for c in path_coords:
                    row[c] = repr(float(lo.orbit.path[c][i]))
                rows.append(row)
        path = outdir / f"{scene.name}_level_orbits.csv"
        _write_csv(path, ["epsilon", "level_root", "orbit", "kind", "period", "t"]
                   + path_coords, rows)
        artifacts.append(str(path))
        checks.append(_flag("levels_found", bool(found)))
    elif where == "base":
        field = dy.as_vector_field(A, R)
        seeds = _seed_lattice(opts.get("seeds", {}))
        orbits = dy.hunt_orbits(field, seeds, tol=otol)
        rows = []
        for idx, orb in enumerate(orbits):
            if orb.closed:
                checks.append(_below(f"orbit{idx}_closure", orb.closure_residual, otol))
                _orbit_rows(rows, "root", 0.0, idx, orb, A.chart.coords)
        path = outdir / f"{scene.name}_orbits.csv"
        _write_csv(path, ["root", "orbit", "kind", "period", "t"]
                   + list(A.chart.coords), rows)
        artifacts.append(str(path))
    else:
        raise InvalidSpec(f"unknown orbit location {where!r}")
    return checks, artifacts


def cmd_jacobi(scene: Scene, flags, outdir) -> tuple:
    seed, count, tol = _knobs(scene, flags)
    jtol = _tol(tol, 1e-9)
    checks = []
    ran = False
    if "alpha" in scene.forms and scene.alg.rank % 2 == 1 and scene.alg.rank >= 3:
        ran = True
        pair = jc.pair_from_contact(scene.alg, scene.forms["alpha"])
        rep = jc.verify_pair(pair, count=min(count, 500), seed=seed, tol=jtol)
        checks += [_below("pair_identity", rep.identity_residual, jtol),
                   _below("pair_invariance", rep.invariance_residual, jtol),
                   _below("bracket_jacobi",
                          jc.jacobi_identity_residual(pair, seed=seed), 1e-8)]
        if flags.poissonise:
            P = jc.poissonise(pair, flags.poissonise, tol=jtol)
            res = jc.mv_residual(jc.schouten(P, P),
                                 jc.Multivector(P.chart, 3, {}),
                                 jc.chart_domain(P.chart, min(count, 300), seed))
            checks.append(_below(f"poissonise_{flags.poissonise}_schouten", res, jtol))
            other = jc.poissonise(pair, 3 - flags.poissonise, tol=jtol)
            conj = jc.invert_fibre(P, "t")
            same = (set(conj.coeffs) == set(other.coeffs)
                    and all(ex.structurally_equal(conj.coeffs[k], other.coeffs[k])
                            for k in other.coeffs))
            checks.append(_flag("fibre_inversion_structural", same))
            deg = jc.fibre_degree(P, "t")
            want = 1 if flags.poissonise == 1 else -1
            checks.append(_flag("fibre_degree", deg == want))
        if flags.modular:
            mj = jc.modular_jacobi(pair)
            mrep = jc.verify_pair(mj, count=min(count, 400), seed=seed, tol=jtol)
            checks += [_below("modular_pair_identity", mrep.identity_residual, jtol),
                       _below("modular_pair_invariance", mrep.invariance_residual, jtol)]
        if flags.diagram:
            res = jc.commuting_diagram_check(pair, count=min(count, 400))
            checks.append(_below("poissonisation_diagram", res, 1e-8))
    d = scene.alg.divisor
    if "omega" in scene.forms and d is not None and d.kind == "bk":
        ran = True
        checks += _bsymp_checks(scene, "bsymp", scene.alg, scene.forms["omega"],
                                count, seed, tol)
    if scene.options.get("bsymp_symplectisation") and "alpha" in scene.forms:
        ran = True
        sym = ct.symplectise(scene.alg, scene.forms["alpha"])
        checks += _bsymp_checks(scene, "symplectisation", sym.total, sym.omega,
                                min(count, 200), seed, tol)
    if not ran:
        raise InvalidSpec("the scene carries neither a contact form nor a "
                          "b-symplectic 2-form")
    return checks, []


# the foliation picture ---------------------------------------------------


def _svg_header(w, h):
    return [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
            f'viewBox="0 0 {w} {h}">',
            f'<rect width="{w}" height="{h}" fill="white"/>']


def _polyline(points, colour, width=1.2, dash=None):
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return (f'<polyline points="{pts}" fill="none" stroke="{colour}" '
            f'stroke-width="{width}"{extra}/>')


def cmd_plot(scene: Scene, flags, outdir) -> tuple:
    A = scene.alg
    d = A.divisor
    if d is None or d.kind != "bk":
        raise NotBK("the foliation picture is drawn for b^k scenes")
    regs = _regularisations(scene, flags, 0)
    label, reg = regs[0]
    zc = d.z
    sc = reg.vertical[0]
    total = reg.total.chart
    fixed = {}
    for c in total.coords:
        if c in (zc, sc):
            continue
        lo, hi = total.range_of(c)
        fixed[c] = 0.5 * (lo + hi)
    X0 = reg.frame[0]
    two = Chart((zc, sc), ranges={zc: total.range_of(zc), sc: total.range_of(sc)})
    T2 = tangent(two)
    binding = {c: ex.const(Fraction(v)) for c, v in fixed.items()}
    comps = [ex.canonical(ex.substitute(X0.coeffs[total.index(c)], binding))
             for c in (zc, sc)]
    field = Section(T2, comps)
    zlo, zhi = total.range_of(zc)
    slo, shi = total.range_of(sc)
    W, H, M = 640, 420, 46

    def to_px(zv, sv):
        x = M + (zv - zlo) / (zhi - zlo) * (W - 2 * M)
        y = H - M - (sv - slo) / (shi - slo) * (H - 2 * M)
        return x, y

    lines = _svg_header(W, H)
    lines.append(_polyline([to_px(zlo, slo), to_px(zhi, slo), to_px(zhi, shi),
                            to_px(zlo, shi), to_px(zlo, slo)], "#444", 1.0))
    for root in d.roots:
        if zlo <= root <= zhi:
            lines.append(_polyline([to_px(root, slo), to_px(root, shi)],
                                   "#c22", 1.6, dash="6 4"))
    s_mid = 0.5 * (slo + shi)
    starts = [zlo + (zhi - zlo) * j / 12.0 for j in range(13)]
    starts = [z0 for z0 in starts
              if all(abs(z0 - r) > 0.02 * (zhi - zlo) for r in d.roots)]
    for z0 in starts:
        for direction in (1.0, -1.0):
            fld = field if direction > 0 else Section(
                T2, [ex.neg(c) for c in field.coeffs])
            fl = dy.flow(fld, {zc: z0, sc: s_mid}, 4.0)
            pts = []
            for t in np.linspace(0.0, 4.0, 90):
                zv, sv = fl.at(t)
                if not (zlo <= zv <= zhi and slo <= sv <= shi):
                    break
                pts.append(to_px(float(zv), float(sv)))
            if len(pts) > 1:
                lines.append(_polyline(pts, "#2562c2"))
    lines.append(f'<text x="{W - M}" y="{H - M + 28}" font-size="14" '
                 f'text-anchor="end" font-family="monospace">{zc}</text>')
    lines.append(f'<text x="{M - 30}" y="{M}" font-size="14" '
                 f'font-family="monospace">{sc}</text>')
    lines.append("</svg>")
    path = outdir / f"{scene.name}_foliation.svg"
    path.write_text("\n".join(lines) + "\n")
    return [_flag("foliation_leaves_drawn", len(starts) > 0)], [str(path)]


_DISPATCH = {
    "verify": cmd_verify,
    "regularise": cmd_regularise,
    "contact": cmd_contact,
    "orbits": cmd_orbits,
    "jacobi": cmd_jacobi,
    "plot": cmd_plot,
}


def execute(scene: Scene, command: str, flags) -> Report:
    if command not in _DISPATCH:
        raise UnknownKind(f"unknown command {command!r}")
    outdir = Path(flags.out) if flags.out else Path(".")
    outdir.mkdir(parents=True, exist_ok=True)
    checks, artifacts = _DISPATCH[command](scene, flags, outdir)
    seed, _count, _tol_ = _knobs(scene, flags)
    return Report(
        command=command,
        scene=scene.name,
        digest=scene_digest(scene),
        seed=seed,
        checks=tuple(checks),
        artifacts=tuple(artifacts),
    )


# entry point -------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--kind", help="regularisation kind override")
    common.add_argument("--compact", action="store_true",
                        help="shorthand for --kind compact")
    common.add_argument("--sign", type=int, choices=(1, -1), default=None)
    common.add_argument("--eps", type=float, default=None)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--tol", type=float, default=None)
    common.add_argument("--out", default=None, help="artifact directory")
    common.add_argument("--format", choices=("json", "text"), default="text")
    p = argparse.ArgumentParser(prog="balgebroid",
                                description="chart-level checks for divisor-type algebroids")
    sub = p.add_subparsers(dest="command", required=True)
    pv = sub.add_parser("verify", parents=[common])
    pv.add_argument("scene", nargs="?")
    pv.add_argument("--all", action="store_true", help="run every bundled scene")
    for name in ("regularise", "contact", "plot"):
        ps = sub.add_parser(name, parents=[common])
        ps.add_argument("scene")
    po = sub.add_parser("orbits", parents=[common])
    po.add_argument("scene")
    po.add_argument("--where", choices=("central-leaf", "level", "base"),
                    default=None)
    pj = sub.add_parser("jacobi", parents=[common])
    pj.add_argument("scene")
    pj.add_argument("--poissonise", type=int, choices=(1, 2), default=None)
    pj.add_argument("--modular", action="store_true")
    pj.add_argument("--diagram", action="store_true")
    return p


def _ensure_flag_defaults(args) -> None:
    for name in ("where", "poissonise", "modular", "diagram", "all"):
        if not hasattr(args, name):
            setattr(args, name, None)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    _ensure_flag_defaults(args)
    if args.command == "verify" and args.all:
        reports = []
        for name, path in sorted(bundled_scenes().items()):
            reports.append(execute(parse_scene(path), "verify", args))
        print(emit_report(reports, args.format))
        ok = all(r.passed for r in reports)
        if args.out:
            Path(args.out, "verify_all." + ("json" if args.format == "json" else "txt")
                 ).write_text(emit_report(reports, args.format) + "\n")
        return 0 if ok else 1
    if not args.scene:
        print("a scene file is required (or verify --all)", file=sys.stderr)
        return 2
    scene = parse_scene(_resolve(args.scene))
    report = execute(scene, args.command, args)
    rendered = emit_report(report, args.format)
    print(rendered)
    if args.out:
        suffix = "json" if args.format == "json" else "txt"
        Path(args.out, f"{scene.name}_{args.command}.{suffix}").write_text(
            rendered + "\n")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
