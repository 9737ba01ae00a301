import numpy as np

from balgebroid import expr as ex
from balgebroid import jacobi as jc
from balgebroid.algebroid import Chart, bk, tangent
from balgebroid.contact import symplectise
from balgebroid.expr import var

PI = float(np.pi)


def check(label, value, tol=1e-9):
    ok = value <= tol
    print(f"{'PASS' if ok else 'FAIL'} {label}: {value:.3e}")
    assert ok, label


def check_true(label, cond):
    print(f"{'PASS' if cond else 'FAIL'} {label}")
    assert cond, label


# 1. schouten oracles
c3 = Chart(("x", "y", "z"))
x, y, z = var("x"), var("y"), var("z")
dx = jc.vector_field(c3, [1, 0, 0])
dy = jc.vector_field(c3, [0, 1, 0])
dom3 = jc.chart_domain(c3, 200, 1)

lie = jc.schouten(dx, dy)
check("[dx,dy] = 0", jc.mv_residual(lie, jc.Multivector(c3, 0, {}), dom3))

P = jc.bivector(c3, {(0, 1): x})  # x dx^dy
br = jc.schouten(P, dx)           # expect -dx^dy
check("[x dx^dy, dx] = -dx^dy",
      jc.mv_residual(br, jc.bivector(c3, {(0, 1): -1}), dom3))

Xf = jc.vector_field(c3, [x, ex.mul(x, y), 0])
f = ex.add(ex.mul(x, x), ex.mul(y, z))
xf = jc.schouten(Xf, jc.Multivector(c3, 0, {(): f}))
expect = jc.Multivector(c3, 0, {(): ex.add(ex.mul(x, ex.add(x, x)),
                                           ex.mul(x, y, z))})
check("[X, f] = X(f)", jc.mv_residual(xf, expect, dom3))

# 2. pair from the standard contact form
A3 = tangent(c3)
alpha = A3.form_from_labels({"dz": 1, "dy": x})
pair = jc.pair_from_contact(A3, alpha)
lam_expect = jc.bivector(c3, {(0, 1): -1, (0, 2): x})
r_expect = jc.vector_field(c3, [0, 0, 1])
check("darboux Lambda", jc.mv_residual(pair.lam, lam_expect, dom3))
check("darboux R", jc.mv_residual(pair.r, r_expect, dom3))
rep = jc.verify_pair(pair)
check("darboux pair identity", rep.identity_residual)
check("darboux pair invariance", rep.invariance_residual)
check("darboux bracket jacobi", jc.jacobi_identity_residual(pair), 1e-8)

# displayed pair of the adapted contact form on the b-chart
c5 = Chart(("z", "x1", "y1", "x2", "y2"))
z5, x1, y1, x2, y2 = (var(n) for n in c5.coords)
B5 = bk(c5, "z", k=1)
al5 = B5.form_from_labels({"dx1": 1, "theta0": ex.add(1, y1), "dy2": x2})
pair5 = jc.pair_from_contact(B5, al5)
dom5 = jc.chart_domain(c5, 300, 2)
lam5_expect = jc.bivector(c5, {
    (0, 2): z5,                      # z dz^dy1
    (3, 4): -1,                      # dy2^dx2
    (1, 2): ex.neg(ex.add(y1, 1)),   # (y1+1) dy1^dx1
    (1, 3): ex.neg(x2),              # x2 dx2^dx1
})
r5_expect = jc.vector_field(c5, [0, 1, 0, 0, 0])
check("adapted Lambda", jc.mv_residual(pair5.lam, lam5_expect, dom5))
check("adapted R", jc.mv_residual(pair5.r, r5_expect, dom5))
rep5 = jc.verify_pair(pair5)
check("adapted pair identity", rep5.identity_residual)
check("adapted pair invariance", rep5.invariance_residual)

pz = jc.restrict_pair(pair5, "z")
c4 = pz.chart
dom4 = jc.chart_domain(c4, 200, 3)
lamz = jc.bivector(c4, {(0, 1): ex.neg(ex.add(y1, 1)), (0, 2): ex.neg(x2),
                        (2, 3): -1})
check("restricted Lambda", jc.mv_residual(pz.lam, lamz, dom4))
check("restricted R", jc.mv_residual(pz.r, jc.vector_field(c4, [1, 0, 0, 0]),
                                     dom4))

# 3. jet algebroid axioms
J = jc.jet_algebroid(pair)
res = jc.axiom_residuals(J, count=150)
check("jet anchor morphism", res["anchor_morphism"])
check("jet jacobi", res["jacobi"])

# 4. density representations
reps = jc.canonical_reps(pair)
check("nabla4 = nabla3 x nabla2", reps.decomposition_residual())
check("nabla2 flatness", reps.flatness_residual(), 1e-8)

reps5 = jc.canonical_reps(pair5)
check("adapted nabla4 = nabla3 x nabla2", reps5.decomposition_residual())

# 5. poissonisation
p1 = jc.poissonise(pair, 1)
p2 = jc.poissonise(pair, 2)
conj = jc.invert_fibre(p2, "t")
keys_ok = set(conj.coeffs) == set(p1.coeffs)
eq = keys_ok and all(ex.structurally_equal(conj.coeffs[k], p1.coeffs[k])
                     for k in p1.coeffs)
check_true("t -> 1/t maps variant 2 to variant 1 structurally", eq)
check_true("fibre degrees (1, -1)",
           jc.fibre_degree(p1, "t") == 1 and jc.fibre_degree(p2, "t") == -1)

# 6. modular structures and the diagram
mp = jc.modular_poisson(jc.bivector(c3, {(0, 1): ex.mul(z, x)}), check=False)
check_true("modular structure has degree 0", jc.fibre_degree(mp, "t") == 0)

mj = jc.modular_jacobi(pair)
check("diagram (darboux)", jc.commuting_diagram_check(pair, count=300), 1e-8)
check("diagram (adapted)", jc.commuting_diagram_check(pair5, count=300), 1e-8)
pois_pair = jc.JacobiPair(jc.bivector(c3, {(0, 1): x}),
                          jc.vector_field(c3, [0, 0, 0]))
check("diagram (poisson pair)", jc.commuting_diagram_check(pois_pair, count=300),
      1e-8)

# 7. b-symplectic regularisation
cb = Chart(("z", "x"))
Ab = bk(cb, "z", k=1)
wb = Ab.form(2, {(0, 1): 1})
repb = jc.b_symplectic_regularise(Ab, wb)
check("b-line inverse matches z dz^dx",
      jc.mv_residual(repb.pi, jc.bivector(cb, {(0, 1): z}),
                     jc.chart_domain(cb, 200, 4)))
check("b-line match", repb.match_residual)
check("b-line tangency", repb.tangency_residual)
check_true("b-line report passes", repb.passed)

t3 = Chart(("t1", "t2", "t3"), periodic={"t1": 2 * PI, "t2": 2 * PI,
                                         "t3": 2 * PI})
At3 = bk(t3, "t1", k=1, f=ex.sin(var("t1")), roots=(0.0, PI))
al_t3 = At3.form_from_labels({"theta0": ex.sin(var("t2")),
                              "dt3": ex.cos(var("t2"))})
sym = symplectise(At3, al_t3)
rept = jc.b_symplectic_regularise(sym.total, sym.omega, count=150)
check("torus symplectisation match", rept.match_residual)
check("torus symplectisation tangency", rept.tangency_residual)
check("torus symplectisation poisson", rept.poisson_residual)
check_true("torus report passes", rept.passed)

# 8. guards
from balgebroid.errors import NotContact, NotJacobi, NonTransverse, NotSymplectic

try:
    jc.pair_from_contact(A3, A3.form_from_labels({"dz": 1}))
    bad = False
except NotContact:
    bad = True
check_true("degenerate form raises NotContact", bad)

broken = jc.JacobiPair(jc.bivector(c3, {(0, 1): 1}),
                       jc.vector_field(c3, [0, 0, 1]))
repx = jc.verify_pair(broken)
check_true("corrupted pair flagged with witness",
           not repx.passed and repx.witness is not None)
try:
    jc.poissonise(broken, 1)
    bad = False
except NotJacobi:
    bad = True
check_true("poissonise rejects a broken pair", bad)

try:
    jc.restrict_pair(pair, "x")
    bad = False
except NonTransverse:
    bad = True
check_true("restriction off the hypersurface raises NonTransverse", bad)

try:
    jc.b_symplectic_regularise(Ab, Ab.form(2, {}))
    bad = False
except NotSymplectic:
    bad = True
check_true("degenerate 2-form raises NotSymplectic", bad)

print("all smoke checks passed")
