import math
import time

from balgebroid import algebroid as ag
from balgebroid import dynamics as dy
from balgebroid import expr as ex
from balgebroid import regularise as rg
from balgebroid.expr import var

TAU = 2 * math.pi
t_start = time.time()

chart = ag.Chart(("t1", "t2", "t3"), periodic={"t1": TAU, "t2": TAU, "t3": TAU})
A = ag.bk(chart, "t1", k=1, f=ex.sin(var("t1")), roots=(0.0, math.pi))
reg = rg.compact(A)

R = A.section([ex.sin(var("t2")), ex._ZERO, ex.cos(var("t2"))])
RV = rg.lift_vector(reg, R)
leaf = rg.central_leaf(reg, root=0.0)
W = leaf.restrict(RV)
print("leaf chart:", W.alg.chart.coords, dict(W.alg.chart.periodic))
print("leaf field:", [str(c) for c in W.coeffs])

# plain flow sanity: horizontal orbit at t2 = 0 has period 2 pi
fl = dy.flow(W, {"t2": 0.0, "t3": 0.25, "s": 1.0}, TAU)
end = fl.end_point(W.alg.chart)
print("flow end:", {k: round(v, 12) for k, v in end.items()})

# return map on t3
ret = dy.return_map(W, {"t2": 0.0, "t3": 0.25, "s": 1.0}, "t3")
print("return: T =", ret.time, "disp =", {k: round(v, 12) for k, v in ret.displacement.items()})

seeds = [{"t2": j * math.pi / 4, "t3": 0.1, "s": 0.2} for j in range(8)]
orbits = dy.hunt_orbits(W, seeds, vertical=("s",))
for o in orbits:
    print(f"{o.kind:10s} t2={o.point['t2']:.6f} period={o.period:.9f} "
          f"resid={o.closure_residual:.2e} windings={o.windings} ds={o.vertical_shift:+.2e}")

# expected: horizontal at t2 in {0, pi} period 2 pi; vertical at pi/2, 3pi/2;
# slanted (closed) at odd multiples of pi/4 with period 2 pi sqrt(2)
hor = [o for o in orbits if o.kind == "horizontal"]
ver = [o for o in orbits if o.kind == "vertical"]
sla = [o for o in orbits if o.kind == "slanted"]
assert len(hor) == 2 and len(ver) == 2 and len(sla) == 4, (len(hor), len(ver), len(sla))
for o in hor:
    assert abs(o.period - TAU) < 1e-6 and o.closure_residual < 1e-9, o
    assert abs(o.vertical_shift) < 1e-6
for o in ver:
    assert o.closed and abs(o.period - TAU) < 1e-6, o
for o in sla:
    assert o.closed and abs(o.period - TAU * math.sqrt(2)) < 1e-6, o

# projection of a horizontal orbit back to the base torus
rho_R = dy.as_vector_field(A, R)
proj = dy.project_orbit(reg, W, hor[0], ambient=rho_R, root=0.0)
print("projected period:", proj.period, "velocity residual:", proj.velocity_residual)
assert proj.velocity_residual < 1e-8
try:
    dy.project_orbit(reg, W, ver[0], ambient=rho_R, root=0.0)
    print("FAIL: vertical orbit projected")
except Exception as exc:
    print("vertical projection ->", type(exc).__name__)

# slanted early exit on a non-compact vertical factor
reg_t = rg.trivial(A)
leaf_t = rg.central_leaf(reg_t, root=0.0)
Wt = leaf_t.restrict(rg.lift_vector(reg_t, R))
o = dy.find_orbit(Wt, {"t2": 1.0, "t3": 0.1, "s": 0.0}, vertical=("s",))
print("non-compact slanted:", o.kind, o.closed, "ds =", o.vertical_shift)
assert o.kind == "slanted" and not o.closed

# level set orbits of the ambient Reeb field at u = 1/2
alpha = A.form_from_labels({"theta0": ex.sin(var("t2")), "dt3": ex.cos(var("t2"))})
found = dy.level_set_orbits(A, alpha, R, 0.5,
                            seed_coords={"t1": [0.0, math.pi], "t3": [0.0]})
expect = 2 * TAU / math.sqrt(3)
for lo in found:
    print(f"level t2={lo.root:.9f}: {lo.orbit.kind} period={lo.orbit.period:.9f} "
          f"(expect {expect:.9f}) resid={lo.orbit.closure_residual:.2e}")
    assert abs(lo.orbit.period - expect) < 1e-6 and lo.orbit.kind == "generic"
assert len(found) == 4, len(found)

# eps = 0 delegates to the dividing-set circles: period 2 pi orbits
at_zero = dy.level_set_orbits(A, alpha, R, 0.0,
                              seed_coords={"t1": [0.0, math.pi], "t3": [0.0]})
for lo in at_zero:
    print(f"level t2={lo.root:.9f}: period={lo.orbit.period:.9f}")
    assert abs(lo.orbit.period - TAU) < 1e-6

# singular level guards
for bad in (1.0, 2.0):
    try:
        dy.level_set_orbits(A, alpha, R, bad)
        print("FAIL: no SingularLevel at", bad)
    except Exception as exc:
        print(f"eps={bad} ->", type(exc).__name__)

# return map matches the closed-form rotation rate on Z at t2 = 0.1
AZ_field = dy.as_vector_field(A, R)
zc = [ex.canonical(ex.substitute(c, {"t1": ex._ZERO})) for c in AZ_field.coeffs]
WZ = ag.Section(ag.tangent(chart.drop("t1")), [zc[1], zc[2]])
rr = dy.return_map(WZ, {"t2": 0.1, "t3": 0.0}, "t3")
print("Z return time:", rr.time, "expect", TAU / math.cos(0.1))
assert abs(rr.time - TAU / math.cos(0.1)) < 1e-9

# a field pointing along the section gives no return
try:
    dy.return_map(WZ, {"t2": 0.1, "t3": 0.0}, "t2", t_max=10.0)
    print("FAIL: tangential return accepted")
except Exception as exc:
    print("tangential section ->", type(exc).__name__)

print(f"elapsed {time.time() - t_start:.2f}s")
