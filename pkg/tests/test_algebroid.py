"""Charts, anchored frames, forms and the calculus that ties them."""

import math
from fractions import Fraction

import numpy as np
import pytest

from balgebroid import algebroid as ag
from balgebroid import expr as ex
from balgebroid.algebroid import (AForm, Chart, Section, bk, bracket,
                                  domain_for, elliptic, exterior_derivative,
                                  form_max_abs, form_residual, interior,
                                  lie_algebra, pullback_product, residue,
                                  restrict_to_locus, selfcrossing, tangent,
                                  wedge)
from balgebroid.errors import (DuplicateCoordinate, InvalidSpec,
                               UnknownCoordinate)
from balgebroid.expr import const, evaluate, parse, var

TAU = 2 * math.pi


def test_chart_basics():
    c = Chart(("z", "x"), ranges={"z": (-2.0, 2.0)})
    assert c.index("x") == 1
    assert c.range_of("z") == (-2.0, 2.0)
    assert c.range_of("x") == (-1.0, 1.0)
    assert c.drop("z").coords == ("x",)
    assert c.extend(["s"]).coords == ("z", "x", "s")
    circle = Chart(("th",), periodic={"th": TAU})
    assert circle.range_of("th") == (0.0, TAU)


def test_chart_rejects_duplicates():
    with pytest.raises(DuplicateCoordinate):
        Chart(("x", "x"))


def test_bk_anchor_scales_the_divisor_direction():
    c = Chart(("z", "x"))
    for k in (1, 2, 3):
        A = bk(c, "z", k=k)
        m = A.anchor_matrix_at({"z": 0.7, "x": 0.2})
        expect = np.array([[0.7**k, 0.0], [0.0, 1.0]])
        assert np.allclose(m, expect)
    with pytest.raises(UnknownCoordinate):
        bk(c, "q", k=1)


def test_bk_general_divisor_function():
    c = Chart(("z", "x"))
    A = bk(c, "z", k=2, f=ex.sin(var("z")), roots=(0.0,))
    m = A.anchor_matrix_at({"z": 0.9, "x": 0.5})
    assert abs(m[0, 0] - math.sin(0.9) ** 2) < 1e-12
    with pytest.raises(InvalidSpec):
        bk(c, "z", k=1, f=parse("z - x^2"), roots=(0.0,))


def test_elliptic_polar_frame():
    A = elliptic(Chart(("x", "y")), "x", "y")
    assert A.frame_names == ("e_r", "e_phi")
    m = A.anchor_matrix_at({"x": 0.3, "y": 0.4})
    # columns: radial x dx + y dy, angular -y dx + x dy
    assert np.allclose(m, [[0.3, -0.4], [0.4, 0.3]])


def test_selfcrossing_coframe_labels():
    A = selfcrossing(Chart(("x", "y")), [("x", 1), ("y", 1)])
    assert A.coframe_names == ("theta0_x", "theta1_y")
    m = A.anchor_matrix_at({"x": 0.2, "y": -0.5})
    assert np.allclose(m, [[0.2, 0.0], [0.0, -0.5]])


def test_frame_coframe_duality():
    A = bk(Chart(("z", "x")), "z", k=1)
    for a in range(A.rank):
        for b in range(A.rank):
            w = AForm(A, 1, {(b,): ex._ONE})
            got = interior(A.frame_section(a), w).coeffs.get((), ex._ZERO)
            want = 1.0 if a == b else 0.0
            assert abs(evaluate(got, {"z": 0.3, "x": 0.1}) - want) < 1e-12


@pytest.mark.parametrize("make", [
    lambda: tangent(Chart(("x", "y", "z"))),
    lambda: bk(Chart(("z", "x", "y")), "z", k=2),
    lambda: elliptic(Chart(("x", "y")), "x", "y"),
    lambda: selfcrossing(Chart(("x", "y")), [("x", 1), ("y", 2)]),
])
def test_d_squared_vanishes(make):
    A = make()
    dom = domain_for(A, count=200, seed=2)
    f = parse("sin(x) + x*y" if "z" not in A.chart.coords else "sin(x)*z + y")
    w0 = AForm(A, 0, {(): f})
    assert form_max_abs(exterior_derivative(exterior_derivative(w0)), dom) < 1e-9
    w1 = AForm(A, 1, {(0,): parse("x^2"), (1,): parse("sin(x)")})
    if A.rank >= 3:
        assert form_max_abs(exterior_derivative(exterior_derivative(w1)),
                            dom) < 1e-9


def test_wedge_grading():
    A = tangent(Chart(("x", "y", "z")))
    dom = domain_for(A, count=100, seed=4)
    a = AForm(A, 1, {(0,): parse("x"), (2,): parse("y")})
    b = AForm(A, 1, {(1,): parse("1 + z^2")})
    ab = wedge(a, b)
    ba = wedge(b, a)
    flipped = AForm(A, 2, {k: ex.neg(c) for k, c in ba.coeffs.items()})
    assert form_residual(ab, flipped, dom) < 1e-12
    c2 = wedge(a, wedge(b, a))
    assert form_max_abs(c2, dom) < 1e-12  # a ^ b ^ a dies


def test_bracket_is_a_derivation():
    # [X, fY] = f [X, Y] + (rho X f) Y on sampled points
    A = bk(Chart(("z", "x")), "z", k=1)
    X = A.section([parse("1"), parse("x")])
    Y = A.section([parse("x"), parse("z")])
    f = parse("z + x^2")
    fY = A.section([ex.mul(f, c) for c in Y.coeffs])
    lhs = bracket(X, fY)
    base = bracket(X, Y)
    rho_f = X.apply(f)
    rhs = [ex.add(ex.mul(f, base.coeffs[a]), ex.mul(rho_f, Y.coeffs[a]))
           for a in range(A.rank)]
    dom = domain_for(A, count=150, seed=6)
    pts = dom.sample()
    for a in range(A.rank):
        dev = evaluate(lhs.coeffs[a], pts) - evaluate(rhs[a], pts)
        assert float(np.abs(np.asarray(dev)).max()) < 1e-9


def test_bracket_antisymmetry_and_jacobi():
    A = elliptic(Chart(("x", "y")), "x", "y")
    X = A.section([parse("x"), parse("1")])
    Y = A.section([parse("y^2"), parse("x")])
    Z = A.section([parse("1"), parse("x*y")])
    dom = domain_for(A, count=150, seed=8)
    pts = dom.sample()

    def residual(S, T):
        return max(float(np.abs(np.asarray(
            evaluate(ex.add(S.coeffs[a], T.coeffs[a]), pts))).max())
            for a in range(A.rank))

    assert residual(bracket(X, Y), bracket(Y, X)) < 1e-9
    jac = [bracket(X, bracket(Y, Z)), bracket(Y, bracket(Z, X)),
           bracket(Z, bracket(X, Y))]
    total = [ex.add(*(j.coeffs[a] for j in jac)) for a in range(A.rank)]
    worst = max(float(np.abs(np.asarray(evaluate(t, pts))).max())
                for t in total)
    assert worst < 1e-8


def test_lie_algebra_checks_jacobi():
    c = Chart(("q",))
    heis = lie_algebra(c, ("p", "q1", "z2"), {("p", "q1"): {"z2": Fraction(1)}})
    assert heis.rank == 3
    assert np.allclose(heis.anchor_matrix_at({"q": 0.1}), np.zeros((1, 3)))
    with pytest.raises(InvalidSpec):
        lie_algebra(c, ("a", "b", "c2"),
                    {("a", "b"): {"c2": Fraction(1)},
                     ("a", "c2"): {"a": Fraction(1)}})


def test_residue_and_locus_restriction():
    c3 = Chart(("t1", "t2", "t3"), periodic={c: TAU for c in ("t1", "t2", "t3")})
    A = bk(c3, "t1", k=1, f=ex.sin(var("t1")), roots=(0.0, math.pi))
    al = A.form_from_labels({"theta0": ex.sin(var("t2")),
                             "dt3": ex.cos(var("t2"))})
    res = residue(A, al, root=0.0)
    assert res.degree == 0
    assert res.alg.chart.coords == ("t2", "t3")
    p = {"t2": 0.7, "t3": 0.0}
    assert abs(evaluate(res.coeffs[()], p) - math.sin(0.7)) < 1e-12
    AZ, u, beta = restrict_to_locus(A, al, root=0.0)
    assert AZ.kind == "tangent"
    assert abs(evaluate(u, p) - math.sin(0.7)) < 1e-12
    assert set(beta.coeffs) == {(1,)}
    assert abs(evaluate(beta.coeffs[(1,)], p) - math.cos(0.7)) < 1e-12


def test_form_from_labels_guards():
    A = bk(Chart(("z", "x")), "z", k=1)
    with pytest.raises(UnknownCoordinate):
        A.form_from_labels({"dz": 1})  # divisor slot is theta0 here


def test_domain_avoids_the_divisor():
    A = bk(Chart(("z", "x")), "z", k=1)
    zs = domain_for(A, count=500, seed=10).sample()["z"]
    assert np.abs(zs).min() > 1e-3


def test_pullback_product_extends_the_chart():
    A = bk(Chart(("z", "x")), "z", k=1)
    T = pullback_product(A, ["s"], periodic={"s": 1.0})
    assert T.chart.coords == ("z", "x", "s")
    assert T.rank == A.rank + 1
    m = T.anchor_matrix_at({"z": 0.5, "x": 0.0, "s": 0.2})
    assert np.allclose(m[:2, :2], A.anchor_matrix_at({"z": 0.5, "x": 0.0}))
    assert np.allclose(m[2, :], [0.0, 0.0, 1.0])
