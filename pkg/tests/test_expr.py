"""Expression layer: parsing, derivatives against finite differences,
canonical forms, sampling domains."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from balgebroid import expr as ex
from balgebroid.errors import DomainError, EmptyDomain, ParseError
from balgebroid.expr import (SampleDomain, canonical, const, differentiate,
                             evaluate, numeric_equiv, parse, structurally_equal,
                             structurally_zero, substitute, to_text, var)

RNG = np.random.default_rng(7)


def fd(e, name, point, h=1e-6):
    # centred difference oracle, independent of differentiate()
    up = dict(point)
    dn = dict(point)
    up[name] += h
    dn[name] -= h
    return (evaluate(e, up) - evaluate(e, dn)) / (2 * h)


BATTERY = [
    "x^2 + 3*x*y - 1/2",
    "sin(x)*cos(y)",
    "exp(x/3) + log(2 + x^2)",
    "(x + y)^3 / (1 + z^2)",
    "sqrt(1 + x^2)",
    "x*sin(y)^2 - y*cos(x)^2",
]


@pytest.mark.parametrize("text", BATTERY)
@pytest.mark.parametrize("name", ["x", "y", "z"])
def test_derivative_matches_finite_differences(text, name):
    e = parse(text)
    d = differentiate(e, name)
    for _ in range(12):
        p = {c: float(RNG.uniform(-0.8, 0.8)) for c in ("x", "y", "z")}
        assert abs(evaluate(d, p) - fd(e, name, p)) < 5e-7


def test_second_derivatives_commute():
    e = parse("sin(x*y) + x^3*y^2")
    a = differentiate(differentiate(e, "x"), "y")
    b = differentiate(differentiate(e, "y"), "x")
    p = {"x": 0.37, "y": -0.81}
    assert abs(evaluate(a, p) - evaluate(b, p)) < 1e-12


@pytest.mark.parametrize("text", BATTERY)
def test_to_text_reparses_to_the_same_function(text):
    e = parse(text)
    again = parse(to_text(e))
    dom = SampleDomain(coords=("x", "y", "z"),
                       ranges={c: (-0.9, 0.9) for c in "xyz"},
                       count=300, seed=11)
    assert numeric_equiv(e, again, dom, 1e-11).passed


coeffs = st.integers(min_value=-4, max_value=4)


@given(st.lists(st.tuples(coeffs, st.integers(0, 3), st.integers(0, 3)),
                min_size=1, max_size=5))
@settings(max_examples=60, deadline=None)
def test_polynomial_roundtrip(terms):
    text = " + ".join(f"{c}*x^{a}*y^{b}" for c, a, b in terms)
    e = parse(text)
    p = {"x": 0.6, "y": -1.1}
    direct = sum(c * p["x"] ** a * p["y"] ** b for c, a, b in terms)
    assert abs(evaluate(e, p) - direct) < 1e-9
    assert abs(evaluate(parse(to_text(e)), p) - direct) < 1e-9


def test_parse_rejects_garbage():
    for bad in ("", "x +", "sin()", "(x", "x^y"):
        with pytest.raises(ParseError):
            parse(bad)


def test_canonical_merges_terms():
    e = ex.add(ex.mul(var("x"), const(2)), ex.mul(const(3), var("x")))
    assert structurally_equal(canonical(e), canonical(parse("5*x")))
    assert structurally_zero(canonical(ex.add(e, parse("-5*x"))))


def test_canonical_preserves_values():
    dom = SampleDomain(coords=("x", "y", "z"),
                       ranges={c: (-0.9, 0.9) for c in "xyz"},
                       count=200, seed=13)
    for text in BATTERY:
        e = parse(text)
        assert numeric_equiv(e, canonical(e), dom, 1e-11).passed


def test_substitute_then_evaluate():
    e = parse("x^2 + y")
    half = substitute(e, {"x": ex.div(var("u"), 2)})
    assert abs(evaluate(half, {"u": 3.0, "y": 1.0}) - (2.25 + 1.0)) < 1e-12


def test_evaluate_vectorises():
    e = parse("sin(x) + x^2")
    xs = np.linspace(-1, 1, 50)
    out = evaluate(e, {"x": xs})
    assert np.allclose(out, np.sin(xs) + xs**2)


def test_log_outside_domain_raises():
    with pytest.raises(DomainError):
        evaluate(parse("log(x)"), {"x": -1.0})


def test_sample_domain_respects_exclusions():
    dom = SampleDomain(coords=("x",), ranges={"x": (-1.0, 1.0)},
                       count=400, seed=3).exclude(var("x"), 0.2)
    xs = dom.sample()["x"]
    assert len(xs) == 400
    assert np.abs(xs).min() >= 0.2


def test_sample_domain_can_empty_out():
    dom = SampleDomain(coords=("x",), ranges={"x": (0.0, 0.1)},
                       count=50, seed=3).exclude(var("x"), 0.5)
    with pytest.raises(EmptyDomain):
        dom.sample()


def test_numeric_equiv_separates():
    dom = SampleDomain(coords=("x",), ranges={"x": (0.1, 1.0)}, count=200,
                       seed=5)
    same = numeric_equiv(parse("(x+1)^2"), parse("x^2 + 2*x + 1"), dom, 1e-10)
    assert same.passed
    diff = numeric_equiv(parse("x^2"), parse("x^2 + 1/100"), dom, 1e-10)
    assert not diff.passed
    assert diff.witness is not None


def test_smoothstep_is_flat_at_the_ends():
    e = ex.smoothstep(var("x"))
    d = differentiate(e, "x")
    assert abs(evaluate(e, {"x": -1.0})) < 1e-12
    assert abs(evaluate(e, {"x": 1.0}) - 1.0) < 1e-12
    assert abs(evaluate(d, {"x": -1.0})) < 1e-12
    assert abs(evaluate(d, {"x": 1.0})) < 1e-12
