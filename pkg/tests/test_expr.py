"""Expression DAG construction, evaluation, predicates, serialization."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codiffsp import (
    DimensionMismatch,
    Space,
    ValidationError,
    absolute,
    add,
    affine,
    constant,
    dc,
    evaluate,
    evaluate_batch,
    maximum,
    minimum,
    quad,
    scale,
)
from codiffsp.expr import (
    dc_parts,
    from_json,
    is_affine_struct,
    is_convex_struct,
    is_smooth_struct,
    to_json,
)

from conftest import random_case, random_expr

SP2 = Space(d=1, m=1, q=0)


def test_abs_affine():
    f = absolute(SP2.x(0))
    assert evaluate(f, [-2.0], [0.0]) == 2.0


def test_max_pair_at_kink():
    f = maximum(SP2.x(0), -SP2.x(0))
    assert evaluate(f, [0.0], [0.0]) == 0.0


def test_quad_bowl():
    # (x-1)^2 + (y-1)^2
    f = SP2.quad(2.0 * np.eye(2), lin=[-2.0, -2.0], c0=2.0, psd=True)
    assert evaluate(f, [1.0], [1.0]) == 0.0
    assert evaluate(f, [0.0], [0.0]) == pytest.approx(2.0)


def test_operator_sugar():
    x = SP2.x(0)
    y = SP2.y(0)
    f = 2.0 * x + y - constant(3.0)
    assert evaluate(f, [1.0], [2.0]) == pytest.approx(1.0)
    assert evaluate(-f, [1.0], [2.0]) == pytest.approx(-1.0)
    assert evaluate(abs(f), [0.0], [1.0]) == pytest.approx(2.0)


def test_space_helpers():
    sp = Space(d=2, m=1, q=1)
    assert evaluate(sp.x(1), [0.0, 3.0], [0.0], [0.0]) == 3.0
    assert evaluate(sp.y(0, coeff=-2.0), [0.0, 0.0], [1.5], [0.0]) == -3.0
    assert evaluate(sp.theta(0), [0.0, 0.0], [0.0], [7.0]) == 7.0


def test_dimension_mismatch_on_evaluate():
    f = SP2.x(0)
    with pytest.raises(DimensionMismatch):
        evaluate(f, [1.0, 2.0], [0.0])


def test_dimension_mismatch_on_merge():
    a = Space(d=1, m=1, q=0).x(0)
    b = Space(d=2, m=1, q=0).x(0)
    with pytest.raises(DimensionMismatch):
        add(a, b)


def test_nonfinite_coefficient_rejected():
    with pytest.raises(ValidationError) as ei:
        affine(SP2.dims, c0=float("inf"), cx=[0.0], cy=[0.0], ct=[])
    assert ei.value.code == "NONFINITE"


def test_dc_requires_convex_parts():
    bad = quad(SP2.dims, [[0.0, 1.0], [1.0, 0.0]])  # indefinite
    ok = SP2.quad(np.eye(2), psd=True)
    with pytest.raises(ValidationError) as ei:
        dc(bad, ok)
    assert ei.value.code == "DC_NOT_CONVEX"


def test_structural_predicates():
    x = SP2.x(0)
    bowl = SP2.quad(np.eye(2), psd=True)
    assert is_affine_struct(add(x, constant(1.0)))
    assert not is_affine_struct(bowl)
    assert is_convex_struct(maximum(x, bowl))
    assert not is_convex_struct(minimum(x, bowl))
    assert not is_convex_struct(scale(-1.0, bowl))
    assert is_smooth_struct(add(bowl, x))
    assert not is_smooth_struct(absolute(x))


def test_dc_parts_of_convex():
    bowl = SP2.quad(np.eye(2), psd=True)
    p, mn = dc_parts(maximum(bowl, SP2.x(0)))
    assert mn.kind == "constant" and mn.value == 0.0
    assert evaluate(p, [0.3], [0.4]) == evaluate(maximum(bowl, SP2.x(0)), [0.3], [0.4])


def test_dc_parts_negative_scale_swaps():
    bowl = SP2.quad(np.eye(2), psd=True)
    p, mn = dc_parts(scale(-2.0, dc(bowl, SP2.x(0))))
    z = ([0.7], [-0.2])
    assert evaluate(p, *z) == pytest.approx(2.0 * evaluate(SP2.x(0), *z))
    assert evaluate(mn, *z) == pytest.approx(2.0 * evaluate(bowl, *z))


def test_json_round_trip_pins_values():
    rng = np.random.default_rng(7)
    for _ in range(20):
        dims, f, _, x, y, th = random_case(rng, max_depth=3)
        g = from_json(to_json(f, dims), dims)
        assert evaluate(g, x, y, th) == evaluate(f, x, y, th)


def test_json_missing_key():
    with pytest.raises(ValidationError) as ei:
        from_json({"kind": "affine", "c0": 1.0}, SP2.dims)
    assert ei.value.code == "PARSE"


def test_json_unknown_kind():
    with pytest.raises(ValidationError):
        from_json({"kind": "powers"}, SP2.dims)


def test_batch_matches_scalar():
    rng = np.random.default_rng(3)
    dims, f, _, x, y, th = random_case(rng, max_depth=4)
    d, m, q = dims
    X = rng.uniform(-2, 2, (40, d))
    Y = rng.uniform(-2, 2, (40, m))
    vals = evaluate_batch(f, X, Y, th)
    for i in range(40):
        assert vals[i] == evaluate(f, X[i], Y[i], th)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_combinators_evaluate_pointwise(seed):
    rng = np.random.default_rng(seed)
    a, _ = random_expr(rng, SP2.dims, 2)
    b, _ = random_expr(rng, SP2.dims, 2)
    x = rng.uniform(-2, 2, 1)
    y = rng.uniform(-2, 2, 1)
    va, vb = evaluate(a, x, y), evaluate(b, x, y)
    assert evaluate(add(a, b), x, y) == pytest.approx(va + vb)
    assert evaluate(maximum(a, b), x, y) == max(va, vb)
    assert evaluate(minimum(a, b), x, y) == min(va, vb)
    assert evaluate(scale(-1.5, a), x, y) == pytest.approx(-1.5 * va)
    assert evaluate(absolute(a), x, y) == abs(va)
