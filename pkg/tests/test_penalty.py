import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import props
from hippo import penalty as pen
from hippo.penalty import Family, Penalty

SCAD = Penalty("scad", 3.7)
MCP = Penalty("mcp", 3.0)
L1 = Penalty("l1")


@pytest.mark.parametrize(
    "p, beta, expected",
    [
        (SCAD, 0.5, 1.0),
        (SCAD, 4.0, 0.0),
        (SCAD, 2.0, (3.7 - 2.0) / 2.7),
        (MCP, 1.5, 0.5),
        (MCP, 0.0, 1.0),
        (L1, 7.0, 1.0),
    ],
)
def test_deriv_examples(p, beta, expected):
    assert pen.deriv(p, beta, 1.0) == pytest.approx(expected, abs=1e-12)


def test_value_examples():
    for p in (SCAD, MCP, L1):
        assert pen.value(p, 0.0, 1.3) == 0.0
    assert pen.value(SCAD, 0.5, 1.0) == pytest.approx(0.5)
    assert pen.value(SCAD, 10.0, 1.0) == pytest.approx(2.35)


def test_lla_weights_examples():
    lam = np.array([0.3, 1.0, 2.0])
    assert np.array_equal(SCAD.lla_weights(np.zeros(3), lam), lam)
    assert np.all(SCAD.lla_weights(10 * lam, lam) == 0)
    w = SCAD.lla_weights(np.array([0.0, 2.0, 4.0]), np.ones(3))
    np.testing.assert_allclose(w, [1.0, 0.6296296296, 0.0], atol=1e-9)
    # signs of the coefficients do not matter
    np.testing.assert_array_equal(SCAD.lla_weights(np.array([0.0, -2.0, -4.0]), np.ones(3)), w)


def test_lla_weights_length_mismatch():
    with pytest.raises(ValueError, match="equal length"):
        SCAD.lla_weights(np.zeros(2), np.ones(3))


@pytest.mark.parametrize("fn", [pen.deriv, pen.value])
def test_negative_inputs_rejected(fn):
    with pytest.raises(ValueError):
        fn(SCAD, -0.1, 1.0)
    with pytest.raises(ValueError):
        fn(SCAD, 0.1, -1.0)


def test_invalid_concavity():
    with pytest.raises(ValueError):
        Penalty("scad", 2.0)
    with pytest.raises(ValueError):
        Penalty("mcp", 0.0)
    assert Penalty("l1", 5.0).a is None
    assert Penalty("scad").a == 3.7 and Penalty("mcp").a == 3.0


def test_immutable():
    with pytest.raises(AttributeError):
        SCAD.a = 4.0


def test_config_round_trip():
    for p in (SCAD, MCP, L1, Penalty("scad", 2.5)):
        assert Penalty.from_config(p.to_config()) == p
    assert Penalty.from_config("MCP").family is Family.MCP


def test_properties_all_families():
    ok, detail = props.check_penalty_properties()
    assert ok, detail


families = st.sampled_from([SCAD, MCP, L1, Penalty("scad", 2.2), Penalty("mcp", 0.7)])
mags = st.floats(0, 50, allow_nan=False)
lams = st.floats(0, 10, allow_nan=False)


@settings(max_examples=300, deadline=None)
@given(families, mags, mags, lams)
def test_subadditive(p, b0, b1, lam):
    assert pen.value(p, b0 + b1, lam) <= pen.value(p, b0, lam) + pen.value(p, b1, lam) + 1e-9 * (1 + b0 + b1)


@settings(max_examples=300, deadline=None)
@given(families, mags, lams)
def test_deriv_bounded_and_vanishing(p, b, lam):
    d = pen.deriv(p, b, lam)
    assert 0.0 <= d <= lam + 1e-15
    if b >= p.b * lam and p.family is not Family.L1:
        assert d == 0.0


@settings(max_examples=300, deadline=None)
@given(families, mags, mags, lams)
def test_value_monotone_and_concave_bound(p, b0, b1, lam):
    lo, hi = sorted((b0, b1))
    assert pen.value(p, lo, lam) <= pen.value(p, hi, lam) + 1e-12
    # value lies below its tangent line from the origin
    assert pen.value(p, hi, lam) <= lam * hi + 1e-9 * (1 + hi)
