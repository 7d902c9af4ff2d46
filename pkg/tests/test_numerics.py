import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from riftlab.numerics import Rng, axpy, clamp, derive_seed, l2_norm, project_l2_ball

from oracles import naive_l2

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
vectors = arrays(np.float64, st.integers(1, 20), elements=finite)


def test_l2_norm_examples():
    assert l2_norm(np.array([3.0, 4.0])) == 5.0
    assert l2_norm(np.zeros(7)) == 0.0


def test_l2_norm_matches_loop_oracle():
    x = Rng(11).normal(size=10)
    assert abs(l2_norm(x) - naive_l2(x)) < 1e-12


def test_l2_norm_empty_raises():
    with pytest.raises(ValueError):
        l2_norm(np.array([]))


@pytest.mark.parametrize(
    "delta, radius, expected",
    [([3.0, 4.0], 5.0, [3.0, 4.0]), ([3.0, 4.0], 2.5, [1.5, 2.0]), ([0.0, 0.0], 1.0, [0.0, 0.0])],
)
def test_project_l2_ball_examples(delta, radius, expected):
    np.testing.assert_allclose(project_l2_ball(np.array(delta), radius), expected, rtol=1e-12, atol=0)


def test_project_rescales_to_radius():
    d = Rng(2).normal(size=50) * 10
    out = project_l2_ball(d, 1.5)
    assert abs(l2_norm(out) - 1.5) <= 1.5e-12


def test_project_negative_radius_raises():
    with pytest.raises(ValueError):
        project_l2_ball(np.ones(3), -0.1)


@settings(max_examples=200, deadline=None)
@given(vectors, st.floats(0, 1e3, allow_nan=False))
def test_projection_idempotent_and_feasible(d, r):
    once = project_l2_ball(d, r)
    twice = project_l2_ball(once, r)
    assert once.tobytes() == twice.tobytes()
    assert l2_norm(once) <= r + 1e-9


def test_clamp_examples():
    np.testing.assert_array_equal(clamp(np.array([-0.1, 0.5, 1.3]), 0, 1), [0, 0.5, 1])
    x = np.array([0.2, 0.7])
    assert clamp(x, 0, 1).tobytes() == x.tobytes()
    np.testing.assert_array_equal(clamp(np.array([2.0, 2.0]), 2, 2), [2, 2])
    with pytest.raises(ValueError):
        clamp(x, 1, 0)


def test_axpy_examples():
    rng = Rng(5)
    x, y = rng.normal(size=4), rng.normal(size=4)
    assert axpy(0, x, y).tobytes() == y.tobytes()
    assert axpy(1, x, np.zeros(4)).tobytes() == x.tobytes()
    np.testing.assert_array_equal(axpy(-1, x, x), np.zeros(4))
    with pytest.raises(ValueError):
        axpy(1.0, np.ones(3), np.ones(4))


def test_rng_repeatable():
    a, b = Rng(123), Rng(123)
    assert a.uniform(size=100).tobytes() == b.uniform(size=100).tobytes()
    assert a.normal(size=10).tobytes() == b.normal(size=10).tobytes()
    assert Rng(1).uniform(size=5).tobytes() != Rng(2).uniform(size=5).tobytes()


def test_rng_children_independent_of_parent_draws():
    a = Rng(9)
    a.uniform(size=1000)
    assert a.child("x").uniform(size=3).tobytes() == Rng(9).child("x").uniform(size=3).tobytes()
    assert derive_seed(9, "x") != derive_seed(9, "y")


def test_rng_rejects_bad_seed():
    with pytest.raises(ValueError):
        Rng(-1)
