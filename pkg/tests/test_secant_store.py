import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msqn import DifferenceOperator, SecantHistory, column_difference_matrix


def make_history(pairs, capacity=10):
    h = SecantHistory(capacity=capacity, dim=len(pairs[0][0]))
    for x, g in pairs:
        h.push(np.array(x, float), np.array(g, float))
    return h


def test_push_single_point_gives_zero_columns():
    h = make_history([([0.0, 0.0], [1.0, 0.0])])
    dx, dg = h.deltas()
    assert dx.shape == (2, 0) and dg.shape == (2, 0)


def test_eviction_keeps_most_recent_window():
    h = SecantHistory(capacity=2, dim=1)
    for k in range(4):
        h.push(np.array([float(k)]), np.array([float(-k)]))
    assert len(h) == 3
    xs, _ = h.matrices()
    assert xs.ravel().tolist() == [1.0, 2.0, 3.0]


def test_dimension_mismatch_rejected():
    h = SecantHistory(capacity=2, dim=2)
    with pytest.raises(ValueError, match="dimension"):
        h.push(np.zeros(3), np.zeros(3))


def test_single_difference():
    h = make_history([([0.0, 0.0], [1.0, 0.0]), ([1.0, 2.0], [0.0, 1.0])])
    dx, dg = h.deltas()
    assert np.allclose(dx[:, 0], [1.0, 2.0])
    assert np.allclose(dg[:, 0], [-1.0, 1.0])


def test_explicit_difference_matrix_matches_consecutive():
    rng = np.random.default_rng(0)
    pairs = [(rng.standard_normal(3), rng.standard_normal(3)) for _ in range(5)]
    h = make_history(pairs)
    c = column_difference_matrix(5)
    dx_c, dg_c = h.deltas(DifferenceOperator.explicit(c))
    dx, dg = h.deltas()
    # direct matrix product oracle
    xs, gs = h.matrices()
    assert np.array_equal(dx_c, xs @ c)
    assert np.array_equal(dg_c, gs @ c)
    assert np.allclose(dx_c, dx, atol=1e-15)
    assert np.allclose(dg_c, dg, atol=1e-15)


def test_explicit_matrix_row_count_checked():
    h = make_history([(np.zeros(2), np.zeros(2))] * 3, capacity=5)
    with pytest.raises(ValueError, match="rows"):
        h.deltas(DifferenceOperator.explicit(column_difference_matrix(4)))


def test_difference_operator_validation():
    bad_sum = np.array([[1.0], [1.0]])
    with pytest.raises(ValueError, match="sum to zero"):
        DifferenceOperator.explicit(bad_sum)
    rank_deficient = np.array([[1.0, 2.0], [-1.0, -2.0], [0.0, 0.0]])
    with pytest.raises(ValueError, match="rank"):
        DifferenceOperator.explicit(rank_deficient)


def test_combine_indicator_returns_latest():
    rng = np.random.default_rng(1)
    pairs = [(rng.standard_normal(4), rng.standard_normal(4)) for _ in range(4)]
    h = make_history(pairs)
    v = np.zeros(4)
    v[-1] = 1.0
    xv, gv = h.combine(v)
    assert np.allclose(xv, pairs[-1][0])
    assert np.allclose(gv, pairs[-1][1])


def test_combine_averaging_vector():
    pairs = [([1.0], [4.0]), ([2.0], [5.0]), ([3.0], [6.0])]
    h = make_history(pairs)
    xv, gv = h.combine(np.ones(3) / 3)
    assert xv == pytest.approx(2.0)
    assert gv == pytest.approx(5.0)


def test_combine_rejects_bad_coefficients():
    h = make_history([(np.zeros(2), np.zeros(2))] * 2)
    with pytest.raises(ValueError, match="sum to 1"):
        h.combine(np.array([0.5, 0.4]))
    with pytest.raises(ValueError, match="coefficients"):
        h.combine(np.array([1.0]))


@given(
    n_pts=st.integers(min_value=2, max_value=8),
    dim=st.integers(min_value=1, max_value=5),
    seed=st.integers(min_value=0, max_value=10_000),
)
@settings(max_examples=40, deadline=None)
def test_combine_matches_dense_product(n_pts, dim, seed):
    rng = np.random.default_rng(seed)
    pairs = [(rng.standard_normal(dim), rng.standard_normal(dim)) for _ in range(n_pts)]
    h = make_history(pairs, capacity=n_pts)
    v = rng.standard_normal(n_pts)
    v = v / v.sum() if abs(v.sum()) > 1e-3 else np.ones(n_pts) / n_pts
    xv, gv = h.combine(v)
    xs = np.column_stack([p[0] for p in pairs])
    gs = np.column_stack([p[1] for p in pairs])
    assert np.linalg.norm(xv - xs @ v) <= 1e-14 * max(1, np.linalg.norm(xs @ v))
    assert np.linalg.norm(gv - gs @ v) <= 1e-14 * max(1, np.linalg.norm(gs @ v))


@given(
    capacity=st.integers(min_value=1, max_value=5),
    n_push=st.integers(min_value=0, max_value=12),
)
@settings(max_examples=40, deadline=None)
def test_column_count_invariant(capacity, n_push):
    h = SecantHistory(capacity=capacity, dim=2)
    rng = np.random.default_rng(0)
    for _ in range(n_push):
        h.push(rng.standard_normal(2), rng.standard_normal(2))
    dx, _ = h.deltas()
    assert dx.shape[1] == max(min(n_push, capacity + 1) - 1, 0)
