from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qsdde.wasserstein import (projection_scale, w1_assignment, w1_exact_1d,
                               w1_sliced)


def brute_force_w1(A: np.ndarray, B: np.ndarray) -> float:
    """Minimum over all n! matchings of the mean Euclidean matched distance."""
    n = len(A)
    best = np.inf
    for perm in itertools.permutations(range(n)):
        cost = np.mean([np.linalg.norm(A[i] - B[perm[i]]) for i in range(n)])
        best = min(best, cost)
    return best


def test_exact_1d_identical_samples():
    a = np.array([0.3, -1.0, 2.0])
    est = w1_exact_1d(a, a.copy())
    assert est.value == 0.0
    assert est.stderr == 0.0


def test_exact_1d_point_masses():
    assert w1_exact_1d(np.zeros(2), np.ones(2)).value == 1.0


def test_exact_1d_sorted_coupling_hand_case():
    est = w1_exact_1d(np.array([0.0, 1.0, 2.0]), np.array([0.5, 1.5, 2.5]))
    assert est.value == pytest.approx(0.5)


def test_exact_1d_empty_raises():
    with pytest.raises(ValueError):
        w1_exact_1d(np.array([]), np.array([1.0]))


def test_exact_1d_unequal_counts_bootstrap():
    rng = np.random.default_rng(0)
    a = rng.normal(0, 1, 400)
    b = rng.normal(3, 1, 250)
    est = w1_exact_1d(a, b, rng=np.random.default_rng(1))
    assert est.meta["resampled_to"] == 250
    assert est.value == pytest.approx(3.0, abs=0.5)


def test_assignment_permutation_invariance():
    rng = np.random.default_rng(2)
    A = rng.normal(0, 1, (32, 3))
    assert w1_assignment(A, A[rng.permutation(32)]).value == pytest.approx(0.0, abs=1e-12)


def test_assignment_two_point_hand_case():
    A = np.array([[0.0, 0.0], [1.0, 0.0]])
    B = np.array([[0.0, 1.0], [1.0, 1.0]])
    assert w1_assignment(A, B).value == pytest.approx(1.0)
    assert brute_force_w1(A, B) == pytest.approx(1.0)


def test_assignment_matches_factorial_brute_force():
    rng = np.random.default_rng(3)
    for trial in range(3):
        A = rng.normal(0, 1, (8, 2))
        B = rng.normal(0.5, 1.2, (8, 2))
        assert w1_assignment(A, B).value == pytest.approx(brute_force_w1(A, B), rel=1e-12)


def test_assignment_cap_enforced():
    A = np.zeros((513, 2))
    with pytest.raises(ValueError):
        w1_assignment(A, A)


def test_assignment_translation_exact():
    rng = np.random.default_rng(4)
    A = rng.normal(0, 1, (64, 3))
    v = np.array([1.0, -2.0, 0.5])
    est = w1_assignment(A, A + v)
    assert est.value == pytest.approx(np.linalg.norm(v), rel=1e-12)


def test_assignment_translation_bounded_shift():
    rng = np.random.default_rng(5)
    A = rng.normal(0, 1, (48, 2))
    B = rng.normal(0, 1, (48, 2))
    base = w1_assignment(A, B).value
    v = np.array([0.7, -0.2])
    shifted = w1_assignment(A, B + v).value
    assert abs(shifted - base) <= np.linalg.norm(v) + 1e-12


def test_triangle_inequality_assignment():
    rng = np.random.default_rng(6)
    A = rng.normal(0, 1, (40, 2))
    B = rng.normal(1, 1, (40, 2))
    C = rng.normal(-1, 2, (40, 2))
    ab = w1_assignment(A, B)
    bc = w1_assignment(B, C)
    ac = w1_assignment(A, C)
    slack = 4 * max(ab.stderr, bc.stderr, ac.stderr)
    assert ac.value <= ab.value + bc.value + slack + 1e-12


def test_projection_scale_values():
    assert projection_scale(1) == pytest.approx(1.0)
    assert projection_scale(2) == pytest.approx(np.pi / 2)
    assert projection_scale(3) == pytest.approx(2.0)


def test_sliced_identical_is_zero():
    rng = np.random.default_rng(7)
    A = rng.normal(0, 1, (100, 4))
    est = w1_sliced(A, A.copy(), 16, np.random.default_rng(8))
    assert est.value == 0.0


def test_sliced_reduces_to_exact_in_1d():
    rng = np.random.default_rng(9)
    a = rng.normal(0, 1, (64, 1))
    b = rng.normal(1, 2, (64, 1))
    sl = w1_sliced(a, b, 7, np.random.default_rng(10))
    ex = w1_exact_1d(a[:, 0], b[:, 0])
    assert sl.value == pytest.approx(ex.value, rel=1e-12)


def test_sliced_translation_recovers_shift():
    # the sphere rescaling makes translation distances unbiased
    rng = np.random.default_rng(11)
    A = rng.normal(0, 1, (512, 2))
    v = np.array([2.0, 1.0])
    est = w1_sliced(A, A + v, 128, np.random.default_rng(12))
    assert est.value == pytest.approx(np.linalg.norm(v), rel=0.08)


def test_sliced_below_assignment_with_noise_allowance():
    rng = np.random.default_rng(13)
    A = rng.normal(0, 1, (256, 2))
    B = rng.normal(1.0, 1.5, (256, 2))
    sl = w1_sliced(A, B, 64, np.random.default_rng(14))
    asg = w1_assignment(A, B)
    assert sl.value <= asg.value + 3 * max(sl.stderr, 1e-12)


def test_sliced_baseline_and_reliability():
    rng = np.random.default_rng(15)
    A = rng.normal(0, 1, (400, 3))
    B = rng.normal(0, 1, (400, 3))
    est = w1_sliced(A, B, 32, np.random.default_rng(16))
    assert est.baseline > 0
    assert not est.reliable()  # equal laws sit inside the bias floor
    far = w1_sliced(A, B + 5.0, 32, np.random.default_rng(17))
    assert far.reliable()


def test_sliced_empty_and_bad_args():
    with pytest.raises(ValueError):
        w1_sliced(np.zeros((0, 2)), np.zeros((3, 2)), 4, np.random.default_rng(0))
    with pytest.raises(ValueError):
        w1_sliced(np.zeros((3, 2)), np.zeros((3, 2)), 0, np.random.default_rng(0))


@settings(max_examples=25, deadline=None)
@given(scale=st.floats(min_value=0.1, max_value=10.0),
       seed=st.integers(min_value=0, max_value=2 ** 16))
def test_scaling_property_exact_methods(scale, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(0, 1, 20)
    b = rng.normal(0.5, 1.5, 20)
    base = w1_exact_1d(a, b).value
    assert w1_exact_1d(scale * a, scale * b).value == pytest.approx(scale * base, rel=1e-9)
    A = rng.normal(0, 1, (16, 2))
    B = rng.normal(0.3, 1.0, (16, 2))
    base2 = w1_assignment(A, B).value
    assert w1_assignment(scale * A, scale * B).value == pytest.approx(scale * base2, rel=1e-9)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2 ** 16))
def test_sliced_scaling_property(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(0, 1, (32, 3))
    B = rng.normal(1, 1, (32, 3))
    c = 2.5
    s1 = w1_sliced(A, B, 24, np.random.default_rng(seed)).value
    s2 = w1_sliced(c * A, c * B, 24, np.random.default_rng(seed)).value
    assert s2 == pytest.approx(c * s1, rel=1e-9)


def test_symmetry_of_methods():
    rng = np.random.default_rng(18)
    A = rng.normal(0, 1, (30, 2))
    B = rng.normal(1, 1, (30, 2))
    assert w1_assignment(A, B).value == pytest.approx(w1_assignment(B, A).value, rel=1e-12)
    assert (w1_exact_1d(A[:, 0], B[:, 0]).value
            == pytest.approx(w1_exact_1d(B[:, 0], A[:, 0]).value, rel=1e-12))
