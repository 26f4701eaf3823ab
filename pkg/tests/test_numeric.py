"""Kernels against hand-computed values and basic analytic identities."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from empl.errors import ConfigError, DegenerateInputError, NumericalError, ShapeError
from empl.numeric import (
    aggregate,
    aggregate_grad,
    as_f64,
    check_grads,
    cosine_sim,
    cosine_sim_grad,
    grad_check,
    log_sum_exp,
    neg_euclidean_sim,
    neg_euclidean_sim_grad,
    pairwise_sim,
    sim,
    sim_grad,
    softmax_temp,
    softmax_temp_vjp,
    stream,
)

finite_vec = hnp.arrays(
    np.float64,
    st.integers(1, 6),
    elements=st.floats(-50, 50, allow_nan=False, allow_infinity=False),
)


def test_cosine_known_value():
    # (3,4) vs (4,3): 24 / 25 exactly
    assert cosine_sim([3.0, 4.0], [4.0, 3.0]) == pytest.approx(0.96, abs=1e-15)


def test_cosine_bounds_and_self():
    v = np.array([0.2, -1.4, 3.0])
    assert cosine_sim(v, v) == pytest.approx(1.0, abs=1e-12)
    assert cosine_sim(v, -v) == pytest.approx(-1.0, abs=1e-12)


def test_cosine_zero_vector_rejected():
    with pytest.raises(DegenerateInputError):
        cosine_sim([0.0, 0.0], [1.0, 2.0])


def test_neg_euclidean_known_value():
    assert neg_euclidean_sim([0.0, 0.0], [3.0, 4.0]) == pytest.approx(-5.0, abs=1e-15)


def test_sim_dispatch_and_unknown_metric():
    a, b = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    assert sim(a, b, "cosine") == pytest.approx(0.0, abs=1e-15)
    assert sim(a, b, "neg_euclidean") == pytest.approx(-np.sqrt(2), abs=1e-15)
    with pytest.raises(ConfigError):
        sim(a, b, "dot")


def test_softmax_known_triple():
    probs = softmax_temp([1.0, 2.0, 3.0], temperature=1.0)
    expected = [0.09003057317038046, 0.24472847105479764, 0.6652409557748219]
    assert np.allclose(probs, expected, atol=1e-15)


def test_softmax_temperature_sharpening():
    hot = softmax_temp([1.0, 2.0], temperature=10.0)
    cold = softmax_temp([1.0, 2.0], temperature=0.05)
    assert hot[1] < cold[1]
    assert cold[1] > 0.999999


def test_softmax_rejects_bad_temperature():
    for t in (0.0, -1.0):
        with pytest.raises(ConfigError):
            softmax_temp([1.0, 2.0], temperature=t)


def test_softmax_huge_logits_stable():
    probs = softmax_temp([1e4, 1e4 + 1.0], temperature=1.0)
    assert np.all(np.isfinite(probs))
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_log_sum_exp_known_value():
    assert log_sum_exp([1.0, 2.0, 3.0]) == pytest.approx(3.4076059644443806, abs=1e-12)
    with pytest.raises(DegenerateInputError):
        log_sum_exp([])


def test_aggregate_known_values():
    assert aggregate([0.0, 1.0], "mean") == pytest.approx(0.5, abs=1e-15)
    # log-mean-exp of {0, 1} is ln((1 + e) / 2)
    assert aggregate([0.0, 1.0], "lse") == pytest.approx(0.6201145069582775, abs=1e-12)
    with pytest.raises(ConfigError):
        aggregate([0.0], "max")


def test_aggregate_single_element_identity():
    v = 0.37218
    for mode in ("mean", "lse"):
        assert aggregate([v], mode) == v


@settings(max_examples=60, deadline=None)
@given(finite_vec, st.sampled_from(["mean", "lse"]))
def test_aggregate_between_min_and_max(v, mode):
    out = aggregate(v, mode)
    assert np.min(v) - 1e-9 <= out <= np.max(v) + 1e-9


@settings(max_examples=60, deadline=None)
@given(finite_vec, st.floats(0.05, 5.0))
def test_softmax_normalized_and_positive(v, temperature):
    probs = softmax_temp(v, temperature)
    assert abs(probs.sum() - 1.0) <= 1e-9
    assert np.all(probs >= 0.0)


@settings(max_examples=40, deadline=None)
@given(finite_vec)
def test_log_sum_exp_dominates_max(v):
    out = log_sum_exp(v)
    assert out >= np.max(v) - 1e-12
    assert out <= np.max(v) + np.log(v.size) + 1e-12


def test_pairwise_matches_scalar(rng):
    rows = rng.normal(size=(4, 3))
    cols = rng.normal(size=(5, 3))
    for metric in ("cosine", "neg_euclidean"):
        mat = pairwise_sim(rows, cols, metric)
        for i in range(4):
            for j in range(5):
                assert mat[i, j] == pytest.approx(sim(rows[i], cols[j], metric), abs=1e-12)


def test_pairwise_shape_errors(rng):
    with pytest.raises(ShapeError):
        pairwise_sim(rng.normal(size=(3, 2)), rng.normal(size=(3, 4)), "cosine")


def test_sim_gradients_match_finite_differences(rng):
    for metric in ("cosine", "neg_euclidean"):
        for _ in range(20):
            a = rng.normal(size=4) + 0.5
            b = rng.normal(size=4) - 0.5
            ga, gb = sim_grad(a, b, metric)
            rep_a = grad_check(lambda v: sim(v, b, metric), a, ga)
            rep_b = grad_check(lambda v: sim(a, v, metric), b, gb)
            assert rep_a.ok() and rep_b.ok(), (metric, rep_a, rep_b)


def test_neg_euclidean_grad_zero_at_coincidence():
    a = np.array([1.0, 2.0])
    ga, gb = neg_euclidean_sim_grad(a, a.copy())
    assert np.all(ga == 0.0) and np.all(gb == 0.0)


def test_cosine_grad_orthogonal_to_inputs(rng):
    # d cos / d a is orthogonal to a: cosine ignores the norm of a
    a, b = rng.normal(size=5), rng.normal(size=5)
    ga, gb = cosine_sim_grad(a, b)
    assert float(np.dot(ga, a)) == pytest.approx(0.0, abs=1e-12)
    assert float(np.dot(gb, b)) == pytest.approx(0.0, abs=1e-12)


def test_softmax_vjp_matches_finite_differences(rng):
    z = rng.normal(size=5)
    temperature = 0.3
    upstream = rng.normal(size=5)
    probs = softmax_temp(z, temperature)
    analytic = softmax_temp_vjp(probs, temperature, upstream)
    rep = grad_check(lambda v: float(np.dot(upstream, softmax_temp(v, temperature))), z, analytic)
    assert rep.ok(), rep


def test_aggregate_grad_matches_finite_differences(rng):
    v = rng.normal(size=6)
    for mode in ("mean", "lse"):
        rep = grad_check(lambda u: aggregate(u, mode), v, aggregate_grad(v, mode))
        assert rep.ok(), (mode, rep)


def test_check_grads_folds_worst_case(rng):
    pts = [(rng.normal(size=3), None) for _ in range(3)]
    pts = [(x, 2.0 * x) for x, _ in pts]  # analytic grad of sum of squares
    rep = check_grads(lambda v: float(np.sum(v * v)), pts)
    assert rep.ok()
    assert rep.n_coords == 9


def test_grad_check_flags_wrong_gradient():
    x = np.array([1.0, 2.0])
    rep = grad_check(lambda v: float(np.sum(v * v)), x, np.array([2.0, 3.0]))
    assert not rep.ok()
    assert rep.worst_index == (1,)


def test_as_f64_rejects_non_finite():
    with pytest.raises(NumericalError):
        as_f64([1.0, np.nan])


def test_stream_reproducible_and_keyed():
    a = stream(7, 1, 2).normal(size=4)
    b = stream(7, 1, 2).normal(size=4)
    c = stream(7, 1, 3).normal(size=4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_stream_chunk_invariant():
    # one bulk draw equals many scalar draws from the same stream
    bulk = stream(11, 4).normal(size=6)
    g = stream(11, 4)
    scalar = np.array([g.normal() for _ in range(6)])
    assert np.array_equal(bulk, scalar)
