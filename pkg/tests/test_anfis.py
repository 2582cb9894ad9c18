"""Fuzzy head: layer formulas, rule enumeration, oracle equivalence, gradients."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from f2ind.anfis import (
    AnfisParams,
    anfis_backward,
    anfis_forward,
    assignment_to_rule,
    fuzzify,
    init_anfis,
    normalize_firing,
    rule_firing,
    rule_report,
    rule_to_assignment,
)
from f2ind.errors import CacheError, ConfigError, ShapeError


def random_params(n, f, seed, spread_low=0.4, spread_high=1.6):
    """Random but well-conditioned parameters for oracle and gradient checks."""
    rng = np.random.default_rng(seed)
    p = init_anfis(n, f, seed)
    p.centers = rng.uniform(-1.0, 1.0, size=(n, f))
    p.spreads = rng.uniform(spread_low, spread_high, size=(n, f))
    p.slopes = rng.uniform(-1.0, 1.0, size=(f**n, n))
    p.intercepts = rng.uniform(-1.0, 1.0, size=f**n)
    return p


def brute_force_prob(params: AnfisParams, x_row):
    """Independent re-derivation with explicit loops; shares no code with the
    layered implementation."""
    n, f = params.n, params.f
    degrees = [
        [
            math.exp(-((x_row[i] - params.centers[i][j]) ** 2) / (2.0 * params.spreads[i][j] ** 2))
            for j in range(f)
        ]
        for i in range(n)
    ]
    strengths = []
    for k in range(f**n):
        digits = []
        kk = k
        for _ in range(n):
            digits.append(kk % f)
            kk //= f
        digits.reverse()
        s = 1.0
        for i in range(n):
            s *= degrees[i][digits[i]]
        strengths.append(s)
    total = sum(strengths) + 1e-12
    z = 0.0
    for k in range(f**n):
        consequent = params.intercepts[k]
        for i in range(n):
            consequent += params.slopes[k][i] * x_row[i]
        z += (strengths[k] / total) * consequent
    return 1.0 / (1.0 + math.exp(-z))


# ---------------------------------------------------------------------------
# Initialization and rule enumeration
# ---------------------------------------------------------------------------


def test_init_counts_and_centers():
    p = init_anfis(4, 2, seed=0)
    assert p.n_rules == 16
    assert p.centers.shape == (4, 2) and p.spreads.shape == (4, 2)
    assert np.allclose(p.centers, np.tile([-0.5, 0.5], (4, 1)))
    assert np.all(p.spreads == 1.0)
    assert np.all(np.abs(p.slopes) <= 0.1)
    assert np.all(p.intercepts == 0.0)


def test_init_deterministic():
    a, b = init_anfis(4, 2, seed=9), init_anfis(4, 2, seed=9)
    assert np.array_equal(a.slopes, b.slopes)


def test_init_rule_limit():
    assert init_anfis(6, 4, seed=0).n_rules == 4096
    with pytest.raises(ConfigError):
        init_anfis(7, 4, seed=0)
    with pytest.raises(ConfigError):
        init_anfis(0, 2, seed=0)
    with pytest.raises(ConfigError):
        init_anfis(2, 1, seed=0)


def test_rule_assignment_examples():
    assert rule_to_assignment(0, 4, 2) == [0, 0, 0, 0]
    assert rule_to_assignment(5, 4, 2) == [0, 1, 0, 1]
    with pytest.raises(IndexError):
        rule_to_assignment(16, 4, 2)
    with pytest.raises(IndexError):
        rule_to_assignment(-1, 4, 2)


def test_rule_assignment_round_trip_all_16():
    for k in range(16):
        assert assignment_to_rule(rule_to_assignment(k, 4, 2), 2) == k


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 5), f=st.integers(2, 4), data=st.data())
def test_rule_assignment_bijection(n, f, data):
    if f**n > 4096:
        return
    k = data.draw(st.integers(0, f**n - 1))
    digits = rule_to_assignment(k, n, f)
    assert len(digits) == n and all(0 <= d < f for d in digits)
    assert assignment_to_rule(digits, f) == k


# ---------------------------------------------------------------------------
# Layer-by-layer
# ---------------------------------------------------------------------------


def test_fuzzify_analytic_points():
    p = init_anfis(1, 2, seed=0)
    p.centers = np.array([[0.3, -0.2]])
    p.spreads = np.array([[0.7, 1.3]])
    m = fuzzify(p, np.array([[0.3]]))
    assert m[0, 0, 0] == 1.0
    m = fuzzify(p, np.array([[0.3 + 0.7]]))
    assert math.isclose(m[0, 0, 0], math.exp(-0.5), rel_tol=1e-12)
    m = fuzzify(p, np.array([[0.3 + 3 * 0.7]]))
    assert math.isclose(m[0, 0, 0], math.exp(-4.5), rel_tol=1e-12)


def test_fuzzify_bounds():
    p = random_params(3, 3, seed=1)
    m = fuzzify(p, np.random.default_rng(2).uniform(-2, 2, size=(40, 3)))
    assert np.all(m > 0.0) and np.all(m <= 1.0)


def test_rule_firing_identity_and_product():
    ones = np.ones((2, 3, 2))
    assert np.array_equal(rule_firing(ones), np.ones((2, 8)))
    halves = np.full((1, 2, 2), 0.5)
    assert np.allclose(rule_firing(halves), np.full((1, 4), 0.25))


def test_rule_firing_matches_explicit_loop():
    rng = np.random.default_rng(3)
    memberships = rng.uniform(0.05, 1.0, size=(5, 3, 3))
    firing = rule_firing(memberships)
    for b in range(5):
        for k in range(27):
            digits = rule_to_assignment(k, 3, 3)
            expected = 1.0
            for i in range(3):
                expected *= memberships[b, i, digits[i]]
            assert abs(firing[b, k] - expected) < 1e-12


def test_log_space_product_agrees_with_direct():
    rng = np.random.default_rng(4)
    m = rng.uniform(0.1, 1.0, size=(3, 9, 2))  # n=9 triggers the log-space path
    via_log = rule_firing(m)
    direct = np.ones((3, 512))
    for k in range(512):
        digits = rule_to_assignment(k, 9, 2)
        for i in range(9):
            direct[:, k] *= m[:, i, digits[i]]
    assert np.allclose(via_log, direct, rtol=1e-12, atol=0)


def test_normalize_firing():
    uniform = np.full((2, 16), 0.37)
    assert np.allclose(normalize_firing(uniform), 1.0 / 16)
    dominant = np.zeros((1, 4))
    dominant[0, 2] = 1.0
    norm = normalize_firing(dominant)
    assert norm[0, 2] > 1.0 - 1e-9
    rng = np.random.default_rng(5)
    rand = rng.uniform(0.0, 1.0, size=(100, 16))
    assert np.all(np.abs(normalize_firing(rand).sum(axis=1) - 1.0) < 1e-9)


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------


def test_forward_constant_consequents():
    p = init_anfis(4, 2, seed=0)
    p.centers = np.zeros((4, 2))
    p.slopes = np.zeros((16, 4))
    p.intercepts = np.full(16, 1.7)
    prob, _ = anfis_forward(p, np.zeros((3, 4)))
    assert np.allclose(prob, 1.0 / (1.0 + math.exp(-1.7)), atol=1e-12)

    p.intercepts = np.zeros(16)
    prob, _ = anfis_forward(p, np.random.default_rng(0).normal(size=(5, 4)))
    assert np.allclose(prob, 0.5, atol=1e-12)


def test_forward_shape_error():
    p = init_anfis(4, 2, seed=0)
    with pytest.raises(ShapeError):
        anfis_forward(p, np.zeros((2, 3)))


def test_forward_matches_brute_force():
    rng = np.random.default_rng(6)
    for trial in range(60):
        n = int(rng.integers(1, 5))
        f = int(rng.integers(2, 4))
        p = random_params(n, f, seed=trial)
        x = rng.uniform(-1.5, 1.5, size=(3, n))
        prob, _ = anfis_forward(p, x)
        for b in range(3):
            assert abs(prob[b] - brute_force_prob(p, x[b])) < 1e-9


def test_forward_output_strictly_inside_unit_interval():
    p = random_params(4, 2, seed=7)
    prob, _ = anfis_forward(p, np.random.default_rng(8).uniform(-1, 1, size=(200, 4)))
    assert np.all(prob > 0.0) and np.all(prob < 1.0)


def perturbed_init(n, f, seed):
    """Init-like parameters with jitter; inputs to the head are tanh-bounded,
    so this is the regime the fuzzifier actually operates in."""
    rng = np.random.default_rng(seed)
    p = init_anfis(n, f, seed)
    p.centers = p.centers + rng.uniform(-0.3, 0.3, size=(n, f))
    p.spreads = p.spreads + rng.uniform(-0.3, 0.3, size=(n, f))
    return p


def test_partition_of_unity_invariant():
    p = perturbed_init(4, 2, seed=9)
    _, cache = anfis_forward(p, np.random.default_rng(10).uniform(-1, 1, size=(500, 4)))
    assert np.all(np.abs(cache.normalized.sum(axis=1) - 1.0) < 1e-6)


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------


def loss_for_fd(params, x, weights):
    prob, _ = anfis_forward(params, x)
    return float((weights * prob).sum())


def analytic_grads(params, x, weights):
    prob, cache = anfis_forward(params, x)
    return anfis_backward(params, cache, weights)


def fd_grad(params, x, weights, field, h=1e-4):
    arr = getattr(params, field) if field != "x" else x
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + h
        up = loss_for_fd(params, x, weights)
        flat[idx] = orig - h
        down = loss_for_fd(params, x, weights)
        flat[idx] = orig
        grad.reshape(-1)[idx] = (up - down) / (2 * h)
    return grad


def rel_err(a, b):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
    return float(np.max(np.abs(a - b) / denom))


def test_backward_zero_grad_prob():
    p = random_params(3, 2, seed=11)
    x = np.random.default_rng(12).uniform(-1, 1, size=(4, 3))
    _, cache = anfis_forward(p, x)
    g = anfis_backward(p, cache, np.zeros(4))
    for arr in (g.centers, g.spreads, g.slopes, g.intercepts, g.x):
        assert np.all(arr == 0.0)


def test_backward_intercept_closed_form():
    # d prob / d intercept_k = prob (1 - prob) * normalized_k
    p = random_params(4, 2, seed=13)
    x = np.random.default_rng(14).uniform(-1, 1, size=(1, 4))
    prob, cache = anfis_forward(p, x)
    g = anfis_backward(p, cache, np.ones(1))
    closed = prob[0] * (1 - prob[0]) * cache.normalized[0]
    assert rel_err(g.intercepts, closed) < 1e-12
    fd = fd_grad(p, x, np.ones(1), "intercepts")
    assert rel_err(g.intercepts, fd) < 1e-4


@pytest.mark.parametrize("seed", range(10))
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(1, 4))
    f = int(rng.integers(2, 4))
    p = random_params(n, f, seed=200 + seed)
    x = rng.uniform(-1.2, 1.2, size=(3, n))
    weights = rng.uniform(-1.0, 1.0, size=3)
    g = analytic_grads(p, x, weights)
    for field in ("centers", "spreads", "slopes", "intercepts", "x"):
        fd = fd_grad(p, x.copy(), weights, field)
        got = getattr(g, field)
        assert rel_err(got, fd) < 1e-4, field


def test_backward_cache_mismatch():
    p = random_params(3, 2, seed=15)
    x = np.random.default_rng(16).uniform(-1, 1, size=(4, 3))
    _, cache = anfis_forward(p, x)
    with pytest.raises(CacheError):
        anfis_backward(p, cache, np.zeros(5))
    other = random_params(2, 2, seed=17)
    with pytest.raises(CacheError):
        anfis_backward(other, cache, np.zeros(4))


# ---------------------------------------------------------------------------
# Rule report
# ---------------------------------------------------------------------------


def test_rule_report_zero_network():
    p = init_anfis(4, 2, seed=0)
    p.slopes = np.zeros_like(p.slopes)
    rows = rule_report(p, np.random.default_rng(18).uniform(-1, 1, size=(6, 4)))
    assert len(rows) == 16
    assert all(r.mean_contribution == 0.0 for r in rows)


def test_rule_report_uniform_firing_indexed_intercepts():
    p = init_anfis(4, 2, seed=0)
    p.intercepts = np.arange(16, dtype=np.float64)
    rows = rule_report(p, np.zeros((3, 4)))  # x=0 between symmetric centers -> uniform firing
    for k, r in enumerate(rows):
        assert abs(r.mean_norm_firing - 1.0 / 16) < 1e-9
        assert abs(r.mean_contribution - k / 16.0) < 1e-9


def test_rule_report_contributions_sum_to_pre_sigmoid_mean():
    p = random_params(4, 2, seed=19)
    x = np.random.default_rng(20).uniform(-1, 1, size=(9, 4))
    rows = rule_report(p, x)
    _, cache = anfis_forward(p, x)
    assert abs(sum(r.mean_contribution for r in rows) - cache.pre_sigmoid.mean()) < 1e-9
