"""One-cycle schedule shape and Adam update semantics."""

import math

import numpy as np
import pytest

from f2ind.errors import ConfigError, NumericError, ScheduleError
from f2ind.optim import (
    DEFAULT_LR_SCALES,
    AdamState,
    ParamGroup,
    ScheduleConfig,
    adam_step,
    assign_group,
    onecycle_lr,
)


def test_schedule_endpoints_and_peak():
    cfg = ScheduleConfig(total_steps=1000)
    assert math.isclose(onecycle_lr(0, cfg), 1.0 / 25.0, rel_tol=1e-12)  # 0.04
    peak = round(0.3 * 1000)
    assert math.isclose(onecycle_lr(peak, cfg), 1.0, rel_tol=1e-12)
    assert math.isclose(onecycle_lr(1000, cfg), 1e-4, rel_tol=1e-12)


def test_schedule_monotone_up_then_down():
    cfg = ScheduleConfig(total_steps=200)
    values = [onecycle_lr(s, cfg) for s in range(201)]
    peak = round(0.3 * 200)
    assert all(values[i] < values[i + 1] for i in range(peak))
    assert all(values[i] > values[i + 1] for i in range(peak, 200))


def test_schedule_continuity_bound():
    cfg = ScheduleConfig(total_steps=500)
    warmup = round(0.3 * 500)
    up_slope = (1.0 - 1.0 / 25.0) * math.pi / (2.0 * warmup)
    down_slope = (1.0 - 1e-4) * math.pi / (2.0 * (500 - warmup))
    bound = max(up_slope, down_slope) + 1e-12
    values = [onecycle_lr(s, cfg) for s in range(501)]
    assert max(abs(values[i + 1] - values[i]) for i in range(500)) <= bound


def test_schedule_range_errors():
    cfg = ScheduleConfig(total_steps=10)
    with pytest.raises(ScheduleError):
        onecycle_lr(11, cfg)
    with pytest.raises(ScheduleError):
        onecycle_lr(-1, cfg)
    with pytest.raises(ConfigError):
        ScheduleConfig(total_steps=1).validate()
    with pytest.raises(ConfigError):
        ScheduleConfig(total_steps=10, pct_start=1.0).validate()


def test_schedule_tiny_run_keeps_warmup_nonempty():
    cfg = ScheduleConfig(total_steps=2)
    assert math.isclose(onecycle_lr(0, cfg), 0.04, rel_tol=1e-12)
    assert math.isclose(onecycle_lr(1, cfg), 1.0, rel_tol=1e-12)
    assert math.isclose(onecycle_lr(2, cfg), 1e-4, rel_tol=1e-12)


def test_param_groups():
    assert assign_group("fusion.img_proj_w") == "fusion_proj"
    assert assign_group("fusion.txt_proj_b") == "fusion_proj"
    assert assign_group("fusion.attn_w1") == "attention"
    assert assign_group("fusion.head_b") == "head"
    assert assign_group("anfis.centers") == "anfis"
    assert assign_group("linear.w") == "anfis"
    with pytest.raises(ConfigError):
        assign_group("mystery.w")
    ParamGroup("anfis", DEFAULT_LR_SCALES["anfis"]).validate()
    with pytest.raises(ConfigError):
        ParamGroup("nope").validate()
    with pytest.raises(ConfigError):
        ParamGroup("head", lr_scale=0.0).validate()


def test_adam_zero_gradient_is_identity():
    params = {"a": np.array([1.0, -2.0])}
    grads = {"a": np.zeros(2)}
    st = AdamState()
    adam_step(st, params, grads, {"a": 0.1})
    assert np.array_equal(params["a"], [1.0, -2.0])
    assert st.t == 1


def test_adam_first_step_hand_value():
    # t=1, g=1: m_hat = 1, v_hat = 1, delta = -lr / (1 + eps)
    params = {"w": np.array([0.0])}
    st = AdamState()
    adam_step(st, params, {"w": np.array([1.0])}, {"w": 0.05})
    expected = -0.05 / (1.0 + 1e-8)
    assert math.isclose(params["w"][0], expected, rel_tol=1e-12)


def test_adam_group_scaling():
    params = {"a": np.array([0.0]), "b": np.array([0.0])}
    grads = {"a": np.array([0.7]), "b": np.array([0.7])}
    st = AdamState()
    adam_step(st, params, grads, {"a": 0.1, "b": 0.01})
    assert math.isclose(params["a"][0] / params["b"][0], 10.0, rel_tol=1e-12)


def test_adam_deterministic_trajectory():
    def run():
        rng = np.random.default_rng(42)
        params = {"w": np.zeros(5)}
        st = AdamState()
        for _ in range(20):
            adam_step(st, params, {"w": rng.standard_normal(5)}, {"w": 0.01})
        return params["w"]

    assert np.array_equal(run(), run())


def test_adam_rejects_nonfinite_gradient_without_mutation():
    params = {"w": np.array([1.0]), "u": np.array([2.0])}
    st = AdamState()
    adam_step(st, params, {"w": np.array([0.5]), "u": np.array([0.5])}, {"w": 0.1, "u": 0.1})
    snap_w, snap_u, snap_t = params["w"].copy(), params["u"].copy(), st.t
    with pytest.raises(NumericError):
        adam_step(st, params, {"w": np.array([np.nan]), "u": np.array([0.5])}, {"w": 0.1, "u": 0.1})
    assert np.array_equal(params["w"], snap_w)
    assert np.array_equal(params["u"], snap_u)
    assert st.t == snap_t


def test_adam_projection_clamps():
    params = {"anfis.spreads": np.array([0.5, 0.002])}
    st = AdamState()
    adam_step(
        st,
        params,
        {"anfis.spreads": np.array([100.0, 100.0])},
        {"anfis.spreads": 0.5},
        projections={"anfis.spreads": lambda s: np.maximum(s, 1e-3)},
    )
    assert np.all(params["anfis.spreads"] >= 1e-3)
