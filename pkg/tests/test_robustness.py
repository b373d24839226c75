import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import sampled_worst_case

from kitempc.errors import NoFeasibleGain, RSViolation
from kitempc.robustness import (
    FrequencyGrid,
    PerformanceSpec,
    UncertaintyBounds,
    nominal_complementary,
    robust_stability_margin,
    rp_sup,
    select_gain,
    tune,
    weight_Wm,
    weight_Wp,
    worst_case_wp_s,
)

WM_ORACLE = 1.4255100340016628  # mpmath, |1.2 exp(-1.4j) - 1|
BOUNDS = UncertaintyBounds.relative(1.0, 0.7)
SPEC = PerformanceSpec(2.5, 0.9, 1.0)


def test_wm_branches():
    u = UncertaintyBounds(0.2, 0.14)
    assert weight_Wm(1e-9, 1.0, 0.7, u) == pytest.approx(0.2, abs=1e-9)
    assert weight_Wm(math.pi / 0.14, 1.0, 0.7, u) == pytest.approx(2.2)
    assert weight_Wm(100.0, 1.0, 0.7, u) == pytest.approx(2.2)
    assert weight_Wm(10.0, 1.0, 0.7, u) == pytest.approx(WM_ORACLE, abs=1e-12)


def test_wm_without_delay_uncertainty_uses_first_branch():
    u = UncertaintyBounds(0.2, 0.0)
    assert np.allclose(weight_Wm(np.logspace(-3, 3, 50), 1.0, 0.7, u), 0.2)


def test_wm_continuous_at_breakpoint():
    u = UncertaintyBounds(0.3, 0.2)
    w0 = math.pi / u.delta_td
    below = weight_Wm(np.nextafter(w0, 0.0), 1.5, 0.7, u)
    above = weight_Wm(w0, 1.5, 0.7, u)
    assert abs(below - above) < 1e-9


def test_wp_values():
    assert weight_Wp(1e-6, PerformanceSpec(2.5, 0.9, 1.0)) == pytest.approx(2.7778, abs=1e-4)
    spec = PerformanceSpec(2.5, 0.9, 0.5)
    assert weight_Wp(spec.l_r / spec.l_m, spec) == pytest.approx(spec.l_m / spec.l_e)
    assert weight_Wp(1.0, spec) == pytest.approx(0.5556, abs=1e-4)


def test_wp_continuous_at_breakpoint():
    w0 = SPEC.l_r / SPEC.l_m
    assert abs(weight_Wp(np.nextafter(w0, 0.0), SPEC) - weight_Wp(w0, SPEC)) < 1e-9


@given(st.floats(1e-3, 1e3), st.floats(0.01, 10.0), st.floats(0.01, 10.0))
def test_wp_nondecreasing_in_rate_limit(omega, lr1, lr2):
    lo, hi = sorted((lr1, lr2))
    assert weight_Wp(omega, PerformanceSpec(2.5, 0.9, lo)) <= weight_Wp(omega, PerformanceSpec(2.5, 0.9, hi))


def test_zero_uncertainty_gives_nominal_sensitivity():
    u = UncertaintyBounds(0.0, 0.0)
    omega, C_0 = 0.8, 2.0
    s = 1j * omega
    G0 = 1.0 / s
    C = C_0 / (1 + C_0 * G0 * (1 - np.exp(-s * 0.7)))
    L = C * G0 * np.exp(-s * 0.7)
    nominal = weight_Wp(omega, SPEC) * abs((1 + L * (1 - np.exp(s * 0.7))) / (1 + L))
    assert worst_case_wp_s(omega, C_0, 1.0, 0.7, u, SPEC) == pytest.approx(nominal, rel=1e-12)


def test_closed_form_matches_boundary_sampling():
    rng = np.random.default_rng(11)
    for _ in range(10):
        omega = 10 ** rng.uniform(-2, 2)
        C_0 = 10 ** rng.uniform(-1, 0.3)
        exact = worst_case_wp_s(omega, C_0, 1.0, 0.7, BOUNDS, SPEC)
        sampled = sampled_worst_case(omega, C_0, 1.0, 0.7, BOUNDS, SPEC)
        assert sampled <= exact * (1 + 1e-12)
        assert abs(exact - sampled) <= 1e-4 * exact


def test_large_gain_uncertainty_violates_stability():
    with pytest.raises(RSViolation):
        worst_case_wp_s(5.0, 5.0, 1.0, 0.7, UncertaintyBounds(10.0, 0.14), SPEC)


def test_complementary_closed_form_matches_loop():
    w = np.logspace(-2, 2, 30)
    s = 1j * w
    C_0, K, t_d = 1.7, 0.6, 0.7
    G0 = K / s
    C = C_0 / (1 + C_0 * G0 * (1 - np.exp(-s * t_d)))
    L = C * G0 * np.exp(-s * t_d)
    assert np.allclose(nominal_complementary(w, C_0, K), np.abs(L / (1 + L)), rtol=1e-10)


def test_stability_margin_limits():
    grid = FrequencyGrid()
    assert robust_stability_margin(1e-9, 1.0, 0.7, BOUNDS, grid) < 1e-6
    zero = UncertaintyBounds(0.0, 0.0)
    assert all(robust_stability_margin(c, 1.0, 0.7, zero, grid) == 0.0 for c in (0.1, 1.0, 10.0))


def test_stability_margin_nondecreasing_in_gain():
    grid = FrequencyGrid()
    margins = [robust_stability_margin(c, 1.0, 0.7, BOUNDS, grid) for c in np.logspace(-3, 3, 121)]
    assert np.all(np.diff(margins) >= -1e-12)


def test_select_gain_respects_headroom():
    grid = FrequencyGrid()
    C_0 = select_gain(1.0, 0.7, BOUNDS, grid)
    assert robust_stability_margin(C_0, 1.0, 0.7, BOUNDS, grid) <= 0.7
    with pytest.raises(NoFeasibleGain):
        select_gain(1.0, 0.7, UncertaintyBounds(10.0, 0.14), grid, gains=np.array([100.0]))


def test_tune_is_certified_and_deterministic():
    first = tune(1.0, 0.7, BOUNDS, 2.5, 0.9)
    second = tune(1.0, 0.7, BOUNDS, 2.5, 0.9)
    assert first == second
    assert first.sup_value < 1.0
    assert first.rs_margin <= 0.7
    assert 0.0 < first.l_r < 20.0


def test_certified_pair_holds_on_denser_grid():
    res = tune(1.0, 0.7, BOUNDS, 2.5, 0.9)
    spec = PerformanceSpec(2.5, 0.9, res.l_r)
    dense = rp_sup(res.C_0, 1.0, 0.7, BOUNDS, spec, FrequencyGrid.logspace(count=1600))
    assert dense < 1.05
    assert abs(dense - res.sup_value) <= 0.05 * res.sup_value


def test_tune_rejects_zero_delay():
    with pytest.raises(ValueError):
        tune(1.0, 0.0, BOUNDS, 2.5, 0.9)


def test_rate_limit_nonincreasing_in_delay():
    rates = [tune(1.0, t_d, UncertaintyBounds.relative(1.0, t_d), 2.5, 0.9).l_r for t_d in (0.3, 0.5, 0.7, 0.9, 1.1)]
    assert all(b <= a for a, b in zip(rates, rates[1:]))


def test_zero_uncertainty_allows_faster_commands():
    certain = tune(1.0, 0.7, UncertaintyBounds(0.0, 0.0), 2.5, 0.9)
    uncertain = tune(1.0, 0.7, BOUNDS, 2.5, 0.9)
    assert certain.l_r > uncertain.l_r


def test_relative_bounds_are_twenty_percent():
    u = UncertaintyBounds.relative(0.5, 0.7)
    assert u.delta_K == pytest.approx(0.1)
    assert u.delta_td == pytest.approx(0.14)
