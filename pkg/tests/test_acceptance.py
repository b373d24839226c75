"""Acceptance criteria, one test each.

Every test records its criterion number, a title and its runtime; the
conftest hook prints one PASS/FAIL line per criterion at the end of the
session. Criteria 6 to 9 share the bundled flight runs, whose wall time
is added to the runtime of the criteria that judge them.
"""

import math
import time

import numpy as np
import pytest
from conftest import run_bundled
from oracles import delayed_plant, dual_projected_gradient, fd_jacobian, random_qp, sampled_worst_case

from kitempc.guidance import MpcConfig
from kitempc.kinematics import KinematicParams, LineAngles, linearize
from kitempc.qp import solve
from kitempc.reference_path import SafetyWindow
from kitempc.robustness import PerformanceSpec, UncertaintyBounds, tune, weight_Wm, weight_Wp, worst_case_wp_s
from kitempc.simulator import ScenarioConfig
from kitempc.tracking import DelayBuffer, SteeringParams, predict_heading

STEADY_WIND = ((10.0, 50.0), (145.0, 180.0))


@pytest.fixture
def criterion(record_property):
    """Register the criterion; ``run_seconds`` adds the wall time of a shared flight run."""

    def register(number, title, run_seconds=0.0):
        record_property("criterion", number)
        record_property("title", title)
        record_property("run_seconds", run_seconds)

    return register


def test_configuration_fidelity(criterion):
    criterion(1, "default configuration matches the flight settings")
    cfg = MpcConfig()
    assert cfg.T == 0.01 and cfg.H == 30
    assert cfg.H * cfg.T == pytest.approx(0.3)
    assert np.array_equal(cfg.Q, np.diag([1.0, 2.0]))
    assert np.array_equal(cfg.Q_H, 5.0 * cfg.Q)
    assert cfg.R == 5e-3
    assert np.array_equal(cfg.S, 1e5 * cfg.Q)
    assert np.array_equal(cfg.S_H, 1e5 * cfg.Q_H)
    assert cfg.window == SafetyWindow(0.17, 1.40, -0.70, 0.70)
    assert cfg.l_m == 2.5
    spec = PerformanceSpec()
    assert (spec.l_m, spec.l_e) == (2.5, 0.9)
    u = UncertaintyBounds.relative(1.3, 0.7)
    assert (u.delta_K, u.delta_td) == pytest.approx((0.26, 0.14), abs=1e-15)
    assert ScenarioConfig().uncertainty == 0.2


def test_matched_predictor_exactness(criterion):
    criterion(2, "matched-model heading prediction is exact")
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    T = 0.01
    worst = 0.0
    for _ in range(10_000):
        n_d = int(rng.integers(1, 121))
        K = rng.uniform(0.1, 2.0)
        p = SteeringParams(K, n_d * T, T)
        k = n_d + int(rng.integers(0, 20))
        delta = rng.uniform(-3.0, 3.0, k + n_d)
        gamma = delayed_plant(rng.uniform(-3.0, 3.0), delta, n_d, K * T)
        buf = DelayBuffer(n_d)
        for d in delta[k - n_d:k]:
            buf.push(d)
        worst = max(worst, abs(predict_heading(gamma[k], buf, p) - gamma[k + n_d]))
    assert worst <= 1e-10
    assert time.perf_counter() - start < 5.0


def test_jacobian_correctness(criterion):
    criterion(3, "analytic linearisation matches finite differences")
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    for _ in range(1000):
        xi = LineAngles(rng.uniform(0.17, 1.40), rng.uniform(-0.70, 0.70))
        gamma = rng.uniform(-math.pi, math.pi)
        p = KinematicParams(rng.uniform(0.05, 1.0), rng.uniform(0.02, 0.5), T=0.01)
        A, B = linearize(xi, gamma, p)
        A_fd, B_fd = fd_jacobian(xi, gamma, p)
        J = np.column_stack([A - np.eye(2), B])
        J_fd = np.column_stack([A_fd - np.eye(2), B_fd])
        assert np.max(np.abs(J - J_fd)) <= 1e-6 * np.max(np.abs(J))
    assert time.perf_counter() - start < 5.0


def test_robustness_oracle_equivalence(criterion):
    criterion(4, "closed-form worst case matches boundary sampling")
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    K, t_d = 1.0, 0.7
    u = UncertaintyBounds.relative(K, t_d)
    spec = PerformanceSpec(2.5, 0.9, 1.0)
    for _ in range(10):
        omega = 10 ** rng.uniform(-2, 2)
        C_0 = 10 ** rng.uniform(-1, 0.3)
        exact = worst_case_wp_s(omega, C_0, K, t_d, u, spec)
        assert abs(exact - sampled_worst_case(omega, C_0, K, t_d, u, spec)) <= 1e-4 * exact
    w_m = math.pi / u.delta_td
    assert abs(weight_Wm(np.nextafter(w_m, 0.0), K, t_d, u) - weight_Wm(w_m, K, t_d, u)) <= 1e-9
    w_p = spec.l_r / spec.l_m
    assert abs(weight_Wp(np.nextafter(w_p, 0.0), spec) - weight_Wp(w_p, spec)) <= 1e-9
    assert time.perf_counter() - start < 10.0


def test_tuning_monotonicity(criterion):
    criterion(5, "tuned rate limit falls with delay and rises without uncertainty")
    start = time.perf_counter()
    rates = []
    for t_d in (0.3, 0.5, 0.7, 0.9, 1.1):
        rates.append(tune(1.0, t_d, UncertaintyBounds.relative(1.0, t_d), 2.5, 0.9).l_r)
    assert all(b <= a for a, b in zip(rates, rates[1:]))
    exact = tune(1.0, 0.7, UncertaintyBounds(0.0, 0.0), 2.5, 0.9).l_r
    assert exact > rates[2]
    assert time.perf_counter() - start < 30.0


def test_qp_solver(criterion, flight2_run):
    criterion(6, "QP solver matches the dual oracle and meets KKT tolerances in flight")
    start = time.perf_counter()
    rng = np.random.default_rng(6)
    problems = [random_qp(rng, n_max=12, m_max=30) for _ in range(100)]
    objectives, _, _, _ = dual_projected_gradient(problems)
    for problem, ref in zip(problems, objectives):
        sol = solve(problem)
        assert sol.optimal
        assert abs(sol.objective - ref) <= 1e-6
    run = flight2_run
    assert set(run.columns["status"]) == {"optimal"}
    assert np.max(run.array("kkt_stationarity")) <= 1e-6
    assert np.max(run.array("kkt_primal")) <= 1e-8
    assert np.max(run.array("kkt_complementarity")) <= 1e-7
    assert np.max(run.array("kkt_dual")) <= 1e-9
    assert time.perf_counter() - start < 60.0


def test_hard_constraints_over_flight2(criterion, flight2_run):
    run = flight2_run
    criterion(7, "command magnitude and rate limits hold over flight2", run.seconds)
    gc = run.array("gamma_cmd")
    assert gc.size == 18_000
    assert np.all(np.abs(gc) <= 2.5 + 1e-9)
    rate = np.abs(np.diff(gc)) / 0.01
    assert np.all(rate <= run.array("l_r")[1:] + 1e-9)
    assert np.unique(run.array("l_r")).size > 1
    assert run.seconds < 120.0


def test_flight1_qualitative(criterion, flight1_run):
    run = flight1_run
    criterion(8, "flight1 completes the cycle with the delayed prediction closer to the path", run.seconds)
    s = run.summary
    assert s["completed_cycles"] >= 1
    assert s["rms_deviation_predicted"] < s["rms_deviation_actual"]
    assert s["max_abs_e_td"] < 0.9
    assert run.seconds < 30.0


def test_flight2_envelope(criterion, flight2_run):
    run = flight2_run
    criterion(9, "flight2 envelope run stays in the window and tracks the delay trend", run.seconds)
    s = run.summary
    t, w, r = run.array("t"), run.array("w"), run.array("r")
    assert (w.min(), w.max()) == (2.7, 6.6)
    assert (r[0], r[-1]) == pytest.approx((79.0, 100.0), abs=0.01)
    assert s["window_violations_after_transient"] == 0
    assert s["completed_cycles"] >= 10
    assert abs(s["update_firings"] - 2 * s["completed_cycles"]) <= 1
    steady = np.zeros(t.size, dtype=bool)
    for lo, hi in STEADY_WIND:
        steady |= (t >= lo) & (t < hi)
    assert np.corrcoef(run.array("t_d")[steady], r[steady])[0, 1] > 0
    assert run.seconds < 120.0


def test_determinism(criterion, flight1_run, flight2_run, tmp_path):
    criterion(10, "repeated bundled runs give byte-identical logs")
    for first in (flight1_run, flight2_run):
        name = first.summary["scenario"]
        again = run_bundled(name, tmp_path / name)
        assert (again.out / "log.csv").read_bytes() == (first.out / "log.csv").read_bytes()
