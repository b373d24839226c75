"""Truth-model plant and closed-loop scenario engine.

The plant shares the structure of the control model (unicycle on the
sphere, delayed integrator steering) but its parameters follow the wind
speed and line length, the steering input passes through a first-order
actuator lag, and only noisy line angles are measured. The controller sees
nothing but measurements: the heading is reconstructed from differenced
positions and the model parameters are re-identified twice per cycle.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from collections import deque
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import KiteError, NearZenith, NoClosedPath, NoFeasibleGain, NoFeasibleRate, RunAborted, WindowViolation
from .estimation import VALID, OnlineEstimator, ParamEstimate, UpdateScheduler
from .guidance import GuidanceController, MpcConfig
from .kinematics import KinematicParams, KiteState, LineAngles, step_angles
from .qp import OPTIMAL
from .reference_path import PathSpec, ReferencePath, SafetyWindow, fit_amplitude, nearest_reference_index, revalidate
from .robustness import PerformanceSpec, UncertaintyBounds, tune
from .tracking import SteeringParams, TrackingController, TrackingGain, delay_steps

MAX_SOLVER_FAILURES = 100
TRANSIENT = 10.0
# a refit is forced when no anchor crossing fired for this many half-cycles
WATCHDOG_HALF_CYCLES = 2.0
WATCHDOG_MIN = 5.0


class ScenarioError(KiteError, ValueError):
    """Malformed scenario; ``field`` names the offending entry."""

    def __init__(self, field_name, message):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass(frozen=True)
class Schedule:
    """Piecewise-linear signal through ``(t, value)`` knots, held constant outside."""

    points: tuple

    def __post_init__(self):
        pts = tuple((float(t), float(v)) for t, v in self.points)
        if not pts:
            raise ValueError("schedule needs at least one point")
        if any(b[0] <= a[0] for a, b in zip(pts, pts[1:])):
            raise ValueError("schedule times must be strictly increasing")
        object.__setattr__(self, "points", pts)

    def __call__(self, t):
        ts, vs = zip(*self.points)
        return float(np.interp(t, ts, vs))

    def minimum(self):
        return min(v for _, v in self.points)


@dataclass(frozen=True)
class Coupling:
    """Truth parameters as functions of wind speed ``w`` and line length ``r``.

    r alpha_L = E w, r alpha_G = c_G, K = c_K w / r^2, t_d = a_d + b_d r / w^2.
    """

    E: float = 4.8
    c_G: float = 7.2
    c_K: float = 900.0
    a_d: float = 0.3
    b_d: float = 0.09

    def truth(self, w, r):
        return self.E * w / r, self.c_G / r, self.c_K * w / r ** 2, self.a_d + self.b_d * r / w ** 2


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "custom"
    duration: float = 20.0
    T: float = 0.01
    wind: Schedule = Schedule(((0.0, 4.5),))
    line: Schedule = Schedule(((0.0, 90.0),))
    coupling: Coupling = Coupling()
    sigma_theta: float = 5e-4
    sigma_phi: float = 5e-4
    tau_act: float = 0.05
    seed: int = 0
    target_theta: float = 0.8
    rate_margin: float = 0.8
    uncertainty: float = 0.2
    estimation: bool = True
    rate_width: int = 9
    heading_half_width: int = 12
    start_offset: tuple = (0.02, 0.02)
    start_index: int = 0

    def __post_init__(self):
        if not self.duration > 0:
            raise ScenarioError("duration", "must be positive")
        if not self.T > 0:
            raise ScenarioError("T", "must be positive")
        if not self.wind.minimum() > 0:
            raise ScenarioError("wind", "wind speed must stay positive")
        if not self.line.minimum() > 0:
            raise ScenarioError("line", "line length must stay positive")
        if self.sigma_theta < 0 or self.sigma_phi < 0:
            raise ScenarioError("sigma_theta" if self.sigma_theta < 0 else "sigma_phi", "must be non-negative")
        if self.tau_act < 0:
            raise ScenarioError("tau_act", "must be non-negative")
        if self.rate_width < 1:
            raise ScenarioError("rate_width", "must be at least 1")
        if self.heading_half_width < 1:
            raise ScenarioError("heading_half_width", "must be at least 1")
        for name in ("E", "c_G", "c_K", "a_d", "b_d"):
            if not getattr(self.coupling, name) >= 0:
                raise ScenarioError(f"coupling.{name}", "must be non-negative")
        if not (self.coupling.E > 0 and self.coupling.c_G > 0 and self.coupling.c_K > 0):
            raise ScenarioError("coupling", "E, c_G and c_K must be positive")

    @property
    def steps(self):
        return int(round(self.duration / self.T))

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["wind"] = [list(p) for p in self.wind.points]
        d["line"] = [list(p) for p in self.line.points]
        d["start_offset"] = list(self.start_offset)
        return d

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ScenarioError("<root>", "scenario must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        for key in d:
            if key not in known:
                raise ScenarioError(key, "unknown field")
        kw = {}
        types = {f.name: f for f in dataclasses.fields(cls)}
        for key, value in d.items():
            if key in ("wind", "line"):
                try:
                    if isinstance(value, (int, float)) and not isinstance(value, bool):
                        value = [[0.0, value]]
                    if any(len(p) != 2 or not all(_is_number(v) for v in p) for p in value):
                        raise ValueError("knots must be [t, value] pairs of numbers")
                    kw[key] = Schedule(tuple(tuple(p) for p in value))
                except (TypeError, ValueError) as exc:
                    raise ScenarioError(key, f"expected a list of [t, value] pairs ({exc})") from None
            elif key == "coupling":
                if not isinstance(value, dict):
                    raise ScenarioError(key, "expected an object")
                cf = {f.name for f in dataclasses.fields(Coupling)}
                for ck, cv in value.items():
                    if ck not in cf:
                        raise ScenarioError(f"coupling.{ck}", "unknown field")
                    if not _is_number(cv):
                        raise ScenarioError(f"coupling.{ck}", "expected a number")
                kw[key] = Coupling(**{k: float(v) for k, v in value.items()})
            elif key == "start_offset":
                if not (isinstance(value, list) and len(value) == 2 and all(_is_number(v) for v in value)):
                    raise ScenarioError(key, "expected [d_theta, d_phi]")
                kw[key] = tuple(float(v) for v in value)
            else:
                default = getattr(cls, key) if hasattr(cls, key) else types[key].default
                kw[key] = _coerce(key, value, default)
        return cls(**kw)


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _coerce(key, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ScenarioError(key, "expected true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ScenarioError(key, "expected an integer")
        return value
    if isinstance(default, float):
        if not _is_number(value):
            raise ScenarioError(key, "expected a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ScenarioError(key, "expected a string")
        return value
    return value


def load_scenario(path_or_name) -> ScenarioConfig:
    """Load a scenario from a JSON file, or a bundled one by name."""
    name = str(path_or_name)
    if name in bundled_scenarios():
        text = resources.files("kitempc.scenarios").joinpath(f"{name}.json").read_text()
    else:
        with open(name) as fh:
            text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError("<json>", f"invalid JSON: {exc.msg} at line {exc.lineno}") from None
    return ScenarioConfig.from_dict(data)


def bundled_scenarios():
    return ("flight1", "flight2")


class PlantTruth:
    """Kite with schedule-driven parameters, actuator lag and a delay line."""

    def __init__(self, scenario: ScenarioConfig, state: KiteState):
        self.sc = scenario
        self.state = state
        self.t = 0.0
        self.aL, self.aG, self.K, self.t_d = scenario.coupling.truth(scenario.wind(0.0), scenario.line(0.0))
        self._lagged = 0.0
        self._line = deque([0.0] * delay_steps(self.t_d, scenario.T))

    @property
    def n_d(self):
        return len(self._line)

    def _resize(self, n):
        # repeat the newest input when the delay grows so the plant sees no spurious zeros
        while len(self._line) > n:
            self._line.popleft()
        while len(self._line) < n:
            self._line.append(self._line[-1] if self._line else self._lagged)

    def step(self, delta: float) -> KiteState:
        """Advance one sample under the applied input ``delta``."""
        sc = self.sc
        T = sc.T
        if sc.tau_act > 0:
            self._lagged += T / max(sc.tau_act, T) * (delta - self._lagged)
        else:
            self._lagged = delta
        if self._line:
            self._line.append(self._lagged)
            delayed = self._line.popleft()
        else:
            delayed = self._lagged
        th, ph = self.state.xi
        gamma = self.state.gamma
        th, ph = step_angles(th, ph, gamma, self.aL, self.aG, T)
        gamma += T * self.K * delayed
        self.t += T
        r = sc.line(self.t)
        self.aL, self.aG, self.K, self.t_d = sc.coupling.truth(sc.wind(self.t), r)
        self._resize(delay_steps(self.t_d, T))
        self.state = KiteState(LineAngles(th, ph), gamma, r)
        return self.state


def plant_step(plant: PlantTruth, delta: float) -> KiteState:
    return plant.step(delta)


def measure(plant: PlantTruth, rng: np.random.Generator):
    th, ph = plant.state.xi
    return (
        th + plant.sc.sigma_theta * rng.standard_normal(),
        ph + plant.sc.sigma_phi * rng.standard_normal(),
        plant.state.r,
    )


class HeadingEstimator:
    """Causal heading from measured angles.

    The rate at ``m`` samples in the past is the symmetric difference over
    ``2m`` samples; the lag is bridged with the steering model by
    integrating the inputs that acted on the heading since then.
    """

    def __init__(self, m: int, gamma0: float, T: float, min_rate: float = 1e-3, history: int = 512):
        self.m = m
        self.T = T
        self.min_rate = min_rate
        self._pos = deque(maxlen=2 * m + 1)
        self._inputs = deque(maxlen=history)
        self._lagged = gamma0  # heading estimate m samples back

    def record_input(self, delta):
        self._inputs.append(delta)

    def update(self, theta, phi, steering: SteeringParams) -> float:
        """Add the current measurement; returns the heading estimate now."""
        self._pos.append((theta, phi))
        m, T, n_d = self.m, self.T, steering.n_d
        KT = steering.K * T
        inputs = list(self._inputs)
        L = len(inputs)
        # gamma[k-m] = gamma[k-m-1] + KT delta[k-m-1-n_d]
        if L >= n_d + m + 1:
            self._lagged += KT * inputs[L - n_d - m - 1]
        if len(self._pos) == 2 * m + 1:
            (th0, ph0), (th1, ph1) = self._pos[0], self._pos[-1]
            c = math.cos(self._pos[m][0])
            th_dot = (th1 - th0) / (2 * m * T)
            ph_dot = (ph1 - ph0) / (2 * m * T)
            if math.hypot(th_dot, c * ph_dot) > self.min_rate:
                g = math.atan2(c * ph_dot, th_dot)
                self._lagged = g + 2.0 * math.pi * round((self._lagged - g) / (2.0 * math.pi))
        recent = inputs[max(0, L - n_d - m):max(0, L - n_d)]
        return self._lagged + KT * math.fsum(recent)


LOG_COLUMNS = (
    "k", "t", "w", "r", "theta", "phi", "gamma",
    "theta_meas", "phi_meas", "gamma_est", "theta_pred", "phi_pred",
    "gamma_cmd", "delta", "j", "theta_ref", "phi_ref", "gamma_ref",
    "alpha_L", "alpha_G", "K", "t_d", "C_0", "l_r", "validity",
    "alpha_L_true", "alpha_G_true", "K_true", "t_d_true",
    "slack_active", "status", "iterations",
    "kkt_stationarity", "kkt_primal", "kkt_complementarity", "kkt_dual",
    "update", "path_id", "v_meas", "v_model",
)


@dataclass
class SimLog:
    columns: dict = field(default_factory=lambda: {c: [] for c in LOG_COLUMNS})
    paths: list = field(default_factory=list)
    updates: list = field(default_factory=list)
    aborted: RunAborted | None = None
    scenario: ScenarioConfig | None = None
    window: SafetyWindow = SafetyWindow()
    committed: int = 0

    def append(self, row: dict):
        for c in LOG_COLUMNS:
            self.columns[c].append(row[c])

    def __len__(self):
        return len(self.columns["t"])

    def array(self, name):
        return np.asarray(self.columns[name], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        cols = [self.columns[c] for c in LOG_COLUMNS]
        for row in zip(*cols):
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def read_log_csv(text: str) -> dict:
    """Parse a log CSV into columns of floats (strings kept for text columns)."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError("empty log")
    header = rows[0]
    out = {h: [] for h in header}
    for row in rows[1:]:
        if len(row) != len(header):
            raise ValueError(f"row has {len(row)} fields, header has {len(header)}")
        for h, v in zip(header, row):
            out[h].append(v)
    return out


@dataclass
class ControlState:
    estimate: ParamEstimate
    C_0: float
    l_r: float
    path: ReferencePath
    path_id: int = 0


def _path_spec(sc: ScenarioConfig, cfg: MpcConfig, l_r: float) -> PathSpec:
    return PathSpec(LineAngles(sc.target_theta, 0.0), 2.0, l_r, sc.rate_margin, cfg.window, cfg.l_m)


def _retune(est: ParamEstimate, sc: ScenarioConfig):
    u = UncertaintyBounds.relative(est.K, est.t_d, sc.uncertainty, sc.uncertainty)
    spec = PerformanceSpec()
    return tune(est.K, est.t_d, u, spec.l_m, spec.l_e)


def run_closed_loop(scenario: ScenarioConfig, cfg: MpcConfig | None = None, debug=None) -> SimLog:
    """Simulate ``scenario`` in closed loop.

    Args:
        scenario: plant, schedules and estimator settings.
        cfg: guidance configuration; its rate limit is replaced by the tuned one.
        debug: optional callable receiving one JSON line per guidance solve.

    Returns:
        The complete log. A run that has to stop early carries the reason
        in ``log.aborted`` and the samples recorded up to that point.
    """
    sc = scenario
    cfg = cfg or MpcConfig(T=sc.T)
    T = sc.T
    rng = np.random.default_rng(sc.seed)
    w0, r0 = sc.wind(0.0), sc.line(0.0)
    aL, aG, K, t_d = sc.coupling.truth(w0, r0)
    est = ParamEstimate(aL, aG, K, max(t_d, T), t=0.0)
    tr = _retune(est, sc)
    kp = KinematicParams(est.alpha_L, est.alpha_G, r0, T)
    path = fit_amplitude(_path_spec(sc, cfg, tr.l_r), kp, sc.target_theta)
    ctl = ControlState(est, tr.C_0, tr.l_r, path)

    xi0, g0 = path.point(sc.start_index)
    plant = PlantTruth(sc, KiteState(LineAngles(xi0.theta + sc.start_offset[0], xi0.phi + sc.start_offset[1]), g0, r0))
    steering = SteeringParams(est.K, est.t_d, T)
    tracker = TrackingController(steering, TrackingGain(ctl.C_0, "tuned"))
    guidance = GuidanceController(cfg.with_rate_limit(ctl.l_r), gamma_cmd_init=g0)
    heading = HeadingEstimator(sc.heading_half_width, g0, T)
    estimator = OnlineEstimator(T, est, width=sc.rate_width)
    scheduler = UpdateScheduler(path.N)

    log = SimLog(scenario=sc, window=cfg.window)
    log.paths.append(path)
    failures = 0
    last_fire, half_cycle = 0.0, None
    for k in range(sc.steps):
        t = k * T
        truth = plant.state
        r = truth.r
        th_m, ph_m, r_m = measure(plant, rng)
        g_est = heading.update(th_m, ph_m, steering)
        kp = KinematicParams(ctl.estimate.alpha_L, ctl.estimate.alpha_G, r_m, T)
        try:
            out = guidance.step(KiteState(LineAngles(th_m, ph_m), g_est, r_m), tracker.buffer, steering, kp, ctl.path)
        except NearZenith as exc:
            log.aborted = RunAborted("NearZenith", t, str(exc))
            break
        if debug is not None:
            debug(out.debug_record(k))
        failures = 0 if out.status == OPTIMAL else failures + 1
        delta, _ = tracker.step(out.gamma_cmd, g_est)
        heading.record_input(delta)
        estimator.record(th_m, ph_m, r_m, delta)

        ref_xi, ref_g = ctl.path.point(out.j)
        cth, cph = math.cos(truth.xi.theta), math.cos(truth.xi.phi)
        e = ctl.estimate
        row = {
            "k": k, "t": t, "w": sc.wind(t), "r": r,
            "theta": truth.xi.theta, "phi": truth.xi.phi, "gamma": truth.gamma,
            "theta_meas": th_m, "phi_meas": ph_m, "gamma_est": g_est,
            "theta_pred": out.xi_pred.theta, "phi_pred": out.xi_pred.phi,
            "gamma_cmd": out.gamma_cmd, "delta": delta, "j": out.j,
            "theta_ref": ref_xi.theta, "phi_ref": ref_xi.phi, "gamma_ref": ref_g,
            "alpha_L": e.alpha_L, "alpha_G": e.alpha_G, "K": e.K, "t_d": e.t_d,
            "C_0": ctl.C_0, "l_r": guidance.cfg.l_r, "validity": e.validity,
            "alpha_L_true": plant.aL, "alpha_G_true": plant.aG, "K_true": plant.K, "t_d_true": plant.t_d,
            "slack_active": bool(np.any(out.slack_active)), "status": out.status, "iterations": out.iterations,
            "kkt_stationarity": float(out.kkt[0]), "kkt_primal": float(out.kkt[1]),
            "kkt_complementarity": float(out.kkt[2]),
            "kkt_dual": float(max(0.0, -np.min(guidance.last_solution.lam, initial=0.0))),
            "update": False, "path_id": ctl.path_id,
            "v_meas": math.nan,
            "v_model": r * (e.alpha_L * cth * cph - e.alpha_G * math.cos(truth.gamma)),
        }
        if failures > MAX_SOLVER_FAILURES:
            log.append(row)
            log.aborted = RunAborted("SolverFailure", t, f"{failures} consecutive failed solves")
            break
        try:
            plant_step(plant, delta)
        except NearZenith as exc:
            log.append(row)
            log.aborted = RunAborted("NearZenith", t, str(exc))
            break

        # parameter updates are committed between samples
        fired = sc.estimation and scheduler.update(out.j)
        stalled = (sc.estimation and not fired and half_cycle is not None
                   and t + T - last_fire > max(WATCHDOG_MIN, WATCHDOG_HALF_CYCLES * half_cycle))
        if fired or stalled:
            row["update"] = fired
            if fired:
                gap = t + T - last_fire
                half_cycle = gap if half_cycle is None else 0.5 * (half_cycle + gap)
            last_fire = t + T
            new = estimator.refit(t + T)
            if new.validity == VALID and new.t_d > 0 and _apply_update(ctl, new, sc, cfg, guidance, tracker, log, t + T):
                log.committed += 1
                steering = tracker.steering
                scheduler.reset(ctl.path.N, nearest_reference_index(ctl.path, out.xi_pred))
            log.updates.append({**new.as_dict(), "C_0": ctl.C_0, "l_r": ctl.l_r, "path_id": ctl.path_id,
                                "source": "crossing" if fired else "watchdog"})
        log.append(row)
    _fill_measured_speed(log, sc)
    return log


def _apply_update(ctl: ControlState, new: ParamEstimate, sc, cfg, guidance, tracker, log, t):
    try:
        tr = _retune(new, sc)
    except (NoFeasibleGain, NoFeasibleRate):
        return False
    ctl.estimate = new
    ctl.C_0, ctl.l_r = tr.C_0, tr.l_r
    T = sc.T
    tracker.update_params(SteeringParams(new.K, new.t_d, T), TrackingGain(tr.C_0, "tuned"))
    guidance.set_rate_limit(tr.l_r)
    kp = KinematicParams(new.alpha_L, new.alpha_G, sc.line(t), T)
    if not revalidate(ctl.path, kp, tr.l_r, cfg.window):
        try:
            path = fit_amplitude(_path_spec(sc, cfg, tr.l_r), kp, sc.target_theta,
                                 initial=float(np.max(ctl.path.gamma_ref)))
        except (NoClosedPath, WindowViolation):
            path = None
        if path is not None and path.max_rate() <= tr.l_r:
            ctl.path = path
            ctl.path_id += 1
            log.paths.append(path)
    return True


def _fill_measured_speed(log: SimLog, sc: ScenarioConfig):
    n = len(log)
    if n < 3:
        return
    th = log.array("theta_meas")
    ph = log.array("phi_meas")
    r = log.array("r")
    from .estimation import moving_average

    th_dot = moving_average(np.gradient(th, sc.T), sc.rate_width)
    ph_dot = moving_average(np.gradient(ph, sc.T), sc.rate_width)
    v = r * np.sqrt(th_dot ** 2 + (np.cos(th) * ph_dot) ** 2)
    log.columns["v_meas"] = [float(x) for x in v]


def count_cycles(j, N_seq):
    """Completed reference cycles from the active-index trace.

    Progress is accumulated in phase (index over period), which carries
    over when a regenerated path has a different period. Jumps of more
    than a quarter period (branch switches where the figure of eight
    crosses itself) are ignored.
    """
    phase = np.asarray(j, dtype=float) / np.asarray(N_seq, dtype=float)
    d = np.diff(phase)
    d -= np.round(d)
    return float(np.sum(d[np.abs(d) <= 0.25]))


def summarize(log: SimLog) -> dict:
    sc = log.scenario
    T = sc.T
    t = log.array("t")
    th, ph = log.array("theta"), log.array("phi")
    d_pred = np.hypot(log.array("theta_pred") - log.array("theta_ref"), log.array("phi_pred") - log.array("phi_ref"))
    path_ids = np.asarray(log.columns["path_id"], dtype=int)
    d_act = np.empty(len(log))
    for i in range(len(log)):
        p = log.paths[path_ids[i]]
        d_act[i] = math.sqrt(float(np.min(np.sum((p.xi_ref - (th[i], ph[i])) ** 2, axis=1))))
    w = log.window
    outside = (th < w.theta_min) | (th > w.theta_max) | (ph < w.phi_min) | (ph > w.phi_max)
    after = t >= TRANSIENT
    e_td = shifted_error_series(log)
    gc = log.array("gamma_cmd")
    rate = np.abs(np.diff(gc)) / T
    l_r = log.array("l_r")[1:]
    N_seq = [log.paths[i].N for i in path_ids]
    status = log.columns["status"]
    counts = {s: status.count(s) for s in sorted(set(status))}
    upd = log.updates
    summary = {
        "scenario": sc.name,
        "samples": len(log),
        "duration": float(len(log) * T),
        "aborted": None if log.aborted is None else {"reason": log.aborted.reason, "t": log.aborted.t, "detail": log.aborted.detail},
        "rms_deviation_actual": float(np.sqrt(np.mean(d_act ** 2))),
        "rms_deviation_predicted": float(np.sqrt(np.mean(d_pred ** 2))),
        "max_abs_e_td": float(np.max(np.abs(e_td))) if e_td.size else math.nan,
        "window_violations": int(np.count_nonzero(outside)),
        "window_violations_after_transient": int(np.count_nonzero(outside & after)),
        "completed_cycles": int(math.floor(count_cycles(log.columns["j"], N_seq) + 1e-9)),
        "update_firings": int(sum(log.columns["update"])),
        "watchdog_updates": sum(1 for u in upd if u.get("source") == "watchdog"),
        "updates_committed": log.committed,
        "path_regenerations": len(log.paths) - 1,
        "max_abs_gamma_cmd": float(np.max(np.abs(gc))),
        "max_rate_over_limit": float(np.max(rate - l_r)) if rate.size else 0.0,
        "solver_status": counts,
        "parameter_trace": upd,
    }
    return summary


def shifted_error_series(log: SimLog) -> np.ndarray:
    """e[k] = gamma_cmd[k] - gamma[k + n_d(k)] with the controller's delay estimate."""
    gc = log.array("gamma_cmd")
    g = log.array("gamma")
    n_d = np.rint(log.array("t_d") / log.scenario.T).astype(int)
    idx = np.arange(len(gc)) + n_d
    ok = idx < len(g)
    return gc[ok] - g[idx[ok]]


def plot_data(log: SimLog) -> dict:
    """Raw series behind the trajectory, speed, heading and parameter figures."""
    e_td = shifted_error_series(log)
    pad = np.full(len(log) - e_td.size, np.nan)
    t = log.columns["t"]
    return {
        "trajectories.csv": (
            ("t", "theta_ref", "phi_ref", "theta", "phi", "theta_pred", "phi_pred"),
            [t, log.columns["theta_ref"], log.columns["phi_ref"], log.columns["theta"], log.columns["phi"],
             log.columns["theta_pred"], log.columns["phi_pred"]],
        ),
        "velocity.csv": (("t", "v_meas", "v_model"), [t, log.columns["v_meas"], log.columns["v_model"]]),
        "heading.csv": (
            ("t", "gamma", "gamma_est", "gamma_cmd", "gamma_ref", "e_td"),
            [t, log.columns["gamma"], log.columns["gamma_est"], log.columns["gamma_cmd"], log.columns["gamma_ref"],
             list(np.concatenate([e_td, pad]))],
        ),
        "parameters.csv": (
            ("t", "alpha_L", "alpha_G", "K", "t_d", "C_0", "l_r", "rate_cmd", "r", "w"),
            [t, log.columns["alpha_L"], log.columns["alpha_G"], log.columns["K"], log.columns["t_d"],
             log.columns["C_0"], log.columns["l_r"],
             [0.0] + list(np.abs(np.diff(log.array("gamma_cmd"))) / log.scenario.T),
             log.columns["r"], log.columns["w"]],
        ),
    }


def write_series_csv(header, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in zip(*columns):
        w.writerow([_fmt(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()
