"""Periodic figure-of-eight reference paths consistent with the discrete kinematics.

The reference heading is a sinusoid ``gamma_i = A sin(2 pi i / N) + c``.
Positions are produced by integrating the forward-Euler model from a start
state, so consecutive samples satisfy the model exactly; the start state
and the offset ``c`` are found by Newton shooting on the periodic closure
gap. With the amplitude above pi/2 the kite crosses the centre of the
window flying downwards and turns upwards through the two side loops.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import NearZenith, NoClosedPath, WindowViolation
from .kinematics import ZENITH_GUARD, KinematicParams, LineAngles, step_angles

CLOSURE_TOL = 1e-3
MAX_SHOOTING_ITERS = 200
FD_STEP = 1e-7
SHOOTING_ACCEPT = 1e-9


@dataclass(frozen=True)
class SafetyWindow:
    theta_min: float = 0.17
    theta_max: float = 1.40
    phi_min: float = -0.70
    phi_max: float = 0.70

    def __post_init__(self):
        if not (self.theta_min < self.theta_max and self.phi_min < self.phi_max):
            raise ValueError("window bounds must be ordered")

    @property
    def lower(self):
        return np.array([self.theta_min, self.phi_min])

    @property
    def upper(self):
        return np.array([self.theta_max, self.phi_max])

    def contains(self, theta, phi, margin=0.0):
        return (
            self.theta_min + margin <= theta <= self.theta_max - margin
            and self.phi_min + margin <= phi <= self.phi_max - margin
        )


@dataclass(frozen=True)
class PathSpec:
    """Shape request for a reference path.

    Attributes:
        center: nominal centre of the pattern; its azimuth is enforced, its
            elevation seeds the shooting (the elevation of a closed path is
            fixed by the lift/gravity balance).
        amplitude: heading amplitude A [rad], pi/2 < A < l_m.
        rate_limit: heading rate limit l_r [rad/s].
        rate_margin: fraction of l_r the reference may use.
    """

    center: LineAngles = LineAngles(0.7, 0.0)
    amplitude: float = 2.0
    rate_limit: float = 1.0
    rate_margin: float = 0.8
    window: SafetyWindow = SafetyWindow()
    l_m: float = 2.5

    def __post_init__(self):
        if not (math.pi / 2 < self.amplitude < self.l_m):
            raise ValueError(f"amplitude must lie in (pi/2, l_m), got {self.amplitude}")
        if not 0 < self.rate_margin < 1:
            raise ValueError("rate margin must lie in (0, 1)")
        if not self.rate_limit > 0:
            raise ValueError("rate limit must be positive")


@dataclass(frozen=True, eq=False)
class ReferencePath:
    xi_ref: np.ndarray  # (N, 2) columns theta, phi
    gamma_ref: np.ndarray  # (N,)
    T: float
    params: KinematicParams
    rate_limit: float = math.inf

    def __post_init__(self):
        xi = np.asarray(self.xi_ref, dtype=float).reshape(-1, 2)
        gamma = np.asarray(self.gamma_ref, dtype=float).reshape(-1)
        if xi.shape[0] != gamma.shape[0] or xi.shape[0] == 0:
            raise ValueError("xi_ref and gamma_ref must be non-empty and of equal length")
        xi.setflags(write=False)
        gamma.setflags(write=False)
        object.__setattr__(self, "xi_ref", xi)
        object.__setattr__(self, "gamma_ref", gamma)

    @property
    def N(self):
        return self.gamma_ref.shape[0]

    def point(self, i):
        i %= self.N
        return LineAngles(float(self.xi_ref[i, 0]), float(self.xi_ref[i, 1])), float(self.gamma_ref[i])

    def closure_gap(self):
        theta, phi = step_angles(*self.xi_ref[-1], self.gamma_ref[-1], self.params.alpha_L, self.params.alpha_G, self.T)
        return float(max(abs(theta - self.xi_ref[0, 0]), abs(phi - self.xi_ref[0, 1])))

    def max_rate(self):
        """Largest heading rate along the periodic sequence, seam included."""
        d = np.diff(np.append(self.gamma_ref, self.gamma_ref[0]))
        return float(np.max(np.abs(d)) / self.T)


def path_length(spec: PathSpec, T: float) -> int:
    """Smallest even period respecting the rate margin."""
    n = math.ceil(2.0 * math.pi * spec.amplitude / (spec.rate_margin * spec.rate_limit * T))
    return n + (n % 2)


def _integrate(theta0, phi0, gamma, aL, aG, T):
    """Forward-Euler rollout; :func:`step_angles` inlined for speed."""
    n = gamma.shape[0]
    cg = np.cos(gamma).tolist()
    sg = np.sin(gamma).tolist()
    s2g = np.sin(2.0 * gamma).tolist()
    th_out = [0.0] * (n + 1)
    ph_out = [0.0] * (n + 1)
    th, ph = float(theta0), float(phi0)
    th_out[0], ph_out[0] = th, ph
    TaL, TaG = T * aL, T * aG
    cos = math.cos
    for i in range(n):
        ct = cos(th)
        if ct <= ZENITH_GUARD:
            raise NearZenith(f"cos(theta) = {ct:.3g} at theta = {th:.6f}")
        cp = cos(ph)
        c = cg[i]
        th, ph = th + TaL * ct * cp * c - TaG * c * c, ph + TaL * cp * sg[i] - TaG * s2g[i] / (2.0 * ct)
        th_out[i + 1] = th
        ph_out[i + 1] = ph
    return np.column_stack([th_out, ph_out])


def generate_path(spec: PathSpec, params: KinematicParams, check_window: bool = True) -> ReferencePath:
    """Closed reference path for ``spec`` under ``params``.

    Raises:
        NoClosedPath: shooting did not reach the closure tolerance.
        WindowViolation: the closed path leaves the safety window.
    """
    T = params.T
    N = path_length(spec, T)
    base = spec.amplitude * np.sin(2.0 * math.pi * np.arange(N) / N)
    aL, aG = params.alpha_L, params.alpha_G

    # seed: the first quarter turns the kite from a side towards the centre crossing
    quarter = _integrate(spec.center.theta, 0.0, base[: N // 4], aL, aG, T)
    z = np.array([spec.center.theta, spec.center.phi - (quarter[-1, 1] - quarter[0, 1]), 0.0])

    def residual(z):
        gamma = base + z[2]
        xi = _integrate(z[0], z[1], gamma, aL, aG, T)
        res = np.array([xi[-1, 0] - z[0], xi[-1, 1] - z[1], np.mean(xi[:-1, 1]) - spec.center.phi])
        return res, xi, gamma

    try:
        res, xi, gamma = residual(z)
        for _ in range(MAX_SHOOTING_ITERS):
            if np.max(np.abs(res)) < 1e-12:
                break
            J = np.empty((3, 3))
            for k in range(3):
                dz = np.zeros(3)
                dz[k] = FD_STEP
                J[:, k] = (residual(z + dz)[0] - res) / FD_STEP
            step = np.linalg.solve(J, -res)
            # backtracking keeps the iterate away from the zenith
            t = 1.0
            while True:
                try:
                    trial = residual(z + t * step)
                except NearZenith:
                    trial = None
                if trial is not None and np.max(np.abs(trial[0])) < np.max(np.abs(res)):
                    break
                t *= 0.5
                if t < 1e-6:
                    if np.max(np.abs(res)) < SHOOTING_ACCEPT:
                        break
                    raise NoClosedPath(f"shooting stalled with closure residual {np.max(np.abs(res)):.3g}")
            if trial is None or t < 1e-6:
                break
            z = z + t * step
            res, xi, gamma = trial
    except NearZenith as exc:
        raise NoClosedPath(f"shooting reached the zenith: {exc}") from exc
    except np.linalg.LinAlgError as exc:
        raise NoClosedPath(f"singular shooting Jacobian: {exc}") from exc

    path = ReferencePath(xi[:-1], gamma, T, params, spec.rate_limit)
    if not path.closure_gap() < CLOSURE_TOL:
        raise NoClosedPath(f"closure gap {path.closure_gap():.3g} rad after shooting")
    if check_window:
        check_in_window(path, spec.window)
    return path


def check_in_window(path: ReferencePath, w: SafetyWindow) -> None:
    out = (
        (path.xi_ref[:, 0] < w.theta_min)
        | (path.xi_ref[:, 0] > w.theta_max)
        | (path.xi_ref[:, 1] < w.phi_min)
        | (path.xi_ref[:, 1] > w.phi_max)
    )
    if np.any(out):
        raise WindowViolation(f"{int(out.sum())} reference samples outside the safety window")


def fit_amplitude(spec: PathSpec, params: KinematicParams, target_theta: float,
                  lo: float = 1.75, hi: float = 2.3, tol: float = 2e-3,
                  initial: float | None = None) -> ReferencePath:
    """Closed path whose mean elevation is as close to ``target_theta`` as possible.

    The elevation of a closed path is set by the amplitude: wider heading
    swings spend more time flying down and settle lower. With ``initial``
    a secant iteration starts from that amplitude; otherwise, or if the
    secant leaves the bracket, bisection on the amplitude treats a failed
    closure as "too low".

    Raises:
        NoClosedPath: no amplitude in the bracket closes.
        WindowViolation: the selected path leaves the safety window.
    """
    lo = max(lo, math.pi / 2 + 1e-3)
    hi = min(hi, spec.l_m - 1e-3)

    def attempt(A):
        try:
            path = generate_path(dataclasses.replace(spec, amplitude=A), params, check_window=False)
        except NoClosedPath:
            return None, math.nan
        return path, float(np.mean(path.xi_ref[:, 0])) - target_theta

    if initial is not None:
        a0 = min(max(initial, lo), hi)
        p0, f0 = attempt(a0)
        if p0 is not None:
            if abs(f0) <= tol:
                check_in_window(p0, spec.window)
                return p0
            a1 = min(max(a0 + (0.01 if f0 > 0 else -0.01), lo), hi)
            for _ in range(8):
                p1, f1 = attempt(a1)
                if p1 is None or f1 == f0:
                    break
                if abs(f1) <= tol:
                    check_in_window(p1, spec.window)
                    return p1
                a2 = a1 - f1 * (a1 - a0) / (f1 - f0)
                if not lo <= a2 <= hi:
                    break
                a0, f0, a1 = a1, f1, a2

    best, f = attempt(lo)
    if best is None:
        raise NoClosedPath(f"no closed path at the smallest amplitude {lo:.3f}")
    if f > 0:
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            cand, fm = attempt(mid)
            if cand is not None and fm >= 0:
                lo, best = mid, cand
            else:
                hi = mid
    check_in_window(best, spec.window)
    return best


def nearest_reference_index(path: ReferencePath, query) -> int:
    d2 = np.sum((path.xi_ref - np.asarray(query, dtype=float)) ** 2, axis=1)
    return int(np.argmin(d2))


def dynamics_residual(path: ReferencePath, params: KinematicParams) -> float:
    """max_i ||xi_{i+1} - f_d(xi_i, gamma_i)||_inf over the open sequence."""
    worst = 0.0
    xi = path.xi_ref
    for i in range(path.N - 1):
        th, ph = step_angles(xi[i, 0], xi[i, 1], path.gamma_ref[i], params.alpha_L, params.alpha_G, params.T)
        worst = max(worst, abs(th - xi[i + 1, 0]), abs(ph - xi[i + 1, 1]))
    return worst


def revalidate(path: ReferencePath, params: KinematicParams, l_r: float, window: SafetyWindow | None = None) -> bool:
    """Whether ``path`` is still a valid reference under new parameters and rate limit.

    The per-step model residual is accepted if, accumulated over a period,
    it stays within the closure tolerance.
    """
    if path.max_rate() > l_r:
        return False
    if params.T != path.T:
        return False
    if dynamics_residual(path, params) * path.N > CLOSURE_TOL:
        return False
    path_at_new = ReferencePath(path.xi_ref, path.gamma_ref, path.T, params)
    if path_at_new.closure_gap() >= CLOSURE_TOL:
        return False
    if window is not None:
        if not all(window.contains(t, f) for t, f in path.xi_ref):
            return False
    return True


def to_csv(path: ReferencePath) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["index", "theta", "phi", "gamma"])
    for i in range(path.N):
        writer.writerow([i, repr(float(path.xi_ref[i, 0])), repr(float(path.xi_ref[i, 1])), repr(float(path.gamma_ref[i]))])
    return buf.getvalue()


def from_csv(text: str, params: KinematicParams, rate_limit: float = math.inf) -> ReferencePath:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise ValueError("empty path file")
    rows.sort(key=lambda r: int(r["index"]))
    xi = np.array([[float(r["theta"]), float(r["phi"])] for r in rows])
    gamma = np.array([float(r["gamma"]) for r in rows])
    return ReferencePath(xi, gamma, params.T, params, rate_limit)
