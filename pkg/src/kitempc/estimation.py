"""Online identification of the velocity and steering model parameters.

Rates are obtained by differencing measured line angles and smoothing
with a centred moving average. The velocity model is linear in
(alpha_L, alpha_G) and is fitted by ordinary least squares; the steering
model is fitted by an exhaustive search over integer delays with a
closed-form gain for each delay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateData, WindowTooShort
from .kinematics import RATE_EPS

MIN_SAMPLES = 50
CLAMP_FLOOR = 1e-4
MAX_CONDITION = 1e8

VALID = "valid"
DEGRADED = "degraded"
INVALID = "invalid"


@dataclass
class MeasurementWindow:
    """Uniformly sampled measurements; all arrays share one length."""

    theta: np.ndarray
    phi: np.ndarray
    r: np.ndarray
    delta: np.ndarray
    T: float = 0.01
    wind: np.ndarray | None = None
    t0: float = 0.0

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float)
        n = self.theta.shape[0]
        self.r = np.broadcast_to(np.asarray(self.r, dtype=float), (n,)).copy()
        self.delta = np.asarray(self.delta, dtype=float)
        if self.phi.shape[0] != n or self.delta.shape[0] != n:
            raise ValueError("measurement arrays must have equal length")
        if self.wind is not None:
            self.wind = np.broadcast_to(np.asarray(self.wind, dtype=float), (n,)).copy()

    def __len__(self):
        return self.theta.shape[0]


@dataclass
class RateSeries:
    theta: np.ndarray
    phi: np.ndarray
    theta_dot: np.ndarray
    phi_dot: np.ndarray
    gamma: np.ndarray
    v_meas: np.ndarray
    valid: np.ndarray
    r: np.ndarray
    T: float


@dataclass
class ParamEstimate:
    alpha_L: float
    alpha_G: float
    K: float
    t_d: float
    residual_velocity: float = math.nan
    residual_steering: float = math.nan
    t: float = 0.0
    validity: str = VALID
    flags: list = field(default_factory=list)

    def as_dict(self):
        return {
            "t": self.t,
            "alpha_L": self.alpha_L,
            "alpha_G": self.alpha_G,
            "K": self.K,
            "t_d": self.t_d,
            "validity": self.validity,
        }


def moving_average(x, width):
    """Centred moving average; the ends average over the available samples."""
    x = np.asarray(x, dtype=float)
    if width <= 1:
        return x.copy()
    half = width // 2
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(x.shape[0])
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, x.shape[0])
    return (c[hi] - c[lo]) / (hi - lo)


def difference(x, T, scheme="central"):
    x = np.asarray(x, dtype=float)
    if scheme == "central":
        return np.gradient(x, T)
    if scheme == "forward":
        d = np.empty_like(x)
        d[:-1] = np.diff(x) / T
        d[-1] = d[-2] if x.shape[0] > 1 else 0.0
        return d
    raise ValueError(f"unknown difference scheme {scheme!r}")


def unwrap_from(gamma, valid):
    """Unwrap headings across valid samples.

    Invalid samples carry the last valid value; leading ones take the first.
    """
    out = np.array(gamma, dtype=float)
    last = None
    for i in range(out.shape[0]):
        if not valid[i]:
            if last is not None:
                out[i] = last
            continue
        if last is not None:
            out[i] += 2.0 * math.pi * round((last - out[i]) / (2.0 * math.pi))
        last = out[i]
    first = np.flatnonzero(valid)
    out[: first[0] if first.size else out.shape[0]] = out[first[0]] if first.size else 0.0
    return out


def finite_difference_rates(window: MeasurementWindow, width: int = 9, scheme: str = "central") -> RateSeries:
    """Line-angle rates, heading and speed from a measurement window.

    Samples whose smoothed rates vanish have no defined heading and are
    flagged invalid, as are the ``width // 2 + 1`` samples at each end
    where the smoothing window is truncated.
    """
    n = len(window)
    if n < max(width, 3):
        raise WindowTooShort(f"window of {n} samples is shorter than the smoothing width {width}")
    T = window.T
    th_dot = moving_average(difference(window.theta, T, scheme), width)
    ph_dot = moving_average(difference(window.phi, T, scheme), width)
    c = np.cos(window.theta)
    moving = (np.abs(th_dot) >= RATE_EPS) | (np.abs(ph_dot) >= RATE_EPS)
    gamma = np.where(moving, np.arctan2(c * ph_dot, th_dot), 0.0)
    valid = moving.copy()
    edge = width // 2 + 1 if width > 1 else 0
    if scheme == "forward":
        valid[-(edge + 1):] = False
        valid[:edge] = False
    elif edge:
        valid[:edge] = False
        valid[-edge:] = False
    gamma = unwrap_from(gamma, valid)
    v = window.r * np.sqrt(th_dot ** 2 + (c * ph_dot) ** 2)
    return RateSeries(window.theta, window.phi, th_dot, ph_dot, gamma, v, valid, window.r, T)


def fit_velocity_params(rates: RateSeries, r=None):
    """Least-squares fit of v = r alpha_L cos(theta) cos(phi) - r alpha_G cos(gamma).

    Returns:
        (alpha_L, alpha_G, rms residual, validity)

    Raises:
        DegenerateData: too few samples or collinear regressors.
    """
    r = rates.r if r is None else np.broadcast_to(np.asarray(r, dtype=float), rates.theta.shape)
    m = rates.valid
    if np.count_nonzero(m) < 2:
        raise DegenerateData("fewer than two valid samples")
    X = np.column_stack([
        r[m] * np.cos(rates.theta[m]) * np.cos(rates.phi[m]),
        -r[m] * np.cos(rates.gamma[m]),
    ])
    y = rates.v_meas[m]
    cond = np.linalg.cond(X)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise DegenerateData(f"regressor condition number {cond:.3g}")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    validity = VALID
    if np.any(coef <= 0):
        validity = DEGRADED
        k = int(np.argmin(coef))
        other = 1 - k
        coef = np.empty(2)
        coef[k] = CLAMP_FLOOR
        resid_target = y - X[:, k] * CLAMP_FLOOR
        xo = X[:, other]
        coef[other] = max(float(xo @ resid_target / (xo @ xo)), CLAMP_FLOOR)
    res = y - X @ coef
    return float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(res ** 2))), validity


def heading_rate(rates: RateSeries, width: int = 9, scheme: str = "central"):
    return moving_average(difference(rates.gamma, rates.T, scheme), width)


def fit_steering_params(gamma_dot, delta, T, t_d_max=1.5, valid=None):
    """Delay grid search with closed-form gain for gamma_dot[k] = K delta[k - lag].

    Args:
        gamma_dot: heading rates over the fitting window (length n).
        delta: applied inputs; the last n entries align with ``gamma_dot``
            and at least ``round(t_d_max / T)`` earlier entries must precede
            them.
        valid: optional mask over the window.

    Returns:
        (K, t_d, rms residual, validity, sse per lag)
    """
    gamma_dot = np.asarray(gamma_dot, dtype=float)
    delta = np.asarray(delta, dtype=float)
    n = gamma_dot.shape[0]
    max_lag = int(round(t_d_max / T))
    if delta.shape[0] < n + max_lag:
        raise WindowTooShort(f"need {n + max_lag} inputs to cover delays up to {t_d_max} s, got {delta.shape[0]}")
    m = np.ones(n, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if np.count_nonzero(m) < 2:
        raise DegenerateData("fewer than two valid samples")
    y = gamma_dot[m]
    start = delta.shape[0] - n
    sse = np.full(max_lag + 1, math.inf)
    gains = np.zeros(max_lag + 1)
    for lag in range(max_lag + 1):
        x = delta[start - lag:start - lag + n][m]
        sxx = float(x @ x)
        if sxx < 1e-10:
            continue
        K = float(x @ y) / sxx
        gains[lag] = K
        res = y - K * x
        sse[lag] = float(res @ res)
    if not np.any(np.isfinite(sse)):
        raise DegenerateData("steering input has no energy over the window")
    best = int(np.argmin(sse))
    K = gains[best]
    validity = VALID
    if K <= 0:
        K = CLAMP_FLOOR
        validity = DEGRADED
    rms = math.sqrt(sse[best] / y.shape[0])
    return float(K), best * T, rms, validity, sse


class UpdateScheduler:
    """Fires when the active reference index passes 0 or N/2 moving forward.

    Index jumps of more than a quarter period (the two branches of the
    figure of eight meet at the centre) count as no progress. After a
    firing, at least a quarter period of forward progress is required
    before the next one, so re-anchoring on a regenerated path cannot
    fire twice at the same anchor.
    """

    def __init__(self, N: int, j0: int | None = None):
        self.N = int(N)
        self.last = None if j0 is None else int(j0) % self.N
        self.since_fire = 0.5
        self.progress = 0.0

    def reset(self, N: int, j0: int | None = None):
        """Switch to a new path of period ``N``; the refractory state is kept."""
        self.N = int(N)
        self.last = None if j0 is None else int(j0) % self.N

    def update(self, j: int) -> bool:
        N = self.N
        j = int(j) % N
        if self.last is None:
            self.last = j
            return False
        step = (j - self.last) % N
        if step > N // 2:
            step -= N
        fire = False
        if 0 < step <= N // 4:
            crossed = any(0 < (a - self.last) % N <= step for a in (0, N // 2))
            self.progress += step / N
            self.since_fire += step / N
            if crossed and self.since_fire >= 0.25:
                fire = True
                self.since_fire = 0.0
        elif -N // 4 <= step < 0:
            self.progress += step / N
            self.since_fire += step / N
        self.last = j
        return fire


class OnlineEstimator:
    """Collects measurements and refits all parameters on demand."""

    def __init__(self, T, initial: ParamEstimate, width=9, steering_width=25, t_d_max=1.5, scheme="central"):
        self.T = T
        self.estimate = initial
        self.width = width
        self.steering_width = steering_width
        self.t_d_max = t_d_max
        self.scheme = scheme
        self._theta, self._phi, self._r, self._delta = [], [], [], []
        self._since = 0

    def record(self, theta, phi, r, delta):
        self._theta.append(theta)
        self._phi.append(phi)
        self._r.append(r)
        self._delta.append(delta)
        self._since += 1
        keep = 4 * int(round(self.t_d_max / self.T)) + 20000
        if len(self._theta) > keep:
            cut = len(self._theta) - keep
            for buf in (self._theta, self._phi, self._r, self._delta):
                del buf[:cut]

    def refit(self, t: float) -> ParamEstimate:
        """Fit on the samples gathered since the previous refit."""
        max_lag = int(round(self.t_d_max / self.T))
        n = min(self._since, len(self._theta) - max_lag)
        self._since = 0
        if n < MIN_SAMPLES:
            return self.estimate
        window = MeasurementWindow(
            self._theta[-n:], self._phi[-n:], self._r[-n:], self._delta[-n:], self.T, t0=t - n * self.T
        )
        prev = self.estimate
        flags = []
        try:
            rates = finite_difference_rates(window, self.width, self.scheme)
            aL, aG, res_v, val_v = fit_velocity_params(rates)
        except (DegenerateData, WindowTooShort) as exc:
            aL, aG, res_v, val_v = prev.alpha_L, prev.alpha_G, math.nan, INVALID
            flags.append(str(exc))
            rates = None
        try:
            if rates is None:
                raise DegenerateData("no rates")
            gd = heading_rate(rates, self.steering_width if self.scheme == "central" else 1, self.scheme)
            valid = rates.valid.copy()
            edge = self.width // 2 + (self.steering_width // 2 if self.scheme == "central" else 0) + 2
            valid[:edge] = False
            valid[-edge:] = False
            # the inputs get the same smoothing as the heading rate so both sides stay aligned
            sw = self.steering_width if self.scheme == "central" else 1
            delta = moving_average(np.asarray(self._delta[-(n + max_lag):]), sw)
            K, t_d, res_s, val_s, _ = fit_steering_params(gd, delta, self.T, self.t_d_max, valid)
        except (DegenerateData, WindowTooShort) as exc:
            K, t_d, res_s, val_s = prev.K, prev.t_d, math.nan, INVALID
            flags.append(str(exc))
        validity = VALID
        if INVALID in (val_v, val_s):
            validity = INVALID
        elif DEGRADED in (val_v, val_s):
            validity = DEGRADED
        self.estimate = ParamEstimate(aL, aG, K, t_d, res_v, res_s, t, validity, flags)
        return self.estimate
