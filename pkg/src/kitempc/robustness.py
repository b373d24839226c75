"""Frequency-domain robustness analysis of the predictor-feedback heading loop.

The steering plant is an integrator with input delay, G(s) = K/s e^{-s t_d},
under multiplicative uncertainty (1 + W_m Delta) G with |Delta| <= 1. The
predictor feedback law is equivalent to the controller
C(s) = C_0 / (1 + C_0 G_0(s) (1 - e^{-s t_d})).

Robust performance of the time-shifted tracking error is evaluated per
frequency. For a single complex scalar perturbation the worst case of the
weighted sensitivity over the closed unit disk is attained on the boundary
and has a closed form: the unit circle is mapped by a Moebius transform to
a circle whose farthest point from the origin is |centre| + radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NoFeasibleGain, NoFeasibleRate, RSViolation

RS_HEADROOM = 0.7
DEFAULT_GAIN_GRID = np.logspace(-3, 3, 601)


@dataclass(frozen=True)
class UncertaintyBounds:
    delta_K: float
    delta_td: float

    def __post_init__(self):
        if self.delta_K < 0 or self.delta_td < 0:
            raise ValueError("uncertainty bounds must be non-negative")

    @classmethod
    def relative(cls, K, t_d, frac_K=0.2, frac_td=0.2):
        return cls(frac_K * K, frac_td * t_d)


@dataclass(frozen=True)
class PerformanceSpec:
    """Limits on the commanded heading and the shifted tracking error.

    Attributes:
        l_m: magnitude limit of the commanded heading [rad].
        l_e: admissible shifted tracking error [rad].
        l_r: rate limit of the commanded heading [rad/s].
    """

    l_m: float = 2.5
    l_e: float = 0.9
    l_r: float = 1.0

    def __post_init__(self):
        if not (self.l_m > 0 and self.l_e > 0 and self.l_r > 0):
            raise ValueError("performance limits must be positive")
        if not self.l_e < self.l_m:
            raise ValueError("l_e must be smaller than l_m")


@dataclass(frozen=True)
class FrequencyGrid:
    omega: np.ndarray = field(default_factory=lambda: np.logspace(-3, 3, 400))

    def __post_init__(self):
        w = np.asarray(self.omega, dtype=float)
        if w.ndim != 1 or w.size == 0 or np.any(w <= 0) or np.any(np.diff(w) <= 0):
            raise ValueError("frequency grid must be positive and strictly increasing")
        object.__setattr__(self, "omega", w)

    @classmethod
    def logspace(cls, lo=1e-3, hi=1e3, count=400):
        return cls(np.logspace(math.log10(lo), math.log10(hi), count))

    @property
    def count(self):
        return self.omega.size


@dataclass(frozen=True)
class TuningResult:
    C_0: float
    l_r: float
    sup_value: float
    rs_margin: float


def weight_Wm(omega, K, t_d, u: UncertaintyBounds):
    """Magnitude of the multiplicative uncertainty weight for a delayed integrator.

    ``t_d`` does not enter the weight; it is accepted for a uniform signature.
    Works elementwise on arrays of ``omega``.
    """
    if not K > 0:
        raise ValueError("K must be positive")
    w = np.asarray(omega, dtype=float)
    gain = (K + u.delta_K) / K
    low = np.abs(gain * np.exp(-1j * u.delta_td * w) - 1.0)
    if u.delta_td == 0:
        out = low
    else:
        out = np.where(w < math.pi / u.delta_td, low, abs(gain) + 1.0)
    return float(out) if np.ndim(out) == 0 else out


def weight_Wp(omega, spec: PerformanceSpec):
    w = np.asarray(omega, dtype=float)
    corner = spec.l_r / spec.l_m
    with np.errstate(divide="ignore"):
        out = np.where(w < corner, spec.l_m / spec.l_e, spec.l_r / (spec.l_e * w))
    return float(out) if np.ndim(out) == 0 else out


def loop_transfer(omega, C_0, K, t_d):
    """L(j omega) = C(j omega; C_0) G(j omega) of the predictor feedback loop."""
    s = 1j * np.asarray(omega, dtype=float)
    G0 = K / s
    C = C_0 / (1.0 + C_0 * G0 * (1.0 - np.exp(-s * t_d)))
    return C * G0 * np.exp(-s * t_d)


def sensitivity_coefficients(omega, C_0, K, t_d, u: UncertaintyBounds, shift_sign=+1):
    """Coefficients (a, b, c, d) with S^p = (a + b Delta) / (c + d Delta).

    ``shift_sign`` selects the sign of the exponent in the numerator's
    forward-shift factor e^{shift_sign * s t_d}; +1 is the nominal form.
    """
    w = np.asarray(omega, dtype=float)
    L = loop_transfer(w, C_0, K, t_d)
    Wm = weight_Wm(w, K, t_d, u)
    shift = 1.0 - np.exp(shift_sign * 1j * w * t_d)
    a = 1.0 + L * shift
    b = L * shift * Wm
    c = 1.0 + L
    d = L * Wm
    return a, b, c, d


def moebius_disk_max(a, b, c, d):
    """max_{|z|<=1} |(a + b z)/(c + d z)| for |c| > |d| (elementwise)."""
    den = np.abs(c) ** 2 - np.abs(d) ** 2
    centre = (a * np.conj(c) - b * np.conj(d)) / den
    radius = np.abs(a * d - b * c) / den
    return np.abs(centre) + radius


def worst_case_wp_s(omega, C_0, K, t_d, u: UncertaintyBounds, spec: PerformanceSpec, shift_sign=+1):
    """Worst-case |W_p S^p| at one frequency over the unit-disk perturbation.

    Raises:
        RSViolation: if the perturbed sensitivity has a pole in the disk,
            i.e. |c| <= |d|.
    """
    if not omega > 0:
        raise ValueError("omega must be positive")
    a, b, c, d = sensitivity_coefficients(omega, C_0, K, t_d, u, shift_sign)
    if abs(c) <= abs(d):
        raise RSViolation(f"robust stability lost at omega={omega:.4g} rad/s")
    return float(weight_Wp(omega, spec) * moebius_disk_max(a, b, c, d))


def worst_case_curve(grid: FrequencyGrid, C_0, K, t_d, u, spec, shift_sign=+1):
    """Vectorised worst case over a grid; NaN where robust stability is lost."""
    w = grid.omega
    a, b, c, d = sensitivity_coefficients(w, C_0, K, t_d, u, shift_sign)
    ok = np.abs(c) > np.abs(d)
    out = np.full(w.shape, np.nan)
    out[ok] = weight_Wp(w[ok], spec) * moebius_disk_max(a[ok], b[ok], c[ok], d[ok])
    return out


def nominal_complementary(omega, C_0, K):
    """|T_nom(j omega)| = C_0 K / sqrt(omega^2 + (C_0 K)^2)."""
    a = C_0 * K
    return a / np.sqrt(np.asarray(omega, dtype=float) ** 2 + a * a)


def robust_stability_margin(C_0, K, t_d, u: UncertaintyBounds, grid: FrequencyGrid) -> float:
    w = grid.omega
    return float(np.max(weight_Wm(w, K, t_d, u) * nominal_complementary(w, C_0, K)))


def rp_sup(C_0, K, t_d, u, spec, grid, shift_sign=+1):
    """Sup over the grid of the worst-case weighted sensitivity (inf if RS fails)."""
    curve = worst_case_curve(grid, C_0, K, t_d, u, spec, shift_sign)
    if np.any(np.isnan(curve)):
        return math.inf
    return float(np.max(curve))


def select_gain(K, t_d, u, grid, gains=DEFAULT_GAIN_GRID, headroom=RS_HEADROOM) -> float:
    """Largest gain on ``gains`` whose robust-stability margin is within ``headroom``."""
    best = None
    for C_0 in gains:
        if robust_stability_margin(C_0, K, t_d, u, grid) <= headroom:
            best = float(C_0)
        else:
            break
    if best is None:
        raise NoFeasibleGain(
            f"smallest gain {gains[0]:.3g} violates the robust-stability headroom {headroom}"
        )
    return best


def tune(K, t_d, u: UncertaintyBounds, l_m, l_e, grid: FrequencyGrid | None = None,
         l_r_hi=20.0, tol=1e-3, shift_sign=+1) -> TuningResult:
    """Select (C_0, l_r): robustly stable gain, then the largest certified rate limit.

    The rate limit is found by bisection; the worst case is nondecreasing in
    ``l_r`` because the performance weight is.
    """
    if not K > 0:
        raise ValueError("K must be positive")
    if not t_d > 0:
        raise ValueError("t_d must be positive; the predictor degenerates for t_d = 0")
    grid = grid or FrequencyGrid()
    C_0 = select_gain(K, t_d, u, grid)

    def certified(l_r):
        return rp_sup(C_0, K, t_d, u, PerformanceSpec(l_m, l_e, l_r), grid, shift_sign) < 1.0

    lo = 1e-3
    if not certified(lo):
        raise NoFeasibleRate(f"no rate limit >= {lo} certifies robust performance (C_0={C_0:.4g})")
    hi = l_r_hi
    if certified(hi):
        lo = hi
    else:
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if certified(mid):
                lo = mid
            else:
                hi = mid
    sup = rp_sup(C_0, K, t_d, u, PerformanceSpec(l_m, l_e, lo), grid, shift_sign)
    return TuningResult(C_0, lo, sup, robust_stability_margin(C_0, K, t_d, u, grid))
