"""Kinematic unicycle model of a tethered kite on the sphere of radius r.

Positions are line angles measured at the ground station: elevation
``theta`` above the ground plane and azimuth ``phi`` from the wind axis.
The heading ``gamma`` is the direction of motion on the sphere, zero when
the kite flies straight up (increasing ``theta``) and +pi/2 when it flies
towards positive azimuth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import NearZenith, ZeroVelocity

ZENITH_GUARD = 1e-6
RATE_EPS = 1e-12


class LineAngles(NamedTuple):
    theta: float
    phi: float


class CartesianPosition(NamedTuple):
    px: float
    py: float
    pz: float


@dataclass(frozen=True)
class KiteState:
    xi: LineAngles
    gamma: float
    r: float

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError(f"line length must be positive, got {self.r}")
        if not math.isfinite(self.gamma):
            raise ValueError("heading must be finite")


@dataclass(frozen=True)
class KinematicParams:
    """Parameters of the velocity model and its discretisation.

    Attributes:
        alpha_L: lift velocity coefficient [1/s].
        alpha_G: gravity velocity coefficient [1/s].
        r: line length [m]. Only the continuous model depends on it.
        T: sampling period [s].
    """

    alpha_L: float
    alpha_G: float
    r: float = 90.0
    T: float = 0.01

    def __post_init__(self):
        if not (self.alpha_L > 0 and self.alpha_G > 0):
            raise ValueError("alpha_L and alpha_G must be positive")
        if not self.r > 0:
            raise ValueError("line length must be positive")
        if not self.T >= 0:
            raise ValueError("sampling period must be non-negative")

    def replace(self, **changes) -> "KinematicParams":
        fields = dict(alpha_L=self.alpha_L, alpha_G=self.alpha_G, r=self.r, T=self.T)
        fields.update(changes)
        return KinematicParams(**fields)


def _check_zenith(theta):
    c = math.cos(theta)
    if c <= ZENITH_GUARD:
        raise NearZenith(f"cos(theta) = {c:.3g} at theta = {theta:.6f}")
    return c


def to_cartesian(state: KiteState) -> CartesianPosition:
    theta, phi = state.xi
    r = state.r
    return CartesianPosition(
        r * math.cos(theta) * math.cos(phi),
        r * math.cos(theta) * math.sin(phi),
        r * math.sin(theta),
    )


def heading_from_rates(theta: float, theta_dot: float, phi_dot: float) -> float:
    """Four-quadrant heading of the velocity (cos(theta)*phi_dot, theta_dot).

    Returns a value in (-pi, pi]. Callers that need a continuous signal
    should pass consecutive values through :func:`unwrap_heading`.
    """
    if abs(theta_dot) < RATE_EPS and abs(phi_dot) < RATE_EPS:
        raise ZeroVelocity("heading undefined for zero line-angle rates")
    return math.atan2(math.cos(theta) * phi_dot, theta_dot)


def unwrap_heading(previous: float, current: float) -> float:
    """Shift ``current`` by a multiple of 2*pi to lie closest to ``previous``."""
    return current + 2.0 * math.pi * round((previous - current) / (2.0 * math.pi))


def velocity_tangential(xi: LineAngles, gamma: float, p: KinematicParams) -> float:
    # Negative values are allowed; the model is used as-is in prediction.
    theta, phi = xi
    return p.r * (p.alpha_L * math.cos(theta) * math.cos(phi) - p.alpha_G * math.cos(gamma))


def continuous_derivatives(state: KiteState, p: KinematicParams) -> tuple[float, float]:
    """Line-angle rates (theta_dot, phi_dot) of the continuous unicycle model.

    The line length of ``state`` is used; ``p.r`` is ignored.
    """
    theta, phi = state.xi
    c_theta = _check_zenith(theta)
    v = velocity_tangential(state.xi, state.gamma, p.replace(r=state.r))
    theta_dot = v / state.r * math.cos(state.gamma)
    phi_dot = v / (state.r * c_theta) * math.sin(state.gamma)
    return theta_dot, phi_dot


def step_angles(theta, phi, gamma, alpha_L, alpha_G, T):
    """Scalar forward-Euler step; the hot-loop form of :func:`discrete_step`."""
    c_theta = math.cos(theta)
    if c_theta <= ZENITH_GUARD:
        raise NearZenith(f"cos(theta) = {c_theta:.3g} at theta = {theta:.6f}")
    c_phi = math.cos(phi)
    c_gamma = math.cos(gamma)
    s_gamma = math.sin(gamma)
    theta_next = theta + T * alpha_L * c_theta * c_phi * c_gamma - T * alpha_G * c_gamma * c_gamma
    phi_next = phi + T * alpha_L * c_phi * s_gamma - T * alpha_G * math.sin(2.0 * gamma) / (2.0 * c_theta)
    return theta_next, phi_next


def discrete_step(xi: LineAngles, gamma: float, p: KinematicParams) -> LineAngles:
    """One forward-Euler step of the kinematics; independent of the line length."""
    return LineAngles(*step_angles(xi[0], xi[1], gamma, p.alpha_L, p.alpha_G, p.T))


def linearize(xi_ref: LineAngles, gamma_ref: float, p: KinematicParams):
    """Analytic Jacobians of :func:`discrete_step`.

    Returns:
        (A, B) with A = d f_d / d xi (2x2) and B = d f_d / d gamma (2,).
    """
    theta, phi = xi_ref
    c_theta = _check_zenith(theta)
    s_theta = math.sin(theta)
    c_phi, s_phi = math.cos(phi), math.sin(phi)
    c_gamma, s_gamma = math.cos(gamma_ref), math.sin(gamma_ref)
    aL, aG, T = p.alpha_L, p.alpha_G, p.T

    A = np.array(
        [
            [1.0 - T * aL * s_theta * c_phi * c_gamma, -T * aL * c_theta * s_phi * c_gamma],
            [
                -T * aG * math.sin(2.0 * gamma_ref) * s_theta / (2.0 * c_theta * c_theta),
                1.0 - T * aL * s_phi * s_gamma,
            ],
        ]
    )
    B = np.array(
        [
            -T * aL * c_theta * c_phi * s_gamma + T * aG * math.sin(2.0 * gamma_ref),
            T * aL * c_phi * c_gamma - T * aG * math.cos(2.0 * gamma_ref) / c_theta,
        ]
    )
    return A, B

