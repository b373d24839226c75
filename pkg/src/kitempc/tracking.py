"""Inner-loop heading controller with predictor feedback.

The steering plant is modelled as gamma_dot(t) = K delta(t - t_d). The
controller keeps the inputs applied during the last delay window and uses
them to predict the heading one delay ahead; a proportional law acts on
the difference between the commanded and the predicted heading.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import BufferLengthMismatch, SeriesTooShort


@dataclass(frozen=True)
class SteeringParams:
    K: float
    t_d: float
    T: float = 0.01

    def __post_init__(self):
        if not self.K > 0:
            raise ValueError("steering gain must be positive")
        if not self.t_d >= 0:
            raise ValueError("delay must be non-negative")
        if not self.T > 0:
            raise ValueError("sampling period must be positive")

    @property
    def n_d(self) -> int:
        return delay_steps(self.t_d, self.T)


def delay_steps(t_d: float, T: float) -> int:
    return max(0, int(round(t_d / T)))


@dataclass(frozen=True)
class TrackingGain:
    C_0: float
    source: str = "manual"  # "manual" | "tuned"

    def __post_init__(self):
        if not self.C_0 > 0:
            raise ValueError("C_0 must be positive")


class DelayBuffer:
    """FIFO of the last ``n_d`` applied steering inputs, oldest first."""

    def __init__(self, n_d: int, fill: float = 0.0):
        if n_d < 0:
            raise ValueError("buffer length must be non-negative")
        self._buf = deque([float(fill)] * n_d)

    def __len__(self):
        return len(self._buf)

    def __iter__(self):
        return iter(self._buf)

    def values(self) -> np.ndarray:
        return np.fromiter(self._buf, dtype=float, count=len(self._buf))

    def push(self, delta: float) -> float | None:
        """Append the newest input and return the one leaving the window."""
        self._buf.append(float(delta))
        return self._buf.popleft()

    def resize(self, n_d: int) -> None:
        """Truncate the oldest entries or zero-pad the newest end."""
        if n_d < 0:
            raise ValueError("buffer length must be non-negative")
        while len(self._buf) > n_d:
            self._buf.popleft()
        while len(self._buf) < n_d:
            self._buf.append(0.0)

    def copy(self) -> "DelayBuffer":
        out = DelayBuffer(0)
        out._buf = deque(self._buf)
        return out


def predict_heading(gamma_now: float, buf: DelayBuffer, p: SteeringParams) -> float:
    """Heading one delay ahead: gamma_now + K T sum(buffered inputs)."""
    if len(buf) != p.n_d:
        raise BufferLengthMismatch(f"buffer holds {len(buf)} inputs, delay needs {p.n_d}")
    return gamma_now + p.K * p.T * math.fsum(buf)


def control(gamma_cmd: float, gamma_pred: float, gain: TrackingGain, delta_max: float | None = None) -> float:
    delta = gain.C_0 * (gamma_cmd - gamma_pred)
    if delta_max is not None:
        delta = min(max(delta, -delta_max), delta_max)
    return delta


def shifted_error(gamma_cmd, gamma, p: SteeringParams) -> np.ndarray:
    """e[k] = gamma_cmd[k] - gamma[k + n_d] for every k with a shifted sample."""
    gamma_cmd = np.asarray(gamma_cmd, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    n_d = p.n_d
    n = min(gamma_cmd.shape[0], gamma.shape[0]) - n_d
    if n <= 0:
        raise SeriesTooShort(f"need more than {n_d} samples to shift by the delay")
    return gamma_cmd[:n] - gamma[n_d:n_d + n]


class TrackingController:
    """Predictor-feedback heading controller holding its own input history."""

    def __init__(self, steering: SteeringParams, gain: TrackingGain, delta_max: float | None = None):
        self.steering = steering
        self.gain = gain
        self.delta_max = delta_max
        self.buffer = DelayBuffer(steering.n_d)

    def update_params(self, steering: SteeringParams | None = None, gain: TrackingGain | None = None):
        if steering is not None:
            self.steering = steering
            self.buffer.resize(steering.n_d)
        if gain is not None:
            self.gain = gain

    def predict(self, gamma_now: float) -> float:
        return predict_heading(gamma_now, self.buffer, self.steering)

    def step(self, gamma_cmd: float, gamma_now: float) -> tuple[float, float]:
        """Compute and record the steering input; returns (delta, predicted heading)."""
        gamma_pred = self.predict(gamma_now)
        delta = control(gamma_cmd, gamma_pred, self.gain, self.delta_max)
        if len(self.buffer):
            self.buffer.push(delta)
        return delta, gamma_pred
