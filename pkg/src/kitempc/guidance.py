"""Outer-loop guidance MPC on the deviation from a reference path.

The kite position one delay ahead is compared against the nearest point
of the reference. The kinematics are linearised along the reference to a
time-varying system in the deviation state, augmented with the previous
input deviation so that the decision variables are input increments. The
resulting QP is condensed to a dense problem in the increments and the
window slacks and solved every sample; the first increment reconstructs
the commanded heading.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NearZenith
from .kinematics import ZENITH_GUARD, KinematicParams, KiteState, LineAngles, step_angles
from .qp import QpProblem, QpSolution, QpSolver
from .reference_path import ReferencePath, SafetyWindow, nearest_reference_index
from .tracking import DelayBuffer, SteeringParams

SLACK_ACTIVE = 1e-6
HOLD_SAMPLES = 10


def _diag2(a, b):
    return np.diag([float(a), float(b)])


@dataclass(frozen=True, eq=False)
class MpcConfig:
    """Weights, horizon and constraint limits of the guidance problem."""

    H: int = 30
    Q: np.ndarray = field(default_factory=lambda: _diag2(1.0, 2.0))
    Q_H: np.ndarray = field(default_factory=lambda: 5.0 * _diag2(1.0, 2.0))
    R: float = 5e-3
    S: np.ndarray = field(default_factory=lambda: 1e5 * _diag2(1.0, 2.0))
    S_H: np.ndarray = field(default_factory=lambda: 1e5 * 5.0 * _diag2(1.0, 2.0))
    l_m: float = 2.5
    l_r: float = 1.0
    window: SafetyWindow = SafetyWindow()
    T: float = 0.01

    def __post_init__(self):
        for name in ("Q", "Q_H", "S", "S_H"):
            M = np.asarray(getattr(self, name), dtype=float).reshape(2, 2)
            if np.max(np.abs(M - M.T)) > 0 or np.min(np.linalg.eigvalsh(M)) <= 0:
                raise ValueError(f"{name} must be symmetric positive definite")
            object.__setattr__(self, name, M)
        if not self.R > 0:
            raise ValueError("R must be positive")
        if self.H < 1:
            raise ValueError("horizon must have at least one stage")
        if np.min(np.linalg.eigvalsh(self.S)) < 1e3 * np.max(np.linalg.eigvalsh(self.Q)) or np.min(
            np.linalg.eigvalsh(self.S_H)
        ) < 1e3 * np.max(np.linalg.eigvalsh(self.Q_H)):
            raise ValueError("slack weights must dominate the position weights by 1e3")
        if not (self.l_m > 0 and self.l_r > 0 and self.T > 0):
            raise ValueError("l_m, l_r and T must be positive")

    def with_rate_limit(self, l_r: float) -> "MpcConfig":
        return MpcConfig(self.H, self.Q, self.Q_H, self.R, self.S, self.S_H, self.l_m, l_r, self.window, self.T)

    @property
    def n_vars(self):
        return self.H + 2 * (self.H + 1)

    def as_dict(self):
        return {
            "H": self.H,
            "Q": self.Q.tolist(),
            "Q_H": self.Q_H.tolist(),
            "R": self.R,
            "S": self.S.tolist(),
            "S_H": self.S_H.tolist(),
            "l_m": self.l_m,
            "l_r": self.l_r,
            "window": [self.window.theta_min, self.window.theta_max, self.window.phi_min, self.window.phi_max],
            "T": self.T,
        }


@dataclass(frozen=True)
class DeviationState:
    chi: np.ndarray
    u_prev: float

    @property
    def augmented(self):
        return np.array([self.chi[0], self.chi[1], self.u_prev], dtype=float)


@dataclass
class GuidanceOutput:
    gamma_cmd: float
    j: int
    xi_pred: LineAngles
    chi_traj: np.ndarray
    du: np.ndarray
    slack: np.ndarray
    slack_active: np.ndarray
    status: str
    iterations: int
    cost: float
    kkt: tuple
    fallback: bool = False

    def debug_record(self, k=None):
        rec = {
            "j": self.j,
            "chi0": [float(c) for c in self.chi_traj[0]] if self.chi_traj.size else None,
            "du": [float(v) for v in self.du],
            "slack_active": [bool(b) for b in self.slack_active],
            "cost": self.cost,
            "iterations": self.iterations,
            "status": self.status,
        }
        if k is not None:
            rec = {"k": k, **rec}
        return json.dumps(rec, sort_keys=True)


@dataclass(frozen=True, eq=False)
class CondensedQp:
    """QP in z = (du_0..du_{H-1}, eps_0..eps_H) plus the maps needed to read it back."""

    problem: QpProblem
    Phi: np.ndarray  # (H, 3, 3) stage-wise x_{i+1} = Phi_i x0 + Gamma_i du
    Gamma: np.ndarray  # (H, 3, H)
    x0: np.ndarray
    constant: float


def predict_delayed_position(state: KiteState, buf: DelayBuffer, p: SteeringParams, kp: KinematicParams) -> LineAngles:
    """Position one delay ahead under the buffered inputs and the steering model."""
    th, ph = state.xi
    gamma = state.gamma
    KT = p.K * p.T
    aL, aG, T = kp.alpha_L, kp.alpha_G, kp.T
    for delta in buf:
        th, ph = step_angles(th, ph, gamma, aL, aG, T)
        gamma += KT * delta
    return LineAngles(th, ph)


def build_ltv(path: ReferencePath, j: int, H: int, params: KinematicParams):
    """Augmented stage matrices (A_hat_i, B_hat_i) along the reference from index j.

    Vectorised form of :func:`kinematics.linearize` over the horizon.
    """
    idx = (j + np.arange(H)) % path.N
    theta = path.xi_ref[idx, 0]
    phi = path.xi_ref[idx, 1]
    gamma = path.gamma_ref[idx]
    c_theta = np.cos(theta)
    if np.min(c_theta) <= ZENITH_GUARD:
        raise NearZenith(f"reference reaches cos(theta) = {np.min(c_theta):.3g}")
    s_theta = np.sin(theta)
    c_phi, s_phi = np.cos(phi), np.sin(phi)
    c_gamma, s_gamma = np.cos(gamma), np.sin(gamma)
    s2g, c2g = np.sin(2.0 * gamma), np.cos(2.0 * gamma)
    aL, aG, T = params.alpha_L, params.alpha_G, params.T
    A_hat = np.zeros((H, 3, 3))
    B_hat = np.zeros((H, 3))
    A_hat[:, 0, 0] = 1.0 - T * aL * s_theta * c_phi * c_gamma
    A_hat[:, 0, 1] = -T * aL * c_theta * s_phi * c_gamma
    A_hat[:, 1, 0] = -T * aG * s2g * s_theta / (2.0 * c_theta * c_theta)
    A_hat[:, 1, 1] = 1.0 - T * aL * s_phi * s_gamma
    B_hat[:, 0] = -T * aL * c_theta * c_phi * s_gamma + T * aG * s2g
    B_hat[:, 1] = T * aL * c_phi * c_gamma - T * aG * c2g / c_theta
    A_hat[:, :2, 2] = B_hat[:, :2]
    A_hat[:, 2, 2] = 1.0
    B_hat[:, 2] = 1.0
    return A_hat, B_hat


def build_qp(dev0: DeviationState, ltv, path: ReferencePath, j: int, cfg: MpcConfig) -> CondensedQp:
    A_hat, B_hat = ltv
    H = cfg.H
    if A_hat.shape != (H, 3, 3) or B_hat.shape != (H, 3):
        raise DimensionMismatch(f"LTV sequence has shapes {A_hat.shape}, {B_hat.shape}; horizon is {H}")
    x0 = dev0.augmented
    if x0.shape != (3,) or not np.all(np.isfinite(x0)):
        raise DimensionMismatch("deviation state must be a finite 3-vector")
    N = path.N
    idx = (j + np.arange(-1, H + 1)) % N
    xi_ref = path.xi_ref[idx[1:]]  # stages 0..H
    g_ref = path.gamma_ref[idx]  # stages -1..H

    # condensing: x_{i+1} = Phi_i x0 + Gamma_i du
    Phi = np.zeros((H, 3, 3))
    Gamma = np.zeros((H, 3, H))
    Phi_i = np.eye(3)
    Gam_i = np.zeros((3, H))
    for i in range(H):
        Phi_i = A_hat[i] @ Phi_i
        Gam_i = A_hat[i] @ Gam_i
        Gam_i[:, i] += B_hat[i]
        Phi[i] = Phi_i
        Gamma[i] = Gam_i

    Qhat = np.zeros((3, 3))
    Qhat[:2, :2] = cfg.Q
    Qhat[2, 2] = cfg.R
    QhatH = np.zeros((3, 3))
    QhatH[:2, :2] = cfg.Q_H
    QhatH[2, 2] = cfg.R
    W = np.broadcast_to(Qhat, (H, 3, 3)).copy()
    W[-1] = QhatH

    free = np.einsum("iab,b->ia", Phi, x0)  # zero-input response, stages 1..H
    WG = np.einsum("iab,ibh->iah", W, Gamma)
    n_u = H
    n_e = 2 * (H + 1)
    n = n_u + n_e
    P = np.zeros((n, n))
    P[:n_u, :n_u] = 2.0 * np.einsum("iak,iah->kh", Gamma, WG)
    q = np.zeros(n)
    q[:n_u] = 2.0 * np.einsum("iak,ia->k", WG, free)
    for i in range(H + 1):
        Si = cfg.S_H if i == H else cfg.S
        s = n_u + 2 * i
        P[s:s + 2, s:s + 2] = 2.0 * Si
    P = 0.5 * (P + P.T)
    constant = float(x0 @ Qhat @ x0 + np.einsum("ia,iab,ib->", free, W, free))

    # chi_i = C_i z + c_i for stages 0..H (position part of the augmented state)
    chi_lin = np.zeros((H + 1, 2, n_u))
    chi_lin[1:] = Gamma[:, :2, :]
    chi_off = np.vstack([x0[:2], free[:, :2]])

    lower = cfg.window.lower
    upper = cfg.window.upper
    chi_lo = lower - xi_ref
    chi_hi = upper - xi_ref

    G = _constraint_template(H).copy()
    h = np.empty(G.shape[0])
    u_prev = x0[2]
    du_step = g_ref[1:H + 1] - g_ref[0:H]  # gamma_ref_{j+i} - gamma_ref_{j+i-1}
    lrT = cfg.l_r * cfg.T
    # input-rate bounds
    h[:n_u] = lrT - du_step
    h[n_u:2 * n_u] = lrT + du_step
    # input magnitude bounds, u_i = u_prev + sum_{l<=i} du_l
    h[2 * n_u:3 * n_u] = cfg.l_m - g_ref[1:H + 1] - u_prev
    h[3 * n_u:4 * n_u] = cfg.l_m + g_ref[1:H + 1] + u_prev
    # soft window, four rows per stage: chi_lo <= chi + eps, chi - eps <= chi_hi
    w0 = 4 * n_u
    Gw = G[w0:w0 + 4 * (H + 1)].reshape(H + 1, 4, n)
    Gw[:, 0:2, :n_u] = -chi_lin
    Gw[:, 2:4, :n_u] = chi_lin
    h[w0:w0 + 4 * (H + 1)] = np.hstack([chi_off - chi_lo, chi_hi - chi_off]).reshape(-1)
    # slacks are non-negative
    h[w0 + 4 * (H + 1):] = 0.0

    problem = QpProblem(P, q, G, h)
    return CondensedQp(problem, Phi, Gamma, x0, constant)


@functools.lru_cache(maxsize=8)
def _constraint_template(H: int) -> np.ndarray:
    """Constraint rows that do not depend on the reference or the state."""
    n_u, n_e = H, 2 * (H + 1)
    n = n_u + n_e
    G = np.zeros((4 * n_u + 4 * (H + 1) + n_e, n))
    diag = np.arange(n_u)
    G[diag, diag] = 1.0
    G[n_u + diag, diag] = -1.0
    tri = np.tril(np.ones((n_u, n_u)))
    G[2 * n_u:3 * n_u, :n_u] = tri
    G[3 * n_u:4 * n_u, :n_u] = -tri
    w0 = 4 * n_u
    Gw = G[w0:w0 + 4 * (H + 1)].reshape(H + 1, 4, n)
    stage = np.arange(H + 1)
    for a in range(2):
        Gw[stage, a, n_u + 2 * stage + a] = -1.0
        Gw[stage, 2 + a, n_u + 2 * stage + a] = -1.0
    e0 = w0 + 4 * (H + 1)
    G[e0 + np.arange(n_e), n_u + np.arange(n_e)] = -1.0
    G.setflags(write=False)
    return G


def reconstruct_command(du0: float, gamma_cmd_prev: float, gamma_ref_prev: float, gamma_ref_j: float) -> float:
    return du0 + gamma_cmd_prev - gamma_ref_prev + gamma_ref_j


class GuidanceController:
    """Receding-horizon guidance; one instance per control loop."""

    def __init__(self, cfg: MpcConfig, gamma_cmd_init: float = 0.0, solver: QpSolver | None = None):
        self.cfg = cfg
        self.gamma_cmd_prev = float(gamma_cmd_init)
        self.solver = solver or QpSolver()
        self._warm = None
        self._failures = 0
        self.last_solution: QpSolution | None = None

    def set_rate_limit(self, l_r: float):
        self.cfg = self.cfg.with_rate_limit(l_r)

    @property
    def consecutive_failures(self):
        return self._failures

    def step(self, state: KiteState, buf: DelayBuffer, steering: SteeringParams,
             params: KinematicParams, path: ReferencePath) -> GuidanceOutput:
        cfg = self.cfg
        xi_pred = predict_delayed_position(state, buf, steering, params)
        j = nearest_reference_index(path, xi_pred)
        _, g_prev = path.point(j - 1)
        xi_j, g_j = path.point(j)
        chi0 = np.array([xi_pred[0] - xi_j[0], xi_pred[1] - xi_j[1]])
        dev = DeviationState(chi0, self.gamma_cmd_prev - g_prev)
        ltv = build_ltv(path, j, cfg.H, params)
        cqp = build_qp(dev, ltv, path, j, cfg)
        sol = self.solver.solve(cqp.problem, self._warm)
        self.last_solution = sol
        H = cfg.H
        if sol.optimal:
            self._failures = 0
            self._warm = sol.active_set
            du = sol.x[:H]
            eps = sol.x[H:].reshape(H + 1, 2)
            gamma_cmd = reconstruct_command(du[0], self.gamma_cmd_prev, g_prev, g_j)
            free = np.einsum("iab,b->ia", cqp.Phi, cqp.x0) + np.einsum("iah,h->ia", cqp.Gamma, du)
            chi_traj = np.vstack([chi0, free[:, :2]])
            cost = float(sol.objective + cqp.constant)
            fallback = False
        else:
            self._failures += 1
            self._warm = None
            du = np.zeros(H)
            eps = np.zeros((H + 1, 2))
            chi_traj = chi0[None, :]
            cost = math.nan
            fallback = True
            if self._failures <= HOLD_SAMPLES:
                gamma_cmd = self.gamma_cmd_prev
            else:
                step_max = cfg.l_r * cfg.T
                gamma_cmd = self.gamma_cmd_prev + min(max(g_j - self.gamma_cmd_prev, -step_max), step_max)
        self.gamma_cmd_prev = gamma_cmd
        return GuidanceOutput(
            gamma_cmd=gamma_cmd,
            j=j,
            xi_pred=xi_pred,
            chi_traj=chi_traj,
            du=du,
            slack=eps,
            slack_active=np.any(eps > SLACK_ACTIVE, axis=1),
            status=sol.status,
            iterations=sol.iterations,
            cost=cost,
            kkt=sol.kkt,
            fallback=fallback,
        )
