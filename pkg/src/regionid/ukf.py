"""Unscented Kalman filter on the goal parameter, used as the point-wise baseline.

The parameter is a random walk and the measurement is the robot velocity,
predicted by re-solving the robot's QP at every sigma point. When two
independent constraints are active the QP output does not depend on the goal,
every sigma point predicts the same velocity and the filter cannot move.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .controller import SafetyParams, build_constraints, solve_qp, task_matrices
from .observer import Measurement

JITTER = 1e-12


@dataclass(frozen=True)
class SigmaParams:
    alpha: float = 1e-3
    beta: float = 2.0
    kappa: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    def weights(self, n: int) -> tuple[np.ndarray, np.ndarray, float]:
        lam = self.alpha ** 2 * (n + self.kappa) - n
        if n + lam <= 0:
            raise ValueError("sigma parameters give a non-positive spread")
        wm = np.full(2 * n + 1, 0.5 / (n + lam))
        wc = wm.copy()
        wm[0] = lam / (n + lam)
        wc[0] = lam / (n + lam) + (1.0 - self.alpha ** 2 + self.beta)
        return wm, wc, n + lam


@dataclass
class UkfState:
    mean: np.ndarray
    covariance: np.ndarray
    Q: np.ndarray = field(default_factory=lambda: 1e-8 * np.eye(2))
    R: np.ndarray = field(default_factory=lambda: 1e-6 * np.eye(2))

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.covariance = np.asarray(self.covariance, dtype=float)
        self.Q = np.asarray(self.Q, dtype=float)
        self.R = np.asarray(self.R, dtype=float)


def _spd(P: np.ndarray) -> np.ndarray:
    P = 0.5 * (P + P.T)
    jitter = JITTER
    for _ in range(40):
        try:
            np.linalg.cholesky(P)
            return P
        except np.linalg.LinAlgError:
            w_min = float(np.min(np.linalg.eigvalsh(P)))
            P = P + (max(-w_min, 0.0) + jitter) * np.eye(P.shape[0])
            jitter *= 10.0
    raise np.linalg.LinAlgError("covariance could not be repaired")


def sigma_points(mean: np.ndarray, P: np.ndarray, sp: SigmaParams):
    n = mean.size
    wm, wc, spread = sp.weights(n)
    L = np.linalg.cholesky(_spd(spread * P))
    X = np.empty((2 * n + 1, n))
    X[0] = mean
    X[1:n + 1] = mean + L.T
    X[n + 1:] = mean - L.T
    return X, wm, wc


def ukf_update(state: UkfState, z, h: Callable[[np.ndarray], np.ndarray],
               sp: SigmaParams = SigmaParams()) -> UkfState:
    """Random-walk predict followed by an unscented update against ``z``."""
    mean = state.mean
    P = _spd(state.covariance + state.Q)
    X, wm, wc = sigma_points(mean, P, sp)
    Z = np.array([h(x) for x in X])
    # offsets from the central point: the weights are huge for small alpha and
    # sum to one, so averaging raw outputs would cancel badly
    z_hat = Z[0] + wm[1:] @ (Z[1:] - Z[0])
    dZ = Z - z_hat
    dX = X - mean
    S = (wc[:, None] * dZ).T @ dZ + state.R
    Pxz = (wc[:, None] * dX).T @ dZ
    S = 0.5 * (S + S.T)
    try:
        S_inv = np.linalg.inv(S)
    except np.linalg.LinAlgError:
        S_inv = np.linalg.inv(S + state.R + JITTER * np.eye(S.shape[0]))
    K = Pxz @ S_inv
    new_mean = mean + K @ (np.asarray(z, dtype=float) - z_hat)
    new_P = _spd(P - K @ S @ K.T + JITTER * np.eye(P.shape[0]))
    return replace(state, mean=new_mean, covariance=new_P)


def qp_measurement_model(m: Measurement, k_p: float, safety: SafetyParams):
    """``theta -> u*`` for the robot QP at the measured configuration."""
    cs = build_constraints(m.x, m.obstacle_positions, safety)
    C, d = task_matrices(k_p, m.x)

    def h(theta: np.ndarray) -> np.ndarray:
        return solve_qp(C @ theta + d, cs).u_star

    return h


def ukf_step(state: UkfState, m: Measurement, k_p: float, safety: SafetyParams,
             sp: SigmaParams = SigmaParams()) -> UkfState:
    return ukf_update(state, m.u_star, qp_measurement_model(m, k_p, safety), sp)


def initial_state(theta0_box, Q=None, R=None, std_fraction: float = 0.25) -> UkfState:
    """Mean at the box centre, standard deviation a fraction of the box size."""
    xmin, xmax, ymin, ymax = theta0_box
    mean = np.array([(xmin + xmax) / 2, (ymin + ymax) / 2])
    cov = np.diag([(std_fraction * (xmax - xmin)) ** 2, (std_fraction * (ymax - ymin)) ** 2])
    kw = {}
    if Q is not None:
        kw["Q"] = Q
    if R is not None:
        kw["R"] = R
    return UkfState(mean, cov, **kw)
