"""Robot-side control: nominal goal-reaching law, CBF constraints and an exact
QP solver for ``min ||u - u_hat||^2  s.t.  A u <= b`` with ``u`` in the plane.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

from .errors import QPInfeasibleError, SingularConstraintError
from .linalg import pseudoinverse, rank_with_tol, thin_svd

KKT_TOL = 1e-9


@dataclass
class TaskModel:
    """Goal reaching: ``u_hat = k_p (theta - x)``, i.e. ``C = k_p I``, ``d = -k_p x``."""

    k_p: float = 1.0
    theta: np.ndarray = field(default_factory=lambda: np.zeros(2))
    kind: str = "goal_reaching"

    def __post_init__(self):
        if self.kind != "goal_reaching":
            raise ValueError(f"unsupported task kind {self.kind!r}")
        if not self.k_p > 0:
            raise ValueError("k_p must be positive")
        self.theta = np.asarray(self.theta, dtype=float)

    def C(self, x) -> np.ndarray:
        return self.k_p * np.eye(2)

    def d(self, x) -> np.ndarray:
        return -self.k_p * np.asarray(x, dtype=float)


def task_matrices(k_p: float, x) -> tuple[np.ndarray, np.ndarray]:
    """``(C(x), d(x))`` of the goal-reaching family for a hypothesized gain."""
    return k_p * np.eye(2), -k_p * np.asarray(x, dtype=float)


@dataclass(frozen=True)
class SafetyParams:
    """``D_s`` safety distance [m], ``gamma`` CBF rate [1/s], ``epsilon`` base
    activity threshold (scaled by ``1 + max|b|`` in the observer)."""

    D_s: float = 0.5
    gamma: float = 2.0
    epsilon: float = 1e-6

    def __post_init__(self):
        if not (self.D_s > 0 and self.gamma > 0 and self.epsilon > 0):
            raise ValueError("D_s, gamma and epsilon must be positive")


@dataclass
class ConstraintSystem:
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float).reshape(-1, 2)
        self.b = np.asarray(self.b, dtype=float).ravel()
        if self.A.shape[0] != self.b.shape[0]:
            raise ValueError("A and b disagree in row count")

    @property
    def M(self) -> int:
        return self.b.shape[0]

    def residuals(self, u) -> np.ndarray:
        return self.A @ np.asarray(u, dtype=float) - self.b

    def subset(self, idx: Sequence[int]) -> "ConstraintSystem":
        idx = list(idx)
        return ConstraintSystem(self.A[idx], self.b[idx])


@dataclass
class KktSolution:
    u_star: np.ndarray
    mu: np.ndarray
    active_indices: tuple[int, ...]


def nominal_control(task: TaskModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return task.C(x) @ task.theta + task.d(x)


def build_constraints(x, obstacles, sp: SafetyParams) -> ConstraintSystem:
    """Row ``j`` is ``-(x - x_j)^T``, ``b_j = gamma/2 (|x - x_j|^2 - D_s^2)``."""
    x = np.asarray(x, dtype=float)
    obs = np.asarray(obstacles, dtype=float).reshape(-1, 2)
    dx = x[None, :] - obs
    dist2 = np.sum(dx * dx, axis=1)
    if np.any(dist2 == 0.0):
        raise SingularConstraintError("singular constraint: obstacle coincides with robot")
    return ConstraintSystem(-dx, 0.5 * sp.gamma * (dist2 - sp.D_s ** 2))


def _scale(u_hat: np.ndarray, cs: ConstraintSystem) -> float:
    if cs.M == 0:
        return 1.0
    anorm = float(np.max(np.linalg.norm(cs.A, axis=1)))
    return 1.0 + float(np.max(np.abs(cs.b))) + anorm * (1.0 + float(np.linalg.norm(u_hat)))


def _feasible(cs: ConstraintSystem, u: np.ndarray, tol: float) -> bool:
    return bool(np.all(cs.A @ u <= cs.b + tol))


def solve_qp(u_hat, cs: ConstraintSystem, tol: float = KKT_TOL) -> KktSolution:
    """Project ``u_hat`` onto ``{u : A u <= b}`` by active-set enumeration.

    With two decision variables some optimal multiplier vector is supported on
    at most two independent rows, so candidate sets of size 0, 1 and 2 are
    enough; the first one (smallest first) that passes the KKT checks wins.
    """
    u_hat = np.asarray(u_hat, dtype=float)
    M = cs.M
    if M == 0:
        return KktSolution(u_hat.copy(), np.zeros(0), ())
    scale = _scale(u_hat, cs)
    ptol = tol * scale
    A, b = cs.A, cs.b

    best: tuple[np.ndarray, np.ndarray] | None = None
    if _feasible(cs, u_hat, ptol):
        best = (u_hat.copy(), np.zeros(M))

    if best is None:
        r = A @ u_hat - b
        nrm2 = np.sum(A * A, axis=1)
        for j in np.argsort(-r):
            if nrm2[j] == 0.0 or r[j] <= 0.0:
                continue
            u = u_hat - A[j] * (r[j] / nrm2[j])
            if _feasible(cs, u, ptol):
                mu = np.zeros(M)
                mu[j] = 2.0 * r[j] / nrm2[j]
                best = (u, mu)
                break

    if best is None:
        for i, j in combinations(range(M), 2):
            As = A[[i, j]]
            det = As[0, 0] * As[1, 1] - As[0, 1] * As[1, 0]
            if abs(det) <= 1e-12 * np.linalg.norm(As[0]) * np.linalg.norm(As[1]):
                continue
            u = np.linalg.solve(As, b[[i, j]])
            mus = 2.0 * np.linalg.solve(As.T, u_hat - u)
            if np.any(mus < -tol * (1.0 + np.max(np.abs(mus)))):
                continue
            if _feasible(cs, u, ptol):
                mu = np.zeros(M)
                mu[[i, j]] = np.maximum(mus, 0.0)
                best = (u, mu)
                break

    if best is None:
        raise QPInfeasibleError("QP infeasible: no KKT point among candidate active sets")

    u, mu = best
    res = A @ u - b
    active = tuple(int(j) for j in np.where(np.abs(res) <= ptol)[0])
    if len(active) >= 2:
        Aac = A[list(active)]
        if len(active) > rank_with_tol(thin_svd(Aac)):
            # degenerate: multipliers are not unique; prefer the minimum-norm
            # vector when it is dual feasible
            mu_mn = pseudoinverse(Aac).T @ (2.0 * (u_hat - u))
            if np.all(mu_mn >= -tol * (1.0 + np.max(np.abs(mu_mn)))):
                mu = np.zeros(M)
                mu[list(active)] = np.maximum(mu_mn, 0.0)
    return KktSolution(u, mu, active)
