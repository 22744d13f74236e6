"""Independent reference computations for the test-suite.

None of these call into the package's solver or projection code paths.
"""
from __future__ import annotations

from itertools import combinations

import numpy as np
import shapely
from shapely.geometry import Polygon, box


# ---------------------------------------------------------------- QP oracles

def feasible_polygon(A, b, half_width=1e3):
    """{u : A u <= b} clipped to a large box, built with shapely."""
    poly = box(-half_width, -half_width, half_width, half_width)
    big = 10 * half_width
    for a, bj in zip(np.asarray(A, float), np.asarray(b, float)):
        n = np.linalg.norm(a)
        a, bj = a / n, bj / n
        t = np.array([-a[1], a[0]])
        p0 = a * bj
        # large rectangle lying on the feasible side of the line a.u = bj
        pts = [p0 + big * t, p0 - big * t, p0 - big * t - big * a, p0 + big * t - big * a]
        poly = poly.intersection(Polygon(pts))
    return poly


def project_geometric(u_hat, A, b):
    """Euclidean projection(s) of ``u_hat`` (shape (..., 2)) onto {A u <= b}."""
    u_hat = np.atleast_2d(np.asarray(u_hat, float))
    poly = feasible_polygon(A, b)
    if poly.is_empty:
        raise ValueError("empty feasible set")
    coords = np.asarray(poly.exterior.coords)
    P, Q = coords[:-1], coords[1:]
    E = Q - P
    EE = np.sum(E * E, axis=1)
    D = u_hat[:, None, :] - P[None]
    t = np.clip(np.sum(D * E[None], axis=2) / EE[None], 0.0, 1.0)
    proj = P[None] + t[..., None] * E[None]
    dist = np.linalg.norm(u_hat[:, None, :] - proj, axis=2)
    best = proj[np.arange(len(u_hat)), np.argmin(dist, axis=1)]
    inside = shapely.contains_xy(poly, u_hat[:, 0], u_hat[:, 1]) | (np.all(u_hat @ np.asarray(A).T <= b, axis=1))
    return np.where(inside[:, None], u_hat, best)


def project_dual_gradient(u_hat, A, b, iters=20000):
    """Projection by accelerated projected gradient on the dual.

    Dual of min |u - u_hat|^2, A u <= b:  min_{mu >= 0} 1/4 mu'AA'mu - mu'(A u_hat - b),
    with u = u_hat - A' mu / 2. Batched over a leading axis; uses gradient
    restarts for linear convergence on these small problems.
    """
    u_hat = np.atleast_2d(np.asarray(u_hat, float))
    A = np.asarray(A, float)
    if A.ndim == 2:
        A = np.broadcast_to(A, (len(u_hat),) + A.shape)
        b = np.broadcast_to(np.asarray(b, float), (len(u_hat), A.shape[1]))
    Qm = np.einsum("nij,nkj->nik", A, A)
    L = 0.5 * np.linalg.eigvalsh(Qm)[:, -1] + 1e-300
    r = np.einsum("nij,nj->ni", A, u_hat) - b
    mu = np.zeros_like(r)
    y = mu.copy()
    tk = np.ones(len(u_hat))
    for _ in range(iters):
        g = 0.5 * np.einsum("nij,nj->ni", Qm, y) - r
        mu_new = np.maximum(0.0, y - g / L[:, None])
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * tk * tk))
        restart = np.sum(g * (mu_new - mu), axis=1) > 0
        beta = np.where(restart, 0.0, (tk - 1) / t_new)
        y = mu_new + beta[:, None] * (mu_new - mu)
        tk = np.where(restart, 1.0, t_new)
        mu = mu_new
    return u_hat - 0.5 * np.einsum("nji,nj->ni", A, mu), mu


# ------------------------------------------------------ projection oracles

def projection_cone_rays(B, tol=1e-12):
    """Generators of {y >= 0 : B^T y = 0} by support enumeration.

    ``B`` is K x q. A point of the cone with minimal support S has a
    one-dimensional null space of B_S^T, so enumerating supports of size up
    to q + 1 finds every extreme ray.
    """
    B = np.asarray(B, float)
    K, q = B.shape
    rays = []
    for size in range(1, min(K, q + 1) + 1):
        for S in combinations(range(K), size):
            BS = B[list(S)].T  # q x |S|
            if q == 0:
                ns = np.eye(size)[:, :1] if size == 1 else None
            else:
                u, s, vt = np.linalg.svd(BS)
                rank = int(np.sum(s > tol * max(1.0, s.max() if s.size else 0.0)))
                if size - rank != 1:
                    continue
                ns = vt[-1][:, None]
            if ns is None:
                continue
            v = ns[:, 0]
            if np.all(v > tol):
                pass
            elif np.all(v < -tol):
                v = -v
            else:
                continue
            y = np.zeros(K)
            y[list(S)] = v / np.linalg.norm(v)
            rays.append(y)
    return np.array(rays).reshape(-1, K)


def eta_feasible(theta_pts, A_theta, B_eta, c):
    """Does some eta satisfy A_theta theta + B_eta eta <= c?  Vectorized over points.

    Returns (feasible, margin) where margin is the distance-like slack to the
    nearest projected facet (small values flag boundary points).
    """
    theta_pts = np.asarray(theta_pts, float)
    A_theta = np.asarray(A_theta, float)
    B_eta = np.asarray(B_eta, float).reshape(len(c), -1)
    c = np.asarray(c, float)
    if B_eta.shape[1] == 1:
        # interval intersection for a single free variable
        beta = B_eta[:, 0]
        rhs = c[None, :] - theta_pts @ A_theta.T
        lo = np.full(len(theta_pts), -np.inf)
        hi = np.full(len(theta_pts), np.inf)
        ok = np.ones(len(theta_pts), bool)
        margin = np.full(len(theta_pts), np.inf)
        for k in range(len(c)):
            if beta[k] > 0:
                hi = np.minimum(hi, rhs[:, k] / beta[k])
            elif beta[k] < 0:
                lo = np.maximum(lo, rhs[:, k] / beta[k])
            else:
                ok &= rhs[:, k] >= 0
                n = np.linalg.norm(A_theta[k])
                if n > 0:
                    margin = np.minimum(margin, np.abs(rhs[:, k]) / n)
        gap = hi - lo
        feasible = ok & (gap >= 0)
        # normalize the interval gap by the steepest facet normal it can produce
        scale = 1.0 + np.max(np.abs(A_theta)) * (1.0 / np.min(np.abs(beta[beta != 0])) if np.any(beta != 0) else 0)
        margin = np.minimum(margin, np.abs(np.where(np.isfinite(gap), gap, np.inf)) / scale)
        return feasible, margin
    rays = projection_cone_rays(B_eta)
    if len(rays) == 0:
        return np.ones(len(theta_pts), bool), np.full(len(theta_pts), np.inf)
    N = rays @ A_theta
    o = rays @ c
    slack = o[None, :] - theta_pts @ N.T
    nrm = np.linalg.norm(N, axis=1)
    margin_rows = np.where(nrm[None, :] > 1e-12, np.abs(slack) / np.maximum(nrm[None, :], 1e-300), np.inf)
    return np.all(slack >= 0, axis=1), np.min(margin_rows, axis=1)


def eta_feasible_lp(theta, A_theta, B_eta, c):
    from scipy.optimize import linprog

    rhs = np.asarray(c, float) - np.asarray(A_theta, float) @ np.asarray(theta, float)
    q = B_eta.shape[1]
    res = linprog(np.zeros(q), A_ub=B_eta, b_ub=rhs, bounds=[(None, None)] * q, method="highs")
    return res.status == 0


def theta_grid(box_, n=50):
    xmin, xmax, ymin, ymax = box_
    xs = np.linspace(xmin, xmax, n)
    ys = np.linspace(ymin, ymax, n)
    X, Y = np.meshgrid(xs, ys)
    return np.column_stack([X.ravel(), Y.ravel()])


# --------------------------------------------- feasible-set membership oracle

def omega_membership_oracle(theta_pts, A, b, active, inactive, C, d, use_inactive=True, tol=1e-9):
    """Membership of hypothesized goals in the instantaneous feasible set.

    For each point the QP is re-solved geometrically with
    ``u_hat = C theta + d``. The point is a member iff the solution keeps
    every observed-active row tight, keeps the observed-inactive rows strictly
    slack, and a non-negative multiplier vector on the active rows reproduces
    it (checked by NNLS). Also returns a boundary-closeness margin.
    """
    from scipy.optimize import nnls

    theta_pts = np.asarray(theta_pts, float)
    A = np.asarray(A, float)
    b = np.asarray(b, float)
    u_hat = theta_pts @ np.asarray(C, float).T + d
    member = np.ones(len(theta_pts), bool)
    margin = np.full(len(theta_pts), np.inf)
    if len(b) == 0:
        return member, margin
    u = project_geometric(u_hat, A, b)
    scale = 1.0 + np.max(np.abs(b)) + np.max(np.linalg.norm(A, axis=1)) * (1 + np.linalg.norm(u_hat, axis=1))
    res = u @ A.T - b
    act = list(active)
    ina = list(inactive)
    if act:
        tight = np.all(np.abs(res[:, act]) <= (tol * scale)[:, None], axis=1)
        member &= tight
        # how far the unconstrained optimum is from switching activity
        margin = np.minimum(margin, np.min(np.abs(u_hat @ A[act].T - b[act]), axis=1))
        Aac = A[act]
        for k in np.where(member)[0]:
            mu, rn = nnls(Aac.T, 2 * (u_hat[k] - u[k]))
            if rn > 1e-7 * (1 + np.linalg.norm(u_hat[k] - u[k])):
                member[k] = False
            margin[k] = min(margin[k], np.min(mu) if len(mu) == 2 and np.linalg.matrix_rank(Aac) == len(act) else np.inf)
    if use_inactive and ina:
        member &= np.all(res[:, ina] < -(tol * scale)[:, None], axis=1)
        margin = np.minimum(margin, np.min(np.abs(res[:, ina]), axis=1))
    return member, margin


# ------------------------------------------------------------- generators

def random_safe_instance(rng, max_obstacles=8, D_s=0.5, gamma=None):
    """Robot, obstacles strictly outside the safety disc, and a nominal input."""
    from regionid.controller import SafetyParams, build_constraints

    gamma = float(rng.uniform(0.5, 4.0)) if gamma is None else gamma
    sp = SafetyParams(D_s=D_s, gamma=gamma)
    x = rng.uniform(-3, 3, size=2)
    M = int(rng.integers(1, max_obstacles + 1))
    r = D_s + rng.exponential(0.4, size=M) + 1e-3
    ang = rng.uniform(0, 2 * np.pi, size=M)
    if M >= 2 and rng.random() < 0.2:
        # some obstacles on a common ray give parallel rows
        ang[1] = ang[0]
    obs = x + np.column_stack([r * np.cos(ang), r * np.sin(ang)])
    cs = build_constraints(x, obs, sp)
    u_hat = rng.normal(size=2) * rng.uniform(0.5, 4.0)
    return x, obs, sp, cs, u_hat


def _unit(rng):
    v = rng.normal(size=2)
    return v / np.linalg.norm(v)


def case_instance(case, rng, n_inactive=None):
    """A constraint system whose QP optimum at a random goal falls in ``case``.

    Returns dict with cs, C, d, theta (true goal), u_star, active, inactive.
    Rows are generic (not tied to obstacle geometry) so that every case is
    reachable, including the rank-one multi-row case.
    """
    from regionid.controller import ConstraintSystem, solve_qp

    k_p = float(rng.uniform(0.5, 2.0))
    x = rng.uniform(-2, 2, size=2)
    C, d = k_p * np.eye(2), -k_p * x
    n_inactive = int(rng.integers(0, 4)) if n_inactive is None else n_inactive
    u0 = rng.normal(size=2)
    if case == "A":
        act_rows, act_b = np.zeros((0, 2)), np.zeros(0)
        u_hat = u0
    elif case == "B":
        a = _unit(rng) * rng.uniform(0.3, 3)
        act_rows, act_b = a[None], np.array([a @ u0])
        u_hat = u0 + 0.5 * a * rng.uniform(0.2, 2)
    elif case == "C":
        e = _unit(rng)
        K = int(rng.integers(2, 5))
        lam = rng.uniform(0.3, 3, size=K)
        act_rows = lam[:, None] * e[None]
        act_b = act_rows @ u0
        u_hat = u0 + 0.5 * e * rng.uniform(0.2, 2) * lam.sum()
    elif case == "D":
        while True:
            act_rows = rng.normal(size=(2, 2))
            if abs(np.linalg.det(act_rows)) > 0.2:
                break
        act_b = act_rows @ u0
        u_hat = u0 + 0.5 * act_rows.T @ rng.uniform(0.2, 2, size=2)
    elif case == "E":
        K = int(rng.integers(3, 6))
        # directions within a half-plane so the multiplier cone is pointed
        base = rng.uniform(0, 2 * np.pi)
        ang = base + np.sort(rng.uniform(0, 0.9 * np.pi, size=K))
        act_rows = np.column_stack([np.cos(ang), np.sin(ang)]) * rng.uniform(0.3, 3, size=(K, 1))
        act_b = act_rows @ u0
        u_hat = u0 + 0.5 * act_rows.T @ rng.uniform(0.2, 2, size=K)
    else:
        raise ValueError(case)
    ina_rows = []
    ina_b = []
    for _ in range(n_inactive):
        a = rng.normal(size=2)
        # slack at the optimum but close enough to bite for other goals
        ina_rows.append(a)
        ina_b.append(a @ u0 + rng.uniform(0.5, 3))
    A = np.vstack([act_rows, np.array(ina_rows).reshape(-1, 2)])
    b = np.concatenate([act_b, ina_b])
    order = rng.permutation(len(b))
    A, b = A[order], b[order]
    cs = ConstraintSystem(A, b)
    theta = np.linalg.solve(C, u_hat - d)
    sol = solve_qp(u_hat, cs)
    return dict(cs=cs, C=C, d=d, theta=theta, u_star=sol.u_star, solution=sol, x=x, k_p=k_p)
