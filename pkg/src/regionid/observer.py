"""Feasible-region observer.

From a measured position/velocity pair the observer recovers which collision
constraints the robot's QP had active, picks the matching geometric case
(A-E, by active count and rank), turns stationarity plus dual feasibility into
halfspaces on the hypothesized goal, and intersects them into a running
polygon that starts as the prior box.

Case summary (K active rows, r = rank of the active block):

====  =====  ====  =========================================================
case  K      r     rows emitted
====  =====  ====  =========================================================
A     0      -     every constraint stays strictly inactive under u = C t + d
B     1      1     inactive rows under the projected model, one multiplier row
C     >=2    1     as B, multiplier rows carry K-1 free variables (eliminated)
D     2      2     two multiplier rows; u* does not depend on the goal
E     >2     2     K multiplier rows with K-2 free variables (eliminated)
====  =====  ====  =========================================================
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .controller import ConstraintSystem, SafetyParams, build_constraints, task_matrices
from .errors import ContradictionError, SingularConstraintError
from .linalg import DEFAULT_RANK_TOL, pseudoinverse, rank_with_tol, thin_svd
from .polytope import (
    CONST_TOL,
    DEDUP_TOL,
    INFEASIBLE_TOL,
    ConvexPolygon,
    Halfspace,
    HalfspaceSet,
    area,
    eliminate_eta,
    intersect_all,
)

log = logging.getLogger(__name__)

CASE_IDS = ("A", "B", "C", "D", "E")


@dataclass
class Measurement:
    t: float
    x: np.ndarray
    u_star: np.ndarray
    obstacle_positions: np.ndarray
    warning: str | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.u_star = np.asarray(self.u_star, dtype=float)
        self.obstacle_positions = np.asarray(self.obstacle_positions, dtype=float).reshape(-1, 2)

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "x": self.x.tolist(),
            "u_star": self.u_star.tolist(),
            "obstacles": self.obstacle_positions.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Measurement":
        return cls(float(d["t"]), d["x"], d["u_star"], d["obstacles"])


@dataclass
class CaseClassification:
    case_id: str
    active: tuple[int, ...] = ()
    inactive: tuple[int, ...] = ()
    K: int = 0
    rank: int | None = None
    singular_values: tuple[float, ...] = ()


@dataclass
class AffineControlModel:
    """``u*(theta) = G theta + f`` when ``defined``."""

    G: np.ndarray
    f: np.ndarray
    defined: bool = True

    def predict(self, theta) -> np.ndarray:
        return self.G @ np.asarray(theta, dtype=float) + self.f


@dataclass
class ObserverConfig:
    k_p: float = 1.0
    safety: SafetyParams = field(default_factory=SafetyParams)
    theta0_box: tuple[float, float, float, float] = (-10.0, 10.0, -10.0, 10.0)
    rank_tol: float = DEFAULT_RANK_TOL
    # ratios s2/s1 within this factor of rank_tol count as ambiguous C/D(E)
    rank_band: float = 100.0
    cadence: int = 1
    # "measured": use A_ac u* as the active right-hand side (equal to b_ac for
    # exact data, and keeps the true goal inside when a barely-inactive row is
    # flagged active); "model": use b_ac from the constraint formula
    rhs_mode: str = "measured"
    epsilon_scale: float = 1.0

    def __post_init__(self):
        if self.cadence < 1:
            raise ValueError("cadence must be >= 1")
        if self.rhs_mode not in ("measured", "model"):
            raise ValueError("rhs_mode must be 'measured' or 'model'")

    def theta0(self) -> ConvexPolygon:
        return ConvexPolygon.box(*self.theta0_box)


@dataclass
class StepRecord:
    t: float
    case_id: str | None
    active: tuple[int, ...]
    omega: HalfspaceSet | None
    polygon: ConvexPolygon
    area: float
    note: str | None = None

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "case_id": self.case_id,
            "active": list(self.active),
            "omega_rows": self.omega.to_dict()["rows"] if self.omega is not None else [],
            "polygon": self.polygon.to_dict(),
            "area": self.area,
            "note": self.note,
        }


@dataclass
class RegionEstimate:
    theta_polygon: ConvexPolygon
    omega_log: list[StepRecord] = field(default_factory=list)
    area_history: list[tuple[float, float]] = field(default_factory=list)
    steps_seen: int = 0

    @property
    def area(self) -> float:
        return area(self.theta_polygon)


def init_estimate(cfg: ObserverConfig) -> RegionEstimate:
    return RegionEstimate(cfg.theta0())


# --------------------------------------------------------------------------
# active set and classification


def activity_threshold(cs: ConstraintSystem, epsilon: float) -> float:
    return epsilon * (1.0 + (float(np.max(np.abs(cs.b))) if cs.M else 0.0))


def detect_active_set(cs: ConstraintSystem, u_star, epsilon: float) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Indices with ``|a_j^T u* - b_j| < epsilon`` are active, the rest inactive."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    res = np.abs(cs.residuals(u_star))
    active = tuple(int(j) for j in np.where(res < epsilon)[0])
    inactive = tuple(int(j) for j in np.where(res >= epsilon)[0])
    return active, inactive


def classify(A_ac, rank_tol: float = DEFAULT_RANK_TOL, active: Sequence[int] | None = None,
             inactive: Sequence[int] = ()) -> CaseClassification:
    A_ac = np.asarray(A_ac, dtype=float).reshape(-1, 2)
    K = A_ac.shape[0]
    if active is None:
        active = tuple(range(K))
    active, inactive = tuple(active), tuple(inactive)
    if K == 0:
        return CaseClassification("A", active, inactive, 0, None)
    svd = thin_svd(A_ac)
    r = rank_with_tol(svd, rank_tol)
    sv = tuple(float(s) for s in svd.singular_values)
    if r == 0:
        raise ValueError("active block is the zero matrix")
    if K == 1:
        cid = "B"
    elif r == 1:
        cid = "C"
    elif K == 2:
        cid = "D"
    else:
        cid = "E"
    return CaseClassification(cid, active, inactive, K, r, sv)


# --------------------------------------------------------------------------
# closed-form control models


def decompose_case_a(C, d) -> AffineControlModel:
    return AffineControlModel(np.asarray(C, dtype=float), np.asarray(d, dtype=float))


def _rank1_model(A_ac, b_ac, C, d) -> AffineControlModel:
    svd = thin_svd(A_ac)
    s1 = svd.singular_values[0]
    if s1 == 0.0:
        raise SingularConstraintError("singular constraint: zero active row")
    V1, V2 = svd.V[:, 0], svd.V[:, 1]
    U1 = svd.U[:, 0]
    P2 = np.outer(V2, V2)
    C = np.asarray(C, dtype=float)
    d = np.asarray(d, dtype=float)
    G = P2 @ C
    f = V1 * (U1 @ np.asarray(b_ac, dtype=float)) / s1 + P2 @ d
    return AffineControlModel(G, f)


def decompose_case_b(a_i, b_i, C, d) -> AffineControlModel:
    """One active row: the component along the row is pinned by ``b_i`` and
    the tangential component follows the nominal control."""
    a_i = np.asarray(a_i, dtype=float).reshape(1, 2)
    return _rank1_model(a_i, [float(b_i)], C, d)


def decompose_case_c(A_ac, b_ac, C, d, tol: float = 1e-9) -> AffineControlModel:
    A_ac = np.asarray(A_ac, dtype=float).reshape(-1, 2)
    b_ac = np.asarray(b_ac, dtype=float)
    svd = thin_svd(A_ac)
    U2 = svd.U[:, 1:]
    incons = float(np.linalg.norm(U2.T @ b_ac)) if U2.size else 0.0
    if incons > tol * (1.0 + float(np.linalg.norm(b_ac))):
        # only the range(U1) part of b_ac enters the model below
        log.warning("case C: active right-hand side inconsistent by %.3g; projecting", incons)
    return _rank1_model(A_ac, b_ac, C, d)


# --------------------------------------------------------------------------
# instantaneous feasible sets


def tidy_rows(hss: HalfspaceSet) -> HalfspaceSet:
    """Normalize rows, fold near-zero normals into constant rows, drop
    trivially true constants and duplicates."""
    out: list[Halfspace] = []
    infeasible = False
    for h in hss.rows:
        n = float(np.linalg.norm(h.normal))
        scale = max(1.0, abs(h.offset), n)
        if n <= CONST_TOL * scale:
            if h.offset < -INFEASIBLE_TOL * scale:
                infeasible = True
            continue
        h = Halfspace(h.normal / n, h.offset / n, h.strict)
        if any(abs(h.offset - g.offset) <= DEDUP_TOL and np.max(np.abs(h.normal - g.normal)) <= DEDUP_TOL
               for g in out):
            continue
        out.append(h)
    if infeasible:
        return HalfspaceSet(hss.dim, [Halfspace(np.zeros(hss.dim), -1.0)])
    return HalfspaceSet(hss.dim, out)


def _inactive_rows(cs: ConstraintSystem, inactive: Iterable[int], model: AffineControlModel) -> HalfspaceSet:
    p = model.G.shape[1]
    rows = []
    for j in inactive:
        a = cs.A[j]
        rows.append(Halfspace(a @ model.G, cs.b[j] - a @ model.f, strict=True))
    return HalfspaceSet(p, rows)


def _split(cs: ConstraintSystem, active: Sequence[int], inactive: Sequence[int] | None):
    active = list(active)
    if inactive is None:
        inactive = [j for j in range(cs.M) if j not in set(active)]
    return active, list(inactive)


def omega_case_a(cs: ConstraintSystem, C, d, inactive: Sequence[int] | None = None) -> HalfspaceSet:
    """``(a_j^T C) theta < b_j - a_j^T d`` for every (inactive) row."""
    _, inactive = _split(cs, [], inactive)
    return _inactive_rows(cs, inactive, decompose_case_a(C, d))


def omega_case_b(cs: ConstraintSystem, active: int, C, d, inactive: Sequence[int] | None = None,
                 b_active: float | None = None, model: AffineControlModel | None = None) -> HalfspaceSet:
    [i], inactive = _split(cs, [active], inactive)
    C = np.asarray(C, dtype=float)
    d = np.asarray(d, dtype=float)
    b_i = cs.b[i] if b_active is None else float(b_active)
    if model is None:
        model = decompose_case_b(cs.A[i], b_i, C, d)
    Gt = C - model.G
    ft = d - model.f
    a = cs.A[i]
    mu_row = Halfspace(-(a @ Gt), float(a @ ft), strict=False)
    out = _inactive_rows(cs, inactive, model)
    return HalfspaceSet(out.dim, out.rows + [mu_row])


def omega_case_c(cs: ConstraintSystem, active: Sequence[int], C, d, inactive: Sequence[int] | None = None,
                 b_ac=None) -> HalfspaceSet:
    """Rank-one active block. The multiplier vector is
    ``2 U1 s1^-1 V1^T (Gt theta + ft) + U2 eta`` with free ``eta``; rows are
    built over ``(theta, eta)`` and ``eta`` is projected out."""
    active, inactive = _split(cs, active, inactive)
    A_ac = cs.A[active]
    b_ac = cs.b[active] if b_ac is None else np.asarray(b_ac, dtype=float)
    C = np.asarray(C, dtype=float)
    d = np.asarray(d, dtype=float)
    K, p = len(active), C.shape[1]

    model = decompose_case_c(A_ac, b_ac, C, d)
    Gt = C - model.G
    ft = d - model.f
    svd = thin_svd(A_ac)
    s1 = svd.singular_values[0]
    V1 = svd.V[:, 0]
    U1 = svd.U[:, :1]
    U2 = svd.U[:, 1:]
    coef = 2.0 * U1 / s1  # K x 1
    theta_part = -coef @ (V1 @ Gt)[None, :]  # K x p
    normals = np.hstack([theta_part, -U2])
    offsets = (coef @ np.atleast_1d(V1 @ ft)).ravel()
    mu_rows = eliminate_eta(HalfspaceSet.from_arrays(normals, offsets), K - 1)

    out = _inactive_rows(cs, inactive, model)
    return HalfspaceSet(p, out.rows + mu_rows.rows)


def omega_case_d(cs: ConstraintSystem, active: Sequence[int], C, d, b_ac=None) -> HalfspaceSet:
    """``-A^-T C theta <= A^-T (d - A^-1 b_ac)``; inactive rows carry no
    information because u* is fixed by the two active rows."""
    active = list(active)
    A_ac = cs.A[active]
    b_ac = cs.b[active] if b_ac is None else np.asarray(b_ac, dtype=float)
    C = np.asarray(C, dtype=float)
    d = np.asarray(d, dtype=float)
    A_inv_T = np.linalg.inv(A_ac).T
    u_fixed = np.linalg.solve(A_ac, b_ac)
    return HalfspaceSet.from_arrays(-A_inv_T @ C, A_inv_T @ (d - u_fixed), strict=False)


def omega_case_e(cs: ConstraintSystem, active: Sequence[int], C, d, b_ac=None) -> HalfspaceSet:
    active = list(active)
    A_ac = cs.A[active]
    b_ac = cs.b[active] if b_ac is None else np.asarray(b_ac, dtype=float)
    C = np.asarray(C, dtype=float)
    d = np.asarray(d, dtype=float)
    K, p = len(active), C.shape[1]
    svd = thin_svd(A_ac)
    S_inv = np.diag(1.0 / svd.singular_values[:2])
    W1 = svd.U[:, :2]
    W2 = svd.U[:, 2:]
    T = 2.0 * W1 @ S_inv @ svd.V.T  # K x 2, maps w/2 to the min-norm multipliers
    u_fixed = pseudoinverse(A_ac) @ b_ac
    normals = np.hstack([-T @ C, -W2])
    offsets = T @ (d - u_fixed)
    mu_rows = eliminate_eta(HalfspaceSet.from_arrays(normals, offsets), K - 2)
    return HalfspaceSet(p, mu_rows.rows)


def omega_for_case(cls: CaseClassification, cs: ConstraintSystem, C, d, b_ac=None) -> HalfspaceSet:
    if cls.case_id == "A":
        return omega_case_a(cs, C, d, cls.inactive)
    if cls.case_id == "B":
        b_i = None if b_ac is None else float(np.atleast_1d(b_ac)[0])
        return omega_case_b(cs, cls.active[0], C, d, cls.inactive, b_active=b_i)
    if cls.case_id == "C":
        return omega_case_c(cs, cls.active, C, d, cls.inactive, b_ac=b_ac)
    if cls.case_id == "D":
        return omega_case_d(cs, cls.active, C, d, b_ac=b_ac)
    return omega_case_e(cs, cls.active, C, d, b_ac=b_ac)


def _common_rows(h1: HalfspaceSet, h2: HalfspaceSet, tol: float = 1e-9) -> HalfspaceSet:
    h1, h2 = tidy_rows(h1), tidy_rows(h2)
    rows = [r for r in h1.rows
            if any(abs(r.offset - s.offset) <= tol and np.max(np.abs(r.normal - s.normal)) <= tol
                   for s in h2.rows)]
    return HalfspaceSet(h1.dim, rows)


def instantaneous_region(m: Measurement, cfg: ObserverConfig,
                         ) -> tuple[CaseClassification | None, HalfspaceSet | None, str | None]:
    """Classify one measurement and return its feasible-set rows.

    Returns ``(None, None, note)`` when the measurement contradicts the
    constraint model and must be skipped.
    """
    cs = build_constraints(m.x, m.obstacle_positions, cfg.safety)
    C, d = task_matrices(cfg.k_p, m.x)
    eps = activity_threshold(cs, cfg.safety.epsilon * cfg.epsilon_scale)
    res = cs.residuals(m.u_star)
    if cs.M and np.max(res) >= eps:
        note = f"inconsistent measurement: constraint residual {np.max(res):.3g} > {eps:.3g}"
        log.warning("t=%.4f %s", m.t, note)
        return None, None, note

    active, inactive = detect_active_set(cs, m.u_star, eps)
    A_ac = cs.A[list(active)]
    cls = classify(A_ac, cfg.rank_tol, active, inactive)
    b_ac = A_ac @ m.u_star if cfg.rhs_mode == "measured" else None

    omega = omega_for_case(cls, cs, C, d, b_ac)
    if cls.K >= 2:
        s1, s2 = cls.singular_values[0], cls.singular_values[1]
        ratio = s2 / s1
        if cfg.rank_tol / cfg.rank_band < ratio < cfg.rank_tol * cfg.rank_band:
            # too close to call: keep only rows both readings agree on
            other_id = ("D" if cls.K == 2 else "E") if cls.case_id == "C" else "C"
            other = CaseClassification(other_id, cls.active, cls.inactive, cls.K,
                                       1 if other_id == "C" else 2, cls.singular_values)
            try:
                omega = _common_rows(omega, omega_for_case(other, cs, C, d, b_ac))
            except np.linalg.LinAlgError:
                omega = HalfspaceSet(omega.dim, [])
    return cls, tidy_rows(omega), None


def step(estimate: RegionEstimate, m: Measurement, cfg: ObserverConfig) -> RegionEstimate:
    """Fold one measurement into ``estimate`` (updated in place and returned).

    Raises :class:`ContradictionError` if the region becomes empty; the
    estimate then keeps the last non-empty polygon.
    """
    idx = estimate.steps_seen
    estimate.steps_seen += 1
    poly = estimate.theta_polygon

    if idx % cfg.cadence != 0:
        rec = StepRecord(m.t, None, (), None, poly, area(poly), note="cadence skip")
    else:
        cls, omega, note = instantaneous_region(m, cfg)
        if cls is None:
            m.warning = note
            rec = StepRecord(m.t, None, (), None, poly, area(poly), note=note)
        else:
            new_poly = intersect_all(poly, omega)
            if new_poly.is_empty:
                rec = StepRecord(m.t, cls.case_id, cls.active, omega, poly, area(poly), note="contradiction")
                estimate.omega_log.append(rec)
                estimate.area_history.append((m.t, rec.area))
                raise ContradictionError(f"parameter region became empty at t={m.t:.4f} (case {cls.case_id})")
            estimate.theta_polygon = new_poly
            rec = StepRecord(m.t, cls.case_id, cls.active, omega, new_poly, area(new_poly))
    estimate.omega_log.append(rec)
    estimate.area_history.append((m.t, rec.area))
    return estimate


def run_observer(stream: Iterable[Measurement], cfg: ObserverConfig) -> RegionEstimate:
    est = init_estimate(cfg)
    for m in stream:
        step(est, m, cfg)
    return est


def finite_difference_velocities(stream: Sequence[Measurement]) -> list[Measurement]:
    """Replace measured velocities by forward differences of positions.

    The last sample has no successor and is dropped.
    """
    out = []
    for m0, m1 in zip(stream[:-1], stream[1:]):
        dt = m1.t - m0.t
        if dt <= 0:
            raise ValueError("timestamps must be strictly increasing")
        out.append(Measurement(m0.t, m0.x, (m1.x - m0.x) / dt, m0.obstacle_positions))
    return out
