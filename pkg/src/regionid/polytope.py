"""Halfspace sets and convex polygons in the parameter plane.

Geometry always works with closed halfspaces. The ``strict`` flag on a row is
kept for reporting only; the boundary has measure zero and taking the closure
keeps the true parameter inside under rounding.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ProjectionBlowUpError, UnboundedRegionError

FM_ROW_CAP = 4096
DEDUP_TOL = 1e-10
# rows whose (normalized) normal falls below this are treated as constants
CONST_TOL = 1e-11
# a constant row 0 <= c is declared infeasible only when c is clearly negative
INFEASIBLE_TOL = 1e-9


@dataclass
class Halfspace:
    """``normal . z <= offset`` (or ``<`` when ``strict``)."""

    normal: np.ndarray
    offset: float
    strict: bool = False

    def __post_init__(self):
        self.normal = np.asarray(self.normal, dtype=float).ravel()
        self.offset = float(self.offset)
        if not np.all(np.isfinite(self.normal)) or not np.isfinite(self.offset):
            raise ValueError("halfspace has non-finite data")

    @property
    def dim(self) -> int:
        return self.normal.size

    def is_constant(self) -> bool:
        return bool(np.all(self.normal == 0.0))

    def normalized(self) -> "Halfspace":
        n = np.linalg.norm(self.normal)
        if n == 0.0:
            return self
        return Halfspace(self.normal / n, self.offset / n, self.strict)

    def slack(self, z) -> np.ndarray:
        """``offset - normal . z``; non-negative inside. Accepts (..., dim)."""
        return self.offset - np.asarray(z, dtype=float) @ self.normal

    def to_dict(self) -> dict:
        return {"normal": self.normal.tolist(), "offset": self.offset, "strict": self.strict}

    @classmethod
    def from_dict(cls, d: dict) -> "Halfspace":
        return cls(d["normal"], d["offset"], bool(d.get("strict", False)))


@dataclass
class HalfspaceSet:
    """Ordered rows over a fixed variable list (parameters first, then any
    auxiliary variables still to be eliminated)."""

    dim: int
    rows: list[Halfspace] = field(default_factory=list)

    def __post_init__(self):
        for h in self.rows:
            if h.dim != self.dim:
                raise ValueError(f"row of dimension {h.dim} in a set of dimension {self.dim}")

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    @classmethod
    def from_arrays(cls, normals, offsets, strict: bool | Sequence[bool] = False) -> "HalfspaceSet":
        normals = np.atleast_2d(np.asarray(normals, dtype=float))
        offsets = np.atleast_1d(np.asarray(offsets, dtype=float))
        if normals.shape[0] != offsets.shape[0]:
            raise ValueError("normals and offsets disagree in length")
        if isinstance(strict, bool):
            strict = [strict] * len(offsets)
        rows = [Halfspace(n, c, s) for n, c, s in zip(normals, offsets, strict)]
        return cls(normals.shape[1], rows)

    def matrix(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.rows:
            return np.zeros((0, self.dim)), np.zeros(0)
        return np.array([h.normal for h in self.rows]), np.array([h.offset for h in self.rows])

    def extend(self, other: "HalfspaceSet") -> "HalfspaceSet":
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        return HalfspaceSet(self.dim, self.rows + other.rows)

    def is_infeasible(self) -> bool:
        return any(h.is_constant() and h.offset < -INFEASIBLE_TOL for h in self.rows)

    def contains(self, z, tol: float = 0.0) -> np.ndarray:
        """Membership of point(s) ``z`` with closed rows and slack ``tol``."""
        z = np.asarray(z, dtype=float)
        ok = np.ones(z.shape[:-1], dtype=bool)
        for h in self.rows:
            n = np.linalg.norm(h.normal)
            ok &= h.slack(z) >= -tol * max(n, 1.0)
        return ok

    def to_dict(self) -> dict:
        return {"dim": self.dim, "rows": [h.to_dict() for h in self.rows]}

    @classmethod
    def from_dict(cls, d: dict) -> "HalfspaceSet":
        return cls(int(d["dim"]), [Halfspace.from_dict(r) for r in d["rows"]])


@dataclass
class ConvexPolygon:
    """Counterclockwise vertex list. Empty means infeasible."""

    vertices: np.ndarray
    unbounded: bool = False

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        self.vertices = v.reshape(-1, 2)

    @classmethod
    def empty(cls) -> "ConvexPolygon":
        return cls(np.zeros((0, 2)))

    @classmethod
    def box(cls, xmin: float, xmax: float, ymin: float, ymax: float) -> "ConvexPolygon":
        if not (xmax > xmin and ymax > ymin):
            raise ValueError("degenerate box")
        return cls(np.array([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]]))

    @property
    def is_empty(self) -> bool:
        return len(self.vertices) == 0 and not self.unbounded

    def bbox(self) -> tuple[float, float, float, float]:
        v = self.vertices
        return float(v[:, 0].min()), float(v[:, 0].max()), float(v[:, 1].min()), float(v[:, 1].max())

    def to_dict(self) -> dict:
        return {"vertices": self.vertices.tolist(), "unbounded": self.unbounded}

    @classmethod
    def from_dict(cls, d: dict) -> "ConvexPolygon":
        return cls(np.asarray(d["vertices"], dtype=float).reshape(-1, 2), bool(d.get("unbounded", False)))


def _scale(poly: ConvexPolygon) -> float:
    if len(poly.vertices) == 0:
        return 1.0
    return max(1.0, float(np.max(np.abs(poly.vertices))))


def _normalize_vertices(v: np.ndarray, scale: float) -> np.ndarray:
    """Drop repeated and collinear vertices of a convex CCW loop."""
    tol = 1e-12 * scale
    out = []
    for p in v:
        if not out or np.max(np.abs(p - out[-1])) > tol:
            out.append(p)
    if len(out) > 1 and np.max(np.abs(out[0] - out[-1])) <= tol:
        out.pop()
    changed = True
    while changed and len(out) >= 3:
        changed = False
        n = len(out)
        for i in range(n):
            a, b, c = out[i - 1], out[i], out[(i + 1) % n]
            e1, e2 = b - a, c - b
            cr = e1[0] * e2[1] - e1[1] * e2[0]
            if abs(cr) <= tol * max(np.linalg.norm(e1), np.linalg.norm(e2), tol):
                out.pop(i)
                changed = True
                break
    if len(out) < 3:
        return np.zeros((0, 2))
    return np.array(out)


def clip(poly: ConvexPolygon, hs: Halfspace) -> ConvexPolygon:
    """``poly`` intersected with the closed halfspace ``normal . v <= offset``.

    A halfspace that already contains every vertex returns ``poly`` itself,
    so redundant rows never perturb the stored vertices.
    """
    if poly.unbounded:
        raise UnboundedRegionError("unbounded region")
    if hs.dim != 2:
        raise ValueError("clip needs a halfspace in two variables")
    v = poly.vertices
    if len(v) == 0:
        return poly
    if hs.is_constant():
        return poly if hs.offset >= -INFEASIBLE_TOL else ConvexPolygon.empty()

    s = v @ hs.normal - hs.offset
    if np.all(s <= 0.0):
        return poly
    if np.all(s > 0.0):
        return ConvexPolygon.empty()

    out = []
    n = len(v)
    for i in range(n):
        p, q = v[i], v[(i + 1) % n]
        sp, sq = s[i], s[(i + 1) % n]
        if sp <= 0.0:
            out.append(p)
        if (sp <= 0.0) != (sq <= 0.0):
            t = sp / (sp - sq)
            out.append(p + t * (q - p))
    verts = _normalize_vertices(np.array(out), _scale(poly))
    return ConvexPolygon(verts)


def intersect_all(poly: ConvexPolygon, hss: HalfspaceSet | Iterable[Halfspace]) -> ConvexPolygon:
    for h in hss:
        if poly.is_empty:
            break
        poly = clip(poly, h)
    return poly


def area(poly: ConvexPolygon) -> float:
    """Shoelace area; zero for empty or degenerate polygons."""
    if poly.unbounded:
        raise UnboundedRegionError("unbounded region")
    v = poly.vertices
    if len(v) < 3:
        return 0.0
    # shift to the centroid-ish origin to limit cancellation
    w = v - v.mean(axis=0)
    x, y = w[:, 0], w[:, 1]
    return abs(float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))) / 2.0


def contains(poly: ConvexPolygon, point, tol: float = 1e-9) -> bool:
    """True iff ``point`` lies within ``tol`` of the closed polygon."""
    v = poly.vertices
    if len(v) == 0:
        return False
    p = np.asarray(point, dtype=float)
    n = len(v)
    if n < 3:
        # degenerate remnant: distance to the segment/point
        if n == 1:
            return bool(np.linalg.norm(p - v[0]) <= tol)
        return bool(_segment_distance(p, v[0], v[1]) <= tol)
    inside = True
    for i in range(n):
        a, b = v[i], v[(i + 1) % n]
        e = b - a
        cr = e[0] * (p[1] - a[1]) - e[1] * (p[0] - a[0])
        if cr < 0.0:
            inside = False
            break
    if inside:
        return True
    d = min(_segment_distance(p, v[i], v[(i + 1) % n]) for i in range(n))
    return bool(d <= tol)


def _segment_distance(p, a, b) -> float:
    e = b - a
    ee = float(e @ e)
    t = 0.0 if ee == 0.0 else min(1.0, max(0.0, float((p - a) @ e) / ee))
    return float(np.linalg.norm(p - (a + t * e)))


def _dedup(normals: np.ndarray, offsets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if len(offsets) <= 1:
        return normals, offsets
    keep: list[int] = []
    for i in range(len(offsets)):
        dup = False
        for j in keep:
            if (abs(offsets[i] - offsets[j]) <= DEDUP_TOL
                    and np.max(np.abs(normals[i] - normals[j])) <= DEDUP_TOL):
                dup = True
                break
        if not dup:
            keep.append(i)
    return normals[keep], offsets[keep]


def _split_constants(normals, offsets, ncols):
    """Normalize rows; strip constant ones. Returns (normals, offsets, infeasible)."""
    nrm = np.linalg.norm(normals[:, :ncols], axis=1) if len(offsets) else np.zeros(0)
    const = nrm <= CONST_TOL
    infeasible = bool(np.any(offsets[const] < -INFEASIBLE_TOL))
    keep = ~const
    normals = normals[keep] / nrm[keep, None]
    offsets = offsets[keep] / nrm[keep]
    return normals, offsets, infeasible


def eliminate_eta(hss: HalfspaceSet, num_eta: int, cap: int = FM_ROW_CAP) -> HalfspaceSet:
    """Fourier-Motzkin projection of the trailing ``num_eta`` variables.

    The returned set lives over the leading ``hss.dim - num_eta`` variables and
    contains a point iff some value of the eliminated variables satisfies
    every input row. If the system is infeasible regardless of the kept
    variables, the result is the single constant row ``0 . z <= -1``.
    """
    if num_eta < 0 or num_eta > hss.dim:
        raise ValueError("num_eta out of range")
    p = hss.dim - num_eta
    strict_any = any(h.strict for h in hss.rows)
    normals, offsets = hss.matrix()
    normals = normals.astype(float).copy()
    offsets = offsets.astype(float).copy()

    ncols = hss.dim
    normals, offsets, infeasible = _split_constants(normals, offsets, ncols)
    for col in range(hss.dim - 1, p - 1, -1):
        if infeasible:
            break
        c = normals[:, col]
        pos = np.where(c > CONST_TOL)[0]
        neg = np.where(c < -CONST_TOL)[0]
        zero = np.where(np.abs(c) <= CONST_TOL)[0]
        n_new = len(zero) + len(pos) * len(neg)
        if n_new > cap:
            raise ProjectionBlowUpError(f"projection blow-up: {n_new} rows exceed cap {cap}")
        new_n = [normals[zero]]
        new_o = [offsets[zero]]
        if len(pos) and len(neg):
            wp = -c[neg][None, :]  # weight on positive rows, shape (1, nneg)
            wn = c[pos][:, None]   # weight on negative rows, shape (npos, 1)
            comb_n = (wp[..., None] * normals[pos][:, None, :]
                      + wn[..., None] * normals[neg][None, :, :])
            comb_o = wp * offsets[pos][:, None] + wn * offsets[neg][None, :]
            new_n.append(comb_n.reshape(-1, normals.shape[1]))
            new_o.append(comb_o.ravel())
        normals = np.concatenate(new_n, axis=0)
        offsets = np.concatenate(new_o)
        normals[:, col] = 0.0
        ncols = col
        normals, offsets, inf = _split_constants(normals, offsets, ncols)
        infeasible |= inf
        normals, offsets = _dedup(normals, offsets)

    if infeasible:
        return HalfspaceSet(p, [Halfspace(np.zeros(p), -1.0, False)])
    normals, offsets = _dedup(normals[:, :p], offsets)
    return HalfspaceSet(p, [Halfspace(n, o, strict_any) for n, o in zip(normals, offsets)])


def remove_redundant(hss: HalfspaceSet, box: ConvexPolygon) -> HalfspaceSet:
    """Drop rows that do not change the region once clipped to ``box``."""
    rows = list(hss.rows)
    if not rows:
        return HalfspaceSet(hss.dim, [])
    target = area(intersect_all(box, rows))
    tol = 1e-12 * max(1.0, area(box))
    i = 0
    while i < len(rows):
        trial = rows[:i] + rows[i + 1:]
        if abs(area(intersect_all(box, trial)) - target) <= tol:
            rows = trial
        else:
            i += 1
    return HalfspaceSet(hss.dim, rows)
