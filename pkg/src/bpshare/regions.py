"""Workspace geometry: convex polytopic regions, obstacle slabs, edge sampling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EquilibriumInsideObstacle

KIND_TASK = "task"
KIND_OBSTACLE = "obstacle"
KIND_BASE = "base"


@dataclass(frozen=True)
class Region:
    """Convex polygon in the workspace, vertices counter-clockwise."""

    id: str
    kind: str
    vertices: np.ndarray

    def __post_init__(self):
        V = np.asarray(self.vertices, dtype=float)
        object.__setattr__(self, "vertices", V)
        if V.ndim != 2 or V.shape[0] < 3 or V.shape[1] != 2:
            raise ValueError(f"region {self.id}: need >= 3 planar vertices")
        if self.kind not in (KIND_TASK, KIND_OBSTACLE, KIND_BASE):
            raise ValueError(f"region {self.id}: unknown kind {self.kind!r}")
        edges = np.roll(V, -1, axis=0) - V
        cross = edges[:, 0] * np.roll(edges, -1, axis=0)[:, 1] - edges[:, 1] * np.roll(edges, -1, axis=0)[:, 0]
        if np.any(cross <= 0):
            raise ValueError(f"region {self.id}: vertices must be strictly convex counter-clockwise")

    @property
    def center(self) -> np.ndarray:
        """Area centroid of the polygon."""
        V = self.vertices
        W = np.roll(V, -1, axis=0)
        cross = V[:, 0] * W[:, 1] - W[:, 0] * V[:, 1]
        area = 0.5 * np.sum(cross)
        return np.sum((V + W) * cross[:, None], axis=0) / (6.0 * area)


def contains(r: Region, x: np.ndarray, tol: float = 1e-12) -> bool:
    """Convex-polygon membership; the boundary counts as inside."""
    x = np.asarray(x, dtype=float)
    V = r.vertices
    W = np.roll(V, -1, axis=0)
    cross = (W[:, 0] - V[:, 0]) * (x[1] - V[:, 1]) - (W[:, 1] - V[:, 1]) * (x[0] - V[:, 0])
    return bool(np.all(cross >= -tol))


def contains_batch(r: Region, X: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Vectorized membership for points X of shape (N, 2)."""
    V = r.vertices
    W = np.roll(V, -1, axis=0)
    ex, ey = (W[:, 0] - V[:, 0])[None, :], (W[:, 1] - V[:, 1])[None, :]
    cross = ex * (X[:, 1:2] - V[None, :, 1]) - ey * (X[:, 0:1] - V[None, :, 0])
    return np.all(cross >= -tol, axis=1)


def nearest_point(r: Region, x: np.ndarray) -> np.ndarray:
    """Closest point of the (closed) polygon to x."""
    x = np.asarray(x, dtype=float)
    if contains(r, x):
        return x.copy()
    best, best_d2 = None, np.inf
    V = r.vertices
    for i in range(V.shape[0]):
        a, b = V[i], V[(i + 1) % V.shape[0]]
        ab = b - a
        t = float(np.clip((x - a) @ ab / (ab @ ab), 0.0, 1.0))
        p = a + t * ab
        d2 = float((x - p) @ (x - p))
        if d2 < best_d2:
            best, best_d2 = p, d2
    return best


def build_slab(x_e: np.ndarray, r: Region) -> tuple[np.ndarray, float]:
    """Separating slab |a_i . (x - x_e)| < abar_i between the equilibrium and obstacle r.

    a_i is the unit vector from x_e toward the closest obstacle point, abar_i
    the distance; by convexity the slab cannot intersect r.
    """
    x_e = np.asarray(x_e, dtype=float)
    if contains(r, x_e):
        raise EquilibriumInsideObstacle(f"equilibrium lies inside region {r.id}")
    p = nearest_point(r, x_e)
    gap = p - x_e
    dist = float(np.linalg.norm(gap))
    return gap / dist, dist


def edge_samples(r: Region, per_edge: int) -> np.ndarray:
    """per_edge equally spaced points on each edge; shared vertices appear once."""
    if per_edge < 2:
        raise ValueError("per_edge must be >= 2")
    V = r.vertices
    pts = []
    for i in range(V.shape[0]):
        a, b = V[i], V[(i + 1) % V.shape[0]]
        ts = np.linspace(0.0, 1.0, per_edge)[:-1]  # drop t=1: it is the next edge's t=0
        pts.append(a + ts[:, None] * (b - a))
    return np.vstack(pts)


@dataclass(frozen=True)
class ConstraintSet:
    """Constraint bundle consumed by barrier-pair synthesis.

    slabs: list of (unit row a_i, half-width abar_i) per obstacle, centered at
    the equilibrium; x_bounds / qd_bounds box the workspace displacement and
    joint velocity; u_bounds the per-joint torque; w_bar the force-norm bound.
    """

    slabs: tuple
    x_bounds: np.ndarray
    qd_bounds: np.ndarray
    u_bounds: np.ndarray
    w_bar: float

    def __post_init__(self):
        object.__setattr__(self, "x_bounds", np.asarray(self.x_bounds, dtype=float))
        object.__setattr__(self, "qd_bounds", np.asarray(self.qd_bounds, dtype=float))
        object.__setattr__(self, "u_bounds", np.asarray(self.u_bounds, dtype=float))
        object.__setattr__(self, "slabs", tuple((np.asarray(a, dtype=float), float(b)) for a, b in self.slabs))
        if np.any(self.x_bounds <= 0) or np.any(self.qd_bounds <= 0) or np.any(self.u_bounds <= 0) or self.w_bar <= 0:
            raise ValueError("all bounds must be strictly positive")
        for a, b in self.slabs:
            if abs(np.linalg.norm(a) - 1.0) > 1e-9:
                raise ValueError("slab normals must be unit norm")
            if b <= 0:
                raise ValueError("slab half-widths must be strictly positive")

    def with_slabs(self, slabs) -> "ConstraintSet":
        return ConstraintSet(slabs=tuple(slabs), x_bounds=self.x_bounds,
                             qd_bounds=self.qd_bounds, u_bounds=self.u_bounds, w_bar=self.w_bar)


def constraint_set_for(x_e: np.ndarray, obstacles, bounds: ConstraintSet) -> ConstraintSet:
    """Rebuild the per-equilibrium obstacle slabs, keeping the global bounds."""
    return bounds.with_slabs(build_slab(x_e, r) for r in obstacles)
