"""Barrier-pair RRT: grow certified-transition graphs between workspace regions.

Vertices carry barrier pairs; an edge is stored only when the mutual
matrix conditions of the bidirectional-transition test hold, so every stored
edge can be traversed in both directions with each pair's residue set strictly
inside the other's zero sub-level set.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import arm, ldi as ldi_mod, synth
from .arm import JointState, RobotModel
from .errors import (DegenerateDirection, Disconnected, EmptyGraph, Infeasible,
                     MaxIterations, SolverFailure)
from .ldi import LDIModel, StateBox
from .regions import ConstraintSet, Region, constraint_set_for, contains, edge_samples
from .synth import BarrierPair

# margin factor applied to the admissibility bound for edges stored in a graph;
# guarantees the 1e-9 strict-containment margin of boundary sampling
EDGE_TIGHTEN = 1e-6


@dataclass(frozen=True)
class Edge:
    i: int
    j: int
    eps1: float
    eps2: float
    admissible: bool


@dataclass(frozen=True)
class BPGraph:
    vertices: tuple
    edges: tuple
    anchors: dict
    rng_seed: int

    def pair(self, vid: int) -> BarrierPair:
        return self.vertices[vid]

    def neighbors(self, vid: int) -> list[int]:
        out = []
        for e in self.edges:
            if e.i == vid:
                out.append(e.j)
            elif e.j == vid:
                out.append(e.i)
        return sorted(out)

    def anchor_of(self, vid: int) -> str | None:
        for label, v in self.anchors.items():
            if v == vid:
                return label
        return None


def _lift(dq: np.ndarray) -> np.ndarray:
    return np.concatenate([dq, np.zeros_like(dq)])


def nearest_bp(q_rand: np.ndarray, g: BPGraph) -> tuple[int, float]:
    """Vertex minimizing the zero-velocity barrier norm to q_rand; ties by lowest id."""
    if not g.vertices:
        raise EmptyGraph("graph has no vertices")
    best, best_nu = 0, np.inf
    for vid, bp in enumerate(g.vertices):
        nu = bp.norm_q(_lift(np.asarray(q_rand) - bp.q_e))
        if nu < best_nu:
            best, best_nu = vid, nu
    return best, best_nu


def project_to_surface(q_rand: np.ndarray, v: BarrierPair, eps1: float) -> np.ndarray:
    """Radially project q_rand onto the eps1 sub-level surface of v (zero-velocity slice)."""
    dq = np.asarray(q_rand) - v.q_e
    nu = v.norm_q(_lift(dq))
    if nu <= 1e-9:
        raise DegenerateDirection("q_rand coincides with the vertex equilibrium")
    return v.q_e + (eps1 / nu) * dq


def edge_admissible(v1: BarrierPair, v2: BarrierPair, eps0: float,
                    tighten: float = 0.0) -> tuple[bool, float, float]:
    """Bidirectional-transition test between two pairs.

    eps1 = ||[q2-q1;0]||_Q1, eps2 = ||[q1-q2;0]||_Q2; admissible iff
    Q2 <= ((1-eps1)^2/eps0^2) Q1 and Q1 <= ((1-eps2)^2/eps0^2) Q2 (generalized
    eigenvalues) with eps1, eps2 < 1.
    """
    eps1 = v1.norm_q(_lift(v2.q_e - v1.q_e))
    eps2 = v2.norm_q(_lift(v1.q_e - v2.q_e))
    if eps1 >= 1.0 or eps2 >= 1.0:
        return False, eps1, eps2
    lam21 = float(np.max(scipy.linalg.eigh(v2.Q, v1.Q, eigvals_only=True)))
    lam12 = float(np.max(scipy.linalg.eigh(v1.Q, v2.Q, eigvals_only=True)))
    shrink = 1.0 + tighten
    ok = (lam21 <= ((1.0 - eps1) ** 2 / eps0 ** 2) / shrink
          and lam12 <= ((1.0 - eps2) ** 2 / eps0 ** 2) / shrink)
    return ok, eps1, eps2


def extract_sequence(g: BPGraph, from_anchor: str, to_anchor: str) -> list[int]:
    """Shortest vertex path (by edge count) between two anchors.

    Canonicalized so that extract_sequence(b, a) is exactly the reverse of
    extract_sequence(a, b) even when several shortest paths exist.
    """
    for label in (from_anchor, to_anchor):
        if label not in g.anchors:
            raise Disconnected(f"unknown anchor {label!r}")
    s, t = g.anchors[from_anchor], g.anchors[to_anchor]
    if s == t:
        return [s]
    lo, hi = min(s, t), max(s, t)
    parent = {lo: None}
    frontier = deque([lo])
    while frontier:
        v = frontier.popleft()
        if v == hi:
            break
        for w in g.neighbors(v):
            if w not in parent:
                parent[w] = v
                frontier.append(w)
    if hi not in parent:
        raise Disconnected(f"no path between {from_anchor} and {to_anchor}")
    path = [hi]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    path.reverse()  # now lo .. hi
    return path if s == lo else path[::-1]


# ---------------------------------------------------------------------------
# graph construction

@dataclass
class GrowthOptions:
    """Tuning for the sampling loop; defaults match the reference scenario."""

    eps0: float = 0.15
    eps1: float = 0.80
    alpha: float | None = 2.0          # None = bisect per pair
    max_iters: int = 500               # synthesize attempts per anchor pair
    goal_bias: float = 0.15
    q1_range: tuple = (-np.pi, np.pi)
    q2_range: tuple = (0.19, 2.95)     # keeps a singularity margin around the elbow
    dq_base: float = 0.20              # midway-pair box half-width (rad)
    dq_pad: float = 0.06               # extra box room beyond a region's joint lift spread
    dq_min: float = 0.10               # reject equilibria without this much box room
    dqd_scale: float = 1.0             # box velocity half-width as a fraction of qd bounds
    ldi_samples: int = 2000
    ldi_margin: float = 0.1
    per_edge: int = 5
    ik_branch: str = arm.ELBOW_DOWN
    sample_cap: int = 10_000           # rejection-sampling attempts per iteration


class _Builder:
    """Mutable graph state shared by the growth phases."""

    def __init__(self, model: RobotModel, obstacles: list[Region], bounds: ConstraintSet,
                 opts: GrowthOptions, seed: int):
        self.model = model
        self.obstacles = list(obstacles)
        self.bounds = bounds
        self.opts = opts
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.vertices: list[BarrierPair] = []
        self.edges: list[Edge] = []
        self.anchors: dict[str, int] = {}

    # -- helpers ------------------------------------------------------------

    def graph(self) -> BPGraph:
        return BPGraph(tuple(self.vertices), tuple(self.edges), dict(self.anchors), self.seed)

    def _box_room(self, q_e: np.ndarray) -> float:
        lo, hi = self.opts.q2_range
        return float(min(q_e[1] - (lo - 0.10), (hi + 0.10) - q_e[1]))

    def _state_box(self, q_e: np.ndarray, dq_want: np.ndarray) -> StateBox | None:
        room = self._box_room(q_e)
        dq = np.minimum(np.asarray(dq_want, dtype=float), [np.inf, room])
        if np.any(dq < self.opts.dq_min):
            return None
        dqd = self.opts.dqd_scale * self.bounds.qd_bounds
        return StateBox(q_e, dq, dqd)

    def _make_pair(self, q_e: np.ndarray, contain: Region | None, pair_id: str) -> BarrierPair:
        """Fit an LDI around q_e and solve the pair SDP; may raise Infeasible."""
        if contain is not None:
            lifts = np.array([
                arm.inverse_kinematics(self.model, x, branch=self.opts.ik_branch) - q_e
                for x in edge_samples(contain, self.opts.per_edge)])
            dq_want = np.abs(lifts).max(axis=0) + self.opts.dq_pad
            dq_want = np.maximum(dq_want, self.opts.dq_min)
        else:
            dq_want = np.full(self.model.n, self.opts.dq_base)
        box = self._state_box(q_e, dq_want)
        if box is None:
            raise Infeasible(f"no nonsingular box room at q_e={q_e}")
        samples = ldi_mod.sample_domain(box, self.opts.ldi_samples, self._draw_seed())
        ldi = ldi_mod.fit_norm_bound(self.model, box, samples, self.opts.ldi_margin)
        plant = arm.linearize(self.model, q_e)
        cs = constraint_set_for(plant.x_e, self.obstacles, self.bounds)
        if self.opts.alpha is not None:
            return synth.synthesize(self.model, plant, ldi, contain, cs,
                                    self.opts.alpha, self.opts.eps0,
                                    per_edge=self.opts.per_edge,
                                    ik_branch=self.opts.ik_branch, pair_id=pair_id)
        return synth.bisect_alpha(self.model, plant, ldi, contain, cs, self.opts.eps0,
                                  per_edge=self.opts.per_edge,
                                  ik_branch=self.opts.ik_branch, pair_id=pair_id)

    def _draw_seed(self) -> int:
        return int(self.rng.integers(0, 2 ** 31 - 1))

    def _random_configuration(self, q_goal: np.ndarray) -> np.ndarray:
        """Rejection-sampled joint configuration: outside obstacles, nonsingular."""
        for _ in range(self.opts.sample_cap):
            if self.rng.uniform() < self.opts.goal_bias:
                return q_goal.copy()
            q = np.array([
                self.rng.uniform(*self.opts.q1_range),
                self.rng.uniform(*self.opts.q2_range),
            ])
            x = arm.forward_kinematics(self.model, q)
            if any(contains(r, x) for r in self.obstacles):
                continue
            return q
        raise MaxIterations("rejection sampling exhausted its attempt cap")

    def _add_vertex(self, bp: BarrierPair) -> int:
        self.vertices.append(bp)
        return len(self.vertices) - 1

    def _add_edge(self, i: int, j: int, eps1: float, eps2: float):
        self.edges.append(Edge(i, j, eps1, eps2, True))

    def _anchor_pair(self, region: Region, label: str) -> int:
        """Vertex id of the anchor pair for `region`, synthesizing it if absent."""
        if label in self.anchors:
            return self.anchors[label]
        q_e = arm.inverse_kinematics(self.model, region.center, branch=self.opts.ik_branch)
        bp = self._make_pair(q_e, region, pair_id=label)
        vid = self._add_vertex(bp)
        self.anchors[label] = vid
        return vid

    # -- the Algorithm-2 growth loop -----------------------------------------

    def connect(self, start_vid: int, goal_q: np.ndarray,
                goal_region: Region | None, goal_label: str | None,
                goal_vid: int | None) -> int:
        """Grow a tree rooted at start_vid until the goal attaches; returns goal vid.

        The goal is either a region (a new containing pair is synthesized at
        its center, Algorithm-2 lines 16-17) or an existing vertex (sequence
        switching junctions).  Growth extends only this phase's own tree so
        the finished sequence is a connected chain back to start_vid; the
        final edge must pass the bidirectional admissibility check.
        """
        attempts = 0
        sweeps = 0
        attach_tried_from = None
        newest = start_vid
        grow_set = [start_vid]
        while True:
            sweeps += 1
            if sweeps > 200 * self.opts.max_iters:
                raise MaxIterations("growth loop stalled (every candidate rejected)")
            new_bp = self.vertices[newest]
            if (new_bp.norm_q(_lift(goal_q - new_bp.q_e)) <= self.opts.eps1
                    and attach_tried_from != newest):
                attach_tried_from = newest
                if goal_vid is None:
                    if attempts >= self.opts.max_iters:
                        raise MaxIterations(f"no admissible goal edge within {attempts} attempts")
                    attempts += 1
                    try:
                        goal_bp = self._make_pair(goal_q, goal_region, pair_id=goal_label or "goal")
                    except (Infeasible, SolverFailure):
                        goal_bp = None
                    if goal_bp is not None:
                        ok, e1, e2 = edge_admissible(new_bp, goal_bp, self.opts.eps0, EDGE_TIGHTEN)
                        if ok:
                            vid = self._add_vertex(goal_bp)
                            if goal_label:
                                self.anchors[goal_label] = vid
                            self._add_edge(newest, vid, e1, e2)
                            return vid
                else:
                    ok, e1, e2 = edge_admissible(new_bp, self.vertices[goal_vid], self.opts.eps0, EDGE_TIGHTEN)
                    if ok:
                        self._add_edge(newest, goal_vid, e1, e2)
                        return goal_vid

            if attempts >= self.opts.max_iters:
                raise MaxIterations(
                    f"graph did not connect within {self.opts.max_iters} synthesis attempts")
            q_rand = self._random_configuration(goal_q)
            near_vid, nu = self._nearest(q_rand, grow_set)
            if nu <= 1e-9:
                continue
            near_bp = self.vertices[near_vid]
            q_att = project_to_surface(q_rand, near_bp, self.opts.eps1)
            if not self._candidate_ok(q_att):
                continue
            attempts += 1
            try:
                att_bp = self._make_pair(q_att, None, pair_id=f"v{len(self.vertices)}")
            except (Infeasible, SolverFailure):
                continue
            ok, e1, e2 = edge_admissible(near_bp, att_bp, self.opts.eps0, EDGE_TIGHTEN)
            if not ok:
                continue
            vid = self._add_vertex(att_bp)
            self._add_edge(near_vid, vid, e1, e2)
            grow_set.append(vid)
            newest = vid

    def _nearest(self, q_rand: np.ndarray, grow_set: list[int]) -> tuple[int, float]:
        """nearest_bp restricted to the current phase's tree."""
        best, best_nu = -1, np.inf
        for vid in grow_set:
            bp = self.vertices[vid]
            nu = bp.norm_q(_lift(np.asarray(q_rand) - bp.q_e))
            if nu < best_nu:
                best, best_nu = vid, nu
        if best < 0:
            raise EmptyGraph("no growth vertices available")
        return best, best_nu

    def _candidate_ok(self, q: np.ndarray) -> bool:
        lo, hi = self.opts.q2_range
        if not (lo <= q[1] <= hi):
            return False
        if abs(arm.det_jacobian(self.model, q)) < arm.DET_J_MIN:
            return False
        x = arm.forward_kinematics(self.model, q)
        return not any(contains(r, x) for r in self.obstacles)


def build_graph(model: RobotModel, a0: Region, af: Region, obstacles: list[Region],
                cs: ConstraintSet, eps0: float, eps1: float, seed: int, max_iters: int,
                opts: GrowthOptions | None = None) -> BPGraph:
    """Algorithm-2 growth of a single bidirectional sequence from a0 to af."""
    if not eps0 < 1.0 - eps1:
        raise ValueError(f"need eps0 < 1 - eps1 (got eps0={eps0}, eps1={eps1})")
    opts = opts or GrowthOptions()
    opts.eps0, opts.eps1, opts.max_iters = eps0, eps1, max_iters
    b = _Builder(model, obstacles, cs, opts, seed)
    start = b._anchor_pair(af, af.id)
    goal_q = arm.inverse_kinematics(model, a0.center, branch=opts.ik_branch)
    b.connect(start, goal_q, a0, a0.id, None)
    return b.graph()


def build_scenario_graph(model: RobotModel, tasks: list[Region], obstacles: list[Region],
                         cs: ConstraintSet, eps0: float, eps1: float, seed: int,
                         max_iters: int = 500, opts: GrowthOptions | None = None) -> BPGraph:
    """Full six-sequence graph: a2-a3, a3-a1, a1-a2 plus the c1-c2-c3 junctions.

    The midway anchor of each task-to-task sequence is its middle vertex;
    the three junction anchors are then pairwise connected so the executive
    can switch sequences without passing through a task region.
    """
    if len(tasks) != 3:
        raise ValueError("the scenario graph expects exactly three task regions")
    if not eps0 < 1.0 - eps1:
        raise ValueError(f"need eps0 < 1 - eps1 (got eps0={eps0}, eps1={eps1})")
    opts = opts or GrowthOptions()
    opts.eps0, opts.eps1, opts.max_iters = eps0, eps1, max_iters
    b = _Builder(model, obstacles, cs, opts, seed)
    by_id = {r.id: r for r in tasks}
    names = sorted(by_id)  # a1, a2, a3
    a1, a2, a3 = names

    task_pairs = [(a2, a3, "c1"), (a3, a1, "c2"), (a1, a2, "c3")]
    for origin, dest, mid_label in task_pairs:
        dest_vid = b._anchor_pair(by_id[dest], dest)
        goal_q = arm.inverse_kinematics(model, by_id[origin].center, branch=opts.ik_branch)
        if origin in b.anchors:
            b.connect(dest_vid, goal_q, None, None, b.anchors[origin])
        else:
            b.connect(dest_vid, goal_q, by_id[origin], origin, None)
        seq = extract_sequence(b.graph(), origin, dest)
        b.anchors[mid_label] = _middle_vertex(seq, b.anchors)

    for c_from, c_to in (("c1", "c2"), ("c2", "c3"), ("c3", "c1")):
        src, dst = b.anchors[c_from], b.anchors[c_to]
        goal_q = b.vertices[dst].q_e
        b.connect(src, goal_q, None, None, dst)

    return b.graph()


def _middle_vertex(seq: list[int], anchors: dict) -> int:
    if len(seq) < 3:
        raise ValueError("sequence too short to carry a midway anchor; enlarge the scenario")
    taken = set(anchors.values())
    order = sorted(range(len(seq)), key=lambda i: (abs(i - (len(seq) - 1) / 2), i))
    for i in order:
        if seq[i] not in taken:
            return seq[i]
    raise ValueError("every sequence vertex is already an anchor")
