"""Planar point-mass manipulator: exact dynamics, kinematics, linearization.

The arm moves in a horizontal plane (no gravity term), with each link's mass
concentrated at its distal end.  For n=2 all terms are closed-form; a generic
Jacobian/Christoffel path covers other n.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NearSingular, NonFiniteState, OutOfReach

# |det J| below this is treated as singular: M^-1 J^T blows up and IK branches merge.
DET_J_MIN = 0.05

ELBOW_DOWN = "down"
ELBOW_UP = "up"


@dataclass(frozen=True)
class RobotModel:
    """Kinematic/dynamic parameters of the n-link planar arm."""

    link_lengths: np.ndarray
    point_masses: np.ndarray
    torque_limits: np.ndarray
    base_position: np.ndarray

    def __post_init__(self):
        for name in ("link_lengths", "point_masses", "torque_limits", "base_position"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.link_lengths.shape[0]
        if self.point_masses.shape != (n,) or self.torque_limits.shape != (n,):
            raise ValueError("link_lengths, point_masses, torque_limits must share length n")
        if self.base_position.shape != (2,):
            raise ValueError("base_position must be a 2-vector")
        if np.any(self.link_lengths <= 0) or np.any(self.point_masses <= 0) or np.any(self.torque_limits <= 0):
            raise ValueError("lengths, masses and torque bounds must be strictly positive")

    @property
    def n(self) -> int:
        return self.link_lengths.shape[0]

    @property
    def reach(self) -> float:
        return float(np.sum(self.link_lengths))


@dataclass(frozen=True)
class JointState:
    q: np.ndarray
    qd: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "qd", np.asarray(self.qd, dtype=float))
        if self.q.shape != self.qd.shape:
            raise ValueError("q and qd must share dimension")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qd))):
            raise ValueError("joint state entries must be finite")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.qd])


@dataclass(frozen=True)
class LinearizedPlant:
    """State-space form about an equilibrium (q_e, 0): zdot = A z + B_u u + B_w w, x~ = C_x z."""

    q_e: np.ndarray
    x_e: np.ndarray
    A: np.ndarray
    B_u: np.ndarray
    B_w: np.ndarray
    C_x: np.ndarray


def _joint_positions(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """Positions of every point mass, rows = link ends, world frame."""
    angles = np.cumsum(q)
    steps = model.link_lengths[:, None] * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return model.base_position + np.cumsum(steps, axis=0)


def forward_kinematics(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """End-effector position in the world frame (base offset applied)."""
    q = np.asarray(q, dtype=float)
    return _joint_positions(model, q)[-1]


def _point_jacobian(model: RobotModel, q: np.ndarray, k: int) -> np.ndarray:
    """Jacobian of the k-th point-mass position w.r.t. q (2 x n)."""
    n = model.n
    angles = np.cumsum(q)
    J = np.zeros((2, n))
    for j in range(k + 1):
        # joint j rotates all link segments j..k
        seg = model.link_lengths[j:k + 1]
        ang = angles[j:k + 1]
        J[0, j] = -np.sum(seg * np.sin(ang))
        J[1, j] = np.sum(seg * np.cos(ang))
    return J


def jacobian(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """End-effector Jacobian dF/dq (n x n for the planar n=2 arm)."""
    q = np.asarray(q, dtype=float)
    return _point_jacobian(model, q, model.n - 1)


def det_jacobian(model: RobotModel, q: np.ndarray) -> float:
    return float(np.linalg.det(jacobian(model, q)))


def inverse_kinematics(model: RobotModel, x: np.ndarray, branch: str = ELBOW_DOWN) -> np.ndarray:
    """Joint angles reproducing workspace position x on the requested elbow branch.

    Raises OutOfReach outside the annulus, NearSingular when the solution sits
    below the |det J| threshold (e.g. full extension).
    """
    if model.n != 2:
        raise NotImplementedError("closed-form IK implemented for the 2-link arm")
    if branch not in (ELBOW_DOWN, ELBOW_UP):
        raise ValueError(f"unknown branch {branch!r}")
    x = np.asarray(x, dtype=float)
    l1, l2 = model.link_lengths
    r = x - model.base_position
    d2 = float(r @ r)
    d = np.sqrt(d2)
    lo, hi = abs(l1 - l2), l1 + l2
    if d > hi + 1e-12 or d < lo - 1e-12:
        raise OutOfReach(f"target at distance {d:.6f} m outside [{lo:.3f}, {hi:.3f}]")
    c2 = (d2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    c2 = min(1.0, max(-1.0, c2))
    q2 = np.arccos(c2)
    if branch == ELBOW_UP:
        q2 = -q2
    q1 = np.arctan2(r[1], r[0]) - np.arctan2(l2 * np.sin(q2), l1 + l2 * np.cos(q2))
    q = np.array([q1, q2])
    if abs(det_jacobian(model, q)) < DET_J_MIN:
        raise NearSingular(f"|det J| = {abs(det_jacobian(model, q)):.4f} at IK solution")
    return q


def lagrangian_terms(model: RobotModel, s: JointState):
    """Inertia M(q), Coriolis matrix C(q, qd) and end-effector Jacobian J(q).

    M is built from the point-mass Jacobians (M = sum m_k Jk^T Jk, exact);
    C uses the closed form for n=2 and finite-difference Christoffel symbols
    otherwise, so (Mdot - 2C) stays skew-symmetric.
    """
    q, qd = s.q, s.qd
    n = model.n
    if n == 2:
        m1, m2 = model.point_masses
        l1, l2 = model.link_lengths
        c2, s2 = np.cos(q[1]), np.sin(q[1])
        M = np.array([
            [(m1 + m2) * l1 * l1 + m2 * l2 * l2 + 2 * m2 * l1 * l2 * c2,
             m2 * l2 * l2 + m2 * l1 * l2 * c2],
            [m2 * l2 * l2 + m2 * l1 * l2 * c2, m2 * l2 * l2],
        ])
        h = -m2 * l1 * l2 * s2
        C = np.array([
            [h * qd[1], h * (qd[0] + qd[1])],
            [-h * qd[0], 0.0],
        ])
        return M, C, jacobian(model, q)

    M = _mass_matrix_generic(model, q)
    dM = np.empty((n, n, n))
    eps = 1e-6
    for k in range(n):
        dq = np.zeros(n)
        dq[k] = eps
        dM[:, :, k] = (_mass_matrix_generic(model, q + dq) - _mass_matrix_generic(model, q - dq)) / (2 * eps)
    C = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            C[i, j] = 0.5 * np.sum((dM[i, j, :] + dM[i, :, j] - dM[:, i, j]) * qd)
    return M, C, jacobian(model, q)


def _mass_matrix_generic(model: RobotModel, q: np.ndarray) -> np.ndarray:
    M = np.zeros((model.n, model.n))
    for k in range(model.n):
        Jk = _point_jacobian(model, q, k)
        M += model.point_masses[k] * (Jk.T @ Jk)
    return M


def linearize(model: RobotModel, q_e: np.ndarray) -> LinearizedPlant:
    """State-space matrices at the equilibrium (q_e, 0)."""
    q_e = np.asarray(q_e, dtype=float)
    n = model.n
    if abs(det_jacobian(model, q_e)) < DET_J_MIN:
        raise NearSingular(f"equilibrium |det J| below {DET_J_MIN}")
    M, C, J = lagrangian_terms(model, JointState(q_e, np.zeros(n)))
    Minv = np.linalg.inv(M)
    A = np.block([
        [np.zeros((n, n)), np.eye(n)],
        [np.zeros((n, n)), -Minv @ C],
    ])
    B_u = np.vstack([np.zeros((n, n)), Minv])
    B_w = np.vstack([np.zeros((n, n)), Minv @ J.T])
    C_x = np.hstack([J, np.zeros((n, n))])
    return LinearizedPlant(q_e=q_e, x_e=forward_kinematics(model, q_e), A=A, B_u=B_u, B_w=B_w, C_x=C_x)


def accel(model: RobotModel, q: np.ndarray, qd: np.ndarray, u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """qdd = M^-1 (u + J^T w - C qd)."""
    M, C, J = lagrangian_terms(model, JointState(q, qd))
    return np.linalg.solve(M, u + J.T @ w - C @ qd)


def step(model: RobotModel, s: JointState, u: np.ndarray, w: np.ndarray, dt: float) -> JointState:
    """One explicit RK4 step of the exact dynamics under torque u and tip force w."""
    if not (0.0 < dt <= 0.01):
        raise ValueError("dt must lie in (0, 0.01]")
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)

    def f(q, qd):
        return qd, accel(model, q, qd, u, w)

    q, qd = s.q, s.qd
    k1q, k1v = f(q, qd)
    k2q, k2v = f(q + 0.5 * dt * k1q, qd + 0.5 * dt * k1v)
    k3q, k3v = f(q + 0.5 * dt * k2q, qd + 0.5 * dt * k2v)
    k4q, k4v = f(q + dt * k3q, qd + dt * k3v)
    q_next = q + (dt / 6.0) * (k1q + 2 * k2q + 2 * k3q + k4q)
    qd_next = qd + (dt / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v)
    if not (np.all(np.isfinite(q_next)) and np.all(np.isfinite(qd_next))):
        raise NonFiniteState("integration diverged")
    return JointState(q_next, qd_next)


def kinetic_energy(model: RobotModel, s: JointState) -> float:
    M, _, _ = lagrangian_terms(model, s)
    return 0.5 * float(s.qd @ M @ s.qd)


# ---------------------------------------------------------------------------
# Vectorized closed-form terms for the 2-link arm. Batched over the leading
# axis; used by the LDI fit and the certification sampler, where per-sample
# Python loops would dominate the runtime.

def terms_batch(model: RobotModel, Q: np.ndarray, QD: np.ndarray):
    """(M, C, J) for a batch of 2-link states; shapes (N,2,2)."""
    if model.n != 2:
        raise NotImplementedError("batched terms implemented for the 2-link arm")
    m1, m2 = model.point_masses
    l1, l2 = model.link_lengths
    N = Q.shape[0]
    c2, s2 = np.cos(Q[:, 1]), np.sin(Q[:, 1])
    M = np.empty((N, 2, 2))
    M[:, 0, 0] = (m1 + m2) * l1 * l1 + m2 * l2 * l2 + 2 * m2 * l1 * l2 * c2
    M[:, 0, 1] = M[:, 1, 0] = m2 * l2 * l2 + m2 * l1 * l2 * c2
    M[:, 1, 1] = m2 * l2 * l2
    h = -m2 * l1 * l2 * s2
    C = np.zeros((N, 2, 2))
    C[:, 0, 0] = h * QD[:, 1]
    C[:, 0, 1] = h * (QD[:, 0] + QD[:, 1])
    C[:, 1, 0] = -h * QD[:, 0]
    s1, c1 = np.sin(Q[:, 0]), np.cos(Q[:, 0])
    s12, c12 = np.sin(Q[:, 0] + Q[:, 1]), np.cos(Q[:, 0] + Q[:, 1])
    J = np.empty((N, 2, 2))
    J[:, 0, 0] = -l1 * s1 - l2 * s12
    J[:, 0, 1] = -l2 * s12
    J[:, 1, 0] = l1 * c1 + l2 * c12
    J[:, 1, 1] = l2 * c12
    return M, C, J


def inv2_batch(M: np.ndarray) -> np.ndarray:
    """Batched 2x2 matrix inverse."""
    det = M[:, 0, 0] * M[:, 1, 1] - M[:, 0, 1] * M[:, 1, 0]
    inv = np.empty_like(M)
    inv[:, 0, 0] = M[:, 1, 1]
    inv[:, 1, 1] = M[:, 0, 0]
    inv[:, 0, 1] = -M[:, 0, 1]
    inv[:, 1, 0] = -M[:, 1, 0]
    return inv / det[:, None, None]


def fk_batch(model: RobotModel, Q: np.ndarray) -> np.ndarray:
    """Batched 2-link forward kinematics, shape (N, 2)."""
    l1, l2 = model.link_lengths
    x = l1 * np.cos(Q[:, 0]) + l2 * np.cos(Q[:, 0] + Q[:, 1])
    y = l1 * np.sin(Q[:, 0]) + l2 * np.sin(Q[:, 0] + Q[:, 1])
    return model.base_position + np.stack([x, y], axis=1)
