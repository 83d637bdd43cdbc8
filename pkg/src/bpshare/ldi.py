"""Norm-bound linear differential inclusion fit over a joint-space box.

Each nonlinear term (-M^-1 C, M^-1 J^T, M^-1, J) is covered by a norm-bound
set around its equilibrium value,

    term(s) in { nominal + X2 Delta X3 : ||Delta|| <= 1 },

fitted by sampling the exact terms and taking the (margin-inflated) worst
residual.  The dynamics channels shape their factors with the unit-normalized
inertia square root G = M^-1(q_e)^(1/2) / ||.||, so the cover follows the
arm's inertia anisotropy instead of a plain spectral ball: identity factors
would have to include torque-direction-reversing input matrices before the
box is large enough to hold a task region, making synthesis infeasible.

  A channel  (-M^-1 C):  X2 = sigma_A  * G,  X3 = I
  Bu channel (M^-1):     X2 = sigma_Bu * G,  X3 = G
  Bw channel (M^-1 J^T): X2 = sigma_Bw * G,  X3 = I
  J channel  (J):        X2 = sigma_J  * I,  X3 = I

Membership of a residual R is exactly ||Ginv R Ginv|| <= sigma (Bu),
||Ginv R|| <= sigma (A, Bw), or ||R|| <= sigma (J).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import arm
from .arm import JointState, RobotModel
from .errors import OutsideBox, SingularSample


@dataclass(frozen=True)
class StateBox:
    """Axis-aligned joint box around an equilibrium; velocities boxed around zero."""

    q_e: np.ndarray
    dq_max: np.ndarray
    dqd_max: np.ndarray

    def __post_init__(self):
        for name in ("q_e", "dq_max", "dqd_max"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.dq_max <= 0) or np.any(self.dqd_max <= 0):
            raise ValueError("box half-widths must be strictly positive")

    def contains(self, s: JointState, tol: float = 1e-12) -> bool:
        return bool(np.all(np.abs(s.q - self.q_e) <= self.dq_max + tol)
                    and np.all(np.abs(s.qd) <= self.dqd_max + tol))


@dataclass(frozen=True)
class LDIModel:
    """Nominal matrices plus shaped norm-bound factors, valid on `box`."""

    A1: np.ndarray
    sigma_A: float
    B1u: np.ndarray
    sigma_Bu: float
    B1w: np.ndarray
    sigma_Bw: float
    J1: np.ndarray
    sigma_J: float
    shape: np.ndarray       # G: SPD, unit spectral norm
    shape_inv: np.ndarray
    box: StateBox
    margin: float

    def A2(self):
        return self.sigma_A * self.shape

    def A3(self):
        return np.eye(self.A1.shape[0])

    def B2u(self):
        return self.sigma_Bu * self.shape

    def B3u(self):
        return self.shape.copy()

    def B2w(self):
        return self.sigma_Bw * self.shape

    def B3w(self):
        return np.eye(self.B1w.shape[0])

    def J2(self):
        return self.sigma_J * np.eye(self.J1.shape[0])

    def J3(self):
        return np.eye(self.J1.shape[0])


def sample_domain(box: StateBox, count: int, seed: int) -> list[JointState]:
    """Deterministic samples in the box: center, box-face centers, then uniform draws."""
    if count < 1:
        raise ValueError("count must be >= 1")
    n = box.q_e.shape[0]
    fixed = [JointState(box.q_e.copy(), np.zeros(n))]
    for j in range(n):
        for sgn in (+1.0, -1.0):
            dq = np.zeros(n)
            dq[j] = sgn * box.dq_max[j]
            fixed.append(JointState(box.q_e + dq, np.zeros(n)))
    for j in range(n):
        for sgn in (+1.0, -1.0):
            dqd = np.zeros(n)
            dqd[j] = sgn * box.dqd_max[j]
            fixed.append(JointState(box.q_e.copy(), dqd))
    out = fixed[:count]
    if count > len(fixed):
        rng = np.random.default_rng(seed)
        m = count - len(fixed)
        q = box.q_e + rng.uniform(-1.0, 1.0, size=(m, n)) * box.dq_max
        qd = rng.uniform(-1.0, 1.0, size=(m, n)) * box.dqd_max
        out = fixed + [JointState(q[i], qd[i]) for i in range(m)]
    return out


def _spectral_norms(R: np.ndarray) -> np.ndarray:
    """Batched sigma_max for (N, n, n) residuals."""
    if R.shape[1:] == (2, 2):
        # closed form via the two singular values of a 2x2 matrix
        a, b, c, d = R[:, 0, 0], R[:, 0, 1], R[:, 1, 0], R[:, 1, 1]
        f = a * a + b * b + c * c + d * d
        g = np.sqrt(np.maximum((a * a + b * b - c * c - d * d) ** 2 + 4 * (a * c + b * d) ** 2, 0.0))
        return np.sqrt(np.maximum((f + g) / 2.0, 0.0))
    return np.linalg.norm(R, ord=2, axis=(1, 2))


def _exact_terms(model: RobotModel, Q: np.ndarray, QD: np.ndarray):
    """Batched (-M^-1 C, M^-1 J^T, M^-1, J) over states (Q, QD)."""
    M, C, J = arm.terms_batch(model, Q, QD)
    Minv = arm.inv2_batch(M)
    return -Minv @ C, Minv @ np.transpose(J, (0, 2, 1)), Minv, J


def _check_nonsingular(model: RobotModel, Q: np.ndarray):
    l1, l2 = model.link_lengths
    det = l1 * l2 * np.abs(np.sin(Q[:, 1]))
    bad = det < arm.DET_J_MIN
    if np.any(bad):
        i = int(np.argmax(bad))
        raise SingularSample(f"sample q={Q[i]} has |det J| = {det[i]:.4f} < {arm.DET_J_MIN}")


def _spd_sqrt(M: np.ndarray) -> np.ndarray:
    lam, V = np.linalg.eigh(M)
    return (V * np.sqrt(np.maximum(lam, 0.0))) @ V.T


def _normalized_residuals(ldi_shape_inv: np.ndarray, residuals: dict) -> dict:
    Gi = ldi_shape_inv
    return {
        "A": _spectral_norms(Gi @ residuals["A"]),
        "Bu": _spectral_norms(Gi @ residuals["Bu"] @ Gi),
        "Bw": _spectral_norms(Gi @ residuals["Bw"]),
        "J": _spectral_norms(residuals["J"]),
    }


def fit_norm_bound(model: RobotModel, box: StateBox, samples: list[JointState],
                   margin: float) -> LDIModel:
    """Fit norm-bound covers for the four terms from exact samples in the box.

    Nominals are the exact values at the box center (q_e, 0); each sigma is
    (1 + margin) times the worst sampled normalized-residual norm.
    """
    if not samples:
        raise ValueError("samples must be nonempty")
    for s in samples:
        if not box.contains(s):
            raise ValueError("all fitting samples must lie inside the box")
    Q = np.stack([s.q for s in samples])
    QD = np.stack([s.qd for s in samples])
    _check_nonsingular(model, Q)

    n = model.n
    A1, B1w, B1u, J1 = (t[0] for t in _exact_terms(model, box.q_e[None, :], np.zeros((1, n))))
    G = _spd_sqrt(B1u)
    G = G / np.linalg.norm(G, ord=2)
    G_inv = np.linalg.inv(G)
    TA, TBw, TBu, TJ = _exact_terms(model, Q, QD)
    norms = _normalized_residuals(G_inv, {"A": TA - A1, "Bu": TBu - B1u, "Bw": TBw - B1w, "J": TJ - J1})
    inflate = 1.0 + margin
    return LDIModel(
        A1=A1, sigma_A=inflate * float(np.max(norms["A"])),
        B1u=B1u, sigma_Bu=inflate * float(np.max(norms["Bu"])),
        B1w=B1w, sigma_Bw=inflate * float(np.max(norms["Bw"])),
        J1=J1, sigma_J=inflate * float(np.max(norms["J"])),
        shape=G, shape_inv=G_inv, box=box, margin=float(margin),
    )


def inclusion_check(ldi: LDIModel, model: RobotModel, s: JointState) -> bool:
    """True iff every exact term at s lies in its fitted norm-bound set."""
    if not ldi.box.contains(s):
        raise OutsideBox("state outside the LDI validity box")
    return bool(inclusion_check_batch(ldi, model, s.q[None, :], s.qd[None, :])[0])


def inclusion_check_batch(ldi: LDIModel, model: RobotModel, Q: np.ndarray, QD: np.ndarray) -> np.ndarray:
    """Vectorized inclusion test; states assumed inside the box."""
    TA, TBw, TBu, TJ = _exact_terms(model, Q, QD)
    norms = _normalized_residuals(ldi.shape_inv, {
        "A": TA - ldi.A1, "Bu": TBu - ldi.B1u, "Bw": TBw - ldi.B1w, "J": TJ - ldi.J1})
    tol = 1e-12
    return ((norms["A"] <= ldi.sigma_A + tol) & (norms["Bu"] <= ldi.sigma_Bu + tol)
            & (norms["Bw"] <= ldi.sigma_Bw + tol) & (norms["J"] <= ldi.sigma_J + tol))
