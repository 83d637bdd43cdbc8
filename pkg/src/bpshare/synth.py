"""Barrier-pair synthesis and sampled certification.

A barrier pair is (B, k) with B(z) = z^T Q^-1 z - 1 and k(z) = K z on the
state z = [q - q_e; qd].  Q and Y = K Q are found by a determinant-maximizing
SDP whose constraints make E(1) = {B <= 0}:

  * contain the goal polygon's edge samples (zero-velocity joint lifts),
  * stay out of every obstacle slab and inside the workspace/velocity boxes,
  * respect per-joint torque limits,
  * and contract at rate alpha into the residue set E(eps0) under any
    force of norm <= w_bar, for every dynamics realization of the LDI.

The problem is nondimensionalized before solving (joint, velocity and torque
scales folded into the data, uncertainty channels balanced); Q and K are
rescaled on the way out, which also makes the synthesis exactly covariant
under a change of torque units.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import cvxpy as cp
import numpy as np

from . import arm
from .arm import JointState, LinearizedPlant, RobotModel
from .errors import EmptySampleSet, Infeasible, InvalidScalar, SolverFailure
from .ldi import LDIModel
from .regions import ConstraintSet, Region, contains_batch, edge_samples
from .sdp import SdpAdapter

RESIDUAL_TOL = 1e-7


@dataclass(frozen=True)
class CertReport:
    """Sampled evidence that a synthesized pair satisfies its contract."""

    samples_used: int
    max_torque_on_boundary: float
    min_decrease_margin: float
    min_rate_margin: float
    containment_ok: bool
    exclusion_ok: bool
    velocity_ok: bool
    violations: tuple

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class BarrierPair:
    id: str
    q_e: np.ndarray
    x_e: np.ndarray
    Q: np.ndarray
    K: np.ndarray
    eps0: float
    alpha: float
    w_bar: float
    cert: CertReport | None = None

    def __post_init__(self):
        for name in ("q_e", "x_e", "Q", "K"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (0.0 < self.eps0 < 1.0):
            raise InvalidScalar(f"eps0 must lie in (0, 1), got {self.eps0}")
        if np.min(np.linalg.eigvalsh(self.Q)) <= 0:
            raise ValueError("Q must be positive definite")

    @cached_property
    def P(self) -> np.ndarray:
        """Inverse of Q, symmetrized."""
        P = np.linalg.inv(self.Q)
        return 0.5 * (P + P.T)

    @cached_property
    def sqrtQ(self) -> np.ndarray:
        lam, V = np.linalg.eigh(self.Q)
        return (V * np.sqrt(lam)) @ V.T

    def state_offset(self, s: JointState) -> np.ndarray:
        return np.concatenate([s.q - self.q_e, s.qd])

    def barrier_value(self, s: JointState) -> float:
        z = self.state_offset(s)
        return float(z @ self.P @ z) - 1.0

    def norm_q(self, v: np.ndarray) -> float:
        """Barrier norm sqrt(v^T Q^-1 v)."""
        return float(np.sqrt(max(v @ self.P @ v, 0.0)))

    def with_cert(self, cert: CertReport) -> "BarrierPair":
        return replace(self, cert=cert)


# ---------------------------------------------------------------------------
# scaled problem data

@dataclass(frozen=True)
class _ScaledData:
    n: int
    d_q: float
    d_qd: float
    s_u: float
    s_w: float
    Abar1: np.ndarray     # 2n x 2n, scaled [[0, (d_qd/d_q) I], [0, A1]]
    Bbar1u: np.ndarray    # 2n x n
    Bbar1w: np.ndarray    # 2n x n
    Gin: np.ndarray       # 2n x 3n: balanced in-factors [A | Bu | Bw] of the uncertainty channels
    out_A: np.ndarray     # n x 2n, multiplies Q in the stability X21 block
    out_u: np.ndarray     # n x n, multiplies Y
    out_w: np.ndarray     # n x n, constant w column
    c_J: float
    J1: np.ndarray        # n x n, scaled d_q * J1
    slabs: tuple          # (a_i row (1,n), abar_i)
    x_bounds: np.ndarray
    qd_hat: np.ndarray    # qd_bounds / d_qd
    u_hat: np.ndarray     # u_bounds / s_u
    dq_hat: np.ndarray    # LDI box position half-widths / d_q
    alpha: float
    eps0: float
    contain_z: tuple      # scaled zero-velocity lifts of containment samples


def _scale_data(plant: LinearizedPlant, ldi: LDIModel, cs: ConstraintSet,
                alpha: float, eps0: float, contain_q: list[np.ndarray]) -> _ScaledData:
    n = plant.q_e.shape[0]
    A1 = np.asarray(ldi.A1)  # the fitted nominal of -M^-1 C
    d_q = float(np.min(cs.x_bounds) / np.linalg.norm(ldi.J1, ord=2))
    d_qd = float(np.min(cs.qd_bounds))
    s_u = float(np.min(cs.u_bounds))
    s_w = float(cs.w_bar)
    Abar1 = np.block([
        [np.zeros((n, n)), (d_qd / d_q) * np.eye(n)],
        [np.zeros((n, n)), A1],
    ])
    S2 = np.hstack([np.zeros((n, n)), np.eye(n)])
    G = np.asarray(ldi.shape)
    c_A = float(np.sqrt(ldi.sigma_A))
    c_u = float(np.sqrt(ldi.sigma_Bu * s_u / d_qd))
    c_w = float(np.sqrt(ldi.sigma_Bw * s_w / d_qd))
    return _ScaledData(
        n=n, d_q=d_q, d_qd=d_qd, s_u=s_u, s_w=s_w,
        Abar1=Abar1,
        Bbar1u=(s_u / d_qd) * (S2.T @ ldi.B1u),
        Bbar1w=(s_w / d_qd) * (S2.T @ ldi.B1w),
        Gin=np.hstack([c_A * (S2.T @ G), c_u * (S2.T @ G), c_w * (S2.T @ G)]),
        out_A=c_A * S2,
        out_u=c_u * G,
        out_w=c_w * np.eye(n),
        c_J=float(np.sqrt(ldi.sigma_J * d_q)),
        J1=d_q * np.asarray(ldi.J1),
        slabs=tuple((np.atleast_2d(a), float(b)) for a, b in cs.slabs),
        x_bounds=np.asarray(cs.x_bounds, dtype=float),
        qd_hat=np.asarray(cs.qd_bounds, dtype=float) / d_qd,
        u_hat=np.asarray(cs.u_bounds, dtype=float) / s_u,
        dq_hat=np.asarray(ldi.box.dq_max, dtype=float) / d_q,
        alpha=float(alpha), eps0=float(eps0),
        contain_z=tuple(np.concatenate([dq / d_q, np.zeros(n)]) for dq in contain_q),
    )


def _bmat(rows):
    flat = [e for row in rows for e in row]
    if all(isinstance(e, np.ndarray) for e in flat):
        return np.block(rows)
    return cp.bmat(rows)


def _lmi_terms(d: _ScaledData, Q, Y, gammas, mu_ax, mu_x, mu_u, mu_w):
    """All LMIs of the synthesis problem as (kind, name, matrix expression).

    kind 'psd' means the matrix must be >= 0, 'nsd' means <= 0.  Works with
    cvxpy variables (for the solve) and with plain arrays (for the residual
    verification of the returned solution).
    """
    n = d.n
    S1 = np.hstack([np.eye(n), np.zeros((n, n))])
    S2 = np.hstack([np.zeros((n, n)), np.eye(n)])
    one = np.array([[1.0]])
    terms = []

    # goal containment: zero-velocity joint lifts of the edge samples in E(1)
    for k, z in enumerate(d.contain_z):
        zc = z.reshape(-1, 1)
        terms.append(("psd", f"contain[{k}]", _bmat([[one, zc.T], [zc, Q]])))

    # obstacle slabs and workspace box via the norm-bound S-procedure form
    J2 = d.c_J * np.eye(n)
    J3 = d.c_J * np.eye(n)
    for k, (a, abar) in enumerate(d.slabs):
        terms.append(("psd", f"exclude[{k}]",
                      _uncertain_row_lmi(Q, a, abar, d.J1, J2, J3, S1, gammas[k])))
    for i in range(n):
        b = np.zeros((1, n))
        b[0, i] = 1.0
        terms.append(("psd", f"xlimit[{i}]",
                      _uncertain_row_lmi(Q, b, float(d.x_bounds[i]), d.J1, J2, J3, S1, mu_ax[i])))

    # velocity, torque, and LDI-box position limits (plain Schur forms)
    for i in range(n):
        row = S2[i:i + 1, :] @ Q
        terms.append(("psd", f"qdlimit[{i}]",
                      _bmat([[Q, row.T], [row, np.array([[d.qd_hat[i] ** 2]])]])))
    for i in range(n):
        yrow = Y[i:i + 1, :]
        terms.append(("psd", f"ulimit[{i}]",
                      _bmat([[Q, yrow.T], [yrow, np.array([[d.u_hat[i] ** 2]])]])))
    for i in range(n):
        row = S1[i:i + 1, :] @ Q
        terms.append(("psd", f"boxlimit[{i}]",
                      _bmat([[Q, row.T], [row, np.array([[d.dq_hat[i] ** 2]])]])))

    # robust convergence into E(eps0) at rate alpha under ||w|| <= w_bar
    G = np.vstack([d.Gin, np.zeros((n, 3 * n))])      # 3n x 3n
    mu_diag = _bmat([
        [mu_x * np.eye(n), np.zeros((n, n)), np.zeros((n, n))],
        [np.zeros((n, n)), mu_u * np.eye(n), np.zeros((n, n))],
        [np.zeros((n, n)), np.zeros((n, n)), mu_w * np.eye(n)],
    ])
    X11_base = _bmat([
        [d.Abar1 @ Q + Q @ d.Abar1.T + d.Bbar1u @ Y + Y.T @ d.Bbar1u.T + d.alpha * Q, d.Bbar1w],
        [d.Bbar1w.T, -d.alpha * d.eps0 ** 2 * np.eye(n)],
    ])
    X11 = X11_base + G @ mu_diag @ G.T
    X21 = _bmat([
        [d.out_A @ Q, np.zeros((n, n))],
        [d.out_u @ Y, np.zeros((n, n))],
        [np.zeros((n, 2 * n)), d.out_w],
    ])
    X22 = -mu_diag
    terms.append(("nsd", "stability", _bmat([[X11, X21.T], [X21, X22]])))
    return terms


def _uncertain_row_lmi(Q, a, bound, J1, J2, J3, S1, gamma):
    """|a (J1 + J2 D J3) S1 z| <= bound on E(1) for all ||D|| <= 1."""
    n2 = S1.shape[1]
    nw = J2.shape[1]
    aJ1S1 = a @ J1 @ S1                     # 1 x 2n
    J3S1 = J3 @ S1                          # nw x 2n
    row2 = gamma * (a @ J2)                 # 1 x nw
    top = aJ1S1 @ Q
    mid = J3S1 @ Q
    return _bmat([
        [bound ** 2 * Q, np.zeros((n2, nw)), top.T, mid.T],
        [np.zeros((nw, n2)), gamma * np.eye(nw), row2.T, np.zeros((nw, nw))],
        [top, row2, np.array([[1.0]]), np.zeros((1, nw))],
        [mid, np.zeros((nw, nw)), np.zeros((nw, 1)), gamma * np.eye(nw)],
    ])


def _paper_containment_residuals(d: _ScaledData, Qv: np.ndarray) -> float:
    """Worst residual of the projection-form containment LMIs (the published form)."""
    n = d.n
    worst = 0.0
    Q11 = Qv[:n, :n]
    for z in d.contain_z:
        m = np.block([[np.array([[1.0]]), z[:n][None, :]], [z[:n][:, None], Q11]])
        worst = min(worst, float(np.min(np.linalg.eigvalsh(m))))
    return worst


def verify_residuals(d: _ScaledData, values: dict) -> float:
    """Worst signed LMI residual of a solution (negative = violation)."""
    gammas = [values[f"gamma{k}"] for k in range(len(d.slabs))]
    mu_ax = [values[f"mu_ax{i}"] for i in range(d.n)]
    terms = _lmi_terms(d, values["Q"], values["Y"], gammas, mu_ax,
                       values["mu_x"], values["mu_u"], values["mu_w"])
    worst = _paper_containment_residuals(d, values["Q"])
    for kind, _name, m in terms:
        eig = np.linalg.eigvalsh(0.5 * (m + m.T))
        worst = min(worst, float(np.min(eig)) if kind == "psd" else float(-np.max(eig)))
    return worst


def synthesize(model: RobotModel, plant: LinearizedPlant, ldi: LDIModel,
               contain: Region | None, cs: ConstraintSet, alpha: float, eps0: float,
               *, per_edge: int = 5, ik_branch: str = arm.ELBOW_DOWN,
               pair_id: str = "bp", solver: str | None = None) -> BarrierPair:
    """Solve the barrier-pair SDP at a fixed convergence rate alpha.

    `contain=None` drops the goal-containment constraints (midway pairs).
    Raises InvalidScalar, Infeasible, or SolverFailure.
    """
    if not (0.0 < eps0 < 1.0):
        raise InvalidScalar(f"eps0 must lie in (0, 1), got {eps0}")
    if alpha <= 0.0:
        raise InvalidScalar(f"alpha must be positive, got {alpha}")
    if not np.array_equal(plant.q_e, ldi.box.q_e):
        raise ValueError("plant and LDI must share the equilibrium")

    contain_q = []
    if contain is not None:
        for x in edge_samples(contain, per_edge):
            contain_q.append(arm.inverse_kinematics(model, x, branch=ik_branch) - plant.q_e)

    d = _scale_data(plant, ldi, cs, alpha, eps0, contain_q)
    n = d.n
    adapter = SdpAdapter(solver=solver)
    Q = adapter.symmetric("Q", 2 * n)
    Y = adapter.matrix("Y", n, 2 * n)
    gammas = [adapter.scalar(f"gamma{k}") for k in range(len(d.slabs))]
    mu_ax = [adapter.scalar(f"mu_ax{i}") for i in range(n)]
    mu_x = adapter.scalar("mu_x")
    mu_u = adapter.scalar("mu_u")
    mu_w = adapter.scalar("mu_w")
    adapter.lmi_psd(Q - 1e-9 * np.eye(2 * n))
    for kind, _name, m in _lmi_terms(d, Q, Y, gammas, mu_ax, mu_x, mu_u, mu_w):
        adapter.lmi_psd(m) if kind == "psd" else adapter.lmi_nsd(m)
    adapter.maximize_logdet(Q)
    sol = adapter.solve()

    worst = verify_residuals(d, sol.values)
    if worst < -RESIDUAL_TOL:
        raise SolverFailure(f"solution violates LMI residual tolerance: {worst:.3e}")

    Qhat = 0.5 * (sol.values["Q"] + sol.values["Q"].T)
    Yhat = sol.values["Y"]
    D = np.diag([d.d_q] * n + [d.d_qd] * n)
    Qfull = D @ Qhat @ D
    Khat = Yhat @ np.linalg.inv(Qhat)
    K = d.s_u * Khat @ np.linalg.inv(D)
    return BarrierPair(id=pair_id, q_e=plant.q_e, x_e=plant.x_e, Q=Qfull, K=K,
                       eps0=eps0, alpha=alpha, w_bar=cs.w_bar)


def bisect_alpha(model: RobotModel, plant: LinearizedPlant, ldi: LDIModel,
                 contain: Region | None, cs: ConstraintSet, eps0: float,
                 *, lo: float = 0.05, hi: float = 4.0, resolution: float = 0.05,
                 **kwargs) -> BarrierPair:
    """Largest feasible alpha in [lo, hi] to `resolution`, per the alpha policy."""

    def attempt(a):
        try:
            return synthesize(model, plant, ldi, contain, cs, a, eps0, **kwargs)
        except (Infeasible, SolverFailure):
            return None

    best = attempt(hi)
    if best is not None:
        return best
    best = attempt(lo)
    if best is None:
        raise Infeasible(f"barrier pair infeasible even at alpha={lo}")
    lo_f, hi_f = lo, hi
    while hi_f - lo_f > resolution:
        mid = 0.5 * (lo_f + hi_f)
        cand = attempt(mid)
        if cand is not None:
            best, lo_f = cand, mid
        else:
            hi_f = mid
    return best


# ---------------------------------------------------------------------------
# certification

def _sphere_samples(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    v = rng.standard_normal((count, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def certify(bp: BarrierPair, model: RobotModel, ldi: LDIModel,
            contain: Region | None, obstacles: list[Region], cs: ConstraintSet,
            n_samples: int, seed: int, *, per_edge: int = 25,
            ik_branch: str = arm.ELBOW_DOWN) -> CertReport:
    """Seeded sampling check of Definition-1 properties on the exact dynamics.

    (i) on the boundary of E(1): torque, velocity and workspace bounds hold and
    neither the locally linearized nor the exact end-effector position enters
    any obstacle; (ii) on the annulus eps0+0.02 <= ||z||_Q <= 1 the barrier
    decreases under the worst of 32 force directions at ||w|| = w_bar;
    (iii) the goal polygon's edge samples lie in E(1).
    """
    if n_samples < 1:
        raise EmptySampleSet("certification needs at least one sample")
    rng = np.random.default_rng(seed)
    n = model.n
    violations: list[str] = []

    # E(1) must stay inside the LDI validity box, else (ii) proves nothing
    pos_extent = np.sqrt(np.diag(bp.Q[:n, :n]))
    vel_extent = np.sqrt(np.diag(bp.Q[n:, n:]))
    for i in range(n):
        if pos_extent[i] > ldi.box.dq_max[i] + 1e-9:
            violations.append(f"box: E(1) position extent {pos_extent[i]:.4f} exceeds dq_max[{i}]")
        if vel_extent[i] > ldi.box.dqd_max[i] + 1e-9:
            violations.append(f"box: E(1) velocity extent {vel_extent[i]:.4f} exceeds dqd_max[{i}]")

    # (i) boundary of E(1)
    Z = _sphere_samples(rng, n_samples, 2 * n) @ bp.sqrtQ.T
    U = Z @ bp.K.T
    max_torque = float(np.max(np.abs(U)))
    torque_margin = float(np.min(cs.u_bounds - np.max(np.abs(U), axis=0)))
    if torque_margin < -1e-9:
        violations.append(f"torque: |K z| exceeds limit by {-torque_margin:.3e} N*m on the E(1) boundary")
    vel_margin = float(np.min(cs.qd_bounds - np.max(np.abs(Z[:, n:]), axis=0)))
    velocity_ok = vel_margin >= -1e-9
    if not velocity_ok:
        violations.append(f"velocity: joint speed exceeds bound by {-vel_margin:.3e} rad/s")

    Qj = bp.q_e + Z[:, :n]
    Xexact = arm.fk_batch(model, Qj)
    ws_margin = float(np.min(cs.x_bounds - np.max(np.abs(Xexact - bp.x_e), axis=0)))
    if ws_margin < -1e-9:
        velocity_ok = False
        violations.append(f"workspace: displacement exceeds x bound by {-ws_margin:.3e} m")

    _, _, Jb = arm.terms_batch(model, Qj, np.zeros_like(Qj))
    Xlin = bp.x_e + np.einsum("nij,nj->ni", Jb, Z[:, :n])
    exclusion_ok = True
    for obs in obstacles:
        for tag, pts in (("linearized", Xlin), ("exact", Xexact)):
            hits = int(np.count_nonzero(contains_batch(obs, pts)))
            if hits:
                exclusion_ok = False
                violations.append(f"exclusion: {hits} {tag} boundary points inside region {obs.id}")

    # (ii) barrier decrease on the annulus under the worst of 32 directions
    radii = rng.uniform(bp.eps0 + 0.02, 1.0, size=n_samples)
    Za = radii[:, None] * (_sphere_samples(rng, n_samples, 2 * n) @ bp.sqrtQ.T)
    Qa = bp.q_e + Za[:, :n]
    QDa = Za[:, n:]
    Ua = np.clip(Za @ bp.K.T, -cs.u_bounds, cs.u_bounds)
    M, C, J = arm.terms_batch(model, Qa, QDa)
    Minv = arm.inv2_batch(M)
    qdd0 = np.einsum("nij,nj->ni", Minv, Ua - np.einsum("nij,nj->ni", C, QDa))
    zdot0 = np.hstack([QDa, qdd0])
    PZ = Za @ bp.P.T
    bdot0 = 2.0 * np.einsum("ni,ni->n", PZ, zdot0)
    # force enters affinely: Bdot(w) = Bdot(0) + 2 z^T P [0; M^-1 J^T w]
    MJt = Minv @ np.transpose(J, (0, 2, 1))
    gain = 2.0 * np.einsum("ni,nij->nj", PZ[:, n:], MJt)
    theta = np.arange(32) * (2.0 * np.pi / 32.0)
    Wdirs = cs.w_bar * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    bdot_worst = bdot0 + np.max(gain @ Wdirs.T, axis=1)
    min_decrease = float(np.min(-bdot_worst))
    if min_decrease <= 0.0:
        violations.append(f"decrease: worst-case Bdot = {-min_decrease:.3e} >= 0 on the annulus")
    norms2 = np.einsum("ni,ni->n", Za, Za @ bp.P.T)
    min_rate = float(np.min(-bdot_worst - bp.alpha * (norms2 - bp.eps0 ** 2)))

    # (iii) goal containment under exact inverse kinematics
    containment_ok = True
    if contain is not None:
        for x in edge_samples(contain, per_edge):
            q = arm.inverse_kinematics(model, x, branch=ik_branch)
            val = bp.barrier_value(JointState(q, np.zeros(n)))
            if val > 1e-12:
                containment_ok = False
                violations.append(f"containment: edge sample {x} has barrier value {val:.3e}")

    return CertReport(
        samples_used=n_samples,
        max_torque_on_boundary=max_torque,
        min_decrease_margin=min_decrease,
        min_rate_margin=min_rate,
        containment_ok=containment_ok,
        exclusion_ok=exclusion_ok,
        velocity_ok=velocity_ok,
        violations=tuple(violations),
    )
