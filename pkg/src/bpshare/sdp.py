"""Thin semidefinite-program adapter over cvxpy.

Exposes exactly what barrier-pair synthesis needs: symmetric matrix blocks,
positive scalar multipliers, affine LMI constraints, and a logdet (or trace)
objective.  Solver choice, tolerances and status mapping live here so the
synthesis code never touches a solver API directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import cvxpy as cp
import numpy as np

from .errors import Infeasible, SolverFailure

SCALAR_FLOOR = 1e-9  # lower bound for free multiplier variables

_PREFERRED = ("CLARABEL", "SCS")


def _pick_solver() -> str:
    installed = cp.installed_solvers()
    for s in _PREFERRED:
        if s in installed:
            return s
    raise SolverFailure(f"no usable SDP solver among {_PREFERRED}; installed: {installed}")


@dataclass
class SdpSolution:
    status: str
    objective: float
    values: dict


class SdpAdapter:
    """One synthesis problem instance: declare variables, add LMIs, solve."""

    def __init__(self, solver: str | None = None, feas_tol: float = 1e-8, gap_tol: float = 1e-8):
        self.solver = solver or _pick_solver()
        self.feas_tol = feas_tol
        self.gap_tol = gap_tol
        self._vars: dict[str, cp.Variable] = {}
        self._constraints: list = []
        self._objective = None

    def symmetric(self, name: str, size: int) -> cp.Variable:
        v = cp.Variable((size, size), symmetric=True, name=name)
        self._vars[name] = v
        return v

    def matrix(self, name: str, rows: int, cols: int) -> cp.Variable:
        v = cp.Variable((rows, cols), name=name)
        self._vars[name] = v
        return v

    def scalar(self, name: str) -> cp.Variable:
        v = cp.Variable(name=name)
        self._vars[name] = v
        self._constraints.append(v >= SCALAR_FLOOR)
        return v

    def lmi_psd(self, expr) -> None:
        self._constraints.append(expr >> 0)

    def lmi_nsd(self, expr) -> None:
        self._constraints.append(expr << 0)

    def maximize_logdet(self, X) -> None:
        self._objective = cp.Maximize(cp.log_det(X))

    def maximize_trace(self, X) -> None:
        self._objective = cp.Maximize(cp.trace(X))

    def solve(self) -> SdpSolution:
        """Solve; raises Infeasible on proven infeasibility, SolverFailure otherwise.

        logdet objectives need exponential-cone support; if the chosen solver
        rejects the problem we retry with a trace surrogate (same constraints).
        """
        problem = cp.Problem(self._objective, self._constraints)
        try:
            problem.solve(solver=self.solver, **self._solver_opts())
        except cp.error.SolverError as exc:
            if isinstance(self._objective, cp.Maximize) and self._objective.expr.curvature != "AFFINE":
                var = self._objective.expr.args[0]
                problem = cp.Problem(cp.Maximize(cp.trace(var)), self._constraints)
                try:
                    problem.solve(solver=self.solver, **self._solver_opts())
                except cp.error.SolverError as exc2:
                    raise SolverFailure(str(exc2)) from exc2
            else:
                raise SolverFailure(str(exc)) from exc

        if problem.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            raise Infeasible(f"solver reports {problem.status}")
        if problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            raise SolverFailure(f"solver status {problem.status}")
        values = {}
        for name, v in self._vars.items():
            if v.value is None:
                raise SolverFailure(f"solver returned no value for {name}")
            values[name] = np.array(v.value, dtype=float) if v.ndim else float(v.value)
        return SdpSolution(status=problem.status, objective=float(problem.value), values=values)

    def _solver_opts(self) -> dict:
        if self.solver == "CLARABEL":
            return {
                "tol_feas": self.feas_tol,
                "tol_gap_rel": self.gap_tol,
                "tol_gap_abs": self.gap_tol,
            }
        if self.solver == "SCS":
            return {"eps": self.feas_tol, "max_iters": 200_000}
        return {}
