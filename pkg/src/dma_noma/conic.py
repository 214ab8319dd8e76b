"""Thin conic-programming layer shared by all optimization modules.

Every convex subproblem in the package (worst-case CSI search, digital SDR
step, DMA amplitude step, position-error bound search) is assembled as a
``ConicProgram`` and solved through the single :meth:`ConicProgram.solve`
contract, so the math modules never talk to a solver backend directly.
Complex data is lowered to a real embedding by the backend before solving.
"""

import warnings
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .errors import OptimizationFailureError

_OPTIMAL = "optimal"
_INFEASIBLE = "infeasible"
_MAX_ITER = "max_iter"


@dataclass
class SolveResult:
    status: str
    objective: float | None
    values: dict = field(default_factory=dict)


class ConicProgram:
    """A linear/SOC/SDP program with named variables and one objective.

    The program may be re-solved after updating ``cp.Parameter`` objects,
    which is how the SCA loops avoid re-canonicalizing each iteration.
    """

    def __init__(self, solver_tol: float = 1e-7, max_iter: int = 20000):
        self.solver_tol = solver_tol
        self.max_iter = max_iter
        self._vars: dict[str, cp.Variable] = {}
        self._constraints: list = []
        self._objective = None
        self._problem = None

    def variable(self, name, shape=(), **kwargs) -> cp.Variable:
        if name in self._vars:
            raise ValueError(f"duplicate variable name {name!r}")
        var = cp.Variable(shape, name=name, **kwargs)
        self._vars[name] = var
        return var

    def add(self, *constraints) -> None:
        self._problem = None
        for c in constraints:
            if isinstance(c, (list, tuple)):
                self._constraints.extend(c)
            else:
                self._constraints.append(c)

    def maximize(self, expr) -> None:
        self._objective = cp.Maximize(expr)
        self._problem = None

    def minimize(self, expr) -> None:
        self._objective = cp.Minimize(expr)
        self._problem = None

    def solve(self) -> SolveResult:
        if self._objective is None:
            raise ValueError("objective not set")
        if self._problem is None:
            self._problem = cp.Problem(self._objective, self._constraints)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                self._problem.solve(
                    solver=cp.CLARABEL,
                    tol_feas=self.solver_tol,
                    tol_gap_rel=1e-9,
                    max_iter=self.max_iter,
                )
        except cp.error.SolverError:
            # Clarabel occasionally rejects marginal problems; SCS is the
            # fallback with matching accuracy targets.
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", UserWarning)
                    self._problem.solve(solver=cp.SCS, eps=self.solver_tol,
                                        max_iters=self.max_iter)
            except cp.error.SolverError as exc:
                raise OptimizationFailureError(f"all solver backends failed: {exc}")

        status = self._problem.status
        if status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            values = {name: _value_of(var) for name, var in self._vars.items()}
            return SolveResult(_OPTIMAL, float(self._problem.value), values)
        if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE, cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
            return SolveResult(_INFEASIBLE, None, {})
        return SolveResult(_MAX_ITER, None, {name: _value_of(v) for name, v in self._vars.items()})


def _value_of(var):
    val = var.value
    if val is None:
        return None
    return np.asarray(val) if np.ndim(val) else float(np.real_if_close(val))
