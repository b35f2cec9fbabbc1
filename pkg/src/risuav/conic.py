"""Cone-program wrapper with two independent backends.

Problems are assembled as named variables plus convex constraints (linear,
second-order, exponential, power, PSD) and solved by an in-process
interior-point backend (Clarabel) or a first-order operator-splitting backend
(SCS). The two implement unrelated algorithms, which makes cross-backend
agreement a meaningful correctness check rather than a tautology.

cvxpy supplies the atom library and canonicalization; this module owns
problem identity, solve policy, status mapping, residual reporting, and the
debug dump format.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np


class ProgramError(Exception):
    pass


@dataclass(frozen=True)
class Tolerances:
    feas: float = 1e-8
    gap: float = 1e-8
    # optional hard iteration budget; callers that only need a warm seed
    # (and re-verify every number exactly) set this to bound wall time
    max_iters: int | None = None


@dataclass(frozen=True)
class ConicSolution:
    status: str              # optimal | optimal_inaccurate | infeasible | unbounded | numeric-failure
    objective: float | None
    values: dict             # variable name -> numpy value
    residuals: dict          # primal violation, reported gap

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "optimal_inaccurate")


class ConicProgram:
    """Named-variable convex program; build once, solve with any backend."""

    def __init__(self, name: str = "prog"):
        self.name = name
        self._vars: dict[str, cp.Variable] = {}
        self._constraints: list = []
        self._objective = None
        self._sense = "min"

    def variable(self, name: str, shape=(), **domain) -> cp.Variable:
        """Declare a variable once; domain kwargs follow cvxpy attributes.

        Supported: nonneg=True, complex=True, hermitian=True, PSD=True.
        """
        if name in self._vars:
            raise ProgramError(f"variable {name!r} declared twice")
        var = cp.Variable(shape, name=name, **domain)
        self._vars[name] = var
        return var

    def add(self, *constraints) -> None:
        for c in constraints:
            self._constraints.append(c)

    def minimize(self, expr) -> None:
        self._objective, self._sense = expr, "min"

    def maximize(self, expr) -> None:
        self._objective, self._sense = expr, "max"

    @property
    def variables(self) -> dict:
        return dict(self._vars)

    def max_psd_dim(self) -> int:
        """Largest semidefinite block after real embedding, 0 if none."""
        dim = 0
        for v in self._vars.values():
            if v.attributes.get("hermitian") or v.attributes.get("PSD"):
                n = v.shape[0]
                if v.attributes.get("hermitian"):
                    n *= 2
                dim = max(dim, n)
        return dim

    def build(self) -> cp.Problem:
        if self._objective is None:
            raise ProgramError("objective not set")
        obj = cp.Minimize(self._objective) if self._sense == "min" else cp.Maximize(self._objective)
        return cp.Problem(obj, list(self._constraints))

    def dump(self, path: str) -> None:
        """Debug listing: variable table plus constraint rows."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"program {self.name} sense={self._sense}\n")
            fh.write("variables:\n")
            for name, v in self._vars.items():
                attrs = ",".join(k for k, val in v.attributes.items() if val)
                fh.write(f"  {name} shape={v.shape} attrs=[{attrs}]\n")
            fh.write(f"objective: {self._objective}\n")
            fh.write("constraints:\n")
            for i, c in enumerate(self._constraints):
                fh.write(f"  [{i}] {c}\n")


_CLARABEL_CUTOFF = 40  # embedded PSD size above which the ADMM backend is faster


def pick_backend(prog: ConicProgram, backend: str = "auto") -> str:
    if backend in ("clarabel", "scs"):
        return backend
    if backend != "auto":
        raise ProgramError(f"unknown backend {backend!r}")
    return "scs" if prog.max_psd_dim() > _CLARABEL_CUTOFF else "clarabel"


def solve(prog: ConicProgram, tol: Tolerances = Tolerances(), backend: str = "auto") -> ConicSolution:
    """Solve and report honestly; solver failures become statuses, not crashes."""
    problem = prog.build()
    chosen = pick_backend(prog, backend)
    try:
        # inaccurate solves are reported through our own status field
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            warnings.simplefilter("ignore", RuntimeWarning)
            if chosen == "clarabel":
                kwargs = {} if tol.max_iters is None else {"max_iter": tol.max_iters}
                problem.solve(
                    solver=cp.CLARABEL,
                    tol_feas=tol.feas,
                    tol_gap_abs=tol.gap,
                    tol_gap_rel=tol.gap,
                    **kwargs,
                )
            else:
                problem.solve(
                    solver=cp.SCS,
                    eps_abs=tol.feas,
                    eps_rel=tol.gap,
                    max_iters=200_000 if tol.max_iters is None else tol.max_iters,
                )
    except (cp.error.SolverError, ValueError, ArithmeticError):
        return ConicSolution("numeric-failure", None, {}, {})

    status_map = {
        cp.OPTIMAL: "optimal",
        cp.OPTIMAL_INACCURATE: "optimal_inaccurate",
        cp.INFEASIBLE: "infeasible",
        cp.INFEASIBLE_INACCURATE: "infeasible",
        cp.UNBOUNDED: "unbounded",
        cp.UNBOUNDED_INACCURATE: "unbounded",
    }
    status = status_map.get(problem.status, "numeric-failure")
    if not status.startswith("optimal"):
        return ConicSolution(status, None, {}, {})

    values = {name: np.array(v.value) for name, v in prog.variables.items() if v.value is not None}
    primal = 0.0
    with warnings.catch_warnings():
        # evaluating a negative power or a log at a point the splitting
        # backend left slightly outside the domain warns; the resulting
        # violation is real and already downgrades the status
        warnings.simplefilter("ignore", RuntimeWarning)
        for c in problem.constraints:
            viol = c.violation()
            primal = max(primal, float(np.max(viol)) if np.size(viol) else 0.0)
        objective_value = float(problem.value)
    gap = np.nan
    stats = problem.solver_stats
    if stats is not None and stats.extra_stats is not None:
        gap = getattr(stats.extra_stats, "gap", np.nan) if not isinstance(stats.extra_stats, dict) else stats.extra_stats.get("gap", np.nan)
    if status == "optimal" and primal > 10 * tol.feas:
        status = "optimal_inaccurate"  # solver claimed more than it delivered
    return ConicSolution(
        status=status,
        objective=objective_value,
        values=values,
        residuals={"primal": primal, "gap": gap},
    )


def complex_psd_embed(H: np.ndarray) -> np.ndarray:
    """Real symmetric embedding [[Re, -Im], [Im, Re]] of a Hermitian matrix.

    Eigenvalues of the embedding are those of H, each doubled; PSD-ness is
    preserved both ways on the Hermitian subspace.
    """
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ProgramError("complex_psd_embed needs a square matrix")
    re, im = H.real, H.imag
    return np.block([[re, -im], [im, re]])


def complex_psd_extract(M: np.ndarray) -> np.ndarray:
    """Inverse of complex_psd_embed on its image."""
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] % 2:
        raise ProgramError("embedded matrix must be square with even size")
    n = M.shape[0] // 2
    return M[:n, :n] + 1j * M[n:, :n]
