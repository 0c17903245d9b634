"""
Two-phase revised simplex for the fluid and fleet-sizing programs.

Problems are maximizations with <=, = and >= rows and per-variable bounds.
They are rewritten to standard form (A x = b, x >= 0, b >= 0), equilibrated
by row and column scaling, and solved with an explicit basis inverse that is
updated in product form and refactorized from A every few pivots. Pricing is
Dantzig's rule, switching to Bland's rule after a run of degenerate pivots so
that cycling cannot occur. The ratio test is Harris's two-pass rule with a
relative pivot threshold, so among near-ties the largest pivot wins.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..core.config import get_settings
from ..core.exceptions import LpInfeasibleError, LpUnboundedError, SolverError
from ..utils.models import LpProblem, LpSolution

logger = logging.getLogger(__name__)


class LpBuilder:
    """Accumulates rows for an LpProblem"""

    def __init__(self, n_vars: int):
        self.n_vars = n_vars
        self.objective = np.zeros(n_vars)
        self.lower = np.zeros(n_vars)
        self.upper = np.full(n_vars, np.inf)
        self._rows: List[np.ndarray] = []
        self._relations: List[str] = []
        self._rhs: List[float] = []

    def add_row(self, coefficients: np.ndarray, relation: str, rhs: float) -> None:
        if relation not in ("<=", "=", ">="):
            raise ValueError(f"unknown relation {relation}")
        self._rows.append(np.asarray(coefficients, dtype=float))
        self._relations.append(relation)
        self._rhs.append(float(rhs))

    def row(self) -> np.ndarray:
        return np.zeros(self.n_vars)

    def build(self) -> LpProblem:
        a_matrix = np.vstack(self._rows) if self._rows else np.zeros((0, self.n_vars))
        return LpProblem(
            n_vars=self.n_vars,
            objective=self.objective,
            a_matrix=a_matrix,
            relations=list(self._relations),
            rhs=np.asarray(self._rhs, dtype=float),
            lower=self.lower,
            upper=self.upper,
        )


def equilibrate(a_matrix: np.ndarray, rhs: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Scale rows, then columns, so that every nonzero row and column peaks at 1

    Returns:
        (scaled matrix, scaled rhs, column scale); the original variable is
        column_scale * scaled variable
    """
    magnitude = np.abs(a_matrix)
    row_peak = magnitude.max(axis=1) if a_matrix.shape[1] else np.zeros(a_matrix.shape[0])
    row_scale = np.where(row_peak > 0, 1.0 / np.where(row_peak > 0, row_peak, 1.0), 1.0)
    scaled = a_matrix * row_scale[:, None]

    col_peak = np.abs(scaled).max(axis=0) if scaled.shape[0] else np.zeros(scaled.shape[1])
    col_scale = np.where(col_peak > 0, 1.0 / np.where(col_peak > 0, col_peak, 1.0), 1.0)
    return scaled * col_scale[None, :], rhs * row_scale, col_scale


class SimplexSolver:
    """Single-use solver for one LpProblem"""

    def __init__(self, problem: LpProblem):
        self.problem = problem
        self.settings = get_settings()
        self.pivot_tol = self.settings.lp_pivot_tol
        self.relative_pivot_tol = self.settings.lp_relative_pivot_tol
        self.feas_tol = self.settings.lp_feasibility_tol
        self.harris_tol = self.settings.lp_harris_tol
        self.opt_tol = self.settings.lp_optimality_tol
        self.iterations = 0
        self._used = False

        self._a = np.zeros((0, 0))
        self._b = np.zeros(0)
        self._basis: List[int] = []
        self._b_inv = np.zeros((0, 0))
        self._since_refactor = 0

    def solve(self) -> LpSolution:
        if self._used:
            raise SolverError("SimplexSolver instances are single-use")
        self._used = True

        transform, offset = self._variable_transform()
        a_std, b_std, relations = self._standard_rows(transform, offset)
        a_scaled, b_scaled, col_scale = equilibrate(a_std, b_std)
        n_structural = a_scaled.shape[1]

        artificial = self._initial_basis(a_scaled, b_scaled, relations)
        n_cols = self._a.shape[1]
        is_artificial = np.zeros(n_cols, dtype=bool)
        is_artificial[artificial] = True

        # Phase 1: minimize the artificial mass
        if artificial:
            phase1_cost = is_artificial.astype(float)
            status = self._iterate(phase1_cost, allowed=np.ones(n_cols, dtype=bool))
            if status != "optimal":
                raise SolverError("phase 1 ended without an optimum")
            x_basic = self._basic_solution()
            infeasibility = float(phase1_cost[self._basis] @ x_basic)
            scale = max(1.0, float(np.max(self._b)) if self._b.size else 1.0)
            if infeasibility > self.feas_tol * scale:
                logger.debug(f"Phase 1 residual {infeasibility:.3e}, problem infeasible")
                return LpSolution(status="infeasible", iterations=self.iterations)
            self._drive_out_artificials(is_artificial)

        # Phase 2
        cost = np.zeros(n_cols)
        cost[:n_structural] = -(self.problem.objective @ transform) * col_scale
        status = self._iterate(cost, allowed=~is_artificial)
        if status == "unbounded":
            return LpSolution(status="unbounded", iterations=self.iterations)

        z = np.zeros(n_cols)
        z[self._basis] = self._basic_solution()
        z = np.maximum(z, 0.0)
        x = offset + transform @ (z[:n_structural] * col_scale)
        x = np.clip(x, self.problem.lower, self.problem.upper)
        objective = float(self.problem.objective @ x)
        residual = self._max_residual(x)
        if residual > self.settings.lp_residual_tol:
            raise SolverError(
                f"simplex solution violates its constraints by {residual:.3e} "
                f"(tolerance {self.settings.lp_residual_tol:.1e})"
            )
        logger.debug(f"Simplex finished in {self.iterations} pivots, objective {objective:.10g}")
        return LpSolution(status="optimal", x=x, objective=objective,
                          iterations=self.iterations, max_residual=residual)

    def _variable_transform(self) -> Tuple[np.ndarray, np.ndarray]:
        """Map nonnegative standard variables z to x = offset + T z, plus bound rows"""
        n = self.problem.n_vars
        lower, upper = self.problem.lower, self.problem.upper
        columns: List[np.ndarray] = []
        offset = np.zeros(n)
        self._bound_rows: List[Tuple[int, float]] = []

        for j in range(n):
            unit = np.zeros(n)
            unit[j] = 1.0
            if np.isfinite(lower[j]):
                offset[j] = lower[j]
                columns.append(unit)
                if np.isfinite(upper[j]):
                    self._bound_rows.append((len(columns) - 1, upper[j] - lower[j]))
            elif np.isfinite(upper[j]):
                offset[j] = upper[j]
                columns.append(-unit)
            else:
                columns.append(unit)
                columns.append(-unit)
        return np.column_stack(columns), offset

    def _standard_rows(self, transform: np.ndarray, offset: np.ndarray):
        a_matrix = self.problem.a_matrix.reshape(self.problem.n_rows, self.problem.n_vars)
        a_std = a_matrix @ transform
        b_std = self.problem.rhs - a_matrix @ offset
        relations = list(self.problem.relations)

        if self._bound_rows:
            extra = np.zeros((len(self._bound_rows), transform.shape[1]))
            extra_rhs = np.zeros(len(self._bound_rows))
            for k, (column, width) in enumerate(self._bound_rows):
                extra[k, column] = 1.0
                extra_rhs[k] = width
            a_std = np.vstack([a_std, extra])
            b_std = np.concatenate([b_std, extra_rhs])
            relations += ["<="] * len(self._bound_rows)

        flip = b_std < 0
        a_std[flip] *= -1.0
        b_std[flip] *= -1.0
        swap = {"<=": ">=", ">=": "<=", "=": "="}
        relations = [swap[rel] if flip[k] else rel for k, rel in enumerate(relations)]
        return a_std, b_std, relations

    def _initial_basis(self, a_std: np.ndarray, b_std: np.ndarray, relations: Sequence[str]) -> List[int]:
        """Append slack and artificial columns; the starting basis is the identity"""
        m, n_structural = a_std.shape
        n_slack = sum(1 for rel in relations if rel != "=")
        n_artificial = sum(1 for rel in relations if rel != "<=")

        a_full = np.zeros((m, n_structural + n_slack + n_artificial))
        a_full[:, :n_structural] = a_std
        basis = [0] * m
        artificial: List[int] = []

        slack_col = n_structural
        art_col = n_structural + n_slack
        for k, rel in enumerate(relations):
            if rel == "<=":
                a_full[k, slack_col] = 1.0
                basis[k] = slack_col
                slack_col += 1
            else:
                if rel == ">=":
                    a_full[k, slack_col] = -1.0
                    slack_col += 1
                a_full[k, art_col] = 1.0
                basis[k] = art_col
                artificial.append(art_col)
                art_col += 1

        self._a = a_full
        self._b = np.asarray(b_std, dtype=float)
        self._basis = basis
        self._b_inv = np.eye(m)
        self._since_refactor = 0
        return artificial

    def _basic_solution(self) -> np.ndarray:
        """B^-1 b with one step of iterative refinement"""
        x_basic = self._b_inv @ self._b
        if self._basis:
            x_basic += self._b_inv @ (self._b - self._a[:, self._basis] @ x_basic)
        return x_basic

    def _refactor(self) -> None:
        if not self._basis:
            self._b_inv = np.zeros((0, 0))
        else:
            try:
                self._b_inv = np.linalg.inv(self._a[:, self._basis])
            except np.linalg.LinAlgError as e:
                raise SolverError(f"simplex basis became singular after {self.iterations} pivots") from e
        self._since_refactor = 0

    def _iterate(self, cost: np.ndarray, allowed: np.ndarray) -> str:
        max_iterations = self.settings.lp_max_iterations
        degenerate_streak = 0
        use_bland = False
        self._refactor()

        while True:
            if self.iterations >= max_iterations:
                raise SolverError(f"simplex hit the iteration cap of {max_iterations}")

            x_basic = self._b_inv @ self._b
            duals = cost[self._basis] @ self._b_inv
            reduced = cost - duals @ self._a
            reduced[self._basis] = 0.0
            candidates = np.flatnonzero(allowed & (reduced < -self.opt_tol))

            if candidates.size == 0:
                # Optimality is only accepted on a fresh factorization
                if self._since_refactor == 0:
                    return "optimal"
                self._refactor()
                continue

            if use_bland:
                entering = int(candidates[0])
            else:
                entering = int(candidates[np.argmin(reduced[candidates])])

            alpha = self._b_inv @ self._a[:, entering]
            leaving, step = self._ratio_test(alpha, x_basic, use_bland)
            if leaving is None:
                if self._since_refactor == 0:
                    return "unbounded"
                self._refactor()
                continue

            if step <= self.feas_tol:
                degenerate_streak += 1
                if degenerate_streak >= self.settings.lp_degenerate_streak:
                    use_bland = True
            else:
                degenerate_streak = 0
                use_bland = False

            self._pivot(leaving, entering, alpha)

    def _ratio_test(self, alpha: np.ndarray, x_basic: np.ndarray, use_bland: bool) -> Tuple[Optional[int], float]:
        if alpha.size == 0:
            return None, 0.0
        floor = max(self.pivot_tol, self.relative_pivot_tol * float(np.max(np.abs(alpha))))
        rows = np.flatnonzero(alpha > floor)
        if rows.size == 0:
            rows = np.flatnonzero(alpha > self.pivot_tol)
            if rows.size == 0:
                return None, 0.0

        level = np.maximum(x_basic[rows], 0.0)
        ratios = level / alpha[rows]
        if use_bland:
            best = ratios.min()
            tied = rows[ratios <= best + self.feas_tol]
            leaving = int(min(tied, key=lambda k: self._basis[k]))
            return leaving, float(best)

        # Harris: the loosest step that keeps every basic above -harris_tol, then the largest pivot
        bound = float(((level + self.harris_tol) / alpha[rows]).min())
        eligible = rows[ratios <= bound]
        leaving = int(eligible[np.argmax(alpha[eligible])])
        return leaving, float(max(x_basic[leaving], 0.0) / alpha[leaving])

    def _pivot(self, row: int, column: int, alpha: np.ndarray) -> None:
        pivot = alpha[row]
        pivot_row = self._b_inv[row] / pivot
        self._b_inv -= np.outer(alpha, pivot_row)
        self._b_inv[row] = pivot_row
        self._basis[row] = column
        self.iterations += 1
        self._since_refactor += 1
        if self._since_refactor >= self.settings.lp_refactor_interval:
            self._refactor()

    def _drive_out_artificials(self, is_artificial: np.ndarray) -> None:
        """
        Pivot zero-level artificials out of the basis

        An artificial whose row of B^-1 A vanishes on every other column marks
        a redundant constraint. It stays basic at zero; no entering column can
        move it, and phase 2 never lets it enter again.
        """
        self._refactor()
        threshold = max(self.pivot_tol, self.relative_pivot_tol)
        for row in range(len(self._basis)):
            if not is_artificial[self._basis[row]]:
                continue
            tableau_row = self._b_inv[row] @ self._a
            tableau_row[is_artificial] = 0.0
            column = int(np.argmax(np.abs(tableau_row)))
            if abs(tableau_row[column]) <= threshold:
                logger.debug(f"Constraint behind basis row {row} is redundant")
                continue
            self._pivot(row, column, self._b_inv @ self._a[:, column])
        self._refactor()

    def _max_residual(self, x: np.ndarray) -> float:
        problem = self.problem
        if problem.n_rows == 0:
            return 0.0
        lhs = problem.a_matrix @ x
        worst = 0.0
        for k, rel in enumerate(problem.relations):
            gap = lhs[k] - problem.rhs[k]
            if rel == "<=":
                violation = max(gap, 0.0)
            elif rel == ">=":
                violation = max(-gap, 0.0)
            else:
                violation = abs(gap)
            worst = max(worst, violation / (1.0 + abs(problem.rhs[k])))
        return worst


def solve(problem: LpProblem) -> LpSolution:
    """
    Solve a maximization LP

    Args:
        problem: Rows, relations and variable bounds

    Returns:
        LpSolution with status optimal, infeasible or unbounded

    Raises:
        SolverError: when the returned point would violate a row by more than
            the configured residual tolerance
    """
    return SimplexSolver(problem).solve()


def require_optimal(solution: LpSolution, what: str) -> LpSolution:
    """Turn a non-optimal status into the matching exception"""
    if solution.status == "infeasible":
        raise LpInfeasibleError(f"{what} is infeasible")
    if solution.status == "unbounded":
        raise LpUnboundedError(f"{what} is unbounded")
    return solution
