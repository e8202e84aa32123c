"""Generic multi-block splitting iteration with Bregman proximal terms.

The engine minimizes

    sum_i f_i(x_i) + H(y) + P(x) - G(x)   s.t.   sum_i A_i x_i + B y = b

over block variables x_1..x_m and y, where the f_i may be nonsmooth and
nonconvex, H and P are smooth, and G is weakly convex.  Each sweep
linearizes P and G at the current point, updates the x blocks in
Gauss-Seidel order by exact subproblem oracles supplied with the problem,
updates y, and then takes a multiplier ascent step:

    x_{i,n+1} = argmin f_i(x_i) + <grad_i P(x_n) - g_{i,n}, x_i>
                + <z_n, A_i x_i> + (rho/2)||A u_i(x_i) + B y_n - b||^2
                + mu_n D_phi_i(x_i, x_{i,n})
    y_{n+1}   = argmin H(y) + <z_n, B y>
                + (rho/2)||A x_{n+1} + B y - b||^2 + nu_n D_psi(y, y_n)
    z_{n+1}   = z_n + rho (A x_{n+1} + B y_{n+1} - b)

with g_n a subgradient of G at x_n and u_i(x_i) the Gauss-Seidel splice of
fresh earlier blocks, x_i, and stale later blocks.

Validity of (mu, nu, rho) is gated by ``validate_parameters``; a valid run
drives the merit function

    merit_n = L_rho(x_n, y_n, z_n) + c ||y_n - y_{n-1}||^2,
    c = (l_H + 2 nu l_psi) nu l_psi / (lambda rho)

downhill by at least delta_x ||x_{n+1}-x_n||^2 + delta_y ||y_{n+1}-y_n||^2
per sweep, which the engine monitors at runtime.
"""

import csv
import math
import time
import warnings
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .spaces import BregmanGenerator, bregman_distance, scaled_squared_norm, stacked_norm

STOP_SHIFTED = "shifted"  # ||delta|| / (||iterate|| + 1) <= tol
STOP_RELATIVE = "relative"  # ||delta|| / ||iterate|| < tol

STATUS_CONVERGED = "converged"
STATUS_MAX_ITERATIONS = "max_iterations"
STATUS_ORACLE_FAILURE = "oracle_failure"


class ParameterError(ValueError):
    """A solver parameter violates its admissible range."""


class BlockOracleError(RuntimeError):
    """A block subproblem oracle failed; carries the offending block."""

    def __init__(self, block: str, cause: Exception):
        super().__init__(f"{block} oracle failed: {cause}")
        self.block = block
        self.cause = cause


@dataclass(frozen=True)
class XBlockContext:
    """Everything an x-block oracle needs for one exact subproblem solve.

    ``partial_residual`` is sum_{k<i} A_k x_{k,n+1} + sum_{k>i} A_k x_{k,n}
    + B y_n - b; it excludes exactly block i's own contribution, so the
    subproblem's coupling term is (rho/2)||A_i x_i + partial_residual||^2.
    ``linear_term`` is grad_i P(x_n) - g_{i,n}.
    """

    block_index: int
    current_iterate: np.ndarray
    linear_term: np.ndarray
    multiplier: np.ndarray
    partial_residual: np.ndarray
    rho: float
    mu: float
    bregman: BregmanGenerator


@dataclass(frozen=True)
class YBlockContext:
    """Inputs of the y subproblem; ``x_residual`` is A x_{n+1} - b."""

    current_iterate: np.ndarray
    multiplier: np.ndarray
    x_residual: np.ndarray
    rho: float
    nu: float
    bregman: BregmanGenerator | None


class BlockProblem(ABC):
    """A problem instance: block spaces, operators, and subproblem oracles.

    Subclasses must set ``block_shapes`` (one shape per x block), ``y_shape``
    and ``rhs``, implement the linear operators with their adjoints, and
    supply exact argmin oracles for the block subproblems.  The smooth /
    coupling pieces H, P, G default to zero so simple problems only override
    what they use.
    """

    block_shapes: list[tuple]
    y_shape: tuple
    rhs: np.ndarray

    @property
    def num_blocks(self) -> int:
        return len(self.block_shapes)

    @abstractmethod
    def apply_A(self, i: int, x: np.ndarray) -> np.ndarray:
        """A_i x, living in the constraint space."""

    @abstractmethod
    def apply_A_transpose(self, i: int, v: np.ndarray) -> np.ndarray:
        """A_i^T v, living in block space i."""

    @abstractmethod
    def apply_B(self, y: np.ndarray) -> np.ndarray:
        """B y, living in the constraint space."""

    @abstractmethod
    def apply_B_transpose(self, v: np.ndarray) -> np.ndarray:
        """B^T v, living in the y space."""

    @abstractmethod
    def solve_x_block(self, i: int, ctx: XBlockContext) -> np.ndarray:
        """Exact minimizer of the block-i subproblem described by ``ctx``."""

    @abstractmethod
    def solve_y_block(self, ctx: YBlockContext) -> np.ndarray:
        """Exact minimizer of the y subproblem described by ``ctx``."""

    def eval_f(self, i: int, x: np.ndarray) -> float:
        return 0.0

    def eval_H(self, y: np.ndarray) -> float:
        return 0.0

    def grad_H(self, y: np.ndarray) -> np.ndarray:
        return np.zeros_like(y)

    def eval_P(self, x: list[np.ndarray]) -> float:
        return 0.0

    def grad_P(self, x: list[np.ndarray]) -> list[np.ndarray]:
        return [np.zeros_like(xi) for xi in x]

    def eval_G(self, x: list[np.ndarray]) -> float:
        return 0.0

    def subgrad_G(self, x: list[np.ndarray]) -> list[np.ndarray]:
        return [np.zeros_like(xi) for xi in x]


@dataclass(frozen=True)
class SolverParams:
    """Penalty, schedules, Bregman generators, and the constants gating them.

    ``mu`` is the infimum of the mu schedule and ``nu`` the supremum of the
    nu schedule; when no schedule is given they are used verbatim at every
    sweep.  ``strong_convexity`` is the modulus alpha shared by the x
    generators; ``lambda_min_BtB`` is the smallest eigenvalue of B^T B and
    must be positive (full column rank of B).
    """

    rho: float
    mu: float = 1.0
    nu: float = 0.0
    lipschitz_H: float = 0.0
    lipschitz_P: float = 0.0
    weak_convexity_G: float = 0.0
    strong_convexity: float = 1.0
    lipschitz_psi: float = 0.0
    lambda_min_BtB: float = 1.0
    max_iterations: int = 4000
    stop_tolerance: float = 1e-6
    stop_rule: str = STOP_SHIFTED
    history_window: int | None = None
    x_bregman: BregmanGenerator | list[BregmanGenerator] | None = None
    y_bregman: BregmanGenerator | None = None
    mu_schedule: Callable[[int], float] | None = None
    nu_schedule: Callable[[int], float] | None = None

    def x_generator(self, i: int) -> BregmanGenerator:
        if self.x_bregman is None:
            return scaled_squared_norm(self.strong_convexity)
        if isinstance(self.x_bregman, BregmanGenerator):
            return self.x_bregman
        return self.x_bregman[i]

    def mu_at(self, n: int) -> float:
        return self.mu if self.mu_schedule is None else self.mu_schedule(n)

    def nu_at(self, n: int) -> float:
        return self.nu if self.nu_schedule is None else self.nu_schedule(n)

    @property
    def merit_coefficient(self) -> float:
        """c = (l_H + 2 nu l_psi) nu l_psi / (lambda rho)."""
        t = self.lipschitz_H + 2.0 * self.nu * self.lipschitz_psi
        return t * self.nu * self.lipschitz_psi / (self.lambda_min_BtB * self.rho)

    @property
    def delta_x(self) -> float:
        """Guaranteed x descent weight (mu*alpha - l_P - beta)/2."""
        return (self.mu * self.strong_convexity - self.lipschitz_P - self.weak_convexity_G) / 2.0

    @property
    def delta_y(self) -> float:
        """Guaranteed y descent weight lambda*rho/2 - (l_H+2 nu l_psi)^2/(lambda*rho) - l_H/2."""
        lam_rho = self.lambda_min_BtB * self.rho
        t = self.lipschitz_H + 2.0 * self.nu * self.lipschitz_psi
        return lam_rho / 2.0 - t * t / lam_rho - self.lipschitz_H / 2.0


def mu_lower_bound(params: SolverParams) -> float:
    """Strict lower bound (l_P + beta) / alpha on the mu schedule."""
    return (params.lipschitz_P + params.weak_convexity_G) / params.strong_convexity


def rho_lower_bound(params: SolverParams) -> float:
    """Strict lower bound (l_H + sqrt(l_H^2 + 8(l_H + 2 nu l_psi)^2)) / (2 lambda)."""
    l_h = params.lipschitz_H
    t = l_h + 2.0 * params.nu * params.lipschitz_psi
    return (l_h + math.sqrt(l_h * l_h + 8.0 * t * t)) / (2.0 * params.lambda_min_BtB)


def validate_parameters(params: SolverParams) -> tuple[float, float]:
    """Check the admissibility gates; return (mu bound, rho bound) on success.

    Both bounds are strict: a schedule infimum mu or penalty rho sitting
    exactly at its bound is rejected.
    """
    if params.strong_convexity <= 0:
        raise ParameterError("strong convexity modulus alpha must be positive")
    if params.lambda_min_BtB <= 0:
        raise ParameterError(
            "B lacks full column rank: lambda_min(B^T B) must be positive, "
            f"got {params.lambda_min_BtB}"
        )
    if params.nu < 0:
        raise ParameterError("nu must be nonnegative")
    mu_bound = mu_lower_bound(params)
    rho_bound = rho_lower_bound(params)
    if not params.mu > mu_bound:
        raise ParameterError(
            f"mu = {params.mu} must strictly exceed (l_P + beta)/alpha = {mu_bound}"
        )
    if not params.rho > rho_bound:
        raise ParameterError(
            f"rho = {params.rho} must strictly exceed "
            f"(l_H + sqrt(l_H^2 + 8(l_H + 2*nu*l_psi)^2))/(2*lambda) = {rho_bound}"
        )
    return mu_bound, rho_bound


def smallest_eigenvalue_btb(B: np.ndarray) -> float:
    """Smallest eigenvalue of B^T B via a symmetric eigendecomposition."""
    B = np.asarray(B, dtype=float)
    gram = B.T @ B
    return float(np.linalg.eigvalsh(gram)[0])


@dataclass(frozen=True)
class IterationReport:
    """Scalar diagnostics of one iterate, exportable as a CSV row."""

    n: int
    augmented_lagrangian: float
    merit: float
    feasibility: float
    objective: float
    step_x: float
    step_y: float
    step_z: float

    CSV_FIELDS = ("n", "L_rho", "merit", "feasibility", "objective", "step_x", "step_y", "step_z")

    def csv_row(self) -> list:
        return [
            self.n,
            self.augmented_lagrangian,
            self.merit,
            self.feasibility,
            self.objective,
            self.step_x,
            self.step_y,
            self.step_z,
        ]


@dataclass
class SolverState:
    """Current iterate (x, y, z), the previous y, and the report history."""

    x: list[np.ndarray]
    y: np.ndarray
    z: np.ndarray
    y_prev: np.ndarray
    n: int = 0
    history: list[IterationReport] = field(default_factory=list)


@dataclass
class SolveResult:
    state: SolverState
    reports: list[IterationReport]
    status: str
    iterations: int
    wall_time: float
    merit_increase_count: int = 0
    max_merit_increase: float = 0.0
    oracle_error: BlockOracleError | None = None


def objective_value(problem: BlockProblem, x: list[np.ndarray], y: np.ndarray) -> float:
    """F(x, y) = sum_i f_i(x_i) + H(y) + P(x) - G(x)."""
    total = sum(problem.eval_f(i, xi) for i, xi in enumerate(x))
    return float(total + problem.eval_H(y) + problem.eval_P(x) - problem.eval_G(x))


def constraint_residual(problem: BlockProblem, x: list[np.ndarray], y: np.ndarray) -> np.ndarray:
    """A x + B y - b."""
    r = problem.apply_B(y) - problem.rhs
    for i, xi in enumerate(x):
        r = r + problem.apply_A(i, xi)
    return r


def augmented_lagrangian(
    problem: BlockProblem, rho: float, x: list[np.ndarray], y: np.ndarray, z: np.ndarray
) -> float:
    """F(x, y) + <z, Ax + By - b> + (rho/2)||Ax + By - b||^2."""
    r = constraint_residual(problem, x, y)
    return objective_value(problem, x, y) + float(np.vdot(z, r)) + 0.5 * rho * float(np.vdot(r, r))


def merit(problem: BlockProblem, params: SolverParams, state: SolverState) -> float:
    """Augmented Lagrangian plus c||y - y_prev||^2, the monitored quantity."""
    value = augmented_lagrangian(problem, params.rho, state.x, state.y, state.z)
    c = params.merit_coefficient
    if c != 0.0:
        dy = state.y - state.y_prev
        value += c * float(np.vdot(dy, dy))
    return value


def x_subproblem_value(
    problem: BlockProblem, ctx: XBlockContext, x: np.ndarray
) -> float:
    """Objective of the block subproblem described by ``ctx`` at the point x.

    Useful for testing oracles: an exact oracle's output never evaluates
    worse than any other point, in particular the incumbent iterate.
    """
    coupling = ctx.partial_residual + problem.apply_A(ctx.block_index, x)
    value = (
        problem.eval_f(ctx.block_index, x)
        + float(np.vdot(ctx.linear_term, x))
        + float(np.vdot(ctx.multiplier, problem.apply_A(ctx.block_index, x)))
        + 0.5 * ctx.rho * float(np.vdot(coupling, coupling))
    )
    if ctx.mu != 0.0:
        value += ctx.mu * bregman_distance(ctx.bregman, x, ctx.current_iterate)
    return value


def y_subproblem_value(problem: BlockProblem, ctx: YBlockContext, y: np.ndarray) -> float:
    """Objective of the y subproblem described by ``ctx`` at the point y."""
    coupling = ctx.x_residual + problem.apply_B(y)
    value = (
        problem.eval_H(y)
        + float(np.vdot(ctx.multiplier, problem.apply_B(y)))
        + 0.5 * ctx.rho * float(np.vdot(coupling, coupling))
    )
    if ctx.nu != 0.0 and ctx.bregman is not None:
        value += ctx.nu * bregman_distance(ctx.bregman, y, ctx.current_iterate)
    return value


def initial_state(
    problem: BlockProblem, x: list[np.ndarray], y: np.ndarray, z: np.ndarray
) -> SolverState:
    """Package an initial iterate; y_prev starts equal to y."""
    x = [np.asarray(xi, dtype=float).copy() for xi in x]
    y = np.asarray(y, dtype=float).copy()
    z = np.asarray(z, dtype=float).copy()
    return SolverState(x=x, y=y, z=z, y_prev=y.copy(), n=0)


def _x_sweep(
    problem: BlockProblem, params: SolverParams, state: SolverState, mu_n: float
) -> tuple[list[np.ndarray], np.ndarray]:
    """Gauss-Seidel pass over the x blocks; returns (x_new, A x_new + B y - b).

    grad P and the G subgradient are evaluated once at the sweep start, not
    refreshed mid-sweep.
    """
    grad_p = problem.grad_P(state.x)
    g = problem.subgrad_G(state.x)
    residual = constraint_residual(problem, state.x, state.y)
    x_new = list(state.x)
    for i in range(problem.num_blocks):
        partial = residual - problem.apply_A(i, x_new[i])
        ctx = XBlockContext(
            block_index=i,
            current_iterate=x_new[i],
            linear_term=grad_p[i] - g[i],
            multiplier=state.z,
            partial_residual=partial,
            rho=params.rho,
            mu=mu_n,
            bregman=params.x_generator(i),
        )
        try:
            xi = problem.solve_x_block(i, ctx)
        except Exception as exc:  # noqa: BLE001 - diagnostic must name the block
            raise BlockOracleError(f"x-block {i}", exc) from exc
        x_new[i] = np.asarray(xi, dtype=float)
        residual = partial + problem.apply_A(i, x_new[i])
    return x_new, residual


def step(problem: BlockProblem, params: SolverParams, state: SolverState) -> SolverState:
    """One full sweep: x blocks in order, then y, then the multiplier ascent.

    Appends the new iterate's report to the (shared) history list and
    returns the advanced state.
    """
    mu_n = params.mu_at(state.n)
    nu_n = params.nu_at(state.n)
    x_new, residual_xy = _x_sweep(problem, params, state, mu_n)
    x_residual = residual_xy - problem.apply_B(state.y)
    y_ctx = YBlockContext(
        current_iterate=state.y,
        multiplier=state.z,
        x_residual=x_residual,
        rho=params.rho,
        nu=nu_n,
        bregman=params.y_bregman,
    )
    try:
        y_new = np.asarray(problem.solve_y_block(y_ctx), dtype=float)
    except Exception as exc:  # noqa: BLE001
        raise BlockOracleError("y-block", exc) from exc
    residual = x_residual + problem.apply_B(y_new)
    z_new = state.z + params.rho * residual

    new_state = SolverState(
        x=x_new,
        y=y_new,
        z=z_new,
        y_prev=state.y,
        n=state.n + 1,
        history=state.history,
    )
    report = IterationReport(
        n=new_state.n,
        augmented_lagrangian=augmented_lagrangian(problem, params.rho, x_new, y_new, z_new),
        merit=merit(problem, params, new_state),
        feasibility=float(np.linalg.norm(residual)),
        objective=objective_value(problem, x_new, y_new),
        step_x=stacked_norm([a - b for a, b in zip(x_new, state.x)]),
        step_y=float(np.linalg.norm(y_new - state.y)),
        step_z=float(np.linalg.norm(z_new - state.z)),
    )
    new_state.history.append(report)
    return new_state


def _stop_metric(params: SolverParams, delta: float, base: float) -> bool:
    if params.stop_rule == STOP_SHIFTED:
        return delta / (base + 1.0) <= params.stop_tolerance
    if params.stop_rule == STOP_RELATIVE:
        if base == 0.0:
            return delta == 0.0
        return delta / base < params.stop_tolerance
    raise ValueError(f"unknown stop rule {params.stop_rule!r}")


def solve(problem: BlockProblem, params: SolverParams, init: SolverState) -> SolveResult:
    """Iterate ``step`` until the stop rule fires or max_iterations is hit.

    A merit increase beyond 1e-8*(1 + |merit_1|) is a warning, not an error:
    the descent guarantee assumes exact oracles and honest constants, and
    user-supplied constants may be underestimates.  The count and worst
    violation are recorded on the result.
    """
    validate_parameters(params)
    state = init
    if not state.history:
        state.history.append(
            IterationReport(
                n=state.n,
                augmented_lagrangian=augmented_lagrangian(
                    problem, params.rho, state.x, state.y, state.z
                ),
                merit=merit(problem, params, state),
                feasibility=float(np.linalg.norm(constraint_residual(problem, state.x, state.y))),
                objective=objective_value(problem, state.x, state.y),
                step_x=0.0,
                step_y=0.0,
                step_z=0.0,
            )
        )
    status = STATUS_MAX_ITERATIONS
    oracle_error = None
    merit_increase_count = 0
    max_merit_increase = 0.0
    merit_slack = None
    start = time.perf_counter()
    iterations = 0
    for _ in range(params.max_iterations):
        base = stacked_norm(list(state.x) + [state.y, state.z])
        try:
            new_state = step(problem, params, state)
        except BlockOracleError as exc:
            status = STATUS_ORACLE_FAILURE
            oracle_error = exc
            break
        iterations += 1
        report = new_state.history[-1]
        if report.n == 1:
            merit_slack = 1e-8 * (1.0 + abs(report.merit))
        elif merit_slack is not None:
            increase = report.merit - new_state.history[-2].merit
            if increase > merit_slack:
                merit_increase_count += 1
                max_merit_increase = max(max_merit_increase, increase)
                if merit_increase_count == 1:
                    warnings.warn(
                        f"merit increased by {increase:.3e} at iteration {report.n}; "
                        "supplied constants may underestimate the true ones",
                        RuntimeWarning,
                        stacklevel=2,
                    )
        delta = stacked_norm(
            [a - b for a, b in zip(new_state.x, state.x)]
            + [new_state.y - state.y, new_state.z - state.z]
        )
        state = new_state
        if _stop_metric(params, delta, base):
            status = STATUS_CONVERGED
            break
    wall = time.perf_counter() - start

    reports = state.history
    if params.history_window is not None and len(reports) > params.history_window:
        reports = [reports[0]] + reports[-params.history_window :]
    return SolveResult(
        state=state,
        reports=reports,
        status=status,
        iterations=iterations,
        wall_time=wall,
        merit_increase_count=merit_increase_count,
        max_merit_increase=max_merit_increase,
        oracle_error=oracle_error,
    )


@dataclass(frozen=True)
class StationarityReport:
    """Computable first-order residuals at a point.

    ``dual_y`` and ``feasibility`` are the two equation residuals of the
    stationarity system; ``x_fixed_point`` is the displacement of one more
    x sweep, a proxy for the subdifferential inclusion in x (which involves
    a limiting subdifferential and is not directly computable).
    """

    dual_y: float
    feasibility: float
    x_fixed_point: float


def stationarity_report(
    problem: BlockProblem, params: SolverParams, state: SolverState
) -> StationarityReport:
    dual_y = float(
        np.linalg.norm(problem.grad_H(state.y) + problem.apply_B_transpose(state.z))
    )
    feasibility = float(
        np.linalg.norm(constraint_residual(problem, state.x, state.y))
    )
    x_new, _ = _x_sweep(problem, params, state, params.mu_at(state.n))
    x_fixed_point = stacked_norm([a - b for a, b in zip(x_new, state.x)])
    return StationarityReport(dual_y=dual_y, feasibility=feasibility, x_fixed_point=x_fixed_point)


def write_reports_csv(reports: list[IterationReport], path) -> None:
    """Dump iteration reports as CSV with full double precision."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(IterationReport.CSV_FIELDS)
        for report in reports:
            writer.writerow(
                [report.n] + [f"{v:.17g}" for v in report.csv_row()[1:]]
            )


def check_adjoints(problem: BlockProblem, rng: np.random.Generator, tol: float = 1e-10) -> float:
    """Probe <A_i u, v> = <u, A_i^T v> and the B analogue on random inputs.

    Returns the worst relative mismatch; raises if it exceeds ``tol``.
    """
    worst = 0.0
    v = rng.standard_normal(problem.rhs.shape)
    for i, shape in enumerate(problem.block_shapes):
        u = rng.standard_normal(shape)
        lhs = float(np.vdot(problem.apply_A(i, u), v))
        rhs = float(np.vdot(u, problem.apply_A_transpose(i, v)))
        worst = max(worst, abs(lhs - rhs) / (1.0 + abs(lhs)))
    u = rng.standard_normal(problem.y_shape)
    lhs = float(np.vdot(problem.apply_B(u), v))
    rhs = float(np.vdot(u, problem.apply_B_transpose(v)))
    worst = max(worst, abs(lhs - rhs) / (1.0 + abs(lhs)))
    if worst > tol:
        raise ValueError(f"adjoint identity violated: relative error {worst:.3e}")
    return worst
