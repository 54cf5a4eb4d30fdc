"""Model-based discount method.

Starting from a discount ``alpha0`` at which the zero gain is a
mean-square stabilizer, each outer step solves the discounted SLQ problem
by policy iteration (warm-started at the previous gain) and lowers the
discount by an explicit decrement that keeps the current gain stabilizing.
The loop ends once the discount drops to zero or below.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.linalg
import structlog

from stabsynth import matops
from stabsynth.exceptions import (
    InvalidInitialAlpha,
    MaxItersExceeded,
    NonPositiveCost,
    NonPositiveSolution,
    NotStabilizing,
    SingularGenerator,
    SingularInnerMatrix,
    VerificationError,
)
from stabsynth.schemas import PiSettings
from stabsynth.sysmodel import (
    CostSpec,
    FeedbackGain,
    StochasticLinearSystem,
    ValueMatrix,
    evaluate,
    is_ms_stabilizer,
    shift,
    solve_lyapunov,
)

logger = structlog.get_logger(__name__)

INFLATION_SLACK = 1e-8
INNER_RCOND = 1e-13


@dataclass
class ScheduleRecord:
    """One outer iteration of the discount schedule."""

    iteration: int
    alpha: float
    delta_alpha: float
    cost: float
    gain: FeedbackGain
    inner_iters: int
    noise_floor: Optional[float] = None


@dataclass
class DiscountSchedule:
    """Ordered trace of outer iterations."""

    records: List[ScheduleRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: ScheduleRecord) -> None:
        self.records.append(record)

    @property
    def alphas(self) -> List[float]:
        return [r.alpha for r in self.records]

    def validate(self) -> None:
        """Check ordering and termination; raises ``VerificationError``."""
        for prev, cur in zip(self.records, self.records[1:]):
            if not cur.alpha < prev.alpha:
                raise VerificationError(
                    f"alpha not strictly decreasing at iteration {cur.iteration}"
                )
        for record in self.records:
            if not record.delta_alpha > 0:
                raise VerificationError(
                    f"non-positive decrement at iteration {record.iteration}"
                )
        if self.records:
            last = self.records[-1]
            if last.alpha - last.delta_alpha > 0:
                raise VerificationError("schedule stopped before alpha reached zero")


@dataclass
class PolicyIterationResult:
    gain: FeedbackGain
    value: ValueMatrix
    iterations: int
    costs: List[float]
    riccati_residual: float


@dataclass
class StabilizationResult:
    """Outcome of a discount schedule on the undiscounted system."""

    gain: FeedbackGain
    schedule: DiscountSchedule
    final_value: ValueMatrix
    riccati_residual: float
    alpha0: float
    verified: bool = False
    optimal_gain: Optional[FeedbackGain] = None
    optimal_cost: Optional[float] = None
    alpha_tilde: Optional[float] = None
    iteration_bound: Optional[int] = None
    noise_floor: Optional[float] = None


def alpha_bound(sys: StochasticLinearSystem) -> float:
    """``(lambda_max(A + A') + ||C||_2^2) / 2``; any larger discount makes K = 0 feasible."""
    return 0.5 * (matops.lambda_max(sys.a + sys.a.T) + matops.spectral_norm(sys.c) ** 2)


def initial_alpha(sys: StochasticLinearSystem, margin: float = 1.0) -> float:
    if not margin > 0:
        raise ValueError(f"margin must be positive, got {margin}")
    alpha0 = max(alpha_bound(sys), 0.0) + margin
    if not is_ms_stabilizer(shift(sys, alpha0), sys.zero_gain()):
        raise VerificationError(f"zero gain does not stabilize the system at alpha0={alpha0}")
    return alpha0


def _inner_matrix(sys_alpha: StochasticLinearSystem, p: ValueMatrix, r: np.ndarray) -> np.ndarray:
    inner = r + sys_alpha.d.T @ p @ sys_alpha.d
    rcond = 1.0 / np.linalg.cond(inner)
    if not np.isfinite(rcond) or rcond < INNER_RCOND:
        raise SingularInnerMatrix(f"R + D'PD is singular (rcond={rcond:.2e})")
    return inner


def pi_improve(sys_alpha: StochasticLinearSystem, p: ValueMatrix, r: np.ndarray) -> FeedbackGain:
    """``K = -(R + D'PD)^-1 (B'P + D'PC)``."""
    p = matops.as_symmetric(p, "P")
    inner = _inner_matrix(sys_alpha, p, r)
    rhs = sys_alpha.b.T @ p + sys_alpha.d.T @ p @ sys_alpha.c
    return -scipy.linalg.solve(inner, rhs)


def riccati_residual(sys_alpha: StochasticLinearSystem, p: ValueMatrix, spec: CostSpec) -> float:
    """Frobenius norm of the stochastic algebraic Riccati residual at ``P``."""
    a, b, c, d = sys_alpha.a, sys_alpha.b, sys_alpha.c, sys_alpha.d
    inner = _inner_matrix(sys_alpha, p, spec.r)
    cross = p @ b + c.T @ p @ d
    res = a.T @ p + p @ a + c.T @ p @ c + spec.q - cross @ scipy.linalg.solve(inner, cross.T)
    return matops.fro_norm(res)


def _evaluate_policy(sys_alpha: StochasticLinearSystem, k: FeedbackGain, spec: CostSpec) -> ValueMatrix:
    try:
        return solve_lyapunov(sys_alpha, k, spec.stage_weight(k))
    except (SingularGenerator, NonPositiveSolution) as exc:
        raise NotStabilizing(f"gain is not a stabilizer of the shifted system: {exc}") from exc


def pi_solve(
    sys_alpha: StochasticLinearSystem,
    k0: FeedbackGain,
    spec: CostSpec,
    settings: PiSettings,
) -> PolicyIterationResult:
    """Policy iteration from a stabilizing ``k0``.

    Stops when successive value matrices differ by less than
    ``settings.eps`` in Frobenius norm; the returned gain is the
    improvement of the returned value matrix.
    """
    k = sys_alpha.check_gain(k0)
    spec.check_system(sys_alpha)
    p_prev: Optional[ValueMatrix] = None
    costs: List[float] = []

    for i in range(1, settings.max_inner_iters + 1):
        p = _evaluate_policy(sys_alpha, k, spec)
        costs.append(matops.trace(p @ spec.sigma0))
        k = pi_improve(sys_alpha, p, spec.r)
        diff = matops.fro_norm(p - p_prev) if p_prev is not None else math.inf
        logger.debug("pi_step", step=i, cost=costs[-1], diff=diff)
        if diff < settings.eps:
            residual = riccati_residual(sys_alpha, p, spec)
            tol = settings.riccati_rtol * (1.0 + matops.fro_norm(spec.q))
            if residual > tol:
                logger.warning("riccati_residual_above_tolerance", residual=residual, tol=tol)
            return PolicyIterationResult(
                gain=k, value=p, iterations=i, costs=costs, riccati_residual=residual
            )
        p_prev = p

    logger.error("pi_max_iters", max_inner_iters=settings.max_inner_iters)
    raise MaxItersExceeded(
        f"policy iteration did not converge in {settings.max_inner_iters} iterations"
    )


def delta_alpha(cost_value: float, spec: CostSpec) -> float:
    """Discount decrement ``lambda_1(Sigma0) lambda_1(Q) (zeta - 1) / (2 J zeta)``."""
    if not cost_value > 0:
        raise NonPositiveCost(f"cost {cost_value} is not positive")
    scale = matops.lambda_min(spec.sigma0) * matops.lambda_min(spec.q)
    return scale * (spec.zeta - 1.0) / (2.0 * cost_value * spec.zeta)


def check_decrement(
    sys: StochasticLinearSystem,
    gain: FeedbackGain,
    spec: CostSpec,
    alpha: float,
    cost_value: float,
    step: float,
) -> None:
    """Assert the gain survives ``alpha -> alpha - step`` with bounded cost inflation."""
    sys_next = shift(sys, alpha - step)
    if not is_ms_stabilizer(sys_next, gain):
        raise VerificationError(f"gain lost stability after decrement at alpha={alpha}")
    inflated, _ = evaluate(sys_next, gain, spec)
    if inflated > spec.zeta * cost_value * (1.0 + INFLATION_SLACK):
        raise VerificationError(
            f"cost inflation {inflated / cost_value:.6g} exceeds zeta={spec.zeta}"
        )


def resolve_alpha0(sys: StochasticLinearSystem, alpha0: Optional[float], margin: float) -> float:
    if alpha0 is None:
        return initial_alpha(sys, margin)
    if not alpha0 > 0 or not is_ms_stabilizer(shift(sys, alpha0), sys.zero_gain()):
        raise InvalidInitialAlpha(f"zero gain does not stabilize the system shifted by {alpha0}")
    return float(alpha0)


def stabilize(
    sys: StochasticLinearSystem,
    spec: CostSpec,
    settings: PiSettings,
    alpha0: Optional[float] = None,
    margin: float = 1.0,
    check_invariants: bool = True,
) -> StabilizationResult:
    """Run the model-based discount schedule down to ``alpha <= 0``."""
    spec.check_system(sys)
    alpha0 = resolve_alpha0(sys, alpha0, margin)
    alpha = alpha0
    k = sys.zero_gain()
    schedule = DiscountSchedule()
    last: Optional[PolicyIterationResult] = None

    logger.info("schedule_start", alpha0=alpha0, zeta=spec.zeta, n=sys.n, m=sys.m)
    while alpha > 0:
        if len(schedule) >= settings.max_outer_iters:
            raise MaxItersExceeded(f"discount schedule exceeded {settings.max_outer_iters} steps")
        sys_alpha = shift(sys, alpha)
        last = pi_solve(sys_alpha, k, spec, settings)
        k = last.gain
        cost_value, _ = evaluate(sys_alpha, k, spec)
        step = delta_alpha(cost_value, spec)
        if check_invariants:
            check_decrement(sys, k, spec, alpha, cost_value, step)
        schedule.append(
            ScheduleRecord(
                iteration=len(schedule),
                alpha=alpha,
                delta_alpha=step,
                cost=cost_value,
                gain=k,
                inner_iters=last.iterations,
            )
        )
        logger.info(
            "discount_step",
            iteration=len(schedule) - 1,
            alpha=alpha,
            delta_alpha=step,
            cost=cost_value,
            inner_iters=last.iterations,
        )
        alpha -= step

    assert last is not None
    if check_invariants:
        schedule.validate()
    if not is_ms_stabilizer(sys, k):
        raise VerificationError("final gain is not a mean-square stabilizer")

    result = StabilizationResult(
        gain=k,
        schedule=schedule,
        final_value=last.value,
        riccati_residual=last.riccati_residual,
        alpha0=alpha0,
        verified=True,
    )
    attach_bound(result, sys, spec, settings, check_invariants)
    logger.info(
        "schedule_done",
        iterations=len(schedule),
        gain=k.tolist(),
        bound=result.iteration_bound,
    )
    return result


def attach_bound(
    result: StabilizationResult,
    sys: StochasticLinearSystem,
    spec: CostSpec,
    settings: PiSettings,
    check_invariants: bool = True,
) -> None:
    """Solve the undiscounted problem and record ``J*``, ``alpha_tilde`` and the bound.

    With ``settings.polish`` the result's gain becomes the undiscounted optimum.
    """
    optimum = pi_solve(sys, result.gain, spec, settings)
    optimal_cost, _ = evaluate(sys, optimum.gain, spec)
    result.optimal_gain = optimum.gain
    result.optimal_cost = optimal_cost
    result.alpha_tilde = delta_alpha(optimal_cost, spec)
    result.iteration_bound = math.ceil(result.alpha0 / result.alpha_tilde)
    if len(result.schedule) > result.iteration_bound:
        if check_invariants:
            raise VerificationError(
                f"{len(result.schedule)} outer iterations exceed the bound {result.iteration_bound}"
            )
        logger.warning(
            "iteration_bound_exceeded",
            iterations=len(result.schedule),
            bound=result.iteration_bound,
        )
    if settings.polish:
        result.gain = optimum.gain
        result.final_value = optimum.value
        result.riccati_residual = optimum.riccati_residual
