"""Model-free discount method.

Each inner step recovers ``(P, M, H)`` from trajectory data by least
squares, where ``M = (R + D'PD) K_next`` and ``H = D'PD``, then updates
``K_next = (R + H)^-1 M``.  One batch serves every inner iteration at a
given discount; only the policy-dependent columns are recomputed.

The schedule reads data through a ``DataSource``.  ``run_model_free``
never sees the system matrices; the simulator or the moment oracle
behind the source does.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Literal, Optional, Protocol, Sequence, Union

import numpy as np
import scipy.linalg
import structlog

from stabsynth import matops, moments, sde
from stabsynth.exceptions import (
    ConfigError,
    DegenerateMoment,
    MaxItersExceeded,
    NonConvergence,
    RankDeficient,
    SingularInnerMatrix,
    VerificationError,
)
from stabsynth.matops import Array
from stabsynth.schemas import InitialStateConfig, NoiseConfig, PiSettings, SimConfig
from stabsynth.sde import AdpDataMatrices, HasGram, build_policy_matrices
from stabsynth.stabilize_exact import (
    DiscountSchedule,
    ScheduleRecord,
    StabilizationResult,
    attach_bound,
    check_decrement,
    delta_alpha,
    resolve_alpha0,
    riccati_residual,
)
from stabsynth.sysmodel import (
    CostSpec,
    FeedbackGain,
    StochasticLinearSystem,
    ValueMatrix,
    evaluate,
    is_ms_stabilizer,
    shift,
)

logger = structlog.get_logger(__name__)

H_PSD_RTOL = 1e-6
INNER_RCOND = 1e-13


@dataclass
class AdpSolution:
    """Least-squares recovery of ``(P, M, H)``."""

    p: ValueMatrix
    m: Array
    h: Array
    residual: float
    condition: float
    sigma_min: float
    sigma_max: float


@dataclass
class AdpPiResult:
    gain: FeedbackGain
    value: ValueMatrix
    iterations: int
    diffs: List[float]
    noise_floor: Optional[float] = None
    solutions: List[AdpSolution] = field(default_factory=list)


def phi_columns(n: int, m: int) -> int:
    return matops.vech_size(n) + n * m + matops.vech_size(m)


def assemble_phi(static_m: AdpDataMatrices, k_i: FeedbackGain, m_kx: Array) -> Array:
    """``[Xi, 2 (I_xu - I_xx (I_n kron K')), M_kx - M_u]``.

    ``m_kx`` must belong to the same ``k_i`` (see ``build_policy_matrices``).
    """
    n = static_m.n
    middle = 2.0 * (static_m.i_xu - static_m.i_xx @ np.kron(np.eye(n), k_i.T))
    return np.hstack([static_m.xi, middle, m_kx - static_m.m_u])


def solve_pmh(phi: Array, j_k: Array, n: int, m: int, rank_tol: float = 1e-8) -> AdpSolution:
    """Minimum-norm least-squares solve of ``Phi x = J_k`` through the SVD."""
    if phi.shape[1] != phi_columns(n, m):
        raise ValueError(f"Phi has {phi.shape[1]} columns, expected {phi_columns(n, m)}")
    if phi.shape[0] < phi.shape[1]:
        raise RankDeficient(
            f"Phi has {phi.shape[0]} rows for {phi.shape[1]} columns; increase l"
        )
    u, s, vt = scipy.linalg.svd(phi, full_matrices=False)
    sigma_max, sigma_min = float(s[0]), float(s[-1])
    if not sigma_min > rank_tol * sigma_max:
        logger.error("phi_rank_deficient", sigma_min=sigma_min, sigma_max=sigma_max)
        raise RankDeficient(
            f"Phi is rank deficient (sigma_min/sigma_max = {sigma_min / sigma_max:.2e}); "
            "enlarge l or enrich the exploration noise",
            sigma_min=sigma_min,
            sigma_max=sigma_max,
        )
    x = vt.T @ ((u.T @ j_k) / s)
    nv, nm = matops.vech_size(n), n * m
    p = matops.unvech(x[:nv], n)
    gain_block = matops.unvec(x[nv : nv + nm], m, n)
    h = matops.unvech(x[nv + nm :], m)

    h_tol = H_PSD_RTOL * (1.0 + matops.spectral_norm(h))
    if not matops.is_positive_semidefinite(h, margin=h_tol):
        logger.warning("h_not_psd", lambda_min=matops.lambda_min(h), tol=h_tol)

    return AdpSolution(
        p=p,
        m=gain_block,
        h=h,
        residual=float(np.linalg.norm(phi @ x - j_k)),
        condition=(sigma_max / sigma_min) ** 2,
        sigma_min=sigma_min,
        sigma_max=sigma_max,
    )


def adp_policy_update(sol: AdpSolution, r: Array) -> FeedbackGain:
    """``K = (R + H)^-1 M``."""
    inner = r + sol.h
    rcond = 1.0 / np.linalg.cond(inner)
    if not np.isfinite(rcond) or rcond < INNER_RCOND:
        raise SingularInnerMatrix(f"R + H is singular (rcond={rcond:.2e})")
    return scipy.linalg.solve(inner, sol.m)


def adp_step(
    static_m: AdpDataMatrices,
    k_i: FeedbackGain,
    spec: CostSpec,
    settings: PiSettings,
    data: Optional[HasGram] = None,
) -> AdpSolution:
    """One data-driven evaluation of gain ``k_i``."""
    m_kx, j_k = build_policy_matrices(data if data is not None else static_m, k_i, spec.q, spec.r)
    phi = assemble_phi(static_m, k_i, m_kx)
    return solve_pmh(phi, j_k, static_m.n, static_m.m, settings.rank_tol)


def _noise_floor(diffs: Sequence[float], window: int) -> Optional[float]:
    """Plateau level when the last ``window`` differences never beat the earlier best."""
    if len(diffs) <= window:
        return None
    recent = diffs[-window:]
    if min(recent) >= min(diffs[:-window]):
        return float(np.median(recent))
    return None


def adp_pi(
    static_m: AdpDataMatrices,
    k0: FeedbackGain,
    spec: CostSpec,
    settings: PiSettings,
    exact: bool = False,
    data: Optional[HasGram] = None,
) -> AdpPiResult:
    """Policy iteration on one fixed data set.

    With ``exact`` data the stopping tolerance is ``settings.eps``;
    otherwise it starts at ``settings.eps_model_free`` and, when the
    differences plateau (Monte Carlo noise floor), is raised to three
    times the floor or, without ``adaptive_eps``, ``NonConvergence`` is raised.
    """
    k = np.asarray(k0, dtype=np.float64)
    eps = settings.eps if exact else settings.eps_model_free
    floor: Optional[float] = None
    diffs: List[float] = []
    solutions: List[AdpSolution] = []
    p_prev: Optional[ValueMatrix] = None

    for i in range(1, settings.max_inner_iters + 1):
        sol = adp_step(static_m, k, spec, settings, data)
        solutions.append(sol)
        k = adp_policy_update(sol, spec.r)
        if p_prev is not None:
            diff = matops.fro_norm(sol.p - p_prev)
            diffs.append(diff)
            logger.debug("adp_step", step=i, diff=diff, residual=sol.residual, condition=sol.condition)
            if diff < eps:
                return AdpPiResult(k, sol.p, i, diffs, floor, solutions)
            if not exact and floor is None:
                floor = _noise_floor(diffs, settings.stagnation_window)
                if floor is not None:
                    logger.warning("adp_noise_floor", floor=floor, eps=eps)
                    if not settings.adaptive_eps:
                        raise NonConvergence(
                            f"value iterates stagnate at {floor:.3e} above eps={eps:.1e}",
                            noise_floor=floor,
                        )
                    eps = max(settings.eps_model_free, 3.0 * floor)
                    if diff < eps:
                        return AdpPiResult(k, sol.p, i, diffs, floor, solutions)
        p_prev = sol.p

    raise MaxItersExceeded(
        f"model-free policy iteration did not converge in {settings.max_inner_iters} iterations"
    )


@dataclass
class CollectedData:
    """What a data source hands the schedule at one discount."""

    static: AdpDataMatrices
    sigma0: Array
    grams: Optional[HasGram] = None


class DataSource(Protocol):
    exact: bool

    def collect(self, alpha: float, gain: FeedbackGain, iteration: int) -> CollectedData: ...

    def rollout_cost(self, alpha: float, gain: FeedbackGain, spec: CostSpec, iteration: int) -> float: ...

    def on_policy_value(self, alpha: float, gain: FeedbackGain, spec: CostSpec, iteration: int) -> ValueMatrix: ...


def _checked_sigma0(sigma0: Array) -> Array:
    if not matops.is_positive_definite(sigma0):
        raise DegenerateMoment(
            f"initial-state second moment is not positive definite "
            f"(lambda_min={matops.lambda_min(sigma0):.3e})"
        )
    return sigma0


class SimulatedSource:
    """Euler-Maruyama batches collected under the current gain."""

    exact = False

    def __init__(
        self,
        sys: StochasticLinearSystem,
        sim: SimConfig,
        noise: NoiseConfig,
        initial_state: Optional[InitialStateConfig] = None,
        l: Optional[int] = None,
        save_dir: Optional[Path] = None,
    ):
        self._sys = sys
        self.sim = sim
        initial_state = initial_state or InitialStateConfig()
        self.fixed_init = initial_state.distribution == "fixed"
        self.sampler = sde.sampler_from_config(initial_state, sys.n)
        self.l = l if l is not None else sim.resolve_l(sys.n, sys.m, initial_state.fixed_count)
        self.noises = sde.noise_family(noise, sys.m, self.l)
        self.save_dir = save_dir

    def _sigma0(self, batch: sde.TrajectoryBatch, iteration: int) -> Array:
        if self.fixed_init:
            return np.eye(batch.n)
        if self.sim.sigma0_samples is None:
            return sde.estimate_sigma0(batch.initial_states())
        seed = sde.aux_seed(self.sim.master_seed, iteration, self.l, sde.SIGMA0_STREAM)
        return sde.draw_sigma0(self.sampler, self.sim.sigma0_samples, seed)

    def _cost_sampler(self) -> sde.InitialStateSampler:
        return sde.StandardNormalInit(self._sys.n) if self.fixed_init else self.sampler

    def collect(self, alpha: float, gain: FeedbackGain, iteration: int) -> CollectedData:
        batch = sde.collect_batch(
            shift(self._sys, alpha), gain, self.noises, self.sampler, self.sim,
            iteration=iteration, alpha=alpha,
        )
        batch.sigma0 = self._sigma0(batch, iteration)
        if self.save_dir is not None:
            sde.save_batch(self.save_dir / f"batch_{iteration:03d}.npz", batch)
        static = sde.build_static_matrices(batch, self.sim.quadrature)
        return CollectedData(static=static, sigma0=_checked_sigma0(batch.sigma0))

    def rollout_cost(self, alpha: float, gain: FeedbackGain, spec: CostSpec, iteration: int) -> float:
        seed = sde.aux_seed(self.sim.master_seed, iteration, self.l, sde.ROLLOUT_STREAM)
        return sde.rollout_cost(shift(self._sys, alpha), gain, spec, self.sim, self._cost_sampler(), seed)

    def on_policy_value(self, alpha: float, gain: FeedbackGain, spec: CostSpec, iteration: int) -> ValueMatrix:
        seed = sde.aux_seed(self.sim.master_seed, iteration, self.l, sde.ON_POLICY_STREAM)
        return sde.on_policy_value(shift(self._sys, alpha), gain, spec, self.sim, self._cost_sampler(), seed)


class OracleSource:
    """Exact expectations from the moment ODE."""

    exact = True

    def __init__(
        self,
        sys: StochasticLinearSystem,
        sim: SimConfig,
        noise: NoiseConfig,
        initial_state: Optional[InitialStateConfig] = None,
        l: Optional[int] = None,
    ):
        self._sys = sys
        self.sim = sim
        initial_state = initial_state or InitialStateConfig()
        self.fixed_init = initial_state.distribution == "fixed"
        self.sampler = sde.sampler_from_config(initial_state, sys.n)
        self.l = l if l is not None else sim.resolve_l(sys.n, sys.m, initial_state.fixed_count)
        self.noises = sde.noise_family(noise, sys.m, self.l)

    def collect(self, alpha: float, gain: FeedbackGain, iteration: int) -> CollectedData:
        oracle = moments.moment_ode_oracle(
            shift(self._sys, alpha), gain, self.noises, self.sampler, self.sim, quadrature="exact"
        )
        sigma0 = np.eye(self._sys.n) if self.fixed_init else oracle.sigma0
        return CollectedData(static=oracle.matrices, sigma0=_checked_sigma0(sigma0))

    def rollout_cost(self, alpha: float, gain: FeedbackGain, spec: CostSpec, iteration: int) -> float:
        return moments.moment_cost(shift(self._sys, alpha), gain, spec, self.sim)

    def on_policy_value(self, alpha: float, gain: FeedbackGain, spec: CostSpec, iteration: int) -> ValueMatrix:
        return moments.moment_on_policy_value(shift(self._sys, alpha), gain, spec, self.sim)


class RecordedSource:
    """Replays saved batches; has no access to the system matrices.

    A batch that carries its own Sigma0 estimate is replayed with it;
    older batches fall back to their initial states.
    """

    exact = False

    def __init__(
        self,
        paths: Union[Path, Sequence[Path]],
        fixed_init: bool = False,
        quadrature: Literal["left", "trapezoid"] = "left",
    ):
        if isinstance(paths, Path) and paths.is_dir():
            paths = sorted(paths.glob("batch_*.npz"))
        self.paths = [Path(p) for p in ([paths] if isinstance(paths, Path) else paths)]
        self.fixed_init = fixed_init
        self.quadrature = quadrature

    def collect(self, alpha: float, gain: FeedbackGain, iteration: int) -> CollectedData:
        if iteration >= len(self.paths):
            raise ConfigError(f"no recorded batch for outer iteration {iteration}")
        batch = sde.load_batch(self.paths[iteration])
        if not math.isclose(batch.alpha, alpha, rel_tol=1e-9, abs_tol=1e-12):
            raise ConfigError(
                f"recorded batch {self.paths[iteration].name} was collected at "
                f"alpha={batch.alpha}, schedule is at {alpha}"
            )
        static = sde.build_static_matrices(batch, self.quadrature)
        if self.fixed_init:
            sigma0 = np.eye(batch.n)
        elif batch.sigma0 is not None:
            sigma0 = batch.sigma0
        else:
            sigma0 = sde.estimate_sigma0(batch.initial_states())
        return CollectedData(static=static, sigma0=_checked_sigma0(sigma0))

    def rollout_cost(self, alpha: float, gain: FeedbackGain, spec: CostSpec, iteration: int) -> float:
        raise ConfigError("recorded batches cannot evaluate rollout costs")

    def on_policy_value(self, alpha: float, gain: FeedbackGain, spec: CostSpec, iteration: int) -> ValueMatrix:
        raise ConfigError("recorded batches cannot evaluate on-policy values")


StepHook = Callable[[ScheduleRecord, CostSpec], None]


def run_model_free(
    source: DataSource,
    spec: CostSpec,
    settings: PiSettings,
    alpha0: float,
    n: int,
    m: int,
    on_step: Optional[StepHook] = None,
) -> StabilizationResult:
    """Model-free discount schedule driven only by ``source``.

    ``spec.sigma0`` is replaced by the estimate each batch provides.
    ``on_step`` sees every record before the discount is lowered.
    """
    alpha = alpha0
    k = np.zeros((m, n))
    schedule = DiscountSchedule()
    value: Optional[ValueMatrix] = None
    worst_floor: Optional[float] = None

    logger.info("model_free_start", alpha0=alpha0, zeta=spec.zeta, estimator=settings.cost_estimator)
    while alpha > 0:
        j = len(schedule)
        if j >= settings.max_outer_iters:
            raise MaxItersExceeded(f"discount schedule exceeded {settings.max_outer_iters} steps")
        data = source.collect(alpha, k, j)
        spec_hat = spec.with_sigma0(data.sigma0)
        pi = adp_pi(data.static, k, spec_hat, settings, exact=source.exact, data=data.grams)
        k = pi.gain

        final = adp_step(data.static, k, spec_hat, settings, data.grams)
        value = final.p
        if settings.cost_estimator == "rollout":
            cost_value = source.rollout_cost(alpha, k, spec_hat, j)
        elif settings.cost_estimator == "on_policy":
            cost_value = matops.trace(source.on_policy_value(alpha, k, spec_hat, j) @ spec_hat.sigma0)
        else:
            cost_value = matops.trace(final.p @ spec_hat.sigma0)
        step = delta_alpha(cost_value, spec_hat)

        record = ScheduleRecord(
            iteration=j,
            alpha=alpha,
            delta_alpha=step,
            cost=cost_value,
            gain=k,
            inner_iters=pi.iterations,
            noise_floor=pi.noise_floor,
        )
        if on_step is not None:
            on_step(record, spec_hat)
        schedule.append(record)
        if pi.noise_floor is not None:
            worst_floor = max(worst_floor or 0.0, pi.noise_floor)
        logger.info(
            "discount_step",
            iteration=j,
            alpha=alpha,
            delta_alpha=step,
            cost=cost_value,
            inner_iters=pi.iterations,
            residual=final.residual,
            condition=final.condition,
        )
        alpha -= step

    if value is None:
        raise ConfigError(f"alpha0 must be positive, got {alpha0}")
    schedule.validate()
    return StabilizationResult(
        gain=k,
        schedule=schedule,
        final_value=value,
        riccati_residual=math.nan,
        alpha0=alpha0,
        noise_floor=worst_floor,
    )


def stabilize_model_free(
    sys: StochasticLinearSystem,
    spec: CostSpec,
    sim: SimConfig,
    noise: NoiseConfig,
    settings: PiSettings,
    alpha0: Optional[float] = None,
    data_source: Literal["simulate", "oracle"] = "simulate",
    initial_state: Optional[InitialStateConfig] = None,
    margin: float = 1.0,
    save_dir: Optional[Path] = None,
    check_invariants: Optional[bool] = None,
    l: Optional[int] = None,
) -> StabilizationResult:
    """Run the model-free schedule and verify the result against the true system.

    The system matrices are used to build the data source, to choose
    ``alpha0`` when it is not given and for verification; the learning
    loop itself only reads data.  Per-step safety checks default to on
    for oracle data, where estimates are exact. An unset ``l`` falls back
    to ``sim.resolve_l`` with every fixed initial vector covered.
    """
    spec.check_system(sys)
    alpha0 = resolve_alpha0(sys, alpha0, margin)
    source: DataSource
    if data_source == "oracle":
        source = OracleSource(sys, sim, noise, initial_state, l=l)
    elif data_source == "simulate":
        source = SimulatedSource(sys, sim, noise, initial_state, l=l, save_dir=save_dir)
    else:
        raise ConfigError(f"unknown data source {data_source!r}")
    if check_invariants is None:
        check_invariants = source.exact

    def check_step(record: ScheduleRecord, spec_hat: CostSpec) -> None:
        true_cost, _ = evaluate(shift(sys, record.alpha), record.gain, spec_hat)
        check_decrement(sys, record.gain, spec_hat, record.alpha, true_cost, record.delta_alpha)

    result = run_model_free(
        source, spec, settings, alpha0, sys.n, sys.m,
        on_step=check_step if check_invariants else None,
    )
    if not is_ms_stabilizer(sys, result.gain):
        raise VerificationError("model-free gain is not a mean-square stabilizer")
    result.verified = True

    last = result.schedule.records[-1]
    result.riccati_residual = riccati_residual(shift(sys, last.alpha), result.final_value, spec)
    attach_bound(
        result, sys, spec, settings.model_copy(update={"polish": False}),
        check_invariants=bool(check_invariants),
    )
    logger.info(
        "model_free_done",
        iterations=len(result.schedule),
        gain=result.gain.tolist(),
        source=data_source,
    )
    return result
