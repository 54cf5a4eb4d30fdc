"""Moment-ODE oracle for the learning data.

Under ``u = K0 x + e(t)`` with deterministic ``e``, the mean
``mu = E x`` and second moment ``S = E x x'`` of the closed loop
``dx = (Acl x + B e) dt + (Ccl x + D e) dW`` obey::

    mu' = Acl mu + B e
    S'  = Acl S + S Acl' + B e mu' + mu e' B'
          + Ccl S Ccl' + Ccl mu e' D' + D e mu' Ccl' + D e e' D'

Every data-matrix entry is a time integral of linear functionals of
``(mu, S, e)``, so integrating these ODEs with a fixed-step RK4 scheme
gives Monte-Carlo-free values of everything ``sde`` estimates.
"""

from dataclasses import dataclass
from typing import Callable, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from numpy.typing import ArrayLike

from stabsynth import matops
from stabsynth.matops import Array
from stabsynth.schemas import SimConfig
from stabsynth.sde import (
    AdpDataMatrices,
    GaussianInit,
    InitialStateSampler,
    NoiseSpec,
    build_policy_matrices,
    exploration_noise,
    fit_on_policy_value,
    quadrature_weights,
)
from stabsynth.sysmodel import CostSpec, FeedbackGain, StochasticLinearSystem, closed_loop

logger = structlog.get_logger(__name__)

Quadrature = Literal["exact", "grid"]
State = Tuple[Array, ...]


@dataclass(eq=False)
class OracleData:
    """Exact expectations for ``l`` sub-batches."""

    matrices: AdpDataMatrices
    sigma0: Array
    times: Array
    means: Array  # (l, n_grid + 1, n)
    second_moments: Array  # (l, n_grid + 1, n, n)

    @property
    def gram(self) -> Array:
        return self.matrices.gram

    def policy_matrices(self, k: FeedbackGain, q: Array, r: Array) -> Tuple[Array, Array]:
        return build_policy_matrices(self, k, q, r)


def _axpy(y: State, h: float, k: State) -> State:
    return tuple(a + h * b for a, b in zip(y, k))


def _rk4_step(f: Callable[[State, Array], State], y: State, h: float, e0: Array, e_mid: Array, e1: Array) -> State:
    k1 = f(y, e0)
    k2 = f(_axpy(y, 0.5 * h, k1), e_mid)
    k3 = f(_axpy(y, 0.5 * h, k2), e_mid)
    k4 = f(_axpy(y, h, k3), e1)
    return tuple(
        a + (h / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)
    )


def _moment_rhs(sys_alpha: StochasticLinearSystem, k0: FeedbackGain) -> Callable[[State, Array], State]:
    acl, ccl = closed_loop(sys_alpha, k0)
    b, d = sys_alpha.b, sys_alpha.d

    def f(y: State, e: Array) -> State:
        mu, s = y[0], y[1]
        be = e @ b.T
        de = e @ d.T
        cm = mu @ ccl.T
        ds = (
            acl @ s
            + s @ acl.T
            + be[:, :, None] * mu[:, None, :]
            + mu[:, :, None] * be[:, None, :]
            + ccl @ s @ ccl.T
            + cm[:, :, None] * de[:, None, :]
            + de[:, :, None] * cm[:, None, :]
            + de[:, :, None] * de[:, None, :]
        )
        dmu = mu @ acl.T + be
        return (dmu, ds, s, mu[:, :, None] * e[:, None, :], e[:, :, None] * e[:, None, :])

    return f


def _initial_moments(init: Union[InitialStateSampler, ArrayLike], l: int) -> Tuple[Array, Array]:
    if not hasattr(init, "second_moment"):
        init = GaussianInit(matops.as_symmetric(init, "sigma0"))
    sampler: InitialStateSampler = init  # type: ignore[assignment]
    mu0 = np.stack([np.asarray(sampler.mean(h), dtype=np.float64) for h in range(l)])
    s0 = np.stack([np.asarray(sampler.second_moment(h), dtype=np.float64) for h in range(l)])
    return mu0, s0


def moment_ode_oracle(
    sys_alpha: StochasticLinearSystem,
    k0: FeedbackGain,
    noise: Union[NoiseSpec, Sequence[NoiseSpec]],
    init: Union[InitialStateSampler, ArrayLike],
    cfg: SimConfig,
    quadrature: Quadrature = "exact",
    l: Optional[int] = None,
) -> OracleData:
    """Exact data matrices for the behavior policy ``u = k0 x + e``.

    ``init`` is an initial-state sampler (per sub-batch moments) or a
    second-moment matrix for a zero-mean initial state.  With
    ``quadrature="exact"`` the time integrals are continuous; with
    ``"grid"`` they are the same sums the Monte Carlo estimator uses,
    under the rule named by ``cfg.quadrature``.
    """
    k0 = sys_alpha.check_gain(k0)
    noises: List[NoiseSpec]
    if isinstance(noise, NoiseSpec):
        noises = [noise] * (l if l is not None else (cfg.l or 1))
    else:
        noises = list(noise)
    l = len(noises)
    n, m = sys_alpha.n, sys_alpha.m

    substeps = cfg.oracle_substeps
    h = cfg.grid_step / substeps
    n_steps = cfg.n_grid * substeps
    half_times = np.arange(2 * n_steps + 1) * (0.5 * h)
    # (l, 2 * n_steps + 1, m): noise at every RK4 stage time
    e_all = np.stack([exploration_noise(half_times, spec, m) for spec in noises])

    mu0, s0 = _initial_moments(init, l)
    y: State = (
        mu0,
        s0,
        np.zeros((l, n, n)),
        np.zeros((l, n, m)),
        np.zeros((l, m, m)),
    )
    f = _moment_rhs(sys_alpha, k0)

    means = np.empty((l, cfg.n_grid + 1, n))
    seconds = np.empty((l, cfg.n_grid + 1, n, n))
    means[:, 0], seconds[:, 0] = mu0, s0
    for step in range(n_steps):
        i = 2 * step
        y = _rk4_step(f, y, h, e_all[:, i], e_all[:, i + 1], e_all[:, i + 2])
        if (step + 1) % substeps == 0:
            q = (step + 1) // substeps
            means[:, q], seconds[:, q] = y[0], y[1]

    if quadrature == "exact":
        g_xx, g_mue, g_ee = y[2], y[3], y[4]
    elif quadrature == "grid":
        w = quadrature_weights(cfg.n_grid, cfg.grid_step, cfg.quadrature)
        e_grid = e_all[:, :: 2 * substeps]
        g_xx = np.einsum("q,hqij->hij", w, seconds)
        g_mue = np.einsum("q,hqi,hqj->hij", w, means, e_grid)
        g_ee = np.einsum("q,hqi,hqj->hij", w, e_grid, e_grid)
    else:
        raise ValueError(f"unknown quadrature {quadrature!r}")

    g_xx = 0.5 * (g_xx + np.swapaxes(g_xx, 1, 2))
    g_xu = g_xx @ k0.T + g_mue
    k_mue = k0 @ g_mue
    g_uu = k0 @ g_xx @ k0.T + k_mue + np.swapaxes(k_mue, 1, 2) + g_ee

    matrices = AdpDataMatrices(
        xi=matops.mcal_expected(seconds[:, -1]) - matops.mcal_expected(seconds[:, 0]),
        i_xx=g_xx.reshape(l, n * n),
        i_xu=g_xu.reshape(l, n * m),
        m_u=matops.mcal_expected(g_uu),
    )
    logger.debug("oracle_computed", l=l, quadrature=quadrature, steps=n_steps)
    return OracleData(
        matrices=matrices,
        sigma0=s0.mean(axis=0),
        times=np.linspace(0.0, cfg.t0, cfg.n_grid + 1),
        means=means,
        second_moments=seconds,
    )


def closed_loop_moments(
    sys_alpha: StochasticLinearSystem,
    k: FeedbackGain,
    sigma0: ArrayLike,
    cfg: SimConfig,
    horizon: Optional[float] = None,
) -> Tuple[Array, Array]:
    """``E x x'`` and its running integral under ``u = K x`` on the data grid spacing.

    Integrates ``S' = Acl S + S Acl' + Ccl S Ccl'`` from ``S(0) = sigma0``
    over ``[0, horizon]`` and returns both at every grid point, each of
    shape ``(n_grid + 1, n, n)``.
    """
    k = sys_alpha.check_gain(k)
    acl, ccl = closed_loop(sys_alpha, k)
    horizon = horizon if horizon is not None else cfg.rollout_horizon
    n_grid = max(1, int(round(horizon / cfg.grid_step)))
    substeps = cfg.oracle_substeps
    h = cfg.grid_step / substeps

    def f(y: State, _: Array) -> State:
        s = y[0]
        return (acl @ s + s @ acl.T + ccl @ s @ ccl.T, s)

    s0 = np.array(sigma0, dtype=np.float64)
    y: State = (s0, np.zeros_like(s0))
    seconds = np.empty((n_grid + 1,) + s0.shape)
    integrals = np.empty_like(seconds)
    seconds[0], integrals[0] = y
    dummy = np.zeros(0)
    for q in range(1, n_grid + 1):
        for _ in range(substeps):
            y = _rk4_step(f, y, h, dummy, dummy, dummy)
        seconds[q], integrals[q] = y
    return seconds, integrals


def moment_cost(
    sys_alpha: StochasticLinearSystem,
    k: FeedbackGain,
    spec: CostSpec,
    cfg: SimConfig,
    horizon: Optional[float] = None,
) -> float:
    """Discounted cost of ``u = K x`` as ``Tr((Q + K'RK) int S)`` over a truncated horizon."""
    _, integrals = closed_loop_moments(sys_alpha, k, spec.sigma0, cfg, horizon)
    return matops.trace(spec.stage_weight(k) @ integrals[-1])


def moment_on_policy_value(
    sys_alpha: StochasticLinearSystem,
    k: FeedbackGain,
    spec: CostSpec,
    cfg: SimConfig,
    horizon: Optional[float] = None,
) -> Array:
    """Value matrix of ``u = K x`` fitted from exact closed-loop moments."""
    seconds, integrals = closed_loop_moments(sys_alpha, k, spec.sigma0, cfg, horizon)
    interval_costs = np.einsum("ij,qji->q", spec.stage_weight(k), np.diff(integrals, axis=0))
    return fit_on_policy_value(seconds, interval_costs)
