"""Trajectory generation and Monte Carlo estimation of the learning data.

Paths of the shifted system are produced by Euler-Maruyama under the
behavior input ``u = K0 x + e(t)`` where ``e`` is a sum of sinusoids.
Every expectation the model-free method needs is estimated from the
paths with a sample mean over paths and a left-endpoint Riemann sum
(or, on request, the trapezoidal rule) on the grid ``s_q = q t0 / n_grid``.

Seeding: sub-batch ``h`` of outer iteration ``j`` draws its initial states
from ``default_rng([master_seed, j, h, 0])`` and its Brownian increments
from ``default_rng([master_seed, j, h, 1])``, so results do not depend on
the order or the number of worker threads.  Draws that are not tied to a
sub-batch use ``h = l`` with a last entry of 2 (rollouts), 3 (on-policy
fits) or 4 (the initial states behind the Sigma0 estimate).
"""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
import scipy.integrate
import scipy.linalg
import structlog
from numpy.typing import ArrayLike

from stabsynth import matops
from stabsynth.exceptions import Blowup, ConfigError, DimensionError
from stabsynth.matops import Array
from stabsynth.schemas import InitialStateConfig, NoiseConfig, SimConfig
from stabsynth.sysmodel import CostSpec, FeedbackGain, StochasticLinearSystem

logger = structlog.get_logger(__name__)

BATCH_FORMAT_VERSION = 1
ROLLOUT_STREAM = 2
ON_POLICY_STREAM = 3
SIGMA0_STREAM = 4

Control = Callable[[float, Array], Array]
SeedLike = Union[int, Sequence[int], np.random.Generator]


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Sum of sinusoids ``sum_j amp_j sin(freq_j t + phase_j)``.

    1-D component arrays are shared by every input channel; 2-D arrays of
    shape ``(m, terms)`` give each channel its own components.
    """

    amplitudes: Array
    frequencies: Array
    phases: Array

    def __post_init__(self) -> None:
        arrays = [np.array(x, dtype=np.float64) for x in (self.amplitudes, self.frequencies, self.phases)]
        shapes = {a.shape for a in arrays}
        if len(shapes) != 1:
            raise DimensionError(f"noise components differ in shape: {sorted(shapes)}")
        shape = arrays[0].shape
        if len(shape) not in (1, 2) or shape[-1] < 1:
            raise DimensionError(f"noise components must be (terms,) or (m, terms), got {shape}")
        for name, value in zip(("amplitudes", "frequencies", "phases"), arrays):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @classmethod
    def zero(cls, m: int = 1) -> "NoiseSpec":
        return cls(np.zeros((m, 1)), np.zeros((m, 1)), np.zeros((m, 1)))

    @property
    def channels(self) -> Optional[int]:
        return int(self.amplitudes.shape[0]) if self.amplitudes.ndim == 2 else None

    def per_channel(self, m: int) -> Tuple[Array, Array, Array]:
        """Component arrays broadcast to ``(m, terms)``."""
        if self.channels is not None and self.channels != m:
            raise DimensionError(f"noise has {self.channels} channels, expected {m}")
        terms = self.amplitudes.shape[-1]
        return tuple(np.broadcast_to(x, (m, terms)) for x in (self.amplitudes, self.frequencies, self.phases))  # type: ignore[return-value]


def exploration_noise(t: ArrayLike, spec: NoiseSpec, m: Optional[int] = None) -> Array:
    """Noise value(s): shape ``(m,)`` for scalar ``t``, ``(len(t), m)`` otherwise."""
    m = m if m is not None else (spec.channels or 1)
    amps, freqs, phases = spec.per_channel(m)
    t_arr = np.asarray(t, dtype=np.float64)
    values = np.sum(amps * np.sin(freqs * t_arr[..., None, None] + phases), axis=-1)
    return values


def draw_noise_spec(cfg: NoiseConfig, m: int, h: int = 0) -> NoiseSpec:
    """Noise for sub-batch ``h``: explicit components, or a seeded random draw."""
    if cfg.explicit:
        return NoiseSpec(
            np.array(cfg.amplitudes), np.array(cfg.frequencies), np.array(cfg.phases)
        )
    rng = np.random.default_rng([cfg.seed, h])
    shape = (m, cfg.terms)
    return NoiseSpec(
        amplitudes=np.full(shape, cfg.amplitude),
        frequencies=rng.uniform(cfg.freq_low, cfg.freq_high, shape),
        phases=rng.uniform(0.0, 2.0 * math.pi, shape),
    )


def noise_family(cfg: NoiseConfig, m: int, l: int) -> List[NoiseSpec]:
    return [draw_noise_spec(cfg, m, h) for h in range(l)]


class InitialStateSampler(Protocol):
    """Distribution of the initial state of sub-batch ``h``."""

    n: int

    def sample(self, rng: np.random.Generator, h: int, size: int) -> Array: ...

    def mean(self, h: int) -> Array: ...

    def second_moment(self, h: int) -> Array: ...


@dataclass(frozen=True)
class StandardNormalInit:
    n: int

    def sample(self, rng: np.random.Generator, h: int, size: int) -> Array:
        return rng.standard_normal((size, self.n))

    def mean(self, h: int) -> Array:
        return np.zeros(self.n)

    def second_moment(self, h: int) -> Array:
        return np.eye(self.n)


@dataclass(frozen=True, eq=False)
class GaussianInit:
    sigma0: Array

    @property
    def n(self) -> int:
        return int(self.sigma0.shape[0])

    def sample(self, rng: np.random.Generator, h: int, size: int) -> Array:
        chol = np.linalg.cholesky(self.sigma0)
        return rng.standard_normal((size, self.n)) @ chol.T

    def mean(self, h: int) -> Array:
        return np.zeros(self.n)

    def second_moment(self, h: int) -> Array:
        return np.array(self.sigma0)


@dataclass(frozen=True, eq=False)
class FixedInit:
    """Deterministic initial state ``vectors[h]`` for sub-batch ``h``."""

    vectors: Array

    @property
    def n(self) -> int:
        return int(self.vectors.shape[1])

    def _vector(self, h: int) -> Array:
        if h >= len(self.vectors):
            raise ConfigError(f"no fixed initial state for sub-batch {h}")
        return np.asarray(self.vectors[h], dtype=np.float64)

    def sample(self, rng: np.random.Generator, h: int, size: int) -> Array:
        return np.tile(self._vector(h), (size, 1))

    def mean(self, h: int) -> Array:
        return self._vector(h)

    def second_moment(self, h: int) -> Array:
        x = self._vector(h)
        return np.outer(x, x)


def sampler_from_config(cfg: InitialStateConfig, n: int) -> InitialStateSampler:
    if cfg.distribution == "fixed":
        return FixedInit(np.array(cfg.vectors, dtype=np.float64))
    if cfg.distribution == "gaussian":
        return GaussianInit(np.array(cfg.sigma0, dtype=np.float64))
    return StandardNormalInit(n)


def behavior_control(gain: FeedbackGain, noise: Optional[NoiseSpec] = None) -> Control:
    """``u = K x + e(t)`` evaluated on a stack of states ``(N, n)``."""
    m = gain.shape[0]

    def control(t: float, x: Array) -> Array:
        u = x @ gain.T
        if noise is not None:
            u = u + exploration_noise(t, noise, m)
        return u

    return control


def _as_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _check_guard(x: Array, guard: float, t: float) -> None:
    if not np.all(np.isfinite(x)) or np.max(np.linalg.norm(x, axis=1), initial=0.0) > guard:
        logger.error("simulation_blowup", t=t, guard=guard)
        raise Blowup(f"state exceeded the overflow guard {guard:g} at t={t:.4g}")


def euler_maruyama(
    sys_alpha: StochasticLinearSystem,
    control: Control,
    x0: ArrayLike,
    cfg: SimConfig,
    path_seed: SeedLike,
) -> Tuple[Array, Array]:
    """Simulate paths on ``[0, t0]`` and record them at the ``n_grid + 1`` grid points.

    ``x0`` is a single state ``(n,)`` or a stack ``(N, n)`` simulated
    together with one Brownian increment per path and step.  Returns
    ``(states, inputs)`` of shapes ``(n_grid + 1, N, n)`` and
    ``(n_grid + 1, N, m)``.
    """
    rng = _as_rng(path_seed)
    x = np.array(x0, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != sys_alpha.n:
        raise DimensionError(f"initial states must have {sys_alpha.n} columns, got {x.shape}")

    a_t, b_t, c_t, d_t = sys_alpha.a.T, sys_alpha.b.T, sys_alpha.c.T, sys_alpha.d.T
    n_paths = x.shape[0]
    dt = cfg.resolved_dt()
    substeps = cfg.substeps()
    sqrt_dt = math.sqrt(dt)

    states = np.empty((cfg.n_grid + 1, n_paths, sys_alpha.n))
    inputs = np.empty((cfg.n_grid + 1, n_paths, sys_alpha.m))
    for q in range(cfg.n_grid + 1):
        t_q = q * cfg.grid_step
        _check_guard(x, cfg.overflow_guard, t_q)
        states[q] = x
        inputs[q] = control(t_q, x)
        if q == cfg.n_grid:
            break
        for s in range(substeps):
            t = t_q + s * dt
            u = inputs[q] if s == 0 else control(t, x)
            dw = rng.standard_normal(n_paths) * sqrt_dt
            x = x + (x @ a_t + u @ b_t) * dt + (x @ c_t + u @ d_t) * dw[:, None]
    return states, inputs


@dataclass(eq=False)
class TrajectoryBatch:
    """Sampled paths of ``l`` sub-batches on a shared grid."""

    times: Array
    states: Array  # (l, n_grid + 1, n_traj, n)
    inputs: Array  # (l, n_grid + 1, n_traj, m)
    gain: FeedbackGain
    noises: List[NoiseSpec]
    seeds: Array  # (l, 4) seed sequences of the path generators
    alpha: float = 0.0
    iteration: int = 0
    dt: float = 0.0
    master_seed: int = 0
    sigma0: Optional[Array] = None  # Sigma0 estimate used with this batch

    @property
    def l(self) -> int:
        return int(self.states.shape[0])

    @property
    def n(self) -> int:
        return int(self.states.shape[-1])

    @property
    def m(self) -> int:
        return int(self.inputs.shape[-1])

    @property
    def n_traj(self) -> int:
        return int(self.states.shape[2])

    @property
    def t0(self) -> float:
        return float(self.times[-1])

    @property
    def grid_step(self) -> float:
        return float(self.times[1] - self.times[0])

    def initial_states(self) -> Array:
        """All initial draws stacked to ``(l * n_traj, n)``."""
        return self.states[:, 0].reshape(-1, self.n)


def _simulate_sub_batch(
    sys_alpha: StochasticLinearSystem,
    k0: FeedbackGain,
    noise: NoiseSpec,
    sampler: InitialStateSampler,
    cfg: SimConfig,
    iteration: int,
    h: int,
) -> Tuple[Array, Array]:
    init_rng = np.random.default_rng([cfg.master_seed, iteration, h, 0])
    x0 = sampler.sample(init_rng, h, cfg.n_traj)
    control = behavior_control(k0, noise)
    return euler_maruyama(sys_alpha, control, x0, cfg, [cfg.master_seed, iteration, h, 1])


def collect_batch(
    sys_alpha: StochasticLinearSystem,
    k0: FeedbackGain,
    noise: Union[NoiseSpec, Sequence[NoiseSpec]],
    init_sampler: InitialStateSampler,
    cfg: SimConfig,
    iteration: int = 0,
    alpha: float = 0.0,
) -> TrajectoryBatch:
    """Simulate ``l`` sub-batches of ``n_traj`` paths under ``u = k0 x + e``.

    ``noise`` is either one spec shared by every sub-batch (``cfg.l`` must
    then be set) or one spec per sub-batch.
    """
    k0 = sys_alpha.check_gain(k0)
    if isinstance(noise, NoiseSpec):
        if cfg.l is None:
            raise ConfigError("a single noise spec needs sim.l to fix the number of sub-batches")
        noises = [noise] * cfg.l
    else:
        noises = list(noise)
    l = len(noises)

    def run(h: int) -> Tuple[Array, Array]:
        return _simulate_sub_batch(sys_alpha, k0, noises[h], init_sampler, cfg, iteration, h)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            paths = list(pool.map(run, range(l)))
    else:
        paths = [run(h) for h in range(l)]

    logger.debug("batch_collected", l=l, n_traj=cfg.n_traj, alpha=alpha, iteration=iteration)
    return TrajectoryBatch(
        times=np.linspace(0.0, cfg.t0, cfg.n_grid + 1),
        states=np.stack([p[0] for p in paths]),
        inputs=np.stack([p[1] for p in paths]),
        gain=k0,
        noises=noises,
        seeds=np.array([[cfg.master_seed, iteration, h, 1] for h in range(l)], dtype=np.int64),
        alpha=alpha,
        iteration=iteration,
        dt=cfg.resolved_dt(),
        master_seed=cfg.master_seed,
    )


def estimate_sigma0(samples: ArrayLike) -> Array:
    """Sample second moment ``(1/N) sum x x'``."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("estimate_sigma0 needs at least two samples of shape (N, n)")
    s = x.T @ x / x.shape[0]
    return 0.5 * (s + s.T)


def draw_sigma0(sampler: InitialStateSampler, count: int, seed: SeedLike) -> Array:
    """Sigma0 estimated from ``count`` fresh draws of the initial-state distribution."""
    return estimate_sigma0(sampler.sample(_as_rng(seed), 0, count))


def aux_seed(master_seed: int, iteration: int, l: int, stream: int) -> List[int]:
    return [master_seed, iteration, l, stream]


@dataclass(eq=False)
class AdpDataMatrices:
    """Policy-independent data matrices; one row per sub-batch."""

    xi: Array  # (l, n(n+1)/2)
    i_xx: Array  # (l, n^2)
    i_xu: Array  # (l, n m)
    m_u: Array  # (l, m(m+1)/2)

    def __post_init__(self) -> None:
        rows = {len(self.xi), len(self.i_xx), len(self.i_xu), len(self.m_u)}
        if len(rows) != 1:
            raise DimensionError(f"data matrices have differing row counts {sorted(rows)}")
        for name in ("xi", "i_xx", "i_xu", "m_u"):
            value = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(value)):
                raise ValueError(f"data matrix {name} has non-finite entries")
            setattr(self, name, value)

    @property
    def l(self) -> int:
        return int(self.xi.shape[0])

    @property
    def n(self) -> int:
        return int(round(math.sqrt(self.i_xx.shape[1])))

    @property
    def m(self) -> int:
        return self.i_xu.shape[1] // self.n

    @property
    def gram(self) -> Array:
        """``E int X X' ds`` per row, shape ``(l, n, n)``."""
        return self.i_xx.reshape(self.l, self.n, self.n)


def quadrature_weights(n_grid: int, step: float, rule: str = "left") -> Array:
    """Weights on the ``n_grid + 1`` grid points for ``int_0^t0``."""
    if rule == "left":
        w = np.full(n_grid + 1, step)
        w[-1] = 0.0
    elif rule == "trapezoid":
        w = np.full(n_grid + 1, step)
        w[[0, -1]] = 0.5 * step
    else:
        raise ValueError(f"unknown quadrature rule {rule!r}")
    return w


def _sub_batch_rows(states: Array, inputs: Array, weights: Array) -> Tuple[Array, Array, Array, Array]:
    n_traj = states.shape[1]
    xi = matops.mcal(states[-1]).mean(axis=0) - matops.mcal(states[0]).mean(axis=0)
    g_xx = np.einsum("q,qki,qkj->ij", weights, states, states) / n_traj
    g_xu = np.einsum("q,qki,qkj->ij", weights, states, inputs) / n_traj
    g_uu = np.einsum("q,qki,qkj->ij", weights, inputs, inputs) / n_traj
    return xi, g_xx.reshape(-1), g_xu.reshape(-1), matops.mcal_expected(g_uu)


def build_static_matrices(batch: TrajectoryBatch, quadrature: str = "left") -> AdpDataMatrices:
    """Monte Carlo estimates of ``Xi``, ``I_xx``, ``I_xu`` and ``M_u``."""
    if batch.l == 0 or batch.n_traj == 0:
        raise ValueError("batch is empty")
    weights = quadrature_weights(len(batch.times) - 1, batch.grid_step, quadrature)
    rows = [_sub_batch_rows(batch.states[h], batch.inputs[h], weights) for h in range(batch.l)]
    return AdpDataMatrices(
        xi=np.stack([r[0] for r in rows]),
        i_xx=np.stack([r[1] for r in rows]),
        i_xu=np.stack([r[2] for r in rows]),
        m_u=np.stack([r[3] for r in rows]),
    )


class HasGram(Protocol):
    @property
    def gram(self) -> Array: ...


def build_policy_matrices(
    data: HasGram, k_i: FeedbackGain, q: Array, r: Array
) -> Tuple[Array, Array]:
    """``(M_kx, J_k)`` for gain ``k_i`` from the stored grams; no new simulation."""
    gram = data.gram
    k_i = np.asarray(k_i, dtype=np.float64)
    if k_i.shape[1] != gram.shape[-1]:
        raise DimensionError(f"gain has {k_i.shape[1]} columns, data has n={gram.shape[-1]}")
    m_kx = matops.mcal_expected(np.einsum("ai,hij,bj->hab", k_i, gram, k_i))
    weight = q + k_i.T @ r @ k_i
    j_k = -np.einsum("ij,hji->h", weight, gram)
    return m_kx, j_k


def save_batch(path: Union[str, Path], batch: TrajectoryBatch) -> Path:
    """Write a batch to an ``.npz`` archive with JSON metadata."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    per_channel = [spec.per_channel(batch.m) for spec in batch.noises]
    metadata: Dict[str, Any] = {
        "format_version": BATCH_FORMAT_VERSION,
        "alpha": batch.alpha,
        "iteration": batch.iteration,
        "dt": batch.dt,
        "master_seed": batch.master_seed,
    }
    with path.open("wb") as fh:
        np.savez(
            fh,
            times=batch.times,
            states=batch.states,
            inputs=batch.inputs,
            gain=batch.gain,
            seeds=batch.seeds,
            noise_amplitudes=np.stack([np.array(c[0]) for c in per_channel]),
            noise_frequencies=np.stack([np.array(c[1]) for c in per_channel]),
            noise_phases=np.stack([np.array(c[2]) for c in per_channel]),
            metadata=np.array(json.dumps(metadata)),
            **({"sigma0": batch.sigma0} if batch.sigma0 is not None else {}),
        )
    logger.info("batch_saved", path=str(path), l=batch.l, n_traj=batch.n_traj)
    return path


def load_batch(path: Union[str, Path]) -> TrajectoryBatch:
    with np.load(Path(path), allow_pickle=False) as archive:
        metadata = json.loads(str(archive["metadata"]))
        if metadata.get("format_version") != BATCH_FORMAT_VERSION:
            raise ConfigError(f"unsupported batch format {metadata.get('format_version')}")
        noises = [
            NoiseSpec(a, f, p)
            for a, f, p in zip(
                archive["noise_amplitudes"], archive["noise_frequencies"], archive["noise_phases"]
            )
        ]
        return TrajectoryBatch(
            times=archive["times"],
            states=archive["states"],
            inputs=archive["inputs"],
            gain=archive["gain"],
            noises=noises,
            seeds=archive["seeds"],
            alpha=float(metadata["alpha"]),
            iteration=int(metadata["iteration"]),
            dt=float(metadata["dt"]),
            master_seed=int(metadata["master_seed"]),
            sigma0=archive["sigma0"] if "sigma0" in archive.files else None,
        )


def rollout_config(sim: SimConfig, horizon: Optional[float] = None, n_traj: Optional[int] = None) -> SimConfig:
    """Settings for closed-loop rollouts over ``[0, horizon]`` on the data grid spacing."""
    horizon = horizon if horizon is not None else sim.rollout_horizon
    n_grid = max(1, int(round(horizon / sim.grid_step)))
    return sim.model_copy(
        update={
            "t0": n_grid * sim.grid_step,
            "n_grid": n_grid,
            "dt": sim.resolved_dt(),
            "n_traj": n_traj if n_traj is not None else sim.rollout_n_traj,
        }
    )


def rollout_cost(
    sys_alpha: StochasticLinearSystem,
    k: FeedbackGain,
    spec: CostSpec,
    sim: SimConfig,
    sampler: InitialStateSampler,
    seed: SeedLike = 0,
) -> float:
    """Discounted cost of ``u = K x`` estimated from closed-loop paths.

    The running cost ``x'Qx + u'Ru`` is averaged over paths and integrated
    in time with the trapezoidal rule over a truncated horizon.
    """
    k = sys_alpha.check_gain(k)
    cfg = rollout_config(sim)
    rng = _as_rng(seed)
    x0 = sampler.sample(rng, 0, cfg.n_traj)
    states, inputs = euler_maruyama(sys_alpha, behavior_control(k), x0, cfg, rng)
    running = np.einsum("qki,ij,qkj->q", states, spec.q, states) + np.einsum(
        "qki,ij,qkj->q", inputs, spec.r, inputs
    )
    running /= cfg.n_traj
    times = np.linspace(0.0, cfg.t0, cfg.n_grid + 1)
    return float(scipy.integrate.trapezoid(running, times))


def fit_on_policy_value(second_moments: Array, interval_costs: Array, rcond: float = 1e-10) -> Array:
    """Least-squares ``P`` from ``E x'Px (s_q) - E x'Px (s_q+1) = E int_{s_q}^{s_q+1} x'(Q + K'RK)x``.

    ``second_moments`` holds ``E x x'`` at the grid points and
    ``interval_costs`` the running-cost integral over each interval.  The
    minimum-norm solution is returned when the rows do not determine every
    entry of ``P``; ``Tr(P Sigma0)`` stays determined because the rows sum
    to ``Sigma0 - E x x'(end)``.
    """
    n = second_moments.shape[-1]
    features = matops.mcal_expected(second_moments)
    rows = features[:-1] - features[1:]
    if len(interval_costs) != len(rows):
        raise DimensionError(f"{len(rows)} grid intervals but {len(interval_costs)} interval costs")
    x, _, rank, _ = scipy.linalg.lstsq(rows, interval_costs, cond=rcond)
    if rank < rows.shape[1]:
        logger.debug("on_policy_rank_deficient", rank=int(rank), unknowns=rows.shape[1])
    return matops.unvech(x, n)


def on_policy_value(
    sys_alpha: StochasticLinearSystem,
    k: FeedbackGain,
    spec: CostSpec,
    sim: SimConfig,
    sampler: InitialStateSampler,
    seed: SeedLike = 0,
) -> Array:
    """Value matrix of ``u = K x`` fitted from fresh closed-loop paths.

    Paths run over the rollout horizon on the data grid spacing; sample
    means of ``x x'`` and of the running cost feed ``fit_on_policy_value``.
    """
    k = sys_alpha.check_gain(k)
    cfg = rollout_config(sim)
    rng = _as_rng(seed)
    x0 = sampler.sample(rng, 0, cfg.n_traj)
    states, _ = euler_maruyama(sys_alpha, behavior_control(k), x0, cfg, rng)
    second = np.einsum("qki,qkj->qij", states, states) / cfg.n_traj
    running = np.einsum("ij,qji->q", spec.stage_weight(k), second)
    return fit_on_policy_value(second, 0.5 * cfg.grid_step * (running[:-1] + running[1:]))


def mean_trajectory(
    sys: StochasticLinearSystem,
    k: FeedbackGain,
    sampler: InitialStateSampler,
    sim: SimConfig,
    horizon: float,
    seed: SeedLike = 0,
) -> Tuple[Array, Array]:
    """Sample mean of the closed-loop state under ``u = K x``: ``(times, means)``."""
    k = sys.check_gain(k)
    cfg = rollout_config(sim, horizon=horizon, n_traj=sim.n_traj)
    rng = _as_rng(seed)
    x0 = sampler.sample(rng, 0, cfg.n_traj)
    states, _ = euler_maruyama(sys, behavior_control(k), x0, cfg, rng)
    return np.linspace(0.0, cfg.t0, cfg.n_grid + 1), states.mean(axis=1)
