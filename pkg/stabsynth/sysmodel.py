"""Plant and objective for Ito-type stochastic linear systems.

The plant is ``dX = (A X + B u) dt + (C X + D u) dW`` with a scalar
Brownian motion ``W``; the objective weights are ``(Q, R)`` and the
initial state second moment ``Sigma0``.  Discounting by ``alpha`` is
carried as the drift shift ``A - alpha I``.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg
import structlog
from numpy.typing import ArrayLike

from stabsynth import matops
from stabsynth.exceptions import (
    DimensionError,
    NonPositiveCost,
    NonPositiveSolution,
    SingularGenerator,
    VerificationError,
)
from stabsynth.matops import Array

logger = structlog.get_logger(__name__)

# Type aliases: an m x n gain and a symmetric n x n value matrix.
FeedbackGain = Array
ValueMatrix = Array

LYAP_RTOL = 1e-10
SINGULAR_RCOND = 1e-13


def _frozen(arr: Array) -> Array:
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StochasticLinearSystem:
    """The coefficient quadruple ``[A, C; B, D]``."""

    a: Array
    b: Array
    c: Array
    d: Array

    def __post_init__(self) -> None:
        a = matops.as_matrix(self.a, "A")
        b = matops.as_matrix(self.b, "B")
        c = matops.as_matrix(self.c, "C")
        d = matops.as_matrix(self.d, "D")
        n = a.shape[0]
        if a.shape != (n, n):
            raise DimensionError(f"A must be square, got {a.shape}")
        if c.shape != (n, n):
            raise DimensionError(f"C must be {n}x{n}, got {c.shape}")
        if b.shape[0] != n or b.shape[1] < 1:
            raise DimensionError(f"B must be {n}xm, got {b.shape}")
        if d.shape != b.shape:
            raise DimensionError(f"D must be {b.shape[0]}x{b.shape[1]}, got {d.shape}")
        for name, value in (("a", a), ("b", b), ("c", c), ("d", d)):
            object.__setattr__(self, name, _frozen(value))

    @property
    def n(self) -> int:
        return int(self.a.shape[0])

    @property
    def m(self) -> int:
        return int(self.b.shape[1])

    def check_gain(self, k: ArrayLike) -> FeedbackGain:
        gain = matops.as_matrix(k, "K")
        if self.m == 1 and gain.shape == (self.n, 1):
            gain = gain.T
        if gain.shape != (self.m, self.n):
            raise DimensionError(f"gain must be {self.m}x{self.n}, got {gain.shape}")
        return gain

    def zero_gain(self) -> FeedbackGain:
        return np.zeros((self.m, self.n))


@dataclass(frozen=True, eq=False)
class CostSpec:
    """Weights, initial-state second moment and cost-inflation factor."""

    q: Array
    r: Array
    sigma0: Array
    zeta: float

    def __post_init__(self) -> None:
        q = matops.as_symmetric(self.q, "Q")
        r = matops.as_symmetric(self.r, "R")
        sigma0 = matops.as_symmetric(self.sigma0, "Sigma0")
        if sigma0.shape != q.shape:
            raise DimensionError(f"Sigma0 must match Q {q.shape}, got {sigma0.shape}")
        for name, value in (("Q", q), ("R", r), ("Sigma0", sigma0)):
            if not matops.is_positive_definite(value):
                raise ValueError(f"{name} must be positive definite")
        if not self.zeta > 1.0:
            raise ValueError(f"zeta must exceed 1, got {self.zeta}")
        object.__setattr__(self, "q", _frozen(q))
        object.__setattr__(self, "r", _frozen(r))
        object.__setattr__(self, "sigma0", _frozen(sigma0))
        object.__setattr__(self, "zeta", float(self.zeta))

    def check_system(self, sys: StochasticLinearSystem) -> None:
        if self.q.shape != (sys.n, sys.n) or self.r.shape != (sys.m, sys.m):
            raise DimensionError(
                f"cost weights {self.q.shape}, {self.r.shape} do not fit "
                f"a system with n={sys.n}, m={sys.m}"
            )

    def with_sigma0(self, sigma0: ArrayLike) -> "CostSpec":
        return CostSpec(q=self.q, r=self.r, sigma0=np.asarray(sigma0), zeta=self.zeta)

    def stage_weight(self, k: FeedbackGain) -> Array:
        """``Q + K' R K``."""
        return self.q + k.T @ self.r @ k


def shift(sys: StochasticLinearSystem, alpha: float) -> StochasticLinearSystem:
    """Discount transform: ``A -> A - alpha I``; any real alpha is allowed."""
    return StochasticLinearSystem(
        a=sys.a - alpha * np.eye(sys.n), b=sys.b, c=sys.c, d=sys.d
    )


def closed_loop(sys: StochasticLinearSystem, k: ArrayLike) -> Tuple[Array, Array]:
    """Return ``(A + B K, C + D K)``."""
    gain = sys.check_gain(k)
    return sys.a + sys.b @ gain, sys.c + sys.d @ gain


def closed_loop_generator(sys: StochasticLinearSystem, k: ArrayLike) -> Array:
    """Matrix of ``P -> Acl'P + P Acl + Ccl'P Ccl`` acting on ``vec(P)``."""
    acl, ccl = closed_loop(sys, k)
    eye = np.eye(sys.n)
    return (
        matops.kron(eye, acl.T)
        + matops.kron(acl.T, eye)
        + matops.kron(ccl.T, ccl.T)
    )


def _lyapunov_residual(acl: Array, ccl: Array, p: Array, lam: Array, dual: bool) -> float:
    if dual:
        res = acl @ p + p @ acl.T + ccl @ p @ ccl.T + lam
    else:
        res = acl.T @ p + p @ acl + ccl.T @ p @ ccl + lam
    return matops.fro_norm(res)


def _solve_generator(
    sys: StochasticLinearSystem,
    k: ArrayLike,
    lam: ArrayLike,
    require_pd: Optional[bool],
    dual: bool,
) -> ValueMatrix:
    gain = sys.check_gain(k)
    lam = matops.as_symmetric(lam, "Lambda")
    if lam.shape != (sys.n, sys.n):
        raise DimensionError(f"right-hand side must be {sys.n}x{sys.n}, got {lam.shape}")

    gen = closed_loop_generator(sys, gain)
    if dual:
        gen = gen.T
    rcond = 1.0 / np.linalg.cond(gen)
    if not np.isfinite(rcond) or rcond < SINGULAR_RCOND:
        raise SingularGenerator(f"Lyapunov generator is singular (rcond={rcond:.2e})")

    lu = scipy.linalg.lu_factor(gen)
    rhs = -matops.vec(lam)
    x = scipy.linalg.lu_solve(lu, rhs)

    acl, ccl = closed_loop(sys, gain)
    tol = LYAP_RTOL * (1.0 + matops.fro_norm(lam))
    p = matops.unvec(x, sys.n, sys.n)
    p = 0.5 * (p + p.T)
    residual = _lyapunov_residual(acl, ccl, p, lam, dual)
    if residual > tol:
        # one step of iterative refinement
        x = x + scipy.linalg.lu_solve(lu, rhs - gen @ x)
        p = matops.unvec(x, sys.n, sys.n)
        p = 0.5 * (p + p.T)
        residual = _lyapunov_residual(acl, ccl, p, lam, dual)
        if residual > tol:
            logger.warning("lyapunov_residual_above_tolerance", residual=residual, tol=tol)

    if require_pd is None:
        require_pd = matops.is_positive_definite(lam)
    if require_pd and not matops.is_positive_definite(p):
        raise NonPositiveSolution(
            f"Lyapunov solution is not positive definite "
            f"(lambda_min={matops.lambda_min(p):.3e})"
        )
    return p


def solve_lyapunov(
    sys: StochasticLinearSystem,
    k: ArrayLike,
    lam: ArrayLike,
    require_pd: Optional[bool] = None,
) -> ValueMatrix:
    """Solve ``Acl'P + P Acl + Ccl'P Ccl + Lambda = 0`` for symmetric ``P``.

    Dense Kronecker solve of size ``n^2``.  When ``Lambda`` is positive
    definite (or ``require_pd`` is set) the solution must be positive
    definite, otherwise ``NonPositiveSolution`` is raised; a numerically
    singular generator raises ``SingularGenerator``.  Both signal that
    ``k`` does not stabilize ``sys``.
    """
    return _solve_generator(sys, k, lam, require_pd, dual=False)


def solve_dual_lyapunov(
    sys: StochasticLinearSystem,
    k: ArrayLike,
    v: ArrayLike,
    require_pd: Optional[bool] = None,
) -> Array:
    """Solve ``Acl Y + Y Acl' + Ccl Y Ccl' + V = 0`` for symmetric ``Y``."""
    return _solve_generator(sys, k, v, require_pd, dual=True)


def is_ms_stabilizer(
    sys: StochasticLinearSystem, k: ArrayLike, cross_check: bool = False
) -> bool:
    """Mean-square stabilizer test through the Lyapunov equation with ``Lambda = I``.

    With ``cross_check`` the verdict is compared against the sign of the
    spectral abscissa of the closed-loop generator; a disagreement raises
    ``VerificationError``.
    """
    gain = sys.check_gain(k)
    try:
        solve_lyapunov(sys, gain, np.eye(sys.n), require_pd=True)
        verdict = True
    except (SingularGenerator, NonPositiveSolution):
        verdict = False

    if cross_check:
        abscissa = matops.spectral_abscissa(closed_loop_generator(sys, gain))
        if verdict != (abscissa < 0):
            raise VerificationError(
                f"Lyapunov test ({verdict}) disagrees with spectral abscissa {abscissa:.3e}"
            )
    return verdict


def evaluate(
    sys_alpha: StochasticLinearSystem, k: ArrayLike, spec: CostSpec
) -> Tuple[float, ValueMatrix]:
    """Return ``(Tr(P Sigma0), P)`` with ``P`` the value matrix of ``k``."""
    gain = sys_alpha.check_gain(k)
    spec.check_system(sys_alpha)
    p = solve_lyapunov(sys_alpha, gain, spec.stage_weight(gain))
    value = matops.trace(p @ spec.sigma0)
    if not value > 0:
        raise NonPositiveCost(f"cost {value} is not positive")
    return value, p


def cost(sys_alpha: StochasticLinearSystem, k: ArrayLike, spec: CostSpec) -> float:
    """Discounted cost ``J_alpha(K) = Tr(P_alpha Sigma0)``."""
    return evaluate(sys_alpha, k, spec)[0]
