"""Dense matrix primitives: Kronecker products, vectorization, the
symmetric duplication map and eigenvalue utilities.

Half-vectorization convention
-----------------------------
``vech`` walks the upper triangle row by row and DOUBLES the strictly
off-diagonal entries::

    vech([[a, b], [b, c]]) == [a, 2b, c]

Most texts use the undoubled half-vectorization. Because the doubling
lives in ``vech``, the duplication matrix ``gamma_matrix(n)`` that maps
``vech(V)`` back to ``vec(V)`` carries compensating ``1/2`` entries, and
the quadratic-form feature map satisfies ``mcal(v) @ vech(V) == v' V v``.
"""

from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from stabsynth.exceptions import DimensionError, EigenSolverError, SymmetryError

Array = NDArray[np.float64]

SYMMETRY_RTOL = 1e-9
PD_RTOL = 1e-10


def as_matrix(a: ArrayLike, name: str = "matrix") -> Array:
    """Convert to a finite 2-D float array."""
    arr = np.array(a, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def as_symmetric(v: ArrayLike, name: str = "matrix") -> Array:
    """Validate near-symmetry and return the exactly symmetric part.

    Accepts asymmetry up to ``1e-9 * (1 + ||V||_F)``; least-squares
    recovery of value matrices produces tiny asymmetries.
    """
    arr = as_matrix(v, name)
    if arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {arr.shape}")
    asym = float(np.max(np.abs(arr - arr.T))) if arr.size else 0.0
    if asym > SYMMETRY_RTOL * (1.0 + fro_norm(arr)):
        raise SymmetryError(f"{name} is not symmetric (max asymmetry {asym:.3e})")
    return 0.5 * (arr + arr.T)


def kron(a: ArrayLike, b: ArrayLike) -> Array:
    return np.kron(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))


def vec(a: ArrayLike) -> Array:
    """Stack the columns of ``a`` into one vector."""
    return np.asarray(a, dtype=np.float64).reshape(-1, order="F")


def unvec(x: ArrayLike, rows: int, cols: int) -> Array:
    return np.asarray(x, dtype=np.float64).reshape((rows, cols), order="F")


def vech_size(n: int) -> int:
    return n * (n + 1) // 2


@lru_cache(maxsize=None)
def _upper_indices(n: int) -> Tuple[NDArray[np.intp], NDArray[np.intp]]:
    rows, cols = np.triu_indices(n)
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


def vech(v: ArrayLike) -> Array:
    """Half-vectorize a symmetric matrix with doubled off-diagonals."""
    sym = as_symmetric(v, "vech argument")
    rows, cols = _upper_indices(sym.shape[0])
    return sym[rows, cols] * np.where(rows == cols, 1.0, 2.0)


def unvech(x: ArrayLike, n: int) -> Array:
    """Inverse of ``vech``: rebuild the symmetric matrix, undoing the doubling."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != vech_size(n):
        raise DimensionError(f"expected {vech_size(n)} entries for n={n}, got {x.size}")
    rows, cols = _upper_indices(n)
    out = np.zeros((n, n))
    out[rows, cols] = x * np.where(rows == cols, 1.0, 0.5)
    out[cols, rows] = out[rows, cols]
    return out


@lru_cache(maxsize=None)
def _gamma(n: int) -> Array:
    rows, cols = _upper_indices(n)
    gamma = np.zeros((n * n, vech_size(n)))
    for col, (i, j) in enumerate(zip(rows, cols)):
        if i == j:
            gamma[i + j * n, col] = 1.0
        else:
            gamma[i + j * n, col] = 0.5
            gamma[j + i * n, col] = 0.5
    gamma.setflags(write=False)
    return gamma


def gamma_matrix(n: int) -> Array:
    """Duplication matrix with ``gamma_matrix(n) @ vech(V) == vec(V)``."""
    if n < 1:
        raise DimensionError("n must be at least 1")
    return _gamma(n)


def mcal(v: ArrayLike) -> Array:
    """Quadratic-form features: ``mcal(v) @ vech(V) == v' V v``.

    Accepts a single vector ``(n,)`` or a stack ``(..., n)``; the result
    has trailing dimension ``n(n+1)/2`` (the products ``v_i v_j``, i <= j).
    """
    arr = np.asarray(v, dtype=np.float64)
    rows, cols = _upper_indices(arr.shape[-1])
    return arr[..., rows] * arr[..., cols]


def mcal_expected(second_moment: ArrayLike) -> Array:
    """``E[mcal(v)]`` from the second moment ``E[v v']`` (stacks allowed)."""
    arr = np.asarray(second_moment, dtype=np.float64)
    rows, cols = _upper_indices(arr.shape[-1])
    return arr[..., rows, cols]


def eig_sym(v: ArrayLike) -> Array:
    """Eigenvalues of a symmetric matrix in nondecreasing order."""
    sym = as_symmetric(v, "eig_sym argument")
    try:
        return scipy.linalg.eigh(sym, eigvals_only=True)
    except np.linalg.LinAlgError as exc:
        raise EigenSolverError(f"symmetric eigen-solver failed: {exc}") from exc


def eig_sym_vectors(v: ArrayLike) -> Tuple[Array, Array]:
    """Eigenvalues and orthonormal eigenvectors (as columns)."""
    sym = as_symmetric(v, "eig_sym argument")
    try:
        w, e = scipy.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        raise EigenSolverError(f"symmetric eigen-solver failed: {exc}") from exc
    return w, e


def lambda_min(v: ArrayLike) -> float:
    return float(eig_sym(v)[0])


def lambda_max(v: ArrayLike) -> float:
    return float(eig_sym(v)[-1])


def spectral_norm(a: ArrayLike) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=np.float64), 2))


def trace(a: ArrayLike) -> float:
    return float(np.trace(np.asarray(a, dtype=np.float64)))


def fro_norm(a: ArrayLike) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=np.float64), "fro"))


def spectral_abscissa(a: ArrayLike) -> float:
    """Largest real part among the eigenvalues of a general square matrix."""
    return float(np.max(np.linalg.eigvals(np.asarray(a, dtype=np.float64)).real))


def _pd_margin(sym: Array, margin: Optional[float]) -> float:
    if margin is not None:
        return margin
    return PD_RTOL * (1.0 + spectral_norm(sym))


def is_positive_definite(v: ArrayLike, margin: Optional[float] = None) -> bool:
    sym = as_symmetric(v, "matrix")
    return lambda_min(sym) > _pd_margin(sym, margin)


def is_positive_semidefinite(v: ArrayLike, margin: Optional[float] = None) -> bool:
    sym = as_symmetric(v, "matrix")
    return lambda_min(sym) >= -_pd_margin(sym, margin)
