import numpy as np
import pytest

from stabsynth import matops
from stabsynth.exceptions import DimensionError, SymmetryError


def random_symmetric(rng, n):
    x = rng.standard_normal((n, n))
    return x + x.T


class TestConversion:
    """Test cases for matrix coercion and symmetry checks."""

    def test_scalar_becomes_one_by_one(self):
        """Test a scalar is promoted to a 1x1 matrix."""
        assert matops.as_matrix(3.0).shape == (1, 1)

    def test_vector_becomes_column(self):
        """Test a flat vector is promoted to a column."""
        assert matops.as_matrix([1.0, 2.0, 3.0]).shape == (3, 1)

    def test_non_finite_rejected(self):
        """Test NaN entries are rejected."""
        with pytest.raises(ValueError, match="non-finite"):
            matops.as_matrix([[1.0, np.nan]])

    def test_three_dimensional_rejected(self):
        """Test arrays with more than two axes are rejected."""
        with pytest.raises(DimensionError):
            matops.as_matrix(np.zeros((2, 2, 2)))

    def test_tiny_asymmetry_is_symmetrized(self):
        """Test asymmetry below tolerance is accepted and removed."""
        v = np.array([[1.0, 2.0], [2.0 + 1e-12, 3.0]])
        sym = matops.as_symmetric(v)
        assert np.array_equal(sym, sym.T)
        assert sym[0, 1] == pytest.approx(2.0, abs=1e-11)

    def test_asymmetry_beyond_tolerance_rejected(self):
        """Test clearly asymmetric input raises SymmetryError."""
        with pytest.raises(SymmetryError):
            matops.as_symmetric([[1.0, 2.0], [0.0, 1.0]])

    def test_non_square_rejected(self):
        """Test a rectangular matrix is not accepted as symmetric."""
        with pytest.raises(DimensionError):
            matops.as_symmetric(np.zeros((2, 3)))


class TestKronecker:
    """Test cases for Kronecker products and vectorization."""

    def test_kron_by_hand(self):
        """Test the Kronecker product against a hand-computed value."""
        expected = np.array(
            [[0, 1, 0, 2], [1, 0, 2, 0], [0, 3, 0, 4], [3, 0, 4, 0]], dtype=float
        )
        assert np.array_equal(matops.kron([[1, 2], [3, 4]], [[0, 1], [1, 0]]), expected)

    def test_vec_stacks_columns(self):
        """Test vec stacks columns, not rows."""
        assert np.array_equal(matops.vec([[1, 2], [3, 4]]), [1.0, 3.0, 2.0, 4.0])

    def test_unvec_inverts_vec(self):
        """Test unvec restores the matrix vec flattened."""
        a = np.arange(6.0).reshape(2, 3)
        assert np.array_equal(matops.unvec(matops.vec(a), 2, 3), a)

    def test_vec_inner_product_is_trace(self):
        """Test vec(a)'vec(b) equals Tr(a'b)."""
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
        assert matops.vec(a) @ matops.vec(b) == pytest.approx(np.trace(a.T @ b))

    def test_kron_vec_identity(self):
        """Test vec(AXB) = (B' kron A) vec(X)."""
        rng = np.random.default_rng(2)
        a, x, b = (rng.standard_normal((3, 3)) for _ in range(3))
        lhs = matops.vec(a @ x @ b)
        rhs = matops.kron(b.T, a) @ matops.vec(x)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    @pytest.mark.parametrize("seed", range(100))
    def test_mixed_product(self, seed):
        """Test (A kron B)(C kron D) = AC kron BD on random shapes."""
        rng = np.random.default_rng(seed)
        p, q, r, s, t, u = rng.integers(1, 4, size=6)
        a, b = rng.standard_normal((p, q)), rng.standard_normal((r, s))
        c, d = rng.standard_normal((q, t)), rng.standard_normal((s, u))
        np.testing.assert_allclose(
            matops.kron(a, b) @ matops.kron(c, d), matops.kron(a @ c, b @ d), atol=1e-12
        )


class TestHalfVectorization:
    """Test cases for vech, the duplication matrix and quadratic features."""

    def test_vech_doubles_off_diagonal(self):
        """Test vech walks the upper triangle and doubles off-diagonals."""
        assert np.array_equal(matops.vech([[1.0, 2.0], [2.0, 3.0]]), [1.0, 4.0, 3.0])

    def test_vech_size(self):
        """Test the half-vectorization length."""
        assert [matops.vech_size(n) for n in (1, 2, 3, 4)] == [1, 3, 6, 10]

    def test_unvech_wrong_length(self):
        """Test unvech rejects a vector of the wrong length."""
        with pytest.raises(DimensionError):
            matops.unvech(np.zeros(4), 2)

    def test_gamma_has_half_entries(self):
        """Test the duplication matrix compensates the doubling."""
        gamma = matops.gamma_matrix(2)
        assert gamma.shape == (4, 3)
        assert set(np.unique(gamma)) == {0.0, 0.5, 1.0}

    def test_gamma_is_read_only(self):
        """Test the cached duplication matrix cannot be mutated."""
        with pytest.raises(ValueError):
            matops.gamma_matrix(3)[0, 0] = 5.0

    @pytest.mark.parametrize("seed", range(100))
    def test_identities_on_random_matrices(self, seed):
        """Test vec = Gamma vech, unvech(vech) = V and v'Vv = mcal(v)'vech(V)."""
        rng = np.random.default_rng(seed)
        n = 2 + seed % 5
        v = random_symmetric(rng, n)
        nu = rng.standard_normal(n)
        np.testing.assert_allclose(
            matops.gamma_matrix(n) @ matops.vech(v), matops.vec(v), atol=1e-12
        )
        np.testing.assert_allclose(matops.unvech(matops.vech(v), n), v, atol=1e-12)
        assert matops.mcal(nu) @ matops.vech(v) == pytest.approx(nu @ v @ nu, rel=1e-10, abs=1e-10)

    def test_mcal_on_stack(self):
        """Test mcal maps a stack of vectors row by row."""
        stack = np.array([[1.0, 2.0], [3.0, -1.0]])
        expected = np.array([[1.0, 2.0, 4.0], [9.0, -3.0, 1.0]])
        assert np.array_equal(matops.mcal(stack), expected)

    def test_mcal_expected_matches_sample_mean(self):
        """Test the upper triangle of E[vv'] equals the mean of mcal(v)."""
        rng = np.random.default_rng(5)
        samples = rng.standard_normal((50, 3))
        second = samples.T @ samples / 50
        np.testing.assert_allclose(
            matops.mcal_expected(second), matops.mcal(samples).mean(axis=0), atol=1e-12
        )


class TestEigen:
    """Test cases for eigenvalue utilities and definiteness tests."""

    def test_eigenvalues_sorted(self):
        """Test eigenvalues come back in nondecreasing order."""
        w = matops.eig_sym(np.diag([3.0, -1.0, 2.0]))
        assert np.array_equal(w, [-1.0, 2.0, 3.0])

    def test_reconstruction(self):
        """Test V = E diag(w) E' to solver precision."""
        rng = np.random.default_rng(11)
        v = random_symmetric(rng, 4)
        w, e = matops.eig_sym_vectors(v)
        np.testing.assert_allclose(e @ np.diag(w) @ e.T, v, atol=1e-10)

    def test_extremes(self):
        """Test lambda_min and lambda_max."""
        v = np.array([[2.0, 1.0], [1.0, 2.0]])
        assert matops.lambda_min(v) == pytest.approx(1.0)
        assert matops.lambda_max(v) == pytest.approx(3.0)

    def test_spectral_abscissa(self):
        """Test the largest real part of a non-symmetric matrix."""
        assert matops.spectral_abscissa([[-1.0, 5.0], [0.0, -2.0]]) == pytest.approx(-1.0)

    def test_positive_definite(self):
        """Test the definiteness predicates."""
        assert matops.is_positive_definite(np.eye(2))
        assert not matops.is_positive_definite(np.diag([1.0, 0.0]))
        assert matops.is_positive_semidefinite(np.diag([1.0, 0.0]))
        assert not matops.is_positive_semidefinite(np.diag([1.0, -0.1]))

    def test_explicit_margin(self):
        """Test a caller-supplied margin replaces the default."""
        assert not matops.is_positive_definite(np.diag([1.0, 1e-3]), margin=1e-2)
        assert matops.is_positive_semidefinite(np.diag([1.0, -1e-3]), margin=1e-2)

    @pytest.mark.parametrize("seed", range(100))
    def test_trace_bounded_by_extreme_eigenvalues(self, seed):
        """Test lambda_min(V) Tr(W) <= Tr(VW) <= lambda_max(V) Tr(W) for W >= 0."""
        rng = np.random.default_rng(seed)
        n = 1 + seed % 5
        v = random_symmetric(rng, n)
        g = rng.standard_normal((n, n))
        w = g.T @ g
        value = matops.trace(v @ w)
        tol = 1e-9 * (1.0 + np.abs(v).sum() * np.trace(w))
        assert matops.lambda_min(v) * np.trace(w) - tol <= value <= matops.lambda_max(v) * np.trace(w) + tol

    @pytest.mark.parametrize("seed", range(100))
    def test_extremes_of_a_sum(self, seed):
        """Test lambda_max(V + W) <= lambda_max(V) + lambda_max(W) and the mirror bound for lambda_min."""
        rng = np.random.default_rng(seed)
        n = 1 + seed % 5
        v, w = random_symmetric(rng, n), random_symmetric(rng, n)
        tol = 1e-9 * (1.0 + np.abs(v).sum() + np.abs(w).sum())
        assert matops.lambda_max(v + w) <= matops.lambda_max(v) + matops.lambda_max(w) + tol
        assert matops.lambda_min(v + w) >= matops.lambda_min(v) + matops.lambda_min(w) - tol
