import math

import numpy as np
import pytest

from stabsynth import matops
from stabsynth.moments import closed_loop_moments, moment_cost, moment_ode_oracle, moment_on_policy_value
from stabsynth.schemas import NoiseConfig, SimConfig
from stabsynth.sde import (
    NoiseSpec,
    StandardNormalInit,
    build_static_matrices,
    collect_batch,
    noise_family,
)
from stabsynth.stabilize_adp import assemble_phi, solve_pmh
from stabsynth.sysmodel import StochasticLinearSystem, cost, shift, solve_lyapunov


def data_vector(data):
    m = data.matrices if hasattr(data, "matrices") else data
    return np.concatenate([m.xi.ravel(), m.i_xx.ravel(), m.i_xu.ravel(), m.m_u.ravel()])


@pytest.fixture
def smooth_system():
    """Slow, mildly noisy plant on which Euler-Maruyama bias is negligible."""
    return StochasticLinearSystem(
        a=np.array([[-1.0, 0.5], [0.0, -1.5]]),
        b=np.array([[1.0], [0.5]]),
        c=np.array([[0.2, 0.0], [0.1, 0.2]]),
        d=np.array([[0.1], [0.0]]),
    )


class TestMomentOracle:
    """Test cases for the moment-ODE oracle."""

    def test_geometric_second_moment(self):
        """Test dX = X dW gives S(t) = S(0) exp(t) and int S = exp(t0) - 1."""
        system = StochasticLinearSystem(a=[[0.0]], b=[[0.0]], c=[[1.0]], d=[[0.0]])
        cfg = SimConfig(t0=1.0, n_grid=10)
        data = moment_ode_oracle(system, [[0.0]], NoiseSpec.zero(), np.eye(1), cfg, l=1)
        assert data.second_moments[0, -1, 0, 0] == pytest.approx(math.e, rel=1e-10)
        assert data.matrices.i_xx[0, 0] == pytest.approx(math.e - 1, rel=1e-10)
        assert data.matrices.xi[0, 0] == pytest.approx(math.e - 1, rel=1e-10)

    def test_deterministic_decay(self):
        """Test A = -I without noise gives S(t) = exp(-2t) S(0)."""
        system = StochasticLinearSystem(a=-np.eye(2), b=np.zeros((2, 1)), c=np.zeros((2, 2)), d=np.zeros((2, 1)))
        sigma0 = np.array([[2.0, 0.5], [0.5, 1.0]])
        cfg = SimConfig(t0=0.5, n_grid=5)
        data = moment_ode_oracle(system, np.zeros((1, 2)), NoiseSpec.zero(), sigma0, cfg, l=1)
        decay = math.exp(-1.0)
        np.testing.assert_allclose(data.second_moments[0, -1], decay * sigma0, rtol=1e-10)
        np.testing.assert_allclose(
            data.matrices.xi[0], matops.mcal_expected(sigma0) * (decay - 1.0), rtol=1e-10
        )

    def test_fixed_initial_mean_propagates(self, smooth_system):
        """Test the mean obeys the noise-free drift for a fixed initial state."""
        cfg = SimConfig(t0=0.5, n_grid=5)

        class Point:
            n = 2

            def mean(self, h):
                return np.array([1.0, -1.0])

            def second_moment(self, h):
                return np.outer([1.0, -1.0], [1.0, -1.0])

        data = moment_ode_oracle(smooth_system, np.zeros((1, 2)), NoiseSpec.zero(), Point(), cfg, l=1)
        expected = (
            np.array(
                [[math.exp(-0.5), 0.5 / (-1.0 + 1.5) * (math.exp(-0.5) - math.exp(-0.75))], [0.0, math.exp(-0.75)]]
            )
            @ np.array([1.0, -1.0])
        )
        np.testing.assert_allclose(data.means[0, -1], expected, rtol=1e-9)

    def test_sigma0_is_mean_second_moment(self, smooth_system):
        """Test the reported Sigma0 averages the sub-batch initial moments."""
        cfg = SimConfig(t0=0.2, n_grid=2, l=6)
        data = moment_ode_oracle(smooth_system, np.zeros((1, 2)), NoiseSpec.zero(), StandardNormalInit(2), cfg)
        np.testing.assert_allclose(data.sigma0, np.eye(2))
        assert data.matrices.l == 6

    def test_unknown_quadrature(self, smooth_system):
        """Test an unknown quadrature rule is rejected."""
        with pytest.raises(ValueError):
            moment_ode_oracle(smooth_system, np.zeros((1, 2)), NoiseSpec.zero(), np.eye(2), SimConfig(n_grid=2), quadrature="simpson", l=1)

    def test_grid_quadrature_approaches_exact(self, smooth_system):
        """Test left Riemann sums converge to the continuous integrals."""
        noises = noise_family(NoiseConfig(freq_high=5.0), 1, 6)
        coarse = SimConfig(t0=1.0, n_grid=50, oracle_substeps=8)
        fine = SimConfig(t0=1.0, n_grid=400, oracle_substeps=2)
        exact = data_vector(moment_ode_oracle(smooth_system, np.zeros((1, 2)), noises, np.eye(2), fine))
        err_coarse = np.abs(data_vector(moment_ode_oracle(smooth_system, np.zeros((1, 2)), noises, np.eye(2), coarse, quadrature="grid")) - exact).max()
        err_fine = np.abs(data_vector(moment_ode_oracle(smooth_system, np.zeros((1, 2)), noises, np.eye(2), fine, quadrature="grid")) - exact).max()
        assert err_fine < err_coarse / 4

    def test_trapezoid_grid_closer_than_left(self, smooth_system):
        """Test the trapezoidal grid sums sit closer to the continuous integrals than left sums."""
        noises = noise_family(NoiseConfig(freq_high=5.0), 1, 6)
        left = SimConfig(t0=1.0, n_grid=50, oracle_substeps=8)
        trapezoid = left.model_copy(update={"quadrature": "trapezoid"})
        exact = data_vector(moment_ode_oracle(smooth_system, np.zeros((1, 2)), noises, np.eye(2), left))
        err_left = np.abs(data_vector(moment_ode_oracle(smooth_system, np.zeros((1, 2)), noises, np.eye(2), left, quadrature="grid")) - exact).max()
        err_trapezoid = np.abs(data_vector(moment_ode_oracle(smooth_system, np.zeros((1, 2)), noises, np.eye(2), trapezoid, quadrature="grid")) - exact).max()
        assert err_trapezoid < err_left / 4

    def test_lyapunov_identity_on_exact_data(self, two_state_system, two_state_spec):
        """Test the value, cross-term and H of a gain satisfy Phi x = J_k exactly."""
        shifted = shift(two_state_system, 9.0)
        cfg = SimConfig(t0=1.0, n_grid=100)
        noises = noise_family(NoiseConfig(seed=5), 1, cfg.resolve_l(2, 1))
        data = moment_ode_oracle(shifted, np.zeros((1, 2)), noises, StandardNormalInit(2), cfg)
        k_i = np.array([[-0.5, -0.2]])
        p = solve_lyapunov(shifted, k_i, two_state_spec.stage_weight(k_i))
        h = shifted.d.T @ p @ shifted.d
        m = -(shifted.b.T @ p + shifted.d.T @ p @ shifted.c)
        m_kx, j_k = data.policy_matrices(k_i, two_state_spec.q, two_state_spec.r)
        phi = assemble_phi(data.matrices, k_i, m_kx)
        x = np.concatenate([matops.vech(p), matops.vec(m), matops.vech(h)])
        np.testing.assert_allclose(phi @ x, j_k, rtol=1e-7, atol=1e-9)
        sol = solve_pmh(phi, j_k, 2, 1)
        np.testing.assert_allclose(sol.p, p, atol=1e-6)
        np.testing.assert_allclose(sol.m, m, atol=1e-6)
        np.testing.assert_allclose(sol.h, h, atol=1e-6)


class TestMomentCost:
    """Test cases for the moment-based cost estimate."""

    def test_matches_lyapunov_cost(self, two_state_system, two_state_spec):
        """Test the truncated second-moment integral reproduces Tr(P Sigma0)."""
        shifted = shift(two_state_system, 9.0)
        cfg = SimConfig(t0=1.0, n_grid=100, oracle_substeps=10, rollout_horizon=8.0)
        estimate = moment_cost(shifted, np.zeros((1, 2)), two_state_spec, cfg)
        assert estimate == pytest.approx(cost(shifted, np.zeros((1, 2)), two_state_spec), rel=1e-6)

    def test_closed_loop_moments_on_grid(self):
        """Test dX = X dW gives S = exp(t) and int S = exp(t) - 1 at every grid point."""
        system = StochasticLinearSystem(a=[[0.0]], b=[[0.0]], c=[[1.0]], d=[[0.0]])
        cfg = SimConfig(t0=1.0, n_grid=10)
        seconds, integrals = closed_loop_moments(system, [[0.0]], np.eye(1), cfg, horizon=2.0)
        times = np.linspace(0.0, 2.0, 21)
        np.testing.assert_allclose(seconds[:, 0, 0], np.exp(times), rtol=1e-10)
        np.testing.assert_allclose(integrals[:, 0, 0], np.exp(times) - 1.0, rtol=1e-10, atol=1e-14)

    def test_on_policy_value_is_lyapunov_solution(self, two_state_system, two_state_spec):
        """Test the value fitted on exact closed-loop moments solves the Lyapunov equation."""
        shifted = shift(two_state_system, 9.0)
        k = np.array([[-0.5, -0.2]])
        cfg = SimConfig(t0=1.0, n_grid=100, oracle_substeps=10, rollout_horizon=4.0)
        p = moment_on_policy_value(shifted, k, two_state_spec, cfg)
        expected = solve_lyapunov(shifted, k, two_state_spec.stage_weight(k))
        np.testing.assert_allclose(p, expected, rtol=1e-5, atol=1e-8)


@pytest.mark.slow
class TestMonteCarloAgainstOracle:
    """Test cases comparing Monte Carlo estimates with exact expectations."""

    def test_example_estimates_within_sampling_error(self, two_state_system):
        """Test each Monte Carlo entry lies within a few standard errors of the oracle."""
        shifted = shift(two_state_system, 9.0)
        cfg = SimConfig(t0=1.0, n_traj=10000, n_grid=100, l=8, master_seed=21)
        noises = noise_family(NoiseConfig(seed=2), 1, 8)
        batch = collect_batch(shifted, np.zeros((1, 2)), noises, StandardNormalInit(2), cfg)
        mc = build_static_matrices(batch)
        oracle = moment_ode_oracle(shifted, np.zeros((1, 2)), noises, StandardNormalInit(2), cfg, quadrature="grid")

        w = cfg.grid_step
        x_left = batch.states[:, :-1]
        per_path_xx = w * np.einsum("hqki,hqkj->hkij", x_left, x_left).reshape(8, cfg.n_traj, 4)
        per_path_xi = matops.mcal(batch.states[:, -1]) - matops.mcal(batch.states[:, 0])
        se_xx = per_path_xx.std(axis=1) / math.sqrt(cfg.n_traj)
        se_xi = per_path_xi.std(axis=1) / math.sqrt(cfg.n_traj)

        bias_xx = 0.02 * np.abs(oracle.matrices.i_xx) + 1e-6
        assert np.all(np.abs(mc.i_xx - oracle.matrices.i_xx) <= 5 * se_xx + bias_xx)
        bias_xi = 0.02 * np.abs(oracle.matrices.xi) + 1e-6
        assert np.all(np.abs(mc.xi - oracle.matrices.xi) <= 5 * se_xi + bias_xi)

    def test_error_decays_like_inverse_sqrt(self, smooth_system):
        """Test the Monte Carlo error shrinks roughly as 1/sqrt(n_traj)."""
        noises = noise_family(NoiseConfig(seed=9, freq_high=10.0), 1, 4)
        base = SimConfig(t0=1.0, n_grid=10, l=4)
        oracle = data_vector(
            moment_ode_oracle(smooth_system, np.zeros((1, 2)), noises, StandardNormalInit(2), base, quadrature="grid")
        )
        sizes = [100, 1000, 10000]
        errors = []
        for size in sizes:
            rms = []
            for seed in range(6):
                cfg = base.model_copy(update={"n_traj": size, "master_seed": seed})
                batch = collect_batch(smooth_system, np.zeros((1, 2)), noises, StandardNormalInit(2), cfg)
                rms.append(np.sqrt(np.mean((data_vector(build_static_matrices(batch)) - oracle) ** 2)))
            errors.append(np.sqrt(np.mean(np.square(rms))))
        slope = np.polyfit(np.log10(sizes), np.log10(errors), 1)[0]
        assert -0.65 <= slope <= -0.35
