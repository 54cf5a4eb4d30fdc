import json
from pathlib import Path

import numpy as np
import pytest

from stabsynth.schemas import PiSettings, SimConfig
from stabsynth.sysmodel import CostSpec, StochasticLinearSystem

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

TWO_STATE_GAIN = np.array([[-2.731, -1.027]])
COUNTER_GAIN = np.array([[-0.41059, -0.17726]])


@pytest.fixture
def two_state_system():
    """Two-state, one-input example system."""
    return StochasticLinearSystem(
        a=np.array([[3.0, 6.0], [11.0, -7.0]]),
        b=np.array([[7.0], [2.0]]),
        c=np.array([[0.6, 0.1], [-0.3, 0.7]]),
        d=np.array([[0.2], [0.1]]),
    )


@pytest.fixture
def two_state_spec():
    return CostSpec(q=np.diag([7.0, 3.0]), r=np.array([[2.0]]), sigma0=np.eye(2), zeta=10.0)


@pytest.fixture
def counter_system():
    """System whose discounted optimum fails to stabilize the undiscounted plant."""
    return StochasticLinearSystem(
        a=np.array([[4.0, 7.0], [5.0, -13.0]]),
        b=np.array([[6.0], [1.0]]),
        c=np.array([[5.0, -1.0], [-3.0, 4.0]]),
        d=np.array([[2.0], [8.0]]),
    )


@pytest.fixture
def counter_spec():
    return CostSpec(q=np.diag([6.0, 3.0]), r=np.array([[2.0]]), sigma0=np.eye(2), zeta=10.0)


@pytest.fixture
def scalar_system():
    return StochasticLinearSystem(a=[[1.0]], b=[[1.0]], c=[[0.0]], d=[[0.0]])


@pytest.fixture
def scalar_spec():
    return CostSpec(q=[[1.0]], r=[[1.0]], sigma0=[[1.0]], zeta=2.0)


@pytest.fixture
def pi_settings():
    return PiSettings()


@pytest.fixture
def small_sim():
    """Cheap simulation settings for unit tests."""
    return SimConfig(t0=0.5, n_traj=200, n_grid=10, l=8, master_seed=3)


@pytest.fixture
def make_random_system():
    """Factory for a random plant that is mean-square stabilizable by construction.

    A random gain is drawn first and the drift is shifted until that gain
    stabilizes, so the discount schedule always has somewhere to go.
    """

    def factory(seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 4))
        m = int(rng.integers(1, 3))
        a = rng.standard_normal((n, n))
        b = rng.standard_normal((n, m))
        c = 0.3 * rng.standard_normal((n, n))
        d = 0.2 * rng.standard_normal((n, m))
        k = rng.standard_normal((m, n))
        acl = a + b @ k
        ccl = c + d @ k
        beta = 0.5 * (np.linalg.eigvalsh(acl + acl.T)[-1] + np.linalg.norm(ccl, 2) ** 2) + 0.5
        system = StochasticLinearSystem(a=a - beta * np.eye(n), b=b, c=c, d=d)
        spec = CostSpec(q=np.eye(n), r=np.eye(m), sigma0=np.eye(n), zeta=5.0)
        return system, spec, k

    return factory


@pytest.fixture
def config_data():
    """Loader for the bundled run configurations as plain dicts."""

    def load(name):
        return json.loads((CONFIG_DIR / f"{name}.json").read_text(encoding="utf-8"))

    return load


@pytest.fixture
def write_config(tmp_path):
    """Write a configuration dict to a temporary JSON file."""

    def write(data, name="run.json"):
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return path

    return write
