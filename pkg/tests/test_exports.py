import json
import math

import numpy as np
import pandas as pd
import pytest

from stabsynth.exceptions import ConfigError
from stabsynth.exports import (
    load_gain,
    result_summary,
    schedule_frame,
    write_gain,
    write_schedule_csv,
    write_summary_json,
    write_trajectory_csv,
)
from stabsynth.stabilize_exact import stabilize


@pytest.fixture
def scalar_result(scalar_system, scalar_spec, pi_settings):
    """Model-based schedule on the scalar plant."""
    return stabilize(scalar_system, scalar_spec, pi_settings, alpha0=2.0)


class TestScheduleExport:
    """Test cases for the schedule table."""

    def test_frame_columns(self, two_state_system, two_state_spec, pi_settings):
        """Test one row per iteration with gain entries as columns."""
        result = stabilize(two_state_system, two_state_spec, pi_settings, alpha0=9.0)
        frame = schedule_frame(result.schedule)
        assert list(frame.columns) == ["iter", "alpha", "delta_alpha", "cost", "inner_iters", "k_1_1", "k_1_2"]
        assert len(frame) == len(result.schedule)
        assert frame["alpha"].iloc[0] == pytest.approx(9.0)

    def test_csv_written(self, scalar_result, tmp_path):
        """Test the CSV reloads with the schedule values."""
        path = write_schedule_csv(scalar_result.schedule, tmp_path / "nested" / "schedule.csv")
        frame = pd.read_csv(path)
        assert len(frame) == len(scalar_result.schedule)
        np.testing.assert_allclose(frame["alpha"], scalar_result.schedule.alphas, rtol=1e-10)


class TestSummaryExport:
    """Test cases for the JSON summary."""

    def test_summary_fields(self, scalar_result, tmp_path):
        """Test the summary is valid JSON with the final gain."""
        summary = result_summary(scalar_result, "scalar", "model_based")
        path = write_summary_json(summary, tmp_path / "result.json")
        data = json.loads(path.read_text())
        assert data["name"] == "scalar"
        assert data["stabilizing"] is True
        assert data["iterations"] == len(scalar_result.schedule)
        np.testing.assert_allclose(data["gain"], scalar_result.gain)

    def test_non_finite_values_become_null(self, scalar_result):
        """Test NaN entries are written as null."""
        scalar_result.riccati_residual = math.nan
        summary = result_summary(scalar_result, "scalar", "model_free")
        assert summary["riccati_residual"] is None
        assert "NaN" not in json.dumps(summary)


class TestGainFiles:
    """Test cases for reading and writing gain files."""

    def test_written_gain_reloads(self, tmp_path):
        """Test a written gain reads back unchanged."""
        gain = np.array([[-2.731, -1.027]])
        np.testing.assert_array_equal(load_gain(write_gain(gain, tmp_path / "gain.json")), gain)

    def test_bare_list(self, tmp_path):
        """Test a bare flat list is read as a single row."""
        path = tmp_path / "gain.json"
        path.write_text("[-1.0, 0.5]")
        assert load_gain(path).shape == (1, 2)

    def test_result_file(self, scalar_result, tmp_path):
        """Test the gain is taken from a result summary."""
        path = write_summary_json(result_summary(scalar_result, "scalar", "model_based"), tmp_path / "r.json")
        np.testing.assert_allclose(load_gain(path), scalar_result.gain)

    def test_malformed_file(self, tmp_path):
        """Test unreadable content raises ConfigError."""
        path = tmp_path / "gain.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_gain(path)

    def test_non_numeric_gain(self, tmp_path):
        """Test a non-numeric gain raises ConfigError."""
        path = tmp_path / "gain.json"
        path.write_text('{"gain": [["a", "b"]]}')
        with pytest.raises(ConfigError):
            load_gain(path)

    def test_missing_gain_key(self, tmp_path):
        """Test a JSON object without a gain raises ConfigError."""
        path = tmp_path / "gain.json"
        path.write_text('{"k": [[1.0]]}')
        with pytest.raises(ConfigError):
            load_gain(path)


class TestTrajectoryExport:
    """Test cases for the mean trajectory table."""

    def test_columns(self, tmp_path):
        """Test a time column followed by one mean column per state."""
        times = np.linspace(0.0, 1.0, 5)
        means = np.ones((5, 2))
        frame = pd.read_csv(write_trajectory_csv(times, means, tmp_path / "trajectory.csv"))
        assert list(frame.columns) == ["t", "mean_x1", "mean_x2"]
        assert len(frame) == 5
