"""
Unit tests for scenario loading, overrides and output pipelines.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from delaywalk.exceptions import ConfigurationError
from delaywalk.lattice import LatticeLaw
from delaywalk.pipelines import ExportPipeline, ValidationPipeline, format_number, round_significant
from delaywalk.rates import HyperbolicDDE, Separable
from delaywalk.scenario import (
    apply_overrides,
    build_lattice_initial,
    build_runtime,
    load_scenario,
    scenario_hash,
)
from delaywalk.simulator import InitialHistory, Trajectory

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture
def payload():
    return json.loads((SCENARIO_DIR / "delayed_poisson.json").read_text())


class TestValidation:

    @pytest.mark.parametrize("path", sorted(SCENARIO_DIR.glob("*.json")), ids=lambda p: p.stem)
    def test_bundled_scenarios_load(self, path):
        scenario = load_scenario(path)
        assert scenario.name == path.stem

    def test_unknown_field_rejected(self, payload):
        payload["run"]["speed"] = 3
        with pytest.raises(ConfigurationError):
            ValidationPipeline().process(payload)

    def test_dimension_mismatch_rejected(self, payload):
        payload["dimension"] = 2
        with pytest.raises(ConfigurationError):
            ValidationPipeline().process(payload)

    def test_probes_must_increase(self, payload):
        payload["run"]["probes"] = [400.0, 100.0]
        with pytest.raises(ConfigurationError):
            ValidationPipeline().process(payload)

    def test_seed_must_be_unsigned(self, payload):
        payload["run"]["seed"] = -4
        with pytest.raises(ConfigurationError):
            ValidationPipeline().process(payload)

    def test_product_needs_one_factor(self, payload):
        payload["measure"] = {"kind": "product", "theta": {"kind": "uniform"}}
        with pytest.raises(ConfigurationError):
            ValidationPipeline().process(payload)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_scenario(tmp_path / "absent.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{")
        with pytest.raises(ConfigurationError):
            load_scenario(path)


class TestOverridesAndHash:

    def test_overrides_revalidate(self, payload):
        scenario = apply_overrides(ValidationPipeline().process(payload), seed=9, n=10, horizon=150.0)
        assert scenario.run.seed == 9
        assert scenario.run.n == 10
        assert scenario.run.probes == [100.0]

    def test_invalid_override_rejected(self, payload):
        with pytest.raises(ConfigurationError):
            apply_overrides(ValidationPipeline().process(payload), probes=[500.0])

    def test_hash_is_stable_and_seed_sensitive(self, payload):
        scenario = ValidationPipeline().process(payload)
        assert scenario_hash(scenario) == scenario_hash(ValidationPipeline().process(payload))
        assert scenario_hash(scenario) != scenario_hash(apply_overrides(scenario, seed=3))


class TestRuntime:

    def test_hyperbolic_policy_uses_theta_marginal(self):
        runtime = build_runtime(load_scenario(SCENARIO_DIR / "hyperbolic_transport.json"), horizon=0.0)
        assert isinstance(runtime.policy, HyperbolicDDE)
        assert runtime.policy.eta.thetas.tolist() == [-1.0]

    def test_separable_policy(self):
        runtime = build_runtime(load_scenario(SCENARIO_DIR / "separable_transient.json"))
        assert isinstance(runtime.policy, Separable)

    def test_uniform_jump_scenario_centres_initial_law(self):
        scenario = load_scenario(SCENARIO_DIR / "hyperbolic_uniform.json")
        assert scenario.initial.law.lower == [-0.5]
        assert scenario.initial.law.upper == [0.5]
        assert scenario.initial.law == scenario.measure.jumps

    def test_signed_separable_amplitude(self, payload):
        payload["measure"] = {"kind": "atomic", "atoms": [{"weight": 1.0, "theta": -1.0, "z": [1.0]}]}
        payload["rate"] = {"kind": "separable", "scale": 1.0, "amplitude": -0.5, "decay": 2.0}
        runtime = build_runtime(ValidationPipeline().process(payload))
        assert runtime.policy.amplitude == -0.5
        assert runtime.policy.lambda_t(runtime.measure, 0.0) == pytest.approx(0.5)

    def test_separable_amplitude_must_keep_rate_positive(self, payload):
        payload["rate"] = {"kind": "separable", "scale": 1.0, "amplitude": -1.0}
        with pytest.raises(ConfigurationError):
            build_runtime(ValidationPipeline().process(payload))

    def test_metadata(self):
        runtime = build_runtime(load_scenario(SCENARIO_DIR / "delayed_poisson.json"))
        metadata = runtime.metadata()
        assert metadata["scenario_hash"] == runtime.digest
        assert metadata["seed"] == runtime.run.seed
        assert metadata["policy"]["kind"] == "constant_one"

    def test_lattice_initial_needs_atomic_law(self):
        with pytest.raises(ConfigurationError):
            build_lattice_initial(load_scenario(SCENARIO_DIR / "hyperbolic_uniform.json"))


# ==================== EXPORT ====================

class TestExport:

    @pytest.fixture
    def exporter(self):
        return ExportPipeline({"scenario_hash": "abc", "seed": 7, "version": "1.0.0"})

    def test_round_significant(self):
        rounded = round_significant({"x": [1.0 / 3.0, np.float64(2.0)], "flag": np.bool_(True), "bad": float("inf")})
        assert rounded["x"][0] == float(f"{1.0 / 3.0:.15g}")
        assert rounded["flag"] is True
        assert rounded["bad"] == "inf"

    def test_format_number(self):
        assert format_number(3.0) == "3"
        assert format_number(0.125) == "0.125"

    def test_json_embeds_metadata(self, exporter, tmp_path):
        path = exporter.write_json(tmp_path / "out.json", {"value": 1.5})
        document = json.loads(path.read_text())
        assert document["metadata"]["scenario_hash"] == "abc"
        assert document["value"] == 1.5
        assert exporter.written == [path]
        assert list(tmp_path.iterdir()) == [path]

    def test_law_csv(self, exporter, tmp_path):
        law = LatticeLaw(np.array([[0], [1]]), np.array([0.25, 0.75]), 1.0, 1.0)
        lines = exporter.write_law_csv(tmp_path / "law.csv", law).read_text().splitlines()
        assert lines[0] == "# scenario_hash=abc seed=7 version=1.0.0"
        assert lines[1] == "x0,mass"
        assert lines[2:] == ["0,0.25", "1,0.75"]

    def test_paths_csv(self, exporter, tmp_path):
        trajectory = Trajectory(InitialHistory.constant([0.0]), horizon=3.0)
        trajectory.append(0.5, np.array([1.0]))
        trajectory.append(2.0, np.array([2.0]))
        quiet = Trajectory(InitialHistory.constant([4.0]), horizon=3.0)
        lines = exporter.write_paths_csv(tmp_path / "paths.csv", [trajectory, quiet]).read_text().splitlines()
        assert lines[1] == "trajectory,t,x0"
        assert lines[2:] == ["0,0,0", "0,0.5,1", "0,2,2", "0,3,2", "1,0,4", "1,3,4"]

    def test_paths_csv_needs_trajectories(self, exporter, tmp_path):
        with pytest.raises(ConfigurationError):
            exporter.write_paths_csv(tmp_path / "paths.csv", [])

