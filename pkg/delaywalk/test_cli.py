"""
End-to-end tests for the command-line front end.
"""

import json
from pathlib import Path

import pytest

from delaywalk.exceptions import NumericalError
from run import EXIT_CONFIG, EXIT_FAILED, EXIT_NUMERICAL, EXIT_OK, DelayWalkCLI

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"


def run_cli(*argv):
    return DelayWalkCLI().main(list(argv))


def scenario_copy(tmp_path, name, **tolerances):
    """Scenario file with overridden tolerances, written under tmp_path."""
    payload = json.loads((SCENARIO_DIR / f"{name}.json").read_text())
    payload["tolerances"] = tolerances
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(payload))
    return str(path)


class TestCommands:

    def test_constants(self, tmp_path):
        out = tmp_path / "constants.json"
        code = run_cli("constants", "--scenario", str(SCENARIO_DIR / "delayed_poisson.json"), "--out", str(out))
        assert code == EXIT_OK
        document = json.loads(out.read_text())
        assert document["constants"]["Gamma"] == pytest.approx(1.0, abs=1e-12)
        assert document["constants"]["K"] == pytest.approx([0.5], abs=1e-12)
        assert document["constants"]["Sigma"] == pytest.approx([[0.125]], abs=1e-12)
        assert document["checks"]["identity_residual"] <= 1e-10
        assert len(document["metadata"]["scenario_hash"]) == 64

    def test_constants_speed_comparison(self, tmp_path):
        out = tmp_path / "transport.json"
        assert run_cli("constants", "--scenario", str(SCENARIO_DIR / "hyperbolic_transport.json"), "--out", str(out)) == 0
        unit, half = json.loads(out.read_text())["speed_comparison"]
        assert unit["K"] == pytest.approx(-0.501, abs=1e-3)
        assert half["sqrt_Sigma"] == pytest.approx(0.18, abs=5e-3)

    def test_dde_gamma(self, tmp_path):
        out = tmp_path / "gamma.json"
        code = run_cli(
            "dde-gamma", "--scenario", str(SCENARIO_DIR / "hyperbolic_transport.json"), "--horizon", "30", "--out", str(out)
        )
        assert code == EXIT_OK
        document = json.loads(out.read_text())
        assert document["gamma"] == pytest.approx(1.00498, abs=1e-4)
        assert abs(document["delta_at_gamma"]) <= 1e-12
        assert document["ratio_profile"]["error"] <= 1e-4

    def test_dde_gamma_needs_hyperbolic_rate(self, tmp_path):
        code = run_cli("dde-gamma", "--scenario", str(SCENARIO_DIR / "poisson.json"), "--out", str(tmp_path / "x.json"))
        assert code == EXIT_CONFIG

    def test_simulate_is_reproducible_across_workers(self, tmp_path):
        scenario = str(SCENARIO_DIR / "delayed_poisson.json")
        common = ["--n", "40", "--horizon", "10", "--probes", "5,10"]
        assert run_cli("simulate", "--scenario", scenario, "--out", str(tmp_path / "a.csv"), *common) == 0
        assert run_cli(
            "simulate", "--scenario", scenario, "--out", str(tmp_path / "b.csv"), "--workers", "2", *common
        ) == 0
        first = (tmp_path / "a.csv").read_bytes()
        assert first == (tmp_path / "b.csv").read_bytes()
        lines = first.decode().splitlines()
        assert lines[0].startswith("# scenario_hash=")
        assert lines[1] == "trajectory,t=5,t=10"
        assert len(lines) == 42
        assert (tmp_path / "a_summary.json").exists()

    def test_simulate_writes_paths(self, tmp_path):
        out = tmp_path / "ensemble.csv"
        code = run_cli(
            "simulate", "--scenario", str(SCENARIO_DIR / "delayed_poisson.json"),
            "--n", "10", "--horizon", "5", "--probes", "5", "--out", str(out), "--paths",
        )
        assert code == EXIT_OK
        terminal = {
            row.split(",")[0]: row.split(",")[1] for row in out.read_text().splitlines()[2:]
        }
        lines = (tmp_path / "ensemble_paths.csv").read_text().splitlines()
        assert lines[1] == "trajectory,t,x0"
        last = {}
        for row in lines[2:]:
            index, t, value = row.split(",")
            last[index] = (t, value)
        # --paths without a count keeps at most the ensemble size
        assert sorted(last) == sorted(terminal)
        for index, (t, value) in last.items():
            assert t == "5"
            assert value == terminal[index]

    def test_lattice(self, tmp_path):
        out = tmp_path / "lattice.json"
        code = run_cli(
            "lattice", "--scenario", str(SCENARIO_DIR / "delayed_poisson.json"),
            "--horizon", "3", "--probes", "1,3", "--out", str(out),
        )
        assert code == EXIT_OK
        document = json.loads(out.read_text())
        assert document["max_mass_error"] <= 1e-10
        assert [law["t"] for law in document["laws"]] == [1.0, 3.0]
        assert (tmp_path / "lattice_t1.csv").exists()

    def test_verify_lln(self, tmp_path):
        out = tmp_path / "lln.json"
        code = run_cli(
            "verify-lln", "--scenario", scenario_copy(tmp_path, "delayed_poisson", ci_sigmas=5.0),
            "--n", "200", "--horizon", "100", "--probes", "50,100", "--out", str(out),
        )
        document = json.loads(out.read_text())
        assert code == EXIT_OK
        assert document["lln"]["drift"] == pytest.approx([0.5])
        # m(t) = t/2 + 1/8 once the transient has died out
        assert document["mean_path"]["points"][-1]["expected"] == pytest.approx([0.50125], abs=1e-9)
        assert document["mean_path"]["passed"]

    def test_verify_lln_reports_failure(self, tmp_path):
        # n·K·t is not an integer, so no ensemble mean can sit exactly on K
        out = tmp_path / "lln.json"
        code = run_cli(
            "verify-lln", "--scenario", scenario_copy(tmp_path, "delayed_poisson", ci_sigmas=1e-9),
            "--n", "201", "--horizon", "100.1", "--probes", "100.1", "--out", str(out),
        )
        document = json.loads(out.read_text())
        assert code == EXIT_FAILED
        assert not document["lln"]["passed"]
        assert not document["mean_path"]["passed"]

    def test_verify_lattice(self, tmp_path):
        out = tmp_path / "oracle.json"
        code = run_cli(
            "verify-lattice", "--scenario", scenario_copy(tmp_path, "delayed_poisson", ci_sigmas=5.0),
            "--n", "5000", "--horizon", "3", "--probes", "1,3", "--out", str(out),
        )
        document = json.loads(out.read_text())
        assert code == EXIT_OK
        assert [c["t"] for c in document["comparisons"]] == [1.0, 3.0]
        for comparison in document["comparisons"]:
            tv = comparison["total_variation"]
            assert tv["total_variation"] <= tv["noise_bound"]
            assert comparison["moments"]["passed"]

    def test_verify_lattice_reports_failure(self, tmp_path):
        out = tmp_path / "oracle.json"
        code = run_cli(
            "verify-lattice", "--scenario", scenario_copy(tmp_path, "delayed_poisson", ci_sigmas=1e-9),
            "--n", "501", "--horizon", "3", "--probes", "3", "--out", str(out),
        )
        assert code == EXIT_FAILED
        assert not json.loads(out.read_text())["comparisons"][0]["moments"]["passed"]

    def test_verify_clt_dumps_samples(self, tmp_path):
        out = tmp_path / "clt.json"
        run_cli(
            "verify-clt", "--scenario", str(SCENARIO_DIR / "degenerate_2d.json"),
            "--n", "200", "--horizon", "20", "--probes", "20", "--out", str(out), "--dump-samples",
        )
        document = json.loads(out.read_text())
        assert document["profile"]["reports"][0]["kernel_max_abs"] == 0.0
        assert (tmp_path / "clt_samples_t20.csv").exists()


class TestErrors:

    def test_unknown_field_exits_without_output(self, tmp_path):
        payload = json.loads((SCENARIO_DIR / "delayed_poisson.json").read_text())
        payload["surprise"] = True
        scenario = tmp_path / "bad.json"
        scenario.write_text(json.dumps(payload))
        out = tmp_path / "never.json"
        assert run_cli("constants", "--scenario", str(scenario), "--out", str(out)) == EXIT_CONFIG
        assert not out.exists()

    def test_bad_seed_override(self, tmp_path):
        code = run_cli(
            "constants", "--scenario", str(SCENARIO_DIR / "poisson.json"), "--seed", "-1",
            "--out", str(tmp_path / "x.json"),
        )
        assert code == EXIT_CONFIG

    @pytest.mark.parametrize("failure", [
        ZeroDivisionError("float division by zero"),
        ValueError("f(a) and f(b) must have different signs"),
    ])
    def test_foreign_arithmetic_errors_exit_numerical(self, tmp_path, monkeypatch, failure):
        def broken(*args, **kwargs):
            raise failure

        monkeypatch.setattr("run.compute_constants", broken)
        code = run_cli("constants", "--scenario", str(SCENARIO_DIR / "poisson.json"), "--out", str(tmp_path / "x.json"))
        assert code == EXIT_NUMERICAL

    def test_numerical_error_exits_numerical(self, tmp_path, monkeypatch):
        def broken(*args, **kwargs):
            raise NumericalError("Envelope violated")

        monkeypatch.setattr("run.compute_constants", broken)
        code = run_cli("constants", "--scenario", str(SCENARIO_DIR / "poisson.json"), "--out", str(tmp_path / "x.json"))
        assert code == EXIT_NUMERICAL
