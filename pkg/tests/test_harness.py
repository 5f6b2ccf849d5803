import json

import pytest
from click.testing import CliRunner

from rdslin.cli import main
from rdslin.errors import ConfigurationError
from rdslin.harness import (Scenario, bundled_suite_dir, run_scenario,
                            verify_all)

LIGHT_TS1 = {
    "name": "light-ts1",
    "seed": 42,
    "system": {"kind": "ts1", "epsilon": 0.2},
    "grid": {"t_end": 6.0, "dt": 1e-3},
    "probes": {"count": 5, "pairs": 5, "times": [0.0, 1.0]},
    "outputs": {"artifacts": ["certificate"]},
}

LIGHT_TS2 = {
    "name": "light-ts2",
    "seed": 42,
    "system": {"kind": "ts2"},
    "grid": {"t_end": 3.0, "dt": 1e-3},
    "spectrum": {"T": 50.0, "dt": 1e-2},
    "outputs": {"artifacts": ["spectrum", "trajectories"]},
}


def write_scenario(tmp_path, body: dict, name="scn.toml"):
    def fmt(v):
        if isinstance(v, str):
            return f'"{v}"'
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, list):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        return repr(v)

    lines = []
    for k, v in body.items():
        if isinstance(v, dict):
            lines.append(f"[{k}]")
            for kk, vv in v.items():
                lines.append(f"{kk} = {fmt(vv)}")
        else:
            lines.append(f"{k} = {fmt(v)}")
    f = tmp_path / name
    f.write_text("\n".join(lines) + "\n")
    return f


class TestScenario:
    def test_unknown_top_level_key(self):
        bad = dict(LIGHT_TS2)
        bad["mystery"] = {"x": 1}
        with pytest.raises(ConfigurationError):
            Scenario.from_dict(bad)

    def test_unknown_nested_key(self):
        bad = {**LIGHT_TS2, "grid": {"t_end": 3.0, "dx": 0.1}}
        with pytest.raises(ConfigurationError):
            Scenario.from_dict(bad)

    def test_unknown_system_kind(self):
        bad = {**LIGHT_TS2, "system": {"kind": "ts99"}}
        with pytest.raises(ConfigurationError):
            Scenario.from_dict(bad)

    def test_nonpositive_tolerance(self):
        bad = {**LIGHT_TS2, "tolerances": {"tol_conj": 0.0}}
        with pytest.raises(ConfigurationError):
            Scenario.from_dict(bad)

    def test_missing_artifacts(self):
        bad = {**LIGHT_TS2, "outputs": {"artifacts": []}}
        with pytest.raises(ConfigurationError):
            Scenario.from_dict(bad)

    def test_missing_file(self):
        with pytest.raises(ConfigurationError):
            Scenario.load("/nonexistent/path.toml")

    def test_seed_override(self):
        scn = Scenario.from_dict(LIGHT_TS2, seed_override=7)
        assert scn.seed == 7


class TestRunScenario:
    def test_ts2_passes(self):
        rep = run_scenario(Scenario.from_dict(LIGHT_TS2))
        assert rep.passed
        names = {r["name"] for r in rep.records}
        assert "flow.identity-at-anchor" in names
        assert all("anchor" in r for r in rep.records)

    def test_ts1_passes(self):
        rep = run_scenario(Scenario.from_dict(LIGHT_TS1))
        assert rep.passed

    def test_corrupted_tolerance_fails(self):
        bad = {**LIGHT_TS1,
               "tolerances": {"tol_conj": 1e-30}}
        rep = run_scenario(Scenario.from_dict(bad))
        assert not rep.passed

    def test_determinism(self):
        a = run_scenario(Scenario.from_dict(LIGHT_TS2)).to_dict()
        b = run_scenario(Scenario.from_dict(LIGHT_TS2)).to_dict()
        a.pop("runtime_seconds")
        b.pop("runtime_seconds")
        assert a == b

    def test_report_roundtrip(self, tmp_path):
        rep = run_scenario(Scenario.from_dict(LIGHT_TS2), out_dir=tmp_path)
        target = tmp_path / "light-ts2.json"
        assert target.is_file()
        loaded = json.loads(target.read_text())
        assert loaded["passed"] is True
        rep.save(tmp_path, fmt="csv")
        assert (tmp_path / "light-ts2.csv").read_text().startswith(
            "name,anchor")


class TestCli:
    def test_run_pass_exit_zero(self, tmp_path):
        f = write_scenario(tmp_path, LIGHT_TS2)
        result = CliRunner().invoke(main, ["run", "--scenario", str(f)])
        assert result.exit_code == 0
        assert "overall: PASS" in result.output

    def test_missing_file_exit_two(self):
        result = CliRunner().invoke(
            main, ["run", "--scenario", "/no/such/file.toml"])
        assert result.exit_code == 2

    def test_hypothesis_violation_exit_three(self, tmp_path):
        bad = {**LIGHT_TS1, "system": {"kind": "ts1", "epsilon": 1.5}}
        f = write_scenario(tmp_path, bad)
        result = CliRunner().invoke(main, ["conjugacy", "--scenario", str(f)])
        assert result.exit_code == 3
        payload = json.loads(result.stderr)
        assert payload["inequality"] == "K*L < alpha"

    def test_unstable_sde_exit_three(self, tmp_path):
        bad = {
            "name": "unstable",
            "seed": 9,
            "system": {"kind": "ts4", "lam": 0.5},
            "pipeline": {"seeds": 1, "deep": False, "spectrum_T": 30.0},
            "outputs": {"artifacts": ["pipeline"]},
        }
        f = write_scenario(tmp_path, bad)
        result = CliRunner().invoke(main, ["sde-pipeline", "--scenario", str(f)])
        assert result.exit_code == 3
        payload = json.loads(result.stderr)
        assert payload["stage"] == "spectrum-gate"

    def test_failing_check_exit_one(self, tmp_path):
        bad = {**LIGHT_TS1, "tolerances": {"tol_conj": 1e-30}}
        f = write_scenario(tmp_path, bad)
        result = CliRunner().invoke(main, ["run", "--scenario", str(f)])
        assert result.exit_code == 1

    def test_subcommand_filters_artifacts(self, tmp_path):
        f = write_scenario(tmp_path, LIGHT_TS2)
        result = CliRunner().invoke(main, ["spectrum", "--scenario", str(f)])
        assert result.exit_code == 0
        assert "flow.identity-at-anchor" not in result.output
        assert "spectrum.exponent" in result.output


class TestVerifyAll:
    def test_small_suite(self, tmp_path):
        write_scenario(tmp_path, LIGHT_TS2, name="a.toml")
        write_scenario(tmp_path, {**LIGHT_TS2, "name": "light-2"},
                       name="b.toml")
        rep = verify_all(suite_dir=tmp_path)
        assert rep.passed
        assert any(r["name"].startswith("light-ts2.") for r in rep.records)
        assert any(r["name"].startswith("light-2.") for r in rep.records)

    def test_empty_suite_rejected(self, tmp_path):
        with pytest.raises(ConfigurationError):
            verify_all(suite_dir=tmp_path)

    def test_bundled_suite_exists(self):
        files = sorted(bundled_suite_dir().glob("*.toml"))
        assert len(files) >= 5
