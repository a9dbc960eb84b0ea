"""命令行测试 — describe / check / run 的输出、退出码与可复现性"""

from __future__ import annotations

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from polyred.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VIOLATION, cli
from polyred.config import OUTPUT_DIR_ENV

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"

SHORT_HEAVY_TOP = {
    "scenario": "heavy_top",
    "numerics": {"dt": 0.001, "t_final": 0.1, "samples": 3},
    "outputs": {"stride": 10},
}


@pytest.fixture
def runner(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)
    return CliRunner()


def _write(tmp_path: Path, name: str, payload: dict) -> Path:
    path = tmp_path / name
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


# ╔════════════════════════════════════════════════════╗
# ║  1. describe                                        ║
# ╚════════════════════════════════════════════════════╝


class TestDescribe:
    def test_heavy_top(self, runner):
        result = runner.invoke(cli, ["describe", "heavy_top"])
        assert result.exit_code == 0
        assert "dΓ/dt = −a×Γ" in result.output
        assert '"scenario": "heavy_top"' in result.output

    def test_unknown_scenario(self, runner):
        result = runner.invoke(cli, ["describe", "pendulum"])
        assert result.exit_code == EXIT_CONFIG

    def test_write_default_config(self, runner, tmp_path):
        target = tmp_path / "strand.json"
        result = runner.invoke(cli, ["describe", "strand", "--write", str(target)])
        assert result.exit_code == 0
        assert json.loads(target.read_text(encoding="utf-8"))["scenario"] == "strand"


# ╔════════════════════════════════════════════════════╗
# ║  2. check                                           ║
# ╚════════════════════════════════════════════════════╝


class TestCheck:
    def test_z_derivative(self, runner, tmp_path):
        report = tmp_path / "z.json"
        result = runner.invoke(cli, ["check", "z_derivative", "--json", str(report)])
        assert result.exit_code == 0, result.output
        assert "全部通过" in result.output
        data = json.loads(report.read_text(encoding="utf-8"))
        assert data["suite"] == "z_derivative"
        assert all(row["passed"] for row in data["checks"])

    def test_unknown_suite(self, runner):
        result = runner.invoke(cli, ["check", "fuzz"])
        assert result.exit_code == EXIT_CONFIG


# ╔════════════════════════════════════════════════════╗
# ║  3. run                                             ║
# ╚════════════════════════════════════════════════════╝


class TestRun:
    def test_malformed_config_writes_nothing(self, runner, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{\n  "scenario": "heavy_top",\n  "bogus": 1\n}', encoding="utf-8")
        out = tmp_path / "out"
        result = runner.invoke(cli, ["run", str(path), "-o", str(out)])
        assert result.exit_code == EXIT_CONFIG
        assert "bad.json:3:" in result.output
        assert not out.exists()

    def test_ragged_t_final_rejected_before_run(self, runner, tmp_path):
        payload = {"scenario": "heavy_top", "numerics": {"dt": 0.003, "t_final": 0.1}}
        out = tmp_path / "ragged"
        result = runner.invoke(cli, ["run", str(_write(tmp_path, "ragged.json", payload)), "-o", str(out)])
        assert result.exit_code == EXIT_CONFIG
        assert "numerics.t_final" in result.output
        assert not out.exists()

    def test_s1_reports_obstruction(self, runner, tmp_path):
        out = tmp_path / "s1"
        result = runner.invoke(cli, ["run", str(CONFIG_DIR / "s1.json"), "-o", str(out)])
        assert result.exit_code == 0, result.output
        assert "obstructed: holonomy 6.2832" in result.output
        report = json.loads((out / "diagnostics.json").read_text(encoding="utf-8"))
        assert report["reconstruction"]["verdict"] == "obstructed: holonomy 6.2832"
        assert report["violations"] == []

    def test_artifacts_and_manifest(self, runner, tmp_path):
        out = tmp_path / "top"
        result = runner.invoke(cli, ["run", str(_write(tmp_path, "top.json", SHORT_HEAVY_TOP)), "-o", str(out)])
        assert result.exit_code == 0, result.output
        manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["package"] == "polyred"
        assert manifest["artifacts"] == {"csv": "heavy_top.csv", "report": "diagnostics.json"}
        header = (out / "heavy_top.csv").read_text(encoding="utf-8").splitlines()[0]
        assert header.startswith("t,mu1,mu2,mu3,gamma1,gamma2,gamma3")
        assert (out / "polyred.log").exists()

    def test_byte_identical_reruns(self, runner, tmp_path):
        config = str(_write(tmp_path, "top.json", SHORT_HEAVY_TOP))
        for name in ("a", "b"):
            assert runner.invoke(cli, ["run", config, "-o", str(tmp_path / name)]).exit_code == 0
        assert (tmp_path / "a" / "heavy_top.csv").read_bytes() == (tmp_path / "b" / "heavy_top.csv").read_bytes()

    @pytest.mark.slow
    @pytest.mark.parametrize("name", ["heavy_top.json", "affine.json", "s1.json", "strand.json"])
    def test_reference_configs_are_reproducible(self, runner, tmp_path, name):
        csv = []
        for run_dir in ("first", "second"):
            out = tmp_path / run_dir
            result = runner.invoke(cli, ["run", str(CONFIG_DIR / name), "-o", str(out)])
            assert result.exit_code in (0, EXIT_VIOLATION), result.output
            csv.append(next(out.glob("*.csv")).read_bytes())
        assert csv[0] == csv[1]

    def test_env_output_dir(self, runner, tmp_path, monkeypatch):
        monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "from_env"))
        result = runner.invoke(cli, ["run", str(_write(tmp_path, "top.json", SHORT_HEAVY_TOP))])
        assert result.exit_code == 0, result.output
        assert (tmp_path / "from_env" / "heavy_top.csv").exists()

    def test_cfl_violation_is_numerical_failure(self, runner, tmp_path):
        payload = {"scenario": "strand", "numerics": {"dt": 0.1, "t_final": 0.2, "grid_n": 32, "samples": 2}}
        result = runner.invoke(cli, ["run", str(_write(tmp_path, "strand.json", payload)), "-o", str(tmp_path / "s")])
        assert result.exit_code == EXIT_NUMERICAL
        assert "CFLError" in result.output
