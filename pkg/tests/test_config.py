"""配置单元测试 — 缺省值 / 未知键与行号 / 校验 / 读写 / 输出目录优先级"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from polyred.config import (
    OUTPUT_DIR_ENV,
    ConfigError,
    Scenario,
    ScenarioConfig,
    as_matrix,
    load_config,
    loads_config,
    resolve_output_dir,
    save_config,
)

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


# ╔════════════════════════════════════════════════════╗
# ║  1. 解析                                            ║
# ╚════════════════════════════════════════════════════╝


class TestParse:
    def test_defaults(self):
        cfg = loads_config("{}")
        assert cfg.scenario is Scenario.HEAVY_TOP
        assert cfg.numerics.dt == 1e-3
        assert cfg.tolerances.holonomy == 1e-8
        assert cfg.csv_name == "heavy_top.csv"
        assert cfg.suites == ["bracket_equivalence", "z_derivative", "invariance", "convergence"]

    @pytest.mark.parametrize(
        "name, scenario",
        [
            ("heavy_top.json", Scenario.HEAVY_TOP),
            ("affine.json", Scenario.AFFINE),
            ("s1.json", Scenario.S1_EXAMPLE),
            ("strand.json", Scenario.STRAND),
        ],
    )
    def test_shipped_configs(self, name, scenario):
        assert load_config(CONFIG_DIR / name).scenario is scenario

    def test_affine_quadratic(self):
        cfg = load_config(CONFIG_DIR / "affine.json")
        assert cfg.affine.potential == "quadratic"

    def test_integer_accepted_as_float(self):
        assert loads_config('{"numerics": {"t_final": 2}}').numerics.t_final == 2.0

    def test_as_matrix(self):
        np.testing.assert_allclose(as_matrix([1.0, 2.0, 3.0]), np.diag([1.0, 2.0, 3.0]))
        full = np.eye(3).tolist()
        np.testing.assert_allclose(as_matrix(full), np.eye(3))


# ╔════════════════════════════════════════════════════╗
# ║  2. 错误与行号                                      ║
# ╚════════════════════════════════════════════════════╝


class TestErrors:
    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError) as exc:
            loads_config('{\n  "scenario": "heavy_top",\n  "bogus": 1\n}', "demo.json")
        assert exc.value.key == "bogus"
        assert exc.value.line == 3
        assert str(exc.value).startswith("demo.json:3:")

    def test_unknown_nested_key(self):
        with pytest.raises(ConfigError) as exc:
            loads_config('{\n  "numerics": {\n    "dtt": 0.1\n  }\n}')
        assert exc.value.key == "numerics.dtt"
        assert exc.value.line == 3

    def test_json_syntax_error(self):
        with pytest.raises(ConfigError) as exc:
            loads_config('{\n  "seed": 1,\n}')
        assert exc.value.line == 3

    def test_top_level_must_be_object(self):
        with pytest.raises(ConfigError) as exc:
            loads_config("[1, 2]")
        assert exc.value.line == 1

    def test_unknown_scenario(self):
        with pytest.raises(ConfigError, match="未知场景"):
            loads_config('{"scenario": "pendulum"}')

    @pytest.mark.parametrize(
        "text, key",
        [
            ('{"numerics": {"dt": -0.1}}', "numerics.dt"),
            ('{"numerics": {"grid_n": 8}}', "numerics.grid_n"),
            ('{"seed": true}', "seed"),
            ('{"seed": 1.5}', "seed"),
            ('{"numerics": {"dt": "fast"}}', "numerics.dt"),
            ('{"tolerances": {"energy": 0}}', "tolerances.energy"),
            ('{"outputs": {"stride": 0}}', "outputs.stride"),
            ('{"heavy_top": {"gamma0": [0.0, 0.0, 2.0]}}', "heavy_top.gamma0"),
            ('{"heavy_top": {"inertia": [1.0, -1.0, 1.0]}}', "heavy_top.inertia"),
            ('{"heavy_top": {"mu0": [1.0, 2.0]}}', "heavy_top.mu0"),
            ('{"affine": {"potential": "cubic"}}', "affine.potential"),
            ('{"strand": {"inertia_J": [1.0, 0.0, 1.0]}}', "strand.inertia_J"),
            ('{"numerics": {"dt": 0.003}}', "numerics.t_final"),
            ('{"scenario": "affine", "numerics": {"dt": 0.001, "t_final": 0.0015}}', "numerics.t_final"),
            (
                '{"affine": {"potential": "quadratic", "stiffness": [[1.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]}}',
                "affine.stiffness",
            ),
            ('{"strand": {"manufactured": "false"}}', "strand.manufactured"),
            ('{"strand": {"manufactured": 0}}', "strand.manufactured"),
            ('{"suites": ["fuzz"]}', "suites"),
            ('{"numerics": 3}', "numerics"),
        ],
    )
    def test_invalid_values(self, text, key):
        with pytest.raises(ConfigError) as exc:
            loads_config(text)
        assert exc.value.key == key

    def test_t_final_not_checked_where_unused(self):
        s1 = loads_config('{"scenario": "s1_example", "numerics": {"dt": 0.001, "t_final": 6.283185307179586}}')
        assert s1.scenario is Scenario.S1_EXAMPLE
        strand = loads_config('{"scenario": "strand", "numerics": {"dt": 0.003, "t_final": 1.0}}')
        assert strand.scenario is Scenario.STRAND

    def test_manufactured_flag_accepts_bool(self):
        assert loads_config('{"strand": {"manufactured": false}}').strand.manufactured is False

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="不存在"):
            load_config(tmp_path / "nope.json")


# ╔════════════════════════════════════════════════════╗
# ║  3. 读写与输出目录                                  ║
# ╚════════════════════════════════════════════════════╝


class TestPersistence:
    def test_save_then_load(self, tmp_path):
        cfg = ScenarioConfig(scenario=Scenario.STRAND)
        cfg.strand.amplitude = 0.25
        path = tmp_path / "strand.json"
        save_config(path, cfg)
        back = load_config(path)
        assert back.to_dict() == cfg.to_dict()


class TestOutputDir:
    @pytest.fixture(autouse=True)
    def _isolated(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)

    def test_config_fallback(self):
        cfg = loads_config('{"outputs": {"directory": "from_config"}}')
        assert resolve_output_dir(cfg) == Path("from_config")

    def test_dotenv_beats_config(self, tmp_path):
        (tmp_path / ".env").write_text(f"{OUTPUT_DIR_ENV}=from_dotenv\n", encoding="utf-8")
        assert resolve_output_dir(ScenarioConfig()) == Path("from_dotenv")

    def test_env_beats_dotenv(self, tmp_path, monkeypatch):
        (tmp_path / ".env").write_text(f"{OUTPUT_DIR_ENV}=from_dotenv\n", encoding="utf-8")
        monkeypatch.setenv(OUTPUT_DIR_ENV, "from_env")
        assert resolve_output_dir(ScenarioConfig()) == Path("from_env")

    def test_override_beats_everything(self, monkeypatch):
        monkeypatch.setenv(OUTPUT_DIR_ENV, "from_env")
        assert resolve_output_dir(ScenarioConfig(), "cli_dir") == Path("cli_dir")
