"""polyred 命令行工具"""

from __future__ import annotations

import json
import logging
import os
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path

import click

from polyred.config import (
    ConfigError,
    Scenario,
    ScenarioConfig,
    load_config,
    resolve_output_dir,
    save_config,
)
from polyred.diagnostics import write_report
from polyred.lie_core import NumericalError

logger = logging.getLogger(__name__)

LOG_LEVEL_ENV = "POLYRED_LOG_LEVEL"

EXIT_VIOLATION = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

SCENARIO_NOTES: dict[Scenario, tuple[str, list[str], list[str]]] = {
    # 场景: (说明, 方程, 读取的配置节)
    Scenario.HEAVY_TOP: (
        "重陀螺：SO(3) 按 SO(2) 约化，能量/Casimir 守恒、一般约化残差与 R(t) 重构",
        ["dμ/dt = μ×a + mg Γ×χ", "dΓ/dt = −a×Γ", "a = 𝕀⁻¹μ,  h = ½ μ·a + mg Γ·χ"],
        ["numerics", "tolerances", "outputs", "heavy_top"],
    ),
    Scenario.STRAND: (
        "SO(3)-strand：(s, t) 上的约化场方程，平行/曲率约束与重构闭合",
        [
            "∂t μ^t = −∂s μ^s + Ω×μ^s − ω×μ^t + mg Γ×χ",
            "∂t Γ = −ω×Γ,  ∂t μ^s = 𝕁(−∂s ω + Ω×ω)",
            "ω = 𝕀⁻¹μ^t,  Ω = 𝕁⁻¹μ^s",
        ],
        ["numerics", "tolerances", "outputs", "strand"],
    ),
    Scenario.S1_EXAMPLE: (
        "S¹ 例：ℝ² 按 x 平移约化，周期解族与 holonomy 障碍",
        ["(μx, μy, y)' = (0, y, μy)", "h = ½(μx² + μy² − y²)", "holonomy = 2π μ0"],
        ["numerics", "tolerances", "outputs", "s1"],
    ),
    Scenario.AFFINE: (
        "仿射 SO(3)⋉ℝ³ 按 SO(3) 约化，μ̄ 守恒律与不变性",
        [
            "dμ/dt = μ×a + ω×b + s̄×c,  dω/dt = ω×a + c,  ds̄/dt = −a×s̄ − b",
            "a = 𝕀⁻¹μ,  b = M⁻¹ω,  c = ∇V(s̄)",
            "μ̄ = μ − s̄×ω,  dμ̄/dt = μ̄×a",
        ],
        ["numerics", "tolerances", "outputs", "affine"],
    ),
    Scenario.CHECKS: (
        "只运行 suites 中列出的检验套件",
        [],
        ["numerics.samples", "seed", "suites"],
    ),
}


def _setup_logging(out_dir: Path | None, verbose: bool, default: str = "WARNING") -> None:
    fmt = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
    level_name = "DEBUG" if verbose else os.environ.get(LOG_LEVEL_ENV, default).upper()
    level = getattr(logging, level_name, logging.WARNING)
    handlers: list[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        handlers.append(
            RotatingFileHandler(
                out_dir / "polyred.log",
                maxBytes=10*1024*1024,  # 10MB
                backupCount=3,
                encoding="utf-8",
            )
        )
    logging.basicConfig(level=level, format=fmt, handlers=handlers, force=True)


@click.group()
@click.version_option(package_name="polyred")
def cli() -> None:
    """polyred — 按子群的 Lie–Poisson 约化：约化括号、运动方程、重构与数值诊断"""


@cli.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--output-dir", "-o", default=None, help="输出目录（优先于 POLYRED_OUTPUT_DIR 与配置）")
@click.option("--verbose", "-v", is_flag=True, help="DEBUG 级日志")
def run(config: str, output_dir: str | None, verbose: bool) -> None:
    """按 CONFIG 运行一个场景，写出 CSV、诊断 JSON 与运行清单"""
    from polyred.scenarios import run_scenario

    try:
        cfg = load_config(config)
    except ConfigError as e:
        click.echo(f"配置错误: {e}", err=True)
        raise SystemExit(EXIT_CONFIG)

    out_dir = resolve_output_dir(cfg, output_dir)
    _setup_logging(out_dir, verbose, default="INFO")
    try:
        result = run_scenario(cfg, out_dir)
    except NumericalError as e:
        logger.error("数值失败: %s", e)
        click.echo(f"数值失败 ({type(e).__name__}): {e}", err=True)
        raise SystemExit(EXIT_NUMERICAL)

    click.echo(result.table.render())
    click.echo(f"产物目录: {out_dir}")
    if not result.ok:
        click.echo(f"界限未满足: {', '.join(result.table.violations())}", err=True)
        raise SystemExit(EXIT_VIOLATION)


@cli.command()
@click.argument("suite")
@click.option("--seed", default=0, show_default=True, help="随机采样种子")
@click.option("--samples", default=None, type=int, help="采样点数（缺省按套件）")
@click.option("--json", "json_path", default=None, type=click.Path(dir_okay=False), help="同时写出 JSON 报告")
@click.option("--verbose", "-v", is_flag=True, help="DEBUG 级日志")
def check(suite: str, seed: int, samples: int | None, json_path: str | None, verbose: bool) -> None:
    """运行检验套件 SUITE：bracket_equivalence / z_derivative / invariance / convergence"""
    from polyred.suites import SUITES, run_suite

    _setup_logging(None, verbose)
    if suite not in SUITES:
        click.echo(f"未知检验套件 {suite!r}（可选: {', '.join(SUITES)}）", err=True)
        raise SystemExit(EXIT_CONFIG)
    try:
        table = run_suite(suite, seed=seed, samples=samples)
    except NumericalError as e:
        click.echo(f"数值失败 ({type(e).__name__}): {e}", err=True)
        raise SystemExit(EXIT_NUMERICAL)

    click.echo(table.render())
    if json_path:
        write_report(json_path, {"suite": suite, "seed": seed, "checks": table.to_dict()})
    if table.failed:
        raise SystemExit(EXIT_VIOLATION)


@cli.command()
@click.argument("scenario")
@click.option("--write", "write_path", default=None, type=click.Path(dir_okay=False), help="把缺省配置写到文件")
def describe(scenario: str, write_path: str | None) -> None:
    """说明场景 SCENARIO 并打印其缺省配置"""
    try:
        kind = Scenario(scenario)
    except ValueError:
        known = ", ".join(s.value for s in Scenario)
        click.echo(f"未知场景 {scenario!r}（可选: {known}）", err=True)
        raise SystemExit(EXIT_CONFIG)

    summary, equations, keys = SCENARIO_NOTES[kind]
    cfg = ScenarioConfig(scenario=kind)
    click.echo(summary)
    for line in equations:
        click.echo(f"  {line}")
    click.echo(f"配置节: {', '.join(keys)}")
    click.echo(json.dumps(cfg.to_dict(), ensure_ascii=False, indent=2))
    if write_path:
        save_config(write_path, cfg)
        click.echo(f"已写入 {write_path}", err=True)
