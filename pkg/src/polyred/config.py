"""场景配置加载、校验与管理"""

from __future__ import annotations

import json
import logging
import os
import re
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path

import numpy as np
from dotenv import dotenv_values

from polyred.dynamics_ode import check_spd

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "POLYRED_OUTPUT_DIR"
KNOWN_SUITES = ("bracket_equivalence", "z_derivative", "invariance", "convergence")


class ConfigError(ValueError):
    """配置不符合 schema；line 为 1 起算的行号（未知时为 None）"""

    def __init__(self, message: str, line: int | None = None, key: str | None = None, path: str | None = None):
        super().__init__(message)
        self.message = message
        self.line = line
        self.key = key
        self.path = path

    def __str__(self) -> str:
        where = self.path or "<config>"
        return f"{where}:{self.line if self.line is not None else '?'}: {self.message}"


class Scenario(str, Enum):
    HEAVY_TOP = "heavy_top"
    STRAND = "strand"
    S1_EXAMPLE = "s1_example"
    AFFINE = "affine"
    CHECKS = "checks"


@dataclass
class NumericsConfig:
    dt: float = 1e-3
    t_final: float = 10.0
    grid_n: int = 128
    length: float = 2 * np.pi  # strand 周期长度
    fd_step: float = 1e-4
    samples: int = 20


@dataclass
class TolerancesConfig:
    energy: float = 1e-6
    casimir: float = 1e-6
    residual: float = 1e-6
    transport: float = 1e-5
    mu_bar: float = 1e-8
    curvature: float = 1e-4
    holonomy: float = 1e-8


@dataclass
class OutputsConfig:
    directory: str = "runs"
    stride: int = 10
    csv: str = ""  # 空则为 <scenario>.csv
    report: str = "diagnostics.json"
    manifest: str = "manifest.json"


@dataclass
class HeavyTopConfig:
    inertia: list = field(default_factory=lambda: [1.0, 2.0, 3.0])  # 对角元或 3×3
    mg: float = 1.0
    chi: list = field(default_factory=lambda: [0.0, 0.0, 1.0])
    mu0: list = field(default_factory=lambda: [1.0, 0.5, 0.2])
    gamma0: list = field(default_factory=lambda: [0.0, 0.6, 0.8])


@dataclass
class AffineConfig:
    inertia: list = field(default_factory=lambda: [1.0, 2.0, 3.0])
    mass_inv: list = field(default_factory=lambda: [1.0, 1.0, 1.0])
    potential: str = "linear"  # linear | quadratic
    g: float = 1.0
    stiffness: list = field(default_factory=lambda: [1.0, 2.0, 0.5])
    mu0: list = field(default_factory=lambda: [0.5, -0.3, 0.8])
    omega0: list = field(default_factory=lambda: [0.2, 0.1, -0.4])
    s0: list = field(default_factory=lambda: [0.3, -0.2, 0.5])


@dataclass
class S1Config:
    mu0: float = 1.0
    perturbation: float = 0.0  # 初值 (μy, y) 的偏离


@dataclass
class StrandConfig:
    inertia_I: list = field(default_factory=lambda: [1.0, 2.0, 3.0])
    inertia_J: list = field(default_factory=lambda: [1.0, 1.5, 2.0])
    mg: float = 1.0
    chi: list = field(default_factory=lambda: [0.0, 0.0, 1.0])
    amplitude: float = 0.1
    manufactured: bool = True


@dataclass
class ScenarioConfig:
    scenario: Scenario = Scenario.HEAVY_TOP
    seed: int = 0
    numerics: NumericsConfig = field(default_factory=NumericsConfig)
    tolerances: TolerancesConfig = field(default_factory=TolerancesConfig)
    outputs: OutputsConfig = field(default_factory=OutputsConfig)
    heavy_top: HeavyTopConfig = field(default_factory=HeavyTopConfig)
    affine: AffineConfig = field(default_factory=AffineConfig)
    s1: S1Config = field(default_factory=S1Config)
    strand: StrandConfig = field(default_factory=StrandConfig)
    suites: list[str] = field(default_factory=lambda: list(KNOWN_SUITES))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scenario"] = self.scenario.value
        return d

    @property
    def csv_name(self) -> str:
        return self.outputs.csv or f"{self.scenario.value}.csv"

    @classmethod
    def from_dict(cls, d: dict) -> ScenarioConfig:
        _reject_unknown(d, cls, "")
        cfg = cls()
        raw_scenario = d.get("scenario", "heavy_top")
        try:
            cfg.scenario = Scenario(raw_scenario)
        except ValueError:
            known = ", ".join(s.value for s in Scenario)
            raise ConfigError(f"未知场景 {raw_scenario!r}（可选: {known}）", key="scenario") from None
        cfg.seed = _int(d, "seed", 0, "")

        nm = _section(d, "numerics", NumericsConfig)
        cfg.numerics = NumericsConfig(
            dt=_float(nm, "dt", 1e-3, "numerics"),
            t_final=_float(nm, "t_final", 10.0, "numerics"),
            grid_n=_int(nm, "grid_n", 128, "numerics"),
            length=_float(nm, "length", 2 * np.pi, "numerics"),
            fd_step=_float(nm, "fd_step", 1e-4, "numerics"),
            samples=_int(nm, "samples", 20, "numerics"),
        )

        tol = _section(d, "tolerances", TolerancesConfig)
        defaults = TolerancesConfig()
        cfg.tolerances = TolerancesConfig(
            **{f.name: _float(tol, f.name, getattr(defaults, f.name), "tolerances") for f in fields(TolerancesConfig)}
        )

        out = _section(d, "outputs", OutputsConfig)
        cfg.outputs = OutputsConfig(
            directory=str(out.get("directory", "runs")),
            stride=_int(out, "stride", 10, "outputs"),
            csv=str(out.get("csv", "")),
            report=str(out.get("report", "diagnostics.json")),
            manifest=str(out.get("manifest", "manifest.json")),
        )

        ht = _section(d, "heavy_top", HeavyTopConfig)
        base = HeavyTopConfig()
        cfg.heavy_top = HeavyTopConfig(
            inertia=_list(ht, "inertia", base.inertia, "heavy_top"),
            mg=_float(ht, "mg", 1.0, "heavy_top"),
            chi=_list(ht, "chi", base.chi, "heavy_top"),
            mu0=_list(ht, "mu0", base.mu0, "heavy_top"),
            gamma0=_list(ht, "gamma0", base.gamma0, "heavy_top"),
        )

        af = _section(d, "affine", AffineConfig)
        base_af = AffineConfig()
        cfg.affine = AffineConfig(
            inertia=_list(af, "inertia", base_af.inertia, "affine"),
            mass_inv=_list(af, "mass_inv", base_af.mass_inv, "affine"),
            potential=str(af.get("potential", "linear")),
            g=_float(af, "g", 1.0, "affine"),
            stiffness=_list(af, "stiffness", base_af.stiffness, "affine"),
            mu0=_list(af, "mu0", base_af.mu0, "affine"),
            omega0=_list(af, "omega0", base_af.omega0, "affine"),
            s0=_list(af, "s0", base_af.s0, "affine"),
        )

        s1 = _section(d, "s1", S1Config)
        cfg.s1 = S1Config(
            mu0=_float(s1, "mu0", 1.0, "s1"),
            perturbation=_float(s1, "perturbation", 0.0, "s1"),
        )

        st = _section(d, "strand", StrandConfig)
        base_st = StrandConfig()
        cfg.strand = StrandConfig(
            inertia_I=_list(st, "inertia_I", base_st.inertia_I, "strand"),
            inertia_J=_list(st, "inertia_J", base_st.inertia_J, "strand"),
            mg=_float(st, "mg", 1.0, "strand"),
            chi=_list(st, "chi", base_st.chi, "strand"),
            amplitude=_float(st, "amplitude", 0.1, "strand"),
            manufactured=_bool(st, "manufactured", True, "strand"),
        )

        suites = d.get("suites", list(KNOWN_SUITES))
        if not isinstance(suites, list) or any(s not in KNOWN_SUITES for s in suites):
            raise ConfigError(f"suites 只能取 {list(KNOWN_SUITES)}，实际 {suites!r}", key="suites")
        cfg.suites = list(suites)

        validate(cfg)
        return cfg


# ── 字段解析 ──

def _reject_unknown(d: dict, schema: type, prefix: str) -> None:
    allowed = {f.name for f in fields(schema)}
    for key in d:
        if key not in allowed:
            dotted = f"{prefix}.{key}" if prefix else key
            raise ConfigError(f"未知配置项 {dotted!r}", key=dotted)


def _section(d: dict, name: str, schema: type) -> dict:
    sec = d.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"{name} 必须是对象", key=name)
    _reject_unknown(sec, schema, name)
    return sec


def _float(d: dict, key: str, default: float, prefix: str) -> float:
    value = d.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{prefix}.{key} 应为数值，实际 {value!r}", key=f"{prefix}.{key}")
    return float(value)


def _int(d: dict, key: str, default: int, prefix: str) -> int:
    value = d.get(key, default)
    dotted = f"{prefix}.{key}" if prefix else key
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{dotted} 应为整数，实际 {value!r}", key=dotted)
    return value


def _bool(d: dict, key: str, default: bool, prefix: str) -> bool:
    value = d.get(key, default)
    if not isinstance(value, bool):
        raise ConfigError(f"{prefix}.{key} 应为 true/false，实际 {value!r}", key=f"{prefix}.{key}")
    return value


def _list(d: dict, key: str, default: list, prefix: str) -> list:
    value = d.get(key, default)
    dotted = f"{prefix}.{key}"
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{dotted} 应为数值数组，实际 {value!r}", key=dotted) from None
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{dotted} 含非有限值", key=dotted)
    return arr.tolist()


def as_matrix(value: list) -> np.ndarray:
    """长度 3 的列表视为对角元，否则按 3×3 读取"""
    arr = np.asarray(value, dtype=float)
    return np.diag(arr) if arr.shape == (3,) else arr


# ── 校验 ──

def _positive(cfg_section: object, prefix: str, names: list[str]) -> None:
    for name in names:
        value = getattr(cfg_section, name)
        if not value > 0:
            raise ConfigError(f"{prefix}.{name} 必须 > 0，实际 {value}", key=f"{prefix}.{name}")


def _spd(value: list, dotted: str) -> None:
    try:
        check_spd(as_matrix(value), dotted)
    except ValueError as e:
        raise ConfigError(str(e), key=dotted) from None


def _vec3(value: list, dotted: str) -> None:
    if np.asarray(value).shape != (3,):
        raise ConfigError(f"{dotted} 应为长度 3 的数组", key=dotted)


def validate(cfg: ScenarioConfig) -> None:
    """在任何计算之前做 schema 校验"""
    _positive(cfg.numerics, "numerics", ["dt", "t_final", "length", "fd_step", "samples"])
    if cfg.numerics.grid_n < 16:
        raise ConfigError(f"numerics.grid_n 至少为 16，实际 {cfg.numerics.grid_n}", key="numerics.grid_n")
    _positive(cfg.tolerances, "tolerances", [f.name for f in fields(TolerancesConfig)])
    if cfg.outputs.stride < 1:
        raise ConfigError("outputs.stride 至少为 1", key="outputs.stride")
    if cfg.scenario in (Scenario.HEAVY_TOP, Scenario.AFFINE):
        steps = int(round(cfg.numerics.t_final / cfg.numerics.dt))
        if abs(steps * cfg.numerics.dt - cfg.numerics.t_final) > 1e-9 * max(1.0, cfg.numerics.t_final):
            raise ConfigError(
                f"numerics.t_final = {cfg.numerics.t_final} 不是 dt = {cfg.numerics.dt} 的整数倍",
                key="numerics.t_final",
            )

    ht = cfg.heavy_top
    _spd(ht.inertia, "heavy_top.inertia")
    for name in ("chi", "mu0", "gamma0"):
        _vec3(getattr(ht, name), f"heavy_top.{name}")
    if abs(np.linalg.norm(ht.gamma0) - 1.0) > 1e-9:
        raise ConfigError("heavy_top.gamma0 必须是单位向量", key="heavy_top.gamma0")
    if ht.mg < 0:
        raise ConfigError("heavy_top.mg 必须 ≥ 0", key="heavy_top.mg")

    af = cfg.affine
    _spd(af.inertia, "affine.inertia")
    _spd(af.mass_inv, "affine.mass_inv")
    if af.potential not in ("linear", "quadratic"):
        raise ConfigError(f"affine.potential 只能是 linear 或 quadratic，实际 {af.potential!r}", key="affine.potential")
    if np.asarray(af.stiffness).shape not in ((3,), (3, 3)):
        raise ConfigError("affine.stiffness 应为对角元或 3×3 矩阵", key="affine.stiffness")
    stiffness = as_matrix(af.stiffness)
    if not np.allclose(stiffness, stiffness.T):
        raise ConfigError("affine.stiffness 必须是对称矩阵", key="affine.stiffness")
    for name in ("mu0", "omega0", "s0"):
        _vec3(getattr(af, name), f"affine.{name}")

    st = cfg.strand
    _spd(st.inertia_I, "strand.inertia_I")
    _spd(st.inertia_J, "strand.inertia_J")
    _vec3(st.chi, "strand.chi")
    _positive(st, "strand", ["amplitude"])


# ── 读写 ──

def _line_of(text: str, dotted: str | None) -> int | None:
    """在原始 JSON 文本中定位（可嵌套的）键所在行"""
    if not dotted:
        return None
    pos = 0
    for part in dotted.split("."):
        m = re.compile(rf'"{re.escape(part)}"\s*:').search(text, pos)
        if m is None:
            return None
        pos = m.start()
    return text.count("\n", 0, pos) + 1


def loads_config(text: str, path: str = "<config>") -> ScenarioConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"JSON 语法错误: {e.msg}", line=e.lineno, path=path) from None
    if not isinstance(raw, dict):
        raise ConfigError("配置顶层必须是对象", line=1, path=path)
    try:
        cfg = ScenarioConfig.from_dict(raw)
    except ConfigError as e:
        e.path = path
        e.line = e.line or _line_of(text, e.key)
        raise
    logger.debug("配置已解析: %s (scenario=%s, seed=%d)", path, cfg.scenario.value, cfg.seed)
    return cfg


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError("配置文件不存在", path=str(path))
    return loads_config(path.read_text(encoding="utf-8"), str(path))


def save_config(path: str | Path, cfg: ScenarioConfig) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(cfg.to_dict(), f, ensure_ascii=False, indent=2)


def resolve_output_dir(cfg: ScenarioConfig, override: str | Path | None = None, env_file: str | Path = ".env") -> Path:
    """命令行 > 环境变量 POLYRED_OUTPUT_DIR > .env 文件 > 配置中的 outputs.directory"""
    if override:
        return Path(override)
    if os.environ.get(OUTPUT_DIR_ENV):
        return Path(os.environ[OUTPUT_DIR_ENV])
    env_path = Path(env_file)
    if env_path.exists():
        value = dotenv_values(env_path).get(OUTPUT_DIR_ENV)
        if value:
            return Path(value)
    return Path(cfg.outputs.directory)
