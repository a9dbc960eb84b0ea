"""诊断：K 不变性检验、守恒量监测、收敛阶研究与 JSON 报告"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
from scipy.linalg import expm

from polyred.dynamics_ode import AffineParams, HeavyTopParams, Trajectory, affine_energy, heavy_top_energy, s1_energy
from polyred.homogeneous import ConfigKind, action_for
from polyred.lie_core import (
    E1,
    SPLIT_INV,
    EvaluationError,
    MatrixAlgebra,
    StructureConstants,
    affine_algebra,
    r2_algebra,
    so3_algebra,
)
from polyred.reduced_bracket import HamiltonianSpec, ReducedPoint
from polyred.strand_pde import StrandParams, strand_energy

logger = logging.getLogger(__name__)

ChartEnergy = Callable[[np.ndarray, np.ndarray], float]


# ── K 不变性 ──

@dataclass
class InvarianceReport:
    max_residual: float
    sample_count: int
    per_generator: dict[int, float] = field(default_factory=dict)
    name: str = ""
    skipped: int = 0

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "max_residual": self.max_residual,
            "sample_count": self.sample_count,
            "per_generator": {str(k): v for k, v in self.per_generator.items()},
            "skipped": self.skipped,
        }


@dataclass(frozen=True)
class InvariantHamiltonian:
    """未约化哈密顿量 H(g, ν) = h(ν·Ad_{g⁻¹}, s̄(g))，ν 为左平凡化动量（代数基坐标）"""

    name: str
    algebra: MatrixAlgebra
    kind: ConfigKind
    h: HamiltonianSpec
    n: int = 1
    mu_perm: np.ndarray | None = None          # 代数基坐标 → h 使用的分量顺序
    s_bar_fn: Callable[[np.ndarray], np.ndarray] | None = None

    def energy(self, g: np.ndarray, nu: np.ndarray) -> float:
        mu = np.atleast_2d(nu) @ self.algebra.adjoint_matrix(np.linalg.inv(g))
        if self.mu_perm is not None:
            mu = mu[:, self.mu_perm]
        s = self.s_bar_fn(g) if self.s_bar_fn is not None else action_for(self.kind).from_group(g)
        return self.h(ReducedPoint(mu, s, self.kind))

    def chart(self, g_c: np.ndarray) -> ChartEnergy:
        """E(q, π) = H(g_c·e^Q, π·L(q)⁻¹)"""
        alg = self.algebra

        def e(q: np.ndarray, pi: np.ndarray) -> float:
            pi = np.atleast_2d(pi)
            if not np.any(q):
                return self.energy(g_c, pi)
            nu = np.linalg.solve(alg.left_jacobian(q).T, pi.T).T
            return self.energy(g_c @ expm(alg.expand(q)), nu)

        return e


def _central_grad(fn: Callable[[np.ndarray], float], x: np.ndarray, idx: Sequence[int], step: float) -> np.ndarray:
    out = np.empty(len(idx))
    for j, k in enumerate(idx):
        e = np.zeros_like(x)
        e.flat[k] = step
        out[j] = (fn(x + e) - fn(x - e)) / (2 * step)
    if not np.all(np.isfinite(out)):
        raise EvaluationError("不变性检验的差分导数非有限")
    return out


def invariance_residual(energy: ChartEnergy, c: StructureConstants, pi: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """k = 0 处每个 𝔨 生成元 α 的 |∂E/∂k^α − ½ π^i_γ c^γ_{βα} ∂E/∂π^i_β|"""
    pi = np.atleast_2d(np.asarray(pi, dtype=float))
    d, dim_k = c.dim_g, c.dim_k
    q0 = np.zeros(d)
    de_dk = _central_grad(lambda q: energy(q, pi), q0, range(dim_k), step)
    de_dpi = _central_grad(lambda p: energy(q0, p), pi, range(pi.size), step).reshape(pi.shape)
    term = 0.5 * np.einsum("ig,gba,ib->a", pi, c.c[:, :, :dim_k], de_dpi)
    return np.abs(de_dk - term)


def invariance_check(
    energy: InvariantHamiltonian | ChartEnergy,
    c: StructureConstants | None = None,
    samples: int = 20,
    n: int = 1,
    rng: np.random.Generator | None = None,
    step: float = 1e-5,
    pi_scale: float = 1.0,
) -> InvarianceReport:
    """随机样本上检验 K 不变性恒等式；InvariantHamiltonian 每个样本取随机坐标卡中心"""
    rng = rng or np.random.default_rng(0)
    if isinstance(energy, InvariantHamiltonian):
        c = energy.algebra.constants
        n = energy.n
        name = energy.name
    elif c is None:
        raise ValueError("直接给出 E(q, π) 时必须提供结构常数")
    else:
        name = getattr(energy, "__name__", "E")
    worst = np.zeros(c.dim_k)
    count = skipped = 0
    for k in range(samples):
        pi = pi_scale * rng.normal(size=(n, c.dim_g))
        if isinstance(energy, InvariantHamiltonian):
            fn = energy.chart(energy.algebra.exp(rng.normal(size=c.dim_g)))
        else:
            fn = energy
        try:
            res = invariance_residual(fn, c, pi, step)
        except (EvaluationError, np.linalg.LinAlgError) as e:
            skipped += 1
            logger.warning("不变性样本 %d 跳过: %s", k, e)
            continue
        worst = np.maximum(worst, res)
        count += 1
    report = InvarianceReport(
        float(np.max(worst, initial=0.0)), count, {a: float(r) for a, r in enumerate(worst)}, name, skipped
    )
    logger.info("不变性 %s: %d 样本, 最大残差 %.3e", name, count, report.max_residual)
    return report


# 已发布的 K 不变哈密顿量（so(3) 使用 𝔨 在前的分裂基）

def heavy_top_invariant(prm: HeavyTopParams | None = None) -> InvariantHamiltonian:
    return InvariantHamiltonian(
        "heavy_top", so3_algebra(split=True), ConfigKind.SPHERE, heavy_top_energy(prm or HeavyTopParams()),
        mu_perm=SPLIT_INV,
    )


def broken_heavy_top(prm: HeavyTopParams | None = None) -> InvariantHamiltonian:
    """对照组：势能改用 R·e1，不再关于 e3 轴对称"""
    return InvariantHamiltonian(
        "heavy_top_broken", so3_algebra(split=True), ConfigKind.SPHERE, heavy_top_energy(prm or HeavyTopParams()),
        mu_perm=SPLIT_INV, s_bar_fn=lambda g: g[:3, :3] @ E1,
    )


def strand_invariant(prm: StrandParams | None = None) -> InvariantHamiltonian:
    return InvariantHamiltonian(
        "strand", so3_algebra(split=True), ConfigKind.SPHERE, strand_energy(prm or StrandParams(mg=1.0)),
        n=2, mu_perm=SPLIT_INV,
    )


def affine_invariant(prm: AffineParams | None = None) -> InvariantHamiltonian:
    return InvariantHamiltonian("affine", affine_algebra(), ConfigKind.AFFINE, affine_energy(prm or AffineParams()))


def s1_invariant() -> InvariantHamiltonian:
    return InvariantHamiltonian("s1", r2_algebra(), ConfigKind.LINE, s1_energy())


def shipped_invariants() -> dict[str, InvariantHamiltonian]:
    return {
        "heavy_top": heavy_top_invariant(),
        "strand": strand_invariant(),
        "affine": affine_invariant(),
        "s1": s1_invariant(),
    }


# ── 守恒量 ──

@dataclass
class ConservationLog:
    times: np.ndarray
    series: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("时间戳必须严格递增")

    @property
    def initial(self) -> dict[str, float]:
        return {k: float(v[0]) for k, v in self.series.items()}

    @property
    def drifts(self) -> dict[str, float]:
        """max |f(t) − f(0)| / max(1, |f(0)|)"""
        return {
            k: float(np.max(np.abs(v - v[0])) / max(1.0, abs(float(v[0])))) for k, v in self.series.items()
        }

    def columns(self) -> tuple[list[str], np.ndarray]:
        names = list(self.series)
        return names, np.column_stack([self.series[k] for k in names])

    def to_dict(self) -> dict:
        return {"initial": self.initial, "drift": self.drifts, "samples": int(self.times.shape[0])}


def conservation_monitor(
    traj: Trajectory,
    functionals: dict[str, Callable[[np.ndarray], float]],
) -> ConservationLog:
    series = {name: np.array([fn(s) for s in traj.states]) for name, fn in functionals.items()}
    log = ConservationLog(np.asarray(traj.times, dtype=float), series)
    for name, drift in log.drifts.items():
        logger.debug("漂移 %s = %.3e", name, drift)
    return log


# ── 收敛阶 ──

@dataclass
class ConvergenceResult:
    steps: list[float]
    errors: list[float]
    slope: float
    fit_residual: float
    status: str  # ok | inconclusive | degenerate

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "errors": self.errors,
            "slope": self.slope,
            "fit_residual": self.fit_residual,
            "status": self.status,
        }


def convergence_study(runner: Callable[[float], float], levels: Sequence[float]) -> ConvergenceResult:
    """对每个步长 h 求误差，log(误差)–log(h) 最小二乘斜率即收敛阶"""
    if len(levels) < 3:
        raise ValueError(f"收敛研究至少需要 3 个层级，实际 {len(levels)}")
    steps = [float(h) for h in levels]
    errors = [float(runner(h)) for h in steps]
    if any(not np.isfinite(e) or e <= 0.0 for e in errors):
        logger.warning("收敛研究退化：误差 %s", errors)
        return ConvergenceResult(steps, errors, float("nan"), float("nan"), "degenerate")
    log_h, log_e = np.log(steps), np.log(errors)
    design = np.column_stack([log_h, np.ones_like(log_h)])
    coef, *_ = np.linalg.lstsq(design, log_e, rcond=None)
    fit = float(np.sqrt(np.mean((design @ coef - log_e) ** 2)))
    order = np.argsort(steps)
    monotone = all(errors[order[k]] < errors[order[k + 1]] for k in range(len(steps) - 1))
    status = "ok" if monotone else "inconclusive"
    if not monotone:
        logger.warning("收敛研究非单调：步长 %s 误差 %s", steps, errors)
    return ConvergenceResult(steps, errors, float(coef[0]), fit, status)


# ── 报告 ──

def _jsonable(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"无法序列化 {type(obj).__name__}")


def dumps_report(payload: dict) -> str:
    return json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True, default=_jsonable)


def write_report(path: str | Path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_report(payload) + "\n", encoding="utf-8")
    logger.info("报告已写入 %s", path)
    return path


# ── 检查表 ──

@dataclass
class CheckResult:
    name: str
    measured: float
    bound: float
    passed: bool
    detail: str = ""

    def row(self) -> str:
        mark = "✓" if self.passed else "✗"
        measured = f"{self.measured:.3e}" if np.isfinite(self.measured) else "-"
        bound = f"{self.bound:.1e}" if np.isfinite(self.bound) else "-"
        line = f"  {self.name:<44s} {measured:>11s} {bound:>9s}  {mark}"
        return line + (f"  ({self.detail})" if self.detail else "")


@dataclass
class CheckTable:
    """度量值对照上界的检查结果；measured ≤ bound 为通过"""

    name: str
    results: list[CheckResult] = field(default_factory=list)

    def check(self, name: str, measured: float, bound: float, detail: str = "") -> CheckResult:
        measured = float(measured)
        result = CheckResult(name, measured, float(bound), bool(measured <= bound), detail)
        self.results.append(result)
        if not result.passed:
            logger.warning("检查未通过 %s: %.3e > %.1e", name, measured, bound)
        return result

    def flag(self, name: str, passed: bool, detail: str = "") -> CheckResult:
        result = CheckResult(name, float("nan"), float("nan"), bool(passed), detail)
        self.results.append(result)
        if not passed:
            logger.warning("检查未通过 %s: %s", name, detail)
        return result

    def extend(self, other: CheckTable) -> None:
        self.results.extend(other.results)

    @property
    def passed(self) -> int:
        return sum(1 for r in self.results if r.passed)

    @property
    def failed(self) -> int:
        return sum(1 for r in self.results if not r.passed)

    @property
    def total(self) -> int:
        return len(self.results)

    def violations(self) -> list[str]:
        return [r.name for r in self.results if not r.passed]

    def summary(self) -> str:
        if self.failed == 0:
            return f"[{self.name}] 全部通过 {self.passed}/{self.total}"
        return f"[{self.name}] 通过 {self.passed}/{self.total}，失败 {self.failed}"

    def render(self) -> str:
        header = f"  {'name':<44s} {'measured':>11s} {'bound':>9s}"
        return "\n".join([header] + [r.row() for r in self.results] + [self.summary()])

    def to_dict(self) -> list[dict]:
        return [
            {
                "name": r.name,
                "measured": r.measured if np.isfinite(r.measured) else None,
                "bound": r.bound if np.isfinite(r.bound) else None,
                "passed": r.passed,
                "detail": r.detail,
            }
            for r in self.results
        ]
