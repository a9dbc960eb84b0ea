"""命名检验套件：括号等价性、Z 函数导数恒等式、K 不变性、收敛阶"""

from __future__ import annotations

import logging
from typing import Callable

import numpy as np

from polyred.diagnostics import (
    CheckTable,
    broken_heavy_top,
    convergence_study,
    invariance_check,
    shipped_invariants,
)
from polyred.dynamics_ode import (
    AffineParams,
    HeavyTopParams,
    OdeState,
    QuadraticPotential,
    affine_energy,
    heavy_top_energy,
    heavy_top_rhs,
    integrate,
    s1_energy,
)
from polyred.homogeneous import ConfigKind
from polyred.lie_core import SHIPPED_ALGEBRAS, SPLIT_PERM, so3_algebra, so3_constants, z_derivative_check
from polyred.reduced_bracket import (
    HamiltonianSpec,
    LinearForm,
    ReducedPoint,
    bracket_equivalence_check,
    local_bracket_sc,
    reduced_bracket,
)
from polyred.strand_pde import (
    StrandParams,
    centered_diff,
    manufactured_fields,
    manufactured_rotation,
    strand_energy,
    strand_residuals,
)

logger = logging.getLogger(__name__)

BRACKET_TOL = 1e-5
ABELIAN_BRACKET_TOL = 1e-10
LOCAL_BRACKET_TOL = 1e-8
Z_TOL = 1e-6
INVARIANCE_TOL = 1e-6
BROKEN_MIN = 1e-2


def _linear_form(rng: np.random.Generator, dim: int, config_dim: int) -> LinearForm:
    xi = rng.normal(size=dim)
    w = rng.normal(size=config_dim)
    return LinearForm(xi, omega_fn=lambda s, w=w: float(w @ s))


def suite_bracket_equivalence(seed: int = 0, samples: int | None = None) -> CheckTable:
    """坐标卡中的未约化括号 vs 约化括号，以及结构常数局部形式 vs 内蕴形式"""
    samples = samples or 100
    rng = np.random.default_rng(seed)
    table = CheckTable("bracket_equivalence")
    cases: list[tuple[str, HamiltonianSpec, ConfigKind, int, int, float]] = [
        ("heavy_top", heavy_top_energy(HeavyTopParams()), ConfigKind.SPHERE, 3, 1, BRACKET_TOL),
        ("strand", strand_energy(StrandParams(mg=1.0)), ConfigKind.SPHERE, 3, 2, BRACKET_TOL),
        ("affine", affine_energy(AffineParams(potential=QuadraticPotential(np.diag([1.0, 2.0, 0.5])))),
         ConfigKind.AFFINE, 6, 1, BRACKET_TOL),
        ("s1", s1_energy(), ConfigKind.LINE, 2, 1, ABELIAN_BRACKET_TOL),
    ]
    config_dims = {ConfigKind.SPHERE: 3, ConfigKind.AFFINE: 3, ConfigKind.LINE: 1}
    for name, h, kind, dim, n, tol in cases:
        f = _linear_form(rng, dim, config_dims[kind])
        rep = bracket_equivalence_check(h, f, kind, samples=samples, n=n, rng=rng)
        table.check(f"bracket.{name}", rep.max_rel_error, tol, f"{rep.samples} 样本, 跳过 {rep.skipped}")

    # 重陀螺：结构常数局部形式
    h = heavy_top_energy(HeavyTopParams())
    algebra = so3_algebra(split=True)
    worst = 0.0
    for _ in range(samples):
        gamma = rng.normal(size=3)
        p = ReducedPoint(rng.normal(size=3), gamma / np.linalg.norm(gamma), ConfigKind.SPHERE)
        f = _linear_form(rng, 3, 3)
        ref = reduced_bracket(so3_constants(), f, h, p)
        got = local_bracket_sc(algebra, f, h, p, perm=SPLIT_PERM)
        worst = max(worst, abs(got - ref) / max(1.0, abs(ref)))
    table.check("bracket.local_vs_intrinsic", worst, LOCAL_BRACKET_TOL)
    return table


def suite_z_derivative(seed: int = 0, samples: int | None = None) -> CheckTable:
    table = CheckTable("z_derivative")
    for name, factory in SHIPPED_ALGEBRAS.items():
        table.check(f"z_derivative.{name}", z_derivative_check(factory()), Z_TOL)
    return table


def suite_invariance(seed: int = 0, samples: int | None = None) -> CheckTable:
    samples = samples or 20
    table = CheckTable("invariance")
    for name, ham in shipped_invariants().items():
        rep = invariance_check(ham, samples=samples, rng=np.random.default_rng(seed))
        table.check(f"invariance.{name}", rep.max_residual, INVARIANCE_TOL)
    broken = invariance_check(broken_heavy_top(), samples=samples, rng=np.random.default_rng(seed))
    table.flag(
        "invariance.broken_control",
        broken.max_residual > BROKEN_MIN,
        f"残差 {broken.max_residual:.3e}，应 > {BROKEN_MIN:.0e}",
    )
    return table


# ── 收敛阶 ──

def rk4_rigid_body_error(dt: float, t_final: float = 1.0) -> float:
    """自由刚体（mg = 0）上 RK4 终点误差，参考解取 dt/16"""
    prm = HeavyTopParams(mg=0.0)
    state = OdeState.heavy_top([1.0, 0.5, 0.2], [0.0, 0.6, 0.8])

    def rhs(y: np.ndarray) -> np.ndarray:
        return heavy_top_rhs(y, prm)

    coarse = integrate(state, rhs, dt, t_final).states[-1]
    fine = integrate(state, rhs, dt / 16, t_final).states[-1]
    return float(np.linalg.norm(coarse[:3] - fine[:3]))


def centered_diff_error(ds: float) -> float:
    """正弦模态上中心差分的最大误差"""
    n = int(round(2 * np.pi / ds))
    s = np.arange(n) * (2 * np.pi / n)
    return float(np.max(np.abs(centered_diff(np.sin(s), 2 * np.pi / n) - np.cos(s))))


def strand_manufactured_error(ds: float, amplitude: float = 0.3, t0: float = 0.3) -> float:
    """人造平坦解的约束残差（平行 s / 平行 t / 曲率）最大值，dt ∝ Δs"""
    n = int(round(2 * np.pi / ds))
    prm = StrandParams(grid_n=n)
    dt = 0.2 * prm.ds
    rotation = manufactured_rotation(amplitude, prm.length)
    f0 = manufactured_fields(rotation, prm, t0)
    f1 = manufactured_fields(rotation, prm, t0 + dt)
    return strand_residuals(f0, f1, prm, dt).constraint_max()


CONVERGENCE_CASES: dict[str, tuple[Callable[[float], float], list[float], float, float]] = {
    # 名称: (误差函数, 步长层级, 期望阶, 允许偏差)
    "rk4_rigid_body": (rk4_rigid_body_error, [0.1, 0.05, 0.025], 4.0, 0.2),
    "centered_diff": (centered_diff_error, [2 * np.pi / 32, 2 * np.pi / 64, 2 * np.pi / 128], 2.0, 0.1),
}


def suite_convergence(seed: int = 0, samples: int | None = None) -> CheckTable:
    table = CheckTable("convergence")
    for name, (runner, levels, order, slack) in CONVERGENCE_CASES.items():
        res = convergence_study(runner, levels)
        table.check(f"convergence.{name}", abs(res.slope - order), slack, f"slope {res.slope:.3f}, {res.status}")
    res = convergence_study(strand_manufactured_error, [2 * np.pi / 64, 2 * np.pi / 128, 2 * np.pi / 256])
    table.flag("convergence.strand_manufactured", res.slope >= 1.9, f"slope {res.slope:.3f} ≥ 1.9, {res.status}")
    return table


SUITES: dict[str, Callable[..., CheckTable]] = {
    "bracket_equivalence": suite_bracket_equivalence,
    "z_derivative": suite_z_derivative,
    "invariance": suite_invariance,
    "convergence": suite_convergence,
}


def run_suite(name: str, seed: int = 0, samples: int | None = None) -> CheckTable:
    try:
        suite = SUITES[name]
    except KeyError:
        raise KeyError(f"未知检验套件 {name!r}（可选: {', '.join(SUITES)}）") from None
    table = suite(seed=seed, samples=samples)
    logger.info("%s", table.summary())
    return table
