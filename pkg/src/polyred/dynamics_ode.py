"""约化运动方程（常微分情形）：重陀螺、仿射 SO(3)⋉ℝ³ 理论、S¹ 例子，RK4 积分与一般约化残差"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Callable

import numpy as np

from polyred.homogeneous import ConfigKind, action_for
from polyred.lie_core import (
    E3,
    DimensionError,
    StepRejected,
    StructureConstants,
    affine_constants,
    as_vector,
    coad,
    r2_constants,
    so3_constants,
)
from polyred.reduced_bracket import HamiltonianSpec, ReducedPoint, fiber_derivative, vertical_derivative

logger = logging.getLogger(__name__)

SPD_TOL = 1e-10

Rhs = Callable[[np.ndarray], np.ndarray]


def check_spd(m, name: str = "matrix") -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        raise DimensionError(f"{name} 应为 3×3，实际 {m.shape}")
    if np.max(np.abs(m - m.T)) > SPD_TOL:
        raise ValueError(f"{name} 不对称")
    if np.min(np.linalg.eigvalsh(m)) <= 0:
        raise ValueError(f"{name} 不是正定矩阵")
    return m


# ── 参数 ──

@dataclass(frozen=True)
class HeavyTopParams:
    inertia: np.ndarray = field(default_factory=lambda: np.diag([1.0, 2.0, 3.0]))
    mg: float = 1.0
    chi: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self) -> None:
        object.__setattr__(self, "inertia", check_spd(self.inertia, "inertia"))
        object.__setattr__(self, "chi", as_vector(self.chi, 3, "chi"))
        if self.mg < 0:
            raise ValueError(f"mg 必须 ≥ 0，实际 {self.mg}")

    @cached_property
    def inertia_inv(self) -> np.ndarray:
        return np.linalg.inv(self.inertia)


class Potential(ABC):
    """仿射纤维上的势 V(s̄)"""

    @abstractmethod
    def value(self, s: np.ndarray) -> float:
        ...

    @abstractmethod
    def gradient(self, s: np.ndarray) -> np.ndarray:
        ...


@dataclass(frozen=True)
class LinearPotential(Potential):
    """V = g⟨s̄, d⟩"""

    g: float = 1.0
    direction: np.ndarray = field(default_factory=lambda: E3.copy())

    def value(self, s):
        return float(self.g * np.dot(s, self.direction))

    def gradient(self, s):
        return self.g * np.asarray(self.direction, dtype=float)


@dataclass(frozen=True)
class QuadraticPotential(Potential):
    """V = ½ s̄·K s̄"""

    stiffness: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self) -> None:
        k = np.asarray(self.stiffness, dtype=float)
        if k.shape != (3, 3) or np.max(np.abs(k - k.T)) > SPD_TOL:
            raise ValueError("stiffness 必须是对称 3×3 矩阵")
        object.__setattr__(self, "stiffness", k)

    def value(self, s):
        return float(0.5 * s @ self.stiffness @ s)

    def gradient(self, s):
        return self.stiffness @ s


@dataclass(frozen=True)
class AffineParams:
    inertia: np.ndarray = field(default_factory=lambda: np.diag([1.0, 2.0, 3.0]))
    mass_inv: np.ndarray = field(default_factory=lambda: np.eye(3))
    potential: Potential = field(default_factory=LinearPotential)

    def __post_init__(self) -> None:
        object.__setattr__(self, "inertia", check_spd(self.inertia, "inertia"))
        object.__setattr__(self, "mass_inv", check_spd(self.mass_inv, "mass_inv"))

    @cached_property
    def inertia_inv(self) -> np.ndarray:
        return np.linalg.inv(self.inertia)


# ── 状态 ──

class StateKind(str, Enum):
    HEAVY_TOP = "heavy_top"
    AFFINE = "affine"
    S1 = "s1"


_LAYOUT: dict[StateKind, tuple[tuple[str, int], ...]] = {
    StateKind.HEAVY_TOP: (("mu", 3), ("gamma", 3)),
    StateKind.AFFINE: (("mu", 3), ("omega", 3), ("s_bar", 3)),
    StateKind.S1: (("mu_x", 1), ("mu_y", 1), ("y", 1)),
}


@dataclass(frozen=True)
class OdeState:
    """按场景打标签的扁平状态向量"""

    kind: StateKind
    values: np.ndarray

    def __post_init__(self) -> None:
        kind = StateKind(self.kind)
        size = sum(n for _, n in _LAYOUT[kind])
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "values", as_vector(self.values, size, kind.value))

    @classmethod
    def heavy_top(cls, mu, gamma) -> OdeState:
        return cls(StateKind.HEAVY_TOP, np.concatenate([as_vector(mu, 3), as_vector(gamma, 3)]))

    @classmethod
    def affine(cls, mu, omega, s_bar) -> OdeState:
        parts = [as_vector(mu, 3), as_vector(omega, 3), as_vector(s_bar, 3)]
        return cls(StateKind.AFFINE, np.concatenate(parts))

    @classmethod
    def s1(cls, mu_x: float, mu_y: float, y: float) -> OdeState:
        return cls(StateKind.S1, np.array([mu_x, mu_y, y], dtype=float))

    def parts(self) -> dict[str, np.ndarray | float]:
        out: dict[str, np.ndarray | float] = {}
        pos = 0
        for name, n in _LAYOUT[self.kind]:
            chunk = self.values[pos:pos + n]
            out[name] = float(chunk[0]) if n == 1 else chunk.copy()
            pos += n
        return out

    @staticmethod
    def columns(kind: StateKind | str) -> list[str]:
        cols: list[str] = []
        for name, n in _LAYOUT[StateKind(kind)]:
            cols.extend([name] if n == 1 else [f"{name}{k + 1}" for k in range(n)])
        return cols


def reduced_point(kind: StateKind | str, values: np.ndarray) -> ReducedPoint:
    """扁平状态 → ReducedPoint"""
    kind = StateKind(kind)
    v = np.asarray(values, dtype=float)
    if kind is StateKind.HEAVY_TOP:
        return ReducedPoint(v[:3], v[3:6], ConfigKind.SPHERE)
    if kind is StateKind.AFFINE:
        return ReducedPoint(v[:6], v[6:9], ConfigKind.AFFINE)
    return ReducedPoint(v[:2], v[2:3], ConfigKind.LINE)


def algebra_constants(kind: StateKind | str) -> StructureConstants:
    kind = StateKind(kind)
    if kind is StateKind.HEAVY_TOP:
        return so3_constants()
    if kind is StateKind.AFFINE:
        return affine_constants()
    return r2_constants()


# ── 重陀螺 ──

def heavy_top_rhs(st: OdeState | np.ndarray, prm: HeavyTopParams) -> np.ndarray:
    """dμ/dt = μ × 𝕀⁻¹μ + mg Γ×χ，dΓ/dt = −𝕀⁻¹μ × Γ"""
    v = st.values if isinstance(st, OdeState) else np.asarray(st, dtype=float)
    mu, gamma = v[:3], v[3:6]
    a = prm.inertia_inv @ mu
    return np.concatenate([np.cross(mu, a) + prm.mg * np.cross(gamma, prm.chi), -np.cross(a, gamma)])


def heavy_top_energy(prm: HeavyTopParams) -> HamiltonianSpec:
    def h(p: ReducedPoint) -> float:
        mu = p.mu[0]
        return float(0.5 * mu @ prm.inertia_inv @ mu + prm.mg * p.s_bar @ prm.chi)

    return HamiltonianSpec(
        eval=h,
        d_mu=lambda p: (prm.inertia_inv @ p.mu[0])[None, :],
        d_s=lambda p: prm.mg * prm.chi,
        name="heavy_top",
    )


def heavy_top_functionals(prm: HeavyTopParams) -> dict[str, Callable[[np.ndarray], float]]:
    def energy(v: np.ndarray) -> float:
        return float(0.5 * v[:3] @ prm.inertia_inv @ v[:3] + prm.mg * v[3:6] @ prm.chi)

    return {
        "h": energy,
        "mu_dot_gamma": lambda v: float(v[:3] @ v[3:6]),
        "gamma_norm2": lambda v: float(v[3:6] @ v[3:6]),
    }


# ── 仿射理论 ──

def affine_rhs(st: OdeState | np.ndarray, prm: AffineParams) -> np.ndarray:
    """a = 𝕀⁻¹μ, b = M⁻¹ω, c = ∇V(s̄)：
    dμ/dt = μ×a + ω×b + s̄×c，dω/dt = ω×a + c，ds̄/dt = −a×s̄ − b
    """
    v = st.values if isinstance(st, OdeState) else np.asarray(st, dtype=float)
    mu, omega, s = v[:3], v[3:6], v[6:9]
    a = prm.inertia_inv @ mu
    b = prm.mass_inv @ omega
    c = prm.potential.gradient(s)
    return np.concatenate([
        np.cross(mu, a) + np.cross(omega, b) + np.cross(s, c),
        np.cross(omega, a) + c,
        -np.cross(a, s) - b,
    ])


def affine_energy(prm: AffineParams) -> HamiltonianSpec:
    def h(p: ReducedPoint) -> float:
        mu, omega = p.mu[0, :3], p.mu[0, 3:]
        return float(
            0.5 * mu @ prm.inertia_inv @ mu
            + 0.5 * omega @ prm.mass_inv @ omega
            + prm.potential.value(p.s_bar)
        )

    def d_mu(p: ReducedPoint) -> np.ndarray:
        return np.concatenate([prm.inertia_inv @ p.mu[0, :3], prm.mass_inv @ p.mu[0, 3:]])[None, :]

    return HamiltonianSpec(eval=h, d_mu=d_mu, d_s=lambda p: prm.potential.gradient(p.s_bar), name="affine")


def affine_mu_bar(v: np.ndarray) -> np.ndarray:
    """μ̄ = μ − ω ⊗ s̄，ℝ³ 实现为 μ − s̄ × ω"""
    v = np.asarray(v, dtype=float)
    return v[:3] - np.cross(v[6:9], v[3:6])


def affine_functionals(prm: AffineParams) -> dict[str, Callable[[np.ndarray], float]]:
    spec = affine_energy(prm)
    return {
        "h": lambda v: spec(reduced_point(StateKind.AFFINE, v)),
        "mu_bar_norm": lambda v: float(np.linalg.norm(affine_mu_bar(v))),
    }


# ── S¹ 例子（ℝ² 阿贝尔，K = x 方向平移）──

def s1_rhs(st: OdeState | np.ndarray) -> np.ndarray:
    """(μx, μy, y)' = (0, y, μy)"""
    v = st.values if isinstance(st, OdeState) else np.asarray(st, dtype=float)
    return np.array([0.0, v[2], v[1]])


def s1_energy() -> HamiltonianSpec:
    return HamiltonianSpec(
        eval=lambda p: float(0.5 * (p.mu[0] @ p.mu[0] - p.s_bar[0] ** 2)),
        d_mu=lambda p: p.mu.copy(),
        d_s=lambda p: np.array([-p.s_bar[0]]),
        name="s1",
    )


def s1_monodromy(dt: float = 1e-3) -> tuple[np.ndarray, np.ndarray]:
    """(μy, y) 子系统在 [0, 2π] 上的单值矩阵：(RK4 数值解, 闭式解)"""
    steps = int(round(2 * np.pi / dt))
    h = 2 * np.pi / steps
    cols = []
    for e in np.eye(2):
        v = np.array([0.0, e[0], e[1]])
        for _ in range(steps):
            v = rk4_step(v, s1_rhs, h)
        cols.append(v[1:])
    numeric = np.stack(cols, axis=1)
    ch, sh = np.cosh(2 * np.pi), np.sinh(2 * np.pi)
    return numeric, np.array([[ch, sh], [sh, ch]])


@dataclass
class S1PeriodicFamily:
    """2π 周期解族：μx = μ0 任意，μy = y = 0"""

    mu_y: float
    y: float
    eigenvalues: np.ndarray
    unique: bool
    mu_x_free: bool = True

    def to_dict(self) -> dict:
        return {
            "mu_x": "free",
            "mu_y": self.mu_y,
            "y": self.y,
            "monodromy_eigenvalues": sorted(float(np.real(e)) for e in self.eigenvalues),
            "unique": self.unique,
        }


def s1_periodic_solve(dt: float = 1e-3) -> S1PeriodicFamily:
    """周期条件 (M − I)x = 0；M 无特征值 1 时 (μy, y) 只能为 0"""
    numeric, _ = s1_monodromy(dt)
    eig = np.linalg.eigvals(numeric)
    gap = float(np.min(np.abs(eig - 1.0)))
    unique = gap > 1e-6
    if unique:
        mu_y, y = 0.0, 0.0
    else:
        # 非唯一时取零空间中的一个代表
        _, _, vt = np.linalg.svd(numeric - np.eye(2))
        mu_y, y = (float(x) for x in vt[-1])
    logger.debug("S¹ 单值矩阵特征值 %s，与 1 的距离 %.3e", eig, gap)
    return S1PeriodicFamily(mu_y, y, eig, unique)


def s1_periodicity_defect(st: OdeState, dt: float = 1e-3) -> float:
    steps = int(round(2 * np.pi / dt))
    h = 2 * np.pi / steps
    v = st.values.copy()
    for _ in range(steps):
        v = rk4_step(v, s1_rhs, h)
    return float(np.linalg.norm(v - st.values))


# ── 积分 ──

def rk4_step(y: np.ndarray, rhs: Rhs, dt: float) -> np.ndarray:
    if dt <= 0:
        raise ValueError(f"dt 必须 > 0，实际 {dt}")
    k1 = rhs(y)
    k2 = rhs(y + 0.5 * dt * k1)
    k3 = rhs(y + 0.5 * dt * k2)
    k4 = rhs(y + dt * k3)
    for k in (k1, k2, k3, k4):
        if not np.all(np.isfinite(k)):
            raise StepRejected(f"RK4 阶段导数非有限（dt={dt}）")
    return y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


@dataclass
class Trajectory:
    kind: StateKind
    times: np.ndarray
    states: np.ndarray

    def __len__(self) -> int:
        return self.times.shape[0]

    def final(self) -> OdeState:
        return OdeState(self.kind, self.states[-1])

    def to_rows(self, stride: int = 1) -> np.ndarray:
        """CSV 行：t 与状态分量，每 stride 个样本取一行（保留末行）"""
        idx = np.arange(0, len(self), stride)
        if idx[-1] != len(self) - 1:
            idx = np.append(idx, len(self) - 1)
        return np.column_stack([self.times[idx], self.states[idx]])


def integrate(state: OdeState, rhs: Rhs, dt: float, t_final: float, stride: int = 1) -> Trajectory:
    """固定步长 RK4，每 stride 步记录一次（含首末两端）"""
    if t_final <= 0 or dt <= 0 or stride < 1:
        raise ValueError(f"积分参数无效: dt={dt}, t_final={t_final}, stride={stride}")
    steps = int(round(t_final / dt))
    if abs(steps * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise ValueError(f"t_final={t_final} 不是 dt={dt} 的整数倍")
    times = [0.0]
    states = [state.values.copy()]
    y = state.values.copy()
    for n in range(1, steps + 1):
        y = rk4_step(y, rhs, dt)
        if n % stride == 0 or n == steps:
            times.append(n * dt)
            states.append(y.copy())
    logger.debug("%s 积分完成: %d 步, 记录 %d 点", state.kind.value, steps, len(times))
    return Trajectory(state.kind, np.array(times), np.array(states))


# ── 一般约化方程 ──

def general_reduced_residual(
    c: StructureConstants,
    h: HamiltonianSpec,
    p: ReducedPoint,
    div_mu: np.ndarray,
    ds_dx: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """(div μ − Σ_i ad*_{δh/δμ_i} μ^i − P⁺(δh/δs̄),  ∂_i s̄ + P(δh/δμ_i))，解上为零"""
    a = fiber_derivative(h, p)
    mom = np.asarray(div_mu, dtype=float).reshape(-1).copy()
    for i in range(p.n):
        mom -= coad(c, a[i], p.mu[i])
    if p.kind is ConfigKind.NONE:
        return mom, np.zeros((p.n, 0))
    action = action_for(p.kind)
    mom -= action.p_plus(p.s_bar, vertical_derivative(h, p))
    ds = np.zeros((p.n, p.s_bar.size)) if ds_dx is None else np.asarray(ds_dx, dtype=float).reshape(p.n, -1)
    cfg = np.stack([ds[i] + action.p(p.s_bar, a[i]) for i in range(p.n)])
    return mom, cfg


def time_derivative(states: np.ndarray, dt: float) -> np.ndarray:
    """四阶五点中心差分，返回内部点 2..m−3 的导数"""
    s = np.asarray(states, dtype=float)
    if s.shape[0] < 5:
        raise ValueError("至少需要 5 个等距样本")
    return (-s[4:] + 8 * s[3:-1] - 8 * s[1:-3] + s[:-4]) / (12.0 * dt)


def trajectory_residual(traj: Trajectory, h: HamiltonianSpec) -> tuple[float, float]:
    """沿轨道的一般约化残差最大范数：(动量方程, 平行方程)

    等距采样用五点四阶差分；步长不等时（例如末段被截短）退回按实际间距的二阶差分。
    """
    if len(traj) < 5:
        raise ValueError("至少需要 5 个样本")
    spacing = np.diff(traj.times)
    if np.allclose(spacing, spacing[0], rtol=1e-9, atol=0.0):
        deriv = time_derivative(traj.states, float(spacing[0]))
    else:
        logger.debug("轨道采样不等距 (%.3e ~ %.3e)，改用二阶差分", spacing.min(), spacing.max())
        deriv = np.gradient(traj.states, traj.times, axis=0)[2:-2]
    c = algebra_constants(traj.kind)
    worst_mom = worst_cfg = 0.0
    for k, d in enumerate(deriv, start=2):
        p = reduced_point(traj.kind, traj.states[k])
        dp = reduced_point(traj.kind, d)
        mom, cfg = general_reduced_residual(c, h, p, dp.mu[0], dp.s_bar[None, :])
        worst_mom = max(worst_mom, float(np.linalg.norm(mom)))
        worst_cfg = max(worst_cfg, float(np.linalg.norm(cfg)))
    return worst_mom, worst_cfg
