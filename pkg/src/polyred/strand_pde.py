"""对称性破缺的 SO(3)-strand：周期网格上的 1+1 维场、可重构模式下的线方法演化、约化方程残差"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from polyred.dynamics_ode import check_spd
from polyred.homogeneous import ConfigKind
from polyred.lie_core import E3, CFLError, DimensionError, StepRejected, as_vector, exp_so3, vee
from polyred.reduced_bracket import HamiltonianSpec, ReducedPoint

logger = logging.getLogger(__name__)

CFL_SAFETY = 0.5
MIN_GRID = 16


@dataclass(frozen=True)
class StrandParams:
    inertia_I: np.ndarray = field(default_factory=lambda: np.diag([1.0, 2.0, 3.0]))
    inertia_J: np.ndarray = field(default_factory=lambda: np.diag([1.0, 1.5, 2.0]))
    mg: float = 0.0
    chi: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    length: float = 2 * np.pi
    grid_n: int = 128
    dt: float | None = None  # None 时取 CFL 上限

    def __post_init__(self) -> None:
        object.__setattr__(self, "inertia_I", check_spd(self.inertia_I, "inertia_I"))
        object.__setattr__(self, "inertia_J", check_spd(self.inertia_J, "inertia_J"))
        object.__setattr__(self, "chi", as_vector(self.chi, 3, "chi"))
        if self.grid_n < MIN_GRID:
            raise ValueError(f"grid_n 至少为 {MIN_GRID}，实际 {self.grid_n}")
        if self.length <= 0:
            raise ValueError(f"length 必须 > 0，实际 {self.length}")
        if self.dt is not None and self.dt <= 0:
            raise ValueError(f"dt 必须 > 0，实际 {self.dt}")

    @property
    def ds(self) -> float:
        return self.length / self.grid_n

    @property
    def s_grid(self) -> np.ndarray:
        return np.arange(self.grid_n) * self.ds

    @cached_property
    def I_inv(self) -> np.ndarray:
        return np.linalg.inv(self.inertia_I)

    @cached_property
    def J_inv(self) -> np.ndarray:
        return np.linalg.inv(self.inertia_J)

    @cached_property
    def wave_speed(self) -> float:
        """线性化主部的最大特征速度 sqrt(max eig(𝕀⁻¹𝕁))"""
        return float(np.sqrt(np.max(np.real(np.linalg.eigvals(self.I_inv @ self.inertia_J)))))

    @property
    def dt_max(self) -> float:
        return CFL_SAFETY * self.ds / self.wave_speed

    @property
    def time_step(self) -> float:
        return self.dt if self.dt is not None else self.dt_max

    def check_cfl(self, dt: float | None = None) -> float:
        dt = self.time_step if dt is None else dt
        if dt > self.dt_max * (1 + 1e-12):
            raise CFLError(
                f"dt={dt:.3e} 超过 CFL 上限 {self.dt_max:.3e}"
                f"（Δs={self.ds:.3e}, λ_max={self.wave_speed:.3f}, 安全系数 {CFL_SAFETY}）"
            )
        return dt


@dataclass(frozen=True)
class StrandFields:
    """μ^s, μ^t, Γ，每个数组形状 (grid_n, 3)"""

    mu_s: np.ndarray
    mu_t: np.ndarray
    gamma: np.ndarray

    def __post_init__(self) -> None:
        arrays = [np.asarray(a, dtype=float) for a in (self.mu_s, self.mu_t, self.gamma)]
        shape = arrays[0].shape
        if len(shape) != 2 or shape[1] != 3 or any(a.shape != shape for a in arrays):
            raise DimensionError(f"场数组形状不一致: {[a.shape for a in arrays]}")
        for name, a in zip(("mu_s", "mu_t", "gamma"), arrays):
            object.__setattr__(self, name, a)

    @property
    def grid_n(self) -> int:
        return self.mu_s.shape[0]

    def pack(self) -> np.ndarray:
        return np.concatenate([self.mu_s.ravel(), self.mu_t.ravel(), self.gamma.ravel()])

    @classmethod
    def unpack(cls, y: np.ndarray, grid_n: int) -> StrandFields:
        parts = np.asarray(y, dtype=float).reshape(3, grid_n, 3)
        return cls(parts[0], parts[1], parts[2])

    def gamma_norm_drift(self) -> float:
        return float(np.max(np.abs(np.linalg.norm(self.gamma, axis=1) - 1.0)))

    def point(self, k: int) -> ReducedPoint:
        return ReducedPoint(np.stack([self.mu_s[k], self.mu_t[k]]), self.gamma[k], ConfigKind.SPHERE)

    def rows(self, s_grid: np.ndarray) -> np.ndarray:
        return np.column_stack([s_grid, self.mu_s, self.mu_t, self.gamma])

    COLUMNS = [
        "s", "mu_s1", "mu_s2", "mu_s3", "mu_t1", "mu_t2", "mu_t3", "gamma1", "gamma2", "gamma3",
    ]


def centered_diff(field: np.ndarray, ds: float, axis: int = 0) -> np.ndarray:
    """二阶中心差分，周期边界"""
    f = np.asarray(field, dtype=float)
    if f.shape[axis] < 3:
        raise DimensionError(f"周期差分至少需要 3 个网格点，实际 {f.shape[axis]}")
    return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2.0 * ds)


def _body_velocities(f: StrandFields, prm: StrandParams) -> tuple[np.ndarray, np.ndarray]:
    """Ω = 𝕁⁻¹μ^s, ω = 𝕀⁻¹μ^t（逐点）"""
    return f.mu_s @ prm.J_inv.T, f.mu_t @ prm.I_inv.T


def strand_rhs_reconstructible(f: StrandFields, prm: StrandParams) -> StrandFields:
    """时间导数：
    ∂_t μ^t = −∂_s μ^s + Ω×μ^s − ω×μ^t + mg Γ×χ
    ∂_t Γ   = −ω×Γ
    ∂_t μ^s = 𝕁(−∂_s ω + Ω×ω)   （零曲率闭合）
    """
    omega_s, omega_t = _body_velocities(f, prm)
    ds = prm.ds
    d_mu_t = (
        -centered_diff(f.mu_s, ds)
        + np.cross(omega_s, f.mu_s)
        - np.cross(omega_t, f.mu_t)
        + prm.mg * np.cross(f.gamma, prm.chi)
    )
    d_gamma = -np.cross(omega_t, f.gamma)
    d_mu_s = (-centered_diff(omega_t, ds) + np.cross(omega_s, omega_t)) @ prm.inertia_J.T
    return StrandFields(d_mu_s, d_mu_t, d_gamma)


@dataclass
class StrandRun:
    times: np.ndarray
    snapshots: list[StrandFields]
    dt: float

    @property
    def final(self) -> StrandFields:
        return self.snapshots[-1]


def evolve_strand(
    fields: StrandFields,
    prm: StrandParams,
    t_final: float,
    snapshot_every: int = 1,
) -> StrandRun:
    """可重构模式：线方法 + RK4；dt 违反 CFL 时拒绝"""
    if fields.grid_n != prm.grid_n:
        raise DimensionError(f"场网格 {fields.grid_n} 与参数 grid_n={prm.grid_n} 不符")
    dt = prm.check_cfl()
    steps = max(1, int(round(t_final / dt)))
    dt = t_final / steps
    n = prm.grid_n

    def rhs(y: np.ndarray) -> np.ndarray:
        return strand_rhs_reconstructible(StrandFields.unpack(y, n), prm).pack()

    y = fields.pack()
    times = [0.0]
    snaps = [fields]
    for k in range(1, steps + 1):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * dt * k1)
        k3 = rhs(y + 0.5 * dt * k2)
        k4 = rhs(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise StepRejected(f"strand 演化在第 {k} 步出现非有限值")
        if k % snapshot_every == 0 or k == steps:
            times.append(k * dt)
            snaps.append(StrandFields.unpack(y, n))
    logger.info("strand 演化: N=%d, dt=%.3e, %d 步, Γ 漂移 %.2e", n, dt, steps, snaps[-1].gamma_norm_drift())
    return StrandRun(np.array(times), snaps, dt * snapshot_every)


# ── 残差 ──

@dataclass
class StrandResiduals:
    """逐点残差范数，形状 (grid_n,)"""

    lie_poisson: np.ndarray
    parallel_s: np.ndarray
    parallel_t: np.ndarray
    curvature: np.ndarray

    def maxima(self) -> dict[str, float]:
        return {
            "lie_poisson": float(np.max(self.lie_poisson)),
            "parallel_s": float(np.max(self.parallel_s)),
            "parallel_t": float(np.max(self.parallel_t)),
            "curvature": float(np.max(self.curvature)),
        }

    def constraint_max(self) -> float:
        return max(float(np.max(a)) for a in (self.parallel_s, self.parallel_t, self.curvature))


def strand_residuals(f0: StrandFields, f1: StrandFields, prm: StrandParams, dt: float) -> StrandResiduals:
    """两个时间层上的残差：时间导数取 (f1 − f0)/dt，其余项取两层平均（二阶精度）"""
    from polyred.reconstruction import ConnectionField, curvature

    if f0.grid_n != f1.grid_n or f0.grid_n != prm.grid_n:
        raise DimensionError(f"网格不一致: {f0.grid_n}, {f1.grid_n}, grid_n={prm.grid_n}")
    ds = prm.ds

    def avg(fn: Callable[[StrandFields], np.ndarray]) -> np.ndarray:
        return 0.5 * (fn(f0) + fn(f1))

    def lp_terms(f: StrandFields) -> np.ndarray:
        om_s, om_t = _body_velocities(f, prm)
        return (
            centered_diff(f.mu_s, ds)
            - np.cross(om_s, f.mu_s)
            + np.cross(om_t, f.mu_t)
            - prm.mg * np.cross(f.gamma, prm.chi)
        )

    def par_s(f: StrandFields) -> np.ndarray:
        om_s, _ = _body_velocities(f, prm)
        return centered_diff(f.gamma, ds) - np.cross(om_s, f.gamma)

    def par_t(f: StrandFields) -> np.ndarray:
        _, om_t = _body_velocities(f, prm)
        return np.cross(om_t, f.gamma)

    lie_poisson = (f1.mu_t - f0.mu_t) / dt + avg(lp_terms)
    parallel_s = avg(par_s)
    parallel_t = (f1.gamma - f0.gamma) / dt + avg(par_t)

    # σ 的系数：沿 ds 为 −Ω，沿 dt 为 +ω；网格轴 0 为 s（周期），轴 1 为 t
    a_s = np.stack([-_body_velocities(f, prm)[0] for f in (f0, f1)], axis=1)
    a_t = np.stack([_body_velocities(f, prm)[1] for f in (f0, f1)], axis=1)
    conn = ConnectionField.from_grid(np.stack([a_s, a_t], axis=2), spacing=(ds, dt), periodic=(True, False))
    curv = curvature(conn).values.mean(axis=1)

    def norms(a: np.ndarray) -> np.ndarray:
        return np.linalg.norm(a, axis=-1)

    return StrandResiduals(norms(lie_poisson), norms(parallel_s), norms(parallel_t), norms(curv))


# ── 人造解 ──

def _skew(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m - m.T)


def manufactured_fields(
    rotation: Callable[[float, float], np.ndarray],
    prm: StrandParams,
    t: float = 0.0,
    step: float = 1e-5,
) -> StrandFields:
    """由闭式 R(s, t) 构造场：Ω = vee(R_s Rᵀ)，ω = −vee(R_t Rᵀ)，μ^s = 𝕁Ω，μ^t = 𝕀ω，Γ = R·e3"""
    r_start, r_end = rotation(0.0, t), rotation(prm.length, t)
    if np.max(np.abs(r_start - r_end)) > 1e-8:
        raise ValueError("R(s, t) 在 s 方向不是周期的")
    omega_s = np.empty((prm.grid_n, 3))
    omega_t = np.empty((prm.grid_n, 3))
    gamma = np.empty((prm.grid_n, 3))
    for k, s in enumerate(prm.s_grid):
        r = rotation(s, t)
        r_s = (rotation(s + step, t) - rotation(s - step, t)) / (2 * step)
        r_t = (rotation(s, t + step) - rotation(s, t - step)) / (2 * step)
        omega_s[k] = vee(_skew(r_s @ r.T))
        omega_t[k] = -vee(_skew(r_t @ r.T))
        gamma[k] = r[:, 2]
    return StrandFields(omega_s @ prm.inertia_J.T, omega_t @ prm.inertia_I.T, gamma)


# ── 哈密顿密度 ──

def strand_energy(prm: StrandParams) -> HamiltonianSpec:
    """h = ½ μ^t·𝕀⁻¹μ^t − ½ μ^s·𝕁⁻¹μ^s + mg Γ·χ；mu 第 0 行为 μ^s，第 1 行为 μ^t"""

    def h(p: ReducedPoint) -> float:
        mu_s, mu_t = p.mu[0], p.mu[1]
        return float(
            0.5 * mu_t @ prm.I_inv @ mu_t - 0.5 * mu_s @ prm.J_inv @ mu_s + prm.mg * p.s_bar @ prm.chi
        )

    def d_mu(p: ReducedPoint) -> np.ndarray:
        return np.stack([-prm.J_inv @ p.mu[0], prm.I_inv @ p.mu[1]])

    return HamiltonianSpec(eval=h, d_mu=d_mu, d_s=lambda p: prm.mg * prm.chi, name="strand")


def manufactured_rotation(amplitude: float = 0.1, length: float = 2 * np.pi) -> Callable[[float, float], np.ndarray]:
    """s 方向周期的非阿贝尔旋转场 R(s, t) = exp(a·(sin(ks − t), cos(ks + t/2), ½ sin(ks + t)))"""
    k = 2 * np.pi / length

    def rotation(s: float, t: float) -> np.ndarray:
        x = k * s
        return exp_so3(amplitude * np.array([np.sin(x - t), np.cos(x + 0.5 * t), 0.5 * np.sin(x + t)]))

    return rotation


def uniform_spin_rotation(rate: float = 0.1) -> Callable[[float, float], np.ndarray]:
    """与 s 无关的匀速自旋 R(s, t) = exp(rate·t·e3)；χ = e3 且 𝕀 对角时为定常解"""

    def rotation(s: float, t: float) -> np.ndarray:
        return exp_so3(rate * t * E3)

    return rotation
