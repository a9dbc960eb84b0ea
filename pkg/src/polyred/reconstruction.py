"""联络 σ 的曲率、平行移动与和乐；由约化场重构群值解，曲率或和乐非平凡时拒绝重构"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from polyred.dynamics_ode import HeavyTopParams, StateKind, Trajectory
from polyred.lie_core import (
    E3,
    DimensionError,
    NumericalError,
    StructureConstants,
    TransportError,
    check_rotation,
    exp_so3,
    r2_constants,
    so3_constants,
)
from polyred.strand_pde import StrandFields, StrandParams, centered_diff

logger = logging.getLogger(__name__)

HOLONOMY_TOL = 1e-8
MAX_STEP_NORM = 1.0


class ReconstructionRefused(NumericalError):
    """曲率/路径相关性超过阈值，拒绝重构；report 中带有障碍报告"""

    def __init__(self, message: str, report: dict):
        super().__init__(message)
        self.report = report


def _is_abelian(c: StructureConstants) -> bool:
    return not np.any(c.c)


def _is_so3(c: StructureConstants) -> bool:
    return c.dim_g == 3 and c.dim_k in (0, 1) and c.name.startswith("so3")


# ── 联络 ──

@dataclass
class ConnectionField:
    """平凡化下的联络系数 A_i(x)：闭式函数 x → (base_dim, d)，或网格数组 (*shape, base_dim, d)"""

    constants: StructureConstants
    base_dim: int
    fn: Callable[[np.ndarray], np.ndarray] | None = None
    grid: np.ndarray | None = None
    spacing: tuple[float, ...] = ()
    periodic: tuple[bool, ...] = ()
    period: float | None = None  # 闭式联络的周期底空间（如 S¹）

    def __post_init__(self) -> None:
        if (self.fn is None) == (self.grid is None):
            raise ValueError("ConnectionField 需要且只需要 fn 与 grid 之一")
        if self.grid is not None:
            g = np.asarray(self.grid, dtype=float)
            if g.ndim != self.base_dim + 2 or g.shape[-2] != self.base_dim:
                raise DimensionError(f"网格联络形状 {g.shape} 与 base_dim={self.base_dim} 不符")
            if g.shape[-1] != self.constants.dim_g:
                raise DimensionError(f"联络取值维度 {g.shape[-1]} ≠ dim 𝔤 = {self.constants.dim_g}")
            if not np.all(np.isfinite(g)):
                raise ValueError("联络含非有限值")
            self.grid = g
            if len(self.spacing) != self.base_dim:
                raise DimensionError(f"spacing 需要 {self.base_dim} 个分量")
            if not self.periodic:
                self.periodic = (False,) * self.base_dim

    @classmethod
    def from_grid(
        cls,
        values: np.ndarray,
        spacing: Sequence[float],
        periodic: Sequence[bool] | None = None,
        constants: StructureConstants | None = None,
    ) -> ConnectionField:
        values = np.asarray(values, dtype=float)
        base_dim = values.shape[-2]
        return cls(
            constants=constants or so3_constants(),
            base_dim=base_dim,
            grid=values,
            spacing=tuple(float(h) for h in spacing),
            periodic=tuple(periodic) if periodic is not None else (False,) * base_dim,
        )

    @classmethod
    def closed_form(
        cls,
        fn: Callable[[np.ndarray], np.ndarray],
        base_dim: int,
        constants: StructureConstants | None = None,
        period: float | None = None,
    ) -> ConnectionField:
        return cls(constants=constants or so3_constants(), base_dim=base_dim, fn=fn, period=period)

    @property
    def is_grid(self) -> bool:
        return self.grid is not None

    def at(self, x) -> np.ndarray:
        if self.fn is None:
            raise ValueError("网格联络请按网格下标访问")
        out = np.asarray(self.fn(np.atleast_1d(np.asarray(x, dtype=float))), dtype=float)
        out = out.reshape(self.base_dim, self.constants.dim_g)
        if not np.all(np.isfinite(out)):
            raise ValueError(f"联络在 x={x} 处取非有限值")
        return out

    def sample(self, axes: Sequence[np.ndarray], periodic: Sequence[bool] | None = None) -> ConnectionField:
        """闭式联络在等距网格上采样"""
        if len(axes) != self.base_dim:
            raise DimensionError(f"需要 {self.base_dim} 个坐标轴")
        mesh = np.meshgrid(*axes, indexing="ij")
        shape = mesh[0].shape
        values = np.empty(shape + (self.base_dim, self.constants.dim_g))
        for idx in np.ndindex(shape):
            values[idx] = self.at([m[idx] for m in mesh])
        spacing = [float(a[1] - a[0]) for a in axes]
        return ConnectionField.from_grid(values, spacing, periodic, self.constants)


# ── 曲率 ──

@dataclass
class CurvatureResult:
    values: np.ndarray
    trivially_flat: bool = False

    @property
    def max_norm(self) -> float:
        if self.values.size == 0:
            return 0.0
        return float(np.max(np.linalg.norm(self.values, axis=-1)))


def _axis_diff(values: np.ndarray, h: float, axis: int, periodic: bool) -> np.ndarray:
    if periodic:
        return centered_diff(values, h, axis=axis)
    return np.gradient(values, h, axis=axis, edge_order=2 if values.shape[axis] >= 3 else 1)


def curvature(conn: ConnectionField) -> CurvatureResult:
    """F = ∂_0 A_1 − ∂_1 A_0 + [A_0, A_1]（方向 0 = s，方向 1 = t）"""
    d = conn.constants.dim_g
    if conn.base_dim == 1:
        shape = conn.grid.shape[:-2] if conn.is_grid else (1,)
        return CurvatureResult(np.zeros(shape + (d,)), trivially_flat=True)
    if conn.base_dim != 2:
        raise DimensionError(f"只支持二维底空间，实际 {conn.base_dim}")
    if not conn.is_grid:
        raise ValueError("闭式联络请先用 sample() 采样到网格")
    a0 = conn.grid[..., 0, :]
    a1 = conn.grid[..., 1, :]
    (h0, h1), (p0, p1) = conn.spacing, conn.periodic
    f = (
        _axis_diff(a1, h0, 0, p0)
        - _axis_diff(a0, h1, 1, p1)
        + np.einsum("ijk,...j,...k->...i", conn.constants.c, a0, a1)
    )
    return CurvatureResult(f)


# ── 平行移动 ──

def _magnus_so3(b0: np.ndarray, bm: np.ndarray, b1: np.ndarray) -> np.ndarray:
    """ġ = −hat(B) g 在单个线段上的四阶 Magnus 步，Simpson 节点"""
    return exp_so3(-(b0 + 4.0 * bm + b1) / 6.0 + np.cross(b1, b0) / 12.0)


def _check_step(b: np.ndarray) -> None:
    worst = float(np.max(np.linalg.norm(b, axis=-1)))
    if worst > MAX_STEP_NORM:
        raise TransportError(f"平行移动步过大: ‖A‖Δ = {worst:.3f} > {MAX_STEP_NORM}")


def interpolate_midpoints(values: np.ndarray, periodic: bool = False) -> np.ndarray:
    """等距样本 a_0..a_K → 半点 a_{k+1/2}（四点三次插值，边界单侧）"""
    a = np.asarray(values, dtype=float)
    k = a.shape[0] - 1
    if periodic:
        return (-np.roll(a, 1, axis=0) + 9 * a + 9 * np.roll(a, -1, axis=0) - np.roll(a, -2, axis=0))[:k] / 16.0
    if k < 3:
        return 0.5 * (a[:-1] + a[1:])
    mid = np.empty((k,) + a.shape[1:])
    mid[1:k - 1] = (-a[:k - 2] + 9 * a[1:k - 1] + 9 * a[2:k] - a[3:k + 1]) / 16.0
    mid[0] = (5 * a[0] + 15 * a[1] - 5 * a[2] + a[3]) / 16.0
    mid[k - 1] = (a[k - 3] - 5 * a[k - 2] + 15 * a[k - 1] + 5 * a[k]) / 16.0
    return mid


def transport_segments(
    start: np.ndarray,
    b0: np.ndarray,
    bm: np.ndarray,
    b1: np.ndarray,
    constants: StructureConstants,
) -> np.ndarray:
    """逐段移动；b0/bm/b1 为各段起点、半点、终点处已乘步长的线形式，形状 (K, d)
    返回 K+1 个节点上的群元（阿贝尔情形为 ℝ^d 向量）
    """
    b0, bm, b1 = (np.asarray(b, dtype=float) for b in (b0, bm, b1))
    if not b0.shape == bm.shape == b1.shape:
        raise DimensionError(f"线形式形状不一致: {b0.shape}, {bm.shape}, {b1.shape}")
    for b in (b0, bm, b1):
        _check_step(b)
    if _is_abelian(constants):
        x0 = np.asarray(start, dtype=float).reshape(-1)
        incr = -(b0 + 4.0 * bm + b1) / 6.0
        return np.vstack([x0, x0 + np.cumsum(incr, axis=0)])
    if not _is_so3(constants):
        raise ValueError(f"{constants.name}: 只支持 so(3) 与阿贝尔联络的平行移动")
    out = np.empty((b0.shape[0] + 1, 3, 3))
    out[0] = check_rotation(start)
    for k in range(b0.shape[0]):
        out[k + 1] = _magnus_so3(b0[k], bm[k], b1[k]) @ out[k]
    return out


def transport_line(
    start: np.ndarray,
    values: np.ndarray,
    delta: float,
    constants: StructureConstants | None = None,
    mid_values: np.ndarray | None = None,
    periodic: bool = False,
) -> np.ndarray:
    """沿等距样本 A_dir(x_k) 的直线移动；没有半点样本时用三次插值"""
    values = np.asarray(values, dtype=float)
    mids = interpolate_midpoints(values, periodic) if mid_values is None else np.asarray(mid_values, dtype=float)
    return transport_segments(
        start, values[:-1] * delta, mids * delta, values[1:] * delta, constants or so3_constants()
    )


def _grid_step(a: np.ndarray, b: np.ndarray, shape: tuple[int, ...], periodic: tuple[bool, ...]) -> tuple[int, int]:
    diff = np.asarray(b) - np.asarray(a)
    for axis, n in enumerate(shape):
        if periodic[axis] and abs(diff[axis]) == n - 1:
            diff[axis] = -int(np.sign(diff[axis]))
    moved = np.nonzero(diff)[0]
    if moved.size != 1 or abs(diff[moved[0]]) != 1:
        raise DimensionError(f"网格路径必须逐格沿坐标轴移动: {tuple(a)} → {tuple(b)}")
    return int(moved[0]), int(diff[moved[0]])


_CUBIC = np.array([-1.0, 9.0, 9.0, -1.0]) / 16.0
_CUBIC_LEFT = np.array([5.0, 15.0, -5.0, 1.0]) / 16.0
_CUBIC_RIGHT = np.array([1.0, -5.0, 15.0, 5.0]) / 16.0


def _grid_midpoint(conn: ConnectionField, idx: np.ndarray, axis: int, lo: int) -> np.ndarray:
    """网格线上 lo 与 lo+1 之间半点处的 A_axis"""
    n = conn.grid.shape[axis]
    if conn.periodic[axis]:
        pts, w = [(lo + o) % n for o in (-1, 0, 1, 2)], _CUBIC
    elif n < 4:
        pts, w = [lo, lo + 1], np.array([0.5, 0.5])
    elif lo == 0:
        pts, w = [0, 1, 2, 3], _CUBIC_LEFT
    elif lo + 2 >= n:
        pts, w = [n - 4, n - 3, n - 2, n - 1], _CUBIC_RIGHT
    else:
        pts, w = [lo - 1, lo, lo + 1, lo + 2], _CUBIC
    line = list(idx)
    samples = []
    for p in pts:
        line[axis] = p
        samples.append(conn.grid[tuple(line)][axis])
    return np.tensordot(w, np.stack(samples), axes=1)


def _path_segments(conn: ConnectionField, path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """路径 → 各段 (起点, 半点, 终点) 的线形式；闭式联络取实际坐标，网格联络取下标"""
    path = np.asarray(path)
    if path.ndim == 1:
        path = path[:, None]
    if path.shape[0] < 2 or path.shape[1] != conn.base_dim:
        raise DimensionError(f"路径形状 {path.shape} 无效（base_dim={conn.base_dim}）")
    k = path.shape[0] - 1
    d = conn.constants.dim_g
    b0, bm, b1 = np.empty((k, d)), np.empty((k, d)), np.empty((k, d))
    if not conn.is_grid:
        x = path.astype(float)
        for j in range(k):
            dx = x[j + 1] - x[j]
            b0[j] = dx @ conn.at(x[j])
            bm[j] = dx @ conn.at(0.5 * (x[j] + x[j + 1]))
            b1[j] = dx @ conn.at(x[j + 1])
        return b0, bm, b1
    shape = conn.grid.shape[:-2]
    idx = path.astype(int) % np.array(shape)
    for j in range(k):
        axis, sign = _grid_step(idx[j], idx[j + 1], shape, conn.periodic)
        delta = sign * conn.spacing[axis]
        lo = idx[j][axis] if sign > 0 else idx[j + 1][axis]
        b0[j] = delta * conn.grid[tuple(idx[j])][axis]
        bm[j] = delta * _grid_midpoint(conn, idx[j], axis, lo)
        b1[j] = delta * conn.grid[tuple(idx[j + 1])][axis]
    return b0, bm, b1


def transport_path(start: np.ndarray, conn: ConnectionField, path) -> np.ndarray:
    b0, bm, b1 = _path_segments(conn, path)
    return transport_segments(start, b0, bm, b1, conn.constants)


def parallel_transport(start: np.ndarray, conn: ConnectionField, path) -> np.ndarray:
    """R(x+Δ) = exp(−A_dir(x)Δ)·R(x) 逐段复合（四阶），返回终点群元"""
    return transport_path(start, conn, path)[-1]


# ── 和乐 ──

@dataclass
class HolonomyResult:
    element: np.ndarray
    value: float
    distance: float
    is_trivial: bool
    loop: str
    tolerance: float = HOLONOMY_TOL

    @property
    def verdict(self) -> str:
        state = "reconstructible" if self.is_trivial else "obstructed"
        return f"{state}: holonomy {self.value:.4f}"

    def to_dict(self) -> dict:
        return {
            "element": np.asarray(self.element).tolist(),
            "value": self.value,
            "distance_to_identity": self.distance,
            "is_trivial": self.is_trivial,
            "loop": self.loop,
            "tolerance": self.tolerance,
            "verdict": self.verdict,
        }


def _is_closed(conn: ConnectionField, path: np.ndarray) -> bool:
    path = np.asarray(path)
    if path.ndim == 1:
        path = path[:, None]
    if conn.is_grid:
        shape = np.array(conn.grid.shape[:-2])
        return bool(np.all(path[0] % shape == path[-1] % shape))
    diff = path[-1].astype(float) - path[0].astype(float)
    if np.all(np.abs(diff) <= 1e-12):
        return True
    if conn.period is None:
        return False
    turns = diff / conn.period
    return bool(np.all(np.abs(turns - np.round(turns)) <= 1e-12))


def holonomy_loop(conn: ConnectionField, loop, tol: float = HOLONOMY_TOL, label: str = "") -> HolonomyResult:
    """沿闭路径的有序移动乘积；阿贝尔群直接给出线积分 ∮A"""
    if not _is_closed(conn, loop):
        raise ValueError("holonomy_loop 需要闭路径（首尾重合或相差整数个周期）")
    d = conn.constants.dim_g
    abelian = _is_abelian(conn.constants)
    start = np.zeros(d) if abelian else np.eye(3)
    element = transport_path(start, conn, loop)[-1]
    desc = label or f"{len(np.asarray(loop)) - 1} 段闭路径"
    if abelian:
        integral = -element
        distance = float(np.linalg.norm(integral))
        value = float(integral[int(np.argmax(np.abs(integral)))]) + 0.0  # 去掉 -0.0
    else:
        distance = float(np.linalg.norm(element - np.eye(3)))
        value = float(np.arccos(np.clip((np.trace(element) - 1.0) / 2.0, -1.0, 1.0)))
    result = HolonomyResult(element, value, distance, distance <= tol, desc, tol)
    logger.debug("和乐 %s: %s (距单位元 %.3e)", desc, result.verdict, distance)
    return result


def k_translate(rotations: np.ndarray, angle: float) -> np.ndarray:
    """右乘 K = SO(2)_{e3} 中的元素"""
    return np.asarray(rotations, dtype=float) @ exp_so3(angle * E3)


# ── 重构 ──

@dataclass
class Reconstruction:
    rotations: np.ndarray
    report: dict = field(default_factory=dict)


def _vee_stack(m: np.ndarray) -> np.ndarray:
    skew = 0.5 * (m - np.swapaxes(m, -1, -2))
    return np.stack([skew[..., 2, 1], skew[..., 0, 2], skew[..., 1, 0]], axis=-1)


def reconstruct_strand(
    snapshots: Sequence[StrandFields],
    prm: StrandParams,
    dt: float,
    r_corner: np.ndarray | None = None,
    tolerance: float = 1e-4,
) -> Reconstruction:
    """先沿 s（t = 0）再逐列沿 t 积分 σ；与“先 t 后 s”比较，路径相关性超过阈值时拒绝

    rotations 形状 (grid_n, len(snapshots), 3, 3)，轴 0 为 s，轴 1 为 t。
    """
    if len(snapshots) < 2:
        raise ValueError("重构至少需要两个时间层")
    ns, nt, ds = prm.grid_n, len(snapshots), prm.ds
    r_corner = np.eye(3) if r_corner is None else check_rotation(r_corner)
    a_s = np.stack([-(f.mu_s @ prm.J_inv.T) for f in snapshots], axis=1)
    a_t = np.stack([f.mu_t @ prm.I_inv.T for f in snapshots], axis=1)
    gamma = np.stack([f.gamma for f in snapshots], axis=1)
    mu_s = np.stack([f.mu_s for f in snapshots], axis=1)

    # 顺序一：t = 0 行沿 s，再逐列沿 t（各列彼此独立）
    r_first = np.empty((ns, nt, 3, 3))
    row = transport_line(r_corner, a_s[:, 0], ds, periodic=True)
    for i in range(ns):
        r_first[i] = transport_line(row[i], a_t[i], dt)

    # 顺序二：s = 0 列沿 t，再逐行沿 s
    r_second = np.empty_like(r_first)
    col = transport_line(r_corner, a_t[0], dt)
    for j in range(nt):
        r_second[:, j] = transport_line(col[j], a_s[:, j], ds, periodic=True)

    discrepancy = float(np.max(np.linalg.norm(r_first - r_second, axis=(-2, -1))))
    conn = ConnectionField.from_grid(np.stack([a_s, a_t], axis=2), (ds, dt), (True, False))
    curv = curvature(conn).max_norm
    s_loop = holonomy_loop(
        conn, [(i, 0) for i in range(ns)] + [(0, 0)], tol=max(tolerance, HOLONOMY_TOL), label="s 方向生成元 (t = 0)"
    )

    gamma_error = float(np.max(np.linalg.norm(r_first[..., :, 2] - gamma, axis=-1)))
    d_r = (r_first[2:] - r_first[:-2]) / (2.0 * ds)
    omega_rec = _vee_stack(d_r @ np.swapaxes(r_first[1:-1], -1, -2))
    mu_s_error = float(np.max(np.linalg.norm(omega_rec @ prm.inertia_J.T - mu_s[1:-1], axis=-1)))

    report = {
        "curvature_max": curv,
        "path_discrepancy": discrepancy,
        "gamma_error": gamma_error,
        "mu_s_error": mu_s_error,
        "s_loop_holonomy": s_loop.distance,
        "tolerance": tolerance,
        "loops_tested": [
            f"矩形 [0, s_i]×[0, t_j] 的边界，全部 {ns}×{nt} 个网格点（两种积分顺序之差）",
            s_loop.loop,
        ],
    }
    if discrepancy > tolerance:
        report["verdict"] = "refused"
        logger.warning("strand 重构被拒绝: 路径相关性 %.3e > %.1e, 曲率 %.3e", discrepancy, tolerance, curv)
        raise ReconstructionRefused(
            f"联络非平坦：两种积分顺序相差 {discrepancy:.3e} > {tolerance:.1e}（max‖F‖ = {curv:.3e}）",
            report,
        )
    if not s_loop.is_trivial:
        report["verdict"] = "obstructed"
        logger.warning("strand 重构被拒绝: s 方向和乐 %.3e > %.1e", s_loop.distance, s_loop.tolerance)
        raise ReconstructionRefused(f"s 方向生成元和乐非平凡: {s_loop.verdict}", report)
    report["verdict"] = "reconstructed"
    logger.info("strand 重构完成: 路径相关性 %.3e, Γ 误差 %.3e", discrepancy, gamma_error)
    return Reconstruction(r_first, report)


def reconstruct_heavy_top(traj: Trajectory, prm: HeavyTopParams, r0: np.ndarray | None = None) -> Reconstruction:
    """dim M = 1：沿 σ = 𝕀⁻¹μ(t) dt 移动；偶数样本为节点、奇数样本为半点"""
    if traj.kind is not StateKind.HEAVY_TOP:
        raise ValueError(f"需要重陀螺轨道，实际 {traj.kind.value}")
    m = len(traj) if len(traj) % 2 == 1 else len(traj) - 1
    if m < 3:
        raise ValueError("轨道样本过少")
    steps = np.diff(traj.times[:m])
    if np.max(np.abs(steps - steps[0])) > 1e-9 * max(1.0, abs(steps[0])):
        raise ValueError("重构需要等距时间样本（stride = 1 的轨道）")
    h = 2.0 * float(steps[0])
    a = traj.states[:m, :3] @ prm.inertia_inv.T
    nodes = a[0::2]
    rotations = transport_segments(
        np.eye(3) if r0 is None else r0, nodes[:-1] * h, a[1::2] * h, nodes[1:] * h, so3_constants()
    )
    gamma = traj.states[:m:2, 3:6]
    gamma_error = float(np.max(np.linalg.norm(rotations[:, :, 2] - gamma, axis=-1)))
    report = {
        "gamma_error": gamma_error,
        "curvature": "trivially flat (dim M = 1)",
        "times": [float(traj.times[0]), float(traj.times[m - 1])],
        "verdict": "reconstructed",
    }
    logger.info("重陀螺重构: ‖R·e3 − Γ‖ ≤ %.3e", gamma_error)
    return Reconstruction(rotations, report)


def s1_reconstruction_gate(mu0: float, tol: float = HOLONOMY_TOL, segments: int = 64) -> dict:
    """S¹ 例子：σ 的 x 分量为 μ0 dθ，和乐 2πμ0 非零即无周期的群值解；tol 作用于 |μ0|"""
    conn = ConnectionField.closed_form(
        lambda theta: np.array([[mu0, 0.0]]), base_dim=1, constants=r2_constants(), period=2 * np.pi
    )
    segments = max(segments, int(np.ceil(4 * np.pi * abs(mu0))))
    result = holonomy_loop(
        conn, np.linspace(0.0, 2 * np.pi, segments + 1), tol=2 * np.pi * tol, label="θ ∈ [0, 2π] 生成元"
    )
    if not result.is_trivial:
        logger.warning("S¹ 重构被拒绝: %s", result.verdict)
    return {
        "mu0": float(mu0),
        "holonomy": result.value,
        "trivial": result.is_trivial,
        "verdict": result.verdict,
        "loop": result.loop,
        "tolerance": tol,
    }
