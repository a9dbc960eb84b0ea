"""约化协变括号：泛函导数、Lie–Poisson 项与 E 项、结构常数局部形式、投影 Ψ 与括号等价性检验"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.linalg import expm

from polyred.homogeneous import ConfigKind, action_for
from polyred.lie_core import (
    AffineElement,
    DimensionError,
    EvaluationError,
    GroupElementError,
    MatrixAlgebra,
    StructureConstants,
    affine_algebra,
    bracket,
    check_rotation,
    r2_algebra,
    so3_algebra,
)

logger = logging.getLogger(__name__)

# 约化括号 = lp_bracket + E_SIGN · e_bracket；lp_bracket 自身带负号
LP_SIGN = -1
E_SIGN = -1


def bracket_signs() -> dict[str, int]:
    """写入诊断报告的符号约定"""
    return {"lie_poisson": LP_SIGN, "e": E_SIGN}


# ── 数据类型 ──

@dataclass(frozen=True)
class ReducedPoint:
    """(μ, s̄)：mu 形状 (n, d)，每个底流形方向一行"""

    mu: np.ndarray
    s_bar: np.ndarray = field(default_factory=lambda: np.zeros(0))
    kind: ConfigKind = ConfigKind.NONE

    def __post_init__(self) -> None:
        mu = np.atleast_2d(np.asarray(self.mu, dtype=float))
        if mu.ndim != 2 or not np.all(np.isfinite(mu)):
            raise DimensionError(f"mu 应为有限的 (n, d) 数组，实际形状 {mu.shape}")
        kind = ConfigKind(self.kind)
        s = np.asarray(self.s_bar, dtype=float).reshape(-1)
        if kind is not ConfigKind.NONE:
            action = action_for(kind)
            s = action.validate(s)
            if mu.shape[1] != action.algebra_dim:
                raise DimensionError(
                    f"{kind.value} 构型需要 {action.algebra_dim} 维动量，实际 {mu.shape[1]}"
                )
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "s_bar", s)
        object.__setattr__(self, "kind", kind)

    @property
    def n(self) -> int:
        return self.mu.shape[0]

    @property
    def dim(self) -> int:
        return self.mu.shape[1]

    def with_mu(self, mu) -> ReducedPoint:
        return replace(self, mu=np.asarray(mu, dtype=float).reshape(self.mu.shape))

    def with_s_bar(self, s_bar) -> ReducedPoint:
        return replace(self, s_bar=np.asarray(s_bar, dtype=float))


@dataclass
class HamiltonianSpec:
    """约化哈密顿密度 h(μ, s̄)，解析导数可选，缺省时用中心差分"""

    eval: Callable[[ReducedPoint], float]
    d_mu: Callable[[ReducedPoint], np.ndarray] | None = None
    d_s: Callable[[ReducedPoint], np.ndarray] | None = None
    fd_step: float = 1e-5
    name: str = ""

    def __call__(self, p: ReducedPoint) -> float:
        value = float(self.eval(p))
        if not np.isfinite(value):
            raise EvaluationError(f"哈密顿量 {self.name or '?'} 在 {p.mu.tolist()} 处非有限")
        return value

    def self_test(self, p: ReducedPoint) -> float:
        """解析导数与差分导数的最大相对偏差；无解析导数时为 0"""
        worst = 0.0
        if self.d_mu is not None:
            an = np.asarray(self.d_mu(p), dtype=float).reshape(p.mu.shape)
            fd = _fd_gradient(lambda m: self(p.with_mu(m)), p.mu.reshape(-1), self.fd_step)
            worst = max(worst, _rel_err(an.reshape(-1), fd))
        if self.d_s is not None and p.kind is not ConfigKind.NONE:
            action = action_for(p.kind)
            an = action.tangent_project(p.s_bar, self.d_s(p))
            fd = action.tangent_project(
                p.s_bar, _fd_gradient(lambda s: self(p.with_s_bar(s)), p.s_bar, self.fd_step)
            )
            worst = max(worst, _rel_err(an, fd))
        return worst


@dataclass(frozen=True)
class LinearForm:
    """f^i = ⟨μ^i, ξ⟩，方向 omega_dir 上再加 ω(s̄)"""

    xi: np.ndarray
    omega_fn: Callable[[np.ndarray], float] | None = None
    omega_dir: int = 0

    def __post_init__(self) -> None:
        xi = np.asarray(self.xi, dtype=float).reshape(-1)
        if not np.all(np.isfinite(xi)):
            raise DimensionError("xi 含非有限值")
        object.__setattr__(self, "xi", xi)

    def value(self, p: ReducedPoint) -> np.ndarray:
        out = p.mu @ self.xi
        if self.omega_fn is not None:
            out[self.omega_dir] += float(self.omega_fn(p.s_bar))
        return out


@dataclass(frozen=True)
class UnreducedPoint:
    """群元（矩阵表示）与左平凡化动量 π^i，每个底流形方向一行"""

    group: np.ndarray
    pi: np.ndarray
    kind: ConfigKind = ConfigKind.SPHERE

    def __post_init__(self) -> None:
        kind = ConfigKind(self.kind)
        g = np.asarray(self.group, dtype=float)
        if kind is ConfigKind.SPHERE:
            check_rotation(g)
        elif kind is ConfigKind.AFFINE:
            AffineElement.from_matrix(g)
        elif kind is ConfigKind.LINE:
            if g.shape != (3, 3) or np.max(np.abs(g[:, :2] - np.eye(3)[:, :2])) > 1e-12:
                raise GroupElementError("ℝ² 平移的矩阵表示应为 [[I, v], [0, 1]]")
        object.__setattr__(self, "group", g)
        object.__setattr__(self, "pi", np.atleast_2d(np.asarray(self.pi, dtype=float)))
        object.__setattr__(self, "kind", kind)


def default_algebra(kind: ConfigKind | str) -> MatrixAlgebra:
    kind = ConfigKind(kind)
    if kind is ConfigKind.SPHERE:
        return so3_algebra()
    if kind is ConfigKind.AFFINE:
        return affine_algebra()
    if kind is ConfigKind.LINE:
        return r2_algebra()
    raise DimensionError(f"构型类型 {kind.value} 没有默认矩阵代数")


# ── 差分工具 ──

def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


def _fd_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, step: float) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    grad = np.empty_like(x)
    for k in range(x.size):
        h = step * max(1.0, abs(x[k]))
        xp = x.copy()
        xm = x.copy()
        xp[k] += h
        xm[k] -= h
        fp, fm = fn(xp), fn(xm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise EvaluationError(f"差分点上函数值非有限（分量 {k}）")
        grad[k] = (fp - fm) / (2 * h)
    return grad


# ── 泛函导数 ──

def fiber_derivative(h: HamiltonianSpec, p: ReducedPoint) -> np.ndarray:
    """δh/δμ，形状 (n, d)"""
    if h.d_mu is not None:
        return np.asarray(h.d_mu(p), dtype=float).reshape(p.mu.shape)
    grad = _fd_gradient(lambda m: h(p.with_mu(m)), p.mu.reshape(-1), h.fd_step)
    return grad.reshape(p.mu.shape)


def vertical_derivative(h: HamiltonianSpec, p: ReducedPoint) -> np.ndarray:
    """δh/δs̄；球面上取环境梯度的切向投影"""
    if p.kind is ConfigKind.NONE:
        return np.zeros(0)
    action = action_for(p.kind)
    if h.d_s is not None:
        grad = np.asarray(h.d_s(p), dtype=float)
    else:
        grad = _fd_gradient(lambda s: h(p.with_s_bar(s)), p.s_bar, h.fd_step)
    return action.tangent_project(p.s_bar, grad)


def _omega_gradient(f: LinearForm, p: ReducedPoint, step: float) -> np.ndarray:
    action = action_for(p.kind)
    grad = _fd_gradient(lambda s: float(f.omega_fn(s)), p.s_bar, step)
    return action.tangent_project(p.s_bar, grad)


# ── 约化括号 ──

def lp_bracket(c: StructureConstants, f: LinearForm, h: HamiltonianSpec, p: ReducedPoint) -> np.ndarray:
    """逐方向 −⟨μ^i, [ξ, δh/δμ_i]⟩"""
    if f.xi.size != c.dim_g or p.dim != c.dim_g:
        raise DimensionError(f"ξ/μ 维度与代数 {c.name} (dim {c.dim_g}) 不符")
    a = fiber_derivative(h, p)
    return np.array([LP_SIGN * float(p.mu[i] @ bracket(c, f.xi, a[i])) for i in range(p.n)])


def e_bracket(f: LinearForm, h: HamiltonianSpec, p: ReducedPoint) -> np.ndarray:
    """⟨δω/δs̄, P(δh/δμ)⟩ − ⟨δh/δs̄, P(ξ)⟩，记在 omega_dir 方向"""
    out = np.zeros(p.n)
    if p.kind is ConfigKind.NONE:
        return out
    action = action_for(p.kind)
    value = -float(vertical_derivative(h, p) @ action.p(p.s_bar, f.xi))
    if f.omega_fn is not None:
        a = fiber_derivative(h, p)
        d_omega = _omega_gradient(f, p, h.fd_step)
        value += float(d_omega @ action.p(p.s_bar, a[f.omega_dir]))
    out[f.omega_dir] = value
    return out


def reduced_bracket(c: StructureConstants, f: LinearForm, h: HamiltonianSpec, p: ReducedPoint) -> float:
    """{f, h} 对底流形方向求和后的标量"""
    return float(np.sum(lp_bracket(c, f, h, p)) + E_SIGN * np.sum(e_bracket(f, h, p)))


def local_bracket_sc(
    algebra: MatrixAlgebra,
    f: LinearForm,
    h: HamiltonianSpec,
    p: ReducedPoint,
    perm: np.ndarray | None = None,
    step: float = 1e-5,
) -> float:
    """在以 s̄ 为中心的平凡化坐标卡 (y^A, μ^i_α, μ^i_A) 中逐项计算结构常数展开

    perm 把调用方的分量顺序映到 algebra 的基顺序（如 so(3) 分裂基 (e3, e1, e2)）。
    """
    action = action_for(p.kind)
    d = algebra.dim
    if p.dim != d:
        raise DimensionError(f"动量维度 {p.dim} 与代数维度 {d} 不符")
    perm = np.arange(d) if perm is None else np.asarray(perm)
    c = algebra.constants.c
    dk = algebra.dim_k
    kk, mm = slice(0, dk), slice(dk, d)

    # 旋转标架：𝔨 成为 s̄ 的迷向子代数，结构常数不变
    g_c = action.frame(p.s_bar)
    ad = algebra.adjoint_matrix(g_c)
    ad_inv = np.linalg.inv(ad)
    m = p.mu[:, perm] @ ad
    da = fiber_derivative(h, p)[:, perm] @ ad_inv.T
    x = ad_inv @ f.xi[perm]

    def chart(y: np.ndarray) -> np.ndarray:
        full = np.zeros(d)
        full[mm] = y
        return action.act(g_c @ algebra.exp(full), action.origin)

    y0 = np.zeros(d - dk)
    dh_dy = _fd_gradient(lambda y: h(p.with_s_bar(chart(y))), y0, step)

    total = 0.0
    for i in range(p.n):
        mi, ai = m[i], da[i]
        total += np.einsum("gba,g,b,a->", c[kk, kk, mm], mi[kk], x[kk], ai[mm])
        total += np.einsum("CbA,C,b,A->", c[mm, kk, mm], mi[mm], x[kk], ai[mm])
        total += np.einsum("gBA,g,B,A->", c[kk, mm, mm], mi[kk], x[mm], ai[mm])
        total += np.einsum("CBA,C,B,A->", c[mm, mm, mm], mi[mm], x[mm], ai[mm])
        total += np.einsum("gba,g,b,a->", c[kk, kk, kk], mi[kk], x[kk], ai[kk])
        total += np.einsum("gBa,g,B,a->", c[kk, mm, kk], mi[kk], x[mm], ai[kk])
        total += np.einsum("CBa,C,B,a->", c[mm, mm, kk], mi[mm], x[mm], ai[kk])
    if f.omega_fn is not None:
        d_omega = _fd_gradient(lambda y: float(f.omega_fn(chart(y))), y0, step)
        total += float(d_omega @ da[f.omega_dir, mm])
    # ξ 只计一次
    total -= float(x[mm] @ dh_dy)
    return float(LP_SIGN * total)


# ── 投影 Ψ ──

def psi_project(u: UnreducedPoint, algebra: MatrixAlgebra | None = None) -> ReducedPoint:
    """μ^i = Ad*_{g⁻¹} π^i（SO(3) 上 μ = R·π），s̄ 由群元读出（Γ = R·e3 等）"""
    algebra = algebra or default_algebra(u.kind)
    action = action_for(u.kind)
    mu = u.pi @ algebra.adjoint_matrix(np.linalg.inv(u.group))
    return ReducedPoint(mu, action.from_group(u.group), u.kind)


def right_translate(u: UnreducedPoint, k: np.ndarray, algebra: MatrixAlgebra | None = None) -> UnreducedPoint:
    """右乘 k ∈ K：(g, π) ↦ (g·k, Ad*_k π)"""
    algebra = algebra or default_algebra(u.kind)
    return UnreducedPoint(u.group @ k, u.pi @ algebra.adjoint_matrix(k), u.kind)


# ── 括号等价性检验 ──

@dataclass
class EquivalenceReport:
    max_rel_error: float
    samples: int
    skipped: int
    signs: dict[str, int] = field(default_factory=bracket_signs)
    errors: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "max_rel_error": self.max_rel_error,
            "samples": self.samples,
            "skipped": self.skipped,
            "signs": dict(self.signs),
        }


class _Chart:
    """以 g_c 为中心的指数坐标卡 g(y) = g_c·exp(−Y)，坐标动量 p 与 π = Z(y)^{−T} p"""

    def __init__(self, algebra: MatrixAlgebra, kind: ConfigKind, g_c: np.ndarray) -> None:
        self.algebra = algebra
        self.kind = kind
        self.action = action_for(kind)
        self.g_c = g_c
        self.ad_center = algebra.adjoint_matrix(np.linalg.inv(g_c))

    def point(self, y: np.ndarray, p_mom: np.ndarray) -> ReducedPoint:
        if not np.any(y):
            return ReducedPoint(p_mom @ self.ad_center, self.action.from_group(self.g_c), self.kind)
        g = self.g_c @ expm(-self.algebra.expand(y))
        z = self.algebra.right_jacobian(y)
        pi = np.linalg.solve(z.T, p_mom.T).T
        mu = pi @ self.algebra.adjoint_matrix(np.linalg.inv(g))
        return ReducedPoint(mu, self.action.from_group(g), self.kind)

    def momenta_for(self, mu: np.ndarray) -> np.ndarray:
        return mu @ np.linalg.inv(self.ad_center)


def unreduced_bracket(
    chart: _Chart,
    f: LinearForm,
    h: HamiltonianSpec,
    p_mom: np.ndarray,
    step: float,
) -> float:
    """{F, H} = Σ_i ∂F^i/∂y·∂H/∂p^i − ∂F^0/∂p^0·∂H/∂y，在 y = 0 处中心差分"""
    d = chart.algebra.dim
    n = p_mom.shape[0]
    y0 = np.zeros(d)

    def big_f(i: int, y: np.ndarray, pm: np.ndarray) -> float:
        return float(f.value(chart.point(y, pm))[i])

    def big_h(y: np.ndarray, pm: np.ndarray) -> float:
        return h(chart.point(y, pm))

    first = 0.0
    for i in range(n):
        df_dy = _fd_gradient(lambda y, i=i: big_f(i, y, p_mom), y0, step)
        dh_dp = _fd_gradient(
            lambda q, i=i: big_h(y0, np.vstack([p_mom[:i], q, p_mom[i + 1:]])), p_mom[i], step
        )
        first += float(df_dy @ dh_dp)
    df_dp = _fd_gradient(lambda q: big_f(0, y0, np.vstack([q, p_mom[1:]])), p_mom[0], step)
    dh_dy = _fd_gradient(lambda y: big_h(y, p_mom), y0, step)
    return first - float(df_dp @ dh_dy)


def bracket_equivalence_check(
    h: HamiltonianSpec,
    f: LinearForm,
    kind: ConfigKind | str,
    samples: int = 100,
    n: int = 1,
    rng: np.random.Generator | None = None,
    algebra: MatrixAlgebra | None = None,
    step: float = 1e-4,
    mu_scale: float = 1.0,
) -> EquivalenceReport:
    """比较坐标卡中的未约化括号 {F, H} 与投影点上的约化括号 {f, h}；H = h∘Ψ 由构造保证"""
    kind = ConfigKind(kind)
    algebra = algebra or default_algebra(kind)
    rng = rng or np.random.default_rng(0)
    errors: list[float] = []
    skipped = 0
    for k in range(samples):
        g_c = algebra.exp(rng.normal(size=algebra.dim))
        mu0 = mu_scale * rng.normal(size=(n, algebra.dim))
        chart = _Chart(algebra, kind, g_c)
        try:
            p0 = chart.point(np.zeros(algebra.dim), chart.momenta_for(mu0))
            ref = reduced_bracket(algebra.constants, f, h, p0)
            got = unreduced_bracket(chart, f, h, chart.momenta_for(mu0), step)
        except (EvaluationError, np.linalg.LinAlgError) as e:
            skipped += 1
            logger.warning("括号等价性样本 %d 跳过: %s", k, e)
            continue
        errors.append(abs(got - ref) / max(1.0, abs(ref)))
    worst = max(errors) if errors else float("nan")
    logger.info("括号等价性 %s: %d 样本, 最大相对误差 %.3e, 跳过 %d", kind.value, len(errors), worst, skipped)
    return EquivalenceReport(worst, len(errors), skipped, errors=errors)
