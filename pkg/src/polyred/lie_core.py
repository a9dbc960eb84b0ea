"""李代数/李群内核：结构常数、余伴随作用、指数映射、仿射代数、Z 函数恒等式"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm, expm_frechet

logger = logging.getLogger(__name__)

ROTATION_TOL = 1e-10
SKEW_TOL = 1e-10
EXP_TAYLOR_CUTOFF = 1e-8

E1 = np.array([1.0, 0.0, 0.0])
E2 = np.array([0.0, 1.0, 0.0])
E3 = np.array([0.0, 0.0, 1.0])

# so(3) 分裂基 (e3, e1, e2)：𝔨 = so(2)_{e3} 排在最前
SPLIT_PERM = np.array([2, 0, 1])
SPLIT_INV = np.array([1, 2, 0])


# ── 异常 ──

class NumericalError(RuntimeError):
    """数值计算失败（CLI 退出码 3）"""


class StepRejected(NumericalError):
    """积分步产生非有限导数，步长被拒绝"""


class CFLError(NumericalError):
    """时间步长违反 CFL 条件"""


class EvaluationError(NumericalError):
    """哈密顿量在差分点上取到非有限值"""


class TransportError(NumericalError):
    """平行移动步长过大（‖A‖Δ > 1）"""


class ChartError(NumericalError):
    """差分步长超出指数坐标卡的可靠范围"""


class DimensionError(ValueError):
    """向量/张量维度不匹配"""


class GroupElementError(ValueError):
    """群元不满足 RᵀR = I, det R = 1"""


def as_vector(x, dim: int | None = None, name: str = "x") -> np.ndarray:
    """转为有限浮点一维数组，并检查长度"""
    arr = np.asarray(x, dtype=float).reshape(-1)
    if dim is not None and arr.shape[0] != dim:
        raise DimensionError(f"{name} 维度应为 {dim}，实际 {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise DimensionError(f"{name} 含非有限值")
    return arr


# ── 结构常数 ──

@dataclass(frozen=True)
class StructureConstants:
    """c[I, J, K] = [B_J, B_K] 在 B_I 上的系数；前 dim_k 个基张成子代数 𝔨"""

    name: str
    dim_k: int
    c: np.ndarray

    def __post_init__(self) -> None:
        c = np.asarray(self.c, dtype=float)
        if c.ndim != 3 or len(set(c.shape)) != 1:
            raise DimensionError(f"结构常数必须是 n×n×n 张量，实际 {c.shape}")
        if not 0 <= self.dim_k <= c.shape[0]:
            raise DimensionError(f"dim_k={self.dim_k} 超出 [0, {c.shape[0]}]")
        object.__setattr__(self, "c", c)

    @property
    def dim_g(self) -> int:
        return self.c.shape[0]

    def antisymmetry_residual(self) -> float:
        return float(np.max(np.abs(self.c + self.c.transpose(0, 2, 1)), initial=0.0))

    def jacobi_residual(self) -> float:
        c = self.c
        t = (
            np.einsum("imj,mkl->ijkl", c, c)
            + np.einsum("imk,mlj->ijkl", c, c)
            + np.einsum("iml,mjk->ijkl", c, c)
        )
        return float(np.max(np.abs(t), initial=0.0))

    def closure_residual(self) -> float:
        """[𝔨, 𝔨] ⊆ 𝔨：𝔨 指标对在 𝔪 方向的分量"""
        k = self.dim_k
        return float(np.max(np.abs(self.c[k:, :k, :k]), initial=0.0))

    def validate(self, tol: float = 1e-12) -> None:
        for label, value in (
            ("反对称", self.antisymmetry_residual()),
            ("Jacobi", self.jacobi_residual()),
            ("子代数封闭", self.closure_residual()),
        ):
            if value > tol:
                raise ValueError(f"{self.name}: {label}残差 {value:.3e} > {tol:.0e}")


def levi_civita() -> np.ndarray:
    eps = np.zeros((3, 3, 3))
    for i, j, k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        eps[i, j, k] = 1.0
        eps[i, k, j] = -1.0
    return eps


def so3_constants(split: bool = False) -> StructureConstants:
    # 循环重排 (e3, e1, e2) 保持 Levi-Civita 张量不变
    if split:
        return StructureConstants("so3_split", 1, levi_civita())
    return StructureConstants("so3", 0, levi_civita())


def r2_constants() -> StructureConstants:
    return StructureConstants("r2", 1, np.zeros((2, 2, 2)))


def affine_constants() -> StructureConstants:
    """so(3) ⋉ ℝ³，基 (b1, b2, b3, v1, v2, v3)，𝔨 = so(3)"""
    eps = levi_civita()
    c = np.zeros((6, 6, 6))
    c[:3, :3, :3] = eps
    c[3:, :3, 3:] = eps
    c[3:, 3:, :3] = eps
    return StructureConstants("se3_affine", 3, c)


def bracket(c: StructureConstants, x, y) -> np.ndarray:
    x = as_vector(x, c.dim_g, "x")
    y = as_vector(y, c.dim_g, "y")
    return np.einsum("ijk,j,k->i", c.c, x, y)


def coad(c: StructureConstants, xi, mu) -> np.ndarray:
    """⟨coad(ξ, μ), η⟩ = ⟨μ, [ξ, η]⟩"""
    xi = as_vector(xi, c.dim_g, "xi")
    mu = as_vector(mu, c.dim_g, "mu")
    return np.einsum("ijk,i,j->k", c.c, mu, xi)


# ── so(3) ──

def hat(v) -> np.ndarray:
    """hat(v) @ w == v × w"""
    x, y, z = as_vector(v, 3, "v")
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        raise DimensionError(f"vee 需要 3×3 矩阵，实际 {m.shape}")
    sym = np.linalg.norm(m + m.T) / 2
    if sym > SKEW_TOL:
        raise ValueError(f"vee: 输入非反对称（对称部分范数 {sym:.3e}）")
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def exp_so3(v) -> np.ndarray:
    v = as_vector(v, 3, "v")
    theta = float(np.linalg.norm(v))
    k = hat(v)
    if theta < EXP_TAYLOR_CUTOFF:
        return np.eye(3) + k + 0.5 * (k @ k)
    return (
        np.eye(3)
        + (np.sin(theta) / theta) * k
        + ((1.0 - np.cos(theta)) / theta**2) * (k @ k)
    )


def check_rotation(r, tol: float = ROTATION_TOL) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        raise GroupElementError(f"旋转矩阵形状/数值无效: {r.shape}")
    ortho = float(np.max(np.abs(r.T @ r - np.eye(3))))
    det = float(np.linalg.det(r))
    if ortho > tol or abs(det - 1.0) > tol:
        raise GroupElementError(f"非 SO(3) 元素: ‖RᵀR−I‖={ortho:.3e}, det={det:.12f}")
    return r


def rotation_about_e3(angle: float) -> np.ndarray:
    return exp_so3(angle * E3)


def random_rotation(rng: np.random.Generator, scale: float = np.pi) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return exp_so3(axis * rng.uniform(0.0, scale))


# ── 仿射群 SO(3) ⋉ ℝ³ ──

@dataclass(frozen=True)
class AffineElement:
    R: np.ndarray
    v: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "R", check_rotation(self.R))
        object.__setattr__(self, "v", as_vector(self.v, 3, "v"))

    @classmethod
    def identity(cls) -> AffineElement:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> AffineElement:
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.R
        m[:3, 3] = self.v
        return m


@dataclass(frozen=True)
class AffineAlgebraVector:
    b: np.ndarray
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        object.__setattr__(self, "b", as_vector(self.b, 3, "b"))
        object.__setattr__(self, "v", as_vector(self.v, 3, "v"))

    @classmethod
    def from_array(cls, arr) -> AffineAlgebraVector:
        arr = as_vector(arr, 6, "affine")
        return cls(arr[:3], arr[3:])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.b, self.v])


def affine_compose(g: AffineElement, g2: AffineElement) -> AffineElement:
    """(R, v)·(R', v') = (RR', Rv' + v)"""
    return AffineElement(g.R @ g2.R, g.R @ g2.v + g.v)


def affine_inverse(g: AffineElement) -> AffineElement:
    return AffineElement(g.R.T, -(g.R.T @ g.v))


def affine_bracket(a: AffineAlgebraVector, a2: AffineAlgebraVector) -> AffineAlgebraVector:
    """[(B, v), (B', v')] = ([B, B'], Bv' − B'v)"""
    return AffineAlgebraVector(
        np.cross(a.b, a2.b),
        np.cross(a.b, a2.v) - np.cross(a2.b, a.v),
    )


def adjoint(g, xi):
    """Ad_g ξ；SO(3) 上为 R·ξ，仿射群上为 (Rb, Rw − (Rb)×v)"""
    if isinstance(g, AffineElement):
        packed = not isinstance(xi, AffineAlgebraVector)
        a = AffineAlgebraVector.from_array(xi) if packed else xi
        rb = g.R @ a.b
        out = AffineAlgebraVector(rb, g.R @ a.v - np.cross(rb, g.v))
        return out.as_array() if packed else out
    return check_rotation(g) @ as_vector(xi, 3, "xi")


# ── 矩阵表示与指数坐标卡 ──

@dataclass(frozen=True)
class MatrixAlgebra:
    """李代数的忠实矩阵表示：basis[I] 的交换子满足 [B_J, B_K] = c^I_{JK} B_I"""

    constants: StructureConstants
    basis: np.ndarray
    _pinv: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        basis = np.asarray(self.basis, dtype=float)
        if basis.shape[0] != self.constants.dim_g:
            raise DimensionError(
                f"基矩阵个数 {basis.shape[0]} 与 dim_g={self.constants.dim_g} 不符"
            )
        object.__setattr__(self, "basis", basis)
        flat = basis.reshape(basis.shape[0], -1)
        object.__setattr__(self, "_pinv", np.linalg.pinv(flat.T))

    @property
    def dim(self) -> int:
        return self.constants.dim_g

    @property
    def dim_k(self) -> int:
        return self.constants.dim_k

    def expand(self, y) -> np.ndarray:
        y = as_vector(y, self.dim, "y")
        return np.einsum("i,ijk->jk", y, self.basis)

    def coords(self, m) -> np.ndarray:
        return self._pinv @ np.asarray(m, dtype=float).reshape(-1)

    def exp(self, y) -> np.ndarray:
        return expm(self.expand(y))

    def right_jacobian(self, y) -> np.ndarray:
        """Z(y)：(∂_J e^Y) e^{−Y} = Z^I_J B_I"""
        big_y = self.expand(y)
        inv = expm(-big_y)
        z = np.empty((self.dim, self.dim))
        for j in range(self.dim):
            _, d = expm_frechet(big_y, self.basis[j])
            z[:, j] = self.coords(d @ inv)
        return z

    def left_jacobian(self, q) -> np.ndarray:
        """L(q)：e^{−Q} (∂_J e^Q) = L^I_J B_I"""
        big_q = self.expand(q)
        inv = expm(-big_q)
        lj = np.empty((self.dim, self.dim))
        for j in range(self.dim):
            _, d = expm_frechet(big_q, self.basis[j])
            lj[:, j] = self.coords(inv @ d)
        return lj

    def adjoint_matrix(self, g) -> np.ndarray:
        """Ad_g 在基下的矩阵，列 J 为 g B_J g⁻¹ 的坐标"""
        g = np.asarray(g, dtype=float)
        g_inv = np.linalg.inv(g)
        return np.stack([self.coords(g @ b @ g_inv) for b in self.basis], axis=1)

    def commutator_residual(self) -> float:
        worst = 0.0
        for j in range(self.dim):
            for k in range(self.dim):
                comm = self.basis[j] @ self.basis[k] - self.basis[k] @ self.basis[j]
                expected = np.einsum("i,ijk->jk", self.constants.c[:, j, k], self.basis)
                worst = max(worst, float(np.max(np.abs(comm - expected))))
        return worst


def so3_algebra(split: bool = False) -> MatrixAlgebra:
    axes = np.eye(3)[SPLIT_PERM] if split else np.eye(3)
    return MatrixAlgebra(so3_constants(split), np.stack([hat(a) for a in axes]))


def r2_algebra() -> MatrixAlgebra:
    basis = np.zeros((2, 3, 3))
    basis[0, 0, 2] = 1.0
    basis[1, 1, 2] = 1.0
    return MatrixAlgebra(r2_constants(), basis)


def affine_algebra() -> MatrixAlgebra:
    basis = np.zeros((6, 4, 4))
    for i, axis in enumerate(np.eye(3)):
        basis[i, :3, :3] = hat(axis)
        basis[3 + i, i, 3] = 1.0
    return MatrixAlgebra(affine_constants(), basis)


SHIPPED_ALGEBRAS = {
    "so3": lambda: so3_algebra(split=True),
    "r2": r2_algebra,
    "se3_affine": affine_algebra,
}


def z_derivative_check(algebra: MatrixAlgebra, step: float = 1e-4) -> float:
    """max_{I,J,K} |∂Z^I_J/∂y^K + ½ c^I_{JK}|，在单位元处以中心差分求值"""
    if not 0.0 < step <= 1e-2:
        raise ChartError(f"差分步长 {step} 不在 (0, 1e-2] 内")
    n = algebra.dim
    dz = np.empty((n, n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = step
        dz[:, :, k] = (algebra.right_jacobian(e) - algebra.right_jacobian(-e)) / (2 * step)
    residual = float(np.max(np.abs(dz + 0.5 * algebra.constants.c)))
    logger.debug("Z 导数残差 %s: %.3e", algebra.constants.name, residual)
    return residual
