"""约化构型空间 P/K 上的无穷小作用，以及 P / P⁺ 算子（球面、仿射纤维、S¹ 例子的直线）"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum

import numpy as np

from polyred.lie_core import AffineAlgebraVector, as_vector, exp_so3

logger = logging.getLogger(__name__)

UNIT_TOL = 1e-9


class ConfigKind(str, Enum):
    SPHERE = "sphere"   # S² = SO(3)/SO(2)，Γ = R·e3
    AFFINE = "affine"   # E ≅ ℝ³，s̄ = v
    LINE = "line"       # ℝ²/ℝ ≅ ℝ，ȳ = −v_y
    NONE = "none"       # 无约化构型


class ConfigurationError(ValueError):
    """约化构型无效，或构型类型没有注册作用"""


@dataclass(frozen=True)
class SpherePoint:
    gamma: np.ndarray

    def __post_init__(self) -> None:
        g = as_vector(self.gamma, 3, "gamma")
        if abs(np.linalg.norm(g) - 1.0) > UNIT_TOL:
            raise ConfigurationError(f"Γ 不是单位向量: ‖Γ‖={np.linalg.norm(g):.12f}")
        object.__setattr__(self, "gamma", g)


@dataclass(frozen=True)
class AffineConfig:
    s_bar: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "s_bar", as_vector(self.s_bar, 3, "s_bar"))


def _gamma(p) -> np.ndarray:
    if isinstance(p, SpherePoint):
        return p.gamma
    return SpherePoint(p).gamma


def _s_bar(s) -> np.ndarray:
    if isinstance(s, AffineConfig):
        return s.s_bar
    return AffineConfig(s).s_bar


# ── 球面 S² ──

def sphere_action(eta, p) -> np.ndarray:
    """η_{P/K}(Γ) = η × Γ"""
    return np.cross(as_vector(eta, 3, "eta"), _gamma(p))


def sphere_p_plus(p, upsilon) -> np.ndarray:
    """P⁺(Υ) = Γ × Υ，先去掉 Υ 沿 Γ 的法向分量"""
    g = _gamma(p)
    u = as_vector(upsilon, 3, "upsilon")
    return np.cross(g, u - np.dot(u, g) * g)


# ── 仿射纤维 E ≅ ℝ³ ──

def _split_affine(a) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(a, AffineAlgebraVector):
        return a.b, a.v
    arr = as_vector(a, 6, "a")
    return arr[:3], arr[3:]


def affine_p(s, a) -> np.ndarray:
    """P(η, ξ) = η × s̄ + ξ"""
    eta, xi = _split_affine(a)
    return np.cross(eta, _s_bar(s)) + xi


def affine_p_plus(s, omega) -> tuple[np.ndarray, np.ndarray]:
    """P⁺(ω) = (ω ⊗ s̄, ω)，ℝ³ 实现下第一分量为 s̄ × ω"""
    w = as_vector(omega, 3, "omega")
    return np.cross(_s_bar(s), w), w


# ── 直线 ℝ²/ℝ（S¹ 例子，𝔨 = x 方向平移）──

def line_p(s, eta) -> np.ndarray:
    eta = as_vector(eta, 2, "eta")
    return np.array([-eta[1]])


def line_p_plus(s, upsilon) -> np.ndarray:
    u = as_vector(upsilon, 1, "upsilon")
    return np.array([0.0, -u[0]])


# ── 作用注册表 ──

class Action(ABC):
    """某一类约化构型上的 (P, P⁺) 对"""

    kind: ConfigKind
    algebra_dim: int
    config_dim: int

    @abstractmethod
    def p(self, s_bar: np.ndarray, eta: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def p_plus(self, s_bar: np.ndarray, upsilon: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def from_group(self, g: np.ndarray) -> np.ndarray:
        """矩阵表示下的群元 → s̄"""

    @abstractmethod
    def act(self, g: np.ndarray, s_bar: np.ndarray) -> np.ndarray:
        """群元（矩阵表示）对 s̄ 的有限作用"""

    @abstractmethod
    def frame(self, s_bar: np.ndarray) -> np.ndarray:
        """满足 frame·origin = s̄ 的群元，𝔨 在该标架下是 s̄ 的迷向子代数"""

    def tangent_project(self, s_bar: np.ndarray, v: np.ndarray) -> np.ndarray:
        return np.asarray(v, dtype=float)

    def validate(self, s_bar) -> np.ndarray:
        return as_vector(s_bar, self.config_dim, "s_bar")


class SphereAction(Action):
    kind = ConfigKind.SPHERE
    algebra_dim = 3
    config_dim = 3
    origin = np.array([0.0, 0.0, 1.0])

    # 积分轨道上的 Γ 允许有漂移，这里不做单位长度校验
    def p(self, s_bar, eta):
        return np.cross(as_vector(eta, 3, "eta"), as_vector(s_bar, 3, "gamma"))

    def p_plus(self, s_bar, upsilon):
        g = as_vector(s_bar, 3, "gamma")
        return np.cross(g, self.tangent_project(g, upsilon))

    def from_group(self, g):
        return np.asarray(g, dtype=float)[:3, :3] @ np.array([0.0, 0.0, 1.0])

    def act(self, g, s_bar):
        return np.asarray(g, dtype=float)[:3, :3] @ as_vector(s_bar, 3, "gamma")

    def frame(self, s_bar):
        g = as_vector(s_bar, 3, "gamma")
        g = g / np.linalg.norm(g)
        axis = np.cross(self.origin, g)
        sin_a = np.linalg.norm(axis)
        if sin_a < 1e-12:
            return np.eye(3) if g[2] > 0 else exp_so3(np.pi * np.array([1.0, 0.0, 0.0]))
        return exp_so3(axis / sin_a * np.arctan2(sin_a, g[2]))

    def tangent_project(self, s_bar, v):
        g = as_vector(s_bar, 3, "gamma")
        v = np.asarray(v, dtype=float)
        # 漂移中的 Γ 也按当前方向投影
        n = g / np.linalg.norm(g)
        return v - np.dot(v, n) * n


class AffineAction(Action):
    kind = ConfigKind.AFFINE
    algebra_dim = 6
    config_dim = 3
    origin = np.zeros(3)

    def p(self, s_bar, eta):
        return affine_p(s_bar, eta)

    def p_plus(self, s_bar, upsilon):
        first, second = affine_p_plus(s_bar, upsilon)
        return np.concatenate([first, second])

    def from_group(self, g):
        return np.asarray(g, dtype=float)[:3, 3].copy()

    def act(self, g, s_bar):
        g = np.asarray(g, dtype=float)
        return g[:3, :3] @ as_vector(s_bar, 3, "s_bar") + g[:3, 3]

    def frame(self, s_bar):
        g = np.eye(4)
        g[:3, 3] = as_vector(s_bar, 3, "s_bar")
        return g


class LineAction(Action):
    kind = ConfigKind.LINE
    algebra_dim = 2
    config_dim = 1
    origin = np.zeros(1)

    def p(self, s_bar, eta):
        return line_p(s_bar, eta)

    def p_plus(self, s_bar, upsilon):
        return line_p_plus(s_bar, upsilon)

    def from_group(self, g):
        return np.array([-float(np.asarray(g, dtype=float)[1, 2])])

    def act(self, g, s_bar):
        return as_vector(s_bar, 1, "y_bar") - float(np.asarray(g, dtype=float)[1, 2])

    def frame(self, s_bar):
        g = np.eye(3)
        g[1, 2] = -as_vector(s_bar, 1, "y_bar")[0]
        return g


_ACTIONS: dict[ConfigKind, Action] = {}


def register_action(action: Action) -> None:
    _ACTIONS[action.kind] = action


def action_for(kind: ConfigKind | str) -> Action:
    kind = ConfigKind(kind)
    try:
        return _ACTIONS[kind]
    except KeyError:
        raise ConfigurationError(f"构型类型 {kind.value} 没有注册 (P, P⁺) 作用") from None


for _action in (SphereAction(), AffineAction(), LineAction()):
    register_action(_action)
