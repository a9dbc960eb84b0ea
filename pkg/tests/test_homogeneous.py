"""约化构型空间单元测试 — 球面 / 仿射纤维 / 直线 上的 P、P⁺ 与作用注册表"""

from __future__ import annotations

import numpy as np
import pytest

from polyred.homogeneous import (
    AffineConfig,
    ConfigKind,
    ConfigurationError,
    SpherePoint,
    action_for,
    affine_p,
    affine_p_plus,
    line_p,
    line_p_plus,
    sphere_action,
    sphere_p_plus,
)
from polyred.lie_core import AffineAlgebraVector, DimensionError, exp_so3, random_rotation


@pytest.fixture
def rng():
    return np.random.default_rng(11)


def _unit(rng) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def _config(kind: ConfigKind, rng) -> np.ndarray:
    if kind is ConfigKind.SPHERE:
        return _unit(rng)
    if kind is ConfigKind.AFFINE:
        return rng.normal(size=3)
    return rng.normal(size=1)


# ╔════════════════════════════════════════════════════╗
# ║  1. 球面 S²                                         ║
# ╚════════════════════════════════════════════════════╝


class TestSphere:
    def test_action_is_cross(self):
        e1, _, e3 = np.eye(3)
        np.testing.assert_allclose(sphere_action(e1, e3), [0.0, -1.0, 0.0])

    def test_rejects_non_unit(self):
        with pytest.raises(ConfigurationError):
            SpherePoint([0.0, 0.0, 2.0])

    def test_p_plus_drops_normal_part(self, rng):
        g = _unit(rng)
        np.testing.assert_allclose(sphere_p_plus(g, 3.0 * g), 0.0, atol=1e-14)

    def test_p_plus_of_tangent(self):
        e1, e2, e3 = np.eye(3)
        np.testing.assert_allclose(sphere_p_plus(e3, e1), e2)

    def test_isotropy_direction_fixes_gamma(self, rng):
        """标架下的 𝔨 方向 frame·e3 = Γ 生成的无穷小作用为零"""
        act = action_for(ConfigKind.SPHERE)
        g = _unit(rng)
        k_dir = act.frame(g) @ np.array([0.0, 0.0, 1.0])
        np.testing.assert_allclose(act.p(g, k_dir), 0.0, atol=1e-12)

    @pytest.mark.parametrize("gamma", [[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
    def test_frame_at_poles(self, gamma):
        act = action_for(ConfigKind.SPHERE)
        np.testing.assert_allclose(act.act(act.frame(gamma), act.origin), gamma, atol=1e-12)

    def test_tangent_project_orthogonal(self, rng):
        act = action_for(ConfigKind.SPHERE)
        g = _unit(rng)
        v = act.tangent_project(g, rng.normal(size=3))
        assert abs(v @ g) <= 1e-14

    def test_action_equivariant(self, rng):
        for _ in range(20):
            r = random_rotation(rng)
            eta, g = rng.normal(size=3), _unit(rng)
            np.testing.assert_allclose(sphere_action(r @ eta, r @ g), r @ sphere_action(eta, g), atol=1e-12)

    def test_p_plus_equivariant(self, rng):
        for _ in range(20):
            r = random_rotation(rng)
            g, v = _unit(rng), rng.normal(size=3)
            np.testing.assert_allclose(sphere_p_plus(r @ g, r @ v), r @ sphere_p_plus(g, v), atol=1e-12)

    def test_action_is_derivative_of_group_action(self, rng):
        act = action_for(ConfigKind.SPHERE)
        eps = 1e-6
        for _ in range(20):
            eta, g = rng.normal(size=3), _unit(rng)
            fd = (act.act(exp_so3(eps * eta), g) - act.act(exp_so3(-eps * eta), g)) / (2 * eps)
            np.testing.assert_allclose(sphere_action(eta, g), fd, atol=1e-8)


# ╔════════════════════════════════════════════════════╗
# ║  2. 仿射纤维与直线                                  ║
# ╚════════════════════════════════════════════════════╝


class TestAffineAndLine:
    def test_affine_p(self):
        s = np.array([1.0, 0.0, 0.0])
        a = AffineAlgebraVector([0.0, 0.0, 1.0], [0.5, 0.0, 0.0])
        np.testing.assert_allclose(affine_p(s, a), [0.5, 1.0, 0.0])

    def test_affine_p_accepts_packed(self):
        s = AffineConfig([1.0, 2.0, 3.0])
        np.testing.assert_allclose(affine_p(s, np.r_[np.zeros(3), 1.0, 1.0, 1.0]), [1.0, 1.0, 1.0])

    def test_affine_p_plus(self):
        first, second = affine_p_plus([1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
        np.testing.assert_allclose(first, [0.0, 0.0, 1.0])
        np.testing.assert_allclose(second, [0.0, 1.0, 0.0])

    def test_line(self):
        np.testing.assert_allclose(line_p([0.3], [2.0, -1.5]), [1.5])
        np.testing.assert_allclose(line_p_plus([0.3], [2.0]), [0.0, -2.0])

    def test_line_dimension_checked(self):
        with pytest.raises(DimensionError):
            line_p([0.0], [1.0, 2.0, 3.0])


# ╔════════════════════════════════════════════════════╗
# ║  3. 注册表与通用性质                                ║
# ╚════════════════════════════════════════════════════╝


SHIPPED_KINDS = [ConfigKind.SPHERE, ConfigKind.AFFINE, ConfigKind.LINE]


class TestActions:
    @pytest.mark.parametrize("kind", SHIPPED_KINDS)
    def test_p_plus_is_dual_of_p(self, kind, rng):
        """⟨P⁺(υ), η⟩ = ⟨υ, P(η)⟩，υ 取切向量"""
        act = action_for(kind)
        for _ in range(20):
            s = _config(kind, rng)
            eta = rng.normal(size=act.algebra_dim)
            ups = act.tangent_project(s, rng.normal(size=act.config_dim))
            assert act.p_plus(s, ups) @ eta == pytest.approx(ups @ act.p(s, eta), abs=1e-12)

    @pytest.mark.parametrize("kind", SHIPPED_KINDS)
    def test_frame_maps_origin_to_point(self, kind, rng):
        act = action_for(kind)
        for _ in range(10):
            s = _config(kind, rng)
            g = act.frame(s)
            np.testing.assert_allclose(act.act(g, act.origin), s, atol=1e-12)
            np.testing.assert_allclose(act.from_group(g), s, atol=1e-12)

    def test_lookup_by_string(self):
        assert action_for("sphere").kind is ConfigKind.SPHERE

    def test_missing_registration(self):
        with pytest.raises(ConfigurationError):
            action_for(ConfigKind.NONE)

    def test_kind_is_str(self):
        assert ConfigKind.LINE == "line"
