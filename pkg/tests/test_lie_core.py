"""李代数内核单元测试 — 结构常数 / bracket / coad / exp_so3 / 仿射群 / Z 函数"""

from __future__ import annotations

import numpy as np
import pytest

from polyred.lie_core import (
    SHIPPED_ALGEBRAS,
    AffineAlgebraVector,
    AffineElement,
    ChartError,
    DimensionError,
    GroupElementError,
    StructureConstants,
    adjoint,
    affine_algebra,
    affine_bracket,
    affine_compose,
    affine_constants,
    affine_inverse,
    bracket,
    check_rotation,
    coad,
    exp_so3,
    hat,
    r2_constants,
    random_rotation,
    so3_algebra,
    so3_constants,
    vee,
    z_derivative_check,
)


CONSTANTS = {
    "so3": so3_constants(),
    "so3_split": so3_constants(split=True),
    "r2": r2_constants(),
    "affine": affine_constants(),
}


@pytest.fixture
def rng():
    return np.random.default_rng(7)


# ╔════════════════════════════════════════════════════╗
# ║  1. 结构常数                                       ║
# ╚════════════════════════════════════════════════════╝


class TestStructureConstants:
    @pytest.mark.parametrize("name", list(CONSTANTS))
    def test_shipped_tables_validate(self, name):
        c = CONSTANTS[name]
        assert c.antisymmetry_residual() == 0.0
        assert c.jacobi_residual() <= 1e-12
        assert c.closure_residual() == 0.0
        c.validate()

    def test_dimensions(self):
        assert so3_constants().dim_g == 3
        assert so3_constants(split=True).dim_k == 1
        assert affine_constants().dim_g == 6
        assert affine_constants().dim_k == 3
        assert r2_constants().dim_k == 1

    def test_rejects_non_cubic_tensor(self):
        with pytest.raises(DimensionError):
            StructureConstants("bad", 0, np.zeros((2, 3, 3)))

    def test_rejects_dim_k_out_of_range(self):
        with pytest.raises(DimensionError):
            StructureConstants("bad", 4, np.zeros((3, 3, 3)))

    def test_validate_flags_broken_closure(self):
        """span(e1, e2) 不是 so(3) 的子代数"""
        c = StructureConstants("open", 2, so3_constants().c)
        with pytest.raises(ValueError, match="子代数封闭"):
            c.validate()


# ╔════════════════════════════════════════════════════╗
# ║  2. bracket / coad                                 ║
# ╚════════════════════════════════════════════════════╝


class TestBracket:
    def test_so3_basis_relation(self):
        e1, e2, e3 = np.eye(3)
        np.testing.assert_allclose(bracket(so3_constants(), e1, e2), e3)

    def test_self_bracket_vanishes(self, rng):
        for c in CONSTANTS.values():
            x = rng.normal(size=c.dim_g)
            np.testing.assert_allclose(bracket(c, x, x), 0.0, atol=1e-14)

    def test_so3_is_cross_product(self, rng):
        for _ in range(20):
            x, y = rng.normal(size=(2, 3))
            np.testing.assert_allclose(bracket(so3_constants(), x, y), np.cross(x, y), atol=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            bracket(so3_constants(), np.ones(3), np.ones(4))

    def test_affine_table_matches_closed_form(self, rng):
        c = affine_constants()
        for _ in range(10):
            x, y = rng.normal(size=(2, 6))
            expected = affine_bracket(AffineAlgebraVector.from_array(x), AffineAlgebraVector.from_array(y))
            np.testing.assert_allclose(bracket(c, x, y), expected.as_array(), atol=1e-13)


class TestCoad:
    @pytest.mark.parametrize("name", list(CONSTANTS))
    def test_pairing_identity(self, name, rng):
        """⟨coad(ξ, μ), η⟩ = ⟨μ, [ξ, η]⟩"""
        c = CONSTANTS[name]
        for _ in range(100):
            xi, mu, eta = rng.normal(size=(3, c.dim_g))
            lhs = coad(c, xi, mu) @ eta
            rhs = mu @ bracket(c, xi, eta)
            assert abs(lhs - rhs) <= 1e-12

    def test_so3_coad_is_cross(self):
        """so(3)：coad(ξ, μ) = μ × ξ"""
        xi = np.array([0.3, -1.0, 2.0])
        mu = np.array([1.0, 0.5, -0.2])
        np.testing.assert_allclose(coad(so3_constants(), xi, mu), np.cross(mu, xi), atol=1e-14)

    def test_abelian_coad_is_zero(self, rng):
        xi, mu = rng.normal(size=(2, 2))
        np.testing.assert_allclose(coad(r2_constants(), xi, mu), 0.0)


# ╔════════════════════════════════════════════════════╗
# ║  3. so(3) 与 SO(3)                                 ║
# ╚════════════════════════════════════════════════════╝


class TestSO3:
    def test_hat_is_cross(self, rng):
        v, w = rng.normal(size=(2, 3))
        np.testing.assert_allclose(hat(v) @ w, np.cross(v, w), atol=1e-14)

    def test_vee_inverts_hat(self, rng):
        v = rng.normal(size=3)
        np.testing.assert_allclose(vee(hat(v)), v)

    def test_vee_rejects_symmetric(self):
        with pytest.raises(ValueError):
            vee(np.eye(3))

    def test_exp_zero_is_identity(self):
        np.testing.assert_allclose(exp_so3(np.zeros(3)), np.eye(3))

    def test_exp_half_turn_about_e3(self):
        np.testing.assert_allclose(
            exp_so3([0.0, 0.0, np.pi]), np.diag([-1.0, -1.0, 1.0]), atol=1e-14
        )

    def test_exp_is_rotation(self, rng):
        for _ in range(100):
            r = exp_so3(rng.normal(scale=3.0, size=3))
            assert np.max(np.abs(r.T @ r - np.eye(3))) <= 1e-12
            assert abs(np.linalg.det(r) - 1.0) <= 1e-12

    def test_small_angle_branch(self):
        v = np.array([1e-10, -2e-10, 3e-10])
        np.testing.assert_allclose(exp_so3(v), np.eye(3) + hat(v), atol=1e-18)

    def test_exp_matches_matrix_algebra(self, rng):
        algebra = so3_algebra()
        v = rng.normal(size=3)
        np.testing.assert_allclose(exp_so3(v), algebra.exp(v), atol=1e-12)

    def test_check_rotation_rejects(self):
        with pytest.raises(GroupElementError):
            check_rotation(np.diag([1.0, 1.0, -1.0]))
        with pytest.raises(GroupElementError):
            check_rotation(2 * np.eye(3))

    def test_adjoint_so3(self, rng):
        r = random_rotation(rng)
        xi = rng.normal(size=3)
        np.testing.assert_allclose(hat(adjoint(r, xi)), r @ hat(xi) @ r.T, atol=1e-12)


# ╔════════════════════════════════════════════════════╗
# ║  4. 仿射群 SO(3) ⋉ ℝ³                              ║
# ╚════════════════════════════════════════════════════╝


class TestAffineGroup:
    def test_compose_matches_matrices(self, rng):
        g = AffineElement(random_rotation(rng), rng.normal(size=3))
        h = AffineElement(random_rotation(rng), rng.normal(size=3))
        np.testing.assert_allclose(
            affine_compose(g, h).as_matrix(), g.as_matrix() @ h.as_matrix(), atol=1e-12
        )

    def test_inverse(self, rng):
        g = AffineElement(random_rotation(rng), rng.normal(size=3))
        e = affine_compose(g, affine_inverse(g))
        np.testing.assert_allclose(e.R, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(e.v, 0.0, atol=1e-12)

    def test_adjoint_matches_conjugation(self, rng):
        g = AffineElement(random_rotation(rng), rng.normal(size=3))
        xi = rng.normal(size=6)
        algebra = affine_algebra()
        m = g.as_matrix()
        expected = algebra.coords(m @ algebra.expand(xi) @ np.linalg.inv(m))
        np.testing.assert_allclose(adjoint(g, xi), expected, atol=1e-12)

    def test_rejects_invalid_rotation(self):
        with pytest.raises(GroupElementError):
            AffineElement(np.ones((3, 3)), np.zeros(3))


# ╔════════════════════════════════════════════════════╗
# ║  5. 矩阵表示与 Z 函数                              ║
# ╚════════════════════════════════════════════════════╝


class TestMatrixAlgebra:
    @pytest.mark.parametrize("name", list(SHIPPED_ALGEBRAS))
    def test_basis_realizes_constants(self, name):
        assert SHIPPED_ALGEBRAS[name]().commutator_residual() <= 1e-14

    @pytest.mark.parametrize("name", list(SHIPPED_ALGEBRAS))
    def test_right_jacobian_at_identity(self, name):
        algebra = SHIPPED_ALGEBRAS[name]()
        np.testing.assert_allclose(algebra.right_jacobian(np.zeros(algebra.dim)), np.eye(algebra.dim), atol=1e-14)

    def test_adjoint_matrix_so3_is_rotation(self, rng):
        r = random_rotation(rng)
        np.testing.assert_allclose(so3_algebra().adjoint_matrix(r), r, atol=1e-12)


class TestZDerivative:
    @pytest.mark.parametrize("name", list(SHIPPED_ALGEBRAS))
    def test_identity_holds(self, name):
        assert z_derivative_check(SHIPPED_ALGEBRAS[name]()) <= 1e-6

    def test_abelian_is_exact(self):
        assert z_derivative_check(SHIPPED_ALGEBRAS["r2"]()) <= 1e-12

    @pytest.mark.parametrize("step", [0.0, 0.1])
    def test_step_out_of_range(self, step):
        with pytest.raises(ChartError):
            z_derivative_check(so3_algebra(), step=step)
