"""重构单元测试 — 联络 / 曲率 / 平行移动 / 和乐 / 重陀螺与 strand 重构 / S¹ 门控"""

from __future__ import annotations

import numpy as np
import pytest

from polyred.dynamics_ode import HeavyTopParams, OdeState, heavy_top_rhs, integrate, s1_rhs
from polyred.lie_core import E3, DimensionError, TransportError, exp_so3, r2_constants, so3_constants
from polyred.reconstruction import (
    ConnectionField,
    ReconstructionRefused,
    curvature,
    holonomy_loop,
    k_translate,
    parallel_transport,
    reconstruct_heavy_top,
    reconstruct_strand,
    s1_reconstruction_gate,
    transport_line,
)
from polyred.strand_pde import StrandFields, StrandParams, manufactured_fields, manufactured_rotation


def _constant_grid(a0, a1, shape=(16, 4)) -> np.ndarray:
    values = np.empty(shape + (2, 3))
    values[..., 0, :] = a0
    values[..., 1, :] = a1
    return values


def _strand_snapshots(prm: StrandParams, levels: int = 5, t0: float = 0.3):
    dt = 0.2 * prm.ds
    rotation = manufactured_rotation(0.1, prm.length)
    snaps = [manufactured_fields(rotation, prm, t0 + j * dt) for j in range(levels)]
    return snaps, dt, rotation(0.0, t0)


# ╔════════════════════════════════════════════════════╗
# ║  1. 联络与曲率                                      ║
# ╚════════════════════════════════════════════════════╝


class TestConnectionField:
    def test_needs_exactly_one_source(self):
        with pytest.raises(ValueError):
            ConnectionField(constants=so3_constants(), base_dim=1)

    def test_grid_shape_checked(self):
        with pytest.raises(DimensionError):
            ConnectionField.from_grid(np.zeros((8, 4, 2, 2)), (0.1, 0.1))

    def test_non_finite_grid(self):
        values = _constant_grid(np.zeros(3), np.zeros(3))
        values[3, 1, 0, 0] = np.nan
        with pytest.raises(ValueError):
            ConnectionField.from_grid(values, (0.1, 0.1))

    def test_sample_closed_form(self):
        conn = ConnectionField.closed_form(lambda x: np.array([[x[0], 0.0, 0.0]]), base_dim=1)
        grid = conn.sample([np.linspace(0.0, 1.0, 5)])
        assert grid.is_grid
        np.testing.assert_allclose(grid.grid[:, 0, 0], np.linspace(0.0, 1.0, 5))


class TestCurvature:
    def test_one_dimensional_base_is_flat(self):
        conn = ConnectionField.closed_form(lambda x: np.ones((1, 3)), base_dim=1)
        res = curvature(conn)
        assert res.trivially_flat
        assert res.max_norm == 0.0

    def test_commuting_constants_are_flat(self):
        conn = ConnectionField.from_grid(_constant_grid(E3, 0.5 * E3), (0.1, 0.1))
        assert curvature(conn).max_norm <= 1e-14

    def test_bracket_term(self):
        """常值 A_0 = e1, A_1 = e2：F = [e1, e2] = e3"""
        e1, e2, _ = np.eye(3)
        res = curvature(ConnectionField.from_grid(_constant_grid(e1, e2), (0.1, 0.1)))
        np.testing.assert_allclose(res.values[..., 2], 1.0)
        assert res.max_norm == pytest.approx(1.0)


# ╔════════════════════════════════════════════════════╗
# ║  2. 平行移动                                        ║
# ╚════════════════════════════════════════════════════╝


def _twisting_connection() -> ConnectionField:
    return ConnectionField.closed_form(
        lambda x: np.array([[np.cos(x[0]), np.sin(x[0]), 0.5]]), base_dim=1
    )


class TestTransport:
    def test_constant_so3(self):
        values = np.tile(0.7 * E3, (11, 1))
        out = transport_line(np.eye(3), values, 0.1)
        assert out.shape == (11, 3, 3)
        np.testing.assert_allclose(out[-1], exp_so3(-0.7 * E3), atol=1e-13)

    def test_abelian_is_minus_integral(self):
        t = np.linspace(0.0, 1.0, 11)
        values = np.column_stack([t, np.ones_like(t)])
        out = transport_line(np.zeros(2), values, 0.1, r2_constants())
        np.testing.assert_allclose(out[-1], [-0.5, -1.0], atol=1e-14)

    def test_step_too_large(self):
        with pytest.raises(TransportError):
            transport_line(np.eye(3), np.tile(20.0 * E3, (5, 1)), 0.1)

    def test_fourth_order(self):
        """路径细分一倍，误差约降为 1/16"""
        conn = _twisting_connection()
        ref = parallel_transport(np.eye(3), conn, np.linspace(0.0, 1.0, 641))
        errs = [
            np.linalg.norm(parallel_transport(np.eye(3), conn, np.linspace(0.0, 1.0, n)) - ref)
            for n in (11, 21)
        ]
        assert errs[1] <= 1e-5
        assert errs[0] / errs[1] >= 10.0

    def test_result_is_rotation(self):
        r = parallel_transport(np.eye(3), _twisting_connection(), np.linspace(0.0, 3.0, 31))
        np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-12)

    def test_k_translate_keeps_third_column(self):
        r = exp_so3([0.3, -0.4, 1.1])
        moved = k_translate(r, 0.8)
        np.testing.assert_allclose(moved[:, 2], r[:, 2], atol=1e-14)


# ╔════════════════════════════════════════════════════╗
# ║  3. 和乐                                            ║
# ╚════════════════════════════════════════════════════╝


class TestHolonomy:
    SPACING = (2 * np.pi / 16, 0.1)
    RECTANGLE = [(0, 0), (1, 0), (2, 0), (2, 1), (2, 2), (1, 2), (0, 2), (0, 1), (0, 0)]

    def _loop_around_s(self):
        return [(i, 0) for i in range(16)] + [(0, 0)]

    def test_open_path_rejected(self):
        conn = ConnectionField.from_grid(_constant_grid(E3, E3), self.SPACING, (True, False))
        with pytest.raises(ValueError, match="闭路径"):
            holonomy_loop(conn, [(0, 0), (1, 0)])

    def test_quarter_turn_around_generator(self):
        conn = ConnectionField.from_grid(_constant_grid(0.25 * E3, np.zeros(3)), self.SPACING, (True, False))
        res = holonomy_loop(conn, self._loop_around_s())
        assert not res.is_trivial
        assert res.value == pytest.approx(np.pi / 2, abs=1e-12)
        assert res.verdict == "obstructed: holonomy 1.5708"

    def test_full_turn_is_trivial(self):
        conn = ConnectionField.from_grid(_constant_grid(E3, np.zeros(3)), self.SPACING, (True, False))
        res = holonomy_loop(conn, self._loop_around_s())
        assert res.distance <= 1e-12
        assert res.is_trivial

    def test_flat_rectangle(self):
        conn = ConnectionField.from_grid(_constant_grid(E3, 0.5 * E3), self.SPACING, (True, False))
        assert holonomy_loop(conn, self.RECTANGLE).distance <= 1e-13

    def test_curved_rectangle(self):
        e1, e2, _ = np.eye(3)
        conn = ConnectionField.from_grid(_constant_grid(e1, e2), self.SPACING, (True, False))
        res = holonomy_loop(conn, self.RECTANGLE)
        assert res.distance > 1e-2
        assert res.to_dict()["is_trivial"] is False

    def test_non_axis_step_rejected(self):
        conn = ConnectionField.from_grid(_constant_grid(E3, E3), self.SPACING, (True, False))
        with pytest.raises(DimensionError):
            holonomy_loop(conn, [(0, 0), (1, 1), (0, 0)])


class TestS1Gate:
    def test_obstructed(self):
        gate = s1_reconstruction_gate(1.0)
        assert gate["verdict"] == "obstructed: holonomy 6.2832"
        assert gate["trivial"] is False
        assert gate["holonomy"] == pytest.approx(2 * np.pi, abs=1e-12)

    def test_trivial(self):
        gate = s1_reconstruction_gate(0.0)
        assert gate["trivial"]
        assert gate["verdict"] == "reconstructible: holonomy 0.0000"

    def test_sign_follows_mu0(self):
        assert s1_reconstruction_gate(-0.5)["verdict"] == "obstructed: holonomy -3.1416"

    def test_tolerance_is_on_mu0(self):
        assert s1_reconstruction_gate(1e-10)["trivial"]
        assert not s1_reconstruction_gate(1e-6)["trivial"]


# ╔════════════════════════════════════════════════════╗
# ║  4. 群值解重构                                      ║
# ╚════════════════════════════════════════════════════╝


class TestReconstructHeavyTop:
    def test_gamma_matches_rotation(self):
        prm = HeavyTopParams()
        st = OdeState.heavy_top([1.0, 0.5, 0.2], [0.0, 0.0, 1.0])
        traj = integrate(st, lambda y: heavy_top_rhs(y, prm), 1e-3, 1.0)
        rec = reconstruct_heavy_top(traj, prm)
        assert rec.rotations.shape == (501, 3, 3)
        assert rec.report["gamma_error"] <= 1e-5
        assert rec.report["verdict"] == "reconstructed"

    def test_initial_rotation(self):
        prm = HeavyTopParams()
        r0 = exp_so3([0.4, -0.3, 0.2])
        st = OdeState.heavy_top([0.3, -0.2, 1.0], r0[:, 2])
        traj = integrate(st, lambda y: heavy_top_rhs(y, prm), 1e-3, 0.5)
        rec = reconstruct_heavy_top(traj, prm, r0)
        np.testing.assert_allclose(rec.rotations[0], r0)
        assert rec.report["gamma_error"] <= 1e-5

    def test_wrong_kind(self):
        traj = integrate(OdeState.s1(1.0, 0.0, 0.0), s1_rhs, 0.1, 1.0)
        with pytest.raises(ValueError):
            reconstruct_heavy_top(traj, HeavyTopParams())

    def test_strided_trajectory_rejected(self):
        prm = HeavyTopParams()
        st = OdeState.heavy_top([1.0, 0.5, 0.2], [0.0, 0.0, 1.0])
        traj = integrate(st, lambda y: heavy_top_rhs(y, prm), 0.01, 1.0, stride=30)
        with pytest.raises(ValueError, match="等距"):
            reconstruct_heavy_top(traj, prm)


class TestReconstructStrand:
    def test_flat_fields(self):
        prm = StrandParams()
        snaps, dt, corner = _strand_snapshots(prm)
        rec = reconstruct_strand(snaps, prm, dt, r_corner=corner)
        assert rec.rotations.shape == (prm.grid_n, 5, 3, 3)
        assert rec.report["verdict"] == "reconstructed"
        assert rec.report["path_discrepancy"] <= 1e-4
        assert rec.report["gamma_error"] <= 1e-5
        assert len(rec.report["loops_tested"]) == 2

    def test_recovers_manufactured_rotation(self):
        prm = StrandParams()
        snaps, dt, corner = _strand_snapshots(prm)
        rotation = manufactured_rotation(0.1, prm.length)
        rec = reconstruct_strand(snaps, prm, dt, r_corner=corner)
        worst = max(
            np.max(np.abs(rec.rotations[i, j] - rotation(s, 0.3 + j * dt)))
            for i, s in enumerate(prm.s_grid)
            for j in range(len(snaps))
        )
        assert worst <= 1e-4
        assert rec.report["mu_s_error"] <= 1e-3

    def test_constant_half_turn_twist_obstructed(self):
        prm = StrandParams()
        n = prm.grid_n
        twist = StrandFields(np.tile(prm.inertia_J @ (0.5 * E3), (n, 1)), np.zeros((n, 3)), np.tile(E3, (n, 1)))
        with pytest.raises(ReconstructionRefused) as exc:
            reconstruct_strand([twist] * 4, prm, 0.2 * prm.ds)
        assert exc.value.report["verdict"] == "obstructed"
        assert exc.value.report["path_discrepancy"] <= 1e-10
        assert exc.value.report["s_loop_holonomy"] == pytest.approx(2 * np.sqrt(2), abs=1e-6)

    def test_constant_full_turn_twist_reconstructs(self):
        prm = StrandParams()
        n = prm.grid_n
        twist = StrandFields(np.tile(prm.inertia_J @ E3, (n, 1)), np.zeros((n, 3)), np.tile(E3, (n, 1)))
        rec = reconstruct_strand([twist] * 4, prm, 0.2 * prm.ds)
        assert rec.report["verdict"] == "reconstructed"
        assert rec.report["s_loop_holonomy"] <= 1e-8

    def test_injected_curvature_refused(self):
        prm = StrandParams()
        snaps, dt, corner = _strand_snapshots(prm)
        bump = 0.2 * np.outer(np.sin(prm.s_grid), [1.0, 0.0, 0.0])
        bent = [StrandFields(f.mu_s, f.mu_t + bump, f.gamma) for f in snaps]
        with pytest.raises(ReconstructionRefused) as exc:
            reconstruct_strand(bent, prm, dt, r_corner=corner)
        assert exc.value.report["verdict"] == "refused"
        assert exc.value.report["curvature_max"] > 1e-3

    def test_needs_two_levels(self):
        prm = StrandParams()
        snaps, dt, _ = _strand_snapshots(prm, levels=1)
        with pytest.raises(ValueError):
            reconstruct_strand(snaps, prm, dt)
