"""检验套件测试 — 每个套件在缺省种子下全部通过"""

from __future__ import annotations

import pytest

from polyred.suites import SUITES, centered_diff_error, rk4_rigid_body_error, run_suite


class TestSuites:
    def test_registry(self):
        assert set(SUITES) == {"bracket_equivalence", "z_derivative", "invariance", "convergence"}

    def test_unknown(self):
        with pytest.raises(KeyError):
            run_suite("fuzz")

    def test_z_derivative(self):
        table = run_suite("z_derivative")
        assert table.failed == 0
        assert table.total == 3

    def test_invariance_flags_broken_control(self):
        table = run_suite("invariance", samples=3)
        assert table.failed == 0
        assert any("broken" in r.name for r in table.results)

    @pytest.mark.slow
    def test_bracket_equivalence(self):
        table = run_suite("bracket_equivalence", samples=5)
        assert table.failed == 0, table.render()

    @pytest.mark.slow
    def test_convergence(self):
        table = run_suite("convergence")
        assert table.failed == 0, table.render()


class TestErrorRunners:
    def test_rk4_error_shrinks(self):
        assert rk4_rigid_body_error(0.05) < rk4_rigid_body_error(0.1) / 10

    def test_centered_diff_error_shrinks(self):
        assert centered_diff_error(0.05) < centered_diff_error(0.1) / 3
