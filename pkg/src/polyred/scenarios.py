"""场景运行器：按配置积分、检验界限，写出 CSV 时间序列、诊断 JSON 与运行清单"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from polyred import __version__
from polyred.config import ScenarioConfig, Scenario, as_matrix
from polyred.diagnostics import (
    CheckTable,
    affine_invariant,
    conservation_monitor,
    heavy_top_invariant,
    invariance_check,
    s1_invariant,
    strand_invariant,
    write_report,
)
from polyred.dynamics_ode import (
    AffineParams,
    HeavyTopParams,
    LinearPotential,
    OdeState,
    QuadraticPotential,
    StateKind,
    affine_energy,
    affine_functionals,
    affine_mu_bar,
    affine_rhs,
    heavy_top_energy,
    heavy_top_functionals,
    heavy_top_rhs,
    integrate,
    reduced_point,
    s1_energy,
    s1_monodromy,
    s1_periodic_solve,
    s1_periodicity_defect,
    s1_rhs,
    time_derivative,
    trajectory_residual,
)
from polyred.homogeneous import ConfigKind
from polyred.lie_core import rotation_about_e3, so3_algebra
from polyred.reconstruction import (
    ReconstructionRefused,
    reconstruct_heavy_top,
    reconstruct_strand,
    s1_reconstruction_gate,
)
from polyred.reduced_bracket import UnreducedPoint, bracket_signs, psi_project, right_translate
from polyred.strand_pde import (
    StrandFields,
    StrandParams,
    evolve_strand,
    manufactured_fields,
    manufactured_rotation,
    strand_residuals,
    uniform_spin_rotation,
)
from polyred.suites import run_suite

logger = logging.getLogger(__name__)

MONODROMY_TOL = 1e-8
K_TRANSLATION_TOL = 1e-10
K_TRANSLATION_ANGLE = 0.7


@dataclass
class ScenarioOutput:
    columns: list[str] | None = None
    rows: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


@dataclass
class RunResult:
    scenario: Scenario
    output_dir: Path
    table: CheckTable
    diagnostics: dict
    artifacts: dict[str, Path] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.table.failed == 0


def _stride_index(n: int, stride: int) -> np.ndarray:
    idx = np.arange(0, n, stride)
    return idx if idx[-1] == n - 1 else np.append(idx, n - 1)


# ── 重陀螺 ──

def heavy_top_params(cfg: ScenarioConfig) -> HeavyTopParams:
    ht = cfg.heavy_top
    return HeavyTopParams(as_matrix(ht.inertia), ht.mg, np.asarray(ht.chi, dtype=float))


def k_translation_error(rotations: np.ndarray, mu: np.ndarray, angle: float = K_TRANSLATION_ANGLE) -> float:
    """右乘 k ∈ SO(2)_{e3} 后投影 (μ, Γ) 的最大变化"""
    algebra = so3_algebra()
    k = rotation_about_e3(angle)
    worst = 0.0
    for r, m in zip(rotations, mu):
        u = UnreducedPoint(r, m @ algebra.adjoint_matrix(r), ConfigKind.SPHERE)
        p0, p1 = psi_project(u, algebra), psi_project(right_translate(u, k, algebra), algebra)
        worst = max(worst, float(np.max(np.abs(p0.mu - p1.mu))), float(np.max(np.abs(p0.s_bar - p1.s_bar))))
    return worst


def run_heavy_top(cfg: ScenarioConfig, table: CheckTable) -> ScenarioOutput:
    prm = heavy_top_params(cfg)
    nm, tol = cfg.numerics, cfg.tolerances
    state = OdeState.heavy_top(cfg.heavy_top.mu0, cfg.heavy_top.gamma0)
    traj = integrate(state, lambda y: heavy_top_rhs(y, prm), nm.dt, nm.t_final)
    log = conservation_monitor(traj, heavy_top_functionals(prm))
    drifts = log.drifts
    table.check("heavy_top.drift.h", drifts["h"], tol.energy)
    table.check("heavy_top.drift.mu_dot_gamma", drifts["mu_dot_gamma"], tol.casimir)
    table.check("heavy_top.drift.gamma_norm2", drifts["gamma_norm2"], tol.casimir)

    mom, par = trajectory_residual(traj, heavy_top_energy(prm))
    table.check("heavy_top.residual.momentum", mom, tol.residual)
    table.check("heavy_top.residual.parallel", par, tol.residual)

    rec = reconstruct_heavy_top(traj, prm)
    table.check("heavy_top.reconstruction.gamma", rec.report["gamma_error"], tol.transport)
    pick = np.arange(0, rec.rotations.shape[0], max(1, rec.rotations.shape[0] // 20))
    k_err = k_translation_error(rec.rotations[pick], traj.states[2 * pick, :3])
    table.check("heavy_top.reconstruction.k_translation", k_err, K_TRANSLATION_TOL)

    inv = invariance_check(heavy_top_invariant(prm), samples=nm.samples, rng=np.random.default_rng(cfg.seed))
    table.check("heavy_top.invariance", inv.max_residual, tol.residual)

    idx = _stride_index(len(traj), cfg.outputs.stride)
    names, values = log.columns()
    rows = np.column_stack([traj.to_rows(cfg.outputs.stride), values[idx]])
    return ScenarioOutput(
        ["t"] + OdeState.columns(StateKind.HEAVY_TOP) + names,
        rows,
        {
            "conservation": log.to_dict(),
            "residuals": {"momentum": mom, "parallel": par},
            "reconstruction": dict(rec.report, k_translation_error=k_err),
            "invariance": inv.to_dict(),
        },
    )


# ── 仿射理论 ──

def affine_params(cfg: ScenarioConfig) -> AffineParams:
    af = cfg.affine
    if af.potential == "quadratic":
        potential = QuadraticPotential(as_matrix(af.stiffness))
    else:
        potential = LinearPotential(af.g)
    return AffineParams(as_matrix(af.inertia), as_matrix(af.mass_inv), potential)


def mu_bar_residual(states: np.ndarray, dt: float, prm: AffineParams) -> float:
    """max ‖dμ̄/dt − μ̄ × 𝕀⁻¹μ‖（五点差分，内部样本）"""
    mb = np.array([affine_mu_bar(v) for v in states])
    d = time_derivative(mb, dt)
    a = states[2:-2, :3] @ prm.inertia_inv.T
    return float(np.max(np.linalg.norm(d - np.cross(mb[2:-2], a), axis=1)))


def run_affine(cfg: ScenarioConfig, table: CheckTable) -> ScenarioOutput:
    prm = affine_params(cfg)
    nm, tol, af = cfg.numerics, cfg.tolerances, cfg.affine
    state = OdeState.affine(af.mu0, af.omega0, af.s0)
    traj = integrate(state, lambda y: affine_rhs(y, prm), nm.dt, nm.t_final)
    log = conservation_monitor(traj, affine_functionals(prm))
    drifts = log.drifts
    table.check("affine.drift.h", drifts["h"], tol.energy)
    table.check("affine.drift.mu_bar_norm", drifts["mu_bar_norm"], tol.mu_bar)
    mb_res = mu_bar_residual(traj.states, nm.dt, prm)
    table.check("affine.residual.mu_bar", mb_res, tol.residual)
    mom, par = trajectory_residual(traj, affine_energy(prm))
    table.check("affine.residual.momentum", mom, tol.residual)
    table.check("affine.residual.parallel", par, tol.residual)
    inv = invariance_check(affine_invariant(prm), samples=nm.samples, rng=np.random.default_rng(cfg.seed))
    table.check("affine.invariance", inv.max_residual, tol.residual)

    idx = _stride_index(len(traj), cfg.outputs.stride)
    names, values = log.columns()
    return ScenarioOutput(
        ["t"] + OdeState.columns(StateKind.AFFINE) + names,
        np.column_stack([traj.to_rows(cfg.outputs.stride), values[idx]]),
        {
            "potential": af.potential,
            "conservation": log.to_dict(),
            "residuals": {"mu_bar": mb_res, "momentum": mom, "parallel": par},
            "invariance": inv.to_dict(),
        },
    )


# ── S¹ 例子 ──

def run_s1(cfg: ScenarioConfig, table: CheckTable) -> ScenarioOutput:
    nm, tol, s1 = cfg.numerics, cfg.tolerances, cfg.s1
    family = s1_periodic_solve(nm.dt)
    table.flag(
        "s1.periodic_family",
        family.unique and family.mu_y == 0.0 and family.y == 0.0,
        "(μ0, 0, 0)" if family.unique else "周期解不唯一",
    )
    numeric, closed = s1_monodromy(nm.dt)
    eig_num = np.sort(np.real(np.linalg.eigvals(numeric)))
    eig_ref = np.sort(np.real(np.linalg.eigvals(closed)))
    table.check("s1.monodromy_eigenvalues", float(np.max(np.abs(eig_num - eig_ref) / np.abs(eig_ref))), MONODROMY_TOL)

    member = OdeState.s1(s1.mu0, family.mu_y, family.y)
    defect = s1_periodicity_defect(member, nm.dt)
    table.check("s1.periodicity_defect", defect, tol.residual)

    steps = int(round(2 * np.pi / nm.dt))
    start = OdeState.s1(s1.mu0, s1.perturbation, s1.perturbation)
    traj = integrate(start, s1_rhs, 2 * np.pi / steps, 2 * np.pi)
    h = s1_energy()
    log = conservation_monitor(traj, {"h": lambda v: h(_s1_point(v))})
    table.check("s1.drift.h", log.drifts["h"], tol.energy)

    gate = s1_reconstruction_gate(s1.mu0, tol.holonomy)
    table.flag("s1.holonomy_gate", gate["trivial"] == (abs(s1.mu0) <= tol.holonomy), gate["verdict"])
    inv = invariance_check(s1_invariant(), samples=nm.samples, rng=np.random.default_rng(cfg.seed))
    table.check("s1.invariance", inv.max_residual, tol.residual)

    idx = _stride_index(len(traj), cfg.outputs.stride)
    names, values = log.columns()
    return ScenarioOutput(
        ["t"] + OdeState.columns(StateKind.S1) + names,
        np.column_stack([traj.to_rows(cfg.outputs.stride), values[idx]]),
        {
            "periodic_family": family.to_dict(),
            "monodromy": {"numeric": numeric, "closed_form": closed},
            "periodicity_defect": defect,
            "conservation": log.to_dict(),
            "reconstruction": gate,
            "invariance": inv.to_dict(),
        },
    )


def _s1_point(v: np.ndarray):
    return reduced_point(StateKind.S1, v)


# ── SO(3)-strand ──

def strand_params(cfg: ScenarioConfig) -> StrandParams:
    st, nm = cfg.strand, cfg.numerics
    return StrandParams(
        inertia_I=as_matrix(st.inertia_I),
        inertia_J=as_matrix(st.inertia_J),
        mg=st.mg,
        chi=np.asarray(st.chi, dtype=float),
        length=nm.length,
        grid_n=nm.grid_n,
        dt=nm.dt,
    )


def run_strand(cfg: ScenarioConfig, table: CheckTable) -> ScenarioOutput:
    prm = strand_params(cfg)
    tol = cfg.tolerances
    if cfg.strand.manufactured:
        rotation = manufactured_rotation(cfg.strand.amplitude, prm.length)
    else:
        rotation = uniform_spin_rotation(cfg.strand.amplitude)
    f0 = manufactured_fields(rotation, prm, 0.0)
    eps0 = float(np.max(strand_residuals(f0, f0, prm, prm.time_step).parallel_s))

    run = evolve_strand(f0, prm, cfg.numerics.t_final)
    worst = {"lie_poisson": 0.0, "parallel_s": 0.0, "parallel_t": 0.0, "curvature": 0.0}
    for a, b in zip(run.snapshots[:-1], run.snapshots[1:]):
        for name, value in strand_residuals(a, b, prm, run.dt).maxima().items():
            worst[name] = max(worst[name], value)
    table.check("strand.residual.lie_poisson", worst["lie_poisson"], tol.curvature)
    table.check("strand.residual.parallel_t", worst["parallel_t"], tol.curvature)
    table.check("strand.residual.curvature", worst["curvature"], tol.curvature)
    table.check("strand.parallel_s_propagation", worst["parallel_s"], 10 * eps0 + prm.ds**2)
    table.check("strand.gamma_norm_drift", run.final.gamma_norm_drift(), tol.casimir)

    try:
        rec = reconstruct_strand(run.snapshots, prm, run.dt, rotation(0.0, 0.0), tolerance=tol.curvature)
        reconstruction = rec.report
        table.check("strand.reconstruction.path_discrepancy", rec.report["path_discrepancy"], tol.curvature)
    except ReconstructionRefused as e:
        reconstruction = e.report
        table.flag("strand.reconstruction", False, str(e))

    inv = invariance_check(strand_invariant(prm), samples=cfg.numerics.samples, rng=np.random.default_rng(cfg.seed))
    table.check("strand.invariance", inv.max_residual, tol.residual)

    rows = []
    for k in _stride_index(len(run.snapshots), cfg.outputs.stride):
        f: StrandFields = run.snapshots[k]
        rows.append(np.column_stack([np.full(prm.grid_n, run.times[k]), f.rows(prm.s_grid)]))
    return ScenarioOutput(
        ["t"] + StrandFields.COLUMNS,
        np.vstack(rows),
        {
            "cfl": {"dt": run.dt, "dt_max": prm.dt_max, "wave_speed": prm.wave_speed},
            "residuals": worst,
            "initial_parallel_s": eps0,
            "reconstruction": reconstruction,
            "invariance": inv.to_dict(),
        },
    )


# ── 检验套件 ──

def run_checks(cfg: ScenarioConfig, table: CheckTable) -> ScenarioOutput:
    for name in cfg.suites:
        table.extend(run_suite(name, seed=cfg.seed, samples=cfg.numerics.samples))
    return ScenarioOutput(diagnostics={"suites": list(cfg.suites)})


RUNNERS: dict[Scenario, Callable[[ScenarioConfig, CheckTable], ScenarioOutput]] = {
    Scenario.HEAVY_TOP: run_heavy_top,
    Scenario.AFFINE: run_affine,
    Scenario.S1_EXAMPLE: run_s1,
    Scenario.STRAND: run_strand,
    Scenario.CHECKS: run_checks,
}


# ── 产物 ──

def write_csv(path: Path, columns: list[str], rows: np.ndarray) -> str:
    """'.' 小数点、',' 分隔、表头一行、17 位有效数字；返回文件的 sha256"""
    np.savetxt(path, rows, fmt="%.17g", delimiter=",", header=",".join(columns), comments="")
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_scenario(cfg: ScenarioConfig, out_dir: str | Path) -> RunResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    logger.info("运行场景 %s (seed=%d) → %s", cfg.scenario.value, cfg.seed, out_dir)
    table = CheckTable(cfg.scenario.value)
    output = RUNNERS[cfg.scenario](cfg, table)

    artifacts: dict[str, Path] = {}
    csv_sha = None
    if output.rows is not None:
        artifacts["csv"] = out_dir / cfg.csv_name
        csv_sha = write_csv(artifacts["csv"], output.columns, output.rows)

    diagnostics = {
        "scenario": cfg.scenario.value,
        "seed": cfg.seed,
        "signs": bracket_signs(),
        "checks": table.to_dict(),
        "violations": table.violations(),
        **output.diagnostics,
    }
    artifacts["report"] = write_report(out_dir / cfg.outputs.report, diagnostics)
    manifest = {
        "package": "polyred",
        "version": __version__,
        "config": cfg.to_dict(),
        "artifacts": {k: p.name for k, p in artifacts.items()},
        "csv_sha256": csv_sha,
    }
    artifacts["manifest"] = write_report(out_dir / cfg.outputs.manifest, manifest)
    for kind, path in artifacts.items():
        logger.info("产物 %s: %s", kind, path)
    return RunResult(cfg.scenario, out_dir, table, diagnostics, artifacts)
