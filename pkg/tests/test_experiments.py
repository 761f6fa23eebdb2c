import json
import math

import numpy as np
import pytest

from helmplan.experiments import (
    BeamSpec,
    HK_CAP,
    PML_HK,
    SweepCell,
    adaptive_refine,
    beam_in,
    beam_out,
    capped_budget,
    emit_report,
    fit_rate,
    gaussian_beam,
    wavenumber,
)
from helmplan.geometry import L_GAP, build_two_wall_scene
from helmplan.planner import Regime, RegimeSpec, mesh_budgets


def test_wavenumber_ladder():
    assert wavenumber(6) == pytest.approx(6 * math.pi / L_GAP)
    with pytest.raises(ValueError):
        wavenumber(0)


def test_beam_spec_validation():
    with pytest.raises(ValueError):
        BeamSpec((0.0, 0.0), (1.0, 1.0), 10.0)
    with pytest.raises(ValueError):
        BeamSpec((0.0, 0.0), (1.0, 0.0), -1.0)


def test_gaussian_beam_unit_norm():
    """The beam is normalized to unit L2 norm; check on an independent grid."""
    spec = beam_in(20.0)
    f = gaussian_beam(spec)
    m = 1201
    step = 2 * spec.r_bump / m
    ax = -spec.r_bump + step * (np.arange(m) + 0.5)
    gx, gy = np.meshgrid(ax, ax, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    nrm = math.sqrt(np.sum(np.abs(f(pts)) ** 2) * step * step)
    assert nrm == pytest.approx(1.0, abs=1e-4)


def test_gaussian_beam_compact_support():
    spec = beam_in(20.0)
    f = gaussian_beam(spec)
    pts = np.array([[spec.r_bump + 1e-6, 0.0], [0.0, -spec.r_bump - 0.1], [2.0, 2.0]])
    assert np.all(f(pts) == 0.0)
    assert abs(f(np.array([[0.0, 0.0]]))[0]) > 0.0


def test_beam_out_hits_right_wall_face():
    scene = build_two_wall_scene()
    k = wavenumber(8)
    spec = beam_out(scene, k)
    right = max(scene.obstacles, key=lambda o: o.center[0])
    x_face = right.center[0] - right.half_width
    # the beam's central ray reaches the inner face of the right wall
    x0 = np.asarray(spec.x0)
    xi = np.asarray(spec.xi0)
    t = (x_face - x0[0]) / xi[0]
    assert t > 0
    y_hit = x0[1] + t * xi[1]
    assert abs(y_hit) < right.half_height
    # the launch point lies outside the cavity strip between the walls
    assert abs(x0[0]) > L_GAP / 2


def test_fit_rate():
    ks = [1.0, 2.0, 4.0, 8.0]
    slope, r2 = fit_rate(ks, [k**-2.0 for k in ks])
    assert slope == pytest.approx(-2.0)
    assert r2 == pytest.approx(1.0)
    with pytest.raises(ValueError):
        fit_rate([1.0, 2.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        fit_rate(ks, [1.0, -1.0, 1.0, 1.0])


def test_capped_budget_respects_caps():
    k = wavenumber(6)
    rho = k * k
    spec = RegimeSpec(Regime.U1, 2, 1e9)   # huge c: everything hits the caps
    b = capped_budget(spec, k, rho)
    assert b.h_K == b.h_V == b.h_I == pytest.approx(HK_CAP / k)
    assert b.h_P == pytest.approx(PML_HK / k)
    assert b.clamped
    # small c: the budget is already finer than the caps and is unchanged
    spec = RegimeSpec(Regime.U1, 2, 1.0)
    raw = mesh_budgets(spec, k, rho)
    b = capped_budget(spec, k, rho)
    assert np.allclose(b.as_array()[:3], raw.as_array()[:3])
    assert b.h_P <= PML_HK / k


def test_capped_budget_pml_independent():
    """Capping the PML band must not drag the physical regions finer."""
    k = wavenumber(6)
    spec = RegimeSpec(Regime.RE, 2, 1e9)
    b = capped_budget(spec, k, k * k)
    assert b.h_I == pytest.approx(HK_CAP / k)
    assert b.h_P == pytest.approx(PML_HK / k)
    assert b.h_P < b.h_I   # fine PML, coarse physical mesh: allowed


def _fake_cells():
    cells = []
    for regime, base in (("U1", 0.03), ("RE", 0.05)):
        for n in (6, 10, 14):
            k = wavenumber(n)
            c = SweepCell(regime, k, n, "f_in", n_dofs=1000 * n,
                          ref_dofs=5000 * n, ref_norm=1.0)
            c.rel = {"global": base * (k / 20) ** -0.2,
                     "K": 0.5 * (k / 20) ** -2.0,
                     "V": 0.01, "I": 0.005}
            c.qo = {"global": 2.5, "K": 2.0, "V": 1.5, "I": 1.2}
            c.err = dict(c.rel)
            c.best = {t: v / 2 for t, v in c.rel.items()}
            cells.append(c)
    return cells


def test_emit_report_files_and_summary(tmp_path):
    files = emit_report(_fake_cells(), tmp_path)
    names = {str(f).rsplit("/", 1)[-1] for f in files}
    assert names == {
        "sweep_relative_errors.csv",
        "sweep_quasioptimality.csv",
        "relative_error_global.svg",
        "relative_error_cavity.svg",
        "quasioptimality_global.svg",
        "summary.json",
    }
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["format_version"] == 1
    assert summary["checks"]["U1_global_qo_max"] == pytest.approx(2.5)
    assert summary["checks"]["U1_cavity_relerr_slope"] == pytest.approx(-2.0, abs=1e-9)
    assert summary["checks"]["RE_global_relerr_slope"] == pytest.approx(-0.2, abs=1e-9)
    text = (tmp_path / "sweep_relative_errors.csv").read_text()
    assert text.startswith("format_version=1")
    assert len(text.splitlines()) == 2 + 6


def test_emit_report_deterministic(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    emit_report(_fake_cells(), a)
    emit_report(_fake_cells(), b)
    for name in ("sweep_relative_errors.csv", "summary.json",
                 "relative_error_global.svg"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_emit_report_empty_rejected(tmp_path):
    with pytest.raises(ValueError):
        emit_report([], tmp_path)


def test_adaptive_refine_trivial_tolerance():
    """An infinite tolerance converges in one iteration without refining."""
    scene = build_two_wall_scene()
    k = wavenumber(6)
    f = gaussian_beam(beam_in(k))
    steps = adaptive_refine(scene, f, k, "K", tol=math.inf, max_iters=3)
    assert len(steps) == 1
    assert steps[0].converged
    assert steps[0].n_dofs > 0
    assert steps[0].region_norms["K"] > 0


def test_adaptive_refine_validates_region():
    scene = build_two_wall_scene()
    with pytest.raises(ValueError):
        adaptive_refine(scene, lambda pts: np.zeros(len(pts)), 10.0, "Q", tol=1.0)
