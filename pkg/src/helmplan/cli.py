"""Command-line interface: the full pipeline behind one binary.

Subcommands: trace (ray classification and the resolvent-norm heuristic),
plan (budgets, matrices, condition checks), graph (simple-path certification),
mesh (size field to mesh file), solve (one Helmholtz solve), experiment
(regime sweeps and the adaptive loop), report (plots and summary from sweep
CSV).

Exit codes: 0 success, 1 domain error (bad geometry/mesh/solve), 2 config
error (bad flags, missing or malformed files).  The only environment variable
honored is HELM_THREADS (worker/BLAS thread budget).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import FORMAT_VERSION

CONFIG_ERROR = 2
DOMAIN_ERROR = 1


class ConfigError(Exception):
    pass


def _threads() -> int:
    try:
        return max(int(os.environ.get("HELM_THREADS", "1")), 1)
    except ValueError:
        raise ConfigError("HELM_THREADS must be an integer")


def _load_scene(spec: str):
    from . import geometry

    builtin = {
        "two-wall": lambda: geometry.build_two_wall_scene(),
        "two-wall-shifted": lambda: geometry.build_two_wall_scene(shifted=True),
        "disk": geometry.build_disk_scene,
        "empty": geometry.build_empty_scene,
    }
    if spec in builtin:
        return builtin[spec]()
    path = Path(spec)
    if not path.exists():
        raise ConfigError(
            f"unknown scene {spec!r}: not a builtin "
            f"({', '.join(sorted(builtin))}) and no such file"
        )
    try:
        return geometry.scene_from_json(path.read_text())
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"malformed scene file {spec}: {exc}")


def _write_json(path: str | None, payload: dict) -> None:
    payload = {"format_version": FORMAT_VERSION, **payload}
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_trace(args) -> int:
    from . import billiards
    from .geometry import L_GAP

    scene = _load_scene(args.scene)
    delta = args.delta if args.delta is not None else L_GAP / 40.0
    grid = billiards.sample_phase_space(scene, delta, args.directions)
    billiards.fill_survival(scene, grid, t_max=args.t_max)
    profile = billiards.survival_volume(grid)
    regions = billiards.classify_regions(scene, grid, t_max=args.t_max)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "survival.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"format_version={FORMAT_VERSION}"])
        w.writerow(["x", "y", "xi_angle", "t"])
        angles = np.arctan2(grid.directions[:, 1], grid.directions[:, 0])
        for i, (x, y) in enumerate(grid.points):
            for j, ang in enumerate(angles):
                w.writerow([repr(float(x)), repr(float(y)),
                            repr(float(ang)), repr(float(grid.survival[i, j]))])
    regions_json = {
        "format_version": FORMAT_VERSION,
        "delta": delta,
        "K_hat": [[float(a), float(b)] for a, b in regions["K_hat"]],
        "V_hat": [[float(a), float(b)] for a, b in regions["V_hat"]],
    }
    (out / "regions.json").write_text(
        json.dumps(regions_json, indent=2, sort_keys=True) + "\n"
    )
    rho = {}
    for k in args.k:
        rho[repr(float(k))] = billiards.estimate_rho(profile, k)
    _write_json(str(out / "rho.json"), {"rho": rho, "t_max": args.t_max})
    print(f"wrote {out}/survival.csv, regions.json, rho.json")
    return 0


def _cmd_plan(args) -> int:
    from . import planner
    from .experiments import wavenumber

    scene = _load_scene(args.scene)
    k = wavenumber(args.n) if args.n is not None else args.k
    if k is None:
        raise ConfigError("one of --k or --n is required")
    rho_src = args.rho
    try:
        rho_src = float(rho_src)
    except ValueError:
        pass
    rho = planner.resolve_rho(rho_src, k)
    spec = planner.RegimeSpec(planner.Regime(args.regime), args.p, args.c)
    budget = planner.mesh_budgets(spec, k, rho)
    mats = planner.build_matrices(budget, k, rho, args.p)
    payload = {
        "k": k,
        "rho": rho,
        "regime": args.regime,
        "p": args.p,
        "c": args.c,
        "budget": budget.as_dict(),
        "clamped": budget.clamped,
        "threshold_sum": planner.threshold_sum(budget, k, rho, args.p),
        "conditions": planner.check_conditions(budget, k, rho, args.p, args.c),
        "dof_estimate": planner.dof_estimate(scene, budget, args.p),
        "matrices": {
            "C": mats.C.tolist(),
            "Tscr": mats.Tscr.tolist(),
            "M": mats.M.tolist(),
            "M_RE": mats.M_RE.tolist(),
        },
        "predicted_bound": planner.predicted_bound(spec, k, rho).tolist(),
    }
    _write_json(args.out, payload)
    if args.size_field_csv:
        fld = planner.size_field(scene, budget)
        xs, ys, vals = fld.sample_grid()
        with open(args.size_field_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"format_version={FORMAT_VERSION}"])
            w.writerow(["x", "y", "h"])
            for i, x in enumerate(xs):
                for j, y in enumerate(ys):
                    w.writerow([repr(float(x)), repr(float(y)),
                                repr(float(vals[i, j]))])
    return 0


def _read_matrix_csv(path: str) -> np.ndarray:
    try:
        rows = []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].startswith("format_version"):
                    continue
                rows.append([float(v) for v in row])
        mat = np.array(rows)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read matrix from {path}: {exc}")
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ConfigError("matrix must be square")
    return mat


def _cmd_graph(args) -> int:
    from . import graph_paths

    W = _read_matrix_csv(args.matrix)
    if args.action == "certify":
        result = graph_paths.certify_bound(
            graph_paths.WeightedDigraph(W), n_terms=args.terms, tol_abs=args.tol
        )
        _write_json(args.out, result.to_dict())
        return 0
    raise ConfigError(f"unknown graph action {args.action!r}")


def _cmd_mesh(args) -> int:
    from . import meshing, planner
    from .experiments import wavenumber

    scene = _load_scene(args.scene)
    k = wavenumber(args.n) if args.n is not None else args.k
    if k is None:
        raise ConfigError("one of --k or --n is required")
    rho_src = args.rho
    try:
        rho_src = float(rho_src)
    except ValueError:
        pass
    rho = planner.resolve_rho(rho_src, k)
    spec = planner.RegimeSpec(planner.Regime(args.regime), args.p, args.c)
    budget = planner.mesh_budgets(spec, k, rho)
    fld = planner.size_field(scene, budget)
    mesh = meshing.generate_mesh(scene, fld, seed=args.seed)
    meshing.write_mesh(mesh, args.out)
    print(f"wrote {args.out}: {len(mesh.nodes)} nodes, "
          f"{len(mesh.triangles)} triangles")
    return 0


def _cmd_solve(args) -> int:
    from . import meshing, pml
    from .experiments import BeamSpec, beam_in, gaussian_beam
    from .fem import DirichletData, FESpace, assemble, norm, solve

    scene = _load_scene(args.scene)
    mesh = meshing.read_mesh(args.mesh)
    k = args.k
    profile = pml.PMLProfile(
        scene.R_pml_minus, scene.R_tr,
        pml.Formulation(args.formulation), amplitude=args.pml_amplitude,
    )

    def coeff_fn(pts):
        c = pml.coefficients(profile, pts)
        return c.A, c.b, c.n

    if args.dump_pml:
        radii = np.linspace(0.05 * scene.R_tr, scene.R_tr * (1 - 1e-9), 120)
        angles = np.linspace(0.0, 2 * math.pi, 64, endpoint=False)
        rr, aa = np.meshgrid(radii, angles, indexing="ij")
        pts = np.column_stack([(rr * np.cos(aa)).ravel(), (rr * np.sin(aa)).ravel()])
        coeffs = pml.coefficients(profile, pts)
        with open(args.dump_pml, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"format_version={FORMAT_VERSION}"])
            w.writerow(["x", "y", "ReA11", "ImA11", "ReA12", "ImA12",
                        "ReA22", "ImA22", "Reb1", "Imb1", "Reb2", "Imb2",
                        "Ren", "Imn"])
            for p_, A, b, n_ in zip(pts, coeffs.A, coeffs.b, coeffs.n):
                w.writerow([repr(float(v)) for v in (
                    p_[0], p_[1], A[0, 0].real, A[0, 0].imag,
                    A[0, 1].real, A[0, 1].imag, A[1, 1].real, A[1, 1].imag,
                    b[0].real, b[0].imag, b[1].real, b[1].imag,
                    n_.real, n_.imag)])

    source = gaussian_beam(beam_in(k)) if args.source == "f_in" else None
    if args.source not in ("f_in", "none"):
        raise ConfigError("source must be 'f_in' or 'none'")
    space = FESpace(mesh, args.p)
    mat, rhs = assemble(space, k, coefficient_fn=coeff_fn, source_fn=source)
    u = solve(space, mat, rhs, DirichletData({"obstacle": 0.0, "truncation": 0.0}))
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"format_version={FORMAT_VERSION}"])
        w.writerow(["x", "y", "Re_u", "Im_u"])
        vals = u[: len(mesh.nodes)]
        for (x, y), v in zip(mesh.nodes, vals):
            w.writerow([repr(float(x)), repr(float(y)),
                        repr(float(v.real)), repr(float(v.imag))])
    print(f"solved: {space.n_dofs} DoFs, |u|_H1k = "
          f"{norm(space, u, k, 'h1k'):.6g}; wrote {args.out}")
    return 0


_CONFIG_KEYS = {
    "format_version", "scene", "regimes", "n_range", "n_list", "sources",
    "p", "c", "rho_source", "seed",
}


def _cmd_experiment(args) -> int:
    from .experiments import (
        DEFAULT_EXPERIMENT_C, emit_report, run_regime_sweep, wavenumber,
    )

    try:
        cfg = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}")
    unknown = set(cfg) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    scene = _load_scene(cfg.get("scene", "two-wall"))
    if "n_list" in cfg:
        ns = list(cfg["n_list"])
    else:
        lo, hi = cfg.get("n_range", [6, 14])
        ns = list(range(int(lo), int(hi) + 1))
    ks = [wavenumber(n) for n in ns]
    cells = run_regime_sweep(
        scene,
        cfg.get("regimes", ["U1", "RE"]),
        ks,
        sources=tuple(cfg.get("sources", ["f_in"])),
        p=int(cfg.get("p", 2)),
        c=float(cfg.get("c", DEFAULT_EXPERIMENT_C)),
        rho_source=cfg.get("rho_source", "conjectured"),
        seed=int(cfg.get("seed", 0)),
        progress=(lambda cell: print(
            f"{cell.regime} n={cell.n} dofs={cell.n_dofs} "
            f"failure={cell.failure}", flush=True)) if args.verbose else None,
    )
    files = emit_report(cells, args.out)
    print("\n".join(files))
    if any(c.failure for c in cells):
        return DOMAIN_ERROR
    return 0


def _cmd_report(args) -> int:
    from .experiments import SweepCell, emit_report

    path = Path(args.results) / "sweep_relative_errors.csv"
    qo_path = Path(args.results) / "sweep_quasioptimality.csv"
    if not path.exists() or not qo_path.exists():
        raise ConfigError(f"no sweep CSVs found under {args.results}")

    def _rows(p_):
        with open(p_, newline="") as fh:
            rows = list(csv.reader(fh))
        return rows[1], rows[2:]

    header, rows = _rows(path)
    qo_header, qo_rows = _rows(qo_path)
    cells = []
    qo_by_key = {}
    for row in qo_rows:
        rec = dict(zip(qo_header, row))
        qo_by_key[(rec["source"], rec["regime"], rec["k"])] = rec
    for row in rows:
        rec = dict(zip(header, row))
        cell = SweepCell(rec["regime"], float(rec["k"]), int(rec["n"]),
                         rec["source"])
        cell.n_dofs = int(rec["dofs"]) if rec["dofs"] else 0
        cell.ref_dofs = int(rec["ref_dofs"]) if rec["ref_dofs"] else 0
        cell.ref_norm = float(rec["ref_norm"]) if rec["ref_norm"] else 0.0
        cell.failure = rec["failure"] or None
        for tag, col in (("global", "rel_global"), ("K", "rel_K"),
                         ("V", "rel_V"), ("I", "rel_I")):
            if rec.get(col):
                cell.rel[tag] = float(rec[col])
        qrec = qo_by_key.get((rec["source"], rec["regime"], rec["k"]), {})
        for tag, col in (("global", "qo_global"), ("K", "qo_K"),
                         ("V", "qo_V"), ("I", "qo_I")):
            if qrec.get(col):
                cell.qo[tag] = float(qrec[col])
        cells.append(cell)
    files = emit_report(cells, args.out)
    print("\n".join(files))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="helmplan",
        description="Planning and verification toolkit for high-frequency "
                    "Helmholtz FEM on non-uniform meshes.",
    )
    sub = ap.add_subparsers(dest="command")

    t = sub.add_parser("trace", help="billiard ray classification and the "
                                     "resolvent-norm heuristic")
    t.add_argument("--scene", default="two-wall", help="builtin name or JSON path")
    t.add_argument("--delta", type=float, default=None,
                   help="phase-space grid spacing (default L_gap/40)")
    t.add_argument("--directions", type=int, default=128)
    t.add_argument("--t-max", type=float, default=50.0)
    t.add_argument("--k", type=float, nargs="*", default=[],
                   help="wavenumbers at which to report rho")
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=_cmd_trace)

    p = sub.add_parser("plan", help="mesh budgets, matrices and condition checks")
    p.add_argument("--scene", default="two-wall")
    p.add_argument("--regime", required=True,
                   choices=["U1", "QO", "QOaway", "U2", "RE", "REaway"])
    p.add_argument("--k", type=float, default=None)
    p.add_argument("--n", type=int, default=None,
                   help="cavity mode index (k = n pi / L_gap)")
    p.add_argument("--p", type=int, default=2)
    p.add_argument("--c", type=float, default=1.0, help="threshold constant")
    p.add_argument("--rho", default="conjectured",
                   help="'conjectured', 'measured' or a number")
    p.add_argument("--out", default="-", help="JSON output path or - for stdout")
    p.add_argument("--size-field-csv", default=None,
                   help="also export the graded size field as CSV")
    p.set_defaults(func=_cmd_plan)

    g = sub.add_parser("graph", help="weighted-digraph simple-path certification")
    g.add_argument("action", choices=["certify"])
    g.add_argument("--matrix", required=True, help="CSV adjacency weights")
    g.add_argument("--terms", type=int, default=200)
    g.add_argument("--tol", type=float, default=1e-9)
    g.add_argument("--out", default="-")
    g.set_defaults(func=_cmd_graph)

    m = sub.add_parser("mesh", help="generate a budgeted mesh file")
    m.add_argument("--scene", default="two-wall")
    m.add_argument("--regime", required=True,
                   choices=["U1", "QO", "QOaway", "U2", "RE", "REaway"])
    m.add_argument("--k", type=float, default=None)
    m.add_argument("--n", type=int, default=None)
    m.add_argument("--p", type=int, default=2)
    m.add_argument("--c", type=float, default=1.0)
    m.add_argument("--rho", default="conjectured")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True, help="mesh file path")
    m.set_defaults(func=_cmd_mesh)

    s = sub.add_parser("solve", help="one Helmholtz PML solve on a mesh file")
    s.add_argument("--scene", default="two-wall")
    s.add_argument("--mesh", required=True)
    s.add_argument("--k", type=float, required=True)
    s.add_argument("--p", type=int, default=2)
    s.add_argument("--source", default="f_in", help="'f_in' or 'none'")
    s.add_argument("--formulation", default="divergence",
                   choices=["divergence", "unmultiplied"])
    s.add_argument("--pml-amplitude", type=float, default=2.0)
    s.add_argument("--dump-pml", default=None,
                   help="debug: dump PML coefficients as CSV over a polar grid")
    s.add_argument("--out", required=True, help="solution CSV (x y Re Im at nodes)")
    s.set_defaults(func=_cmd_solve)

    e = sub.add_parser("experiment", help="regime sweeps from a JSON config")
    e.add_argument("action", choices=["run"])
    e.add_argument("--config", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--verbose", action="store_true")
    e.set_defaults(func=_cmd_experiment)

    r = sub.add_parser("report", help="re-emit plots and summary from sweep CSVs")
    r.add_argument("--results", required=True, help="directory with sweep CSVs")
    r.add_argument("--out", required=True)
    r.set_defaults(func=_cmd_report)
    return ap


def main(argv=None) -> int:
    budget = os.environ.get("HELM_THREADS")
    if budget is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, budget)
    ap = build_parser()
    args = ap.parse_args(argv)
    if not getattr(args, "command", None):
        ap.print_usage()
        return CONFIG_ERROR
    try:
        _threads()
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return CONFIG_ERROR
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DOMAIN_ERROR


if __name__ == "__main__":
    sys.exit(main())
