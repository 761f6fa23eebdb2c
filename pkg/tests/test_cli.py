import csv
import json

import numpy as np
import pytest

from helmplan.cli import main
from helmplan.geometry import build_disk_scene, scene_to_json


def _write_matrix(path, W):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in W:
            w.writerow(row)


def test_no_command_is_config_error(capsys):
    assert main([]) == 2


def test_unknown_subcommand_exits_two():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_graph_certify(tmp_path, capsys):
    mat = tmp_path / "w.csv"
    _write_matrix(mat, [[0.25, 0.25], [0.25, 0.25]])
    out = tmp_path / "cert.json"
    assert main(["graph", "certify", "--matrix", str(mat), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["format_version"] == 1
    # simple loops with rotations distinct: two self-loops (0.25 each) and
    # the 2-cycle from either start (0.0625 each)
    assert doc["c"] == pytest.approx(0.625)
    assert doc["pass"] is True
    assert doc["condition_met"] is True


def test_graph_certify_bad_matrix(tmp_path):
    mat = tmp_path / "w.csv"
    _write_matrix(mat, [[0.25, 0.25]])   # not square
    assert main(["graph", "certify", "--matrix", str(mat), "--out", "-"]) == 2
    assert main(["graph", "certify", "--matrix", str(tmp_path / "nope.csv"),
                 "--out", "-"]) == 2


def test_plan_outputs_ordered_budget(tmp_path):
    out = tmp_path / "plan.json"
    rc = main(["plan", "--scene", "two-wall", "--regime", "QO", "--n", "20",
               "--p", "2", "--out", str(out)])
    assert rc == 0
    doc = json.loads(out.read_text())
    assert doc["format_version"] == 1
    b = doc["budget"]
    assert b["K"] < b["V"] < b["I"] < b["P"]
    assert doc["dof_estimate"] > 0
    assert len(doc["matrices"]["M"]) == 4
    assert doc["conditions"]["simple_condition"] in (True, False)


def test_plan_requires_k_or_n():
    assert main(["plan", "--regime", "QO", "--out", "-"]) == 2


def test_plan_bad_rho_source():
    assert main(["plan", "--regime", "QO", "--n", "10", "--rho", "bogus",
                 "--out", "-"]) == 1


def test_scene_json_file_round_trip(tmp_path):
    scene_file = tmp_path / "scene.json"
    scene_file.write_text(scene_to_json(build_disk_scene(1.0, 1.9, 2.9)))
    out = tmp_path / "plan.json"
    rc = main(["plan", "--scene", str(scene_file), "--regime", "QO",
               "--k", "10", "--out", str(out)])
    assert rc == 0


def test_unknown_scene_is_config_error():
    assert main(["plan", "--scene", "klein-bottle", "--regime", "QO",
                 "--n", "10", "--out", "-"]) == 2


def test_mesh_and_solve_round_trip(tmp_path, capsys):
    mesh_file = tmp_path / "disk.mesh"
    rc = main(["mesh", "--scene", "disk", "--regime", "QO", "--k", "6.0",
               "--c", "8.0", "--out", str(mesh_file)])
    assert rc == 0
    assert mesh_file.exists()

    sol = tmp_path / "u.csv"
    pml_dump = tmp_path / "pml.csv"
    rc = main(["solve", "--scene", "disk", "--mesh", str(mesh_file),
               "--k", "6.0", "--p", "2", "--source", "none",
               "--dump-pml", str(pml_dump), "--out", str(sol)])
    assert rc == 0
    rows = sol.read_text().splitlines()
    assert rows[0] == "format_version=1"
    assert rows[1] == "x,y,Re_u,Im_u"
    data = np.array([[float(v) for v in r.split(",")] for r in rows[2:]])
    # zero source and zero boundary data: the solution vanishes
    assert np.abs(data[:, 2:]).max() == 0.0
    assert pml_dump.exists()
    pml_rows = pml_dump.read_text().splitlines()
    assert pml_rows[0] == "format_version=1"


def test_experiment_rejects_unknown_config_keys(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_list": [6], "regimess": ["U1"]}))
    assert main(["experiment", "run", "--config", str(cfg),
                 "--out", str(tmp_path / "out")]) == 2


def test_experiment_missing_config(tmp_path):
    assert main(["experiment", "run", "--config", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "out")]) == 2


def test_report_requires_sweep_csvs(tmp_path):
    assert main(["report", "--results", str(tmp_path),
                 "--out", str(tmp_path / "out")]) == 2


def test_helm_threads_validation(monkeypatch):
    monkeypatch.setenv("HELM_THREADS", "banana")
    assert main(["plan", "--regime", "QO", "--n", "10", "--out", "-"]) == 2
