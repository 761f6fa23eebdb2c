import numpy as np
import pytest

from helmplan.geometry import build_disk_scene, build_empty_scene
from helmplan.meshing import (
    DIAMETER_SLACK,
    MIN_ANGLE_DEG,
    Mesh,
    MeshQualityError,
    TAG_OBSTACLE,
    TAG_TRUNCATION,
    generate_mesh,
    read_mesh,
    refine_uniform,
    write_mesh,
)


@pytest.fixture(scope="module")
def disk_mesh():
    scene = build_disk_scene(1.0, 1.9, 2.9)
    mesh = generate_mesh(scene, lambda pts: np.full(len(pts), 0.25), seed=0)
    return scene, mesh


def test_mesh_quality(disk_mesh):
    scene, mesh = disk_mesh
    assert mesh.n_triangles > 100
    assert np.all(mesh.areas() > 0)
    assert mesh.min_angles().min() >= MIN_ANGLE_DEG - 1e-9
    assert np.all(mesh.diameters() <= DIAMETER_SLACK * 0.25 + 1e-12)


def test_mesh_covers_annulus(disk_mesh):
    scene, mesh = disk_mesh
    total = mesh.areas().sum()
    exact = np.pi * (scene.R_tr**2 - 1.0**2)
    # polygonal boundary approximation loses a sliver of area
    assert total == pytest.approx(exact, rel=0.01)
    r = np.hypot(*mesh.nodes.T)
    assert r.min() >= 1.0 - 1e-9
    assert r.max() <= scene.R_tr + 1e-9


def test_boundary_edges_tagged(disk_mesh):
    scene, mesh = disk_mesh
    tags = {tag for (_, _, tag) in mesh.boundary_edges}
    assert tags == {TAG_OBSTACLE + "0", TAG_TRUNCATION} or tags == {
        TAG_OBSTACLE,
        TAG_TRUNCATION,
    }
    for i, j, tag in mesh.boundary_edges:
        r = np.hypot(*mesh.nodes[[i, j]].T)
        if tag.startswith(TAG_OBSTACLE):
            assert np.allclose(r, 1.0, atol=1e-9)
        else:
            assert np.allclose(r, scene.R_tr, atol=1e-9)


def test_element_region_tags(disk_mesh):
    scene, mesh = disk_mesh
    in_p = mesh.element_in_region("P")
    r = np.hypot(*mesh.barycenters().T)
    # PML-tagged elements sit beyond the cap radius; far elements are tagged
    p_r = scene.cover.params["p_radius"]
    assert np.all(r[in_p] > p_r - 0.3)
    assert in_p[r > p_r + 0.2].all()
    # every element belongs to at least one region
    assert np.all(mesh.element_tags > 0)


def test_determinism(disk_mesh):
    scene, mesh = disk_mesh
    again = generate_mesh(scene, lambda pts: np.full(len(pts), 0.25), seed=0)
    assert np.array_equal(again.triangles, mesh.triangles)
    assert np.allclose(again.nodes, mesh.nodes)


def test_graded_size_field_respected():
    scene = build_empty_scene(0.8, 1.2)

    def field(pts):
        r = np.hypot(pts[:, 0], pts[:, 1])
        return 0.08 + 0.12 * r

    mesh = generate_mesh(scene, field, seed=1)
    ratio = mesh.diameters() / (DIAMETER_SLACK * field(mesh.barycenters()))
    assert ratio.max() <= 1.0


def test_refine_uniform(disk_mesh):
    scene, mesh = disk_mesh
    fine = refine_uniform(mesh, scene)
    assert fine.n_triangles == 4 * mesh.n_triangles
    assert fine.areas().sum() == pytest.approx(mesh.areas().sum())
    assert fine.diameters().max() == pytest.approx(mesh.diameters().max() / 2)
    # angles preserved under midpoint refinement
    assert fine.min_angles().min() == pytest.approx(mesh.min_angles().min(), abs=1e-9)
    assert len(fine.boundary_edges) == 2 * len(mesh.boundary_edges)
    # children inherit a region whenever the parent carried it
    parent_p = np.repeat(mesh.element_in_region("I"), 4)
    assert np.all(fine.element_in_region("I") | ~parent_p | fine.element_in_region("P"))


def test_write_read_round_trip(disk_mesh, tmp_path):
    _, mesh = disk_mesh
    path = tmp_path / "mesh.txt"
    write_mesh(mesh, str(path))
    back = read_mesh(str(path))
    assert np.array_equal(back.triangles, mesh.triangles)
    assert np.array_equal(back.nodes, mesh.nodes)   # repr round-trips floats
    assert np.array_equal(back.element_tags, mesh.element_tags)
    assert [tuple(e) for e in back.boundary_edges] == [
        tuple(e) for e in mesh.boundary_edges
    ]


def test_read_rejects_malformed(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("vertices 3\ntriangles 1\n")
    with pytest.raises(ValueError):
        read_mesh(str(bad))


def test_unresolvable_size_field_raises():
    scene = build_empty_scene(0.8, 1.2)
    with pytest.raises((MeshQualityError, ValueError)):
        generate_mesh(scene, lambda pts: np.full(len(pts), 1e-7), seed=0)
