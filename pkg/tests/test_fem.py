import math

import numpy as np
import pytest

from helmplan.fem import (
    DirichletData,
    FESpace,
    _ReferenceBasis,
    assemble,
    best_approximation,
    norm,
    solve,
    triangle_quadrature,
)
from helmplan.geometry import build_empty_scene
from helmplan.meshing import generate_mesh
from helmplan.oracles import plane_wave


@pytest.fixture(scope="module")
def disk_mesh():
    scene = build_empty_scene(0.8, 1.2)
    return generate_mesh(scene, lambda pts: np.full(len(pts), 0.15), seed=0)


def _exact_monomial_integral(i, j):
    # int_T x^i y^j over the unit reference triangle
    return math.factorial(i) * math.factorial(j) / math.factorial(i + j + 2)


@pytest.mark.parametrize("degree", [4, 6, 8])
def test_quadrature_exactness(degree):
    pts, wts = triangle_quadrature(degree)
    assert np.all(wts > 0)
    assert wts.sum() == pytest.approx(0.5)
    for i in range(degree + 1):
        for j in range(degree + 1 - i):
            got = np.sum(wts * pts[:, 0] ** i * pts[:, 1] ** j)
            assert got == pytest.approx(
                _exact_monomial_integral(i, j), abs=1e-8
            ), (degree, i, j)


def test_quadrature_unknown_degree():
    with pytest.raises(ValueError):
        triangle_quadrature(25)


@pytest.mark.parametrize("p", [1, 2, 3])
def test_reference_basis_lagrange_property(p):
    basis = _ReferenceBasis(p)
    phi, _ = basis.eval(basis.nodes)
    assert np.allclose(phi, np.eye(len(basis.nodes)), atol=1e-12)
    # partition of unity and vanishing gradient sum at random points
    rng = np.random.default_rng(0)
    l1 = rng.uniform(0, 1, 50)
    l2 = rng.uniform(0, 1, 50) * (1 - l1)
    pts = np.column_stack([l1, l2])
    phi, dphi = basis.eval(pts)
    assert np.allclose(phi.sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose(dphi.sum(axis=1), 0.0, atol=1e-10)


@pytest.mark.parametrize("p", [1, 2, 3])
def test_dof_counts(disk_mesh, p):
    space = FESpace(disk_mesh, p)
    edges = set()
    for a, b, c in disk_mesh.triangles:
        for i, j in ((a, b), (b, c), (c, a)):
            edges.add((min(i, j), max(i, j)))
    expect = disk_mesh.n_nodes + (p - 1) * len(edges)
    if p == 3:
        expect += disk_mesh.n_triangles
    assert space.n_dofs == expect
    assert len(space.dof_coords) == space.n_dofs


def test_invalid_degree(disk_mesh):
    with pytest.raises(ValueError):
        FESpace(disk_mesh, 4)


@pytest.mark.parametrize("p", [1, 2, 3])
def test_interpolation_reproduces_polynomials(disk_mesh, p):
    space = FESpace(disk_mesh, p)

    def poly(pts):
        x, y = pts[:, 0], pts[:, 1]
        out = 1.0 + 2 * x - y
        if p >= 2:
            out = out + 0.5 * x * y - x**2
        if p >= 3:
            out = out + 0.25 * y**3
        return out

    coeffs = poly(space.dof_coords)
    rng = np.random.default_rng(1)
    r = np.sqrt(rng.uniform(0, 1, 200)) * 1.19
    th = rng.uniform(0, 2 * np.pi, 200)
    pts = np.column_stack([r * np.cos(th), r * np.sin(th)])
    assert np.abs(space.evaluate(coeffs, pts) - poly(pts)).max() < 1e-10


def test_evaluate_with_gradient(disk_mesh):
    space = FESpace(disk_mesh, 2)
    x = space.dof_coords
    coeffs = x[:, 0] ** 2 + 3 * x[:, 1] - x[:, 0] * x[:, 1]
    pts = np.array([[0.3, -0.2], [0.0, 0.5], [-0.7, 0.1]])
    vals, grads = space.evaluate_with_gradient(coeffs, pts)
    gx = 2 * pts[:, 0] - pts[:, 1]
    gy = 3 - pts[:, 0]
    assert np.allclose(vals, pts[:, 0] ** 2 + 3 * pts[:, 1] - pts[:, 0] * pts[:, 1])
    assert np.allclose(grads[:, 0], gx, atol=1e-10)
    assert np.allclose(grads[:, 1], gy, atol=1e-10)


def test_locate_rejects_exterior(disk_mesh):
    space = FESpace(disk_mesh, 1)
    with pytest.raises(ValueError):
        space.locate(np.array([[5.0, 5.0]]))


def test_dirichlet_dofs_on_truncation(disk_mesh):
    space = FESpace(disk_mesh, 2)
    idx = space.dirichlet_dofs("truncation")
    assert len(idx) > 0
    r = np.hypot(*space.dof_coords[idx].T)
    # edge midpoints of the polygonal boundary lie slightly inside the circle
    assert np.all(r <= 1.2 + 1e-9)
    assert np.all(r >= 1.2 * math.cos(math.pi / len(idx) * 4))


def test_galerkin_reproduces_quadratic_solution(disk_mesh):
    """Quadratic exact solution is in the p=2 space, so the discrete
    solution matches it to solver precision."""
    k = 3.0
    space = FESpace(disk_mesh, 2)

    def u_exact(pts):
        x, y = pts[:, 0], pts[:, 1]
        return x**2 - 2 * x * y + 3 * y + 1

    def f(pts):
        # -lap(u) - k^2 u
        return -2.0 - k * k * u_exact(pts)

    mat, rhs = assemble(space, k, source_fn=f)
    u = solve(space, mat, rhs, DirichletData({"truncation": u_exact}))
    err = np.abs(u - u_exact(space.dof_coords))
    assert err.max() < 1e-8


def test_norm_of_plane_wave(disk_mesh):
    """H^1_k norm of e^{ik d.x}: |u| = 1 and |grad u| = k pointwise, so the
    norm squared is twice the mesh area."""
    k = 8.0
    space = FESpace(disk_mesh, 3)
    u, _ = plane_wave(k, (1.0, 0.0))
    coeffs = u(space.dof_coords)
    area = disk_mesh.areas().sum()
    got = norm(space, coeffs, k, "h1k")
    assert got == pytest.approx(math.sqrt(2 * area), rel=1e-3)
    assert norm(space, coeffs, k, "l2") == pytest.approx(math.sqrt(area), rel=1e-3)
    with pytest.raises(ValueError):
        norm(space, coeffs, k, "h2")


def test_norm_with_element_mask(disk_mesh):
    space = FESpace(disk_mesh, 1)
    coeffs = np.ones(space.n_dofs, dtype=complex)
    r = np.hypot(*disk_mesh.barycenters().T)
    mask = r < 0.5
    full = norm(space, coeffs, 1.0, "l2")
    part = norm(space, coeffs, 1.0, "l2", element_mask=mask)
    assert 0 < part < full


def test_best_approximation_is_optimal(disk_mesh):
    """No perturbation of the projection (vanishing on the Dirichlet set)
    reduces the H^1_k error."""
    k = 6.0
    space = FESpace(disk_mesh, 2)
    u, gu = plane_wave(k, (0.6, 0.8))
    w = best_approximation(space, k, u, gu)
    e_best = norm(space, w, k, "h1k", exact=u, exact_grad=gu)
    rng = np.random.default_rng(2)
    for _ in range(5):
        pert = w + 1e-3 * e_best * (
            rng.standard_normal(space.n_dofs)
            + 1j * rng.standard_normal(space.n_dofs)
        )
        e_pert = norm(space, pert, k, "h1k", exact=u, exact_grad=gu)
        assert e_best <= e_pert + 1e-12
    # the projection beats nodal interpolation
    e_interp = norm(
        space, u(space.dof_coords), k, "h1k", exact=u, exact_grad=gu
    )
    assert e_best <= e_interp + 1e-12
