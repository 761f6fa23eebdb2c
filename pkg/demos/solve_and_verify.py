"""Verified Helmholtz solves: PML scattering vs. the series oracle, and a
manufactured-solution convergence table.

Runs in a few minutes on one core.
"""

import math
import time

import numpy as np

from helmplan import pml
from helmplan.fem import DirichletData, FESpace, assemble, norm, solve
from helmplan.geometry import build_disk_scene, build_empty_scene
from helmplan.meshing import generate_mesh
from helmplan.oracles import disk_scattered_field, plane_wave


def disk_scattering() -> None:
    """Sound-soft unit disk at k=10: FEM+PML against the Bessel/Hankel series."""
    k = 10.0
    scene = build_disk_scene(1.0, 1.9, 2.9)
    print(f"Scattering off the unit disk at k={k} "
          f"(PML on {scene.R_pml_minus} < r < {scene.R_tr})")

    t0 = time.time()
    mesh = generate_mesh(scene, lambda pts: np.full(len(pts), 0.06), seed=0)
    space = FESpace(mesh, 2)
    profile = pml.PMLProfile(scene.R_pml_minus, scene.R_tr,
                             pml.Formulation.DivergenceForm, amplitude=2.0)

    def coeff_fn(pts):
        c = pml.coefficients(profile, pts)
        return c.A, c.b, c.n

    # scattered-field formulation: u_s = -u_inc on the obstacle
    u_inc, _ = plane_wave(k, (1.0, 0.0))
    mat, rhs = assemble(space, k, coefficient_fn=coeff_fn)
    u = solve(space, mat, rhs, DirichletData({
        "obstacle": lambda pts: -u_inc(pts),
        "truncation": 0.0,
    }))
    print(f"  {space.n_dofs} DoFs, solved in {time.time() - t0:.1f}s")

    # relative L2 error on the annulus 1.2 < r < 1.8, against the oracle
    bary = mesh.barycenters()
    r = np.hypot(bary[:, 0], bary[:, 1])
    mask = (1.2 < r) & (r < 1.8)
    err = norm(space, u, k, "l2", element_mask=mask,
               exact=lambda pts: disk_scattered_field(pts, k))
    ref = math.sqrt(sum(
        a * abs(v) ** 2 for a, v in
        zip(mesh.areas()[mask], disk_scattered_field(bary[mask], k))
    ))
    print(f"  relative L2 error vs series oracle on 1.2<r<1.8: "
          f"{err / ref:.2%}\n")


def convergence_table() -> None:
    """Manufactured plane wave on a small disk, Dirichlet, no PML."""
    k = 20.0
    scene = build_empty_scene(0.2, 0.25)
    exact, exact_grad = plane_wave(k, (1.0, 0.0))
    print(f"Manufactured plane wave at k={k} on a disk of radius {scene.R_tr}")
    for p, h0 in ((1, 0.02), (2, 0.04)):
        hs, eh1, el2 = [], [], []
        for lev in range(3):
            h = h0 / 2**lev
            mesh = generate_mesh(scene, lambda pts: np.full(len(pts), h), seed=0)
            space = FESpace(mesh, p)
            mat, rhs = assemble(
                space, k, source_fn=lambda pts: np.zeros(len(pts)))
            u = solve(space, mat, rhs, DirichletData({"truncation": exact}))
            hs.append(h)
            eh1.append(norm(space, u, k, "h1k", exact=exact, exact_grad=exact_grad))
            el2.append(norm(space, u, k, "l2", exact=exact))
        r1 = np.polyfit(np.log(hs), np.log(eh1), 1)[0]
        r2 = np.polyfit(np.log(hs), np.log(el2), 1)[0]
        print(f"  p={p}: H1_k errors {[f'{e:.2e}' for e in eh1]} (rate {r1:.2f}),"
              f" L2 errors {[f'{e:.2e}' for e in el2]} (rate {r2:.2f})")


if __name__ == "__main__":
    disk_scattering()
    convergence_table()
