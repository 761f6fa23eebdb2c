"""Lagrange finite elements for the complex Helmholtz equation on the
triangulations produced by :mod:`helmplan.meshing`.

The variational problem solved is

    a(u, v) = integral  A grad(u) . grad(conj(v))
                      + (b . grad(u)) conj(v)
                      - k^2 n u conj(v)  dx  =  integral f conj(v) dx

with Dirichlet conditions on tagged boundary edges.  With (A, b, n) =
(I, 0, 1) this is the plain Helmholtz operator; the PML coefficient triples
from :mod:`helmplan.pml` slot in directly.

Norms are k-weighted:  |u|_{H^1_k}^2 = k^{-2} |grad u|_{L^2}^2 + |u|_{L^2}^2,
so the relative error of an O(1) solution stays O(1) across frequencies.

Degrees p = 1, 2, 3 are supported (cubic elements are used internally for
reference solutions).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from scipy.spatial import cKDTree

from .meshing import Mesh

SOLVER_RESIDUAL_TOL = 1e-8
# above this many unknowns the LU factors are computed in single-precision
# complex (half the fill memory) and double accuracy is recovered by
# iterative refinement, still verified against SOLVER_RESIDUAL_TOL
MIXED_PRECISION_DOFS = 400_000

# Symmetric Gauss rules on the reference triangle {x,y >= 0, x+y <= 1},
# given as barycentric orbits; weights sum to 1 (scaled by area 1/2 on use).
_QUAD_ORBITS = {
    4: [
        (0.223381589678011, (0.108103018168070, 0.445948490915965)),
        (0.109951743655322, (0.816847572980459, 0.091576213509771)),
    ],
    6: [
        (0.116786275726379, (0.501426509658179, 0.249286745170910)),
        (0.050844906370207, (0.873821971016996, 0.063089014491502)),
        (0.082851075618374, (0.053145049844817, 0.310352451033784, 0.636502499121399)),
    ],
    8: [
        (0.144315607677787, (1.0 / 3.0,)),
        (0.095091634413923, (0.081414823414554, 0.459292588292723)),
        (0.103217370534718, (0.658861384496480, 0.170569307751760)),
        (0.032458497623198, (0.898905543365938, 0.050547228317031)),
        (0.027230314174435, (0.008394777409958, 0.263112829634638, 0.728492392955404)),
    ],
}


def _expand_orbit(bary: tuple) -> list[tuple[float, float, float]]:
    if len(bary) == 1:
        return [(bary[0], bary[0], bary[0])]
    if len(bary) == 2:
        a, b = bary   # orbit of (a, b, b) with a + 2b = 1
        return [(a, b, b), (b, a, b), (b, b, a)]
    a, b, c = bary
    return [
        (a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a),
    ]


def triangle_quadrature(degree: int):
    """(points, weights) on the reference triangle; weights sum to 1/2."""
    avail = sorted(_QUAD_ORBITS)
    deg = next((d for d in avail if d >= degree), None)
    if deg is None:
        raise ValueError(f"no quadrature rule of degree {degree}")
    pts, wts = [], []
    for w, bary in _QUAD_ORBITS[deg]:
        for l1, l2, l3 in _expand_orbit(bary):
            pts.append((l2, l3))
            wts.append(w)
    return np.array(pts), 0.5 * np.array(wts)


def _reference_nodes(p: int) -> np.ndarray:
    """Lagrange lattice in the conventional order: vertices, then edge nodes
    (edge 01, 12, 20, each walked from its first vertex), then interior."""
    V = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    nodes = [V[0], V[1], V[2]]
    for a, b in ((0, 1), (1, 2), (2, 0)):
        for j in range(1, p):
            nodes.append(V[a] + (j / p) * (V[b] - V[a]))
    if p == 3:
        nodes.append(np.array([1.0 / 3.0, 1.0 / 3.0]))
    return np.array(nodes)


def _monomials(p: int, pts: np.ndarray):
    exps = [(i, j) for deg in range(p + 1) for i in range(deg + 1) for j in [deg - i]]
    vals = np.stack([pts[:, 0] ** i * pts[:, 1] ** j for i, j in exps], axis=1)
    gx = np.stack(
        [i * pts[:, 0] ** max(i - 1, 0) * pts[:, 1] ** j for i, j in exps], axis=1
    )
    gy = np.stack(
        [j * pts[:, 0] ** i * pts[:, 1] ** max(j - 1, 0) for i, j in exps], axis=1
    )
    return vals, gx, gy


class _ReferenceBasis:
    """Lagrange shape functions on the reference triangle via Vandermonde
    inversion in the monomial basis."""

    def __init__(self, p: int):
        self.p = p
        self.nodes = _reference_nodes(p)
        V, _, _ = _monomials(p, self.nodes)
        self.coeff = np.linalg.inv(V)   # columns: monomial coeffs of phi_i

    def eval(self, pts: np.ndarray):
        """(values, grads) with shapes (npts, nbasis) and (npts, nbasis, 2)."""
        vals, gx, gy = _monomials(self.p, pts)
        phi = vals @ self.coeff
        dphi = np.stack([gx @ self.coeff, gy @ self.coeff], axis=2)
        return phi, dphi


@dataclass
class FESpace:
    """Global continuous Lagrange space of degree p on a mesh.

    DoF order: mesh vertices, then p-1 nodes per edge (walked from the
    lower-numbered vertex), then interior nodes per element (p = 3).
    """

    mesh: Mesh
    p: int
    element_dofs: np.ndarray = field(init=False)     # (ntri, ndof_local)
    dof_coords: np.ndarray = field(init=False)       # (ndof, 2)
    n_dofs: int = field(init=False)
    _locator: object = field(init=False, default=None, repr=False)

    def __post_init__(self):
        if self.p not in (1, 2, 3):
            raise ValueError("degree must be 1, 2 or 3")
        mesh, p = self.mesh, self.p
        tris = mesh.triangles
        nv = len(mesh.nodes)
        coords = [mesh.nodes]

        edge_index: dict[tuple[int, int], int] = {}
        edge_base = nv
        per_edge = p - 1
        edge_nodes = []
        if per_edge:
            for t in tris:
                for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
                    key = (min(a, b), max(a, b))
                    if key not in edge_index:
                        edge_index[key] = edge_base + per_edge * len(edge_index)
                        lo, hi = key
                        for j in range(1, p):
                            edge_nodes.append(
                                mesh.nodes[lo] + (j / p) * (mesh.nodes[hi] - mesh.nodes[lo])
                            )
            coords.append(np.array(edge_nodes))
        n_edge_dofs = per_edge * len(edge_index)
        interior_base = edge_base + n_edge_dofs
        if p == 3:
            coords.append(mesh.barycenters())
        self.dof_coords = np.concatenate(coords) if len(coords) > 1 else coords[0]
        self.n_dofs = len(self.dof_coords)

        ndl = (p + 1) * (p + 2) // 2
        ed = np.empty((len(tris), ndl), dtype=np.int64)
        ed[:, :3] = tris
        if per_edge:
            for ti, t in enumerate(tris):
                col = 3
                for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
                    key = (min(a, b), max(a, b))
                    base = edge_index[key]
                    idx = range(per_edge) if a == key[0] else range(per_edge - 1, -1, -1)
                    for j in idx:
                        ed[ti, col] = base + j
                        col += 1
            if p == 3:
                ed[:, -1] = interior_base + np.arange(len(tris))
        self.element_dofs = ed
        self._edge_index = edge_index

    # -- geometry of the affine maps ------------------------------------
    def affine_maps(self):
        """Per-element (origin, J, Jinv, detJ); J columns are edge vectors."""
        tri = self.mesh.triangles
        v0 = self.mesh.nodes[tri[:, 0]]
        J = np.stack(
            [self.mesh.nodes[tri[:, 1]] - v0, self.mesh.nodes[tri[:, 2]] - v0], axis=2
        )
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        Jinv = np.empty_like(J)
        Jinv[:, 0, 0] = J[:, 1, 1] / det
        Jinv[:, 0, 1] = -J[:, 0, 1] / det
        Jinv[:, 1, 0] = -J[:, 1, 0] / det
        Jinv[:, 1, 1] = J[:, 0, 0] / det
        return v0, J, Jinv, det

    def quadrature_points(self, degree: int | None = None):
        """Physical quadrature points/weights: (ntri, nq, 2), (ntri, nq)."""
        if degree is None:
            degree = 2 * self.p + 2
        qp, qw = triangle_quadrature(degree)
        v0, J, _, det = self.affine_maps()
        phys = v0[:, None, :] + np.einsum("eij,qj->eqi", J, qp)
        w = np.abs(det)[:, None] * qw[None, :]
        return phys, w

    def dirichlet_dofs(self, tags) -> np.ndarray:
        """Sorted DoF indices lying on boundary edges with a tag in `tags`."""
        tags = {tags} if isinstance(tags, str) else set(tags)
        out: set[int] = set()
        per_edge = self.p - 1
        for i, j, tag in self.mesh.boundary_edges:
            if tag not in tags:
                continue
            out.add(i)
            out.add(j)
            if per_edge:
                base = self._edge_index[(min(i, j), max(i, j))]
                out.update(base + np.arange(per_edge))
        return np.array(sorted(out), dtype=np.int64)

    # -- point evaluation -------------------------------------------------
    def _build_locator(self):
        bary = self.mesh.barycenters()
        self._locator = (cKDTree(bary), _ReferenceBasis(self.p))

    def locate(self, pts: np.ndarray, n_candidates: int = 12, tol: float = 1e-6):
        """Element index and reference coordinates for each query point.

        Points violating the simplex constraints by up to `tol` (in
        reference coordinates) snap to the nearest candidate element with
        their coordinates clamped into the simplex."""
        if self._locator is None:
            self._build_locator()
        tree, _ = self._locator
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        _, cand = tree.query(pts, k=min(n_candidates, len(self.mesh.triangles)))
        cand = np.atleast_2d(cand)
        v0, _, Jinv, _ = self.affine_maps()
        elems = np.full(len(pts), -1, dtype=np.int64)
        ref = np.zeros((len(pts), 2))
        best_def = np.full(len(pts), np.inf)   # constraint violation fallback
        for col in range(cand.shape[1]):
            unresolved = elems < 0
            if not np.any(unresolved):
                break
            e = cand[unresolved, col]
            local = np.einsum("nij,nj->ni", Jinv[e], pts[unresolved] - v0[e])
            l1 = local[:, 0]
            l2 = local[:, 1]
            deficit = np.maximum(-l1, 0) + np.maximum(-l2, 0) + np.maximum(l1 + l2 - 1, 0)
            rows = np.nonzero(unresolved)[0]
            inside = deficit <= 1e-10
            elems[rows[inside]] = e[inside]
            ref[rows[inside]] = local[inside]
            better = deficit < best_def[rows]
            best_def[rows[better]] = deficit[better]
            nearly = better & (deficit <= tol)
            take = nearly & ~inside
            clamped = np.clip(local[take], 0.0, None)
            over = clamped.sum(axis=1)
            scale = np.where(over > 1.0, 1.0 / np.maximum(over, 1e-300), 1.0)
            elems[rows[take]] = e[take]
            ref[rows[take]] = clamped * scale[:, None]
        if np.any(elems < 0):
            raise ValueError(
                f"{int(np.sum(elems < 0))} query points fall outside the mesh"
            )
        return elems, ref

    def evaluate(self, coeffs: np.ndarray, pts: np.ndarray, tol: float = 1e-6) -> np.ndarray:
        """Evaluate the FE function with the given DoF vector at points."""
        elems, ref = self.locate(pts, tol=tol)
        basis = _ReferenceBasis(self.p)
        phi, _ = basis.eval(ref)
        dofs = self.element_dofs[elems]
        return np.einsum("nd,nd->n", phi, coeffs[dofs])

    def evaluate_with_gradient(self, coeffs: np.ndarray, pts: np.ndarray, tol: float = 1e-6):
        """(values, gradients) of the FE function at arbitrary points."""
        elems, ref = self.locate(pts, tol=tol)
        basis = _ReferenceBasis(self.p)
        phi, dphi = basis.eval(ref)
        _, _, Jinv, _ = self.affine_maps()
        dofs = coeffs[self.element_dofs[elems]]
        vals = np.einsum("nd,nd->n", phi, dofs)
        g = np.einsum("ndc,nid->nic", Jinv[elems], dphi)
        grads = np.einsum("nic,ni->nc", g, dofs)
        return vals, grads


def _constant_coefficients(pts):
    n = len(pts)
    A = np.zeros((n, 2, 2), dtype=complex)
    A[:, 0, 0] = A[:, 1, 1] = 1.0
    return A, np.zeros((n, 2), dtype=complex), np.ones(n, dtype=complex)


def assemble(
    space: FESpace,
    k: float,
    coefficient_fn=None,
    source_fn=None,
    quad_degree: int | None = None,
    chunk_elements: int = 20000,
):
    """Assemble the sesquilinear form and load vector.

    coefficient_fn maps (N, 2) points to (A, b, n) arrays; None means the
    constant-coefficient Helmholtz operator.  Returns (matrix, rhs) with the
    matrix in CSC format.  Elements are processed in chunks so the peak
    memory of the per-quadrature-point temporaries stays bounded on large
    meshes; the assembled triplets are identical for any chunk size.
    """
    if quad_degree is None:
        quad_degree = 2 * space.p + 2
    qp, qw = triangle_quadrature(quad_degree)
    basis = _ReferenceBasis(space.p)
    phi, dphi = basis.eval(qp)          # (nq, ndl), (nq, ndl, 2)
    v0, J, Jinv, det = space.affine_maps()
    ne = len(det)
    ndl = phi.shape[1]

    data = np.empty(ne * ndl * ndl, dtype=complex)
    rows = np.empty(ne * ndl * ndl, dtype=np.int32)
    cols = np.empty(ne * ndl * ndl, dtype=np.int32)
    rhs = np.zeros(space.n_dofs, dtype=complex)

    for start in range(0, ne, chunk_elements):
        stop = min(start + chunk_elements, ne)
        sl = slice(start, stop)
        w = np.abs(det[sl])[:, None] * qw[None, :]      # (nec, nq)
        phys = v0[sl, None, :] + np.einsum("eij,qj->eqi", J[sl], qp)
        nec, nq = w.shape

        flat = phys.reshape(-1, 2)
        if coefficient_fn is None:
            A, b, nco = _constant_coefficients(flat)
        else:
            A, b, nco = coefficient_fn(flat)
        A = A.reshape(nec, nq, 2, 2)
        b = b.reshape(nec, nq, 2)
        nco = nco.reshape(nec, nq)

        # physical gradients: g[e, q, i, d] = (Jinv^T dphi)[...]
        g = np.einsum("edc,qid->eqic", Jinv[sl], dphi)
        Ag = np.einsum("eqcd,eqid->eqic", A, g)
        K = np.einsum("eq,eqic,eqjc->eij", w, Ag, g)    # grad-grad (trial i)
        drift = np.einsum("eq,eqic,eqc,qj->eij", w, g, b, phi)
        Mass = np.einsum("eq,eq,qi,qj->eij", w, nco, phi, phi)
        local = K + drift - k * k * Mass

        ed = space.element_dofs[sl]
        span = slice(start * ndl * ndl, stop * ndl * ndl)
        rows[span] = np.repeat(ed, ndl, axis=1).ravel()
        cols[span] = np.tile(ed, (1, ndl)).ravel()
        # local[e, i, j]: i is trial, j is test -> entry (row j, col i)
        data[span] = local.transpose(0, 2, 1).ravel()

        if source_fn is not None:
            fvals = np.asarray(source_fn(flat), dtype=complex).reshape(nec, nq)
            load = np.einsum("eq,eq,qj->ej", w, fvals, phi)
            np.add.at(rhs, ed.ravel(), load.ravel())

    mat = sp.coo_matrix(
        (data, (rows, cols)), shape=(space.n_dofs, space.n_dofs)
    ).tocsc()
    return mat, rhs


@dataclass
class DirichletData:
    """Boundary values: {tag: callable or constant} applied to tagged edges."""

    values: dict

    def vector(self, space: FESpace) -> tuple[np.ndarray, np.ndarray]:
        idx_all, vals_all = [], []
        for tag, g in self.values.items():
            idx = space.dirichlet_dofs(tag)
            if len(idx) == 0:
                continue
            if callable(g):
                v = np.asarray(g(space.dof_coords[idx]), dtype=complex)
            else:
                v = np.full(len(idx), g, dtype=complex)
            idx_all.append(idx)
            vals_all.append(v)
        if not idx_all:
            return np.array([], dtype=np.int64), np.array([], dtype=complex)
        idx = np.concatenate(idx_all)
        vals = np.concatenate(vals_all)
        order = np.argsort(idx)
        idx, vals = idx[order], vals[order]
        uniq, first = np.unique(idx, return_index=True)
        return uniq, vals[first]


def solve(
    space: FESpace,
    mat: sp.spmatrix,
    rhs: np.ndarray,
    dirichlet: DirichletData | None = None,
) -> np.ndarray:
    """Direct solve with Dirichlet elimination (lifting); verifies the
    residual of the constrained system."""
    n = space.n_dofs
    u = np.zeros(n, dtype=complex)
    if dirichlet is not None:
        d_idx, d_val = dirichlet.vector(space)
    else:
        d_idx = np.array([], dtype=np.int64)
        d_val = np.array([], dtype=complex)
    free = np.setdiff1d(np.arange(n), d_idx)
    u[d_idx] = d_val

    mat = mat.tocsc().astype(complex)
    A_ff = mat[free][:, free]
    b_f = rhs[free]
    if len(d_idx):
        b_f = b_f - mat[free][:, d_idx] @ d_val
    single = A_ff.shape[0] > MIXED_PRECISION_DOFS
    try:
        if single:
            # factor in single-precision complex (halves the LU fill memory
            # on large systems) and recover double accuracy by iterative
            # refinement against the double-precision matrix below
            lu = splu(A_ff.astype(np.complex64))
        else:
            lu = splu(A_ff)
    except RuntimeError as exc:
        raise RuntimeError(
            "factorization failed; the discrete operator may be singular "
            "(near-resonant wavenumber or severely under-resolved mesh)"
        ) from exc
    scale = max(np.linalg.norm(b_f), 1e-300)
    if single:
        u_f = lu.solve(b_f.astype(np.complex64)).astype(complex)
        res = np.linalg.norm(A_ff @ u_f - b_f)
        for _ in range(20):
            if res / scale <= SOLVER_RESIDUAL_TOL:
                break
            r = b_f - A_ff @ u_f
            u_f = u_f + lu.solve(r.astype(np.complex64)).astype(complex)
            res = np.linalg.norm(A_ff @ u_f - b_f)
    else:
        u_f = lu.solve(b_f)
        res = np.linalg.norm(A_ff @ u_f - b_f)
    if res / scale > SOLVER_RESIDUAL_TOL:
        raise RuntimeError(
            f"direct solve residual {res / scale:.3g} exceeds "
            f"{SOLVER_RESIDUAL_TOL}; system is numerically singular"
        )
    u[free] = u_f
    return u


def _norm_contributions(
    space: FESpace,
    coeffs: np.ndarray,
    k: float,
    exact=None,
    exact_grad=None,
    quad_degree: int | None = None,
):
    """Per-element squared k-weighted seminorm pieces of (u_h - exact):
    returns (l2_sq, h1k_grad_sq) arrays of length n_elements."""
    if quad_degree is None:
        quad_degree = 2 * space.p + 2
    qp, qw = triangle_quadrature(quad_degree)
    basis = _ReferenceBasis(space.p)
    phi, dphi = basis.eval(qp)
    v0, J, Jinv, det = space.affine_maps()
    w = np.abs(det)[:, None] * qw[None, :]
    phys = v0[:, None, :] + np.einsum("eij,qj->eqi", J, qp)
    dofs = coeffs[space.element_dofs]                        # (ne, ndl)
    uh = np.einsum("qi,ei->eq", phi, dofs)
    g = np.einsum("edc,qid->eqic", Jinv, dphi)
    guh = np.einsum("eqic,ei->eqc", g, dofs)
    if exact is not None:
        flat = phys.reshape(-1, 2)
        uh = uh - np.asarray(exact(flat), dtype=complex).reshape(uh.shape)
    if exact_grad is not None:
        flat = phys.reshape(-1, 2)
        guh = guh - np.asarray(exact_grad(flat), dtype=complex).reshape(guh.shape)
    l2 = np.einsum("eq,eq->e", w, np.abs(uh) ** 2)
    h1 = np.einsum("eq,eqc->e", w, np.abs(guh) ** 2) / (k * k)
    return l2, h1


def norm(
    space: FESpace,
    coeffs: np.ndarray,
    k: float,
    which: str = "h1k",
    element_mask: np.ndarray | None = None,
    exact=None,
    exact_grad=None,
) -> float:
    """k-weighted norm of u_h (or of the error u_h - exact when callables
    are supplied) over the whole mesh or a subset of elements.

    which: "l2" or "h1k" (= sqrt(k^-2 |grad|^2 + |.|^2)).
    """
    l2, h1 = _norm_contributions(space, coeffs, k, exact, exact_grad)
    if element_mask is not None:
        l2, h1 = l2[element_mask], h1[element_mask]
    if which == "l2":
        return float(math.sqrt(np.sum(l2)))
    if which == "h1k":
        return float(math.sqrt(np.sum(l2) + np.sum(h1)))
    raise ValueError("which must be 'l2' or 'h1k'")


def best_approximation(
    space: FESpace,
    k: float,
    exact,
    exact_grad,
    dirichlet: DirichletData | None = None,
    quad_degree: int | None = None,
) -> np.ndarray:
    """H^1_k-orthogonal projection of an exact field onto the FE space
    (Dirichlet dofs interpolated).  Used as the quasi-optimality yardstick."""
    if quad_degree is None:
        quad_degree = 2 * space.p + 4
    qp, qw = triangle_quadrature(quad_degree)
    basis = _ReferenceBasis(space.p)
    phi, dphi = basis.eval(qp)
    v0, J, Jinv, det = space.affine_maps()
    w = np.abs(det)[:, None] * qw[None, :]
    phys = v0[:, None, :] + np.einsum("eij,qj->eqi", J, qp)
    ne, nq = w.shape
    ndl = phi.shape[1]
    g = np.einsum("edc,qid->eqic", Jinv, dphi)

    # Gram matrix of the H^1_k inner product
    K = np.einsum("eq,eqic,eqjc->eij", w, g, g) / (k * k)
    M = np.einsum("eq,qi,qj->eij", w, phi, phi)
    local = K + M
    rows = np.repeat(space.element_dofs, ndl, axis=1).ravel()
    cols = np.tile(space.element_dofs, (1, ndl)).ravel()
    G = sp.coo_matrix(
        (local.ravel(), (rows, cols)), shape=(space.n_dofs, space.n_dofs)
    ).tocsc()

    flat = phys.reshape(-1, 2)
    uex = np.asarray(exact(flat), dtype=complex).reshape(ne, nq)
    gex = np.asarray(exact_grad(flat), dtype=complex).reshape(ne, nq, 2)
    load = np.einsum("eq,eq,qj->ej", w, uex, phi) + np.einsum(
        "eq,eqc,eqjc->ej", w, gex, g
    ) / (k * k)
    rhs = np.zeros(space.n_dofs, dtype=complex)
    np.add.at(rhs, space.element_dofs.ravel(), load.ravel())
    return solve(space, G, rhs, dirichlet)
