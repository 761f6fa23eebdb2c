"""Size-field-driven simplicial mesh generation.

The generator follows the classic force-equilibrium recipe: boundary curves
are sampled at the local size-field spacing and pinned; interior points start
from a thinned hexagonal lattice matching the target density; a few rounds of
Delaunay retriangulation and edge-spring smoothing relax the interior; a
final cleanup pass removes the handful of boundary slivers below the minimum
angle.  Element quality (min angle >= 20 degrees), positive orientation and
the size-field diameter bound are enforced, not hoped for.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .geometry import Circle, Scene

MIN_ANGLE_DEG = 20.0
SPACING_FACTOR = 0.88      # target point spacing relative to the size field
DIAMETER_SLACK = 1.5
MIN_SIZE_GUARD = 1e-5      # size field below this fraction of the diameter aborts
SMOOTH_ROUNDS = 9
CLEANUP_ROUNDS = 40

TAG_OBSTACLE = "obstacle"
TAG_TRUNCATION = "truncation"

# node origin codes
_INTERIOR = 0
_TRUNC = -1   # obstacle i is stored as i + 1


class MeshQualityError(RuntimeError):
    pass


@dataclass
class Mesh:
    nodes: np.ndarray                 # (N, 2)
    triangles: np.ndarray             # (T, 3) int, positively oriented
    boundary_edges: list              # (i, j, tag)
    element_tags: np.ndarray          # (T,) int bitmask over cover tags
    tag_names: tuple[str, ...] = ("K", "V", "I", "P")
    node_origin: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def barycenters(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def diameters(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        e = np.stack(
            [
                np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
                np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
                np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
            ],
            axis=1,
        )
        return e.max(axis=1)

    def min_angles(self) -> np.ndarray:
        """Smallest interior angle per triangle, in degrees."""
        p = self.nodes[self.triangles]
        angs = []
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            na = np.linalg.norm(a, axis=1)
            nb = np.linalg.norm(b, axis=1)
            cosang = np.clip(np.einsum("ij,ij->i", a, b) / (na * nb), -1.0, 1.0)
            angs.append(np.degrees(np.arccos(cosang)))
        return np.min(np.stack(angs, axis=1), axis=1)

    def element_in_region(self, tag: str) -> np.ndarray:
        bit = 1 << self.tag_names.index(tag)
        return (self.element_tags & bit) != 0


def _orient(nodes: np.ndarray, tris: np.ndarray) -> np.ndarray:
    p = nodes[tris]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    areas = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    flipped = tris.copy()
    neg = areas < 0
    flipped[neg] = flipped[neg][:, [0, 2, 1]]
    return flipped


def _boundary_loops(scene: Scene, spacing_fn) -> tuple[np.ndarray, np.ndarray]:
    """Sampled points of all boundary curves with origin codes."""
    pts = [Circle((0.0, 0.0), scene.R_tr).boundary_points(spacing_fn)]
    origins = [np.full(len(pts[0]), _TRUNC, dtype=int)]
    for i, obs in enumerate(scene.obstacles):
        bp = obs.boundary_points(spacing_fn)
        pts.append(bp)
        origins.append(np.full(len(bp), i + 1, dtype=int))
    return np.concatenate(pts), np.concatenate(origins)


def _hex_lattice(R: float, s: float) -> np.ndarray:
    nx = int(2 * R / s) + 2
    ny = int(2 * R / (s * math.sqrt(3.0) / 2.0)) + 2
    ys = -R + (math.sqrt(3.0) / 2.0) * s * np.arange(ny)
    pts = []
    for row, y in enumerate(ys):
        xs = -R + s * (np.arange(nx) + (0.5 if row % 2 else 0.0))
        pts.append(np.column_stack([xs, np.full(len(xs), y)]))
    return np.concatenate(pts)


def _seed_interior(scene: Scene, spacing_fn, rng: np.random.Generator) -> np.ndarray:
    """Deterministic multi-resolution seeding: hexagonal lattices at a
    geometric ladder of spacings; each point is kept where the local target
    spacing falls in its level's band.  Avoids the density voids of random
    thinning; the spring relaxation evens out the level transitions."""
    R = scene.R_tr
    probe = np.column_stack(
        [np.linspace(-R, R, 201).repeat(201), np.tile(np.linspace(-R, R, 201), 201)]
    )
    s_all = spacing_fn(probe)
    s_min = float(np.min(s_all))
    s_max = float(np.max(s_all))
    ratio = math.sqrt(2.0)
    n_levels = max(int(math.ceil(math.log(s_max / s_min) / math.log(ratio))), 1)
    pts_out = []
    for lev in range(n_levels):
        s_lev = s_min * ratio**lev
        lo = s_lev if lev > 0 else 0.0
        hi = s_lev * ratio if lev < n_levels - 1 else np.inf
        lattice = _hex_lattice(R, s_lev)
        r = np.hypot(lattice[:, 0], lattice[:, 1])
        lattice = lattice[r < R]
        local = spacing_fn(lattice)
        band = (local >= lo) & (local < hi)
        kept = lattice[band]
        kept = kept + rng.uniform(-0.08, 0.08, kept.shape) * s_lev
        pts_out.append(kept)
    return np.concatenate(pts_out)


def _filter_interior(scene: Scene, pts: np.ndarray, spacing_fn, boundary: np.ndarray):
    local = spacing_fn(pts)
    r = np.hypot(pts[:, 0], pts[:, 1])
    ok = (r < scene.R_tr - 0.5 * local) & (scene.obstacle_distance(pts) > 0.5 * local)
    pts, local = pts[ok], local[ok]
    tree = cKDTree(boundary)
    dist, idx = tree.query(pts, k=1)
    # clearance relative to both the local spacing and the (possibly much
    # finer) boundary sampling it competes with
    bnd_local = spacing_fn(boundary[idx])
    keep = (dist > 0.65 * local) & (dist > 0.75 * bnd_local)
    return pts[keep]


def _keep_mask(scene: Scene, nodes: np.ndarray, tris: np.ndarray) -> np.ndarray:
    bary = nodes[tris].mean(axis=1)
    return scene.in_domain(bary)


def _edges_of(tris: np.ndarray) -> np.ndarray:
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    return np.sort(e, axis=1)


def _smooth(
    scene: Scene,
    nodes: np.ndarray,
    movable: np.ndarray,
    spacing_fn,
    rounds: int = SMOOTH_ROUNDS,
) -> np.ndarray:
    """Distmesh-style spring relaxation with periodic retriangulation."""
    pts = nodes.copy()
    for it in range(rounds):
        tri = Delaunay(pts)
        keep = _keep_mask(scene, pts, tri.simplices)
        edges = np.unique(_edges_of(tri.simplices[keep]), axis=0)
        vec = pts[edges[:, 1]] - pts[edges[:, 0]]
        lengths = np.linalg.norm(vec, axis=1)
        mid = 0.5 * (pts[edges[:, 0]] + pts[edges[:, 1]])
        L0 = 1.18 * spacing_fn(mid)
        f = np.maximum(L0 - lengths, 0.0) / np.maximum(lengths, 1e-30)
        force = f[:, None] * vec
        disp = np.zeros_like(pts)
        np.add.at(disp, edges[:, 0], -force)
        np.add.at(disp, edges[:, 1], force)
        step = 0.25 * disp
        new_pts = pts + np.where(movable[:, None], step, 0.0)
        # revert points that left the domain or hug the boundary too closely
        local = spacing_fn(new_pts)
        r = np.hypot(new_pts[:, 0], new_pts[:, 1])
        bad = movable & (
            (r > scene.R_tr - 0.35 * local)
            | (scene.obstacle_distance(new_pts) < 0.35 * local)
        )
        new_pts[bad] = pts[bad]
        pts = new_pts
    return pts


def _assemble(scene: Scene, nodes, origins, size_fn) -> Mesh:
    tri = Delaunay(nodes)
    keep = _keep_mask(scene, nodes, tri.simplices)
    tris = _orient(nodes, tri.simplices[keep])
    return _finalize(scene, nodes, origins, tris, size_fn)


def _finalize(scene, nodes, origins, tris, size_fn) -> Mesh:
    mesh = Mesh(
        nodes=nodes,
        triangles=tris,
        boundary_edges=[],
        element_tags=np.zeros(len(tris), dtype=int),
        node_origin=origins,
    )
    _tag_elements(scene, mesh)
    _extract_boundary(scene, mesh)
    return mesh


def _tag_elements(scene: Scene, mesh: Mesh):
    bary = mesh.barycenters()
    tags = np.zeros(len(bary), dtype=int)
    names = tuple(scene.cover.regions.keys())
    for bit, tag in enumerate(names):
        member = scene.cover.regions[tag].contains(bary)
        tags |= member.astype(int) << bit
    mesh.element_tags = tags
    mesh.tag_names = names


def _extract_boundary(scene: Scene, mesh: Mesh):
    edges = _edges_of(mesh.triangles)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    bnd = uniq[counts == 1]
    mesh.boundary_edges = []
    mids = 0.5 * (mesh.nodes[bnd[:, 0]] + mesh.nodes[bnd[:, 1]])
    r = np.hypot(mids[:, 0], mids[:, 1])
    # an edge belongs to the truncation circle when it is closer to it than
    # to any obstacle
    d_tr = np.abs(scene.R_tr - r)
    d_obs = np.abs(scene.obstacle_distance(mids))
    for (i, j), dt, do in zip(bnd, d_tr, d_obs):
        tag = TAG_TRUNCATION if dt < do else TAG_OBSTACLE
        mesh.boundary_edges.append((int(i), int(j), tag))


def _cleanup(scene: Scene, nodes, origins, size_fn) -> Mesh:
    """Iteratively remove the interior/boundary culprits of sub-threshold
    angles until the mesh passes, re-triangulating each round."""
    pts, orig = nodes, origins
    drop_tris: set[tuple] = set()
    for round_ in range(CLEANUP_ROUNDS):
        tri = Delaunay(pts)
        keep = _keep_mask(scene, pts, tri.simplices)
        tris = _orient(pts, tri.simplices[keep])
        if drop_tris:
            key = [tuple(sorted(t)) not in drop_tris for t in tris]
            tris = tris[key]
        mesh = Mesh(pts, tris, [], np.zeros(len(tris), dtype=int), node_origin=orig)
        angles = mesh.min_angles()
        bad = np.nonzero(angles < MIN_ANGLE_DEG)[0]
        if len(bad) == 0:
            return _finalize(scene, pts, orig, tris, size_fn)

        interior_to_drop: set[int] = set()
        relax: set[int] = set()
        edge_count = {}
        for t in tris:
            for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
                e = (min(a, b), max(a, b))
                edge_count[e] = edge_count.get(e, 0) + 1
        for ti in bad:
            t = tris[ti]
            inter = [v for v in t if orig[v] == _INTERIOR]
            if inter and angles[ti] >= 10.0 and round_ % 3 != 2:
                relax.update(inter)   # marginal: local Laplacian fix
                continue
            if inter:
                interior_to_drop.update(inter)
                continue
            # all-boundary sliver: drop it if it has a free (boundary) edge
            has_free = any(
                edge_count[(min(a, b), max(a, b))] == 1
                for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0]))
            )
            if has_free:
                drop_tris.add(tuple(sorted(t)))
            else:
                # interior all-boundary sliver: no movable node to rescue it
                drop_tris.add(tuple(sorted(t)))
        if relax and not interior_to_drop:
            neighbors: dict[int, set[int]] = {v: set() for v in relax}
            for t in tris:
                for v in t:
                    if v in neighbors:
                        neighbors[v].update(int(u) for u in t if u != v)
            pts = pts.copy()
            for v, nbrs in neighbors.items():
                cand = pts[list(nbrs)].mean(axis=0)
                local = float(size_fn(cand[None, :])[0])
                r = math.hypot(cand[0], cand[1])
                inside = (
                    r < scene.R_tr - 0.3 * local
                    and float(scene.obstacle_distance(cand[None, :])[0]) > 0.3 * local
                )
                if inside:
                    pts[v] = cand
            drop_tris.clear()
        elif interior_to_drop:
            mask = np.ones(len(pts), dtype=bool)
            mask[list(interior_to_drop)] = False
            pts, orig = pts[mask], orig[mask]
            drop_tris.clear()   # indices shifted; recompute
            pts = _smooth(scene, pts, orig == _INTERIOR, size_fn, rounds=2)
    raise MeshQualityError(
        f"mesh cleanup failed to reach min angle {MIN_ANGLE_DEG} deg "
        f"after {CLEANUP_ROUNDS} rounds"
    )


def generate_mesh(scene: Scene, size_field, seed: int = 0) -> Mesh:
    """Generate a conforming triangulation of the computational domain whose
    element diameters follow the size field.

    size_field is any callable mapping (N, 2) points to positive sizes.
    """
    rng = np.random.default_rng(seed)

    def spacing_fn(pts):
        return SPACING_FACTOR * np.asarray(size_field(pts), dtype=float)

    R = scene.R_tr
    probe = np.column_stack(
        [np.linspace(-R, R, 101).repeat(101), np.tile(np.linspace(-R, R, 101), 101)]
    )
    s_min = float(np.min(spacing_fn(probe)))
    if s_min < MIN_SIZE_GUARD * scene.diameter:
        raise MeshQualityError(
            f"size field minimum {s_min:.3g} below guard "
            f"{MIN_SIZE_GUARD * scene.diameter:.3g}"
        )

    boundary_pts, boundary_orig = _boundary_loops(scene, spacing_fn)
    interior = _seed_interior(scene, spacing_fn, rng)
    interior = _filter_interior(scene, interior, spacing_fn, boundary_pts)

    nodes = np.concatenate([boundary_pts, interior])
    origins = np.concatenate(
        [boundary_orig, np.full(len(interior), _INTERIOR, dtype=int)]
    )
    movable = origins == _INTERIOR
    nodes = _smooth(scene, nodes, movable, spacing_fn)
    mesh = _cleanup(scene, nodes, origins, spacing_fn)

    # fill any underfilled pockets: seed the barycenters of oversized
    # elements and relax again
    for _ in range(3):
        diam = mesh.diameters()
        allowed = DIAMETER_SLACK * np.asarray(
            size_field(mesh.barycenters()), dtype=float
        )
        over = diam / allowed > 0.92
        if not np.any(over):
            break
        extra = mesh.barycenters()[over]
        nodes = np.concatenate([mesh.nodes, extra])
        origins = np.concatenate(
            [mesh.node_origin, np.full(len(extra), _INTERIOR, dtype=int)]
        )
        nodes = _smooth(scene, nodes, origins == _INTERIOR, spacing_fn, rounds=3)
        mesh = _cleanup(scene, nodes, origins, spacing_fn)

    diam = mesh.diameters()
    allowed = DIAMETER_SLACK * np.asarray(size_field(mesh.barycenters()), dtype=float)
    worst = float(np.max(diam / allowed))
    if worst > 1.0:
        raise MeshQualityError(f"element diameter exceeds size field by {worst:.3f}x")
    return mesh


def refine_uniform(mesh: Mesh, scene: Scene | None = None) -> Mesh:
    """Split every triangle into four via edge midpoints (angles preserved,
    meshwidth halved).  Boundary midpoints stay on the straight edges, so
    the polygonal domain is unchanged."""
    nodes = list(map(tuple, mesh.nodes))
    node_arr = mesh.nodes
    edge_mid: dict[tuple[int, int], int] = {}
    new_nodes = [node_arr]
    origin = mesh.node_origin
    new_origin = [origin if origin is not None else np.zeros(len(node_arr), dtype=int)]
    next_idx = len(node_arr)
    mids = []

    def midpoint(a: int, b: int) -> int:
        nonlocal next_idx
        key = (min(a, b), max(a, b))
        if key not in edge_mid:
            edge_mid[key] = next_idx
            mids.append(0.5 * (node_arr[a] + node_arr[b]))
            next_idx += 1
        return edge_mid[key]

    tris = []
    for (a, b, c) in mesh.triangles:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        tris.extend([(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)])

    all_nodes = np.concatenate([node_arr, np.array(mids)]) if mids else node_arr
    mid_origin = np.zeros(len(mids), dtype=int)
    bnd_nodes: dict[tuple[int, int], str] = {
        (min(i, j), max(i, j)): tag for (i, j, tag) in mesh.boundary_edges
    }
    boundary_edges = []
    for (i, j), tag in bnd_nodes.items():
        m = edge_mid.get((i, j))
        if m is None:
            continue
        boundary_edges.append((i, m, tag))
        boundary_edges.append((m, j, tag))
        if origin is not None:
            mid_origin[m - len(node_arr)] = (
                origin[i] if origin[i] == origin[j] else origin[i]
            )

    new_origin = (
        np.concatenate([new_origin[0], mid_origin]) if mids else new_origin[0]
    )
    tris = _orient(all_nodes, np.array(tris, dtype=int))
    out = Mesh(
        nodes=all_nodes,
        triangles=tris,
        boundary_edges=boundary_edges,
        element_tags=np.repeat(mesh.element_tags, 4),
        tag_names=mesh.tag_names,
        node_origin=new_origin,
    )
    if scene is not None:
        _tag_elements(scene, out)
    return out


def write_mesh(mesh: Mesh, path: str):
    """Line-based text format: header `nodes N` / `triangles M`, then N node
    lines `x y`, M triangle lines `i j k region-bitmask`, and one line
    `i j tag` per boundary edge (0-based indices)."""
    with open(path, "w") as fh:
        fh.write(f"nodes {mesh.n_nodes}\n")
        fh.write(f"triangles {mesh.n_triangles}\n")
        for x, y in mesh.nodes:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        for (a, b, c), tag in zip(mesh.triangles, mesh.element_tags):
            fh.write(f"{a} {b} {c} {tag}\n")
        for i, j, tag in mesh.boundary_edges:
            fh.write(f"{i} {j} {tag}\n")


def read_mesh(path: str) -> Mesh:
    with open(path) as fh:
        header1 = fh.readline().split()
        header2 = fh.readline().split()
        if header1[0] != "nodes" or header2[0] != "triangles":
            raise ValueError("malformed mesh header")
        n, m = int(header1[1]), int(header2[1])
        nodes = np.array(
            [[float(v) for v in fh.readline().split()] for _ in range(n)]
        )
        tris = np.empty((m, 3), dtype=int)
        tags = np.empty(m, dtype=int)
        for t in range(m):
            a, b, c, g = fh.readline().split()
            tris[t] = (int(a), int(b), int(c))
            tags[t] = int(g)
        boundary = []
        for line in fh:
            parts = line.split()
            if len(parts) != 3:
                continue
            boundary.append((int(parts[0]), int(parts[1]), parts[2]))
    return Mesh(nodes=nodes, triangles=tris, boundary_edges=boundary, element_tags=tags)
