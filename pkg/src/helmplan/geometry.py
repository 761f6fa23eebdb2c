"""Computational scenes: smooth obstacles, truncation disk, PML annulus and
the overlapping K/V/I/P region cover.

All obstacle boundaries are C^1 closed curves (straight faces joined by
circular corner arcs, or plain circles).  Scenes are immutable after
construction and every query is pure, so they are safe to share across
workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import shapely.geometry as sgeom
import shapely.ops

SQRT2 = math.sqrt(2.0)

# Benchmark two-wall cavity dimensions.
L1 = 0.7 * SQRT2          # wall thickness (x extent)
L2 = 1.3 * SQRT2          # wall height (y extent)
X1 = 3.0 * SQRT2 / 2.0    # distance between wall centers
L_GAP = 0.8 * SQRT2       # cavity gap, X1 - L1
DELTA = SQRT2 / 8.0       # cover inflation parameter
R_PML_MINUS = 2.2
R_TR = 2.7
CORNER_RADIUS = 0.05 * L1
DEFAULT_SHIFT = 0.3 * L2
CAP_FACTOR = 1.05         # Omega_P begins at CAP_FACTOR * R_pml_minus


def _as_points(x) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    if pts.shape[-1] != 2:
        raise ValueError("points must have shape (..., 2)")
    return pts


def _subdivide(lo: float, hi: float, step_fn: Callable[[float], float]) -> np.ndarray:
    """Partition [lo, hi] into steps no larger than the local step function,
    rescaled so the last point lands exactly on hi (no sliver segments)."""
    knots = [lo]
    while knots[-1] < hi:
        knots.append(knots[-1] + max(step_fn(knots[-1]), 1e-12))
    arr = np.asarray(knots)
    # shrink uniformly so the walk ends exactly at hi (steps only get smaller)
    return lo + (arr - lo) * (hi - lo) / (arr[-1] - lo)


class ClosedCurve:
    """A closed, non-self-intersecting C^1 boundary curve."""

    def contains(self, points) -> np.ndarray:
        """Boolean mask: strictly inside the curve."""
        return self.signed_distance(points) < 0.0

    def signed_distance(self, points) -> np.ndarray:
        raise NotImplementedError

    def ray_intersect_batch(
        self, origins: np.ndarray, directions: np.ndarray, t_min: float
    ) -> tuple[np.ndarray, np.ndarray]:
        """Smallest intersection parameter t > t_min per ray, with outward
        normals; t = inf (and normal = 0) where the ray misses."""
        raise NotImplementedError

    def boundary_points(self, size_fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Closed polyline (first point not repeated) sampled so that each
        segment is no longer than the local size-field value."""
        raise NotImplementedError

    def polygon(self, resolution: float = 0.02) -> sgeom.Polygon:
        pts = self.boundary_points(lambda x: np.full(len(x), resolution))
        return sgeom.Polygon(pts)

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Circle(ClosedCurve):
    center: tuple[float, float]
    radius: float

    def signed_distance(self, points) -> np.ndarray:
        pts = _as_points(points)
        return np.hypot(pts[:, 0] - self.center[0], pts[:, 1] - self.center[1]) - self.radius

    def ray_intersect_batch(self, origins, directions, t_min):
        X = _as_points(origins)
        D = _as_points(directions)
        w = X - np.asarray(self.center)
        b = np.einsum("ij,ij->i", w, D)
        c = np.einsum("ij,ij->i", w, w) - self.radius**2
        disc = b * b - c
        hit = disc >= 0.0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t_best = np.full(len(X), np.inf)
        for root in (-b - sq, -b + sq):
            ok = hit & (root > t_min) & (root < t_best)
            t_best = np.where(ok, root, t_best)
        normals = np.zeros_like(X)
        good = np.isfinite(t_best)
        if np.any(good):
            h = X[good] + t_best[good, None] * D[good]
            n = (h - np.asarray(self.center)) / self.radius
            normals[good] = n
        return t_best, normals

    def boundary_points(self, size_fn):
        thetas = _subdivide(
            0.0,
            2.0 * math.pi,
            lambda th: min(
                float(
                    size_fn(
                        np.array(self.center)[None, :]
                        + self.radius * np.array([[math.cos(th), math.sin(th)]])
                    )[0]
                )
                / self.radius,
                math.pi / 8,
            ),
        )[:-1]
        return np.array(self.center) + self.radius * np.column_stack(
            [np.cos(thetas), np.sin(thetas)]
        )

    def to_dict(self) -> dict:
        return {"type": "circle", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class RoundedRectangle(ClosedCurve):
    """Axis-aligned rectangle with circular corner arcs (C^1 boundary)."""

    center: tuple[float, float]
    half_width: float
    half_height: float
    corner_radius: float

    def __post_init__(self):
        if self.corner_radius <= 0 or self.corner_radius >= min(self.half_width, self.half_height):
            raise ValueError("corner radius must lie in (0, min half-extent)")

    @property
    def _core(self) -> tuple[float, float]:
        """Half extents of the inner (corner-center) box."""
        return self.half_width - self.corner_radius, self.half_height - self.corner_radius

    def signed_distance(self, points) -> np.ndarray:
        pts = _as_points(points)
        ax, ay = self._core
        q = np.abs(pts - np.asarray(self.center)) - np.array([ax, ay])
        qp = np.maximum(q, 0.0)
        outer = np.hypot(qp[:, 0], qp[:, 1])
        inner = np.minimum(np.maximum(q[:, 0], q[:, 1]), 0.0)
        return outer + inner - self.corner_radius

    def ray_intersect_batch(self, origins, directions, t_min):
        X = _as_points(origins)
        D = _as_points(directions)
        n = len(X)
        cx, cy = self.center
        ax, ay = self._core
        rc = self.corner_radius
        cand_t = []
        cand_n = []

        # Four flat faces: (coordinate axis, face offset, outward normal).
        faces = [
            (0, cx + self.half_width, np.array([1.0, 0.0]), 1, cy, ay),
            (0, cx - self.half_width, np.array([-1.0, 0.0]), 1, cy, ay),
            (1, cy + self.half_height, np.array([0.0, 1.0]), 0, cx, ax),
            (1, cy - self.half_height, np.array([0.0, -1.0]), 0, cx, ax),
        ]
        for axis, offset, normal, other, ocenter, oext in faces:
            d = D[:, axis]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (offset - X[:, axis]) / d
            hit_other = X[:, other] + t * D[:, other]
            ok = (np.abs(d) > 1e-300) & (t > t_min) & (np.abs(hit_other - ocenter) <= oext)
            cand_t.append(np.where(ok, t, np.inf))
            cand_n.append(np.broadcast_to(normal, (n, 2)))

        # Four corner arcs.
        for sx in (-1.0, 1.0):
            for sy in (-1.0, 1.0):
                cc = np.array([cx + sx * ax, cy + sy * ay])
                w = X - cc
                b = np.einsum("ij,ij->i", w, D)
                c = np.einsum("ij,ij->i", w, w) - rc * rc
                disc = b * b - c
                has = disc >= 0.0
                sq = np.sqrt(np.where(has, disc, 0.0))
                for root in (-b - sq, -b + sq):
                    h = X + root[:, None] * D - cc
                    quad = (sx * h[:, 0] >= -1e-12) & (sy * h[:, 1] >= -1e-12)
                    ok = has & (root > t_min) & quad
                    cand_t.append(np.where(ok, root, np.inf))
                    nh = np.where(ok[:, None], h / rc, 0.0)
                    cand_n.append(nh)

        T = np.stack(cand_t, axis=1)
        best = np.argmin(T, axis=1)
        t_best = T[np.arange(n), best]
        normals = np.zeros((n, 2))
        good = np.isfinite(t_best)
        if np.any(good):
            N = np.stack(cand_n, axis=1)
            normals[good] = N[np.arange(n), best][good]
        return t_best, normals

    def boundary_points(self, size_fn):
        cx, cy = self.center
        ax, ay = self._core
        rc = self.corner_radius
        # Piecewise boundary, counterclockwise from the bottom-right arc start.
        pieces: list[tuple] = []
        # (kind, data): straight segments between arc endpoints, arcs at corners.
        corners = [
            (cx + ax, cy - ay, -0.5 * math.pi, 0.0),
            (cx + ax, cy + ay, 0.0, 0.5 * math.pi),
            (cx - ax, cy + ay, 0.5 * math.pi, math.pi),
            (cx - ax, cy - ay, math.pi, 1.5 * math.pi),
        ]
        for idx, (ccx, ccy, th0, th1) in enumerate(corners):
            pieces.append(("arc", (ccx, ccy, th0, th1)))
            nxt = corners[(idx + 1) % 4]
            a0 = np.array([ccx + rc * math.cos(th1), ccy + rc * math.sin(th1)])
            a1 = np.array(
                [nxt[0] + rc * math.cos(nxt[2]), nxt[1] + rc * math.sin(nxt[2])]
            )
            pieces.append(("line", (a0, a1)))

        out: list[np.ndarray] = []
        for kind, data in pieces:
            if kind == "arc":
                ccx, ccy, th0, th1 = data

                def arc_step(th, ccx=ccx, ccy=ccy, th0=th0, th1=th1):
                    pt = np.array([[ccx + rc * math.cos(th), ccy + rc * math.sin(th)]])
                    return min(float(size_fn(pt)[0]) / rc, (th1 - th0) / 2)

                thetas = _subdivide(th0, th1, arc_step)[:-1]
                out.append(
                    np.column_stack(
                        [ccx + rc * np.cos(thetas), ccy + rc * np.sin(thetas)]
                    )
                )
            else:
                a0, a1 = data
                length = float(np.linalg.norm(a1 - a0))
                direction = (a1 - a0) / length

                def line_step(s, a0=a0, direction=direction, length=length):
                    pt = (a0 + s * direction)[None, :]
                    return min(float(size_fn(pt)[0]), length)

                ss = _subdivide(0.0, length, line_step)[:-1]
                out.append(a0[None, :] + ss[:, None] * direction[None, :])
        return np.concatenate(out)

    def to_dict(self) -> dict:
        return {
            "type": "rounded_rectangle",
            "center": list(self.center),
            "half_width": self.half_width,
            "half_height": self.half_height,
            "corner_radius": self.corner_radius,
        }


def _curve_from_dict(d: dict) -> ClosedCurve:
    if d["type"] == "circle":
        return Circle(tuple(d["center"]), d["radius"])
    if d["type"] == "rounded_rectangle":
        return RoundedRectangle(
            tuple(d["center"]), d["half_width"], d["half_height"], d["corner_radius"]
        )
    raise ValueError(f"unknown obstacle type {d['type']!r}")


@dataclass(frozen=True)
class RegionPredicate:
    """Membership test plus a polygonal outline for area computations.

    The predicate and the outline are built independently (inequalities vs.
    shapely boolean operations) so that one can validate the other.
    """

    tag: str
    fn: Callable[[np.ndarray], np.ndarray]
    outline: sgeom.base.BaseGeometry

    def contains(self, points) -> np.ndarray:
        return self.fn(_as_points(points))

    @property
    def area(self) -> float:
        return self.outline.area

    @property
    def is_empty(self) -> bool:
        return self.outline.is_empty


@dataclass(frozen=True)
class RegionCover:
    regions: dict[str, RegionPredicate]
    params: dict = field(default_factory=dict)

    def tags(self) -> list[str]:
        return list(self.regions)

    def __getitem__(self, tag: str) -> RegionPredicate:
        return self.regions[tag]


@dataclass(frozen=True)
class Scene:
    """Obstacles + truncation disk + PML onset + region cover."""

    obstacles: tuple[ClosedCurve, ...]
    R_pml_minus: float
    R_tr: float
    cover: RegionCover

    def __post_init__(self):
        if not self.R_pml_minus < self.R_tr:
            raise ValueError("R_pml_minus must be below R_tr")

    @property
    def diameter(self) -> float:
        return 2.0 * self.R_tr

    def inside_obstacle(self, points) -> np.ndarray:
        pts = _as_points(points)
        mask = np.zeros(len(pts), dtype=bool)
        for obs in self.obstacles:
            mask |= obs.contains(pts)
        return mask

    def obstacle_distance(self, points) -> np.ndarray:
        """Signed distance to the nearest obstacle (negative inside)."""
        pts = _as_points(points)
        if not self.obstacles:
            return np.full(len(pts), np.inf)
        return np.min(np.stack([o.signed_distance(pts) for o in self.obstacles]), axis=0)

    def in_domain(self, points) -> np.ndarray:
        """Inside the truncated computational domain Omega."""
        pts = _as_points(points)
        r = np.hypot(pts[:, 0], pts[:, 1])
        return (r < self.R_tr) & ~self.inside_obstacle(pts)

    def obstacle_polygons(self, resolution: float = 0.02) -> list[sgeom.Polygon]:
        return [o.polygon(resolution) for o in self.obstacles]


def classify_point(scene: Scene, x) -> set[str]:
    """Region tags whose predicate holds at x (the cover overlaps, so the
    result may contain several tags)."""
    pt = _as_points(x)
    if pt.shape[0] != 1:
        raise ValueError("classify_point takes a single point")
    if scene.inside_obstacle(pt)[0]:
        raise ValueError(f"point {pt[0]} lies inside an obstacle")
    if math.hypot(pt[0, 0], pt[0, 1]) >= scene.R_tr:
        raise ValueError(f"point {pt[0]} lies outside the truncation disk")
    return {tag for tag, reg in scene.cover.regions.items() if reg.contains(pt)[0]}


def boundary_hit(curve: ClosedCurve, origin, direction, eps_hit: float = 0.0):
    """First intersection of origin + t*direction with the curve for
    t > eps_hit, as (t, outward normal); None if the ray misses."""
    o = np.asarray(origin, dtype=float)[None, :]
    d = np.asarray(direction, dtype=float)[None, :]
    t, n = curve.ray_intersect_batch(o, d, eps_hit)
    if not np.isfinite(t[0]):
        return None
    return float(t[0]), n[0]


def _disk(radius: float, quad_segs: int = 256) -> sgeom.Polygon:
    return sgeom.Point(0.0, 0.0).buffer(radius, quad_segs=quad_segs)


def _build_two_wall_cover(
    obstacles: Sequence[ClosedCurve], shift: float, delta: float = DELTA
) -> RegionCover:
    cap_r = CAP_FACTOR * R_PML_MINUS + 0.1   # 2.41: outer cap for V and I
    p_r = CAP_FACTOR * R_PML_MINUS           # 2.31: inner edge of Omega_P
    y_lo, y_hi = -L2 / 2.0, L2 / 2.0 + shift
    x_half = L_GAP / 2.0 + delta

    obst_polys = [o.polygon(0.01) for o in obstacles]
    obst_union = shapely.ops.unary_union(obst_polys)
    cap_disk = _disk(cap_r)

    def k_fn(pts):
        return (
            (np.abs(pts[:, 0]) < x_half)
            & (pts[:, 1] > y_lo)
            & (pts[:, 1] < y_hi)
        )

    def v_fn(pts):
        r = np.hypot(pts[:, 0], pts[:, 1])
        return ((pts[:, 1] > y_hi - delta) | (pts[:, 1] < y_lo + delta)) & (r < cap_r)

    def i_fn(pts):
        r = np.hypot(pts[:, 0], pts[:, 1])
        return (np.abs(pts[:, 0]) > x_half) & (r < cap_r)

    def p_fn(pts):
        return np.hypot(pts[:, 0], pts[:, 1]) > p_r

    k_out = sgeom.box(-x_half, y_lo, x_half, y_hi).difference(obst_union)
    band = sgeom.box(-cap_r, y_hi - delta, cap_r, cap_r).union(
        sgeom.box(-cap_r, -cap_r, cap_r, y_lo + delta)
    )
    v_out = band.intersection(cap_disk).difference(obst_union)
    strips = sgeom.box(x_half, -cap_r, cap_r, cap_r).union(
        sgeom.box(-cap_r, -cap_r, -x_half, cap_r)
    )
    i_out = strips.intersection(cap_disk).difference(obst_union)
    p_out = _disk(R_TR).difference(_disk(p_r))

    return RegionCover(
        regions={
            "K": RegionPredicate("K", k_fn, k_out),
            "V": RegionPredicate("V", v_fn, v_out),
            "I": RegionPredicate("I", i_fn, i_out),
            "P": RegionPredicate("P", p_fn, p_out),
        },
        params={"kind": "two_wall", "delta": delta, "shift": shift},
    )


def build_two_wall_scene(shifted: bool = False, shift: float | None = None) -> Scene:
    """The benchmark cavity: two congruent rounded rectangles separated by a
    gap of L_gap = 0.8*sqrt(2) along the x axis.

    When ``shifted``, the right wall is translated upward (default offset
    0.3*L2), breaking the mirror symmetry of the cavity.
    """
    s = (shift if shift is not None else DEFAULT_SHIFT) if shifted else 0.0
    left = RoundedRectangle((-X1 / 2.0, 0.0), L1 / 2.0, L2 / 2.0, CORNER_RADIUS)
    right = RoundedRectangle((X1 / 2.0, s), L1 / 2.0, L2 / 2.0, CORNER_RADIUS)
    obstacles = (left, right)
    cover = _build_two_wall_cover(obstacles, s)
    return Scene(obstacles, R_PML_MINUS, R_TR, cover)


def build_radial_scene(
    obstacles: Sequence[ClosedCurve],
    R_pml_minus: float,
    R_tr: float,
) -> Scene:
    """Generic nontrapping scene with a radial two-region cover: a single
    interior region I up to just past the PML onset and a PML region P.

    K and V are empty (no trapping assumed); useful for single convex
    obstacles and for the empty free-space scene.
    """
    p_r = CAP_FACTOR * R_pml_minus
    cap_r = min(p_r + 0.1, 0.5 * (p_r + R_tr))
    obst_union = shapely.ops.unary_union([o.polygon(0.01) for o in obstacles])

    def empty_fn(pts):
        return np.zeros(len(pts), dtype=bool)

    def i_fn(pts):
        return np.hypot(pts[:, 0], pts[:, 1]) < cap_r

    def p_fn(pts):
        return np.hypot(pts[:, 0], pts[:, 1]) > p_r

    i_out = _disk(cap_r).difference(obst_union)
    p_out = _disk(R_tr).difference(_disk(p_r))
    empty = sgeom.Polygon()
    cover = RegionCover(
        regions={
            "K": RegionPredicate("K", empty_fn, empty),
            "V": RegionPredicate("V", empty_fn, empty),
            "I": RegionPredicate("I", i_fn, i_out),
            "P": RegionPredicate("P", p_fn, p_out),
        },
        params={"kind": "radial", "cap_radius": cap_r, "p_radius": p_r},
    )
    return Scene(tuple(obstacles), R_pml_minus, R_tr, cover)


def build_disk_scene(
    obstacle_radius: float = 1.0, R_pml_minus: float = 1.9, R_tr: float = 2.9
) -> Scene:
    """Sound-soft disk scatterer with a radial cover (nontrapping)."""
    return build_radial_scene([Circle((0.0, 0.0), obstacle_radius)], R_pml_minus, R_tr)


def build_empty_scene(R_pml_minus: float = R_PML_MINUS, R_tr: float = R_TR) -> Scene:
    return build_radial_scene([], R_pml_minus, R_tr)


def trapped_inclusion_region(scene: Scene) -> sgeom.base.BaseGeometry:
    """Omega_+ intersected with the union of pairwise convex hulls of the
    obstacles: the a-priori envelope of the trapped set."""
    polys = scene.obstacle_polygons(0.01)
    hulls = []
    for i in range(len(polys)):
        for j in range(i, len(polys)):
            hulls.append(polys[i].union(polys[j]).convex_hull)
    if not hulls:
        return sgeom.Polygon()
    region = shapely.ops.unary_union(hulls)
    for p in polys:
        region = region.difference(p)
    return region


def scene_to_json(scene: Scene) -> str:
    from . import FORMAT_VERSION

    doc = {
        "format_version": FORMAT_VERSION,
        "obstacles": [o.to_dict() for o in scene.obstacles],
        "R_pml_minus": scene.R_pml_minus,
        "R_tr": scene.R_tr,
        "cover": dict(scene.cover.params),
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def scene_from_json(text: str) -> Scene:
    doc = json.loads(text)
    obstacles = tuple(_curve_from_dict(d) for d in doc["obstacles"])
    cover_params = doc.get("cover", {})
    kind = cover_params.get("kind", "radial")
    if kind == "two_wall":
        cover = _build_two_wall_cover(
            obstacles, cover_params.get("shift", 0.0), cover_params.get("delta", DELTA)
        )
        return Scene(obstacles, doc["R_pml_minus"], doc["R_tr"], cover)
    return build_radial_scene(list(obstacles), doc["R_pml_minus"], doc["R_tr"])
