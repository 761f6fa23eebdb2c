"""Weighted-digraph path algebra: loops, loop decomposition, and the
simple-path bound on Neumann series.

A path is an ordered list of chained directed edges.  Every path decomposes
uniquely into a non-intersecting *spine* plus a sequence of *simple loops*
extracted at first crossings; summing weights over simple paths and simple
loops then bounds (I - W)^{-1} componentwise whenever the total simple-loop
weight c is below 1:

    T* <= sum_m W^m <= T* / (1 - c)   (componentwise).

Node indices are arbitrary hashables in the path machinery; the matrix
operations use integer nodes 0..n-1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Exhaustive loop/path enumeration guard: the covers this is used for have
# ~7 nodes (2*M_I + M_P), so a hard cap keeps the combinatorics sane.
N_ENUM = 12

DEFAULT_NEUMANN_TERMS = 200
NEUMANN_EARLY_EXIT = 1e-14
CERT_TOL = 1e-9


@dataclass(frozen=True)
class Path:
    """A finite path: a tuple of directed edges (i, j) chained head-to-tail.

    The empty path is allowed and acts as the multiplicative unit under
    concatenation.
    """

    edges: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        for (a, b) in zip(self.edges, self.edges[1:]):
            if a[1] != b[0]:
                raise ValueError(f"edges do not chain: {a} then {b}")

    def __len__(self) -> int:
        return len(self.edges)

    @property
    def is_empty(self) -> bool:
        return not self.edges

    @property
    def nodes(self) -> tuple[int, ...]:
        """Node sequence p(1), ..., p(|p|+1); empty for the empty path."""
        if not self.edges:
            return ()
        return (self.edges[0][0],) + tuple(e[1] for e in self.edges)

    @property
    def is_nonintersecting(self) -> bool:
        seq = self.nodes
        return len(set(seq)) == len(seq)

    @property
    def is_loop(self) -> bool:
        return bool(self.edges) and self.edges[0][0] == self.edges[-1][1]

    @property
    def is_simple_loop(self) -> bool:
        """A loop whose only repeated node is its base point."""
        if not self.is_loop:
            return False
        interior = self.nodes[:-1]
        return len(set(interior)) == len(interior)

    def concat(self, other: "Path") -> "Path":
        return Path(self.edges + other.edges)

    def weight(self, W: np.ndarray) -> float:
        w = 1.0
        for (i, j) in self.edges:
            w *= W[i, j]
        return w


EMPTY = Path()


def splice(p: Path, lo: int, hi: int) -> Path:
    """Edges lo..hi-1 of p, 1-based; p[l, l) is the empty path."""
    if not (1 <= lo <= hi <= len(p) + 1):
        raise IndexError(f"splice indices ({lo}, {hi}) out of range for |p|={len(p)}")
    return Path(p.edges[lo - 1 : hi - 1])


def first_loop(p: Path) -> tuple[Path, Path, int | None]:
    """Extract the loop at the first crossing of p.

    Returns (L, E, l0).  If p never revisits a node, L is empty, E = p and
    l0 is None.  Otherwise l_x is the first position whose node already
    appeared, l0 its earlier occurrence, L = p[l0, l_x) (a simple loop) and
    E = p[1, l0) . p[l_x, |p|+1).  Always |p| = |L| + |E|, and re-inserting
    L into E at the first occurrence of its base node recreates p.
    """
    seq = p.nodes
    seen: dict[int, int] = {}
    for pos, node in enumerate(seq, start=1):
        if node in seen:
            l0, lx = seen[node], pos
            L = splice(p, l0, lx)
            E = splice(p, 1, l0).concat(splice(p, lx, len(p) + 1))
            return L, E, l0
        seen[node] = pos
    return EMPTY, p, None


@dataclass(frozen=True)
class LoopDecomposition:
    """Spine (non-intersecting) plus simple loops in extraction order."""

    spine: Path
    loops: tuple[Path, ...]

    def edge_multiset(self) -> dict[tuple[int, int], int]:
        counts: dict[tuple[int, int], int] = {}
        for e in self.spine.edges:
            counts[e] = counts.get(e, 0) + 1
        for loop in self.loops:
            for e in loop.edges:
                counts[e] = counts.get(e, 0) + 1
        return counts

    def total_length(self) -> int:
        return len(self.spine) + sum(len(loop) for loop in self.loops)

    def weight(self, W: np.ndarray) -> float:
        w = self.spine.weight(W)
        for loop in self.loops:
            w *= loop.weight(W)
        return w


def loop_decompose(p: Path) -> LoopDecomposition:
    """Iterate first-crossing extraction until the remainder is non-intersecting."""
    loops: list[Path] = []
    current = p
    while True:
        L, E, _ = first_loop(current)
        if L.is_empty:
            return LoopDecomposition(spine=current, loops=tuple(loops))
        loops.append(L)
        current = E


def recreate(dec: LoopDecomposition) -> Path:
    """Inverse of loop_decompose: re-insert loops, last extracted first, each
    at the first occurrence of its base node."""
    p = dec.spine
    for loop in reversed(dec.loops):
        base = loop.edges[0][0]
        seq = p.nodes
        if not seq:
            if p.is_empty and (loop.edges[-1][1] == base):
                p = loop
                continue
            raise ValueError("loop base absent from empty remainder")
        pos = seq.index(base) + 1  # 1-based node position
        p = splice(p, 1, pos).concat(loop).concat(splice(p, pos, len(p) + 1))
    return p


@dataclass
class WeightedDigraph:
    """Complete digraph on n nodes with a nonnegative weight matrix."""

    W: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        if self.W.ndim != 2 or self.W.shape[0] != self.W.shape[1]:
            raise ValueError("W must be a square matrix")
        if np.any(self.W < 0) or not np.all(np.isfinite(self.W)):
            raise ValueError("W must have finite nonnegative entries")

    @property
    def n(self) -> int:
        return self.W.shape[0]

    def _check_enum(self):
        if self.n > N_ENUM:
            raise ValueError(
                f"exhaustive enumeration limited to {N_ENUM} nodes, got {self.n}"
            )

    def _adjacency(self) -> list[list[int]]:
        """Successor lists over nonzero-weight edges only."""
        return [list(np.nonzero(self.W[i])[0]) for i in range(self.n)]


def enumerate_simple_loops(g: WeightedDigraph) -> tuple[list[Path], float]:
    """All simple loops of g (rotations at distinct base points counted as
    distinct paths) and their total weight c.

    A 2-cycle over nodes a, b therefore appears twice, once based at a and
    once based at b, so its weight contributes twice to c.
    """
    g._check_enum()
    adj = g._adjacency()
    loops: list[Path] = []

    def extend(start: int, node: int, visited: set[int], edges: list[tuple[int, int]]):
        for nxt in adj[node]:
            if nxt == start:
                loops.append(Path(tuple(edges) + ((node, start),)))
            elif nxt not in visited:
                visited.add(nxt)
                edges.append((node, nxt))
                extend(start, nxt, visited, edges)
                edges.pop()
                visited.remove(nxt)

    for s in range(g.n):
        extend(s, s, {s}, [])

    c = float(sum(loop.weight(g.W) for loop in loops))
    return loops, c


def simple_path_matrix(g: WeightedDigraph) -> np.ndarray:
    """T*[i, j] = sum of weights of non-intersecting i -> j paths; T*[i, i] = 1
    (the empty path is the only non-intersecting loop)."""
    g._check_enum()
    adj = g._adjacency()
    T = np.eye(g.n)

    def extend(target: int, node: int, visited: set[int], w: float, out: list[float]):
        for nxt in adj[node]:
            if nxt in visited:
                continue
            w2 = w * g.W[node, nxt]
            if nxt == target:
                out.append(w2)
            else:
                visited.add(nxt)
                extend(target, nxt, visited, w2, out)
                visited.remove(nxt)

    for i in range(g.n):
        for j in range(g.n):
            if i == j:
                continue
            acc: list[float] = []
            extend(j, i, {i}, 1.0, acc)
            T[i, j] = sum(acc)
    return T


@dataclass
class CertResult:
    """Outcome of the simple-path Neumann-series certification."""

    n: int
    c: float
    T_star: np.ndarray
    S: np.ndarray
    terms_used: int
    condition_met: bool
    passed: bool
    max_violation: float

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "c": self.c,
            "condition_met": self.condition_met,
            "pass": self.passed,
            "max_violation": self.max_violation,
            "terms_used": self.terms_used,
        }


def neumann_partial_sum(
    W: np.ndarray, n_terms: int = DEFAULT_NEUMANN_TERMS
) -> tuple[np.ndarray, int]:
    """S = sum_{m=0..n_terms} W^m, with early exit once the increment's
    largest entry drops below NEUMANN_EARLY_EXIT."""
    S = np.eye(W.shape[0])
    term = np.eye(W.shape[0])
    used = 0
    for m in range(1, n_terms + 1):
        term = term @ W
        S = S + term
        used = m
        if term.max() < NEUMANN_EARLY_EXIT:
            break
    return S, used


def certify_bound(
    g: WeightedDigraph,
    n_terms: int = DEFAULT_NEUMANN_TERMS,
    tol_abs: float = CERT_TOL,
) -> CertResult:
    """Check T* <= S <= T*/(1-c) componentwise, S the Neumann partial sum.

    When c >= 1 the hypothesis fails and the result only reports that (the
    series may or may not diverge); no bound is asserted.
    """
    _, c = enumerate_simple_loops(g)
    T = simple_path_matrix(g)
    S, used = neumann_partial_sum(g.W, n_terms)
    if c >= 1.0:
        return CertResult(g.n, c, T, S, used, False, False, float("nan"))
    upper = T / (1.0 - c)
    lower_gap = T - S  # should be <= tol
    upper_gap = S - upper
    max_violation = float(max(lower_gap.max(), upper_gap.max()))
    passed = bool(max_violation <= tol_abs)
    return CertResult(g.n, c, T, S, used, True, passed, max_violation)
