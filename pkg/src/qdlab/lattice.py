"""The N x N torus of oriented edges: stars, plaquettes, regions, rectangles.

Conventions (fixed once, used everywhere downstream):

* vertex (x, y) with x, y in Z_N;
* ``h(x, y)`` joins (x, y)--(x+1, y) and points left, i.e. towards (x, y);
* ``v(x, y)`` joins (x, y)--(x, y+1) and points down, i.e. towards (x, y);
* edge index ``2 * (y * N + x) + axis`` with axis 0 horizontal, 1 vertical.

A star is labelled by its vertex, a plaquette by its lower-left corner. For the
star at (x, y) the outgoing edges are the left and lower arms; for the plaquette
at (x, y) the counterclockwise edges are the top and left sides.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, NamedTuple, Sequence

import numpy as np

HORIZONTAL = 0
VERTICAL = 1


class GeometryError(ValueError):
    """Invalid geometry for the chosen torus."""


class Edge(NamedTuple):
    x: int
    y: int
    axis: int  # HORIZONTAL or VERTICAL

    @property
    def tail_offset(self) -> tuple[int, int]:
        return (1, 0) if self.axis == HORIZONTAL else (0, 1)


class SignedEdges(NamedTuple):
    plus: tuple[int, ...]
    minus: tuple[int, ...]

    @property
    def all(self) -> tuple[int, ...]:
        return self.plus + self.minus


class Region:
    """An ordered set of edge indices of a fixed torus."""

    __slots__ = ("torus", "edges", "_set")

    def __init__(self, torus: "TorusGeometry", edges: Iterable[int]):
        s = frozenset(int(e) for e in edges)
        bad = [e for e in s if not 0 <= e < torus.n_edges]
        if bad:
            raise GeometryError(f"edge indices {sorted(bad)} outside torus N={torus.N}")
        self.torus = torus
        self._set = s
        self.edges = tuple(sorted(s))

    def __contains__(self, e: int) -> bool:
        return e in self._set

    def __len__(self) -> int:
        return len(self.edges)

    def __iter__(self):
        return iter(self.edges)

    def __eq__(self, other) -> bool:
        return isinstance(other, Region) and other.torus == self.torus and other._set == self._set

    def __hash__(self) -> int:
        return hash((self.torus.N, self._set))

    def __or__(self, other: "Region") -> "Region":
        return Region(self.torus, self._set | other._set)

    def __and__(self, other: "Region") -> "Region":
        return Region(self.torus, self._set & other._set)

    def __sub__(self, other: "Region") -> "Region":
        return Region(self.torus, self._set - other._set)

    def issubset(self, other: "Region") -> bool:
        return self._set <= other._set

    @property
    def frozen(self) -> frozenset:
        return self._set

    def __repr__(self) -> str:
        return f"Region(N={self.torus.N}, edges={list(self.edges)})"


@dataclass(frozen=True)
class TorusGeometry:
    N: int

    def __post_init__(self):
        if int(self.N) < 2:
            raise GeometryError(f"torus side must be >= 2, got {self.N}")

    @property
    def n_edges(self) -> int:
        return 2 * self.N * self.N

    @property
    def n_vertices(self) -> int:
        return self.N * self.N

    # -- indexing -------------------------------------------------------------
    def edge_index(self, x: int, y: int, axis: int) -> int:
        N = self.N
        return 2 * ((y % N) * N + (x % N)) + axis

    def edge(self, index: int) -> Edge:
        base, axis = divmod(int(index), 2)
        y, x = divmod(base, self.N)
        return Edge(x, y, axis)

    def vertex_index(self, x: int, y: int) -> int:
        return (y % self.N) * self.N + (x % self.N)

    def vertex(self, index: int) -> tuple[int, int]:
        y, x = divmod(int(index), self.N)
        return x, y

    def endpoints(self, e: int) -> tuple[tuple[int, int], tuple[int, int]]:
        """(head, tail) of edge e; the arrow points from tail to head."""
        ed = self.edge(e)
        dx, dy = ed.tail_offset
        return (ed.x, ed.y), ((ed.x + dx) % self.N, (ed.y + dy) % self.N)

    def full(self) -> Region:
        return Region(self, range(self.n_edges))

    def region(self, edges: Iterable[int]) -> Region:
        return Region(self, edges)

    # -- stars and plaquettes -------------------------------------------------
    def star_edges(self, s: int) -> SignedEdges:
        """Edges at vertex s split into (pointing away, pointing towards)."""
        x, y = self.vertex(s)
        left = self.edge_index(x - 1, y, HORIZONTAL)
        right = self.edge_index(x, y, HORIZONTAL)
        down = self.edge_index(x, y - 1, VERTICAL)
        up = self.edge_index(x, y, VERTICAL)
        return SignedEdges(plus=(left, down), minus=(right, up))

    def plaquette_edges(self, p: int) -> SignedEdges:
        """Boundary of plaquette p split into (counterclockwise, clockwise)."""
        x, y = self.vertex(p)
        bottom = self.edge_index(x, y, HORIZONTAL)
        top = self.edge_index(x, y + 1, HORIZONTAL)
        left = self.edge_index(x, y, VERTICAL)
        right = self.edge_index(x + 1, y, VERTICAL)
        return SignedEdges(plus=(top, left), minus=(bottom, right))

    def plaquette_edges_clockwise_start(self, p: int) -> SignedEdges:
        """Same classification derived by walking the boundary clockwise from the top-left corner.

        Used as an independent check of :meth:`plaquette_edges`: an edge is
        clockwise iff its arrow agrees with the clockwise walk.
        """
        x, y = self.vertex(p)
        corners = [(x, y + 1), (x + 1, y + 1), (x + 1, y), (x, y), (x, y + 1)]
        plus, minus = [], []
        for (ax, ay), (bx, by) in zip(corners[:-1], corners[1:]):
            if ay == by:
                e = self.edge_index(min(ax, bx), ay, HORIZONTAL)
            else:
                e = self.edge_index(ax, min(ay, by), VERTICAL)
            head, tail = self.endpoints(e)
            walk_from = (ax % self.N, ay % self.N)
            (minus if tail == walk_from else plus).append(e)
        return SignedEdges(tuple(sorted(plus)), tuple(sorted(minus)))

    @cached_property
    def _star_table(self) -> np.ndarray:
        return np.array([self.star_edges(s).all for s in range(self.n_vertices)])

    @cached_property
    def _plaq_table(self) -> np.ndarray:
        return np.array([self.plaquette_edges(p).all for p in range(self.n_vertices)])

    @cached_property
    def _edge_stars(self) -> list[tuple[int, ...]]:
        out: list[set] = [set() for _ in range(self.n_edges)]
        for s, row in enumerate(self._star_table):
            for e in row:
                out[e].add(s)
        return [tuple(sorted(x)) for x in out]

    @cached_property
    def _edge_plaqs(self) -> list[tuple[int, ...]]:
        out: list[set] = [set() for _ in range(self.n_edges)]
        for p, row in enumerate(self._plaq_table):
            for e in row:
                out[e].add(p)
        return [tuple(sorted(x)) for x in out]

    def stars_of_edge(self, e: int) -> tuple[int, ...]:
        return self._edge_stars[e]

    def plaquettes_of_edge(self, e: int) -> tuple[int, ...]:
        return self._edge_plaqs[e]

    def touching_sets(self, V: Region | Iterable[int]) -> tuple[frozenset, frozenset]:
        """Stars and plaquettes whose edge sets meet V."""
        stars, plaqs = set(), set()
        for e in V:
            stars.update(self._edge_stars[e])
            plaqs.update(self._edge_plaqs[e])
        return frozenset(stars), frozenset(plaqs)

    def collar(self, V: Region) -> Region:
        """V together with every edge of every star and plaquette touching V."""
        stars, plaqs = self.touching_sets(V)
        edges = set(V.edges)
        for s in stars:
            edges.update(self._star_table[s].tolist())
        for p in plaqs:
            edges.update(self._plaq_table[p].tolist())
        return Region(self, edges)

    # -- connectivity ---------------------------------------------------------
    def _components(self, V: Region, link_stars: bool, link_plaqs: bool) -> list[Region]:
        members = set(V.edges)
        seen: set[int] = set()
        comps = []
        for start in V.edges:
            if start in seen:
                continue
            comp = []
            queue = deque([start])
            seen.add(start)
            while queue:
                e = queue.popleft()
                comp.append(e)
                nbrs = set()
                if link_stars:
                    for s in self._edge_stars[e]:
                        nbrs.update(self._star_table[s].tolist())
                if link_plaqs:
                    for p in self._edge_plaqs[e]:
                        nbrs.update(self._plaq_table[p].tolist())
                for f in nbrs:
                    if f in members and f not in seen:
                        seen.add(f)
                        queue.append(f)
            comps.append(Region(self, comp))
        return comps

    def connectivity(self, V: Region) -> tuple[bool, bool, list[Region]]:
        """(star-connected, plaquette-connected, components linked by either)."""
        star_ok = len(self._components(V, True, False)) <= 1
        plaq_ok = len(self._components(V, False, True)) <= 1
        return star_ok, plaq_ok, self._components(V, True, True)

    def is_connected(self, V: Region) -> bool:
        s, p, _ = self.connectivity(V)
        return s and p

    # -- metrics --------------------------------------------------------------
    def _vertex_coords(self, V: Region) -> np.ndarray:
        pts = set()
        for e in V.edges:
            head, tail = self.endpoints(e)
            pts.add(head)
            pts.add(tail)
        return np.array(sorted(pts), dtype=np.int64).reshape(-1, 2)

    def dist(self, U: Region, W: Region) -> int:
        """Torus graph distance between the vertex sets of U and W."""
        if len(U) == 0 or len(W) == 0:
            raise GeometryError("distance to an empty region is undefined")
        a = self._vertex_coords(U)
        b = self._vertex_coords(W)
        d = np.abs(a[:, None, :] - b[None, :, :])
        d = np.minimum(d, self.N - d).sum(axis=2)
        return int(d.min())

    def _arc_extent(self, coords: np.ndarray) -> int:
        # shortest circular arc covering all coordinates = N - largest gap
        c = np.unique(coords % self.N)
        if len(c) == 1:
            return 0
        gaps = np.diff(np.concatenate([c, [c[0] + self.N]]))
        return int(self.N - gaps.max())

    def diam(self, V: Region) -> int:
        """Side length of the smallest square containing V."""
        if len(V) == 0:
            raise GeometryError("diameter of an empty region is undefined")
        pts = self._vertex_coords(V)
        return max(self._arc_extent(pts[:, 0]), self._arc_extent(pts[:, 1]))

    def inner_diam(self, V: Region) -> int:
        """Side length of the largest square whose edges all lie in V (0 if none)."""
        best = 0
        for k in range(1, self.N):
            found = False
            for a in range(self.N):
                for b in range(self.N):
                    sq = rectangle_edges(self, (a, b), (k, k))
                    if sq <= V.frozen:
                        found = True
                        break
                if found:
                    break
            if not found:
                break
            best = k
        return best


def rectangle_edges(torus: TorusGeometry, anchor: Sequence[int], lengths: Sequence[int]) -> frozenset:
    a, b = anchor
    l1, l2 = lengths
    edges = set()
    for i in range(l1):
        for j in range(l2 + 1):
            edges.add(torus.edge_index(a + i, b + j, HORIZONTAL))
    for i in range(l1 + 1):
        for j in range(l2):
            edges.add(torus.edge_index(a + i, b + j, VERTICAL))
    return frozenset(edges)


@dataclass(frozen=True)
class Rectangle:
    """Edges drawn inside the vertex box {a..a+l1} x {b..b+l2} (0 < l1, l2 < N)."""

    torus: TorusGeometry
    anchor: tuple[int, int]
    lengths: tuple[int, int]

    def __post_init__(self):
        l1, l2 = self.lengths
        N = self.torus.N
        if not (0 < l1 < N and 0 < l2 < N):
            raise GeometryError(f"rectangle lengths {self.lengths} must satisfy 0 < l < N={N}")
        object.__setattr__(self, "anchor", (int(self.anchor[0]) % N, int(self.anchor[1]) % N))
        object.__setattr__(self, "lengths", (int(l1), int(l2)))

    @classmethod
    def from_config(cls, torus: TorusGeometry, spec: dict) -> "Rectangle":
        return cls(torus, tuple(spec["anchor"]), tuple(spec["lengths"]))

    @cached_property
    def region(self) -> Region:
        return Region(self.torus, rectangle_edges(self.torus, self.anchor, self.lengths))

    @property
    def edges(self) -> tuple[int, ...]:
        return self.region.edges

    def to_config(self) -> dict:
        return {"anchor": list(self.anchor), "lengths": list(self.lengths)}


def all_rectangles(torus: TorusGeometry, max_edges: int | None = None) -> list[Rectangle]:
    """Every rectangle on the torus (distinct edge sets), optionally size-capped."""
    seen = set()
    out = []
    for l1 in range(1, torus.N):
        for l2 in range(1, torus.N):
            n = l1 * (l2 + 1) + (l1 + 1) * l2
            if max_edges is not None and n > max_edges:
                continue
            for a in range(torus.N):
                for b in range(torus.N):
                    r = Rectangle(torus, (a, b), (l1, l2))
                    if r.region.frozen in seen:
                        continue
                    seen.add(r.region.frozen)
                    out.append(r)
    return out
