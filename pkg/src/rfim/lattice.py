"""Finite boxes in the hypercubic lattice: sites, boundaries, edges, orderings.

Sites are integer coordinate tuples.  An edge is either internal (two sites)
or a ghost edge (one lattice site, one ghost vertex).  Three edge families
matter:

* internal: both endpoints inside the box;
* closure: at least one endpoint inside the box (internal plus the edges
  crossing to the exterior vertex boundary);
* ghost: box site to a ghost vertex.

Reveal orderings sort edges by the squared Euclidean distance from the edge
(its lattice endpoints) to the complement of the box, nearest first, so
exploration proceeds from the boundary inward.  Ties break lexicographically
on endpoint coordinates, internal edges before crossing edges, and the plus
ghost before the minus ghost.  Vertices are ordered the same way.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

Site = tuple  # tuple[int, ...]


class Ghost(Enum):
    """Ghost vertices: SINGLE for constant-sign field wiring, PLUS/MINUS
    for sign-split wiring."""

    SINGLE = "g"
    PLUS = "g+"
    MINUS = "g-"

    @property
    def sign(self) -> int:
        return {"g": +1, "g+": +1, "g-": -1}[self.value]

    def __lt__(self, other):
        order = {"g": 0, "g+": 1, "g-": 2}
        return order[self.value] < order[other.value]


_GHOST_RANK = {Ghost.SINGLE: 0, Ghost.PLUS: 1, Ghost.MINUS: 2}


@dataclass(frozen=True)
class Edge:
    """Undirected edge, canonicalized: internal edges store endpoints in
    lexicographic order, ghost edges store (site, ghost)."""

    u: object
    v: object

    @staticmethod
    def internal(a: Site, b: Site) -> "Edge":
        if tuple(a) <= tuple(b):
            return Edge(tuple(a), tuple(b))
        return Edge(tuple(b), tuple(a))

    @staticmethod
    def ghost(site: Site, g: Ghost) -> "Edge":
        return Edge(tuple(site), g)

    @property
    def is_ghost(self) -> bool:
        return isinstance(self.v, Ghost)

    @property
    def lattice_sites(self) -> tuple:
        if self.is_ghost:
            return (self.u,)
        return (self.u, self.v)

    def other(self, x):
        return self.v if x == self.u else self.u

    def __repr__(self):
        v = self.v.value if self.is_ghost else self.v
        return f"Edge({self.u}, {v})"


def _neighbors(x: Site):
    d = len(x)
    for j in range(d):
        for s in (-1, 1):
            y = list(x)
            y[j] += s
            yield tuple(y)


@dataclass(frozen=True)
class Box:
    """A finite set of lattice sites (axis-aligned cube or general set).

    Sites are stored in raster (lexicographic) order; that order is the
    canonical index used by spin configurations and kernels.
    """

    dim: int
    site_tuple: tuple
    cube_radius: int | None = None
    _index: dict = field(default=None, compare=False, repr=False)
    _bounds: tuple | None = field(default=None, compare=False, repr=False)

    @staticmethod
    def cube(radius: int, dim: int) -> "Box":
        if radius < 0 or dim < 1:
            raise ValueError("cube needs radius >= 0 and dim >= 1")
        rng = range(-radius, radius + 1)
        sites = tuple(itertools.product(rng, repeat=dim))
        return Box(dim, sites, cube_radius=radius)

    @staticmethod
    def rect(lo, hi) -> "Box":
        lo, hi = tuple(lo), tuple(hi)
        if len(lo) != len(hi) or any(a > b for a, b in zip(lo, hi)):
            raise ValueError("rect needs lo <= hi componentwise")
        sites = tuple(itertools.product(*(range(a, b + 1) for a, b in zip(lo, hi))))
        return Box(len(lo), sites)

    @staticmethod
    def from_sites(sites) -> "Box":
        sites = sorted(tuple(s) for s in sites)
        if not sites:
            raise ValueError("empty box")
        d = len(sites[0])
        if any(len(s) != d for s in sites):
            raise ValueError("mixed dimensions")
        return Box(d, tuple(sites))

    def __post_init__(self):
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.site_tuple)})
        # detect axis-aligned rectangles (distinct sites filling the
        # bounding box) to unlock O(d) distance queries
        lo = tuple(min(s[j] for s in self.site_tuple) for j in range(self.dim))
        hi = tuple(max(s[j] for s in self.site_tuple) for j in range(self.dim))
        vol = 1
        for a, b in zip(lo, hi):
            vol *= b - a + 1
        if vol == len(self.site_tuple):
            object.__setattr__(self, "_bounds", (lo, hi))

    def sites(self) -> list:
        return list(self.site_tuple)

    def index(self, x: Site) -> int:
        return self._index[tuple(x)]

    def __contains__(self, x) -> bool:
        return tuple(x) in self._index

    def __len__(self) -> int:
        return len(self.site_tuple)

    def neighbors(self, x: Site):
        return list(_neighbors(tuple(x)))


def box(radius: int, dim: int) -> Box:
    """Centered cube of side 2*radius + 1."""
    return Box.cube(radius, dim)


def exterior_boundary(b: Box) -> list:
    """Sites outside the box adjacent to it, in raster order."""
    out = set()
    for x in b.site_tuple:
        for y in _neighbors(x):
            if y not in b:
                out.add(y)
    return sorted(out)


def interior_boundary(b: Box) -> list:
    """Sites inside the box with a neighbor outside, in raster order."""
    return [x for x in b.site_tuple if any(y not in b for y in _neighbors(x))]


def covered_exterior(b: Box) -> list:
    """Exterior-boundary sites covered by an edge lying wholly outside the
    box; these seed the exploration frontier.  For a cube this is the whole
    exterior boundary; a one-site hole in a general box is excluded because
    all its neighbors are box sites."""
    return [z for z in exterior_boundary(b) if any(w not in b for w in _neighbors(z))]


@dataclass(frozen=True)
class EdgeSets:
    """Edge families of a box: internal, crossing, their union (closure),
    and ghost edges (possibly empty)."""

    internal: tuple
    crossing: tuple
    ghost: tuple

    @property
    def closure(self) -> tuple:
        return self.internal + self.crossing

    @property
    def all(self) -> tuple:
        return self.internal + self.crossing + self.ghost


def edge_sets(b: Box, ghost_mode: str = "none", h: dict | None = None) -> EdgeSets:
    """Build the edge families for a box.

    ghost_mode:
      "none"   -- lattice edges only;
      "single" -- one SINGLE-ghost edge per box site (constant-field wiring);
      "two"    -- a PLUS edge per site with h > 0 and a MINUS edge per site
                  with h < 0 (h required; sites with h == 0 get no ghost edge).
    """
    internal = []
    crossing = []
    for x in b.site_tuple:
        for y in _neighbors(x):
            if y in b:
                if x < y:
                    internal.append(Edge.internal(x, y))
            else:
                crossing.append(Edge.internal(x, y))
    internal.sort(key=lambda e: (e.u, e.v))
    crossing.sort(key=lambda e: (e.u, e.v))

    ghost = []
    if ghost_mode == "single":
        ghost = [Edge.ghost(x, Ghost.SINGLE) for x in b.site_tuple]
    elif ghost_mode == "two":
        if h is None:
            raise ValueError("ghost_mode='two' needs the field values h")
        for x in b.site_tuple:
            hx = h[x]
            if hx > 0:
                ghost.append(Edge.ghost(x, Ghost.PLUS))
            elif hx < 0:
                ghost.append(Edge.ghost(x, Ghost.MINUS))
    elif ghost_mode != "none":
        raise ValueError(f"unknown ghost_mode {ghost_mode!r}")
    return EdgeSets(tuple(internal), tuple(crossing), tuple(ghost))


def sqdist_to_complement(b: Box, x: Site) -> int:
    """Squared Euclidean distance from x to the nearest site not in the box."""
    x = tuple(x)
    if x not in b:
        return 0
    if b._bounds is not None:
        # nearest exterior point steps straight through the closest face
        lo, hi = b._bounds
        step = 1 + min(min(c - a, z - c) for c, a, z in zip(x, lo, hi))
        return step * step
    # general boxes: the nearest complement point lies within the bounding
    # box inflated by one (anything farther projects onto that shell)
    lo = [min(s[j] for s in b.site_tuple) - 1 for j in range(b.dim)]
    hi = [max(s[j] for s in b.site_tuple) + 1 for j in range(b.dim)]
    best = None
    for y in itertools.product(*(range(lo[j], hi[j] + 1) for j in range(b.dim))):
        if y in b:
            continue
        d2 = sum((a - c) ** 2 for a, c in zip(x, y))
        if best is None or d2 < best:
            best = d2
    return best


def _edge_sqdist(b: Box, e: Edge) -> int:
    return min(sqdist_to_complement(b, s) for s in e.lattice_sites)


def _edge_sort_key(b: Box, e: Edge):
    if e.is_ghost:
        kind = 2 + _GHOST_RANK[e.v]
        tail = (e.u, e.u)
    else:
        kind = 0 if (e.u in b and e.v in b) else 1
        tail = (e.u, e.v)
    return (_edge_sqdist(b, e), kind, tail)


def edge_order(b: Box, edges) -> list:
    """Total reveal order: nearest to the complement first; at equal
    distance internal edges precede crossing and ghost edges, plus ghost
    precedes minus; remaining ties break lexicographically."""
    if isinstance(edges, EdgeSets):
        edges = edges.all
    return sorted(edges, key=lambda e: _edge_sort_key(b, e))


def vertex_order(b: Box) -> list:
    """Total site order for exploration: nearest to the complement first,
    lexicographic among ties."""
    return sorted(b.site_tuple, key=lambda x: (sqdist_to_complement(b, x), x))


def coords_array(sites) -> np.ndarray:
    return np.array([tuple(s) for s in sites], dtype=np.int64)
