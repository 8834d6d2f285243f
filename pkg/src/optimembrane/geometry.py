"""Domains, lattice grids, Dirichlet sets, candidate string pairs and load discretization."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from shapely.geometry import Polygon, box

Point = tuple[float, float]


class GeometryError(ValueError):
    pass


def _as_point(p) -> np.ndarray:
    return np.asarray(p, dtype=float).reshape(2)


@dataclass(frozen=True)
class Domain:
    """Convex polygon with counterclockwise vertices."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise GeometryError("domain needs at least three 2-D vertices")
        object.__setattr__(self, "vertices", v)
        e = np.roll(v, -1, axis=0) - v
        cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
        if self.area <= 0:
            raise GeometryError("polygon must be counterclockwise with positive area")
        if np.any(cross < -1e-12 * self.diameter**2):
            raise GeometryError("polygon is not convex")

    @classmethod
    def rectangle(cls, width: float, height: float, center: Point = (0.0, 0.0)) -> "Domain":
        cx, cy = center
        a, b = width / 2, height / 2
        return cls(np.array([[cx - a, cy - b], [cx + a, cy - b], [cx + a, cy + b], [cx - a, cy + b]]))

    @classmethod
    def square(cls, side: float = 1.0) -> "Domain":
        return cls.rectangle(side, side)

    @classmethod
    def regular_polygon(cls, n: int, radius: float = 1.0, phase: float = 0.0) -> "Domain":
        """Polygon inscribed in the circle of given radius, first vertex at angle ``phase``."""
        t = phase + 2 * np.pi * np.arange(n) / n
        return cls(np.column_stack([radius * np.cos(t), radius * np.sin(t)]))

    @property
    def area(self) -> float:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    @property
    def diameter(self) -> float:
        d = self.vertices[:, None, :] - self.vertices[None, :, :]
        return float(np.sqrt((d**2).sum(-1)).max())

    @property
    def edges(self) -> list[tuple[np.ndarray, np.ndarray]]:
        v = self.vertices
        return [(v[k], v[(k + 1) % len(v)]) for k in range(len(v))]

    def shapely(self) -> Polygon:
        return Polygon(self.vertices)

    def contains(self, pts: np.ndarray, tol: float | None = None) -> np.ndarray:
        """Closed-polygon membership (vectorized) with tolerance ``tol`` on edge distances."""
        pts = np.atleast_2d(pts)
        tol = 1e-12 * self.diameter if tol is None else tol
        inside = np.ones(len(pts), dtype=bool)
        for a, b in self.edges:
            e = b - a
            n = np.array([e[1], -e[0]]) / np.hypot(*e)  # outward normal for CCW order
            inside &= (pts - a) @ n <= tol
        return inside

    def boundary_distance(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.min([segment_distance(pts, a, b) for a, b in self.edges], axis=0)


def segment_distance(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(pts)
    e = b - a
    L2 = float(e @ e)
    t = np.clip((pts - a) @ e / L2, 0.0, 1.0) if L2 > 0 else np.zeros(len(pts))
    proj = a + t[:, None] * e
    return np.hypot(*(pts - proj).T)


@dataclass(frozen=True)
class DirichletSet:
    """Union of closed boundary segments and isolated boundary points."""

    segments: tuple = ()
    points: tuple = ()

    @classmethod
    def whole_boundary(cls, domain: Domain) -> "DirichletSet":
        return cls(segments=tuple((tuple(a), tuple(b)) for a, b in domain.edges))

    @classmethod
    def from_edges(cls, domain: Domain, indices: Sequence[int]) -> "DirichletSet":
        edges = domain.edges
        return cls(segments=tuple((tuple(edges[k][0]), tuple(edges[k][1])) for k in indices))

    @classmethod
    def from_points(cls, points: Sequence[Point]) -> "DirichletSet":
        return cls(points=tuple(tuple(map(float, p)) for p in points))

    @property
    def is_empty(self) -> bool:
        return not self.segments and not self.points

    def validate(self, domain: Domain) -> None:
        tol = 1e-12 * domain.diameter
        for p, q in self.segments:
            p, q = _as_point(p), _as_point(q)
            if not any(segment_distance(np.vstack([p, q]), a, b).max() <= tol for a, b in domain.edges):
                raise GeometryError(f"Dirichlet segment {p.tolist()}-{q.tolist()} is not on the boundary")
        for p in self.points:
            if domain.boundary_distance(_as_point(p))[0] > tol:
                raise GeometryError(f"Dirichlet point {list(p)} is not on the boundary")

    def distance(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        d = np.full(len(pts), np.inf)
        for p, q in self.segments:
            d = np.minimum(d, segment_distance(pts, _as_point(p), _as_point(q)))
        for p in self.points:
            d = np.minimum(d, np.hypot(*(pts - _as_point(p)).T))
        return d


@dataclass(frozen=True)
class Grid:
    domain: Domain
    h: float
    nodes: np.ndarray
    boundary_mask: np.ndarray
    dirichlet_mask: np.ndarray
    sigma0: DirichletSet = field(default_factory=DirichletSet)

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def free(self) -> np.ndarray:
        return ~self.dirichlet_mask

    @property
    def interior(self) -> np.ndarray:
        return ~self.boundary_mask

    def index_of(self, p: Point, tol: float | None = None) -> int:
        tol = 1e-9 * self.domain.diameter if tol is None else tol
        d = np.hypot(*(self.nodes - _as_point(p)).T)
        k = int(np.argmin(d))
        if d[k] > tol:
            raise GeometryError(f"no grid node at {p}")
        return k


def build_grid(domain: Domain, h: float, sigma0: DirichletSet | None = None,
               boundary_nodes: str = "lattice") -> Grid:
    """Lattice nodes ``k*h`` in the closed polygon, ordered by (x2, x1).

    ``boundary_nodes="augment"`` also inserts the polygon vertices and the
    intersections of the lattice lines with the boundary, so that polygons
    whose edges are not lattice-aligned still carry a boundary row of nodes.
    """
    if not h > 0:
        raise GeometryError("mesh size h must be positive")
    sigma0 = DirichletSet() if sigma0 is None else sigma0
    sigma0.validate(domain)
    R = domain.diameter
    tol = 1e-12 * R
    lo, hi = domain.vertices.min(0), domain.vertices.max(0)
    k0 = np.floor(lo / h - 1e-9).astype(int)
    k1 = np.ceil(hi / h + 1e-9).astype(int)
    kx, ky = np.meshgrid(np.arange(k0[0], k1[0] + 1), np.arange(k0[1], k1[1] + 1))
    pts = np.column_stack([kx.ravel() * h, ky.ravel() * h])
    pts = pts[domain.contains(pts, tol)]
    if boundary_nodes == "augment":
        extra = [domain.vertices]
        for a, b in domain.edges:
            extra.append(_lattice_line_hits(a, b, h))
        extra = np.vstack(extra)
        keep = []
        allpts = pts
        for p in extra:
            if len(allpts) == 0 or np.hypot(*(allpts - p).T).min() > 1e-9 * R:
                keep.append(p)
                allpts = np.vstack([allpts, p])
        pts = allpts
    elif boundary_nodes != "lattice":
        raise GeometryError(f"unknown boundary_nodes mode {boundary_nodes!r}")
    if len(pts) == 0:
        raise GeometryError("empty grid")
    order = np.lexsort((pts[:, 0], pts[:, 1]))
    pts = pts[order]
    bmask = domain.boundary_distance(pts) <= tol
    dmask = bmask & (sigma0.distance(pts) <= tol) if not sigma0.is_empty else np.zeros(len(pts), bool)
    for arr in (pts, bmask, dmask):
        arr.setflags(write=False)
    return Grid(domain, float(h), pts, bmask, dmask, sigma0)


def _lattice_line_hits(a: np.ndarray, b: np.ndarray, h: float) -> np.ndarray:
    hits = []
    for axis in (0, 1):
        if abs(b[axis] - a[axis]) < 1e-15:
            continue
        lo, hi = sorted((a[axis], b[axis]))
        for k in range(int(math.ceil(lo / h - 1e-9)), int(math.floor(hi / h + 1e-9)) + 1):
            t = (k * h - a[axis]) / (b[axis] - a[axis])
            p = a + t * (b - a)
            p[axis] = k * h
            hits.append(p)
    return np.array(hits).reshape(-1, 2)


@dataclass(frozen=True)
class PairSet:
    """Unordered node pairs (i < j) with lengths and unit directions from i to j."""

    i: np.ndarray
    j: np.ndarray
    lengths: np.ndarray
    directions: np.ndarray

    def __len__(self) -> int:
        return len(self.i)

    @property
    def pairs(self) -> np.ndarray:
        return np.column_stack([self.i, self.j])

    @classmethod
    def from_indices(cls, grid: Grid, i, j) -> "PairSet":
        i, j = np.asarray(i, dtype=np.int64), np.asarray(j, dtype=np.int64)
        lo, hi = np.minimum(i, j), np.maximum(i, j)
        if np.any(lo == hi):
            raise GeometryError("pair with identical endpoints")
        key = np.unique(lo * grid.n + hi)
        lo, hi = key // grid.n, key % grid.n
        d = grid.nodes[hi] - grid.nodes[lo]
        L = np.hypot(d[:, 0], d[:, 1])
        return cls(lo, hi, L, d / L[:, None])

    def union(self, other: "PairSet", grid: Grid) -> "PairSet":
        return PairSet.from_indices(grid, np.concatenate([self.i, other.i]), np.concatenate([self.j, other.j]))

    def subset(self, mask) -> "PairSet":
        return PairSet(self.i[mask], self.j[mask], self.lengths[mask], self.directions[mask])

    def index_map(self, n: int) -> dict[int, int]:
        return {int(k): e for e, k in enumerate(self.i * n + self.j)}


PairStrategy = Union[str, tuple]


def parse_strategy(strategy: PairStrategy) -> tuple[str, float | None]:
    """Accepts ``"full"``, ``("radius", r)``, ``("knn", k)`` or the CLI forms ``radius=R``/``knn=K``."""
    if isinstance(strategy, str):
        if strategy == "full":
            return "full", None
        name, _, val = strategy.partition("=")
        name = {"k_nearest": "knn"}.get(name, name)
        if name in ("radius", "knn") and val:
            return name, float(val)
        raise GeometryError(f"bad pair strategy {strategy!r}")
    name, val = strategy
    name = {"k_nearest": "knn"}.get(name, name)
    if name not in ("radius", "knn"):
        raise GeometryError(f"bad pair strategy {strategy!r}")
    return name, float(val)


def build_pairs(grid: Grid, strategy: PairStrategy = "full") -> PairSet:
    name, val = parse_strategy(strategy)
    n = grid.n
    if n < 2:
        raise GeometryError("need at least two nodes")
    if name == "full":
        i, j = np.triu_indices(n, k=1)
    elif name == "radius":
        if val < grid.h * (1 - 1e-12):
            raise GeometryError("pair radius smaller than the mesh size")
        ij = cKDTree(grid.nodes).query_pairs(val * (1 + 1e-12), output_type="ndarray")
        i, j = ij[:, 0], ij[:, 1]
    else:
        k = int(val)
        _, nb = cKDTree(grid.nodes).query(grid.nodes, k=min(k + 1, n))
        i = np.repeat(np.arange(n), nb.shape[1] - 1)
        j = nb[:, 1:].ravel()
    if len(i) == 0:
        raise GeometryError("empty pair set")
    pairs = PairSet.from_indices(grid, i, j)
    ensure_connected(grid, pairs)
    return pairs


def ensure_connected(grid: Grid, pairs: PairSet) -> None:
    g = coo_matrix((np.ones(len(pairs)), (pairs.i, pairs.j)), shape=(grid.n, grid.n))
    ncomp, _ = connected_components(g, directed=False)
    if ncomp != 1:
        raise GeometryError(f"pair graph is disconnected ({ncomp} components)")


# ---------------------------------------------------------------- loads

Density = Union[float, Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class LoadSpec:
    """Point masses, area densities over the domain, and line densities on segments."""

    point_masses: tuple = ()  # ((x, y), mass)
    densities: tuple = ()  # constant or callable of an (n, 2) array
    line_densities: tuple = ()  # ((x, y), (x, y), density)

    @classmethod
    def point(cls, p: Point, mass: float = 1.0) -> "LoadSpec":
        return cls(point_masses=((tuple(map(float, p)), float(mass)),))

    @classmethod
    def points(cls, pts: Sequence[Point], mass: float = 1.0) -> "LoadSpec":
        return cls(point_masses=tuple((tuple(map(float, p)), float(mass)) for p in pts))

    @classmethod
    def uniform(cls, density: float = 1.0) -> "LoadSpec":
        return cls(densities=(float(density),))

    def analytic_mass(self, domain: Domain) -> float | None:
        """Exact total mass when every density is constant, else None."""
        if any(callable(d) for d in self.densities) or any(callable(s[2]) for s in self.line_densities):
            return None
        m = sum(m for _, m in self.point_masses)
        m += sum(d * domain.area for d in self.densities)
        m += sum(d * math.dist(p, q) for p, q, d in self.line_densities)
        return float(m)


@dataclass(frozen=True)
class DiscreteLoad:
    """Atomic load on grid nodes; ``absorbed`` is the mass that fell on Dirichlet nodes."""

    weights: np.ndarray
    absorbed: float = 0.0
    origin: str = ""

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights)

    @property
    def is_nonnegative(self) -> bool:
        return bool(np.all(self.weights >= 0))

    def positive(self) -> "DiscreteLoad":
        return DiscreteLoad(np.maximum(self.weights, 0), origin=self.origin + "+")

    def negative(self) -> "DiscreteLoad":
        return DiscreteLoad(np.maximum(-self.weights, 0), origin=self.origin + "-")


def _eval_density(d: Density, pts: np.ndarray) -> np.ndarray:
    if callable(d):
        return np.asarray(d(pts), dtype=float).reshape(len(pts))
    return np.full(len(pts), float(d))


def nearest_node(grid: Grid, pts: np.ndarray) -> np.ndarray:
    """Nearest grid node for each point, ties broken by the lowest node index."""
    pts = np.atleast_2d(pts)
    out = np.empty(len(pts), dtype=np.int64)
    scale = grid.domain.diameter
    for k, p in enumerate(pts):
        d = np.hypot(*(grid.nodes - p).T)
        out[k] = int(np.flatnonzero(d <= d.min() + 1e-12 * scale)[0])
    return out


def _cell_owner(grid: Grid, centers: np.ndarray) -> np.ndarray:
    tree = cKDTree(grid.nodes)
    d, idx = tree.query(centers)
    exact = d <= 1e-9 * grid.h
    out = idx.copy()
    if not exact.all():
        out[~exact] = nearest_node(grid, centers[~exact])
    return out


def discretize_load(grid: Grid, load: LoadSpec, strict: bool = True) -> DiscreteLoad:
    """Lump ``load`` onto grid nodes.

    Point masses snap to the nearest node. Densities are integrated over the
    lattice cells ``x + hQ`` clipped to the domain with one midpoint sample per
    clipped cell; line densities over the pieces of each segment inside a cell.
    Cells whose center is not a grid node (possible on non-lattice polygons)
    hand their mass to the nearest node. Mass landing on Dirichlet nodes is
    reported as ``absorbed`` since the support carries it directly; a point
    mass snapping there is an error when ``strict``.
    """
    n, h = grid.n, grid.h
    w = np.zeros(n)
    for p, m in load.point_masses:
        k = int(nearest_node(grid, _as_point(p))[0])
        if strict and grid.dirichlet_mask[k] and m != 0:
            raise GeometryError("load on Dirichlet node")
        w[k] += m

    if load.densities:
        poly = grid.domain.shapely()
        lo, hi = grid.domain.vertices.min(0), grid.domain.vertices.max(0)
        k0 = np.floor(lo / h + 0.5 - 1e-9).astype(int) - 1
        k1 = np.ceil(hi / h - 0.5 + 1e-9).astype(int) + 1
        centers, areas, mids = [], [], []
        for a in range(k0[0], k1[0] + 1):
            for b in range(k0[1], k1[1] + 1):
                c = np.array([a * h, b * h])
                piece = poly.intersection(box(c[0] - h / 2, c[1] - h / 2, c[0] + h / 2, c[1] + h / 2))
                if piece.area > 0:
                    centers.append(c)
                    areas.append(piece.area)
                    mids.append(piece.centroid.coords[0])
        centers, areas, mids = np.array(centers), np.array(areas), np.array(mids)
        owner = _cell_owner(grid, centers)
        for d in load.densities:
            np.add.at(w, owner, _eval_density(d, mids) * areas)

    for p, q, d in load.line_densities:
        p, q = _as_point(p), _as_point(q)
        ts = {0.0, 1.0}
        for axis in (0, 1):
            if abs(q[axis] - p[axis]) > 0:
                lo, hi = sorted((p[axis], q[axis]))
                for k in range(int(math.floor(lo / h - 0.5)), int(math.ceil(hi / h + 0.5)) + 1):
                    t = ((k + 0.5) * h - p[axis]) / (q[axis] - p[axis])
                    if 0 < t < 1:
                        ts.add(t)
        ts = np.array(sorted(ts))
        L = float(np.hypot(*(q - p)))
        mids = p + 0.5 * (ts[1:] + ts[:-1])[:, None] * (q - p)
        lens = np.diff(ts) * L
        owner = _cell_owner(grid, np.round(mids / h) * h)
        np.add.at(w, owner, _eval_density(d, mids) * lens)

    absorbed = float(w[grid.dirichlet_mask].sum())
    w[grid.dirichlet_mask] = 0.0
    w.setflags(write=False)
    return DiscreteLoad(w, absorbed=absorbed, origin=_describe(load))


def _describe(load: LoadSpec) -> str:
    parts = []
    if load.point_masses:
        parts.append(f"{len(load.point_masses)} point mass(es)")
    if load.densities:
        parts.append(f"{len(load.densities)} density(ies)")
    if load.line_densities:
        parts.append(f"{len(load.line_densities)} line density(ies)")
    return ", ".join(parts) or "zero"
